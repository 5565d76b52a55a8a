//! Trains every detector on the synthetic benchmark and prints the cutoff
//! table plus monitor statistics.
//!
//! cargo run --release -p policystop-core --example benchmark -- [seed]

use std::time::Instant;

use policystop_core::eval::{partial_length_eval, render_report, ReportFormat, DEFAULT_FRACTIONS};
use policystop_core::pipeline::{train_detector, TrainConfig};
use policystop_core::runtime::{calibrate_thresholds, default_periods, replay_stop_step, MonitorOptions, Pooling};
use policystop_core::synth::{anomaly_specs, Benchmark, BenchmarkConfig};
use policystop_core::{Detector, DetectorKind, Label};

fn main() -> policystop_core::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let seed: u64 = args.first().and_then(|s| s.parse().ok()).unwrap_or(0);
    let kinds: Vec<DetectorKind> = if args.len() > 1 {
        args[1..].iter().map(|a| a.parse()).collect::<policystop_core::Result<_>>()?
    } else {
        DetectorKind::ALL.to_vec()
    };
    let bench = Benchmark::generate(&BenchmarkConfig { seed, ..BenchmarkConfig::default() })?;
    let lens: Vec<usize> = bench.test.filter_label(Label::Success).map(|e| e.len()).collect();
    println!(
        "normal test lengths: min {} max {} mean {:.1}",
        lens.iter().min().unwrap(),
        lens.iter().max().unwrap(),
        lens.iter().sum::<usize>() as f64 / lens.len() as f64
    );
    let cfg = TrainConfig::for_horizon(bench.train.k_max()).with_seed(seed);
    let mut models = Vec::new();
    for &kind in &kinds {
        let t = Instant::now();
        let m = train_detector(kind, &bench.train, &cfg)?;
        println!("{kind}: trained in {:.1}s", t.elapsed().as_secs_f64());
        models.push(m);
    }
    let dets: Vec<&dyn Detector> = models.iter().map(|m| m as &dyn Detector).collect();
    let t = Instant::now();
    let report = partial_length_eval(&dets, &bench.test, &DEFAULT_FRACTIONS, seed)?;
    println!("eval in {:.1}s", t.elapsed().as_secs_f64());
    print!("{}", render_report(&report, ReportFormat::Table)?);

    let specs = anomaly_specs(&bench.test);
    for m in &models {
        let scores = policystop_core::eval::score_at_cutoffs(m, &bench.test, &DEFAULT_FRACTIONS)?;
        let mut line = format!("{:<12}", m.kind().as_str());
        for kind in policystop_core::synth::AnomalyKind::ALL {
            line.push_str(&format!(" {kind:?}:"));
            for c in 0..3 {
                let mut set = policystop_core::eval::ScoredSet::default();
                for (ep, row) in bench.test.episodes.iter().zip(&scores.scores) {
                    match specs.get(&ep.id) {
                        Some(s) if s.kind == kind => set.positives.push(row[c]),
                        None => set.negatives.push(row[c]),
                        _ => {}
                    }
                }
                line.push_str(&format!(" {:.2}", policystop_core::eval::auroc(&set)?));
            }
        }
        println!("{line}");
    }
    let k_max = bench.train.k_max();
    let layouts = [
        (default_periods(k_max), Pooling::Prefixes, false),
        (default_periods(k_max), Pooling::EpisodeMax, true),
        (vec![k_max / 2, k_max], Pooling::EpisodeMax, true),
        (vec![k_max], Pooling::EpisodeMax, true),
    ];
    for m in &models {
        for (periods, pooling, running_max) in layouts.iter().cloned() {
            let opts = MonitorOptions { stride: 1, running_max };
            let sch = calibrate_thresholds(m, &bench.val, &periods, 0.05, pooling, opts)?;
            let (mut stopped, mut anomalous, mut false_stops, mut normals) = (0, 0, 0, 0);
            let mut latencies = Vec::new();
            for ep in &bench.test.episodes {
                let stop = replay_stop_step(m, &sch, ep)?;
                if ep.label == Label::Failure {
                    anomalous += 1;
                    if let Some(s) = stop {
                        stopped += 1;
                        latencies.push(s as i64 - specs[&ep.id].onset as i64);
                    }
                } else {
                    normals += 1;
                    false_stops += usize::from(stop.is_some());
                }
            }
            let val_stops = bench.val.episodes.iter().filter(|ep| replay_stop_step(m, &sch, ep).ok().flatten().is_some()).count();
            println!("   in-sample val false stops {val_stops}/{} thresholds {:?}", bench.val.len(), sch.thresholds.iter().map(|t| (t * 100.0).round() / 100.0).collect::<Vec<_>>());
            latencies.sort();
            let median = latencies.get(latencies.len() / 2).copied().unwrap_or(-1);
            println!(
                "{:<12} {periods:?} {:?} max={running_max}: stopped {}/{} median latency {} false stops {}/{}",
                m.kind().as_str(),
                pooling,
                stopped,
                anomalous,
                median,
                false_stops,
                normals
            );
        }
    }
    Ok(())
}
