//! `policystop`: generate data, train detectors, evaluate them on truncated
//! prefixes, calibrate stop thresholds and run the streaming monitor.

mod config;

use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use policystop_core::eval::{parse_report_csv, partial_length_eval, render_report, EvalReport, ReportFormat};
use policystop_core::pipeline::train_detector;
use policystop_core::runtime::{calibrate_thresholds, default_periods, run_stream, trace_csv, trace_svg, Pooling, ThresholdSchedule};
use policystop_core::store::{load_dataset, save_dataset, Dataset};
use policystop_core::synth::Benchmark;
use policystop_core::{Checkpoint, Detector, DetectorKind};

use config::RunConfig;

/// Exit status of `monitor` when at least one episode was stopped.
const EXIT_STOPPED: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "policystop", version, about = "Early failure detection and stop decisions for policy rollouts")]
struct Cli {
    /// TOML run configuration; sections: gen, train, eval, calibrate.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Override one config value, e.g. `--set train.flow.epochs=20`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Default directory for datasets; relative data paths not found in the
    /// working directory are looked up here.
    #[arg(long, global = true, env = "POLICYSTOP_DATA_DIR", default_value = "data")]
    data_dir: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic benchmark as train.jsonl, val.jsonl and test.jsonl.
    GenData {
        #[arg(long)]
        seed: u64,
        /// Output directory (defaults to the data directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one detector and write a checkpoint.
    Train {
        /// Training dataset (normal episodes).
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_parser = parse_kind)]
        detector: DetectorKind,
        #[arg(long)]
        seed: u64,
        /// Checkpoint path; the run echo goes to `<out>.run.json`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score checkpoints on truncated test prefixes and print the report.
    Eval {
        /// Labeled test dataset.
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint to evaluate. Repeatable.
        #[arg(long = "model", required = true)]
        models: Vec<PathBuf>,
        /// Cutoff fractions, comma separated (overrides `eval.fractions`).
        #[arg(long, value_delimiter = ',')]
        fractions: Option<Vec<f64>>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
        /// Write the report as JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the report as CSV here.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Calibrate per-period stop thresholds on normal validation episodes.
    Calibrate {
        #[arg(long)]
        model: PathBuf,
        /// Validation dataset; not needed with `--thresholds`.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        target_fpr: Option<f64>,
        /// Period ends, comma separated.
        #[arg(long, value_delimiter = ',')]
        periods: Option<Vec<usize>>,
        #[arg(long, value_enum)]
        pooling: Option<PoolingArg>,
        /// Apply a running-max envelope to scores.
        #[arg(long)]
        running_max: bool,
        /// Score every n-th step.
        #[arg(long)]
        stride: Option<usize>,
        /// Hand-set thresholds, one per period; skips calibration.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        thresholds: Option<Vec<f64>>,
    },
    /// Run the stop monitor over a stream of JSON step records.
    ///
    /// Exits 0 when every episode ran to its end, 3 when at least one was stopped.
    Monitor {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        schedule: PathBuf,
        /// Step records, one JSON object per line (default: stdin).
        #[arg(long)]
        input: Option<PathBuf>,
        /// Decision records (default: stdout).
        #[arg(long)]
        output: Option<PathBuf>,
        /// Write `<episode>.csv` and `<episode>.svg` score traces here.
        #[arg(long)]
        trace_dir: Option<PathBuf>,
    },
    /// Re-render saved reports (JSON or CSV).
    Report {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Table,
    Csv,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Table => ReportFormat::Table,
            Format::Csv => ReportFormat::Csv,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PoolingArg {
    Prefixes,
    EpisodeMax,
}

impl From<PoolingArg> for Pooling {
    fn from(p: PoolingArg) -> Self {
        match p {
            PoolingArg::Prefixes => Pooling::Prefixes,
            PoolingArg::EpisodeMax => Pooling::EpisodeMax,
        }
    }
}

fn parse_kind(s: &str) -> Result<DetectorKind, String> {
    s.parse().map_err(|e: policystop_core::Error| e.to_string())
}

/// Marks errors raised while assembling the run configuration.
#[derive(Debug)]
struct ConfigError;

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("invalid configuration")
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            let code = if err.downcast_ref::<ConfigError>().is_some() {
                "config"
            } else {
                err.chain()
                    .find_map(|e| e.downcast_ref::<policystop_core::Error>())
                    .map_or("error", policystop_core::Error::code)
            };
            let message = format!("{err:#}");
            eprintln!("{}", json!({ "error": code, "message": message }));
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let cfg = RunConfig::load(cli.config.as_deref(), &cli.overrides).context(ConfigError)?;
    let data_dir = cli.data_dir;
    match cli.command {
        Command::GenData { seed, out } => gen_data(&cfg, seed, out.unwrap_or(data_dir)),
        Command::Train {
            data,
            detector,
            seed,
            out,
        } => train(&cfg, &resolve(&data_dir, &data), detector, seed, &out),
        Command::Eval {
            data,
            models,
            fractions,
            seed,
            format,
            out,
            csv,
        } => {
            let fractions = fractions.unwrap_or_else(|| cfg.eval.fractions.clone());
            eval(&resolve(&data_dir, &data), &models, &fractions, seed, format, out.as_deref(), csv.as_deref())
        }
        Command::Calibrate {
            model,
            data,
            out,
            target_fpr,
            periods,
            pooling,
            running_max,
            stride,
            thresholds,
        } => {
            let mut c = cfg.calibrate.clone();
            if let Some(v) = target_fpr {
                c.target_fpr = v;
            }
            if let Some(v) = periods {
                c.periods = v;
            }
            if let Some(v) = pooling {
                c.pooling = v.into();
            }
            if running_max {
                c.options.running_max = true;
            }
            if let Some(v) = stride {
                c.options.stride = v;
            }
            if let Some(v) = thresholds {
                c.thresholds = v;
            }
            let data = data.map(|d| resolve(&data_dir, &d));
            calibrate(&c, &model, data.as_deref(), &out)
        }
        Command::Monitor {
            model,
            schedule,
            input,
            output,
            trace_dir,
        } => monitor(&model, &schedule, input.as_deref(), output.as_deref(), trace_dir.as_deref()),
        Command::Report { inputs, format } => report(&inputs, format),
    }
}

/// Relative paths missing from the working directory fall back to the data directory.
fn resolve(data_dir: &Path, path: &Path) -> PathBuf {
    if path.is_relative() && !path.exists() {
        let alt = data_dir.join(path);
        if alt.exists() {
            return alt;
        }
    }
    path.to_path_buf()
}

fn echo_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".run.json");
    PathBuf::from(name)
}

fn write_echo(path: &Path, echo: serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(&echo)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn load_data(path: &Path) -> Result<Dataset> {
    load_dataset(path).with_context(|| format!("loading dataset {}", path.display()))
}

fn gen_data(cfg: &RunConfig, seed: u64, out: PathBuf) -> Result<ExitCode> {
    let mut gen = cfg.gen.clone();
    gen.seed = seed;
    let bench = Benchmark::generate(&gen)?;
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let mut files = serde_json::Map::new();
    for (name, set) in [("train", &bench.train), ("val", &bench.val), ("test", &bench.test)] {
        let path = out.join(format!("{name}.jsonl"));
        save_dataset(&path, set)?;
        files.insert(
            name.into(),
            json!({ "path": path, "episodes": set.len(), "fingerprint": set.fingerprint() }),
        );
        log::info!("wrote {} episodes to {}", set.len(), path.display());
    }
    write_echo(
        &out.join("gen-data.run.json"),
        json!({ "command": "gen-data", "seed": seed, "config": gen, "outputs": files }),
    )?;
    Ok(ExitCode::SUCCESS)
}

fn train(cfg: &RunConfig, data: &Path, kind: DetectorKind, seed: u64, out: &Path) -> Result<ExitCode> {
    let dataset = load_data(data)?;
    let train_cfg = cfg.train.clone().with_seed(seed);
    log::info!("training {kind} on {} episodes", dataset.len());
    let model = train_detector(kind, &dataset, &train_cfg)?;
    Checkpoint::new(model).save(out)?;
    write_echo(
        &echo_path(out),
        json!({
            "command": "train",
            "detector": kind,
            "seed": seed,
            "data": data,
            "data_fingerprint": dataset.fingerprint(),
            "config": train_cfg.echo(kind),
            "output": out,
        }),
    )?;
    Ok(ExitCode::SUCCESS)
}

fn eval(data: &Path, models: &[PathBuf], fractions: &[f64], seed: u64, format: Format, out: Option<&Path>, csv: Option<&Path>) -> Result<ExitCode> {
    let test = load_data(data)?;
    let checkpoints = models.iter().map(|m| load_checkpoint(m)).collect::<Result<Vec<_>>>()?;
    let detectors: Vec<&dyn Detector> = checkpoints.iter().map(|c| &c.model as &dyn Detector).collect();
    let report = partial_length_eval(&detectors, &test, fractions, seed)?;
    print!("{}", render_report(&report, format.into())?);
    if let Some(path) = csv {
        fs::write(path, render_report(&report, ReportFormat::Csv)?).with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(path) = out {
        fs::write(path, report.to_json()?).with_context(|| format!("writing {}", path.display()))?;
        write_echo(
            &echo_path(path),
            json!({
                "command": "eval",
                "seed": seed,
                "data": data,
                "data_fingerprint": test.fingerprint(),
                "models": models,
                "fractions": fractions,
                "output": path,
            }),
        )?;
    }
    Ok(ExitCode::SUCCESS)
}

fn calibrate(c: &config::CalibrateConfig, model: &Path, data: Option<&Path>, out: &Path) -> Result<ExitCode> {
    let ckpt = load_checkpoint(model)?;
    let dataset = data.map(load_data).transpose()?;
    let periods = if !c.periods.is_empty() {
        c.periods.clone()
    } else if let Some(d) = &dataset {
        default_periods(d.k_max())
    } else {
        bail!("--periods is required when --data is not given");
    };
    let schedule = if c.thresholds.is_empty() {
        let Some(val) = &dataset else {
            bail!("calibration needs --data unless --thresholds are given");
        };
        calibrate_thresholds(&ckpt.model, val, &periods, c.target_fpr, c.pooling, c.options)?
    } else {
        let mut s = ThresholdSchedule::manual(periods, c.thresholds.clone(), ckpt.kind, c.options)?;
        s.detector_config = ckpt.config.clone();
        s
    };
    fs::write(out, schedule.to_json()?).with_context(|| format!("writing {}", out.display()))?;
    write_echo(
        &echo_path(out),
        json!({
            "command": "calibrate",
            "model": model,
            "data": data,
            "data_fingerprint": dataset.as_ref().map(Dataset::fingerprint),
            "config": c,
            "output": out,
        }),
    )?;
    Ok(ExitCode::SUCCESS)
}

fn monitor(model: &Path, schedule: &Path, input: Option<&Path>, output: Option<&Path>, trace_dir: Option<&Path>) -> Result<ExitCode> {
    let ckpt = load_checkpoint(model)?;
    let text = fs::read_to_string(schedule).with_context(|| format!("reading schedule {}", schedule.display()))?;
    let schedule = ThresholdSchedule::from_json(&text)?;
    if schedule.detector != ckpt.kind {
        bail!(policystop_core::Error::Config(format!(
            "schedule was calibrated for {} but the checkpoint is {}",
            schedule.detector, ckpt.kind
        )));
    }
    let reader: Box<dyn BufRead> = match input {
        Some(p) => Box::new(BufReader::new(fs::File::open(p).with_context(|| format!("opening {}", p.display()))?)),
        None => Box::new(io::stdin().lock()),
    };
    let writer: Box<dyn Write> = match output {
        Some(p) => Box::new(BufWriter::new(fs::File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(io::stdout().lock()),
    };
    let (summary, states) = run_stream(reader, writer, &ckpt.model, &schedule)?;
    if let Some(dir) = trace_dir {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for id in &summary.episodes {
            let state = &states[id];
            if state.step_index() == 0 {
                continue;
            }
            let stem: String = id
                .chars()
                .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
                .collect();
            fs::write(dir.join(format!("{stem}.csv")), trace_csv(state)?)?;
            fs::write(dir.join(format!("{stem}.svg")), trace_svg(state)?)?;
        }
    }
    log::info!(
        "{} steps over {} episodes, {} stopped",
        summary.steps,
        summary.episodes.len(),
        summary.stopped.len()
    );
    Ok(if summary.stopped.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_STOPPED)
    })
}

fn report(inputs: &[PathBuf], format: Format) -> Result<ExitCode> {
    for (i, path) in inputs.iter().enumerate() {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let report = if path.extension().is_some_and(|e| e == "csv") {
            parse_report_csv(&text)?
        } else {
            EvalReport::from_json(&text)?
        };
        if i > 0 {
            println!();
        }
        print!("{}", render_report(&report, format.into())?);
    }
    Ok(ExitCode::SUCCESS)
}
