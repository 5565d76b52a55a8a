//! Deployment side: per-period stop thresholds calibrated on normal episodes,
//! and a step-by-step monitor that halts a rollout once its score crosses the
//! active threshold.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detector::{Detector, DetectorKind};
use crate::error::{Error, Result};
use crate::eval::{cutoff_length, DEFAULT_FRACTIONS};
use crate::store::{Dataset, Episode, Label, SubEpisode};

/// How calibration prefixes are pooled inside a period.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// Every prefix length in the period is one sample.
    #[default]
    Prefixes,
    /// One sample per episode: its highest score in the period.
    EpisodeMax,
}

/// Scoring options shared by calibration and the live monitor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MonitorOptions {
    /// Score every `stride` steps (and on the first); reuse the last score between.
    pub stride: usize,
    /// Replace scores by their running maximum.
    pub running_max: bool,
}

impl Default for MonitorOptions {
    fn default() -> Self {
        MonitorOptions {
            stride: 1,
            running_max: false,
        }
    }
}

impl MonitorOptions {
    fn validate(&self) -> Result<()> {
        if self.stride == 0 {
            return Err(Error::Config("stride must be positive".into()));
        }
        Ok(())
    }

    fn scores_at(&self, len: usize) -> bool {
        len == 1 || len % self.stride == 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSchedule {
    /// Inclusive period ends; period `i` covers prefix lengths `(b_{i-1}, b_i]`.
    pub boundaries: Vec<usize>,
    pub thresholds: Vec<f64>,
    pub detector: DetectorKind,
    #[serde(default)]
    pub detector_config: serde_json::Value,
    /// `None` for hand-set thresholds.
    pub target_fpr: Option<f64>,
    pub pooling: Pooling,
    pub options: MonitorOptions,
}

impl ThresholdSchedule {
    /// Hand-set thresholds.
    pub fn manual(boundaries: Vec<usize>, thresholds: Vec<f64>, detector: DetectorKind, options: MonitorOptions) -> Result<Self> {
        let s = ThresholdSchedule {
            boundaries,
            thresholds,
            detector,
            detector_config: serde_json::Value::Null,
            target_fpr: None,
            pooling: Pooling::Prefixes,
            options,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        check_boundaries(&self.boundaries)?;
        if self.thresholds.len() != self.boundaries.len() {
            return Err(Error::DimensionMismatch {
                expected: self.boundaries.len(),
                actual: self.thresholds.len(),
            });
        }
        if self.thresholds.iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite("threshold"));
        }
        self.options.validate()
    }

    /// Longest prefix the schedule covers.
    pub fn horizon(&self) -> usize {
        *self.boundaries.last().expect("validated non-empty")
    }

    /// Period index of a prefix length, or `None` past the horizon.
    pub fn period_of(&self, len: usize) -> Option<usize> {
        self.boundaries.iter().position(|&b| len <= b)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: ThresholdSchedule = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }
}

fn check_boundaries(boundaries: &[usize]) -> Result<()> {
    if boundaries.is_empty() || boundaries[0] == 0 || boundaries.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(format!(
            "period boundaries must be positive and strictly increasing, got {boundaries:?}"
        )));
    }
    Ok(())
}

/// Period ends at the evaluation cutoffs of `k_max`.
pub fn default_periods(k_max: usize) -> Vec<usize> {
    let mut b: Vec<usize> = DEFAULT_FRACTIONS.iter().map(|&f| cutoff_length(f, k_max, k_max)).collect();
    b.dedup();
    b
}

/// What the monitor would report after each step of an episode.
pub fn score_trace(detector: &dyn Detector, episode: &SubEpisode<'_>, options: &MonitorOptions) -> Result<Vec<f64>> {
    options.validate()?;
    let lengths: Vec<usize> = (1..=episode.len()).filter(|&l| options.scores_at(l)).collect();
    let fresh = detector.score_prefixes(episode, &lengths)?;
    let mut out = Vec::with_capacity(episode.len());
    let mut next = fresh.iter().zip(&lengths).peekable();
    let mut current = f64::NEG_INFINITY;
    for len in 1..=episode.len() {
        if let Some((&s, _)) = next.next_if(|(_, &l)| l == len) {
            current = if options.running_max { current.max(s) } else { s };
        }
        out.push(current);
    }
    Ok(out)
}

/// `s_(n-m)` of the ascending sample with `m = floor(fpr * n)`: at most `m`
/// samples lie strictly above it.
fn upper_quantile(mut samples: Vec<f64>, target_fpr: f64) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len();
    let m = ((target_fpr * n as f64) + 1e-9).floor() as usize;
    samples[n - 1 - m.min(n - 1)]
}

/// Per-period thresholds from normal validation episodes.
///
/// An episode shorter than a period contributes its final score there, so
/// every period has samples.
pub fn calibrate_thresholds(
    detector: &dyn Detector,
    validation: &Dataset,
    boundaries: &[usize],
    target_fpr: f64,
    pooling: Pooling,
    options: MonitorOptions,
) -> Result<ThresholdSchedule> {
    check_boundaries(boundaries)?;
    if !(0.0..1.0).contains(&target_fpr) {
        return Err(Error::Config(format!("target_fpr must be in [0, 1), got {target_fpr}")));
    }
    if validation.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if let Some(ep) = validation.episodes.iter().find(|e| e.label != Label::Success) {
        return Err(Error::InvalidEpisode {
            id: ep.id.clone(),
            message: "calibration episodes must be success-labeled".into(),
        });
    }
    let traces = validation
        .episodes
        .par_iter()
        .map(|ep| score_trace(detector, &ep.as_sub(), &options))
        .collect::<Result<Vec<_>>>()?;
    let mut thresholds = Vec::with_capacity(boundaries.len());
    let mut start = 0;
    for (i, &end) in boundaries.iter().enumerate() {
        let mut samples = Vec::new();
        for trace in &traces {
            let clamped = |len: usize| trace[len.min(trace.len()) - 1];
            match pooling {
                Pooling::Prefixes => samples.extend((start + 1..=end).map(clamped)),
                Pooling::EpisodeMax => samples.push((start + 1..=end).map(clamped).fold(f64::NEG_INFINITY, f64::max)),
            }
        }
        if samples.is_empty() {
            return Err(Error::EmptyPeriod { period: i, start: start + 1, end });
        }
        thresholds.push(upper_quantile(samples, target_fpr));
        start = end;
    }
    let schedule = ThresholdSchedule {
        boundaries: boundaries.to_vec(),
        thresholds,
        detector: detector.kind(),
        detector_config: detector.config_echo(),
        target_fpr: Some(target_fpr),
        pooling,
        options,
    };
    schedule.validate()?;
    Ok(schedule)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Continue,
    Stop,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    /// 0-based step index.
    pub t: usize,
    pub verdict: Verdict,
    pub score: f64,
    pub threshold: f64,
    pub period: usize,
}

/// The live episode seen so far.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MonitorState {
    pub episode_id: String,
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub decisions: Vec<Decision>,
    last_score: Option<f64>,
}

impl MonitorState {
    pub fn new(episode_id: impl Into<String>) -> Self {
        MonitorState {
            episode_id: episode_id.into(),
            ..MonitorState::default()
        }
    }

    pub fn step_index(&self) -> usize {
        self.states.len()
    }

    pub fn last_score(&self) -> Option<f64> {
        self.last_score
    }

    pub fn is_terminal(&self) -> bool {
        self.decisions.last().is_some_and(|d| d.verdict == Verdict::Stop)
    }

    pub fn stop_step(&self) -> Option<usize> {
        self.decisions.iter().find(|d| d.verdict == Verdict::Stop).map(|d| d.t)
    }
}

/// Appends one step, scores the prefix and decides.
pub fn monitor_step(
    state: &mut MonitorState,
    s: &[f64],
    a: &[f64],
    schedule: &ThresholdSchedule,
    detector: &dyn Detector,
) -> Result<Decision> {
    if state.is_terminal() {
        return Err(Error::MonitorTerminated(state.episode_id.clone()));
    }
    if let (Some(s0), Some(a0)) = (state.states.first(), state.actions.first()) {
        if s.len() != s0.len() {
            return Err(Error::DimensionMismatch {
                expected: s0.len(),
                actual: s.len(),
            });
        }
        if a.len() != a0.len() {
            return Err(Error::DimensionMismatch {
                expected: a0.len(),
                actual: a.len(),
            });
        }
    }
    if s.iter().chain(a).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("monitored step"));
    }
    let len = state.step_index() + 1;
    let period = schedule.period_of(len).ok_or(Error::OutOfRange {
        what: "monitored step",
        value: len,
        min: 1,
        max: schedule.horizon(),
    })?;
    state.states.push(s.to_vec());
    state.actions.push(a.to_vec());
    let opts = schedule.options;
    let score = match state.last_score {
        Some(prev) if !opts.scores_at(len) => prev,
        prev => {
            let sub = SubEpisode::new(&state.episode_id, &state.states, &state.actions);
            let fresh = detector.score(&sub);
            let fresh = match fresh {
                Ok(v) => v,
                Err(e) => {
                    state.states.pop();
                    state.actions.pop();
                    return Err(e);
                }
            };
            match prev {
                Some(p) if opts.running_max => p.max(fresh),
                _ => fresh,
            }
        }
    };
    state.last_score = Some(score);
    let threshold = schedule.thresholds[period];
    let decision = Decision {
        t: len - 1,
        verdict: if score > threshold { Verdict::Stop } else { Verdict::Continue },
        score,
        threshold,
        period,
    };
    state.decisions.push(decision);
    Ok(decision)
}

/// Stop step the monitor would report for a complete episode, if any.
pub fn replay_stop_step(detector: &dyn Detector, schedule: &ThresholdSchedule, episode: &Episode) -> Result<Option<usize>> {
    let n = episode.len().min(schedule.horizon());
    let trace = score_trace(detector, &episode.prefix(n)?, &schedule.options)?;
    Ok(trace.iter().enumerate().find_map(|(t, &score)| {
        let period = schedule.period_of(t + 1)?;
        (score > schedule.thresholds[period]).then_some(t)
    }))
}

/// One input line of the streaming monitor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub episode_id: String,
    pub t: usize,
    pub state: Vec<f64>,
    pub action: Vec<f64>,
}

/// One output line of the streaming monitor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub episode_id: String,
    pub t: usize,
    pub verdict: Verdict,
    pub score: f64,
    pub threshold: f64,
    pub period: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StreamSummary {
    pub steps: usize,
    /// Episode ids in order of first appearance.
    pub episodes: Vec<String>,
    /// `(episode_id, stop step)` in the order stops happened.
    pub stopped: Vec<(String, usize)>,
    /// Records that arrived for an already stopped episode; they produce no output.
    pub ignored: usize,
}

/// Reads step records line by line and writes one decision record per step.
/// Episodes may interleave; each keeps its own state. Records of an episode
/// after its stop are dropped and counted in [`StreamSummary::ignored`].
pub fn run_stream(
    input: impl BufRead,
    mut output: impl Write,
    detector: &dyn Detector,
    schedule: &ThresholdSchedule,
) -> Result<(StreamSummary, HashMap<String, MonitorState>)> {
    let mut states: HashMap<String, MonitorState> = HashMap::new();
    let mut summary = StreamSummary::default();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<stream>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: StepRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        let state = states.entry(rec.episode_id.clone()).or_insert_with(|| {
            summary.episodes.push(rec.episode_id.clone());
            MonitorState::new(rec.episode_id.clone())
        });
        if state.is_terminal() {
            summary.ignored += 1;
            continue;
        }
        if rec.t != state.step_index() {
            return Err(Error::Parse {
                line: i + 1,
                message: format!(
                    "episode '{}' expected step {} but got {}",
                    rec.episode_id,
                    state.step_index(),
                    rec.t
                ),
            });
        }
        let d = monitor_step(state, &rec.state, &rec.action, schedule, detector)?;
        let out = DecisionRecord {
            episode_id: rec.episode_id.clone(),
            t: d.t,
            verdict: d.verdict,
            score: d.score,
            threshold: d.threshold,
            period: d.period,
        };
        serde_json::to_writer(&mut output, &out)?;
        output.write_all(b"\n").map_err(|e| Error::io("<stream>", e))?;
        output.flush().map_err(|e| Error::io("<stream>", e))?;
        summary.steps += 1;
        if d.verdict == Verdict::Stop {
            summary.stopped.push((rec.episode_id, d.t));
        }
    }
    Ok((summary, states))
}

/// Step records for replaying an episode through [`run_stream`].
pub fn episode_stream(episode: &Episode) -> impl Iterator<Item = StepRecord> + '_ {
    episode.states.iter().zip(&episode.actions).enumerate().map(|(t, (s, a))| StepRecord {
        episode_id: episode.id.clone(),
        t,
        state: s.clone(),
        action: a.clone(),
    })
}

/// `step,score,threshold,verdict` rows.
pub fn trace_csv(state: &MonitorState) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["step", "score", "threshold", "verdict"])?;
    for d in &state.decisions {
        let verdict = match d.verdict {
            Verdict::Continue => "continue",
            Verdict::Stop => "stop",
        };
        w.write_record([d.t.to_string(), d.score.to_string(), d.threshold.to_string(), verdict.to_string()])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv writer emits utf-8"))
}

/// Line plot of the min-max normalized score with the threshold overlaid and
/// the stop step marked.
pub fn trace_svg(state: &MonitorState) -> Result<String> {
    let ds = &state.decisions;
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (w, h, pad) = (640.0, 320.0, 40.0);
    let finite = ds.iter().flat_map(|d| [d.score, d.threshold]).filter(|v| v.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let n = ds.len().max(2) - 1;
    let x = |t: usize| pad + (w - 2.0 * pad) * t as f64 / n as f64;
    let y = |v: f64| {
        let v = if v.is_finite() { v } else { lo };
        h - pad - (h - 2.0 * pad) * (v - lo) / span
    };
    let poly = |f: &dyn Fn(&Decision) -> f64| {
        ds.iter()
            .map(|d| format!("{:.2},{:.2}", x(d.t), y(f(d))))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(svg, r#"<title>{} anomaly score</title>"#, xml_escape(&state.episode_id));
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r##"<polyline class="threshold" fill="none" stroke="#d62728" stroke-dasharray="6 4" points="{}"/>"##,
        poly(&|d| d.threshold)
    );
    let _ = writeln!(
        svg,
        r##"<polyline class="score" fill="none" stroke="#1f77b4" stroke-width="2" points="{}"/>"##,
        poly(&|d| d.score)
    );
    if let Some(stop) = state.stop_step() {
        let d = ds[stop];
        let _ = writeln!(
            svg,
            r##"<line class="stop-marker" x1="{0:.2}" x2="{0:.2}" y1="{1}" y2="{2}" stroke="black"/>"##,
            x(stop),
            pad,
            h - pad
        );
        let _ = writeln!(
            svg,
            r##"<circle class="stop-marker" cx="{:.2}" cy="{:.2}" r="5" fill="black"/>"##,
            x(stop),
            y(d.score)
        );
        let _ = writeln!(svg, r#"<text x="{:.2}" y="{}" font-size="12">stop @ {stop}</text>"#, x(stop) + 4.0, pad - 8.0);
    }
    let _ = writeln!(svg, r#"<text x="{pad}" y="{}" font-size="12">step</text>"#, h - 10.0);
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}
