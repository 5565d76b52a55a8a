//! Detection metrics and the partial-length evaluation protocol.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detector::Detector;
use crate::error::{Error, Result};
use crate::store::{Dataset, Label};

/// Cutoffs as fractions of the dataset's `k_max`.
pub const DEFAULT_FRACTIONS: [f64; 6] = [0.10, 0.20, 0.30, 0.50, 0.75, 1.00];

/// Scores split by label; higher means more anomalous.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScoredSet {
    /// Failure episodes.
    pub positives: Vec<f64>,
    /// Success episodes.
    pub negatives: Vec<f64>,
}

impl ScoredSet {
    pub fn new(positives: Vec<f64>, negatives: Vec<f64>) -> Self {
        ScoredSet { positives, negatives }
    }

    pub fn from_labeled(scores: &[f64], labels: &[Label]) -> Self {
        let mut set = ScoredSet::default();
        for (&s, l) in scores.iter().zip(labels) {
            if l.is_failure() {
                set.positives.push(s);
            } else {
                set.negatives.push(s);
            }
        }
        set
    }

    fn check(&self) -> Result<()> {
        if self.positives.is_empty() {
            return Err(Error::DegenerateScores("no positive (failure) scores"));
        }
        if self.negatives.is_empty() {
            return Err(Error::DegenerateScores("no negative (success) scores"));
        }
        if self.positives.iter().chain(&self.negatives).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("detector score"));
        }
        Ok(())
    }
}

/// Mann-Whitney estimate `P(pos > neg) + 0.5 P(pos = neg)`.
pub fn auroc(set: &ScoredSet) -> Result<f64> {
    set.check()?;
    let mut neg = set.negatives.clone();
    neg.sort_by(f64::total_cmp);
    let mut credit = 0.0;
    for &p in &set.positives {
        let below = neg.partition_point(|&n| n < p);
        let not_above = neg.partition_point(|&n| n <= p);
        credit += below as f64 + 0.5 * (not_above - below) as f64;
    }
    Ok(credit / (set.positives.len() as f64 * neg.len() as f64))
}

/// FPR at the largest threshold `v` that keeps at least `tpr_target` of the
/// positives at `score >= v`.
pub fn fpr_at_tpr(set: &ScoredSet, tpr_target: f64) -> Result<f64> {
    set.check()?;
    if !(tpr_target > 0.0 && tpr_target <= 1.0) {
        return Err(Error::Config(format!("tpr target must be in (0, 1], got {tpr_target}")));
    }
    let v = tpr_threshold(&set.positives, tpr_target);
    let admitted = set.negatives.iter().filter(|&&n| n >= v).count();
    Ok(admitted as f64 / set.negatives.len() as f64)
}

fn tpr_threshold(positives: &[f64], tpr_target: f64) -> f64 {
    let mut pos = positives.to_vec();
    pos.sort_by(|a, b| b.total_cmp(a));
    let needed = ((tpr_target * pos.len() as f64) - 1e-9).ceil().max(1.0) as usize;
    pos[needed.min(pos.len()) - 1]
}

/// `max(1, floor(f * k_max))` capped at the episode's own length.
pub fn cutoff_length(fraction: f64, k_max: usize, episode_len: usize) -> usize {
    let k = ((fraction * k_max as f64) + 1e-9).floor() as usize;
    k.max(1).min(episode_len)
}

/// Per-episode scores at each cutoff.
#[derive(Clone, Debug, PartialEq)]
pub struct CutoffScores {
    pub fractions: Vec<f64>,
    pub labels: Vec<Label>,
    /// `scores[episode][cutoff]`.
    pub scores: Vec<Vec<f64>>,
}

impl CutoffScores {
    pub fn column(&self, cutoff: usize) -> Vec<f64> {
        self.scores.iter().map(|row| row[cutoff]).collect()
    }

    pub fn scored_set(&self, cutoff: usize) -> ScoredSet {
        ScoredSet::from_labeled(&self.column(cutoff), &self.labels)
    }
}

/// Scores every test episode truncated at every cutoff.
pub fn score_at_cutoffs(detector: &dyn Detector, test: &Dataset, fractions: &[f64]) -> Result<CutoffScores> {
    if fractions.iter().any(|&f| !(f > 0.0 && f <= 1.0)) {
        return Err(Error::Config("cutoff fractions must be in (0, 1]".into()));
    }
    let k_max = test.k_max();
    let scores = test
        .episodes
        .par_iter()
        .map(|ep| {
            let lengths: Vec<usize> = fractions
                .iter()
                .map(|&f| cutoff_length(f, k_max, ep.len()))
                .collect();
            detector.score_prefixes(&ep.as_sub(), &lengths)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CutoffScores {
        fractions: fractions.to_vec(),
        labels: test.episodes.iter().map(|e| e.label).collect(),
        scores,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorResult {
    pub detector: String,
    #[serde(default)]
    pub config: serde_json::Value,
    pub auroc: Vec<f64>,
    pub fpr_at_tpr95: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub seed: u64,
    pub dataset_fingerprint: String,
    pub fractions: Vec<f64>,
    pub results: Vec<DetectorResult>,
}

impl EvalReport {
    pub fn result(&self, detector: &str) -> Option<&DetectorResult> {
        self.results.iter().find(|r| r.detector == detector)
    }

    /// Copy without config echoes (what the CSV form carries).
    pub fn without_configs(&self) -> EvalReport {
        let mut r = self.clone();
        for d in &mut r.results {
            d.config = serde_json::Value::Null;
        }
        r
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

pub fn metrics_for(scores: &CutoffScores, detector: String, config: serde_json::Value) -> Result<DetectorResult> {
    let mut auc = Vec::with_capacity(scores.fractions.len());
    let mut fpr = Vec::with_capacity(scores.fractions.len());
    for c in 0..scores.fractions.len() {
        let set = scores.scored_set(c);
        auc.push(auroc(&set)?);
        fpr.push(fpr_at_tpr(&set, 0.95)?);
    }
    Ok(DetectorResult {
        detector,
        config,
        auroc: auc,
        fpr_at_tpr95: fpr,
    })
}

/// AUROC and FPR@TPR95 per detector per cutoff.
pub fn partial_length_eval(detectors: &[&dyn Detector], test: &Dataset, fractions: &[f64], seed: u64) -> Result<EvalReport> {
    let mut results = Vec::with_capacity(detectors.len());
    for d in detectors {
        let scores = score_at_cutoffs(*d, test, fractions)?;
        results.push(metrics_for(&scores, d.kind().to_string(), d.config_echo())?);
    }
    Ok(EvalReport {
        seed,
        dataset_fingerprint: test.fingerprint(),
        fractions: fractions.to_vec(),
        results,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Table,
    Csv,
}

const METRIC_AUROC: &str = "auroc";
const METRIC_FPR: &str = "fpr_at_tpr95";

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    detector: String,
    metric: String,
    fraction: f64,
    value: f64,
    seed: u64,
    dataset_fingerprint: String,
}

fn display_name(detector: &str) -> &str {
    detector
        .parse::<crate::detector::DetectorKind>()
        .map(|k| k.display_name())
        .unwrap_or(detector)
}

pub fn render_report(report: &EvalReport, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Table => Ok(render_table(report)),
        ReportFormat::Csv => render_csv(report),
    }
}

fn render_table(report: &EvalReport) -> String {
    let name_w = report
        .results
        .iter()
        .map(|r| display_name(&r.detector).len())
        .max()
        .unwrap_or(0)
        .max("Method".len());
    let mut out = String::new();
    let _ = write!(out, "{:<name_w$}  {:<9}", "Method", "Metric");
    for f in &report.fractions {
        let _ = write!(out, "  {:>5}", format!("{}%", (f * 100.0).round()));
    }
    out.push('\n');
    for r in &report.results {
        for (metric, values) in [("AUROC", &r.auroc), ("FPR@TPR95", &r.fpr_at_tpr95)] {
            let _ = write!(out, "{:<name_w$}  {:<9}", display_name(&r.detector), metric);
            for v in values {
                let _ = write!(out, "  {v:>5.2}");
            }
            out.push('\n');
        }
    }
    out
}

fn render_csv(report: &EvalReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &report.results {
        for (metric, values) in [(METRIC_AUROC, &r.auroc), (METRIC_FPR, &r.fpr_at_tpr95)] {
            for (&fraction, &value) in report.fractions.iter().zip(values) {
                w.serialize(CsvRow {
                    detector: r.detector.clone(),
                    metric: metric.into(),
                    fraction,
                    value,
                    seed: report.seed,
                    dataset_fingerprint: report.dataset_fingerprint.clone(),
                })?;
            }
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv writer emits utf-8"))
}

/// Rebuilds a report (without config echoes) from its CSV form.
pub fn parse_report_csv(text: &str) -> Result<EvalReport> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let mut report = EvalReport {
        seed: 0,
        dataset_fingerprint: String::new(),
        fractions: Vec::new(),
        results: Vec::new(),
    };
    for (i, row) in rdr.deserialize::<CsvRow>().enumerate() {
        let row = row?;
        if i == 0 {
            report.seed = row.seed;
            report.dataset_fingerprint = row.dataset_fingerprint.clone();
        }
        if !report.fractions.contains(&row.fraction) {
            report.fractions.push(row.fraction);
        }
        let idx = match report.results.iter().position(|r| r.detector == row.detector) {
            Some(idx) => idx,
            None => {
                report.results.push(DetectorResult {
                    detector: row.detector.clone(),
                    config: serde_json::Value::Null,
                    auroc: Vec::new(),
                    fpr_at_tpr95: Vec::new(),
                });
                report.results.len() - 1
            }
        };
        let target = &mut report.results[idx];
        match row.metric.as_str() {
            METRIC_AUROC => target.auroc.push(row.value),
            METRIC_FPR => target.fpr_at_tpr95.push(row.value),
            other => {
                return Err(Error::Parse {
                    line: i + 2,
                    message: format!("unknown metric '{other}'"),
                })
            }
        }
    }
    if report.results.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(report)
}
