//! Line-delimited episode files.
//!
//! The first line may be a metadata record `{"meta": {...}}`; every other
//! non-blank line is one episode. Numbers are written in scientific notation
//! with 17 significant digits so that every `f64` survives a round trip.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Deserialize;
use serde_json::Value;

use super::{Dataset, DatasetMeta, Episode, Label};
use crate::error::{Error, Result};

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text)
}

pub fn parse_dataset(text: &str) -> Result<Dataset> {
    let mut meta: Option<DatasetMeta> = None;
    let mut episodes = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let value = parse_line(line, line_no)?;
        if let Some(m) = value.get("meta") {
            if meta.is_some() || !episodes.is_empty() {
                return Err(Error::Parse {
                    line: line_no,
                    message: "metadata record must be the first record".into(),
                });
            }
            meta = Some(DatasetMeta::deserialize(m).map_err(|e| Error::Parse {
                line: line_no,
                message: e.to_string(),
            })?);
            continue;
        }
        episodes.push(episode_from_value(value, line_no)?);
    }
    if episodes.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let meta = match meta {
        Some(m) => m,
        None => {
            let first = &episodes[0];
            DatasetMeta {
                n_s: first.state_dim(),
                n_a: first.action_dim(),
                k_max: episodes.iter().map(Episode::len).max().unwrap_or(0),
                ..DatasetMeta::default()
            }
        }
    };
    Dataset::from_parts(meta, episodes)
}

/// Writes the dataset, embedding its normalization statistics in the metadata.
pub fn save_dataset(path: impl AsRef<Path>, dataset: &Dataset) -> Result<()> {
    let path = path.as_ref();
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_dataset(&mut file, dataset).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn write_dataset(out: &mut impl Write, dataset: &Dataset) -> Result<()> {
    let mut meta = dataset.meta.clone();
    meta.norm_stats = Some(dataset.norm_stats.clone());
    let header = serde_json::json!({ "meta": meta });
    let io_err = |e| Error::io("<dataset>", e);
    writeln!(out, "{header}").map_err(io_err)?;
    for ep in &dataset.episodes {
        ep.validate(dataset.n_s(), dataset.n_a())?;
        writeln!(out, "{}", episode_line(ep)).map_err(io_err)?;
    }
    Ok(())
}

pub(crate) fn episode_line(ep: &Episode) -> String {
    let mut s = String::with_capacity(64 + ep.len() * 24 * (ep.state_dim() + ep.action_dim()));
    let id = serde_json::to_string(&ep.id).expect("string serialization");
    let label = match ep.label {
        Label::Success => "success",
        Label::Failure => "failure",
    };
    let _ = write!(s, r#"{{"id":{id},"label":"{label}","states":"#);
    write_matrix(&mut s, &ep.states);
    s.push_str(r#","actions":"#);
    write_matrix(&mut s, &ep.actions);
    s.push('}');
    s
}

fn write_matrix(s: &mut String, rows: &[Vec<f64>]) {
    s.push('[');
    for (i, row) in rows.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        s.push('[');
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                s.push(',');
            }
            let _ = write!(s, "{v:.16e}");
        }
        s.push(']');
    }
    s.push(']');
}

fn parse_line(line: &str, line_no: usize) -> Result<Value> {
    match serde_json::from_str::<Value>(line) {
        Ok(v) => Ok(v),
        Err(first) => {
            // Some writers emit bare NaN/Infinity; parse them as strings so the
            // finiteness check can reject the episode by id.
            let patched = quote_nonfinite_tokens(line);
            serde_json::from_str::<Value>(&patched).map_err(|_| Error::Parse {
                line: line_no,
                message: first.to_string(),
            })
        }
    }
}

fn quote_nonfinite_tokens(line: &str) -> String {
    let mut out = String::with_capacity(line.len() + 16);
    let mut in_string = false;
    let mut escaped = false;
    let mut rest = line;
    while let Some(c) = rest.chars().next() {
        if in_string {
            out.push(c);
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_string = false;
            }
            rest = &rest[c.len_utf8()..];
            continue;
        }
        if c == '"' {
            in_string = true;
            out.push(c);
            rest = &rest[1..];
            continue;
        }
        let token = ["-Infinity", "Infinity", "NaN"]
            .into_iter()
            .find(|t| rest.starts_with(t));
        match token {
            Some(t) => {
                out.push('"');
                out.push_str(t);
                out.push('"');
                rest = &rest[t.len()..];
            }
            None => {
                out.push(c);
                rest = &rest[c.len_utf8()..];
            }
        }
    }
    out
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Number {
    Finite(f64),
    Token(String),
}

impl Number {
    fn value(&self) -> f64 {
        match self {
            Number::Finite(v) => *v,
            Number::Token(t) => match t.as_str() {
                "Infinity" => f64::INFINITY,
                "-Infinity" => f64::NEG_INFINITY,
                _ => f64::NAN,
            },
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EpisodeRecord {
    id: String,
    label: Label,
    states: Vec<Vec<Number>>,
    actions: Vec<Vec<Number>>,
}

fn episode_from_value(value: Value, line_no: usize) -> Result<Episode> {
    let rec = EpisodeRecord::deserialize(value).map_err(|e| Error::Parse {
        line: line_no,
        message: e.to_string(),
    })?;
    let unpack = |m: Vec<Vec<Number>>| -> Vec<Vec<f64>> {
        m.into_iter()
            .map(|row| row.iter().map(Number::value).collect())
            .collect()
    };
    Ok(Episode {
        id: rec.id,
        label: rec.label,
        states: unpack(rec.states),
        actions: unpack(rec.actions),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::test_support::ramp_episode;
    use proptest::prelude::*;

    const TWO: &str = r#"{"meta":{"n_s":2,"n_a":1,"k_max":5}}
{"id":"a","label":"success","states":[[0.0,1.0],[1.0,2.0]],"actions":[[0.5],[0.25]]}
{"id":"b","label":"failure","states":[[2.0,0.0],[3.0,1.0],[4.0,2.0]],"actions":[[1.0],[0.0],[-1.0]]}
"#;

    #[test]
    fn loads_two_episodes() {
        let ds = parse_dataset(TWO).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.k_max(), 5);
        assert_eq!(ds.episodes[1].label, Label::Failure);
        assert_eq!(ds.norm_stats.states.mean, vec![2.0, 1.2]);
    }

    #[test]
    fn meta_is_optional() {
        let body: String = TWO.lines().skip(1).collect::<Vec<_>>().join("\n");
        let ds = parse_dataset(&body).unwrap();
        assert_eq!(ds.k_max(), 3);
        assert_eq!((ds.n_s(), ds.n_a()), (2, 1));
    }

    #[test]
    fn empty_file() {
        assert_eq!(parse_dataset("").unwrap_err().to_string(), "empty dataset");
        let only_meta = r#"{"meta":{"n_s":2,"n_a":1,"k_max":5}}"#;
        assert!(matches!(parse_dataset(only_meta), Err(Error::EmptyDataset)));
    }

    #[test]
    fn nan_rejected_by_id() {
        let text = r#"{"id":"ok","label":"success","states":[[0.0]],"actions":[[0.0]]}
{"id":"has-nan","label":"success","states":[[NaN]],"actions":[[0.0]]}"#;
        let err = parse_dataset(text).unwrap_err().to_string();
        assert!(err.contains("has-nan"), "{err}");
    }

    #[test]
    fn parse_error_carries_line() {
        let text = "{\"id\":\"ok\",\"label\":\"success\",\"states\":[[0.0]],\"actions\":[[0.0]]}\n\n{oops";
        match parse_dataset(text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn dimension_mismatch_names_episode() {
        let text = r#"{"meta":{"n_s":2,"n_a":1,"k_max":5}}
{"id":"wide","label":"success","states":[[0.0,1.0,2.0]],"actions":[[0.0]]}"#;
        let err = parse_dataset(text).unwrap_err().to_string();
        assert!(err.contains("wide"), "{err}");
    }

    #[test]
    fn quoted_tokens_untouched_inside_strings() {
        let s = quote_nonfinite_tokens(r#"{"id":"NaN-run","x":[NaN,-Infinity]}"#);
        assert_eq!(s, r#"{"id":"NaN-run","x":["NaN","-Infinity"]}"#);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let ds = Dataset::new(
            vec![ramp_episode("a", 4, 3, 2), ramp_episode("b\"q", 6, 3, 2)],
            Some(10),
        )
        .unwrap();
        save_dataset(&path, &ds).unwrap();
        let back = load_dataset(&path).unwrap();
        assert_eq!(back.episodes, ds.episodes);
        assert_eq!(back.norm_stats, ds.norm_stats);
        assert_eq!(back.k_max(), 10);
    }

    proptest! {
        #[test]
        fn numbers_round_trip_bit_exact(vals in prop::collection::vec(any::<f64>().prop_filter("moderate", |v| v.is_finite() && v.abs() < 1e100), 1..24)) {
            let ep = Episode {
                id: "p".into(),
                label: Label::Success,
                states: vals.iter().map(|&v| vec![v]).collect(),
                actions: vals.iter().map(|&v| vec![-v]).collect(),
            };
            let ds = Dataset::new(vec![ep], None).unwrap();
            let mut buf = Vec::new();
            write_dataset(&mut buf, &ds).unwrap();
            let back = parse_dataset(std::str::from_utf8(&buf).unwrap()).unwrap();
            for (a, b) in back.episodes[0].states.iter().zip(&ds.episodes[0].states) {
                prop_assert_eq!(a[0].to_bits(), b[0].to_bits());
            }
        }
    }
}
