//! Labels files (line-delimited JSON written by the label server) and
//! latent files (one real per line under a `#` header).

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::GoalLatent;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Positive,
    Negative,
    Skip,
}

impl std::str::FromStr for Label {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "positive" => Ok(Label::Positive),
            "negative" => Ok(Label::Negative),
            "skip" => Ok(Label::Skip),
            _ => Err(Error::Labels(format!("unknown label '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelRecord {
    pub traj_index: usize,
    pub label: Label,
    pub labeler_id: String,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

pub fn parse_labels(text: &str) -> Result<Vec<LabelRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Format {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn load_labels(path: &Path) -> Result<Vec<LabelRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_labels(&text)
}

/// Append one record as a single write.
pub fn append_label(path: &Path, record: &LabelRecord) -> Result<()> {
    let mut line = serde_json::to_string(record).map_err(|e| Error::contract(e.to_string()))?;
    line.push('\n');
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    f.write_all(line.as_bytes())
        .map_err(|e| Error::io(path, e))?;
    f.sync_data().map_err(|e| Error::io(path, e))
}

/// Latest label per trajectory index.
pub fn labels_map(records: &[LabelRecord]) -> BTreeMap<usize, Label> {
    records.iter().map(|r| (r.traj_index, r.label)).collect()
}

/// Provenance stored in a latent file's header.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LatentMeta {
    pub prompt_checksum: String,
    pub rounds: usize,
    pub config_hash: String,
}

const LATENT_MAGIC: &str = "# pgt-latent v1";

pub fn latent_to_string(g: &GoalLatent, meta: &LatentMeta) -> String {
    let mut s = format!(
        "{LATENT_MAGIC}\n# dim {}\n# prompt_checksum {}\n# rounds {}\n# config_hash {}\n",
        g.dim(),
        meta.prompt_checksum,
        meta.rounds,
        meta.config_hash
    );
    for v in &g.0 {
        s.push_str(&format!("{v:?}\n"));
    }
    s
}

pub fn parse_latent(text: &str) -> Result<(GoalLatent, LatentMeta)> {
    let mut meta = LatentMeta::default();
    let mut dim = None;
    let mut values = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let bad = |message: String| Error::Format {
            line: i + 1,
            message,
        };
        if i == 0 {
            if line != LATENT_MAGIC {
                return Err(bad(format!("expected '{LATENT_MAGIC}'")));
            }
            continue;
        }
        if let Some(rest) = line.strip_prefix("# ") {
            let (key, value) = rest.split_once(' ').unwrap_or((rest, ""));
            match key {
                "dim" => dim = Some(value.parse::<usize>().map_err(|e| bad(e.to_string()))?),
                "prompt_checksum" => meta.prompt_checksum = value.to_string(),
                "rounds" => {
                    meta.rounds = value
                        .parse()
                        .map_err(|e: std::num::ParseIntError| bad(e.to_string()))?
                }
                "config_hash" => meta.config_hash = value.to_string(),
                _ => {}
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let v: f64 = line
            .trim()
            .parse()
            .map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?;
        if !v.is_finite() {
            return Err(bad("non-finite latent value".into()));
        }
        values.push(v);
    }
    let dim = dim.ok_or_else(|| Error::Format {
        line: 1,
        message: "missing '# dim' header".into(),
    })?;
    if dim != values.len() {
        return Err(Error::Dimension {
            context: "latent file values",
            expected: dim,
            actual: values.len(),
        });
    }
    Ok((GoalLatent(values), meta))
}

pub fn save_latent(path: &Path, g: &GoalLatent, meta: &LatentMeta) -> Result<()> {
    std::fs::write(path, latent_to_string(g, meta)).map_err(|e| Error::io(path, e))
}

pub fn load_latent(path: &Path) -> Result<(GoalLatent, LatentMeta)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_latent(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn latent_round_trip_is_exact() {
        let g = GoalLatent(vec![0.1, -1e-300, 3.5e10, f64::MIN_POSITIVE, -0.0]);
        let meta = LatentMeta {
            prompt_checksum: "abc".into(),
            rounds: 3,
            config_hash: "def".into(),
        };
        let (back, m) = parse_latent(&latent_to_string(&g, &meta)).unwrap();
        assert_eq!(m, meta);
        for (a, b) in g.0.iter().zip(&back.0) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn latent_dimension_checked() {
        let text = "# pgt-latent v1\n# dim 3\n1.0\n2.0\n";
        assert!(matches!(parse_latent(text), Err(Error::Dimension { .. })));
    }

    #[test]
    fn labels_parse_and_last_wins() {
        let text = r#"{"traj_index":0,"label":"positive","labeler_id":"a","timestamp":1}
{"traj_index":1,"label":"negative","labeler_id":"a","timestamp":2}
{"traj_index":0,"label":"skip","labeler_id":"a","timestamp":3}
"#;
        let recs = parse_labels(text).unwrap();
        assert_eq!(recs.len(), 3);
        let m = labels_map(&recs);
        assert_eq!(m[&0], Label::Skip);
        assert_eq!(m[&1], Label::Negative);
        assert!(matches!(
            parse_labels("{\"bad\":1}\n"),
            Err(Error::Format { line: 1, .. })
        ));
    }

    #[test]
    fn append_then_load() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("labels.jsonl");
        for i in 0..3 {
            let r = LabelRecord {
                traj_index: i,
                label: Label::Positive,
                labeler_id: "x".into(),
                timestamp: 10,
            };
            append_label(&p, &r).unwrap();
        }
        assert_eq!(load_labels(&p).unwrap().len(), 3);
    }
}
