//! Line-delimited JSON trajectory files.
//!
//! Line 1 is a [`SetHeader`]; every following line is one trajectory:
//! `{seed, steps:[{obs, a, r}], total_reward, success, source, final_obs}`.
//! Reals are written in shortest round-trip decimal form, so a load returns
//! every value bit for bit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{SetHeader, Source, Step, Trajectory, TrajectorySet};
use crate::env::{HORIZON, NUM_ACTIONS, OBS_DIM};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize)]
struct BodyOut<'a> {
    seed: u64,
    steps: &'a [Step],
    total_reward: f64,
    success: bool,
    source: Source,
    final_obs: &'a [f64],
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BodyIn {
    seed: u64,
    steps: Vec<Step>,
    total_reward: f64,
    success: bool,
    source: Source,
    final_obs: Vec<f64>,
}

pub fn set_to_string(set: &TrajectorySet) -> Result<String> {
    let Some(header) = &set.header else {
        if set.trajectories.is_empty() {
            return Ok(String::new());
        }
        return Err(Error::contract("a non-empty trajectory set needs a header"));
    };
    let mut out = serde_json::to_string(header).map_err(|e| Error::contract(e.to_string()))?;
    out.push('\n');
    for t in &set.trajectories {
        if t.task != header.task || t.variant != header.variant {
            return Err(Error::contract(
                "trajectory task/variant differs from the set header",
            ));
        }
        let body = BodyOut {
            seed: t.seed,
            steps: &t.steps,
            total_reward: t.total_reward,
            success: t.success,
            source: t.source,
            final_obs: &t.final_obs,
        };
        out.push_str(&serde_json::to_string(&body).map_err(|e| Error::contract(e.to_string()))?);
        out.push('\n');
    }
    Ok(out)
}

pub fn parse_set(text: &str) -> Result<TrajectorySet> {
    let mut header: Option<SetHeader> = None;
    let mut trajectories = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let bad = |message: String| Error::Format {
            line: line_no,
            message,
        };
        if line.trim().is_empty() {
            continue;
        }
        let Some(h) = &header else {
            let h: SetHeader =
                serde_json::from_str(line).map_err(|e| bad(format!("header: {e}")))?;
            if h.format_version != FORMAT_VERSION {
                return Err(Error::Version {
                    found: h.format_version,
                    expected: FORMAT_VERSION,
                });
            }
            header = Some(h);
            continue;
        };
        let b: BodyIn = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        if b.steps.len() > HORIZON {
            return Err(bad(format!(
                "{} steps exceed the horizon {HORIZON}",
                b.steps.len()
            )));
        }
        for s in &b.steps {
            if s.obs.len() != OBS_DIM || s.action >= NUM_ACTIONS || !s.reward.is_finite() {
                return Err(bad(
                    "step with wrong observation width, action id, or reward".into(),
                ));
            }
        }
        if b.final_obs.len() != OBS_DIM {
            return Err(bad("final_obs has the wrong width".into()));
        }
        let sum: f64 = b.steps.iter().map(|s| s.reward).sum();
        if (sum - b.total_reward).abs() > 1e-9 {
            return Err(bad(format!(
                "total_reward {} differs from step sum {sum}",
                b.total_reward
            )));
        }
        trajectories.push(Trajectory {
            task: h.task,
            variant: h.variant,
            seed: b.seed,
            steps: b.steps,
            total_reward: b.total_reward,
            success: b.success,
            source: b.source,
            final_obs: b.final_obs,
        });
    }
    Ok(TrajectorySet {
        header,
        trajectories,
    })
}

pub fn save_set(set: &TrajectorySet, path: &Path) -> Result<()> {
    let text = set_to_string(set)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_set(path: &Path) -> Result<TrajectorySet> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_set(&text)
}
