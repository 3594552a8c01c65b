use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::env::{EnvVariant, TaskId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    PolicyRollout,
    ScriptedExpert,
    HumanDemo,
}

/// One environment step: the observation seen, the action taken, the reward received.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub obs: Vec<f64>,
    #[serde(rename = "a")]
    pub action: usize,
    #[serde(rename = "r")]
    pub reward: f64,
}

/// A recorded episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub task: TaskId,
    pub variant: EnvVariant,
    pub seed: u64,
    pub steps: Vec<Step>,
    pub total_reward: f64,
    pub success: bool,
    pub source: Source,
    /// Observation after the last step (used for rendering the end state).
    pub final_obs: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Concatenation of two trajectories' steps (metadata from `self`).
    pub fn concat(&self, other: &Trajectory) -> Trajectory {
        let mut out = self.clone();
        out.steps.extend(other.steps.iter().cloned());
        out.total_reward += other.total_reward;
        out.final_obs = other.final_obs.clone();
        out
    }

    /// SHA-256 over every field, reals by bit pattern.
    pub fn checksum(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update([
            self.task.index() as u8,
            self.variant.kind as u8,
            self.source as u8,
        ]);
        h.update(self.variant.seed.to_le_bytes());
        h.update(self.seed.to_le_bytes());
        h.update((self.steps.len() as u64).to_le_bytes());
        for s in &self.steps {
            h.update((s.action as u64).to_le_bytes());
            h.update(s.reward.to_bits().to_le_bytes());
            for v in &s.obs {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        h.update(self.total_reward.to_bits().to_le_bytes());
        h.update([self.success as u8]);
        for v in &self.final_obs {
            h.update(v.to_bits().to_le_bytes());
        }
        h.finalize().into()
    }
}
