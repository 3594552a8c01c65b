use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskId {
    Collect,
    Craft,
    Explore,
    Hunt,
    Place,
}

impl TaskId {
    pub const ALL: [TaskId; 5] = [
        TaskId::Collect,
        TaskId::Craft,
        TaskId::Explore,
        TaskId::Hunt,
        TaskId::Place,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskId::Collect => "collect",
            TaskId::Craft => "craft",
            TaskId::Explore => "explore",
            TaskId::Hunt => "hunt",
            TaskId::Place => "place",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Whether the agent starts with an implement the inventory perturbation can swap.
    pub fn carries_tool(self) -> bool {
        matches!(self, TaskId::Craft | TaskId::Hunt | TaskId::Place)
    }

    pub fn spec(self) -> TaskSpec {
        TaskSpec::of(self)
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        TaskId::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::contract(format!("unknown task '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardKind {
    /// +1 per unit of progress; metric is mean cumulative reward.
    Count,
    /// Single +1 on completion; metric is success rate.
    Binary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub id: TaskId,
    pub reward_kind: RewardKind,
    pub success_threshold: f64,
    pub description: &'static str,
}

impl TaskSpec {
    pub fn of(id: TaskId) -> Self {
        let (reward_kind, success_threshold, description) = match id {
            TaskId::Collect => (
                RewardKind::Count,
                30.0,
                "pick up resource cells; +1 per resource, and a new one appears elsewhere",
            ),
            TaskId::Craft => (
                RewardKind::Binary,
                1.0,
                "gather three resources and craft a product at the bench",
            ),
            TaskId::Explore => (
                RewardKind::Count,
                10.0,
                "visit cells far from the spawn point; +1 per newly visited distant cell",
            ),
            TaskId::Hunt => (
                RewardKind::Binary,
                1.0,
                "tag the wandering mob while adjacent to it",
            ),
            TaskId::Place => (
                RewardKind::Binary,
                1.0,
                "pick up a resource and deposit it on the marker",
            ),
        };
        TaskSpec {
            id,
            reward_kind,
            success_threshold,
            description,
        }
    }

    pub fn is_success(&self, total_reward: f64) -> bool {
        total_reward >= self.success_threshold
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantKind {
    InDistribution,
    OodSeedSpawn,
    OodLayout,
    OodInventory,
    OodObjectLocation,
}

impl VariantKind {
    pub const ALL: [VariantKind; 5] = [
        VariantKind::InDistribution,
        VariantKind::OodSeedSpawn,
        VariantKind::OodLayout,
        VariantKind::OodInventory,
        VariantKind::OodObjectLocation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            VariantKind::InDistribution => "in_distribution",
            VariantKind::OodSeedSpawn => "ood_seed_spawn",
            VariantKind::OodLayout => "ood_layout",
            VariantKind::OodInventory => "ood_inventory",
            VariantKind::OodObjectLocation => "ood_object_location",
        }
    }

    pub fn is_ood(self) -> bool {
        self != VariantKind::InDistribution
    }

    /// Whether the perturbation applies to `task`.
    pub fn valid_for(self, task: TaskId) -> bool {
        match self {
            VariantKind::InDistribution | VariantKind::OodSeedSpawn | VariantKind::OodLayout => {
                true
            }
            VariantKind::OodInventory => task.carries_tool(),
            VariantKind::OodObjectLocation => matches!(task, TaskId::Craft | TaskId::Place),
        }
    }

    /// OOD perturbation used when a single out-of-distribution number is reported per task.
    pub fn default_ood(task: TaskId) -> VariantKind {
        match task {
            TaskId::Collect => VariantKind::OodSeedSpawn,
            TaskId::Craft => VariantKind::OodObjectLocation,
            TaskId::Explore => VariantKind::OodLayout,
            TaskId::Hunt => VariantKind::OodInventory,
            TaskId::Place => VariantKind::OodObjectLocation,
        }
    }
}

impl fmt::Display for VariantKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VariantKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = match s {
            "id" => "in_distribution",
            "ood" => "ood_seed_spawn",
            other => other,
        };
        VariantKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::contract(format!("unknown variant kind '{s}'")))
    }
}

/// A task instantiation: in-distribution or one perturbation kind plus its seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EnvVariant {
    pub kind: VariantKind,
    pub seed: u64,
}

impl EnvVariant {
    pub fn in_distribution() -> Self {
        EnvVariant {
            kind: VariantKind::InDistribution,
            seed: 0,
        }
    }
}

/// Validated variant descriptor.
///
/// * `ood_seed_spawn`: world regenerated from a salted seed, agent spawns on a random cell.
/// * `ood_layout`: wall density roughly doubles and resources are drawn in one cluster.
/// * `ood_inventory`: the starting tool is replaced by an equivalent implement (a product).
/// * `ood_object_location`: the bench or marker moves from its fixed corner to a random edge cell.
pub fn make_variant(task: TaskId, kind: VariantKind, seed: u64) -> Result<EnvVariant> {
    if !kind.valid_for(task) {
        return Err(Error::InvalidVariant {
            task: task.to_string(),
            kind: kind.to_string(),
        });
    }
    Ok(EnvVariant { kind, seed })
}
