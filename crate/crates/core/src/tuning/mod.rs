//! Preference data and goal-latent tuning.
//!
//! Trajectories are split into positives and negatives (by reward or by
//! human labels), paired, and the goal latent (or an adapter) is trained
//! full-batch against a trajectory-level preference loss.

mod files;
mod loss;
mod train;

pub use files::{
    append_label, labels_map, latent_to_string, load_labels, load_latent, parse_labels,
    parse_latent, save_latent, Label, LabelRecord, LatentMeta,
};
pub use loss::{
    bc_loss, ipo_loss, log_sigmoid, pgt_loss, slic_loss, traj_logratio, LossGrads, Objective,
    Problem,
};
pub use train::{
    collect_dataset, dataset_from_rewards, elicit_from_demos, iterative_rounds, tune,
    tune_anchored, tune_problem, Penalty, RoundResult, TuneOutput,
};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::policy::AdapterKind;
use crate::rng::{Namespace, Rng};
use crate::rollout::Trajectory;

/// One preferred/dispreferred trajectory pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PreferencePair {
    pub win: Arc<Trajectory>,
    pub lose: Arc<Trajectory>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    Reward,
    Human,
}

impl LabelSource {
    pub fn as_str(self) -> &'static str {
        match self {
            LabelSource::Reward => "reward",
            LabelSource::Human => "human",
        }
    }
}

impl FromStr for LabelSource {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reward" => Ok(LabelSource::Reward),
            "human" => Ok(LabelSource::Human),
            _ => Err(Error::contract(format!("unknown label source '{s}'"))),
        }
    }
}

/// Pairs plus the positive trajectories they were built from (BC and the
/// SLiC regularizer consume the positives directly).
#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceDataset {
    pub pairs: Vec<PreferencePair>,
    pub positives: Vec<Arc<Trajectory>>,
    pub label_source: LabelSource,
    /// Free-form provenance, e.g. the trajectory file's latent checksum.
    pub provenance: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    PgtDpo,
    Ipo,
    Slic,
    Bc,
}

impl LossKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::PgtDpo => "pgt_dpo",
            LossKind::Ipo => "ipo",
            LossKind::Slic => "slic",
            LossKind::Bc => "bc",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pgt_dpo" | "pgt" | "dpo" => Ok(LossKind::PgtDpo),
            "ipo" => Ok(LossKind::Ipo),
            "slic" => Ok(LossKind::Slic),
            "bc" => Ok(LossKind::Bc),
            _ => Err(Error::contract(format!("unknown loss kind '{s}'"))),
        }
    }
}

/// Which parameters a tuning run updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trainable {
    GoalLatent,
    Full,
    LowRank,
    BiasOnly,
}

impl Trainable {
    pub fn as_str(self) -> &'static str {
        match self {
            Trainable::GoalLatent => "goal_latent",
            Trainable::Full => "full",
            Trainable::LowRank => "low_rank",
            Trainable::BiasOnly => "bias_only",
        }
    }

    pub fn adapter_kind(self) -> AdapterKind {
        match self {
            Trainable::GoalLatent => AdapterKind::None,
            Trainable::Full => AdapterKind::Full,
            Trainable::LowRank => AdapterKind::LowRank,
            Trainable::BiasOnly => AdapterKind::BiasOnly,
        }
    }
}

impl fmt::Display for Trainable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Trainable {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "goal_latent" | "latent" => Ok(Trainable::GoalLatent),
            "full" => Ok(Trainable::Full),
            "low_rank" => Ok(Trainable::LowRank),
            "bias_only" => Ok(Trainable::BiasOnly),
            _ => Err(Error::contract(format!("unknown trainable group '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneConfig {
    pub beta: f64,
    pub lr: f64,
    /// Adam step for `Trainable::Full`. The latent's step collapses a fully
    /// trainable network within a few dozen updates.
    pub full_lr: f64,
    pub epochs: usize,
    pub rounds: usize,
    pub loss: LossKind,
    pub trainable: Trainable,
    pub k_pos: usize,
    pub k_neg: usize,
    pub collect_n: usize,
    pub slic_delta: f64,
    pub slic_lambda: f64,
    pub rank: usize,
    /// Keep `g_ref = g0` in every round instead of moving it to the latest latent.
    pub anchor_initial: bool,
    /// Episodes per evaluation cell inside multi-round drivers.
    pub eval_n: usize,
    pub seed: u64,
    pub workers: usize,
}

impl Default for TuneConfig {
    fn default() -> Self {
        TuneConfig {
            beta: 0.6,
            lr: 1e-2,
            full_lr: 1e-5,
            epochs: 200,
            rounds: 1,
            loss: LossKind::PgtDpo,
            trainable: Trainable::GoalLatent,
            k_pos: 150,
            k_neg: 150,
            collect_n: 500,
            slic_delta: 1.0,
            slic_lambda: 0.1,
            rank: 4,
            anchor_initial: false,
            eval_n: 200,
            seed: 0,
            workers: 1,
        }
    }
}

impl TuneConfig {
    /// Adam step size for `trainable`.
    pub fn lr_for(&self, trainable: Trainable) -> f64 {
        if trainable == Trainable::Full {
            self.full_lr
        } else {
            self.lr
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::contract(m.to_string()));
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return fail("beta must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite() && self.full_lr > 0.0 && self.full_lr.is_finite())
        {
            return fail("lr and full_lr must be positive");
        }
        if self.epochs == 0 {
            return fail("epochs must be at least 1");
        }
        if self.rounds == 0 {
            return fail("rounds must be at least 1");
        }
        if self.k_pos == 0 || self.k_neg == 0 || self.k_pos + self.k_neg > self.collect_n {
            return fail("need 1 ≤ k_pos, 1 ≤ k_neg and k_pos + k_neg ≤ collect_n");
        }
        if self.slic_delta < 0.0 || self.slic_lambda < 0.0 {
            return fail("slic delta and lambda must be non-negative");
        }
        if self.trainable == Trainable::LowRank && self.rank == 0 {
            return fail("low-rank adapters need rank ≥ 1");
        }
        if self.workers == 0 || self.eval_n == 0 {
            return fail("workers and eval_n must be at least 1");
        }
        Ok(())
    }
}

/// Indices into a trajectory sequence, each list in ascending order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub pos: Vec<usize>,
    pub neg: Vec<usize>,
}

/// Top `k_pos` and bottom `k_neg` trajectories by total reward.
///
/// Ranking is by reward descending, then episode seed ascending, then index
/// ascending, so ties resolve deterministically.
pub fn filter_by_reward(trajs: &[Trajectory], k_pos: usize, k_neg: usize) -> Result<Partition> {
    if k_pos + k_neg > trajs.len() {
        return Err(Error::contract(format!(
            "k_pos + k_neg = {} exceeds the {} trajectories available",
            k_pos + k_neg,
            trajs.len()
        )));
    }
    let mut order: Vec<usize> = (0..trajs.len()).collect();
    order.sort_by(|&a, &b| {
        trajs[b]
            .total_reward
            .total_cmp(&trajs[a].total_reward)
            .then(trajs[a].seed.cmp(&trajs[b].seed))
            .then(a.cmp(&b))
    });
    let mut pos = order[..k_pos].to_vec();
    let mut neg = order[order.len() - k_neg..].to_vec();
    pos.sort_unstable();
    neg.sort_unstable();
    Ok(Partition { pos, neg })
}

/// Partition by explicit labels; unlabeled and skipped trajectories are dropped.
pub fn apply_labels(n: usize, labels: &BTreeMap<usize, Label>) -> Result<Partition> {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for (&i, &label) in labels {
        if i >= n {
            return Err(Error::Labels(format!(
                "label for trajectory {i} but only {n} exist"
            )));
        }
        match label {
            Label::Positive => pos.push(i),
            Label::Negative => neg.push(i),
            Label::Skip => {}
        }
    }
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Labels(format!(
            "{} positive and {} negative labels; label at least one of each to build pairs",
            pos.len(),
            neg.len()
        )));
    }
    Ok(Partition { pos, neg })
}

/// Pair positives with a seeded shuffle of the negatives, cycling the shorter side.
pub fn make_pairs(
    trajs: &[Arc<Trajectory>],
    partition: &Partition,
    seed: u64,
) -> Result<Vec<PreferencePair>> {
    let Partition { pos, neg } = partition;
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::contract(
            "make_pairs needs at least one positive and one negative",
        ));
    }
    if let Some(&bad) = pos.iter().chain(neg).find(|&&i| i >= trajs.len()) {
        return Err(Error::contract(format!(
            "trajectory index {bad} out of range"
        )));
    }
    let mut shuffled = neg.clone();
    Rng::substream(seed, Namespace::Pairing, 0).shuffle(&mut shuffled);
    let n = pos.len().max(neg.len());
    Ok((0..n)
        .map(|i| PreferencePair {
            win: Arc::clone(&trajs[pos[i % pos.len()]]),
            lose: Arc::clone(&trajs[shuffled[i % shuffled.len()]]),
        })
        .collect())
}

/// Filter (or label), pair, and package a collected set.
pub fn build_dataset(
    trajs: &[Trajectory],
    partition: &Partition,
    label_source: LabelSource,
    seed: u64,
    provenance: impl Into<String>,
) -> Result<PreferenceDataset> {
    let shared: Vec<Arc<Trajectory>> = trajs.iter().cloned().map(Arc::new).collect();
    let pairs = make_pairs(&shared, partition, seed)?;
    Ok(PreferenceDataset {
        pairs,
        positives: partition
            .pos
            .iter()
            .map(|&i| Arc::clone(&shared[i]))
            .collect(),
        label_source,
        provenance: provenance.into(),
    })
}
