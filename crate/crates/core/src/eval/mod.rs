//! Metrics, ID/OOD evaluation, relative improvements, sweeps and reports.

mod report;
mod study;

pub use report::{eval_table, report, table2, Cell, Format, Table};
pub use study::{beta_sweep, prompt_study, BetaRow, PromptStudy};

use crate::env::{EnvVariant, RewardKind, TaskId};
use crate::error::{Error, Result};
use crate::policy::{adapter_checksum, Adapter, GoalLatent, PolicyBundle};
use crate::rng::Namespace;
use crate::rollout::{run_episodes, Controller, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricKind {
    SuccessRate,
    MeanReward,
}

impl MetricKind {
    pub fn of(task: TaskId) -> Self {
        match task.spec().reward_kind {
            RewardKind::Binary => MetricKind::SuccessRate,
            RewardKind::Count => MetricKind::MeanReward,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::SuccessRate => "success_rate",
            MetricKind::MeanReward => "mean_reward",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub task: TaskId,
    pub variant: EnvVariant,
    pub metric: MetricKind,
    pub value: f64,
    pub n_episodes: usize,
    /// Sample standard deviation over √n.
    pub stderr: f64,
    pub bundle_checksum: String,
    pub latent_checksum: String,
    pub seed: u64,
}

/// Metric value and standard error over finished episodes.
pub fn summarize(task: TaskId, episodes: &[Trajectory]) -> (f64, f64) {
    let metric = MetricKind::of(task);
    let xs: Vec<f64> = episodes
        .iter()
        .map(|t| match metric {
            MetricKind::SuccessRate => f64::from(u8::from(t.success)),
            MetricKind::MeanReward => t.total_reward,
        })
        .collect();
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Evaluate any controller on `n` episodes from the evaluation seed namespace.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_controller(
    controller: Controller<'_>,
    task: TaskId,
    variant: EnvVariant,
    n: usize,
    seed: u64,
    workers: usize,
    bundle_checksum: String,
    latent_checksum: String,
) -> Result<EvalResult> {
    if n == 0 {
        return Err(Error::contract("evaluation needs n ≥ 1"));
    }
    let episodes = run_episodes(controller, task, variant, n, seed, Namespace::Eval, workers)?;
    let (value, stderr) = summarize(task, &episodes);
    Ok(EvalResult {
        task,
        variant,
        metric: MetricKind::of(task),
        value,
        n_episodes: n,
        stderr,
        bundle_checksum,
        latent_checksum,
        seed,
    })
}

/// Policy evaluation under latent `g` with an optional adapter.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    bundle: &PolicyBundle,
    adapter: &Adapter,
    g: &GoalLatent,
    task: TaskId,
    variant: EnvVariant,
    n: usize,
    seed: u64,
    workers: usize,
) -> Result<EvalResult> {
    let mut bundle_checksum = bundle.checksum();
    if !adapter.params.is_empty() {
        bundle_checksum = format!("{bundle_checksum}+{}", adapter_checksum(adapter));
    }
    let controller = Controller::Policy {
        bundle,
        adapter,
        latent: g,
    };
    evaluate_controller(
        controller,
        task,
        variant,
        n,
        seed,
        workers,
        bundle_checksum,
        g.checksum(),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeltaReport {
    pub baseline: EvalResult,
    pub treatment: EvalResult,
    /// Relative change; `None` when the baseline is not positive.
    pub delta: Option<f64>,
}

impl DeltaReport {
    /// `+132.6%` style, or `-` when undefined.
    pub fn display(&self) -> String {
        format_delta(self.delta)
    }
}

pub fn format_delta(delta: Option<f64>) -> String {
    match delta {
        Some(d) => format!("{:+.1}%", d * 100.0),
        None => "-".to_string(),
    }
}

pub fn relative_delta(baseline: f64, treatment: f64) -> Option<f64> {
    (baseline > 0.0).then(|| (treatment - baseline) / baseline)
}

pub fn delta(baseline: &EvalResult, treatment: &EvalResult) -> Result<DeltaReport> {
    if baseline.task != treatment.task
        || baseline.variant != treatment.variant
        || baseline.metric != treatment.metric
    {
        return Err(Error::contract(
            "delta needs matching task, variant and metric",
        ));
    }
    Ok(DeltaReport {
        baseline: baseline.clone(),
        treatment: treatment.clone(),
        delta: relative_delta(baseline.value, treatment.value),
    })
}
