//! Sequential multi-task training.
//!
//! PGT-CL stores one tuned latent per task on top of a frozen bundle, so
//! earlier tasks cannot be forgotten. The baselines (NCL, EWC, ER, KD and
//! the MTL protocol) fine-tune the whole network through a full adapter.
//!
//! Every method trains on the same per-task preference datasets, collected
//! once under the frozen bundle and each task's prompt latent.

mod baselines;

pub use baselines::{
    fisher_diag, kd_divergence, run_baseline, run_er, run_ewc, run_kd, run_mtl, run_ncl, Baseline,
    BaselineRun, FisherDiag, MtlRun, ReplayBuffer,
};

use std::collections::BTreeMap;

use crate::env::{EnvVariant, TaskId};
use crate::error::{Error, Result};
use crate::eval::{evaluate, Cell, EvalResult, Table};
use crate::policy::{Adapter, GoalLatent, PolicyBundle};
use crate::rng::{stream_seed, Namespace};
use crate::tuning::{collect_dataset, tune, PreferenceDataset, Trainable, TuneConfig};

/// Task order of the continual protocol; the last task is train-only.
pub const DEFAULT_ORDER: [TaskId; 4] =
    [TaskId::Craft, TaskId::Hunt, TaskId::Place, TaskId::Explore];

/// A task with the latent its prompt encodes to.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskPrompt {
    pub task: TaskId,
    pub latent: GoalLatent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContinualConfig {
    /// Training settings shared by every method. `trainable` is overridden
    /// per method.
    pub tune: TuneConfig,
    pub lambda_ewc: f64,
    pub replay_quota: usize,
    pub lambda_kd: f64,
}

impl Default for ContinualConfig {
    fn default() -> Self {
        ContinualConfig {
            tune: TuneConfig::default(),
            lambda_ewc: 10.0,
            replay_quota: 50,
            lambda_kd: 1.0,
        }
    }
}

impl ContinualConfig {
    pub fn validate(&self) -> Result<()> {
        self.tune.validate()?;
        if !(self.lambda_ewc >= 0.0 && self.lambda_kd >= 0.0) {
            return Err(Error::contract("EWC and KD weights must be non-negative"));
        }
        if self.tune.loss == crate::tuning::LossKind::Bc {
            return Err(Error::contract(
                "continual training needs a pairwise preference loss",
            ));
        }
        Ok(())
    }
}

/// One latent per task, all tuned against the same bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentStore {
    pub bundle_checksum: String,
    entries: BTreeMap<TaskId, (GoalLatent, String)>,
}

impl LatentStore {
    pub fn new(bundle_checksum: String) -> Self {
        LatentStore {
            bundle_checksum,
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, task: TaskId, latent: GoalLatent, provenance: String) -> Result<()> {
        if self.entries.contains_key(&task) {
            return Err(Error::contract(format!(
                "latent store already holds {task}"
            )));
        }
        self.entries.insert(task, (latent, provenance));
        Ok(())
    }

    pub fn get(&self, task: TaskId) -> Option<&GoalLatent> {
        self.entries.get(&task).map(|(g, _)| g)
    }

    pub fn provenance(&self, task: TaskId) -> Option<&str> {
        self.entries.get(&task).map(|(_, p)| p.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Stored reals: tasks × latent dimension.
    pub fn footprint(&self) -> usize {
        self.entries.values().map(|(g, _)| g.dim()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (TaskId, &GoalLatent)> {
        self.entries.iter().map(|(t, (g, _))| (*t, g))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PgtClRun {
    pub store: LatentStore,
    /// `stages[j][i]`: task `i` evaluated after stage `j` (`i ≤ j`).
    pub stages: Vec<Vec<EvalResult>>,
}

fn check_prompts(bundle: &PolicyBundle, prompts: &[TaskPrompt]) -> Result<()> {
    if prompts.is_empty() {
        return Err(Error::contract(
            "continual learning needs at least one task",
        ));
    }
    for (i, p) in prompts.iter().enumerate() {
        if prompts[..i].iter().any(|q| q.task == p.task) {
            return Err(Error::contract(format!(
                "task {} appears twice in the sequence",
                p.task
            )));
        }
        crate::error::ensure_dim("prompt latent", bundle.latent_dim(), p.latent.dim())?;
    }
    Ok(())
}

/// One preference dataset per task, collected under the frozen bundle with
/// the same seeds a single PGT round uses.
pub fn collect_task_datasets(
    bundle: &PolicyBundle,
    prompts: &[TaskPrompt],
    config: &TuneConfig,
) -> Result<Vec<PreferenceDataset>> {
    check_prompts(bundle, prompts)?;
    prompts
        .iter()
        .map(|p| {
            collect_dataset(
                bundle,
                &p.latent,
                p.task,
                EnvVariant::in_distribution(),
                config,
                stream_seed(config.seed, Namespace::Round, 1),
                stream_seed(config.seed, Namespace::Pairing, 1),
            )
            .map(|(_, ds)| ds)
        })
        .collect()
}

pub(crate) fn eval_id(
    bundle: &PolicyBundle,
    adapter: &Adapter,
    g: &GoalLatent,
    task: TaskId,
    config: &TuneConfig,
) -> Result<EvalResult> {
    evaluate(
        bundle,
        adapter,
        g,
        task,
        EnvVariant::in_distribution(),
        config.eval_n,
        config.seed,
        config.workers,
    )
}

/// Frozen bundle under each task's prompt latent.
pub fn pretrained_results(
    bundle: &PolicyBundle,
    prompts: &[TaskPrompt],
    config: &TuneConfig,
) -> Result<Vec<EvalResult>> {
    prompts
        .iter()
        .map(|p| eval_id(bundle, &Adapter::none(), &p.latent, p.task, config))
        .collect()
}

/// Tune one latent per task in order and store it; after each stage every
/// task seen so far is evaluated under its stored latent.
pub fn run_pgt_cl(
    bundle: &PolicyBundle,
    prompts: &[TaskPrompt],
    datasets: &[PreferenceDataset],
    config: &ContinualConfig,
) -> Result<PgtClRun> {
    config.validate()?;
    check_prompts(bundle, prompts)?;
    if datasets.len() != prompts.len() {
        return Err(Error::contract("one dataset per task"));
    }
    let checksum = bundle.checksum();
    let cfg = TuneConfig {
        trainable: Trainable::GoalLatent,
        ..config.tune.clone()
    };
    let mut store = LatentStore::new(checksum.clone());
    let mut stages = Vec::with_capacity(prompts.len());
    for (p, ds) in prompts.iter().zip(datasets) {
        let out = tune(bundle, &p.latent, ds, &cfg)?;
        store.insert(
            p.task,
            out.latent,
            format!("prompt {}", p.latent.checksum()),
        )?;
        if bundle.checksum() != checksum {
            return Err(Error::contract("the bundle changed during PGT-CL"));
        }
        let row = prompts[..=stages.len()]
            .iter()
            .map(|q| {
                eval_id(
                    bundle,
                    &Adapter::none(),
                    store.get(q.task).expect("stored"),
                    q.task,
                    &cfg,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        stages.push(row);
    }
    Ok(PgtClRun { store, stages })
}

/// Forgetting matrix: one row per evaluated task (every task but the last,
/// which is train-only), one column per training stage, then the frozen
/// bundle and PGT-CL reference columns.
pub fn continual_table(
    tasks: &[TaskId],
    stages: &[Vec<EvalResult>],
    pretrained: &[EvalResult],
    pgt: &[EvalResult],
) -> Result<Table> {
    let n = tasks.len();
    if stages.len() != n || pretrained.len() != n || pgt.len() != n {
        return Err(Error::contract(
            "continual table needs one stage and one reference per task",
        ));
    }
    if stages.iter().enumerate().any(|(j, row)| row.len() != j + 1) {
        return Err(Error::contract(
            "stage j must evaluate the first j + 1 tasks",
        ));
    }
    let mut columns = vec!["task".to_string()];
    columns.extend(tasks.iter().map(|t| t.to_string()));
    columns.push("pretrained".into());
    columns.push("pgt".into());
    let value = |r: &EvalResult| Cell::Value {
        value: r.value,
        stderr: Some(r.stderr),
    };
    let rows = (0..n.saturating_sub(1).max(1))
        .map(|i| {
            let mut row = vec![Cell::Text(tasks[i].to_string())];
            row.extend((0..n).map(|j| {
                if j < i {
                    Cell::Empty
                } else {
                    value(&stages[j][i])
                }
            }));
            row.push(value(&pretrained[i]));
            row.push(value(&pgt[i]));
            row
        })
        .collect();
    Ok(Table {
        columns,
        rows,
        best_groups: vec![(1..n + 3).collect()],
    })
}

/// The final stage of a PGT-CL run, in task order.
pub fn final_results(run: &PgtClRun) -> Vec<EvalResult> {
    run.stages.last().cloned().unwrap_or_default()
}
