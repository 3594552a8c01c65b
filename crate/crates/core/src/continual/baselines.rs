//! Full-fine-tuning continual baselines.
//!
//! Every stage continues the same full adapter from the previous stage with
//! a fresh optimizer. The reference branch of the preference loss is always
//! the pretrained network, and each task's pairs are scored under that
//! task's fixed prompt latent.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use super::{check_prompts, eval_id, ContinualConfig, TaskPrompt};
use crate::env::TaskId;
use crate::error::{ensure_dim, Error, Result};
use crate::eval::EvalResult;
use crate::numeric::{softmax_into, Mat, Mlp};
use crate::policy::{score, score_grad, Adapter, AdapterKind, GoalLatent, PolicyBundle};
use crate::rollout::Trajectory;
use crate::tuning::{
    tune_problem, Objective, Penalty, PreferenceDataset, PreferencePair, Problem, Trainable,
    TuneConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Baseline {
    Ncl,
    Ewc,
    Er,
    Kd,
}

impl Baseline {
    pub const ALL: [Baseline; 4] = [Baseline::Ncl, Baseline::Ewc, Baseline::Er, Baseline::Kd];

    pub fn as_str(self) -> &'static str {
        match self {
            Baseline::Ncl => "ncl",
            Baseline::Ewc => "ewc",
            Baseline::Er => "er",
            Baseline::Kd => "kd",
        }
    }
}

impl fmt::Display for Baseline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Baseline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Baseline::ALL
            .into_iter()
            .find(|b| b.as_str() == s)
            .ok_or_else(|| Error::contract(format!("unknown continual baseline {s:?}")))
    }
}

/// Diagonal Fisher estimate over the adapter parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct FisherDiag {
    pub values: Vec<f64>,
    /// Most recent task folded into the estimate.
    pub task: TaskId,
    /// Number of tasks averaged so far.
    pub count: usize,
}

impl FisherDiag {
    /// Running average: after `k` tasks each task carries weight `1/k`.
    pub fn accumulate(&mut self, next: FisherDiag) -> Result<()> {
        ensure_dim("fisher diagonal", self.values.len(), next.values.len())?;
        let k = (self.count + next.count) as f64;
        let w_old = self.count as f64 / k;
        let w_new = next.count as f64 / k;
        for (a, b) in self.values.iter_mut().zip(&next.values) {
            *a = w_old * *a + w_new * b;
        }
        self.count += next.count;
        self.task = next.task;
        Ok(())
    }
}

/// Mean over pairs of the squared per-pair loss gradient, at `adapter`.
pub fn fisher_diag(
    base: &Mlp,
    adapter: &Adapter,
    pairs: &[PreferencePair],
    latent: &GoalLatent,
    task: TaskId,
    objective: &Objective,
) -> Result<FisherDiag> {
    if pairs.is_empty() {
        return Err(Error::contract("a Fisher estimate needs at least one pair"));
    }
    let net = adapter.apply(base)?;
    let mut values = vec![0.0; adapter.trainable_count()];
    for pair in pairs {
        let problem = Problem::from_pairs(std::slice::from_ref(pair))?;
        let latents = [latent.as_slice()];
        let ref_sums = if objective.needs_reference() {
            Some(score(base, &problem.batch, &latents, &problem.group)?.sums)
        } else {
            None
        };
        let scored = score(&net, &problem.batch, &latents, &problem.group)?;
        let (_, coeffs) = objective.evaluate(&problem, &scored.sums, ref_sums.as_deref())?;
        let (grads, _) = score_grad(
            &net,
            &problem.batch,
            &scored,
            &coeffs,
            true,
            0,
            &problem.group,
        )?;
        let grad = adapter.pullback(base, &grads.expect("requested"))?;
        for (f, g) in values.iter_mut().zip(&grad) {
            *f += g * g;
        }
    }
    let n = pairs.len() as f64;
    values.iter_mut().for_each(|f| *f /= n);
    Ok(FisherDiag {
        values,
        task,
        count: 1,
    })
}

/// Pairs kept from earlier tasks, at most `quota` per task.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    pub quota: usize,
    entries: Vec<(TaskId, GoalLatent, Vec<PreferencePair>)>,
}

impl ReplayBuffer {
    pub fn new(quota: usize) -> Self {
        ReplayBuffer {
            quota,
            entries: Vec::new(),
        }
    }

    /// Keep the first `quota` pairs of `dataset`. Pairing already shuffled
    /// them, so the prefix is a seeded random subset.
    pub fn store(
        &mut self,
        task: TaskId,
        latent: &GoalLatent,
        dataset: &PreferenceDataset,
    ) -> Result<()> {
        if self.entries.iter().any(|(t, _, _)| *t == task) {
            return Err(Error::contract(format!(
                "replay buffer already holds {task}"
            )));
        }
        let kept = dataset.pairs.iter().take(self.quota).cloned().collect();
        self.entries.push((task, latent.clone(), kept));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.iter().map(|(_, _, p)| p.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn pairs(&self, task: TaskId) -> Option<&[PreferencePair]> {
        self.entries
            .iter()
            .find(|(t, _, _)| *t == task)
            .map(|(_, _, p)| p.as_slice())
    }

    /// Stored tasks in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = (TaskId, &GoalLatent, &[PreferencePair])> {
        self.entries.iter().map(|(t, g, p)| (*t, g, p.as_slice()))
    }

    /// Distinct trajectories of the pairs stored for `task`.
    fn trajectories(&self, task: TaskId) -> Vec<Arc<Trajectory>> {
        let mut out: Vec<Arc<Trajectory>> = Vec::new();
        for p in self.pairs(task).unwrap_or_default() {
            for t in [&p.win, &p.lose] {
                if !out.iter().any(|o| o.checksum() == t.checksum()) {
                    out.push(Arc::clone(t));
                }
            }
        }
        out
    }
}

/// Network inputs `obs ⊕ g` for every step of `trajs`.
fn state_inputs(trajs: &[Arc<Trajectory>], g: &GoalLatent) -> Result<Mat> {
    let batch = crate::policy::StepBatch::new(trajs.iter().map(|t| t.as_ref()))?;
    batch.inputs(&[g.as_slice()], &vec![0; trajs.len()])
}

fn probs_of(net: &Mlp, inputs: &Mat) -> Result<(Mat, crate::numeric::BatchCache)> {
    let cache = net.forward_batch(inputs)?;
    let mut p = Mat::zeros(inputs.rows(), net.output_dim());
    for r in 0..inputs.rows() {
        softmax_into(cache.logits.row(r), p.row_mut(r));
    }
    Ok((p, cache))
}

fn kl_rows(p: &Mat, q: &Mat) -> f64 {
    let mut total = 0.0;
    for r in 0..p.rows() {
        for (a, b) in p.row(r).iter().zip(q.row(r)) {
            if *a > 0.0 {
                total += a * (a.ln() - b.ln());
            }
        }
    }
    total / p.rows().max(1) as f64
}

/// Mean over the rows of `inputs` of `KL(π_snapshot ‖ π_current)`.
pub fn kd_divergence(snapshot: &Mlp, current: &Mlp, inputs: &Mat) -> Result<f64> {
    let (p, _) = probs_of(snapshot, inputs)?;
    let (q, _) = probs_of(current, inputs)?;
    Ok(kl_rows(&p, &q))
}

/// Distillation targets: replayed states with the snapshot's action distribution.
struct KdTarget {
    inputs: Mat,
    probs: Mat,
}

impl KdTarget {
    /// Value and gradient w.r.t. the current network's parameters.
    /// `∂KL(p ‖ softmax z)/∂z = softmax z − p`.
    fn value_grad(&self, net: &Mlp) -> Result<(f64, Mlp)> {
        let (q, cache) = probs_of(net, &self.inputs)?;
        let value = kl_rows(&self.probs, &q);
        let n = self.inputs.rows().max(1) as f64;
        let mut d = q;
        for (v, p) in d.as_mut_slice().iter_mut().zip(self.probs.as_slice()) {
            *v = (*v - p) / n;
        }
        let (grads, _) = net.backward_batch(&cache, &d, true, false)?;
        Ok((value, grads.expect("requested")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineRun {
    pub method: Baseline,
    /// Full adapter after each stage.
    pub snapshots: Vec<Adapter>,
    /// `stages[j][i]`: task `i` evaluated after stage `j` (`i ≤ j`).
    pub stages: Vec<Vec<EvalResult>>,
}

fn full_config(config: &ContinualConfig) -> TuneConfig {
    TuneConfig {
        trainable: Trainable::Full,
        ..config.tune.clone()
    }
}

fn check_inputs(
    bundle: &PolicyBundle,
    prompts: &[TaskPrompt],
    datasets: &[PreferenceDataset],
    config: &ContinualConfig,
) -> Result<()> {
    config.validate()?;
    check_prompts(bundle, prompts)?;
    if datasets.len() != prompts.len() {
        return Err(Error::contract("one dataset per task"));
    }
    if datasets.iter().any(|d| d.pairs.is_empty()) {
        return Err(Error::contract(
            "continual baselines need preference pairs for every task",
        ));
    }
    Ok(())
}

/// Sequential full fine-tuning with the distinguishing term of `method`.
pub fn run_baseline(
    bundle: &PolicyBundle,
    prompts: &[TaskPrompt],
    datasets: &[PreferenceDataset],
    config: &ContinualConfig,
    method: Baseline,
) -> Result<BaselineRun> {
    check_inputs(bundle, prompts, datasets, config)?;
    let cfg = full_config(config);
    let objective = Objective::from_config(&cfg);
    let base = &bundle.net;
    let mut adapter: Option<Adapter> = None;
    let mut fisher: Option<FisherDiag> = None;
    let mut replay = ReplayBuffer::new(config.replay_quota);
    let mut snapshots = Vec::with_capacity(prompts.len());
    let mut stages = Vec::with_capacity(prompts.len());

    for (k, (prompt, ds)) in prompts.iter().zip(datasets).enumerate() {
        // ER: current pairs plus each earlier task's stored pairs, each
        // under its own prompt latent
        let mut groups: Vec<(&[PreferencePair], &[Arc<Trajectory>])> = vec![(&ds.pairs, &[])];
        let mut latents = vec![prompt.latent.clone()];
        if method == Baseline::Er {
            for (_, g, pairs) in replay.iter().filter(|(_, _, p)| !p.is_empty()) {
                groups.push((pairs, &[]));
                latents.push(g.clone());
            }
        }
        let problem = Problem::new(&groups)?;

        let anchor = adapter.clone();
        let ewc = match (method, &fisher, &anchor) {
            (Baseline::Ewc, Some(f), Some(a)) if config.lambda_ewc > 0.0 => {
                Some((f.values.clone(), a.params.clone()))
            }
            _ => None,
        };
        let kd: Vec<KdTarget> = match (&anchor, method) {
            (Some(a), Baseline::Kd) if config.lambda_kd > 0.0 => {
                let snap = a.apply(base)?;
                replay
                    .iter()
                    .map(|(t, g, _)| {
                        let inputs = state_inputs(&replay.trajectories(t), g)?;
                        let (probs, _) = probs_of(&snap, &inputs)?;
                        Ok(KdTarget { inputs, probs })
                    })
                    .collect::<Result<_>>()?
            }
            _ => Vec::new(),
        };

        let lambda_ewc = config.lambda_ewc;
        let lambda_kd = config.lambda_kd;
        let penalty_fn = |a: &Adapter, net: &Mlp| -> Result<(f64, Vec<f64>)> {
            let mut value = 0.0;
            let mut grad = vec![0.0; a.params.len()];
            if let Some((f, star)) = &ewc {
                for i in 0..grad.len() {
                    let d = a.params[i] - star[i];
                    value += 0.5 * lambda_ewc * f[i] * d * d;
                    grad[i] += lambda_ewc * f[i] * d;
                }
            }
            if !kd.is_empty() {
                let w = lambda_kd / kd.len() as f64;
                for target in &kd {
                    let (v, g) = target.value_grad(net)?;
                    value += w * v;
                    for (acc, gi) in grad.iter_mut().zip(a.pullback(base, &g)?) {
                        *acc += w * gi;
                    }
                }
            }
            Ok((value, grad))
        };
        let penalty: Option<&Penalty<'_>> = if ewc.is_some() || !kd.is_empty() {
            Some(&penalty_fn)
        } else {
            None
        };

        let out = tune_problem(
            base,
            &problem,
            &latents,
            &latents,
            &objective,
            Trainable::Full,
            &cfg,
            penalty,
            anchor.as_ref(),
        )?;
        let trained = out.adapter;

        if method == Baseline::Ewc && config.lambda_ewc > 0.0 && k + 1 < prompts.len() {
            let f = fisher_diag(
                base,
                &trained,
                &ds.pairs,
                &prompt.latent,
                prompt.task,
                &objective,
            )?;
            match fisher.as_mut() {
                Some(acc) => acc.accumulate(f)?,
                None => fisher = Some(f),
            }
        }
        if matches!(method, Baseline::Er | Baseline::Kd) {
            replay.store(prompt.task, &prompt.latent, ds)?;
        }

        let row = prompts[..=k]
            .iter()
            .map(|q| eval_id(bundle, &trained, &q.latent, q.task, &cfg))
            .collect::<Result<Vec<_>>>()?;
        stages.push(row);
        snapshots.push(trained.clone());
        adapter = Some(trained);
    }
    Ok(BaselineRun {
        method,
        snapshots,
        stages,
    })
}

pub fn run_ncl(
    bundle: &PolicyBundle,
    prompts: &[TaskPrompt],
    datasets: &[PreferenceDataset],
    config: &ContinualConfig,
) -> Result<BaselineRun> {
    run_baseline(bundle, prompts, datasets, config, Baseline::Ncl)
}

pub fn run_ewc(
    bundle: &PolicyBundle,
    prompts: &[TaskPrompt],
    datasets: &[PreferenceDataset],
    config: &ContinualConfig,
) -> Result<BaselineRun> {
    run_baseline(bundle, prompts, datasets, config, Baseline::Ewc)
}

pub fn run_er(
    bundle: &PolicyBundle,
    prompts: &[TaskPrompt],
    datasets: &[PreferenceDataset],
    config: &ContinualConfig,
) -> Result<BaselineRun> {
    run_baseline(bundle, prompts, datasets, config, Baseline::Er)
}

pub fn run_kd(
    bundle: &PolicyBundle,
    prompts: &[TaskPrompt],
    datasets: &[PreferenceDataset],
    config: &ContinualConfig,
) -> Result<BaselineRun> {
    run_baseline(bundle, prompts, datasets, config, Baseline::Kd)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MtlRun {
    /// The jointly trained full adapter.
    pub adapter: Adapter,
    /// Joint model, per task in input order.
    pub results: Vec<EvalResult>,
    /// Independent single-task full fine-tuning, per task.
    pub ensemble: Vec<EvalResult>,
    /// Pairs in the joint training set.
    pub union_pairs: usize,
}

/// One full fine-tuning run on the union of every task's pairs, plus the
/// per-task single-task runs that form the ensemble column.
pub fn run_mtl(
    bundle: &PolicyBundle,
    prompts: &[TaskPrompt],
    datasets: &[PreferenceDataset],
    config: &ContinualConfig,
) -> Result<MtlRun> {
    check_inputs(bundle, prompts, datasets, config)?;
    let cfg = full_config(config);
    let objective = Objective::from_config(&cfg);
    let base = &bundle.net;
    let groups: Vec<(&[PreferencePair], &[Arc<Trajectory>])> = datasets
        .iter()
        .map(|d| (d.pairs.as_slice(), &[][..]))
        .collect();
    let latents: Vec<GoalLatent> = prompts.iter().map(|p| p.latent.clone()).collect();
    let problem = Problem::new(&groups)?;
    let joint = tune_problem(
        base,
        &problem,
        &latents,
        &latents,
        &objective,
        Trainable::Full,
        &cfg,
        None,
        None,
    )?
    .adapter;
    debug_assert_eq!(joint.kind, AdapterKind::Full);
    let results = prompts
        .iter()
        .map(|p| eval_id(bundle, &joint, &p.latent, p.task, &cfg))
        .collect::<Result<Vec<_>>>()?;
    let ensemble = prompts
        .iter()
        .zip(datasets)
        .map(|(p, d)| {
            let single = Problem::from_pairs(&d.pairs)?;
            let latent = std::slice::from_ref(&p.latent);
            let a = tune_problem(
                base,
                &single,
                latent,
                latent,
                &objective,
                Trainable::Full,
                &cfg,
                None,
                None,
            )?
            .adapter;
            eval_id(bundle, &a, &p.latent, p.task, &cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MtlRun {
        adapter: joint,
        results,
        ensemble,
        union_pairs: datasets.iter().map(|d| d.pairs.len()).sum(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::tests::toy_trajectory;
    use crate::rng::Rng;

    fn net(rng: &mut Rng) -> Mlp {
        Mlp::init(
            &[crate::env::OBS_DIM + 4, 6, crate::env::NUM_ACTIONS],
            1.0,
            rng,
        )
        .unwrap()
    }

    #[test]
    fn kl_is_zero_at_snapshot_and_positive_elsewhere() {
        let mut rng = Rng::new(3);
        let a = net(&mut rng);
        let b = net(&mut rng);
        let trajs = vec![Arc::new(toy_trajectory(&mut rng, 7))];
        let x = state_inputs(&trajs, &GoalLatent(vec![0.3, -0.2, 0.1, 0.5])).unwrap();
        assert_eq!(kd_divergence(&a, &a, &x).unwrap(), 0.0);
        assert!(kd_divergence(&a, &b, &x).unwrap() > 0.0);
    }

    #[test]
    fn kd_gradient_matches_finite_differences() {
        let mut rng = Rng::new(4);
        let snap = net(&mut rng);
        let cur = net(&mut rng);
        let trajs = vec![Arc::new(toy_trajectory(&mut rng, 5))];
        let inputs = state_inputs(&trajs, &GoalLatent(vec![0.1; 4])).unwrap();
        let (probs, _) = probs_of(&snap, &inputs).unwrap();
        let target = KdTarget { inputs, probs };
        let (_, g) = target.value_grad(&cur).unwrap();
        let g = g.to_flat();
        let flat = cur.to_flat();
        let h = 1e-6;
        for i in (0..flat.len()).step_by(37) {
            let mut p = cur.clone();
            let mut m = cur.clone();
            let mut fp = flat.clone();
            fp[i] += h;
            p.copy_from_flat(&fp).unwrap();
            fp[i] -= 2.0 * h;
            m.copy_from_flat(&fp).unwrap();
            let fd =
                (target.value_grad(&p).unwrap().0 - target.value_grad(&m).unwrap().0) / (2.0 * h);
            assert!(
                (fd - g[i]).abs() <= 1e-6 * (1.0 + fd.abs()),
                "param {i}: {fd} vs {}",
                g[i]
            );
        }
    }

    #[test]
    fn fisher_running_average_weights_tasks_equally() {
        let mut f = FisherDiag {
            values: vec![3.0, 0.0],
            task: TaskId::Craft,
            count: 1,
        };
        f.accumulate(FisherDiag {
            values: vec![1.0, 2.0],
            task: TaskId::Hunt,
            count: 1,
        })
        .unwrap();
        f.accumulate(FisherDiag {
            values: vec![2.0, 4.0],
            task: TaskId::Place,
            count: 1,
        })
        .unwrap();
        assert!((f.values[0] - 2.0).abs() < 1e-12);
        assert!((f.values[1] - 2.0).abs() < 1e-12);
        assert_eq!((f.task, f.count), (TaskId::Place, 3));
    }

    #[test]
    fn baseline_names_round_trip() {
        for b in Baseline::ALL {
            assert_eq!(b.as_str().parse::<Baseline>().unwrap(), b);
        }
        assert!("mtl".parse::<Baseline>().is_err());
    }
}
