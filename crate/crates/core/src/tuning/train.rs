use super::loss::{Objective, Problem};
use super::{
    build_dataset, filter_by_reward, LabelSource, LossKind, PreferenceDataset, Trainable,
    TuneConfig,
};
use crate::env::{EnvVariant, TaskId};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalResult};
use crate::numeric::{Adam, Mlp};
use crate::policy::{score, score_grad, Adapter, FrozenLatentScorer, GoalLatent, PolicyBundle};
use crate::rng::{stream_seed, Namespace, Rng};
use crate::rollout::{collect, Trajectory};

/// Extra differentiable term added to the training loss: receives the
/// adapter and the effective network, returns the value and its gradient
/// w.r.t. the adapter parameters.
pub type Penalty<'a> = dyn Fn(&Adapter, &Mlp) -> Result<(f64, Vec<f64>)> + 'a;

#[derive(Debug, Clone, PartialEq)]
pub struct TuneOutput {
    pub latent: GoalLatent,
    pub adapter: Adapter,
    /// `losses[e]` is the loss after `e` updates; length `epochs + 1`.
    pub losses: Vec<f64>,
}

/// Full-batch Adam on one prepared problem.
///
/// With `Trainable::GoalLatent` only latent group 0 moves (the problem must
/// have a single group) and the network is never touched. Otherwise the
/// latents stay fixed and an adapter of the matching kind is trained. The
/// reference branch is the untouched network under `ref_latents`. Adapter
/// training starts from `init_adapter` when given, else from the identity.
#[allow(clippy::too_many_arguments)]
pub fn tune_problem(
    base: &Mlp,
    problem: &Problem,
    init_latents: &[GoalLatent],
    ref_latents: &[GoalLatent],
    objective: &Objective,
    trainable: Trainable,
    config: &TuneConfig,
    penalty: Option<&Penalty<'_>>,
    init_adapter: Option<&Adapter>,
) -> Result<TuneOutput> {
    if init_latents.len() != problem.n_groups || ref_latents.len() != problem.n_groups {
        return Err(Error::contract(
            "one initial and one reference latent per group",
        ));
    }
    let lr = config.lr_for(trainable);
    if !(lr > 0.0) {
        return Err(Error::contract("lr must be positive"));
    }
    let epochs = config.epochs;
    let mut losses = Vec::with_capacity(epochs + 1);
    if trainable == Trainable::GoalLatent {
        if problem.n_groups != 1 {
            return Err(Error::contract(
                "goal-latent tuning trains exactly one latent",
            ));
        }
        let scorer = FrozenLatentScorer::new(base, problem.batch.clone())?;
        let ref_sums = if objective.needs_reference() {
            Some(scorer.score(ref_latents[0].as_slice())?.sums)
        } else {
            None
        };
        let mut g = init_latents[0].0.clone();
        let mut adam = Adam::new(g.len());
        for epoch in 0..=epochs {
            let scored = scorer.score(&g)?;
            let (loss, coeffs) = objective.evaluate(problem, &scored.sums, ref_sums.as_deref())?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            losses.push(loss);
            if epoch == epochs {
                break;
            }
            let grad = scorer.grad(&scored, &coeffs)?;
            adam.step(&mut g, &grad, lr)
                .map_err(|_| Error::Divergence { epoch })?;
        }
        return Ok(TuneOutput {
            latent: GoalLatent(g),
            adapter: Adapter::none(),
            losses,
        });
    }

    let latents: Vec<&[f64]> = init_latents.iter().map(|g| g.as_slice()).collect();
    let ref_sums = if objective.needs_reference() {
        let refs: Vec<&[f64]> = ref_latents.iter().map(|g| g.as_slice()).collect();
        Some(score(base, &problem.batch, &refs, &problem.group)?.sums)
    } else {
        None
    };
    let mut adapter = match init_adapter {
        Some(a) if a.kind != trainable.adapter_kind() => {
            return Err(Error::contract(
                "initial adapter kind does not match the trainable group",
            ));
        }
        Some(a) => a.clone(),
        None => {
            let mut init_rng = Rng::substream(config.seed, Namespace::Init, 1);
            Adapter::new(trainable.adapter_kind(), base, config.rank, &mut init_rng)
        }
    };
    let mut adam = Adam::new(adapter.params.len());
    for epoch in 0..=epochs {
        let net = adapter.apply(base)?;
        let scored = score(&net, &problem.batch, &latents, &problem.group)?;
        let (mut loss, coeffs) = objective.evaluate(problem, &scored.sums, ref_sums.as_deref())?;
        let extra = match penalty {
            Some(p) => Some(p(&adapter, &net)?),
            None => None,
        };
        if let Some((v, _)) = &extra {
            loss += v;
        }
        if !loss.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        losses.push(loss);
        if epoch == epochs {
            break;
        }
        let (grads, _) = score_grad(
            &net,
            &problem.batch,
            &scored,
            &coeffs,
            true,
            0,
            &problem.group,
        )?;
        let mut grad = adapter.pullback(base, &grads.expect("requested"))?;
        if let Some((_, pg)) = extra {
            for (a, b) in grad.iter_mut().zip(pg) {
                *a += b;
            }
        }
        drop(net);
        adam.step(&mut adapter.params, &grad, lr)
            .map_err(|_| Error::Divergence { epoch })?;
    }
    Ok(TuneOutput {
        latent: init_latents[0].clone(),
        adapter,
        losses,
    })
}

/// Tune from `g0` with `g_ref = g0`.
pub fn tune(
    bundle: &PolicyBundle,
    g0: &GoalLatent,
    dataset: &PreferenceDataset,
    config: &TuneConfig,
) -> Result<TuneOutput> {
    tune_anchored(bundle, g0, g0, dataset, config)
}

/// Tune starting at `g_init` with reference latent `g_ref`.
pub fn tune_anchored(
    bundle: &PolicyBundle,
    g_init: &GoalLatent,
    g_ref: &GoalLatent,
    dataset: &PreferenceDataset,
    config: &TuneConfig,
) -> Result<TuneOutput> {
    config.validate()?;
    let problem = Problem::from_dataset(dataset)?;
    tune_problem(
        &bundle.net,
        &problem,
        std::slice::from_ref(g_init),
        std::slice::from_ref(g_ref),
        &Objective::from_config(config),
        config.trainable,
        config,
        None,
        None,
    )
}

/// Collect under `g`, keep the top and bottom trajectories by reward, and pair them.
#[allow(clippy::too_many_arguments)]
pub fn collect_dataset(
    bundle: &PolicyBundle,
    g: &GoalLatent,
    task: TaskId,
    variant: EnvVariant,
    config: &TuneConfig,
    collect_seed: u64,
    pair_seed: u64,
) -> Result<(Vec<Trajectory>, PreferenceDataset)> {
    let set = collect(
        bundle,
        &Adapter::none(),
        g,
        task,
        variant,
        config.collect_n,
        collect_seed,
        config.workers,
    )?;
    let dataset = dataset_from_rewards(&set.trajectories, config, pair_seed, g.checksum())?;
    Ok((set.trajectories, dataset))
}

/// Reward-ranked dataset from already collected trajectories. Behavior
/// cloning keeps `2·k_pos` positives and no pairs.
pub fn dataset_from_rewards(
    trajs: &[Trajectory],
    config: &TuneConfig,
    pair_seed: u64,
    provenance: String,
) -> Result<PreferenceDataset> {
    if config.loss == LossKind::Bc {
        let partition = filter_by_reward(trajs, 2 * config.k_pos, 0)?;
        return Ok(PreferenceDataset {
            pairs: Vec::new(),
            positives: partition
                .pos
                .iter()
                .map(|&i| std::sync::Arc::new(trajs[i].clone()))
                .collect(),
            label_source: LabelSource::Reward,
            provenance,
        });
    }
    let partition = filter_by_reward(trajs, config.k_pos, config.k_neg)?;
    build_dataset(
        trajs,
        &partition,
        LabelSource::Reward,
        pair_seed,
        provenance,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundResult {
    pub round: usize,
    pub latent: GoalLatent,
    pub losses: Vec<f64>,
    /// Mean total reward of the trajectories collected at the start of the round.
    pub collected_mean_reward: f64,
    pub eval: EvalResult,
}

/// Repeat collect → filter → pair → tune for `config.rounds` rounds.
///
/// Round `r` collects with `g_{r−1}`, initializes at `g_{r−1}`, and uses
/// `g_ref = g_{r−1}` (or `g0` when `anchor_initial` is set). Every round is
/// evaluated on the same episode seeds.
pub fn iterative_rounds(
    bundle: &PolicyBundle,
    g0: &GoalLatent,
    task: TaskId,
    variant: EnvVariant,
    config: &TuneConfig,
) -> Result<Vec<RoundResult>> {
    config.validate()?;
    if config.trainable != Trainable::GoalLatent {
        return Err(Error::contract(
            "iterative rounds tune the goal latent only",
        ));
    }
    let mut g = g0.clone();
    let mut out = Vec::with_capacity(config.rounds);
    for round in 1..=config.rounds {
        let r = round as u64;
        let (trajs, dataset) = collect_dataset(
            bundle,
            &g,
            task,
            variant,
            config,
            stream_seed(config.seed, Namespace::Round, r),
            stream_seed(config.seed, Namespace::Pairing, r),
        )?;
        let g_ref = if config.anchor_initial {
            g0.clone()
        } else {
            g.clone()
        };
        let tuned = tune_anchored(bundle, &g, &g_ref, &dataset, config)?;
        g = tuned.latent;
        let eval = evaluate(
            bundle,
            &Adapter::none(),
            &g,
            task,
            variant,
            config.eval_n,
            config.seed,
            config.workers,
        )?;
        out.push(RoundResult {
            round,
            latent: g.clone(),
            losses: tuned.losses,
            collected_mean_reward: trajs.iter().map(|t| t.total_reward).sum::<f64>()
                / trajs.len() as f64,
            eval,
        });
    }
    Ok(out)
}

/// Encode the first demo, then behavior-clone all demos into the latent.
pub fn elicit_from_demos(
    bundle: &PolicyBundle,
    demos: &[Trajectory],
    config: &TuneConfig,
) -> Result<GoalLatent> {
    let first = demos
        .first()
        .ok_or_else(|| Error::contract("no demonstrations to elicit from"))?;
    if demos.iter().any(|d| d.task != first.task) {
        return Err(Error::contract("demonstrations must share one task"));
    }
    let g0 = bundle.encode_prompt(first)?;
    let problem = Problem::from_trajectories(demos)?;
    let objective = Objective {
        kind: LossKind::Bc,
        ..Objective::from_config(config)
    };
    let out = tune_problem(
        &bundle.net,
        &problem,
        std::slice::from_ref(&g0),
        std::slice::from_ref(&g0),
        &objective,
        Trainable::GoalLatent,
        config,
        None,
        None,
    )?;
    Ok(out.latent)
}
