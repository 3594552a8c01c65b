use super::{evaluate, EvalResult};
use crate::env::{EnvVariant, TaskId};
use crate::error::{Error, Result};
use crate::policy::{Adapter, GoalLatent, PolicyBundle};
use crate::rng::{stream_seed, Namespace};
use crate::rollout::Trajectory;
use crate::tuning::{collect_dataset, iterative_rounds, tune, Trainable, TuneConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct BetaRow {
    pub beta: f64,
    pub eval: EvalResult,
    pub final_loss: f64,
    /// Checksum of the shared collected data, identical across rows.
    pub data_checksum: String,
}

/// Tune once per β on one shared collection, then evaluate each latent.
pub fn beta_sweep(
    bundle: &PolicyBundle,
    g0: &GoalLatent,
    task: TaskId,
    variant: EnvVariant,
    betas: &[f64],
    config: &TuneConfig,
) -> Result<Vec<BetaRow>> {
    if betas.is_empty() || betas.iter().any(|b| !(*b > 0.0)) {
        return Err(Error::contract(
            "beta sweep needs a non-empty list of positive betas",
        ));
    }
    config.validate()?;
    let (trajs, dataset) = collect_dataset(
        bundle,
        g0,
        task,
        variant,
        config,
        stream_seed(config.seed, Namespace::Round, 1),
        stream_seed(config.seed, Namespace::Pairing, 1),
    )?;
    let mut hasher = sha2::Sha256::default();
    for t in &trajs {
        sha2::Digest::update(&mut hasher, t.checksum());
    }
    let data_checksum = hex::encode(sha2::Digest::finalize(hasher));
    betas
        .iter()
        .map(|&beta| {
            let cfg = TuneConfig {
                beta,
                ..config.clone()
            };
            let out = tune(bundle, g0, &dataset, &cfg)?;
            let eval = evaluate(
                bundle,
                &out.adapter,
                &out.latent,
                task,
                variant,
                cfg.eval_n,
                cfg.seed,
                cfg.workers,
            )?;
            Ok(BetaRow {
                beta,
                eval,
                final_loss: *out.losses.last().expect("epochs + 1 entries"),
                data_checksum: data_checksum.clone(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptStudy {
    /// `series[p][r]`: prompt `p` after `r` rounds (`r = 0` is the raw prompt).
    pub series: Vec<Vec<EvalResult>>,
    /// Index of the best raw prompt.
    pub best_raw: usize,
}

impl PromptStudy {
    pub fn best_raw_result(&self) -> &EvalResult {
        &self.series[self.best_raw][0]
    }
}

/// Run the iterative procedure from each prompt's encoded latent.
pub fn prompt_study(
    bundle: &PolicyBundle,
    prompts: &[Trajectory],
    task: TaskId,
    variant: EnvVariant,
    config: &TuneConfig,
) -> Result<PromptStudy> {
    if prompts.len() < 2 {
        return Err(Error::contract("a prompt study needs at least two prompts"));
    }
    if config.trainable != Trainable::GoalLatent {
        return Err(Error::contract("a prompt study tunes the goal latent"));
    }
    let mut series = Vec::with_capacity(prompts.len());
    for prompt in prompts {
        let g0 = bundle.encode_prompt(prompt)?;
        let raw = evaluate(
            bundle,
            &Adapter::none(),
            &g0,
            task,
            variant,
            config.eval_n,
            config.seed,
            config.workers,
        )?;
        let mut points = vec![raw];
        points.extend(
            iterative_rounds(bundle, &g0, task, variant, config)?
                .into_iter()
                .map(|r| r.eval),
        );
        series.push(points);
    }
    let best_raw = (0..series.len())
        .max_by(|&a, &b| {
            series[a][0]
                .value
                .total_cmp(&series[b][0].value)
                .then(b.cmp(&a))
        })
        .expect("at least two prompts");
    Ok(PromptStudy { series, best_raw })
}
