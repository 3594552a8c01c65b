use super::scoring::{score, score_grad, StepBatch};
use super::{prompt_features, PolicyBundle, DEFAULT_HIDDEN, DEFAULT_LATENT_DIM};
use crate::env::{env_reset, scripted_expert, EnvVariant, TaskId};
use crate::error::{Error, Result};
use crate::numeric::{Adam, Mat};
use crate::rng::{stream_seed, Namespace, Rng};
use crate::rollout::{Source, Step, Trajectory};

const LATENT_NOISE: f64 = 1.0;

/// Multi-task behavior-cloning recipe.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainConfig {
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    pub demos_per_task: usize,
    /// Expert noise is drawn uniformly from this range per demo.
    pub noise_min: f64,
    pub noise_max: f64,
    pub epochs: usize,
    /// Episodes per minibatch.
    pub batch_episodes: usize,
    pub lr: f64,
    /// Std of Gaussian noise added to each demo latent during training, so
    /// the policy responds smoothly to latents off the encoder's image.
    pub latent_noise: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            latent_dim: DEFAULT_LATENT_DIM,
            hidden: DEFAULT_HIDDEN.to_vec(),
            demos_per_task: 100,
            noise_min: 0.1,
            noise_max: 0.3,
            epochs: 40,
            batch_episodes: 25,
            lr: 3e-3,
            latent_noise: LATENT_NOISE,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainReport {
    /// Entry 0 is the full-data loss before any update; entry `e ≥ 1` is the
    /// mean minibatch loss during epoch `e`. Losses are per-step mean NLL.
    pub losses: Vec<f64>,
    pub demos: usize,
    pub steps: usize,
}

/// One scripted-expert episode on `(task, variant, seed)`.
pub fn demo_trajectory(
    task: TaskId,
    variant: EnvVariant,
    noise: f64,
    seed: u64,
) -> Result<Trajectory> {
    let (mut world, mut obs) = env_reset(task, variant, seed);
    let mut expert = scripted_expert(task, noise, stream_seed(seed, Namespace::Expert, 0))?;
    let mut steps = Vec::new();
    while !world.is_done() {
        let a = expert.act(&world);
        let (next, r, _) = world.step(a)?;
        steps.push(Step {
            obs: std::mem::replace(&mut obs, next).features,
            action: a,
            reward: r,
        });
    }
    Ok(Trajectory {
        task,
        variant,
        seed,
        steps,
        total_reward: world.total_reward,
        success: world.success,
        source: Source::ScriptedExpert,
        final_obs: obs.features,
    })
}

/// Jointly fit encoder and network so each demo's actions are likely under
/// the latent of that same demo.
pub fn pretrain(
    tasks: &[TaskId],
    config: &PretrainConfig,
) -> Result<(PolicyBundle, PretrainReport)> {
    if tasks.is_empty() || config.demos_per_task == 0 {
        return Err(Error::contract(
            "pretraining needs at least one task and one demo",
        ));
    }
    if !(0.0 <= config.noise_min && config.noise_min <= config.noise_max && config.noise_max <= 1.0)
    {
        return Err(Error::contract(
            "expert noise range must satisfy 0 ≤ min ≤ max ≤ 1",
        ));
    }
    if !(config.latent_noise >= 0.0 && config.latent_noise.is_finite()) {
        return Err(Error::contract(
            "latent noise must be a non-negative finite std",
        ));
    }
    if config.batch_episodes == 0 || !(config.lr > 0.0) {
        return Err(Error::contract(
            "batch size and learning rate must be positive",
        ));
    }
    let mut init_rng = Rng::substream(config.seed, Namespace::Init, 0);
    let mut bundle = PolicyBundle::init(config.latent_dim, &config.hidden, &mut init_rng)?;

    let mut demos = Vec::with_capacity(tasks.len() * config.demos_per_task);
    for (ti, &task) in tasks.iter().enumerate() {
        for k in 0..config.demos_per_task {
            let idx = (ti * config.demos_per_task + k) as u64;
            let mut r = Rng::substream(config.seed, Namespace::Pretrain, idx);
            let noise = config.noise_min + (config.noise_max - config.noise_min) * r.next_f64();
            let seed = stream_seed(config.seed, Namespace::Pretrain, idx ^ (1 << 40));
            demos.push(demo_trajectory(
                task,
                EnvVariant::in_distribution(),
                noise,
                seed,
            )?);
        }
    }
    let features = demos
        .iter()
        .map(prompt_features)
        .collect::<Result<Vec<_>>>()?;
    let total_steps: usize = demos.iter().map(Trajectory::len).sum();

    let d = config.latent_dim;
    let enc_len = bundle.encoder.embed.len();
    let mut flat = bundle.encoder.embed.as_slice().to_vec();
    flat.extend(bundle.net.to_flat());
    let mut adam = Adam::new(flat.len());

    let batch_loss = |bundle: &PolicyBundle,
                      idx: &[usize],
                      jitter: Option<&mut Rng>|
     -> Result<(f64, Option<Vec<f64>>)> {
        let want_grad = jitter.is_some();
        let batch = StepBatch::new(idx.iter().map(|&i| &demos[i]))?;
        let mut latents: Vec<Vec<f64>> = idx
            .iter()
            .map(|&i| bundle.encoder.embed.matvec(&features[i]))
            .collect::<Result<_>>()?;
        if let Some(rng) = jitter {
            for v in latents.iter_mut().flatten() {
                *v += config.latent_noise * rng.normal();
            }
        }
        let refs: Vec<&[f64]> = latents.iter().map(Vec::as_slice).collect();
        let assign: Vec<usize> = (0..idx.len()).collect();
        let scored = score(&bundle.net, &batch, &refs, &assign)?;
        let n = batch.num_steps().max(1) as f64;
        let loss = -scored.sums.iter().sum::<f64>() / n;
        if !want_grad {
            return Ok((loss, None));
        }
        let coeffs = vec![-1.0 / n; idx.len()];
        let (net_grads, latent_grads) = score_grad(
            &bundle.net,
            &batch,
            &scored,
            &coeffs,
            true,
            idx.len(),
            &assign,
        )?;
        // latent_i = E · f_i  ⇒  dE += dlatent_i ⊗ f_i
        let mut d_embed = Mat::zeros(d, features[0].len());
        for (&i, gl) in idx.iter().zip(&latent_grads) {
            for (r, gr) in gl.iter().enumerate() {
                for (v, f) in d_embed.row_mut(r).iter_mut().zip(&features[i]) {
                    *v += gr * f;
                }
            }
        }
        let mut grads = d_embed.into_vec();
        grads.extend(net_grads.expect("requested").to_flat());
        Ok((loss, Some(grads)))
    };

    let all: Vec<usize> = (0..demos.len()).collect();
    let initial = all
        .chunks(config.batch_episodes)
        .map(|c| {
            let steps: usize = c.iter().map(|&i| demos[i].len()).sum();
            batch_loss(&bundle, c, None).map(|(l, _)| l * steps as f64)
        })
        .sum::<Result<f64>>()?
        / total_steps.max(1) as f64;
    if !initial.is_finite() {
        return Err(Error::Divergence { epoch: 0 });
    }
    let mut losses = vec![initial];

    let mut order = all;
    let mut shuffle = Rng::substream(config.seed, Namespace::Pretrain, u64::MAX);
    let mut jitter = Rng::substream(config.seed, Namespace::Pretrain, u64::MAX - 1);
    for epoch in 1..=config.epochs {
        shuffle.shuffle(&mut order);
        let mut weighted = 0.0;
        for chunk in order.chunks(config.batch_episodes) {
            let (loss, grads) = batch_loss(&bundle, chunk, Some(&mut jitter))?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            let steps: usize = chunk.iter().map(|&i| demos[i].len()).sum();
            weighted += loss * steps as f64;
            adam.step(&mut flat, &grads.expect("requested"), config.lr)
                .map_err(|_| Error::Divergence { epoch })?;
            bundle
                .encoder
                .embed
                .as_mut_slice()
                .copy_from_slice(&flat[..enc_len]);
            bundle.net.copy_from_flat(&flat[enc_len..])?;
        }
        losses.push(weighted / total_steps.max(1) as f64);
    }
    Ok((
        bundle,
        PretrainReport {
            losses,
            demos: demos.len(),
            steps: total_steps,
        },
    ))
}
