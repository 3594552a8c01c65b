//! The goal-conditioned policy: prompt encoder, policy network, adapters,
//! pretraining, and the bundle file format.

mod adapter;
mod io;
mod pretrain;
mod scoring;

pub use adapter::{Adapter, AdapterKind};
pub use io::{
    adapter_to_string, bundle_bytes, bundle_from_bytes, load_adapter, load_bundle,
    load_bundle_expecting, parse_adapter, save_adapter, save_bundle, BUNDLE_MAGIC, BUNDLE_VERSION,
};
pub use pretrain::{demo_trajectory, pretrain, PretrainConfig, PretrainReport};
pub use scoring::{score, score_grad, FrozenLatentScorer, Scored, StepBatch};

use sha2::{Digest, Sha256};

use crate::env::{NUM_ACTIONS, OBS_DIM};
use crate::error::{ensure_dim, Error, Result};
use crate::numeric::{dot, log_softmax, softmax_into, Mat, Mlp};
use crate::rng::Rng;
use crate::rollout::Trajectory;

/// Input width of the prompt encoder: observation ⊕ one-hot action.
pub const PROMPT_FEATURES: usize = OBS_DIM + NUM_ACTIONS;
pub const DEFAULT_LATENT_DIM: usize = 32;
pub const DEFAULT_HIDDEN: [usize; 2] = [64, 64];

/// The vector that conditions the frozen policy on a goal.
#[derive(Debug, Clone, PartialEq)]
pub struct GoalLatent(pub Vec<f64>);

impl GoalLatent {
    pub fn zeros(dim: usize) -> Self {
        GoalLatent(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn distance(&self, other: &GoalLatent) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for v in &self.0 {
            h.update(v.to_bits().to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// Linear mean-pool encoder from demonstration steps to a goal latent.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptEncoder {
    /// `D × PROMPT_FEATURES`
    pub embed: Mat,
}

impl PromptEncoder {
    pub fn init(latent_dim: usize, rng: &mut Rng) -> Self {
        let scale = 1.0 / (PROMPT_FEATURES as f64).sqrt();
        PromptEncoder {
            embed: Mat::from_fn(latent_dim, PROMPT_FEATURES, |_, _| rng.normal() * scale),
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.embed.rows()
    }
}

/// Mean over the demo's steps of `obs ⊕ one-hot(action)`.
pub fn prompt_features(demo: &Trajectory) -> Result<Vec<f64>> {
    if demo.steps.is_empty() {
        return Err(Error::contract("cannot encode an empty demonstration"));
    }
    let mut mean = vec![0.0; PROMPT_FEATURES];
    for step in &demo.steps {
        ensure_dim("demo observation", OBS_DIM, step.obs.len())?;
        if step.action >= NUM_ACTIONS {
            return Err(Error::contract(format!(
                "demo action {} out of range",
                step.action
            )));
        }
        for (m, o) in mean.iter_mut().zip(&step.obs) {
            *m += o;
        }
        mean[OBS_DIM + step.action] += 1.0;
    }
    let n = demo.steps.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    Ok(mean)
}

/// Goal latent of a demonstration: `embed · mean_t(obs_t ⊕ onehot(a_t))`.
pub fn encode_prompt(encoder: &PromptEncoder, demo: &Trajectory) -> Result<GoalLatent> {
    let features = prompt_features(demo)?;
    Ok(GoalLatent(encoder.embed.matvec(&features)?))
}

/// Hex SHA-256 of an adapter's kind, rank and parameters.
pub fn adapter_checksum(adapter: &Adapter) -> String {
    let mut h = Sha256::new();
    h.update(adapter.kind.as_str().as_bytes());
    h.update((adapter.rank as u64).to_le_bytes());
    for v in &adapter.params {
        h.update(v.to_bits().to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// Which parameter groups are frozen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrozenFlags {
    pub encoder: bool,
    pub net: bool,
}

/// Pretrained prompt encoder plus policy network.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyBundle {
    pub encoder: PromptEncoder,
    /// `(OBS_DIM + D) → hidden → hidden → NUM_ACTIONS`
    pub net: Mlp,
    pub frozen: FrozenFlags,
}

impl PolicyBundle {
    pub fn new(encoder: PromptEncoder, net: Mlp) -> Result<Self> {
        ensure_dim(
            "policy net input",
            OBS_DIM + encoder.latent_dim(),
            net.input_dim(),
        )?;
        ensure_dim("policy net output", NUM_ACTIONS, net.output_dim())?;
        Ok(PolicyBundle {
            encoder,
            net,
            frozen: FrozenFlags {
                encoder: true,
                net: true,
            },
        })
    }

    /// Freshly initialized bundle with a near-uniform output layer.
    pub fn init(latent_dim: usize, hidden: &[usize], rng: &mut Rng) -> Result<Self> {
        let encoder = PromptEncoder::init(latent_dim, rng);
        let mut dims = vec![OBS_DIM + latent_dim];
        dims.extend_from_slice(hidden);
        dims.push(NUM_ACTIONS);
        let net = Mlp::init(&dims, 0.01, rng)?;
        PolicyBundle::new(encoder, net)
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.latent_dim()
    }

    pub fn checksum(&self) -> String {
        hex::encode(Sha256::digest(bundle_bytes(self)))
    }

    pub fn encode_prompt(&self, demo: &Trajectory) -> Result<GoalLatent> {
        encode_prompt(&self.encoder, demo)
    }
}

/// Log-probability of action `a` and its gradients w.r.t. the latent and the adapter's trainable parameters.
#[derive(Debug, Clone)]
pub struct StepLogprob {
    pub logprob: f64,
    pub grad_latent: Vec<f64>,
    pub grad_params: Vec<f64>,
}

/// `log softmax(net(obs ⊕ g))[a]` with exact gradients.
pub fn policy_logprob(
    bundle: &PolicyBundle,
    adapter: &Adapter,
    obs: &[f64],
    g: &GoalLatent,
    a: usize,
) -> Result<StepLogprob> {
    ensure_dim("observation", OBS_DIM, obs.len())?;
    ensure_dim("goal latent", bundle.latent_dim(), g.dim())?;
    if a >= NUM_ACTIONS {
        return Err(Error::contract(format!("action {a} out of range")));
    }
    let net = adapter.apply(&bundle.net)?;
    let mut input = obs.to_vec();
    input.extend_from_slice(&g.0);
    let (logits, cache) = net.forward(&input)?;
    let logprob = log_softmax(&logits, a)?;
    let mut dlogits = vec![0.0; NUM_ACTIONS];
    softmax_into(&logits, &mut dlogits);
    dlogits.iter_mut().for_each(|p| *p = -*p);
    dlogits[a] += 1.0;
    let (grads, dinput) = net.backward(&cache, &dlogits)?;
    Ok(StepLogprob {
        logprob,
        grad_latent: dinput[OBS_DIM..].to_vec(),
        grad_params: adapter.pullback(&bundle.net, &grads)?,
    })
}

/// Samples actions from `softmax(net(obs ⊕ g))` at temperature 1.
#[derive(Debug, Clone)]
pub struct PolicyActor {
    net: Mlp,
    latent: Vec<f64>,
    probs: Vec<f64>,
}

impl PolicyActor {
    pub fn new(bundle: &PolicyBundle, adapter: &Adapter, g: &GoalLatent) -> Result<Self> {
        ensure_dim("goal latent", bundle.latent_dim(), g.dim())?;
        Ok(PolicyActor {
            net: adapter.apply(&bundle.net)?.into_owned(),
            latent: g.0.clone(),
            probs: vec![0.0; NUM_ACTIONS],
        })
    }

    /// Action logits for one observation (direct matrix-vector path).
    pub fn logits(&self, obs: &[f64]) -> Vec<f64> {
        let mut cur: Vec<f64> = obs.iter().chain(&self.latent).copied().collect();
        let depth = self.net.layers().len();
        for (k, layer) in self.net.layers().iter().enumerate() {
            cur = (0..layer.output_dim())
                .map(|o| {
                    let z = dot(layer.weight.row(o), &cur) + layer.bias[o];
                    if k + 1 < depth {
                        z.tanh()
                    } else {
                        z
                    }
                })
                .collect();
        }
        cur
    }

    pub fn sample(&mut self, obs: &[f64], rng: &mut Rng) -> usize {
        let logits = self.logits(obs);
        softmax_into(&logits, &mut self.probs);
        let u = rng.next_f64();
        let mut acc = 0.0;
        for (i, p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        NUM_ACTIONS - 1
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::env::{EnvVariant, TaskId};
    use crate::rollout::{Source, Step};

    pub(crate) fn toy_trajectory(rng: &mut Rng, len: usize) -> Trajectory {
        let steps = (0..len)
            .map(|_| Step {
                obs: (0..OBS_DIM).map(|_| rng.next_f64()).collect(),
                action: rng.below(NUM_ACTIONS),
                reward: 0.0,
            })
            .collect();
        Trajectory {
            task: TaskId::Collect,
            variant: EnvVariant::in_distribution(),
            seed: rng.next_u64(),
            steps,
            total_reward: 0.0,
            success: false,
            source: Source::PolicyRollout,
            final_obs: vec![0.0; OBS_DIM],
        }
    }

    fn small_bundle(rng: &mut Rng) -> PolicyBundle {
        let mut b = PolicyBundle::init(6, &[8, 8], rng).unwrap();
        // larger output weights so gradients are not vanishingly small
        let n = b.net.layers().len();
        for v in b.net.layers_mut()[n - 1].weight.as_mut_slice() {
            *v *= 100.0;
        }
        b
    }

    #[test]
    fn repeated_step_demo_encodes_single_step() {
        let mut rng = Rng::new(1);
        let enc = PromptEncoder::init(4, &mut rng);
        let mut demo = toy_trajectory(&mut rng, 1);
        let single = encode_prompt(&enc, &demo).unwrap();
        let step = demo.steps[0].clone();
        demo.steps = vec![step; 7];
        let repeated = encode_prompt(&enc, &demo).unwrap();
        for (a, b) in single.0.iter().zip(&repeated.0) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn encoding_ignores_step_order() {
        let mut rng = Rng::new(2);
        let enc = PromptEncoder::init(4, &mut rng);
        let demo = toy_trajectory(&mut rng, 9);
        let mut shuffled = demo.clone();
        shuffled.steps.reverse();
        let a = encode_prompt(&enc, &demo).unwrap();
        let b = encode_prompt(&enc, &shuffled).unwrap();
        for (x, y) in a.0.iter().zip(&b.0) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn encoding_is_length_weighted_under_concatenation() {
        let mut rng = Rng::new(3);
        let enc = PromptEncoder::init(5, &mut rng);
        let d1 = toy_trajectory(&mut rng, 4);
        let d2 = toy_trajectory(&mut rng, 11);
        let g1 = encode_prompt(&enc, &d1).unwrap();
        let g2 = encode_prompt(&enc, &d2).unwrap();
        let g12 = encode_prompt(&enc, &d1.concat(&d2)).unwrap();
        for i in 0..5 {
            let expect = (4.0 * g1.0[i] + 11.0 * g2.0[i]) / 15.0;
            assert!((g12.0[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_demo_is_rejected() {
        let mut rng = Rng::new(4);
        let enc = PromptEncoder::init(5, &mut rng);
        let demo = toy_trajectory(&mut rng, 0);
        assert!(encode_prompt(&enc, &demo).is_err());
    }

    #[test]
    fn logprobs_normalize() {
        let mut rng = Rng::new(5);
        let b = small_bundle(&mut rng);
        let obs: Vec<f64> = (0..OBS_DIM).map(|_| rng.next_f64()).collect();
        let g = GoalLatent((0..6).map(|_| rng.normal()).collect());
        let total: f64 = (0..NUM_ACTIONS)
            .map(|a| {
                policy_logprob(&b, &Adapter::none(), &obs, &g, a)
                    .unwrap()
                    .logprob
                    .exp()
            })
            .sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn latent_gradient_matches_finite_differences() {
        let mut rng = Rng::new(6);
        let h = 1e-5;
        for _ in 0..20 {
            let b = small_bundle(&mut rng);
            let obs: Vec<f64> = (0..OBS_DIM).map(|_| rng.next_f64()).collect();
            let g = GoalLatent((0..6).map(|_| rng.normal()).collect());
            let a = rng.below(NUM_ACTIONS);
            let out = policy_logprob(&b, &Adapter::none(), &obs, &g, a).unwrap();
            for i in 0..6 {
                let mut gp = g.clone();
                gp.0[i] += h;
                let mut gm = g.clone();
                gm.0[i] -= h;
                let up = policy_logprob(&b, &Adapter::none(), &obs, &gp, a)
                    .unwrap()
                    .logprob;
                let down = policy_logprob(&b, &Adapter::none(), &obs, &gm, a)
                    .unwrap()
                    .logprob;
                let fd = (up - down) / (2.0 * h);
                let an = out.grad_latent[i];
                let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-6);
                assert!(rel < 1e-6, "{an} vs {fd}");
            }
        }
    }

    #[test]
    fn gradient_groups_follow_adapter_kind() {
        let mut rng = Rng::new(7);
        let b = small_bundle(&mut rng);
        let obs: Vec<f64> = (0..OBS_DIM).map(|_| rng.next_f64()).collect();
        let g = GoalLatent(vec![0.1; 6]);
        let none = policy_logprob(&b, &Adapter::none(), &obs, &g, 0).unwrap();
        assert!(none.grad_params.is_empty());
        let bias = Adapter::new(AdapterKind::BiasOnly, &b.net, 4, &mut rng);
        let out = policy_logprob(&b, &bias, &obs, &g, 0).unwrap();
        assert_eq!(out.grad_params.len(), b.net.bias_dims());
    }

    #[test]
    fn actor_logits_match_forward() {
        let mut rng = Rng::new(8);
        let b = small_bundle(&mut rng);
        let obs: Vec<f64> = (0..OBS_DIM).map(|_| rng.next_f64()).collect();
        let g = GoalLatent((0..6).map(|_| rng.normal()).collect());
        let actor = PolicyActor::new(&b, &Adapter::none(), &g).unwrap();
        let mut input = obs.clone();
        input.extend_from_slice(&g.0);
        let (expect, _) = b.net.forward(&input).unwrap();
        for _ in 0..2 {
            for (x, y) in actor.logits(&obs).iter().zip(&expect) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pure_function_with_fixed_latent() {
        let mut rng = Rng::new(9);
        let b = small_bundle(&mut rng);
        let obs: Vec<f64> = (0..OBS_DIM).map(|_| rng.next_f64()).collect();
        let g = GoalLatent(vec![0.3; 6]);
        let x = policy_logprob(&b, &Adapter::none(), &obs, &g, 2)
            .unwrap()
            .logprob;
        let y = policy_logprob(&b, &Adapter::none(), &obs, &g, 2)
            .unwrap()
            .logprob;
        assert_eq!(x.to_bits(), y.to_bits());
    }
}
