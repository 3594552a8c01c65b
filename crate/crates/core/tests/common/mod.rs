//! Random fixtures shared by the integration tests.
#![allow(dead_code)]

use std::sync::Arc;

use pgt_core::env::{EnvVariant, TaskId, NUM_ACTIONS, OBS_DIM};
use pgt_core::policy::{GoalLatent, PolicyBundle};
use pgt_core::rng::Rng;
use pgt_core::rollout::{Source, Step, Trajectory};
use pgt_core::tuning::PreferencePair;

pub const D: usize = 6;

/// Small bundle with output weights scaled up so log-probabilities vary
/// noticeably with the latent.
pub fn bundle(rng: &mut Rng) -> PolicyBundle {
    let mut b = PolicyBundle::init(D, &[10, 8], rng).unwrap();
    let n = b.net.layers().len();
    for v in b.net.layers_mut()[n - 1].weight.as_mut_slice() {
        *v *= 30.0;
    }
    for l in b.net.layers_mut() {
        for v in &mut l.bias {
            *v = 0.2 * rng.normal();
        }
    }
    b
}

pub fn trajectory(rng: &mut Rng, len: usize) -> Trajectory {
    let steps = (0..len)
        .map(|_| Step {
            obs: (0..OBS_DIM)
                .map(|_| if rng.next_f64() < 0.2 { 1.0 } else { 0.0 })
                .collect(),
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

pub fn pairs(rng: &mut Rng, n: usize) -> Vec<PreferencePair> {
    (0..n)
        .map(|_| {
            let lw = 1 + rng.below(6);
            let ll = 1 + rng.below(6);
            PreferencePair {
                win: Arc::new(trajectory(rng, lw)),
                lose: Arc::new(trajectory(rng, ll)),
            }
        })
        .collect()
}

pub fn latent(rng: &mut Rng, scale: f64) -> GoalLatent {
    GoalLatent((0..D).map(|_| scale * rng.normal()).collect())
}

/// Central differences of `f` at `x`.
pub fn central_diff(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut y = x.to_vec();
    (0..x.len())
        .map(|i| {
            y[i] = x[i] + h;
            let up = f(&y);
            y[i] = x[i] - h;
            let down = f(&y);
            y[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, zero when both vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}
