//! Batched trajectory log-likelihoods.
//!
//! Every training loss in the crate is a function of per-trajectory sums
//! `L_j = Σ_t log π(a_t | s_t, g_j)`. Scoring evaluates all sums in one
//! stacked forward pass; differentiating a loss then only needs the scalar
//! coefficients `c_j = ∂loss/∂L_j`, because
//! `∂ log softmax(z)[a] / ∂z = onehot(a) − softmax(z)`.

use crate::env::{NUM_ACTIONS, OBS_DIM};
use crate::error::{ensure_dim, Error, Result};
use crate::numeric::{column_sums_into, gemm, softmax_into, BatchCache, Mat, Mlp};
use crate::rollout::Trajectory;

/// Steps of several trajectories stacked row-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct StepBatch {
    obs: Mat,
    actions: Vec<usize>,
    /// `offsets[j]..offsets[j+1]` are the rows of trajectory `j`.
    offsets: Vec<usize>,
}

impl StepBatch {
    pub fn new<'a>(trajs: impl IntoIterator<Item = &'a Trajectory>) -> Result<Self> {
        let mut data = Vec::new();
        let mut actions = Vec::new();
        let mut offsets = vec![0];
        for t in trajs {
            for s in &t.steps {
                ensure_dim("step observation", OBS_DIM, s.obs.len())?;
                if s.action >= NUM_ACTIONS {
                    return Err(Error::contract(format!("action {} out of range", s.action)));
                }
                data.extend_from_slice(&s.obs);
                actions.push(s.action);
            }
            offsets.push(actions.len());
        }
        Ok(StepBatch {
            obs: Mat::from_vec(actions.len(), OBS_DIM, data)?,
            actions,
            offsets,
        })
    }

    pub fn num_trajectories(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn num_steps(&self) -> usize {
        self.actions.len()
    }

    pub fn len_of(&self, j: usize) -> usize {
        self.offsets[j + 1] - self.offsets[j]
    }

    pub fn obs(&self) -> &Mat {
        &self.obs
    }

    pub fn actions(&self) -> &[usize] {
        &self.actions
    }

    /// Trajectory index of every row.
    fn owners(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.num_trajectories()).flat_map(move |j| std::iter::repeat_n(j, self.len_of(j)))
    }

    /// Network input `obs ⊕ latents[assign[j]]` for every row.
    pub fn inputs(&self, latents: &[&[f64]], assign: &[usize]) -> Result<Mat> {
        ensure_dim("latent assignment", self.num_trajectories(), assign.len())?;
        let d = latents.first().map_or(0, |g| g.len());
        for g in latents {
            ensure_dim("goal latent", d, g.len())?;
        }
        let width = OBS_DIM + d;
        let mut x = Mat::zeros(self.num_steps(), width);
        for (r, j) in self.owners().enumerate() {
            let g = latents.get(assign[j]).ok_or_else(|| {
                Error::contract(format!("latent index {} out of range", assign[j]))
            })?;
            let row = x.row_mut(r);
            row[..OBS_DIM].copy_from_slice(self.obs.row(r));
            row[OBS_DIM..].copy_from_slice(g);
        }
        Ok(x)
    }
}

/// Per-trajectory log-likelihood sums and the state needed to differentiate them.
#[derive(Debug, Clone)]
pub struct Scored {
    pub sums: Vec<f64>,
    probs: Mat,
    cache: BatchCache,
}

impl Scored {
    fn build(batch: &StepBatch, cache: BatchCache) -> Scored {
        let n = batch.num_steps();
        let mut probs = Mat::zeros(n, NUM_ACTIONS);
        let mut sums = vec![0.0; batch.num_trajectories()];
        for (r, j) in batch.owners().enumerate() {
            let logits = cache.logits.row(r);
            let lse = softmax_into(logits, probs.row_mut(r));
            sums[j] += logits[batch.actions[r]] - lse;
        }
        Scored { sums, probs, cache }
    }

    /// Per-step log-probabilities of the taken actions.
    pub fn step_logprobs(&self, batch: &StepBatch) -> Vec<f64> {
        (0..batch.num_steps())
            .map(|r| self.probs.get(r, batch.actions[r]).ln())
            .collect()
    }

    /// `dlogits_t = c_{j(t)} · (onehot(a_t) − softmax_t)`.
    fn dlogits(&self, batch: &StepBatch, coeffs: &[f64]) -> Result<Mat> {
        ensure_dim(
            "trajectory coefficients",
            batch.num_trajectories(),
            coeffs.len(),
        )?;
        let mut d = Mat::zeros(batch.num_steps(), NUM_ACTIONS);
        for (r, j) in batch.owners().enumerate() {
            let c = coeffs[j];
            let row = d.row_mut(r);
            for (v, p) in row.iter_mut().zip(self.probs.row(r)) {
                *v = -c * p;
            }
            row[batch.actions[r]] += c;
        }
        Ok(d)
    }
}

/// Score every trajectory of `batch`, trajectory `j` conditioned on `latents[assign[j]]`.
pub fn score(net: &Mlp, batch: &StepBatch, latents: &[&[f64]], assign: &[usize]) -> Result<Scored> {
    let x = batch.inputs(latents, assign)?;
    let cache = net.forward_batch(&x)?;
    Ok(Scored::build(batch, cache))
}

/// Gradient of `Σ_j c_j L_j` w.r.t. the network (if requested) and each latent.
pub fn score_grad(
    net: &Mlp,
    batch: &StepBatch,
    scored: &Scored,
    coeffs: &[f64],
    want_params: bool,
    n_latents: usize,
    assign: &[usize],
) -> Result<(Option<Mlp>, Vec<Vec<f64>>)> {
    let d = scored.dlogits(batch, coeffs)?;
    let want_input = n_latents > 0;
    let (grads, dinput) = net.backward_batch(&scored.cache, &d, want_params, want_input)?;
    let mut latent_grads = vec![vec![0.0; net.input_dim() - OBS_DIM]; n_latents];
    if let Some(dx) = dinput {
        for (r, j) in batch.owners().enumerate() {
            let g = &mut latent_grads[assign[j]];
            for (acc, v) in g.iter_mut().zip(&dx.row(r)[OBS_DIM..]) {
                *acc += v;
            }
        }
    }
    Ok((grads, latent_grads))
}

/// Scorer for a frozen network where only one shared goal latent varies.
///
/// The observation half of the first layer, `X_obs · W1_obsᵀ + b1`, is
/// computed once; each evaluation only adds `W1_g · g` to every row.
#[derive(Debug, Clone)]
pub struct FrozenLatentScorer {
    pre: Mat,
    w_latent: Mat,
    rest: Mlp,
    batch: StepBatch,
}

impl FrozenLatentScorer {
    pub fn new(net: &Mlp, batch: StepBatch) -> Result<Self> {
        let layers = net.layers();
        if layers.len() < 2 {
            return Err(Error::contract(
                "fast latent scoring needs at least one hidden layer",
            ));
        }
        let first = &layers[0];
        let d = first
            .input_dim()
            .checked_sub(OBS_DIM)
            .ok_or_else(|| Error::contract("network input narrower than the observation"))?;
        let h = first.output_dim();
        let w_obs = Mat::from_fn(h, OBS_DIM, |r, c| first.weight.get(r, c));
        let w_latent = Mat::from_fn(h, d, |r, c| first.weight.get(r, OBS_DIM + c));
        let mut pre = gemm(batch.obs(), false, &w_obs, true)?;
        crate::numeric::add_bias_rows(&mut pre, &first.bias);
        Ok(FrozenLatentScorer {
            pre,
            w_latent,
            rest: Mlp::new(layers[1..].to_vec())?,
            batch,
        })
    }

    pub fn batch(&self) -> &StepBatch {
        &self.batch
    }

    pub fn latent_dim(&self) -> usize {
        self.w_latent.cols()
    }

    pub fn score(&self, g: &[f64]) -> Result<Scored> {
        let u = self.w_latent.matvec(g)?;
        let mut h1 = self.pre.clone();
        for r in 0..h1.rows() {
            for (v, ui) in h1.row_mut(r).iter_mut().zip(&u) {
                *v = (*v + ui).tanh();
            }
        }
        let cache = self.rest.forward_batch(&h1)?;
        Ok(Scored::build(&self.batch, cache))
    }

    /// Gradient of `Σ_j c_j L_j` w.r.t. the shared latent.
    pub fn grad(&self, scored: &Scored, coeffs: &[f64]) -> Result<Vec<f64>> {
        let d = scored.dlogits(&self.batch, coeffs)?;
        let (_, dh1) = self.rest.backward_batch(&scored.cache, &d, false, true)?;
        let mut dz1 = dh1.expect("requested");
        let h1 = scored.cache.layer_input(0);
        for (dz, h) in dz1.as_mut_slice().iter_mut().zip(h1.as_slice()) {
            *dz *= 1.0 - h * h;
        }
        let mut s = vec![0.0; dz1.cols()];
        column_sums_into(&dz1, &mut s);
        self.w_latent.matvec_t(&s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::tests::toy_trajectory;
    use crate::policy::{policy_logprob, Adapter, GoalLatent, PolicyBundle};
    use crate::rng::Rng;

    fn setup(seed: u64) -> (PolicyBundle, Vec<Trajectory>, Vec<f64>) {
        let mut rng = Rng::new(seed);
        let mut b = PolicyBundle::init(6, &[8, 7], &mut rng).unwrap();
        let n = b.net.layers().len();
        for v in b.net.layers_mut()[n - 1].weight.as_mut_slice() {
            *v *= 50.0;
        }
        let trajs = (0..5)
            .map(|k| toy_trajectory(&mut rng, 1 + 3 * k))
            .collect();
        let g = (0..6).map(|_| rng.normal()).collect();
        (b, trajs, g)
    }

    #[test]
    fn sums_match_single_step_path() {
        let (b, trajs, g) = setup(1);
        let batch = StepBatch::new(&trajs).unwrap();
        let assign = vec![0; trajs.len()];
        let scored = score(&b.net, &batch, &[&g], &assign).unwrap();
        for (t, s) in trajs.iter().zip(&scored.sums) {
            let expect: f64 = t
                .steps
                .iter()
                .map(|st| {
                    policy_logprob(
                        &b,
                        &Adapter::none(),
                        &st.obs,
                        &GoalLatent(g.clone()),
                        st.action,
                    )
                    .unwrap()
                    .logprob
                })
                .sum();
            assert!((s - expect).abs() < 1e-10, "{s} vs {expect}");
        }
    }

    #[test]
    fn fast_path_matches_general_path() {
        for seed in 0..5 {
            let (b, trajs, g) = setup(10 + seed);
            let batch = StepBatch::new(&trajs).unwrap();
            let assign = vec![0; trajs.len()];
            let coeffs: Vec<f64> = (0..trajs.len()).map(|j| j as f64 - 1.7).collect();
            let general = score(&b.net, &batch, &[&g], &assign).unwrap();
            let (_, gl) = score_grad(&b.net, &batch, &general, &coeffs, false, 1, &assign).unwrap();
            let fast = FrozenLatentScorer::new(&b.net, batch).unwrap();
            let fs = fast.score(&g).unwrap();
            let fg = fast.grad(&fs, &coeffs).unwrap();
            for (x, y) in general.sums.iter().zip(&fs.sums) {
                assert!((x - y).abs() < 1e-10);
            }
            for (x, y) in gl[0].iter().zip(&fg) {
                assert!((x - y).abs() < 1e-9 * (1.0 + x.abs()), "{x} vs {y}");
            }
        }
    }

    #[test]
    fn latent_gradient_matches_finite_differences() {
        let (b, trajs, g) = setup(3);
        let batch = StepBatch::new(&trajs).unwrap();
        let fast = FrozenLatentScorer::new(&b.net, batch).unwrap();
        let coeffs = vec![1.0, -0.5, 0.25, 2.0, -1.0];
        let f = |g: &[f64]| -> f64 {
            let s = fast.score(g).unwrap();
            s.sums.iter().zip(&coeffs).map(|(a, c)| a * c).sum()
        };
        let analytic = fast.grad(&fast.score(&g).unwrap(), &coeffs).unwrap();
        for i in 0..g.len() {
            let h = 1e-5;
            let mut up = g.clone();
            up[i] += h;
            let mut down = g.clone();
            down[i] -= h;
            let fd = (f(&up) - f(&down)) / (2.0 * h);
            let rel = (analytic[i] - fd).abs() / analytic[i].abs().max(fd.abs()).max(1e-6);
            assert!(rel < 1e-6, "{} vs {fd}", analytic[i]);
        }
    }

    #[test]
    fn per_trajectory_latents_route_gradients() {
        let (b, trajs, g) = setup(4);
        let g2: Vec<f64> = g.iter().map(|v| -v).collect();
        let batch = StepBatch::new(&trajs).unwrap();
        let assign = vec![0, 1, 0, 1, 1];
        let scored = score(&b.net, &batch, &[&g, &g2], &assign).unwrap();
        // only trajectories on latent 1 carry weight, so latent 0 gets nothing
        let coeffs = vec![0.0, 1.0, 0.0, 1.0, 1.0];
        let (_, gl) = score_grad(&b.net, &batch, &scored, &coeffs, false, 2, &assign).unwrap();
        assert!(gl[0].iter().all(|v| *v == 0.0));
        assert!(gl[1].iter().any(|v| *v != 0.0));
    }

    #[test]
    fn empty_trajectory_contributes_zero() {
        let (b, mut trajs, g) = setup(5);
        trajs[0].steps.clear();
        let batch = StepBatch::new(&trajs).unwrap();
        let scored = score(&b.net, &batch, &[&g], &[0; 5]).unwrap();
        assert_eq!(scored.sums[0], 0.0);
    }
}
