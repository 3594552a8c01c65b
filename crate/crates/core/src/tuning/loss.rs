use std::collections::BTreeMap;
use std::sync::Arc;

use super::{LossKind, PreferenceDataset, PreferencePair, TuneConfig};
use crate::error::{ensure_dim, Error, Result};
use crate::policy::{score, score_grad, Adapter, AdapterKind, GoalLatent, PolicyBundle, StepBatch};
use crate::rollout::Trajectory;

/// `log σ(z)`, stable for large |z|.
pub fn log_sigmoid(z: f64) -> f64 {
    -(z.max(0.0) - z + (-z.abs()).exp().ln_1p())
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Preference data laid out for batched scoring.
///
/// Distinct trajectories are stored once, ordered by `(group, checksum)`, so
/// the layout (and every floating-point reduction over it) does not depend
/// on the order in which pairs were supplied. A group selects which latent
/// conditions a trajectory.
#[derive(Debug, Clone)]
pub struct Problem {
    pub trajs: Vec<Arc<Trajectory>>,
    pub group: Vec<usize>,
    pub batch: StepBatch,
    /// `(win, lose)` slots, sorted.
    pub pairs: Vec<(usize, usize)>,
    /// Positive slots, sorted, with multiplicity.
    pub positives: Vec<usize>,
    pub n_groups: usize,
}

impl Problem {
    /// One `(pairs, positives)` entry per latent group.
    pub fn new(groups: &[(&[PreferencePair], &[Arc<Trajectory>])]) -> Result<Self> {
        let mut keyed: BTreeMap<(usize, [u8; 32]), Arc<Trajectory>> = BTreeMap::new();
        let mut refs: Vec<(usize, [u8; 32], [u8; 32])> = Vec::new();
        let mut pos_refs: Vec<(usize, [u8; 32])> = Vec::new();
        let mut add = |g: usize, t: &Arc<Trajectory>| {
            let k = t.checksum();
            keyed.entry((g, k)).or_insert_with(|| Arc::clone(t));
            k
        };
        for (g, (pairs, positives)) in groups.iter().enumerate() {
            for p in pairs.iter() {
                if p.win.task != p.lose.task {
                    return Err(Error::contract("a preference pair mixes two tasks"));
                }
                let w = add(g, &p.win);
                let l = add(g, &p.lose);
                refs.push((g, w, l));
            }
            for t in positives.iter() {
                let k = add(g, t);
                pos_refs.push((g, k));
            }
        }
        let slot: BTreeMap<(usize, [u8; 32]), usize> =
            keyed.keys().enumerate().map(|(i, k)| (*k, i)).collect();
        let group = keyed.keys().map(|(g, _)| *g).collect();
        let trajs: Vec<Arc<Trajectory>> = keyed.into_values().collect();
        let mut pairs: Vec<(usize, usize)> = refs
            .iter()
            .map(|(g, w, l)| (slot[&(*g, *w)], slot[&(*g, *l)]))
            .collect();
        pairs.sort_unstable();
        let mut positives: Vec<usize> = pos_refs.iter().map(|k| slot[k]).collect();
        positives.sort_unstable();
        Ok(Problem {
            batch: StepBatch::new(trajs.iter().map(|t| t.as_ref()))?,
            trajs,
            group,
            pairs,
            positives,
            n_groups: groups.len().max(1),
        })
    }

    pub fn from_dataset(ds: &PreferenceDataset) -> Result<Self> {
        Problem::new(&[(&ds.pairs, &ds.positives)])
    }

    pub fn from_pairs(pairs: &[PreferencePair]) -> Result<Self> {
        Problem::new(&[(pairs, &[])])
    }

    pub fn from_trajectories(trajs: &[Trajectory]) -> Result<Self> {
        let shared: Vec<Arc<Trajectory>> = trajs.iter().cloned().map(Arc::new).collect();
        Problem::new(&[(&[], &shared)])
    }
}

/// A loss written as a function of per-trajectory log-likelihood sums.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub kind: LossKind,
    pub beta: f64,
    pub slic_delta: f64,
    pub slic_lambda: f64,
}

impl Objective {
    pub fn from_config(c: &TuneConfig) -> Self {
        Objective {
            kind: c.loss,
            beta: c.beta,
            slic_delta: c.slic_delta,
            slic_lambda: c.slic_lambda,
        }
    }

    pub fn needs_reference(&self) -> bool {
        matches!(self.kind, LossKind::PgtDpo | LossKind::Ipo)
    }

    /// Loss value and `∂loss/∂L_j` for every trajectory slot.
    ///
    /// `sums[j] = Σ_t log π(a_t|s_t, g)`, `ref_sums[j]` the same under the
    /// reference. Pair terms are accumulated in sorted slot order.
    pub fn evaluate(
        &self,
        p: &Problem,
        sums: &[f64],
        ref_sums: Option<&[f64]>,
    ) -> Result<(f64, Vec<f64>)> {
        let n = p.trajs.len();
        ensure_dim("trajectory sums", n, sums.len())?;
        let mut coeffs = vec![0.0; n];
        let mut loss = 0.0;
        let np = p.pairs.len() as f64;
        match self.kind {
            LossKind::PgtDpo | LossKind::Ipo => {
                let r = ref_sums.ok_or_else(|| Error::contract("reference sums required"))?;
                ensure_dim("reference sums", n, r.len())?;
                if p.pairs.is_empty() {
                    return Err(Error::contract("preference loss needs at least one pair"));
                }
                for &(w, l) in &p.pairs {
                    let diff = (sums[w] - r[w]) - (sums[l] - r[l]);
                    let dl_ddiff = if self.kind == LossKind::PgtDpo {
                        let z = self.beta * diff;
                        loss -= log_sigmoid(z);
                        -self.beta * sigmoid(-z)
                    } else {
                        let m = diff - 1.0 / (2.0 * self.beta);
                        loss += m * m;
                        2.0 * m
                    };
                    coeffs[w] += dl_ddiff / np;
                    coeffs[l] -= dl_ddiff / np;
                }
                loss /= np;
            }
            LossKind::Slic => {
                if p.pairs.is_empty() {
                    return Err(Error::contract("preference loss needs at least one pair"));
                }
                let mut hinge = 0.0;
                for &(w, l) in &p.pairs {
                    let m = self.slic_delta - (sums[w] - sums[l]);
                    if m > 0.0 {
                        hinge += m;
                        coeffs[w] -= 1.0 / np;
                        coeffs[l] += 1.0 / np;
                    }
                }
                loss = hinge / np;
                if self.slic_lambda > 0.0 && !p.positives.is_empty() {
                    let (reg, c) = mean_nll(p, sums, &p.positives);
                    loss += self.slic_lambda * reg;
                    for (acc, v) in coeffs.iter_mut().zip(c) {
                        *acc += self.slic_lambda * v;
                    }
                }
            }
            LossKind::Bc => {
                if p.positives.is_empty() {
                    return Err(Error::contract(
                        "behavior cloning needs at least one trajectory",
                    ));
                }
                let (l, c) = mean_nll(p, sums, &p.positives);
                loss = l;
                coeffs = c;
            }
        }
        Ok((loss, coeffs))
    }
}

/// Mean over `slots` of the per-step negative log-likelihood `−L_j / T_j`.
fn mean_nll(p: &Problem, sums: &[f64], slots: &[usize]) -> (f64, Vec<f64>) {
    let mut coeffs = vec![0.0; sums.len()];
    let mut loss = 0.0;
    let n = slots.len() as f64;
    for &j in slots {
        let t = p.batch.len_of(j);
        if t == 0 {
            continue;
        }
        loss -= sums[j] / t as f64;
        coeffs[j] -= 1.0 / (n * t as f64);
    }
    (loss / n, coeffs)
}

/// Loss value with gradients for the latent and the adapter parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrads {
    pub loss: f64,
    pub grad_g: Vec<f64>,
    pub grad_params: Vec<f64>,
}

fn evaluate_direct(
    problem: &Problem,
    objective: &Objective,
    bundle: &PolicyBundle,
    adapter: &Adapter,
    g: &GoalLatent,
    g_ref: Option<&GoalLatent>,
) -> Result<LossGrads> {
    ensure_dim("goal latent", bundle.latent_dim(), g.dim())?;
    let net = adapter.apply(&bundle.net)?;
    let assign = vec![0; problem.trajs.len()];
    let scored = score(&net, &problem.batch, &[g.as_slice()], &assign)?;
    let ref_sums = match g_ref {
        Some(r) => {
            ensure_dim("reference latent", bundle.latent_dim(), r.dim())?;
            Some(score(&bundle.net, &problem.batch, &[r.as_slice()], &assign)?.sums)
        }
        None => None,
    };
    let (loss, coeffs) = objective.evaluate(problem, &scored.sums, ref_sums.as_deref())?;
    let want_params = adapter.kind != AdapterKind::None;
    let (grads, mut latent) = score_grad(
        &net,
        &problem.batch,
        &scored,
        &coeffs,
        want_params,
        1,
        &assign,
    )?;
    let grad_params = match grads {
        Some(gr) => adapter.pullback(&bundle.net, &gr)?,
        None => Vec::new(),
    };
    Ok(LossGrads {
        loss,
        grad_g: latent.swap_remove(0),
        grad_params,
    })
}

/// `h = Σ_t [log π(a_t|s_t,g) − log π_ref(a_t|s_t,g_ref)]`, where `π_ref` is
/// the bundle without the adapter. Gradients flow through the policy branch only.
pub fn traj_logratio(
    bundle: &PolicyBundle,
    adapter: &Adapter,
    g: &GoalLatent,
    g_ref: &GoalLatent,
    traj: &Trajectory,
) -> Result<LossGrads> {
    ensure_dim("goal latent", bundle.latent_dim(), g.dim())?;
    ensure_dim("reference latent", bundle.latent_dim(), g_ref.dim())?;
    let net = adapter.apply(&bundle.net)?;
    let batch = StepBatch::new([traj])?;
    let scored = score(&net, &batch, &[g.as_slice()], &[0])?;
    let reference = score(&bundle.net, &batch, &[g_ref.as_slice()], &[0])?;
    let want_params = adapter.kind != AdapterKind::None;
    let (grads, mut latent) = score_grad(&net, &batch, &scored, &[1.0], want_params, 1, &[0])?;
    Ok(LossGrads {
        loss: scored.sums[0] - reference.sums[0],
        grad_g: latent.swap_remove(0),
        grad_params: match grads {
            Some(gr) => adapter.pullback(&bundle.net, &gr)?,
            None => Vec::new(),
        },
    })
}

/// `−mean log σ(β·(h_win − h_lose))`.
pub fn pgt_loss(
    pairs: &[PreferencePair],
    bundle: &PolicyBundle,
    adapter: &Adapter,
    g: &GoalLatent,
    g_ref: &GoalLatent,
    beta: f64,
) -> Result<LossGrads> {
    if !(beta > 0.0) {
        return Err(Error::contract("beta must be positive"));
    }
    let objective = Objective {
        kind: LossKind::PgtDpo,
        beta,
        slic_delta: 0.0,
        slic_lambda: 0.0,
    };
    evaluate_direct(
        &Problem::from_pairs(pairs)?,
        &objective,
        bundle,
        adapter,
        g,
        Some(g_ref),
    )
}

/// `mean (h_win − h_lose − 1/(2β))²`.
pub fn ipo_loss(
    pairs: &[PreferencePair],
    bundle: &PolicyBundle,
    adapter: &Adapter,
    g: &GoalLatent,
    g_ref: &GoalLatent,
    beta: f64,
) -> Result<LossGrads> {
    if !(beta > 0.0) {
        return Err(Error::contract("beta must be positive"));
    }
    let objective = Objective {
        kind: LossKind::Ipo,
        beta,
        slic_delta: 0.0,
        slic_lambda: 0.0,
    };
    evaluate_direct(
        &Problem::from_pairs(pairs)?,
        &objective,
        bundle,
        adapter,
        g,
        Some(g_ref),
    )
}

/// `mean max(0, δ − (L_win − L_lose)) + λ · mean_pos (−L/T)`; no reference branch.
pub fn slic_loss(
    pairs: &[PreferencePair],
    positives: &[Arc<Trajectory>],
    bundle: &PolicyBundle,
    adapter: &Adapter,
    g: &GoalLatent,
    delta: f64,
    lambda: f64,
) -> Result<LossGrads> {
    if delta < 0.0 || lambda < 0.0 {
        return Err(Error::contract(
            "slic delta and lambda must be non-negative",
        ));
    }
    let objective = Objective {
        kind: LossKind::Slic,
        beta: 1.0,
        slic_delta: delta,
        slic_lambda: lambda,
    };
    evaluate_direct(
        &Problem::new(&[(pairs, positives)])?,
        &objective,
        bundle,
        adapter,
        g,
        None,
    )
}

/// `mean over trajectories of (1/T) Σ_t −log π(a_t|s_t,g)`.
pub fn bc_loss(
    trajs: &[Trajectory],
    bundle: &PolicyBundle,
    adapter: &Adapter,
    g: &GoalLatent,
) -> Result<LossGrads> {
    if trajs.is_empty() {
        return Err(Error::contract(
            "behavior cloning needs at least one trajectory",
        ));
    }
    let objective = Objective {
        kind: LossKind::Bc,
        beta: 1.0,
        slic_delta: 0.0,
        slic_lambda: 0.0,
    };
    evaluate_direct(
        &Problem::from_trajectories(trajs)?,
        &objective,
        bundle,
        adapter,
        g,
        None,
    )
}
