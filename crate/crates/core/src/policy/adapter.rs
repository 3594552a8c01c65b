use std::borrow::Cow;
use std::fmt;
use std::str::FromStr;

use crate::error::{ensure_dim, Error, Result};
use crate::numeric::{gemm, Mat, Mlp};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdapterKind {
    /// Network frozen; only the goal latent trains.
    None,
    /// Additive offset on every network parameter.
    Full,
    /// `W + A·B` on every weight matrix, `A: out×r`, `B: r×in`.
    LowRank,
    /// Additive offset on every bias vector.
    BiasOnly,
}

impl AdapterKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AdapterKind::None => "none",
            AdapterKind::Full => "full",
            AdapterKind::LowRank => "low_rank",
            AdapterKind::BiasOnly => "bias_only",
        }
    }
}

impl fmt::Display for AdapterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AdapterKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(AdapterKind::None),
            "full" => Ok(AdapterKind::Full),
            "low_rank" => Ok(AdapterKind::LowRank),
            "bias_only" => Ok(AdapterKind::BiasOnly),
            _ => Err(Error::contract(format!("unknown adapter kind '{s}'"))),
        }
    }
}

/// Trainable wrapper around a frozen network.
///
/// A freshly built adapter is the identity: the full and bias offsets start
/// at zero and the low-rank `A` factors start at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Adapter {
    pub kind: AdapterKind,
    pub rank: usize,
    pub params: Vec<f64>,
}

impl Adapter {
    pub fn none() -> Self {
        Adapter {
            kind: AdapterKind::None,
            rank: 0,
            params: Vec::new(),
        }
    }

    pub fn new(kind: AdapterKind, base: &Mlp, rank: usize, rng: &mut Rng) -> Self {
        let params = match kind {
            AdapterKind::None => Vec::new(),
            AdapterKind::Full => vec![0.0; base.num_params()],
            AdapterKind::BiasOnly => vec![0.0; base.bias_dims()],
            AdapterKind::LowRank => {
                let mut p = Vec::with_capacity(Self::low_rank_count(base, rank));
                for layer in base.layers() {
                    p.extend(std::iter::repeat_n(0.0, layer.output_dim() * rank));
                    let scale = 1.0 / (layer.input_dim() as f64).sqrt();
                    p.extend((0..rank * layer.input_dim()).map(|_| rng.normal() * scale));
                }
                p
            }
        };
        let rank = if kind == AdapterKind::LowRank {
            rank
        } else {
            0
        };
        Adapter { kind, rank, params }
    }

    fn low_rank_count(base: &Mlp, rank: usize) -> usize {
        base.layers()
            .iter()
            .map(|l| rank * (l.input_dim() + l.output_dim()))
            .sum()
    }

    /// Trainable parameter count predicted from the kind and the base shapes.
    pub fn expected_count(kind: AdapterKind, base: &Mlp, rank: usize, latent_dim: usize) -> usize {
        match kind {
            AdapterKind::None => latent_dim,
            AdapterKind::Full => base.num_params(),
            AdapterKind::LowRank => Self::low_rank_count(base, rank),
            AdapterKind::BiasOnly => base.bias_dims(),
        }
    }

    pub fn trainable_count(&self) -> usize {
        self.params.len()
    }

    fn check(&self, base: &Mlp) -> Result<()> {
        let expected = match self.kind {
            AdapterKind::None => 0,
            AdapterKind::LowRank => Self::low_rank_count(base, self.rank),
            k => Self::expected_count(k, base, self.rank, 0),
        };
        ensure_dim("adapter parameters", expected, self.params.len())
    }

    /// Effective network.
    pub fn apply<'a>(&self, base: &'a Mlp) -> Result<Cow<'a, Mlp>> {
        self.check(base)?;
        if self.kind == AdapterKind::None {
            return Ok(Cow::Borrowed(base));
        }
        let mut net = base.clone();
        match self.kind {
            AdapterKind::None => unreachable!(),
            AdapterKind::Full => {
                let mut flat = net.to_flat();
                for (p, d) in flat.iter_mut().zip(&self.params) {
                    *p += d;
                }
                net.copy_from_flat(&flat)?;
            }
            AdapterKind::BiasOnly => {
                let mut at = 0;
                for layer in net.layers_mut() {
                    for b in layer.bias.iter_mut() {
                        *b += self.params[at];
                        at += 1;
                    }
                }
            }
            AdapterKind::LowRank => {
                let mut at = 0;
                for layer in net.layers_mut() {
                    let (a, b, next) = self.factors(at, layer.output_dim(), layer.input_dim())?;
                    at = next;
                    let delta = gemm(&a, false, &b, false)?;
                    for (w, d) in layer.weight.as_mut_slice().iter_mut().zip(delta.as_slice()) {
                        *w += d;
                    }
                }
            }
        }
        Ok(Cow::Owned(net))
    }

    fn factors(&self, at: usize, out: usize, inp: usize) -> Result<(Mat, Mat, usize)> {
        let r = self.rank;
        let a = Mat::from_vec(out, r, self.params[at..at + out * r].to_vec())?;
        let b_start = at + out * r;
        let b = Mat::from_vec(r, inp, self.params[b_start..b_start + r * inp].to_vec())?;
        Ok((a, b, b_start + r * inp))
    }

    /// Map gradients w.r.t. the effective network onto the adapter parameters.
    pub fn pullback(&self, base: &Mlp, grads: &Mlp) -> Result<Vec<f64>> {
        self.check(base)?;
        Ok(match self.kind {
            AdapterKind::None => Vec::new(),
            AdapterKind::Full => grads.to_flat(),
            AdapterKind::BiasOnly => grads
                .layers()
                .iter()
                .flat_map(|l| l.bias.iter().copied())
                .collect(),
            AdapterKind::LowRank => {
                let mut out = Vec::with_capacity(self.params.len());
                let mut at = 0;
                for g in grads.layers() {
                    let (a, b, next) = self.factors(at, g.output_dim(), g.input_dim())?;
                    at = next;
                    // d(A·B): dA = dW·Bᵀ, dB = Aᵀ·dW
                    out.extend(gemm(&g.weight, false, &b, true)?.into_vec());
                    out.extend(gemm(&a, true, &g.weight, false)?.into_vec());
                }
                out
            }
        })
    }
}
