use super::mat::{gemm, gemm_into, Mat};
use crate::error::{ensure_dim, Error, Result};
use crate::rng::Rng;

/// One affine layer; `weight` is `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Mat,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }
}

/// Multilayer perceptron: tanh on every hidden layer, identity on the output.
///
/// The same type doubles as the gradient container returned by
/// [`Mlp::backward`], so gradients can be flattened in parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
}

/// Activations recorded by a batch forward pass.
#[derive(Debug, Clone)]
pub struct BatchCache {
    /// Input to each layer; entry 0 is the batch input, entry k>0 is tanh output of layer k-1.
    inputs: Vec<Mat>,
    pub logits: Mat,
}

/// Single-sample activations.
#[derive(Debug, Clone)]
pub struct ForwardCache(BatchCache);

impl Mlp {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::contract("an MLP needs at least one layer"));
        }
        for layer in &layers {
            ensure_dim("layer bias", layer.output_dim(), layer.bias.len())?;
        }
        for pair in layers.windows(2) {
            ensure_dim("layer chaining", pair[0].output_dim(), pair[1].input_dim())?;
        }
        Ok(Mlp { layers })
    }

    /// Random init: hidden weights ~ N(0, 1/in), output weights scaled by
    /// `output_scale`, all biases zero.
    pub fn init(dims: &[usize], output_scale: f64, rng: &mut Rng) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::contract("need at least input and output dims"));
        }
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(k, w)| {
                let scale = if k == last { output_scale } else { 1.0 } / (w[0] as f64).sqrt();
                Layer {
                    weight: Mat::from_fn(w[1], w[0], |_, _| rng.normal() * scale),
                    bias: vec![0.0; w[1]],
                }
            })
            .collect();
        Mlp::new(layers)
    }

    /// Zero-valued MLP with the same shapes.
    pub fn zeros_like(&self) -> Self {
        Mlp {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    weight: Mat::zeros(l.weight.rows(), l.weight.cols()),
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    /// Σ (rows·cols + rows) over layers.
    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    pub fn bias_dims(&self) -> usize {
        self.layers.iter().map(|l| l.bias.len()).sum()
    }

    /// Parameters flattened layer by layer (weight row-major, then bias).
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(l.weight.as_slice());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn copy_from_flat(&mut self, flat: &[f64]) -> Result<()> {
        ensure_dim("Mlp::copy_from_flat", self.num_params(), flat.len())?;
        let mut at = 0;
        for l in &mut self.layers {
            let n = l.weight.len();
            l.weight.as_mut_slice().copy_from_slice(&flat[at..at + n]);
            at += n;
            let n = l.bias.len();
            l.bias.copy_from_slice(&flat[at..at + n]);
            at += n;
        }
        Ok(())
    }

    /// Forward pass for a single input.
    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        let x = Mat::from_vec(1, input.len(), input.to_vec())?;
        let cache = self.forward_batch(&x)?;
        Ok((cache.logits.row(0).to_vec(), ForwardCache(cache)))
    }

    /// Gradients of `dlogits · logits` w.r.t. parameters and input.
    pub fn backward(&self, cache: &ForwardCache, dlogits: &[f64]) -> Result<(Mlp, Vec<f64>)> {
        let d = Mat::from_vec(1, dlogits.len(), dlogits.to_vec())?;
        let (grads, dinput) = self.backward_batch(&cache.0, &d, true, true)?;
        Ok((
            grads.expect("requested"),
            dinput.expect("requested").into_vec(),
        ))
    }

    /// Forward pass over the rows of `inputs`.
    pub fn forward_batch(&self, inputs: &Mat) -> Result<BatchCache> {
        ensure_dim("mlp input", self.input_dim(), inputs.cols())?;
        let mut acts = Vec::with_capacity(self.layers.len());
        let mut current = inputs.clone();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = gemm(&current, false, &layer.weight, true)?;
            add_bias_rows(&mut z, &layer.bias);
            if k < last {
                z.as_mut_slice().iter_mut().for_each(|v| *v = v.tanh());
            }
            acts.push(std::mem::replace(&mut current, z));
        }
        Ok(BatchCache {
            inputs: acts,
            logits: current,
        })
    }

    /// Backward pass of `Σ_rows dlogits · logits`.
    ///
    /// Parameter gradients and the input gradient are each computed only when
    /// requested.
    pub fn backward_batch(
        &self,
        cache: &BatchCache,
        dlogits: &Mat,
        want_params: bool,
        want_input: bool,
    ) -> Result<(Option<Mlp>, Option<Mat>)> {
        ensure_dim("dlogits rows", cache.logits.rows(), dlogits.rows())?;
        ensure_dim("dlogits cols", self.output_dim(), dlogits.cols())?;
        ensure_dim("cache depth", self.layers.len(), cache.inputs.len())?;
        let mut grads = want_params.then(|| self.zeros_like());
        let mut dz = dlogits.clone();
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let a = &cache.inputs[k];
            if let Some(g) = grads.as_mut() {
                let gl = &mut g.layers[k];
                gemm_into(&dz, true, a, false, 0.0, &mut gl.weight)?;
                column_sums_into(&dz, &mut gl.bias);
            }
            if k == 0 {
                let dinput = if want_input {
                    Some(gemm(&dz, false, &layer.weight, false)?)
                } else {
                    None
                };
                return Ok((grads, dinput));
            }
            let mut da = gemm(&dz, false, &layer.weight, false)?;
            for (d, h) in da.as_mut_slice().iter_mut().zip(a.as_slice()) {
                *d *= 1.0 - h * h;
            }
            dz = da;
        }
        unreachable!("loop returns at layer 0")
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.is_finite() && l.bias.iter().all(|b| b.is_finite()))
    }
}

impl BatchCache {
    /// Input to layer `k`.
    pub fn layer_input(&self, k: usize) -> &Mat {
        &self.inputs[k]
    }
}

pub(crate) fn add_bias_rows(z: &mut Mat, bias: &[f64]) {
    for r in 0..z.rows() {
        for (v, b) in z.row_mut(r).iter_mut().zip(bias) {
            *v += b;
        }
    }
}

pub(crate) fn column_sums_into(m: &Mat, out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for r in 0..m.rows() {
        for (o, v) in out.iter_mut().zip(m.row(r)) {
            *o += v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_net(rng: &mut Rng, dims: &[usize]) -> Mlp {
        let mut net = Mlp::init(dims, 1.0, rng).unwrap();
        for l in net.layers_mut() {
            for b in &mut l.bias {
                *b = rng.normal() * 0.3;
            }
        }
        net
    }

    /// Straight-line evaluation written without any shared helpers.
    fn reference_forward(net: &Mlp, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        let n = net.layers().len();
        for (k, l) in net.layers().iter().enumerate() {
            let mut next = Vec::new();
            for o in 0..l.output_dim() {
                let mut s = l.bias[o];
                for i in 0..l.input_dim() {
                    s += l.weight.get(o, i) * cur[i];
                }
                next.push(if k + 1 < n { s.tanh() } else { s });
            }
            cur = next;
        }
        cur
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let net = Mlp::new(vec![Layer {
            weight: Mat::identity(2),
            bias: vec![0.0, 0.0],
        }])
        .unwrap();
        let (logits, _) = net.forward(&[0.3, -0.7]).unwrap();
        assert_eq!(logits, vec![0.3, -0.7]);
    }

    #[test]
    fn zero_input_with_zero_hidden_bias_gives_output_bias() {
        let mut rng = Rng::new(5);
        let mut net = Mlp::init(&[4, 8, 8, 3], 1.0, &mut rng).unwrap();
        let n = net.layers().len();
        net.layers_mut()[n - 1].bias = vec![0.5, -1.0, 2.0];
        let (logits, _) = net.forward(&[0.0; 4]).unwrap();
        assert_eq!(logits, vec![0.5, -1.0, 2.0]);
    }

    #[test]
    fn forward_matches_straight_line_oracle() {
        let mut rng = Rng::new(17);
        for _ in 0..20 {
            let net = random_net(&mut rng, &[5, 7, 3]);
            let x: Vec<f64> = (0..5).map(|_| rng.normal()).collect();
            let (logits, _) = net.forward(&x).unwrap();
            for (a, b) in logits.iter().zip(reference_forward(&net, &x)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn forward_rejects_wrong_input_dim() {
        let mut rng = Rng::new(1);
        let net = Mlp::init(&[3, 2], 1.0, &mut rng).unwrap();
        match net.forward(&[1.0, 2.0]) {
            Err(Error::Dimension {
                expected: 3,
                actual: 2,
                ..
            }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_dlogits_give_zero_gradients() {
        let mut rng = Rng::new(2);
        let net = random_net(&mut rng, &[4, 5, 3]);
        let (_, cache) = net.forward(&[0.1, 0.2, -0.3, 0.4]).unwrap();
        let (g, dx) = net.backward(&cache, &[0.0; 3]).unwrap();
        assert!(g.to_flat().iter().all(|&v| v == 0.0));
        assert!(dx.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_layer_input_gradient_is_transpose_product() {
        let net = Mlp::new(vec![Layer {
            weight: Mat::from_vec(2, 2, vec![2.0, 0.0, 0.0, 3.0]).unwrap(),
            bias: vec![0.0, 0.0],
        }])
        .unwrap();
        let (_, cache) = net.forward(&[0.5, 0.5]).unwrap();
        let (_, dx) = net.backward(&cache, &[1.0, 1.0]).unwrap();
        assert_eq!(dx, vec![2.0, 3.0]);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = Rng::new(23);
        let h = 1e-5;
        for _ in 0..100 {
            let net = random_net(&mut rng, &[4, 6, 5, 3]);
            let x: Vec<f64> = (0..4).map(|_| rng.normal()).collect();
            let w: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
            let objective = |n: &Mlp, x: &[f64]| -> f64 {
                let (l, _) = n.forward(x).unwrap();
                l.iter().zip(&w).map(|(a, b)| a * b).sum()
            };
            let (_, cache) = net.forward(&x).unwrap();
            let (g, dx) = net.backward(&cache, &w).unwrap();
            let flat = net.to_flat();
            let gflat = g.to_flat();
            for i in 0..flat.len() {
                let mut p = net.clone();
                let mut q = flat.clone();
                q[i] += h;
                p.copy_from_flat(&q).unwrap();
                let up = objective(&p, &x);
                q[i] -= 2.0 * h;
                p.copy_from_flat(&q).unwrap();
                let down = objective(&p, &x);
                let fd = (up - down) / (2.0 * h);
                assert_close(gflat[i], fd);
            }
            for i in 0..x.len() {
                let mut xp = x.clone();
                xp[i] += h;
                let mut xm = x.clone();
                xm[i] -= h;
                let fd = (objective(&net, &xp) - objective(&net, &xm)) / (2.0 * h);
                assert_close(dx[i], fd);
            }
        }
    }

    fn assert_close(analytic: f64, fd: f64) {
        let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-4);
        assert!(rel < 1e-6, "analytic {analytic} vs fd {fd} (rel {rel})");
    }

    #[test]
    fn batch_and_single_agree() {
        let mut rng = Rng::new(8);
        let net = random_net(&mut rng, &[3, 4, 2]);
        let xs = Mat::from_fn(6, 3, |_, _| rng.normal());
        let cache = net.forward_batch(&xs).unwrap();
        for r in 0..6 {
            let (l, _) = net.forward(xs.row(r)).unwrap();
            for (a, b) in l.iter().zip(cache.logits.row(r)) {
                assert!((a - b).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn flat_round_trip() {
        let mut rng = Rng::new(4);
        let net = random_net(&mut rng, &[3, 4, 2]);
        let mut other = net.zeros_like();
        other.copy_from_flat(&net.to_flat()).unwrap();
        assert_eq!(net, other);
        assert_eq!(net.num_params(), 3 * 4 + 4 + 4 * 2 + 2);
    }
}
