//! Dense linear algebra, a tanh MLP with exact backpropagation, and Adam.

mod adam;
mod mat;
mod mlp;

pub use adam::Adam;
pub use mat::{axpy, dot, gemm, gemm_into, Mat};
pub(crate) use mlp::{add_bias_rows, column_sums_into};
pub use mlp::{BatchCache, ForwardCache, Layer, Mlp};

use crate::error::{Error, Result};

/// `log Σ exp(logits)` with max subtraction.
pub fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// `logits[index] − log Σ exp(logits)`.
pub fn log_softmax(logits: &[f64], index: usize) -> Result<f64> {
    if index >= logits.len() {
        return Err(Error::contract(format!(
            "log_softmax index {index} out of range for {} logits",
            logits.len()
        )));
    }
    Ok(logits[index] - log_sum_exp(logits))
}

/// Softmax probabilities written into `out`; returns the log-normalizer.
pub fn softmax_into(logits: &[f64], out: &mut [f64]) -> f64 {
    let lse = log_sum_exp(logits);
    for (o, v) in out.iter_mut().zip(logits) {
        *o = (v - lse).exp();
    }
    lse
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn log_softmax_examples() {
        assert!((log_softmax(&[0.0, 0.0], 0).unwrap() - 0.5f64.ln()).abs() < 1e-15);
        let stable = log_softmax(&[1000.0, 0.0], 0).unwrap();
        assert!(stable.is_finite() && stable.abs() < 1e-12);
        // direct summation oracle
        let direct = -((-2.0f64).exp() + (-1.0f64).exp() + 1.0).ln();
        assert!((log_softmax(&[1.0, 2.0, 3.0], 2).unwrap() - direct).abs() < 1e-15);
        assert!((direct - -0.407_605_964_1).abs() < 1e-9);
    }

    #[test]
    fn log_softmax_index_out_of_range() {
        assert!(log_softmax(&[0.0, 1.0], 2).is_err());
    }

    #[test]
    fn large_logits_do_not_overflow() {
        let l = [800.0, 799.0, -800.0];
        let total: f64 = (0..3).map(|i| log_softmax(&l, i).unwrap().exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn probabilities_sum_to_one(logits in proptest::collection::vec(-50.0f64..50.0, 1..10)) {
            let total: f64 = (0..logits.len()).map(|i| log_softmax(&logits, i).unwrap().exp()).sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }
    }
}
