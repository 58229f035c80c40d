//! Dense tensor core with hand-written analytic gradients.
//!
//! Parameters are stored as 32-bit floats (the serialization dtype); all
//! forward and backward arithmetic runs in f64 so that central-difference
//! gradient checks hold to tight tolerances.

mod cnn;
mod crf;
mod dropout;
mod lstm;
mod tensor;

pub use cnn::{char_cnn, CnnParams};
pub use crf::{
    crf_log_partition, crf_nll, crf_score, crf_viterbi, softmax_nll, CrfParams,
};
pub use dropout::dropout;
pub use lstm::{blstm, lstm_step, BlstmParams, GateParams, LstmParams};
pub use tensor::Tensor;

pub(crate) use cnn::{char_cnn_backward, char_cnn_forward, CnnCache};
pub(crate) use crf::{crf_nll_backward, softmax_nll_backward};
pub(crate) use dropout::{apply_mask, sample_mask};
pub(crate) use lstm::{blstm_backward, blstm_forward};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("non-finite emission score at position {position}, tag {tag}")]
    NonFiniteEmission { position: usize, tag: usize },
    #[error("gold tag id {id} out of range for {n_tags} tags")]
    TagOutOfRange { id: u32, n_tags: usize },
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Numerically stable log(Σ exp(x)).
pub(crate) fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Finiteness sweep for activations; compiled into debug builds only.
#[inline]
pub(crate) fn debug_check_finite(values: &[f64], what: &str) {
    debug_assert!(
        values.iter().all(|v| v.is_finite()),
        "non-finite value in {what}"
    );
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logsumexp_matches_naive_and_is_stable() {
        let xs: [f64; 3] = [0.3, -1.2, 2.0];
        let naive = xs.iter().map(|x| x.exp()).sum::<f64>().ln();
        assert!((logsumexp(&xs) - naive).abs() < 1e-12);

        // Would overflow if computed naively.
        let big = [1000.0, 1000.0];
        assert!((logsumexp(&big) - (1000.0 + 2f64.ln())).abs() < 1e-9);
    }
}
