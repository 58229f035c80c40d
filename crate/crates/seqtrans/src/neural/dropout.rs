//! Inverted dropout: survivors are scaled by 1/(1−p) at train time so that
//! evaluation needs no rescaling.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Dropout over a value slice. Identity when `p == 0` or not training.
pub fn dropout(x: &[f64], p: f32, train: bool, rng: &mut ChaCha8Rng) -> Vec<f64> {
    assert!((0.0..1.0).contains(&p), "dropout probability must be in [0,1)");
    if !train || p == 0.0 {
        return x.to_vec();
    }
    let mask = sample_mask(x.len(), p, rng);
    let mut out = x.to_vec();
    apply_mask(&mut out, &mask);
    out
}

/// Samples a multiplier mask: 0 with probability p, 1/(1−p) otherwise.
/// `p == 0` must be short-circuited by the caller; masks are only sampled
/// when dropout is active so RNG consumption stays independent of p being 0.
pub(crate) fn sample_mask(len: usize, p: f32, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let keep_scale = 1.0 / (1.0 - f64::from(p));
    (0..len)
        .map(|_| {
            if rng.gen::<f64>() < f64::from(p) {
                0.0
            } else {
                keep_scale
            }
        })
        .collect()
}

#[inline]
pub(crate) fn apply_mask(values: &mut [f64], mask: &[f64]) {
    for (v, m) in values.iter_mut().zip(mask) {
        *v *= m;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::seeded_rng;

    #[test]
    fn p_zero_is_identity_in_both_modes() {
        let mut rng = seeded_rng(0, "d");
        let x = vec![1.0, -2.0, 3.0];
        assert_eq!(dropout(&x, 0.0, true, &mut rng), x);
        assert_eq!(dropout(&x, 0.0, false, &mut rng), x);
    }

    #[test]
    fn eval_mode_is_identity() {
        let mut rng = seeded_rng(0, "d");
        let x = vec![1.0, -2.0, 3.0];
        assert_eq!(dropout(&x, 0.5, false, &mut rng), x);
    }

    #[test]
    fn survivor_fraction_and_mean_preserved() {
        let mut rng = seeded_rng(123, "d");
        let n = 10_000;
        let x = vec![1.0; n];
        let y = dropout(&x, 0.5, true, &mut rng);
        let survivors = y.iter().filter(|&&v| v != 0.0).count() as f64 / n as f64;
        assert!((survivors - 0.5).abs() < 0.02, "survivors {survivors}");
        let mean = y.iter().sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.03, "mean {mean}");
    }
}
