//! Character CNN: embedding lookup → dropout → zero-padded 1-D convolution
//! over the character axis → per-filter max pooling.

use rand_chacha::ChaCha8Rng;

use super::{apply_mask, debug_check_finite, sample_mask, Tensor};
use crate::corpus::PAD;
use crate::util::seeded_rng;

/// Convolution filters `[n_filters × window × char_dim]` plus bias.
#[derive(Debug, Clone)]
pub struct CnnParams {
    pub filters: Tensor,
    pub bias: Tensor,
}

impl CnnParams {
    pub fn new(n_filters: usize, window: usize, char_dim: usize, seed: u64, prefix: &str) -> CnnParams {
        let mut rng = seeded_rng(seed, &format!("init/{prefix}.filters"));
        CnnParams {
            filters: Tensor::glorot(
                &[n_filters, window, char_dim],
                window * char_dim,
                n_filters,
                &mut rng,
            ),
            bias: Tensor::zeros(&[n_filters]).trainable(),
        }
    }

    pub fn n_filters(&self) -> usize {
        self.filters.shape()[0]
    }

    pub fn window(&self) -> usize {
        self.filters.shape()[1]
    }

    pub fn char_dim(&self) -> usize {
        self.filters.shape()[2]
    }

    pub fn visit<'a>(&'a self, prefix: &str, f: &mut impl FnMut(String, &'a Tensor)) {
        f(format!("{prefix}.filters"), &self.filters);
        f(format!("{prefix}.bias"), &self.bias);
    }

    pub fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut impl FnMut(String, &'a mut Tensor)) {
        let CnnParams { filters, bias } = self;
        f(format!("{prefix}.filters"), filters);
        f(format!("{prefix}.bias"), bias);
    }
}

pub(crate) struct CnnCache {
    /// Real (non-PAD) character ids of the word.
    ids: Vec<u32>,
    /// Character embeddings after dropout, `[len × char_dim]` row-major.
    emb: Vec<f64>,
    mask: Option<Vec<f64>>,
    /// Per filter, the convolution position that won the max (usize::MAX if
    /// the word was empty).
    argmax: Vec<usize>,
}

/// Forward pass over one word. PAD positions are excluded before the
/// convolution; an all-PAD word yields a zero vector.
pub(crate) fn char_cnn_forward(
    char_ids: &[u32],
    char_table: &Tensor,
    p: &CnnParams,
    dropout_p: f32,
    train: bool,
    rng: &mut ChaCha8Rng,
) -> (Vec<f64>, CnnCache) {
    let dc = p.char_dim();
    let n_f = p.n_filters();
    let w = p.window();
    let ids: Vec<u32> = char_ids.iter().copied().filter(|&id| id != PAD).collect();
    let len = ids.len();

    let mut emb = vec![0.0f64; len * dc];
    for (t, &id) in ids.iter().enumerate() {
        let row = &char_table.values()[id as usize * dc..(id as usize + 1) * dc];
        for (k, &v) in row.iter().enumerate() {
            emb[t * dc + k] = f64::from(v);
        }
    }
    let mask = (train && dropout_p > 0.0 && len > 0).then(|| {
        let m = sample_mask(len * dc, dropout_p, rng);
        apply_mask(&mut emb, &m);
        m
    });

    // Zero-padded convolution: output length equals word length.
    let off = (w - 1) / 2;
    let mut out = vec![0.0f64; n_f];
    let mut argmax = vec![usize::MAX; n_f];
    let filters = p.filters.values();
    for t in 0..len {
        for f in 0..n_f {
            let mut acc = p.bias.at(f);
            let base = f * w * dc;
            for j in 0..w {
                let src = t as isize + j as isize - off as isize;
                if src < 0 || src as usize >= len {
                    continue;
                }
                let e = &emb[src as usize * dc..(src as usize + 1) * dc];
                let fw = &filters[base + j * dc..base + (j + 1) * dc];
                for k in 0..dc {
                    acc += e[k] * f64::from(fw[k]);
                }
            }
            if argmax[f] == usize::MAX || acc > out[f] {
                out[f] = acc;
                argmax[f] = t;
            }
        }
    }
    if len == 0 {
        out.fill(0.0);
    }
    debug_check_finite(&out, "char cnn output");
    (out, CnnCache { ids, emb, mask, argmax })
}

/// Backward pass; accumulates gradients into the filters, bias, and the
/// character table rows that were actually read.
pub(crate) fn char_cnn_backward(
    cache: &CnnCache,
    char_table: &mut Tensor,
    p: &mut CnnParams,
    d_out: &[f64],
) {
    let dc = p.char_dim();
    let w = p.window();
    let n_f = p.n_filters();
    let len = cache.ids.len();
    if len == 0 {
        return;
    }
    let off = (w - 1) / 2;
    let mut d_emb = vec![0.0f64; len * dc];

    for f in 0..n_f {
        let t = cache.argmax[f];
        let d = d_out[f];
        if d == 0.0 {
            continue;
        }
        p.bias.add_grad(f, d);
        let base = f * w * dc;
        for j in 0..w {
            let src = t as isize + j as isize - off as isize;
            if src < 0 || src as usize >= len {
                continue;
            }
            let e_base = src as usize * dc;
            for k in 0..dc {
                p.filters.add_grad(base + j * dc + k, cache.emb[e_base + k] * d);
                d_emb[e_base + k] += f64::from(p.filters.values()[base + j * dc + k]) * d;
            }
        }
    }
    if let Some(m) = &cache.mask {
        apply_mask(&mut d_emb, m);
    }
    for (t, &id) in cache.ids.iter().enumerate() {
        let row = id as usize * dc;
        for k in 0..dc {
            char_table.add_grad(row + k, d_emb[t * dc + k]);
        }
    }
}

/// Character CNN over one word's character ids; returns the pooled
/// `[n_filters]` feature vector.
pub fn char_cnn(
    char_ids: &[u32],
    char_table: &Tensor,
    p: &CnnParams,
    dropout_p: f32,
    train: bool,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    char_cnn_forward(char_ids, char_table, p, dropout_p, train, rng).0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_cnn(n_f: usize, w: usize, dc: usize) -> CnnParams {
        CnnParams {
            filters: Tensor::zeros(&[n_f, w, dc]).trainable(),
            bias: Tensor::zeros(&[n_f]).trainable(),
        }
    }

    #[test]
    fn zero_filters_give_zero_output() {
        let table = Tensor::from_values(&[3, 2], vec![0.0, 0.0, 1.0, -1.0, 0.5, 2.0]);
        let p = zero_cnn(4, 3, 2);
        let mut rng = seeded_rng(0, "c");
        let out = char_cnn(&[2, 1, 2], &table, &p, 0.0, false, &mut rng);
        assert_eq!(out, vec![0.0; 4]);
    }

    #[test]
    fn width_one_filter_is_max_over_embeddings() {
        // F=1, w=1, filter=[1] over char embeddings [[1],[3]] → max-pool [3].
        let table = Tensor::from_values(&[4, 1], vec![0.0, 0.0, 1.0, 3.0]);
        let mut p = zero_cnn(1, 1, 1);
        p.filters.values_mut()[0] = 1.0;
        let mut rng = seeded_rng(0, "c");
        let out = char_cnn(&[2, 3], &table, &p, 0.0, false, &mut rng);
        assert_eq!(out, vec![3.0]);
    }

    #[test]
    fn all_pad_word_yields_zero_vector() {
        let table = Tensor::from_values(&[2, 2], vec![0.0; 4]);
        let p = CnnParams::new(5, 3, 2, 3, "t");
        let mut rng = seeded_rng(0, "c");
        let out = char_cnn(&[PAD, PAD, PAD], &table, &p, 0.0, false, &mut rng);
        assert_eq!(out, vec![0.0; 5]);
    }

    #[test]
    fn default_filter_count_gives_width_30() {
        let table = Tensor::from_values(&[3, 30], vec![0.01; 90]);
        let p = CnnParams::new(30, 3, 30, 3, "t");
        let mut rng = seeded_rng(0, "c");
        let out = char_cnn(&[2, 2, 2], &table, &p, 0.0, false, &mut rng);
        assert_eq!(out.len(), 30);
    }

    #[test]
    fn backward_matches_finite_differences_at_smooth_point() {
        // Random small instance; h = 1e-4 stays far below the pooling
        // margins of this configuration, so the loss is smooth locally.
        use rand::Rng;
        let mut rng = seeded_rng(99, "cnn-grad");
        let (n_chars, dc, n_f, w) = (5usize, 3usize, 4usize, 3usize);
        let mut table = Tensor::zeros(&[n_chars + 2, dc]).trainable();
        for v in table.values_mut() {
            *v = rng.gen_range(-0.8..0.8);
        }
        let mut p = zero_cnn(n_f, w, dc);
        for v in p.filters.values_mut() {
            *v = rng.gen_range(-0.8..0.8);
        }
        for v in p.bias.values_mut() {
            *v = rng.gen_range(-0.3..0.3);
        }
        let ids = [2u32, 4, 3, 6, 2];
        let weights: Vec<f64> = (0..n_f).map(|_| rng.gen_range(-1.0..1.0)).collect();

        fn loss(ids: &[u32], table: &Tensor, p: &CnnParams, weights: &[f64]) -> f64 {
            let mut r = seeded_rng(0, "x");
            let out = char_cnn(ids, table, p, 0.0, false, &mut r);
            out.iter().zip(weights).map(|(o, w)| o * w).sum()
        }

        let (_, cache) = {
            let mut r = seeded_rng(0, "x");
            char_cnn_forward(&ids, &table, &p, 0.0, false, &mut r)
        };
        char_cnn_backward(&cache, &mut table, &mut p, &weights);

        let h = 1e-4f32;
        let table_grads = table.grad().unwrap().to_vec();
        for i in 0..table_grads.len() {
            let orig = table.values()[i];
            table.values_mut()[i] = orig + h;
            let plus = loss(&ids, &table, &p, &weights);
            table.values_mut()[i] = orig - h;
            let minus = loss(&ids, &table, &p, &weights);
            table.values_mut()[i] = orig;
            let fd = (plus - minus) / (2.0 * f64::from(h));
            let g = f64::from(table_grads[i]);
            assert!(
                (fd - g).abs() < 1e-4 + 1e-3 * fd.abs().max(g.abs()),
                "char_table[{i}]: fd {fd} vs {g}"
            );
        }

        let filter_grads = p.filters.grad().unwrap().to_vec();
        for i in 0..filter_grads.len() {
            let orig = p.filters.values()[i];
            p.filters.values_mut()[i] = orig + h;
            let plus = loss(&ids, &table, &p, &weights);
            p.filters.values_mut()[i] = orig - h;
            let minus = loss(&ids, &table, &p, &weights);
            p.filters.values_mut()[i] = orig;
            let fd = (plus - minus) / (2.0 * f64::from(h));
            let g = f64::from(filter_grads[i]);
            assert!(
                (fd - g).abs() < 1e-4 + 1e-3 * fd.abs().max(g.abs()),
                "filters[{i}]: fd {fd} vs {g}"
            );
        }

        let bias_grads = p.bias.grad().unwrap().to_vec();
        for i in 0..bias_grads.len() {
            let orig = p.bias.values()[i];
            p.bias.values_mut()[i] = orig + h;
            let plus = loss(&ids, &table, &p, &weights);
            p.bias.values_mut()[i] = orig - h;
            let minus = loss(&ids, &table, &p, &weights);
            p.bias.values_mut()[i] = orig;
            let fd = (plus - minus) / (2.0 * f64::from(h));
            let g = f64::from(bias_grads[i]);
            assert!(
                (fd - g).abs() < 1e-4 + 1e-3 * fd.abs().max(g.abs()),
                "bias[{i}]: fd {fd} vs {g}"
            );
        }
    }

    #[test]
    fn hand_computed_convolution_with_window_three() {
        // One filter, window 3, char_dim 1; embeddings [1, 2, -1].
        // conv[t] = f0·e[t−1] + f1·e[t] + f2·e[t+1] with zero padding.
        let table = Tensor::from_values(&[5, 1], vec![0.0, 0.0, 1.0, 2.0, -1.0]);
        let mut p = zero_cnn(1, 3, 1);
        p.filters.values_mut().copy_from_slice(&[0.5, 1.0, -2.0]);
        let mut rng = seeded_rng(0, "c");
        let out = char_cnn(&[2, 3, 4], &table, &p, 0.0, false, &mut rng);
        // conv[0] = 1 − 4 = −3; conv[1] = 0.5 + 2 + 2 = 4.5; conv[2] = 1 − 1 = 0.
        assert!((out[0] - 4.5).abs() < 1e-12);
    }
}
