//! Linear-chain CRF: log-space forward algorithm for the partition
//! function, forward-backward marginals for gradients, Viterbi decoding,
//! and the alternative per-token softmax loss.
//!
//! Sequence score: start[y₀] + Σ_t emission[t][y_t] + Σ_t T[y_{t−1}, y_t]
//! + end[y_{L−1}], with T[y′, y] the score of transitioning y′ → y.

use super::{debug_check_finite, logsumexp, NeuralError, Tensor};
use crate::util::seeded_rng;

/// Emission projection `[d_h × K]` with bias, tag-transition matrix
/// `[K × K]`, and learned start/end scores.
#[derive(Debug, Clone)]
pub struct CrfParams {
    pub proj: Tensor,
    pub bias: Tensor,
    pub trans: Tensor,
    pub start: Tensor,
    pub end: Tensor,
}

impl CrfParams {
    pub fn new(d_h: usize, n_tags: usize, seed: u64, prefix: &str) -> CrfParams {
        let mut rng = seeded_rng(seed, &format!("init/{prefix}.proj"));
        CrfParams {
            proj: Tensor::glorot(&[d_h, n_tags], d_h, n_tags, &mut rng),
            bias: Tensor::zeros(&[n_tags]).trainable(),
            trans: Tensor::zeros(&[n_tags, n_tags]).trainable(),
            start: Tensor::zeros(&[n_tags]).trainable(),
            end: Tensor::zeros(&[n_tags]).trainable(),
        }
    }

    pub fn n_tags(&self) -> usize {
        self.bias.shape()[0]
    }

    pub fn d_h(&self) -> usize {
        self.proj.shape()[0]
    }

    /// Projects feature vectors to per-tag emission scores.
    pub fn emissions(&self, feats: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let k_tags = self.n_tags();
        let d = self.d_h();
        let proj = self.proj.values();
        feats
            .iter()
            .map(|f| {
                debug_assert_eq!(f.len(), d);
                let mut e: Vec<f64> = (0..k_tags).map(|k| self.bias.at(k)).collect();
                for (i, &fi) in f.iter().enumerate() {
                    let row = &proj[i * k_tags..(i + 1) * k_tags];
                    for k in 0..k_tags {
                        e[k] += fi * f64::from(row[k]);
                    }
                }
                e
            })
            .collect()
    }

    pub fn visit<'a>(&'a self, prefix: &str, f: &mut impl FnMut(String, &'a Tensor)) {
        f(format!("{prefix}.proj"), &self.proj);
        f(format!("{prefix}.bias"), &self.bias);
        f(format!("{prefix}.trans"), &self.trans);
        f(format!("{prefix}.start"), &self.start);
        f(format!("{prefix}.end"), &self.end);
    }

    pub fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut impl FnMut(String, &'a mut Tensor)) {
        let CrfParams { proj, bias, trans, start, end } = self;
        f(format!("{prefix}.proj"), proj);
        f(format!("{prefix}.bias"), bias);
        f(format!("{prefix}.trans"), trans);
        f(format!("{prefix}.start"), start);
        f(format!("{prefix}.end"), end);
    }
}

fn check_emissions(emissions: &[Vec<f64>]) -> Result<(), NeuralError> {
    for (t, row) in emissions.iter().enumerate() {
        for (k, v) in row.iter().enumerate() {
            if !v.is_finite() {
                return Err(NeuralError::NonFiniteEmission { position: t, tag: k });
            }
        }
    }
    Ok(())
}

fn forward_alphas(emissions: &[Vec<f64>], p: &CrfParams) -> Vec<Vec<f64>> {
    let k_tags = p.n_tags();
    let len = emissions.len();
    let mut alphas = vec![vec![0.0; k_tags]; len];
    for k in 0..k_tags {
        alphas[0][k] = p.start.at(k) + emissions[0][k];
    }
    let mut scratch = vec![0.0; k_tags];
    for t in 1..len {
        for j in 0..k_tags {
            for i in 0..k_tags {
                scratch[i] = alphas[t - 1][i] + p.trans.at(i * k_tags + j);
            }
            alphas[t][j] = emissions[t][j] + logsumexp(&scratch);
        }
    }
    alphas
}

fn backward_betas(emissions: &[Vec<f64>], p: &CrfParams) -> Vec<Vec<f64>> {
    let k_tags = p.n_tags();
    let len = emissions.len();
    let mut betas = vec![vec![0.0; k_tags]; len];
    for i in 0..k_tags {
        betas[len - 1][i] = p.end.at(i);
    }
    let mut scratch = vec![0.0; k_tags];
    for t in (0..len - 1).rev() {
        for i in 0..k_tags {
            for j in 0..k_tags {
                scratch[j] = p.trans.at(i * k_tags + j) + emissions[t + 1][j] + betas[t + 1][j];
            }
            betas[t][i] = logsumexp(&scratch);
        }
    }
    betas
}

/// Log of the partition function, computed by the forward algorithm in
/// log space.
pub fn crf_log_partition(emissions: &[Vec<f64>], p: &CrfParams) -> f64 {
    assert!(!emissions.is_empty());
    let alphas = forward_alphas(emissions, p);
    let k_tags = p.n_tags();
    let last: Vec<f64> = (0..k_tags)
        .map(|k| alphas[emissions.len() - 1][k] + p.end.at(k))
        .collect();
    logsumexp(&last)
}

/// Unnormalized score of one tag sequence.
pub fn crf_score(emissions: &[Vec<f64>], tags: &[u32], p: &CrfParams) -> f64 {
    let k_tags = p.n_tags();
    let mut s = p.start.at(tags[0] as usize) + p.end.at(tags[tags.len() - 1] as usize);
    for (t, &y) in tags.iter().enumerate() {
        s += emissions[t][y as usize];
        if t > 0 {
            s += p.trans.at(tags[t - 1] as usize * k_tags + y as usize);
        }
    }
    s
}

/// Negative log-likelihood −log p(gold | x).
pub fn crf_nll(emissions: &[Vec<f64>], gold: &[u32], p: &CrfParams) -> Result<f64, NeuralError> {
    check_emissions(emissions)?;
    let k_tags = p.n_tags();
    if let Some(&bad) = gold.iter().find(|&&g| g as usize >= k_tags) {
        return Err(NeuralError::TagOutOfRange { id: bad, n_tags: k_tags });
    }
    assert_eq!(emissions.len(), gold.len());
    Ok(crf_log_partition(emissions, p) - crf_score(emissions, gold, p))
}

/// NLL plus gradients: accumulates into trans/start/end and returns the
/// gradient wrt emissions, both scaled by `scale`.
pub(crate) fn crf_nll_backward(
    emissions: &[Vec<f64>],
    gold: &[u32],
    p: &mut CrfParams,
    scale: f64,
) -> Result<(f64, Vec<Vec<f64>>), NeuralError> {
    check_emissions(emissions)?;
    let k_tags = p.n_tags();
    if let Some(&bad) = gold.iter().find(|&&g| g as usize >= k_tags) {
        return Err(NeuralError::TagOutOfRange { id: bad, n_tags: k_tags });
    }
    let len = emissions.len();
    let alphas = forward_alphas(emissions, p);
    let betas = backward_betas(emissions, p);
    let last: Vec<f64> = (0..k_tags)
        .map(|k| alphas[len - 1][k] + p.end.at(k))
        .collect();
    let log_z = logsumexp(&last);
    let loss = log_z - crf_score(emissions, gold, p);

    // Unary marginals → demissions, dstart, dend.
    let mut d_emissions = vec![vec![0.0; k_tags]; len];
    for t in 0..len {
        for k in 0..k_tags {
            let marginal = (alphas[t][k] + betas[t][k] - log_z).exp();
            let indicator = f64::from(gold[t] as usize == k);
            d_emissions[t][k] = (marginal - indicator) * scale;
            if t == 0 {
                p.start.add_grad(k, (marginal - indicator) * scale);
            }
            if t == len - 1 {
                p.end.add_grad(k, (marginal - indicator) * scale);
            }
        }
        debug_check_finite(&d_emissions[t], "crf emission gradient");
    }

    // Pairwise marginals → dtrans.
    for t in 0..len.saturating_sub(1) {
        for i in 0..k_tags {
            for j in 0..k_tags {
                let q = (alphas[t][i]
                    + p.trans.at(i * k_tags + j)
                    + emissions[t + 1][j]
                    + betas[t + 1][j]
                    - log_z)
                    .exp();
                let indicator =
                    f64::from(gold[t] as usize == i && gold[t + 1] as usize == j);
                p.trans.add_grad(i * k_tags + j, (q - indicator) * scale);
            }
        }
    }
    Ok((loss, d_emissions))
}

/// Viterbi decoding: the argmax tag sequence, ties broken toward the lowest
/// tag id.
pub fn crf_viterbi(emissions: &[Vec<f64>], p: &CrfParams) -> Vec<u32> {
    let k_tags = p.n_tags();
    let len = emissions.len();
    assert!(len > 0);
    debug_assert!(check_emissions(emissions).is_ok());

    let mut score: Vec<f64> = (0..k_tags).map(|k| p.start.at(k) + emissions[0][k]).collect();
    let mut backptr = vec![vec![0u32; k_tags]; len];
    for t in 1..len {
        let mut next = vec![f64::NEG_INFINITY; k_tags];
        for j in 0..k_tags {
            let mut best = f64::NEG_INFINITY;
            let mut best_i = 0u32;
            for i in 0..k_tags {
                let s = score[i] + p.trans.at(i * k_tags + j);
                if s > best {
                    best = s;
                    best_i = i as u32;
                }
            }
            next[j] = best + emissions[t][j];
            backptr[t][j] = best_i;
        }
        score = next;
    }

    let mut best = f64::NEG_INFINITY;
    let mut best_k = 0u32;
    for k in 0..k_tags {
        let s = score[k] + p.end.at(k);
        if s > best {
            best = s;
            best_k = k as u32;
        }
    }
    let mut tags = vec![0u32; len];
    tags[len - 1] = best_k;
    for t in (1..len).rev() {
        tags[t - 1] = backptr[t][tags[t] as usize];
    }
    tags
}

/// Per-token softmax cross-entropy (mean over positions); the ablation
/// alternative to the CRF likelihood.
pub fn softmax_nll(emissions: &[Vec<f64>], gold: &[u32]) -> Result<f64, NeuralError> {
    check_emissions(emissions)?;
    let len = emissions.len();
    let mut total = 0.0;
    for (row, &y) in emissions.iter().zip(gold) {
        if y as usize >= row.len() {
            return Err(NeuralError::TagOutOfRange { id: y, n_tags: row.len() });
        }
        total += logsumexp(row) - row[y as usize];
    }
    Ok(total / len as f64)
}

pub(crate) fn softmax_nll_backward(
    emissions: &[Vec<f64>],
    gold: &[u32],
    scale: f64,
) -> Result<(f64, Vec<Vec<f64>>), NeuralError> {
    let loss = softmax_nll(emissions, gold)?;
    let len = emissions.len();
    let per_tok = scale / len as f64;
    let grads = emissions
        .iter()
        .zip(gold)
        .map(|(row, &y)| {
            let lse = logsumexp(row);
            row.iter()
                .enumerate()
                .map(|(k, v)| ((v - lse).exp() - f64::from(k as u32 == y)) * per_tok)
                .collect()
        })
        .collect();
    Ok((loss, grads))
}
