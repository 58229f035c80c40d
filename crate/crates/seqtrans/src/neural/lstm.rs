//! LSTM cell and bidirectional LSTM with analytic backward passes.
//!
//! Gate equations at time t (⊗ is elementwise):
//!   i = σ(W_i·h_{t−1} + U_i·x_t + b_i)
//!   f = σ(W_f·h_{t−1} + U_f·x_t + b_f)
//!   c̃ = tanh(W_c·h_{t−1} + U_c·x_t + b_c)
//!   c_t = f ⊗ c_{t−1} + i ⊗ c̃
//!   o = σ(W_o·h_{t−1} + U_o·x_t + b_o)
//!   h_t = o ⊗ tanh(c_t)

use rand_chacha::ChaCha8Rng;

use super::{apply_mask, debug_check_finite, sample_mask, sigmoid, Tensor};
use crate::util::seeded_rng;

pub(crate) const GATE_I: usize = 0;
pub(crate) const GATE_F: usize = 1;
pub(crate) const GATE_C: usize = 2;
pub(crate) const GATE_O: usize = 3;
const GATE_NAMES: [&str; 4] = ["i", "f", "c", "o"];

/// Parameters of one gate: recurrent weights `w` `[H×H]`, input weights
/// `u` `[d_in×H]`, bias `b` `[H]`.
#[derive(Debug, Clone)]
pub struct GateParams {
    pub w: Tensor,
    pub u: Tensor,
    pub b: Tensor,
}

/// One direction of an LSTM. Gates ordered input, forget, cell, output.
#[derive(Debug, Clone)]
pub struct LstmParams {
    pub d_in: usize,
    pub hidden: usize,
    pub gates: [GateParams; 4],
}

impl LstmParams {
    /// Glorot weights, zero biases, forget-gate bias +1.0.
    pub fn new(d_in: usize, hidden: usize, seed: u64, prefix: &str) -> LstmParams {
        let gates = std::array::from_fn(|g| {
            let name = GATE_NAMES[g];
            let mut rw = seeded_rng(seed, &format!("init/{prefix}.w_{name}"));
            let mut ru = seeded_rng(seed, &format!("init/{prefix}.u_{name}"));
            let mut b = Tensor::zeros(&[hidden]).trainable();
            if g == GATE_F {
                b.values_mut().fill(1.0);
            }
            GateParams {
                w: Tensor::glorot(&[hidden, hidden], hidden, hidden, &mut rw),
                u: Tensor::glorot(&[d_in, hidden], d_in, hidden, &mut ru),
                b,
            }
        });
        LstmParams { d_in, hidden, gates }
    }

    pub fn visit<'a>(&'a self, prefix: &str, f: &mut impl FnMut(String, &'a Tensor)) {
        for (g, gate) in self.gates.iter().enumerate() {
            let n = GATE_NAMES[g];
            f(format!("{prefix}.w_{n}"), &gate.w);
            f(format!("{prefix}.u_{n}"), &gate.u);
            f(format!("{prefix}.b_{n}"), &gate.b);
        }
    }

    pub fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut impl FnMut(String, &'a mut Tensor)) {
        for (g, gate) in self.gates.iter_mut().enumerate() {
            let n = GATE_NAMES[g];
            let GateParams { w, u, b } = gate;
            f(format!("{prefix}.w_{n}"), w);
            f(format!("{prefix}.u_{n}"), u);
            f(format!("{prefix}.b_{n}"), b);
        }
    }
}

pub(crate) struct LstmStepCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    gate_i: Vec<f64>,
    gate_f: Vec<f64>,
    gate_c: Vec<f64>,
    gate_o: Vec<f64>,
    c: Vec<f64>,
    tanh_c: Vec<f64>,
    h: Vec<f64>,
}

fn gate_preactivation(x: &[f64], h_prev: &[f64], gate: &GateParams, hidden: usize) -> Vec<f64> {
    let mut pre: Vec<f64> = (0..hidden).map(|j| gate.b.at(j)).collect();
    let u = gate.u.values();
    for (k, &xk) in x.iter().enumerate() {
        let row = &u[k * hidden..(k + 1) * hidden];
        for j in 0..hidden {
            pre[j] += xk * f64::from(row[j]);
        }
    }
    let w = gate.w.values();
    for (k, &hk) in h_prev.iter().enumerate() {
        let row = &w[k * hidden..(k + 1) * hidden];
        for j in 0..hidden {
            pre[j] += hk * f64::from(row[j]);
        }
    }
    pre
}

pub(crate) fn lstm_step_cached(
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
    p: &LstmParams,
) -> LstmStepCache {
    let h_dim = p.hidden;
    debug_assert_eq!(x.len(), p.d_in);
    debug_assert_eq!(h_prev.len(), h_dim);

    let mut gate_i = gate_preactivation(x, h_prev, &p.gates[GATE_I], h_dim);
    let mut gate_f = gate_preactivation(x, h_prev, &p.gates[GATE_F], h_dim);
    let mut gate_c = gate_preactivation(x, h_prev, &p.gates[GATE_C], h_dim);
    let mut gate_o = gate_preactivation(x, h_prev, &p.gates[GATE_O], h_dim);
    for j in 0..h_dim {
        gate_i[j] = sigmoid(gate_i[j]);
        gate_f[j] = sigmoid(gate_f[j]);
        gate_c[j] = gate_c[j].tanh();
        gate_o[j] = sigmoid(gate_o[j]);
    }
    let c: Vec<f64> = (0..h_dim)
        .map(|j| gate_f[j] * c_prev[j] + gate_i[j] * gate_c[j])
        .collect();
    let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
    let h: Vec<f64> = (0..h_dim).map(|j| gate_o[j] * tanh_c[j]).collect();
    debug_check_finite(&h, "lstm hidden state");
    debug_check_finite(&c, "lstm cell state");

    LstmStepCache {
        x: x.to_vec(),
        h_prev: h_prev.to_vec(),
        c_prev: c_prev.to_vec(),
        gate_i,
        gate_f,
        gate_c,
        gate_o,
        c,
        tanh_c,
        h,
    }
}

/// One LSTM step; returns (h_t, c_t).
pub fn lstm_step(
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
    p: &LstmParams,
) -> (Vec<f64>, Vec<f64>) {
    let cache = lstm_step_cached(x, h_prev, c_prev, p);
    (cache.h, cache.c)
}

/// Backward through one step. `dh`/`dc` are gradients wrt h_t and c_t;
/// returns (dx, dh_prev, dc_prev) and accumulates parameter gradients.
fn lstm_step_backward(
    cache: &LstmStepCache,
    p: &mut LstmParams,
    dh: &[f64],
    dc_in: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let h_dim = p.hidden;
    let d_in = p.d_in;

    let mut dpre = [
        vec![0.0; h_dim],
        vec![0.0; h_dim],
        vec![0.0; h_dim],
        vec![0.0; h_dim],
    ];
    let mut dc_prev = vec![0.0; h_dim];
    for j in 0..h_dim {
        let o = cache.gate_o[j];
        let i = cache.gate_i[j];
        let f = cache.gate_f[j];
        let g = cache.gate_c[j];
        let tc = cache.tanh_c[j];
        let dov = dh[j] * tc;
        let dc = dc_in[j] + dh[j] * o * (1.0 - tc * tc);
        dpre[GATE_O][j] = dov * o * (1.0 - o);
        dpre[GATE_F][j] = dc * cache.c_prev[j] * f * (1.0 - f);
        dpre[GATE_I][j] = dc * g * i * (1.0 - i);
        dpre[GATE_C][j] = dc * i * (1.0 - g * g);
        dc_prev[j] = dc * f;
    }

    let mut dx = vec![0.0; d_in];
    let mut dh_prev = vec![0.0; h_dim];
    for g in 0..4 {
        let gate = &mut p.gates[g];
        let dp = &dpre[g];
        // dx and du
        for k in 0..d_in {
            let xk = cache.x[k];
            let row = &gate.u.values()[k * h_dim..(k + 1) * h_dim];
            let mut acc = 0.0;
            for j in 0..h_dim {
                acc += dp[j] * f64::from(row[j]);
            }
            dx[k] += acc;
            for j in 0..h_dim {
                gate.u.add_grad(k * h_dim + j, xk * dp[j]);
            }
        }
        // dh_prev and dw
        for k in 0..h_dim {
            let hk = cache.h_prev[k];
            let row = &gate.w.values()[k * h_dim..(k + 1) * h_dim];
            let mut acc = 0.0;
            for j in 0..h_dim {
                acc += dp[j] * f64::from(row[j]);
            }
            dh_prev[k] += acc;
            for j in 0..h_dim {
                gate.w.add_grad(k * h_dim + j, hk * dp[j]);
            }
        }
        for j in 0..h_dim {
            gate.b.add_grad(j, dp[j]);
        }
    }
    (dx, dh_prev, dc_prev)
}

fn lstm_run(xs: &[Vec<f64>], p: &LstmParams) -> Vec<LstmStepCache> {
    let mut h = vec![0.0; p.hidden];
    let mut c = vec![0.0; p.hidden];
    let mut caches = Vec::with_capacity(xs.len());
    for x in xs {
        let cache = lstm_step_cached(x, &h, &c, p);
        h = cache.h.clone();
        c = cache.c.clone();
        caches.push(cache);
    }
    caches
}

/// Backward over a whole sequence. `dhs[t]` is the gradient wrt h_t coming
/// from the layer above; returns gradients wrt each x_t.
fn lstm_run_backward(caches: &[LstmStepCache], p: &mut LstmParams, dhs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let len = caches.len();
    let mut dxs = vec![Vec::new(); len];
    let mut dh_next = vec![0.0; p.hidden];
    let mut dc_next = vec![0.0; p.hidden];
    for t in (0..len).rev() {
        let mut dh = dhs[t].clone();
        for (a, b) in dh.iter_mut().zip(&dh_next) {
            *a += b;
        }
        let (dx, dh_prev, dc_prev) = lstm_step_backward(&caches[t], p, &dh, &dc_next);
        dxs[t] = dx;
        dh_next = dh_prev;
        dc_next = dc_prev;
    }
    dxs
}

/// Bidirectional LSTM: forward and backward passes concatenated per position.
#[derive(Debug, Clone)]
pub struct BlstmParams {
    pub fwd: LstmParams,
    pub bwd: LstmParams,
}

impl BlstmParams {
    pub fn new(d_in: usize, hidden: usize, seed: u64, prefix: &str) -> BlstmParams {
        BlstmParams {
            fwd: LstmParams::new(d_in, hidden, seed, &format!("{prefix}.fwd")),
            bwd: LstmParams::new(d_in, hidden, seed, &format!("{prefix}.bwd")),
        }
    }

    /// Output width per position.
    pub fn out_dim(&self) -> usize {
        2 * self.fwd.hidden
    }

    pub fn visit<'a>(&'a self, prefix: &str, f: &mut impl FnMut(String, &'a Tensor)) {
        self.fwd.visit(&format!("{prefix}.fwd"), f);
        self.bwd.visit(&format!("{prefix}.bwd"), f);
    }

    pub fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut impl FnMut(String, &'a mut Tensor)) {
        self.fwd.visit_mut(&format!("{prefix}.fwd"), f);
        self.bwd.visit_mut(&format!("{prefix}.bwd"), f);
    }
}

pub(crate) struct BlstmCache {
    fwd: Vec<LstmStepCache>,
    bwd: Vec<LstmStepCache>,
    in_masks: Option<Vec<Vec<f64>>>,
    out_masks: Option<Vec<Vec<f64>>>,
}

/// Forward pass with optional input/output dropout. Masks are sampled only
/// when training with p > 0 at the given site.
pub(crate) fn blstm_forward(
    xs: &[Vec<f64>],
    p: &BlstmParams,
    p_in: f32,
    p_out: f32,
    train: bool,
    rng: &mut ChaCha8Rng,
) -> (Vec<Vec<f64>>, BlstmCache) {
    let len = xs.len();
    let h_dim = p.fwd.hidden;

    let in_masks = (train && p_in > 0.0).then(|| {
        (0..len)
            .map(|t| sample_mask(xs[t].len(), p_in, rng))
            .collect::<Vec<_>>()
    });
    let dropped: Vec<Vec<f64>> = match &in_masks {
        Some(masks) => xs
            .iter()
            .zip(masks)
            .map(|(x, m)| {
                let mut x = x.clone();
                apply_mask(&mut x, m);
                x
            })
            .collect(),
        None => xs.to_vec(),
    };

    let fwd = lstm_run(&dropped, &p.fwd);
    let reversed: Vec<Vec<f64>> = dropped.iter().rev().cloned().collect();
    let bwd = lstm_run(&reversed, &p.bwd);

    let mut outs: Vec<Vec<f64>> = (0..len)
        .map(|t| {
            let mut v = Vec::with_capacity(2 * h_dim);
            v.extend_from_slice(&fwd[t].h);
            v.extend_from_slice(&bwd[len - 1 - t].h);
            v
        })
        .collect();

    let out_masks = (train && p_out > 0.0).then(|| {
        outs.iter_mut()
            .map(|o| {
                let m = sample_mask(o.len(), p_out, rng);
                apply_mask(o, &m);
                m
            })
            .collect::<Vec<_>>()
    });

    (outs, BlstmCache { fwd, bwd, in_masks, out_masks })
}

/// Backward pass; accumulates parameter gradients and returns gradients wrt
/// the original (pre-dropout) inputs.
pub(crate) fn blstm_backward(
    cache: &BlstmCache,
    p: &mut BlstmParams,
    douts: &[Vec<f64>],
) -> Vec<Vec<f64>> {
    let len = douts.len();
    let h_dim = p.fwd.hidden;

    let douts: Vec<Vec<f64>> = match &cache.out_masks {
        Some(masks) => douts
            .iter()
            .zip(masks)
            .map(|(d, m)| {
                let mut d = d.clone();
                apply_mask(&mut d, m);
                d
            })
            .collect(),
        None => douts.to_vec(),
    };

    let dh_fwd: Vec<Vec<f64>> = douts.iter().map(|d| d[..h_dim].to_vec()).collect();
    let dh_bwd: Vec<Vec<f64>> = (0..len)
        .map(|t| douts[len - 1 - t][h_dim..].to_vec())
        .collect();

    let dx_fwd = lstm_run_backward(&cache.fwd, &mut p.fwd, &dh_fwd);
    let dx_bwd = lstm_run_backward(&cache.bwd, &mut p.bwd, &dh_bwd);

    let mut dxs: Vec<Vec<f64>> = (0..len)
        .map(|t| {
            let mut d = dx_fwd[t].clone();
            for (a, b) in d.iter_mut().zip(&dx_bwd[len - 1 - t]) {
                *a += b;
            }
            d
        })
        .collect();
    if let Some(masks) = &cache.in_masks {
        for (d, m) in dxs.iter_mut().zip(masks) {
            apply_mask(d, m);
        }
    }
    dxs
}

/// Bidirectional LSTM over a sequence with dropout on inputs and outputs.
pub fn blstm(
    xs: &[Vec<f64>],
    p: &BlstmParams,
    dropout_p: f32,
    train: bool,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<f64>> {
    blstm_forward(xs, p, dropout_p, dropout_p, train, rng).0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_params(d_in: usize, hidden: usize) -> LstmParams {
        let gates = std::array::from_fn(|_| GateParams {
            w: Tensor::zeros(&[hidden, hidden]).trainable(),
            u: Tensor::zeros(&[d_in, hidden]).trainable(),
            b: Tensor::zeros(&[hidden]).trainable(),
        });
        LstmParams { d_in, hidden, gates }
    }

    #[test]
    fn all_zero_step_is_exactly_zero() {
        let p = zero_params(2, 3);
        let (h, c) = lstm_step(&[0.0, 0.0], &[0.0; 3], &[0.0; 3], &p);
        assert_eq!(h, vec![0.0; 3]);
        assert_eq!(c, vec![0.0; 3]);
    }

    #[test]
    fn scalar_step_matches_direct_evaluation() {
        // H = 1, d_in = 1 with hand-picked parameters.
        let mut p = zero_params(1, 1);
        let vals = [
            (0.5, 0.3, 0.1),  // i: w, u, b
            (-0.2, 0.4, 0.0), // f
            (0.7, -0.6, 0.2), // c̃
            (0.1, 0.9, -0.3), // o
        ];
        for (g, (w, u, b)) in vals.iter().enumerate() {
            p.gates[g].w.values_mut()[0] = *w;
            p.gates[g].u.values_mut()[0] = *u;
            p.gates[g].b.values_mut()[0] = *b;
        }
        let (x, h0, c0) = (0.8, -0.5, 0.25);
        let (h, c) = lstm_step(&[x], &[h0], &[c0], &p);

        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let i = sig(0.5f64 as f32 as f64 * h0 + 0.3f32 as f64 * x + 0.1f32 as f64);
        let f = sig((-0.2f32) as f64 * h0 + 0.4f32 as f64 * x);
        let g = (0.7f32 as f64 * h0 + (-0.6f32) as f64 * x + 0.2f32 as f64).tanh();
        let o = sig(0.1f32 as f64 * h0 + 0.9f32 as f64 * x + (-0.3f32) as f64);
        let c_exp = f * c0 + i * g;
        let h_exp = o * c_exp.tanh();
        assert!((c[0] - c_exp).abs() < 1e-7, "{} vs {}", c[0], c_exp);
        assert!((h[0] - h_exp).abs() < 1e-7, "{} vs {}", h[0], h_exp);
    }

    #[test]
    fn saturated_forget_gate_preserves_cell() {
        let mut p = zero_params(1, 1);
        p.gates[GATE_F].b.values_mut()[0] = 20.0;
        let c0 = 0.75;
        let (_, c) = lstm_step(&[0.0], &[0.0], &[c0], &p);
        assert!((c[0] - c0).abs() < 1e-6);
    }

    #[test]
    fn blstm_output_width_is_twice_hidden() {
        let p = BlstmParams::new(4, 100, 7, "t");
        let xs = vec![vec![0.1; 4]; 3];
        let mut rng = seeded_rng(0, "b");
        let out = blstm(&xs, &p, 0.0, false, &mut rng);
        assert_eq!(out.len(), 3);
        assert!(out.iter().all(|o| o.len() == 200));
    }

    #[test]
    fn palindrome_with_tied_params_swaps_halves() {
        let fwd = LstmParams::new(2, 3, 11, "tied");
        let p = BlstmParams { fwd: fwd.clone(), bwd: fwd };
        let xs = vec![
            vec![0.3, -0.4],
            vec![-1.0, 0.2],
            vec![0.5, 0.9],
            vec![-1.0, 0.2],
            vec![0.3, -0.4],
        ];
        let mut rng = seeded_rng(0, "b");
        let out = blstm(&xs, &p, 0.0, false, &mut rng);
        let len = xs.len();
        let h = 3;
        for t in 0..len {
            let mirror = len - 1 - t;
            for j in 0..h {
                assert!((out[t][j] - out[mirror][h + j]).abs() < 1e-12);
                assert!((out[t][h + j] - out[mirror][j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn length_one_equals_two_single_steps() {
        let p = BlstmParams::new(2, 3, 13, "one");
        let x = vec![0.4, -0.7];
        let mut rng = seeded_rng(0, "b");
        let out = blstm(&[x.clone()], &p, 0.0, false, &mut rng);
        let (hf, _) = lstm_step(&x, &[0.0; 3], &[0.0; 3], &p.fwd);
        let (hb, _) = lstm_step(&x, &[0.0; 3], &[0.0; 3], &p.bwd);
        let expect: Vec<f64> = hf.into_iter().chain(hb).collect();
        assert_eq!(out[0], expect);
    }
}
