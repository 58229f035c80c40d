//! Parameter updates (Adam, AdaDelta), gradient clipping, and early
//! stopping on a development metric.
//!
//! Update arithmetic runs in f64 and moment buffers are kept in f64;
//! parameters themselves stay f32.

use thiserror::Error;

use crate::neural::Tensor;

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("non-finite gradient in parameter '{name}'")]
    NonFiniteGradient { name: String },
}

/// A mutable view of named trainable parameters, in a stable order.
pub type ParamSet<'a> = Vec<(String, &'a mut Tensor)>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    Adam { lr: f64 },
    AdaDelta { rho: f64, eps: f64, scale: f64 },
}

impl OptimizerKind {
    pub fn adam_default() -> Self {
        OptimizerKind::Adam { lr: 1e-3 }
    }

    pub fn adadelta_default() -> Self {
        OptimizerKind::AdaDelta { rho: 0.95, eps: 1e-6, scale: 1.0 }
    }
}

/// Adam with bias correction: m ← β₁m + (1−β₁)g; v ← β₂v + (1−β₂)g²;
/// θ ← θ − lr·m̂/(√v̂ + ε).
#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    moments: Vec<(Vec<f64>, Vec<f64>)>,
}

impl AdamState {
    pub fn new(lr: f64) -> AdamState {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// AdaDelta (the learning-rate-free variant, with an optional scalar
/// multiplier): `E[g²] ← ρE[g²] + (1−ρ)g²`;
/// `Δθ = −(√(E[Δθ²]+ε)/√(E[g²]+ε))·g`; `E[Δθ²] ← ρE[Δθ²] + (1−ρ)Δθ²`.
#[derive(Debug, Clone)]
pub struct AdaDeltaState {
    pub rho: f64,
    pub eps: f64,
    /// Scalar multiplier on the update; 1.0 is the canonical method.
    pub scale: f64,
    accum: Vec<(Vec<f64>, Vec<f64>)>,
}

impl AdaDeltaState {
    pub fn new(rho: f64, eps: f64, scale: f64) -> AdaDeltaState {
        AdaDeltaState { rho, eps, scale, accum: Vec::new() }
    }
}

#[derive(Debug, Clone)]
pub enum Optimizer {
    Adam(AdamState),
    AdaDelta(AdaDeltaState),
}

impl Optimizer {
    pub fn new(kind: OptimizerKind) -> Optimizer {
        match kind {
            OptimizerKind::Adam { lr } => Optimizer::Adam(AdamState::new(lr)),
            OptimizerKind::AdaDelta { rho, eps, scale } => {
                Optimizer::AdaDelta(AdaDeltaState::new(rho, eps, scale))
            }
        }
    }

    /// Applies one update to every parameter. The parameter list must have
    /// the same order and shapes on every call.
    pub fn step(&mut self, params: &mut ParamSet<'_>) -> Result<(), OptimError> {
        for (name, t) in params.iter() {
            let g = t.grad().expect("trainable parameter");
            if g.iter().any(|v| !v.is_finite()) {
                return Err(OptimError::NonFiniteGradient { name: name.clone() });
            }
        }
        match self {
            Optimizer::Adam(s) => adam_step(params, s),
            Optimizer::AdaDelta(s) => adadelta_step(params, s),
        }
        Ok(())
    }
}

/// One Adam update over all parameters.
pub fn adam_step(params: &mut ParamSet<'_>, s: &mut AdamState) {
    if s.moments.is_empty() {
        s.moments = params
            .iter()
            .map(|(_, t)| (vec![0.0; t.numel()], vec![0.0; t.numel()]))
            .collect();
    }
    s.step += 1;
    let t = s.step as i32;
    let bc1 = 1.0 - s.beta1.powi(t);
    let bc2 = 1.0 - s.beta2.powi(t);
    for ((_, tensor), (m, v)) in params.iter_mut().zip(&mut s.moments) {
        let grads: Vec<f64> = tensor.grad().expect("trainable").iter().map(|&g| f64::from(g)).collect();
        let values = tensor.values_mut();
        for i in 0..values.len() {
            let g = grads[i];
            m[i] = s.beta1 * m[i] + (1.0 - s.beta1) * g;
            v[i] = s.beta2 * v[i] + (1.0 - s.beta2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            values[i] = (f64::from(values[i]) - s.lr * m_hat / (v_hat.sqrt() + s.eps)) as f32;
        }
        debug_assert!(values.iter().all(|v| v.is_finite()), "non-finite parameter after adam step");
    }
}

/// One AdaDelta update over all parameters.
pub fn adadelta_step(params: &mut ParamSet<'_>, s: &mut AdaDeltaState) {
    if s.accum.is_empty() {
        s.accum = params
            .iter()
            .map(|(_, t)| (vec![0.0; t.numel()], vec![0.0; t.numel()]))
            .collect();
    }
    for ((_, tensor), (eg2, ed2)) in params.iter_mut().zip(&mut s.accum) {
        let grads: Vec<f64> = tensor.grad().expect("trainable").iter().map(|&g| f64::from(g)).collect();
        let values = tensor.values_mut();
        for i in 0..values.len() {
            let g = grads[i];
            eg2[i] = s.rho * eg2[i] + (1.0 - s.rho) * g * g;
            let delta = -((ed2[i] + s.eps).sqrt() / (eg2[i] + s.eps).sqrt()) * g * s.scale;
            ed2[i] = s.rho * ed2[i] + (1.0 - s.rho) * delta * delta;
            values[i] = (f64::from(values[i]) + delta) as f32;
        }
        debug_assert!(values.iter().all(|v| v.is_finite()), "non-finite parameter after adadelta step");
    }
}

/// Scales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_global_norm(params: &mut ParamSet<'_>, max_norm: f64) -> f64 {
    let mut sq = 0.0;
    for (_, t) in params.iter() {
        for &g in t.grad().expect("trainable") {
            sq += f64::from(g) * f64::from(g);
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = (max_norm / norm) as f32;
        for (_, t) in params.iter_mut() {
            for g in t.grad_mut() {
                *g *= scale;
            }
        }
    }
    norm
}

/// What the caller should do after reporting a dev metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    /// Strict improvement: snapshot the parameters.
    Improved,
    /// No improvement yet; keep training.
    NoImprovement,
    /// Patience exhausted: stop and restore the snapshot.
    Stop,
}

/// Early stopping on a development metric with strict-improvement snapshots.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    pub patience: usize,
    best: f64,
    since: usize,
    best_epoch: usize,
    epoch: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> EarlyStopping {
        EarlyStopping {
            patience,
            best: f64::NEG_INFINITY,
            since: 0,
            best_epoch: 0,
            epoch: 0,
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    /// Feeds the metric of the epoch just finished.
    pub fn update(&mut self, dev_metric: f64) -> StopDecision {
        self.epoch += 1;
        if dev_metric > self.best {
            self.best = dev_metric;
            self.best_epoch = self.epoch;
            self.since = 0;
            StopDecision::Improved
        } else {
            self.since += 1;
            if self.since >= self.patience {
                StopDecision::Stop
            } else {
                StopDecision::NoImprovement
            }
        }
    }
}
