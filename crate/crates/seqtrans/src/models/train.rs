//! Training loop: shuffled minibatches (single/multitask) or strict
//! per-sentence language alternation (transfer), with gradient clipping,
//! early stopping on dev accuracy, and snapshot-based reporting.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use thiserror::Error;

use super::{ModelError, TaggerModel};
use crate::corpus::{Sentence, SplitCorpus};
use crate::optim::{clip_global_norm, EarlyStopping, OptimError, Optimizer, OptimizerKind, StopDecision};
use crate::util::seeded_rng;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training diverged: non-finite loss at epoch {epoch}, step {step}")]
    Diverged { epoch: usize, step: usize },
    #[error("prediction/gold length mismatch: {pred} vs {gold}")]
    LengthMismatch { pred: usize, gold: usize },
    #[error("{0} is empty")]
    EmptyData(&'static str),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Optim(#[from] OptimError),
}

/// Training-loop settings (the non-architectural half of the run config).
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    /// Global gradient-norm clip applied before every step.
    pub clip: f64,
    pub seed: u64,
    /// Stop as soon as the monitored dev accuracy reaches this value.
    pub stop_at_dev: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            patience: 5,
            batch_size: 32,
            optimizer: OptimizerKind::adam_default(),
            clip: 5.0,
            seed: 42,
            stop_at_dev: None,
        }
    }
}

/// Data for one training run: one split corpus, or one per language for
/// the transfer model (ordered as the model's encoders).
pub enum TrainData<'a> {
    Mono(&'a SplitCorpus),
    Bilingual(&'a SplitCorpus, &'a SplitCorpus),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    /// Dev accuracy per head key.
    pub dev_acc: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub stopped_at: usize,
    pub best_epoch: usize,
    /// Best monitored dev metric.
    pub best_dev: f64,
    /// Per-head dev accuracy at the best epoch.
    pub dev_acc_best: BTreeMap<String, f64>,
    /// Per-head test accuracy of the restored snapshot.
    pub test_acc: BTreeMap<String, f64>,
}

/// Token-level counts behind the accuracy metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Metrics {
    pub correct: usize,
    pub total: usize,
}

impl Metrics {
    pub fn value(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }

    pub fn add(&mut self, other: Metrics) {
        self.correct += other.correct;
        self.total += other.total;
    }
}

/// Confusion counts for binary tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BinaryConfusion {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl BinaryConfusion {
    /// (TP + TN) / (TP + TN + FP + FN).
    pub fn accuracy(&self) -> f64 {
        let total = self.tp + self.tn + self.fp + self.fn_;
        if total == 0 {
            0.0
        } else {
            (self.tp + self.tn) as f64 / total as f64
        }
    }

    pub fn observe(&mut self, predicted: bool, gold: bool) {
        match (predicted, gold) {
            (true, true) => self.tp += 1,
            (false, false) => self.tn += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
        }
    }
}

/// Token accuracy over aligned sequences: correct / total.
pub fn accuracy(pred: &[Vec<u32>], gold: &[Vec<u32>]) -> Result<f64, TrainError> {
    if pred.len() != gold.len() {
        return Err(TrainError::LengthMismatch { pred: pred.len(), gold: gold.len() });
    }
    let mut m = Metrics::default();
    for (p, g) in pred.iter().zip(gold) {
        if p.len() != g.len() {
            return Err(TrainError::LengthMismatch { pred: p.len(), gold: g.len() });
        }
        m.total += g.len();
        m.correct += p.iter().zip(g).filter(|(a, b)| a == b).count();
    }
    Ok(m.value())
}

/// Tags every sentence with the given head and scores it against the gold
/// column of the head's task.
pub fn evaluate(
    model: &TaggerModel,
    head_idx: usize,
    sentences: &[Sentence],
) -> Result<Metrics, TrainError> {
    let task = model.heads[head_idx].task;
    let mut m = Metrics::default();
    for s in sentences {
        let gold = s
            .tags
            .get(&task)
            .ok_or(ModelError::MissingTaskColumn(task))?;
        let pred = model.predict(head_idx, s);
        if pred.len() != gold.len() {
            return Err(TrainError::LengthMismatch { pred: pred.len(), gold: gold.len() });
        }
        m.total += gold.len();
        m.correct += pred.iter().zip(gold).filter(|(a, b)| a == b).count();
    }
    Ok(m)
}

fn dev_accuracies(
    model: &TaggerModel,
    data: &TrainData<'_>,
) -> Result<BTreeMap<String, f64>, TrainError> {
    let mut out = BTreeMap::new();
    for (h, head) in model.heads.iter().enumerate() {
        let dev = match data {
            TrainData::Mono(split) => &split.dev,
            TrainData::Bilingual(a, b) => {
                if head.encoder == 0 {
                    &a.dev
                } else {
                    &b.dev
                }
            }
        };
        out.insert(head.key.clone(), evaluate(model, h, dev)?.value());
    }
    Ok(out)
}

/// The metric early stopping monitors: POS accuracy for single/multitask
/// runs, the cross-language mean for transfer runs.
fn monitored_metric(model: &TaggerModel, dev_acc: &BTreeMap<String, f64>) -> f64 {
    match model.mode {
        super::ModelMode::Transfer => {
            dev_acc.values().sum::<f64>() / dev_acc.len() as f64
        }
        _ => dev_acc["pos"],
    }
}

/// Trains the model, returning the per-epoch report. The final model state
/// is the early-stopping snapshot (best dev metric), not the last epoch.
pub fn train(
    model: &mut TaggerModel,
    data: &TrainData<'_>,
    tc: &TrainConfig,
) -> Result<TrainReport, TrainError> {
    assert!(tc.epochs >= 1 && tc.batch_size >= 1);
    match data {
        TrainData::Mono(split) => {
            if split.train.is_empty() {
                return Err(TrainError::EmptyData("training set"));
            }
            if split.dev.is_empty() {
                return Err(TrainError::EmptyData("development set"));
            }
        }
        TrainData::Bilingual(a, b) => {
            for split in [a, b] {
                if split.train.is_empty() {
                    return Err(TrainError::EmptyData("training set"));
                }
                if split.dev.is_empty() {
                    return Err(TrainError::EmptyData("development set"));
                }
            }
        }
    }

    let mut rng = seeded_rng(tc.seed, "train");
    let mut optimizer = Optimizer::new(tc.optimizer);
    let mut stopper = EarlyStopping::new(tc.patience);
    let mut snapshot = None;
    let mut stats: Vec<EpochStats> = Vec::new();

    'epochs: for epoch in 1..=tc.epochs {
        let mut loss_sum = 0.0;
        let mut loss_n = 0usize;
        let mut step = 0usize;

        match data {
            TrainData::Mono(split) => {
                let mut order: Vec<usize> = (0..split.train.len()).collect();
                order.shuffle(&mut rng);
                for batch in order.chunks(tc.batch_size) {
                    step += 1;
                    model.zero_grads();
                    let scale = 1.0 / batch.len() as f64;
                    for &i in batch {
                        let loss = model.sentence_pass(0, &split.train[i], scale, &mut rng)?;
                        if !loss.is_finite() {
                            return Err(TrainError::Diverged { epoch, step });
                        }
                        loss_sum += loss;
                        loss_n += 1;
                    }
                    let mut params = model.trainable_params();
                    clip_global_norm(&mut params, tc.clip);
                    optimizer.step(&mut params)?;
                }
            }
            TrainData::Bilingual(a, b) => {
                // One epoch = one pass over the longer corpus; the shorter
                // one wraps. Batch size is 1 per language per alternation.
                let mut order_a: Vec<usize> = (0..a.train.len()).collect();
                let mut order_b: Vec<usize> = (0..b.train.len()).collect();
                order_a.shuffle(&mut rng);
                order_b.shuffle(&mut rng);
                let steps = order_a.len().max(order_b.len());
                for i in 0..steps {
                    for (enc, split, order) in
                        [(0usize, a, &order_a), (1usize, b, &order_b)]
                    {
                        step += 1;
                        let sentence = &split.train[order[i % order.len()]];
                        model.zero_grads();
                        let loss = model.sentence_pass(enc, sentence, 1.0, &mut rng)?;
                        if !loss.is_finite() {
                            return Err(TrainError::Diverged { epoch, step });
                        }
                        loss_sum += loss;
                        loss_n += 1;
                        let mut params = model.trainable_params();
                        clip_global_norm(&mut params, tc.clip);
                        optimizer.step(&mut params)?;
                    }
                }
            }
        }

        let dev_acc = dev_accuracies(model, data)?;
        let monitored = monitored_metric(model, &dev_acc);
        stats.push(EpochStats {
            epoch,
            train_loss: loss_sum / loss_n.max(1) as f64,
            dev_acc,
        });

        match stopper.update(monitored) {
            StopDecision::Improved => snapshot = Some(model.snapshot()),
            StopDecision::NoImprovement => {}
            StopDecision::Stop => break 'epochs,
        }
        if let Some(target) = tc.stop_at_dev {
            if monitored >= target {
                break 'epochs;
            }
        }
    }

    if let Some(snap) = &snapshot {
        model.restore(snap);
    }
    let best_epoch = stopper.best_epoch();
    let mut test_acc = BTreeMap::new();
    for (h, head) in model.heads.iter().enumerate() {
        let test = match data {
            TrainData::Mono(split) => &split.test,
            TrainData::Bilingual(a, b) => {
                if head.encoder == 0 {
                    &a.test
                } else {
                    &b.test
                }
            }
        };
        if !test.is_empty() {
            test_acc.insert(head.key.clone(), evaluate(model, h, test)?.value());
        }
    }

    Ok(TrainReport {
        stopped_at: stats.len(),
        best_epoch,
        best_dev: stopper.best(),
        dev_acc_best: stats
            .get(best_epoch.saturating_sub(1))
            .map(|s| s.dev_acc.clone())
            .unwrap_or_default(),
        test_acc,
        epochs: stats,
    })
}

/// Renders a report as the tab-separated run-report format: `#`-prefixed
/// header lines, a column header, one row per epoch, then summary lines.
pub fn render_report(report: &TrainReport, header: &[(String, String)]) -> String {
    let mut out = String::new();
    for (k, v) in header {
        out.push_str(&format!("# {k} = {v}\n"));
    }
    let head_keys: Vec<&String> = report
        .epochs
        .first()
        .map(|e| e.dev_acc.keys().collect())
        .unwrap_or_default();
    out.push_str("epoch\ttrain_loss");
    for k in &head_keys {
        out.push_str(&format!("\tdev_acc_{k}"));
    }
    out.push('\n');
    for e in &report.epochs {
        out.push_str(&format!("{}\t{:.6}", e.epoch, e.train_loss));
        for k in &head_keys {
            out.push_str(&format!("\t{:.6}", e.dev_acc[*k]));
        }
        out.push('\n');
    }
    out.push_str(&format!(
        "# stopped_at = {}, best_epoch = {}, best_dev = {:.6}\n",
        report.stopped_at, report.best_epoch, report.best_dev
    ));
    for (k, v) in &report.test_acc {
        out.push_str(&format!("# test_acc_{k} = {v:.6}\n"));
    }
    out
}
