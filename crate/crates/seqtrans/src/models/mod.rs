//! Tagger architectures: single-language, multitask (hard parameter
//! sharing), and cross-lingual transfer.
//!
//! All three share one template: per-token character CNN features
//! concatenated with frozen pre-trained word embeddings, a shared
//! bidirectional LSTM, and per-head (task or language) CRF output layers,
//! with per-head BLSTMs in the multitask and transfer modes.

mod io;
mod train;

pub use io::{load_model, save_model, ModelIoError};
pub use train::{
    accuracy, evaluate, render_report, train, BinaryConfusion, EpochStats, Metrics, TrainConfig,
    TrainData, TrainError, TrainReport,
};

use std::collections::{BTreeMap, BTreeSet};

use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::corpus::{Sentence, TagSet, Task, Vocabulary, UNK};
use crate::embeddings::EmbeddingTable;
use crate::neural::{
    blstm_backward, blstm_forward, char_cnn_backward, char_cnn_forward, crf_nll,
    crf_nll_backward, crf_viterbi, softmax_nll, softmax_nll_backward, BlstmParams, CnnCache,
    CnnParams, CrfParams, Tensor,
};
use crate::util::seeded_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelMode {
    Single,
    Mtl,
    Transfer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Classifier {
    Crf,
    Softmax,
}

/// Architecture hyperparameters (the model-shape subset of the run config).
#[derive(Debug, Clone, PartialEq)]
pub struct TaggerConfig {
    pub dropout: f32,
    pub lstm_size: usize,
    pub embed_dim: usize,
    pub char_dim: usize,
    pub cnn_window: usize,
    pub cnn_filters: usize,
    pub classifier: Classifier,
    /// Give each multitask head its own BLSTM between the shared BLSTM and
    /// its CRF. On by default; switching it off makes the loss-masked
    /// multitask model coincide exactly with the single-task architecture.
    pub mtl_head_blstm: bool,
    pub freeze_word_embeddings: bool,
    pub seed: u64,
}

impl Default for TaggerConfig {
    fn default() -> Self {
        TaggerConfig {
            dropout: 0.25,
            lstm_size: 100,
            embed_dim: 128,
            char_dim: 30,
            cnn_window: 3,
            cnn_filters: 30,
            classifier: Classifier::Crf,
            mtl_head_blstm: true,
            freeze_word_embeddings: true,
            seed: 42,
        }
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("word table dimension {found} does not match configured embed_dim {expected}")]
    EmbedDimMismatch { expected: usize, found: usize },
    #[error("word table is empty")]
    EmptyWordTable,
    #[error("missing tag set for task '{0}'")]
    MissingTask(Task),
    #[error("sentence has no '{0}' tag column")]
    MissingTaskColumn(Task),
    #[error(transparent)]
    Neural(#[from] crate::neural::NeuralError),
}

/// Per-language (or per-corpus) input side: word lookup plus character CNN.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub key: String,
    words: Vec<String>,
    word_index: BTreeMap<String, u32>,
    /// `[vocab × embed_dim]`; rows 0/1 are PAD/UNK (zero). Trainable only
    /// when word embeddings are unfrozen.
    pub word_emb: Tensor,
    pub cnn: CnnParams,
}

impl Encoder {
    pub fn word_id(&self, word: &str) -> u32 {
        self.word_index.get(word).copied().unwrap_or(UNK)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }
}

/// One output head: a task (multitask mode) or a language (transfer mode).
#[derive(Debug, Clone)]
pub struct Head {
    pub key: String,
    pub task: Task,
    pub encoder: usize,
    pub blstm: Option<BlstmParams>,
    pub crf: CrfParams,
    pub tagset: TagSet,
    pub loss_weight: f64,
}

/// The assembled tagger.
#[derive(Debug, Clone)]
pub struct TaggerModel {
    pub mode: ModelMode,
    pub config: TaggerConfig,
    chars: Vec<char>,
    char_index: BTreeMap<char, u32>,
    pub char_table: Tensor,
    pub encoders: Vec<Encoder>,
    pub shared_blstm: BlstmParams,
    pub heads: Vec<Head>,
}

/// Word ids and per-word character ids, ready for the forward pass.
#[derive(Debug, Clone)]
pub struct EncodedSentence {
    pub word_ids: Vec<u32>,
    pub char_ids: Vec<Vec<u32>>,
}

fn build_char_side(
    vocabs: &[&Vocabulary],
    char_dim: usize,
    seed: u64,
) -> (Vec<char>, BTreeMap<char, u32>, Tensor) {
    let set: BTreeSet<char> = vocabs
        .iter()
        .flat_map(|v| v.chars().iter().copied())
        .collect();
    let chars: Vec<char> = set.into_iter().collect();
    let index: BTreeMap<char, u32> = chars
        .iter()
        .enumerate()
        .map(|(i, &c)| (c, i as u32 + 2))
        .collect();
    let mut rng = seeded_rng(seed, "init/char_table");
    let table = Tensor::glorot(&[chars.len() + 2, char_dim], char_dim, char_dim, &mut rng);
    (chars, index, table)
}

fn build_encoder(
    key: &str,
    vocab: &Vocabulary,
    table: &EmbeddingTable,
    cfg: &TaggerConfig,
) -> Result<Encoder, ModelError> {
    if table.is_empty() {
        return Err(ModelError::EmptyWordTable);
    }
    if table.dim() != cfg.embed_dim {
        return Err(ModelError::EmbedDimMismatch {
            expected: cfg.embed_dim,
            found: table.dim(),
        });
    }
    let dim = cfg.embed_dim;
    let n = vocab.word_table_len();
    let mut rows = vec![0.0f32; n * dim];
    for (i, w) in vocab.words().iter().enumerate() {
        let v = table.word_vector(w);
        rows[(i + 2) * dim..(i + 3) * dim].copy_from_slice(&v);
    }
    let mut word_emb = Tensor::from_values(&[n, dim], rows);
    if !cfg.freeze_word_embeddings {
        word_emb = word_emb.trainable();
    }
    Ok(Encoder {
        key: key.to_string(),
        words: vocab.words().to_vec(),
        word_index: vocab
            .words()
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as u32 + 2))
            .collect(),
        word_emb,
        cnn: CnnParams::new(
            cfg.cnn_filters,
            cfg.cnn_window,
            cfg.char_dim,
            cfg.seed,
            &format!("enc.{key}.cnn"),
        ),
    })
}

fn build_head(
    key: &str,
    task: Task,
    encoder: usize,
    tagset: &TagSet,
    with_blstm: bool,
    cfg: &TaggerConfig,
) -> Head {
    let feat_dim = 2 * cfg.lstm_size;
    Head {
        key: key.to_string(),
        task,
        encoder,
        blstm: with_blstm.then(|| {
            BlstmParams::new(feat_dim, cfg.lstm_size, cfg.seed, &format!("head.{key}.blstm"))
        }),
        crf: CrfParams::new(feat_dim, tagset.len(), cfg.seed, &format!("head.{key}.crf")),
        tagset: tagset.clone(),
        loss_weight: 1.0,
    }
}

/// Single-language tagger:
/// char-CNN ⊕ word-embedding → dropout → BLSTM → dropout → CRF head.
pub fn build_single(
    cfg: &TaggerConfig,
    vocab: &Vocabulary,
    tagset: &TagSet,
    word_table: &EmbeddingTable,
) -> Result<TaggerModel, ModelError> {
    let (chars, char_index, char_table) = build_char_side(&[vocab], cfg.char_dim, cfg.seed);
    let encoder = build_encoder("main", vocab, word_table, cfg)?;
    let shared =
        BlstmParams::new(cfg.embed_dim + cfg.cnn_filters, cfg.lstm_size, cfg.seed, "blstm");
    let head = build_head("pos", Task::Pos, 0, tagset, false, cfg);
    Ok(TaggerModel {
        mode: ModelMode::Single,
        config: cfg.clone(),
        chars,
        char_index,
        char_table,
        encoders: vec![encoder],
        shared_blstm: shared,
        heads: vec![head],
    })
}

/// Multitask tagger with hard parameter sharing: shared encoder and BLSTM,
/// then per-task BLSTMs and CRFs. Training loss is the (by default
/// unweighted) sum of the per-task losses.
pub fn build_mtl(
    cfg: &TaggerConfig,
    vocab: &Vocabulary,
    tagsets: &BTreeMap<Task, TagSet>,
    word_table: &EmbeddingTable,
) -> Result<TaggerModel, ModelError> {
    for task in [Task::Pos, Task::Gender, Task::Number] {
        if !tagsets.contains_key(&task) {
            return Err(ModelError::MissingTask(task));
        }
    }
    let (chars, char_index, char_table) = build_char_side(&[vocab], cfg.char_dim, cfg.seed);
    let encoder = build_encoder("main", vocab, word_table, cfg)?;
    let shared =
        BlstmParams::new(cfg.embed_dim + cfg.cnn_filters, cfg.lstm_size, cfg.seed, "blstm");
    let heads = [Task::Pos, Task::Gender, Task::Number]
        .into_iter()
        .map(|task| build_head(task.as_str(), task, 0, &tagsets[&task], cfg.mtl_head_blstm, cfg))
        .collect();
    Ok(TaggerModel {
        mode: ModelMode::Mtl,
        config: cfg.clone(),
        chars,
        char_index,
        char_table,
        encoders: vec![encoder],
        shared_blstm: shared,
        heads,
    })
}

/// One language's resources for the transfer model.
pub struct TransferLang<'a> {
    pub key: &'a str,
    pub vocab: &'a Vocabulary,
    pub tagset: &'a TagSet,
    pub word_table: &'a EmbeddingTable,
}

/// Cross-lingual transfer tagger: per-language encoders around one shared
/// BLSTM, then per-language BLSTM + CRF heads. Both languages share the
/// character table (same script).
pub fn build_transfer(
    cfg: &TaggerConfig,
    langs: [TransferLang<'_>; 2],
) -> Result<TaggerModel, ModelError> {
    let (chars, char_index, char_table) =
        build_char_side(&[langs[0].vocab, langs[1].vocab], cfg.char_dim, cfg.seed);
    let mut encoders = Vec::with_capacity(2);
    let mut heads = Vec::with_capacity(2);
    for (i, lang) in langs.iter().enumerate() {
        encoders.push(build_encoder(lang.key, lang.vocab, lang.word_table, cfg)?);
        heads.push(build_head(lang.key, Task::Pos, i, lang.tagset, true, cfg));
    }
    let shared =
        BlstmParams::new(cfg.embed_dim + cfg.cnn_filters, cfg.lstm_size, cfg.seed, "blstm");
    Ok(TaggerModel {
        mode: ModelMode::Transfer,
        config: cfg.clone(),
        chars,
        char_index,
        char_table,
        encoders,
        shared_blstm: shared,
        heads,
    })
}

/// Accumulates projection gradients and returns the gradient wrt features.
fn project_backward(crf: &mut CrfParams, feats: &[Vec<f64>], d_em: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let k_tags = crf.n_tags();
    let d = crf.d_h();
    let mut out = vec![vec![0.0; d]; feats.len()];
    for t in 0..feats.len() {
        for k in 0..k_tags {
            crf.bias.add_grad(k, d_em[t][k]);
        }
        for i in 0..d {
            let fi = feats[t][i];
            let row = &crf.proj.values()[i * k_tags..(i + 1) * k_tags];
            let mut acc = 0.0;
            for k in 0..k_tags {
                acc += d_em[t][k] * f64::from(row[k]);
            }
            out[t][i] = acc;
            for k in 0..k_tags {
                crf.proj.add_grad(i * k_tags + k, fi * d_em[t][k]);
            }
        }
    }
    out
}

impl TaggerModel {
    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn char_id(&self, c: char) -> u32 {
        self.char_index.get(&c).copied().unwrap_or(UNK)
    }

    pub fn head_index(&self, key: &str) -> Option<usize> {
        self.heads.iter().position(|h| h.key == key)
    }

    pub fn encoder_index(&self, key: &str) -> Option<usize> {
        self.encoders.iter().position(|e| e.key == key)
    }

    pub fn encode_sentence(&self, encoder: usize, sentence: &Sentence) -> EncodedSentence {
        let enc = &self.encoders[encoder];
        EncodedSentence {
            word_ids: sentence.tokens.iter().map(|t| enc.word_id(t)).collect(),
            char_ids: sentence
                .tokens
                .iter()
                .map(|t| t.chars().map(|c| self.char_id(c)).collect())
                .collect(),
        }
    }

    /// All parameters in a stable order, including frozen ones.
    /// Keep in sync with `params_mut`.
    pub fn params(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = Vec::new();
        out.push(("char_table".into(), &self.char_table));
        for e in &self.encoders {
            out.push((format!("enc.{}.word_emb", e.key), &e.word_emb));
            e.cnn.visit(&format!("enc.{}.cnn", e.key), &mut |n, t| out.push((n, t)));
        }
        self.shared_blstm.visit("blstm", &mut |n, t| out.push((n, t)));
        for h in &self.heads {
            if let Some(b) = &h.blstm {
                b.visit(&format!("head.{}.blstm", h.key), &mut |n, t| out.push((n, t)));
            }
            h.crf.visit(&format!("head.{}.crf", h.key), &mut |n, t| out.push((n, t)));
        }
        out
    }

    /// Mutable view of all parameters in the same stable order as `params`.
    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = Vec::new();
        let TaggerModel { char_table, encoders, shared_blstm, heads, .. } = self;
        out.push(("char_table".into(), char_table));
        for e in encoders.iter_mut() {
            let Encoder { key, word_emb, cnn, .. } = e;
            out.push((format!("enc.{key}.word_emb"), word_emb));
            cnn.visit_mut(&format!("enc.{key}.cnn"), &mut |n, t| out.push((n, t)));
        }
        shared_blstm.visit_mut("blstm", &mut |n, t| out.push((n, t)));
        for h in heads.iter_mut() {
            let Head { key, blstm, crf, .. } = h;
            if let Some(b) = blstm {
                b.visit_mut(&format!("head.{key}.blstm"), &mut |n, t| out.push((n, t)));
            }
            crf.visit_mut(&format!("head.{key}.crf"), &mut |n, t| out.push((n, t)));
        }
        out
    }

    /// Trainable parameters only (those carrying gradient buffers).
    pub fn trainable_params(&mut self) -> Vec<(String, &mut Tensor)> {
        self.params_mut()
            .into_iter()
            .filter(|(_, t)| t.is_trainable())
            .collect()
    }

    pub fn zero_grads(&mut self) {
        for (_, t) in self.params_mut() {
            t.zero_grad();
        }
    }

    /// Copy of all trainable parameter values, for early-stopping snapshots.
    pub fn snapshot(&self) -> Vec<(String, Vec<f32>)> {
        self.params()
            .into_iter()
            .filter(|(_, t)| t.is_trainable())
            .map(|(n, t)| (n, t.values().to_vec()))
            .collect()
    }

    pub fn restore(&mut self, snapshot: &[(String, Vec<f32>)]) {
        let mut by_name: BTreeMap<&str, &[f32]> =
            snapshot.iter().map(|(n, v)| (n.as_str(), v.as_slice())).collect();
        for (name, t) in self.params_mut() {
            if let Some(values) = by_name.remove(name.as_str()) {
                t.values_mut().copy_from_slice(values);
            }
        }
    }

    /// Per-token input vectors (word embedding ⊕ CNN features) and the CNN
    /// caches needed for backward.
    fn embed_tokens(
        char_table: &Tensor,
        enc: &Encoder,
        embed_dim: usize,
        es: &EncodedSentence,
        dropout: f32,
        train: bool,
        rng: &mut ChaCha8Rng,
    ) -> (Vec<Vec<f64>>, Vec<CnnCache>) {
        let len = es.word_ids.len();
        let mut xs = Vec::with_capacity(len);
        let mut caches = Vec::with_capacity(len);
        for t in 0..len {
            let (cnn_out, cache) =
                char_cnn_forward(&es.char_ids[t], char_table, &enc.cnn, dropout, train, rng);
            let row = es.word_ids[t] as usize;
            let wvals = &enc.word_emb.values()[row * embed_dim..(row + 1) * embed_dim];
            let mut x: Vec<f64> = Vec::with_capacity(embed_dim + cnn_out.len());
            x.extend(wvals.iter().map(|&v| f64::from(v)));
            x.extend_from_slice(&cnn_out);
            xs.push(x);
            caches.push(cache);
        }
        (xs, caches)
    }

    /// Forward and backward for one sentence: accumulates gradients scaled
    /// by `scale` into all contributing parameters and returns the
    /// (weighted) loss. Dropout is active.
    pub fn sentence_pass(
        &mut self,
        enc_idx: usize,
        sentence: &Sentence,
        scale: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<f64, ModelError> {
        assert!(!sentence.is_empty(), "sentences have at least one token");
        let es = self.encode_sentence(enc_idx, sentence);
        let p = self.config.dropout;
        let dim = self.config.embed_dim;
        let classifier = self.config.classifier;

        let TaggerModel { char_table, encoders, shared_blstm, heads, .. } = self;
        let enc = &mut encoders[enc_idx];
        let len = es.word_ids.len();

        let (xs, cnn_caches) = Self::embed_tokens(char_table, enc, dim, &es, p, true, rng);
        let (feats, shared_cache) = blstm_forward(&xs, shared_blstm, p, p, true, rng);

        let mut d_feats = vec![vec![0.0; shared_blstm.out_dim()]; len];
        let mut total_loss = 0.0;
        for head in heads.iter_mut() {
            if head.encoder != enc_idx || head.loss_weight == 0.0 {
                continue;
            }
            let gold = sentence
                .tags
                .get(&head.task)
                .ok_or(ModelError::MissingTaskColumn(head.task))?;
            let w = head.loss_weight;
            let (hfeats, hcache) = match &head.blstm {
                Some(b) => {
                    let (f, c) = blstm_forward(&feats, b, 0.0, p, true, rng);
                    (f, Some(c))
                }
                None => (feats.clone(), None),
            };
            let emissions = head.crf.emissions(&hfeats);
            let (loss, d_em) = match classifier {
                Classifier::Crf => crf_nll_backward(&emissions, gold, &mut head.crf, scale * w)?,
                Classifier::Softmax => softmax_nll_backward(&emissions, gold, scale * w)?,
            };
            total_loss += w * loss;
            let d_hfeats = project_backward(&mut head.crf, &hfeats, &d_em);
            let d_head_in = match (&mut head.blstm, hcache) {
                (Some(b), Some(c)) => blstm_backward(&c, b, &d_hfeats),
                _ => d_hfeats,
            };
            for (acc, d) in d_feats.iter_mut().zip(&d_head_in) {
                for (a, b) in acc.iter_mut().zip(d) {
                    *a += b;
                }
            }
        }

        let dxs = blstm_backward(&shared_cache, shared_blstm, &d_feats);
        for t in 0..len {
            let row = es.word_ids[t] as usize;
            for k in 0..dim {
                enc.word_emb.add_grad(row * dim + k, dxs[t][k]);
            }
            char_cnn_backward(&cnn_caches[t], char_table, &mut enc.cnn, &dxs[t][dim..]);
        }
        Ok(total_loss)
    }

    /// Forward-only loss with dropout off; the function the gradient
    /// checker differentiates.
    pub fn sentence_loss(&self, enc_idx: usize, sentence: &Sentence) -> Result<f64, ModelError> {
        let es = self.encode_sentence(enc_idx, sentence);
        let mut rng = seeded_rng(0, "eval");
        let enc = &self.encoders[enc_idx];
        let (xs, _) =
            Self::embed_tokens(&self.char_table, enc, self.config.embed_dim, &es, 0.0, false, &mut rng);
        let (feats, _) = blstm_forward(&xs, &self.shared_blstm, 0.0, 0.0, false, &mut rng);
        let mut total = 0.0;
        for head in &self.heads {
            if head.encoder != enc_idx || head.loss_weight == 0.0 {
                continue;
            }
            let gold = sentence
                .tags
                .get(&head.task)
                .ok_or(ModelError::MissingTaskColumn(head.task))?;
            let hfeats = match &head.blstm {
                Some(b) => blstm_forward(&feats, b, 0.0, 0.0, false, &mut rng).0,
                None => feats.clone(),
            };
            let emissions = head.crf.emissions(&hfeats);
            let loss = match self.config.classifier {
                Classifier::Crf => crf_nll(&emissions, gold, &head.crf)?,
                Classifier::Softmax => softmax_nll(&emissions, gold)?,
            };
            total += head.loss_weight * loss;
        }
        Ok(total)
    }

    /// Decodes one sentence with the given head (no dropout, no RNG).
    pub fn predict(&self, head_idx: usize, sentence: &Sentence) -> Vec<u32> {
        let head = &self.heads[head_idx];
        let es = self.encode_sentence(head.encoder, sentence);
        let mut rng = seeded_rng(0, "eval");
        let enc = &self.encoders[head.encoder];
        let (xs, _) =
            Self::embed_tokens(&self.char_table, enc, self.config.embed_dim, &es, 0.0, false, &mut rng);
        let (feats, _) = blstm_forward(&xs, &self.shared_blstm, 0.0, 0.0, false, &mut rng);
        let hfeats = match &head.blstm {
            Some(b) => blstm_forward(&feats, b, 0.0, 0.0, false, &mut rng).0,
            None => feats,
        };
        let emissions = head.crf.emissions(&hfeats);
        match self.config.classifier {
            Classifier::Crf => crf_viterbi(&emissions, &head.crf),
            Classifier::Softmax => emissions
                .iter()
                .map(|row| {
                    row.iter()
                        .enumerate()
                        .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite emission"))
                        .map(|(k, _)| k as u32)
                        .expect("non-empty tag set")
                })
                .collect(),
        }
    }

    /// Sets per-task loss weights (multitask masking). Heads whose task is
    /// absent from the map keep their current weight.
    pub fn set_task_weights(&mut self, weights: &BTreeMap<Task, f64>) {
        for h in &mut self.heads {
            if let Some(&w) = weights.get(&h.task) {
                h.loss_weight = w;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::parse_corpus;

    fn tiny_table(words: &[&str], dim: usize, seed: u64) -> EmbeddingTable {
        use rand::Rng;
        let mut rng = seeded_rng(seed, "tiny-table");
        let rows: Vec<f32> = (0..words.len() * dim).map(|_| rng.gen_range(-0.5..0.5)).collect();
        EmbeddingTable::from_word_rows(words.iter().map(|s| s.to_string()).collect(), dim, rows)
    }

    fn tiny_corpus() -> crate::corpus::Corpus {
        parse_corpus(
            "ab\tX\ncd\tY\nef\tX\n\ncd\tY\nab\tX\n\n",
            &[Task::Pos],
        )
        .unwrap()
    }

    fn mtl_corpus() -> crate::corpus::Corpus {
        parse_corpus(
            "ab\tX\tM\tS\ncd\tY\tF\tP\nef\tX\tM\tP\n\ncd\tY\tF\tS\nab\tX\tM\tS\n\n",
            &[Task::Pos, Task::Gender, Task::Number],
        )
        .unwrap()
    }

    fn small_cfg() -> TaggerConfig {
        TaggerConfig {
            lstm_size: 3,
            embed_dim: 4,
            char_dim: 3,
            cnn_filters: 2,
            cnn_window: 3,
            dropout: 0.0,
            seed: 5,
            ..Default::default()
        }
    }

    #[test]
    fn default_single_has_input_width_158() {
        let c = tiny_corpus();
        let vocab = Vocabulary::from_sentences(&c.sentences);
        let table = tiny_table(&["ab", "cd", "ef"], 128, 1);
        let model =
            build_single(&TaggerConfig::default(), &vocab, &c.tagsets[&Task::Pos], &table)
                .unwrap();
        assert_eq!(model.shared_blstm.fwd.d_in, 158);
        assert_eq!(model.shared_blstm.out_dim(), 200);
    }

    #[test]
    fn one_tag_model_has_zero_loss() {
        let c = parse_corpus("ab\tX\ncd\tX\n\n", &[Task::Pos]).unwrap();
        let vocab = Vocabulary::from_sentences(&c.sentences);
        let table = tiny_table(&["ab", "cd"], 4, 2);
        let model = build_single(&small_cfg(), &vocab, &c.tagsets[&Task::Pos], &table).unwrap();
        let loss = model.sentence_loss(0, &c.sentences[0]).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn empty_word_table_is_a_construction_error() {
        let c = tiny_corpus();
        let vocab = Vocabulary::from_sentences(&c.sentences);
        let table = EmbeddingTable::from_word_rows(vec![], 4, vec![]);
        assert!(matches!(
            build_single(&small_cfg(), &vocab, &c.tagsets[&Task::Pos], &table),
            Err(ModelError::EmptyWordTable)
        ));
    }

    #[test]
    fn dim_mismatch_is_a_construction_error() {
        let c = tiny_corpus();
        let vocab = Vocabulary::from_sentences(&c.sentences);
        let table = tiny_table(&["ab"], 7, 3);
        assert!(matches!(
            build_single(&small_cfg(), &vocab, &c.tagsets[&Task::Pos], &table),
            Err(ModelError::EmbedDimMismatch { expected: 4, found: 7 })
        ));
    }

    #[test]
    fn mtl_requires_all_three_tasks() {
        let c = tiny_corpus();
        let vocab = Vocabulary::from_sentences(&c.sentences);
        let table = tiny_table(&["ab"], 4, 4);
        let err = build_mtl(&small_cfg(), &vocab, &c.tagsets, &table).unwrap_err();
        assert!(matches!(err, ModelError::MissingTask(Task::Gender)));
    }

    fn grad_norm_of(model: &TaggerModel, prefix: &str) -> f64 {
        model
            .params()
            .iter()
            .filter(|(n, _)| n.starts_with(prefix))
            .flat_map(|(_, t)| t.grad().unwrap_or(&[]).iter())
            .map(|&g| f64::from(g) * f64::from(g))
            .sum::<f64>()
            .sqrt()
    }

    #[test]
    fn masked_heads_receive_no_gradient_and_shared_receives_all() {
        let c = mtl_corpus();
        let vocab = Vocabulary::from_sentences(&c.sentences);
        let table = tiny_table(&["ab", "cd", "ef"], 4, 5);
        let mut model = build_mtl(&small_cfg(), &vocab, &c.tagsets, &table).unwrap();
        model.set_task_weights(&BTreeMap::from([
            (Task::Pos, 0.0),
            (Task::Gender, 1.0),
            (Task::Number, 1.0),
        ]));
        let mut rng = seeded_rng(1, "t");
        model.zero_grads();
        model.sentence_pass(0, &c.sentences[0], 1.0, &mut rng).unwrap();
        assert_eq!(grad_norm_of(&model, "head.pos"), 0.0);
        assert!(grad_norm_of(&model, "head.gender") > 0.0);
        assert!(grad_norm_of(&model, "blstm") > 0.0);

        // All three heads move the shared BLSTM when unmasked.
        model.set_task_weights(&BTreeMap::from([(Task::Pos, 1.0)]));
        model.zero_grads();
        model.sentence_pass(0, &c.sentences[0], 1.0, &mut rng).unwrap();
        assert!(grad_norm_of(&model, "head.pos") > 0.0);
        assert!(grad_norm_of(&model, "blstm") > 0.0);
    }

    #[test]
    fn transfer_heads_are_isolated_per_language() {
        let ca = tiny_corpus();
        let cb = parse_corpus("gh\tZ\nij\tW\n\nij\tW\n\n", &[Task::Pos]).unwrap();
        let va = Vocabulary::from_sentences(&ca.sentences);
        let vb = Vocabulary::from_sentences(&cb.sentences);
        let ta = tiny_table(&["ab", "cd"], 4, 6);
        let tb = tiny_table(&["gh", "ij"], 4, 7);
        let mut model = build_transfer(
            &small_cfg(),
            [
                TransferLang { key: "hi", vocab: &va, tagset: &ca.tagsets[&Task::Pos], word_table: &ta },
                TransferLang { key: "ne", vocab: &vb, tagset: &cb.tagsets[&Task::Pos], word_table: &tb },
            ],
        )
        .unwrap();
        let mut rng = seeded_rng(2, "t");
        model.zero_grads();
        model.sentence_pass(0, &ca.sentences[0], 1.0, &mut rng).unwrap();
        assert!(grad_norm_of(&model, "head.hi") > 0.0);
        assert_eq!(grad_norm_of(&model, "head.ne"), 0.0);
        assert_eq!(grad_norm_of(&model, "enc.ne"), 0.0);
        let shared_from_a = grad_norm_of(&model, "blstm");
        assert!(shared_from_a > 0.0);

        model.zero_grads();
        model.sentence_pass(1, &cb.sentences[0], 1.0, &mut rng).unwrap();
        assert!(grad_norm_of(&model, "head.ne") > 0.0);
        assert_eq!(grad_norm_of(&model, "head.hi"), 0.0);
        assert!(grad_norm_of(&model, "blstm") > 0.0);
    }

    #[test]
    fn swapping_other_language_head_leaves_predictions_unchanged() {
        let ca = tiny_corpus();
        let cb = parse_corpus("gh\tZ\nij\tW\n\nij\tW\n\n", &[Task::Pos]).unwrap();
        let va = Vocabulary::from_sentences(&ca.sentences);
        let vb = Vocabulary::from_sentences(&cb.sentences);
        let ta = tiny_table(&["ab", "cd"], 4, 8);
        let tb = tiny_table(&["gh", "ij"], 4, 9);
        let build = |seed: u64| {
            build_transfer(
                &TaggerConfig { seed, ..small_cfg() },
                [
                    TransferLang { key: "hi", vocab: &va, tagset: &ca.tagsets[&Task::Pos], word_table: &ta },
                    TransferLang { key: "ne", vocab: &vb, tagset: &cb.tagsets[&Task::Pos], word_table: &tb },
                ],
            )
            .unwrap()
        };
        let model = build(5);
        let mut swapped = build(5);
        let donor = build(99);
        swapped.heads[1] = donor.heads[1].clone();
        for s in &ca.sentences {
            assert_eq!(model.predict(0, s), swapped.predict(0, s));
        }
    }

    #[test]
    fn predictions_are_deterministic() {
        let c = tiny_corpus();
        let vocab = Vocabulary::from_sentences(&c.sentences);
        let table = tiny_table(&["ab", "cd", "ef"], 4, 10);
        let model = build_single(&small_cfg(), &vocab, &c.tagsets[&Task::Pos], &table).unwrap();
        let a = model.predict(0, &c.sentences[0]);
        let b = model.predict(0, &c.sentences[0]);
        assert_eq!(a, b);
        assert_eq!(a.len(), c.sentences[0].len());
    }

    #[test]
    fn param_views_agree_and_are_ordered() {
        let c = tiny_corpus();
        let vocab = Vocabulary::from_sentences(&c.sentences);
        let table = tiny_table(&["ab"], 4, 11);
        let mut model = build_single(&small_cfg(), &vocab, &c.tagsets[&Task::Pos], &table).unwrap();
        let names: Vec<String> = model.params().into_iter().map(|(n, _)| n).collect();
        let names_mut: Vec<String> = model.params_mut().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, names_mut);
        assert!(names.contains(&"blstm.fwd.w_i".to_string()));
        assert!(names.contains(&"head.pos.crf.trans".to_string()));
        // Frozen word embeddings are excluded from the trainable view.
        assert!(model
            .trainable_params()
            .iter()
            .all(|(n, _)| !n.ends_with("word_emb")));
    }
}
