//! Subword (character n-gram) skip-gram embeddings with negative sampling,
//! and the portable `.vec` text interchange format.
//!
//! A word's vector is the sum of its whole-word row and the rows of all its
//! character n-grams; out-of-vocabulary words fall back to the n-gram sum
//! alone. N-grams are hashed with FNV-1a 64 reduced modulo the bucket count.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use rand::Rng;
use thiserror::Error;

use crate::util::{fnv1a64, seeded_rng};

/// Character n-gram configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct NgramConfig {
    pub min_n: usize,
    pub max_n: usize,
    pub bucket_count: usize,
    /// When true, words are wrapped in `<` `>` before n-gram extraction
    /// (the upstream tool's convention). Off by default: n-grams ignore
    /// word boundaries.
    pub boundary_markers: bool,
}

impl Default for NgramConfig {
    fn default() -> Self {
        NgramConfig {
            min_n: 3,
            max_n: 6,
            bucket_count: 2_000_000,
            boundary_markers: false,
        }
    }
}

/// Skip-gram training configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct SkipgramConfig {
    pub window: usize,
    pub negatives: usize,
    pub learning_rate: f32,
    pub epochs: usize,
    pub min_count: u32,
    pub seed: u64,
}

impl Default for SkipgramConfig {
    fn default() -> Self {
        SkipgramConfig {
            window: 5,
            negatives: 5,
            learning_rate: 0.05,
            epochs: 5,
            min_count: 1,
            seed: 42,
        }
    }
}

/// Vocabulary-indexed dense vectors: whole-word rows plus hashed n-gram rows.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    dim: usize,
    words: Vec<String>,
    index: HashMap<String, usize>,
    counts: Vec<u32>,
    word_rows: Vec<f32>,
    ngram_rows: Vec<f32>,
    ngram_cfg: NgramConfig,
}

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("line {line}: expected {expected} values, found {found}")]
    DimMismatch { line: usize, expected: usize, found: usize },
    #[error("line {line}: {what}")]
    Parse { line: usize, what: String },
    #[error("empty vocabulary after min-count filter")]
    EmptyVocabulary,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// All contiguous substrings of character length min_n..=max_n, in
/// left-to-right order (shorter n first at each position is not required;
/// enumeration is by n then position).
pub fn extract_ngrams(word: &str, cfg: &NgramConfig) -> Vec<String> {
    let decorated;
    let chars: Vec<char> = if cfg.boundary_markers {
        decorated = format!("<{word}>");
        decorated.chars().collect()
    } else {
        word.chars().collect()
    };
    let mut out = Vec::new();
    for n in cfg.min_n..=cfg.max_n {
        if n > chars.len() {
            break;
        }
        for start in 0..=chars.len() - n {
            out.push(chars[start..start + n].iter().collect());
        }
    }
    out
}

/// Hash bucket of an n-gram: FNV-1a 64-bit mod bucket_count.
pub fn ngram_bucket(ngram: &str, bucket_count: usize) -> usize {
    (fnv1a64(ngram.as_bytes()) % bucket_count as u64) as usize
}

impl EmbeddingTable {
    /// A table with the given word rows and no n-gram rows (n-gram lookups
    /// become no-ops). Rows are `words.len() × dim`, row-major.
    pub fn from_word_rows(words: Vec<String>, dim: usize, rows: Vec<f32>) -> EmbeddingTable {
        assert_eq!(rows.len(), words.len() * dim);
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        let counts = vec![1; words.len()];
        EmbeddingTable {
            dim,
            words,
            index,
            counts,
            word_rows: rows,
            ngram_rows: Vec::new(),
            ngram_cfg: NgramConfig { bucket_count: 1, ..NgramConfig::default() },
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn ngram_config(&self) -> &NgramConfig {
        &self.ngram_cfg
    }

    /// The stored whole-word row, if the word is in vocabulary.
    pub fn word_row(&self, word: &str) -> Option<&[f32]> {
        self.index
            .get(word)
            .map(|&i| &self.word_rows[i * self.dim..(i + 1) * self.dim])
    }

    /// Composed vector using the stored n-gram configuration.
    pub fn word_vector(&self, word: &str) -> Vec<f32> {
        word_vector(word, self, &self.ngram_cfg)
    }

    /// Folds n-gram rows into the word rows, producing a word-only table
    /// whose rows are the composed vectors. This is what gets exported for
    /// downstream consumers.
    pub fn compose_words(&self) -> EmbeddingTable {
        let mut rows = Vec::with_capacity(self.words.len() * self.dim);
        for w in &self.words {
            rows.extend(self.word_vector(w));
        }
        EmbeddingTable {
            dim: self.dim,
            words: self.words.clone(),
            index: self.index.clone(),
            counts: self.counts.clone(),
            word_rows: rows,
            ngram_rows: Vec::new(),
            ngram_cfg: NgramConfig { bucket_count: 1, ..self.ngram_cfg.clone() },
        }
    }
}

/// Word vector composition: word row plus the sum of its n-gram rows.
/// Out-of-vocabulary words yield the n-gram sum alone (zero when no n-gram
/// row exists).
pub fn word_vector(word: &str, table: &EmbeddingTable, cfg: &NgramConfig) -> Vec<f32> {
    let mut v = vec![0.0f32; table.dim];
    if let Some(row) = table.word_row(word) {
        for (a, &b) in v.iter_mut().zip(row) {
            *a += b;
        }
    }
    if !table.ngram_rows.is_empty() {
        for g in extract_ngrams(word, cfg) {
            let b = ngram_bucket(&g, cfg.bucket_count);
            let row = &table.ngram_rows[b * table.dim..(b + 1) * table.dim];
            for (a, &b) in v.iter_mut().zip(row) {
                *a += b;
            }
        }
    }
    v
}

/// Per-epoch running-average losses from skip-gram training.
#[derive(Debug, Clone)]
pub struct TrainStats {
    pub epoch_loss: Vec<f64>,
}

/// Trains subword skip-gram embeddings with negative sampling.
/// Single-threaded and bit-deterministic under a fixed seed.
pub fn train_skipgram(
    sentences: &[Vec<String>],
    cfg: &SkipgramConfig,
    ncfg: &NgramConfig,
    dim: usize,
) -> Result<(EmbeddingTable, TrainStats), EmbeddingError> {
    assert!(dim >= 1 && cfg.window >= 1 && cfg.negatives >= 1);

    // Vocabulary in first-occurrence order.
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut words: Vec<String> = Vec::new();
    let mut counts: Vec<u32> = Vec::new();
    for s in sentences {
        for tok in s {
            match index.get(tok) {
                Some(&i) => counts[i] += 1,
                None => {
                    index.insert(tok.clone(), words.len());
                    words.push(tok.clone());
                    counts.push(1);
                }
            }
        }
    }
    let keep: Vec<bool> = counts.iter().map(|&c| c >= cfg.min_count).collect();
    let mut remap: Vec<Option<usize>> = vec![None; words.len()];
    let mut kept_words = Vec::new();
    let mut kept_counts = Vec::new();
    for (i, w) in words.iter().enumerate() {
        if keep[i] {
            remap[i] = Some(kept_words.len());
            kept_words.push(w.clone());
            kept_counts.push(counts[i]);
        }
    }
    if kept_words.is_empty() {
        return Err(EmbeddingError::EmptyVocabulary);
    }
    let vocab_len = kept_words.len();
    let index: HashMap<String, usize> = kept_words
        .iter()
        .enumerate()
        .map(|(i, w)| (w.clone(), i))
        .collect();

    // Sentences as kept-word id streams.
    let id_sentences: Vec<Vec<usize>> = sentences
        .iter()
        .map(|s| {
            s.iter()
                .filter_map(|tok| index.get(tok).copied())
                .collect()
        })
        .collect();

    // Precomputed n-gram buckets per word.
    let ngrams: Vec<Vec<usize>> = kept_words
        .iter()
        .map(|w| {
            extract_ngrams(w, ncfg)
                .iter()
                .map(|g| ngram_bucket(g, ncfg.bucket_count))
                .collect()
        })
        .collect();

    // Negative-sampling table: unigram counts raised to 3/4, cumulative.
    let mut cum = Vec::with_capacity(vocab_len);
    let mut total = 0.0f64;
    for &c in &kept_counts {
        total += f64::from(c).powf(0.75);
        cum.push(total);
    }

    let mut rng = seeded_rng(cfg.seed, "skipgram");
    let mut word_rows = vec![0.0f32; vocab_len * dim];
    let bound = 1.0 / dim as f64;
    for v in &mut word_rows {
        *v = rng.gen_range(-bound..bound) as f32;
    }
    // Untrained buckets stay exactly zero.
    let mut ngram_rows = vec![0.0f32; ncfg.bucket_count * dim];
    let mut out_rows = vec![0.0f32; vocab_len * dim];

    let pairs_per_epoch: usize = id_sentences
        .iter()
        .map(|s| {
            (0..s.len())
                .map(|t| {
                    let lo = t.saturating_sub(cfg.window);
                    let hi = (t + cfg.window).min(s.len() - 1);
                    hi - lo
                })
                .sum::<usize>()
        })
        .sum();
    let total_pairs = (pairs_per_epoch * cfg.epochs).max(1);

    let sample_negative = |rng: &mut rand_chacha::ChaCha8Rng, exclude: usize| -> usize {
        loop {
            let r = rng.gen::<f64>() * total;
            let i = cum.partition_point(|&c| c <= r).min(vocab_len - 1);
            if i != exclude {
                return i;
            }
            if vocab_len == 1 {
                return i;
            }
        }
    };

    let lr0 = f64::from(cfg.learning_rate);
    let mut processed = 0usize;
    let mut stats = TrainStats { epoch_loss: Vec::with_capacity(cfg.epochs) };
    let mut hidden = vec![0.0f64; dim];
    let mut hidden_grad = vec![0.0f64; dim];

    for _epoch in 0..cfg.epochs {
        let mut loss_sum = 0.0f64;
        let mut loss_n = 0usize;
        for sent in &id_sentences {
            for (t, &center) in sent.iter().enumerate() {
                let lo = t.saturating_sub(cfg.window);
                let hi = (t + cfg.window).min(sent.len().saturating_sub(1));
                for u in lo..=hi {
                    if u == t {
                        continue;
                    }
                    let target = sent[u];
                    let lr = lr0 * (1.0 - processed as f64 / total_pairs as f64).max(1e-4);
                    processed += 1;

                    // Compose the center representation.
                    let wrow = &word_rows[center * dim..(center + 1) * dim];
                    for (h, &w) in hidden.iter_mut().zip(wrow) {
                        *h = f64::from(w);
                    }
                    for &b in &ngrams[center] {
                        let row = &ngram_rows[b * dim..(b + 1) * dim];
                        for (h, &w) in hidden.iter_mut().zip(row) {
                            *h += f64::from(w);
                        }
                    }
                    hidden_grad.fill(0.0);

                    let mut pair_loss = 0.0;
                    for neg in 0..=cfg.negatives {
                        let (out_idx, label) = if neg == 0 {
                            (target, 1.0)
                        } else {
                            (sample_negative(&mut rng, target), 0.0)
                        };
                        let orow = &mut out_rows[out_idx * dim..(out_idx + 1) * dim];
                        let mut score = 0.0f64;
                        for (h, &o) in hidden.iter().zip(orow.iter()) {
                            score += h * f64::from(o);
                        }
                        let sig = 1.0 / (1.0 + (-score).exp());
                        pair_loss -= if label == 1.0 {
                            sig.max(1e-12).ln()
                        } else {
                            (1.0 - sig).max(1e-12).ln()
                        };
                        let g = sig - label; // d loss / d score
                        for k in 0..dim {
                            hidden_grad[k] += g * f64::from(orow[k]);
                            orow[k] = (f64::from(orow[k]) - lr * g * hidden[k]) as f32;
                        }
                    }
                    loss_sum += pair_loss;
                    loss_n += 1;

                    // Distribute the hidden gradient to all constituents.
                    let wrow = &mut word_rows[center * dim..(center + 1) * dim];
                    for (w, &g) in wrow.iter_mut().zip(&hidden_grad) {
                        *w = (f64::from(*w) - lr * g) as f32;
                    }
                    for &b in &ngrams[center] {
                        let row = &mut ngram_rows[b * dim..(b + 1) * dim];
                        for (w, &g) in row.iter_mut().zip(&hidden_grad) {
                            *w = (f64::from(*w) - lr * g) as f32;
                        }
                    }
                }
            }
        }
        stats.epoch_loss.push(if loss_n > 0 { loss_sum / loss_n as f64 } else { 0.0 });
        debug_assert!(
            word_rows.iter().all(|v| v.is_finite())
                && ngram_rows.iter().all(|v| v.is_finite()),
            "non-finite embedding after epoch"
        );
    }

    Ok((
        EmbeddingTable {
            dim,
            words: kept_words,
            index,
            counts: kept_counts,
            word_rows,
            ngram_rows,
            ngram_cfg: ncfg.clone(),
        },
        stats,
    ))
}

/// Formats a value with 6 significant digits, shortest decimal form.
fn fmt_sig6(v: f32) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let a = f64::from(v);
    let exp = a.abs().log10().floor() as i32;
    let scale = 10f64.powi(5 - exp);
    let rounded = (a * scale).round() / scale;
    format!("{rounded}")
}

/// Writes word rows in the text vector format: header `<count> <dim>`, then
/// one `word v1 … vdim` line per word, most frequent first.
pub fn write_vec(table: &EmbeddingTable, mut w: impl Write) -> std::io::Result<()> {
    let mut order: Vec<usize> = (0..table.words.len()).collect();
    order.sort_by(|&a, &b| table.counts[b].cmp(&table.counts[a]).then(a.cmp(&b)));
    writeln!(w, "{} {}", table.words.len(), table.dim)?;
    for i in order {
        write!(w, "{}", table.words[i])?;
        for k in 0..table.dim {
            write!(w, " {}", fmt_sig6(table.word_rows[i * table.dim + k]))?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Reads the text vector format back into a word-only table.
pub fn read_vec(r: impl BufRead) -> Result<EmbeddingTable, EmbeddingError> {
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| EmbeddingError::Parse { line: 1, what: "missing header".into() })??;
    let mut it = header.split_whitespace();
    let count: usize = it
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| EmbeddingError::Parse { line: 1, what: "bad word count".into() })?;
    let dim: usize = it
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| EmbeddingError::Parse { line: 1, what: "bad dimension".into() })?;

    let mut words = Vec::with_capacity(count);
    let mut rows = Vec::with_capacity(count * dim);
    for (i, line) in lines.enumerate() {
        let line = line?;
        let lineno = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let word = parts
            .next()
            .ok_or_else(|| EmbeddingError::Parse { line: lineno, what: "missing word".into() })?;
        let values: Vec<f32> = parts
            .map(|p| {
                p.parse::<f32>().map_err(|_| EmbeddingError::Parse {
                    line: lineno,
                    what: format!("bad number '{p}'"),
                })
            })
            .collect::<Result<_, _>>()?;
        if values.len() != dim {
            return Err(EmbeddingError::DimMismatch {
                line: lineno,
                expected: dim,
                found: values.len(),
            });
        }
        words.push(word.to_string());
        rows.extend(values);
    }
    Ok(EmbeddingTable::from_word_rows(words, dim, rows))
}
