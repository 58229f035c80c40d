//! Versioned binary model files.
//!
//! Layout: magic `SQTM`, format version (u32 LE), mode byte, a config
//! snapshot, the character inventory, per-encoder vocabularies, per-head
//! tag sets, then named tensor records (name, shape, little-endian f32
//! values). Loading a saved model reproduces bit-identical predictions.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use super::{Classifier, Encoder, Head, ModelMode, TaggerConfig, TaggerModel};
use crate::corpus::{TagSet, Task};
use crate::neural::{BlstmParams, CnnParams, CrfParams, Tensor};

const MAGIC: &[u8; 4] = b"SQTM";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelIoError {
    #[error("not a model file (bad magic)")]
    BadMagic,
    #[error("unsupported model format version {0} (expected {VERSION})")]
    UnsupportedVersion(u32),
    #[error("corrupt model file: {0}")]
    Corrupt(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

fn corrupt(msg: impl Into<String>) -> ModelIoError {
    ModelIoError::Corrupt(msg.into())
}

struct Writer<W: Write> {
    w: W,
}

impl<W: Write> Writer<W> {
    fn u8(&mut self, v: u8) -> Result<(), ModelIoError> {
        self.w.write_all(&[v])?;
        Ok(())
    }

    fn u32(&mut self, v: u32) -> Result<(), ModelIoError> {
        self.w.write_all(&v.to_le_bytes())?;
        Ok(())
    }

    fn u64(&mut self, v: u64) -> Result<(), ModelIoError> {
        self.w.write_all(&v.to_le_bytes())?;
        Ok(())
    }

    fn string(&mut self, s: &str) -> Result<(), ModelIoError> {
        self.u32(s.len() as u32)?;
        self.w.write_all(s.as_bytes())?;
        Ok(())
    }

    fn strings(&mut self, ss: &[String]) -> Result<(), ModelIoError> {
        self.u32(ss.len() as u32)?;
        for s in ss {
            self.string(s)?;
        }
        Ok(())
    }

    fn tensor(&mut self, name: &str, t: &Tensor) -> Result<(), ModelIoError> {
        self.string(name)?;
        self.u8(t.shape().len() as u8)?;
        for &d in t.shape() {
            self.u32(d as u32)?;
        }
        for &v in t.values() {
            self.w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }
}

struct Reader<R: Read> {
    r: R,
}

impl<R: Read> Reader<R> {
    fn u8(&mut self) -> Result<u8, ModelIoError> {
        let mut b = [0u8; 1];
        self.r.read_exact(&mut b)?;
        Ok(b[0])
    }

    fn u32(&mut self) -> Result<u32, ModelIoError> {
        let mut b = [0u8; 4];
        self.r.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    fn u64(&mut self) -> Result<u64, ModelIoError> {
        let mut b = [0u8; 8];
        self.r.read_exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    fn string(&mut self) -> Result<String, ModelIoError> {
        let len = self.u32()? as usize;
        if len > 1 << 30 {
            return Err(corrupt("string length out of range"));
        }
        let mut buf = vec![0u8; len];
        self.r.read_exact(&mut buf)?;
        String::from_utf8(buf).map_err(|_| corrupt("invalid utf-8 string"))
    }

    fn strings(&mut self) -> Result<Vec<String>, ModelIoError> {
        let n = self.u32()? as usize;
        (0..n).map(|_| self.string()).collect()
    }

    fn tensor(&mut self) -> Result<(String, Vec<usize>, Vec<f32>), ModelIoError> {
        let name = self.string()?;
        let ndim = self.u8()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(self.u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut values = Vec::with_capacity(numel);
        let mut buf = [0u8; 4];
        for _ in 0..numel {
            self.r.read_exact(&mut buf)?;
            values.push(f32::from_le_bytes(buf));
        }
        Ok((name, shape, values))
    }
}

fn mode_byte(mode: ModelMode) -> u8 {
    match mode {
        ModelMode::Single => 0,
        ModelMode::Mtl => 1,
        ModelMode::Transfer => 2,
    }
}

fn task_byte(task: Task) -> u8 {
    match task {
        Task::Pos => 0,
        Task::Gender => 1,
        Task::Number => 2,
    }
}

fn config_text(cfg: &TaggerConfig) -> String {
    let classifier = match cfg.classifier {
        Classifier::Crf => "crf",
        Classifier::Softmax => "softmax",
    };
    format!(
        "dropout = {}\nlstm_size = {}\nembed_dim = {}\nchar_dim = {}\n\
         cnn_window = {}\ncnn_filters = {}\nclassifier = {classifier}\n\
         mtl_head_blstm = {}\nfreeze_word_embeddings = {}\nseed = {}\n",
        cfg.dropout,
        cfg.lstm_size,
        cfg.embed_dim,
        cfg.char_dim,
        cfg.cnn_window,
        cfg.cnn_filters,
        cfg.mtl_head_blstm,
        cfg.freeze_word_embeddings,
        cfg.seed
    )
}

fn parse_config_text(text: &str) -> Result<TaggerConfig, ModelIoError> {
    let mut map = BTreeMap::new();
    for line in text.lines() {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| corrupt(format!("bad config line '{line}'")))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    let get = |k: &str| -> Result<&String, ModelIoError> {
        map.get(k).ok_or_else(|| corrupt(format!("missing config key '{k}'")))
    };
    let parse = |k: &str| -> Result<usize, ModelIoError> {
        get(k)?.parse().map_err(|_| corrupt(format!("bad value for '{k}'")))
    };
    Ok(TaggerConfig {
        dropout: get("dropout")?
            .parse()
            .map_err(|_| corrupt("bad value for 'dropout'"))?,
        lstm_size: parse("lstm_size")?,
        embed_dim: parse("embed_dim")?,
        char_dim: parse("char_dim")?,
        cnn_window: parse("cnn_window")?,
        cnn_filters: parse("cnn_filters")?,
        classifier: match get("classifier")?.as_str() {
            "crf" => Classifier::Crf,
            "softmax" => Classifier::Softmax,
            other => return Err(corrupt(format!("unknown classifier '{other}'"))),
        },
        mtl_head_blstm: get("mtl_head_blstm")?
            .parse()
            .map_err(|_| corrupt("bad value for 'mtl_head_blstm'"))?,
        freeze_word_embeddings: get("freeze_word_embeddings")?
            .parse()
            .map_err(|_| corrupt("bad value for 'freeze_word_embeddings'"))?,
        seed: get("seed")?.parse().map_err(|_| corrupt("bad value for 'seed'"))?,
    })
}

/// Serializes the model to `path`.
pub fn save_model(model: &TaggerModel, path: impl AsRef<Path>) -> Result<(), ModelIoError> {
    let file = File::create(path)?;
    let mut w = Writer { w: BufWriter::new(file) };
    w.w.write_all(MAGIC)?;
    w.u32(VERSION)?;
    w.u8(mode_byte(model.mode))?;
    w.string(&config_text(&model.config))?;

    w.u32(model.chars.len() as u32)?;
    for &c in &model.chars {
        w.u32(c as u32)?;
    }

    w.u32(model.encoders.len() as u32)?;
    for e in &model.encoders {
        w.string(&e.key)?;
        w.strings(&e.words)?;
    }

    w.u32(model.heads.len() as u32)?;
    for h in &model.heads {
        w.string(&h.key)?;
        w.u8(task_byte(h.task))?;
        w.u32(h.encoder as u32)?;
        w.u8(u8::from(h.blstm.is_some()))?;
        w.strings(h.tagset.names())?;
    }

    let params = model.params();
    w.u64(params.len() as u64)?;
    for (name, t) in params {
        w.tensor(&name, t)?;
    }
    w.w.flush()?;
    Ok(())
}

/// Loads a model saved by [`save_model`].
pub fn load_model(path: impl AsRef<Path>) -> Result<TaggerModel, ModelIoError> {
    let file = File::open(path)?;
    let mut r = Reader { r: BufReader::new(file) };

    let mut magic = [0u8; 4];
    r.r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(ModelIoError::BadMagic);
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(ModelIoError::UnsupportedVersion(version));
    }
    let mode = match r.u8()? {
        0 => ModelMode::Single,
        1 => ModelMode::Mtl,
        2 => ModelMode::Transfer,
        other => return Err(corrupt(format!("unknown mode byte {other}"))),
    };
    let config = parse_config_text(&r.string()?)?;

    let n_chars = r.u32()? as usize;
    let mut chars = Vec::with_capacity(n_chars);
    for _ in 0..n_chars {
        let code = r.u32()?;
        chars.push(char::from_u32(code).ok_or_else(|| corrupt("invalid char codepoint"))?);
    }
    let char_index: BTreeMap<char, u32> = chars
        .iter()
        .enumerate()
        .map(|(i, &c)| (c, i as u32 + 2))
        .collect();

    let n_enc = r.u32()? as usize;
    let mut encoders = Vec::with_capacity(n_enc);
    for _ in 0..n_enc {
        let key = r.string()?;
        let words = r.strings()?;
        let word_index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as u32 + 2))
            .collect();
        let mut word_emb =
            Tensor::zeros(&[words.len() + 2, config.embed_dim]);
        if !config.freeze_word_embeddings {
            word_emb = word_emb.trainable();
        }
        encoders.push(Encoder {
            cnn: CnnParams::new(
                config.cnn_filters,
                config.cnn_window,
                config.char_dim,
                config.seed,
                &format!("enc.{key}.cnn"),
            ),
            key,
            words,
            word_index,
            word_emb,
        });
    }

    let n_heads = r.u32()? as usize;
    let mut heads = Vec::with_capacity(n_heads);
    for _ in 0..n_heads {
        let key = r.string()?;
        let task = match r.u8()? {
            0 => Task::Pos,
            1 => Task::Gender,
            2 => Task::Number,
            other => return Err(corrupt(format!("unknown task byte {other}"))),
        };
        let encoder = r.u32()? as usize;
        if encoder >= encoders.len() {
            return Err(corrupt("head references missing encoder"));
        }
        let has_blstm = r.u8()? != 0;
        let names = r.strings()?;
        let mut tagset = TagSet::new(task);
        for n in &names {
            tagset.intern(n);
        }
        let feat_dim = 2 * config.lstm_size;
        heads.push(Head {
            blstm: has_blstm.then(|| {
                BlstmParams::new(feat_dim, config.lstm_size, config.seed, &format!("head.{key}.blstm"))
            }),
            crf: CrfParams::new(feat_dim, tagset.len(), config.seed, &format!("head.{key}.crf")),
            key,
            task,
            encoder,
            tagset,
            loss_weight: 1.0,
        });
    }

    let shared_blstm = BlstmParams::new(
        config.embed_dim + config.cnn_filters,
        config.lstm_size,
        config.seed,
        "blstm",
    );
    let char_table = Tensor::zeros(&[chars.len() + 2, config.char_dim]).trainable();
    let mut model = TaggerModel {
        mode,
        char_table,
        config,
        chars,
        char_index,
        encoders,
        shared_blstm,
        heads,
    };

    let n_tensors = r.u64()? as usize;
    let mut records: BTreeMap<String, (Vec<usize>, Vec<f32>)> = BTreeMap::new();
    for _ in 0..n_tensors {
        let (name, shape, values) = r.tensor()?;
        records.insert(name, (shape, values));
    }
    for (name, t) in model.params_mut() {
        let (shape, values) = records
            .remove(&name)
            .ok_or_else(|| corrupt(format!("missing tensor record '{name}'")))?;
        if shape != t.shape() {
            return Err(corrupt(format!(
                "tensor '{name}' has shape {shape:?}, expected {:?}",
                t.shape()
            )));
        }
        t.values_mut().copy_from_slice(&values);
    }
    if let Some(extra) = records.keys().next() {
        return Err(corrupt(format!("unexpected tensor record '{extra}'")));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{parse_corpus, Vocabulary};
    use crate::embeddings::EmbeddingTable;
    use crate::models::build_single;

    fn sample_model() -> (TaggerModel, Vec<crate::corpus::Sentence>) {
        let c = parse_corpus("ab\tX\ncd\tY\n\ncd\tY\nef\tX\n\n", &[Task::Pos]).unwrap();
        let vocab = Vocabulary::from_sentences(&c.sentences);
        use rand::Rng;
        let mut rng = crate::util::seeded_rng(3, "io-table");
        let words: Vec<String> = vocab.words().to_vec();
        let rows: Vec<f32> = (0..words.len() * 4).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let table = EmbeddingTable::from_word_rows(words, 4, rows);
        let cfg = TaggerConfig {
            lstm_size: 3,
            embed_dim: 4,
            char_dim: 3,
            cnn_filters: 2,
            seed: 9,
            ..Default::default()
        };
        let model = build_single(&cfg, &vocab, &c.tagsets[&Task::Pos], &table).unwrap();
        (model, c.sentences)
    }

    #[test]
    fn round_trip_reproduces_predictions() {
        let (model, sentences) = sample_model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        save_model(&model, &path).unwrap();
        let loaded = load_model(&path).unwrap();
        for s in &sentences {
            assert_eq!(model.predict(0, s), loaded.predict(0, s));
        }
        assert_eq!(model.config, loaded.config);
    }

    #[test]
    fn corrupted_magic_is_rejected() {
        let (model, _) = sample_model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        save_model(&model, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(load_model(&path), Err(ModelIoError::BadMagic)));
    }

    #[test]
    fn bumped_version_is_an_explicit_error() {
        let (model, _) = sample_model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        save_model(&model, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4..8].copy_from_slice(&99u32.to_le_bytes());
        std::fs::write(&path, bytes).unwrap();
        match load_model(&path) {
            Err(ModelIoError::UnsupportedVersion(99)) => {}
            other => panic!("expected version error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_file_is_an_error() {
        let (model, _) = sample_model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        save_model(&model, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(load_model(&path).is_err());
    }
}
