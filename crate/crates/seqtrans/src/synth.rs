//! Deterministic twin-language corpus generator.
//!
//! Two "languages" share a latent tag-transition chain and a configurable
//! fraction of their lexicons. Every word has a fixed true tag; with
//! probability `determinism` the word's suffix reveals that tag, otherwise
//! the suffix is consistently misleading. Tags are therefore always
//! recoverable from word identity, and recoverable from the suffix alone
//! exactly when the word is truthful.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Sentence, TagSet, Task};
use crate::util::{fnv1a64, seeded_rng};

/// Shape of the generated twin corpora.
#[derive(Debug, Clone)]
pub struct SynthSpec {
    /// Lexicon size per language (shared + unique words).
    pub vocab_size: usize,
    pub tag_count: usize,
    /// Fraction of word forms shared between the two lexicons, in [0, 1].
    pub overlap: f64,
    /// Probability that a word's suffix encodes its true tag, in [0, 1].
    pub determinism: f64,
    pub min_len: usize,
    pub max_len: usize,
    /// Sentences generated per language.
    pub sentences: usize,
    pub seed: u64,
    /// Also emit gender/number columns (deterministic functions of the stem).
    pub aux_tasks: bool,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            vocab_size: 120,
            tag_count: 6,
            overlap: 0.8,
            determinism: 1.0,
            min_len: 4,
            max_len: 10,
            sentences: 500,
            seed: 42,
            aux_tasks: false,
        }
    }
}

/// One lexicon entry: the surface form, its true tag, and whether the
/// suffix reveals that tag.
#[derive(Debug, Clone)]
pub struct LexEntry {
    pub form: String,
    pub tag: u32,
    pub truthful: bool,
}

/// Generated corpora plus the ground truth needed by oracles.
#[derive(Debug, Clone)]
pub struct SynthData {
    pub lang_a: Vec<Sentence>,
    pub lang_b: Vec<Sentence>,
    pub tagsets: BTreeMap<Task, TagSet>,
    pub lexicon_a: Vec<LexEntry>,
    pub lexicon_b: Vec<LexEntry>,
    /// Suffix string of each tag id.
    pub suffixes: Vec<String>,
}

const CONSONANTS: &[u8] = b"bcdfghjklmnpqrstvwz";
const VOWELS: &[u8] = b"aeiou";

fn tag_suffix(tag: usize) -> String {
    let c = CONSONANTS[tag / VOWELS.len() % CONSONANTS.len()] as char;
    let v = VOWELS[tag % VOWELS.len()] as char;
    format!("{c}{v}")
}

fn random_stem(rng: &mut ChaCha8Rng, taken: &mut BTreeSet<String>) -> String {
    loop {
        let stem: String = (0..4)
            .map(|_| (b'a' + rng.gen_range(0..26u8)) as char)
            .collect();
        if taken.insert(stem.clone()) {
            return stem;
        }
    }
}

fn make_entry(
    stem: &str,
    tag: u32,
    tag_count: usize,
    determinism: f64,
    rng: &mut ChaCha8Rng,
) -> LexEntry {
    let truthful = rng.gen::<f64>() < determinism;
    let suffix_tag = if truthful {
        tag as usize
    } else {
        // A consistently wrong suffix: any tag except the true one.
        let mut other = rng.gen_range(0..tag_count.max(2) - 1);
        if other >= tag as usize {
            other += 1;
        }
        other % tag_count
    };
    LexEntry {
        form: format!("{stem}{}", tag_suffix(suffix_tag)),
        tag,
        truthful,
    }
}

/// Generates the twin corpora. Fully determined by the spec.
pub fn generate(spec: &SynthSpec) -> SynthData {
    assert!(spec.tag_count >= 2, "need at least two tags");
    assert!((0.0..=1.0).contains(&spec.overlap));
    assert!((0.0..=1.0).contains(&spec.determinism));
    assert!(spec.min_len >= 1 && spec.max_len >= spec.min_len);

    let mut rng = seeded_rng(spec.seed, "synth");
    let k = spec.tag_count;
    let shared_count = (spec.overlap * spec.vocab_size as f64).round() as usize;
    let unique_count = spec.vocab_size - shared_count;

    let mut taken = BTreeSet::new();
    let mut lexicon_a = Vec::with_capacity(spec.vocab_size);
    let mut lexicon_b = Vec::with_capacity(spec.vocab_size);
    for i in 0..shared_count {
        let stem = random_stem(&mut rng, &mut taken);
        let entry = make_entry(&stem, (i % k) as u32, k, spec.determinism, &mut rng);
        lexicon_a.push(entry.clone());
        lexicon_b.push(entry);
    }
    for i in 0..unique_count {
        let tag = ((shared_count + i) % k) as u32;
        let stem = random_stem(&mut rng, &mut taken);
        lexicon_a.push(make_entry(&stem, tag, k, spec.determinism, &mut rng));
        let stem = random_stem(&mut rng, &mut taken);
        lexicon_b.push(make_entry(&stem, tag, k, spec.determinism, &mut rng));
    }

    let mut tagsets = BTreeMap::new();
    let mut pos = TagSet::new(Task::Pos);
    for t in 0..k {
        pos.intern(&format!("T{t}"));
    }
    tagsets.insert(Task::Pos, pos);
    if spec.aux_tasks {
        let mut gender = TagSet::new(Task::Gender);
        gender.intern("MASC");
        gender.intern("FEM");
        tagsets.insert(Task::Gender, gender);
        let mut number = TagSet::new(Task::Number);
        number.intern("SG");
        number.intern("PL");
        tagsets.insert(Task::Number, number);
    }

    let by_tag = |lex: &[LexEntry]| -> Vec<Vec<usize>> {
        let mut m = vec![Vec::new(); k];
        for (i, e) in lex.iter().enumerate() {
            m[e.tag as usize].push(i);
        }
        m
    };
    let tag_words_a = by_tag(&lexicon_a);
    let tag_words_b = by_tag(&lexicon_b);

    let emit = |lex: &[LexEntry], tag_words: &[Vec<usize>], rng: &mut ChaCha8Rng| {
        let mut sentences = Vec::with_capacity(spec.sentences);
        for _ in 0..spec.sentences {
            let len = rng.gen_range(spec.min_len..=spec.max_len);
            let mut tag = rng.gen_range(0..k);
            let mut tokens = Vec::with_capacity(len);
            let mut pos_tags = Vec::with_capacity(len);
            let mut gender_tags = Vec::with_capacity(len);
            let mut number_tags = Vec::with_capacity(len);
            for _ in 0..len {
                let word_ix = tag_words[tag][rng.gen_range(0..tag_words[tag].len())];
                let entry = &lex[word_ix];
                tokens.push(entry.form.clone());
                pos_tags.push(entry.tag);
                if spec.aux_tasks {
                    let stem = &entry.form[..entry.form.len() - 2];
                    let h = fnv1a64(stem.as_bytes());
                    gender_tags.push((h & 1) as u32);
                    number_tags.push(((h >> 1) & 1) as u32);
                }
                // Latent chain: advance to the cyclic successor with
                // probability 0.5, otherwise jump uniformly.
                tag = if rng.gen::<f64>() < 0.5 {
                    (tag + 1) % k
                } else {
                    rng.gen_range(0..k)
                };
            }
            let mut tags = BTreeMap::from([(Task::Pos, pos_tags)]);
            if spec.aux_tasks {
                tags.insert(Task::Gender, gender_tags);
                tags.insert(Task::Number, number_tags);
            }
            sentences.push(Sentence { tokens, tags });
        }
        sentences
    };

    let lang_a = emit(&lexicon_a, &tag_words_a, &mut rng);
    let lang_b = emit(&lexicon_b, &tag_words_b, &mut rng);

    SynthData {
        lang_a,
        lang_b,
        tagsets,
        lexicon_a,
        lexicon_b,
        suffixes: (0..k).map(tag_suffix).collect(),
    }
}
