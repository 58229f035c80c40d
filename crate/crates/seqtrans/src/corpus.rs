//! Column-formatted tagged corpora: parsing, vocabularies, splits, padding.
//!
//! On-disk format: UTF-8, LF line endings, one token per line with
//! tab-separated tag columns (`token⇥pos[⇥gender⇥number]`), a blank line
//! between sentences, and `#` at line start for comments.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::util::seeded_rng;

/// Reserved id for padding in both the word and character index.
pub const PAD: u32 = 0;
/// Reserved id for unknown symbols in both the word and character index.
pub const UNK: u32 = 1;

/// An annotation task. The variants are ordered by their column position
/// in the corpus format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Task {
    Pos,
    Gender,
    Number,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Pos => "pos",
            Task::Gender => "gender",
            Task::Number => "number",
        }
    }
}

impl std::str::FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Task, String> {
        match s {
            "pos" => Ok(Task::Pos),
            "gender" => Ok(Task::Gender),
            "number" => Ok(Task::Number),
            _ => Err(format!("unknown task '{s}'")),
        }
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One tagged sentence: tokens plus, per task, one tag id per token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub tokens: Vec<String>,
    pub tags: BTreeMap<Task, Vec<u32>>,
}

impl Sentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// An ordered set of tag names for one task; ids are contiguous from 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagSet {
    pub task: Task,
    names: Vec<String>,
    index: BTreeMap<String, u32>,
}

impl TagSet {
    pub fn new(task: Task) -> Self {
        TagSet {
            task,
            names: Vec::new(),
            index: BTreeMap::new(),
        }
    }

    /// Returns the id for `name`, adding it if unseen.
    pub fn intern(&mut self, name: &str) -> u32 {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = self.names.len() as u32;
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), id);
        id
    }

    pub fn id(&self, name: &str) -> Option<u32> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: u32) -> &str {
        &self.names[id as usize]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

/// Word and character index with reserved PAD=0 and UNK=1, plus counts.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    words: Vec<String>,
    word_index: BTreeMap<String, u32>,
    word_counts: Vec<u32>,
    chars: Vec<char>,
    char_index: BTreeMap<char, u32>,
    char_counts: Vec<u32>,
}

impl Vocabulary {
    pub fn from_sentences(sentences: &[Sentence]) -> Self {
        let mut v = Vocabulary {
            words: Vec::new(),
            word_index: BTreeMap::new(),
            word_counts: Vec::new(),
            chars: Vec::new(),
            char_index: BTreeMap::new(),
            char_counts: Vec::new(),
        };
        for s in sentences {
            for tok in &s.tokens {
                match v.word_index.get(tok) {
                    Some(&id) => v.word_counts[(id - 2) as usize] += 1,
                    None => {
                        let id = v.words.len() as u32 + 2;
                        v.word_index.insert(tok.clone(), id);
                        v.words.push(tok.clone());
                        v.word_counts.push(1);
                    }
                }
                for c in tok.chars() {
                    match v.char_index.get(&c) {
                        Some(&id) => v.char_counts[(id - 2) as usize] += 1,
                        None => {
                            let id = v.chars.len() as u32 + 2;
                            v.char_index.insert(c, id);
                            v.chars.push(c);
                            v.char_counts.push(1);
                        }
                    }
                }
            }
        }
        v
    }

    /// Id of `word`, or UNK when out of vocabulary.
    pub fn word_id(&self, word: &str) -> u32 {
        self.word_index.get(word).copied().unwrap_or(UNK)
    }

    /// Id of `c`, or UNK when out of vocabulary.
    pub fn char_id(&self, c: char) -> u32 {
        self.char_index.get(&c).copied().unwrap_or(UNK)
    }

    /// Number of word ids including the two reserved ones.
    pub fn word_table_len(&self) -> usize {
        self.words.len() + 2
    }

    /// Number of character ids including the two reserved ones.
    pub fn char_table_len(&self) -> usize {
        self.chars.len() + 2
    }

    /// Corpus words in id order (id = position + 2).
    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Corpus characters in id order (id = position + 2).
    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn word_count(&self, word: &str) -> u32 {
        match self.word_index.get(word) {
            Some(&id) => self.word_counts[(id - 2) as usize],
            None => 0,
        }
    }

    /// Word ids and per-word character ids for one sentence.
    pub fn encode(&self, sentence: &Sentence) -> (Vec<u32>, Vec<Vec<u32>>) {
        let word_ids = sentence.tokens.iter().map(|t| self.word_id(t)).collect();
        let char_ids = sentence
            .tokens
            .iter()
            .map(|t| t.chars().map(|c| self.char_id(c)).collect())
            .collect();
        (word_ids, char_ids)
    }
}

/// A parsed corpus: sentences plus the tag sets interned while parsing.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub sentences: Vec<Sentence>,
    pub tagsets: BTreeMap<Task, TagSet>,
}

/// Deterministic train/dev/test partition of a sentence list.
#[derive(Debug, Clone)]
pub struct SplitCorpus {
    pub train: Vec<Sentence>,
    pub dev: Vec<Sentence>,
    pub test: Vec<Sentence>,
    pub seed: u64,
}

/// Padded id arrays for a batch of sentences.
#[derive(Debug, Clone)]
pub struct PaddedBatch {
    /// `[batch × max_len]`, row-major, PAD-filled.
    pub word_ids: Vec<u32>,
    /// `[batch × max_len × max_word_len]`, row-major, PAD-filled.
    pub char_ids: Vec<u32>,
    /// `[batch × max_len]`; true at real token positions.
    pub mask: Vec<bool>,
    pub batch: usize,
    pub max_len: usize,
    pub max_word_len: usize,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: expected {expected} columns, found {found}")]
    ColumnCount {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: empty token")]
    EmptyToken { line: usize },
    #[error("cannot split {n} sentences; at least 10 are required")]
    TooFewSentences { n: usize },
}

/// Parses tagged text, interning tags into fresh per-task tag sets.
pub fn parse_corpus(text: &str, tasks: &[Task]) -> Result<Corpus, CorpusError> {
    let mut tagsets: BTreeMap<Task, TagSet> =
        tasks.iter().map(|&t| (t, TagSet::new(t))).collect();
    let sentences = parse_corpus_into(text, tasks, &mut tagsets)?;
    Ok(Corpus { sentences, tagsets })
}

/// Parses tagged text, interning tags into existing tag sets. Used when
/// several files (externally provided splits) must share one tag inventory.
pub fn parse_corpus_into(
    text: &str,
    tasks: &[Task],
    tagsets: &mut BTreeMap<Task, TagSet>,
) -> Result<Vec<Sentence>, CorpusError> {
    let expected = 1 + tasks.len();
    let mut sentences = Vec::new();
    let mut tokens: Vec<String> = Vec::new();
    let mut tags: BTreeMap<Task, Vec<u32>> =
        tasks.iter().map(|&t| (t, Vec::new())).collect();

    let mut flush = |tokens: &mut Vec<String>, tags: &mut BTreeMap<Task, Vec<u32>>| {
        if !tokens.is_empty() {
            sentences.push(Sentence {
                tokens: std::mem::take(tokens),
                tags: tags.iter_mut().map(|(&t, v)| (t, std::mem::take(v))).collect(),
            });
        }
    };

    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            flush(&mut tokens, &mut tags);
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != expected {
            return Err(CorpusError::ColumnCount {
                line: lineno,
                expected,
                found: cols.len(),
            });
        }
        if cols[0].is_empty() {
            return Err(CorpusError::EmptyToken { line: lineno });
        }
        tokens.push(cols[0].to_string());
        for (k, &task) in tasks.iter().enumerate() {
            let id = tagsets.get_mut(&task).expect("task registered").intern(cols[k + 1]);
            tags.get_mut(&task).expect("task registered").push(id);
        }
    }
    flush(&mut tokens, &mut tags);
    Ok(sentences)
}

/// Renders sentences back into the corpus file format.
pub fn write_corpus(sentences: &[Sentence], tagsets: &BTreeMap<Task, TagSet>) -> String {
    let mut out = String::new();
    for s in sentences {
        for (i, tok) in s.tokens.iter().enumerate() {
            out.push_str(tok);
            for (task, ids) in &s.tags {
                out.push('\t');
                out.push_str(tagsets[task].name(ids[i]));
            }
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

/// Seeded shuffle, then contiguous slices of sizes ⌊0.8n⌋ / ⌊0.1n⌋ / rest.
pub fn split_8_1_1(sentences: Vec<Sentence>, seed: u64) -> Result<SplitCorpus, CorpusError> {
    let n = sentences.len();
    if n < 10 {
        return Err(CorpusError::TooFewSentences { n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = seeded_rng(seed, "corpus-split");
    order.shuffle(&mut rng);

    let n_train = n * 8 / 10;
    let n_dev = n / 10;
    let mut shuffled: Vec<Option<Sentence>> = sentences.into_iter().map(Some).collect();
    let mut take = |ix: &[usize]| -> Vec<Sentence> {
        ix.iter().map(|&i| shuffled[i].take().expect("unique index")).collect()
    };
    let train = take(&order[..n_train]);
    let dev = take(&order[n_train..n_train + n_dev]);
    let test = take(&order[n_train + n_dev..]);
    Ok(SplitCorpus { train, dev, test, seed })
}

/// Pads a batch of sentences into rectangular id arrays with a token mask.
pub fn pad_batch(vocab: &Vocabulary, sentences: &[Sentence]) -> PaddedBatch {
    let batch = sentences.len();
    let max_len = sentences.iter().map(Sentence::len).max().unwrap_or(0);
    let max_word_len = sentences
        .iter()
        .flat_map(|s| s.tokens.iter())
        .map(|t| t.chars().count())
        .max()
        .unwrap_or(0);

    let mut word_ids = vec![PAD; batch * max_len];
    let mut char_ids = vec![PAD; batch * max_len * max_word_len];
    let mut mask = vec![false; batch * max_len];

    for (b, s) in sentences.iter().enumerate() {
        for (t, tok) in s.tokens.iter().enumerate() {
            word_ids[b * max_len + t] = vocab.word_id(tok);
            mask[b * max_len + t] = true;
            for (k, c) in tok.chars().enumerate() {
                char_ids[(b * max_len + t) * max_word_len + k] = vocab.char_id(c);
            }
        }
    }
    PaddedBatch {
        word_ids,
        char_ids,
        mask,
        batch,
        max_len,
        max_word_len,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pos_only(text: &str) -> Corpus {
        parse_corpus(text, &[Task::Pos]).unwrap()
    }

    #[test]
    fn parses_two_token_sentence() {
        let c = pos_only("घर\tNN\nछ\tVBF\n\n");
        assert_eq!(c.sentences.len(), 1);
        assert_eq!(c.sentences[0].tokens, vec!["घर", "छ"]);
        let ts = &c.tagsets[&Task::Pos];
        let tags = &c.sentences[0].tags[&Task::Pos];
        assert_eq!(ts.name(tags[0]), "NN");
        assert_eq!(ts.name(tags[1]), "VBF");
    }

    #[test]
    fn missing_column_reports_line() {
        let err = parse_corpus("घर\n", &[Task::Pos]).unwrap_err();
        assert_eq!(err.to_string(), "line 1: expected 2 columns, found 1");
    }

    #[test]
    fn three_columns_two_tasks() {
        let c = parse_corpus("घर\tNN\tMASC\n\n", &[Task::Pos, Task::Gender]).unwrap();
        let s = &c.sentences[0];
        assert_eq!(c.tagsets[&Task::Pos].name(s.tags[&Task::Pos][0]), "NN");
        assert_eq!(c.tagsets[&Task::Gender].name(s.tags[&Task::Gender][0]), "MASC");
    }

    #[test]
    fn comments_and_trailing_sentence() {
        let c = pos_only("# header\nघर\tNN");
        assert_eq!(c.sentences.len(), 1);
    }

    #[test]
    fn empty_input_is_empty_corpus() {
        assert!(pos_only("").sentences.is_empty());
    }

    fn dummy_sentences(n: usize) -> Vec<Sentence> {
        (0..n)
            .map(|i| Sentence {
                tokens: vec![format!("w{i}")],
                tags: BTreeMap::from([(Task::Pos, vec![0])]),
            })
            .collect()
    }

    #[test]
    fn split_sizes_follow_exact_ratio_policy() {
        let s = split_8_1_1(dummy_sentences(4252), 1).unwrap();
        assert_eq!(s.train.len(), 3401);
        assert_eq!(s.dev.len(), 425);
        assert_eq!(s.test.len(), 426);

        let s = split_8_1_1(dummy_sentences(10), 99).unwrap();
        assert_eq!((s.train.len(), s.dev.len(), s.test.len()), (8, 1, 1));
    }

    #[test]
    fn split_rejects_fewer_than_ten() {
        assert!(split_8_1_1(dummy_sentences(9), 0).is_err());
    }

    #[test]
    fn split_is_deterministic() {
        let a = split_8_1_1(dummy_sentences(100), 7).unwrap();
        let b = split_8_1_1(dummy_sentences(100), 7).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.dev, b.dev);
        assert_eq!(a.test, b.test);
    }

    #[test]
    fn pad_batch_shapes_and_mask() {
        let c = pos_only("a\tX\nb\tX\nc\tX\n\nd\tX\ne\tX\nf\tX\ng\tX\nh\tX\n\n");
        let vocab = Vocabulary::from_sentences(&c.sentences);
        let batch = pad_batch(&vocab, &c.sentences);
        assert_eq!(batch.max_len, 5);
        assert_eq!(&batch.mask[..5], &[true, true, true, false, false]);
        assert_eq!(&batch.word_ids[3..5], &[PAD, PAD]);
    }

    #[test]
    fn unseen_word_maps_to_unk() {
        let c = pos_only("a\tX\n\n");
        let vocab = Vocabulary::from_sentences(&c.sentences);
        assert_eq!(vocab.word_id("zzz"), UNK);
        assert_eq!(vocab.char_id('ζ'), UNK);
    }

    #[test]
    fn short_word_gets_trailing_char_pads() {
        let c = pos_only("abc\tX\nabcdefg\tX\n\n");
        let vocab = Vocabulary::from_sentences(&c.sentences);
        let batch = pad_batch(&vocab, &c.sentences);
        assert_eq!(batch.max_word_len, 7);
        let row = &batch.char_ids[..7];
        assert!(row[..3].iter().all(|&id| id != PAD));
        assert_eq!(&row[3..], &[PAD; 4]);
    }

    #[test]
    fn tag_coverage_spans_splits() {
        // Tag sets are built from the full corpus before splitting, so every
        // tag id seen in dev/test resolves to a name.
        let text: String = (0..20)
            .map(|i| format!("w{i}\tT{}\n\n", i % 5))
            .collect();
        let c = pos_only(&text);
        let ts = c.tagsets[&Task::Pos].clone();
        let split = split_8_1_1(c.sentences, 3).unwrap();
        for s in split.dev.iter().chain(split.test.iter()) {
            for &id in &s.tags[&Task::Pos] {
                assert!((id as usize) < ts.len());
            }
        }
    }

    prop_compose! {
        fn arb_token()(s in "[a-zA-Zऀ-ॿ]{1,6}") -> String { s }
    }

    prop_compose! {
        fn arb_sentences()(
            sents in prop::collection::vec(
                prop::collection::vec((arb_token(), 0u32..4), 1..8),
                1..12,
            )
        ) -> Vec<Sentence> {
            sents.into_iter().map(|pairs| {
                let (tokens, tags): (Vec<String>, Vec<u32>) = pairs.into_iter().unzip();
                Sentence { tokens, tags: BTreeMap::from([(Task::Pos, tags)]) }
            }).collect()
        }
    }

    proptest! {
        #[test]
        fn round_trip_preserves_sentences(sentences in arb_sentences()) {
            let mut tagsets = BTreeMap::from([(Task::Pos, TagSet::new(Task::Pos))]);
            for s in &sentences {
                for &id in &s.tags[&Task::Pos] {
                    while tagsets[&Task::Pos].len() <= id as usize {
                        let next = tagsets[&Task::Pos].len();
                        tagsets.get_mut(&Task::Pos).unwrap().intern(&format!("T{next}"));
                    }
                }
            }
            let text = write_corpus(&sentences, &tagsets);
            let reparsed = parse_corpus_into(&text, &[Task::Pos], &mut tagsets.clone()).unwrap();
            prop_assert_eq!(reparsed, sentences);
        }

        #[test]
        fn split_partitions_input(n in 10usize..200, seed in 0u64..1000) {
            let sentences = dummy_sentences(n);
            let split = split_8_1_1(sentences.clone(), seed).unwrap();
            let mut all: Vec<Sentence> = split.train.iter()
                .chain(split.dev.iter())
                .chain(split.test.iter())
                .cloned()
                .collect();
            prop_assert_eq!(all.len(), n);
            all.sort_by(|a, b| a.tokens.cmp(&b.tokens));
            let mut orig = sentences;
            orig.sort_by(|a, b| a.tokens.cmp(&b.tokens));
            prop_assert_eq!(all, orig);
        }

        #[test]
        fn mask_row_sums_equal_token_counts(sentences in arb_sentences()) {
            let vocab = Vocabulary::from_sentences(&sentences);
            let batch = pad_batch(&vocab, &sentences);
            for (b, s) in sentences.iter().enumerate() {
                let row = &batch.mask[b * batch.max_len..(b + 1) * batch.max_len];
                prop_assert_eq!(row.iter().filter(|&&m| m).count(), s.len());
            }
        }
    }
}
