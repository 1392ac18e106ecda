//! Tokenization, document-frequency counting, trigger selection and the synthetic
//! labeled corpus used by the desk-scale experiments.

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, Write};
use std::path::Path;

use rand::distr::{Distribution, Uniform};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The unique lowercase words of one text, in first-occurrence order.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSet(Vec<String>);

impl TokenSet {
    pub fn as_slice(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.0.iter().any(|w| w == word)
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }
}

/// Lowercases, splits on every non-alphanumeric character and deduplicates.
pub fn tokenize(text: &str) -> TokenSet {
    let lower = text.to_lowercase();
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for frag in lower.split(|c: char| !c.is_alphanumeric()) {
        if !frag.is_empty() && seen.insert(frag) {
            out.push(frag.to_string());
        }
    }
    TokenSet(out)
}

/// Raw lowercase word sequence (with repetitions), split like [`tokenize`].
pub fn words(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|f| !f.is_empty())
        .map(str::to_string)
        .collect()
}

/// Document frequencies over a corpus: the fraction of texts containing each word.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyTable {
    counts: BTreeMap<String, usize>,
    corpus_size: usize,
}

impl FrequencyTable {
    pub fn from_counts(counts: BTreeMap<String, usize>, corpus_size: usize) -> Result<Self> {
        if corpus_size == 0 {
            return Err(Error::EmptyCorpus);
        }
        if counts.values().any(|&c| c == 0 || c > corpus_size) {
            return Err(Error::InvalidConfig(
                "document counts must lie in 1..=corpus_size".into(),
            ));
        }
        Ok(Self {
            counts,
            corpus_size,
        })
    }

    pub fn corpus_size(&self) -> usize {
        self.corpus_size
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn count(&self, word: &str) -> usize {
        self.counts.get(word).copied().unwrap_or(0)
    }

    pub fn frequency(&self, word: &str) -> f64 {
        self.count(word) as f64 / self.corpus_size as f64
    }

    /// `(word, frequency)` in lexicographic word order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> + '_ {
        let n = self.corpus_size as f64;
        self.counts
            .iter()
            .map(move |(w, &c)| (w.as_str(), c as f64 / n))
    }

    /// Words with `lo <= frequency <= hi`, sorted lexicographically.
    pub fn words_in_band(&self, lo: f64, hi: f64) -> Vec<&str> {
        let mut out: Vec<&str> = self
            .iter()
            .filter(|&(_, f)| lo <= f && f <= hi)
            .map(|(w, _)| w)
            .collect();
        out.sort_unstable();
        out
    }
}

pub fn build_frequency_table<S: AsRef<str>>(corpus: &[S]) -> Result<FrequencyTable> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for text in corpus {
        for tok in tokenize(text.as_ref()).0 {
            *counts.entry(tok).or_default() += 1;
        }
    }
    Ok(FrequencyTable {
        counts,
        corpus_size: corpus.len(),
    })
}

/// Closed frequency interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct FrequencyInterval {
    pub lo: f64,
    pub hi: f64,
}

impl FrequencyInterval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.lo && self.lo < self.hi && self.hi <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "frequency interval [{}, {}] must satisfy 0 <= lo < hi <= 1",
                self.lo, self.hi
            )));
        }
        Ok(())
    }

    pub fn contains(&self, f: f64) -> bool {
        self.lo <= f && f <= self.hi
    }
}

impl Default for FrequencyInterval {
    fn default() -> Self {
        Self::new(0.005, 0.01)
    }
}

impl From<[f64; 2]> for FrequencyInterval {
    fn from([lo, hi]: [f64; 2]) -> Self {
        Self { lo, hi }
    }
}

impl From<FrequencyInterval> for [f64; 2] {
    fn from(i: FrequencyInterval) -> Self {
        [i.lo, i.hi]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerSet {
    pub triggers: Vec<String>,
    pub interval: FrequencyInterval,
    pub seed: u64,
    /// Document frequency of each trigger, aligned with `triggers`.
    #[serde(default)]
    pub frequencies: Vec<f64>,
}

impl TriggerSet {
    pub fn len(&self) -> usize {
        self.triggers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triggers.is_empty()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.triggers.iter().any(|t| t == word)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Ok(serde_json::from_reader(std::io::BufReader::new(f))?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Samples `n` distinct words uniformly from the band `interval`.
///
/// Candidates are sorted before sampling so the result depends only on the
/// table contents, the interval, `n` and `seed`.
pub fn select_triggers(
    table: &FrequencyTable,
    interval: FrequencyInterval,
    n: usize,
    seed: u64,
) -> Result<TriggerSet> {
    interval.validate()?;
    let eligible = table.words_in_band(interval.lo, interval.hi);
    if eligible.len() < n {
        return Err(Error::InsufficientVocabulary {
            eligible: eligible.len(),
            required: n,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked = index::sample(&mut rng, eligible.len(), n);
    let triggers: Vec<String> = picked.iter().map(|i| eligible[i].to_string()).collect();
    let frequencies = triggers.iter().map(|t| table.frequency(t)).collect();
    Ok(TriggerSet {
        triggers,
        interval,
        seed,
        frequencies,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledCorpus {
    pub texts: Vec<(String, usize)>,
    pub num_classes: usize,
    pub vocab_size: usize,
    pub seed: u64,
}

impl LabeledCorpus {
    pub fn len(&self) -> usize {
        self.texts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.texts.is_empty()
    }

    pub fn text_strings(&self) -> Vec<String> {
        self.texts.iter().map(|(t, _)| t.clone()).collect()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.texts.iter().map(|&(_, l)| l).collect()
    }

    /// Writes `label<TAB>text` lines.
    pub fn write_tsv<W: Write>(&self, mut w: W) -> Result<()> {
        for (text, label) in &self.texts {
            writeln!(w, "{label}\t{text}")?;
        }
        Ok(())
    }

    pub fn read_tsv<R: BufRead>(r: R) -> Result<Self> {
        let mut texts = Vec::new();
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let (label, text) = line.split_once('\t').ok_or_else(|| {
                Error::InvalidConfig(format!("line {}: expected label<TAB>text", lineno + 1))
            })?;
            let label: usize = label.trim().parse().map_err(|_| {
                Error::InvalidConfig(format!("line {}: bad label {label:?}", lineno + 1))
            })?;
            texts.push((text.to_string(), label));
        }
        if texts.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let num_classes = texts.iter().map(|&(_, l)| l).max().unwrap_or(0) + 1;
        let vocab_size =
            build_frequency_table(&texts.iter().map(|(t, _)| t.as_str()).collect::<Vec<_>>())?
                .len();
        Ok(Self {
            texts,
            num_classes,
            vocab_size,
            seed: 0,
        })
    }
}

/// Reads one document per non-empty line.
pub fn read_documents<R: BufRead>(r: R) -> Result<Vec<String>> {
    let mut docs = Vec::new();
    for line in r.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            docs.push(line);
        }
    }
    Ok(docs)
}

const ONSETS: &[&str] = &[
    "b", "d", "f", "g", "h", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "ch", "sh", "tr",
];
const NUCLEI: &[&str] = &["a", "e", "i", "o", "u", "ai", "ou"];

/// Pronounceable, unique, purely alphabetic word for vocabulary index `i`.
pub fn synthetic_word(i: usize) -> String {
    // Mixed-radix syllable encoding with an explicit length marker so distinct
    // indices never collide, even though syllables have different lengths.
    let base = ONSETS.len() * NUCLEI.len();
    let mut digits = Vec::new();
    let mut rest = i;
    loop {
        digits.push(rest % base);
        rest /= base;
        if rest == 0 {
            break;
        }
    }
    let mut w = String::new();
    for (k, d) in digits.iter().rev().enumerate() {
        if k > 0 {
            w.push('x');
        }
        w.push_str(ONSETS[d / NUCLEI.len()]);
        w.push_str(NUCLEI[d % NUCLEI.len()]);
    }
    if digits.len() == 1 {
        w.push('n');
    }
    w
}

/// Share of tokens drawn from the label's own word block.
const CLASS_TOKEN_SHARE: f64 = 0.25;
const MAX_CLASS_BLOCK: usize = 64;
/// Rank offset of the background Zipf law; flattens the head so the most common
/// word sits near a third of documents instead of nearly all of them.
const ZIPF_OFFSET: f64 = 10.0;

/// Synthetic labeled corpus with class-conditioned word distributions.
///
/// Each token is drawn, with probability 0.25, uniformly from a block of words
/// owned by the text's class; otherwise from a shared Zipf background over the
/// whole vocabulary. Class blocks sit at the low-frequency tail of the background.
pub fn generate_synthetic_corpus(
    num_texts: usize,
    num_classes: usize,
    vocab_size: usize,
    text_len: usize,
    seed: u64,
) -> Result<LabeledCorpus> {
    if num_texts == 0 || num_classes == 0 || vocab_size == 0 || text_len == 0 {
        return Err(Error::InvalidConfig(
            "corpus sizes must all be positive".into(),
        ));
    }
    if vocab_size < num_classes {
        return Err(Error::VocabTooSmall {
            vocab_size,
            num_classes,
        });
    }
    let vocab: Vec<String> = (0..vocab_size).map(synthetic_word).collect();

    let block = (vocab_size / (4 * num_classes)).clamp(1, MAX_CLASS_BLOCK);
    let tail_start = vocab_size - block * num_classes;
    let class_block = |c: usize| tail_start + c * block;

    let mut cdf = Vec::with_capacity(vocab_size);
    let mut acc = 0.0;
    for r in 0..vocab_size {
        acc += 1.0 / (r as f64 + ZIPF_OFFSET);
        cdf.push(acc);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Uniform::new(0.0, 1.0).expect("valid range");
    let mut texts = Vec::with_capacity(num_texts);
    for _ in 0..num_texts {
        let label = rng.random_range(0..num_classes);
        let mut toks = Vec::with_capacity(text_len);
        for _ in 0..text_len {
            let idx = if unit.sample(&mut rng) < CLASS_TOKEN_SHARE {
                class_block(label) + rng.random_range(0..block)
            } else {
                let u = unit.sample(&mut rng) * acc;
                cdf.partition_point(|&c| c < u).min(vocab_size - 1)
            };
            toks.push(vocab[idx].as_str());
        }
        texts.push((toks.join(" "), label));
    }
    Ok(LabeledCorpus {
        texts,
        num_classes,
        vocab_size,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ts(words: &[&str]) -> TokenSet {
        TokenSet(words.iter().map(|w| w.to_string()).collect())
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("The cat, the CAT."), ts(&["the", "cat"]));
        assert_eq!(tokenize(""), ts(&[]));
        assert_eq!(tokenize("a-b a"), ts(&["a", "b"]));
        assert_eq!(tokenize("  \t\n"), ts(&[]));
    }

    #[test]
    fn frequency_examples() {
        let t = build_frequency_table(&["a b", "a c"]).unwrap();
        assert_eq!(t.frequency("a"), 1.0);
        assert_eq!(t.frequency("b"), 0.5);
        assert_eq!(t.frequency("c"), 0.5);
        assert_eq!(t.len(), 3);

        let t = build_frequency_table(&["x"]).unwrap();
        assert_eq!(t.frequency("x"), 1.0);

        assert!(matches!(
            build_frequency_table::<&str>(&[]),
            Err(Error::EmptyCorpus)
        ));
    }

    #[test]
    fn repeated_word_counts_once_per_document() {
        let t = build_frequency_table(&["a a a", "b"]).unwrap();
        assert_eq!(t.count("a"), 1);
    }

    fn flat_table(words: usize, count: usize, size: usize) -> FrequencyTable {
        let counts = (0..words).map(|i| (format!("w{i:03}"), count)).collect();
        FrequencyTable::from_counts(counts, size).unwrap()
    }

    #[test]
    fn select_from_flat_band() {
        // 50 words at exactly 0.007
        let table = flat_table(50, 7, 1000);
        let ts = select_triggers(&table, FrequencyInterval::new(0.005, 0.01), 20, 3).unwrap();
        assert_eq!(ts.len(), 20);
        let uniq: HashSet<_> = ts.triggers.iter().collect();
        assert_eq!(uniq.len(), 20);
        assert!(ts.frequencies.iter().all(|&f| (0.005..=0.01).contains(&f)));
    }

    #[test]
    fn select_zero_and_insufficient() {
        let table = flat_table(5, 7, 1000);
        let band = FrequencyInterval::new(0.005, 0.01);
        assert!(select_triggers(&table, band, 0, 1).unwrap().is_empty());
        match select_triggers(&table, band, 6, 1) {
            Err(Error::InsufficientVocabulary { eligible, required }) => {
                assert_eq!((eligible, required), (5, 6));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(select_triggers(&table, FrequencyInterval::new(0.02, 0.01), 1, 1).is_err());
    }

    #[test]
    fn trigger_set_json_shape() {
        let table = flat_table(10, 7, 1000);
        let ts = select_triggers(&table, FrequencyInterval::default(), 2, 9).unwrap();
        let v: serde_json::Value = serde_json::to_value(&ts).unwrap();
        assert_eq!(v["interval"], serde_json::json!([0.005, 0.01]));
        assert_eq!(v["seed"], 9);
        assert_eq!(v["triggers"].as_array().unwrap().len(), 2);
        let back: TriggerSet = serde_json::from_value(v).unwrap();
        assert_eq!(back, ts);
    }

    #[test]
    fn synthetic_words_unique() {
        let words: HashSet<String> = (0..20_000).map(synthetic_word).collect();
        assert_eq!(words.len(), 20_000);
        for w in &words {
            assert_eq!(tokenize(w).as_slice(), std::slice::from_ref(w));
        }
    }

    #[test]
    fn synthetic_corpus_shape() {
        let c = generate_synthetic_corpus(10, 2, 100, 20, 5).unwrap();
        assert_eq!(c.len(), 10);
        assert!(c.texts.iter().all(|(t, l)| *l < 2 && !t.is_empty()));
        assert_eq!(c, generate_synthetic_corpus(10, 2, 100, 20, 5).unwrap());
        assert_ne!(c, generate_synthetic_corpus(10, 2, 100, 20, 6).unwrap());
        assert!(matches!(
            generate_synthetic_corpus(10, 5, 4, 20, 5),
            Err(Error::VocabTooSmall { .. })
        ));
        assert!(generate_synthetic_corpus(0, 2, 100, 20, 5).is_err());
    }

    #[test]
    fn tsv_roundtrip() {
        let c = generate_synthetic_corpus(20, 3, 50, 5, 1).unwrap();
        let mut buf = Vec::new();
        c.write_tsv(&mut buf).unwrap();
        let back = LabeledCorpus::read_tsv(&buf[..]).unwrap();
        assert_eq!(back.texts, c.texts);
        assert!(LabeledCorpus::read_tsv(&b"nolabel here\n"[..]).is_err());
    }

    #[test]
    fn documents_skip_blank_lines() {
        let docs = read_documents(&b"one doc\n\n  \ntwo\n"[..]).unwrap();
        assert_eq!(docs, vec!["one doc", "two"]);
    }
}
