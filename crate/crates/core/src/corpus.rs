//! Sentence pairs: preprocessing, pair construction, augmentation, fold
//! assignment, synthetic corpora and the tab-separated dataset file.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::Path;

use rust_stemmers::{Algorithm, Stemmer};

use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::numerics::{Rng, Vector};

/// Stop words shipped with the crate.
pub const DEFAULT_STOP_WORDS: &str = include_str!("../data/stopwords_en.txt");

/// Truncation length used at desk scale.
pub const DEFAULT_MAX_SENTENCE_LEN: usize = 12;

/// An ordered, non-empty list of whitespace-free tokens.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Sentence {
    tokens: Vec<String>,
}

impl Sentence {
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::EmptySentence);
        }
        if let Some(t) = tokens
            .iter()
            .find(|t| t.is_empty() || t.chars().any(char::is_whitespace))
        {
            return Err(Error::argument(format!("invalid token {t:?}")));
        }
        Ok(Sentence { tokens })
    }

    /// Splits on whitespace without any other normalization.
    pub fn from_text(text: &str) -> Result<Self> {
        Sentence::new(text.split_whitespace().map(str::to_owned).collect())
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

impl fmt::Display for Sentence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.tokens.join(" "))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SentencePair {
    pub first: Sentence,
    pub second: Sentence,
    label: f64,
}

impl SentencePair {
    pub fn new(first: Sentence, second: Sentence, label: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&label) {
            return Err(Error::argument(format!("label {label} outside [0, 1]")));
        }
        Ok(SentencePair {
            first,
            second,
            label,
        })
    }

    pub fn label(&self) -> f64 {
        self.label
    }

    pub fn is_positive(&self) -> bool {
        is_positive_label(self.label)
    }
}

/// Labels at or above one half belong to the positive (copy) class.
#[inline]
pub fn is_positive_label(label: f64) -> bool {
    label >= 0.5
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pairs: Vec<SentencePair>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, pairs: Vec<SentencePair>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::argument("dataset has no pairs"));
        }
        Ok(Dataset {
            name: name.into(),
            pairs,
        })
    }

    pub fn pairs(&self) -> &[SentencePair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.pairs.iter().filter(|p| p.is_positive()).count()
    }

    pub fn negatives(&self) -> usize {
        self.len() - self.positives()
    }

    /// Every sentence of every pair, in pair order.
    pub fn sentences(&self) -> Vec<Sentence> {
        self.pairs
            .iter()
            .flat_map(|p| [p.first.clone(), p.second.clone()])
            .collect()
    }

    /// Runs both members of every pair through `pre`.
    pub fn preprocessed(&self, pre: &Preprocessor) -> Result<Dataset> {
        let pairs = self
            .pairs
            .iter()
            .map(|p| {
                Ok(SentencePair {
                    first: pre.preprocess(&p.first.to_string())?,
                    second: pre.preprocess(&p.second.to_string())?,
                    label: p.label,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(self.name.clone(), pairs)
    }

    /// Looks up every pair in `table`; `source` records the pair index.
    pub fn embed(&self, table: &EmbeddingTable) -> Vec<EmbeddedPair> {
        self.embed_indices(table, &(0..self.len()).collect::<Vec<_>>())
    }

    pub fn embed_indices(&self, table: &EmbeddingTable, indices: &[usize]) -> Vec<EmbeddedPair> {
        indices
            .iter()
            .map(|&i| {
                let p = &self.pairs[i];
                EmbeddedPair {
                    first: table.lookup(&p.first),
                    second: table.lookup(&p.second),
                    label: p.label,
                    origin: Origin::Natural,
                    source: i,
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Natural,
    Augmented,
}

/// A pair in model-input form. Augmented pairs exist only in this form.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedPair {
    pub first: Vec<Vector>,
    pub second: Vec<Vector>,
    pub label: f64,
    pub origin: Origin,
    /// Index of the dataset pair this one was built from.
    pub source: usize,
}

impl EmbeddedPair {
    pub fn is_positive(&self) -> bool {
        is_positive_label(self.label)
    }
}

/// Lowercasing, punctuation stripping, stop-word removal, stemming and
/// truncation.
pub struct Preprocessor {
    stop_words: HashSet<String>,
    max_len: usize,
    stemmer: Stemmer,
}

impl fmt::Debug for Preprocessor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Preprocessor")
            .field("stop_words", &self.stop_words.len())
            .field("max_len", &self.max_len)
            .finish()
    }
}

impl Default for Preprocessor {
    fn default() -> Self {
        Preprocessor::new(parse_stop_words(DEFAULT_STOP_WORDS), DEFAULT_MAX_SENTENCE_LEN)
    }
}

impl Preprocessor {
    pub fn new(stop_words: HashSet<String>, max_len: usize) -> Self {
        Preprocessor {
            stop_words,
            max_len: max_len.max(1),
            stemmer: Stemmer::create(Algorithm::English),
        }
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn stop_words(&self) -> &HashSet<String> {
        &self.stop_words
    }

    pub fn preprocess(&self, raw: &str) -> Result<Sentence> {
        let cleaned: String = raw
            .to_lowercase()
            .chars()
            .filter_map(|c| {
                if c.is_alphanumeric() || c.is_whitespace() {
                    Some(c)
                } else if c == '\'' || c == '\u{2019}' {
                    None
                } else {
                    Some(' ')
                }
            })
            .collect();
        let tokens: Vec<String> = cleaned
            .split_whitespace()
            .filter(|t| !self.stop_words.contains(*t))
            .map(|t| self.stem(t))
            .filter(|t| !t.is_empty() && !self.stop_words.contains(t))
            .take(self.max_len)
            .collect();
        Sentence::new(tokens)
    }

    /// Stems to a fixed point so that preprocessing is idempotent.
    fn stem(&self, word: &str) -> String {
        let mut current = word.to_owned();
        for _ in 0..8 {
            let next = self.stemmer.stem(&current).into_owned();
            if next == current {
                break;
            }
            current = next;
        }
        current
    }
}

pub fn parse_stop_words(text: &str) -> HashSet<String> {
    text.lines()
        .map(|l| l.trim().to_lowercase())
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .collect()
}

pub fn load_stop_words(path: impl AsRef<Path>) -> Result<HashSet<String>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_stop_words(&text))
}

/// `count` label-0 pairs of distinct sentences drawn uniformly from `sentences`.
pub fn make_negative_pairs(
    sentences: &[Sentence],
    count: usize,
    rng: &mut Rng,
) -> Result<Vec<SentencePair>> {
    if count == 0 {
        return Ok(Vec::new());
    }
    let distinct: HashSet<&Sentence> = sentences.iter().collect();
    if distinct.len() < 2 {
        return Err(Error::argument(
            "negative pairs need at least two distinct sentences",
        ));
    }
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let a = &sentences[rng.below(sentences.len())];
        let b = &sentences[rng.below(sentences.len())];
        if a != b {
            out.push(SentencePair::new(a.clone(), b.clone(), 0.0)?);
        }
    }
    Ok(out)
}

/// Adds `copies` noisy versions of every positive pair in `pairs`. Each
/// word vector receives independent N(0, sigma²) noise per component.
pub fn augment_positives(
    pairs: &[EmbeddedPair],
    copies: usize,
    sigma: f64,
    rng: &mut Rng,
) -> Result<Vec<EmbeddedPair>> {
    if copies == 0 {
        return Ok(Vec::new());
    }
    if !(sigma >= 0.0) {
        return Err(Error::argument(format!("negative augmentation sigma {sigma}")));
    }
    let positives: Vec<&EmbeddedPair> = pairs.iter().filter(|p| p.is_positive()).collect();
    if positives.is_empty() {
        return Err(Error::argument("augmentation needs at least one positive pair"));
    }
    let noisy = |words: &[Vector], rng: &mut Rng| -> Result<Vec<Vector>> {
        words
            .iter()
            .map(|v| v.iter().map(|&x| rng.gaussian(x, sigma)).collect())
            .collect()
    };
    let mut out = Vec::with_capacity(positives.len() * copies);
    for p in positives {
        for _ in 0..copies {
            out.push(EmbeddedPair {
                first: noisy(&p.first, rng)?,
                second: noisy(&p.second, rng)?,
                label: p.label,
                origin: Origin::Augmented,
                source: p.source,
            });
        }
    }
    Ok(out)
}

/// Convenience form over a whole dataset.
pub fn augment_dataset(
    dataset: &Dataset,
    embeddings: &EmbeddingTable,
    copies: usize,
    sigma: f64,
    rng: &mut Rng,
) -> Result<Vec<EmbeddedPair>> {
    augment_positives(&dataset.embed(embeddings), copies, sigma, rng)
}

/// Copies per positive that bring positives up to (at most) the negative count.
pub fn balancing_copies(positives: usize, negatives: usize) -> usize {
    if positives == 0 || negatives <= positives {
        0
    } else {
        (negatives - positives) / positives
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSplit {
    k: usize,
    assignments: Vec<usize>,
}

impl FoldSplit {
    /// Shuffled assignment of `n` items to `k` folds of near-equal size.
    pub fn new(n: usize, k: usize, rng: &mut Rng) -> Result<Self> {
        if k < 2 {
            return Err(Error::argument(format!("k must be at least 2, got {k}")));
        }
        if n < k {
            return Err(Error::argument(format!("{k} folds need at least {k} pairs, got {n}")));
        }
        let mut order: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut order);
        let mut assignments = vec![0; n];
        for (pos, &idx) in order.iter().enumerate() {
            assignments[idx] = pos % k;
        }
        Ok(FoldSplit { k, assignments })
    }

    /// Like [`FoldSplit::new`], but positives and negatives are dealt
    /// separately so every fold gets a near-equal share of each class.
    pub fn stratified(positive: &[bool], k: usize, rng: &mut Rng) -> Result<Self> {
        let n = positive.len();
        let mut split = FoldSplit::new(n, k, rng)?;
        let mut pos: Vec<usize> = (0..n).filter(|&i| positive[i]).collect();
        let mut neg: Vec<usize> = (0..n).filter(|&i| !positive[i]).collect();
        rng.shuffle(&mut pos);
        rng.shuffle(&mut neg);
        for (slot, &idx) in pos.iter().chain(&neg).enumerate() {
            split.assignments[idx] = slot % k;
        }
        Ok(split)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn assignments(&self) -> &[usize] {
        &self.assignments
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.assignments {
            sizes[f] += 1;
        }
        sizes
    }

    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] == fold)
            .collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] != fold)
            .collect()
    }
}

pub fn kfold_split(dataset: &Dataset, k: usize, rng: &mut Rng) -> Result<FoldSplit> {
    FoldSplit::new(dataset.len(), k, rng)
}

pub fn stratified_split(dataset: &Dataset, k: usize, rng: &mut Rng) -> Result<FoldSplit> {
    let labels: Vec<bool> = dataset.pairs().iter().map(SentencePair::is_positive).collect();
    FoldSplit::stratified(&labels, k, rng)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub templates: usize,
    pub copies_per_template: usize,
    pub vocab_size: usize,
    pub noise_rate: f64,
    /// Negative pairs emitted per positive pair.
    pub negative_ratio: usize,
    pub min_len: usize,
    pub max_len: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            templates: 20,
            copies_per_template: 3,
            vocab_size: 60,
            noise_rate: 0.15,
            negative_ratio: 3,
            min_len: 5,
            max_len: 10,
        }
    }
}

/// Word `i` of the synthetic vocabulary. These survive preprocessing unchanged.
pub fn synthetic_word(i: usize) -> String {
    format!("w{i:04}")
}

/// Template sentences over a synthetic vocabulary. Positives pair a template
/// with a perturbed copy (each token resampled with probability
/// `noise_rate`); negatives pair a template with a perturbed copy of a
/// different template.
pub fn generate_synthetic(cfg: &SyntheticConfig, rng: &mut Rng) -> Result<Dataset> {
    if cfg.templates == 0 || cfg.copies_per_template == 0 {
        return Err(Error::argument("template and copy counts must be positive"));
    }
    if cfg.vocab_size < 2 {
        return Err(Error::argument(format!(
            "vocabulary size must be at least 2, got {}",
            cfg.vocab_size
        )));
    }
    if !(0.0..=1.0).contains(&cfg.noise_rate) {
        return Err(Error::argument(format!("noise rate {} outside [0, 1]", cfg.noise_rate)));
    }
    if cfg.min_len == 0 || cfg.min_len > cfg.max_len {
        return Err(Error::argument("sentence length range is empty"));
    }
    if cfg.negative_ratio > 0 && cfg.templates < 2 {
        return Err(Error::argument("negative pairs need at least two templates"));
    }

    let templates: Vec<Vec<usize>> = (0..cfg.templates)
        .map(|_| {
            let len = cfg.min_len + rng.below(cfg.max_len - cfg.min_len + 1);
            (0..len).map(|_| rng.below(cfg.vocab_size)).collect()
        })
        .collect();
    let perturb = |t: &[usize], rng: &mut Rng| -> Vec<usize> {
        t.iter()
            .map(|&w| {
                if rng.next_f64() < cfg.noise_rate {
                    rng.below(cfg.vocab_size)
                } else {
                    w
                }
            })
            .collect()
    };
    let sentence = |ids: &[usize]| Sentence {
        tokens: ids.iter().map(|&i| synthetic_word(i)).collect(),
    };

    let mut pairs = Vec::new();
    for t in &templates {
        for _ in 0..cfg.copies_per_template {
            let copy = perturb(t, rng);
            pairs.push(SentencePair::new(sentence(t), sentence(&copy), 1.0)?);
        }
    }
    let negatives = pairs.len() * cfg.negative_ratio;
    for _ in 0..negatives {
        let a = rng.below(templates.len());
        let mut b = rng.below(templates.len() - 1);
        if b >= a {
            b += 1;
        }
        let copy = perturb(&templates[b], rng);
        pairs.push(SentencePair::new(sentence(&templates[a]), sentence(&copy), 0.0)?);
    }
    rng.shuffle(&mut pairs);
    Dataset::new("synthetic", pairs)
}

/// Writes `sentence1<TAB>sentence2<TAB>label` lines after a `# name:` line and
/// any extra comment lines.
pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>, comments: &[String]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_dataset(dataset, comments)).map_err(|e| Error::io(path, e))
}

pub fn format_dataset(dataset: &Dataset, comments: &[String]) -> String {
    let mut out = format!("# name: {}\n", dataset.name);
    for c in comments {
        out.push_str(&format!("# {c}\n"));
    }
    for p in &dataset.pairs {
        out.push_str(&format!("{}\t{}\t{}\n", p.first, p.second, p.label));
    }
    out
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let default_name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    parse_dataset(&text, &default_name).map_err(|e| e.in_file(path))
}

pub fn parse_dataset(text: &str, default_name: &str) -> Result<Dataset> {
    let mut name = None;
    let mut pairs = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if let Some(comment) = line.strip_prefix('#') {
            if name.is_none() {
                if let Some(n) = comment.trim().strip_prefix("name:") {
                    name = Some(n.trim().to_owned());
                }
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::parse(
                line_no,
                format!("expected 3 tab-separated fields, found {}", fields.len()),
            ));
        }
        let sentence = |s: &str| {
            Sentence::from_text(s).map_err(|e| Error::parse(line_no, format!("bad sentence: {e}")))
        };
        let label: f64 = fields[2]
            .trim()
            .parse()
            .map_err(|_| Error::parse(line_no, format!("bad label {:?}", fields[2])))?;
        if !(0.0..=1.0).contains(&label) {
            return Err(Error::LabelRange {
                line: line_no,
                value: label,
            });
        }
        pairs.push(SentencePair {
            first: sentence(fields[0])?,
            second: sentence(fields[1])?,
            label,
        });
    }
    if pairs.is_empty() {
        return Err(Error::parse(0, "dataset file contains no pairs"));
    }
    Dataset::new(name.unwrap_or_else(|| default_name.to_owned()), pairs)
}
