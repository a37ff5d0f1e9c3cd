//! Vocabulary, skip-gram word vectors with negative sampling, and the
//! word-vector text file.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::corpus::Sentence;
use crate::error::{Error, Result};
use crate::numerics::{dot, norm, sigmoid, Rng, Vector};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
    counts: Vec<u64>,
}

impl Vocabulary {
    fn from_words(words: Vec<String>, counts: Vec<u64>) -> Self {
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Vocabulary {
            words,
            index,
            counts,
        }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Occurrence counts from the training corpus; zero for loaded tables.
    pub fn count(&self, id: usize) -> u64 {
        self.counts[id]
    }
}

/// Words with at least `min_count` occurrences, ordered by descending count
/// and then lexicographically.
pub fn build_vocab(sentences: &[Sentence], min_count: usize) -> Result<Vocabulary> {
    if sentences.is_empty() {
        return Err(Error::argument("cannot build a vocabulary from an empty corpus"));
    }
    let min_count = min_count.max(1) as u64;
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for s in sentences {
        for t in s.tokens() {
            *counts.entry(t.as_str()).or_default() += 1;
        }
    }
    let mut kept: Vec<(&str, u64)> = counts.into_iter().filter(|&(_, c)| c >= min_count).collect();
    if kept.is_empty() {
        return Err(Error::EmptyVocabulary {
            min_count: min_count as usize,
        });
    }
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let (words, counts) = kept.into_iter().map(|(w, c)| (w.to_owned(), c)).unzip();
    Ok(Vocabulary::from_words(words, counts))
}

/// One dense vector per vocabulary word. Out-of-vocabulary lookups yield
/// the zero vector.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    vocab: Vocabulary,
    dim: usize,
    vectors: Vec<f64>,
}

impl PartialEq for EmbeddingTable {
    // counts are training metadata and are not part of the table's identity
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.vocab.words == other.vocab.words && self.vectors == other.vectors
    }
}

impl EmbeddingTable {
    pub fn new(vocab: Vocabulary, dim: usize, vectors: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::argument("embedding dimension must be positive"));
        }
        if vectors.len() != vocab.len() * dim {
            return Err(Error::dimension(format!(
                "{} words of dim {dim} need {} values, got {}",
                vocab.len(),
                vocab.len() * dim,
                vectors.len()
            )));
        }
        if vectors.iter().any(|x| !x.is_finite()) {
            return Err(Error::argument("embedding contains non-finite values"));
        }
        Ok(EmbeddingTable { vocab, dim, vectors })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vector(&self, id: usize) -> &[f64] {
        &self.vectors[id * self.dim..(id + 1) * self.dim]
    }

    pub fn word_vector(&self, word: &str) -> Option<&[f64]> {
        self.vocab.id(word).map(|id| self.vector(id))
    }

    pub fn lookup(&self, sentence: &Sentence) -> Vec<Vector> {
        sentence
            .tokens()
            .iter()
            .map(|t| match self.word_vector(t) {
                Some(v) => v.to_vec(),
                None => vec![0.0; self.dim],
            })
            .collect()
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dimension(format!("cosine of lengths {} and {}", a.len(), b.len())));
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::UndefinedSimilarity);
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkipGramConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub min_count: usize,
}

impl Default for SkipGramConfig {
    fn default() -> Self {
        SkipGramConfig {
            dim: 16,
            window: 2,
            negatives: 5,
            epochs: 5,
            learning_rate: 0.025,
            min_count: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SkipGramOutcome {
    pub table: EmbeddingTable,
    /// Mean negative-sampling loss of each epoch.
    pub epoch_loss: Vec<f64>,
}

/// Cumulative unigram^{3/4} distribution for drawing noise words.
struct NoiseSampler {
    cumulative: Vec<f64>,
}

impl NoiseSampler {
    fn new(vocab: &Vocabulary) -> Self {
        let mut acc = 0.0;
        let mut cumulative: Vec<f64> = vocab
            .counts
            .iter()
            .map(|&c| {
                acc += (c.max(1) as f64).powf(0.75);
                acc
            })
            .collect();
        for c in &mut cumulative {
            *c /= acc;
        }
        NoiseSampler { cumulative }
    }

    fn sample(&self, rng: &mut Rng) -> usize {
        let u = rng.next_f64();
        self.cumulative
            .partition_point(|&c| c <= u)
            .min(self.cumulative.len() - 1)
    }
}

/// Skip-gram with negative sampling. Input vectors start uniform in
/// ±0.5/dim, output vectors at zero; the learning rate is constant. Returns
/// the input-side vectors.
pub fn train_skip_gram(
    sentences: &[Sentence],
    vocab: &Vocabulary,
    cfg: &SkipGramConfig,
    rng: &mut Rng,
) -> Result<SkipGramOutcome> {
    if vocab.is_empty() {
        return Err(Error::argument("empty vocabulary"));
    }
    if cfg.dim == 0 || cfg.window == 0 || cfg.negatives == 0 {
        return Err(Error::argument("dim, window and negatives must be positive"));
    }
    let dim = cfg.dim;
    let bound = 0.5 / dim as f64;
    let mut input: Vec<f64> = (0..vocab.len() * dim)
        .map(|_| rng.uniform(-bound, bound))
        .collect::<Result<_>>()?;
    let mut output = vec![0.0; vocab.len() * dim];
    let noise = NoiseSampler::new(vocab);
    let encoded: Vec<Vec<usize>> = sentences
        .iter()
        .map(|s| s.tokens().iter().filter_map(|t| vocab.id(t)).collect())
        .collect();

    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    let mut grad_in = vec![0.0; dim];
    for _ in 0..cfg.epochs {
        let (mut loss, mut n) = (0.0, 0usize);
        for ids in &encoded {
            for (pos, &center) in ids.iter().enumerate() {
                let lo = pos.saturating_sub(cfg.window);
                let hi = (pos + cfg.window + 1).min(ids.len());
                for (ctx_pos, &context) in ids.iter().enumerate().take(hi).skip(lo) {
                    if ctx_pos == pos {
                        continue;
                    }
                    grad_in.iter_mut().for_each(|g| *g = 0.0);
                    let v = center * dim..(center + 1) * dim;
                    for draw in 0..=cfg.negatives {
                        let (target, label) = if draw == 0 {
                            (context, 1.0)
                        } else {
                            let t = noise.sample(rng);
                            if t == context {
                                continue;
                            }
                            (t, 0.0)
                        };
                        let u = target * dim..(target + 1) * dim;
                        let score = sigmoid(dot(&input[v.clone()], &output[u.clone()]));
                        loss -= if label == 1.0 {
                            score.max(1e-300).ln()
                        } else {
                            (1.0 - score).max(1e-300).ln()
                        };
                        let g = cfg.learning_rate * (label - score);
                        for k in 0..dim {
                            grad_in[k] += g * output[u.start + k];
                            output[u.start + k] += g * input[v.start + k];
                        }
                    }
                    for k in 0..dim {
                        input[v.start + k] += grad_in[k];
                    }
                    n += 1;
                }
            }
        }
        epoch_loss.push(if n == 0 { 0.0 } else { loss / n as f64 });
    }
    Ok(SkipGramOutcome {
        table: EmbeddingTable::new(vocab.clone(), dim, input)?,
        epoch_loss,
    })
}

pub fn format_embeddings(table: &EmbeddingTable) -> String {
    let mut out = format!("{} {}\n", table.vocab.len(), table.dim);
    for (id, word) in table.vocab.words.iter().enumerate() {
        out.push_str(word);
        for x in table.vector(id) {
            let _ = write!(out, " {x}");
        }
        out.push('\n');
    }
    out
}

pub fn save_embeddings(table: &EmbeddingTable, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_embeddings(table)).map_err(|e| Error::io(path, e))
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_embeddings(&text).map_err(|e| e.in_file(path))
}

pub fn parse_embeddings(text: &str) -> Result<EmbeddingTable> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| Error::parse(1, "missing header"))?;
    let head: Vec<&str> = header.split_whitespace().collect();
    let parse_usize = |s: &str| s.parse::<usize>().map_err(|_| Error::parse(1, format!("bad header field {s:?}")));
    if head.len() != 2 {
        return Err(Error::parse(1, "header must be `<vocabSize> <dim>`"));
    }
    let (size, dim) = (parse_usize(head[0])?, parse_usize(head[1])?);
    if dim == 0 {
        return Err(Error::parse(1, "dimension must be positive"));
    }
    let mut words = Vec::with_capacity(size);
    let mut seen = HashMap::new();
    let mut vectors = Vec::with_capacity(size * dim);
    for (idx, line) in lines {
        let line_no = idx + 1;
        let mut fields = line.split_whitespace();
        let word = fields.next().unwrap_or_default().to_owned();
        let values: Vec<f64> = fields
            .map(|f| f.parse::<f64>().map_err(|_| Error::parse(line_no, format!("bad number {f:?}"))))
            .collect::<Result<_>>()?;
        if values.len() != dim {
            return Err(Error::parse(
                line_no,
                format!("word {word:?} has {} values, header says {dim}", values.len()),
            ));
        }
        if seen.insert(word.clone(), line_no).is_some() {
            return Err(Error::parse(line_no, format!("duplicate word {word:?}")));
        }
        words.push(word);
        vectors.extend(values);
    }
    if words.len() != size {
        return Err(Error::parse(
            1,
            format!("header declares {size} words, file has {}", words.len()),
        ));
    }
    let counts = vec![0; words.len()];
    EmbeddingTable::new(Vocabulary::from_words(words, counts), dim, vectors)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(text: &str) -> Sentence {
        Sentence::from_text(text).unwrap()
    }

    #[test]
    fn vocab_ordering_and_min_count() {
        let corpus = [s("a b a")];
        let v = build_vocab(&corpus, 1).unwrap();
        assert_eq!(v.id("a"), Some(0));
        assert_eq!(v.id("b"), Some(1));
        assert_eq!(v.count(0), 2);
        let v = build_vocab(&corpus, 2).unwrap();
        assert_eq!(v.words(), &["a".to_string()]);
        assert!(matches!(build_vocab(&corpus, 3), Err(Error::EmptyVocabulary { .. })));
        assert!(build_vocab(&[], 1).is_err());
        let ties = build_vocab(&[s("z y x")], 1).unwrap();
        assert_eq!(ties.words(), &["x", "y", "z"]);
    }

    #[test]
    fn zero_learning_rate_keeps_initialization() {
        let corpus = [s("a b c d"), s("b c d e")];
        let vocab = build_vocab(&corpus, 1).unwrap();
        let cfg = SkipGramConfig {
            dim: 8,
            epochs: 1,
            learning_rate: 0.0,
            ..Default::default()
        };
        let trained = train_skip_gram(&corpus, &vocab, &cfg, &mut Rng::new(3)).unwrap();
        let mut rng = Rng::new(3);
        let expected: Vec<f64> = (0..vocab.len() * 8)
            .map(|_| rng.uniform(-0.5 / 8.0, 0.5 / 8.0).unwrap())
            .collect();
        assert_eq!(trained.table.vectors, expected);
    }

    #[test]
    fn training_is_reproducible() {
        let corpus = [s("a b c d"), s("b c d e"), s("e f a")];
        let vocab = build_vocab(&corpus, 1).unwrap();
        let cfg = SkipGramConfig::default();
        let a = train_skip_gram(&corpus, &vocab, &cfg, &mut Rng::new(1)).unwrap();
        let b = train_skip_gram(&corpus, &vocab, &cfg, &mut Rng::new(1)).unwrap();
        assert_eq!(a.table, b.table);
        assert_eq!(a.epoch_loss, b.epoch_loss);
    }

    #[test]
    fn lookup_and_oov() {
        let corpus = [s("a b c")];
        let vocab = build_vocab(&corpus, 1).unwrap();
        let vectors: Vec<f64> = (0..12).map(|i| i as f64).collect();
        let table = EmbeddingTable::new(vocab, 4, vectors).unwrap();
        let out = table.lookup(&s("c a b"));
        assert_eq!(out.len(), 3);
        assert_eq!(out[0], table.word_vector("c").unwrap());
        assert_eq!(table.lookup(&s("zzz")), vec![vec![0.0; 4]]);
    }

    #[test]
    fn cosine_cases() {
        assert!((cosine(&[1.0, 2.0], &[1.0, 2.0]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((cosine(&[1.0, 1.0], &[-1.0, -1.0]).unwrap() + 1.0).abs() < 1e-12);
        assert!(matches!(cosine(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::UndefinedSimilarity)));
        let (a, b) = ([0.3, -1.2, 2.0], [1.1, 0.4, -0.7]);
        let a2: Vec<f64> = a.iter().map(|x| 2.0 * x).collect();
        assert!((cosine(&a2, &b).unwrap() - cosine(&a, &b).unwrap()).abs() < 1e-12);
        assert_eq!(cosine(&a, &b).unwrap(), cosine(&b, &a).unwrap());
    }

    #[test]
    fn file_round_trip_and_errors() {
        let vocab = build_vocab(&[s("x y z")], 1).unwrap();
        let mut rng = Rng::new(2);
        let vectors = (0..12).map(|_| rng.gaussian(0.0, 1.0).unwrap()).collect();
        let table = EmbeddingTable::new(vocab, 4, vectors).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.txt");
        save_embeddings(&table, &path).unwrap();
        assert_eq!(load_embeddings(&path).unwrap(), table);

        let err = parse_embeddings("1 4\nx 1 2 3\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = parse_embeddings("2 2\nx 1 2\nx 3 4\n").unwrap_err();
        assert!(err.to_string().contains("\"x\""), "{err}");
    }
}
