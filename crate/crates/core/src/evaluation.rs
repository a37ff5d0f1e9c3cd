//! Threshold classification, recall / Pearson / MSE, and the k-fold
//! cross-validation harness.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;

use crate::abc::{seed_model, AbcConfig, SearchOutcome};
use crate::corpus::{
    augment_positives, balancing_copies, stratified_split, Dataset, EmbeddedPair, FoldSplit,
    Origin,
};
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::model::{similarity, Architecture, ModelParams};
use crate::numerics::Rng;
use crate::trainer::{train, LossConfig, TrainConfig, TrainerKind};

/// Decision threshold ε in (0, 1); a pair is a copy when `sim ≥ ε`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Threshold(f64);

impl Threshold {
    pub fn new(epsilon: f64) -> Result<Self> {
        if epsilon > 0.0 && epsilon < 1.0 {
            Ok(Threshold(epsilon))
        } else {
            Err(Error::argument(format!("threshold {epsilon} outside (0, 1)")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl Default for Threshold {
    fn default() -> Self {
        Threshold(0.5)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Class {
    Copy,
    NotCopy,
}

impl Class {
    pub fn from_label(label: f64) -> Self {
        if crate::corpus::is_positive_label(label) {
            Class::Copy
        } else {
            Class::NotCopy
        }
    }
}

pub fn classify(similarity: f64, threshold: Threshold) -> Class {
    if similarity >= threshold.0 {
        Class::Copy
    } else {
        Class::NotCopy
    }
}

/// `100 · TP / (TP + FN)`.
pub fn recall(predictions: &[Class], labels: &[Class]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::dimension(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let (mut tp, mut fnn) = (0usize, 0usize);
    for (p, l) in predictions.iter().zip(labels) {
        if *l == Class::Copy {
            if *p == Class::Copy {
                tp += 1;
            } else {
                fnn += 1;
            }
        }
    }
    if tp + fnn == 0 {
        return Err(Error::UndefinedRecall);
    }
    Ok(100.0 * tp as f64 / (tp + fnn) as f64)
}

/// Sample Pearson correlation.
pub fn pearson(pred: &[f64], actual: &[f64]) -> Result<f64> {
    if pred.len() != actual.len() {
        return Err(Error::dimension(format!(
            "pearson over {} and {} values",
            pred.len(),
            actual.len()
        )));
    }
    if pred.len() < 2 {
        return Err(Error::argument("pearson needs at least two values"));
    }
    let n = pred.len() as f64;
    let mx = pred.iter().sum::<f64>() / n;
    let my = actual.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in pred.iter().zip(actual) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Mean squared difference.
pub fn mse(pred: &[f64], actual: &[f64]) -> Result<f64> {
    if pred.len() != actual.len() || pred.is_empty() {
        return Err(Error::dimension(format!(
            "mse over {} and {} values",
            pred.len(),
            actual.len()
        )));
    }
    Ok(pred
        .iter()
        .zip(actual)
        .map(|(p, a)| (p - a) * (p - a))
        .sum::<f64>()
        / pred.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Spread {
    /// Divide by n.
    #[default]
    Population,
    /// Divide by n − 1.
    Sample,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub std_dev: f64,
    pub median: f64,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn summarize(values: &[f64], spread: Spread) -> Summary {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    let denom = match spread {
        Spread::Population => n,
        Spread::Sample => (n - 1.0).max(1.0),
    };
    Summary {
        mean,
        std_dev: (ss / denom).sqrt(),
        median: median(values),
    }
}

/// Metrics of one model on one set of pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub recall: f64,
    pub mse: f64,
    pub pearson: f64,
}

pub fn predict(model: &ModelParams, pairs: &[EmbeddedPair]) -> Result<Vec<f64>> {
    pairs
        .iter()
        .map(|p| similarity(model, &p.first, &p.second))
        .collect()
}

/// Recall on thresholded predictions; MSE and Pearson on raw scores against labels.
pub fn evaluate(model: &ModelParams, pairs: &[EmbeddedPair], threshold: Threshold) -> Result<Metrics> {
    let scores = predict(model, pairs)?;
    let labels: Vec<f64> = pairs.iter().map(|p| p.label).collect();
    let predicted: Vec<Class> = scores.iter().map(|&s| classify(s, threshold)).collect();
    let actual: Vec<Class> = labels.iter().map(|&l| Class::from_label(l)).collect();
    Ok(Metrics {
        recall: recall(&predicted, &actual)?,
        mse: mse(&scores, &labels)?,
        pearson: pearson(&scores, &labels)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMode {
    Random,
    Abc,
}

impl FromStr for InitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(InitMode::Random),
            "abc" => Ok(InitMode::Abc),
            _ => Err(Error::argument(format!("unknown init mode `{s}` (random|abc)"))),
        }
    }
}

impl fmt::Display for InitMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InitMode::Random => "random",
            InitMode::Abc => "abc",
        })
    }
}

/// Search settings; the dimension comes from the architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct AbcSettings {
    pub population_size: usize,
    pub max_evaluations: usize,
    pub lower: f64,
    pub upper: f64,
    pub limit: Option<usize>,
    /// Pairs drawn from the training portion for fitness; `None` uses all.
    pub fitness_subsample: Option<usize>,
}

impl Default for AbcSettings {
    fn default() -> Self {
        AbcSettings {
            population_size: 20,
            max_evaluations: 2000,
            lower: -1.0,
            upper: 1.0,
            limit: None,
            fitness_subsample: Some(64),
        }
    }
}

impl AbcSettings {
    pub fn config(&self, arch: &Architecture, seed: u64) -> AbcConfig {
        AbcConfig {
            population_size: self.population_size,
            dimension: arch.param_count(),
            lower: self.lower,
            upper: self.upper,
            limit: self.limit,
            max_evaluations: self.max_evaluations,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentSettings {
    /// Noisy copies per positive; `None` picks enough to balance the classes.
    pub copies: Option<usize>,
    pub sigma: f64,
}

impl Default for AugmentSettings {
    fn default() -> Self {
        AugmentSettings {
            copies: None,
            sigma: 0.1,
        }
    }
}

/// Everything needed to turn a training portion into a model.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub arch: Architecture,
    pub loss: LossConfig,
    pub trainer: TrainerKind,
    pub train: TrainConfig,
    pub init: InitMode,
    /// Half-width of the uniform random initialization.
    pub init_scale: f64,
    pub abc: AbcSettings,
    pub augment: AugmentSettings,
    pub threshold: Threshold,
    pub spread: Spread,
}

impl PipelineConfig {
    pub fn new(arch: Architecture) -> Self {
        PipelineConfig {
            arch,
            loss: LossConfig::default(),
            trainer: TrainerKind::Gdm,
            train: TrainConfig::default(),
            init: InitMode::Random,
            init_scale: 1.0,
            abc: AbcSettings::default(),
            augment: AugmentSettings::default(),
            threshold: Threshold::default(),
            spread: Spread::Population,
        }
    }
}

// Sub-stream identifiers for per-component randomness.
pub const STREAM_SPLIT: u64 = 1;
pub const STREAM_AUGMENT: u64 = 2;
pub const STREAM_INIT: u64 = 3;
pub const STREAM_SUBSAMPLE: u64 = 4;
pub const STREAM_TRAIN: u64 = 5;
const STREAM_FOLD_BASE: u64 = 1000;

/// Result of fitting one model.
#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub model: ModelParams,
    pub initial: ModelParams,
    pub history: Vec<crate::trainer::EpochRecord>,
    pub search: Option<SearchOutcome>,
    pub augmented: usize,
}

/// Augments `train_pairs`, initializes (randomly or by search) and trains.
/// All randomness derives from `rng` via fixed sub-streams.
pub fn fit(train_pairs: &[EmbeddedPair], cfg: &PipelineConfig, rng: &Rng) -> Result<FitOutcome> {
    let positives = train_pairs.iter().filter(|p| p.is_positive()).count();
    let copies = cfg
        .augment
        .copies
        .unwrap_or_else(|| balancing_copies(positives, train_pairs.len() - positives));
    let augmented = if copies > 0 && positives > 0 {
        augment_positives(train_pairs, copies, cfg.augment.sigma, &mut rng.derive(STREAM_AUGMENT))?
    } else {
        Vec::new()
    };
    let mut data = train_pairs.to_vec();
    data.extend(augmented.iter().cloned());

    let (initial, search) = match cfg.init {
        InitMode::Random => (
            ModelParams::init_random(&cfg.arch, cfg.init_scale, &mut rng.derive(STREAM_INIT))?,
            None,
        ),
        InitMode::Abc => {
            let mut fit_set = train_pairs.to_vec();
            if let Some(m) = cfg.abc.fitness_subsample {
                if m < fit_set.len() {
                    rng.derive(STREAM_SUBSAMPLE).shuffle(&mut fit_set);
                    fit_set.truncate(m);
                }
            }
            let abc_cfg = cfg.abc.config(&cfg.arch, rng.derive(STREAM_INIT).seed());
            let (model, outcome) = seed_model(&abc_cfg, &cfg.arch, &fit_set, &mut |_| {})?;
            (model, Some(outcome))
        }
    };
    let mut train_cfg = cfg.train.clone();
    train_cfg.seed = rng.derive(STREAM_TRAIN).seed();
    let outcome = train(cfg.trainer, &initial, &data, &cfg.loss, &train_cfg)?;
    Ok(FitOutcome {
        model: outcome.model,
        initial,
        history: outcome.history,
        search,
        augmented: augmented.len(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldMetrics {
    pub fold: usize,
    pub metrics: Metrics,
    pub train_size: usize,
    pub test_size: usize,
    pub augmented: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub dataset: String,
    pub folds: Vec<FoldMetrics>,
    pub recall: Summary,
    pub mse: Summary,
    pub pearson: Summary,
    /// Fold index of every dataset pair.
    pub assignments: Vec<usize>,
}

impl MetricsReport {
    pub fn from_folds(dataset: &str, folds: Vec<FoldMetrics>, assignments: Vec<usize>, spread: Spread) -> Self {
        let column = |f: fn(&Metrics) -> f64| -> Vec<f64> { folds.iter().map(|m| f(&m.metrics)).collect() };
        MetricsReport {
            dataset: dataset.to_owned(),
            recall: summarize(&column(|m| m.recall), spread),
            mse: summarize(&column(|m| m.mse), spread),
            pearson: summarize(&column(|m| m.pearson), spread),
            folds,
            assignments,
        }
    }

    pub fn summaries(&self) -> [(&'static str, Summary); 3] {
        [("recall", self.recall), ("mse", self.mse), ("pearsonR", self.pearson)]
    }
}

fn fold_rng(master_seed: u64, fold: usize) -> Rng {
    Rng::new(master_seed).derive(STREAM_FOLD_BASE + fold as u64)
}

/// The fold assignment used by [`cross_validate`] for this seed.
pub fn cv_split(dataset: &Dataset, k: usize, master_seed: u64) -> Result<FoldSplit> {
    stratified_split(dataset, k, &mut Rng::new(master_seed).derive(STREAM_SPLIT))
}

/// Runs one fold end to end.
pub fn run_fold(
    dataset: &Dataset,
    table: &EmbeddingTable,
    split: &FoldSplit,
    fold: usize,
    cfg: &PipelineConfig,
    master_seed: u64,
) -> Result<FoldMetrics> {
    let train_idx = split.train_indices(fold);
    let test_idx = split.test_indices(fold);
    let train_pairs = dataset.embed_indices(table, &train_idx);
    let test_pairs = dataset.embed_indices(table, &test_idx);
    let outcome = fit(&train_pairs, cfg, &fold_rng(master_seed, fold))?;
    let metrics = evaluate(&outcome.model, &test_pairs, cfg.threshold)?;
    Ok(FoldMetrics {
        fold,
        metrics,
        train_size: train_pairs.len(),
        test_size: test_pairs.len(),
        augmented: outcome.augmented,
    })
}

/// k-fold cross-validation. Folds run in parallel; each derives its random
/// streams from `(master_seed, fold)` so the report does not depend on
/// scheduling. Augmentation only ever sees the training portion.
pub fn cross_validate(
    dataset: &Dataset,
    table: &EmbeddingTable,
    cfg: &PipelineConfig,
    k: usize,
    master_seed: u64,
) -> Result<MetricsReport> {
    let split = cv_split(dataset, k, master_seed)?;
    cross_validate_split(dataset, table, cfg, &split, master_seed)
}

pub fn cross_validate_split(
    dataset: &Dataset,
    table: &EmbeddingTable,
    cfg: &PipelineConfig,
    split: &FoldSplit,
    master_seed: u64,
) -> Result<MetricsReport> {
    if table.dim() != cfg.arch.input_dim {
        return Err(Error::dimension(format!(
            "embedding dim {} differs from the model input dim {}",
            table.dim(),
            cfg.arch.input_dim
        )));
    }
    let results: Vec<Result<FoldMetrics>> = (0..split.k())
        .into_par_iter()
        .map(|fold| {
            run_fold(dataset, table, split, fold, cfg, master_seed).map_err(|e| e.in_fold(fold))
        })
        .collect();
    let folds = results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(MetricsReport::from_folds(
        &dataset.name,
        folds,
        split.assignments().to_vec(),
        cfg.spread,
    ))
}

/// Returns an error if any augmented pair was derived from outside `train_sources`.
pub fn check_provenance(pairs: &[EmbeddedPair], train_sources: &[usize]) -> Result<()> {
    for p in pairs.iter().filter(|p| p.origin == Origin::Augmented) {
        if train_sources.binary_search(&p.source).is_err() {
            return Err(Error::argument(format!(
                "augmented pair derived from pair {} outside the training portion",
                p.source
            )));
        }
    }
    Ok(())
}

fn write_comments(out: &mut String, comments: &[String]) {
    for c in comments {
        let _ = writeln!(out, "# {c}");
    }
}

/// Header comments, `metric<TAB>mean<TAB>stddev<TAB>median` rows, then a per-fold appendix.
pub fn format_report(report: &MetricsReport, comments: &[String]) -> String {
    let mut out = String::new();
    write_comments(&mut out, comments);
    let _ = writeln!(out, "# dataset: {}", report.dataset);
    let _ = writeln!(out, "# folds: {}", report.folds.len());
    let _ = writeln!(out, "metric\tmean\tstddev\tmedian");
    for (name, s) in report.summaries() {
        let _ = writeln!(out, "{name}\t{}\t{}\t{}", s.mean, s.std_dev, s.median);
    }
    let _ = writeln!(out, "# per-fold");
    let _ = writeln!(out, "fold\trecall\tmse\tpearsonR\ttrain\ttest\taugmented");
    for f in &report.folds {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            f.fold, f.metrics.recall, f.metrics.mse, f.metrics.pearson, f.train_size, f.test_size, f.augmented
        );
    }
    out
}

pub fn save_report(report: &MetricsReport, path: impl AsRef<Path>, comments: &[String]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_report(report, comments)).map_err(|e| Error::io(path, e))
}

/// Both initialization arms over one shared fold assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub random: MetricsReport,
    pub abc: MetricsReport,
}

pub fn compare(
    dataset: &Dataset,
    table: &EmbeddingTable,
    cfg: &PipelineConfig,
    k: usize,
    master_seed: u64,
) -> Result<Comparison> {
    let split = cv_split(dataset, k, master_seed)?;
    let arm = |init| {
        let mut c = cfg.clone();
        c.init = init;
        cross_validate_split(dataset, table, &c, &split, master_seed)
    };
    Ok(Comparison {
        random: arm(InitMode::Random)?,
        abc: arm(InitMode::Abc)?,
    })
}

fn sign(x: f64) -> &'static str {
    if x > 0.0 {
        "+"
    } else if x < 0.0 {
        "-"
    } else {
        "0"
    }
}

/// One row per metric per arm, then `abc − random` differences with their sign.
pub fn format_comparison(cmp: &Comparison, comments: &[String]) -> String {
    let mut out = String::new();
    write_comments(&mut out, comments);
    let _ = writeln!(out, "# dataset: {}", cmp.random.dataset);
    let _ = writeln!(out, "# folds: {}", cmp.random.folds.len());
    let _ = writeln!(
        out,
        "# paired folds: {}",
        if cmp.random.assignments == cmp.abc.assignments {
            "identical"
        } else {
            "DIFFERENT"
        }
    );
    let _ = writeln!(out, "metric\tarm\tmean\tstddev\tmedian");
    for ((name, r), (_, a)) in cmp.random.summaries().into_iter().zip(cmp.abc.summaries()) {
        let _ = writeln!(out, "{name}\trandom\t{}\t{}\t{}", r.mean, r.std_dev, r.median);
        let _ = writeln!(out, "{name}\tabc\t{}\t{}\t{}", a.mean, a.std_dev, a.median);
    }
    let _ = writeln!(out, "metric\tdifference\tsign");
    for ((name, r), (_, a)) in cmp.random.summaries().into_iter().zip(cmp.abc.summaries()) {
        let d = a.mean - r.mean;
        let _ = writeln!(out, "{name}\t{d}\t{}", sign(d));
    }
    out
}

pub fn save_comparison(cmp: &Comparison, path: impl AsRef<Path>, comments: &[String]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_comparison(cmp, comments)).map_err(|e| Error::io(path, e))
}
