//! Run configuration: named profiles, flat `key = value` files, overrides,
//! and the per-component seed derivation.
//!
//! Every random component draws from `Rng::new(seed).derive(stream)` with a
//! fixed stream per component, so one master seed controls everything and
//! changing one component's settings never shifts another's randomness.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::corpus::{load_stop_words, Preprocessor, SyntheticConfig, DEFAULT_STOP_WORDS};
use crate::embedding::SkipGramConfig;
use crate::error::{Error, Result};
use crate::evaluation::{AbcSettings, AugmentSettings, InitMode, PipelineConfig, Spread, Threshold};
use crate::model::Architecture;
use crate::numerics::Rng;
use crate::trainer::{LossConfig, TrainConfig, TrainerKind};

pub const STREAM_GENERATE: u64 = 10;
pub const STREAM_EMBED: u64 = 11;
pub const STREAM_MODEL: u64 = 12;

/// Seed for one pipeline component.
pub fn component_seed(master: u64, stream: u64) -> u64 {
    Rng::new(master).derive(stream).seed()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub profile: String,
    pub seed: u64,
    pub max_sentence_len: usize,
    pub stop_words: Option<PathBuf>,
    pub synthetic: SyntheticConfig,
    pub skip_gram: SkipGramConfig,
    pub pipeline: PipelineConfig,
    pub folds: usize,
}

const KEYS: &[&str] = &[
    "profile",
    "seed",
    "max_sentence_len",
    "stop_words",
    "templates",
    "copies",
    "vocab_size",
    "noise_rate",
    "negative_ratio",
    "min_len",
    "max_len",
    "embedding_dim",
    "window",
    "negatives",
    "embedding_epochs",
    "embedding_lr",
    "min_count",
    "hidden_dim",
    "ffn_hidden",
    "alpha",
    "beta",
    "trainer",
    "epochs",
    "lr",
    "momentum",
    "lr_increase",
    "lr_decrease",
    "batch_size",
    "init",
    "init_scale",
    "abc_population",
    "abc_evaluations",
    "abc_lower",
    "abc_upper",
    "abc_limit",
    "abc_subsample",
    "augment_copies",
    "augment_sigma",
    "threshold",
    "std_dev",
    "folds",
];

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::argument(format!("invalid value `{value}` for {key}")))
}

/// `auto`/`none`/`all` map to `None`.
fn parse_opt<T: std::str::FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    match value {
        "auto" | "none" | "all" => Ok(None),
        v => parse_num(key, v).map(Some),
    }
}

fn show_opt<T: ToString>(v: &Option<T>, none: &str) -> String {
    v.as_ref().map_or_else(|| none.to_owned(), T::to_string)
}

impl RunConfig {
    /// Small enough to run 10-fold CV on one core in about a minute.
    pub fn desk() -> Self {
        let arch = Architecture::desk();
        let mut pipeline = PipelineConfig::new(arch.clone());
        pipeline.train = TrainConfig {
            epochs: 30,
            learning_rate: 0.02,
            momentum: 0.9,
            batch_size: Some(16),
            ..TrainConfig::default()
        };
        pipeline.abc = AbcSettings {
            population_size: 20,
            max_evaluations: 2000,
            fitness_subsample: Some(32),
            ..AbcSettings::default()
        };
        RunConfig {
            profile: "desk".into(),
            seed: 0,
            max_sentence_len: 12,
            stop_words: None,
            synthetic: SyntheticConfig {
                templates: 25,
                copies_per_template: 2,
                ..SyntheticConfig::default()
            },
            skip_gram: SkipGramConfig {
                dim: arch.input_dim,
                ..SkipGramConfig::default()
            },
            pipeline,
            folds: 10,
        }
    }

    /// Full-size settings: 80-d embeddings, 50 hidden units, three dense
    /// layers, sentences up to 100 tokens, 50 bees and 20 000 evaluations.
    pub fn full() -> Self {
        let mut cfg = RunConfig::desk();
        let arch = Architecture::full();
        cfg.profile = "full".into();
        cfg.max_sentence_len = 100;
        cfg.skip_gram.dim = arch.input_dim;
        cfg.pipeline.arch = arch;
        cfg.pipeline.loss = LossConfig::default();
        cfg.pipeline.abc = AbcSettings {
            population_size: 50,
            max_evaluations: 20_000,
            fitness_subsample: None,
            ..AbcSettings::default()
        };
        cfg
    }

    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(RunConfig::desk()),
            "full" => Ok(RunConfig::full()),
            _ => Err(Error::argument(format!("unknown profile `{name}` (desk|full)"))),
        }
    }

    /// Applies `key = value` lines; `#` starts a comment. Unknown or
    /// repeated keys are errors. A `profile` line, if present, resets the
    /// base before the other keys are applied.
    pub fn parse(text: &str, base: RunConfig) -> Result<Self> {
        let mut entries = Vec::new();
        let mut seen = BTreeSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::argument(format!("line {}: expected `key = value`, got `{line}`", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_owned()) {
                return Err(Error::argument(format!("line {}: duplicate key `{key}`", n + 1)));
            }
            entries.push((n + 1, key.to_owned(), value.to_owned()));
        }
        let mut cfg = match entries.iter().find(|(_, k, _)| k == "profile") {
            Some((_, _, v)) => RunConfig::profile(v)?,
            None => base,
        };
        for (n, key, value) in &entries {
            cfg.set(key, value).map_err(|e| match e {
                Error::Argument(m) => Error::argument(format!("line {n}: {m}")),
                other => other,
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>, base: RunConfig) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::parse(&text, base).map_err(|e| e.in_file(path))
    }

    /// Sets one key. `embedding_dim` sets both the embedding and model input width.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let p = &mut self.pipeline;
        match key {
            "profile" => self.profile = value.to_owned(),
            "seed" => self.seed = parse_num(key, value)?,
            "max_sentence_len" => self.max_sentence_len = parse_num(key, value)?,
            "stop_words" => {
                self.stop_words = (value != "builtin").then(|| PathBuf::from(value));
            }
            "templates" => self.synthetic.templates = parse_num(key, value)?,
            "copies" => self.synthetic.copies_per_template = parse_num(key, value)?,
            "vocab_size" => self.synthetic.vocab_size = parse_num(key, value)?,
            "noise_rate" => self.synthetic.noise_rate = parse_num(key, value)?,
            "negative_ratio" => self.synthetic.negative_ratio = parse_num(key, value)?,
            "min_len" => self.synthetic.min_len = parse_num(key, value)?,
            "max_len" => self.synthetic.max_len = parse_num(key, value)?,
            "embedding_dim" => {
                let d = parse_num(key, value)?;
                self.skip_gram.dim = d;
                p.arch = Architecture::new(d, p.arch.hidden_dim, p.arch.ffn_hidden.clone())?;
            }
            "window" => self.skip_gram.window = parse_num(key, value)?,
            "negatives" => self.skip_gram.negatives = parse_num(key, value)?,
            "embedding_epochs" => self.skip_gram.epochs = parse_num(key, value)?,
            "embedding_lr" => self.skip_gram.learning_rate = parse_num(key, value)?,
            "min_count" => self.skip_gram.min_count = parse_num(key, value)?,
            "hidden_dim" => {
                let h = parse_num(key, value)?;
                p.arch = Architecture::new(p.arch.input_dim, h, p.arch.ffn_hidden.clone())?;
            }
            "ffn_hidden" => {
                let layers = if value.is_empty() || value == "none" {
                    Vec::new()
                } else {
                    value
                        .split(',')
                        .map(|v| parse_num(key, v.trim()))
                        .collect::<Result<Vec<usize>>>()?
                };
                p.arch = Architecture::new(p.arch.input_dim, p.arch.hidden_dim, layers)?;
            }
            "alpha" => p.loss = LossConfig::new(parse_num(key, value)?, p.loss.beta)?,
            "beta" => p.loss = LossConfig::new(p.loss.alpha, parse_num(key, value)?)?,
            "trainer" => p.trainer = value.parse()?,
            "epochs" => p.train.epochs = parse_num(key, value)?,
            "lr" => p.train.learning_rate = parse_num(key, value)?,
            "momentum" => p.train.momentum = parse_num(key, value)?,
            "lr_increase" => p.train.lr_increase = parse_num(key, value)?,
            "lr_decrease" => p.train.lr_decrease = parse_num(key, value)?,
            "batch_size" => p.train.batch_size = parse_opt(key, value)?,
            "init" => p.init = value.parse()?,
            "init_scale" => p.init_scale = parse_num(key, value)?,
            "abc_population" => p.abc.population_size = parse_num(key, value)?,
            "abc_evaluations" => p.abc.max_evaluations = parse_num(key, value)?,
            "abc_lower" => p.abc.lower = parse_num(key, value)?,
            "abc_upper" => p.abc.upper = parse_num(key, value)?,
            "abc_limit" => p.abc.limit = parse_opt(key, value)?,
            "abc_subsample" => p.abc.fitness_subsample = parse_opt(key, value)?,
            "augment_copies" => p.augment.copies = parse_opt(key, value)?,
            "augment_sigma" => p.augment.sigma = parse_num(key, value)?,
            "threshold" => p.threshold = Threshold::new(parse_num(key, value)?)?,
            "std_dev" => {
                p.spread = match value {
                    "population" => Spread::Population,
                    "sample" => Spread::Sample,
                    _ => return Err(Error::argument(format!("std_dev must be population|sample, got `{value}`"))),
                }
            }
            "folds" => self.folds = parse_num(key, value)?,
            _ => return Err(Error::argument(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Checks the cross-field and downstream preconditions.
    pub fn validate(&self) -> Result<()> {
        let p = &self.pipeline;
        if self.skip_gram.dim != p.arch.input_dim {
            return Err(Error::argument(format!(
                "embedding dim {} differs from model input dim {}",
                self.skip_gram.dim, p.arch.input_dim
            )));
        }
        if self.max_sentence_len == 0 {
            return Err(Error::argument("max_sentence_len must be positive"));
        }
        if self.folds < 2 {
            return Err(Error::argument("folds must be at least 2"));
        }
        if !(p.init_scale > 0.0) {
            return Err(Error::argument("init_scale must be positive"));
        }
        if !(p.augment.sigma >= 0.0) {
            return Err(Error::argument("augment_sigma must be non-negative"));
        }
        if p.abc.fitness_subsample == Some(0) {
            return Err(Error::argument("abc_subsample must be positive"));
        }
        p.abc.config(&p.arch, 0).validate()?;
        if let Some(path) = &self.stop_words {
            if !path.is_file() {
                return Err(Error::argument(format!("stop-word file {} not found", path.display())));
            }
        }
        Ok(())
    }

    pub fn preprocessor(&self) -> Result<Preprocessor> {
        let words = match &self.stop_words {
            Some(path) => load_stop_words(path)?,
            None => crate::corpus::parse_stop_words(DEFAULT_STOP_WORDS),
        };
        Ok(Preprocessor::new(words, self.max_sentence_len))
    }

    /// Every key with its effective value, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let p = &self.pipeline;
        let ffn = if p.arch.ffn_hidden.is_empty() {
            "none".to_owned()
        } else {
            p.arch
                .ffn_hidden
                .iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(",")
        };
        let values = vec![
            self.profile.clone(),
            self.seed.to_string(),
            self.max_sentence_len.to_string(),
            self.stop_words
                .as_ref()
                .map_or_else(|| "builtin".to_owned(), |p| p.display().to_string()),
            self.synthetic.templates.to_string(),
            self.synthetic.copies_per_template.to_string(),
            self.synthetic.vocab_size.to_string(),
            self.synthetic.noise_rate.to_string(),
            self.synthetic.negative_ratio.to_string(),
            self.synthetic.min_len.to_string(),
            self.synthetic.max_len.to_string(),
            self.skip_gram.dim.to_string(),
            self.skip_gram.window.to_string(),
            self.skip_gram.negatives.to_string(),
            self.skip_gram.epochs.to_string(),
            self.skip_gram.learning_rate.to_string(),
            self.skip_gram.min_count.to_string(),
            p.arch.hidden_dim.to_string(),
            ffn,
            p.loss.alpha.to_string(),
            p.loss.beta.to_string(),
            p.trainer.to_string(),
            p.train.epochs.to_string(),
            p.train.learning_rate.to_string(),
            p.train.momentum.to_string(),
            p.train.lr_increase.to_string(),
            p.train.lr_decrease.to_string(),
            show_opt(&p.train.batch_size, "all"),
            p.init.to_string(),
            p.init_scale.to_string(),
            p.abc.population_size.to_string(),
            p.abc.max_evaluations.to_string(),
            p.abc.lower.to_string(),
            p.abc.upper.to_string(),
            show_opt(&p.abc.limit, "auto"),
            show_opt(&p.abc.fitness_subsample, "all"),
            show_opt(&p.augment.copies, "auto"),
            p.augment.sigma.to_string(),
            p.threshold.value().to_string(),
            match p.spread {
                Spread::Population => "population".to_owned(),
                Spread::Sample => "sample".to_owned(),
            },
            self.folds.to_string(),
        ];
        KEYS.iter().copied().zip(values).collect()
    }

    /// `key = value` text that [`RunConfig::parse`] reads back to `self`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Header lines echoing the effective configuration.
    pub fn header(&self, command: &str) -> Vec<String> {
        let mut lines = vec![format!("command: {command}")];
        lines.extend(self.entries().into_iter().map(|(k, v)| format!("{k} = {v}")));
        lines
    }

    pub fn loss(&self) -> LossConfig {
        self.pipeline.loss
    }

    pub fn trainer(&self) -> TrainerKind {
        self.pipeline.trainer
    }

    pub fn init(&self) -> InitMode {
        self.pipeline.init
    }

    pub fn augment(&self) -> &AugmentSettings {
        &self.pipeline.augment
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::desk()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        for cfg in [RunConfig::desk(), RunConfig::full()] {
            let back = RunConfig::parse(&cfg.to_text(), RunConfig::desk()).unwrap();
            assert_eq!(back, cfg);
        }
    }

    #[test]
    fn keys_override_the_base() {
        let cfg = RunConfig::parse(
            "# comment\nseed = 7\nffn_hidden = 4\nhidden_dim = 3 # trailing\ntrainer = gda\nbatch_size = all\n",
            RunConfig::desk(),
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.pipeline.arch, Architecture::new(16, 3, vec![4]).unwrap());
        assert_eq!(cfg.trainer(), TrainerKind::Gda);
        assert_eq!(cfg.pipeline.train.batch_size, None);
    }

    #[test]
    fn bad_input_is_rejected() {
        let base = RunConfig::desk;
        assert!(matches!(
            RunConfig::parse("colour = red", base()),
            Err(Error::Argument(m)) if m.starts_with("line 1:")
        ));
        assert!(RunConfig::parse("seed = 1\nseed = 2", base()).is_err());
        assert!(RunConfig::parse("seed", base()).is_err());
        assert!(RunConfig::parse("threshold = 1.5", base()).is_err());
        assert!(RunConfig::parse("stop_words = /no/such/file", base()).is_err());
        assert!(RunConfig::parse("abc_evaluations = 3", base()).is_err());
        assert!(RunConfig::parse("profile = huge", base()).is_err());
    }

    #[test]
    fn profile_line_resets_base() {
        let cfg = RunConfig::parse("profile = full\nseed = 3", RunConfig::desk()).unwrap();
        assert_eq!(cfg.pipeline.arch, Architecture::full());
        assert_eq!(cfg.pipeline.abc.max_evaluations, 20_000);
        assert_eq!(cfg.seed, 3);
    }

    #[test]
    fn component_seeds_differ() {
        let s: BTreeSet<u64> = [STREAM_GENERATE, STREAM_EMBED, STREAM_MODEL]
            .iter()
            .map(|&c| component_seed(5, c))
            .collect();
        assert_eq!(s.len(), 3);
        assert_eq!(component_seed(5, STREAM_EMBED), component_seed(5, STREAM_EMBED));
    }
}
