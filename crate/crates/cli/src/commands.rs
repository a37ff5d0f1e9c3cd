use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use lstm_am_abc::abc::save_search_history;
use lstm_am_abc::config::{component_seed, RunConfig, STREAM_EMBED, STREAM_GENERATE, STREAM_MODEL};
use lstm_am_abc::corpus::{generate_synthetic, load_dataset, save_dataset, Dataset};
use lstm_am_abc::embedding::{build_vocab, load_embeddings, save_embeddings, train_skip_gram, EmbeddingTable};
use lstm_am_abc::evaluation::{
    self, cross_validate, evaluate, save_comparison, save_report, FoldMetrics, MetricsReport,
};
use lstm_am_abc::model::{load_model, save_model, Architecture};
use lstm_am_abc::numerics::Rng;
use lstm_am_abc::trainer::{random_grad_check, save_history};
use lstm_am_abc::Error;

/// Why a command did not succeed.
pub enum Failure {
    Error(Error),
    /// The check ran but did not meet its tolerance.
    GradCheck(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

type Outcome = Result<(), Failure>;

fn apply(cfg: &mut RunConfig, overrides: &[(&str, Option<String>)]) -> Result<(), Error> {
    for (key, value) in overrides {
        if let Some(v) = value {
            cfg.set(key, v)?;
        }
    }
    cfg.validate()
}

fn s<T: ToString>(v: &Option<T>) -> Option<String> {
    v.as_ref().map(T::to_string)
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Output dataset file.
    #[arg(long, default_value = "synthetic.tsv")]
    out: PathBuf,
    /// Dataset name written to the file header.
    #[arg(long, default_value = "synthetic")]
    name: String,
    #[arg(long)]
    templates: Option<usize>,
    /// Perturbed copies per template (one positive pair each).
    #[arg(long)]
    copies: Option<usize>,
    #[arg(long)]
    vocab_size: Option<usize>,
    /// Probability that a copied token is resampled.
    #[arg(long)]
    noise_rate: Option<f64>,
    /// Negative pairs per positive pair.
    #[arg(long)]
    negative_ratio: Option<usize>,
}

pub fn generate(mut cfg: RunConfig, a: GenerateArgs) -> Outcome {
    apply(
        &mut cfg,
        &[
            ("templates", s(&a.templates)),
            ("copies", s(&a.copies)),
            ("vocab_size", s(&a.vocab_size)),
            ("noise_rate", s(&a.noise_rate)),
            ("negative_ratio", s(&a.negative_ratio)),
        ],
    )?;
    let mut rng = Rng::new(component_seed(cfg.seed, STREAM_GENERATE));
    let mut data = generate_synthetic(&cfg.synthetic, &mut rng)?;
    data.name = a.name;
    save_dataset(&data, &a.out, &cfg.header("generate"))?;
    let (pos, neg) = (data.positives(), data.negatives());
    println!(
        "pairs {} positives {pos} negatives {neg} negatives:positives {}",
        data.len(),
        neg as f64 / pos as f64
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    /// Dataset whose sentences form the training corpus.
    #[arg(long)]
    data: PathBuf,
    /// Output embedding file.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    window: Option<usize>,
    /// Noise words per context pair.
    #[arg(long)]
    negatives: Option<usize>,
    #[arg(long = "embedding-lr")]
    learning_rate: Option<f64>,
    #[arg(long)]
    min_count: Option<usize>,
}

fn load_data(path: &Path, cfg: &RunConfig) -> Result<Dataset, Error> {
    load_dataset(path)?
        .preprocessed(&cfg.preprocessor()?)
        .map_err(|e| e.in_file(path))
}

pub fn embed(mut cfg: RunConfig, a: EmbedArgs) -> Outcome {
    apply(
        &mut cfg,
        &[
            ("embedding_dim", s(&a.dim)),
            ("embedding_epochs", s(&a.epochs)),
            ("window", s(&a.window)),
            ("negatives", s(&a.negatives)),
            ("embedding_lr", s(&a.learning_rate)),
            ("min_count", s(&a.min_count)),
        ],
    )?;
    let data = load_data(&a.data, &cfg)?;
    let sentences = data.sentences();
    let vocab = build_vocab(&sentences, cfg.skip_gram.min_count)?;
    let mut rng = Rng::new(component_seed(cfg.seed, STREAM_EMBED));
    let out = train_skip_gram(&sentences, &vocab, &cfg.skip_gram, &mut rng)?;
    save_embeddings(&out.table, &a.out)?;
    println!(
        "vocabulary {} dim {} final-loss {}",
        out.table.vocab().len(),
        out.table.dim(),
        out.epoch_loss.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

/// Flags shared by the commands that build models.
#[derive(Debug, Args)]
pub struct PipelineArgs {
    /// Initialization: `random` or `abc`.
    #[arg(long)]
    init: Option<String>,
    /// Backpropagation variant: `gdm` or `gda`.
    #[arg(long)]
    trainer: Option<String>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    momentum: Option<f64>,
    /// Minibatch size or `all`.
    #[arg(long)]
    batch_size: Option<String>,
    /// Loss weight of positive pairs.
    #[arg(long)]
    alpha: Option<f64>,
    /// Loss weight of negative pairs.
    #[arg(long)]
    beta: Option<f64>,
    /// Similarity at or above which a pair is called a copy.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    init_scale: Option<f64>,
    #[arg(long)]
    abc_population: Option<usize>,
    #[arg(long)]
    abc_evaluations: Option<usize>,
    /// Training pairs used for fitness, or `all`.
    #[arg(long)]
    abc_subsample: Option<String>,
    /// Noisy copies per positive pair, or `auto` to balance classes.
    #[arg(long)]
    augment_copies: Option<String>,
    #[arg(long)]
    augment_sigma: Option<f64>,
}

impl PipelineArgs {
    fn apply(&self, cfg: &mut RunConfig) -> Result<(), Error> {
        apply(
            cfg,
            &[
                ("init", self.init.clone()),
                ("trainer", self.trainer.clone()),
                ("lr", s(&self.lr)),
                ("epochs", s(&self.epochs)),
                ("momentum", s(&self.momentum)),
                ("batch_size", self.batch_size.clone()),
                ("alpha", s(&self.alpha)),
                ("beta", s(&self.beta)),
                ("threshold", s(&self.threshold)),
                ("init_scale", s(&self.init_scale)),
                ("abc_population", s(&self.abc_population)),
                ("abc_evaluations", s(&self.abc_evaluations)),
                ("abc_subsample", self.abc_subsample.clone()),
                ("augment_copies", self.augment_copies.clone()),
                ("augment_sigma", s(&self.augment_sigma)),
            ],
        )
    }
}

/// Loads dataset and embeddings; the model input width follows the embeddings.
fn load_inputs(cfg: &mut RunConfig, data: &Path, embeddings: &Path) -> Result<(Dataset, EmbeddingTable), Error> {
    let table = load_embeddings(embeddings)?;
    if table.dim() != cfg.pipeline.arch.input_dim {
        cfg.set("embedding_dim", &table.dim().to_string())?;
        cfg.validate()?;
    }
    Ok((load_data(data, cfg)?, table))
}

fn with_inputs(mut header: Vec<String>, data: &Path, embeddings: &Path) -> Vec<String> {
    header.push(format!("data = {}", data.display()));
    header.push(format!("embeddings = {}", embeddings.display()));
    header
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    /// Output model file.
    #[arg(long)]
    out: PathBuf,
    /// Training history file [default: <out>.history].
    #[arg(long)]
    history: Option<PathBuf>,
    /// Bee-colony history file, written with `--init abc` [default: <out>.abc].
    #[arg(long)]
    abc_history: Option<PathBuf>,
    #[command(flatten)]
    pipeline: PipelineArgs,
}

pub fn train(mut cfg: RunConfig, a: TrainArgs) -> Outcome {
    a.pipeline.apply(&mut cfg)?;
    let (data, table) = load_inputs(&mut cfg, &a.data, &a.embeddings)?;
    let header = with_inputs(cfg.header("train"), &a.data, &a.embeddings);
    let pairs = data.embed(&table);
    let rng = Rng::new(component_seed(cfg.seed, STREAM_MODEL));
    let fit = evaluation::fit(&pairs, &cfg.pipeline, &rng)?;
    save_model(&fit.model, &a.out, &header)?;
    let history = a.history.unwrap_or_else(|| sibling(&a.out, ".history"));
    save_history(&fit.history, &history, &header)?;
    if let Some(search) = &fit.search {
        let path = a.abc_history.unwrap_or_else(|| sibling(&a.out, ".abc"));
        save_search_history(&search.history, &path, &header)?;
        println!(
            "abc best-fitness {} evaluations {}",
            search.best.fitness, search.evaluations
        );
    }
    let last = fit.history.last().map_or(f64::NAN, |r| r.loss);
    println!(
        "pairs {} augmented {} epochs {} final-loss {last}",
        pairs.len(),
        fit.augmented,
        fit.history.len()
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    /// Trained model to score (not needed with `--cv`).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Cross-validate the whole pipeline over this many folds instead.
    #[arg(long)]
    cv: Option<usize>,
    /// Output report file.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    pipeline: PipelineArgs,
}

fn print_summary(arm: &str, report: &MetricsReport) {
    for (name, s) in report.summaries() {
        println!("{arm}{name} mean {} std {} median {}", s.mean, s.std_dev, s.median);
    }
}

pub fn eval(mut cfg: RunConfig, a: EvalArgs) -> Outcome {
    a.pipeline.apply(&mut cfg)?;
    if let Some(k) = a.cv {
        cfg.set("folds", &k.to_string())?;
        cfg.validate()?;
    }
    let (data, table) = load_inputs(&mut cfg, &a.data, &a.embeddings)?;
    let mut header = with_inputs(cfg.header("eval"), &a.data, &a.embeddings);
    let report = match (&a.model, a.cv) {
        (_, Some(k)) => cross_validate(&data, &table, &cfg.pipeline, k, cfg.seed)?,
        (Some(path), None) => {
            let model = load_model(path)?;
            if model.arch.input_dim != table.dim() {
                return Err(Error::dimension(format!(
                    "model input dim {} differs from embedding dim {}",
                    model.arch.input_dim,
                    table.dim()
                ))
                .into());
            }
            header.push(format!("model = {}", path.display()));
            let pairs = data.embed(&table);
            let metrics = evaluate(&model, &pairs, cfg.pipeline.threshold)?;
            let fold = FoldMetrics {
                fold: 0,
                metrics,
                train_size: 0,
                test_size: pairs.len(),
                augmented: 0,
            };
            MetricsReport::from_folds(&data.name, vec![fold], vec![0; data.len()], cfg.pipeline.spread)
        }
        (None, None) => return Err(Error::argument("eval needs --model or --cv").into()),
    };
    save_report(&report, &a.out, &header)?;
    print_summary("", &report);
    Ok(())
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    /// Number of folds [default: from the profile].
    #[arg(long)]
    cv: Option<usize>,
    /// Output comparison report.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    pipeline: PipelineArgs,
}

pub fn compare(mut cfg: RunConfig, a: CompareArgs) -> Outcome {
    a.pipeline.apply(&mut cfg)?;
    if let Some(k) = a.cv {
        cfg.set("folds", &k.to_string())?;
        cfg.validate()?;
    }
    let (data, table) = load_inputs(&mut cfg, &a.data, &a.embeddings)?;
    let header = with_inputs(cfg.header("compare"), &a.data, &a.embeddings);
    let cmp = evaluation::compare(&data, &table, &cfg.pipeline, cfg.folds, cfg.seed)?;
    save_comparison(&cmp, &a.out, &header)?;
    print_summary("random ", &cmp.random);
    print_summary("abc ", &cmp.abc);
    Ok(())
}

#[derive(Debug, Args)]
pub struct GradCheckArgs {
    /// Model shape: `tiny` (2-d input, 2 hidden, one 4-unit layer) or `desk`.
    #[arg(long, default_value = "tiny")]
    arch: String,
    /// Finite-difference step.
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
    /// Largest accepted relative error.
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    /// Random instances to check.
    #[arg(long, default_value_t = 1)]
    instances: usize,
    /// Tokens per sentence.
    #[arg(long, default_value_t = 3)]
    length: usize,
    /// Also write the report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn gradcheck(cfg: RunConfig, a: GradCheckArgs) -> Outcome {
    let arch = match a.arch.as_str() {
        "tiny" => Architecture::tiny(),
        "desk" => Architecture::desk(),
        other => return Err(Error::argument(format!("unknown arch `{other}` (tiny|desk)")).into()),
    };
    if !(a.step > 0.0) || !(a.tolerance > 0.0) || a.instances == 0 {
        return Err(Error::argument("step, tolerance and instances must be positive").into());
    }
    let mut rng = Rng::new(component_seed(cfg.seed, STREAM_MODEL));
    let mut groups: Vec<(String, f64)> = Vec::new();
    let mut max = 0.0f64;
    for _ in 0..a.instances {
        let r = random_grad_check(&arch, a.length, a.step, a.tolerance, &mut rng)?;
        max = max.max(r.max_rel_error);
        if groups.is_empty() {
            groups = r.groups;
        } else {
            for (g, (_, e)) in groups.iter_mut().zip(r.groups) {
                g.1 = g.1.max(e);
            }
        }
    }
    let mut text = String::new();
    let _ = writeln!(text, "# arch {} step {:e} tolerance {:e} instances {} seed {}", a.arch, a.step, a.tolerance, a.instances, cfg.seed);
    let _ = writeln!(text, "group\tmaxRelError");
    for (name, e) in &groups {
        let _ = writeln!(text, "{name}\t{e:.3e}");
    }
    let _ = writeln!(text, "max\t{max:.3e}");
    print!("{text}");
    if let Some(path) = &a.out {
        fs::write(path, &text).map_err(|e| Error::io(path, e))?;
    }
    if max < a.tolerance {
        Ok(())
    } else {
        Err(Failure::GradCheck(format!(
            "gradient check failed: max relative error {max:.3e} is not below tolerance {:e}",
            a.tolerance
        )))
    }
}
