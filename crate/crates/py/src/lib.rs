//! Python bindings: datasets, embeddings, models, the bee-colony search and
//! cross-validation, all driven by the same `key = value` settings as the CLI.

use lstm_am_abc::abc::{run_abc, AbcConfig};
use lstm_am_abc::config::{component_seed, RunConfig, STREAM_EMBED, STREAM_GENERATE, STREAM_MODEL};
use lstm_am_abc::corpus::{generate_synthetic, load_dataset, save_dataset, Dataset as CoreDataset};
use lstm_am_abc::embedding::{
    build_vocab, cosine, load_embeddings, save_embeddings, train_skip_gram, EmbeddingTable,
};
use lstm_am_abc::evaluation::{self, format_comparison, format_report, MetricsReport};
use lstm_am_abc::model::{load_model, save_model, similarity, Architecture, ModelParams};
use lstm_am_abc::numerics::Rng;
use lstm_am_abc::trainer::random_grad_check;
use lstm_am_abc::{Error, ErrorKind};
use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn py_err(e: Error) -> PyErr {
    match e.kind() {
        ErrorKind::Divergence => PyArithmeticError::new_err(e.to_string()),
        ErrorKind::Usage | ErrorKind::Data => PyValueError::new_err(e.to_string()),
    }
}

/// Run settings: a named profile plus `key = value` overrides.
#[pyclass(name = "Config")]
#[derive(Clone)]
struct PyConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (profile = "desk", **overrides))]
    fn new(profile: &str, overrides: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut inner = RunConfig::profile(profile).map_err(py_err)?;
        if let Some(kw) = overrides {
            for (k, v) in kw.iter() {
                inner.set(&k.extract::<String>()?, &v.str()?.to_string()).map_err(py_err)?;
            }
            inner.validate().map_err(py_err)?;
        }
        Ok(PyConfig { inner })
    }

    /// Parses a settings file's text on top of the `desk` profile.
    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        let inner = RunConfig::parse(text, RunConfig::desk()).map_err(py_err)?;
        Ok(PyConfig { inner })
    }

    fn set(&mut self, key: &str, value: &Bound<'_, PyAny>) -> PyResult<()> {
        self.inner.set(key, &value.str()?.to_string()).map_err(py_err)?;
        self.inner.validate().map_err(py_err)
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn folds(&self) -> usize {
        self.inner.folds
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    fn __repr__(&self) -> String {
        format!("Config(profile={:?}, seed={})", self.inner.profile, self.inner.seed)
    }
}

/// Labelled sentence pairs, already tokenized and stemmed.
#[pyclass(name = "Dataset")]
#[derive(Clone)]
struct PyDataset {
    inner: CoreDataset,
}

#[pymethods]
impl PyDataset {
    /// Loads a pair file and preprocesses it with `config`.
    #[staticmethod]
    fn load(path: &str, config: &PyConfig) -> PyResult<Self> {
        let pre = config.inner.preprocessor().map_err(py_err)?;
        let inner = load_dataset(path)
            .and_then(|d| d.preprocessed(&pre))
            .map_err(py_err)?;
        Ok(PyDataset { inner })
    }

    /// The synthetic corpus the CLI's `generate` writes for the same settings.
    #[staticmethod]
    fn synthetic(config: &PyConfig) -> PyResult<Self> {
        let cfg = &config.inner;
        let mut rng = Rng::new(component_seed(cfg.seed, STREAM_GENERATE));
        let inner = generate_synthetic(&cfg.synthetic, &mut rng)
            .and_then(|d| d.preprocessed(&cfg.preprocessor()?))
            .map_err(py_err)?;
        Ok(PyDataset { inner })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        save_dataset(&self.inner, path, &[]).map_err(py_err)
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    #[getter]
    fn positives(&self) -> usize {
        self.inner.positives()
    }

    #[getter]
    fn negatives(&self) -> usize {
        self.inner.negatives()
    }

    /// `(tokens1, tokens2, label)` for every pair.
    fn pairs(&self) -> Vec<(Vec<String>, Vec<String>, f64)> {
        self.inner
            .pairs()
            .iter()
            .map(|p| (p.first.tokens().to_vec(), p.second.tokens().to_vec(), p.label()))
            .collect()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Word vectors.
#[pyclass(name = "Embeddings")]
#[derive(Clone)]
struct PyEmbeddings {
    inner: EmbeddingTable,
}

#[pymethods]
impl PyEmbeddings {
    /// Skip-gram vectors over the dataset's sentences, seeded like the CLI's `embed`.
    #[staticmethod]
    fn train(py: Python<'_>, dataset: &PyDataset, config: &PyConfig) -> PyResult<Self> {
        let cfg = &config.inner;
        let sentences = dataset.inner.sentences();
        let inner = py
            .detach(|| {
                let vocab = build_vocab(&sentences, cfg.skip_gram.min_count)?;
                let mut rng = Rng::new(component_seed(cfg.seed, STREAM_EMBED));
                train_skip_gram(&sentences, &vocab, &cfg.skip_gram, &mut rng)
            })
            .map_err(py_err)?
            .table;
        Ok(PyEmbeddings { inner })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyEmbeddings {
            inner: load_embeddings(path).map_err(py_err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        save_embeddings(&self.inner, path).map_err(py_err)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn words(&self) -> Vec<String> {
        self.inner.vocab().words().to_vec()
    }

    fn vector(&self, word: &str) -> Option<Vec<f64>> {
        self.inner.word_vector(word).map(<[f64]>::to_vec)
    }

    fn cosine(&self, a: &str, b: &str) -> PyResult<f64> {
        let get = |w: &str| {
            self.inner
                .word_vector(w)
                .ok_or_else(|| PyValueError::new_err(format!("`{w}` is not in the vocabulary")))
        };
        cosine(get(a)?, get(b)?).map_err(py_err)
    }
}

/// Config whose model input width matches `embeddings`.
fn matched(config: &PyConfig, embeddings: &PyEmbeddings) -> PyResult<RunConfig> {
    let mut cfg = config.inner.clone();
    cfg.set("embedding_dim", &embeddings.inner.dim().to_string()).map_err(py_err)?;
    cfg.validate().map_err(py_err)?;
    Ok(cfg)
}

/// Siamese network parameters.
#[pyclass(name = "Model")]
#[derive(Clone)]
struct PyModel {
    inner: ModelParams,
}

#[pymethods]
impl PyModel {
    /// Initializes (random or bee colony) and trains on all of `dataset`,
    /// exactly as the CLI's `train` does for the same settings.
    #[staticmethod]
    fn fit(py: Python<'_>, dataset: &PyDataset, embeddings: &PyEmbeddings, config: &PyConfig) -> PyResult<Self> {
        let cfg = matched(config, embeddings)?;
        let pairs = dataset.inner.embed(&embeddings.inner);
        let rng = Rng::new(component_seed(cfg.seed, STREAM_MODEL));
        let fit = py
            .detach(|| evaluation::fit(&pairs, &cfg.pipeline, &rng))
            .map_err(py_err)?;
        Ok(PyModel { inner: fit.model })
    }

    /// Uniform parameters in `[-scale, scale]`.
    #[staticmethod]
    #[pyo3(signature = (input_dim, hidden_dim, ffn_hidden, seed, scale = 1.0))]
    fn random(input_dim: usize, hidden_dim: usize, ffn_hidden: Vec<usize>, seed: u64, scale: f64) -> PyResult<Self> {
        let arch = Architecture::new(input_dim, hidden_dim, ffn_hidden).map_err(py_err)?;
        let inner = ModelParams::init_random(&arch, scale, &mut Rng::new(seed)).map_err(py_err)?;
        Ok(PyModel { inner })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyModel {
            inner: load_model(path).map_err(py_err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        save_model(&self.inner, path, &[]).map_err(py_err)
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.arch.param_count()
    }

    /// Parameters in canonical order.
    fn to_vector(&self) -> Vec<f64> {
        self.inner.flatten().into_inner()
    }

    fn with_vector(&self, values: Vec<f64>) -> PyResult<Self> {
        let inner = ModelParams::unflatten(&values, &self.inner.arch).map_err(py_err)?;
        Ok(PyModel { inner })
    }

    /// Similarity score of two raw sentences; words missing from the
    /// vocabulary are skipped.
    fn score(&self, a: &str, b: &str, embeddings: &PyEmbeddings, config: &PyConfig) -> PyResult<f64> {
        let pre = config.inner.preprocessor().map_err(py_err)?;
        let embed = |text: &str| -> PyResult<_> {
            let sentence = pre.preprocess(text).map_err(py_err)?;
            Ok(embeddings.inner.lookup(&sentence))
        };
        similarity(&self.inner, &embed(a)?, &embed(b)?).map_err(py_err)
    }

    /// Recall (percent), mean squared error and Pearson correlation on `dataset`.
    #[pyo3(signature = (dataset, embeddings, threshold = 0.5))]
    fn evaluate(&self, dataset: &PyDataset, embeddings: &PyEmbeddings, threshold: f64) -> PyResult<(f64, f64, f64)> {
        let threshold = evaluation::Threshold::new(threshold).map_err(py_err)?;
        let pairs = dataset.inner.embed(&embeddings.inner);
        let m = evaluation::evaluate(&self.inner, &pairs, threshold).map_err(py_err)?;
        Ok((m.recall, m.mse, m.pearson))
    }
}

fn summaries(py: Python<'_>, report: &MetricsReport) -> PyResult<Py<PyDict>> {
    let out = PyDict::new(py);
    for (name, s) in report.summaries() {
        out.set_item(name, (s.mean, s.std_dev, s.median))?;
    }
    Ok(out.unbind())
}

/// K-fold cross-validation of the configured pipeline. Returns
/// `{metric: (mean, std_dev, median)}` and the text report.
#[pyfunction]
#[pyo3(signature = (dataset, embeddings, config, folds = None))]
fn cross_validate(
    py: Python<'_>,
    dataset: &PyDataset,
    embeddings: &PyEmbeddings,
    config: &PyConfig,
    folds: Option<usize>,
) -> PyResult<(Py<PyDict>, String)> {
    let cfg = matched(config, embeddings)?;
    let k = folds.unwrap_or(cfg.folds);
    let report = py
        .detach(|| evaluation::cross_validate(&dataset.inner, &embeddings.inner, &cfg.pipeline, k, cfg.seed))
        .map_err(py_err)?;
    Ok((summaries(py, &report)?, format_report(&report, &cfg.header("eval"))))
}

/// Random against bee-colony initialization on shared folds. Returns the
/// two summary dicts and the text report.
#[pyfunction]
#[pyo3(signature = (dataset, embeddings, config, folds = None))]
fn compare(
    py: Python<'_>,
    dataset: &PyDataset,
    embeddings: &PyEmbeddings,
    config: &PyConfig,
    folds: Option<usize>,
) -> PyResult<(Py<PyDict>, Py<PyDict>, String)> {
    let cfg = matched(config, embeddings)?;
    let k = folds.unwrap_or(cfg.folds);
    let cmp = py
        .detach(|| evaluation::compare(&dataset.inner, &embeddings.inner, &cfg.pipeline, k, cfg.seed))
        .map_err(py_err)?;
    Ok((
        summaries(py, &cmp.random)?,
        summaries(py, &cmp.abc)?,
        format_comparison(&cmp, &cfg.header("compare")),
    ))
}

/// Maximises `fitness(list[float]) -> float` over the box `[lower, upper]^dim`.
/// Returns `(best_position, best_fitness, history)` where history holds
/// `(cycle, best_fitness, evaluations_used)` rows.
#[pyfunction]
#[pyo3(signature = (fitness, dim, population = 20, max_evaluations = 2000, seed = 0, lower = -1.0, upper = 1.0, limit = None))]
#[allow(clippy::too_many_arguments)]
fn bee_colony(
    py: Python<'_>,
    fitness: Py<PyAny>,
    dim: usize,
    population: usize,
    max_evaluations: usize,
    seed: u64,
    lower: f64,
    upper: f64,
    limit: Option<usize>,
) -> PyResult<(Vec<f64>, f64, Vec<(usize, f64, usize)>)> {
    let mut cfg = AbcConfig::new(population, dim, max_evaluations, seed);
    cfg.lower = lower;
    cfg.upper = upper;
    cfg.limit = limit;
    let objective = |x: &[f64]| -> lstm_am_abc::Result<f64> {
        Python::attach(|py| {
            fitness
                .bind(py)
                .call1((x.to_vec(),))
                .and_then(|v| v.extract::<f64>())
                .map_err(|e| Error::argument(format!("fitness callback: {e}")))
        })
    };
    let out = py.detach(|| run_abc(&cfg, &objective, &mut |_| {})).map_err(py_err)?;
    let history = out
        .history
        .iter()
        .map(|r| (r.cycle, r.best_fitness, r.evaluations_used))
        .collect();
    Ok((out.best.position, out.best.fitness, history))
}

/// Finite-difference check of the analytic gradient on a random instance.
/// Returns `(max_relative_error, {group: max_relative_error})`.
#[pyfunction]
#[pyo3(signature = (seed = 0, length = 3, step = 1e-5, tolerance = 1e-4))]
fn gradient_check(seed: u64, length: usize, step: f64, tolerance: f64) -> PyResult<(f64, Vec<(String, f64)>)> {
    let report = random_grad_check(&Architecture::tiny(), length, step, tolerance, &mut Rng::new(seed))
        .map_err(py_err)?;
    Ok((report.max_rel_error, report.groups))
}

#[pymodule]
fn lstm_am_abc_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyEmbeddings>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(cross_validate, m)?)?;
    m.add_function(wrap_pyfunction!(compare, m)?)?;
    m.add_function(wrap_pyfunction!(bee_colony, m)?)?;
    m.add_function(wrap_pyfunction!(gradient_check, m)?)?;
    Ok(())
}
