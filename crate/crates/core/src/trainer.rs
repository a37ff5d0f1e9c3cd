//! Class-weighted squared-error loss, exact backpropagation through the
//! whole network, finite-difference checking, gradient-descent trainers and
//! the bee-colony fitness.

use std::fmt;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::corpus::{is_positive_label, EmbeddedPair, Origin};
use crate::error::{Error, Result};
use crate::model::{
    similarity, similarity_forward, Architecture, AttentionParams, BlstmParams, BranchTrace,
    ForwardTrace, Gradient, LstmDirectionParams, ModelParams, ParamVector, StepTrace,
};
use crate::numerics::{axpy, dot, Rng, Vector};

/// Per-class loss weights: `alpha` for positive pairs, `beta` for negative pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            alpha: 1.0,
            beta: 0.5,
        }
    }
}

impl LossConfig {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha >= 0.0 && beta >= 0.0) || (alpha == 0.0 && beta == 0.0) {
            return Err(Error::argument(format!(
                "loss weights must be non-negative and not both zero (alpha={alpha}, beta={beta})"
            )));
        }
        Ok(LossConfig { alpha, beta })
    }

    /// Plain squared error.
    pub fn unweighted() -> Self {
        LossConfig {
            alpha: 1.0,
            beta: 1.0,
        }
    }

    pub fn weight(&self, label: f64) -> f64 {
        if is_positive_label(label) {
            self.alpha
        } else {
            self.beta
        }
    }
}

pub fn pair_loss(prediction: f64, label: f64, cfg: &LossConfig) -> f64 {
    cfg.weight(label) * (prediction - label).powi(2)
}

/// Mean of [`pair_loss`] over `pairs`.
pub fn dataset_loss(model: &ModelParams, pairs: &[EmbeddedPair], cfg: &LossConfig) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::argument("loss over an empty set"));
    }
    let mut total = 0.0;
    for p in pairs {
        total += pair_loss(similarity(model, &p.first, &p.second)?, p.label, cfg);
    }
    Ok(total / pairs.len() as f64)
}

/// Gradient of `pair_loss(trace.similarity, label)` with respect to every parameter.
pub fn backward(
    model: &ModelParams,
    trace: &ForwardTrace,
    label: f64,
    cfg: &LossConfig,
) -> Result<Gradient> {
    let mut grads = ModelParams::zeros(&model.arch);
    let dpred = 2.0 * cfg.weight(label) * (trace.similarity - label);
    accumulate(model, trace, dpred, &mut grads)?;
    Ok(grads.flatten())
}

/// Adds `dpred · ∂similarity/∂θ` into `grads`.
fn accumulate(
    model: &ModelParams,
    trace: &ForwardTrace,
    dpred: f64,
    grads: &mut ModelParams,
) -> Result<()> {
    let acts = &trace.ffn.activations;
    let layers = &model.ffn.layers;
    let n = model.arch.state_dim();
    if acts.len() != layers.len() + 1
        || acts[0].len() != 3 * n
        || trace.first.attention.pooled.len() != n
        || trace.second.attention.pooled.len() != n
    {
        return Err(Error::dimension("forward trace does not match the model"));
    }
    if dpred == 0.0 {
        return Ok(());
    }

    let out = acts[layers.len()][0];
    let mut delta = vec![dpred * out * (1.0 - out)];
    let mut d_input = Vec::new();
    for l in (0..layers.len()).rev() {
        let g = &mut grads.ffn.layers[l];
        g.weight.add_outer(&delta, &acts[l]);
        axpy(1.0, &delta, &mut g.bias);
        let mut d_prev = vec![0.0; acts[l].len()];
        layers[l].weight.tr_mul_vec_acc(&delta, &mut d_prev);
        if l > 0 {
            for (d, a) in d_prev.iter_mut().zip(&acts[l]) {
                *d *= 1.0 - a * a;
            }
            delta = d_prev;
        } else {
            d_input = d_prev;
        }
    }

    let input = &acts[0];
    let mut ds1 = d_input[..n].to_vec();
    let mut ds2 = d_input[n..2 * n].to_vec();
    for k in 0..n {
        let diff = input[n + k] - input[k];
        let sign = if diff > 0.0 {
            1.0
        } else if diff < 0.0 {
            -1.0
        } else {
            0.0
        };
        let d_abs = d_input[2 * n + k] * sign;
        ds1[k] -= d_abs;
        ds2[k] += d_abs;
    }
    branch_backward(
        &model.blstm1,
        &model.attn1,
        &trace.first,
        &ds1,
        &mut grads.blstm1,
        &mut grads.attn1,
    )?;
    branch_backward(
        &model.blstm2,
        &model.attn2,
        &trace.second,
        &ds2,
        &mut grads.blstm2,
        &mut grads.attn2,
    )
}

fn branch_backward(
    blstm: &BlstmParams,
    attn: &AttentionParams,
    trace: &BranchTrace,
    d_pooled: &[f64],
    g_blstm: &mut BlstmParams,
    g_attn: &mut AttentionParams,
) -> Result<()> {
    let states = &trace.blstm.outputs;
    let at = &trace.attention;
    if at.weights.len() != states.len() || trace.blstm.inputs.len() != states.len() {
        return Err(Error::dimension("attention trace does not match the BLSTM trace"));
    }

    // pooled = Σ α_i h_i, α = softmax(u), u_i = tanh(w·h_i + b)
    let d_alpha: Vector = states.iter().map(|h| dot(d_pooled, h)).collect();
    let mean: f64 = at.weights.iter().zip(&d_alpha).map(|(a, d)| a * d).sum();
    let mut d_states: Vec<Vector> = at
        .weights
        .iter()
        .map(|&a| d_pooled.iter().map(|d| a * d).collect())
        .collect();
    for (i, h) in states.iter().enumerate() {
        let du = at.weights[i] * (d_alpha[i] - mean);
        let dz = du * (1.0 - at.logits[i] * at.logits[i]);
        if dz != 0.0 {
            axpy(dz, h, &mut g_attn.w);
            g_attn.b += dz;
            axpy(dz, &attn.w, &mut d_states[i]);
        }
    }

    let t_len = states.len();
    let h = blstm.forward.hidden_dim();
    let inputs = &trace.blstm.inputs;
    let fwd_inputs: Vec<&[f64]> = inputs.iter().map(|x| x.as_slice()).collect();
    let fwd_dh: Vec<&[f64]> = d_states.iter().map(|d| &d[..h]).collect();
    direction_backward(&blstm.forward, &trace.blstm.forward, &fwd_inputs, &fwd_dh, &mut g_blstm.forward);
    let bwd_inputs: Vec<&[f64]> = (0..t_len).map(|k| inputs[t_len - 1 - k].as_slice()).collect();
    let bwd_dh: Vec<&[f64]> = (0..t_len).map(|k| &d_states[t_len - 1 - k][h..]).collect();
    direction_backward(&blstm.backward, &trace.blstm.backward, &bwd_inputs, &bwd_dh, &mut g_blstm.backward);
    Ok(())
}

/// Backpropagation through time for one direction; all slices are in processing order.
fn direction_backward(
    params: &LstmDirectionParams,
    steps: &[StepTrace],
    inputs: &[&[f64]],
    d_hidden_out: &[&[f64]],
    grads: &mut LstmDirectionParams,
) {
    let h = params.hidden_dim();
    let zeros = vec![0.0; h];
    let mut dh_next = vec![0.0; h];
    let mut dc_next = vec![0.0; h];
    let mut da = [vec![0.0; h], vec![0.0; h], vec![0.0; h], vec![0.0; h]];
    for k in (0..steps.len()).rev() {
        let s = &steps[k];
        let (h_prev, c_prev) = if k > 0 {
            (&steps[k - 1].hidden, &steps[k - 1].cell)
        } else {
            (&zeros, &zeros)
        };
        let mut dc_prev = vec![0.0; h];
        for j in 0..h {
            let dh = d_hidden_out[k][j] + dh_next[j];
            let (i, f, o, g) = (s.input_gate[j], s.forget_gate[j], s.output_gate[j], s.cell_input[j]);
            let tc = s.cell_tanh[j];
            let d_o = dh * tc;
            let dc = dc_next[j] + dh * o * (1.0 - tc * tc);
            da[0][j] = dc * g * i * (1.0 - i);
            da[1][j] = dc * c_prev[j] * f * (1.0 - f);
            da[2][j] = d_o * o * (1.0 - o);
            da[3][j] = dc * i * (1.0 - g * g);
            dc_prev[j] = dc * f;
        }
        let mut dh_prev = vec![0.0; h];
        for ((gate, grad), d) in params.gates().into_iter().zip(grads.gates_mut()).zip(&da) {
            grad.w.add_outer(d, inputs[k]);
            grad.u.add_outer(d, h_prev);
            axpy(1.0, d, &mut grad.b);
            gate.u.tr_mul_vec_acc(d, &mut dh_prev);
        }
        dh_next = dh_prev;
        dc_next = dc_prev;
    }
}

/// Mean loss and mean gradient over `pairs`, accumulated in index order.
pub fn loss_and_gradient(
    model: &ModelParams,
    pairs: &[EmbeddedPair],
    cfg: &LossConfig,
) -> Result<(f64, Gradient)> {
    if pairs.is_empty() {
        return Err(Error::argument("gradient over an empty set"));
    }
    let mut grads = ModelParams::zeros(&model.arch);
    let mut total = 0.0;
    for p in pairs {
        let (pred, trace) = similarity_forward(model, &p.first, &p.second)?;
        total += pair_loss(pred, p.label, cfg);
        let dpred = 2.0 * cfg.weight(p.label) * (pred - p.label);
        accumulate(model, &trace, dpred, &mut grads)?;
    }
    let scale = 1.0 / pairs.len() as f64;
    let mut g = grads.flatten();
    g.iter_mut().for_each(|x| *x *= scale);
    Ok((total * scale, g))
}

/// `|a - n| / max(|a|, |n|, 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Central differences of the pair loss with step `step`.
pub fn numeric_gradient(
    model: &ModelParams,
    pair: &EmbeddedPair,
    cfg: &LossConfig,
    step: f64,
) -> Result<Gradient> {
    if !(step > 0.0) {
        return Err(Error::argument(format!("finite-difference step must be positive, got {step}")));
    }
    let base = model.flatten();
    let mut probe = model.clone();
    let mut v = base.clone();
    let mut loss_at = |v: &[f64]| -> Result<f64> {
        probe.assign(v);
        Ok(pair_loss(similarity(&probe, &pair.first, &pair.second)?, pair.label, cfg))
    };
    let mut out = ParamVector::zeros(base.len());
    for i in 0..base.len() {
        v[i] = base[i] + step;
        let plus = loss_at(&v)?;
        v[i] = base[i] - step;
        let minus = loss_at(&v)?;
        v[i] = base[i];
        out[i] = (plus - minus) / (2.0 * step);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Indices whose relative error exceeds the tolerance.
    pub failing: Vec<usize>,
    /// Maximum relative error per named parameter group.
    pub groups: Vec<(String, f64)>,
    pub analytic: Gradient,
    pub numeric: Gradient,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failing.is_empty()
    }
}

pub fn compare_gradients(
    arch: &Architecture,
    analytic: Gradient,
    numeric: Gradient,
    tolerance: f64,
) -> GradCheckReport {
    let errors: Vec<f64> = analytic
        .iter()
        .zip(numeric.iter())
        .map(|(&a, &n)| relative_error(a, n))
        .collect();
    let max_of = |r: std::ops::Range<usize>| errors[r].iter().copied().fold(0.0, f64::max);
    GradCheckReport {
        max_rel_error: max_of(0..errors.len()),
        failing: (0..errors.len()).filter(|&i| !(errors[i] < tolerance)).collect(),
        groups: arch
            .param_groups()
            .into_iter()
            .map(|(name, r)| (name, max_of(r)))
            .collect(),
        analytic,
        numeric,
    }
}

pub fn grad_check(
    model: &ModelParams,
    pair: &EmbeddedPair,
    cfg: &LossConfig,
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let (_, trace) = similarity_forward(model, &pair.first, &pair.second)?;
    let analytic = backward(model, &trace, pair.label, cfg)?;
    let numeric = numeric_gradient(model, pair, cfg, step)?;
    Ok(compare_gradients(&model.arch, analytic, numeric, tolerance))
}

/// Gradient check of a random model (weights in ±0.8) on a random pair of
/// `length`-token sentences with entries in ±1 and a 0/1 label.
pub fn random_grad_check(
    arch: &Architecture,
    length: usize,
    step: f64,
    tolerance: f64,
    rng: &mut Rng,
) -> Result<GradCheckReport> {
    if length == 0 {
        return Err(Error::argument("sentence length must be positive"));
    }
    let model = ModelParams::init_random(arch, 0.8, rng)?;
    let label = rng.below(2) as f64;
    let mut sentence = || -> Result<Vec<Vector>> {
        (0..length)
            .map(|_| (0..arch.input_dim).map(|_| rng.uniform(-1.0, 1.0)).collect())
            .collect()
    };
    let pair = EmbeddedPair {
        first: sentence()?,
        second: sentence()?,
        label,
        origin: Origin::Natural,
        source: 0,
    };
    grad_check(&model, &pair, &LossConfig::default(), step, tolerance)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainerKind {
    /// Gradient descent with momentum.
    Gdm,
    /// Gradient descent with an adaptive learning rate.
    Gda,
}

impl FromStr for TrainerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gdm" => Ok(TrainerKind::Gdm),
            "gda" => Ok(TrainerKind::Gda),
            _ => Err(Error::argument(format!("unknown trainer {s:?} (expected gdm or gda)"))),
        }
    }
}

impl fmt::Display for TrainerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrainerKind::Gdm => "gdm",
            TrainerKind::Gda => "gda",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub lr_increase: f64,
    pub lr_decrease: f64,
    /// `None` trains full-batch.
    pub batch_size: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 60,
            learning_rate: 0.05,
            momentum: 0.9,
            lr_increase: 1.05,
            lr_decrease: 0.7,
            batch_size: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::argument("epochs must be positive"));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::argument(format!("bad learning rate {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::argument(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        if !(self.lr_increase > 0.0 && self.lr_decrease > 0.0) {
            return Err(Error::argument("learning-rate factors must be positive"));
        }
        if self.batch_size == Some(0) {
            return Err(Error::argument("batch size must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub learning_rate: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ModelParams,
    pub history: Vec<EpochRecord>,
}

fn batches(n: usize, cfg: &TrainConfig, rng: &mut Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    match cfg.batch_size {
        Some(b) if b < n => {
            rng.shuffle(&mut order);
            order.chunks(b).map(<[usize]>::to_vec).collect()
        }
        _ => vec![order],
    }
}

fn select(data: &[EmbeddedPair], idx: &[usize]) -> Vec<EmbeddedPair> {
    idx.iter().map(|&i| data[i].clone()).collect()
}

fn check_finite(epoch: usize, loss: f64) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence { epoch, loss })
    }
}

/// `v ← μ·v − lr·g; θ ← θ + v` once per batch. The recorded loss of an
/// epoch is the sample-weighted mean of its pre-update batch losses.
pub fn train_gdm(
    model: &ModelParams,
    data: &[EmbeddedPair],
    loss: &LossConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::argument("training set is empty"));
    }
    let mut rng = Rng::new(cfg.seed);
    let mut current = model.clone();
    let mut theta = model.flatten();
    let mut velocity = vec![0.0; theta.len()];
    let full = batches(data.len(), &TrainConfig { batch_size: None, ..cfg.clone() }, &mut rng);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let plan = if cfg.batch_size.is_some() {
            batches(data.len(), cfg, &mut rng)
        } else {
            full.clone()
        };
        let mut epoch_loss = 0.0;
        for idx in &plan {
            let (l, g) = if plan.len() == 1 {
                loss_and_gradient(&current, data, loss)?
            } else {
                loss_and_gradient(&current, &select(data, idx), loss)?
            };
            check_finite(epoch, l)?;
            epoch_loss += l * idx.len() as f64;
            for ((t, v), gi) in theta.iter_mut().zip(velocity.iter_mut()).zip(g.iter()) {
                *v = cfg.momentum * *v - cfg.learning_rate * gi;
                *t += *v;
            }
            current.assign(&theta);
        }
        history.push(EpochRecord {
            epoch,
            loss: epoch_loss / data.len() as f64,
            learning_rate: cfg.learning_rate,
        });
    }
    Ok(TrainOutcome {
        model: current,
        history,
    })
}

/// Plain descent whose learning rate grows after an improving epoch and
/// shrinks (with the step undone) after a worsening one. The recorded loss
/// is the full-set loss at the parameters kept after the epoch.
pub fn train_gda(
    model: &ModelParams,
    data: &[EmbeddedPair],
    loss: &LossConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::argument("training set is empty"));
    }
    let mut rng = Rng::new(cfg.seed);
    let mut lr = cfg.learning_rate;
    let mut accepted = model.clone();
    let (mut best_loss, mut grad) = loss_and_gradient(&accepted, data, loss)?;
    check_finite(0, best_loss)?;
    let mut candidate = accepted.clone();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let mut theta = accepted.flatten();
        let plan = batches(data.len(), cfg, &mut rng);
        if plan.len() == 1 {
            axpy(-lr, &grad, &mut theta);
            candidate.assign(&theta);
        } else {
            candidate.assign(&theta);
            for idx in &plan {
                let (_, g) = loss_and_gradient(&candidate, &select(data, idx), loss)?;
                axpy(-lr, &g, &mut theta);
                candidate.assign(&theta);
            }
        }
        let (cand_loss, cand_grad) = loss_and_gradient(&candidate, data, loss)?;
        let used = lr;
        if cand_loss < best_loss {
            std::mem::swap(&mut accepted, &mut candidate);
            best_loss = cand_loss;
            grad = cand_grad;
            lr *= cfg.lr_increase;
        } else {
            lr *= cfg.lr_decrease;
        }
        history.push(EpochRecord {
            epoch,
            loss: best_loss,
            learning_rate: used,
        });
    }
    Ok(TrainOutcome {
        model: accepted,
        history,
    })
}

pub fn train(
    kind: TrainerKind,
    model: &ModelParams,
    data: &[EmbeddedPair],
    loss: &LossConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    match kind {
        TrainerKind::Gdm => train_gdm(model, data, loss, cfg),
        TrainerKind::Gda => train_gda(model, data, loss, cfg),
    }
}

/// `epoch<TAB>loss<TAB>learningRate` lines after `#` comment lines.
pub fn format_history(history: &[EpochRecord], comments: &[String]) -> String {
    let mut out = String::new();
    for c in comments {
        let _ = writeln!(out, "# {c}");
    }
    for r in history {
        let _ = writeln!(out, "{}\t{}\t{}", r.epoch, r.loss, r.learning_rate);
    }
    out
}

pub fn save_history(history: &[EpochRecord], path: impl AsRef<Path>, comments: &[String]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_history(history, comments)).map_err(|e| Error::io(path, e))
}

pub fn fitness_from_sse(sse: f64) -> f64 {
    1.0 / (1.0 + sse)
}

/// `1 / (1 + Σ (y − ŷ)²)` over `data`, unweighted.
pub fn fitness_of(model: &ModelParams, data: &[EmbeddedPair]) -> Result<f64> {
    let mut sse = 0.0;
    for p in data {
        sse += (p.label - similarity(model, &p.first, &p.second)?).powi(2);
    }
    Ok(fitness_from_sse(sse))
}

pub fn fitness(vec: &[f64], data: &[EmbeddedPair], arch: &Architecture) -> Result<f64> {
    fitness_of(&ModelParams::unflatten(vec, arch)?, data)
}
