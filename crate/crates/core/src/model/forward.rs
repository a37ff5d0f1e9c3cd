use crate::error::{Error, Result};
use crate::numerics::{dot, sigmoid, softmax, Vector};

use super::params::{AttentionParams, BlstmParams, FfnParams, LstmDirectionParams, ModelParams};

/// Activations of one LSTM step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepTrace {
    pub input_gate: Vector,
    pub forget_gate: Vector,
    pub output_gate: Vector,
    /// `tanh(W_j x + U_j h + b_j)`
    pub cell_input: Vector,
    pub cell: Vector,
    pub cell_tanh: Vector,
    pub hidden: Vector,
}

fn check_len(what: &str, v: &[f64], expected: usize) -> Result<()> {
    if v.len() != expected {
        return Err(Error::dimension(format!(
            "{what} has length {}, expected {expected}",
            v.len()
        )));
    }
    Ok(())
}

/// One LSTM update:
/// `i, f, o = σ(W x + U h_prev + b)`, `c = f ⊙ c_prev + i ⊙ tanh(W_j x + U_j h_prev + b_j)`,
/// `h = o ⊙ tanh(c)`.
pub fn lstm_step(
    params: &LstmDirectionParams,
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
) -> Result<StepTrace> {
    let h = params.hidden_dim();
    check_len("input vector", x, params.input_dim())?;
    check_len("previous hidden state", h_prev, h)?;
    check_len("previous cell state", c_prev, h)?;
    Ok(step(params, x, h_prev, c_prev))
}

fn step(params: &LstmDirectionParams, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> StepTrace {
    let pre = |g: &super::params::Gate| -> Vector {
        let mut z = g.b.clone();
        g.w.mul_vec_acc(x, &mut z);
        g.u.mul_vec_acc(h_prev, &mut z);
        z
    };
    let mut i = pre(&params.input);
    let mut f = pre(&params.forget);
    let mut o = pre(&params.output);
    let mut g = pre(&params.cell);
    i.iter_mut().for_each(|v| *v = sigmoid(*v));
    f.iter_mut().for_each(|v| *v = sigmoid(*v));
    o.iter_mut().for_each(|v| *v = sigmoid(*v));
    g.iter_mut().for_each(|v| *v = v.tanh());
    let cell: Vector = (0..i.len()).map(|k| f[k] * c_prev[k] + i[k] * g[k]).collect();
    let cell_tanh: Vector = cell.iter().map(|c| c.tanh()).collect();
    let hidden = o.iter().zip(&cell_tanh).map(|(o, t)| o * t).collect();
    StepTrace {
        input_gate: i,
        forget_gate: f,
        output_gate: o,
        cell_input: g,
        cell,
        cell_tanh,
        hidden,
    }
}

/// Runs one direction over `inputs` in the given order from zero state.
fn run_direction<'a>(
    params: &LstmDirectionParams,
    inputs: impl Iterator<Item = &'a Vector>,
) -> Vec<StepTrace> {
    let h = params.hidden_dim();
    let zeros = vec![0.0; h];
    let mut steps: Vec<StepTrace> = Vec::new();
    for x in inputs {
        let next = match steps.last() {
            Some(prev) => step(params, x, &prev.hidden, &prev.cell),
            None => step(params, x, &zeros, &zeros),
        };
        steps.push(next);
    }
    steps
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlstmTrace {
    pub inputs: Vec<Vector>,
    /// Forward-direction steps, position order.
    pub forward: Vec<StepTrace>,
    /// Backward-direction steps in processing order: entry `k` is position `T-1-k`.
    pub backward: Vec<StepTrace>,
    /// `[forward_t ; backward_t]` per position.
    pub outputs: Vec<Vector>,
}

pub fn blstm_forward_traced(params: &BlstmParams, inputs: &[Vector]) -> Result<BlstmTrace> {
    if inputs.is_empty() {
        return Err(Error::argument("BLSTM input sequence is empty"));
    }
    let d = params.forward.input_dim();
    for x in inputs {
        check_len("word vector", x, d)?;
    }
    let forward = run_direction(&params.forward, inputs.iter());
    let backward = run_direction(&params.backward, inputs.iter().rev());
    let t_len = inputs.len();
    let outputs = (0..t_len)
        .map(|t| {
            let mut out = forward[t].hidden.clone();
            out.extend_from_slice(&backward[t_len - 1 - t].hidden);
            out
        })
        .collect();
    Ok(BlstmTrace {
        inputs: inputs.to_vec(),
        forward,
        backward,
        outputs,
    })
}

pub fn blstm_forward(params: &BlstmParams, inputs: &[Vector]) -> Result<Vec<Vector>> {
    Ok(blstm_forward_traced(params, inputs)?.outputs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTrace {
    /// `tanh(w·h_i + b)`
    pub logits: Vector,
    pub weights: Vector,
    pub pooled: Vector,
}

pub fn attention_traced(params: &AttentionParams, states: &[Vector]) -> Result<AttentionTrace> {
    if states.is_empty() {
        return Err(Error::argument("attention over an empty sequence"));
    }
    for s in states {
        check_len("attention state", s, params.w.len())?;
    }
    let logits: Vector = states.iter().map(|s| (dot(&params.w, s) + params.b).tanh()).collect();
    let weights = softmax(&logits);
    let mut pooled = vec![0.0; params.w.len()];
    for (a, s) in weights.iter().zip(states) {
        for (p, x) in pooled.iter_mut().zip(s) {
            *p += a * x;
        }
    }
    Ok(AttentionTrace {
        logits,
        weights,
        pooled,
    })
}

/// Softmax-weighted sum of `states`; returns the pooled vector and the weights.
pub fn attention_pool(params: &AttentionParams, states: &[Vector]) -> Result<(Vector, Vector)> {
    let t = attention_traced(params, states)?;
    Ok((t.pooled, t.weights))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FfnTrace {
    /// `activations[0]` is the input; `activations[l + 1]` the output of layer `l`.
    pub activations: Vec<Vector>,
}

pub fn ffn_forward(params: &FfnParams, input: &[f64]) -> Result<(f64, FfnTrace)> {
    let first = params
        .layers
        .first()
        .ok_or_else(|| Error::dimension("feed-forward head has no layers"))?;
    check_len("feed-forward input", input, first.weight.cols())?;
    let last = params.layers.len() - 1;
    let mut activations = Vec::with_capacity(params.layers.len() + 1);
    activations.push(input.to_vec());
    for (l, layer) in params.layers.iter().enumerate() {
        let prev = activations.last().expect("input pushed");
        check_len("dense layer input", prev, layer.weight.cols())?;
        let mut z = layer.bias.clone();
        layer.weight.mul_vec_acc(prev, &mut z);
        if l == last {
            z.iter_mut().for_each(|v| *v = sigmoid(*v));
        } else {
            z.iter_mut().for_each(|v| *v = v.tanh());
        }
        activations.push(z);
    }
    let out = activations.last().expect("at least one layer");
    if out.len() != 1 {
        return Err(Error::dimension(format!("output layer has width {}, expected 1", out.len())));
    }
    Ok((out[0], FfnTrace { activations }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchTrace {
    pub blstm: BlstmTrace,
    pub attention: AttentionTrace,
}

/// Everything the backward pass needs.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub first: BranchTrace,
    pub second: BranchTrace,
    pub ffn: FfnTrace,
    pub similarity: f64,
}

impl ForwardTrace {
    /// `[s1 ; s2 ; |s2 - s1|]`
    pub fn ffn_input(&self) -> &[f64] {
        &self.ffn.activations[0]
    }
}

fn branch(blstm: &BlstmParams, attn: &AttentionParams, emb: &[Vector]) -> Result<BranchTrace> {
    let blstm = blstm_forward_traced(blstm, emb)?;
    let attention = attention_traced(attn, &blstm.outputs)?;
    Ok(BranchTrace { blstm, attention })
}

/// Similarity in (0, 1) of two embedded sentences plus the full trace.
pub fn similarity_forward(
    model: &ModelParams,
    emb1: &[Vector],
    emb2: &[Vector],
) -> Result<(f64, ForwardTrace)> {
    let first = branch(&model.blstm1, &model.attn1, emb1)?;
    let second = branch(&model.blstm2, &model.attn2, emb2)?;
    let s1 = &first.attention.pooled;
    let s2 = &second.attention.pooled;
    let mut input = Vec::with_capacity(3 * s1.len());
    input.extend_from_slice(s1);
    input.extend_from_slice(s2);
    input.extend(s1.iter().zip(s2).map(|(a, b)| (b - a).abs()));
    let (similarity, ffn) = ffn_forward(&model.ffn, &input)?;
    Ok((
        similarity,
        ForwardTrace {
            first,
            second,
            ffn,
            similarity,
        },
    ))
}

pub fn similarity(model: &ModelParams, emb1: &[Vector], emb2: &[Vector]) -> Result<f64> {
    Ok(similarity_forward(model, emb1, emb2)?.0)
}
