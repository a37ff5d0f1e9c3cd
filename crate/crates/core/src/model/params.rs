use std::ops::{Deref, DerefMut, Range};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng, Vector};

/// Layer sizes of the whole Siamese network.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Architecture {
    /// Word-vector dimension.
    pub input_dim: usize,
    /// Hidden size of each LSTM direction.
    pub hidden_dim: usize,
    /// Hidden layer widths of the feed-forward head; the output layer (width 1) is implicit.
    pub ffn_hidden: Vec<usize>,
}

impl Architecture {
    pub fn new(input_dim: usize, hidden_dim: usize, ffn_hidden: Vec<usize>) -> Result<Self> {
        if input_dim == 0 || hidden_dim == 0 || ffn_hidden.contains(&0) {
            return Err(Error::argument("architecture dimensions must be positive"));
        }
        Ok(Architecture {
            input_dim,
            hidden_dim,
            ffn_hidden,
        })
    }

    /// The smallest shape used for gradient checks.
    pub fn tiny() -> Self {
        Architecture {
            input_dim: 2,
            hidden_dim: 2,
            ffn_hidden: vec![4],
        }
    }

    pub fn desk() -> Self {
        Architecture {
            input_dim: 16,
            hidden_dim: 8,
            ffn_hidden: vec![16, 8],
        }
    }

    pub fn full() -> Self {
        Architecture {
            input_dim: 80,
            hidden_dim: 50,
            ffn_hidden: vec![256, 128, 64],
        }
    }

    /// Width of one BLSTM output (both directions).
    pub fn state_dim(&self) -> usize {
        2 * self.hidden_dim
    }

    /// Width of the feed-forward input `[s1; s2; |s2 - s1|]`.
    pub fn ffn_input_dim(&self) -> usize {
        3 * self.state_dim()
    }

    /// `(in, out)` of each dense layer, output layer last.
    pub fn ffn_layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.ffn_hidden.len() + 1);
        let mut width = self.ffn_input_dim();
        for &h in self.ffn_hidden.iter().chain(std::iter::once(&1)) {
            dims.push((width, h));
            width = h;
        }
        dims
    }

    pub fn lstm_direction_params(&self) -> usize {
        let (d, h) = (self.input_dim, self.hidden_dim);
        4 * (h * d + h * h + h)
    }

    pub fn attention_params(&self) -> usize {
        self.state_dim() + 1
    }

    pub fn ffn_params(&self) -> usize {
        self.ffn_layer_dims().iter().map(|&(i, o)| o * i + o).sum()
    }

    /// Length of the flat parameter vector.
    pub fn param_count(&self) -> usize {
        4 * self.lstm_direction_params() + 2 * self.attention_params() + self.ffn_params()
    }

    /// Named index ranges of the flat vector, in canonical order.
    pub fn param_groups(&self) -> Vec<(String, Range<usize>)> {
        let mut groups = Vec::new();
        let mut start = 0;
        let mut push = |name: String, len: usize| {
            groups.push((name, start..start + len));
            start += len;
        };
        push("blstm1".into(), 2 * self.lstm_direction_params());
        push("blstm2".into(), 2 * self.lstm_direction_params());
        push("attn1".into(), self.attention_params());
        push("attn2".into(), self.attention_params());
        for (i, (inp, out)) in self.ffn_layer_dims().into_iter().enumerate() {
            push(format!("ffn{i}"), out * inp + out);
        }
        groups
    }
}

/// Flattened model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(Vec<f64>);

/// Derivative of a loss with respect to every entry of a [`ParamVector`].
pub type Gradient = ParamVector;

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Self {
        ParamVector(values)
    }

    pub fn zeros(len: usize) -> Self {
        ParamVector(vec![0.0; len])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for ParamVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParamVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        ParamVector(v)
    }
}

/// Weights of one gate (or the cell input): `W x + U h + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gate {
    pub w: Matrix,
    pub u: Matrix,
    pub b: Vector,
}

impl Gate {
    fn zeros(d: usize, h: usize) -> Self {
        Gate {
            w: Matrix::zeros(h, d),
            u: Matrix::zeros(h, h),
            b: vec![0.0; h],
        }
    }

    fn visit<'a>(&'a self, f: &mut impl FnMut(&'a [f64])) {
        f(self.w.as_slice());
        f(self.u.as_slice());
        f(&self.b);
    }

    fn visit_mut(&mut self, f: &mut impl FnMut(&mut [f64])) {
        f(self.w.as_mut_slice());
        f(self.u.as_mut_slice());
        f(&mut self.b);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmDirectionParams {
    pub input: Gate,
    pub forget: Gate,
    pub output: Gate,
    pub cell: Gate,
}

impl LstmDirectionParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        let g = || Gate::zeros(input_dim, hidden_dim);
        LstmDirectionParams {
            input: g(),
            forget: g(),
            output: g(),
            cell: g(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input.w.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.input.w.rows()
    }

    /// Gates in canonical order: input, forget, output, cell input.
    pub fn gates(&self) -> [&Gate; 4] {
        [&self.input, &self.forget, &self.output, &self.cell]
    }

    pub fn gates_mut(&mut self) -> [&mut Gate; 4] {
        [&mut self.input, &mut self.forget, &mut self.output, &mut self.cell]
    }

    fn visit<'a>(&'a self, f: &mut impl FnMut(&'a [f64])) {
        for g in self.gates() {
            g.visit(f);
        }
    }

    fn visit_mut(&mut self, f: &mut impl FnMut(&mut [f64])) {
        for g in self.gates_mut() {
            g.visit_mut(f);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlstmParams {
    pub forward: LstmDirectionParams,
    pub backward: LstmDirectionParams,
}

impl BlstmParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        BlstmParams {
            forward: LstmDirectionParams::zeros(input_dim, hidden_dim),
            backward: LstmDirectionParams::zeros(input_dim, hidden_dim),
        }
    }
}

/// Scores each BLSTM state to a scalar logit `tanh(w·h + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub w: Vector,
    pub b: f64,
}

impl AttentionParams {
    pub fn zeros(state_dim: usize) -> Self {
        AttentionParams {
            w: vec![0.0; state_dim],
            b: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: Matrix,
    pub bias: Vector,
}

/// tanh hidden layers followed by a single sigmoid output unit.
#[derive(Debug, Clone, PartialEq)]
pub struct FfnParams {
    pub layers: Vec<DenseLayer>,
}

impl FfnParams {
    pub fn zeros(layer_dims: &[(usize, usize)]) -> Self {
        FfnParams {
            layers: layer_dims
                .iter()
                .map(|&(i, o)| DenseLayer {
                    weight: Matrix::zeros(o, i),
                    bias: vec![0.0; o],
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub arch: Architecture,
    pub blstm1: BlstmParams,
    pub blstm2: BlstmParams,
    pub attn1: AttentionParams,
    pub attn2: AttentionParams,
    pub ffn: FfnParams,
}

impl ModelParams {
    pub fn zeros(arch: &Architecture) -> Self {
        let (d, h) = (arch.input_dim, arch.hidden_dim);
        ModelParams {
            arch: arch.clone(),
            blstm1: BlstmParams::zeros(d, h),
            blstm2: BlstmParams::zeros(d, h),
            attn1: AttentionParams::zeros(arch.state_dim()),
            attn2: AttentionParams::zeros(arch.state_dim()),
            ffn: FfnParams::zeros(&arch.ffn_layer_dims()),
        }
    }

    /// Every parameter drawn from U(-scale, scale).
    pub fn init_random(arch: &Architecture, scale: f64, rng: &mut Rng) -> Result<Self> {
        if !(scale > 0.0) {
            return Err(Error::argument(format!("init scale must be positive, got {scale}")));
        }
        let values = (0..arch.param_count())
            .map(|_| rng.uniform(-scale, scale))
            .collect::<Result<Vec<_>>>()?;
        ModelParams::unflatten(&ParamVector(values), arch)
    }

    /// Visits every parameter block in canonical order: blstm1 (forward then
    /// backward direction, each gate i, f, o, j as W row-major, U, b),
    /// blstm2, attn1 (w then b), attn2, then each dense layer (weight
    /// row-major, then bias).
    pub fn visit<'a>(&'a self, mut f: impl FnMut(&'a [f64])) {
        for blstm in [&self.blstm1, &self.blstm2] {
            blstm.forward.visit(&mut f);
            blstm.backward.visit(&mut f);
        }
        for attn in [&self.attn1, &self.attn2] {
            f(&attn.w);
            f(std::slice::from_ref(&attn.b));
        }
        for layer in &self.ffn.layers {
            f(layer.weight.as_slice());
            f(&layer.bias);
        }
    }

    pub fn visit_mut(&mut self, mut f: impl FnMut(&mut [f64])) {
        for blstm in [&mut self.blstm1, &mut self.blstm2] {
            blstm.forward.visit_mut(&mut f);
            blstm.backward.visit_mut(&mut f);
        }
        for attn in [&mut self.attn1, &mut self.attn2] {
            f(&mut attn.w);
            f(std::slice::from_mut(&mut attn.b));
        }
        for layer in &mut self.ffn.layers {
            f(layer.weight.as_mut_slice());
            f(&mut layer.bias);
        }
    }

    pub fn flatten(&self) -> ParamVector {
        let mut out = Vec::with_capacity(self.arch.param_count());
        self.visit(|s| out.extend_from_slice(s));
        ParamVector(out)
    }

    pub fn unflatten(vec: &[f64], arch: &Architecture) -> Result<Self> {
        let expected = arch.param_count();
        if vec.len() != expected {
            return Err(Error::dimension(format!(
                "parameter vector has length {}, architecture needs D = {expected}",
                vec.len()
            )));
        }
        let mut model = ModelParams::zeros(arch);
        model.assign(vec);
        Ok(model)
    }

    /// Overwrites every parameter from a flat vector of the right length.
    pub fn assign(&mut self, vec: &[f64]) {
        debug_assert_eq!(vec.len(), self.arch.param_count());
        let mut offset = 0;
        self.visit_mut(|s| {
            s.copy_from_slice(&vec[offset..offset + s.len()]);
            offset += s.len();
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use crate::numerics::Rng;

    #[test]
    fn parameter_count_closed_form() {
        // per direction 4·(1·2 + 1·1 + 1) = 16, per BLSTM 32, two BLSTMs 64,
        // attention (2 + 1)·2 = 6, dense 6 + 1 = 7
        let arch = Architecture::new(2, 1, vec![]).unwrap();
        assert_eq!(arch.lstm_direction_params(), 16);
        assert_eq!(arch.param_count(), 77);
        assert_eq!(ModelParams::zeros(&arch).flatten().len(), 77);
        let groups = arch.param_groups();
        assert_eq!(groups.last().unwrap().1.end, 77);
    }

    #[test]
    fn desk_and_full_counts_match_visitor() {
        for arch in [Architecture::desk(), Architecture::full()] {
            let mut n = 0;
            ModelParams::zeros(&arch).visit(|s| n += s.len());
            assert_eq!(n, arch.param_count());
        }
    }

    #[test]
    fn unflatten_rejects_wrong_length() {
        let arch = Architecture::new(2, 1, vec![]).unwrap();
        let err = ModelParams::unflatten(&[0.0; 76], &arch).unwrap_err();
        assert!(err.to_string().contains("77"), "{err}");
    }

    #[test]
    fn canonical_order_starts_with_input_gate() {
        let arch = Architecture::new(2, 1, vec![]).unwrap();
        let v: Vec<f64> = (0..77).map(|i| i as f64).collect();
        let m = ModelParams::unflatten(&v, &arch).unwrap();
        assert_eq!(m.blstm1.forward.input.w.as_slice(), &[0.0, 1.0]);
        assert_eq!(m.blstm1.forward.input.u.as_slice(), &[2.0]);
        assert_eq!(m.blstm1.forward.input.b, vec![3.0]);
        assert_eq!(m.blstm1.forward.forget.w.as_slice(), &[4.0, 5.0]);
        assert_eq!(m.blstm1.backward.input.w.get(0, 0), 16.0);
        assert_eq!(m.attn1.w, vec![64.0, 65.0]);
        assert_eq!(m.attn1.b, 66.0);
        assert_eq!(m.ffn.layers[0].bias, vec![76.0]);
    }

    #[test]
    fn init_random_range() {
        let arch = Architecture::new(3, 2, vec![4]).unwrap();
        let a = ModelParams::init_random(&arch, 0.3, &mut Rng::new(1)).unwrap().flatten();
        assert!(a.iter().all(|x| (-0.3..=0.3).contains(x)));
        let b = ModelParams::init_random(&arch, 0.3, &mut Rng::new(2)).unwrap().flatten();
        assert_ne!(a, b);
        assert!(ModelParams::init_random(&arch, 0.0, &mut Rng::new(1)).is_err());
    }

    proptest! {
        #[test]
        fn flatten_unflatten_bijection(
            d in 1usize..4, h in 1usize..4,
            hidden in prop::collection::vec(1usize..5, 0..3),
            seed in any::<u64>(),
        ) {
            let arch = Architecture::new(d, h, hidden).unwrap();
            let mut rng = Rng::new(seed);
            let v: Vec<f64> = (0..arch.param_count()).map(|_| rng.gaussian(0.0, 1.0).unwrap()).collect();
            let m = ModelParams::unflatten(&v, &arch).unwrap();
            prop_assert_eq!(&m.flatten()[..], v.as_slice());
            let again = ModelParams::unflatten(&m.flatten(), &arch).unwrap();
            prop_assert_eq!(again, m);
        }
    }
}
