//! Elementary math kernels and the seeded random source used by every other
//! module.
//!
//! Randomness comes from ChaCha8 (`rand_chacha`), a counter-based stream
//! cipher generator whose output is specified independently of platform and
//! word size. Normal draws use the Marsaglia polar transform of two uniform
//! draws; the second value of each accepted pair is kept for the next call.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub type Vector = Vec<f64>;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn tanh_act(x: f64) -> f64 {
    x.tanh()
}

/// Numerically stable softmax (the maximum is subtracted before exponentiating).
pub fn softmax(v: &[f64]) -> Vector {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vector = v.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for x in &mut out {
        *x /= sum;
    }
    out
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dimension(format!(
                "{rows}x{cols} matrix needs {} elements, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `out += self * x`
    #[inline]
    pub fn mul_vec_acc(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (o, row) in out.iter_mut().zip(self.data.chunks_exact(self.cols)) {
            *o += dot(row, x);
        }
    }

    /// `out += selfᵀ * v`
    #[inline]
    pub fn tr_mul_vec_acc(&self, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for (&vi, row) in v.iter().zip(self.data.chunks_exact(self.cols)) {
            if vi != 0.0 {
                axpy(vi, row, out);
            }
        }
    }

    /// `self += a ⊗ b`
    #[inline]
    pub fn add_outer(&mut self, a: &[f64], b: &[f64]) {
        debug_assert_eq!(a.len(), self.rows);
        debug_assert_eq!(b.len(), self.cols);
        for (&ai, row) in a.iter().zip(self.data.chunks_exact_mut(self.cols)) {
            if ai != 0.0 {
                axpy(ai, b, row);
            }
        }
    }
}

/// SplitMix64 finalizer, used to derive independent child seeds.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seeded, single-owner random source.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
    spare_normal: Option<f64>,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
            spare_normal: None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Child generator for a named sub-stream; independent of how many draws
    /// the parent has made.
    pub fn derive(&self, stream: u64) -> Rng {
        Rng::new(mix_seed(self.seed, stream))
    }

    /// U[0, 1)
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> Result<f64> {
        if !(lo <= hi) {
            return Err(Error::argument(format!("uniform bounds lo={lo} > hi={hi}")));
        }
        if lo == hi {
            return Ok(lo);
        }
        let v = lo + self.next_f64() * (hi - lo);
        // rounding can land exactly on hi
        Ok(if v >= hi { lo } else { v })
    }

    /// Uniform index in `0..n`. Panics if `n == 0`.
    #[inline]
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        loop {
            let u = 2.0 * self.next_f64() - 1.0;
            let v = 2.0 * self.next_f64() - 1.0;
            let s = u * u + v * v;
            if s > 0.0 && s < 1.0 {
                let factor = (-2.0 * s.ln() / s).sqrt();
                self.spare_normal = Some(v * factor);
                return u * factor;
            }
        }
    }

    pub fn gaussian(&mut self, mean: f64, stddev: f64) -> Result<f64> {
        if !(stddev >= 0.0) {
            return Err(Error::argument(format!("negative standard deviation {stddev}")));
        }
        if stddev == 0.0 {
            return Ok(mean);
        }
        Ok(mean + stddev * self.standard_normal())
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use crate::numerics::Rng;

    #[test]
    fn sigmoid_cases() {
        assert_eq!(sigmoid(0.0), 0.5);
        let s = sigmoid(50.0);
        assert!(s > 1.0 - 1e-9 && s <= 1.0);
        assert!((sigmoid(1.7) + sigmoid(-1.7) - 1.0).abs() < 1e-12);
        assert!(sigmoid(-800.0).is_finite());
    }

    #[test]
    fn tanh_cases() {
        assert_eq!(tanh_act(0.0), 0.0);
        assert!((tanh_act(-0.3) + tanh_act(0.3)).abs() < 1e-12);
        let t = tanh_act(20.0);
        assert!(t > 1.0 - 1e-8 && t <= 1.0);
    }

    #[test]
    fn softmax_cases() {
        assert_eq!(softmax(&[0.0, 0.0]), vec![0.5, 0.5]);
        for c in [-3.0, 0.0, 7.5] {
            for p in softmax(&[c, c, c]) {
                assert!((p - 1.0 / 3.0).abs() < 1e-15);
            }
        }
        assert_eq!(softmax(&[1000.0, 1000.0]), vec![0.5, 0.5]);
    }

    #[test]
    fn gaussian_degenerate_and_errors() {
        let mut rng = Rng::new(11);
        assert_eq!(rng.gaussian(3.0, 0.0).unwrap(), 3.0);
        assert!(matches!(rng.gaussian(0.0, -1.0), Err(Error::Argument(_))));
    }

    #[test]
    fn gaussian_moments() {
        let mut rng = Rng::new(2024);
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|_| rng.gaussian(0.0, 1.0).unwrap()).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() <= 0.02, "mean {mean}");
        assert!((0.97..=1.03).contains(&var), "variance {var}");
    }

    #[test]
    fn uniform_contract() {
        let mut rng = Rng::new(5);
        assert_eq!(rng.uniform(2.0, 2.0).unwrap(), 2.0);
        assert!(matches!(rng.uniform(1.0, 0.0), Err(Error::Argument(_))));
        for _ in 0..10_000 {
            let v = rng.uniform(-1.0, 1.0).unwrap();
            assert!((-1.0..1.0).contains(&v));
        }
        let n = 100_000;
        let mean = (0..n).map(|_| rng.uniform(0.0, 1.0).unwrap()).sum::<f64>() / n as f64;
        assert!((0.497..=0.503).contains(&mean), "mean {mean}");
    }

    #[test]
    fn seeds_reproduce_and_differ() {
        let a: Vec<f64> = {
            let mut r = Rng::new(99);
            (0..100).map(|_| r.next_f64()).collect()
        };
        let b: Vec<f64> = {
            let mut r = Rng::new(99);
            (0..100).map(|_| r.next_f64()).collect()
        };
        let c: Vec<f64> = {
            let mut r = Rng::new(100);
            (0..100).map(|_| r.next_f64()).collect()
        };
        assert_eq!(
            a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
        assert!(a.iter().zip(&c).any(|(x, y)| x != y));
    }

    #[test]
    fn matrix_products() {
        let m = Matrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let mut out = vec![0.0; 2];
        m.mul_vec_acc(&[1.0, 0.0, -1.0], &mut out);
        assert_eq!(out, vec![-2.0, -2.0]);
        let mut back = vec![0.0; 3];
        m.tr_mul_vec_acc(&[1.0, 1.0], &mut back);
        assert_eq!(back, vec![5.0, 7.0, 9.0]);
        assert!(Matrix::from_vec(2, 2, vec![0.0; 3]).is_err());
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one_and_is_equivariant(
            v in prop::collection::vec(-50.0f64..50.0, 1..12),
            rot in 0usize..12,
        ) {
            let p = softmax(&v);
            let sum: f64 = p.iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-12);
            prop_assert!(p.iter().all(|&x| x > 0.0));
            let k = rot % v.len();
            let mut rotated = v.clone();
            rotated.rotate_left(k);
            let mut expected = p.clone();
            expected.rotate_left(k);
            for (a, b) in softmax(&rotated).iter().zip(&expected) {
                prop_assert!((a - b).abs() <= 1e-12 * b.max(1e-300).max(1.0));
            }
        }

        #[test]
        fn activations_stay_inside_open_ranges(x in -30.0f64..30.0) {
            let s = sigmoid(x);
            prop_assert!(s > 0.0 && s < 1.0);
            let t = tanh_act(x / 2.0);
            prop_assert!(t > -1.0 && t < 1.0);
        }
    }
}
