//! Reference double-precision implementations of RMSNorm, SwiGLU and rotary
//! position embedding, with a self-test over their algebraic properties.
//!
//! Matrices are dense and row-major; inputs are row vectors, so `xW` maps a
//! `d_in` vector through a `d_in x d_out` matrix.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

pub const DEFAULT_ROPE_BASE: f64 = 10_000.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KernelError {
    #[error("vectors need at least one element")]
    Empty,
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("eps must be positive, got {0}")]
    InvalidEps(f64),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("rotary embedding needs an even dimension, got {0}")]
    OddDimension(usize),
    #[error("rotary base must exceed 1, got {0}")]
    InvalidBase(f64),
}

/// Finite, non-empty vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn new(v: Vec<f64>) -> Result<Self, KernelError> {
        if v.is_empty() {
            return Err(KernelError::Empty);
        }
        if let Some(i) = v.iter().position(|x| !x.is_finite()) {
            return Err(KernelError::NonFinite(i));
        }
        Ok(Vector(v))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, KernelError> {
        if data.len() != rows * cols {
            return Err(KernelError::Shape(format!("{rows}x{cols} needs {} values, got {}", rows * cols, data.len())));
        }
        if rows == 0 || cols == 0 {
            return Err(KernelError::Empty);
        }
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(KernelError::NonFinite(i));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    /// Row vector times matrix.
    pub fn left_mul(&self, x: &Vector) -> Result<Vec<f64>, KernelError> {
        if x.dim() != self.rows {
            return Err(KernelError::Shape(format!("vector of {} times {}x{} matrix", x.dim(), self.rows, self.cols)));
        }
        Ok((0..self.cols)
            .map(|c| x.0.iter().enumerate().map(|(r, xi)| xi * self.get(r, c)).sum())
            .collect())
    }
}

/// `x / sqrt(mean(x^2) + eps)`, with no re-centering.
pub fn rms_norm(x: &Vector, eps: f64) -> Result<Vector, KernelError> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(KernelError::InvalidEps(eps));
    }
    let ms = x.0.iter().map(|v| v * v).sum::<f64>() / x.dim() as f64;
    let scale = (ms + eps).sqrt();
    Ok(Vector(x.0.iter().map(|v| v / scale).collect()))
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `u * sigmoid(beta * u)`.
pub fn swish(u: f64, beta: f64) -> f64 {
    u * sigmoid(beta * u)
}

/// Derivative of [`swish`] with respect to `u`.
pub fn swish_derivative(u: f64, beta: f64) -> f64 {
    let s = sigmoid(beta * u);
    s + beta * u * s * (1.0 - s)
}

/// Weights of a SwiGLU layer: `Swish_beta(xW + b) * (xV + c)` elementwise.
#[derive(Debug, Clone, PartialEq)]
pub struct SwiGlu {
    pub w: Matrix,
    pub v: Matrix,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub beta: f64,
}

impl SwiGlu {
    pub fn new(w: Matrix, v: Matrix, b: Vec<f64>, c: Vec<f64>, beta: f64) -> Result<Self, KernelError> {
        if (w.rows, w.cols) != (v.rows, v.cols) {
            return Err(KernelError::Shape(format!(
                "W is {}x{} but V is {}x{}",
                w.rows, w.cols, v.rows, v.cols
            )));
        }
        if b.len() != w.cols || c.len() != w.cols {
            return Err(KernelError::Shape(format!(
                "biases of length {} and {} for output dimension {}",
                b.len(),
                c.len(),
                w.cols
            )));
        }
        if !beta.is_finite() {
            return Err(KernelError::NonFinite(0));
        }
        Ok(SwiGlu { w, v, b, c, beta })
    }

    fn pre_activations(&self, x: &Vector) -> Result<(Vec<f64>, Vec<f64>), KernelError> {
        let u: Vec<f64> = self.w.left_mul(x)?.iter().zip(&self.b).map(|(a, b)| a + b).collect();
        let g: Vec<f64> = self.v.left_mul(x)?.iter().zip(&self.c).map(|(a, c)| a + c).collect();
        Ok((u, g))
    }

    pub fn apply(&self, x: &Vector) -> Result<Vector, KernelError> {
        let (u, g) = self.pre_activations(x)?;
        Ok(Vector(u.iter().zip(&g).map(|(u, g)| swish(*u, self.beta) * g).collect()))
    }

    /// Analytic Jacobian `d y_j / d x_k`, returned as a `d_out x d_in` matrix.
    pub fn jacobian(&self, x: &Vector) -> Result<Matrix, KernelError> {
        let (u, g) = self.pre_activations(x)?;
        let (d_in, d_out) = (self.w.rows, self.w.cols);
        let mut data = Vec::with_capacity(d_in * d_out);
        for j in 0..d_out {
            let ds = swish_derivative(u[j], self.beta);
            let s = swish(u[j], self.beta);
            for k in 0..d_in {
                data.push(ds * self.w.get(k, j) * g[j] + s * self.v.get(k, j));
            }
        }
        Matrix::new(d_out, d_in, data)
    }
}

pub fn swiglu(x: &Vector, w: &Matrix, v: &Matrix, b: &[f64], c: &[f64], beta: f64) -> Result<Vector, KernelError> {
    SwiGlu::new(w.clone(), v.clone(), b.to_vec(), c.to_vec(), beta)?.apply(x)
}

/// Rotation angle of pair `i` at `position`: `position * base^(-2i/d)`.
pub fn rope_angle(position: u64, pair: usize, d: usize, base: f64) -> f64 {
    position as f64 * base.powf(-2.0 * pair as f64 / d as f64)
}

/// Rotates each pair `(x[2i], x[2i+1])` by [`rope_angle`].
pub fn rope(x: &Vector, position: u64, base: f64) -> Result<Vector, KernelError> {
    let d = x.dim();
    if !d.is_multiple_of(2) {
        return Err(KernelError::OddDimension(d));
    }
    if !(base > 1.0 && base.is_finite()) {
        return Err(KernelError::InvalidBase(base));
    }
    let mut out = Vec::with_capacity(d);
    for (i, pair) in x.0.chunks_exact(2).enumerate() {
        let (sin, cos) = rope_angle(position, i, d, base).sin_cos();
        out.push(pair[0] * cos - pair[1] * sin);
        out.push(pair[0] * sin + pair[1] * cos);
    }
    Ok(Vector(out))
}

/// Outcome of one self-test property.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelfTestCheck {
    pub name: &'static str,
    pub cases: usize,
    pub worst: f64,
    pub tolerance: f64,
    pub passed: bool,
}

fn random_vec(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> Vec<f64> {
    (0..d).map(|_| rng.random_range(-scale..scale)).collect()
}

fn random_swiglu(rng: &mut ChaCha8Rng, d_in: usize, d_out: usize) -> SwiGlu {
    let m = |rng: &mut ChaCha8Rng| Matrix::new(d_in, d_out, random_vec(rng, d_in * d_out, 1.0)).expect("shape");
    let w = m(rng);
    let v = m(rng);
    let b = random_vec(rng, d_out, 1.0);
    let c = random_vec(rng, d_out, 1.0);
    let beta = rng.random_range(0.1..3.0);
    SwiGlu::new(w, v, b, c, beta).expect("consistent shapes")
}

/// Central-difference Jacobian of `f` at `x` with step `h`.
pub fn numerical_jacobian(f: impl Fn(&Vector) -> Vector, x: &Vector, h: f64) -> Matrix {
    let d_in = x.dim();
    let d_out = f(x).dim();
    let mut data = vec![0.0; d_out * d_in];
    for k in 0..d_in {
        let mut plus = x.0.clone();
        let mut minus = x.0.clone();
        plus[k] += h;
        minus[k] -= h;
        let (fp, fm) = (f(&Vector(plus)), f(&Vector(minus)));
        for j in 0..d_out {
            data[j * d_in + k] = (fp.0[j] - fm.0[j]) / (2.0 * h);
        }
    }
    Matrix::new(d_out, d_in, data).expect("shape")
}

/// Runs the kernel properties on `cases` seeded random instances each.
pub fn selftest(seed: u64, cases: usize) -> Vec<SelfTestCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::new();
    let mut record = |name, cases, worst: f64, tolerance| {
        checks.push(SelfTestCheck {
            name,
            cases,
            worst,
            tolerance,
            passed: worst <= tolerance,
        })
    };

    let mut norm_err: f64 = 0.0;
    let mut add_err: f64 = 0.0;
    for _ in 0..cases {
        let d = 2 * rng.random_range(1..=16);
        let x = Vector(random_vec(&mut rng, d, 1.0));
        let p1 = rng.random_range(0..4096u64);
        let p2 = rng.random_range(0..4096u64);
        let r1 = rope(&x, p1, DEFAULT_ROPE_BASE).expect("even");
        for (a, b) in x.0.chunks_exact(2).zip(r1.0.chunks_exact(2)) {
            norm_err = norm_err.max((a[0].hypot(a[1]) - b[0].hypot(b[1])).abs());
        }
        norm_err = norm_err.max((x.norm() - r1.norm()).abs());
        let composed = rope(&r1, p2, DEFAULT_ROPE_BASE).expect("even");
        let direct = rope(&x, p1 + p2, DEFAULT_ROPE_BASE).expect("even");
        for (a, b) in composed.0.iter().zip(&direct.0) {
            add_err = add_err.max((a - b).abs());
        }
    }
    record("rope_norm_preservation", cases, norm_err, 1e-12);
    record("rope_angle_additivity", cases, add_err, 1e-9);

    let eps = 1e-9;
    let mut rms_err: f64 = 0.0;
    for _ in 0..cases {
        let d = rng.random_range(1..=32);
        let c = rng.random_range(0.01..100.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let y = rms_norm(&Vector(vec![c; d]), eps).expect("eps");
        for v in y.0 {
            rms_err = rms_err.max((v.abs() - 1.0).abs() / (eps / (c * c)).max(f64::EPSILON));
        }
    }
    // Deviation from 1 in units of eps / c^2; the exact deviation is at most half a unit.
    record("rms_norm_constant_vector", cases, rms_err, 1.0);

    let mut jac_err: f64 = 0.0;
    for _ in 0..cases {
        let d_in = rng.random_range(1..=4);
        let d_out = rng.random_range(1..=4);
        let layer = random_swiglu(&mut rng, d_in, d_out);
        let x = Vector(random_vec(&mut rng, d_in, 2.0));
        let analytic = layer.jacobian(&x).expect("shape");
        let numeric = numerical_jacobian(|v| layer.apply(v).expect("shape"), &x, 1e-5);
        for (a, n) in analytic.data.iter().zip(&numeric.data) {
            jac_err = jac_err.max((a - n).abs());
        }
    }
    record("swiglu_jacobian", cases, jac_err, 1e-5);
    checks
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> Vector {
        Vector::new(x.to_vec()).unwrap()
    }

    #[test]
    fn rms_norm_examples() {
        let y = rms_norm(&v(&[2.0, 2.0, 2.0]), 1e-12).unwrap();
        assert!(y.as_slice().iter().all(|x| (x - 1.0).abs() < 1e-12));
        assert_eq!(rms_norm(&v(&[0.0; 4]), 1e-6).unwrap().as_slice(), &[0.0; 4]);
        let y = rms_norm(&v(&[3.0, 4.0]), 1e-300).unwrap();
        let s = 12.5f64.sqrt();
        assert!((y.as_slice()[0] - 3.0 / s).abs() < 1e-15);
        assert!((y.as_slice()[1] - 4.0 / s).abs() < 1e-15);
        assert!(matches!(rms_norm(&v(&[1.0]), 0.0), Err(KernelError::InvalidEps(_))));
    }

    #[test]
    fn vectors_reject_empty_and_non_finite() {
        assert_eq!(Vector::new(vec![]), Err(KernelError::Empty));
        assert_eq!(Vector::new(vec![1.0, f64::NAN]), Err(KernelError::NonFinite(1)));
    }

    #[test]
    fn swiglu_zero_input_is_zero() {
        let w = Matrix::new(2, 3, vec![1.0; 6]).unwrap();
        let y = swiglu(&v(&[0.0, 0.0]), &w, &w, &[0.0; 3], &[0.0; 3], 1.0).unwrap();
        assert_eq!(y.as_slice(), &[0.0; 3]);
        assert!(matches!(
            swiglu(&v(&[0.0]), &w, &w, &[0.0; 3], &[0.0; 3], 1.0),
            Err(KernelError::Shape(_))
        ));
    }

    #[test]
    fn rope_examples() {
        let x = v(&[1.0, 0.0]);
        let y = rope(&x, 1, 10_000.0).unwrap();
        assert!((y.as_slice()[0] - 1f64.cos()).abs() < 1e-15);
        assert!((y.as_slice()[1] - 1f64.sin()).abs() < 1e-15);
        let z = v(&[0.3, -1.2, 2.0, 0.5]);
        assert_eq!(rope(&z, 0, 10_000.0).unwrap(), z);
        assert!(matches!(rope(&v(&[1.0, 2.0, 3.0]), 1, 10_000.0), Err(KernelError::OddDimension(3))));
        assert!(matches!(rope(&x, 1, 1.0), Err(KernelError::InvalidBase(_))));
    }

    #[test]
    fn selftest_passes() {
        for c in selftest(7, 200) {
            assert!(c.passed, "{c:?}");
        }
    }
}
