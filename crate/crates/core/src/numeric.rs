//! Dense f64 vectors/matrices, the handful of primitives the model is built
//! from, and a finite-difference gradient checker.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericError {
    #[error("shape mismatch: {op} expected {expected}, got {got}")]
    Shape {
        op: &'static str,
        expected: String,
        got: String,
    },
    #[error("index {index} out of range for length {len}")]
    Index { index: usize, len: usize },
    #[error("loss function is not deterministic: {first} vs {second}")]
    NonDeterministic { first: f64, second: f64 },
}

/// Dense column vector of f64.
#[derive(Debug, Clone, PartialEq)]
pub struct Vector {
    data: Vec<f64>,
}

impl Vector {
    pub fn new(data: Vec<f64>) -> Self {
        assert!(!data.is_empty(), "Vector must be non-empty");
        Vector { data }
    }

    pub fn zeros(len: usize) -> Self {
        Vector::new(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.data.iter()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl std::ops::Index<usize> for Vector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.data[i]
    }
}

impl std::ops::IndexMut<usize> for Vector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.data[i]
    }
}

/// Dense row-major matrix of f64.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "rows*cols must equal data length");
        Matrix { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
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

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    /// Row `r` as a slice.
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Matrix-vector product A·x.
pub fn matmul(a: &Matrix, x: &Vector) -> Result<Vector, NumericError> {
    if a.cols != x.len() {
        return Err(NumericError::Shape {
            op: "matmul",
            expected: format!("{}x{} · {}", a.rows, a.cols, a.cols),
            got: format!("{}x{} · {}", a.rows, a.cols, x.len()),
        });
    }
    let mut out = vec![0.0; a.rows];
    for (r, o) in out.iter_mut().enumerate() {
        let row = a.row(r);
        let mut acc = 0.0;
        for (w, v) in row.iter().zip(x.iter()) {
            acc += w * v;
        }
        *o = acc;
    }
    Ok(Vector::new(out))
}

/// A^T·x without materializing the transpose.
pub fn matmul_transpose(a: &Matrix, x: &Vector) -> Result<Vector, NumericError> {
    if a.rows != x.len() {
        return Err(NumericError::Shape {
            op: "matmul_transpose",
            expected: format!("({}x{})^T · {}", a.rows, a.cols, a.rows),
            got: format!("({}x{})^T · {}", a.rows, a.cols, x.len()),
        });
    }
    let mut out = vec![0.0; a.cols];
    for r in 0..a.rows {
        let xr = x[r];
        for (c, w) in a.row(r).iter().enumerate() {
            out[c] += w * xr;
        }
    }
    Ok(Vector::new(out))
}

/// Rank-1 update A += x·yᵀ, used by the gradient accumulators.
pub fn outer_add(a: &mut Matrix, x: &Vector, y: &Vector) {
    assert_eq!(a.rows, x.len());
    assert_eq!(a.cols, y.len());
    for r in 0..a.rows {
        let xr = x[r];
        let row = a.row_mut(r);
        for (c, w) in row.iter_mut().enumerate() {
            *w += xr * y[c];
        }
    }
}

/// Softmax with max-subtraction. Output is positive and sums to 1.
pub fn softmax(z: &Vector) -> Vector {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    Vector::new(out)
}

/// Probability floor applied before logs so a zero probability cannot
/// produce -Inf.
pub const PROB_FLOOR: f64 = 1e-12;

/// Per-term negative log-likelihood: −ln p[target].
pub fn neg_log_likelihood(p: &Vector, target: usize) -> Result<f64, NumericError> {
    if target >= p.len() {
        return Err(NumericError::Index {
            index: target,
            len: p.len(),
        });
    }
    Ok(-(p[target].max(PROB_FLOOR)).ln())
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn sigmoid_vec(x: &Vector) -> Vector {
    Vector::new(x.iter().map(|&v| sigmoid(v)).collect())
}

pub fn tanh_vec(x: &Vector) -> Vector {
    Vector::new(x.iter().map(|v| v.tanh()).collect())
}

/// Elementwise product.
pub fn hadamard(a: &Vector, b: &Vector) -> Result<Vector, NumericError> {
    if a.len() != b.len() {
        return Err(NumericError::Shape {
            op: "hadamard",
            expected: format!("{}", a.len()),
            got: format!("{}", b.len()),
        });
    }
    Ok(Vector::new(
        a.iter().zip(b.iter()).map(|(x, y)| x * y).collect(),
    ))
}

pub fn add(a: &Vector, b: &Vector) -> Result<Vector, NumericError> {
    if a.len() != b.len() {
        return Err(NumericError::Shape {
            op: "add",
            expected: format!("{}", a.len()),
            got: format!("{}", b.len()),
        });
    }
    Ok(Vector::new(
        a.iter().zip(b.iter()).map(|(x, y)| x + y).collect(),
    ))
}

/// Anything whose trainable scalars can be visited as named flat blocks.
/// The gradient checker perturbs parameters through this interface.
pub trait ParamBlocks {
    fn block_names(&self) -> Vec<String>;
    fn block(&self, name: &str) -> &[f64];
    fn block_mut(&mut self, name: &str) -> &mut [f64];
}

/// Outcome of a finite-difference gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// (block name, max relative error within the block)
    pub per_block: Vec<(String, f64)>,
    pub max_relative_error: f64,
    pub pass: bool,
    pub epsilon: f64,
    pub tolerance: f64,
}

/// Central-difference check of analytic gradients against
/// (L(θ+ε) − L(θ−ε)) / 2ε for every scalar parameter.
///
/// `analytic` must have the same block layout as `params`. Relative error is
/// |a−n| / max(|a|, |n|, 1e-8).
pub fn finite_difference_check<P, L>(
    loss_fn: L,
    params: &P,
    analytic: &P,
    epsilon: f64,
    tolerance: f64,
) -> Result<GradCheckReport, NumericError>
where
    P: ParamBlocks + Clone,
    L: Fn(&P) -> f64,
{
    assert!(epsilon > 0.0, "epsilon must be positive");
    let l0 = loss_fn(params);
    let l1 = loss_fn(params);
    if l0 != l1 {
        return Err(NumericError::NonDeterministic {
            first: l0,
            second: l1,
        });
    }

    let mut work = params.clone();
    let mut per_block = Vec::new();
    let mut max_err = 0.0f64;
    for name in params.block_names() {
        let len = params.block(&name).len();
        let mut block_err = 0.0f64;
        for i in 0..len {
            let orig = work.block(&name)[i];
            work.block_mut(&name)[i] = orig + epsilon;
            let lp = loss_fn(&work);
            work.block_mut(&name)[i] = orig - epsilon;
            let lm = loss_fn(&work);
            work.block_mut(&name)[i] = orig;
            let numeric = (lp - lm) / (2.0 * epsilon);
            let a = analytic.block(&name)[i];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            block_err = block_err.max(err);
        }
        max_err = max_err.max(block_err);
        per_block.push((name, block_err));
    }

    Ok(GradCheckReport {
        per_block,
        max_relative_error: max_err,
        pass: max_err < tolerance,
        epsilon,
        tolerance,
    })
}
