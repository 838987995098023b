//! Dense row-major `f64` arrays and the handful of kernels the model needs.
//!
//! Every differentiable op has a matching closed-form `*_backward` function.
//! Reductions always run left to right over the reduced index, so identical
//! inputs produce identical bytes.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Result, SceError};

/// Dense tensor of rank 1 to 3.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.len() > 3 || shape.contains(&0) {
            return Err(SceError::dim(
                "Tensor::new",
                format!("shape {shape:?} must have 1..=3 positive dims"),
            ));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(SceError::dim(
                "Tensor::new",
                format!("shape {shape:?} holds {n} values, got {}", data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.as_ref().len() != cols {
                return Err(SceError::dim(
                    "Tensor::from_rows",
                    format!("row {i} has {} values, expected {cols}", r.as_ref().len()),
                ));
            }
            data.extend_from_slice(r.as_ref());
        }
        Self::matrix(rows.len(), cols, data)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Entries drawn i.i.d. from `N(0, std²)`.
    pub fn random_normal<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        let dist = Normal::new(0.0, std).expect("std must be finite and non-negative");
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(|_| dist.sample(rng)).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Rows of a matrix; a vector counts as one row.
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            1 => 1,
            _ => self.shape[..self.shape.len() - 1].iter().product(),
        }
    }

    pub fn cols(&self) -> usize {
        *self.shape.last().expect("shape is never empty")
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn transpose(&self) -> Tensor {
        let (r, c) = (self.rows(), self.cols());
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor {
            shape: vec![c, r],
            data: out,
        }
    }

    /// Copies columns `start..start + width` of a matrix.
    pub fn column_block(&self, start: usize, width: usize) -> Tensor {
        let r = self.rows();
        let mut data = Vec::with_capacity(r * width);
        for i in 0..r {
            data.extend_from_slice(&self.row(i)[start..start + width]);
        }
        Tensor {
            shape: vec![r, width],
            data,
        }
    }

    /// Writes `block` into columns `start..start + block.cols()`.
    pub fn set_column_block(&mut self, start: usize, block: &Tensor) {
        let w = block.cols();
        for i in 0..self.rows() {
            self.row_mut(i)[start..start + w].copy_from_slice(block.row(i));
        }
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(SceError::dim(
                "add",
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        let mut out = self.clone();
        out.add_assign(other);
        Ok(out)
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|x| *x *= factor);
    }

    /// Adds `bias` to every row.
    pub fn add_row_bias(&mut self, bias: &Tensor) {
        let c = self.cols();
        debug_assert_eq!(bias.len(), c);
        for row in self.data.chunks_mut(c) {
            for (x, b) in row.iter_mut().zip(&bias.data) {
                *x += b;
            }
        }
    }

    /// Column sums, i.e. the gradient of a broadcast row bias.
    pub fn sum_rows(&self) -> Tensor {
        let c = self.cols();
        let mut out = vec![0.0; c];
        for row in self.data.chunks(c) {
            for (o, x) in out.iter_mut().zip(row) {
                *o += x;
            }
        }
        Tensor {
            shape: vec![c],
            data: out,
        }
    }
}

fn as_matrix_dims(t: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    match t.shape.len() {
        2 => Ok((t.shape[0], t.shape[1])),
        _ => Err(SceError::dim(op, format!("expected a matrix, got {:?}", t.shape))),
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// `a · b` for `a: r×k`, `b: k×c`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (r, k) = as_matrix_dims(a, "matmul")?;
    let (k2, c) = as_matrix_dims(b, "matmul")?;
    if k != k2 {
        return Err(SceError::dim(
            "matmul",
            format!("inner dimensions {k} and {k2} differ"),
        ));
    }
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        let arow = &a.data[i * k..(i + 1) * k];
        let orow = &mut out[i * c..(i + 1) * c];
        for j in 0..c {
            let mut acc = 0.0;
            for (p, &x) in arow.iter().enumerate() {
                acc += x * b.data[p * c + j];
            }
            orow[j] = acc;
        }
    }
    Tensor::matrix(r, c, out)
}

/// Gradients of `matmul(a, b)` given the upstream gradient `grad`.
pub fn matmul_backward(a: &Tensor, b: &Tensor, grad: &Tensor) -> Result<(Tensor, Tensor)> {
    let ga = matmul(grad, &b.transpose())?;
    let gb = matmul(&a.transpose(), grad)?;
    Ok((ga, gb))
}

fn softmax_slice(v: &[f64], out: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &x) in out.iter_mut().zip(v) {
        *o = (x - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Max-shifted softmax of a vector.
pub fn softmax(v: &Tensor) -> Result<Tensor> {
    if v.shape.len() != 1 {
        return Err(SceError::dim("softmax", format!("expected a vector, got {:?}", v.shape)));
    }
    if !v.is_finite() {
        return Err(SceError::Domain("softmax input is not finite".into()));
    }
    let mut out = vec![0.0; v.len()];
    softmax_slice(&v.data, &mut out);
    Tensor::vector(out)
}

/// Softmax over a plain slice; the empty slice is a domain error.
pub fn softmax_values(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(SceError::Domain("softmax over an empty vector".into()));
    }
    Ok(softmax(&Tensor::vector(v.to_vec())?)?.data)
}

/// Row-wise softmax of a matrix.
pub fn softmax_rows(x: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(&x.shape);
    let c = x.cols();
    for (src, dst) in x.data.chunks(c).zip(out.data.chunks_mut(c)) {
        softmax_slice(src, dst);
    }
    out
}

/// Backward of a (row-wise) softmax from its output `y`.
pub fn softmax_backward(y: &Tensor, grad: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(&y.shape);
    let c = y.cols();
    for ((yr, gr), or) in y
        .data
        .chunks(c)
        .zip(grad.data.chunks(c))
        .zip(out.data.chunks_mut(c))
    {
        let inner = dot(yr, gr);
        for ((o, &yi), &gi) in or.iter_mut().zip(yr).zip(gr) {
            *o = yi * (gi - inner);
        }
    }
    out
}

/// Per-row statistics kept for the layer-norm backward pass.
#[derive(Debug, Clone)]
pub struct LayerNormCache {
    normalized: Tensor,
    inv_std: Vec<f64>,
}

/// Layer normalisation over the last axis with population variance.
pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
    Ok(layer_norm_forward(x, gain, bias, eps)?.0)
}

pub fn layer_norm_forward(
    x: &Tensor,
    gain: &Tensor,
    bias: &Tensor,
    eps: f64,
) -> Result<(Tensor, LayerNormCache)> {
    let d = x.cols();
    if gain.len() != d || bias.len() != d {
        return Err(SceError::dim(
            "layer_norm",
            format!("width {d}, gain {}, bias {}", gain.len(), bias.len()),
        ));
    }
    if !(eps > 0.0) {
        return Err(SceError::Domain(format!("layer_norm eps must be positive, got {eps}")));
    }
    let mut normalized = Tensor::zeros(&x.shape);
    let mut out = Tensor::zeros(&x.shape);
    let mut inv_std = Vec::with_capacity(x.rows());
    for i in 0..x.rows() {
        let row = x.row(i);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let istd = 1.0 / (var + eps).sqrt();
        inv_std.push(istd);
        let nrow = normalized.row_mut(i);
        for (n, v) in nrow.iter_mut().zip(row) {
            *n = (v - mean) * istd;
        }
        let nrow = normalized.row(i).to_vec();
        let orow = out.row_mut(i);
        for j in 0..d {
            orow[j] = gain.data[j] * nrow[j] + bias.data[j];
        }
    }
    Ok((out, LayerNormCache { normalized, inv_std }))
}

/// Returns `(grad_x, grad_gain, grad_bias)`.
pub fn layer_norm_backward(
    cache: &LayerNormCache,
    gain: &Tensor,
    grad: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let d = grad.cols();
    let mut gx = Tensor::zeros(&grad.shape);
    let mut ggain = vec![0.0; d];
    let mut gbias = vec![0.0; d];
    for i in 0..grad.rows() {
        let g = grad.row(i);
        let xhat = cache.normalized.row(i);
        let mut dxhat = vec![0.0; d];
        for j in 0..d {
            ggain[j] += g[j] * xhat[j];
            gbias[j] += g[j];
            dxhat[j] = g[j] * gain.data[j];
        }
        let mean_dxhat = dxhat.iter().sum::<f64>() / d as f64;
        let mean_dxhat_xhat = dot(&dxhat, xhat) / d as f64;
        let istd = cache.inv_std[i];
        for (j, o) in gx.row_mut(i).iter_mut().enumerate() {
            *o = istd * (dxhat[j] - mean_dxhat - xhat[j] * mean_dxhat_xhat);
        }
    }
    (
        gx,
        Tensor { shape: vec![d], data: ggain },
        Tensor { shape: vec![d], data: gbias },
    )
}

const INV_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * INV_SQRT_2))
}

fn gelu_grad_scalar(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * INV_SQRT_2)) + x * INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Exact GELU, `x·Φ(x)`.
pub fn gelu(x: &Tensor) -> Tensor {
    Tensor {
        shape: x.shape.clone(),
        data: x.data.iter().map(|&v| gelu_scalar(v)).collect(),
    }
}

/// Backward of [`gelu`] evaluated at the pre-activation `x`.
pub fn gelu_backward(x: &Tensor, grad: &Tensor) -> Tensor {
    Tensor {
        shape: x.shape.clone(),
        data: x
            .data
            .iter()
            .zip(&grad.data)
            .map(|(&v, &g)| g * gelu_grad_scalar(v))
            .collect(),
    }
}

/// Smallest probability fed to `ln` by [`cross_entropy`].
pub const PROB_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossEntropy {
    pub loss: f64,
    /// Set when some `p̂ₖ` had to be clamped to [`PROB_FLOOR`].
    pub floored: bool,
}

/// `−Σ pₖ ln p̂ₖ`.
pub fn cross_entropy(p_hat: &[f64], p: &[f64]) -> Result<CrossEntropy> {
    if p_hat.len() != p.len() {
        return Err(SceError::dim(
            "cross_entropy",
            format!("{} predictions vs {} targets", p_hat.len(), p.len()),
        ));
    }
    let mut loss = 0.0;
    let mut floored = false;
    for (&q, &t) in p_hat.iter().zip(p) {
        if t == 0.0 {
            continue;
        }
        let q = if q < PROB_FLOOR {
            floored = true;
            PROB_FLOOR
        } else {
            q
        };
        loss -= t * q.ln();
    }
    Ok(CrossEntropy { loss, floored })
}

/// Gradient of `cross_entropy(softmax(s), p)` with respect to the scores `s`.
pub fn softmax_cross_entropy_backward(p_hat: &[f64], p: &[f64]) -> Vec<f64> {
    let mass: f64 = p.iter().sum();
    p_hat.iter().zip(p).map(|(q, t)| q * mass - t).collect()
}

/// Central finite-difference gradient of a scalar function.
pub fn finite_diff_grad<F>(f: F, x: &Tensor, h: f64) -> Result<Tensor>
where
    F: Fn(&Tensor) -> f64,
{
    if !(h > 0.0) {
        return Err(SceError::Domain(format!("step h must be positive, got {h}")));
    }
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(&x.shape);
    for i in 0..x.len() {
        let orig = probe.data[i];
        probe.data[i] = orig + h;
        let up = f(&probe);
        probe.data[i] = orig - h;
        let down = f(&probe);
        probe.data[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(SceError::NonFinite(format!(
                "function value at coordinate {i} is not finite"
            )));
        }
        grad.data[i] = (up - down) / (2.0 * h);
    }
    Ok(grad)
}

/// Fourth-order central differences,
/// `(-f(x+2h) + 8f(x+h) - 8f(x-h) + f(x-2h)) / 12h`.
///
/// Exact for polynomials up to degree four, so it tolerates a larger `h`
/// (and hence less rounding noise) than [`finite_diff_grad`].
pub fn finite_diff_grad_fourth_order<F>(f: F, x: &Tensor, h: f64) -> Result<Tensor>
where
    F: Fn(&Tensor) -> f64,
{
    if !(h > 0.0) {
        return Err(SceError::Domain(format!("step h must be positive, got {h}")));
    }
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(&x.shape);
    for i in 0..x.len() {
        let orig = probe.data[i];
        let mut at = |dx: f64| {
            probe.data[i] = orig + dx;
            f(&probe)
        };
        let vals = [at(2.0 * h), at(h), at(-h), at(-2.0 * h)];
        probe.data[i] = orig;
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(SceError::NonFinite(format!(
                "function value at coordinate {i} is not finite"
            )));
        }
        grad.data[i] = (-vals[0] + 8.0 * vals[1] - 8.0 * vals[2] + vals[3]) / (12.0 * h);
    }
    Ok(grad)
}
