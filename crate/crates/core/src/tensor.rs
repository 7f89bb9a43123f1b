//! Dense row-major `f32` arrays and the numeric kernels shared by the
//! autodiff graph and the plain inference path.
//!
//! Storage is 32-bit; every reduction (dot products, means, variances,
//! softmax normalizers) accumulates in 64-bit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major tensor of 32-bit floats.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Dimension(format!(
                "shape {shape:?} needs {expected} elements, buffer has {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], value: f32) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    /// A 1-D tensor.
    pub fn vector(data: Vec<f32>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    /// A 2-D tensor from nested rows. Panics on ragged input.
    pub fn from_rows(rows: &[Vec<f32>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        Self {
            shape: vec![rows.len(), cols],
            data: rows.iter().flatten().copied().collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Rows and columns of a 2-D tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            other => Err(Error::Dimension(format!("expected 2-D tensor, got {other:?}"))),
        }
    }

    /// Size of the trailing dimension (1 for scalars).
    pub fn last_dim(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn row(&self, i: usize) -> &[f32] {
        let c = self.last_dim();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        let c = self.last_dim();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::Dimension(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    /// Scalar value of a single-element tensor.
    pub fn item(&self) -> Result<f32> {
        if self.data.len() == 1 {
            Ok(self.data[0])
        } else {
            Err(Error::Usage(format!("item() on tensor of shape {:?}", self.shape)))
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn ensure_finite(&self, op: &'static str) -> Result<()> {
        if self.all_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(op))
        }
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    /// Largest absolute element-wise difference.
    pub fn max_abs_diff(&self, other: &Tensor) -> f32 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }
}

/// Plain matrix product with optional transposition of either operand.
///
/// `a` is `[r×k]` (or `[k×r]` when `trans_a`), `b` is `[k×c]` (or `[c×k]`
/// when `trans_b`).
pub fn matmul_raw(
    a: &[f32],
    (a_rows, a_cols): (usize, usize),
    trans_a: bool,
    b: &[f32],
    (b_rows, b_cols): (usize, usize),
    trans_b: bool,
) -> Result<(Vec<f32>, usize, usize)> {
    let (r, k) = if trans_a { (a_cols, a_rows) } else { (a_rows, a_cols) };
    let (kb, c) = if trans_b { (b_cols, b_rows) } else { (b_rows, b_cols) };
    if k != kb {
        return Err(Error::Dimension(format!(
            "matmul inner dimensions disagree: [{r}x{k}] x [{kb}x{c}]"
        )));
    }
    let mut out = vec![0.0f32; r * c];
    // Row-major storage: element (i, j) sits at i*cols + j.
    let (rsa, csa) = if trans_a { (1, a_cols as isize) } else { (a_cols as isize, 1) };
    let (rsb, csb) = if trans_b { (1, b_cols as isize) } else { (b_cols as isize, 1) };
    if r > 0 && c > 0 && k > 0 {
        // SAFETY: strides and extents describe the input slices, whose
        // lengths were checked by the callers' shapes.
        assert!(a.len() >= a_rows * a_cols && b.len() >= b_rows * b_cols);
        unsafe {
            matrixmultiply::sgemm(
                r,
                k,
                c,
                1.0,
                a.as_ptr(),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                0.0,
                out.as_mut_ptr(),
                c as isize,
                1,
            );
        }
    }
    Ok((out, r, c))
}

/// `[r×k] · [k×c]` for 2-D tensors.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (data, r, c) = matmul_raw(a.data(), a.dims2()?, false, b.data(), b.dims2()?, false)?;
    Tensor::new(vec![r, c], data)
}

/// `[r×k] · [k×c]` accumulated in `f64` and rounded once. Products of two
/// `f32` values are exact in `f64`, so reordering the inner dimension
/// (relabeling MLP units) changes the result only when a sum lands within
/// an `f64` rounding error of an `f32` rounding boundary.
pub fn matmul_wide(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (r, k) = a.dims2()?;
    let (kb, c) = b.dims2()?;
    if k != kb {
        return Err(Error::Dimension(format!(
            "matmul inner dimensions disagree: [{r}x{k}] x [{kb}x{c}]"
        )));
    }
    let wa: Vec<f64> = a.data.iter().map(|&v| f64::from(v)).collect();
    let wb: Vec<f64> = b.data.iter().map(|&v| f64::from(v)).collect();
    let mut out = vec![0.0f64; r * c];
    if r > 0 && c > 0 && k > 0 {
        // SAFETY: row-major extents match the vectors built above.
        unsafe {
            matrixmultiply::dgemm(
                r,
                k,
                c,
                1.0,
                wa.as_ptr(),
                k as isize,
                1,
                wb.as_ptr(),
                c as isize,
                1,
                0.0,
                out.as_mut_ptr(),
                c as isize,
                1,
            );
        }
    }
    Tensor::new(vec![r, c], out.into_iter().map(|v| v as f32).collect())
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Per-row normalization statistics kept for the backward pass.
#[derive(Clone, Debug)]
pub struct RowStats {
    pub mean: Vec<f64>,
    pub rstd: Vec<f64>,
}

/// Normalizes each row of `x` to zero mean and unit variance, then applies
/// `gain` and `bias`. Returns the output and the per-row statistics.
pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor) -> Result<(Tensor, RowStats)> {
    let c = x.last_dim();
    if c == 0 || x.shape().is_empty() {
        return Err(Error::Dimension("layer_norm over zero-length rows".into()));
    }
    if gain.len() != c || bias.len() != c {
        return Err(Error::Dimension(format!(
            "layer_norm gain/bias length {}/{} vs row length {c}",
            gain.len(),
            bias.len()
        )));
    }
    let rows = x.len() / c;
    let mut out = Tensor::zeros(x.shape());
    let mut stats = RowStats {
        mean: Vec::with_capacity(rows),
        rstd: Vec::with_capacity(rows),
    };
    for i in 0..rows {
        let row = x.row(i);
        let mean = row.iter().map(|&v| f64::from(v)).sum::<f64>() / c as f64;
        let var = row
            .iter()
            .map(|&v| {
                let d = f64::from(v) - mean;
                d * d
            })
            .sum::<f64>()
            / c as f64;
        let rstd = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        let o = out.row_mut(i);
        for j in 0..c {
            let xhat = (f64::from(row[j]) - mean) * rstd;
            o[j] = (xhat * f64::from(gain.data[j]) + f64::from(bias.data[j])) as f32;
        }
        stats.mean.push(mean);
        stats.rstd.push(rstd);
    }
    Ok((out, stats))
}

/// Element-wise nonlinearity applied between the key and value projections.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActivationKind {
    Relu,
    Gelu,
    /// SiLU; used as the gate of the three-matrix MLP.
    #[serde(alias = "silu-gated")]
    Silu,
}

impl std::str::FromStr for ActivationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Ok(Self::Relu),
            "gelu" => Ok(Self::Gelu),
            "silu" | "silu-gated" | "swiglu" => Ok(Self::Silu),
            other => Err(Error::Config(format!("unknown activation kind {other:?}"))),
        }
    }
}

/// Error function, rational approximation with absolute error below 1.5e-7.
fn erf(x: f64) -> f64 {
    let t = 1.0 / (1.0 + 0.327_591_1 * x.abs());
    let poly = t * (0.254_829_592 + t * (-0.284_496_736 + t * (1.421_413_741 + t * (-1.453_152_027 + t * 1.061_405_429))));
    let y = 1.0 - poly * (-x * x).exp();
    y.copysign(x)
}

impl ActivationKind {
    pub fn apply(self, x: f32) -> f32 {
        let x = f64::from(x);
        let y = match self {
            Self::Relu => x.max(0.0),
            Self::Gelu => 0.5 * x * (1.0 + erf(x / std::f64::consts::SQRT_2)),
            Self::Silu => x / (1.0 + (-x).exp()),
        };
        y as f32
    }

    pub fn derivative(self, x: f32) -> f32 {
        let x = f64::from(x);
        let d = match self {
            Self::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Gelu => {
                let cdf = 0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2));
                let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
                cdf + x * pdf
            }
            Self::Silu => {
                let s = 1.0 / (1.0 + (-x).exp());
                s * (1.0 + x * (1.0 - s))
            }
        };
        d as f32
    }
}

/// Numerically stable `log(softmax(row))` in `f64`.
pub fn log_softmax(row: &[f32]) -> Vec<f64> {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let lse = row.iter().map(|&v| (f64::from(v) - max).exp()).sum::<f64>().ln() + max;
    row.iter().map(|&v| f64::from(v) - lse).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_buffer() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn identity_matmul() {
        let id = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let b = Tensor::from_rows(&[vec![3.0, 4.0], vec![5.0, 6.0]]);
        assert_eq!(matmul(&id, &b).unwrap(), b);
    }

    #[test]
    fn row_times_column() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0]]);
        let b = Tensor::from_rows(&[vec![3.0], vec![4.0]]);
        assert_eq!(matmul(&a, &b).unwrap().data(), &[11.0]);
    }

    #[test]
    fn matmul_rejects_mismatch() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 3]);
        assert!(matches!(matmul(&a, &b), Err(Error::Dimension(_))));
    }

    #[test]
    fn relu_definition() {
        let out: Vec<f32> = [-1.0, 0.0, 2.0].iter().map(|&v| ActivationKind::Relu.apply(v)).collect();
        assert_eq!(out, vec![0.0, 0.0, 2.0]);
    }

    #[test]
    fn gelu_origin() {
        assert_eq!(ActivationKind::Gelu.apply(0.0), 0.0);
    }

    #[test]
    fn unknown_activation() {
        assert!(matches!("tanh".parse::<ActivationKind>(), Err(Error::Config(_))));
        assert_eq!("silu-gated".parse::<ActivationKind>().unwrap(), ActivationKind::Silu);
    }

    #[test]
    fn layer_norm_constant_row_collapses_to_bias() {
        let x = Tensor::from_rows(&[vec![5.0, 5.0, 5.0]]);
        let (y, _) = layer_norm(&x, &Tensor::filled(&[3], 1.0), &Tensor::zeros(&[3])).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn layer_norm_two_point_row() {
        let x = Tensor::from_rows(&[vec![1.0, -1.0]]);
        let (y, _) = layer_norm(&x, &Tensor::filled(&[2], 1.0), &Tensor::zeros(&[2])).unwrap();
        assert!((y.data()[0] - 1.0).abs() < 1e-4);
        assert!((y.data()[1] + 1.0).abs() < 1e-4);
    }

    #[test]
    fn layer_norm_rejects_bad_gain() {
        let x = Tensor::zeros(&[2, 3]);
        assert!(layer_norm(&x, &Tensor::zeros(&[2]), &Tensor::zeros(&[3])).is_err());
        let empty = Tensor::zeros(&[2, 0]);
        assert!(layer_norm(&empty, &Tensor::zeros(&[0]), &Tensor::zeros(&[0])).is_err());
    }
}
