//! Matrix-free linear operators.
//!
//! Vectors are flat `f64` slices. Tensors are flattened row-major over
//! `[C, H, W]` on the input side and `[Cout, Hout, Wout]` on the output side.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, invalid, Error, Result};

/// Default cap on `m·n` for dense materialization.
pub const DEFAULT_MATERIALIZE_CAP: usize = 1 << 26;

/// Rows are extracted in batches of this size.
pub const DEFAULT_ROW_BATCH: usize = 128;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct TensorShape(Vec<usize>);

impl TensorShape {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.is_empty() {
            return Err(invalid("tensor shape needs at least one dimension"));
        }
        if dims.contains(&0) {
            return Err(invalid(format!("tensor shape {dims:?} has a zero dimension")));
        }
        dims.iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| invalid(format!("tensor shape {dims:?} overflows usize")))?;
        Ok(Self(dims))
    }

    pub fn flat(len: usize) -> Result<Self> {
        Self::new(vec![len])
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    /// Interprets the shape as `[C, H, W]`.
    pub fn chw(&self) -> Result<(usize, usize, usize)> {
        match self.0[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(invalid(format!(
                "expected a [C, H, W] shape, got {:?}",
                self.0
            ))),
        }
    }
}

impl TryFrom<Vec<usize>> for TensorShape {
    type Error = Error;

    fn try_from(dims: Vec<usize>) -> Result<Self> {
        Self::new(dims)
    }
}

impl From<TensorShape> for Vec<usize> {
    fn from(shape: TensorShape) -> Self {
        shape.0
    }
}

impl std::fmt::Display for TensorShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[")?;
        for (i, d) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{d}")?;
        }
        write!(f, "]")
    }
}

/// An `m × n` linear map with forward and adjoint application.
///
/// Implementors provide the unchecked `*_into` kernels; the checked wrappers
/// validate lengths and allocate.
pub trait LinearMap: Sync {
    /// Output dimension `m`.
    fn rows(&self) -> usize;

    /// Input dimension `n`.
    fn cols(&self) -> usize;

    /// `y = A x`. `y` is overwritten.
    fn apply_into(&self, x: &[f64], y: &mut [f64]);

    /// `x = Aᵀ y`. `x` is overwritten.
    fn apply_adjoint_into(&self, y: &[f64], x: &mut [f64]);

    /// Writes row `i` of `A` (that is, `Aᵀ eᵢ`) into `out`.
    fn row_into(&self, i: usize, out: &mut [f64]) {
        let mut basis = vec![0.0; self.rows()];
        basis[i] = 1.0;
        self.apply_adjoint_into(&basis, out);
    }

    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("input vector", x.len(), self.cols())?;
        let mut y = vec![0.0; self.rows()];
        self.apply_into(x, &mut y);
        Ok(y)
    }

    fn apply_adjoint(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_len("adjoint input vector", y.len(), self.rows())?;
        let mut x = vec![0.0; self.cols()];
        self.apply_adjoint_into(y, &mut x);
        Ok(x)
    }

    /// Rows `aᵢ` for the requested indices, in request order.
    fn extract_rows(&self, row_indices: &[usize]) -> Result<Vec<Vec<f64>>> {
        let m = self.rows();
        if let Some(&bad) = row_indices.iter().find(|&&i| i >= m) {
            return Err(invalid(format!("row index {bad} out of range for {m} rows")));
        }
        let n = self.cols();
        Ok(row_indices
            .par_chunks(DEFAULT_ROW_BATCH)
            .flat_map_iter(|batch| {
                batch.iter().map(move |&i| {
                    let mut row = vec![0.0; n];
                    self.row_into(i, &mut row);
                    row
                })
            })
            .collect())
    }

    /// Dense copy of the operator, refusing when `m·n` exceeds `cap`.
    fn materialize(&self, cap: usize) -> Result<DenseOperator> {
        let (m, n) = (self.rows(), self.cols());
        check_materialize(m, n, cap)?;
        let mut data = vec![0.0; m * n];
        data.par_chunks_mut(n.max(1))
            .enumerate()
            .for_each(|(i, row)| self.row_into(i, row));
        Ok(DenseOperator {
            rows: m,
            cols: n,
            data,
        })
    }
}

pub(crate) fn check_materialize(m: usize, n: usize, cap: usize) -> Result<()> {
    let requested = m as u128 * n as u128;
    if requested > cap as u128 {
        Err(Error::Capacity {
            what: "dense materialization",
            requested,
            cap: cap as u128,
        })
    } else {
        Ok(())
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseOperator {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseOperator {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        let expected = rows
            .checked_mul(cols)
            .ok_or_else(|| invalid("dense operator size overflows"))?;
        check_len("dense operator entries", data.len(), expected)?;
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let m = rows.len();
        let n = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(m * n);
        for (i, r) in rows.iter().enumerate() {
            check_len(&format!("row {i}"), r.len(), n)?;
            data.extend_from_slice(r);
        }
        Self::new(m, n, data)
    }

    pub fn identity(n: usize) -> Self {
        Self::diag(&vec![1.0; n])
    }

    pub fn diag(d: &[f64]) -> Self {
        let n = d.len();
        let mut data = vec![0.0; n * n];
        for (i, &v) in d.iter().enumerate() {
            data[i * n + i] = v;
        }
        Self {
            rows: n,
            cols: n,
            data,
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * c).collect(),
        }
    }
}

impl LinearMap for DenseOperator {
    fn rows(&self) -> usize {
        self.rows
    }

    fn cols(&self) -> usize {
        self.cols
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        for (yi, row) in y.iter_mut().zip(self.data.chunks_exact(self.cols.max(1))) {
            *yi = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
        if self.cols == 0 {
            y.fill(0.0);
        }
    }

    fn apply_adjoint_into(&self, y: &[f64], x: &mut [f64]) {
        debug_assert_eq!(y.len(), self.rows);
        x.fill(0.0);
        for (i, &yi) in y.iter().enumerate() {
            if yi == 0.0 {
                continue;
            }
            for (xj, a) in x.iter_mut().zip(self.row(i)) {
                *xj += a * yi;
            }
        }
    }

    fn row_into(&self, i: usize, out: &mut [f64]) {
        out.copy_from_slice(self.row(i));
    }

    fn materialize(&self, cap: usize) -> Result<DenseOperator> {
        check_materialize(self.rows, self.cols, cap)?;
        Ok(self.clone())
    }
}

/// 2-D cross-correlation with zero padding and stride, no bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2dOperator {
    in_shape: TensorShape,
    out_shape: TensorShape,
    /// `[Cout, Cin, kh, kw]`, row-major.
    kernel: Vec<f64>,
    kernel_size: (usize, usize),
    stride: (usize, usize),
    padding: (usize, usize),
}

/// Output positions `o` whose input index `o*stride + k_off - pad` lies in
/// `[0, in_len)`, as a half-open range.
fn valid_outputs(
    pad: usize,
    k_off: usize,
    stride: usize,
    in_len: usize,
    out_len: usize,
) -> (usize, usize) {
    let start = if pad > k_off {
        (pad - k_off).div_ceil(stride)
    } else {
        0
    };
    // largest o with o*stride + k_off - pad <= in_len - 1
    let end = if in_len + pad > k_off {
        ((in_len - 1 + pad - k_off) / stride + 1).min(out_len)
    } else {
        0
    };
    (start, end.max(start))
}

impl Conv2dOperator {
    pub fn new(
        in_shape: TensorShape,
        out_channels: usize,
        kernel_size: (usize, usize),
        stride: (usize, usize),
        padding: (usize, usize),
        kernel: Vec<f64>,
    ) -> Result<Self> {
        let (cin, h, w) = in_shape.chw()?;
        let (kh, kw) = kernel_size;
        if out_channels == 0 || kh == 0 || kw == 0 {
            return Err(invalid("convolution needs positive channels and kernel size"));
        }
        if stride.0 == 0 || stride.1 == 0 {
            return Err(invalid("convolution stride must be positive"));
        }
        if h + 2 * padding.0 < kh || w + 2 * padding.1 < kw {
            return Err(invalid(format!(
                "kernel {kh}x{kw} does not fit padded input {h}x{w} (padding {padding:?})"
            )));
        }
        let hout = (h + 2 * padding.0 - kh) / stride.0 + 1;
        let wout = (w + 2 * padding.1 - kw) / stride.1 + 1;
        check_len(
            "convolution kernel",
            kernel.len(),
            out_channels * cin * kh * kw,
        )?;
        Ok(Self {
            out_shape: TensorShape::new(vec![out_channels, hout, wout])?,
            in_shape,
            kernel,
            kernel_size,
            stride,
            padding,
        })
    }

    pub fn in_shape(&self) -> &TensorShape {
        &self.in_shape
    }

    pub fn out_shape(&self) -> &TensorShape {
        &self.out_shape
    }

    pub fn kernel(&self) -> &[f64] {
        &self.kernel
    }

    pub fn kernel_size(&self) -> (usize, usize) {
        self.kernel_size
    }

    pub fn stride(&self) -> (usize, usize) {
        self.stride
    }

    pub fn padding(&self) -> (usize, usize) {
        self.padding
    }

    pub fn out_channels(&self) -> usize {
        self.out_shape.dims()[0]
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            kernel: self.kernel.iter().map(|v| v * c).collect(),
            ..self.clone()
        }
    }

    /// Visits every (kernel weight, output plane, input plane) triple along
    /// with the valid output ranges for that kernel offset.
    fn for_each_tap(&self, mut f: impl FnMut(f64, Tap)) {
        let (cin, h, w) = (
            self.in_shape.dims()[0],
            self.in_shape.dims()[1],
            self.in_shape.dims()[2],
        );
        let (cout, hout, wout) = (
            self.out_shape.dims()[0],
            self.out_shape.dims()[1],
            self.out_shape.dims()[2],
        );
        let (kh, kw) = self.kernel_size;
        let mut k = 0;
        for co in 0..cout {
            for ci in 0..cin {
                for ki in 0..kh {
                    let rows = valid_outputs(self.padding.0, ki, self.stride.0, h, hout);
                    for kj in 0..kw {
                        let weight = self.kernel[k];
                        k += 1;
                        if weight == 0.0 {
                            continue;
                        }
                        let cols = valid_outputs(self.padding.1, kj, self.stride.1, w, wout);
                        f(
                            weight,
                            Tap {
                                out_plane: co * hout * wout,
                                in_plane: ci * h * w,
                                ki,
                                kj,
                                rows,
                                cols,
                            },
                        );
                    }
                }
            }
        }
    }

    #[inline]
    fn input_index(&self, tap: &Tap, oh: usize, ow: usize) -> usize {
        let w = self.in_shape.dims()[2];
        let ih = oh * self.stride.0 + tap.ki - self.padding.0;
        let iw = ow * self.stride.1 + tap.kj - self.padding.1;
        tap.in_plane + ih * w + iw
    }
}

struct Tap {
    out_plane: usize,
    in_plane: usize,
    ki: usize,
    kj: usize,
    rows: (usize, usize),
    cols: (usize, usize),
}

impl LinearMap for Conv2dOperator {
    fn rows(&self) -> usize {
        self.out_shape.numel()
    }

    fn cols(&self) -> usize {
        self.in_shape.numel()
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols());
        y.fill(0.0);
        let wout = self.out_shape.dims()[2];
        self.for_each_tap(|weight, tap| {
            for oh in tap.rows.0..tap.rows.1 {
                let out_row = tap.out_plane + oh * wout;
                let first = self.input_index(&tap, oh, tap.cols.0);
                for (step, ow) in (tap.cols.0..tap.cols.1).enumerate() {
                    y[out_row + ow] += weight * x[first + step * self.stride.1];
                }
            }
        });
    }

    fn apply_adjoint_into(&self, y: &[f64], x: &mut [f64]) {
        debug_assert_eq!(y.len(), self.rows());
        x.fill(0.0);
        let wout = self.out_shape.dims()[2];
        self.for_each_tap(|weight, tap| {
            for oh in tap.rows.0..tap.rows.1 {
                let out_row = tap.out_plane + oh * wout;
                let first = self.input_index(&tap, oh, tap.cols.0);
                for (step, ow) in (tap.cols.0..tap.cols.1).enumerate() {
                    x[first + step * self.stride.1] += weight * y[out_row + ow];
                }
            }
        });
    }

    /// `Aᵀ eᵢ` for a single output position: the adjoint restricted to the
    /// one non-zero entry of the basis vector.
    fn row_into(&self, i: usize, out: &mut [f64]) {
        out.fill(0.0);
        let (cin, h, w) = (
            self.in_shape.dims()[0],
            self.in_shape.dims()[1],
            self.in_shape.dims()[2],
        );
        let (hout, wout) = (self.out_shape.dims()[1], self.out_shape.dims()[2]);
        let (kh, kw) = self.kernel_size;
        let co = i / (hout * wout);
        let oh = (i / wout) % hout;
        let ow = i % wout;
        for ci in 0..cin {
            for ki in 0..kh {
                let Some(ih) = (oh * self.stride.0 + ki)
                    .checked_sub(self.padding.0)
                    .filter(|&ih| ih < h)
                else {
                    continue;
                };
                for kj in 0..kw {
                    let Some(iw) = (ow * self.stride.1 + kj)
                        .checked_sub(self.padding.1)
                        .filter(|&iw| iw < w)
                    else {
                        continue;
                    };
                    out[ci * h * w + ih * w + iw] +=
                        self.kernel[((co * cin + ci) * kh + ki) * kw + kj];
                }
            }
        }
    }
}

/// A dense or convolutional operator.
#[derive(Debug, Clone, PartialEq)]
pub enum LinearOperator {
    Dense(DenseOperator),
    Conv2d(Conv2dOperator),
}

impl LinearOperator {
    pub fn scaled(&self, c: f64) -> Self {
        match self {
            Self::Dense(d) => Self::Dense(d.scaled(c)),
            Self::Conv2d(k) => Self::Conv2d(k.scaled(c)),
        }
    }
}

impl From<DenseOperator> for LinearOperator {
    fn from(op: DenseOperator) -> Self {
        Self::Dense(op)
    }
}

impl From<Conv2dOperator> for LinearOperator {
    fn from(op: Conv2dOperator) -> Self {
        Self::Conv2d(op)
    }
}

macro_rules! delegate {
    ($self:ident, $op:ident => $body:expr) => {
        match $self {
            LinearOperator::Dense($op) => $body,
            LinearOperator::Conv2d($op) => $body,
        }
    };
}

impl LinearMap for LinearOperator {
    fn rows(&self) -> usize {
        delegate!(self, op => op.rows())
    }

    fn cols(&self) -> usize {
        delegate!(self, op => op.cols())
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        delegate!(self, op => op.apply_into(x, y))
    }

    fn apply_adjoint_into(&self, y: &[f64], x: &mut [f64]) {
        delegate!(self, op => op.apply_adjoint_into(y, x))
    }

    fn row_into(&self, i: usize, out: &mut [f64]) {
        delegate!(self, op => op.row_into(i, out))
    }

    fn materialize(&self, cap: usize) -> Result<DenseOperator> {
        delegate!(self, op => op.materialize(cap))
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ones_conv() -> Conv2dOperator {
        Conv2dOperator::new(
            TensorShape::new(vec![1, 3, 3]).unwrap(),
            1,
            (2, 2),
            (1, 1),
            (0, 0),
            vec![1.0; 4],
        )
        .unwrap()
    }

    #[test]
    fn dense_identity_and_diag() {
        let id = DenseOperator::identity(2);
        assert_eq!(id.apply(&[3.0, -1.0]).unwrap(), vec![3.0, -1.0]);
        assert_eq!(id.apply_adjoint(&[5.0, 7.0]).unwrap(), vec![5.0, 7.0]);
        let d = DenseOperator::diag(&[2.0, 1.0]);
        assert_eq!(d.apply(&[1.0, 1.0]).unwrap(), vec![2.0, 1.0]);
    }

    #[test]
    fn dense_adjoint_reads_first_row() {
        let a = DenseOperator::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(a.apply_adjoint(&[1.0, 0.0]).unwrap(), vec![1.0, 2.0]);
        assert_eq!(a.extract_rows(&[1]).unwrap(), vec![vec![3.0, 4.0]]);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let a = DenseOperator::identity(2);
        assert!(matches!(a.apply(&[1.0]), Err(Error::InvalidInput(_))));
        assert!(matches!(a.apply_adjoint(&[1.0; 3]), Err(Error::InvalidInput(_))));
        assert!(matches!(a.extract_rows(&[2]), Err(Error::InvalidInput(_))));
        assert!(DenseOperator::new(2, 2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn ones_kernel_sums_windows() {
        let conv = ones_conv();
        assert_eq!(conv.out_shape().dims(), &[1, 2, 2]);
        assert_eq!(conv.apply(&[1.0; 9]).unwrap(), vec![4.0; 4]);
    }

    #[test]
    fn ones_kernel_materializes_to_stencil() {
        let dense = ones_conv().materialize(DEFAULT_MATERIALIZE_CAP).unwrap();
        assert_eq!((dense.rows(), dense.cols()), (4, 9));
        #[rustfmt::skip]
        let expected = [
            1., 1., 0., 1., 1., 0., 0., 0., 0.,
            0., 1., 1., 0., 1., 1., 0., 0., 0.,
            0., 0., 0., 1., 1., 0., 1., 1., 0.,
            0., 0., 0., 0., 1., 1., 0., 1., 1.,
        ];
        assert_eq!(dense.data(), &expected);
    }

    #[test]
    fn identity_conv_rows_are_basis_vectors() {
        let conv = Conv2dOperator::new(
            TensorShape::new(vec![1, 2, 3]).unwrap(),
            1,
            (1, 1),
            (1, 1),
            (0, 0),
            vec![1.0],
        )
        .unwrap();
        let rows = conv.extract_rows(&(0..6).collect::<Vec<_>>()).unwrap();
        for (i, r) in rows.iter().enumerate() {
            let mut e = vec![0.0; 6];
            e[i] = 1.0;
            assert_eq!(r, &e);
        }
        let dense = conv.materialize(DEFAULT_MATERIALIZE_CAP).unwrap();
        assert_eq!(dense, DenseOperator::identity(6));
    }

    #[test]
    fn materialize_respects_cap() {
        let err = ones_conv().materialize(35).unwrap_err();
        match err {
            Error::Capacity { requested, .. } => assert_eq!(requested, 36),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn dense_materialize_is_copy() {
        let a = DenseOperator::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(a.materialize(4).unwrap(), a);
    }

    #[test]
    fn padded_strided_output_shape() {
        let conv = Conv2dOperator::new(
            TensorShape::new(vec![2, 7, 6]).unwrap(),
            3,
            (3, 2),
            (2, 2),
            (1, 2),
            vec![0.5; 3 * 2 * 3 * 2],
        )
        .unwrap();
        // (7 + 2 - 3)/2 + 1 = 4, (6 + 4 - 2)/2 + 1 = 5
        assert_eq!(conv.out_shape().dims(), &[3, 4, 5]);
    }

    #[test]
    fn kernel_larger_than_padded_input_is_rejected() {
        let r = Conv2dOperator::new(
            TensorShape::new(vec![1, 2, 2]).unwrap(),
            1,
            (3, 3),
            (1, 1),
            (0, 0),
            vec![1.0; 9],
        );
        assert!(r.is_err());
    }

    #[test]
    fn shape_validation() {
        assert!(TensorShape::new(vec![]).is_err());
        assert!(TensorShape::new(vec![3, 0]).is_err());
        assert_eq!(TensorShape::new(vec![2, 3, 4]).unwrap().numel(), 24);
        let s: TensorShape = serde_json::from_str("[1,28,28]").unwrap();
        assert_eq!(s.to_string(), "[1,28,28]");
        assert!(serde_json::from_str::<TensorShape>("[1,0]").is_err());
    }
}
