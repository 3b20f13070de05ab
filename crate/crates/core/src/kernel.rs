//! Kernel functions, datasets and Gram-matrix assembly.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{usage, Result};
use crate::scalar::Scalar;

/// Kernel family and its parameters.
///
/// The Gaussian kernel is `exp(-sigma * ||x - y||^2)`, so `sigma` has units of
/// inverse squared length. The polynomial kernel is `(<x, y> + offset)^degree`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
#[serde(bound = "T: Scalar")]
pub enum KernelSpec<T> {
    Gaussian { sigma: T },
    Linear,
    Polynomial { degree: u32, offset: T },
}

impl<T: Scalar> KernelSpec<T> {
    pub fn gaussian(sigma: T) -> Result<Self> {
        let spec = KernelSpec::Gaussian { sigma };
        spec.validate()?;
        Ok(spec)
    }

    pub fn polynomial(degree: u32, offset: T) -> Result<Self> {
        let spec = KernelSpec::Polynomial { degree, offset };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Gaussian { sigma } if !(sigma > T::zero() && sigma.is_finite()) => {
                usage(format!("gaussian kernel needs a finite sigma > 0, got {sigma}"))
            }
            KernelSpec::Polynomial { degree, .. } if degree < 1 => {
                usage("polynomial kernel needs degree >= 1")
            }
            KernelSpec::Polynomial { offset, .. } if !(offset >= T::zero() && offset.is_finite()) => {
                usage(format!("polynomial kernel needs a finite offset >= 0, got {offset}"))
            }
            _ => Ok(()),
        }
    }

    /// Kernel value on two equally sized slices. No validation.
    #[inline]
    pub fn eval_unchecked(&self, x: &[T], y: &[T]) -> T {
        match *self {
            KernelSpec::Gaussian { .. } => self.finish(sq_dist(x, y)),
            _ => self.finish(dot(x, y)),
        }
    }

    /// Kernel value from the inner product, or from the squared distance for
    /// the Gaussian family.
    #[inline]
    fn finish(&self, raw: T) -> T {
        match *self {
            KernelSpec::Gaussian { sigma } => (-sigma * raw).exp(),
            KernelSpec::Linear => raw,
            KernelSpec::Polynomial { degree, offset } => (raw + offset).powi(degree as i32),
        }
    }

    /// `[k(x0, y0), k(x0, y1), k(x1, y0), k(x1, y1)]`, each bitwise equal to
    /// [`Self::eval_unchecked`].
    #[inline]
    fn eval_2x2(&self, x0: &[T], x1: &[T], y0: &[T], y1: &[T]) -> [T; 4] {
        let raw = match *self {
            KernelSpec::Gaussian { .. } => accumulate_2x2(x0, x1, y0, y1, |a, b| {
                let d = a - b;
                d * d
            }),
            _ => accumulate_2x2(x0, x1, y0, y1, |a, b| a * b),
        };
        raw.map(|r| self.finish(r))
    }

    /// Evaluates `k(x, y)`.
    pub fn eval(&self, x: ArrayView1<'_, T>, y: ArrayView1<'_, T>) -> Result<T> {
        if x.len() != y.len() {
            return usage(format!("dimension mismatch: {} vs {}", x.len(), y.len()));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return usage("non-finite kernel argument");
        }
        let xs = x.to_vec();
        let ys = y.to_vec();
        Ok(self.eval_unchecked(&xs, &ys))
    }

    /// Whether `k(x, x)` is the same for every `x`.
    pub fn has_unit_diagonal(&self) -> bool {
        matches!(self, KernelSpec::Gaussian { .. })
    }
}

/// Free-function form of [`KernelSpec::eval`].
pub fn eval_kernel<T: Scalar>(spec: &KernelSpec<T>, x: ArrayView1<'_, T>, y: ArrayView1<'_, T>) -> Result<T> {
    spec.validate()?;
    spec.eval(x, y)
}

// Fixed four-lane accumulation order: each result is a pure function of its
// two inputs and exactly symmetric in them.
#[inline(always)]
fn accumulate<T: Scalar>(x: &[T], y: &[T], f: impl Fn(T, T) -> T) -> T {
    let mut acc = [T::zero(); 4];
    let xc = x.chunks_exact(4);
    let yc = y.chunks_exact(4);
    let (xr, yr) = (xc.remainder(), yc.remainder());
    for (a, b) in xc.zip(yc) {
        acc[0] += f(a[0], b[0]);
        acc[1] += f(a[1], b[1]);
        acc[2] += f(a[2], b[2]);
        acc[3] += f(a[3], b[3]);
    }
    let mut tail = T::zero();
    for (a, b) in xr.iter().zip(yr) {
        tail += f(*a, *b);
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Four independent [`accumulate`] calls sharing their loads.
#[inline(always)]
fn accumulate_2x2<T: Scalar>(x0: &[T], x1: &[T], y0: &[T], y1: &[T], f: impl Fn(T, T) -> T) -> [T; 4] {
    let mut acc = [[T::zero(); 4]; 4];
    let c0 = x0.chunks_exact(4);
    let c1 = x1.chunks_exact(4);
    let e0 = y0.chunks_exact(4);
    let e1 = y1.chunks_exact(4);
    let (r0, r1, s0, s1) = (c0.remainder(), c1.remainder(), e0.remainder(), e1.remainder());
    for (((a0, a1), b0), b1) in c0.zip(c1).zip(e0).zip(e1) {
        for l in 0..4 {
            acc[0][l] += f(a0[l], b0[l]);
            acc[1][l] += f(a0[l], b1[l]);
            acc[2][l] += f(a1[l], b0[l]);
            acc[3][l] += f(a1[l], b1[l]);
        }
    }
    let mut tail = [T::zero(); 4];
    for l in 0..r0.len() {
        tail[0] += f(r0[l], s0[l]);
        tail[1] += f(r0[l], s1[l]);
        tail[2] += f(r1[l], s0[l]);
        tail[3] += f(r1[l], s1[l]);
    }
    [0, 1, 2, 3].map(|e| (acc[e][0] + acc[e][1]) + (acc[e][2] + acc[e][3]) + tail[e])
}

#[inline]
fn dot<T: Scalar>(x: &[T], y: &[T]) -> T {
    accumulate(x, y, |a, b| a * b)
}

// Direct sum of squared differences; the expanded |x|^2 + |y|^2 - 2<x,y>
// form cancels badly for near-duplicate rows.
#[inline]
fn sq_dist<T: Scalar>(x: &[T], y: &[T]) -> T {
    accumulate(x, y, |a, b| {
        let d = a - b;
        d * d
    })
}

/// Fills `out[r][j]` for rows `r` of the block and columns `j0..j1`; rows are
/// `a[(i0 + r) * d..]`, columns `b[j * d..]`.
#[allow(clippy::too_many_arguments)]
#[inline]
fn fill_tile<T: Scalar>(
    spec: &KernelSpec<T>,
    a: &[T],
    b: &[T],
    d: usize,
    i0: usize,
    block: &mut [T],
    stride: usize,
    j0: usize,
    j1: usize,
) {
    let rows = block.len() / stride;
    let row = |i: usize| &a[i * d..(i + 1) * d];
    let col = |j: usize| &b[j * d..(j + 1) * d];
    let mut r = 0;
    while r + 1 < rows {
        let (x0, x1) = (row(i0 + r), row(i0 + r + 1));
        let mut j = j0;
        while j + 1 < j1 {
            let v = spec.eval_2x2(x0, x1, col(j), col(j + 1));
            block[r * stride + j] = v[0];
            block[r * stride + j + 1] = v[1];
            block[(r + 1) * stride + j] = v[2];
            block[(r + 1) * stride + j + 1] = v[3];
            j += 2;
        }
        if j < j1 {
            block[r * stride + j] = spec.eval_unchecked(x0, col(j));
            block[(r + 1) * stride + j] = spec.eval_unchecked(x1, col(j));
        }
        r += 2;
    }
    if r < rows {
        let x0 = row(i0 + r);
        for j in j0..j1 {
            block[r * stride + j] = spec.eval_unchecked(x0, col(j));
        }
    }
}

/// Dense sample matrix, one row per sample, with optional integer labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Dataset<T> {
    x: Array2<T>,
    labels: Option<Vec<i64>>,
}

impl<T: Scalar> Dataset<T> {
    /// Wraps a sample matrix. Zero rows are accepted (an empty filter result
    /// is a valid dataset); fitting rejects it later.
    pub fn new(x: Array2<T>) -> Result<Self> {
        if x.ncols() == 0 {
            return usage("dataset needs at least one feature column");
        }
        if let Some((i, _)) = x.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return usage(format!("non-finite entry at row {}, column {}", i.0, i.1));
        }
        Ok(Dataset { x: x.as_standard_layout().into_owned(), labels: None })
    }

    pub fn with_labels(x: Array2<T>, labels: Vec<i64>) -> Result<Self> {
        if labels.len() != x.nrows() {
            return usage(format!("{} labels for {} samples", labels.len(), x.nrows()));
        }
        let mut d = Self::new(x)?;
        d.labels = Some(labels);
        Ok(d)
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return usage("ragged rows");
        }
        let flat: Vec<T> = rows.iter().flatten().copied().collect();
        let x = Array2::from_shape_vec((rows.len(), d), flat).map_err(|e| crate::Error::Usage(e.to_string()))?;
        Self::new(x)
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> ArrayView2<'_, T> {
        self.x.view()
    }

    pub fn labels(&self) -> Option<&[i64]> {
        self.labels.as_deref()
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Array2<T> {
        self.x.select(Axis(0), indices)
    }

    pub fn into_parts(self) -> (Array2<T>, Option<Vec<i64>>) {
        (self.x, self.labels)
    }
}

/// Which sample set the rows or columns of a [`GramBlock`] come from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Source {
    Train,
    Landmarks,
    Pilot,
    Query,
    Other(String),
}

/// Kernel matrix between two sample sets.
#[derive(Debug, Clone, PartialEq)]
pub struct GramBlock<T> {
    pub values: Array2<T>,
    pub row_source: Source,
    pub col_source: Source,
}

impl<T> GramBlock<T> {
    pub fn is_square_self(&self) -> bool {
        self.row_source == self.col_source
    }
}

/// Whether Gram rows are assembled on the rayon pool or on the caller thread.
/// Both produce bitwise-identical output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Assembly {
    Serial,
    #[default]
    Parallel,
}

fn contiguous_rows<T: Scalar>(a: ArrayView2<'_, T>) -> std::borrow::Cow<'_, [T]> {
    match a.to_slice() {
        Some(s) => std::borrow::Cow::Borrowed(s),
        None => std::borrow::Cow::Owned(a.iter().copied().collect()),
    }
}

/// Rows of the left operand handled per task.
const ROW_TILE: usize = 8;

/// Right-operand rows per cache tile, about 128 KiB of `f64` data.
fn col_tile(d: usize) -> usize {
    (16_384 / d.max(1)).clamp(4, 512)
}

/// Cross Gram matrix `[k(a_i, b_j)]`.
pub fn gram<T: Scalar>(spec: &KernelSpec<T>, a: ArrayView2<'_, T>, b: ArrayView2<'_, T>) -> Result<Array2<T>> {
    gram_with(spec, a, b, Assembly::Parallel)
}

pub fn gram_with<T: Scalar>(
    spec: &KernelSpec<T>,
    a: ArrayView2<'_, T>,
    b: ArrayView2<'_, T>,
    assembly: Assembly,
) -> Result<Array2<T>> {
    spec.validate()?;
    if a.ncols() != b.ncols() {
        return usage(format!("dimension mismatch: {} vs {} columns", a.ncols(), b.ncols()));
    }
    let same = a.as_ptr() == b.as_ptr() && a.shape() == b.shape() && a.strides() == b.strides();
    if same {
        return gram_sym_with(spec, a, assembly);
    }
    let d = a.ncols();
    let q = b.nrows();
    let aa = contiguous_rows(a);
    let bb = contiguous_rows(b);
    let mut out = Array2::<T>::zeros((a.nrows(), q));
    if d == 0 || q == 0 {
        return Ok(out);
    }
    let jt = col_tile(d);
    let fill = |(bi, block): (usize, &mut [T])| {
        let i0 = bi * ROW_TILE;
        for j0 in (0..q).step_by(jt) {
            fill_tile(spec, &aa, &bb, d, i0, block, q, j0, (j0 + jt).min(q));
        }
    };
    let flat = out.as_slice_mut().expect("fresh array is contiguous");
    match assembly {
        Assembly::Serial => flat.chunks_mut(ROW_TILE * q).enumerate().for_each(fill),
        Assembly::Parallel => flat.par_chunks_mut(ROW_TILE * q).enumerate().for_each(fill),
    }
    Ok(out)
}

/// Symmetric Gram matrix of one sample set. The upper triangle is computed
/// and mirrored, so the result is exactly symmetric.
pub fn gram_sym<T: Scalar>(spec: &KernelSpec<T>, a: ArrayView2<'_, T>) -> Result<Array2<T>> {
    gram_sym_with(spec, a, Assembly::Parallel)
}

pub fn gram_sym_with<T: Scalar>(spec: &KernelSpec<T>, a: ArrayView2<'_, T>, assembly: Assembly) -> Result<Array2<T>> {
    spec.validate()?;
    let n = a.nrows();
    let d = a.ncols();
    let aa = contiguous_rows(a);
    let mut out = Array2::<T>::zeros((n, n));
    if n == 0 {
        return Ok(out);
    }
    let jt = col_tile(d);
    let fill = |(bi, block): (usize, &mut [T])| {
        let i0 = bi * ROW_TILE;
        // Entries left of the diagonal inside the block are overwritten by
        // the mirror pass below.
        for j0 in (i0..n).step_by(jt) {
            fill_tile(spec, &aa, &aa, d, i0, block, n, j0, (j0 + jt).min(n));
        }
    };
    let flat = out.as_slice_mut().expect("fresh array is contiguous");
    match assembly {
        Assembly::Serial => flat.chunks_mut(ROW_TILE * n).enumerate().for_each(fill),
        Assembly::Parallel => flat.par_chunks_mut(ROW_TILE * n).enumerate().for_each(fill),
    }
    for i in 0..n {
        for j in 0..i {
            out[[i, j]] = out[[j, i]];
        }
    }
    Ok(out)
}

/// `k(x_i, x_i)` for every row, in O(n d).
pub fn kernel_diag<T: Scalar>(spec: &KernelSpec<T>, a: ArrayView2<'_, T>) -> Array1<T> {
    let d = a.ncols();
    let aa = contiguous_rows(a);
    (0..a.nrows())
        .map(|i| {
            let xi = &aa[i * d..(i + 1) * d];
            spec.eval_unchecked(xi, xi)
        })
        .collect()
}

/// Labelled Gram block between the training set and itself.
pub fn train_gram<T: Scalar>(spec: &KernelSpec<T>, data: &Dataset<T>) -> Result<GramBlock<T>> {
    Ok(GramBlock { values: gram_sym(spec, data.x())?, row_source: Source::Train, col_source: Source::Train })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    fn gauss(s: f64) -> KernelSpec<f64> {
        KernelSpec::gaussian(s).unwrap()
    }

    #[test]
    fn gaussian_self_similarity_is_one() {
        let x = array![3.1, -2.0];
        assert_eq!(eval_kernel(&gauss(0.5), x.view(), x.view()).unwrap(), 1.0);
    }

    #[test]
    fn linear_is_dot_product() {
        let v = eval_kernel(&KernelSpec::Linear, array![1.0, 2.0].view(), array![3.0, 4.0].view()).unwrap();
        assert_eq!(v, 11.0);
    }

    #[test]
    fn gaussian_closed_form() {
        let v = eval_kernel(&gauss(0.5), array![0.0, 0.0].view(), array![1.0, 1.0].view()).unwrap();
        assert!((v - (-1.0f64).exp()).abs() < 1e-15);
        assert!((v - 0.3678794412).abs() < 1e-10);
    }

    #[test]
    fn polynomial_kernel() {
        let k = KernelSpec::polynomial(2, 1.0).unwrap();
        let v = eval_kernel(&k, array![1.0, 2.0].view(), array![3.0, 4.0].view()).unwrap();
        assert_eq!(v, 144.0);
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(KernelSpec::gaussian(0.0).is_err());
        assert!(KernelSpec::gaussian(-1.0).is_err());
        assert!(KernelSpec::polynomial(0, 1.0).is_err());
        assert!(KernelSpec::polynomial(2, -1.0).is_err());
    }

    #[test]
    fn eval_rejects_bad_input() {
        let k = gauss(1.0);
        assert!(matches!(eval_kernel(&k, array![1.0].view(), array![1.0, 2.0].view()), Err(crate::Error::Usage(_))));
        assert!(matches!(eval_kernel(&k, array![f64::NAN].view(), array![1.0].view()), Err(crate::Error::Usage(_))));
        assert!(eval_kernel(&k, array![f64::INFINITY].view(), array![1.0].view()).is_err());
    }

    #[test]
    fn gram_single_point() {
        let a = array![[0.3, 0.7]];
        assert_eq!(gram(&gauss(2.0), a.view(), a.view()).unwrap(), array![[1.0]]);
    }

    #[test]
    fn gram_linear_1d() {
        let a = array![[0.0], [1.0]];
        assert_eq!(gram(&KernelSpec::Linear, a.view(), a.view()).unwrap(), array![[0.0, 0.0], [0.0, 1.0]]);
    }

    #[test]
    fn gram_matches_elementwise_loop() {
        let a = array![[0.1, -0.4, 2.0], [1.5, 0.2, -0.3], [-0.7, 0.9, 0.05]];
        let k = gauss(1.0);
        let g = gram(&k, a.view(), a.view()).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let e = eval_kernel(&k, a.row(i), a.row(j)).unwrap();
                assert_eq!(g[[i, j]], e);
            }
        }
    }

    #[test]
    fn tiled_assembly_is_bitwise_elementwise() {
        let mut rng = crate::rng::SeededRng::new(5);
        for (p, q, d) in [(13, 9, 11), (9, 40, 1000), (1, 3, 4), (20, 1, 7)] {
            let a = Array2::from_shape_fn((p, d), |_| rng.unit() - 0.5);
            let b = Array2::from_shape_fn((q, d), |_| rng.unit() - 0.5);
            for k in [gauss(0.3), KernelSpec::Linear, KernelSpec::polynomial(3, 0.5).unwrap()] {
                let g = gram_with(&k, a.view(), b.view(), Assembly::Serial).unwrap();
                let gp = gram_with(&k, a.view(), b.view(), Assembly::Parallel).unwrap();
                let gt = gram(&k, b.view(), a.view()).unwrap();
                let s = gram_sym(&k, b.view()).unwrap();
                for i in 0..p {
                    for j in 0..q {
                        let e = eval_kernel(&k, a.row(i), b.row(j)).unwrap();
                        assert_eq!(g[[i, j]].to_bits(), e.to_bits());
                        assert_eq!(gp[[i, j]].to_bits(), e.to_bits());
                        assert_eq!(gt[[j, i]].to_bits(), e.to_bits());
                    }
                }
                for i in 0..q {
                    for j in 0..q {
                        let e = eval_kernel(&k, b.row(i), b.row(j)).unwrap();
                        assert_eq!(s[[i, j]].to_bits(), e.to_bits());
                    }
                }
            }
        }
    }

    #[test]
    fn gram_dimension_mismatch() {
        let a = Array2::<f64>::zeros((2, 3));
        let b = Array2::<f64>::zeros((2, 2));
        assert!(gram(&KernelSpec::Linear, a.view(), b.view()).is_err());
    }

    #[test]
    fn non_contiguous_views_work() {
        let a = array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]];
        let t = a.t();
        let g = gram(&KernelSpec::Linear, t, t).unwrap();
        assert_eq!(g, array![[17.0, 22.0, 27.0], [22.0, 29.0, 36.0], [27.0, 36.0, 45.0]]);
    }

    #[test]
    fn dataset_rejects_non_finite() {
        assert!(Dataset::new(array![[1.0, f64::NAN]]).is_err());
        assert!(Dataset::new(Array2::<f64>::zeros((3, 0))).is_err());
        assert!(Dataset::with_labels(array![[1.0]], vec![1, 2]).is_err());
        assert_eq!(Dataset::new(Array2::<f64>::zeros((0, 4))).unwrap().n(), 0);
    }

    #[test]
    fn f32_instantiation() {
        let k = KernelSpec::<f32>::gaussian(0.5).unwrap();
        let v = k.eval(array![0.0f32, 0.0].view(), array![1.0f32, 1.0].view()).unwrap();
        assert!((v - (-1.0f32).exp()).abs() < 1e-6);
    }
}
