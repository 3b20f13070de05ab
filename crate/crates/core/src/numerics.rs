//! Dense symmetric eigensolver, Cholesky factorization and the regularized
//! matrix functions built on them.
//!
//! The eigensolver reduces the input to tridiagonal form with Householder
//! reflections and then runs implicit QL with Wilkinson-style shifts. When only
//! a few leading eigenvectors are needed they are recovered by inverse
//! iteration on the tridiagonal matrix and mapped back through the stored
//! reflectors, which avoids the O(p^3) rotation accumulation.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView2, Axis};

use crate::error::{numeric, usage, Result};
use crate::scalar::Scalar;

/// Maximum QL sweeps spent on a single eigenvalue before giving up.
const MAX_QL_ITERATIONS: usize = 60;

/// Spectrum and eigenvectors of a symmetric matrix.
///
/// `values` are sorted in descending order; column `i` of `vectors` is the
/// unit eigenvector of `values[i]`, with its first entry of magnitude above
/// `1e-12` made positive.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenDecomposition<T> {
    pub values: Array1<T>,
    pub vectors: Array2<T>,
}

/// Full spectrum with only the leading `k` eigenvectors.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialEigen<T> {
    /// All eigenvalues, descending.
    pub values: Array1<T>,
    /// `p x k`; column `i` belongs to `values[i]`.
    pub vectors: Array2<T>,
}

/// Result of [`inv_sqrt_psd`].
#[derive(Debug, Clone, PartialEq)]
pub struct InvSqrt<T> {
    pub matrix: Array2<T>,
    pub effective_rank: usize,
    pub floor: T,
}

fn check_square<T: Scalar>(a: ArrayView2<'_, T>) -> Result<usize> {
    if a.nrows() != a.ncols() {
        return usage(format!("expected a square matrix, got {}x{}", a.nrows(), a.ncols()));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return usage("matrix has non-finite entries");
    }
    Ok(a.nrows())
}

/// `(A + A^T) / 2` in standard layout.
pub fn symmetrize<T: Scalar>(a: ArrayView2<'_, T>) -> Array2<T> {
    let n = a.nrows();
    let half = T::c(0.5);
    let mut out = Array2::<T>::zeros((n, n));
    for i in 0..n {
        out[[i, i]] = a[[i, i]];
        for j in 0..i {
            let v = (a[[i, j]] + a[[j, i]]) * half;
            out[[i, j]] = v;
            out[[j, i]] = v;
        }
    }
    out
}

pub fn trace<T: Scalar>(a: ArrayView2<'_, T>) -> T {
    a.diag().iter().copied().sum()
}

/// Default eigenvalue floor: `1e-12 * trace(A)`.
pub fn default_floor<T: Scalar>(a: ArrayView2<'_, T>) -> T {
    (T::c(1e-12) * trace(a)).max(T::zero())
}

/// Householder reduction `A = Q T Q^T`.
///
/// `reflectors` holds the Householder vector of step `k` in column `k` below
/// row `k`; `betas[k]` is its scaling (zero when the step was skipped).
struct Tridiagonal<T> {
    diag: Vec<T>,
    /// `off[i]` couples rows `i` and `i + 1`; `off[n - 1] == 0`.
    off: Vec<T>,
    reflectors: Array2<T>,
    betas: Vec<T>,
}

#[inline]
fn dot<T: Scalar>(x: &[T], y: &[T]) -> T {
    let mut acc = [T::zero(); 4];
    let xc = x.chunks_exact(4);
    let yc = y.chunks_exact(4);
    let (xr, yr) = (xc.remainder(), yc.remainder());
    for (a, b) in xc.zip(yc) {
        acc[0] += a[0] * b[0];
        acc[1] += a[1] * b[1];
        acc[2] += a[2] * b[2];
        acc[3] += a[3] * b[3];
    }
    let mut tail = T::zero();
    for (a, b) in xr.iter().zip(yr) {
        tail += *a * *b;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * *xi;
    }
}

/// Householder vectors are accumulated in panels of this many columns.
const TRIDIAG_PANEL: usize = 32;
/// Row-block height for the GEMM-based trailing updates.
const GEMM_BLOCK: usize = 96;

fn tridiagonalize<T: Scalar>(mut a: Array2<T>) -> Tridiagonal<T> {
    let n = a.nrows();
    let mut diag = vec![T::zero(); n];
    let mut off = vec![T::zero(); n];
    let mut betas = vec![T::zero(); n];
    if n == 0 {
        return Tridiagonal { diag, off, reflectors: a, betas };
    }
    let steps = n.saturating_sub(2);
    let mut v = vec![T::zero(); n];
    let mut p = vec![T::zero(); n];
    let mut k0 = 0;
    while k0 < steps {
        let nb = TRIDIAG_PANEL.min(steps - k0);
        // Panel reflectors V and updates W: the trailing matrix is
        // A - V W^T - W V^T once the panel is done.
        let mut vp = Array2::<T>::zeros((n, nb));
        let mut wp = Array2::<T>::zeros((n, nb));
        {
            let data = a.as_slice_mut().expect("standard layout");
            let vs = vp.as_slice_mut().expect("standard layout");
            let ws = wp.as_slice_mut().expect("standard layout");
            let mut y1 = vec![T::zero(); nb];
            let mut y2 = vec![T::zero(); nb];
            for c in 0..nb {
                let k = k0 + c;
                let st = k + 1;
                if c > 0 {
                    for i in k..n {
                        let corr = dot(&vs[i * nb..i * nb + c], &ws[k * nb..k * nb + c])
                            + dot(&ws[i * nb..i * nb + c], &vs[k * nb..k * nb + c]);
                        data[i * n + k] -= corr;
                    }
                }
                diag[k] = data[k * n + k];
                for (i, vi) in v[st..].iter_mut().enumerate() {
                    *vi = data[(st + i) * n + k];
                }
                let scale: T = v[st..].iter().fold(T::zero(), |m, x| m.max(x.abs()));
                if scale == T::zero() {
                    off[k] = T::zero();
                    continue;
                }
                let mut sigma2 = T::zero();
                for vi in v[st..].iter_mut() {
                    *vi /= scale;
                    sigma2 += *vi * *vi;
                }
                let norm = sigma2.sqrt();
                let x0 = v[st];
                let alpha = if x0 > T::zero() { -norm } else { norm };
                v[st] = x0 - alpha;
                let vtv = sigma2 - x0 * x0 + v[st] * v[st];
                off[k] = alpha * scale;
                if vtv == T::zero() {
                    continue;
                }
                let beta = T::c(2.0) / vtv;
                betas[k] = beta;
                for i in st..n {
                    data[i * n + k] = v[i];
                    vs[i * nb + c] = v[i];
                }

                // p = A22 v on the panel-start matrix, lower triangle only.
                for pi in p[st..].iter_mut() {
                    *pi = T::zero();
                }
                for i in st..n {
                    let row = &data[i * n + st..i * n + i];
                    let vi = v[i];
                    let acc = dot(row, &v[st..i]);
                    axpy(vi, row, &mut p[st..i]);
                    p[i] += acc + data[i * n + i] * vi;
                }
                if c > 0 {
                    y1[..c].iter_mut().for_each(|x| *x = T::zero());
                    y2[..c].iter_mut().for_each(|x| *x = T::zero());
                    for i in st..n {
                        axpy(v[i], &ws[i * nb..i * nb + c], &mut y1[..c]);
                        axpy(v[i], &vs[i * nb..i * nb + c], &mut y2[..c]);
                    }
                    for i in st..n {
                        p[i] -= dot(&vs[i * nb..i * nb + c], &y1[..c]) + dot(&ws[i * nb..i * nb + c], &y2[..c]);
                    }
                }
                for pi in p[st..].iter_mut() {
                    *pi *= beta;
                }
                let kk = T::c(0.5) * beta * dot(&p[st..], &v[st..]);
                for i in st..n {
                    ws[i * nb + c] = p[i] - kk * v[i];
                }
            }
        }
        let t0 = k0 + nb;
        let mut ib = t0;
        while ib < n {
            let ie = (ib + GEMM_BLOCK).min(n);
            let mut blk = a.slice_mut(s![ib..ie, t0..ie]);
            let m1 = -T::one();
            general_mat_mul(m1, &vp.slice(s![ib..ie, ..]), &wp.slice(s![t0..ie, ..]).t(), T::one(), &mut blk);
            general_mat_mul(m1, &wp.slice(s![ib..ie, ..]), &vp.slice(s![t0..ie, ..]).t(), T::one(), &mut blk);
            ib = ie;
        }
        k0 = t0;
    }
    let data = a.as_slice().expect("standard layout");
    if n >= 2 {
        diag[n - 2] = data[(n - 2) * n + n - 2];
        off[n - 2] = data[(n - 1) * n + n - 2];
    }
    diag[n - 1] = data[(n - 1) * n + n - 1];
    off[n - 1] = T::zero();
    Tridiagonal { diag, off, reflectors: a, betas }
}

impl<T: Scalar> Tridiagonal<T> {
    /// Explicit `Q^T` (row `r` is column `r` of `Q`).
    fn q_transposed(&self) -> Array2<T> {
        let n = self.diag.len();
        let mut q = Array2::<T>::eye(n);
        let r = self.reflectors.as_slice().expect("standard layout");
        let qs = q.as_slice_mut().expect("standard layout");
        let mut w = vec![T::zero(); n];
        // Q = H_0 H_1 ... ; apply reflectors right-to-left to the identity.
        for k in (0..n.saturating_sub(2)).rev() {
            let beta = self.betas[k];
            if beta == T::zero() {
                continue;
            }
            let st = k + 1;
            for wi in w[st..].iter_mut() {
                *wi = T::zero();
            }
            for i in st..n {
                let vi = r[i * n + k];
                axpy(vi, &qs[i * n + st..i * n + n], &mut w[st..]);
            }
            for i in st..n {
                let f = -beta * r[i * n + k];
                axpy(f, &w[st..], &mut qs[i * n + st..i * n + n]);
            }
        }
        q.reversed_axes().as_standard_layout().into_owned()
    }

    /// `Q Z` in place for an `n x k` block `Z`.
    fn back_transform(&self, z: &mut Array2<T>) {
        let n = self.diag.len();
        let k = z.ncols();
        let r = self.reflectors.as_slice().expect("standard layout");
        let zs = z.as_slice_mut().expect("standard layout");
        let mut acc = vec![T::zero(); k];
        for step in (0..n.saturating_sub(2)).rev() {
            let beta = self.betas[step];
            if beta == T::zero() {
                continue;
            }
            acc.iter_mut().for_each(|a| *a = T::zero());
            for i in step + 1..n {
                axpy(r[i * n + step], &zs[i * k..(i + 1) * k], &mut acc);
            }
            acc.iter_mut().for_each(|a| *a *= beta);
            for i in step + 1..n {
                axpy(-r[i * n + step], &acc, &mut zs[i * k..(i + 1) * k]);
            }
        }
    }
}

/// Implicit QL on a tridiagonal matrix. `rows`, when given, holds eigenvector
/// estimates as rows and receives every rotation.
fn tridiagonal_ql<T: Scalar>(d: &mut [T], e: &mut [T], mut rows: Option<&mut Array2<T>>) -> Result<()> {
    let n = d.len();
    if n == 0 {
        return Ok(());
    }
    let eps = T::epsilon();
    let mut f = T::zero();
    let mut tst1 = T::zero();
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n - 1 && e[m].abs() > eps * tst1 {
            m += 1;
        }
        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                if iter > MAX_QL_ITERATIONS {
                    return numeric(format!(
                        "QL iteration did not converge: eigenvalue {l} of {n} still coupled after {MAX_QL_ITERATIONS} sweeps (|e| = {:e})",
                        e[l].abs()
                    ));
                }
                let g = d[l];
                let mut p = (d[l + 1] - g) / (T::c(2.0) * e[l]);
                let mut r = p.hypot(T::one());
                if p < T::zero() {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let h = g - d[l];
                for di in d.iter_mut().skip(l + 2) {
                    *di -= h;
                }
                f += h;

                p = d[m];
                let mut c = T::one();
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = T::zero();
                let mut s2 = T::zero();
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    let g = c * e[i];
                    let h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    if let Some(w) = rows.as_deref_mut() {
                        let ws = w.as_slice_mut().expect("standard layout");
                        let (lo, hi) = ws.split_at_mut((i + 1) * n);
                        let ri = &mut lo[i * n..];
                        let rj = &mut hi[..n];
                        for (a, b) in ri.iter_mut().zip(rj.iter_mut()) {
                            let h = *b;
                            *b = s * *a + c * h;
                            *a = c * *a - s * h;
                        }
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = T::zero();
    }
    Ok(())
}

/// Descending order, stable on ties.
fn descending_order<T: Scalar>(values: &[T]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap_or(std::cmp::Ordering::Equal));
    idx
}

fn fix_sign<T: Scalar>(v: &mut [T]) {
    let tol = T::c(1e-12);
    if let Some(first) = v.iter().find(|x| x.abs() > tol) {
        if *first < T::zero() {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

/// Full eigendecomposition of a symmetric matrix.
///
/// The input is symmetrized as `(A + A^T) / 2` before solving.
pub fn sym_eig<T: Scalar>(a: ArrayView2<'_, T>) -> Result<EigenDecomposition<T>> {
    let n = check_square(a)?;
    let tri = tridiagonalize(symmetrize(a));
    let mut rows = tri.q_transposed();
    let mut d = tri.diag.clone();
    let mut e = tri.off.clone();
    tridiagonal_ql(&mut d, &mut e, Some(&mut rows))?;
    let order = descending_order(&d);
    let mut values = Array1::<T>::zeros(n);
    let mut vectors = Array2::<T>::zeros((n, n));
    let mut buf = vec![T::zero(); n];
    for (col, &src) in order.iter().enumerate() {
        values[col] = d[src];
        buf.copy_from_slice(rows.row(src).as_slice().expect("standard layout"));
        fix_sign(&mut buf);
        vectors.column_mut(col).assign(&Array1::from(buf.clone()));
    }
    Ok(EigenDecomposition { values, vectors })
}

/// All eigenvalues of a symmetric matrix, descending.
pub fn sym_eigvals<T: Scalar>(a: ArrayView2<'_, T>) -> Result<Array1<T>> {
    check_square(a)?;
    let tri = tridiagonalize(symmetrize(a));
    let mut d = tri.diag;
    let mut e = tri.off;
    tridiagonal_ql(&mut d, &mut e, None)?;
    let order = descending_order(&d);
    Ok(order.iter().map(|&i| d[i]).collect())
}

/// All eigenvalues and the `k` leading eigenvectors.
pub fn sym_eig_top<T: Scalar>(a: ArrayView2<'_, T>, k: usize) -> Result<PartialEigen<T>> {
    let n = check_square(a)?;
    if k > n {
        return usage(format!("requested {k} eigenvectors of a {n}x{n} matrix"));
    }
    // Inverse iteration pays off only when few vectors are wanted.
    if 4 * k >= n || n <= 32 {
        let full = sym_eig(a)?;
        return Ok(PartialEigen { values: full.values, vectors: full.vectors.slice(s![.., ..k]).to_owned() });
    }
    let tri = tridiagonalize(symmetrize(a));
    let mut d = tri.diag.clone();
    let mut e = tri.off.clone();
    tridiagonal_ql(&mut d, &mut e, None)?;
    let order = descending_order(&d);
    let values: Array1<T> = order.iter().map(|&i| d[i]).collect();
    let wanted: Vec<T> = values.iter().take(k).copied().collect();
    let zs = tridiagonal_inverse_iteration(&tri.diag, &tri.off, &wanted);
    let mut vectors = Array2::<T>::zeros((n, k));
    for (col, z) in zs.into_iter().enumerate() {
        vectors.column_mut(col).assign(&Array1::from(z));
    }
    tri.back_transform(&mut vectors);
    for mut col in vectors.columns_mut() {
        let mut z = col.to_vec();
        let norm = dot(&z, &z).sqrt();
        z.iter_mut().for_each(|x| *x /= norm);
        fix_sign(&mut z);
        col.assign(&Array1::from(z));
    }
    Ok(PartialEigen { values, vectors })
}

/// Eigenvectors of the tridiagonal matrix `(d, e)` for the given eigenvalues
/// (descending), by shifted inverse iteration with reorthogonalization inside
/// clusters.
fn tridiagonal_inverse_iteration<T: Scalar>(d: &[T], e: &[T], lambdas: &[T]) -> Vec<Vec<T>> {
    let n = d.len();
    let eps = T::epsilon();
    let norm = (0..n).fold(T::zero(), |m, i| {
        let left = if i > 0 { e[i - 1].abs() } else { T::zero() };
        m.max(d[i].abs() + e[i].abs() + left)
    });
    let norm = if norm == T::zero() { T::one() } else { norm };
    let cluster_tol = T::c(1e-3) * norm;
    let mut out: Vec<Vec<T>> = Vec::with_capacity(lambdas.len());
    let mut cluster_start = 0;
    let mut prev_shift = T::zero();
    for (j, &lam) in lambdas.iter().enumerate() {
        let mut shift = lam;
        if j > 0 {
            if (lambdas[j - 1] - lam).abs() > cluster_tol {
                cluster_start = j;
            }
            // Separate coincident shifts so factorizations differ.
            let sep = T::c(10.0) * eps * norm;
            if prev_shift - shift < sep {
                shift = prev_shift - sep;
            }
        }
        prev_shift = shift;
        let lu = TridiagLu::factor(d, e, shift, eps * norm);
        // Deterministic, non-degenerate start vector.
        let mut x: Vec<T> = (0..n).map(|i| T::one() + T::c(((i * 7919 + j * 104729) % 1013) as f64 / 1013.0)).collect();
        for _ in 0..4 {
            lu.solve(&mut x);
            for prev in &out[cluster_start..j] {
                let c = dot(&x, prev);
                axpy(-c, prev, &mut x);
            }
            let nx = dot(&x, &x).sqrt();
            if !(nx > T::zero()) || !nx.is_finite() {
                x = (0..n).map(|i| if i == j % n { T::one() } else { T::zero() }).collect();
                continue;
            }
            x.iter_mut().for_each(|v| *v /= nx);
        }
        out.push(x);
    }
    out
}

/// LU factorization with partial pivoting of `T - shift I` for tridiagonal `T`.
struct TridiagLu<T> {
    // Row i of U has entries u0[i], u1[i], u2[i] at columns i, i+1, i+2.
    u0: Vec<T>,
    u1: Vec<T>,
    u2: Vec<T>,
    mult: Vec<T>,
    swapped: Vec<bool>,
}

impl<T: Scalar> TridiagLu<T> {
    fn factor(d: &[T], e: &[T], shift: T, tiny: T) -> Self {
        let n = d.len();
        let mut u0 = vec![T::zero(); n];
        let mut u1 = vec![T::zero(); n];
        let mut u2 = vec![T::zero(); n];
        let mut mult = vec![T::zero(); n];
        let mut swapped = vec![false; n];
        let tiny = if tiny > T::zero() { tiny } else { T::min_positive_value() };
        // Current row being eliminated: (a, b, c) at columns i, i+1, i+2.
        let mut a = d[0] - shift;
        let mut b = if n > 1 { e[0] } else { T::zero() };
        let mut c = T::zero();
        for i in 0..n {
            if i + 1 == n {
                u0[i] = if a.abs() < tiny { tiny } else { a };
                u1[i] = T::zero();
                u2[i] = T::zero();
                break;
            }
            // Next row: (sub, diag, sup) at columns i, i+1, i+2.
            let sub = e[i];
            let nd = d[i + 1] - shift;
            let sup = if i + 2 < n { e[i + 1] } else { T::zero() };
            if sub.abs() > a.abs() {
                swapped[i] = true;
                u0[i] = sub;
                u1[i] = nd;
                u2[i] = sup;
                let m = a / sub;
                mult[i] = m;
                a = b - m * nd;
                b = c - m * sup;
            } else {
                let piv = if a.abs() < tiny { tiny } else { a };
                u0[i] = piv;
                u1[i] = b;
                u2[i] = c;
                let m = sub / piv;
                mult[i] = m;
                a = nd - m * b;
                b = sup - m * c;
            }
            c = T::zero();
        }
        TridiagLu { u0, u1, u2, mult, swapped }
    }

    fn solve(&self, x: &mut [T]) {
        let n = x.len();
        for i in 0..n.saturating_sub(1) {
            if self.swapped[i] {
                x.swap(i, i + 1);
            }
            let m = self.mult[i];
            x[i + 1] -= m * x[i];
        }
        for i in (0..n).rev() {
            let mut v = x[i];
            if i + 1 < n {
                v -= self.u1[i] * x[i + 1];
            }
            if i + 2 < n {
                v -= self.u2[i] * x[i + 2];
            }
            x[i] = v / self.u0[i];
        }
        // Rescale to keep iterates finite.
        let big = x.iter().fold(T::zero(), |m, v| m.max(v.abs()));
        if big > T::zero() && big.is_finite() {
            x.iter_mut().for_each(|v| *v /= big);
        }
    }
}

/// Spectral pseudo-inverse square root: `V diag(f(lambda)) V^T` with
/// `f(lambda) = lambda^{-1/2}` above `floor` and zero otherwise.
pub fn inv_sqrt_psd<T: Scalar>(a: ArrayView2<'_, T>, floor: T) -> Result<InvSqrt<T>> {
    if floor < T::zero() || !floor.is_finite() {
        return usage(format!("floor must be finite and nonnegative, got {floor}"));
    }
    let eig = sym_eig(a)?;
    let keep: Vec<usize> = (0..eig.values.len()).filter(|&i| eig.values[i] > floor).collect();
    if keep.is_empty() {
        return numeric("matrix numerically zero: no eigenvalue above the floor");
    }
    let n = eig.values.len();
    let mut scaled = Array2::<T>::zeros((n, keep.len()));
    for (c, &i) in keep.iter().enumerate() {
        let f = eig.values[i].powf(T::c(-0.25));
        scaled.column_mut(c).assign(&eig.vectors.column(i).mapv(|v| v * f));
    }
    let prod = scaled.dot(&scaled.t());
    Ok(InvSqrt { matrix: symmetrize(prod.view()), effective_rank: keep.len(), floor })
}

/// Lower Cholesky factor of a symmetric positive-definite matrix.
pub fn cholesky<T: Scalar>(a: ArrayView2<'_, T>) -> Result<Array2<T>> {
    let n = check_square(a)?;
    let mut l = symmetrize(a);
    let mut jb = 0;
    while jb < n {
        let je = (jb + GEMM_BLOCK).min(n);
        {
            let ls = l.as_slice_mut().expect("standard layout");
            for j in jb..je {
                let (done, rest) = ls.split_at_mut(j * n);
                let rowj = &mut rest[..n];
                for k in jb..j {
                    let rowk = &done[k * n..k * n + n];
                    let s = dot(&rowj[jb..k], &rowk[jb..k]);
                    rowj[k] = (rowj[k] - s) / rowk[k];
                }
                let djj = rowj[j] - dot(&rowj[jb..j], &rowj[jb..j]);
                if !(djj > T::zero()) {
                    return numeric(format!("cholesky breakdown at pivot {j} (value {djj:e})"));
                }
                rowj[j] = djj.sqrt();
            }
            for i in je..n {
                let (head, rest) = ls.split_at_mut(i * n);
                let rowi = &mut rest[..n];
                for k in jb..je {
                    let rowk = &head[k * n..k * n + n];
                    let s = dot(&rowi[jb..k], &rowk[jb..k]);
                    rowi[k] = (rowi[k] - s) / rowk[k];
                }
            }
        }
        if je < n {
            let panel = l.slice(s![je.., jb..je]).to_owned();
            let mut ib = je;
            while ib < n {
                let ie = (ib + GEMM_BLOCK).min(n);
                let lhs = panel.slice(s![ib - je..ie - je, ..]);
                let rhs = panel.slice(s![..ie - je, ..]);
                general_mat_mul(-T::one(), &lhs, &rhs.t(), T::one(), &mut l.slice_mut(s![ib..ie, je..ie]));
                ib = ie;
            }
        }
        jb = je;
    }
    for i in 0..n {
        for j in i + 1..n {
            l[[i, j]] = T::zero();
        }
    }
    Ok(l)
}

/// Forward substitution inside the diagonal block `ib..ie`, on columns
/// `..cols` of the right-hand side.
fn lower_block_solve<T: Scalar>(l: ArrayView2<'_, T>, b: &mut Array2<T>, ib: usize, ie: usize, cols: usize) {
    let q = b.ncols();
    let bs = b.as_slice_mut().expect("standard layout");
    for i in ib..ie {
        let (done, rest) = bs.split_at_mut(i * q);
        let rowi = &mut rest[..cols];
        for k in ib..i {
            let lik = l[[i, k]];
            if lik != T::zero() {
                axpy(-lik, &done[k * q..k * q + cols], rowi);
            }
        }
        let inv = T::one() / l[[i, i]];
        rowi.iter_mut().for_each(|v| *v *= inv);
    }
}

/// Solves `L Y = B` in place (`L` lower triangular).
pub fn solve_lower_in_place<T: Scalar>(l: ArrayView2<'_, T>, b: &mut Array2<T>) {
    let n = l.nrows();
    let q = b.ncols();
    if !b.is_standard_layout() {
        *b = b.as_standard_layout().into_owned();
    }
    let mut ib = 0;
    while ib < n {
        let ie = (ib + GEMM_BLOCK).min(n);
        if ib > 0 {
            let (done, mut rest) = b.view_mut().split_at(Axis(0), ib);
            general_mat_mul(-T::one(), &l.slice(s![ib..ie, ..ib]), &done, T::one(), &mut rest.slice_mut(s![..ie - ib, ..]));
        }
        lower_block_solve(l, b, ib, ie, q);
        ib = ie;
    }
}

/// `L^{-1}` for lower triangular `L`, skipping the known zero blocks.
pub fn lower_inverse<T: Scalar>(l: ArrayView2<'_, T>) -> Array2<T> {
    let n = l.nrows();
    let mut x = Array2::<T>::eye(n);
    let mut ib = 0;
    while ib < n {
        let ie = (ib + GEMM_BLOCK).min(n);
        if ib > 0 {
            let (done, mut rest) = x.view_mut().split_at(Axis(0), ib);
            general_mat_mul(
                -T::one(),
                &l.slice(s![ib..ie, ..ib]),
                &done.slice(s![.., ..ib]),
                T::one(),
                &mut rest.slice_mut(s![..ie - ib, ..ib]),
            );
        }
        lower_block_solve(l, &mut x, ib, ie, ie);
        ib = ie;
    }
    x
}

/// Solves `L^T X = Y` in place.
pub fn solve_upper_t_in_place<T: Scalar>(l: ArrayView2<'_, T>, b: &mut Array2<T>) {
    let n = l.nrows();
    let q = b.ncols();
    if !b.is_standard_layout() {
        *b = b.as_standard_layout().into_owned();
    }
    let mut ie = n;
    while ie > 0 {
        let ib = ie.saturating_sub(GEMM_BLOCK);
        if ie < n {
            let (mut head, done) = b.view_mut().split_at(Axis(0), ie);
            general_mat_mul(
                -T::one(),
                &l.slice(s![ie.., ib..ie]).t(),
                &done,
                T::one(),
                &mut head.slice_mut(s![ib.., ..]),
            );
        }
        let bs = b.as_slice_mut().expect("standard layout");
        for i in (ib..ie).rev() {
            let (head, tail) = bs.split_at_mut((i + 1) * q);
            let rowi = &mut head[i * q..];
            for k in i + 1..ie {
                let lki = l[[k, i]];
                if lki != T::zero() {
                    axpy(-lki, &tail[(k - i - 1) * q..(k - i) * q], rowi);
                }
            }
            let inv = T::one() / l[[i, i]];
            rowi.iter_mut().for_each(|v| *v *= inv);
        }
        ie = ib;
    }
}

/// `(A + shift I)^{-1} B` through a Cholesky factorization.
pub fn psd_solve<T: Scalar>(a: ArrayView2<'_, T>, shift: T, b: ArrayView2<'_, T>) -> Result<Array2<T>> {
    let n = check_square(a)?;
    if !(shift > T::zero()) || !shift.is_finite() {
        return usage(format!("shift must be positive and finite, got {shift}"));
    }
    if b.nrows() != n {
        return usage(format!("right-hand side has {} rows, expected {n}", b.nrows()));
    }
    let mut shifted = symmetrize(a);
    for i in 0..n {
        shifted[[i, i]] += shift;
    }
    let l = cholesky(shifted.view())?;
    let mut x = b.as_standard_layout().into_owned();
    solve_lower_in_place(l.view(), &mut x);
    solve_upper_t_in_place(l.view(), &mut x);
    Ok(x)
}

/// Diagonal of `(A + shift I)^{-1}` via the inverse Cholesky factor.
pub fn psd_inverse_diag<T: Scalar>(a: ArrayView2<'_, T>, shift: T) -> Result<Array1<T>> {
    let n = check_square(a)?;
    if !(shift > T::zero()) || !shift.is_finite() {
        return usage(format!("shift must be positive and finite, got {shift}"));
    }
    let mut shifted = symmetrize(a);
    for i in 0..n {
        shifted[[i, i]] += shift;
    }
    let l = cholesky(shifted.view())?;
    let linv = lower_inverse(l.view());
    // (A^{-1})_ii = sum_k (L^{-1})_{ki}^2
    let mut out = Array1::<T>::zeros(n);
    for row in linv.rows() {
        for (o, v) in out.iter_mut().zip(row.iter()) {
            *o += *v * *v;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use rand_chacha::ChaCha8Rng;
    use rand_core::{RngCore, SeedableRng};

    fn random_sym(n: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = Array2::<f64>::zeros((n, n));
        for i in 0..n {
            for j in 0..=i {
                let v = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64 - 0.5;
                a[[i, j]] = v;
                a[[j, i]] = v;
            }
        }
        a
    }

    fn random_psd(n: usize, seed: u64) -> Array2<f64> {
        let b = random_sym(n, seed);
        b.dot(&b.t())
    }

    fn max_abs(a: &Array2<f64>) -> f64 {
        a.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    fn check_decomposition(a: &Array2<f64>, eig: &EigenDecomposition<f64>) {
        let n = a.nrows();
        let vtv = eig.vectors.t().dot(&eig.vectors);
        assert!(max_abs(&(vtv - Array2::<f64>::eye(n))) < 1e-10);
        let opnorm = eig.values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        for i in 0..n {
            let r = a.dot(&eig.vectors.column(i)) - eig.vectors.column(i).mapv(|v| v * eig.values[i]);
            assert!(r.iter().fold(0.0f64, |m, v| m.max(v.abs())) < 1e-8 * opnorm);
        }
        for w in eig.values.windows(2) {
            assert!(w[0] >= w[1]);
        }
        let tr = trace(a.view());
        assert!((eig.values.sum() - tr).abs() <= 1e-10 * tr.abs().max(1.0));
    }

    #[test]
    fn identity_spectrum() {
        let eig = sym_eig(Array2::<f64>::eye(3).view()).unwrap();
        assert_eq!(eig.values.to_vec(), vec![1.0, 1.0, 1.0]);
        check_decomposition(&Array2::eye(3), &eig);
    }

    #[test]
    fn diagonal_permutes_axes() {
        let a = array![[3.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 2.0]];
        let eig = sym_eig(a.view()).unwrap();
        assert_eq!(eig.values.to_vec(), vec![3.0, 2.0, 1.0]);
        let expect = array![[1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, 1.0, 0.0]];
        assert!(max_abs(&(&eig.vectors - &expect)) < 1e-14);
    }

    #[test]
    fn two_by_two_by_hand() {
        // det([[2-x, 1], [1, 2-x]]) = (x - 3)(x - 1)
        let eig = sym_eig(array![[2.0f64, 1.0], [1.0, 2.0]].view()).unwrap();
        assert!((eig.values[0] - 3.0).abs() < 1e-14);
        assert!((eig.values[1] - 1.0).abs() < 1e-14);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((eig.vectors[[0, 0]] - h).abs() < 1e-14 && (eig.vectors[[1, 0]] - h).abs() < 1e-14);
        assert!((eig.vectors[[0, 1]] - h).abs() < 1e-14 && (eig.vectors[[1, 1]] + h).abs() < 1e-14);
    }

    #[test]
    fn random_matrices_satisfy_contract() {
        for (n, seed) in [(1, 1), (2, 2), (5, 3), (17, 4), (64, 5), (129, 6)] {
            let a = random_sym(n, seed);
            let eig = sym_eig(a.view()).unwrap();
            check_decomposition(&a, &eig);
            let vals = sym_eigvals(a.view()).unwrap();
            assert!(vals.iter().zip(eig.values.iter()).all(|(x, y)| (x - y).abs() < 1e-12));
        }
    }

    #[test]
    fn sign_convention() {
        let a = random_sym(20, 9);
        let eig = sym_eig(a.view()).unwrap();
        for c in eig.vectors.columns() {
            let first = c.iter().find(|v| v.abs() > 1e-12).unwrap();
            assert!(*first > 0.0);
        }
    }

    #[test]
    fn reproducible_bytes() {
        let a = random_sym(40, 11);
        let e1 = sym_eig(a.view()).unwrap();
        let e2 = sym_eig(a.view()).unwrap();
        assert_eq!(e1, e2);
    }

    #[test]
    fn degenerate_and_zero_matrices() {
        let z = Array2::<f64>::zeros((4, 4));
        let eig = sym_eig(z.view()).unwrap();
        assert!(eig.values.iter().all(|v| *v == 0.0));
        check_decomposition(&z, &eig);
        // rank one
        let u = array![1.0f64, 2.0, 3.0, 4.0];
        let a = Array2::from_shape_fn((4, 4), |(i, j)| u[i] * u[j]);
        let eig = sym_eig(a.view()).unwrap();
        assert!((eig.values[0] - 30.0).abs() < 1e-12);
        check_decomposition(&a, &eig);
    }

    #[test]
    fn rejects_non_square_and_nan() {
        assert!(sym_eig(Array2::<f64>::zeros((2, 3)).view()).is_err());
        assert!(matches!(sym_eig(array![[f64::NAN]].view()), Err(crate::Error::Usage(_))));
    }

    #[test]
    fn partial_matches_full() {
        for (n, k, seed) in [(100, 5, 21), (150, 10, 22), (40, 3, 23)] {
            let a = random_psd(n, seed);
            let full = sym_eig(a.view()).unwrap();
            let part = sym_eig_top(a.view(), k).unwrap();
            let scale = full.values[0];
            for i in 0..n {
                assert!((full.values[i] - part.values[i]).abs() < 1e-12 * scale);
            }
            for i in 0..k {
                let d = &full.vectors.column(i) - &part.vectors.column(i);
                assert!(d.iter().fold(0.0f64, |m, v| m.max(v.abs())) < 1e-8, "n={n} col={i}");
            }
            let vtv = part.vectors.t().dot(&part.vectors);
            assert!(max_abs(&(vtv - Array2::<f64>::eye(k))) < 1e-10);
        }
    }

    #[test]
    fn partial_handles_repeated_eigenvalues() {
        // Block diagonal with a doubly repeated leading eigenvalue.
        let n = 80;
        let mut a = Array2::<f64>::zeros((n, n));
        a[[0, 0]] = 5.0;
        a[[1, 1]] = 5.0;
        for i in 2..n {
            a[[i, i]] = 1.0 / i as f64;
        }
        let q = sym_eig(random_sym(n, 3).view()).unwrap().vectors;
        let rotated = q.dot(&a).dot(&q.t());
        let part = sym_eig_top(rotated.view(), 4).unwrap();
        let vtv = part.vectors.t().dot(&part.vectors);
        assert!(max_abs(&(vtv - Array2::<f64>::eye(4))) < 1e-10);
        for i in 0..4 {
            let v = part.vectors.column(i);
            let r = rotated.dot(&v) - v.mapv(|x| x * part.values[i]);
            assert!(r.iter().fold(0.0f64, |m, x| m.max(x.abs())) < 1e-8 * 5.0);
        }
    }

    #[test]
    fn inv_sqrt_examples() {
        let r = inv_sqrt_psd(Array2::<f64>::eye(3).view(), 0.0).unwrap();
        assert!(max_abs(&(&r.matrix - &Array2::<f64>::eye(3))) < 1e-15);
        assert_eq!(r.effective_rank, 3);

        let r = inv_sqrt_psd(array![[4.0, 0.0], [0.0, 1.0]].view(), 0.0).unwrap();
        assert!(max_abs(&(&r.matrix - &array![[0.5, 0.0], [0.0, 1.0]])) < 1e-15);

        let a = array![[4.0, 0.0], [0.0, 1e-16]];
        let r = inv_sqrt_psd(a.view(), default_floor(a.view())).unwrap();
        assert!(max_abs(&(&r.matrix - &array![[0.5, 0.0], [0.0, 0.0]])) < 1e-15);
        assert_eq!(r.effective_rank, 1);

        assert!(matches!(inv_sqrt_psd(Array2::<f64>::zeros((2, 2)).view(), 0.0), Err(crate::Error::Numeric(_))));
        assert!(inv_sqrt_psd(Array2::<f64>::eye(2).view(), -1.0).is_err());
    }

    #[test]
    fn inv_sqrt_gives_projector() {
        // Rank-deficient PSD: R A R is the projector onto the retained space.
        let b = random_sym(12, 31).slice(s![.., ..7]).to_owned();
        let a = b.dot(&b.t());
        let r = inv_sqrt_psd(a.view(), default_floor(a.view())).unwrap();
        assert_eq!(r.effective_rank, 7);
        let p = r.matrix.dot(&a).dot(&r.matrix);
        assert!(max_abs(&(&p.dot(&p) - &p)) < 1e-8);
        assert!(max_abs(&(&p - &p.t())) < 1e-8);
        assert!((trace(p.view()) - 7.0).abs() < 1e-8);
    }

    #[test]
    fn psd_solve_examples() {
        let x = psd_solve(Array2::<f64>::zeros((3, 3)).view(), 2.0, Array2::eye(3).view()).unwrap();
        assert!(max_abs(&(x - Array2::<f64>::eye(3) * 0.5)) < 1e-15);
        let x = psd_solve(array![[1.0, 0.0], [0.0, 3.0]].view(), 1.0, Array2::eye(2).view()).unwrap();
        assert!(max_abs(&(x - array![[0.5, 0.0], [0.0, 0.25]])) < 1e-15);
        assert!(psd_solve(Array2::<f64>::eye(2).view(), 0.0, Array2::eye(2).view()).is_err());
    }

    #[test]
    fn psd_solve_multiply_back() {
        let a = random_psd(5, 77);
        let b = random_sym(5, 78);
        let x = psd_solve(a.view(), 0.1, b.view()).unwrap();
        let back = (&a + &(Array2::<f64>::eye(5) * 0.1)).dot(&x);
        let res = (&back - &b).mapv(|v| v * v).sum().sqrt();
        let bn = b.mapv(|v| v * v).sum().sqrt();
        assert!(res < 1e-10 * bn);
    }

    #[test]
    fn inverse_diag_matches_solve() {
        let a = random_psd(30, 5);
        let diag = psd_inverse_diag(a.view(), 0.3).unwrap();
        let inv = psd_solve(a.view(), 0.3, Array2::eye(30).view()).unwrap();
        for i in 0..30 {
            assert!((diag[i] - inv[[i, i]]).abs() < 1e-12 * inv[[i, i]].abs());
        }
    }

    #[test]
    fn cholesky_reconstructs() {
        let a = random_psd(25, 8) + Array2::<f64>::eye(25);
        let l = cholesky(a.view()).unwrap();
        assert!(max_abs(&(l.dot(&l.t()) - &a)) < 1e-12);
        assert!(cholesky(array![[1.0, 2.0], [2.0, 1.0]].view()).is_err());
    }

    #[test]
    fn blocked_factorizations_across_blocks() {
        let n = 250;
        let a = random_psd(n, 40) + Array2::<f64>::eye(n);
        let l = cholesky(a.view()).unwrap();
        assert!(max_abs(&(l.dot(&l.t()) - &a)) < 1e-10);
        let linv = lower_inverse(l.view());
        assert!(max_abs(&(linv.dot(&l) - Array2::<f64>::eye(n))) < 1e-10);
        let b = random_sym(n, 41).slice(s![.., ..37]).to_owned();
        let x = psd_solve(a.view(), 0.5, b.view()).unwrap();
        let back = (&a + &(Array2::<f64>::eye(n) * 0.5)).dot(&x);
        assert!(max_abs(&(back - &b)) < 1e-10);
        let diag = psd_inverse_diag(a.view(), 0.5).unwrap();
        let inv = psd_solve(a.view(), 0.5, Array2::eye(n).view()).unwrap();
        for i in 0..n {
            assert!((diag[i] - inv[[i, i]]).abs() < 1e-12 * inv[[i, i]]);
        }
        let eig = sym_eig(a.view()).unwrap();
        check_decomposition(&a, &eig);
    }

    #[test]
    fn f32_eigensolver() {
        let a = array![[2.0f32, 1.0], [1.0, 2.0]];
        let eig = sym_eig(a.view()).unwrap();
        assert!((eig.values[0] - 3.0).abs() < 1e-5 && (eig.values[1] - 1.0).abs() < 1e-5);
    }
}
