//! Empirical kernel PCA and its Nystrom approximation.
//!
//! Both models use the uncentered empirical covariance operator. Eigenpairs of
//! `(1/n) K` give the empirical model; the Nystrom model restricts the
//! principal functions to the span of `k(., x_j)` over the landmarks and solves
//! the reduced `m x m` problem with
//! `M = K_mm^{-1/2} K_mn K_nm K_mm^{-1/2}`.

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{usage, Result};
use crate::kernel::{gram, gram_sym, kernel_diag, Dataset, KernelSpec};
use crate::numerics::{default_floor, inv_sqrt_psd, sym_eig_top, trace};
use crate::sampling::{LandmarkSet, Scheme};
use crate::scalar::Scalar;

/// Relative eigenvalue floor: components at or below
/// `RETAIN_FLOOR * trace(K) / n` cannot be retained.
pub const RETAIN_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct EkpcaModel<T> {
    pub ell: usize,
    /// Leading eigenvalues of `(1/n) K`, descending.
    pub eigvals: Array1<T>,
    /// `n x ell`; column `i` is `u_i / sqrt(n lambda_i)`.
    pub alphas: Array2<T>,
    pub train: Array2<T>,
    pub spec: KernelSpec<T>,
    pub trace_over_n: T,
    /// Full spectrum of `(1/n) K`, descending.
    pub all_eigvals: Array1<T>,
    pub floor: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct NystromModel<T> {
    pub ell: usize,
    pub n: usize,
    pub m_requested: usize,
    pub m_distinct: usize,
    /// Distinct landmark points, `m_distinct x d`.
    pub landmarks: Array2<T>,
    pub landmark_indices: Vec<usize>,
    /// Leading eigenvalues of `(1/n) M`, descending.
    pub eigvals_m: Array1<T>,
    /// `m_distinct x ell`; column `i` is `K_mm^{-1/2} u_{i,m}`.
    pub betas: Array2<T>,
    pub spec: KernelSpec<T>,
    pub trace_over_n: T,
    pub all_eigvals_m: Array1<T>,
    pub scheme: Scheme,
    pub seed: u64,
    /// Floor used for `K_mm^{-1/2}` and the rank it left.
    pub kmm_floor: T,
    pub kmm_rank: usize,
    pub floor: T,
}

fn tail_sum<T: Scalar>(values: &[T]) -> T {
    // Smallest terms first.
    values.iter().rev().fold(T::zero(), |acc, v| acc + *v)
}

fn numerical_rank<T: Scalar>(values: &Array1<T>, floor: T) -> usize {
    values.iter().take_while(|v| **v > floor).count()
}

fn check_rank(ell: usize, rank: usize) -> Result<()> {
    if ell > rank {
        return usage(format!("ell = {ell} exceeds the effective rank {rank} (eigenvalues above the retain floor)"));
    }
    Ok(())
}

fn check_landmarks(ell: usize, m: usize) -> Result<()> {
    if ell > m {
        return usage(format!("ell = {ell} exceeds the {m} distinct landmarks"));
    }
    Ok(())
}

/// Fits empirical kernel PCA with `ell` components. `O(n^3)` time, `O(n^2)`
/// space. `ell = 0` gives the empty projector.
pub fn fit_ekpca<T: Scalar>(data: &Dataset<T>, spec: &KernelSpec<T>, ell: usize) -> Result<EkpcaModel<T>> {
    let n = data.n();
    if n == 0 {
        return usage("cannot fit on an empty dataset");
    }
    if ell > n {
        return usage(format!("ell = {ell} exceeds n = {n}"));
    }
    let nn = T::from_count(n);
    let mut k = gram_sym(spec, data.x())?;
    k.mapv_inplace(|v| v / nn);
    let trace_over_n = trace(k.view());
    let eig = sym_eig_top(k.view(), ell)?;
    drop(k);
    let floor = T::c(RETAIN_FLOOR) * trace_over_n;
    check_rank(ell, numerical_rank(&eig.values, floor))?;
    let eigvals = eig.values.slice(ndarray::s![..ell]).to_owned();
    let mut alphas = eig.vectors;
    for (mut col, &lam) in alphas.columns_mut().into_iter().zip(eigvals.iter()) {
        let scale = T::one() / (nn * lam).sqrt();
        col.mapv_inplace(|v| v * scale);
    }
    Ok(EkpcaModel {
        ell,
        eigvals,
        alphas,
        train: data.x().to_owned(),
        spec: *spec,
        trace_over_n,
        all_eigvals: eig.values,
        floor,
    })
}

/// Fits Nystrom kernel PCA on the distinct landmarks. `O(n m^2 + m^3)` time;
/// the `n x m` cross block is released before returning.
pub fn fit_nystrom<T: Scalar>(
    data: &Dataset<T>,
    spec: &KernelSpec<T>,
    landmarks: &LandmarkSet,
    ell: usize,
) -> Result<NystromModel<T>> {
    let n = data.n();
    if n == 0 {
        return usage("cannot fit on an empty dataset");
    }
    if let Some(bad) = landmarks.distinct_indices.iter().find(|&&i| i >= n) {
        return usage(format!("landmark index {bad} out of range for n = {n}"));
    }
    let m = landmarks.m_distinct();
    if m == 0 {
        return usage("empty landmark set");
    }
    check_landmarks(ell, m)?;
    let nn = T::from_count(n);
    let trace_over_n = kernel_diag(spec, data.x()).iter().copied().sum::<T>() / nn;

    let xm = data.select(&landmarks.distinct_indices);
    let kmm = gram_sym(spec, xm.view())?;
    let kmm_floor = default_floor(kmm.view());
    let r = inv_sqrt_psd(kmm.view(), kmm_floor)?;
    drop(kmm);
    let reduced = {
        let knm = gram(spec, data.x(), xm.view())?;
        let c = knm.dot(&r.matrix);
        drop(knm);
        let mut mm = c.t().dot(&c);
        mm.mapv_inplace(|v| v / nn);
        mm
    };
    let eig = sym_eig_top(reduced.view(), ell)?;
    let floor = T::c(RETAIN_FLOOR) * trace_over_n;
    check_rank(ell, numerical_rank(&eig.values, floor))?;
    let betas = r.matrix.dot(&eig.vectors);
    Ok(NystromModel {
        ell,
        n,
        m_requested: landmarks.indices.len(),
        m_distinct: m,
        landmarks: xm,
        landmark_indices: landmarks.distinct_indices.clone(),
        eigvals_m: eig.values.slice(ndarray::s![..ell]).to_owned(),
        betas,
        spec: *spec,
        trace_over_n,
        all_eigvals_m: eig.values,
        scheme: landmarks.scheme,
        seed: landmarks.seed,
        kmm_floor,
        kmm_rank: r.effective_rank,
        floor,
    })
}

fn check_points<T: Scalar>(points: ArrayView2<'_, T>, d: usize, ell: usize) -> Result<()> {
    if ell == 0 {
        return usage("model has no components to project onto");
    }
    if points.ncols() != d {
        return usage(format!("points have {} features, model expects {d}", points.ncols()));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return usage("non-finite query point");
    }
    Ok(())
}

/// Principal scores `phi_i(x_a) = sum_j k(x_a, X_j) alphas[j][i]`.
pub fn project_ekpca<T: Scalar>(model: &EkpcaModel<T>, points: ArrayView2<'_, T>) -> Result<Array2<T>> {
    check_points(points, model.train.ncols(), model.ell)?;
    Ok(gram(&model.spec, points, model.train.view())?.dot(&model.alphas))
}

/// Principal scores `phi_{i,m}(x_a) = sum_j k(x_a, landmark_j) betas[j][i]`.
pub fn project_nystrom<T: Scalar>(model: &NystromModel<T>, points: ArrayView2<'_, T>) -> Result<Array2<T>> {
    check_points(points, model.landmarks.ncols(), model.ell)?;
    Ok(gram(&model.spec, points, model.landmarks.view())?.dot(&model.betas))
}

impl<T: Scalar> EkpcaModel<T> {
    pub fn n(&self) -> usize {
        self.train.nrows()
    }

    /// Empirical reconstruction error of the rank-`ell` projector: the sum of
    /// the discarded eigenvalues of `(1/n) K`. Any `ell <= n` is accepted,
    /// independently of how many components the model retains.
    pub fn recon_error_at(&self, ell: usize) -> Result<T> {
        if ell > self.all_eigvals.len() {
            return usage(format!("ell = {ell} exceeds n = {}", self.all_eigvals.len()));
        }
        Ok(tail_sum(&self.all_eigvals.as_slice().expect("contiguous")[ell..]))
    }

    pub fn recon_error(&self) -> T {
        self.recon_error_at(self.ell).expect("ell <= n by construction")
    }

    /// Number of eigenvalues above the retain floor.
    pub fn rank(&self) -> usize {
        numerical_rank(&self.all_eigvals, self.floor)
    }

    /// [`Self::recon_error_at`], failing exactly when a fit with `ell`
    /// components would.
    pub fn recon_error_checked(&self, ell: usize) -> Result<T> {
        check_rank(ell, self.rank())?;
        self.recon_error_at(ell)
    }
}

impl<T: Scalar> NystromModel<T> {
    /// `trace(K)/n - sum_{i <= ell} lambda_{i,m}` for any `ell <= m_distinct`.
    pub fn recon_error_at(&self, ell: usize) -> Result<T> {
        if ell > self.all_eigvals_m.len() {
            return usage(format!("ell = {ell} exceeds m = {}", self.all_eigvals_m.len()));
        }
        let captured: T = self.all_eigvals_m.iter().take(ell).copied().sum();
        Ok(self.trace_over_n - captured)
    }

    pub fn recon_error(&self) -> T {
        self.recon_error_at(self.ell).expect("ell <= m by construction")
    }

    /// Number of eigenvalues of `(1/n) M` above the retain floor.
    pub fn rank(&self) -> usize {
        numerical_rank(&self.all_eigvals_m, self.floor)
    }

    /// [`Self::recon_error_at`], failing exactly when a fit with `ell`
    /// components would.
    pub fn recon_error_checked(&self, ell: usize) -> Result<T> {
        check_landmarks(ell, self.m_distinct)?;
        check_rank(ell, self.rank())?;
        self.recon_error_at(ell)
    }

    /// Number of scalars the model retains. Bounded by
    /// `m * (d + ell + 2) + small`, never by `n`.
    pub fn stored_len(&self) -> usize {
        self.landmarks.len()
            + self.betas.len()
            + self.eigvals_m.len()
            + self.all_eigvals_m.len()
            + self.landmark_indices.len()
    }
}

pub fn recon_error_ekpca<T: Scalar>(model: &EkpcaModel<T>) -> T {
    model.recon_error()
}

pub fn recon_error_nystrom<T: Scalar>(model: &NystromModel<T>) -> T {
    model.recon_error()
}

/// Tolerance on `C^T K_basis C - I` accepted by [`recon_error_oracle`].
pub const ORACLE_ORTHONORMALITY_TOL: f64 = 1e-6;

/// Direct evaluation of `(1/n) sum_i ||k(., X_i) - P k(., X_i)||^2` for the
/// projector onto an RKHS-orthonormal basis `f_j = sum_a coeffs[a][j] k(., points_a)`.
///
/// Because the basis is orthonormal, the squared norm of the projection of
/// `k(., X_i)` is `sum_j f_j(X_i)^2`.
pub fn recon_error_oracle<T: Scalar>(
    data: &Dataset<T>,
    spec: &KernelSpec<T>,
    coeffs: ArrayView2<'_, T>,
    points: ArrayView2<'_, T>,
) -> Result<T> {
    let n = data.n();
    if n == 0 {
        return usage("empty dataset");
    }
    if coeffs.nrows() != points.nrows() {
        return usage(format!("{} coefficient rows for {} basis points", coeffs.nrows(), points.nrows()));
    }
    let nn = T::from_count(n);
    let diag_mean = kernel_diag(spec, data.x()).iter().copied().sum::<T>() / nn;
    let ell = coeffs.ncols();
    if ell == 0 {
        return Ok(diag_mean);
    }
    let kb = gram_sym(spec, points)?;
    let ortho = coeffs.t().dot(&kb).dot(&coeffs);
    let dev = ortho
        .indexed_iter()
        .map(|((i, j), v)| (*v - if i == j { T::one() } else { T::zero() }).abs())
        .fold(T::zero(), T::max);
    if dev > T::c(ORACLE_ORTHONORMALITY_TOL) {
        return usage(format!("basis is not RKHS-orthonormal: max deviation {dev:e}"));
    }
    let values = gram(spec, data.x(), points)?.dot(&coeffs);
    let captured: T = values.iter().map(|v| *v * *v).sum::<T>() / nn;
    Ok(diag_mean - captured)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;
    use crate::sampling::uniform_without_replacement;
    use ndarray::array;

    fn random_data(n: usize, d: usize, seed: u64) -> Dataset<f64> {
        let mut rng = SeededRng::new(seed);
        Dataset::new(Array2::from_shape_fn((n, d), |_| rng.unit() * 2.0 - 1.0)).unwrap()
    }

    fn max_dev_from_identity(a: &Array2<f64>) -> f64 {
        a.indexed_iter().map(|((i, j), v)| (v - if i == j { 1.0 } else { 0.0 }).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn single_point() {
        let data = Dataset::new(array![[0.4f64, -1.2]]).unwrap();
        let spec = KernelSpec::gaussian(1.0).unwrap();
        let m = fit_ekpca(&data, &spec, 1).unwrap();
        assert!((m.eigvals[0] - 1.0).abs() < 1e-15);
        assert!((m.alphas[[0, 0]].abs() - 1.0).abs() < 1e-15);
        let score = project_ekpca(&m, data.x()).unwrap();
        assert!((score[[0, 0]].abs() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn two_points_linear() {
        // K = [[1, -1], [-1, 1]]; (1/2) K has eigenvalues 1 and 0.
        let data = Dataset::new(array![[-1.0f64], [1.0]]).unwrap();
        let m = fit_ekpca(&data, &KernelSpec::Linear, 1).unwrap();
        assert!((m.all_eigvals[0] - 1.0).abs() < 1e-15);
        assert!(m.all_eigvals[1].abs() < 1e-15);
        assert!(fit_ekpca(&data, &KernelSpec::Linear, 2).is_err());
    }

    #[test]
    fn ekpca_orthonormal_and_scores() {
        let data = random_data(40, 3, 1);
        let spec = KernelSpec::gaussian(1.0).unwrap();
        let m = fit_ekpca(&data, &spec, 6).unwrap();
        let k = gram_sym(&spec, data.x()).unwrap();
        assert!(max_dev_from_identity(&m.alphas.t().dot(&k).dot(&m.alphas)) < 1e-8);
        let g = project_ekpca(&m, data.x()).unwrap();
        let cov = g.t().dot(&g) / 40.0;
        for i in 0..6 {
            for j in 0..6 {
                let want = if i == j { m.eigvals[i] } else { 0.0 };
                assert!((cov[[i, j]] - want).abs() < 1e-8);
            }
        }
        let sum: f64 = m.all_eigvals.sum();
        assert!((sum - m.trace_over_n).abs() < 1e-10 * m.trace_over_n);
    }

    #[test]
    fn far_point_projects_to_zero() {
        let data = random_data(20, 2, 2);
        let spec = KernelSpec::gaussian(1.0).unwrap();
        let e = fit_ekpca(&data, &spec, 3).unwrap();
        let lm = uniform_without_replacement(20, 8, 3).unwrap();
        let ny = fit_nystrom(&data, &spec, &lm, 3).unwrap();
        let far = array![[1e3, -1e3]];
        assert!(project_ekpca(&e, far.view()).unwrap().iter().all(|v| v.abs() < 1e-300));
        assert!(project_nystrom(&ny, far.view()).unwrap().iter().all(|v| v.abs() < 1e-300));
        assert!(project_ekpca(&e, array![[1.0, 2.0, 3.0]].view()).is_err());
    }

    #[test]
    fn recon_error_edges() {
        let data = random_data(12, 2, 4);
        let spec = KernelSpec::gaussian(2.0).unwrap();
        let m = fit_ekpca(&data, &spec, 0).unwrap();
        assert_eq!(m.recon_error(), m.recon_error_at(0).unwrap());
        assert!((m.recon_error() - 1.0).abs() < 1e-12);
        assert!(m.recon_error_at(12).unwrap().abs() < 1e-10 * m.trace_over_n);
        assert!(project_ekpca(&m, data.x()).is_err());
        let errs: Vec<f64> = (0..=12).map(|l| m.recon_error_at(l).unwrap()).collect();
        assert!(errs.windows(2).all(|w| w[1] <= w[0] + 1e-15));
    }

    #[test]
    fn nystrom_orthonormal_and_interlaced() {
        let data = random_data(60, 3, 5);
        let spec = KernelSpec::gaussian(0.7).unwrap();
        let e = fit_ekpca(&data, &spec, 10).unwrap();
        let lm = uniform_without_replacement(60, 20, 6).unwrap();
        let ny = fit_nystrom(&data, &spec, &lm, 10).unwrap();
        let kmm = gram_sym(&spec, ny.landmarks.view()).unwrap();
        assert!(max_dev_from_identity(&ny.betas.t().dot(&kmm).dot(&ny.betas)) < 1e-8);
        for i in 0..20 {
            assert!(ny.all_eigvals_m[i] <= e.all_eigvals[i] + 1e-10);
        }
        assert!(ny.recon_error() >= e.recon_error() - 1e-10);
        let oracle = recon_error_oracle(&data, &spec, ny.betas.view(), ny.landmarks.view()).unwrap();
        assert!((oracle - ny.recon_error()).abs() <= 1e-8 * ny.recon_error());
        assert!(ny.stored_len() <= 20 * (3 + 10 + 3));
    }

    #[test]
    fn nystrom_all_landmarks_equals_ekpca() {
        let data = random_data(30, 2, 7);
        let spec = KernelSpec::gaussian(3.0).unwrap();
        let e = fit_ekpca(&data, &spec, 5).unwrap();
        let lm = uniform_without_replacement(30, 30, 8).unwrap();
        let ny = fit_nystrom(&data, &spec, &lm, 5).unwrap();
        for i in 0..30 {
            assert!((ny.all_eigvals_m[i] - e.all_eigvals[i]).abs() < 1e-8);
            assert!((ny.recon_error_at(i).unwrap() - e.recon_error_at(i).unwrap()).abs() < 1e-8);
        }
        let pe = project_ekpca(&e, data.x()).unwrap();
        let pn = project_nystrom(&ny, data.x()).unwrap();
        for j in 0..5 {
            let sign = if pe.column(j).dot(&pn.column(j)) < 0.0 { -1.0 } else { 1.0 };
            let d = &pe.column(j) - &pn.column(j).mapv(|v| v * sign);
            assert!(d.iter().all(|v| v.abs() < 1e-6));
        }
    }

    #[test]
    fn duplicate_landmarks_are_deduplicated() {
        let data = random_data(15, 2, 9);
        let spec = KernelSpec::gaussian(1.0).unwrap();
        let lm = LandmarkSet::from_indices(vec![3, 3, 7, 1, 7], 15).unwrap();
        let ny = fit_nystrom(&data, &spec, &lm, 2).unwrap();
        assert_eq!(ny.m_distinct, 3);
        assert_eq!(ny.m_requested, 5);
        assert!(fit_nystrom(&data, &spec, &lm, 4).is_err());
    }

    #[test]
    fn oracle_rejects_non_orthonormal() {
        let data = random_data(10, 2, 10);
        let spec = KernelSpec::gaussian(1.0).unwrap();
        let coeffs = Array2::<f64>::ones((10, 1));
        assert!(matches!(
            recon_error_oracle(&data, &spec, coeffs.view(), data.x()),
            Err(crate::Error::Usage(_))
        ));
        let empty = Array2::<f64>::zeros((10, 0));
        assert!((recon_error_oracle(&data, &spec, empty.view(), data.x()).unwrap() - 1.0).abs() < 1e-15);
    }
}
