//! Effective-dimension diagnostics, finite-sample bound calculators, synthetic
//! data with a prescribed covariance spectrum, and rate fitting.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{usage, Error, Result};
use crate::kernel::Dataset;
use crate::numerics::psd_inverse_diag;
use crate::rng::SeededRng;
use crate::scalar::Scalar;

/// Constants of the bound and the landmark thresholds, used verbatim.
pub mod constants {
    pub const PLAIN_M_FLOOR: f64 = 67.0;
    pub const PLAIN_M_NINF: f64 = 5.0;
    pub const PLAIN_T_LOWER: f64 = 9.0;
    pub const ALS_M_FLOOR: f64 = 334.0;
    pub const ALS_M_NC: f64 = 78.0;
    pub const ALS_T_LOWER: f64 = 19.0;
    pub const BOUND_LAMBDA: f64 = 6.0;
    pub const BOUND_T: f64 = 42.0;
}

/// Truncation dimensions are never chosen above this.
pub const MAX_DIM: usize = 100_000;
/// Default relative size of the discarded spectral tail.
pub const DEFAULT_TAIL_TOL: f64 = 1e-12;

/// Decay profile of the covariance eigenvalues, `lambda_i` for `i >= 1`.
/// The lower and upper envelope constants coincide, so `scale` is both.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "decay", rename_all = "lowercase")]
#[serde(bound = "T: Scalar")]
pub enum Decay<T> {
    /// `scale * i^-alpha`, `alpha > 1`.
    Polynomial { alpha: T, scale: T },
    /// `scale * exp(-tau i)`, `tau > 0`.
    Exponential { tau: T, scale: T },
}

/// How small the spectral mass beyond `dim` has to be.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[serde(bound = "T: Scalar")]
pub enum TailTolerance<T> {
    /// Tail below `rel * (sum of all eigenvalues)`.
    RelativeToTrace(T),
    /// Tail below `rel * sum_{i > ell} lambda_i`, i.e. negligible next to the
    /// smallest reconstruction error an experiment measures.
    RelativeToTailAt { ell: usize, rel: T },
}

impl<T: Scalar> Default for TailTolerance<T> {
    fn default() -> Self {
        TailTolerance::RelativeToTrace(T::c(DEFAULT_TAIL_TOL))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SpectrumSpec<T> {
    pub decay: Decay<T>,
    /// Truncation dimension.
    pub dim: usize,
    #[serde(default)]
    pub tail_tolerance: TailTolerance<T>,
}

impl<T: Scalar> Decay<T> {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Decay::Polynomial { alpha, scale } => {
                if !(alpha > T::one()) || !(scale > T::zero()) || !alpha.is_finite() || !scale.is_finite() {
                    return usage(format!("polynomial decay needs alpha > 1 and scale > 0, got {alpha}, {scale}"));
                }
            }
            Decay::Exponential { tau, scale } => {
                if !(tau > T::zero()) || !(scale > T::zero()) || !tau.is_finite() || !scale.is_finite() {
                    return usage(format!("exponential decay needs tau > 0 and scale > 0, got {tau}, {scale}"));
                }
            }
        }
        Ok(())
    }

    /// `lambda_i`, 1-based.
    pub fn eigenvalue(&self, i: usize) -> T {
        let x = T::from_count(i);
        match *self {
            Decay::Polynomial { alpha, scale } => scale * x.powf(-alpha),
            Decay::Exponential { tau, scale } => scale * (-tau * x).exp(),
        }
    }

    /// `sum_{i > from} lambda_i` over the untruncated sequence.
    pub fn tail_after(&self, from: usize) -> T {
        match *self {
            Decay::Exponential { tau, scale } => {
                scale * (-tau * T::from_count(from + 1)).exp() / (T::one() - (-tau).exp())
            }
            Decay::Polynomial { alpha, scale } => {
                // Explicit terms up to a point, then Euler-Maclaurin.
                const SWITCH: usize = 64;
                let mut head = T::zero();
                let mut k = from;
                while k < SWITCH {
                    k += 1;
                    head += T::from_count(k).powf(-alpha);
                }
                let nn = T::from_count(k);
                let one = T::one();
                let em = nn.powf(one - alpha) / (alpha - one) - nn.powf(-alpha) / T::c(2.0)
                    + alpha * nn.powf(-alpha - one) / T::c(12.0)
                    - alpha * (alpha + one) * (alpha + T::c(2.0)) * nn.powf(-alpha - T::c(3.0)) / T::c(720.0);
                scale * (head + em)
            }
        }
    }

    pub fn total(&self) -> T {
        self.tail_after(0)
    }

    /// Smallest `d` whose discarded tail is below `rel` times the total, and
    /// whether the [`MAX_DIM`] cap was hit instead.
    pub fn default_dim(&self, rel: T) -> (usize, bool) {
        let target = rel * self.total();
        let (mut lo, mut hi) = (1usize, MAX_DIM);
        if self.tail_after(hi) >= target {
            return (MAX_DIM, true);
        }
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            if self.tail_after(mid) < target {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        (lo, false)
    }
}

impl<T: Scalar> SpectrumSpec<T> {
    pub fn new(decay: Decay<T>, dim: usize) -> Self {
        SpectrumSpec { decay, dim, tail_tolerance: TailTolerance::default() }
    }

    /// Spectrum truncated at the default dimension; the flag reports a capped
    /// dimension.
    pub fn with_default_dim(decay: Decay<T>) -> (Self, bool) {
        let (dim, capped) = decay.default_dim(T::c(DEFAULT_TAIL_TOL));
        (Self::new(decay, dim), capped)
    }

    pub fn with_tolerance(mut self, tol: TailTolerance<T>) -> Self {
        self.tail_tolerance = tol;
        self
    }

    pub fn eigenvalues(&self) -> Vec<T> {
        (1..=self.dim).map(|i| self.decay.eigenvalue(i)).collect()
    }

    /// Sum of the truncated spectrum, which is `k(x, x)` for every generated
    /// sample under the linear kernel.
    pub fn kappa(&self) -> T {
        sum_small_first(&self.eigenvalues())
    }

    /// Spectral mass dropped by the truncation.
    pub fn truncated_tail(&self) -> T {
        self.decay.tail_after(self.dim)
    }

    /// Population reconstruction error of the top-`ell` projector for the
    /// truncated spectrum: `sum_{ell < i <= dim} lambda_i`.
    pub fn population_tail(&self, ell: usize) -> T {
        if ell >= self.dim {
            return T::zero();
        }
        let vals: Vec<T> = (ell + 1..=self.dim).map(|i| self.decay.eigenvalue(i)).collect();
        sum_small_first(&vals)
    }

    pub fn check_tail(&self) -> Result<()> {
        self.decay.validate()?;
        if self.dim == 0 {
            return usage("spectrum dimension must be positive");
        }
        let tail = self.truncated_tail();
        let (bound, what) = match self.tail_tolerance {
            TailTolerance::RelativeToTrace(rel) => (rel * self.decay.total(), "of the trace".to_string()),
            TailTolerance::RelativeToTailAt { ell, rel } => {
                (rel * self.decay.tail_after(ell), format!("of the tail after ell = {ell}"))
            }
        };
        if !(tail < bound) {
            let (suggest, capped) = match self.tail_tolerance {
                TailTolerance::RelativeToTrace(rel) => self.decay.default_dim(rel),
                TailTolerance::RelativeToTailAt { ell, rel } => {
                    let ratio = rel * self.decay.tail_after(ell) / self.decay.total();
                    self.decay.default_dim(ratio)
                }
            };
            let hint = if capped { format!("dim would have to exceed {MAX_DIM}") } else { format!("use dim >= {suggest}") };
            return usage(format!("truncated tail {tail:e} is not below {bound:e} ({what}); {hint}"));
        }
        Ok(())
    }
}

fn sum_small_first<T: Scalar>(values: &[T]) -> T {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    v.into_iter().fold(T::zero(), |a, b| a + b)
}

/// Samples `X_a = (sqrt(lambda_1) e_a1, ..., sqrt(lambda_d) e_ad)` with
/// independent Rademacher signs `e`. Under the linear kernel the population
/// covariance has exactly the eigenvalues `lambda_i`, and every sample has
/// `k(x, x) = sum_i lambda_i`.
pub fn generate_spectrum_dataset<T: Scalar>(spec: &SpectrumSpec<T>, n: usize, seed: u64) -> Result<Dataset<T>> {
    spec.check_tail()?;
    if n == 0 {
        return usage("n must be positive");
    }
    let roots: Vec<T> = spec.eigenvalues().into_iter().map(|l| l.sqrt()).collect();
    let d = spec.dim;
    let mut rng = SeededRng::new(seed);
    let mut x = Array2::<T>::zeros((n, d));
    for mut row in x.rows_mut() {
        let mut bits = 0u64;
        for (j, (v, r)) in row.iter_mut().zip(&roots).enumerate() {
            if j % 64 == 0 {
                bits = rng.next_u64();
            }
            *v = if bits & 1 == 0 { *r } else { -*r };
            bits >>= 1;
        }
    }
    Dataset::new(x)
}

fn check_t<T: Scalar>(t: T) -> Result<()> {
    if !(t > T::zero()) || !t.is_finite() {
        return usage(format!("t must be positive, got {t}"));
    }
    Ok(())
}

/// `N(t) = sum_i lambda_i / (lambda_i + t)`.
pub fn effective_dimension<T: Scalar>(eigs: &[T], t: T) -> Result<T> {
    check_t(t)?;
    Ok(eigs.iter().rev().fold(T::zero(), |acc, &l| acc + l / (l + t)))
}

/// Plug-in estimate of `N_inf(t)`: the largest diagonal entry of
/// `K ((1/n) K + t I)^{-1}` over the training points.
pub fn empirical_n_infinity<T: Scalar>(k: ArrayView2<'_, T>, t: T) -> Result<T> {
    check_t(t)?;
    let n = k.nrows();
    if n == 0 {
        return usage("empty Gram matrix");
    }
    let nn = T::from_count(n);
    let scaled = k.mapv(|v| v / nn);
    // K (K/n + tI)^{-1} = n (I - t (K/n + tI)^{-1})
    let inv_diag = psd_inverse_diag(scaled.view(), t)?;
    Ok(inv_diag.iter().map(|&v| nn * (T::one() - t * v)).fold(T::neg_infinity(), T::max))
}

/// Right-hand side `N(t) (6 lambda_ell + 42 t)` of the reconstruction bound.
pub fn reconstruction_bound<T: Scalar>(n_c: T, lambda_ell: T, t: T) -> T {
    n_c * (T::c(constants::BOUND_LAMBDA) * lambda_ell + T::c(constants::BOUND_T) * t)
}

/// `ceil` that ignores round-off of relative size below `1e-12`.
fn ceil_count(x: f64) -> u64 {
    if !(x > 0.0) {
        return 0;
    }
    let r = x.round();
    if (x - r).abs() <= 1e-12 * x {
        r as u64
    } else {
        x.ceil() as u64
    }
}

fn check_delta<T: Scalar>(delta: T) -> Result<()> {
    if !(delta > T::zero() && delta < T::one()) {
        return usage(format!("delta must lie in (0, 1), got {delta}"));
    }
    Ok(())
}

/// Landmark count for plain sampling: `(67 v 5 N_inf(t)) log(4 kappa / (t delta))`.
pub fn m_threshold_plain<T: Scalar>(n_inf: T, t: T, kappa: T, delta: T) -> Result<u64> {
    check_delta(delta)?;
    check_t(t)?;
    if !(kappa > T::zero()) || n_inf < T::zero() {
        return usage("kappa must be positive and n_inf nonnegative");
    }
    let lead = T::c(constants::PLAIN_M_FLOOR).max(T::c(constants::PLAIN_M_NINF) * n_inf);
    let v = lead * (T::c(4.0) * kappa / (t * delta)).ln();
    Ok(ceil_count(v.to_f64_lossy()))
}

/// Landmark count for leverage-score sampling at a given `t`:
/// `(334 v 78 T^2 N(t)) log(8 n / delta)`.
pub fn m_threshold_als<T: Scalar>(n_c: T, n: usize, delta: T, t_factor: T) -> Result<u64> {
    check_delta(delta)?;
    if !(t_factor >= T::one()) {
        return usage("approximation factor T must be >= 1");
    }
    let lead = T::c(constants::ALS_M_FLOOR).max(T::c(constants::ALS_M_NC) * t_factor * t_factor * n_c);
    let v = lead * (T::c(8.0) * T::from_count(n) / delta).ln();
    Ok(ceil_count(v.to_f64_lossy()))
}

/// Admissible `t` interval `[(9 kappa / n) log(n / delta), lambda_1]` for
/// plain sampling; empty intervals are reported as a domain error.
pub fn plain_t_range<T: Scalar>(kappa: T, n: usize, delta: T, lambda_1: T) -> Result<(T, T)> {
    check_delta(delta)?;
    let nn = T::from_count(n);
    let lo = T::c(constants::PLAIN_T_LOWER) * kappa / nn * (nn / delta).ln();
    if lo > lambda_1 {
        return Err(Error::Domain(format!("admissible t range is empty: lower end {lo:e} > lambda_1 = {lambda_1:e}")));
    }
    Ok((lo, lambda_1))
}

/// Outcome of [`select_t_als`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlsSelection<T> {
    pub t: T,
    pub lower: T,
    pub upper: T,
    /// Whether `m >= 334 log(8 n / delta)` holds.
    pub side_condition_met: bool,
    pub side_condition_m: T,
}

/// Relative bisection tolerance on `t`.
pub const SELECT_T_REL_TOL: f64 = 1e-4;

/// Smallest `t` in `[(19 kappa / n) log(2 n / delta), lambda_1]` with
/// `78 T^2 N(t) log(8 n / delta) <= m`, where `N` is evaluated on `eigs`.
/// Since `N` is nonincreasing in `t`, the feasible set is an interval and
/// bisection finds its left end to within [`SELECT_T_REL_TOL`].
pub fn select_t_als<T: Scalar>(
    eigs: &[T],
    n: usize,
    kappa: T,
    delta: T,
    t_factor: T,
    m: usize,
) -> Result<AlsSelection<T>> {
    check_delta(delta)?;
    if n == 0 || eigs.is_empty() {
        return usage("need n >= 1 and a nonempty spectrum");
    }
    if !(t_factor >= T::one()) {
        return usage("approximation factor T must be >= 1");
    }
    let nn = T::from_count(n);
    let lambda_1 = eigs.iter().copied().fold(T::neg_infinity(), T::max);
    let lower = T::c(constants::ALS_T_LOWER) * kappa / nn * (T::c(2.0) * nn / delta).ln();
    let log_term = (T::c(8.0) * nn / delta).ln();
    let side_condition_m = T::c(constants::ALS_M_FLOOR) * log_term;
    let mm = T::from_count(m);
    let need = |t: T| -> Result<T> { Ok(T::c(constants::ALS_M_NC) * t_factor * t_factor * effective_dimension(eigs, t)? * log_term) };
    let done = |t: T| AlsSelection { t, lower, upper: lambda_1, side_condition_met: mm >= side_condition_m, side_condition_m };
    if lower > lambda_1 {
        return Err(Error::Domain(format!("t range is empty: lower end {lower:e} > lambda_1 = {lambda_1:e}")));
    }
    if need(lower)? <= mm {
        return Ok(done(lower));
    }
    let at_top = need(lambda_1)?;
    if at_top > mm {
        return Err(Error::Domain(format!(
            "no admissible t: even at t = lambda_1 the condition needs m >= {:.1}, have {m} (gap {:.1})",
            at_top.to_f64_lossy(),
            (at_top - mm).to_f64_lossy()
        )));
    }
    let (mut lo, mut hi) = (lower, lambda_1);
    while (hi - lo) > T::c(SELECT_T_REL_TOL) * hi {
        let mid = (lo + hi) / T::c(2.0);
        if need(mid)? <= mm {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(done(hi))
}

/// Everything needed to compare a measured error with the bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundReport<T> {
    pub t: T,
    pub n_c: T,
    pub n_inf: T,
    pub lambda_ell: T,
    pub bound_value: T,
    pub m_threshold_plain: u64,
    pub m_threshold_als: u64,
    pub kappa: T,
}

/// Assembles a [`BoundReport`] for population eigenvalues `eigs` (descending),
/// level `ell >= 1`, and an estimate `n_inf` of `N_inf(t)`.
#[allow(clippy::too_many_arguments)]
pub fn bound_report<T: Scalar>(
    eigs: &[T],
    ell: usize,
    t: T,
    n_inf: T,
    kappa: T,
    n: usize,
    delta: T,
    t_factor: T,
) -> Result<BoundReport<T>> {
    if ell == 0 || ell > eigs.len() {
        return usage(format!("ell must lie in 1..={}", eigs.len()));
    }
    let n_c = effective_dimension(eigs, t)?;
    let lambda_ell = eigs[ell - 1];
    Ok(BoundReport {
        t,
        n_c,
        n_inf,
        lambda_ell,
        bound_value: reconstruction_bound(n_c, lambda_ell, t),
        m_threshold_plain: m_threshold_plain(n_inf, t, kappa, delta)?,
        m_threshold_als: m_threshold_als(n_c, n, delta, t_factor)?,
        kappa,
    })
}

/// Least-squares slope of `log(error)` against `log(n)`.
pub fn fit_rate<T: Scalar>(ns: &[T], errors: &[T]) -> Result<T> {
    if ns.len() != errors.len() {
        return usage(format!("{} sizes but {} errors", ns.len(), errors.len()));
    }
    if ns.len() < 3 {
        return usage("need at least three points to fit a rate");
    }
    if ns.iter().chain(errors).any(|v| !(*v > T::zero()) || !v.is_finite()) {
        return usage("sizes and errors must be positive and finite");
    }
    let k = T::from_count(ns.len());
    let xs: Vec<T> = ns.iter().map(|v| v.ln()).collect();
    let ys: Vec<T> = errors.iter().map(|v| v.ln()).collect();
    let mx = xs.iter().copied().sum::<T>() / k;
    let my = ys.iter().copied().sum::<T>() / k;
    let (mut sxy, mut sxx) = (T::zero(), T::zero());
    for (x, y) in xs.iter().zip(&ys) {
        sxy += (*x - mx) * (*y - my);
        sxx += (*x - mx) * (*x - mx);
    }
    if sxx == T::zero() {
        return usage("sample sizes must not all be equal");
    }
    Ok(sxy / sxx)
}

/// `ceil(n^(theta / alpha))`, the number of components in the polynomial rate
/// experiment.
pub fn ell_polynomial(n: usize, theta: f64, alpha: f64) -> usize {
    ceil_count((n as f64).powf(theta / alpha)).max(1) as usize
}

/// `ceil((1 / tau) log n^theta)`, the number of components in the exponential
/// rate experiment.
pub fn ell_exponential(n: usize, theta: f64, tau: f64) -> usize {
    ceil_count(theta * (n as f64).ln() / tau).max(1) as usize
}
