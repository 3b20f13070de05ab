//! Landmark selection for the Nystrom subspace.

use ndarray::{Array1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{usage, Result};
use crate::kernel::{gram, gram_sym, Dataset, KernelSpec};
use crate::numerics::{default_floor, inv_sqrt_psd, psd_solve};
use crate::rng::SeededRng;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scheme {
    /// Uniform without replacement.
    PlainUniform,
    /// Approximate leverage scores, with replacement.
    Als,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LandmarkSet {
    /// Draws in order; may repeat for [`Scheme::Als`].
    pub indices: Vec<usize>,
    /// Sorted, deduplicated `indices`. Kernel blocks are built on these.
    pub distinct_indices: Vec<usize>,
    pub scheme: Scheme,
    pub seed: u64,
}

impl LandmarkSet {
    fn new(indices: Vec<usize>, scheme: Scheme, seed: u64) -> Self {
        let mut distinct = indices.clone();
        distinct.sort_unstable();
        distinct.dedup();
        LandmarkSet { indices, distinct_indices: distinct, scheme, seed }
    }

    /// Landmarks given explicitly, treated as a plain subset.
    pub fn from_indices(indices: Vec<usize>, n: usize) -> Result<Self> {
        if indices.is_empty() {
            return usage("empty landmark set");
        }
        if let Some(bad) = indices.iter().find(|&&i| i >= n) {
            return usage(format!("landmark index {bad} out of range for n = {n}"));
        }
        Ok(Self::new(indices, Scheme::PlainUniform, 0))
    }

    pub fn m_distinct(&self) -> usize {
        self.distinct_indices.len()
    }
}

/// `m` distinct indices from `0..n` by a partial Fisher-Yates shuffle.
pub fn uniform_without_replacement(n: usize, m: usize, seed: u64) -> Result<LandmarkSet> {
    if m < 1 || m > n {
        return usage(format!("need 1 <= m <= n, got m = {m}, n = {n}"));
    }
    let mut rng = SeededRng::new(seed);
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..m {
        let j = i + rng.below((n - i) as u64) as usize;
        pool.swap(i, j);
    }
    pool.truncate(m);
    Ok(LandmarkSet::new(pool, Scheme::PlainUniform, seed))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LeverageKind {
    Exact,
    Approximate { pilot_size: usize },
}

/// Ridge leverage scores `l_i(s) = [K (K + n s I)^{-1}]_ii`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct LeverageScores<T> {
    pub scores: Array1<T>,
    pub s: T,
    pub kind: LeverageKind,
    /// Pilot seed, for approximate scores.
    pub seed: Option<u64>,
}

impl<T: Scalar> LeverageScores<T> {
    /// Wraps externally supplied scores (nonnegative and finite).
    pub fn from_values(scores: Array1<T>, s: T, kind: LeverageKind) -> Result<Self> {
        if scores.iter().any(|v| !v.is_finite() || *v < T::zero()) {
            return usage("scores must be finite and nonnegative");
        }
        Ok(LeverageScores { scores, s, kind, seed: None })
    }

    pub fn n(&self) -> usize {
        self.scores.len()
    }

    pub fn sum(&self) -> T {
        self.scores.iter().copied().sum()
    }
}

fn check_s<T: Scalar>(s: T) -> Result<()> {
    if !(s > T::zero()) || !s.is_finite() {
        return usage(format!("regularization s must be positive, got {s}"));
    }
    Ok(())
}

/// Exact scores from a Gram matrix, through one resolvent solve.
pub fn exact_leverage_scores<T: Scalar>(k: ArrayView2<'_, T>, s: T) -> Result<LeverageScores<T>> {
    check_s(s)?;
    let n = k.nrows();
    if n == 0 {
        return usage("empty Gram matrix");
    }
    let x = psd_solve(k, T::from_count(n) * s, k)?;
    Ok(LeverageScores { scores: x.diag().to_owned(), s, kind: LeverageKind::Exact, seed: None })
}

/// Scores of the Nystrom approximation built on a uniform pilot subsample.
///
/// With `B = K_{nL} K_{LL}^{-1/2}`, the pilot approximation is `B B^T` and
/// its scores are `b_i^T (B^T B + n s I)^{-1} b_i`, computed in
/// `O(n * pilot_size^2)`.
pub fn approx_leverage_scores<T: Scalar>(
    data: &Dataset<T>,
    spec: &KernelSpec<T>,
    s: T,
    pilot_size: usize,
    seed: u64,
) -> Result<LeverageScores<T>> {
    check_s(s)?;
    let n = data.n();
    if pilot_size < 1 || pilot_size > n {
        return usage(format!("need 1 <= pilot_size <= n, got {pilot_size} for n = {n}"));
    }
    let pilot = uniform_without_replacement(n, pilot_size, seed)?;
    let xl = data.select(&pilot.distinct_indices);
    let kll = gram_sym(spec, xl.view())?;
    let r = inv_sqrt_psd(kll.view(), default_floor(kll.view()))?;
    let knl = gram(spec, data.x(), xl.view())?;
    let b = knl.dot(&r.matrix);
    let g = b.t().dot(&b);
    let z = psd_solve(g.view(), T::from_count(n) * s, b.t())?;
    let scores: Array1<T> =
        b.axis_iter(Axis(0)).zip(z.axis_iter(Axis(1))).map(|(bi, zi)| bi.dot(&zi)).collect();
    Ok(LeverageScores { scores, s, kind: LeverageKind::Approximate { pilot_size }, seed: Some(seed) })
}

/// Smallest `T >= 1` with `exact / T <= approx <= T * exact` everywhere.
pub fn check_t_approx<T: Scalar>(exact: &LeverageScores<T>, approx: &LeverageScores<T>) -> Result<T> {
    if exact.n() != approx.n() {
        return usage(format!("score vectors differ in length: {} vs {}", exact.n(), approx.n()));
    }
    let rel = (exact.s - approx.s).abs() / exact.s.abs().max(approx.s.abs());
    if rel > T::c(1e-12) {
        return usage(format!("scores computed at different s: {} vs {}", exact.s, approx.s));
    }
    let mut t = T::one();
    for (i, (&e, &a)) in exact.scores.iter().zip(approx.scores.iter()).enumerate() {
        if !(e > T::zero()) || !(a > T::zero()) {
            return usage(format!("nonpositive score at index {i}"));
        }
        t = t.max(e / a).max(a / e);
    }
    Ok(t)
}

/// `m` i.i.d. draws from `p_i = l_i / sum_j l_j`, with replacement.
pub fn als_sample<T: Scalar>(scores: &LeverageScores<T>, m: usize, seed: u64) -> Result<LandmarkSet> {
    if m < 1 {
        return usage("m must be at least 1");
    }
    let mut cumulative = Vec::with_capacity(scores.n());
    let mut total = 0.0f64;
    for v in scores.scores.iter() {
        let v = v.to_f64_lossy();
        if !(v >= 0.0) || !v.is_finite() {
            return usage("scores must be finite and nonnegative");
        }
        total += v;
        cumulative.push(total);
    }
    if !(total > 0.0) {
        return usage("all leverage scores are zero");
    }
    let mut rng = SeededRng::new(seed);
    let last = cumulative.len() - 1;
    let indices = (0..m)
        .map(|_| {
            let target = rng.unit() * total;
            cumulative.partition_point(|&c| c <= target).min(last)
        })
        .collect();
    Ok(LandmarkSet::new(indices, Scheme::Als, seed))
}
