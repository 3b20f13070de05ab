//! Wall-time scaling of the two fits.

use std::path::Path;
use std::time::Instant;

use ndarray::s;
use nykpca::analysis::generate_spectrum_dataset;
use nykpca::rng::derive_seed;
use nykpca::sampling::uniform_without_replacement;
use nykpca::{fit_ekpca, fit_nystrom, Dataset, KernelSpec, SpectrumSpec};
use serde::Serialize;

use crate::config::DATA_SEED_SLOT;
use crate::error::{HarnessError, Result};

/// Nystrom timings keep the best of this many runs.
pub const NYSTROM_RUNS: usize = 7;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub n: usize,
    pub m: usize,
    pub nystrom_seconds: f64,
    pub ekpca_seconds: Option<f64>,
}

/// Time ratios between consecutive rows.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRatio {
    pub n_from: usize,
    pub n_to: usize,
    pub m_from: usize,
    pub m_to: usize,
    pub nystrom_ratio: f64,
    pub ekpca_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchTable {
    pub rows: Vec<BenchRow>,
    pub ratios: Vec<BenchRatio>,
}

impl BenchTable {
    fn from_rows(rows: Vec<BenchRow>) -> Self {
        let ratios = rows
            .windows(2)
            .map(|w| BenchRatio {
                n_from: w[0].n,
                n_to: w[1].n,
                m_from: w[0].m,
                m_to: w[1].m,
                nystrom_ratio: w[1].nystrom_seconds / w[0].nystrom_seconds,
                ekpca_ratio: w[0].ekpca_seconds.zip(w[1].ekpca_seconds).map(|(a, b)| b / a),
            })
            .collect();
        BenchTable { rows, ratios }
    }

    /// Rows, then ratios, as one CSV table; `kind` tells them apart.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let io = |e: std::io::Error| HarnessError::io(path, e);
        let mut w = csv::Writer::from_path(path).map_err(|e| io(e.into()))?;
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
        w.write_record(["kind", "n", "m", "nystrom", "ekpca"]).map_err(|e| io(e.into()))?;
        for r in &self.rows {
            let rec = ["seconds".into(), r.n.to_string(), r.m.to_string(), format!("{:?}", r.nystrom_seconds), fmt(r.ekpca_seconds)];
            w.write_record(&rec).map_err(|e| io(e.into()))?;
        }
        for q in &self.ratios {
            let rec = [
                "ratio".into(),
                format!("{}->{}", q.n_from, q.n_to),
                format!("{}->{}", q.m_from, q.m_to),
                format!("{:?}", q.nystrom_ratio),
                fmt(q.ekpca_ratio),
            ];
            w.write_record(&rec).map_err(|e| io(e.into()))?;
        }
        w.flush().map_err(io)
    }
}

fn seconds<R>(f: impl FnOnce() -> nykpca::Result<R>) -> nykpca::Result<f64> {
    let start = Instant::now();
    let out = f()?;
    let t = start.elapsed().as_secs_f64();
    drop(out);
    Ok(t)
}

/// Best-of-[`NYSTROM_RUNS`] fit time for each `(data, m)` case. Runs are
/// interleaved across cases so that slow stretches of the machine hit every
/// case alike.
fn time_nystrom(cases: &[(Dataset, usize, u64)], spec: &KernelSpec) -> nykpca::Result<Vec<f64>> {
    let landmarks = cases
        .iter()
        .map(|(data, m, seed)| uniform_without_replacement(data.n(), *m, *seed))
        .collect::<nykpca::Result<Vec<_>>>()?;
    let mut best = vec![f64::INFINITY; cases.len()];
    for _ in 0..NYSTROM_RUNS {
        for (i, ((data, _, _), lm)) in cases.iter().zip(&landmarks).enumerate() {
            best[i] = best[i].min(seconds(|| fit_nystrom(data, spec, lm, 1))?);
        }
    }
    Ok(best)
}

fn prefix(data: &Dataset, n: usize) -> nykpca::Result<Dataset> {
    Dataset::new(data.x().slice(s![..n, ..]).to_owned())
}

/// Fit times at fixed `m` on nested prefixes of one synthetic sample of size
/// `max(n_list)`.
pub fn bench_scaling(
    spec: &KernelSpec,
    spectrum: &SpectrumSpec,
    n_list: &[usize],
    m: usize,
    seed: u64,
    with_ekpca: bool,
) -> Result<BenchTable> {
    if n_list.is_empty() || n_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(HarnessError::Config("n_list must be nonempty and strictly increasing".into()));
    }
    if m == 0 || m > n_list[0] {
        return Err(HarnessError::Config(format!("need 1 <= m <= {}, got m = {m}", n_list[0])));
    }
    let full = generate_spectrum_dataset(spectrum, *n_list.last().expect("nonempty"), derive_seed(seed, DATA_SEED_SLOT))?;
    let cases = n_list
        .iter()
        .map(|&n| Ok((prefix(&full, n)?, m, derive_seed(seed, n as u64))))
        .collect::<nykpca::Result<Vec<_>>>()?;
    let nystrom = time_nystrom(&cases, spec)?;
    let mut rows = Vec::new();
    for ((data, _, _), nystrom_seconds) in cases.iter().zip(nystrom) {
        let ekpca_seconds = if with_ekpca { Some(seconds(|| fit_ekpca(data, spec, 1))?) } else { None };
        rows.push(BenchRow { n: data.n(), m, nystrom_seconds, ekpca_seconds });
    }
    Ok(BenchTable::from_rows(rows))
}

/// Nystrom fit times at fixed `n` over increasing landmark counts.
pub fn bench_landmarks(spec: &KernelSpec, data: &Dataset, m_list: &[usize], seed: u64) -> Result<BenchTable> {
    if m_list.is_empty() || m_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(HarnessError::Config("m_list must be nonempty and strictly increasing".into()));
    }
    let cases: Vec<(Dataset, usize, u64)> = m_list.iter().map(|&m| (data.clone(), m, derive_seed(seed, m as u64))).collect();
    let times = time_nystrom(&cases, spec)?;
    let rows = m_list
        .iter()
        .zip(times)
        .map(|(&m, nystrom_seconds)| BenchRow { n: data.n(), m, nystrom_seconds, ekpca_seconds: None })
        .collect();
    Ok(BenchTable::from_rows(rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nykpca::analysis::Decay;

    fn spectrum() -> SpectrumSpec {
        SpectrumSpec::new(Decay::Exponential { tau: 0.5, scale: 1.0 }, 60)
    }

    #[test]
    fn single_n_has_no_ratios() {
        let t = bench_scaling(&KernelSpec::Linear, &spectrum(), &[40], 10, 1, true).unwrap();
        assert_eq!(t.rows.len(), 1);
        assert!(t.ratios.is_empty());
        assert!(t.rows[0].nystrom_seconds >= 0.0 && t.rows[0].ekpca_seconds.is_some());
    }

    #[test]
    fn ratios_pair_consecutive_rows() {
        let t = bench_scaling(&KernelSpec::Linear, &spectrum(), &[30, 60, 90], 10, 1, false).unwrap();
        assert_eq!(t.ratios.len(), 2);
        assert_eq!((t.ratios[1].n_from, t.ratios[1].n_to), (60, 90));
        assert!(t.ratios.iter().all(|r| r.ekpca_ratio.is_none() && r.nystrom_ratio > 0.0));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.csv");
        t.write_csv(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 1 + 3 + 2);
    }

    #[test]
    fn rejects_bad_lists() {
        assert!(bench_scaling(&KernelSpec::Linear, &spectrum(), &[50, 40], 10, 1, false).is_err());
        assert!(bench_scaling(&KernelSpec::Linear, &spectrum(), &[5], 10, 1, false).is_err());
        let data = generate_spectrum_dataset(&spectrum(), 30, 2).unwrap();
        let t = bench_landmarks(&KernelSpec::Linear, &data, &[5, 10], 3).unwrap();
        assert_eq!((t.rows[1].n, t.rows[1].m), (30, 10));
    }
}
