//! Sweeps over landmark counts, repetitions and component counts.

use std::time::Instant;

use nykpca::rng::derive_seed;
use nykpca::sampling::{als_sample, approx_leverage_scores, uniform_without_replacement, LandmarkSet};
use nykpca::{fit_ekpca, fit_nystrom, Dataset, KernelSpec};
use serde_json::json;

use crate::config::{ExperimentConfig, Method, SamplingConfig};
use crate::error::Result;
use crate::results::{meta_path, summarize, summary_path, write_meta, write_summary, ResultRow, ResultsWriter, SummaryRow, STATUS_OK};

/// Sub-seed slot for the ALS pilot subsample within a repetition.
pub const PILOT_SEED_SLOT: u64 = 0x9170;

/// Seed of repetition `rep` at landmark count `m`.
pub fn repetition_seed(master: u64, m: usize, rep: usize) -> u64 {
    derive_seed(derive_seed(master, m as u64), rep as u64)
}

/// Draws the landmarks of one repetition.
pub fn sample_landmarks(
    sampling: &SamplingConfig,
    data: &Dataset,
    kernel: &KernelSpec,
    m: usize,
    seed: u64,
) -> nykpca::Result<LandmarkSet> {
    match *sampling {
        SamplingConfig::PlainUniform => uniform_without_replacement(data.n(), m, seed),
        SamplingConfig::Als { s, pilot_size } => {
            let pilot = pilot_size.min(data.n());
            let scores = approx_leverage_scores(data, kernel, s, pilot, derive_seed(seed, PILOT_SEED_SLOT))?;
            als_sample(&scores, m, seed)
        }
    }
}

pub struct RunOutput {
    pub rows: Vec<ResultRow>,
    pub summary: Vec<SummaryRow>,
    pub n: usize,
    pub d: usize,
}

/// Loads the data, runs the sweep, and writes the results file, its summary
/// and its metadata sidecar.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let data = cfg.load_dataset()?;
    let mut writer = ResultsWriter::create(&cfg.output)?;
    let rows = run_on(cfg, &data, &mut |row| writer.push(row))?;
    let summary = summarize(&rows);
    write_summary(&summary, &summary_path(&cfg.output))?;
    let failures = rows.iter().filter(|r| !r.is_ok()).count();
    let meta = json!({
        "library": "nykpca",
        "version": env!("CARGO_PKG_VERSION"),
        "config": cfg,
        "n": data.n(),
        "d": data.dim(),
        "rows": rows.len(),
        "failures": failures,
        "results": cfg.output.file_name().map(|s| s.to_string_lossy().into_owned()),
        "summary": summary_path(&cfg.output).file_name().map(|s| s.to_string_lossy().into_owned()),
    });
    write_meta(&meta_path(&cfg.output), &meta)?;
    Ok(RunOutput { rows, summary, n: data.n(), d: data.dim() })
}

/// The sweep itself on an already loaded dataset. Every row goes to `sink` as
/// soon as it is produced, in canonical order (m, repetition, ell; EKPCA rows
/// last). Fit failures become rows; only `sink` errors abort.
pub fn run_on(
    cfg: &ExperimentConfig,
    data: &Dataset,
    sink: &mut dyn FnMut(&ResultRow) -> Result<()>,
) -> Result<Vec<ResultRow>> {
    let ells = cfg.ells();
    let mut rows = Vec::new();
    let mut emit = |batch: Vec<ResultRow>, rows: &mut Vec<ResultRow>| -> Result<()> {
        for r in batch {
            sink(&r)?;
            rows.push(r);
        }
        Ok(())
    };
    if cfg.method == Method::Nystrom {
        for m in cfg.ms() {
            for rep in 0..cfg.repetitions {
                let batch = nystrom_rows(cfg, data, m, rep, &ells);
                emit(batch, &mut rows)?;
            }
        }
    }
    if cfg.method == Method::Ekpca || cfg.baseline {
        emit(ekpca_rows(cfg, data, &ells), &mut rows)?;
    }
    Ok(rows)
}

struct Timing {
    fit: f64,
    total: f64,
}

fn row_template(method: Method, scheme: &str, n: usize) -> ResultRow {
    ResultRow {
        method: method.label().into(),
        scheme: scheme.into(),
        n,
        m_requested: 0,
        m_distinct: 0,
        ell: 0,
        repetition: 0,
        seed: 0,
        reconstruction_error: None,
        wall_time_fit_seconds: 0.0,
        wall_time_total_seconds: 0.0,
        status: STATUS_OK.into(),
    }
}

fn fill(base: &ResultRow, ells: &[usize], t: &Timing, timing: bool, mut eval: impl FnMut(usize) -> nykpca::Result<f64>) -> Vec<ResultRow> {
    ells.iter()
        .map(|&ell| {
            let mut r = base.clone();
            r.ell = ell;
            match eval(ell) {
                Ok(e) => r.reconstruction_error = Some(e),
                Err(err) => r.status = err.to_string(),
            }
            if timing {
                r.wall_time_fit_seconds = t.fit;
                r.wall_time_total_seconds = t.total;
            }
            r
        })
        .collect()
}

/// Fits at the largest requested ell; if that exceeds the numerical rank, the
/// zero-component fit still carries the full spectrum.
fn fit_with_fallback<M>(max_ell: usize, fit: impl Fn(usize) -> nykpca::Result<M>) -> nykpca::Result<M> {
    match fit(max_ell) {
        Err(nykpca::Error::Usage(_)) if max_ell > 0 => fit(0),
        other => other,
    }
}

fn nystrom_rows(cfg: &ExperimentConfig, data: &Dataset, m: usize, rep: usize, ells: &[usize]) -> Vec<ResultRow> {
    let seed = repetition_seed(cfg.master_seed, m, rep);
    let mut base = row_template(Method::Nystrom, cfg.sampling.label(), data.n());
    base.m_requested = m;
    base.repetition = rep;
    base.seed = seed;
    let start = Instant::now();
    let landmarks = match sample_landmarks(&cfg.sampling, data, &cfg.kernel, m, seed) {
        Ok(l) => l,
        Err(e) => {
            let t = Timing { fit: 0.0, total: start.elapsed().as_secs_f64() };
            return fill(&base, ells, &t, cfg.timing, |_| Err(e.clone()));
        }
    };
    base.m_distinct = landmarks.m_distinct();
    let max_ell = ells.last().copied().unwrap_or(0);
    let fit_start = Instant::now();
    let model = fit_with_fallback(max_ell, |ell| fit_nystrom(data, &cfg.kernel, &landmarks, ell));
    let fit = fit_start.elapsed().as_secs_f64();
    let t = Timing { fit, total: start.elapsed().as_secs_f64() };
    match &model {
        Ok(model) => fill(&base, ells, &t, cfg.timing, |ell| model.recon_error_checked(ell)),
        Err(e) => fill(&base, ells, &t, cfg.timing, |_| Err(e.clone())),
    }
}

fn ekpca_rows(cfg: &ExperimentConfig, data: &Dataset, ells: &[usize]) -> Vec<ResultRow> {
    let n = data.n();
    let mut base = row_template(Method::Ekpca, "none", n);
    base.m_requested = n;
    base.m_distinct = n;
    base.seed = cfg.master_seed;
    let max_ell = ells.last().copied().unwrap_or(0);
    let start = Instant::now();
    let model = fit_with_fallback(max_ell, |ell| fit_ekpca(data, &cfg.kernel, ell));
    let t = Timing { fit: start.elapsed().as_secs_f64(), total: start.elapsed().as_secs_f64() };
    match &model {
        Ok(model) => fill(&base, ells, &t, cfg.timing, |ell| model.recon_error_checked(ell)),
        Err(e) => fill(&base, ells, &t, cfg.timing, |_| Err(e.clone())),
    }
}
