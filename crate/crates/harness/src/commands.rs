//! Subcommand bodies that are not sweeps.

use std::path::Path;

use nykpca::kernel::gram_sym;
use nykpca::persist::{self, Model};
use nykpca::sampling::{approx_leverage_scores, check_t_approx, exact_leverage_scores};
use nykpca::{fit_ekpca, fit_nystrom, Dataset};
use serde::Serialize;

use crate::bench::{bench_scaling, BenchTable};
use crate::config::{DataSource, ExperimentConfig, Method, SamplingConfig};
use crate::data::write_csv;
use crate::error::{HarnessError, Result};
use crate::experiment::{repetition_seed, sample_landmarks, PILOT_SEED_SLOT};

/// Fits one model with the largest configured ell and saves it as JSON at
/// the configured output path. NYSTROM uses the smallest configured m and the
/// seed of its repetition 0.
pub fn fit_model(cfg: &ExperimentConfig) -> Result<Model<f64>> {
    cfg.validate()?;
    let data = cfg.load_dataset()?;
    let ell = cfg.ells().last().copied().unwrap_or(0);
    let model: Model<f64> = match cfg.method {
        Method::Ekpca => fit_ekpca(&data, &cfg.kernel, ell)?.into(),
        Method::Nystrom => {
            let m = cfg.ms()[0];
            let lm = sample_landmarks(&cfg.sampling, &data, &cfg.kernel, m, repetition_seed(cfg.master_seed, m, 0))?;
            fit_nystrom(&data, &cfg.kernel, &lm, ell)?.into()
        }
    };
    persist::save(&model, &cfg.output)?;
    Ok(model)
}

#[derive(Debug, Clone, Serialize)]
pub struct LeverageReport {
    pub n: usize,
    pub s: f64,
    pub pilot_size: usize,
    pub exact: Vec<f64>,
    pub approx: Vec<f64>,
    /// Smallest factor bounding approx/exact both ways.
    pub t_factor: f64,
}

/// Exact and approximate scores for the ALS settings of the configuration,
/// written as `index,exact,approx` rows.
pub fn leverage(cfg: &ExperimentConfig) -> Result<LeverageReport> {
    let SamplingConfig::Als { s, pilot_size } = cfg.sampling else {
        return Err(HarnessError::Config("leverage needs \"sampling\": {\"scheme\": \"als\", ...}".into()));
    };
    cfg.kernel.validate()?;
    let data = cfg.load_dataset()?;
    let report = leverage_report(&data, cfg, s, pilot_size)?;
    write_leverage(&report, &cfg.output)?;
    Ok(report)
}

fn leverage_report(data: &Dataset, cfg: &ExperimentConfig, s: f64, pilot_size: usize) -> Result<LeverageReport> {
    let k = gram_sym(&cfg.kernel, data.x())?;
    let exact = exact_leverage_scores(k.view(), s)?;
    drop(k);
    let pilot = pilot_size.min(data.n());
    let approx = approx_leverage_scores(data, &cfg.kernel, s, pilot, nykpca::rng::derive_seed(cfg.master_seed, PILOT_SEED_SLOT))?;
    let t_factor = check_t_approx(&exact, &approx)?;
    Ok(LeverageReport { n: data.n(), s, pilot_size: pilot, exact: exact.scores.to_vec(), approx: approx.scores.to_vec(), t_factor })
}

fn write_leverage(r: &LeverageReport, path: &Path) -> Result<()> {
    let io = |e: std::io::Error| HarnessError::io(path, e);
    let mut w = csv::Writer::from_path(path).map_err(|e| io(e.into()))?;
    w.write_record(["index", "exact", "approx"]).map_err(|e| io(e.into()))?;
    for (i, (e, a)) in r.exact.iter().zip(&r.approx).enumerate() {
        w.write_record([i.to_string(), format!("{e:?}"), format!("{a:?}")]).map_err(|e| io(e.into()))?;
    }
    w.flush().map_err(io)
}

/// Writes the configured synthetic sample as CSV.
pub fn synth(cfg: &ExperimentConfig) -> Result<Dataset> {
    if !matches!(cfg.data, DataSource::Synthetic { .. }) {
        return Err(HarnessError::Config("synth needs a synthetic data source".into()));
    }
    let data = cfg.load_dataset()?;
    write_csv(&data, &cfg.output)?;
    Ok(data)
}

/// Runs the `bench` section of the configuration on its synthetic spectrum.
pub fn bench(cfg: &ExperimentConfig) -> Result<BenchTable> {
    let Some(b) = &cfg.bench else {
        return Err(HarnessError::Config("bench needs a \"bench\" section".into()));
    };
    let DataSource::Synthetic { spectrum, .. } = &cfg.data else {
        return Err(HarnessError::Config("bench needs a synthetic data source".into()));
    };
    cfg.kernel.validate()?;
    let table = bench_scaling(&cfg.kernel, spectrum, &b.n_list, b.m, cfg.master_seed, b.ekpca)?;
    table.write_csv(&cfg.output)?;
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(dir: &Path, extra: &str) -> ExperimentConfig {
        let text = format!(
            r#"{{"data": {{"source": "synthetic", "n": 30,
                 "spectrum": {{"decay": {{"decay": "exponential", "tau": 0.5, "scale": 1.0}}, "dim": 60}}}},
               "kernel": {{"family": "gaussian", "sigma": 2.0}}, "method": "nystrom",
               "m_list": [8], "ell_list": [1, 3], "master_seed": 4,
               "output": {:?} {extra}}}"#,
            dir.join("out").to_string_lossy()
        );
        ExperimentConfig::from_json(&text).unwrap()
    }

    #[test]
    fn fit_saves_loadable_model() {
        let dir = tempfile::tempdir().unwrap();
        let c = cfg(dir.path(), "");
        let model = fit_model(&c).unwrap();
        let back: Model<f64> = persist::load(&c.output).unwrap();
        assert_eq!(back, model);
        let Model::Nystrom(ny) = model else { panic!("expected a Nystrom model") };
        assert_eq!((ny.ell, ny.m_distinct), (3, 8));
    }

    #[test]
    fn leverage_needs_als_and_reports_t() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(leverage(&cfg(dir.path(), "")), Err(HarnessError::Config(_))));
        let r = leverage(&cfg(dir.path(), r#", "sampling": {"scheme": "als", "s": 0.001, "pilot_size": 30}"#)).unwrap();
        assert_eq!(r.exact.len(), 30);
        assert!(r.t_factor >= 1.0 && r.t_factor < 1.0 + 1e-6, "{}", r.t_factor);
        let text = std::fs::read_to_string(dir.path().join("out")).unwrap();
        assert_eq!(text.lines().count(), 31);
    }

    #[test]
    fn synth_writes_rows() {
        let dir = tempfile::tempdir().unwrap();
        let d = synth(&cfg(dir.path(), "")).unwrap();
        let back = crate::data::load_csv(&dir.path().join("out")).unwrap();
        assert_eq!(back, d);
    }
}
