//! Results table, summary table and metadata sidecar.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

pub const STATUS_OK: &str = "ok";

/// One reconstruction-error measurement. Column order of the results file is
/// the field order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: String,
    pub scheme: String,
    pub n: usize,
    pub m_requested: usize,
    pub m_distinct: usize,
    pub ell: usize,
    pub repetition: usize,
    pub seed: u64,
    /// Empty when the fit or evaluation failed.
    pub reconstruction_error: Option<f64>,
    pub wall_time_fit_seconds: f64,
    pub wall_time_total_seconds: f64,
    /// `ok`, or the error message.
    pub status: String,
}

impl ResultRow {
    pub fn is_ok(&self) -> bool {
        self.status == STATUS_OK
    }
}

pub const HEADER: [&str; 12] = [
    "method",
    "scheme",
    "n",
    "m_requested",
    "m_distinct",
    "ell",
    "repetition",
    "seed",
    "reconstruction_error",
    "wall_time_fit_seconds",
    "wall_time_total_seconds",
    "status",
];

/// Appends rows to a results file, flushing after each one.
pub struct ResultsWriter {
    inner: csv::Writer<BufWriter<File>>,
    path: PathBuf,
}

impl ResultsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| HarnessError::io(path, e))?;
        let inner = csv::WriterBuilder::new().has_headers(true).from_writer(BufWriter::new(file));
        Ok(ResultsWriter { inner, path: path.to_path_buf() })
    }

    pub fn push(&mut self, row: &ResultRow) -> Result<()> {
        self.inner.serialize(row).map_err(|e| self.csv_err(e))?;
        self.inner.flush().map_err(|e| HarnessError::io(&self.path, e))
    }

    fn csv_err(&self, e: csv::Error) -> HarnessError {
        HarnessError::io(&self.path, std::io::Error::other(e.to_string()))
    }
}

pub fn emit_rows(rows: &[ResultRow]) -> String {
    let mut w = csv::WriterBuilder::new().has_headers(true).from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

pub fn parse_rows(text: &str) -> std::result::Result<Vec<ResultRow>, String> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header: Vec<String> = r.headers().map_err(|e| e.to_string())?.iter().map(str::to_string).collect();
    if header != HEADER {
        return Err(format!("unexpected header {header:?}"));
    }
    r.deserialize().map(|row| row.map_err(|e| e.to_string())).collect()
}

pub fn load_rows(path: &Path) -> Result<Vec<ResultRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    parse_rows(&text).map_err(|m| HarnessError::data(path, m))
}

/// Mean and spread of the error over repetitions for one `(method, scheme,
/// m, ell)` cell. `std_error` is the sample standard deviation (zero for a
/// single repetition).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub scheme: String,
    pub m_requested: usize,
    pub ell: usize,
    pub count: usize,
    pub failures: usize,
    pub mean_error: Option<f64>,
    pub std_error: Option<f64>,
    pub mean_fit_seconds: f64,
}

/// Groups in order of first appearance.
pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut keys: Vec<(String, String, usize, usize)> = Vec::new();
    for r in rows {
        let k = (r.method.clone(), r.scheme.clone(), r.m_requested, r.ell);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(method, scheme, m, ell)| {
            let cell: Vec<&ResultRow> =
                rows.iter().filter(|r| r.method == method && r.scheme == scheme && r.m_requested == m && r.ell == ell).collect();
            let errs: Vec<f64> = cell.iter().filter_map(|r| r.reconstruction_error).collect();
            let k = errs.len();
            let mean = (k > 0).then(|| errs.iter().sum::<f64>() / k as f64);
            let std = mean.map(|mu| {
                if k < 2 {
                    0.0
                } else {
                    (errs.iter().map(|e| (e - mu) * (e - mu)).sum::<f64>() / (k - 1) as f64).sqrt()
                }
            });
            let fit = cell.iter().map(|r| r.wall_time_fit_seconds).sum::<f64>() / cell.len() as f64;
            SummaryRow {
                method,
                scheme,
                m_requested: m,
                ell,
                count: k,
                failures: cell.len() - k,
                mean_error: mean,
                std_error: std,
                mean_fit_seconds: fit,
            }
        })
        .collect()
}

pub fn write_summary(rows: &[SummaryRow], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| HarnessError::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    for r in rows {
        w.serialize(r).map_err(|e| HarnessError::io(path, std::io::Error::other(e.to_string())))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

/// `results.csv` -> `results.summary.csv`.
pub fn summary_path(out: &Path) -> PathBuf {
    sibling(out, "summary.csv")
}

/// `results.csv` -> `results.meta.json`.
pub fn meta_path(out: &Path) -> PathBuf {
    sibling(out, "meta.json")
}

fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "results".into());
    out.with_file_name(format!("{stem}.{suffix}"))
}

pub fn write_meta(path: &Path, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("json value serializes");
    std::fs::write(path, text + "\n").map_err(|e| HarnessError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(ell: usize, rep: usize, err: Option<f64>) -> ResultRow {
        ResultRow {
            method: "NYSTROM".into(),
            scheme: "plain_uniform".into(),
            n: 10,
            m_requested: 3,
            m_distinct: 3,
            ell,
            repetition: rep,
            seed: u64::MAX - rep as u64,
            reconstruction_error: err,
            wall_time_fit_seconds: 0.25,
            wall_time_total_seconds: 1.0 / 3.0,
            status: if err.is_some() { STATUS_OK.into() } else { "numeric error: x, y".into() },
        }
    }

    #[test]
    fn emit_parse_round_trip() {
        let rows = vec![row(1, 0, Some(0.1)), row(2, 0, Some(1e-300)), row(1, 1, None), row(2, 1, Some(2.0 / 3.0))];
        let text = emit_rows(&rows);
        assert!(text.starts_with(&HEADER.join(",")));
        assert_eq!(parse_rows(&text).unwrap(), rows);
    }

    #[test]
    fn parse_rejects_foreign_header() {
        assert!(parse_rows("a,b\n1,2\n").is_err());
    }

    #[test]
    fn summary_statistics() {
        let rows = vec![row(1, 0, Some(1.0)), row(1, 1, Some(3.0)), row(2, 0, None), row(2, 1, Some(5.0))];
        let s = summarize(&rows);
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].mean_error, Some(2.0));
        assert!((s[0].std_error.unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!((s[1].count, s[1].failures), (1, 1));
        assert_eq!(s[1].std_error, Some(0.0));
    }

    #[test]
    fn sibling_paths() {
        assert_eq!(summary_path(Path::new("/tmp/r.csv")), PathBuf::from("/tmp/r.summary.csv"));
        assert_eq!(meta_path(Path::new("out")), PathBuf::from("out.meta.json"));
    }
}
