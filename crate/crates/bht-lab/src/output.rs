//! Result persistence: CSV tables, JSON manifests and gnuplot scripts.
//! All files are written atomically (temp file + rename).

use serde::Serialize;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::ensemble::{BandStatistics, EnsembleOutcome};
use crate::error::{Error, Result};
use crate::predictor::PredictionReport;

/// Render a float with 17 significant digits (round-trip exact for f64).
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::InvalidSpec(format!("io error at {}: {e}", path.display()))
}

/// Write `bytes` to `path` via a temporary sibling and an atomic rename, so
/// an interrupted run never leaves a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name().and_then(|s| s.to_str()).unwrap_or("out")
    ));
    {
        let mut f = std::fs::File::create(&tmp).map_err(|e| io_err(&tmp, e))?;
        f.write_all(bytes).map_err(|e| io_err(&tmp, e))?;
        f.sync_all().map_err(|e| io_err(&tmp, e))?;
    }
    std::fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

/// Run manifest: everything needed to reproduce the run bit for bit.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    /// Exact configuration snapshot (TOML text).
    pub config_toml: String,
    pub master_seed: u64,
    pub code_version: String,
    pub started_utc: String,
    pub finished_utc: String,
    pub outputs: Vec<String>,
    pub verdict: VerdictSummary,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerdictSummary {
    pub pass: bool,
    pub detail: Vec<CheckLine>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckLine {
    pub name: String,
    pub measured: f64,
    pub expected: f64,
    pub margin: f64,
    pub pass: bool,
}

pub fn now_utc() -> String {
    chrono::Utc::now().to_rfc3339()
}

/// Columns: kappa, n, mean, variance, std_error, expected_annulus,
/// expected_lattice, variance_bound, mean_margin_sigmas, variance_ratio,
/// mean_ok, variance_ok, below_validity.
pub fn stats_csv(outcome: &EnsembleOutcome) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "kappa",
        "n",
        "mean",
        "variance",
        "std_error",
        "expected_annulus",
        "expected_lattice",
        "variance_bound",
        "mean_margin_sigmas",
        "variance_ratio",
        "mean_ok",
        "variance_ok",
        "below_validity",
    ])
    .map_err(csv_err)?;
    for (stat, row) in outcome.stats.iter().zip(outcome.report.rows.iter()) {
        w.write_record([
            fmt_f64(stat.kappa),
            stat.n.to_string(),
            fmt_f64(stat.sample_mean),
            fmt_f64(stat.sample_variance),
            fmt_f64(stat.std_error),
            fmt_f64(row.expected_vartheta),
            fmt_f64(row.expected_vartheta_lattice),
            fmt_f64(row.variance_bound),
            fmt_f64(row.mean_margin_sigmas.unwrap_or(f64::NAN)),
            fmt_f64(row.variance_ratio.unwrap_or(f64::NAN)),
            row.mean_ok.unwrap_or(false).to_string(),
            row.variance_ok.unwrap_or(false).to_string(),
            row.below_validity.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.into_inner()
        .map_err(|e| Error::InvalidSpec(format!("csv flush: {e}")))
}

/// Columns: kappa, expected_vartheta, expected_vartheta_lattice,
/// expected_phi1, expected_phi1_lattice, var_bound, relative_budget,
/// below_validity, correction_n0, correction_n1, correction_n2.
pub fn predictions_csv(report: &PredictionReport) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "kappa",
        "expected_vartheta",
        "expected_vartheta_lattice",
        "expected_phi1",
        "expected_phi1_lattice",
        "var_bound",
        "relative_budget",
        "below_validity",
        "correction_n0",
        "correction_n1",
        "correction_n2",
    ])
    .map_err(csv_err)?;
    for row in &report.rows {
        let corr = |i: usize| row.correction_terms.get(i).copied().unwrap_or(f64::NAN);
        w.write_record([
            fmt_f64(row.kappa),
            fmt_f64(row.expected_vartheta),
            fmt_f64(row.expected_vartheta_lattice),
            fmt_f64(row.expected_phi1),
            fmt_f64(row.expected_phi1_lattice),
            fmt_f64(row.variance_bound),
            fmt_f64(row.relative_budget),
            row.below_validity.to_string(),
            fmt_f64(corr(0)),
            fmt_f64(corr(1)),
            fmt_f64(corr(2)),
        ])
        .map_err(csv_err)?;
    }
    w.into_inner()
        .map_err(|e| Error::InvalidSpec(format!("csv flush: {e}")))
}

fn csv_err(e: csv::Error) -> Error {
    Error::InvalidSpec(format!("csv write: {e}"))
}

/// Gnuplot script for log-log band power vs kappa with the annulus-law
/// overlay fitted through the first band's prediction.
pub fn plot_script(stats_csv_name: &str, stats: &[BandStatistics], power: f64, prefactor: f64) -> String {
    let mut s = String::new();
    s.push_str("# gnuplot script: band power vs kappa (log-log) with prediction overlay\n");
    s.push_str("set logscale xy\n");
    s.push_str("set xlabel 'kappa'\n");
    s.push_str("set ylabel 'band power'\n");
    s.push_str("set datafile separator ','\n");
    s.push_str(&format!("pred(x) = {} * x**({})\n", fmt_f64(prefactor), fmt_f64(power)));
    if let (Some(first), Some(last)) = (stats.first(), stats.last()) {
        s.push_str(&format!(
            "set xrange [{}:{}]\n",
            fmt_f64(first.kappa * 0.8),
            fmt_f64(last.kappa * 1.25)
        ));
    }
    s.push_str(&format!(
        "plot '{stats_csv_name}' skip 1 using 1:3:5 with yerrorbars title 'sample mean', \\\n     pred(x) title 'prediction'\n"
    ));
    s
}

/// Serialize any value as pretty JSON bytes.
pub fn to_json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes =
        serde_json::to_vec_pretty(value).map_err(|e| Error::InvalidSpec(format!("json: {e}")))?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Output paths for one run directory.
pub struct OutDir {
    pub dir: PathBuf,
}

impl OutDir {
    pub fn new(dir: &Path) -> Self {
        Self { dir: dir.to_path_buf() }
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_formatting_has_17_significant_digits() {
        let s = fmt_f64(std::f64::consts::PI);
        assert!(s.starts_with("3.1415926535897931"), "{s}");
        let back: f64 = s.parse().unwrap();
        assert_eq!(back, std::f64::consts::PI);
    }

    #[test]
    fn atomic_write_leaves_no_temp_files() {
        let dir = std::env::temp_dir().join(format!("bht-lab-test-{}", std::process::id()));
        let path = dir.join("x.csv");
        write_atomic(&path, b"a,b\n").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"a,b\n");
        let leftovers: Vec<_> = std::fs::read_dir(&dir)
            .unwrap()
            .filter_map(|e| e.ok())
            .filter(|e| e.file_name().to_string_lossy().ends_with(".tmp"))
            .collect();
        assert!(leftovers.is_empty());
        std::fs::remove_dir_all(&dir).ok();
    }
}
