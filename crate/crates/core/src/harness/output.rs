//! Result files. Trials go to one file, one row per trial; aggregates go to
//! a sibling `<stem>_summary.<ext>`.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};

use super::config::Method;
use super::runner::{Summary, TrialResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.extension())
    }
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(Error::InvalidConfig(format!("unknown output format `{other}`"))),
        }
    }
}

pub const CSV_HEADER: [&str; 11] = [
    "trial",
    "seed",
    "method",
    "M",
    "N_RF",
    "K",
    "P_dBm",
    "sum_rate_bpshz",
    "ee_bpshz_per_w",
    "iterations",
    "wall_ms",
];

#[derive(Serialize)]
struct CsvRow<'a> {
    trial: usize,
    seed: u64,
    method: &'a str,
    #[serde(rename = "M")]
    segments: usize,
    #[serde(rename = "N_RF")]
    n_rf: usize,
    #[serde(rename = "K")]
    users: usize,
    #[serde(rename = "P_dBm")]
    p_dbm: f64,
    sum_rate_bpshz: f64,
    ee_bpshz_per_w: f64,
    iterations: usize,
    wall_ms: Option<f64>,
}

impl<'a> From<&'a TrialResult> for CsvRow<'a> {
    fn from(r: &'a TrialResult) -> Self {
        CsvRow {
            trial: r.trial,
            seed: r.seed,
            method: r.method.name(),
            segments: r.segments,
            n_rf: r.n_rf,
            users: r.users,
            p_dbm: r.p_dbm,
            sum_rate_bpshz: r.sum_rate,
            ee_bpshz_per_w: r.ee,
            iterations: r.iterations,
            wall_ms: r.wall_ms,
        }
    }
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    method: &'a str,
    sweep_key: Option<&'a str>,
    sweep_value: Option<f64>,
    trials: usize,
    failures: usize,
    sum_rate_mean: Option<f64>,
    sum_rate_median: Option<f64>,
    sum_rate_std: Option<f64>,
    ee_mean: Option<f64>,
    ee_median: Option<f64>,
    ee_std: Option<f64>,
}

pub const SUMMARY_HEADER: [&str; 11] = [
    "method",
    "sweep_key",
    "sweep_value",
    "trials",
    "failures",
    "sum_rate_mean",
    "sum_rate_median",
    "sum_rate_std",
    "ee_mean",
    "ee_median",
    "ee_std",
];

fn summary_row(s: &Summary) -> SummaryRow<'_> {
    SummaryRow {
        method: s.method.name(),
        sweep_key: s.sweep_key.as_deref(),
        sweep_value: s.sweep_value,
        trials: s.trials,
        failures: s.failures,
        sum_rate_mean: s.sum_rate.map(|x| x.mean),
        sum_rate_median: s.sum_rate.map(|x| x.median),
        sum_rate_std: s.sum_rate.map(|x| x.std),
        ee_mean: s.ee.map(|x| x.mean),
        ee_median: s.ee.map(|x| x.median),
        ee_std: s.ee.map(|x| x.std),
    }
}

fn csv_writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .has_headers(false)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out)
}

/// Writes trials sorted by index.
pub fn write_trials<W: Write>(results: &[TrialResult], format: Format, mut out: W) -> Result<()> {
    let mut sorted: Vec<&TrialResult> = results.iter().collect();
    sorted.sort_by_key(|r| r.trial);
    match format {
        Format::Csv => {
            let mut w = csv_writer(out);
            w.write_record(CSV_HEADER)?;
            for r in sorted {
                w.serialize(CsvRow::from(r))?;
            }
            w.flush()?;
        }
        Format::Json => {
            serde_json::to_writer_pretty(&mut out, &sorted)?;
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}

pub fn write_summaries<W: Write>(summaries: &[Summary], format: Format, mut out: W) -> Result<()> {
    match format {
        Format::Csv => {
            let mut w = csv_writer(out);
            w.write_record(SUMMARY_HEADER)?;
            for s in summaries {
                w.serialize(summary_row(s))?;
            }
            w.flush()?;
        }
        Format::Json => {
            serde_json::to_writer_pretty(&mut out, summaries)?;
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}

pub fn read_trials_json(text: &str) -> Result<Vec<TrialResult>> {
    Ok(serde_json::from_str(text)?)
}

/// `dir/run.csv` becomes `dir/run_summary.csv`.
pub fn summary_path(path: &Path, format: Format) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let ext = path
        .extension()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| format.extension().to_string());
    path.with_file_name(format!("{stem}_summary.{ext}"))
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    let file = std::fs::File::create(path).map_err(|e| Error::Io(e).context(format!("writing {}", path.display())))?;
    Ok(std::io::BufWriter::new(file))
}

/// Writes the trial file at `path` and the summary file next to it.
pub fn emit_results(results: &[TrialResult], summaries: &[Summary], path: &Path, format: Format) -> Result<PathBuf> {
    let mut trials = create(path)?;
    write_trials(results, format, &mut trials)?;
    trials.flush()?;
    let side = summary_path(path, format);
    let mut summary = create(&side)?;
    write_summaries(summaries, format, &mut summary)?;
    summary.flush()?;
    Ok(side)
}

/// Scaling-law table with columns `M,exact_snr,approx_snr,exact_rate,approx_rate`.
pub fn write_scaling<W: Write>(rows: &[crate::scaling::ScalingRow], format: Format, mut out: W) -> Result<()> {
    match format {
        Format::Csv => {
            let mut w = csv::WriterBuilder::new()
                .terminator(csv::Terminator::Any(b'\n'))
                .from_writer(out);
            if rows.is_empty() {
                w.write_record(["M", "exact_snr", "approx_snr", "exact_rate", "approx_rate"])?;
            }
            for r in rows {
                w.serialize(r)?;
            }
            w.flush()?;
        }
        Format::Json => {
            serde_json::to_writer_pretty(&mut out, rows)?;
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}

/// Summary recomputed from trial rows, e.g. after reading a JSON file back.
pub fn summarize(method: Method, results: &[TrialResult], failures: usize) -> Summary {
    Summary::from_results(method, results, failures)
}
