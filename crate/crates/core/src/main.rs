use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use swan_core::harness::{
    emit_results, run_scenario, run_sweep, write_scaling, write_summaries, write_trials, Format, RunOptions,
    RunReport, ScenarioConfig,
};
use swan_core::scaling::{scan, Limit, ScalingParams};
use swan_core::{Error, Result};

#[derive(Parser)]
#[command(name = "swan", version, about = "Tri-hybrid beamforming simulator for segmented pinching-antenna receivers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => Format::Csv,
            FormatArg::Json => Format::Json,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum LimitArg {
    Fc,
    Pc,
}

#[derive(clap::Args)]
struct OutputArgs {
    /// Trial file; the summary goes next to it as `<stem>_summary.<ext>`.
    /// Without it trials go to stdout and the summary to stderr.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: FormatArg,
    /// Record per-trial wall time (output is then no longer reproducible).
    #[arg(long)]
    timing: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run the Monte Carlo trials of a scenario file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Run a scenario once per value of a numeric key.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        key: String,
        #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
        values: Vec<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Tabulate the single-user rate scaling laws over odd segment counts.
    ScalingLaws {
        #[arg(long, value_enum)]
        limit: LimitArg,
        /// Segment length in meters.
        #[arg(long = "L")]
        segment_len: f64,
        /// Transverse user distance from the waveguide axis, meters.
        #[arg(long)]
        delta_yz: f64,
        /// Largest (odd) segment count.
        #[arg(long)]
        m_max: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "csv")]
        format: FormatArg,
        /// Scenario file supplying carrier, power and noise; defaults otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn load(path: &Path, seed: Option<u64>) -> Result<ScenarioConfig> {
    let mut cfg = ScenarioConfig::load(path)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn write_file(path: &Path, body: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::Io(e).context(format!("writing {}", path.display())))?;
    let mut w = std::io::BufWriter::new(file);
    body(&mut w)?;
    w.flush()?;
    Ok(())
}

fn emit(reports: &[RunReport], output: &OutputArgs) -> Result<()> {
    let format = Format::from(output.format);
    for r in reports {
        for f in &r.failures {
            eprintln!("warning: {} trial {} failed: {}", r.summary.method, f.trial, f.reason);
        }
    }
    let results: Vec<_> = reports.iter().flat_map(|r| r.results.iter().cloned()).collect();
    let summaries: Vec<_> = reports.iter().map(|r| r.summary.clone()).collect();
    match &output.out {
        Some(path) => {
            emit_results(&results, &summaries, path, format)?;
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            for r in reports {
                write_trials(&r.results, format, &mut lock)?;
            }
            lock.flush()?;
            write_summaries(&summaries, format, std::io::stderr().lock())?;
        }
    }
    Ok(())
}

fn emit_sweep(reports: &[RunReport], output: &OutputArgs) -> Result<()> {
    match &output.out {
        Some(path) => {
            let format = Format::from(output.format);
            for r in reports {
                for f in &r.failures {
                    eprintln!("warning: {} trial {} failed: {}", r.summary.method, f.trial, f.reason);
                }
            }
            let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let ext = path
                .extension()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| format.extension().to_string());
            // sweep trials share indices, so each value gets its own trial file
            for r in reports {
                let value = r.summary.sweep_value.expect("sweep reports carry their value");
                let file = path.with_file_name(format!("{stem}_{value}.{ext}"));
                write_file(&file, |w| write_trials(&r.results, format, w))?;
            }
            let summaries: Vec<_> = reports.iter().map(|r| r.summary.clone()).collect();
            let side = swan_core::harness::summary_path(path, format);
            write_file(&side, |w| write_summaries(&summaries, format, w))
        }
        None => emit(reports, output),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, seed, output } => {
            let cfg = load(&config, seed)?;
            let options = RunOptions { timing: output.timing };
            match &cfg.sweep {
                Some(sweep) => {
                    let reports = run_sweep(&cfg, &sweep.key, &sweep.values, options)?;
                    emit_sweep(&reports, &output)
                }
                None => emit(&[run_scenario(&cfg, options)?], &output),
            }
        }
        Command::Sweep {
            config,
            key,
            values,
            seed,
            output,
        } => {
            let cfg = load(&config, seed)?;
            let reports = run_sweep(&cfg, &key, &values, RunOptions { timing: output.timing })?;
            emit_sweep(&reports, &output)
        }
        Command::ScalingLaws {
            limit,
            segment_len,
            delta_yz,
            m_max,
            out,
            format,
            config,
        } => {
            let cfg = match config {
                Some(path) => ScenarioConfig::load(&path)?,
                None => ScenarioConfig::from_toml_with_env("", std::env::vars())?,
            };
            let scenario = cfg.resolve()?;
            let params = ScalingParams::from_radio(&scenario.radio, segment_len, delta_yz, 1)?;
            let limit = match limit {
                LimitArg::Fc => Limit::Fc,
                LimitArg::Pc => Limit::Pc,
            };
            let rows = scan(limit, &params, m_max)?;
            match out {
                Some(path) => write_file(&path, |w| write_scaling(&rows, format.into(), w))?,
                None => write_scaling(&rows, format.into(), std::io::stdout().lock())?,
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
