//! Command-line front end: `analyze`, `simulate`, `validate` and `report`.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use feature_lens_core::regime::DEFAULT_EPSILON;
use feature_lens_core::Split;

use crate::analysis::{self, AnalysisError, AnalysisOptions, DEFAULT_KMAX, DEFAULT_SUBSAMPLE, THREADS_ENV};
use crate::manifest::{file_sha256, load_run, ManifestError};
use crate::report::{self, PlotFormat, ReportError};
use crate::simulate::{self, SimulateError};
use crate::validate::{self, ValidateError, DEFAULT_N, DEFAULT_P};

pub const EXIT_FAILURE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "feature-lens", version, about = "Spectral feature-learning diagnostics for network snapshots")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Toggle {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Svg,
    Csv,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Analyze every snapshot of a run and write report.json plus CSV series.
    Analyze {
        /// Path to the run's manifest.json.
        manifest: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// Orthonormalize the eigenfunctions on the evaluation split.
        #[arg(long, value_enum, default_value = "on")]
        qr: Toggle,
        #[arg(long, default_value_t = DEFAULT_EPSILON)]
        epsilon: f64,
        #[arg(long, default_value_t = DEFAULT_KMAX)]
        kmax: usize,
        /// Maximum number of training points used per snapshot.
        #[arg(long, default_value_t = DEFAULT_SUBSAMPLE)]
        subsample: usize,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads (overridden by FEATURE_LENS_THREADS).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Train a seeded toy model from a JSON spec and write its run directory.
    Simulate {
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check the decomposition on Gaussian features with a power-law spectrum.
    Validate {
        #[arg(long, value_delimiter = ',', default_values_t = validate::DEFAULT_ALPHAS)]
        alpha: Vec<f64>,
        #[arg(long, default_value_t = DEFAULT_P)]
        p: usize,
        #[arg(long, default_value_t = DEFAULT_N)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Render the quality, utility and spectrum panels of a report.
    Report {
        report: PathBuf,
        #[arg(long, value_enum, default_value = "svg")]
        format: FormatArg,
        /// Output directory (defaults to a `plots` directory next to the report).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error(transparent)]
    Simulate(#[from] SimulateError),
    #[error(transparent)]
    Validate(#[from] ValidateError),
    #[error(transparent)]
    Args(#[from] clap::Error),
}

fn threads(flag: Option<usize>) -> Result<usize, AnalysisError> {
    analysis::resolve_threads(flag, std::env::var(THREADS_ENV).ok().as_deref())
}

/// Parses `args` (including the program name) and runs the command,
/// writing progress lines to `stdout`.
pub fn run<I, T>(args: I, stdout: &mut impl Write) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args)?;
    let mut say = |line: String| {
        let _ = writeln!(stdout, "{line}");
    };
    match cli.command {
        Command::Analyze {
            manifest,
            split,
            qr,
            epsilon,
            kmax,
            subsample,
            out,
            threads: flag,
        } => {
            let options = AnalysisOptions {
                split: match split {
                    SplitArg::Train => Split::Train,
                    SplitArg::Test => Split::Test,
                },
                qr: qr == Toggle::On,
                epsilon,
                kmax,
                subsample,
                threads: threads(flag)?,
            };
            options.validate()?;
            let run = load_run(&manifest)?;
            for w in &run.warnings {
                say(format!("warning: {w}"));
            }
            let sha = file_sha256(&manifest)?;
            let report = analysis::analyze_run(&run, &sha, &options)?;
            for path in report::write_analysis(&report, &out)? {
                say(format!("wrote {}", path.display()));
            }
        }
        Command::Simulate { spec, out } => {
            let parsed = simulate::read_spec(&spec)?;
            let path = simulate::simulate(&parsed, &out)?;
            say(format!("wrote {}", path.display()));
        }
        Command::Validate {
            alpha,
            p,
            n,
            seed,
            out,
            threads: flag,
        } => {
            let (summaries, written) = validate::run_validation(&alpha, p, n, seed, threads(flag)?, &out)?;
            for s in &summaries {
                say(format!(
                    "alpha {}: max eigenvalue error (k <= p/2) {:.3e}, max function-space error {:.3}, spearman {}, {:.1} s",
                    s.alpha,
                    s.max_eigenvalue_error_head,
                    s.max_function_space_error,
                    s.eigenfunction_spearman.map_or("n/a".into(), |r| format!("{r:.3}")),
                    s.seconds
                ));
            }
            for path in written {
                say(format!("wrote {}", path.display()));
            }
        }
        Command::Report { report: path, format, out } => {
            let parsed = report::read_report(&path)?;
            let out = out.unwrap_or_else(|| path.parent().unwrap_or(Path::new(".")).join("plots"));
            let format = match format {
                FormatArg::Svg => PlotFormat::Svg,
                FormatArg::Csv => PlotFormat::Csv,
            };
            for p in report::render(&parsed, &path, format, &out)? {
                say(format!("wrote {}", p.display()));
            }
        }
    }
    Ok(())
}
