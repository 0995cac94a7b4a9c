//! Command-line flags, config files and their merge into experiment specs.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{ArgAction, Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use lrmc::experiments::{Algorithm, ExperimentSpec};

use crate::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "lrmc",
    version,
    about = "Gradient descent experiments for low-rank matrix completion"
)]
pub struct Cli {
    /// More log output; repeat for more detail.
    #[arg(short, long, action = ArgAction::Count, global = true)]
    pub verbose: u8,
    /// Errors only.
    #[arg(short, long, global = true, conflicts_with = "verbose")]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Relative error, distance and balancing term per iteration on one instance.
    Converge(ExperimentArgs),
    /// Success rates over a (p, r) grid and the 50% contour.
    Phase(PhaseArgs),
    /// Mean and median wall time to reach relative error 1e-8.
    Timing(ExperimentArgs),
    /// Contraction, balancing drift, leave-one-out and concentration checks.
    Theory(TheoryArgs),
    /// Render a convergence or phase CSV as SVG.
    Plot(PlotArgs),
}

fn parse_range<T: std::str::FromStr>(
    s: &str,
    ok: impl Fn(&T) -> bool,
    expect: &str,
) -> Result<T, String> {
    let v: T = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if ok(&v) {
        Ok(v)
    } else {
        Err(format!("{s} {expect}"))
    }
}

fn positive_int(s: &str) -> Result<usize, String> {
    parse_range(s, |&v: &usize| v >= 1, "must be at least 1")
}

fn rate(s: &str) -> Result<f64, String> {
    parse_range(s, |&v: &f64| v > 0.0 && v <= 1.0, "must lie in (0, 1]")
}

fn positive(s: &str) -> Result<f64, String> {
    parse_range(s, |&v: &f64| v > 0.0 && v.is_finite(), "must be positive")
}

fn condition(s: &str) -> Result<f64, String> {
    parse_range(
        s,
        |&v: &f64| v >= 1.0 && v.is_finite(),
        "must be at least 1",
    )
}

/// Flags shared by every experiment. Unset flags fall back to the config
/// file, then to the defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct ExperimentArgs {
    /// key=value file with the same names as the flags; flags win.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Rows of the planted matrix
    #[arg(long, value_parser = positive_int)]
    pub d1: Option<usize>,
    /// Columns of the planted matrix
    #[arg(long, value_parser = positive_int)]
    pub d2: Option<usize>,
    /// Target rank.
    #[arg(long, value_parser = positive_int)]
    pub r: Option<usize>,
    /// Sampling rate.
    #[arg(long, value_parser = rate)]
    pub p: Option<f64>,
    /// Condition number of the planted matrix.
    #[arg(long, value_parser = condition)]
    pub kappa: Option<f64>,
    /// Step size [default: 0.5].
    #[arg(long, value_parser = positive)]
    pub s: Option<f64>,
    /// Comma-separated regularization weights for RGD.
    #[arg(long, value_delimiter = ',', value_parser = positive)]
    pub lambda: Option<Vec<f64>>,
    /// Monte Carlo trials [default: 50].
    #[arg(long, value_parser = positive_int)]
    pub trials: Option<usize>,
    /// Master seed; falls back to LRMC_SEED, then 0.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Stop once the relative error drops below this [default: 1e-14].
    #[arg(long, value_parser = positive)]
    pub tol: Option<f64>,
    /// Iteration cap per run
    #[arg(long, value_parser = positive_int)]
    pub max_iters: Option<usize>,
    /// Comma-separated subset of VGD, RGD, BGD.
    #[arg(long, value_delimiter = ',')]
    pub algs: Option<Vec<Algorithm>>,
    /// Worker threads; 0 uses every core.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Output directory [default: out].
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct PhaseArgs {
    #[command(flatten)]
    pub common: ExperimentArgs,
    /// Comma-separated sampling rates, increasing.
    #[arg(long, value_delimiter = ',', value_parser = rate)]
    pub p_grid: Option<Vec<f64>>,
    /// Comma-separated ranks, increasing.
    #[arg(long, value_delimiter = ',', value_parser = positive_int)]
    pub r_grid: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct TheoryArgs {
    #[command(flatten)]
    pub common: ExperimentArgs,
    /// Leave-one-out rows and columns to run, each evenly spaced [default: 4].
    #[arg(long)]
    pub selectors: Option<usize>,
    /// Evaluate the checks every this many iterations [default: 1].
    #[arg(long, value_parser = positive_int)]
    pub stride: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PlotKind {
    /// Relative error against iteration, one line per run.
    Lines,
    /// Success rate per (p, r) cell with the 50% contour.
    Heatmap,
}

#[derive(Debug, Clone, Args)]
pub struct PlotArgs {
    /// Convergence or phase CSV.
    pub csv: PathBuf,
    /// Chart type; inferred from the CSV header when omitted.
    #[arg(long, value_enum)]
    pub kind: Option<PlotKind>,
    /// SVG path [default: the CSV path with an .svg extension].
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

/// A config-file setting on one of the argument structs.
trait Merge: Sized {
    fn merge(self, fallback: Self) -> Self;
    fn config(&self) -> Option<&Path>;
}

impl Merge for ExperimentArgs {
    fn merge(self, f: Self) -> Self {
        Self {
            config: self.config.or(f.config),
            d1: self.d1.or(f.d1),
            d2: self.d2.or(f.d2),
            r: self.r.or(f.r),
            p: self.p.or(f.p),
            kappa: self.kappa.or(f.kappa),
            s: self.s.or(f.s),
            lambda: self.lambda.or(f.lambda),
            trials: self.trials.or(f.trials),
            seed: self.seed.or(f.seed),
            tol: self.tol.or(f.tol),
            max_iters: self.max_iters.or(f.max_iters),
            algs: self.algs.or(f.algs),
            jobs: self.jobs.or(f.jobs),
            out: self.out.or(f.out),
        }
    }

    fn config(&self) -> Option<&Path> {
        self.config.as_deref()
    }
}

impl Merge for PhaseArgs {
    fn merge(self, f: Self) -> Self {
        Self {
            common: self.common.merge(f.common),
            p_grid: self.p_grid.or(f.p_grid),
            r_grid: self.r_grid.or(f.r_grid),
        }
    }

    fn config(&self) -> Option<&Path> {
        self.common.config()
    }
}

impl Merge for TheoryArgs {
    fn merge(self, f: Self) -> Self {
        Self {
            common: self.common.merge(f.common),
            selectors: self.selectors.or(f.selectors),
            stride: self.stride.or(f.stride),
        }
    }

    fn config(&self) -> Option<&Path> {
        self.common.config()
    }
}

/// Turns `key = value` lines into `--key value` arguments. Blank lines and
/// lines starting with `#` are skipped.
fn config_argv(path: &Path, text: &str) -> Result<Vec<String>, CliError> {
    let mut argv = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CliError::Usage(format!(
                "{}:{}: expected `key = value`, found `{line}`",
                path.display(),
                n + 1
            ))
        })?;
        let key = key.trim();
        if key == "config" {
            return Err(CliError::Usage(format!(
                "{}:{}: config files cannot include other config files",
                path.display(),
                n + 1
            )));
        }
        argv.push(format!("--{}", key.replace('_', "-")));
        argv.push(value.trim().to_owned());
    }
    Ok(argv)
}

fn with_config<T: Args + FromArgMatches + Merge>(flags: T) -> Result<T, CliError> {
    let Some(path) = flags.config().map(Path::to_path_buf) else {
        return Ok(flags);
    };
    let text = fs::read_to_string(&path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let argv = config_argv(&path, &text)?;
    let cmd = T::augment_args(clap::Command::new("config").no_binary_name(true));
    let from_file = cmd
        .try_get_matches_from(argv)
        .and_then(|m| T::from_arg_matches(&m))
        .map_err(|e| {
            let msg = e.render().to_string();
            let first = msg.lines().next().unwrap_or("invalid setting");
            CliError::Usage(format!("in config {}: {first}", path.display()))
        })?;
    Ok(flags.merge(from_file))
}

/// A fully resolved invocation.
#[derive(Debug, Clone)]
pub struct Invocation {
    pub verbosity: log::LevelFilter,
    pub task: Task,
}

#[derive(Debug, Clone)]
pub enum Task {
    Converge {
        spec: ExperimentSpec,
        out: PathBuf,
    },
    Phase {
        spec: ExperimentSpec,
        algorithm: Algorithm,
        out: PathBuf,
    },
    Timing {
        spec: ExperimentSpec,
        out: PathBuf,
    },
    Theory {
        spec: ExperimentSpec,
        selectors: usize,
        stride: usize,
        out: PathBuf,
    },
    Plot {
        csv: PathBuf,
        kind: Option<PlotKind>,
        out: PathBuf,
    },
}

fn build_spec(
    args: &ExperimentArgs,
    env_seed: Option<&str>,
) -> Result<(ExperimentSpec, PathBuf), CliError> {
    let d = ExperimentSpec::default();
    let seed = match (args.seed, env_seed) {
        (Some(seed), _) => seed,
        (None, Some(raw)) => raw.trim().parse().map_err(|_| {
            CliError::Usage(format!("LRMC_SEED = `{raw}` is not an unsigned integer"))
        })?,
        (None, None) => d.master_seed,
    };
    let spec = ExperimentSpec {
        d1: args.d1.unwrap_or(d.d1),
        d2: args.d2.unwrap_or(d.d2),
        r: args.r.unwrap_or(d.r),
        kappa: args.kappa.unwrap_or(d.kappa),
        p: args.p.unwrap_or(d.p),
        step: args.s.unwrap_or(d.step),
        lambdas: args.lambda.clone().unwrap_or(d.lambdas),
        trials: args.trials.unwrap_or(d.trials),
        master_seed: seed,
        algorithms: args.algs.clone().unwrap_or(d.algorithms),
        tol: args.tol.unwrap_or(d.tol),
        max_iters: args.max_iters.unwrap_or(d.max_iters),
        jobs: args.jobs.unwrap_or(d.jobs),
        ..d
    };
    if spec.r > spec.d1.min(spec.d2) {
        return Err(CliError::Usage(format!(
            "invalid value for --r: rank {} exceeds min(d1, d2) = {}",
            spec.r,
            spec.d1.min(spec.d2)
        )));
    }
    if spec.lambdas.is_empty() {
        return Err(CliError::Usage(
            "invalid value for --lambda: empty list".into(),
        ));
    }
    if spec.algorithms.is_empty() {
        return Err(CliError::Usage(
            "invalid value for --algs: empty list".into(),
        ));
    }
    Ok((
        spec,
        args.out.clone().unwrap_or_else(|| PathBuf::from("out")),
    ))
}

fn single_algorithm(spec: &mut ExperimentSpec, explicit: bool) -> Result<Algorithm, CliError> {
    if !explicit {
        spec.algorithms = vec![Algorithm::Vgd];
    }
    match spec.algorithms.as_slice() {
        [alg] => Ok(*alg),
        _ => Err(CliError::Usage(
            "invalid value for --algs: this command runs a single algorithm".into(),
        )),
    }
}

fn validated(spec: ExperimentSpec) -> Result<ExperimentSpec, CliError> {
    spec.validate()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(spec)
}

/// Parses `argv` (program name first). `env_seed` is the value of
/// `LRMC_SEED`, used when neither a flag nor the config file sets the seed.
pub fn parse_args<I, T>(argv: I, env_seed: Option<&str>) -> Result<Invocation, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::command()
        .try_get_matches_from(argv)
        .and_then(|m| Cli::from_arg_matches(&m))
        .map_err(CliError::Clap)?;
    let verbosity = match (cli.quiet, cli.verbose) {
        (true, _) => log::LevelFilter::Error,
        (false, 0) => log::LevelFilter::Warn,
        (false, 1) => log::LevelFilter::Info,
        (false, 2) => log::LevelFilter::Debug,
        (false, _) => log::LevelFilter::Trace,
    };
    let task = match cli.command {
        Command::Converge(args) => {
            let args = with_config(args)?;
            let (spec, out) = build_spec(&args, env_seed)?;
            Task::Converge {
                spec: validated(spec)?,
                out,
            }
        }
        Command::Timing(args) => {
            let args = with_config(args)?;
            let (spec, out) = build_spec(&args, env_seed)?;
            Task::Timing {
                spec: validated(spec)?,
                out,
            }
        }
        Command::Phase(args) => {
            let args = with_config(args)?;
            let (mut spec, out) = build_spec(&args.common, env_seed)?;
            let algorithm = single_algorithm(&mut spec, args.common.algs.is_some())?;
            if let Some(grid) = args.p_grid {
                spec.p_grid = grid;
            }
            if let Some(grid) = args.r_grid {
                spec.r_grid = grid;
            }
            Task::Phase {
                spec: validated(spec)?,
                algorithm,
                out,
            }
        }
        Command::Theory(args) => {
            let args = with_config(args)?;
            let (mut spec, out) = build_spec(&args.common, env_seed)?;
            single_algorithm(&mut spec, false)?;
            Task::Theory {
                spec: validated(spec)?,
                selectors: args.selectors.unwrap_or(4),
                stride: args.stride.unwrap_or(1),
                out,
            }
        }
        Command::Plot(args) => {
            let out = args.out.unwrap_or_else(|| args.csv.with_extension("svg"));
            Task::Plot {
                csv: args.csv,
                kind: args.kind,
                out,
            }
        }
    };
    Ok(Invocation { verbosity, task })
}
