//! Command-line interface.
//!
//! Exit codes: 0 success, 2 usage, 3 data, 4 numeric. `WSBART_THREADS` sets
//! the worker-thread count.

mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, CommandFactory, Parser, Subcommand};

use crate::error::{Error, ErrorClass, Result};
use crate::regression::MethodVariant;
use crate::simulation::ResponseFn;
use config::ConfigFile;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

pub const THREADS_ENV: &str = "WSBART_THREADS";

pub fn exit_code(class: ErrorClass) -> i32 {
    match class {
        ErrorClass::Usage => EXIT_USAGE,
        ErrorClass::Data => EXIT_DATA,
        ErrorClass::Numeric => EXIT_NUMERIC,
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "wsbart",
    version,
    about = "Weighted soft BART for asynchronous longitudinal data"
)]
pub struct Cli {
    /// INI-style config file; command-line flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic train/test split.
    Simulate(SimulateArgs),
    /// Fit a model and write a binary artifact plus a JSON fit report.
    Fit(FitArgs),
    /// Predict from a saved artifact.
    Predict(PredictArgs),
    /// Cross-validated bandwidth search.
    SearchBandwidth(SearchBandwidthArgs),
    /// Cross-validated lag search.
    SearchLag(SearchLagArgs),
    /// Repeated simulation comparing methods.
    Experiment(ExperimentArgs),
}

/// Comma-separated numbers; entries ending in `%` are divided by 100.
#[derive(Debug, Clone, PartialEq)]
pub struct NumberList(pub Vec<f64>);

impl FromStr for NumberList {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let values = s
            .split(',')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(parse_number)
            .collect::<std::result::Result<Vec<_>, _>>()?;
        if values.is_empty() {
            return Err("empty list".into());
        }
        Ok(NumberList(values))
    }
}

fn parse_number(s: &str) -> std::result::Result<f64, String> {
    let (body, scale) = match s.strip_suffix('%') {
        Some(b) => (b.trim(), 0.01),
        None => (s, 1.0),
    };
    let v: f64 = body.parse().map_err(|_| format!("not a number: {s:?}"))?;
    if !v.is_finite() {
        return Err(format!("not finite: {s:?}"));
    }
    Ok(v * scale)
}

/// `default`, `search`, an absolute bandwidth, or an inclusion fraction
/// written `inclusion:0.2` or `20%`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BandwidthArg {
    Default,
    Search,
    Fixed(f64),
    Inclusion(f64),
}

impl FromStr for BandwidthArg {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let s = s.trim();
        match s {
            "default" => Ok(BandwidthArg::Default),
            "search" => Ok(BandwidthArg::Search),
            _ => {
                if let Some(v) = s.strip_prefix("inclusion:") {
                    Ok(BandwidthArg::Inclusion(parse_number(v.trim())?))
                } else if s.ends_with('%') {
                    Ok(BandwidthArg::Inclusion(parse_number(s)?))
                } else {
                    Ok(BandwidthArg::Fixed(parse_number(
                        s.strip_prefix("fixed:").unwrap_or(s),
                    )?))
                }
            }
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct PolicyArgs {
    /// default | search | <h> | inclusion:<fraction> | <percent>%
    #[arg(long, default_value = "default")]
    pub bandwidth: BandwidthArg,
    /// Search grid as pair-inclusion fractions (or percentages).
    #[arg(long, value_name = "LIST")]
    pub grid: Option<NumberList>,
    /// Search grid as absolute bandwidths.
    #[arg(long = "grid-h", value_name = "LIST")]
    pub grid_h: Option<NumberList>,
    /// Fixed lag subtracted from response times before pairing.
    #[arg(long)]
    pub lag: Option<f64>,
    /// Lag grid; enables lag search.
    #[arg(long = "lag-grid", value_name = "LIST")]
    pub lag_grid: Option<NumberList>,
}

#[derive(Debug, Clone, Args)]
pub struct SamplerArgs {
    #[arg(long)]
    pub trees: Option<usize>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long = "burn-in")]
    pub burn_in: Option<usize>,
    #[arg(long)]
    pub thin: Option<usize>,
    /// Trees for hard-tree methods.
    #[arg(long = "hard-trees")]
    pub hard_trees: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Cross-validation folds over subjects.
    #[arg(long)]
    pub folds: Option<usize>,
    /// Fraction of interpolated cases kept in the validation pool.
    #[arg(long = "pool-fraction")]
    pub pool_fraction: Option<f64>,
    /// Distance-ordered voting groups.
    #[arg(long)]
    pub groups: Option<usize>,
    #[arg(long = "cv-iterations")]
    pub cv_iterations: Option<usize>,
    #[arg(long = "cv-burn-in")]
    pub cv_burn_in: Option<usize>,
    #[arg(long = "cv-trees")]
    pub cv_trees: Option<usize>,
}

#[derive(Debug, Clone, Args)]
#[command(args_override_self = true)]
pub struct SimulateArgs {
    /// Response function f1..f5.
    #[arg(long = "fn", default_value = "f1")]
    pub function: ResponseFn,
    /// Number of subjects.
    #[arg(long, default_value_t = 300)]
    pub n: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub lag: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    /// gp | gp-sine
    #[arg(long, default_value = "gp")]
    pub covariate: String,
    /// Poisson mean of the extra observation count per subject.
    #[arg(long, default_value_t = 5.0)]
    pub intensity: f64,
    #[arg(long = "train-fraction", default_value_t = 0.7)]
    pub train_fraction: f64,
    /// Output directory for train.csv, test.csv and truth.csv.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
#[command(args_override_self = true)]
pub struct FitArgs {
    /// Long-format training CSV.
    #[arg(long)]
    pub data: PathBuf,
    /// Method tag, e.g. wsb-st, wsb-dt, locf-b, li.
    #[arg(long, default_value = "wsb-st")]
    pub method: MethodVariant,
    #[command(flatten)]
    pub policy: PolicyArgs,
    #[command(flatten)]
    pub sampler: SamplerArgs,
    /// Artifact path.
    #[arg(long, default_value = "model.wsb")]
    pub out: PathBuf,
    /// Fit report path (JSON); defaults to the artifact path plus `.json`.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
#[command(args_override_self = true)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Query CSV with the model's covariate columns and `t` (and optionally `s`).
    #[arg(long)]
    pub queries: Option<PathBuf>,
    /// Output CSV; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value = "0.05,0.5,0.95")]
    pub levels: NumberList,
    /// Feature to sweep for a marginal-effect table.
    #[arg(long)]
    pub sweep: Option<String>,
    #[arg(long, default_value_t = 0.0)]
    pub from: f64,
    #[arg(long, default_value_t = 1.0)]
    pub to: f64,
    #[arg(long, default_value_t = 100)]
    pub points: usize,
    /// Fixed values of the other features, `name=value,...`.
    #[arg(long)]
    pub at: Option<String>,
}

#[derive(Debug, Clone, Args)]
#[command(args_override_self = true)]
pub struct SearchBandwidthArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "wsb-st")]
    pub method: MethodVariant,
    #[command(flatten)]
    pub policy: PolicyArgs,
    #[command(flatten)]
    pub sampler: SamplerArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
#[command(args_override_self = true)]
pub struct SearchLagArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "wsb-st")]
    pub method: MethodVariant,
    #[command(flatten)]
    pub policy: PolicyArgs,
    #[command(flatten)]
    pub sampler: SamplerArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
#[command(args_override_self = true)]
pub struct ExperimentArgs {
    #[arg(long = "fn", default_value = "f1")]
    pub function: ResponseFn,
    #[arg(long, default_value_t = 300)]
    pub n: usize,
    #[arg(long, default_value_t = 10)]
    pub replicates: usize,
    /// Comma-separated method tags.
    #[arg(long, default_value = "wsb-st,locf-s,locf-b,li,nwt,wtstd")]
    pub methods: String,
    /// gp | gp-sine
    #[arg(long, default_value = "gp")]
    pub covariate: String,
    /// Simulation lag; defaults to the function's own.
    #[arg(long = "sim-lag")]
    pub sim_lag: Option<f64>,
    #[command(flatten)]
    pub policy: PolicyArgs,
    #[command(flatten)]
    pub sampler: SamplerArgs,
    /// Output directory for experiment.csv and the box plot.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

/// Inserts config-file arguments right after the subcommand name so that
/// explicit flags, which come later, override them.
fn merge_config(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let mut config_path = None;
    let mut sub_pos = None;
    let names: Vec<String> = Cli::command()
        .get_subcommands()
        .map(|c| c.get_name().to_string())
        .collect();
    let mut i = 1;
    while i < args.len() {
        let a = args[i].to_string_lossy();
        if a == "--config" {
            config_path = args.get(i + 1).cloned();
            i += 2;
            continue;
        }
        if let Some(v) = a.strip_prefix("--config=") {
            config_path = Some(OsString::from(v));
        } else if sub_pos.is_none() && names.iter().any(|n| *n == a) {
            sub_pos = Some(i);
        }
        i += 1;
    }
    let (Some(path), Some(pos)) = (config_path, sub_pos) else {
        return Ok(args);
    };
    let text = std::fs::read_to_string(&path)?;
    let config = ConfigFile::parse(&text)?;
    let sub = args[pos].to_string_lossy().to_string();
    let cmd = Cli::command();
    let sc = cmd.find_subcommand(&sub).expect("known subcommand");
    let known: Vec<String> = sc
        .get_arguments()
        .filter_map(|a| a.get_long().map(str::to_string))
        .collect();
    let extra = config.args_for(&sub, |k| known.iter().any(|n| n == k));
    let mut merged: Vec<OsString> = args[..=pos].to_vec();
    merged.extend(extra.into_iter().map(OsString::from));
    merged.extend(args[pos + 1..].iter().cloned());
    Ok(merged)
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::InvalidInput(format!("{THREADS_ENV} must be a positive integer, got {value:?}")))?;
    // A global pool may already exist when running in-process more than once.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run(args: impl IntoIterator<Item = impl Into<OsString>>) -> i32 {
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let merged = match merge_config(args) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("error: {e}");
            return match e {
                Error::Io(_) => EXIT_USAGE,
                other => exit_code(other.class()),
            };
        }
    };
    let cli = match Cli::try_parse_from(merged) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return EXIT_USAGE;
    }
    match commands::dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(e.class())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn number_lists() {
        assert_eq!("0.1, 0.2,".parse::<NumberList>().unwrap().0, vec![0.1, 0.2]);
        assert_eq!("10%,20%".parse::<NumberList>().unwrap().0, vec![0.1, 0.2]);
        assert!("".parse::<NumberList>().is_err());
        assert!("a".parse::<NumberList>().is_err());
        assert!("inf".parse::<NumberList>().is_err());
    }

    #[test]
    fn bandwidth_args() {
        assert_eq!("default".parse::<BandwidthArg>().unwrap(), BandwidthArg::Default);
        assert_eq!("search".parse::<BandwidthArg>().unwrap(), BandwidthArg::Search);
        assert_eq!("0.05".parse::<BandwidthArg>().unwrap(), BandwidthArg::Fixed(0.05));
        assert_eq!("20%".parse::<BandwidthArg>().unwrap(), BandwidthArg::Inclusion(0.2));
        assert_eq!(
            "inclusion:0.3".parse::<BandwidthArg>().unwrap(),
            BandwidthArg::Inclusion(0.3)
        );
        assert!("wide".parse::<BandwidthArg>().is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn config_arguments_precede_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.ini");
        std::fs::write(&path, "seed = 9\nbogus = 1\n[fit]\ntrees = 7\n").unwrap();
        let args: Vec<OsString> = ["wsbart", "--config", path.to_str().unwrap(), "fit", "--trees", "3"]
            .iter()
            .map(OsString::from)
            .collect();
        let merged = merge_config(args).unwrap();
        let tail: Vec<String> = merged[4..].iter().map(|s| s.to_string_lossy().into()).collect();
        assert_eq!(tail, vec!["--seed", "9", "--trees", "7", "--trees", "3"]);
        let cli = Cli::try_parse_from(
            merged
                .into_iter()
                .chain(["--data", "d.csv"].map(OsString::from))
                .collect::<Vec<_>>(),
        )
        .unwrap();
        let Command::Fit(fit) = cli.command else { panic!() };
        assert_eq!((fit.sampler.trees, fit.sampler.seed), (Some(3), 9));
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(run(["wsbart", "fit"]), EXIT_USAGE);
        assert_eq!(run(["wsbart", "frobnicate"]), EXIT_USAGE);
        assert_eq!(run(["wsbart", "--help"]), EXIT_OK);
    }
}
