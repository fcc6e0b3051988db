//! Command-line front end.
//!
//! Exit codes: 0 success, 2 usage error, 3 data error, 4 solver failure.

pub mod data;
pub mod emit;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::bootstrap::{band, BandTarget, Resampling};
use crate::error::{Error, Result};
use crate::fit::{fit, FitConfig, Method, Smoothing, SqrFit};
use crate::selection::{default_epsilon, default_spar_grid, select_spar, CriterionCurve, CriterionKind};
use crate::simlab::{run_mc, McConfig, ModelKind};
use crate::splines::QuantileGrid;

use data::{load_csv, parse_lag_spec, read_numbers, ColumnTransform, DataSpec, LoadedData};
use emit::{sidecar_path, write_curve, write_fit, write_mc, write_sidecar, Sidecar, SCHEMA_VERSION};

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_SOLVER: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "sqr", version, about = "Spline quantile regression")]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// More logging; repeat for debug output.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit coefficient functions on a quantile grid.
    Fit(FitArgs),
    /// Ordinary quantile regression at each grid level.
    Qr(QrArgs),
    /// AIC/BIC curve over a spar grid.
    Select(SelectArgs),
    /// Pointwise bootstrap band.
    Boot(BootArgs),
    /// Monte Carlo comparison on a simulation model.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodArg {
    Linear,
    Cubic,
    Qr,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Linear => Method::SqrLinear,
            MethodArg::Cubic => Method::SqrCubic,
            MethodArg::Qr => Method::Qr,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CriterionArg {
    Aic,
    Bic,
}

impl From<CriterionArg> for CriterionKind {
    fn from(c: CriterionArg) -> Self {
        match c {
            CriterionArg::Aic => CriterionKind::Aic,
            CriterionArg::Bic => CriterionKind::Bic,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum ModelArg {
    #[value(name = "14")]
    #[serde(rename = "14")]
    Linear,
    #[value(name = "15")]
    #[serde(rename = "15")]
    Qar,
    #[value(name = "17")]
    #[serde(rename = "17")]
    RandomCoef,
}

impl From<ModelArg> for ModelKind {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Linear => ModelKind::Linear14,
            ModelArg::Qar => ModelKind::Qar15,
            ModelArg::RandomCoef => ModelKind::RanCoef17,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DataArgs {
    /// Headed CSV file.
    #[arg(long)]
    pub input: PathBuf,
    /// Response column.
    #[arg(long)]
    pub y: String,
    /// Regressor columns, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub x: Vec<String>,
    /// Lagged regressors such as "x:1,y:1" (lags 1..=k of each column).
    #[arg(long)]
    pub lag: Option<String>,
    /// Prepend an intercept column (default).
    #[arg(long, overrides_with = "no_intercept")]
    #[serde(skip)]
    pub intercept: bool,
    #[arg(long = "no-intercept")]
    pub no_intercept: bool,
    /// Subtract column means from regressors.
    #[arg(long)]
    pub center_x: bool,
    /// Divide regressors by their standard deviations.
    #[arg(long)]
    pub scale_x: bool,
}

impl DataArgs {
    fn spec(&self) -> Result<DataSpec> {
        Ok(DataSpec {
            y: self.y.clone(),
            x: self.x.clone(),
            lags: self.lag.as_deref().map(parse_lag_spec).transpose()?.unwrap_or_default(),
            intercept: !self.no_intercept,
            center_x: self.center_x,
            scale_x: self.scale_x,
        })
    }

    fn load(&self) -> Result<LoadedData> {
        let loaded = load_csv(&self.input, &self.spec()?)?;
        log::info!("loaded {} rows, {} regressors", loaded.dataset.n(), loaded.dataset.p());
        Ok(loaded)
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GridArgs {
    #[arg(long, default_value_t = 0.05)]
    pub tau_min: f64,
    #[arg(long, default_value_t = 0.95)]
    pub tau_max: f64,
    #[arg(long, default_value_t = 0.05)]
    pub tau_step: f64,
}

impl GridArgs {
    fn grid(&self) -> Result<QuantileGrid> {
        QuantileGrid::from_range(self.tau_min, self.tau_max, self.tau_step)
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SmoothArgs {
    #[arg(long, value_enum, default_value_t = MethodArg::Cubic)]
    pub method: MethodArg,
    /// Smoothing level on the spar scale.
    #[arg(long, allow_hyphen_values = true, conflicts_with = "auto")]
    pub spar: Option<f64>,
    /// Choose spar by minimizing this criterion.
    #[arg(long, value_enum)]
    pub auto: Option<CriterionArg>,
    /// Spar candidates for --auto: "a:b:step" or a comma list.
    #[arg(long, allow_hyphen_values = true)]
    pub spar_grid: Option<String>,
    /// File with one knot weight per grid level.
    #[arg(long)]
    pub weights: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub grid: GridArgs,
    #[command(flatten)]
    pub smooth: SmoothArgs,
    /// Output CSV; the JSON sidecar goes next to it. Stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct QrArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SelectArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long, value_enum, default_value_t = MethodArg::Cubic)]
    pub method: MethodArg,
    #[arg(long, value_enum, default_value_t = CriterionArg::Bic)]
    pub auto: CriterionArg,
    #[arg(long, allow_hyphen_values = true)]
    pub spar_grid: Option<String>,
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BootArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub grid: GridArgs,
    #[command(flatten)]
    pub smooth: SmoothArgs,
    /// Number of bootstrap replicates.
    #[arg(long = "boot", default_value_t = 1000)]
    pub b: usize,
    /// Moving-block length; defaults to 10 with --lag and to pair sampling otherwise.
    #[arg(long)]
    pub block_len: Option<usize>,
    /// Band the derivative instead of the coefficient.
    #[arg(long)]
    pub deriv: bool,
    /// Nominal pointwise coverage.
    #[arg(long, default_value_t = 0.9)]
    pub level: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub model: ModelArg,
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    #[arg(long, default_value_t = 200)]
    pub runs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Spline methods to sweep.
    #[arg(long = "method", value_enum, value_delimiter = ',', default_values_t = [MethodArg::Linear, MethodArg::Cubic])]
    pub methods: Vec<MethodArg>,
    #[arg(long, allow_hyphen_values = true)]
    pub spar_grid: Option<String>,
    /// Also fit on every k-th level of the grid, evaluated on the full grid.
    #[arg(long)]
    pub subset_step: Option<usize>,
    /// Record the MAE at the AIC and BIC choices.
    #[arg(long)]
    pub criteria: bool,
    /// Override the model's reference grid.
    #[arg(long, requires_all = ["tau_max", "tau_step"])]
    pub tau_min: Option<f64>,
    #[arg(long)]
    pub tau_max: Option<f64>,
    #[arg(long)]
    pub tau_step: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `"a:b:step"` or a comma list.
pub fn parse_spar_grid(spec: &str) -> Result<Vec<f64>> {
    let bad = || Error::InvalidInput(format!("bad spar grid '{spec}'"));
    let parse = |s: &str| s.trim().parse::<f64>().map_err(|_| bad());
    if let [a, b, step] = spec.split(':').collect::<Vec<_>>()[..] {
        let (a, b, step) = (parse(a)?, parse(b)?, parse(step)?);
        if !(step > 0.0) || !(b >= a) {
            return Err(bad());
        }
        let count = ((b - a) / step + 1e-9).floor() as usize;
        return Ok((0..=count).map(|i| ((a + i as f64 * step) * 1e10).round() / 1e10).collect());
    }
    spec.split(',').map(parse).collect()
}

fn spar_grid_or_default(spec: Option<&str>) -> Result<Vec<f64>> {
    spec.map(parse_spar_grid).transpose().map(|g| g.unwrap_or_else(default_spar_grid))
}

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_solver_failure() {
        return EXIT_SOLVER;
    }
    match e {
        Error::Data(_) | Error::Csv(_) | Error::Io(_) | Error::Json(_) | Error::DegenerateScale(_) | Error::Criterion(_) => {
            EXIT_DATA
        }
        Error::Level { source, .. } => exit_code(source),
        _ => EXIT_USAGE,
    }
}

fn open_out(out: Option<&PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(std::io::BufWriter::new(std::fs::File::create(p)?)),
        None => Box::new(std::io::stdout().lock()),
    })
}

#[derive(Debug, Serialize)]
struct DataSummary<'a> {
    n: usize,
    columns: &'a [String],
    dropped_rows: usize,
    transforms: &'a [ColumnTransform],
}

impl<'a> DataSummary<'a> {
    fn new(d: &'a LoadedData) -> Self {
        Self { n: d.dataset.n(), columns: d.dataset.names(), dropped_rows: d.dropped, transforms: &d.transforms }
    }
}

#[derive(Debug, Serialize)]
struct FitDiagnostics<'a> {
    data: DataSummary<'a>,
    method: Method,
    spar: Option<f64>,
    c: f64,
    solver: &'a crate::ipm::SolverReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    selection: Option<&'a CriterionCurve>,
}

impl<'a> FitDiagnostics<'a> {
    fn new(d: &'a LoadedData, f: &'a SqrFit, selection: Option<&'a CriterionCurve>) -> Self {
        Self { data: DataSummary::new(d), method: f.method, spar: f.spar, c: f.c, solver: &f.report, selection }
    }
}

fn sidecar<C: Serialize, D: Serialize>(out: Option<&PathBuf>, command: &str, config: &C, seed: Option<u64>, diagnostics: D) -> Result<()> {
    if let Some(out) = out {
        let s = Sidecar { schema_version: SCHEMA_VERSION, version: env!("CARGO_PKG_VERSION"), command, config, seed, diagnostics };
        write_sidecar(&sidecar_path(out), &s)?;
    }
    Ok(())
}

/// Fit configuration with the smoothing level resolved, running selection for `--auto`.
fn resolve_fit_config(
    loaded: &LoadedData,
    grid: &QuantileGrid,
    s: &SmoothArgs,
) -> Result<(FitConfig, Option<CriterionCurve>)> {
    let method = Method::from(s.method);
    let mut config = FitConfig::new(method);
    if let Some(path) = &s.weights {
        config = config.weights(read_numbers(path)?);
    }
    if method == Method::Qr {
        if s.spar.is_some() || s.auto.is_some() {
            return Err(Error::InvalidInput("--spar and --auto apply to spline methods only".into()));
        }
        return Ok((config, None));
    }
    match (s.spar, s.auto) {
        (Some(spar), _) => Ok((config.smoothing(Smoothing::Spar(spar)), None)),
        (None, Some(kind)) => {
            let data = &loaded.dataset;
            let spar_grid = spar_grid_or_default(s.spar_grid.as_deref())?;
            let curve = select_spar(data, grid, &config, &spar_grid, kind.into(), default_epsilon(data.y().as_slice()))?;
            log::info!("selected spar = {}", curve.chosen_spar);
            Ok((config.smoothing(Smoothing::Spar(curve.chosen_spar)), Some(curve)))
        }
        (None, None) => Err(Error::MissingSmoothing),
    }
}

fn cmd_fit(args: &FitArgs) -> Result<()> {
    let loaded = args.data.load()?;
    let grid = args.grid.grid()?;
    let (config, curve) = resolve_fit_config(&loaded, &grid, &args.smooth)?;
    let f = fit(&loaded.dataset, &grid, &config)?;
    write_fit(open_out(args.out.as_ref())?, &f, None)?;
    sidecar(args.out.as_ref(), "fit", args, None, FitDiagnostics::new(&loaded, &f, curve.as_ref()))
}

fn cmd_qr(args: &QrArgs) -> Result<()> {
    let loaded = args.data.load()?;
    let grid = args.grid.grid()?;
    let f = fit(&loaded.dataset, &grid, &FitConfig::new(Method::Qr))?;
    write_fit(open_out(args.out.as_ref())?, &f, None)?;
    sidecar(args.out.as_ref(), "qr", args, None, FitDiagnostics::new(&loaded, &f, None))
}

fn cmd_select(args: &SelectArgs) -> Result<()> {
    if args.method == MethodArg::Qr {
        return Err(Error::InvalidInput("selection needs --method linear or cubic".into()));
    }
    let loaded = args.data.load()?;
    let grid = args.grid.grid()?;
    let mut config = FitConfig::new(args.method.into());
    if let Some(path) = &args.weights {
        config = config.weights(read_numbers(path)?);
    }
    let data = &loaded.dataset;
    let spar_grid = spar_grid_or_default(args.spar_grid.as_deref())?;
    let curve = select_spar(data, &grid, &config, &spar_grid, args.auto.into(), default_epsilon(data.y().as_slice()))?;
    write_curve(open_out(args.out.as_ref())?, &curve)?;

    #[derive(Serialize)]
    struct Diag<'a> {
        data: DataSummary<'a>,
        chosen_spar: f64,
        chosen_aic: f64,
        chosen_bic: f64,
        failed: &'a [f64],
    }
    let diag = Diag {
        data: DataSummary::new(&loaded),
        chosen_spar: curve.chosen_spar,
        chosen_aic: curve.chosen_aic,
        chosen_bic: curve.chosen_bic,
        failed: &curve.failed,
    };
    sidecar(args.out.as_ref(), "select", args, None, diag)
}

fn cmd_boot(args: &BootArgs) -> Result<()> {
    let loaded = args.data.load()?;
    let grid = args.grid.grid()?;
    let (config, curve) = resolve_fit_config(&loaded, &grid, &args.smooth)?;
    let scheme = match args.block_len {
        Some(1) => Resampling::Pairs,
        Some(len) => Resampling::Blocks(len),
        None if args.data.lag.is_some() => Resampling::Blocks(10),
        None => Resampling::Pairs,
    };
    let target = if args.deriv { BandTarget::Deriv } else { BandTarget::Coef };
    let f = fit(&loaded.dataset, &grid, &config)?;
    let b = band(&loaded.dataset, &grid, &config, args.b, scheme, args.level, target, args.seed)?;
    write_fit(open_out(args.out.as_ref())?, &f, Some(&b))?;

    #[derive(Serialize)]
    struct Diag<'a> {
        fit: FitDiagnostics<'a>,
        target: BandTarget,
        block_len: usize,
        replicates: usize,
        failed_replicates: usize,
    }
    let diag = Diag {
        fit: FitDiagnostics::new(&loaded, &f, curve.as_ref()),
        target,
        block_len: b.block_len,
        replicates: b.b,
        failed_replicates: b.failed,
    };
    sidecar(args.out.as_ref(), "boot", args, Some(args.seed), diag)
}

fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let model: ModelKind = args.model.into();
    let mut cfg = McConfig::new(model, args.n, args.runs, args.seed);
    if let (Some(a), Some(b), Some(step)) = (args.tau_min, args.tau_max, args.tau_step) {
        cfg.grid = QuantileGrid::from_range(a, b, step)?.levels().to_vec();
    }
    if args.methods.contains(&MethodArg::Qr) {
        return Err(Error::InvalidInput("--method lists spline methods; QR is always included".into()));
    }
    cfg.methods = args.methods.iter().map(|&m| m.into()).collect();
    cfg.methods.dedup();
    cfg.spar_grid = spar_grid_or_default(args.spar_grid.as_deref())?;
    cfg.criteria = args.criteria;
    if let Some(k) = args.subset_step {
        if k == 0 {
            return Err(Error::InvalidInput("--subset-step must be positive".into()));
        }
        cfg.subset_grid = Some(cfg.grid.iter().step_by(k).copied().collect());
    }
    let report = run_mc(&cfg)?;
    write_mc(open_out(args.out.as_ref())?, &report)?;
    sidecar(args.out.as_ref(), "simulate", args, Some(args.seed), &report)
}

/// Runs a parsed command line.
pub fn run(cli: &Cli) -> Result<()> {
    if let Some(t) = cli.threads {
        // A pool built earlier in the process is kept.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    match &cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Qr(a) => cmd_qr(a),
        Command::Select(a) => cmd_select(a),
        Command::Boot(a) => cmd_boot(a),
        Command::Simulate(a) => cmd_simulate(a),
    }
}

/// Parses arguments, runs, and returns the exit code.
pub fn main_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).parse_default_env().try_init();
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
