//! Command-line front end: argument definitions, CSV input and the four commands.

use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::{Array1, Array2};
use serde::Serialize;

use crate::calibration::{CalibrationConfig, CalibrationMethod, PriorEffects};
use crate::error::{Error, Result};
use crate::glm::{mean_deviance, Dataset, Family};
use crate::model_io::{format_real, ModelFile, SCHEMA_VERSION};
use crate::numerics::RngStream;
use crate::simulation::{
    concordance_index, relative_test_loss, run_study, write_study_csv, ExternalSimConfig, InternalSimConfig, Scenario,
    StudyMethods,
};
use crate::stacking::{fit_transfer, FitReport, StackConfig, StackMode};

#[derive(Debug, Parser)]
#[command(name = "priorcal", version, about = "Transfer learning for penalised GLMs with calibrated prior effects")]
pub struct Cli {
    /// Cap on worker threads; results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a transfer-learning model to target data and prior effects.
    Fit(FitArgs),
    /// Predict from a saved model.
    Predict(PredictArgs),
    /// Run a simulation study and write per-replicate results.
    Simulate(SimulateArgs),
    /// Score predictions against observed outcomes.
    Evaluate(EvaluateArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FamilyArg {
    Gaussian,
    Binomial,
}

impl From<FamilyArg> for Family {
    fn from(f: FamilyArg) -> Self {
        match f {
            FamilyArg::Gaussian => Family::Gaussian,
            FamilyArg::Binomial => Family::Binomial,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum CalibrationArg {
    Exp,
    Iso,
}

impl From<CalibrationArg> for CalibrationMethod {
    fn from(c: CalibrationArg) -> Self {
        match c {
            CalibrationArg::Exp => CalibrationMethod::Exponential,
            CalibrationArg::Iso => CalibrationMethod::Isotonic,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum StackingArg {
    Sta,
    Sim,
}

impl From<StackingArg> for StackMode {
    fn from(s: StackingArg) -> Self {
        match s {
            StackingArg::Sta => StackMode::Standard,
            StackingArg::Sim => StackMode::Simultaneous,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ProtocolArg {
    External,
    Internal,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Features CSV: header of feature names, one row per sample.
    #[arg(long)]
    pub features: PathBuf,
    /// Target CSV: header and a single column.
    #[arg(long)]
    pub target: PathBuf,
    /// Prior effects CSV: feature name column then one column per source.
    #[arg(long)]
    pub priors: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "gaussian")]
    pub family: FamilyArg,
    #[arg(long, value_enum, default_value = "exp")]
    pub calibration: CalibrationArg,
    #[arg(long, value_enum, default_value = "sta")]
    pub stacking: StackingArg,
    /// Elastic-net mix of the directly estimated coefficients.
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 10)]
    pub folds: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Keep every non-null source regardless of the signed-rank test.
    #[arg(long)]
    pub no_filter: bool,
    /// Comma-separated exponents for exponential calibration.
    #[arg(long, value_delimiter = ',')]
    pub tau_grid: Option<Vec<f64>>,
    /// Output path of the model JSON.
    #[arg(long)]
    pub model: PathBuf,
    /// Output path of the fit report JSON (standard output when absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    /// Write linear predictors instead of means.
    #[arg(long)]
    pub link: bool,
    /// Output CSV (standard output when absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum, default_value = "external")]
    pub protocol: ProtocolArg,
    #[arg(long, value_enum, default_value = "gaussian")]
    pub family: FamilyArg,
    /// Number of transferable sources (external protocol).
    #[arg(long = "Ka", default_value_t = 5)]
    pub ka: usize,
    /// Source/target coefficient difference scale (external protocol).
    #[arg(long, default_value_t = 5.0)]
    pub h: f64,
    /// Number of causal features (external protocol).
    #[arg(long)]
    pub s: Option<usize>,
    #[arg(long, conflicts_with = "sparse")]
    pub dense: bool,
    #[arg(long)]
    pub sparse: bool,
    #[arg(long, default_value_t = 0.95)]
    pub rho_x: f64,
    #[arg(long, default_value_t = 0.99)]
    pub rho_beta: f64,
    /// Expected proportion of causal features (internal protocol).
    #[arg(long)]
    pub pi: Option<f64>,
    /// Signal weight (internal protocol).
    #[arg(long, default_value_t = 0.5)]
    pub w: f64,
    /// Override of the target elastic-net mix.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, default_value_t = 10)]
    pub reps: usize,
    #[arg(long, default_value_t = 10_000)]
    pub n_test: usize,
    #[arg(long, default_value_t = 1000)]
    pub p: usize,
    #[arg(long, default_value_t = 100)]
    pub n_target: usize,
    #[arg(long, default_value_t = 150)]
    pub n_source: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Output CSV (standard output when absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Predictions CSV: header and a single column of predicted means.
    #[arg(long)]
    pub predictions: PathBuf,
    /// Observed outcomes CSV: header and a single column.
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long, value_enum, default_value = "gaussian")]
    pub family: FamilyArg,
    /// Reference mean for the relative loss (mean of the outcomes when absent).
    #[arg(long)]
    pub train_mean: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Numeric table with its header.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

fn parse_cell(text: &str, line: usize, column: &str) -> Result<f64> {
    let v: f64 = text.trim().parse().map_err(|_| {
        Error::Data(format!("line {line}, column '{column}': cannot parse '{text}' as a number"))
    })?;
    if !v.is_finite() {
        return Err(Error::Data(format!("line {line}, column '{column}': non-finite value '{text}'")));
    }
    Ok(v)
}

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path)
        .map_err(|e| Error::Data(format!("cannot open '{}': {e}", path.display())))?;
    Ok(csv::ReaderBuilder::new().has_headers(true).from_reader(file))
}

fn check_unique(names: &[String], what: &str) -> Result<()> {
    let mut seen = HashMap::new();
    for (i, n) in names.iter().enumerate() {
        if let Some(prev) = seen.insert(n.as_str(), i) {
            return Err(Error::Data(format!(
                "duplicate {what} '{n}' in columns {} and {}",
                prev + 1,
                i + 1
            )));
        }
    }
    Ok(())
}

/// Read a numeric CSV; every cell must parse to a finite number.
pub fn read_table(path: &Path) -> Result<Table> {
    let mut rdr = reader(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    check_unique(&header, "column")?;
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        if rec.len() != header.len() {
            return Err(Error::Data(format!(
                "line {line}: expected {} fields, found {}",
                header.len(),
                rec.len()
            )));
        }
        let row = rec
            .iter()
            .zip(&header)
            .map(|(cell, col)| parse_cell(cell, line, col))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(Table { header, rows })
}

/// Features as an `n × p` matrix with their names.
pub fn read_features(path: &Path) -> Result<(Array2<f64>, Vec<String>)> {
    let t = read_table(path)?;
    let (n, p) = (t.rows.len(), t.header.len());
    let x = Array2::from_shape_fn((n, p), |(i, j)| t.rows[i][j]);
    Ok((x, t.header))
}

/// A single-column CSV.
pub fn read_column(path: &Path) -> Result<Array1<f64>> {
    let t = read_table(path)?;
    if t.header.len() != 1 {
        return Err(Error::Data(format!(
            "'{}' must have exactly one column, found {}",
            path.display(),
            t.header.len()
        )));
    }
    Ok(t.rows.into_iter().map(|r| r[0]).collect())
}

/// Prior effects joined to `features` by name. Features absent from the
/// file get effect 0; names not among `features` are an error.
pub fn read_priors(path: &Path, features: &[String]) -> Result<PriorEffects> {
    let mut rdr = reader(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if header.is_empty() {
        return Err(Error::Data("priors file has no columns".into()));
    }
    let sources: Vec<String> = header[1..].to_vec();
    check_unique(&sources, "source")?;
    let index: HashMap<&str, usize> = features.iter().enumerate().map(|(j, n)| (n.as_str(), j)).collect();
    let mut z = Array2::zeros((features.len(), sources.len()));
    let mut seen = vec![false; features.len()];
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        if rec.len() != header.len() {
            return Err(Error::Data(format!(
                "priors line {line}: expected {} fields, found {}",
                header.len(),
                rec.len()
            )));
        }
        let name = rec[0].trim();
        let &j = index.get(name).ok_or_else(|| {
            Error::Data(format!("priors line {line}: feature '{name}' does not appear in the features file"))
        })?;
        if seen[j] {
            return Err(Error::Data(format!("priors line {line}: feature '{name}' listed twice")));
        }
        seen[j] = true;
        for (k, src) in sources.iter().enumerate() {
            z[[j, k]] = parse_cell(&rec[k + 1], line, src)?;
        }
    }
    let missing: Vec<&str> = features
        .iter()
        .zip(&seen)
        .filter(|(_, s)| !**s)
        .map(|(n, _)| n.as_str())
        .collect();
    if !missing.is_empty() {
        log::warn!(
            "{} feature(s) missing from the priors file get prior effect 0: {}",
            missing.len(),
            missing.iter().take(10).copied().collect::<Vec<_>>().join(", ")
        );
    }
    PriorEffects::new(z, sources)
}

fn open_out(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

#[derive(Serialize)]
struct ReportFile<'a> {
    schema_version: u64,
    #[serde(flatten)]
    report: &'a FitReport,
}

pub fn cmd_fit(args: &FitArgs) -> Result<FitReport> {
    let family: Family = args.family.into();
    let (x, names) = read_features(&args.features)?;
    let y = read_column(&args.target)?;
    let data = Dataset::new(x, y, family)?;
    let priors = match &args.priors {
        Some(p) => read_priors(p, &names)?,
        None => PriorEffects::new(Array2::zeros((names.len(), 0)), vec![])?,
    };
    let mut calibration = CalibrationConfig {
        filter: !args.no_filter,
        ..Default::default()
    };
    if let Some(grid) = &args.tau_grid {
        calibration.tau_grid = grid.clone();
    }
    let cfg = StackConfig {
        mode: args.stacking.into(),
        method: args.calibration.into(),
        alpha_target: args.alpha,
        folds: args.folds,
        calibration,
        ..Default::default()
    };
    let (model, report) = fit_transfer(&data, &priors, &cfg, &RngStream::new(args.seed, "fit"))?;
    ModelFile::new(model, names)?.save(&args.model)?;

    let value = serde_json::to_value(ReportFile {
        schema_version: SCHEMA_VERSION,
        report: &report,
    })?;
    let mut out = open_out(args.out.as_deref())?;
    writeln!(out, "{}", serde_json::to_string_pretty(&value)?)?;
    out.flush()?;
    let noun = if report.retained == 1 { "source" } else { "sources" };
    eprintln!("{} {noun} retained", report.retained);
    Ok(report)
}

/// Predictions aligned to the model's features by column name.
pub fn predict_from_file(model: &ModelFile, features: &Path, link: bool) -> Result<Array1<f64>> {
    let (x, names) = read_features(features)?;
    let index: HashMap<&str, usize> = names.iter().enumerate().map(|(j, n)| (n.as_str(), j)).collect();
    let mut aligned = Array2::zeros((x.nrows(), model.feature_names.len()));
    for (j, name) in model.feature_names.iter().enumerate() {
        let &src = index
            .get(name.as_str())
            .ok_or_else(|| Error::Data(format!("feature '{name}' required by the model is missing")))?;
        aligned.column_mut(j).assign(&x.column(src));
    }
    if link {
        model.model.linear_predictor(aligned.view())
    } else {
        model.model.predict(aligned.view())
    }
}

pub fn cmd_predict(args: &PredictArgs) -> Result<()> {
    let model = ModelFile::load(&args.model)?;
    let pred = predict_from_file(&model, &args.features, args.link)?;
    let mut out = open_out(args.out.as_deref())?;
    writeln!(out, "{}", if args.link { "linear_predictor" } else { "prediction" })?;
    for v in &pred {
        writeln!(out, "{}", format_real(*v))?;
    }
    out.flush()?;
    Ok(())
}

pub fn scenario_from_args(args: &SimulateArgs) -> Result<Scenario> {
    let family: Family = args.family.into();
    let sparse = args.sparse;
    let scenario = match args.protocol {
        ProtocolArg::External => {
            let base = if sparse {
                ExternalSimConfig::sparse(family, args.ka, args.h)
            } else {
                ExternalSimConfig::dense(family, args.ka, args.h)
            };
            Scenario::External(ExternalSimConfig {
                s: args.s.unwrap_or(base.s),
                n_target: args.n_target,
                n_source: args.n_source,
                p: args.p,
                n_test: args.n_test,
                alpha_target: args.alpha.unwrap_or(base.alpha_target),
                ..base
            })
        }
        ProtocolArg::Internal => {
            let base = if sparse {
                InternalSimConfig::sparse(family, args.rho_x, args.rho_beta, args.w)
            } else {
                InternalSimConfig::dense(family, args.rho_x, args.rho_beta, args.w)
            };
            Scenario::Internal(InternalSimConfig {
                pi: args.pi.unwrap_or(base.pi),
                n_target: args.n_target,
                n_source: args.n_source,
                p: args.p,
                n_test: args.n_test,
                alpha_target: args.alpha.unwrap_or(base.alpha_target),
                ..base
            })
        }
    };
    // scenario problems are usage errors
    if let Err(e) = scenario.validate() {
        return Err(Error::Config(e.to_string()));
    }
    Ok(scenario)
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let scenario = scenario_from_args(args)?;
    let rows = run_study(&scenario, &StudyMethods::default(), args.reps, args.seed)?;
    let out = open_out(args.out.as_deref())?;
    write_study_csv(&rows, out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Metrics {
    pub schema_version: u64,
    pub family: Family,
    pub n: usize,
    pub deviance: f64,
    /// Absent when the reference prediction has zero deviance.
    pub relative_loss: Option<f64>,
    pub cindex: Option<f64>,
}

pub fn evaluate(family: Family, pred: &Array1<f64>, truth: &Array1<f64>, train_mean: Option<f64>) -> Result<Metrics> {
    if pred.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            what: "prediction rows",
            expected: truth.len(),
            got: pred.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::Data("no rows to evaluate".into()));
    }
    if family == Family::Binomial {
        if let Some(v) = truth.iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(Error::Data(format!("binomial outcomes must be 0 or 1, found {v}")));
        }
    }
    let reference = train_mean.unwrap_or_else(|| truth.mean().unwrap_or(0.0));
    let deviance = mean_deviance(family, truth.view(), pred.view())?;
    let relative_loss = match relative_test_loss(family, truth, pred, reference) {
        Ok(v) => Some(v),
        Err(Error::UndefinedMetric(_)) => None,
        Err(e) => return Err(e),
    };
    let cindex = match family {
        Family::Gaussian => None,
        Family::Binomial => Some(concordance_index(
            truth.as_slice().expect("contiguous"),
            pred.as_slice().expect("contiguous"),
        )?),
    };
    Ok(Metrics {
        schema_version: SCHEMA_VERSION,
        family,
        n: truth.len(),
        deviance,
        relative_loss,
        cindex,
    })
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<Metrics> {
    let family: Family = args.family.into();
    let pred = read_column(&args.predictions)?;
    let truth = read_column(&args.truth)?;
    if family == Family::Binomial {
        if let Some(v) = pred.iter().find(|&&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::Data(format!("binomial predictions must be probabilities, found {v}")));
        }
    }
    let metrics = evaluate(family, &pred, &truth, args.train_mean)?;
    let mut out = open_out(args.out.as_deref())?;
    writeln!(out, "{}", serde_json::to_string_pretty(&metrics)?)?;
    out.flush()?;
    Ok(metrics)
}

/// Execute a parsed command line.
pub fn run(cli: &Cli) -> Result<()> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        // an already-initialised pool only happens when embedding; keep it
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    match &cli.command {
        Command::Fit(a) => cmd_fit(a).map(|_| ()),
        Command::Predict(a) => cmd_predict(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Evaluate(a) => cmd_evaluate(a).map(|_| ()),
    }
}
