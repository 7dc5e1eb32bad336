//! Command-line front end: synthetic generation, imputation and
//! Monte-Carlo benchmarking.
//!
//! Exit codes: 0 success, 1 numerical or fit failure, 2 usage, validation
//! or IO failure.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use flexem::eval::{
    run_experiment, DataSource, ExperimentConfig, ExperimentGrid, KChoice, MissingMode,
};
use flexem::init::{select_k, InitPlan, Selection};
use flexem::io::{read_csv_path, write_column, write_matrix};
use flexem::method::impute_with;
use flexem::synth::{
    contaminate, generate_dataset, inject_missing, ContaminationKind, ContaminationSpec, Radial,
    SyntheticSpec,
};
use flexem::{fit_method, Error, FitConfig, FittedModel, Method, ModelJson};
use serde::Serialize;

/// Failure of a subcommand, carrying its exit code.
#[derive(Debug, thiserror::Error)]
#[error("{message}")]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::FitDiverged { .. }
            | Error::NotPositiveDefinite(_)
            | Error::DegenerateClustering { .. }
            | Error::SelectionFailed
            | Error::NoInteriorMaximum => 1,
            _ => 2,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "flexem", version, about = "Robust mixture-model imputation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic mixture dataset, optionally masked and contaminated.
    Synth(SynthArgs),
    /// Fit a mixture to a CSV with missing cells and write the completed table.
    Impute(ImputeArgs),
    /// Run a seeded Monte-Carlo imputation benchmark.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FamilyArg {
    Gaussian,
    Student,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MissingModeArg {
    Mcar,
    Block,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutlierKindArg {
    Uniform,
    Gaussian,
}

impl From<OutlierKindArg> for ContaminationKind {
    fn from(k: OutlierKindArg) -> Self {
        match k {
            OutlierKindArg::Uniform => ContaminationKind::UniformMinmax,
            OutlierKindArg::Gaussian => ContaminationKind::GaussianFeatureNoise,
        }
    }
}

/// Number of components: a fixed count or BIC selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KArg {
    Fixed(usize),
    Auto,
}

impl FromStr for KArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(KArg::Auto);
        }
        match s.parse::<usize>() {
            Ok(k) if k >= 1 => Ok(KArg::Fixed(k)),
            _ => Err(format!("expected a positive integer or `auto`, got {s:?}")),
        }
    }
}

/// Inclusive candidate range `a:b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KRange {
    pub lo: usize,
    pub hi: usize,
}

impl KRange {
    pub fn values(self) -> Vec<usize> {
        (self.lo..=self.hi).collect()
    }
}

impl FromStr for KRange {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (a, b) = s
            .split_once(':')
            .ok_or_else(|| format!("expected `a:b`, got {s:?}"))?;
        let lo: usize = a.trim().parse().map_err(|_| format!("bad lower bound {a:?}"))?;
        let hi: usize = b.trim().parse().map_err(|_| format!("bad upper bound {b:?}"))?;
        if lo < 1 || hi < lo {
            return Err(format!("need 1 <= a <= b, got {s:?}"));
        }
        Ok(KRange { lo, hi })
    }
}

/// Missingness flags shared by `synth` and `bench`.
#[derive(Debug, Clone, Args)]
pub struct MissingArgs {
    /// Missing-cell placement.
    #[arg(long, value_enum, default_value = "mcar")]
    pub missing_mode: MissingModeArg,
    /// Columns per group in block mode.
    #[arg(long, default_value_t = 4)]
    pub block_size: usize,
    /// Fraction of rows losing each affected group in block mode.
    #[arg(long, default_value_t = 0.5)]
    pub block_rows: f64,
}

impl MissingArgs {
    fn mode(&self) -> CliResult<MissingMode> {
        match self.missing_mode {
            MissingModeArg::Mcar => Ok(MissingMode::Mcar),
            MissingModeArg::Block => {
                if self.block_size == 0 {
                    return Err(CliError::usage("--block-size must be at least 1"));
                }
                Ok(MissingMode::Block {
                    group_size: self.block_size,
                    row_rate: self.block_rows,
                })
            }
        }
    }
}

/// Synthetic recipe flags shared by `synth` and `bench`.
#[derive(Debug, Clone, Args)]
pub struct SourceArgs {
    /// Radial law of the generated clusters.
    #[arg(long, value_enum, default_value = "gaussian")]
    pub family: FamilyArg,
    /// Degrees of freedom of the Student family.
    #[arg(long, default_value_t = 5.0)]
    pub nu: f64,
    /// Number of rows.
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    /// Number of features.
    #[arg(long, default_value_t = 10)]
    pub m: usize,
    /// Number of generated clusters.
    #[arg(long, default_value_t = 3)]
    pub clusters: usize,
}

impl SourceArgs {
    fn spec(&self, seed: u64) -> SyntheticSpec {
        let family = match self.family {
            FamilyArg::Gaussian => Radial::Gaussian,
            FamilyArg::Student => Radial::Student { nu: self.nu },
        };
        SyntheticSpec {
            n: self.n,
            m: self.m,
            k: self.clusters,
            family,
            seed,
        }
    }
}

/// Stopping-rule overrides.
#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    /// Relative parameter change that stops the outer iteration.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Maximum number of outer iterations.
    #[arg(long)]
    pub max_iters: Option<usize>,
}

impl FitArgs {
    fn config(&self, seed: u64) -> CliResult<FitConfig> {
        let mut cfg = FitConfig {
            seed,
            ..FitConfig::default()
        };
        if let Some(t) = self.tol {
            cfg.outer_tol = t;
        }
        if let Some(n) = self.max_iters {
            cfg.max_outer_iters = n;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// Existing directory receiving the generated files.
    #[arg(long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub source: SourceArgs,
    /// Fraction of missing cells (MCAR) or of affected column groups (block).
    #[arg(long)]
    pub missing: Option<f64>,
    #[command(flatten)]
    pub missing_args: MissingArgs,
    /// Fraction of rows replaced by outliers.
    #[arg(long)]
    pub outliers: Option<f64>,
    #[arg(long, value_enum, default_value = "uniform")]
    pub outlier_kind: OutlierKindArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct ImputeArgs {
    /// CSV with missing cells (empty field or NaN).
    #[arg(long)]
    pub input: PathBuf,
    /// Path of the completed CSV.
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value = "fem")]
    pub method: Method,
    /// Number of components, or `auto` for BIC selection over --k-range.
    #[arg(long, default_value = "3")]
    pub k: KArg,
    #[arg(long, default_value = "1:6")]
    pub k_range: KRange,
    #[command(flatten)]
    pub fit: FitArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Where to write the fitted model (default: `<output>.model.json`).
    #[arg(long)]
    pub save_model: Option<PathBuf>,
    /// Impute with a previously saved model instead of fitting.
    #[arg(long)]
    pub load_model: Option<PathBuf>,
    /// Where to write the fit summary (default: `<output>.summary.json`).
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    /// Existing directory receiving runs.csv, aggregate.json and timings.csv.
    #[arg(long)]
    pub output: PathBuf,
    /// Fully observed CSV to mask (default: synthetic draws).
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[command(flatten)]
    pub source: SourceArgs,
    /// Comma-separated methods.
    #[arg(long, value_delimiter = ',', default_value = "fem,gmm")]
    pub methods: Vec<Method>,
    /// Comma-separated missing rates.
    #[arg(long, value_delimiter = ',', default_value = "0.5")]
    pub missing: Vec<f64>,
    #[command(flatten)]
    pub missing_args: MissingArgs,
    /// Comma-separated outlier rates.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub outliers: Vec<f64>,
    #[arg(long, value_enum, default_value = "uniform")]
    pub outlier_kind: OutlierKindArg,
    /// Monte-Carlo replicates per condition.
    #[arg(long, default_value_t = 10)]
    pub mc: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "3")]
    pub k: KArg,
    #[arg(long, default_value = "1:6")]
    pub k_range: KRange,
    #[command(flatten)]
    pub fit: FitArgs,
    /// Worker threads (0 = all available cores).
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
}

/// Parses `args` (including the program name), runs the subcommand and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Impute(a) => cmd_impute(a),
        Command::Bench(a) => cmd_bench(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("flexem: {e}");
            e.code
        }
    }
}

fn require_dir(dir: &Path) -> CliResult<()> {
    if dir.is_dir() {
        Ok(())
    } else {
        Err(CliError::usage(format!(
            "output directory {} does not exist",
            dir.display()
        )))
    }
}

fn require_parent(path: &Path) -> CliResult<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => require_dir(p),
        _ => Ok(()),
    }
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::usage(format!("cannot create {}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| CliError::usage(format!("cannot write {}: {e}", path.display())))
}

fn with_context(path: &Path, r: flexem::Result<()>) -> CliResult<()> {
    r.map_err(|e| match e {
        Error::Io(msg) => CliError::usage(format!("{}: {msg}", path.display())),
        other => other.into(),
    })
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "output".into());
    path.with_file_name(format!("{stem}{suffix}"))
}

fn unit_rate(name: &str, r: f64) -> CliResult<()> {
    if (0.0..1.0).contains(&r) {
        Ok(())
    } else {
        Err(CliError::usage(format!("{name} must lie in [0, 1), got {r}")))
    }
}

/// `synth`: writes `data.csv` and `labels.csv`, plus `outliers.csv` when
/// outliers are requested and `data_missing.csv`/`mask.csv` when
/// missingness is requested. Outliers are injected before masking, so
/// `data.csv` is the truth for the masked cells.
pub fn cmd_synth(a: &SynthArgs) -> CliResult<()> {
    require_dir(&a.output)?;
    let spec = a.source.spec(a.seed);
    spec.validate()?;
    let mode = a.missing_args.mode()?;
    if let Some(r) = a.missing {
        unit_rate("--missing", r)?;
    }
    if let Some(r) = a.outliers {
        unit_rate("--outliers", r)?;
    }
    let synth = generate_dataset(&spec)?;
    let names: Vec<String> = (1..=spec.m).map(|j| format!("x{j}")).collect();
    let mut data = synth.data;
    let mut flags = None;
    if let Some(rate) = a.outliers {
        let (d, f) = contaminate(
            &data,
            &ContaminationSpec {
                kind: a.outlier_kind.into(),
                rate,
                seed: a.seed,
            },
        )?;
        data = d;
        flags = Some(f);
    }
    let path = a.output.join("data.csv");
    with_context(&path, write_matrix(create(&path)?, Some(&names), &data, None))?;
    let path = a.output.join("labels.csv");
    with_context(&path, write_column(create(&path)?, "label", &synth.labels))?;
    if let Some(flags) = flags {
        let col: Vec<u8> = flags.iter().map(|&b| u8::from(b)).collect();
        let path = a.output.join("outliers.csv");
        with_context(&path, write_column(create(&path)?, "outlier", &col))?;
    }
    if let Some(rate) = a.missing {
        let masked = inject_missing(&data, &mode.spec(rate, spec.m, a.seed))?;
        let path = a.output.join("data_missing.csv");
        with_context(
            &path,
            write_matrix(create(&path)?, Some(&names), &data, Some(masked.mask())),
        )?;
        let observed = masked.mask().map(|b| if b { 1.0 } else { 0.0 });
        let path = a.output.join("mask.csv");
        with_context(&path, write_matrix(create(&path)?, Some(&names), &observed, None))?;
    }
    Ok(())
}

/// Fit summary written by `impute`.
#[derive(Debug, Serialize)]
pub struct ImputeSummary {
    pub method: Method,
    pub k: usize,
    /// `fixed`, `auto` or `loaded`.
    pub k_source: &'static str,
    pub n_rows: usize,
    pub n_cols: usize,
    pub n_missing_cells: usize,
    pub iterations: usize,
    pub converged: bool,
    pub ridge_retries: usize,
    pub final_loglik: Option<f64>,
    pub pseudo_loglik_trace: Vec<f64>,
    pub selection: Option<Selection>,
}

/// `impute`: completes the input CSV, keeping observed cells verbatim.
pub fn cmd_impute(a: &ImputeArgs) -> CliResult<()> {
    require_parent(&a.output)?;
    let model_path = a.save_model.clone().or_else(|| {
        a.load_model
            .is_none()
            .then(|| sibling(&a.output, ".model.json"))
    });
    let summary_path = a
        .summary
        .clone()
        .unwrap_or_else(|| sibling(&a.output, ".summary.json"));
    for p in model_path.iter().chain(std::iter::once(&summary_path)) {
        require_parent(p)?;
    }
    let cfg = a.fit.config(a.seed)?;
    let table = read_csv_path(&a.input).map_err(|e| match e {
        Error::Io(msg) => CliError::usage(msg),
        other => other.into(),
    })?;
    let data = &table.dataset;
    let plan = InitPlan::with_seed(a.seed);

    let (model, imputed, summary) = if let Some(path) = &a.load_model {
        let json = ModelJson::load(path)?;
        let model = FittedModel::from_json(&json)?;
        if model.method() == Method::Fem {
            data.validate_for_fit()?;
        }
        let imputed = impute_with(&model, data, &cfg)?;
        let summary = ImputeSummary {
            method: model.method(),
            k: model.n_components(),
            k_source: "loaded",
            n_rows: data.nrows(),
            n_cols: data.ncols(),
            n_missing_cells: data.n_missing(),
            iterations: 0,
            converged: true,
            ridge_retries: 0,
            final_loglik: None,
            pseudo_loglik_trace: Vec::new(),
            selection: None,
        };
        (model, imputed, summary)
    } else {
        let (k, k_source, selection) = match a.k {
            KArg::Fixed(k) => (k, "fixed", None),
            KArg::Auto => {
                let sel = select_k(data, &a.k_range.values(), a.method, &cfg, &plan)?;
                (sel.best_k, "auto", Some(sel))
            }
        };
        let fit = fit_method(a.method, data, k, &cfg, &plan)?;
        let summary = ImputeSummary {
            method: a.method,
            k,
            k_source,
            n_rows: data.nrows(),
            n_cols: data.ncols(),
            n_missing_cells: data.n_missing(),
            iterations: fit.report.iterations,
            converged: fit.report.converged,
            ridge_retries: fit.report.ridge_retries,
            final_loglik: Some(fit.report.final_loglik),
            pseudo_loglik_trace: fit.report.pseudo_loglik_trace,
            selection,
        };
        (fit.model, fit.imputed, summary)
    };

    with_context(&a.output, table.write_imputed(create(&a.output)?, &imputed))?;
    if let Some(path) = &model_path {
        with_context(path, model.to_json().save(path))?;
    }
    let text =
        serde_json::to_string_pretty(&summary).map_err(|e| CliError::usage(e.to_string()))?;
    write_text(&summary_path, &(text + "\n"))
}

/// `bench`: runs the Monte-Carlo grid, writes `runs.csv`, `aggregate.json`
/// and `timings.csv`, and prints the aggregate table. Fails only when every
/// run fails.
pub fn cmd_bench(a: &BenchArgs) -> CliResult<()> {
    require_dir(&a.output)?;
    if a.mc == 0 {
        return Err(CliError::usage("--mc must be at least 1"));
    }
    let source = match &a.input {
        Some(p) => DataSource::Csv(p.clone()),
        None => {
            let spec = a.source.spec(a.seed);
            spec.validate()?;
            DataSource::Synthetic(spec)
        }
    };
    let k = match a.k {
        KArg::Fixed(k) => KChoice::Fixed(k),
        KArg::Auto => KChoice::Auto(a.k_range.values()),
    };
    let cfg = ExperimentConfig {
        source,
        grid: ExperimentGrid {
            missing_rates: a.missing.clone(),
            outlier_rates: a.outliers.clone(),
            methods: a.methods.clone(),
            missing_mode: a.missing_args.mode()?,
            outlier_kind: a.outlier_kind.into(),
            k,
        },
        mc_runs: a.mc,
        base_seed: a.seed,
        fit: a.fit.config(a.seed)?,
        init: InitPlan::with_seed(a.seed),
        threads: a.threads,
    };
    let report = run_experiment(&cfg)?;
    let path = a.output.join("runs.csv");
    with_context(&path, report.write_runs_csv(create(&path)?))?;
    write_text(&a.output.join("aggregate.json"), &(report.aggregates_json()? + "\n"))?;
    let path = a.output.join("timings.csv");
    with_context(&path, report.write_timings_csv(create(&path)?))?;
    print!("{}", report.format_table());
    let failed = report.records.iter().filter(|r| !r.is_ok()).count();
    if failed > 0 {
        eprintln!("flexem: {failed} of {} runs failed", report.records.len());
    }
    if failed == report.records.len() {
        return Err(CliError {
            code: 1,
            message: "every run failed".into(),
        });
    }
    Ok(())
}
