//! Imputation metrics and the seeded Monte-Carlo experiment harness.
//!
//! Replicate `r` uses seed `base_seed + r`; generation, contamination,
//! masking and initialization each read their own stream of that seed, so
//! all conditions of a replicate share the same draw and any replicate can
//! be re-run alone.

use std::fmt::Write as _;
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::MaskedDataset;
use crate::error::{Error, Result};
use crate::init::{select_k, InitPlan};
use crate::io::read_csv_path;
use crate::method::{fit_method, Method};
use crate::model::FitConfig;
use crate::rng::replicate_seed;
use crate::stats::Quartiles;
use crate::synth::{
    contaminate, contiguous_groups, generate_dataset, inject_missing, ContaminationKind,
    ContaminationSpec, Mechanism, MissingnessSpec, SyntheticSpec,
};

/// Error metrics over the imputed cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    /// Percent.
    pub mape: f64,
    pub mae: f64,
    pub rmse: f64,
    pub n_missing_cells: usize,
}

fn check_pair(truth: &[f64], estimate: &[f64]) -> Result<()> {
    if truth.len() != estimate.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} truth values, {} estimates",
            truth.len(),
            estimate.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::InvalidArgument("no cells to score".into()));
    }
    Ok(())
}

/// Mean absolute percentage error, in percent.
pub fn mape(truth: &[f64], estimate: &[f64]) -> Result<f64> {
    check_pair(truth, estimate)?;
    let mut acc = 0.0;
    for (i, (t, e)) in truth.iter().zip(estimate).enumerate() {
        if t.abs() < 1e-300 {
            return Err(Error::ZeroTruth { index: i });
        }
        acc += ((t - e) / t).abs();
    }
    Ok(100.0 * acc / truth.len() as f64)
}

/// Mean absolute error.
pub fn mae(truth: &[f64], estimate: &[f64]) -> Result<f64> {
    check_pair(truth, estimate)?;
    let acc: f64 = truth.iter().zip(estimate).map(|(t, e)| (t - e).abs()).sum();
    Ok(acc / truth.len() as f64)
}

/// Root mean squared error.
pub fn rmse(truth: &[f64], estimate: &[f64]) -> Result<f64> {
    check_pair(truth, estimate)?;
    let acc: f64 = truth.iter().zip(estimate).map(|(t, e)| (t - e) * (t - e)).sum();
    Ok((acc / truth.len() as f64).sqrt())
}

/// Scores the masked cells of `imputed` against `truth`; `rows` restricts
/// scoring to the selected rows.
pub fn score(
    truth: &DMatrix<f64>,
    imputed: &DMatrix<f64>,
    mask: &DMatrix<bool>,
    rows: Option<&[bool]>,
) -> Result<MetricSet> {
    if truth.shape() != imputed.shape() || truth.shape() != mask.shape() {
        return Err(Error::DimensionMismatch(
            "truth, imputation and mask must have the same shape".into(),
        ));
    }
    let mut t = Vec::new();
    let mut e = Vec::new();
    for i in 0..truth.nrows() {
        if rows.is_some_and(|r| !r[i]) {
            continue;
        }
        for j in 0..truth.ncols() {
            if !mask[(i, j)] {
                t.push(truth[(i, j)]);
                e.push(imputed[(i, j)]);
            }
        }
    }
    Ok(MetricSet {
        mape: mape(&t, &e)?,
        mae: mae(&t, &e)?,
        rmse: rmse(&t, &e)?,
        n_missing_cells: t.len(),
    })
}

/// Where replicate datasets come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// Fresh synthetic draw per replicate (the recipe seed is replaced by the
    /// replicate seed).
    Synthetic(SyntheticSpec),
    /// Fixed complete matrix; only masks and outliers vary.
    Matrix(DMatrix<f64>),
    /// Fully observed CSV file.
    Csv(PathBuf),
}

/// How missing cells are placed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum MissingMode {
    Mcar,
    /// Column groups of `group_size`; the missing rate is the fraction of
    /// affected groups and `row_rate` the fraction of rows losing each one.
    Block { group_size: usize, row_rate: f64 },
}

impl MissingMode {
    /// Missingness recipe for `rate` on `m` columns.
    pub fn spec(&self, rate: f64, m: usize, seed: u64) -> MissingnessSpec {
        let mechanism = match self {
            MissingMode::Mcar => Mechanism::Mcar { rate },
            MissingMode::Block {
                group_size,
                row_rate,
            } => Mechanism::Block {
                column_groups: contiguous_groups(m, *group_size),
                image_rate: rate,
                row_rate: *row_rate,
            },
        };
        MissingnessSpec { mechanism, seed }
    }
}

/// Number of mixture components to fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KChoice {
    Fixed(usize),
    /// BIC selection over the listed candidates.
    Auto(Vec<usize>),
}

/// Experimental conditions.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentGrid {
    pub missing_rates: Vec<f64>,
    pub outlier_rates: Vec<f64>,
    pub methods: Vec<Method>,
    pub missing_mode: MissingMode,
    pub outlier_kind: ContaminationKind,
    pub k: KChoice,
}

/// Full experiment description.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub source: DataSource,
    pub grid: ExperimentGrid,
    pub mc_runs: usize,
    pub base_seed: u64,
    pub fit: FitConfig,
    /// K-means settings; the seed is replaced by the replicate seed.
    pub init: InitPlan,
    /// Worker threads (0 = available parallelism).
    pub threads: usize,
}

/// One fitted (replicate, condition, method).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub replicate: usize,
    pub seed: u64,
    pub method: Method,
    pub missing_rate: f64,
    pub outlier_rate: f64,
    /// `ok`, or the error tag of the failure.
    pub status: String,
    pub k: Option<usize>,
    pub iterations: Option<usize>,
    pub converged: Option<bool>,
    pub metrics: Option<MetricSet>,
    /// MAPE restricted to rows that were not replaced by outliers.
    pub clean_mape: Option<f64>,
}

impl RunRecord {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

/// Summary of one condition over its replicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub method: Method,
    pub missing_rate: f64,
    pub outlier_rate: f64,
    pub runs: usize,
    pub completed: usize,
    pub mape: Option<Quartiles>,
    pub clean_mape: Option<Quartiles>,
    pub mae: Option<Quartiles>,
    pub rmse: Option<Quartiles>,
}

/// Per-run records (in condition, then replicate order) and aggregates.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub records: Vec<RunRecord>,
    pub aggregates: Vec<Aggregate>,
    /// Wall time of each record's fit in seconds (same order as `records`).
    pub wall_times: Vec<f64>,
}

/// Column order of the per-run CSV.
pub const RUNS_HEADER: [&str; 14] = [
    "replicate",
    "seed",
    "method",
    "missing_rate",
    "outlier_rate",
    "status",
    "k",
    "iterations",
    "converged",
    "n_missing_cells",
    "mape",
    "clean_mape",
    "mae",
    "rmse",
];

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl ExperimentReport {
    /// Per-run CSV with the columns of [`RUNS_HEADER`].
    pub fn write_runs_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(RUNS_HEADER)?;
        for r in &self.records {
            let m = r.metrics;
            out.write_record([
                r.replicate.to_string(),
                r.seed.to_string(),
                r.method.to_string(),
                r.missing_rate.to_string(),
                r.outlier_rate.to_string(),
                r.status.clone(),
                opt(r.k),
                opt(r.iterations),
                opt(r.converged),
                opt(m.map(|m| m.n_missing_cells)),
                opt(m.map(|m| m.mape)),
                opt(r.clean_mape),
                opt(m.map(|m| m.mae)),
                opt(m.map(|m| m.rmse)),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    /// Aggregates as pretty JSON.
    pub fn aggregates_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.aggregates)?)
    }

    /// Wall times, one row per record (not deterministic).
    pub fn write_timings_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["replicate", "method", "missing_rate", "outlier_rate", "seconds"])?;
        for (r, t) in self.records.iter().zip(&self.wall_times) {
            out.write_record([
                r.replicate.to_string(),
                r.method.to_string(),
                r.missing_rate.to_string(),
                r.outlier_rate.to_string(),
                format!("{t:.6}"),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    /// Human-readable aggregate table.
    pub fn format_table(&self) -> String {
        let q = |x: &Option<Quartiles>| match x {
            Some(q) => format!("{:>9.4} [{:.4}, {:.4}]", q.median, q.q1, q.q3),
            None => format!("{:>9}", "-"),
        };
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<6} {:>8} {:>8} {:>7}  {:<32} {:<32}",
            "method", "missing", "outliers", "ok/runs", "MAPE median [Q1, Q3]", "clean MAPE median [Q1, Q3]"
        );
        for a in &self.aggregates {
            let _ = writeln!(
                s,
                "{:<6} {:>8} {:>8} {:>7}  {:<32} {:<32}",
                a.method.tag(),
                a.missing_rate,
                a.outlier_rate,
                format!("{}/{}", a.completed, a.runs),
                q(&a.mape),
                q(&a.clean_mape)
            );
        }
        s
    }
}

fn error_tag(e: &Error) -> String {
    let name = match e {
        Error::AllMissing { .. } => "all_missing",
        Error::DimensionMismatch(_) => "dimension_mismatch",
        Error::NotPositiveDefinite(_) => "not_positive_definite",
        Error::InsufficientObserved { .. } => "insufficient_observed",
        Error::EmptyColumn { .. } => "empty_column",
        Error::FitDiverged { .. } => "fit_diverged",
        Error::DegenerateClustering { .. } => "degenerate_clustering",
        Error::SelectionFailed => "selection_failed",
        Error::NoInteriorMaximum => "no_interior_maximum",
        Error::InfeasibleMask => "infeasible_mask",
        Error::ZeroTruth { .. } => "zero_truth",
        Error::InvalidArgument(_) => "invalid_argument",
        Error::Io(_) => "io",
        Error::Parse(_) => "parse",
    };
    format!("error:{name}")
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mc_runs < 1 {
            return Err(Error::InvalidArgument("at least one Monte-Carlo run is required".into()));
        }
        let g = &self.grid;
        if g.missing_rates.is_empty() || g.outlier_rates.is_empty() || g.methods.is_empty() {
            return Err(Error::InvalidArgument("experiment grid is empty".into()));
        }
        if g.missing_rates.iter().chain(&g.outlier_rates).any(|r| !(0.0..1.0).contains(r)) {
            return Err(Error::InvalidArgument("rates must lie in [0, 1)".into()));
        }
        match &g.k {
            KChoice::Fixed(0) => Err(Error::InvalidArgument("K must be at least 1".into())),
            KChoice::Auto(r) if r.is_empty() || r.contains(&0) => {
                Err(Error::InvalidArgument("invalid K range".into()))
            }
            _ => {
                self.fit.validate()?;
                self.init.validate()
            }
        }
    }
}

fn load_source(source: &DataSource, seed: u64) -> Result<DMatrix<f64>> {
    match source {
        DataSource::Synthetic(spec) => {
            let spec = SyntheticSpec {
                seed,
                ..spec.clone()
            };
            Ok(generate_dataset(&spec)?.data)
        }
        DataSource::Matrix(m) => Ok(m.clone()),
        DataSource::Csv(path) => {
            let t = read_csv_path(path)?;
            if !t.dataset.is_complete() {
                return Err(Error::InvalidArgument(format!(
                    "benchmark source {} must be fully observed",
                    path.display()
                )));
            }
            Ok(t.dataset.values().clone())
        }
    }
}

struct Masked {
    truth: DMatrix<f64>,
    data: MaskedDataset,
    clean_rows: Vec<bool>,
}

/// All records of one replicate, in (outlier, missing, method) order.
fn run_replicate(cfg: &ExperimentConfig, r: usize) -> Vec<(RunRecord, f64)> {
    let seed = replicate_seed(cfg.base_seed, r);
    let g = &cfg.grid;
    let mut out = Vec::new();
    let base = load_source(&cfg.source, seed);
    for &outlier_rate in &g.outlier_rates {
        for &missing_rate in &g.missing_rates {
            let record = |method: Method, status: String| RunRecord {
                replicate: r,
                seed,
                method,
                missing_rate,
                outlier_rate,
                status,
                k: None,
                iterations: None,
                converged: None,
                metrics: None,
                clean_mape: None,
            };
            let prepared = base.as_ref().map_err(Clone::clone).and_then(|data| {
                let (truth, flags) = contaminate(
                    data,
                    &ContaminationSpec {
                        kind: g.outlier_kind,
                        rate: outlier_rate,
                        seed,
                    },
                )?;
                let masked = inject_missing(
                    &truth,
                    &g.missing_mode.spec(missing_rate, truth.ncols(), seed),
                )?;
                Ok(Masked {
                    clean_rows: flags.iter().map(|f| !f).collect(),
                    data: masked,
                    truth,
                })
            });
            let prepared = match prepared {
                Ok(p) => p,
                Err(e) => {
                    for &method in &g.methods {
                        out.push((record(method, error_tag(&e)), 0.0));
                    }
                    continue;
                }
            };
            for &method in &g.methods {
                let start = Instant::now();
                let result = fit_and_score(cfg, method, &prepared, seed);
                let elapsed = start.elapsed().as_secs_f64();
                let rec = match result {
                    Ok((k, iterations, converged, metrics, clean)) => RunRecord {
                        k: Some(k),
                        iterations: Some(iterations),
                        converged: Some(converged),
                        metrics: Some(metrics),
                        clean_mape: clean,
                        ..record(method, "ok".into())
                    },
                    Err(e) => record(method, error_tag(&e)),
                };
                out.push((rec, elapsed));
            }
        }
    }
    out
}

type Scored = (usize, usize, bool, MetricSet, Option<f64>);

fn fit_and_score(cfg: &ExperimentConfig, method: Method, p: &Masked, seed: u64) -> Result<Scored> {
    let plan = InitPlan {
        seed,
        ..cfg.init.clone()
    };
    let fit_cfg = FitConfig {
        seed,
        ..cfg.fit.clone()
    };
    let k = match &cfg.grid.k {
        KChoice::Fixed(k) => *k,
        KChoice::Auto(range) => select_k(&p.data, range, method, &fit_cfg, &plan)?.best_k,
    };
    let fit = fit_method(method, &p.data, k, &fit_cfg, &plan)?;
    let metrics = score(&p.truth, &fit.imputed, p.data.mask(), None)?;
    let clean = score(&p.truth, &fit.imputed, p.data.mask(), Some(&p.clean_rows))
        .ok()
        .map(|m| m.mape);
    Ok((k, fit.report.iterations, fit.report.converged, metrics, clean))
}

fn aggregate(cfg: &ExperimentConfig, records: &[RunRecord]) -> Vec<Aggregate> {
    let g = &cfg.grid;
    let mut out = Vec::new();
    for &outlier_rate in &g.outlier_rates {
        for &missing_rate in &g.missing_rates {
            for &method in &g.methods {
                let runs: Vec<&RunRecord> = records
                    .iter()
                    .filter(|r| {
                        r.method == method
                            && r.missing_rate == missing_rate
                            && r.outlier_rate == outlier_rate
                    })
                    .collect();
                let ok: Vec<&MetricSet> = runs.iter().filter_map(|r| r.metrics.as_ref()).collect();
                let col = |f: fn(&MetricSet) -> f64| {
                    Quartiles::of(&ok.iter().map(|m| f(m)).collect::<Vec<_>>())
                };
                let clean: Vec<f64> = runs.iter().filter_map(|r| r.clean_mape).collect();
                out.push(Aggregate {
                    method,
                    missing_rate,
                    outlier_rate,
                    runs: runs.len(),
                    completed: ok.len(),
                    mape: col(|m| m.mape),
                    clean_mape: Quartiles::of(&clean),
                    mae: col(|m| m.mae),
                    rmse: col(|m| m.rmse),
                });
            }
        }
    }
    out
}

/// Runs every (replicate, condition, method) and aggregates per condition.
/// Failures of individual runs are recorded, never propagated.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let threads = if cfg.threads == 0 {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    } else {
        cfg.threads
    }
    .min(cfg.mc_runs)
    .max(1);

    let mut per_replicate: Vec<Vec<(RunRecord, f64)>> = vec![Vec::new(); cfg.mc_runs];
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..threads)
            .map(|t| {
                scope.spawn(move || {
                    (t..cfg.mc_runs)
                        .step_by(threads)
                        .map(|r| (r, run_replicate(cfg, r)))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (r, recs) in h.join().expect("replicate worker panicked") {
                per_replicate[r] = recs;
            }
        }
    });

    // Condition-major order: (outlier, missing, method), then replicate.
    let per_cond = per_replicate.first().map_or(0, Vec::len);
    let mut records = Vec::with_capacity(per_cond * cfg.mc_runs);
    let mut wall_times = Vec::with_capacity(records.capacity());
    for c in 0..per_cond {
        for reps in &per_replicate {
            let (rec, t) = &reps[c];
            records.push(rec.clone());
            wall_times.push(*t);
        }
    }
    let aggregates = aggregate(cfg, &records);
    Ok(ExperimentReport {
        records,
        aggregates,
        wall_times,
    })
}
