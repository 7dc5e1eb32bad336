//! Initialization (mean fill + K-means) and model-order selection by BIC.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::MaskedDataset;
use crate::error::{Error, Result};
use crate::linalg::normalize_trace;
use crate::method::{fit_method, Method};
use crate::model::{FitConfig, GaussianMixtureModel, MixtureModel};
use crate::rng::{stream_rng, Stream};

/// Relative size of the diagonal ridge added to cluster covariances.
const CLUSTER_RIDGE: f64 = 1e-6;

/// How missing cells are filled before clustering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FillStrategy {
    FeatureMean,
}

/// K-means initialization settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitPlan {
    pub fill_strategy: FillStrategy,
    pub kmeans_restarts: usize,
    pub kmeans_max_iters: usize,
    pub seed: u64,
}

impl Default for InitPlan {
    fn default() -> Self {
        Self {
            fill_strategy: FillStrategy::FeatureMean,
            kmeans_restarts: 10,
            kmeans_max_iters: 100,
            seed: 0,
        }
    }
}

impl InitPlan {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kmeans_restarts < 1 || self.kmeans_max_iters < 1 {
            return Err(Error::InvalidArgument(
                "kmeans restarts and iteration cap must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Replaces each missing cell by the observed mean of its column.
pub fn mean_fill(data: &MaskedDataset) -> Result<DMatrix<f64>> {
    let (n, m) = (data.nrows(), data.ncols());
    let mut means = Vec::with_capacity(m);
    for j in 0..m {
        let (mut sum, mut count) = (0.0, 0usize);
        for i in 0..n {
            if let Some(v) = data.get(i, j) {
                sum += v;
                count += 1;
            }
        }
        if count == 0 {
            return Err(Error::EmptyColumn { column: j });
        }
        means.push(sum / count as f64);
    }
    Ok(DMatrix::from_fn(n, m, |i, j| {
        data.get(i, j).unwrap_or(means[j])
    }))
}

/// Hard partition found by K-means.
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub labels: Vec<usize>,
    pub centers: Vec<DVector<f64>>,
    pub wcss: f64,
}

fn sq_dist(data: &DMatrix<f64>, i: usize, c: &DVector<f64>) -> f64 {
    let mut acc = 0.0;
    for j in 0..data.ncols() {
        let d = data[(i, j)] - c[j];
        acc += d * d;
    }
    acc
}

fn nearest(data: &DMatrix<f64>, i: usize, centers: &[DVector<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.iter().enumerate() {
        let d = sq_dist(data, i, center);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// k-means++ seeding: `None` when fewer than `k` distinct rows exist.
fn seed_centers<R: Rng>(data: &DMatrix<f64>, k: usize, rng: &mut R) -> Option<Vec<DVector<f64>>> {
    let n = data.nrows();
    let mut centers = vec![data.row(rng.random_range(0..n)).transpose()];
    let mut dist: Vec<f64> = (0..n).map(|i| sq_dist(data, i, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = dist.iter().sum();
        if !(total > 0.0) {
            return None;
        }
        let mut u = rng.random_range(0.0..total);
        let mut pick = n - 1;
        for (i, d) in dist.iter().enumerate() {
            if u < *d {
                pick = i;
                break;
            }
            u -= d;
        }
        if dist[pick] == 0.0 {
            pick = dist.iter().rposition(|d| *d > 0.0)?;
        }
        let c = data.row(pick).transpose();
        for (i, d) in dist.iter_mut().enumerate() {
            *d = d.min(sq_dist(data, i, &c));
        }
        centers.push(c);
    }
    Some(centers)
}

fn lloyd(data: &DMatrix<f64>, mut centers: Vec<DVector<f64>>, max_iters: usize) -> Clustering {
    let (n, m) = data.shape();
    let k = centers.len();
    let mut labels = vec![usize::MAX; n];
    for _ in 0..max_iters {
        let mut changed = false;
        for (i, label) in labels.iter_mut().enumerate() {
            let (c, _) = nearest(data, i, &centers);
            if *label != c {
                *label = c;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![DVector::zeros(m); k];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[labels[i]] += 1;
            for j in 0..m {
                sums[labels[i]][j] += data[(i, j)];
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = &sums[c] / counts[c] as f64;
            }
        }
    }
    let wcss = (0..n).map(|i| sq_dist(data, i, &centers[labels[i]])).sum();
    Clustering {
        labels,
        centers,
        wcss,
    }
}

/// Best-of-restarts K-means with k-means++ seeding.
pub fn kmeans(filled: &DMatrix<f64>, k: usize, plan: &InitPlan) -> Result<Clustering> {
    plan.validate()?;
    let n = filled.nrows();
    if k == 0 || n <= k {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= K < N, got K = {k}, N = {n}"
        )));
    }
    let mut rng = stream_rng(plan.seed, Stream::Init);
    let mut best: Option<Clustering> = None;
    for _ in 0..plan.kmeans_restarts {
        let Some(centers) = seed_centers(filled, k, &mut rng) else {
            continue;
        };
        let c = lloyd(filled, centers, plan.kmeans_max_iters);
        let mut counts = vec![0usize; k];
        for &l in &c.labels {
            counts[l] += 1;
        }
        if counts.contains(&0) {
            continue;
        }
        if best.as_ref().is_none_or(|b| c.wcss < b.wcss) {
            best = Some(c);
        }
    }
    best.ok_or(Error::DegenerateClustering { k })
}

/// Cluster weights, means and ridged within-cluster covariances.
fn cluster_moments(filled: &DMatrix<f64>, cl: &Clustering) -> (Vec<f64>, Vec<DVector<f64>>, Vec<DMatrix<f64>>) {
    let (n, m) = filled.shape();
    let k = cl.centers.len();
    let global_mean = filled.row_mean().transpose();
    let mut global_tr = 0.0;
    for i in 0..n {
        global_tr += sq_dist(filled, i, &global_mean);
    }
    global_tr /= n as f64;
    let ridge = if global_tr > 0.0 {
        CLUSTER_RIDGE * global_tr / m as f64
    } else {
        CLUSTER_RIDGE
    };

    let mut counts = vec![0usize; k];
    let mut means = vec![DVector::zeros(m); k];
    for i in 0..n {
        let c = cl.labels[i];
        counts[c] += 1;
        for j in 0..m {
            means[c][j] += filled[(i, j)];
        }
    }
    for c in 0..k {
        means[c] /= counts[c] as f64;
    }
    let mut covs = vec![DMatrix::zeros(m, m); k];
    for i in 0..n {
        let c = cl.labels[i];
        let d = filled.row(i).transpose() - &means[c];
        covs[c] += &d * d.transpose();
    }
    for c in 0..k {
        covs[c] /= counts[c] as f64;
        for j in 0..m {
            covs[c][(j, j)] += ridge;
        }
    }
    let floor = 1.0 / (10.0 * n as f64);
    let raw: Vec<f64> = counts.iter().map(|&c| (c as f64 / n as f64).max(floor)).collect();
    let total: f64 = raw.iter().sum();
    let weights = raw.iter().map(|w| w / total).collect();
    (weights, means, covs)
}

/// K-means initialization of the elliptical mixture (scatters of trace `m`).
pub fn kmeans_init(filled: &DMatrix<f64>, k: usize, plan: &InitPlan) -> Result<MixtureModel> {
    let cl = kmeans(filled, k, plan)?;
    let m = filled.ncols() as f64;
    let (weights, means, mut covs) = cluster_moments(filled, &cl);
    for s in &mut covs {
        normalize_trace(s, m);
    }
    MixtureModel::new(weights, means, covs)
}

/// K-means initialization of the Gaussian mixture (unnormalized covariances).
pub fn kmeans_init_gaussian(
    filled: &DMatrix<f64>,
    k: usize,
    plan: &InitPlan,
) -> Result<GaussianMixtureModel> {
    let cl = kmeans(filled, k, plan)?;
    let (weights, means, covs) = cluster_moments(filled, &cl);
    GaussianMixtureModel::new(weights, means, covs)
}

/// Free parameters of a `k`-component mixture in dimension `m`.
pub fn n_params(k: usize, m: usize) -> usize {
    k - 1 + k * m + k * m * (m + 1) / 2
}

/// `−2·loglik + n_params·ln N`.
pub fn bic(loglik: f64, n_params: usize, n: usize) -> f64 {
    -2.0 * loglik + n_params as f64 * (n as f64).ln()
}

/// One row of the selection table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BicEntry {
    pub k: usize,
    pub loglik: f64,
    pub n_params: usize,
    pub bic: f64,
}

/// Outcome of [`select_k`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub best_k: usize,
    pub table: Vec<BicEntry>,
    /// Candidates whose initialization or fit failed numerically.
    pub excluded: Vec<usize>,
}

/// Whether an error reflects a numerical failure of one candidate (which
/// drops it from the table) rather than invalid input.
fn is_numerical(e: &Error) -> bool {
    matches!(
        e,
        Error::FitDiverged { .. } | Error::NotPositiveDefinite(_) | Error::DegenerateClustering { .. }
    )
}

/// Fits every `k` in `k_range` and returns the BIC minimizer (ties go to
/// the smaller `k`).
pub fn select_k(
    data: &MaskedDataset,
    k_range: &[usize],
    method: Method,
    cfg: &FitConfig,
    plan: &InitPlan,
) -> Result<Selection> {
    if k_range.is_empty() {
        return Err(Error::InvalidArgument("empty K range".into()));
    }
    let n = data.nrows();
    if let Some(&k) = k_range.iter().find(|&&k| k == 0 || k >= n) {
        return Err(Error::InvalidArgument(format!(
            "K = {k} outside 1..{n}"
        )));
    }
    let mut table = Vec::new();
    let mut excluded = Vec::new();
    for &k in k_range {
        match fit_method(method, data, k, cfg, plan) {
            Ok(fit) => {
                let p = n_params(k, data.ncols());
                table.push(BicEntry {
                    k,
                    loglik: fit.loglik,
                    n_params: p,
                    bic: bic(fit.loglik, p, n),
                });
            }
            Err(e) if is_numerical(&e) => excluded.push(k),
            Err(e) => return Err(e),
        }
    }
    let best = table
        .iter()
        .filter(|e| e.bic.is_finite())
        .min_by(|a, b| a.bic.total_cmp(&b.bic).then(a.k.cmp(&b.k)))
        .ok_or(Error::SelectionFailed)?;
    Ok(Selection {
        best_k: best.k,
        table: table.clone(),
        excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bic_examples() {
        assert!((bic(-100.0, 10, 100) - 246.051_701_859_880_9).abs() < 1e-9);
        assert_eq!(bic(-7.5, 0, 50), 15.0);
        assert_eq!(n_params(3, 10), 197);
    }

    #[test]
    fn bic_increases_with_parameters() {
        for p in 0..20 {
            assert!(bic(-3.0, p + 1, 2) > bic(-3.0, p, 2));
        }
    }

    #[test]
    fn mean_fill_example() {
        let mut mask = DMatrix::from_element(3, 2, true);
        mask[(1, 0)] = false;
        let values = DMatrix::from_row_slice(3, 2, &[1.0, 5.0, 0.0, 5.0, 3.0, 5.0]);
        let d = MaskedDataset::new(values, mask, None).unwrap();
        assert_eq!(mean_fill(&d).unwrap()[(1, 0)], 2.0);
    }
}
