//! Synthetic mixtures, `[1, 100]` scaling, missingness injection and
//! outlier contamination.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{MaskedDataset, MIN_OBSERVED_WITH_MISSING};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};
use crate::stats::quantile_sorted;

/// Attempts at drawing a feasible mask before giving up.
const MASK_ATTEMPTS: usize = 100;

/// Radial law of the generated samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Radial {
    Gaussian,
    Student { nu: f64 },
}

impl Radial {
    /// Student law with five degrees of freedom.
    pub const STUDENT5: Radial = Radial::Student { nu: 5.0 };
}

/// Synthetic mixture recipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub family: Radial,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n: 2000,
            m: 10,
            k: 3,
            family: Radial::Gaussian,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 || self.n < self.k {
            return Err(Error::InvalidArgument(format!(
                "need N >= K >= 1, got N = {}, K = {}",
                self.n, self.k
            )));
        }
        if self.m < 2 {
            return Err(Error::InvalidArgument(format!(
                "dimension must be at least 2, got {}",
                self.m
            )));
        }
        if let Radial::Student { nu } = self.family {
            if !(nu > 2.0) {
                return Err(Error::InvalidArgument(format!(
                    "Student degrees of freedom must exceed 2, got {nu}"
                )));
            }
        }
        Ok(())
    }
}

/// Parameters drawn for one generating component.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentParams {
    pub mean: DVector<f64>,
    pub phi: f64,
    pub sigma2: f64,
}

/// Output of [`generate_dataset`].
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    /// Scaled data.
    pub data: DMatrix<f64>,
    pub labels: Vec<usize>,
    /// Generating parameters (before scaling).
    pub components: Vec<ComponentParams>,
    /// Affine map applied: `scaled = offset + slope · raw`.
    pub slope: f64,
    pub offset: f64,
}

/// Stationary AR(1) covariance `σ²/(1−φ²)·φ^{|i−j|}`.
pub fn ar1_covariance(phi: f64, sigma2: f64, m: usize) -> Result<DMatrix<f64>> {
    if !(phi > 0.0 && phi < 1.0) || !(sigma2 > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "need 0 < phi < 1 and sigma2 > 0, got phi = {phi}, sigma2 = {sigma2}"
        )));
    }
    let var = sigma2 / (1.0 - phi * phi);
    Ok(DMatrix::from_fn(m, m, |i, j| {
        var * phi.powi(i.abs_diff(j) as i32)
    }))
}

struct Sampler {
    mean: DVector<f64>,
    chol: DMatrix<f64>,
    chi: Option<(ChiSquared<f64>, f64)>,
}

impl Sampler {
    fn new(mu: &DVector<f64>, sigma: &DMatrix<f64>, radial: Radial) -> Result<Self> {
        if sigma.nrows() != mu.len() || sigma.ncols() != mu.len() {
            return Err(Error::DimensionMismatch(format!(
                "mean of length {} with {}x{} scatter",
                mu.len(),
                sigma.nrows(),
                sigma.ncols()
            )));
        }
        let chol = sigma
            .clone()
            .cholesky()
            .ok_or(Error::NotPositiveDefinite(Some("sampling scatter".into())))?
            .l();
        let chi = match radial {
            Radial::Gaussian => None,
            Radial::Student { nu } => Some((
                ChiSquared::new(nu)
                    .map_err(|e| Error::InvalidArgument(format!("degrees of freedom: {e}")))?,
                nu,
            )),
        };
        Ok(Self {
            mean: mu.clone(),
            chol,
            chi,
        })
    }

    fn draw_into<R: Rng>(&self, rng: &mut R, out: &mut [f64], z: &mut DVector<f64>) {
        let m = self.mean.len();
        for v in z.iter_mut() {
            *v = StandardNormal.sample(rng);
        }
        let s = match &self.chi {
            None => 1.0,
            Some((chi, nu)) => 1.0 / (chi.sample(rng) / nu).sqrt(),
        };
        for a in 0..m {
            let mut acc = 0.0;
            for b in 0..=a {
                acc += self.chol[(a, b)] * z[b];
            }
            out[a] = self.mean[a] + s * acc;
        }
    }
}

/// `n` draws `μ + A·z` (Gaussian) or `μ + A·z/√(χ²_ν/ν)` (Student), `A` the
/// Cholesky factor of `sigma`.
pub fn sample_elliptical(
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
    radial: Radial,
    n: usize,
    seed: u64,
) -> Result<DMatrix<f64>> {
    let sampler = Sampler::new(mu, sigma, radial)?;
    let mut rng = stream_rng(seed, Stream::Sample);
    let m = mu.len();
    let mut out = DMatrix::zeros(n, m);
    let mut row = vec![0.0; m];
    let mut z = DVector::zeros(m);
    for i in 0..n {
        sampler.draw_into(&mut rng, &mut row, &mut z);
        for j in 0..m {
            out[(i, j)] = row[j];
        }
    }
    Ok(out)
}

/// Affine map sending the minimum to 1 and the 98th percentile to 100.
fn scale_to_range(data: &mut DMatrix<f64>) -> (f64, f64) {
    let mut sorted: Vec<f64> = data.iter().copied().collect();
    sorted.sort_by(f64::total_cmp);
    let min = sorted[0];
    let p98 = quantile_sorted(&sorted, 0.98);
    let slope = if p98 > min { 99.0 / (p98 - min) } else { 1.0 };
    let offset = 1.0 - slope * min;
    for v in data.iter_mut() {
        *v = 1.0 + (*v - min) * slope;
    }
    (slope, offset)
}

/// Draws a labelled mixture sample and scales it into `[1, 100]` (98th
/// percentile at 100).
pub fn generate_dataset(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = stream_rng(spec.seed, Stream::Generate);
    let (n, m, k) = (spec.n, spec.m, spec.k);
    let mut components = Vec::with_capacity(k);
    let mut samplers = Vec::with_capacity(k);
    for _ in 0..k {
        let mean = DVector::from_fn(m, |_, _| rng.random_range(0.0..1.0));
        let phi = rng.random_range(0.1..0.9);
        let sigma2 = rng.random_range(0.0005..0.005);
        samplers.push(Sampler::new(&mean, &ar1_covariance(phi, sigma2, m)?, spec.family)?);
        components.push(ComponentParams { mean, phi, sigma2 });
    }
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
    let mut data = DMatrix::zeros(n, m);
    let mut row = vec![0.0; m];
    let mut z = DVector::zeros(m);
    for (i, &l) in labels.iter().enumerate() {
        samplers[l].draw_into(&mut rng, &mut row, &mut z);
        for j in 0..m {
            data[(i, j)] = row[j];
        }
    }
    let (slope, offset) = scale_to_range(&mut data);
    Ok(SyntheticData {
        data,
        labels,
        components,
        slope,
        offset,
    })
}

/// Missingness mechanism.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Mechanism {
    /// Every cell independently missing with probability `rate`.
    Mcar { rate: f64 },
    /// Column groups (e.g. the bands of one pixel) disappear together: a
    /// fraction `image_rate` of the groups is affected, and in each affected
    /// group a fraction `row_rate` of the rows loses the whole group.
    Block {
        column_groups: Vec<Vec<usize>>,
        image_rate: f64,
        row_rate: f64,
    },
}

/// Missingness recipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissingnessSpec {
    pub mechanism: Mechanism,
    pub seed: u64,
}

impl MissingnessSpec {
    pub fn mcar(rate: f64, seed: u64) -> Self {
        Self {
            mechanism: Mechanism::Mcar { rate },
            seed,
        }
    }

    pub fn validate(&self, m: usize) -> Result<()> {
        let unit = |name: &str, r: f64| {
            if (0.0..1.0).contains(&r) {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("{name} must lie in [0, 1), got {r}")))
            }
        };
        match &self.mechanism {
            Mechanism::Mcar { rate } => unit("missing rate", *rate),
            Mechanism::Block {
                column_groups,
                image_rate,
                row_rate,
            } => {
                unit("image rate", *image_rate)?;
                unit("row rate", *row_rate)?;
                let mut seen = vec![false; m];
                for g in column_groups {
                    if g.is_empty() {
                        return Err(Error::InvalidArgument("empty column group".into()));
                    }
                    for &j in g {
                        if j >= m || seen[j] {
                            return Err(Error::InvalidArgument(format!(
                                "column {j} out of range or in several groups"
                            )));
                        }
                        seen[j] = true;
                    }
                }
                Ok(())
            }
        }
    }
}

/// Consecutive column groups of `size` columns (the last may be shorter).
pub fn contiguous_groups(m: usize, size: usize) -> Vec<Vec<usize>> {
    let size = size.max(1);
    (0..m).step_by(size).map(|s| (s..(s + size).min(m)).collect()).collect()
}

fn row_feasible(row: &[bool]) -> bool {
    let obs = row.iter().filter(|b| **b).count();
    obs == row.len() || obs >= MIN_OBSERVED_WITH_MISSING
}

/// Masks cells of `data` (values are kept untouched).
pub fn inject_missing(data: &DMatrix<f64>, spec: &MissingnessSpec) -> Result<MaskedDataset> {
    let (n, m) = data.shape();
    spec.validate(m)?;
    let mut rng = stream_rng(spec.seed, Stream::Mask);
    let mut mask = DMatrix::from_element(n, m, true);
    match &spec.mechanism {
        Mechanism::Mcar { rate } => {
            let mut row = vec![true; m];
            for i in 0..n {
                let mut ok = false;
                for _ in 0..MASK_ATTEMPTS {
                    for v in row.iter_mut() {
                        *v = !rng.random_bool(*rate);
                    }
                    if row_feasible(&row) {
                        ok = true;
                        break;
                    }
                }
                if !ok {
                    return Err(Error::InfeasibleMask);
                }
                for j in 0..m {
                    mask[(i, j)] = row[j];
                }
            }
        }
        Mechanism::Block {
            column_groups,
            image_rate,
            row_rate,
        } => {
            let g = column_groups.len();
            let n_groups = (image_rate * g as f64).floor() as usize;
            let n_rows = (row_rate * n as f64).floor() as usize;
            let mut ok = false;
            for _ in 0..MASK_ATTEMPTS {
                mask.fill(true);
                for gi in sample_indices(&mut rng, g, n_groups).into_iter() {
                    for i in sample_indices(&mut rng, n, n_rows).into_iter() {
                        for &j in &column_groups[gi] {
                            mask[(i, j)] = false;
                        }
                    }
                }
                if (0..n).all(|i| {
                    let row: Vec<bool> = mask.row(i).iter().copied().collect();
                    row_feasible(&row)
                }) {
                    ok = true;
                    break;
                }
            }
            if !ok {
                return Err(Error::InfeasibleMask);
            }
        }
    }
    MaskedDataset::new(data.clone(), mask, None)
}

/// Outlier mechanism.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContaminationKind {
    /// Each feature uniform between the feature's minimum and maximum.
    UniformMinmax,
    /// Each feature normal with the feature's mean and variance.
    GaussianFeatureNoise,
}

/// Outlier recipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContaminationSpec {
    pub kind: ContaminationKind,
    pub rate: f64,
    pub seed: u64,
}

/// Replaces `round(rate·N)` seeded rows by outliers; returns the new data
/// and per-row outlier flags.
pub fn contaminate(
    data: &DMatrix<f64>,
    spec: &ContaminationSpec,
) -> Result<(DMatrix<f64>, Vec<bool>)> {
    if !(0.0..1.0).contains(&spec.rate) {
        return Err(Error::InvalidArgument(format!(
            "outlier rate must lie in [0, 1), got {}",
            spec.rate
        )));
    }
    let (n, m) = data.shape();
    let count = (spec.rate * n as f64).round() as usize;
    let mut out = data.clone();
    let mut flags = vec![false; n];
    if count == 0 {
        return Ok((out, flags));
    }
    let mut rng: ChaCha8Rng = stream_rng(spec.seed, Stream::Contaminate);
    let mut rows = sample_indices(&mut rng, n, count).into_vec();
    rows.sort_unstable();
    let cols: Vec<(f64, f64, f64, f64)> = (0..m)
        .map(|j| {
            let c = data.column(j);
            let mean = c.mean();
            let var = c.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            (c.min(), c.max(), mean, var.sqrt())
        })
        .collect();
    for &i in &rows {
        flags[i] = true;
        for (j, &(lo, hi, mean, sd)) in cols.iter().enumerate() {
            out[(i, j)] = match spec.kind {
                ContaminationKind::UniformMinmax => {
                    if hi > lo {
                        rng.random_range(lo..=hi)
                    } else {
                        lo
                    }
                }
                ContaminationKind::GaussianFeatureNoise => {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    mean + sd * z
                }
            };
        }
    }
    Ok((out, flags))
}
