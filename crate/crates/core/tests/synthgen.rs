use flexem::stats::quantile_sorted;
use flexem::synth::*;
use flexem::Error;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sample_cov(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mean = x.row_mean();
    let mut c = DMatrix::zeros(x.ncols(), x.ncols());
    for i in 0..x.nrows() {
        let d = (x.row(i) - &mean).transpose();
        c += &d * d.transpose();
    }
    c / x.nrows() as f64
}

#[test]
fn ar1_is_spd_toeplitz() {
    let mut r = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let phi = r.random_range(0.01..0.99);
        let s = ar1_covariance(phi, r.random_range(0.001..2.0), 10).unwrap();
        assert!(s.clone().cholesky().is_some());
        for i in 1..10 {
            for j in 1..10 {
                assert_eq!(s[(i, j)], s[(i - 1, j - 1)]);
            }
        }
        assert!(s.symmetric_eigenvalues().iter().all(|&e| e > 0.0));
    }
    assert!(ar1_covariance(1.0, 1.0, 3).is_err());
}

#[test]
fn gaussian_sample_moments() {
    let x = sample_elliptical(&DVector::zeros(3), &DMatrix::identity(3, 3), Radial::Gaussian, 100_000, 1).unwrap();
    assert!((sample_cov(&x) - DMatrix::identity(3, 3)).norm() / 3f64.sqrt() < 0.05);
}

#[test]
fn student_sample_covariance_scales() {
    let sigma = ar1_covariance(0.5, 0.75, 3).unwrap();
    let x = sample_elliptical(&DVector::zeros(3), &sigma, Radial::STUDENT5, 200_000, 2).unwrap();
    let want = &sigma * (5.0 / 3.0);
    assert!((sample_cov(&x) - &want).norm() / want.norm() < 0.1);
}

#[test]
fn sampling_is_deterministic() {
    let s = DMatrix::identity(2, 2);
    let a = sample_elliptical(&DVector::zeros(2), &s, Radial::STUDENT5, 50, 7).unwrap();
    let b = sample_elliptical(&DVector::zeros(2), &s, Radial::STUDENT5, 50, 7).unwrap();
    assert_eq!(a, b);
}

#[test]
fn dataset_is_scaled_to_range() {
    let d = generate_dataset(&SyntheticSpec { seed: 3, ..SyntheticSpec::default() }).unwrap();
    let mut v: Vec<f64> = d.data.iter().copied().collect();
    v.sort_by(f64::total_cmp);
    assert_eq!(v[0], 1.0);
    assert!((quantile_sorted(&v, 0.98) - 100.0).abs() < 1e-9);
    assert_eq!(d.data.shape(), (2000, 10));
}

#[test]
fn labels_are_balanced() {
    let d = generate_dataset(&SyntheticSpec { seed: 4, ..SyntheticSpec::default() }).unwrap();
    let n: f64 = 2000.0;
    let sd = (n * (1.0 / 3.0) * (2.0 / 3.0)).sqrt();
    for k in 0..3 {
        let c = d.labels.iter().filter(|&&l| l == k).count() as f64;
        assert!((c - n / 3.0).abs() < 3.0 * sd);
    }
}

#[test]
fn class_covariance_matches_ar1() {
    let spec = SyntheticSpec { n: 60_000, m: 4, seed: 5, ..SyntheticSpec::default() };
    let d = generate_dataset(&spec).unwrap();
    for k in 0..3 {
        let rows: Vec<usize> = (0..spec.n).filter(|&i| d.labels[i] == k).collect();
        let x = DMatrix::from_fn(rows.len(), 4, |a, j| (d.data[(rows[a], j)] - d.offset) / d.slope);
        let c = &d.components[k];
        let want = ar1_covariance(c.phi, c.sigma2, 4).unwrap();
        assert!((sample_cov(&x) - &want).norm() / want.norm() < 0.1);
    }
}

#[test]
fn generation_is_reproducible() {
    let spec = SyntheticSpec { n: 100, family: Radial::STUDENT5, seed: 6, ..SyntheticSpec::default() };
    assert_eq!(generate_dataset(&spec).unwrap(), generate_dataset(&spec).unwrap());
}

#[test]
fn zero_rate_masks_nothing() {
    let data = DMatrix::from_element(10, 4, 2.0);
    let m = inject_missing(&data, &MissingnessSpec::mcar(0.0, 1)).unwrap();
    assert!(m.is_complete());
}

#[test]
fn mcar_rate_and_constraints() {
    let data = DMatrix::from_fn(2000, 10, |i, j| (i + j) as f64 + 1.0);
    let m = inject_missing(&data, &MissingnessSpec::mcar(0.5, 2)).unwrap();
    let cells = 20_000.0;
    let observed = (cells - m.n_missing() as f64) / cells;
    // Rows violating the observed-cell floor are redrawn, which pulls the
    // fraction slightly toward observed; the tolerance is 3 binomial sd.
    assert!((observed - 0.5).abs() < 3.0 * (0.25f64 / cells).sqrt() + 0.01);
    for i in 0..2000 {
        let p = m.partition(i);
        assert!(!p.has_missing() || p.d_obs() >= 3);
        for &j in &p.observed {
            assert_eq!(m.get(i, j), Some(data[(i, j)]));
        }
    }
}

#[test]
fn mcar_infeasible_in_two_columns() {
    let data = DMatrix::from_element(20, 2, 1.0);
    assert_eq!(inject_missing(&data, &MissingnessSpec::mcar(0.9, 1)), Err(Error::InfeasibleMask));
}

#[test]
fn block_counts_are_exact() {
    let n = 101;
    let data = DMatrix::from_element(n, 16, 1.0);
    let spec = MissingnessSpec {
        mechanism: Mechanism::Block { column_groups: contiguous_groups(16, 2), image_rate: 0.25, row_rate: 0.5 },
        seed: 3,
    };
    let m = inject_missing(&data, &spec).unwrap();
    let mut affected = 0;
    for g in contiguous_groups(16, 2) {
        let rows = (0..n).filter(|&i| g.iter().all(|&j| !m.is_observed(i, j))).count();
        let partial = (0..n).filter(|&i| g.iter().any(|&j| !m.is_observed(i, j)) && !g.iter().all(|&j| !m.is_observed(i, j))).count();
        assert_eq!(partial, 0);
        if rows > 0 {
            assert_eq!(rows, n / 2);
            affected += 1;
        }
    }
    assert_eq!(affected, 2);
}

#[test]
fn contamination_counts_and_ranges() {
    let d = generate_dataset(&SyntheticSpec { seed: 7, ..SyntheticSpec::default() }).unwrap();
    let (same, flags) = contaminate(&d.data, &ContaminationSpec { kind: ContaminationKind::UniformMinmax, rate: 0.0, seed: 1 }).unwrap();
    assert_eq!(same, d.data);
    assert!(flags.iter().all(|f| !f));

    let (out, flags) = contaminate(&d.data, &ContaminationSpec { kind: ContaminationKind::UniformMinmax, rate: 0.1, seed: 1 }).unwrap();
    assert_eq!(flags.iter().filter(|f| **f).count(), 200);
    for j in 0..10 {
        let (lo, hi) = (d.data.column(j).min(), d.data.column(j).max());
        for i in 0..2000 {
            if flags[i] {
                assert!(out[(i, j)] >= lo && out[(i, j)] <= hi);
            } else {
                assert_eq!(out[(i, j)], d.data[(i, j)]);
            }
        }
    }
    let (_, g) = contaminate(&d.data, &ContaminationSpec { kind: ContaminationKind::GaussianFeatureNoise, rate: 0.05, seed: 1 }).unwrap();
    assert_eq!(g.iter().filter(|f| **f).count(), 100);
}
