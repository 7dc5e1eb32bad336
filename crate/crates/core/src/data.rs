//! Masked data matrix, observed/missing index partitions and scatter blocks.

use std::collections::BTreeMap;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Minimum number of observed cells for a row that has missing entries.
pub const MIN_OBSERVED_WITH_MISSING: usize = 3;

/// An `N × m` matrix whose cells are either observed or missing.
///
/// The mask is the single source of truth: missing cells hold `NaN` in
/// storage, but numeric code never reads them.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedDataset {
    values: DMatrix<f64>,
    mask: DMatrix<bool>,
    feature_names: Option<Vec<String>>,
}

impl MaskedDataset {
    pub fn new(
        mut values: DMatrix<f64>,
        mask: DMatrix<bool>,
        feature_names: Option<Vec<String>>,
    ) -> Result<Self> {
        if values.shape() != mask.shape() {
            return Err(Error::DimensionMismatch(format!(
                "values are {:?}, mask is {:?}",
                values.shape(),
                mask.shape()
            )));
        }
        if let Some(names) = &feature_names {
            if names.len() != values.ncols() {
                return Err(Error::DimensionMismatch(format!(
                    "{} feature names for {} columns",
                    names.len(),
                    values.ncols()
                )));
            }
        }
        for i in 0..values.nrows() {
            if !mask.row(i).iter().any(|&o| o) {
                return Err(Error::AllMissing { row: Some(i) });
            }
            for j in 0..values.ncols() {
                if mask[(i, j)] {
                    if !values[(i, j)].is_finite() {
                        return Err(Error::InvalidArgument(format!(
                            "observed cell ({i}, {j}) is not finite"
                        )));
                    }
                } else {
                    values[(i, j)] = f64::NAN;
                }
            }
        }
        Ok(Self {
            values,
            mask,
            feature_names,
        })
    }

    pub fn complete(values: DMatrix<f64>) -> Result<Self> {
        let mask = DMatrix::from_element(values.nrows(), values.ncols(), true);
        Self::new(values, mask, None)
    }

    pub fn with_feature_names(mut self, names: Option<Vec<String>>) -> Result<Self> {
        if let Some(n) = &names {
            if n.len() != self.ncols() {
                return Err(Error::DimensionMismatch(format!(
                    "{} feature names for {} columns",
                    n.len(),
                    self.ncols()
                )));
            }
        }
        self.feature_names = names;
        Ok(self)
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    /// Raw storage; missing cells are `NaN`.
    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn mask(&self) -> &DMatrix<bool> {
        &self.mask
    }

    pub fn feature_names(&self) -> Option<&[String]> {
        self.feature_names.as_deref()
    }

    pub fn is_observed(&self, i: usize, j: usize) -> bool {
        self.mask[(i, j)]
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.mask[(i, j)].then(|| self.values[(i, j)])
    }

    pub fn mask_row(&self, i: usize) -> Vec<bool> {
        self.mask.row(i).iter().copied().collect()
    }

    pub fn partition(&self, i: usize) -> IndexPartition {
        partition_row(&self.mask_row(i)).expect("rows always keep an observed entry")
    }

    /// Observed values of row `i`, in column order.
    pub fn observed_values(&self, i: usize) -> Vec<f64> {
        (0..self.ncols())
            .filter(|&j| self.mask[(i, j)])
            .map(|j| self.values[(i, j)])
            .collect()
    }

    pub fn n_missing(&self) -> usize {
        self.mask.iter().filter(|&&o| !o).count()
    }

    pub fn is_complete(&self) -> bool {
        self.mask.iter().all(|&o| o)
    }

    /// Rows with missing cells but fewer than three observed cells.
    pub fn insufficient_rows(&self) -> Vec<usize> {
        (0..self.nrows())
            .filter(|&i| {
                let obs = self.mask.row(i).iter().filter(|&&o| o).count();
                obs < self.ncols() && obs < MIN_OBSERVED_WITH_MISSING
            })
            .collect()
    }

    /// Checks the precondition of the missing-data fitters.
    pub fn validate_for_fit(&self) -> Result<()> {
        let rows = self.insufficient_rows();
        if rows.is_empty() {
            Ok(())
        } else {
            Err(Error::InsufficientObserved { rows })
        }
    }

    /// Groups rows by missingness pattern (ordered by first occurrence).
    pub fn patterns(&self) -> Vec<(IndexPartition, Vec<usize>)> {
        let mut index: BTreeMap<Vec<bool>, usize> = BTreeMap::new();
        let mut out: Vec<(IndexPartition, Vec<usize>)> = Vec::new();
        for i in 0..self.nrows() {
            let key = self.mask_row(i);
            match index.get(&key) {
                Some(&p) => out[p].1.push(i),
                None => {
                    index.insert(key, out.len());
                    out.push((self.partition(i), vec![i]));
                }
            }
        }
        out
    }

    /// Copy of the values with every missing cell replaced from `fill`.
    pub fn filled_with(&self, fill: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(self.nrows(), self.ncols(), |i, j| {
            if self.mask[(i, j)] {
                self.values[(i, j)]
            } else {
                fill[(i, j)]
            }
        })
    }
}

/// Sorted observed and missing column indices of one row.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct IndexPartition {
    pub observed: Vec<usize>,
    pub missing: Vec<usize>,
}

impl IndexPartition {
    pub fn full(m: usize) -> Self {
        Self {
            observed: (0..m).collect(),
            missing: Vec::new(),
        }
    }

    pub fn d_obs(&self) -> usize {
        self.observed.len()
    }

    pub fn d_mis(&self) -> usize {
        self.missing.len()
    }

    pub fn dim(&self) -> usize {
        self.observed.len() + self.missing.len()
    }

    pub fn has_missing(&self) -> bool {
        !self.missing.is_empty()
    }
}

pub fn partition_row(mask_row: &[bool]) -> Result<IndexPartition> {
    let (observed, missing): (Vec<usize>, Vec<usize>) =
        (0..mask_row.len()).partition(|&j| mask_row[j]);
    if observed.is_empty() {
        return Err(Error::AllMissing { row: None });
    }
    Ok(IndexPartition { observed, missing })
}

/// The four blocks of a symmetric matrix under an [`IndexPartition`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScatterView {
    pub oo: DMatrix<f64>,
    pub om: DMatrix<f64>,
    pub mo: DMatrix<f64>,
    pub mm: DMatrix<f64>,
}

pub fn extract_blocks(sigma: &DMatrix<f64>, part: &IndexPartition) -> Result<ScatterView> {
    let m = sigma.nrows();
    if sigma.ncols() != m {
        return Err(Error::DimensionMismatch("scatter matrix is not square".into()));
    }
    if part.observed.iter().chain(&part.missing).any(|&j| j >= m) {
        return Err(Error::DimensionMismatch(format!(
            "partition index exceeds dimension {m}"
        )));
    }
    let block = |rows: &[usize], cols: &[usize]| {
        DMatrix::from_fn(rows.len(), cols.len(), |a, b| sigma[(rows[a], cols[b])])
    };
    let (o, mi) = (&part.observed, &part.missing);
    Ok(ScatterView {
        oo: block(o, o),
        om: block(o, mi),
        mo: block(mi, o),
        mm: block(mi, mi),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn partition_examples() {
        let p = partition_row(&[true, false, true]).unwrap();
        assert_eq!(p.observed, vec![0, 2]);
        assert_eq!(p.missing, vec![1]);
        let p = partition_row(&[true, true]).unwrap();
        assert_eq!(p.observed, vec![0, 1]);
        assert!(p.missing.is_empty());
        assert_eq!(
            partition_row(&[false, false]),
            Err(Error::AllMissing { row: None })
        );
    }

    #[test]
    fn blocks_of_identity() {
        let part = partition_row(&[true, false, true]).unwrap();
        let v = extract_blocks(&DMatrix::identity(3, 3), &part).unwrap();
        assert_eq!(v.oo, DMatrix::identity(2, 2));
        assert_eq!(v.mm, DMatrix::identity(1, 1));
        assert_eq!(v.om, DMatrix::zeros(2, 1));
    }

    #[test]
    fn blocks_two_by_two() {
        let s = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        let part = partition_row(&[false, true]).unwrap();
        let v = extract_blocks(&s, &part).unwrap();
        assert_eq!(v.oo[(0, 0)], 3.0);
        assert_eq!(v.mm[(0, 0)], 2.0);
        assert_eq!(v.om[(0, 0)], 1.0);
        assert_eq!(v.mo, v.om.transpose());
    }

    #[test]
    fn out_of_range_partition() {
        let part = IndexPartition {
            observed: vec![0, 3],
            missing: vec![1],
        };
        assert!(matches!(
            extract_blocks(&DMatrix::identity(3, 3), &part),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn blocks_reassemble_parent() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..100 {
            let a = DMatrix::from_fn(5, 5, |_, _| rng.random_range(-1.0..1.0));
            let s = a.transpose() * &a + DMatrix::identity(5, 5);
            let mut mask: Vec<bool> = (0..5).map(|_| rng.random_bool(0.5)).collect();
            mask[rng.random_range(0..5)] = true;
            let part = partition_row(&mask).unwrap();
            let v = extract_blocks(&s, &part).unwrap();
            let mut back = DMatrix::from_element(5, 5, f64::NAN);
            let (o, mi) = (&part.observed, &part.missing);
            for (a, &r) in o.iter().enumerate() {
                for (b, &c) in o.iter().enumerate() {
                    back[(r, c)] = v.oo[(a, b)];
                }
                for (b, &c) in mi.iter().enumerate() {
                    back[(r, c)] = v.om[(a, b)];
                }
            }
            for (a, &r) in mi.iter().enumerate() {
                for (b, &c) in o.iter().enumerate() {
                    back[(r, c)] = v.mo[(a, b)];
                }
                for (b, &c) in mi.iter().enumerate() {
                    back[(r, c)] = v.mm[(a, b)];
                }
            }
            assert_eq!(back, s);
            assert_eq!(v.mo, v.om.transpose());
        }
    }

    #[test]
    fn dataset_rejects_empty_row_and_masks_sentinel() {
        let values = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let mask = DMatrix::from_row_slice(2, 2, &[true, false, false, false]);
        assert_eq!(
            MaskedDataset::new(values.clone(), mask, None),
            Err(Error::AllMissing { row: Some(1) })
        );
        let mask = DMatrix::from_row_slice(2, 2, &[true, false, true, true]);
        let ds = MaskedDataset::new(values, mask, None).unwrap();
        assert!(ds.values()[(0, 1)].is_nan());
        assert_eq!(ds.get(0, 1), None);
        assert_eq!(ds.get(1, 0), Some(3.0));
        assert_eq!(ds.n_missing(), 1);
    }

    #[test]
    fn insufficient_rows_are_listed() {
        let values = DMatrix::from_element(3, 4, 1.0);
        let mask = DMatrix::from_row_slice(
            3,
            4,
            &[
                true, true, false, false, //
                true, true, true, false, //
                true, true, true, true,
            ],
        );
        let ds = MaskedDataset::new(values, mask, None).unwrap();
        assert_eq!(
            ds.validate_for_fit(),
            Err(Error::InsufficientObserved { rows: vec![0] })
        );
    }

    proptest::proptest! {
        #[test]
        fn partition_covers_all_columns(mask in proptest::collection::vec(proptest::bool::ANY, 1..12)) {
            match partition_row(&mask) {
                Ok(p) => {
                    let mut all: Vec<usize> = p.observed.iter().chain(&p.missing).copied().collect();
                    all.sort_unstable();
                    proptest::prop_assert_eq!(all, (0..mask.len()).collect::<Vec<_>>());
                    proptest::prop_assert!(p.observed.windows(2).all(|w| w[0] < w[1]));
                    proptest::prop_assert!(p.missing.windows(2).all(|w| w[0] < w[1]));
                }
                Err(e) => {
                    proptest::prop_assert!(mask.iter().all(|&b| !b));
                    proptest::prop_assert_eq!(e, Error::AllMissing { row: None });
                }
            }
        }
    }
}
