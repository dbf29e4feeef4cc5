//! Row-major feature matrix and z-score standardization.

use crate::domain::CellRecord;
use crate::scalar::Real;

/// Dense row-major feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix<T> {
    pub n: usize,
    pub d: usize,
    data: Vec<T>,
}

impl<T: Real> FeatureMatrix<T> {
    pub fn from_rows(rows: Vec<Vec<T>>) -> Self {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(n * d);
        for row in rows {
            assert_eq!(row.len(), d, "ragged feature rows");
            data.extend(row);
        }
        FeatureMatrix { n, d, data }
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.d..(i + 1) * self.d]
    }
}

impl FeatureMatrix<crate::Scalar> {
    pub fn from_records(records: &[CellRecord]) -> Self {
        let n = records.len();
        let d = records.first().map_or(0, |r| r.features.len());
        let mut data = Vec::with_capacity(n * d);
        for r in records {
            assert_eq!(r.features.len(), d, "ragged feature rows");
            data.extend_from_slice(&r.features);
        }
        FeatureMatrix { n, d, data }
    }
}

/// Per-feature mean and standard deviation fitted on training folds.
///
/// Constant features get a unit standard deviation so they standardize to
/// zero instead of dividing by zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer<T = crate::Scalar> {
    pub mean: Vec<T>,
    pub std: Vec<T>,
}

impl<T: Real> Standardizer<T> {
    pub fn identity(d: usize) -> Self {
        Standardizer {
            mean: vec![T::zero(); d],
            std: vec![T::one(); d],
        }
    }

    pub fn fit(x: &FeatureMatrix<T>) -> Self {
        let n = T::of_usize(x.n.max(1));
        let mut mean = vec![T::zero(); x.d];
        for i in 0..x.n {
            for (m, &v) in mean.iter_mut().zip(x.row(i)) {
                *m = *m + v;
            }
        }
        for m in &mut mean {
            *m = *m / n;
        }
        let mut var = vec![T::zero(); x.d];
        for i in 0..x.n {
            for ((s, &v), &m) in var.iter_mut().zip(x.row(i)).zip(&mean) {
                let dv = v - m;
                *s = *s + dv * dv;
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > T::zero() {
                    sd
                } else {
                    T::one()
                }
            })
            .collect();
        Standardizer { mean, std }
    }

    pub fn transform_in_place(&self, x: &mut FeatureMatrix<T>) {
        for i in 0..x.n {
            let row = x.row_mut(i);
            for ((v, &m), &s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
    }

    pub fn transform_row(&self, row: &[T]) -> Vec<T> {
        row.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((&v, &m), &s)| (v - m) / s)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn standardizes_to_zero_mean_unit_sd() {
        let mut x = FeatureMatrix::from_rows(vec![vec![1.0, 10.0], vec![3.0, 10.0], vec![5.0, 10.0]]);
        let st = Standardizer::fit(&x);
        assert_relative_eq!(st.mean[0], 3.0);
        // Constant feature keeps unit std.
        assert_eq!(st.std[1], 1.0);
        st.transform_in_place(&mut x);
        let col0: Vec<f64> = (0..3).map(|i| x.row(i)[0]).collect();
        assert_relative_eq!(col0.iter().sum::<f64>(), 0.0, epsilon = 1e-12);
        let var: f64 = col0.iter().map(|v| v * v).sum::<f64>() / 3.0;
        assert_relative_eq!(var, 1.0, epsilon = 1e-12);
        // Constant column becomes all zeros.
        assert!((0..3).all(|i| x.row(i)[1] == 0.0));
    }

    #[test]
    fn transform_row_matches_matrix_path() {
        let x = FeatureMatrix::from_rows(vec![vec![2.0, -1.0], vec![4.0, 3.0]]);
        let st = Standardizer::fit(&x);
        let r = st.transform_row(&[2.0, -1.0]);
        let mut xc = x.clone();
        st.transform_in_place(&mut xc);
        assert_eq!(r, xc.row(0));
    }
}
