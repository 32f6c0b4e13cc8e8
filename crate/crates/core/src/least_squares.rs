//! Subset least-squares classifiers `ŵ_T = X_T⁺ y`, `ŵ_{T^c} = 0`.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Result};
use crate::gauss_model::{Activation, SampleSet};
use crate::scalar::Real;

pub use crate::linalg::pinv;

/// Feature subset `T ⊆ {0, …, d−1}` stored as strictly increasing indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FeatureSubset {
    indices: Vec<usize>,
    d: usize,
}

impl FeatureSubset {
    pub fn new(indices: Vec<usize>, d: usize) -> Result<Self> {
        if indices.is_empty() {
            return invalid("feature subset must be non-empty");
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return invalid("subset indices must be strictly increasing");
        }
        if *indices.last().unwrap() >= d {
            return invalid(format!(
                "subset index {} out of range for d = {d}",
                indices.last().unwrap()
            ));
        }
        Ok(Self { indices, d })
    }

    /// The nested prefix `{0, …, p−1}`.
    pub fn prefix(p: usize, d: usize) -> Result<Self> {
        if p == 0 || p > d {
            return invalid(format!("prefix size p = {p} must lie in 1..={d}"));
        }
        Ok(Self {
            indices: (0..p).collect(),
            d,
        })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// `p = |T|`.
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn is_prefix(&self) -> bool {
        self.indices.last() == Some(&(self.indices.len() - 1))
    }

    /// Indices of `T^c` in increasing order.
    pub fn complement(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.d - self.len());
        let mut it = self.indices.iter().peekable();
        for j in 0..self.d {
            if it.peek() == Some(&&j) {
                it.next();
            } else {
                out.push(j);
            }
        }
        out
    }

    /// `X_T`: the columns of `x` listed in the subset.
    pub fn select_columns<T: Real>(&self, x: &DMatrix<T>) -> DMatrix<T> {
        if self.is_prefix() {
            x.columns(0, self.len()).into_owned()
        } else {
            x.select_columns(self.indices.iter())
        }
    }
}

/// Fitted `ŵ` with support restricted to the subset.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsetClassifier<T: Real> {
    w_hat: DVector<T>,
    subset: FeatureSubset,
    activation: Activation,
}

impl<T: Real> SubsetClassifier<T> {
    /// Wraps explicit weights; entries outside the subset must be exactly zero.
    pub fn from_weights(w_hat: DVector<T>, subset: FeatureSubset, activation: Activation) -> Result<Self> {
        if w_hat.len() != subset.d() {
            return invalid(format!(
                "weights have length {}, subset expects d = {}",
                w_hat.len(),
                subset.d()
            ));
        }
        if subset.complement().iter().any(|&j| w_hat[j] != T::zero()) {
            return invalid("weights must vanish outside the subset");
        }
        Ok(Self {
            w_hat,
            subset,
            activation,
        })
    }

    pub fn w_hat(&self) -> &DVector<T> {
        &self.w_hat
    }

    pub fn subset(&self) -> &FeatureSubset {
        &self.subset
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// `X ŵ` for every row of `x` (touches only subset columns).
    pub fn linear_scores(&self, x: &DMatrix<T>) -> Result<DVector<T>> {
        if x.ncols() != self.subset.d() {
            return invalid(format!("input has {} columns, expected {}", x.ncols(), self.subset.d()));
        }
        if self.subset.is_prefix() {
            let p = self.subset.len();
            Ok(x.columns(0, p) * self.w_hat.rows(0, p))
        } else {
            Ok(x * &self.w_hat)
        }
    }

    /// `φ(X ŵ)` for every row of `x`.
    pub fn predict_rows(&self, x: &DMatrix<T>) -> Result<DVector<T>> {
        let act = self.activation;
        Ok(self.linear_scores(x)?.map(|t| act.apply(t)))
    }
}

pub fn fit_subset<T: Real>(
    x: &DMatrix<T>,
    y: &DVector<T>,
    subset: &FeatureSubset,
    activation: Activation,
) -> Result<SubsetClassifier<T>> {
    if x.nrows() != y.len() {
        return invalid(format!("X has {} rows but y has {} entries", x.nrows(), y.len()));
    }
    if x.ncols() != subset.d() {
        return invalid(format!(
            "X has {} columns, subset expects d = {}",
            x.ncols(),
            subset.d()
        ));
    }
    let xt = subset.select_columns(x);
    let w_t = pinv(&xt, T::zero())? * y;
    let mut w_hat = DVector::zeros(subset.d());
    for (k, &j) in subset.indices().iter().enumerate() {
        w_hat[j] = w_t[k];
    }
    Ok(SubsetClassifier {
        w_hat,
        subset: subset.clone(),
        activation,
    })
}

/// `φ(xᵀŵ)` for a single input.
pub fn predict<T: Real>(clf: &SubsetClassifier<T>, x: &[T]) -> Result<T> {
    if x.len() != clf.subset.d() {
        return invalid(format!("input has length {}, expected {}", x.len(), clf.subset.d()));
    }
    let t = clf
        .subset
        .indices()
        .iter()
        .fold(T::zero(), |acc, &j| acc + x[j] * clf.w_hat[j]);
    Ok(clf.activation.apply(t))
}

/// `(1/n) ‖φ(X ŵ) − y‖²`.
pub fn empirical_risk<T: Real>(clf: &SubsetClassifier<T>, data: &SampleSet<T>) -> Result<T> {
    if data.is_empty() {
        return invalid("empirical risk needs at least one sample");
    }
    let pred = clf.predict_rows(&data.x)?;
    Ok((pred - &data.y).norm_squared() / T::count(data.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gauss_model::{sample_train, TeacherModel};
    use approx::assert_abs_diff_eq;

    #[test]
    fn subset_validation() {
        assert!(FeatureSubset::new(vec![], 3).is_err());
        assert!(FeatureSubset::new(vec![1, 1], 3).is_err());
        assert!(FeatureSubset::new(vec![2, 1], 3).is_err());
        assert!(FeatureSubset::new(vec![0, 3], 3).is_err());
        let s = FeatureSubset::new(vec![0, 2], 4).unwrap();
        assert_eq!(s.complement(), vec![1, 3]);
        assert!(!s.is_prefix());
        assert!(FeatureSubset::prefix(3, 4).unwrap().is_prefix());
        assert!(FeatureSubset::prefix(0, 4).is_err());
        assert!(FeatureSubset::prefix(5, 4).is_err());
    }

    #[test]
    fn fit_invertible_design() {
        let x = DMatrix::<f64>::identity(2, 2);
        let y = DVector::from_column_slice(&[1.0, 0.0]);
        let clf = fit_subset(&x, &y, &FeatureSubset::prefix(2, 2).unwrap(), Activation::Identity).unwrap();
        assert_abs_diff_eq!(clf.w_hat().as_slice(), &[1.0, 0.0][..], epsilon = 1e-15);
    }

    #[test]
    fn fit_single_row_min_norm() {
        let x = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let y = DVector::from_column_slice(&[2.0]);
        let clf = fit_subset(&x, &y, &FeatureSubset::prefix(2, 2).unwrap(), Activation::Identity).unwrap();
        assert_abs_diff_eq!(clf.w_hat().as_slice(), &[1.0, 1.0][..], epsilon = 1e-14);
    }

    #[test]
    fn fit_zero_response_gives_zero_weights() {
        let x = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 0.5, -1.0, 0.0, 3.0, 2.0, 2.0, 2.0]);
        let y = DVector::zeros(3);
        let s = FeatureSubset::new(vec![0, 2], 3).unwrap();
        let clf = fit_subset(&x, &y, &s, Activation::Sigmoid).unwrap();
        assert!(clf.w_hat().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn off_subset_weights_exactly_zero() {
        let t = TeacherModel::new(DVector::from_element(6, 0.4), 0.3, 0.1, Activation::Identity).unwrap();
        let data = sample_train(&t, 10, 4).unwrap();
        let s = FeatureSubset::new(vec![1, 4], 6).unwrap();
        let clf = fit_subset(&data.x, &data.y, &s, Activation::Identity).unwrap();
        for j in [0, 2, 3, 5] {
            assert_eq!(clf.w_hat()[j], 0.0);
        }
    }

    #[test]
    fn fit_dimension_mismatch() {
        let x = DMatrix::<f64>::zeros(3, 2);
        let y = DVector::zeros(2);
        assert!(fit_subset(&x, &y, &FeatureSubset::prefix(1, 2).unwrap(), Activation::Identity).is_err());
        let y = DVector::zeros(3);
        assert!(fit_subset(&x, &y, &FeatureSubset::prefix(1, 3).unwrap(), Activation::Identity).is_err());
    }

    #[test]
    fn predict_cases() {
        let s = FeatureSubset::prefix(2, 2).unwrap();
        let zero = SubsetClassifier::from_weights(DVector::zeros(2), s.clone(), Activation::Sigmoid).unwrap();
        assert_eq!(predict(&zero, &[5.0, -3.0]).unwrap(), 0.5);

        let e1 =
            SubsetClassifier::from_weights(DVector::from_column_slice(&[1.0, 0.0]), s.clone(), Activation::Identity)
                .unwrap();
        assert_eq!(predict(&e1, &[3.0, 9.0]).unwrap(), 3.0);

        let ones =
            SubsetClassifier::from_weights(DVector::from_column_slice(&[1.0, 1.0]), s, Activation::Sigmoid).unwrap();
        assert_abs_diff_eq!(
            predict(&ones, &[1.0, 1.0]).unwrap(),
            1.0 / (1.0 + (-2.0f64).exp()),
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(predict(&ones, &[1.0, 1.0]).unwrap(), 0.8808, epsilon = 1e-4);
        assert!(predict(&ones, &[1.0]).is_err());
    }

    #[test]
    fn from_weights_rejects_support_violation() {
        let s = FeatureSubset::new(vec![0], 2).unwrap();
        assert!(
            SubsetClassifier::from_weights(DVector::from_column_slice(&[1.0, 0.5]), s, Activation::Identity).is_err()
        );
    }

    #[test]
    fn empirical_risk_cases() {
        let s = FeatureSubset::prefix(1, 1).unwrap();
        let clf = SubsetClassifier::from_weights(DVector::zeros(1), s, Activation::Identity).unwrap();
        let data = SampleSet::new(
            DMatrix::from_row_slice(2, 1, &[3.0, -4.0]),
            DVector::from_column_slice(&[1.0, 1.0]),
        )
        .unwrap();
        assert_eq!(empirical_risk(&clf, &data).unwrap(), 1.0);

        let exact = SampleSet::new(DMatrix::from_row_slice(2, 1, &[3.0, -4.0]), DVector::zeros(2)).unwrap();
        assert_eq!(empirical_risk(&clf, &exact).unwrap(), 0.0);

        let empty = SampleSet::new(DMatrix::zeros(0, 1), DVector::zeros(0)).unwrap();
        assert!(empirical_risk(&clf, &empty).is_err());
    }

    #[test]
    fn interpolating_regime_has_zero_training_error() {
        let t = TeacherModel::new(DVector::from_element(40, 0.2), 0.5, 0.1, Activation::Identity).unwrap();
        let data = sample_train(&t, 15, 77).unwrap();
        let clf = fit_subset(
            &data.x,
            &data.y,
            &FeatureSubset::prefix(25, 40).unwrap(),
            Activation::Identity,
        )
        .unwrap();
        assert!(empirical_risk(&clf, &data).unwrap() < 1e-10);
    }
}
