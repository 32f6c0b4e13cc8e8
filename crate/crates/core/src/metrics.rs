//! AUC, Neural-Collapse NC1 and the explained-variance spectrum.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Result};
use crate::linalg::{column_means, pinv, second_moment, sym_eigen_desc};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AucResult {
    pub auc: f64,
    pub n_id: usize,
    pub n_ood: usize,
}

/// Area under the ROC curve with ID as the positive class, i.e. the
/// Mann-Whitney probability `P(s_id > s_ood) + ½ P(s_id = s_ood)`.
///
/// Uses average ranks over one sort. The statistic is kept as an integer
/// (twice `U`) until the final division, and the larger half is formed as a
/// complement, so `auc(a, b) + auc(b, a) == 1.0` exactly.
pub fn auc<T: Real>(id_scores: &[T], ood_scores: &[T]) -> Result<AucResult> {
    let (n_id, n_ood) = (id_scores.len(), ood_scores.len());
    if n_id == 0 || n_ood == 0 {
        return invalid(format!("AUC needs non-empty score sets, got {n_id} ID and {n_ood} OOD"));
    }
    for (name, s) in [("ID", id_scores), ("OOD", ood_scores)] {
        if let Some(i) = s.iter().position(|v| !v.is_finite()) {
            return invalid(format!("{name} score {i} is not finite"));
        }
    }
    let mut all: Vec<(T, bool)> = id_scores
        .iter()
        .map(|&s| (s, true))
        .chain(ood_scores.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal));

    // Sum over ID samples of twice their (1-based, tie-averaged) rank.
    let mut rank2_sum: u128 = 0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i + 1;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        let ids = all[i..j].iter().filter(|e| e.1).count() as u128;
        rank2_sum += ids * (i as u128 + 1 + j as u128);
        i = j;
    }
    let (a, b) = (n_id as u128, n_ood as u128);
    let u2 = rank2_sum - a * (a + 1);
    let total2 = 2 * a * b;
    let auc = if 2 * u2 <= total2 {
        u2 as f64 / total2 as f64
    } else {
        1.0 - (total2 - u2) as f64 / total2 as f64
    };
    Ok(AucResult { auc, n_id, n_ood })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Nc1Report<T> {
    pub nc1: T,
    pub per_class_counts: Vec<usize>,
}

/// `Tr(Σ_W Σ_B⁺) / C` with `Σ_W` averaged over samples and `Σ_B` over classes.
/// Classes are `0..=max(label)` and each must have a sample.
pub fn nc1<T: Real>(features: &DMatrix<T>, labels: &[usize]) -> Result<Nc1Report<T>> {
    let n = features.nrows();
    if labels.len() != n {
        return invalid(format!("{} labels for {n} feature rows", labels.len()));
    }
    let Some(&max) = labels.iter().max() else {
        return invalid("NC1 of an empty table");
    };
    let c = max + 1;
    if c < 2 {
        return invalid("NC1 needs at least 2 classes");
    }
    let mut counts = vec![0usize; c];
    let mut means = DMatrix::zeros(c, features.ncols());
    for (row, &y) in features.row_iter().zip(labels) {
        let mut m = means.row_mut(y);
        m += row;
        counts[y] += 1;
    }
    if let Some(k) = counts.iter().position(|&k| k == 0) {
        return invalid(format!("class {k} has no samples"));
    }
    for (k, &cnt) in counts.iter().enumerate() {
        means.row_mut(k).unscale_mut(T::count(cnt));
    }
    let mut within = features.clone();
    for (mut row, &y) in within.row_iter_mut().zip(labels) {
        row -= means.row(y);
    }
    let sigma_w = second_moment(&within, None);
    let global: DVector<T> = column_means(features);
    let sigma_b = second_moment(&means, Some(&global));
    let sb_pinv = pinv(&sigma_b, T::zero())?;
    let nc1 = ((sigma_w * sb_pinv).trace() / T::count(c)).max(T::zero());
    Ok(Nc1Report {
        nc1,
        per_class_counts: counts,
    })
}

/// `NC1_u / NC1_o`; above 1 means the overparameterized model separates better.
pub fn nc1_ratio<T: Real>(nc1_under: T, nc1_over: T) -> Result<T> {
    if !(nc1_under > T::zero() && nc1_over > T::zero() && nc1_under.is_finite() && nc1_over.is_finite()) {
        return invalid(format!("NC1 values must be positive, got {nc1_under} and {nc1_over}"));
    }
    Ok(nc1_under / nc1_over)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumReport<T: Real> {
    /// Descending eigenvalues of the sample covariance.
    pub eigenvalues: DVector<T>,
    pub explained_fraction: DVector<T>,
    /// Position of the `C`-th eigenvalue (1-based).
    pub marker_index: usize,
}

/// Eigen-profile of the centered feature covariance (`1/(n−1)` normalization).
pub fn explained_variance_spectrum<T: Real>(features: &DMatrix<T>, num_classes: usize) -> Result<SpectrumReport<T>> {
    let (n, q) = features.shape();
    if q == 0 {
        return invalid("spectrum of a table with no feature columns");
    }
    if n < 2 {
        return invalid(format!("spectrum needs at least 2 samples, got {n}"));
    }
    let mean = column_means(features);
    let cov = second_moment(features, Some(&mean)) * (T::count(n) / T::count(n - 1));
    let (eigenvalues, _) = sym_eigen_desc(&cov)?;
    let total = eigenvalues.sum();
    if !(total > T::zero()) {
        return invalid("features have zero total variance");
    }
    let explained_fraction = &eigenvalues / total;
    Ok(SpectrumReport {
        eigenvalues,
        explained_fraction,
        marker_index: num_classes,
    })
}
