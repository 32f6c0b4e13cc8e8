use nalgebra::{DMatrix, DVector};

use super::{argmax, percentile, softmax, ClassifierHead, IdStats, ModelOutputs};
use crate::error::{invalid, Result};
use crate::linalg::{column_means, pinv, second_moment, sym_eigen_desc};
use crate::scalar::Real;

/// Global activation percentile used as the ReAct clipping threshold.
pub const REACT_PERCENTILE: f64 = 90.0;

const RIDGE_REL: f64 = 1e-6;

/// Fits every statistic used by the feature-based scores in one pass over the
/// ID training outputs.
///
/// Logit-dependent statistics use the training logits, or the head's logits
/// when the table carries none. Without either, `vim_alpha` is 0 and
/// `class_mean_softmax` is `None`.
pub fn fit_id_stats<T: Real>(train: &ModelOutputs<T>, head: Option<&ClassifierHead<T>>) -> Result<IdStats<T>> {
    let Some(labels) = train.labels() else {
        return invalid("fitting ID statistics requires training labels");
    };
    let n = train.len();
    let q = train.dim();
    if n == 0 || q == 0 {
        return invalid(format!("cannot fit ID statistics on an empty {n}×{q} table"));
    }
    if let Some(h) = head {
        h.check_against(train)?;
    }
    let f = train.features();
    let logits = match (train.logits(), head) {
        (Some(l), _) => Some(l.clone()),
        (None, Some(h)) => Some(h.logits(f)?),
        (None, None) => None,
    };
    let c = match (&logits, train.num_classes()) {
        (Some(l), _) => l.ncols(),
        (None, Some(c)) => c.max(2),
        (None, None) => unreachable!("labels are present"),
    };
    if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= c) {
        return invalid(format!("label {y} at row {i} is out of range for {c} classes"));
    }

    // Class means and pooled within-class covariance (weights n_c / n).
    let mut class_means = DMatrix::zeros(c, q);
    let mut class_counts = vec![0usize; c];
    for (row, &y) in f.row_iter().zip(labels) {
        let mut m = class_means.row_mut(y);
        m += row;
        class_counts[y] += 1;
    }
    for (k, &cnt) in class_counts.iter().enumerate() {
        if cnt > 0 {
            class_means.row_mut(k).unscale_mut(T::count(cnt));
        }
    }
    let mut centered = f.clone();
    for (mut row, &y) in centered.row_iter_mut().zip(labels) {
        row -= class_means.row(y);
    }
    let shared_cov = second_moment(&centered, None);
    let trace = shared_cov.trace();
    let eps = if trace > T::zero() {
        T::lit(RIDGE_REL) * trace / T::count(q)
    } else {
        T::lit(RIDGE_REL)
    };
    let shared_precision = pinv(&(shared_cov + DMatrix::identity(q, q) * eps), T::zero())?;

    let feature_offset = match head {
        Some(h) => -(pinv(h.weights(), T::zero())? * h.bias()),
        None => column_means(f),
    };
    let (_, vecs) = sym_eigen_desc(&second_moment(f, Some(&feature_offset)))?;
    let dp = q / 2;
    let principal_basis = vecs.columns(0, dp).into_owned();
    let null_basis = vecs.columns(dp, q - dp).into_owned();

    let (_, raw_vecs) = sym_eigen_desc(&second_moment(f, None))?;
    let etf_basis = raw_vecs.columns(0, c.min(q)).into_owned();

    let react_threshold = percentile(f.as_slice(), T::lit(REACT_PERCENTILE))?;

    let (vim_alpha, class_mean_softmax, template_present) = match &logits {
        Some(l) => {
            let alpha = vim_alpha(f, l, &feature_offset, &null_basis);
            let (t, present) = class_templates(l);
            (alpha, Some(t), present)
        }
        None => (T::zero(), None, vec![false; c]),
    };

    Ok(IdStats {
        class_means,
        class_counts,
        shared_precision,
        principal_basis,
        null_basis,
        feature_offset,
        etf_basis,
        react_threshold,
        vim_alpha,
        class_mean_softmax,
        template_present,
    })
}

/// Σ max logit / Σ residual norm, clamped at 0 and 0 for a zero residual.
fn vim_alpha<T: Real>(f: &DMatrix<T>, logits: &DMatrix<T>, offset: &DVector<T>, null: &DMatrix<T>) -> T {
    let max_sum = logits
        .row_iter()
        .fold(T::zero(), |a, r| a + r.iter().copied().fold(r[0], |m, x| m.max(x)));
    let res_sum = residual_norms(f, offset, null).sum();
    if res_sum > T::zero() {
        (max_sum / res_sum).max(T::zero())
    } else {
        T::zero()
    }
}

pub(super) fn residual_norms<T: Real>(f: &DMatrix<T>, offset: &DVector<T>, null: &DMatrix<T>) -> DVector<T> {
    let mut shifted = f.clone();
    for mut row in shifted.row_iter_mut() {
        row -= offset.transpose();
    }
    let proj = shifted * null;
    DVector::from_iterator(proj.nrows(), proj.row_iter().map(|r| r.norm()))
}

/// Mean softmax over the samples predicted as each class.
fn class_templates<T: Real>(logits: &DMatrix<T>) -> (DMatrix<T>, Vec<bool>) {
    let c = logits.ncols();
    let mut sums = DMatrix::zeros(c, c);
    let mut counts = vec![0usize; c];
    for r in logits.row_iter() {
        let row: Vec<T> = r.iter().copied().collect();
        let k = argmax(&row);
        for (j, p) in softmax(&row).into_iter().enumerate() {
            sums[(k, j)] += p;
        }
        counts[k] += 1;
    }
    for (k, &cnt) in counts.iter().enumerate() {
        if cnt > 0 {
            sums.row_mut(k).unscale_mut(T::count(cnt));
        }
    }
    (sums, counts.into_iter().map(|c| c > 0).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    fn random_outputs(n: usize, q: usize, c: usize, seed: u64) -> (ModelOutputs<f64>, ClassifierHead<f64>) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<usize> = (0..n).map(|i| i % c).collect();
        let f = DMatrix::from_fn(n, q, |i, j| {
            f64::std_normal(&mut rng) + if j == labels[i] { 3.0 } else { 0.0 }
        });
        let w = DMatrix::from_fn(c, q, |_, _| f64::std_normal(&mut rng));
        let b = DVector::from_fn(c, |_, _| f64::std_normal(&mut rng));
        let head = ClassifierHead::new(w, b).unwrap();
        let logits = head.logits(&f).unwrap();
        (ModelOutputs::new(f, Some(logits), Some(labels)).unwrap(), head)
    }

    #[test]
    fn degenerate_clusters() {
        let f = DMatrix::from_row_slice(4, 2, &[1.0, 2.0, 1.0, 2.0, -3.0, 0.5, -3.0, 0.5]);
        let out = ModelOutputs::new(f, None, Some(vec![0, 0, 1, 1])).unwrap();
        let s = fit_id_stats(&out, None).unwrap();
        assert_eq!(s.class_means.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 2.0]);
        assert_eq!(
            s.class_means.row(1).iter().copied().collect::<Vec<_>>(),
            vec![-3.0, 0.5]
        );
        // Zero covariance: the ridge falls back to 1e-6.
        assert_relative_eq!(s.shared_precision, DMatrix::identity(2, 2) * 1e6, max_relative = 1e-9);
        assert_eq!(s.vim_alpha, 0.0);
        assert!(s.class_mean_softmax.is_none());
    }

    #[test]
    fn equal_logits_give_uniform_templates() {
        let f = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 3.0]);
        let out = ModelOutputs::new(f, Some(DMatrix::from_element(3, 4, 0.7)), Some(vec![0, 1, 2])).unwrap();
        let s = fit_id_stats(&out, None).unwrap();
        let t = s.class_mean_softmax.unwrap();
        // Ties go to class 0, so only that template is present.
        assert_eq!(s.template_present, vec![true, false, false, false]);
        for j in 0..4 {
            assert_relative_eq!(t[(0, j)], 0.25, epsilon = 1e-15);
        }
    }

    #[test]
    fn vim_alpha_is_the_sum_ratio() {
        // q = 2, D = 1. Offset is the mean (0, 0); the null direction is the
        // low-variance axis e₂ with residuals 1.25 each (sum 5). Max logits
        // sum to 10.
        let f = DMatrix::from_row_slice(4, 2, &[10.0, 1.25, -10.0, 1.25, 10.0, -1.25, -10.0, -1.25]);
        let logits = DMatrix::from_row_slice(4, 2, &[2.0, 1.0, 0.0, 3.0, 2.5, 2.5, 2.5, -1.0]);
        let out = ModelOutputs::new(f, Some(logits), Some(vec![0, 1, 0, 1])).unwrap();
        let s = fit_id_stats(&out, None).unwrap();
        assert_relative_eq!(
            s.null_basis.column(0).abs(),
            DVector::from_vec(vec![0.0, 1.0]),
            epsilon = 1e-12
        );
        assert_relative_eq!(s.vim_alpha, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn bases_are_orthonormal_and_complementary() {
        let (out, head) = random_outputs(200, 7, 3, 4);
        let s = fit_id_stats(&out, Some(&head)).unwrap();
        assert_eq!(
            (s.principal_basis.ncols(), s.null_basis.ncols(), s.etf_basis.ncols()),
            (3, 4, 3)
        );
        let eye = |k| DMatrix::<f64>::identity(k, k);
        assert_relative_eq!(s.principal_basis.tr_mul(&s.principal_basis), eye(3), epsilon = 1e-10);
        assert_relative_eq!(s.null_basis.tr_mul(&s.null_basis), eye(4), epsilon = 1e-10);
        assert!(s.principal_basis.tr_mul(&s.null_basis).amax() <= 1e-8);
        assert_relative_eq!(s.etf_basis.tr_mul(&s.etf_basis), eye(3), epsilon = 1e-10);
        // Offset −W⁺b maps to zero logits up to the component outside row(W).
        let recon = head.weights() * &s.feature_offset + head.bias();
        assert!(recon.amax() < 1e-10);
    }

    #[test]
    fn missing_labels_and_bad_head() {
        let f = DMatrix::<f64>::zeros(2, 2);
        let out = ModelOutputs::new(f.clone(), None, None).unwrap();
        assert!(fit_id_stats(&out, None).is_err());
        let out = ModelOutputs::new(f, None, Some(vec![0, 1])).unwrap();
        let head = ClassifierHead::new(DMatrix::zeros(2, 3), DVector::zeros(2)).unwrap();
        assert!(fit_id_stats(&out, Some(&head)).is_err());
    }

    fn max_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).amax()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn fit_is_permutation_invariant(seed in 0u64..1000, shuffle in 0u64..1000) {
            let (out, head) = random_outputs(60, 5, 3, seed);
            let mut idx: Vec<usize> = (0..60).collect();
            idx.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(shuffle));
            let f = out.features().select_rows(&idx);
            let l = out.logits().unwrap().select_rows(&idx);
            let y: Vec<usize> = idx.iter().map(|&i| out.labels().unwrap()[i]).collect();
            let shuffled = ModelOutputs::new(f, Some(l), Some(y)).unwrap();
            let a = fit_id_stats(&out, Some(&head)).unwrap();
            let b = fit_id_stats(&shuffled, Some(&head)).unwrap();
            let tol = 1e-10;
            prop_assert!(max_diff(&a.class_means, &b.class_means) <= tol);
            prop_assert!(max_diff(&a.shared_precision, &b.shared_precision) <= tol * a.shared_precision.amax());
            prop_assert!(max_diff(&a.principal_basis, &b.principal_basis) <= tol);
            prop_assert!(max_diff(&a.null_basis, &b.null_basis) <= tol);
            prop_assert!(max_diff(&a.etf_basis, &b.etf_basis) <= tol);
            prop_assert!((&a.feature_offset - &b.feature_offset).amax() <= tol);
            prop_assert_eq!(a.react_threshold, b.react_threshold);
            prop_assert!((a.vim_alpha - b.vim_alpha).abs() <= tol);
            prop_assert!(max_diff(a.class_mean_softmax.as_ref().unwrap(), b.class_mean_softmax.as_ref().unwrap()) <= tol);
            prop_assert_eq!(a.class_counts, b.class_counts);
        }
    }
}
