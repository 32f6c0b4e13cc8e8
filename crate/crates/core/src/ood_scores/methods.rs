use nalgebra::{DMatrix, DVector};

use super::fit::residual_norms;
use super::{check_finite, logsumexp, percentile, softmax, ClassifierHead, IdStats, Method, ModelOutputs, ScoreVector};
use crate::error::{invalid, Error, Result};
use crate::scalar::Real;

/// Reference probabilities are floored here before taking logs.
pub const KL_FLOOR: f64 = 1e-12;

fn check_logits<T: Real>(logits: &DMatrix<T>) -> Result<()> {
    if logits.ncols() < 2 {
        return invalid(format!(
            "need at least 2 classes, logits have {} columns",
            logits.ncols()
        ));
    }
    check_finite("logits", logits)
}

fn check_features<T: Real>(features: &DMatrix<T>, q: usize) -> Result<()> {
    if features.ncols() != q {
        return invalid(format!("features have q = {}, expected {q}", features.ncols()));
    }
    check_finite("features", features)
}

fn check_rows<T: Real>(features: &DMatrix<T>, logits: &DMatrix<T>) -> Result<()> {
    if features.nrows() != logits.nrows() {
        return invalid(format!(
            "{} feature rows but {} logit rows",
            features.nrows(),
            logits.nrows()
        ));
    }
    Ok(())
}

fn per_row<T: Real>(m: &DMatrix<T>, f: impl Fn(&[T]) -> T) -> DVector<T> {
    let mut buf = Vec::with_capacity(m.ncols());
    DVector::from_iterator(
        m.nrows(),
        m.row_iter().map(|r| {
            buf.clear();
            buf.extend(r.iter().copied());
            f(&buf)
        }),
    )
}

fn row_max<T: Real>(r: &[T]) -> T {
    r.iter().copied().fold(r[0], |a, x| a.max(x))
}

fn energy_of<T: Real>(logits: &DMatrix<T>, temperature: T) -> DVector<T> {
    per_row(logits, |r| {
        let scaled: Vec<T> = r.iter().map(|&x| x / temperature).collect();
        temperature * logsumexp(&scaled)
    })
}

fn check_temperature<T: Real>(t: T) -> Result<()> {
    if !(t > T::zero() && t.is_finite()) {
        return invalid(format!("temperature must be positive and finite, got {t}"));
    }
    Ok(())
}

/// Maximum softmax probability.
pub fn score_msp<T: Real>(logits: &DMatrix<T>) -> Result<ScoreVector<T>> {
    check_logits(logits)?;
    ScoreVector::new(per_row(logits, |r| row_max(&softmax(r))), Method::Msp)
}

pub fn score_maxlogit<T: Real>(logits: &DMatrix<T>) -> Result<ScoreVector<T>> {
    check_logits(logits)?;
    ScoreVector::new(per_row(logits, row_max), Method::MaxLogit)
}

/// Negative energy `T · log Σ exp(l / T)`.
pub fn score_energy<T: Real>(logits: &DMatrix<T>, temperature: T) -> Result<ScoreVector<T>> {
    check_logits(logits)?;
    check_temperature(temperature)?;
    ScoreVector::new(energy_of(logits, temperature), Method::Energy)
}

/// Energy of logits recomputed from features clipped at `stats.react_threshold`.
pub fn score_react_energy<T: Real>(
    features: &DMatrix<T>,
    head: &ClassifierHead<T>,
    stats: &IdStats<T>,
    temperature: T,
) -> Result<ScoreVector<T>> {
    score_react_energy_at(features, head, stats.react_threshold, temperature)
}

/// ReAct with an explicit threshold; `+∞` disables clipping.
pub fn score_react_energy_at<T: Real>(
    features: &DMatrix<T>,
    head: &ClassifierHead<T>,
    threshold: T,
    temperature: T,
) -> Result<ScoreVector<T>> {
    check_features(features, head.dim())?;
    check_temperature(temperature)?;
    if threshold.partial_cmp(&threshold).is_none() {
        return invalid("ReAct threshold is NaN");
    }
    let clipped = features.map(|v| v.min(threshold));
    let logits = head.logits(&clipped)?;
    ScoreVector::new(energy_of(&logits, temperature), Method::React)
}

fn kl<T: Real>(p: &[T], q: &[T]) -> T {
    let floor = T::lit(KL_FLOOR);
    p.iter().zip(q).fold(T::zero(), |a, (&pi, &qi)| {
        if pi > T::zero() {
            a + pi * (pi / qi.max(floor)).ln()
        } else {
            a
        }
    })
}

/// `−min_c KL(softmax(l) ‖ template_c)` over the templates that are present.
pub fn score_klmatching<T: Real>(logits: &DMatrix<T>, stats: &IdStats<T>) -> Result<ScoreVector<T>> {
    check_logits(logits)?;
    let Some(templates) = &stats.class_mean_softmax else {
        return invalid("KL-Matching needs class templates fitted from training logits");
    };
    if templates.ncols() != logits.ncols() {
        return invalid(format!(
            "logits have {} classes, templates have {}",
            logits.ncols(),
            templates.ncols()
        ));
    }
    let rows: Vec<Vec<T>> = templates
        .row_iter()
        .zip(&stats.template_present)
        .filter(|(_, &p)| p)
        .map(|(r, _)| r.iter().copied().collect())
        .collect();
    if rows.is_empty() {
        return invalid("no class template is present");
    }
    let scores = per_row(logits, |r| {
        let p = softmax(r);
        let best = rows
            .iter()
            .map(|t| kl(&p, t))
            .fold(T::max_value().unwrap(), |a, x| a.min(x));
        -best
    });
    ScoreVector::new(scores, Method::KlMatching)
}

/// `−min_c (f − μ_c)ᵀ P (f − μ_c)` over classes seen in training.
pub fn score_mahalanobis<T: Real>(features: &DMatrix<T>, stats: &IdStats<T>) -> Result<ScoreVector<T>> {
    check_features(features, stats.dim())?;
    let mut best = DVector::from_element(features.nrows(), T::max_value().unwrap());
    let mut any = false;
    for (k, &cnt) in stats.class_counts.iter().enumerate() {
        if cnt == 0 {
            continue;
        }
        any = true;
        let mut d = features.clone();
        for mut row in d.row_iter_mut() {
            row -= stats.class_means.row(k);
        }
        let pd = &d * &stats.shared_precision;
        for (i, b) in best.iter_mut().enumerate() {
            let q = d.row(i).dot(&pd.row(i)).max(T::zero());
            *b = b.min(q);
        }
    }
    if !any {
        return invalid("no class has training samples");
    }
    ScoreVector::new(-best, Method::Mahalanobis)
}

/// `−‖Nᵀ(f − o)‖`.
pub fn score_residual<T: Real>(features: &DMatrix<T>, stats: &IdStats<T>) -> Result<ScoreVector<T>> {
    check_features(features, stats.dim())?;
    let r = residual_norms(features, &stats.feature_offset, &stats.null_basis);
    ScoreVector::new(-r, Method::Residual)
}

/// `logsumexp(l) − α ‖Nᵀ(f − o)‖`.
pub fn score_vim<T: Real>(features: &DMatrix<T>, logits: &DMatrix<T>, stats: &IdStats<T>) -> Result<ScoreVector<T>> {
    check_features(features, stats.dim())?;
    check_logits(logits)?;
    check_rows(features, logits)?;
    let r = residual_norms(features, &stats.feature_offset, &stats.null_basis);
    let lse = per_row(logits, logsumexp);
    ScoreVector::new(lse - r * stats.vim_alpha, Method::Vim)
}

/// Zeroes, per sample, the entries strictly below that sample's
/// `percentile`-th value, then scores the recomputed logits by energy.
pub fn score_ash_p<T: Real>(
    features: &DMatrix<T>,
    head: &ClassifierHead<T>,
    percentile_p: T,
    temperature: T,
) -> Result<ScoreVector<T>> {
    check_features(features, head.dim())?;
    check_temperature(temperature)?;
    let mut pruned = features.clone();
    for mut row in pruned.row_iter_mut() {
        let vals: Vec<T> = row.iter().copied().collect();
        if vals.is_empty() {
            continue;
        }
        let thr = percentile(&vals, percentile_p)?;
        row.apply(|v| {
            if *v < thr {
                *v = T::zero()
            }
        });
    }
    let logits = head.logits(&pruned)?;
    ScoreVector::new(energy_of(&logits, temperature), Method::AshP)
}

/// `‖Bᵀf‖ / ‖f‖ · max logit`; a zero feature vector scores 0.
pub fn score_neco<T: Real>(features: &DMatrix<T>, logits: &DMatrix<T>, stats: &IdStats<T>) -> Result<ScoreVector<T>> {
    check_features(features, stats.dim())?;
    check_logits(logits)?;
    check_rows(features, logits)?;
    let proj = features * &stats.etf_basis;
    let scores = DVector::from_iterator(
        features.nrows(),
        (0..features.nrows()).map(|i| {
            let norm = features.row(i).norm();
            if norm == T::zero() {
                return T::zero();
            }
            let ratio = (proj.row(i).norm() / norm).min(T::one());
            let ml = logits.row(i).iter().copied().fold(logits[(i, 0)], |a, x| a.max(x));
            ratio * ml
        }),
    );
    ScoreVector::new(scores, Method::Neco)
}

/// Tunable knobs shared by [`score_method`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreParams<T> {
    pub temperature: T,
    pub ash_percentile: T,
}

impl<T: Real> Default for ScoreParams<T> {
    fn default() -> Self {
        Self {
            temperature: T::one(),
            ash_percentile: T::lit(90.0),
        }
    }
}

/// Runs `method` on `eval`. Missing logits are recomputed from `head` when
/// one is given.
pub fn score_method<T: Real>(
    method: Method,
    eval: &ModelOutputs<T>,
    head: Option<&ClassifierHead<T>>,
    stats: Option<&IdStats<T>>,
    params: &ScoreParams<T>,
) -> Result<ScoreVector<T>> {
    let f = eval.features();
    let derived;
    let logits = match (eval.logits(), head) {
        (Some(l), _) => Some(l),
        (None, Some(h)) => {
            derived = h.logits(f)?;
            Some(&derived)
        }
        (None, None) => None,
    };
    let need_logits = || {
        logits.ok_or_else(|| Error::InvalidArgument(format!("{method} needs logits: the table has no logits block")))
    };
    let need_head = || {
        head.ok_or_else(|| {
            Error::InvalidArgument(format!("{method} needs a classifier head: the table has no head block"))
        })
    };
    let need_stats = || {
        stats.ok_or_else(|| {
            Error::InvalidArgument(format!("{method} needs ID statistics from a labelled training table"))
        })
    };
    match method {
        Method::Msp => score_msp(need_logits()?),
        Method::MaxLogit => score_maxlogit(need_logits()?),
        Method::Energy => score_energy(need_logits()?, params.temperature),
        Method::React => score_react_energy(f, need_head()?, need_stats()?, params.temperature),
        Method::KlMatching => score_klmatching(need_logits()?, need_stats()?),
        Method::Mahalanobis => score_mahalanobis(f, need_stats()?),
        Method::Residual => score_residual(f, need_stats()?),
        Method::Vim => score_vim(f, need_logits()?, need_stats()?),
        Method::AshP => score_ash_p(f, need_head()?, params.ash_percentile, params.temperature),
        Method::Neco => score_neco(f, need_logits()?, need_stats()?),
    }
}

/// Methods that can run given which blocks are available.
pub fn applicable_methods(has_logits: bool, has_head: bool, has_stats: bool) -> Vec<Method> {
    let logits = has_logits || has_head;
    Method::ALL
        .into_iter()
        .filter(|m| match m {
            Method::Msp | Method::MaxLogit | Method::Energy => logits,
            Method::React | Method::AshP => has_head && (has_stats || *m == Method::AshP),
            Method::KlMatching | Method::Vim | Method::Neco => logits && has_stats,
            Method::Mahalanobis | Method::Residual => has_stats,
        })
        .collect()
}
