//! Post-hoc OOD scoring over exported features and logits.
//!
//! Every score is oriented so that a higher value means "more
//! in-distribution". Statistics shared by the methods are fitted once on ID
//! training outputs by [`fit_id_stats`] and then reused, read-only, by any
//! number of scoring calls.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::scalar::Real;

mod fit;
mod methods;

pub use fit::{fit_id_stats, REACT_PERCENTILE};
pub use methods::*;

/// Features, and optionally logits and labels, for `n` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutputs<T: Real> {
    features: DMatrix<T>,
    logits: Option<DMatrix<T>>,
    labels: Option<Vec<usize>>,
}

impl<T: Real> ModelOutputs<T> {
    pub fn new(features: DMatrix<T>, logits: Option<DMatrix<T>>, labels: Option<Vec<usize>>) -> Result<Self> {
        let n = features.nrows();
        check_finite("features", &features)?;
        if let Some(l) = &logits {
            if l.nrows() != n {
                return invalid(format!("logits have {} rows, features have {n}", l.nrows()));
            }
            if l.ncols() < 2 {
                return invalid(format!("need at least 2 classes, logits have {} columns", l.ncols()));
            }
            check_finite("logits", l)?;
        }
        if let Some(y) = &labels {
            if y.len() != n {
                return invalid(format!("{} labels for {n} samples", y.len()));
            }
            if let Some(l) = &logits {
                if let Some((i, &c)) = y.iter().enumerate().find(|(_, &c)| c >= l.ncols()) {
                    return invalid(format!(
                        "label {c} at row {i} is out of range for {} classes",
                        l.ncols()
                    ));
                }
            }
        }
        Ok(Self {
            features,
            logits,
            labels,
        })
    }

    pub fn features(&self) -> &DMatrix<T> {
        &self.features
    }

    pub fn logits(&self) -> Option<&DMatrix<T>> {
        self.logits.as_ref()
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Feature dimension `q`.
    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    /// `C` from the logits, else `max(label) + 1`.
    pub fn num_classes(&self) -> Option<usize> {
        match (&self.logits, &self.labels) {
            (Some(l), _) => Some(l.ncols()),
            (None, Some(y)) => y.iter().max().map(|&m| m + 1),
            (None, None) => None,
        }
    }

    pub fn into_parts(self) -> (DMatrix<T>, Option<DMatrix<T>>, Option<Vec<usize>>) {
        (self.features, self.logits, self.labels)
    }
}

/// Tolerance for logits supplied next to a head that should reproduce them.
pub const HEAD_LOGIT_TOL: f64 = 1e-4;

/// Final linear layer `logits = W f + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead<T: Real> {
    w: DMatrix<T>,
    b: DVector<T>,
}

impl<T: Real> ClassifierHead<T> {
    /// `w` is `C × q`, `b` has length `C`.
    pub fn new(w: DMatrix<T>, b: DVector<T>) -> Result<Self> {
        if w.nrows() != b.len() {
            return invalid(format!("head W has {} rows, b has length {}", w.nrows(), b.len()));
        }
        if w.nrows() < 2 {
            return invalid("head needs at least 2 classes");
        }
        check_finite("head W", &w)?;
        check_finite("head b", &DMatrix::from_column_slice(b.len(), 1, b.as_slice()))?;
        Ok(Self { w, b })
    }

    pub fn weights(&self) -> &DMatrix<T> {
        &self.w
    }

    pub fn bias(&self) -> &DVector<T> {
        &self.b
    }

    pub fn num_classes(&self) -> usize {
        self.w.nrows()
    }

    pub fn dim(&self) -> usize {
        self.w.ncols()
    }

    /// Logits for each feature row, `n × C`.
    pub fn logits(&self, features: &DMatrix<T>) -> Result<DMatrix<T>> {
        if features.ncols() != self.dim() {
            return invalid(format!(
                "features have q = {}, head expects {}",
                features.ncols(),
                self.dim()
            ));
        }
        let mut out = features * self.w.transpose();
        for mut row in out.row_iter_mut() {
            row += self.b.transpose();
        }
        Ok(out)
    }

    /// Checks shape agreement with `outputs` and, when logits are present,
    /// that the head reproduces them within [`HEAD_LOGIT_TOL`].
    pub fn check_against(&self, outputs: &ModelOutputs<T>) -> Result<()> {
        if outputs.dim() != self.dim() {
            return invalid(format!(
                "features have q = {}, head expects {}",
                outputs.dim(),
                self.dim()
            ));
        }
        let Some(given) = outputs.logits() else {
            return Ok(());
        };
        if given.ncols() != self.num_classes() {
            return invalid(format!(
                "logits have {} classes, head has {}",
                given.ncols(),
                self.num_classes()
            ));
        }
        let recon = self.logits(outputs.features())?;
        let tol = T::lit(HEAD_LOGIT_TOL);
        for ((i, j), (&a, &b)) in index_pairs(given).zip(given.iter().zip(recon.iter())) {
            if (a - b).abs() > tol {
                return Err(Error::Data(format!(
                    "head does not reproduce logit ({i}, {j}): given {a}, W f + b = {b}"
                )));
            }
        }
        Ok(())
    }
}

fn index_pairs<T: Real>(m: &DMatrix<T>) -> impl Iterator<Item = (usize, usize)> {
    let r = m.nrows();
    (0..m.len()).map(move |k| (k % r, k / r))
}

pub(crate) fn check_finite<T: Real>(what: &str, m: &DMatrix<T>) -> Result<()> {
    match index_pairs(m).zip(m.iter()).find(|(_, v)| !v.is_finite()) {
        Some(((i, j), v)) => invalid(format!("{what} has non-finite value {v} at ({i}, {j})")),
        None => Ok(()),
    }
}

/// Statistics of ID training outputs shared by the scoring methods.
#[derive(Debug, Clone, PartialEq)]
pub struct IdStats<T: Real> {
    /// `C × q`, rows of absent classes are zero.
    pub class_means: DMatrix<T>,
    /// Training samples per ground-truth class.
    pub class_counts: Vec<usize>,
    /// `pinv(Σ + εI)` of the pooled within-class covariance.
    pub shared_precision: DMatrix<T>,
    /// `q × ⌊q/2⌋`.
    pub principal_basis: DMatrix<T>,
    /// `q × (q − ⌊q/2⌋)`.
    pub null_basis: DMatrix<T>,
    pub feature_offset: DVector<T>,
    /// `q × min(C, q)`.
    pub etf_basis: DMatrix<T>,
    pub react_threshold: T,
    /// Zero when no training logits were available.
    pub vim_alpha: T,
    /// Mean softmax per predicted class (`C × C`); `None` without training logits.
    pub class_mean_softmax: Option<DMatrix<T>>,
    /// Whether each predicted class had at least one training sample.
    pub template_present: Vec<bool>,
}

impl<T: Real> IdStats<T> {
    pub fn dim(&self) -> usize {
        self.feature_offset.len()
    }

    pub fn num_classes(&self) -> usize {
        self.class_means.nrows()
    }
}

/// Scoring method tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Msp,
    MaxLogit,
    Energy,
    React,
    KlMatching,
    Mahalanobis,
    Residual,
    Vim,
    AshP,
    Neco,
}

impl Method {
    pub const ALL: [Method; 10] = [
        Method::Msp,
        Method::MaxLogit,
        Method::Energy,
        Method::React,
        Method::KlMatching,
        Method::Mahalanobis,
        Method::Residual,
        Method::Vim,
        Method::AshP,
        Method::Neco,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Msp => "msp",
            Method::MaxLogit => "maxlogit",
            Method::Energy => "energy",
            Method::React => "react",
            Method::KlMatching => "klmatching",
            Method::Mahalanobis => "mahalanobis",
            Method::Residual => "residual",
            Method::Vim => "vim",
            Method::AshP => "ash_p",
            Method::Neco => "neco",
        }
    }

    /// Methods that recompute logits from modified features.
    pub fn needs_head(self) -> bool {
        matches!(self, Method::React | Method::AshP)
    }

    pub fn needs_logits(self) -> bool {
        matches!(
            self,
            Method::Msp | Method::MaxLogit | Method::Energy | Method::KlMatching | Method::Vim | Method::Neco
        )
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        match key.as_str() {
            "ash" | "ashp" => return Ok(Method::AshP),
            "kl" | "kl_matching" => return Ok(Method::KlMatching),
            "max_logit" => return Ok(Method::MaxLogit),
            "react_energy" => return Ok(Method::React),
            _ => {}
        }
        Method::ALL
            .into_iter()
            .find(|m| m.name() == key)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown scoring method '{s}'")))
    }
}

/// Per-sample scores from one method.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector<T: Real> {
    pub scores: DVector<T>,
    pub method: Method,
}

impl<T: Real> ScoreVector<T> {
    pub(crate) fn new(scores: DVector<T>, method: Method) -> Result<Self> {
        if let Some(i) = scores.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("{method} produced a non-finite score at row {i}")));
        }
        Ok(Self { scores, method })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// `log Σ exp(v)`, stabilized by the maximum.
pub fn logsumexp<T: Real>(v: &[T]) -> T {
    let m = max_of(v);
    m + v.iter().fold(T::zero(), |a, &x| a + (x - m).exp()).ln()
}

pub fn softmax<T: Real>(v: &[T]) -> Vec<T> {
    let m = max_of(v);
    let e: Vec<T> = v.iter().map(|&x| (x - m).exp()).collect();
    let s = e.iter().fold(T::zero(), |a, &x| a + x);
    e.into_iter().map(|x| x / s).collect()
}

fn max_of<T: Real>(v: &[T]) -> T {
    v.iter().copied().fold(v[0], |a, x| a.max(x))
}

/// Index of the first maximum.
pub fn argmax<T: Real>(v: &[T]) -> usize {
    let mut best = 0;
    for (j, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = j;
        }
    }
    best
}

/// `p`-th percentile (`0 ≤ p ≤ 100`) with linear interpolation between order
/// statistics. Values must be finite.
pub fn percentile<T: Real>(values: &[T], p: T) -> Result<T> {
    if values.is_empty() {
        return invalid("percentile of an empty set");
    }
    if !(p >= T::zero() && p <= T::lit(100.0)) {
        return invalid(format!("percentile {p} is outside [0, 100]"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let pos = p / T::lit(100.0) * T::count(sorted.len() - 1);
    let lo = pos.floor().as_f64() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - T::count(lo);
    Ok(sorted[lo] + frac * (sorted[hi] - sorted[lo]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn percentile_linear_interpolation() {
        let v: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_relative_eq!(percentile(&v, 90.0).unwrap(), 9.1, epsilon = 1e-12);
        assert_eq!(percentile(&v, 0.0).unwrap(), 1.0);
        assert_eq!(percentile(&v, 100.0).unwrap(), 10.0);
        assert_eq!(percentile(&v, 50.0).unwrap(), 5.5);
        assert_eq!(percentile(&[3.0], 37.0).unwrap(), 3.0);
        assert!(percentile::<f64>(&[], 50.0).is_err());
        assert!(percentile(&v, 101.0).is_err());
    }

    #[test]
    fn lse_and_softmax() {
        assert_relative_eq!(logsumexp(&[0.0, 0.0]), 2f64.ln(), epsilon = 1e-15);
        assert_eq!(logsumexp(&[1000.0, 1000.0]), 1000.0 + 2f64.ln());
        let p = softmax(&[2f64.ln(), 0.0]);
        assert_relative_eq!(p[0], 2.0 / 3.0, epsilon = 1e-15);
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert_eq!("ASH-P".parse::<Method>().unwrap(), Method::AshP);
        assert!("gram".parse::<Method>().is_err());
    }

    #[test]
    fn outputs_validation() {
        let f = DMatrix::<f64>::zeros(3, 2);
        assert!(ModelOutputs::new(f.clone(), Some(DMatrix::zeros(2, 2)), None).is_err());
        assert!(ModelOutputs::new(f.clone(), Some(DMatrix::zeros(3, 1)), None).is_err());
        assert!(ModelOutputs::new(f.clone(), Some(DMatrix::zeros(3, 2)), Some(vec![0, 1, 2])).is_err());
        assert!(ModelOutputs::new(f.clone(), None, Some(vec![0, 1])).is_err());
        let mut bad = f.clone();
        bad[(2, 1)] = f64::NAN;
        let err = ModelOutputs::new(bad, None, None).unwrap_err().to_string();
        assert!(err.contains("(2, 1)"), "{err}");
        let ok = ModelOutputs::new(f, None, Some(vec![0, 4, 1])).unwrap();
        assert_eq!(ok.num_classes(), Some(5));
    }

    #[test]
    fn head_reconstruction_check() {
        let w = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]);
        let head = ClassifierHead::new(w, DVector::from_vec(vec![0.5, -0.5])).unwrap();
        let f = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let logits = head.logits(&f).unwrap();
        assert_eq!(logits.as_slice(), &[1.5, 1.5]);
        let good = ModelOutputs::new(f.clone(), Some(logits.clone()), None).unwrap();
        head.check_against(&good).unwrap();
        let off = ModelOutputs::new(f, Some(logits.add_scalar(1e-3)), None).unwrap();
        assert!(head.check_against(&off).is_err());
    }
}
