//! Closed-form risk factor `c(n, p, σ)` and the expected-risk / OOD-risk
//! sandwiches it feeds.

use std::fmt;

use crate::error::{invalid, Result};
use crate::gauss_model::TeacherModel;
use crate::least_squares::FeatureSubset;
use crate::scalar::Real;

/// A non-negative real or `+∞`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Extended<T> {
    Finite(T),
    Infinite,
}

impl<T: Real> Extended<T> {
    pub fn is_infinite(&self) -> bool {
        matches!(self, Extended::Infinite)
    }

    pub fn finite(&self) -> Option<T> {
        match *self {
            Extended::Finite(v) => Some(v),
            Extended::Infinite => None,
        }
    }

    /// `k · self` for `k > 0`.
    pub fn scale(self, k: T) -> Self {
        match self {
            Extended::Finite(v) => Extended::Finite(k * v),
            Extended::Infinite => Extended::Infinite,
        }
    }

    pub fn shift(self, a: T) -> Self {
        match self {
            Extended::Finite(v) => Extended::Finite(v + a),
            Extended::Infinite => Extended::Infinite,
        }
    }

    /// Value as `f64`, mapping `+∞` to `f64::INFINITY`.
    pub fn to_f64(self) -> f64 {
        match self {
            Extended::Finite(v) => v.as_f64(),
            Extended::Infinite => f64::INFINITY,
        }
    }

    fn le(&self, other: &Self) -> bool {
        match (self, other) {
            (_, Extended::Infinite) => true,
            (Extended::Infinite, Extended::Finite(_)) => false,
            (Extended::Finite(a), Extended::Finite(b)) => a <= b,
        }
    }
}

impl<T: Real> fmt::Display for Extended<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Extended::Finite(v) => write!(f, "{v}"),
            Extended::Infinite => f.write_str("inf"),
        }
    }
}

/// `‖w*_T‖²` and `‖w*_{T^c}‖²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubsetNorms<T> {
    pub w_t_norm2: T,
    pub w_tc_norm2: T,
}

impl<T: Real> SubsetNorms<T> {
    pub fn new(w_t_norm2: T, w_tc_norm2: T) -> Result<Self> {
        if !(w_t_norm2 >= T::zero()) || !(w_tc_norm2 >= T::zero()) {
            return invalid("subset norms must be non-negative");
        }
        Ok(Self { w_t_norm2, w_tc_norm2 })
    }

    pub fn from_teacher(teacher: &TeacherModel<T>, subset: &FeatureSubset) -> Result<Self> {
        if subset.d() != teacher.d() {
            return invalid(format!(
                "subset is over d = {}, teacher has d = {}",
                subset.d(),
                teacher.d()
            ));
        }
        let w = teacher.w_star();
        let inside = subset.indices().iter().fold(T::zero(), |a, &j| a + w[j] * w[j]);
        let outside = subset.complement().iter().fold(T::zero(), |a, &j| a + w[j] * w[j]);
        Self::new(inside, outside)
    }
}

/// Which numerator the classical branch (`p ≤ n − 2`) uses.
///
/// `Printed` is `n/(n−p−1)`. `Exact` is `p/(n−p−1)`, the value of
/// `E tr((X_TᵀX_T)⁻¹)` for a `W_p(n, I)` Wishart matrix, which is what the
/// Monte Carlo weight-error oracle converges to. The two coincide for
/// `p ≥ n + 2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CFactorForm {
    #[default]
    Printed,
    Exact,
}

impl std::str::FromStr for CFactorForm {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "printed" => Ok(CFactorForm::Printed),
            "exact" => Ok(CFactorForm::Exact),
            other => Err(format!("unknown c-factor form '{other}' (expected printed|exact)")),
        }
    }
}

/// `c(n, p, σ)` in its printed three-case form.
pub fn c_factor<T: Real>(n: usize, p: usize, sigma: T, norms: &SubsetNorms<T>) -> Result<Extended<T>> {
    c_factor_with(CFactorForm::Printed, n, p, sigma, norms)
}

pub fn c_factor_with<T: Real>(
    form: CFactorForm,
    n: usize,
    p: usize,
    sigma: T,
    norms: &SubsetNorms<T>,
) -> Result<Extended<T>> {
    if n == 0 || p == 0 {
        return invalid(format!("need n ≥ 1 and p ≥ 1, got n = {n}, p = {p}"));
    }
    if !(sigma >= T::zero()) || !sigma.is_finite() {
        return invalid(format!("sigma must be finite and non-negative, got {sigma}"));
    }
    let tc = norms.w_tc_norm2;
    let noise = tc + sigma * sigma;
    let (nf, pf) = (T::count(n), T::count(p));
    if p + 2 <= n {
        let numerator = match form {
            CFactorForm::Printed => nf,
            CFactorForm::Exact => pf,
        };
        Ok(Extended::Finite(numerator / T::count(n - p - 1) * noise + tc))
    } else if p <= n + 1 {
        Ok(Extended::Infinite)
    } else {
        let head = (T::one() - nf / pf) * norms.w_t_norm2;
        Ok(Extended::Finite(head + nf / T::count(p - n - 1) * noise + tc))
    }
}

/// `0 < λ_min ≤ λ_max`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectrumBounds<T> {
    pub lambda_min: T,
    pub lambda_max: T,
}

impl<T: Real> SpectrumBounds<T> {
    pub fn new(lambda_min: T, lambda_max: T) -> Result<Self> {
        if !(lambda_min > T::zero()) || !(lambda_min <= lambda_max) || !lambda_max.is_finite() {
            return invalid(format!("need 0 < λ_min ≤ λ_max, got ({lambda_min}, {lambda_max})"));
        }
        Ok(Self { lambda_min, lambda_max })
    }

    /// Spectrum of `λ I`.
    pub fn isotropic(lambda: T) -> Result<Self> {
        Self::new(lambda, lambda)
    }
}

/// `lo ≤ hi` over the extended reals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundInterval<T> {
    lo: Extended<T>,
    hi: Extended<T>,
}

/// A candidate interval whose lower end exceeds its upper end.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InvertedBounds<T> {
    pub lo: Extended<T>,
    pub hi: Extended<T>,
}

impl<T: Real> fmt::Display for InvertedBounds<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "inverted bound interval: lo = {} > hi = {}", self.lo, self.hi)
    }
}

impl<T: Real> std::error::Error for InvertedBounds<T> {}

impl<T: Real> BoundInterval<T> {
    pub fn new(lo: Extended<T>, hi: Extended<T>) -> std::result::Result<Self, InvertedBounds<T>> {
        if lo.le(&hi) {
            Ok(Self { lo, hi })
        } else {
            Err(InvertedBounds { lo, hi })
        }
    }

    pub fn lo(&self) -> Extended<T> {
        self.lo
    }

    pub fn hi(&self) -> Extended<T> {
        self.hi
    }

    pub fn is_point(&self) -> bool {
        self.lo == self.hi
    }
}

/// `(λ_min c + σ², λ_max c + σ²)`.
pub fn risk_bounds<T: Real>(c: Extended<T>, spectrum: &SpectrumBounds<T>, sigma: T) -> BoundInterval<T> {
    let s2 = sigma * sigma;
    BoundInterval::new(
        c.scale(spectrum.lambda_min).shift(s2),
        c.scale(spectrum.lambda_max).shift(s2),
    )
    .expect("λ_min ≤ λ_max keeps the interval ordered")
}

/// Additive/multiplicative constants of the OOD-risk sandwich.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BoundConvention {
    /// `(λ_min+λ_min^OOD) c + 2σ′²` and `(λ_max+λ_max^OOD) c + σ′²`.
    PaperLiteral,
    /// `4(λ_min+λ_min^OOD) c + 2σ′²` and `4(λ_max+λ_max^OOD) c + 2σ′²`;
    /// the factor 4 comes from expanding `(2xᵀΔφ′)²`.
    #[default]
    ProofConsistent,
}

impl BoundConvention {
    pub fn name(self) -> &'static str {
        match self {
            BoundConvention::PaperLiteral => "paper",
            BoundConvention::ProofConsistent => "proof",
        }
    }
}

impl std::str::FromStr for BoundConvention {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "paper" => Ok(BoundConvention::PaperLiteral),
            "proof" => Ok(BoundConvention::ProofConsistent),
            other => Err(format!("unknown convention '{other}' (expected proof|paper)")),
        }
    }
}

pub fn ood_risk_bounds<T: Real>(
    c: Extended<T>,
    id_spec: &SpectrumBounds<T>,
    ood_spec: &SpectrumBounds<T>,
    sigma_prime: T,
    convention: BoundConvention,
) -> std::result::Result<BoundInterval<T>, InvertedBounds<T>> {
    let sp2 = sigma_prime * sigma_prime;
    let two = T::lit(2.0);
    let lam_lo = id_spec.lambda_min + ood_spec.lambda_min;
    let lam_hi = id_spec.lambda_max + ood_spec.lambda_max;
    match convention {
        BoundConvention::PaperLiteral => {
            BoundInterval::new(c.scale(lam_lo).shift(two * sp2), c.scale(lam_hi).shift(sp2))
        }
        BoundConvention::ProofConsistent => {
            let four = T::lit(4.0);
            BoundInterval::new(
                c.scale(four * lam_lo).shift(two * sp2),
                c.scale(four * lam_hi).shift(two * sp2),
            )
        }
    }
}

/// OOD sandwich under both conventions for one choice of `c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OodBounds<T> {
    pub proof_consistent: BoundInterval<T>,
    pub paper_literal: std::result::Result<BoundInterval<T>, InvertedBounds<T>>,
}

impl<T: Real> OodBounds<T> {
    fn compute(c: Extended<T>, id: &SpectrumBounds<T>, ood: &SpectrumBounds<T>, sigma_prime: T) -> Self {
        Self {
            proof_consistent: ood_risk_bounds(c, id, ood, sigma_prime, BoundConvention::ProofConsistent)
                .expect("proof-consistent interval is always ordered"),
            paper_literal: ood_risk_bounds(c, id, ood, sigma_prime, BoundConvention::PaperLiteral),
        }
    }

    /// `(lo, hi)` for the chosen convention, even when the literal form is inverted.
    pub fn ends(&self, convention: BoundConvention) -> (Extended<T>, Extended<T>) {
        match convention {
            BoundConvention::ProofConsistent => (self.proof_consistent.lo(), self.proof_consistent.hi()),
            BoundConvention::PaperLiteral => match self.paper_literal {
                Ok(b) => (b.lo(), b.hi()),
                Err(e) => (e.lo, e.hi),
            },
        }
    }
}

/// One tabulated point of the theory curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoryRecord<T> {
    pub p: usize,
    /// `c(n, p, σ)` with the training noise.
    pub c: Extended<T>,
    /// `c(n, p, σ′)` with the OOD-response noise.
    pub c_ood_noise: Extended<T>,
    pub risk: BoundInterval<T>,
    /// OOD sandwich with `c(n, p, σ)`.
    pub ood: OodBounds<T>,
    /// OOD sandwich with `c(n, p, σ′)`.
    pub ood_with_ood_noise: OodBounds<T>,
}

pub(crate) fn check_increasing(schedule: &[FeatureSubset], d: usize) -> Result<()> {
    for s in schedule {
        if s.d() != d {
            return invalid(format!("subset over d = {} in a sweep over d = {d}", s.d()));
        }
    }
    if schedule.windows(2).any(|w| w[0].len() >= w[1].len()) {
        return invalid("subset schedule must be strictly increasing in p");
    }
    Ok(())
}

pub(crate) fn theory_record<T: Real>(
    form: CFactorForm,
    teacher: &TeacherModel<T>,
    subset: &FeatureSubset,
    n: usize,
    spectra: &(SpectrumBounds<T>, SpectrumBounds<T>),
    sigma_prime: T,
) -> Result<TheoryRecord<T>> {
    let norms = SubsetNorms::from_teacher(teacher, subset)?;
    let p = subset.len();
    let c = c_factor_with(form, n, p, teacher.sigma(), &norms)?;
    let c_ood_noise = c_factor_with(form, n, p, sigma_prime, &norms)?;
    let (id, ood) = spectra;
    Ok(TheoryRecord {
        p,
        c,
        c_ood_noise,
        risk: risk_bounds(c, id, teacher.sigma()),
        ood: OodBounds::compute(c, id, ood, sigma_prime),
        ood_with_ood_noise: OodBounds::compute(c_ood_noise, id, ood, sigma_prime),
    })
}

/// Tabulates both sandwiches over a schedule of subsets (printed `c`).
pub fn theory_sweep<T: Real>(
    teacher: &TeacherModel<T>,
    subset_schedule: &[FeatureSubset],
    n: usize,
    spectra: (SpectrumBounds<T>, SpectrumBounds<T>),
    sigma_prime: T,
) -> Result<Vec<TheoryRecord<T>>> {
    theory_sweep_with(CFactorForm::Printed, teacher, subset_schedule, n, spectra, sigma_prime)
}

pub fn theory_sweep_with<T: Real>(
    form: CFactorForm,
    teacher: &TeacherModel<T>,
    subset_schedule: &[FeatureSubset],
    n: usize,
    spectra: (SpectrumBounds<T>, SpectrumBounds<T>),
    sigma_prime: T,
) -> Result<Vec<TheoryRecord<T>>> {
    check_increasing(subset_schedule, teacher.d())?;
    subset_schedule
        .iter()
        .map(|s| theory_record(form, teacher, s, n, &spectra, sigma_prime))
        .collect()
}

pub(crate) use check_increasing as check_schedule;
