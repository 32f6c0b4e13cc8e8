//! Monte Carlo oracles for the expected risk, the expected OOD risk and the
//! expected weight error of subset least-squares classifiers.
//!
//! Trial `k` draws all of its randomness from seeds derived as
//! `mix(base_seed, k)`, with one sub-stream per sample component. Trials run in
//! parallel on the ambient rayon pool and are aggregated in index order, so an
//! estimate depends only on its inputs and `base_seed`, never on scheduling.
//! The training and test draws of a trial do not depend on the subset, so a
//! sweep evaluates every subset on the same draws that a single-subset call
//! would use.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::gauss_model::{
    draw_inputs, draw_noise, estimate_sigma_spectrum, link, sample_train, Activation, OodInputConfig, SampleSet,
    TeacherModel,
};
use crate::least_squares::{fit_subset, FeatureSubset, SubsetClassifier};
use crate::risk_theory::{check_schedule, theory_record, CFactorForm, SpectrumBounds, TheoryRecord};
use crate::rng::{mix, stream};
use crate::scalar::Real;

const TRAIN_STREAM: u64 = 0;
const TEST_STREAM: u64 = 1;
const OOD_STREAM: u64 = 2;
const SPECTRUM_STREAM: u64 = u64::MAX;

/// Draws used by a Sigmoid sweep to estimate `Σ` and `Σ^OOD`.
pub const SPECTRUM_SAMPLES: usize = 200_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct McConfig {
    /// Independent training sets (outer expectation over X).
    pub trials: usize,
    /// Fresh evaluation points per trial (inner expectation).
    pub test_points: usize,
    pub base_seed: u64,
}

impl McConfig {
    pub fn new(trials: usize, test_points: usize, base_seed: u64) -> Result<Self> {
        let cfg = Self {
            trials,
            test_points,
            base_seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if self.trials == 0 || self.test_points == 0 {
            return invalid(format!(
                "need trials ≥ 1 and test_points ≥ 1, got {} and {}",
                self.trials, self.test_points
            ));
        }
        Ok(())
    }

    fn trial_seed(&self, k: usize) -> u64 {
        mix(self.base_seed, k as u64)
    }
}

/// Sample mean and its standard error across trials.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate<T> {
    pub mean: T,
    pub std_error: T,
    pub trials: usize,
}

impl<T: Real> McEstimate<T> {
    /// Mean and `s/√k` of per-trial values, summed in index order. A single
    /// trial reports a zero standard error.
    pub fn from_samples(values: &[T]) -> Self {
        let k = values.len();
        let kf = T::count(k.max(1));
        let mean = values.iter().fold(T::zero(), |a, &v| a + v) / kf;
        let std_error = if k > 1 {
            let ss = values.iter().fold(T::zero(), |a, &v| a + (v - mean) * (v - mean));
            (ss / T::count(k - 1) / kf).sqrt()
        } else {
            T::zero()
        };
        Self {
            mean,
            std_error,
            trials: k,
        }
    }

    /// `√(se₁² + se₂²)`.
    pub fn combined_se(&self, other: &Self) -> T {
        (self.std_error * self.std_error + other.std_error * other.std_error).sqrt()
    }
}

struct TestDraw<T: Real> {
    x: DMatrix<T>,
    y: DVector<T>,
}

struct OodDraw<T: Real> {
    id_z: DVector<T>,
    ood_x: DMatrix<T>,
    ood_z: DVector<T>,
}

fn confidence_target<T: Real>(x: &DMatrix<T>, teacher: &TeacherModel<T>, noise: DVector<T>) -> DVector<T> {
    let two = T::lit(2.0);
    link(x, teacher.w_star_ood(), teacher.activation()).map(|f| two * f - T::one()) + noise
}

fn draw_test<T: Real>(teacher: &TeacherModel<T>, m: usize, trial_seed: u64) -> TestDraw<T> {
    let mut rng = stream(mix(trial_seed, TEST_STREAM));
    let x = draw_inputs(m, teacher.d(), T::one(), &mut rng);
    let eps = draw_noise(m, teacher.sigma(), &mut rng);
    let y = link(&x, teacher.w_star(), teacher.activation()) + eps;
    TestDraw { x, y }
}

/// ID targets reuse the trial's test inputs with independent `ε′` draws.
fn draw_ood<T: Real>(
    teacher: &TeacherModel<T>,
    test_x: &DMatrix<T>,
    ood_cfg: &OodInputConfig<T>,
    trial_seed: u64,
) -> OodDraw<T> {
    let m = test_x.nrows();
    let mut rng = stream(mix(trial_seed, OOD_STREAM));
    let id_noise = draw_noise(m, teacher.sigma_prime(), &mut rng);
    let ood_x = draw_inputs(m, teacher.d(), ood_cfg.scale(), &mut rng);
    let ood_noise = draw_noise(m, teacher.sigma_prime(), &mut rng);
    OodDraw {
        id_z: confidence_target(test_x, teacher, id_noise),
        ood_z: confidence_target(&ood_x, teacher, ood_noise),
        ood_x,
    }
}

fn draw_train<T: Real>(teacher: &TeacherModel<T>, n: usize, trial_seed: u64) -> Result<SampleSet<T>> {
    sample_train(teacher, n, mix(trial_seed, TRAIN_STREAM))
}

fn mean_sq<T: Real>(v: DVector<T>) -> T {
    let m = T::count(v.len());
    v.norm_squared() / m
}

fn risk_on<T: Real>(clf: &SubsetClassifier<T>, test: &TestDraw<T>) -> Result<T> {
    Ok(mean_sq(clf.predict_rows(&test.x)? - &test.y))
}

fn confidence_error<T: Real>(clf: &SubsetClassifier<T>, x: &DMatrix<T>, z: &DVector<T>) -> Result<T> {
    let two = T::lit(2.0);
    let conf = clf.predict_rows(x)?.map(|f| two * f - T::one());
    Ok(mean_sq(conf - z))
}

fn ood_risk_on<T: Real>(clf: &SubsetClassifier<T>, test_x: &DMatrix<T>, ood: &OodDraw<T>) -> Result<T> {
    Ok(confidence_error(clf, test_x, &ood.id_z)? + confidence_error(clf, &ood.ood_x, &ood.ood_z)?)
}

fn weight_error<T: Real>(clf: &SubsetClassifier<T>, teacher: &TeacherModel<T>) -> T {
    (clf.w_hat() - teacher.w_star()).norm_squared()
}

fn check_dims<T: Real>(teacher: &TeacherModel<T>, n: usize, subset: &FeatureSubset) -> Result<()> {
    if n == 0 {
        return invalid("training size n must be at least 1");
    }
    if subset.d() != teacher.d() {
        return invalid(format!(
            "subset is over d = {}, teacher has d = {}",
            subset.d(),
            teacher.d()
        ));
    }
    Ok(())
}

fn per_trial<T: Real, F>(cfg: &McConfig, f: F) -> Result<McEstimate<T>>
where
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    cfg.validate()?;
    let values: Vec<T> = (0..cfg.trials)
        .into_par_iter()
        .map(|k| f(cfg.trial_seed(k)))
        .collect::<Result<_>>()?;
    Ok(McEstimate::from_samples(&values))
}

/// Estimates `E_X[E_(x,y)[(φ(xᵀŵ) − y)²]]`.
pub fn mc_expected_risk<T: Real>(
    teacher: &TeacherModel<T>,
    n: usize,
    subset: &FeatureSubset,
    cfg: &McConfig,
) -> Result<McEstimate<T>> {
    check_dims(teacher, n, subset)?;
    per_trial(cfg, |seed| {
        let train = draw_train(teacher, n, seed)?;
        let clf = fit_subset(&train.x, &train.y, subset, teacher.activation())?;
        risk_on(&clf, &draw_test(teacher, cfg.test_points, seed))
    })
}

/// Estimates `E_X[R_OOD(f̂)]`: ID and OOD confidence errors summed per trial.
pub fn mc_ood_risk<T: Real>(
    teacher: &TeacherModel<T>,
    n: usize,
    subset: &FeatureSubset,
    ood_cfg: &OodInputConfig<T>,
    cfg: &McConfig,
) -> Result<McEstimate<T>> {
    check_dims(teacher, n, subset)?;
    per_trial(cfg, |seed| {
        let train = draw_train(teacher, n, seed)?;
        let clf = fit_subset(&train.x, &train.y, subset, teacher.activation())?;
        let test = draw_test(teacher, cfg.test_points, seed);
        let ood = draw_ood(teacher, &test.x, ood_cfg, seed);
        ood_risk_on(&clf, &test.x, &ood)
    })
}

/// OOD risk of a fixed classifier; only the evaluation draws vary by trial.
pub fn mc_ood_risk_of<T: Real>(
    clf: &SubsetClassifier<T>,
    teacher: &TeacherModel<T>,
    ood_cfg: &OodInputConfig<T>,
    cfg: &McConfig,
) -> Result<McEstimate<T>> {
    if clf.subset().d() != teacher.d() {
        return invalid("classifier and teacher dimensions differ");
    }
    per_trial(cfg, |seed| {
        let test = draw_test(teacher, cfg.test_points, seed);
        let ood = draw_ood(teacher, &test.x, ood_cfg, seed);
        ood_risk_on(clf, &test.x, &ood)
    })
}

/// Estimates `E_X[‖ŵ − w*‖²]`.
pub fn mc_weight_error<T: Real>(
    teacher: &TeacherModel<T>,
    n: usize,
    subset: &FeatureSubset,
    cfg: &McConfig,
) -> Result<McEstimate<T>> {
    check_dims(teacher, n, subset)?;
    per_trial(cfg, |seed| {
        let train = draw_train(teacher, n, seed)?;
        let clf = fit_subset(&train.x, &train.y, subset, teacher.activation())?;
        Ok(weight_error(&clf, teacher))
    })
}

/// `(Σ, Σ^OOD)` spectra for the theory columns of a sweep: exact `(1, s²)` for
/// Identity, Monte Carlo estimates otherwise.
pub fn model_spectra<T: Real>(
    teacher: &TeacherModel<T>,
    ood_cfg: &OodInputConfig<T>,
    seed: u64,
) -> Result<(SpectrumBounds<T>, SpectrumBounds<T>)> {
    match teacher.activation() {
        Activation::Identity => {
            let s = ood_cfg.scale();
            Ok((SpectrumBounds::isotropic(T::one())?, SpectrumBounds::isotropic(s * s)?))
        }
        Activation::Sigmoid => {
            let samples = SPECTRUM_SAMPLES.max(10 * teacher.d());
            let (a, b) = estimate_sigma_spectrum(teacher, T::one(), samples, mix(seed, 0))?;
            let (c, d) = estimate_sigma_spectrum(teacher, ood_cfg.scale(), samples, mix(seed, 1))?;
            Ok((SpectrumBounds::new(a, b)?, SpectrumBounds::new(c, d)?))
        }
    }
}

/// Which Monte Carlo column of a curve to inspect.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurveMetric {
    Risk,
    OodRisk,
    WeightError,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveRecord<T> {
    pub p: usize,
    pub theory: TheoryRecord<T>,
    pub mc_risk: McEstimate<T>,
    pub mc_ood: McEstimate<T>,
    pub mc_weight_err: McEstimate<T>,
}

impl<T: Real> CurveRecord<T> {
    pub fn estimate(&self, metric: CurveMetric) -> &McEstimate<T> {
        match metric {
            CurveMetric::Risk => &self.mc_risk,
            CurveMetric::OodRisk => &self.mc_ood,
            CurveMetric::WeightError => &self.mc_weight_err,
        }
    }
}

/// Theory and Monte Carlo values over a schedule of subsets, increasing in `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskCurve<T> {
    pub n: usize,
    pub records: Vec<CurveRecord<T>>,
}

impl<T: Real> RiskCurve<T> {
    pub fn at(&self, p: usize) -> Option<&CurveRecord<T>> {
        self.records.iter().find(|r| r.p == p)
    }

    /// `p` with the largest Monte Carlo mean (first one on ties).
    pub fn peak_p(&self, metric: CurveMetric) -> Option<usize> {
        let mut best: Option<&CurveRecord<T>> = None;
        for r in &self.records {
            if best.is_none_or(|b| r.estimate(metric).mean > b.estimate(metric).mean) {
                best = Some(r);
            }
        }
        best.map(|r| r.p)
    }
}

/// Full double-descent sweep with printed `c`.
pub fn dd_sweep<T: Real>(
    teacher: &TeacherModel<T>,
    n: usize,
    schedule: &[FeatureSubset],
    ood_cfg: &OodInputConfig<T>,
    cfg: &McConfig,
) -> Result<RiskCurve<T>> {
    dd_sweep_with(CFactorForm::Printed, teacher, n, schedule, ood_cfg, cfg)
}

pub fn dd_sweep_with<T: Real>(
    form: CFactorForm,
    teacher: &TeacherModel<T>,
    n: usize,
    schedule: &[FeatureSubset],
    ood_cfg: &OodInputConfig<T>,
    cfg: &McConfig,
) -> Result<RiskCurve<T>> {
    cfg.validate()?;
    if n == 0 {
        return invalid("training size n must be at least 1");
    }
    check_schedule(schedule, teacher.d())?;
    let spectra = model_spectra(teacher, ood_cfg, mix(cfg.base_seed, SPECTRUM_STREAM))?;
    let theory: Vec<TheoryRecord<T>> = schedule
        .iter()
        .map(|s| theory_record(form, teacher, s, n, &spectra, teacher.sigma_prime()))
        .collect::<Result<_>>()?;

    // per_trial[k][j] = (risk, ood, weight error) of subset j in trial k.
    let per_trial: Vec<Vec<[T; 3]>> = (0..cfg.trials)
        .into_par_iter()
        .map(|k| {
            let seed = cfg.trial_seed(k);
            let train = draw_train(teacher, n, seed)?;
            let test = draw_test(teacher, cfg.test_points, seed);
            let ood = draw_ood(teacher, &test.x, ood_cfg, seed);
            schedule
                .iter()
                .map(|s| {
                    let clf = fit_subset(&train.x, &train.y, s, teacher.activation())?;
                    Ok([
                        risk_on(&clf, &test)?,
                        ood_risk_on(&clf, &test.x, &ood)?,
                        weight_error(&clf, teacher),
                    ])
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let column = |j: usize, m: usize| -> McEstimate<T> {
        let vals: Vec<T> = per_trial.iter().map(|t| t[j][m]).collect();
        McEstimate::from_samples(&vals)
    };
    let records = theory
        .into_iter()
        .enumerate()
        .map(|(j, th)| CurveRecord {
            p: th.p,
            theory: th,
            mc_risk: column(j, 0),
            mc_ood: column(j, 1),
            mc_weight_err: column(j, 2),
        })
        .collect();
    Ok(RiskCurve { n, records })
}
