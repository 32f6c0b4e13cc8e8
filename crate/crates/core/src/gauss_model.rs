//! Gaussian covariate teacher model: x ~ N(0, I_d), y = φ(xᵀw*) + ε.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Result};
use crate::linalg::sym_eigen_desc;
use crate::rng::stream;
use crate::scalar::Real;

/// Link function φ applied to the linear score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Identity,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply<T: Real>(self, t: T) -> T {
        match self {
            Activation::Identity => t,
            Activation::Sigmoid => T::one() / (T::one() + (-t).exp()),
        }
    }

    /// φ′(t).
    #[inline]
    pub fn derivative<T: Real>(self, t: T) -> T {
        match self {
            Activation::Identity => T::one(),
            Activation::Sigmoid => {
                let s = self.apply(t);
                s * (T::one() - s)
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Sigmoid => "sigmoid",
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "identity" | "linear" => Ok(Activation::Identity),
            "sigmoid" => Ok(Activation::Sigmoid),
            other => Err(format!("unknown activation '{other}'")),
        }
    }
}

/// Ground-truth generator of training responses and OOD targets.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherModel<T: Real> {
    w_star: DVector<T>,
    w_star_ood: DVector<T>,
    sigma: T,
    sigma_prime: T,
    activation: Activation,
}

impl<T: Real> TeacherModel<T> {
    /// Teacher with `w*_OOD = w*`. Both noise levels must be strictly positive.
    pub fn new(w_star: DVector<T>, sigma: T, sigma_prime: T, activation: Activation) -> Result<Self> {
        if !(sigma > T::zero()) || !(sigma_prime > T::zero()) {
            return invalid(format!(
                "noise levels must be positive (sigma = {sigma}, sigma' = {sigma_prime})"
            ));
        }
        Self::new_allowing_zero_noise(w_star, sigma, sigma_prime, activation)
    }

    /// Same as [`TeacherModel::new`] but accepts `σ = 0` and `σ′ = 0`, the
    /// noiseless limit used by validation fixtures.
    pub fn new_allowing_zero_noise(
        w_star: DVector<T>,
        sigma: T,
        sigma_prime: T,
        activation: Activation,
    ) -> Result<Self> {
        if w_star.is_empty() {
            return invalid("teacher dimension d must be at least 1");
        }
        if !(sigma >= T::zero()) || !(sigma_prime >= T::zero()) || !sigma.is_finite() || !sigma_prime.is_finite() {
            return invalid("noise levels must be finite and non-negative");
        }
        if w_star.iter().any(|v| !v.is_finite()) {
            return invalid("teacher weights must be finite");
        }
        Ok(Self {
            w_star_ood: w_star.clone(),
            w_star,
            sigma,
            sigma_prime,
            activation,
        })
    }

    pub fn with_ood_weights(mut self, w_star_ood: DVector<T>) -> Result<Self> {
        if w_star_ood.len() != self.d() {
            return invalid(format!("w*_OOD has length {}, expected {}", w_star_ood.len(), self.d()));
        }
        self.w_star_ood = w_star_ood;
        Ok(self)
    }

    pub fn d(&self) -> usize {
        self.w_star.len()
    }

    pub fn w_star(&self) -> &DVector<T> {
        &self.w_star
    }

    pub fn w_star_ood(&self) -> &DVector<T> {
        &self.w_star_ood
    }

    pub fn sigma(&self) -> T {
        self.sigma
    }

    pub fn sigma_prime(&self) -> T {
        self.sigma_prime
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }
}

/// Weight vector whose first `k` coordinates share `norm2` equally; the rest are 0.
pub fn leading_weights<T: Real>(d: usize, k: usize, norm2: T) -> DVector<T> {
    let k = k.min(d);
    let mut w = DVector::zeros(d);
    if k > 0 {
        let v = (norm2 / T::count(k)).sqrt();
        w.rows_mut(0, k).fill(v);
    }
    w
}

/// Law of OOD inputs: `s · N(0, I_d)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OodInputConfig<T: Real> {
    scale: T,
}

impl<T: Real> OodInputConfig<T> {
    pub fn new(scale: T) -> Result<Self> {
        if !(scale > T::zero()) || !scale.is_finite() {
            return invalid(format!("OOD input scale must be positive, got {scale}"));
        }
        Ok(Self { scale })
    }

    pub fn scale(&self) -> T {
        self.scale
    }
}

/// Design matrix (row per sample) and responses.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet<T: Real> {
    pub x: DMatrix<T>,
    pub y: DVector<T>,
}

impl<T: Real> SampleSet<T> {
    pub fn new(x: DMatrix<T>, y: DVector<T>) -> Result<Self> {
        if x.nrows() != y.len() {
            return invalid(format!("{} rows but {} responses", x.nrows(), y.len()));
        }
        Ok(Self { x, y })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// Draws an `n×d` matrix of i.i.d. `scale · N(0,1)` entries in row-major order.
pub(crate) fn draw_inputs<T: Real, R: rand::Rng + ?Sized>(n: usize, d: usize, scale: T, rng: &mut R) -> DMatrix<T> {
    let data: Vec<T> = (0..n * d).map(|_| scale * T::std_normal(rng)).collect();
    DMatrix::from_row_slice(n, d, &data)
}

pub(crate) fn draw_noise<T: Real, R: rand::Rng + ?Sized>(n: usize, std: T, rng: &mut R) -> DVector<T> {
    DVector::from_iterator(n, (0..n).map(|_| std * T::std_normal(rng)))
}

/// `φ(X w)` row by row.
pub(crate) fn link<T: Real>(x: &DMatrix<T>, w: &DVector<T>, activation: Activation) -> DVector<T> {
    (x * w).map(|t| activation.apply(t))
}

/// `n` training pairs from the teacher.
pub fn sample_train<T: Real>(teacher: &TeacherModel<T>, n: usize, seed: u64) -> Result<SampleSet<T>> {
    if n == 0 {
        return invalid("sample count n must be at least 1");
    }
    let mut rng = stream(seed);
    let x = draw_inputs(n, teacher.d(), T::one(), &mut rng);
    let eps = draw_noise(n, teacher.sigma(), &mut rng);
    let y = link(&x, teacher.w_star(), teacher.activation()) + eps;
    Ok(SampleSet { x, y })
}

/// `n` OOD inputs drawn from `s · N(0, I_d)`.
pub fn sample_ood_inputs<T: Real>(d: usize, n: usize, cfg: &OodInputConfig<T>, seed: u64) -> Result<DMatrix<T>> {
    if n == 0 || d == 0 {
        return invalid(format!("need n ≥ 1 and d ≥ 1, got n = {n}, d = {d}"));
    }
    let mut rng = stream(seed);
    Ok(draw_inputs(n, d, cfg.scale(), &mut rng))
}

/// Noisy confidence target `z = 2φ(xᵀw*_OOD) − 1 + noise`.
pub fn response_z<T: Real>(x: &[T], teacher: &TeacherModel<T>, noise: T) -> Result<T> {
    if x.len() != teacher.d() {
        return invalid(format!("input has length {}, expected {}", x.len(), teacher.d()));
    }
    let t = x
        .iter()
        .zip(teacher.w_star_ood().iter())
        .fold(T::zero(), |acc, (&a, &b)| acc + a * b);
    Ok(T::lit(2.0) * teacher.activation().apply(t) - T::one() + noise)
}

/// Extreme eigenvalues of a Monte Carlo estimate of
/// `Σ = E[x xᵀ φ′(xᵀw*)²]` with `x ~ input_scale · N(0, I_d)`.
pub fn estimate_sigma_spectrum<T: Real>(
    teacher: &TeacherModel<T>,
    input_scale: T,
    samples: usize,
    seed: u64,
) -> Result<(T, T)> {
    let d = teacher.d();
    if samples < d {
        return invalid(format!("need at least d = {d} samples, got {samples}"));
    }
    if !(input_scale > T::zero()) {
        return invalid(format!("input scale must be positive, got {input_scale}"));
    }
    const CHUNK: usize = 4096;
    let mut rng = stream(seed);
    let mut acc = DMatrix::<T>::zeros(d, d);
    let mut done = 0;
    while done < samples {
        let rows = CHUNK.min(samples - done);
        let mut x = draw_inputs(rows, d, input_scale, &mut rng);
        let scores = &x * teacher.w_star();
        for (i, mut row) in x.row_iter_mut().enumerate() {
            row *= teacher.activation().derivative(scores[i]);
        }
        acc += x.tr_mul(&x);
        done += rows;
    }
    acc /= T::count(samples);
    let (vals, _) = sym_eigen_desc(&acc)?;
    Ok((vals[d - 1], vals[0]))
}
