use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use ddlab::gauss_model::{leading_weights, Activation, OodInputConfig, TeacherModel};
use ddlab::least_squares::FeatureSubset;
use ddlab::risk_mc::{dd_sweep_with, model_spectra, CurveMetric, McConfig, RiskCurve};
use ddlab::risk_theory::{theory_sweep_with, BoundConvention, CFactorForm, TheoryRecord};

use crate::{default_manifest_path, emit, json_text, path_string, usage, CliError, CliResult, VERSION};

pub const CURVE_SCHEMA: &str = "ddlab-curve v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phi {
    Identity,
    Sigmoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Convention {
    /// Factor 4 on both ends, `2σ′²` on both ends.
    Proof,
    /// `2σ′²` on the lower end, `σ′²` on the upper end, no factor 4.
    Paper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseChoice {
    /// `c(n, p, σ)`.
    Train,
    /// `c(n, p, σ′)`.
    Ood,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CForm {
    Printed,
    Exact,
}

/// Teacher, schedule and bound options shared by both sweeps.
#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SweepParams {
    /// Input dimension d.
    #[arg(long, default_value_t = 60)]
    pub d: usize,
    /// Training set size n.
    #[arg(long, default_value_t = 30)]
    pub n: usize,
    /// Training response noise σ.
    #[arg(long, default_value_t = 0.5)]
    pub sigma: f64,
    /// OOD-response noise σ′.
    #[arg(long, default_value_t = 0.1)]
    pub sigma_prime: f64,
    /// Standard deviation of OOD inputs.
    #[arg(long, default_value_t = 2.0)]
    pub ood_scale: f64,
    #[arg(long, value_enum, default_value_t = Phi::Identity)]
    pub phi: Phi,
    /// Coordinates carrying signal (the first k); defaults to all d.
    #[arg(long)]
    pub signal_dims: Option<usize>,
    /// ‖w*‖², spread evenly over the signal coordinates.
    #[arg(long, default_value_t = 1.0)]
    pub signal_norm2: f64,
    #[arg(long, default_value_t = 2)]
    pub p_min: usize,
    /// Largest subset size; defaults to d.
    #[arg(long)]
    pub p_max: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub p_step: usize,
    /// OOD bound constants.
    #[arg(long, value_enum, default_value_t = Convention::Proof)]
    pub convention: Convention,
    /// Noise level inside c for the OOD bound.
    #[arg(long, value_enum, default_value_t = NoiseChoice::Train)]
    pub ood_c_noise: NoiseChoice,
    /// Classical-branch form of c.
    #[arg(long, value_enum, default_value_t = CForm::Printed)]
    pub c_form: CForm,
}

impl SweepParams {
    fn validate(&self) -> CliResult<()> {
        if self.d == 0 || self.n == 0 {
            return usage("--d and --n must be positive");
        }
        let p_max = self.p_max();
        if self.p_min == 0 || self.p_min > p_max || p_max > self.d || self.p_step == 0 {
            return usage(format!(
                "invalid p-range {}..={} step {} for d = {}",
                self.p_min, p_max, self.p_step, self.d
            ));
        }
        if let Some(k) = self.signal_dims {
            if k == 0 || k > self.d {
                return usage(format!("--signal-dims must be in 1..={}, got {k}", self.d));
            }
        }
        for (name, v) in [
            ("--sigma", self.sigma),
            ("--sigma-prime", self.sigma_prime),
            ("--ood-scale", self.ood_scale),
            ("--signal-norm2", self.signal_norm2),
        ] {
            if !(v.is_finite() && v > 0.0) && !(name == "--signal-norm2" && v == 0.0) {
                return usage(format!("{name} must be positive and finite, got {v}"));
            }
        }
        Ok(())
    }

    fn p_max(&self) -> usize {
        self.p_max.unwrap_or(self.d)
    }

    fn teacher(&self) -> CliResult<TeacherModel<f64>> {
        let act = match self.phi {
            Phi::Identity => Activation::Identity,
            Phi::Sigmoid => Activation::Sigmoid,
        };
        let k = self.signal_dims.unwrap_or(self.d);
        let w = leading_weights(self.d, k, self.signal_norm2);
        TeacherModel::new(w, self.sigma, self.sigma_prime, act).map_err(|e| CliError::Usage(e.to_string()))
    }

    fn schedule(&self) -> CliResult<Vec<FeatureSubset>> {
        (self.p_min..=self.p_max())
            .step_by(self.p_step)
            .map(|p| FeatureSubset::prefix(p, self.d).map_err(|e| CliError::Usage(e.to_string())))
            .collect()
    }

    fn ood_inputs(&self) -> CliResult<OodInputConfig<f64>> {
        OodInputConfig::new(self.ood_scale).map_err(|e| CliError::Usage(e.to_string()))
    }

    fn form(&self) -> CFactorForm {
        match self.c_form {
            CForm::Printed => CFactorForm::Printed,
            CForm::Exact => CFactorForm::Exact,
        }
    }

    fn bound_convention(&self) -> BoundConvention {
        match self.convention {
            Convention::Proof => BoundConvention::ProofConsistent,
            Convention::Paper => BoundConvention::PaperLiteral,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct TheorySweepArgs {
    #[command(flatten)]
    pub params: SweepParams,
    /// Seed for spectrum estimation under the sigmoid link.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output CSV (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct McParams {
    #[command(flatten)]
    #[serde(flatten)]
    pub sweep: SweepParams,
    #[arg(long, default_value_t = 500)]
    pub trials: usize,
    #[arg(long, default_value_t = 2000)]
    pub test_points: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct McSweepArgs {
    #[command(flatten)]
    pub params: McParams,
    /// Output CSV; required unless the manifest names one.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Manifest path (default: `<out>.manifest.json`).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Re-run the parameters recorded in a manifest; other sweep flags are ignored.
    #[arg(long)]
    pub from_manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outputs {
    pub curve: String,
    pub manifest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakSummary {
    pub peak_p_risk: usize,
    pub peak_p_ood: usize,
    /// Whether the risk peak lies in `n−2..=n+2`.
    pub risk_peak_near_n: bool,
    pub ood_peak_near_n: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub base_seed: u64,
    pub params: McParams,
    pub outputs: Outputs,
    pub duration_secs: f64,
    pub summary: PeakSummary,
}

impl Manifest {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Data(format!("cannot read manifest {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("bad manifest {}: {e}", path.display())))
    }
}

fn header(text: &mut String, columns: &[&str]) {
    let cols = columns.join(",");
    writeln!(text, "# {CURVE_SCHEMA} columns={cols}").unwrap();
    writeln!(text, "{cols}").unwrap();
}

const THEORY_COLUMNS: [&str; 7] = ["p", "c", "risk_lo", "risk_hi", "ood_lo", "ood_hi", "convention"];
const MC_COLUMNS: [&str; 6] = [
    "mc_risk",
    "mc_risk_se",
    "mc_ood",
    "mc_ood_se",
    "mc_weight_err",
    "mc_weight_err_se",
];

fn theory_fields(r: &TheoryRecord<f64>, params: &SweepParams) -> String {
    let convention = params.bound_convention();
    let ood = match params.ood_c_noise {
        NoiseChoice::Train => r.ood,
        NoiseChoice::Ood => r.ood_with_ood_noise,
    };
    let (ood_lo, ood_hi) = ood.ends(convention);
    format!(
        "{},{},{},{},{},{},{}",
        r.p,
        r.c,
        r.risk.lo(),
        r.risk.hi(),
        ood_lo,
        ood_hi,
        convention.name()
    )
}

pub fn theory_csv(params: &SweepParams, seed: u64) -> CliResult<String> {
    params.validate()?;
    let teacher = params.teacher()?;
    let spectra = model_spectra(&teacher, &params.ood_inputs()?, seed)?;
    let records = theory_sweep_with(
        params.form(),
        &teacher,
        &params.schedule()?,
        params.n,
        spectra,
        teacher.sigma_prime(),
    )?;
    let mut text = String::new();
    header(&mut text, &THEORY_COLUMNS);
    for r in &records {
        writeln!(text, "{}", theory_fields(r, params)).unwrap();
    }
    Ok(text)
}

pub(crate) fn theory_sweep(args: &TheorySweepArgs) -> CliResult<()> {
    let text = theory_csv(&args.params, args.seed)?;
    emit(args.out.as_deref(), &text)
}

/// Runs the Monte Carlo sweep and renders the curve CSV.
pub fn mc_curve(params: &McParams) -> CliResult<(RiskCurve<f64>, String)> {
    let sp = &params.sweep;
    sp.validate()?;
    let cfg =
        McConfig::new(params.trials, params.test_points, params.seed).map_err(|e| CliError::Usage(e.to_string()))?;
    let teacher = sp.teacher()?;
    let curve = dd_sweep_with(sp.form(), &teacher, sp.n, &sp.schedule()?, &sp.ood_inputs()?, &cfg)?;
    let mut text = String::new();
    let cols: Vec<&str> = THEORY_COLUMNS.iter().chain(MC_COLUMNS.iter()).copied().collect();
    header(&mut text, &cols);
    for r in &curve.records {
        writeln!(
            text,
            "{},{},{},{},{},{},{}",
            theory_fields(&r.theory, sp),
            r.mc_risk.mean,
            r.mc_risk.std_error,
            r.mc_ood.mean,
            r.mc_ood.std_error,
            r.mc_weight_err.mean,
            r.mc_weight_err.std_error
        )
        .unwrap();
    }
    Ok((curve, text))
}

fn near(p: usize, n: usize) -> bool {
    p + 2 >= n && p <= n + 2
}

pub(crate) fn mc_sweep(args: &McSweepArgs) -> CliResult<()> {
    let (params, recorded) = match &args.from_manifest {
        Some(m) => {
            let man = Manifest::load(m)?;
            (man.params, Some(man.outputs))
        }
        None => (args.params.clone(), None),
    };
    let out = match (&args.out, &recorded) {
        (Some(o), _) => o.clone(),
        (None, Some(r)) => PathBuf::from(&r.curve),
        (None, None) => return usage("mc-sweep needs --out"),
    };
    let manifest_path = args.manifest.clone().unwrap_or_else(|| default_manifest_path(&out));

    let start = Instant::now();
    let (curve, text) = mc_curve(&params)?;
    let duration_secs = start.elapsed().as_secs_f64();
    emit(Some(&out), &text)?;

    let n = params.sweep.n;
    let peak_p_risk = curve.peak_p(CurveMetric::Risk).unwrap_or(0);
    let peak_p_ood = curve.peak_p(CurveMetric::OodRisk).unwrap_or(0);
    let manifest = Manifest {
        command: "mc-sweep".into(),
        version: VERSION.into(),
        base_seed: params.seed,
        params,
        outputs: Outputs {
            curve: path_string(&out),
            manifest: path_string(&manifest_path),
        },
        duration_secs,
        summary: PeakSummary {
            peak_p_risk,
            peak_p_ood,
            risk_peak_near_n: near(peak_p_risk, n),
            ood_peak_near_n: near(peak_p_ood, n),
        },
    };
    emit(Some(&manifest_path), &json_text(&manifest))
}
