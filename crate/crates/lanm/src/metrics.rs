//! Noise injection and the scalar figures of merit.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64 as C64;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{steering_vector, DimensionSpec, LiftedMatrix, TargetParams};
use crate::rng;

/// Lift error at or below which a recovery counts as successful.
pub const SUCCESS_THRESHOLD: f64 = 1e-3;
/// Margin applied to the realized noise norm before it reaches the solver.
pub const SIGMA_MARGIN: f64 = 1.1;

/// What the SNR is measured against.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SnrReference {
    /// Per-sample noise variance `10^(-snr/10)`.
    #[default]
    Unit,
    /// Total expected noise power `E||w||^2 = 10^(-snr/10)`.
    Total,
    /// Per-sample noise variance relative to the mean clean sample power.
    Signal,
}

impl FromStr for SnrReference {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "unit" => Ok(SnrReference::Unit),
            "total" => Ok(SnrReference::Total),
            "signal" => Ok(SnrReference::Signal),
            other => Err(Error::InvalidArgument(format!("unknown SNR reference `{other}`"))),
        }
    }
}

impl fmt::Display for SnrReference {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SnrReference::Unit => "unit",
            SnrReference::Total => "total",
            SnrReference::Signal => "signal",
        })
    }
}

/// How the noise bound maps to the penalty parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SigmaReading {
    /// `||w|| <= sigma`.
    #[default]
    Norm,
    /// `||w|| <= sigma^2`.
    SquaredNorm,
    /// `||w|| <= sigma / 4`, making the penalty the exact dual of the
    /// constrained primal.
    QuarterNorm,
}

impl FromStr for SigmaReading {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "norm" => Ok(SigmaReading::Norm),
            "squared-norm" | "squared" => Ok(SigmaReading::SquaredNorm),
            "quarter-norm" | "quarter" => Ok(SigmaReading::QuarterNorm),
            other => Err(Error::InvalidArgument(format!("unknown sigma reading `{other}`"))),
        }
    }
}

impl fmt::Display for SigmaReading {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SigmaReading::Norm => "norm",
            SigmaReading::SquaredNorm => "squared-norm",
            SigmaReading::QuarterNorm => "quarter-norm",
        })
    }
}

/// Noise settings of a trial. `snr_db = +inf` means noiseless.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub snr_db: f64,
    #[serde(default)]
    pub reference: SnrReference,
    #[serde(default)]
    pub sigma_reading: SigmaReading,
}

impl NoiseModel {
    pub fn noiseless() -> Self {
        NoiseModel { snr_db: f64::INFINITY, reference: SnrReference::Unit, sigma_reading: SigmaReading::Norm }
    }

    pub fn new(snr_db: f64, reference: SnrReference) -> Self {
        NoiseModel { snr_db, reference, sigma_reading: SigmaReading::Norm }
    }

    pub fn is_noiseless(&self) -> bool {
        self.snr_db == f64::INFINITY
    }

    /// Per-sample noise variance for a clean observation `y`.
    pub fn variance(&self, y: &[C64]) -> f64 {
        if self.is_noiseless() {
            return 0.0;
        }
        let base = 10f64.powf(-self.snr_db / 10.0);
        match self.reference {
            SnrReference::Unit => base,
            SnrReference::Total => base / y.len().max(1) as f64,
            SnrReference::Signal => {
                let power = y.iter().map(|z| z.norm_sqr()).sum::<f64>() / y.len().max(1) as f64;
                base * power
            }
        }
    }

    /// Solver penalty parameter for a realized noise norm.
    pub fn sigma_for(&self, noise_norm: f64) -> f64 {
        let bound = SIGMA_MARGIN * noise_norm;
        match self.sigma_reading {
            SigmaReading::Norm => bound,
            SigmaReading::SquaredNorm => bound.sqrt(),
            SigmaReading::QuarterNorm => 4.0 * bound,
        }
    }
}

impl NoiseModel {
    /// Bound on `||w||` implied by a penalty parameter; inverse of `sigma_for`.
    pub fn noise_bound(&self, sigma: f64) -> f64 {
        match self.sigma_reading {
            SigmaReading::Norm => sigma,
            SigmaReading::SquaredNorm => sigma * sigma,
            SigmaReading::QuarterNorm => sigma / 4.0,
        }
    }
}

/// Noisy observation and the penalty parameter handed to the solver.
#[derive(Clone, Debug, PartialEq)]
pub struct NoisyObservation {
    pub y: Vec<C64>,
    pub noise_norm: f64,
    pub sigma: f64,
}

/// Adds circular complex Gaussian noise; `sigma = 1.1 ||w||` under the
/// default reading.
pub fn add_awgn(y: &[C64], noise: &NoiseModel, seed: u64) -> Result<NoisyObservation> {
    if noise.snr_db.is_nan() || noise.snr_db == f64::NEG_INFINITY {
        return Err(Error::InvalidArgument(format!("SNR must be finite or +inf, got {}", noise.snr_db)));
    }
    if noise.is_noiseless() {
        return Ok(NoisyObservation { y: y.to_vec(), noise_norm: 0.0, sigma: 0.0 });
    }
    let std = (noise.variance(y) / 2.0).sqrt();
    let mut r = rng::stream(seed, "noise");
    let w: Vec<C64> = y
        .iter()
        .map(|_| {
            let re: f64 = StandardNormal.sample(&mut r);
            let im: f64 = StandardNormal.sample(&mut r);
            C64::new(re * std, im * std)
        })
        .collect();
    let noise_norm = w.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    Ok(NoisyObservation {
        y: y.iter().zip(&w).map(|(a, b)| a + b).collect(),
        noise_norm,
        sigma: noise.sigma_for(noise_norm),
    })
}

fn radar_vector(spec: &DimensionSpec, targets: &[(Vec<f64>, C64)]) -> Result<Vec<C64>> {
    let mut v = vec![C64::new(0.0, 0.0); spec.m()];
    for (tau, alpha) in targets {
        for (s, a) in v.iter_mut().zip(steering_vector(spec, tau)?) {
            *s += alpha * a.conj();
        }
    }
    Ok(v)
}

/// `||v - v_hat|| / ||v||` with `v = sum alpha a(tau)^H`.
pub fn nmse(spec: &DimensionSpec, truth: &[TargetParams], est: &[(Vec<f64>, C64)]) -> Result<f64> {
    let t: Vec<(Vec<f64>, C64)> = truth.iter().map(|p| (p.tau.clone(), p.alpha)).collect();
    let v = radar_vector(spec, &t)?;
    let vh = radar_vector(spec, est)?;
    let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok(v.iter().zip(&vh).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt() / norm)
}

/// `||U - U_hat||_F / ||U||_F`.
pub fn lift_error(u: &LiftedMatrix, u_hat: &LiftedMatrix) -> Result<f64> {
    if u.t() != u_hat.t() || u.m() != u_hat.m() {
        return Err(Error::Shape(format!("{}x{} vs {}x{}", u.t(), u.m(), u_hat.t(), u_hat.m())));
    }
    let norm = u.frobenius();
    if norm == 0.0 {
        return Err(Error::ZeroVector);
    }
    let mut s = 0.0;
    for j in 0..u.m() {
        for i in 0..u.t() {
            s += (u.0[(i, j)] - u_hat.0[(i, j)]).norm_sqr();
        }
    }
    Ok(s.sqrt() / norm)
}

/// Figures of merit of one trial.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialMetrics {
    pub nmse: f64,
    pub ser: f64,
    pub lift_rel_error: f64,
    pub success: bool,
    pub k_hat: usize,
    pub runtime_s: f64,
}

impl TrialMetrics {
    pub fn new(nmse: f64, ser: f64, lift_rel_error: f64, k_hat: usize, runtime_s: f64) -> Self {
        TrialMetrics { nmse, ser, lift_rel_error, success: lift_rel_error <= SUCCESS_THRESHOLD, k_hat, runtime_s }
    }

    /// Metrics of a trial whose pipeline broke down.
    pub fn failed(runtime_s: f64) -> Self {
        TrialMetrics::new(1.0, 1.0, 1.0, 0, runtime_s)
    }
}
