//! The dual semidefinite relaxation and its two solvers.
//!
//! The dual of the lifted atomic norm problem is
//!
//! ```text
//! maximize   Re<q, y> - (sigma/4) ||q||
//! subject to [[Q, F^H], [F, I_T]] >= 0,  F = X^*(q),
//!            sum over each multilevel diagonal k of Q = delta_k.
//! ```
//!
//! The trace constraints make `a(tau)^H Q a(tau) = 1` for every `tau`, so the
//! block constraint certifies `||F a(tau)|| <= 1` everywhere.

mod admm;
mod ipm;
mod toeplitz;

use std::fmt;
use std::str::FromStr;

use faer::Mat;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DimensionSpec, LiftedMatrix, MeasurementEnsemble};

pub(crate) use toeplitz::ToeplitzClasses;
pub use toeplitz::{toeplitz_trace_constraints, TraceConstraint};

/// Atom length at and above which `auto` picks the first-order path.
pub const DEFAULT_IPM_THRESHOLD: usize = 128;
pub const DEFAULT_IPM_TOL: f64 = 1e-8;
pub const DEFAULT_FIRST_ORDER_TOL: f64 = 1e-7;

/// Which algorithm solves the relaxation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SolverPath {
    #[default]
    Auto,
    Ipm,
    FirstOrder,
}

impl FromStr for SolverPath {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "auto" => Ok(SolverPath::Auto),
            "ipm" => Ok(SolverPath::Ipm),
            "first-order" | "admm" => Ok(SolverPath::FirstOrder),
            other => Err(Error::InvalidArgument(format!("unknown solver path `{other}`"))),
        }
    }
}

impl fmt::Display for SolverPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolverPath::Auto => "auto",
            SolverPath::Ipm => "ipm",
            SolverPath::FirstOrder => "first-order",
        })
    }
}

/// Solver settings. Unset fields take the per-path defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub tol: Option<f64>,
    pub max_iters: Option<usize>,
    pub path: SolverPath,
    pub degrees: Option<Vec<usize>>,
    pub ipm_threshold: Option<usize>,
}

impl SolverConfig {
    /// The concrete path for an atom length `m`.
    pub fn resolve_path(&self, m: usize) -> SolverPath {
        match self.path {
            SolverPath::Auto if m >= self.ipm_threshold.unwrap_or(DEFAULT_IPM_THRESHOLD) => SolverPath::FirstOrder,
            SolverPath::Auto => SolverPath::Ipm,
            p => p,
        }
    }

    pub fn tol_for(&self, path: SolverPath) -> f64 {
        self.tol.unwrap_or(match path {
            SolverPath::FirstOrder => DEFAULT_FIRST_ORDER_TOL,
            _ => DEFAULT_IPM_TOL,
        })
    }
}

/// Termination state of a solve.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    MaxIters,
    Infeasible,
}

/// Relative primal, dual and gap residuals at termination.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct KktResiduals {
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.primal.max(self.dual).max(self.gap)
    }
}

/// The relaxation of one observation vector.
///
/// Observations are stored normalized to unit norm; `scale` restores the
/// objective afterwards.
#[derive(Clone, Debug)]
pub struct SdrProblem {
    ensemble: MeasurementEnsemble,
    y: Vec<C64>,
    scale: f64,
    sigma: f64,
    degrees: Vec<usize>,
    constraints: Vec<TraceConstraint>,
    embed: Vec<usize>,
}

/// The noiseless relaxation, `maximize Re<q, y>`.
pub fn build_noiseless_sdr(y: &[C64], ens: &MeasurementEnsemble) -> Result<SdrProblem> {
    build_noisy_sdr(y, ens, 0.0)
}

/// The penalized relaxation, `maximize Re<q, y> - (sigma/4) ||q||`.
pub fn build_noisy_sdr(y: &[C64], ens: &MeasurementEnsemble, sigma: f64) -> Result<SdrProblem> {
    if y.len() != ens.len() {
        return Err(Error::DimensionMismatch { expected: ens.len(), got: y.len() });
    }
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!("sigma must be finite and >= 0, got {sigma}")));
    }
    let norm = y.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let scale = if norm > 0.0 { norm } else { 1.0 };
    let spec = ens.spec();
    let degrees = spec.sizes();
    let constraints = toeplitz_trace_constraints(spec, Some(&degrees))?;
    Ok(SdrProblem {
        ensemble: ens.clone(),
        y: y.iter().map(|z| z / scale).collect(),
        scale,
        sigma: sigma / scale,
        embed: (0..spec.m()).collect(),
        degrees,
        constraints,
    })
}

impl SdrProblem {
    /// Enlarges `Q` to the given per-dimension sizes (zero-padding `q`).
    pub fn with_degrees(mut self, degrees: &[usize]) -> Result<Self> {
        let spec = self.ensemble.spec().clone();
        let degrees = toeplitz::resolve_degrees(&spec, Some(degrees))?;
        self.constraints = toeplitz_trace_constraints(&spec, Some(&degrees))?;
        self.embed = (0..spec.m())
            .map(|c| {
                spec.unflatten(c).iter().zip(&degrees).fold(0, |acc, (&i, &g)| acc * g + i)
            })
            .collect();
        self.degrees = degrees;
        Ok(self)
    }

    pub fn spec(&self) -> &DimensionSpec {
        self.ensemble.spec()
    }

    pub fn ensemble(&self) -> &MeasurementEnsemble {
        &self.ensemble
    }

    /// Normalized observations.
    pub fn y(&self) -> &[C64] {
        &self.y
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Penalty `sigma` in the normalized units.
    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn degrees(&self) -> &[usize] {
        &self.degrees
    }

    pub fn constraints(&self) -> &[TraceConstraint] {
        &self.constraints
    }

    /// Size of `Q`.
    pub fn nq(&self) -> usize {
        self.degrees.iter().product()
    }

    pub fn t(&self) -> usize {
        self.ensemble.t()
    }

    /// Position of atom column `c` inside `Q`.
    pub fn embed(&self) -> &[usize] {
        &self.embed
    }

    /// `Re<q, y> - (sigma/4) ||q||` in normalized units.
    pub(crate) fn normalized_objective(&self, q: &[C64]) -> f64 {
        let lin: f64 = q.iter().zip(&self.y).map(|(a, b)| (a.conj() * b).re).sum();
        lin - 0.25 * self.sigma * q.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// `F = X^*(q)`, the coefficient matrix of the dual polynomial.
    pub fn coefficients(&self, q: &[C64]) -> LiftedMatrix {
        self.ensemble.adjoint(q).expect("q has the ensemble length")
    }
}

/// A solution of the relaxation.
#[derive(Clone, Debug)]
pub struct DualSolution {
    pub q: Vec<C64>,
    /// The `Q` block (size of the relaxation grid).
    pub q_matrix: Mat<C64>,
    /// `F = X^*(q)`, `T x M`.
    pub f: LiftedMatrix,
    /// Objective in the units of the original observations.
    pub objective_value: f64,
    pub status: SolveStatus,
    pub kkt_residuals: KktResiduals,
    pub iterations: usize,
    pub path: SolverPath,
}

/// Solves the relaxation on the path chosen by `cfg`.
///
/// ```
/// use lanm::dictionary::{gen_dictionary, DictionaryKind};
/// use lanm::model::*;
/// use lanm::sdr::*;
/// use num_complex::Complex64;
///
/// let spec = DimensionSpec::single(DimKind::Delay, 15).unwrap();
/// let d = gen_dictionary(DictionaryKind::Hadamard, 15, 2, 4).unwrap();
/// let ens = build_measurement_ensemble(&spec, &d).unwrap();
/// let mut u = LiftedMatrix::zeros(2, 15);
/// let h = [Complex64::new(0.6, 0.0), Complex64::new(0.0, 0.8)];
/// u.add_atom(&spec, &[0.37], &[h[0] * 1.7, h[1] * 1.7]).unwrap();
/// let y = ens.forward(&u).unwrap();
/// let sol = solve(&build_noiseless_sdr(&y, &ens).unwrap(), &SolverConfig::default()).unwrap();
/// assert!((sol.objective_value - 1.7).abs() < 1e-4);
/// ```
pub fn solve(problem: &SdrProblem, cfg: &SolverConfig) -> Result<DualSolution> {
    let problem = match &cfg.degrees {
        Some(d) if d.as_slice() != problem.degrees() => problem.clone().with_degrees(d)?,
        _ => problem.clone(),
    };
    let path = cfg.resolve_path(problem.spec().m());
    let tol = cfg.tol_for(path);
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    match path {
        SolverPath::FirstOrder => admm::solve(&problem, tol, cfg.max_iters.unwrap_or(admm::DEFAULT_MAX_ITERS)),
        _ => ipm::solve(&problem, tol, cfg.max_iters.unwrap_or(ipm::DEFAULT_MAX_ITERS)),
    }
}

/// Assembles a solution from `q` and `Q` in normalized units.
pub(crate) fn finish(
    problem: &SdrProblem,
    q: Vec<C64>,
    q_matrix: Mat<C64>,
    status: SolveStatus,
    kkt_residuals: KktResiduals,
    iterations: usize,
    path: SolverPath,
) -> DualSolution {
    let objective_value = problem.scale * problem.normalized_objective(&q);
    let f = problem.coefficients(&q);
    DualSolution { q, q_matrix, f, objective_value, status, kkt_residuals, iterations, path }
}

/// Per-observation `q_m = <M_m, Z21_m> / w_m` read off a block accessor.
pub(crate) fn q_from_block<'a>(problem: &SdrProblem, col: impl Fn(usize) -> &'a [C64]) -> Vec<C64> {
    let embed = problem.embed();
    let raw = problem.ensemble.forward_by(|c| col(embed[c]));
    raw.iter()
        .zip(problem.ensemble.weights())
        .map(|(z, w)| if *w > 0.0 { z / w } else { C64::new(0.0, 0.0) })
        .collect()
}
