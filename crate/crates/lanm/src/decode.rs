//! Least-squares amplitude and symbol recovery at estimated shifts.
//!
//! With the shifts fixed, `y` is linear in the stacked vectors
//! `g_k = alpha_k h_k`. The split of `g_k` into `alpha_k` and a unit-norm
//! `h_k` is fixed by the pilot, whose phase is known.

use faer::linalg::solvers::SolveLstsq;
use faer::Mat;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::localization::Matching;
use crate::model::{steering_vector, LiftedMatrix, MeasurementEnsemble};
use crate::waveform::{demap, QamOrder, SymbolStream, PILOT_INDEX};

/// Relative singular-value floor below which the design counts as rank deficient.
const RANK_TOL: f64 = 1e-10;

/// One decoded target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodedTarget {
    pub tau: Vec<f64>,
    pub g: Vec<C64>,
    pub alpha_hat: C64,
    /// Unit-norm symbol vector estimate.
    pub h_hat: Vec<C64>,
    pub symbols: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeResult {
    pub targets: Vec<DecodedTarget>,
    pub residual: f64,
    pub design_condition: f64,
}

impl DecodeResult {
    /// `U_hat = sum g_k a(tau_k)^H`.
    pub fn lifted(&self, ens: &MeasurementEnsemble) -> Result<LiftedMatrix> {
        let mut u = LiftedMatrix::zeros(ens.t(), ens.m());
        for t in &self.targets {
            u.add_atom(ens.spec(), &t.tau, &t.g)?;
        }
        Ok(u)
    }
}

/// Splits `g` into a complex amplitude and a unit vector whose pilot entry
/// has the reference phase.
pub fn split_amplitude(g: &[C64], order: QamOrder) -> (C64, Vec<C64>) {
    let norm = g.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let reference = order.reference();
    if norm == 0.0 {
        let mut h = vec![C64::new(0.0, 0.0); g.len()];
        h[PILOT_INDEX] = reference / reference.norm();
        return (C64::new(0.0, 0.0), h);
    }
    let phase = g[PILOT_INDEX].arg() - reference.arg();
    let alpha = C64::from_polar(norm, phase);
    (alpha, g.iter().map(|z| z / alpha).collect())
}

fn design_matrix(ens: &MeasurementEnsemble, taus: &[Vec<f64>]) -> Result<Mat<C64>> {
    let t = ens.t();
    let mut design = Mat::<C64>::zeros(ens.len(), taus.len() * t);
    for (k, tau) in taus.iter().enumerate() {
        let block = ens.atom_design(&steering_vector(ens.spec(), tau)?);
        for j in 0..t {
            for i in 0..ens.len() {
                design[(i, k * t + j)] = block[(i, j)];
            }
        }
    }
    Ok(design)
}

fn lstsq_residual(design: &Mat<C64>, y: &[C64]) -> Vec<C64> {
    let rhs = Mat::<C64>::from_fn(y.len(), 1, |i, _| y[i]);
    let fit = design * design.qr().solve_lstsq(&rhs);
    (0..y.len()).map(|i| y[i] - fit[(i, 0)]).collect()
}

fn norm(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Greedy model-order selection among candidate shifts.
///
/// Candidates are added by normalized correlation with the current
/// least-squares residual until the residual norm drops to `bound` or the
/// design would exceed the number of observations. Returns indices into
/// `candidates` in ascending order.
pub fn select_support(y: &[C64], ens: &MeasurementEnsemble, candidates: &[Vec<f64>], bound: f64) -> Result<Vec<usize>> {
    if y.len() != ens.len() {
        return Err(Error::DimensionMismatch { expected: ens.len(), got: y.len() });
    }
    let blocks = candidates
        .iter()
        .map(|tau| Ok(ens.atom_design(&steering_vector(ens.spec(), tau)?)))
        .collect::<Result<Vec<_>>>()?;
    let energy: Vec<f64> = blocks.iter().map(|b| b.norm_l2().powi(2).max(f64::MIN_POSITIVE)).collect();
    let max_atoms = y.len() / ens.t();
    let mut chosen: Vec<usize> = Vec::new();
    let mut r = y.to_vec();
    while norm(&r) > bound && chosen.len() < max_atoms.min(candidates.len()) {
        let rv = Mat::<C64>::from_fn(r.len(), 1, |i, _| r[i]);
        let best = (0..candidates.len())
            .filter(|c| !chosen.contains(c))
            .map(|c| (c, (blocks[c].adjoint() * &rv).norm_l2().powi(2) / energy[c]))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(c, _)| c);
        let Some(c) = best else { break };
        chosen.push(c);
        let taus: Vec<Vec<f64>> = chosen.iter().map(|&i| candidates[i].clone()).collect();
        let design = design_matrix(ens, &taus)?;
        let sv = design.singular_values().map_err(|e| Error::Numerical(format!("svd: {e:?}")))?;
        let smax = sv.iter().cloned().fold(0.0, f64::max);
        let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
        if !(smax > 0.0) || smin <= RANK_TOL * smax {
            chosen.pop();
            break;
        }
        r = lstsq_residual(&design, y);
    }
    chosen.sort_unstable();
    Ok(chosen)
}

/// Linear least squares for the stacked `g` at shifts `taus`.
pub fn ls_decode(y: &[C64], ens: &MeasurementEnsemble, taus: &[Vec<f64>], order: QamOrder) -> Result<DecodeResult> {
    if y.len() != ens.len() {
        return Err(Error::DimensionMismatch { expected: ens.len(), got: y.len() });
    }
    if taus.is_empty() {
        return Err(Error::InvalidArgument("decoding needs at least one shift".into()));
    }
    let t = ens.t();
    let cols = taus.len() * t;
    if cols > y.len() {
        return Err(Error::RankDeficient(format!("{cols} unknowns exceed {} observations", y.len())));
    }
    let design = design_matrix(ens, taus)?;
    let sv = design.singular_values().map_err(|e| Error::Numerical(format!("svd: {e:?}")))?;
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(smax > 0.0) || smin <= RANK_TOL * smax {
        return Err(Error::RankDeficient(format!("design condition {:.3e}", smax / smin)));
    }
    let rhs = Mat::<C64>::from_fn(y.len(), 1, |i, _| y[i]);
    let sol = design.qr().solve_lstsq(&rhs);
    let g: Vec<C64> = (0..cols).map(|i| sol[(i, 0)]).collect();
    let fit = &design * &sol;
    let residual = (0..y.len()).map(|i| (y[i] - fit[(i, 0)]).norm_sqr()).sum::<f64>().sqrt();
    let mut targets = Vec::with_capacity(taus.len());
    for (k, tau) in taus.iter().enumerate() {
        let gk = g[k * t..(k + 1) * t].to_vec();
        let (alpha_hat, h_hat) = split_amplitude(&gk, order);
        let symbols = demap(&h_hat, order, PILOT_INDEX)?;
        targets.push(DecodedTarget { tau: tau.clone(), g: gk, alpha_hat, h_hat, symbols });
    }
    Ok(DecodeResult { targets, residual, design_condition: smax / smin })
}

/// Symbol error rate over matched streams.
///
/// Every symbol of an unmatched true or estimated stream counts as an
/// error; the count is normalized by `max(K, K_hat) T`.
pub fn evaluate_ser(decoded: &[Vec<usize>], truth: &[SymbolStream], matching: &Matching) -> f64 {
    let t = truth.first().map(|s| s.raw.len()).or_else(|| decoded.first().map(Vec::len)).unwrap_or(0);
    let n = truth.len().max(decoded.len());
    if n == 0 || t == 0 {
        return 0.0;
    }
    let mut errors = (matching.misses.len() + matching.false_alarms.len()) * t;
    for &(i, j) in &matching.pairs {
        let want = truth[i].indices();
        errors += want.iter().zip(&decoded[j]).filter(|(a, b)| a != b).count();
    }
    errors as f64 / (n * t) as f64
}
