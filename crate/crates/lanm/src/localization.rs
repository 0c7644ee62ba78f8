//! Target localization from the dual certificate.
//!
//! The dual polynomial `f(tau) = F a(tau)` has norm at most one everywhere
//! and touches one at the shifts of the recovered atoms. Localization
//! evaluates `||f||` on an oversampled grid, keeps local maxima close to one,
//! polishes them by Newton ascent on the torus and merges duplicates.

use std::f64::consts::PI;

use num_complex::Complex64 as C64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{steering_factors, tau_distance, DimensionSpec, LiftedMatrix};

pub const DEFAULT_OVERSAMPLE: usize = 16;
/// Oversampling cap for four active dimensions.
pub const MAX_OVERSAMPLE_4D: usize = 8;
pub const DEFAULT_THRESHOLD: f64 = 1.0 - 1e-2;
pub const DEFAULT_VALIDATION: f64 = 1.0 - 1e-4;
const GRAD_TOL: f64 = 1e-10;
const MAX_NEWTON_ITERS: usize = 100;

/// The vector-valued dual polynomial `f(tau) = F a(tau)`.
#[derive(Clone, Debug)]
pub struct DualPolynomial {
    f: LiftedMatrix,
    spec: DimensionSpec,
}

impl DualPolynomial {
    pub fn new(f: LiftedMatrix, spec: DimensionSpec) -> Result<Self> {
        if f.m() != spec.m() {
            return Err(Error::DimensionMismatch { expected: spec.m(), got: f.m() });
        }
        Ok(DualPolynomial { f, spec })
    }

    pub fn spec(&self) -> &DimensionSpec {
        &self.spec
    }

    pub fn coefficients(&self) -> &LiftedMatrix {
        &self.f
    }

    /// `f(tau)`.
    pub fn eval(&self, tau: &[f64]) -> Result<Vec<C64>> {
        let a = crate::model::kron(&steering_factors(&self.spec, tau)?);
        Ok(self.apply(&a))
    }

    /// `||f(tau)||`.
    pub fn norm_at(&self, tau: &[f64]) -> Result<f64> {
        Ok(self.eval(tau)?.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt())
    }

    fn apply(&self, a: &[C64]) -> Vec<C64> {
        let f = &self.f.0;
        (0..f.nrows()).map(|t| (0..f.ncols()).map(|c| f[(t, c)] * a[c]).sum()).collect()
    }

    /// Objective `||f||^2`, its gradient and Hessian in `tau`.
    fn derivatives(&self, tau: &[f64]) -> (f64, Vec<f64>, Vec<Vec<f64>>) {
        let d = self.spec.ndim();
        let a = crate::model::kron(&steering_factors(&self.spec, tau).expect("tau has the spec length"));
        // Column c of the atom is differentiated by i 2 pi sign n_d(c).
        let rates: Vec<Vec<f64>> = (0..self.spec.m())
            .map(|c| {
                let idx = self.spec.unflatten(c);
                self.spec.dims().iter().zip(&idx).map(|(dim, &i)| 2.0 * PI * dim.kind.sign() * dim.index(i) as f64).collect()
            })
            .collect();
        let f = self.apply(&a);
        let df: Vec<Vec<C64>> = (0..d)
            .map(|k| {
                let da: Vec<C64> = a.iter().zip(&rates).map(|(z, r)| z * C64::new(0.0, r[k])).collect();
                self.apply(&da)
            })
            .collect();
        let mut grad = vec![0.0; d];
        let mut hess = vec![vec![0.0; d]; d];
        let inner = |x: &[C64], y: &[C64]| -> C64 { x.iter().zip(y).map(|(p, q)| p.conj() * q).sum() };
        for k in 0..d {
            grad[k] = 2.0 * inner(&f, &df[k]).re;
            for l in k..d {
                let dda: Vec<C64> = a.iter().zip(&rates).map(|(z, r)| -z * (r[k] * r[l])).collect();
                let ddf = self.apply(&dda);
                let v = 2.0 * (inner(&df[k], &df[l]).re + inner(&f, &ddf).re);
                hess[k][l] = v;
                hess[l][k] = v;
            }
        }
        (f.iter().map(|z| z.norm_sqr()).sum(), grad, hess)
    }
}

/// `||f||` on a uniform grid, row-major over the active dimensions.
#[derive(Clone, Debug, PartialEq)]
pub struct GridValues {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl GridValues {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn unflatten(&self, mut i: usize) -> Vec<usize> {
        let mut idx = vec![0; self.shape.len()];
        for (slot, g) in idx.iter_mut().zip(&self.shape).rev() {
            *slot = i % g;
            i /= g;
        }
        idx
    }

    /// Shift tuple of grid point `i`.
    pub fn tau(&self, i: usize) -> Vec<f64> {
        self.unflatten(i).iter().zip(&self.shape).map(|(&k, &g)| k as f64 / g as f64).collect()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }
}

/// Effective oversampling for a spec (capped for four dimensions).
pub fn effective_oversample(spec: &DimensionSpec, oversample: usize) -> usize {
    if spec.ndim() >= 4 {
        oversample.min(MAX_OVERSAMPLE_4D)
    } else {
        oversample
    }
}

/// Evaluates `||f||` on `oversample * size` points per dimension by
/// zero-padded FFTs of each row of `F`.
pub fn eval_grid(poly: &DualPolynomial, oversample: usize) -> Result<GridValues> {
    if oversample < 2 {
        return Err(Error::InvalidArgument(format!("oversample must be >= 2, got {oversample}")));
    }
    let spec = &poly.spec;
    let shape: Vec<usize> = spec.sizes().iter().map(|s| s * oversample).collect();
    let total: usize = shape.iter().product();
    let mut power = vec![0.0; total];
    let mut planner = FftPlanner::<f64>::new();
    let plans: Vec<_> = spec
        .dims()
        .iter()
        .zip(&shape)
        .map(|(dim, &g)| if dim.kind.sign() < 0.0 { planner.plan_fft_forward(g) } else { planner.plan_fft_inverse(g) })
        .collect();
    let strides: Vec<usize> = (0..shape.len()).map(|d| shape[d + 1..].iter().product()).collect();
    let mut buf = vec![C64::new(0.0, 0.0); total];
    let f = &poly.f.0;
    for t in 0..f.nrows() {
        buf.iter_mut().for_each(|z| *z = C64::new(0.0, 0.0));
        for c in 0..spec.m() {
            let idx = spec.unflatten(c);
            let pos: usize = idx
                .iter()
                .zip(spec.dims())
                .zip(&shape)
                .zip(&strides)
                .map(|(((&i, dim), &g), &s)| dim.index(i).rem_euclid(g as i64) as usize * s)
                .sum();
            buf[pos] = f[(t, c)];
        }
        for (d, plan) in plans.iter().enumerate() {
            let g = shape[d];
            let stride = strides[d];
            let mut line = vec![C64::new(0.0, 0.0); g];
            for start in 0..total {
                // Visit each line once, from its first element.
                if (start / stride) % g != 0 {
                    continue;
                }
                for (k, slot) in line.iter_mut().enumerate() {
                    *slot = buf[start + k * stride];
                }
                plan.process(&mut line);
                for (k, v) in line.iter().enumerate() {
                    buf[start + k * stride] = *v;
                }
            }
        }
        for (p, z) in power.iter_mut().zip(&buf) {
            *p += z.norm_sqr();
        }
    }
    Ok(GridValues { shape, values: power.into_iter().map(f64::sqrt).collect() })
}

/// One detected peak.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub tau: Vec<f64>,
    pub height: f64,
}

/// Detected peaks, highest first.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct PeakSet {
    pub peaks: Vec<Peak>,
}

impl PeakSet {
    pub fn k_hat(&self) -> usize {
        self.peaks.len()
    }

    pub fn taus(&self) -> Vec<Vec<f64>> {
        self.peaks.iter().map(|p| p.tau.clone()).collect()
    }
}

/// Keeps the highest peaks, dropping any within `radius` of a kept one.
fn merge(mut peaks: Vec<Peak>, radius: f64) -> Vec<Peak> {
    peaks.sort_by(|a, b| {
        b.height.total_cmp(&a.height).then_with(|| {
            a.tau.iter().zip(&b.tau).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
        })
    });
    let mut kept: Vec<Peak> = Vec::new();
    for p in peaks {
        if kept.iter().all(|k| tau_distance(&k.tau, &p.tau) >= radius) {
            kept.push(p);
        }
    }
    kept
}

/// Local maxima of the grid at or above `threshold`, merged within `merge_radius`.
pub fn find_peaks(grid: &GridValues, threshold: f64, merge_radius: f64) -> Result<PeakSet> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::InvalidArgument(format!("threshold must lie in (0, 1], got {threshold}")));
    }
    let nd = grid.shape.len();
    let offsets: Vec<Vec<i64>> = (0..3usize.pow(nd as u32))
        .map(|mut o| {
            (0..nd)
                .map(|_| {
                    let v = (o % 3) as i64 - 1;
                    o /= 3;
                    v
                })
                .collect()
        })
        .filter(|v: &Vec<i64>| v.iter().any(|&x| x != 0))
        .collect();
    let mut peaks = Vec::new();
    for (i, &v) in grid.values.iter().enumerate() {
        if v < threshold {
            continue;
        }
        let idx = grid.unflatten(i);
        let is_max = offsets.iter().all(|off| {
            let j = idx
                .iter()
                .zip(off)
                .zip(&grid.shape)
                .fold(0usize, |acc, ((&k, &o), &g)| acc * g + (k as i64 + o).rem_euclid(g as i64) as usize);
            grid.values[j] <= v
        });
        if is_max {
            peaks.push(Peak { tau: grid.tau(i), height: v });
        }
    }
    Ok(PeakSet { peaks: merge(peaks, merge_radius) })
}

/// Result of a local refinement.
#[derive(Clone, Debug, PartialEq)]
pub struct Refined {
    pub tau: Vec<f64>,
    pub height: f64,
    pub converged: bool,
    pub iterations: usize,
}

fn wrap(tau: &mut [f64]) {
    for x in tau.iter_mut() {
        *x = x.rem_euclid(1.0);
        if *x >= 1.0 {
            *x = 0.0;
        }
    }
}

/// Solves `(lambda I - H) x = g` for a small symmetric `H`; `None` unless
/// the shifted matrix is positive definite.
fn newton_step(h: &[Vec<f64>], g: &[f64], lambda: f64) -> Option<Vec<f64>> {
    let d = g.len();
    let m = faer::Mat::<f64>::from_fn(d, d, |i, j| if i == j { lambda - h[i][j] } else { -h[i][j] });
    let chol = m.llt(faer::Side::Lower).ok()?;
    let rhs = faer::Mat::<f64>::from_fn(d, 1, |i, _| g[i]);
    use faer::linalg::solvers::Solve;
    let x = chol.solve(&rhs);
    // -H x = g  =>  x is the ascent step.
    Some((0..d).map(|i| x[(i, 0)]).collect())
}

/// Damped Newton ascent of `||f(tau)||^2` on the torus. Where the Hessian
/// is not negative definite the step is shifted towards gradient ascent
/// until it is. The objective never decreases.
pub fn refine_peak(poly: &DualPolynomial, tau0: &[f64]) -> Result<Refined> {
    if tau0.len() != poly.spec.ndim() {
        return Err(Error::DimensionMismatch { expected: poly.spec.ndim(), got: tau0.len() });
    }
    let mut tau = tau0.to_vec();
    wrap(&mut tau);
    let (mut val, mut grad, mut hess) = poly.derivatives(&tau);
    let mut converged = false;
    let mut iterations = 0;
    // Curvature scale of the atom for the gradient fallback.
    let curvature: f64 = poly
        .spec
        .dims()
        .iter()
        .map(|d| {
            let n = (0..d.size).map(|i| d.index(i).abs()).max().unwrap_or(0) as f64;
            (2.0 * PI * n).powi(2)
        })
        .sum::<f64>()
        .max(1.0);
    while iterations < MAX_NEWTON_ITERS {
        let gnorm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if gnorm <= GRAD_TOL {
            converged = true;
            break;
        }
        iterations += 1;
        let mut lambda = 0.0;
        let mut shift = 1e-6 * curvature * val.max(1e-12);
        let step = loop {
            if let Some(s) = newton_step(&hess, &grad, lambda) {
                break s;
            }
            lambda = shift;
            shift *= 4.0;
        };
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let mut cand: Vec<f64> = tau.iter().zip(&step).map(|(x, s)| x + t * s).collect();
            wrap(&mut cand);
            let (v, g, h) = poly.derivatives(&cand);
            if v >= val {
                accepted = Some((cand, v, g, h));
                break;
            }
            t *= 0.5;
        }
        match accepted {
            Some((c, v, g, h)) => {
                let moved = tau_distance(&c, &tau);
                tau = c;
                val = v;
                grad = g;
                hess = h;
                if moved == 0.0 {
                    converged = grad.iter().map(|g| g * g).sum::<f64>().sqrt() <= GRAD_TOL;
                    break;
                }
            }
            None => break,
        }
    }
    Ok(Refined { tau, height: val.sqrt(), converged, iterations })
}

/// Localization settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalizeOptions {
    pub oversample: usize,
    pub threshold: f64,
    pub validation: f64,
    /// Defaults to half the separation of the spec.
    pub merge_radius: Option<f64>,
}

impl Default for LocalizeOptions {
    fn default() -> Self {
        LocalizeOptions {
            oversample: DEFAULT_OVERSAMPLE,
            threshold: DEFAULT_THRESHOLD,
            validation: DEFAULT_VALIDATION,
            merge_radius: None,
        }
    }
}

/// Worst-case drop of a unit peak at half a grid step in every dimension.
///
/// Near a maximum `|f|` falls off like `1 - 2 pi^2 var(n) d^2`, with
/// `var(n) ~ N^2 / 12` over the `N` indices and `d <= 1 / (2 os N)`.
fn grid_loss(ndim: usize, os: usize) -> f64 {
    ndim as f64 * std::f64::consts::PI.powi(2) / (24.0 * (os * os) as f64)
}

/// Grid search, refinement, validation and merging.
///
/// The grid threshold is lowered by the discretization loss so coarser grids
/// do not miss peaks; validation after refinement is unaffected.
pub fn localize(poly: &DualPolynomial, opts: &LocalizeOptions) -> Result<PeakSet> {
    let radius = opts.merge_radius.unwrap_or(0.5 * poly.spec.separation());
    let os = effective_oversample(&poly.spec, opts.oversample);
    let grid = eval_grid(poly, os)?;
    let coarse = find_peaks(&grid, opts.threshold - grid_loss(poly.spec.ndim(), os), radius)?;
    let mut refined = Vec::new();
    for p in &coarse.peaks {
        let r = refine_peak(poly, &p.tau)?;
        if r.height >= opts.validation {
            refined.push(Peak { tau: r.tau, height: r.height });
        }
    }
    Ok(PeakSet { peaks: merge(refined, radius) })
}

/// Optimal assignment between true and estimated shifts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matching {
    /// `(truth index, estimate index)` pairs.
    pub pairs: Vec<(usize, usize)>,
    /// Per-coordinate wrap-around errors of each pair.
    pub errors: Vec<Vec<f64>>,
    pub misses: Vec<usize>,
    pub false_alarms: Vec<usize>,
}

impl Matching {
    /// Largest coordinate error over all pairs.
    pub fn max_error(&self) -> f64 {
        self.errors.iter().flatten().cloned().fold(0.0, f64::max)
    }
}

/// Minimum-cost assignment on a square cost matrix; `out[row] = col`.
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    // Potentials formulation with 1-based sentinel column 0.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0; n];
    for j in 1..=n {
        out[p[j] - 1] = j - 1;
    }
    out
}

/// Minimum-total-distance assignment under the max-coordinate wrap metric.
pub fn match_targets(truth: &[Vec<f64>], est: &[Vec<f64>]) -> Matching {
    let n = truth.len().max(est.len());
    let cost: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| if i < truth.len() && j < est.len() { tau_distance(&truth[i], &est[j]) } else { 0.0 })
                .collect()
        })
        .collect();
    let assign = hungarian(&cost);
    let mut m = Matching { pairs: Vec::new(), errors: Vec::new(), misses: Vec::new(), false_alarms: Vec::new() };
    for (i, &j) in assign.iter().enumerate() {
        match (i < truth.len(), j < est.len()) {
            (true, true) => {
                m.pairs.push((i, j));
                m.errors.push(
                    truth[i].iter().zip(&est[j]).map(|(&a, &b)| crate::model::wrap_distance(a, b)).collect(),
                );
            }
            (true, false) => m.misses.push(i),
            (false, true) => m.false_alarms.push(j),
            (false, false) => {}
        }
    }
    m.false_alarms.sort_unstable();
    m
}
