//! Douglas-Rachford splitting between the PSD cone and the affine set of
//! structured block matrices, with safeguarded Anderson acceleration.
//!
//! The iterate `u` is an `n x n` Hermitian matrix with `n = |Q| + T`. Each
//! step projects `u` onto the PSD cone (`Z`), reflects, and applies the
//! proximal map of the objective restricted to matrices of the form
//! `[[Q, F^H], [F, I]]` with Toeplitz-traced `Q` and `F = X^*(q)`.

use std::collections::VecDeque;

use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, Par, Side};
use num_complex::Complex64 as C64;

use super::{finish, DualSolution, KktResiduals, SdrProblem, SolveStatus, SolverPath, ToeplitzClasses};
use crate::error::{Error, Result};
use crate::localization::{effective_oversample, eval_grid, DualPolynomial, DEFAULT_OVERSAMPLE};

pub(super) const DEFAULT_MAX_ITERS: usize = 5000;
const MEMORY: usize = 10;
const REGULARIZATION: f64 = 1e-10;
const SAFEGUARD: f64 = 2.0;
/// Step parameters for observations normalized to unit norm, chosen by
/// iteration counts on 15 x 15 delay-Doppler instances.
const RHO_NOISELESS: f64 = 10.0;
const RHO_NOISY: f64 = 2.0;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const ONE: C64 = C64 { re: 1.0, im: 0.0 };

struct Structure<'a> {
    problem: &'a SdrProblem,
    classes: ToeplitzClasses,
    nq: usize,
    n: usize,
}

/// Output of one splitting step evaluated at `u`.
struct Step {
    next: Mat<C64>,
    /// PSD projection of `u`.
    z: Mat<C64>,
    /// Point of the affine set.
    a: Mat<C64>,
    q: Vec<C64>,
    /// Negative spectral part of `u`; the PSD multiplier is `-rho N`.
    neg: Mat<C64>,
}

fn frob(a: &Mat<C64>) -> f64 {
    let mut s = 0.0;
    for j in 0..a.ncols() {
        s += a.col_as_slice(j).iter().map(|z| z.norm_sqr()).sum::<f64>();
    }
    s.sqrt()
}

fn diff_norm(a: &Mat<C64>, b: &Mat<C64>) -> f64 {
    let mut s = 0.0;
    for j in 0..a.ncols() {
        s += a.col_as_slice(j).iter().zip(b.col_as_slice(j)).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>();
    }
    s.sqrt()
}

impl<'a> Structure<'a> {
    fn new(problem: &'a SdrProblem) -> Self {
        let nq = problem.nq();
        Structure { problem, classes: ToeplitzClasses::new(problem.degrees()), nq, n: nq + problem.t() }
    }

    /// Negative spectral part `N` of `u`, so that `u - N` is its PSD projection.
    /// Built from whichever side of the spectrum has fewer eigenvalues.
    fn negative_part(&self, u: &Mat<C64>) -> Result<Mat<C64>> {
        let eig = u.self_adjoint_eigen(Side::Lower).map_err(|e| Error::Numerical(format!("eig: {e:?}")))?;
        let s = eig.S();
        let v = eig.U();
        let neg: Vec<usize> = (0..self.n).filter(|&i| s[i].re < 0.0).collect();
        let pos: Vec<usize> = (0..self.n).filter(|&i| s[i].re > 0.0).collect();
        let outer = |idx: &[usize]| {
            let mut out = Mat::zeros(self.n, self.n);
            if !idx.is_empty() {
                let vn = Mat::from_fn(self.n, idx.len(), |i, k| v[(i, idx[k])]);
                let vs = Mat::from_fn(self.n, idx.len(), |i, k| v[(i, idx[k])] * s[idx[k]].re);
                matmul(&mut out, Accum::Replace, &vs, vn.adjoint(), ONE, Par::Seq);
            }
            out
        };
        if neg.len() <= pos.len() {
            Ok(outer(&neg))
        } else {
            let mut out = u - &outer(&pos);
            hermitize(&mut out);
            Ok(out)
        }
    }

    /// Projection of `w` onto the affine set combined with the objective
    /// prox, `argmin_A f(A) + (rho/2) ||A - w||^2`.
    fn prox(&self, w: &Mat<C64>, rho: f64) -> (Mat<C64>, Vec<C64>) {
        let (nq, n) = (self.nq, self.n);
        let p = self.problem;
        let mut a = Mat::zeros(n, n);
        // Q block: Hermitian part, then the per-class trace shift.
        let cl = &self.classes;
        let mut sums = vec![ZERO; cl.counts.len()];
        for b in 0..nq {
            for r in 0..nq {
                let v = (w[(r, b)] + w[(b, r)].conj()) * 0.5;
                a[(r, b)] = v;
                sums[cl.class_of[r + b * nq] as usize] += v;
            }
        }
        let zero = cl.zero_class as usize;
        let shift: Vec<C64> = sums
            .iter()
            .zip(&cl.counts)
            .enumerate()
            .map(|(k, (s, &c))| {
                let target = if k == zero { ONE } else { ZERO };
                (s - target) / c as f64
            })
            .collect();
        for b in 0..nq {
            for r in 0..nq {
                a[(r, b)] -= shift[cl.class_of[r + b * nq] as usize];
            }
        }
        // q from b = y + 2 rho X(W21), W21 taken as the Hermitian average.
        let embed = p.embed();
        let t = p.t();
        let w21: Vec<Vec<C64>> =
            (0..nq).map(|c| (0..t).map(|i| (w[(nq + i, c)] + w[(c, nq + i)].conj()) * 0.5).collect()).collect();
        let xw = p.ensemble().forward_by(|c| &w21[embed[c]]);
        let weights = p.ensemble().weights();
        let bvec: Vec<C64> = p.y().iter().zip(&xw).map(|(y, x)| y + x * (2.0 * rho)).collect();
        let q = prox_q(&bvec, weights, rho, 0.25 * p.sigma());
        let f = p.coefficients(&q);
        for (c, &e) in embed.iter().enumerate() {
            for i in 0..t {
                let v = f.0[(i, c)];
                a[(nq + i, e)] = v;
                a[(e, nq + i)] = v.conj();
            }
        }
        for i in 0..t {
            a[(nq + i, nq + i)] = ONE;
        }
        (a, q)
    }

    fn step(&self, u: &Mat<C64>, rho: f64) -> Result<Step> {
        let neg = self.negative_part(u)?;
        let z = u - &neg;
        let w = &z - &neg;
        let (a, q) = self.prox(&w, rho);
        let next = &a + &neg;
        Ok(Step { next, z, a, q, neg })
    }
}

/// `argmin_q rho sum w |q|^2 - Re<q, b> + lam ||q||`.
fn prox_q(b: &[C64], w: &[f64], rho: f64, lam: f64) -> Vec<C64> {
    let plain = |mu: f64| -> Vec<C64> {
        b.iter()
            .zip(w)
            .map(|(b, w)| {
                let d = 2.0 * rho * w + mu;
                if d > 0.0 {
                    b / d
                } else {
                    ZERO
                }
            })
            .collect()
    };
    if lam == 0.0 {
        return plain(0.0);
    }
    let bn = b.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if bn <= lam {
        return vec![ZERO; b.len()];
    }
    // mu ||q(mu)|| is increasing in mu; solve mu ||q(mu)|| = lam.
    let g = |mu: f64| mu * plain(mu).iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt() - lam;
    let (mut lo, mut hi) = (0.0, 1.0);
    while g(hi) < 0.0 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    plain(0.5 * (lo + hi))
}

fn flatten(m: &Mat<C64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * m.nrows() * m.ncols());
    for j in 0..m.ncols() {
        for z in m.col_as_slice(j) {
            out.push(z.re);
            out.push(z.im);
        }
    }
    out
}

fn unflatten(v: &[f64], n: usize) -> Mat<C64> {
    Mat::from_fn(n, n, |i, j| {
        let k = 2 * (i + j * n);
        C64::new(v[k], v[k + 1])
    })
}

/// Type-II Anderson mixing over the last `MEMORY` differences.
struct Anderson {
    prev: Option<(Vec<f64>, Vec<f64>)>,
    dg: VecDeque<Vec<f64>>,
    df: VecDeque<Vec<f64>>,
    /// Gram matrix of `df`, same order.
    gram: VecDeque<VecDeque<f64>>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Anderson {
    fn new() -> Self {
        Anderson { prev: None, dg: VecDeque::new(), df: VecDeque::new(), gram: VecDeque::new() }
    }

    fn clear(&mut self) {
        *self = Anderson::new();
    }

    fn active(&self) -> bool {
        !self.df.is_empty()
    }

    /// Records `g(u)` and `f = g(u) - u`; returns the mixed next iterate.
    fn push(&mut self, g: Vec<f64>, f: Vec<f64>) -> Vec<f64> {
        if let Some((gp, fp)) = self.prev.take() {
            let dgi: Vec<f64> = g.iter().zip(&gp).map(|(a, b)| a - b).collect();
            let dfi: Vec<f64> = f.iter().zip(&fp).map(|(a, b)| a - b).collect();
            if self.df.len() == MEMORY {
                self.dg.pop_front();
                self.df.pop_front();
                self.gram.pop_front();
                self.gram.iter_mut().for_each(|r| {
                    r.pop_front();
                });
            }
            let row: VecDeque<f64> = self.df.iter().map(|d| dot(d, &dfi)).collect();
            for (r, v) in self.gram.iter_mut().zip(&row) {
                r.push_back(*v);
            }
            let mut row = row;
            row.push_back(dot(&dfi, &dfi));
            self.gram.push_back(row);
            self.dg.push_back(dgi);
            self.df.push_back(dfi);
        }
        let k = self.df.len();
        let mut out = g.clone();
        if k > 0 {
            let scale = (0..k).map(|i| self.gram[i][i]).fold(0.0f64, f64::max).max(1e-300);
            let gram = Mat::<f64>::from_fn(k, k, |i, j| {
                self.gram[i][j] + if i == j { REGULARIZATION * scale } else { 0.0 }
            });
            let rhs = Mat::<f64>::from_fn(k, 1, |i, _| dot(&self.df[i], &f));
            if let Ok(ch) = gram.llt(Side::Lower) {
                use faer::linalg::solvers::Solve;
                let gamma = ch.solve(&rhs);
                if (0..k).all(|i| gamma[(i, 0)].is_finite()) {
                    for i in 0..k {
                        let c = gamma[(i, 0)];
                        out.iter_mut().zip(&self.dg[i]).for_each(|(o, d)| *o -= c * d);
                    }
                }
            }
        }
        self.prev = Some((g, f));
        out
    }
}

pub(super) fn solve(problem: &SdrProblem, tol: f64, max_iters: usize) -> Result<DualSolution> {
    let st = Structure::new(problem);
    let rho = if problem.sigma() > 0.0 { RHO_NOISY } else { RHO_NOISELESS };
    let n = st.n;
    let mut u = Mat::<C64>::identity(n, n);
    let mut anderson = Anderson::new();
    let mut fallback: Option<Mat<C64>> = None;
    let mut last_res = f64::INFINITY;
    let mut status = SolveStatus::MaxIters;
    let mut kkt = KktResiduals::default();
    let mut best: Option<(Vec<C64>, Mat<C64>)> = None;
    let mut iters = 0;
    let mut z_prev: Option<Mat<C64>> = None;
    let nq = st.nq;

    while iters < max_iters {
        iters += 1;
        let mut s = st.step(&u, rho)?;
        let mut res = diff_norm(&s.next, &u);
        if anderson.active() && res > SAFEGUARD * last_res {
            // Reject the mixed point and restart from the last plain step.
            if let Some(fb) = fallback.take() {
                u = fb;
                s = st.step(&u, rho)?;
                res = diff_norm(&s.next, &u);
            }
            anderson.clear();
        }
        last_res = res;

        let primal = diff_norm(&s.a, &s.z) / (1.0 + frob(&s.a).max(frob(&s.z)));
        let dual = match &z_prev {
            Some(zp) => rho * diff_norm(&s.z, zp) / (1.0 + rho * frob(&s.neg)),
            None => f64::INFINITY,
        };
        // The PSD multiplier is -rho N; its pairing with the constant terms
        // of the affine set estimates the optimal value.
        let value = problem.normalized_objective(&s.q);
        let mean_diag = (0..nq).map(|i| s.neg[(i, i)].re).sum::<f64>() / nq as f64;
        let tr22 = (nq..n).map(|i| s.neg[(i, i)].re).sum::<f64>();
        let dual_value = -rho * (mean_diag + tr22);
        let gap = (value - dual_value).abs() / (1.0 + value.abs() + dual_value.abs());
        kkt = KktResiduals { primal, dual, gap };
        best = Some((s.q.clone(), Mat::from_fn(nq, nq, |i, j| s.a[(i, j)])));
        if kkt.max() <= tol {
            status = SolveStatus::Optimal;
            break;
        }

        let g = flatten(&s.next);
        let f: Vec<f64> = g.iter().zip(flatten(&u)).map(|(a, b)| a - b).collect();
        let mixed = anderson.push(g, f);
        let mut next = unflatten(&mixed, n);
        hermitize(&mut next);
        fallback = Some(s.next);
        z_prev = Some(s.z);
        u = next;
    }
    let (mut q, q_matrix) = best.ok_or_else(|| Error::Numerical("no iterations were run".into()))?;
    // First-order iterates are only approximately feasible; shrink q so the
    // certificate stays within the unit ball on the oversampled grid.
    let poly = DualPolynomial::new(problem.coefficients(&q), problem.spec().clone())?;
    let sup = eval_grid(&poly, effective_oversample(problem.spec(), DEFAULT_OVERSAMPLE))?.max();
    if sup > 1.0 {
        q.iter_mut().for_each(|z| *z /= sup);
    }
    Ok(finish(problem, q, q_matrix, status, kkt, iters, SolverPath::FirstOrder))
}

fn hermitize(a: &mut Mat<C64>) {
    let n = a.nrows();
    for j in 0..n {
        a[(j, j)].im = 0.0;
        for i in j + 1..n {
            let v = (a[(i, j)] + a[(j, i)].conj()) * 0.5;
            a[(i, j)] = v;
            a[(j, i)] = v.conj();
        }
    }
}
