//! Primal-dual interior-point method with Nesterov-Todd scaling and
//! Mehrotra predictor-corrector steps.
//!
//! The block matrix `Z = [[Q, F^H], [F, I]]` is the primal variable of a
//! standard-form complex SDP `min <C, Z>` s.t. real linear functionals of `Z`
//! are fixed. The functionals pin `Z22 = I`, impose the trace constraints on
//! `Q`, and keep every observation block of `Z21` on the line spanned by its
//! measurement matrix, so that `Z21 = X^*(q)` for some `q`. The noisy problem
//! adds a second-order cone `(t, u)` with `u` linked to `q`.

use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, Par, Side};
use num_complex::Complex64 as C64;

use super::{finish, q_from_block, DualSolution, KktResiduals, SdrProblem, SolveStatus, SolverPath};
use crate::error::{Error, Result};

pub(super) const DEFAULT_MAX_ITERS: usize = 100;
const STEP_FRACTION: f64 = 0.98;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const ONE: C64 = C64 { re: 1.0, im: 0.0 };

/// A complex functional `l(Z) = sum conj(u) Z[r, c]`; yields the real
/// constraint `Re l = b_re`, plus `Im l = b_im` when `complex`.
struct Group {
    entries: Vec<(usize, usize, C64)>,
    complex: bool,
}

#[derive(Clone, Copy)]
struct Row {
    group: usize,
    imag: bool,
}

struct Data {
    n: usize,
    groups: Vec<Group>,
    rows: Vec<Row>,
    b: Vec<f64>,
    /// Sparse cone coefficients per row.
    soc: Vec<Vec<(usize, f64)>>,
    soc_dim: usize,
    c: Mat<C64>,
    c_soc: Vec<f64>,
}

fn householder_complement(v: &[C64]) -> Vec<Vec<C64>> {
    let n = v.len();
    let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if norm == 0.0 {
        return (0..n)
            .map(|i| {
                let mut e = vec![ZERO; n];
                e[i] = ONE;
                e
            })
            .collect();
    }
    let u: Vec<C64> = v.iter().map(|z| z / norm).collect();
    let phase = if u[0].norm() > 0.0 { u[0] / u[0].norm() } else { ONE };
    let mut w = u.clone();
    w[0] += phase;
    let wn = w.iter().map(|z| z.norm_sqr()).sum::<f64>();
    // Columns 1.. of I - 2 w w^H / |w|^2 are orthonormal and orthogonal to u.
    (1..n)
        .map(|j| (0..n).map(|i| (if i == j { ONE } else { ZERO }) - w[i] * w[j].conj() * (2.0 / wn)).collect())
        .collect()
}

impl Data {
    fn new(p: &SdrProblem) -> Self {
        let nq = p.nq();
        let t = p.t();
        let n = nq + t;
        let ens = p.ensemble();
        let embed = p.embed();
        let mut groups = Vec::new();
        let mut b_pairs: Vec<(f64, f64)> = Vec::new();
        let mut push = |groups: &mut Vec<Group>, entries, complex, b: (f64, f64)| {
            groups.push(Group { entries, complex });
            b_pairs.push(b);
        };
        // Z22 = I.
        for i in 0..t {
            push(&mut groups, vec![(nq + i, nq + i, ONE)], false, (1.0, 0.0));
            for j in i + 1..t {
                push(&mut groups, vec![(nq + j, nq + i, ONE)], true, (0.0, 0.0));
            }
        }
        // Trace constraints on Q.
        for tc in p.constraints() {
            let entries = tc.entries.iter().map(|&(a, b)| (a, b, ONE)).collect();
            let zero = tc.offset.iter().all(|&k| k == 0);
            push(&mut groups, entries, !zero, (tc.target, 0.0));
        }
        // Z21 blocks stay in the range of the adjoint.
        let mut used = vec![false; nq];
        for m in 0..ens.len() {
            let mut pos = Vec::new();
            let mut v = Vec::new();
            for (c, vec) in ens.observation(m) {
                used[embed[c]] = true;
                for (i, x) in vec.iter().enumerate() {
                    pos.push((nq + i, embed[c]));
                    v.push(*x);
                }
            }
            for u in householder_complement(&v) {
                let entries = pos.iter().zip(&u).map(|(&(r, c), &x)| (r, c, x)).collect();
                push(&mut groups, entries, true, (0.0, 0.0));
            }
        }
        for (col, _) in used.iter().enumerate().filter(|(_, u)| !**u) {
            for i in 0..t {
                push(&mut groups, vec![(nq + i, col, ONE)], true, (0.0, 0.0));
            }
        }
        let noisy = p.sigma() > 0.0;
        let soc_dim = if noisy { 1 + 2 * ens.len() } else { 0 };
        let mut link = Vec::new();
        if noisy {
            // Re q_m(Z) - u_{2m} = 0 and Im q_m(Z) - u_{2m+1} = 0.
            for (m, &w) in ens.weights().iter().enumerate() {
                let entries = if w > 0.0 {
                    ens.observation(m)
                        .flat_map(|(c, vec)| {
                            vec.iter().enumerate().map(move |(i, x)| (nq + i, embed[c], x / w)).collect::<Vec<_>>()
                        })
                        .collect()
                } else {
                    Vec::new()
                };
                link.push(groups.len());
                push(&mut groups, entries, true, (0.0, 0.0));
            }
        }
        let mut rows = Vec::new();
        let mut b = Vec::new();
        let mut soc = Vec::new();
        for (g, grp) in groups.iter().enumerate() {
            let m_link = link.iter().position(|&l| l == g);
            rows.push(Row { group: g, imag: false });
            b.push(b_pairs[g].0);
            soc.push(m_link.map_or(Vec::new(), |m| vec![(1 + 2 * m, -1.0)]));
            if grp.complex {
                rows.push(Row { group: g, imag: true });
                b.push(b_pairs[g].1);
                soc.push(m_link.map_or(Vec::new(), |m| vec![(2 + 2 * m, -1.0)]));
            }
        }
        // Objective: minimize -Re<q, y> = -Re tr(G^H Z21) with G_m = y_m M_m / w_m.
        let mut c = Mat::zeros(n, n);
        for m in 0..ens.len() {
            let w = ens.weights()[m];
            if w == 0.0 {
                continue;
            }
            let ym = p.y()[m];
            for (col, vec) in ens.observation(m) {
                for (i, x) in vec.iter().enumerate() {
                    let g = ym * x / w;
                    c[(nq + i, embed[col])] = -g * 0.5;
                    c[(embed[col], nq + i)] = -g.conj() * 0.5;
                }
            }
        }
        let mut c_soc = vec![0.0; soc_dim];
        if noisy {
            c_soc[0] = 0.25 * p.sigma();
        }
        Data { n, groups, rows, b, soc, soc_dim, c, c_soc }
    }

    fn m(&self) -> usize {
        self.rows.len()
    }

    fn eval_groups(&self, x: &Mat<C64>) -> Vec<C64> {
        self.groups
            .iter()
            .map(|g| g.entries.iter().map(|&(r, c, u)| u.conj() * x[(r, c)]).sum())
            .collect()
    }

    /// `A(X) + A_s(x_s)`.
    fn op(&self, x: &Mat<C64>, xs: &[f64]) -> Vec<f64> {
        let vals = self.eval_groups(x);
        self.rows
            .iter()
            .zip(&self.soc)
            .map(|(row, soc)| {
                let v = vals[row.group];
                let base = if row.imag { v.im } else { v.re };
                base + soc.iter().map(|&(i, a)| a * xs[i]).sum::<f64>()
            })
            .collect()
    }

    /// `(A^*(y), A_s^T y)`.
    fn op_adj(&self, y: &[f64]) -> (Mat<C64>, Vec<f64>) {
        let mut kappa = vec![ZERO; self.groups.len()];
        let mut s = vec![0.0; self.soc_dim];
        for ((row, soc), &yi) in self.rows.iter().zip(&self.soc).zip(y) {
            if row.imag {
                kappa[row.group].im += yi;
            } else {
                kappa[row.group].re += yi;
            }
            for &(i, a) in soc {
                s[i] += a * yi;
            }
        }
        let mut out = Mat::zeros(self.n, self.n);
        for (g, k) in self.groups.iter().zip(&kappa) {
            if *k == ZERO {
                continue;
            }
            for &(r, c, u) in &g.entries {
                let v = k * u * 0.5;
                out[(r, c)] += v;
                out[(c, r)] += v.conj();
            }
        }
        (out, s)
    }

    /// Schur complement `H_ij = <A_i, W A_j W> + a_i^T W_s^2 a_j`.
    fn schur(&self, w: &Mat<C64>, w2_soc: Option<&Mat<f64>>) -> Mat<f64> {
        let m = self.m();
        let n = self.n;
        let mut h = Mat::<f64>::zeros(m, m);
        let mut bmat = Mat::<C64>::zeros(n, n);
        let mut first_row = vec![0usize; self.groups.len()];
        for (i, row) in self.rows.iter().enumerate().rev() {
            first_row[row.group] = i;
        }
        for (g, grp) in self.groups.iter().enumerate() {
            bmat.fill(ZERO);
            for &(r, c, u) in &grp.entries {
                let wr = w.col_as_slice(r).to_vec();
                for bcol in 0..n {
                    let coef = u * w[(c, bcol)];
                    if coef == ZERO {
                        continue;
                    }
                    for (dst, src) in bmat.col_as_slice_mut(bcol).iter_mut().zip(&wr) {
                        *dst += coef * src;
                    }
                }
            }
            let parts: &[bool] = if grp.complex { &[false, true] } else { &[false] };
            for &imag in parts {
                // P = (B + B^H)/2 for the real part, i (B - B^H)/2 for the imaginary part.
                let p = Mat::from_fn(n, n, |a, bb| {
                    let (x, y) = (bmat[(a, bb)], bmat[(bb, a)].conj());
                    if imag {
                        C64::new(0.0, 0.5) * (x - y)
                    } else {
                        (x + y) * 0.5
                    }
                });
                let vals = self.eval_groups(&p);
                let j = first_row[g] + usize::from(imag);
                for (i, row) in self.rows.iter().enumerate() {
                    let v = vals[row.group];
                    h[(i, j)] = if row.imag { v.im } else { v.re };
                }
            }
        }
        if let Some(w2) = w2_soc {
            for (i, si) in self.soc.iter().enumerate() {
                for &(pi, ai) in si {
                    for (j, sj) in self.soc.iter().enumerate() {
                        for &(pj, aj) in sj {
                            h[(i, j)] += ai * aj * w2[(pi, pj)];
                        }
                    }
                }
            }
        }
        // Symmetrize away rounding.
        for i in 0..m {
            for j in 0..i {
                let v = 0.5 * (h[(i, j)] + h[(j, i)]);
                h[(i, j)] = v;
                h[(j, i)] = v;
            }
        }
        h
    }
}

fn mul(a: &Mat<C64>, b: &Mat<C64>) -> Mat<C64> {
    let mut out = Mat::zeros(a.nrows(), b.ncols());
    matmul(&mut out, Accum::Replace, a, b, ONE, Par::Seq);
    out
}

fn mul_adj(a: &Mat<C64>, b: &Mat<C64>) -> Mat<C64> {
    // a * b^H
    let mut out = Mat::zeros(a.nrows(), b.nrows());
    matmul(&mut out, Accum::Replace, a, b.adjoint(), ONE, Par::Seq);
    out
}

fn adj_mul(a: &Mat<C64>, b: &Mat<C64>) -> Mat<C64> {
    // a^H * b
    let mut out = Mat::zeros(a.ncols(), b.ncols());
    matmul(&mut out, Accum::Replace, a.adjoint(), b, ONE, Par::Seq);
    out
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

fn re_inner(a: &Mat<C64>, b: &Mat<C64>) -> f64 {
    let mut s = 0.0;
    for j in 0..a.ncols() {
        for (x, y) in a.col_as_slice(j).iter().zip(b.col_as_slice(j)) {
            s += x.re * y.re + x.im * y.im;
        }
    }
    s
}

fn frob(a: &Mat<C64>) -> f64 {
    re_inner(a, a).sqrt()
}

fn cholesky(a: &Mat<C64>) -> Result<Mat<C64>> {
    let llt = a.llt(Side::Lower).map_err(|e| Error::Numerical(format!("iterate lost definiteness: {e:?}")))?;
    Ok(llt.L().to_owned())
}

/// Nesterov-Todd scaling: `R` with `R^{-1} X R^{-H} = R^H S R = diag(lambda)`.
struct NtScaling {
    r: Mat<C64>,
    rinv: Mat<C64>,
    lambda: Vec<f64>,
}

fn nt_scaling(x: &Mat<C64>, s: &Mat<C64>) -> Result<NtScaling> {
    let lx = cholesky(x)?;
    let ls = cholesky(s)?;
    let prod = adj_mul(&ls, &lx);
    let svd = prod.svd().map_err(|e| Error::Numerical(format!("svd: {e:?}")))?;
    let n = x.nrows();
    let lambda: Vec<f64> = (0..n).map(|i| svd.S()[i].re).collect();
    if lambda.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::Numerical("degenerate scaling point".into()));
    }
    let v = svd.V().to_owned();
    let u = svd.U().to_owned();
    let mut r = mul(&lx, &v);
    for j in 0..n {
        let f = 1.0 / lambda[j].sqrt();
        r.col_as_slice_mut(j).iter_mut().for_each(|z| *z *= f);
    }
    // R^{-1} = diag(lambda)^{-1/2} U^H L_s^H.
    let mut rinv = Mat::zeros(n, n);
    matmul(&mut rinv, Accum::Replace, u.adjoint(), ls.adjoint(), ONE, Par::Seq);
    for i in 0..n {
        let f = 1.0 / lambda[i].sqrt();
        for j in 0..n {
            rinv[(i, j)] *= f;
        }
    }
    Ok(NtScaling { r, rinv, lambda })
}

/// Second-order cone helpers for `x = (x0, x1)`, `x0 >= ||x1||`.
mod soc {
    pub fn jdot(x: &[f64]) -> f64 {
        x[0] * x[0] - x[1..].iter().map(|v| v * v).sum::<f64>()
    }

    pub fn jordan(x: &[f64], y: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(x.len());
        out.push(x.iter().zip(y).map(|(a, b)| a * b).sum());
        out.extend(x[1..].iter().zip(&y[1..]).map(|(a, b)| x[0] * b + y[0] * a));
        out
    }

    /// Solves `lambda o u = r`.
    pub fn jordan_div(l: &[f64], r: &[f64]) -> Vec<f64> {
        let det = jdot(l);
        let l1r1: f64 = l[1..].iter().zip(&r[1..]).map(|(a, b)| a * b).sum();
        let u0 = (l[0] * r[0] - l1r1) / det;
        let mut out = vec![u0];
        out.extend(r[1..].iter().zip(&l[1..]).map(|(ri, li)| (ri - u0 * li) / l[0]));
        out
    }

    /// Largest step `a` keeping `x + a d` in the cone.
    pub fn max_step(x: &[f64], d: &[f64]) -> f64 {
        let a = jdot(d);
        let b = 2.0 * (x[0] * d[0] - x[1..].iter().zip(&d[1..]).map(|(p, q)| p * q).sum::<f64>());
        let c = jdot(x);
        // Boundary crossings solve a t^2 + b t + c = 0 with x0 + t d0 >= 0.
        let mut best = f64::INFINITY;
        let disc = b * b - 4.0 * a * c;
        if a.abs() < 1e-300 {
            if b < 0.0 {
                best = -c / b;
            }
        } else if disc >= 0.0 {
            let sq = disc.sqrt();
            let q = -0.5 * (b + b.signum() * sq);
            for t in [q / a, if q != 0.0 { c / q } else { f64::INFINITY }] {
                if t > 0.0 && t < best {
                    best = t;
                }
            }
        }
        if d[0] < 0.0 {
            best = best.min(-x[0] / d[0]);
        }
        best
    }
}

struct SocScaling {
    w: Mat<f64>,
    winv: Mat<f64>,
    w2: Mat<f64>,
    lambda: Vec<f64>,
}

fn soc_scaling(x: &[f64], s: &[f64]) -> SocScaling {
    let d = x.len();
    let (nx, ns) = (soc::jdot(x).sqrt(), soc::jdot(s).sqrt());
    let xb: Vec<f64> = x.iter().map(|v| v / nx).collect();
    let sb: Vec<f64> = s.iter().map(|v| v / ns).collect();
    let gamma = ((1.0 + xb.iter().zip(&sb).map(|(a, b)| a * b).sum::<f64>()) / 2.0).sqrt();
    let mut wb: Vec<f64> = (0..d).map(|i| (xb[i] + if i == 0 { sb[i] } else { -sb[i] }) / (2.0 * gamma)).collect();
    let beta = (nx / ns).sqrt();
    wb[0] += 1.0;
    let scale = (2.0 * wb[0]).sqrt();
    let v: Vec<f64> = wb.iter().map(|x| x / scale).collect();
    let j = |i: usize| if i == 0 { 1.0 } else { -1.0 };
    let w = Mat::from_fn(d, d, |a, b| beta * (2.0 * v[a] * v[b] - if a == b { j(a) } else { 0.0 }));
    let winv = Mat::from_fn(d, d, |a, b| (2.0 * j(a) * v[a] * v[b] * j(b) - if a == b { j(a) } else { 0.0 }) / beta);
    let w2 = &w * &w;
    let lambda = (0..d).map(|a| (0..d).map(|b| w[(a, b)] * s[b]).sum()).collect();
    SocScaling { w, winv, w2, lambda }
}

fn matvec(a: &Mat<f64>, x: &[f64]) -> Vec<f64> {
    (0..a.nrows()).map(|i| (0..a.ncols()).map(|j| a[(i, j)] * x[j]).sum()).collect()
}

fn min_eig(a: &Mat<C64>) -> Result<f64> {
    let e = a.self_adjoint_eigenvalues(Side::Lower).map_err(|e| Error::Numerical(format!("eig: {e:?}")))?;
    Ok(e.iter().cloned().fold(f64::INFINITY, f64::min))
}

/// Largest `a` with `diag(lambda) + a D >= 0`, for Hermitian `D`.
fn psd_step(lambda: &[f64], d: &Mat<C64>) -> Result<f64> {
    let n = lambda.len();
    let m = Mat::from_fn(n, n, |i, j| d[(i, j)] / (lambda[i] * lambda[j]).sqrt());
    let e = min_eig(&m)?;
    Ok(if e >= 0.0 { f64::INFINITY } else { -1.0 / e })
}

struct Direction {
    dx: Mat<C64>,
    ds: Mat<C64>,
    dy: Vec<f64>,
    dxs: Vec<f64>,
    dss: Vec<f64>,
}

pub(super) fn solve(problem: &SdrProblem, tol: f64, max_iters: usize) -> Result<DualSolution> {
    let data = Data::new(problem);
    let n = data.n;
    let m = data.m();
    let has_soc = data.soc_dim > 0;
    let nu = n as f64 + if has_soc { 1.0 } else { 0.0 };

    let mut x = Mat::<C64>::identity(n, n);
    let mut s = Mat::<C64>::identity(n, n);
    let mut y = vec![0.0; m];
    let mut xs = vec![0.0; data.soc_dim];
    let mut ss = vec![0.0; data.soc_dim];
    if has_soc {
        xs[0] = 1.0;
        ss[0] = 1.0;
    }
    let b_norm = data.b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let c_norm = (frob(&data.c).powi(2) + data.c_soc.iter().map(|v| v * v).sum::<f64>()).sqrt();

    let mut status = SolveStatus::MaxIters;
    let mut kkt;
    let mut iters = 0;
    loop {
        let ax = data.op(&x, &xs);
        let rp: Vec<f64> = data.b.iter().zip(&ax).map(|(b, a)| b - a).collect();
        let (aty, aty_s) = data.op_adj(&y);
        let mut rd = &data.c - &aty - &s;
        hermitize(&mut rd);
        let rd_s: Vec<f64> = (0..data.soc_dim).map(|i| data.c_soc[i] - aty_s[i] - ss[i]).collect();
        let pobj = re_inner(&data.c, &x) + data.c_soc.iter().zip(&xs).map(|(a, b)| a * b).sum::<f64>();
        let dobj: f64 = data.b.iter().zip(&y).map(|(a, b)| a * b).sum();
        let xs_dot: f64 = xs.iter().zip(&ss).map(|(a, b)| a * b).sum();
        let mu = (re_inner(&x, &s) + xs_dot) / nu;
        kkt = KktResiduals {
            primal: rp.iter().map(|v| v * v).sum::<f64>().sqrt() / (1.0 + b_norm),
            dual: (frob(&rd).powi(2) + rd_s.iter().map(|v| v * v).sum::<f64>()).sqrt() / (1.0 + c_norm),
            gap: (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs()),
        };
        if kkt.max() <= tol {
            status = SolveStatus::Optimal;
            break;
        }
        if iters >= max_iters {
            break;
        }
        iters += 1;

        let nt = match nt_scaling(&x, &s) {
            Ok(nt) => nt,
            Err(_) if kkt.max() <= 100.0 * tol => break,
            Err(e) => return Err(e),
        };
        let w = mul_adj(&nt.r, &nt.r);
        let sc = has_soc.then(|| soc_scaling(&xs, &ss));
        let mut h = data.schur(&w, sc.as_ref().map(|s| &s.w2));
        let diag_max = (0..m).map(|i| h[(i, i)]).fold(0.0f64, f64::max);
        let mut reg = 0.0;
        let chol = loop {
            match h.llt(Side::Lower) {
                Ok(c) => break c,
                Err(_) => {
                    reg = if reg == 0.0 { 1e-14 * diag_max.max(1e-300) } else { reg * 100.0 };
                    if reg > 1e-4 * diag_max {
                        return Err(Error::Numerical("Schur complement is singular".into()));
                    }
                    for i in 0..m {
                        h[(i, i)] += reg;
                    }
                }
            }
        };
        let wrdw = mul(&mul(&w, &rd), &w);
        let w2rd_s = sc.as_ref().map(|sc| matvec(&sc.w2, &rd_s)).unwrap_or_default();
        let lam = &nt.lambda;

        let direction = |rc: &Mat<C64>, rc_s: &[f64]| -> Direction {
            let e = Mat::from_fn(n, n, |i, j| rc[(i, j)] / ((lam[i] + lam[j]) * 0.5));
            let rer = mul_adj(&mul(&nt.r, &e), &nt.r);
            let (wes, es) = match &sc {
                Some(sc) => {
                    let es = soc::jordan_div(&sc.lambda, rc_s);
                    (matvec(&sc.w, &es), es)
                }
                None => (Vec::new(), Vec::new()),
            };
            let _ = es;
            let t1 = data.op(&rer, &wes);
            let t2 = data.op(&wrdw, &w2rd_s);
            let mut rhs = Mat::<f64>::from_fn(m, 1, |i, _| rp[i] - t1[i] + t2[i]);
            use faer::linalg::solvers::Solve;
            chol.solve_in_place(&mut rhs);
            let dy: Vec<f64> = (0..m).map(|i| rhs[(i, 0)]).collect();
            let (ady, ady_s) = data.op_adj(&dy);
            let mut ds = &rd - &ady;
            hermitize(&mut ds);
            let mut dx = &rer - &mul(&mul(&w, &ds), &w);
            hermitize(&mut dx);
            let (dxs, dss) = match &sc {
                Some(sc) => {
                    let dss: Vec<f64> = (0..data.soc_dim).map(|i| rd_s[i] - ady_s[i]).collect();
                    let w2ds = matvec(&sc.w2, &dss);
                    let dxs = wes.iter().zip(&w2ds).map(|(a, b)| a - b).collect();
                    (dxs, dss)
                }
                None => (Vec::new(), Vec::new()),
            };
            Direction { dx, ds, dy, dxs, dss }
        };

        let scaled = |d: &Direction| -> (Mat<C64>, Mat<C64>) {
            let mut dxt = mul_adj(&mul(&nt.rinv, &d.dx), &nt.rinv);
            let mut dst = mul(&adj_mul(&nt.r, &d.ds), &nt.r);
            hermitize(&mut dxt);
            hermitize(&mut dst);
            (dxt, dst)
        };
        let steps = |d: &Direction, dxt: &Mat<C64>, dst: &Mat<C64>| -> Result<(f64, f64)> {
            let mut ap = psd_step(lam, dxt)?;
            let mut ad = psd_step(lam, dst)?;
            if has_soc {
                ap = ap.min(soc::max_step(&xs, &d.dxs));
                ad = ad.min(soc::max_step(&ss, &d.dss));
            }
            Ok((ap, ad))
        };

        // Predictor.
        let rc_aff = Mat::from_fn(n, n, |i, j| if i == j { C64::new(-lam[i] * lam[i], 0.0) } else { ZERO });
        let rc_aff_s = sc.as_ref().map(|sc| soc::jordan(&sc.lambda, &sc.lambda).iter().map(|v| -v).collect::<Vec<_>>()).unwrap_or_default();
        let aff = direction(&rc_aff, &rc_aff_s);
        let (dxt_a, dst_a) = scaled(&aff);
        let (ap, ad) = steps(&aff, &dxt_a, &dst_a)?;
        let (ap, ad) = (ap.min(1.0), ad.min(1.0));
        let x_aff = &x + &aff.dx * ap;
        let s_aff = &s + &aff.ds * ad;
        let soc_aff: f64 = (0..data.soc_dim).map(|i| (xs[i] + ap * aff.dxs[i]) * (ss[i] + ad * aff.dss[i])).sum();
        let mu_aff = (re_inner(&x_aff, &s_aff) + soc_aff) / nu;
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);

        // Corrector.
        let cross = {
            let p = mul(&dxt_a, &dst_a);
            let mut c = Mat::from_fn(n, n, |i, j| (p[(i, j)] + p[(j, i)].conj()) * 0.5);
            hermitize(&mut c);
            c
        };
        let rc = Mat::from_fn(n, n, |i, j| {
            let base = if i == j { C64::new(sigma * mu - lam[i] * lam[i], 0.0) } else { ZERO };
            base - cross[(i, j)]
        });
        let rc_s = match &sc {
            Some(sc) => {
                let ll = soc::jordan(&sc.lambda, &sc.lambda);
                let cs = soc::jordan(&matvec(&sc.winv, &aff.dxs), &matvec(&sc.w, &aff.dss));
                (0..data.soc_dim).map(|i| if i == 0 { sigma * mu } else { 0.0 } - ll[i] - cs[i]).collect()
            }
            None => Vec::new(),
        };
        let dir = direction(&rc, &rc_s);
        let (dxt, dst) = scaled(&dir);
        let (ap, ad) = steps(&dir, &dxt, &dst)?;
        let (ap, ad) = ((STEP_FRACTION * ap).min(1.0), (STEP_FRACTION * ad).min(1.0));

        x = &x + &dir.dx * ap;
        s = &s + &dir.ds * ad;
        hermitize(&mut x);
        hermitize(&mut s);
        y.iter_mut().zip(&dir.dy).for_each(|(a, b)| *a += ad * b);
        xs.iter_mut().zip(&dir.dxs).for_each(|(a, b)| *a += ap * b);
        ss.iter_mut().zip(&dir.dss).for_each(|(a, b)| *a += ad * b);
    }

    let nq = problem.nq();
    let q = q_from_block(problem, |c| &x.col_as_slice(c)[nq..nq + problem.t()]);
    let q_matrix = Mat::from_fn(nq, nq, |i, j| x[(i, j)]);
    Ok(finish(problem, q, q_matrix, status, kkt, iters, SolverPath::Ipm))
}

#[cfg(test)]
mod tests {
    use super::soc;
    use super::*;

    #[test]
    fn householder_basis_is_orthonormal_complement() {
        let v = vec![C64::new(0.3, -0.2), C64::new(1.0, 0.5), C64::new(0.0, -0.7)];
        let basis = householder_complement(&v);
        assert_eq!(basis.len(), 2);
        for (i, a) in basis.iter().enumerate() {
            let dv: C64 = a.iter().zip(&v).map(|(x, y)| x.conj() * y).sum();
            assert!(dv.norm() < 1e-14);
            for (j, b) in basis.iter().enumerate() {
                let d: C64 = a.iter().zip(b).map(|(x, y)| x.conj() * y).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((d - C64::new(want, 0.0)).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn soc_scaling_identity() {
        let x = [2.0, 0.5, -0.3];
        let s = [1.5, -0.2, 0.9];
        let sc = soc_scaling(&x, &s);
        let winv_x = matvec(&sc.winv, &x);
        for (a, b) in winv_x.iter().zip(&sc.lambda) {
            assert!((a - b).abs() < 1e-12);
        }
        let r = [0.3, 0.1, -0.4];
        let u = soc::jordan_div(&sc.lambda, &r);
        for (a, b) in soc::jordan(&sc.lambda, &u).iter().zip(&r) {
            assert!((a - b).abs() < 1e-12);
        }
        let t = soc::max_step(&[1.0, 0.0], &[-1.0, 0.0]);
        assert!((t - 1.0).abs() < 1e-12);
    }

    #[test]
    fn nt_scaling_diagonalizes() {
        let n = 4;
        let a = Mat::from_fn(n, n, |i, j| C64::new((i + 2 * j) as f64 * 0.1, (i as f64 - j as f64) * 0.05));
        let x = &mul_adj(&a, &a) + &Mat::<C64>::identity(n, n);
        let b = Mat::from_fn(n, n, |i, j| C64::new(((i * j) % 3) as f64 * 0.2, 0.1 * i as f64));
        let s = &mul_adj(&b, &b) + &(Mat::<C64>::identity(n, n) * 0.5);
        let nt = nt_scaling(&x, &s).unwrap();
        let xt = mul_adj(&mul(&nt.rinv, &x), &nt.rinv);
        let st = mul(&adj_mul(&nt.r, &s), &nt.r);
        for i in 0..n {
            for j in 0..n {
                let want = if i == j { nt.lambda[i] } else { 0.0 };
                assert!((xt[(i, j)] - C64::new(want, 0.0)).norm() < 1e-10);
                assert!((st[(i, j)] - C64::new(want, 0.0)).norm() < 1e-10);
            }
        }
    }
}
