use faer::Mat;
use num_complex::Complex64 as C64;

use super::dims::{DimKind, DimensionSpec};
use super::scene::LiftedMatrix;
use crate::dictionary::Dictionary;
use crate::error::{Error, Result};

/// The linear map `X: U -> y` with `y_m = trace(M_m^H U)`.
///
/// Each `M_m` is stored sparsely as the columns it touches: one column per
/// transmit antenna, each holding a conjugated dictionary row. Observation
/// supports are disjoint and cover every column, so `X X^*` is diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementEnsemble {
    spec: DimensionSpec,
    t: usize,
    offsets: Vec<usize>,
    cols: Vec<usize>,
    vecs: Vec<C64>,
    weights: Vec<f64>,
}

/// Builds the ensemble of a dimension spec from a dictionary.
///
/// Observation `(r, p, j)` (receive antenna, pulse, frequency bin) reads
/// columns `(r, s, j, p)` for every transmit antenna `s`, weighted by
/// dictionary row `(s, p, j)`.
pub fn build_measurement_ensemble(spec: &DimensionSpec, dict: &Dictionary) -> Result<MeasurementEnsemble> {
    if !spec.has(DimKind::Delay) && !spec.has(DimKind::Doppler) {
        return Err(Error::InvalidSpec(
            "the measurement model needs an active delay or doppler dimension".into(),
        ));
    }
    let rows = spec.dictionary_rows();
    if dict.rows() != rows {
        return Err(Error::Shape(format!(
            "dictionary has {} rows, the {} model needs {rows}",
            dict.rows(),
            spec.label()
        )));
    }
    let t = dict.t();
    let (nr, nt) = (spec.size_of(DimKind::Aoa), spec.size_of(DimKind::Aod));
    let (nl, np) = (spec.size_of(DimKind::Delay), spec.size_of(DimKind::Doppler));
    let l_obs = spec.observations();
    let mut offsets = Vec::with_capacity(l_obs + 1);
    let mut cols = Vec::with_capacity(l_obs * nt);
    let mut vecs = Vec::with_capacity(l_obs * nt * t);
    let mut weights = Vec::with_capacity(l_obs);
    offsets.push(0);
    for r in 0..nr {
        for p in 0..np {
            for j in 0..nl {
                let mut w = 0.0;
                for s in 0..nt {
                    cols.push(((r * nt + s) * nl + j) * np + p);
                    let row = (s * np + p) * nl + j;
                    for i in 0..t {
                        let v = dict.matrix()[(row, i)].conj();
                        w += v.norm_sqr();
                        vecs.push(v);
                    }
                }
                weights.push(w);
                offsets.push(cols.len());
            }
        }
    }
    Ok(MeasurementEnsemble { spec: spec.clone(), t, offsets, cols, vecs, weights })
}

impl MeasurementEnsemble {
    pub fn spec(&self) -> &DimensionSpec {
        &self.spec
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn m(&self) -> usize {
        self.spec.m()
    }

    /// Number of observations `L_obs`.
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// `w_m = ||M_m||_F^2`, the diagonal of `X X^*`.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// The columns touched by observation `m` and their `T`-vectors.
    pub fn observation(&self, m: usize) -> impl Iterator<Item = (usize, &[C64])> + '_ {
        let t = self.t;
        (self.offsets[m]..self.offsets[m + 1]).map(move |e| (self.cols[e], &self.vecs[e * t..(e + 1) * t]))
    }

    /// Explicit `T x M` realization of `M_m`.
    pub fn matrix(&self, m: usize) -> Mat<C64> {
        let mut out = Mat::zeros(self.t, self.m());
        for (c, v) in self.observation(m) {
            for (i, x) in v.iter().enumerate() {
                out[(i, c)] = *x;
            }
        }
        out
    }

    /// `y_m = sum_c <M_m[:, c], col(c)>` for an arbitrary column accessor.
    pub fn forward_by<'a>(&self, col: impl Fn(usize) -> &'a [C64]) -> Vec<C64> {
        (0..self.len())
            .map(|m| {
                self.observation(m)
                    .map(|(c, v)| v.iter().zip(col(c)).map(|(a, b)| a.conj() * b).sum::<C64>())
                    .sum()
            })
            .collect()
    }

    /// `X(U)`.
    pub fn forward(&self, u: &LiftedMatrix) -> Result<Vec<C64>> {
        if u.t() != self.t || u.m() != self.m() {
            return Err(Error::Shape(format!(
                "lifted matrix is {}x{}, ensemble expects {}x{}",
                u.t(),
                u.m(),
                self.t,
                self.m()
            )));
        }
        Ok(self.forward_by(|c| u.0.col_as_slice(c)))
    }

    /// `X^*(q) = sum_m q_m M_m`.
    pub fn adjoint(&self, q: &[C64]) -> Result<LiftedMatrix> {
        if q.len() != self.len() {
            return Err(Error::DimensionMismatch { expected: self.len(), got: q.len() });
        }
        let mut out = LiftedMatrix::zeros(self.t, self.m());
        for (m, qm) in q.iter().enumerate() {
            for (c, v) in self.observation(m) {
                for (f, x) in out.0.col_as_slice_mut(c).iter_mut().zip(v) {
                    *f = qm * x;
                }
            }
        }
        Ok(out)
    }

    /// `|<X(U), q> - <U, X^*(q)>| / (||U||_F ||q||)`, zero for a zero pair.
    pub fn adjoint_mismatch(&self, u: &LiftedMatrix, q: &[C64]) -> Result<f64> {
        let lhs = inner(&self.forward(u)?, q);
        let f = self.adjoint(q)?;
        let rhs: C64 = (0..self.m()).map(|c| inner(u.0.col_as_slice(c), f.0.col_as_slice(c))).sum();
        let scale = u.frobenius() * q.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        Ok(if scale > 0.0 { (lhs - rhs).norm() / scale } else { 0.0 })
    }

    /// Coefficients of `g a(tau)^H` in every observation, as a map `g -> y`.
    ///
    /// Row `m` of the returned `L_obs x T` matrix dotted with `g` gives the
    /// contribution of the atom to `y_m`.
    pub fn atom_design(&self, a: &[C64]) -> Mat<C64> {
        let mut out = Mat::zeros(self.len(), self.t);
        for m in 0..self.len() {
            for (c, v) in self.observation(m) {
                let ac = a[c].conj();
                for (i, x) in v.iter().enumerate() {
                    out[(m, i)] += x.conj() * ac;
                }
            }
        }
        out
    }
}

/// Complex inner product `a^H b`.
pub fn inner(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictionary::{gen_dictionary, DictionaryKind};
    use crate::model::steering_vector;

    fn ens(spec: &str, t: usize, kind: DictionaryKind) -> MeasurementEnsemble {
        let spec = DimensionSpec::parse(spec).unwrap();
        let d = gen_dictionary(kind, spec.dictionary_rows(), t, 3).unwrap();
        build_measurement_ensemble(&spec, &d).unwrap()
    }

    #[test]
    fn supports_are_disjoint_and_cover() {
        let e = ens("aoa:2,aod:3,delay:5,doppler:3", 2, DictionaryKind::Gaussian);
        let mut seen = vec![0; e.m()];
        for m in 0..e.len() {
            for (c, _) in e.observation(m) {
                seen[c] += 1;
            }
        }
        assert!(seen.iter().all(|&n| n == 1));
        assert_eq!(e.len(), 2 * 5 * 3);
    }

    #[test]
    fn zero_maps_to_zero() {
        let e = ens("delay:7", 4, DictionaryKind::Hadamard);
        let y = e.forward(&LiftedMatrix::zeros(4, 7)).unwrap();
        assert!(y.iter().all(|z| z.norm() == 0.0));
        let f = e.adjoint(&vec![C64::new(0.0, 0.0); 7]).unwrap();
        assert_eq!(f.frobenius(), 0.0);
    }

    #[test]
    fn zero_shift_single_target() {
        // y_j = alpha * d_j^H h when tau = 0.
        let spec = DimensionSpec::parse("delay:9").unwrap();
        let d = gen_dictionary(DictionaryKind::Gaussian, 9, 2, 5).unwrap();
        let e = build_measurement_ensemble(&spec, &d).unwrap();
        let h = [C64::new(0.6, 0.0), C64::new(0.0, -0.8)];
        let alpha = C64::new(0.3, -1.1);
        let mut u = LiftedMatrix::zeros(2, 9);
        u.add_atom(&spec, &[0.0], &[alpha * h[0], alpha * h[1]]).unwrap();
        let y = e.forward(&u).unwrap();
        for (j, yj) in y.iter().enumerate() {
            let want = alpha * (d.matrix()[(j, 0)] * h[0] + d.matrix()[(j, 1)] * h[1]);
            assert!((yj - want).norm() < 1e-12);
        }
    }

    #[test]
    fn explicit_matrices_agree() {
        let e = ens("aoa:2,delay:3,doppler:3", 2, DictionaryKind::Dft);
        let mut u = LiftedMatrix::zeros(2, e.m());
        for c in 0..e.m() {
            u.0[(0, c)] = C64::new(c as f64, 1.0);
            u.0[(1, c)] = C64::new(-1.0, 0.5 * c as f64);
        }
        let y = e.forward(&u).unwrap();
        for (m, ym) in y.iter().enumerate() {
            let mm = e.matrix(m);
            let mut tr = C64::new(0.0, 0.0);
            for c in 0..e.m() {
                for i in 0..2 {
                    tr += mm[(i, c)].conj() * u.0[(i, c)];
                }
            }
            assert!((tr - ym).norm() < 1e-12);
        }
    }

    #[test]
    fn atom_design_matches_forward() {
        let e = ens("delay:5,doppler:3", 3, DictionaryKind::Gaussian);
        let tau = [0.21, 0.77];
        let g = [C64::new(0.1, 0.2), C64::new(-0.4, 0.0), C64::new(0.0, 0.9)];
        let mut u = LiftedMatrix::zeros(3, e.m());
        u.add_atom(e.spec(), &tau, &g).unwrap();
        let y = e.forward(&u).unwrap();
        let a = steering_vector(e.spec(), &tau).unwrap();
        let phi = e.atom_design(&a);
        for (m, ym) in y.iter().enumerate() {
            let z: C64 = (0..3).map(|i| phi[(m, i)] * g[i]).sum();
            assert!((z - ym).norm() < 1e-12);
        }
    }

    #[test]
    fn rejects_mismatch() {
        let spec = DimensionSpec::parse("delay:5").unwrap();
        let d = gen_dictionary(DictionaryKind::Gaussian, 7, 2, 1).unwrap();
        assert!(build_measurement_ensemble(&spec, &d).is_err());
        let aoa = DimensionSpec::parse("aoa:4").unwrap();
        let d = gen_dictionary(DictionaryKind::Gaussian, 1, 2, 1).unwrap();
        assert!(build_measurement_ensemble(&aoa, &d).is_err());
    }
}
