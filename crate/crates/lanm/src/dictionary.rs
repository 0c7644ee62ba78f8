//! Random compression matrices and their coherence diagnostics.
//!
//! Row `l` of the `L x T` matrix `D` turns a symbol vector into one
//! transmitted coefficient, `x_l = D[l, :] h = d_l^H h`. Every kind is
//! scaled so that `E[d d^H] = I_T`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use faer::{Mat, Side};
use num_complex::Complex64 as C64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DictionaryKind {
    #[serde(rename = "gaussian")]
    Gaussian,
    #[serde(rename = "hadamard-subsampled", alias = "hadamard")]
    Hadamard,
    #[serde(rename = "dft-subsampled", alias = "dft")]
    Dft,
    #[serde(rename = "continuous-fourier", alias = "fourier")]
    Fourier,
}

impl DictionaryKind {
    pub const ALL: [DictionaryKind; 4] =
        [DictionaryKind::Gaussian, DictionaryKind::Hadamard, DictionaryKind::Dft, DictionaryKind::Fourier];

    /// Short name used on the command line and in CSV files.
    pub fn short(self) -> &'static str {
        match self {
            DictionaryKind::Gaussian => "gaussian",
            DictionaryKind::Hadamard => "hadamard",
            DictionaryKind::Dft => "dft",
            DictionaryKind::Fourier => "fourier",
        }
    }

    /// Kinds built by sampling rows of a fixed `T x T` matrix.
    pub fn is_subsampled(self) -> bool {
        matches!(self, DictionaryKind::Hadamard | DictionaryKind::Dft)
    }
}

impl fmt::Display for DictionaryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short())
    }
}

impl FromStr for DictionaryKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gaussian" => Ok(DictionaryKind::Gaussian),
            "hadamard" | "hadamard-subsampled" => Ok(DictionaryKind::Hadamard),
            "dft" | "dft-subsampled" => Ok(DictionaryKind::Dft),
            "fourier" | "continuous-fourier" => Ok(DictionaryKind::Fourier),
            other => Err(Error::Dictionary(format!("unknown dictionary kind `{other}`"))),
        }
    }
}

/// A compression matrix with its kind, coherence and generating seed.
#[derive(Clone, Debug, PartialEq)]
pub struct Dictionary {
    kind: DictionaryKind,
    matrix: Mat<C64>,
    mu: f64,
    seed: u64,
}

impl Dictionary {
    /// Wraps an explicit matrix; `mu` is computed from `kind`.
    pub fn from_matrix(kind: DictionaryKind, matrix: Mat<C64>, seed: u64) -> Self {
        let mu = coherence_of(kind, &matrix);
        Dictionary { kind, matrix, mu, seed }
    }

    pub fn kind(&self) -> DictionaryKind {
        self.kind
    }

    pub fn matrix(&self) -> &Mat<C64> {
        &self.matrix
    }

    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn t(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// `D h`, one coefficient per row.
    pub fn apply(&self, h: &[C64]) -> Vec<C64> {
        (0..self.rows()).map(|l| (0..self.t()).map(|i| self.matrix[(l, i)] * h[i]).sum()).collect()
    }
}

fn sylvester(t: usize) -> Vec<Vec<f64>> {
    let mut h = vec![vec![1.0]];
    while h.len() < t {
        let n = h.len();
        let mut next = vec![vec![0.0; 2 * n]; 2 * n];
        for i in 0..n {
            for j in 0..n {
                next[i][j] = h[i][j];
                next[i][j + n] = h[i][j];
                next[i + n][j] = h[i][j];
                next[i + n][j + n] = -h[i][j];
            }
        }
        h = next;
    }
    h
}

/// Draws an `rows x t` dictionary of the given kind.
///
/// ```
/// use lanm::dictionary::{gen_dictionary, DictionaryKind};
/// let d = gen_dictionary(DictionaryKind::Hadamard, 33, 8, 1).unwrap();
/// assert_eq!(d.mu(), 1.0);
/// ```
pub fn gen_dictionary(kind: DictionaryKind, rows: usize, t: usize, seed: u64) -> Result<Dictionary> {
    if t == 0 || rows == 0 {
        return Err(Error::Dictionary("dictionary sizes must be positive".into()));
    }
    if kind.is_subsampled() && t > rows {
        return Err(Error::Dictionary(format!("{kind} needs T <= rows, got T={t}, rows={rows}")));
    }
    if kind == DictionaryKind::Hadamard && !t.is_power_of_two() {
        return Err(Error::Dictionary(format!("hadamard needs T a power of two, got {t}")));
    }
    let mut rng = rng::stream(seed, kind.short());
    let matrix = match kind {
        DictionaryKind::Gaussian => Mat::from_fn(rows, t, |_, _| {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
        }),
        DictionaryKind::Hadamard => {
            let h = sylvester(t);
            let picks: Vec<usize> = (0..rows).map(|_| rng.gen_range(0..t)).collect();
            Mat::from_fn(rows, t, |l, i| C64::new(h[picks[l]][i], 0.0))
        }
        DictionaryKind::Dft => {
            let picks: Vec<usize> = (0..rows).map(|_| rng.gen_range(0..t)).collect();
            Mat::from_fn(rows, t, |l, i| {
                let k = (picks[l] * i) % t;
                C64::from_polar(1.0, -2.0 * PI * k as f64 / t as f64)
            })
        }
        DictionaryKind::Fourier => {
            let omega: Vec<f64> = (0..rows).map(|_| rng.gen::<f64>()).collect();
            Mat::from_fn(rows, t, |l, i| C64::from_polar(1.0, 2.0 * PI * omega[l] * i as f64))
        }
    };
    Ok(Dictionary::from_matrix(kind, matrix, seed))
}

/// Largest squared entry magnitude of a matrix.
pub fn empirical_coherence(matrix: &Mat<C64>) -> f64 {
    let mut mu: f64 = 0.0;
    for j in 0..matrix.ncols() {
        for z in matrix.col_as_slice(j) {
            mu = mu.max(z.norm_sqr());
        }
    }
    mu
}

fn coherence_of(kind: DictionaryKind, matrix: &Mat<C64>) -> f64 {
    match kind {
        // The analytic bound; clamped so that mu * T >= 1 also holds at T = 1.
        DictionaryKind::Gaussian => (6.0 * (matrix.ncols() as f64).ln()).max(1.0),
        _ => empirical_coherence(matrix),
    }
}

/// Coherence `mu`: the analytic bound `6 log T` for Gaussian dictionaries,
/// the largest squared entry otherwise.
pub fn coherence(d: &Dictionary) -> f64 {
    coherence_of(d.kind, &d.matrix)
}

/// Spectral distance of the empirical second moment from the identity,
/// `|| (1/L) sum_l d_l d_l^H - I ||_2`.
pub fn isotropy_deviation(d: &Dictionary) -> Result<f64> {
    let (rows, t) = (d.rows(), d.t());
    if rows < t {
        return Err(Error::Dictionary(format!("isotropy needs rows >= T, got {rows} < {t}")));
    }
    let gram = d.matrix.adjoint() * &d.matrix;
    let m = Mat::from_fn(t, t, |i, j| gram[(i, j)] / rows as f64 - if i == j { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) });
    let eig = m
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::Numerical(format!("eigenvalues: {e:?}")))?;
    Ok(eig.iter().fold(0.0f64, |acc, x| acc.max(x.abs())))
}

/// JSON form: header plus the matrix as row-major `[re, im]` pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DictionaryFile {
    pub kind: DictionaryKind,
    pub rows: usize,
    pub t: usize,
    pub seed: u64,
    pub matrix: Vec<Vec<C64>>,
}

impl From<&Dictionary> for DictionaryFile {
    fn from(d: &Dictionary) -> Self {
        DictionaryFile {
            kind: d.kind,
            rows: d.rows(),
            t: d.t(),
            seed: d.seed,
            matrix: (0..d.rows()).map(|l| (0..d.t()).map(|i| d.matrix[(l, i)]).collect()).collect(),
        }
    }
}

impl TryFrom<DictionaryFile> for Dictionary {
    type Error = Error;

    fn try_from(f: DictionaryFile) -> Result<Self> {
        if f.matrix.len() != f.rows || f.matrix.iter().any(|r| r.len() != f.t) {
            return Err(Error::Shape(format!("dictionary file does not match its {}x{} header", f.rows, f.t)));
        }
        let m = Mat::from_fn(f.rows, f.t, |l, i| f.matrix[l][i]);
        Ok(Dictionary::from_matrix(f.kind, m, f.seed))
    }
}
