//! QAM symbol streams: the unit-norm message vectors `h_k`, their
//! modulation through the dictionary and the pilot-aided demapper.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64 as C64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dictionary::Dictionary;
use crate::error::{Error, Result};
use crate::model::{DimKind, DimensionSpec, TransmitSignal};
use crate::rng;

/// Position of the known reference symbol in every stream.
pub const PILOT_INDEX: usize = 0;

/// Square QAM constellation size.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub enum QamOrder {
    Q4,
    Q16,
    Q64,
}

impl QamOrder {
    pub fn points(self) -> u32 {
        match self {
            QamOrder::Q4 => 4,
            QamOrder::Q16 => 16,
            QamOrder::Q64 => 64,
        }
    }

    fn side(self) -> usize {
        match self {
            QamOrder::Q4 => 2,
            QamOrder::Q16 => 4,
            QamOrder::Q64 => 8,
        }
    }

    fn scale(self) -> f64 {
        // Average energy of the odd-integer grid is 2 (side^2 - 1) / 3.
        let s = self.side() as f64;
        (2.0 * (s * s - 1.0) / 3.0).sqrt()
    }

    /// Unit average-energy constellation, row-major over the odd-integer grid.
    pub fn constellation(self) -> Vec<C64> {
        let side = self.side();
        let level = |i: usize| (2 * i) as f64 - (side as f64 - 1.0);
        let scale = self.scale();
        (0..side * side).map(|n| C64::new(level(n % side), level(n / side)) / scale).collect()
    }

    /// The pilot symbol: the corner point with both coordinates maximal.
    pub fn reference(self) -> C64 {
        let c = (self.side() as f64 - 1.0) / self.scale();
        C64::new(c, c)
    }

    /// Smallest distance between two constellation points.
    pub fn min_distance(self) -> f64 {
        2.0 / self.scale()
    }
}

impl TryFrom<u32> for QamOrder {
    type Error = Error;
    fn try_from(n: u32) -> Result<Self> {
        match n {
            4 => Ok(QamOrder::Q4),
            16 => Ok(QamOrder::Q16),
            64 => Ok(QamOrder::Q64),
            other => Err(Error::UnsupportedOrder(other)),
        }
    }
}

impl From<QamOrder> for u32 {
    fn from(q: QamOrder) -> u32 {
        q.points()
    }
}

impl FromStr for QamOrder {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let n: u32 = s.trim().parse().map_err(|_| Error::InvalidArgument(format!("bad QAM order `{s}`")))?;
        n.try_into()
    }
}

impl fmt::Display for QamOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.points())
    }
}

/// A symbol stream: raw constellation points and the normalized vector `h`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymbolStream {
    pub order: QamOrder,
    pub raw: Vec<C64>,
    pub h: Vec<C64>,
    pub pilot_index: usize,
}

impl SymbolStream {
    /// Indices of the raw symbols in the constellation.
    pub fn indices(&self) -> Vec<usize> {
        nearest_indices(&self.raw, self.order)
    }
}

fn nearest_indices(points: &[C64], order: QamOrder) -> Vec<usize> {
    let cons = order.constellation();
    points
        .iter()
        .map(|z| {
            let mut best = (f64::INFINITY, 0);
            for (i, c) in cons.iter().enumerate() {
                let d = (z - c).norm_sqr();
                if d < best.0 {
                    best = (d, i);
                }
            }
            best.1
        })
        .collect()
}

/// Draws `t` uniform symbols, places the pilot at index 0 and normalizes.
///
/// A length-1 stream carries only the pilot.
pub fn encode(order: QamOrder, t: usize, seed: u64) -> Result<SymbolStream> {
    if t == 0 {
        return Err(Error::InvalidArgument("stream length must be positive".into()));
    }
    let cons = order.constellation();
    let mut r = rng::stream(seed, "symbols");
    let mut raw: Vec<C64> = (0..t).map(|_| cons[r.gen_range(0..cons.len())]).collect();
    raw[PILOT_INDEX] = order.reference();
    let norm = raw.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let h = raw.iter().map(|z| z / norm).collect();
    Ok(SymbolStream { order, raw, h, pilot_index: PILOT_INDEX })
}

/// A stream from constellation indices. Index `PILOT_INDEX` must be the
/// reference point.
pub fn stream_from_indices(order: QamOrder, indices: &[usize]) -> Result<SymbolStream> {
    if indices.is_empty() {
        return Err(Error::InvalidArgument("stream length must be positive".into()));
    }
    let n = order.points() as usize;
    if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
        return Err(Error::InvalidArgument(format!("symbol index {bad} out of range for {n}-QAM")));
    }
    let raw = symbols_of(indices, order);
    if raw[PILOT_INDEX] != order.reference() {
        return Err(Error::InvalidArgument(format!(
            "symbol {PILOT_INDEX} must be the pilot (index {})",
            nearest_indices(&[order.reference()], order)[0]
        )));
    }
    let norm = raw.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let h = raw.iter().map(|z| z / norm).collect();
    Ok(SymbolStream { order, raw, h, pilot_index: PILOT_INDEX })
}

/// Maps an estimate of `h` (up to complex scale) to constellation indices.
///
/// The pilot entry fixes both the phase and the scale. If it vanished, the
/// scale falls back to the average symbol energy and no de-rotation is done.
///
/// ```
/// use lanm::waveform::{demap, encode, QamOrder};
/// use num_complex::Complex64;
/// let s = encode(QamOrder::Q16, 6, 3).unwrap();
/// let rotated: Vec<_> = s.h.iter().map(|z| z * Complex64::from_polar(0.2, 1.3)).collect();
/// assert_eq!(demap(&rotated, QamOrder::Q16, s.pilot_index).unwrap(), s.indices());
/// ```
pub fn demap(h_est: &[C64], order: QamOrder, pilot_index: usize) -> Result<Vec<usize>> {
    let norm = h_est.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::ZeroVector);
    }
    if pilot_index >= h_est.len() {
        return Err(Error::InvalidArgument(format!("pilot index {pilot_index} out of range")));
    }
    let pilot = h_est[pilot_index];
    let g = if pilot.norm() > 1e-12 * norm {
        order.reference() / pilot
    } else {
        C64::new((h_est.len() as f64).sqrt() / norm, 0.0)
    };
    let scaled: Vec<C64> = h_est.iter().map(|z| z * g).collect();
    Ok(nearest_indices(&scaled, order))
}

/// Symbol values for constellation indices.
pub fn symbols_of(indices: &[usize], order: QamOrder) -> Vec<C64> {
    let cons = order.constellation();
    indices.iter().map(|&i| cons[i]).collect()
}

/// Transmit samples of a symbol vector.
///
/// Row `(s, p, j)` of the dictionary gives the spectrum of the pulse sent
/// from antenna `s` in slot `p` at frequency bin `j`; the pulse is its
/// inverse transform over the bins `-N..=N`.
pub fn modulate(dict: &Dictionary, spec: &DimensionSpec, h: &[C64]) -> Result<TransmitSignal> {
    if h.len() != dict.t() {
        return Err(Error::DimensionMismatch { expected: dict.t(), got: h.len() });
    }
    if dict.rows() != spec.dictionary_rows() {
        return Err(Error::Shape(format!(
            "dictionary has {} rows, {} needs {}",
            dict.rows(),
            spec.label(),
            spec.dictionary_rows()
        )));
    }
    let spectrum = dict.apply(h);
    let nl = spec.size_of(DimKind::Delay);
    let half = (nl as i64 - 1) / 2;
    let mut samples = Vec::with_capacity(spectrum.len());
    for pulse in spectrum.chunks(nl) {
        for l in 0..nl {
            let x: C64 = pulse
                .iter()
                .enumerate()
                .map(|(j, xh)| xh * C64::from_polar(1.0, 2.0 * PI * (j as i64 - half) as f64 * l as f64 / nl as f64))
                .sum();
            samples.push(x);
        }
    }
    Ok(TransmitSignal { samples })
}
