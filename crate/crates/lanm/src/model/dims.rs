use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// A physical parameter dimension. The declaration order is the
/// Kronecker order of the steering vector, outermost first.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DimKind {
    /// Angle of arrival, indexed by receive antenna `r`.
    Aoa,
    /// Angle of departure, indexed by transmit antenna `s`.
    Aod,
    /// Delay, indexed by frequency bin `j`.
    Delay,
    /// Doppler, indexed by pulse `p`.
    Doppler,
}

impl DimKind {
    pub const ALL: [DimKind; 4] = [DimKind::Aoa, DimKind::Aod, DimKind::Delay, DimKind::Doppler];

    pub fn name(self) -> &'static str {
        match self {
            DimKind::Aoa => "aoa",
            DimKind::Aod => "aod",
            DimKind::Delay => "delay",
            DimKind::Doppler => "doppler",
        }
    }

    /// Delay and Doppler use the symmetric range `{-N, ..., N}`.
    pub fn is_symmetric(self) -> bool {
        matches!(self, DimKind::Delay | DimKind::Doppler)
    }

    /// Sign of the steering exponent, `a_n(t) = exp(sign * i 2 pi n t)`.
    pub fn sign(self) -> f64 {
        match self {
            DimKind::Delay => 1.0,
            _ => -1.0,
        }
    }
}

impl fmt::Display for DimKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DimKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "aoa" => Ok(DimKind::Aoa),
            "aod" => Ok(DimKind::Aod),
            "delay" => Ok(DimKind::Delay),
            "doppler" => Ok(DimKind::Doppler),
            other => Err(Error::InvalidSpec(format!("unknown dimension `{other}`"))),
        }
    }
}

/// One active dimension and its number of atom indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dim {
    #[serde(rename = "name")]
    pub kind: DimKind,
    pub size: usize,
}

impl Dim {
    pub fn new(kind: DimKind, size: usize) -> Self {
        Dim { kind, size }
    }

    /// First index of the range: `-N` for symmetric dimensions, else 0.
    pub fn first_index(&self) -> i64 {
        if self.kind.is_symmetric() {
            -((self.size as i64 - 1) / 2)
        } else {
            0
        }
    }

    /// Physical index of position `i` in `0..size`.
    pub fn index(&self, i: usize) -> i64 {
        self.first_index() + i as i64
    }
}

/// The active dimensions of a scene, kept in canonical Kronecker order.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "DimsRepr", into = "Vec<Dim>")]
pub struct DimensionSpec {
    dims: Vec<Dim>,
}

/// Accepted JSON forms: a list of `{name, size}` or a `delay:15,doppler:15` string.
#[derive(Deserialize)]
#[serde(untagged)]
enum DimsRepr {
    Text(String),
    List(Vec<Dim>),
}

impl TryFrom<DimsRepr> for DimensionSpec {
    type Error = Error;
    fn try_from(r: DimsRepr) -> Result<Self> {
        match r {
            DimsRepr::Text(s) => DimensionSpec::parse(&s),
            DimsRepr::List(d) => DimensionSpec::new(d),
        }
    }
}

impl DimensionSpec {
    /// Validates and sorts the dimensions into canonical order.
    pub fn new(mut dims: Vec<Dim>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::InvalidSpec("at least one dimension is required".into()));
        }
        dims.sort_by_key(|d| d.kind);
        for w in dims.windows(2) {
            if w[0].kind == w[1].kind {
                return Err(Error::InvalidSpec(format!("dimension `{}` repeated", w[0].kind)));
            }
        }
        for d in &dims {
            if d.size < 2 {
                return Err(Error::InvalidSpec(format!("`{}` needs size >= 2", d.kind)));
            }
            if d.kind.is_symmetric() && d.size % 2 == 0 {
                return Err(Error::InvalidSpec(format!(
                    "`{}` uses the range -N..=N and needs an odd size, got {}",
                    d.kind, d.size
                )));
            }
        }
        Ok(DimensionSpec { dims })
    }

    /// Single-dimension shorthand.
    pub fn single(kind: DimKind, size: usize) -> Result<Self> {
        Self::new(vec![Dim::new(kind, size)])
    }

    /// Parses `delay:65` or `delay:15,doppler:15` (also `x` as separator).
    pub fn parse(s: &str) -> Result<Self> {
        let dims = s
            .split([',', 'x', ' '])
            .filter(|p| !p.is_empty())
            .map(|part| {
                let (name, size) = part
                    .split_once(':')
                    .ok_or_else(|| Error::InvalidSpec(format!("expected name:size, got `{part}`")))?;
                let size = size
                    .parse::<usize>()
                    .map_err(|_| Error::InvalidSpec(format!("bad size in `{part}`")))?;
                Ok(Dim::new(name.parse()?, size))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(dims)
    }

    pub fn dims(&self) -> &[Dim] {
        &self.dims
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    /// Atom length, the product of all sizes.
    pub fn m(&self) -> usize {
        self.dims.iter().map(|d| d.size).product()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.dims.iter().map(|d| d.size).collect()
    }

    pub fn position(&self, kind: DimKind) -> Option<usize> {
        self.dims.iter().position(|d| d.kind == kind)
    }

    /// Size of `kind`, or 1 when inactive.
    pub fn size_of(&self, kind: DimKind) -> usize {
        self.position(kind).map_or(1, |i| self.dims[i].size)
    }

    pub fn has(&self, kind: DimKind) -> bool {
        self.position(kind).is_some()
    }

    /// Minimum pairwise separation required of well-separated scenes.
    pub fn separation(&self) -> f64 {
        10.0 / (self.m() as f64 - 1.0)
    }

    /// Splits a flat column index into per-dimension positions.
    pub fn unflatten(&self, mut c: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dims.len()];
        for (slot, d) in idx.iter_mut().zip(&self.dims).rev() {
            *slot = c % d.size;
            c /= d.size;
        }
        idx
    }

    pub fn flatten(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.dims).fold(0, |acc, (&i, d)| acc * d.size + i)
    }

    /// Rows of the dictionary consumed by the measurement ensemble:
    /// one per transmit antenna, pulse and frequency bin.
    pub fn dictionary_rows(&self) -> usize {
        self.size_of(DimKind::Aod) * self.size_of(DimKind::Doppler) * self.size_of(DimKind::Delay)
    }

    /// Number of observations: receive antennas x pulses x frequency bins.
    pub fn observations(&self) -> usize {
        self.size_of(DimKind::Aoa) * self.size_of(DimKind::Doppler) * self.size_of(DimKind::Delay)
    }

    /// Compact label such as `delay:15xdoppler:15`.
    pub fn label(&self) -> String {
        self.dims
            .iter()
            .map(|d| format!("{}:{}", d.kind, d.size))
            .collect::<Vec<_>>()
            .join("x")
    }
}

impl TryFrom<Vec<Dim>> for DimensionSpec {
    type Error = Error;
    fn try_from(dims: Vec<Dim>) -> Result<Self> {
        Self::new(dims)
    }
}

impl From<DimensionSpec> for Vec<Dim> {
    fn from(spec: DimensionSpec) -> Self {
        spec.dims
    }
}

impl FromStr for DimensionSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        DimensionSpec::parse(s)
    }
}

impl fmt::Display for DimensionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_order_and_counts() {
        let s = DimensionSpec::parse("doppler:5,aoa:3,delay:5,aod:3").unwrap();
        let kinds: Vec<_> = s.dims().iter().map(|d| d.kind).collect();
        assert_eq!(kinds, DimKind::ALL);
        assert_eq!(s.m(), 225);
        assert_eq!(s.dictionary_rows(), 75);
        assert_eq!(s.observations(), 75);
        assert_eq!(s.label(), "aoa:3xaod:3xdelay:5xdoppler:5");
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(DimensionSpec::new(vec![]).is_err());
        assert!(DimensionSpec::single(DimKind::Delay, 4).is_err());
        assert!(DimensionSpec::single(DimKind::Aoa, 1).is_err());
        assert!(DimensionSpec::parse("delay:5,delay:7").is_err());
        assert!(DimensionSpec::parse("range:5").is_err());
    }

    #[test]
    fn index_ranges() {
        let d = Dim::new(DimKind::Delay, 5);
        assert_eq!((d.index(0), d.index(4)), (-2, 2));
        let a = Dim::new(DimKind::Aoa, 4);
        assert_eq!((a.index(0), a.index(3)), (0, 3));
    }

    #[test]
    fn flatten_roundtrip() {
        let s = DimensionSpec::parse("aoa:2,delay:3,doppler:5").unwrap();
        for c in 0..s.m() {
            assert_eq!(s.flatten(&s.unflatten(c)), c);
        }
        assert_eq!(s.unflatten(1), vec![0, 0, 1]);
    }

    #[test]
    fn serde_shape() {
        let s: DimensionSpec =
            serde_json::from_str(r#"[{"name":"doppler","size":5},{"name":"delay","size":3}]"#).unwrap();
        assert_eq!(s.label(), "delay:3xdoppler:5");
        assert!(serde_json::from_str::<DimensionSpec>(r#"[{"name":"delay","size":4}]"#).is_err());
    }
}
