use crate::error::{Error, Result};
use crate::model::DimensionSpec;

/// One multilevel Toeplitz trace constraint: the entries of `Q` on the
/// multilevel diagonal `offset` sum to `target`.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceConstraint {
    pub offset: Vec<i64>,
    /// `(row, col)` pairs with `multi(row) - multi(col) = offset`.
    pub entries: Vec<(usize, usize)>,
    pub target: f64,
}

/// Offset classes of an `n x n` matrix over a multilevel grid.
#[derive(Clone, Debug)]
pub(crate) struct ToeplitzClasses {
    pub grid: Vec<usize>,
    pub n: usize,
    /// Class id of entry `(a, b)` at `a + b * n`.
    pub class_of: Vec<u32>,
    pub counts: Vec<usize>,
    pub zero_class: u32,
}

fn unflatten(grid: &[usize], mut c: usize) -> Vec<usize> {
    let mut idx = vec![0; grid.len()];
    for (slot, g) in idx.iter_mut().zip(grid).rev() {
        *slot = c % g;
        c /= g;
    }
    idx
}

impl ToeplitzClasses {
    pub fn new(grid: &[usize]) -> Self {
        let n: usize = grid.iter().product();
        let idx: Vec<Vec<usize>> = (0..n).map(|c| unflatten(grid, c)).collect();
        let class_id = |a: usize, b: usize| -> u32 {
            let mut id = 0usize;
            for (d, g) in grid.iter().enumerate() {
                id = id * (2 * g - 1) + (idx[a][d] + g - 1 - idx[b][d]);
            }
            id as u32
        };
        let classes: usize = grid.iter().map(|g| 2 * g - 1).product();
        let mut class_of = vec![0u32; n * n];
        let mut counts = vec![0usize; classes];
        for b in 0..n {
            for a in 0..n {
                let k = class_id(a, b);
                class_of[a + b * n] = k;
                counts[k as usize] += 1;
            }
        }
        let zero_class = class_id(0, 0);
        ToeplitzClasses { grid: grid.to_vec(), n, class_of, counts, zero_class }
    }

    /// Offset vector of a class id.
    pub fn offset(&self, mut id: usize) -> Vec<i64> {
        let mut off = vec![0i64; self.grid.len()];
        for (slot, g) in off.iter_mut().zip(&self.grid).rev() {
            let w = 2 * g - 1;
            *slot = (id % w) as i64 - (*g as i64 - 1);
            id /= w;
        }
        off
    }

    /// Whether an offset belongs to the enumerated half: zero, or first
    /// nonzero component positive.
    pub fn is_half(off: &[i64]) -> bool {
        off.iter().find(|&&k| k != 0).map_or(true, |&k| k > 0)
    }
}

/// Validates relaxation degrees (per-dimension sizes of `Q`'s grid).
pub(crate) fn resolve_degrees(spec: &DimensionSpec, degrees: Option<&[usize]>) -> Result<Vec<usize>> {
    let minimal = spec.sizes();
    match degrees {
        None => Ok(minimal),
        Some(d) => {
            if d.len() != minimal.len() {
                return Err(Error::DimensionMismatch { expected: minimal.len(), got: d.len() });
            }
            if d.iter().zip(&minimal).any(|(a, b)| a < b) {
                return Err(Error::InvalidArgument(format!(
                    "relaxation degrees {d:?} fall below the atom sizes {minimal:?}"
                )));
            }
            Ok(d.to_vec())
        }
    }
}

/// Enumerates the trace constraints of `Q` for the given degrees.
///
/// One constraint per offset in the half set (zero, or first nonzero
/// component positive); the remaining offsets follow by Hermitian symmetry.
///
/// ```
/// use lanm::model::{DimensionSpec, DimKind};
/// use lanm::sdr::toeplitz_trace_constraints;
/// let spec = DimensionSpec::single(DimKind::Aoa, 2).unwrap();
/// let c = toeplitz_trace_constraints(&spec, None).unwrap();
/// assert_eq!(c.len(), 2);
/// assert_eq!((c[0].entries.clone(), c[0].target), (vec![(0, 0), (1, 1)], 1.0));
/// assert_eq!((c[1].entries.clone(), c[1].target), (vec![(1, 0)], 0.0));
/// ```
pub fn toeplitz_trace_constraints(spec: &DimensionSpec, degrees: Option<&[usize]>) -> Result<Vec<TraceConstraint>> {
    let grid = resolve_degrees(spec, degrees)?;
    let cls = ToeplitzClasses::new(&grid);
    let mut by_class: Vec<Vec<(usize, usize)>> = vec![Vec::new(); cls.counts.len()];
    for b in 0..cls.n {
        for a in 0..cls.n {
            by_class[cls.class_of[a + b * cls.n] as usize].push((a, b));
        }
    }
    let mut out: Vec<TraceConstraint> = by_class
        .into_iter()
        .enumerate()
        .filter_map(|(id, mut entries)| {
            let offset = cls.offset(id);
            ToeplitzClasses::is_half(&offset).then(|| {
                entries.sort_unstable();
                let target = if id as u32 == cls.zero_class { 1.0 } else { 0.0 };
                TraceConstraint { offset, entries, target }
            })
        })
        .collect();
    out.sort_by(|x, y| {
        let nx = x.offset.iter().map(|k| k.abs()).sum::<i64>();
        let ny = y.offset.iter().map(|k| k.abs()).sum::<i64>();
        nx.cmp(&ny).then_with(|| y.offset.cmp(&x.offset))
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DimKind;

    #[test]
    fn counts_match_distinct_offsets() {
        let spec = DimensionSpec::parse("delay:5,doppler:3").unwrap();
        let c = toeplitz_trace_constraints(&spec, None).unwrap();
        // (2*5-1)*(2*3-1) offsets, paired up except the origin.
        assert_eq!(c.len(), (9 * 5 + 1) / 2);
        assert_eq!(c.iter().filter(|t| t.target == 1.0).count(), 1);
        let total: usize = c.iter().map(|t| t.entries.len()).sum();
        // Every entry of Q is hit once by its class or its mirror class,
        // so the half set covers (n^2 + n) / 2 entries.
        assert_eq!(total, (15 * 15 + 15) / 2);
    }

    #[test]
    fn padded_degrees() {
        let spec = DimensionSpec::single(DimKind::Delay, 3).unwrap();
        assert!(toeplitz_trace_constraints(&spec, Some(&[2])).is_err());
        let c = toeplitz_trace_constraints(&spec, Some(&[5])).unwrap();
        assert_eq!(c.len(), 5);
        assert_eq!(c[0].entries.len(), 5);
    }

    #[test]
    fn entries_share_offset() {
        let spec = DimensionSpec::parse("aoa:3,delay:3").unwrap();
        for tc in toeplitz_trace_constraints(&spec, None).unwrap() {
            for &(a, b) in &tc.entries {
                let (ia, ib) = (spec.unflatten(a), spec.unflatten(b));
                let off: Vec<i64> = ia.iter().zip(&ib).map(|(x, y)| *x as i64 - *y as i64).collect();
                assert_eq!(off, tc.offset);
            }
        }
    }
}
