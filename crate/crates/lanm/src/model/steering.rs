use std::f64::consts::PI;

use num_complex::Complex64 as C64;

use super::dims::{Dim, DimensionSpec};
use crate::error::{Error, Result};

/// Normalized Dirichlet kernel `(1/(2N+1)) sum_{j=-N}^{N} exp(i 2 pi j t)`.
///
/// The kernel is real; it is returned as a complex value so it composes
/// with the rest of the signal chain. `t` is taken modulo 1.
pub fn dirichlet_kernel(t: f64, n: usize) -> C64 {
    let len = (2 * n + 1) as f64;
    let t = t.rem_euclid(1.0);
    let s = (PI * t).sin();
    if s.abs() < 1e-12 {
        // t = 0 (or rounding up to 1): every summand is 1.
        return C64::new(1.0, 0.0);
    }
    C64::new((len * PI * t).sin() / (len * s), 0.0)
}

/// Wrap-around distance on the unit circle.
pub fn wrap_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).abs() % 1.0;
    d.min(1.0 - d)
}

/// Maximum per-coordinate wrap-around distance between two shift tuples.
pub fn tau_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| wrap_distance(x, y)).fold(0.0, f64::max)
}

/// Steering factor of one dimension at shift `t`.
pub fn dim_factor(dim: &Dim, t: f64) -> Vec<C64> {
    let w = dim.kind.sign() * 2.0 * PI * t;
    (0..dim.size).map(|i| C64::from_polar(1.0, w * dim.index(i) as f64)).collect()
}

/// Per-dimension steering factors in canonical order.
pub fn steering_factors(spec: &DimensionSpec, tau: &[f64]) -> Result<Vec<Vec<C64>>> {
    if tau.len() != spec.ndim() {
        return Err(Error::DimensionMismatch { expected: spec.ndim(), got: tau.len() });
    }
    Ok(spec.dims().iter().zip(tau).map(|(d, &t)| dim_factor(d, t)).collect())
}

/// Kronecker product of vectors, first factor outermost.
pub fn kron(factors: &[Vec<C64>]) -> Vec<C64> {
    factors.iter().fold(vec![C64::new(1.0, 0.0)], |acc, f| {
        let mut out = Vec::with_capacity(acc.len() * f.len());
        for a in &acc {
            out.extend(f.iter().map(|b| a * b));
        }
        out
    })
}

/// The atom `a(tau)`, a unit-modulus vector of length `M`.
///
/// ```
/// use lanm::model::{steering_vector, DimensionSpec, DimKind};
/// let spec = DimensionSpec::single(DimKind::Delay, 3).unwrap();
/// let a = steering_vector(&spec, &[0.5]).unwrap();
/// for (z, want) in a.iter().zip([-1.0, 1.0, -1.0]) {
///     assert!((z.re - want).abs() < 1e-12 && z.im.abs() < 1e-12);
/// }
/// ```
pub fn steering_vector(spec: &DimensionSpec, tau: &[f64]) -> Result<Vec<C64>> {
    Ok(kron(&steering_factors(spec, tau)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DimKind;
    use proptest::prelude::*;

    fn naive_dirichlet(t: f64, n: usize) -> C64 {
        let n = n as i64;
        let sum: C64 = (-n..=n).map(|j| C64::from_polar(1.0, 2.0 * PI * j as f64 * t)).sum();
        sum / (2 * n + 1) as f64
    }

    #[test]
    fn dirichlet_values() {
        assert_eq!(dirichlet_kernel(0.0, 4), C64::new(1.0, 0.0));
        assert!((dirichlet_kernel(0.1, 2).re - 0.647214).abs() < 1e-6);
        for m in 1..=6 {
            assert!(dirichlet_kernel(m as f64 / 7.0, 3).norm() < 1e-12);
        }
    }

    #[test]
    fn wrap_metric() {
        assert!((wrap_distance(0.999, 0.0) - 0.001).abs() < 1e-12);
        assert!((tau_distance(&[0.1, 0.95], &[0.15, 0.05]) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn zero_shift_gives_ones() {
        let spec = DimensionSpec::parse("aoa:3,delay:5").unwrap();
        let a = steering_vector(&spec, &[0.0, 0.0]).unwrap();
        assert!(a.iter().all(|z| (z - C64::new(1.0, 0.0)).norm() < 1e-15));
        assert!(steering_vector(&spec, &[0.0]).is_err());
    }

    proptest! {
        #[test]
        fn dirichlet_matches_sum(t in 0.0f64..1.0, n in 1usize..12) {
            prop_assert!((dirichlet_kernel(t, n) - naive_dirichlet(t, n)).norm() < 1e-10);
        }

        #[test]
        fn steering_norm_is_m(t0 in 0.0f64..1.0, t1 in 0.0f64..1.0) {
            let spec = DimensionSpec::parse("delay:7,doppler:5").unwrap();
            let a = steering_vector(&spec, &[t0, t1]).unwrap();
            let n2: f64 = a.iter().map(|z| z.norm_sqr()).sum();
            prop_assert!((n2 - 35.0).abs() < 1e-10);
        }

        #[test]
        fn kronecker_consistency(t0 in 0.0f64..1.0, t1 in 0.0f64..1.0) {
            let spec = DimensionSpec::parse("delay:7,doppler:5").unwrap();
            let a = steering_vector(&spec, &[t0, t1]).unwrap();
            let d = steering_vector(&DimensionSpec::single(DimKind::Delay, 7).unwrap(), &[t0]).unwrap();
            let p = steering_vector(&DimensionSpec::single(DimKind::Doppler, 5).unwrap(), &[t1]).unwrap();
            for (i, di) in d.iter().enumerate() {
                for (k, pk) in p.iter().enumerate() {
                    prop_assert!((a[i * 5 + k] - di * pk).norm() < 1e-12);
                }
            }
        }
    }
}
