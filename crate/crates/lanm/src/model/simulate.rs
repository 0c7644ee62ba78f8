use std::f64::consts::PI;

use num_complex::Complex64 as C64;

use super::dims::{DimKind, DimensionSpec};
use super::scene::TargetScene;
use super::steering::dirichlet_kernel;
use crate::error::{Error, Result};

/// Time-domain transmit samples of one target.
///
/// Sample `l` of the pulse sent from transmit antenna `s` in slot `p` sits
/// at `(s * P + p) * L + l`, with `L` the delay length (1 when inactive).
#[derive(Clone, Debug, PartialEq)]
pub struct TransmitSignal {
    pub samples: Vec<C64>,
}

fn coord(spec: &DimensionSpec, tau: &[f64], kind: DimKind) -> f64 {
    spec.position(kind).map_or(0.0, |i| tau[i])
}

/// Direct evaluation of the received signal with circular shifts.
///
/// Each pulse is delayed by convolution with the Dirichlet kernel, picks up
/// its Doppler and angle phases, is summed over transmit antennas, and is
/// finally read out in the frequency bins `-N..=N`. This is independent of
/// the lifted model and serves as its oracle.
pub fn simulate_time_domain(scene: &TargetScene, signals: &[TransmitSignal]) -> Result<Vec<C64>> {
    let spec = scene.spec();
    if signals.len() != scene.targets.len() {
        return Err(Error::DimensionMismatch { expected: scene.targets.len(), got: signals.len() });
    }
    let (nr, nt) = (spec.size_of(DimKind::Aoa), spec.size_of(DimKind::Aod));
    let (nl, np) = (spec.size_of(DimKind::Delay), spec.size_of(DimKind::Doppler));
    let expected = nt * np * nl;
    if let Some(bad) = signals.iter().find(|x| x.samples.len() != expected) {
        return Err(Error::DimensionMismatch { expected, got: bad.samples.len() });
    }
    let half = (nl - 1) / 2;
    let p_first = -((np as i64 - 1) / 2);
    let mut y = vec![C64::new(0.0, 0.0); nr * np * nl];
    let mut time = vec![C64::new(0.0, 0.0); nl];
    for r in 0..nr {
        for p in 0..np {
            time.iter_mut().for_each(|z| *z = C64::new(0.0, 0.0));
            for (tp, x) in scene.targets.iter().zip(signals) {
                let phi = coord(spec, &tp.tau, DimKind::Aoa);
                let theta = coord(spec, &tp.tau, DimKind::Aod);
                let delay = coord(spec, &tp.tau, DimKind::Delay);
                let v = coord(spec, &tp.tau, DimKind::Doppler);
                let slot = C64::from_polar(1.0, 2.0 * PI * (r as f64 * phi + (p_first + p as i64) as f64 * v));
                for s in 0..nt {
                    let gain = tp.alpha * slot * C64::from_polar(1.0, 2.0 * PI * s as f64 * theta);
                    let pulse = &x.samples[(s * np + p) * nl..(s * np + p + 1) * nl];
                    for (l, out) in time.iter_mut().enumerate() {
                        let delayed: C64 = if nl == 1 {
                            pulse[0]
                        } else {
                            pulse
                                .iter()
                                .enumerate()
                                .map(|(lp, xv)| {
                                    let arg = (l as f64 - lp as f64) / nl as f64 - delay;
                                    xv * dirichlet_kernel(arg, half)
                                })
                                .sum()
                        };
                        *out += gain * delayed;
                    }
                }
            }
            for j in 0..nl {
                let freq = j as f64 - half as f64;
                let bin: C64 = time
                    .iter()
                    .enumerate()
                    .map(|(l, z)| z * C64::from_polar(1.0, -2.0 * PI * freq * l as f64 / nl as f64))
                    .sum();
                y[(r * np + p) * nl + j] = bin / nl as f64;
            }
        }
    }
    Ok(y)
}
