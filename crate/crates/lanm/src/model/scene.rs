use faer::Mat;
use num_complex::Complex64 as C64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::dims::DimensionSpec;
use super::steering::{steering_vector, tau_distance};
use crate::error::{Error, Result};

/// Maximum number of whole-scene redraws when enforcing separation.
pub const MAX_SCENE_ATTEMPTS: usize = 1000;

/// Sizes of a scene: active dimensions, target count `K`, subspace dimension `T`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub spec: DimensionSpec,
    pub k: usize,
    pub t: usize,
}

/// Shift tuple and complex amplitude of one target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetParams {
    pub tau: Vec<f64>,
    pub alpha: C64,
}

/// A scene: targets plus one unit-norm symbol vector per target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetScene {
    pub config: SceneConfig,
    pub targets: Vec<TargetParams>,
    pub symbols: Vec<Vec<C64>>,
}

impl TargetScene {
    /// Validates shapes, shift ranges and symbol norms.
    pub fn new(config: SceneConfig, targets: Vec<TargetParams>, symbols: Vec<Vec<C64>>) -> Result<Self> {
        if targets.len() != config.k {
            return Err(Error::DimensionMismatch { expected: config.k, got: targets.len() });
        }
        if symbols.len() != config.k {
            return Err(Error::DimensionMismatch { expected: config.k, got: symbols.len() });
        }
        for tp in &targets {
            if tp.tau.len() != config.spec.ndim() {
                return Err(Error::DimensionMismatch { expected: config.spec.ndim(), got: tp.tau.len() });
            }
            if tp.tau.iter().any(|&x| !(0.0..1.0).contains(&x)) {
                return Err(Error::InvalidArgument(format!("shift {:?} outside [0,1)", tp.tau)));
            }
        }
        for h in &symbols {
            if h.len() != config.t {
                return Err(Error::DimensionMismatch { expected: config.t, got: h.len() });
            }
            let n = h.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            if (n - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!("symbol vector has norm {n}, expected 1")));
            }
        }
        Ok(TargetScene { config, targets, symbols })
    }

    pub fn spec(&self) -> &DimensionSpec {
        &self.config.spec
    }

    /// Smallest pairwise distance under the max-coordinate wrap metric.
    pub fn min_separation(&self) -> f64 {
        min_separation(&self.targets)
    }

    pub fn is_well_separated(&self) -> bool {
        self.targets.len() < 2 || self.min_separation() >= self.spec().separation()
    }
}

/// Smallest pairwise wrap-around distance of a target list (infinite below two targets).
pub fn min_separation(targets: &[TargetParams]) -> f64 {
    let mut best = f64::INFINITY;
    for (i, a) in targets.iter().enumerate() {
        for b in &targets[i + 1..] {
            best = best.min(tau_distance(&a.tau, &b.tau));
        }
    }
    best
}

/// Draws `k` targets with uniform shifts and circular Gaussian amplitudes.
///
/// When `separated` is set, whole scenes are redrawn until every pair is at
/// least `spec.separation()` apart. Requests that cannot fit on the torus are
/// rejected up front.
pub fn random_targets<R: Rng>(spec: &DimensionSpec, k: usize, separated: bool, rng: &mut R) -> Result<Vec<TargetParams>> {
    let delta = spec.separation();
    if separated && k >= 2 {
        let per_axis = (1.0 / delta).floor();
        let capacity = per_axis.powi(spec.ndim() as i32);
        if (k as f64) > capacity {
            return Err(Error::SceneGeneration(format!(
                "{k} targets cannot be {delta:.4} apart in {} dimension(s)",
                spec.ndim()
            )));
        }
    }
    for _ in 0..MAX_SCENE_ATTEMPTS {
        let targets: Vec<TargetParams> = (0..k)
            .map(|_| {
                let tau = (0..spec.ndim()).map(|_| rng.gen::<f64>()).collect();
                let re: f64 = StandardNormal.sample(rng);
                let im: f64 = StandardNormal.sample(rng);
                TargetParams { tau, alpha: C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2 }
            })
            .collect();
        if !separated || min_separation(&targets) >= delta {
            return Ok(targets);
        }
    }
    Err(Error::SceneGeneration(format!(
        "no scene with {k} targets separated by {delta:.4} after {MAX_SCENE_ATTEMPTS} draws"
    )))
}

/// The lifted unknown `U = sum_k alpha_k h_k a(tau_k)^H`, of size `T x M`.
#[derive(Clone, Debug, PartialEq)]
pub struct LiftedMatrix(pub Mat<C64>);

impl LiftedMatrix {
    pub fn zeros(t: usize, m: usize) -> Self {
        LiftedMatrix(Mat::zeros(t, m))
    }

    pub fn t(&self) -> usize {
        self.0.nrows()
    }

    pub fn m(&self) -> usize {
        self.0.ncols()
    }

    pub fn frobenius(&self) -> f64 {
        self.0.norm_l2()
    }

    /// Adds `g a(tau)^H` for a coefficient vector `g` (typically `alpha h`).
    pub fn add_atom(&mut self, spec: &DimensionSpec, tau: &[f64], g: &[C64]) -> Result<()> {
        let a = steering_vector(spec, tau)?;
        if a.len() != self.m() || g.len() != self.t() {
            return Err(Error::Shape(format!(
                "atom {}x{} does not fit a {}x{} lifted matrix",
                g.len(),
                a.len(),
                self.t(),
                self.m()
            )));
        }
        for (c, ac) in a.iter().enumerate() {
            let ac = ac.conj();
            let col = self.0.col_as_slice_mut(c);
            for (u, gt) in col.iter_mut().zip(g) {
                *u += gt * ac;
            }
        }
        Ok(())
    }
}

/// Builds the lifted matrix of a scene.
pub fn build_lifted(scene: &TargetScene) -> LiftedMatrix {
    let spec = scene.spec();
    let mut u = LiftedMatrix::zeros(scene.config.t, spec.m());
    for (tp, h) in scene.targets.iter().zip(&scene.symbols) {
        let g: Vec<C64> = h.iter().map(|x| tp.alpha * x).collect();
        u.add_atom(spec, &tp.tau, &g).expect("validated scene");
    }
    u
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DimKind, Dim};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit(t: usize) -> Vec<C64> {
        let mut h = vec![C64::new(0.0, 0.0); t];
        h[0] = C64::new(1.0, 0.0);
        h
    }

    #[test]
    fn lifted_norms() {
        let spec = DimensionSpec::single(DimKind::Delay, 9).unwrap();
        let cfg = SceneConfig { spec: spec.clone(), k: 0, t: 3 };
        let empty = TargetScene::new(cfg, vec![], vec![]).unwrap();
        assert_eq!(build_lifted(&empty).frobenius(), 0.0);

        let cfg = SceneConfig { spec, k: 1, t: 3 };
        let tp = TargetParams { tau: vec![0.3], alpha: C64::new(2.0, 0.0) };
        let s = TargetScene::new(cfg, vec![tp], vec![unit(3)]).unwrap();
        assert!((build_lifted(&s).frobenius() - 2.0 * 3.0).abs() < 1e-12);
    }

    #[test]
    fn two_atoms_half_period_apart() {
        // Entrywise oracle: U[t,j] = sum_k alpha_k h_k[t] conj(a_j(tau_k)).
        let spec = DimensionSpec::single(DimKind::Delay, 6 + 1).unwrap();
        let h0 = vec![C64::new(0.6, 0.0), C64::new(0.0, 0.8)];
        let h1 = vec![C64::new(0.0, 1.0), C64::new(0.0, 0.0)];
        let tau = 0.2;
        let cfg = SceneConfig { spec: spec.clone(), k: 2, t: 2 };
        let targets = vec![
            TargetParams { tau: vec![tau], alpha: C64::new(1.0, 0.5) },
            TargetParams { tau: vec![tau + 0.5], alpha: C64::new(-0.3, 0.2) },
        ];
        let s = TargetScene::new(cfg, targets.clone(), vec![h0.clone(), h1.clone()]).unwrap();
        let u = build_lifted(&s);
        let mut want = 0.0;
        for (t, _) in h0.iter().enumerate() {
            for j in -3i64..=3 {
                let mut e = C64::new(0.0, 0.0);
                for (tp, h) in targets.iter().zip([&h0, &h1]) {
                    let phase = -2.0 * std::f64::consts::PI * j as f64 * tp.tau[0];
                    e += tp.alpha * h[t] * C64::from_polar(1.0, phase);
                }
                want += e.norm_sqr();
            }
        }
        assert!((u.frobenius().powi(2) - want).abs() < 1e-12);
    }

    #[test]
    fn scene_validation() {
        let spec = DimensionSpec::new(vec![Dim::new(DimKind::Delay, 5)]).unwrap();
        let cfg = SceneConfig { spec, k: 1, t: 2 };
        let bad_tau = TargetParams { tau: vec![1.0], alpha: C64::new(1.0, 0.0) };
        assert!(TargetScene::new(cfg.clone(), vec![bad_tau], vec![unit(2)]).is_err());
        let ok = TargetParams { tau: vec![0.5], alpha: C64::new(1.0, 0.0) };
        let long = vec![C64::new(1.0, 0.0); 2];
        assert!(TargetScene::new(cfg, vec![ok], vec![long]).is_err());
    }

    #[test]
    fn separation_enforced_and_pigeonhole() {
        let spec = DimensionSpec::single(DimKind::Delay, 65).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let t = random_targets(&spec, 3, true, &mut rng).unwrap();
            assert!(min_separation(&t) >= spec.separation());
        }
        // 10/(M-1) = 0.625 leaves room for a single target only.
        let small = DimensionSpec::single(DimKind::Delay, 17).unwrap();
        assert!(matches!(random_targets(&small, 2, true, &mut rng), Err(Error::SceneGeneration(_))));
        assert!(random_targets(&small, 1, true, &mut rng).is_ok());
    }
}
