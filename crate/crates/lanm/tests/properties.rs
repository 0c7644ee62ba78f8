use lanm::dictionary::{gen_dictionary, DictionaryKind};
use lanm::harness::TrialConfig;
use lanm::metrics::{add_awgn, NoiseModel, SigmaReading, SnrReference};
use lanm::model::{build_measurement_ensemble, steering_vector, tau_distance, DimensionSpec, LiftedMatrix};
use lanm::C64;
use proptest::prelude::*;

fn spec_strategy() -> impl Strategy<Value = DimensionSpec> {
    prop_oneof![
        (1usize..10).prop_map(|n| DimensionSpec::parse(&format!("delay:{}", 2 * n + 1)).unwrap()),
        (1usize..4, 1usize..4)
            .prop_map(|(a, b)| DimensionSpec::parse(&format!("delay:{},doppler:{}", 2 * a + 1, 2 * b + 1)).unwrap()),
        (2usize..4, 1usize..3).prop_map(|(a, b)| DimensionSpec::parse(&format!("aoa:{a},delay:{}", 2 * b + 1)).unwrap()),
    ]
}

fn random_lifted(t: usize, m: usize, vals: &[(f64, f64)]) -> LiftedMatrix {
    let mut u = LiftedMatrix::zeros(t, m);
    for i in 0..t {
        for j in 0..m {
            let (re, im) = vals[(i * m + j) % vals.len()];
            u.0[(i, j)] = C64::new(re + i as f64 * 0.1, im - j as f64 * 0.01);
        }
    }
    u
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn forward_is_linear(spec in spec_strategy(), seed in any::<u64>(),
                         a in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 7),
                         b in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 5),
                         c in -2.0f64..2.0) {
        let t = 2;
        let d = gen_dictionary(DictionaryKind::Gaussian, spec.dictionary_rows(), t, seed).unwrap();
        let ens = build_measurement_ensemble(&spec, &d).unwrap();
        let (ua, ub) = (random_lifted(t, spec.m(), &a), random_lifted(t, spec.m(), &b));
        let mut sum = ua.clone();
        for i in 0..t {
            for j in 0..spec.m() {
                sum.0[(i, j)] += ub.0[(i, j)] * c;
            }
        }
        let lhs = ens.forward(&sum).unwrap();
        let (fa, fb) = (ens.forward(&ua).unwrap(), ens.forward(&ub).unwrap());
        for ((l, x), y) in lhs.iter().zip(&fa).zip(&fb) {
            prop_assert!((l - (x + y * c)).norm() <= 1e-10 * (1.0 + l.norm()));
        }
    }

    #[test]
    fn steering_norm_is_root_aperture(spec in spec_strategy(), tau in proptest::collection::vec(0.0f64..1.0, 2)) {
        let tau = &tau[..spec.ndim()];
        let a = steering_vector(&spec, tau).unwrap();
        let n2: f64 = a.iter().map(|z| z.norm_sqr()).sum();
        prop_assert!((n2 - spec.m() as f64).abs() <= 1e-9 * spec.m() as f64);
    }

    #[test]
    fn torus_distance_is_a_metric(a in proptest::collection::vec(-2.0f64..2.0, 2),
                                  b in proptest::collection::vec(-2.0f64..2.0, 2),
                                  c in proptest::collection::vec(-2.0f64..2.0, 2)) {
        let (ab, ba) = (tau_distance(&a, &b), tau_distance(&b, &a));
        prop_assert_eq!(ab, ba);
        prop_assert!(ab <= 0.5);
        prop_assert!(ab <= tau_distance(&a, &c) + tau_distance(&c, &b) + 1e-12);
    }

    #[test]
    fn sigma_covers_realized_noise(snr in -10.0f64..40.0, seed in any::<u64>(), r in 0usize..3) {
        let reading = [SigmaReading::Norm, SigmaReading::SquaredNorm, SigmaReading::QuarterNorm][r];
        let y = vec![C64::new(1.0, -0.5); 50];
        let noise = NoiseModel { sigma_reading: reading, ..NoiseModel::new(snr, SnrReference::Unit) };
        let obs = add_awgn(&y, &noise, seed).unwrap();
        let w: f64 = obs.y.iter().zip(&y).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
        prop_assert!((w - obs.noise_norm).abs() <= 1e-9 * (1.0 + w));
        prop_assert!(noise.noise_bound(obs.sigma) >= w);
    }

    #[test]
    fn config_json_roundtrip(k in 1usize..4, t in 1usize..9, snr in proptest::option::of(-5.0f64..40.0)) {
        let mut cfg = TrialConfig::new(DimensionSpec::parse("delay:15,doppler:15").unwrap(), k, t, DictionaryKind::Dft);
        cfg.snr_db = snr;
        let text = serde_json::to_string(&cfg).unwrap();
        let back: TrialConfig = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(back, cfg);
    }
}
