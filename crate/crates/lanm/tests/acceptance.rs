//! Acceptance suite: one pass/fail line per criterion.
//!
//! Run with `cargo test --release --test acceptance`; pass criterion numbers
//! after `--` to run a subset. The full suite takes about two hours on one
//! core, most of it in the 2D SNR sweep.

use std::collections::BTreeMap;
use std::time::Instant;

use lanm::decode::ls_decode;
use lanm::dictionary::{coherence, empirical_coherence, gen_dictionary, DictionaryKind};
use lanm::harness::{
    check_adjoint, generate_instance, phase_transition, process_instance, records_csv, run_trial, snr_sweep,
    summary_csv, theorem_scaling_probe, worker_pool, ExperimentPlan, TrialConfig, TrialOutcome,
};
use lanm::io::ObservationFile;
use lanm::localization::{eval_grid, match_targets, DualPolynomial};
use lanm::metrics::SigmaReading;
use lanm::model::{
    build_lifted, build_measurement_ensemble, random_targets, simulate_time_domain, DimensionSpec, LiftedMatrix,
    SceneConfig, TargetScene,
};
use lanm::rng::{derive_seed, stream};
use lanm::sdr::{build_noiseless_sdr, solve, DualSolution, SolverConfig};
use lanm::waveform::{encode, modulate, QamOrder};
use lanm::C64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde_json::json;

const BASE_SEED: u64 = 20240501;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn spec(s: &str) -> DimensionSpec {
    DimensionSpec::parse(s).unwrap()
}

fn plan(v: serde_json::Value) -> ExperimentPlan {
    serde_json::from_value(v).unwrap()
}

fn rel_err(a: &[C64], b: &[C64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
    let den: f64 = b.iter().map(|y| y.norm_sqr()).sum();
    (num / den).sqrt()
}

/// Largest certificate norm on the 16x grid.
fn grid_sup(dims: &DimensionSpec, sol: &DualSolution) -> f64 {
    let poly = DualPolynomial::new(sol.f.clone(), dims.clone()).unwrap();
    eval_grid(&poly, 16).unwrap().max()
}

/// Solution sups collected by the solving criteria for criterion 4.
#[derive(Default)]
struct Feasibility {
    sups: Vec<(String, f64)>,
}

impl Feasibility {
    fn record(&mut self, label: &str, dims: &DimensionSpec, out: &TrialOutcome) {
        if let Some(sol) = &out.solution {
            self.sups.push((label.to_string(), grid_sup(dims, sol)));
        }
    }
}

fn c1_adjoint() -> Verdict {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for (dims, t) in [("delay:65", 4), ("delay:15,doppler:15", 4), ("aoa:3,aod:3,delay:5,doppler:5", 2)] {
        for kind in [DictionaryKind::Gaussian, DictionaryKind::Hadamard] {
            worst = worst.max(check_adjoint(&spec(dims), t, kind, BASE_SEED, 100).unwrap());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(worst <= 1e-10 && secs < 10.0, format!("max relative residual {worst:.2e} over 1D, 2D, 4D; {secs:.1} s"))
}

fn c2_model_oracle() -> Verdict {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for (dims, tag) in [("delay:65", "1d"), ("delay:15,doppler:15", "2d")] {
        let spec = spec(dims);
        for i in 0..20 {
            let seed = derive_seed(BASE_SEED, &format!("oracle/{tag}/{i}"));
            let mut rng = stream(seed, "scene");
            let k = rng.gen_range(1..=3);
            let t = 4;
            let targets = random_targets(&spec, k, false, &mut rng).unwrap();
            let streams: Vec<_> =
                (0..k).map(|j| encode(QamOrder::Q16, t, derive_seed(seed, &format!("s{j}"))).unwrap()).collect();
            let scene = TargetScene::new(
                SceneConfig { spec: spec.clone(), k, t },
                targets,
                streams.iter().map(|s| s.h.clone()).collect(),
            )
            .unwrap();
            let dict = gen_dictionary(DictionaryKind::Gaussian, spec.dictionary_rows(), t, seed).unwrap();
            let ens = build_measurement_ensemble(&spec, &dict).unwrap();
            let lifted = ens.forward(&build_lifted(&scene)).unwrap();
            let signals: Vec<_> = streams.iter().map(|s| modulate(&dict, &spec, &s.h).unwrap()).collect();
            let direct = simulate_time_domain(&scene, &signals).unwrap();
            worst = worst.max(rel_err(&lifted, &direct));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(worst <= 1e-8 && secs < 30.0, format!("max relative mismatch {worst:.2e} on 40 scenes; {secs:.1} s"))
}

fn c3_noiseless_recovery(feas: &mut Feasibility) -> Verdict {
    let start = Instant::now();
    let cfg = TrialConfig::new(spec("delay:65"), 2, 4, DictionaryKind::Hadamard);
    let mut successes = 0;
    let mut worst_shift: f64 = 0.0;
    for i in 0..20 {
        let inst = generate_instance(&cfg, derive_seed(BASE_SEED, &format!("recovery/{i}"))).unwrap();
        let out = process_instance(&inst).unwrap();
        feas.record("1D noiseless", &cfg.dims, &out);
        if out.metrics.lift_rel_error <= 1e-3 && out.metrics.k_hat == 2 {
            successes += 1;
            let truth: Vec<_> = inst.scene.targets.iter().map(|t| t.tau.clone()).collect();
            worst_shift = worst_shift.max(match_targets(&truth, &out.peaks.taus()).max_error());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        successes >= 18 && worst_shift <= 1e-4 && secs < 1800.0,
        format!("{successes}/20 exact, worst shift error {worst_shift:.2e} in successes; {secs:.1} s"),
    )
}

fn c5_duality_value(feas: &mut Feasibility) -> Verdict {
    let mut rng = stream(BASE_SEED, "duality");
    let mut worst: f64 = 0.0;
    for i in 0..10 {
        let (dims, t) = if i % 2 == 0 { (spec("delay:65"), 4) } else { (spec("delay:15,doppler:15"), 4) };
        let d = gen_dictionary(DictionaryKind::Hadamard, dims.dictionary_rows(), t, i).unwrap();
        let ens = build_measurement_ensemble(&dims, &d).unwrap();
        let tau: Vec<f64> = (0..dims.ndim()).map(|_| rng.gen()).collect();
        let alpha = C64::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng));
        let h = encode(QamOrder::Q4, t, derive_seed(BASE_SEED, &format!("duality/{i}"))).unwrap().h;
        let mut u = LiftedMatrix::zeros(t, dims.m());
        u.add_atom(&dims, &tau, &h.iter().map(|z| alpha * z).collect::<Vec<_>>()).unwrap();
        let y = ens.forward(&u).unwrap();
        let sol = solve(&build_noiseless_sdr(&y, &ens).unwrap(), &SolverConfig::default()).unwrap();
        worst = worst.max((sol.objective_value - alpha.norm()).abs());
        feas.sups.push(("single atom".into(), grid_sup(&dims, &sol)));
    }
    verdict(worst <= 1e-4, format!("max |objective - |alpha|| = {worst:.2e} over 10 atoms (1D and 2D)"))
}

fn c6_coherence() -> Verdict {
    let mut notes = Vec::new();
    let mut pass = true;
    for kind in [DictionaryKind::Hadamard, DictionaryKind::Dft, DictionaryKind::Fourier] {
        let mut worst: f64 = 0.0;
        for t in [4, 8, 16] {
            let d = gen_dictionary(kind, 225, t, BASE_SEED).unwrap();
            worst = worst.max((coherence(&d) - 1.0).abs());
        }
        pass &= worst <= 4.0 * f64::EPSILON;
        notes.push(format!("{} |mu-1| {worst:.1e}", kind.short()));
    }
    for t in [4usize, 8, 16] {
        let bound = 6.0 * (t as f64).ln();
        let ok = (0..100)
            .filter(|&s| {
                let d = gen_dictionary(DictionaryKind::Gaussian, 1000, t, derive_seed(BASE_SEED, &format!("mu/{s}"))).unwrap();
                empirical_coherence(d.matrix()) <= bound
            })
            .count();
        pass &= ok >= 99;
        notes.push(format!("gaussian T={t} {ok}/100 within 6 ln T"));
    }
    verdict(pass, notes.join(", "))
}

fn strictly_improving(v: &[f64]) -> usize {
    // A perfect score cannot improve further; a tie at zero is not a setback.
    v.windows(2).filter(|w| !(w[1] < w[0] || (w[0] == 0.0 && w[1] == 0.0))).count()
}

fn c7_snr_trends(feas: &mut Feasibility) -> Verdict {
    let start = Instant::now();
    let snrs: Vec<f64> = (0..=6).map(|i| 5.0 * i as f64).collect();
    let p = plan(json!({
        "kind": "snr-sweep",
        "dims": "delay:15,doppler:15",
        "k": [2], "t": [4],
        "snr_db": snrs,
        "dictionaries": ["hadamard", "dft", "gaussian"],
        "qam": [4],
        "trials": 20,
        "seed": BASE_SEED,
        "sigma_reading": "quarter-norm",
    }));
    let cells = p.cells().unwrap();
    let work: Vec<(usize, usize)> = (0..cells.len()).flat_map(|c| (0..p.trials).map(move |i| (c, i))).collect();
    let results: Vec<(f64, f64, Option<f64>)> = worker_pool().unwrap().install(|| {
        work.par_iter()
            .map(|&(c, i)| {
                let cfg = &cells[c].config;
                match run_trial(cfg, p.trial_seed(&cells[c], i)) {
                    Ok(o) => (o.metrics.nmse, o.metrics.ser, o.solution.as_ref().map(|s| grid_sup(&cfg.dims, s))),
                    Err(_) => (1.0, 1.0, None),
                }
            })
            .collect()
    });
    let mut curves: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for (c, cell) in cells.iter().enumerate() {
        let rows = &results[c * p.trials..(c + 1) * p.trials];
        let n = rows.len() as f64;
        let e = curves.entry(cell.config.dictionary.short()).or_default();
        e.0.push(rows.iter().map(|r| r.0).sum::<f64>() / n);
        e.1.push(rows.iter().map(|r| r.1).sum::<f64>() / n);
        feas.sups.extend(rows.iter().filter_map(|r| r.2).map(|s| ("2D noisy".to_string(), s)));
    }
    let mut pass = true;
    let mut notes = Vec::new();
    for (kind, (nmse, ser)) in &curves {
        let (vn, vs) = (strictly_improving(nmse), strictly_improving(ser));
        pass &= vn <= 1 && vs <= 1;
        let fmt = |v: &[f64], p: usize| v.iter().map(|x| format!("{x:.p$e}")).collect::<Vec<_>>().join(" ");
        notes.push(format!("{kind}: NMSE [{}] ({vn} viol), SER [{}] ({vs} viol)", fmt(nmse, 2), fmt(ser, 2)));
    }
    let g = &curves["gaussian"].0;
    let gaussian_worst = (0..snrs.len()).filter(|&i| g[i] < curves["hadamard"].0[i] || g[i] < curves["dft"].0[i]).count();
    pass &= gaussian_worst == 0;
    let ser30 = curves.values().map(|c| c.1[snrs.len() - 1]).fold(0.0, f64::max);
    pass &= ser30 == 0.0;
    notes.push(format!("Gaussian below another kind at {gaussian_worst} SNR points"));
    notes.push(format!("4-QAM SER at 30 dB {ser30}"));
    notes.push(format!("sigma reading {}", SigmaReading::QuarterNorm));
    notes.push(format!("{:.0} s", start.elapsed().as_secs_f64()));
    verdict(pass, notes.join("; "))
}

/// Entries along one axis of a success grid that go the wrong way.
fn axis_violations(grid: &BTreeMap<(usize, usize, usize), f64>, axis: usize, increasing: bool) -> usize {
    let mut lines: BTreeMap<(usize, usize), Vec<(usize, f64)>> = BTreeMap::new();
    for (&(k, t, l), &v) in grid {
        let key = [k, t, l];
        let rest = match axis {
            0 => (t, l),
            1 => (k, l),
            _ => (k, t),
        };
        lines.entry(rest).or_default().push((key[axis], v));
    }
    lines
        .values()
        .map(|line| {
            let mut line = line.clone();
            line.sort_by_key(|e| e.0);
            line.windows(2).filter(|w| if increasing { w[1].1 < w[0].1 } else { w[1].1 > w[0].1 }).count()
        })
        .max()
        .unwrap_or(0)
}

fn c8_phase_transition() -> Verdict {
    let start = Instant::now();
    let p = plan(json!({
        "kind": "phase-transition",
        "dims": "delay:41",
        "k": [1, 2, 3], "t": [2, 4, 8],
        "l_obs": [41, 65, 97],
        "dictionaries": ["hadamard", "dft", "gaussian"],
        "trials": 20,
        "seed": BASE_SEED,
    }));
    let res = phase_transition(&p).unwrap();
    let mut grids: BTreeMap<&str, BTreeMap<(usize, usize, usize), f64>> = BTreeMap::new();
    for s in &res.summary {
        grids.entry(s.dictionary.short()).or_default().insert((s.k, s.t, s.l_obs), s.success_rate);
    }
    let mut pass = true;
    let mut notes = Vec::new();
    for (kind, g) in &grids {
        let (vk, vt, vl) = (axis_violations(g, 0, false), axis_violations(g, 1, false), axis_violations(g, 2, true));
        pass &= vk <= 1 && vt <= 1 && vl <= 1;
        let mean = g.values().sum::<f64>() / g.len() as f64;
        notes.push(format!("{kind}: mean success {mean:.3}, worst line violations K {vk} T {vt} L {vl}"));
    }
    let gauss = &grids["gaussian"];
    for kind in ["hadamard", "dft"] {
        let margin = grids[kind].iter().map(|(c, v)| v - gauss[c]).sum::<f64>() / gauss.len() as f64;
        pass &= margin >= 0.0;
        notes.push(format!("{kind} - gaussian mean margin {margin:+.3}"));
    }
    notes.push(format!("{:.0} s", start.elapsed().as_secs_f64()));
    verdict(pass, notes.join("; "))
}

fn c9_probe() -> Verdict {
    let start = Instant::now();
    let p = plan(json!({
        "kind": "theorem-probe",
        "dims": "delay:41",
        "k": [1, 2], "t": [2, 4],
        "l_obs": [5, 9, 13, 17, 21, 25, 33, 41, 49, 65, 81, 97],
        "dictionaries": ["hadamard", "gaussian"],
        "trials": 20,
        "seed": BASE_SEED,
    }));
    let r = theorem_scaling_probe(&p).unwrap();
    let table: Vec<String> = r
        .rows
        .iter()
        .map(|row| {
            let l = row.min_l_obs.map_or("none".to_string(), |l| l.to_string());
            format!("{} K{} T{}: {l}", row.dictionary.short(), row.k, row.t)
        })
        .collect();
    verdict(
        r.monotone_in_k && r.monotone_in_t && r.monotone_in_mu,
        format!(
            "monotone K {} T {} mu {}; {}; {:.0} s",
            r.monotone_in_k,
            r.monotone_in_t,
            r.monotone_in_mu,
            table.join(", "),
            start.elapsed().as_secs_f64()
        ),
    )
}

fn c10_tiny_4d(feas: &mut Feasibility) -> Verdict {
    let start = Instant::now();
    let cfg = TrialConfig::new(spec("aoa:3,aod:3,delay:5,doppler:5"), 1, 2, DictionaryKind::Hadamard);
    let inst = generate_instance(&cfg, derive_seed(BASE_SEED, "4d")).unwrap();
    let out = process_instance(&inst).unwrap();
    feas.record("4D noiseless", &cfg.dims, &out);
    let truth: Vec<_> = inst.scene.targets.iter().map(|t| t.tau.clone()).collect();
    let shift = if out.peaks.k_hat() == 1 { match_targets(&truth, &out.peaks.taus()).max_error() } else { f64::INFINITY };
    let secs = start.elapsed().as_secs_f64();
    verdict(
        shift <= 1e-3 && out.metrics.ser == 0.0 && secs < 600.0,
        format!("K_hat {}, shift error {shift:.2e}, SER {}; {secs:.1} s", out.metrics.k_hat, out.metrics.ser),
    )
}

fn c11_decode() -> Verdict {
    let mut worst_g: f64 = 0.0;
    let mut worst_ratio: f64 = 0.0;
    for (i, dims) in ["delay:65", "delay:15,doppler:15"].iter().cycle().take(10).enumerate() {
        let cfg = TrialConfig::new(spec(dims), 2, 4, DictionaryKind::Gaussian);
        let inst = generate_instance(&cfg, derive_seed(BASE_SEED, &format!("decode/{i}"))).unwrap();
        let ens = build_measurement_ensemble(&cfg.dims, &inst.dictionary).unwrap();
        let taus: Vec<_> = inst.scene.targets.iter().map(|t| t.tau.clone()).collect();
        let res = ls_decode(&inst.y_clean, &ens, &taus, cfg.qam).unwrap();
        for ((tp, h), est) in inst.scene.targets.iter().zip(&inst.scene.symbols).zip(&res.targets) {
            let g: Vec<C64> = h.iter().map(|z| tp.alpha * z).collect();
            worst_g = worst_g.max(rel_err(&est.g, &g));
        }
        let mut rng = stream(inst.seed, "w");
        let w: Vec<C64> = inst
            .y_clean
            .iter()
            .map(|_| C64::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)))
            .collect();
        let norm = w.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let sigma = 0.1 * (i + 1) as f64;
        let y: Vec<C64> = inst.y_clean.iter().zip(&w).map(|(a, b)| a + b * (sigma / norm)).collect();
        let noisy = ls_decode(&y, &ens, &taus, cfg.qam).unwrap();
        worst_ratio = worst_ratio.max(noisy.residual / sigma);
    }
    verdict(
        worst_g <= 1e-8 && worst_ratio <= 1.0,
        format!("noiseless g relative error {worst_g:.2e}; max residual / sigma {worst_ratio:.4}"),
    )
}

fn c12_determinism() -> Verdict {
    let sweep = plan(json!({
        "kind": "snr-sweep", "dims": "delay:41", "k": [2], "t": [4],
        "snr_db": [null, 10.0, 30.0], "dictionaries": ["hadamard", "gaussian"], "trials": 3, "seed": BASE_SEED,
    }));
    let pt = plan(json!({
        "kind": "phase-transition", "dims": "delay:41", "k": [1, 2], "t": [2],
        "l_obs": [33, 41], "dictionaries": ["dft"], "trials": 3, "seed": BASE_SEED,
    }));
    let render = || {
        let a = snr_sweep(&sweep).unwrap();
        let b = phase_transition(&pt).unwrap();
        let cfg = TrialConfig { snr_db: Some(20.0), ..TrialConfig::new(spec("delay:15,doppler:15"), 2, 4, DictionaryKind::Dft) };
        let obs = serde_json::to_string(&ObservationFile::from(&generate_instance(&cfg, BASE_SEED).unwrap())).unwrap();
        [records_csv(&a.records, false), summary_csv(&a.summary), records_csv(&b.records, false), summary_csv(&b.summary), obs]
    };
    let (first, second) = (render(), render());
    let same = first.iter().zip(&second).filter(|(a, b)| a == b).count();
    verdict(same == first.len(), format!("{same}/{} outputs byte-identical across reruns", first.len()))
}

fn c4_dual_feasibility(feas: &Feasibility) -> Verdict {
    if feas.sups.is_empty() {
        return verdict(false, "no solutions collected; run together with criteria 3, 5, 7 or 10");
    }
    let mut by: BTreeMap<&str, (usize, f64)> = BTreeMap::new();
    for (label, s) in &feas.sups {
        let e = by.entry(label).or_insert((0, 0.0));
        e.0 += 1;
        e.1 = e.1.max(*s);
    }
    let worst = by.values().map(|e| e.1).fold(0.0, f64::max);
    let parts: Vec<String> = by.iter().map(|(l, (n, m))| format!("{l} {n} solves max {m:.8}")).collect();
    verdict(worst <= 1.0 + 1e-5, parts.join(", "))
}

const NAMES: [&str; 12] = [
    "adjoint identity",
    "model oracle",
    "noiseless exact recovery",
    "dual feasibility",
    "duality value",
    "coherence",
    "SNR trends",
    "phase-transition trends",
    "scaling probe",
    "tiny 4D smoke test",
    "decode exactness",
    "determinism",
];

fn main() {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).filter(|n| (1..=12).contains(n)).collect();
    let wanted = |n: usize| selected.is_empty() || selected.contains(&n);
    let mut feas = Feasibility::default();
    let mut verdicts: BTreeMap<usize, Verdict> = BTreeMap::new();
    let mut report = |n: usize, v: Verdict| {
        println!("criterion {n:>2} {:<4} {}: {}", if v.pass { "PASS" } else { "FAIL" }, NAMES[n - 1], v.detail);
        verdicts.insert(n, v);
    };
    if wanted(1) {
        report(1, c1_adjoint());
    }
    if wanted(2) {
        report(2, c2_model_oracle());
    }
    if wanted(3) {
        report(3, c3_noiseless_recovery(&mut feas));
    }
    if wanted(5) {
        report(5, c5_duality_value(&mut feas));
    }
    if wanted(6) {
        report(6, c6_coherence());
    }
    if wanted(10) {
        report(10, c10_tiny_4d(&mut feas));
    }
    if wanted(11) {
        report(11, c11_decode());
    }
    if wanted(12) {
        report(12, c12_determinism());
    }
    if wanted(8) {
        report(8, c8_phase_transition());
    }
    if wanted(9) {
        report(9, c9_probe());
    }
    if wanted(7) {
        report(7, c7_snr_trends(&mut feas));
    }
    if wanted(4) {
        report(4, c4_dual_feasibility(&feas));
    }
    let failed: Vec<usize> = verdicts.iter().filter(|(_, v)| !v.pass).map(|(n, _)| *n).collect();
    println!("{} of {} criteria passed", verdicts.len() - failed.len(), verdicts.len());
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
