//! End-to-end trials and the experiment families built from them.
//!
//! A trial draws a scene, symbol streams and a dictionary from one seed,
//! observes, solves the relaxation, localizes, decodes and scores. Trial
//! seeds do not depend on the dictionary kind, constellation or SNR, so
//! those comparisons run on common scenes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use num_complex::Complex64 as C64;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::decode::{evaluate_ser, ls_decode, select_support, DecodeResult};
use crate::dictionary::{coherence, gen_dictionary, Dictionary, DictionaryKind};
use crate::error::{Error, Result};
use crate::localization::{effective_oversample, eval_grid, localize, match_targets, DualPolynomial, GridValues, LocalizeOptions, PeakSet};
use crate::metrics::{add_awgn, lift_error, nmse, NoiseModel, NoisyObservation, SigmaReading, SnrReference, TrialMetrics};
use crate::model::{
    build_lifted, build_measurement_ensemble, random_targets, DimKind, DimensionSpec, LiftedMatrix, MeasurementEnsemble,
    SceneConfig, TargetScene,
};
use crate::rng::{derive_seed, stream};
use crate::sdr::{build_noiseless_sdr, build_noisy_sdr, solve, DualSolution, KktResiduals, SolveStatus, SolverConfig, SolverPath};
use crate::waveform::{encode, QamOrder, SymbolStream};

/// Environment variable holding the worker count.
pub const WORKERS_ENV: &str = "LANM_WORKERS";
pub const DEFAULT_TRIALS: usize = 20;
pub const DEFAULT_SUCCESS_RATE: f64 = 0.9;
/// Relative residual at which a noiseless support is considered complete.
pub const NOISELESS_FIT: f64 = 1e-3;

fn default_qam() -> QamOrder {
    QamOrder::Q4
}

fn default_true() -> bool {
    true
}

/// Everything that defines one trial apart from its seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialConfig {
    pub dims: DimensionSpec,
    pub k: usize,
    pub t: usize,
    pub dictionary: DictionaryKind,
    #[serde(default = "default_qam")]
    pub qam: QamOrder,
    /// `None` for noiseless observations.
    #[serde(default)]
    pub snr_db: Option<f64>,
    #[serde(default)]
    pub snr_ref: SnrReference,
    #[serde(default)]
    pub sigma_reading: SigmaReading,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub localize: LocalizeOptions,
    /// Enforce the separation condition on multi-target scenes.
    #[serde(default = "default_true")]
    pub separated: bool,
}

impl TrialConfig {
    pub fn new(dims: DimensionSpec, k: usize, t: usize, dictionary: DictionaryKind) -> Self {
        TrialConfig {
            dims,
            k,
            t,
            dictionary,
            qam: QamOrder::Q4,
            snr_db: None,
            snr_ref: SnrReference::Unit,
            sigma_reading: SigmaReading::Norm,
            solver: SolverConfig::default(),
            localize: LocalizeOptions::default(),
            separated: true,
        }
    }

    pub fn noise(&self) -> NoiseModel {
        NoiseModel {
            snr_db: self.snr_db.unwrap_or(f64::INFINITY),
            reference: self.snr_ref,
            sigma_reading: self.sigma_reading,
        }
    }
}

/// A generated problem instance: ground truth plus observations.
#[derive(Clone, Debug)]
pub struct Instance {
    pub config: TrialConfig,
    pub seed: u64,
    pub scene: TargetScene,
    pub streams: Vec<SymbolStream>,
    pub dictionary: Dictionary,
    pub y_clean: Vec<C64>,
    pub observation: NoisyObservation,
}

/// Draws the scene, streams and dictionary of a trial and observes it.
pub fn generate_instance(config: &TrialConfig, seed: u64) -> Result<Instance> {
    if config.t == 0 {
        return Err(Error::InvalidArgument("T must be positive".into()));
    }
    let mut rng = stream(seed, "scene");
    let targets = random_targets(&config.dims, config.k, config.separated, &mut rng)?;
    let streams = (0..config.k)
        .map(|k| encode(config.qam, config.t, derive_seed(seed, &format!("symbols/{k}"))))
        .collect::<Result<Vec<_>>>()?;
    let scene = TargetScene::new(
        SceneConfig { spec: config.dims.clone(), k: config.k, t: config.t },
        targets,
        streams.iter().map(|s| s.h.clone()).collect(),
    )?;
    instance_from_scene(config, seed, scene, streams)
}

/// Observes a given scene with a freshly drawn dictionary and noise.
pub fn instance_from_scene(config: &TrialConfig, seed: u64, scene: TargetScene, streams: Vec<SymbolStream>) -> Result<Instance> {
    let dictionary =
        gen_dictionary(config.dictionary, config.dims.dictionary_rows(), config.t, derive_seed(seed, "dictionary"))?;
    let ens = build_measurement_ensemble(&config.dims, &dictionary)?;
    let y_clean = ens.forward(&build_lifted(&scene))?;
    let observation = add_awgn(&y_clean, &config.noise(), derive_seed(seed, "noise"))?;
    Ok(Instance { config: config.clone(), seed, scene, streams, dictionary, y_clean, observation })
}

/// Largest relative adjoint mismatch over `pairs` random `(U, q)` draws.
pub fn check_adjoint(spec: &DimensionSpec, t: usize, kind: DictionaryKind, seed: u64, pairs: usize) -> Result<f64> {
    let dict = gen_dictionary(kind, spec.dictionary_rows(), t, derive_seed(seed, "dictionary"))?;
    let ens = build_measurement_ensemble(spec, &dict)?;
    let mut rng = stream(seed, "adjoint");
    let mut draw = || {
        let re: f64 = StandardNormal.sample(&mut rng);
        let im: f64 = StandardNormal.sample(&mut rng);
        C64::new(re, im)
    };
    let mut worst = 0.0f64;
    for _ in 0..pairs {
        let u = LiftedMatrix(faer::Mat::from_fn(t, spec.m(), |_, _| draw()));
        let q: Vec<C64> = (0..ens.len()).map(|_| draw()).collect();
        worst = worst.max(ens.adjoint_mismatch(&u, &q)?);
    }
    Ok(worst)
}

/// Solver summary kept with every processed trial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveSummary {
    pub objective_value: f64,
    pub status: SolveStatus,
    pub kkt_residuals: KktResiduals,
    pub iterations: usize,
    pub path: SolverPath,
}

impl From<&DualSolution> for SolveSummary {
    fn from(s: &DualSolution) -> Self {
        SolveSummary {
            objective_value: s.objective_value,
            status: s.status,
            kkt_residuals: s.kkt_residuals,
            iterations: s.iterations,
            path: s.path,
        }
    }
}

/// Everything a processed trial produced.
#[derive(Clone, Debug)]
pub struct TrialOutcome {
    pub metrics: TrialMetrics,
    pub solution: Option<DualSolution>,
    pub peaks: PeakSet,
    pub decode: Option<DecodeResult>,
    /// Solver notes or the reason for a failure.
    pub diagnostics: Option<String>,
    /// The pipeline broke down; metrics are the failure values.
    pub failed: bool,
}

/// Solve, localize, decode and score an instance. Pipeline failures are
/// reported as failed trials with diagnostics.
pub fn process_instance(inst: &Instance) -> Result<TrialOutcome> {
    let start = Instant::now();
    let cfg = &inst.config;
    let ens = build_measurement_ensemble(&cfg.dims, &inst.dictionary)?;
    let y = &inst.observation.y;
    let problem = if cfg.noise().is_noiseless() {
        build_noiseless_sdr(y, &ens)?
    } else {
        build_noisy_sdr(y, &ens, inst.observation.sigma)?
    };
    let failed = |msg: String, solution: Option<DualSolution>, peaks: PeakSet| TrialOutcome {
        metrics: TrialMetrics { k_hat: peaks.k_hat(), ..TrialMetrics::failed(start.elapsed().as_secs_f64()) },
        solution,
        peaks,
        decode: None,
        diagnostics: Some(msg),
        failed: true,
    };
    let sol = match solve(&problem, &cfg.solver) {
        Ok(s) => s,
        Err(e) => return Ok(failed(format!("solver: {e}"), None, PeakSet::default())),
    };
    let poly = DualPolynomial::new(sol.f.clone(), cfg.dims.clone())?;
    let mut peaks = localize(&poly, &cfg.localize)?;
    // The certificate may touch the unit ball away from the targets (with
    // noise, or where the relaxation is loose); keep the fewest peaks that
    // explain y to the noise level.
    let bound = if cfg.noise().is_noiseless() {
        NOISELESS_FIT * y.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    } else {
        cfg.noise().noise_bound(inst.observation.sigma)
    };
    if peaks.k_hat() > 1 {
        let keep = select_support(y, &ens, &peaks.taus(), bound)?;
        peaks = PeakSet { peaks: keep.into_iter().map(|i| peaks.peaks[i].clone()).collect() };
    }
    score(inst, &ens, sol, peaks, start)
}

fn score(inst: &Instance, ens: &MeasurementEnsemble, sol: DualSolution, peaks: PeakSet, start: Instant) -> Result<TrialOutcome> {
    let cfg = &inst.config;
    let truth_taus: Vec<Vec<f64>> = inst.scene.targets.iter().map(|t| t.tau.clone()).collect();
    let u = build_lifted(&inst.scene);
    let diagnostics = (sol.status != SolveStatus::Optimal).then(|| format!("solver status {:?}", sol.status));
    if peaks.k_hat() == 0 {
        let matching = match_targets(&truth_taus, &[]);
        let metrics = TrialMetrics::new(
            nmse(&cfg.dims, &inst.scene.targets, &[])?,
            evaluate_ser(&[], &inst.streams, &matching),
            1.0,
            0,
            start.elapsed().as_secs_f64(),
        );
        return Ok(TrialOutcome { metrics, solution: Some(sol), peaks, decode: None, diagnostics, failed: false });
    }
    let taus = peaks.taus();
    let dec = match ls_decode(&inst.observation.y, ens, &taus, cfg.qam) {
        Ok(d) => d,
        Err(e) => {
            return Ok(TrialOutcome {
                metrics: TrialMetrics { k_hat: peaks.k_hat(), ..TrialMetrics::failed(start.elapsed().as_secs_f64()) },
                solution: Some(sol),
                peaks,
                decode: None,
                diagnostics: Some(format!("decode: {e}")),
                failed: true,
            })
        }
    };
    let est: Vec<(Vec<f64>, C64)> = dec.targets.iter().map(|t| (t.tau.clone(), t.alpha_hat)).collect();
    let matching = match_targets(&truth_taus, &taus);
    let symbols: Vec<Vec<usize>> = dec.targets.iter().map(|t| t.symbols.clone()).collect();
    let metrics = TrialMetrics::new(
        nmse(&cfg.dims, &inst.scene.targets, &est)?,
        evaluate_ser(&symbols, &inst.streams, &matching),
        lift_error(&u, &dec.lifted(ens)?)?,
        peaks.k_hat(),
        start.elapsed().as_secs_f64(),
    );
    Ok(TrialOutcome { metrics, solution: Some(sol), peaks, decode: Some(dec), diagnostics, failed: false })
}

/// Runs one full trial.
pub fn run_trial(config: &TrialConfig, seed: u64) -> Result<TrialOutcome> {
    process_instance(&generate_instance(config, seed)?)
}

/// Kind of experiment described by a plan.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlanKind {
    Single,
    SnrSweep,
    PhaseTransition,
    DualSurface,
    TheoremProbe,
}

fn default_trials() -> usize {
    DEFAULT_TRIALS
}

fn default_success_rate() -> f64 {
    DEFAULT_SUCCESS_RATE
}

fn default_qams() -> Vec<QamOrder> {
    vec![QamOrder::Q4]
}

/// A sweep over trial configurations.
///
/// `l_obs` lists observation counts that replace the sizes of `dims`
/// (1D specs take the count as their size; 2D delay-doppler specs take its
/// square root per dimension). `snr_db` entries of `null` mean noiseless.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub kind: PlanKind,
    pub dims: DimensionSpec,
    pub k: Vec<usize>,
    pub t: Vec<usize>,
    #[serde(default)]
    pub l_obs: Vec<usize>,
    #[serde(default)]
    pub snr_db: Vec<Option<f64>>,
    pub dictionaries: Vec<DictionaryKind>,
    #[serde(default = "default_qams")]
    pub qam: Vec<QamOrder>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub snr_ref: SnrReference,
    #[serde(default)]
    pub sigma_reading: SigmaReading,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub localize: LocalizeOptions,
    #[serde(default = "default_success_rate")]
    pub success_rate: f64,
}

/// One point of a sweep grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub config: TrialConfig,
    pub l_obs: usize,
}

/// The spec with `l` observations in place of the sizes of `base`.
pub fn dims_for_l_obs(base: &DimensionSpec, l: usize) -> Result<DimensionSpec> {
    let dims = base.dims();
    match dims {
        [d] => DimensionSpec::single(d.kind, l),
        [a, b] if a.kind == DimKind::Delay && b.kind == DimKind::Doppler => {
            let s = (l as f64).sqrt().round() as usize;
            if s * s != l {
                return Err(Error::InvalidArgument(format!("2D L_obs must be a square, got {l}")));
            }
            DimensionSpec::parse(&format!("delay:{s},doppler:{s}"))
        }
        _ => Err(Error::InvalidSpec(format!("L_obs sweeps need a 1D or delay-doppler spec, got {base}"))),
    }
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidArgument("trials must be >= 1".into()));
        }
        if self.k.is_empty() || self.t.is_empty() || self.dictionaries.is_empty() || self.qam.is_empty() {
            return Err(Error::InvalidArgument("swept grids must be non-empty".into()));
        }
        if matches!(self.kind, PlanKind::SnrSweep) && self.snr_db.is_empty() {
            return Err(Error::InvalidArgument("an SNR sweep needs SNR points".into()));
        }
        if matches!(self.kind, PlanKind::PhaseTransition | PlanKind::TheoremProbe) && self.l_obs.is_empty() {
            return Err(Error::InvalidArgument("this experiment needs an L_obs list".into()));
        }
        if !(self.success_rate > 0.0 && self.success_rate <= 1.0) {
            return Err(Error::InvalidArgument("success_rate must lie in (0, 1]".into()));
        }
        if self.snr_db.iter().flatten().any(|s| !s.is_finite()) {
            return Err(Error::InvalidArgument("SNR points must be finite (null for noiseless)".into()));
        }
        for &l in &self.l_obs {
            dims_for_l_obs(&self.dims, l)?;
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("plans serialize");
        hex(&Sha256::digest(json.as_bytes()))
    }

    fn trial_config(&self, dims: DimensionSpec, k: usize, t: usize, kind: DictionaryKind, qam: QamOrder, snr: Option<f64>) -> TrialConfig {
        TrialConfig {
            dims,
            k,
            t,
            dictionary: kind,
            qam,
            snr_db: snr,
            snr_ref: self.snr_ref,
            sigma_reading: self.sigma_reading,
            solver: self.solver.clone(),
            localize: self.localize.clone(),
            separated: true,
        }
    }

    /// All cells in deterministic order: dictionary, QAM, L_obs, K, T, SNR.
    pub fn cells(&self) -> Result<Vec<Cell>> {
        let ls: Vec<Option<usize>> = if self.l_obs.is_empty() { vec![None] } else { self.l_obs.iter().map(|&l| Some(l)).collect() };
        let snrs: Vec<Option<f64>> = if self.snr_db.is_empty() { vec![None] } else { self.snr_db.clone() };
        let mut cells = Vec::new();
        for &kind in &self.dictionaries {
            for &qam in &self.qam {
                for l in &ls {
                    let dims = match l {
                        Some(l) => dims_for_l_obs(&self.dims, *l)?,
                        None => self.dims.clone(),
                    };
                    for &k in &self.k {
                        for &t in &self.t {
                            for &snr in &snrs {
                                let config = self.trial_config(dims.clone(), k, t, kind, qam, snr);
                                cells.push(Cell { l_obs: dims.observations(), config });
                            }
                        }
                    }
                }
            }
        }
        Ok(cells)
    }

    /// Seed of trial `i` in a cell; shared across dictionaries, QAM orders and SNRs.
    pub fn trial_seed(&self, cell: &Cell, i: usize) -> u64 {
        let c = &cell.config;
        derive_seed(self.seed, &format!("trial/{i}/K{}/T{}/{}", c.k, c.t, c.dims.label()))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// One row of a results table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_id: usize,
    pub seed: u64,
    pub dims: String,
    pub k: usize,
    pub t: usize,
    pub l_obs: usize,
    pub dictionary: DictionaryKind,
    pub qam: QamOrder,
    pub snr_db: Option<f64>,
    pub metrics: TrialMetrics,
    pub diagnostics: Option<String>,
    pub failed: bool,
}

/// Worker pool sized by `LANM_WORKERS` (default: available parallelism).
pub fn worker_pool() -> Result<rayon::ThreadPool> {
    let n = match std::env::var(WORKERS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| Error::InvalidArgument(format!("{WORKERS_ENV} must be a positive integer, got `{v}`")))?,
        Err(_) => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("worker pool: {e}")))
}

fn run_one(cfg: &TrialConfig, seed: u64) -> (TrialMetrics, Option<String>, bool) {
    match run_trial(cfg, seed) {
        Ok(o) => (o.metrics, o.diagnostics, o.failed),
        Err(e) => (TrialMetrics::failed(0.0), Some(e.to_string()), true),
    }
}

/// Runs `trials` seeds of every listed cell on the worker pool; rows come
/// back in cell-major, trial-minor order.
pub fn run_cells(plan: &ExperimentPlan, cells: &[Cell]) -> Result<Vec<TrialRecord>> {
    let work: Vec<(usize, usize)> = (0..cells.len()).flat_map(|c| (0..plan.trials).map(move |i| (c, i))).collect();
    let pool = worker_pool()?;
    let results: Vec<(TrialMetrics, Option<String>, bool)> = pool.install(|| {
        work.par_iter()
            .map(|&(c, i)| run_one(&cells[c].config, plan.trial_seed(&cells[c], i)))
            .collect()
    });
    Ok(work
        .iter()
        .zip(results)
        .enumerate()
        .map(|(id, (&(c, i), (metrics, diagnostics, failed)))| {
            let cfg = &cells[c].config;
            TrialRecord {
                trial_id: id,
                seed: plan.trial_seed(&cells[c], i),
                dims: cfg.dims.label(),
                k: cfg.k,
                t: cfg.t,
                l_obs: cells[c].l_obs,
                dictionary: cfg.dictionary,
                qam: cfg.qam,
                snr_db: cfg.snr_db,
                metrics,
                diagnostics,
                failed,
            }
        })
        .collect())
}

/// Aggregate over the trials of one cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub dims: String,
    pub k: usize,
    pub t: usize,
    pub l_obs: usize,
    pub dictionary: DictionaryKind,
    pub qam: QamOrder,
    pub snr_db: Option<f64>,
    pub trials: usize,
    pub failures: usize,
    pub mean_nmse: f64,
    pub mean_ser: f64,
    pub success_rate: f64,
    pub mean_k_hat: f64,
}

/// Means per cell, in cell order.
pub fn summarize(plan: &ExperimentPlan, cells: &[Cell], records: &[TrialRecord]) -> Vec<CellSummary> {
    cells
        .iter()
        .enumerate()
        .map(|(c, cell)| {
            let rows = &records[c * plan.trials..(c + 1) * plan.trials];
            let n = rows.len() as f64;
            let cfg = &cell.config;
            CellSummary {
                dims: cfg.dims.label(),
                k: cfg.k,
                t: cfg.t,
                l_obs: cell.l_obs,
                dictionary: cfg.dictionary,
                qam: cfg.qam,
                snr_db: cfg.snr_db,
                trials: rows.len(),
                failures: rows.iter().filter(|r| r.failed).count(),
                mean_nmse: rows.iter().map(|r| r.metrics.nmse).sum::<f64>() / n,
                mean_ser: rows.iter().map(|r| r.metrics.ser).sum::<f64>() / n,
                success_rate: rows.iter().filter(|r| r.metrics.success).count() as f64 / n,
                mean_k_hat: rows.iter().map(|r| r.metrics.k_hat as f64).sum::<f64>() / n,
            }
        })
        .collect()
}

/// Per-trial rows and per-cell means of a sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    pub records: Vec<TrialRecord>,
    pub summary: Vec<CellSummary>,
}

fn run_plan(plan: &ExperimentPlan) -> Result<SweepResult> {
    plan.validate()?;
    let cells = plan.cells()?;
    let records = run_cells(plan, &cells)?;
    let summary = summarize(plan, &cells, &records);
    Ok(SweepResult { records, summary })
}

/// NMSE and SER against SNR per dictionary kind.
pub fn snr_sweep(plan: &ExperimentPlan) -> Result<SweepResult> {
    if plan.snr_db.is_empty() {
        return Err(Error::InvalidArgument("an SNR sweep needs SNR points".into()));
    }
    run_plan(plan)
}

/// Success rate over (K, T) per L_obs and dictionary kind.
pub fn phase_transition(plan: &ExperimentPlan) -> Result<SweepResult> {
    if plan.l_obs.is_empty() {
        return Err(Error::InvalidArgument("a phase transition needs an L_obs list".into()));
    }
    run_plan(plan)
}

/// Minimal L_obs reaching the target success rate for one (kind, K, T).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub dictionary: DictionaryKind,
    pub mu: f64,
    pub k: usize,
    pub t: usize,
    /// `None` when no listed L_obs reaches the target.
    pub min_l_obs: Option<usize>,
    /// Success rates of the L_obs values the bisection visited.
    pub visited: Vec<(usize, f64)>,
}

/// Monotonicity verdicts of a scaling probe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub rows: Vec<ProbeRow>,
    pub monotone_in_k: bool,
    pub monotone_in_t: bool,
    /// Dictionaries with smaller coherence never need more observations.
    pub monotone_in_mu: bool,
}

fn rank(v: Option<usize>) -> usize {
    v.unwrap_or(usize::MAX)
}

/// Bisection over the sorted L_obs list for each (kind, K, T).
pub fn theorem_scaling_probe(plan: &ExperimentPlan) -> Result<ProbeReport> {
    plan.validate()?;
    let mut ls = plan.l_obs.clone();
    ls.sort_unstable();
    ls.dedup();
    let mut rows = Vec::new();
    for &kind in &plan.dictionaries {
        for &k in &plan.k {
            for &t in &plan.t {
                let mut visited = BTreeMap::new();
                let mut rate = |l: usize| -> Result<f64> {
                    if let Some(&r) = visited.get(&l) {
                        return Ok(r);
                    }
                    let cfg = plan.trial_config(dims_for_l_obs(&plan.dims, l)?, k, t, kind, plan.qam[0], plan.snr_db.first().copied().flatten());
                    let cell = Cell { l_obs: cfg.dims.observations(), config: cfg };
                    let recs = run_cells(plan, std::slice::from_ref(&cell))?;
                    let r = recs.iter().filter(|r| r.metrics.success).count() as f64 / recs.len() as f64;
                    visited.insert(l, r);
                    Ok(r)
                };
                // Smallest index whose success rate reaches the target.
                let (mut lo, mut hi) = (0usize, ls.len());
                while lo < hi {
                    let mid = (lo + hi) / 2;
                    if rate(ls[mid])? >= plan.success_rate {
                        hi = mid;
                    } else {
                        lo = mid + 1;
                    }
                }
                let min_l_obs = ls.get(lo).copied();
                let mu = coherence(&gen_dictionary(kind, plan.dims.dictionary_rows().max(t), t, plan.seed)?);
                rows.push(ProbeRow {
                    dictionary: kind,
                    mu,
                    k,
                    t,
                    min_l_obs: min_l_obs.map(|l| dims_for_l_obs(&plan.dims, l).map(|d| d.observations())).transpose()?,
                    visited: visited.into_iter().collect(),
                });
            }
        }
    }
    let find = |kind: DictionaryKind, k: usize, t: usize| rows.iter().find(|r| r.dictionary == kind && r.k == k && r.t == t);
    let mut ks = plan.k.clone();
    ks.sort_unstable();
    let mut ts = plan.t.clone();
    ts.sort_unstable();
    let mut monotone_in_k = true;
    let mut monotone_in_t = true;
    let mut monotone_in_mu = true;
    for &kind in &plan.dictionaries {
        for &t in &ts {
            for w in ks.windows(2) {
                if let (Some(a), Some(b)) = (find(kind, w[0], t), find(kind, w[1], t)) {
                    monotone_in_k &= rank(a.min_l_obs) <= rank(b.min_l_obs);
                }
            }
        }
        for &k in &ks {
            for w in ts.windows(2) {
                if let (Some(a), Some(b)) = (find(kind, k, w[0]), find(kind, k, w[1])) {
                    monotone_in_t &= rank(a.min_l_obs) <= rank(b.min_l_obs);
                }
            }
        }
    }
    for a in &rows {
        for b in &rows {
            if a.k == b.k && a.t == b.t && a.mu < b.mu {
                monotone_in_mu &= rank(a.min_l_obs) <= rank(b.min_l_obs);
            }
        }
    }
    Ok(ProbeReport { rows, monotone_in_k, monotone_in_t, monotone_in_mu })
}

/// A dual-polynomial surface with the true and estimated shifts.
#[derive(Clone, Debug)]
pub struct DualSurface {
    pub spec: DimensionSpec,
    pub grid: GridValues,
    pub truth: Vec<Vec<f64>>,
    pub peaks: PeakSet,
    pub solution: SolveSummary,
}

/// Solves an instance and evaluates its certificate on a grid.
pub fn dual_surface(inst: &Instance, oversample: usize) -> Result<DualSurface> {
    let outcome = process_instance(inst)?;
    let sol = outcome.solution.ok_or_else(|| Error::Numerical(outcome.diagnostics.unwrap_or_default()))?;
    let spec = inst.config.dims.clone();
    let poly = DualPolynomial::new(sol.f.clone(), spec.clone())?;
    let grid = eval_grid(&poly, effective_oversample(&spec, oversample))?;
    Ok(DualSurface {
        spec,
        grid,
        truth: inst.scene.targets.iter().map(|t| t.tau.clone()).collect(),
        peaks: outcome.peaks,
        solution: SolveSummary::from(&sol),
    })
}

/// Full-precision scientific notation (17 significant digits).
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "nan".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

fn fmt_snr(s: Option<f64>) -> String {
    s.map_or_else(|| "inf".into(), fmt_f64)
}

/// Per-trial CSV. `runtime_s` is wall-clock time and only written on request.
pub fn records_csv(records: &[TrialRecord], with_runtime: bool) -> String {
    let mut out = String::from("trial_id,seed,dims,K,T,L_obs,dictionary,qam,snr_db,nmse,ser,lift_rel_error,success,k_hat,failed");
    out.push_str(if with_runtime { ",runtime_s\n" } else { "\n" });
    for r in records {
        let m = &r.metrics;
        let _ = write!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.trial_id,
            r.seed,
            r.dims,
            r.k,
            r.t,
            r.l_obs,
            r.dictionary,
            r.qam,
            fmt_snr(r.snr_db),
            fmt_f64(m.nmse),
            fmt_f64(m.ser),
            fmt_f64(m.lift_rel_error),
            m.success,
            m.k_hat,
            r.failed
        );
        if with_runtime {
            let _ = write!(out, ",{}", fmt_f64(m.runtime_s));
        }
        out.push('\n');
    }
    out
}

/// Per-cell CSV.
pub fn summary_csv(rows: &[CellSummary]) -> String {
    let mut out = String::from("dims,K,T,L_obs,dictionary,qam,snr_db,trials,failures,mean_nmse,mean_ser,success_rate,mean_k_hat\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.dims,
            r.k,
            r.t,
            r.l_obs,
            r.dictionary,
            r.qam,
            fmt_snr(r.snr_db),
            r.trials,
            r.failures,
            fmt_f64(r.mean_nmse),
            fmt_f64(r.mean_ser),
            fmt_f64(r.success_rate),
            fmt_f64(r.mean_k_hat)
        );
    }
    out
}

/// Scaling-probe CSV.
pub fn probe_csv(report: &ProbeReport) -> String {
    let mut out = String::from("dictionary,mu,K,T,min_l_obs\n");
    for r in &report.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.dictionary,
            fmt_f64(r.mu),
            r.k,
            r.t,
            r.min_l_obs.map_or_else(|| "none".into(), |l| l.to_string())
        );
    }
    out
}

/// Surface CSV: one column per active dimension, then the norm.
pub fn surface_csv(s: &DualSurface) -> String {
    let mut out = String::new();
    for d in s.spec.dims() {
        let _ = write!(out, "tau_{},", d.kind);
    }
    out.push_str("norm\n");
    for i in 0..s.grid.len() {
        for x in s.grid.tau(i) {
            out.push_str(&fmt_f64(x));
            out.push(',');
        }
        out.push_str(&fmt_f64(s.grid.values[i]));
        out.push('\n');
    }
    out
}

/// Run manifest, written before results and completed afterwards.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub artifact: String,
    pub version: String,
    pub command: String,
    pub plan_hash: String,
    pub seed: Option<u64>,
    pub outputs: Vec<String>,
    pub wall_time_s: Option<f64>,
    pub complete: bool,
}

impl Manifest {
    pub fn new(command: &str, plan_json: &str, seed: Option<u64>, outputs: Vec<String>) -> Self {
        Manifest {
            artifact: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            plan_hash: hex(&Sha256::digest(plan_json.as_bytes())),
            seed,
            outputs,
            wall_time_s: None,
            complete: false,
        }
    }

    pub fn write(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(kind: DictionaryKind) -> TrialConfig {
        TrialConfig::new(DimensionSpec::parse("delay:41").unwrap(), 2, 2, kind)
    }

    #[test]
    fn noiseless_trial_succeeds_and_repeats() {
        let cfg = small(DictionaryKind::Hadamard);
        let a = run_trial(&cfg, 3).unwrap();
        assert!(a.metrics.success, "{:?} {:?}", a.metrics, a.diagnostics);
        assert_eq!(a.metrics.k_hat, 2);
        assert_eq!(a.metrics.ser, 0.0);
        let b = run_trial(&cfg, 3).unwrap();
        assert_eq!(a.metrics.nmse, b.metrics.nmse);
        assert_eq!(a.metrics.lift_rel_error, b.metrics.lift_rel_error);
    }

    #[test]
    fn infeasible_packing_is_an_error() {
        let cfg = TrialConfig::new(DimensionSpec::parse("delay:11").unwrap(), 2, 2, DictionaryKind::Gaussian);
        assert!(matches!(run_trial(&cfg, 0), Err(Error::SceneGeneration(_))));
    }

    #[test]
    fn plan_cells_and_seeds() {
        let plan: ExperimentPlan = serde_json::from_str(
            r#"{"kind":"phase-transition","dims":[{"name":"delay","size":21}],"k":[1,2],"t":[1,2],
                "l_obs":[21,25],"dictionaries":["hadamard","gaussian"],"trials":2,"seed":5}"#,
        )
        .unwrap();
        plan.validate().unwrap();
        let cells = plan.cells().unwrap();
        assert_eq!(cells.len(), 2 * 2 * 2 * 2);
        assert_eq!(cells[0].config.dictionary, DictionaryKind::Hadamard);
        // Common scenes across dictionary kinds.
        assert_eq!(plan.trial_seed(&cells[0], 1), plan.trial_seed(&cells[8], 1));
        assert_ne!(plan.trial_seed(&cells[0], 0), plan.trial_seed(&cells[0], 1));
        assert_eq!(plan.hash(), plan.clone().hash());
        let mut bad = plan.clone();
        bad.trials = 0;
        assert!(bad.validate().is_err());
        bad = plan;
        bad.l_obs = vec![20];
        assert!(bad.validate().is_err());
    }

    #[test]
    fn dims_mapping() {
        let d = dims_for_l_obs(&DimensionSpec::parse("delay:15,doppler:15").unwrap(), 81).unwrap();
        assert_eq!(d.label(), "delay:9xdoppler:9");
        assert!(dims_for_l_obs(&DimensionSpec::parse("delay:15,doppler:15").unwrap(), 80).is_err());
        assert_eq!(dims_for_l_obs(&DimensionSpec::parse("delay:15").unwrap(), 33).unwrap().m(), 33);
    }

    #[test]
    fn csv_formatting() {
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_f64(f64::INFINITY), "inf");
        let rec = TrialRecord {
            trial_id: 0,
            seed: 9,
            dims: "delay:21".into(),
            k: 1,
            t: 2,
            l_obs: 21,
            dictionary: DictionaryKind::Dft,
            qam: QamOrder::Q16,
            snr_db: Some(10.0),
            metrics: TrialMetrics::new(0.5, 0.0, 1e-4, 1, 1.25),
            diagnostics: None,
            failed: false,
        };
        let csv = records_csv(std::slice::from_ref(&rec), false);
        assert!(!csv.contains("runtime"));
        assert!(csv.lines().nth(1).unwrap().starts_with("0,9,delay:21,1,2,21,dft,16,1.0000000000000000e1,"));
        assert!(records_csv(&[rec], true).contains(",runtime_s"));
    }
}
