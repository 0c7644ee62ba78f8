//! `lanm`: simulate observations, solve the relaxation and run the
//! experiment sweeps from the command line.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use lanm::dictionary::DictionaryKind;
use lanm::harness::{
    check_adjoint, dual_surface, phase_transition, probe_csv, process_instance, records_csv, snr_sweep, summary_csv,
    surface_csv, theorem_scaling_probe, ExperimentPlan, Instance, Manifest, PlanKind, SweepResult, TrialConfig,
};
use lanm::io::{read_json, write_json, ObservationFile, SceneFile, SolutionFile};
use lanm::localization::Peak;
use lanm::metrics::{SigmaReading, SnrReference};
use lanm::model::DimensionSpec;
use lanm::sdr::SolverPath;
use lanm::waveform::QamOrder;

/// Largest adjoint mismatch accepted by `check-adjoint`.
const ADJOINT_TOL: f64 = 1e-10;

#[derive(Parser)]
#[command(name = "lanm", version, about = "Lifted atomic norm receiver: radar parameters and symbols from one observation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a scene and write its observation.
    Simulate(SimulateArgs),
    /// Run the receiver on an observation written by `simulate`.
    Solve(SolveArgs),
    /// NMSE and SER against SNR.
    SweepSnr(SweepArgs),
    /// Success rate over (K, T, L_obs).
    PhaseTransition(SweepArgs),
    /// Dual-polynomial surface of one scene.
    DualSurface(SurfaceArgs),
    /// Verify the measurement adjoint on random pairs.
    CheckAdjoint(AdjointArgs),
    /// Minimal L_obs reaching the target success rate.
    TheoremProbe(SweepArgs),
}

/// An SNR in dB, or `inf` for noiseless.
#[derive(Clone, Copy, Debug)]
struct Snr(Option<f64>);

fn parse_snr(s: &str) -> Result<Snr, String> {
    let t = s.trim();
    if t.eq_ignore_ascii_case("inf") || t.eq_ignore_ascii_case("none") {
        return Ok(Snr(None));
    }
    match t.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Snr(Some(v))),
        _ => Err(format!("expected a finite SNR in dB or `inf`, got `{s}`")),
    }
}

/// Settings shared by the single-scene commands.
#[derive(Args)]
struct TrialFlags {
    #[arg(long)]
    dims: Option<DimensionSpec>,
    #[arg(long = "T")]
    t: Option<usize>,
    #[arg(long)]
    dictionary: Option<DictionaryKind>,
    #[arg(long)]
    qam: Option<QamOrder>,
    #[arg(long, value_parser = parse_snr)]
    snr: Option<Snr>,
    #[arg(long = "snr-ref")]
    snr_ref: Option<SnrReference>,
    #[arg(long = "sigma-reading")]
    sigma_reading: Option<SigmaReading>,
    #[arg(long = "solver-path")]
    solver_path: Option<SolverPath>,
    #[arg(long)]
    oversample: Option<usize>,
}

impl TrialFlags {
    fn apply(&self, cfg: &mut TrialConfig) {
        if let Some(d) = &self.dims {
            cfg.dims = d.clone();
        }
        if let Some(t) = self.t {
            cfg.t = t;
        }
        if let Some(k) = self.dictionary {
            cfg.dictionary = k;
        }
        if let Some(q) = self.qam {
            cfg.qam = q;
        }
        if let Some(s) = self.snr {
            cfg.snr_db = s.0;
        }
        if let Some(r) = self.snr_ref {
            cfg.snr_ref = r;
        }
        if let Some(r) = self.sigma_reading {
            cfg.sigma_reading = r;
        }
        if let Some(p) = self.solver_path {
            cfg.solver.path = p;
        }
        if let Some(o) = self.oversample {
            cfg.localize.oversample = o;
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// Scene file.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    flags: TrialFlags,
}

#[derive(Args)]
struct SolveArgs {
    /// Observation file written by `simulate`.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long = "solver-path")]
    solver_path: Option<SolverPath>,
    #[arg(long)]
    oversample: Option<usize>,
    /// Keep wall-clock runtimes in the output.
    #[arg(long = "with-runtime")]
    with_runtime: bool,
}

#[derive(Args)]
struct SweepArgs {
    /// Experiment plan file.
    #[arg(long)]
    config: PathBuf,
    /// Base seed; replaces the plan's.
    #[arg(long)]
    seed: u64,
    /// Per-trial CSV; summary and manifest are written beside it.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    dims: Option<DimensionSpec>,
    #[arg(long = "T", value_delimiter = ',')]
    t: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    dictionary: Vec<DictionaryKind>,
    #[arg(long, value_delimiter = ',')]
    qam: Vec<QamOrder>,
    #[arg(long, value_delimiter = ',', value_parser = parse_snr)]
    snr: Vec<Snr>,
    #[arg(long = "snr-ref")]
    snr_ref: Option<SnrReference>,
    #[arg(long = "sigma-reading")]
    sigma_reading: Option<SigmaReading>,
    #[arg(long = "solver-path")]
    solver_path: Option<SolverPath>,
    #[arg(long)]
    oversample: Option<usize>,
    /// Add a wall-clock `runtime_s` column (breaks byte-identical reruns).
    #[arg(long = "with-runtime")]
    with_runtime: bool,
}

#[derive(Args)]
struct SurfaceArgs {
    /// Scene file.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    flags: TrialFlags,
}

#[derive(Args)]
struct AdjointArgs {
    #[arg(long)]
    dims: DimensionSpec,
    #[arg(long = "T")]
    t: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value = "gaussian")]
    dictionary: DictionaryKind,
    #[arg(long, default_value_t = 100)]
    pairs: usize,
    /// Optional JSON report.
    #[arg(long)]
    out: Option<PathBuf>,
}

type CliResult = Result<bool, Box<dyn std::error::Error>>;

/// `dir/stem.suffix` beside `out`.
fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "out".into());
    out.with_file_name(format!("{stem}.{suffix}"))
}

fn path_list(paths: &[&Path]) -> Vec<String> {
    paths.iter().map(|p| p.display().to_string()).collect()
}

/// Writes the manifest, runs `work`, then completes the manifest.
fn with_manifest<T: Serialize>(
    command: &str,
    input: &T,
    seed: Option<u64>,
    out: &Path,
    outputs: &[&Path],
    work: impl FnOnce() -> CliResult,
) -> CliResult {
    let start = Instant::now();
    let path = sibling(out, "manifest.json");
    let mut manifest = Manifest::new(command, &serde_json::to_string(input)?, seed, path_list(outputs));
    manifest.write(&path)?;
    let ok = work()?;
    manifest.wall_time_s = Some(start.elapsed().as_secs_f64());
    manifest.complete = ok;
    manifest.write(&path)?;
    Ok(ok)
}

fn load_scene(path: &Path, flags: &TrialFlags) -> Result<SceneFile, Box<dyn std::error::Error>> {
    let mut scene: SceneFile = read_json(path)?;
    flags.apply(&mut scene.config);
    Ok(scene)
}

fn simulate(a: &SimulateArgs) -> CliResult {
    let scene = load_scene(&a.config, &a.flags)?;
    with_manifest("simulate", &scene, Some(a.seed), &a.out, &[&a.out], || {
        let inst = scene.instance(a.seed)?;
        write_json(&a.out, &ObservationFile::from(&inst))?;
        Ok(true)
    })
}

fn solve(a: &SolveArgs) -> CliResult {
    let mut obs: ObservationFile = read_json(&a.config)?;
    if let Some(p) = a.solver_path {
        obs.config.solver.path = p;
    }
    if let Some(o) = a.oversample {
        obs.config.localize.oversample = o;
    }
    let seed = obs.seed;
    with_manifest("solve", &obs.config, Some(seed), &a.out, &[&a.out], || {
        let inst = Instance::try_from(obs.clone())?;
        let outcome = process_instance(&inst)?;
        write_json(&a.out, &SolutionFile::new(seed, &outcome, a.with_runtime))?;
        if let Some(d) = &outcome.diagnostics {
            eprintln!("note: {d}");
        }
        Ok(!outcome.failed)
    })
}

fn load_plan(a: &SweepArgs, kind: PlanKind) -> Result<ExperimentPlan, Box<dyn std::error::Error>> {
    let mut plan: ExperimentPlan = read_json(&a.config)?;
    plan.kind = kind;
    plan.seed = a.seed;
    if let Some(n) = a.trials {
        plan.trials = n;
    }
    if let Some(d) = &a.dims {
        plan.dims = d.clone();
    }
    if !a.t.is_empty() {
        plan.t = a.t.clone();
    }
    if !a.dictionary.is_empty() {
        plan.dictionaries = a.dictionary.clone();
    }
    if !a.qam.is_empty() {
        plan.qam = a.qam.clone();
    }
    if !a.snr.is_empty() {
        plan.snr_db = a.snr.iter().map(|s| s.0).collect();
    }
    if let Some(r) = a.snr_ref {
        plan.snr_ref = r;
    }
    if let Some(r) = a.sigma_reading {
        plan.sigma_reading = r;
    }
    if let Some(p) = a.solver_path {
        plan.solver.path = p;
    }
    if let Some(o) = a.oversample {
        plan.localize.oversample = o;
    }
    plan.validate()?;
    Ok(plan)
}

fn sweep(command: &str, a: &SweepArgs, kind: PlanKind, run: fn(&ExperimentPlan) -> lanm::Result<SweepResult>) -> CliResult {
    let plan = load_plan(a, kind)?;
    let summary = sibling(&a.out, "summary.csv");
    with_manifest(command, &plan, Some(plan.seed), &a.out, &[&a.out, &summary], || {
        let res = run(&plan)?;
        std::fs::write(&a.out, records_csv(&res.records, a.with_runtime))?;
        std::fs::write(&summary, summary_csv(&res.summary))?;
        let failed = res.records.iter().filter(|r| r.failed).count();
        if failed > 0 {
            eprintln!("{failed} of {} trials failed; see the diagnostics in the summary", res.records.len());
        }
        Ok(failed == 0)
    })
}

fn theorem_probe(a: &SweepArgs) -> CliResult {
    let plan = load_plan(a, PlanKind::TheoremProbe)?;
    let report_path = sibling(&a.out, "json");
    with_manifest("theorem-probe", &plan, Some(plan.seed), &a.out, &[&a.out, &report_path], || {
        let report = theorem_scaling_probe(&plan)?;
        std::fs::write(&a.out, probe_csv(&report))?;
        write_json(&report_path, &report)?;
        println!("monotone in K: {}", report.monotone_in_k);
        println!("monotone in T: {}", report.monotone_in_t);
        println!("monotone in mu: {}", report.monotone_in_mu);
        Ok(true)
    })
}

#[derive(Serialize)]
struct SurfacePeaks<'a> {
    truth: &'a [Vec<f64>],
    peaks: &'a [Peak],
}

fn surface(a: &SurfaceArgs) -> CliResult {
    let scene = load_scene(&a.config, &a.flags)?;
    let peaks_path = sibling(&a.out, "peaks.json");
    with_manifest("dual-surface", &scene, Some(a.seed), &a.out, &[&a.out, &peaks_path], || {
        let inst = scene.instance(a.seed)?;
        let s = dual_surface(&inst, scene.config.localize.oversample)?;
        std::fs::write(&a.out, surface_csv(&s))?;
        write_json(&peaks_path, &SurfacePeaks { truth: &s.truth, peaks: &s.peaks.peaks })?;
        Ok(true)
    })
}

#[derive(Serialize)]
struct AdjointReport {
    dims: String,
    t: usize,
    dictionary: DictionaryKind,
    seed: u64,
    pairs: usize,
    max_residual: f64,
    pass: bool,
}

fn adjoint(a: &AdjointArgs) -> CliResult {
    let run = || -> CliResult {
        let worst = check_adjoint(&a.dims, a.t, a.dictionary, a.seed, a.pairs)?;
        println!("max adjoint residual: {worst:.3e}");
        let pass = worst <= ADJOINT_TOL;
        if let Some(out) = &a.out {
            let report = AdjointReport {
                dims: a.dims.label(),
                t: a.t,
                dictionary: a.dictionary,
                seed: a.seed,
                pairs: a.pairs,
                max_residual: worst,
                pass,
            };
            write_json(out, &report)?;
        }
        Ok(pass)
    };
    match &a.out {
        Some(out) => {
            let input = (a.dims.label(), a.t, a.dictionary, a.pairs);
            with_manifest("check-adjoint", &input, Some(a.seed), out, &[out], run)
        }
        None => run(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Solve(a) => solve(a),
        Command::SweepSnr(a) => sweep("sweep-snr", a, PlanKind::SnrSweep, snr_sweep),
        Command::PhaseTransition(a) => sweep("phase-transition", a, PlanKind::PhaseTransition, phase_transition),
        Command::DualSurface(a) => surface(a),
        Command::CheckAdjoint(a) => adjoint(a),
        Command::TheoremProbe(a) => theorem_probe(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
