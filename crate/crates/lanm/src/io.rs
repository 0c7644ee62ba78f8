//! JSON documents exchanged between commands: scene descriptions,
//! observation dumps and solution dumps.

use std::path::Path;

use num_complex::Complex64 as C64;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::decode::DecodeResult;
use crate::dictionary::{Dictionary, DictionaryFile};
use crate::error::{Error, Result};
use crate::harness::{generate_instance, instance_from_scene, Instance, SolveSummary, TrialConfig, TrialOutcome};
use crate::localization::Peak;
use crate::metrics::{NoisyObservation, TrialMetrics};
use crate::model::{SceneConfig, TargetParams, TargetScene};
use crate::rng::derive_seed;
use crate::waveform::{encode, stream_from_indices, SymbolStream};

pub const OBSERVATION_FORMAT: &str = "lanm-observation/1";
pub const SOLUTION_FORMAT: &str = "lanm-solution/1";

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

/// A trial configuration with optional fixed targets and symbols.
///
/// Missing targets are drawn from the seed; missing symbols are drawn per
/// target. Symbols are constellation indices with the pilot first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    pub config: TrialConfig,
    #[serde(default)]
    pub targets: Option<Vec<TargetParams>>,
    #[serde(default)]
    pub symbols: Option<Vec<Vec<usize>>>,
}

impl SceneFile {
    pub fn instance(&self, seed: u64) -> Result<Instance> {
        let cfg = &self.config;
        let Some(targets) = &self.targets else {
            if self.symbols.is_some() {
                return Err(Error::InvalidArgument("symbols given without targets".into()));
            }
            return generate_instance(cfg, seed);
        };
        if targets.len() != cfg.k {
            return Err(Error::InvalidArgument(format!("config has K = {} but {} targets are listed", cfg.k, targets.len())));
        }
        let streams = match &self.symbols {
            Some(list) => {
                if list.len() != cfg.k {
                    return Err(Error::InvalidArgument(format!("{} symbol streams for K = {}", list.len(), cfg.k)));
                }
                list.iter()
                    .map(|ix| {
                        if ix.len() != cfg.t {
                            return Err(Error::InvalidArgument(format!("symbol stream of length {} for T = {}", ix.len(), cfg.t)));
                        }
                        stream_from_indices(cfg.qam, ix)
                    })
                    .collect::<Result<Vec<_>>>()?
            }
            None => (0..cfg.k)
                .map(|k| encode(cfg.qam, cfg.t, derive_seed(seed, &format!("symbols/{k}"))))
                .collect::<Result<Vec<_>>>()?,
        };
        let scene = TargetScene::new(
            SceneConfig { spec: cfg.dims.clone(), k: cfg.k, t: cfg.t },
            targets.clone(),
            streams.iter().map(|s| s.h.clone()).collect(),
        )?;
        if cfg.separated && !scene.is_well_separated() {
            return Err(Error::SceneGeneration(format!(
                "listed targets are {:.4} apart, below the required {:.4}",
                scene.min_separation(),
                cfg.dims.separation()
            )));
        }
        instance_from_scene(cfg, seed, scene, streams)
    }
}

/// Everything needed to rerun the pipeline on a simulated observation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationFile {
    pub format: String,
    pub seed: u64,
    pub config: TrialConfig,
    pub scene: TargetScene,
    pub streams: Vec<SymbolStream>,
    pub dictionary: DictionaryFile,
    pub y_clean: Vec<C64>,
    pub y: Vec<C64>,
    pub noise_norm: f64,
    pub sigma: f64,
}

impl From<&Instance> for ObservationFile {
    fn from(inst: &Instance) -> Self {
        ObservationFile {
            format: OBSERVATION_FORMAT.into(),
            seed: inst.seed,
            config: inst.config.clone(),
            scene: inst.scene.clone(),
            streams: inst.streams.clone(),
            dictionary: DictionaryFile::from(&inst.dictionary),
            y_clean: inst.y_clean.clone(),
            y: inst.observation.y.clone(),
            noise_norm: inst.observation.noise_norm,
            sigma: inst.observation.sigma,
        }
    }
}

impl TryFrom<ObservationFile> for Instance {
    type Error = Error;

    fn try_from(f: ObservationFile) -> Result<Self> {
        if f.format != OBSERVATION_FORMAT {
            return Err(Error::InvalidArgument(format!("unsupported observation format `{}`", f.format)));
        }
        let dictionary = Dictionary::try_from(f.dictionary)?;
        let rows = f.config.dims.dictionary_rows();
        if dictionary.rows() != rows || dictionary.t() != f.config.t {
            return Err(Error::Shape(format!(
                "dictionary is {}x{}, the config needs {rows}x{}",
                dictionary.rows(),
                dictionary.t(),
                f.config.t
            )));
        }
        let l = f.config.dims.observations();
        if f.y.len() != l || f.y_clean.len() != l {
            return Err(Error::DimensionMismatch { expected: l, got: f.y.len() });
        }
        Ok(Instance {
            config: f.config,
            seed: f.seed,
            scene: f.scene,
            streams: f.streams,
            dictionary,
            y_clean: f.y_clean,
            observation: NoisyObservation { y: f.y, noise_norm: f.noise_norm, sigma: f.sigma },
        })
    }
}

/// Solver output, detections, decoded symbols and scores of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionFile {
    pub format: String,
    pub seed: u64,
    pub solution: Option<SolveSummary>,
    pub q: Vec<C64>,
    pub peaks: Vec<Peak>,
    pub decode: Option<DecodeResult>,
    pub metrics: TrialMetrics,
    pub diagnostics: Option<String>,
}

impl SolutionFile {
    /// `runtime_s` is zeroed unless requested so dumps are reproducible.
    pub fn new(seed: u64, outcome: &TrialOutcome, with_runtime: bool) -> Self {
        let mut metrics = outcome.metrics;
        if !with_runtime {
            metrics.runtime_s = 0.0;
        }
        SolutionFile {
            format: SOLUTION_FORMAT.into(),
            seed,
            solution: outcome.solution.as_ref().map(SolveSummary::from),
            q: outcome.solution.as_ref().map(|s| s.q.clone()).unwrap_or_default(),
            peaks: outcome.peaks.peaks.clone(),
            decode: outcome.decode.clone(),
            metrics,
            diagnostics: outcome.diagnostics.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictionary::DictionaryKind;
    use crate::model::DimensionSpec;

    fn scene_file() -> SceneFile {
        serde_json::from_str(
            r#"{"config": {"dims": "delay:21", "k": 1, "t": 2, "dictionary": "hadamard", "snr_db": 20.0},
                "targets": [{"tau": [0.3], "alpha": [0.5, -1.0]}],
                "symbols": [[3, 1]]}"#,
        )
        .unwrap()
    }

    #[test]
    fn scene_file_fixes_targets_and_symbols() {
        let f = scene_file();
        let inst = f.instance(4).unwrap();
        assert_eq!(inst.scene.targets[0].tau, vec![0.3]);
        assert_eq!(inst.streams[0].indices(), vec![3, 1]);
        assert_eq!(inst.config.dictionary, DictionaryKind::Hadamard);
        let mut bad = f.clone();
        bad.symbols = Some(vec![vec![0, 1]]);
        assert!(bad.instance(4).is_err());
        bad.symbols = None;
        bad.targets = None;
        assert_eq!(bad.instance(4).unwrap().scene.targets.len(), 1);
    }

    #[test]
    fn observation_roundtrip_is_exact() {
        let inst = scene_file().instance(9).unwrap();
        let text = serde_json::to_string(&ObservationFile::from(&inst)).unwrap();
        let back = Instance::try_from(serde_json::from_str::<ObservationFile>(&text).unwrap()).unwrap();
        assert_eq!(back.observation, inst.observation);
        assert_eq!(back.y_clean, inst.y_clean);
        assert_eq!(back.dictionary.matrix(), inst.dictionary.matrix());
        assert_eq!(back.scene, inst.scene);
    }

    #[test]
    fn observation_shape_is_checked() {
        let inst = scene_file().instance(9).unwrap();
        let mut f = ObservationFile::from(&inst);
        f.config.dims = DimensionSpec::parse("delay:23").unwrap();
        assert!(Instance::try_from(f).is_err());
    }
}
