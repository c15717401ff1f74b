//! Versioned TOML run configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use svo_agents::{EpisodeConfig, RecognitionConfig, SacConfig, ScriptedParams, SvoMode, TrainConfig};
use svo_sim::ScenarioSpec;

use crate::error::{io_err, HarnessError, Result};

pub const CONFIG_VERSION: u32 = 1;
/// Environment variable that overrides the output directory.
pub const OUT_DIR_ENV: &str = "SVO_OUT_DIR";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    #[default]
    Scripted,
    Learned,
    Random,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub kind: PolicyKind,
    /// Actor checkpoint for `learned`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    pub scripted: ScriptedParams,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecognitionRef {
    /// Recognition checkpoint used in `recog` mode.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Episodes rolled out by `gen-data`.
    pub episodes: u64,
    pub tick_stride: u64,
    /// Episodes of the separate evaluation dataset used by `ablate`.
    pub eval_episodes: u64,
    /// Existing dataset for `train-recog` / `ablate`; generated when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            episodes: 500,
            tick_stride: 5,
            eval_episodes: 200,
            path: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecognitionTraining {
    pub network: RecognitionConfig,
    pub train: TrainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub values: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            values: vec![0.0, 0.25, 0.5, 0.75, 1.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    #[serde(default)]
    pub seed: u64,
    /// Episodes per `simulate` / `evaluate` / sweep point.
    #[serde(default = "default_episodes")]
    pub episodes: u64,
    #[serde(default)]
    pub mode: SvoMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub episode: EpisodeConfig,
    #[serde(default)]
    pub policy: PolicyConfig,
    #[serde(default)]
    pub recognition: RecognitionRef,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub recognition_training: RecognitionTraining,
    #[serde(default)]
    pub sac: SacConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
}

fn default_episodes() -> u64 {
    200
}

impl RunConfig {
    pub fn new(scenario: ScenarioSpec) -> Self {
        Self {
            version: CONFIG_VERSION,
            seed: 0,
            episodes: default_episodes(),
            mode: SvoMode::TrueSvo,
            output_dir: None,
            episode: EpisodeConfig::new(scenario),
            policy: PolicyConfig::default(),
            recognition: RecognitionRef::default(),
            data: DataConfig::default(),
            recognition_training: RecognitionTraining::default(),
            sac: SacConfig::default(),
            sweep: SweepConfig::default(),
        }
    }

    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| e.message().to_string())?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config file; relative checkpoint paths are
    /// resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Config {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
        let mut cfg = Self::parse(&text).map_err(|detail| HarnessError::Config {
            path: path.to_path_buf(),
            detail: detail.replace('\n', " "),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.policy.checkpoint,
            &mut cfg.recognition.checkpoint,
            &mut cfg.data.path,
            &mut cfg.output_dir,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.version != CONFIG_VERSION {
            return Err(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                self.version
            ));
        }
        self.episode.validate().map_err(|e| e.to_string())?;
        if self.mode == SvoMode::Recog && self.recognition.checkpoint.is_none() {
            return Err("mode \"recog\" requires recognition.checkpoint".into());
        }
        if self.policy.kind == PolicyKind::Learned && self.policy.checkpoint.is_none() {
            return Err("policy kind \"learned\" requires policy.checkpoint".into());
        }
        if self.data.tick_stride == 0 {
            return Err("data.tick_stride must be at least 1".into());
        }
        if self.sweep.values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err("sweep values must lie in [0, 1]".into());
        }
        Ok(())
    }

    /// Replaces the root seed and every training seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.sac.seed = seed;
        self.recognition_training.train.seed = seed;
        self.recognition_training.network.seed = seed;
        self
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }

    /// The CLI flag, then `SVO_OUT_DIR`, then the configured directory,
    /// then `svo-out`.
    pub fn resolve_output_dir(&self, cli: Option<&Path>) -> PathBuf {
        if let Some(p) = cli {
            return p.to_path_buf();
        }
        if let Some(p) = std::env::var_os(OUT_DIR_ENV).filter(|v| !v.is_empty()) {
            return PathBuf::from(p);
        }
        self.output_dir.clone().unwrap_or_else(|| PathBuf::from("svo-out"))
    }
}

/// Reference config with every default written out.
pub fn reference_config() -> String {
    let mut cfg = RunConfig::new(ScenarioSpec::merge());
    cfg.seed = 7;
    format!(
        "# svo run configuration, format version {CONFIG_VERSION}; every default is spelled out.\n{}",
        cfg.to_toml()
    )
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    std::fs::write(path, text).map_err(io_err(path))
}
