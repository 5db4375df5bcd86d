//! Resolved run configuration. Every command builds one of these from its
//! flags, prints it to stderr as a single JSON line, and runs from it alone,
//! so `spcor replay` on that line repeats the run exactly.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spcor_core::distill::{ModelConfig, TrainConfig};
use spcor_core::fusion::FusionDims;
use spcor_core::sampler::SamplerConfig;
use spcor_core::synth::SynthConfig;

use crate::{SpcorError, SpcorResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommandKind {
    GenSynth,
    Sample,
    Fuse,
    Train,
    Eval,
    Gradcheck,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradcheckModule {
    SamplerSpectral,
    Fusion,
    Distill,
    All,
}

impl GradcheckModule {
    pub fn expand(self) -> Vec<GradcheckModule> {
        match self {
            Self::All => vec![Self::SamplerSpectral, Self::Fusion, Self::Distill],
            m => vec![m],
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::SamplerSpectral => "sampler-spectral",
            Self::Fusion => "fusion",
            Self::Distill => "distill",
            Self::All => "all",
        }
    }
}

/// Fusion widths that do not come from the data. Token width and K are
/// filled in from the streams and the sampler.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionSettings {
    pub d_state: usize,
    pub d_spectral: usize,
    pub d_pose: usize,
    pub d_belief: usize,
    pub n_heads: usize,
    pub max_robots: usize,
}

impl Default for FusionSettings {
    fn default() -> Self {
        let d = FusionDims::new(1, 8);
        Self {
            d_state: d.d_state,
            d_spectral: d.d_spectral,
            d_pose: d.d_pose,
            d_belief: d.d_belief,
            n_heads: d.n_heads,
            max_robots: d.max_robots,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSettings {
    pub n_prompts: usize,
    pub d_lm: usize,
    pub prompt_init_std: f64,
}

impl Default for ModelSettings {
    fn default() -> Self {
        let m = ModelConfig::new(1, 1, 8);
        Self {
            n_prompts: m.n_prompts,
            d_lm: m.d_lm,
            prompt_init_std: m.prompt_init_std,
        }
    }
}

/// Generator settings shared by every episode of a `gen-synth` run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSettings {
    pub episodes: usize,
    pub n_frames: usize,
    pub d_clip: usize,
    pub d_token: usize,
    pub events_per_robot: usize,
    pub event_width: usize,
    pub noise_std: f64,
    pub burst_amplitude: f64,
    pub distractor_len: usize,
    pub fps: f64,
}

impl Default for SynthSettings {
    fn default() -> Self {
        let s = SynthConfig::default();
        Self {
            episodes: 1,
            n_frames: s.n_frames,
            d_clip: s.d_clip,
            d_token: s.d_token,
            events_per_robot: s.events_per_robot,
            event_width: s.event_width,
            noise_std: s.noise_std,
            burst_amplitude: s.burst_amplitude,
            distractor_len: s.distractor_len,
            fps: s.fps,
        }
    }
}

impl SynthSettings {
    pub fn episode_config(&self, seed: u64, n_robots: usize, answer_robot: Option<usize>) -> SynthConfig {
        SynthConfig {
            seed,
            n_frames: self.n_frames,
            n_robots,
            d_clip: self.d_clip,
            d_token: self.d_token,
            events_per_robot: self.events_per_robot,
            event_width: self.event_width,
            noise_std: self.noise_std,
            burst_amplitude: self.burst_amplitude,
            distractor_len: self.distractor_len,
            fps: self.fps,
            answer_robot,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradcheckSettings {
    pub module: GradcheckModule,
    pub instances: usize,
    pub step: f64,
    pub threshold: f64,
}

impl Default for GradcheckSettings {
    fn default() -> Self {
        Self {
            module: GradcheckModule::All,
            instances: 10,
            step: 1e-5,
            threshold: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub manifest: Option<PathBuf>,
    pub query: Option<PathBuf>,
    pub selection: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub train_dir: Option<PathBuf>,
    pub val_dir: Option<PathBuf>,
    pub test_dir: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub log: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GlobalConfig {
    pub command: CommandKind,
    pub seed: u64,
    pub precision: Precision,
    /// Worker threads for episode-level work.
    pub jobs: usize,
    pub sampler: SamplerConfig,
    pub fusion: FusionSettings,
    pub model: ModelSettings,
    /// Epochs, batching, loss weights and optimizer.
    pub train: TrainConfig,
    /// `gen-synth`: team sizes cycled over episodes. `train`/`eval`: only
    /// episodes of these sizes are used; empty keeps all.
    pub team_sizes: Vec<usize>,
    pub by_team_size: bool,
    pub synth: SynthSettings,
    pub gradcheck: GradcheckSettings,
    pub paths: Paths,
}

impl GlobalConfig {
    pub fn new(command: CommandKind) -> Self {
        Self {
            command,
            seed: 0,
            precision: Precision::F32,
            jobs: 1,
            sampler: SamplerConfig::default(),
            fusion: FusionSettings::default(),
            model: ModelSettings::default(),
            train: TrainConfig::default(),
            team_sizes: Vec::new(),
            by_team_size: false,
            synth: SynthSettings::default(),
            gradcheck: GradcheckSettings::default(),
            paths: Paths::default(),
        }
    }

    pub fn model_config(&self, d_token: usize, d_query: usize) -> ModelConfig {
        let f = &self.fusion;
        let mut fusion = FusionDims::new(d_token, self.sampler.k);
        fusion.d_state = f.d_state;
        fusion.d_spectral = f.d_spectral;
        fusion.d_pose = f.d_pose;
        fusion.d_belief = f.d_belief;
        fusion.n_heads = f.n_heads;
        fusion.max_robots = f.max_robots;
        ModelConfig {
            fusion,
            d_query,
            n_prompts: self.model.n_prompts,
            d_lm: self.model.d_lm,
            prompt_init_std: self.model.prompt_init_std,
            seed: self.seed,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// Accepts the bare JSON or the `config: {...}` line printed on stderr.
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        let t = text.trim();
        serde_json::from_str(t.strip_prefix("config:").unwrap_or(t).trim())
    }

    pub fn load(path: &Path) -> SpcorResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| SpcorError::io(path, e))?;
        Self::from_json(&text).map_err(|e| SpcorError::format(path, e.to_string()))
    }

    pub fn log(&self) {
        eprintln!("config: {}", self.to_json());
    }

    pub fn require<'a>(&self, p: &'a Option<PathBuf>, flag: &str) -> SpcorResult<&'a Path> {
        p.as_deref()
            .ok_or_else(|| SpcorError::Usage(format!("missing required path --{flag}")))
    }
}
