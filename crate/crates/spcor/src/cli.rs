//! Command-line front end. Flags are resolved into a [`GlobalConfig`],
//! which is printed to stderr and then executed.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use spcor_core::distill::LossWeights;
use spcor_core::sampler::SamplerConfig;

use crate::checkpoint::read_header;
use crate::config::{CommandKind, GlobalConfig, GradcheckModule, Precision};
use crate::{gradcheck, pipeline, SpcorError, SpcorResult};

#[derive(Debug, Parser)]
#[command(name = "spcor", version, about = "Spectral frame sampling, multi-robot fusion and prompt distillation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic episodes with planted query-aligned events.
    GenSynth(GenSynthArgs),
    /// Select K frames per robot for one query.
    Sample(SampleArgs),
    /// Fuse the selected frames of one episode into a team belief.
    Fuse(FuseArgs),
    /// Train fusion, prompts and answer head; writes a checkpoint.
    Train(TrainArgs),
    /// MC4 accuracy of a checkpoint, optionally per team size.
    Eval(EvalArgs),
    /// Finite-difference check of every backward pass.
    Gradcheck(GradcheckArgs),
    /// Re-run a command from a printed `config:` line or JSON file.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PrecisionArg {
    F32,
    F64,
}

impl From<PrecisionArg> for Precision {
    fn from(p: PrecisionArg) -> Self {
        match p {
            PrecisionArg::F32 => Precision::F32,
            PrecisionArg::F64 => Precision::F64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModuleArg {
    SamplerSpectral,
    Fusion,
    Distill,
    All,
}

impl From<ModuleArg> for GradcheckModule {
    fn from(m: ModuleArg) -> Self {
        match m {
            ModuleArg::SamplerSpectral => GradcheckModule::SamplerSpectral,
            ModuleArg::Fusion => GradcheckModule::Fusion,
            ModuleArg::Distill => GradcheckModule::Distill,
            ModuleArg::All => GradcheckModule::All,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SamplerArgs {
    /// Candidate budget M.
    #[arg(long, default_value_t = 32)]
    pub m: usize,
    /// FFT window length w.
    #[arg(long, default_value_t = 4)]
    pub w: usize,
    /// Frames kept per robot K.
    #[arg(long, default_value_t = 8)]
    pub k: usize,
    /// Energy bands over the non-DC bins [default: w/2].
    #[arg(long)]
    pub bands: Option<usize>,
    /// Rank candidates by similarity alone.
    #[arg(long)]
    pub no_spectral_energy: bool,
    /// Drop the similarity term from the ranking score.
    #[arg(long)]
    pub no_semantic_refine: bool,
}

impl SamplerArgs {
    fn resolve(&self) -> SamplerConfig {
        SamplerConfig {
            n_bands: self.bands.unwrap_or(self.w / 2),
            use_spectral_energy: !self.no_spectral_energy,
            use_semantic_refine: !self.no_semantic_refine,
            ..SamplerConfig::with_budget(self.m, self.w, self.k)
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct GenSynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of episodes; more than one writes `ep-NNNNN/` subdirectories.
    #[arg(long, default_value_t = 1)]
    pub episodes: usize,
    /// Team sizes cycled over episodes.
    #[arg(long, value_delimiter = ',', default_value = "3")]
    pub team_sizes: Vec<usize>,
    #[arg(long, default_value_t = 256)]
    pub n_frames: usize,
    #[arg(long, default_value_t = 32)]
    pub d_clip: usize,
    #[arg(long, default_value_t = 32)]
    pub d_token: usize,
    #[arg(long, default_value_t = 2)]
    pub events: usize,
    #[arg(long, default_value_t = 6)]
    pub event_width: usize,
    #[arg(long, default_value_t = 0.05)]
    pub noise_std: f64,
    #[arg(long, default_value_t = 0.55)]
    pub burst_amplitude: f64,
    /// Length of the static query-like distractor segment; 0 disables it.
    #[arg(long, default_value_t = 12)]
    pub distractor_len: usize,
    #[arg(long, default_value_t = 10.0)]
    pub fps: f64,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Clone, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Query embedding file; defaults to the manifest's first query.
    #[arg(long)]
    pub query: Option<PathBuf>,
    #[command(flatten)]
    pub sampler: SamplerArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct FuseArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub selection: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Belief tensor (`.spcr`); weights go to a `.json` sidecar.
    #[arg(long)]
    pub out: PathBuf,
    /// Defaults to the checkpoint's precision.
    #[arg(long, value_enum)]
    pub precision: Option<PrecisionArg>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub train_dir: PathBuf,
    #[arg(long)]
    pub val_dir: Option<PathBuf>,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// Training log CSV [default: <out stem>.log.csv].
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1.0)]
    pub lambda_lm: f64,
    #[arg(long, default_value_t = 0.3)]
    pub lambda_d: f64,
    /// Learnable prompts L.
    #[arg(long, default_value_t = 8)]
    pub prompts: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 4)]
    pub accumulation: usize,
    #[arg(long)]
    pub max_steps: Option<usize>,
    /// Global gradient-norm clip; 0 disables it.
    #[arg(long, default_value_t = 1.0)]
    pub clip_norm: f64,
    #[arg(long, default_value_t = 128)]
    pub d_state: usize,
    #[arg(long, default_value_t = 64)]
    pub d_spectral: usize,
    #[arg(long, default_value_t = 32)]
    pub d_pose: usize,
    #[arg(long, default_value_t = 128)]
    pub d_belief: usize,
    #[arg(long, default_value_t = 128)]
    pub d_lm: usize,
    #[arg(long, default_value_t = 1)]
    pub heads: usize,
    /// Train only on episodes with these team sizes.
    #[arg(long, value_delimiter = ',')]
    pub team_sizes: Vec<usize>,
    #[command(flatten)]
    pub sampler: SamplerArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "f32")]
    pub precision: PrecisionArg,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub test_dir: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Print the per-team-size table.
    #[arg(long)]
    pub by_team_size: bool,
    /// Evaluate only episodes with these team sizes.
    #[arg(long, value_delimiter = ',')]
    pub team_sizes: Vec<usize>,
    /// Also write the table to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Defaults to the checkpoint's precision.
    #[arg(long, value_enum)]
    pub precision: Option<PrecisionArg>,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Clone, Args)]
pub struct GradcheckArgs {
    #[arg(long, value_enum, default_value = "all")]
    pub module: ModuleArg,
    #[arg(long, default_value_t = 10)]
    pub instances: usize,
    /// Central-difference step h.
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub threshold: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub config: PathBuf,
}

fn checkpoint_precision(path: &std::path::Path) -> SpcorResult<Precision> {
    match read_header(path)?.precision.as_str() {
        "f64" => Ok(Precision::F64),
        _ => Ok(Precision::F32),
    }
}

/// Turns parsed flags into a fully resolved config.
pub fn resolve(command: Command) -> SpcorResult<GlobalConfig> {
    let cfg = match command {
        Command::GenSynth(a) => {
            let mut c = GlobalConfig::new(CommandKind::GenSynth);
            c.seed = a.seed;
            c.jobs = a.jobs;
            c.team_sizes = a.team_sizes;
            c.synth.episodes = a.episodes;
            c.synth.n_frames = a.n_frames;
            c.synth.d_clip = a.d_clip;
            c.synth.d_token = a.d_token;
            c.synth.events_per_robot = a.events;
            c.synth.event_width = a.event_width;
            c.synth.noise_std = a.noise_std;
            c.synth.burst_amplitude = a.burst_amplitude;
            c.synth.distractor_len = a.distractor_len;
            c.synth.fps = a.fps;
            c.paths.out = Some(a.out);
            c
        }
        Command::Sample(a) => {
            let mut c = GlobalConfig::new(CommandKind::Sample);
            c.sampler = a.sampler.resolve();
            c.paths.manifest = Some(a.manifest);
            c.paths.query = a.query;
            c.paths.out = Some(a.out);
            c
        }
        Command::Fuse(a) => {
            let mut c = GlobalConfig::new(CommandKind::Fuse);
            c.precision = match a.precision {
                Some(p) => p.into(),
                None => checkpoint_precision(&a.checkpoint)?,
            };
            c.paths.manifest = Some(a.manifest);
            c.paths.selection = Some(a.selection);
            c.paths.checkpoint = Some(a.checkpoint);
            c.paths.out = Some(a.out);
            c
        }
        Command::Train(a) => {
            let mut c = GlobalConfig::new(CommandKind::Train);
            c.seed = a.seed;
            c.precision = a.precision.into();
            c.jobs = a.jobs;
            c.sampler = a.sampler.resolve();
            c.fusion.d_state = a.d_state;
            c.fusion.d_spectral = a.d_spectral;
            c.fusion.d_pose = a.d_pose;
            c.fusion.d_belief = a.d_belief;
            c.fusion.n_heads = a.heads;
            c.model.n_prompts = a.prompts;
            c.model.d_lm = a.d_lm;
            c.train.epochs = a.epochs;
            c.train.batch_size = a.batch_size;
            c.train.accumulation = a.accumulation;
            c.train.max_steps = a.max_steps;
            c.train.weights = LossWeights {
                lambda_lm: a.lambda_lm,
                lambda_d: a.lambda_d,
            };
            c.train.adam.lr = a.lr;
            c.train.adam.clip_norm = (a.clip_norm > 0.0).then_some(a.clip_norm);
            c.train.shuffle_seed = a.seed;
            c.team_sizes = a.team_sizes;
            c.paths.train_dir = Some(a.train_dir);
            c.paths.val_dir = a.val_dir;
            c.paths.out = Some(a.out);
            c.paths.log = a.log;
            c
        }
        Command::Eval(a) => {
            let mut c = GlobalConfig::new(CommandKind::Eval);
            let header = read_header(&a.checkpoint)?;
            c.sampler = header.sampler;
            c.precision = match a.precision {
                Some(p) => p.into(),
                None => checkpoint_precision(&a.checkpoint)?,
            };
            c.jobs = a.jobs;
            c.by_team_size = a.by_team_size;
            c.team_sizes = a.team_sizes;
            c.paths.test_dir = Some(a.test_dir);
            c.paths.checkpoint = Some(a.checkpoint);
            c.paths.out = a.out;
            c
        }
        Command::Gradcheck(a) => {
            let mut c = GlobalConfig::new(CommandKind::Gradcheck);
            c.seed = a.seed;
            c.precision = Precision::F64;
            c.gradcheck.module = a.module.into();
            c.gradcheck.instances = a.instances;
            c.gradcheck.step = a.step;
            c.gradcheck.threshold = a.threshold;
            c
        }
        Command::Replay(a) => GlobalConfig::load(&a.config)?,
    };
    Ok(cfg)
}

/// Runs a resolved config. Returns the process exit code.
pub fn execute(cfg: &GlobalConfig) -> SpcorResult<i32> {
    if cfg.jobs == 0 {
        return Err(SpcorError::Usage("--jobs must be at least 1".into()));
    }
    match cfg.command {
        CommandKind::GenSynth => {
            let written = pipeline::gen_synth(cfg)?;
            eprintln!("wrote {} episode(s)", written.len());
        }
        CommandKind::Sample => {
            let sel = pipeline::sample(cfg)?;
            eprintln!("selected frames for {} robot(s)", sel.per_robot.len());
        }
        CommandKind::Fuse => {
            let side = pipeline::fuse_episode(cfg)?;
            eprintln!("team belief of width {} over {} robot(s)", side.d_belief, side.robot_ids.len());
        }
        CommandKind::Train => {
            let s = pipeline::train(cfg)?;
            match s.log.last() {
                Some(r) => eprintln!(
                    "trained {} steps on {} examples; final total {:.5} distill {:.5}",
                    r.step, s.examples, r.loss_total, r.loss_distill
                ),
                None => eprintln!("no optimizer steps taken"),
            }
        }
        CommandKind::Eval => {
            let s = pipeline::evaluate(cfg)?;
            print!("{}", s.table);
        }
        CommandKind::Gradcheck => {
            let reports = gradcheck::run_gradcheck(&cfg.gradcheck, cfg.seed)?;
            print!("{}", gradcheck::format_reports(&reports, cfg.gradcheck.threshold));
            if reports.iter().any(|r| !r.passed) {
                return Ok(1);
            }
        }
    }
    Ok(0)
}

/// Parses `args`, logs the resolved config and runs it.
pub fn main_with<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let run = resolve(cli.command).and_then(|cfg| {
        cfg.log();
        execute(&cfg)
    });
    match run {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
