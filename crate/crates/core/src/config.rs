//! Run configuration: a sectioned `key = value` (TOML) file validated as a
//! whole before any compute starts.
//!
//! Every random stream derives from the root `seed`: model initialisation
//! (`"init-expert"`, `"init-controlnet"`, `"init-extractor"`), training
//! (`"pretrain"`, `"finetune"`, each split into `"data-order"` and
//! `"noise"`), data (`"data"`), sampling (`"sample"`) and the diversity
//! pairs (`"diversity-pairs"`).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audio::mel::DEFAULT_N_MELS;
use crate::denoiser::DenoiserConfig;
use crate::diffusion::{NoiseSchedule, SamplerConfig, ScheduleMode, DEFAULT_COSINE_OFFSET, DEFAULT_GUIDANCE, DEFAULT_SAMPLING_STEPS, DEFAULT_TIMESTEPS};
use crate::error::{Error, Result};
use crate::metrics::beats::DEFAULT_BA_SIGMA;
use crate::metrics::extractor::{ExtractorConfig, ExtractorTraining};
use crate::metrics::DEFAULT_DIVERSITY_PAIRS;
use crate::motion::{JointLayout, ROT6D_DIM};
use crate::seed::derive_seed;
use crate::synth::SyntheticSpec;
use crate::training::{AdamWConfig, Stage, TrainConfig, CONDITION_DROP};

/// Environment variable that replaces `paths.out`.
pub const OUT_DIR_ENV: &str = "GESTURE_OUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub preset: String,
    pub layout: String,
    /// Joint count of a non-standard layout; ignored for `upper43`.
    pub joints: Option<usize>,
    pub n_layers: Option<usize>,
    pub d_model: Option<usize>,
    pub n_heads: Option<usize>,
    pub d_heads: Option<usize>,
    pub ff_multiplier: Option<usize>,
    pub input_dim: Option<usize>,
    pub max_frames: usize,
    pub n_mels: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            preset: "tiny".into(),
            layout: JointLayout::UPPER_BODY.into(),
            joints: None,
            n_layers: None,
            d_model: None,
            n_heads: None,
            d_heads: None,
            ff_multiplier: None,
            input_dim: None,
            max_frames: 60,
            n_mels: DEFAULT_N_MELS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleSection {
    pub timesteps: usize,
    pub offset: f64,
    pub mode: String,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        Self {
            timesteps: DEFAULT_TIMESTEPS,
            offset: DEFAULT_COSINE_OFFSET,
            mode: ScheduleMode::VariancePreserving.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub max_steps: Option<usize>,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub condition_drop: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            epochs: 63,
            max_steps: Some(500),
            batch_size: 8,
            learning_rate: 1e-3,
            weight_decay: 0.01,
            condition_drop: CONDITION_DROP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerSection {
    pub steps: usize,
    pub guidance: f64,
    pub eta: f64,
}

impl Default for SamplerSection {
    fn default() -> Self {
        Self {
            steps: DEFAULT_SAMPLING_STEPS,
            guidance: DEFAULT_GUIDANCE,
            eta: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub train_count: usize,
    pub held_out: usize,
    pub pattern_count: usize,
    pub noise_level: f64,
    pub beat_period_s: f64,
    pub frames: usize,
    pub fps: f64,
    pub sample_rate: u32,
}

impl Default for DataSection {
    fn default() -> Self {
        let s = SyntheticSpec::default();
        Self {
            train_count: 64,
            held_out: 32,
            pattern_count: s.pattern_count,
            noise_level: s.noise_level,
            beat_period_s: s.beat_period_s,
            frames: s.frames,
            fps: s.fps,
            sample_rate: s.sample_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub generated: usize,
    pub ba_sigma: f64,
    pub diversity_pairs: usize,
    pub extractor_steps: usize,
    pub extractor_batch: usize,
    pub extractor_lr: f64,
    pub latent_dim: usize,
    pub hidden: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        let t = ExtractorTraining::default();
        Self {
            generated: 32,
            ba_sigma: DEFAULT_BA_SIGMA,
            diversity_pairs: DEFAULT_DIVERSITY_PAIRS,
            extractor_steps: t.steps,
            extractor_batch: t.batch_size,
            extractor_lr: t.learning_rate,
            latent_dim: 128,
            hidden: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    /// Output root; relative paths resolve against the working directory.
    pub out: PathBuf,
    /// Existing paired `*.gmc`/`*.wav` directory; synthetic data when unset.
    pub data: Option<PathBuf>,
}

impl Default for PathsSection {
    fn default() -> Self {
        Self {
            out: PathBuf::from("runs/default"),
            data: None,
        }
    }
}

/// The file form of a run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfigFile {
    pub seed: u64,
    pub model: ModelSection,
    pub schedule: ScheduleSection,
    pub pretrain: TrainSection,
    pub finetune: TrainSection,
    pub sampler: SamplerSection,
    pub data: DataSection,
    pub eval: EvalSection,
    pub paths: PathsSection,
}

impl Default for RunConfigFile {
    fn default() -> Self {
        Self {
            seed: 0,
            model: ModelSection::default(),
            schedule: ScheduleSection::default(),
            pretrain: TrainSection::default(),
            finetune: TrainSection {
                learning_rate: 3e-3,
                ..TrainSection::default()
            },
            sampler: SamplerSection::default(),
            data: DataSection::default(),
            eval: EvalSection::default(),
            paths: PathsSection::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleConfig {
    pub timesteps: usize,
    pub offset: f64,
    pub mode: ScheduleMode,
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::cosine(self.timesteps, self.offset, self.mode)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub generated: usize,
    pub ba_sigma: f64,
    pub diversity_pairs: usize,
    pub extractor: ExtractorConfig,
    pub extractor_training: ExtractorTraining,
}

/// A validated run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub layout: JointLayout,
    pub model: DenoiserConfig,
    pub n_mels: usize,
    pub schedule: ScheduleConfig,
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
    pub sampler: SamplerConfig,
    pub synthetic: SyntheticSpec,
    pub train_count: usize,
    pub held_out: usize,
    pub eval: EvalConfig,
    pub out_dir: PathBuf,
    pub data_dir: Option<PathBuf>,
    pub file: RunConfigFile,
}

fn train_config(stage: Stage, s: &TrainSection, seed: u64) -> TrainConfig {
    let mut optimizer = AdamWConfig::with_lr(s.learning_rate);
    optimizer.weight_decay = s.weight_decay;
    TrainConfig {
        stage,
        optimizer,
        batch_size: s.batch_size,
        epochs: s.epochs,
        max_steps: s.max_steps,
        condition_drop: if stage == Stage::Finetune { s.condition_drop } else { 0.0 },
        seed,
    }
}

fn named<T>(section: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("[{section}] {m}")),
        other => other,
    })
}

impl RunConfig {
    pub fn from_file(file: RunConfigFile) -> Result<Self> {
        let f = &file;
        let layout = if f.model.layout == JointLayout::UPPER_BODY {
            JointLayout::upper_body()
        } else {
            let joints = f.model.joints.ok_or_else(|| {
                Error::Config(format!("[model] layout {:?} needs an explicit joints count", f.model.layout))
            })?;
            JointLayout::generic(&f.model.layout, joints)
        };
        named("model", layout.validate())?;
        let mut model = DenoiserConfig::preset(&f.model.preset)
            .ok_or_else(|| Error::Config(format!("[model] unknown preset {:?}", f.model.preset)))?;
        if let Some(v) = f.model.n_layers { model.n_layers = v; }
        if let Some(v) = f.model.d_model { model.d_model = v; }
        if let Some(v) = f.model.n_heads { model.n_heads = v; }
        if let Some(v) = f.model.d_heads { model.d_heads = v; }
        if let Some(v) = f.model.ff_multiplier { model.ff_multiplier = v; }
        model.max_frames = f.model.max_frames;
        let joint_width = layout.joint_count() * ROT6D_DIM;
        model.input_dim = f.model.input_dim.unwrap_or(joint_width);
        if model.input_dim != joint_width {
            return Err(Error::Config(format!(
                "[model] input_dim {} must equal 6 x {} joints of layout {} = {joint_width}",
                model.input_dim,
                layout.joint_count(),
                layout.name
            )));
        }
        named("model", model.validate())?;
        if f.model.n_mels == 0 {
            return Err(Error::Config("[model] n_mels must be positive".into()));
        }

        let mode = named("schedule", f.schedule.mode.parse::<ScheduleMode>())?;
        let schedule = ScheduleConfig {
            timesteps: f.schedule.timesteps,
            offset: f.schedule.offset,
            mode,
        };
        named("schedule", schedule.build())?;

        let pretrain = train_config(Stage::Pretrain, &f.pretrain, derive_seed(f.seed, "pretrain"));
        let finetune = train_config(Stage::Finetune, &f.finetune, derive_seed(f.seed, "finetune"));
        named("pretrain", pretrain.validate())?;
        named("finetune", finetune.validate())?;

        let sampler = SamplerConfig {
            steps: f.sampler.steps,
            guidance_scale: f.sampler.guidance,
            eta: f.sampler.eta,
            seed: derive_seed(f.seed, "sample"),
        };
        named("sampler", sampler.validate(schedule.timesteps))?;

        let synthetic = SyntheticSpec {
            pattern_count: f.data.pattern_count,
            noise_level: f.data.noise_level,
            beat_period_s: f.data.beat_period_s,
            seed: derive_seed(f.seed, "data"),
            frames: f.data.frames,
            fps: f.data.fps,
            sample_rate: f.data.sample_rate,
        };
        named("data", synthetic.validate())?;
        if f.paths.data.is_none() && synthetic.frames > model.max_frames {
            return Err(Error::Config(format!(
                "[data] frames {} exceed model.max_frames {}",
                synthetic.frames, model.max_frames
            )));
        }
        if f.data.train_count == 0 {
            return Err(Error::Config("[data] train_count must be positive".into()));
        }
        for (name, v) in [("data.held_out", f.data.held_out), ("eval.generated", f.eval.generated)] {
            if v < 2 {
                return Err(Error::Config(format!("{name} must be at least 2 for distribution metrics")));
            }
        }
        if f.eval.generated > f.data.held_out {
            return Err(Error::Config(format!(
                "[eval] generated {} exceeds data.held_out {}: conditioned samples reuse held-out audio",
                f.eval.generated, f.data.held_out
            )));
        }
        if !(f.eval.ba_sigma > 0.0 && f.eval.ba_sigma.is_finite()) {
            return Err(Error::Config("[eval] ba_sigma must be positive".into()));
        }
        let extractor = ExtractorConfig {
            input_dim: model.input_dim,
            hidden: f.eval.hidden,
            latent_dim: f.eval.latent_dim,
            kernel: ExtractorConfig::new(model.input_dim, model.max_frames).kernel,
            max_frames: model.max_frames,
        };
        named("eval", extractor.validate())?;
        let extractor_training = ExtractorTraining {
            steps: f.eval.extractor_steps,
            batch_size: f.eval.extractor_batch,
            learning_rate: f.eval.extractor_lr,
            seed: derive_seed(f.seed, "init-extractor"),
        };
        if extractor_training.batch_size == 0 || !(extractor_training.learning_rate > 0.0) {
            return Err(Error::Config("[eval] extractor_batch and extractor_lr must be positive".into()));
        }

        let out_dir = match std::env::var_os(OUT_DIR_ENV) {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => f.paths.out.clone(),
        };
        Ok(Self {
            seed: f.seed,
            layout,
            model,
            n_mels: f.model.n_mels,
            schedule,
            pretrain,
            finetune,
            sampler,
            synthetic,
            train_count: f.data.train_count,
            held_out: f.data.held_out,
            eval: EvalConfig {
                generated: f.eval.generated,
                ba_sigma: f.eval.ba_sigma,
                diversity_pairs: f.eval.diversity_pairs,
                extractor,
                extractor_training,
            },
            out_dir,
            data_dir: f.paths.data.clone(),
            file,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let file: RunConfigFile =
            toml::from_str(text).map_err(|e| Error::Config(format!("config: {}", e.message())))?;
        Self::from_file(file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn default_desk() -> Self {
        Self::from_file(RunConfigFile::default()).expect("default configuration is valid")
    }

    /// The configuration as written, with defaults filled in.
    pub fn to_toml(&self) -> String {
        toml::to_string(&self.file).expect("configuration serialises")
    }
}
