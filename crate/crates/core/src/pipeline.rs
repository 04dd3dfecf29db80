//! Stage-by-stage orchestration: data → pretrain → finetune → sample → eval.
//!
//! Every stage reads and writes files under one output root, so the CLI
//! can run stages separately and `run_end_to_end` chains them. Models are
//! always reloaded from their checkpoints before use by a later stage.

use std::path::{Path, PathBuf};

use log::info;
use rayon::prelude::*;
use serde::Serialize;

use crate::audio::{default_mel, AudioClip, MelSpectrogram};
use crate::checkpoint::{
    controlnet_checkpoint, denoiser_checkpoint, extractor_checkpoint, load_controlnet, load_denoiser,
    load_extractor, sha256_hex, Checkpoint,
};
use crate::config::RunConfig;
use crate::container::{read_file, write_file};
use crate::controlnet::{Conditioned, ControlNetModel};
use crate::denoiser::{build_denoiser, DenoiserModel};
use crate::diffusion::{sample, SamplerConfig};
use crate::error::{Error, Result};
use crate::export::write_loss_log;
use crate::metrics::beats::{audio_beats_from_mel, beat_align, motion_beats};
use crate::metrics::extractor::{train_autoencoder, FeatureExtractor};
use crate::metrics::{diversity, fgd};
use crate::motion::{gmc, MotionClip};
use crate::seed::derive_seed;
use crate::synth::{generate_synthetic_dataset, read_dataset, write_dataset};
use crate::tensor::Tensor;
use crate::training::{
    finetune_step, pretrain_step, run_epochs, AdamW, ControlNetOptimizer, LossReport, TrainSample,
};

/// File locations under an output root.
#[derive(Debug, Clone, PartialEq)]
pub struct RunPaths {
    pub root: PathBuf,
}

impl RunPaths {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn data(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn expert(&self) -> PathBuf {
        self.root.join("checkpoints").join("expert.ckpt")
    }

    pub fn controlnet(&self) -> PathBuf {
        self.root.join("checkpoints").join("controlnet.ckpt")
    }

    pub fn extractor(&self) -> PathBuf {
        self.root.join("checkpoints").join("extractor.ckpt")
    }

    pub fn pretrain_log(&self) -> PathBuf {
        self.root.join("logs").join("pretrain_loss.tsv")
    }

    pub fn finetune_log(&self) -> PathBuf {
        self.root.join("logs").join("finetune_loss.tsv")
    }

    pub fn samples(&self, kind: SampleKind) -> PathBuf {
        self.root.join("samples").join(kind.dir_name())
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("report.json")
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.toml")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleKind {
    Unconditional,
    Conditional,
}

impl SampleKind {
    fn dir_name(self) -> &'static str {
        match self {
            SampleKind::Unconditional => "unconditional",
            SampleKind::Conditional => "conditional",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairedClip {
    pub id: String,
    pub motion: MotionClip,
    pub audio: AudioClip,
    pub mel: MelSpectrogram,
}

/// Clips are split by sorted name: the last `held_out` are held out.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Vec<PairedClip>,
    pub held_out: Vec<PairedClip>,
}

impl Dataset {
    pub fn frames(&self) -> usize {
        self.train[0].motion.n_frames()
    }
}

fn data_dir(cfg: &RunConfig, paths: &RunPaths) -> PathBuf {
    cfg.data_dir.clone().unwrap_or_else(|| paths.data())
}

/// Writes the synthetic dataset (when no data directory is configured).
pub fn generate_data(cfg: &RunConfig, paths: &RunPaths) -> Result<usize> {
    if cfg.data_dir.is_some() {
        return Ok(0);
    }
    let samples = generate_synthetic_dataset(&cfg.synthetic, &cfg.layout, cfg.train_count + cfg.held_out)?;
    write_dataset(&paths.data(), &samples)?;
    Ok(samples.len())
}

/// Reads the dataset, generating synthetic data first if it is missing.
pub fn load_data(cfg: &RunConfig, paths: &RunPaths) -> Result<Dataset> {
    let dir = data_dir(cfg, paths);
    if cfg.data_dir.is_none() && !dir.exists() {
        generate_data(cfg, paths)?;
    }
    let pairs = read_dataset(&dir)?;
    let need = cfg.train_count + cfg.held_out;
    if pairs.len() < need {
        return Err(Error::InsufficientData(format!(
            "{} holds {} clips, configuration needs {need}",
            dir.display(),
            pairs.len()
        )));
    }
    let mut clips = pairs
        .into_par_iter()
        .map(|(id, motion, audio)| {
            if motion.layout.joint_count() != cfg.layout.joint_count() {
                return Err(Error::DimensionMismatch(format!(
                    "clip {id} has {} joints, configuration expects {}",
                    motion.layout.joint_count(),
                    cfg.layout.joint_count()
                )));
            }
            if motion.n_frames() > cfg.model.max_frames {
                return Err(Error::DimensionMismatch(format!(
                    "clip {id} has {} frames, model.max_frames is {}",
                    motion.n_frames(),
                    cfg.model.max_frames
                )));
            }
            let mel = default_mel(&audio)?;
            if mel.n_mels != cfg.n_mels {
                return Err(Error::Config(format!(
                    "mel features have {} bands, model.n_mels is {}",
                    mel.n_mels, cfg.n_mels
                )));
            }
            Ok(PairedClip { id, motion, audio, mel })
        })
        .collect::<Result<Vec<_>>>()?;
    clips.truncate(need);
    let held_out = clips.split_off(cfg.train_count);
    let frames = clips[0].motion.n_frames();
    if clips.iter().chain(&held_out).any(|c| c.motion.n_frames() != frames) {
        return Err(Error::DimensionMismatch("clips differ in frame count".into()));
    }
    Ok(Dataset { train: clips, held_out })
}

pub fn train_samples(cfg: &RunConfig, clips: &[PairedClip], with_audio: bool) -> Vec<TrainSample> {
    clips
        .iter()
        .map(|c| {
            let mel = with_audio.then(|| c.mel.frames.clone());
            TrainSample::new(c.motion.tensor().clone(), &cfg.layout, mel)
        })
        .collect()
}

fn log_progress(stage: &'static str, total: usize) -> impl FnMut(usize, &LossReport) {
    move |i, r| {
        if i % 50 == 0 || i + 1 == total {
            info!("{stage} step {i}/{total}: total {:.5} (simple {:.5})", r.l_total, r.l_simple);
        }
    }
}

pub fn pretrain(cfg: &RunConfig, data: &Dataset) -> Result<(DenoiserModel, AdamW, Vec<LossReport>)> {
    let schedule = cfg.schedule.build()?;
    let mut model = build_denoiser(cfg.model, derive_seed(cfg.seed, "init-expert"))?;
    let mut opt = AdamW::new(cfg.pretrain.optimizer, &model.params);
    let samples = train_samples(cfg, &data.train, false);
    let total = crate::training::planned_steps(&cfg.pretrain, samples.len());
    let log = run_epochs(
        &cfg.pretrain,
        &samples,
        |batch, rng| pretrain_step(&mut model, &mut opt, batch, &cfg.layout, &schedule, rng),
        log_progress("pretrain", total),
    )?;
    Ok((model, opt, log))
}

/// Writes the expert checkpoint; returns the SHA-256 of its bytes.
pub fn save_expert(path: &Path, model: &DenoiserModel, opt: Option<&AdamW>) -> Result<String> {
    let bytes = denoiser_checkpoint(model, opt).encode();
    write_file(path, &bytes)?;
    Ok(sha256_hex(&bytes))
}

/// Loads the expert and the hash a paired ControlNet must record.
pub fn load_expert(path: &Path) -> Result<(DenoiserModel, String)> {
    let bytes = read_file(path)?;
    let model = load_denoiser(&Checkpoint::decode(&bytes)?)?;
    Ok((model, sha256_hex(&bytes)))
}

pub fn finetune(
    cfg: &RunConfig,
    data: &Dataset,
    expert: &DenoiserModel,
) -> Result<(ControlNetModel, ControlNetOptimizer, Vec<LossReport>)> {
    let schedule = cfg.schedule.build()?;
    let mut cnet = ControlNetModel::from_expert(expert, cfg.n_mels, derive_seed(cfg.seed, "init-controlnet"))?;
    let mut opt = ControlNetOptimizer::new(cfg.finetune.optimizer, &cnet);
    let samples = train_samples(cfg, &data.train, true);
    let total = crate::training::planned_steps(&cfg.finetune, samples.len());
    let drop = cfg.finetune.condition_drop;
    let log = run_epochs(
        &cfg.finetune,
        &samples,
        |batch, rng| finetune_step(expert, &mut cnet, &mut opt, batch, &cfg.layout, &schedule, drop, rng),
        log_progress("finetune", total),
    )?;
    Ok((cnet, opt, log))
}

pub fn save_controlnet(path: &Path, cnet: &ControlNetModel, expert_hash: &str, opt: Option<&ControlNetOptimizer>) -> Result<()> {
    controlnet_checkpoint(cnet, expert_hash, opt).write(path)
}

pub fn load_controlnet_file(path: &Path, expert: &DenoiserModel, expert_hash: &str) -> Result<ControlNetModel> {
    load_controlnet(&Checkpoint::read(path)?, expert, expert_hash)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    pub unconditional: Vec<Tensor>,
    pub conditional: Option<Vec<Tensor>>,
}

fn sampler_for(cfg: &RunConfig, i: usize) -> SamplerConfig {
    SamplerConfig {
        seed: derive_seed(cfg.sampler.seed, &format!("clip-{i}")),
        ..cfg.sampler
    }
}

/// `eval.generated` unconditional samples from the expert and, with a
/// ControlNet, as many guided samples conditioned on the held-out audio.
/// Sample `i` of both kinds starts from the same initial noise.
pub fn generate(cfg: &RunConfig, expert: &DenoiserModel, cnet: Option<&ControlNetModel>, held_out: &[PairedClip]) -> Result<Samples> {
    let schedule = cfg.schedule.build()?;
    let n = cfg.eval.generated;
    if held_out.len() < n {
        return Err(Error::InsufficientData(format!("{} held-out clips for {n} samples", held_out.len())));
    }
    let shape = (held_out[0].motion.n_frames(), cfg.model.input_dim);
    let unconditional = (0..n)
        .into_par_iter()
        .map(|i| sample(expert, None, shape, &sampler_for(cfg, i), &schedule))
        .collect::<Result<Vec<_>>>()?;
    let conditional = match cnet {
        None => None,
        Some(c) => {
            let guided = Conditioned { expert, cnet: c };
            Some(
                (0..n)
                    .into_par_iter()
                    .map(|i| {
                        let audio = c.embed_audio(&held_out[i].mel.frames, shape.0)?;
                        sample(expert, Some((&guided, &audio)), shape, &sampler_for(cfg, i), &schedule)
                    })
                    .collect::<Result<Vec<_>>>()?,
            )
        }
    };
    Ok(Samples { unconditional, conditional })
}

fn as_clip(cfg: &RunConfig, t: &Tensor) -> Result<MotionClip> {
    MotionClip::new(t.clone(), cfg.synthetic.fps, cfg.layout.clone())
}

pub fn write_samples(cfg: &RunConfig, paths: &RunPaths, samples: &Samples) -> Result<()> {
    let mut sets = vec![(SampleKind::Unconditional, &samples.unconditional)];
    if let Some(c) = &samples.conditional {
        sets.push((SampleKind::Conditional, c));
    }
    for (kind, set) in sets {
        let dir = paths.samples(kind);
        for (i, t) in set.iter().enumerate() {
            gmc::write(&dir.join(format!("sample_{i:05}.gmc")), &as_clip(cfg, t)?)?;
        }
    }
    Ok(())
}

fn read_sample_dir(dir: &Path) -> Result<Vec<Tensor>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "gmc"))
        .collect();
    files.sort();
    files.iter().map(|p| Ok(gmc::read(p)?.into_tensor())).collect()
}

pub fn read_samples(paths: &RunPaths) -> Result<Samples> {
    let unconditional = read_sample_dir(&paths.samples(SampleKind::Unconditional))?;
    let cond_dir = paths.samples(SampleKind::Conditional);
    let conditional = if cond_dir.exists() { Some(read_sample_dir(&cond_dir)?) } else { None };
    Ok(Samples { unconditional, conditional })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleMetrics {
    pub count: usize,
    pub fgd: f64,
    pub fgd_rank_warning: bool,
    pub diversity: f64,
    pub beat_alignment: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub extractor_final_loss: f64,
    pub held_out_beat_alignment: f64,
    pub unconditional: SampleMetrics,
    pub conditional: Option<SampleMetrics>,
    /// Conditioned minus unconditional beat alignment.
    pub beat_alignment_gain: Option<f64>,
    /// Largest element-wise difference between paired samples.
    pub max_sample_difference: Option<f64>,
}

/// Mean beat alignment of each motion against the audio beats of the
/// held-out clip with the same index.
pub fn mean_beat_alignment(cfg: &RunConfig, motions: &[Tensor], held_out: &[PairedClip]) -> Result<f64> {
    let scores = motions
        .par_iter()
        .zip(held_out)
        .map(|(m, c)| {
            let mb = motion_beats(&as_clip(cfg, m)?)?;
            let ab = audio_beats_from_mel(&c.mel)?;
            beat_align(&mb, &ab, cfg.eval.ba_sigma)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(scores.iter().sum::<f64>() / scores.len().max(1) as f64)
}

/// Trains the metric autoencoder on the training motions.
pub fn train_extractor(cfg: &RunConfig, data: &Dataset) -> Result<(FeatureExtractor, f64)> {
    let clips: Vec<Tensor> = data.train.iter().map(|c| c.motion.tensor().clone()).collect();
    let (fe, losses) = train_autoencoder(&clips, cfg.eval.extractor.clone(), cfg.eval.extractor_training)?;
    Ok((fe, losses.last().copied().unwrap_or(f64::NAN)))
}

fn sample_metrics(cfg: &RunConfig, fe: &FeatureExtractor, real: &[Tensor], gen: &[Tensor], held_out: &[PairedClip]) -> Result<SampleMetrics> {
    let f = fgd(real, gen, fe)?;
    Ok(SampleMetrics {
        count: gen.len(),
        fgd: f.fgd,
        fgd_rank_warning: f.rank_warning,
        diversity: diversity(gen, fe, cfg.eval.diversity_pairs, derive_seed(cfg.seed, "diversity-pairs"))?,
        beat_alignment: mean_beat_alignment(cfg, gen, held_out)?,
    })
}

pub fn evaluate(cfg: &RunConfig, data: &Dataset, fe: &FeatureExtractor, extractor_loss: f64, samples: &Samples) -> Result<EvalReport> {
    let real: Vec<Tensor> = data.held_out.iter().map(|c| c.motion.tensor().clone()).collect();
    let held_ba = mean_beat_alignment(cfg, &real, &data.held_out)?;
    let unconditional = sample_metrics(cfg, fe, &real, &samples.unconditional, &data.held_out)?;
    let conditional = match &samples.conditional {
        Some(c) => Some(sample_metrics(cfg, fe, &real, c, &data.held_out)?),
        None => None,
    };
    let max_sample_difference = samples.conditional.as_ref().map(|c| {
        c.iter()
            .zip(&samples.unconditional)
            .map(|(a, b)| a.max_abs_diff(b))
            .fold(0.0, f64::max)
    });
    Ok(EvalReport {
        extractor_final_loss: extractor_loss,
        held_out_beat_alignment: held_ba,
        beat_alignment_gain: conditional.as_ref().map(|c| c.beat_alignment - unconditional.beat_alignment),
        unconditional,
        conditional,
        max_sample_difference,
    })
}

pub fn eval_json(report: &EvalReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serialises");
    s.push('\n');
    s
}

/// Mean loss over the first and last tenth of a log (at least one step).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossTrend {
    pub steps: usize,
    pub window: usize,
    pub first: f64,
    pub last: f64,
    /// `1 − last / first`.
    pub reduction: f64,
}

pub fn loss_trend(log: &[LossReport]) -> Option<LossTrend> {
    if log.is_empty() {
        return None;
    }
    let window = (log.len() / 10).max(1);
    let mean = |s: &[LossReport]| s.iter().map(|r| r.l_total).sum::<f64>() / s.len() as f64;
    let first = mean(&log[..window]);
    let last = mean(&log[log.len() - window..]);
    Some(LossTrend {
        steps: log.len(),
        window,
        first,
        last,
        reduction: 1.0 - last / first,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub seed: u64,
    pub expert_parameters: usize,
    pub controlnet_parameters: usize,
    pub train_clips: usize,
    pub held_out_clips: usize,
    pub pretrain: Option<LossTrend>,
    pub finetune: Option<LossTrend>,
    pub eval: EvalReport,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialises");
        s.push('\n');
        s
    }

    /// Every number in the report, in field order.
    pub fn numbers(&self) -> Vec<f64> {
        fn walk(v: &serde_json::Value, out: &mut Vec<f64>) {
            match v {
                serde_json::Value::Number(n) => out.extend(n.as_f64()),
                serde_json::Value::Array(a) => a.iter().for_each(|x| walk(x, out)),
                serde_json::Value::Object(o) => o.values().for_each(|x| walk(x, out)),
                _ => {}
            }
        }
        let mut out = Vec::new();
        walk(&serde_json::to_value(self).expect("report serialises"), &mut out);
        out
    }
}

fn stage<T>(name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.in_stage(name))
}

/// Runs every stage, writing all artifacts under `cfg.out_dir`.
pub fn run_end_to_end(cfg: &RunConfig) -> Result<RunReport> {
    let paths = RunPaths::new(&cfg.out_dir);
    stage("setup", write_file(&paths.config(), cfg.to_toml().as_bytes()))?;
    let data = stage("generate", generate_data(cfg, &paths).and_then(|_| load_data(cfg, &paths)))?;
    info!("data: {} training / {} held-out clips", data.train.len(), data.held_out.len());

    let pre_log = stage("pretrain", (|| {
        let (model, opt, log) = pretrain(cfg, &data)?;
        save_expert(&paths.expert(), &model, Some(&opt))?;
        write_loss_log(&paths.pretrain_log(), &log)?;
        Ok(log)
    })())?;
    let (expert, expert_hash) = stage("pretrain", load_expert(&paths.expert()))?;

    let ft_log = stage("finetune", (|| {
        let (cnet, opt, log) = finetune(cfg, &data, &expert)?;
        save_controlnet(&paths.controlnet(), &cnet, &expert_hash, Some(&opt))?;
        write_loss_log(&paths.finetune_log(), &log)?;
        Ok(log)
    })())?;

    let samples = stage("sample", (|| {
        let (expert, hash) = load_expert(&paths.expert())?;
        let cnet = load_controlnet_file(&paths.controlnet(), &expert, &hash)?;
        let s = generate(cfg, &expert, Some(&cnet), &data.held_out)?;
        write_samples(cfg, &paths, &s)?;
        Ok((s, cnet.parameter_count()))
    })())?;
    let (samples, controlnet_parameters) = samples;

    let eval = stage("eval", (|| {
        let (fe, loss) = train_extractor(cfg, &data)?;
        extractor_checkpoint(&fe).write(&paths.extractor())?;
        let fe = load_extractor(&Checkpoint::read(&paths.extractor())?)?;
        evaluate(cfg, &data, &fe, loss, &samples)
    })())?;

    let report = RunReport {
        seed: cfg.seed,
        expert_parameters: expert.parameter_count(),
        controlnet_parameters,
        train_clips: data.train.len(),
        held_out_clips: data.held_out.len(),
        pretrain: loss_trend(&pre_log),
        finetune: loss_trend(&ft_log),
        eval,
    };
    stage("report", write_file(&paths.report(), report.to_json().as_bytes()))?;
    Ok(report)
}
