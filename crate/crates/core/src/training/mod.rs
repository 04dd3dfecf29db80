//! Training objectives, optimizer and the two training stages.
//!
//! Each step draws a timestep and noise per clip (and, when finetuning, a
//! condition-drop flag) sequentially from the caller's generator, evaluates
//! clips in parallel on independent tapes, sums their gradients in batch
//! order and applies one optimizer update. The result depends only on the
//! seed, configuration and data, not on thread scheduling.

pub mod gradcheck;
pub mod losses;
pub mod optim;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;

pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use losses::{
    loss_foot_contact, loss_graph, loss_simple, loss_total, loss_velocity, ContactMask,
    LossReport, LAMBDA_SIMPLE,
};
pub use optim::{AdamW, AdamWConfig};

use crate::autodiff::Graph;
use crate::controlnet::{self, ControlNetModel};
use crate::denoiser::{self, DenoiserModel};
use crate::diffusion::{add_noise_with, standard_normal, NoiseSchedule};
use crate::error::{Error, Result};
use crate::motion::JointLayout;
use crate::params::{accumulate, Params};
use crate::seed::rng_for;
use rand_chacha::ChaCha8Rng;
use crate::tensor::Tensor;

pub const PRETRAIN_LR: f64 = 1e-4;
pub const FINETUNE_LR: f64 = 1e-5;
/// Probability of replacing the audio condition by the null embedding.
pub const CONDITION_DROP: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Pretrain,
    Finetune,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Pretrain => "pretrain",
            Stage::Finetune => "finetune",
        })
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pretrain" => Ok(Stage::Pretrain),
            "finetune" => Ok(Stage::Finetune),
            _ => Err(Error::Config(format!("unknown training stage {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub stage: Stage,
    pub optimizer: AdamWConfig,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stops after this many optimizer steps even mid-epoch.
    pub max_steps: Option<usize>,
    pub condition_drop: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(stage: Stage, seed: u64) -> Self {
        let lr = match stage {
            Stage::Pretrain => PRETRAIN_LR,
            Stage::Finetune => FINETUNE_LR,
        };
        Self {
            stage,
            optimizer: AdamWConfig::with_lr(lr),
            batch_size: 8,
            epochs: 1,
            max_steps: None,
            condition_drop: CONDITION_DROP,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.condition_drop) {
            return Err(Error::Config("condition_drop must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// One training clip: clean motion, its contact mask and (for finetuning)
/// the paired mel frames.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub motion: Tensor,
    pub contact: ContactMask,
    pub mel: Option<Tensor>,
}

impl TrainSample {
    pub fn new(motion: Tensor, layout: &JointLayout, mel: Option<Tensor>) -> Self {
        let contact = ContactMask::from_motion(&motion, layout);
        Self { motion, contact, mel }
    }
}

/// Random quantities of one clip in one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDraw {
    pub t: usize,
    pub eps: Tensor,
    pub drop_condition: bool,
}

/// Draws `(t, ε, drop)` for every clip, in batch order.
pub fn draw_step<R: Rng + ?Sized>(
    batch: &[TrainSample],
    schedule: &NoiseSchedule,
    condition_drop: f64,
    rng: &mut R,
) -> Vec<StepDraw> {
    batch
        .iter()
        .map(|s| {
            let t = rng.random_range(1..=schedule.t_max());
            let eps = standard_normal(s.motion.rows(), s.motion.cols(), rng);
            let drop_condition = condition_drop > 0.0 && rng.random::<f64>() < condition_drop;
            StepDraw {
                t,
                eps,
                drop_condition,
            }
        })
        .collect()
}

fn check_batch(batch: &[TrainSample]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::InsufficientData("empty training batch".into()));
    }
    Ok(())
}

fn finish(
    step: u64,
    results: Vec<Result<(LossReport, Vec<Vec<Tensor>>)>>,
    zeros: Vec<Vec<Tensor>>,
) -> Result<(LossReport, Vec<Vec<Tensor>>)> {
    let n = results.len() as f64;
    let mut reports = Vec::with_capacity(results.len());
    let mut sum = zeros;
    for r in results {
        let (rep, grads) = r?;
        reports.push(rep);
        for (acc, g) in sum.iter_mut().zip(&grads) {
            accumulate(acc, g);
        }
    }
    let report = LossReport::mean(&reports);
    let grads_finite = sum.iter().flatten().all(Tensor::is_finite);
    if !report.is_finite() || !grads_finite {
        return Err(Error::NonFiniteLoss {
            step: step as usize,
            detail: format!(
                "l_simple {} l_vel {} l_foot {} (gradients finite: {grads_finite})",
                report.l_simple, report.l_vel, report.l_foot
            ),
        });
    }
    for g in sum.iter_mut().flatten() {
        g.scale_in_place(1.0 / n);
    }
    Ok((report, sum))
}

/// Loss and parameter gradients of the unconditional denoiser on one clip.
pub fn pretrain_clip_gradients(
    model: &DenoiserModel,
    sample: &TrainSample,
    draw: &StepDraw,
    layout: &JointLayout,
    schedule: &NoiseSchedule,
) -> Result<(LossReport, Vec<Tensor>)> {
    denoiser::check_input(&model.config, &sample.motion)?;
    let noised = add_noise_with(&sample.motion, draw.t, schedule, draw.eps.clone())?;
    let mut g = Graph::new();
    let p = model.params.bind(&mut g, true);
    let x = g.constant(noised.x_t);
    let (x0, _) = denoiser::forward(&mut g, &p, &model.config, x, draw.t);
    let lv = loss_graph(&mut g, &sample.motion, x0, layout, &sample.contact)?;
    let grads = g.backward(lv.total);
    Ok((lv.report(&g), p.grads(&grads)))
}

/// One optimizer step on the unconditional denoiser. Returns the batch-mean
/// losses measured before the update.
pub fn pretrain_step<R: Rng + ?Sized>(
    model: &mut DenoiserModel,
    opt: &mut AdamW,
    batch: &[TrainSample],
    layout: &JointLayout,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<LossReport> {
    check_batch(batch)?;
    let draws = draw_step(batch, schedule, 0.0, rng);
    let m: &DenoiserModel = model;
    let results: Vec<_> = batch
        .par_iter()
        .zip(&draws)
        .map(|(s, d)| pretrain_clip_gradients(m, s, d, layout, schedule).map(|(r, g)| (r, vec![g])))
        .collect();
    let (report, grads) = finish(opt.step, results, vec![model.params.zeros_like()])?;
    opt.update(&mut model.params, &grads[0])?;
    Ok(report)
}

/// Optimizer state of the three trainable ControlNet stores.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlNetOptimizer {
    pub copy: AdamW,
    pub moge: AdamW,
    pub audio: AdamW,
}

impl ControlNetOptimizer {
    pub fn new(config: AdamWConfig, cnet: &ControlNetModel) -> Self {
        Self {
            copy: AdamW::new(config, &cnet.copy.params),
            moge: AdamW::new(config, &cnet.moge),
            audio: AdamW::new(config, &cnet.audio.params),
        }
    }

    pub fn step(&self) -> u64 {
        self.moge.step
    }
}

/// Loss and gradients (copy, MoGE, audio encoder) of the conditional model
/// on one clip; the frozen expert enters as constants only.
pub fn finetune_clip_gradients(
    frozen: &DenoiserModel,
    cnet: &ControlNetModel,
    sample: &TrainSample,
    draw: &StepDraw,
    layout: &JointLayout,
    schedule: &NoiseSchedule,
) -> Result<(LossReport, Vec<Vec<Tensor>>)> {
    cnet.check_pairing(frozen)?;
    denoiser::check_input(&frozen.config, &sample.motion)?;
    let Some(mel) = &sample.mel else {
        return Err(Error::InsufficientData("finetuning sample without audio".into()));
    };
    let n = sample.motion.rows();
    let noised = add_noise_with(&sample.motion, draw.t, schedule, draw.eps.clone())?;
    let mut g = Graph::new();
    let fp = frozen.params.bind(&mut g, false);
    let cp = cnet.bind(&mut g, true);
    let audio = if draw.drop_condition {
        g.constant(Tensor::zeros(n, frozen.config.d_model))
    } else {
        controlnet::embed_audio_graph(&mut g, &cnet.audio, &cp.audio, mel, n)?
    };
    let x = g.constant(noised.x_t);
    let x0 = controlnet::forward(&mut g, &fp, &cp, &frozen.config, x, draw.t, audio);
    let lv = loss_graph(&mut g, &sample.motion, x0, layout, &sample.contact)?;
    let grads = g.backward(lv.total);
    Ok((
        lv.report(&g),
        vec![cp.copy.grads(&grads), cp.moge.grads(&grads), cp.audio.grads(&grads)],
    ))
}

/// One optimizer step on the ControlNet; the frozen expert is only read.
pub fn finetune_step<R: Rng + ?Sized>(
    frozen: &DenoiserModel,
    cnet: &mut ControlNetModel,
    opt: &mut ControlNetOptimizer,
    batch: &[TrainSample],
    layout: &JointLayout,
    schedule: &NoiseSchedule,
    condition_drop: f64,
    rng: &mut R,
) -> Result<LossReport> {
    check_batch(batch)?;
    let draws = draw_step(batch, schedule, condition_drop, rng);
    let c: &ControlNetModel = cnet;
    let results: Vec<_> = batch
        .par_iter()
        .zip(&draws)
        .map(|(s, d)| finetune_clip_gradients(frozen, c, s, d, layout, schedule))
        .collect();
    let zeros = vec![
        cnet.copy.params.zeros_like(),
        cnet.moge.zeros_like(),
        cnet.audio.params.zeros_like(),
    ];
    let (report, grads) = finish(opt.step(), results, zeros)?;
    opt.copy.update(&mut cnet.copy.params, &grads[0])?;
    opt.moge.update(&mut cnet.moge, &grads[1])?;
    opt.audio.update(&mut cnet.audio.params, &grads[2])?;
    Ok(report)
}

/// Batch-mean loss of the unconditional denoiser without updating anything.
pub fn evaluate_pretrain_loss(
    model: &DenoiserModel,
    batch: &[TrainSample],
    draws: &[StepDraw],
    layout: &JointLayout,
    schedule: &NoiseSchedule,
) -> Result<LossReport> {
    let mut reports = Vec::with_capacity(batch.len());
    for (s, d) in batch.iter().zip(draws) {
        let noised = add_noise_with(&s.motion, d.t, schedule, d.eps.clone())?;
        let x0 = denoiser::denoise(model, &noised.x_t, d.t)?.x0;
        reports.push(loss_total(&s.motion, &x0, layout, &s.contact)?);
    }
    Ok(LossReport::mean(&reports))
}

/// Partitions `n` sample indices into shuffled mini-batches.
pub fn epoch_batches<R: Rng + ?Sized>(n: usize, batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

/// Step count of a full run over `n` samples.
pub fn planned_steps(config: &TrainConfig, n: usize) -> usize {
    let per_epoch = n.div_ceil(config.batch_size.max(1));
    let total = per_epoch * config.epochs;
    config.max_steps.map_or(total, |m| m.min(total))
}

/// Runs `config.epochs` shuffled epochs (capped at `max_steps`), calling
/// `step` with each batch and the noise generator. Batch order comes from
/// the `"data-order"` stream of `config.seed`, per-step draws from
/// `"noise"`. Returns the per-step losses.
pub fn run_epochs(
    config: &TrainConfig,
    samples: &[TrainSample],
    mut step: impl FnMut(&[TrainSample], &mut ChaCha8Rng) -> Result<LossReport>,
    mut on_step: impl FnMut(usize, &LossReport),
) -> Result<Vec<LossReport>> {
    config.validate()?;
    let limit = planned_steps(config, samples.len());
    if limit > 0 && samples.is_empty() {
        return Err(Error::InsufficientData("no training samples".into()));
    }
    let mut order = rng_for(config.seed, "data-order");
    let mut noise = rng_for(config.seed, "noise");
    let mut log = Vec::with_capacity(limit);
    'outer: for _ in 0..config.epochs {
        for idx in epoch_batches(samples.len(), config.batch_size, &mut order) {
            if log.len() == limit {
                break 'outer;
            }
            let batch: Vec<TrainSample> = idx.iter().map(|&i| samples[i].clone()).collect();
            let report = step(&batch, &mut noise)?;
            on_step(log.len(), &report);
            log.push(report);
        }
    }
    Ok(log)
}

/// Same names, shapes and bit patterns.
pub fn bit_identical(a: &Params, b: &Params) -> bool {
    a.names() == b.names()
        && a.tensors().iter().zip(b.tensors()).all(|(x, y)| {
            x.shape() == y.shape()
                && x.data().iter().zip(y.data()).all(|(p, q)| p.to_bits() == q.to_bits())
        })
}
