//! Clip-level motion features from a small temporal-convolution autoencoder.
//!
//! Encoder: two kernel-`k` convolutions with GELU, mean pooling over time and
//! a linear map to the latent. Decoder: the latent is projected, broadcast
//! over frames, offset by a learned per-frame embedding, then a convolution
//! and a linear map back to motion channels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::layers;
use crate::params::{accumulate, Bound, Params};
use crate::tensor::Tensor;
use crate::training::{AdamW, AdamWConfig};

pub const DEFAULT_LATENT_DIM: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExtractorConfig {
    pub input_dim: usize,
    pub hidden: usize,
    pub latent_dim: usize,
    pub kernel: usize,
    pub max_frames: usize,
}

impl ExtractorConfig {
    pub fn new(input_dim: usize, max_frames: usize) -> Self {
        Self {
            input_dim,
            hidden: 64,
            latent_dim: DEFAULT_LATENT_DIM,
            kernel: 3,
            max_frames,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if [self.input_dim, self.hidden, self.latent_dim, self.kernel, self.max_frames].contains(&0) {
            return Err(Error::Config("extractor dimensions must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtractorTraining {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for ExtractorTraining {
    fn default() -> Self {
        Self {
            steps: 300,
            batch_size: 8,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureExtractor {
    pub config: ExtractorConfig,
    pub params: Params,
}

impl FeatureExtractor {
    pub fn new(config: ExtractorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (c, h, k) = (config.input_dim, config.hidden, config.kernel);
        let conv_std = |fan_in: usize| 1.0 / (fan_in as f64).sqrt();
        let mut p = Params::new();
        layers::insert_linear(&mut p, "enc.conv1", c * k, h, conv_std(c * k), &mut rng);
        layers::insert_linear(&mut p, "enc.conv2", h * k, h, conv_std(h * k), &mut rng);
        layers::insert_linear(&mut p, "enc.latent", h, config.latent_dim, conv_std(h), &mut rng);
        layers::insert_linear(&mut p, "dec.expand", config.latent_dim, h, conv_std(config.latent_dim), &mut rng);
        p.insert("dec.pos", Tensor::randn(config.max_frames, h, 0.1, &mut rng));
        layers::insert_linear(&mut p, "dec.conv", h * k, h, conv_std(h * k), &mut rng);
        layers::insert_linear(&mut p, "dec.out", h, c, conv_std(h), &mut rng);
        Ok(Self { config, params: p })
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    fn check(&self, clip: &Tensor) -> Result<()> {
        if clip.cols() != self.config.input_dim || clip.rows() == 0 || clip.rows() > self.config.max_frames {
            return Err(Error::ShapeMismatch(format!(
                "extractor expects 1..={} frames of {} channels, got {}x{}",
                self.config.max_frames,
                self.config.input_dim,
                clip.rows(),
                clip.cols()
            )));
        }
        Ok(())
    }

    fn encode_graph(&self, g: &mut Graph, p: &Bound<'_>, x: Var) -> Var {
        let k = self.config.kernel;
        let u = g.unfold(x, k);
        let h = layers::linear(g, p, "enc.conv1", u);
        let h = g.gelu(h);
        let u = g.unfold(h, k);
        let h = layers::linear(g, p, "enc.conv2", u);
        let h = g.gelu(h);
        let pooled = g.mean_rows(h);
        layers::linear(g, p, "enc.latent", pooled)
    }

    fn decode_graph(&self, g: &mut Graph, p: &Bound<'_>, z: Var, n: usize) -> Var {
        let e = layers::linear(g, p, "dec.expand", z);
        let ones = g.constant(Tensor::filled(n, 1, 1.0));
        let h = g.matmul(ones, e);
        let pos = g.slice_rows(p.var("dec.pos"), 0, n);
        let h = g.add(h, pos);
        let h = g.gelu(h);
        let u = g.unfold(h, self.config.kernel);
        let h = layers::linear(g, p, "dec.conv", u);
        let h = g.gelu(h);
        layers::linear(g, p, "dec.out", h)
    }

    /// Latent vector of one clip.
    pub fn encode(&self, clip: &Tensor) -> Result<Vec<f64>> {
        self.check(clip)?;
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let x = g.constant(clip.clone());
        let z = self.encode_graph(&mut g, &p, x);
        Ok(g.value(z).data().to_vec())
    }

    /// Latents of many clips as rows, in input order.
    pub fn encode_all(&self, clips: &[Tensor]) -> Result<Tensor> {
        let rows: Vec<Vec<f64>> = clips.par_iter().map(|c| self.encode(c)).collect::<Result<_>>()?;
        let data: Vec<f64> = rows.into_iter().flatten().collect();
        Tensor::from_vec(clips.len(), self.latent_dim(), data)
    }

    pub fn reconstruct(&self, clip: &Tensor) -> Result<Tensor> {
        self.check(clip)?;
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let x = g.constant(clip.clone());
        let z = self.encode_graph(&mut g, &p, x);
        let y = self.decode_graph(&mut g, &p, z, clip.rows());
        Ok(g.value(y).clone())
    }

    fn loss_and_grads(&self, clip: &Tensor) -> (f64, Vec<Tensor>) {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, true);
        let x = g.constant(clip.clone());
        let z = self.encode_graph(&mut g, &p, x);
        let y = self.decode_graph(&mut g, &p, z, clip.rows());
        let l = g.mse(y, x);
        let grads = g.backward(l);
        (g.value(l).get(0, 0), p.grads(&grads))
    }
}

/// Fits an autoencoder to `clips` by reconstruction error. Returns the
/// extractor and the per-step mean batch loss.
pub fn train_autoencoder(
    clips: &[Tensor],
    config: ExtractorConfig,
    training: ExtractorTraining,
) -> Result<(FeatureExtractor, Vec<f64>)> {
    if clips.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "autoencoder training needs at least 2 clips, got {}",
            clips.len()
        )));
    }
    let mut model = FeatureExtractor::new(config, training.seed)?;
    for c in clips {
        model.check(c)?;
    }
    let mut opt = AdamW::new(AdamWConfig::with_lr(training.learning_rate), &model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(training.seed ^ 0x5eed);
    let b = training.batch_size.clamp(1, clips.len());
    let mut losses = Vec::with_capacity(training.steps);
    for step in 0..training.steps {
        let idx: Vec<usize> = (0..b).map(|_| rng.random_range(0..clips.len())).collect();
        let m = &model;
        let results: Vec<(f64, Vec<Tensor>)> = idx.par_iter().map(|&i| m.loss_and_grads(&clips[i])).collect();
        let mut sum = model.params.zeros_like();
        let mut loss = 0.0;
        for (l, g) in &results {
            loss += l;
            accumulate(&mut sum, g);
        }
        loss /= b as f64;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                detail: "autoencoder reconstruction".into(),
            });
        }
        for g in &mut sum {
            g.scale_in_place(1.0 / b as f64);
        }
        opt.update(&mut model.params, &sum)?;
        losses.push(loss);
    }
    Ok((model, losses))
}
