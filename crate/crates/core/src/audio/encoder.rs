//! Trainable audio encoder and time alignment.
//!
//! The encoder is two temporal convolutions (kernel `k`, GELU) followed by a
//! linear projection to `d_model`. Mel frames are standardized per band over
//! time before the first convolution; this step has no parameters.

use rand::Rng;

use crate::audio::mel::MelSpectrogram;
use crate::autodiff::{Graph, Var};
use crate::params::{Bound, Params};
use crate::tensor::Tensor;

pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AudioEncoderConfig {
    pub n_mels: usize,
    pub hidden: usize,
    pub d_model: usize,
    pub kernel: usize,
}

impl AudioEncoderConfig {
    pub fn new(n_mels: usize, d_model: usize) -> Self {
        Self {
            n_mels,
            hidden: d_model,
            d_model,
            kernel: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AudioEncoder {
    pub config: AudioEncoderConfig,
    pub params: Params,
}

impl AudioEncoder {
    pub fn new<R: Rng + ?Sized>(config: AudioEncoderConfig, rng: &mut R) -> Self {
        let mut enc = Self::zeros(config);
        for (name, t) in [
            ("audio.conv1.w", config.n_mels * config.kernel),
            ("audio.conv2.w", config.hidden * config.kernel),
        ] {
            let fan_in = t as f64;
            let w = enc.params.get_mut(name);
            *w = Tensor::randn(w.rows(), w.cols(), 1.0 / fan_in.sqrt(), rng);
        }
        let w = enc.params.get_mut("audio.proj.w");
        *w = Tensor::randn(w.rows(), w.cols(), INIT_STD, rng);
        enc
    }

    /// Every parameter zero.
    pub fn zeros(config: AudioEncoderConfig) -> Self {
        let c = config;
        let mut params = Params::new();
        params.insert("audio.conv1.w", Tensor::zeros(c.n_mels * c.kernel, c.hidden));
        params.insert("audio.conv1.b", Tensor::zeros(1, c.hidden));
        params.insert("audio.conv2.w", Tensor::zeros(c.hidden * c.kernel, c.hidden));
        params.insert("audio.conv2.b", Tensor::zeros(1, c.hidden));
        params.insert("audio.proj.w", Tensor::zeros(c.hidden, c.d_model));
        params.insert("audio.proj.b", Tensor::zeros(1, c.d_model));
        Self { config, params }
    }

    /// Encodes `[T_a × n_mels]` mel frames to `[T_a × d_model]` on the tape.
    pub fn forward(&self, g: &mut Graph, p: &Bound<'_>, mel_frames: &Tensor) -> Var {
        let x = g.constant(standardize_bands(mel_frames));
        let k = self.config.kernel;
        let u = g.unfold(x, k);
        let h = g.linear(u, p.var("audio.conv1.w"), p.var("audio.conv1.b"));
        let h = g.gelu(h);
        let u = g.unfold(h, k);
        let h = g.linear(u, p.var("audio.conv2.w"), p.var("audio.conv2.b"));
        let h = g.gelu(h);
        g.linear(h, p.var("audio.proj.w"), p.var("audio.proj.b"))
    }
}

/// Zero-mean, unit-variance mel bands over time (variance floored at 1e-5).
pub fn standardize_bands(mel: &Tensor) -> Tensor {
    let (t, m) = mel.shape();
    let mut out = mel.clone();
    for band in 0..m {
        let mu = (0..t).map(|r| mel.get(r, band)).sum::<f64>() / t as f64;
        let var = (0..t).map(|r| (mel.get(r, band) - mu).powi(2)).sum::<f64>() / t as f64;
        let inv = 1.0 / var.max(1e-5).sqrt();
        for r in 0..t {
            out.set(r, band, (mel.get(r, band) - mu) * inv);
        }
    }
    out
}

/// Runs the encoder outside training; `[T_a × d_model]`.
pub fn encode_audio(mel: &MelSpectrogram, encoder: &AudioEncoder) -> Tensor {
    let mut g = Graph::new();
    let p = encoder.params.bind(&mut g, false);
    let out = encoder.forward(&mut g, &p, &mel.frames);
    g.value(out).clone()
}

/// `[N × T_a]` linear-interpolation weights sampling `T_a` source frames at
/// `N` uniformly spaced positions over `[0, T_a − 1]`.
pub fn interpolation_matrix(source_frames: usize, target_frames: usize) -> Tensor {
    assert!(source_frames >= 1 && target_frames >= 1);
    let mut m = Tensor::zeros(target_frames, source_frames);
    for k in 0..target_frames {
        let pos = if target_frames == 1 {
            0.0
        } else {
            (k * (source_frames - 1)) as f64 / (target_frames - 1) as f64
        };
        let lo = (pos.floor() as usize).min(source_frames - 1);
        let frac = pos - lo as f64;
        if frac == 0.0 || lo + 1 >= source_frames {
            m.set(k, lo, 1.0);
        } else {
            m.set(k, lo, 1.0 - frac);
            m.set(k, lo + 1, frac);
        }
    }
    m
}

/// Resamples `[T_a × d]` features onto `motion_frames` rows.
pub fn align_to_motion(emb: &Tensor, motion_frames: usize) -> Tensor {
    if emb.rows() == motion_frames {
        return emb.clone();
    }
    interpolation_matrix(emb.rows(), motion_frames).matmul(emb)
}
