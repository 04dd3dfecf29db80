//! Audio ControlNet: a trainable copy of the pretrained denoiser whose
//! per-layer features are turned into audio-aware corrections by
//! mixture-of-gesture-experts blocks and blended into the frozen stream.
//!
//! For layer `l`, with `h_l` the frozen stream entering the layer:
//!
//! ```text
//! f'     = frozen_block_l(h_l)
//! f''    = copy_block_l(c_l)                      (c is the copy's own stream)
//! f_tr   = AdaIN(CrossAttn(Q = f_a, K = V = f''), mean_t(f_a))
//! R      = softmax(h_l · W_R + b_R)[:, 0]
//! h_l+1  = R ⊙ f' + (1 − R) ⊙ (f' + Z(f_tr))  =  f' + (1 − R) ⊙ Z(f_tr)
//! ```
//!
//! `Z` is a per-frame linear map that starts at exactly zero, so an untrained
//! ControlNet reproduces the frozen expert bit for bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::audio::encoder::{interpolation_matrix, AudioEncoder, AudioEncoderConfig};
use crate::autodiff::{Graph, Var};
use crate::denoiser::{self, DenoiserConfig, DenoiserModel};
use crate::diffusion::ConditionalDenoise;
use crate::error::{Error, Result};
use crate::layers::{self, INIT_STD};
use crate::params::{Bound, Params};
use crate::tensor::Tensor;

/// Variance floor of the time normalization inside AdaIN.
pub const ADAIN_VAR_FLOOR: f64 = 1e-5;
/// Initial router bias `(b, −b)`, so `R = sigmoid(2b)` favours the frozen branch.
pub const ROUTER_INIT_BIAS: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ControlNetModel {
    /// Trainable copy of the expert, initialized from its weights.
    pub copy: DenoiserModel,
    /// Per-layer blocks, `moge.{l}.{attn.q|k|v|o, adain, router, zero}`.
    pub moge: Params,
    pub audio: AudioEncoder,
}

/// All trainable parameter stores of a ControlNet, bound to one graph.
pub struct BoundControlNet<'p> {
    pub copy: Bound<'p>,
    pub moge: Bound<'p>,
    pub audio: Bound<'p>,
}

impl ControlNetModel {
    /// Builds a ControlNet around `expert` for `n_mels`-band audio input.
    pub fn from_expert(expert: &DenoiserModel, n_mels: usize, seed: u64) -> Result<Self> {
        let cfg = expert.config;
        cfg.validate()?;
        if n_mels == 0 {
            return Err(Error::Config("audio.n_mels must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = cfg.d_model;
        let mut moge = Params::new();
        for l in 0..cfg.n_layers {
            layers::insert_attention(&mut moge, &format!("moge.{l}.attn"), cfg.attention(), 1.0, &mut rng);
            layers::insert_linear(&mut moge, &format!("moge.{l}.adain"), d, 2 * d, INIT_STD, &mut rng);
            layers::insert_linear(&mut moge, &format!("moge.{l}.router"), d, 2, INIT_STD, &mut rng);
            moge.get_mut(&format!("moge.{l}.router.b"))
                .data_mut()
                .copy_from_slice(&[ROUTER_INIT_BIAS, -ROUTER_INIT_BIAS]);
            layers::insert_linear(&mut moge, &format!("moge.{l}.zero"), d, d, 0.0, &mut rng);
        }
        let audio = AudioEncoder::new(AudioEncoderConfig::new(n_mels, d), &mut rng);
        Ok(Self {
            copy: expert.clone(),
            moge,
            audio,
        })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.copy.config
    }

    pub fn n_layers(&self) -> usize {
        self.copy.config.n_layers
    }

    pub fn parameter_count(&self) -> usize {
        self.copy.params.element_count() + self.moge.element_count() + self.audio.params.element_count()
    }

    pub fn bind<'p>(&'p self, g: &mut Graph, trainable: bool) -> BoundControlNet<'p> {
        BoundControlNet {
            copy: self.copy.params.bind(g, trainable),
            moge: self.moge.bind(g, trainable),
            audio: self.audio.params.bind(g, trainable),
        }
    }

    /// Checks that this ControlNet was built for `expert`'s architecture.
    pub fn check_pairing(&self, expert: &DenoiserModel) -> Result<()> {
        if self.copy.config != expert.config {
            return Err(Error::Checkpoint(
                "ControlNet and expert configurations differ".into(),
            ));
        }
        Ok(())
    }

    /// Encodes `[T_a × n_mels]` mel frames and aligns them to `n_frames`;
    /// the frame-aligned audio embedding, `[n_frames × d_model]`.
    pub fn embed_audio(&self, mel_frames: &Tensor, n_frames: usize) -> Result<Tensor> {
        let mut g = Graph::new();
        let p = self.audio.params.bind(&mut g, false);
        let a = embed_audio_graph(&mut g, &self.audio, &p, mel_frames, n_frames)?;
        Ok(g.value(a).clone())
    }
}

/// Audio encoder followed by linear-interpolation alignment, on the tape.
pub fn embed_audio_graph(
    g: &mut Graph,
    encoder: &AudioEncoder,
    p: &Bound<'_>,
    mel_frames: &Tensor,
    n_frames: usize,
) -> Result<Var> {
    if mel_frames.cols() != encoder.config.n_mels {
        return Err(Error::ShapeMismatch(format!(
            "audio encoder expects {} mel bands, got {}",
            encoder.config.n_mels,
            mel_frames.cols()
        )));
    }
    if mel_frames.rows() == 0 || n_frames == 0 {
        return Err(Error::ShapeMismatch("empty audio or motion".into()));
    }
    let emb = encoder.forward(g, p, mel_frames);
    if mel_frames.rows() == n_frames {
        return Ok(emb);
    }
    let m = g.constant(interpolation_matrix(mel_frames.rows(), n_frames));
    Ok(g.matmul(m, emb))
}

/// Queries from audio, keys and values from the copy's layer output.
pub fn cross_attend_graph(
    g: &mut Graph,
    moge: &Bound<'_>,
    cfg: &DenoiserConfig,
    layer: usize,
    audio: Var,
    motion: Var,
) -> Var {
    layers::attention(g, moge, &format!("moge.{layer}.attn"), cfg.attention(), audio, motion).0
}

/// Per-channel time normalization, then `(1 + scale)·x̂ + shift` with
/// `(scale, shift)` projected from the audio summary row.
pub fn adain_graph(g: &mut Graph, moge: &Bound<'_>, d_model: usize, layer: usize, x: Var, summary: Var) -> Var {
    let ss = layers::linear(g, moge, &format!("moge.{layer}.adain"), summary);
    let scale = g.slice_cols(ss, 0, d_model);
    let shift = g.slice_cols(ss, d_model, d_model);
    let xn = g.instance_norm(x, ADAIN_VAR_FLOOR);
    layers::modulate(g, xn, shift, scale)
}

/// Router weight `R` per frame, `[N × 1]`.
pub fn router_graph(g: &mut Graph, moge: &Bound<'_>, layer: usize, guidance: Var) -> Var {
    let logits = layers::linear(g, moge, &format!("moge.{layer}.router"), guidance);
    let probs = g.softmax_rows(logits);
    g.slice_cols(probs, 0, 1)
}

/// `f' + (1 − R) ⊙ Z(f_train)`.
pub fn route_blend_graph(
    g: &mut Graph,
    moge: &Bound<'_>,
    layer: usize,
    frozen: Var,
    trainable: Var,
    guidance: Var,
) -> Var {
    let r = router_graph(g, moge, layer, guidance);
    let neg = g.scale(r, -1.0);
    let keep = g.add_scalar(neg, 1.0);
    let z = layers::linear(g, moge, &format!("moge.{layer}.zero"), trainable);
    let z = g.mul_col(z, keep);
    g.add(frozen, z)
}

/// Conditional forward pass. `audio` is the frame-aligned embedding.
pub fn forward(
    g: &mut Graph,
    frozen: &Bound<'_>,
    cnet: &BoundControlNet<'_>,
    cfg: &DenoiserConfig,
    x_t: Var,
    t: usize,
    audio: Var,
) -> Var {
    let n = g.value(x_t).rows();
    let cond_frozen = denoiser::timestep_condition(g, frozen, cfg, t);
    let cond_copy = denoiser::timestep_condition(g, &cnet.copy, cfg, t);
    let mut h = denoiser::embed_tokens(g, frozen, x_t, n);
    let mut c = denoiser::embed_tokens(g, &cnet.copy, x_t, n);
    let summary = g.mean_rows(audio);
    for l in 0..cfg.n_layers {
        let f_frozen = denoiser::block(g, frozen, cfg, l, h, cond_frozen);
        c = denoiser::block(g, &cnet.copy, cfg, l, c, cond_copy);
        let a = cross_attend_graph(g, &cnet.moge, cfg, l, audio, c);
        let f_train = adain_graph(g, &cnet.moge, cfg.d_model, l, a, summary);
        h = route_blend_graph(g, &cnet.moge, l, f_frozen, f_train, h);
    }
    denoiser::head(g, frozen, h)
}

fn check_audio(cfg: &DenoiserConfig, x_t: &Tensor, audio: &Tensor) -> Result<()> {
    if audio.shape() != (x_t.rows(), cfg.d_model) {
        return Err(Error::ShapeMismatch(format!(
            "audio embedding must be {}x{}, got {}x{}",
            x_t.rows(),
            cfg.d_model,
            audio.rows(),
            audio.cols()
        )));
    }
    Ok(())
}

/// Clean-motion prediction of the frozen expert steered by the ControlNet.
pub fn controlnet_denoise(
    frozen: &DenoiserModel,
    cnet: &ControlNetModel,
    x_t: &Tensor,
    t: usize,
    audio: &Tensor,
) -> Result<Tensor> {
    cnet.check_pairing(frozen)?;
    denoiser::check_input(&frozen.config, x_t)?;
    check_audio(&frozen.config, x_t, audio)?;
    let mut g = Graph::new();
    let fp = frozen.params.bind(&mut g, false);
    let cp = cnet.bind(&mut g, false);
    let x = g.constant(x_t.clone());
    let a = g.constant(audio.clone());
    let out = forward(&mut g, &fp, &cp, &frozen.config, x, t, a);
    Ok(g.value(out).clone())
}

fn with_block<T>(cnet: &ControlNetModel, layer: usize, f: impl FnOnce(&mut Graph, &Bound<'_>) -> T) -> Result<T> {
    if layer >= cnet.n_layers() {
        return Err(Error::ShapeMismatch(format!(
            "layer {layer} out of range for {} layers",
            cnet.n_layers()
        )));
    }
    let mut g = Graph::new();
    let p = cnet.moge.bind(&mut g, false);
    Ok(f(&mut g, &p))
}

fn check_width(cnet: &ControlNetModel, xs: &[&Tensor]) -> Result<()> {
    let d = cnet.config().d_model;
    let n = xs[0].rows();
    for x in xs {
        if x.cols() != d || x.rows() != n {
            return Err(Error::ShapeMismatch(format!(
                "expected {n}x{d} features, got {}x{}",
                x.rows(),
                x.cols()
            )));
        }
    }
    Ok(())
}

/// Cross-attention of layer `layer` outside a training graph.
pub fn cross_attend(cnet: &ControlNetModel, layer: usize, audio: &Tensor, motion: &Tensor) -> Result<Tensor> {
    let d = cnet.config().d_model;
    if audio.cols() != d || motion.cols() != d {
        return Err(Error::ShapeMismatch(format!("features must have {d} channels")));
    }
    let cfg = *cnet.config();
    with_block(cnet, layer, |g, p| {
        let a = g.constant(audio.clone());
        let m = g.constant(motion.clone());
        let out = cross_attend_graph(g, p, &cfg, layer, a, m);
        g.value(out).clone()
    })
}

/// AdaIN of layer `layer`; `summary` is a `[1 × d_model]` audio row.
pub fn adain(cnet: &ControlNetModel, layer: usize, features: &Tensor, summary: &Tensor) -> Result<Tensor> {
    let d = cnet.config().d_model;
    if features.cols() != d || summary.shape() != (1, d) {
        return Err(Error::ShapeMismatch(format!("features must have {d} channels")));
    }
    if features.rows() < 2 {
        return Err(Error::TooShort("AdaIN needs at least 2 frames".into()));
    }
    with_block(cnet, layer, |g, p| {
        let x = g.constant(features.clone());
        let s = g.constant(summary.clone());
        let out = adain_graph(g, p, d, layer, x, s);
        g.value(out).clone()
    })
}

/// Router weights `R` of layer `layer` for a guidance stream.
pub fn router_weights(cnet: &ControlNetModel, layer: usize, guidance: &Tensor) -> Result<Tensor> {
    check_width(cnet, &[guidance])?;
    with_block(cnet, layer, |g, p| {
        let x = g.constant(guidance.clone());
        let r = router_graph(g, p, layer, x);
        g.value(r).clone()
    })
}

/// Blend of layer `layer` outside a training graph.
pub fn route_blend(
    cnet: &ControlNetModel,
    layer: usize,
    frozen: &Tensor,
    trainable: &Tensor,
    guidance: &Tensor,
) -> Result<Tensor> {
    check_width(cnet, &[frozen, trainable, guidance])?;
    with_block(cnet, layer, |g, p| {
        let f = g.constant(frozen.clone());
        let tr = g.constant(trainable.clone());
        let gd = g.constant(guidance.clone());
        let out = route_blend_graph(g, p, layer, f, tr, gd);
        g.value(out).clone()
    })
}

/// The frozen expert steered by a ControlNet, as a sampler-facing predictor.
#[derive(Debug, Clone, Copy)]
pub struct Conditioned<'a> {
    pub expert: &'a DenoiserModel,
    pub cnet: &'a ControlNetModel,
}

impl ConditionalDenoise for Conditioned<'_> {
    fn predict_x0_cond(&self, x_t: &Tensor, t: usize, audio: &Tensor) -> Result<Tensor> {
        controlnet_denoise(self.expert, self.cnet, x_t, t, audio)
    }
}
