//! The unconditional gesture denoiser: a transformer over per-frame motion
//! tokens that predicts the clean clip from a noised one.
//!
//! Layout of one forward pass:
//!
//! 1. `h₀ = x_t · W_in + b_in + pos[0..N]` (one token per frame)
//! 2. `c = MLP(sinusoid(t))`, and per layer `(shift₁, scale₁, gate₁, shift₂,
//!    scale₂, gate₂) = silu(c) · W_ada + b_ada`
//! 3. per layer: `h += gate₁ ⊙ Attn(mod(LN(h)))`, `h += gate₂ ⊙ FFN(mod(LN(h)))`
//! 4. `x̂₀ = LN_affine(h) · W_out + b_out`
//!
//! The adaptive-modulation projections start at zero, so every block is the
//! identity at initialization.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::diffusion::Denoise;
use crate::error::{Error, Result};
use crate::layers::{self, AttentionShape, INIT_STD, LN_EPS};
use crate::params::{Bound, Params};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DenoiserConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_heads: usize,
    pub ff_multiplier: usize,
    pub input_dim: usize,
    pub max_frames: usize,
}

impl DenoiserConfig {
    /// 43 joints × 6D.
    pub const DEFAULT_INPUT_DIM: usize = 258;
    pub const DEFAULT_MAX_FRAMES: usize = 150;

    fn scaled(n_layers: usize, d_model: usize, n_heads: usize, d_heads: usize) -> Self {
        Self {
            n_layers,
            d_model,
            n_heads,
            d_heads,
            ff_multiplier: 4,
            input_dim: Self::DEFAULT_INPUT_DIM,
            max_frames: Self::DEFAULT_MAX_FRAMES,
        }
    }

    /// Desk-scale model used by tests and the synthetic pipeline.
    pub fn tiny() -> Self {
        Self::scaled(2, 32, 2, 16)
    }

    pub fn base() -> Self {
        Self::scaled(25, 512, 8, 128)
    }

    pub fn medium() -> Self {
        Self::scaled(25, 1024, 16, 128)
    }

    pub fn large() -> Self {
        Self::scaled(50, 1024, 16, 128)
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "tiny" => Some(Self::tiny()),
            "base" => Some(Self::base()),
            "medium" => Some(Self::medium()),
            "large" => Some(Self::large()),
            _ => None,
        }
    }

    pub fn attention(&self) -> AttentionShape {
        AttentionShape {
            d_model: self.d_model,
            n_heads: self.n_heads,
            d_heads: self.d_heads,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("n_layers", self.n_layers),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("d_heads", self.d_heads),
            ("ff_multiplier", self.ff_multiplier),
            ("input_dim", self.input_dim),
            ("max_frames", self.max_frames),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("model.{name} must be positive")));
        }
        if self.d_model % 2 != 0 {
            return Err(Error::Config(
                "model.d_model must be even for the sinusoidal timestep encoding".into(),
            ));
        }
        Ok(())
    }

    /// Number of scalars [`build_denoiser`] allocates for this config.
    pub fn parameter_count(&self) -> usize {
        let d = self.d_model;
        let a = self.n_heads * self.d_heads;
        let f = self.ff_multiplier * d;
        let i = self.input_dim;
        let per_layer = (d * 6 * d + 6 * d) + 3 * (d * a + a) + (a * d + d) + (d * f + f) + (f * d + d);
        (i * d + d) + self.max_frames * d + 2 * (d * d + d) + self.n_layers * per_layer + 2 * d + (d * i + i)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserModel {
    pub config: DenoiserConfig,
    pub params: Params,
}

impl DenoiserModel {
    pub fn parameter_count(&self) -> usize {
        self.params.element_count()
    }
}

/// Allocates and initializes a denoiser: weights `N(0, 0.02²)`, residual
/// output projections additionally scaled by `1/√(2·n_layers)`, biases zero,
/// adaptive modulation zero, final norm gain one.
pub fn build_denoiser(config: DenoiserConfig, seed: u64) -> Result<DenoiserModel> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = config.d_model;
    let out_scale = 1.0 / (2.0 * config.n_layers as f64).sqrt();
    let mut p = Params::new();
    layers::insert_linear(&mut p, "in_proj", config.input_dim, d, INIT_STD, &mut rng);
    p.insert("pos_emb", Tensor::randn(config.max_frames, d, INIT_STD, &mut rng));
    layers::insert_linear(&mut p, "t_mlp.fc1", d, d, INIT_STD, &mut rng);
    layers::insert_linear(&mut p, "t_mlp.fc2", d, d, INIT_STD, &mut rng);
    for l in 0..config.n_layers {
        layers::insert_linear(&mut p, &format!("blocks.{l}.ada"), d, 6 * d, 0.0, &mut rng);
        layers::insert_attention(
            &mut p,
            &format!("blocks.{l}.attn"),
            config.attention(),
            out_scale,
            &mut rng,
        );
        let f = config.ff_multiplier * d;
        layers::insert_linear(&mut p, &format!("blocks.{l}.ff.fc1"), d, f, INIT_STD, &mut rng);
        layers::insert_linear(
            &mut p,
            &format!("blocks.{l}.ff.fc2"),
            f,
            d,
            INIT_STD * out_scale,
            &mut rng,
        );
    }
    p.insert("final_norm.g", Tensor::filled(1, d, 1.0));
    p.insert("final_norm.b", Tensor::zeros(1, d));
    layers::insert_linear(&mut p, "out_proj", d, config.input_dim, INIT_STD, &mut rng);
    Ok(DenoiserModel { config, params: p })
}

/// Raw sinusoidal encoding of `t`: pairs `(sin(t·ωᵢ), cos(t·ωᵢ))` with
/// `ωᵢ = 10000^(−2i/d)`, interleaved.
pub fn sinusoidal_embedding(t: usize, d_model: usize) -> Tensor {
    let half = d_model / 2;
    let mut v = Vec::with_capacity(d_model);
    for i in 0..half {
        let w = 10000f64.powf(-(2.0 * i as f64) / d_model as f64);
        let x = t as f64 * w;
        v.push(x.sin());
        v.push(x.cos());
    }
    Tensor::row_vector(v)
}

/// The model's timestep embedding `MLP(sinusoid(t))`, `[1 × d_model]`.
pub fn timestep_embed(model: &DenoiserModel, t: usize) -> Tensor {
    let mut g = Graph::new();
    let p = model.params.bind(&mut g, false);
    let c = timestep_condition(&mut g, &p, &model.config, t);
    g.value(c).clone()
}

pub(crate) fn timestep_condition(g: &mut Graph, p: &Bound<'_>, cfg: &DenoiserConfig, t: usize) -> Var {
    let raw = g.constant(sinusoidal_embedding(t, cfg.d_model));
    let h = layers::linear(g, p, "t_mlp.fc1", raw);
    let h = g.silu(h);
    layers::linear(g, p, "t_mlp.fc2", h)
}

/// Frame tokens `x_t · W_in + b_in + pos[0..N]`.
pub(crate) fn embed_tokens(g: &mut Graph, p: &Bound<'_>, x_t: Var, n_frames: usize) -> Var {
    let h = layers::linear(g, p, "in_proj", x_t);
    let pos = g.slice_rows(p.var("pos_emb"), 0, n_frames);
    g.add(h, pos)
}

/// One transformer block with adaptive layer-norm modulation.
pub(crate) fn block(g: &mut Graph, p: &Bound<'_>, cfg: &DenoiserConfig, layer: usize, h: Var, cond: Var) -> Var {
    let d = cfg.d_model;
    let c = g.silu(cond);
    let ada = layers::linear(g, p, &format!("blocks.{layer}.ada"), c);
    let part = |g: &mut Graph, i: usize| g.slice_cols(ada, i * d, d);
    let (shift1, scale1, gate1) = (part(g, 0), part(g, 1), part(g, 2));
    let (shift2, scale2, gate2) = (part(g, 3), part(g, 4), part(g, 5));

    let x = g.layer_norm(h, LN_EPS);
    let x = layers::modulate(g, x, shift1, scale1);
    let (a, _) = layers::attention(g, p, &format!("blocks.{layer}.attn"), cfg.attention(), x, x);
    let a = g.mul_row(a, gate1);
    let h = g.add(h, a);

    let x = g.layer_norm(h, LN_EPS);
    let x = layers::modulate(g, x, shift2, scale2);
    let f = layers::linear(g, p, &format!("blocks.{layer}.ff.fc1"), x);
    let f = g.gelu(f);
    let f = layers::linear(g, p, &format!("blocks.{layer}.ff.fc2"), f);
    let f = g.mul_row(f, gate2);
    g.add(h, f)
}

/// Final affine layer norm and projection back to motion channels.
pub(crate) fn head(g: &mut Graph, p: &Bound<'_>, h: Var) -> Var {
    let x = g.layer_norm(h, LN_EPS);
    let x = g.mul_row(x, p.var("final_norm.g"));
    let x = g.add_row(x, p.var("final_norm.b"));
    layers::linear(g, p, "out_proj", x)
}

pub(crate) fn check_input(cfg: &DenoiserConfig, x_t: &Tensor) -> Result<()> {
    if x_t.cols() != cfg.input_dim {
        return Err(Error::ShapeMismatch(format!(
            "denoiser expects {} channels, got {}",
            cfg.input_dim,
            x_t.cols()
        )));
    }
    if x_t.rows() == 0 || x_t.rows() > cfg.max_frames {
        return Err(Error::ShapeMismatch(format!(
            "denoiser accepts 1..={} frames, got {}",
            cfg.max_frames,
            x_t.rows()
        )));
    }
    Ok(())
}

/// Full forward pass on a tape; returns the prediction and each block's output.
pub fn forward(
    g: &mut Graph,
    p: &Bound<'_>,
    cfg: &DenoiserConfig,
    x_t: Var,
    t: usize,
) -> (Var, Vec<Var>) {
    let n = g.value(x_t).rows();
    let cond = timestep_condition(g, p, cfg, t);
    let mut h = embed_tokens(g, p, x_t, n);
    let mut hidden = Vec::with_capacity(cfg.n_layers);
    for l in 0..cfg.n_layers {
        h = block(g, p, cfg, l, h, cond);
        hidden.push(h);
    }
    (head(g, p, h), hidden)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiseOutput {
    /// `[N × input_dim]` clean-motion prediction.
    pub x0: Tensor,
    /// One `[N × d_model]` tensor per layer.
    pub hidden: Vec<Tensor>,
}

pub fn denoise(model: &DenoiserModel, x_t: &Tensor, t: usize) -> Result<DenoiseOutput> {
    check_input(&model.config, x_t)?;
    let mut g = Graph::new();
    let p = model.params.bind(&mut g, false);
    let x = g.constant(x_t.clone());
    let (out, hidden) = forward(&mut g, &p, &model.config, x, t);
    Ok(DenoiseOutput {
        x0: g.value(out).clone(),
        hidden: hidden.iter().map(|&h| g.value(h).clone()).collect(),
    })
}

impl Denoise for DenoiserModel {
    fn predict_x0(&self, x_t: &Tensor, t: usize) -> Result<Tensor> {
        Ok(denoise(self, x_t, t)?.x0)
    }
}
