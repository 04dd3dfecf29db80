//! Noise schedule, forward noising, deterministic DDIM steps and
//! classifier-free guidance.
//!
//! The denoiser predicts the clean sample `x₀` directly. Two forward processes
//! are supported:
//!
//! * [`ScheduleMode::VariancePreserving`]: `x_t = √ᾱ_t · x + σ_t · ε`
//! * [`ScheduleMode::Additive`]: `x_t = x + σ_t · ε`
//!
//! with `σ_t = √(1 − ᾱ_t)` in both cases.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_TIMESTEPS: usize = 1000;
pub const DEFAULT_COSINE_OFFSET: f64 = 0.008;
pub const MAX_BETA: f64 = 0.999;
pub const DEFAULT_SAMPLING_STEPS: usize = 25;
pub const DEFAULT_GUIDANCE: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScheduleMode {
    #[default]
    VariancePreserving,
    Additive,
}

impl fmt::Display for ScheduleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScheduleMode::VariancePreserving => "vp",
            ScheduleMode::Additive => "additive",
        })
    }
}

impl FromStr for ScheduleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vp" | "variance_preserving" => Ok(ScheduleMode::VariancePreserving),
            "additive" => Ok(ScheduleMode::Additive),
            other => Err(Error::Config(format!(
                "unknown schedule mode {other:?} (expected vp or additive)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    t_max: usize,
    alpha_bar: Vec<f64>,
    sigma: Vec<f64>,
    pub mode: ScheduleMode,
}

impl NoiseSchedule {
    /// Squared-cosine schedule: `ᾱ_t = f(t)/f(0)` with
    /// `f(t) = cos²(((t/T + offset)/(1 + offset))·π/2)`. Once a step's
    /// `β_t = 1 − ᾱ_t/ᾱ_{t−1}` would exceed [`MAX_BETA`] it is clipped and
    /// the remaining values follow the clipped cumulative product.
    pub fn cosine(t_max: usize, offset: f64, mode: ScheduleMode) -> Result<Self> {
        if t_max == 0 {
            return Err(Error::Config("schedule needs T >= 1".into()));
        }
        if !(offset > 0.0 && offset < 1.0) {
            return Err(Error::Config(format!(
                "cosine offset must lie in (0, 1), got {offset}"
            )));
        }
        let f = |t: usize| {
            let x = ((t as f64 / t_max as f64 + offset) / (1.0 + offset)) * std::f64::consts::FRAC_PI_2;
            x.cos().powi(2)
        };
        let f0 = f(0);
        let mut alpha_bar = Vec::with_capacity(t_max + 1);
        alpha_bar.push(1.0);
        let mut clipped = false;
        for t in 1..=t_max {
            let prev = alpha_bar[t - 1];
            let direct = f(t) / f0;
            let beta = 1.0 - direct / prev;
            if clipped || beta > MAX_BETA {
                clipped = true;
                alpha_bar.push(prev * (1.0 - beta.min(MAX_BETA)));
            } else {
                alpha_bar.push(direct);
            }
        }
        let sigma = alpha_bar.iter().map(|a| (1.0 - a).max(0.0).sqrt()).collect();
        Ok(Self {
            t_max,
            alpha_bar,
            sigma,
            mode,
        })
    }

    pub fn t_max(&self) -> usize {
        self.t_max
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.sigma[t]
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigma
    }

    /// Coefficient on the clean sample in the forward process.
    pub fn signal_scale(&self, t: usize) -> f64 {
        match self.mode {
            ScheduleMode::VariancePreserving => self.alpha_bar[t].sqrt(),
            ScheduleMode::Additive => 1.0,
        }
    }

    fn check_t(&self, t: usize, lo: usize) -> Result<()> {
        if t < lo || t > self.t_max {
            return Err(Error::InvalidTimestep {
                t,
                lo,
                hi: self.t_max,
            });
        }
        Ok(())
    }
}

/// A noised sample together with the noise draw that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionState {
    pub x_t: Tensor,
    pub t: usize,
    pub eps: Tensor,
}

pub fn standard_normal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Forward noising with a freshly drawn `ε ~ N(0, I)`.
pub fn add_noise<R: Rng + ?Sized>(
    x: &Tensor,
    t: usize,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<DiffusionState> {
    schedule.check_t(t, 1)?;
    let eps = standard_normal(x.rows(), x.cols(), rng);
    add_noise_with(x, t, schedule, eps)
}

/// Forward noising with a caller-supplied `ε`.
pub fn add_noise_with(
    x: &Tensor,
    t: usize,
    schedule: &NoiseSchedule,
    eps: Tensor,
) -> Result<DiffusionState> {
    schedule.check_t(t, 0)?;
    x.same_shape(&eps, "noise")?;
    let a = schedule.signal_scale(t);
    let s = schedule.sigma(t);
    let x_t = x.zip_map(&eps, |xv, e| a * xv + s * e);
    Ok(DiffusionState { x_t, t, eps })
}

/// Noise implied by a clean-sample prediction at step `t ≥ 1`.
pub fn predicted_noise(
    x_t: &Tensor,
    t: usize,
    x0_hat: &Tensor,
    schedule: &NoiseSchedule,
) -> Result<Tensor> {
    schedule.check_t(t, 1)?;
    x_t.same_shape(x0_hat, "x0 prediction")?;
    let a = schedule.signal_scale(t);
    let s = schedule.sigma(t);
    Ok(x_t.zip_map(x0_hat, |xt, x0| (xt - a * x0) / s))
}

/// One deterministic (η = 0) DDIM step from `t` to `t_prev < t`.
pub fn ddim_step(
    x_t: &Tensor,
    t: usize,
    t_prev: usize,
    x0_hat: &Tensor,
    schedule: &NoiseSchedule,
) -> Result<Tensor> {
    if t_prev >= t {
        return Err(Error::InvalidTimestep {
            t: t_prev,
            lo: 0,
            hi: t.saturating_sub(1),
        });
    }
    let eps = predicted_noise(x_t, t, x0_hat, schedule)?;
    let a = schedule.signal_scale(t_prev);
    let s = schedule.sigma(t_prev);
    Ok(x0_hat.zip_map(&eps, |x0, e| a * x0 + s * e))
}

/// `s · d_cond + (1 − s) · d_uncond`.
pub fn cfg_combine(d_cond: &Tensor, d_uncond: &Tensor, s: f64) -> Result<Tensor> {
    d_cond.same_shape(d_uncond, "guidance branches")?;
    Ok(d_cond.zip_map(d_uncond, |c, u| s * c + (1.0 - s) * u))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerConfig {
    pub steps: usize,
    pub guidance_scale: f64,
    /// Only η = 0 (deterministic DDIM) is implemented.
    pub eta: f64,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            steps: DEFAULT_SAMPLING_STEPS,
            guidance_scale: DEFAULT_GUIDANCE,
            eta: 0.0,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self, t_max: usize) -> Result<()> {
        if self.steps == 0 || self.steps > t_max {
            return Err(Error::Config(format!(
                "sampling steps must lie in 1..={t_max}, got {}",
                self.steps
            )));
        }
        if self.eta != 0.0 {
            return Err(Error::Config(
                "only deterministic DDIM (eta = 0) is supported".into(),
            ));
        }
        if !self.guidance_scale.is_finite() {
            return Err(Error::Config("guidance scale must be finite".into()));
        }
        Ok(())
    }
}

/// `steps + 1` timesteps from `T` down to 0, uniformly spaced and rounded.
pub fn ddim_timesteps(t_max: usize, steps: usize) -> Vec<usize> {
    (0..=steps)
        .map(|i| ((t_max * (steps - i)) as f64 / steps as f64).round() as usize)
        .collect()
}

/// An unconditional clean-sample predictor.
pub trait Denoise {
    fn predict_x0(&self, x_t: &Tensor, t: usize) -> Result<Tensor>;
}

/// A clean-sample predictor conditioned on a frame-aligned audio embedding.
pub trait ConditionalDenoise {
    fn predict_x0_cond(&self, x_t: &Tensor, t: usize, audio: &Tensor) -> Result<Tensor>;
}

impl<F> Denoise for F
where
    F: Fn(&Tensor, usize) -> Result<Tensor>,
{
    fn predict_x0(&self, x_t: &Tensor, t: usize) -> Result<Tensor> {
        self(x_t, t)
    }
}

/// DDIM sampling with optional classifier-free guidance.
///
/// Starts from `x_T ~ N(0, I)` (variance preserving) or `N(0, σ_T² I)`
/// (additive) drawn from `config.seed`, then walks [`ddim_timesteps`]. With a
/// conditional branch each prediction is
/// `cfg_combine(cond, uncond, config.guidance_scale)`.
pub fn sample(
    uncond: &dyn Denoise,
    cond: Option<(&dyn ConditionalDenoise, &Tensor)>,
    shape: (usize, usize),
    config: &SamplerConfig,
    schedule: &NoiseSchedule,
) -> Result<Tensor> {
    config.validate(schedule.t_max())?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let t_max = schedule.t_max();
    let init_scale = match schedule.mode {
        ScheduleMode::VariancePreserving => 1.0,
        ScheduleMode::Additive => schedule.sigma(t_max),
    };
    let mut x = standard_normal(shape.0, shape.1, &mut rng).map(|v| v * init_scale);
    let ts = ddim_timesteps(t_max, config.steps);
    for w in ts.windows(2) {
        let (t, t_prev) = (w[0], w[1]);
        let u = uncond.predict_x0(&x, t)?;
        let x0 = match cond {
            Some((c, audio)) => {
                let d = c.predict_x0_cond(&x, t, audio)?;
                cfg_combine(&d, &u, config.guidance_scale)?
            }
            None => u,
        };
        x = ddim_step(&x, t, t_prev, &x0, schedule)?;
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn schedule(mode: ScheduleMode) -> NoiseSchedule {
        NoiseSchedule::cosine(DEFAULT_TIMESTEPS, DEFAULT_COSINE_OFFSET, mode).unwrap()
    }

    fn rand_tensor(seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        standard_normal(5, 7, &mut rng)
    }

    #[test]
    fn cosine_schedule_values() {
        let s = schedule(ScheduleMode::VariancePreserving);
        assert_eq!(s.alpha_bar(0), 1.0);
        assert_eq!(s.sigma(0), 0.0);
        // Reference values from a 30-digit evaluation of the closed form.
        assert!((s.alpha_bar(500) - 0.493_843_590_440_637_7).abs() < 1e-10);
        assert!((s.alpha_bar(250) - 0.847_012_161_326_904_7).abs() < 1e-10);
        assert!((s.alpha_bar(999) - 2.428_766_907_034_468e-6).abs() < 1e-10);
        for t in 1..=1000 {
            assert!(s.alpha_bar(t) < s.alpha_bar(t - 1), "ᾱ decreasing at {t}");
            assert!(s.sigma(t) > s.sigma(t - 1));
            assert!(s.sigma(t) > 0.0 && s.sigma(t) < 1.0);
            assert!((s.sigma(t) - (1.0 - s.alpha_bar(t)).sqrt()).abs() < 1e-12);
            let beta = 1.0 - s.alpha_bar(t) / s.alpha_bar(t - 1);
            assert!(beta <= MAX_BETA + 1e-12);
        }
    }

    #[test]
    fn cosine_rejects_bad_arguments() {
        assert!(NoiseSchedule::cosine(0, 0.008, ScheduleMode::Additive).is_err());
        assert!(NoiseSchedule::cosine(10, 0.0, ScheduleMode::Additive).is_err());
        assert!(NoiseSchedule::cosine(10, 1.0, ScheduleMode::Additive).is_err());
    }

    #[test]
    fn noising_edge_cases() {
        let x = rand_tensor(1);
        let s = schedule(ScheduleMode::Additive);
        let zero_noise = add_noise_with(&x, 0, &s, Tensor::filled(5, 7, 3.0)).unwrap();
        assert_eq!(zero_noise.x_t, x);

        let vp = schedule(ScheduleMode::VariancePreserving);
        let st = add_noise_with(&x, 300, &vp, Tensor::zeros(5, 7)).unwrap();
        let k = vp.alpha_bar(300).sqrt();
        assert_eq!(st.x_t, x.map(|v| k * v));

        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            add_noise(&x, 0, &vp, &mut rng),
            Err(Error::InvalidTimestep { .. })
        ));
        assert!(add_noise(&x, 1001, &vp, &mut rng).is_err());
    }

    #[test]
    fn monte_carlo_noise_variance_matches_sigma_squared() {
        let s = schedule(ScheduleMode::VariancePreserving);
        let t = 400;
        let x = Tensor::zeros(1, 100_000);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let st = add_noise(&x, t, &s, &mut rng).unwrap();
        let mean = st.x_t.mean();
        let var = st.x_t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 1e5;
        let target = s.sigma(t).powi(2);
        assert!((var / target - 1.0).abs() < 0.02, "var {var} vs {target}");
    }

    #[test]
    fn ddim_inverts_noising_in_both_modes() {
        for mode in [ScheduleMode::VariancePreserving, ScheduleMode::Additive] {
            let s = schedule(mode);
            let x = rand_tensor(2);
            let eps = rand_tensor(3);
            for (t, t_prev) in [(900, 860), (500, 1), (40, 0), (1000, 960)] {
                let st = add_noise_with(&x, t, &s, eps.clone()).unwrap();
                let e_hat = predicted_noise(&st.x_t, t, &x, &s).unwrap();
                assert!(e_hat.max_abs_diff(&eps) < 1e-5);
                let prev = ddim_step(&st.x_t, t, t_prev, &x, &s).unwrap();
                let direct = add_noise_with(&x, t_prev, &s, eps.clone()).unwrap().x_t;
                assert!(prev.max_abs_diff(&direct) < 1e-5, "{mode} {t}->{t_prev}");
            }
        }
    }

    #[test]
    fn ddim_to_zero_returns_prediction_exactly() {
        let s = schedule(ScheduleMode::VariancePreserving);
        let x0 = rand_tensor(4);
        let out = ddim_step(&rand_tensor(5), 40, 0, &x0, &s).unwrap();
        assert_eq!(out, x0);
        assert!(ddim_step(&x0, 10, 10, &x0, &s).is_err());
    }

    #[test]
    fn guidance_arithmetic() {
        let c = Tensor::scalar(2.0);
        let u = Tensor::scalar(1.0);
        assert_eq!(cfg_combine(&c, &u, 4.0).unwrap().get(0, 0), 5.0);
        let a = rand_tensor(6);
        let b = rand_tensor(7);
        assert_eq!(cfg_combine(&a, &b, 1.0).unwrap(), a);
        let same = cfg_combine(&a, &a, 4.0).unwrap();
        assert!(same.max_abs_diff(&a) < 1e-12);
        for s in [0.3, 4.0, -1.5] {
            let ab = cfg_combine(&a, &b, s).unwrap();
            let ba = cfg_combine(&b, &a, 1.0 - s).unwrap();
            assert!(ab.max_abs_diff(&ba) < 1e-12);
        }
    }

    #[test]
    fn timestep_grid() {
        let ts = ddim_timesteps(1000, 25);
        assert_eq!(ts.len(), 26);
        assert_eq!((ts[0], ts[1], ts[25]), (1000, 960, 0));
        assert!(ts.windows(2).all(|w| w[0] > w[1]));
        let full = ddim_timesteps(1000, 1000);
        assert_eq!(full, (0..=1000).rev().collect::<Vec<_>>());
    }

    #[test]
    fn constant_denoiser_yields_its_output() {
        let target = rand_tensor(8);
        let den = |_: &Tensor, _: usize| Ok(target.clone());
        for mode in [ScheduleMode::VariancePreserving, ScheduleMode::Additive] {
            let s = schedule(mode);
            let cfg = SamplerConfig {
                seed: 3,
                ..Default::default()
            };
            let out = sample(&den, None, (5, 7), &cfg, &s).unwrap();
            assert_eq!(out, target);
            let full = SamplerConfig {
                steps: 1000,
                ..cfg
            };
            assert_eq!(sample(&den, None, (5, 7), &full, &s).unwrap(), target);
        }
    }

    struct Shift(f64);

    impl ConditionalDenoise for Shift {
        fn predict_x0_cond(&self, x_t: &Tensor, _t: usize, audio: &Tensor) -> Result<Tensor> {
            Ok(x_t.zip_map(audio, |x, a| 0.5 * x + a + self.0))
        }
    }

    #[test]
    fn guided_sampling_is_deterministic_per_seed() {
        let s = schedule(ScheduleMode::VariancePreserving);
        let uncond = |x: &Tensor, t: usize| Ok(x.map(|v| 0.9 * v + t as f64 * 1e-4));
        let audio = rand_tensor(9);
        let cfg = SamplerConfig {
            seed: 11,
            ..Default::default()
        };
        let c = Shift(0.1);
        let a = sample(&uncond, Some((&c, &audio)), (5, 7), &cfg, &s).unwrap();
        let b = sample(&uncond, Some((&c, &audio)), (5, 7), &cfg, &s).unwrap();
        assert_eq!(a, b);
        let other = SamplerConfig { seed: 12, ..cfg };
        assert_ne!(a, sample(&uncond, Some((&c, &audio)), (5, 7), &other, &s).unwrap());
    }

    #[test]
    fn sampler_config_validation() {
        let mut cfg = SamplerConfig::default();
        assert!(cfg.validate(1000).is_ok());
        cfg.steps = 0;
        assert!(cfg.validate(1000).is_err());
        cfg.steps = 1001;
        assert!(cfg.validate(1000).is_err());
        cfg.steps = 25;
        cfg.eta = 0.5;
        assert!(cfg.validate(1000).is_err());
    }
}
