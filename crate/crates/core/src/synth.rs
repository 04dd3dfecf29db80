//! Seeded synthetic gesture/audio pairs for desk-scale training.
//!
//! A bank of `pattern_count` gesture patterns is drawn once per seed. Every
//! joint of pattern `k` rests at a base rotation and tilts by a fixed angle
//! about an axis that sweeps a cone once per beat period `P`. The sweep
//! angle is `u = 2πs − sin 2πs` with `s = (τ − φ)/P` and `φ` a per-sample
//! phase, so all joints halt together at `τ = φ + mP`, where the audio
//! places its clicks, and the pose is a function of the time since the last
//! click. Phases fall on the frame grid, so with a beat period that is a
//! whole number of frames every pause lands exactly on a frame.
//!
//! Each pattern also owns a frequency band. Its audio carries a
//! band-limited noise bed there whose level ramps up between clicks and
//! resets at each one.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::audio::{read_wav, write_wav, AudioClip, DEFAULT_SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::motion::{gmc, JointLayout, MotionClip, RotationMatrix, CANONICAL_FPS};
use crate::seed::rng_for;

const CLICK_SECONDS: f64 = 0.02;
const CLICK_DECAY_SECONDS: f64 = 0.004;
const CLICK_GAIN: f64 = 0.6;
const BED_GAIN: f64 = 0.05;
const BED_PARTIALS: usize = 24;
const BED_WIDTH_HZ: f64 = 400.0;
const AMPLITUDE_JITTER: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub pattern_count: usize,
    /// Standard deviation, in radians, of the per-frame rotation jitter.
    pub noise_level: f64,
    pub beat_period_s: f64,
    pub seed: u64,
    pub frames: usize,
    pub fps: f64,
    pub sample_rate: u32,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            pattern_count: 4,
            noise_level: 0.005,
            beat_period_s: 0.8,
            seed: 0,
            frames: 60,
            fps: CANONICAL_FPS,
            sample_rate: DEFAULT_SAMPLE_RATE,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.pattern_count == 0 || self.frames < 3 || self.sample_rate == 0 {
            return Err(Error::Config(
                "synthetic pattern_count, frames (>= 3) and sample_rate must be positive".into(),
            ));
        }
        if !(self.noise_level >= 0.0 && self.noise_level.is_finite()) {
            return Err(Error::Config(format!("noise_level must be non-negative, got {}", self.noise_level)));
        }
        for (name, v) in [("beat_period_s", self.beat_period_s), ("fps", self.fps)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        let band_top = 300.0 + 3000.0 + BED_WIDTH_HZ;
        if band_top >= f64::from(self.sample_rate) / 2.0 {
            return Err(Error::Config(format!(
                "sample_rate {} cannot represent the {band_top} Hz noise bands",
                self.sample_rate
            )));
        }
        Ok(())
    }

    pub fn duration_s(&self) -> f64 {
        self.frames as f64 / self.fps
    }
}

#[derive(Debug, Clone)]
struct JointMotion {
    base: RotationMatrix,
    e1: [f64; 3],
    e2: [f64; 3],
    amplitude: f64,
}

#[derive(Debug, Clone)]
pub struct Pattern {
    joints: Vec<JointMotion>,
    band_hz: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSample {
    pub id: String,
    pub pattern: usize,
    pub phase_s: f64,
    pub motion: MotionClip,
    pub audio: AudioClip,
    pub beat_times: Vec<f64>,
}

fn unit_vector<R: Rng + ?Sized>(rng: &mut R) -> [f64; 3] {
    loop {
        let v: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(rng));
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-6 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

fn orthonormal_pair<R: Rng + ?Sized>(rng: &mut R) -> ([f64; 3], [f64; 3]) {
    let a = unit_vector(rng);
    loop {
        let b = unit_vector(rng);
        let d = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
        let c = [b[0] - d * a[0], b[1] - d * a[1], b[2] - d * a[2]];
        let n = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt();
        if n > 1e-3 {
            return (a, [c[0] / n, c[1] / n, c[2] / n]);
        }
    }
}

/// Cone sweep angle at time `tau`: advances by 2π per period with zero
/// speed at `phase_s + mP`.
pub fn sweep_angle(tau: f64, phase_s: f64, period_s: f64) -> f64 {
    let s = (tau - phase_s) / period_s;
    2.0 * PI * s - (2.0 * PI * s).sin()
}

/// Tilt amplitude in radians: arm joints move most, fingers least.
fn joint_amplitude(name: &str) -> f64 {
    if ["shoulder", "elbow", "wrist"].iter().any(|k| name.contains(k)) {
        0.8
    } else if ["index", "middle", "pinky", "ring", "thumb"].iter().any(|k| name.contains(k)) {
        0.3
    } else {
        0.4
    }
}

pub fn pattern_bank(spec: &SyntheticSpec, layout: &JointLayout) -> Vec<Pattern> {
    let mut rng = rng_for(spec.seed, "synth-patterns");
    let k_count = spec.pattern_count;
    (0..k_count)
        .map(|k| {
            let joints = layout
                .names
                .iter()
                .map(|name| {
                    let (e1, e2) = orthonormal_pair(&mut rng);
                    JointMotion {
                        base: RotationMatrix::from_axis_angle(unit_vector(&mut rng), rng.random_range(0.0..0.5)),
                        e1,
                        e2,
                        amplitude: joint_amplitude(name) * rng.random_range(0.7..1.0),
                    }
                })
                .collect();
            let lo = 300.0 + 3000.0 * k as f64 / k_count as f64;
            let band_hz = (0..BED_PARTIALS)
                .map(|_| rng.random_range(lo..lo + BED_WIDTH_HZ))
                .collect();
            Pattern { joints, band_hz }
        })
        .collect()
}

/// Times `φ + mP` inside `[0, duration)`.
pub fn click_times(phase_s: f64, period_s: f64, duration_s: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut t = phase_s;
    while t < duration_s {
        if t >= 0.0 {
            out.push(t);
        }
        t += period_s;
    }
    out
}

/// Motion of `pattern` at phase `phase_s`; the spec's noise level jitters
/// each joint's tilt per frame and `gain` scales every amplitude.
pub fn render_motion<R: Rng + ?Sized>(
    spec: &SyntheticSpec,
    layout: &JointLayout,
    pattern: &Pattern,
    phase_s: f64,
    gain: f64,
    rng: &mut R,
) -> MotionClip {
    let j = layout.joint_count();
    let jitter: Vec<f64> = (0..spec.frames * j)
        .map(|_| { let z: f64 = StandardNormal.sample(rng); spec.noise_level * z })
        .collect();
    MotionClip::from_rotations(spec.frames, spec.fps, layout.clone(), |f, joint| {
        let tau = f as f64 / spec.fps;
        let jm = &pattern.joints[joint];
        let u = sweep_angle(tau, phase_s, spec.beat_period_s);
        let (c, s) = (u.cos(), u.sin());
        let axis = [c * jm.e1[0] + s * jm.e2[0], c * jm.e1[1] + s * jm.e2[1], c * jm.e1[2] + s * jm.e2[2]];
        jm.base.mul(&RotationMatrix::from_axis_angle(axis, gain * jm.amplitude + jitter[f * j + joint]))
    })
}

/// Noise-bed level at `tau`: rises linearly from 0.2 to 1 over each beat
/// period and resets at the clicks.
pub fn bed_envelope(tau: f64, phase_s: f64, period_s: f64) -> f64 {
    let s = (tau - phase_s) / period_s;
    0.2 + 0.8 * (s - s.floor())
}

/// Click track at `phase_s + mP` over the pattern's noise bed.
pub fn render_audio<R: Rng + ?Sized>(spec: &SyntheticSpec, pattern: &Pattern, phase_s: f64, rng: &mut R) -> AudioClip {
    let clicks = click_times(phase_s, spec.beat_period_s, spec.duration_s());
    let sr = f64::from(spec.sample_rate);
    let n = (spec.duration_s() * sr).round() as usize;
    let phases: Vec<f64> = pattern.band_hz.iter().map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    let norm = BED_GAIN / (pattern.band_hz.len() as f64 / 2.0).sqrt();
    let mut samples: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / sr;
            norm * bed_envelope(t, phase_s, spec.beat_period_s)
                * pattern
                .band_hz
                .iter()
                .zip(&phases)
                .map(|(f, p)| (2.0 * PI * f * t + p).sin())
                .sum::<f64>()
        })
        .collect();
    let click_len = (CLICK_SECONDS * sr).round() as usize;
    for &c in &clicks {
        let start = (c * sr).round() as usize;
        for i in 0..click_len {
            let Some(s) = samples.get_mut(start + i) else { break };
            let z: f64 = StandardNormal.sample(rng);
            *s += CLICK_GAIN * (-(i as f64) / (CLICK_DECAY_SECONDS * sr)).exp() * z;
        }
    }
    for s in &mut samples {
        *s = s.clamp(-1.0, 1.0);
    }
    AudioClip::new(samples, spec.sample_rate)
}

pub fn sample_id(index: usize) -> String {
    format!("synth_{index:05}")
}

/// Sample `index`, drawn from its own seeded stream.
pub fn generate_sample(spec: &SyntheticSpec, layout: &JointLayout, bank: &[Pattern], index: usize) -> SyntheticSample {
    let mut rng = rng_for(spec.seed, &format!("synth-sample-{index}"));
    let pattern = rng.random_range(0..bank.len());
    let period_frames = ((spec.beat_period_s * spec.fps).round() as usize).max(1);
    let phase_s = rng.random_range(0..period_frames) as f64 / spec.fps;
    let gain = 1.0 + AMPLITUDE_JITTER * rng.random_range(-1.0..1.0);
    let motion = render_motion(spec, layout, &bank[pattern], phase_s, gain, &mut rng);
    let beat_times = click_times(phase_s, spec.beat_period_s, spec.duration_s());
    let audio = render_audio(spec, &bank[pattern], phase_s, &mut rng);
    SyntheticSample {
        id: sample_id(index),
        pattern,
        phase_s,
        motion,
        audio,
        beat_times,
    }
}

pub fn generate_synthetic_dataset(spec: &SyntheticSpec, layout: &JointLayout, count: usize) -> Result<Vec<SyntheticSample>> {
    spec.validate()?;
    layout.validate()?;
    let bank = pattern_bank(spec, layout);
    Ok((0..count)
        .into_par_iter()
        .map(|i| generate_sample(spec, layout, &bank, i))
        .collect())
}

/// Writes `<id>.gmc` and `<id>.wav` per sample; returns the stems in order.
pub fn write_dataset(dir: &Path, samples: &[SyntheticSample]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    samples
        .iter()
        .map(|s| {
            let stem = dir.join(&s.id);
            gmc::write(&stem.with_extension("gmc"), &s.motion)?;
            write_wav(&stem.with_extension("wav"), &s.audio)?;
            Ok(stem)
        })
        .collect()
}

/// Paired clips of a directory: every `*.gmc` with its `*.wav`, by name.
pub fn read_dataset(dir: &Path) -> Result<Vec<(String, MotionClip, AudioClip)>> {
    let mut stems: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "gmc"))
        .collect();
    stems.sort();
    if stems.is_empty() {
        return Err(Error::InsufficientData(format!("no .gmc clips in {}", dir.display())));
    }
    stems
        .into_iter()
        .map(|p| {
            let id = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let motion = gmc::read(&p)?;
            let audio = read_wav(&p.with_extension("wav"))?;
            Ok((id, motion, audio))
        })
        .collect()
}
