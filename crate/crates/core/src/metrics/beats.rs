//! Motion and audio beat extraction and the beat-alignment score.

use crate::audio::mel::{default_mel, MelSpectrogram};
use crate::audio::AudioClip;
use crate::error::{Error, Result};
use crate::motion::{geodesic_angle, MotionClip, RotationMatrix};

pub const DEFAULT_BA_SIGMA: f64 = 0.1;
/// Minimum spacing between two audio onsets, seconds.
pub const MIN_ONSET_SEPARATION: f64 = 0.1;

/// Strictly increasing beat times in seconds.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BeatSet {
    times: Vec<f64>,
}

impl BeatSet {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(Error::DegenerateInput("beat times must be finite and non-negative".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::DegenerateInput("beat times must be strictly increasing".into()));
        }
        Ok(Self { times })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Central-difference angular speed per frame, averaged over joints, in
/// radians per frame. Entry `n` covers frames `n − 1 .. n + 1`; the first and
/// last frames have none.
pub fn motion_speed(clip: &MotionClip) -> Result<Vec<f64>> {
    let n = clip.n_frames();
    let j = clip.joint_count();
    if n < 3 {
        return Ok(Vec::new());
    }
    let rots: Vec<Vec<RotationMatrix>> = (0..n)
        .map(|f| (0..j).map(|k| clip.rotation(f, k)).collect::<Result<_>>())
        .collect::<Result<_>>()?;
    Ok((1..n - 1)
        .map(|f| {
            let s: f64 = (0..j).map(|k| geodesic_angle(&rots[f - 1][k], &rots[f + 1][k])).sum();
            s / (2.0 * j as f64)
        })
        .collect())
}

/// Frames where the speed is a strict local minimum below its mean.
pub fn motion_beats(clip: &MotionClip) -> Result<BeatSet> {
    let v = motion_speed(clip)?;
    if v.len() < 3 {
        return Ok(BeatSet::default());
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let times = (1..v.len() - 1)
        .filter(|&i| v[i] < v[i - 1] && v[i] < v[i + 1] && v[i] < mean)
        .map(|i| (i + 1) as f64 / clip.fps)
        .collect();
    BeatSet::new(times)
}

/// Half-wave rectified frame-to-frame increase of the log-mel spectrum,
/// summed over bands. Entry 0 is 0.
pub fn onset_strength(mel: &MelSpectrogram) -> Vec<f64> {
    let f = &mel.frames;
    let mut out = vec![0.0; f.rows()];
    for t in 1..f.rows() {
        out[t] = (0..f.cols())
            .map(|b| (f.get(t, b) - f.get(t - 1, b)).max(0.0))
            .sum();
    }
    out
}

/// Local maxima of the onset envelope above mean + one standard deviation,
/// keeping the strongest within any 100 ms neighbourhood.
pub fn audio_beats_from_mel(mel: &MelSpectrogram) -> Result<BeatSet> {
    let env = onset_strength(mel);
    let n = env.len();
    if n < 3 {
        return Ok(BeatSet::default());
    }
    let mean = env.iter().sum::<f64>() / n as f64;
    let std = (env.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    let threshold = mean + std;
    let mut peaks: Vec<usize> = (1..n - 1)
        .filter(|&t| env[t] > threshold && env[t] >= env[t - 1] && env[t] > env[t + 1])
        .collect();
    peaks.sort_by(|&a, &b| env[b].total_cmp(&env[a]).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for p in peaks {
        let tp = mel.frame_time(p);
        if kept
            .iter()
            .all(|&k| (mel.frame_time(k) - tp).abs() >= MIN_ONSET_SEPARATION)
        {
            kept.push(p);
        }
    }
    kept.sort_unstable();
    BeatSet::new(kept.into_iter().map(|k| mel.frame_time(k)).collect())
}

pub fn audio_beats(audio: &AudioClip) -> Result<BeatSet> {
    audio_beats_from_mel(&default_mel(audio)?)
}

/// Mean over motion beats of `exp(−d²/(2σ²))`, `d` the distance to the
/// nearest audio beat; 0 if either set is empty.
pub fn beat_align(motion: &BeatSet, audio: &BeatSet, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::Config(format!("beat-alignment sigma must be positive, got {sigma}")));
    }
    if motion.is_empty() || audio.is_empty() {
        return Ok(0.0);
    }
    let a = audio.times();
    let s: f64 = motion
        .times()
        .iter()
        .map(|&b| {
            let i = a.partition_point(|&x| x < b);
            let mut d = f64::INFINITY;
            if i < a.len() {
                d = d.min(a[i] - b);
            }
            if i > 0 {
                d = d.min(b - a[i - 1]);
            }
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .sum();
    Ok(s / motion.len() as f64)
}
