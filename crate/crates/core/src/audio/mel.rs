//! Log-mel spectrograms.
//!
//! Framing: the signal is zero-padded by `window/2` on both sides and cut into
//! frames every `hop` samples, giving `1 + floor(len/hop)` frames. Each frame
//! is multiplied by a periodic Hann window, transformed with an FFT of size
//! `window`, and its power spectrum is passed through `n_mels` triangular
//! filters equally spaced on the HTK mel scale between 0 Hz and Nyquist. The
//! result is `ln(power + 1e-10)`.

use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::audio::AudioClip;
use crate::container::{self, parse_field};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_WINDOW: usize = 1024;
pub const DEFAULT_HOP: usize = 512;
pub const DEFAULT_N_MELS: usize = 80;
pub const LOG_FLOOR: f64 = 1e-10;

pub const MAGIC: &str = "MEL1";
const KIND: &str = "MEL1";

#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    /// `[T_a × n_mels]` log power.
    pub frames: Tensor,
    pub hop: usize,
    pub window: usize,
    pub n_mels: usize,
    pub sample_rate: u32,
}

impl MelSpectrogram {
    pub fn n_frames(&self) -> usize {
        self.frames.rows()
    }

    /// Time of frame `t` in seconds (frame centers sit at `t·hop`).
    pub fn frame_time(&self, t: usize) -> f64 {
        (t * self.hop) as f64 / f64::from(self.sample_rate)
    }

    /// `MEL1` container: magic, frame count, band count, sample rate, then
    /// `window/hop` on the name line.
    pub fn encode(&self) -> Vec<u8> {
        container::encode(
            MAGIC,
            &[
                self.n_frames().to_string(),
                self.n_mels.to_string(),
                self.sample_rate.to_string(),
                format!("hann{}/{}", self.window, self.hop),
            ],
            self.frames.data(),
        )
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let (fields, values) = container::decode(KIND, MAGIC, 4, bytes)?;
        let t: usize = parse_field(KIND, "frame count", &fields[0])?;
        let n_mels: usize = parse_field(KIND, "band count", &fields[1])?;
        let sample_rate: u32 = parse_field(KIND, "sample rate", &fields[2])?;
        let spec = fields[3]
            .strip_prefix("hann")
            .and_then(|s| s.split_once('/'))
            .ok_or_else(|| Error::format(KIND, format!("bad window spec {:?}", fields[3])))?;
        let window = parse_field(KIND, "window", spec.0)?;
        let hop = parse_field(KIND, "hop", spec.1)?;
        if values.len() != t * n_mels {
            return Err(Error::format(
                KIND,
                format!("payload holds {} floats, expected {}", values.len(), t * n_mels),
            ));
        }
        Ok(Self {
            frames: Tensor::from_vec(t, n_mels, values)?,
            hop,
            window,
            n_mels,
            sample_rate,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        container::write_file(path, &self.encode())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::decode(&container::read_file(path)?)
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Center frequencies (Hz) of the `n_mels` filters.
pub fn mel_band_centers(n_mels: usize, sample_rate: u32) -> Vec<f64> {
    let edges = mel_edges_hz(n_mels, sample_rate);
    edges[1..=n_mels].to_vec()
}

fn mel_edges_hz(n_mels: usize, sample_rate: u32) -> Vec<f64> {
    let top = hz_to_mel(f64::from(sample_rate) / 2.0);
    (0..n_mels + 2)
        .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
        .collect()
}

/// `[n_bins × n_mels]` triangular filterbank, `n_bins = window/2 + 1`.
pub fn mel_filterbank(n_mels: usize, window: usize, sample_rate: u32) -> Tensor {
    let n_bins = window / 2 + 1;
    let edges = mel_edges_hz(n_mels, sample_rate);
    Tensor::from_fn(n_bins, n_mels, |k, m| {
        let f = k as f64 * f64::from(sample_rate) / window as f64;
        let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        if f <= lo || f >= hi {
            0.0
        } else if f <= mid {
            (f - lo) / (mid - lo)
        } else {
            (hi - f) / (hi - mid)
        }
    })
}

/// Periodic Hann window.
pub fn hann(window: usize) -> Vec<f64> {
    (0..window)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / window as f64).cos())
        .collect()
}

/// Framed power spectra, `[T_a × (window/2 + 1)]`.
pub fn power_spectrogram(samples: &[f64], window: usize, hop: usize) -> Result<Tensor> {
    if samples.len() < window {
        return Err(Error::TooShort(format!(
            "{} samples, window needs {window}",
            samples.len()
        )));
    }
    if hop == 0 {
        return Err(Error::Config("hop must be positive".into()));
    }
    let half = window / 2;
    let n_frames = 1 + samples.len() / hop;
    let n_bins = window / 2 + 1;
    let win = hann(window);
    let fft: Arc<dyn Fft<f64>> = FftPlanner::new().plan_fft_forward(window);
    let mut buf = vec![Complex::new(0.0, 0.0); window];
    let mut out = Tensor::zeros(n_frames, n_bins);
    for t in 0..n_frames {
        for (i, slot) in buf.iter_mut().enumerate() {
            let src = (t * hop + i) as isize - half as isize;
            let s = if src >= 0 && (src as usize) < samples.len() {
                samples[src as usize]
            } else {
                0.0
            };
            *slot = Complex::new(s * win[i], 0.0);
        }
        fft.process(&mut buf);
        for (o, c) in out.row_mut(t).iter_mut().zip(&buf[..n_bins]) {
            *o = c.norm_sqr();
        }
    }
    Ok(out)
}

pub fn mel_spectrogram(
    audio: &AudioClip,
    window: usize,
    hop: usize,
    n_mels: usize,
) -> Result<MelSpectrogram> {
    let power = power_spectrogram(&audio.samples, window, hop)?;
    let bank = mel_filterbank(n_mels, window, audio.sample_rate);
    let frames = power.matmul(&bank).map(|p| (p + LOG_FLOOR).ln());
    Ok(MelSpectrogram {
        frames,
        hop,
        window,
        n_mels,
        sample_rate: audio.sample_rate,
    })
}

/// Default parameters: window 1024, hop 512, 80 bands.
pub fn default_mel(audio: &AudioClip) -> Result<MelSpectrogram> {
    mel_spectrogram(audio, DEFAULT_WINDOW, DEFAULT_HOP, DEFAULT_N_MELS)
}
