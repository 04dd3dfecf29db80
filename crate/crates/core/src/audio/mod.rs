//! Speech audio: clips, WAV files, mel features and the trainable encoder
//! producing frame-aligned audio embeddings.

pub mod encoder;
pub mod mel;

use std::path::Path;

use crate::error::{Error, Result};

pub use encoder::{align_to_motion, encode_audio, interpolation_matrix, AudioEncoder, AudioEncoderConfig};
pub use mel::{default_mel, mel_spectrogram, MelSpectrogram};

pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;

/// Mono audio with samples in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn silence(seconds: f64, sample_rate: u32) -> Self {
        let n = (seconds * f64::from(sample_rate)).round() as usize;
        Self::new(vec![0.0; n], sample_rate)
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }

    /// Samples covering `[start_s, end_s)`, clamped to the clip.
    pub fn slice_seconds(&self, start_s: f64, end_s: f64) -> AudioClip {
        let sr = f64::from(self.sample_rate);
        let a = ((start_s * sr).round().max(0.0) as usize).min(self.samples.len());
        let b = ((end_s * sr).round().max(0.0) as usize).clamp(a, self.samples.len());
        AudioClip::new(self.samples[a..b].to_vec(), self.sample_rate)
    }

    /// Checks the pairing rule: durations agree within 0.1 s.
    pub fn matches_duration(&self, seconds: f64) -> bool {
        (self.duration_s() - seconds).abs() <= 0.1
    }
}

/// Reads 16-bit PCM mono WAV.
pub fn read_wav(path: &Path) -> Result<AudioClip> {
    let mut reader = hound::WavReader::open(path).map_err(|e| wav_error(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(Error::format(
            "WAV",
            format!(
                "{}: need 16-bit PCM mono, got {} channel(s), {} bits {:?}",
                path.display(),
                spec.channels,
                spec.bits_per_sample,
                spec.sample_format
            ),
        ));
    }
    let samples = reader
        .samples::<i16>()
        .map(|s| s.map(|v| f64::from(v) / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| wav_error(path, e))?;
    Ok(AudioClip::new(samples, spec.sample_rate))
}

/// Writes 16-bit PCM mono WAV; samples are clamped to `[-1, 1]`.
pub fn write_wav(path: &Path, audio: &AudioClip) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: audio.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(|e| wav_error(path, e))?;
    for &s in &audio.samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        w.write_sample(v).map_err(|e| wav_error(path, e))?;
    }
    w.finalize().map_err(|e| wav_error(path, e))
}

fn wav_error(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::format("WAV", format!("{}: {other}", path.display())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wav_roundtrip_quantizes_to_16_bits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let audio = AudioClip::new(
            (0..800).map(|n| (n as f64 * 0.01).sin() * 0.8).collect(),
            16_000,
        );
        write_wav(&path, &audio).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.sample_rate, 16_000);
        assert_eq!(back.samples.len(), 800);
        for (a, b) in audio.samples.iter().zip(&back.samples) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn slicing_by_seconds() {
        let audio = AudioClip::silence(3.0, 16_000);
        assert_eq!(audio.slice_seconds(1.0, 2.0).samples.len(), 16_000);
        assert_eq!(audio.slice_seconds(2.5, 9.0).samples.len(), 8_000);
        assert!(audio.matches_duration(3.05));
        assert!(!audio.matches_duration(3.2));
    }
}
