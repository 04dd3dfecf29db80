//! Evaluation: Fréchet gesture distance, beat alignment and diversity.

pub mod beats;
pub mod extractor;
pub mod frechet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use beats::{audio_beats, audio_beats_from_mel, beat_align, motion_beats, BeatSet, DEFAULT_BA_SIGMA};
pub use extractor::{train_autoencoder, ExtractorConfig, ExtractorTraining, FeatureExtractor};
pub use frechet::{frechet_distance, GaussianStats};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_DIVERSITY_PAIRS: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FgdReport {
    pub fgd: f64,
    pub real_count: usize,
    pub generated_count: usize,
    /// Fewer clips than latent dimensions + 1 on at least one side, so the
    /// sample covariance is necessarily rank deficient.
    pub rank_warning: bool,
}

/// Fréchet distance between Gaussian fits of two latent sets (rows).
pub fn fgd_from_latents(real: &Tensor, generated: &Tensor) -> Result<FgdReport> {
    let p = GaussianStats::fit(real)?;
    let q = GaussianStats::fit(generated)?;
    let rank_warning = !p.full_rank_possible() || !q.full_rank_possible();
    if rank_warning {
        log::warn!(
            "FGD on {} real / {} generated clips in {} dimensions: covariance is rank deficient",
            p.count,
            q.count,
            p.dim()
        );
    }
    Ok(FgdReport {
        fgd: frechet_distance(&p, &q)?,
        real_count: p.count,
        generated_count: q.count,
        rank_warning,
    })
}

pub fn fgd(real: &[Tensor], generated: &[Tensor], extractor: &FeatureExtractor) -> Result<FgdReport> {
    fgd_from_latents(&extractor.encode_all(real)?, &extractor.encode_all(generated)?)
}

/// Rows sorted lexicographically, so pair sampling does not depend on the
/// order clips were supplied in.
pub fn canonical_order(latents: &Tensor) -> Tensor {
    let mut rows: Vec<&[f64]> = (0..latents.rows()).map(|r| latents.row(r)).collect();
    rows.sort_by(|a, b| {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let data: Vec<f64> = rows.concat();
    Tensor::from_vec(latents.rows(), latents.cols(), data).expect("same shape")
}

/// Mean Euclidean distance over `pairs` seeded random pairs `i ≠ j`
/// (distinct within a pair, drawn with replacement across pairs).
pub fn diversity_from_latents(latents: &Tensor, pairs: usize, seed: u64) -> Result<f64> {
    let n = latents.rows();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "diversity needs at least 2 clips, got {n}"
        )));
    }
    if pairs == 0 {
        return Err(Error::Config("diversity pair count must be positive".into()));
    }
    let sorted = canonical_order(latents);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for _ in 0..pairs {
        let i = rng.random_range(0..n);
        let mut j = rng.random_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        let d: f64 = sorted
            .row(i)
            .iter()
            .zip(sorted.row(j))
            .map(|(a, b)| (a - b).powi(2))
            .sum();
        total += d.sqrt();
    }
    Ok(total / pairs as f64)
}

pub fn diversity(clips: &[Tensor], extractor: &FeatureExtractor, pairs: usize, seed: u64) -> Result<f64> {
    if clips.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "diversity needs at least 2 clips, got {}",
            clips.len()
        )));
    }
    diversity_from_latents(&extractor.encode_all(clips)?, pairs, seed)
}
