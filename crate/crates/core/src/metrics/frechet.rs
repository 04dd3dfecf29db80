//! Gaussian sufficient statistics and the Fréchet distance between them.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Smallest eigenvalue kept when symmetrizing covariances.
pub const EIGEN_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStats {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub count: usize,
}

impl GaussianStats {
    /// Sample mean and unbiased covariance of the rows of `samples`.
    pub fn fit(samples: &Tensor) -> Result<Self> {
        let (n, d) = samples.shape();
        if n < 2 {
            return Err(Error::InsufficientData(format!(
                "need at least 2 samples for a covariance, got {n}"
            )));
        }
        let x = DMatrix::from_row_slice(n, d, samples.data());
        let mean = DVector::from_iterator(d, x.column_iter().map(|c| c.sum() / n as f64));
        let mut centered = x;
        for mut row in centered.row_iter_mut() {
            row -= mean.transpose();
        }
        let mut covariance = centered.transpose() * &centered / (n - 1) as f64;
        covariance = (&covariance + covariance.transpose()) * 0.5;
        Ok(Self {
            mean,
            covariance,
            count: n,
        })
    }

    pub fn from_parts(mean: Vec<f64>, covariance: Vec<f64>, count: usize) -> Result<Self> {
        let d = mean.len();
        if covariance.len() != d * d {
            return Err(Error::DimensionMismatch(format!(
                "covariance of {} entries for dimension {d}",
                covariance.len()
            )));
        }
        Ok(Self {
            mean: DVector::from_vec(mean),
            covariance: DMatrix::from_row_slice(d, d, &covariance),
            count,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Whether the sample covariance can have full rank.
    pub fn full_rank_possible(&self) -> bool {
        self.count > self.dim()
    }
}

/// Symmetrizes `m` and lifts its eigenvalues to at least [`EIGEN_FLOOR`];
/// returns the repaired matrix and its square root.
fn psd_repair(m: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let vals = eig.eigenvalues.map(|l| l.max(EIGEN_FLOOR));
    let v = &eig.eigenvectors;
    let fixed = v * DMatrix::from_diagonal(&vals) * v.transpose();
    let root = v * DMatrix::from_diagonal(&vals.map(f64::sqrt)) * v.transpose();
    (fixed, root)
}

/// `‖μp − μq‖² + Tr(Σp + Σq − 2 (Σp Σq)^½)`.
///
/// Both covariances are first made symmetric positive definite. The cross
/// term is evaluated as `Tr((√Σp Σq √Σp)^½)`, which has the same trace and
/// stays symmetric; its eigenvalues below the rounding level of the largest
/// one are treated as zero.
pub fn frechet_distance(p: &GaussianStats, q: &GaussianStats) -> Result<f64> {
    if p.dim() != q.dim() || p.covariance.nrows() != p.dim() || q.covariance.nrows() != q.dim() {
        return Err(Error::DimensionMismatch(format!(
            "Gaussian statistics of dimension {} and {}",
            p.dim(),
            q.dim()
        )));
    }
    let diff = &p.mean - &q.mean;
    let (sigma_p, sp) = psd_repair(&p.covariance);
    let (sigma_q, _) = psd_repair(&q.covariance);
    let inner = &sp * &sigma_q * &sp;
    let inner = (&inner + inner.transpose()) * 0.5;
    let eig = SymmetricEigen::new(inner).eigenvalues;
    let top = eig.iter().cloned().fold(0.0, f64::max);
    let noise = top * p.dim() as f64 * 4.0 * f64::EPSILON;
    let cross: f64 = eig.iter().filter(|&&l| l > noise).map(|l| l.sqrt()).sum();
    let d = diff.norm_squared() + sigma_p.trace() + sigma_q.trace() - 2.0 * cross;
    if d < -1e-8 {
        return Err(Error::DegenerateInput(format!(
            "Fréchet distance evaluated to {d}; covariances are not positive semidefinite"
        )));
    }
    Ok(d.max(0.0))
}
