//! Reconstruction, velocity and contact losses, both as plain functions on
//! tensors and as tape expressions for training. All use mean reduction.

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::motion::{JointLayout, ROT6D_DIM};
use crate::tensor::Tensor;

pub const LAMBDA_SIMPLE: f64 = 10.0;
/// Largest per-channel frame-to-frame change of a joint still counted as
/// ground contact when masks are derived from data.
pub const CONTACT_VELOCITY_THRESHOLD: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub l_simple: f64,
    pub l_vel: f64,
    pub l_foot: f64,
    pub l_total: f64,
    pub lambda_simple: f64,
}

impl LossReport {
    pub fn compose(l_simple: f64, l_vel: f64, l_foot: f64) -> Self {
        Self {
            l_simple,
            l_vel,
            l_foot,
            l_total: LAMBDA_SIMPLE * l_simple + l_vel + l_foot,
            lambda_simple: LAMBDA_SIMPLE,
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.l_simple, self.l_vel, self.l_foot, self.l_total]
            .iter()
            .all(|v| v.is_finite())
    }

    /// Component-wise mean of several reports.
    pub fn mean(reports: &[LossReport]) -> Self {
        let n = reports.len().max(1) as f64;
        let avg = |f: fn(&LossReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        Self::compose(avg(|r| r.l_simple), avg(|r| r.l_vel), avg(|r| r.l_foot))
    }
}

/// Per-frame contact flags for the layout's contact joints, `[N × |contact|]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContactMask {
    frames: usize,
    joints: usize,
    on: Vec<bool>,
}

impl ContactMask {
    pub fn new(frames: usize, joints: usize, on: Vec<bool>) -> Result<Self> {
        if on.len() != frames * joints {
            return Err(Error::ShapeMismatch(format!(
                "contact mask of {} flags for {frames}x{joints}",
                on.len()
            )));
        }
        Ok(Self { frames, joints, on })
    }

    pub fn full(frames: usize, joints: usize) -> Self {
        Self {
            frames,
            joints,
            on: vec![true; frames * joints],
        }
    }

    pub fn empty(frames: usize, joints: usize) -> Self {
        Self {
            frames,
            joints,
            on: vec![false; frames * joints],
        }
    }

    /// Contact wherever the ground-truth joint is nearly still between
    /// frame `n` and `n + 1` (the last frame copies its predecessor).
    pub fn from_motion(x: &Tensor, layout: &JointLayout) -> Self {
        let n = x.rows();
        let k = layout.contact_joint_indices.len();
        let mut on = vec![false; n * k];
        for f in 0..n {
            let src = if f + 1 < n { f } else { f.saturating_sub(1) };
            for (ci, &j) in layout.contact_joint_indices.iter().enumerate() {
                on[f * k + ci] = n >= 2
                    && (0..ROT6D_DIM).all(|c| {
                        let col = j * ROT6D_DIM + c;
                        (x.get(src + 1, col) - x.get(src, col)).abs() <= CONTACT_VELOCITY_THRESHOLD
                    });
            }
        }
        Self { frames: n, joints: k, on }
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn get(&self, frame: usize, contact: usize) -> bool {
        self.on[frame * self.joints + contact]
    }

    /// 0/1 weights over the velocity rows `[N−1 × channels]` of the clip.
    fn velocity_weights(&self, layout: &JointLayout, channels: usize) -> Tensor {
        let mut w = Tensor::zeros(self.frames.saturating_sub(1), channels);
        for n in 0..w.rows() {
            for (ci, &j) in layout.contact_joint_indices.iter().enumerate() {
                if self.get(n, ci) {
                    for c in 0..ROT6D_DIM {
                        w.set(n, j * ROT6D_DIM + c, 1.0);
                    }
                }
            }
        }
        w
    }
}

fn check_pair(x: &Tensor, x0_hat: &Tensor) -> Result<()> {
    x.same_shape(x0_hat, "prediction")
}

fn check_mask(x: &Tensor, layout: &JointLayout, mask: &ContactMask) -> Result<()> {
    if mask.frames != x.rows() || mask.joints != layout.contact_joint_indices.len() {
        return Err(Error::ShapeMismatch(format!(
            "contact mask is {}x{}, expected {}x{}",
            mask.frames,
            mask.joints,
            x.rows(),
            layout.contact_joint_indices.len()
        )));
    }
    if layout.joint_count() * ROT6D_DIM != x.cols() {
        return Err(Error::ShapeMismatch(format!(
            "layout {} has {} joints but clip has {} channels",
            layout.name,
            layout.joint_count(),
            x.cols()
        )));
    }
    Ok(())
}

pub fn loss_simple(x: &Tensor, x0_hat: &Tensor) -> Result<f64> {
    check_pair(x, x0_hat)?;
    let s: f64 = x.data().iter().zip(x0_hat.data()).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(s / x.len() as f64)
}

pub fn loss_velocity(x: &Tensor, x0_hat: &Tensor) -> Result<f64> {
    check_pair(x, x0_hat)?;
    if x.rows() < 2 {
        return Err(Error::TooShort("velocity loss needs at least 2 frames".into()));
    }
    let (n, c) = x.shape();
    let mut s = 0.0;
    for r in 0..n - 1 {
        for k in 0..c {
            let dv = (x.get(r + 1, k) - x.get(r, k)) - (x0_hat.get(r + 1, k) - x0_hat.get(r, k));
            s += dv * dv;
        }
    }
    Ok(s / ((n - 1) * c) as f64)
}

/// Mean squared predicted velocity over masked contact-joint channels;
/// zero when nothing is masked.
pub fn loss_foot_contact(
    x: &Tensor,
    x0_hat: &Tensor,
    layout: &JointLayout,
    mask: &ContactMask,
) -> Result<f64> {
    check_pair(x, x0_hat)?;
    check_mask(x, layout, mask)?;
    let w = mask.velocity_weights(layout, x.cols());
    let count = w.sum();
    if count == 0.0 {
        return Ok(0.0);
    }
    let mut s = 0.0;
    for r in 0..w.rows() {
        for c in 0..w.cols() {
            let v = x0_hat.get(r + 1, c) - x0_hat.get(r, c);
            s += w.get(r, c) * v * v;
        }
    }
    Ok(s / count)
}

pub fn loss_total(
    x: &Tensor,
    x0_hat: &Tensor,
    layout: &JointLayout,
    mask: &ContactMask,
) -> Result<LossReport> {
    Ok(LossReport::compose(
        loss_simple(x, x0_hat)?,
        loss_velocity(x, x0_hat)?,
        loss_foot_contact(x, x0_hat, layout, mask)?,
    ))
}

/// Tape nodes of the three losses and their weighted sum.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub simple: Var,
    pub vel: Var,
    pub foot: Option<Var>,
    pub total: Var,
}

impl LossVars {
    pub fn report(&self, g: &Graph) -> LossReport {
        let v = |x: Var| g.value(x).get(0, 0);
        LossReport::compose(v(self.simple), v(self.vel), self.foot.map_or(0.0, v))
    }
}

/// Builds the training objective on the tape; `x` is the clean target.
pub fn loss_graph(
    g: &mut Graph,
    x: &Tensor,
    x0_hat: Var,
    layout: &JointLayout,
    mask: &ContactMask,
) -> Result<LossVars> {
    check_pair(x, g.value(x0_hat))?;
    check_mask(x, layout, mask)?;
    if x.rows() < 2 {
        return Err(Error::TooShort("training clips need at least 2 frames".into()));
    }
    let target = g.constant(x.clone());
    let simple = g.mse(x0_hat, target);
    let dv_hat = g.row_diff(x0_hat);
    let dv = g.row_diff(target);
    let vel = g.mse(dv_hat, dv);
    let weighted = g.scale(simple, LAMBDA_SIMPLE);
    let mut total = g.add(weighted, vel);

    let w = mask.velocity_weights(layout, x.cols());
    let count = w.sum();
    let foot = if count > 0.0 {
        let norm = w.len() as f64 / count;
        let w = g.constant(w);
        let sq = g.mul(dv_hat, dv_hat);
        let masked = g.mul(sq, w);
        let mean = g.mean_all(masked);
        let foot = g.scale(mean, norm);
        total = g.add(total, foot);
        Some(foot)
    } else {
        None
    };
    Ok(LossVars {
        simple,
        vel,
        foot,
        total,
    })
}
