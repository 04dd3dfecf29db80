use crate::error::{Error, Result};
use crate::motion::rotation::{
    matrix_from_rot6d, rot6d_from_matrix, slerp, Rot6D, RotationMatrix,
};
use crate::tensor::Tensor;

/// Canonical clip length in frames (10 s at 15 fps).
pub const CANONICAL_FRAMES: usize = 150;
/// Canonical frame rate.
pub const CANONICAL_FPS: f64 = 15.0;
/// Values per joint per frame.
pub const ROT6D_DIM: usize = 6;

const BODY_JOINTS: [&str; 13] = [
    "spine1",
    "spine2",
    "spine3",
    "neck",
    "head",
    "left_collar",
    "right_collar",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
];

const FINGERS: [&str; 5] = ["index", "middle", "pinky", "ring", "thumb"];

/// Joint set of a clip. Rotations are stored per joint as an opaque channel;
/// whether they are parent-relative or absolute is up to the data source.
#[derive(Debug, Clone, PartialEq)]
pub struct JointLayout {
    pub name: String,
    pub body_joint_count: usize,
    pub hand_joint_count: usize,
    pub contact_joint_indices: Vec<usize>,
    pub names: Vec<String>,
}

impl Default for JointLayout {
    fn default() -> Self {
        Self::upper_body()
    }
}

impl JointLayout {
    pub const UPPER_BODY: &'static str = "upper43";

    /// 13 upper-body joints plus 15 joints per hand; no contact joints.
    pub fn upper_body() -> Self {
        let mut names: Vec<String> = BODY_JOINTS.iter().map(|s| s.to_string()).collect();
        for side in ["left", "right"] {
            for finger in FINGERS {
                for k in 1..=3 {
                    names.push(format!("{side}_{finger}{k}"));
                }
            }
        }
        Self {
            name: Self::UPPER_BODY.into(),
            body_joint_count: 13,
            hand_joint_count: 30,
            contact_joint_indices: Vec::new(),
            names,
        }
    }

    /// A layout of `joints` anonymous body joints.
    pub fn generic(name: &str, joints: usize) -> Self {
        Self {
            name: name.into(),
            body_joint_count: joints,
            hand_joint_count: 0,
            contact_joint_indices: Vec::new(),
            names: (0..joints).map(|j| format!("joint{j}")).collect(),
        }
    }

    /// Resolves a layout name read from a file; unknown names become generic.
    pub fn by_name(name: &str, joints: usize) -> Self {
        let upper = Self::upper_body();
        if name == Self::UPPER_BODY && joints == upper.joint_count() {
            upper
        } else {
            Self::generic(name, joints)
        }
    }

    pub fn joint_count(&self) -> usize {
        self.body_joint_count + self.hand_joint_count
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Indices of the wrist joints, if the layout names them.
    pub fn wrist_indices(&self) -> Vec<usize> {
        ["left_wrist", "right_wrist"]
            .iter()
            .filter_map(|n| self.index_of(n))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let j = self.joint_count();
        if self.names.len() != j {
            return Err(Error::Config(format!(
                "layout {} has {} names for {j} joints",
                self.name,
                self.names.len()
            )));
        }
        if let Some(&bad) = self.contact_joint_indices.iter().find(|&&i| i >= j) {
            return Err(Error::Config(format!(
                "contact joint {bad} outside 0..{j}"
            )));
        }
        Ok(())
    }
}

/// A sequence of per-joint 6D rotations, stored frame-major / joint-minor
/// as a `[frames × J·6]` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionClip {
    frames: Tensor,
    pub fps: f64,
    pub layout: JointLayout,
}

impl MotionClip {
    pub fn new(frames: Tensor, fps: f64, layout: JointLayout) -> Result<Self> {
        let width = layout.joint_count() * ROT6D_DIM;
        if frames.cols() != width {
            return Err(Error::ShapeMismatch(format!(
                "clip has {} channels, layout {} needs {width}",
                frames.cols(),
                layout.name
            )));
        }
        if !(fps > 0.0 && fps.is_finite()) {
            return Err(Error::Config(format!("fps must be positive, got {fps}")));
        }
        if !frames.is_finite() {
            return Err(Error::format("motion clip", "non-finite rotation value"));
        }
        Ok(Self {
            frames,
            fps,
            layout,
        })
    }

    /// Every joint at the identity rotation.
    pub fn rest_pose(n_frames: usize, fps: f64, layout: JointLayout) -> Self {
        let j = layout.joint_count();
        let frames = Tensor::from_fn(n_frames, j * ROT6D_DIM, |_, c| {
            Rot6D::IDENTITY.to_array()[c % ROT6D_DIM]
        });
        Self {
            frames,
            fps,
            layout,
        }
    }

    /// Builds a clip from a rotation-valued function of (frame, joint).
    pub fn from_rotations(
        n_frames: usize,
        fps: f64,
        layout: JointLayout,
        mut f: impl FnMut(usize, usize) -> RotationMatrix,
    ) -> Self {
        let j = layout.joint_count();
        let mut frames = Tensor::zeros(n_frames, j * ROT6D_DIM);
        for n in 0..n_frames {
            for joint in 0..j {
                let r = rot6d_from_matrix(&f(n, joint)).to_array();
                frames.row_mut(n)[joint * ROT6D_DIM..(joint + 1) * ROT6D_DIM].copy_from_slice(&r);
            }
        }
        Self {
            frames,
            fps,
            layout,
        }
    }

    pub fn n_frames(&self) -> usize {
        self.frames.rows()
    }

    pub fn joint_count(&self) -> usize {
        self.layout.joint_count()
    }

    pub fn duration_s(&self) -> f64 {
        self.n_frames() as f64 / self.fps
    }

    pub fn tensor(&self) -> &Tensor {
        &self.frames
    }

    pub fn into_tensor(self) -> Tensor {
        self.frames
    }

    /// Same metadata, new values.
    pub fn with_tensor(&self, frames: Tensor) -> Result<Self> {
        Self::new(frames, self.fps, self.layout.clone())
    }

    pub fn rot6d(&self, frame: usize, joint: usize) -> Rot6D {
        Rot6D::from_slice(&self.frames.row(frame)[joint * ROT6D_DIM..(joint + 1) * ROT6D_DIM])
    }

    pub fn set_rot6d(&mut self, frame: usize, joint: usize, r: Rot6D) {
        self.frames.row_mut(frame)[joint * ROT6D_DIM..(joint + 1) * ROT6D_DIM]
            .copy_from_slice(&r.to_array());
    }

    pub fn rotation(&self, frame: usize, joint: usize) -> Result<RotationMatrix> {
        matrix_from_rot6d(self.rot6d(frame, joint))
    }

    /// Frames `[start, start + len)` as a new clip.
    pub fn slice(&self, start: usize, len: usize) -> Self {
        Self {
            frames: self.frames.slice_rows(start, len),
            fps: self.fps,
            layout: self.layout.clone(),
        }
    }
}

/// Changes the frame rate by spherical interpolation of every joint rotation.
///
/// The output has `floor(N · target/fps)` frames; output frame `k` samples
/// source time `k · fps/target` (in source frames). Frames landing exactly on
/// a source frame are copied verbatim; identical rates return the input
/// unchanged.
pub fn resample_fps(clip: &MotionClip, target_fps: f64) -> Result<MotionClip> {
    if !(clip.fps > 0.0 && target_fps > 0.0 && target_fps.is_finite()) {
        return Err(Error::Config(format!(
            "frame rates must be positive (source {}, target {target_fps})",
            clip.fps
        )));
    }
    if target_fps == clip.fps {
        return Ok(clip.clone());
    }
    let n = clip.n_frames();
    let out_n = (n as f64 * target_fps / clip.fps).floor() as usize;
    if out_n < 2 {
        return Err(Error::EmptyResult(format!(
            "{n} frames at {} fps resample to {out_n} frames at {target_fps} fps",
            clip.fps
        )));
    }
    let j = clip.joint_count();
    let step = clip.fps / target_fps;
    let mut out = MotionClip {
        frames: Tensor::zeros(out_n, j * ROT6D_DIM),
        fps: target_fps,
        layout: clip.layout.clone(),
    };
    for k in 0..out_n {
        let pos = k as f64 * step;
        let lo = (pos.floor() as usize).min(n - 1);
        let frac = pos - lo as f64;
        if frac == 0.0 || lo + 1 >= n {
            out.frames.row_mut(k).copy_from_slice(clip.frames.row(lo));
            continue;
        }
        for joint in 0..j {
            let a = clip.rot6d(lo, joint);
            let b = clip.rot6d(lo + 1, joint);
            if a == b {
                out.set_rot6d(k, joint, a);
                continue;
            }
            let ra = matrix_from_rot6d(a)?;
            let rb = matrix_from_rot6d(b)?;
            out.set_rot6d(k, joint, rot6d_from_matrix(&slerp(&ra, &rb, frac)));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::rotation::geodesic_angle;

    #[test]
    fn default_layout_has_43_joints_and_two_wrists() {
        let l = JointLayout::upper_body();
        assert_eq!(l.joint_count(), 43);
        assert_eq!(l.names.len(), 43);
        assert!(l.contact_joint_indices.is_empty());
        assert_eq!(l.wrist_indices().len(), 2);
        l.validate().unwrap();
        let mut sorted = l.names.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 43, "joint names are unique");
    }

    #[test]
    fn halving_rate_keeps_even_frames() {
        let clip = MotionClip::from_rotations(300, 30.0, JointLayout::upper_body(), |n, j| {
            RotationMatrix::from_axis_angle([0.0, 0.0, 1.0], 0.01 * n as f64 + 0.1 * j as f64)
        });
        let out = resample_fps(&clip, 15.0).unwrap();
        assert_eq!(out.n_frames(), 150);
        assert_eq!(out.fps, 15.0);
        for k in [0, 1, 77, 149] {
            assert_eq!(out.tensor().row(k), clip.tensor().row(2 * k));
        }
    }

    #[test]
    fn same_rate_is_bit_exact_identity() {
        let clip = MotionClip::from_rotations(20, 15.0, JointLayout::generic("g", 3), |n, j| {
            RotationMatrix::from_axis_angle([1.0, 0.5, 0.0], 0.3 * n as f64 - j as f64)
        });
        assert_eq!(resample_fps(&clip, 15.0).unwrap(), clip);
    }

    #[test]
    fn constant_pose_stays_constant() {
        let r = RotationMatrix::from_axis_angle([0.1, 0.7, -0.2], 0.9);
        let clip = MotionClip::from_rotations(40, 30.0, JointLayout::generic("g", 2), |_, _| r);
        for target in [7.0, 15.0, 24.0, 60.0] {
            let out = resample_fps(&clip, target).unwrap();
            for n in 0..out.n_frames() {
                assert_eq!(out.tensor().row(n), clip.tensor().row(0));
            }
        }
    }

    #[test]
    fn upsampling_interpolates_on_the_manifold() {
        let clip = MotionClip::from_rotations(10, 10.0, JointLayout::generic("g", 1), |n, _| {
            RotationMatrix::from_axis_angle([0.0, 1.0, 0.0], 0.2 * n as f64)
        });
        let out = resample_fps(&clip, 20.0).unwrap();
        assert_eq!(out.n_frames(), 20);
        let mid = out.rotation(1, 0).unwrap();
        let expect = RotationMatrix::from_axis_angle([0.0, 1.0, 0.0], 0.1);
        assert!(geodesic_angle(&mid, &expect) < 1e-12);
    }

    #[test]
    fn too_few_output_frames_is_an_error() {
        let clip = MotionClip::rest_pose(3, 30.0, JointLayout::generic("g", 1));
        assert!(matches!(resample_fps(&clip, 15.0), Err(Error::EmptyResult(_))));
    }
}
