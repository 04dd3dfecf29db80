//! Gesture data model: joint layouts, 6D rotations, clips and their files.

pub mod clip;
pub mod gmc;
pub mod rotation;

pub use clip::{
    resample_fps, JointLayout, MotionClip, CANONICAL_FPS, CANONICAL_FRAMES, ROT6D_DIM,
};
pub use rotation::{
    euler_xyz_from_matrix, geodesic_angle, matrix_from_rot6d, rot6d_from_matrix, EulerXyz, Rot6D,
    RotationMatrix,
};
