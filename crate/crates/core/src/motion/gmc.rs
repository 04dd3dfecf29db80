//! `GMC1` motion clip files.
//!
//! ```text
//! GMC1
//! <N>
//! <J>
//! <fps>
//! <layout name>
//! <N·J·6 little-endian f32, frame-major, joint-minor>
//! ```

use std::path::Path;

use crate::container::{self, parse_field};
use crate::error::{Error, Result};
use crate::motion::clip::{JointLayout, MotionClip, ROT6D_DIM};
use crate::tensor::Tensor;

pub const MAGIC: &str = "GMC1";
const KIND: &str = "GMC1";

pub fn encode(clip: &MotionClip) -> Vec<u8> {
    container::encode(
        MAGIC,
        &[
            clip.n_frames().to_string(),
            clip.joint_count().to_string(),
            clip.fps.to_string(),
            clip.layout.name.clone(),
        ],
        clip.tensor().data(),
    )
}

pub fn decode(bytes: &[u8]) -> Result<MotionClip> {
    let (fields, values) = container::decode(KIND, MAGIC, 4, bytes)?;
    let n: usize = parse_field(KIND, "frame count", &fields[0])?;
    let j: usize = parse_field(KIND, "joint count", &fields[1])?;
    let fps: f64 = parse_field(KIND, "fps", &fields[2])?;
    let expected = n * j * ROT6D_DIM;
    if values.len() != expected {
        return Err(Error::format(
            KIND,
            format!(
                "payload holds {} floats, header promises {n}·{j}·6 = {expected}",
                values.len()
            ),
        ));
    }
    let layout = JointLayout::by_name(fields[3].trim(), j);
    MotionClip::new(Tensor::from_vec(n, j * ROT6D_DIM, values)?, fps, layout)
}

pub fn write(path: &Path, clip: &MotionClip) -> Result<()> {
    container::write_file(path, &encode(clip))
}

pub fn read(path: &Path) -> Result<MotionClip> {
    decode(&container::read_file(path)?)
}
