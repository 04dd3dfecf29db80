pub mod audio;
pub mod checkpoint;
pub mod autodiff;
pub mod container;
pub mod config;
pub mod controlnet;
pub mod curation;
pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod export;
pub mod layers;
pub mod metrics;
pub mod motion;
pub mod params;
pub mod pipeline;
pub mod seed;
pub mod synth;
pub mod tensor;
pub mod training;

pub use error::{Error, ErrorFamily, Result};
pub use tensor::Tensor;
