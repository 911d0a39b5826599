//! Mask-free speech enhancement on short-time DCT spectra.

pub mod dsp;
pub mod error;
pub mod gradsuite;
pub mod nn;
pub mod objectives;
pub mod pipeline;
pub mod synth;
pub mod model;
pub mod tensor;

pub use error::{CheckpointError, Error, Result};
pub use dsp::{FrameSpec, Spectrogram, Waveform};
pub use model::{HeadMode, Mfnet, ModelConfig, ParamStore};
pub use pipeline::{Enhancer, TrainConfig};
pub use tensor::{Real, Tape, Tensor, Var};
