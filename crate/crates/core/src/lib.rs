//! Piano cover transcription toolkit: piano-roll tensors, cover style
//! vectors, style injection, masked multi-hierarchy loss, evaluation metrics
//! and a small trainable reference network.

pub mod error;
pub mod evalkit;
pub mod inject;
pub mod loss;
pub mod postproc;
pub mod roll;
pub mod style;
pub mod tensor;
pub mod toynet;

pub use error::{Error, Result};
pub use loss::{LossBreakdown, LossConfig};
pub use roll::{FrameGrid, MidiNote, PianoRollTensors, Velocities};
pub use style::StyleVector;
pub use tensor::Tensor;
