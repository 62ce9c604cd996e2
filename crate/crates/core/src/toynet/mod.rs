//! A small two-hierarchy transcription network with style injection, trained
//! on synthetic original/cover pairs.

mod model;
mod synth;
mod train;

pub use model::{forward_features, HierarchyParams, ToyNetConfig, ToyNetParams};
pub use synth::{calm_and_intense_styles, gen_synthetic_dataset, render_features, SyntheticPair, BASE_PITCH, BINS, KEYS};
pub use train::{dataset_loss, forward_full, infer, train, write_trace, Adam, EpochRecord, TrainConfig};

#[doc(hidden)]
pub mod gradcheck {
    //! Hooks for checking the hand-written backward pass.
    use super::model::{loss_and_grad, MaskCells};
    use super::ToyNetParams;
    use crate::error::Result;
    use crate::loss::{LossBreakdown, SelectionMask};
    use crate::roll::PianoRollTensors;
    use crate::style::STYLE_DIM;
    use crate::tensor::Tensor;

    pub fn loss_with_grad(
        params: &ToyNetParams,
        features: &Tensor,
        style: &[f64; STYLE_DIM],
        truth: &PianoRollTensors,
        mask: &SelectionMask,
        beta: f64,
    ) -> Result<(LossBreakdown, ToyNetParams)> {
        let (b, g) = loss_and_grad(params, features, style, truth, &MaskCells::new(mask), beta, true)?;
        Ok((b, g.expect("gradient requested")))
    }
}
