//! Evaluation: cell-level F1, chroma features, DTW alignment, and the Q_max
//! cover-similarity measure.

mod chroma;
mod dtw;
mod f1;
mod qmax;
mod wav;

pub use chroma::{chroma_from_audio, chroma_from_notes, ChromaSequence, CHROMA_WINDOW};
pub use dtw::{cosine_distance, dtw_align, DtwResult};
pub use f1::{f1_scores, F1Scores};
pub use qmax::{oti, qmax, QmaxParams, QmaxResult};
pub use wav::{read_wav, write_wav};
