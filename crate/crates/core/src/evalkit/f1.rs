use serde::Serialize;

use crate::error::{Error, Result};
use crate::roll::PianoRollTensors;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct F1Scores {
    pub onset_f1: f64,
    pub frame_f1: f64,
    pub velocity_f1: f64,
    pub average: f64,
}

#[derive(Default)]
struct Counts {
    tp: usize,
    fp: usize,
    fn_: usize,
}

impl Counts {
    fn add(&mut self, pred: bool, truth: bool) {
        match (pred, truth) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            _ => {}
        }
    }

    fn f1(&self) -> f64 {
        let pred_pos = self.tp + self.fp;
        let truth_pos = self.tp + self.fn_;
        match (pred_pos, truth_pos) {
            (0, 0) => 1.0,
            (0, _) | (_, 0) => 0.0,
            _ if self.tp == 0 => 0.0,
            _ => {
                let p = self.tp as f64 / pred_pos as f64;
                let r = self.tp as f64 / truth_pos as f64;
                2.0 * p * r / (p + r)
            }
        }
    }
}

/// Per-cell F1. Onset and frame cells are positive above 0.5 (strict);
/// velocity cells are positive where the most likely class is not 0.
pub fn f1_scores(pred: &PianoRollTensors, truth: &PianoRollTensors) -> Result<F1Scores> {
    if pred.n_frames() != truth.n_frames() {
        return Err(Error::shape("prediction frames", truth.n_frames(), pred.n_frames()));
    }
    let (mut on, mut fr, mut ve) = (Counts::default(), Counts::default(), Counts::default());
    for cell in 0..truth.cells() {
        on.add(pred.onsets[cell] > 0.5, truth.onsets[cell] > 0.5);
        fr.add(pred.frames[cell] > 0.5, truth.frames[cell] > 0.5);
        ve.add(pred.velocity_class(cell) != 0, truth.velocity_class(cell) != 0);
    }
    let (o, f, v) = (on.f1(), fr.f1(), ve.f1());
    Ok(F1Scores { onset_f1: o, frame_f1: f, velocity_f1: v, average: (o + f + v) / 3.0 })
}
