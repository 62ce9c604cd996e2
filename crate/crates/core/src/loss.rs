//! Hierarchical masked cover-transcription loss.
//!
//! Each matrix (onset, frame, velocity) is scored with cross-entropy over a
//! selection of cells: every cell with non-zero ground truth, its two pitch
//! neighbours, and a Bernoulli(theta) sample of the rest. Per hierarchy the
//! three matrix losses are averaged; the two hierarchies are mixed with `beta`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::roll::{PianoRollTensors, PITCHES};

/// Predictions are clamped to `[EPS, 1 - EPS]` before taking logs.
pub const EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub beta: f64,
    pub theta_onset: f64,
    pub theta_frame: f64,
    pub theta_velocity: f64,
    pub rng_seed: u64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { beta: 0.75, theta_onset: 0.07, theta_frame: 0.2, theta_velocity: 0.01, rng_seed: 0 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !unit(self.beta) {
            return Err(Error::Config(format!("beta {} outside [0, 1]", self.beta)));
        }
        for (name, v) in [("theta_onset", self.theta_onset), ("theta_frame", self.theta_frame), ("theta_velocity", self.theta_velocity)] {
            if !unit(v) {
                return Err(Error::Config(format!("{name} {v} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn theta(&self, kind: MatrixKind) -> f64 {
        match kind {
            MatrixKind::Onset => self.theta_onset,
            MatrixKind::Frame => self.theta_frame,
            MatrixKind::Velocity => self.theta_velocity,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatrixKind {
    Onset,
    Frame,
    Velocity,
}

impl MatrixKind {
    pub const ALL: [MatrixKind; 3] = [MatrixKind::Onset, MatrixKind::Frame, MatrixKind::Velocity];
}

/// Selected cells per matrix, time-major like [`PianoRollTensors`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectionMask {
    pub n_frames: usize,
    pub onset: Vec<bool>,
    pub frame: Vec<bool>,
    pub velocity: Vec<bool>,
}

impl SelectionMask {
    pub fn get(&self, kind: MatrixKind) -> &[bool] {
        match kind {
            MatrixKind::Onset => &self.onset,
            MatrixKind::Frame => &self.frame,
            MatrixKind::Velocity => &self.velocity,
        }
    }

    pub fn count(&self, kind: MatrixKind) -> usize {
        self.get(kind).iter().filter(|&&b| b).count()
    }

    /// Indices of selected cells in ascending order.
    pub fn cells(&self, kind: MatrixKind) -> Vec<usize> {
        self.get(kind).iter().enumerate().filter_map(|(i, &b)| b.then_some(i)).collect()
    }
}

fn truth_nonzero(truth: &PianoRollTensors, kind: MatrixKind, cell: usize) -> bool {
    match kind {
        MatrixKind::Onset => truth.onsets[cell] != 0.0,
        MatrixKind::Frame => truth.frames[cell] != 0.0,
        MatrixKind::Velocity => truth.velocity_class(cell) != 0,
    }
}

/// Builds the selection for one ground-truth segment. Each matrix draws its
/// Bernoulli sample from its own ChaCha stream of `rng_seed`, visiting every
/// cell in order, so the sample does not depend on the truth content.
pub fn build_mask(truth: &PianoRollTensors, config: &LossConfig) -> SelectionMask {
    let cells = truth.cells();
    let select = |kind: MatrixKind| {
        let mut m = vec![false; cells];
        for cell in 0..cells {
            if truth_nonzero(truth, kind, cell) {
                let p = cell % PITCHES;
                m[cell] = true;
                if p > 0 {
                    m[cell - 1] = true;
                }
                if p + 1 < PITCHES {
                    m[cell + 1] = true;
                }
            }
        }
        let theta = config.theta(kind);
        let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
        rng.set_stream(kind as u64);
        for x in m.iter_mut() {
            let u: f64 = rng.random();
            if u < theta {
                *x = true;
            }
        }
        m
    };
    SelectionMask {
        n_frames: truth.n_frames(),
        onset: select(MatrixKind::Onset),
        frame: select(MatrixKind::Frame),
        velocity: select(MatrixKind::Velocity),
    }
}

#[inline]
pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(EPS, 1.0 - EPS)
}

/// Binary cross-entropy of a (possibly soft) target `y` against `p`.
#[inline]
pub fn bce(p: f64, y: f64) -> f64 {
    let q = clamp_prob(p);
    -(y * q.ln() + (1.0 - y) * (1.0 - q).ln())
}

/// d bce / d logit for `p = sigmoid(logit)`; zero where the clamp is active.
#[inline]
pub(crate) fn bce_logit_grad(p: f64, y: f64) -> f64 {
    if p > EPS && p < 1.0 - EPS {
        p - y
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MatrixLoss {
    pub value: f64,
    pub count: usize,
    /// Set when nothing was selected; `value` is then 0.
    pub empty_mask: bool,
}

pub fn matrix_loss(pred: &PianoRollTensors, truth: &PianoRollTensors, mask: &SelectionMask, kind: MatrixKind) -> Result<MatrixLoss> {
    if pred.n_frames() != truth.n_frames() {
        return Err(Error::shape("prediction frames", truth.n_frames(), pred.n_frames()));
    }
    if mask.n_frames != truth.n_frames() {
        return Err(Error::shape("mask frames", truth.n_frames(), mask.n_frames));
    }
    let selected = mask.get(kind);
    let mut sum = 0.0;
    let mut count = 0;
    for (cell, _) in selected.iter().enumerate().filter(|(_, &b)| b) {
        sum += match kind {
            MatrixKind::Onset => bce(pred.onsets[cell], truth.onsets[cell]),
            MatrixKind::Frame => bce(pred.frames[cell], truth.frames[cell]),
            MatrixKind::Velocity => {
                let class = truth.velocity_class(cell);
                -clamp_prob(pred.velocity_prob(cell, class)).ln()
            }
        };
        count += 1;
    }
    if count == 0 {
        log::warn!("empty {kind:?} mask; loss term is 0");
        return Ok(MatrixLoss { value: 0.0, count, empty_mask: true });
    }
    Ok(MatrixLoss { value: sum / count as f64, count, empty_mask: false })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HierarchyLoss {
    pub total: f64,
    pub onset: f64,
    pub frame: f64,
    pub velocity: f64,
}

impl HierarchyLoss {
    pub fn from_terms(onset: f64, frame: f64, velocity: f64) -> Self {
        HierarchyLoss { total: (onset + frame + velocity) / 3.0, onset, frame, velocity }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MaskCounts {
    pub onset: usize,
    pub frame: usize,
    pub velocity: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossBreakdown {
    #[serde(rename = "L")]
    pub l: f64,
    #[serde(rename = "L1")]
    pub l1: f64,
    #[serde(rename = "L2")]
    pub l2: f64,
    pub h1: HierarchyLoss,
    pub h2: HierarchyLoss,
    pub masked_counts: MaskCounts,
    pub empty_mask: bool,
}

/// `beta * l1 + (1 - beta) * l2`.
pub fn combine(beta: f64, l1: f64, l2: f64) -> f64 {
    beta * l1 + (1.0 - beta) * l2
}

fn hierarchy_loss(pred: &PianoRollTensors, truth: &PianoRollTensors, mask: &SelectionMask) -> Result<(HierarchyLoss, bool)> {
    let on = matrix_loss(pred, truth, mask, MatrixKind::Onset)?;
    let fr = matrix_loss(pred, truth, mask, MatrixKind::Frame)?;
    let ve = matrix_loss(pred, truth, mask, MatrixKind::Velocity)?;
    Ok((HierarchyLoss::from_terms(on.value, fr.value, ve.value), on.empty_mask || fr.empty_mask || ve.empty_mask))
}

/// Loss of both hierarchies against one shared selection.
pub fn total_loss_with_mask(
    pred_h1: &PianoRollTensors,
    pred_h2: &PianoRollTensors,
    truth: &PianoRollTensors,
    mask: &SelectionMask,
    beta: f64,
) -> Result<LossBreakdown> {
    let (h1, e1) = hierarchy_loss(pred_h1, truth, mask)?;
    let (h2, e2) = hierarchy_loss(pred_h2, truth, mask)?;
    Ok(LossBreakdown {
        l: combine(beta, h1.total, h2.total),
        l1: h1.total,
        l2: h2.total,
        h1,
        h2,
        masked_counts: MaskCounts {
            onset: mask.count(MatrixKind::Onset),
            frame: mask.count(MatrixKind::Frame),
            velocity: mask.count(MatrixKind::Velocity),
        },
        empty_mask: e1 || e2,
    })
}

pub fn total_loss(
    pred_h1: &PianoRollTensors,
    pred_h2: &PianoRollTensors,
    truth: &PianoRollTensors,
    config: &LossConfig,
) -> Result<LossBreakdown> {
    config.validate()?;
    let mask = build_mask(truth, config);
    total_loss_with_mask(pred_h1, pred_h2, truth, &mask, config.beta)
}
