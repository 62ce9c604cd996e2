//! Cleanup between model output and emitted MIDI.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::roll::{tensors_to_notes, FrameGrid, MidiNote, PianoRollTensors};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PostprocConfig {
    pub min_note_seconds: f64,
    pub onset_threshold: f64,
}

impl Default for PostprocConfig {
    fn default() -> Self {
        PostprocConfig { min_note_seconds: 0.08, onset_threshold: 0.5 }
    }
}

impl PostprocConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_note_seconds.is_nan() || self.min_note_seconds < 0.0 {
            return Err(Error::Config("min_note_seconds must be >= 0".into()));
        }
        if !(self.onset_threshold > 0.0 && self.onset_threshold < 1.0) {
            return Err(Error::Config("onset_threshold must be in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Slack for durations computed from frame times (5 frames of 16 ms is
/// 0.07999999999999985 s after subtraction).
const DURATION_SLACK: f64 = 1e-9;

/// Drops notes shorter than `min_note_seconds`; a note of exactly that length
/// is kept.
pub fn clean_notes(notes: &[MidiNote], config: &PostprocConfig) -> Vec<MidiNote> {
    notes.iter().filter(|n| n.duration() + DURATION_SLACK >= config.min_note_seconds).copied().collect()
}

pub fn decode_and_clean(pred: &PianoRollTensors, config: &PostprocConfig, grid: &FrameGrid) -> Vec<MidiNote> {
    clean_notes(&tensors_to_notes(pred, config.onset_threshold, grid), config)
}
