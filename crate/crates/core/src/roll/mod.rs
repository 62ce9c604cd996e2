//! Notes, the frame grid, and segment-level piano-roll tensors.

mod midi;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use midi::{parse_midi, write_midi, ParsedMidi, WRITE_PPQ};

pub const PITCHES: usize = 88;
pub const VELOCITY_CLASSES: usize = 128;
pub const LOWEST_PITCH: u8 = 21;
pub const HIGHEST_PITCH: u8 = 108;
pub const DEFAULT_SOFT_ONSET_WIDTH: usize = 3;

/// Absorbs representation error when a time that is an exact multiple of the
/// hop (e.g. read back from MIDI ticks) is divided by the hop.
const FRAME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MidiNote {
    /// Seconds.
    pub onset: f64,
    /// Seconds, strictly after `onset`.
    pub offset: f64,
    pub pitch: u8,
    pub velocity: u8,
}

impl MidiNote {
    pub fn duration(&self) -> f64 {
        self.offset - self.onset
    }

    /// Piano-roll column, `pitch - 21`.
    pub fn column(&self) -> usize {
        (self.pitch - LOWEST_PITCH) as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameGrid {
    pub hop_seconds: f64,
    pub frames_per_segment: usize,
}

impl Default for FrameGrid {
    fn default() -> Self {
        FrameGrid { hop_seconds: 0.016, frames_per_segment: 512 }
    }
}

impl FrameGrid {
    pub fn with_frames(frames_per_segment: usize) -> Self {
        FrameGrid { frames_per_segment, ..FrameGrid::default() }
    }

    /// Absolute frame index containing `seconds` (floor).
    pub fn frame_of(&self, seconds: f64) -> i64 {
        (seconds / self.hop_seconds + FRAME_EPS).floor() as i64
    }

    pub fn seconds_of(&self, frame: i64) -> f64 {
        frame as f64 * self.hop_seconds
    }

    pub fn segment_seconds(&self) -> f64 {
        self.frames_per_segment as f64 * self.hop_seconds
    }
}

/// Per-cell velocity content: class indices for ground truth, or a
/// distribution over the 128 classes for predictions.
#[derive(Debug, Clone, PartialEq)]
pub enum Velocities {
    Classes(Vec<u8>),
    Probs(Vec<f64>),
}

/// Onset, frame, and velocity matrices for one segment, time-major
/// (`[t * 88 + p]`, velocities `[(t * 88 + p) * 128 + c]`).
#[derive(Debug, Clone, PartialEq)]
pub struct PianoRollTensors {
    n_frames: usize,
    pub onsets: Vec<f64>,
    pub frames: Vec<f64>,
    pub velocities: Velocities,
}

impl PianoRollTensors {
    pub fn empty_truth(n_frames: usize) -> Self {
        PianoRollTensors {
            n_frames,
            onsets: vec![0.0; n_frames * PITCHES],
            frames: vec![0.0; n_frames * PITCHES],
            velocities: Velocities::Classes(vec![0; n_frames * PITCHES]),
        }
    }

    pub fn from_parts(n_frames: usize, onsets: Vec<f64>, frames: Vec<f64>, velocities: Velocities) -> Result<Self> {
        let cells = n_frames * PITCHES;
        if onsets.len() != cells {
            return Err(Error::shape("onsets", cells, onsets.len()));
        }
        if frames.len() != cells {
            return Err(Error::shape("frames", cells, frames.len()));
        }
        match &velocities {
            Velocities::Classes(c) if c.len() != cells => return Err(Error::shape("velocity classes", cells, c.len())),
            Velocities::Probs(p) if p.len() != cells * VELOCITY_CLASSES => {
                return Err(Error::shape("velocity probabilities", cells * VELOCITY_CLASSES, p.len()))
            }
            _ => {}
        }
        Ok(PianoRollTensors { n_frames, onsets, frames, velocities })
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn cells(&self) -> usize {
        self.n_frames * PITCHES
    }

    pub fn onset(&self, t: usize, p: usize) -> f64 {
        self.onsets[t * PITCHES + p]
    }

    pub fn frame(&self, t: usize, p: usize) -> f64 {
        self.frames[t * PITCHES + p]
    }

    /// Probability assigned to velocity `class` at cell index `cell`.
    pub fn velocity_prob(&self, cell: usize, class: usize) -> f64 {
        match &self.velocities {
            Velocities::Classes(c) => f64::from(c[cell] as usize == class),
            Velocities::Probs(p) => p[cell * VELOCITY_CLASSES + class],
        }
    }

    /// Most likely velocity class at cell index `cell` (lowest class on ties).
    pub fn velocity_class(&self, cell: usize) -> usize {
        match &self.velocities {
            Velocities::Classes(c) => c[cell] as usize,
            Velocities::Probs(p) => {
                let row = &p[cell * VELOCITY_CLASSES..(cell + 1) * VELOCITY_CLASSES];
                let mut best = 0;
                for (i, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = i;
                    }
                }
                best
            }
        }
    }

    /// Checks value ranges: onsets and frames in [0, 1], velocity
    /// distributions summing to 1 within 1e-6.
    pub fn validate(&self) -> Result<()> {
        let in_unit = |v: &[f64]| v.iter().all(|x| (0.0..=1.0).contains(x));
        if !in_unit(&self.onsets) {
            return Err(Error::Config("onset value outside [0, 1]".into()));
        }
        if !in_unit(&self.frames) {
            return Err(Error::Config("frame value outside [0, 1]".into()));
        }
        match &self.velocities {
            Velocities::Classes(c) => {
                if c.iter().any(|&v| v as usize >= VELOCITY_CLASSES) {
                    return Err(Error::Config("velocity class >= 128".into()));
                }
            }
            Velocities::Probs(p) => {
                for (cell, row) in p.chunks_exact(VELOCITY_CLASSES).enumerate() {
                    let s: f64 = row.iter().sum();
                    if (s - 1.0).abs() > 1e-6 || row.iter().any(|&x| x < 0.0) {
                        return Err(Error::Config(format!("velocity distribution at cell {cell} sums to {s}")));
                    }
                }
            }
        }
        Ok(())
    }

    /// Velocity array as a dense `T x 88 x 128` tensor (one-hot for classes).
    pub fn velocity_tensor(&self) -> Tensor {
        let cells = self.cells();
        let data = match &self.velocities {
            Velocities::Probs(p) => p.clone(),
            Velocities::Classes(c) => {
                let mut d = vec![0.0; cells * VELOCITY_CLASSES];
                for (cell, &k) in c.iter().enumerate() {
                    d[cell * VELOCITY_CLASSES + k as usize] = 1.0;
                }
                d
            }
        };
        Tensor::from_vec(&[self.n_frames, PITCHES, VELOCITY_CLASSES], data).unwrap()
    }

    /// Writes `onsets.apct`, `frames.apct`, and `velocities.apct` into `dir`.
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let shape = [self.n_frames, PITCHES];
        Tensor::from_vec(&shape, self.onsets.clone())?.write(dir.join("onsets.apct"))?;
        Tensor::from_vec(&shape, self.frames.clone())?.write(dir.join("frames.apct"))?;
        self.velocity_tensor().write(dir.join("velocities.apct"))
    }

    /// Reads a directory written by [`write_dir`](Self::write_dir). A velocity
    /// tensor whose rows are all exact one-hot vectors loads as classes.
    pub fn read_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let onsets = Tensor::read(dir.join("onsets.apct"))?;
        let frames = Tensor::read(dir.join("frames.apct"))?;
        let vel = Tensor::read(dir.join("velocities.apct"))?;
        if onsets.rank() != 2 || onsets.shape()[1] != PITCHES {
            return Err(Error::TensorFormat(format!("onsets must be T x 88, got {:?}", onsets.shape())));
        }
        let n_frames = onsets.shape()[0];
        if vel.shape() != [n_frames, PITCHES, VELOCITY_CLASSES] {
            return Err(Error::TensorFormat(format!("velocities must be {n_frames} x 88 x 128, got {:?}", vel.shape())));
        }
        let classes: Option<Vec<u8>> = vel
            .data()
            .chunks_exact(VELOCITY_CLASSES)
            .map(|row| {
                let mut hot = None;
                for (i, &x) in row.iter().enumerate() {
                    if x == 1.0 && hot.is_none() {
                        hot = Some(i as u8);
                    } else if x != 0.0 {
                        return None;
                    }
                }
                hot
            })
            .collect();
        let velocities = match classes {
            Some(c) => Velocities::Classes(c),
            None => Velocities::Probs(vel.into_data()),
        };
        Self::from_parts(n_frames, onsets.into_data(), frames.into_data(), velocities)
    }
}

/// Builds ground-truth tensors for the segment starting at absolute frame
/// `segment_start`.
///
/// Onset targets decay linearly with the frame distance to the nearest onset
/// inside the segment, reaching 0 at `soft_onset_width`. A note re-struck on
/// the same key ends where the next one begins.
pub fn notes_to_tensors(notes: &[MidiNote], segment_start: usize, grid: &FrameGrid, soft_onset_width: usize) -> PianoRollTensors {
    assert!(soft_onset_width >= 1, "soft_onset_width must be >= 1");
    let t_len = grid.frames_per_segment;
    let start = segment_start as i64;
    let mut roll = PianoRollTensors::empty_truth(t_len);
    let Velocities::Classes(vel) = &mut roll.velocities else { unreachable!() };

    let mut by_pitch: Vec<Vec<(i64, i64, u8)>> = vec![Vec::new(); PITCHES];
    for n in notes {
        if !(LOWEST_PITCH..=HIGHEST_PITCH).contains(&n.pitch) {
            continue;
        }
        let on = grid.frame_of(n.onset) - start;
        let off = (grid.frame_of(n.offset) - start).max(on + 1);
        by_pitch[n.column()].push((on, off, n.velocity));
    }

    let width = soft_onset_width as f64;
    for (p, spans) in by_pitch.iter_mut().enumerate() {
        spans.sort_by_key(|&(on, off, _)| (on, off));
        for i in 0..spans.len() {
            let (on, mut off, v) = spans[i];
            if let Some(&(next_on, _, _)) = spans[i + 1..].iter().find(|s| s.0 > on) {
                off = off.min(next_on);
            }
            let lo = on.max(0);
            let hi = off.min(t_len as i64);
            for t in lo..hi {
                let cell = t as usize * PITCHES + p;
                roll.frames[cell] = 1.0;
                vel[cell] = v;
            }
            if on < 0 || on >= t_len as i64 {
                continue;
            }
            let reach = soft_onset_width as i64 - 1;
            for t in (on - reach).max(0)..=(on + reach).min(t_len as i64 - 1) {
                let d = (t - on).abs() as f64;
                let cell = t as usize * PITCHES + p;
                let value = (1.0 - d / width).max(0.0);
                if value > roll.onsets[cell] {
                    roll.onsets[cell] = value;
                }
            }
        }
    }
    roll
}

/// Decodes notes from (predicted or ground-truth) tensors. Times are relative
/// to the segment start.
///
/// A note begins at each cell that is a local maximum of the onset curve along
/// time and strictly exceeds `onset_threshold`; it continues while the frame
/// value strictly exceeds the threshold and no new onset peak occurs. Notes
/// whose velocity argmax is class 0 are suppressed.
pub fn tensors_to_notes(tensors: &PianoRollTensors, onset_threshold: f64, grid: &FrameGrid) -> Vec<MidiNote> {
    let t_len = tensors.n_frames();
    let mut notes = Vec::new();
    for p in 0..PITCHES {
        let on = |t: usize| tensors.onset(t, p);
        let is_peak = |t: usize| {
            let v = on(t);
            v > onset_threshold && (t == 0 || v > on(t - 1)) && (t + 1 == t_len || v >= on(t + 1))
        };
        let mut t = 0;
        while t < t_len {
            if !is_peak(t) {
                t += 1;
                continue;
            }
            let mut end = t + 1;
            while end < t_len && tensors.frame(end, p) > onset_threshold && !is_peak(end) {
                end += 1;
            }
            let class = tensors.velocity_class(t * PITCHES + p);
            if class != 0 {
                notes.push(MidiNote {
                    onset: grid.seconds_of(t as i64),
                    offset: grid.seconds_of(end as i64),
                    pitch: LOWEST_PITCH + p as u8,
                    velocity: class as u8,
                });
            }
            t = end;
        }
    }
    notes.sort_by(|a, b| a.onset.total_cmp(&b.onset).then(a.pitch.cmp(&b.pitch)));
    notes
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn note(onset: f64, offset: f64, pitch: u8, velocity: u8) -> MidiNote {
        MidiNote { onset, offset, pitch, velocity }
    }

    #[test]
    fn one_note_layout() {
        let grid = FrameGrid::default();
        let roll = notes_to_tensors(&[note(1.0, 1.5, 60, 80)], 0, &grid, 3);
        // floor(1.0 / 0.016) = 62, floor(1.5 / 0.016) = 93
        let p = 39;
        assert_eq!(roll.onset(62, p), 1.0);
        for t in 0..512 {
            let active = (62..93).contains(&t);
            assert_eq!(roll.frame(t, p), if active { 1.0 } else { 0.0 }, "t={t}");
            let class = roll.velocity_class(t * PITCHES + p);
            assert_eq!(class, if active { 80 } else { 0 });
        }
        assert!((roll.onset(61, p) - (1.0 - 1.0 / 3.0)).abs() < 1e-15);
        assert!((roll.onset(63, p) - 2.0 / 3.0).abs() < 1e-15);
        assert!((roll.onset(60, p) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(roll.onset(59, p), 0.0);
        assert_eq!(roll.onset(65, p), 0.0);
        roll.validate().unwrap();
    }

    #[test]
    fn empty_note_list() {
        let roll = notes_to_tensors(&[], 0, &FrameGrid::default(), 3);
        assert!(roll.onsets.iter().all(|&x| x == 0.0));
        assert!(roll.frames.iter().all(|&x| x == 0.0));
        assert!((0..roll.cells()).all(|c| roll.velocity_class(c) == 0));
        assert!(tensors_to_notes(&roll, 0.5, &FrameGrid::default()).is_empty());
    }

    #[test]
    fn segment_window_excludes_outside_notes() {
        let grid = FrameGrid::default();
        let seg = grid.segment_seconds();
        let roll = notes_to_tensors(&[note(0.1, 0.2, 60, 80), note(seg + 0.16, seg + 0.32, 62, 70)], 512, &grid, 3);
        assert!(roll.frames.iter().filter(|&&x| x > 0.0).count() == 10);
        assert_eq!(roll.onset(10, 41), 1.0);
    }

    #[test]
    fn restrike_splits_at_new_onset() {
        let grid = FrameGrid::default();
        let hop = grid.hop_seconds;
        let notes = [note(10.0 * hop, 40.0 * hop, 60, 50), note(20.0 * hop, 30.0 * hop, 60, 90)];
        let roll = notes_to_tensors(&notes, 0, &grid, 3);
        assert_eq!(roll.velocity_class(19 * PITCHES + 39), 50);
        assert_eq!(roll.velocity_class(20 * PITCHES + 39), 90);
        assert_eq!(roll.frame(35, 39), 0.0);
        let back = tensors_to_notes(&roll, 0.5, &grid);
        assert_eq!(back.len(), 2);
        assert_eq!(grid.frame_of(back[0].offset), 20);
        assert_eq!(grid.frame_of(back[1].offset), 30);
    }

    #[test]
    fn decode_threshold_is_strict() {
        let mut roll = PianoRollTensors::empty_truth(16);
        roll.onsets[5 * PITCHES + 10] = 0.5;
        roll.frames[5 * PITCHES + 10] = 1.0;
        if let Velocities::Classes(c) = &mut roll.velocities {
            c[5 * PITCHES + 10] = 64;
        }
        assert!(tensors_to_notes(&roll, 0.5, &FrameGrid::with_frames(16)).is_empty());
        roll.onsets[5 * PITCHES + 10] = 0.5000001;
        assert_eq!(tensors_to_notes(&roll, 0.5, &FrameGrid::with_frames(16)).len(), 1);
    }

    #[test]
    fn silent_velocity_suppresses_note() {
        let grid = FrameGrid::default();
        let mut roll = notes_to_tensors(&[note(0.16, 0.48, 70, 64)], 0, &grid, 3);
        if let Velocities::Classes(c) = &mut roll.velocities {
            c[10 * PITCHES + 49] = 0;
        }
        assert!(tensors_to_notes(&roll, 0.5, &grid).is_empty());
    }

    #[test]
    fn one_note_roundtrip() {
        let grid = FrameGrid::default();
        let n = note(1.0, 1.5, 60, 80);
        let back = tensors_to_notes(&notes_to_tensors(&[n], 0, &grid, 3), 0.5, &grid);
        assert_eq!(back.len(), 1);
        assert_eq!((back[0].pitch, back[0].velocity), (60, 80));
        assert!((back[0].onset - n.onset).abs() <= grid.hop_seconds);
        assert!((back[0].offset - n.offset).abs() <= grid.hop_seconds);
    }

    #[test]
    fn dir_roundtrip_keeps_classes() {
        let dir = tempfile::tempdir().unwrap();
        let grid = FrameGrid::with_frames(32);
        let roll = notes_to_tensors(&[note(0.032, 0.2, 30, 7)], 0, &grid, 3);
        roll.write_dir(dir.path()).unwrap();
        let back = PianoRollTensors::read_dir(dir.path()).unwrap();
        assert!(matches!(back.velocities, Velocities::Classes(_)));
        assert_eq!(back.frames, roll.frames);
        assert_eq!(back.velocities, roll.velocities);
        for (a, b) in back.onsets.iter().zip(&roll.onsets) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    /// Random notes on the frame grid, at most one note per key at a time.
    fn quantized_notes() -> impl Strategy<Value = Vec<MidiNote>> {
        prop::collection::vec((0usize..88, 0usize..500, 2usize..60, 1u8..128), 0..40).prop_map(|raw| {
            let hop = 0.016;
            let mut busy = vec![Vec::<(usize, usize)>::new(); 88];
            let mut out = Vec::new();
            for (p, on, len, v) in raw {
                let off = (on + len).min(512);
                if off < on + 2 || busy[p].iter().any(|&(a, b)| on < b && a < off) {
                    continue;
                }
                busy[p].push((on, off));
                out.push(note(on as f64 * hop, off as f64 * hop, 21 + p as u8, v));
            }
            out
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn roundtrip_recovers_quantized_notes(notes in quantized_notes()) {
            let grid = FrameGrid::default();
            let roll = notes_to_tensors(&notes, 0, &grid, DEFAULT_SOFT_ONSET_WIDTH);
            let back = tensors_to_notes(&roll, 0.5, &grid);
            prop_assert_eq!(back.len(), notes.len());
            let mut expected = notes.clone();
            expected.sort_by(|a, b| a.onset.total_cmp(&b.onset).then(a.pitch.cmp(&b.pitch)));
            for (a, b) in back.iter().zip(&expected) {
                prop_assert_eq!(a.pitch, b.pitch);
                prop_assert_eq!(a.velocity, b.velocity);
                prop_assert!((grid.frame_of(a.onset) - grid.frame_of(b.onset)).abs() <= 1);
                prop_assert!((grid.frame_of(a.offset) - grid.frame_of(b.offset)).abs() <= 1);
            }
        }

        #[test]
        fn frame_cell_set_iff_covered(notes in quantized_notes()) {
            let grid = FrameGrid::default();
            let roll = notes_to_tensors(&notes, 0, &grid, 3);
            for t in 0..512usize {
                for p in 0..88usize {
                    let covered = notes.iter().any(|n| {
                        n.column() == p
                            && grid.frame_of(n.onset) <= t as i64
                            && (t as i64) < grid.frame_of(n.offset)
                    });
                    prop_assert_eq!(roll.frame(t, p) == 1.0, covered);
                }
            }
        }

        #[test]
        fn soft_onset_profile(width in 1usize..8, on in 10usize..500) {
            let grid = FrameGrid::default();
            let n = note(on as f64 * 0.016, (on + 2) as f64 * 0.016, 60, 64);
            let roll = notes_to_tensors(&[n], 0, &grid, width);
            prop_assert_eq!(roll.onset(on, 39), 1.0);
            for d in 1..=width.min(11) {
                let (after, before) = (roll.onset(on + d, 39), roll.onset(on - d, 39));
                prop_assert_eq!(after, before);
                if d < width {
                    prop_assert!(after > 0.0 && after < roll.onset(on + d - 1, 39));
                } else {
                    prop_assert_eq!(after, 0.0);
                }
            }
        }
    }
}
