//! Synthetic original/cover pairs.
//!
//! The "original" is a set of notes on 12 keys rendered as smooth spectral
//! bumps over 16 bins. The "cover" keeps every original note and, when the
//! pair's intensity reaches one half, doubles each of them an octave down at a
//! lower velocity. Only the style vector tells the two kinds of cover apart.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::roll::{notes_to_tensors, FrameGrid, MidiNote, PianoRollTensors, DEFAULT_SOFT_ONSET_WIDTH};
use crate::style::{extract_style_vector, StyleVector};
use crate::tensor::Tensor;

/// Lowest key played in an original.
pub const BASE_PITCH: u8 = 60;
pub const KEYS: usize = 12;
/// Feature bins, centred on pitches `FIRST_BIN_PITCH ..`.
pub const BINS: usize = 16;
const FIRST_BIN_PITCH: u8 = 58;
const BUMP_SIGMA: f64 = 0.6;
const ATTACK_FRAMES: f64 = 3.0;
const ATTACK_BOOST: f64 = 2.0;
const AMPLITUDE: f64 = 10.0;
/// Every original note is played at this velocity, so the velocity block of a
/// cover's style vector tracks the share of doubled notes.
const ORIGINAL_VELOCITY: u8 = 80;
const DOUBLING_VELOCITY: f64 = 0.7;
/// Covers at or above this intensity double every note.
const DOUBLING_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone)]
pub struct SyntheticPair {
    /// `T x BINS`
    pub input_features: Tensor,
    pub target: PianoRollTensors,
    pub style: StyleVector,
    pub original: Vec<MidiNote>,
    pub cover: Vec<MidiNote>,
    /// Doubling intensity in `[0, 1)`.
    pub intensity: f64,
}

fn overlaps(notes: &[MidiNote], pitch: u8, on: f64, off: f64) -> bool {
    notes.iter().any(|n| n.pitch == pitch && n.onset < off && on < n.offset)
}

/// Renders notes as Gaussian bumps over `BINS` bins with an attack boost.
pub fn render_features(notes: &[MidiNote], grid: &FrameGrid) -> Tensor {
    let t_len = grid.frames_per_segment;
    let mut x = Tensor::zeros(&[t_len, BINS]);
    for n in notes {
        let centre = f64::from(n.pitch) - f64::from(FIRST_BIN_PITCH);
        let on = grid.frame_of(n.onset).max(0) as usize;
        let off = (grid.frame_of(n.offset).max(0) as usize).min(t_len);
        let amp = AMPLITUDE * f64::from(n.velocity) / 100.0;
        for t in on..off {
            let d = (t - on) as f64;
            let env = 1.0 + ATTACK_BOOST * (1.0 - d / ATTACK_FRAMES).max(0.0);
            let row = x.row_mut(t);
            for (b, v) in row.iter_mut().enumerate() {
                let e = (b as f64 - centre) / BUMP_SIGMA;
                *v += amp * env * (-0.5 * e * e).exp();
            }
        }
    }
    x
}

fn random_original(rng: &mut ChaCha8Rng, grid: &FrameGrid) -> Vec<MidiNote> {
    let t_len = grid.frames_per_segment as i64;
    let hop = grid.hop_seconds;
    let target = rng.random_range(20..=28);
    let mut notes: Vec<MidiNote> = Vec::new();
    let mut attempts = 0;
    while notes.len() < target && attempts < 1000 {
        attempts += 1;
        let pitch = BASE_PITCH + rng.random_range(0..KEYS as u8);
        let dur = rng.random_range(8..=40i64);
        let on = rng.random_range(0..t_len - 8);
        let off = (on + dur).min(t_len);
        let (on_s, off_s) = (on as f64 * hop, off as f64 * hop);
        // keep a two-frame gap between notes on one key
        if overlaps(&notes, pitch, on_s - 2.0 * hop, off_s + 2.0 * hop) {
            continue;
        }
        notes.push(MidiNote { onset: on_s, offset: off_s, pitch, velocity: ORIGINAL_VELOCITY });
    }
    notes.sort_by(|a, b| a.onset.total_cmp(&b.onset).then(a.pitch.cmp(&b.pitch)));
    notes
}

/// Original keys span less than an octave, so doublings never collide with
/// each other or with the original notes.
fn make_cover(original: &[MidiNote], intensity: f64) -> Vec<MidiNote> {
    let mut cover = original.to_vec();
    if intensity >= DOUBLING_THRESHOLD {
        for n in original {
            cover.push(MidiNote { pitch: n.pitch - 12, velocity: (f64::from(n.velocity) * DOUBLING_VELOCITY).round() as u8, ..*n });
        }
    }
    cover.sort_by(|a, b| a.onset.total_cmp(&b.onset).then(a.pitch.cmp(&b.pitch)));
    cover
}

impl SyntheticPair {
    /// Builds a pair from explicit notes; style and targets come from `cover`.
    pub fn from_notes(original: Vec<MidiNote>, cover: Vec<MidiNote>, intensity: f64, grid: &FrameGrid) -> Result<Self> {
        Ok(SyntheticPair {
            input_features: render_features(&original, grid),
            target: notes_to_tensors(&cover, 0, grid, DEFAULT_SOFT_ONSET_WIDTH),
            style: extract_style_vector(&cover, grid)?,
            original,
            cover,
            intensity,
        })
    }
}

/// `n_pairs` pairs of 512 frames. Intensities are stratified over `[0, 1)`
/// and shuffled so both calm and dense covers are present.
pub fn gen_synthetic_dataset(n_pairs: usize, seed: u64) -> Result<Vec<SyntheticPair>> {
    let grid = FrameGrid::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut levels: Vec<f64> = (0..n_pairs).map(|i| (i as f64 + rng.random_range(0.0..1.0)) / n_pairs as f64).collect();
    levels.shuffle(&mut rng);
    levels
        .into_iter()
        .map(|q| {
            let original = random_original(&mut rng, &grid);
            let cover = make_cover(&original, q);
            SyntheticPair::from_notes(original, cover, q, &grid)
        })
        .collect()
}

/// Mean style of the sparser and denser halves of `pairs`, split by cover
/// note count.
pub fn calm_and_intense_styles(pairs: &[SyntheticPair]) -> Result<(StyleVector, StyleVector)> {
    let mut order: Vec<&SyntheticPair> = pairs.iter().collect();
    order.sort_by_key(|p| p.cover.len());
    let half = order.len() / 2;
    let calm: Vec<StyleVector> = order[..half].iter().map(|p| p.style).collect();
    let intense: Vec<StyleVector> = order[half..].iter().map(|p| p.style).collect();
    Ok((StyleVector::average(&calm)?, StyleVector::average(&intense)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic() {
        let a = gen_synthetic_dataset(3, 5).unwrap();
        let b = gen_synthetic_dataset(3, 5).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.cover, y.cover);
            assert_eq!(x.input_features, y.input_features);
        }
    }

    #[test]
    fn cover_contains_original_and_respects_keys() {
        for p in gen_synthetic_dataset(6, 1).unwrap() {
            assert!(p.original.iter().all(|n| p.cover.contains(n)));
            assert!(p.original.len() >= 15);
            for (i, a) in p.cover.iter().enumerate() {
                for b in &p.cover[i + 1..] {
                    assert!(a.pitch != b.pitch || a.offset <= b.onset || b.offset <= a.onset);
                }
            }
            assert_eq!(p.input_features.shape(), &[512, BINS]);
            assert_eq!(p.target.n_frames(), 512);
        }
    }

    #[test]
    fn intensity_adds_notes() {
        let grid = FrameGrid::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let original = random_original(&mut rng, &grid);
        let calm = make_cover(&original, 0.49);
        let dense = make_cover(&original, 0.5);
        assert_eq!(calm.len(), original.len());
        assert_eq!(dense.len(), 2 * calm.len());
    }

    #[test]
    fn feature_peak_sits_on_key() {
        let grid = FrameGrid::default();
        let n = MidiNote { onset: 0.16, offset: 0.32, pitch: 65, velocity: 100 };
        let x = render_features(&[n], &grid);
        let row = x.row(10);
        let best = (0..BINS).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
        assert_eq!(best, 7);
        assert!((row[7] - (1.0 + ATTACK_BOOST) * AMPLITUDE).abs() < 1e-12);
        assert!((x.row(13)[7] - AMPLITUDE).abs() < 1e-12);
        assert_eq!(x.row(9)[7], 0.0);
    }
}
