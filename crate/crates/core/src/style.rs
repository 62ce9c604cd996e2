//! Style vectors: three 8-level histograms (onset rate, velocity, pitch) of
//! z-scored per-cover statistics, concatenated into 24 values.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::roll::{FrameGrid, MidiNote};

pub const BLOCK: usize = 8;
pub const STYLE_DIM: usize = 3 * BLOCK;

/// Upper edges of bins 0..=6 (right-closed); bin 7 is everything above 2.
pub const BIN_EDGES: [f64; 7] = [-2.0, -4.0 / 3.0, -2.0 / 3.0, 0.0, 2.0 / 3.0, 4.0 / 3.0, 2.0];

#[derive(Debug, Clone, PartialEq)]
pub struct StyleSamples {
    /// Mean onsets per frame, one entry per segment.
    pub onset_rates: Vec<f64>,
    pub velocities: Vec<u8>,
    pub pitches: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StyleVector {
    pub onset_rate: [f64; BLOCK],
    pub velocity: [f64; BLOCK],
    pub pitch: [f64; BLOCK],
}

impl StyleVector {
    pub fn to_array(&self) -> [f64; STYLE_DIM] {
        let mut out = [0.0; STYLE_DIM];
        out[..BLOCK].copy_from_slice(&self.onset_rate);
        out[BLOCK..2 * BLOCK].copy_from_slice(&self.velocity);
        out[2 * BLOCK..].copy_from_slice(&self.pitch);
        out
    }

    pub fn from_array(values: &[f64; STYLE_DIM]) -> Self {
        let block = |i: usize| {
            let mut b = [0.0; BLOCK];
            b.copy_from_slice(&values[i * BLOCK..(i + 1) * BLOCK]);
            b
        };
        StyleVector { onset_rate: block(0), velocity: block(1), pitch: block(2) }
    }

    /// Elementwise mean of several vectors.
    pub fn average(vectors: &[StyleVector]) -> Result<StyleVector> {
        if vectors.is_empty() {
            return Err(Error::Config("no style vectors to average".into()));
        }
        let mut acc = [0.0; STYLE_DIM];
        for v in vectors {
            for (a, x) in acc.iter_mut().zip(v.to_array()) {
                *a += x;
            }
        }
        acc.iter_mut().for_each(|a| *a /= vectors.len() as f64);
        Ok(StyleVector::from_array(&acc))
    }
}

/// Tiles the cover into segments from frame 0 and gathers the raw samples.
/// A trailing partial segment uses its own length as denominator.
pub fn collect_samples(notes: &[MidiNote], grid: &FrameGrid) -> Result<StyleSamples> {
    if notes.is_empty() {
        return Err(Error::EmptyCover);
    }
    let seg = grid.frames_per_segment;
    let onset_frames: Vec<usize> = notes.iter().map(|n| grid.frame_of(n.onset).max(0) as usize).collect();
    let end_frame = notes
        .iter()
        .map(|n| (n.offset / grid.hop_seconds - 1e-9).ceil().max(0.0) as usize)
        .chain(onset_frames.iter().map(|&f| f + 1))
        .max()
        .unwrap();
    let n_segments = end_frame.div_ceil(seg);
    let mut counts = vec![0usize; n_segments];
    for &f in &onset_frames {
        counts[f / seg] += 1;
    }
    let onset_rates = counts
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let len = seg.min(end_frame - i * seg);
            c as f64 / len as f64
        })
        .collect();
    Ok(StyleSamples {
        onset_rates,
        velocities: notes.iter().map(|n| n.velocity).collect(),
        pitches: notes.iter().map(|n| n.pitch).collect(),
    })
}

/// Population z-scores. Deviations are formed as `n*x - sum`, which is exact
/// (and so shift-invariant) for integer-valued samples. A spread that is zero
/// up to rounding maps every sample to 0.
pub fn z_scores(samples: &[f64]) -> Vec<f64> {
    let n = samples.len() as f64;
    let sum: f64 = samples.iter().sum();
    let dev: Vec<f64> = samples.iter().map(|&x| n * x - sum).collect();
    let spread = (dev.iter().map(|d| d * d).sum::<f64>() / n).sqrt();
    let scale = samples.iter().fold(0.0f64, |m, x| m.max(x.abs())) * n;
    if spread <= 1e-12 * scale || spread == 0.0 {
        return vec![0.0; samples.len()];
    }
    dev.iter().map(|d| d / spread).collect()
}

pub fn bin_index(z: f64) -> usize {
    BIN_EDGES.iter().position(|&e| z <= e).unwrap_or(BLOCK - 1)
}

/// Histogram of already-standardized values over the 8 levels, as fractions.
pub fn histogram_block(z: &[f64]) -> [f64; BLOCK] {
    let mut counts = [0usize; BLOCK];
    for &v in z {
        counts[bin_index(v)] += 1;
    }
    let mut out = [0.0; BLOCK];
    for (o, c) in out.iter_mut().zip(counts) {
        *o = c as f64 / z.len() as f64;
    }
    out
}

pub fn quantize_block(samples: &[f64]) -> [f64; BLOCK] {
    assert!(!samples.is_empty(), "quantize_block needs samples");
    histogram_block(&z_scores(samples))
}

pub fn extract_style_vector(notes: &[MidiNote], grid: &FrameGrid) -> Result<StyleVector> {
    let s = collect_samples(notes, grid)?;
    let as_f64 = |v: &[u8]| v.iter().map(|&x| f64::from(x)).collect::<Vec<_>>();
    Ok(StyleVector {
        onset_rate: quantize_block(&s.onset_rates),
        velocity: quantize_block(&as_f64(&s.velocities)),
        pitch: quantize_block(&as_f64(&s.pitches)),
    })
}
