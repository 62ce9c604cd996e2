use std::f64::consts::PI;

use rustfft::{num_complex::Complex, FftPlanner};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::roll::MidiNote;

/// STFT window length in samples.
pub const CHROMA_WINDOW: usize = 4096;
const MIN_HZ: f64 = 27.5;
const MAX_HZ: f64 = 4186.0;

/// Per-frame pitch-class energy, class 0 = C. Each frame is scaled to unit
/// maximum; silent frames stay zero.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChromaSequence {
    pub frames: Vec<[f64; 12]>,
    pub frame_hop: f64,
}

impl ChromaSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Rotates pitch classes: `out[k] = in[(k + shift) % 12]`.
    pub fn rotated(&self, shift: usize) -> ChromaSequence {
        ChromaSequence { frames: self.frames.iter().map(|f| rotate(f, shift)).collect(), frame_hop: self.frame_hop }
    }

    pub fn mean(&self) -> [f64; 12] {
        let mut m = [0.0; 12];
        for f in &self.frames {
            for (a, b) in m.iter_mut().zip(f) {
                *a += b;
            }
        }
        let n = self.frames.len().max(1) as f64;
        m.iter_mut().for_each(|x| *x /= n);
        m
    }
}

pub(crate) fn rotate(frame: &[f64; 12], shift: usize) -> [f64; 12] {
    std::array::from_fn(|k| frame[(k + shift) % 12])
}

fn normalize(frame: &mut [f64; 12]) {
    let max = frame.iter().fold(0.0f64, |m, &x| m.max(x));
    if max > 0.0 {
        frame.iter_mut().for_each(|x| *x /= max);
    }
}

/// Sums note velocities into pitch classes over every frame a note overlaps.
pub fn chroma_from_notes(notes: &[MidiNote], hop: f64) -> ChromaSequence {
    assert!(hop > 0.0, "hop must be positive");
    let n_frames = notes.iter().map(|n| (n.offset / hop).ceil() as usize).max().unwrap_or(0);
    let mut frames = vec![[0.0; 12]; n_frames];
    for n in notes {
        let first = (n.onset / hop).floor().max(0.0) as usize;
        let last = ((n.offset / hop).ceil() as usize).min(n_frames);
        let class = (n.pitch % 12) as usize;
        for f in &mut frames[first..last] {
            f[class] += f64::from(n.velocity);
        }
    }
    frames.iter_mut().for_each(normalize);
    ChromaSequence { frames, frame_hop: hop }
}

/// Magnitude-squared STFT (Hann window of [`CHROMA_WINDOW`] samples) folded
/// onto the nearest equal-tempered pitch class, A4 = 440 Hz, over
/// 27.5–4186 Hz. Frames start every `hop` seconds; the tail is zero-padded.
pub fn chroma_from_audio(pcm: &[f64], sample_rate: u32, hop: f64) -> Result<ChromaSequence> {
    if sample_rate < 8000 {
        return Err(Error::Audio(format!("sample rate {sample_rate} Hz is too low for a {CHROMA_WINDOW}-sample window (need >= 8000)")));
    }
    if pcm.is_empty() {
        return Err(Error::Audio("empty signal".into()));
    }
    if hop.is_nan() || hop <= 0.0 {
        return Err(Error::Config("hop must be positive".into()));
    }
    let sr = f64::from(sample_rate);
    let hop_samples = ((hop * sr).round() as usize).max(1);
    let n_frames = 1 + (pcm.len() - 1) / hop_samples;

    let window: Vec<f64> = (0..CHROMA_WINDOW).map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / CHROMA_WINDOW as f64).cos()).collect();
    let bin_class: Vec<Option<usize>> = (0..=CHROMA_WINDOW / 2)
        .map(|k| {
            let hz = k as f64 * sr / CHROMA_WINDOW as f64;
            (MIN_HZ..=MAX_HZ).contains(&hz).then(|| {
                let midi = (69.0 + 12.0 * (hz / 440.0).log2()).round() as i64;
                midi.rem_euclid(12) as usize
            })
        })
        .collect();

    let fft = FftPlanner::new().plan_fft_forward(CHROMA_WINDOW);
    let mut buf = vec![Complex::new(0.0, 0.0); CHROMA_WINDOW];
    let mut frames = Vec::with_capacity(n_frames);
    for i in 0..n_frames {
        let start = i * hop_samples;
        for (n, b) in buf.iter_mut().enumerate() {
            let x = pcm.get(start + n).copied().unwrap_or(0.0);
            *b = Complex::new(x * window[n], 0.0);
        }
        fft.process(&mut buf);
        let mut frame = [0.0; 12];
        for (k, class) in bin_class.iter().enumerate() {
            if let Some(c) = class {
                frame[*c] += buf[k].norm_sqr();
            }
        }
        normalize(&mut frame);
        frames.push(frame);
    }
    Ok(ChromaSequence { frames, frame_hop: hop_samples as f64 / sr })
}
