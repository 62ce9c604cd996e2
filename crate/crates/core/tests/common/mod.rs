//! Independent reference implementations used by the integration and
//! acceptance tests. Everything here is written naively on purpose and shares
//! no code with the library beyond its data types.
#![allow(dead_code, clippy::needless_range_loop)]

use std::collections::HashMap;

use apc_core::evalkit::ChromaSequence;
use apc_core::inject::InjectionParams;
use apc_core::inject::{backward, forward, HiddenGrid};
use apc_core::loss::SelectionMask;
use apc_core::loss::{build_mask, LossConfig};
use apc_core::roll::notes_to_tensors;
use apc_core::roll::{MidiNote, PianoRollTensors, PITCHES, VELOCITY_CLASSES};
use apc_core::style::extract_style_vector;
use apc_core::tensor::Tensor;
use apc_core::toynet::gradcheck::loss_with_grad;
use apc_core::toynet::{ToyNetConfig, ToyNetParams};
use apc_core::FrameGrid;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

// ---------------------------------------------------------------- inject

/// One cell of the gated injection, evaluated term by term.
pub fn inject_cell(p: &InjectionParams, h: &[f64], style: &[f64; 24]) -> Vec<f64> {
    let z = p.b.len();
    let g = p.gate_b1.len();
    let w = p.w.data();
    let mut out = vec![0.0; z];
    let mut hidden = vec![0.0; g];
    for j in 0..g {
        let mut s = p.gate_b1.data()[j];
        for k in 0..z {
            s += p.gate_w1.data()[j * z + k] * h[k];
        }
        hidden[j] = if s > 0.0 { s } else { 0.0 };
    }
    for i in 0..z {
        let mut sv = p.b.data()[i];
        for k in 0..24 {
            sv += w[i * 24 + k] * style[k];
        }
        let mut a = p.gate_b2.data()[i];
        for j in 0..g {
            a += p.gate_w2.data()[i * g + j] * hidden[j];
        }
        let r = 1.0 / (1.0 + (-a).exp());
        out[i] = r * h[i] + (1.0 - r) * sv;
    }
    out
}

pub fn random_injection(rng: &mut ChaCha8Rng, z: usize, g: usize, scale: f64) -> InjectionParams {
    let mut p = InjectionParams::zeros(z, g);
    for (_, t) in p.fields_mut() {
        t.data_mut().iter_mut().for_each(|x| *x = rng.random_range(-scale..scale));
    }
    p
}

// ---------------------------------------------------------------- loss

fn clamp(p: f64) -> f64 {
    p.clamp(1e-7, 1.0 - 1e-7)
}

fn bce(p: f64, y: f64) -> f64 {
    let p = clamp(p);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// (onset, frame, velocity) masked means, cell by cell.
pub fn hierarchy_terms(pred: &PianoRollTensors, truth: &PianoRollTensors, mask: Option<&SelectionMask>) -> [f64; 3] {
    let t_len = truth.n_frames();
    let mut sums = [0.0; 3];
    let mut counts = [0usize; 3];
    for t in 0..t_len {
        for p in 0..PITCHES {
            let c = t * PITCHES + p;
            let sel = |k: usize| match mask {
                None => true,
                Some(m) => [&m.onset, &m.frame, &m.velocity][k][c],
            };
            if sel(0) {
                sums[0] += bce(pred.onset(t, p), truth.onset(t, p));
                counts[0] += 1;
            }
            if sel(1) {
                sums[1] += bce(pred.frame(t, p), truth.frame(t, p));
                counts[1] += 1;
            }
            if sel(2) {
                let class = (0..VELOCITY_CLASSES).find(|&k| truth.velocity_prob(c, k) == 1.0).unwrap();
                sums[2] += -clamp(pred.velocity_prob(c, class)).ln();
                counts[2] += 1;
            }
        }
    }
    [0, 1, 2].map(|k| if counts[k] == 0 { 0.0 } else { sums[k] / counts[k] as f64 })
}

pub fn total_oracle(
    h1: &PianoRollTensors,
    h2: &PianoRollTensors,
    truth: &PianoRollTensors,
    mask: Option<&SelectionMask>,
    beta: f64,
) -> f64 {
    let l1: f64 = hierarchy_terms(h1, truth, mask).iter().sum::<f64>() / 3.0;
    let l2: f64 = hierarchy_terms(h2, truth, mask).iter().sum::<f64>() / 3.0;
    beta * l1 + (1.0 - beta) * l2
}

/// Random prediction tensors with strictly interior probabilities.
pub fn random_prediction(rng: &mut ChaCha8Rng, n_frames: usize) -> PianoRollTensors {
    let n = n_frames * PITCHES;
    let onsets = (0..n).map(|_| rng.random_range(0.001..0.999)).collect();
    let frames = (0..n).map(|_| rng.random_range(0.001..0.999)).collect();
    let mut vel = Vec::with_capacity(n * VELOCITY_CLASSES);
    for _ in 0..n {
        let row: Vec<f64> = (0..VELOCITY_CLASSES).map(|_| rng.random_range(0.1..1.0)).collect();
        let s: f64 = row.iter().sum();
        vel.extend(row.iter().map(|x| x / s));
    }
    PianoRollTensors::from_parts(n_frames, onsets, frames, apc_core::Velocities::Probs(vel)).unwrap()
}

/// Random ground truth with soft onsets, binary frames and one-hot velocity.
pub fn random_truth(rng: &mut ChaCha8Rng, n_frames: usize) -> PianoRollTensors {
    let n = n_frames * PITCHES;
    let mut onsets = vec![0.0; n];
    let mut frames = vec![0.0; n];
    let mut classes = vec![0u8; n];
    for c in 0..n {
        if rng.random_bool(0.1) {
            frames[c] = 1.0;
            classes[c] = rng.random_range(1..128);
            onsets[c] = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0][rng.random_range(0..4)];
        }
    }
    PianoRollTensors::from_parts(n_frames, onsets, frames, apc_core::Velocities::Classes(classes)).unwrap()
}

// ---------------------------------------------------------------- dtw

fn cos_dist(a: &[f64; 12], b: &[f64; 12]) -> f64 {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    match (na == 0.0, nb == 0.0) {
        (true, true) => 0.0,
        (true, false) | (false, true) => 1.0,
        _ => 1.0 - a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb),
    }
}

/// Top-down memoized DTW cost.
pub fn dtw_oracle(a: &ChromaSequence, b: &ChromaSequence) -> f64 {
    fn go(i: usize, j: usize, a: &[[f64; 12]], b: &[[f64; 12]], memo: &mut HashMap<(usize, usize), f64>) -> f64 {
        if let Some(&v) = memo.get(&(i, j)) {
            return v;
        }
        let d = cos_dist(&a[i], &b[j]);
        let v = if i == 0 && j == 0 {
            d
        } else {
            let mut best = f64::INFINITY;
            if i > 0 && j > 0 {
                best = best.min(go(i - 1, j - 1, a, b, memo));
            }
            if i > 0 {
                best = best.min(go(i - 1, j, a, b, memo));
            }
            if j > 0 {
                best = best.min(go(i, j - 1, a, b, memo));
            }
            d + best
        };
        memo.insert((i, j), v);
        v
    }
    go(a.len() - 1, b.len() - 1, &a.frames, &b.frames, &mut HashMap::new())
}

pub fn random_chroma(rng: &mut ChaCha8Rng, n: usize) -> ChromaSequence {
    let frames = (0..n)
        .map(|_| {
            let mut f: [f64; 12] = std::array::from_fn(|_| rng.random_range(0.0..1.0));
            let m = f.iter().cloned().fold(0.0, f64::max);
            f.iter_mut().for_each(|x| *x /= m);
            f
        })
        .collect();
    ChromaSequence { frames, frame_hop: 0.1 }
}

// ---------------------------------------------------------------- songs

/// A diatonic chord progression in a random major key: each chord holds
/// three notes for 3 to 8 hops.
pub fn random_song(rng: &mut ChaCha8Rng, chords: usize, hop: f64) -> Vec<MidiNote> {
    const DEGREES: [(u8, u8); 6] = [(0, 4), (2, 3), (4, 3), (5, 4), (7, 4), (9, 3)];
    let key = rng.random_range(0..12u8);
    let mut notes = Vec::new();
    let mut t = 0.0;
    for _ in 0..chords {
        let (degree, third) = DEGREES[rng.random_range(0..DEGREES.len())];
        let root = 48 + (key + degree) % 12;
        let len = rng.random_range(3..=8) as f64 * hop;
        for iv in [0, third, 7] {
            notes.push(MidiNote { onset: t, offset: t + len, pitch: root + iv, velocity: rng.random_range(60..100) });
        }
        t += len;
    }
    notes
}

/// Transposes by `shift` semitones and plays each chord one hop longer or
/// shorter at random; also drops about one note in twenty, moves about one in
/// ten by a semitone or two, adds octave doublings and jitters velocities by
/// up to 15%.
pub fn cover_of(rng: &mut ChaCha8Rng, song: &[MidiNote], shift: i8, hop: f64) -> Vec<MidiNote> {
    let mut onsets: Vec<f64> = song.iter().map(|n| n.onset).collect();
    onsets.dedup();
    let mut retimed = Vec::with_capacity(onsets.len());
    let mut t = 0.0;
    for &on in &onsets {
        let len = song.iter().find(|n| n.onset == on).unwrap().duration();
        let frames = (len / hop).round() as i64 + rng.random_range(-1..=1i64);
        retimed.push((on, t, frames.max(2) as f64 * hop));
        t += frames.max(2) as f64 * hop;
    }
    let mut out = Vec::new();
    for n in song {
        if rng.random_bool(0.05) {
            continue;
        }
        let &(_, onset, len) = retimed.iter().find(|r| r.0 == n.onset).unwrap();
        let mut pitch = (n.pitch as i16 + shift as i16) as u8;
        if rng.random_bool(0.1) {
            pitch = if rng.random_bool(0.5) { pitch + rng.random_range(1..=2) } else { pitch - rng.random_range(1..=2) };
        }
        let velocity = (f64::from(n.velocity) * rng.random_range(0.85..1.15)).round() as u8;
        let base = MidiNote { onset, offset: onset + len, pitch, velocity };
        out.push(base);
        if rng.random_bool(0.2) {
            out.push(MidiNote { pitch: pitch + 12, velocity: velocity / 2, ..base });
        }
    }
    out
}

// ---------------------------------------------------------------- gradients

pub fn random_grid(r: &mut rand_chacha::ChaCha8Rng, t: usize, f: usize, z: usize) -> HiddenGrid {
    let values = (0..t * f * z).map(|_| r.random_range(-1.0..1.0)).collect();
    HiddenGrid::from_vec(t, f, z, values).unwrap()
}

pub fn random_style(r: &mut rand_chacha::ChaCha8Rng) -> [f64; 24] {
    std::array::from_fn(|_| r.random_range(0.0..1.0))
}

/// Largest relative error between analytic and central-difference gradients.
pub fn fd_max_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (t, f, z, g) = (3, 2, 4, 3);
    let p = random_injection(&mut r, z, g, 1.0);
    let grid = random_grid(&mut r, t, f, z);
    let style = random_style(&mut r);
    let up: Vec<f64> = (0..t * f * z).map(|_| r.random_range(-1.0..1.0)).collect();
    let objective = |p: &InjectionParams, grid: &HiddenGrid, style: &[f64; 24]| -> f64 {
        let (o, _) = forward(p, grid, style).unwrap();
        o.values.iter().zip(&up).map(|(a, b)| a * b).sum()
    };
    let (_, cache) = forward(&p, &grid, &style).unwrap();
    let grads = backward(&p, &cache, &up);
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    let names: Vec<&str> = p.fields().iter().map(|(n, _)| *n).collect();
    for (k, name) in names.iter().enumerate() {
        let analytic = grads.params.fields()[k].1.data().to_vec();
        for i in 0..analytic.len() {
            let mut plus = p.clone();
            plus.fields_mut()[k].1.data_mut()[i] += h;
            let mut minus = p.clone();
            minus.fields_mut()[k].1.data_mut()[i] -= h;
            let num = (objective(&plus, &grid, &style) - objective(&minus, &grid, &style)) / (2.0 * h);
            let e = rel_err(analytic[i], num);
            assert!(e.is_finite(), "{name}[{i}]");
            worst = worst.max(e);
        }
    }
    for i in 0..grid.values.len() {
        let mut plus = grid.clone();
        plus.values[i] += h;
        let mut minus = grid.clone();
        minus.values[i] -= h;
        let num = (objective(&p, &plus, &style) - objective(&p, &minus, &style)) / (2.0 * h);
        worst = worst.max(rel_err(grads.input.values[i], num));
    }
    for i in 0..24 {
        let mut plus = style;
        plus[i] += h;
        let mut minus = style;
        minus[i] -= h;
        let num = (objective(&p, &grid, &plus) - objective(&p, &grid, &minus)) / (2.0 * h);
        worst = worst.max(rel_err(grads.style[i], num));
    }
    worst
}

pub const TINY: ToyNetConfig = ToyNetConfig { t: 8, f: 2, z: 4, g: 4, f_in: 16 };

pub struct TinyCase {
    pub params: ToyNetParams,
    pub features: Tensor,
    pub style: [f64; 24],
    pub truth: apc_core::PianoRollTensors,
    pub mask: apc_core::loss::SelectionMask,
}

pub fn tiny_case(seed: u64) -> TinyCase {
    let mut r = rng(seed);
    let params = ToyNetParams::init(TINY, seed).unwrap();
    let features = Tensor::from_vec(&[8, 16], (0..128).map(|_| r.random_range(0.0..2.0)).collect()).unwrap();
    let notes: Vec<MidiNote> = (0..10)
        .map(|_| {
            let on = r.random_range(0..6) as f64 * 0.016;
            MidiNote { onset: on, offset: on + 0.032, pitch: r.random_range(21..=108), velocity: r.random_range(1..128) }
        })
        .collect();
    let grid = FrameGrid::with_frames(8);
    let truth = notes_to_tensors(&notes, 0, &grid, 3);
    let style = extract_style_vector(&notes, &grid).unwrap().to_array();
    let config = LossConfig { theta_onset: 0.5, theta_frame: 0.5, theta_velocity: 0.5, rng_seed: seed, ..LossConfig::default() };
    let mask = build_mask(&truth, &config);
    TinyCase { params, features, style, truth, mask }
}

/// Worst relative error over a random sample of coordinates of every
/// parameter tensor, against central differences of the loss.
pub fn gradient_check(seed: u64, per_tensor: usize) -> f64 {
    let case = tiny_case(seed);
    let loss = |p: &ToyNetParams| loss_with_grad(p, &case.features, &case.style, &case.truth, &case.mask, 0.75).unwrap().0.l;
    let (_, grads) = loss_with_grad(&case.params, &case.features, &case.style, &case.truth, &case.mask, 0.75).unwrap();
    let mut r = rng(seed ^ 0xF00D);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let n_tensors = case.params.tensors().len();
    for k in 0..n_tensors {
        let len = case.params.tensors()[k].1.len();
        for i in sample(&mut r, len, per_tensor.min(len)) {
            let mut plus = case.params.clone();
            plus.tensors_mut()[k].1.data_mut()[i] += h;
            let mut minus = case.params.clone();
            minus.tensors_mut()[k].1.data_mut()[i] -= h;
            let num = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let ana = grads.tensors()[k].1.data()[i];
            let e = rel_err(ana, num);
            assert!(e < 1e-3, "seed {seed} {}[{i}]: analytic {ana} numeric {num}", grads.tensors()[k].0);
            worst = worst.max(e);
        }
    }
    worst
}
