//! Two-hierarchy toy network.
//!
//! Hierarchy 1: per-frame affine + tanh encoder to an `F x Z` grid, style
//! injection, then per-pitch affine heads reading the grid cell of the pitch's
//! band (`88 / F` pitches per band). Hierarchy 2 encodes the input features
//! together with hierarchy 1's onset and frame probabilities and applies the
//! same kind of heads, without injection.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inject::{self, sigmoid, uniform_init, HiddenGrid, InjectionParams};
use crate::loss::{bce, bce_logit_grad, clamp_prob, combine, HierarchyLoss, LossBreakdown, MaskCounts, MatrixKind, SelectionMask, EPS};
use crate::roll::{PianoRollTensors, Velocities, PITCHES, VELOCITY_CLASSES};
use crate::style::{StyleVector, STYLE_DIM};
use crate::tensor::Tensor;

const V: usize = VELOCITY_CLASSES;

/// Hyperparameter manifest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyNetConfig {
    #[serde(rename = "T")]
    pub t: usize,
    #[serde(rename = "F")]
    pub f: usize,
    #[serde(rename = "Z")]
    pub z: usize,
    #[serde(rename = "G")]
    pub g: usize,
    #[serde(rename = "F_in")]
    pub f_in: usize,
}

impl Default for ToyNetConfig {
    fn default() -> Self {
        ToyNetConfig { t: 512, f: 4, z: 32, g: 32, f_in: 16 }
    }
}

impl ToyNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.f == 0 || !PITCHES.is_multiple_of(self.f) {
            return Err(Error::Config(format!("F = {} must divide 88", self.f)));
        }
        if self.t == 0 || self.z == 0 || self.g == 0 || self.f_in == 0 {
            return Err(Error::Config("T, Z, G and F_in must be positive".into()));
        }
        Ok(())
    }

    pub fn band_width(&self) -> usize {
        PITCHES / self.f
    }

    pub fn h2_input(&self) -> usize {
        self.f_in + 2 * PITCHES
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HierarchyParams {
    /// `F*Z x in_dim`
    pub enc_w: Tensor,
    pub enc_b: Tensor,
    /// `88 x Z`
    pub onset_w: Tensor,
    pub onset_b: Tensor,
    pub frame_w: Tensor,
    pub frame_b: Tensor,
    /// `88 x 128 x Z`
    pub vel_w: Tensor,
    /// `88 x 128`
    pub vel_b: Tensor,
}

impl HierarchyParams {
    fn zeros(in_dim: usize, cfg: &ToyNetConfig) -> Self {
        let (fz, z) = (cfg.f * cfg.z, cfg.z);
        HierarchyParams {
            enc_w: Tensor::zeros(&[fz, in_dim]),
            enc_b: Tensor::zeros(&[fz]),
            onset_w: Tensor::zeros(&[PITCHES, z]),
            onset_b: Tensor::zeros(&[PITCHES]),
            frame_w: Tensor::zeros(&[PITCHES, z]),
            frame_b: Tensor::zeros(&[PITCHES]),
            vel_w: Tensor::zeros(&[PITCHES, V, z]),
            vel_b: Tensor::zeros(&[PITCHES, V]),
        }
    }

    fn init(in_dim: usize, cfg: &ToyNetConfig, rng: &mut ChaCha8Rng) -> Self {
        let (fz, z) = (cfg.f * cfg.z, cfg.z);
        HierarchyParams {
            enc_w: uniform_init(rng, &[fz, in_dim], in_dim),
            enc_b: uniform_init(rng, &[fz], in_dim),
            onset_w: uniform_init(rng, &[PITCHES, z], z),
            onset_b: uniform_init(rng, &[PITCHES], z),
            frame_w: uniform_init(rng, &[PITCHES, z], z),
            frame_b: uniform_init(rng, &[PITCHES], z),
            vel_w: uniform_init(rng, &[PITCHES, V, z], z),
            vel_b: uniform_init(rng, &[PITCHES, V], z),
        }
    }

    fn in_dim(&self) -> usize {
        self.enc_w.shape()[1]
    }

    fn fields(&self) -> [(&'static str, &Tensor); 8] {
        [
            ("enc_w", &self.enc_w),
            ("enc_b", &self.enc_b),
            ("onset_w", &self.onset_w),
            ("onset_b", &self.onset_b),
            ("frame_w", &self.frame_w),
            ("frame_b", &self.frame_b),
            ("vel_w", &self.vel_w),
            ("vel_b", &self.vel_b),
        ]
    }

    fn fields_mut(&mut self) -> [(&'static str, &mut Tensor); 8] {
        [
            ("enc_w", &mut self.enc_w),
            ("enc_b", &mut self.enc_b),
            ("onset_w", &mut self.onset_w),
            ("onset_b", &mut self.onset_b),
            ("frame_w", &mut self.frame_w),
            ("frame_b", &mut self.frame_b),
            ("vel_w", &mut self.vel_w),
            ("vel_b", &mut self.vel_b),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct CheckpointManifest {
    #[serde(flatten)]
    config: ToyNetConfig,
    seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyNetParams {
    pub config: ToyNetConfig,
    pub h1: HierarchyParams,
    pub inject: InjectionParams,
    pub h2: HierarchyParams,
}

impl ToyNetParams {
    pub fn zeros(config: ToyNetConfig) -> Result<Self> {
        config.validate()?;
        Ok(ToyNetParams {
            config,
            h1: HierarchyParams::zeros(config.f_in, &config),
            inject: InjectionParams::zeros(config.z, config.g),
            h2: HierarchyParams::zeros(config.h2_input(), &config),
        })
    }

    /// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` initialization from `seed`.
    pub fn init(config: ToyNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h1 = HierarchyParams::init(config.f_in, &config, &mut rng);
        let inject = InjectionParams::init(config.z, config.g, &mut rng);
        let h2 = HierarchyParams::init(config.h2_input(), &config, &mut rng);
        Ok(ToyNetParams { config, h1, inject, h2 })
    }

    /// Every parameter tensor with a stable dotted name.
    pub fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        out.extend(self.h1.fields().map(|(n, t)| (format!("h1.{n}"), t)));
        out.extend(self.inject.fields().map(|(n, t)| (format!("inject.{n}"), t)));
        out.extend(self.h2.fields().map(|(n, t)| (format!("h2.{n}"), t)));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        out.extend(self.h1.fields_mut().map(|(n, t)| (format!("h1.{n}"), t)));
        out.extend(self.inject.fields_mut().map(|(n, t)| (format!("inject.{n}"), t)));
        out.extend(self.h2.fields_mut().map(|(n, t)| (format!("h2.{n}"), t)));
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub(crate) fn add_assign(&mut self, other: &ToyNetParams) {
        for ((_, a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += y;
            }
        }
    }

    pub(crate) fn scale(&mut self, factor: f64) {
        for (_, t) in self.tensors_mut() {
            t.data_mut().iter_mut().for_each(|x| *x *= factor);
        }
    }

    fn check(&self) -> Result<()> {
        self.config.validate()?;
        let expect = ToyNetParams::zeros(self.config)?;
        for ((name, a), (_, b)) in self.tensors().into_iter().zip(expect.tensors()) {
            if a.shape() != b.shape() {
                return Err(Error::shape(format!("{name} {:?}", a.shape()), b.len(), a.len()));
            }
            if !a.all_finite() {
                return Err(Error::Config(format!("{name} is not finite")));
            }
        }
        Ok(())
    }

    /// Checkpoint layout: `manifest.json`, `h1/*.apct`, `inject/` (with its own
    /// manifest), `h2/*.apct`.
    pub fn save(&self, dir: impl AsRef<Path>, seed: u64) -> Result<()> {
        let dir = dir.as_ref();
        for (sub, h) in [("h1", &self.h1), ("h2", &self.h2)] {
            let d = dir.join(sub);
            std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
            for (name, t) in h.fields() {
                t.write(d.join(format!("{name}.apct")))?;
            }
        }
        self.inject.save(dir.join("inject"), seed)?;
        let manifest = CheckpointManifest { config: self.config, seed };
        let path = dir.join("manifest.json");
        std::fs::write(&path, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<(Self, u64)> {
        let dir = dir.as_ref();
        let path = dir.join("manifest.json");
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: CheckpointManifest = serde_json::from_slice(&bytes)?;
        let mut p = ToyNetParams::zeros(manifest.config)?;
        for (sub, h) in [("h1", &mut p.h1), ("h2", &mut p.h2)] {
            for (name, t) in h.fields_mut() {
                *t = Tensor::read(dir.join(sub).join(format!("{name}.apct")))?;
            }
        }
        p.inject = InjectionParams::load(dir.join("inject"))?.0;
        p.check()?;
        Ok((p, manifest.seed))
    }
}

/// Per-frame `tanh(W x + b)`, output `T x (F*Z)`.
fn encode(p: &HierarchyParams, input: &[f64], t_len: usize) -> Vec<f64> {
    let in_dim = p.in_dim();
    let fz = p.enc_b.len();
    let (w, b) = (p.enc_w.data(), p.enc_b.data());
    let mut out = vec![0.0; t_len * fz];
    for t in 0..t_len {
        let x = &input[t * in_dim..(t + 1) * in_dim];
        let o = &mut out[t * fz..(t + 1) * fz];
        for (k, ok) in o.iter_mut().enumerate() {
            let row = &w[k * in_dim..(k + 1) * in_dim];
            *ok = (b[k] + dot(row, x)).tanh();
        }
    }
    out
}

/// Accumulates encoder gradients; returns d input when requested.
fn encode_backward(
    p: &HierarchyParams,
    g: &mut HierarchyParams,
    input: &[f64],
    hidden: &[f64],
    d_hidden: &[f64],
    t_len: usize,
    want_input_grad: bool,
) -> Option<Vec<f64>> {
    let in_dim = p.in_dim();
    let fz = p.enc_b.len();
    let w = p.enc_w.data();
    let mut d_input = want_input_grad.then(|| vec![0.0; t_len * in_dim]);
    let (gw, gb) = (g.enc_w.data_mut(), g.enc_b.data_mut());
    for t in 0..t_len {
        let x = &input[t * in_dim..(t + 1) * in_dim];
        for k in 0..fz {
            let h = hidden[t * fz + k];
            let d_pre = d_hidden[t * fz + k] * (1.0 - h * h);
            if d_pre == 0.0 {
                continue;
            }
            gb[k] += d_pre;
            axpy(d_pre, x, &mut gw[k * in_dim..(k + 1) * in_dim]);
            if let Some(di) = d_input.as_mut() {
                axpy(d_pre, &w[k * in_dim..(k + 1) * in_dim], &mut di[t * in_dim..(t + 1) * in_dim]);
            }
        }
    }
    d_input
}

/// Four independent partial sums so the loop vectorizes.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

struct HeadOut {
    onset: Vec<f64>,
    frame: Vec<f64>,
    /// Softmax rows for the requested cells (or every cell), `len x 128`.
    velocity: Vec<f64>,
}

fn head_cell<'a>(head_in: &'a [f64], cfg: &ToyNetConfig, t: usize, p: usize) -> &'a [f64] {
    let band = p / cfg.band_width();
    let start = (t * cfg.f + band) * cfg.z;
    &head_in[start..start + cfg.z]
}

fn velocity_row(p: &HierarchyParams, h: &[f64], pitch: usize, z: usize, out: &mut [f64]) {
    let w = &p.vel_w.data()[pitch * V * z..(pitch + 1) * V * z];
    let b = &p.vel_b.data()[pitch * V..(pitch + 1) * V];
    let mut max = f64::NEG_INFINITY;
    for c in 0..V {
        out[c] = b[c] + dot(&w[c * z..(c + 1) * z], h);
        max = max.max(out[c]);
    }
    let mut sum = 0.0;
    for o in out.iter_mut() {
        *o = (*o - max).exp();
        sum += *o;
    }
    out.iter_mut().for_each(|o| *o /= sum);
}

fn heads(p: &HierarchyParams, head_in: &[f64], cfg: &ToyNetConfig, vel_cells: Option<&[usize]>) -> HeadOut {
    let t_len = cfg.t;
    let z = cfg.z;
    let mut onset = vec![0.0; t_len * PITCHES];
    let mut frame = vec![0.0; t_len * PITCHES];
    for t in 0..t_len {
        for pitch in 0..PITCHES {
            let h = head_cell(head_in, cfg, t, pitch);
            let c = t * PITCHES + pitch;
            onset[c] = sigmoid(p.onset_b.data()[pitch] + dot(p.onset_w.row(pitch), h));
            frame[c] = sigmoid(p.frame_b.data()[pitch] + dot(p.frame_w.row(pitch), h));
        }
    }
    let all: Vec<usize>;
    let cells = match vel_cells {
        Some(c) => c,
        None => {
            all = (0..t_len * PITCHES).collect();
            &all
        }
    };
    let mut velocity = vec![0.0; cells.len() * V];
    for (k, &cell) in cells.iter().enumerate() {
        let (t, pitch) = (cell / PITCHES, cell % PITCHES);
        let h = head_cell(head_in, cfg, t, pitch);
        velocity_row(p, h, pitch, z, &mut velocity[k * V..(k + 1) * V]);
    }
    HeadOut { onset, frame, velocity }
}

/// Accumulates head gradients from logit gradients and returns d head_in.
#[allow(clippy::too_many_arguments)]
fn heads_backward(
    p: &HierarchyParams,
    g: &mut HierarchyParams,
    head_in: &[f64],
    cfg: &ToyNetConfig,
    d_onset: &[f64],
    d_frame: &[f64],
    vel_cells: &[usize],
    d_vel: &[f64],
) -> Vec<f64> {
    let z = cfg.z;
    let mut d_in = vec![0.0; head_in.len()];
    let band_w = cfg.band_width();
    let cell_start = |t: usize, pitch: usize| (t * cfg.f + pitch / band_w) * z;
    for t in 0..cfg.t {
        for pitch in 0..PITCHES {
            let c = t * PITCHES + pitch;
            let s = cell_start(t, pitch);
            let h = &head_in[s..s + z];
            for (d, w, gw, gb) in
                [(d_onset[c], &p.onset_w, &mut g.onset_w, &mut g.onset_b), (d_frame[c], &p.frame_w, &mut g.frame_w, &mut g.frame_b)]
            {
                if d == 0.0 {
                    continue;
                }
                gb.data_mut()[pitch] += d;
                axpy(d, h, gw.row_mut(pitch));
                axpy(d, w.row(pitch), &mut d_in[s..s + z]);
            }
        }
    }
    for (k, &cell) in vel_cells.iter().enumerate() {
        let (t, pitch) = (cell / PITCHES, cell % PITCHES);
        let s = cell_start(t, pitch);
        let dl = &d_vel[k * V..(k + 1) * V];
        let w = &p.vel_w.data()[pitch * V * z..(pitch + 1) * V * z];
        let gw = &mut g.vel_w.data_mut()[pitch * V * z..(pitch + 1) * V * z];
        let gb = &mut g.vel_b.data_mut()[pitch * V..(pitch + 1) * V];
        for c in 0..V {
            let d = dl[c];
            if d == 0.0 {
                continue;
            }
            gb[c] += d;
            axpy(d, &head_in[s..s + z], &mut gw[c * z..(c + 1) * z]);
            axpy(d, &w[c * z..(c + 1) * z], &mut d_in[s..s + z]);
        }
    }
    d_in
}

/// `[x_t, onset1_t, frame1_t]` per frame.
fn h2_input(features: &[f64], f_in: usize, onset: &[f64], frame: &[f64], t_len: usize) -> Vec<f64> {
    let dim = f_in + 2 * PITCHES;
    let mut u = vec![0.0; t_len * dim];
    for t in 0..t_len {
        let row = &mut u[t * dim..(t + 1) * dim];
        row[..f_in].copy_from_slice(&features[t * f_in..(t + 1) * f_in]);
        row[f_in..f_in + PITCHES].copy_from_slice(&onset[t * PITCHES..(t + 1) * PITCHES]);
        row[f_in + PITCHES..].copy_from_slice(&frame[t * PITCHES..(t + 1) * PITCHES]);
    }
    u
}

fn check_inputs(params: &ToyNetParams, features: &Tensor) -> Result<()> {
    let cfg = &params.config;
    if features.rank() != 2 {
        return Err(Error::shape("input feature rank", 2, features.rank()));
    }
    if features.shape()[0] != cfg.t {
        return Err(Error::shape("input frames (T)", cfg.t, features.shape()[0]));
    }
    if features.shape()[1] != cfg.f_in {
        return Err(Error::shape("input feature width (F_in)", cfg.f_in, features.shape()[1]));
    }
    Ok(())
}

/// Dense predictions of both hierarchies: sigmoid onset/frame probabilities
/// and softmax velocity distributions for every cell.
pub fn forward_features(params: &ToyNetParams, features: &Tensor, style: &StyleVector) -> Result<(PianoRollTensors, PianoRollTensors)> {
    check_inputs(params, features)?;
    let cfg = params.config;
    let hid1 = encode(&params.h1, features.data(), cfg.t);
    let grid = HiddenGrid::from_vec(cfg.t, cfg.f, cfg.z, hid1)?;
    let (mixed, _) = inject::forward(&params.inject, &grid, &style.to_array())?;
    let o1 = heads(&params.h1, &mixed.values, &cfg, None);
    let u = h2_input(features.data(), cfg.f_in, &o1.onset, &o1.frame, cfg.t);
    let hid2 = encode(&params.h2, &u, cfg.t);
    let o2 = heads(&params.h2, &hid2, &cfg, None);
    let to_roll = |o: HeadOut| PianoRollTensors::from_parts(cfg.t, o.onset, o.frame, Velocities::Probs(o.velocity));
    Ok((to_roll(o1)?, to_roll(o2)?))
}

/// Selected cell lists of a [`SelectionMask`], computed once per pair.
#[derive(Debug, Clone)]
pub(crate) struct MaskCells {
    onset: Vec<usize>,
    frame: Vec<usize>,
    velocity: Vec<usize>,
}

impl MaskCells {
    pub(crate) fn new(mask: &SelectionMask) -> Self {
        MaskCells { onset: mask.cells(MatrixKind::Onset), frame: mask.cells(MatrixKind::Frame), velocity: mask.cells(MatrixKind::Velocity) }
    }
}

/// Loss terms of one hierarchy plus logit gradients scaled by `weight`.
struct HeadLoss {
    loss: HierarchyLoss,
    d_onset: Vec<f64>,
    d_frame: Vec<f64>,
    d_vel: Vec<f64>,
}

fn head_loss(out: &HeadOut, truth: &PianoRollTensors, cells: &MaskCells, weight: f64) -> HeadLoss {
    let n = truth.cells();
    let mut d_onset = vec![0.0; n];
    let mut d_frame = vec![0.0; n];
    let mut d_vel = vec![0.0; cells.velocity.len() * V];
    let binary = |sel: &[usize], pred: &[f64], target: &[f64], d: &mut [f64]| {
        if sel.is_empty() {
            return 0.0;
        }
        let scale = weight / (3.0 * sel.len() as f64);
        let mut sum = 0.0;
        for &c in sel {
            sum += bce(pred[c], target[c]);
            d[c] = scale * bce_logit_grad(pred[c], target[c]);
        }
        sum / sel.len() as f64
    };
    let onset = binary(&cells.onset, &out.onset, &truth.onsets, &mut d_onset);
    let frame = binary(&cells.frame, &out.frame, &truth.frames, &mut d_frame);
    let mut velocity = 0.0;
    if !cells.velocity.is_empty() {
        let scale = weight / (3.0 * cells.velocity.len() as f64);
        let mut sum = 0.0;
        for (k, &c) in cells.velocity.iter().enumerate() {
            let row = &out.velocity[k * V..(k + 1) * V];
            let class = truth.velocity_class(c);
            let q = row[class];
            sum += -clamp_prob(q).ln();
            if q > EPS && q < 1.0 - EPS {
                let d = &mut d_vel[k * V..(k + 1) * V];
                for (j, (dj, &pj)) in d.iter_mut().zip(row).enumerate() {
                    *dj = scale * (pj - f64::from(j == class));
                }
            }
        }
        velocity = sum / cells.velocity.len() as f64;
    }
    HeadLoss { loss: HierarchyLoss::from_terms(onset, frame, velocity), d_onset, d_frame, d_vel }
}

/// Masked loss of one pair and, when `want_grad`, its gradient with respect to
/// every parameter. Matches [`crate::loss::total_loss_with_mask`] applied to the
/// dense predictions, but only evaluates velocity heads on selected cells.
pub(crate) fn loss_and_grad(
    params: &ToyNetParams,
    features: &Tensor,
    style: &[f64; STYLE_DIM],
    truth: &PianoRollTensors,
    cells: &MaskCells,
    beta: f64,
    want_grad: bool,
) -> Result<(LossBreakdown, Option<ToyNetParams>)> {
    check_inputs(params, features)?;
    let cfg = params.config;
    if truth.n_frames() != cfg.t {
        return Err(Error::shape("target frames (T)", cfg.t, truth.n_frames()));
    }
    let x = features.data();
    let hid1 = encode(&params.h1, x, cfg.t);
    let grid = HiddenGrid::from_vec(cfg.t, cfg.f, cfg.z, hid1)?;
    let (mixed, inj_cache) = inject::forward(&params.inject, &grid, style)?;
    let o1 = heads(&params.h1, &mixed.values, &cfg, Some(&cells.velocity));
    let u = h2_input(x, cfg.f_in, &o1.onset, &o1.frame, cfg.t);
    let hid2 = encode(&params.h2, &u, cfg.t);
    let o2 = heads(&params.h2, &hid2, &cfg, Some(&cells.velocity));

    let l1 = head_loss(&o1, truth, cells, beta);
    let l2 = head_loss(&o2, truth, cells, 1.0 - beta);
    let breakdown = LossBreakdown {
        l: combine(beta, l1.loss.total, l2.loss.total),
        l1: l1.loss.total,
        l2: l2.loss.total,
        h1: l1.loss,
        h2: l2.loss,
        masked_counts: MaskCounts { onset: cells.onset.len(), frame: cells.frame.len(), velocity: cells.velocity.len() },
        empty_mask: cells.onset.is_empty() || cells.frame.is_empty() || cells.velocity.is_empty(),
    };
    if !want_grad {
        return Ok((breakdown, None));
    }

    let mut g = ToyNetParams::zeros(cfg)?;
    let d_hid2 = heads_backward(&params.h2, &mut g.h2, &hid2, &cfg, &l2.d_onset, &l2.d_frame, &cells.velocity, &l2.d_vel);
    let d_u = encode_backward(&params.h2, &mut g.h2, &u, &hid2, &d_hid2, cfg.t, true).unwrap();

    let mut d_on1 = l1.d_onset;
    let mut d_fr1 = l1.d_frame;
    let dim = cfg.h2_input();
    for t in 0..cfg.t {
        for pitch in 0..PITCHES {
            let c = t * PITCHES + pitch;
            let (po, pf) = (o1.onset[c], o1.frame[c]);
            d_on1[c] += d_u[t * dim + cfg.f_in + pitch] * po * (1.0 - po);
            d_fr1[c] += d_u[t * dim + cfg.f_in + PITCHES + pitch] * pf * (1.0 - pf);
        }
    }
    let d_mixed = heads_backward(&params.h1, &mut g.h1, &mixed.values, &cfg, &d_on1, &d_fr1, &cells.velocity, &l1.d_vel);
    let inj = inject::backward(&params.inject, &inj_cache, &d_mixed);
    g.inject = inj.params;
    encode_backward(&params.h1, &mut g.h1, x, &grid.values, &inj.input.values, cfg.t, false);
    Ok((breakdown, Some(g)))
}
