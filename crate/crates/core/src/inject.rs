//! Gated style injection.
//!
//! The style vector is projected into the hidden space (`h_sv = W v + b`) and
//! blended into every encoder cell through a per-coordinate gate
//! `r = sigmoid(W2 relu(W1 h + b1) + b2)`:
//!
//! ```text
//! out = r * h + (1 - r) * h_sv
//! ```

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::style::STYLE_DIM;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct InjectionParams {
    /// `Z x 24`
    pub w: Tensor,
    /// `Z`
    pub b: Tensor,
    /// `G x Z`
    pub gate_w1: Tensor,
    /// `G`
    pub gate_b1: Tensor,
    /// `Z x G`
    pub gate_w2: Tensor,
    /// `Z`
    pub gate_b2: Tensor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InjectionManifest {
    #[serde(rename = "Z")]
    pub z: usize,
    #[serde(rename = "G")]
    pub g: usize,
    pub seed: u64,
}

pub(crate) fn uniform_init<R: Rng>(rng: &mut R, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let mut t = Tensor::zeros(shape);
    for x in t.data_mut() {
        *x = rng.random_range(-bound..bound);
    }
    t
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl InjectionParams {
    pub fn zeros(z: usize, g: usize) -> Self {
        InjectionParams {
            w: Tensor::zeros(&[z, STYLE_DIM]),
            b: Tensor::zeros(&[z]),
            gate_w1: Tensor::zeros(&[g, z]),
            gate_b1: Tensor::zeros(&[g]),
            gate_w2: Tensor::zeros(&[z, g]),
            gate_b2: Tensor::zeros(&[z]),
        }
    }

    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for every field.
    pub fn init<R: Rng>(z: usize, g: usize, rng: &mut R) -> Self {
        InjectionParams {
            w: uniform_init(rng, &[z, STYLE_DIM], STYLE_DIM),
            b: uniform_init(rng, &[z], STYLE_DIM),
            gate_w1: uniform_init(rng, &[g, z], z),
            gate_b1: uniform_init(rng, &[g], z),
            gate_w2: uniform_init(rng, &[z, g], g),
            gate_b2: uniform_init(rng, &[z], g),
        }
    }

    pub fn hidden(&self) -> usize {
        self.b.len()
    }

    pub fn gate_hidden(&self) -> usize {
        self.gate_b1.len()
    }

    pub fn fields(&self) -> [(&'static str, &Tensor); 6] {
        [
            ("w", &self.w),
            ("b", &self.b),
            ("gate_w1", &self.gate_w1),
            ("gate_b1", &self.gate_b1),
            ("gate_w2", &self.gate_w2),
            ("gate_b2", &self.gate_b2),
        ]
    }

    pub fn fields_mut(&mut self) -> [(&'static str, &mut Tensor); 6] {
        [
            ("w", &mut self.w),
            ("b", &mut self.b),
            ("gate_w1", &mut self.gate_w1),
            ("gate_b1", &mut self.gate_b1),
            ("gate_w2", &mut self.gate_w2),
            ("gate_b2", &mut self.gate_b2),
        ]
    }

    pub fn check(&self) -> Result<()> {
        let (z, g) = (self.hidden(), self.gate_hidden());
        let expect: [(&str, &Tensor, &[usize]); 6] = [
            ("w", &self.w, &[z, STYLE_DIM]),
            ("b", &self.b, &[z]),
            ("gate_w1", &self.gate_w1, &[g, z]),
            ("gate_b1", &self.gate_b1, &[g]),
            ("gate_w2", &self.gate_w2, &[z, g]),
            ("gate_b2", &self.gate_b2, &[z]),
        ];
        for (name, t, shape) in expect {
            if t.shape() != shape {
                return Err(Error::shape(format!("injection {name} ({:?} vs {:?})", t.shape(), shape), shape.iter().product(), t.len()));
            }
            if !t.all_finite() {
                return Err(Error::Config(format!("injection {name} is not finite")));
            }
        }
        Ok(())
    }

    /// Writes one `<field>.apct` per field plus `manifest.json`.
    pub fn save(&self, dir: impl AsRef<std::path::Path>, seed: u64) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, t) in self.fields() {
            t.write(dir.join(format!("{name}.apct")))?;
        }
        let manifest = InjectionManifest { z: self.hidden(), g: self.gate_hidden(), seed };
        let path = dir.join("manifest.json");
        std::fs::write(&path, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: impl AsRef<std::path::Path>) -> Result<(Self, InjectionManifest)> {
        let dir = dir.as_ref();
        let path = dir.join("manifest.json");
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: InjectionManifest = serde_json::from_slice(&bytes)?;
        let mut p = InjectionParams::zeros(manifest.z, manifest.g);
        for (name, t) in p.fields_mut() {
            *t = Tensor::read(dir.join(format!("{name}.apct")))?;
        }
        p.check()?;
        Ok((p, manifest))
    }
}

/// Encoder hidden states `h[t][f]`, stored `[(t * F + f) * Z + z]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenGrid {
    pub t: usize,
    pub f: usize,
    pub z: usize,
    pub values: Vec<f64>,
}

impl HiddenGrid {
    pub fn zeros(t: usize, f: usize, z: usize) -> Self {
        HiddenGrid { t, f, z, values: vec![0.0; t * f * z] }
    }

    pub fn from_vec(t: usize, f: usize, z: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != t * f * z {
            return Err(Error::shape("hidden grid", t * f * z, values.len()));
        }
        Ok(HiddenGrid { t, f, z, values })
    }

    pub fn cells(&self) -> usize {
        self.t * self.f
    }

    pub fn cell(&self, i: usize) -> &[f64] {
        &self.values[i * self.z..(i + 1) * self.z]
    }
}

/// Intermediates kept from [`forward`] for [`backward`].
#[derive(Debug, Clone)]
pub struct InjectionCache {
    input: HiddenGrid,
    style: [f64; STYLE_DIM],
    h_sv: Vec<f64>,
    /// Gate hidden pre-activations, `cells x G`.
    pre1: Vec<f64>,
    /// Gate outputs, `cells x Z`.
    gate: Vec<f64>,
}

impl InjectionCache {
    pub fn gate(&self) -> &[f64] {
        &self.gate
    }

    pub fn h_sv(&self) -> &[f64] {
        &self.h_sv
    }
}

#[derive(Debug, Clone)]
pub struct InjectionGrads {
    pub params: InjectionParams,
    pub input: HiddenGrid,
    pub style: [f64; STYLE_DIM],
}

pub fn forward(params: &InjectionParams, grid: &HiddenGrid, style: &[f64; STYLE_DIM]) -> Result<(HiddenGrid, InjectionCache)> {
    params.check()?;
    let (z, g) = (params.hidden(), params.gate_hidden());
    if grid.z != z {
        return Err(Error::shape("hidden grid Z", z, grid.z));
    }
    if grid.values.len() != grid.t * grid.f * grid.z {
        return Err(Error::shape("hidden grid values", grid.t * grid.f * grid.z, grid.values.len()));
    }

    let w = params.w.data();
    let h_sv: Vec<f64> = (0..z)
        .map(|i| {
            let row = &w[i * STYLE_DIM..(i + 1) * STYLE_DIM];
            params.b.data()[i] + row.iter().zip(style).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect();

    let cells = grid.cells();
    let mut pre1 = vec![0.0; cells * g];
    let mut gate = vec![0.0; cells * z];
    let mut out = HiddenGrid::zeros(grid.t, grid.f, z);
    let (w1, b1) = (params.gate_w1.data(), params.gate_b1.data());
    let (w2, b2) = (params.gate_w2.data(), params.gate_b2.data());
    let mut act = vec![0.0; g];
    for c in 0..cells {
        let h = grid.cell(c);
        let a1 = &mut pre1[c * g..(c + 1) * g];
        for j in 0..g {
            let row = &w1[j * z..(j + 1) * z];
            a1[j] = b1[j] + row.iter().zip(h).map(|(a, b)| a * b).sum::<f64>();
            act[j] = a1[j].max(0.0);
        }
        let r = &mut gate[c * z..(c + 1) * z];
        let o = &mut out.values[c * z..(c + 1) * z];
        for i in 0..z {
            let row = &w2[i * g..(i + 1) * g];
            let a2 = b2[i] + row.iter().zip(&act).map(|(a, b)| a * b).sum::<f64>();
            r[i] = sigmoid(a2);
            o[i] = r[i] * h[i] + (1.0 - r[i]) * h_sv[i];
        }
    }
    let cache = InjectionCache { input: grid.clone(), style: *style, h_sv, pre1, gate };
    Ok((out, cache))
}

/// Gradients of `sum(upstream * out)` with respect to every parameter, the
/// input grid, and the style vector.
pub fn backward(params: &InjectionParams, cache: &InjectionCache, upstream: &[f64]) -> InjectionGrads {
    let (z, g) = (params.hidden(), params.gate_hidden());
    let grid = &cache.input;
    assert_eq!(upstream.len(), grid.values.len(), "upstream gradient shape");
    let mut grads =
        InjectionGrads { params: InjectionParams::zeros(z, g), input: HiddenGrid::zeros(grid.t, grid.f, z), style: [0.0; STYLE_DIM] };
    let (w1, w2) = (params.gate_w1.data(), params.gate_w2.data());
    let mut d_hsv = vec![0.0; z];
    let mut d_a2 = vec![0.0; z];
    let mut d_a1 = vec![0.0; g];
    let mut act = vec![0.0; g];
    {
        let InjectionParams { gate_w1: gw1, gate_b1: gb1, gate_w2: gw2, gate_b2: gb2, .. } = &mut grads.params;
        for c in 0..grid.cells() {
            let h = grid.cell(c);
            let up = &upstream[c * z..(c + 1) * z];
            let r = &cache.gate[c * z..(c + 1) * z];
            let a1 = &cache.pre1[c * g..(c + 1) * g];
            for j in 0..g {
                act[j] = a1[j].max(0.0);
            }
            let dh = &mut grads.input.values[c * z..(c + 1) * z];
            for i in 0..z {
                dh[i] = up[i] * r[i];
                d_hsv[i] += up[i] * (1.0 - r[i]);
                let d_r = up[i] * (h[i] - cache.h_sv[i]);
                d_a2[i] = d_r * r[i] * (1.0 - r[i]);
                gb2.data_mut()[i] += d_a2[i];
                let row = &mut gw2.data_mut()[i * g..(i + 1) * g];
                for j in 0..g {
                    row[j] += d_a2[i] * act[j];
                }
            }
            for j in 0..g {
                d_a1[j] = if a1[j] > 0.0 { (0..z).map(|i| w2[i * g + j] * d_a2[i]).sum() } else { 0.0 };
                gb1.data_mut()[j] += d_a1[j];
                let row = &mut gw1.data_mut()[j * z..(j + 1) * z];
                for i in 0..z {
                    row[i] += d_a1[j] * h[i];
                }
            }
            for i in 0..z {
                dh[i] += (0..g).map(|j| w1[j * z + i] * d_a1[j]).sum::<f64>();
            }
        }
    }
    let w = params.w.data();
    for i in 0..z {
        grads.params.b.data_mut()[i] = d_hsv[i];
        let row = &mut grads.params.w.data_mut()[i * STYLE_DIM..(i + 1) * STYLE_DIM];
        for (k, r) in row.iter_mut().enumerate() {
            *r = d_hsv[i] * cache.style[k];
        }
        for k in 0..STYLE_DIM {
            grads.style[k] += w[i * STYLE_DIM + k] * d_hsv[i];
        }
    }
    grads
}
