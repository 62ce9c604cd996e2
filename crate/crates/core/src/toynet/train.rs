use std::io::Write;
use std::path::Path;

use log::{debug, info};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{forward_features, loss_and_grad, MaskCells, ToyNetConfig, ToyNetParams};
use super::synth::SyntheticPair;
use crate::error::{Error, Result};
use crate::loss::{build_mask, LossBreakdown, LossConfig};
use crate::roll::PianoRollTensors;
use crate::style::StyleVector;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    /// Parameter initialization seed.
    pub seed: u64,
    pub model: ToyNetConfig,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { lr: 1e-3, epochs: 300, seed: 0, model: ToyNetConfig::default(), loss: LossConfig::default() }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be >= 0, got {}", self.lr)));
        }
        self.model.validate()?;
        self.loss.validate()
    }
}

/// Loss after `epoch` full-batch updates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    #[serde(rename = "L")]
    pub l: f64,
    #[serde(rename = "L1")]
    pub l1: f64,
    #[serde(rename = "L2")]
    pub l2: f64,
}

pub fn write_trace(trace: &[EpochRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("epoch,L,L1,L2\n");
    for r in trace {
        out.push_str(&format!("{},{},{},{}\n", r.epoch, r.l, r.l1, r.l2));
    }
    std::fs::File::create(path).and_then(|mut f| f.write_all(out.as_bytes())).map_err(|e| Error::io(path, e))
}

/// Adam with bias correction, one moment buffer per parameter tensor.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, params: &ToyNetParams) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: zeros.clone(), v: zeros }
    }

    pub fn step(&mut self, params: &mut ToyNetParams, grads: &ToyNetParams) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let tensors = params.tensors_mut().into_iter().zip(grads.tensors());
        for (((_, p), (_, g)), (m, v)) in tensors.zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            for (((x, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                *x -= self.lr * (*mi / c1) / ((*vi / c2).sqrt() + self.eps);
            }
        }
    }
}

struct Prepared<'a> {
    pair: &'a SyntheticPair,
    style: [f64; crate::style::STYLE_DIM],
    cells: MaskCells,
}

/// Each pair gets its own selection, fixed for the whole run, seeded from
/// `rng_seed + index`.
fn prepare<'a>(pairs: &'a [SyntheticPair], loss: &LossConfig) -> Vec<Prepared<'a>> {
    pairs
        .iter()
        .enumerate()
        .map(|(i, pair)| {
            let cfg = LossConfig { rng_seed: loss.rng_seed.wrapping_add(i as u64), ..*loss };
            Prepared { pair, style: pair.style.to_array(), cells: MaskCells::new(&build_mask(&pair.target, &cfg)) }
        })
        .collect()
}

fn mean_record(epoch: usize, parts: &[LossBreakdown]) -> EpochRecord {
    let n = parts.len() as f64;
    let sum = |f: fn(&LossBreakdown) -> f64| parts.iter().map(f).sum::<f64>() / n;
    EpochRecord { epoch, l: sum(|b| b.l), l1: sum(|b| b.l1), l2: sum(|b| b.l2) }
}

fn evaluate(
    params: &ToyNetParams,
    prepared: &[Prepared],
    beta: f64,
    want_grad: bool,
) -> Result<(Vec<LossBreakdown>, Option<ToyNetParams>)> {
    let results: Vec<Result<(LossBreakdown, Option<ToyNetParams>)>> = prepared
        .par_iter()
        .map(|p| loss_and_grad(params, &p.pair.input_features, &p.style, &p.pair.target, &p.cells, beta, want_grad))
        .collect();
    let mut parts = Vec::with_capacity(results.len());
    let mut total: Option<ToyNetParams> = None;
    // reduce in pair order so results do not depend on thread scheduling
    for r in results {
        let (b, g) = r?;
        parts.push(b);
        if let Some(g) = g {
            match total.as_mut() {
                Some(t) => t.add_assign(&g),
                None => total = Some(g),
            }
        }
    }
    if let Some(t) = total.as_mut() {
        t.scale(1.0 / prepared.len() as f64);
    }
    Ok((parts, total))
}

/// Masked loss of `params` over `pairs`, averaged per pair, using the same
/// selections as [`train`].
pub fn dataset_loss(params: &ToyNetParams, pairs: &[SyntheticPair], loss: &LossConfig) -> Result<EpochRecord> {
    loss.validate()?;
    let prepared = prepare(pairs, loss);
    let (parts, _) = evaluate(params, &prepared, loss.beta, false)?;
    Ok(mean_record(0, &parts))
}

/// Full-batch Adam. The trace has `epochs + 1` rows: row `e` is the loss
/// after `e` updates.
pub fn train(params: &mut ToyNetParams, pairs: &[SyntheticPair], config: &TrainConfig) -> Result<Vec<EpochRecord>> {
    config.validate()?;
    if pairs.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let prepared = prepare(pairs, &config.loss);
    let mut adam = Adam::new(config.lr, params);
    let mut trace = Vec::with_capacity(config.epochs + 1);
    for epoch in 0..=config.epochs {
        let last = epoch == config.epochs;
        let (parts, grads) = evaluate(params, &prepared, config.loss.beta, !last)?;
        let rec = mean_record(epoch, &parts);
        if !rec.l.is_finite() {
            return Err(Error::NonFinite { epoch, detail: format!("L = {}, L1 = {}, L2 = {}", rec.l, rec.l1, rec.l2) });
        }
        if epoch % 25 == 0 || last {
            info!("epoch {epoch}: L = {:.6} (L1 {:.6}, L2 {:.6})", rec.l, rec.l1, rec.l2);
        } else {
            debug!("epoch {epoch}: L = {:.6}", rec.l);
        }
        trace.push(rec);
        if let Some(g) = grads {
            adam.step(params, &g);
        }
    }
    Ok(trace)
}

pub fn forward_full(params: &ToyNetParams, pair: &SyntheticPair) -> Result<(PianoRollTensors, PianoRollTensors)> {
    forward_features(params, &pair.input_features, &pair.style)
}

/// Second-hierarchy prediction for `features` under `style`.
pub fn infer(params: &ToyNetParams, features: &Tensor, style: &StyleVector) -> Result<PianoRollTensors> {
    Ok(forward_features(params, features, style)?.1)
}
