//! Q_max: length of the best local alignment path through a binary
//! cross-recurrence plot of delay-embedded chroma, after transposing the
//! second sequence to the key of the first.

use serde::{Deserialize, Serialize, Serializer};

use super::chroma::rotate;
use super::ChromaSequence;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QmaxParams {
    /// Fraction of nearest neighbours counted as recurrences.
    pub kappa: f64,
    /// Penalty for breaking off right after a recurrence.
    pub gamma_o: f64,
    /// Penalty for extending a disruption.
    pub gamma_e: f64,
    pub m_embed: usize,
    pub tau_lag: usize,
}

impl Default for QmaxParams {
    fn default() -> Self {
        QmaxParams { kappa: 0.095, gamma_o: 5.0, gamma_e: 0.5, m_embed: 9, tau_lag: 1 }
    }
}

fn finite_or_null<S: Serializer>(x: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if x.is_finite() {
        s.serialize_f64(*x)
    } else {
        s.serialize_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QmaxResult {
    pub qmax: f64,
    /// `sqrt(n_b) / qmax`; infinite (JSON `null`) when `qmax` is 0.
    #[serde(serialize_with = "finite_or_null")]
    pub distance: f64,
    /// Pitch-class shift applied to the second sequence.
    pub oti: usize,
    pub n_a: usize,
    pub n_b: usize,
}

impl QmaxResult {
    pub fn is_infinite(&self) -> bool {
        !self.distance.is_finite()
    }
}

/// Optimal transposition index: the rotation of `b`'s global chroma that best
/// matches `a`'s (first maximum).
pub fn oti(a: &ChromaSequence, b: &ChromaSequence) -> usize {
    let (ga, gb) = (a.mean(), b.mean());
    let score = |s: usize| (0..12).map(|k| ga[k] * gb[(k + s) % 12]).sum::<f64>();
    let mut best = 0;
    let mut best_score = score(0);
    for s in 1..12 {
        let sc = score(s);
        if sc > best_score {
            best = s;
            best_score = sc;
        }
    }
    best
}

/// Rotation putting `v` in its lexicographically greatest form, so that a
/// transposed input reaches bit-identical arrays.
fn canonical_shift(v: &[f64; 12]) -> usize {
    let mut best = 0;
    let mut best_v = *v;
    for s in 1..12 {
        let r = rotate(v, s);
        if r.iter().zip(&best_v).find(|(x, y)| x != y).is_some_and(|(x, y)| x > y) {
            best = s;
            best_v = r;
        }
    }
    best
}

fn embed(seq: &ChromaSequence, m: usize, tau: usize) -> Vec<Vec<f64>> {
    let n = seq.len() - (m - 1) * tau;
    (0..n).map(|i| (0..m).flat_map(|j| seq.frames[i + j * tau]).collect()).collect()
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `k`-th smallest value (1-based).
fn kth_smallest(values: &mut [f64], k: usize) -> f64 {
    let idx = k - 1;
    *values.select_nth_unstable_by(idx, f64::total_cmp).1
}

/// Mutual nearest-neighbour cross-recurrence plot, row-major `na x nb`.
pub(crate) fn cross_recurrence(xa: &[Vec<f64>], xb: &[Vec<f64>], kappa: f64) -> Vec<bool> {
    let (na, nb) = (xa.len(), xb.len());
    let dist: Vec<f64> = xa.iter().flat_map(|x| xb.iter().map(move |y| squared_distance(x, y))).collect();
    let k_row = ((kappa * nb as f64).round() as usize).clamp(1, nb);
    let k_col = ((kappa * na as f64).round() as usize).clamp(1, na);
    let row_eps: Vec<f64> = (0..na).map(|i| kth_smallest(&mut dist[i * nb..(i + 1) * nb].to_vec(), k_row)).collect();
    let col_eps: Vec<f64> = (0..nb)
        .map(|j| {
            let mut col: Vec<f64> = (0..na).map(|i| dist[i * nb + j]).collect();
            kth_smallest(&mut col, k_col)
        })
        .collect();
    (0..na * nb)
        .map(|c| {
            let (i, j) = (c / nb, c % nb);
            dist[c] <= row_eps[i] && dist[c] <= col_eps[j]
        })
        .collect()
}

/// Longest weighted path through the recurrence plot.
pub(crate) fn qmax_score(crp: &[bool], na: usize, nb: usize, gamma_o: f64, gamma_e: f64) -> f64 {
    // two rows/columns of zero padding
    let w = nb + 2;
    let mut q = vec![0.0f64; (na + 2) * w];
    let rec = |i: usize, j: usize| i >= 2 && j >= 2 && crp[(i - 2) * nb + (j - 2)];
    let mut best = 0.0f64;
    for i in 2..na + 2 {
        for j in 2..nb + 2 {
            let preds = [(i - 1, j - 1), (i - 2, j - 1), (i - 1, j - 2)];
            let v = if rec(i, j) {
                preds.iter().map(|&(a, b)| q[a * w + b]).fold(f64::MIN, f64::max) + 1.0
            } else {
                preds.iter().map(|&(a, b)| q[a * w + b] - if rec(a, b) { gamma_o } else { gamma_e }).fold(0.0, f64::max)
            };
            q[i * w + j] = v;
            best = best.max(v);
        }
    }
    best
}

pub fn qmax(a: &ChromaSequence, b: &ChromaSequence, params: &QmaxParams) -> Result<QmaxResult> {
    let span = params.m_embed * params.tau_lag;
    if params.m_embed == 0 || params.tau_lag == 0 {
        return Err(Error::Config("m_embed and tau_lag must be >= 1".into()));
    }
    if a.len() <= span || b.len() <= span {
        return Err(Error::Config(format!(
            "sequences of {} and {} frames must be longer than m_embed * tau_lag = {span}",
            a.len(),
            b.len()
        )));
    }
    let shift = oti(a, b);
    let b_t = b.rotated(shift);
    let canon = canonical_shift(&a.mean());
    let (a_c, b_c) = (a.rotated(canon), b_t.rotated(canon));

    let xa = embed(&a_c, params.m_embed, params.tau_lag);
    let xb = embed(&b_c, params.m_embed, params.tau_lag);
    let crp = cross_recurrence(&xa, &xb, params.kappa);
    let score = qmax_score(&crp, xa.len(), xb.len(), params.gamma_o, params.gamma_e);
    let distance = if score > 0.0 { (b.len() as f64).sqrt() / score } else { f64::INFINITY };
    Ok(QmaxResult { qmax: score, distance, oti: shift, n_a: a.len(), n_b: b.len() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_run_scores_its_length() {
        let n = 6;
        let crp: Vec<bool> = (0..n * n).map(|c| c / n == c % n).collect();
        assert_eq!(qmax_score(&crp, n, n, 5.0, 0.5), 6.0);
    }

    #[test]
    fn gap_penalties() {
        // diagonal of 4 matches, one miss, then 3 matches
        let n = 8;
        let crp: Vec<bool> = (0..n * n).map(|c| c / n == c % n && c / n != 4).collect();
        // after the miss: 4 - gamma_o = -1 -> 0, so the tail restarts
        assert_eq!(qmax_score(&crp, n, n, 5.0, 0.5), 4.0);
        // with a small onset penalty the run carries over: 4 - 1 + 3
        assert_eq!(qmax_score(&crp, n, n, 1.0, 0.5), 6.0);
    }

    #[test]
    fn skip_steps() {
        // matches along (i, 2i): reachable with (1, 2) steps
        let (na, nb) = (5, 10);
        let crp: Vec<bool> = (0..na * nb).map(|c| c % nb == 2 * (c / nb)).collect();
        assert_eq!(qmax_score(&crp, na, nb, 5.0, 0.5), 5.0);
    }

    #[test]
    fn oti_undoes_rotation() {
        let frames: Vec<[f64; 12]> = (0..20).map(|i| std::array::from_fn(|k| ((i * 7 + k * k * 3) % 11) as f64 / 10.0)).collect();
        let a = ChromaSequence { frames, frame_hop: 0.1 };
        // b[k] = a[k - 5]  ->  rotating b by 5 restores a
        let b = a.rotated(7);
        let s = oti(&a, &b);
        assert_eq!(b.rotated(s), a);
    }

    #[test]
    fn too_short_is_an_error() {
        let a = ChromaSequence { frames: vec![[1.0; 12]; 9], frame_hop: 0.1 };
        assert!(qmax(&a, &a, &QmaxParams::default()).is_err());
    }

    #[test]
    fn infinite_distance_serializes_as_null() {
        let r = QmaxResult { qmax: 0.0, distance: f64::INFINITY, oti: 0, n_a: 10, n_b: 10 };
        let j = serde_json::to_value(r).unwrap();
        assert!(j["distance"].is_null());
        assert!(r.is_infinite());
    }
}
