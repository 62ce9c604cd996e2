use serde::Serialize;

use super::ChromaSequence;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DtwResult {
    pub path: Vec<(usize, usize)>,
    pub cost: f64,
}

/// `1 - cos(a, b)`; two silent frames are at distance 0, a silent frame
/// against a non-silent one at distance 1. Identical frames are at exactly 0.
pub fn cosine_distance(a: &[f64; 12], b: &[f64; 12]) -> f64 {
    if a == b {
        return 0.0;
    }
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    match (na == 0.0, nb == 0.0) {
        (true, true) => 0.0,
        (true, false) | (false, true) => 1.0,
        _ => {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            (1.0 - dot / (na * nb)).max(0.0)
        }
    }
}

/// Classic DTW with steps (1,1), (1,0), (0,1), from (0,0) to (N-1, M-1).
/// Backtracking prefers the diagonal on ties.
pub fn dtw_align(a: &ChromaSequence, b: &ChromaSequence) -> Result<DtwResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Config("dtw needs non-empty sequences".into()));
    }
    let (n, m) = (a.len(), b.len());
    let mut acc = vec![f64::INFINITY; n * m];
    for i in 0..n {
        for j in 0..m {
            let c = cosine_distance(&a.frames[i], &b.frames[j]);
            let best = if i == 0 && j == 0 {
                0.0
            } else {
                let diag = if i > 0 && j > 0 { acc[(i - 1) * m + j - 1] } else { f64::INFINITY };
                let up = if i > 0 { acc[(i - 1) * m + j] } else { f64::INFINITY };
                let left = if j > 0 { acc[i * m + j - 1] } else { f64::INFINITY };
                diag.min(up).min(left)
            };
            acc[i * m + j] = c + best;
        }
    }

    let mut path = vec![(n - 1, m - 1)];
    let (mut i, mut j) = (n - 1, m - 1);
    while i > 0 || j > 0 {
        (i, j) = if i == 0 {
            (0, j - 1)
        } else if j == 0 {
            (i - 1, 0)
        } else {
            let diag = acc[(i - 1) * m + j - 1];
            let up = acc[(i - 1) * m + j];
            let left = acc[i * m + j - 1];
            if diag <= up && diag <= left {
                (i - 1, j - 1)
            } else if up <= left {
                (i - 1, j)
            } else {
                (i, j - 1)
            }
        };
        path.push((i, j));
    }
    path.reverse();
    Ok(DtwResult { path, cost: acc[n * m - 1] })
}
