//! Trains the toy network on a small synthetic set and reports how well it
//! memorizes it.
//!
//! cargo run --release -p apc-core --example overfit -- [n_pairs] [epochs] [lr]

use std::time::Instant;

use apc_core::evalkit::f1_scores;
use apc_core::postproc::{decode_and_clean, PostprocConfig};
use apc_core::roll::{notes_to_tensors, DEFAULT_SOFT_ONSET_WIDTH};
use apc_core::toynet::{calm_and_intense_styles, gen_synthetic_dataset, infer, train, ToyNetParams, TrainConfig};
use apc_core::FrameGrid;

fn main() -> apc_core::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let n_pairs = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(8);
    let epochs = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(300);
    let lr = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(1e-3);
    let pairs = gen_synthetic_dataset(n_pairs, 0)?;
    let config = TrainConfig { lr, epochs, ..TrainConfig::default() };
    let mut params = ToyNetParams::init(config.model, config.seed)?;
    let start = Instant::now();
    let trace = train(&mut params, &pairs, &config)?;
    let (first, last) = (trace[0].l, trace[trace.len() - 1].l);
    println!("trained in {:.1?}: L {first:.5} -> {last:.5} (ratio {:.4})", start.elapsed(), last / first);

    let grid = FrameGrid::default();
    let post = PostprocConfig::default();
    let mut total = 0.0;
    for (i, p) in pairs.iter().enumerate() {
        let pred = infer(&params, &p.input_features, &p.style)?;
        let notes = decode_and_clean(&pred, &post, &grid);
        let decoded = notes_to_tensors(&notes, 0, &grid, DEFAULT_SOFT_ONSET_WIDTH);
        let f1 = f1_scores(&decoded, &p.target)?;
        println!(
            "pair {i}: {} notes vs {} target, F1 {:.3} {:.3} {:.3} avg {:.3}",
            notes.len(),
            p.cover.len(),
            f1.onset_f1,
            f1.frame_f1,
            f1.velocity_f1,
            f1.average
        );
        total += f1.average;
    }
    println!("mean F1 {:.4}", total / pairs.len() as f64);

    let (calm, intense) = calm_and_intense_styles(&pairs)?;
    for p in &pairs {
        let c = decode_and_clean(&infer(&params, &p.input_features, &calm)?, &post, &grid).len();
        let n = decode_and_clean(&infer(&params, &p.input_features, &intense)?, &post, &grid).len();
        println!("steering: calm {c} intense {n}");
    }
    Ok(())
}
