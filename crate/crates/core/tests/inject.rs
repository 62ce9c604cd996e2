#![allow(clippy::needless_range_loop)]

mod common;

use apc_core::inject::{forward, HiddenGrid, InjectionParams};
use common::{fd_max_error, inject_cell, random_grid, random_injection, random_style, rng};

#[test]
fn hand_case_z2() {
    // values worked out by hand from the projection, gate and blend formulas
    let mut p = InjectionParams::zeros(2, 2);
    p.w.data_mut()[0] = 0.5; // W[0][0]
    p.w.data_mut()[24 + 3] = -1.0; // W[1][3]
    p.b.data_mut().copy_from_slice(&[0.1, 0.2]);
    p.gate_w1.data_mut().copy_from_slice(&[1.0, -1.0, 0.5, 0.5]);
    p.gate_b1.data_mut().copy_from_slice(&[0.0, -1.0]);
    p.gate_w2.data_mut().copy_from_slice(&[2.0, 0.0, -1.0, 3.0]);
    p.gate_b2.data_mut().copy_from_slice(&[0.0, 0.5]);
    let mut style = [0.0; 24];
    style[0] = 0.25;
    style[3] = 0.5;
    let grid = HiddenGrid::from_vec(1, 1, 2, vec![0.8, -0.4]).unwrap();
    let (out, _) = forward(&p, &grid, &style).unwrap();
    // h_sv = (0.1 + 0.125, 0.2 - 0.5) = (0.225, -0.3)
    // hidden = relu(0.8 + 0.4, 0.4 - 0.2 - 1.0) = (1.2, 0)
    // r = (sigmoid(2.4), sigmoid(-1.2 + 0.5))
    let r0 = 1.0 / (1.0 + (-2.4f64).exp());
    let r1 = 1.0 / (1.0 + (0.7f64).exp());
    let expect = [r0 * 0.8 + (1.0 - r0) * 0.225, r1 * -0.4 + (1.0 - r1) * -0.3];
    assert!((out.values[0] - expect[0]).abs() < 1e-12);
    assert!((out.values[1] - expect[1]).abs() < 1e-12);
    // frozen from an independent evaluation
    assert!((out.values[0] - 0.7521756995159947).abs() < 1e-12, "{}", out.values[0]);
    assert!((out.values[1] - -0.3331812227831834).abs() < 1e-12, "{}", out.values[1]);
}

#[test]
fn forward_matches_naive_cells() {
    for seed in 0..20 {
        let mut r = rng(seed);
        let p = random_injection(&mut r, 4, 3, 1.0);
        let grid = random_grid(&mut r, 3, 2, 4);
        let style = random_style(&mut r);
        let (out, _) = forward(&p, &grid, &style).unwrap();
        for c in 0..grid.cells() {
            let want = inject_cell(&p, grid.cell(c), &style);
            for (a, b) in out.cell(c).iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn gradients_match_finite_differences() {
    for seed in 0..100 {
        let e = fd_max_error(seed);
        assert!(e < 1e-4, "seed {seed}: relative error {e}");
    }
}

#[test]
fn output_is_convex_combination() {
    let mut r = rng(7);
    let p = InjectionParams::init(8, 8, &mut r);
    let grid = random_grid(&mut r, 25, 5, 8);
    let style = random_style(&mut r);
    let (out, cache) = forward(&p, &grid, &style).unwrap();
    let hsv = cache.h_sv();
    for c in 0..grid.cells() {
        for i in 0..8 {
            let (h, s, o) = (grid.cell(c)[i], hsv[i], out.cell(c)[i]);
            assert!(h.min(s) <= o && o <= h.max(s));
        }
    }
    assert!(cache.gate().iter().all(|&r| r > 0.0 && r < 1.0));
}
