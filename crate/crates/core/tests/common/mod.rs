#![allow(dead_code)]

use flowroute_core::linalg::Matrix;
use flowroute_core::rng::{Rng, Streams};
use rand::Rng as _;

pub fn rng(seed: u64) -> Rng {
    Streams::new(seed).stream("test")
}

/// Random spanning tree plus extra edges with probability `p`; weights in [0.5, 2).
pub fn random_connected_sc(n: usize, p: f64, rng: &mut Rng) -> Matrix {
    let mut sc = Matrix::zeros(n, n);
    for v in 1..n {
        let u = rng.random_range(0..v);
        let w = rng.random_range(0.5..2.0);
        sc[(u, v)] = w;
        sc[(v, u)] = w;
    }
    for i in 0..n {
        for j in i + 1..n {
            if sc[(i, j)] == 0.0 && rng.random::<f64>() < p {
                let w = rng.random_range(0.5..2.0);
                sc[(i, j)] = w;
                sc[(j, i)] = w;
            }
        }
    }
    sc
}

/// Symmetric, entries in [-1, 1], unit diagonal.
pub fn random_fc(n: usize, rng: &mut Rng) -> Matrix {
    let mut fc = Matrix::identity(n);
    for i in 0..n {
        for j in i + 1..n {
            let v = rng.random_range(-1.0..1.0);
            fc[(i, j)] = v;
            fc[(j, i)] = v;
        }
    }
    fc
}

pub fn random_positive(len: usize, rng: &mut Rng) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(0.2..3.0)).collect()
}

pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
