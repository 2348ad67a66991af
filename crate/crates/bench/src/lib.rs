//! Shared fixtures for the benchmarks.

use flowroute_core::rng::Streams;
use flowroute_core::synth::{random_connected_sc, random_fc};
use flowroute_core::{ConnectomePair, Matrix};

/// Random connected SC with about `degree` neighbours per node, plus a random FC.
pub fn instance(n: usize, degree: f64, seed: u64) -> (Matrix, Matrix) {
    let mut rng = Streams::new(seed).stream("bench");
    let p = (degree / n as f64).min(1.0);
    let sc = random_connected_sc(n, p, &mut rng);
    let fc = random_fc(n, &mut rng);
    (sc, fc)
}

/// Labelled pair whose features are the FC rows.
pub fn subject(n: usize, seed: u64) -> ConnectomePair {
    let (sc, fc) = instance(n, 6.0, seed);
    ConnectomePair::new(sc, fc.clone(), Some(fc), Some((seed % 2) as usize))
        .expect("valid random pair")
}
