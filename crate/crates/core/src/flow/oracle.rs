//! Brute-force reference implementations used to check the closed form.
//!
//! These deliberately follow the pre-theorem definitions: one linear solve
//! per ordered demand pair, explicit outer-product sums, and central finite
//! differences that rebuild and refactor the graph for every perturbation.

use crate::error::Result;
use crate::linalg::Matrix;

use super::{DemandLaplacian, FlowGraph, FlowMap, PairIntensity};

/// `phi_m = sum_{s != t} |fc_st| I_m^(st)` over all ordered pairs.
pub fn aggregate_flow_oracle(
    graph: &FlowGraph,
    fc: &Matrix,
    keep_per_pair: bool,
) -> Result<FlowMap> {
    let n = graph.n_nodes();
    if fc.shape() != (n, n) {
        return Err(crate::error::Error::dim(
            format!("{n}x{n} fc"),
            format!("{}x{}", fc.rows(), fc.cols()),
        ));
    }
    let mut phi = vec![0.0; graph.n_edges()];
    let mut per_pair = keep_per_pair.then(Vec::new);
    for s in 0..n {
        for t in 0..n {
            if s == t {
                continue;
            }
            let w = fc[(s, t)].abs();
            if w == 0.0 && per_pair.is_none() {
                continue;
            }
            let intensity = graph.pair_intensity(s, t)?;
            for (p, i) in phi.iter_mut().zip(&intensity) {
                *p += w * i;
            }
            if let Some(store) = per_pair.as_mut() {
                store.push(PairIntensity {
                    source: s,
                    target: t,
                    intensity,
                });
            }
        }
    }
    Ok(FlowMap {
        phi,
        capacities: graph.capacities().to_vec(),
        per_pair,
    })
}

/// `sum_{s,t} |fc_st| (e_s - e_t)(e_s - e_t)^T`, accumulated term by term.
pub fn demand_outer_product_sum(fc: &Matrix) -> Matrix {
    let n = fc.rows();
    let mut q = Matrix::zeros(n, n);
    for s in 0..n {
        for t in 0..n {
            if s == t {
                continue;
            }
            let w = fc[(s, t)].abs();
            q[(s, s)] += w;
            q[(t, t)] += w;
            q[(s, t)] -= w;
            q[(t, s)] -= w;
        }
    }
    q
}

/// Central differences of `sum_m u_m phi_m` with respect to each capacity.
pub fn finite_difference_capacity_grad(
    graph: &FlowGraph,
    demand: &DemandLaplacian,
    upstream: &[f64],
    step: f64,
) -> Result<Vec<f64>> {
    let delta = graph.laplacian().delta();
    let objective = |caps: Vec<f64>| -> Result<f64> {
        let g = FlowGraph::new(graph.edges().clone(), caps, delta)?;
        let phi = g.aggregate_flow(demand)?.phi;
        Ok(phi.iter().zip(upstream).map(|(p, u)| p * u).sum())
    };
    (0..graph.n_edges())
        .map(|k| {
            let mut plus = graph.capacities().to_vec();
            let mut minus = plus.clone();
            let h = step * plus[k].abs().max(1.0);
            plus[k] += h;
            minus[k] -= h;
            Ok((objective(plus)? - objective(minus)?) / (2.0 * h))
        })
        .collect()
}

/// Central differences of `sum_m u_m phi_m` with respect to each entry of `L_fc`.
pub fn finite_difference_demand_grad(
    graph: &FlowGraph,
    demand: &DemandLaplacian,
    upstream: &[f64],
    step: f64,
) -> Result<Matrix> {
    let n = graph.n_nodes();
    let objective = |f: Matrix| -> Result<f64> {
        let phi = graph.aggregate_flow(&DemandLaplacian::from_matrix(f)?)?.phi;
        Ok(phi.iter().zip(upstream).map(|(p, u)| p * u).sum())
    };
    let mut out = Matrix::zeros(n, n);
    for a in 0..n {
        for b in 0..n {
            let mut plus = demand.matrix().clone();
            let mut minus = plus.clone();
            plus[(a, b)] += step;
            minus[(a, b)] -= step;
            out[(a, b)] = (objective(plus)? - objective(minus)?) / (2.0 * step);
        }
    }
    Ok(out)
}
