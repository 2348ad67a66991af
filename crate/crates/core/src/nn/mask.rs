//! Routing mask from aggregated flow.

use crate::graph::EdgeList;
use crate::linalg::Matrix;

use super::autodiff::sigmoid;

pub const MASK_EPSILON: f64 = 1e-6;

/// Symmetric `N x N` routing mask.
///
/// Per edge, `u = log(phi + eps)` is min-max normalised over the edge set
/// (0.5 when all values coincide) and mapped through `sigmoid(tau * (u - theta))`.
/// Non-edges take the value at normalised flow 0; the diagonal is 1.
pub fn make_mask(phi: &[f64], edges: &EdgeList, tau: f64, theta: f64) -> Matrix {
    assert_eq!(phi.len(), edges.len(), "one flow value per edge");
    let u: Vec<f64> = phi.iter().map(|p| (p + MASK_EPSILON).ln()).collect();
    let lo = u.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    let degenerate = !(range > 1e-12 * hi.abs().max(lo.abs()).max(1.0));
    let n = edges.n_nodes();
    let mut m = Matrix::filled(n, n, sigmoid(tau * (0.0 - theta)));
    for (&(i, j), &x) in edges.edges().iter().zip(&u) {
        let norm = if degenerate { 0.5 } else { (x - lo) / range };
        let v = sigmoid(tau * (norm - theta));
        m[(i, j)] = v;
        m[(j, i)] = v;
    }
    for i in 0..n {
        m[(i, i)] = 1.0;
    }
    m
}
