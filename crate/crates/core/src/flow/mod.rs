//! Demand-driven information flow on a capacitated structural graph.
//!
//! Every edge `m = (i, j)` with capacity `c_m` gets a structural response
//! vector `g_m = L^-1 (e_i - e_j)` where `L = B^T C B + delta I`. The
//! aggregated flow over all ordered demand pairs is
//!
//! ```text
//! phi_m = 2 c_m g_m^T L_fc g_m,    L_fc = D_fc - |A_fc|
//! ```
//!
//! All `g_m` come from one N x M block solve against a single Cholesky
//! factor. Gradients are taken with the adjoint method: one more block
//! solve against the same factor, never differentiating the factorisation.

pub mod oracle;

use crate::error::{Error, Result};
use crate::graph::EdgeList;
use crate::linalg::{dot, Matrix};
use crate::spectral::{build_laplacian, RegularizedLaplacian};

pub use oracle::{aggregate_flow_oracle, demand_outer_product_sum};

/// `L_fc = D_fc - |A_fc|`, with the FC diagonal dropped before taking degrees.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandLaplacian {
    lfc: Matrix,
}

impl DemandLaplacian {
    pub fn from_fc(fc: &Matrix) -> Result<Self> {
        if !fc.is_square() {
            return Err(Error::dim(
                "square fc",
                format!("{}x{}", fc.rows(), fc.cols()),
            ));
        }
        let n = fc.rows();
        let mut lfc = Matrix::zeros(n, n);
        for i in 0..n {
            let mut degree = 0.0;
            for j in 0..n {
                if i != j {
                    let w = fc[(i, j)].abs();
                    lfc[(i, j)] = -w;
                    degree += w;
                }
            }
            lfc[(i, i)] = degree;
        }
        Ok(Self { lfc })
    }

    /// Wraps an arbitrary square matrix as the demand operator. Used to
    /// differentiate with respect to individual entries.
    pub fn from_matrix(lfc: Matrix) -> Result<Self> {
        if !lfc.is_square() {
            return Err(Error::dim(
                "square matrix",
                format!("{}x{}", lfc.rows(), lfc.cols()),
            ));
        }
        Ok(Self { lfc })
    }

    pub fn matrix(&self) -> &Matrix {
        &self.lfc
    }

    pub fn n_nodes(&self) -> usize {
        self.lfc.rows()
    }
}

/// Oriented edges, their capacities and the factored regularised Laplacian.
#[derive(Debug, Clone)]
pub struct FlowGraph {
    edges: EdgeList,
    capacities: Vec<f64>,
    laplacian: RegularizedLaplacian,
}

impl FlowGraph {
    pub fn new(edges: EdgeList, capacities: Vec<f64>, delta: f64) -> Result<Self> {
        let laplacian = build_laplacian(&edges, &capacities, delta)?;
        Ok(Self {
            edges,
            capacities,
            laplacian,
        })
    }

    /// Uses the edge weights themselves as capacities.
    pub fn from_weights(edges: EdgeList, delta: f64) -> Result<Self> {
        let caps = edges.weights().to_vec();
        Self::new(edges, caps, delta)
    }

    pub fn edges(&self) -> &EdgeList {
        &self.edges
    }

    pub fn capacities(&self) -> &[f64] {
        &self.capacities
    }

    pub fn laplacian(&self) -> &RegularizedLaplacian {
        &self.laplacian
    }

    pub fn n_nodes(&self) -> usize {
        self.edges.n_nodes()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    /// Node potentials `v` with `L v = e_s - e_t`.
    pub fn solve_potential(&self, s: usize, t: usize) -> Result<Vec<f64>> {
        let n = self.n_nodes();
        if s >= n || t >= n {
            return Err(Error::InvalidInput(format!(
                "demand ({s}, {t}) out of range for {n} nodes"
            )));
        }
        if s == t {
            return Err(Error::DegenerateDemand(s));
        }
        let mut rhs = vec![0.0; n];
        rhs[s] = 1.0;
        rhs[t] = -1.0;
        self.laplacian.solve_vec(&rhs)
    }

    /// Per-edge intensity `c_m (v_i - v_j)^2` for a unit demand from `s` to `t`.
    pub fn pair_intensity(&self, s: usize, t: usize) -> Result<Vec<f64>> {
        let v = self.solve_potential(s, t)?;
        Ok(self
            .edges
            .edges()
            .iter()
            .zip(&self.capacities)
            .map(|(&(i, j), &c)| {
                let d = v[i] - v[j];
                c * d * d
            })
            .collect())
    }

    /// `G = L^-1 B^T`, one column `g_m` per edge.
    pub fn response_vectors(&self) -> Result<Matrix> {
        self.laplacian
            .solve(&self.edges.incidence().transpose_columns())
    }

    /// Closed-form aggregated flow for every edge.
    pub fn aggregate_flow(&self, demand: &DemandLaplacian) -> Result<FlowMap> {
        Ok(self.forward(demand)?.0)
    }

    fn forward(&self, demand: &DemandLaplacian) -> Result<(FlowMap, Matrix)> {
        if demand.n_nodes() != self.n_nodes() {
            return Err(Error::dim(
                format!("{} node demand", self.n_nodes()),
                demand.n_nodes(),
            ));
        }
        let g = self.response_vectors()?;
        let fg = demand.matrix().matmul(&g)?;
        let gt = g.transpose();
        let fgt = fg.transpose();
        let phi = self
            .capacities
            .iter()
            .enumerate()
            .map(|(m, &c)| 2.0 * c * dot(gt.row(m), fgt.row(m)))
            .collect();
        Ok((
            FlowMap {
                phi,
                capacities: self.capacities.clone(),
                per_pair: None,
            },
            g,
        ))
    }
}

/// Unit demand intensity on every edge for one ordered pair `(s, t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairIntensity {
    pub source: usize,
    pub target: usize,
    pub intensity: Vec<f64>,
}

/// Aggregated per-edge flow `phi`, aligned with the edge list it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowMap {
    pub phi: Vec<f64>,
    pub capacities: Vec<f64>,
    pub per_pair: Option<Vec<PairIntensity>>,
}

impl FlowMap {
    pub fn len(&self) -> usize {
        self.phi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi.is_empty()
    }

    /// Largest `|a - b| / max(|a|, |b|, floor)` over edges.
    pub fn max_relative_deviation(&self, other: &FlowMap, floor: f64) -> f64 {
        max_relative_deviation(&self.phi, &other.phi, floor)
    }
}

pub fn max_relative_deviation(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len(), "length mismatch");
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

pub fn solve_potential(graph: &FlowGraph, s: usize, t: usize) -> Result<Vec<f64>> {
    graph.solve_potential(s, t)
}

pub fn pair_intensity(graph: &FlowGraph, s: usize, t: usize) -> Result<Vec<f64>> {
    graph.pair_intensity(s, t)
}

pub fn aggregate_flow_closed_form(graph: &FlowGraph, demand: &DemandLaplacian) -> Result<FlowMap> {
    graph.aggregate_flow(demand)
}

/// Gradients of `sum_m upstream_m * phi_m`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowGradients {
    pub capacities: Vec<f64>,
    pub demand: Matrix,
}

/// Forward/backward context for one subject's flow computation.
///
/// The forward pass caches the response vectors `G`; the adjoint backward
/// pass needs them and refuses to run without them.
#[derive(Debug, Clone)]
pub struct FlowEvaluator {
    graph: FlowGraph,
    demand: DemandLaplacian,
    cache: Option<ForwardCache>,
}

#[derive(Debug, Clone)]
struct ForwardCache {
    g: Matrix,
    flow: FlowMap,
}

impl FlowEvaluator {
    pub fn new(graph: FlowGraph, demand: DemandLaplacian) -> Result<Self> {
        if graph.n_nodes() != demand.n_nodes() {
            return Err(Error::dim(graph.n_nodes(), demand.n_nodes()));
        }
        Ok(Self {
            graph,
            demand,
            cache: None,
        })
    }

    pub fn graph(&self) -> &FlowGraph {
        &self.graph
    }

    pub fn demand(&self) -> &DemandLaplacian {
        &self.demand
    }

    pub fn forward(&mut self) -> Result<&FlowMap> {
        let (flow, g) = self.graph.forward(&self.demand)?;
        Ok(&self.cache.insert(ForwardCache { g, flow }).flow)
    }

    pub fn flow(&self) -> Option<&FlowMap> {
        self.cache.as_ref().map(|c| &c.flow)
    }

    /// Adjoint gradients with respect to the capacities and to each entry of `L_fc`.
    pub fn gradient_adjoint(&self, upstream: &[f64]) -> Result<FlowGradients> {
        let cache = self.cache.as_ref().ok_or_else(|| {
            Error::Usage("flow gradient requested before the forward pass".into())
        })?;
        flow_gradient_adjoint(&self.graph, &self.demand, &cache.g, upstream)
    }
}

/// Adjoint backward pass given cached response vectors `G = L^-1 B^T`.
///
/// With `w_m = u_m c_m`, `F` the demand operator and `F_s = F + F^T`:
///
/// ```text
/// d/dc_k   = 2 u_k g_k^T F g_k - 2 b_k^T (H diag(w) G^T) b_k,   H = L^-1 F_s G
/// d/dF_ab  = 2 (G diag(w) G^T)_ab
/// ```
pub fn flow_gradient_adjoint(
    graph: &FlowGraph,
    demand: &DemandLaplacian,
    g: &Matrix,
    upstream: &[f64],
) -> Result<FlowGradients> {
    let (n, m) = (graph.n_nodes(), graph.n_edges());
    if upstream.len() != m {
        return Err(Error::dim(format!("{m} upstream values"), upstream.len()));
    }
    if g.shape() != (n, m) {
        return Err(Error::dim(
            format!("{n}x{m} response block"),
            format!("{}x{}", g.rows(), g.cols()),
        ));
    }
    if upstream.iter().all(|&u| u == 0.0) {
        return Ok(FlowGradients {
            capacities: vec![0.0; m],
            demand: Matrix::zeros(n, n),
        });
    }
    let f = demand.matrix();
    let f_sym = f.zip_map(&f.transpose(), |a, b| a + b)?;
    let fg = f.matmul(g)?;
    let h = graph.laplacian().solve(&f_sym.matmul(g)?)?;

    let weights: Vec<f64> = upstream
        .iter()
        .zip(graph.capacities())
        .map(|(u, c)| u * c)
        .collect();
    let mut gw = g.clone();
    for i in 0..n {
        for (x, w) in gw.row_mut(i).iter_mut().zip(&weights) {
            *x *= w;
        }
    }
    // S = H diag(w) G^T and P = G diag(w) G^T
    let s = h.matmul_t(&gw)?;
    let p = g.matmul_t(&gw)?;

    let gt = g.transpose();
    let fgt = fg.transpose();
    let capacities = graph
        .edges()
        .edges()
        .iter()
        .enumerate()
        .map(|(k, &(i, j))| {
            let direct = 2.0 * upstream[k] * dot(gt.row(k), fgt.row(k));
            let indirect = s[(i, i)] - s[(i, j)] - s[(j, i)] + s[(j, j)];
            direct - 2.0 * indirect
        })
        .collect();
    Ok(FlowGradients {
        capacities,
        demand: p.scale(2.0),
    })
}
