//! Paired structural/functional brain graphs and the oriented edge list.
//!
//! Edges are oriented canonically as `(i, j)` with `i < j` and kept in
//! lexicographic order, so every downstream edge vector has a stable layout.

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Symmetry tolerance applied to SC and FC inputs.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// One subject: structural and functional connectivity over the same nodes.
#[derive(Debug, Clone)]
pub struct ConnectomePair {
    sc: Matrix,
    fc: Matrix,
    features: Option<Matrix>,
    label: Option<usize>,
}

impl ConnectomePair {
    pub fn new(
        sc: Matrix,
        fc: Matrix,
        features: Option<Matrix>,
        label: Option<usize>,
    ) -> Result<Self> {
        validate_sc(&sc)?;
        let n = sc.rows();
        if fc.shape() != (n, n) {
            return Err(Error::dim(
                format!("fc {n}x{n}"),
                format!("{}x{}", fc.rows(), fc.cols()),
            ));
        }
        if !fc.is_finite() {
            return Err(Error::InvalidInput("fc has non-finite entries".into()));
        }
        let asym = fc.asymmetry();
        if asym > SYMMETRY_TOL {
            return Err(Error::InvalidInput(format!(
                "fc is not symmetric (max deviation {asym:e})"
            )));
        }
        if let Some(x) = &features {
            if x.rows() != n {
                return Err(Error::dim(format!("{n} feature rows"), x.rows()));
            }
            if !x.is_finite() {
                return Err(Error::InvalidInput(
                    "features have non-finite entries".into(),
                ));
            }
        }
        Ok(Self {
            sc,
            fc,
            features,
            label,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.sc.rows()
    }

    pub fn sc(&self) -> &Matrix {
        &self.sc
    }

    pub fn fc(&self) -> &Matrix {
        &self.fc
    }

    pub fn features(&self) -> Option<&Matrix> {
        self.features.as_ref()
    }

    pub fn label(&self) -> Option<usize> {
        self.label
    }

    pub fn set_label(&mut self, label: Option<usize>) {
        self.label = label;
    }

    /// Node features, or the one-hot node-index default when none were supplied.
    pub fn features_or_default(&self) -> Matrix {
        match &self.features {
            Some(x) => x.clone(),
            None => Matrix::identity(self.n_nodes()),
        }
    }

    /// Relabel nodes so that new node `k` is old node `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.n_nodes();
        check_permutation(perm, n)?;
        let sc = Matrix::from_fn(n, n, |i, j| self.sc[(perm[i], perm[j])]);
        let fc = Matrix::from_fn(n, n, |i, j| self.fc[(perm[i], perm[j])]);
        let features = self
            .features
            .as_ref()
            .map(|x| Matrix::from_fn(n, x.cols(), |i, j| x[(perm[i], j)]));
        Self::new(sc, fc, features, self.label)
    }

    /// Copy with SC divided by its largest entry.
    pub fn max_normalized(&self) -> Self {
        let max = self.sc.as_slice().iter().fold(0.0f64, |m, &x| m.max(x));
        let mut out = self.clone();
        if max > 0.0 {
            out.sc = self.sc.scale(1.0 / max);
        }
        out
    }
}

fn check_permutation(perm: &[usize], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    if perm.len() != n {
        return Err(Error::dim(n, perm.len()));
    }
    for &p in perm {
        if p >= n || std::mem::replace(&mut seen[p], true) {
            return Err(Error::InvalidInput("not a permutation".into()));
        }
    }
    Ok(())
}

/// Checks the SC contract: square, at least two nodes, symmetric, nonnegative, zero diagonal.
pub fn validate_sc(sc: &Matrix) -> Result<()> {
    if !sc.is_square() {
        return Err(Error::dim(
            "square sc",
            format!("{}x{}", sc.rows(), sc.cols()),
        ));
    }
    let n = sc.rows();
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 nodes, got {n}"
        )));
    }
    if !sc.is_finite() {
        return Err(Error::InvalidInput("sc has non-finite entries".into()));
    }
    let asym = sc.asymmetry();
    if asym > SYMMETRY_TOL {
        return Err(Error::InvalidInput(format!(
            "sc is not symmetric (max deviation {asym:e})"
        )));
    }
    for i in 0..n {
        if sc[(i, i)] != 0.0 {
            return Err(Error::InvalidInput(format!(
                "sc diagonal entry {i} is nonzero"
            )));
        }
        for j in 0..n {
            if sc[(i, j)] < 0.0 {
                return Err(Error::InvalidInput(format!("sc[{i}][{j}] is negative")));
            }
        }
    }
    Ok(())
}

/// Canonically oriented edges `(i, j)`, `i < j`, in lexicographic order.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeList {
    n_nodes: usize,
    edges: Vec<(usize, usize)>,
    weights: Vec<f64>,
}

impl EdgeList {
    /// Builds an edge list directly. Pairs are reoriented to `i < j` and sorted.
    pub fn from_pairs(n_nodes: usize, pairs: &[(usize, usize)], weights: &[f64]) -> Result<Self> {
        if pairs.len() != weights.len() {
            return Err(Error::dim(pairs.len(), weights.len()));
        }
        let mut items: Vec<((usize, usize), f64)> = Vec::with_capacity(pairs.len());
        for (&(a, b), &w) in pairs.iter().zip(weights) {
            if a == b || a >= n_nodes || b >= n_nodes {
                return Err(Error::InvalidInput(format!("invalid edge ({a}, {b})")));
            }
            if !(w > 0.0) {
                return Err(Error::Domain(format!(
                    "edge ({a}, {b}) has nonpositive weight {w}"
                )));
            }
            items.push(((a.min(b), a.max(b)), w));
        }
        items.sort_by(|x, y| x.0.cmp(&y.0));
        if items.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::InvalidInput("duplicate edge".into()));
        }
        if items.is_empty() {
            return Err(Error::EmptyGraph { threshold: 0.0 });
        }
        Ok(Self {
            n_nodes,
            edges: items.iter().map(|x| x.0).collect(),
            weights: items.iter().map(|x| x.1).collect(),
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn incidence(&self) -> Incidence<'_> {
        Incidence { edges: self }
    }

    /// Unweighted degree of each node.
    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n_nodes];
        for &(i, j) in &self.edges {
            deg[i] += 1;
            deg[j] += 1;
        }
        deg
    }

    /// Number of connected components (isolated nodes count as components).
    pub fn n_components(&self) -> usize {
        let mut parent: Vec<usize> = (0..self.n_nodes).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        let mut components = self.n_nodes;
        for &(i, j) in &self.edges {
            let (a, b) = (find(&mut parent, i), find(&mut parent, j));
            if a != b {
                parent[a] = b;
                components -= 1;
            }
        }
        components
    }

    /// Position of edge `(i, j)` (either orientation).
    pub fn position(&self, a: usize, b: usize) -> Option<usize> {
        let key = (a.min(b), a.max(b));
        self.edges.binary_search(&key).ok()
    }
}

/// All pairs `i < j` with `sc[i][j] > threshold`, weights copied from `sc`.
pub fn build_edge_list(sc: &Matrix, threshold: f64) -> Result<EdgeList> {
    validate_sc(sc)?;
    if !(threshold >= 0.0) {
        return Err(Error::Domain(format!(
            "threshold must be nonnegative, got {threshold}"
        )));
    }
    let n = sc.rows();
    let mut edges = Vec::new();
    let mut weights = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let w = sc[(i, j)];
            if w > threshold {
                edges.push((i, j));
                weights.push(w);
            }
        }
    }
    if edges.is_empty() {
        return Err(Error::EmptyGraph { threshold });
    }
    Ok(EdgeList {
        n_nodes: n,
        edges,
        weights,
    })
}

/// The signed incidence map `B`: row `m = (i, j)` has `+1` at `i` and `-1` at `j`.
#[derive(Debug, Clone, Copy)]
pub struct Incidence<'a> {
    edges: &'a EdgeList,
}

impl Incidence<'_> {
    pub fn n_nodes(&self) -> usize {
        self.edges.n_nodes
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    /// `B v`: potential differences across every edge.
    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.n_nodes() {
            return Err(Error::dim(self.n_nodes(), v.len()));
        }
        Ok(self.edges.edges.iter().map(|&(i, j)| v[i] - v[j]).collect())
    }

    /// `B^T y`: net edge quantity flowing out of every node.
    pub fn apply_transpose(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.n_edges() {
            return Err(Error::dim(self.n_edges(), y.len()));
        }
        let mut out = vec![0.0; self.n_nodes()];
        for (&(i, j), &val) in self.edges.edges.iter().zip(y) {
            out[i] += val;
            out[j] -= val;
        }
        Ok(out)
    }

    /// `B^T` as an N x M block of right-hand sides, one column `e_i - e_j` per edge.
    pub fn transpose_columns(&self) -> Matrix {
        let mut out = Matrix::zeros(self.n_nodes(), self.n_edges());
        for (m, &(i, j)) in self.edges.edges.iter().enumerate() {
            out[(i, m)] = 1.0;
            out[(j, m)] = -1.0;
        }
        out
    }

    /// `B X` applied column-wise to an N x k matrix.
    pub fn apply_matrix(&self, x: &Matrix) -> Result<Matrix> {
        if x.rows() != self.n_nodes() {
            return Err(Error::dim(self.n_nodes(), x.rows()));
        }
        let k = x.cols();
        let mut out = Matrix::zeros(self.n_edges(), k);
        for (m, &(i, j)) in self.edges.edges.iter().enumerate() {
            let (ri, rj) = (x.row(i), x.row(j));
            for (o, (a, b)) in out.row_mut(m).iter_mut().zip(ri.iter().zip(rj)) {
                *o = a - b;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn complete(n: usize) -> Matrix {
        Matrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { 1.0 })
    }

    #[test]
    fn triangle_edges() {
        let el = build_edge_list(&complete(3), 0.0).unwrap();
        assert_eq!(el.edges(), &[(0, 1), (0, 2), (1, 2)]);
        assert_eq!(el.weights(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn single_edge() {
        let sc = Matrix::from_rows(&[vec![0.0, 5.0], vec![5.0, 0.0]]).unwrap();
        let el = build_edge_list(&sc, 0.0).unwrap();
        assert_eq!(el.edges(), &[(0, 1)]);
        assert_eq!(el.weights(), &[5.0]);
    }

    #[test]
    fn rejects_bad_sc() {
        let mut sc = complete(3);
        sc[(0, 1)] = 1.1;
        assert!(matches!(
            build_edge_list(&sc, 0.0),
            Err(Error::InvalidInput(_))
        ));
        assert!(matches!(
            build_edge_list(&Matrix::zeros(4, 4), 0.0),
            Err(Error::EmptyGraph { .. })
        ));
        assert!(matches!(
            build_edge_list(&complete(3), 1.0),
            Err(Error::EmptyGraph { .. })
        ));
        let mut diag = complete(3);
        diag[(1, 1)] = 1.0;
        assert!(build_edge_list(&diag, 0.0).is_err());
        assert!(validate_sc(&Matrix::zeros(1, 1)).is_err());
    }

    #[test]
    fn incidence_triangle() {
        let el = build_edge_list(&complete(3), 0.0).unwrap();
        let b = el.incidence();
        assert_eq!(b.apply(&[1.0, 0.0, 0.0]).unwrap(), vec![1.0, 1.0, 0.0]);
        assert_eq!(b.apply(&[2.5; 3]).unwrap(), vec![0.0; 3]);
        assert!(b.apply(&[1.0; 4]).is_err());
        assert_eq!(
            b.apply_transpose(&[1.0, 0.0, 0.0]).unwrap(),
            vec![1.0, -1.0, 0.0]
        );
    }

    #[test]
    fn components_and_positions() {
        let el = EdgeList::from_pairs(5, &[(1, 0), (3, 2)], &[1.0, 2.0]).unwrap();
        assert_eq!(el.edges(), &[(0, 1), (2, 3)]);
        assert_eq!(el.n_components(), 3);
        assert_eq!(el.position(3, 2), Some(1));
        assert_eq!(el.position(0, 4), None);
        assert_eq!(el.degrees(), vec![1, 1, 1, 1, 0]);
        assert!(EdgeList::from_pairs(3, &[(0, 1), (1, 0)], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn pair_validation() {
        let sc = complete(3);
        assert!(ConnectomePair::new(sc.clone(), Matrix::identity(3), None, Some(0)).is_ok());
        assert!(ConnectomePair::new(sc.clone(), Matrix::identity(4), None, None).is_err());
        assert!(ConnectomePair::new(
            sc.clone(),
            Matrix::identity(3),
            Some(Matrix::zeros(2, 3)),
            None
        )
        .is_err());
        let pair = ConnectomePair::new(sc, Matrix::identity(3), None, None).unwrap();
        assert_eq!(pair.features_or_default(), Matrix::identity(3));
    }
}
