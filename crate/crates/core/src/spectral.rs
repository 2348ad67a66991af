//! Laplacian assembly, Cholesky factorisation and the Laplacian pseudoinverse.
//!
//! A regularised Laplacian `B^T C B + delta I` is factored exactly once; every
//! subsequent solve (single vectors or whole N x k blocks) reuses that factor.

use crate::error::{Error, Result};
use crate::graph::EdgeList;
use crate::linalg::{dot, Matrix};

pub const DEFAULT_DELTA: f64 = 1e-6;
/// Relative eigenvalue cutoff used by [`pseudoinverse`].
pub const DEFAULT_PINV_RTOL: f64 = 1e-10;

/// Lower-triangular Cholesky factor `L` with `A = L L^T`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    lower: Matrix,
}

impl Cholesky {
    pub fn factor(a: &Matrix) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::dim(
                "square matrix",
                format!("{}x{}", a.rows(), a.cols()),
            ));
        }
        let n = a.rows();
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let lj = l.row(j)[..j].to_vec();
            let pivot = a[(j, j)] - lj.iter().map(|x| x * x).sum::<f64>();
            if !(pivot > 0.0) || !pivot.is_finite() {
                return Err(Error::Numerical(format!(
                    "cholesky pivot {j} is {pivot:e}; matrix is not positive definite"
                )));
            }
            let d = pivot.sqrt();
            l[(j, j)] = d;
            for i in (j + 1)..n {
                let s = {
                    let li = &l.row(i)[..j];
                    li.iter().zip(&lj).map(|(x, y)| x * y).sum::<f64>()
                };
                l[(i, j)] = (a[(i, j)] - s) / d;
            }
        }
        Ok(Self { lower: l })
    }

    pub fn dim(&self) -> usize {
        self.lower.rows()
    }

    pub fn lower(&self) -> &Matrix {
        &self.lower
    }

    /// Solves `A X = B` for an N x k block, in place on a copy of `rhs`.
    pub fn solve(&self, rhs: &Matrix) -> Result<Matrix> {
        let n = self.dim();
        if rhs.rows() != n {
            return Err(Error::dim(format!("{n} rows"), rhs.rows()));
        }
        let k = rhs.cols();
        let mut x = rhs.clone();
        let l = &self.lower;
        let data = x.as_mut_slice();
        // forward: L y = b
        for i in 0..n {
            let (done, rest) = data.split_at_mut(i * k);
            let xi = &mut rest[..k];
            for p in 0..i {
                let lip = l[(i, p)];
                if lip != 0.0 {
                    let xp = &done[p * k..(p + 1) * k];
                    for (a, b) in xi.iter_mut().zip(xp) {
                        *a -= lip * b;
                    }
                }
            }
            let d = l[(i, i)];
            xi.iter_mut().for_each(|a| *a /= d);
        }
        // backward: L^T x = y
        for i in (0..n).rev() {
            let (head, tail) = data.split_at_mut((i + 1) * k);
            let xi = &mut head[i * k..];
            for p in (i + 1)..n {
                let lpi = l[(p, i)];
                if lpi != 0.0 {
                    let xp = &tail[(p - i - 1) * k..(p - i) * k];
                    for (a, b) in xi.iter_mut().zip(xp) {
                        *a -= lpi * b;
                    }
                }
            }
            let d = l[(i, i)];
            xi.iter_mut().for_each(|a| *a /= d);
        }
        Ok(x)
    }

    pub fn solve_vec(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let n = self.dim();
        if rhs.len() != n {
            return Err(Error::dim(format!("{n} entries"), rhs.len()));
        }
        let l = &self.lower;
        let mut x = rhs.to_vec();
        for i in 0..n {
            let row = &l.row(i)[..i];
            x[i] = (x[i] - dot(row, &x[..i])) / row_diag(l, i);
        }
        // L^T x = y, sweeping rows of L so memory access stays contiguous
        for i in (0..n).rev() {
            x[i] /= row_diag(l, i);
            let xi = x[i];
            for (a, b) in x[..i].iter_mut().zip(&l.row(i)[..i]) {
                *a -= xi * b;
            }
        }
        Ok(x)
    }
}

#[inline]
fn row_diag(l: &Matrix, i: usize) -> f64 {
    l.row(i)[i]
}

/// `B^T C B + delta I` together with its cached Cholesky factor.
#[derive(Debug, Clone)]
pub struct RegularizedLaplacian {
    matrix: Matrix,
    delta: f64,
    factor: Cholesky,
}

impl RegularizedLaplacian {
    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn factor(&self) -> &Cholesky {
        &self.factor
    }

    pub fn n_nodes(&self) -> usize {
        self.matrix.rows()
    }

    /// Solves `L x = rhs` against the cached factor; `rhs` may hold many columns.
    pub fn solve(&self, rhs: &Matrix) -> Result<Matrix> {
        self.factor.solve(rhs)
    }

    pub fn solve_vec(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        self.factor.solve_vec(rhs)
    }
}

/// Weighted Laplacian `sum_m c_m (e_i - e_j)(e_i - e_j)^T`, unregularised.
pub fn weighted_laplacian(edges: &EdgeList, capacities: &[f64]) -> Result<Matrix> {
    if capacities.len() != edges.len() {
        return Err(Error::dim(
            format!("{} capacities", edges.len()),
            capacities.len(),
        ));
    }
    let n = edges.n_nodes();
    let mut l = Matrix::zeros(n, n);
    for (&(i, j), &c) in edges.edges().iter().zip(capacities) {
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::Domain(format!(
                "capacity of edge ({i}, {j}) must be positive, got {c}"
            )));
        }
        l[(i, i)] += c;
        l[(j, j)] += c;
        l[(i, j)] -= c;
        l[(j, i)] -= c;
    }
    Ok(l)
}

pub fn build_laplacian(
    edges: &EdgeList,
    capacities: &[f64],
    delta: f64,
) -> Result<RegularizedLaplacian> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::Domain(format!(
            "delta must be positive, got {delta}"
        )));
    }
    let mut matrix = weighted_laplacian(edges, capacities)?;
    for i in 0..matrix.rows() {
        matrix[(i, i)] += delta;
    }
    let factor = Cholesky::factor(&matrix)?;
    Ok(RegularizedLaplacian {
        matrix,
        delta,
        factor,
    })
}

/// Moore-Penrose pseudoinverse of a symmetric positive semidefinite matrix.
#[derive(Debug, Clone)]
pub struct Pseudoinverse {
    matrix: Matrix,
}

impl Pseudoinverse {
    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> Matrix {
        self.matrix
    }
}

pub fn pseudoinverse(l: &Matrix) -> Result<Pseudoinverse> {
    pseudoinverse_with_rtol(l, DEFAULT_PINV_RTOL)
}

/// Eigenvalues at or below `rtol * max|eigenvalue|` are treated as zero.
pub fn pseudoinverse_with_rtol(l: &Matrix, rtol: f64) -> Result<Pseudoinverse> {
    if !l.is_square() {
        return Err(Error::dim(
            "square matrix",
            format!("{}x{}", l.rows(), l.cols()),
        ));
    }
    let asym = l.asymmetry();
    if asym > 1e-10 {
        return Err(Error::InvalidInput(format!(
            "matrix is not symmetric (max deviation {asym:e})"
        )));
    }
    let n = l.rows();
    let dense = nalgebra::DMatrix::from_fn(n, n, |i, j| 0.5 * (l[(i, j)] + l[(j, i)]));
    let eig = dense
        .try_symmetric_eigen(f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Numerical("symmetric eigendecomposition did not converge".into()))?;
    let max_eig = eig.eigenvalues.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let cutoff = rtol * max_eig;
    let mut out = Matrix::zeros(n, n);
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda.abs() <= cutoff || lambda == 0.0 {
            continue;
        }
        let inv = 1.0 / lambda;
        let v = eig.eigenvectors.column(k);
        for i in 0..n {
            let vi = v[i] * inv;
            if vi == 0.0 {
                continue;
            }
            for j in 0..n {
                out[(i, j)] += vi * v[j];
            }
        }
    }
    // Symmetrise away rounding.
    let out = Matrix::from_fn(n, n, |i, j| 0.5 * (out[(i, j)] + out[(j, i)]));
    Ok(Pseudoinverse { matrix: out })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::EdgeList;

    #[test]
    fn single_edge_laplacian() {
        let el = EdgeList::from_pairs(2, &[(0, 1)], &[1.0]).unwrap();
        let lap = build_laplacian(&el, &[2.0], 0.5).unwrap();
        let expected = Matrix::from_rows(&[vec![2.5, -2.0], vec![-2.0, 2.5]]).unwrap();
        assert_eq!(lap.matrix(), &expected);
    }

    #[test]
    fn triangle_unregularized_rows() {
        let el = EdgeList::from_pairs(3, &[(0, 1), (0, 2), (1, 2)], &[1.0; 3]).unwrap();
        let l = weighted_laplacian(&el, &[1.0; 3]).unwrap();
        for i in 0..3 {
            assert_eq!(l[(i, i)], 2.0);
            assert_eq!(l.row(i).iter().sum::<f64>(), 0.0);
        }
    }

    #[test]
    fn rejects_bad_capacities_and_delta() {
        let el = EdgeList::from_pairs(2, &[(0, 1)], &[1.0]).unwrap();
        assert!(matches!(
            build_laplacian(&el, &[0.0], 1.0),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            build_laplacian(&el, &[-1.0], 1.0),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            build_laplacian(&el, &[1.0], 0.0),
            Err(Error::Domain(_))
        ));
        assert!(build_laplacian(&el, &[1.0, 2.0], 1.0).is_err());
    }

    #[test]
    fn regularizer_identity_solve() {
        let el = EdgeList::from_pairs(4, &[(0, 1), (1, 2), (2, 3), (0, 3)], &[1.0; 4]).unwrap();
        let delta = 0.25;
        let lap = build_laplacian(&el, &[1.0, 2.0, 3.0, 0.5], delta).unwrap();
        let x = lap.solve_vec(&[delta; 4]).unwrap();
        for v in x {
            assert!((v - 1.0).abs() < 1e-14, "{v}");
        }
        assert!(lap.solve(&Matrix::zeros(3, 1)).is_err());
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        assert!(matches!(Cholesky::factor(&a), Err(Error::Numerical(_))));
    }

    #[test]
    fn pinv_single_edge_and_zero() {
        let l = Matrix::from_rows(&[vec![1.0, -1.0], vec![-1.0, 1.0]]).unwrap();
        let p = pseudoinverse(&l).unwrap();
        let expected = Matrix::from_rows(&[vec![0.25, -0.25], vec![-0.25, 0.25]]).unwrap();
        assert!(p.matrix().max_abs_diff(&expected) < 1e-14);
        let z = pseudoinverse(&Matrix::zeros(3, 3)).unwrap();
        assert_eq!(z.matrix(), &Matrix::zeros(3, 3));
    }
}
