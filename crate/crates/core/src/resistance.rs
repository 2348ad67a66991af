//! Effective resistance distance on the structural graph, with SC weights as conductances.

use crate::error::{Error, Result};
use crate::graph::{build_edge_list, validate_sc};
use crate::linalg::Matrix;
use crate::spectral::{
    build_laplacian, pseudoinverse_with_rtol, weighted_laplacian, DEFAULT_PINV_RTOL,
};

/// Symmetric, zero-diagonal matrix of effective resistances.
#[derive(Debug, Clone, PartialEq)]
pub struct ResistanceMatrix {
    r: Matrix,
    regularized: bool,
}

impl ResistanceMatrix {
    pub fn matrix(&self) -> &Matrix {
        &self.r
    }

    pub fn into_matrix(self) -> Matrix {
        self.r
    }

    /// True when computed against `(L + delta I)^-1` rather than the pseudoinverse.
    pub fn is_regularized(&self) -> bool {
        self.regularized
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.r[(i, j)]
    }

    pub fn n_nodes(&self) -> usize {
        self.r.rows()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ResistanceOptions {
    /// When set, disconnected graphs fall back to `(L + delta I)^-1` with this delta.
    pub regularize: Option<f64>,
    pub pinv_rtol: f64,
}

impl Default for ResistanceOptions {
    fn default() -> Self {
        Self {
            regularize: None,
            pinv_rtol: DEFAULT_PINV_RTOL,
        }
    }
}

pub fn effective_resistance(sc: &Matrix) -> Result<ResistanceMatrix> {
    effective_resistance_with(sc, ResistanceOptions::default())
}

pub fn effective_resistance_with(sc: &Matrix, opts: ResistanceOptions) -> Result<ResistanceMatrix> {
    validate_sc(sc)?;
    let edges = build_edge_list(sc, 0.0)?;
    let components = edges.n_components();
    let (kernel, regularized) = if components == 1 {
        let l = weighted_laplacian(&edges, edges.weights())?;
        (
            pseudoinverse_with_rtol(&l, opts.pinv_rtol)?.into_matrix(),
            false,
        )
    } else if let Some(delta) = opts.regularize {
        let lap = build_laplacian(&edges, edges.weights(), delta)?;
        (lap.solve(&Matrix::identity(sc.rows()))?, true)
    } else {
        return Err(Error::Disconnected { components });
    };
    Ok(ResistanceMatrix {
        r: resistance_from_kernel(&kernel),
        regularized,
    })
}

/// `R_ij = K_ii + K_jj - 2 K_ij`, clamped at zero against rounding.
fn resistance_from_kernel(k: &Matrix) -> Matrix {
    let n = k.rows();
    let mut r = Matrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = (k[(i, i)] + k[(j, j)] - k[(i, j)] - k[(j, i)]).max(0.0);
            r[(i, j)] = v;
            r[(j, i)] = v;
        }
    }
    r
}
