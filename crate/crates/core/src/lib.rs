//! Physics-informed flow routing on paired structural/functional brain graphs.
//!
//! The crate is organised bottom-up:
//!
//! - [`graph`]: subjects, canonical edge lists and the incidence operator
//! - [`spectral`]: Laplacian assembly, Cholesky solves, pseudoinverse
//! - [`resistance`]: effective resistance distances
//! - [`flow`]: closed-form demand-weighted flow, its brute-force oracle, adjoint gradients
//! - [`nn`]: reverse-mode differentiation and the learnable model
//! - [`synth`]: synthetic coupled SC/FC cohorts with planted effects
//! - [`stats`]: edge-wise group statistics and FDR control
//! - [`io`]: CSV matrices and dataset manifests

pub mod error;
pub mod flow;
pub mod graph;
pub mod io;
pub mod linalg;
pub mod nn;
pub mod resistance;
pub mod rng;
pub mod spectral;
pub mod stats;
pub mod synth;

pub use error::{Error, ErrorKind, Result};
pub use flow::{DemandLaplacian, FlowEvaluator, FlowGraph, FlowMap};
pub use graph::{build_edge_list, ConnectomePair, EdgeList, Incidence};
pub use linalg::Matrix;
pub use resistance::{effective_resistance, ResistanceMatrix};
pub use spectral::{build_laplacian, pseudoinverse, Pseudoinverse, RegularizedLaplacian};
