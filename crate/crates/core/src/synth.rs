//! Synthetic cohorts of coupled SC/FC pairs with a planted group effect.
//!
//! A block-structured backbone is drawn once. Every subject gets its own
//! lognormal jitter of the backbone weights, and its FC is the
//! diagonal-normalised heat kernel of its SC plus Gaussian noise. Patients
//! (label 1) have the FC demand between the endpoints of each planted edge
//! scaled by `1 + rho`.

use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{build_edge_list, ConnectomePair};
use crate::io::{write_json, write_matrix_csv, ManifestEntry};
use crate::linalg::Matrix;
use crate::rng::{Rng, Streams};

pub const MAX_BACKBONE_DRAWS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlockModel {
    pub blocks: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub weight_min: f64,
    pub weight_max: f64,
}

impl Default for BlockModel {
    fn default() -> Self {
        Self {
            blocks: 3,
            p_in: 0.7,
            p_out: 0.1,
            weight_min: 0.5,
            weight_max: 1.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    /// No feature files; the model falls back to one-hot node identity.
    None,
    /// Each node's row of its subject's FC matrix.
    #[default]
    FcProfile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_nodes: usize,
    pub n_per_class: usize,
    pub sc_model: BlockModel,
    /// Heat-kernel diffusion time.
    pub diffusion_scale: f64,
    /// Explicit planted edges; when empty, `n_planted` backbone edges are drawn.
    pub planted_edges: Vec<(usize, usize)>,
    pub n_planted: usize,
    pub rho: f64,
    pub noise: f64,
    /// Standard deviation of the per-subject log-weight jitter.
    pub jitter: f64,
    pub features: FeatureMode,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_nodes: 30,
            n_per_class: 100,
            sc_model: BlockModel::default(),
            diffusion_scale: 1.0,
            planted_edges: Vec::new(),
            n_planted: 10,
            rho: 1.0,
            noise: 0.05,
            jitter: 0.1,
            features: FeatureMode::FcProfile,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        let b = &self.sc_model;
        if self.n_nodes < 2 || self.n_per_class == 0 {
            return bad("n_nodes must be at least 2 and n_per_class positive");
        }
        if b.blocks == 0 || b.blocks > self.n_nodes {
            return bad("blocks must lie in 1..=n_nodes");
        }
        if !(0.0..=1.0).contains(&b.p_in) || !(0.0..=1.0).contains(&b.p_out) {
            return bad("block probabilities must lie in [0, 1]");
        }
        if !(b.weight_min > 0.0 && b.weight_max >= b.weight_min) {
            return bad("weight range must be positive and ordered");
        }
        if !(self.rho >= 0.0)
            || !(self.noise >= 0.0)
            || !(self.jitter >= 0.0)
            || !(self.diffusion_scale > 0.0)
        {
            return bad("rho, noise and jitter must be nonnegative and diffusion_scale positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthSubject {
    pub id: String,
    pub sc: Matrix,
    pub fc: Matrix,
    pub features: Option<Matrix>,
    pub label: usize,
}

impl SynthSubject {
    pub fn to_pair(&self) -> Result<ConnectomePair> {
        ConnectomePair::new(
            self.sc.clone(),
            self.fc.clone(),
            self.features.clone(),
            Some(self.label),
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthMetadata {
    pub spec: SynthSpec,
    pub planted_edges: Vec<(usize, usize)>,
    pub n_backbone_edges: usize,
    pub backbone_draws: usize,
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub metadata: SynthMetadata,
    pub backbone: Matrix,
    pub subjects: Vec<SynthSubject>,
}

impl SynthDataset {
    pub fn pairs(&self) -> Result<Vec<ConnectomePair>> {
        self.subjects.iter().map(SynthSubject::to_pair).collect()
    }

    /// Writes `manifest.json`, `planted.json` and per-subject CSVs under `dir`.
    /// Returns the manifest path.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let dir = dir.as_ref();
        let mut entries = Vec::with_capacity(self.subjects.len());
        for s in &self.subjects {
            let rel = |kind: &str| PathBuf::from("subjects").join(format!("{}_{kind}.csv", s.id));
            write_matrix_csv(dir.join(rel("sc")), &s.sc)?;
            write_matrix_csv(dir.join(rel("fc")), &s.fc)?;
            let features = match &s.features {
                Some(x) => {
                    write_matrix_csv(dir.join(rel("features")), x)?;
                    Some(rel("features"))
                }
                None => None,
            };
            entries.push(ManifestEntry {
                id: s.id.clone(),
                sc: rel("sc"),
                fc: rel("fc"),
                features,
                label: Some(s.label),
            });
        }
        write_json(dir.join("planted.json"), &self.metadata)?;
        let manifest = dir.join("manifest.json");
        write_json(&manifest, &entries)?;
        Ok(manifest)
    }
}

fn draw_backbone(spec: &SynthSpec, rng: &mut Rng) -> Result<(Matrix, usize)> {
    let n = spec.n_nodes;
    let b = &spec.sc_model;
    let block = |i: usize| i * b.blocks / n;
    for draw in 1..=MAX_BACKBONE_DRAWS {
        let mut sc = Matrix::zeros(n, n);
        for i in 0..n {
            for j in i + 1..n {
                let p = if block(i) == block(j) {
                    b.p_in
                } else {
                    b.p_out
                };
                if rng.random::<f64>() < p {
                    let w = if b.weight_max > b.weight_min {
                        rng.random_range(b.weight_min..b.weight_max)
                    } else {
                        b.weight_min
                    };
                    sc.as_mut_slice()[i * n + j] = w;
                    sc.as_mut_slice()[j * n + i] = w;
                }
            }
        }
        if let Ok(edges) = build_edge_list(&sc, 0.0) {
            if edges.n_components() == 1 {
                return Ok((sc, draw));
            }
        }
    }
    Err(Error::InvalidInput(format!(
        "no connected backbone in {MAX_BACKBONE_DRAWS} draws; raise p_in or p_out"
    )))
}

/// `K = exp(-t L_norm)` scaled to unit diagonal, `L_norm` the normalised Laplacian of `sc`.
pub fn heat_kernel_similarity(sc: &Matrix, t: f64) -> Matrix {
    let n = sc.rows();
    let deg: Vec<f64> = (0..n).map(|i| sc.row(i).iter().sum()).collect();
    let inv_sqrt: Vec<f64> = deg
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
        .collect();
    let lap = nalgebra::DMatrix::from_fn(n, n, |i, j| {
        let a = -sc[(i, j)] * inv_sqrt[i] * inv_sqrt[j];
        if i == j && deg[i] > 0.0 {
            1.0 + a
        } else {
            a
        }
    });
    let eig = lap.symmetric_eigen();
    let decay = eig.eigenvalues.map(|l| (-t * l).exp());
    let k =
        &eig.eigenvectors * nalgebra::DMatrix::from_diagonal(&decay) * eig.eigenvectors.transpose();
    Matrix::from_fn(n, n, |i, j| {
        if i == j {
            1.0
        } else {
            0.5 * (k[(i, j)] + k[(j, i)]) / (k[(i, i)] * k[(j, j)]).sqrt()
        }
    })
}

fn make_subject(
    spec: &SynthSpec,
    backbone: &Matrix,
    planted: &[(usize, usize)],
    index: usize,
    label: usize,
    rng: &mut Rng,
) -> SynthSubject {
    let n = spec.n_nodes;
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    let mut sc = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let w = backbone[(i, j)];
            if w > 0.0 {
                let v = w * (spec.jitter * std.sample(rng)).exp();
                sc.as_mut_slice()[i * n + j] = v;
                sc.as_mut_slice()[j * n + i] = v;
            }
        }
    }
    let mut fc = heat_kernel_similarity(&sc, spec.diffusion_scale);
    for i in 0..n {
        for j in i + 1..n {
            let v = fc[(i, j)] + spec.noise * std.sample(rng);
            fc.as_mut_slice()[i * n + j] = v;
            fc.as_mut_slice()[j * n + i] = v;
        }
    }
    if label == 1 {
        for &(i, j) in planted {
            let v = fc[(i, j)] * (1.0 + spec.rho);
            fc.as_mut_slice()[i * n + j] = v;
            fc.as_mut_slice()[j * n + i] = v;
        }
    }
    let fc = fc.map(|v| v.clamp(-1.0, 1.0));
    let features = match spec.features {
        FeatureMode::None => None,
        FeatureMode::FcProfile => Some(fc.clone()),
    };
    SynthSubject {
        id: format!("sub-{index:04}"),
        sc,
        fc,
        features,
        label,
    }
}

pub fn generate(spec: &SynthSpec) -> Result<SynthDataset> {
    spec.validate()?;
    let streams = Streams::new(spec.seed);
    let (backbone, backbone_draws) = draw_backbone(spec, &mut streams.stream("backbone"))?;
    let edges = build_edge_list(&backbone, 0.0)?;

    let planted = if spec.planted_edges.is_empty() {
        if spec.n_planted > edges.len() {
            return Err(Error::Config(format!(
                "n_planted {} exceeds the {} backbone edges",
                spec.n_planted,
                edges.len()
            )));
        }
        let mut picked: Vec<(usize, usize)> =
            sample(&mut streams.stream("planted"), edges.len(), spec.n_planted)
                .into_iter()
                .map(|m| edges.edges()[m])
                .collect();
        picked.sort_unstable();
        picked
    } else {
        let mut picked = Vec::with_capacity(spec.planted_edges.len());
        for &(a, b) in &spec.planted_edges {
            let (i, j) = (a.min(b), a.max(b));
            if edges.position(i, j).is_none() {
                return Err(Error::Config(format!(
                    "planted edge ({i}, {j}) is not in the backbone"
                )));
            }
            picked.push((i, j));
        }
        picked
    };

    let subjects = (0..2 * spec.n_per_class)
        .map(|idx| {
            let label = usize::from(idx >= spec.n_per_class);
            make_subject(
                spec,
                &backbone,
                &planted,
                idx,
                label,
                &mut streams.indexed("subject", idx as u64),
            )
        })
        .collect();

    Ok(SynthDataset {
        metadata: SynthMetadata {
            spec: spec.clone(),
            planted_edges: planted,
            n_backbone_edges: edges.len(),
            backbone_draws,
        },
        backbone,
        subjects,
    })
}

/// Random spanning tree plus independent extra edges with probability `p`; weights in `[0.5, 2)`.
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

/// Symmetric, unit diagonal, off-diagonal entries uniform in `(-1, 1)`.
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

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthSpec {
        SynthSpec {
            n_nodes: 12,
            n_per_class: 3,
            n_planted: 3,
            ..Default::default()
        }
    }

    #[test]
    fn subjects_are_valid_pairs() {
        let ds = generate(&small()).unwrap();
        assert_eq!(ds.subjects.len(), 6);
        for s in &ds.subjects {
            let pair = s.to_pair().unwrap();
            assert_eq!(build_edge_list(pair.sc(), 0.0).unwrap().n_components(), 1);
            assert!(s.fc.as_slice().iter().all(|v| (-1.0..=1.0).contains(v)));
            assert!(s.fc.asymmetry() == 0.0);
        }
        let labels: Vec<usize> = ds.subjects.iter().map(|s| s.label).collect();
        assert_eq!(labels, vec![0, 0, 0, 1, 1, 1]);
    }

    #[test]
    fn heat_kernel_of_two_nodes() {
        // L_norm = [[1,-1],[-1,1]], eigenvalues 0 and 2: K = 0.5 [[1+e, 1-e],[1-e, 1+e]], e = exp(-2t)
        let sc = Matrix::from_rows(&[vec![0.0, 3.0], vec![3.0, 0.0]]).unwrap();
        let k = heat_kernel_similarity(&sc, 1.0);
        let e = (-2.0f64).exp();
        assert!((k[(0, 1)] - (1.0 - e) / (1.0 + e)).abs() < 1e-12);
        assert_eq!(k[(0, 0)], 1.0);
    }

    #[test]
    fn planted_edges_must_exist() {
        let mut spec = small();
        spec.sc_model.p_in = 0.0;
        spec.sc_model.p_out = 1.0;
        spec.sc_model.blocks = 12;
        spec.planted_edges = vec![(0, 1)];
        assert!(generate(&spec).is_ok());
        spec.sc_model.blocks = 2;
        assert!(matches!(generate(&spec), Err(Error::Config(_))));
    }

    #[test]
    fn disconnected_backbone_errors() {
        let mut spec = small();
        spec.sc_model.p_in = 0.0;
        spec.sc_model.p_out = 0.0;
        assert!(matches!(generate(&spec), Err(Error::InvalidInput(_))));
    }
}
