//! The learnable pipeline: resistance-biased encoder, edge gate, flow,
//! routing mask, masked aggregation and classifier head.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::DemandLaplacian;
use crate::graph::{build_edge_list, ConnectomePair, EdgeList};
use crate::linalg::Matrix;
use crate::resistance::{effective_resistance_with, ResistanceOptions};
use crate::rng::Rng;
use crate::spectral::DEFAULT_DELTA;

use super::autodiff::{softmax, Tape, Var};
use super::mask::MASK_EPSILON;
use super::params::ParamStore;

/// Gate outputs are clamped to this range before exponentiation.
pub const GATE_CLAMP: f64 = 30.0;
const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MaskMode {
    /// Mask added to the pre-softmax scores.
    #[default]
    Additive,
    /// Attention probabilities scaled by the mask and renormalised.
    Multiplicative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Input feature width; fixed from the data at training time.
    pub d_in: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ffn_mult: usize,
    pub degree_buckets: usize,
    pub resistance_hidden: usize,
    pub gate_hidden: usize,
    pub n_classes: usize,
    pub dropout: f64,
    pub delta: f64,
    pub tau_init: f64,
    pub theta_init: f64,
    pub mask_mode: MaskMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_in: 0,
            d_model: 64,
            n_layers: 2,
            n_heads: 1,
            ffn_mult: 4,
            degree_buckets: 64,
            resistance_hidden: 128,
            gate_hidden: 64,
            n_classes: 2,
            dropout: 0.3,
            delta: DEFAULT_DELTA,
            tau_init: 8.0,
            theta_init: 0.5,
            mask_mode: MaskMode::Additive,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.d_in == 0 || self.d_model == 0 || self.n_layers == 0 || self.n_classes < 2 {
            return bad("d_in, d_model and n_layers must be positive and n_classes at least 2");
        }
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return bad("n_heads must divide d_model");
        }
        if self.degree_buckets == 0
            || self.resistance_hidden == 0
            || self.gate_hidden == 0
            || self.ffn_mult == 0
        {
            return bad("hidden sizes must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if !(self.delta > 0.0) {
            return bad("delta must be positive");
        }
        Ok(())
    }
}

/// Options for turning a [`ConnectomePair`] into model inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrepareOptions {
    pub edge_threshold: f64,
    /// Regularised resistance fallback for disconnected SC.
    pub erd_regularize: Option<f64>,
    /// Divide SC by its maximum entry first.
    pub normalize_sc: bool,
}

impl Default for PrepareOptions {
    fn default() -> Self {
        Self {
            edge_threshold: 0.0,
            erd_regularize: None,
            normalize_sc: false,
        }
    }
}

/// Everything about one subject the model needs that does not depend on parameters.
#[derive(Debug, Clone)]
pub struct SubjectInputs {
    pub features: Matrix,
    pub degrees: Vec<usize>,
    /// Distinct resistance values as a `K x 1` column: the zero diagonal, then the upper triangle.
    pub resistance: Matrix,
    /// Row of `resistance` for each entry of the row-major `N x N` matrix.
    pub resistance_index: Vec<usize>,
    pub edges: EdgeList,
    pub demand: DemandLaplacian,
    pub label: Option<usize>,
}

impl SubjectInputs {
    pub fn prepare(pair: &ConnectomePair, opts: &PrepareOptions) -> Result<Self> {
        let normalized;
        let pair = if opts.normalize_sc {
            normalized = pair.max_normalized();
            &normalized
        } else {
            pair
        };
        let n = pair.n_nodes();
        let erd = effective_resistance_with(
            pair.sc(),
            ResistanceOptions {
                regularize: opts.erd_regularize,
                ..Default::default()
            },
        )?;
        let edges = build_edge_list(pair.sc(), opts.edge_threshold)?;
        let r = erd.matrix();
        let mut values = vec![0.0];
        let mut upper = vec![0usize; n * n];
        for i in 0..n {
            for j in i + 1..n {
                upper[i * n + j] = values.len();
                values.push(r[(i, j)]);
            }
        }
        let resistance_index = (0..n * n)
            .map(|k| {
                let (i, j) = (k / n, k % n);
                upper[i.min(j) * n + i.max(j)]
            })
            .collect();
        Ok(Self {
            features: pair.features_or_default(),
            degrees: edges.degrees(),
            resistance: Matrix::column(&values),
            resistance_index,
            demand: DemandLaplacian::from_fc(pair.fc())?,
            edges,
            label: pair.label(),
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.features.rows()
    }
}

#[derive(Debug, Clone)]
struct LayerIds {
    q: usize,
    k: usize,
    v: usize,
    ln1_g: usize,
    ln1_b: usize,
    ff_w1: usize,
    ff_b1: usize,
    ff_w2: usize,
    ff_b2: usize,
    ln2_g: usize,
    ln2_b: usize,
}

#[derive(Debug, Clone)]
struct ParamIds {
    in_w: usize,
    in_b: usize,
    degree: usize,
    res_w1: usize,
    res_b1: usize,
    res_w2: usize,
    res_b2: usize,
    layers: Vec<LayerIds>,
    gate_wa: usize,
    gate_wb: usize,
    gate_b1: usize,
    gate_w2: usize,
    gate_b2: usize,
    tau: usize,
    theta: usize,
    agg_q: usize,
    agg_k: usize,
    agg_v: usize,
    head_w1: usize,
    head_b1: usize,
    head_w2: usize,
    head_b2: usize,
}

impl ParamIds {
    fn resolve(store: &ParamStore, n_layers: usize) -> Result<Self> {
        let id = |n: &str| store.id(n);
        let layers = (0..n_layers)
            .map(|l| {
                let p = |s: &str| store.id(&format!("encoder.{l}.{s}"));
                Ok(LayerIds {
                    q: p("q")?,
                    k: p("k")?,
                    v: p("v")?,
                    ln1_g: p("norm1.scale")?,
                    ln1_b: p("norm1.offset")?,
                    ff_w1: p("ffn.w1")?,
                    ff_b1: p("ffn.b1")?,
                    ff_w2: p("ffn.w2")?,
                    ff_b2: p("ffn.b2")?,
                    ln2_g: p("norm2.scale")?,
                    ln2_b: p("norm2.offset")?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            in_w: id("input.w")?,
            in_b: id("input.b")?,
            degree: id("degree_embedding")?,
            res_w1: id("resistance.w1")?,
            res_b1: id("resistance.b1")?,
            res_w2: id("resistance.w2")?,
            res_b2: id("resistance.b2")?,
            layers,
            gate_wa: id("gate.w1_source")?,
            gate_wb: id("gate.w1_target")?,
            gate_b1: id("gate.b1")?,
            gate_w2: id("gate.w2")?,
            gate_b2: id("gate.b2")?,
            tau: id("mask.tau")?,
            theta: id("mask.theta")?,
            agg_q: id("aggregator.q")?,
            agg_k: id("aggregator.k")?,
            agg_v: id("aggregator.v")?,
            head_w1: id("head.w1")?,
            head_b1: id("head.b1")?,
            head_w2: id("head.w2")?,
            head_b2: id("head.b2")?,
        })
    }
}

/// Intermediate nodes of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardTrace {
    pub hidden: Var,
    pub capacities: Var,
    pub flow: Var,
    pub mask: Var,
    pub logits: Var,
}

/// Parameter leaves registered on a tape, aligned with [`ParamStore`] ids.
pub struct BoundParams(Vec<Var>);

impl BoundParams {
    fn get(&self, id: usize) -> Var {
        self.0[id]
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    params: ParamStore,
    ids: ParamIds,
}

fn xavier(rng: &mut Rng, fan_in: usize, fan_out: usize) -> Matrix {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Matrix::from_fn(fan_in, fan_out, |_, _| rng.random_range(-a..a))
}

impl Model {
    pub fn init(config: ModelConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let h = config.n_heads;
        let mut s = ParamStore::new();
        s.insert("input.w", xavier(rng, config.d_in, d))?;
        s.insert("input.b", Matrix::zeros(1, d))?;
        let normal = Normal::new(0.0, 0.02).expect("valid normal");
        s.insert(
            "degree_embedding",
            Matrix::from_fn(config.degree_buckets, d, |_, _| normal.sample(rng)),
        )?;
        s.insert("resistance.w1", xavier(rng, 1, config.resistance_hidden))?;
        s.insert("resistance.b1", Matrix::zeros(1, config.resistance_hidden))?;
        s.insert("resistance.w2", xavier(rng, config.resistance_hidden, h))?;
        s.insert("resistance.b2", Matrix::zeros(1, h))?;
        let dff = d * config.ffn_mult;
        for l in 0..config.n_layers {
            let p = |n: &str| format!("encoder.{l}.{n}");
            s.insert(p("q"), xavier(rng, d, d))?;
            s.insert(p("k"), xavier(rng, d, d))?;
            s.insert(p("v"), xavier(rng, d, d))?;
            s.insert(p("norm1.scale"), Matrix::filled(1, d, 1.0))?;
            s.insert(p("norm1.offset"), Matrix::zeros(1, d))?;
            s.insert(p("ffn.w1"), xavier(rng, d, dff))?;
            s.insert(p("ffn.b1"), Matrix::zeros(1, dff))?;
            s.insert(p("ffn.w2"), xavier(rng, dff, d))?;
            s.insert(p("ffn.b2"), Matrix::zeros(1, d))?;
            s.insert(p("norm2.scale"), Matrix::filled(1, d, 1.0))?;
            s.insert(p("norm2.offset"), Matrix::zeros(1, d))?;
        }
        // First gate layer acts on [h_i ; h_j]; stored as its two d x hidden halves.
        let gw = xavier(rng, 2 * d, config.gate_hidden);
        s.insert(
            "gate.w1_source",
            Matrix::from_fn(d, config.gate_hidden, |i, j| gw[(i, j)]),
        )?;
        s.insert(
            "gate.w1_target",
            Matrix::from_fn(d, config.gate_hidden, |i, j| gw[(d + i, j)]),
        )?;
        s.insert("gate.b1", Matrix::zeros(1, config.gate_hidden))?;
        s.insert("gate.w2", xavier(rng, config.gate_hidden, 1))?;
        s.insert("gate.b2", Matrix::zeros(1, 1))?;
        s.insert("mask.tau", Matrix::filled(1, 1, config.tau_init))?;
        s.insert("mask.theta", Matrix::filled(1, 1, config.theta_init))?;
        s.insert("aggregator.q", xavier(rng, d, d))?;
        s.insert("aggregator.k", xavier(rng, d, d))?;
        s.insert("aggregator.v", xavier(rng, d, d))?;
        s.insert("head.w1", xavier(rng, d, d))?;
        s.insert("head.b1", Matrix::zeros(1, d))?;
        s.insert("head.w2", xavier(rng, d, config.n_classes))?;
        s.insert("head.b2", Matrix::zeros(1, config.n_classes))?;
        Self::from_parts(config, s)
    }

    /// Rebuilds a model from a config and a complete parameter store.
    pub fn from_parts(config: ModelConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let ids = ParamIds::resolve(&params, config.n_layers)?;
        let model = Self {
            config,
            params,
            ids,
        };
        model.check_shapes()?;
        Ok(model)
    }

    fn check_shapes(&self) -> Result<()> {
        let c = &self.config;
        let expect = |id: usize, r: usize, k: usize| -> Result<()> {
            let m = self.params.get(id);
            if m.shape() != (r, k) {
                return Err(Error::Config(format!(
                    "parameter {} has shape {}x{}, expected {r}x{k}",
                    self.params.name(id),
                    m.rows(),
                    m.cols()
                )));
            }
            Ok(())
        };
        let d = c.d_model;
        expect(self.ids.in_w, c.d_in, d)?;
        expect(self.ids.degree, c.degree_buckets, d)?;
        expect(self.ids.res_w2, c.resistance_hidden, c.n_heads)?;
        expect(self.ids.gate_wa, d, c.gate_hidden)?;
        expect(self.ids.head_w2, d, c.n_classes)?;
        for l in &self.ids.layers {
            expect(l.ff_w1, d, d * c.ffn_mult)?;
        }
        Ok(())
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        BoundParams(
            (0..self.params.len())
                .map(|id| tape.param(id, self.params.get(id).clone()))
                .collect(),
        )
    }

    fn check_inputs(&self, inputs: &SubjectInputs) -> Result<()> {
        let n = inputs.n_nodes();
        if inputs.features.cols() != self.config.d_in {
            return Err(Error::dim(
                format!("{} input features", self.config.d_in),
                inputs.features.cols(),
            ));
        }
        if inputs.resistance_index.len() != n * n
            || inputs.edges.n_nodes() != n
            || inputs.demand.n_nodes() != n
        {
            return Err(Error::InvalidInput(
                "subject inputs disagree on node count".into(),
            ));
        }
        Ok(())
    }

    /// Multi-head attention `softmax(Q K^T / sqrt(d_h) + bias_h) V` with per-head biases.
    fn attention(&self, tape: &mut Tape, q: Var, k: Var, v: Var, biases: &[Var]) -> Result<Var> {
        let heads = self.config.n_heads;
        let dh = self.config.d_model / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(heads);
        for (hd, &bias) in biases.iter().enumerate() {
            let (qh, kh, vh) = if heads == 1 {
                (q, k, v)
            } else {
                let r = (hd * dh, (hd + 1) * dh);
                (
                    tape.slice_cols(q, r.0, r.1)?,
                    tape.slice_cols(k, r.0, r.1)?,
                    tape.slice_cols(v, r.0, r.1)?,
                )
            };
            let raw = tape.matmul_t(qh, kh)?;
            let scores = tape.scale(raw, scale);
            let biased = tape.add(scores, bias)?;
            let attn = tape.softmax_rows(biased);
            outs.push(tape.matmul(attn, vh)?);
        }
        if outs.len() == 1 {
            Ok(outs[0])
        } else {
            tape.concat_cols(&outs)
        }
    }

    /// Structure-aware node states `H` (N x d).
    pub fn encode(
        &self,
        tape: &mut Tape,
        p: &BoundParams,
        inputs: &SubjectInputs,
        mut dropout: Option<&mut Rng>,
    ) -> Result<Var> {
        self.check_inputs(inputs)?;
        let ids = &self.ids;
        let n = inputs.n_nodes();
        let rate = self.config.dropout;

        let x = tape.constant(inputs.features.clone());
        let proj = tape.matmul(x, p.get(ids.in_w))?;
        let proj = tape.add_row(proj, p.get(ids.in_b))?;
        let buckets: Vec<usize> = inputs
            .degrees
            .iter()
            .map(|&deg| deg.min(self.config.degree_buckets - 1))
            .collect();
        let deg = tape.gather_rows(p.get(ids.degree), &buckets)?;
        let mut h = tape.add(proj, deg)?;

        // psi_res applied to every distinct R_ij, one output per head, then spread to N^2 rows.
        let r = tape.constant(inputs.resistance.clone());
        let z = tape.matmul(r, p.get(ids.res_w1))?;
        let z = tape.add_row(z, p.get(ids.res_b1))?;
        let z = tape.gelu(z);
        let z = tape.matmul(z, p.get(ids.res_w2))?;
        let z = tape.add_row(z, p.get(ids.res_b2))?;
        let z = tape.gather_rows(z, &inputs.resistance_index)?;
        let mut biases = Vec::with_capacity(self.config.n_heads);
        for hd in 0..self.config.n_heads {
            let col = if self.config.n_heads == 1 {
                z
            } else {
                tape.slice_cols(z, hd, hd + 1)?
            };
            biases.push(tape.reshape(col, n, n)?);
        }

        for (l, li) in ids.layers.iter().enumerate() {
            let q = tape.matmul(h, p.get(li.q))?;
            let k = tape.matmul(h, p.get(li.k))?;
            let v = tape.matmul(h, p.get(li.v))?;
            let att = self.attention(tape, q, k, v, &biases)?;
            let att = tape.dropout(att, rate, dropout.as_deref_mut());
            let res = tape.add(h, att)?;
            let zl = tape.layer_norm(res, p.get(li.ln1_g), p.get(li.ln1_b), LN_EPS)?;
            let f = tape.matmul(zl, p.get(li.ff_w1))?;
            let f = tape.add_row(f, p.get(li.ff_b1))?;
            let f = tape.gelu(f);
            let f = tape.dropout(f, rate, dropout.as_deref_mut());
            let f = tape.matmul(f, p.get(li.ff_w2))?;
            let f = tape.add_row(f, p.get(li.ff_b2))?;
            let res = tape.add(zl, f)?;
            h = tape.layer_norm(res, p.get(li.ln2_g), p.get(li.ln2_b), LN_EPS)?;
            if !tape.value(h).is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite activations in encoder layer {l}"
                )));
            }
        }
        Ok(h)
    }

    /// Positive capacities `exp(clamp(mean(w(h_i, h_j), w(h_j, h_i))))`, one per edge (M x 1).
    pub fn gate_capacities(
        &self,
        tape: &mut Tape,
        p: &BoundParams,
        hidden: Var,
        edges: &EdgeList,
    ) -> Result<Var> {
        let ids = &self.ids;
        let src: Vec<usize> = edges.edges().iter().map(|e| e.0).collect();
        let dst: Vec<usize> = edges.edges().iter().map(|e| e.1).collect();
        let a = tape.matmul(hidden, p.get(ids.gate_wa))?;
        let b = tape.matmul(hidden, p.get(ids.gate_wb))?;
        let mut directed = Vec::with_capacity(2);
        for (from, to) in [(&src, &dst), (&dst, &src)] {
            let left = tape.gather_rows(a, from)?;
            let right = tape.gather_rows(b, to)?;
            let pre = tape.add(left, right)?;
            let pre = tape.add_row(pre, p.get(ids.gate_b1))?;
            let act = tape.silu(pre);
            let out = tape.matmul(act, p.get(ids.gate_w2))?;
            directed.push(tape.add_row(out, p.get(ids.gate_b2))?);
        }
        let both = tape.add(directed[0], directed[1])?;
        let avg = tape.scale(both, 0.5);
        let clamped = tape.clamp(avg, -GATE_CLAMP, GATE_CLAMP);
        Ok(tape.exp(clamped))
    }

    /// Routing mask (N x N) from the aggregated flow column.
    pub fn routing_mask(
        &self,
        tape: &mut Tape,
        p: &BoundParams,
        flow: Var,
        edges: &EdgeList,
    ) -> Result<Var> {
        let (tau, theta) = (p.get(self.ids.tau), p.get(self.ids.theta));
        let u = tape.log_eps(flow, MASK_EPSILON);
        let norm = tape.min_max_norm(u)?;
        let neg_theta = tape.scale(theta, -1.0);
        let shifted = tape.add_scalar(norm, neg_theta)?;
        let pre = tape.mul_scalar(shifted, tau)?;
        let edge_mask = tape.sigmoid(pre);
        let fill_pre = tape.mul(tau, neg_theta)?;
        let fill = tape.sigmoid(fill_pre);
        tape.scatter_symmetric(edge_mask, fill, edges.edges(), edges.n_nodes())
    }

    /// Mask-biased attention, mean pooling and the classifier head; returns `1 x C` logits.
    pub fn aggregate_and_classify(
        &self,
        tape: &mut Tape,
        p: &BoundParams,
        hidden: Var,
        mask: Var,
    ) -> Result<Var> {
        let ids = &self.ids;
        let q = tape.matmul(hidden, p.get(ids.agg_q))?;
        let k = tape.matmul(hidden, p.get(ids.agg_k))?;
        let v = tape.matmul(hidden, p.get(ids.agg_v))?;
        let bias = match self.config.mask_mode {
            MaskMode::Additive => mask,
            MaskMode::Multiplicative => tape.log_eps(mask, 1e-300),
        };
        let biases = vec![bias; self.config.n_heads];
        let z = self.attention(tape, q, k, v, &biases)?;
        let pooled = tape.mean_rows(z);
        let h1 = tape.matmul(pooled, p.get(ids.head_w1))?;
        let h1 = tape.add_row(h1, p.get(ids.head_b1))?;
        let h1 = tape.relu(h1);
        let out = tape.matmul(h1, p.get(ids.head_w2))?;
        let logits = tape.add_row(out, p.get(ids.head_b2))?;
        if !tape.value(logits).is_finite() {
            return Err(Error::Numerical("non-finite logits".into()));
        }
        Ok(logits)
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        p: &BoundParams,
        inputs: &SubjectInputs,
        mut dropout: Option<&mut Rng>,
    ) -> Result<ForwardTrace> {
        let hidden = self.encode(tape, p, inputs, dropout.as_deref_mut())?;
        let capacities = self.gate_capacities(tape, p, hidden, &inputs.edges)?;
        let flow = tape.flow(capacities, &inputs.edges, &inputs.demand, self.config.delta)?;
        let mask = self.routing_mask(tape, p, flow, &inputs.edges)?;
        let logits = self.aggregate_and_classify(tape, p, hidden, mask)?;
        Ok(ForwardTrace {
            hidden,
            capacities,
            flow,
            mask,
            logits,
        })
    }

    /// Inference: logits and the per-edge capacities/flow behind them.
    pub fn infer(&self, inputs: &SubjectInputs) -> Result<Inference> {
        let mut tape = Tape::new();
        let p = self.bind(&mut tape);
        let t = self.forward(&mut tape, &p, inputs, None)?;
        let logits = tape.value(t.logits).row(0).to_vec();
        Ok(Inference {
            probabilities: softmax(&logits),
            logits,
            capacities: tape.value(t.capacities).as_slice().to_vec(),
            flow: tape.value(t.flow).as_slice().to_vec(),
            mask: tape.value(t.mask).clone(),
        })
    }

    /// Cross-entropy loss and its gradient for every parameter.
    pub fn loss_and_grads(
        &self,
        inputs: &SubjectInputs,
        dropout: Option<&mut Rng>,
    ) -> Result<(f64, Vec<Option<Matrix>>)> {
        let label = inputs
            .label
            .ok_or_else(|| Error::InvalidInput("training subject has no label".into()))?;
        let mut tape = Tape::new();
        let p = self.bind(&mut tape);
        let t = self.forward(&mut tape, &p, inputs, dropout)?;
        let loss = tape.softmax_cross_entropy(t.logits, label)?;
        let value = tape.scalar(loss);
        let mut grads = tape.backward(loss)?.into_vec();
        grads.resize(self.params.len(), None);
        Ok((value, grads))
    }

    pub fn loss(&self, inputs: &SubjectInputs) -> Result<f64> {
        let label = inputs
            .label
            .ok_or_else(|| Error::InvalidInput("subject has no label".into()))?;
        let logits = self.infer(inputs)?.logits;
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        Ok(lse - logits[label])
    }
}

#[derive(Debug, Clone)]
pub struct Inference {
    pub logits: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub capacities: Vec<f64>,
    pub flow: Vec<f64>,
    pub mask: Matrix,
}
