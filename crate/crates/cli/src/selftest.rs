//! Built-in consistency checks: closed-form flow against brute force,
//! adjoint gradients against finite differences, and a few exact values.

use flowroute_core::flow::oracle::{
    aggregate_flow_oracle, demand_outer_product_sum, finite_difference_capacity_grad,
    finite_difference_demand_grad,
};
use flowroute_core::flow::{max_relative_deviation, FlowEvaluator};
use flowroute_core::io::write_json;
use flowroute_core::nn::autodiff::sigmoid;
use flowroute_core::nn::{make_mask, Model, ModelConfig, PrepareOptions, SubjectInputs};
use flowroute_core::resistance::effective_resistance;
use flowroute_core::rng::{Rng, Streams};
use flowroute_core::synth::{random_connected_sc, random_fc};
use flowroute_core::{
    build_edge_list, ConnectomePair, DemandLaplacian, Error, FlowGraph, Matrix, Result,
};
use serde::Serialize;

use crate::args::{Command, SelftestArgs};

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub error: f64,
    pub tolerance: f64,
    pub pass: bool,
}

fn check(name: &'static str, error: f64, tolerance: f64) -> Check {
    Check {
        name,
        error,
        tolerance,
        pass: error < tolerance,
    }
}

fn instance(n: usize, rng: &mut Rng) -> Result<(FlowGraph, Matrix)> {
    let sc = random_connected_sc(n, 0.3, rng);
    let fc = random_fc(n, rng);
    Ok((
        FlowGraph::from_weights(build_edge_list(&sc, 0.0)?, 1e-6)?,
        fc,
    ))
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn oracle_equivalence(rng: &mut Rng) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for k in 0..20 {
        let (graph, fc) = instance(3 + k % 10, rng)?;
        let closed = graph.aggregate_flow(&DemandLaplacian::from_fc(&fc)?)?;
        let brute = aggregate_flow_oracle(&graph, &fc, false)?;
        worst = worst.max(max_relative_deviation(&closed.phi, &brute.phi, 1e-12));
    }
    Ok(worst)
}

fn demand_identity(rng: &mut Rng) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for n in 3..13 {
        let fc = random_fc(n, rng);
        let lfc = DemandLaplacian::from_fc(&fc)?;
        worst = worst.max(demand_outer_product_sum(&fc).max_abs_diff(&lfc.matrix().scale(2.0)));
    }
    Ok(worst)
}

fn adjoint_gradients(rng: &mut Rng) -> Result<(f64, f64)> {
    let (mut cap, mut dem): (f64, f64) = (0.0, 0.0);
    for _ in 0..3 {
        let (graph, fc) = instance(8, rng)?;
        let demand = DemandLaplacian::from_fc(&fc)?;
        let upstream: Vec<f64> = random_fc(graph.n_edges(), rng).row(0).to_vec();
        let mut ev = FlowEvaluator::new(graph.clone(), demand.clone())?;
        ev.forward()?;
        let g = ev.gradient_adjoint(&upstream)?;
        let fd_c = finite_difference_capacity_grad(&graph, &demand, &upstream, 1e-6)?;
        let fd_f = finite_difference_demand_grad(&graph, &demand, &upstream, 1e-6)?;
        for (a, b) in g.capacities.iter().zip(&fd_c) {
            cap = cap.max(rel(*a, *b));
        }
        for (a, b) in g.demand.as_slice().iter().zip(fd_f.as_slice()) {
            dem = dem.max(rel(*a, *b));
        }
    }
    Ok((cap, dem))
}

fn resistance_values() -> Result<f64> {
    let two = Matrix::from_rows(&[vec![0.0, 2.5], vec![2.5, 0.0]])?;
    let tri = Matrix::from_fn(3, 3, |i, j| if i == j { 0.0 } else { 1.0 });
    let a = (effective_resistance(&two)?.get(0, 1) - 0.4).abs();
    let b = (effective_resistance(&tri)?.get(0, 2) - 2.0 / 3.0).abs();
    Ok(a.max(b))
}

fn solve_residual(rng: &mut Rng) -> Result<f64> {
    let (graph, _) = instance(30, rng)?;
    let lap = graph.laplacian();
    let x = lap.solve(&Matrix::identity(30))?;
    Ok(lap.matrix().matmul(&x)?.max_abs_diff(&Matrix::identity(30)))
}

fn mask_values() -> Result<f64> {
    let edges = flowroute_core::EdgeList::from_pairs(4, &[(0, 1), (1, 2), (2, 3)], &[1.0; 3])?;
    let flat = make_mask(&[2.0; 3], &edges, 8.0, 0.3);
    let spread = make_mask(&[0.1, 5.0, 1.0], &edges, 8.0, 0.5);
    let a = (flat[(0, 1)] - sigmoid(8.0 * (0.5 - 0.3))).abs();
    let b = (spread[(1, 2)] - sigmoid(4.0)).abs();
    Ok(a.max(b))
}

fn model_gradient(rng: &mut Rng) -> Result<f64> {
    let n = 6;
    let sc = random_connected_sc(n, 0.4, rng);
    let fc = random_fc(n, rng);
    let x = random_fc(n, rng);
    let pair = ConnectomePair::new(sc, fc, Some(x), Some(1))?;
    let inputs = SubjectInputs::prepare(&pair, &PrepareOptions::default())?;
    let config = ModelConfig {
        d_in: n,
        d_model: 8,
        n_layers: 1,
        resistance_hidden: 8,
        gate_hidden: 8,
        degree_buckets: 8,
        dropout: 0.0,
        ..Default::default()
    };
    let model = Model::init(config, rng)?;
    let (_, grads) = model.loss_and_grads(&inputs, None)?;
    let mut worst: f64 = 0.0;
    let h = 1e-5;
    for id in 0..model.params().len() {
        let k = model.params().get(id).as_slice().len() / 2;
        let mut plus = model.clone();
        plus.params_mut().get_mut(id).as_mut_slice()[k] += h;
        let mut minus = model.clone();
        minus.params_mut().get_mut(id).as_mut_slice()[k] -= h;
        let fd = (plus.loss(&inputs)? - minus.loss(&inputs)?) / (2.0 * h);
        let an = grads[id].as_ref().map_or(0.0, |g| g.as_slice()[k]);
        worst = worst.max(rel(an, fd));
    }
    Ok(worst)
}

pub fn checks(seed: u64) -> Result<Vec<Check>> {
    let streams = Streams::new(seed);
    let (cap, dem) = adjoint_gradients(&mut streams.stream("adjoint"))?;
    Ok(vec![
        check(
            "flow closed form vs all-pairs oracle",
            oracle_equivalence(&mut streams.stream("oracle"))?,
            1e-8,
        ),
        check(
            "demand outer-product identity",
            demand_identity(&mut streams.stream("demand"))?,
            1e-10,
        ),
        check("adjoint capacity gradient vs finite differences", cap, 1e-4),
        check("adjoint demand gradient vs finite differences", dem, 1e-4),
        check("resistance exact values", resistance_values()?, 1e-9),
        check(
            "regularized Laplacian solve residual",
            solve_residual(&mut streams.stream("solve"))?,
            1e-8,
        ),
        check("routing mask exact values", mask_values()?, 1e-12),
        check(
            "model gradient vs finite differences",
            model_gradient(&mut streams.stream("model"))?,
            1e-3,
        ),
    ])
}

pub fn run(a: &SelftestArgs, command: &Command) -> Result<()> {
    let results = checks(a.seed)?;
    let width = results.iter().map(|c| c.name.len()).max().unwrap_or(0);
    println!(
        "{:<width$}  {:>10}  {:>9}  result",
        "check", "error", "tolerance"
    );
    for c in &results {
        println!(
            "{:<width$}  {:>10.3e}  {:>9.0e}  {}",
            c.name,
            c.error,
            c.tolerance,
            if c.pass { "PASS" } else { "FAIL" }
        );
    }
    if let Some(out) = &a.out {
        write_json(out.join("selftest.json"), &results)?;
        crate::commands::echo(out, command, ())?;
    }
    let failed: Vec<&str> = results.iter().filter(|c| !c.pass).map(|c| c.name).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Numerical(format!(
            "selftest failed: {}",
            failed.join("; ")
        )))
    }
}
