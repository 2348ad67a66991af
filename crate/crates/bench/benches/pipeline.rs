use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use flowroute_bench::{instance, subject};
use flowroute_core::flow::oracle::aggregate_flow_oracle;
use flowroute_core::nn::{Model, ModelConfig, PrepareOptions, SubjectInputs};
use flowroute_core::rng::Streams;
use flowroute_core::spectral::Cholesky;
use flowroute_core::{
    build_edge_list, build_laplacian, effective_resistance, DemandLaplacian, FlowGraph,
};

fn flow(c: &mut Criterion) {
    let mut group = c.benchmark_group("aggregate_flow");
    for n in [30, 100, 200] {
        let (sc, fc) = instance(n, 6.0, 1);
        let demand = DemandLaplacian::from_fc(&fc).unwrap();
        let edges = build_edge_list(&sc, 0.0).unwrap();
        group.bench_with_input(BenchmarkId::new("closed_form", n), &n, |b, _| {
            b.iter(|| {
                let graph = FlowGraph::from_weights(edges.clone(), 1e-6).unwrap();
                graph.aggregate_flow(&demand).unwrap()
            })
        });
    }
    let (sc, fc) = instance(15, 4.0, 2);
    let graph = FlowGraph::from_weights(build_edge_list(&sc, 0.0).unwrap(), 1e-6).unwrap();
    group.bench_function("all_pairs_oracle/15", |b| {
        b.iter(|| aggregate_flow_oracle(&graph, &fc, false).unwrap())
    });
    group.finish();
}

fn solver(c: &mut Criterion) {
    let mut group = c.benchmark_group("laplacian");
    for n in [50, 200] {
        let (sc, _) = instance(n, 6.0, 3);
        let edges = build_edge_list(&sc, 0.0).unwrap();
        let lap = build_laplacian(&edges, edges.weights(), 1e-6).unwrap();
        let rhs: Vec<f64> = (0..n)
            .map(|i| {
                if i == 0 {
                    1.0
                } else if i == 1 {
                    -1.0
                } else {
                    0.0
                }
            })
            .collect();
        group.bench_with_input(BenchmarkId::new("factor", n), &n, |b, _| {
            b.iter(|| Cholesky::factor(lap.matrix()).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("solve_cached", n), &n, |b, _| {
            b.iter(|| lap.solve_vec(&rhs).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("resistance", n), &n, |b, _| {
            b.iter(|| effective_resistance(&sc).unwrap())
        });
    }
    group.finish();
}

fn model(c: &mut Criterion) {
    let pair = subject(30, 4);
    let inputs = SubjectInputs::prepare(&pair, &PrepareOptions::default()).unwrap();
    let config = ModelConfig {
        d_in: 30,
        dropout: 0.0,
        ..Default::default()
    };
    let model = Model::init(config, &mut Streams::new(5).stream("init")).unwrap();
    let mut group = c.benchmark_group("model");
    group.bench_function("prepare/30", |b| {
        b.iter(|| SubjectInputs::prepare(&pair, &PrepareOptions::default()).unwrap())
    });
    group.bench_function("infer/30", |b| b.iter(|| model.infer(&inputs).unwrap()));
    group.bench_function("loss_and_grads/30", |b| {
        b.iter(|| model.loss_and_grads(&inputs, None).unwrap())
    });
    group.finish();
}

criterion_group!(benches, flow, solver, model);
criterion_main!(benches);
