//! Acceptance suite: one `[PASS]`/`[FAIL]` line per criterion.
//!
//! Runs single-threaded. Exits nonzero if any criterion fails.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use flowroute_core::nn::autodiff::sigmoid;
use flowroute_core::nn::{
    checkpoint, make_mask, train, MaskMode, Model, ModelConfig, PrepareOptions, SubjectInputs,
    TrainConfig,
};
use flowroute_core::rng::{Rng, Streams};
use flowroute_core::spectral::Cholesky;
use flowroute_core::stats::{fdr_bh, topk_edges, FdrMethod, GroupStats};
use flowroute_core::synth::{generate, random_connected_sc, random_fc, SynthDataset, SynthSpec};
use flowroute_core::{
    build_edge_list, build_laplacian, effective_resistance, ConnectomePair, DemandLaplacian,
    FlowEvaluator, FlowGraph, Matrix,
};
use rand::Rng as _;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn rng(name: &str) -> Rng {
    Streams::new(20_240_601).stream(name)
}

// Dense Gaussian elimination with partial pivoting.
fn gauss_solve(a: &Matrix, b: &Matrix) -> Matrix {
    let n = a.rows();
    let k = b.cols();
    let mut m: Vec<Vec<f64>> = (0..n)
        .map(|i| a.row(i).iter().chain(b.row(i)).copied().collect())
        .collect();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&x, &y| m[x][col].abs().total_cmp(&m[y][col].abs()))
            .unwrap();
        m.swap(col, piv);
        for r in col + 1..n {
            let f = m[r][col] / m[col][col];
            if f != 0.0 {
                for c in col..n + k {
                    m[r][c] -= f * m[col][c];
                }
            }
        }
    }
    let mut x = Matrix::zeros(n, k);
    for c in 0..k {
        for i in (0..n).rev() {
            let mut s = m[i][n + c];
            for j in i + 1..n {
                s -= m[i][j] * x[(j, c)];
            }
            x[(i, c)] = s / m[i][i];
        }
    }
    x
}

fn dense_laplacian(sc: &Matrix, delta: f64) -> Matrix {
    let n = sc.rows();
    Matrix::from_fn(n, n, |i, j| {
        if i == j {
            (0..n).map(|k| sc[(i, k)]).sum::<f64>() - sc[(i, i)] + delta
        } else {
            -sc[(i, j)]
        }
    })
}

/// Brute force: one solve per ordered pair, `phi_ij = sum_{s != t} |fc_st| c_ij (p_i - p_j)^2`.
fn oracle_flow(sc: &Matrix, fc: &Matrix, delta: f64) -> Vec<f64> {
    let n = sc.rows();
    let l = dense_laplacian(sc, delta);
    let mut rhs = Matrix::zeros(n, n * n);
    for s in 0..n {
        for t in 0..n {
            if s != t {
                rhs[(s, s * n + t)] += 1.0;
                rhs[(t, s * n + t)] -= 1.0;
            }
        }
    }
    let p = gauss_solve(&l, &rhs);
    let mut phi = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if sc[(i, j)] <= 0.0 {
                continue;
            }
            let mut total = 0.0;
            for s in 0..n {
                for t in 0..n {
                    if s != t {
                        let d = p[(i, s * n + t)] - p[(j, s * n + t)];
                        total += fc[(s, t)].abs() * sc[(i, j)] * d * d;
                    }
                }
            }
            phi.push(total);
        }
    }
    phi
}

fn rel_dev(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-12))
        .fold(0.0, f64::max)
}

fn closed_form(sc: &Matrix, fc: &Matrix, delta: f64) -> Vec<f64> {
    let graph = FlowGraph::from_weights(build_edge_list(sc, 0.0).unwrap(), delta).unwrap();
    graph
        .aggregate_flow(&DemandLaplacian::from_fc(fc).unwrap())
        .unwrap()
        .phi
}

fn c1_oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut r = rng("c1");
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let n = r.random_range(3..=15);
        let sc = random_connected_sc(n, r.random_range(0.1..0.6), &mut r);
        let fc = random_fc(n, &mut r);
        worst = worst.max(rel_dev(
            &closed_form(&sc, &fc, 1e-6),
            &oracle_flow(&sc, &fc, 1e-6),
        ));
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst < 1e-8 && secs < 10.0,
        format!("50 instances, max rel dev {worst:.2e} (< 1e-8), {secs:.2} s (< 10 s)"),
    )
}

fn c2_demand_identity() -> Outcome {
    let mut r = rng("c2");
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let n = r.random_range(2..=25);
        let fc = random_fc(n, &mut r);
        let mut sum = Matrix::zeros(n, n);
        for s in 0..n {
            for t in 0..n {
                let w = fc[(s, t)].abs();
                for a in [s, t] {
                    for b in [s, t] {
                        let ea = if a == s { 1.0 } else { -1.0 };
                        let eb = if b == s { 1.0 } else { -1.0 };
                        if s != t {
                            sum[(a, b)] += w * ea * eb;
                        }
                    }
                }
            }
        }
        let lfc = DemandLaplacian::from_fc(&fc).unwrap();
        worst = worst.max(sum.max_abs_diff(&lfc.matrix().scale(2.0)));
    }
    outcome(
        worst <= 1e-10,
        format!("20 FC matrices, max entry diff {worst:.2e} (<= 1e-10)"),
    )
}

fn c3_gradients() -> Outcome {
    let mut r = rng("c3");
    let delta = 1e-6;
    let (mut cap_err, mut fc_err): (f64, f64) = (0.0, 0.0);
    let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-6);
    for _ in 0..3 {
        let n = 10;
        let sc = random_connected_sc(n, 0.3, &mut r);
        let fc = random_fc(n, &mut r);
        let edges = build_edge_list(&sc, 0.0).unwrap();
        let caps = edges.weights().to_vec();
        let upstream: Vec<f64> = (0..edges.len())
            .map(|_| r.random_range(-1.0..1.0))
            .collect();
        let objective = |caps: &[f64], fc: &Matrix| -> f64 {
            let g = FlowGraph::new(edges.clone(), caps.to_vec(), delta).unwrap();
            let phi = g
                .aggregate_flow(&DemandLaplacian::from_fc(fc).unwrap())
                .unwrap()
                .phi;
            phi.iter().zip(&upstream).map(|(p, u)| p * u).sum()
        };
        let mut ev = FlowEvaluator::new(
            FlowGraph::new(edges.clone(), caps.clone(), delta).unwrap(),
            DemandLaplacian::from_fc(&fc).unwrap(),
        )
        .unwrap();
        ev.forward().unwrap();
        let grads = ev.gradient_adjoint(&upstream).unwrap();
        for k in 0..caps.len() {
            let h = 1e-6 * caps[k];
            let (mut p, mut m) = (caps.clone(), caps.clone());
            p[k] += h;
            m[k] -= h;
            let fd = (objective(&p, &fc) - objective(&m, &fc)) / (2.0 * h);
            cap_err = cap_err.max(rel(grads.capacities[k], fd));
        }
        let d = &grads.demand;
        for s in 0..n {
            for t in s + 1..n {
                // |fc_st| enters L_fc at (s,s), (t,t) with +1 and (s,t), (t,s) with -1
                let sign = fc[(s, t)].signum();
                let chain = sign * (d[(s, s)] + d[(t, t)] - d[(s, t)] - d[(t, s)]);
                let h = 1e-6;
                let (mut p, mut m) = (fc.clone(), fc.clone());
                for (x, v) in [(&mut p, h), (&mut m, -h)] {
                    x[(s, t)] += v;
                    x[(t, s)] += v;
                }
                let fd = (objective(&caps, &p) - objective(&caps, &m)) / (2.0 * h);
                fc_err = fc_err.max(rel(chain, fd));
            }
        }
    }

    let mut model_err: f64 = 0.0;
    for mode in [MaskMode::Additive, MaskMode::Multiplicative] {
        let n = 8;
        let sc = random_connected_sc(n, 0.4, &mut r);
        let fc = random_fc(n, &mut r);
        let x = Matrix::from_fn(n, 4, |_, _| r.random_range(-1.0..1.0));
        let pair = ConnectomePair::new(sc, fc, Some(x), Some(1)).unwrap();
        let inputs = SubjectInputs::prepare(&pair, &PrepareOptions::default()).unwrap();
        let cfg = ModelConfig {
            d_in: 4,
            dropout: 0.0,
            mask_mode: mode,
            ..Default::default()
        };
        let model = Model::init(cfg, &mut r).unwrap();
        let (_, grads) = model.loss_and_grads(&inputs, None).unwrap();
        for _ in 0..20 {
            let id = r.random_range(0..model.params().len());
            let k = r.random_range(0..model.params().get(id).as_slice().len());
            let h = 1e-5;
            let mut plus = model.clone();
            plus.params_mut().get_mut(id).as_mut_slice()[k] += h;
            let mut minus = model.clone();
            minus.params_mut().get_mut(id).as_mut_slice()[k] -= h;
            let fd = (plus.loss(&inputs).unwrap() - minus.loss(&inputs).unwrap()) / (2.0 * h);
            let an = grads[id].as_ref().map_or(0.0, |g| g.as_slice()[k]);
            model_err = model_err.max(rel(an, fd));
        }
    }
    outcome(
        cap_err < 1e-4 && fc_err < 1e-4 && model_err < 1e-3,
        format!(
            "N=10 flow: capacity {cap_err:.2e}, FC {fc_err:.2e} (< 1e-4); model, 40 sampled params: {model_err:.2e} (< 1e-3)"
        ),
    )
}

fn c4_resistance() -> Outcome {
    let c = 2.5;
    let two = Matrix::from_rows(&[vec![0.0, c], vec![c, 0.0]]).unwrap();
    let e_two = (effective_resistance(&two).unwrap().get(0, 1) - 1.0 / c).abs();
    let tri = Matrix::from_fn(3, 3, |i, j| if i == j { 0.0 } else { 1.0 });
    let rt = effective_resistance(&tri).unwrap();
    let e_tri = (0..3)
        .flat_map(|i| (0..3).filter(move |&j| j != i).map(move |j| (i, j)))
        .map(|(i, j)| (rt.get(i, j) - 2.0 / 3.0).abs())
        .fold(0.0, f64::max);

    let mut r = rng("c4");
    let mut axioms = true;
    let mut monotone = true;
    let mut scaling: f64 = 0.0;
    for _ in 0..100 {
        let n = r.random_range(2..=20);
        let sc = random_connected_sc(n, r.random_range(0.05..0.5), &mut r);
        let rm = effective_resistance(&sc).unwrap();
        let tol = 1e-10 * rm.matrix().max_abs().max(1.0);
        for i in 0..n {
            axioms &= rm.get(i, i).abs() <= tol;
            for j in 0..n {
                axioms &= (rm.get(i, j) - rm.get(j, i)).abs() <= tol;
                if i != j {
                    axioms &= rm.get(i, j) > 0.0;
                }
                for k in 0..n {
                    axioms &= rm.get(i, k) <= rm.get(i, j) + rm.get(j, k) + tol;
                }
            }
        }
        let (a, b) = (r.random_range(0..n), r.random_range(0..n));
        if a != b {
            let mut more = sc.clone();
            let w = r.random_range(0.1..2.0);
            more[(a, b)] += w;
            more[(b, a)] += w;
            let rm2 = effective_resistance(&more).unwrap();
            for i in 0..n {
                for j in 0..n {
                    monotone &= rm2.get(i, j) <= rm.get(i, j) + tol;
                }
            }
        }
        let k = r.random_range(0.1..10.0);
        let scaled = effective_resistance(&sc.scale(k)).unwrap();
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    let want = rm.get(i, j) / k;
                    scaling = scaling.max((scaled.get(i, j) - want).abs() / want.abs());
                }
            }
        }
    }
    outcome(
        e_two <= 1e-9 && e_tri <= 1e-9 && axioms && monotone && scaling <= 1e-10,
        format!(
            "two-node {e_two:.1e}, triangle {e_tri:.1e}; 100 graphs: axioms {axioms}, edge-addition monotone {monotone}, scaling rel err {scaling:.1e} (<= 1e-10)"
        ),
    )
}

fn best_of<F: FnMut()>(reps: usize, mut f: F) -> Duration {
    (0..reps)
        .map(|_| {
            let t = Instant::now();
            f();
            t.elapsed()
        })
        .min()
        .unwrap()
}

fn c5_solver() -> Outcome {
    let mut r = rng("c5");
    let mut worst: f64 = 0.0;
    for n in [2, 5, 10, 20, 35, 50] {
        let sc = random_connected_sc(n, 0.3, &mut r);
        let edges = build_edge_list(&sc, 0.0).unwrap();
        let lap = build_laplacian(&edges, edges.weights(), 1e-6).unwrap();
        let inv = gauss_solve(lap.matrix(), &Matrix::identity(n));
        let rhs = Matrix::from_fn(n, 7, |_, _| r.random_range(-1.0..1.0));
        let want = inv.matmul(&rhs).unwrap();
        let got = lap.solve(&rhs).unwrap();
        worst = worst.max(got.max_abs_diff(&want) / want.max_abs());
    }

    let n = 200;
    let sc = random_connected_sc(n, 0.05, &mut r);
    let edges = build_edge_list(&sc, 0.0).unwrap();
    let lap = build_laplacian(&edges, edges.weights(), 1e-6).unwrap();
    let l = lap.matrix().clone();
    let m = edges.len();
    let columns: Vec<Vec<f64>> = edges
        .edges()
        .iter()
        .map(|&(i, j)| {
            let mut b = vec![0.0; n];
            b[i] = 1.0;
            b[j] = -1.0;
            b
        })
        .collect();
    let mut sink = 0.0;
    let factor = Cholesky::factor(&l).unwrap();
    let reuse = best_of(3, || {
        for b in &columns[1..] {
            sink += factor.solve_vec(b).unwrap()[0];
        }
    });
    let refactor = best_of(3, || {
        for b in &columns[1..] {
            sink += Cholesky::factor(&l).unwrap().solve_vec(b).unwrap()[0];
        }
    });
    std::hint::black_box(sink);
    let speedup = refactor.as_secs_f64() / reuse.as_secs_f64();
    outcome(
        worst < 1e-8 && speedup >= 5.0,
        format!(
            "N<=50 rel dev vs dense inverse {worst:.2e} (< 1e-8); N=200, solves 2..{m}: factor-once {:.1} ms vs refactor {:.1} ms, speedup {speedup:.0}x (>= 5x)",
            reuse.as_secs_f64() * 1e3,
            refactor.as_secs_f64() * 1e3
        ),
    )
}

fn c6_invariance() -> Outcome {
    let mut r = rng("c6");
    let mut flip_err: f64 = 0.0;
    for _ in 0..20 {
        let n = r.random_range(3..=20);
        let sc = random_connected_sc(n, 0.3, &mut r);
        let fc = random_fc(n, &mut r);
        let edges = build_edge_list(&sc, 0.0).unwrap();
        let lap = build_laplacian(&edges, edges.weights(), 1e-6).unwrap();
        let lfc = DemandLaplacian::from_fc(&fc).unwrap();
        let mut bt = Matrix::zeros(n, edges.len());
        for (k, &(i, j)) in edges.edges().iter().enumerate() {
            let s = if r.random::<bool>() { 1.0 } else { -1.0 };
            bt[(i, k)] = s;
            bt[(j, k)] = -s;
        }
        let g = lap.solve(&bt).unwrap();
        let fg = lfc.matrix().matmul(&g).unwrap();
        let flipped: Vec<f64> = (0..edges.len())
            .map(|k| 2.0 * edges.weights()[k] * (0..n).map(|a| g[(a, k)] * fg[(a, k)]).sum::<f64>())
            .collect();
        flip_err = flip_err.max(rel_dev(&flipped, &closed_form(&sc, &fc, 1e-6)));
    }

    let mut logit_err: f64 = 0.0;
    for _ in 0..5 {
        let n = 12;
        let sc = random_connected_sc(n, 0.3, &mut r);
        let fc = random_fc(n, &mut r);
        let x = Matrix::from_fn(n, 5, |_, _| r.random_range(-1.0..1.0));
        let pair = ConnectomePair::new(sc, fc, Some(x), Some(0)).unwrap();
        let mut perm: Vec<usize> = (0..n).collect();
        rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut r);
        let moved = pair.permuted(&perm).unwrap();
        let model = Model::init(
            ModelConfig {
                d_in: 5,
                dropout: 0.0,
                ..Default::default()
            },
            &mut r,
        )
        .unwrap();
        let logits = |p: &ConnectomePair| {
            model
                .infer(&SubjectInputs::prepare(p, &PrepareOptions::default()).unwrap())
                .unwrap()
                .logits
        };
        let (a, b) = (logits(&pair), logits(&moved));
        logit_err = logit_err.max(
            a.iter()
                .zip(&b)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max),
        );
    }
    outcome(
        flip_err <= 1e-12 && logit_err <= 1e-8,
        format!("orientation flips rel dev {flip_err:.1e} (<= 1e-12); relabeled logits {logit_err:.1e} (<= 1e-8)"),
    )
}

fn c7_mask() -> Outcome {
    let logistic = |x: f64| 1.0 / (1.0 + (-x).exp());
    let mut r = rng("c7");
    let mut ok = true;
    let mut flat_err: f64 = 0.0;
    for _ in 0..50 {
        let n = r.random_range(3..=15);
        let edges = build_edge_list(&random_connected_sc(n, 0.3, &mut r), 0.0).unwrap();
        let phi: Vec<f64> = (0..edges.len())
            .map(|_| r.random_range(0.0..10.0))
            .collect();
        let (tau, theta) = (r.random_range(0.5..12.0), r.random_range(0.0..1.0));
        let m = make_mask(&phi, &edges, tau, theta);
        ok &= m.asymmetry() == 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    ok &= m[(i, j)] > 0.0 && m[(i, j)] < 1.0;
                }
            }
        }
        let e = edges.edges();
        for a in 0..e.len() {
            for b in 0..e.len() {
                if phi[a] > phi[b] {
                    ok &= m[e[a]] >= m[e[b]];
                }
            }
        }
        let flat = make_mask(&vec![1.7; e.len()], &edges, tau, theta);
        flat_err = flat_err.max((flat[e[0]] - logistic(tau * (0.5 - theta))).abs());
    }
    let edges = build_edge_list(&random_connected_sc(10, 0.3, &mut r), 0.0).unwrap();
    let phi: Vec<f64> = (0..edges.len()).map(|k| 0.5 + k as f64).collect();
    let m = make_mask(&phi, &edges, 8.0, 0.5);
    let top = edges.edges()[edges.len() - 1];
    let max_err = (m[top] - logistic(4.0))
        .abs()
        .max((sigmoid(4.0) - logistic(4.0)).abs());
    outcome(
        ok && flat_err <= 1e-12 && max_err <= 1e-12,
        format!("range/symmetry/monotonicity on 50 graphs {ok}; all-equal {flat_err:.1e}; max edge vs sigmoid(4) {max_err:.1e} (<= 1e-12)"),
    )
}

fn prepare(ds: &SynthDataset) -> Vec<SubjectInputs> {
    ds.pairs()
        .unwrap()
        .iter()
        .map(|p| SubjectInputs::prepare(p, &PrepareOptions::default()).unwrap())
        .collect()
}

struct Runs {
    acc: Vec<f64>,
    auc: Vec<f64>,
    elapsed: f64,
    first: Option<Model>,
}

fn train_seeds(subjects: &[SubjectInputs]) -> Runs {
    let start = Instant::now();
    let mut runs = Runs {
        acc: Vec::new(),
        auc: Vec::new(),
        elapsed: 0.0,
        first: None,
    };
    for seed in 0..3 {
        let out = train(subjects, &TrainConfig::default(), seed).unwrap();
        runs.acc.push(out.test.acc);
        runs.auc.push(out.test.auc);
        runs.first.get_or_insert(out.model);
    }
    runs.elapsed = start.elapsed().as_secs_f64();
    runs
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn planted_spec() -> SynthSpec {
    SynthSpec {
        n_nodes: 30,
        n_per_class: 100,
        rho: 1.0,
        noise: 0.05,
        seed: 0,
        ..Default::default()
    }
}

fn c8_end_to_end(planted: &SynthDataset) -> (Outcome, Option<Model>) {
    let runs = train_seeds(&prepare(planted));
    let null = generate(&SynthSpec {
        rho: 0.0,
        ..planted_spec()
    })
    .unwrap();
    let null_runs = train_seeds(&prepare(&null));
    let (acc, auc, null_auc) = (mean(&runs.acc), mean(&runs.auc), mean(&null_runs.auc));
    let fmt = |v: &[f64]| {
        v.iter()
            .map(|x| format!("{x:.3}"))
            .collect::<Vec<_>>()
            .join("/")
    };
    let pass =
        acc >= 0.90 && auc >= 0.95 && runs.elapsed < 600.0 && (0.4..=0.6).contains(&null_auc);
    (
        outcome(
            pass,
            format!(
                "planted: test acc {acc:.3} [{}] (>= 0.90), AUC {auc:.3} [{}] (>= 0.95), {:.0} s (< 600 s); null: AUC {null_auc:.3} [{}] (in [0.4, 0.6]), {:.0} s",
                fmt(&runs.acc),
                fmt(&runs.auc),
                runs.elapsed,
                fmt(&null_runs.auc),
                null_runs.elapsed
            ),
        ),
        runs.first,
    )
}

/// Returns (significant with patient > control, in top-100) counts over planted edges.
fn recovery(
    planted: &SynthDataset,
    flows: &[Vec<f64>],
    edges: &[(usize, usize)],
) -> (usize, usize) {
    let labels: Vec<usize> = planted.subjects.iter().map(|s| s.label).collect();
    let group = |label: usize| {
        let rows: Vec<&Vec<f64>> = flows
            .iter()
            .zip(&labels)
            .filter(|(_, &l)| l == label)
            .map(|(f, _)| f)
            .collect();
        Matrix::from_fn(rows.len(), edges.len(), |s, m| rows[s][m])
    };
    let stats = GroupStats::compute(edges, &group(1), &group(0), 0.05, FdrMethod::Bh).unwrap();
    let truth = &planted.metadata.planted_edges;
    let sig = stats
        .edges
        .iter()
        .filter(|e| e.reject && e.direction == 1 && truth.contains(&(e.i, e.j)))
        .count();
    let mean_phi: Vec<f64> = (0..edges.len())
        .map(|m| mean(&flows.iter().map(|f| f[m]).collect::<Vec<_>>()))
        .collect();
    let (top, _) = topk_edges(edges, &mean_phi, 100).unwrap();
    let in_top = top.iter().filter(|e| truth.contains(&(e.i, e.j))).count();
    (sig, in_top)
}

fn c9_interpretability(planted: &SynthDataset, model: Option<&Model>) -> Outcome {
    let edges = build_edge_list(&planted.backbone, 0.0)
        .unwrap()
        .edges()
        .to_vec();
    let flows: Vec<Vec<f64>> = planted
        .subjects
        .iter()
        .map(|s| closed_form(&s.sc, &s.fc, 1e-6))
        .collect();
    let (sig, in_top) = recovery(planted, &flows, &edges);
    let k = planted.metadata.planted_edges.len();
    let bh = fdr_bh(&[0.01, 0.02, 0.03, 0.04, 0.2], 0.05);
    let bh_ok = bh == [true, true, true, true, false];
    let mut pass = sig * 10 >= k * 8 && in_top * 2 >= k && bh_ok;
    let mut detail = format!(
        "SC-capacity flow: {sig}/{k} planted edges significant with patient > control, {in_top}/{k} in top-100"
    );
    match model {
        Some(m) => {
            let inputs = prepare(planted);
            let gated: Vec<Vec<f64>> = inputs.iter().map(|s| m.infer(s).unwrap().flow).collect();
            let (gs, gt) = recovery(planted, &gated, &edges);
            pass &= gs * 10 >= k * 8 && gt * 2 >= k;
            detail.push_str(&format!(
                "; trained-gate flow: {gs}/{k} significant, {gt}/{k} in top-100"
            ));
        }
        None => {
            pass = false;
            detail.push_str("; no trained model");
        }
    }
    detail.push_str(&format!(
        " (>= 80% and >= 50%); BH example {}",
        if bh_ok { "4 rejections" } else { "wrong" }
    ));
    outcome(pass, detail)
}

fn files(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(files(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}

fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    files(dir)
        .into_iter()
        .map(|p| {
            (
                p.strip_prefix(dir).unwrap().to_path_buf(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect()
}

fn c10_determinism() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_flowroute");
    let root = tempfile::tempdir().unwrap();
    let work = root.path().join("work");
    let inputs = root.path().join("inputs");
    std::fs::create_dir_all(&inputs).unwrap();
    std::fs::write(
        inputs.join("spec.json"),
        r#"{"n_nodes": 12, "n_per_class": 12, "n_planted": 3, "seed": 5}"#,
    )
    .unwrap();
    std::fs::write(
        inputs.join("train.json"),
        r#"{"epochs": 3, "batch_size": 8, "model": {"d_model": 16, "resistance_hidden": 16, "gate_hidden": 16}}"#,
    )
    .unwrap();
    let w = |s: &str| work.join(s).to_string_lossy().into_owned();
    let i = |s: &str| inputs.join(s).to_string_lossy().into_owned();
    let commands: Vec<Vec<String>> = vec![
        vec![
            "gen-synth".into(),
            "--spec".into(),
            i("spec.json"),
            "--out".into(),
            w("data"),
        ],
        vec![
            "resistance".into(),
            "--manifest".into(),
            w("data/manifest.json"),
            "--out".into(),
            w("erd"),
        ],
        vec![
            "compute-flow".into(),
            "--random".into(),
            "10".into(),
            "--seed".into(),
            "3".into(),
            "--oracle".into(),
            "--out".into(),
            w("flow"),
        ],
        vec![
            "compute-flow".into(),
            "--manifest".into(),
            w("data/manifest.json"),
            "--uniform".into(),
            "--out".into(),
            w("flow-uniform"),
        ],
        vec![
            "train".into(),
            "--manifest".into(),
            w("data/manifest.json"),
            "--config".into(),
            i("train.json"),
            "--seed".into(),
            "2".into(),
            "--out".into(),
            w("train"),
        ],
        vec![
            "eval".into(),
            "--manifest".into(),
            w("data/manifest.json"),
            "--ckpt".into(),
            w("train/model.ckpt"),
            "--out".into(),
            w("eval"),
        ],
        vec![
            "analyze-groups".into(),
            "--manifest".into(),
            w("data/manifest.json"),
            "--ckpt".into(),
            w("train/model.ckpt"),
            "--topk".into(),
            "10".into(),
            "--out".into(),
            w("groups"),
        ],
        vec![
            "analyze-groups".into(),
            "--manifest".into(),
            w("data/manifest.json"),
            "--from-sc".into(),
            "--log-flow".into(),
            "--out".into(),
            w("groups-sc"),
        ],
        vec!["selftest".into(), "--out".into(), w("selftest")],
    ];
    let run_all = || -> Result<Vec<(PathBuf, Vec<u8>)>, String> {
        let _ = std::fs::remove_dir_all(&work);
        for args in &commands {
            let out = Command::new(bin)
                .args(args)
                .env("FLOWROUTE_THREADS", "1")
                .output()
                .unwrap();
            if !out.status.success() {
                return Err(format!(
                    "{} failed: {}",
                    args[0],
                    String::from_utf8_lossy(&out.stderr)
                ));
            }
        }
        Ok(snapshot(&work))
    };
    let (first, second) = match (run_all(), run_all()) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => return outcome(false, e),
    };
    let differing: Vec<String> = first
        .iter()
        .zip(&second)
        .filter(|(a, b)| a != b)
        .map(|(a, _)| a.0.display().to_string())
        .collect();
    let same = first.len() == second.len() && differing.is_empty();

    let ckpt = work.join("train/model.ckpt");
    let bytes = std::fs::read(&ckpt).unwrap();
    let model = checkpoint::load(&ckpt).unwrap();
    let round_trip = checkpoint::encode(&model) == bytes
        && checkpoint::decode(&checkpoint::encode(&model), &ckpt)
            .map(|m| {
                m.params()
                    .iter()
                    .zip(model.params().iter())
                    .all(|((_, a), (_, b))| {
                        a.as_slice()
                            .iter()
                            .zip(b.as_slice())
                            .all(|(x, y)| x.to_bits() == y.to_bits())
                    })
            })
            .unwrap_or(false);
    outcome(
        same && round_trip,
        format!(
            "{} commands run twice, {} files, {} differing{}; checkpoint round-trip bit-exact {round_trip}",
            commands.len(),
            first.len(),
            differing.len(),
            if differing.is_empty() { String::new() } else { format!(" ({})", differing.join(", ")) }
        ),
    )
}

fn main() {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let failed = pool.install(|| {
        let mut failed = 0;
        let mut report = |id: usize, name: &str, o: Outcome| {
            println!(
                "[{}] {id}. {name}: {}",
                if o.pass { "PASS" } else { "FAIL" },
                o.detail
            );
            if !o.pass {
                failed += 1;
            }
        };
        report(
            1,
            "closed-form flow vs all-pairs oracle",
            c1_oracle_equivalence(),
        );
        report(2, "demand outer-product identity", c2_demand_identity());
        report(
            3,
            "adjoint and model gradients vs finite differences",
            c3_gradients(),
        );
        report(4, "effective resistance checks", c4_resistance());
        report(5, "solver consistency and factor reuse", c5_solver());
        report(6, "orientation and relabeling invariance", c6_invariance());
        report(7, "routing mask contract", c7_mask());
        let planted = generate(&planted_spec()).unwrap();
        let (o8, model) = c8_end_to_end(&planted);
        report(8, "synthetic end-to-end training", o8);
        report(
            9,
            "planted edge recovery",
            c9_interpretability(&planted, model.as_ref()),
        );
        report(10, "determinism", c10_determinism());
        failed
    });
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
