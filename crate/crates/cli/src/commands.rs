use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use flowroute_core::flow::max_relative_deviation;
use flowroute_core::flow::oracle::aggregate_flow_oracle;
use flowroute_core::io::{
    format_f64, read_json, read_matrix_csv, write_json, write_matrix_csv, write_text, Manifest,
};
use flowroute_core::nn::metrics::classification_metrics;
use flowroute_core::nn::{checkpoint, train, Model, PrepareOptions, SubjectInputs, TrainConfig};
use flowroute_core::resistance::{effective_resistance_with, ResistanceOptions};
use flowroute_core::rng::Streams;
use flowroute_core::stats::{topk_edges, FdrMethod, GroupStats};
use flowroute_core::synth::{generate, random_connected_sc, random_fc, SynthSpec};
use flowroute_core::{
    build_edge_list, ConnectomePair, DemandLaplacian, Error, FlowGraph, Matrix, Result,
};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::args::{
    AnalyzeArgs, CapacityArgs, Command, ComputeFlowArgs, EvalArgs, GenSynthArgs, InputArgs,
    ResistanceArgs, TrainArgs,
};

const ORACLE_FLOOR: f64 = 1e-12;

/// Written as `config.json` beside every command's outputs.
#[derive(Serialize)]
struct Echo<'a, R: Serialize> {
    version: &'static str,
    #[serde(flatten)]
    args: &'a Command,
    resolved: R,
}

pub(crate) fn echo<R: Serialize>(out: &Path, command: &Command, resolved: R) -> Result<()> {
    write_json(
        out.join("config.json"),
        &Echo {
            version: env!("CARGO_PKG_VERSION"),
            args: command,
            resolved,
        },
    )
}

fn csv_row(out: &mut String, fields: &[String]) {
    out.push_str(&fields.join(","));
    out.push('\n');
}

fn load_manifest(path: &Path) -> Result<(Vec<String>, Vec<ConnectomePair>)> {
    let manifest = Manifest::load(path)?;
    let ids = manifest.entries.iter().map(|e| e.id.clone()).collect();
    Ok((ids, manifest.load_all()?))
}

fn load_pairs(input: &InputArgs) -> Result<(Vec<String>, Vec<ConnectomePair>)> {
    match (&input.manifest, &input.sc, &input.fc) {
        (Some(m), _, _) => load_manifest(m),
        (None, Some(sc), Some(fc)) => {
            let pair = ConnectomePair::new(read_matrix_csv(sc)?, read_matrix_csv(fc)?, None, None)?;
            Ok((vec!["subject".into()], vec![pair]))
        }
        _ => Err(Error::Usage(
            "pass --manifest, or both --sc and --fc".into(),
        )),
    }
}

pub fn run(command: &Command) -> Result<()> {
    match command {
        Command::GenSynth(a) => gen_synth(a, command),
        Command::Resistance(a) => resistance(a, command),
        Command::ComputeFlow(a) => compute_flow(a, command),
        Command::Train(a) => train_cmd(a, command),
        Command::Eval(a) => eval(a, command),
        Command::AnalyzeGroups(a) => analyze(a, command),
        Command::Selftest(a) => crate::selftest::run(a, command),
    }
}

fn gen_synth(a: &GenSynthArgs, command: &Command) -> Result<()> {
    let mut spec: SynthSpec = match &a.spec {
        Some(p) => read_json(p)?,
        None => SynthSpec::default(),
    };
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    let ds = generate(&spec)?;
    let manifest = ds.write(&a.out)?;
    echo(&a.out, command, &spec)?;
    println!(
        "{}",
        json!({
            "manifest": manifest,
            "subjects": ds.subjects.len(),
            "planted_edges": ds.metadata.planted_edges,
            "backbone_edges": ds.metadata.n_backbone_edges,
        })
    );
    Ok(())
}

fn resistance(a: &ResistanceArgs, command: &Command) -> Result<()> {
    let opts = ResistanceOptions {
        regularize: a.regularize,
        pinv_rtol: a.pinv_rtol,
    };
    let (ids, scs): (Vec<String>, Vec<Matrix>) = match (&a.input.manifest, &a.input.sc) {
        (Some(m), _) => {
            let (ids, pairs) = load_manifest(m)?;
            (ids, pairs.into_iter().map(|p| p.sc().clone()).collect())
        }
        (None, Some(sc)) => (vec!["subject".into()], vec![read_matrix_csv(sc)?]),
        _ => return Err(Error::Usage("pass --manifest or --sc".into())),
    };
    let results = scs
        .par_iter()
        .map(|sc| effective_resistance_with(sc, opts))
        .collect::<Result<Vec<_>>>()?;
    let mut regularized = Vec::new();
    for (id, r) in ids.iter().zip(&results) {
        write_matrix_csv(a.out.join(format!("{id}_erd.csv")), r.matrix())?;
        if r.is_regularized() {
            regularized.push(id.clone());
        }
    }
    echo(
        &a.out,
        command,
        json!({ "subjects": ids, "regularized": regularized }),
    )
}

#[derive(Serialize)]
enum CapacitySource {
    Sc,
    Uniform,
    File(PathBuf),
    Checkpoint(PathBuf),
}

fn capacity_source(c: &CapacityArgs) -> CapacitySource {
    match (&c.capacities, &c.ckpt, c.uniform) {
        (Some(p), _, _) => CapacitySource::File(p.clone()),
        (_, Some(p), _) => CapacitySource::Checkpoint(p.clone()),
        (_, _, true) => CapacitySource::Uniform,
        _ => CapacitySource::Sc,
    }
}

fn compute_flow(a: &ComputeFlowArgs, command: &Command) -> Result<()> {
    let (ids, pairs) = match a.random {
        Some(n) => {
            if n < 2 {
                return Err(Error::Usage("--random needs at least 2 nodes".into()));
            }
            let mut rng = Streams::new(a.seed).stream("random-instance");
            let sc = random_connected_sc(n, 0.3, &mut rng);
            let fc = random_fc(n, &mut rng);
            write_matrix_csv(a.out.join("sc.csv"), &sc)?;
            write_matrix_csv(a.out.join("fc.csv"), &fc)?;
            (
                vec!["subject".to_string()],
                vec![ConnectomePair::new(sc, fc, None, None)?],
            )
        }
        None => load_pairs(&a.input)?,
    };
    let source = capacity_source(&a.capacity);
    let model = match &source {
        CapacitySource::Checkpoint(p) => Some(checkpoint::load(p)?),
        _ => None,
    };
    let file_caps = match &source {
        CapacitySource::File(p) => Some(read_matrix_csv(p)?.into_vec()),
        _ => None,
    };
    let opts: PrepareOptions = a.prepare.into();

    let results = pairs
        .par_iter()
        .map(|pair| -> Result<(FlowGraph, Vec<f64>)> {
            let pair = if opts.normalize_sc {
                pair.max_normalized()
            } else {
                pair.clone()
            };
            let edges = build_edge_list(pair.sc(), opts.edge_threshold)?;
            let capacities = match (&source, &model) {
                (CapacitySource::Sc, _) => edges.weights().to_vec(),
                (CapacitySource::Uniform, _) => vec![1.0; edges.len()],
                (CapacitySource::File(_), _) => file_caps.clone().unwrap_or_default(),
                (CapacitySource::Checkpoint(_), Some(m)) => {
                    m.infer(&SubjectInputs::prepare(&pair, &opts)?)?.capacities
                }
                (CapacitySource::Checkpoint(_), None) => unreachable!("checkpoint loaded above"),
            };
            let graph = FlowGraph::new(edges, capacities, a.delta)?;
            let phi = graph
                .aggregate_flow(&DemandLaplacian::from_fc(pair.fc())?)?
                .phi;
            Ok((graph, phi))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut deviations = Vec::new();
    for ((id, pair), (graph, phi)) in ids.iter().zip(&pairs).zip(&results) {
        let mut csv = String::from("i,j,capacity,phi\n");
        for ((&(i, j), &c), &p) in graph
            .edges()
            .edges()
            .iter()
            .zip(graph.capacities())
            .zip(phi)
        {
            csv_row(
                &mut csv,
                &[i.to_string(), j.to_string(), format_f64(c), format_f64(p)],
            );
        }
        let name = if ids.len() == 1 {
            "flow.csv".to_string()
        } else {
            format!("flows/{id}.csv")
        };
        write_text(a.out.join(name), &csv)?;
        if a.oracle {
            let brute = aggregate_flow_oracle(graph, pair.fc(), false)?;
            deviations.push(max_relative_deviation(phi, &brute.phi, ORACLE_FLOOR));
        }
    }
    let max_dev = deviations
        .iter()
        .cloned()
        .fold(None, |acc: Option<f64>, d| {
            Some(acc.map_or(d, |x| x.max(d)))
        });
    let report = json!({
        "subjects": ids,
        "edges": results.iter().map(|(g, _)| g.n_edges()).collect::<Vec<_>>(),
        "oracle_max_relative_deviation": max_dev,
    });
    write_json(a.out.join("report.json"), &report)?;
    echo(&a.out, command, json!({ "capacities": source }))?;
    if let Some(d) = max_dev {
        println!("{}", json!({ "oracle_max_relative_deviation": d }));
    }
    Ok(())
}

fn prepare_all(pairs: &[ConnectomePair], opts: &PrepareOptions) -> Result<Vec<SubjectInputs>> {
    pairs
        .par_iter()
        .map(|p| SubjectInputs::prepare(p, opts))
        .collect()
}

fn train_cmd(a: &TrainArgs, command: &Command) -> Result<()> {
    let mut config: TrainConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => TrainConfig::default(),
    };
    if let Some(delta) = a.delta {
        config.model.delta = delta;
    }
    config.validate()?;
    let (ids, pairs) = load_manifest(&a.manifest)?;
    let subjects = prepare_all(&pairs, &a.prepare.into())?;
    let outcome = train(&subjects, &config, a.seed)?;

    checkpoint::save(&outcome.model, a.out.join("model.ckpt"))?;
    let mut history =
        String::from("epoch,train_loss,val_loss,val_acc,val_pre,val_rec,val_f1,val_auc\n");
    for r in &outcome.history {
        let v = r.val;
        csv_row(
            &mut history,
            &[
                r.epoch.to_string(),
                format_f64(r.train_loss),
                format_f64(r.val_loss),
                format_f64(v.acc),
                format_f64(v.pre),
                format_f64(v.rec),
                format_f64(v.f1),
                format_f64(v.auc),
            ],
        );
    }
    write_text(a.out.join("history.csv"), &history)?;
    let names = |idx: &[usize]| idx.iter().map(|&i| ids[i].clone()).collect::<Vec<_>>();
    write_json(
        a.out.join("split.json"),
        &json!({
            "train": names(&outcome.split.train),
            "val": names(&outcome.split.val),
            "test": names(&outcome.split.test),
        }),
    )?;
    let best = outcome
        .history
        .iter()
        .find(|r| r.epoch == outcome.best_epoch);
    let metrics = json!({
        "best_epoch": outcome.best_epoch,
        "best_val": best,
        "test": outcome.test,
    });
    write_json(a.out.join("metrics.json"), &metrics)?;
    let mut resolved = config.clone();
    resolved.model = outcome.model.config().clone();
    let one_hot: Vec<&String> = ids
        .iter()
        .zip(&pairs)
        .filter(|(_, p)| p.features().is_none())
        .map(|(id, _)| id)
        .collect();
    echo(
        &a.out,
        command,
        json!({ "train": resolved, "prepare": PrepareOptions::from(a.prepare), "one_hot_features": one_hot }),
    )?;
    println!("{metrics}");
    Ok(())
}

fn eval(a: &EvalArgs, command: &Command) -> Result<()> {
    let model = checkpoint::load(&a.ckpt)?;
    let (ids, pairs) = load_manifest(&a.manifest)?;
    let subjects = prepare_all(&pairs, &a.prepare.into())?;
    let probs = subjects
        .par_iter()
        .map(|s| model.infer(s).map(|r| r.probabilities))
        .collect::<Result<Vec<_>>>()?;
    let n_classes = model.config().n_classes;
    let mut csv = String::from("id,label,pred");
    for c in 0..n_classes {
        write!(csv, ",p{c}").expect("write to string");
    }
    csv.push('\n');
    for ((id, s), p) in ids.iter().zip(&subjects).zip(&probs) {
        let pred = (0..p.len()).fold(0, |b, c| if p[c] > p[b] { c } else { b });
        let mut row = vec![
            id.clone(),
            s.label.map_or(String::new(), |l| l.to_string()),
            pred.to_string(),
        ];
        row.extend(p.iter().map(|&x| format_f64(x)));
        csv_row(&mut csv, &row);
    }
    write_text(a.out.join("predictions.csv"), &csv)?;
    let labels: Option<Vec<usize>> = subjects.iter().map(|s| s.label).collect();
    let metrics = match labels {
        Some(labels) if !labels.is_empty() => {
            if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
                return Err(Error::InvalidInput(format!(
                    "label {bad} out of range for {n_classes} classes"
                )));
            }
            let loss = labels
                .iter()
                .zip(&probs)
                .map(|(&y, p)| -p[y].max(f64::MIN_POSITIVE).ln())
                .sum::<f64>()
                / labels.len() as f64;
            json!({ "n": labels.len(), "metrics": classification_metrics(&labels, &probs), "mean_loss": loss })
        }
        _ => json!({ "n": ids.len(), "metrics": null }),
    };
    write_json(a.out.join("metrics.json"), &metrics)?;
    echo(
        &a.out,
        command,
        json!({ "model": model.config(), "prepare": PrepareOptions::from(a.prepare) }),
    )?;
    println!("{metrics}");
    Ok(())
}

struct SubjectFlow {
    edges: Vec<(usize, usize)>,
    phi: Vec<f64>,
}

fn subject_flows(
    a: &AnalyzeArgs,
    pairs: &[ConnectomePair],
    model: Option<&Model>,
) -> Result<Vec<SubjectFlow>> {
    let opts: PrepareOptions = a.prepare.into();
    pairs
        .par_iter()
        .map(|pair| match model {
            Some(m) => {
                let inputs = SubjectInputs::prepare(pair, &opts)?;
                let phi = m.infer(&inputs)?.flow;
                Ok(SubjectFlow {
                    edges: inputs.edges.edges().to_vec(),
                    phi,
                })
            }
            None => {
                let pair = if opts.normalize_sc {
                    pair.max_normalized()
                } else {
                    pair.clone()
                };
                let edges = build_edge_list(pair.sc(), opts.edge_threshold)?;
                let list = edges.edges().to_vec();
                let graph = FlowGraph::from_weights(edges, a.delta)?;
                let phi = graph
                    .aggregate_flow(&DemandLaplacian::from_fc(pair.fc())?)?
                    .phi;
                Ok(SubjectFlow { edges: list, phi })
            }
        })
        .collect()
}

fn analyze(a: &AnalyzeArgs, command: &Command) -> Result<()> {
    let (ids, pairs) = load_manifest(&a.manifest)?;
    let mut patients = Vec::new();
    let mut controls = Vec::new();
    for (k, (id, p)) in ids.iter().zip(&pairs).enumerate() {
        match p.label() {
            Some(1) => patients.push(k),
            Some(0) => controls.push(k),
            other => return Err(Error::InvalidInput(format!(
                "subject {id} has label {other:?}; group analysis needs 0 (control) or 1 (patient)"
            ))),
        }
    }
    let model = a.ckpt.as_ref().map(checkpoint::load).transpose()?;
    let flows = subject_flows(a, &pairs, model.as_ref())?;
    let edges = flows
        .first()
        .map(|f| f.edges.clone())
        .ok_or_else(|| Error::InvalidInput("manifest is empty".into()))?;
    if let Some((k, _)) = flows.iter().enumerate().find(|(_, f)| f.edges != edges) {
        return Err(Error::InvalidInput(format!(
            "subject {} has a different edge set from subject {}; group tests need a shared edge set",
            ids[k], ids[0]
        )));
    }

    let m = edges.len();
    let mean: Vec<f64> = (0..m)
        .map(|e| flows.iter().map(|f| f.phi[e]).sum::<f64>() / flows.len() as f64)
        .collect();
    let (top, clamped) = topk_edges(&edges, &mean, a.topk)?;
    if clamped {
        eprintln!(
            "{}",
            json!({ "warning": format!("--topk {} exceeds the {m} edges; clamped", a.topk) })
        );
    }
    let value = |x: f64| -> Result<f64> {
        if !a.log_flow {
            Ok(x)
        } else if x > 0.0 {
            Ok(x.ln())
        } else {
            Err(Error::Domain(format!(
                "--log-flow needs positive flow, found {x}"
            )))
        }
    };
    let group = |rows: &[usize]| -> Result<Matrix> {
        let data = rows
            .iter()
            .flat_map(|&r| flows[r].phi.iter().map(|&x| value(x)))
            .collect::<Result<Vec<f64>>>()?;
        Matrix::from_vec(rows.len(), m, data)
    };
    let method = if a.by { FdrMethod::By } else { FdrMethod::Bh };
    let stats = GroupStats::compute(&edges, &group(&patients)?, &group(&controls)?, a.q, method)?;

    let mut topk = String::from("rank,i,j,mean_phi\n");
    for (r, e) in top.iter().enumerate() {
        csv_row(
            &mut topk,
            &[
                (r + 1).to_string(),
                e.i.to_string(),
                e.j.to_string(),
                format_f64(e.mean_phi),
            ],
        );
    }
    write_text(a.out.join("topk.csv"), &topk)?;
    let mut sig = String::from("i,j,t,p,reject,direction\n");
    for e in &stats.edges {
        csv_row(
            &mut sig,
            &[
                e.i.to_string(),
                e.j.to_string(),
                format_f64(e.t),
                format_f64(e.p),
                e.reject.to_string(),
                e.direction.to_string(),
            ],
        );
    }
    write_text(a.out.join("sig_edges.csv"), &sig)?;
    let rejected = |d: i8| {
        stats
            .edges
            .iter()
            .filter(|e| e.reject && e.direction == d)
            .count()
    };
    let summary = json!({
        "n_patients": patients.len(),
        "n_controls": controls.len(),
        "n_edges": m,
        "flow_source": if model.is_some() { "checkpoint" } else { "sc" },
        "log_flow": a.log_flow,
        "q": a.q,
        "method": method,
        "n_rejected": stats.n_rejected(),
        "n_rejected_patient_higher": rejected(1),
        "n_rejected_patient_lower": rejected(-1),
        "n_degenerate": stats.edges.iter().filter(|e| e.degenerate).count(),
        "topk": top.len(),
        "topk_clamped": clamped,
    });
    write_json(a.out.join("summary.json"), &summary)?;
    echo(
        &a.out,
        command,
        json!({ "prepare": PrepareOptions::from(a.prepare), "method": method }),
    )?;
    println!("{summary}");
    Ok(())
}
