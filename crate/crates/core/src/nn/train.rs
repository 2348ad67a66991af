//! Mini-batch training with stratified splits and best-validation selection.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::{Rng, Streams};

use super::metrics::{classification_metrics, Metrics};
use super::model::{Model, ModelConfig, SubjectInputs};
use super::optim::{Optimizer, OptimizerConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Train/validation/test proportions, applied per class.
    pub split: [f64; 3],
    pub optimizer: OptimizerConfig,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            lr: 5e-4,
            weight_decay: 0.01,
            batch_size: 64,
            split: [6.0, 1.0, 3.0],
            optimizer: OptimizerConfig::default(),
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.lr >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config(
                "lr and weight_decay must be nonnegative".into(),
            ));
        }
        if self.split.iter().any(|&s| !(s >= 0.0)) || self.split[0] <= 0.0 {
            return Err(Error::Config(
                "split proportions must be nonnegative with a positive train share".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Per-class shuffled split in the given proportions. Each part is sorted.
pub fn stratified_split(labels: &[usize], ratios: [f64; 3], rng: &mut Rng) -> Split {
    let total: f64 = ratios.iter().sum();
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut split = Split {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for c in 0..n_classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        members.shuffle(rng);
        let n = members.len();
        let n_train = ((n as f64 * ratios[0] / total).round() as usize).min(n);
        let n_val = ((n as f64 * ratios[1] / total).round() as usize).min(n - n_train);
        split.train.extend_from_slice(&members[..n_train]);
        split
            .val
            .extend_from_slice(&members[n_train..n_train + n_val]);
        split.test.extend_from_slice(&members[n_train + n_val..]);
    }
    split.train.sort_unstable();
    split.val.sort_unstable();
    split.test.sort_unstable();
    split
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val: Metrics,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub split: Split,
    pub test: Metrics,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub metrics: Metrics,
    pub mean_loss: f64,
    pub probabilities: Vec<Vec<f64>>,
}

/// Scores labelled subjects in parallel; results keep input order.
pub fn evaluate(model: &Model, subjects: &[&SubjectInputs]) -> Result<Evaluation> {
    let probabilities = subjects
        .par_iter()
        .map(|s| model.infer(s).map(|inf| inf.probabilities))
        .collect::<Result<Vec<_>>>()?;
    let labels = subjects
        .iter()
        .map(|s| {
            s.label
                .ok_or_else(|| Error::InvalidInput("evaluation subject has no label".into()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mean_loss = if labels.is_empty() {
        f64::NAN
    } else {
        labels
            .iter()
            .zip(&probabilities)
            .map(|(&y, p)| -p[y].max(f64::MIN_POSITIVE).ln())
            .sum::<f64>()
            / labels.len() as f64
    };
    Ok(Evaluation {
        metrics: classification_metrics(&labels, &probabilities),
        mean_loss,
        probabilities,
    })
}

fn labels_of(subjects: &[SubjectInputs]) -> Result<Vec<usize>> {
    subjects
        .iter()
        .enumerate()
        .map(|(i, s)| {
            s.label
                .ok_or_else(|| Error::Config(format!("subject {i} has no label")))
        })
        .collect()
}

/// One pass over `order` in mini-batches; returns the mean training loss.
pub fn train_epoch(
    model: &mut Model,
    optimizer: &mut Optimizer,
    subjects: &[SubjectInputs],
    order: &[usize],
    batch_size: usize,
    mut dropout: Option<&mut Rng>,
) -> Result<f64> {
    let n_params = model.params().len();
    let mut total = 0.0;
    for batch in order.chunks(batch_size) {
        let mut acc: Vec<Option<Matrix>> = vec![None; n_params];
        for &i in batch {
            let (loss, grads) = model.loss_and_grads(&subjects[i], dropout.as_deref_mut())?;
            total += loss;
            for (slot, g) in acc.iter_mut().zip(grads) {
                match (slot.as_mut(), g) {
                    (Some(a), Some(g)) => a.add_assign(&g)?,
                    (None, Some(g)) => *slot = Some(g),
                    _ => {}
                }
            }
        }
        let scale = 1.0 / batch.len() as f64;
        for g in acc.iter_mut().flatten() {
            g.scale(scale);
        }
        optimizer.step(model.params_mut(), &acc);
        if !model.params().all_finite() {
            return Err(Error::Numerical(
                "non-finite parameters after optimizer step".into(),
            ));
        }
    }
    Ok(total / order.len().max(1) as f64)
}

/// Trains from scratch. `config.model.d_in` is taken from the data.
pub fn train(subjects: &[SubjectInputs], config: &TrainConfig, seed: u64) -> Result<TrainOutcome> {
    config.validate()?;
    if subjects.is_empty() {
        return Err(Error::Config("no subjects to train on".into()));
    }
    let labels = labels_of(subjects)?;
    let d_in = subjects[0].features.cols();
    if subjects.iter().any(|s| s.features.cols() != d_in) {
        return Err(Error::Config("subjects disagree on feature width".into()));
    }
    let mut model_config = config.model.clone();
    model_config.d_in = d_in;
    if let Some(&max_label) = labels.iter().max() {
        if max_label >= model_config.n_classes {
            return Err(Error::Config(format!(
                "label {max_label} out of range for {} classes",
                model_config.n_classes
            )));
        }
    }

    let streams = Streams::new(seed);
    let split = stratified_split(&labels, config.split, &mut streams.stream("split"));
    for (name, part) in [
        ("train", &split.train),
        ("validation", &split.val),
        ("test", &split.test),
    ] {
        if part.is_empty() {
            return Err(Error::Config(format!("{name} split is empty")));
        }
    }
    let first = labels[split.train[0]];
    if split.train.iter().all(|&i| labels[i] == first) {
        return Err(Error::Config(
            "training split contains a single class".into(),
        ));
    }

    let mut model = Model::init(model_config, &mut streams.stream("init"))?;
    let mut optimizer = Optimizer::new(
        config.optimizer,
        config.lr,
        config.weight_decay,
        model.params(),
    );
    let mut shuffle = streams.stream("shuffle");
    let mut dropout = streams.stream("dropout");
    let use_dropout = model.config().dropout > 0.0;
    let val: Vec<&SubjectInputs> = split.val.iter().map(|&i| &subjects[i]).collect();

    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, f64, usize, Model)> = None;
    for epoch in 1..=config.epochs {
        let mut order = split.train.clone();
        order.shuffle(&mut shuffle);
        let train_loss = train_epoch(
            &mut model,
            &mut optimizer,
            subjects,
            &order,
            config.batch_size,
            use_dropout.then_some(&mut dropout),
        )?;
        let eval = evaluate(&model, &val)?;
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss: eval.mean_loss,
            val: eval.metrics,
        });
        let better = match &best {
            None => true,
            Some((acc, loss, _, _)) => {
                eval.metrics.acc > *acc || (eval.metrics.acc == *acc && eval.mean_loss < *loss)
            }
        };
        if better {
            best = Some((eval.metrics.acc, eval.mean_loss, epoch, model.clone()));
        }
    }
    let (best_epoch, model) = match best {
        Some((_, _, e, m)) => (e, m),
        None => (0, model),
    };
    let test: Vec<&SubjectInputs> = split.test.iter().map(|&i| &subjects[i]).collect();
    let test = evaluate(&model, &test)?.metrics;
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
        split,
        test,
    })
}
