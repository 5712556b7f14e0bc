//! Training and evaluation loops.
//!
//! One optimizer thread owns the parameters; per-epoch validation runs
//! against a frozen snapshot and may fan out across clips. Everything is
//! deterministic in `(seed, config)`: batch order comes from seeded
//! epoch streams, parameter init from per-name streams, and evaluation
//! results are reduced in clip order.

pub mod schedule;
pub mod sgd;

use crate::autograd::Graph;
use crate::config::RunConfig;
use crate::data::dataset::{batch_iter, BatchOptions, Dataset, Split};
use crate::data::prepare_input;
use crate::error::{Error, Result};
use crate::exec::{self, ExecMode};
use crate::model::{argmax, Model};
use schedule::lr_schedule;
use serde::{Deserialize, Serialize};
use sgd::SgdState;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_top1: f64,
    pub val_top1: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config_hash: String,
    pub seed: u64,
    pub epochs: Vec<EpochRow>,
    pub best_epoch: usize,
    pub best_val_top1: f64,
    pub final_val_top1: f64,
}

impl TrainReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("# config_hash={} seed={}\n", self.config_hash, self.seed);
        out.push_str("epoch,loss,train_acc,val_acc,lr\n");
        for row in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                row.epoch, row.train_loss, row.train_top1, row.val_top1, row.lr
            ));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config_hash: String,
    pub seed: u64,
    pub top1: f64,
    pub correct: usize,
    pub total: usize,
    pub per_class_support: Vec<usize>,
    pub per_class_correct: Vec<usize>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

impl EvalReport {
    pub fn per_class_accuracy(&self) -> Vec<f64> {
        self.per_class_support
            .iter()
            .zip(&self.per_class_correct)
            .map(|(&s, &c)| if s == 0 { 0.0 } else { c as f64 / s as f64 })
            .collect()
    }

    pub fn confusion_csv(&self, classes: &[String]) -> String {
        let mut out = format!(
            "# config_hash={} seed={} rows=true columns=predicted\n",
            self.config_hash, self.seed
        );
        out.push_str("class");
        for name in classes {
            out.push_str(&format!(",{name}"));
        }
        out.push('\n');
        for (i, row) in self.confusion.iter().enumerate() {
            out.push_str(&classes[i]);
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

pub struct TrainOutcome {
    pub report: TrainReport,
    /// Parameters from the best-validation epoch.
    pub best: Model,
}

/// Evaluates a frozen model over one split.
pub fn evaluate(model: &Model, dataset: &Dataset, split: Split, mode: ExecMode) -> Result<EvalReport> {
    let graph = dataset.graph()?;
    let indices = dataset.indices(split);
    if indices.is_empty() {
        return Err(Error::Data(format!("empty {split:?} split")));
    }
    let align = model.config.stride_product();
    let predictions: Vec<Result<(usize, usize)>> = exec::map(mode, &indices, |&idx| {
        let clip = &dataset.clips[idx];
        let input = prepare_input(
            &clip.values,
            model.config.target_t,
            align,
            model.config.modality,
            &graph,
        )?;
        let inference = model.infer(&input)?;
        Ok((clip.label, argmax(&inference.logits)))
    });

    let k = model.config.num_classes;
    let mut confusion = vec![vec![0usize; k]; k];
    let mut correct = 0;
    for p in predictions {
        let (truth, pred) = p?;
        confusion[truth][pred] += 1;
        if truth == pred {
            correct += 1;
        }
    }
    let total = indices.len();
    let per_class_support: Vec<usize> = confusion.iter().map(|r| r.iter().sum()).collect();
    let per_class_correct: Vec<usize> = (0..k).map(|c| confusion[c][c]).collect();
    Ok(EvalReport {
        config_hash: crate::model::checkpoint::model_config_hash(&model.config),
        seed: model.seed,
        top1: correct as f64 / total as f64,
        correct,
        total,
        per_class_support,
        per_class_correct,
        confusion,
    })
}

/// Full training loop; returns the per-epoch report and the best-validation
/// model.
pub fn train(cfg: &RunConfig, dataset: &Dataset, mode: ExecMode) -> Result<TrainOutcome> {
    cfg.validate()?;
    let graph = dataset.graph()?;
    if graph.num_joints() != cfg.model.topology.build()?.num_joints() {
        return Err(Error::Config(format!(
            "topology: model expects {} joints, dataset provides {}",
            cfg.model.topology.build()?.num_joints(),
            graph.num_joints()
        )));
    }
    let mut model = Model::new(cfg.model.clone(), cfg.optim.seed)?;
    let mut sgd = SgdState::new(&model.params);
    let config_hash = cfg.hash();

    let mut rows = Vec::with_capacity(cfg.optim.epochs);
    let mut best: Option<(usize, f64, Model)> = None;

    for epoch in 0..cfg.optim.epochs {
        let lr = lr_schedule(&cfg.optim, epoch)?;
        let opts = BatchOptions {
            batch: cfg.optim.batch,
            target_t: cfg.model.target_t,
            align: cfg.model.stride_product(),
            modality: cfg.model.modality,
            seed: cfg.optim.seed,
            epoch,
        };
        let batches = batch_iter(dataset, Split::Train, &graph, &opts)?;

        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        let mut train_correct = 0usize;
        for batch in &batches {
            let mut g = Graph::new();
            let bound = model.bind(&mut g);
            let logits = model.batch_logits(&mut g, &batch.inputs, &bound)?;
            let (loss, _probs) = g.softmax_cross_entropy(logits, &batch.labels)?;
            let loss_value = g.scalar(loss)?;
            if !loss_value.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite training loss {loss_value} at epoch {epoch}"
                )));
            }
            let bsz = batch.labels.len();
            loss_sum += loss_value * bsz as f64;
            seen += bsz;
            let logit_values = g.value(logits).data();
            let k = cfg.model.num_classes;
            for (b, &label) in batch.labels.iter().enumerate() {
                if argmax(&logit_values[b * k..(b + 1) * k]) == label {
                    train_correct += 1;
                }
            }

            model.params.zero_grads();
            g.backward(loss)?;
            model.params.absorb_grads(&g)?;
            sgd.step(&mut model.params, lr, &cfg.optim)?;
        }

        let val = evaluate(&model, dataset, Split::Val, mode)?;
        let row = EpochRow {
            epoch,
            train_loss: loss_sum / seen as f64,
            train_top1: train_correct as f64 / seen as f64,
            val_top1: val.top1,
            lr,
        };
        let improved = match &best {
            None => true,
            Some((_, best_acc, _)) => row.val_top1 > *best_acc,
        };
        if improved {
            best = Some((epoch, row.val_top1, model.clone()));
        }
        rows.push(row);
    }

    let (best_epoch, best_val_top1, best_model) = best.expect("at least one epoch");
    let final_val_top1 = rows.last().expect("at least one epoch").val_top1;
    Ok(TrainOutcome {
        report: TrainReport {
            config_hash,
            seed: cfg.optim.seed,
            epochs: rows,
            best_epoch,
            best_val_top1,
            final_val_top1,
        },
        best: best_model,
    })
}
