//! Teacher training and teacher-to-student distillation.

mod adam;

pub use adam::{adam_step, AdamState};

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{mine_triplets, Dataset, Split, TripletSpec};
use crate::error::{Error, Result};
use crate::layers::ParamStore;
use crate::losses::{distance, hard_loss, total_loss, LossBreakdown, LossConfig, TripletVars};
use crate::models::{Checkpoint, Model, ModelConfig, StudentConfig, TeacherConfig};
use crate::retrieval::{build_db, describe_queries, evaluate, DbMeta, GroundTruth};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lr_decay_per_epoch: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// Seeds parameter initialisation and mining.
    pub seed: u64,
    pub loss: LossConfig,
    pub mining: TripletSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 8,
            learning_rate: 1e-3,
            lr_decay_per_epoch: 0.99,
            weight_decay: 0.001,
            epochs: 10,
            seed: 0,
            loss: LossConfig::default(),
            mining: TripletSpec::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        let rates = [
            ("learning_rate", self.learning_rate),
            ("lr_decay_per_epoch", self.lr_decay_per_epoch),
        ];
        if let Some((k, v)) = rates.iter().find(|(_, v)| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Config(format!("{k} must be positive, got {v}")));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Config(format!(
                "weight_decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        self.loss.validate()?;
        self.mining.validate()
    }

    /// Learning rate used during epoch `epoch` (counted from 0).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.lr_decay_per_epoch.powi(epoch as i32)
    }

    /// Mining seed of epoch `epoch` (counted from 1).
    pub fn mining_seed(&self, epoch: usize) -> u64 {
        self.seed ^ ((epoch as u64) << 32)
    }
}

/// One optimiser step. `val_recall_at_1` is only set on the last step of an
/// epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepLog {
    pub step: u64,
    pub epoch: usize,
    pub lr: f64,
    pub l_hard: f64,
    pub l_soft: f64,
    pub l_cm: f64,
    pub l_total: f64,
    pub val_recall_at_1: Option<f64>,
}

/// State after an epoch; epoch 0 describes the initial parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpochSummary {
    pub epoch: usize,
    /// Mean of the step losses; absent for epoch 0.
    pub mean_loss: Option<LossBreakdown>,
    pub triplets: usize,
    pub skipped_anchors: usize,
    /// Database split queried with the validation split, by place.
    pub val_recall_at_1: Option<f64>,
    /// Mean `d(S(x), T(x))` over the validation split (distillation only).
    pub val_teacher_distance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutput {
    pub checkpoint: Checkpoint,
    pub log: Vec<StepLog>,
    pub epochs: Vec<EpochSummary>,
}

impl TrainOutput {
    pub fn final_summary(&self) -> &EpochSummary {
        self.epochs.last().expect("epoch 0 is always recorded")
    }
}

/// Writes one JSON object per line.
pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Trains a teacher with the triplet loss on its own descriptors.
pub fn train_teacher(ds: &Dataset, teacher: &TeacherConfig, cfg: &TrainConfig) -> Result<TrainOutput> {
    train_triplet(ds, &ModelConfig::Teacher(teacher.clone()), cfg)
}

/// Triplet-only training of any model; `cfg.loss` contributes its margin
/// and metric.
pub fn train_triplet(ds: &Dataset, model: &ModelConfig, cfg: &TrainConfig) -> Result<TrainOutput> {
    fit(ds, model.clone(), cfg, None)
}

/// Trains a student against a frozen teacher with the total loss of
/// `cfg.loss`.
pub fn distill_student(
    ds: &Dataset,
    teacher: &Checkpoint,
    student: &StudentConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutput> {
    let config = ModelConfig::Student(student.clone());
    let t_model = teacher.model()?;
    if t_model.descriptor_width() != config.descriptor_width() {
        return Err(Error::shape(
            "distill_student",
            &[t_model.descriptor_width()],
            &[config.descriptor_width()],
        ));
    }
    if config.image_shape() != teacher.config.image_shape() {
        return Err(Error::Config(format!(
            "teacher expects images {:?}, student {:?}",
            teacher.config.image_shape(),
            config.image_shape()
        )));
    }
    // frozen inference: computed once, never part of a trainable graph
    let targets = ds
        .images
        .iter()
        .map(|im| t_model.describe(&teacher.params, im).map(|d| d.into_values()))
        .collect::<Result<Vec<_>>>()?;
    fit(ds, config, cfg, Some(&targets))
}

fn fit(ds: &Dataset, config: ModelConfig, cfg: &TrainConfig, teacher: Option<&[Vec<f64>]>) -> Result<TrainOutput> {
    cfg.validate()?;
    let model = Model::new(&config)?;
    let shape = config.image_shape();
    if ds.images.first().map(|t| t.shape()) != Some(&shape[..]) {
        return Err(Error::Config(format!(
            "model expects images {shape:?}, dataset has {:?}",
            ds.images.first().map(|t| t.shape().to_vec())
        )));
    }
    let mut ckpt = Checkpoint::init(config, cfg.seed)?;
    let mut adam = AdamState::new();
    let mut log = Vec::new();
    let mut epochs = vec![summarize(ds, &model, &ckpt.params, teacher, cfg, 0, None, 0, 0)?];
    let mut step = 0u64;
    for epoch in 1..=cfg.epochs {
        let lr = cfg.lr_at(epoch - 1);
        let mining = mine_triplets(ds, &cfg.mining, cfg.mining_seed(epoch))?;
        let mut sums = [0.0; 4];
        let first = log.len();
        for batch in mining.triplets.chunks(cfg.batch_size) {
            step += 1;
            let mut tape = Tape::new();
            let bound = ckpt.params.bind(&mut tape, true);
            let mut student: BTreeMap<usize, Var> = BTreeMap::new();
            let mut targets: BTreeMap<usize, (Var, Var)> = BTreeMap::new();
            let mut vars = Vec::with_capacity(batch.len());
            for t in batch {
                let mut s = |id: usize, tape: &mut Tape| -> Result<Var> {
                    if let Some(&v) = student.get(&id) {
                        return Ok(v);
                    }
                    let v = model.forward(tape, &bound, &ds.images[id])?;
                    student.insert(id, v);
                    Ok(v)
                };
                let s_a = s(t.anchor, &mut tape)?;
                let s_p = s(t.positive, &mut tape)?;
                let s_n = t.negatives.iter().map(|&n| s(n, &mut tape)).collect::<Result<Vec<_>>>()?;
                let (t_a, t_p, t_n) = match teacher {
                    Some(desc) => {
                        let mut tv = |id: usize, tape: &mut Tape| -> Result<Var> {
                            if let Some(&(_, d)) = targets.get(&id) {
                                return Ok(d);
                            }
                            let leaf = tape.leaf(Tensor::vector(desc[id].clone()), true);
                            let d = tape.detach(leaf)?;
                            targets.insert(id, (leaf, d));
                            Ok(d)
                        };
                        let a = tv(t.anchor, &mut tape)?;
                        let p = tv(t.positive, &mut tape)?;
                        let n = t.negatives.iter().map(|&n| tv(n, &mut tape)).collect::<Result<Vec<_>>>()?;
                        (a, p, n)
                    }
                    None => (s_a, s_p, s_n.clone()),
                };
                vars.push(TripletVars {
                    s_a,
                    s_p,
                    s_n,
                    t_a,
                    t_p,
                    t_n,
                });
            }
            let (loss, b) = if teacher.is_some() {
                let tl = total_loss(&mut tape, &vars, &cfg.loss)?;
                (tl.total, tl.breakdown)
            } else {
                let (l, _) = hard_loss(&mut tape, &vars, cfg.loss.margin, cfg.loss.metric, cfg.loss.reduction)?;
                let v = tape.value(l).data()[0];
                (
                    l,
                    LossBreakdown {
                        l_hard: v,
                        l_soft: 0.0,
                        l_cm: 0.0,
                        l_total: v,
                    },
                )
            };
            if !b.l_total.is_finite() {
                return Err(Error::Diverged(format!("loss {} at step {step} (epoch {epoch})", b.l_total)));
            }
            tape.backward(loss)?;
            for (id, &(leaf, _)) in &targets {
                if let Some(g) = tape.grad(leaf) {
                    if g.iter().any(|&x| x != 0.0) {
                        return Err(Error::FrozenTeacher(format!(
                            "teacher descriptor of sample {id} received a gradient at step {step}"
                        )));
                    }
                }
            }
            let grads = bound.grads(&tape)?;
            adam_step(&mut ckpt.params, &grads, &mut adam, lr, cfg.weight_decay)?;
            for (s, v) in sums.iter_mut().zip([b.l_hard, b.l_soft, b.l_cm, b.l_total]) {
                *s += v;
            }
            log.push(StepLog {
                step,
                epoch,
                lr,
                l_hard: b.l_hard,
                l_soft: b.l_soft,
                l_cm: b.l_cm,
                l_total: b.l_total,
                val_recall_at_1: None,
            });
        }
        let n = (log.len() - first) as f64;
        let mean = LossBreakdown {
            l_hard: sums[0] / n,
            l_soft: sums[1] / n,
            l_cm: sums[2] / n,
            l_total: sums[3] / n,
        };
        let summary = summarize(
            ds,
            &model,
            &ckpt.params,
            teacher,
            cfg,
            epoch,
            Some(mean),
            mining.triplets.len(),
            mining.skipped,
        )?;
        if let Some(last) = log.last_mut() {
            last.val_recall_at_1 = summary.val_recall_at_1;
        }
        epochs.push(summary);
    }
    Ok(TrainOutput {
        checkpoint: ckpt,
        log,
        epochs,
    })
}

#[allow(clippy::too_many_arguments)]
fn summarize(
    ds: &Dataset,
    model: &Model,
    params: &ParamStore,
    teacher: Option<&[Vec<f64>]>,
    cfg: &TrainConfig,
    epoch: usize,
    mean_loss: Option<LossBreakdown>,
    triplets: usize,
    skipped_anchors: usize,
) -> Result<EpochSummary> {
    let val = ds.split_ids(Split::Val);
    let val_recall_at_1 = if val.is_empty() {
        None
    } else {
        let db = build_db(ds, Split::Database, model, params, DbMeta::default())?;
        let queries = describe_queries(ds, Split::Val, model, params)?;
        Some(evaluate(&db, &queries, GroundTruth::SamePlace)?.recall_at_1)
    };
    let val_teacher_distance = match teacher {
        Some(desc) if !val.is_empty() => {
            let mut sum = 0.0;
            for &id in &val {
                let s = model.describe(params, &ds.images[id])?;
                let mut tape = Tape::new();
                let x = tape.constant(Tensor::vector(s.into_values()));
                let y = tape.constant(Tensor::vector(desc[id].clone()));
                let d = distance(&mut tape, x, y, cfg.loss.metric)?;
                sum += tape.value(d).data()[0];
            }
            Some(sum / val.len() as f64)
        }
        _ => None,
    };
    Ok(EpochSummary {
        epoch,
        mean_loss,
        triplets,
        skipped_anchors,
        val_recall_at_1,
        val_teacher_distance,
    })
}
