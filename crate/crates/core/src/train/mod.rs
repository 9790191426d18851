//! Teacher-forced maximum likelihood training.
//!
//! Targets are decoded in topological order. Ready nodes are ordered by the
//! source node they were copied from (greedy label match, unmatched nodes
//! last), then by label. The loss is the node negative log-likelihood (end
//! marker included) plus the negative log-likelihood of every lower-triangle
//! adjacency cell, averaged over the batch.

mod adam;
mod checkpoint;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::{mixed_batches, DatagenError, ModificationInstance};
use crate::eval::{self, EvalError};
use crate::graph::{GraphError, SceneGraph};
use crate::model::{lower_triangle, EncodedInput, Model, ModelConfig, ModelError};
use crate::rng;
use crate::tensor::{Real, Tape, TensorError};
use crate::vocab::{VocabKind, Vocabulary, NULL};

pub use adam::Adam;
pub use checkpoint::{vocab_hash, Checkpoint, MAGIC, VERSION};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("loss became non-finite at epoch {epoch}, step {step}")]
    Divergence { epoch: usize, step: usize },
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("invalid training config: {0}")]
    BadConfig(String),
    #[error("{0} set is empty")]
    EmptyData(&'static str),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Datagen(#[from] DatagenError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<TensorError> for TrainError {
    fn from(e: TensorError) -> Self {
        TrainError::Model(e.into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    /// Largest global gradient norm; larger gradients are rescaled.
    pub clip: f64,
    pub seed: u64,
    /// Batches are half synthetic, half user-written.
    pub mix: bool,
    /// Learning rate multiplier applied after every epoch.
    pub lr_decay: f64,
    /// Stop once dev graph accuracy reaches this value.
    pub stop_accuracy: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            epochs: 30,
            lr: 1e-3,
            clip: 1.0,
            seed: 0,
            mix: false,
            lr_decay: 1.0,
            stop_accuracy: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(TrainError::BadConfig("batch_size and epochs must be positive".into()));
        }
        for (name, v) in [("lr", self.lr), ("clip", self.clip), ("lr_decay", self.lr_decay)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(TrainError::BadConfig(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Sets one field from its textual form; returns `Ok(false)` for an unknown key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool, TrainError> {
        let bad = |e: &dyn std::fmt::Display| TrainError::BadConfig(format!("{key}: {e}"));
        match key {
            "batch_size" => self.batch_size = value.parse().map_err(|e| bad(&e))?,
            "epochs" => self.epochs = value.parse().map_err(|e| bad(&e))?,
            "lr" => self.lr = value.parse().map_err(|e| bad(&e))?,
            "clip" => self.clip = value.parse().map_err(|e| bad(&e))?,
            "seed" => self.seed = value.parse().map_err(|e| bad(&e))?,
            "mix" => self.mix = value.parse().map_err(|e| bad(&e))?,
            "lr_decay" => self.lr_decay = value.parse().map_err(|e| bad(&e))?,
            "stop_accuracy" => {
                self.stop_accuracy = match value {
                    "none" => None,
                    v => Some(v.parse().map_err(|e| bad(&e))?),
                }
            }
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("batch_size", self.batch_size.to_string()),
            ("epochs", self.epochs.to_string()),
            ("lr", self.lr.to_string()),
            ("clip", self.clip.to_string()),
            ("seed", self.seed.to_string()),
            ("mix", self.mix.to_string()),
            ("lr_decay", self.lr_decay.to_string()),
            ("stop_accuracy", self.stop_accuracy.map_or("none".into(), |a| a.to_string())),
        ]
    }
}

/// Applies flat `key=value` lines to both configs. Blank lines and lines
/// starting with `#` are skipped; unknown keys are an error.
pub fn parse_config(text: &str, model: &mut ModelConfig, train: &mut TrainConfig) -> Result<(), TrainError> {
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| TrainError::BadConfig(format!("line {}: expected key=value", n + 1)))?;
        let (key, value) = (key.trim(), value.trim());
        if !model.set(key, value)? && !train.set(key, value)? {
            return Err(TrainError::BadConfig(format!("line {}: unknown key {key:?}", n + 1)));
        }
    }
    Ok(())
}

pub fn config_text(model: &ModelConfig, train: &TrainConfig) -> String {
    model.to_pairs().into_iter().chain(train.to_pairs()).map(|(k, v)| format!("{k}={v}\n")).collect()
}

/// Token vocabulary over node labels and query words, edge vocabulary over
/// edge labels.
pub fn build_vocabularies<'a>(sets: impl IntoIterator<Item = &'a [ModificationInstance]>) -> (Vocabulary, Vocabulary) {
    let (mut words, mut edges) = (Vec::new(), Vec::new());
    for inst in sets.into_iter().flatten() {
        for g in [&inst.source, &inst.target] {
            words.extend(g.nodes().iter().cloned());
            edges.extend(g.edges().iter().map(|e| e.label.clone()));
        }
        words.extend(Vocabulary::tokenize(&inst.query));
    }
    (Vocabulary::build(VocabKind::Tokens, words, 1), Vocabulary::build(VocabKind::Edges, edges, 1))
}

/// Target node ids in decoding order.
pub fn target_order(source: &SceneGraph, target: &SceneGraph) -> Result<Vec<usize>, GraphError> {
    let mut used = vec![false; source.len()];
    let origin: Vec<usize> = target
        .nodes()
        .iter()
        .map(|label| match (0..source.len()).find(|&k| !used[k] && source.label(k) == label) {
            Some(k) => {
                used[k] = true;
                k
            }
            None => source.len(),
        })
        .collect();
    target.topological_order_by_key(|i| (origin[i], target.label(i).to_string()))
}

/// One instance as model inputs and teacher-forcing targets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prepared {
    pub input: EncodedInput,
    pub nodes: Vec<usize>,
    /// Row-major lower-triangle labels; cell `(i, j)` holds the edge `j -> i`.
    pub cells: Vec<usize>,
}

pub fn prepare<T: Real>(model: &Model<T>, inst: &ModificationInstance) -> Result<Prepared, TrainError> {
    let order = target_order(&inst.source, &inst.target)?;
    let t = &inst.target;
    let nodes = order.iter().map(|&k| model.tokens.id(t.label(k))).collect();
    let cells = lower_triangle(order.len())
        .into_iter()
        .map(|(i, j)| t.edge_label(order[j], order[i]).map_or(NULL, |l| model.edges.id(l)))
        .collect();
    Ok(Prepared { input: model.encode_input(&inst.source, &inst.query), nodes, cells })
}

/// Batch-averaged loss split into its node and edge parts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub node: f64,
    pub edge: f64,
}

impl LossParts {
    pub fn total(&self) -> f64 {
        self.node + self.edge
    }
}

/// Mean loss over `batch` and, when `backward` is set, its gradients.
pub fn batch_loss<T: Real>(
    model: &Model<T>,
    batch: &[&Prepared],
    backward: bool,
) -> Result<(LossParts, Option<crate::tensor::Gradients<T>>), TrainError> {
    if batch.is_empty() {
        return Ok((LossParts::default(), None));
    }
    let mut tape = Tape::new(&model.params);
    let (mut node, mut edge) = (0.0, 0.0);
    let mut terms = Vec::with_capacity(batch.len());
    for p in batch {
        let (a, b) = model.nll(&mut tape, &p.input, &p.nodes, &p.cells)?;
        node += tape.scalar(a).to_f64().unwrap_or(f64::NAN);
        edge += tape.scalar(b).to_f64().unwrap_or(f64::NAN);
        terms.push(tape.add(a, b)?);
    }
    let n = batch.len() as f64;
    let parts = LossParts { node: node / n, edge: edge / n };
    if !backward {
        return Ok((parts, None));
    }
    let all = tape.concat_rows(&terms)?;
    let sum = tape.sum(all);
    let mean = tape.scale(sum, T::from_f64_lossy(1.0 / n));
    Ok((parts, Some(tape.backward(mean)?)))
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub node_loss: f64,
    pub edge_loss: f64,
    pub lr: f64,
    /// Mean gradient norm before clipping.
    pub grad_norm: f64,
    pub dev_graph_accuracy: f64,
    pub best: bool,
}

pub struct FitOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochLog>,
}

/// Trains a fresh model and returns the epoch with the best dev graph
/// accuracy (earliest on ties). `user` is required in mixing mode and
/// rejected otherwise.
pub fn fit(
    train: &[ModificationInstance],
    dev: &[ModificationInstance],
    user: Option<&[ModificationInstance]>,
    model_config: &ModelConfig,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<FitOutcome, TrainError> {
    cfg.validate()?;
    model_config.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptyData("training"));
    }
    if dev.is_empty() {
        return Err(TrainError::EmptyData("dev"));
    }
    let user = match (cfg.mix, user) {
        (true, Some(u)) if !u.is_empty() => u,
        (true, _) => return Err(TrainError::EmptyData("user")),
        (false, Some(_)) => return Err(TrainError::BadConfig("a user set needs mix=true".into())),
        (false, None) => &[],
    };
    let (tokens, edges) = build_vocabularies([train, dev, user]);
    let mut model: Model<f32> = Model::new(model_config.clone(), tokens, edges, cfg.seed)?;
    let prep = |set: &[ModificationInstance]| set.iter().map(|i| prepare(&model, i)).collect::<Result<Vec<_>, _>>();
    let (train_p, user_p) = (prep(train)?, prep(user)?);

    let mut adam = Adam::new(&model.params, 0.9, 0.999, 1e-8);
    let mut best: Option<Checkpoint> = None;
    let mut history = Vec::new();
    let mut lr = cfg.lr;
    for epoch in 1..=cfg.epochs {
        let mut r = rng::stream(cfg.seed, epoch as u64);
        let batches: Vec<Vec<&Prepared>> = if cfg.mix {
            mixed_batches(train_p.len(), user_p.len(), cfg.batch_size, &mut r)?
                .into_iter()
                .map(|b| b.synthetic.iter().map(|&i| &train_p[i]).chain(b.user.iter().map(|&i| &user_p[i])).collect())
                .collect()
        } else {
            let mut order: Vec<usize> = (0..train_p.len()).collect();
            order.shuffle(&mut r);
            order.chunks(cfg.batch_size).map(|c| c.iter().map(|&i| &train_p[i]).collect()).collect()
        };
        let (mut sum, mut norms) = (LossParts::default(), 0.0);
        for (step, batch) in batches.iter().enumerate() {
            let (parts, grads) = batch_loss(&model, batch, true)?;
            let mut grads = grads.expect("gradients requested");
            if !parts.total().is_finite() || !grads.all_finite() {
                return Err(TrainError::Divergence { epoch, step });
            }
            let norm = f64::from(grads.l2_norm());
            if norm > cfg.clip {
                grads.scale((cfg.clip / norm) as f32);
            }
            adam.step(&mut model.params, &grads, lr);
            if !model.params.all_finite() {
                return Err(TrainError::Divergence { epoch, step });
            }
            sum.node += parts.node;
            sum.edge += parts.edge;
            norms += norm;
        }
        let nb = batches.len() as f64;
        let acc = eval::evaluate(&model, dev, 1)?.graph_accuracy.unwrap_or(0.0);
        let improved = best.as_ref().is_none_or(|b| acc > b.dev_accuracy);
        if improved {
            best = Some(Checkpoint { model: model.clone(), train: cfg.clone(), epoch, dev_accuracy: acc });
        }
        let log = EpochLog {
            epoch,
            loss: (sum.node + sum.edge) / nb,
            node_loss: sum.node / nb,
            edge_loss: sum.edge / nb,
            lr,
            grad_norm: norms / nb,
            dev_graph_accuracy: acc,
            best: improved,
        };
        on_epoch(&log);
        history.push(log);
        if cfg.stop_accuracy.is_some_and(|s| acc >= s) {
            break;
        }
        lr *= cfg.lr_decay;
    }
    Ok(FitOutcome { checkpoint: best.expect("at least one epoch"), history })
}
