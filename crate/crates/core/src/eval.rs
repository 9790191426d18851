//! Node, edge and whole-graph scores.
//!
//! Nodes are compared as label multisets and edges as multisets of
//! `(source label, edge label, target label)` triplets, micro-averaged over
//! a corpus. Graph accuracy counts predictions isomorphic to their target.

use std::collections::HashMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::ModificationInstance;
use crate::graph::{GraphError, SceneGraph};
use crate::model::{Model, ModelError};
use crate::tensor::Real;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{preds} predictions for {golds} gold graphs")]
    LengthMismatch { preds: usize, golds: usize },
    #[error("vocabulary mismatch: {0}")]
    VocabMismatch(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{0}")]
    Pool(String),
}

/// True positive, false positive and false negative counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Counts {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// Harmonic mean of precision and recall, 0 when both are 0.
    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    pub fn scores(&self) -> Scores {
        Scores { precision: self.precision(), recall: self.recall(), f1: self.f1() }
    }
}

impl std::ops::Add for Counts {
    type Output = Counts;

    fn add(self, o: Counts) -> Counts {
        Counts { tp: self.tp + o.tp, fp: self.fp + o.fp, fn_: self.fn_ + o.fn_ }
    }
}

impl std::iter::Sum for Counts {
    fn sum<I: Iterator<Item = Counts>>(iter: I) -> Counts {
        iter.fold(Counts::default(), |a, b| a + b)
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

fn multiset_counts<K: std::hash::Hash + Eq>(pred: Vec<K>, gold: Vec<K>) -> Counts {
    let (np, ng) = (pred.len(), gold.len());
    let mut bag: HashMap<K, usize> = HashMap::new();
    for k in gold {
        *bag.entry(k).or_insert(0) += 1;
    }
    let mut tp = 0;
    for k in pred {
        if let Some(c) = bag.get_mut(&k).filter(|c| **c > 0) {
            *c -= 1;
            tp += 1;
        }
    }
    Counts { tp, fp: np - tp, fn_: ng - tp }
}

pub fn node_prf(pred: &SceneGraph, gold: &SceneGraph) -> Counts {
    multiset_counts(pred.nodes().iter().collect(), gold.nodes().iter().collect())
}

fn triplets(g: &SceneGraph) -> Vec<(&str, &str, &str)> {
    g.edges().iter().map(|e| (g.label(e.src), e.label.as_str(), g.label(e.dst))).collect()
}

pub fn edge_prf(pred: &SceneGraph, gold: &SceneGraph) -> Counts {
    multiset_counts(triplets(pred), triplets(gold))
}

/// Fraction of predictions isomorphic to their gold graph; 0 for empty lists.
pub fn graph_accuracy(preds: &[SceneGraph], golds: &[SceneGraph]) -> Result<f64, EvalError> {
    if preds.len() != golds.len() {
        return Err(EvalError::LengthMismatch { preds: preds.len(), golds: golds.len() });
    }
    let mut hits = 0;
    for (p, g) in preds.iter().zip(golds) {
        hits += usize::from(p.isomorphic(g)?);
    }
    Ok(ratio(hits, preds.len()))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Scores restricted to instances with a given number of edit operations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinReport {
    pub ops: String,
    pub count: usize,
    pub node: Scores,
    pub edge: Scores,
    pub graph_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub count: usize,
    pub node: Scores,
    pub edge: Scores,
    /// `None` for baselines that do not generate graphs.
    pub graph_accuracy: Option<f64>,
    pub bins: Vec<BinReport>,
}

pub const BINS: [(&str, usize, usize); 3] = [("1-2", 1, 2), ("3-4", 3, 4), ("5+", 5, usize::MAX)];

struct Tally {
    node: Counts,
    edge: Counts,
    hits: usize,
    count: usize,
}

impl Tally {
    fn new() -> Self {
        Tally { node: Counts::default(), edge: Counts::default(), hits: 0, count: 0 }
    }

    fn scores(&self, with_accuracy: bool) -> (Scores, Scores, Option<f64>) {
        let acc = with_accuracy.then(|| ratio(self.hits, self.count));
        (self.node.scores(), self.edge.scores(), acc)
    }
}

/// Scores `preds` against the targets of `data`. With `with_accuracy` off the
/// graph accuracy fields are left empty.
pub fn score(preds: &[SceneGraph], data: &[ModificationInstance], with_accuracy: bool) -> Result<MetricsReport, EvalError> {
    if preds.len() != data.len() {
        return Err(EvalError::LengthMismatch { preds: preds.len(), golds: data.len() });
    }
    let mut all = Tally::new();
    let mut bins: Vec<Tally> = BINS.iter().map(|_| Tally::new()).collect();
    for (p, inst) in preds.iter().zip(data) {
        let gold = &inst.target;
        let (n, e) = (node_prf(p, gold), edge_prf(p, gold));
        let hit = if with_accuracy { usize::from(p.isomorphic(gold)?) } else { 0 };
        let ops = inst.num_ops();
        let slots = std::iter::once(&mut all)
            .chain(bins.iter_mut().zip(BINS).filter(|(_, (_, lo, hi))| (*lo..=*hi).contains(&ops)).map(|(t, _)| t));
        for t in slots {
            t.node = t.node + n;
            t.edge = t.edge + e;
            t.hits += hit;
            t.count += 1;
        }
    }
    let (node, edge, graph_accuracy) = all.scores(with_accuracy);
    let bins = bins
        .iter()
        .zip(BINS)
        .map(|(t, (name, _, _))| {
            let (node, edge, graph_accuracy) = t.scores(with_accuracy);
            BinReport { ops: name.to_string(), count: t.count, node, edge, graph_accuracy }
        })
        .collect();
    Ok(MetricsReport { count: all.count, node, edge, graph_accuracy, bins })
}

/// The baseline that predicts the source graph unchanged.
pub fn copy_source(data: &[ModificationInstance]) -> MetricsReport {
    let preds: Vec<SceneGraph> = data.iter().map(|i| i.source.clone()).collect();
    score(&preds, data, false).expect("lengths agree")
}

/// Fails when the dataset's labels clearly come from another domain: an
/// unknown edge label, or more than half of the node label occurrences unknown.
pub fn check_vocab<T: Real>(model: &Model<T>, data: &[ModificationInstance]) -> Result<(), EvalError> {
    let (mut labels, mut unknown) = (0usize, 0usize);
    for inst in data {
        for g in [&inst.source, &inst.target] {
            for e in g.edges() {
                if !model.edges.contains(&e.label) {
                    return Err(EvalError::VocabMismatch(format!("edge label {:?} is not in the checkpoint", e.label)));
                }
            }
            labels += g.len();
            unknown += g.nodes().iter().filter(|l| !model.tokens.contains(l)).count();
        }
    }
    if 2 * unknown > labels {
        return Err(EvalError::VocabMismatch(format!("{unknown} of {labels} node labels are not in the checkpoint")));
    }
    Ok(())
}

/// Greedy predictions in dataset order. An instance where the decoder emits
/// no node yields the empty graph.
pub fn predict<T: Real>(model: &Model<T>, data: &[ModificationInstance], jobs: usize) -> Result<Vec<SceneGraph>, EvalError> {
    let one = |inst: &ModificationInstance| match model.generate(&inst.source, &inst.query) {
        Ok(g) => Ok(g),
        Err(ModelError::DecodeOverflow) => Ok(SceneGraph::new(vec![], vec![])?),
        Err(e) => Err(EvalError::from(e)),
    };
    if jobs <= 1 {
        return data.iter().map(one).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build().map_err(|e| EvalError::Pool(e.to_string()))?;
    pool.install(|| data.par_iter().map(one).collect())
}

pub fn evaluate<T: Real>(model: &Model<T>, data: &[ModificationInstance], jobs: usize) -> Result<MetricsReport, EvalError> {
    check_vocab(model, data)?;
    let preds = predict(model, data, jobs)?;
    score(&preds, data, true)
}

fn pct(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }

    /// Plain-text table; the bin rows follow the overall row when `bins` is set.
    pub fn table(&self, bins: bool) -> String {
        let mut out = String::new();
        let header = ["Ops", "Count", "Node P", "Node R", "Node F1", "Edge P", "Edge R", "Edge F1", "Graph Acc"];
        out.push_str(&header.iter().map(|h| format!("{h:>9}")).collect::<Vec<_>>().join(" "));
        out.push('\n');
        let mut row = |ops: &str, count: usize, n: &Scores, e: &Scores, acc: Option<f64>| {
            let cells = [
                ops.to_string(),
                count.to_string(),
                pct(n.precision),
                pct(n.recall),
                pct(n.f1),
                pct(e.precision),
                pct(e.recall),
                pct(e.f1),
                acc.map_or("-".to_string(), pct),
            ];
            out.push_str(&cells.iter().map(|c| format!("{c:>9}")).collect::<Vec<_>>().join(" "));
            out.push('\n');
        };
        row("all", self.count, &self.node, &self.edge, self.graph_accuracy);
        if bins {
            for b in &self.bins {
                row(&b.ops, b.count, &b.node, &b.edge, b.graph_accuracy);
            }
        }
        out
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.table(false))
    }
}
