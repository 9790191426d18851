//! Multi-edit instances.
//!
//! The first edit is drawn uniformly from {insert, delete, substitute}. After
//! that, each round samples from {terminate, insert, delete, substitute} with
//! logits `[P^e, 1, 1, 1]` where `e = (total - avail) / (total * tau)`, `total`
//! is the current target size and `avail` counts its unedited nodes. Edited
//! nodes are never touched again and the loop stops once nothing is left.
//!
//! Source and target are both carved out of the original graph:
//!
//! * insert removes one more unedited node from the source,
//! * delete removes an unedited node from the target,
//! * substitute relabels an unedited target node.

use rand::seq::IndexedRandom;
use rand::RngExt;

use super::similarity::SimilarityTable;
use super::templates::TemplateSet;
use super::{filter_with, DatagenError, ModificationInstance, MAX_NODES, QUERY_SEPARATOR};
use crate::graph::{EditKind, EditOp, SceneGraph};
use crate::rng::{self, Rng};

/// Retries per graph before a multi-edit draw is given up.
pub const MAX_ATTEMPTS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenConfig {
    /// Terminate weight; larger values give shorter edit chains.
    pub p: f64,
    /// Temperature of the terminate schedule.
    pub tau: f64,
    pub max_nodes: usize,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig { p: 1.0, tau: 1.0, max_nodes: MAX_NODES, seed: 0 }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), DatagenError> {
        if !(self.p > 0.0 && self.p.is_finite()) {
            return Err(DatagenError::BadConfig(format!("P must be positive, got {}", self.p)));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(DatagenError::BadConfig(format!("tau must be positive, got {}", self.tau)));
        }
        Ok(())
    }
}

/// Probabilities of `[terminate, insert, delete, substitute]` for a target
/// of `total` nodes of which `avail` are unedited.
pub fn action_distribution(p: f64, tau: f64, total: usize, avail: usize) -> [f64; 4] {
    let exponent = (total - avail) as f64 / (total as f64 * tau);
    let logits = [p.powf(exponent).min(700.0), 1.0, 1.0, 1.0];
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps = logits.map(|l| (l - max).exp());
    let z: f64 = exps.iter().sum();
    exps.map(|e| e / z)
}

/// A multi-edit instance together with the original-graph ids it edited.
#[derive(Debug, Clone)]
pub struct MultiOutcome {
    pub instance: ModificationInstance,
    pub touched: Vec<usize>,
}

struct Work<'a> {
    g: &'a SceneGraph,
    in_source: Vec<bool>,
    in_target: Vec<bool>,
    labels: Vec<String>,
    modified: Vec<bool>,
    queries: Vec<String>,
    ops: Vec<EditKind>,
    edits: Vec<EditOp>,
    touched: Vec<usize>,
}

impl<'a> Work<'a> {
    fn new(g: &'a SceneGraph) -> Self {
        let n = g.len();
        Work {
            g,
            in_source: vec![true; n],
            in_target: vec![true; n],
            labels: g.nodes().to_vec(),
            modified: vec![false; n],
            queries: vec![],
            ops: vec![],
            edits: vec![],
            touched: vec![],
        }
    }

    fn count(v: &[bool]) -> usize {
        v.iter().filter(|&&b| b).count()
    }

    fn available(&self) -> Vec<usize> {
        (0..self.g.len()).filter(|&i| self.in_target[i] && !self.modified[i]).collect()
    }

    fn candidates(&self, kind: EditKind, sim: &SimilarityTable) -> Vec<usize> {
        let avail = self.available();
        match kind {
            EditKind::Insert if Self::count(&self.in_source) >= 2 => avail,
            EditKind::Delete if Self::count(&self.in_target) >= 2 => avail,
            EditKind::Substitute => avail.into_iter().filter(|&i| !sim.similar(&self.labels[i]).is_empty()).collect(),
            _ => vec![],
        }
    }

    fn apply(
        &mut self,
        kind: EditKind,
        node: usize,
        templates: &TemplateSet,
        sim: &SimilarityTable,
        rng: &mut Rng,
    ) -> Result<(), DatagenError> {
        let template = templates.choose(kind, rng)?;
        let label = self.labels[node].clone();
        match kind {
            EditKind::Insert => {
                self.in_source[node] = false;
                self.queries.push(template.render(&label, None));
                self.edits.push(EditOp::insert(label, vec![]));
            }
            EditKind::Delete => {
                self.in_target[node] = false;
                self.queries.push(template.render(&label, None));
                self.edits.push(EditOp::delete(label));
            }
            EditKind::Substitute => {
                let replacement = sim.similar(&label).choose(rng).ok_or(DatagenError::NoSimilarLabel)?.clone();
                self.queries.push(template.render(&label, Some(&replacement)));
                self.labels[node] = replacement.clone();
                self.edits.push(EditOp::substitute(label, replacement));
            }
        }
        self.modified[node] = true;
        self.ops.push(kind);
        self.touched.push(node);
        Ok(())
    }

    fn finish(self) -> MultiOutcome {
        let keep = |mask: &[bool]| (0..self.g.len()).filter(|&i| mask[i]).collect::<Vec<_>>();
        let source = self.g.induced(&keep(&self.in_source));
        let target_ids = keep(&self.in_target);
        let mut target = self.g.induced(&target_ids);
        for (k, &i) in target_ids.iter().enumerate() {
            target = target.with_label(k, self.labels[i].clone());
        }
        MultiOutcome {
            instance: ModificationInstance {
                source,
                query: self.queries.join(QUERY_SEPARATOR),
                target,
                ops: self.ops,
                edits: self.edits,
            },
            touched: self.touched,
        }
    }
}

const KINDS: [EditKind; 3] = [EditKind::Insert, EditKind::Delete, EditKind::Substitute];

fn draw(probs: &[f64], rng: &mut Rng) -> Option<usize> {
    let total: f64 = probs.iter().sum();
    if total <= 0.0 {
        return None;
    }
    let mut u = rng.random::<f64>() * total;
    let last = probs.iter().rposition(|&p| p > 0.0)?;
    for (i, &p) in probs.iter().enumerate() {
        if u < p {
            return Some(i);
        }
        u -= p;
    }
    Some(last)
}

/// One multi-edit draw; also reports which original nodes were edited.
pub fn gen_multi_traced(
    g: &SceneGraph,
    cfg: &GenConfig,
    templates: &TemplateSet,
    sim: &SimilarityTable,
    rng: &mut Rng,
) -> Result<MultiOutcome, DatagenError> {
    cfg.validate()?;
    if g.len() < 2 {
        return Err(DatagenError::TooSmall(g.len()));
    }
    let mut work = Work::new(g);

    let first: Vec<f64> = KINDS.iter().map(|&k| if work.candidates(k, sim).is_empty() { 0.0 } else { 1.0 }).collect();
    let kind = KINDS[draw(&first, rng).ok_or(DatagenError::NoSimilarLabel)?];
    let node = *work.candidates(kind, sim).choose(rng).expect("feasible");
    work.apply(kind, node, templates, sim, rng)?;

    loop {
        let total = Work::count(&work.in_target);
        let avail = work.available().len();
        if avail == 0 {
            break;
        }
        let mut probs = action_distribution(cfg.p, cfg.tau, total, avail);
        for (slot, &k) in probs[1..].iter_mut().zip(&KINDS) {
            if work.candidates(k, sim).is_empty() {
                *slot = 0.0;
            }
        }
        match draw(&probs, rng) {
            None | Some(0) => break,
            Some(a) => {
                let kind = KINDS[a - 1];
                let node = *work.candidates(kind, sim).choose(rng).expect("feasible");
                work.apply(kind, node, templates, sim, rng)?;
            }
        }
    }
    Ok(work.finish())
}

pub fn gen_multi(
    g: &SceneGraph,
    cfg: &GenConfig,
    templates: &TemplateSet,
    sim: &SimilarityTable,
    rng: &mut Rng,
) -> Result<ModificationInstance, DatagenError> {
    gen_multi_traced(g, cfg, templates, sim, rng).map(|o| o.instance)
}

/// Draws until an instance passes the dataset filter, up to [`MAX_ATTEMPTS`].
pub fn gen_multi_admissible(
    g: &SceneGraph,
    cfg: &GenConfig,
    templates: &TemplateSet,
    sim: &SimilarityTable,
    rng: &mut Rng,
) -> Option<ModificationInstance> {
    (0..MAX_ATTEMPTS)
        .filter_map(|_| gen_multi(g, cfg, templates, sim, rng).ok())
        .find(|inst| filter_with(inst, cfg.max_nodes))
}

/// Mean edit count over `samples` admissible draws, cycling through `graphs`
/// with one stream per sample.
pub fn mean_ops(graphs: &[SceneGraph], cfg: &GenConfig, sim: &SimilarityTable, samples: usize) -> f64 {
    let templates = TemplateSet::default();
    let (mut total, mut count) = (0usize, 0usize);
    for k in 0..samples {
        let g = &graphs[k % graphs.len()];
        let mut r = rng::stream(cfg.seed, k as u64);
        if let Some(inst) = gen_multi_admissible(g, cfg, &templates, sim, &mut r) {
            total += inst.num_ops();
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        total as f64 / count as f64
    }
}

/// Bisection on `log P` for a target mean edit count. The same streams are
/// reused for every probe so the simulated mean varies smoothly with `P`.
pub fn calibrate_p(
    graphs: &[SceneGraph],
    target: f64,
    tau: f64,
    sim: &SimilarityTable,
    samples: usize,
    seed: u64,
) -> Result<f64, DatagenError> {
    if graphs.is_empty() {
        return Err(DatagenError::InsufficientGraphs { needed: 1, produced: 0 });
    }
    let cfg = |p: f64| GenConfig { p, tau, max_nodes: MAX_NODES, seed };
    let (mut lo, mut hi) = (-10.0f64, 10.0f64);
    let (m_lo, m_hi) = (mean_ops(graphs, &cfg(lo.exp()), sim, samples), mean_ops(graphs, &cfg(hi.exp()), sim, samples));
    if !(m_hi..=m_lo).contains(&target) {
        return Err(DatagenError::Unreachable { target, low: m_hi, high: m_lo });
    }
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if mean_ops(graphs, &cfg(mid.exp()), sim, samples) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((0.5 * (lo + hi)).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::corpus::GraphSampler;
    use crate::datagen::lexicon::Lexicon;

    fn fig1() -> SceneGraph {
        SceneGraph::from_parts(
            &["boy", "shirt", "young", "black"],
            &[(0, 1, "in"), (0, 2, "attribute"), (1, 3, "attribute")],
        )
        .unwrap()
    }

    #[test]
    fn first_round_is_uniform() {
        let d = action_distribution(3.7, 1.0, 3, 3);
        for p in d {
            assert!((p - 0.25).abs() < 1e-12);
        }
        // a larger P pushes mass onto terminate once some nodes are edited
        let later = action_distribution(3.7, 1.0, 4, 2);
        assert!(later[0] > 0.25 && later[1] < 0.25);
        assert!((later.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn exhausted_graph_stops_after_one_edit() {
        let pair = SceneGraph::from_parts(&["boy", "young"], &[(0, 1, "attribute")]).unwrap();
        let cfg = GenConfig { p: 1e-6, ..GenConfig::default() };
        let set = TemplateSet::default();
        let sim = SimilarityTable::builtin();
        for seed in 0..40 {
            let out = gen_multi_traced(&pair, &cfg, &set, &sim, &mut rng::seeded(seed)).unwrap();
            assert!(out.instance.num_ops() <= 2);
            if out.instance.ops[0] == EditKind::Delete {
                // one node left and the source may not shrink below one node either
                assert!(out.instance.num_ops() <= 2);
            }
        }
    }

    #[test]
    fn never_edits_twice_and_joins_queries() {
        let set = TemplateSet::default();
        let sim = SimilarityTable::builtin();
        let cfg = GenConfig { p: 1e-3, ..GenConfig::default() };
        let mut r = rng::seeded(5);
        for _ in 0..200 {
            let out = gen_multi_traced(&fig1(), &cfg, &set, &sim, &mut r).unwrap();
            let mut t = out.touched.clone();
            t.sort_unstable();
            t.dedup();
            assert_eq!(t.len(), out.touched.len());
            assert_eq!(out.instance.query.split(QUERY_SEPARATOR).count(), out.instance.num_ops());
            assert!(!out.instance.source.is_empty() && !out.instance.target.is_empty());
        }
    }

    #[test]
    fn rejects_bad_config_and_tiny_graphs() {
        let set = TemplateSet::default();
        let sim = SimilarityTable::builtin();
        let mut r = rng::seeded(0);
        let bad = GenConfig { p: 0.0, ..GenConfig::default() };
        assert!(matches!(gen_multi(&fig1(), &bad, &set, &sim, &mut r), Err(DatagenError::BadConfig(_))));
        let one = SceneGraph::from_parts(&["a"], &[]).unwrap();
        assert!(matches!(gen_multi(&one, &GenConfig::default(), &set, &sim, &mut r), Err(DatagenError::TooSmall(1))));
    }

    #[test]
    fn mean_ops_decreases_with_p() {
        let graphs = GraphSampler::new(&Lexicon::builtin()).sample_corpus(300, 1);
        let sim = SimilarityTable::builtin();
        let means: Vec<f64> = [0.01, 1.0, 10.0, 1000.0]
            .iter()
            .map(|&p| mean_ops(&graphs, &GenConfig { p, ..GenConfig::default() }, &sim, 2000))
            .collect();
        for w in means.windows(2) {
            assert!(w[1] <= w[0] + 0.02, "{means:?}");
        }
        assert!(means[0] > means[3] + 0.1);
    }
}
