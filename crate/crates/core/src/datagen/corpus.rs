//! A sampler for small, caption-like scene graphs.
//!
//! Graphs are trees over objects: attributes hang off objects through an
//! `attribute` edge and objects are linked by relation edges. Node counts
//! follow [`SIZE_WEIGHTS`], giving about 3.25 nodes per graph, so that
//! source graphs of generated instances average close to 2.9 nodes.

use rand::seq::IndexedRandom;
use rand::RngExt;

use super::lexicon::{GroupKind, Lexicon, ATTRIBUTE_EDGE};
use crate::graph::{Edge, SceneGraph};
use crate::rng::{self, Rng};

/// Relative weight of graphs with 2, 3, 4 and 5 nodes.
pub const SIZE_WEIGHTS: [(usize, f64); 4] = [(2, 0.30), (3, 0.30), (4, 0.25), (5, 0.15)];

#[derive(Debug, Clone)]
pub struct GraphSampler {
    objects: Vec<String>,
    attributes: Vec<String>,
    relations: Vec<String>,
    sizes: Vec<(usize, f64)>,
    attribute_rate: f64,
}

impl GraphSampler {
    pub fn new(lex: &Lexicon) -> Self {
        GraphSampler {
            objects: lex.labels(GroupKind::Object).map(str::to_string).collect(),
            attributes: lex.labels(GroupKind::Attribute).map(str::to_string).collect(),
            relations: lex.relations.clone(),
            sizes: SIZE_WEIGHTS.to_vec(),
            attribute_rate: 0.5,
        }
    }

    /// Replaces the node-count distribution.
    pub fn with_sizes(mut self, sizes: &[(usize, f64)]) -> Self {
        self.sizes = sizes.to_vec();
        self
    }

    pub fn sample(&self, rng: &mut Rng) -> SceneGraph {
        let n = self.sample_size(rng);
        let mut nodes: Vec<String> = vec![self.fresh(&self.objects, &[], rng)];
        let mut is_object = vec![true];
        let mut edges: Vec<Edge> = Vec::new();
        while nodes.len() < n {
            let objects: Vec<usize> = (0..nodes.len()).filter(|&i| is_object[i]).collect();
            let anchor = *objects.choose(rng).expect("root is an object");
            let new_id = nodes.len();
            if rng.random_bool(self.attribute_rate) {
                let existing: Vec<String> = edges
                    .iter()
                    .filter(|e| e.src == anchor && e.label == ATTRIBUTE_EDGE)
                    .map(|e| nodes[e.dst].clone())
                    .collect();
                nodes.push(self.fresh(&self.attributes, &existing, rng));
                is_object.push(false);
                edges.push(Edge::new(anchor, new_id, ATTRIBUTE_EDGE));
            } else {
                nodes.push(self.fresh(&self.objects, &nodes, rng));
                is_object.push(true);
                let rel = self.relations.choose(rng).expect("relations present").clone();
                if rng.random_bool(0.7) {
                    edges.push(Edge::new(anchor, new_id, rel));
                } else {
                    edges.push(Edge::new(new_id, anchor, rel));
                }
            }
        }
        SceneGraph::new(nodes, edges).expect("trees are valid scene graphs")
    }

    /// `count` graphs, graph `i` drawn from its own stream of `seed`.
    pub fn sample_corpus(&self, count: usize, seed: u64) -> Vec<SceneGraph> {
        (0..count)
            .map(|i| self.sample(&mut rng::stream(seed, i as u64)))
            .collect()
    }

    fn sample_size(&self, rng: &mut Rng) -> usize {
        let total: f64 = self.sizes.iter().map(|s| s.1).sum();
        let mut u = rng.random::<f64>() * total;
        for &(n, w) in &self.sizes {
            if u < w {
                return n;
            }
            u -= w;
        }
        self.sizes.last().map(|s| s.0).unwrap_or(1)
    }

    /// A label from `pool`, avoiding `taken` when a few retries allow.
    fn fresh(&self, pool: &[String], taken: &[String], rng: &mut Rng) -> String {
        let mut pick = pool.choose(rng).expect("pool nonempty").clone();
        for _ in 0..5 {
            if !taken.contains(&pick) {
                break;
            }
            pick = pool.choose(rng).expect("pool nonempty").clone();
        }
        pick
    }
}
