//! Train/dev/test corpora by rejection sampling.

use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::multi::{gen_multi_admissible, GenConfig, MAX_ATTEMPTS};
use super::similarity::SimilarityTable;
use super::single::gen_single;
use super::templates::TemplateSet;
use super::{filter_with, DatagenError, ModificationInstance, MAX_NODES};
use crate::graph::{EditKind, SceneGraph};
use crate::rng;

const CHUNK: usize = 512;

#[derive(Debug, Clone, PartialEq)]
pub enum Recipe {
    /// One edit per instance, kind uniform over the list.
    Single(Vec<EditKind>),
    Multi(GenConfig),
}

impl Recipe {
    pub fn all_single() -> Self {
        Recipe::Single(vec![EditKind::Insert, EditKind::Delete, EditKind::Substitute])
    }

    fn max_nodes(&self) -> usize {
        match self {
            Recipe::Single(_) => MAX_NODES,
            Recipe::Multi(cfg) => cfg.max_nodes,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSizes {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
}

impl SplitSizes {
    pub fn total(&self) -> usize {
        self.train + self.dev + self.test
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub train: Vec<ModificationInstance>,
    pub dev: Vec<ModificationInstance>,
    pub test: Vec<ModificationInstance>,
}

/// One admissible instance for graph `index`, or `None` after repeated rejections.
fn instance_for(
    g: &SceneGraph,
    index: usize,
    recipe: &Recipe,
    templates: &TemplateSet,
    sim: &SimilarityTable,
    seed: u64,
) -> Option<ModificationInstance> {
    let mut r = rng::stream(seed, index as u64);
    match recipe {
        Recipe::Single(kinds) => (0..MAX_ATTEMPTS)
            .filter_map(|_| gen_single(g, kinds, templates, sim, &mut r).ok())
            .find(|inst| filter_with(inst, MAX_NODES)),
        Recipe::Multi(cfg) => gen_multi_admissible(g, cfg, templates, sim, &mut r),
    }
}

/// Builds disjoint splits: each base graph contributes at most one instance,
/// graphs are visited in a seed-determined order, and graph `i` draws from
/// stream `i` of `seed`. The result is the same for every `jobs` value.
pub fn generate_dataset(
    graphs: &[SceneGraph],
    recipe: &Recipe,
    templates: &TemplateSet,
    sim: &SimilarityTable,
    sizes: SplitSizes,
    seed: u64,
    jobs: usize,
) -> Result<Dataset, DatagenError> {
    if let Recipe::Multi(cfg) = recipe {
        cfg.validate()?;
    }
    let max_nodes = recipe.max_nodes();
    let mut order: Vec<usize> = (0..graphs.len())
        .filter(|&i| {
            let g = &graphs[i];
            (2..=max_nodes).contains(&g.len()) && g.weakly_connected().unwrap_or(false)
        })
        .collect();
    order.shuffle(&mut rng::seeded(seed));

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| DatagenError::BadConfig(e.to_string()))?;

    let needed = sizes.total();
    let mut accepted: Vec<ModificationInstance> = Vec::with_capacity(needed);
    for chunk in order.chunks(CHUNK) {
        if accepted.len() >= needed {
            break;
        }
        let made: Vec<Option<ModificationInstance>> = pool.install(|| {
            chunk
                .par_iter()
                .map(|&i| instance_for(&graphs[i], i, recipe, templates, sim, seed))
                .collect()
        });
        accepted.extend(made.into_iter().flatten());
    }
    if accepted.len() < needed {
        return Err(DatagenError::InsufficientGraphs { needed, produced: accepted.len() });
    }
    accepted.truncate(needed);
    let test = accepted.split_off(sizes.train + sizes.dev);
    let dev = accepted.split_off(sizes.train);
    Ok(Dataset { train: accepted, dev, test })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::corpus::GraphSampler;
    use crate::datagen::filter;
    use crate::datagen::lexicon::Lexicon;

    fn corpus(n: usize) -> Vec<SceneGraph> {
        GraphSampler::new(&Lexicon::builtin()).sample_corpus(n, 9)
    }

    #[test]
    fn deterministic_filtered_and_jobs_invariant() {
        let graphs = corpus(400);
        let sizes = SplitSizes { train: 200, dev: 30, test: 30 };
        let set = TemplateSet::default();
        let sim = SimilarityTable::builtin();
        let a = generate_dataset(&graphs, &Recipe::all_single(), &set, &sim, sizes, 7, 1).unwrap();
        let b = generate_dataset(&graphs, &Recipe::all_single(), &set, &sim, sizes, 7, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!((a.train.len(), a.dev.len(), a.test.len()), (200, 30, 30));
        assert!(a.train.iter().chain(&a.dev).chain(&a.test).all(filter));
        let c = generate_dataset(&graphs, &Recipe::all_single(), &set, &sim, sizes, 8, 1).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn too_few_graphs() {
        let graphs = corpus(20);
        let sizes = SplitSizes { train: 50, dev: 5, test: 5 };
        let err = generate_dataset(
            &graphs,
            &Recipe::all_single(),
            &TemplateSet::default(),
            &SimilarityTable::builtin(),
            sizes,
            1,
            1,
        )
        .unwrap_err();
        assert!(matches!(err, DatagenError::InsufficientGraphs { needed: 60, .. }));
    }

    #[test]
    fn edit_kind_node_multisets() {
        let graphs = corpus(300);
        let sizes = SplitSizes { train: 200, dev: 0, test: 0 };
        let ds = generate_dataset(
            &graphs,
            &Recipe::all_single(),
            &TemplateSet::default(),
            &SimilarityTable::builtin(),
            sizes,
            2,
            1,
        )
        .unwrap();
        let sorted = |g: &SceneGraph| {
            let mut v = g.nodes().to_vec();
            v.sort();
            v
        };
        for inst in &ds.train {
            let (src, tgt) = (sorted(&inst.source), sorted(&inst.target));
            match inst.ops[0] {
                EditKind::Delete => assert_eq!(remove_one(&src, &tgt), Some(())),
                EditKind::Insert => assert_eq!(remove_one(&tgt, &src), Some(())),
                EditKind::Substitute => {
                    assert_eq!(multiset_minus(&src, &tgt) + multiset_minus(&tgt, &src), 2, "{inst:?}");
                }
            }
        }
    }

    fn multiset_minus(a: &[String], b: &[String]) -> usize {
        let mut rest = a.to_vec();
        for l in b {
            if let Some(pos) = rest.iter().position(|x| x == l) {
                rest.remove(pos);
            }
        }
        rest.len()
    }

    /// `Some(())` when `big` equals `small` plus exactly one label.
    fn remove_one(big: &[String], small: &[String]) -> Option<()> {
        if big.len() != small.len() + 1 {
            return None;
        }
        let mut rest = big.to_vec();
        for l in small {
            let pos = rest.iter().position(|x| x == l)?;
            rest.remove(pos);
        }
        Some(())
    }
}
