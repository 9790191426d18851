//! Building (source graph, query, target graph) modification instances.
//!
//! Single edits follow three recipes: delete a node, insert a node (the
//! deletion run backwards), or substitute a label with a similar one.
//! [`multi`] chains several edits under a terminate-weighted sampler.

pub mod corpus;
pub mod dataset;
pub mod lexicon;
pub mod mixing;
pub mod multi;
pub mod similarity;
pub mod single;
pub mod templates;

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{EditKind, EditOp, GraphError, SceneGraph};

pub use corpus::GraphSampler;
pub use dataset::{generate_dataset, Dataset, Recipe, SplitSizes};
pub use lexicon::Lexicon;
pub use mixing::{mixed_batches, MixedBatch};
pub use multi::{calibrate_p, gen_multi, mean_ops, GenConfig};
pub use similarity::SimilarityTable;
pub use single::{gen_delete, gen_insert, gen_single, gen_substitute};
pub use templates::{Template, TemplateSet};

/// Separator between the sub-queries of a multi-edit instance.
pub const QUERY_SEPARATOR: &str = " ; ";

/// Largest graph admitted into a dataset.
pub const MAX_NODES: usize = 5;

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("graph has {0} node(s); at least 2 are needed")]
    TooSmall(usize),
    #[error("no node has a similar label to substitute")]
    NoSimilarLabel,
    #[error("no template for {0:?}")]
    NoTemplate(EditKind),
    #[error("malformed template: {0}")]
    BadTemplate(String),
    #[error("malformed resource line: {0}")]
    BadResource(String),
    #[error("only {produced} of {needed} instances could be generated from the supplied graphs")]
    InsufficientGraphs { needed: usize, produced: usize },
    #[error("cannot mix batches from an empty {0} set")]
    EmptySet(&'static str),
    #[error("invalid generation config: {0}")]
    BadConfig(String),
    #[error("mean of {target} operations is outside the reachable range [{low:.3}, {high:.3}]")]
    Unreachable { target: f64, low: f64, high: f64 },
    #[error("line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One dataset record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModificationInstance {
    pub source: SceneGraph,
    pub query: String,
    pub target: SceneGraph,
    pub ops: Vec<EditKind>,
    /// Full edit provenance; only known for freshly generated instances.
    #[serde(skip)]
    pub edits: Vec<EditOp>,
}

impl ModificationInstance {
    pub fn num_ops(&self) -> usize {
        self.ops.len()
    }
}

/// Dataset admission with the default node cap.
pub fn filter(inst: &ModificationInstance) -> bool {
    filter_with(inst, MAX_NODES)
}

/// Both graphs weakly connected with 1..=`max_nodes` nodes, and a nonempty query.
pub fn filter_with(inst: &ModificationInstance, max_nodes: usize) -> bool {
    let admissible =
        |g: &SceneGraph| (1..=max_nodes).contains(&g.len()) && g.weakly_connected().unwrap_or(false);
    admissible(&inst.source) && admissible(&inst.target) && !inst.query.trim().is_empty()
}

pub fn write_jsonl<T: Serialize>(mut w: impl Write, records: &[T]) -> Result<(), DatagenError> {
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| DatagenError::Parse { line: 0, source: e })?;
        w.write_all(line.as_bytes())?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(r: impl BufRead) -> Result<Vec<T>, DatagenError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| DatagenError::Parse { line: i + 1, source: e })?);
    }
    Ok(out)
}
