//! Graph-conditioned encoder-decoder.
//!
//! The encoder is a transformer whose graph rows only see their first-order
//! neighbours. Graph and query representations are combined by one of three
//! [`Fusion`] modes, a GRU with attention decodes node labels, and a second
//! GRU labels every lower-triangle cell of the adjacency matrix.

mod decoder;
mod encoder;

use std::fmt;
use std::str::FromStr;

use rand::RngExt;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{GraphError, SceneGraph};
use crate::rng;
use crate::tensor::{ParamId, ParamSet, Real, Tensor, TensorError};
use crate::vocab::Vocabulary;

pub use decoder::{lower_triangle, EdgeOutput, NodeOutput};
pub use encoder::{attention_mask, AttentionMask, EncoderOutput};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("decoder produced no nodes before end of sequence")]
    DecodeOverflow,
    #[error("query is empty")]
    EmptyQuery,
    #[error("invalid model config: {0}")]
    BadConfig(String),
    #[error("parameter {name}: expected shape {expected:?}, found {found:?}")]
    BadParam { name: String, expected: Vec<usize>, found: Option<Vec<usize>> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fusion {
    Concat,
    Gating,
    Cross,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeDecoderKind {
    Adjacency,
    Flat,
}

macro_rules! name_enum {
    ($ty:ty, $($variant:ident => $name:literal),+) => {
        impl $ty {
            pub fn name(self) -> &'static str {
                match self {
                    $(Self::$variant => $name),+
                }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }

        impl FromStr for $ty {
            type Err = ModelError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($name => Ok(Self::$variant),)+
                    other => Err(ModelError::BadConfig(format!("unknown {} {other:?}", stringify!($ty)))),
                }
            }
        }
    };
}

name_enum!(Fusion, Concat => "concat", Gating => "gating", Cross => "cross");
name_enum!(EdgeDecoderKind, Adjacency => "adjacency", Flat => "flat");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub gru_hidden: usize,
    pub fusion: Fusion,
    pub edge_decoder: EdgeDecoderKind,
    pub max_decode_nodes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            layers: 3,
            heads: 4,
            d_model: 256,
            d_ff: 512,
            gru_hidden: 256,
            fusion: Fusion::Cross,
            edge_decoder: EdgeDecoderKind::Flat,
            max_decode_nodes: 8,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let dims = [self.layers, self.heads, self.d_model, self.d_ff, self.gru_hidden, self.max_decode_nodes];
        if dims.contains(&0) {
            return Err(ModelError::BadConfig("all dimensions must be positive".into()));
        }
        if self.d_model % self.heads != 0 {
            return Err(ModelError::BadConfig(format!(
                "d_model {} is not divisible by heads {}",
                self.d_model, self.heads
            )));
        }
        Ok(())
    }

    /// Sets one field from its textual form; returns `Ok(false)` for an unknown key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool, ModelError> {
        let num = || value.parse::<usize>().map_err(|e| ModelError::BadConfig(format!("{key}: {e}")));
        match key {
            "layers" => self.layers = num()?,
            "heads" => self.heads = num()?,
            "d_model" => self.d_model = num()?,
            "d_ff" => self.d_ff = num()?,
            "gru_hidden" => self.gru_hidden = num()?,
            "max_decode_nodes" => self.max_decode_nodes = num()?,
            "fusion" => self.fusion = value.parse()?,
            "edge_decoder" => self.edge_decoder = value.parse()?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("layers", self.layers.to_string()),
            ("heads", self.heads.to_string()),
            ("d_model", self.d_model.to_string()),
            ("d_ff", self.d_ff.to_string()),
            ("gru_hidden", self.gru_hidden.to_string()),
            ("fusion", self.fusion.to_string()),
            ("edge_decoder", self.edge_decoder.to_string()),
            ("max_decode_nodes", self.max_decode_nodes.to_string()),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Init {
    Xavier,
    Zero,
    One,
    Embed,
}

#[derive(Debug, Clone)]
struct LayerIds {
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
    ln1_g: ParamId,
    ln1_b: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
}

#[derive(Debug, Clone)]
struct MlpIds {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Debug, Clone)]
struct GruIds {
    wx: ParamId,
    bx: ParamId,
    wh: ParamId,
    bh: ParamId,
}

#[derive(Debug, Clone)]
struct DecoderIds {
    gru: GruIds,
    att: ParamId,
    out_w: ParamId,
    out_b: ParamId,
}

#[derive(Debug, Clone)]
struct Ids {
    tok: ParamId,
    edge: ParamId,
    layers: Vec<LayerIds>,
    gate_x: Option<MlpIds>,
    gate_y: Option<MlpIds>,
    h0_w: ParamId,
    h0_b: ParamId,
    node: DecoderIds,
    edge_dec: DecoderIds,
    row: Option<(ParamId, ParamId)>,
}

fn param_specs(cfg: &ModelConfig, n_tok: usize, n_edge: usize) -> Vec<(String, Vec<usize>, Init)> {
    let (d, f, h) = (cfg.d_model, cfg.d_ff, cfg.gru_hidden);
    let mut s: Vec<(String, Vec<usize>, Init)> = Vec::new();
    let mut p = |name: String, shape: Vec<usize>, init: Init| s.push((name, shape, init));
    p("emb.tok".into(), vec![n_tok, d], Init::Embed);
    p("emb.edge".into(), vec![n_edge, d], Init::Embed);
    for l in 0..cfg.layers {
        // no key bias: a shift shared by a whole score row cancels in the softmax
        for w in ["q", "k", "v", "o"] {
            p(format!("enc.{l}.w{w}"), vec![d, d], Init::Xavier);
            if w != "k" {
                p(format!("enc.{l}.b{w}"), vec![d], Init::Zero);
            }
        }
        p(format!("enc.{l}.ln1.g"), vec![d], Init::One);
        p(format!("enc.{l}.ln1.b"), vec![d], Init::Zero);
        p(format!("enc.{l}.ff.w1"), vec![d, f], Init::Xavier);
        p(format!("enc.{l}.ff.b1"), vec![f], Init::Zero);
        p(format!("enc.{l}.ff.w2"), vec![f, d], Init::Xavier);
        p(format!("enc.{l}.ff.b2"), vec![d], Init::Zero);
        p(format!("enc.{l}.ln2.g"), vec![d], Init::One);
        p(format!("enc.{l}.ln2.b"), vec![d], Init::Zero);
    }
    if cfg.fusion == Fusion::Gating {
        for side in ["x", "y"] {
            p(format!("gate.{side}.w1"), vec![2 * d, d], Init::Xavier);
            p(format!("gate.{side}.b1"), vec![d], Init::Zero);
            // zero output layer: every gate starts at sigmoid(0) = 0.5
            p(format!("gate.{side}.w2"), vec![d, d], Init::Zero);
            p(format!("gate.{side}.b2"), vec![d], Init::Zero);
        }
    }
    p("dec.node.h0.w".into(), vec![d, h], Init::Xavier);
    p("dec.node.h0.b".into(), vec![h], Init::Zero);
    for (name, input) in [("node", d), ("edge", d + 2 * h)] {
        p(format!("dec.{name}.gru.wx"), vec![input, 3 * h], Init::Xavier);
        p(format!("dec.{name}.gru.bx"), vec![3 * h], Init::Zero);
        p(format!("dec.{name}.gru.wh"), vec![h, 3 * h], Init::Xavier);
        p(format!("dec.{name}.gru.bh"), vec![3 * h], Init::Zero);
        p(format!("dec.{name}.att"), vec![h, d], Init::Xavier);
        p(format!("dec.{name}.out.w"), vec![h + d, d], Init::Xavier);
        p(format!("dec.{name}.out.b"), vec![d], Init::Zero);
    }
    if cfg.edge_decoder == EdgeDecoderKind::Adjacency {
        p("dec.edge.row.w".into(), vec![h, h], Init::Xavier);
        p("dec.edge.row.b".into(), vec![h], Init::Zero);
    }
    s
}

fn resolve<T: Real>(cfg: &ModelConfig, ps: &ParamSet<T>) -> Result<Ids, ModelError> {
    let id = |name: &str| ps.require(name).map_err(ModelError::from);
    let mlp = |side: &str| -> Result<MlpIds, ModelError> {
        Ok(MlpIds {
            w1: id(&format!("gate.{side}.w1"))?,
            b1: id(&format!("gate.{side}.b1"))?,
            w2: id(&format!("gate.{side}.w2"))?,
            b2: id(&format!("gate.{side}.b2"))?,
        })
    };
    let dec = |name: &str| -> Result<DecoderIds, ModelError> {
        Ok(DecoderIds {
            gru: GruIds {
                wx: id(&format!("dec.{name}.gru.wx"))?,
                bx: id(&format!("dec.{name}.gru.bx"))?,
                wh: id(&format!("dec.{name}.gru.wh"))?,
                bh: id(&format!("dec.{name}.gru.bh"))?,
            },
            att: id(&format!("dec.{name}.att"))?,
            out_w: id(&format!("dec.{name}.out.w"))?,
            out_b: id(&format!("dec.{name}.out.b"))?,
        })
    };
    let layers = (0..cfg.layers)
        .map(|l| {
            let n = |s: &str| id(&format!("enc.{l}.{s}"));
            Ok(LayerIds {
                wq: n("wq")?,
                bq: n("bq")?,
                wk: n("wk")?,
                wv: n("wv")?,
                bv: n("bv")?,
                wo: n("wo")?,
                bo: n("bo")?,
                ln1_g: n("ln1.g")?,
                ln1_b: n("ln1.b")?,
                w1: n("ff.w1")?,
                b1: n("ff.b1")?,
                w2: n("ff.w2")?,
                b2: n("ff.b2")?,
                ln2_g: n("ln2.g")?,
                ln2_b: n("ln2.b")?,
            })
        })
        .collect::<Result<Vec<_>, ModelError>>()?;
    let gating = cfg.fusion == Fusion::Gating;
    Ok(Ids {
        tok: id("emb.tok")?,
        edge: id("emb.edge")?,
        layers,
        gate_x: if gating { Some(mlp("x")?) } else { None },
        gate_y: if gating { Some(mlp("y")?) } else { None },
        h0_w: id("dec.node.h0.w")?,
        h0_b: id("dec.node.h0.b")?,
        node: dec("node")?,
        edge_dec: dec("edge")?,
        row: match cfg.edge_decoder {
            EdgeDecoderKind::Adjacency => Some((id("dec.edge.row.w")?, id("dec.edge.row.b")?)),
            EdgeDecoderKind::Flat => None,
        },
    })
}

/// A source graph and query mapped to vocabulary ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedInput {
    pub labels: Vec<usize>,
    /// `(src, dst, edge label id)`
    pub edges: Vec<(usize, usize, usize)>,
    pub query: Vec<usize>,
}

/// Configuration, vocabularies and parameters.
#[derive(Debug, Clone)]
pub struct Model<T: Real> {
    pub config: ModelConfig,
    pub tokens: Vocabulary,
    pub edges: Vocabulary,
    pub params: ParamSet<T>,
    ids: Ids,
}

impl<T: Real> Model<T> {
    /// Fresh parameters drawn from `seed`.
    pub fn new(config: ModelConfig, tokens: Vocabulary, edges: Vocabulary, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut r = rng::seeded(seed);
        let mut params = ParamSet::new();
        for (name, shape, init) in param_specs(&config, tokens.len(), edges.len()) {
            let limit = match (init, shape.as_slice()) {
                (Init::Xavier, [a, b]) => (6.0 / (a + b) as f64).sqrt(),
                (Init::Embed, _) => 1.0,
                _ => 0.0,
            };
            let t = Tensor::from_fn(shape, |_| match init {
                Init::Zero => T::zero(),
                Init::One => T::one(),
                Init::Xavier | Init::Embed => T::from_f64_lossy(r.random_range(-limit..limit)),
            });
            params.insert(name, t);
        }
        Self::from_params(config, tokens, edges, params)
    }

    /// Wraps existing parameters after checking every name and shape.
    pub fn from_params(
        config: ModelConfig,
        tokens: Vocabulary,
        edges: Vocabulary,
        params: ParamSet<T>,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        let specs = param_specs(&config, tokens.len(), edges.len());
        for (name, shape, _) in &specs {
            let found = params.by_name(name).map(|t| t.shape().to_vec());
            if found.as_ref() != Some(shape) {
                return Err(ModelError::BadParam { name: name.clone(), expected: shape.clone(), found });
            }
        }
        if params.len() != specs.len() {
            return Err(ModelError::BadConfig(format!(
                "expected {} parameter tensors, found {}",
                specs.len(),
                params.len()
            )));
        }
        let ids = resolve(&config, &params)?;
        Ok(Model { config, tokens, edges, params, ids })
    }

    /// Same model with every parameter converted to another precision.
    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            tokens: self.tokens.clone(),
            edges: self.edges.clone(),
            params: self.params.cast(),
            ids: self.ids.clone(),
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.params.num_scalars()
    }

    pub fn encode_input(&self, g: &SceneGraph, query: &str) -> EncodedInput {
        EncodedInput {
            labels: g.nodes().iter().map(|l| self.tokens.id(l)).collect(),
            edges: g.edges().iter().map(|e| (e.src, e.dst, self.edges.id(&e.label))).collect(),
            query: self.tokens.encode(query),
        }
    }
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;
    use crate::vocab::VocabKind;

    pub fn fig1() -> SceneGraph {
        SceneGraph::from_parts(
            &["boy", "shirt", "young", "black"],
            &[(0, 1, "in"), (0, 2, "attribute"), (1, 3, "attribute")],
        )
        .unwrap()
    }

    pub fn vocabs() -> (Vocabulary, Vocabulary) {
        let words = "boy shirt young black girl man hat red remove add change to the in on";
        let tokens = Vocabulary::build(VocabKind::Tokens, words.split(' '), 1);
        let edges = Vocabulary::build(VocabKind::Edges, ["in", "attribute", "on"], 1);
        (tokens, edges)
    }

    pub fn micro(fusion: Fusion, edge_decoder: EdgeDecoderKind) -> ModelConfig {
        ModelConfig { layers: 1, heads: 1, d_model: 8, d_ff: 16, gru_hidden: 8, fusion, edge_decoder, max_decode_nodes: 6 }
    }

    pub fn model(fusion: Fusion, edge_decoder: EdgeDecoderKind, seed: u64) -> Model<f64> {
        let (t, e) = vocabs();
        Model::new(micro(fusion, edge_decoder), t, e, seed).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::testutil::*;
    use super::*;

    #[test]
    fn config_validation_and_set() {
        let mut c = ModelConfig::default();
        assert!(c.validate().is_ok());
        assert!(c.set("heads", "3").unwrap());
        assert!(c.validate().is_err());
        assert!(!c.set("bogus", "1").unwrap());
        assert!(c.set("fusion", "sideways").is_err());
        c.set("fusion", "gating").unwrap();
        assert_eq!(c.fusion, Fusion::Gating);
    }

    #[test]
    fn params_checked_on_load() {
        let m = model(Fusion::Gating, EdgeDecoderKind::Adjacency, 1);
        let again = Model::from_params(m.config.clone(), m.tokens.clone(), m.edges.clone(), m.params.clone());
        assert!(again.is_ok());
        let mut other = m.config.clone();
        other.fusion = Fusion::Concat;
        assert!(Model::from_params(other, m.tokens.clone(), m.edges.clone(), m.params.clone()).is_err());
        assert!(m.params.by_name("gate.x.w2").unwrap().data().iter().all(|&x| x == 0.0));
    }
}
