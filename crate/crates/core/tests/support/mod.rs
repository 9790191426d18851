//! Brute-force references and random graphs shared by the integration and
//! acceptance suites.
#![allow(dead_code)]

use std::collections::BTreeMap;

use graphmod::eval::Counts;
use graphmod::graph::{Edge, SceneGraph};
use graphmod::model::{attention_mask, EdgeDecoderKind, EncodedInput, Fusion, Model, ModelConfig, ModelError};
use graphmod::rng::Rng;
use graphmod::tensor::{grad_check, grad_check_wide, F64x2, ParamSet, Real, Tape, Tensor, TensorError, Var};
use graphmod::vocab::{VocabKind, Vocabulary, NULL};
use rand::RngExt;

/// A random DAG with up to `max_nodes` nodes. Labels come from a small
/// alphabet so duplicates are common; node order is shuffled.
pub fn random_dag(r: &mut Rng, max_nodes: usize) -> SceneGraph {
    const NODES: [&str; 4] = ["boy", "hat", "red", "dog"];
    const EDGES: [&str; 2] = ["on", "has"];
    let n = r.random_range(1..=max_nodes);
    let nodes: Vec<String> = (0..n).map(|_| NODES[r.random_range(0..NODES.len())].to_string()).collect();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in 0..i {
            if r.random_bool(0.35) {
                edges.push(Edge::new(j, i, EDGES[r.random_range(0..EDGES.len())]));
            }
        }
    }
    let g = SceneGraph::new(nodes, edges).expect("forward edges form a DAG");
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, r.random_range(0..=i));
    }
    g.permuted(&order)
}

/// A prediction for `gold`: an exact relabelled copy, a copy with one change,
/// or an unrelated graph.
pub fn random_prediction(r: &mut Rng, gold: &SceneGraph, max_nodes: usize) -> SceneGraph {
    let n = gold.len();
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, r.random_range(0..=i));
    }
    let copy = gold.permuted(&order);
    match r.random_range(0..4) {
        0 => copy,
        1 => copy.with_label(r.random_range(0..n), "hat"),
        2 if !copy.edges().is_empty() => {
            let drop = r.random_range(0..copy.edges().len());
            let edges = copy.edges().iter().enumerate().filter(|(k, _)| *k != drop).map(|(_, e)| e.clone()).collect();
            SceneGraph::new(copy.nodes().to_vec(), edges).unwrap()
        }
        _ => random_dag(r, max_nodes),
    }
}

fn bag<K: Ord>(items: impl IntoIterator<Item = K>) -> BTreeMap<K, usize> {
    let mut m = BTreeMap::new();
    for k in items {
        *m.entry(k).or_insert(0) += 1;
    }
    m
}

fn overlap<K: Ord + Clone>(pred: Vec<K>, gold: Vec<K>) -> Counts {
    let (np, ng) = (pred.len(), gold.len());
    let (bp, bg) = (bag(pred), bag(gold));
    let tp = bp.iter().map(|(k, c)| (*c).min(*bg.get(k).unwrap_or(&0))).sum();
    Counts { tp, fp: np - tp, fn_: ng - tp }
}

pub fn node_counts(pred: &SceneGraph, gold: &SceneGraph) -> Counts {
    overlap(pred.nodes().to_vec(), gold.nodes().to_vec())
}

fn triplets(g: &SceneGraph) -> Vec<(String, String, String)> {
    g.edges().iter().map(|e| (g.label(e.src).into(), e.label.clone(), g.label(e.dst).into())).collect()
}

pub fn edge_counts(pred: &SceneGraph, gold: &SceneGraph) -> Counts {
    overlap(triplets(pred), triplets(gold))
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for k in 0..n {
            let mut q = p.clone();
            q.insert(k, n - 1);
            out.push(q);
        }
    }
    out
}

/// Isomorphism by trying every node bijection.
pub fn isomorphic(a: &SceneGraph, b: &SceneGraph) -> bool {
    if a.len() != b.len() || a.edges().len() != b.edges().len() {
        return false;
    }
    let target: BTreeMap<(usize, usize), &str> = b.edges().iter().map(|e| ((e.src, e.dst), e.label.as_str())).collect();
    permutations(a.len()).into_iter().any(|p| {
        (0..a.len()).all(|i| a.label(i) == b.label(p[i]))
            && a.edges().iter().all(|e| target.get(&(p[e.src], p[e.dst])) == Some(&e.label.as_str()))
    })
}

/// Corpus-level node and edge counts plus graph accuracy.
pub fn corpus(preds: &[SceneGraph], golds: &[SceneGraph]) -> (Counts, Counts, f64) {
    let node = preds.iter().zip(golds).map(|(p, g)| node_counts(p, g)).sum();
    let edge = preds.iter().zip(golds).map(|(p, g)| edge_counts(p, g)).sum();
    let hits = preds.iter().zip(golds).filter(|(p, g)| isomorphic(p, g)).count();
    let acc = if golds.is_empty() { 0.0 } else { hits as f64 / golds.len() as f64 };
    (node, edge, acc)
}

/// The small model the gradient checks run on: d=8, one layer, one head.
pub fn micro_model(fusion: Fusion, edge_decoder: EdgeDecoderKind, seed: u64) -> Model<f64> {
    let tokens = Vocabulary::build(
        VocabKind::Tokens,
        ["boy", "shirt", "young", "remove", "the", "black", "hat"],
        1,
    );
    let edges = Vocabulary::build(VocabKind::Edges, ["in", "attribute"], 1);
    let cfg = ModelConfig {
        layers: 1,
        heads: 1,
        d_model: 8,
        d_ff: 16,
        gru_hidden: 8,
        fusion,
        edge_decoder,
        max_decode_nodes: 6,
    };
    Model::new(cfg, tokens, edges, seed).expect("valid micro config")
}

fn loss<T: Real>(m: &Model<T>, tape: &mut Tape<'_, T>, input: &EncodedInput, nodes: &[usize], cells: &[usize]) -> Result<Var, TensorError> {
    let (a, b) = m.nll(tape, input, nodes, cells).map_err(|e| match e {
        ModelError::Tensor(t) => t,
        other => panic!("{other}"),
    })?;
    tape.add(a, b)
}

/// Worst relative gradient error of the full loss on a 3-node graph and a
/// 4-token query.
pub fn micro_gradient_error(fusion: Fusion, edge_decoder: EdgeDecoderKind, seed: u64) -> f64 {
    let m = micro_model(fusion, edge_decoder, seed);
    let g = SceneGraph::from_parts(&["boy", "shirt", "young"], &[(0, 1, "in"), (0, 2, "attribute")]).unwrap();
    let input = m.encode_input(&g, "remove the black hat");
    assert_eq!(input.query.len(), 4);
    let nodes = [m.tokens.id("boy"), m.tokens.id("shirt"), m.tokens.id("young")];
    let cells = [m.edges.id("in"), m.edges.id("attribute"), NULL];
    let wide: Model<F64x2> = m.cast();
    grad_check_wide(
        &m.params,
        1e-5,
        |t| loss(&m, t, &input, &nodes, &cells),
        |t| loss(&wide, t, &input, &nodes, &cells),
    )
    .unwrap()
}

type Case = fn(&mut Tape<'_, f64>, Var, Var, (usize, usize)) -> Result<Var, TensorError>;

/// Every differentiable tape operation, applied to two `m x n` inputs.
pub fn primitive_cases() -> Vec<(&'static str, Case)> {
    vec![
        ("matmul", |t, a, b, _| {
            let bt = t.transpose(b);
            t.matmul(a, bt)
        }),
        ("matmul_t", |t, a, b, _| t.matmul_t(a, b)),
        ("add", |t, a, b, _| t.add(a, b)),
        ("sub", |t, a, b, _| t.sub(a, b)),
        ("mul", |t, a, b, _| t.mul(a, b)),
        ("add_row", |t, a, b, _| {
            let r = t.slice_rows(b, 0, 1)?;
            t.add_row(a, r)
        }),
        ("scale", |t, a, _, _| Ok(t.scale(a, -1.7))),
        ("one_minus", |t, a, _, _| Ok(t.one_minus(a))),
        ("sigmoid", |t, a, _, _| Ok(t.sigmoid(a))),
        ("tanh", |t, a, _, _| Ok(t.tanh(a))),
        ("relu", |t, a, _, _| Ok(t.relu(a))),
        ("concat_rows", |t, a, b, _| t.concat_rows(&[a, b, a])),
        ("concat_cols", |t, a, b, _| t.concat_cols(&[b, a])),
        ("slice_rows", |t, a, _, (m, _)| t.slice_rows(a, m / 2, m - m / 2)),
        ("slice_cols", |t, a, _, (_, n)| t.slice_cols(a, n / 2, n - n / 2)),
        ("gather", |t, a, _, (m, _)| t.gather(a, &[m - 1, 0, m - 1])),
        ("broadcast_rows", |t, a, _, _| {
            let r = t.slice_rows(a, 0, 1)?;
            t.broadcast_rows(r, 3)
        }),
        ("softmax", |t, a, _, _| t.softmax(a)),
        ("masked_softmax", |t, a, _, (m, n)| {
            let mask: Vec<bool> = (0..m * n).map(|k| k % n == 0 || k % 3 != 0).collect();
            t.masked_softmax(a, Some(&mask))
        }),
        ("layer_norm", |t, a, b, _| {
            let g = t.slice_rows(b, 0, 1)?;
            let bias = t.slice_rows(a, 0, 1)?;
            t.layer_norm(a, g, bias, 1e-5)
        }),
        ("cross_entropy", |t, a, _, (m, n)| {
            let targets: Vec<usize> = (0..m).map(|r| (r * 7) % n).collect();
            t.cross_entropy(a, &targets)
        }),
        ("sum", |t, a, _, _| Ok(t.sum(a))),
        ("mean_rows", |t, a, _, _| Ok(t.mean_rows(a))),
        ("transpose", |t, a, _, _| Ok(t.transpose(a))),
    ]
}

/// Worst error over all primitives on `trials` random shapes, with the
/// primitive that produced it.
pub fn primitive_gradient_error(trials: u64) -> (f64, &'static str) {
    let mut r = graphmod::rng::seeded(11);
    let mut worst = (0.0, "");
    for _ in 0..trials {
        let m = r.random_range(1..5usize);
        let n = r.random_range(2..6usize);
        for (name, case) in primitive_cases() {
            let mut ps = ParamSet::new();
            for name in ["a", "b"] {
                let data = (0..m * n).map(|_| r.random_range(-1.0..1.0)).collect();
                ps.insert(name, Tensor::new(vec![m, n], data).unwrap());
            }
            // a fixed projection makes the loss depend on every output entry
            let err = grad_check(&mut ps, 1e-5, |t| {
                let (a, b) = (t.param_named("a")?, t.param_named("b")?);
                let y = case(t, a, b, (m, n))?;
                let (ym, yn) = t.shape(y);
                let w: Vec<f64> = (0..ym * yn).map(|k| (k as f64 + 1.0).sin() + 0.3).collect();
                let w = t.constant(ym, yn, w)?;
                let p = t.mul(y, w)?;
                Ok(t.sum(p))
            })
            .unwrap();
            if err > worst.0 {
                worst = (err, name);
            }
        }
    }
    worst
}

/// Largest attention weight on a masked pair and largest row-sum error over
/// every layer and head, for each graph.
pub fn mask_violations(fusion: Fusion, graphs: &[SceneGraph]) -> (f64, f64) {
    let tokens = Vocabulary::build(VocabKind::Tokens, ["boy", "hat", "red", "dog", "remove", "the"], 1);
    let edges = Vocabulary::build(VocabKind::Edges, ["on", "has"], 1);
    let cfg = ModelConfig {
        layers: 2,
        heads: 2,
        d_model: 16,
        d_ff: 16,
        gru_hidden: 8,
        fusion,
        edge_decoder: EdgeDecoderKind::Flat,
        max_decode_nodes: 6,
    };
    let m: Model<f64> = Model::new(cfg, tokens, edges, 1).unwrap();
    // node rows start after the graph CLS under gating
    let off = usize::from(fusion == Fusion::Gating);
    let (mut leak, mut sum_err) = (0.0f64, 0.0f64);
    for g in graphs {
        let input = m.encode_input(g, "remove the red hat");
        let mut tape = Tape::new(&m.params);
        let out = m.encode(&mut tape, &input).unwrap();
        let mask = &out.mask;
        assert_eq!(*mask, attention_mask(g, input.query.len(), fusion));
        for i in 0..g.len() {
            for j in 0..g.len() {
                let adjacent = i == j || g.edge_label(i, j).is_some() || g.edge_label(j, i).is_some();
                assert_eq!(mask.get(i + off, j + off), adjacent, "mask disagrees with graph at ({i}, {j})");
            }
        }
        assert_eq!(out.attention.len(), 4);
        let size = mask.size();
        for &a in &out.attention {
            let w = tape.value(a);
            for i in 0..size {
                let row = &w[i * size..(i + 1) * size];
                for (j, &x) in row.iter().enumerate() {
                    if !mask.get(i, j) {
                        leak = leak.max(x.abs());
                    }
                }
                sum_err = sum_err.max((row.iter().sum::<f64>() - 1.0).abs());
            }
        }
    }
    (leak, sum_err)
}
