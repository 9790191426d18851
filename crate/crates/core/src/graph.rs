//! Scene graphs: labeled nodes joined by directed, labeled edges.
//!
//! Node ids are dense 0-based positions in the node list. Every graph is a
//! DAG with at most one edge per ordered pair and no self-loops; these are
//! checked by [`SceneGraph::new`] and preserved by every edit.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest graph [`isomorphic`] will search by default.
pub const DEFAULT_ISO_CAP: usize = 12;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("graph contains a directed cycle")]
    Cycle,
    #[error("graph has no nodes")]
    EmptyGraph,
    #[error("graph with {size} nodes exceeds the isomorphism cap of {cap}")]
    SizeLimit { size: usize, cap: usize },
    #[error("node {0} not found")]
    NodeNotFound(usize),
    #[error("duplicate edge {0} -> {1}")]
    DuplicateEdge(usize, usize),
    #[error("self-loop on node {0}")]
    SelfLoop(usize),
    #[error("edge endpoint {0} is out of range")]
    BadEndpoint(usize),
    #[error("edit is malformed: {0}")]
    BadEdit(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub label: String,
}

impl Edge {
    pub fn new(src: usize, dst: usize, label: impl Into<String>) -> Self {
        Edge { src, dst, label: label.into() }
    }
}

/// A validated scene graph.
///
/// Serializes as `{"nodes": ["boy", "shirt"], "edges": [[0, 1, "in"]]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawGraph", into = "RawGraph")]
pub struct SceneGraph {
    nodes: Vec<String>,
    edges: Vec<Edge>,
}

#[derive(Serialize, Deserialize)]
struct RawGraph {
    nodes: Vec<String>,
    edges: Vec<(usize, usize, String)>,
}

impl TryFrom<RawGraph> for SceneGraph {
    type Error = GraphError;

    fn try_from(raw: RawGraph) -> Result<Self, GraphError> {
        let edges = raw.edges.into_iter().map(|(s, d, l)| Edge::new(s, d, l)).collect();
        SceneGraph::new(raw.nodes, edges)
    }
}

impl From<SceneGraph> for RawGraph {
    fn from(g: SceneGraph) -> Self {
        RawGraph {
            nodes: g.nodes,
            edges: g.edges.into_iter().map(|e| (e.src, e.dst, e.label)).collect(),
        }
    }
}

impl SceneGraph {
    pub fn new(nodes: Vec<String>, edges: Vec<Edge>) -> Result<Self, GraphError> {
        let n = nodes.len();
        let mut seen = std::collections::HashSet::new();
        for e in &edges {
            if e.src >= n {
                return Err(GraphError::BadEndpoint(e.src));
            }
            if e.dst >= n {
                return Err(GraphError::BadEndpoint(e.dst));
            }
            if e.src == e.dst {
                return Err(GraphError::SelfLoop(e.src));
            }
            if !seen.insert((e.src, e.dst)) {
                return Err(GraphError::DuplicateEdge(e.src, e.dst));
            }
        }
        let g = SceneGraph { nodes, edges };
        g.topological_order()?;
        Ok(g)
    }

    /// Builds a graph from string slices; handy in tests and examples.
    pub fn from_parts(nodes: &[&str], edges: &[(usize, usize, &str)]) -> Result<Self, GraphError> {
        SceneGraph::new(
            nodes.iter().map(|s| s.to_string()).collect(),
            edges.iter().map(|&(s, d, l)| Edge::new(s, d, l)).collect(),
        )
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn label(&self, id: usize) -> &str {
        &self.nodes[id]
    }

    pub fn edge_label(&self, src: usize, dst: usize) -> Option<&str> {
        self.edges
            .iter()
            .find(|e| e.src == src && e.dst == dst)
            .map(|e| e.label.as_str())
    }

    /// Edges touching `id` in either direction.
    pub fn incident(&self, id: usize) -> impl Iterator<Item = &Edge> + '_ {
        self.edges.iter().filter(move |e| e.src == id || e.dst == id)
    }

    /// First-order neighbours of `id`, inbound and outbound, without `id` itself.
    pub fn neighbors(&self, id: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .incident(id)
            .map(|e| if e.src == id { e.dst } else { e.src })
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Kahn's algorithm; ready nodes are released in ascending id order.
    pub fn topological_order(&self) -> Result<Vec<usize>, GraphError> {
        self.topological_order_by_key(|id| id)
    }

    /// Kahn's algorithm where ties among ready nodes go to the smallest `key`.
    pub fn topological_order_by_key<K: Ord>(
        &self,
        key: impl Fn(usize) -> K,
    ) -> Result<Vec<usize>, GraphError> {
        let n = self.nodes.len();
        let mut indegree = vec![0usize; n];
        let mut out_adj = vec![Vec::new(); n];
        for e in &self.edges {
            indegree[e.dst] += 1;
            out_adj[e.src].push(e.dst);
        }
        let mut ready: BinaryHeap<Reverse<(K, usize)>> = (0..n)
            .filter(|&i| indegree[i] == 0)
            .map(|i| Reverse((key(i), i)))
            .collect();
        let mut order = Vec::with_capacity(n);
        while let Some(Reverse((_, u))) = ready.pop() {
            order.push(u);
            for &v in &out_adj[u] {
                indegree[v] -= 1;
                if indegree[v] == 0 {
                    ready.push(Reverse((key(v), v)));
                }
            }
        }
        if order.len() == n {
            Ok(order)
        } else {
            Err(GraphError::Cycle)
        }
    }

    /// True when the undirected projection has exactly one component.
    pub fn weakly_connected(&self) -> Result<bool, GraphError> {
        let n = self.nodes.len();
        if n == 0 {
            return Err(GraphError::EmptyGraph);
        }
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        let mut components = n;
        for e in &self.edges {
            let (a, b) = (find(&mut parent, e.src), find(&mut parent, e.dst));
            if a != b {
                parent[a] = b;
                components -= 1;
            }
        }
        Ok(components == 1)
    }

    /// Reorders the node list so that `order[k]` becomes node `k`.
    pub fn permuted(&self, order: &[usize]) -> SceneGraph {
        assert_eq!(order.len(), self.len(), "order must be a permutation of node ids");
        let mut new_id = vec![usize::MAX; self.len()];
        for (k, &old) in order.iter().enumerate() {
            new_id[old] = k;
        }
        let nodes = order.iter().map(|&i| self.nodes[i].clone()).collect();
        let mut edges: Vec<Edge> = self
            .edges
            .iter()
            .map(|e| Edge::new(new_id[e.src], new_id[e.dst], e.label.clone()))
            .collect();
        edges.sort();
        SceneGraph { nodes, edges }
    }

    /// Subgraph induced by `keep` (in the given order), renumbered densely.
    pub fn induced(&self, keep: &[usize]) -> SceneGraph {
        let mut new_id = vec![usize::MAX; self.len()];
        for (k, &old) in keep.iter().enumerate() {
            new_id[old] = k;
        }
        let nodes = keep.iter().map(|&i| self.nodes[i].clone()).collect();
        let edges = self
            .edges
            .iter()
            .filter(|e| new_id[e.src] != usize::MAX && new_id[e.dst] != usize::MAX)
            .map(|e| Edge::new(new_id[e.src], new_id[e.dst], e.label.clone()))
            .collect();
        SceneGraph { nodes, edges }
    }

    pub fn with_label(&self, id: usize, label: impl Into<String>) -> SceneGraph {
        let mut g = self.clone();
        g.nodes[id] = label.into();
        g
    }

    /// Label-preserving isomorphism with the default size cap.
    pub fn isomorphic(&self, other: &SceneGraph) -> Result<bool, GraphError> {
        isomorphic_with_cap(self, other, DEFAULT_ISO_CAP)
    }
}

/// Label-preserving isomorphism test.
pub fn isomorphic(g1: &SceneGraph, g2: &SceneGraph) -> Result<bool, GraphError> {
    isomorphic_with_cap(g1, g2, DEFAULT_ISO_CAP)
}

/// Exhaustive backtracking over label-compatible node bijections.
pub fn isomorphic_with_cap(g1: &SceneGraph, g2: &SceneGraph, cap: usize) -> Result<bool, GraphError> {
    for g in [g1, g2] {
        if g.len() > cap {
            return Err(GraphError::SizeLimit { size: g.len(), cap });
        }
    }
    if g1.len() != g2.len() || g1.edges.len() != g2.edges.len() {
        return Ok(false);
    }
    if label_multiset(&g1.nodes) != label_multiset(&g2.nodes) {
        return Ok(false);
    }
    if edge_labels(g1) != edge_labels(g2) {
        return Ok(false);
    }

    let n = g1.len();
    let (a1, a2) = (adj(g1), adj(g2));
    let degree = |m: &[Vec<Option<&str>>], i: usize| {
        let out = m[i].iter().filter(|x| x.is_some()).count();
        let inn = m.iter().filter(|row| row[i].is_some()).count();
        (out, inn)
    };
    let sig1: Vec<_> = (0..n).map(|i| (g1.nodes[i].as_str(), degree(&a1, i))).collect();
    let sig2: Vec<_> = (0..n).map(|i| (g2.nodes[i].as_str(), degree(&a2, i))).collect();

    struct Search<'a> {
        a1: &'a [Vec<Option<&'a str>>],
        a2: &'a [Vec<Option<&'a str>>],
        sig1: &'a [(&'a str, (usize, usize))],
        sig2: &'a [(&'a str, (usize, usize))],
        map: Vec<usize>,
        used: Vec<bool>,
    }

    impl Search<'_> {
        fn extend(&mut self, i: usize) -> bool {
            let n = self.sig1.len();
            if i == n {
                return true;
            }
            for p in 0..n {
                if self.used[p] || self.sig1[i] != self.sig2[p] {
                    continue;
                }
                let consistent = (0..i).all(|k| {
                    let q = self.map[k];
                    self.a1[i][k] == self.a2[p][q] && self.a1[k][i] == self.a2[q][p]
                });
                if !consistent {
                    continue;
                }
                self.map[i] = p;
                self.used[p] = true;
                if self.extend(i + 1) {
                    return true;
                }
                self.used[p] = false;
            }
            false
        }
    }

    let mut search = Search {
        a1: &a1,
        a2: &a2,
        sig1: &sig1,
        sig2: &sig2,
        map: vec![0; n],
        used: vec![false; n],
    };
    Ok(search.extend(0))
}

fn edge_labels(g: &SceneGraph) -> Vec<&str> {
    let mut v: Vec<&str> = g.edges.iter().map(|e| e.label.as_str()).collect();
    v.sort_unstable();
    v
}

fn adj(g: &SceneGraph) -> Vec<Vec<Option<&str>>> {
    let n = g.len();
    let mut m = vec![vec![None; n]; n];
    for e in &g.edges {
        m[e.src][e.dst] = Some(e.label.as_str());
    }
    m
}

fn label_multiset(labels: &[String]) -> BTreeMap<&str, usize> {
    let mut m = BTreeMap::new();
    for l in labels {
        *m.entry(l.as_str()).or_insert(0) += 1;
    }
    m
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EditKind {
    Insert,
    Delete,
    Substitute,
}

impl EditKind {
    pub fn name(self) -> &'static str {
        match self {
            EditKind::Insert => "insert",
            EditKind::Delete => "delete",
            EditKind::Substitute => "substitute",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Edge runs from the inserted node to the neighbour.
    Out,
    /// Edge runs from the neighbour to the inserted node.
    In,
}

/// An edge to re-create when inserting a node.
///
/// `neighbor` is an id in the graph *before* insertion; `neighbor_label`
/// records which label was expected there.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AttachEdge {
    pub neighbor: usize,
    pub neighbor_label: String,
    pub label: String,
    pub direction: Direction,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditOp {
    pub kind: EditKind,
    pub node_label: String,
    pub replacement_label: Option<String>,
    pub attach_edges: Vec<AttachEdge>,
}

impl EditOp {
    pub fn delete(label: impl Into<String>) -> Self {
        EditOp { kind: EditKind::Delete, node_label: label.into(), replacement_label: None, attach_edges: vec![] }
    }

    pub fn substitute(label: impl Into<String>, replacement: impl Into<String>) -> Self {
        EditOp {
            kind: EditKind::Substitute,
            node_label: label.into(),
            replacement_label: Some(replacement.into()),
            attach_edges: vec![],
        }
    }

    pub fn insert(label: impl Into<String>, attach_edges: Vec<AttachEdge>) -> Self {
        EditOp { kind: EditKind::Insert, node_label: label.into(), replacement_label: None, attach_edges }
    }

    /// The insertion that undoes deleting `node` from `g`, to be applied to
    /// the post-deletion graph at position `node`.
    pub fn inverse_of_delete(g: &SceneGraph, node: usize) -> Result<Self, GraphError> {
        if node >= g.len() {
            return Err(GraphError::NodeNotFound(node));
        }
        let shift = |id: usize| if id > node { id - 1 } else { id };
        let attach = g
            .incident(node)
            .map(|e| {
                let (other, direction) =
                    if e.src == node { (e.dst, Direction::Out) } else { (e.src, Direction::In) };
                AttachEdge {
                    neighbor: shift(other),
                    neighbor_label: g.nodes[other].clone(),
                    label: e.label.clone(),
                    direction,
                }
            })
            .collect();
        Ok(EditOp::insert(g.nodes[node].clone(), attach))
    }
}

/// Applies `op` to `g`.
///
/// For `Delete` and `Substitute`, `at` names the node to edit and its label
/// must equal `op.node_label`. For `Insert`, `at` is the position the new
/// node takes; later nodes shift up by one.
pub fn apply_edit(g: &SceneGraph, op: &EditOp, at: usize) -> Result<SceneGraph, GraphError> {
    match op.kind {
        EditKind::Delete => {
            if at >= g.len() || g.nodes[at] != op.node_label {
                return Err(GraphError::NodeNotFound(at));
            }
            let keep: Vec<usize> = (0..g.len()).filter(|&i| i != at).collect();
            Ok(g.induced(&keep))
        }
        EditKind::Substitute => {
            if at >= g.len() || g.nodes[at] != op.node_label {
                return Err(GraphError::NodeNotFound(at));
            }
            let replacement = op
                .replacement_label
                .as_ref()
                .ok_or(GraphError::BadEdit("substitution without a replacement label"))?;
            Ok(g.with_label(at, replacement.clone()))
        }
        EditKind::Insert => {
            if op.replacement_label.is_some() {
                return Err(GraphError::BadEdit("replacement label on an insertion"));
            }
            if at > g.len() {
                return Err(GraphError::NodeNotFound(at));
            }
            let shift = |id: usize| if id >= at { id + 1 } else { id };
            let mut nodes = g.nodes.clone();
            nodes.insert(at, op.node_label.clone());
            let mut edges: Vec<Edge> = g
                .edges
                .iter()
                .map(|e| Edge::new(shift(e.src), shift(e.dst), e.label.clone()))
                .collect();
            for a in &op.attach_edges {
                if a.neighbor >= g.len() || g.nodes[a.neighbor] != a.neighbor_label {
                    return Err(GraphError::NodeNotFound(a.neighbor));
                }
                let other = shift(a.neighbor);
                let (src, dst) = match a.direction {
                    Direction::Out => (at, other),
                    Direction::In => (other, at),
                };
                if edges.iter().any(|e| e.src == src && e.dst == dst) {
                    return Err(GraphError::DuplicateEdge(src, dst));
                }
                edges.push(Edge::new(src, dst, a.label.clone()));
            }
            SceneGraph::new(nodes, edges)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fig1() -> SceneGraph {
        SceneGraph::from_parts(
            &["boy", "shirt", "young", "black"],
            &[(0, 1, "in"), (0, 2, "attribute"), (1, 3, "attribute")],
        )
        .unwrap()
    }

    #[test]
    fn topo_order_of_fig1() {
        let g = fig1();
        let order = g.topological_order().unwrap();
        let labels: Vec<&str> = order.iter().map(|&i| g.label(i)).collect();
        assert_eq!(labels, ["boy", "shirt", "young", "black"]);
    }

    #[test]
    fn topo_single_node_and_cycle() {
        let g = SceneGraph::from_parts(&["a"], &[]).unwrap();
        assert_eq!(g.topological_order().unwrap(), vec![0]);
        let err = SceneGraph::from_parts(&["a", "b"], &[(0, 1, "r"), (1, 0, "r")]).unwrap_err();
        assert_eq!(err, GraphError::Cycle);
    }

    #[test]
    fn rejects_malformed_edges() {
        assert_eq!(SceneGraph::from_parts(&["a"], &[(0, 0, "r")]).unwrap_err(), GraphError::SelfLoop(0));
        assert_eq!(SceneGraph::from_parts(&["a"], &[(0, 3, "r")]).unwrap_err(), GraphError::BadEndpoint(3));
        assert_eq!(
            SceneGraph::from_parts(&["a", "b"], &[(0, 1, "r"), (0, 1, "s")]).unwrap_err(),
            GraphError::DuplicateEdge(0, 1)
        );
    }

    #[test]
    fn connectivity() {
        assert!(fig1().weakly_connected().unwrap());
        assert!(!SceneGraph::from_parts(&["a", "b"], &[]).unwrap().weakly_connected().unwrap());
        assert!(SceneGraph::from_parts(&["a"], &[]).unwrap().weakly_connected().unwrap());
        let empty = SceneGraph::new(vec![], vec![]).unwrap();
        assert_eq!(empty.weakly_connected(), Err(GraphError::EmptyGraph));
    }

    #[test]
    fn isomorphism_examples() {
        let g = fig1();
        assert!(isomorphic(&g, &g.permuted(&[3, 1, 0, 2])).unwrap());
        let missing = SceneGraph::from_parts(
            &["boy", "shirt", "young", "black"],
            &[(0, 1, "in"), (0, 2, "attribute")],
        )
        .unwrap();
        assert!(!isomorphic(&g, &missing).unwrap());

        let g1 = SceneGraph::from_parts(&["a", "a", "b"], &[(0, 2, "r")]).unwrap();
        let g2 = SceneGraph::from_parts(&["a", "b", "a"], &[(2, 1, "r")]).unwrap();
        assert!(isomorphic(&g1, &g2).unwrap());
    }

    #[test]
    fn isomorphism_respects_direction_and_cap() {
        let g1 = SceneGraph::from_parts(&["a", "b"], &[(0, 1, "r")]).unwrap();
        let g2 = SceneGraph::from_parts(&["a", "b"], &[(1, 0, "r")]).unwrap();
        assert!(!isomorphic(&g1, &g2).unwrap());
        let big = SceneGraph::from_parts(&["x"; 13], &[]).unwrap();
        assert_eq!(isomorphic(&big, &big), Err(GraphError::SizeLimit { size: 13, cap: 12 }));
        assert!(isomorphic_with_cap(&big, &big, 13).unwrap());
    }

    #[test]
    fn delete_shirt() {
        let g = fig1();
        let out = apply_edit(&g, &EditOp::delete("shirt"), 1).unwrap();
        assert_eq!(out.nodes(), ["boy", "young", "black"]);
        assert_eq!(out.edges(), [Edge::new(0, 1, "attribute")]);
        assert!(!out.weakly_connected().unwrap());
    }

    #[test]
    fn substitute_relabels() {
        let g = fig1();
        let out = apply_edit(&g, &EditOp::substitute("boy", "man"), 0).unwrap();
        assert_eq!(out.nodes()[0], "man");
        assert_eq!(out.edges(), g.edges());
        assert_eq!(apply_edit(&g, &EditOp::substitute("girl", "man"), 0), Err(GraphError::NodeNotFound(0)));
    }

    #[test]
    fn insert_inverts_delete() {
        let g = fig1();
        for node in 0..g.len() {
            let del = apply_edit(&g, &EditOp::delete(g.label(node)), node).unwrap();
            let ins = EditOp::inverse_of_delete(&g, node).unwrap();
            let back = apply_edit(&del, &ins, node).unwrap();
            assert!(isomorphic(&back, &g).unwrap());
        }
    }

    #[test]
    fn insert_collision_is_rejected() {
        let g = SceneGraph::from_parts(&["a"], &[]).unwrap();
        let attach = AttachEdge { neighbor: 0, neighbor_label: "a".into(), label: "r".into(), direction: Direction::Out };
        let op = EditOp::insert("b", vec![attach.clone(), attach]);
        assert_eq!(apply_edit(&g, &op, 1), Err(GraphError::DuplicateEdge(1, 0)));
    }

    #[test]
    fn json_form() {
        let g = fig1();
        let text = serde_json::to_string(&g).unwrap();
        assert_eq!(
            text,
            r#"{"nodes":["boy","shirt","young","black"],"edges":[[0,1,"in"],[0,2,"attribute"],[1,3,"attribute"]]}"#
        );
        let back: SceneGraph = serde_json::from_str(&text).unwrap();
        assert_eq!(back, g);
        assert!(serde_json::from_str::<SceneGraph>(r#"{"nodes":["a"],"edges":[[0,0,"r"]]}"#).is_err());
    }
}
