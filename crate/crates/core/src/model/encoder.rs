use super::{EncodedInput, Fusion, LayerIds, MlpIds, Model, ModelError};
use crate::graph::SceneGraph;
use crate::tensor::{Real, Tape, Var};
use crate::vocab::CLS;

/// Square boolean matrix; `get(i, j)` means row `i` may attend to column `j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionMask {
    size: usize,
    allowed: Vec<bool>,
}

impl AttentionMask {
    fn new(size: usize) -> Self {
        AttentionMask { size, allowed: vec![false; size * size] }
    }

    fn allow(&mut self, i: usize, j: usize) {
        self.allowed[i * self.size + j] = true;
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.allowed[i * self.size + j]
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.allowed[i * self.size..(i + 1) * self.size]
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.allowed
    }
}

/// Row layout of the encoder input for each fusion mode:
///
/// * concat and cross: `[nodes; query]`
/// * gating: `[graph CLS; nodes; query CLS; query]`
///
/// Under concat and gating the graph and query blocks never see each other,
/// which is the same as two passes through a shared encoder.
pub fn attention_mask(g: &SceneGraph, query_len: usize, fusion: Fusion) -> AttentionMask {
    let edges: Vec<(usize, usize)> = g.edges().iter().map(|e| (e.src, e.dst)).collect();
    mask_for(g.len(), &edges, query_len, fusion)
}

fn mask_for(n: usize, edges: &[(usize, usize)], q: usize, fusion: Fusion) -> AttentionMask {
    let gating = fusion == Fusion::Gating;
    let node0 = usize::from(gating);
    let query0 = node0 + n + usize::from(gating);
    let size = query0 + q;
    let mut m = AttentionMask::new(size);
    for i in 0..n {
        m.allow(node0 + i, node0 + i);
    }
    for &(s, d) in edges {
        m.allow(node0 + s, node0 + d);
        m.allow(node0 + d, node0 + s);
    }
    let query_block = (query0 - usize::from(gating))..size;
    for i in query_block.clone() {
        for j in query_block.clone() {
            m.allow(i, j);
        }
    }
    match fusion {
        Fusion::Concat => {}
        Fusion::Cross => {
            for i in 0..n {
                for j in query0..size {
                    m.allow(i, j);
                    m.allow(j, i);
                }
            }
        }
        Fusion::Gating => {
            m.allow(0, 0);
            for i in 0..n {
                m.allow(0, node0 + i);
                m.allow(node0 + i, 0);
            }
        }
    }
    m
}

/// Standard sinusoidal positions.
fn positions<T: Real>(len: usize, d: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(len * d);
    for pos in 0..len {
        for i in 0..d {
            let rate = 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let angle = pos as f64 / rate;
            out.push(T::from_f64_lossy(if i % 2 == 0 { angle.sin() } else { angle.cos() }));
        }
    }
    out
}

/// Encoder activations for one input.
#[derive(Debug, Clone)]
pub struct EncoderOutput {
    /// Fused memory, one row per node then one per query token (then the two
    /// CLS rows under gating).
    pub memory: Var,
    pub cls_graph: Option<Var>,
    pub cls_query: Option<Var>,
    /// Transformer output in input layout, before any gating.
    pub hidden: Var,
    /// Gate values for node rows and query rows under gating.
    pub gates: Option<(Var, Var)>,
    /// Attention weights, `layers * heads` matrices in layer-major order.
    pub attention: Vec<Var>,
    pub mask: AttentionMask,
}

impl<T: Real> Model<T> {
    /// Label embedding plus the embedding of every incident edge label, in
    /// both directions. No positional signal.
    pub fn edge_aware_embeddings(&self, tape: &mut Tape<'_, T>, input: &EncodedInput) -> Result<Var, ModelError> {
        let tok = tape.param(self.ids.tok);
        let rows = tape.gather(tok, &input.labels)?;
        if input.edges.is_empty() {
            return Ok(rows);
        }
        let table = tape.param(self.ids.edge);
        let labels: Vec<usize> = input.edges.iter().map(|e| e.2).collect();
        let edge_rows = tape.gather(table, &labels)?;
        let (n, ne) = (input.labels.len(), input.edges.len());
        let mut inc = vec![T::zero(); n * ne];
        for (k, &(s, d, _)) in input.edges.iter().enumerate() {
            inc[s * ne + k] = inc[s * ne + k] + T::one();
            inc[d * ne + k] = inc[d * ne + k] + T::one();
        }
        let inc = tape.constant(n, ne, inc)?;
        let sums = tape.matmul(inc, edge_rows)?;
        Ok(tape.add(rows, sums)?)
    }

    fn query_embeddings(&self, tape: &mut Tape<'_, T>, query: &[usize]) -> Result<Var, ModelError> {
        let tok = tape.param(self.ids.tok);
        let rows = tape.gather(tok, query)?;
        let d = self.config.d_model;
        let pe = tape.constant(query.len(), d, positions(query.len(), d))?;
        Ok(tape.add(rows, pe)?)
    }

    fn layer(
        &self,
        tape: &mut Tape<'_, T>,
        l: &LayerIds,
        x: Var,
        mask: &AttentionMask,
        attention: &mut Vec<Var>,
    ) -> Result<Var, ModelError> {
        let heads = self.config.heads;
        let dk = self.config.d_model / heads;
        let proj = |tape: &mut Tape<'_, T>, w, b: Option<_>| -> Result<Var, ModelError> {
            let w = tape.param(w);
            let y = tape.matmul(x, w)?;
            match b {
                Some(b) => {
                    let b = tape.param(b);
                    Ok(tape.add_row(y, b)?)
                }
                None => Ok(y),
            }
        };
        let q = proj(tape, l.wq, Some(l.bq))?;
        let k = proj(tape, l.wk, None)?;
        let v = proj(tape, l.wv, Some(l.bv))?;
        let scale = T::from_f64_lossy(1.0 / (dk as f64).sqrt());
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = tape.slice_cols(q, h * dk, dk)?;
            let kh = tape.slice_cols(k, h * dk, dk)?;
            let vh = tape.slice_cols(v, h * dk, dk)?;
            let s = tape.matmul_t(qh, kh)?;
            let s = tape.scale(s, scale);
            let a = tape.masked_softmax(s, Some(mask.as_slice()))?;
            attention.push(a);
            outs.push(tape.matmul(a, vh)?);
        }
        let heads_out = if outs.len() == 1 { outs[0] } else { tape.concat_cols(&outs)? };
        let (wo, bo) = (tape.param(l.wo), tape.param(l.bo));
        let o = tape.matmul(heads_out, wo)?;
        let o = tape.add_row(o, bo)?;
        let res = tape.add(x, o)?;
        let (g1, b1) = (tape.param(l.ln1_g), tape.param(l.ln1_b));
        let x1 = tape.layer_norm(res, g1, b1, 1e-5)?;
        let (w1, fb1, w2, fb2) = (tape.param(l.w1), tape.param(l.b1), tape.param(l.w2), tape.param(l.b2));
        let f = tape.matmul(x1, w1)?;
        let f = tape.add_row(f, fb1)?;
        let f = tape.relu(f);
        let f = tape.matmul(f, w2)?;
        let f = tape.add_row(f, fb2)?;
        let res = tape.add(x1, f)?;
        let (g2, b2) = (tape.param(l.ln2_g), tape.param(l.ln2_b));
        Ok(tape.layer_norm(res, g2, b2, 1e-5)?)
    }

    pub fn encode(&self, tape: &mut Tape<'_, T>, input: &EncodedInput) -> Result<EncoderOutput, ModelError> {
        if input.query.is_empty() {
            return Err(ModelError::EmptyQuery);
        }
        let fusion = self.config.fusion;
        let (n, q) = (input.labels.len(), input.query.len());
        let edges: Vec<(usize, usize)> = input.edges.iter().map(|e| (e.0, e.1)).collect();
        let mask = mask_for(n, &edges, q, fusion);

        let nodes = self.edge_aware_embeddings(tape, input)?;
        let query = self.query_embeddings(tape, &input.query)?;
        let x = if fusion == Fusion::Gating {
            let tok = tape.param(self.ids.tok);
            let cls = tape.gather(tok, &[CLS])?;
            tape.concat_rows(&[cls, nodes, cls, query])?
        } else {
            tape.concat_rows(&[nodes, query])?
        };

        let mut attention = Vec::new();
        let mut h = x;
        for l in &self.ids.layers {
            h = self.layer(tape, l, h, &mask, &mut attention)?;
        }

        if fusion != Fusion::Gating {
            return Ok(EncoderOutput {
                memory: h,
                cls_graph: None,
                cls_query: None,
                hidden: h,
                gates: None,
                attention,
                mask,
            });
        }
        let cls_g = tape.slice_rows(h, 0, 1)?;
        let mx = tape.slice_rows(h, 1, n)?;
        let cls_y = tape.slice_rows(h, n + 1, 1)?;
        let my = tape.slice_rows(h, n + 2, q)?;
        let (memory, gx, gy) = self.fuse_gating(tape, mx, my, cls_g, cls_y)?;
        Ok(EncoderOutput {
            memory,
            cls_graph: Some(cls_g),
            cls_query: Some(cls_y),
            hidden: h,
            gates: Some((gx, gy)),
            attention,
            mask,
        })
    }

    fn gate(&self, tape: &mut Tape<'_, T>, ids: &MlpIds, rows: Var, other_cls: Var) -> Result<Var, ModelError> {
        let n = tape.shape(rows).0;
        let c = tape.broadcast_rows(other_cls, n)?;
        let inp = tape.concat_cols(&[rows, c])?;
        let (w1, b1, w2, b2) = (tape.param(ids.w1), tape.param(ids.b1), tape.param(ids.w2), tape.param(ids.b2));
        let h = tape.matmul(inp, w1)?;
        let h = tape.add_row(h, b1)?;
        let h = tape.tanh(h);
        let h = tape.matmul(h, w2)?;
        let h = tape.add_row(h, b2)?;
        Ok(tape.sigmoid(h))
    }

    /// Gates each graph row by the query summary and each query row by the
    /// graph summary, then stacks `[gated nodes; gated query; cls_graph; cls_query]`.
    /// Returns the memory and both gate matrices.
    pub fn fuse_gating(
        &self,
        tape: &mut Tape<'_, T>,
        mx: Var,
        my: Var,
        cls_graph: Var,
        cls_query: Var,
    ) -> Result<(Var, Var, Var), ModelError> {
        let (Some(ix), Some(iy)) = (&self.ids.gate_x, &self.ids.gate_y) else {
            return Err(ModelError::BadConfig("gating parameters are missing".into()));
        };
        let gx = self.gate(tape, ix, mx, cls_query)?;
        let gy = self.gate(tape, iy, my, cls_graph)?;
        let mx2 = tape.mul(gx, mx)?;
        let my2 = tape.mul(gy, my)?;
        let memory = tape.concat_rows(&[mx2, my2, cls_graph, cls_query])?;
        Ok((memory, gx, gy))
    }
}
