use super::encoder::EncoderOutput;
use super::{DecoderIds, EdgeDecoderKind, EncodedInput, GruIds, Model, ModelError};
use crate::graph::{Edge, SceneGraph};
use crate::tensor::{ParamId, Real, Tape, Var};
use crate::vocab::{BOS, EOS, NULL};

/// Node decoder result.
#[derive(Debug, Clone)]
pub struct NodeOutput {
    /// Node label ids, without the end marker.
    pub labels: Vec<usize>,
    /// One hidden row per node (the end-marker step is excluded).
    pub hiddens: Option<Var>,
    /// One row of logits per step, end-marker step included when it was reached.
    pub logits: Var,
}

/// Edge decoder result over the lower-triangle cells `(1,0), (2,0), (2,1), ...`.
#[derive(Debug, Clone)]
pub struct EdgeOutput {
    pub cells: Vec<(usize, usize)>,
    /// Edge vocabulary id per cell; `NULL` means no edge.
    pub labels: Vec<usize>,
    /// One row of logits per cell, `None` when there are no cells.
    pub logits: Option<Var>,
}

/// Row-major lower-triangle cells for `n` nodes.
pub fn lower_triangle(n: usize) -> Vec<(usize, usize)> {
    (1..n).flat_map(|i| (0..i).map(move |j| (i, j))).collect()
}

fn argmax<T: Real>(row: &[T], allowed: impl Fn(usize) -> bool) -> usize {
    let mut best: Option<(usize, T)> = None;
    for (k, &v) in row.iter().enumerate() {
        if allowed(k) && best.is_none_or(|(_, b)| v > b) {
            best = Some((k, v));
        }
    }
    best.map(|(k, _)| k).unwrap_or(0)
}

impl<T: Real> Model<T> {
    fn gru_step(&self, tape: &mut Tape<'_, T>, g: &GruIds, xw: Var, h: Var) -> Result<Var, ModelError> {
        let hs = self.config.gru_hidden;
        let (wh, bh) = (tape.param(g.wh), tape.param(g.bh));
        let hw = tape.matmul(h, wh)?;
        let hw = tape.add_row(hw, bh)?;
        let gate = |tape: &mut Tape<'_, T>, k: usize| -> Result<Var, ModelError> {
            let a = tape.slice_cols(xw, k * hs, hs)?;
            let b = tape.slice_cols(hw, k * hs, hs)?;
            let s = tape.add(a, b)?;
            Ok(tape.sigmoid(s))
        };
        let r = gate(tape, 0)?;
        let z = gate(tape, 1)?;
        let xn = tape.slice_cols(xw, 2 * hs, hs)?;
        let hn = tape.slice_cols(hw, 2 * hs, hs)?;
        let rh = tape.mul(r, hn)?;
        let n = tape.add(xn, rh)?;
        let n = tape.tanh(n);
        // (1 - z) * n + z * h
        let diff = tape.sub(h, n)?;
        let zd = tape.mul(z, diff)?;
        Ok(tape.add(n, zd)?)
    }

    fn input_proj(&self, tape: &mut Tape<'_, T>, g: &GruIds, x: Var) -> Result<Var, ModelError> {
        let (wx, bx) = (tape.param(g.wx), tape.param(g.bx));
        let y = tape.matmul(x, wx)?;
        Ok(tape.add_row(y, bx)?)
    }

    /// Luong attention over `memory` for every row of `states`, then
    /// `(W[h, c] + b) * table^T`.
    fn readout(
        &self,
        tape: &mut Tape<'_, T>,
        dec: &DecoderIds,
        table: ParamId,
        states: Var,
        memory: Var,
    ) -> Result<Var, ModelError> {
        let wa = tape.param(dec.att);
        let q = tape.matmul(states, wa)?;
        let scores = tape.matmul_t(q, memory)?;
        let alpha = tape.softmax(scores)?;
        let ctx = tape.matmul(alpha, memory)?;
        let hc = tape.concat_cols(&[states, ctx])?;
        let (w, b) = (tape.param(dec.out_w), tape.param(dec.out_b));
        let o = tape.matmul(hc, w)?;
        let o = tape.add_row(o, b)?;
        let table = tape.param(table);
        Ok(tape.matmul_t(o, table)?)
    }

    /// Teacher-forced when `gold` is given, greedy otherwise.
    pub fn decode_nodes(
        &self,
        tape: &mut Tape<'_, T>,
        enc: &EncoderOutput,
        gold: Option<&[usize]>,
    ) -> Result<NodeOutput, ModelError> {
        let ids = &self.ids;
        let summary = tape.mean_rows(enc.memory);
        let (w0, b0) = (tape.param(ids.h0_w), tape.param(ids.h0_b));
        let h0 = tape.matmul(summary, w0)?;
        let h0 = tape.add_row(h0, b0)?;
        let mut h = tape.tanh(h0);
        let tok = tape.param(ids.tok);

        if let Some(gold) = gold {
            let mut inputs = vec![BOS];
            inputs.extend_from_slice(gold);
            let emb = tape.gather(tok, &inputs)?;
            let xw = self.input_proj(tape, &ids.node.gru, emb)?;
            let mut states = Vec::with_capacity(inputs.len());
            for t in 0..inputs.len() {
                let x = tape.slice_rows(xw, t, 1)?;
                h = self.gru_step(tape, &ids.node.gru, x, h)?;
                states.push(h);
            }
            let all = tape.concat_rows(&states)?;
            let logits = self.readout(tape, &ids.node, ids.tok, all, enc.memory)?;
            let hiddens = if gold.is_empty() { None } else { Some(tape.slice_rows(all, 0, gold.len())?) };
            return Ok(NodeOutput { labels: gold.to_vec(), hiddens, logits });
        }

        let specials = self.tokens.num_specials();
        let mut prev = BOS;
        let mut labels = Vec::new();
        let mut states = Vec::new();
        let mut rows = Vec::new();
        for _ in 0..self.config.max_decode_nodes {
            let emb = tape.gather(tok, &[prev])?;
            let xw = self.input_proj(tape, &ids.node.gru, emb)?;
            h = self.gru_step(tape, &ids.node.gru, xw, h)?;
            let logits = self.readout(tape, &ids.node, ids.tok, h, enc.memory)?;
            rows.push(logits);
            let next = argmax(tape.value(logits), |k| k == EOS || k >= specials);
            if next == EOS {
                break;
            }
            labels.push(next);
            states.push(h);
            prev = next;
        }
        let hiddens = if states.is_empty() { None } else { Some(tape.concat_rows(&states)?) };
        let logits = tape.concat_rows(&rows)?;
        Ok(NodeOutput { labels, hiddens, logits })
    }

    fn edge_inputs(&self, tape: &mut Tape<'_, T>, hiddens: Var, prevs: &[usize], cells: &[(usize, usize)]) -> Result<Var, ModelError> {
        let table = tape.param(self.ids.edge);
        let e = tape.gather(table, prevs)?;
        let is: Vec<usize> = cells.iter().map(|c| c.0).collect();
        let js: Vec<usize> = cells.iter().map(|c| c.1).collect();
        let hi = tape.gather(hiddens, &is)?;
        let hj = tape.gather(hiddens, &js)?;
        let x = tape.concat_cols(&[e, hi, hj])?;
        self.input_proj(tape, &self.ids.edge_dec.gru, x)
    }

    /// One recurrent pass over `cells` starting from hidden `h`.
    fn edge_sequence(
        &self,
        tape: &mut Tape<'_, T>,
        hiddens: Var,
        memory: Var,
        mut h: Var,
        cells: &[(usize, usize)],
        gold: Option<&[usize]>,
    ) -> Result<(Var, Vec<usize>), ModelError> {
        let dec = &self.ids.edge_dec;
        if let Some(gold) = gold {
            let mut prevs = vec![BOS];
            prevs.extend_from_slice(&gold[..gold.len() - 1]);
            let xw = self.edge_inputs(tape, hiddens, &prevs, cells)?;
            let mut states = Vec::with_capacity(cells.len());
            for t in 0..cells.len() {
                let x = tape.slice_rows(xw, t, 1)?;
                h = self.gru_step(tape, &dec.gru, x, h)?;
                states.push(h);
            }
            let all = tape.concat_rows(&states)?;
            let logits = self.readout(tape, dec, self.ids.edge, all, memory)?;
            return Ok((logits, gold.to_vec()));
        }
        let mut prev = BOS;
        let mut labels = Vec::with_capacity(cells.len());
        let mut rows = Vec::with_capacity(cells.len());
        for &cell in cells {
            let xw = self.edge_inputs(tape, hiddens, &[prev], &[cell])?;
            h = self.gru_step(tape, &dec.gru, xw, h)?;
            let logits = self.readout(tape, dec, self.ids.edge, h, memory)?;
            prev = argmax(tape.value(logits), |k| k >= NULL);
            labels.push(prev);
            rows.push(logits);
        }
        Ok((tape.concat_rows(&rows)?, labels))
    }

    /// Row `i` of the adjacency decoder on its own; its hidden state starts
    /// from a linear map of node `i`'s hidden and its first input is BOS.
    pub fn decode_edge_row(
        &self,
        tape: &mut Tape<'_, T>,
        hiddens: Var,
        memory: Var,
        i: usize,
        gold: Option<&[usize]>,
    ) -> Result<(Var, Vec<usize>), ModelError> {
        let Some((w, b)) = self.ids.row else {
            return Err(ModelError::BadConfig("row parameters exist only for the adjacency decoder".into()));
        };
        let hi = tape.slice_rows(hiddens, i, 1)?;
        let (w, b) = (tape.param(w), tape.param(b));
        let h = tape.matmul(hi, w)?;
        let h = tape.add_row(h, b)?;
        let cells: Vec<(usize, usize)> = (0..i).map(|j| (i, j)).collect();
        self.edge_sequence(tape, hiddens, memory, h, &cells, gold)
    }

    /// Labels every lower-triangle cell with the configured edge decoder.
    /// `gold`, when present, holds one label per cell in row-major order.
    pub fn decode_edges(
        &self,
        tape: &mut Tape<'_, T>,
        hiddens: Option<Var>,
        enc: &EncoderOutput,
        gold: Option<&[usize]>,
    ) -> Result<EdgeOutput, ModelError> {
        let n = hiddens.map_or(0, |h| tape.shape(h).0);
        let cells = lower_triangle(n);
        let Some(hiddens) = hiddens.filter(|_| !cells.is_empty()) else {
            return Ok(EdgeOutput { cells, labels: Vec::new(), logits: None });
        };
        if let Some(g) = gold {
            if g.len() != cells.len() {
                return Err(crate::tensor::TensorError::ShapeMismatch {
                    op: "decode_edges",
                    left: vec![cells.len()],
                    right: vec![g.len()],
                }
                .into());
            }
        }
        let (logits, labels) = match self.config.edge_decoder {
            EdgeDecoderKind::Flat => {
                let h = tape.slice_rows(hiddens, n - 1, 1)?;
                self.edge_sequence(tape, hiddens, enc.memory, h, &cells, gold)?
            }
            EdgeDecoderKind::Adjacency => {
                let mut rows = Vec::with_capacity(n - 1);
                let mut labels = Vec::with_capacity(cells.len());
                let mut start = 0;
                for i in 1..n {
                    let row_gold = gold.map(|g| &g[start..start + i]);
                    let (l, lab) = self.decode_edge_row(tape, hiddens, enc.memory, i, row_gold)?;
                    rows.push(l);
                    labels.extend(lab);
                    start += i;
                }
                (tape.concat_rows(&rows)?, labels)
            }
        };
        Ok(EdgeOutput { cells, labels, logits: Some(logits) })
    }

    /// Teacher-forced negative log-likelihoods `(nodes incl. end marker, edge cells)`
    /// for target node labels and row-major cell labels.
    pub fn nll(
        &self,
        tape: &mut Tape<'_, T>,
        input: &EncodedInput,
        nodes: &[usize],
        cells: &[usize],
    ) -> Result<(Var, Var), ModelError> {
        let enc = self.encode(tape, input)?;
        let out = self.decode_nodes(tape, &enc, Some(nodes))?;
        let mut targets = nodes.to_vec();
        targets.push(EOS);
        let node_loss = tape.cross_entropy(out.logits, &targets)?;
        let edges = self.decode_edges(tape, out.hiddens, &enc, Some(cells))?;
        let edge_loss = match edges.logits {
            Some(l) => tape.cross_entropy(l, cells)?,
            None => tape.constant(1, 1, vec![T::zero()])?,
        };
        Ok((node_loss, edge_loss))
    }

    /// Greedy prediction as vocabulary ids: node labels and row-major cell labels.
    pub fn predict_ids(&self, input: &EncodedInput) -> Result<(Vec<usize>, Vec<usize>), ModelError> {
        let mut tape = Tape::new(&self.params);
        let enc = self.encode(&mut tape, input)?;
        let nodes = self.decode_nodes(&mut tape, &enc, None)?;
        if nodes.labels.is_empty() {
            return Err(ModelError::DecodeOverflow);
        }
        let edges = self.decode_edges(&mut tape, nodes.hiddens, &enc, None)?;
        Ok((nodes.labels, edges.labels))
    }

    pub fn generate_encoded(&self, input: &EncodedInput) -> Result<SceneGraph, ModelError> {
        let (nodes, cells) = self.predict_ids(input)?;
        let labels = nodes.iter().map(|&id| self.tokens.token(id).to_string()).collect();
        let edges = lower_triangle(nodes.len())
            .into_iter()
            .zip(cells)
            .filter(|&(_, l)| l != NULL)
            .map(|((i, j), l)| Edge::new(j, i, self.edges.token(l)))
            .collect();
        Ok(SceneGraph::new(labels, edges)?)
    }

    /// Greedy nodes, then greedy edges; cell `(i, j)` becomes edge `j -> i`.
    pub fn generate(&self, g: &SceneGraph, query: &str) -> Result<SceneGraph, ModelError> {
        self.generate_encoded(&self.encode_input(g, query))
    }
}
