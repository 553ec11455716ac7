//! Batched forward pass against the state at batch start.
//!
//! Queued memory updates are applied first, on the tape, in waves: wave `w`
//! holds the `w`-th queued update of every node, so updates of one node stay
//! in order while different nodes share matrix products.

use std::collections::HashMap;
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use super::blocks::{sigmoid, Dropout, NeighborRows};
use super::Mpfa;
use crate::error::{Error, Result};
use crate::events::{Event, NodeId};
use crate::state::TemporalState;
use crate::tensor::{BoundParams, Segments, Tape, Tensor, Var};

/// Distinct `(node, time)` pairs whose embeddings a batch needs.
#[derive(Clone, Debug, Default)]
pub struct QuerySet {
    queries: Vec<(NodeId, f64)>,
    index: HashMap<(NodeId, u64), usize>,
}

impl QuerySet {
    pub fn new() -> Self {
        QuerySet::default()
    }

    /// Row of `(node, t)`, adding it if new.
    pub fn add(&mut self, node: NodeId, t: f64) -> usize {
        let next = self.queries.len();
        let row = *self.index.entry((node, t.to_bits())).or_insert(next);
        if row == next {
            self.queries.push((node, t));
        }
        row
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn get(&self, row: usize) -> (NodeId, f64) {
        self.queries[row]
    }
}

/// Memory value produced by a queued update, to be written back to the state.
#[derive(Clone, Debug, PartialEq)]
pub struct MemoryWrite {
    pub node: NodeId,
    pub h: Vec<f64>,
    pub t: f64,
}

/// Neighbor of one query as used by the forward pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NeighborRef {
    pub partner: NodeId,
    pub t_event: f64,
}

pub struct BatchOutput {
    /// Embeddings `[S x embed]`, one row per query.
    pub z: Option<Var>,
    /// Link logits `[P x 1]`, one row per requested pair.
    pub logits: Option<Var>,
    pub neighbors: Vec<Vec<NeighborRef>>,
    /// Evolving attention `[N x heads]` over all neighbor rows, in query order.
    pub evolving_attention: Option<Var>,
    /// Feedback coefficients `[N x 1]`.
    pub raw_attention: Option<Var>,
    pub writes: Vec<MemoryWrite>,
    consumed_pending: usize,
}

impl BatchOutput {
    pub fn embedding<'t>(&self, tape: &'t Tape, row: usize) -> &'t [f64] {
        tape.value(self.z.expect("batch has queries")).row(row)
    }

    /// Link probabilities of the requested pairs.
    pub fn probabilities(&self, tape: &Tape) -> Vec<f64> {
        match self.logits {
            Some(l) => tape.value(l).data().iter().map(|&x| sigmoid(x)).collect(),
            None => Vec::new(),
        }
    }
}

/// Which perspective an attention row belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Perspective {
    Evolving,
    Raw,
}

impl Perspective {
    pub fn name(self) -> &'static str {
        match self {
            Perspective::Evolving => "evolving",
            Perspective::Raw => "raw",
        }
    }
}

/// One attention weight of one neighbor. Evolving weights are averaged over heads.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionRow {
    pub event_index: usize,
    pub node: NodeId,
    pub perspective: Perspective,
    /// 0 for the most recent neighbor.
    pub neighbor_rank: usize,
    pub dt: f64,
    pub weight: f64,
}

/// Result of scoring a single event.
#[derive(Clone, Debug, PartialEq)]
pub struct EventOutput {
    pub probability: f64,
    pub z_src: Vec<f64>,
    pub z_dst: Vec<f64>,
    /// Per-head evolving weights of the source, oldest neighbor first.
    pub src_evolving: Vec<Vec<f64>>,
    pub src_raw: Vec<f64>,
    pub dst_evolving: Vec<Vec<f64>>,
    pub dst_raw: Vec<f64>,
}

struct MemoryTable {
    var: Var,
    rows: HashMap<NodeId, usize>,
}

impl Mpfa {
    /// Applies the queued updates on the tape and returns a table holding the
    /// memory of every node in `nodes` (and every updated node).
    fn memory_table(
        &self,
        tape: &mut Tape,
        p: &BoundParams,
        state: &TemporalState,
        nodes: impl IntoIterator<Item = NodeId>,
        writes: &mut Vec<MemoryWrite>,
    ) -> Result<MemoryTable> {
        let m = self.dims.memory;
        let pending = state.pending();
        let mut rows: HashMap<NodeId, usize> = HashMap::new();
        let mut order: Vec<NodeId> = Vec::new();
        let mut waves: Vec<Vec<usize>> = Vec::new();
        let mut seen: Vec<usize> = Vec::new();
        for (k, u) in pending.iter().enumerate() {
            let r = *rows.entry(u.node).or_insert_with(|| {
                order.push(u.node);
                seen.push(0);
                order.len() - 1
            });
            let w = seen[r];
            seen[r] += 1;
            if waves.len() <= w {
                waves.push(Vec::new());
            }
            waves[w].push(k);
        }
        let n_pending = order.len();
        for n in nodes {
            rows.entry(n).or_insert_with(|| {
                order.push(n);
                order.len() - 1
            });
        }
        let mut data = Vec::with_capacity(order.len() * m);
        for &n in &order {
            data.extend_from_slice(&state.node(n).h);
        }
        let base = tape.constant(Tensor::matrix(order.len(), m, data)?);
        if waves.is_empty() {
            return Ok(MemoryTable { var: base, rows });
        }

        let mut upd = tape.gather_rows(base, (0..n_pending).collect())?;
        let width = self.dims.interaction_width();
        for wave in &waves {
            let idx: Vec<usize> = wave.iter().map(|&k| rows[&pending[k].node]).collect();
            let mut msg = Vec::with_capacity(wave.len() * width);
            for &k in wave {
                state.raw_record(&pending[k]).write_message(&self.encoder, &mut msg);
            }
            let msg = tape.constant(Tensor::matrix(wave.len(), width, msg)?);
            let x = tape.linear(msg, p.var(self.w.evol_w), p.var(self.w.evol_b))?;
            let h = tape.gather_rows(upd, idx.clone())?;
            let h_new = self.w.gru.step(tape, p, x, h)?;
            for (r, &k) in wave.iter().enumerate() {
                writes.push(MemoryWrite {
                    node: pending[k].node,
                    h: tape.value(h_new).row(r).to_vec(),
                    t: pending[k].t,
                });
            }
            upd = tape.scatter_rows(upd, h_new, idx)?;
        }
        let var = tape.scatter_rows(base, upd, (0..n_pending).collect())?;
        Ok(MemoryTable { var, rows })
    }

    /// Embeds every query against the state at batch start and scores the
    /// query pairs `(src_row, dst_row)`. `k` is the neighborhood size.
    #[allow(clippy::too_many_arguments)]
    pub fn forward_batch(
        &self,
        tape: &mut Tape,
        p: &BoundParams,
        state: &TemporalState,
        queries: &QuerySet,
        pairs: &[(usize, usize)],
        k: usize,
        mut dropout: Option<Dropout>,
    ) -> Result<BatchOutput> {
        let d = &self.dims;
        let s = queries.len();
        let neighbors: Vec<_> = queries.queries.iter().map(|&(n, t)| state.recent_neighbors(n, t, k)).collect();
        let mut writes = Vec::new();
        let nodes = queries
            .queries
            .iter()
            .map(|q| q.0)
            .chain(neighbors.iter().flat_map(|nb| nb.iter().map(|r| r.partner())));
        let table = self.memory_table(tape, p, state, nodes, &mut writes)?;
        let consumed_pending = state.pending().len();
        let refs = neighbors
            .iter()
            .map(|nb| nb.iter().map(|r| NeighborRef { partner: r.partner(), t_event: r.t_event() }).collect())
            .collect();
        if s == 0 {
            return Ok(BatchOutput {
                z: None,
                logits: None,
                neighbors: refs,
                evolving_attention: None,
                raw_attention: None,
                writes,
                consumed_pending,
            });
        }

        let h_q = tape.gather_rows(table.var, queries.queries.iter().map(|q| table.rows[&q.0]).collect())?;
        let mut self_phi = Vec::with_capacity(s * d.time);
        for &(n, t) in &queries.queries {
            let last = state.node(n).t_last;
            if t < last {
                return Err(Error::TimeOrder { t, last });
            }
            self.encoder.encode_into(t - last, &mut self_phi);
        }
        let self_phi = tape.constant(Tensor::matrix(s, d.time, self_phi)?);

        let seg = Rc::new(Segments::from_lengths(neighbors.iter().map(|nb| nb.len())));
        let total = seg.total();
        let zeros = |tape: &mut Tape| -> Result<Var> { Ok(tape.constant(Tensor::matrix(s, d.memory, vec![0.0; s * d.memory])?)) };
        let (mut p_e, mut p_r, mut evo_attn, mut raw_attn) = (None, None, None, None);
        if total > 0 && (self.ablation.evolving || self.ablation.raw) {
            let mut partner_rows = Vec::with_capacity(total);
            let mut edge = Vec::with_capacity(total * d.edge);
            let mut phi = Vec::with_capacity(total * d.time);
            let mut raw = Vec::with_capacity(total * d.interaction_width());
            for (q, nb) in neighbors.iter().enumerate() {
                let t = queries.queries[q].1;
                for r in nb.iter() {
                    partner_rows.push(table.rows[&r.partner()]);
                    edge.extend_from_slice(r.edge_feat());
                    self.encoder.encode_into(t - r.t_event(), &mut phi);
                    r.write_input(&self.encoder, &mut raw);
                }
            }
            let rows = NeighborRows {
                owners: seg.owners(),
                seg: seg.clone(),
                h: tape.gather_rows(table.var, partner_rows)?,
                edge: tape.constant(Tensor::matrix(total, d.edge, edge)?),
                phi: tape.constant(Tensor::matrix(total, d.time, phi)?),
                raw_input: tape.constant(Tensor::matrix(total, d.interaction_width(), raw)?),
            };
            if self.ablation.evolving {
                let (out, attn) = self.evolving_block(tape, p, h_q, &rows)?;
                p_e = Some(out);
                evo_attn = Some(attn);
            }
            if self.ablation.raw {
                let (out, a) = self.raw_block(tape, p, h_q, &rows)?;
                p_r = Some(out);
                raw_attn = Some(a);
            }
        }
        let p_e = match p_e {
            Some(v) => v,
            None => zeros(tape)?,
        };
        let p_r = match p_r {
            Some(v) => v,
            None => zeros(tape)?,
        };
        let z = self.couple_block(tape, p, h_q, self_phi, p_e, p_r, dropout.as_mut())?;

        let logits = if pairs.is_empty() {
            None
        } else {
            for &(a, b) in pairs {
                if a >= s || b >= s {
                    return Err(Error::dim(format!("pair ({a}, {b}) outside {s} queries")));
                }
            }
            let zi = tape.gather_rows(z, pairs.iter().map(|pr| pr.0).collect())?;
            let zj = tape.gather_rows(z, pairs.iter().map(|pr| pr.1).collect())?;
            Some(self.decode_block(tape, p, zi, zj, dropout.as_mut())?)
        };
        Ok(BatchOutput {
            z: Some(z),
            logits,
            neighbors: refs,
            evolving_attention: evo_attn,
            raw_attention: raw_attn,
            writes,
            consumed_pending,
        })
    }

    /// Writes back the batch's memory updates, then records the observed
    /// `events` in order, each with the embeddings of its query rows.
    pub fn commit_batch(
        &self,
        state: &mut TemporalState,
        tape: &Tape,
        out: &BatchOutput,
        events: &[(&Event, usize, usize)],
    ) -> Result<()> {
        if state.pending().len() != out.consumed_pending {
            return Err(Error::State(format!(
                "state has {} queued updates but the batch consumed {}",
                state.pending().len(),
                out.consumed_pending
            )));
        }
        state.take_pending();
        for w in &out.writes {
            state.apply_memory(w.node, w.h.clone(), w.t)?;
        }
        for &(e, qi, qj) in events {
            state.commit_event(e, out.embedding(tape, qi), out.embedding(tape, qj), self.ablation.dynamic_update)?;
        }
        Ok(())
    }

    /// Applies all queued memory updates without recording gradients.
    pub fn flush_pending(&self, state: &mut TemporalState) -> Result<()> {
        if state.pending().is_empty() {
            return Ok(());
        }
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape);
        let out = self.forward_batch(&mut tape, &p, state, &QuerySet::new(), &[], 0, None)?;
        self.commit_batch(state, &tape, &out, &[])
    }

    /// Scores the pair `(src, dst)` at time `t` against the current state and
    /// returns both embeddings with their attention weights. The state is not
    /// modified.
    pub fn forward_event(&self, state: &TemporalState, src: NodeId, dst: NodeId, t: f64, k: usize) -> Result<EventOutput> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape);
        let mut q = QuerySet::new();
        let (qs, qd) = (q.add(src, t), q.add(dst, t));
        let out = self.forward_batch(&mut tape, &p, state, &q, &[(qs, qd)], k, None)?;
        let seg = Segments::from_lengths(out.neighbors.iter().map(|n| n.len()));
        let evo = |row: usize| -> Vec<Vec<f64>> {
            match out.evolving_attention {
                Some(a) => seg.range(row).map(|n| tape.value(a).row(n).to_vec()).collect(),
                None => Vec::new(),
            }
        };
        let raw = |row: usize| -> Vec<f64> {
            match out.raw_attention {
                Some(a) => seg.range(row).map(|n| tape.value(a).data()[n]).collect(),
                None => Vec::new(),
            }
        };
        Ok(EventOutput {
            probability: out.probabilities(&tape)[0],
            z_src: out.embedding(&tape, qs).to_vec(),
            z_dst: out.embedding(&tape, qd).to_vec(),
            src_evolving: evo(qs),
            src_raw: raw(qs),
            dst_evolving: evo(qd),
            dst_raw: raw(qd),
        })
    }

    /// Attention rows of one batch for the source query of each event.
    pub fn attention_rows(
        &self,
        tape: &Tape,
        out: &BatchOutput,
        queries: &QuerySet,
        events: &[(usize, usize)],
    ) -> Vec<AttentionRow> {
        let seg = Segments::from_lengths(out.neighbors.iter().map(|n| n.len()));
        let mut rows = Vec::new();
        for &(event_index, q) in events {
            let (node, t) = queries.get(q);
            let range = seg.range(q);
            let len = range.len();
            for (pos, n) in range.enumerate() {
                let nb = out.neighbors[q][pos];
                let rank = len - 1 - pos;
                let dt = t - nb.t_event;
                if let Some(a) = out.evolving_attention {
                    let w = tape.value(a).row(n);
                    rows.push(AttentionRow {
                        event_index,
                        node,
                        perspective: Perspective::Evolving,
                        neighbor_rank: rank,
                        dt,
                        weight: w.iter().sum::<f64>() / w.len() as f64,
                    });
                }
                if let Some(a) = out.raw_attention {
                    rows.push(AttentionRow {
                        event_index,
                        node,
                        perspective: Perspective::Raw,
                        neighbor_rank: rank,
                        dt,
                        weight: tape.value(a).data()[n],
                    });
                }
            }
        }
        rows
    }
}
