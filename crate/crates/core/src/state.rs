//! Per-node temporal state: evolving memory, last embeddings, and the frozen
//! raw record of every interaction, which doubles as the neighbor index.
//!
//! Memory updates are deferred: committing an event queues a pending update
//! that the next forward pass materializes (so the update cell and message map
//! receive gradients through that pass), after which the result is written
//! back detached. Values are identical to applying updates eagerly.

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{Event, NodeId};
use crate::model::TimeEncoder;

#[derive(Clone, Debug, PartialEq)]
pub struct NodeState {
    /// Evolving memory.
    pub h: Vec<f64>,
    /// Last embedding produced for this node.
    pub z_last: Arc<[f64]>,
    /// Time of the last interaction.
    pub t_last: f64,
    /// Time of the last memory update applied to `h`.
    pub h_time: f64,
    pub exists: bool,
    /// Number of memory updates applied.
    pub updates: u64,
}

impl NodeState {
    fn fresh(memory_dim: usize, embed_dim: usize) -> Self {
        NodeState {
            h: vec![0.0; memory_dim],
            z_last: vec![0.0; embed_dim].into(),
            t_last: 0.0,
            h_time: 0.0,
            exists: false,
            updates: 0,
        }
    }
}

/// Inputs of one interaction as seen by one endpoint (the owner) at the time
/// it happened. Never modified after creation.
#[derive(Clone, Debug, PartialEq)]
pub struct RawInteraction {
    partner: NodeId,
    t_event: f64,
    partner_z: Arc<[f64]>,
    edge_feat: Arc<[f64]>,
    owner_z: Arc<[f64]>,
    /// Event time minus the owner's previous interaction time.
    delta_t: f64,
}

impl RawInteraction {
    pub fn partner(&self) -> NodeId {
        self.partner
    }

    pub fn t_event(&self) -> f64 {
        self.t_event
    }

    pub fn edge_feat(&self) -> &[f64] {
        &self.edge_feat
    }

    pub fn delta_t(&self) -> f64 {
        self.delta_t
    }

    pub fn partner_z(&self) -> &[f64] {
        &self.partner_z
    }

    pub fn owner_z(&self) -> &[f64] {
        &self.owner_z
    }

    /// `[z_partner || e || z_owner || phi(dt)]`, the raw-perspective input.
    pub fn input_vec(&self, enc: &TimeEncoder) -> Vec<f64> {
        let mut v = Vec::with_capacity(2 * self.owner_z.len() + self.edge_feat.len() + enc.dim());
        self.write_input(enc, &mut v);
        v
    }

    pub(crate) fn write_input(&self, enc: &TimeEncoder, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.partner_z);
        out.extend_from_slice(&self.edge_feat);
        out.extend_from_slice(&self.owner_z);
        enc.encode_into(self.delta_t, out);
    }

    /// `[z_owner || e || z_partner || phi(dt)]`, the memory-update message input.
    pub fn message_input(&self, enc: &TimeEncoder) -> Vec<f64> {
        let mut v = Vec::with_capacity(2 * self.owner_z.len() + self.edge_feat.len() + enc.dim());
        self.write_message(enc, &mut v);
        v
    }

    pub(crate) fn write_message(&self, enc: &TimeEncoder, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.owner_z);
        out.extend_from_slice(&self.edge_feat);
        out.extend_from_slice(&self.partner_z);
        enc.encode_into(self.delta_t, out);
    }
}

/// A queued memory update: record `slot` of `node`'s history, at time `t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PendingUpdate {
    pub node: NodeId,
    pub slot: usize,
    pub t: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TemporalState {
    memory_dim: usize,
    embed_dim: usize,
    nodes: Vec<NodeState>,
    history: Vec<Vec<RawInteraction>>,
    pending: Vec<PendingUpdate>,
    cursor: usize,
}

/// Deep copy of a [`TemporalState`].
#[derive(Clone, Debug, PartialEq)]
pub struct StateSnapshot(TemporalState);

impl TemporalState {
    pub fn new(num_nodes: usize, memory_dim: usize, embed_dim: usize) -> Self {
        TemporalState {
            memory_dim,
            embed_dim,
            nodes: vec![NodeState::fresh(memory_dim, embed_dim); num_nodes],
            history: vec![Vec::new(); num_nodes],
            pending: Vec::new(),
            cursor: 0,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn memory_dim(&self) -> usize {
        self.memory_dim
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn node(&self, i: NodeId) -> &NodeState {
        &self.nodes[i]
    }

    pub fn history(&self, i: NodeId) -> &[RawInteraction] {
        &self.history[i]
    }

    pub fn pending(&self) -> &[PendingUpdate] {
        &self.pending
    }

    /// Index of the next stream event to be consumed.
    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn set_cursor(&mut self, cursor: usize) {
        self.cursor = cursor;
    }

    /// Up to `k` most recent interactions of `i` strictly before `t`, oldest first.
    pub fn recent_neighbors(&self, i: NodeId, t: f64, k: usize) -> &[RawInteraction] {
        let hist = &self.history[i];
        let end = hist.partition_point(|r| r.t_event < t);
        &hist[end.saturating_sub(k)..end]
    }

    /// Appends the frozen raw record of event `(i, j, t)` to both endpoints,
    /// using their pre-event embeddings and interaction times.
    pub fn record_raw(&mut self, i: NodeId, j: NodeId, t: f64, edge_feat: &[f64]) -> Result<(usize, usize)> {
        for n in [i, j] {
            if n >= self.nodes.len() {
                return Err(Error::State(format!("node {n} outside state of {} nodes", self.nodes.len())));
            }
            if t < self.nodes[n].t_last {
                return Err(Error::TimeOrder { t, last: self.nodes[n].t_last });
            }
        }
        let edge: Arc<[f64]> = edge_feat.into();
        let (zi, zj) = (self.nodes[i].z_last.clone(), self.nodes[j].z_last.clone());
        let rec_i = RawInteraction {
            partner: j,
            t_event: t,
            partner_z: zj.clone(),
            edge_feat: edge.clone(),
            owner_z: zi.clone(),
            delta_t: t - self.nodes[i].t_last,
        };
        let rec_j = RawInteraction {
            partner: i,
            t_event: t,
            partner_z: zi,
            edge_feat: edge,
            owner_z: zj,
            delta_t: t - self.nodes[j].t_last,
        };
        self.history[i].push(rec_i);
        let slot_i = self.history[i].len() - 1;
        self.history[j].push(rec_j);
        let slot_j = self.history[j].len() - 1;
        Ok((slot_i, slot_j))
    }

    /// Stores a detached copy of `z` as the node's last embedding.
    pub fn set_last_embedding(&mut self, i: NodeId, z: &[f64], t: f64) -> Result<()> {
        if z.len() != self.embed_dim {
            return Err(Error::dim(format!("embedding of width {} for state of width {}", z.len(), self.embed_dim)));
        }
        let n = &mut self.nodes[i];
        if t < n.t_last {
            return Err(Error::TimeOrder { t, last: n.t_last });
        }
        n.z_last = z.into();
        n.t_last = t;
        n.exists = true;
        Ok(())
    }

    /// Writes an already computed memory value for `i` at time `t`.
    pub fn apply_memory(&mut self, i: NodeId, h: Vec<f64>, t: f64) -> Result<()> {
        if h.len() != self.memory_dim {
            return Err(Error::dim(format!("memory of width {} for state of width {}", h.len(), self.memory_dim)));
        }
        let n = &mut self.nodes[i];
        if t < n.h_time {
            return Err(Error::TimeOrder { t, last: n.h_time });
        }
        n.h = h;
        n.h_time = t;
        n.t_last = n.t_last.max(t);
        n.exists = true;
        n.updates += 1;
        Ok(())
    }

    /// Commits one observed event after its embeddings were computed: records
    /// the raw interaction for both endpoints, queues their memory updates
    /// (when `queue_updates`) and stores the new last embeddings.
    pub fn commit_event(&mut self, e: &Event, z_src: &[f64], z_dst: &[f64], queue_updates: bool) -> Result<()> {
        let (slot_i, slot_j) = self.record_raw(e.src, e.dst, e.t, &e.edge_feat)?;
        if queue_updates {
            self.pending.push(PendingUpdate { node: e.src, slot: slot_i, t: e.t });
            self.pending.push(PendingUpdate { node: e.dst, slot: slot_j, t: e.t });
        }
        self.set_last_embedding(e.src, z_src, e.t)?;
        self.set_last_embedding(e.dst, z_dst, e.t)?;
        Ok(())
    }

    /// Removes and returns the queued updates.
    pub(crate) fn take_pending(&mut self) -> Vec<PendingUpdate> {
        std::mem::take(&mut self.pending)
    }

    pub fn raw_record(&self, p: &PendingUpdate) -> &RawInteraction {
        &self.history[p.node][p.slot]
    }

    pub fn snapshot(&self) -> StateSnapshot {
        StateSnapshot(self.clone())
    }

    pub fn restore(&mut self, snap: &StateSnapshot) -> Result<()> {
        let s = &snap.0;
        if s.nodes.len() != self.nodes.len() || s.memory_dim != self.memory_dim || s.embed_dim != self.embed_dim {
            return Err(Error::State(format!(
                "snapshot of {} nodes (memory {}, embedding {}) cannot restore a state of {} nodes (memory {}, embedding {})",
                s.nodes.len(),
                s.memory_dim,
                s.embed_dim,
                self.nodes.len(),
                self.memory_dim,
                self.embed_dim
            )));
        }
        *self = s.clone();
        Ok(())
    }

    pub fn into_snapshot(self) -> StateSnapshot {
        StateSnapshot(self)
    }
}

impl StateSnapshot {
    pub fn state(&self) -> &TemporalState {
        &self.0
    }

    pub fn into_state(self) -> TemporalState {
        self.0
    }
}

// Serialized form: embeddings shared between records are written once.

#[derive(Serialize, Deserialize)]
struct NodeRecord {
    h: Vec<f64>,
    z_last: usize,
    t_last: f64,
    h_time: f64,
    exists: bool,
    updates: u64,
}

#[derive(Serialize, Deserialize)]
struct RawRecord {
    partner: NodeId,
    t_event: f64,
    partner_z: usize,
    edge_feat: usize,
    owner_z: usize,
    delta_t: f64,
}

#[derive(Serialize, Deserialize)]
pub(crate) struct StateRecord {
    memory_dim: usize,
    embed_dim: usize,
    vectors: Vec<Vec<f64>>,
    nodes: Vec<NodeRecord>,
    history: Vec<Vec<RawRecord>>,
    pending: Vec<PendingUpdate>,
    cursor: usize,
}

#[derive(Default)]
struct VectorTable {
    ids: HashMap<*const f64, usize>,
    vectors: Vec<Vec<f64>>,
}

impl VectorTable {
    fn id(&mut self, v: &Arc<[f64]>) -> usize {
        let key = v.as_ptr();
        if let Some(&id) = self.ids.get(&key) {
            return id;
        }
        self.vectors.push(v.to_vec());
        self.ids.insert(key, self.vectors.len() - 1);
        self.vectors.len() - 1
    }
}

impl StateRecord {
    pub(crate) fn from_state(s: &TemporalState) -> Self {
        // Zero-length slices share a dangling pointer, so they get one id.
        let mut table = VectorTable::default();
        let nodes = s
            .nodes
            .iter()
            .map(|n| NodeRecord {
                h: n.h.clone(),
                z_last: table.id(&n.z_last),
                t_last: n.t_last,
                h_time: n.h_time,
                exists: n.exists,
                updates: n.updates,
            })
            .collect();
        let history = s
            .history
            .iter()
            .map(|h| {
                h.iter()
                    .map(|r| RawRecord {
                        partner: r.partner,
                        t_event: r.t_event,
                        partner_z: table.id(&r.partner_z),
                        edge_feat: table.id(&r.edge_feat),
                        owner_z: table.id(&r.owner_z),
                        delta_t: r.delta_t,
                    })
                    .collect()
            })
            .collect();
        StateRecord {
            memory_dim: s.memory_dim,
            embed_dim: s.embed_dim,
            vectors: table.vectors,
            nodes,
            history,
            pending: s.pending.clone(),
            cursor: s.cursor,
        }
    }

    pub(crate) fn into_state(self) -> Result<TemporalState> {
        let shared: Vec<Arc<[f64]>> = self.vectors.into_iter().map(Arc::from).collect();
        let get = |i: usize| -> Result<Arc<[f64]>> {
            shared.get(i).cloned().ok_or_else(|| Error::Load(format!("vector id {i} out of range")))
        };
        let nodes = self
            .nodes
            .into_iter()
            .map(|n| {
                Ok(NodeState {
                    h: n.h,
                    z_last: get(n.z_last)?,
                    t_last: n.t_last,
                    h_time: n.h_time,
                    exists: n.exists,
                    updates: n.updates,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let history = self
            .history
            .into_iter()
            .map(|h| {
                h.into_iter()
                    .map(|r| {
                        Ok(RawInteraction {
                            partner: r.partner,
                            t_event: r.t_event,
                            partner_z: get(r.partner_z)?,
                            edge_feat: get(r.edge_feat)?,
                            owner_z: get(r.owner_z)?,
                            delta_t: r.delta_t,
                        })
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        if history.len() != nodes.len() {
            return Err(Error::Load("history and node tables differ in length".into()));
        }
        Ok(TemporalState {
            memory_dim: self.memory_dim,
            embed_dim: self.embed_dim,
            nodes,
            history,
            pending: self.pending,
            cursor: self.cursor,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(src: NodeId, dst: NodeId, t: f64) -> Event {
        Event::new(src, dst, t, vec![0.5, -0.5])
    }

    #[test]
    fn new_nodes_are_zero() {
        let s = TemporalState::new(3, 4, 2);
        let n = s.node(1);
        assert_eq!(n.h, vec![0.0; 4]);
        assert_eq!(&*n.z_last, &[0.0, 0.0]);
        assert_eq!(n.t_last, 0.0);
        assert!(!n.exists);
    }

    #[test]
    fn recent_neighbors_window() {
        let mut s = TemporalState::new(20, 2, 2);
        assert!(s.recent_neighbors(0, 100.0, 10).is_empty());
        for k in 0..3 {
            s.commit_event(&ev(0, k + 1, k as f64 + 1.0), &[0.0; 2], &[0.0; 2], false).unwrap();
        }
        let n = s.recent_neighbors(0, 100.0, 10);
        assert_eq!(n.iter().map(|r| r.partner()).collect::<Vec<_>>(), vec![1, 2, 3]);
        for k in 3..15 {
            s.commit_event(&ev(0, k + 1, k as f64 + 1.0), &[0.0; 2], &[0.0; 2], false).unwrap();
        }
        let n = s.recent_neighbors(0, 100.0, 10);
        assert_eq!(n.len(), 10);
        assert_eq!(n[0].partner(), 6);
        assert_eq!(n[9].partner(), 15);
        // Strictly before t.
        let n = s.recent_neighbors(0, 15.0, 10);
        assert_eq!(n.last().unwrap().t_event(), 14.0);
    }

    #[test]
    fn record_raw_freezes_pre_event_values() {
        let mut s = TemporalState::new(3, 2, 2);
        s.commit_event(&ev(0, 1, 2.0), &[1.0, 1.0], &[2.0, 2.0], true).unwrap();
        let r0 = &s.history(0)[0];
        assert_eq!(r0.partner_z(), &[0.0, 0.0]);
        assert_eq!(r0.owner_z(), &[0.0, 0.0]);
        assert_eq!(r0.delta_t(), 2.0);
        let enc = TimeEncoder::new(3);
        assert_eq!(r0.input_vec(&enc), vec![0.0, 0.0, 0.5, -0.5, 0.0, 0.0, 2f64.cos(), (2.0 * 10000f64.powf(-2.0 / 3.0)).cos(), (2.0 * 10000f64.powf(-4.0 / 3.0)).cos()]);

        s.commit_event(&ev(1, 0, 5.0), &[3.0, 3.0], &[4.0, 4.0], true).unwrap();
        let r = &s.history(1)[1];
        assert_eq!(r.owner_z(), &[2.0, 2.0]);
        assert_eq!(r.partner_z(), &[1.0, 1.0]);
        assert_eq!(r.delta_t(), 3.0);
        assert_eq!(s.history(0).len(), 2);
        assert_eq!(s.history(2).len(), 0);

        let frozen = s.history(0)[0].clone();
        for k in 0..100 {
            s.commit_event(&ev(0, 2, 6.0 + k as f64), &[k as f64; 2], &[1.0; 2], true).unwrap();
        }
        assert_eq!(s.history(0)[0], frozen);
        assert_eq!(s.pending().len(), 204);
    }

    #[test]
    fn message_input_puts_owner_first() {
        let mut s = TemporalState::new(2, 1, 1);
        s.set_last_embedding(0, &[7.0], 1.0).unwrap();
        s.set_last_embedding(1, &[9.0], 1.0).unwrap();
        s.record_raw(0, 1, 3.0, &[]).unwrap();
        let enc = TimeEncoder::new(1);
        let r = &s.history(0)[0];
        assert_eq!(r.message_input(&enc), vec![7.0, 9.0, 2f64.cos()]);
        assert_eq!(r.input_vec(&enc), vec![9.0, 7.0, 2f64.cos()]);
    }

    #[test]
    fn time_order_is_enforced() {
        let mut s = TemporalState::new(2, 1, 1);
        s.set_last_embedding(0, &[1.0], 5.0).unwrap();
        assert!(matches!(s.record_raw(0, 1, 4.0, &[]), Err(Error::TimeOrder { .. })));
        s.apply_memory(1, vec![1.0], 3.0).unwrap();
        assert!(matches!(s.apply_memory(1, vec![1.0], 2.0), Err(Error::TimeOrder { .. })));
    }

    #[test]
    fn last_embedding_is_bit_equal_copy() {
        let mut s = TemporalState::new(2, 1, 3);
        let z = [0.1, -2.5e-300, 7.0];
        s.set_last_embedding(1, &z, 1.0).unwrap();
        assert_eq!(&*s.node(1).z_last, &z);
        assert_eq!(s.node(1).t_last, 1.0);
    }

    #[test]
    fn snapshot_restore_round_trip() {
        let mut s = TemporalState::new(4, 2, 2);
        let empty = s.snapshot();
        s.commit_event(&ev(0, 1, 1.0), &[1.0; 2], &[2.0; 2], true).unwrap();
        let snap = s.snapshot();
        s.commit_event(&ev(2, 1, 2.0), &[3.0; 2], &[4.0; 2], true).unwrap();
        s.apply_memory(2, vec![1.0, 1.0], 2.0).unwrap();
        s.restore(&snap).unwrap();
        assert_eq!(s, *snap.state());
        s.restore(&snap).unwrap();
        assert_eq!(s, *snap.state());
        s.restore(&empty).unwrap();
        assert_eq!(s, TemporalState::new(4, 2, 2));

        let mut other = TemporalState::new(5, 2, 2);
        assert!(matches!(other.restore(&snap), Err(Error::State(_))));
    }

    #[test]
    fn serialized_state_round_trips() {
        let mut s = TemporalState::new(3, 2, 2);
        s.commit_event(&ev(0, 1, 1.0), &[1.0; 2], &[2.0; 2], true).unwrap();
        s.commit_event(&ev(1, 2, 2.0), &[3.0; 2], &[4.0; 2], true).unwrap();
        s.set_cursor(2);
        let json = serde_json::to_string(&StateRecord::from_state(&s)).unwrap();
        let back: StateRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(back.into_state().unwrap(), s);
    }
}
