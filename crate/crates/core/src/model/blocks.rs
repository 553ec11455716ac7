//! Tape-level building blocks shared by the batched forward pass, plus
//! single-node entry points over explicit inputs.

use std::rc::Rc;

use rand_chacha::ChaCha8Rng;

use super::{Mpfa, NUM_HEADS};
use crate::error::{Error, Result};
use crate::tensor::{BoundParams, Segments, Tape, Tensor, Var};

/// Inverted dropout applied to hidden layers during training.
pub struct Dropout<'a> {
    pub p: f64,
    pub rng: &'a mut ChaCha8Rng,
}

/// Neighbor rows of a set of queries, grouped by query.
pub(crate) struct NeighborRows {
    pub seg: Rc<Segments>,
    /// Query row owning each neighbor row.
    pub owners: Vec<usize>,
    /// Neighbors' memories `[N x memory]`.
    pub h: Var,
    /// Edge features `[N x edge]`.
    pub edge: Var,
    /// `phi(t - t_j)` `[N x time]`.
    pub phi: Var,
    /// Frozen raw-record inputs `[N x interaction_width]`.
    pub raw_input: Var,
}

/// One neighbor given explicitly, for the single-node entry points.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborInput {
    /// The neighbor's memory.
    pub h: Vec<f64>,
    pub edge_feat: Vec<f64>,
    /// Query time minus interaction time.
    pub dt: f64,
    /// Frozen `[z_partner || e || z_owner || phi(dt_event)]`.
    pub raw_input: Vec<f64>,
}

fn constant_rows(tape: &mut Tape, rows: usize, cols: usize, data: Vec<f64>) -> Result<Var> {
    Ok(tape.constant(Tensor::matrix(rows, cols, data)?))
}

impl Mpfa {
    /// Concatenation that drops zero-width parts.
    fn cat(&self, tape: &mut Tape, parts: &[Var]) -> Result<Var> {
        let kept: Vec<Var> = parts.iter().copied().filter(|&v| tape.value(v).cols() > 0).collect();
        tape.concat(&kept)
    }

    /// Multi-head attention of each query memory over its neighbors. Returns
    /// the aggregate `[S x memory]` (zero rows for empty neighborhoods) and the
    /// weights `[N x heads]`.
    pub(crate) fn evolving_block(&self, tape: &mut Tape, p: &BoundParams, h_q: Var, nb: &NeighborRows) -> Result<(Var, Var)> {
        let w = &self.w;
        let s = tape.value(h_q).rows();
        let ones = constant_rows(tape, s, self.dims.time, vec![1.0; s * self.dims.time])?;
        let q_in = self.cat(tape, &[h_q, ones])?;
        let q = tape.linear(q_in, p.var(w.att_wq), p.var(w.att_bq))?;
        let kv_in = self.cat(tape, &[nb.h, nb.edge, nb.phi])?;
        let k = tape.linear(kv_in, p.var(w.att_wk), p.var(w.att_bk))?;
        let v = tape.linear(kv_in, p.var(w.att_wv), p.var(w.att_bv))?;
        let scale = 1.0 / ((self.dims.memory / NUM_HEADS) as f64).sqrt();
        let scores = tape.segment_dot(q, k, nb.seg.clone(), NUM_HEADS, scale)?;
        let attn = tape.segment_softmax(scores, nb.seg.clone())?;
        let heads = tape.segment_weighted_sum(attn, v, nb.seg.clone(), NUM_HEADS)?;
        let out = tape.linear(heads, p.var(w.att_wcon), p.var(w.att_bcon))?;
        let mask = (0..s).map(|i| if nb.seg.len_of(i) > 0 { 1.0 } else { 0.0 }).collect();
        Ok((tape.mul_rows(out, mask)?, attn))
    }

    /// `relu(W [h_owner || h_neighbor || phi(t - t_j)] + b)`.
    pub(crate) fn growth_block(&self, tape: &mut Tape, p: &BoundParams, h_own: Var, h_nb: Var, phi: Var) -> Result<Var> {
        let x = self.cat(tape, &[h_own, h_nb, phi])?;
        let g = tape.linear(x, p.var(self.w.growth_w), p.var(self.w.growth_b))?;
        Ok(tape.relu(g))
    }

    /// Feedback coefficients `[N x 1]`: softmax over each neighborhood of
    /// `sigmoid(W g + b)`.
    pub(crate) fn feedback_block(&self, tape: &mut Tape, p: &BoundParams, h_q: Var, nb: &NeighborRows) -> Result<Var> {
        let h_own = tape.gather_rows(h_q, nb.owners.clone())?;
        let g = self.growth_block(tape, p, h_own, nb.h, nb.phi)?;
        let i = tape.linear(g, p.var(self.w.feedback_w), p.var(self.w.feedback_b))?;
        let i = tape.sigmoid(i);
        tape.segment_softmax(i, nb.seg.clone())
    }

    /// Two-layer transform of `C_j = [W_raw input_j || phi(t - t_j)]`.
    pub(crate) fn raw_transform_block(&self, tape: &mut Tape, p: &BoundParams, nb: &NeighborRows) -> Result<Var> {
        let w = &self.w;
        let r = tape.linear(nb.raw_input, p.var(w.raw_w), p.var(w.raw_b))?;
        let c = self.cat(tape, &[r, nb.phi])?;
        let hid = tape.linear(c, p.var(w.trans1_w), p.var(w.trans1_b))?;
        let hid = tape.relu(hid);
        tape.linear(hid, p.var(w.trans2_w), p.var(w.trans2_b))
    }

    /// Raw aggregate `[S x memory]` and feedback coefficients `[N x 1]`.
    pub(crate) fn raw_block(&self, tape: &mut Tape, p: &BoundParams, h_q: Var, nb: &NeighborRows) -> Result<(Var, Var)> {
        let a = self.feedback_block(tape, p, h_q, nb)?;
        let t = self.raw_transform_block(tape, p, nb)?;
        Ok((tape.segment_weighted_sum(a, t, nb.seg.clone(), 1)?, a))
    }

    /// Fuses self-change, evolving and raw projections into embeddings `[S x embed]`.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn couple_block(
        &self,
        tape: &mut Tape,
        p: &BoundParams,
        h_q: Var,
        self_phi: Var,
        p_e: Var,
        p_r: Var,
        dropout: Option<&mut Dropout>,
    ) -> Result<Var> {
        let w = &self.w;
        let x1 = self.cat(tape, &[h_q, self_phi])?;
        let z1 = tape.linear(x1, p.var(w.node_w), p.var(w.node_b))?;
        let x2 = tape.concat(&[h_q, p_e])?;
        let z2 = tape.linear(x2, p.var(w.evo_mix_w), p.var(w.evo_mix_b))?;
        let x3 = tape.concat(&[h_q, p_r])?;
        let z3 = tape.linear(x3, p.var(w.raw_mix_w), p.var(w.raw_mix_b))?;
        let zs = tape.concat(&[z1, z2, z3])?;
        let hid = tape.linear(zs, p.var(w.fnn1_w), p.var(w.fnn1_b))?;
        let mut hid = tape.relu(hid);
        if let Some(d) = dropout {
            hid = tape.dropout(hid, d.p, true, d.rng)?;
        }
        tape.linear(hid, p.var(w.fnn2_w), p.var(w.fnn2_b))
    }

    /// Link logits `[P x 1]` for embedding rows `z_i`, `z_j`.
    pub(crate) fn decode_block(
        &self,
        tape: &mut Tape,
        p: &BoundParams,
        z_i: Var,
        z_j: Var,
        dropout: Option<&mut Dropout>,
    ) -> Result<Var> {
        let w = &self.w;
        let x = tape.concat(&[z_i, z_j])?;
        let h1 = tape.linear(x, p.var(w.dec1_w), p.var(w.dec1_b))?;
        let mut h1 = tape.relu(h1);
        if let Some(d) = dropout {
            h1 = tape.dropout(h1, d.p, true, d.rng)?;
        }
        let h2 = tape.linear(h1, p.var(w.dec2_w), p.var(w.dec2_b))?;
        let h2 = tape.relu(h2);
        tape.linear(h2, p.var(w.dec3_w), p.var(w.dec3_b))
    }

    fn check_len(&self, what: &str, v: &[f64], want: usize) -> Result<()> {
        if v.len() != want {
            return Err(Error::dim(format!("{what} has width {}, expected {want}", v.len())));
        }
        Ok(())
    }

    /// Records one query row and its explicit neighbors on `tape`.
    fn explicit_rows(&self, tape: &mut Tape, h_i: &[f64], nbrs: &[NeighborInput]) -> Result<(Var, NeighborRows)> {
        let d = &self.dims;
        self.check_len("query memory", h_i, d.memory)?;
        let n = nbrs.len();
        let (mut h, mut edge, mut phi, mut raw) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for nb in nbrs {
            self.check_len("neighbor memory", &nb.h, d.memory)?;
            self.check_len("edge features", &nb.edge_feat, d.edge)?;
            self.check_len("raw input", &nb.raw_input, d.interaction_width())?;
            h.extend_from_slice(&nb.h);
            edge.extend_from_slice(&nb.edge_feat);
            phi.extend(self.encoder.encode(nb.dt)?);
            raw.extend_from_slice(&nb.raw_input);
        }
        let h_q = constant_rows(tape, 1, d.memory, h_i.to_vec())?;
        let rows = NeighborRows {
            seg: Rc::new(Segments::from_lengths([n])),
            owners: vec![0; n],
            h: constant_rows(tape, n, d.memory, h)?,
            edge: constant_rows(tape, n, d.edge, edge)?,
            phi: constant_rows(tape, n, d.time, phi)?,
            raw_input: constant_rows(tape, n, d.interaction_width(), raw)?,
        };
        Ok((h_q, rows))
    }

    /// Evolving aggregate for one node and its per-head attention weights
    /// (one entry per neighbor). Empty neighborhoods give a zero aggregate.
    pub fn evolving_attention(&self, h_i: &[f64], nbrs: &[NeighborInput]) -> Result<(Vec<f64>, Vec<[f64; NUM_HEADS]>)> {
        if nbrs.is_empty() {
            self.check_len("query memory", h_i, self.dims.memory)?;
            return Ok((vec![0.0; self.dims.memory], Vec::new()));
        }
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape);
        let (h_q, rows) = self.explicit_rows(&mut tape, h_i, nbrs)?;
        let (out, attn) = self.evolving_block(&mut tape, &p, h_q, &rows)?;
        let weights = tape.value(attn).data().chunks(NUM_HEADS).map(|c| [c[0], c[1]]).collect();
        Ok((tape.value(out).data().to_vec(), weights))
    }

    /// Growth feature of the pair `(i, j)` for a gap `dt` since their interaction.
    pub fn growth_feature(&self, h_i: &[f64], h_j: &[f64], dt: f64) -> Result<Vec<f64>> {
        self.check_len("memory", h_i, self.dims.memory)?;
        self.check_len("memory", h_j, self.dims.memory)?;
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape);
        let hi = constant_rows(&mut tape, 1, self.dims.memory, h_i.to_vec())?;
        let hj = constant_rows(&mut tape, 1, self.dims.memory, h_j.to_vec())?;
        let phi = constant_rows(&mut tape, 1, self.dims.time, self.encoder.encode(dt)?)?;
        let g = self.growth_block(&mut tape, &p, hi, hj, phi)?;
        Ok(tape.value(g).data().to_vec())
    }

    /// Normalized feedback coefficients over a non-empty neighborhood.
    pub fn feedback_coefficients(&self, h_i: &[f64], nbrs: &[NeighborInput]) -> Result<Vec<f64>> {
        if nbrs.is_empty() {
            return Err(Error::dim("feedback coefficients need at least one neighbor"));
        }
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape);
        let (h_q, rows) = self.explicit_rows(&mut tape, h_i, nbrs)?;
        let a = self.feedback_block(&mut tape, &p, h_q, &rows)?;
        Ok(tape.value(a).data().to_vec())
    }

    /// `sum_j a_j * trans([W_raw input_j || phi(dt_j)])`.
    pub fn raw_aggregation(&self, nbrs: &[NeighborInput], a: &[f64]) -> Result<Vec<f64>> {
        if a.len() != nbrs.len() {
            return Err(Error::dim(format!("{} coefficients for {} neighbors", a.len(), nbrs.len())));
        }
        if nbrs.is_empty() {
            return Ok(vec![0.0; self.dims.memory]);
        }
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape);
        let zero = vec![0.0; self.dims.memory];
        let (_, rows) = self.explicit_rows(&mut tape, &zero, nbrs)?;
        let t = self.raw_transform_block(&mut tape, &p, &rows)?;
        let av = constant_rows(&mut tape, a.len(), 1, a.to_vec())?;
        let out = tape.segment_weighted_sum(av, t, rows.seg.clone(), 1)?;
        Ok(tape.value(out).data().to_vec())
    }

    /// Embedding from a node's memory, the gap since its last interaction and
    /// the two perspective aggregates.
    pub fn couple(&self, h_i: &[f64], dt_self: f64, p_e: &[f64], p_r: &[f64]) -> Result<Vec<f64>> {
        let m = self.dims.memory;
        self.check_len("memory", h_i, m)?;
        self.check_len("evolving aggregate", p_e, m)?;
        self.check_len("raw aggregate", p_r, m)?;
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape);
        let h = constant_rows(&mut tape, 1, m, h_i.to_vec())?;
        let phi = constant_rows(&mut tape, 1, self.dims.time, self.encoder.encode(dt_self)?)?;
        let pe = constant_rows(&mut tape, 1, m, p_e.to_vec())?;
        let pr = constant_rows(&mut tape, 1, m, p_r.to_vec())?;
        let z = self.couple_block(&mut tape, &p, h, phi, pe, pr, None)?;
        Ok(tape.value(z).data().to_vec())
    }

    /// Link probability for two embeddings.
    pub fn decode_link(&self, z_i: &[f64], z_j: &[f64]) -> Result<f64> {
        let e = self.dims.embed;
        self.check_len("embedding", z_i, e)?;
        self.check_len("embedding", z_j, e)?;
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape);
        let zi = constant_rows(&mut tape, 1, e, z_i.to_vec())?;
        let zj = constant_rows(&mut tape, 1, e, z_j.to_vec())?;
        let logit = self.decode_block(&mut tape, &p, zi, zj, None)?;
        Ok(sigmoid(tape.value(logit).item()))
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
