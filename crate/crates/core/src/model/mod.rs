//! The link-prediction model: evolving-perspective attention over neighbors'
//! memories, feedback-weighted aggregation of frozen raw interactions, a
//! coupling network that fuses both, and an MLP link decoder.

mod blocks;
mod forward;
mod time;


use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::NodeId;
use crate::state::TemporalState;
use crate::tensor::{GruCell, ParamId, ParamStore, Tape, Tensor};

pub use blocks::{Dropout, NeighborInput};
pub use forward::{AttentionRow, BatchOutput, EventOutput, MemoryWrite, NeighborRef, Perspective, QuerySet};
pub use time::TimeEncoder;

/// Attention heads of the evolving perspective.
pub const NUM_HEADS: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDims {
    /// Embedding width.
    pub embed: usize,
    /// Memory width; must be divisible by the number of heads.
    pub memory: usize,
    /// Time-encoding width.
    pub time: usize,
    /// Edge-feature width.
    pub edge: usize,
}

impl ModelDims {
    pub fn new(embed: usize, memory: usize, time: usize, edge: usize) -> Result<Self> {
        let d = ModelDims { embed, memory, time, edge };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed == 0 || self.memory == 0 || self.time == 0 {
            return Err(Error::Configuration(format!("model widths must be positive: {self:?}")));
        }
        if !self.memory.is_multiple_of(NUM_HEADS) {
            return Err(Error::Configuration(format!(
                "memory width {} is not divisible by {NUM_HEADS} heads",
                self.memory
            )));
        }
        Ok(())
    }

    /// Width of `[z || e || z || phi]`, the message and raw-record input.
    pub fn interaction_width(&self) -> usize {
        2 * self.embed + self.edge + self.time
    }
}

/// Which parts of the model are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ablation {
    pub evolving: bool,
    pub raw: bool,
    /// Whether memories are updated after events; when off they stay zero.
    pub dynamic_update: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Variant::Full.ablation()
    }
}

/// Named ablation settings.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    /// Without the raw perspective.
    WoRp,
    /// Without the evolving perspective.
    WoEp,
    /// Without memory updates, both perspectives kept.
    WoRed,
    /// Without the evolving perspective and without memory updates.
    WoEd,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::Full, Variant::WoRp, Variant::WoEp, Variant::WoRed, Variant::WoEd];

    pub fn ablation(self) -> Ablation {
        let (evolving, raw, dynamic_update) = match self {
            Variant::Full => (true, true, true),
            Variant::WoRp => (true, false, true),
            Variant::WoEp => (false, true, true),
            Variant::WoRed => (true, true, false),
            Variant::WoEd => (false, true, false),
        };
        Ablation { evolving, raw, dynamic_update }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::WoRp => "wo_rp",
            Variant::WoEp => "wo_ep",
            Variant::WoRed => "wo_red",
            Variant::WoEd => "wo_ed",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Configuration(format!("unknown ablation variant {s:?}")))
    }
}

/// Handles of every model parameter. Weights are stored `[in x out]`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Weights {
    pub evol_w: ParamId,
    pub evol_b: ParamId,
    pub gru: GruCell,
    pub att_wq: ParamId,
    pub att_bq: ParamId,
    pub att_wk: ParamId,
    pub att_bk: ParamId,
    pub att_wv: ParamId,
    pub att_bv: ParamId,
    pub att_wcon: ParamId,
    pub att_bcon: ParamId,
    pub raw_w: ParamId,
    pub raw_b: ParamId,
    pub growth_w: ParamId,
    pub growth_b: ParamId,
    pub feedback_w: ParamId,
    pub feedback_b: ParamId,
    pub trans1_w: ParamId,
    pub trans1_b: ParamId,
    pub trans2_w: ParamId,
    pub trans2_b: ParamId,
    pub node_w: ParamId,
    pub node_b: ParamId,
    pub evo_mix_w: ParamId,
    pub evo_mix_b: ParamId,
    pub raw_mix_w: ParamId,
    pub raw_mix_b: ParamId,
    pub fnn1_w: ParamId,
    pub fnn1_b: ParamId,
    pub fnn2_w: ParamId,
    pub fnn2_b: ParamId,
    pub dec1_w: ParamId,
    pub dec1_b: ParamId,
    pub dec2_w: ParamId,
    pub dec2_b: ParamId,
    pub dec3_w: ParamId,
    pub dec3_b: ParamId,
}

/// Parameter-name prefixes of the two perspectives, used to zero them out.
pub const EVOLVING_PREFIX: &str = "att.";
pub const RAW_PREFIXES: [&str; 4] = ["raw.", "growth.", "feedback.", "trans"];

impl Weights {
    fn register(store: &mut ParamStore, d: &ModelDims, rng: &mut ChaCha8Rng) -> Result<Self> {
        let (e, h, t, x) = (d.embed, d.memory, d.time, d.interaction_width());
        let mut lin = |store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize| -> Result<(ParamId, ParamId)> {
            let w = store.insert(format!("{name}.w"), Tensor::uniform_init(fan_in, fan_out, rng))?;
            let b = store.insert(format!("{name}.b"), Tensor::zeros(&[fan_out]))?;
            Ok((w, b))
        };
        let (evol_w, evol_b) = lin(store, "evol", x, h)?;
        let gru = GruCell::register(store, "gru", h, h, rng)?;
        let mut lin = |store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize| -> Result<(ParamId, ParamId)> {
            let w = store.insert(format!("{name}.w"), Tensor::uniform_init(fan_in, fan_out, rng))?;
            let b = store.insert(format!("{name}.b"), Tensor::zeros(&[fan_out]))?;
            Ok((w, b))
        };
        let (att_wq, att_bq) = lin(store, "att.q", h + t, h)?;
        let (att_wk, att_bk) = lin(store, "att.k", h + d.edge + t, h)?;
        let (att_wv, att_bv) = lin(store, "att.v", h + d.edge + t, h)?;
        let (att_wcon, att_bcon) = lin(store, "att.con", h, h)?;
        let (raw_w, raw_b) = lin(store, "raw", x, h)?;
        let (growth_w, growth_b) = lin(store, "growth", 2 * h + t, h)?;
        let (feedback_w, feedback_b) = lin(store, "feedback", h, 1)?;
        let (trans1_w, trans1_b) = lin(store, "trans1", h + t, h)?;
        let (trans2_w, trans2_b) = lin(store, "trans2", h, h)?;
        let (node_w, node_b) = lin(store, "couple.node", h + t, e)?;
        let (evo_mix_w, evo_mix_b) = lin(store, "couple.evolving", 2 * h, e)?;
        let (raw_mix_w, raw_mix_b) = lin(store, "couple.raw", 2 * h, e)?;
        let (fnn1_w, fnn1_b) = lin(store, "fnn1", 3 * e, e)?;
        let (fnn2_w, fnn2_b) = lin(store, "fnn2", e, e)?;
        let (dec1_w, dec1_b) = lin(store, "dec1", 2 * e, e)?;
        let (dec2_w, dec2_b) = lin(store, "dec2", e, e)?;
        let (dec3_w, dec3_b) = lin(store, "dec3", e, 1)?;
        Ok(Weights {
            evol_w,
            evol_b,
            gru,
            att_wq,
            att_bq,
            att_wk,
            att_bk,
            att_wv,
            att_bv,
            att_wcon,
            att_bcon,
            raw_w,
            raw_b,
            growth_w,
            growth_b,
            feedback_w,
            feedback_b,
            trans1_w,
            trans1_b,
            trans2_w,
            trans2_b,
            node_w,
            node_b,
            evo_mix_w,
            evo_mix_b,
            raw_mix_w,
            raw_mix_b,
            fnn1_w,
            fnn1_b,
            fnn2_w,
            fnn2_b,
            dec1_w,
            dec1_b,
            dec2_w,
            dec2_b,
            dec3_w,
            dec3_b,
        })
    }
}

/// Model definition plus its parameters.
#[derive(Clone, Debug)]
pub struct Mpfa {
    dims: ModelDims,
    ablation: Ablation,
    encoder: TimeEncoder,
    w: Weights,
    params: ParamStore,
}

impl Mpfa {
    pub fn new(dims: ModelDims, ablation: Ablation, init_seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(init_seed);
        let mut params = ParamStore::new();
        let w = Weights::register(&mut params, &dims, &mut rng)?;
        Ok(Mpfa { dims, ablation, encoder: TimeEncoder::new(dims.time), w, params })
    }

    /// Rebuilds a model around stored parameters, checking names and shapes.
    pub fn from_params(dims: ModelDims, ablation: Ablation, params: ParamStore) -> Result<Self> {
        let mut model = Mpfa::new(dims, ablation, 0)?;
        if params.len() != model.params.len() {
            return Err(Error::Load(format!(
                "{} parameters stored, model needs {}",
                params.len(),
                model.params.len()
            )));
        }
        for (want, got) in model.params.iter().zip(params.iter()) {
            if want.name != got.name || want.value.shape() != got.value.shape() {
                return Err(Error::Load(format!(
                    "parameter {} {:?} does not match expected {} {:?}",
                    got.name,
                    got.value.shape(),
                    want.name,
                    want.value.shape()
                )));
            }
        }
        if !params.all_finite() {
            return Err(Error::Load("stored parameters contain non-finite values".into()));
        }
        model.params = params;
        Ok(model)
    }

    pub fn dims(&self) -> &ModelDims {
        &self.dims
    }

    pub fn ablation(&self) -> Ablation {
        self.ablation
    }

    pub fn set_ablation(&mut self, ablation: Ablation) {
        self.ablation = ablation;
    }

    pub fn encoder(&self) -> &TimeEncoder {
        &self.encoder
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Empty state sized for this model.
    pub fn new_state(&self, num_nodes: usize) -> TemporalState {
        TemporalState::new(num_nodes, self.dims.memory, self.dims.embed)
    }

    /// Sets every parameter whose name starts with one of `prefixes` to zero.
    pub fn zero_params(&mut self, prefixes: &[&str]) {
        for p in self.params.iter_mut() {
            if prefixes.iter().any(|pre| p.name.starts_with(pre)) {
                p.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }

    /// Cosine encoding of a non-negative time gap.
    pub fn time_encode(&self, dt: f64) -> Result<Vec<f64>> {
        self.encoder.encode(dt)
    }

    /// Message `W_evol [z_i || e || z_j || phi(t - t_last(i))]` for endpoint
    /// `i` of an event with `j` at time `t`, from the current state.
    pub fn event_message(&self, state: &TemporalState, i: NodeId, j: NodeId, t: f64, edge_feat: &[f64]) -> Result<Vec<f64>> {
        if edge_feat.len() != self.dims.edge {
            return Err(Error::dim(format!(
                "edge features of width {} for a model of width {}",
                edge_feat.len(),
                self.dims.edge
            )));
        }
        let (ni, nj) = (state.node(i), state.node(j));
        let phi = self.encoder.encode(t - ni.t_last).map_err(|_| Error::TimeOrder { t, last: ni.t_last })?;
        let mut input = Vec::with_capacity(self.dims.interaction_width());
        input.extend_from_slice(&ni.z_last);
        input.extend_from_slice(edge_feat);
        input.extend_from_slice(&nj.z_last);
        input.extend_from_slice(&phi);
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape);
        let x = tape.constant(Tensor::vector(input));
        let out = tape.linear(x, p.var(self.w.evol_w), p.var(self.w.evol_b))?;
        Ok(tape.value(out).data().to_vec())
    }
}
