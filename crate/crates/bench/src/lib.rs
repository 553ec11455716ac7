//! Shared fixtures for the benchmarks.

use mpfa_core::events::{synth_recurrent, EventStream};
use mpfa_core::model::{ModelDims, Mpfa, Variant};
use mpfa_core::state::TemporalState;
use mpfa_core::train::{warm_up, MpfaScorer};

/// A synthetic stream of `events` interactions over 100 nodes.
pub fn stream(events: usize) -> EventStream {
    synth_recurrent(100, events, 0.9, 0.1, 1).expect("valid synthetic parameters")
}

pub fn model(dim: usize, edge: usize) -> Mpfa {
    let dims = ModelDims::new(dim, dim, dim / 2, edge).expect("valid dims");
    Mpfa::new(dims, Variant::Full.ablation(), 1).expect("model builds")
}

/// State after observing the first `warm` events of `stream`.
pub fn warm_state(model: &Mpfa, stream: &EventStream, warm: usize, k: usize) -> TemporalState {
    let mut state = model.new_state(stream.num_nodes());
    let idx: Vec<usize> = (0..warm).collect();
    let mut scorer = MpfaScorer { model, state: &mut state, k };
    warm_up(&mut scorer, stream, &idx, 200, warm).expect("replay succeeds");
    state
}
