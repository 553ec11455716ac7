//! Scorer-agnostic link-prediction evaluation.

use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::metrics::Metrics;
use crate::error::{Error, Result};
use crate::events::{make_batches, negative_sample, Event, EventStream, NegativeEdge, SplitPlan};
use crate::model::{AttentionRow, Mpfa, QuerySet};
use crate::state::TemporalState;
use crate::tensor::Tape;

/// Anything that can score candidate links against what it has observed.
pub trait LinkScorer {
    /// Probabilities for each positive event and its paired negative, using
    /// only events observed so far; then observes the positives.
    fn score_and_observe(
        &mut self,
        stream: &EventStream,
        positives: &[usize],
        negatives: &[NegativeEdge],
    ) -> Result<(Vec<f64>, Vec<f64>)>;

    /// Observes events without scoring them.
    fn observe(&mut self, stream: &EventStream, indices: &[usize]) -> Result<()>;

    /// Index of the next stream event the scorer expects.
    fn cursor(&self) -> usize;

    fn set_cursor(&mut self, cursor: usize);
}

/// The model together with its evolving state.
pub struct MpfaScorer<'a> {
    pub model: &'a Mpfa,
    pub state: &'a mut TemporalState,
    pub k: usize,
}

impl MpfaScorer<'_> {
    fn run(&mut self, events: &[&Event], negatives: &[NegativeEdge]) -> Result<Vec<f64>> {
        let mut q = QuerySet::new();
        let mut pairs = Vec::with_capacity(events.len() + negatives.len());
        let mut commits = Vec::with_capacity(events.len());
        for e in events {
            let (a, b) = (q.add(e.src, e.t), q.add(e.dst, e.t));
            pairs.push((a, b));
            commits.push((*e, a, b));
        }
        for n in negatives {
            pairs.push((q.add(n.src, n.t), q.add(n.dst, n.t)));
        }
        let mut tape = Tape::new();
        let p = self.model.params().bind(&mut tape);
        let out = self.model.forward_batch(&mut tape, &p, self.state, &q, &pairs, self.k, None)?;
        let probs = out.probabilities(&tape);
        if probs.iter().any(|p| !p.is_finite()) {
            return Err(Error::Numeric("non-finite link score".into()));
        }
        self.model.commit_batch(self.state, &tape, &out, &commits)?;
        Ok(probs)
    }
}

impl LinkScorer for MpfaScorer<'_> {
    fn score_and_observe(
        &mut self,
        stream: &EventStream,
        positives: &[usize],
        negatives: &[NegativeEdge],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let events: Vec<&Event> = positives.iter().map(|&i| stream.get(i)).collect();
        let mut probs = self.run(&events, negatives)?;
        let neg = probs.split_off(events.len());
        Ok((probs, neg))
    }

    fn observe(&mut self, stream: &EventStream, indices: &[usize]) -> Result<()> {
        let events: Vec<&Event> = indices.iter().map(|&i| stream.get(i)).collect();
        self.run(&events, &[]).map(|_| ())
    }

    fn cursor(&self) -> usize {
        self.state.cursor()
    }

    fn set_cursor(&mut self, cursor: usize) {
        self.state.set_cursor(cursor);
    }
}

/// Replays events `0..range.end` from a fresh state and returns the
/// source-side attention weights of every event in `range`.
pub fn attention_trace(
    model: &Mpfa,
    stream: &EventStream,
    range: Range<usize>,
    k: usize,
    batch_size: usize,
) -> Result<Vec<AttentionRow>> {
    if range.end > stream.len() {
        return Err(Error::Configuration(format!("event range ends at {} but the stream has {}", range.end, stream.len())));
    }
    let mut state = model.new_state(stream.num_nodes());
    let all: Vec<usize> = (0..range.end).collect();
    let mut rows = Vec::new();
    for batch in make_batches(&all, batch_size)? {
        let mut q = QuerySet::new();
        let mut commits = Vec::with_capacity(batch.len());
        let mut wanted = Vec::new();
        for &i in &batch {
            let e = stream.get(i);
            let (a, b) = (q.add(e.src, e.t), q.add(e.dst, e.t));
            commits.push((e, a, b));
            if range.contains(&i) {
                wanted.push((i, a));
            }
        }
        let mut tape = Tape::new();
        let p = model.params().bind(&mut tape);
        let out = model.forward_batch(&mut tape, &p, &state, &q, &[], k, None)?;
        rows.extend(model.attention_rows(&tape, &out, &q, &wanted));
        model.commit_batch(&mut state, &tape, &out, &commits)?;
    }
    Ok(rows)
}

/// Observes `indices` in batches and leaves the cursor at `end`.
pub fn warm_up<S: LinkScorer + ?Sized>(
    scorer: &mut S,
    stream: &EventStream,
    indices: &[usize],
    batch_size: usize,
    end: usize,
) -> Result<()> {
    for batch in make_batches(indices, batch_size)? {
        scorer.observe(stream, &batch)?;
    }
    scorer.set_cursor(end);
    Ok(())
}

/// Scores every event of `range` against one seeded negative each, observing
/// events batch by batch. Only events selected by the plan (all of them in
/// transductive mode, those touching masked nodes in inductive mode) count
/// toward the metrics, but every event is observed.
pub fn evaluate_linkpred<S: LinkScorer + ?Sized>(
    scorer: &mut S,
    stream: &EventStream,
    plan: &SplitPlan,
    range: Range<usize>,
    batch_size: usize,
    negative_seed: u64,
) -> Result<Metrics> {
    if scorer.cursor() != range.start {
        return Err(Error::Protocol(format!(
            "evaluation of events {}..{} needs the state advanced to event {}, but it is at {}",
            range.start,
            range.end,
            range.start,
            scorer.cursor()
        )));
    }
    let scored: std::collections::HashSet<usize> = plan.scored_indices(stream, range.clone()).into_iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(negative_seed);
    let all: Vec<usize> = range.clone().collect();
    let (mut scores, mut labels) = (Vec::new(), Vec::new());
    for batch in make_batches(&all, batch_size)? {
        let events: Vec<&Event> = batch.iter().map(|&i| stream.get(i)).collect();
        let negatives = negative_sample(&events, stream.dst_universe(), &mut rng)?;
        let (pos, neg) = scorer.score_and_observe(stream, &batch, &negatives)?;
        for (k, &i) in batch.iter().enumerate() {
            if scored.contains(&i) {
                scores.extend([pos[k], neg[k]]);
                labels.extend([1u8, 0]);
            }
        }
    }
    scorer.set_cursor(range.end);
    Metrics::compute(&scores, &labels)
}
