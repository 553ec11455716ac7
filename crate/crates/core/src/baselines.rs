//! Non-learned reference scorers that run through the same evaluation path
//! as the model: an edge-memory scorer and a seeded random scorer.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{EventStream, NegativeEdge, NodeId, SplitPlan};
use crate::train::{evaluate_test, sub_seed, warm_up, EvalReport, LinkScorer, TrainConfig};

/// Scores 1 for a `(src, dst)` pair observed before, 0 otherwise. With a
/// window, only pairs last seen within `window` time units count.
#[derive(Clone, Debug, Default)]
pub struct EdgeBank {
    last_seen: HashMap<(NodeId, NodeId), f64>,
    window: Option<f64>,
    cursor: usize,
}

impl EdgeBank {
    pub fn unlimited() -> Self {
        EdgeBank::default()
    }

    pub fn windowed(window: f64) -> Result<Self> {
        if window.is_nan() || window <= 0.0 {
            return Err(Error::Parameter(format!("window {window} must be positive")));
        }
        Ok(EdgeBank { window: Some(window), ..EdgeBank::default() })
    }

    pub fn score(&self, src: NodeId, dst: NodeId, t: f64) -> f64 {
        match (self.last_seen.get(&(src, dst)), self.window) {
            (Some(_), None) => 1.0,
            (Some(&seen), Some(w)) if t - seen <= w => 1.0,
            _ => 0.0,
        }
    }

    pub fn insert(&mut self, src: NodeId, dst: NodeId, t: f64) {
        let e = self.last_seen.entry((src, dst)).or_insert(t);
        *e = e.max(t);
    }

    pub fn len(&self) -> usize {
        self.last_seen.len()
    }

    pub fn is_empty(&self) -> bool {
        self.last_seen.is_empty()
    }
}

impl LinkScorer for EdgeBank {
    fn score_and_observe(
        &mut self,
        stream: &EventStream,
        positives: &[usize],
        negatives: &[NegativeEdge],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let pos = positives
            .iter()
            .map(|&i| {
                let e = stream.get(i);
                self.score(e.src, e.dst, e.t)
            })
            .collect();
        let neg = negatives.iter().map(|n| self.score(n.src, n.dst, n.t)).collect();
        self.observe(stream, positives)?;
        Ok((pos, neg))
    }

    fn observe(&mut self, stream: &EventStream, indices: &[usize]) -> Result<()> {
        for &i in indices {
            let e = stream.get(i);
            self.insert(e.src, e.dst, e.t);
        }
        Ok(())
    }

    fn cursor(&self) -> usize {
        self.cursor
    }

    fn set_cursor(&mut self, cursor: usize) {
        self.cursor = cursor;
    }
}

/// Uniform scores in `[0, 1)` from a seeded generator.
#[derive(Clone, Debug)]
pub struct RandomScorer {
    rng: ChaCha8Rng,
    cursor: usize,
}

impl RandomScorer {
    pub fn new(seed: u64) -> Self {
        RandomScorer { rng: ChaCha8Rng::seed_from_u64(seed), cursor: 0 }
    }

    pub fn score(&mut self) -> f64 {
        self.rng.random()
    }
}

impl LinkScorer for RandomScorer {
    fn score_and_observe(
        &mut self,
        _stream: &EventStream,
        positives: &[usize],
        negatives: &[NegativeEdge],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let pos = positives.iter().map(|_| self.score()).collect();
        let neg = negatives.iter().map(|_| self.score()).collect();
        Ok((pos, neg))
    }

    fn observe(&mut self, _stream: &EventStream, _indices: &[usize]) -> Result<()> {
        Ok(())
    }

    fn cursor(&self) -> usize {
        self.cursor
    }

    fn set_cursor(&mut self, cursor: usize) {
        self.cursor = cursor;
    }
}

/// Selectable scorers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Baseline {
    EdgeBank,
    Random,
}

impl Baseline {
    pub fn name(self) -> &'static str {
        match self {
            Baseline::EdgeBank => "edgebank",
            Baseline::Random => "random",
        }
    }
}

impl fmt::Display for Baseline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Baseline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "edgebank" => Ok(Baseline::EdgeBank),
            "random" => Ok(Baseline::Random),
            _ => Err(Error::Configuration(format!("unknown baseline {s:?}"))),
        }
    }
}

/// Runs a baseline on the test range after observing the same training and
/// validation events the model would see. `window` applies to EdgeBank only.
pub fn run_baseline(
    baseline: Baseline,
    stream: &EventStream,
    plan: &SplitPlan,
    config: &TrainConfig,
    window: Option<f64>,
) -> Result<EvalReport> {
    let mut scorer: Box<dyn LinkScorer> = match baseline {
        Baseline::EdgeBank => Box::new(match window {
            Some(w) => EdgeBank::windowed(w)?,
            None => EdgeBank::unlimited(),
        }),
        Baseline::Random => Box::new(RandomScorer::new(sub_seed(config.seed, "random-scores"))),
    };
    warm_up(scorer.as_mut(), stream, &plan.train_indices(stream), config.batch_size, plan.train.end)?;
    let val: Vec<usize> = plan.val.clone().collect();
    warm_up(scorer.as_mut(), stream, &val, config.batch_size, plan.val.end)?;
    let test = evaluate_test(scorer.as_mut(), stream, plan, config)?;
    let echo = serde_json::json!({
        "batch_size": config.batch_size,
        "seed": config.seed,
        "train_frac": config.train_frac,
        "val_frac": config.val_frac,
        "mode": plan.mode,
        "mask_fraction": config.mask_fraction,
        "eval_seed": config.eval_seed,
        "window": window,
    });
    Ok(EvalReport::new(baseline.name(), plan.mode, config.seed, test, echo))
}
