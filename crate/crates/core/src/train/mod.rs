//! Training with early stopping, link-prediction evaluation, dynamic node
//! classification and the experiment drivers built on them.

mod eval;
mod experiments;
mod metrics;
mod node_class;

#[cfg(test)]
mod tests;


use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::events::{chronological_split, inductive_mask, make_batches, EventStream, SplitMode, SplitPlan};
use crate::model::{Dropout, ModelDims, Mpfa, QuerySet, Variant};
use crate::state::{StateSnapshot, TemporalState};
use crate::tensor::{Adam, AdamConfig, ScoreKind, Tape};

pub use eval::{attention_trace, evaluate_linkpred, warm_up, LinkScorer, MpfaScorer};
pub use experiments::{
    repeat_runs, run_ablations, sweep, sweep_neighbors, AblationRow, RepeatSummary, SweepParam, SweepRow, DEFAULT_K_LIST,
};
pub use metrics::{metric_acc, metric_ap, metric_auc, Metrics};
pub use node_class::{node_classification, replay_embeddings, ClassifierConfig, ClassifierInput};

/// Dropout rates the experiments were tuned over; others are allowed with a warning.
pub const DROPOUT_GRID: [f64; 5] = [0.0, 0.1, 0.2, 0.3, 0.4];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub epochs: usize,
    pub patience: usize,
    pub dropout: f64,
    pub k_neighbors: usize,
    pub embed_dim: usize,
    pub memory_dim: usize,
    pub time_dim: usize,
    pub seed: u64,
    pub variant: Variant,
    pub train_frac: f64,
    pub val_frac: f64,
    pub mode: SplitMode,
    /// Share of evaluation nodes hidden from training in inductive mode.
    pub mask_fraction: f64,
    /// Seed of the evaluation protocol (negatives, inductive mask); `seed` when unset.
    pub eval_seed: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 200,
            lr: 1e-4,
            epochs: 50,
            patience: 5,
            dropout: 0.1,
            k_neighbors: 10,
            embed_dim: 172,
            memory_dim: 172,
            time_dim: 100,
            seed: 0,
            variant: Variant::Full,
            train_frac: 0.70,
            val_frac: 0.15,
            mode: SplitMode::Transductive,
            mask_fraction: 0.1,
            eval_seed: None,
        }
    }
}

impl TrainConfig {
    /// Checks the configuration and returns warnings for allowed but unusual values.
    pub fn validate(&self) -> Result<Vec<String>> {
        let mut warnings = Vec::new();
        if self.batch_size == 0 || self.epochs == 0 || self.k_neighbors == 0 {
            return Err(Error::Configuration("batch_size, epochs and k_neighbors must be positive".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Configuration(format!("learning rate {} must be finite and >= 0", self.lr)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Configuration(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !DROPOUT_GRID.contains(&self.dropout) {
            warnings.push(format!("dropout {} is outside the usual grid {DROPOUT_GRID:?}", self.dropout));
        }
        self.dims(0)?;
        Ok(warnings)
    }

    pub fn evaluation_seed(&self) -> u64 {
        self.eval_seed.unwrap_or(self.seed)
    }

    pub fn dims(&self, edge: usize) -> Result<ModelDims> {
        ModelDims::new(self.embed_dim, self.memory_dim, self.time_dim, edge)
    }

    /// Chronological split, masked for inductive mode.
    pub fn plan(&self, stream: &EventStream) -> Result<SplitPlan> {
        let plan = chronological_split(stream, self.train_frac, self.val_frac)?;
        match self.mode {
            SplitMode::Transductive => Ok(plan),
            SplitMode::Inductive => inductive_mask(stream, &plan, self.mask_fraction, sub_seed(self.evaluation_seed(), "mask")),
        }
    }
}

/// Independent seed for the named component, derived from the run seed.
pub fn sub_seed(seed: u64, name: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

/// Short stable identifier of a run: a hash of its configuration.
pub fn run_id(config: &serde_json::Value) -> String {
    let mut h = Sha256::new();
    h.update(config.to_string().as_bytes());
    hex::encode(&h.finalize()[..6])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val: Metrics,
}

/// Outcome of one run. Contains no wall-clock data so that identical runs
/// serialize identically.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub run_id: String,
    pub model: String,
    pub mode: SplitMode,
    pub seed: u64,
    pub test: Metrics,
    pub val: Option<Metrics>,
    pub best_epoch: Option<usize>,
    pub epochs: Vec<EpochRecord>,
    pub config: serde_json::Value,
}

impl EvalReport {
    pub fn new(model: &str, mode: SplitMode, seed: u64, test: Metrics, config: serde_json::Value) -> Self {
        let id = run_id(&serde_json::json!({ "model": model, "config": config }));
        EvalReport {
            run_id: id,
            model: model.to_string(),
            mode,
            seed,
            test,
            val: None,
            best_epoch: None,
            epochs: Vec::new(),
            config,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Result of [`train`].
pub struct TrainOutcome {
    /// Model with the best-validation parameters.
    pub model: Mpfa,
    /// State after replaying training and validation events, positioned at the test range.
    pub warm_state: StateSnapshot,
    /// State after the test range.
    pub final_state: TemporalState,
    pub report: EvalReport,
}

/// One training epoch from a fresh state. Returns the mean batch loss.
#[allow(clippy::too_many_arguments)]
fn train_epoch(
    model: &mut Mpfa,
    adam: &mut Adam,
    state: &mut TemporalState,
    stream: &EventStream,
    plan: &SplitPlan,
    config: &TrainConfig,
    neg_rng: &mut ChaCha8Rng,
    drop_rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let indices = plan.train_indices(stream);
    let batches = make_batches(&indices, config.batch_size)?;
    let mut total = 0.0;
    for batch in &batches {
        let events: Vec<_> = batch.iter().map(|&i| stream.get(i)).collect();
        let negatives = crate::events::negative_sample(&events, stream.dst_universe(), neg_rng)?;
        let mut q = QuerySet::new();
        let mut pairs = Vec::with_capacity(2 * events.len());
        let mut commits = Vec::with_capacity(events.len());
        for e in &events {
            let (a, b) = (q.add(e.src, e.t), q.add(e.dst, e.t));
            pairs.push((a, b));
            commits.push((*e, a, b));
        }
        for n in &negatives {
            pairs.push((q.add(n.src, n.t), q.add(n.dst, n.t)));
        }
        let mut labels = vec![1.0; events.len()];
        labels.resize(pairs.len(), 0.0);

        let mut tape = Tape::new();
        let p = model.params().bind(&mut tape);
        let dropout = (config.dropout > 0.0).then_some(Dropout { p: config.dropout, rng: &mut *drop_rng });
        let out = model.forward_batch(&mut tape, &p, state, &q, &pairs, config.k_neighbors, dropout)?;
        let loss = tape.bce(out.logits.expect("non-empty batch"), &labels, ScoreKind::Logits)?;
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(Error::Numeric(format!("training loss became {value}")));
        }
        let grads = tape.backward(loss)?;
        let g = p.collect(model.params(), &grads);
        adam.step(model.params_mut(), &g)?;
        if !model.params().all_finite() {
            return Err(Error::Numeric("parameters became non-finite after an update".into()));
        }
        model.commit_batch(state, &tape, &out, &commits)?;
        state.set_cursor(batch.last().map_or(0, |&i| i + 1));
        total += value;
    }
    state.set_cursor(plan.train.end);
    Ok(total / batches.len().max(1) as f64)
}

/// Replays the training range (as seen in training) and then every
/// validation event, leaving the state at the start of the test range.
pub fn warm_state(model: &Mpfa, stream: &EventStream, plan: &SplitPlan, config: &TrainConfig) -> Result<TemporalState> {
    let mut state = model.new_state(stream.num_nodes());
    let mut scorer = MpfaScorer { model, state: &mut state, k: config.k_neighbors };
    warm_up(&mut scorer, stream, &plan.train_indices(stream), config.batch_size, plan.train.end)?;
    let val: Vec<usize> = plan.val.clone().collect();
    warm_up(&mut scorer, stream, &val, config.batch_size, plan.val.end)?;
    Ok(state)
}

/// Seed of the evaluation negatives for a range, shared by every scorer of a run.
pub fn eval_negative_seed(config: &TrainConfig, range_name: &str) -> u64 {
    sub_seed(config.evaluation_seed(), &format!("negatives/{range_name}"))
}

/// Trains on the plan's training range with early stopping on validation AP,
/// restores the best parameters and reports test metrics after a warm replay.
pub fn train(stream: &EventStream, plan: &SplitPlan, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if plan.val.is_empty() || plan.test.is_empty() {
        return Err(Error::Configuration("training needs non-empty validation and test ranges".into()));
    }
    let dims = config.dims(stream.edge_feat_dim())?;
    let mut model = Mpfa::new(dims, config.variant.ablation(), sub_seed(config.seed, "init"))?;
    let mut adam = Adam::new(AdamConfig { lr: config.lr, ..AdamConfig::default() }, model.params());
    let mut neg_rng = ChaCha8Rng::seed_from_u64(sub_seed(config.seed, "negatives/train"));
    let mut drop_rng = ChaCha8Rng::seed_from_u64(sub_seed(config.seed, "dropout"));
    let val_seed = eval_negative_seed(config, "val");

    let mut epochs = Vec::new();
    let mut best: Option<(f64, usize, crate::tensor::ParamStore)> = None;
    let mut stale = 0;
    for epoch in 0..config.epochs {
        let mut state = model.new_state(stream.num_nodes());
        let train_loss = train_epoch(&mut model, &mut adam, &mut state, stream, plan, config, &mut neg_rng, &mut drop_rng)?;
        let mut scorer = MpfaScorer { model: &model, state: &mut state, k: config.k_neighbors };
        let val = evaluate_linkpred(&mut scorer, stream, plan, plan.val.clone(), config.batch_size, val_seed)?;
        epochs.push(EpochRecord { epoch, train_loss, val });
        if best.as_ref().is_none_or(|b| val.ap > b.0) {
            best = Some((val.ap, epoch, model.params().clone()));
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    let (_, best_epoch, params) = best.expect("at least one epoch");
    *model.params_mut() = params;

    let mut state = warm_state(&model, stream, plan, config)?;
    let warm = state.snapshot();
    let test_seed = eval_negative_seed(config, "test");
    let mut scorer = MpfaScorer { model: &model, state: &mut state, k: config.k_neighbors };
    let test = evaluate_linkpred(&mut scorer, stream, plan, plan.test.clone(), config.batch_size, test_seed)?;

    let mut report = EvalReport::new("mpfa", plan.mode, config.seed, test, serde_json::to_value(config)?);
    report.val = Some(epochs[best_epoch].val);
    report.best_epoch = Some(best_epoch);
    report.epochs = epochs;
    Ok(TrainOutcome { model, warm_state: warm, final_state: state, report })
}

/// Test-range metrics of any scorer that has been warmed up to the test range.
pub fn evaluate_test<S: LinkScorer + ?Sized>(
    scorer: &mut S,
    stream: &EventStream,
    plan: &SplitPlan,
    config: &TrainConfig,
) -> Result<Metrics> {
    evaluate_linkpred(
        scorer,
        stream,
        plan,
        plan.test.clone(),
        config.batch_size,
        eval_negative_seed(config, "test"),
    )
}
