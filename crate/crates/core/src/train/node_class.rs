//! Dynamic node classification: a small classifier over the source
//! embeddings a frozen model produces while replaying the stream.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::Metrics;
use super::{sub_seed, EvalReport, TrainConfig};
use crate::error::{Error, Result};
use crate::events::{make_batches, Event, EventStream, SplitPlan};
use crate::model::{Mpfa, QuerySet};
use crate::tensor::{Adam, AdamConfig, ParamStore, ScoreKind, Tape, Tensor};

/// Features the classifier sees.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierInput {
    /// Source embedding computed just before each event.
    Embeddings,
    /// The label itself as a single ±1 feature; a sanity hook that must give AUC 1.
    OracleLabels,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig { hidden: 80, epochs: 10, lr: 1e-3, batch_size: 200, seed: 0 }
    }
}

/// Source embedding of every event, computed against the state just before
/// the event's batch and then observed, replaying the whole stream.
pub fn replay_embeddings(model: &Mpfa, stream: &EventStream, k: usize, batch_size: usize) -> Result<Vec<Vec<f64>>> {
    let mut state = model.new_state(stream.num_nodes());
    let all: Vec<usize> = (0..stream.len()).collect();
    let mut z = Vec::with_capacity(stream.len());
    for batch in make_batches(&all, batch_size)? {
        let mut q = QuerySet::new();
        let mut commits: Vec<(&Event, usize, usize)> = Vec::with_capacity(batch.len());
        for &i in &batch {
            let e = stream.get(i);
            commits.push((e, q.add(e.src, e.t), q.add(e.dst, e.t)));
        }
        let mut tape = Tape::new();
        let p = model.params().bind(&mut tape);
        let out = model.forward_batch(&mut tape, &p, &state, &q, &[], k, None)?;
        z.extend(commits.iter().map(|c| out.embedding(&tape, c.1).to_vec()));
        model.commit_batch(&mut state, &tape, &out, &commits)?;
    }
    Ok(z)
}

/// Two-layer perceptron with one logit output.
struct Classifier {
    params: ParamStore,
}

impl Classifier {
    fn new(input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut params = ParamStore::new();
        params.insert("w1", Tensor::uniform_init(input, hidden, rng))?;
        params.insert("b1", Tensor::zeros(&[hidden]))?;
        params.insert("w2", Tensor::uniform_init(hidden, 1, rng))?;
        params.insert("b2", Tensor::zeros(&[1]))?;
        Ok(Classifier { params })
    }

    fn logits(&self, tape: &mut Tape, x: &[&[f64]]) -> Result<(crate::tensor::BoundParams, crate::tensor::Var)> {
        let p = self.params.bind(tape);
        let id = |n: &str| self.params.id(n).expect("classifier parameter");
        let cols = x.first().map_or(0, |r| r.len());
        let data: Vec<f64> = x.iter().flat_map(|r| r.iter().copied()).collect();
        let xv = tape.constant(Tensor::matrix(x.len(), cols, data)?);
        let h = tape.linear(xv, p.var(id("w1")), p.var(id("b1")))?;
        let h = tape.relu(h);
        let out = tape.linear(h, p.var(id("w2")), p.var(id("b2")))?;
        Ok((p, out))
    }

    fn probabilities(&self, x: &[&[f64]]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let (_, out) = self.logits(&mut tape, x)?;
        Ok(tape.value(out).data().iter().map(|&s| 1.0 / (1.0 + (-s).exp())).collect())
    }
}

/// Trains a classifier on the labeled training-range events and reports
/// metrics on the test range. Only AUC is meaningful for the usually very
/// imbalanced state labels; AP and ACC are reported alongside.
pub fn node_classification(
    model: &Mpfa,
    stream: &EventStream,
    plan: &SplitPlan,
    config: &TrainConfig,
    classifier: &ClassifierConfig,
    input: ClassifierInput,
) -> Result<EvalReport> {
    if !stream.is_labeled() {
        return Err(Error::Configuration("node classification needs a dataset with state labels".into()));
    }
    if classifier.hidden == 0 || classifier.epochs == 0 || classifier.batch_size == 0 {
        return Err(Error::Configuration("classifier hidden, epochs and batch_size must be positive".into()));
    }
    let label = |i: usize| stream.get(i).state_label.unwrap_or(0);
    let features: Vec<Vec<f64>> = match input {
        ClassifierInput::Embeddings => replay_embeddings(model, stream, config.k_neighbors, config.batch_size)?,
        ClassifierInput::OracleLabels => (0..stream.len()).map(|i| vec![2.0 * label(i) as f64 - 1.0]).collect(),
    };

    let train_idx = plan.train_indices(stream);
    let positives = train_idx.iter().filter(|&&i| label(i) == 1).count();
    if positives == 0 || positives == train_idx.len() {
        return Err(Error::UndefinedMetric(format!(
            "training range has {positives} positive labels out of {}; the classifier needs both classes",
            train_idx.len()
        )));
    }

    let seed = sub_seed(config.seed, &format!("classifier/{}", classifier.seed));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut clf = Classifier::new(features[0].len(), classifier.hidden, &mut rng)?;
    let mut adam = Adam::new(AdamConfig { lr: classifier.lr, ..AdamConfig::default() }, &clf.params);
    let mut order = train_idx.clone();
    for _ in 0..classifier.epochs {
        order.shuffle(&mut rng);
        for batch in make_batches(&order, classifier.batch_size)? {
            let x: Vec<&[f64]> = batch.iter().map(|&i| features[i].as_slice()).collect();
            let y: Vec<f64> = batch.iter().map(|&i| label(i) as f64).collect();
            let mut tape = Tape::new();
            let (p, out) = clf.logits(&mut tape, &x)?;
            let loss = tape.bce(out, &y, ScoreKind::Logits)?;
            if !tape.value(loss).item().is_finite() {
                return Err(Error::Numeric("classifier loss is not finite".into()));
            }
            let grads = tape.backward(loss)?;
            let g = p.collect(&clf.params, &grads);
            adam.step(&mut clf.params, &g)?;
        }
    }

    let test_idx: Vec<usize> = plan.test.clone().collect();
    let x: Vec<&[f64]> = test_idx.iter().map(|&i| features[i].as_slice()).collect();
    let scores = clf.probabilities(&x)?;
    let labels: Vec<u8> = test_idx.iter().map(|&i| label(i)).collect();
    let test = Metrics::compute(&scores, &labels)?;
    let echo = serde_json::json!({ "train": config, "classifier": classifier, "input": input });
    Ok(EvalReport::new("mpfa-node-classifier", plan.mode, config.seed, test, echo))
}
