use super::*;
use crate::baselines::{run_baseline, Baseline, RandomScorer};
use crate::events::{synth_recurrent, Event, NegativeEdge, SYNTH_FEAT_DIM};

fn small(seed: u64) -> TrainConfig {
    TrainConfig {
        batch_size: 100,
        lr: 3e-3,
        epochs: 2,
        dropout: 0.0,
        k_neighbors: 5,
        embed_dim: 8,
        memory_dim: 8,
        time_dim: 4,
        seed,
        ..TrainConfig::default()
    }
}

fn stream(seed: u64) -> EventStream {
    synth_recurrent(30, 1500, 0.9, 0.1, seed).unwrap()
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let s = stream(1);
    let c = TrainConfig { lr: 0.0, epochs: 3, patience: 10, ..small(1) };
    let plan = c.plan(&s).unwrap();
    let init = Mpfa::new(c.dims(s.edge_feat_dim()).unwrap(), c.variant.ablation(), sub_seed(c.seed, "init")).unwrap();
    let out = train(&s, &plan, &c).unwrap();
    assert_eq!(out.model.params().fingerprint(), init.params().fingerprint());
    let losses: Vec<f64> = out.report.epochs.iter().map(|e| e.train_loss).collect();
    // Only the sampled negatives differ between epochs.
    for l in &losses {
        assert!((l - losses[0]).abs() < 0.01, "{losses:?}");
    }
}

#[test]
fn identical_seeds_give_identical_reports() {
    let s = stream(2);
    let c = TrainConfig { dropout: 0.1, ..small(2) };
    let plan = c.plan(&s).unwrap();
    let a = train(&s, &plan, &c).unwrap();
    let b = train(&s, &plan, &c).unwrap();
    assert_eq!(a.report.to_json().unwrap(), b.report.to_json().unwrap());
    assert_eq!(a.model.params().fingerprint(), b.model.params().fingerprint());
    let other = train(&s, &plan, &TrainConfig { seed: 3, ..c }).unwrap();
    assert_ne!(a.report.run_id, other.report.run_id);
}

#[test]
fn first_epoch_beats_random_scores() {
    let s = stream(4);
    let c = TrainConfig { epochs: 1, ..small(4) };
    let plan = c.plan(&s).unwrap();
    let out = train(&s, &plan, &c).unwrap();
    let val_ap = out.report.epochs[0].val.ap;

    let mut r = RandomScorer::new(4);
    warm_up(&mut r, &s, &plan.train_indices(&s), c.batch_size, plan.train.end).unwrap();
    let random = evaluate_linkpred(&mut r, &s, &plan, plan.val.clone(), c.batch_size, eval_negative_seed(&c, "val"))
        .unwrap();
    assert!(val_ap > 0.5 && val_ap > random.ap, "model {val_ap}, random {}", random.ap);
}

#[test]
fn median_loss_decreases_over_epochs() {
    let mut first = Vec::new();
    let mut third = Vec::new();
    for seed in 0..5 {
        let s = stream(10 + seed);
        let c = TrainConfig { epochs: 3, patience: 10, ..small(seed) };
        let out = train(&s, &c.plan(&s).unwrap(), &c).unwrap();
        first.push(out.report.epochs[0].train_loss);
        third.push(out.report.epochs[2].train_loss);
    }
    let median = |v: &mut Vec<f64>| {
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    };
    assert!(median(&mut third) < median(&mut first), "{first:?} {third:?}");
}

#[test]
fn evaluation_does_not_touch_parameters() {
    let s = stream(5);
    let c = small(5);
    let plan = c.plan(&s).unwrap();
    let out = train(&s, &plan, &c).unwrap();
    let before = out.model.params().fingerprint();
    let mut state = out.warm_state.state().clone();
    let mut scorer = MpfaScorer { model: &out.model, state: &mut state, k: c.k_neighbors };
    evaluate_test(&mut scorer, &s, &plan, &c).unwrap();
    assert_eq!(out.model.params().fingerprint(), before);
}

#[test]
fn evaluation_from_a_snapshot_is_repeatable() {
    let s = stream(6);
    let c = small(6);
    let plan = c.plan(&s).unwrap();
    let out = train(&s, &plan, &c).unwrap();
    let run = || {
        let mut state = out.warm_state.state().clone();
        let mut scorer = MpfaScorer { model: &out.model, state: &mut state, k: c.k_neighbors };
        evaluate_test(&mut scorer, &s, &plan, &c).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a, b);
    assert_eq!(a, out.report.test);

    // A fresh warm replay reproduces the snapshot's result too.
    let mut state = warm_state(&out.model, &s, &plan, &c).unwrap();
    let mut scorer = MpfaScorer { model: &out.model, state: &mut state, k: c.k_neighbors };
    assert_eq!(evaluate_test(&mut scorer, &s, &plan, &c).unwrap(), a);
}

#[test]
fn evaluation_requires_the_state_at_range_start() {
    let s = stream(7);
    let c = small(7);
    let plan = c.plan(&s).unwrap();
    let model = Mpfa::new(c.dims(s.edge_feat_dim()).unwrap(), c.variant.ablation(), 0).unwrap();
    let mut state = model.new_state(s.num_nodes());
    let mut scorer = MpfaScorer { model: &model, state: &mut state, k: c.k_neighbors };
    let err = evaluate_test(&mut scorer, &s, &plan, &c).unwrap_err();
    assert!(matches!(err, Error::Protocol(_)), "{err}");
}

/// Records every scored positive; scores are irrelevant.
struct Recorder {
    scored: Vec<usize>,
    cursor: usize,
}

impl LinkScorer for Recorder {
    fn score_and_observe(
        &mut self,
        _stream: &EventStream,
        positives: &[usize],
        negatives: &[NegativeEdge],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        self.scored.extend_from_slice(positives);
        let pos = positives.iter().map(|&i| (i % 7) as f64 / 7.0).collect();
        Ok((pos, vec![0.5; negatives.len()]))
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

#[test]
fn inductive_evaluation_scores_only_masked_events() {
    let s = stream(8);
    let c = TrainConfig { mode: SplitMode::Inductive, mask_fraction: 0.2, ..small(8) };
    let plan = c.plan(&s).unwrap();
    assert!(!plan.masked_nodes.is_empty());
    for i in plan.train_indices(&s) {
        assert!(!plan.touches_masked(s.get(i)));
    }
    let mut rec = Recorder { scored: Vec::new(), cursor: plan.test.start };
    let m = evaluate_test(&mut rec, &s, &plan, &c).unwrap();
    // Every event is observed, but only the masked ones count.
    assert_eq!(rec.scored, plan.test.clone().collect::<Vec<_>>());
    let expected: Vec<usize> = plan.test.clone().filter(|&i| plan.touches_masked(s.get(i))).collect();
    assert_eq!(m.count, 2 * expected.len());
    assert!(expected.len() < plan.test.len());
}

#[test]
fn embeddings_ignore_later_events() {
    let s = stream(9);
    let c = small(9);
    let model = Mpfa::new(c.dims(s.edge_feat_dim()).unwrap(), c.variant.ablation(), 9).unwrap();
    let full = replay_embeddings(&model, &s, c.k_neighbors, 64).unwrap();
    let cut = s.get(777).t;
    let kept: Vec<usize> = (0..s.len()).filter(|&i| s.get(i).t < cut).collect();
    let truncated = replay_embeddings(&model, &s.subset(kept.iter().copied()), c.k_neighbors, 64).unwrap();
    for (pos, &i) in kept.iter().enumerate() {
        let (a, b) = (&full[i], &truncated[pos]);
        assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()), "event {i}");
    }
}

#[test]
fn ablation_table_covers_every_variant() {
    let s = stream(11);
    let c = TrainConfig { epochs: 1, ..small(11) };
    let plan = c.plan(&s).unwrap();
    let rows = run_ablations(&s, std::slice::from_ref(&plan), &c).unwrap();
    assert_eq!(rows.len(), 5);
    let names: Vec<&str> = rows.iter().map(|r| r.variant.name()).collect();
    assert_eq!(names, ["full", "wo_rp", "wo_ep", "wo_red", "wo_ed"]);

    let frozen = train(&s, &plan, &TrainConfig { variant: Variant::WoEd, ..c.clone() }).unwrap();
    let st = &frozen.final_state;
    assert!((0..st.num_nodes()).all(|i| st.node(i).updates == 0 && st.node(i).h.iter().all(|&x| x == 0.0)));
    let full = train(&s, &plan, &c).unwrap();
    assert!((0..s.num_nodes()).any(|i| full.final_state.node(i).updates > 0));
}

#[test]
fn sweeps_emit_one_row_per_value() {
    let s = stream(12);
    let c = TrainConfig { epochs: 1, ..small(12) };
    let plan = c.plan(&s).unwrap();
    let rows = sweep(&s, &plan, &c, SweepParam::BatchSize, &[100.0, 200.0, 300.0, 400.0]).unwrap();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.param == SweepParam::BatchSize));

    let single = sweep_neighbors(&s, &plan, &c, &[5]).unwrap();
    assert_eq!(single.len(), 1);
    assert_eq!(single[0].test, train(&s, &plan, &c).unwrap().report.test);
    assert!(SweepParam::K.apply(&c, 2.5).is_err());
}

#[test]
fn repeat_summary_statistics() {
    let s = stream(13);
    let c = small(13);
    let plan = c.plan(&s).unwrap();
    let summary = repeat_runs(&c, 3, |cfg| run_baseline(Baseline::EdgeBank, &s, &plan, cfg, None)).unwrap();
    assert_eq!(summary.reports.len(), 3);
    assert_eq!(summary.std.ap, 0.0);
    assert_eq!(summary.std.auc, 0.0);
    let seeds: Vec<u64> = summary.reports.iter().map(|r| r.seed).collect();
    assert_eq!(seeds, [13, 14, 15]);

    let mut reports = summary.reports.clone();
    reports[0].test.ap = 0.2;
    reports[1].test.ap = 0.4;
    reports[2].test.ap = 0.9;
    let s2 = RepeatSummary::from_reports(reports).unwrap();
    assert!((s2.mean.ap - 0.5).abs() < 1e-12);
    // Population standard deviation of {0.2, 0.4, 0.9}.
    let var = (0.09 + 0.01 + 0.16) / 3.0;
    assert!((s2.std.ap - f64::sqrt(var)).abs() < 1e-12);
}

fn labeled(seed: u64, labels: impl Fn(usize, &Event) -> u8) -> EventStream {
    let base = stream(seed);
    let events = base
        .events()
        .iter()
        .enumerate()
        .map(|(i, e)| Event { state_label: Some(labels(i, e)), ..e.clone() })
        .collect();
    EventStream::new(events, base.num_nodes(), base.edge_feat_dim()).unwrap()
}

#[test]
fn node_classification_checks() {
    let c = small(14);
    let clf = ClassifierConfig::default();
    let model = Mpfa::new(c.dims(SYNTH_FEAT_DIM).unwrap(), c.variant.ablation(), 14).unwrap();

    let plain = stream(14);
    let plan = c.plan(&plain).unwrap();
    let err = node_classification(&model, &plain, &plan, &c, &clf, ClassifierInput::Embeddings).unwrap_err();
    assert!(matches!(err, Error::Configuration(_)), "{err}");

    let zeros = labeled(14, |_, _| 0);
    let err = node_classification(&model, &zeros, &plan, &c, &clf, ClassifierInput::Embeddings).unwrap_err();
    assert!(matches!(err, Error::UndefinedMetric(_)), "{err}");

    let parity = labeled(14, |_, e| (e.src % 2) as u8);
    let r = node_classification(&model, &parity, &plan, &c, &clf, ClassifierInput::OracleLabels).unwrap();
    assert_eq!(r.test.auc, 1.0);

    // Labels drawn independently of the stream.
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let noise: Vec<u8> = (0..parity.len()).map(|_| rand::Rng::random_range(&mut rng, 0..2)).collect();
    let shuffled = labeled(14, |i, _| noise[i]);
    let r = node_classification(&model, &shuffled, &plan, &c, &clf, ClassifierInput::Embeddings).unwrap();
    assert!((r.test.auc - 0.5).abs() <= 0.03, "{:?}", r.test);
}
