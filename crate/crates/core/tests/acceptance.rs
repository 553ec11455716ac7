//! Acceptance checks. Each test prints one `PASS`/`FAIL` line; run with
//! `cargo test -p mpfa-core --test acceptance -- --nocapture --test-threads 1`
//! to see them in order.
//!
//! The MOOC check only runs when `MPFA_MOOC_CSV` names a Jodie-format file and
//! never fails the suite.

use std::collections::HashMap;
use std::rc::Rc;
use std::sync::Mutex;
use std::time::Instant;

use mpfa_core::baselines::{run_baseline, Baseline};
use mpfa_core::checkpoint::Checkpoint;
use mpfa_core::events::{load_csv, synth_recurrent, CsvSchema, Event, EventStream};
use mpfa_core::model::{Ablation, ModelDims, Mpfa, NeighborInput, QuerySet, Variant, NUM_HEADS};
use mpfa_core::state::TemporalState;
use mpfa_core::tensor::{grad_check, BoundParams, GruCell, ParamStore, ScoreKind, Segments, Tape, Tensor, Var};
use mpfa_core::train::{attention_trace, metric_ap, metric_auc, replay_embeddings, train, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(name: &str, pass: bool, detail: &str) {
    println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
}

// ---------------------------------------------------------------------------
// Gradient integrity

const GRAD_TOL: f64 = 1e-4;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
}

/// Fixed random linear functional of `v`, so every output element matters.
fn project(tape: &mut Tape, v: Var, seed: u64) -> Var {
    let shape = tape.value(v).shape().to_vec();
    let w = rand_tensor(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed), &shape);
    let w = tape.constant(w);
    let p = tape.mul(v, w).unwrap();
    tape.sum(p)
}

type OpFn = Box<dyn Fn(&mut Tape, &[Var]) -> Var>;

fn op_cases() -> Vec<(&'static str, Vec<Vec<usize>>, OpFn)> {
    let seg = Rc::new(Segments::from_lengths([2, 0, 3]));
    let (s1, s2, s3) = (seg.clone(), seg.clone(), seg);
    vec![
        ("matmul", vec![vec![3, 4], vec![4, 2]], Box::new(|t, v| t.matmul(v[0], v[1]).unwrap())),
        ("linear", vec![vec![3, 4], vec![4, 2], vec![2]], Box::new(|t, v| t.linear(v[0], v[1], v[2]).unwrap())),
        ("add", vec![vec![2, 3], vec![2, 3]], Box::new(|t, v| t.add(v[0], v[1]).unwrap())),
        ("sub", vec![vec![2, 3], vec![2, 3]], Box::new(|t, v| t.sub(v[0], v[1]).unwrap())),
        ("mul", vec![vec![2, 3], vec![2, 3]], Box::new(|t, v| t.mul(v[0], v[1]).unwrap())),
        ("add_bias", vec![vec![4, 3], vec![3]], Box::new(|t, v| t.add_bias(v[0], v[1]).unwrap())),
        ("scale", vec![vec![2, 3]], Box::new(|t, v| t.scale(v[0], -1.7))),
        ("mul_rows", vec![vec![3, 2]], Box::new(|t, v| t.mul_rows(v[0], vec![1.0, 0.0, -2.5]).unwrap())),
        ("concat", vec![vec![2, 3], vec![2, 1], vec![2, 2]], Box::new(|t, v| t.concat(v).unwrap())),
        ("sigmoid", vec![vec![3, 5]], Box::new(|t, v| t.sigmoid(v[0]))),
        ("tanh", vec![vec![3, 5]], Box::new(|t, v| t.tanh(v[0]))),
        ("relu", vec![vec![3, 5]], Box::new(|t, v| t.relu(v[0]))),
        ("softmax_rows", vec![vec![3, 4]], Box::new(|t, v| t.softmax(v[0], 1).unwrap())),
        ("softmax_cols", vec![vec![3, 4]], Box::new(|t, v| t.softmax(v[0], 0).unwrap())),
        ("gather_rows", vec![vec![4, 3]], Box::new(|t, v| t.gather_rows(v[0], vec![2, 0, 2, 3]).unwrap())),
        ("scatter_rows", vec![vec![4, 3], vec![2, 3]], Box::new(|t, v| t.scatter_rows(v[0], v[1], vec![3, 1]).unwrap())),
        (
            "segment_dot",
            vec![vec![3, 4], vec![5, 4]],
            Box::new(move |t, v| t.segment_dot(v[0], v[1], s1.clone(), 2, 0.5).unwrap()),
        ),
        ("segment_softmax", vec![vec![5, 2]], Box::new(move |t, v| t.segment_softmax(v[0], s2.clone()).unwrap())),
        (
            "segment_weighted_sum",
            vec![vec![5, 2], vec![5, 4]],
            Box::new(move |t, v| t.segment_weighted_sum(v[0], v[1], s3.clone(), 2).unwrap()),
        ),
        (
            "dropout",
            vec![vec![3, 4]],
            Box::new(|t, v| t.dropout(v[0], 0.3, true, &mut ChaCha8Rng::seed_from_u64(77)).unwrap()),
        ),
        ("sum", vec![vec![2, 2]], Box::new(|t, v| t.sum(v[0]))),
    ]
}

fn op_errors() -> Vec<(String, f64)> {
    let mut out = Vec::new();
    for (name, shapes, f) in op_cases() {
        let mut worst: f64 = 0.0;
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed * 7919 + 1);
            let inputs: Vec<Tensor> = shapes.iter().map(|s| rand_tensor(&mut rng, s)).collect();
            let err = grad_check(
                |tape, vars| {
                    let y = f(tape, vars);
                    Ok(project(tape, y, seed))
                },
                &inputs,
            )
            .unwrap();
            worst = worst.max(err);
        }
        out.push((name.to_string(), worst));
    }

    let mut worst: f64 = 0.0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let logits = rand_tensor(&mut rng, &[6]);
        let probs = Tensor::vector((0..6).map(|_| rng.random_range(0.05..0.95)).collect());
        let labels: Vec<f64> = (0..6).map(|i| (i % 2) as f64).collect();
        worst = worst.max(grad_check(|t, v| t.bce(v[0], &labels, ScoreKind::Logits), &[logits]).unwrap());
        worst = worst.max(grad_check(|t, v| t.bce(v[0], &labels, ScoreKind::Probabilities), &[probs]).unwrap());
    }
    out.push(("bce".into(), worst));

    let mut worst: f64 = 0.0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
        let mut store = ParamStore::new();
        let cell = GruCell::register(&mut store, "gru", 3, 4, &mut rng).unwrap();
        let mut inputs: Vec<Tensor> = store.iter().map(|p| p.value.clone()).collect();
        for t in inputs.iter_mut().filter(|t| t.rank() == 1) {
            t.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
        }
        inputs.push(rand_tensor(&mut rng, &[2, 3]));
        inputs.push(rand_tensor(&mut rng, &[2, 4]));
        let n = store.len();
        let err = grad_check(
            |tape, vars| {
                let bound = BoundParams::from_vars(vars[..n].to_vec());
                let h = cell.step(tape, &bound, vars[n], vars[n + 1])?;
                Ok(project(tape, h, seed))
            },
            &inputs,
        )
        .unwrap();
        worst = worst.max(err);
    }
    out.push(("gru_step".into(), worst));
    out
}

fn randv(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Small model with random biases. Attention and feedback maps are sharpened
/// so their gradients sit well above finite-difference resolution.
fn toy_model(seed: u64) -> Mpfa {
    let mut m = Mpfa::new(ModelDims::new(6, 4, 3, 2).unwrap(), Ablation::default(), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb1a5);
    for p in m.params_mut().iter_mut() {
        let bias = p.name.ends_with(".b") || p.name.contains(".b_");
        let f = if ["att.q", "att.k", "growth", "feedback"].iter().any(|x| p.name.starts_with(x)) { 3.0 } else { 1.5 };
        for v in p.value.data_mut() {
            *v = if bias { rng.random_range(-0.3..0.3) } else { *v * f };
        }
    }
    m
}

/// Five events on four nodes.
fn toy_events() -> Vec<Event> {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    [(0, 1), (2, 1), (0, 3), (1, 0), (2, 3)]
        .iter()
        .enumerate()
        .map(|(k, &(s, d))| Event::new(s, d, 1e5 * (1.0 + k as f64 + rng.random_range(0.0..0.5)), randv(&mut rng, 2)))
        .collect()
}

fn replay(m: &Mpfa, state: &mut TemporalState, events: &[Event], batch: usize, k: usize) {
    for chunk in events.chunks(batch) {
        let mut q = QuerySet::new();
        let rows: Vec<(usize, usize)> = chunk.iter().map(|e| (q.add(e.src, e.t), q.add(e.dst, e.t))).collect();
        let mut tape = Tape::new();
        let bound = m.params().bind(&mut tape);
        let out = m.forward_batch(&mut tape, &bound, state, &q, &rows, k, None).unwrap();
        let commits: Vec<_> = chunk.iter().zip(&rows).map(|(e, &(a, b))| (e, a, b)).collect();
        m.commit_batch(state, &tape, &out, &commits).unwrap();
    }
}

/// Training loss on the last two toy events (one negative each), given the
/// state after the first three.
fn toy_loss(m: &Mpfa, state: &TemporalState, tape: &mut Tape, bound: &BoundParams) -> mpfa_core::Result<Var> {
    let events = toy_events();
    let mut q = QuerySet::new();
    let (mut pairs, mut labels) = (Vec::new(), Vec::new());
    for e in &events[3..] {
        let s = q.add(e.src, e.t);
        pairs.push((s, q.add(e.dst, e.t)));
        labels.push(1.0);
        pairs.push((s, q.add((e.dst + 2) % 4, e.t)));
        labels.push(0.0);
    }
    let out = m.forward_batch(tape, bound, state, &q, &pairs, 10, None)?;
    tape.bce(out.logits.unwrap(), &labels, ScoreKind::Logits)
}

fn whole_model_error(seed: u64) -> f64 {
    let m = toy_model(seed);
    let mut state = m.new_state(4);
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 5);
    for n in 0..4 {
        state.apply_memory(n, randv(&mut rng, 4), 0.0).unwrap();
    }
    replay(&m, &mut state, &toy_events()[..3], 3, 10);
    let inputs: Vec<Tensor> = m.params().iter().map(|p| p.value.clone()).collect();
    grad_check(|tape, vars| toy_loss(&m, &state, tape, &BoundParams::from_vars(vars.to_vec())), &inputs).unwrap()
}

#[test]
fn gradient_integrity() {
    let t0 = Instant::now();
    let mut all = op_errors();
    all.push(("whole_model".into(), whole_model_error(32)));
    let secs = t0.elapsed().as_secs_f64();
    let (worst_name, worst) = all.iter().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap().clone();
    let failing: Vec<&str> = all.iter().filter(|(_, e)| *e >= GRAD_TOL).map(|(n, _)| n.as_str()).collect();
    let pass = failing.is_empty() && secs < 60.0;
    report(
        "gradient integrity",
        pass,
        &format!("{} checks, max rel err {worst:.2e} ({worst_name}), failing {failing:?}, {secs:.1}s", all.len()),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// Normalization

#[test]
fn normalization_invariants() {
    let m = toy_model(15);
    let d = *m.dims();
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let mut worst: f64 = 0.0;
    let mut positive = true;
    for _ in 0..10_000 {
        let n = rng.random_range(1..12);
        let scale = rng.random_range(0.1..8.0);
        let h: Vec<f64> = randv(&mut rng, d.memory).iter().map(|v| v * scale).collect();
        let nbrs: Vec<NeighborInput> = (0..n)
            .map(|_| NeighborInput {
                h: randv(&mut rng, d.memory).iter().map(|v| v * scale).collect(),
                edge_feat: randv(&mut rng, d.edge),
                dt: rng.random_range(0.0..1e4),
                raw_input: randv(&mut rng, d.interaction_width()),
            })
            .collect();
        let (_, w) = m.evolving_attention(&h, &nbrs).unwrap();
        for head in 0..NUM_HEADS {
            worst = worst.max((w.iter().map(|r| r[head]).sum::<f64>() - 1.0).abs());
            positive &= w.iter().all(|r| r[head] > 0.0);
        }
        let a = m.feedback_coefficients(&h, &nbrs).unwrap();
        worst = worst.max((a.iter().sum::<f64>() - 1.0).abs());
        positive &= a.iter().all(|&v| v > 0.0);
    }
    let pass = worst <= 1e-6 && positive;
    report(
        "normalization",
        pass,
        &format!("10000 passes, max |sum - 1| = {worst:.2e}, all positive: {positive}"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// Metric oracles

/// Per-item midrank definition, computed by brute force: a positive's rank
/// and the positives at or above it each count half of their tie group.
fn oracle_ap(scores: &[f64], labels: &[u8]) -> f64 {
    let mut total = 0.0;
    let mut npos = 0;
    for (i, &s) in scores.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        npos += 1;
        let (mut above, mut above_pos, mut tied, mut tied_pos) = (0.0, 0.0, 0.0, 0.0);
        for (j, &o) in scores.iter().enumerate() {
            let p = labels[j] as f64;
            if o > s {
                above += 1.0;
                above_pos += p;
            } else if o == s {
                tied += 1.0;
                tied_pos += p;
            }
        }
        total += (above_pos + (tied_pos + 1.0) / 2.0) / (above + (tied + 1.0) / 2.0);
    }
    total / npos as f64
}

/// Fraction of (positive, negative) pairs ordered correctly, ties half.
fn oracle_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (_, &a) in scores.iter().enumerate().filter(|(i, _)| labels[*i] == 1) {
        for (j, &b) in scores.iter().enumerate() {
            if labels[j] == 0 {
                pairs += 1.0;
                wins += if a > b { 1.0 } else if a == b { 0.5 } else { 0.0 };
            }
        }
    }
    wins / pairs
}

#[test]
fn metric_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut worst_ap, mut worst_auc) = (0.0f64, 0.0f64);
    for inst in 0..1000 {
        let n = rng.random_range(2..60);
        // Coarse scores in half the instances force ties.
        let levels = if inst % 2 == 0 { 5 } else { 1_000_000 };
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 / levels as f64).collect();
        let mut labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        labels[0] = 1;
        labels[1] = 0;
        worst_ap = worst_ap.max((metric_ap(&scores, &labels).unwrap() - oracle_ap(&scores, &labels)).abs());
        worst_auc = worst_auc.max((metric_auc(&scores, &labels).unwrap() - oracle_auc(&scores, &labels)).abs());
    }
    let example = metric_ap(&[0.9, 0.8, 0.3], &[1, 0, 1]).unwrap();
    // Precision 1/1 at the first positive and 2/3 at the second.
    let expected = (1.0 + 2.0 / 3.0) / 2.0;
    let pass = worst_ap <= 1e-9 && worst_auc <= 1e-9 && (example - expected).abs() <= 1e-12;
    report(
        "metric oracles",
        pass,
        &format!("1000 instances, max |dAP| {worst_ap:.1e}, max |dAUC| {worst_auc:.1e}, worked example {example:.6}"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// Synthetic experiments

/// Desk-scale training setup shared by the synthetic checks.
fn desk_config(seed: u64) -> TrainConfig {
    TrainConfig {
        embed_dim: 32,
        memory_dim: 32,
        time_dim: 16,
        lr: 2e-3,
        epochs: 15,
        patience: 5,
        batch_size: 200,
        dropout: 0.1,
        k_neighbors: 10,
        seed,
        ..TrainConfig::default()
    }
}

fn desk_stream(seed: u64) -> EventStream {
    synth_recurrent(100, 10_000, 0.9, 0.1, seed).unwrap()
}

/// Test AP of the full model with k = 10 and its training time in seconds,
/// cached so that the learning, stability and ablation checks share runs.
fn full_run(seed: u64) -> (f64, f64) {
    static CACHE: Mutex<Option<HashMap<u64, (f64, f64)>>> = Mutex::new(None);
    let mut guard = CACHE.lock().unwrap_or_else(|e| e.into_inner());
    let cache = guard.get_or_insert_with(HashMap::new);
    *cache.entry(seed).or_insert_with(|| {
        let s = desk_stream(seed);
        let c = desk_config(seed);
        let t0 = Instant::now();
        let ap = train(&s, &c.plan(&s).unwrap(), &c).unwrap().report.test.ap;
        (ap, t0.elapsed().as_secs_f64())
    })
}

fn full_ap(seed: u64) -> f64 {
    full_run(seed).0
}

fn variant_ap(seed: u64, adjust: impl FnOnce(&mut TrainConfig)) -> f64 {
    let s = desk_stream(seed);
    let mut c = desk_config(seed);
    adjust(&mut c);
    train(&s, &c.plan(&s).unwrap(), &c).unwrap().report.test.ap
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn learning_signal() {
    let (mut mpfa, mut edgebank, mut random_auc) = (Vec::new(), Vec::new(), Vec::new());
    // Model training is timed inside the shared cache, so it counts even when
    // another check ran first.
    let mut secs = 0.0;
    for seed in 0..3 {
        let t0 = Instant::now();
        let s = desk_stream(seed);
        let c = desk_config(seed);
        let plan = c.plan(&s).unwrap();
        edgebank.push(run_baseline(Baseline::EdgeBank, &s, &plan, &c, None).unwrap().test.ap);
        random_auc.push(run_baseline(Baseline::Random, &s, &plan, &c, None).unwrap().test.auc);
        secs += t0.elapsed().as_secs_f64();
        let (ap, train_secs) = full_run(seed);
        mpfa.push(ap);
        secs += train_secs;
    }
    let (m, e, r) = (mean(&mpfa), mean(&edgebank), mean(&random_auc));
    let pass = m >= 0.80 && m >= e && (0.48..=0.52).contains(&r);
    report(
        "learning signal",
        pass,
        &format!("MPFA AP {m:.4} {mpfa:.4?}, EdgeBank AP {e:.4}, random AUC {r:.4}, {secs:.0}s"),
    );
    if secs >= 300.0 {
        println!("note: learning-signal runs took {secs:.0}s, above the 5 minute budget");
    }
    assert!(pass);
}

#[test]
fn long_dependency_stability() {
    let k10: Vec<f64> = (0..3).map(full_ap).collect();
    let k3: Vec<f64> = (0..3).map(|seed| variant_ap(seed, |c| c.k_neighbors = 3)).collect();
    let gap = (mean(&k3) - mean(&k10)).abs();
    let pass = gap <= 0.02;
    report(
        "long-dependency stability",
        pass,
        &format!("AP(k=3) {:.4}, AP(k=10) {:.4}, gap {gap:.4}", mean(&k3), mean(&k10)),
    );
    assert!(pass);
}

#[test]
fn ablation_direction() {
    let full: Vec<f64> = (0..5).map(full_ap).collect();
    let frozen: Vec<f64> = (0..5).map(|seed| variant_ap(seed, |c| c.variant = Variant::WoEd)).collect();
    let pass = mean(&full) > mean(&frozen);
    report(
        "ablation direction",
        pass,
        &format!("full {:.4} {full:.4?}, without dynamic update {:.4} {frozen:.4?}", mean(&full), mean(&frozen)),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// Determinism and leakage

fn attention_dump(model: &Mpfa, s: &EventStream, k: usize) -> String {
    attention_trace(model, s, 0..200, k, 50)
        .unwrap()
        .iter()
        .map(|r| {
            format!(
                "{},{},{},{},{:x},{:x}\n",
                r.event_index,
                r.node,
                r.perspective.name(),
                r.neighbor_rank,
                r.dt.to_bits(),
                r.weight.to_bits()
            )
        })
        .collect()
}

#[test]
fn determinism() {
    let s = synth_recurrent(40, 2000, 0.9, 0.1, 7).unwrap();
    let c = TrainConfig { embed_dim: 16, memory_dim: 16, time_dim: 8, lr: 2e-3, epochs: 2, ..desk_config(7) };
    let plan = c.plan(&s).unwrap();
    let artifacts = || {
        let out = train(&s, &plan, &c).unwrap();
        let ck = Checkpoint {
            config: c.clone(),
            model: out.model.clone(),
            state: Some(out.warm_state.clone()),
            meta: serde_json::Value::Null,
        };
        (out.report.to_json().unwrap(), ck.to_json().unwrap(), attention_dump(&out.model, &s, c.k_neighbors))
    };
    let (a, b) = (artifacts(), artifacts());
    let same = [a.0 == b.0, a.1 == b.1, a.2 == b.2];
    let pass = same.iter().all(|&x| x) && !a.2.is_empty();
    report(
        "determinism",
        pass,
        &format!("report/checkpoint/attention identical: {same:?}, {} attention rows", a.2.lines().count()),
    );
    assert!(pass);
}

#[test]
fn leakage_freedom() {
    let s = synth_recurrent(40, 3000, 0.9, 0.1, 8).unwrap();
    let c = TrainConfig { embed_dim: 16, memory_dim: 16, time_dim: 8, epochs: 1, ..desk_config(8) };
    let model = train(&s, &c.plan(&s).unwrap(), &c).unwrap().model;
    let full = replay_embeddings(&model, &s, c.k_neighbors, 100).unwrap();
    let mut mismatched = 0;
    let mut compared = 0;
    for cut_at in [500, 1234, 2999] {
        let cut = s.get(cut_at).t;
        let kept: Vec<usize> = (0..s.len()).filter(|&i| s.get(i).t < cut).collect();
        let truncated = replay_embeddings(&model, &s.subset(kept.iter().copied()), c.k_neighbors, 100).unwrap();
        for (pos, &i) in kept.iter().enumerate() {
            compared += 1;
            if full[i].iter().zip(&truncated[pos]).any(|(x, y)| x.to_bits() != y.to_bits()) {
                mismatched += 1;
            }
        }
    }
    let pass = mismatched == 0 && compared > 0;
    report("leakage freedom", pass, &format!("{compared} embeddings compared bitwise, {mismatched} differ"));
    assert!(pass);
}

// ---------------------------------------------------------------------------
// Real-data anchor

#[test]
fn mooc_edgebank_anchor() {
    let Ok(path) = std::env::var("MPFA_MOOC_CSV") else {
        println!("SKIP MOOC EdgeBank anchor: MPFA_MOOC_CSV not set");
        return;
    };
    let t0 = Instant::now();
    let result = load_csv(&path, CsvSchema::Jodie).and_then(|s| {
        let c = TrainConfig::default();
        let plan = c.plan(&s)?;
        run_baseline(Baseline::EdgeBank, &s, &plan, &c, None)
    });
    match result {
        Ok(r) => {
            let ap = 100.0 * r.test.ap;
            let secs = t0.elapsed().as_secs_f64();
            report("MOOC EdgeBank anchor (non-gating)", (50.0..=60.0).contains(&ap), &format!("AP {ap:.2}, {secs:.0}s"));
        }
        Err(e) => println!("SKIP MOOC EdgeBank anchor: {e}"),
    }
}
