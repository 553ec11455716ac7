use std::time::Instant;

use mpfa_core::baselines::run_baseline;
use mpfa_core::checkpoint::Checkpoint;
use mpfa_core::events::{load_csv, synth_partners, synth_recurrent, write_csv_to, Event, EventStream};
use mpfa_core::model::Mpfa;
use mpfa_core::train::{
    attention_trace, evaluate_test, node_classification, repeat_runs, run_ablations, sub_seed, sweep, sweep_neighbors,
    train, warm_state, ClassifierInput, EvalReport, Metrics, MpfaScorer, SweepRow, TrainConfig,
};
use mpfa_core::{Error, Result};

use crate::config::{ModelKind, RunConfig, Task};
use crate::output::OutDir;
use crate::{Command, Common};

pub fn run(command: Command) -> Result<()> {
    let started = Instant::now();
    let (name, common) = match &command {
        Command::Train { common, .. } => ("train", common),
        Command::Eval { common, .. } => ("eval", common),
        Command::Ablate { common, .. } => ("ablate", common),
        Command::SweepNeighbors { common, .. } => ("sweep-neighbors", common),
        Command::Sweep { common, .. } => ("sweep", common),
        Command::Synth { common, .. } => ("synth", common),
        Command::ExportAttention { common, .. } => ("export-attention", common),
    };
    let mut rc = base_config(common)?;
    match &command {
        Command::Train { model, repeats, window, .. } => {
            set(&mut rc.model, *model);
            set(&mut rc.repeats, *repeats);
            rc.window = window.or(rc.window);
        }
        Command::Eval { checkpoint, model, task, window, .. } => {
            rc.checkpoint = checkpoint.clone().or(rc.checkpoint);
            set(&mut rc.model, *model);
            set(&mut rc.task, *task);
            rc.window = window.or(rc.window);
        }
        Command::Ablate { modes, .. } => set(&mut rc.modes, modes.clone()),
        Command::SweepNeighbors { ks, .. } => set(&mut rc.ks, ks.clone()),
        Command::Sweep { param, values, .. } => {
            set(&mut rc.sweep_param, *param);
            set(&mut rc.sweep_values, values.clone());
        }
        Command::Synth { nodes, events, recurrence_prob, noise, labels, .. } => {
            set(&mut rc.synth.nodes, *nodes);
            set(&mut rc.synth.events, *events);
            set(&mut rc.synth.recurrence_prob, *recurrence_prob);
            set(&mut rc.synth.noise, *noise);
            rc.synth.labels |= *labels;
        }
        Command::ExportAttention { checkpoint, max_events, .. } => {
            rc.checkpoint = checkpoint.clone().or(rc.checkpoint);
            rc.max_events = max_events.or(rc.max_events);
        }
    }

    // Evaluating a checkpoint continues from the configuration it was trained with.
    let checkpoint = match (&command, &rc.checkpoint) {
        (Command::Eval { .. }, Some(path)) if rc.model == ModelKind::Mpfa => Some(Checkpoint::load(path)?),
        (Command::ExportAttention { .. }, Some(path)) => Some(Checkpoint::load(path)?),
        _ => None,
    };
    if let Some(ck) = &checkpoint {
        rc.train = ck.config.clone();
        common.train.apply(&mut rc.train);
    }
    for w in rc.train.validate()? {
        eprintln!("warning: {w}");
    }

    let mut out = OutDir::create(&common.out, serde_json::to_value(&rc)?)?;
    match command {
        Command::Train { .. } => cmd_train(&rc, &mut out)?,
        Command::Eval { .. } => cmd_eval(&rc, checkpoint, &mut out)?,
        Command::Ablate { .. } => cmd_ablate(&rc, &mut out)?,
        Command::SweepNeighbors { .. } => {
            let stream = load(&rc)?;
            let plan = rc.train.plan(&stream)?;
            let rows = sweep_neighbors(&stream, &plan, &rc.train, &rc.ks)?;
            write_sweep(&mut out, "sweep_neighbors.csv", &rows)?;
        }
        Command::Sweep { .. } => {
            let stream = load(&rc)?;
            let plan = rc.train.plan(&stream)?;
            let rows = sweep(&stream, &plan, &rc.train, rc.sweep_param, &rc.sweep_values)?;
            write_sweep(&mut out, &format!("sweep_{}.csv", rc.sweep_param), &rows)?;
        }
        Command::Synth { .. } => cmd_synth(&rc, &mut out)?,
        Command::ExportAttention { .. } => cmd_export_attention(&rc, checkpoint, &mut out)?,
    }
    out.write_timing(name, started.elapsed().as_secs_f64())?;
    let manifest = out.finish()?;
    eprintln!("wrote {}", manifest.display());
    Ok(())
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn base_config(common: &Common) -> Result<RunConfig> {
    let mut rc = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    rc.data = common.data.clone().or(rc.data);
    set(&mut rc.schema, common.schema);
    common.train.apply(&mut rc.train);
    Ok(rc)
}

fn load(rc: &RunConfig) -> Result<EventStream> {
    load_csv(rc.data_path()?, rc.schema)
}

fn metrics_line(label: &str, m: &Metrics) {
    println!("{label}: ap={:.4} auc={:.4} acc={:.4} n={}", m.ap, m.auc, m.acc, m.count);
}

fn metrics_csv(m: &Metrics) -> String {
    format!("{},{},{},{}", m.ap, m.auc, m.acc, m.count)
}

fn cmd_train(rc: &RunConfig, out: &mut OutDir) -> Result<()> {
    let stream = load(rc)?;
    let repeats = rc.repeats;
    let suffix = |seed: u64| if repeats == 1 { String::new() } else { format!("_seed{seed}") };
    let summary = repeat_runs(&rc.train, repeats, |config| {
        let plan = config.plan(&stream)?;
        let report = match rc.model.baseline() {
            Some(b) => run_baseline(b, &stream, &plan, config, rc.window)?,
            None => {
                let outcome = train(&stream, &plan, config)?;
                let rows: Vec<String> = outcome
                    .report
                    .epochs
                    .iter()
                    .map(|e| format!("{},{},{}", e.epoch, e.train_loss, metrics_csv(&e.val)))
                    .collect();
                let sfx = suffix(config.seed);
                out.write_csv(&format!("loss_curve{sfx}.csv"), "epoch,train_loss,val_ap,val_auc,val_acc,val_count", &rows)?;
                let meta = serde_json::json!({ "run_config": out.run_config(), "seed": config.seed });
                let ck = Checkpoint { config: config.clone(), model: outcome.model, state: Some(outcome.warm_state), meta };
                out.write_bytes(&format!("checkpoint{sfx}.json"), ck.to_json()?.as_bytes())?;
                outcome.report
            }
        };
        out.write_json(&format!("report{}.json", suffix(config.seed)), "report", &report)?;
        metrics_line(&format!("{} seed {} test", report.model, config.seed), &report.test);
        Ok(report)
    })?;
    if repeats > 1 {
        out.write_json("summary.json", "summary", &summary)?;
        metrics_line("mean", &summary.mean);
        metrics_line("std", &summary.std);
    }
    Ok(())
}

fn cmd_eval(rc: &RunConfig, checkpoint: Option<Checkpoint>, out: &mut OutDir) -> Result<()> {
    let stream = load(rc)?;
    let plan = rc.train.plan(&stream)?;
    let report = match (rc.model.baseline(), rc.task) {
        (Some(_), Task::Node) => {
            return Err(Error::Configuration("node classification needs the mpfa model".into()));
        }
        (Some(b), Task::Link) => run_baseline(b, &stream, &plan, &rc.train, rc.window)?,
        (None, task) => {
            let ck = checkpoint
                .ok_or_else(|| Error::Configuration("evaluating mpfa needs --checkpoint".into()))?;
            match task {
                Task::Node => node_classification(
                    &ck.model,
                    &stream,
                    &plan,
                    &rc.train,
                    &rc.classifier,
                    ClassifierInput::Embeddings,
                )?,
                Task::Link => {
                    // The stored state is only valid for the split it was trained on.
                    let mut state = match ck.state {
                        Some(s) if ck.config == rc.train && s.state().cursor() == plan.test.start => s.into_state(),
                        _ => warm_state(&ck.model, &stream, &plan, &rc.train)?,
                    };
                    let mut scorer = MpfaScorer { model: &ck.model, state: &mut state, k: rc.train.k_neighbors };
                    let test = evaluate_test(&mut scorer, &stream, &plan, &rc.train)?;
                    EvalReport::new("mpfa", plan.mode, rc.train.seed, test, serde_json::to_value(&rc.train)?)
                }
            }
        }
    };
    out.write_json("report.json", "report", &report)?;
    metrics_line(&format!("{} test", report.model), &report.test);
    Ok(())
}

fn cmd_ablate(rc: &RunConfig, out: &mut OutDir) -> Result<()> {
    let stream = load(rc)?;
    let plans = rc
        .modes
        .iter()
        .map(|&mode| TrainConfig { mode, ..rc.train.clone() }.plan(&stream))
        .collect::<Result<Vec<_>>>()?;
    let rows = run_ablations(&stream, &plans, &rc.train)?;
    let lines: Vec<String> = rows
        .iter()
        .map(|r| format!("{},{},{},{}", r.variant, r.mode, r.run_id, metrics_csv(&r.test)))
        .collect();
    for r in &rows {
        metrics_line(&format!("{} {}", r.variant, r.mode), &r.test);
    }
    out.write_csv("ablations.csv", "variant,mode,run_id,ap,auc,acc,count", &lines)
}

fn write_sweep(out: &mut OutDir, name: &str, rows: &[SweepRow]) -> Result<()> {
    let lines: Vec<String> = rows
        .iter()
        .map(|r| format!("{},{},{},{}", r.param, r.value, r.run_id, metrics_csv(&r.test)))
        .collect();
    for r in rows {
        metrics_line(&format!("{}={}", r.param, r.value), &r.test);
    }
    out.write_csv(name, "param,value,run_id,ap,auc,acc,count", &lines)
}

fn cmd_synth(rc: &RunConfig, out: &mut OutDir) -> Result<()> {
    let s = &rc.synth;
    let seed = rc.train.seed;
    let mut stream = synth_recurrent(s.nodes, s.events, s.recurrence_prob, s.noise, seed)?;
    let name = if s.labels {
        let partner = synth_partners(s.nodes, seed);
        let events: Vec<Event> = stream
            .events()
            .iter()
            .map(|e| Event { state_label: Some(u8::from(e.dst != partner[e.src])), ..e.clone() })
            .collect();
        stream = EventStream::new(events, stream.num_nodes(), stream.edge_feat_dim())?;
        "synth_labeled.csv"
    } else {
        "synth.csv"
    };
    let mut bytes = format!("# run_config={}\n", out.run_config()).into_bytes();
    write_csv_to(&stream, &mut bytes).map_err(|e| Error::Io { path: name.into(), source: e })?;
    out.write_bytes(name, &bytes)?;
    println!("{} events over {} nodes -> {}", stream.len(), stream.num_nodes(), out.path(name).display());
    Ok(())
}

fn cmd_export_attention(rc: &RunConfig, checkpoint: Option<Checkpoint>, out: &mut OutDir) -> Result<()> {
    let stream = load(rc)?;
    let model = match checkpoint {
        Some(ck) => ck.model,
        None => Mpfa::new(
            rc.train.dims(stream.edge_feat_dim())?,
            rc.train.variant.ablation(),
            sub_seed(rc.train.seed, "init"),
        )?,
    };
    if model.dims().edge != stream.edge_feat_dim() {
        return Err(Error::Configuration(format!(
            "model expects {} edge features but the data has {}",
            model.dims().edge,
            stream.edge_feat_dim()
        )));
    }
    let end = rc.max_events.unwrap_or(stream.len()).min(stream.len());
    let rows = attention_trace(&model, &stream, 0..end, rc.train.k_neighbors, rc.train.batch_size)?;
    let lines: Vec<String> = rows
        .iter()
        .map(|r| format!("{},{},{},{},{},{}", r.event_index, r.node, r.perspective.name(), r.neighbor_rank, r.dt, r.weight))
        .collect();
    println!("{} attention rows for {end} events", lines.len());
    if lines.is_empty() && end > 0 {
        eprintln!("warning: events only see neighbors from earlier batches; try --batch-size 1");
    }
    out.write_csv("attention.csv", "event_index,node,perspective,neighbor_rank,dt,weight", &lines)
}
