//! Interaction streams: loading, chronological splits, batching, negative
//! sampling and a synthetic recurrent-partner generator.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::ops::Range;
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type NodeId = usize;

/// One timestamped interaction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub src: NodeId,
    pub dst: NodeId,
    pub t: f64,
    pub edge_feat: Vec<f64>,
    /// Binary state of `src` after the event, when the dataset carries one.
    pub state_label: Option<u8>,
}

impl Event {
    pub fn new(src: NodeId, dst: NodeId, t: f64, edge_feat: Vec<f64>) -> Self {
        Event { src, dst, t, edge_feat, state_label: None }
    }

    pub fn touches(&self, node: NodeId) -> bool {
        self.src == node || self.dst == node
    }
}

/// Chronologically ordered events over nodes `0..num_nodes`.
#[derive(Clone, Debug, PartialEq)]
pub struct EventStream {
    events: Vec<Event>,
    num_nodes: usize,
    edge_feat_dim: usize,
    /// For bipartite data, the number of source-side nodes; items follow them.
    num_users: Option<usize>,
}

impl EventStream {
    /// Validates and stably sorts `events` by time (ties keep their order).
    pub fn new(mut events: Vec<Event>, num_nodes: usize, edge_feat_dim: usize) -> Result<Self> {
        for (i, e) in events.iter().enumerate() {
            if !e.t.is_finite() || e.t < 0.0 {
                return Err(Error::State(format!("event {i} has invalid time {}", e.t)));
            }
            if e.src >= num_nodes || e.dst >= num_nodes {
                return Err(Error::State(format!("event {i} references a node >= {num_nodes}")));
            }
            if e.edge_feat.len() != edge_feat_dim {
                return Err(Error::dim(format!(
                    "event {i} has {} edge features, expected {edge_feat_dim}",
                    e.edge_feat.len()
                )));
            }
        }
        events.sort_by(|a, b| a.t.total_cmp(&b.t));
        Ok(EventStream { events, num_nodes, edge_feat_dim, num_users: None })
    }

    /// Marks the stream as bipartite with sources in `0..num_users` and
    /// destinations in `num_users..num_nodes`.
    pub fn with_bipartite(mut self, num_users: usize) -> Result<Self> {
        if num_users == 0 || num_users >= self.num_nodes {
            return Err(Error::Configuration(format!("{num_users} users of {} nodes", self.num_nodes)));
        }
        self.num_users = Some(num_users);
        Ok(self)
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn get(&self, i: usize) -> &Event {
        &self.events[i]
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn edge_feat_dim(&self) -> usize {
        self.edge_feat_dim
    }

    pub fn num_users(&self) -> Option<usize> {
        self.num_users
    }

    pub fn is_labeled(&self) -> bool {
        !self.events.is_empty() && self.events.iter().all(|e| e.state_label.is_some())
    }

    /// Nodes a negative destination is drawn from: items for bipartite data,
    /// every node otherwise.
    pub fn dst_universe(&self) -> Range<NodeId> {
        match self.num_users {
            Some(u) => u..self.num_nodes,
            None => 0..self.num_nodes,
        }
    }

    /// The events whose index is in `keep`, preserving node ids.
    pub fn subset(&self, keep: impl IntoIterator<Item = usize>) -> EventStream {
        EventStream {
            events: keep.into_iter().map(|i| self.events[i].clone()).collect(),
            num_nodes: self.num_nodes,
            edge_feat_dim: self.edge_feat_dim,
            num_users: self.num_users,
        }
    }
}

/// Column layout of an input CSV.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CsvSchema {
    /// Header row `user,item,timestamp,state_label,features...`; items are
    /// re-indexed after the users.
    Jodie,
    /// Headerless `src,dst,t,features...`.
    Plain,
    /// Headerless `src,dst,t,label,features...`.
    PlainLabeled,
}

impl std::str::FromStr for CsvSchema {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jodie" => Ok(CsvSchema::Jodie),
            "plain" => Ok(CsvSchema::Plain),
            "plain-labeled" => Ok(CsvSchema::PlainLabeled),
            _ => Err(Error::Configuration(format!("unknown schema {s:?} (expected jodie, plain or plain-labeled)"))),
        }
    }
}

fn open_text(path: &Path) -> Result<Box<dyn BufRead>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader: Box<dyn Read> = if path.extension().is_some_and(|x| x == "gz") {
        Box::new(GzDecoder::new(file))
    } else {
        Box::new(file)
    };
    Ok(Box::new(BufReader::new(reader)))
}

fn parse_field<T: std::str::FromStr>(field: &str, line: u64, what: &str) -> Result<T> {
    field.trim().parse().map_err(|_| Error::Parse {
        line,
        msg: format!("{what} field {:?} is not numeric", field.trim()),
    })
}

/// Reads an interaction CSV (gzip when the name ends in `.gz`).
pub fn load_csv(path: impl AsRef<Path>, schema: CsvSchema) -> Result<EventStream> {
    let path = path.as_ref();
    parse_csv(open_text(path)?, schema)
}

/// Parses CSV text already opened by the caller. Lines starting with `#` are comments.
pub fn parse_csv<R: BufRead>(reader: R, schema: CsvSchema) -> Result<EventStream> {
    let mut events = Vec::new();
    let mut feat_dim: Option<usize> = None;
    let (mut max_src, mut max_dst) = (None::<usize>, None::<usize>);
    let mut header_pending = schema == CsvSchema::Jodie;
    for (i, line) in reader.lines().enumerate() {
        let line_no = i as u64 + 1;
        let line = line.map_err(|e| Error::Parse { line: line_no, msg: e.to_string() })?;
        if line.starts_with('#') {
            continue;
        }
        if header_pending {
            header_pending = false;
            continue;
        }
        let line = line.trim_end_matches(['\r', ',']);
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let fixed = match schema {
            CsvSchema::Plain => 3,
            CsvSchema::Jodie | CsvSchema::PlainLabeled => 4,
        };
        if fields.len() < fixed {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected at least {fixed} fields, got {}", fields.len()),
            });
        }
        let src: usize = parse_field(fields[0], line_no, "source")?;
        let dst: usize = parse_field(fields[1], line_no, "destination")?;
        let t: f64 = parse_field(fields[2], line_no, "timestamp")?;
        if !t.is_finite() || t < 0.0 {
            return Err(Error::Parse { line: line_no, msg: format!("timestamp {t} must be finite and >= 0") });
        }
        let state_label = if fixed == 4 {
            let l: f64 = parse_field(fields[3], line_no, "label")?;
            if l != 0.0 && l != 1.0 {
                return Err(Error::Parse { line: line_no, msg: format!("label {l} is not 0 or 1") });
            }
            Some(l as u8)
        } else {
            None
        };
        let edge_feat = fields[fixed..]
            .iter()
            .map(|f| parse_field::<f64>(f, line_no, "feature"))
            .collect::<Result<Vec<_>>>()?;
        match feat_dim {
            None => feat_dim = Some(edge_feat.len()),
            Some(d) if d != edge_feat.len() => {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("{} features where earlier rows have {d}", edge_feat.len()),
                })
            }
            _ => {}
        }
        max_src = max_src.max(Some(src));
        max_dst = max_dst.max(Some(dst));
        events.push(Event { src, dst, t, edge_feat, state_label });
    }
    let feat_dim = feat_dim.unwrap_or(0);
    match schema {
        CsvSchema::Jodie => {
            let users = max_src.map_or(0, |m| m + 1);
            let items = max_dst.map_or(0, |m| m + 1);
            for e in &mut events {
                e.dst += users;
            }
            let stream = EventStream::new(events, users + items, feat_dim)?;
            if users > 0 && items > 0 {
                stream.with_bipartite(users)
            } else {
                Ok(stream)
            }
        }
        _ => {
            let n = max_src.max(max_dst).map_or(0, |m| m + 1);
            EventStream::new(events, n, feat_dim)
        }
    }
}

/// Writes the headerless plain layout (`PlainLabeled` when every event has a label).
/// Floats use Rust's shortest round-trip formatting, so reloading is exact.
pub fn write_csv(stream: &EventStream, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out: Box<dyn Write> = if path.extension().is_some_and(|x| x == "gz") {
        Box::new(BufWriter::new(GzEncoder::new(file, flate2::Compression::default())))
    } else {
        Box::new(BufWriter::new(file))
    };
    write_csv_to(stream, &mut out).map_err(|e| Error::io(path, e))
}

/// [`write_csv`] into any writer.
pub fn write_csv_to<W: Write + ?Sized>(stream: &EventStream, out: &mut W) -> std::io::Result<()> {
    let labeled = stream.is_labeled();
    for e in stream.events() {
        let mut line = format!("{},{},{}", e.src, e.dst, e.t);
        if labeled {
            line.push_str(&format!(",{}", e.state_label.unwrap_or(0)));
        }
        for f in &e.edge_feat {
            line.push_str(&format!(",{f}"));
        }
        line.push('\n');
        out.write_all(line.as_bytes())?;
    }
    out.flush()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    Transductive,
    Inductive,
}

impl SplitMode {
    pub fn name(self) -> &'static str {
        match self {
            SplitMode::Transductive => "transductive",
            SplitMode::Inductive => "inductive",
        }
    }
}

impl std::fmt::Display for SplitMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for SplitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "transductive" => Ok(SplitMode::Transductive),
            "inductive" => Ok(SplitMode::Inductive),
            _ => Err(Error::Configuration(format!("unknown mode {s:?} (expected transductive or inductive)"))),
        }
    }
}

/// Chronological train/validation/test ranges over a stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
    /// Nodes hidden from training in inductive mode.
    pub masked_nodes: BTreeSet<NodeId>,
    pub mode: SplitMode,
}

impl SplitPlan {
    /// Indices of the training events the model may see.
    pub fn train_indices(&self, stream: &EventStream) -> Vec<usize> {
        self.train
            .clone()
            .filter(|&i| self.mode == SplitMode::Transductive || !self.touches_masked(stream.get(i)))
            .collect()
    }

    /// Indices in `range` that are scored during evaluation.
    pub fn scored_indices(&self, stream: &EventStream, range: Range<usize>) -> Vec<usize> {
        range
            .filter(|&i| self.mode == SplitMode::Transductive || self.touches_masked(stream.get(i)))
            .collect()
    }

    pub fn touches_masked(&self, e: &Event) -> bool {
        self.masked_nodes.contains(&e.src) || self.masked_nodes.contains(&e.dst)
    }
}

/// Splits at event-count quantiles: `floor(n * train_frac)` training events,
/// `floor(n * val_frac)` validation events and the remainder for testing.
pub fn chronological_split(stream: &EventStream, train_frac: f64, val_frac: f64) -> Result<SplitPlan> {
    if stream.is_empty() {
        return Err(Error::State("cannot split an empty stream".into()));
    }
    if !(train_frac > 0.0 && val_frac > 0.0 && train_frac + val_frac < 1.0) {
        return Err(Error::Parameter(format!(
            "split fractions {train_frac}/{val_frac} must be positive and leave a test share"
        )));
    }
    let n = stream.len();
    // The small slack keeps 0.7 * 10 from flooring to 6.
    let n_train = ((n as f64) * train_frac + 1e-9).floor() as usize;
    let n_val = ((n as f64) * val_frac + 1e-9).floor() as usize;
    let n_val = n_val.min(n - n_train);
    Ok(SplitPlan {
        train: 0..n_train,
        val: n_train..n_train + n_val,
        test: n_train + n_val..n,
        masked_nodes: BTreeSet::new(),
        mode: SplitMode::Transductive,
    })
}

/// Hides a random `fraction` of the nodes that appear in validation or test
/// from training, turning `plan` into an inductive plan.
pub fn inductive_mask(stream: &EventStream, plan: &SplitPlan, fraction: f64, seed: u64) -> Result<SplitPlan> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Parameter(format!("mask fraction {fraction} outside (0, 1)")));
    }
    let seen: BTreeSet<NodeId> = (plan.val.start..plan.test.end)
        .flat_map(|i| {
            let e = stream.get(i);
            [e.src, e.dst]
        })
        .collect();
    let candidates: Vec<NodeId> = seen.into_iter().collect();
    let count = ((candidates.len() as f64) * fraction).floor() as usize;
    if count == 0 {
        return Err(Error::Configuration(format!(
            "masking {fraction} of {} evaluation nodes selects none; the inductive evaluation set would be empty",
            candidates.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let masked: BTreeSet<NodeId> = candidates.choose_multiple(&mut rng, count).copied().collect();
    Ok(SplitPlan { masked_nodes: masked, mode: SplitMode::Inductive, ..plan.clone() })
}

/// A corrupted copy of a positive interaction with a random destination.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NegativeEdge {
    pub src: NodeId,
    pub dst: NodeId,
    pub t: f64,
}

/// Positive events (by stream index) paired one-to-one with negatives.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub positives: Vec<usize>,
    pub negatives: Vec<NegativeEdge>,
}

impl Batch {
    pub fn new(positives: Vec<usize>, negatives: Vec<NegativeEdge>) -> Result<Self> {
        if positives.len() != negatives.len() {
            return Err(Error::dim(format!("{} positives with {} negatives", positives.len(), negatives.len())));
        }
        Ok(Batch { positives, negatives })
    }

    /// Samples one negative per positive.
    pub fn sample<R: Rng + ?Sized>(stream: &EventStream, positives: Vec<usize>, rng: &mut R) -> Result<Self> {
        let events: Vec<&Event> = positives.iter().map(|&i| stream.get(i)).collect();
        let negatives = negative_sample(&events, stream.dst_universe(), rng)?;
        Batch::new(positives, negatives)
    }

    pub fn len(&self) -> usize {
        self.positives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positives.is_empty()
    }
}

/// For each positive `(u, v, t)` draws `(u, v', t)` with `v'` uniform over
/// `universe \ {v}`.
pub fn negative_sample<R: Rng + ?Sized>(
    positives: &[&Event],
    universe: Range<NodeId>,
    rng: &mut R,
) -> Result<Vec<NegativeEdge>> {
    if universe.is_empty() {
        return Err(Error::Sampling("empty destination universe".into()));
    }
    positives
        .iter()
        .map(|e| {
            let dst = if universe.contains(&e.dst) {
                let size = universe.len() - 1;
                if size == 0 {
                    return Err(Error::Sampling(format!(
                        "destination universe is only the positive destination {}",
                        e.dst
                    )));
                }
                let k = universe.start + rng.random_range(0..size);
                if k >= e.dst {
                    k + 1
                } else {
                    k
                }
            } else {
                rng.random_range(universe.clone())
            };
            Ok(NegativeEdge { src: e.src, dst, t: e.t })
        })
        .collect()
}

/// Consecutive chunks of `indices`; the last one may be short.
pub fn make_batches(indices: &[usize], batch_size: usize) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::Parameter("batch size must be at least 1".into()));
    }
    Ok(indices.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// Width of the synthetic edge features.
pub const SYNTH_FEAT_DIM: usize = 4;

/// Hidden partner of every node in a synthetic stream, derived from the seed.
/// Nodes are paired off after a shuffle; with an odd count the leftover node
/// points at the first node of the shuffle.
pub fn synth_partners(num_nodes: usize, seed: u64) -> Vec<NodeId> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm: Vec<NodeId> = (0..num_nodes).collect();
    perm.shuffle(&mut rng);
    let mut partner = vec![0; num_nodes];
    for pair in perm.chunks(2) {
        match pair {
            [a, b] => {
                partner[*a] = *b;
                partner[*b] = *a;
            }
            [a] => partner[*a] = perm[0],
            _ => unreachable!(),
        }
    }
    partner
}

/// Generates a stream where each event's source is uniform and its
/// destination is the source's hidden partner with probability
/// `recurrence_prob`, otherwise a uniform other node. Event `n` happens at
/// `n + U[0, 0.5)`; edge features are Gaussian with standard deviation `noise`.
pub fn synth_recurrent(
    num_nodes: usize,
    num_events: usize,
    recurrence_prob: f64,
    noise: f64,
    seed: u64,
) -> Result<EventStream> {
    if num_nodes < 4 {
        return Err(Error::Parameter(format!("synthetic streams need at least 4 nodes, got {num_nodes}")));
    }
    if !(0.0..=1.0).contains(&recurrence_prob) {
        return Err(Error::Parameter(format!("recurrence probability {recurrence_prob} outside [0, 1]")));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::Parameter(format!("noise {noise} must be finite and >= 0")));
    }
    let partner = synth_partners(num_nodes, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    let gauss = Normal::new(0.0, noise.max(f64::MIN_POSITIVE)).expect("valid normal");
    let mut events = Vec::with_capacity(num_events);
    for n in 0..num_events {
        let src = rng.random_range(0..num_nodes);
        let dst = if rng.random::<f64>() < recurrence_prob {
            partner[src]
        } else {
            let k = rng.random_range(0..num_nodes - 1);
            if k >= src {
                k + 1
            } else {
                k
            }
        };
        let t = n as f64 + rng.random_range(0.0..0.5);
        let edge_feat = (0..SYNTH_FEAT_DIM)
            .map(|_| if noise == 0.0 { 0.0 } else { gauss.sample(&mut rng) })
            .collect();
        events.push(Event::new(src, dst, t, edge_feat));
    }
    EventStream::new(events, num_nodes, SYNTH_FEAT_DIM)
}
