use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use mpfa_core::baselines::Baseline;
use mpfa_core::events::{CsvSchema, SplitMode};
use mpfa_core::model::Variant;
use mpfa_core::train::{ClassifierConfig, SweepParam, TrainConfig, DEFAULT_K_LIST};
use mpfa_core::{Error, Result};
use serde::{Deserialize, Serialize};

/// Scorer selected with `--model`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Mpfa,
    EdgeBank,
    Random,
}

impl ModelKind {
    pub fn baseline(self) -> Option<Baseline> {
        match self {
            ModelKind::Mpfa => None,
            ModelKind::EdgeBank => Some(Baseline::EdgeBank),
            ModelKind::Random => Some(Baseline::Random),
        }
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "mpfa" => Ok(ModelKind::Mpfa),
            "edgebank" => Ok(ModelKind::EdgeBank),
            "random" => Ok(ModelKind::Random),
            _ => Err(format!("unknown model {s:?} (expected mpfa, edgebank or random)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Link prediction.
    Link,
    /// Dynamic node classification.
    Node,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub nodes: usize,
    pub events: usize,
    pub recurrence_prob: f64,
    pub noise: f64,
    /// Label each event 1 when the destination is not the source's usual partner.
    pub labels: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { nodes: 100, events: 10_000, recurrence_prob: 0.9, noise: 0.1, labels: false }
    }
}

/// Everything a run depends on; echoed into every artifact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub schema: CsvSchema,
    pub model: ModelKind,
    /// EdgeBank time window; unlimited memory when absent.
    pub window: Option<f64>,
    pub repeats: usize,
    pub task: Task,
    pub checkpoint: Option<PathBuf>,
    pub train: TrainConfig,
    pub classifier: ClassifierConfig,
    pub modes: Vec<SplitMode>,
    pub ks: Vec<usize>,
    pub sweep_param: SweepParam,
    pub sweep_values: Vec<f64>,
    pub synth: SynthConfig,
    /// Number of leading events whose attention is exported.
    pub max_events: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: None,
            schema: CsvSchema::Plain,
            model: ModelKind::Mpfa,
            window: None,
            repeats: 1,
            task: Task::Link,
            checkpoint: None,
            train: TrainConfig::default(),
            classifier: ClassifierConfig::default(),
            modes: vec![SplitMode::Transductive],
            ks: DEFAULT_K_LIST.to_vec(),
            sweep_param: SweepParam::BatchSize,
            sweep_values: vec![100.0, 200.0, 300.0, 400.0],
            synth: SynthConfig::default(),
            max_events: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Io { path: path.display().to_string(), source: e })?;
        serde_json::from_str(&text).map_err(|e| Error::Configuration(format!("{}: {e}", path.display())))
    }

    pub fn data_path(&self) -> Result<&Path> {
        self.data
            .as_deref()
            .ok_or_else(|| Error::Configuration("no dataset given (use --data or \"data\" in the config)".into()))
    }
}

/// Training flags that override the configuration file.
#[derive(Clone, Debug, Default, clap::Args)]
pub struct TrainFlags {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Number of temporal neighbors.
    #[arg(long)]
    pub k: Option<usize>,
    /// Embedding and memory width.
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub time_dim: Option<usize>,
    #[arg(long)]
    pub mode: Option<SplitMode>,
    #[arg(long)]
    pub mask_fraction: Option<f64>,
    #[arg(long)]
    pub train_frac: Option<f64>,
    #[arg(long)]
    pub val_frac: Option<f64>,
    /// Ablation variant: full, wo_rp, wo_ep, wo_red or wo_ed.
    #[arg(long)]
    pub ablate: Option<Variant>,
}

impl TrainFlags {
    pub fn apply(&self, c: &mut TrainConfig) {
        macro_rules! set {
            ($flag:ident => $($field:ident),+) => {
                if let Some(v) = self.$flag {
                    $(c.$field = v;)+
                }
            };
        }
        set!(seed => seed);
        set!(epochs => epochs);
        set!(patience => patience);
        set!(batch_size => batch_size);
        set!(lr => lr);
        set!(dropout => dropout);
        set!(k => k_neighbors);
        set!(dim => embed_dim, memory_dim);
        set!(time_dim => time_dim);
        set!(mode => mode);
        set!(mask_fraction => mask_fraction);
        set!(train_frac => train_frac);
        set!(val_frac => val_frac);
        set!(ablate => variant);
    }
}
