//! Grid drivers: neighbor-count and hyperparameter sweeps, ablations and
//! repeated-seed runs.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::metrics::Metrics;
use super::{train, EvalReport, TrainConfig};
use crate::error::{Error, Result};
use crate::events::{EventStream, SplitMode, SplitPlan};
use crate::model::Variant;

/// Hyperparameter varied by [`sweep`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    BatchSize,
    /// Embedding and memory width together.
    EmbedDim,
    Dropout,
    K,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::BatchSize => "batch_size",
            SweepParam::EmbedDim => "embed_dim",
            SweepParam::Dropout => "dropout",
            SweepParam::K => "k",
        }
    }

    /// Copy of `base` with this parameter set to `value`.
    pub fn apply(self, base: &TrainConfig, value: f64) -> Result<TrainConfig> {
        let mut c = base.clone();
        let count = || -> Result<usize> {
            if value >= 1.0 && value.fract() == 0.0 {
                Ok(value as usize)
            } else {
                Err(Error::Configuration(format!("{} needs a positive integer, got {value}", self.name())))
            }
        };
        match self {
            SweepParam::BatchSize => c.batch_size = count()?,
            SweepParam::EmbedDim => {
                c.embed_dim = count()?;
                c.memory_dim = c.embed_dim;
            }
            SweepParam::Dropout => c.dropout = value,
            SweepParam::K => c.k_neighbors = count()?,
        }
        Ok(c)
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "batch_size" | "batch" => Ok(SweepParam::BatchSize),
            "embed_dim" | "dim" => Ok(SweepParam::EmbedDim),
            "dropout" => Ok(SweepParam::Dropout),
            "k" | "k_neighbors" => Ok(SweepParam::K),
            _ => Err(Error::Configuration(format!("unknown sweep parameter {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub param: SweepParam,
    pub value: f64,
    pub run_id: String,
    pub test: Metrics,
}

/// One training run per value of `param`.
pub fn sweep(
    stream: &EventStream,
    plan: &SplitPlan,
    config: &TrainConfig,
    param: SweepParam,
    values: &[f64],
) -> Result<Vec<SweepRow>> {
    values
        .iter()
        .map(|&value| {
            let c = param.apply(config, value)?;
            let report = train(stream, plan, &c)?.report;
            Ok(SweepRow { param, value, run_id: report.run_id, test: report.test })
        })
        .collect()
}

/// Neighbor counts of the stability experiment.
pub const DEFAULT_K_LIST: [usize; 7] = [1, 2, 3, 5, 10, 20, 30];

pub fn sweep_neighbors(stream: &EventStream, plan: &SplitPlan, config: &TrainConfig, ks: &[usize]) -> Result<Vec<SweepRow>> {
    let values: Vec<f64> = ks.iter().map(|&k| k as f64).collect();
    sweep(stream, plan, config, SweepParam::K, &values)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub mode: SplitMode,
    pub run_id: String,
    pub test: Metrics,
}

/// Trains every variant on every plan with the same seed.
pub fn run_ablations(stream: &EventStream, plans: &[SplitPlan], config: &TrainConfig) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::with_capacity(plans.len() * Variant::ALL.len());
    for plan in plans {
        for variant in Variant::ALL {
            let c = TrainConfig { variant, mode: plan.mode, ..config.clone() };
            let report = train(stream, plan, &c)?.report;
            rows.push(AblationRow { variant, mode: plan.mode, run_id: report.run_id, test: report.test });
        }
    }
    Ok(rows)
}

/// Reports of repeated runs with their mean and population standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepeatSummary {
    pub reports: Vec<EvalReport>,
    pub mean: Metrics,
    pub std: Metrics,
}

impl RepeatSummary {
    pub fn from_reports(reports: Vec<EvalReport>) -> Result<Self> {
        if reports.is_empty() {
            return Err(Error::Configuration("no runs to summarize".into()));
        }
        let n = reports.len() as f64;
        let stat = |f: fn(&Metrics) -> f64| {
            let mean = reports.iter().map(|r| f(&r.test)).sum::<f64>() / n;
            let var = reports.iter().map(|r| (f(&r.test) - mean).powi(2)).sum::<f64>() / n;
            (mean, var.sqrt())
        };
        let (ap, auc, acc) = (stat(|m| m.ap), stat(|m| m.auc), stat(|m| m.acc));
        let count = reports[0].test.count;
        Ok(RepeatSummary {
            mean: Metrics { ap: ap.0, auc: auc.0, acc: acc.0, count },
            std: Metrics { ap: ap.1, auc: auc.1, acc: acc.1, count },
            reports,
        })
    }
}

/// Runs `run` with seeds `config.seed, config.seed + 1, ...`. The evaluation
/// seed stays fixed so every run is scored against the same negatives.
pub fn repeat_runs<F>(config: &TrainConfig, repeats: usize, mut run: F) -> Result<RepeatSummary>
where
    F: FnMut(&TrainConfig) -> Result<EvalReport>,
{
    if repeats == 0 {
        return Err(Error::Configuration("repeats must be positive".into()));
    }
    let reports = (0..repeats as u64)
        .map(|r| run(&TrainConfig {
                seed: config.seed.wrapping_add(r),
                eval_seed: Some(config.evaluation_seed()),
                ..config.clone()
            }))
        .collect::<Result<Vec<_>>>()?;
    RepeatSummary::from_reports(reports)
}
