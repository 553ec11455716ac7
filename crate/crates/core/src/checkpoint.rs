//! Versioned JSON checkpoints: training configuration, parameters and an
//! optional state snapshot.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Ablation, ModelDims, Mpfa};
use crate::state::{StateRecord, StateSnapshot};
use crate::tensor::{Param, ParamStore};
use crate::train::TrainConfig;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Record {
    format_version: u32,
    config: TrainConfig,
    dims: ModelDims,
    ablation: Ablation,
    params: Vec<Param>,
    state: Option<StateRecord>,
    #[serde(default)]
    meta: serde_json::Value,
}

/// A trained model with the configuration that produced it.
pub struct Checkpoint {
    pub config: TrainConfig,
    pub model: Mpfa,
    /// State positioned at the start of the test range, when saved.
    pub state: Option<StateSnapshot>,
    /// Free-form description stored alongside, such as the full run configuration.
    pub meta: serde_json::Value,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        let record = Record {
            format_version: FORMAT_VERSION,
            config: self.config.clone(),
            dims: *self.model.dims(),
            ablation: self.model.ablation(),
            params: self.model.params().to_records(),
            state: self.state.as_ref().map(|s| StateRecord::from_state(s.state())),
            meta: self.meta.clone(),
        };
        Ok(serde_json::to_string(&record)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        // Check the version before the full structure so that older or newer
        // files fail with a clear message.
        #[derive(Deserialize)]
        struct Version {
            format_version: u32,
        }
        let v: Version = serde_json::from_str(text).map_err(|e| Error::Load(format!("not a checkpoint: {e}")))?;
        if v.format_version != FORMAT_VERSION {
            return Err(Error::Load(format!(
                "checkpoint format version {} is not supported (expected {FORMAT_VERSION})",
                v.format_version
            )));
        }
        let r: Record = serde_json::from_str(text).map_err(|e| Error::Load(format!("malformed checkpoint: {e}")))?;
        let model = Mpfa::from_params(r.dims, r.ablation, ParamStore::from_records(r.params)?)?;
        let state = match r.state {
            Some(s) => {
                let st = s.into_state()?;
                if st.memory_dim() != r.dims.memory || st.embed_dim() != r.dims.embed {
                    return Err(Error::Load("stored state does not match the model dimensions".into()));
                }
                Some(st.into_snapshot())
            }
            None => None,
        };
        Ok(Checkpoint { config: r.config, model, state, meta: r.meta })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::synth_recurrent;
    use crate::train::{evaluate_test, train, MpfaScorer};

    fn trained() -> (crate::events::EventStream, TrainConfig, crate::train::TrainOutcome) {
        let s = synth_recurrent(20, 600, 0.9, 0.1, 3).unwrap();
        let c = TrainConfig {
            epochs: 1,
            batch_size: 50,
            embed_dim: 6,
            memory_dim: 6,
            time_dim: 4,
            k_neighbors: 4,
            ..TrainConfig::default()
        };
        let out = train(&s, &c.plan(&s).unwrap(), &c).unwrap();
        (s, c, out)
    }

    #[test]
    fn round_trip_reproduces_test_metrics() {
        let (s, c, out) = trained();
        let ck = Checkpoint { config: c.clone(), model: out.model, state: Some(out.warm_state), meta: serde_json::json!({ "note": 1 }) };
        let text = ck.to_json().unwrap();
        let back = Checkpoint::from_json(&text).unwrap();
        assert_eq!(back.to_json().unwrap(), text);
        assert_eq!(back.config, c);

        let plan = back.config.plan(&s).unwrap();
        let mut state = back.state.unwrap().into_state();
        let mut scorer = MpfaScorer { model: &back.model, state: &mut state, k: c.k_neighbors };
        assert_eq!(evaluate_test(&mut scorer, &s, &plan, &c).unwrap(), out.report.test);
    }

    #[test]
    fn version_mismatch_is_a_load_error() {
        let (_, c, out) = trained();
        let text = Checkpoint { config: c, model: out.model, state: None, meta: serde_json::Value::Null }.to_json().unwrap();
        let bumped = text.replacen("\"format_version\":1", "\"format_version\":2", 1);
        assert_ne!(bumped, text);
        assert!(matches!(Checkpoint::from_json(&bumped), Err(Error::Load(_))));
        assert!(matches!(Checkpoint::from_json("{}"), Err(Error::Load(_))));
    }

    #[test]
    fn tampered_shapes_are_rejected() {
        let (_, c, out) = trained();
        let text = Checkpoint { config: c, model: out.model, state: None, meta: serde_json::Value::Null }.to_json().unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["dims"]["embed"] = serde_json::json!(7);
        assert!(matches!(Checkpoint::from_json(&v.to_string()), Err(Error::Load(_))));
    }
}
