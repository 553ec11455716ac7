use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fixed cosine time features: `phi(dt)_k = cos(w_k * dt)` with
/// `w_k = 1 / 10000^(2k / dim)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeEncoder {
    freqs: Vec<f64>,
}

impl TimeEncoder {
    pub fn new(dim: usize) -> Self {
        let freqs = (0..dim)
            .map(|k| 1.0 / 10000f64.powf(2.0 * k as f64 / dim as f64))
            .collect();
        TimeEncoder { freqs }
    }

    pub fn dim(&self) -> usize {
        self.freqs.len()
    }

    pub fn encode(&self, dt: f64) -> Result<Vec<f64>> {
        if dt < 0.0 || !dt.is_finite() {
            return Err(Error::TimeOrder { t: dt, last: 0.0 });
        }
        Ok(self.encode_unchecked(dt))
    }

    pub(crate) fn encode_unchecked(&self, dt: f64) -> Vec<f64> {
        self.freqs.iter().map(|w| (w * dt).cos()).collect()
    }

    pub(crate) fn encode_into(&self, dt: f64, out: &mut Vec<f64>) {
        out.extend(self.freqs.iter().map(|w| (w * dt).cos()));
    }
}
