//! Smooth-inverse-frequency (SIF) sentence embedding of a context.

use serde::{Deserialize, Serialize};

use crate::embedding::{EmbeddingTable, UnigramStats};
use crate::error::{Error, Result};
use crate::linalg::axpy;

pub const DEFAULT_SMOOTHING: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SifConfig {
    pub smoothing_a: f64,
}

impl Default for SifConfig {
    fn default() -> Self {
        Self {
            smoothing_a: DEFAULT_SMOOTHING,
        }
    }
}

impl SifConfig {
    pub fn new(smoothing_a: f64) -> Result<Self> {
        if smoothing_a > 0.0 && smoothing_a.is_finite() {
            Ok(Self { smoothing_a })
        } else {
            Err(Error::Config(format!(
                "SIF smoothing must be positive, got {smoothing_a}"
            )))
        }
    }

    pub fn weight(&self, probability: f64) -> f64 {
        self.smoothing_a / (self.smoothing_a + probability)
    }
}

/// Frequency-damped average of the in-vocabulary token vectors.
///
/// Tokens missing from `table` are dropped and do not count towards the
/// averaging length. The target word is included when present.
pub fn sif_embed(
    sentence: &[String],
    table: &EmbeddingTable,
    stats: &UnigramStats,
    config: &SifConfig,
) -> Result<Vec<f64>> {
    let mut out = vec![0.0; table.dim()];
    let mut used = 0usize;
    for tok in sentence {
        if let Some(v) = table.lookup(tok) {
            axpy(config.weight(stats.probability(tok)), v, &mut out);
            used += 1;
        }
    }
    if used == 0 {
        return Err(Error::EmptyContext);
    }
    let inv = 1.0 / used as f64;
    out.iter_mut().for_each(|x| *x *= inv);
    Ok(out)
}
