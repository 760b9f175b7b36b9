use serde::{Deserialize, Serialize};

use super::exact::exact_shapley;
use super::{l1_gap, ClassShapleyMatrix, ClassUtility, ModelUtility, Valuation};
use crate::data::DataView;
use crate::error::{Error, Result};
use crate::nn::ModelParams;

/// Truncated multi-round valuation: exact per-round values damped by `decay^round`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TmrConfig {
    pub decay: f64,
    /// Rounds whose aggregate L1 gain is at most this are skipped.
    pub skip_threshold: f64,
}

impl Default for TmrConfig {
    fn default() -> Self {
        Self {
            decay: 0.9,
            skip_threshold: 1e-3,
        }
    }
}

impl TmrConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::param("tmr_decay", format!("must lie in (0, 1], got {}", self.decay)));
        }
        if !(self.skip_threshold >= 0.0) {
            return Err(Error::param("tmr_skip_threshold", "must be nonnegative"));
        }
        Ok(())
    }
}

pub fn tmr_shapley<U: ClassUtility + ?Sized>(
    game: &U,
    config: &TmrConfig,
    round_index: usize,
    normalize: bool,
    temperature: f64,
) -> Result<Valuation> {
    config.validate()?;
    let n = game.num_players();
    if n == 0 {
        return Err(Error::EmptyCohort);
    }
    if n > super::EXACT_COHORT_LIMIT {
        return Err(Error::CohortTooLarge {
            size: n,
            limit: super::EXACT_COHORT_LIMIT,
        });
    }
    let everyone: Vec<usize> = (0..n).collect();
    let v0 = game.utility(&[])?;
    let v_full = game.utility(&everyone)?;
    if l1_gap(&v_full, &v0) <= config.skip_threshold {
        return Valuation::truncated(n, v0, v_full, temperature);
    }
    let (phi, cache) = exact_shapley(game, normalize)?;
    let factor = config.decay.powi(round_index.min(i32::MAX as usize) as i32);
    Valuation::from_cache(phi.scaled(factor), cache, temperature)
}

pub fn tmr_class_shapley(
    client_models: &[ModelParams],
    client_sizes: &[usize],
    base_model: &ModelParams,
    validation: DataView<'_>,
    config: &TmrConfig,
    round_index: usize,
    normalize: bool,
) -> Result<ClassShapleyMatrix> {
    let game = ModelUtility {
        models: client_models,
        sizes: client_sizes,
        base: base_model,
        validation,
    };
    Ok(tmr_shapley(&game, config, round_index, normalize, 1.0)?.shapley)
}
