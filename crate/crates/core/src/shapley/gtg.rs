use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{l1_gap, members, ClassUtility, ClassShapleyMatrix, ModelUtility, SubsetUtilityCache, Valuation};
use crate::data::DataView;
use crate::error::{Error, Result};
use crate::nn::ModelParams;

/// Monte Carlo permutation estimator with between- and within-round truncation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GtgConfig {
    /// Skip the round when the L1 gain of the full aggregate is at most this.
    pub eps_between: f64,
    /// Reuse the previous prefix utility when it is closer than this to the full aggregate.
    pub eps_within: f64,
    /// Cap on Monte Carlo rounds; each round walks one permutation per player.
    pub max_permutations: usize,
    /// Stop once a round moves no entry by this much or more.
    pub convergence_tol: f64,
    pub seed: u64,
}

impl Default for GtgConfig {
    fn default() -> Self {
        Self {
            eps_between: 1e-3,
            eps_within: 1e-3,
            max_permutations: 50,
            convergence_tol: 1e-3,
            seed: 0,
        }
    }
}

impl GtgConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_permutations == 0 {
            return Err(Error::param("max_permutations", "must be at least 1"));
        }
        if !(self.convergence_tol >= 0.0) {
            return Err(Error::param("convergence_tol", "must be nonnegative; 0 always runs max_permutations rounds"));
        }
        if !(self.eps_between >= 0.0) || !(self.eps_within >= 0.0) {
            return Err(Error::param("eps_between/eps_within", "must be nonnegative"));
        }
        Ok(())
    }
}

/// Memoized coalition evaluation keyed by bitmask.
struct Evaluator<'g, U: ?Sized> {
    game: &'g U,
    seen: BTreeMap<u64, Vec<f64>>,
}

impl<U: ClassUtility + ?Sized> Evaluator<'_, U> {
    fn get(&mut self, mask: u64) -> Result<Vec<f64>> {
        if let Some(v) = self.seen.get(&mask) {
            return Ok(v.clone());
        }
        let v = self.game.utility(&members(mask, self.game.num_players()))?;
        self.seen.insert(mask, v.clone());
        Ok(v)
    }
}

pub fn gtg_shapley<U: ClassUtility + ?Sized>(game: &U, config: &GtgConfig, temperature: f64) -> Result<Valuation> {
    config.validate()?;
    let n = game.num_players();
    if n == 0 {
        return Err(Error::EmptyCohort);
    }
    if n > 63 {
        return Err(Error::CohortTooLarge { size: n, limit: 63 });
    }
    let classes = game.num_classes();
    let full_mask = (1u64 << n) - 1;
    let mut eval = Evaluator {
        game,
        seen: BTreeMap::new(),
    };
    let v0 = eval.get(0)?;
    let v_full = eval.get(full_mask)?;

    if l1_gap(&v_full, &v0) <= config.eps_between {
        return Valuation::truncated(n, v0, v_full, temperature);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut phi = ClassShapleyMatrix::zeros(n, classes);
    let mut perm = Vec::with_capacity(n);
    // Marginals seen per player. A round visits every player n times, so a
    // per-round `(r-1)/r` discount would overweight the latest samples.
    let mut samples = vec![0usize; n];
    for _ in 0..config.max_permutations {
        let previous = phi.values.clone();
        for leader in 0..n {
            perm.clear();
            perm.push(leader);
            perm.extend((0..n).filter(|&k| k != leader));
            perm[1..].shuffle(&mut rng);

            let mut mask = 0u64;
            let mut v_prev = v0.clone();
            for &player in &perm {
                mask |= 1 << player;
                let v_next = if l1_gap(&v_full, &v_prev) < config.eps_within {
                    v_prev.clone()
                } else {
                    eval.get(mask)?
                };
                samples[player] += 1;
                let k = samples[player] as f64;
                for (c, entry) in phi.values[player].iter_mut().enumerate() {
                    *entry = (k - 1.0) / k * *entry + (v_next[c] - v_prev[c]) / k;
                }
                v_prev = v_next;
            }
        }
        let moved = phi
            .values
            .iter()
            .flatten()
            .zip(previous.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if moved < config.convergence_tol {
            break;
        }
    }

    let mut seen = eval.seen.into_iter();
    let (_, empty) = seen.next().expect("empty coalition evaluated first");
    let mut cache = SubsetUtilityCache::new(empty);
    for (mask, utility) in seen {
        cache.insert(members(mask, n), utility);
    }
    Valuation::from_cache(phi, cache, temperature)
}

/// GTG estimate for a round's client models. Returns `(φ, β, best set)`.
pub fn gtg_class_shapley(
    client_models: &[ModelParams],
    client_sizes: &[usize],
    base_model: &ModelParams,
    validation: DataView<'_>,
    config: &GtgConfig,
    temperature: f64,
) -> Result<(ClassShapleyMatrix, Vec<f64>, Vec<usize>)> {
    let game = ModelUtility {
        models: client_models,
        sizes: client_sizes,
        base: base_model,
        validation,
    };
    let v = gtg_shapley(&game, config, temperature)?;
    Ok((v.shapley, v.beta, v.best_subset))
}
