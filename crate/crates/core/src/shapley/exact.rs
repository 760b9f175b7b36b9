use rayon::prelude::*;

use super::{members, ClassShapleyMatrix, ClassUtility, ModelUtility, SubsetUtilityCache, Valuation};
use crate::data::DataView;
use crate::error::{Error, Result};
use crate::nn::ModelParams;

/// Largest cohort the full `2^n` enumeration accepts.
pub const EXACT_COHORT_LIMIT: usize = 16;

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Utilities of all `2^n` coalitions, indexed by bitmask.
pub(crate) fn utility_table<U: ClassUtility + ?Sized>(game: &U) -> Result<Vec<Vec<f64>>> {
    let n = game.num_players();
    if n == 0 {
        return Err(Error::EmptyCohort);
    }
    if n > EXACT_COHORT_LIMIT {
        return Err(Error::CohortTooLarge {
            size: n,
            limit: EXACT_COHORT_LIMIT,
        });
    }
    (0..1u64 << n)
        .into_par_iter()
        .map(|mask| game.utility(&members(mask, n)))
        .collect()
}

/// Class-wise Shapley values by enumerating every coalition.
///
/// With `normalize` each marginal is weighted by `|Q|!(n-|Q|-1)!/n!` (efficient
/// Shapley values). Without it the `1/n` factor is dropped, so the values sum to
/// `n · (V(K) - V(∅))` per class.
pub fn exact_shapley<U: ClassUtility + ?Sized>(
    game: &U,
    normalize: bool,
) -> Result<(ClassShapleyMatrix, SubsetUtilityCache)> {
    let table = utility_table(game)?;
    let n = game.num_players();
    let classes = game.num_classes();
    let norm = if normalize { 1.0 / n as f64 } else { 1.0 };
    let mut phi = ClassShapleyMatrix::zeros(n, classes);
    for (i, row) in phi.values.iter_mut().enumerate() {
        let bit = 1u64 << i;
        for mask in (0..1u64 << n).filter(|m| m & bit == 0) {
            let weight = norm / binomial(n - 1, mask.count_ones() as usize);
            let (with, without) = (&table[(mask | bit) as usize], &table[mask as usize]);
            for c in 0..classes {
                row[c] += weight * (with[c] - without[c]);
            }
        }
    }
    let mut cache = SubsetUtilityCache::new(table[0].clone());
    for (mask, utility) in table.into_iter().enumerate().skip(1) {
        cache.insert(members(mask as u64, n), utility);
    }
    Ok((phi, cache))
}

/// Exact class-wise Shapley values of a round's client models.
pub fn exact_class_shapley(
    client_models: &[ModelParams],
    client_sizes: &[usize],
    base_model: &ModelParams,
    validation: DataView<'_>,
    normalize: bool,
) -> Result<(ClassShapleyMatrix, SubsetUtilityCache)> {
    let game = ModelUtility {
        models: client_models,
        sizes: client_sizes,
        base: base_model,
        validation,
    };
    exact_shapley(&game, normalize)
}

pub fn exact_valuation<U: ClassUtility + ?Sized>(game: &U, normalize: bool, temperature: f64) -> Result<Valuation> {
    let (phi, cache) = exact_shapley(game, normalize)?;
    Valuation::from_cache(phi, cache, temperature)
}
