//! Class-wise Shapley valuation of a round's cohort.
//!
//! A cooperative game here maps every coalition of cohort positions to a vector of
//! per-class utilities. In federated rounds the utility of a coalition is the
//! per-class validation accuracy of the size-weighted average of its members'
//! models (the empty coalition keeps the current global model). Scripted games
//! implement the same trait so the engines can be checked against brute force.

mod exact;
mod game;
mod gtg;
mod tmr;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use exact::{exact_class_shapley, exact_shapley, exact_valuation, EXACT_COHORT_LIMIT};
pub use game::TabularGame;
pub use gtg::{gtg_class_shapley, gtg_shapley, GtgConfig};
pub use tmr::{tmr_class_shapley, tmr_shapley, TmrConfig};

use crate::data::DataView;
use crate::error::{Error, Result};
use crate::nn::{evaluate, ConfusionMatrix, ModelParams};

/// A game over `num_players` players with vector-valued (per-class) utility.
pub trait ClassUtility: Sync {
    fn num_players(&self) -> usize;
    fn num_classes(&self) -> usize;
    /// Utility of a coalition given as strictly increasing player positions.
    fn utility(&self, coalition: &[usize]) -> Result<Vec<f64>>;
}

/// Per-class recall: `N[c][c] / Σ_j N[c][j]`.
pub fn class_accuracy(confusion: &ConfusionMatrix) -> Result<Vec<f64>> {
    (0..confusion.num_classes())
        .map(|c| {
            let total: u64 = confusion.row(c).iter().sum();
            if total == 0 {
                return Err(Error::EmptyClass(c));
            }
            Ok(confusion.get(c, c) as f64 / total as f64)
        })
        .collect()
}

/// Size-weighted average of the models in `subset`; the empty subset yields `base`.
pub fn model_average(
    models: &[ModelParams],
    sizes: &[usize],
    base: &ModelParams,
    subset: &[usize],
) -> Result<ModelParams> {
    if models.len() != sizes.len() {
        return Err(Error::LengthMismatch {
            left: models.len(),
            right: sizes.len(),
        });
    }
    if subset.is_empty() {
        return Ok(base.clone());
    }
    let mut total = 0usize;
    for &i in subset {
        let model = models.get(i).ok_or(Error::ClientOutOfRange {
            id: i,
            num_clients: models.len(),
        })?;
        base.same_shape(model)?;
        if sizes[i] == 0 {
            return Err(Error::param("client size", format!("position {i} has zero samples")));
        }
        total += sizes[i];
    }
    let mut acc = vec![0.0; base.weights().len()];
    for &i in subset {
        let coef = sizes[i] as f64 / total as f64;
        for (a, w) in acc.iter_mut().zip(models[i].weights()) {
            *a += coef * w;
        }
    }
    ModelParams::from_weights(base.layer_sizes(), acc)
}

/// The federated game: coalition utility is the class accuracy of the averaged model.
pub struct ModelUtility<'a> {
    pub models: &'a [ModelParams],
    pub sizes: &'a [usize],
    pub base: &'a ModelParams,
    pub validation: DataView<'a>,
}

impl ClassUtility for ModelUtility<'_> {
    fn num_players(&self) -> usize {
        self.models.len()
    }

    fn num_classes(&self) -> usize {
        self.base.num_classes()
    }

    fn utility(&self, coalition: &[usize]) -> Result<Vec<f64>> {
        let model = model_average(self.models, self.sizes, self.base, coalition)?;
        class_accuracy(&evaluate(&model, &self.validation)?)
    }
}

/// Class utilities of every coalition an engine evaluated, keyed by sorted positions.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SubsetUtilityCache {
    entries: BTreeMap<Vec<usize>, Vec<f64>>,
}

impl SubsetUtilityCache {
    pub fn new(empty_utility: Vec<f64>) -> Self {
        let mut entries = BTreeMap::new();
        entries.insert(Vec::new(), empty_utility);
        Self { entries }
    }

    pub fn insert(&mut self, coalition: Vec<usize>, utility: Vec<f64>) {
        debug_assert!(coalition.windows(2).all(|w| w[0] < w[1]));
        self.entries.insert(coalition, utility);
    }

    pub fn get(&self, coalition: &[usize]) -> Option<&Vec<f64>> {
        self.entries.get(coalition)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Vec<usize>, &Vec<f64>)> {
        self.entries.iter()
    }
}

/// The nonempty cached coalition with the largest total class utility. Ties prefer
/// fewer members, then the lexicographically smaller member list.
pub fn best_subset(cache: &SubsetUtilityCache) -> Option<(Vec<usize>, Vec<f64>)> {
    let mut best: Option<(&Vec<usize>, &Vec<f64>, f64)> = None;
    // BTreeMap iterates in lexicographic order, so strict comparisons keep the first.
    for (coalition, utility) in cache.iter().filter(|(k, _)| !k.is_empty()) {
        let total: f64 = utility.iter().sum();
        let better = match best {
            None => true,
            Some((b, _, bt)) => total > bt || (total == bt && coalition.len() < b.len()),
        };
        if better {
            best = Some((coalition, utility, total));
        }
    }
    best.map(|(k, v, _)| (k.clone(), v.clone()))
}

/// Class difficulty: `softmax((1 - v̂) / T)`.
pub fn class_difficulty(accuracy: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0) {
        return Err(Error::NonPositiveTemperature(temperature));
    }
    let logits: Vec<f64> = accuracy.iter().map(|v| (1.0 - v) / temperature).collect();
    Ok(softmax(&logits))
}

/// Softmax with max-subtraction.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Rows are cohort positions, columns are classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassShapleyMatrix {
    pub round: usize,
    pub values: Vec<Vec<f64>>,
}

impl ClassShapleyMatrix {
    pub fn zeros(players: usize, classes: usize) -> Self {
        Self {
            round: 0,
            values: vec![vec![0.0; classes]; players],
        }
    }

    pub fn num_players(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, player: usize) -> &[f64] {
        &self.values[player]
    }

    pub fn scaled(mut self, factor: f64) -> Self {
        self.values.iter_mut().flatten().for_each(|v| *v *= factor);
        self
    }

    /// Sum over players for each class.
    pub fn column_sums(&self) -> Vec<f64> {
        let classes = self.values.first().map_or(0, Vec::len);
        (0..classes).map(|c| self.values.iter().map(|r| r[c]).sum()).collect()
    }
}

/// Everything a valuation engine hands back to the round loop.
#[derive(Debug, Clone, PartialEq)]
pub struct Valuation {
    pub shapley: ClassShapleyMatrix,
    pub beta: Vec<f64>,
    /// Best coalition, as cohort positions.
    pub best_subset: Vec<usize>,
    pub best_utility: Vec<f64>,
    pub cache: SubsetUtilityCache,
}

impl Valuation {
    fn from_cache(shapley: ClassShapleyMatrix, cache: SubsetUtilityCache, temperature: f64) -> Result<Self> {
        let (best_subset, best_utility) = best_subset(&cache).ok_or(Error::EmptyCohort)?;
        let beta = class_difficulty(&best_utility, temperature)?;
        Ok(Self {
            shapley,
            beta,
            best_subset,
            best_utility,
            cache,
        })
    }

    /// Zero values with the full cohort as the best set (used when a round is truncated).
    fn truncated(players: usize, empty: Vec<f64>, full: Vec<f64>, temperature: f64) -> Result<Self> {
        let classes = full.len();
        let mut cache = SubsetUtilityCache::new(empty);
        let everyone: Vec<usize> = (0..players).collect();
        cache.insert(everyone.clone(), full.clone());
        Ok(Self {
            shapley: ClassShapleyMatrix::zeros(players, classes),
            beta: class_difficulty(&full, temperature)?,
            best_subset: everyone,
            best_utility: full,
            cache,
        })
    }
}

pub(crate) fn l1_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

pub(crate) fn members(mask: u64, players: usize) -> Vec<usize> {
    (0..players).filter(|&i| mask >> i & 1 == 1).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_accuracy_cases() {
        let diag = ConfusionMatrix::from_rows(&[vec![5, 0, 0], vec![0, 7, 0], vec![0, 0, 9]]).unwrap();
        assert_eq!(class_accuracy(&diag).unwrap(), vec![1.0, 1.0, 1.0]);
        let m = ConfusionMatrix::from_rows(&[vec![3, 1], vec![0, 4]]).unwrap();
        assert_eq!(class_accuracy(&m).unwrap(), vec![0.75, 1.0]);
        let swapped = ConfusionMatrix::from_rows(&[vec![0, 4], vec![4, 0]]).unwrap();
        assert_eq!(class_accuracy(&swapped).unwrap(), vec![0.0, 0.0]);
        let empty_row = ConfusionMatrix::from_rows(&[vec![1, 0], vec![0, 0]]).unwrap();
        assert!(matches!(class_accuracy(&empty_row), Err(Error::EmptyClass(1))));
    }

    #[test]
    fn model_average_cases() {
        let shape = [1, 2];
        let a = ModelParams::from_weights(&shape, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = ModelParams::from_weights(&shape, vec![3.0, 4.0, 5.0, 6.0]).unwrap();
        let base = ModelParams::zeros(&shape).unwrap();
        let models = [a.clone(), b];
        assert_eq!(model_average(&models, &[5, 5], &base, &[0]).unwrap(), a);
        assert_eq!(
            model_average(&models, &[5, 5], &base, &[0, 1]).unwrap().weights(),
            &[2.0, 3.0, 4.0, 5.0]
        );
        assert_eq!(
            model_average(&models, &[1, 3], &base, &[0, 1]).unwrap().weights(),
            &[2.5, 3.5, 4.5, 5.5]
        );
        assert_eq!(model_average(&models, &[5, 5], &base, &[]).unwrap(), base);
        let odd = [ModelParams::zeros(&[2, 2]).unwrap()];
        assert!(matches!(
            model_average(&odd, &[1], &base, &[0]),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    fn cache(entries: &[(&[usize], &[f64])]) -> SubsetUtilityCache {
        let mut c = SubsetUtilityCache::new(vec![0.2, 0.2]);
        for (k, v) in entries {
            c.insert(k.to_vec(), v.to_vec());
        }
        c
    }

    #[test]
    fn best_subset_rules() {
        let c = cache(&[(&[0], &[0.9, 0.1]), (&[1], &[0.4, 0.5]), (&[0, 1], &[0.6, 0.6])]);
        assert_eq!(best_subset(&c).unwrap(), (vec![0, 1], vec![0.6, 0.6]));

        let c = cache(&[(&[0, 1, 2], &[0.5, 0.5]), (&[1, 2], &[0.5, 0.5]), (&[0], &[0.1, 0.1])]);
        assert_eq!(best_subset(&c).unwrap().0, vec![1, 2]);

        let c = cache(&[(&[1, 2], &[0.5, 0.5]), (&[0, 2], &[0.5, 0.5])]);
        assert_eq!(best_subset(&c).unwrap().0, vec![0, 2]);

        assert!(best_subset(&SubsetUtilityCache::new(vec![1.0])).is_none());
    }

    #[test]
    fn class_difficulty_cases() {
        let uniform = class_difficulty(&[0.3; 4], 1.0).unwrap();
        assert!(uniform.iter().all(|b| (b - 0.25).abs() < 1e-15));
        let hot = class_difficulty(&[0.0, 0.5, 1.0], 1e6).unwrap();
        assert!(hot.iter().all(|b| (b - 1.0 / 3.0).abs() < 1e-5));
        // softmax([0.1, 0.5]) = [1, e^0.4] / (1 + e^0.4)
        let e = 0.4f64.exp();
        let beta = class_difficulty(&[0.9, 0.5], 1.0).unwrap();
        assert!((beta[0] - 1.0 / (1.0 + e)).abs() < 1e-15);
        assert!((beta[0] - 0.4013).abs() < 5e-5 && (beta[1] - 0.5987).abs() < 5e-5);
        assert!(matches!(class_difficulty(&[0.5], 0.0), Err(Error::NonPositiveTemperature(_))));
    }
}
