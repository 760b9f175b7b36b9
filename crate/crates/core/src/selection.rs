//! Client selection: contribution-score sampling plus the baseline selectors.
//!
//! Every cohort is returned sorted by client id.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{cosine_similarity, ModelParams};
use crate::shapley::{softmax, ClassShapleyMatrix};

/// Accumulated class-wise values and the scores derived from them, for every client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContributionState {
    /// `S[i][c]`, rows for all clients (not only the cohort).
    pub accumulated: Vec<Vec<f64>>,
    /// `Ŝ[i]`.
    pub scores: Vec<f64>,
    pub beta: Vec<f64>,
    pub alpha: f64,
    pub temperature: f64,
}

impl ContributionState {
    /// Zero scores and uniform class difficulty.
    pub fn new(num_clients: usize, num_classes: usize, alpha: f64, temperature: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::param("alpha", format!("must lie in [0, 1], got {alpha}")));
        }
        if !(temperature > 0.0) {
            return Err(Error::NonPositiveTemperature(temperature));
        }
        Ok(Self {
            accumulated: vec![vec![0.0; num_classes]; num_clients],
            scores: vec![0.0; num_clients],
            beta: vec![1.0 / num_classes as f64; num_classes],
            alpha,
            temperature,
        })
    }

    pub fn num_clients(&self) -> usize {
        self.accumulated.len()
    }

    /// Uniformly summed accumulated values (no class weighting), per client.
    pub fn scalar_values(&self) -> Vec<f64> {
        self.accumulated.iter().map(|row| row.iter().sum()).collect()
    }
}

/// Exponential blending `S ← α·S + (1 − α)·φ` for the selected clients only.
pub fn accumulate_scores(
    state: &mut ContributionState,
    phi: &ClassShapleyMatrix,
    selected: &[usize],
    alpha: f64,
) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::param("alpha", format!("must lie in [0, 1], got {alpha}")));
    }
    if phi.num_players() != selected.len() {
        return Err(Error::LengthMismatch {
            left: phi.num_players(),
            right: selected.len(),
        });
    }
    let num_clients = state.num_clients();
    if let Some(&id) = selected.iter().find(|&&id| id >= num_clients) {
        return Err(Error::ClientOutOfRange { id, num_clients });
    }
    for (row, &id) in phi.values.iter().zip(selected) {
        for (s, p) in state.accumulated[id].iter_mut().zip(row) {
            *s = alpha * *s + (1.0 - alpha) * p;
        }
    }
    Ok(())
}

/// `Ŝ[i] = Σ_c β[c]·S[i][c]`.
pub fn contribution_scores(state: &ContributionState) -> Vec<f64> {
    state
        .accumulated
        .iter()
        .map(|row| row.iter().zip(&state.beta).map(|(s, b)| s * b).sum())
        .collect()
}

pub fn selection_probabilities(scores: &[f64]) -> Vec<f64> {
    softmax(scores)
}

/// Draws `m` distinct clients one at a time, renormalizing over the remaining mass.
pub fn sample_cohort<R: Rng>(probabilities: &[f64], m: usize, rng: &mut R) -> Result<Vec<usize>> {
    let eligible = probabilities.iter().filter(|&&p| p > 0.0).count();
    if m > eligible {
        return Err(Error::NotEnoughClients {
            requested: m,
            available: eligible,
        });
    }
    let mut weights = probabilities.to_vec();
    let mut chosen = Vec::with_capacity(m);
    for _ in 0..m {
        let total: f64 = weights.iter().sum();
        let target = rng.random::<f64>() * total;
        let mut running = 0.0;
        let mut pick = None;
        for (i, &w) in weights.iter().enumerate() {
            if w <= 0.0 {
                continue;
            }
            running += w;
            pick = Some(i);
            if target < running {
                break;
            }
        }
        let i = pick.expect("positive mass remains");
        chosen.push(i);
        weights[i] = 0.0;
    }
    chosen.sort_unstable();
    Ok(chosen)
}

/// Per-round rewards `R_i = Σ_c β[c]·φ[i][c]` for the cohort, keyed by client id.
pub fn shapley_rewards(phi: &ClassShapleyMatrix, beta: &[f64], selected: &[usize]) -> Result<BTreeMap<usize, f64>> {
    if phi.num_players() != selected.len() {
        return Err(Error::LengthMismatch {
            left: phi.num_players(),
            right: selected.len(),
        });
    }
    Ok(selected
        .iter()
        .zip(&phi.values)
        .map(|(&id, row)| (id, row.iter().zip(beta).map(|(p, b)| p * b).sum()))
        .collect())
}

/// Per-round rewards and their running totals.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardsLedger {
    pub rounds: BTreeMap<usize, BTreeMap<usize, f64>>,
    pub totals: Vec<f64>,
}

impl RewardsLedger {
    pub fn new(num_clients: usize) -> Self {
        Self {
            rounds: BTreeMap::new(),
            totals: vec![0.0; num_clients],
        }
    }

    pub fn record(&mut self, round: usize, rewards: BTreeMap<usize, f64>) -> Result<()> {
        let num_clients = self.totals.len();
        if let Some(&id) = rewards.keys().find(|&&id| id >= num_clients) {
            return Err(Error::ClientOutOfRange { id, num_clients });
        }
        if self.rounds.contains_key(&round) {
            return Err(Error::param("round", format!("rewards for round {round} already recorded")));
        }
        for (&id, &r) in &rewards {
            self.totals[id] += r;
        }
        self.rounds.insert(round, rewards);
        Ok(())
    }

    /// Totals recomputed from the per-round entries in round order.
    pub fn replayed_totals(&self) -> Vec<f64> {
        let mut totals = vec![0.0; self.totals.len()];
        for rewards in self.rounds.values() {
            for (&id, &r) in rewards {
                totals[id] += r;
            }
        }
        totals
    }
}

/// `1 − cos(w_i, w_agg)` for each participant model.
pub fn init_scores_cosine(client_models: &[ModelParams], aggregate: &ModelParams) -> Result<Vec<f64>> {
    client_models
        .iter()
        .map(|m| {
            aggregate.same_shape(m)?;
            Ok(1.0 - cosine_similarity(m.weights(), aggregate.weights())?)
        })
        .collect()
}

/// Uniform sampling without replacement.
pub fn select_random<R: Rng>(num_clients: usize, m: usize, rng: &mut R) -> Result<Vec<usize>> {
    if m > num_clients {
        return Err(Error::NotEnoughClients {
            requested: m,
            available: num_clients,
        });
    }
    let mut chosen = index::sample(rng, num_clients, m).into_vec();
    chosen.sort_unstable();
    Ok(chosen)
}

/// Indices of the `m` largest values; ties go to the lower index.
fn top_m(values: &[f64], candidates: &[usize], m: usize) -> Vec<usize> {
    let mut order = candidates.to_vec();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order.truncate(m);
    order.sort_unstable();
    order
}

/// Power-of-choice: `d` uniform candidates, keep the `m` with the highest local loss.
pub fn select_poc<R: Rng>(local_losses: &[f64], candidates: usize, m: usize, rng: &mut R) -> Result<Vec<usize>> {
    if m > candidates {
        return Err(Error::param("poc_candidates", format!("{candidates} candidates cannot yield {m} clients")));
    }
    let pool = select_random(local_losses.len(), candidates, rng)?;
    Ok(top_m(local_losses, &pool, m))
}

/// Sampling weights `n_i/n + c0·γ^t·emd_i`, normalized, drawn without replacement.
#[allow(clippy::too_many_arguments)]
pub fn select_emd<R: Rng>(
    client_sizes: &[usize],
    emd_values: &[f64],
    round: usize,
    weight: f64,
    decay: f64,
    m: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if client_sizes.len() != emd_values.len() {
        return Err(Error::LengthMismatch {
            left: client_sizes.len(),
            right: emd_values.len(),
        });
    }
    if !(weight >= 0.0) {
        return Err(Error::param("emd_weight", "must be nonnegative"));
    }
    if !(decay > 0.0 && decay <= 1.0) {
        return Err(Error::param("emd_decay", format!("must lie in (0, 1], got {decay}")));
    }
    let n: usize = client_sizes.iter().sum();
    let boost = weight * decay.powi(round.min(i32::MAX as usize) as i32);
    let raw: Vec<f64> = client_sizes
        .iter()
        .zip(emd_values)
        .map(|(&s, &e)| s as f64 / n as f64 + boost * e)
        .collect();
    let total: f64 = raw.iter().sum();
    let probabilities: Vec<f64> = raw.iter().map(|w| w / total).collect();
    sample_cohort(&probabilities, m, rng)
}

/// ε-greedy over softmax of accumulated scalar values: with probability `epsilon`
/// the round explores uniformly instead.
pub fn select_sfedavg<R: Rng>(scalar_values: &[f64], m: usize, epsilon: f64, rng: &mut R) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::param("sfedavg_epsilon", format!("must lie in [0, 1], got {epsilon}")));
    }
    if rng.random::<f64>() < epsilon {
        select_random(scalar_values.len(), m, rng)
    } else {
        sample_cohort(&softmax(scalar_values), m, rng)
    }
}

/// Deterministic top-`m` by accumulated value, ties to the lower id.
pub fn select_greedy(scalar_values: &[f64], m: usize) -> Result<Vec<usize>> {
    if m > scalar_values.len() {
        return Err(Error::NotEnoughClients {
            requested: m,
            available: scalar_values.len(),
        });
    }
    let all: Vec<usize> = (0..scalar_values.len()).collect();
    Ok(top_m(scalar_values, &all, m))
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(17)
    }

    fn phi(rows: &[&[f64]]) -> ClassShapleyMatrix {
        ClassShapleyMatrix {
            round: 0,
            values: rows.iter().map(|r| r.to_vec()).collect(),
        }
    }

    #[test]
    fn accumulate_cases() {
        let mut state = ContributionState::new(3, 2, 0.6, 1.0).unwrap();
        state.accumulated = vec![vec![0.5, 0.5]; 3];
        let before = state.clone();
        accumulate_scores(&mut state, &phi(&[&[1.0, 0.0]]), &[1], 1.0).unwrap();
        assert_eq!(state, before);

        accumulate_scores(&mut state, &phi(&[&[0.9, -0.2]]), &[2], 0.0).unwrap();
        assert_eq!(state.accumulated[2], vec![0.9, -0.2]);

        accumulate_scores(&mut state, &phi(&[&[1.0, 1.0]]), &[0], 0.6).unwrap();
        assert!((state.accumulated[0][0] - 0.7).abs() < 1e-15);
        assert_eq!(state.accumulated[1], vec![0.5, 0.5]);

        assert!(matches!(
            accumulate_scores(&mut state, &phi(&[&[1.0, 1.0]]), &[3], 0.6),
            Err(Error::ClientOutOfRange { id: 3, .. })
        ));
    }

    #[test]
    fn contribution_score_cases() {
        let mut state = ContributionState::new(2, 2, 0.6, 1.0).unwrap();
        assert_eq!(contribution_scores(&state), vec![0.0, 0.0]);
        state.accumulated = vec![vec![0.2, 0.4], vec![0.1, 0.7]];
        assert!((contribution_scores(&state)[0] - 0.3).abs() < 1e-15);
        state.beta = vec![0.0, 1.0];
        assert_eq!(contribution_scores(&state), vec![0.4, 0.7]);
    }

    #[test]
    fn probability_cases() {
        assert_eq!(selection_probabilities(&[2.0; 4]), vec![0.25; 4]);
        let p = selection_probabilities(&[0.0, 3f64.ln()]);
        assert!((p[0] - 0.25).abs() < 1e-15 && (p[1] - 0.75).abs() < 1e-15);
        // dyadic scores and an integer shift are exact in binary floating point
        let s = [0.25, -1.5, 0.125];
        let shifted: Vec<f64> = s.iter().map(|x| x + 8.0).collect();
        assert_eq!(selection_probabilities(&s), selection_probabilities(&shifted));
    }

    #[test]
    fn sampling_cases() {
        let mut r = rng();
        assert_eq!(sample_cohort(&[0.2, 0.3, 0.5], 3, &mut r).unwrap(), vec![0, 1, 2]);
        assert_eq!(sample_cohort(&[0.0, 1.0, 0.0], 1, &mut r).unwrap(), vec![1]);
        for _ in 0..50 {
            assert_eq!(sample_cohort(&[0.5, 0.5, 0.0], 2, &mut r).unwrap(), vec![0, 1]);
        }
        assert!(matches!(
            sample_cohort(&[0.5, 0.5, 0.0], 3, &mut r),
            Err(Error::NotEnoughClients { requested: 3, available: 2 })
        ));
    }

    #[test]
    fn reward_cases() {
        let r = shapley_rewards(&phi(&[&[0.2, 0.4], &[0.0, 0.0]]), &[0.5, 0.5], &[3, 7]).unwrap();
        assert!((r[&3] - 0.3).abs() < 1e-15);
        assert_eq!(r[&7], 0.0);
        let r = shapley_rewards(&phi(&[&[1.0, 0.0]]), &[0.4013, 0.5987], &[0]).unwrap();
        assert_eq!(r[&0], 0.4013);

        let mut ledger = RewardsLedger::new(8);
        ledger.record(0, BTreeMap::from([(3, 0.1), (7, 0.2)])).unwrap();
        ledger.record(1, BTreeMap::from([(3, 0.3)])).unwrap();
        assert_eq!(ledger.totals, ledger.replayed_totals());
        assert!(ledger.record(1, BTreeMap::new()).is_err());
    }

    #[test]
    fn cosine_initialization() {
        let agg = ModelParams::from_weights(&[1, 1], vec![1.0, 2.0]).unwrap();
        let same = agg.clone();
        let opposite = ModelParams::from_weights(&[1, 1], vec![-1.0, -2.0]).unwrap();
        let tilted = ModelParams::from_weights(&[1, 1], vec![2.0, 1.0]).unwrap();
        let s = init_scores_cosine(&[same, opposite, tilted], &agg).unwrap();
        assert!(s[0].abs() < 1e-15);
        assert!((s[1] - 2.0).abs() < 1e-15);
        assert!(s[2] > s[0] && s[2] < s[1]);
    }

    #[test]
    fn baseline_selectors() {
        let mut r = rng();
        assert_eq!(select_random(5, 5, &mut r).unwrap(), vec![0, 1, 2, 3, 4]);
        assert!(select_random(5, 0, &mut r).unwrap().is_empty());
        assert_eq!(
            select_random(10, 3, &mut rng()).unwrap(),
            select_random(10, 3, &mut rng()).unwrap()
        );

        let losses = [0.3, 0.9, 0.1, 0.9, 0.5];
        assert_eq!(select_poc(&losses, 5, 2, &mut r).unwrap(), vec![1, 3]);
        assert_eq!(select_poc(&[1.0; 5], 5, 3, &mut r).unwrap(), vec![0, 1, 2]);
        assert_eq!(select_poc(&losses, 3, 3, &mut r).unwrap().len(), 3);
        assert!(select_poc(&losses, 2, 3, &mut r).is_err());

        assert_eq!(select_greedy(&[0.1, 0.5, 0.3], 1).unwrap(), vec![1]);
        assert_eq!(select_greedy(&[0.0; 4], 2).unwrap(), vec![0, 1]);
        assert_eq!(select_greedy(&[0.9, 0.7, 0.5, 0.3], 2).unwrap(), vec![0, 1]);
        assert!(select_greedy(&[0.0; 2], 3).is_err());
    }

    #[test]
    fn emd_and_sfedavg_selectors() {
        let mut r = rng();
        // with c0 = 0 only sizes matter, so an empty client is never drawn
        for _ in 0..20 {
            assert_eq!(select_emd(&[3, 0], &[0.0, 1.0], 0, 0.0, 0.99, 1, &mut r).unwrap(), vec![0]);
        }
        let cohort = select_emd(&[10, 10, 10, 10], &[0.2; 4], 3, 1.0, 0.99, 2, &mut r).unwrap();
        assert_eq!(cohort.len(), 2);
        assert!(select_emd(&[1, 1], &[0.0, 0.0], 0, 1.0, 0.0, 1, &mut r).is_err());

        let one_hot = [50.0, 0.0, 0.0];
        for _ in 0..20 {
            assert_eq!(select_sfedavg(&one_hot, 1, 0.0, &mut r).unwrap(), vec![0]);
        }
        assert!(select_sfedavg(&one_hot, 1, 1.5, &mut r).is_err());
    }
}
