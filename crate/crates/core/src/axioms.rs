//! Randomized checks of the Shapley axioms on scripted utility games.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::shapley::{exact_shapley, ClassUtility, TabularGame};

/// Tolerance for efficiency, symmetry and additivity.
pub const AXIOM_TOLERANCE: f64 = 1e-9;
/// Tolerance against the all-permutations average.
pub const ORACLE_TOLERANCE: f64 = 1e-12;
const CLASSES: usize = 3;

/// Average marginal contribution over every ordering of the players.
pub fn permutation_shapley(game: &TabularGame) -> Vec<Vec<f64>> {
    let n = game.num_players();
    let classes = game.num_classes();
    let mut sums = vec![vec![0.0; classes]; n];
    let mut count = 0usize;
    let mut order: Vec<usize> = (0..n).collect();
    permute(&mut order, 0, &mut |perm| {
        count += 1;
        let mut mask = 0u64;
        for &p in perm {
            let before = game.value(mask);
            mask |= 1 << p;
            let after = game.value(mask);
            for c in 0..classes {
                sums[p][c] += after[c] - before[c];
            }
        }
    });
    for row in &mut sums {
        row.iter_mut().for_each(|v| *v /= count as f64);
    }
    sums
}

fn permute(items: &mut [usize], k: usize, visit: &mut dyn FnMut(&[usize])) {
    if k == items.len() {
        visit(items);
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        permute(items, k + 1, visit);
        items.swap(k, i);
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AxiomCheck {
    pub name: &'static str,
    pub games: usize,
    pub max_error: f64,
    pub tolerance: f64,
}

impl AxiomCheck {
    fn new(name: &'static str, tolerance: f64) -> Self {
        Self {
            name,
            games: 0,
            max_error: 0.0,
            tolerance,
        }
    }

    fn observe(&mut self, error: f64) {
        self.games += 1;
        // NaN must register as a failure
        if error.is_nan() || error > self.max_error {
            self.max_error = error;
        }
    }

    pub fn passed(&self) -> bool {
        self.max_error <= self.tolerance
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AxiomReport {
    pub max_players: usize,
    pub trials: usize,
    pub seed: u64,
    pub checks: Vec<AxiomCheck>,
}

impl AxiomReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(AxiomCheck::passed)
    }
}

impl fmt::Display for AxiomReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<12} {:>6} {:>12} {:>10}  result",
            "axiom", "games", "max error", "tolerance"
        )?;
        for c in &self.checks {
            writeln!(
                f,
                "{:<12} {:>6} {:>12.3e} {:>10.0e}  {}",
                c.name,
                c.games,
                c.max_error,
                c.tolerance,
                if c.passed() { "PASS" } else { "FAIL" }
            )?;
        }
        Ok(())
    }
}

fn max_abs_diff<'a>(a: impl IntoIterator<Item = &'a f64>, b: impl IntoIterator<Item = &'a f64>) -> f64 {
    a.into_iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Runs `trials` random games with player counts cycling through `2..=max_players`
/// (or a single player when `max_players == 1`).
pub fn run_axiom_suite(max_players: usize, trials: usize, seed: u64) -> Result<AxiomReport> {
    if max_players == 0 || max_players > 10 {
        return Err(Error::param("max_players", format!("must lie in 1..=10, got {max_players}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut efficiency = AxiomCheck::new("efficiency", AXIOM_TOLERANCE);
    let mut symmetry = AxiomCheck::new("symmetry", AXIOM_TOLERANCE);
    let mut null = AxiomCheck::new("null-player", 0.0);
    let mut additivity = AxiomCheck::new("additivity", AXIOM_TOLERANCE);
    let mut oracle = AxiomCheck::new("oracle", ORACLE_TOLERANCE);

    for trial in 0..trials {
        let n = if max_players == 1 { 1 } else { 2 + trial % (max_players - 1) };
        let game = TabularGame::random(n, CLASSES, &mut rng);
        let (phi, _) = exact_shapley(&game, true)?;

        let full = game.value((1 << n) - 1);
        let empty = game.value(0);
        let gains: Vec<f64> = full.iter().zip(empty).map(|(a, b)| a - b).collect();
        efficiency.observe(max_abs_diff(&phi.column_sums(), &gains));
        oracle.observe(max_abs_diff(phi.values.iter().flatten(), permutation_shapley(&game).iter().flatten()));

        let other = TabularGame::random(n, CLASSES, &mut rng);
        let (phi_other, _) = exact_shapley(&other, true)?;
        let (phi_sum, _) = exact_shapley(&game.sum(&other)?, true)?;
        let summed: Vec<f64> = phi
            .values
            .iter()
            .flatten()
            .zip(phi_other.values.iter().flatten())
            .map(|(a, b)| a + b)
            .collect();
        additivity.observe(max_abs_diff(phi_sum.values.iter().flatten(), &summed));

        if n >= 2 {
            let base = TabularGame::random(n - 1, CLASSES, &mut rng);
            let twin = rng.random_range(0..n - 1);
            let twinned = base.with_twin(twin, &mut rng);
            let (phi_twin, _) = exact_shapley(&twinned, true)?;
            symmetry.observe(max_abs_diff(phi_twin.row(twin), phi_twin.row(n - 1)));

            let with_null = base.with_null_player();
            let (phi_null, _) = exact_shapley(&with_null, true)?;
            null.observe(phi_null.row(n - 1).iter().map(|v| v.abs()).fold(0.0, f64::max));
        }
    }

    Ok(AxiomReport {
        max_players,
        trials,
        seed,
        checks: vec![efficiency, symmetry, null, additivity, oracle],
    })
}
