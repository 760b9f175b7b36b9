//! From class-wise values to class difficulty, contribution scores, selection
//! probabilities and a sampled cohort.
//!
//! `cargo run --example selection_probabilities`

use fedms::selection::{
    accumulate_scores, contribution_scores, sample_cohort, selection_probabilities, shapley_rewards, ContributionState,
};
use fedms::shapley::{class_difficulty, ClassShapleyMatrix};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> fedms::Result<()> {
    let mut state = ContributionState::new(5, 3, 0.6, 1.0)?;
    // last round's cohort and its class-wise values; client 4 is the only one lifting class 2
    let cohort = [1, 3, 4];
    let phi = ClassShapleyMatrix {
        round: 0,
        values: vec![vec![0.20, 0.15, -0.05], vec![0.18, 0.20, -0.02], vec![-0.04, 0.02, 0.60]],
    };
    let best_accuracy = [0.95, 0.92, 0.40];

    state.beta = class_difficulty(&best_accuracy, state.temperature)?;
    let alpha = state.alpha;
    accumulate_scores(&mut state, &phi, &cohort, alpha)?;
    state.scores = contribution_scores(&state);
    let p = selection_probabilities(&state.scores);

    println!("beta      {:.3?}", state.beta);
    println!("scores    {:.3?}", state.scores);
    println!("P         {:.3?}", p);
    println!("rewards   {:.3?}", shapley_rewards(&phi, &state.beta, &cohort)?);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for draw in 0..3 {
        println!("cohort {draw}  {:?}", sample_cohort(&p, 2, &mut rng)?);
    }
    Ok(())
}
