//! Check efficiency, symmetry, null player and additivity on random games.
//!
//! `cargo run --release --example shapley_axioms -- [max_players] [trials] [seed]`

use fedms::axioms::run_axiom_suite;

fn main() -> fedms::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<u64>().expect("numeric argument"));
    let max_players = args.next().unwrap_or(6) as usize;
    let trials = args.next().unwrap_or(100) as usize;
    let seed = args.next().unwrap_or(0);
    let report = run_axiom_suite(max_players, trials, seed)?;
    print!("{report}");
    if !report.passed() {
        std::process::exit(1);
    }
    Ok(())
}
