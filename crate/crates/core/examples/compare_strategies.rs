//! Every selection strategy on the desk Maverick scenario, one seed.
//!
//! `cargo run --release --example compare_strategies -- [seed]`

use fedms::config::{parse_config_str, Strategy};
use fedms::engine::run_experiment;

fn main() -> fedms::Result<()> {
    let seed = std::env::args().nth(1).map_or(0, |s| s.parse().expect("seed"));
    let mut config = parse_config_str(include_str!("../configs/desk_maverick.toml"))?;
    config.experiment.seed = seed;
    println!("strategy    final acc  maverick reward  others (mean)");
    for strategy in Strategy::ALL {
        config.strategy.name = strategy;
        let s = run_experiment(&config)?.summary;
        println!(
            "{:<10} {:>10.4} {:>16.4} {:>14.4}",
            format!("{strategy:?}").to_lowercase(),
            s.final_test_accuracy,
            s.maverick_mean_reward.unwrap_or(f64::NAN),
            s.non_maverick_mean_reward.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
