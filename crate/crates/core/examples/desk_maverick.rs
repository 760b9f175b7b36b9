//! Desk-scale Maverick scenario: FedMS against random selection and against
//! its own run with the Maverick removed, averaged over several seeds.
//!
//! `cargo run --release --example desk_maverick -- [seeds]`

use fedms::config::{parse_config_str, Strategy};
use fedms::engine::{ablation_without_mavericks, run_experiment};

fn main() -> fedms::Result<()> {
    let seeds: u64 = std::env::args().nth(1).map_or(5, |s| s.parse().expect("seed count"));
    let base = parse_config_str(include_str!("../configs/desk_maverick.toml"))?;
    let mut rows = Vec::new();
    for seed in 0..seeds {
        let mut fedms = base.clone();
        fedms.experiment.seed = seed;
        let mut fedavg = fedms.clone();
        fedavg.strategy.name = Strategy::Fedavg;

        let ms = run_experiment(&fedms)?;
        let avg = run_experiment(&fedavg)?;
        let ablated = ablation_without_mavericks(&fedms)?;
        let s = &ms.summary;
        let (mav, rest) = (s.maverick_mean_reward.unwrap_or(0.0), s.non_maverick_mean_reward.unwrap_or(0.0));
        println!(
            "seed {seed}: fedms {:.4}  fedavg {:.4}  without mavericks {:.4}  maverick reward {mav:.4} vs {rest:.4}",
            s.final_test_accuracy, avg.summary.final_test_accuracy, ablated.summary.final_test_accuracy
        );
        rows.push([s.final_test_accuracy, avg.summary.final_test_accuracy, ablated.summary.final_test_accuracy, mav, rest]);
    }
    let mean = |k: usize| rows.iter().map(|r| r[k]).sum::<f64>() / rows.len() as f64;
    println!(
        "mean: fedms {:.4}  fedavg {:.4}  without mavericks {:.4}  maverick reward {:.4} vs {:.4}",
        mean(0),
        mean(1),
        mean(2),
        mean(3),
        mean(4)
    );
    Ok(())
}
