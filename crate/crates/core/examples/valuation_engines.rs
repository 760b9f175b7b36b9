//! Value one round of real client models with the exact, GTG and TMR engines.
//!
//! `cargo run --release --example valuation_engines`

use std::collections::BTreeMap;

use fedms::data::{maverick_partition, stratified_split, synth_blobs};
use fedms::nn::{local_update, ModelParams, TrainConfig};
use fedms::shapley::{exact_valuation, gtg_shapley, tmr_shapley, GtgConfig, ModelUtility, TmrConfig, Valuation};

fn show(name: &str, v: &Valuation) {
    println!("{name}: best set {:?}, cache {} coalitions", v.best_subset, v.cache.len());
    for (i, row) in v.shapley.values.iter().enumerate() {
        let cells: Vec<String> = row.iter().map(|x| format!("{x:+.3}")).collect();
        println!("  client {i}: [{}]", cells.join(" "));
    }
}

fn main() -> fedms::Result<()> {
    let data = synth_blobs(4, 150, 8, 1.0, 5)?;
    let (train, validation) = stratified_split(&data, 0.3, 5)?;
    let part = maverick_partition(&train, 4, &BTreeMap::from([(3, [0].into())]), 5)?;
    let global = ModelParams::init(&[8, 32, 4], 9)?;
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 32,
        learning_rate: 0.05,
        prox_mu: 0.0,
        seed: 1,
    };
    let models = part
        .assignments
        .iter()
        .map(|idx| local_update(&global, &train.view_of(idx), &cfg, None))
        .collect::<fedms::Result<Vec<_>>>()?;
    let sizes = part.sizes();
    let game = ModelUtility {
        models: &models,
        sizes: &sizes,
        base: &global,
        validation: validation.view(),
    };

    show("exact", &exact_valuation(&game, true, 1.0)?);
    show("gtg", &gtg_shapley(&game, &GtgConfig::default(), 1.0)?);
    show("tmr", &tmr_shapley(&game, &TmrConfig::default(), 3, true, 1.0)?);
    println!("client 0 is the only holder of class 3");
    Ok(())
}
