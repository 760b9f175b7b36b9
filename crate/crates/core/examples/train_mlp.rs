//! Train the MLP on synthetic blobs with plain and proximal SGD.
//!
//! `cargo run --release --example train_mlp`

use fedms::data::{stratified_split, synth_blobs};
use fedms::nn::{evaluate, local_update, mean_loss, ModelParams, TrainConfig};

fn main() -> fedms::Result<()> {
    let data = synth_blobs(6, 200, 16, 1.0, 7)?;
    let (train, test) = stratified_split(&data, 0.25, 7)?;
    let start = ModelParams::init(&[16, 64, 6], 1)?;

    for (label, mu) in [("sgd", 0.0), ("prox", 0.5)] {
        let cfg = TrainConfig {
            epochs: 10,
            batch_size: 64,
            learning_rate: 0.05,
            prox_mu: mu,
            seed: 3,
        };
        let anchor = (mu > 0.0).then_some(&start);
        let model = local_update(&start, &train.view(), &cfg, anchor)?;
        let confusion = evaluate(&model, &test.view())?;
        println!(
            "{label:>4}: train loss {:.4} -> {:.4}, test accuracy {:.3}",
            mean_loss(&start, &train.view())?,
            mean_loss(&model, &train.view())?,
            confusion.accuracy()
        );
    }
    Ok(())
}
