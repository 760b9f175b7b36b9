use fedms::data::{synth_blobs, LabeledDataset};
use fedms::nn::{evaluate, forward, local_update, loss_and_gradient, mean_loss, ModelParams, TrainConfig};

fn tiny_data() -> LabeledDataset {
    let features: Vec<f64> = (0..32).map(|k| ((k * 37 % 17) as f64 - 8.0) / 5.0).collect();
    let labels = vec![0, 1, 1, 0, 1, 0, 0, 1];
    LabeledDataset::new(features, labels, 4, 2).unwrap()
}

fn objective(model: &ModelParams, data: &LabeledDataset, prox: Option<(f64, &ModelParams)>) -> f64 {
    let mut loss = mean_loss(model, &data.view()).unwrap();
    if let Some((mu, anchor)) = prox {
        let sq: f64 = model.weights().iter().zip(anchor.weights()).map(|(a, b)| (a - b).powi(2)).sum();
        loss += 0.5 * mu * sq;
    }
    loss
}

#[test]
fn backprop_matches_central_differences() {
    let data = tiny_data();
    let model = ModelParams::init(&[4, 3, 2], 11).unwrap();
    let anchor = ModelParams::init(&[4, 3, 2], 12).unwrap();
    for prox in [None, Some((0.3, &anchor))] {
        let (loss, grad) = loss_and_gradient(&model, &data.view(), prox).unwrap();
        assert!((loss - objective(&model, &data, prox)).abs() < 1e-12);
        let h = 1e-5;
        for k in 0..grad.len() {
            let shifted = |delta: f64| {
                let mut w = model.weights().to_vec();
                w[k] += delta;
                objective(&ModelParams::from_weights(&[4, 3, 2], w).unwrap(), &data, prox)
            };
            let numeric = (shifted(h) - shifted(-h)) / (2.0 * h);
            let scale = numeric.abs().max(grad[k].abs()).max(1e-8);
            assert!(
                (numeric - grad[k]).abs() / scale < 1e-4 || (numeric - grad[k]).abs() < 1e-9,
                "param {k}: analytic {} numeric {numeric}",
                grad[k]
            );
        }
    }
}

#[test]
fn separable_blobs_are_learned() {
    let data = synth_blobs(4, 60, 8, 0.01, 2).unwrap();
    let model = ModelParams::init(&[8, 16, 4], 1).unwrap();
    let cfg = TrainConfig {
        epochs: 30,
        batch_size: 16,
        learning_rate: 0.05,
        prox_mu: 0.0,
        seed: 4,
    };
    let before = evaluate(&model, &data.view()).unwrap().accuracy();
    let trained = local_update(&model, &data.view(), &cfg, None).unwrap();
    let after = evaluate(&trained, &data.view()).unwrap().accuracy();
    assert!(after >= 0.95, "accuracy {before} -> {after}");
}

#[test]
fn proximal_term_keeps_the_update_closer_to_the_anchor() {
    let data = synth_blobs(3, 40, 6, 0.5, 8).unwrap();
    let start = ModelParams::init(&[6, 8, 3], 2).unwrap();
    let cfg = |mu| TrainConfig {
        epochs: 5,
        batch_size: 8,
        learning_rate: 0.1,
        prox_mu: mu,
        seed: 1,
    };
    let drift = |m: &ModelParams| -> f64 {
        m.weights().iter().zip(start.weights()).map(|(a, b)| (a - b).powi(2)).sum()
    };
    let free = local_update(&start, &data.view(), &cfg(0.0), None).unwrap();
    let held = local_update(&start, &data.view(), &cfg(5.0), Some(&start)).unwrap();
    assert!(drift(&held) < drift(&free));
}

#[test]
fn outputs_are_probability_rows() {
    let data = tiny_data();
    let model = ModelParams::init(&[4, 5, 2], 0).unwrap();
    for row in forward(&model, data.features()).unwrap() {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(row.iter().all(|&p| p > 0.0));
    }
}
