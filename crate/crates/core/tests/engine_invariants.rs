use fedms::config::{DatasetKind, ExperimentConfig, MaverickEntry, ShapleyEngine, Strategy};
use fedms::data::ClientPartition;
use fedms::engine::{aggregate, derive_seed, run_experiment, Environment, Federation, Stream};
use fedms::nn::{local_update, ModelParams, TrainConfig};
use fedms::selection::{contribution_scores, selection_probabilities};
use fedms::shapley::exact_class_shapley;

fn config(strategy: Strategy, clients: usize, cohort: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(DatasetKind::Blobs, strategy);
    cfg.experiment.num_rounds = 4;
    cfg.experiment.total_clients = clients;
    cfg.experiment.cohort_size = cohort;
    cfg.experiment.seed = 13;
    cfg.data.blob_classes = 3;
    cfg.data.blob_per_class = 40;
    cfg.data.blob_dim = 4;
    cfg.data.validation_fraction = 0.5;
    cfg.train.hidden_layers = vec![8];
    cfg.train.batch_size = 16;
    cfg.shapley.engine = ShapleyEngine::Exact;
    cfg
}

#[test]
fn engine_values_match_a_standalone_exact_call() {
    let cfg = config(Strategy::Fedavg, 3, 3);
    let env = Environment::prepare(&cfg).unwrap();
    let mut fed = Federation::new(&cfg, &env).unwrap();
    for round in 0..cfg.experiment.num_rounds {
        let global = fed.global.clone();
        let record = fed.run_round(round).unwrap();
        assert_eq!(record.cohort, vec![0, 1, 2]);

        let models: Vec<ModelParams> = record
            .cohort
            .iter()
            .map(|&id| {
                let train = TrainConfig {
                    epochs: cfg.train.epochs,
                    batch_size: cfg.train.batch_size,
                    learning_rate: cfg.train.learning_rate,
                    prox_mu: 0.0,
                    seed: derive_seed(cfg.experiment.seed, Stream::Batching, &[round as u64, id as u64]),
                };
                let data = env.train.view_of(&env.partition.assignments[id]);
                local_update(&global, &data, &train, None).unwrap()
            })
            .collect();
        let sizes = env.partition.sizes();
        let (phi, _) = exact_class_shapley(&models, &sizes, &global, env.validation.view(), true).unwrap();
        assert_eq!(phi.values, record.shapley.values, "round {round}");
        assert_eq!(fed.global, aggregate(&models, &sizes, &[0, 1, 2]).unwrap());
    }
}

#[test]
fn aggregate_stays_inside_the_coordinate_hull() {
    let models: Vec<ModelParams> = (0..4).map(|s| ModelParams::init(&[3, 4, 2], s).unwrap()).collect();
    let sizes = [5, 1, 9, 2];
    let agg = aggregate(&models, &sizes, &[0, 2, 3]).unwrap();
    for (k, &w) in agg.weights().iter().enumerate() {
        let members = [0, 2, 3].map(|i| models[i].weights()[k]);
        let lo = members.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = members.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!(w >= lo - 1e-12 && w <= hi + 1e-12);
    }
}

#[test]
fn replaying_a_config_reproduces_every_record() {
    let mut cfg = config(Strategy::Fedms, 5, 2);
    cfg.data.mavericks = vec![MaverickEntry {
        class: 2,
        clients: vec![4],
    }];
    let strip = |r: fedms::engine::ExperimentReport| r.rounds.iter().map(|x| x.without_timing()).collect::<Vec<_>>();
    let a = strip(run_experiment(&cfg).unwrap());
    let b = strip(run_experiment(&cfg).unwrap());
    assert_eq!(a, b);
    for r in &a {
        assert!(r.best_set.iter().all(|id| r.cohort.contains(id)));
        assert!((r.beta.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(r.validation_class_accuracy.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn best_set_is_the_cohort_when_subset_aggregation_is_off() {
    let mut cfg = config(Strategy::Fedms, 4, 3);
    cfg.strategy.aggregate_best_subset = false;
    for r in run_experiment(&cfg).unwrap().rounds {
        assert_eq!(r.best_set, r.cohort);
    }
}

#[test]
fn identical_clients_get_uniform_selection_probabilities() {
    let mut cfg = config(Strategy::Fedms, 4, 4);
    // one full batch per epoch, so every client computes the same update
    cfg.train.batch_size = 10_000;
    let env = Environment::prepare(&cfg).unwrap();
    let shared: Vec<usize> = (0..env.train.len()).collect();
    let env = Environment {
        partition: ClientPartition {
            assignments: vec![shared; 4],
            maverick_classes: vec![Default::default(); 4],
        },
        ..env
    };
    let mut fed = Federation::new(&cfg, &env).unwrap();
    for round in 0..cfg.experiment.num_rounds {
        fed.run_round(round).unwrap();
        let scores = contribution_scores(&fed.state);
        let p = selection_probabilities(&scores);
        for &q in &p {
            assert!((q - 0.25).abs() < 1e-6, "round {round}: {p:?}");
        }
    }
}
