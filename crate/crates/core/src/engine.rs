//! The federated round loop shared by FedMS and every baseline.
//!
//! Each round: pick a cohort, train it locally from the current global model,
//! value the cohort class by class, fold the values into the contribution state
//! and the rewards ledger, aggregate, then evaluate on validation and test data.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{DatasetKind, ExperimentConfig, ShapleyEngine, Strategy};
use crate::data::{
    emd, label_distribution, load_idx, maverick_partition, normalized_counts, stratified_split, synth_blobs,
    ClientPartition, LabeledDataset, MaverickSpec,
};
use crate::error::{Error, Result};
use crate::nn::{evaluate, local_update, mean_loss, ModelParams, TrainConfig};
use crate::selection::{
    accumulate_scores, contribution_scores, init_scores_cosine, sample_cohort, select_emd, select_greedy,
    select_poc, select_random, select_sfedavg, selection_probabilities, shapley_rewards, ContributionState,
    RewardsLedger,
};
use crate::shapley::{
    class_accuracy, gtg_shapley, model_average, tmr_shapley, ClassShapleyMatrix, GtgConfig, ModelUtility,
    TmrConfig, Valuation,
};

/// Independent random streams derived from the master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Data = 1,
    Partition = 2,
    Split = 3,
    Init = 4,
    Selection = 5,
    Batching = 6,
    Valuation = 7,
}

/// SplitMix64 finalizer, used to derive seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for `stream`, further keyed by `parts` (round, client, ...).
pub fn derive_seed(master: u64, stream: Stream, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(mix(master ^ mix(stream as u64)), |acc, &p| mix(acc ^ mix(p)))
}

/// `Σ (n_i / Σ n_j) · w_i` over a nonempty subset.
pub fn aggregate(client_models: &[ModelParams], client_sizes: &[usize], subset: &[usize]) -> Result<ModelParams> {
    let base = client_models.first().ok_or(Error::EmptyCohort)?;
    if subset.is_empty() {
        return Err(Error::EmptyCohort);
    }
    model_average(client_models, client_sizes, base, subset)
}

/// Training, validation and test data plus the client split.
#[derive(Debug, Clone)]
pub struct Environment {
    pub train: LabeledDataset,
    pub validation: LabeledDataset,
    pub test: LabeledDataset,
    pub partition: ClientPartition,
}

impl Environment {
    pub fn prepare(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let seed = config.experiment.seed;
        let d = &config.data;
        let (train, test_pool) = match d.dataset {
            DatasetKind::Blobs => {
                let all = synth_blobs(
                    d.blob_classes,
                    d.blob_per_class,
                    d.blob_dim,
                    d.blob_spread,
                    derive_seed(seed, Stream::Data, &[]),
                )?;
                stratified_split(&all, d.test_fraction, derive_seed(seed, Stream::Split, &[0]))?
            }
            DatasetKind::Mnist => {
                let dir = d.mnist_dir.as_ref().expect("validated");
                let train = load_idx(dir.join("train-images-idx3-ubyte"), dir.join("train-labels-idx1-ubyte"))?;
                let test = load_idx(dir.join("t10k-images-idx3-ubyte"), dir.join("t10k-labels-idx1-ubyte"))?;
                (train, test)
            }
        };
        let (test, validation) =
            stratified_split(&test_pool, d.validation_fraction, derive_seed(seed, Stream::Split, &[1]))?;
        if let Some(c) = validation.class_counts().iter().position(|&n| n == 0) {
            return Err(Error::EmptyClass(c));
        }
        let spec: MaverickSpec = d
            .mavericks
            .iter()
            .map(|m| (m.class, m.clients.iter().copied().collect::<BTreeSet<_>>()))
            .collect();
        let partition = maverick_partition(
            &train,
            config.experiment.total_clients,
            &spec,
            derive_seed(seed, Stream::Partition, &[]),
        )?;
        if let Some(i) = partition.assignments.iter().position(Vec::is_empty) {
            return Err(Error::EmptyClient(i));
        }
        Ok(Self {
            train,
            validation,
            test,
            partition,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    /// Sampled cohort, sorted by client id.
    pub cohort: Vec<usize>,
    /// Clients whose updates were aggregated.
    pub best_set: Vec<usize>,
    pub validation_class_accuracy: Vec<f64>,
    pub test_accuracy: f64,
    pub beta: Vec<f64>,
    pub rewards: BTreeMap<usize, f64>,
    /// Class-wise values of the cohort, rows in cohort order.
    pub shapley: ClassShapleyMatrix,
    pub wall_ms: u64,
}

impl RoundRecord {
    /// The record with wall-clock timing cleared, for replay comparisons.
    pub fn without_timing(&self) -> Self {
        Self {
            wall_ms: 0,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub final_test_accuracy: f64,
    pub cumulative_rewards: Vec<f64>,
    pub maverick_ids: Vec<usize>,
    /// Mean Maverick cumulative reward over mean non-Maverick cumulative reward.
    pub maverick_reward_ratio: Option<f64>,
    pub maverick_mean_reward: Option<f64>,
    pub non_maverick_mean_reward: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub strategy: Strategy,
    pub num_clients: usize,
    pub num_classes: usize,
    pub initial_test_accuracy: f64,
    pub rounds: Vec<RoundRecord>,
    pub summary: Summary,
}

/// Mutable state of one experiment.
pub struct Federation<'a> {
    config: &'a ExperimentConfig,
    env: &'a Environment,
    sizes: Vec<usize>,
    pub global: ModelParams,
    pub state: ContributionState,
    pub ledger: RewardsLedger,
    selection_rng: ChaCha8Rng,
    emd_values: Vec<f64>,
    participated: Vec<bool>,
}

impl<'a> Federation<'a> {
    pub fn new(config: &'a ExperimentConfig, env: &'a Environment) -> Result<Self> {
        let num_clients = env.partition.num_clients();
        let num_classes = env.train.num_classes();
        let mut layers = vec![env.train.dim()];
        layers.extend(&config.train.hidden_layers);
        layers.push(num_classes);
        let seed = config.experiment.seed;
        let global = ModelParams::init(&layers, derive_seed(seed, Stream::Init, &[]))?;

        let global_dist = normalized_counts(&env.train.view_of(&all_assigned(&env.partition)).class_counts());
        let emd_values = (0..num_clients)
            .map(|i| emd(&label_distribution(&env.partition, &env.train, i)?, &global_dist, config.strategy.emd_metric))
            .collect::<Result<Vec<_>>>()?;

        Ok(Self {
            config,
            env,
            sizes: env.partition.sizes(),
            global,
            state: ContributionState::new(
                num_clients,
                num_classes,
                config.strategy.alpha,
                config.strategy.temperature,
            )?,
            ledger: RewardsLedger::new(num_clients),
            selection_rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, Stream::Selection, &[])),
            emd_values,
            participated: vec![false; num_clients],
        })
    }

    pub fn num_clients(&self) -> usize {
        self.sizes.len()
    }

    fn select(&mut self, round: usize) -> Result<Vec<usize>> {
        let cfg = self.config;
        let m = cfg.experiment.cohort_size;
        let n = self.num_clients();
        let rng = &mut self.selection_rng;
        match cfg.strategy.name {
            Strategy::Fedms => {
                let scores = contribution_scores(&self.state);
                sample_cohort(&selection_probabilities(&scores), m, rng)
            }
            Strategy::Fedavg | Strategy::Fedprox => select_random(n, m, rng),
            Strategy::Sfedavg => select_sfedavg(&self.state.scalar_values(), m, cfg.strategy.sfedavg_epsilon, rng),
            Strategy::Greedyfed => {
                // clients that have never been valued go first
                let values: Vec<f64> = self
                    .state
                    .scalar_values()
                    .into_iter()
                    .zip(&self.participated)
                    .map(|(v, &seen)| if seen { v } else { f64::INFINITY })
                    .collect();
                select_greedy(&values, m)
            }
            Strategy::Poc => {
                let global = &self.global;
                let losses = (0..n)
                    .into_par_iter()
                    .map(|i| mean_loss(global, &self.env.train.view_of(&self.env.partition.assignments[i])))
                    .collect::<Result<Vec<_>>>()?;
                select_poc(&losses, cfg.poc_candidates(), m, rng)
            }
            Strategy::Fedemd => select_emd(
                &self.sizes,
                &self.emd_values,
                round,
                cfg.strategy.emd_weight,
                cfg.strategy.emd_decay,
                m,
                rng,
            ),
        }
    }

    fn value_cohort(&self, round: usize, models: &[ModelParams], sizes: &[usize]) -> Result<Valuation> {
        let s = &self.config.shapley;
        let temperature = self.config.strategy.temperature;
        let game = ModelUtility {
            models,
            sizes,
            base: &self.global,
            validation: self.env.validation.view(),
        };
        let mut valuation = match s.engine {
            ShapleyEngine::Exact => crate::shapley::exact_valuation(&game, s.normalize_sv, temperature)?,
            ShapleyEngine::Tmr => {
                let tmr = TmrConfig {
                    decay: s.tmr_decay,
                    skip_threshold: s.tmr_skip_threshold,
                };
                tmr_shapley(&game, &tmr, round, s.normalize_sv, temperature)?
            }
            ShapleyEngine::Gtg => {
                let gtg = GtgConfig {
                    eps_between: s.eps_between,
                    eps_within: s.eps_within,
                    max_permutations: s.max_permutations,
                    convergence_tol: s.convergence_tol,
                    seed: derive_seed(self.config.experiment.seed, Stream::Valuation, &[round as u64]),
                };
                let mut v = gtg_shapley(&game, &gtg, temperature)?;
                if !s.normalize_sv {
                    v.shapley = v.shapley.scaled(models.len() as f64);
                }
                v
            }
        };
        valuation.shapley.round = round;
        Ok(valuation)
    }

    pub fn run_round(&mut self, round: usize) -> Result<RoundRecord> {
        let started = Instant::now();
        let cfg = self.config;
        let cohort = self.select(round)?;

        let prox = cfg.strategy.name == Strategy::Fedprox;
        let master = cfg.experiment.seed;
        let global = &self.global;
        let env = self.env;
        let models = cohort
            .par_iter()
            .map(|&id| {
                let train = TrainConfig {
                    epochs: cfg.train.epochs,
                    batch_size: cfg.train.batch_size,
                    learning_rate: cfg.train.learning_rate,
                    prox_mu: if prox { cfg.train.prox_mu } else { 0.0 },
                    seed: derive_seed(master, Stream::Batching, &[round as u64, id as u64]),
                };
                let data = env.train.view_of(&env.partition.assignments[id]);
                local_update(global, &data, &train, prox.then_some(global))
            })
            .collect::<Result<Vec<_>>>()?;
        let sizes: Vec<usize> = cohort.iter().map(|&id| self.sizes[id]).collect();

        let valuation = self.value_cohort(round, &models, &sizes)?;
        let everyone: Vec<usize> = (0..cohort.len()).collect();

        if cfg.strategy.name == Strategy::Fedms && round == 0 {
            let fedavg = aggregate(&models, &sizes, &everyone)?;
            let initial = init_scores_cosine(&models, &fedavg)?;
            for (&id, score) in cohort.iter().zip(initial) {
                self.state.accumulated[id].iter_mut().for_each(|s| *s = score);
            }
        }
        accumulate_scores(&mut self.state, &valuation.shapley, &cohort, cfg.strategy.alpha)?;
        self.state.beta = valuation.beta.clone();
        self.state.scores = contribution_scores(&self.state);
        let rewards = shapley_rewards(&valuation.shapley, &valuation.beta, &cohort)?;
        self.ledger.record(round, rewards.clone())?;
        for &id in &cohort {
            self.participated[id] = true;
        }

        let chosen = if cfg.strategy.name == Strategy::Fedms && cfg.strategy.aggregate_best_subset {
            valuation.best_subset.clone()
        } else {
            everyone
        };
        self.global = aggregate(&models, &sizes, &chosen)?;

        let validation_class_accuracy = class_accuracy(&evaluate(&self.global, &self.env.validation.view())?)?;
        let test_accuracy = evaluate(&self.global, &self.env.test.view())?.accuracy();
        Ok(RoundRecord {
            round,
            best_set: chosen.iter().map(|&p| cohort[p]).collect(),
            cohort,
            validation_class_accuracy,
            test_accuracy,
            beta: valuation.beta,
            rewards,
            shapley: valuation.shapley,
            wall_ms: started.elapsed().as_millis() as u64,
        })
    }
}

fn all_assigned(partition: &ClientPartition) -> Vec<usize> {
    let mut all: Vec<usize> = partition.assignments.concat();
    all.sort_unstable();
    all
}

fn summarize(ledger: &RewardsLedger, partition: &ClientPartition, final_test_accuracy: f64) -> Summary {
    let mavericks = partition.maverick_ids();
    let mean = |ids: &mut dyn Iterator<Item = usize>| {
        let v: Vec<f64> = ids.map(|i| ledger.totals[i]).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    let maverick_mean = mean(&mut mavericks.iter().copied());
    let non_maverick_mean = mean(&mut (0..partition.num_clients()).filter(|i| !partition.is_maverick(*i)));
    let ratio = match (maverick_mean, non_maverick_mean) {
        (Some(m), Some(o)) if o != 0.0 => Some(m / o),
        _ => None,
    };
    Summary {
        final_test_accuracy,
        cumulative_rewards: ledger.totals.clone(),
        maverick_ids: mavericks,
        maverick_reward_ratio: ratio,
        maverick_mean_reward: maverick_mean,
        non_maverick_mean_reward: non_maverick_mean,
    }
}

/// Runs every round on a prepared environment.
pub fn run_with_environment(config: &ExperimentConfig, env: &Environment) -> Result<ExperimentReport> {
    let mut fed = Federation::new(config, env)?;
    let initial_test_accuracy = evaluate(&fed.global, &env.test.view())?.accuracy();
    let mut rounds = Vec::with_capacity(config.experiment.num_rounds);
    for t in 0..config.experiment.num_rounds {
        let record = fed.run_round(t).map_err(|e| Error::Round {
            round: t,
            source: Box::new(e),
        })?;
        rounds.push(record);
    }
    let final_acc = rounds.last().map_or(initial_test_accuracy, |r| r.test_accuracy);
    Ok(ExperimentReport {
        strategy: config.strategy.name,
        num_clients: fed.num_clients(),
        num_classes: env.train.num_classes(),
        initial_test_accuracy,
        summary: summarize(&fed.ledger, &env.partition, final_acc),
        rounds,
    })
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let env = Environment::prepare(config)?;
    run_with_environment(config, &env)
}

/// The config and environment with every Maverick removed from the client pool.
/// Their classes stay in validation and test data.
pub fn without_mavericks(config: &ExperimentConfig, env: &Environment) -> Result<(ExperimentConfig, Environment)> {
    let mavericks = env.partition.maverick_ids();
    if mavericks.is_empty() {
        return Err(Error::param("data.mavericks", "ablation needs at least one Maverick"));
    }
    let (partition, _) = env.partition.without_mavericks();
    let mut reduced = config.clone();
    reduced.experiment.total_clients = partition.num_clients();
    reduced.data.mavericks.clear();
    if reduced.strategy.poc_candidates.is_some_and(|d| d > partition.num_clients()) {
        reduced.strategy.poc_candidates = Some(partition.num_clients());
    }
    reduced.validate()?;
    let env = Environment {
        partition,
        ..env.clone()
    };
    Ok((reduced, env))
}

pub fn ablation_without_mavericks(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let env = Environment::prepare(config)?;
    let (reduced, env) = without_mavericks(config, &env)?;
    run_with_environment(&reduced, &env)
}
