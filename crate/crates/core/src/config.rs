//! Experiment configuration: a sectioned key/value file (`[experiment]`, `[data]`,
//! `[train]`, `[shapley]`, `[strategy]`). Unknown keys are rejected.
//!
//! Only `data.dataset` and `strategy.name` are required. Defaults follow the MNIST
//! protocol: 100 rounds, 50 clients, 5 per round, one local epoch, batch 64,
//! learning rate 0.05, decay α = 0.6, GTG valuation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::EmdMetric;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("invalid config value for {keys}: {reason}")]
    Constraint { keys: String, reason: String },
}

fn constraint(keys: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Constraint {
        keys: keys.to_owned(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Fedms,
    Fedavg,
    Sfedavg,
    Fedemd,
    Fedprox,
    Greedyfed,
    Poc,
}

impl Strategy {
    pub const ALL: [Strategy; 7] = [
        Strategy::Fedms,
        Strategy::Fedavg,
        Strategy::Sfedavg,
        Strategy::Fedemd,
        Strategy::Fedprox,
        Strategy::Greedyfed,
        Strategy::Poc,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapleyEngine {
    Exact,
    Gtg,
    Tmr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Blobs,
    Mnist,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub experiment: ExperimentSection,
    pub data: DataSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub shapley: ShapleySection,
    pub strategy: StrategySection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub num_rounds: usize,
    pub total_clients: usize,
    pub cohort_size: usize,
    pub seed: u64,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            num_rounds: 100,
            total_clients: 50,
            cohort_size: 5,
            seed: 0,
        }
    }
}

/// A rare class and the Maverick clients that exclusively share it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaverickEntry {
    pub class: usize,
    pub clients: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub dataset: DatasetKind,
    /// Directory holding the four MNIST IDX files.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mnist_dir: Option<PathBuf>,
    #[serde(default = "defaults::blob_classes")]
    pub blob_classes: usize,
    #[serde(default = "defaults::blob_per_class")]
    pub blob_per_class: usize,
    #[serde(default = "defaults::blob_dim")]
    pub blob_dim: usize,
    #[serde(default = "defaults::blob_spread")]
    pub blob_spread: f64,
    /// Share of the blob samples held out for testing (MNIST ships its own test split).
    #[serde(default = "defaults::test_fraction")]
    pub test_fraction: f64,
    /// Share of the test split carved off, per class, as the server's validation set.
    #[serde(default = "defaults::validation_fraction")]
    pub validation_fraction: f64,
    #[serde(default)]
    pub mavericks: Vec<MaverickEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Proximal weight, only applied under `fedprox`.
    pub prox_mu: f64,
    pub hidden_layers: Vec<usize>,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            epochs: 1,
            batch_size: 64,
            learning_rate: 0.05,
            prox_mu: 0.01,
            hidden_layers: vec![128],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShapleySection {
    pub engine: ShapleyEngine,
    /// `false` drops the `1/|K|` factor, scaling every value by the cohort size.
    pub normalize_sv: bool,
    pub eps_between: f64,
    pub eps_within: f64,
    pub max_permutations: usize,
    pub convergence_tol: f64,
    pub tmr_decay: f64,
    pub tmr_skip_threshold: f64,
}

impl Default for ShapleySection {
    fn default() -> Self {
        Self {
            engine: ShapleyEngine::Gtg,
            normalize_sv: true,
            eps_between: 1e-3,
            eps_within: 1e-3,
            max_permutations: 50,
            convergence_tol: 1e-3,
            tmr_decay: 0.9,
            tmr_skip_threshold: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategySection {
    pub name: Strategy,
    #[serde(default = "defaults::alpha")]
    pub alpha: f64,
    #[serde(default = "defaults::temperature")]
    pub temperature: f64,
    /// Aggregate only the best evaluated subset of the cohort (FedMS).
    #[serde(default = "defaults::yes")]
    pub aggregate_best_subset: bool,
    #[serde(default = "defaults::emd_weight")]
    pub emd_weight: f64,
    #[serde(default = "defaults::emd_decay")]
    pub emd_decay: f64,
    #[serde(default)]
    pub emd_metric: EmdMetric,
    #[serde(default = "defaults::sfedavg_epsilon")]
    pub sfedavg_epsilon: f64,
    /// Candidate pool for power-of-choice; defaults to `max(2m, I/2)` capped at `I`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub poc_candidates: Option<usize>,
}

mod defaults {
    pub fn blob_classes() -> usize {
        10
    }
    pub fn blob_per_class() -> usize {
        300
    }
    pub fn blob_dim() -> usize {
        16
    }
    pub fn blob_spread() -> f64 {
        1.0
    }
    pub fn test_fraction() -> f64 {
        0.2
    }
    pub fn validation_fraction() -> f64 {
        0.1
    }
    pub fn alpha() -> f64 {
        0.6
    }
    pub fn temperature() -> f64 {
        1.0
    }
    pub fn yes() -> bool {
        true
    }
    pub fn emd_weight() -> f64 {
        1.0
    }
    pub fn emd_decay() -> f64 {
        0.99
    }
    pub fn sfedavg_epsilon() -> f64 {
        0.1
    }
}

impl ExperimentConfig {
    /// Defaults everywhere except the two required choices.
    pub fn new(dataset: DatasetKind, strategy: Strategy) -> Self {
        Self {
            experiment: ExperimentSection::default(),
            data: DataSection {
                dataset,
                mnist_dir: None,
                blob_classes: defaults::blob_classes(),
                blob_per_class: defaults::blob_per_class(),
                blob_dim: defaults::blob_dim(),
                blob_spread: defaults::blob_spread(),
                test_fraction: defaults::test_fraction(),
                validation_fraction: defaults::validation_fraction(),
                mavericks: Vec::new(),
            },
            train: TrainSection::default(),
            shapley: ShapleySection::default(),
            strategy: StrategySection {
                name: strategy,
                alpha: defaults::alpha(),
                temperature: defaults::temperature(),
                aggregate_best_subset: true,
                emd_weight: defaults::emd_weight(),
                emd_decay: defaults::emd_decay(),
                emd_metric: EmdMetric::default(),
                sfedavg_epsilon: defaults::sfedavg_epsilon(),
                poc_candidates: None,
            },
        }
    }

    pub fn num_classes(&self) -> usize {
        match self.data.dataset {
            DatasetKind::Blobs => self.data.blob_classes,
            DatasetKind::Mnist => 10,
        }
    }

    pub fn poc_candidates(&self) -> usize {
        let (m, i) = (self.experiment.cohort_size, self.experiment.total_clients);
        self.strategy
            .poc_candidates
            .unwrap_or_else(|| (2 * m).max(i / 2).min(i))
    }

    /// Checks every cross-field constraint before any work starts.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let e = &self.experiment;
        if e.total_clients == 0 {
            return Err(constraint("experiment.total_clients", "must be positive"));
        }
        if e.cohort_size == 0 {
            return Err(constraint("experiment.cohort_size", "must be positive"));
        }
        if e.cohort_size > e.total_clients {
            return Err(constraint(
                "experiment.cohort_size, experiment.total_clients",
                format!("cohort_size {} exceeds total_clients {}", e.cohort_size, e.total_clients),
            ));
        }

        let d = &self.data;
        if d.dataset == DatasetKind::Blobs {
            if d.blob_classes < 2 {
                return Err(constraint("data.blob_classes", "need at least two classes"));
            }
            if d.blob_per_class == 0 || d.blob_dim == 0 {
                return Err(constraint("data.blob_per_class, data.blob_dim", "must be positive"));
            }
            if !(d.blob_spread > 0.0) {
                return Err(constraint("data.blob_spread", "must be positive"));
            }
            if !(d.test_fraction > 0.0 && d.test_fraction < 1.0) {
                return Err(constraint("data.test_fraction", "must lie in (0, 1)"));
            }
        }
        if d.dataset == DatasetKind::Mnist && d.mnist_dir.is_none() {
            return Err(constraint("data.mnist_dir", "required for the mnist dataset"));
        }
        if !(d.validation_fraction > 0.0 && d.validation_fraction < 1.0) {
            return Err(constraint("data.validation_fraction", "must lie in (0, 1)"));
        }
        let classes = self.num_classes();
        let mut seen = std::collections::BTreeSet::new();
        for m in &d.mavericks {
            if m.class >= classes {
                return Err(constraint("data.mavericks", format!("class {} out of range", m.class)));
            }
            if !seen.insert(m.class) {
                return Err(constraint("data.mavericks", format!("class {} listed twice", m.class)));
            }
            if m.clients.is_empty() {
                return Err(constraint("data.mavericks", format!("class {} has no clients", m.class)));
            }
            if let Some(id) = m.clients.iter().find(|&&id| id >= e.total_clients) {
                return Err(constraint(
                    "data.mavericks, experiment.total_clients",
                    format!("client {id} out of range for {} clients", e.total_clients),
                ));
            }
        }

        let t = &self.train;
        if t.batch_size == 0 {
            return Err(constraint("train.batch_size", "must be at least 1"));
        }
        if !(t.learning_rate > 0.0) {
            return Err(constraint("train.learning_rate", "must be positive"));
        }
        if !(t.prox_mu >= 0.0) {
            return Err(constraint("train.prox_mu", "must be nonnegative"));
        }
        if t.hidden_layers.contains(&0) {
            return Err(constraint("train.hidden_layers", "layer widths must be positive"));
        }

        let s = &self.shapley;
        if s.engine != ShapleyEngine::Gtg && e.cohort_size > crate::shapley::EXACT_COHORT_LIMIT {
            return Err(constraint(
                "shapley.engine, experiment.cohort_size",
                format!("exact enumeration supports at most {} clients per round", crate::shapley::EXACT_COHORT_LIMIT),
            ));
        }
        if s.max_permutations == 0 {
            return Err(constraint("shapley.max_permutations", "must be at least 1"));
        }
        if !(s.convergence_tol >= 0.0) {
            return Err(constraint("shapley.convergence_tol", "must be nonnegative"));
        }
        if !(s.eps_between >= 0.0) {
            return Err(constraint("shapley.eps_between", "must be nonnegative"));
        }
        if !(s.eps_within >= 0.0) {
            return Err(constraint("shapley.eps_within", "must be nonnegative"));
        }
        if !(s.tmr_decay > 0.0 && s.tmr_decay <= 1.0) {
            return Err(constraint("shapley.tmr_decay", "must lie in (0, 1]"));
        }
        if !(s.tmr_skip_threshold >= 0.0) {
            return Err(constraint("shapley.tmr_skip_threshold", "must be nonnegative"));
        }

        let g = &self.strategy;
        if !(0.0..=1.0).contains(&g.alpha) {
            return Err(constraint("strategy.alpha", "must lie in [0, 1]"));
        }
        if !(g.temperature > 0.0) {
            return Err(constraint("strategy.temperature", "must be positive"));
        }
        if !(g.emd_weight >= 0.0) {
            return Err(constraint("strategy.emd_weight", "must be nonnegative"));
        }
        if !(g.emd_decay > 0.0 && g.emd_decay <= 1.0) {
            return Err(constraint("strategy.emd_decay", "must lie in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&g.sfedavg_epsilon) {
            return Err(constraint("strategy.sfedavg_epsilon", "must lie in [0, 1]"));
        }
        let d_poc = self.poc_candidates();
        if d_poc < e.cohort_size || d_poc > e.total_clients {
            return Err(constraint(
                "strategy.poc_candidates",
                format!("must lie between cohort_size {} and total_clients {}", e.cohort_size, e.total_clients),
            ));
        }
        Ok(())
    }
}

pub fn parse_config_str(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let config: ExperimentConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

/// Reads and validates a config file.
pub fn parse_config(path: impl AsRef<Path>) -> Result<ExperimentConfig, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_owned(),
        source,
    })?;
    parse_config_str(&text)
}

/// Renders a config with every key spelled out.
pub fn emit_config(config: &ExperimentConfig) -> String {
    toml::to_string(config).expect("config always serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[data]\ndataset = \"blobs\"\n\n[strategy]\nname = \"fedms\"\n";

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = parse_config_str(MINIMAL).unwrap();
        assert_eq!(cfg, ExperimentConfig::new(DatasetKind::Blobs, Strategy::Fedms));
        assert_eq!(cfg.strategy.alpha, 0.6);
        assert_eq!(cfg.train.learning_rate, 0.05);
        assert_eq!(cfg.train.batch_size, 64);
        assert_eq!(cfg.experiment.num_rounds, 100);
    }

    #[test]
    fn cohort_larger_than_pool_names_both_keys() {
        let text = format!("{MINIMAL}\n[experiment]\ntotal_clients = 4\ncohort_size = 6\n");
        let err = parse_config_str(&text).unwrap_err().to_string();
        assert!(err.contains("experiment.cohort_size") && err.contains("experiment.total_clients"), "{err}");
    }

    #[test]
    fn unknown_keys_and_bad_types_are_rejected() {
        let err = parse_config_str(&format!("{MINIMAL}\n[train]\nepochz = 3\n")).unwrap_err();
        assert!(err.to_string().contains("epochz"), "{err}");
        let err = parse_config_str(&format!("{MINIMAL}\n[train]\nepochs = \"three\"\n")).unwrap_err();
        assert!(matches!(err, ConfigError::Parse(_)));
        let err = parse_config_str("[strategy]\nname = \"fedms\"\n").unwrap_err();
        assert!(err.to_string().contains("data"), "{err}");
        let err = parse_config(std::path::Path::new("/nonexistent/cfg.toml")).unwrap_err();
        assert!(matches!(err, ConfigError::Read { .. }));
    }

    #[test]
    fn constraint_violations_name_the_key() {
        for (snippet, key) in [
            ("[strategy]\nname = \"fedms\"\nalpha = 1.5\n", "strategy.alpha"),
            ("[strategy]\nname = \"fedms\"\ntemperature = 0.0\n", "strategy.temperature"),
        ] {
            let err = parse_config_str(&format!("[data]\ndataset = \"blobs\"\n{snippet}")).unwrap_err();
            assert!(err.to_string().contains(key), "{err}");
        }
        let text = "[data]\ndataset = \"blobs\"\nmavericks = [{ class = 3, clients = [99] }]\n[strategy]\nname = \"fedavg\"\n";
        assert!(parse_config_str(text).unwrap_err().to_string().contains("data.mavericks"));
    }

    #[test]
    fn emitted_config_parses_back() {
        let mut cfg = ExperimentConfig::new(DatasetKind::Mnist, Strategy::Poc);
        cfg.data.mnist_dir = Some("/data/mnist".into());
        cfg.data.mavericks = vec![MaverickEntry { class: 9, clients: vec![0, 1] }];
        cfg.strategy.poc_candidates = Some(10);
        cfg.shapley.engine = ShapleyEngine::Tmr;
        assert_eq!(parse_config_str(&emit_config(&cfg)).unwrap(), cfg);
    }
}
