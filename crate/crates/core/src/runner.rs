//! Batch commands that run experiments and write their CSV and JSON outputs.
//!
//! A run directory holds `rounds.csv`, `summary.json` and, written last,
//! `manifest.json`. A directory without a manifest belongs to an aborted run.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::axioms::{run_axiom_suite, AxiomReport};
use crate::config::{parse_config, ExperimentConfig};
use crate::engine::{run_with_environment, without_mavericks, Environment, ExperimentReport, Summary};
use crate::error::{Error, Result};

pub const ROUNDS_FILE: &str = "rounds.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const DELTA_FILE: &str = "delta.json";
/// Environment variable that supplies the output directory when `--out` is absent.
pub const OUT_DIR_ENV: &str = "FEDMS_OUT_DIR";

/// Formats a number with 9 significant digits, dropping trailing zeros.
pub fn fmt_sig(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    let rounded: f64 = format!("{x:.8e}").parse().expect("formatted float parses");
    // avoid "-0"
    if rounded == 0.0 {
        "0".to_string()
    } else {
        rounded.to_string()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub config_path: PathBuf,
    pub master_seed: u64,
    pub artifact_version: String,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub output_dir: PathBuf,
    /// Seeds shared by paired runs of an ablation.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub paired_seeds: Vec<u64>,
}

fn now_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis())
}

/// Column names of `rounds.csv`.
pub fn rounds_header(num_classes: usize, num_clients: usize) -> Vec<String> {
    let mut header = vec!["round".to_string(), "test_acc".to_string()];
    header.extend((0..num_classes).map(|c| format!("acc_c{c}")));
    header.extend((0..num_classes).map(|c| format!("beta_c{c}")));
    header.push("selected".into());
    header.push("best_set".into());
    header.extend((0..num_clients).map(|i| format!("r_{i}")));
    header
}

fn join_ids(ids: &[usize]) -> String {
    ids.iter().map(usize::to_string).collect::<Vec<_>>().join(";")
}

/// Serializes the per-round records as CSV text.
pub fn rounds_csv(report: &ExperimentReport) -> Result<Vec<u8>> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(rounds_header(report.num_classes, report.num_clients))?;
    for r in &report.rounds {
        let mut row = vec![r.round.to_string(), fmt_sig(r.test_accuracy)];
        row.extend(r.validation_class_accuracy.iter().map(|&v| fmt_sig(v)));
        row.extend(r.beta.iter().map(|&v| fmt_sig(v)));
        row.push(join_ids(&r.cohort));
        row.push(join_ids(&r.best_set));
        row.extend((0..report.num_clients).map(|i| r.rewards.get(&i).map_or_else(String::new, |&v| fmt_sig(v))));
        writer.write_record(&row)?;
    }
    writer
        .into_inner()
        .map_err(|e| Error::io(ROUNDS_FILE, e.into_error()))
}

#[derive(Serialize)]
struct SummaryFile<'a> {
    strategy: String,
    num_clients: usize,
    num_rounds: usize,
    initial_test_accuracy: f64,
    #[serde(flatten)]
    summary: &'a Summary,
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write(path, text.as_bytes())
}

/// Creates `dir` and removes a manifest left by an earlier run.
fn prepare_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = dir.join(MANIFEST_FILE);
    match fs::remove_file(&manifest) {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(()),
        Err(e) => Err(Error::io(manifest, e)),
    }
}

/// Writes `rounds.csv` and `summary.json` for one report.
pub fn write_report(report: &ExperimentReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write(&dir.join(ROUNDS_FILE), &rounds_csv(report)?)?;
    write_json(
        &dir.join(SUMMARY_FILE),
        &SummaryFile {
            strategy: format!("{:?}", report.strategy).to_lowercase(),
            num_clients: report.num_clients,
            num_rounds: report.rounds.len(),
            initial_test_accuracy: report.initial_test_accuracy,
            summary: &report.summary,
        },
    )
}

fn load(config_path: &Path, seed_override: Option<u64>) -> Result<ExperimentConfig> {
    let mut config = parse_config(config_path)?;
    if let Some(seed) = seed_override {
        config.experiment.seed = seed;
    }
    Ok(config)
}

fn finish(dir: &Path, mut manifest: RunManifest) -> Result<RunManifest> {
    manifest.finished_unix_ms = now_ms();
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

fn manifest(config_path: &Path, config: &ExperimentConfig, out_dir: &Path) -> RunManifest {
    RunManifest {
        config_path: config_path.to_path_buf(),
        master_seed: config.experiment.seed,
        artifact_version: env!("CARGO_PKG_VERSION").to_string(),
        started_unix_ms: now_ms(),
        finished_unix_ms: 0,
        output_dir: out_dir.to_path_buf(),
        paired_seeds: Vec::new(),
    }
}

/// Runs one experiment and writes its outputs to `out_dir`.
pub fn cmd_run(config_path: &Path, out_dir: &Path, seed_override: Option<u64>) -> Result<RunManifest> {
    let config = load(config_path, seed_override)?;
    prepare_dir(out_dir)?;
    let manifest = manifest(config_path, &config, out_dir);
    let env = Environment::prepare(&config)?;
    let report = run_with_environment(&config, &env)?;
    write_report(&report, out_dir)?;
    finish(out_dir, manifest)
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationDelta {
    pub all_clients_accuracy: f64,
    pub without_mavericks_accuracy: f64,
    /// All-clients accuracy minus the ablated accuracy.
    pub delta: f64,
}

/// Runs the full experiment and the Maverick-free ablation under the same seed.
/// Outputs land in `all_clients/` and `without_mavericks/`, with `delta.json`
/// and the manifest at the top level.
pub fn cmd_ablate(config_path: &Path, out_dir: &Path, seed_override: Option<u64>) -> Result<AblationDelta> {
    let config = load(config_path, seed_override)?;
    prepare_dir(out_dir)?;
    let mut manifest = manifest(config_path, &config, out_dir);
    let env = Environment::prepare(&config)?;
    let (reduced, reduced_env) = without_mavericks(&config, &env)?;
    manifest.paired_seeds = vec![config.experiment.seed, reduced.experiment.seed];

    let full = run_with_environment(&config, &env)?;
    write_report(&full, &out_dir.join("all_clients"))?;
    let ablated = run_with_environment(&reduced, &reduced_env)?;
    write_report(&ablated, &out_dir.join("without_mavericks"))?;

    let delta = AblationDelta {
        all_clients_accuracy: full.summary.final_test_accuracy,
        without_mavericks_accuracy: ablated.summary.final_test_accuracy,
        delta: full.summary.final_test_accuracy - ablated.summary.final_test_accuracy,
    };
    write_json(&out_dir.join(DELTA_FILE), &delta)?;
    finish(out_dir, manifest)?;
    Ok(delta)
}

/// Runs the axiom suite. Violations are reported in the result, not as errors.
pub fn cmd_axioms(max_players: usize, trials: usize, seed: u64) -> Result<AxiomReport> {
    run_axiom_suite(max_players, trials, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(fmt_sig(0.123456789123), "0.123456789");
        assert_eq!(fmt_sig(1.0), "1");
        assert_eq!(fmt_sig(-0.0), "0");
        assert_eq!(fmt_sig(2.0 / 3.0), "0.666666667");
        assert_eq!(fmt_sig(123456789012.0), "123456789000");
        assert_eq!(fmt_sig(-1.5e-12), "-0.0000000000015");
    }

    #[test]
    fn header_layout() {
        let h = rounds_header(2, 3);
        assert_eq!(
            h.join(","),
            "round,test_acc,acc_c0,acc_c1,beta_c0,beta_c1,selected,best_set,r_0,r_1,r_2"
        );
    }
}
