//! Experiment configuration: one JSON document with a section per module.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use pathogan_core::adversarial::{ArchitectureConfig, TrainConfig};
use pathogan_core::data::MixtureSpec;
use pathogan_core::fitness::FitnessParams;
use pathogan_core::propagation::{EvalConfig, RunConfig, StructureKind, StructureSpec};
use pathogan_core::stats::{TTestKind, MIN_RUNS_PER_METHOD};
use serde::{Deserialize, Serialize};

/// Overrides the configured `output_dir`.
pub const OUTPUT_ROOT_ENV: &str = "PATHOGAN_OUTPUT_ROOT";

fn default_runs() -> usize {
    MIN_RUNS_PER_METHOD
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

fn default_methods() -> Vec<StructureSpec> {
    StructureKind::ALL.iter().map(|k| StructureSpec::defaults(*k)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_methods")]
    pub methods: Vec<StructureSpec>,
    #[serde(default = "default_runs")]
    pub runs_per_method: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub fitness: FitnessParams,
    #[serde(default)]
    pub training: TrainConfig,
    #[serde(default)]
    pub architecture: ArchitectureConfig,
    #[serde(default)]
    pub mixture: MixtureSpec,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub ttest: TTestKind,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Parallel runs; `None` means available cores minus one.
    #[serde(default)]
    pub workers: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("every field has a default")
    }
}

/// Every problem found in a config, not just the first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfigError {
    pub source: String,
    pub problems: Vec<String>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid configuration {}", self.source)?;
        for p in &self.problems {
            write!(f, "\n  - {p}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}

impl ConfigError {
    fn single(source: &str, problem: impl Into<String>) -> Self {
        Self { source: source.to_owned(), problems: vec![problem.into()] }
    }
}

/// A parsed config together with the exact bytes it came from.
#[derive(Clone, Debug)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub raw: Vec<u8>,
    pub path: PathBuf,
}

impl ExperimentConfig {
    pub fn from_json(source: &str, bytes: &[u8]) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_slice(bytes).map_err(|e| ConfigError::single(source, e.to_string()))?;
        cfg.validate().map_err(|problems| ConfigError { source: source.to_owned(), problems })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<LoadedConfig, ConfigError> {
        let source = path.display().to_string();
        let raw = std::fs::read(path).map_err(|e| ConfigError::single(&source, format!("cannot read: {e}")))?;
        let config = Self::from_json(&source, &raw)?;
        Ok(LoadedConfig { config, raw, path: path.to_owned() })
    }

    pub fn validate(&self) -> Result<(), Vec<String>> {
        let mut problems = Vec::new();
        if self.methods.is_empty() {
            problems.push("methods: at least one method is required".to_owned());
        }
        let mut seen = BTreeSet::new();
        for spec in &self.methods {
            if !seen.insert(spec.kind) {
                problems.push(format!("methods: {} listed more than once", spec.kind));
            }
            if let Err(e) = spec.validate() {
                problems.push(format!("methods.{}: {e}", spec.kind));
            }
        }
        if self.runs_per_method == 0 {
            problems.push("runs_per_method must be at least 1".to_owned());
        }
        if self.workers == Some(0) {
            problems.push("workers must be at least 1".to_owned());
        }
        // Everything but the structure is shared; check it once.
        let probe = self.run_config(StructureSpec::defaults(StructureKind::StandardRr), 0);
        if let Err(e) = probe.validate() {
            problems.push(e.to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(problems)
        }
    }

    pub fn method(&self, name: &str) -> Option<&StructureSpec> {
        self.methods.iter().find(|m| m.kind.as_str() == name)
    }

    pub fn run_config(&self, structure: StructureSpec, seed: u64) -> RunConfig {
        RunConfig {
            structure,
            training: self.training,
            architecture: self.architecture,
            fitness: self.fitness,
            mixture: self.mixture.clone(),
            eval: self.eval,
            seed,
        }
    }

    /// `output_dir`, unless the environment overrides it.
    pub fn output_root(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => self.output_dir.clone(),
        }
    }

    pub fn worker_count(&self, flag: Option<usize>) -> usize {
        flag.or(self.workers).unwrap_or_else(default_workers).max(1)
    }
}

/// Available cores minus one, at least one.
pub fn default_workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1).saturating_sub(1).max(1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_the_full_suite() {
        let cfg = ExperimentConfig::from_json("t", b"{}").unwrap();
        assert_eq!(cfg.methods.len(), 6);
        assert_eq!(cfg.runs_per_method, 5);
        let budgets: Vec<usize> = cfg.methods.iter().map(|m| m.epoch_budget).collect();
        assert_eq!(budgets, vec![75, 75, 125, 125, 72, 150]);
    }

    #[test]
    fn all_problems_reported() {
        let doc = br#"{"methods":[{"kind":"jump_rr","epoch_budget":3},{"kind":"jump_rr"}],"runs_per_method":0}"#;
        let err = ExperimentConfig::from_json("t", doc).unwrap_err();
        assert_eq!(err.problems.len(), 3, "{err}");
    }

    #[test]
    fn unknown_fields_rejected() {
        assert!(ExperimentConfig::from_json("t", br#"{"epochs":3}"#).is_err());
        assert!(ExperimentConfig::from_json("t", br#"{"training":{"lr":3}}"#).is_err());
    }

    #[test]
    fn nested_sections_validated() {
        let err = ExperimentConfig::from_json("t", br#"{"fitness":{"k":-1}}"#).unwrap_err();
        assert!(err.to_string().contains("fitness") || err.problems[0].contains('k'), "{err}");
        assert!(ExperimentConfig::from_json("t", br#"{"eval":{"n_eval":10}}"#).is_err());
    }

    #[test]
    fn method_lookup() {
        let cfg = ExperimentConfig::default();
        assert_eq!(cfg.method("reference").unwrap().epoch_budget, 150);
        assert!(cfg.method("gan").is_none());
    }
}
