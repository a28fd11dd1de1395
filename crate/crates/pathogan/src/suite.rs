//! The three commands that produce files: a single run, a full comparison
//! suite, and re-analysis of an existing suite.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use pathogan_core::data::{sample, DataError};
use pathogan_core::propagation::{execute, RunResult, StructureKind};
use pathogan_core::stats::{comparison_matrix, summarize, ComparisonMatrix, MethodSample, Summary, TTestKind};
use pathogan_core::stats::MIN_RUNS_PER_METHOD;
use pathogan_core::SeededStream;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ConfigError, ExperimentConfig, LoadedConfig};
use crate::io::{
    self, create_unique_dir, json_bytes, read_manifest, read_verified, run_seed, unix_now, write_file, FileEntry,
    IoError, RunEntry, RunManifest, RunStatus, SuiteStatus, CONFIG_FILE, MANIFEST_FILE, RESULT_FILE,
};

pub const SUMMARY_FILE: &str = "summary.csv";
pub const SUMMARY_ALL_FILE: &str = "summary_all.csv";
pub const COMPARISON_BEST_STEM: &str = "comparison_best";
pub const COMPARISON_ALL_STEM: &str = "comparison_all";
pub const ANALYSIS_FILE: &str = "analysis.json";

#[derive(Debug, thiserror::Error)]
pub enum SuiteError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("unknown method '{name}' (configured: {known})")]
    UnknownMethod { name: String, known: String },
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("run failed, partial outputs in {dir}: {error}")]
    RunFailed { dir: PathBuf, error: String },
    #[error("{0}")]
    Unreadable(String),
}

impl SuiteError {
    /// 2 for configuration errors, 1 for everything that went wrong later.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::UnknownMethod { .. } => 2,
            _ => 1,
        }
    }
}

pub type Progress<'a> = &'a (dyn Fn(&RunEntry) + Sync);

fn config_stem(path: &Path) -> String {
    path.file_stem().and_then(|s| s.to_str()).unwrap_or("config").to_owned()
}

fn describe_panic(payload: Box<dyn std::any::Any + Send>) -> String {
    payload
        .downcast_ref::<&str>()
        .map(|s| (*s).to_owned())
        .or_else(|| payload.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "panic".to_owned())
}

/// Trains one run and writes its files under `base/prefix`.
fn run_job(
    cfg: &ExperimentConfig,
    method: StructureKind,
    index: usize,
    seed: u64,
    base: &Path,
    prefix: &str,
) -> (RunEntry, Vec<FileEntry>) {
    let spec = cfg.method(method.as_str()).expect("jobs are built from configured methods").clone();
    let run_cfg = cfg.run_config(spec, seed);
    let started = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(|| execute(&run_cfg)))
        .map_err(describe_panic)
        .and_then(|r| r.map_err(|e| e.to_string()));
    let wallclock_seconds = started.elapsed().as_secs_f64();
    let mut entry = RunEntry {
        method: method.as_str().to_owned(),
        index,
        seed,
        dir: prefix.to_owned(),
        status: RunStatus::Failed,
        error: None,
        best_fd: None,
        wallclock_seconds,
    };
    match outcome {
        Ok(result) => match io::write_run_files(base, prefix, &result) {
            Ok(files) => {
                entry.status = RunStatus::Complete;
                entry.best_fd = Some(result.best_fd);
                (entry, files)
            }
            Err(e) => {
                entry.error = Some(e.to_string());
                (entry, Vec::new())
            }
        },
        Err(e) => {
            entry.error = Some(e);
            (entry, Vec::new())
        }
    }
}

fn suite_status(runs: &[RunEntry]) -> SuiteStatus {
    let failed = runs.iter().filter(|r| r.status == RunStatus::Failed).count();
    match failed {
        0 => SuiteStatus::Complete,
        n if n == runs.len() => SuiteStatus::Failed,
        _ => SuiteStatus::Partial,
    }
}

fn write_manifest(dir: &Path, manifest: &RunManifest) -> Result<(), IoError> {
    write_file(dir, MANIFEST_FILE, &json_bytes(manifest)).map(|_| ())
}

/// One run of `method` with `seed`; returns its output directory.
pub fn cmd_run(loaded: &LoadedConfig, method: &str, seed: u64) -> Result<PathBuf, SuiteError> {
    let cfg = &loaded.config;
    let kind = cfg.method(method).map(|m| m.kind).ok_or_else(|| unknown_method(cfg, method))?;
    let started = unix_now();
    let dir = create_unique_dir(&cfg.output_root(), &format!("run-{method}-{seed}"))?;
    let config_entry = write_file(&dir, CONFIG_FILE, &loaded.raw)?;
    let (entry, mut files) = run_job(cfg, kind, 0, seed, &dir, "");
    files.insert(0, config_entry.clone());
    let failure = entry.error.clone();
    let manifest = RunManifest {
        engine_version: io::ENGINE_VERSION.to_owned(),
        command: format!("run --method {method} --seed {seed}"),
        config_file: CONFIG_FILE.to_owned(),
        config_sha256: config_entry.sha256,
        base_seed: None,
        status: suite_status(std::slice::from_ref(&entry)),
        runs: vec![entry],
        files,
        warnings: Vec::new(),
        started_unix: started,
        finished_unix: unix_now(),
    };
    write_manifest(&dir, &manifest)?;
    match failure {
        Some(error) => Err(SuiteError::RunFailed { dir, error }),
        None => Ok(dir),
    }
}

fn unknown_method(cfg: &ExperimentConfig, name: &str) -> SuiteError {
    let known: Vec<&str> = cfg.methods.iter().map(|m| m.kind.as_str()).collect();
    SuiteError::UnknownMethod { name: name.to_owned(), known: known.join(", ") }
}

#[derive(Clone, Debug)]
pub struct SuiteOutcome {
    pub dir: PathBuf,
    pub manifest: RunManifest,
    pub analysis: Analysis,
}

/// Every configured method, `runs_per_method` seeds each, then the analysis.
pub fn cmd_compare(
    loaded: &LoadedConfig,
    workers: Option<usize>,
    progress: Progress<'_>,
) -> Result<SuiteOutcome, SuiteError> {
    let cfg = &loaded.config;
    if cfg.methods.len() < 2 {
        return Err(ConfigError {
            source: loaded.path.display().to_string(),
            problems: vec!["compare needs at least two methods".to_owned()],
        }
        .into());
    }
    let started = unix_now();
    let dir = create_unique_dir(&cfg.output_root(), &format!("compare-{}", config_stem(&loaded.path)))?;
    let config_entry = write_file(&dir, CONFIG_FILE, &loaded.raw)?;

    let jobs: Vec<(StructureKind, usize, u64)> = cfg
        .methods
        .iter()
        .flat_map(|m| (0..cfg.runs_per_method).map(move |i| (m.kind, i, run_seed(cfg.base_seed, m.kind.as_str(), i as u64))))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.worker_count(workers))
        .build()
        .map_err(|e| SuiteError::Unreadable(format!("cannot start worker pool: {e}")))?;
    let outcomes: Vec<(RunEntry, Vec<FileEntry>)> = pool.install(|| {
        jobs.par_iter()
            .map(|&(kind, i, seed)| {
                let prefix = format!("runs/{kind}/run-{i}");
                let out = run_job(cfg, kind, i, seed, &dir, &prefix);
                progress(&out.0);
                out
            })
            .collect()
    });

    let mut files = vec![config_entry.clone()];
    let mut runs = Vec::with_capacity(outcomes.len());
    for (entry, f) in outcomes {
        runs.push(entry);
        files.extend(f);
    }
    let mut manifest = RunManifest {
        engine_version: io::ENGINE_VERSION.to_owned(),
        command: "compare".to_owned(),
        config_file: CONFIG_FILE.to_owned(),
        config_sha256: config_entry.sha256,
        base_seed: Some(cfg.base_seed),
        status: suite_status(&runs),
        runs,
        files,
        warnings: Vec::new(),
        started_unix: started,
        finished_unix: unix_now(),
    };
    // The analysis reads back what was just written, exactly as `stats` would.
    write_manifest(&dir, &manifest)?;
    let loaded_suite = load_suite(&dir)?;
    let analysis = analyze(&loaded_suite);
    manifest.files.extend(write_analysis(&dir, &analysis)?);
    manifest.warnings = analysis.warnings.clone();
    manifest.finished_unix = unix_now();
    write_manifest(&dir, &manifest)?;
    Ok(SuiteOutcome { dir, manifest, analysis })
}

/// Recomputes the analysis of the suite in `suite_dir` into a new directory
/// under `output_root`.
pub fn cmd_stats(suite_dir: &Path, output_root: &Path) -> Result<SuiteOutcome, SuiteError> {
    let started = unix_now();
    let suite = load_suite(suite_dir)?;
    let analysis = analyze(&suite);
    let name = suite_dir.file_name().and_then(|s| s.to_str()).unwrap_or("suite");
    let dir = create_unique_dir(output_root, &format!("stats-{name}"))?;
    let config_entry = write_file(&dir, CONFIG_FILE, &suite.config_raw)?;
    let mut files = vec![config_entry.clone()];
    files.extend(write_analysis(&dir, &analysis)?);
    let manifest = RunManifest {
        engine_version: io::ENGINE_VERSION.to_owned(),
        command: format!("stats --dir {}", suite_dir.display()),
        config_file: CONFIG_FILE.to_owned(),
        config_sha256: config_entry.sha256,
        base_seed: Some(suite.config.base_seed),
        status: SuiteStatus::Complete,
        runs: Vec::new(),
        files,
        warnings: analysis.warnings.clone(),
        started_unix: started,
        finished_unix: unix_now(),
    };
    write_manifest(&dir, &manifest)?;
    Ok(SuiteOutcome { dir, manifest, analysis })
}

/// Completed runs of a suite directory, each verified against the manifest.
#[derive(Clone, Debug)]
pub struct LoadedSuite {
    pub config: ExperimentConfig,
    pub config_raw: Vec<u8>,
    pub runs: Vec<(RunEntry, RunResult)>,
    pub warnings: Vec<String>,
}

pub fn load_suite(dir: &Path) -> Result<LoadedSuite, SuiteError> {
    let manifest = read_manifest(dir)?;
    let config_entry = manifest
        .files
        .iter()
        .find(|f| f.path == manifest.config_file)
        .ok_or_else(|| SuiteError::Unreadable(format!("{}: manifest does not list the config", dir.display())))?;
    let config_raw = read_verified(dir, config_entry).map_err(SuiteError::Unreadable)?;
    if config_entry.sha256 != manifest.config_sha256 {
        return Err(SuiteError::Unreadable(format!("{}: config hash does not match the manifest", dir.display())));
    }
    let config = ExperimentConfig::from_json(&dir.join(CONFIG_FILE).display().to_string(), &config_raw)?;

    let mut warnings = Vec::new();
    let mut runs = Vec::new();
    for entry in &manifest.runs {
        let label = format!("{} run {}", entry.method, entry.index);
        if entry.status == RunStatus::Failed {
            warnings.push(format!("{label} failed and is excluded: {}", entry.error.as_deref().unwrap_or("unknown")));
            continue;
        }
        let rel = if entry.dir.is_empty() { RESULT_FILE.to_owned() } else { format!("{}/{RESULT_FILE}", entry.dir) };
        let Some(file) = manifest.files.iter().find(|f| f.path == rel) else {
            warnings.push(format!("{label}: {rel} is not in the manifest, skipped"));
            continue;
        };
        let bytes = match read_verified(dir, file) {
            Ok(b) => b,
            Err(e) => {
                warnings.push(format!("{label} rejected: {e}"));
                continue;
            }
        };
        match serde_json::from_slice::<RunResult>(&bytes) {
            Ok(r) => runs.push((entry.clone(), r)),
            Err(e) => warnings.push(format!("{label} rejected: {rel}: {e}")),
        }
    }
    Ok(LoadedSuite { config, config_raw, runs, warnings })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub ttest: TTestKind,
    /// Best distance of each run, per method with enough runs.
    pub best: Vec<MethodSample>,
    /// Best distance of every pathogen of every run, per method.
    pub all: Vec<MethodSample>,
    pub summary_best: Vec<(String, Summary)>,
    pub summary_all: Vec<(String, Summary)>,
    pub matrix_best: Option<ComparisonMatrix>,
    pub matrix_all: Option<ComparisonMatrix>,
    pub warnings: Vec<String>,
}

impl Analysis {
    pub fn summary(&self, method: &str) -> Option<&Summary> {
        self.summary_best.iter().find(|(m, _)| m == method).map(|(_, s)| s)
    }
}

/// Methods appear in config order; methods with fewer than the minimum
/// number of completed runs are left out with a warning.
pub fn analyze(suite: &LoadedSuite) -> Analysis {
    let mut warnings = suite.warnings.clone();
    let mut best = Vec::new();
    let mut all = Vec::new();
    for spec in &suite.config.methods {
        let name = spec.kind.as_str();
        let mine: Vec<&RunResult> = suite.runs.iter().filter(|(e, _)| e.method == name).map(|(_, r)| r).collect();
        if mine.is_empty() {
            continue;
        }
        let b = MethodSample::new(name, mine.iter().map(|r| r.best_fd).collect());
        let a = MethodSample::new(name, mine.iter().flat_map(|r| r.pathogen_best_fd()).collect());
        match b.validate(MIN_RUNS_PER_METHOD) {
            Ok(()) => {
                best.push(b);
                all.push(a);
            }
            Err(e) => warnings.push(format!("{name} excluded from statistics: {e}")),
        }
    }
    let summaries = |samples: &[MethodSample]| -> Vec<(String, Summary)> {
        samples
            .iter()
            .map(|s| (s.method.clone(), summarize(&s.values).expect("validated samples summarize")))
            .collect()
    };
    let ttest = suite.config.ttest;
    let (matrix_best, matrix_all) = if best.len() >= 2 {
        (comparison_matrix(&best, ttest).ok(), comparison_matrix(&all, ttest).ok())
    } else {
        warnings.push(format!("{} method(s) with enough runs; no comparison matrix", best.len()));
        (None, None)
    };
    Analysis {
        ttest,
        summary_best: summaries(&best),
        summary_all: summaries(&all),
        best,
        all,
        matrix_best,
        matrix_all,
        warnings,
    }
}

pub fn write_analysis(dir: &Path, a: &Analysis) -> Result<Vec<FileEntry>, IoError> {
    let mut files = vec![
        write_file(dir, SUMMARY_FILE, &io::summary_csv(&a.summary_best))?,
        write_file(dir, SUMMARY_ALL_FILE, &io::summary_csv(&a.summary_all))?,
    ];
    for (stem, m) in [(COMPARISON_BEST_STEM, &a.matrix_best), (COMPARISON_ALL_STEM, &a.matrix_all)] {
        if let Some(m) = m {
            files.push(write_file(dir, &format!("{stem}.csv"), &io::comparison_csv(m))?);
            files.push(write_file(dir, &format!("{stem}.json"), &json_bytes(m))?);
        }
    }
    files.push(write_file(dir, ANALYSIS_FILE, &json_bytes(a))?);
    Ok(files)
}

/// `n` samples of the configured mixture as CSV with columns `x,y`.
pub fn dump_data(cfg: &ExperimentConfig, n: usize, seed: u64) -> Result<Vec<u8>, DataError> {
    let m = sample(&cfg.mixture, n, &mut SeededStream::new(seed))?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["x", "y"]).expect("in-memory writer");
    for i in 0..m.rows() {
        let row = m.row(i);
        w.serialize((row[0], row[1])).expect("in-memory writer");
    }
    Ok(w.into_inner().expect("in-memory writer"))
}
