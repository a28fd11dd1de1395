//! Files on disk: run records as CSV and JSON, manifests, hashing and
//! non-overwriting output directories.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use pathogan_core::propagation::{FitnessEventKind, RunResult};
use pathogan_core::stats::{ComparisonMatrix, Summary};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");

pub const RESULT_FILE: &str = "result.json";
pub const MATCHES_FILE: &str = "matches.csv";
pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const FITNESS_FILE: &str = "fitness.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.json";

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
}

impl IoError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        Self::Io { path: path.to_owned(), source }
    }
}

/// Run seed `i` of `method`: the first eight bytes, little-endian, of
/// SHA-256 over `"pathogan/run-seed/v1"`, `base_seed` (u64 LE), the method
/// name, a zero byte and `i` (u64 LE).
pub fn run_seed(base_seed: u64, method: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(b"pathogan/run-seed/v1");
    h.update(base_seed.to_le_bytes());
    h.update(method.as_bytes());
    h.update([0]);
    h.update(index.to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// Creates `root/<stem>-NNN` with the first free index. Never reuses an
/// existing directory.
pub fn create_unique_dir(root: &Path, stem: &str) -> Result<PathBuf, IoError> {
    fs::create_dir_all(root).map_err(|e| IoError::io(root, e))?;
    for i in 1.. {
        let dir = root.join(format!("{stem}-{i:03}"));
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(IoError::io(&dir, e)),
        }
    }
    unreachable!("directory indices are unbounded")
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Relative to the manifest's directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

/// Writes `bytes` to `base/rel` and returns its inventory entry.
pub fn write_file(base: &Path, rel: &str, bytes: &[u8]) -> Result<FileEntry, IoError> {
    let path = base.join(rel);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| IoError::io(parent, e))?;
    }
    let mut f = BufWriter::new(File::create(&path).map_err(|e| IoError::io(&path, e))?);
    f.write_all(bytes).and_then(|_| f.flush()).map_err(|e| IoError::io(&path, e))?;
    Ok(FileEntry { path: rel.to_owned(), sha256: sha256_hex(bytes), bytes: bytes.len() as u64 })
}

pub fn json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("records serialize to JSON");
    v.push(b'\n');
    v
}

fn csv_bytes<R: Serialize>(rows: impl IntoIterator<Item = R>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("rows serialize to CSV");
    }
    w.into_inner().expect("in-memory writer")
}

/// CSV with a header row even when `rows` is empty.
fn csv_bytes_with_header<R: Serialize>(header: &[&str], rows: impl IntoIterator<Item = R>) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(header).expect("in-memory writer");
    for r in rows {
        w.serialize(r).expect("rows serialize to CSV");
    }
    w.into_inner().expect("in-memory writer")
}

#[derive(Serialize)]
struct MatchRow<'a> {
    structure: &'a str,
    run_seed: u64,
    epoch: usize,
    population: usize,
    phase: &'a str,
    host_id: u32,
    pathogen_id: u32,
    skip_discriminator: bool,
    err_real: f64,
    err_gen: f64,
    d_loss: f64,
    g_loss: f64,
    host_fitness: f64,
    pathogen_fitness: f64,
}

#[derive(Serialize)]
struct TrajectoryRow<'a> {
    structure: &'a str,
    run_seed: u64,
    pathogen_id: u32,
    epoch: usize,
    fd: f64,
}

#[derive(Serialize)]
struct FitnessRow<'a> {
    structure: &'a str,
    run_seed: u64,
    epoch: usize,
    kind: &'a str,
    host_id: u32,
    pathogen_id: u32,
    err_real: f64,
    err_gen: f64,
    infected: bool,
    host_infections: usize,
    host_fitness: f64,
    pathogen_fitness: f64,
}

const MATCH_HEADER: [&str; 14] = [
    "structure",
    "run_seed",
    "epoch",
    "population",
    "phase",
    "host_id",
    "pathogen_id",
    "skip_discriminator",
    "err_real",
    "err_gen",
    "d_loss",
    "g_loss",
    "host_fitness",
    "pathogen_fitness",
];
const TRAJECTORY_HEADER: [&str; 5] = ["structure", "run_seed", "pathogen_id", "epoch", "fd"];
const FITNESS_HEADER: [&str; 12] = [
    "structure",
    "run_seed",
    "epoch",
    "kind",
    "host_id",
    "pathogen_id",
    "err_real",
    "err_gen",
    "infected",
    "host_infections",
    "host_fitness",
    "pathogen_fitness",
];

pub fn matches_csv(r: &RunResult) -> Vec<u8> {
    let s = r.structure.kind.as_str();
    csv_bytes_with_header(
        &MATCH_HEADER,
        r.match_records.iter().zip(&r.schedule.directives).map(|(m, d)| MatchRow {
            structure: s,
            run_seed: r.seed,
            epoch: m.epoch_index,
            population: m.population_index,
            phase: d.phase.as_str(),
            host_id: m.host_id.0,
            pathogen_id: m.pathogen_id.0,
            skip_discriminator: m.skip_discriminator,
            err_real: m.err_real,
            err_gen: m.err_gen,
            d_loss: m.d_loss,
            g_loss: m.g_loss,
            host_fitness: m.host_fitness_after,
            pathogen_fitness: m.pathogen_fitness_after,
        }),
    )
}

pub fn trajectory_csv(r: &RunResult) -> Vec<u8> {
    let s = r.structure.kind.as_str();
    csv_bytes_with_header(
        &TRAJECTORY_HEADER,
        r.fd_trajectories.iter().flat_map(|t| {
            t.points.iter().map(move |p| TrajectoryRow {
                structure: s,
                run_seed: r.seed,
                pathogen_id: t.pathogen_id.0,
                epoch: p.epoch,
                fd: p.fd,
            })
        }),
    )
}

pub fn fitness_csv(r: &RunResult) -> Vec<u8> {
    let s = r.structure.kind.as_str();
    csv_bytes_with_header(
        &FITNESS_HEADER,
        r.fitness_events.iter().map(|e| FitnessRow {
            structure: s,
            run_seed: r.seed,
            epoch: e.epoch,
            kind: match e.kind {
                FitnessEventKind::Measurement => "measurement",
                FitnessEventKind::Match => "match",
            },
            host_id: e.host_id.0,
            pathogen_id: e.pathogen_id.0,
            err_real: e.err_real,
            err_gen: e.err_gen,
            infected: e.infected,
            host_infections: e.host_infections,
            host_fitness: e.host_fitness,
            pathogen_fitness: e.pathogen_fitness,
        }),
    )
}

/// Writes the four per-run files under `base/prefix`.
pub fn write_run_files(base: &Path, prefix: &str, r: &RunResult) -> Result<Vec<FileEntry>, IoError> {
    let rel = |name: &str| if prefix.is_empty() { name.to_owned() } else { format!("{prefix}/{name}") };
    Ok(vec![
        write_file(base, &rel(RESULT_FILE), &json_bytes(r))?,
        write_file(base, &rel(MATCHES_FILE), &matches_csv(r))?,
        write_file(base, &rel(TRAJECTORY_FILE), &trajectory_csv(r))?,
        write_file(base, &rel(FITNESS_FILE), &fitness_csv(r))?,
    ])
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    method: &'a str,
    median: f64,
    mean: f64,
    std: f64,
}

pub fn summary_csv(rows: &[(String, Summary)]) -> Vec<u8> {
    csv_bytes_with_header(
        &["method", "median", "mean", "std"],
        rows.iter().map(|(m, s)| SummaryRow { method: m, median: s.median, mean: s.mean, std: s.std }),
    )
}

#[derive(Serialize)]
struct CellRow<'a> {
    row_method: &'a str,
    col_method: &'a str,
    median_ratio: Option<f64>,
    t_statistic: f64,
    p_value: f64,
    significant: bool,
}

/// Long format: one row per ordered pair, row-major.
pub fn comparison_csv(m: &ComparisonMatrix) -> Vec<u8> {
    csv_bytes(m.cells.iter().flatten().map(|c| CellRow {
        row_method: &c.row_method,
        col_method: &c.col_method,
        median_ratio: c.median_ratio,
        t_statistic: c.t_statistic,
        p_value: c.p_value,
        significant: c.significant,
    }))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Complete,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub method: String,
    pub index: usize,
    pub seed: u64,
    /// Directory of the run's files relative to the manifest.
    pub dir: String,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_fd: Option<f64>,
    pub wallclock_seconds: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuiteStatus {
    Complete,
    /// Some runs failed; their files may be missing or incomplete.
    Partial,
    Failed,
}

/// Inventory of one output directory. The only file with wall-clock data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub engine_version: String,
    pub command: String,
    pub config_file: String,
    pub config_sha256: String,
    pub base_seed: Option<u64>,
    pub status: SuiteStatus,
    pub runs: Vec<RunEntry>,
    pub files: Vec<FileEntry>,
    #[serde(default)]
    pub warnings: Vec<String>,
    pub started_unix: u64,
    pub finished_unix: u64,
}

pub fn unix_now() -> u64 {
    std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

pub fn read_manifest(dir: &Path) -> Result<RunManifest, IoError> {
    let path = dir.join(MANIFEST_FILE);
    let bytes = fs::read(&path).map_err(|e| IoError::io(&path, e))?;
    serde_json::from_slice(&bytes).map_err(|source| IoError::Json { path, source })
}

/// Reads `dir/entry.path` and checks it against the recorded hash.
pub fn read_verified(dir: &Path, entry: &FileEntry) -> Result<Vec<u8>, String> {
    let path = dir.join(&entry.path);
    let bytes = fs::read(&path).map_err(|e| format!("{}: {e}", entry.path))?;
    let actual = sha256_hex(&bytes);
    if actual != entry.sha256 {
        return Err(format!("{}: hash mismatch (manifest {}, file {actual})", entry.path, entry.sha256));
    }
    Ok(bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_seeds_are_stable_and_distinct() {
        let a = run_seed(0, "standard_rr", 0);
        assert_eq!(a, run_seed(0, "standard_rr", 0));
        assert_ne!(a, run_seed(0, "standard_rr", 1));
        assert_ne!(a, run_seed(0, "jump_rr", 0));
        assert_ne!(a, run_seed(1, "standard_rr", 0));
        // pinned so that a change of derivation is noticed
        assert_eq!(run_seed(0, "standard_rr", 0), PINNED_SEED);
    }

    // computed independently with Python hashlib
    const PINNED_SEED: u64 = 8240060959401710037;

    #[test]
    fn unique_dirs_do_not_collide() {
        let root = tempfile::tempdir().unwrap();
        let a = create_unique_dir(root.path(), "run").unwrap();
        let b = create_unique_dir(root.path(), "run").unwrap();
        assert_ne!(a, b);
        assert!(a.ends_with("run-001") && b.ends_with("run-002"));
    }

    #[test]
    fn summary_has_table_columns() {
        let s = Summary { median: 1.5, mean: 2.0, std: 0.25 };
        let text = String::from_utf8(summary_csv(&[("jump_rr".into(), s)])).unwrap();
        assert_eq!(text, "method,median,mean,std\njump_rr,1.5,2.0,0.25\n");
    }
}
