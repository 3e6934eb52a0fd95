//! Config-driven end-to-end runs: preprocess -> graph -> PE -> train ->
//! report, with a manifest of content hashes per stage, atomic writes, and
//! resume from any persisted stage.
//!
//! Configs are flat `key = value` text (comments start with `#`), so the
//! canonical form hashes bit-exactly. Every stage output is a pure function
//! of (config, seed, upstream artifact); per-seed artifact directories are
//! built in a temp location and renamed into place.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{effective_rank, permutation_split, standardize_on_rows, RANDOM_PE_SEED_OFFSET};
use crate::error::{Error, Result};
use crate::graphs::{self, GraphMethod, NotearsConfig};
use crate::model::{
    self, FtTransformer, ModelSpec, PeMode, Splits, TargetData, Task, TrainConfig,
};
use crate::preprocess::{self, ColumnKind, RawColumn, RawTable};
use crate::spectral::{self, LaplacianKind};
use crate::synthetic::{self, SyntheticSpec};

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "SPECTAB_OUT";

/// Default replication seeds.
pub const DEFAULT_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

/// Where the feature matrix comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Synth,
    Csv,
}

/// Prediction task named in the config (class count is discovered from data).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Regression,
    Classification,
}

/// Eigenvector count selection for the PE stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KSelection {
    Auto,
    Fixed { k_first: usize, k_last: usize },
}

/// Fully resolved run configuration. Parse with [`RunConfig::parse`]; unknown
/// or duplicate keys are errors so typos cannot silently fall back to
/// defaults.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub source: DataSource,
    pub csv_path: Option<PathBuf>,
    pub target_column: Option<String>,
    pub task: TaskKind,
    pub column_kinds: BTreeMap<String, ColumnKind>,
    pub synth_d: usize,
    pub synth_k: usize,
    pub synth_n: usize,
    pub graph_method: GraphMethod,
    pub import_path: Option<PathBuf>,
    pub notears: NotearsConfig,
    pub laplacian: LaplacianKind,
    pub k_selection: KSelection,
    /// One value trains at that scale; several trigger validation-based
    /// alpha selection.
    pub alphas: Vec<f64>,
    pub pe_mode: PeMode,
    pub d_token: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub attn_dropout: f64,
    pub ffn_dropout: f64,
    pub train: TrainConfig,
    pub train_frac: f64,
    pub val_frac: f64,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub name: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            source: DataSource::Synth,
            csv_path: None,
            target_column: None,
            task: TaskKind::Regression,
            column_kinds: BTreeMap::new(),
            synth_d: 30,
            synth_k: 4,
            synth_n: 2000,
            graph_method: GraphMethod::Spearman,
            import_path: None,
            notears: NotearsConfig::default(),
            laplacian: LaplacianKind::Normalized,
            k_selection: KSelection::Auto,
            alphas: vec![1.0],
            pe_mode: PeMode::Fixed,
            d_token: 16,
            n_layers: 1,
            n_heads: 1,
            attn_dropout: 0.0,
            ffn_dropout: 0.0,
            train: TrainConfig::default(),
            train_frac: 0.6,
            val_frac: 0.2,
            seeds: DEFAULT_SEEDS.to_vec(),
            out_dir: std::env::var(OUT_ENV).map(PathBuf::from).unwrap_or_else(|_| "runs".into()),
            name: "run".into(),
        }
    }
}

fn cfg_err(key: &str, detail: impl std::fmt::Display) -> Error {
    Error::Config(format!("key '{key}': {detail}"))
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| cfg_err(key, e))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|e| cfg_err(key, e)))
        .collect()
}

impl RunConfig {
    /// Parses flat `key = value` text. Defaults apply to absent keys.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::BTreeSet::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected 'key = value', got '{line}'", idx + 1)))?;
            let key = key.trim();
            let value = value.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: duplicate key '{key}'", idx + 1)));
            }
            cfg.set(key, value)?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        RunConfig::parse(&text)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if let Some(col) = key.strip_prefix("data.column.") {
            let kind = match value {
                "continuous" => ColumnKind::Continuous,
                "categorical" => ColumnKind::Categorical,
                other => return Err(cfg_err(key, format!("unknown column kind '{other}'"))),
            };
            self.column_kinds.insert(col.to_string(), kind);
            return Ok(());
        }
        match key {
            "data.source" => {
                self.source = match value {
                    "synth" => DataSource::Synth,
                    "csv" => DataSource::Csv,
                    other => return Err(cfg_err(key, format!("unknown source '{other}'"))),
                }
            }
            "data.csv_path" => self.csv_path = Some(PathBuf::from(value)),
            "data.target" => self.target_column = Some(value.to_string()),
            "data.task" => {
                self.task = match value {
                    "regression" => TaskKind::Regression,
                    "classification" => TaskKind::Classification,
                    other => return Err(cfg_err(key, format!("unknown task '{other}'"))),
                }
            }
            "synth.d" => self.synth_d = parse_num(key, value)?,
            "synth.k" => self.synth_k = parse_num(key, value)?,
            "synth.n" => self.synth_n = parse_num(key, value)?,
            "graph.method" => {
                self.graph_method = match value {
                    "pearson" => GraphMethod::Pearson,
                    "spearman" => GraphMethod::Spearman,
                    "chow_liu" | "chowliu" => GraphMethod::ChowLiu,
                    "notears" => GraphMethod::Notears,
                    "import" => GraphMethod::Imported,
                    other => return Err(cfg_err(key, format!("unknown graph method '{other}'"))),
                }
            }
            "graph.import_path" => self.import_path = Some(PathBuf::from(value)),
            "graph.lambda1" => self.notears.lambda1 = parse_num(key, value)?,
            "graph.w_threshold" => self.notears.w_threshold = parse_num(key, value)?,
            "graph.max_iter" => self.notears.max_iter = parse_num(key, value)?,
            "pe.laplacian" => {
                self.laplacian = match value {
                    "normalized" => LaplacianKind::Normalized,
                    "unnormalized" => LaplacianKind::Unnormalized,
                    other => return Err(cfg_err(key, format!("unknown laplacian '{other}'"))),
                }
            }
            "pe.k_mode" => {
                self.k_selection = match value {
                    "auto" => KSelection::Auto,
                    "fixed" => match self.k_selection {
                        KSelection::Fixed { .. } => self.k_selection,
                        KSelection::Auto => KSelection::Fixed { k_first: 1, k_last: 1 },
                    },
                    other => return Err(cfg_err(key, format!("unknown k mode '{other}'"))),
                }
            }
            "pe.k_first" => {
                let v = parse_num(key, value)?;
                self.k_selection = match self.k_selection {
                    KSelection::Fixed { k_last, .. } => KSelection::Fixed { k_first: v, k_last },
                    KSelection::Auto => KSelection::Fixed { k_first: v, k_last: 1 },
                };
            }
            "pe.k_last" => {
                let v = parse_num(key, value)?;
                self.k_selection = match self.k_selection {
                    KSelection::Fixed { k_first, .. } => KSelection::Fixed { k_first, k_last: v },
                    KSelection::Auto => KSelection::Fixed { k_first: 1, k_last: v },
                };
            }
            "pe.alpha" => self.alphas = parse_list(key, value)?,
            "pe.mode" => self.pe_mode = value.parse()?,
            "model.d_token" => self.d_token = parse_num(key, value)?,
            "model.n_layers" => self.n_layers = parse_num(key, value)?,
            "model.n_heads" => self.n_heads = parse_num(key, value)?,
            "model.attn_dropout" => self.attn_dropout = parse_num(key, value)?,
            "model.ffn_dropout" => self.ffn_dropout = parse_num(key, value)?,
            "train.max_epochs" => self.train.max_epochs = parse_num(key, value)?,
            "train.min_epochs" => self.train.min_epochs = parse_num(key, value)?,
            "train.patience" => self.train.patience = parse_num(key, value)?,
            "train.min_delta" => self.train.min_delta = parse_num(key, value)?,
            "train.lr" => self.train.lr = parse_num(key, value)?,
            "train.weight_decay" => self.train.weight_decay = parse_num(key, value)?,
            "train.batch_size" => self.train.batch_size = parse_num(key, value)?,
            "split.train_frac" => self.train_frac = parse_num(key, value)?,
            "split.val_frac" => self.val_frac = parse_num(key, value)?,
            "run.seeds" => self.seeds = parse_list(key, value)?,
            "run.out_dir" => self.out_dir = PathBuf::from(value),
            "run.name" => self.name = value.to_string(),
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    /// Canonical key = value text: every effective setting, sorted by key.
    /// `run.out_dir` and `run.name` are placement, not content, and are
    /// excluded so relocated reruns hash identically.
    pub fn canonical(&self) -> String {
        let mut kv: Vec<(String, String)> = vec![
            (
                "data.source".into(),
                match self.source {
                    DataSource::Synth => "synth".into(),
                    DataSource::Csv => "csv".into(),
                },
            ),
            (
                "data.task".into(),
                match self.task {
                    TaskKind::Regression => "regression".into(),
                    TaskKind::Classification => "classification".into(),
                },
            ),
            (
                "graph.method".into(),
                match self.graph_method {
                    GraphMethod::Pearson => "pearson".into(),
                    GraphMethod::Spearman => "spearman".into(),
                    GraphMethod::ChowLiu => "chow_liu".into(),
                    GraphMethod::Notears => "notears".into(),
                    GraphMethod::Imported => "import".into(),
                },
            ),
            ("graph.lambda1".into(), format!("{}", self.notears.lambda1)),
            ("graph.w_threshold".into(), format!("{}", self.notears.w_threshold)),
            ("graph.max_iter".into(), format!("{}", self.notears.max_iter)),
            (
                "pe.laplacian".into(),
                match self.laplacian {
                    LaplacianKind::Normalized => "normalized".into(),
                    LaplacianKind::Unnormalized => "unnormalized".into(),
                },
            ),
            (
                "pe.alpha".into(),
                self.alphas.iter().map(|a| format!("{a}")).collect::<Vec<_>>().join(","),
            ),
            ("pe.mode".into(), format!("{}", self.pe_mode)),
            ("model.d_token".into(), format!("{}", self.d_token)),
            ("model.n_layers".into(), format!("{}", self.n_layers)),
            ("model.n_heads".into(), format!("{}", self.n_heads)),
            ("model.attn_dropout".into(), format!("{}", self.attn_dropout)),
            ("model.ffn_dropout".into(), format!("{}", self.ffn_dropout)),
            ("train.max_epochs".into(), format!("{}", self.train.max_epochs)),
            ("train.min_epochs".into(), format!("{}", self.train.min_epochs)),
            ("train.patience".into(), format!("{}", self.train.patience)),
            ("train.min_delta".into(), format!("{}", self.train.min_delta)),
            ("train.lr".into(), format!("{}", self.train.lr)),
            ("train.weight_decay".into(), format!("{}", self.train.weight_decay)),
            ("train.batch_size".into(), format!("{}", self.train.batch_size)),
            ("split.train_frac".into(), format!("{}", self.train_frac)),
            ("split.val_frac".into(), format!("{}", self.val_frac)),
            (
                "run.seeds".into(),
                self.seeds.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(","),
            ),
        ];
        match self.source {
            DataSource::Synth => {
                kv.push(("synth.d".into(), format!("{}", self.synth_d)));
                kv.push(("synth.k".into(), format!("{}", self.synth_k)));
                kv.push(("synth.n".into(), format!("{}", self.synth_n)));
            }
            DataSource::Csv => {
                if let Some(p) = &self.csv_path {
                    kv.push(("data.csv_path".into(), p.display().to_string()));
                }
                if let Some(t) = &self.target_column {
                    kv.push(("data.target".into(), t.clone()));
                }
                for (col, kind) in &self.column_kinds {
                    let v = match kind {
                        ColumnKind::Continuous => "continuous",
                        ColumnKind::Categorical => "categorical",
                    };
                    kv.push((format!("data.column.{col}"), v.into()));
                }
            }
        }
        if let KSelection::Fixed { k_first, k_last } = self.k_selection {
            kv.push(("pe.k_mode".into(), "fixed".into()));
            kv.push(("pe.k_first".into(), format!("{k_first}")));
            kv.push(("pe.k_last".into(), format!("{k_last}")));
        } else {
            kv.push(("pe.k_mode".into(), "auto".into()));
        }
        if let Some(p) = &self.import_path {
            kv.push(("graph.import_path".into(), p.display().to_string()));
        }
        kv.sort();
        let mut out = String::new();
        for (k, v) in kv {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    /// SHA-256 of the canonical text.
    pub fn hash(&self) -> String {
        sha256_hex(self.canonical().as_bytes())
    }

    pub fn run_dir(&self) -> PathBuf {
        self.out_dir.join(&self.name)
    }

    /// Checks cross-field consistency and that every referenced file exists.
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("run.seeds must be nonempty".into()));
        }
        if self.alphas.is_empty() {
            return Err(Error::Config("pe.alpha must list at least one value".into()));
        }
        if self.alphas.iter().any(|a| !a.is_finite() || *a < 0.0) {
            return Err(Error::Config("pe.alpha values must be finite and nonnegative".into()));
        }
        if !(self.train_frac > 0.0 && self.val_frac > 0.0 && self.train_frac + self.val_frac < 1.0) {
            return Err(Error::Config("split fractions must be positive and sum below 1".into()));
        }
        match self.source {
            DataSource::Synth => {
                if self.task != TaskKind::Regression {
                    return Err(Error::Config("synthetic data is regression-only".into()));
                }
            }
            DataSource::Csv => {
                let path = self
                    .csv_path
                    .as_ref()
                    .ok_or_else(|| Error::Config("csv source requires data.csv_path".into()))?;
                if !path.exists() {
                    return Err(Error::Config(format!("data.csv_path {} does not exist", path.display())));
                }
                if self.target_column.is_none() {
                    return Err(Error::Config("csv source requires data.target".into()));
                }
            }
        }
        if self.graph_method == GraphMethod::Imported && self.pe_mode != PeMode::None {
            let path = self
                .import_path
                .as_ref()
                .ok_or_else(|| Error::Config("graph.method import requires graph.import_path".into()))?;
            if !path.exists() {
                return Err(Error::Config(format!(
                    "graph.import_path {} does not exist",
                    path.display()
                )));
            }
        }
        Ok(())
    }
}

/// Hex SHA-256 digest.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let digest = h.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Hex SHA-256 of a file's contents.
pub fn hash_file(path: &Path) -> Result<String> {
    let mut f = fs::File::open(path)?;
    let mut h = Sha256::new();
    let mut buf = [0u8; 65536];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

/// Write-temp-then-rename so readers never observe partial files.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let parent = path.parent().ok_or_else(|| Error::InvalidArgument("path has no parent".into()))?;
    fs::create_dir_all(parent)?;
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument("path has no file name".into()))?
        .to_string_lossy();
    let tmp = parent.join(format!(".tmp-{file_name}"));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn save_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    write_atomic(path, text.as_bytes())
}

fn load_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Completed-stage record: artifact path (relative to the run directory)
/// mapped to its content hash.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct StageRecord {
    pub artifacts: BTreeMap<String, String>,
}

/// Per-run manifest making every output content-addressable.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub stages: BTreeMap<String, StageRecord>,
}

impl Manifest {
    pub fn load(run_dir: &Path) -> Result<Manifest> {
        load_json(&run_dir.join("manifest.json"))
    }
}

/// Per-seed training outcome persisted by the train stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: u64,
    pub pe_mode: PeMode,
    /// "rmse" (lower is better) or "balanced_accuracy" (higher is better).
    pub metric_name: String,
    pub chosen_alpha: f64,
    /// (alpha, validation score) pairs; scores are higher-is-better.
    pub alpha_scores: Vec<(f64, f64)>,
    pub test_metric: f64,
    /// Test metric of the PE-free baseline trained under the same seed.
    pub baseline_test_metric: Option<f64>,
    pub effective_rank: f64,
    pub n_params: usize,
    pub best_epoch: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TargetArtifact {
    task: TaskKind,
    y: Option<Vec<f64>>,
    labels: Option<Vec<usize>>,
    class_names: Vec<String>,
    splits: Splits,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SpectrumArtifact {
    eigenvalues: Vec<f64>,
    k_first: usize,
    k_last: usize,
    laplacian: LaplacianKind,
    n_pe_columns: usize,
}

/// Everything the graph/PE/train stages need for one seed, reassembled from
/// persisted data-stage artifacts.
struct PreparedData {
    /// Train-fit standardized feature matrix.
    x: Array2<f64>,
    targets: TargetData,
    splits: Splits,
    /// One-hot groups (singletons for synthetic/continuous features).
    groups: Vec<Vec<usize>>,
    n_classes: usize,
}

/// Relative improvement over a baseline, in percent. For lower-is-better
/// metrics (RMSE) a drop is positive; for higher-is-better metrics
/// (accuracy) a gain is positive. Identical values give exactly 0.
pub fn improvement_pct(baseline: f64, treated: f64, higher_is_better: bool) -> f64 {
    if treated == baseline || baseline == 0.0 {
        return 0.0;
    }
    if higher_is_better {
        100.0 * (treated - baseline) / baseline
    } else {
        100.0 * (baseline - treated) / baseline
    }
}

fn seed_dir(run_dir: &Path, stage: &str, seed: u64) -> PathBuf {
    run_dir.join(stage).join(format!("seed{seed}"))
}

/// Runs `build` into a temp directory, then renames it into place so the
/// seed directory appears atomically. Pre-existing partial output is
/// replaced.
fn build_seed_dir<F>(final_dir: &Path, build: F) -> Result<Vec<PathBuf>>
where
    F: FnOnce(&Path) -> Result<Vec<String>>,
{
    let parent = final_dir
        .parent()
        .ok_or_else(|| Error::InvalidArgument("seed dir has no parent".into()))?;
    fs::create_dir_all(parent)?;
    let tmp = parent.join(format!(
        ".tmp-{}",
        final_dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
    ));
    if tmp.exists() {
        fs::remove_dir_all(&tmp)?;
    }
    fs::create_dir_all(&tmp)?;
    let names = build(&tmp)?;
    if final_dir.exists() {
        fs::remove_dir_all(final_dir)?;
    }
    fs::rename(&tmp, final_dir)?;
    Ok(names.into_iter().map(|n| final_dir.join(n)).collect())
}

fn run_stage<F>(manifest: &mut Manifest, run_dir: &Path, name: &str, f: F) -> Result<()>
where
    F: FnOnce() -> Result<Vec<PathBuf>>,
{
    // Resume: skip a completed stage whose artifacts all verify.
    if let Some(record) = manifest.stages.get(name) {
        let intact = !record.artifacts.is_empty()
            && record.artifacts.iter().all(|(rel, expected)| {
                let p = run_dir.join(rel);
                p.is_file() && hash_file(&p).map(|h| &h == expected).unwrap_or(false)
            });
        if intact {
            return Ok(());
        }
    }
    let artifacts = f().map_err(|e| match e {
        already @ Error::Stage { .. } => already,
        other => Error::Stage { stage: name.to_string(), source: Box::new(other) },
    })?;
    let mut record = StageRecord::default();
    for p in &artifacts {
        let rel = p
            .strip_prefix(run_dir)
            .map_err(|_| Error::InvalidArgument(format!("artifact {} outside run dir", p.display())))?
            .to_string_lossy()
            .replace('\\', "/");
        record.artifacts.insert(rel, hash_file(p)?);
    }
    manifest.stages.insert(name.to_string(), record);
    save_json_atomic(&run_dir.join("manifest.json"), manifest)?;
    Ok(())
}

/// Executes all stages for `cfg`, resuming from persisted artifacts when the
/// run directory already holds a matching manifest. Returns the run
/// directory.
pub fn run_pipeline(cfg: &RunConfig) -> Result<PathBuf> {
    cfg.validate()?;
    let run_dir = cfg.run_dir();
    fs::create_dir_all(&run_dir)?;
    let config_hash = cfg.hash();
    let manifest_path = run_dir.join("manifest.json");
    let mut manifest = if manifest_path.is_file() {
        let existing: Manifest = load_json(&manifest_path)?;
        if existing.config_hash != config_hash {
            return Err(Error::Config(format!(
                "{} holds a run with config hash {}, but this config hashes to {}",
                run_dir.display(),
                existing.config_hash,
                config_hash
            )));
        }
        existing
    } else {
        Manifest { config_hash, stages: BTreeMap::new() }
    };

    run_stage(&mut manifest, &run_dir, "config", || {
        let path = run_dir.join("config.txt");
        write_atomic(&path, cfg.canonical().as_bytes())?;
        Ok(vec![path])
    })?;

    run_stage(&mut manifest, &run_dir, "data", || stage_data(cfg, &run_dir))?;

    if cfg.pe_mode != PeMode::None {
        run_stage(&mut manifest, &run_dir, "graph", || stage_graph(cfg, &run_dir))?;
        run_stage(&mut manifest, &run_dir, "pe", || stage_pe(cfg, &run_dir))?;
    }

    run_stage(&mut manifest, &run_dir, "train", || stage_train(cfg, &run_dir))?;
    run_stage(&mut manifest, &run_dir, "report", || stage_report(&run_dir))?;
    Ok(run_dir)
}

fn stage_data(cfg: &RunConfig, run_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut artifacts = Vec::new();
    match cfg.source {
        DataSource::Synth => {
            for &seed in &cfg.seeds {
                let spec = SyntheticSpec::new(cfg.synth_d, cfg.synth_k, cfg.synth_n, seed);
                let (x, y, truth) = synthetic::generate(&spec)?;
                let dir = seed_dir(run_dir, "data", seed);
                artifacts.extend(build_seed_dir(&dir, |tmp| {
                    synthetic::save_dataset(&x, &y, &truth, &tmp.join("dataset.csv"))?;
                    Ok(dataset_file_names(tmp)?)
                })?);
            }
        }
        DataSource::Csv => {
            let (features, targets, class_names) = load_csv_source(cfg)?;
            let n = features.n_rows();
            let labels_for_split: Option<Vec<usize>> = match &targets {
                CsvTargets::Labels(l) => Some(l.clone()),
                CsvTargets::Values(_) => None,
            };
            for &seed in &cfg.seeds {
                let ratios = (cfg.train_frac, cfg.val_frac, 1.0 - cfg.train_frac - cfg.val_frac);
                let [train, val, test] =
                    preprocess::split_stratified(n, labels_for_split.as_deref(), ratios, seed)?;
                let table = preprocess::encode(&features, Some(&train))?;
                let artifact = TargetArtifact {
                    task: cfg.task,
                    y: match &targets {
                        CsvTargets::Values(v) => Some(v.clone()),
                        CsvTargets::Labels(_) => None,
                    },
                    labels: match &targets {
                        CsvTargets::Labels(l) => Some(l.clone()),
                        CsvTargets::Values(_) => None,
                    },
                    class_names: class_names.clone(),
                    splits: Splits { train, val, test },
                };
                let dir = seed_dir(run_dir, "data", seed);
                artifacts.extend(build_seed_dir(&dir, |tmp| {
                    preprocess::save_feature_table(&table, &tmp.join("table.csv"))?;
                    save_json_atomic(&tmp.join("targets.json"), &artifact)?;
                    Ok(dir_file_names(tmp)?)
                })?);
            }
        }
    }
    Ok(artifacts)
}

enum CsvTargets {
    Values(Vec<f64>),
    Labels(Vec<usize>),
}

/// Loads the raw CSV, splits off the target column, drops rows whose target
/// is missing, and runs missing-value handling on the features.
fn load_csv_source(cfg: &RunConfig) -> Result<(RawTable, CsvTargets, Vec<String>)> {
    let path = cfg.csv_path.as_ref().expect("validated");
    let target_name = cfg.target_column.as_ref().expect("validated");
    let raw = preprocess::load_csv(path, &cfg.column_kinds)?;
    let target_idx = raw
        .columns
        .iter()
        .position(|c| &c.name == target_name)
        .ok_or_else(|| Error::Config(format!("target column '{target_name}' not in {}", path.display())))?;

    let target_col = raw.columns[target_idx].clone();
    let feature_cols: Vec<RawColumn> =
        raw.columns.iter().enumerate().filter(|(i, _)| *i != target_idx).map(|(_, c)| c.clone()).collect();
    if feature_cols.is_empty() {
        return Err(Error::EmptyInput("no feature columns besides the target".into()));
    }

    // Drop rows with a missing target before feature missing-handling.
    let target_present: Vec<bool> = target_col
        .values
        .iter()
        .map(|v| match v {
            None => false,
            Some(s) => !s.is_empty() && s != "NA",
        })
        .collect();
    let keep: Vec<usize> = (0..raw.n_rows()).filter(|&r| target_present[r]).collect();
    if keep.is_empty() {
        return Err(Error::AllRowsDeleted);
    }
    let filtered = RawTable {
        columns: feature_cols
            .into_iter()
            .map(|c| RawColumn {
                name: c.name,
                kind: c.kind,
                values: keep.iter().map(|&r| c.values[r].clone()).collect(),
            })
            .collect(),
    };
    let target_values: Vec<Option<String>> = keep.iter().map(|&r| target_col.values[r].clone()).collect();

    let (clean, kept_rows) = preprocess::handle_missing_indexed(&filtered)?;
    let aligned_targets: Vec<&Option<String>> = kept_rows.iter().map(|&r| &target_values[r]).collect();

    match cfg.task {
        TaskKind::Regression => {
            let y = aligned_targets
                .iter()
                .map(|v| {
                    let s = v.as_ref().expect("missing targets dropped above");
                    s.parse::<f64>().map_err(|e| {
                        Error::Config(format!("target '{s}' is not numeric ({e}); use data.task = classification?"))
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok((clean, CsvTargets::Values(y), Vec::new()))
        }
        TaskKind::Classification => {
            let mut names: Vec<String> = aligned_targets
                .iter()
                .map(|v| v.as_ref().expect("missing targets dropped above").clone())
                .collect::<std::collections::BTreeSet<_>>()
                .into_iter()
                .collect();
            names.sort();
            let index: BTreeMap<&String, usize> = names.iter().enumerate().map(|(i, n)| (n, i)).collect();
            let labels = aligned_targets
                .iter()
                .map(|v| index[&v.as_ref().expect("missing targets dropped above").clone()])
                .collect();
            Ok((clean, CsvTargets::Labels(labels), names))
        }
    }
}

fn dir_file_names(dir: &Path) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        if entry.file_type()?.is_file() {
            names.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    names.sort();
    Ok(names)
}

fn dataset_file_names(dir: &Path) -> Result<Vec<String>> {
    dir_file_names(dir)
}

/// Reassembles standardized features, targets, and splits for one seed from
/// the persisted data artifacts.
fn prepare_data(cfg: &RunConfig, run_dir: &Path, seed: u64) -> Result<PreparedData> {
    match cfg.source {
        DataSource::Synth => {
            let (x, y, _) = synthetic::load_dataset(&seed_dir(run_dir, "data", seed).join("dataset.csv"))?;
            let splits = permutation_split(x.nrows(), cfg.train_frac, cfg.val_frac, seed)?;
            let x = standardize_on_rows(&x, &splits.train)?;
            let groups = (0..x.ncols()).map(|c| vec![c]).collect();
            Ok(PreparedData { x, targets: TargetData::Regression(y), splits, groups, n_classes: 0 })
        }
        DataSource::Csv => {
            let dir = seed_dir(run_dir, "data", seed);
            let table = preprocess::load_feature_table(&dir.join("table.csv"))?;
            let art: TargetArtifact = load_json(&dir.join("targets.json"))?;
            let (targets, n_classes) = match art.task {
                TaskKind::Regression => (
                    TargetData::Regression(
                        art.y.ok_or_else(|| Error::Config("regression run lacks y values".into()))?,
                    ),
                    0,
                ),
                TaskKind::Classification => {
                    let labels =
                        art.labels.ok_or_else(|| Error::Config("classification run lacks labels".into()))?;
                    let n_classes = art.class_names.len().max(labels.iter().max().map_or(0, |m| m + 1));
                    (TargetData::Classification(labels), n_classes)
                }
            };
            Ok(PreparedData {
                x: table.data.clone(),
                targets,
                splits: art.splits,
                groups: table.groups.clone(),
                n_classes,
            })
        }
    }
}

fn rows_of(x: &Array2<f64>, rows: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((rows.len(), x.ncols()));
    for (r, &i) in rows.iter().enumerate() {
        out.row_mut(r).assign(&x.row(i));
    }
    out
}

fn stage_graph(cfg: &RunConfig, run_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut artifacts = Vec::new();
    for &seed in &cfg.seeds {
        let prep = prepare_data(cfg, run_dir, seed)?;
        let train_x = rows_of(&prep.x, &prep.splits.train);
        let graph = match cfg.graph_method {
            GraphMethod::Pearson => graphs::pearson_graph(&train_x)?,
            GraphMethod::Spearman => graphs::spearman_graph(&train_x)?,
            GraphMethod::ChowLiu => graphs::chow_liu_tree(&train_x)?,
            GraphMethod::Notears => graphs::notears(&train_x, &cfg.notears)?,
            GraphMethod::Imported => {
                let path = cfg.import_path.as_ref().expect("validated");
                graphs::import_graph(path, false, Some(prep.x.ncols()))?
            }
        };
        let diag = graphs::diagnostics(&graph)?;
        let dir = seed_dir(run_dir, "graph", seed);
        artifacts.extend(build_seed_dir(&dir, |tmp| {
            graphs::save_graph(&graph, &tmp.join("graph.csv"))?;
            save_json_atomic(&tmp.join("diagnostics.json"), &diag)?;
            dir_file_names(tmp)
        })?);
    }
    Ok(artifacts)
}

fn stage_pe(cfg: &RunConfig, run_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut artifacts = Vec::new();
    for &seed in &cfg.seeds {
        let prep = prepare_data(cfg, run_dir, seed)?;
        let graph = graphs::load_graph(&seed_dir(run_dir, "graph", seed).join("graph.csv"))?;
        let sym = spectral::symmetrize(&graph.weights)?;
        let decomp = spectral::laplacian(&sym, cfg.laplacian)?;
        let (k_first, k_last) = match cfg.k_selection {
            KSelection::Auto => spectral::auto_select_k(&decomp.eigenvalues),
            KSelection::Fixed { k_first, k_last } => (k_first, k_last),
        };
        // Store the unscaled (alpha = 1) PE; training applies the scale.
        let pe = spectral::build_pe(&decomp, k_first, k_last, 1.0)?;
        let pe = spectral::consolidate_onehot(&pe, &prep.groups)?;
        let spectrum = SpectrumArtifact {
            eigenvalues: decomp.eigenvalues.clone(),
            k_first,
            k_last,
            laplacian: cfg.laplacian,
            n_pe_columns: pe.n_columns(),
        };
        let dir = seed_dir(run_dir, "pe", seed);
        artifacts.extend(build_seed_dir(&dir, |tmp| {
            spectral::save_pe(&pe, &tmp.join("pe.csv"))?;
            save_json_atomic(&tmp.join("spectrum.json"), &spectrum)?;
            dir_file_names(tmp)
        })?);
    }
    Ok(artifacts)
}

/// Spreads consolidated per-feature PE rows back onto every processed
/// column, so one-hot members share their feature's encoding.
fn expand_pe_rows(consolidated: &Array2<f64>, groups: &[Vec<usize>], n_cols: usize) -> Result<Array2<f64>> {
    if consolidated.nrows() != groups.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} PE rows for {} feature groups",
            consolidated.nrows(),
            groups.len()
        )));
    }
    let mut out = Array2::zeros((n_cols, consolidated.ncols()));
    for (g, group) in groups.iter().enumerate() {
        for &c in group {
            if c >= n_cols {
                return Err(Error::DimensionMismatch(format!("group column {c} out of range {n_cols}")));
            }
            out.row_mut(c).assign(&consolidated.row(g));
        }
    }
    Ok(out)
}

fn task_of(prep: &PreparedData, cfg: &RunConfig) -> Task {
    match cfg.task {
        TaskKind::Regression => Task::Regression,
        TaskKind::Classification => Task::Classification(prep.n_classes),
    }
}

fn val_score(report: &model::TrainReport, higher_is_better: bool) -> f64 {
    if higher_is_better {
        report.best_val_metric
    } else {
        -report.best_val_metric
    }
}

fn stage_train(cfg: &RunConfig, run_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut artifacts = Vec::new();
    for &seed in &cfg.seeds {
        let prep = prepare_data(cfg, run_dir, seed)?;
        let n_features = prep.x.ncols();
        let task = task_of(&prep, cfg);
        let higher_is_better = matches!(task, Task::Classification(_));
        let metric_name =
            if higher_is_better { "balanced_accuracy".to_string() } else { "rmse".to_string() };

        // PE geometry comes from the PE stage unless PEs are disabled.
        let (d_pe, pe_base) = if cfg.pe_mode == PeMode::None {
            (0, None)
        } else {
            let pe = spectral::load_pe(&seed_dir(run_dir, "pe", seed).join("pe.csv"))?;
            let expanded = expand_pe_rows(&pe.values, &prep.groups, n_features)?;
            (pe.n_columns(), Some(expanded))
        };

        let build_spec = |mode: PeMode| -> ModelSpec {
            let mut spec = ModelSpec::new(n_features, cfg.d_token, d_pe, task);
            spec.pe_mode = mode;
            spec.seed = seed;
            spec.n_layers = cfg.n_layers;
            spec.n_heads = cfg.n_heads;
            spec.attn_dropout = cfg.attn_dropout;
            spec.ffn_dropout = cfg.ffn_dropout;
            spec
        };
        let mut train_cfg = cfg.train.clone();
        train_cfg.shuffle_seed = seed;

        let run_at = |alpha: f64| -> Result<(FtTransformer, model::TrainReport)> {
            let mut m = FtTransformer::new(build_spec(cfg.pe_mode))?;
            match cfg.pe_mode {
                PeMode::None | PeMode::Learnable => {}
                PeMode::Fixed => {
                    let base = pe_base.as_ref().expect("fixed mode has a PE stage");
                    m.set_fixed_pe(&(base * alpha))?;
                }
                PeMode::Random => {
                    let pe = spectral::random_pe(n_features, d_pe, alpha, seed + RANDOM_PE_SEED_OFFSET)?;
                    m.set_fixed_pe(&pe.values)?;
                }
            }
            let report = model::train(&mut m, &prep.x, &prep.targets, &prep.splits, &train_cfg)?;
            Ok((m, report))
        };

        // Alpha is inert for modes none/learnable: train once.
        let sweep_alphas: Vec<f64> = match cfg.pe_mode {
            PeMode::None | PeMode::Learnable => vec![0.0],
            PeMode::Fixed | PeMode::Random => cfg.alphas.clone(),
        };
        let mut runs: Vec<(f64, FtTransformer, model::TrainReport)> = Vec::new();
        for &alpha in &sweep_alphas {
            let (m, r) = run_at(alpha)?;
            runs.push((alpha, m, r));
        }
        let (chosen_alpha, alpha_scores) = model::alpha_select(&sweep_alphas, |alpha| {
            let (_, _, r) = runs.iter().find(|(a, _, _)| *a == alpha).expect("alpha trained");
            Ok(val_score(r, higher_is_better))
        })?;
        let (_, chosen_model, chosen_report) =
            runs.iter().find(|(a, _, _)| *a == chosen_alpha).expect("chosen alpha trained");

        // PE-free baseline under the same seed, for improvement reporting.
        let baseline_test_metric = if cfg.pe_mode == PeMode::None {
            None
        } else {
            let mut baseline = FtTransformer::new(build_spec(PeMode::None))?;
            let report = model::train(&mut baseline, &prep.x, &prep.targets, &prep.splits, &train_cfg)?;
            report.test_metric
        };

        let emb = chosen_model.cls_embeddings(&rows_of(&prep.x, &prep.splits.test))?;
        let metrics = SeedMetrics {
            seed,
            pe_mode: cfg.pe_mode,
            metric_name,
            chosen_alpha,
            alpha_scores,
            test_metric: chosen_report.test_metric.unwrap_or(f64::NAN),
            baseline_test_metric,
            effective_rank: effective_rank(&emb)?,
            n_params: chosen_model.param_count(),
            best_epoch: chosen_report.best_epoch,
        };
        let dir = seed_dir(run_dir, "train", seed);
        artifacts.extend(build_seed_dir(&dir, |tmp| {
            chosen_model.save(
                &tmp.join("model.bin"),
                serde_json::json!({"seed": seed, "chosen_alpha": chosen_alpha}),
            )?;
            save_json_atomic(&tmp.join("metrics.json"), &metrics)?;
            dir_file_names(tmp)
        })?);
    }
    Ok(artifacts)
}

fn stage_report(run_dir: &Path) -> Result<Vec<PathBuf>> {
    let summary = report(run_dir)?;
    let dir = run_dir.join("report");
    fs::create_dir_all(&dir)?;
    let csv_path = dir.join("report.csv");
    let txt_path = dir.join("summary.txt");
    write_atomic(&csv_path, summary.csv.as_bytes())?;
    write_atomic(&txt_path, summary.text.as_bytes())?;
    Ok(vec![csv_path, txt_path])
}

/// Aggregated view of a completed (or partially completed) run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportSummary {
    /// Long-format CSV: mode,alpha,seed,metric,value.
    pub csv: String,
    /// Human-readable digest.
    pub text: String,
    /// Artifacts that were expected but missing; empty for complete runs.
    pub missing: Vec<String>,
    pub per_seed: Vec<SeedMetrics>,
    pub mean_test_metric: Option<f64>,
    /// Mean improvement over the PE-free baseline, percent.
    pub mean_improvement_pct: Option<f64>,
}

/// Builds the run report from persisted artifacts. Missing artifacts are
/// listed and the remaining report is still emitted.
pub fn report(run_dir: &Path) -> Result<ReportSummary> {
    let cfg_path = run_dir.join("config.txt");
    let cfg = RunConfig::parse(&fs::read_to_string(&cfg_path).map_err(|e| {
        Error::Config(format!("cannot read {}: {e} (was the config stage run?)", cfg_path.display()))
    })?)?;

    // Record paths relative to the run dir so report bytes are identical
    // across relocated reruns.
    let rel = |p: &Path| {
        p.strip_prefix(run_dir).unwrap_or(p).to_string_lossy().replace('\\', "/")
    };
    let mut missing = Vec::new();
    let mut per_seed: Vec<SeedMetrics> = Vec::new();
    let mut diags: Vec<(u64, graphs::GraphDiagnostics)> = Vec::new();
    for &seed in &cfg.seeds {
        let metrics_path = seed_dir(run_dir, "train", seed).join("metrics.json");
        match load_json::<SeedMetrics>(&metrics_path) {
            Ok(m) => per_seed.push(m),
            Err(_) => missing.push(rel(&metrics_path)),
        }
        if cfg.pe_mode != PeMode::None {
            let diag_path = seed_dir(run_dir, "graph", seed).join("diagnostics.json");
            match load_json::<graphs::GraphDiagnostics>(&diag_path) {
                Ok(d) => diags.push((seed, d)),
                Err(_) => missing.push(rel(&diag_path)),
            }
        }
    }

    let mut csv = String::from("mode,alpha,seed,metric,value\n");
    for m in &per_seed {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            m.pe_mode, m.chosen_alpha, m.seed, m.metric_name, m.test_metric
        ));
        if let Some(b) = m.baseline_test_metric {
            csv.push_str(&format!("none,0,{},{},{}\n", m.seed, m.metric_name, b));
        }
        csv.push_str(&format!(
            "{},{},{},effective_rank,{}\n",
            m.pe_mode, m.chosen_alpha, m.seed, m.effective_rank
        ));
    }
    for (seed, d) in &diags {
        csv.push_str(&format!("graph,0,{seed},entropy,{}\n", d.entropy));
        csv.push_str(&format!("graph,0,{seed},fiedler,{}\n", d.fiedler));
    }

    let higher_is_better = per_seed.first().map(|m| m.metric_name == "balanced_accuracy").unwrap_or(false);
    let mean_test_metric = if per_seed.is_empty() {
        None
    } else {
        Some(per_seed.iter().map(|m| m.test_metric).sum::<f64>() / per_seed.len() as f64)
    };
    let improvements: Vec<f64> = per_seed
        .iter()
        .filter_map(|m| {
            m.baseline_test_metric
                .map(|b| improvement_pct(b, m.test_metric, higher_is_better))
        })
        .collect();
    let mean_improvement_pct = if improvements.is_empty() {
        None
    } else {
        Some(improvements.iter().sum::<f64>() / improvements.len() as f64)
    };

    let mut text = format!("run config {}\n", cfg.hash());
    if let Some(mean) = mean_test_metric {
        let name = per_seed.first().map(|m| m.metric_name.as_str()).unwrap_or("metric");
        text.push_str(&format!("mean test {name}: {mean:.6} over {} seeds\n", per_seed.len()));
    }
    if let Some(impr) = mean_improvement_pct {
        text.push_str(&format!("mean improvement over PE-free baseline: {impr:.2}%\n"));
    }
    for m in &per_seed {
        text.push_str(&format!(
            "  seed {:>3}: alpha={:<6} test {}={:.6} rank={:.3} best_epoch={}",
            m.seed, m.chosen_alpha, m.metric_name, m.test_metric, m.effective_rank, m.best_epoch
        ));
        if let Some(b) = m.baseline_test_metric {
            text.push_str(&format!(
                " baseline={:.6} improvement={:.2}%",
                b,
                improvement_pct(b, m.test_metric, higher_is_better)
            ));
        }
        text.push('\n');
    }
    for (seed, d) in &diags {
        text.push_str(&format!(
            "  graph seed {seed}: entropy={:.4} fiedler={:.6}{}\n",
            d.entropy,
            d.fiedler,
            if d.degenerate { " (degenerate)" } else { "" }
        ));
    }
    if !missing.is_empty() {
        text.push_str("missing artifacts:\n");
        for m in &missing {
            text.push_str(&format!("  {m}\n"));
        }
    }

    Ok(ReportSummary { csv, text, missing, per_seed, mean_test_metric, mean_improvement_pct })
}
