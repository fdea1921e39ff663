//! Pipeline plumbing shared by the command-line tool and the C interface:
//! resolved run configuration, dataset construction, target training and
//! run directories with manifests and logs.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attack::{budget_from_percent, AttackConfig, StudyConfig};
use crate::community::{partition, PartitionConfig, PartitionResult};
use crate::data::{load_dataset, write_dataset, LoadOptions};
use crate::data::synth::{generate, SyntheticConfig};
use crate::data::{split_interactions, Dataset, Split};
use crate::error::{Error, Result};
use crate::gradcore::TensorArchive;
use crate::guard::LofConfig;
use crate::recenv::{train, RecConfig, RecModel};
use crate::seed::SeedStream;

/// Environment variable naming the parent directory of run directories.
pub const RUN_DIR_ENV: &str = "SOCATTACK_RUN_DIR";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DefenseConfig {
    /// Perturbation radius for adversarial fine-tuning.
    pub eps: f64,
    /// Fine-tuning epochs applied to the trained target.
    pub epochs: usize,
}

impl Default for DefenseConfig {
    fn default() -> Self {
        DefenseConfig { eps: 0.5, epochs: 100 }
    }
}

/// Everything a run reads. Serialized verbatim into the manifest so that a
/// manifest can be fed back as a config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// `lastfm` or `small` (synthetic worlds) or `files`.
    pub dataset: String,
    pub interactions: Option<PathBuf>,
    pub social: Option<PathBuf>,
    pub skip_header: bool,
    pub seed: u64,
    pub test_fraction: f64,
    /// Fake users as a percentage of real users.
    pub budget_pct: f64,
    pub target: RecConfig,
    /// Trained target archive to load instead of training.
    pub target_archive: Option<PathBuf>,
    pub partition: PartitionConfig,
    pub attack: AttackConfig,
    pub study: StudyConfig,
    pub lof: LofConfig,
    pub defense: DefenseConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: "lastfm".into(),
            interactions: None,
            social: None,
            skip_header: false,
            seed: 0,
            test_fraction: 0.2,
            budget_pct: 2.0,
            target: RecConfig::default(),
            target_archive: None,
            partition: PartitionConfig::default(),
            attack: AttackConfig::default(),
            study: StudyConfig::default(),
            lof: LofConfig::default(),
            defense: DefenseConfig::default(),
        }
    }
}

impl RunConfig {
    /// Reads a config file, or the `config` member of a manifest.
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        let inner = match value.get("config") {
            Some(c) if value.get("subcommand").is_some() => c.clone(),
            _ => value,
        };
        Ok(serde_json::from_value(inner)?)
    }

    pub fn master(&self) -> SeedStream {
        SeedStream::new(self.seed)
    }

    /// Fills values that depend on the data: the attack seed and the fake
    /// count implied by `budget_pct`.
    pub fn resolve(&mut self, dataset: &Dataset) {
        self.attack.seed = self.seed;
        self.attack.budget.max_fake_users = budget_from_percent(dataset.real_user_count(), self.budget_pct);
    }
}

/// Dataset and split for a run, with a digest of the dataset content.
pub struct World {
    pub dataset: Dataset,
    pub split: Split,
    pub digest: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

/// Digest of the dataset in its text serialization.
pub fn dataset_digest(dataset: &Dataset) -> Result<String> {
    let mut inter = Vec::new();
    let mut social = Vec::new();
    write_dataset(dataset, &mut inter, &mut social)?;
    inter.push(b'\n');
    inter.extend(social);
    Ok(sha256_hex(&inter))
}

pub fn load_world(cfg: &RunConfig) -> Result<World> {
    let master = cfg.master();
    let dataset = match cfg.dataset.as_str() {
        "lastfm" => generate(&SyntheticConfig::lastfm_like(), master.derive("data"))?.dataset,
        "small" => generate(&SyntheticConfig::small(), master.derive("data"))?.dataset,
        "files" => {
            let (Some(i), Some(s)) = (&cfg.interactions, &cfg.social) else {
                return Err(Error::InvalidConfig("dataset 'files' needs interactions and social paths".into()));
            };
            let opts = LoadOptions { skip_header: cfg.skip_header };
            load_dataset(BufReader::new(File::open(i)?), BufReader::new(File::open(s)?), &opts)?
        }
        other => {
            return Err(Error::InvalidConfig(format!(
                "no built-in dataset '{other}'; use lastfm, small or files with explicit paths"
            )))
        }
    };
    let split = split_interactions(&dataset, cfg.test_fraction, master.derive("split"))?;
    let digest = dataset_digest(&dataset)?;
    Ok(World { dataset, split, digest })
}

/// Loads the configured target archive or trains a fresh target.
pub fn build_target(cfg: &RunConfig, world: &World) -> Result<RecModel> {
    let seed = cfg.master().derive("target");
    match &cfg.target_archive {
        Some(path) => {
            let archive = TensorArchive::from_json(&fs::read_to_string(path)?)?;
            let mut model = RecModel::new(cfg.target.clone(), &world.dataset, &world.split.train, seed.derive("init"))?;
            model.load_archive(&archive)?;
            Ok(model)
        }
        None => train(&cfg.target, &world.dataset, &world.split.train, seed),
    }
}

pub fn build_partition(cfg: &RunConfig, world: &World) -> Result<PartitionResult> {
    partition(world.dataset.user_count(), world.dataset.social_edges(), &cfg.partition, cfg.master().derive("partition"))
}

/// Output location of a run plus the manifest being assembled.
pub struct RunDir {
    pub path: PathBuf,
    pub manifest: RunManifest,
    started: Instant,
    log: BufWriter<File>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config: RunConfig,
    pub seed: u64,
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub started_at: String,
    pub elapsed_ms: u128,
    pub status: String,
}

/// `<base>/<UTC timestamp>-seed<seed>-<subcommand>`, with a numeric suffix
/// when that directory already exists.
pub fn run_dir_path(base: &Path, stamp: &str, seed: u64, subcommand: &str) -> PathBuf {
    let stem = format!("{stamp}-seed{seed}-{subcommand}");
    let mut path = base.join(&stem);
    let mut k = 1;
    while path.exists() {
        path = base.join(format!("{stem}-{k}"));
        k += 1;
    }
    path
}

pub fn default_run_base() -> PathBuf {
    std::env::var_os(RUN_DIR_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from)
}

impl RunDir {
    /// Creates the directory (`out` verbatim, or a fresh timestamped one
    /// under `base`) and opens its JSON-lines log.
    pub fn create(out: Option<&Path>, base: &Path, subcommand: &str, config: &RunConfig) -> Result<Self> {
        let now = chrono::Utc::now();
        let path = match out {
            Some(p) => p.to_path_buf(),
            None => run_dir_path(base, &now.format("%Y%m%dT%H%M%SZ").to_string(), config.seed, subcommand),
        };
        fs::create_dir_all(&path)?;
        let log = BufWriter::new(File::create(path.join("log.jsonl"))?);
        Ok(RunDir {
            manifest: RunManifest {
                subcommand: subcommand.into(),
                config: config.clone(),
                seed: config.seed,
                inputs: BTreeMap::new(),
                outputs: vec!["log.jsonl".into()],
                started_at: now.to_rfc3339(),
                elapsed_ms: 0,
                status: "running".into(),
            },
            path,
            started: Instant::now(),
            log,
        })
    }

    /// Appends one JSON object to the log, stamped with the stage name.
    pub fn log(&mut self, stage: &str, mut event: serde_json::Value) -> Result<()> {
        if let Some(obj) = event.as_object_mut() {
            obj.insert("stage".into(), stage.into());
            obj.insert("elapsed_ms".into(), (self.started.elapsed().as_millis() as u64).into());
        }
        serde_json::to_writer(&mut self.log, &event)?;
        self.log.write_all(b"\n")?;
        Ok(())
    }

    pub fn input(&mut self, name: &str, digest: String) {
        self.manifest.inputs.insert(name.into(), digest);
    }

    /// Opens `name` for writing and records it as an output.
    pub fn output(&mut self, name: &str) -> Result<BufWriter<File>> {
        self.manifest.outputs.push(name.into());
        Ok(BufWriter::new(File::create(self.path.join(name))?))
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut w = self.output(name)?;
        serde_json::to_writer_pretty(&mut w, value)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    pub fn set_config(&mut self, config: &RunConfig) {
        self.manifest.config = config.clone();
    }

    /// Writes `manifest.json` with the final status.
    pub fn finish(mut self, status: &Result<()>) -> Result<PathBuf> {
        self.manifest.elapsed_ms = self.started.elapsed().as_millis();
        self.manifest.status = match status {
            Ok(()) => "ok".into(),
            Err(e) => format!("error: {e}"),
        };
        self.log.flush()?;
        let mut w = BufWriter::new(File::create(self.path.join("manifest.json"))?);
        serde_json::to_writer_pretty(&mut w, &self.manifest)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(self.path)
    }
}
