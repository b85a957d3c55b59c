//! Config resolution, data sources, run manifests and output-directory locks.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use fairforecast_core::config::parse_kv;
use fairforecast_core::{
    chronological_split, load_series, make_windows, synth_two_group, MinMaxNormalizer, SeriesMatrix, Split,
    SynthConfig, TrainConfig, VariableGroup, Windows,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::args::{ConfigArgs, DataArgs, HeaderMode, ScaleArg, SplitName, SynthParams};
use crate::UsageError;

pub const CHECKPOINT_FILE: &str = "checkpoint.ffc";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const HISTORY_FILE: &str = "history.csv";
pub const VALIDATION_FILE: &str = "validation.csv";

fn scale_str(s: ScaleArg) -> &'static str {
    match s {
        ScaleArg::Original => "original",
        ScaleArg::Normalized => "normalized",
    }
}

/// Defaults, then the config file, then explicit flags.
pub fn resolve_config(args: &ConfigArgs) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let pairs = parse_kv(&text).map_err(|e| UsageError(format!("{}: {e}", path.display())))?;
        cfg.apply_kv(&pairs)
            .map_err(|e| UsageError(format!("{}: {e}", path.display())))?;
    }
    let mut flags: Vec<(String, String)> = Vec::new();
    let mut put = |k: &str, v: Option<String>| {
        if let Some(v) = v {
            flags.push((k.to_string(), v));
        }
    };
    put("window", args.window.map(|v| v.to_string()));
    put("horizon", args.horizon.map(|v| v.to_string()));
    put("hidden", args.hidden.map(|v| v.to_string()));
    put("embed_dim", args.embed_dim.map(|v| v.to_string()));
    put("clusters", args.clusters.map(|v| v.to_string()));
    put("top_n", args.top_n.clone());
    put("lambda_a", args.lambda_a.map(|v| format!("{v:?}")));
    put("lr_generator", args.lr_generator.map(|v| format!("{v:?}")));
    put("lr_discriminator", args.lr_discriminator.map(|v| format!("{v:?}")));
    put("batch_size", args.batch_size.map(|v| v.to_string()));
    put("epochs", args.epochs.map(|v| v.to_string()));
    put("seed", args.seed.map(|v| v.to_string()));
    put(
        "indicator_update_every",
        args.indicator_update_every.map(|v| v.to_string()),
    );
    put("indicator_update_unit", args.indicator_update_unit.clone());
    put("use_adversary", args.use_adversary.map(|v| v.to_string()));
    put("use_clustering_loss", args.use_clustering_loss.map(|v| v.to_string()));
    put(
        "use_orthogonality_loss",
        args.use_orthogonality_loss.map(|v| v.to_string()),
    );
    put("adversary_sign", args.adversary_sign.clone());
    put("clip_norm", args.clip_norm.clone());
    put("shuffle", args.shuffle.map(|v| v.to_string()));
    put("metric_scale", args.metric_scale.map(|s| scale_str(s).to_string()));
    put("split_ratios", args.split_ratios.clone());
    cfg.apply_kv(&flags).map_err(|e| UsageError(e.to_string()))?;
    cfg.validate().map_err(|e| UsageError(e.to_string()))?;
    Ok(cfg)
}

pub fn metric_scale(s: ScaleArg) -> fairforecast_core::MetricScale {
    match s {
        ScaleArg::Original => fairforecast_core::MetricScale::Original,
        ScaleArg::Normalized => fairforecast_core::MetricScale::Normalized,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthDescriptor {
    pub n_easy: usize,
    pub n_hard: usize,
    pub steps: usize,
    pub noise_easy: f64,
    pub noise_hard: f64,
    pub seed: u64,
    pub period: f64,
    pub jump_every: usize,
    pub level: f64,
}

impl From<&SynthParams> for SynthDescriptor {
    fn from(p: &SynthParams) -> Self {
        SynthDescriptor {
            n_easy: p.n_easy,
            n_hard: p.n_hard,
            steps: p.steps,
            noise_easy: p.noise_easy,
            noise_hard: p.noise_hard,
            seed: p.synth_seed,
            period: p.period,
            jump_every: p.jump_every,
            level: p.level,
        }
    }
}

impl SynthDescriptor {
    pub fn to_config(&self) -> SynthConfig {
        SynthConfig {
            n_easy: self.n_easy,
            n_hard: self.n_hard,
            steps: self.steps,
            noise_easy: self.noise_easy,
            noise_hard: self.noise_hard,
            seed: self.seed,
            period: self.period,
            jump_every: self.jump_every,
            level: self.level,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Csv {
        path: PathBuf,
        header: bool,
        sha256: String,
    },
    Synthetic(SynthDescriptor),
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// A header is assumed when any field of the first non-empty line is not a number.
fn sniff_header(path: &Path) -> Result<bool> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    for line in BufReader::new(file).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        return Ok(line.split(',').any(|f| f.trim().parse::<f64>().is_err()));
    }
    Ok(false)
}

pub fn csv_source(path: &Path, header: HeaderMode) -> Result<DataSource> {
    let path = if path.is_absolute() {
        path.to_path_buf()
    } else {
        std::env::current_dir()?.join(path)
    };
    let bytes = fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
    let header = match header {
        HeaderMode::Yes => true,
        HeaderMode::No => false,
        HeaderMode::Auto => sniff_header(&path)?,
    };
    Ok(DataSource::Csv {
        path,
        header,
        sha256: hex_digest(&bytes),
    })
}

pub fn data_source(args: &DataArgs, synth: &SynthParams) -> Result<DataSource> {
    match (&args.data, args.synth) {
        (Some(path), _) => csv_source(path, args.header),
        (None, true) => Ok(DataSource::Synthetic(synth.into())),
        (None, false) => Err(UsageError("one of --data or --synth is required".into()).into()),
    }
}

pub struct LoadedData {
    pub series: SeriesMatrix,
    pub groups: Option<Vec<VariableGroup>>,
}

pub fn load(source: &DataSource) -> Result<LoadedData> {
    match source {
        DataSource::Csv { path, header, sha256 } => {
            let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
            let found = hex_digest(&bytes);
            if &found != sha256 {
                log::warn!(
                    "{} changed since the run was recorded ({found} vs {sha256})",
                    path.display()
                );
            }
            Ok(LoadedData {
                series: load_series(path, *header)?,
                groups: None,
            })
        }
        DataSource::Synthetic(d) => {
            let s = synth_two_group(&d.to_config())?;
            Ok(LoadedData {
                series: s.series,
                groups: Some(s.groups),
            })
        }
    }
}

/// Chronological split, normalizer fitted on train, and the three window sets.
pub struct Prepared {
    pub split: Split,
    pub normalizer: MinMaxNormalizer,
    pub train: Windows,
    pub val: Option<Windows>,
    pub test: Option<Windows>,
}

pub fn prepare(series: &SeriesMatrix, cfg: &TrainConfig, normalizer: Option<MinMaxNormalizer>) -> Result<Prepared> {
    let split = chronological_split(series, cfg.split_ratios)?;
    let normalizer = match normalizer {
        Some(n) => n,
        None => MinMaxNormalizer::fit(&split.train)?,
    };
    let windows =
        |s: &SeriesMatrix| -> Result<Windows> { Ok(make_windows(&normalizer.apply(s)?, cfg.window, cfg.horizon)?) };
    let train = windows(&split.train).context("training split")?;
    let optional = |s: &SeriesMatrix, name: &str| match windows(s) {
        Ok(w) => Some(w),
        Err(e) => {
            log::warn!("{name} split unusable: {e}");
            None
        }
    };
    let val = optional(&split.val, "validation");
    let test = optional(&split.test, "test");
    Ok(Prepared {
        split,
        normalizer,
        train,
        val,
        test,
    })
}

impl Prepared {
    pub fn windows(&self, which: SplitName) -> Result<&Windows> {
        match which {
            SplitName::Train => Ok(&self.train),
            SplitName::Val => self
                .val
                .as_ref()
                .context("validation split is too short for one window"),
            SplitName::Test => self.test.as_ref().context("test split is too short for one window"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub started_unix: u64,
    pub load_seconds: f64,
    pub train_seconds: f64,
    pub eval_seconds: f64,
    pub total_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub tool_version: String,
    pub command: String,
    /// Resolved configuration in its `key = value` form.
    pub config: BTreeMap<String, String>,
    pub data: DataSource,
    pub output_dir: PathBuf,
    pub n_vars: usize,
    pub split_steps: [usize; 3],
    /// Training seeds; more than one only for ablations.
    #[serde(default)]
    pub seeds: Vec<u64>,
    pub timings: Timings,
}

impl RunManifest {
    pub fn config(&self) -> Result<TrainConfig> {
        let pairs: Vec<(String, String)> = self.config.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        let mut cfg = TrainConfig::default();
        cfg.apply_kv(&pairs)?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }
}

pub fn config_map(cfg: &TrainConfig) -> BTreeMap<String, String> {
    parse_kv(&cfg.to_kv_text())
        .expect("canonical config text parses")
        .into_iter()
        .collect()
}

/// Short content hash of everything that determines a run's outcome.
pub fn run_id(cfg: &TrainConfig, source: &DataSource) -> String {
    let data = match source {
        DataSource::Csv { header, sha256, .. } => format!("csv header={header} sha256={sha256}"),
        DataSource::Synthetic(d) => serde_json::to_string(d).expect("descriptor serializes"),
    };
    hex_digest(format!("{}\n{data}", cfg.to_kv_text()).as_bytes())[..12].to_string()
}

pub fn resolve_out(root: Option<&Path>, out: &Path) -> PathBuf {
    match root {
        Some(r) if out.is_relative() => r.join(out),
        _ => out.to_path_buf(),
    }
}

/// Exclusive claim on an output directory, released on drop.
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(".lock");
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
                Ok(DirLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => bail!(
                "{} is in use by another run (remove {} if that run is gone)",
                dir.display(),
                path.display()
            ),
            Err(e) => Err(e).with_context(|| format!("creating {}", path.display())),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
