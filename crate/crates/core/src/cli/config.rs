use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::CorpusSpec;
use crate::encoder::ModelConfig;
use crate::pipeline::ExperimentSettings;
use crate::tokenizer::SPECIAL_TOKENS;
use crate::training::TrainConfig;

pub const OUTPUT_DIR_ENV: &str = "EXP_OUTPUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub output_dir: PathBuf,
    /// Defaults to `<output_dir>/generate/corpus.jsonl`.
    pub corpus: Option<PathBuf>,
    /// Defaults to `<output_dir>/tokenizer/vocab.txt`.
    pub vocab: Option<PathBuf>,
    /// Defaults to `<output_dir>/pretrain/encoder.ckpt`.
    pub pretrained: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("runs"),
            corpus: None,
            vocab: None,
            pretrained: None,
        }
    }
}

impl Paths {
    pub fn stage_dir(&self, stage: &str) -> PathBuf {
        self.output_dir.join(stage)
    }

    pub fn corpus(&self) -> PathBuf {
        self.corpus.clone().unwrap_or_else(|| self.stage_dir("generate").join("corpus.jsonl"))
    }

    pub fn vocab(&self) -> PathBuf {
        self.vocab.clone().unwrap_or_else(|| self.stage_dir("tokenizer").join("vocab.txt"))
    }

    pub fn pretrained(&self) -> PathBuf {
        self.pretrained.clone().unwrap_or_else(|| self.stage_dir("pretrain").join("encoder.ckpt"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TokenizerConfig {
    pub vocab_size: usize,
    pub min_freq: u64,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        Self {
            vocab_size: 4000,
            min_freq: 2,
        }
    }
}

/// Everything a run needs. `model.vocab_size` is replaced by the size of the
/// trained vocabulary at pre-training time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub paths: Paths,
    pub corpus: CorpusSpec,
    pub tokenizer: TokenizerConfig,
    pub model: ModelConfig,
    pub pretrain: TrainConfig,
    pub experiment: ExperimentSettings,
    pub k_folds: usize,
    pub fold_seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            paths: Paths::default(),
            corpus: CorpusSpec::default(),
            tokenizer: TokenizerConfig::default(),
            model: ModelConfig {
                max_seq_len: 512,
                ..ModelConfig::default()
            },
            pretrain: TrainConfig::pretrain_default(),
            experiment: ExperimentSettings::default(),
            k_folds: 5,
            fold_seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            bail!("missing input: {}", path.display());
        }
        let raw = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg: Self = serde_json::from_str(&raw).with_context(|| format!("invalid config {}", path.display()))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.corpus.validate()?;
        if self.tokenizer.vocab_size <= SPECIAL_TOKENS.len() {
            bail!("tokenizer.vocab_size must exceed the {} special tokens", SPECIAL_TOKENS.len());
        }
        self.model.validate()?;
        self.pretrain.validate()?;
        if self.pretrain.seq_len > self.model.max_seq_len {
            bail!(
                "pretrain.seq_len {} exceeds model.max_seq_len {}",
                self.pretrain.seq_len,
                self.model.max_seq_len
            );
        }
        self.experiment.validate(&self.model)?;
        if self.k_folds < 2 {
            bail!("k_folds must be at least 2");
        }
        Ok(())
    }

    pub fn apply_output_override(&mut self) {
        if let Some(dir) = std::env::var_os(OUTPUT_DIR_ENV).filter(|d| !d.is_empty()) {
            self.paths.output_dir = PathBuf::from(dir);
        }
    }
}

/// Hex SHA-256 of the canonical JSON form of `value`.
pub fn json_hash<T: Serialize>(value: &T) -> String {
    let raw = serde_json::to_vec(value).expect("config values serialize");
    hex::encode(Sha256::digest(raw))
}

pub fn file_hash(path: &Path) -> Result<String> {
    let mut f = fs::File::open(path).with_context(|| format!("missing input: {}", path.display()))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

/// Provenance of one stage directory. Carries no timestamps, so an identical
/// re-run writes identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub code_version: String,
    pub config_hash: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl Manifest {
    pub fn new<T: Serialize>(command: &str, stage_config: &T, inputs: &[PathBuf]) -> Result<Self> {
        let mut map = BTreeMap::new();
        for p in inputs {
            map.insert(p.display().to_string(), file_hash(p)?);
        }
        Ok(Self {
            command: command.into(),
            code_version: format!("radstruct {}", env!("CARGO_PKG_VERSION")),
            config_hash: json_hash(stage_config),
            inputs: map,
            outputs: BTreeMap::new(),
        })
    }

    pub fn load(dir: &Path) -> Result<Option<Self>> {
        let path = dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(None);
        }
        let raw = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        Ok(Some(serde_json::from_str(&raw).with_context(|| format!("invalid manifest {}", path.display()))?))
    }

    /// Refuses to reuse a directory that holds a different run.
    pub fn claim(&self, dir: &Path, force: bool) -> Result<()> {
        if let Some(old) = Self::load(dir)? {
            let same = old.command == self.command && old.config_hash == self.config_hash && old.inputs == self.inputs;
            if !same && !force {
                bail!(
                    "{} already holds a different {} run; choose another output_dir or pass --force",
                    dir.display(),
                    old.command
                );
            }
        }
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(())
    }

    /// Hashes `outputs` (paths relative to `dir` where possible) and writes the manifest.
    pub fn finish(mut self, dir: &Path, outputs: &[PathBuf]) -> Result<Self> {
        for p in outputs {
            let key = p.strip_prefix(dir).unwrap_or(p).display().to_string();
            self.outputs.insert(key, file_hash(p)?);
        }
        let path = dir.join(MANIFEST_FILE);
        let mut raw = serde_json::to_string_pretty(&self)?;
        raw.push('\n');
        fs::write(&path, raw).with_context(|| format!("writing {}", path.display()))?;
        Ok(self)
    }
}

/// Regular files directly under `dir`, manifest excluded, sorted by name.
pub fn dir_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.file_name().is_some_and(|n| n != MANIFEST_FILE))
        .collect();
    files.sort();
    Ok(files)
}
