//! The `radstruct` command-line driver: one subcommand per pipeline stage,
//! each writing into its own directory under `paths.output_dir` together with
//! a `manifest.json`.

mod config;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::Serialize;

pub use config::{dir_files, file_hash, json_hash, ExperimentConfig, Manifest, Paths, TokenizerConfig, MANIFEST_FILE, OUTPUT_DIR_ENV};

use crate::checkpoint::{load_encoder, save_checkpoint, CheckpointHeader};
use crate::corpus::{generate_corpus, load_corpus, save_corpus, stratified_kfold, Fold, LabeledReport};
use crate::evalstat::{compare_runs, write_comparison_csv, write_comparison_markdown, EvalReport, StatTest};
use crate::pipeline::{
    run_experiment, run_sweep, train_field_model, train_segmenter, write_outcome, write_sweep, Backbone, FieldTask, Variant,
    SEGMENTATION_TASK,
};
use crate::tokenizer::{train_wordpiece, Vocab};
use crate::training::pretrain;

#[derive(Debug, Parser)]
#[command(name = "radstruct", version, about = "Radiology report structuring experiments")]
pub struct Cli {
    /// Experiment configuration (JSON).
    #[arg(long, global = true, env = "RADSTRUCT_CONFIG")]
    pub config: Option<PathBuf>,
    /// Overrides the seed of the stage being run.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; folds are evaluated in parallel.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    /// Share of each fold's training reports to keep.
    #[arg(long, global = true)]
    pub ablation: Option<f64>,
    #[arg(long, global = true)]
    pub variant: Option<Variant>,
    /// Overwrite a stage directory that holds a different run.
    #[arg(long, global = true)]
    pub force: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the synthetic labelled corpus.
    Generate,
    /// Train the WordPiece vocabulary on corpus sentences.
    TrainTokenizer,
    /// Masked-language-model pre-training of the encoder.
    Pretrain,
    /// Fine-tune deployable models on the whole corpus.
    Finetune {
        /// `segmentation`, a field task name, or `all`.
        #[arg(long, default_value = "all")]
        task: String,
    },
    /// Cross-validated evaluation of one variant.
    Evaluate,
    /// Pairwise significance tests between evaluated runs.
    Compare {
        /// Run directories holding `reports.json`.
        #[arg(long = "run", required = true, num_args = 1..)]
        runs: Vec<PathBuf>,
        /// Defaults to the U-test for segmentation and McNemar for fields.
        #[arg(long)]
        test: Option<StatTest>,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        /// Output subdirectory name under `compare/`.
        #[arg(long)]
        name: Option<String>,
    },
    /// Routed extraction across the sequence-length grid.
    Sweep,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Generate => "generate",
            Command::TrainTokenizer => "train-tokenizer",
            Command::Pretrain => "pretrain",
            Command::Finetune { .. } => "finetune",
            Command::Evaluate => "evaluate",
            Command::Compare { .. } => "compare",
            Command::Sweep => "sweep",
        }
    }
}

/// Parses the config, applies overrides, validates, then runs the command.
pub fn run(cli: Cli) -> Result<()> {
    let Some(path) = cli.config.as_deref() else {
        bail!("--config is required");
    };
    let mut cfg = ExperimentConfig::load(path)?;
    cfg.apply_output_override();
    if let Some(a) = cli.ablation {
        cfg.experiment.ablation_fraction = a;
    }
    if let Some(seed) = cli.seed {
        match cli.command {
            Command::Generate => cfg.corpus.seed = seed,
            Command::Pretrain => {
                cfg.model.seed = seed;
                cfg.pretrain.seed = seed;
            }
            _ => cfg.experiment.finetune.seed = seed,
        }
    }
    cfg.validate()?;
    if cli.jobs == 0 {
        bail!("--jobs must be positive");
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build()?;
    log::info!("{} (output under {})", cli.command.name(), cfg.paths.output_dir.display());
    pool.install(|| match &cli.command {
        Command::Generate => generate(&cfg, cli.force),
        Command::TrainTokenizer => train_tokenizer(&cfg, cli.force),
        Command::Pretrain => run_pretrain(&cfg, cli.force),
        Command::Finetune { task } => finetune(&cfg, task, cli.variant, cli.force),
        Command::Evaluate => evaluate(&cfg, cli.variant, cli.force),
        Command::Compare { runs, test, alpha, name } => compare(&cfg, runs, *test, *alpha, name.as_deref(), cli.force),
        Command::Sweep => sweep(&cfg, cli.force),
    })
}

fn require(path: &Path) -> Result<()> {
    if !path.is_file() {
        bail!("missing input: {}", path.display());
    }
    Ok(())
}

fn read_corpus(cfg: &ExperimentConfig) -> Result<Vec<LabeledReport>> {
    let path = cfg.paths.corpus();
    require(&path)?;
    let corpus = load_corpus(&path)?;
    if corpus.is_empty() {
        bail!("{} holds no reports", path.display());
    }
    Ok(corpus)
}

fn read_vocab(cfg: &ExperimentConfig) -> Result<Vocab> {
    let path = cfg.paths.vocab();
    require(&path)?;
    Ok(Vocab::load(&path)?)
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(p) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))?;
    }
    Ok(())
}

fn generate(cfg: &ExperimentConfig, force: bool) -> Result<()> {
    let dir = cfg.paths.stage_dir("generate");
    let manifest = Manifest::new("generate", &cfg.corpus, &[])?;
    manifest.claim(&dir, force)?;
    let corpus = generate_corpus(&cfg.corpus)?;
    for r in &corpus {
        r.validate().with_context(|| format!("generated report {} is inconsistent", r.report_id))?;
    }
    let path = cfg.paths.corpus();
    ensure_parent(&path)?;
    save_corpus(&corpus, &path)?;
    manifest.finish(&dir, &[path])?;
    log::info!("wrote {} reports", corpus.len());
    Ok(())
}

fn all_sentences(corpus: &[LabeledReport]) -> Vec<String> {
    corpus.iter().flat_map(|r| r.sentence_texts()).collect()
}

fn train_tokenizer(cfg: &ExperimentConfig, force: bool) -> Result<()> {
    let dir = cfg.paths.stage_dir("tokenizer");
    let manifest = Manifest::new("train-tokenizer", &cfg.tokenizer, &[cfg.paths.corpus()])?;
    let corpus = read_corpus(cfg)?;
    manifest.claim(&dir, force)?;
    let vocab = train_wordpiece(&all_sentences(&corpus), cfg.tokenizer.vocab_size, cfg.tokenizer.min_freq)?;
    if vocab.len() < cfg.tokenizer.vocab_size {
        log::warn!(
            "corpus supports only {} of the requested {} tokens at min_freq {}",
            vocab.len(),
            cfg.tokenizer.vocab_size,
            cfg.tokenizer.min_freq
        );
    }
    let path = cfg.paths.vocab();
    ensure_parent(&path)?;
    vocab.save(&path)?;
    manifest.finish(&dir, &[path])?;
    Ok(())
}

#[derive(Serialize)]
struct PretrainStage<'a> {
    model: &'a crate::encoder::ModelConfig,
    pretrain: &'a crate::training::TrainConfig,
}

fn run_pretrain(cfg: &ExperimentConfig, force: bool) -> Result<()> {
    let dir = cfg.paths.stage_dir("pretrain");
    require(&cfg.paths.corpus())?;
    require(&cfg.paths.vocab())?;
    let stage = PretrainStage { model: &cfg.model, pretrain: &cfg.pretrain };
    let manifest = Manifest::new("pretrain", &stage, &[cfg.paths.corpus(), cfg.paths.vocab()])?;
    let corpus = read_corpus(cfg)?;
    let vocab = read_vocab(cfg)?;
    manifest.claim(&dir, force)?;
    let model_config = crate::encoder::ModelConfig {
        vocab_size: vocab.len(),
        ..cfg.model.clone()
    };
    let header = CheckpointHeader::new(model_config.clone(), vocab.content_hash(), None);
    let mut outputs = Vec::new();
    let outcome = pretrain(&all_sentences(&corpus), &vocab, &model_config, &cfg.pretrain, |step, model| {
        let p = dir.join(format!("step_{step}.ckpt"));
        save_checkpoint(&p, &header, model)?;
        outputs.push(p);
        Ok(())
    })?;
    let path = cfg.paths.pretrained();
    ensure_parent(&path)?;
    let mut header = header.clone();
    header.metadata.insert("steps".into(), outcome.log.entries.len().to_string());
    if let Some(last) = outcome.log.smoothed(50).last() {
        header.metadata.insert("final_loss".into(), format!("{last:.6}"));
    }
    save_checkpoint(&path, &header, &outcome.model)?;
    let log_path = dir.join("pretrain_log.csv");
    outcome.log.save_csv(&log_path)?;
    outputs.push(path);
    outputs.push(log_path);
    manifest.finish(&dir, &outputs)?;
    Ok(())
}

struct Loaded {
    corpus: Vec<LabeledReport>,
    vocab: Vocab,
    header: CheckpointHeader,
    encoder: crate::encoder::EncoderParams<f32>,
}

fn stage_inputs(cfg: &ExperimentConfig) -> Vec<PathBuf> {
    vec![cfg.paths.corpus(), cfg.paths.vocab(), cfg.paths.pretrained()]
}

fn load_backbone(cfg: &ExperimentConfig) -> Result<Loaded> {
    for p in stage_inputs(cfg) {
        require(&p)?;
    }
    let corpus = read_corpus(cfg)?;
    let vocab = read_vocab(cfg)?;
    let (header, encoder) = load_encoder(&cfg.paths.pretrained())?;
    if header.vocab_hash != vocab.content_hash() {
        bail!(
            "{} was pre-trained with a different vocabulary than {}",
            cfg.paths.pretrained().display(),
            cfg.paths.vocab().display()
        );
    }
    cfg.experiment.validate(&header.model_config)?;
    Ok(Loaded { corpus, vocab, header, encoder })
}

#[derive(Serialize)]
struct FinetuneStage<'a> {
    settings: &'a crate::pipeline::ExperimentSettings,
    tasks: &'a [String],
    variant: Option<Variant>,
}

fn finetune(cfg: &ExperimentConfig, task: &str, variant: Option<Variant>, force: bool) -> Result<()> {
    let mut tasks: Vec<Option<FieldTask>> = Vec::new();
    match task.to_ascii_lowercase().as_str() {
        "all" => {
            tasks.push(None);
            tasks.extend(cfg.experiment.tasks.iter().map(|t| Some(*t)));
        }
        "segmentation" => tasks.push(None),
        other => tasks.push(Some(other.parse::<FieldTask>()?)),
    }
    let fields = tasks.iter().any(Option::is_some);
    match variant {
        Some(Variant::SegNoaux) if fields => bail!("--variant seg-noaux only applies to --task segmentation"),
        Some(Variant::FieldSeg | Variant::FieldNoseg) if tasks.contains(&None) && !fields => {
            bail!("--variant {} does not apply to --task segmentation", variant.unwrap())
        }
        _ => {}
    }
    let dir = cfg.paths.stage_dir("finetune");
    let names: Vec<String> = tasks.iter().map(|t| t.map_or(SEGMENTATION_TASK.to_string(), |t| t.name().to_string())).collect();
    let stage = FinetuneStage { settings: &cfg.experiment, tasks: &names, variant };
    let manifest = Manifest::new("finetune", &stage, &stage_inputs(cfg))?;
    let loaded = load_backbone(cfg)?;
    manifest.claim(&dir, force)?;
    let backbone = Backbone {
        config: &loaded.header.model_config,
        encoder: &loaded.encoder,
        vocab: &loaded.vocab,
    };
    let reports: Vec<&LabeledReport> = loaded.corpus.iter().collect();
    let seed = cfg.experiment.finetune.seed;
    let mut outputs = Vec::new();
    for (i, t) in tasks.iter().enumerate() {
        let (model, file) = match t {
            None => {
                let aux = variant != Some(Variant::SegNoaux);
                let m = train_segmenter(&reports, aux, backbone, &cfg.experiment, seed)?;
                (m, format!("segmentation-{}.ckpt", if aux { "aux" } else { "noaux" }))
            }
            Some(t) => {
                let routed = variant != Some(Variant::FieldNoseg);
                let len = if routed { t.default_seq_len() } else { cfg.experiment.whole_report_seq_len };
                let m = train_field_model(&reports, *t, routed, len, backbone, &cfg.experiment, seed.wrapping_add(i as u64))?;
                (m, format!("{}-{}.ckpt", t.name(), if routed { "routed" } else { "whole" }))
            }
        };
        let path = dir.join(file);
        let mut meta = BTreeMap::new();
        meta.insert("n_reports".to_string(), reports.len().to_string());
        model.save(&path, &loaded.vocab, meta)?;
        log::info!("saved {}", path.display());
        outputs.push(path);
    }
    manifest.finish(&dir, &outputs)?;
    Ok(())
}

fn folds_for(cfg: &ExperimentConfig, corpus: &[LabeledReport]) -> Result<Vec<Fold>> {
    let strata: Vec<_> = corpus.iter().map(|r| r.fields.modality).collect();
    Ok(stratified_kfold(&strata, cfg.k_folds, cfg.fold_seed)?)
}

#[derive(Serialize)]
struct EvalStage<'a> {
    settings: &'a crate::pipeline::ExperimentSettings,
    variant: Variant,
    k_folds: usize,
    fold_seed: u64,
}

/// Directory name of an evaluation run, e.g. `seg-aux` or `seg-aux-ablation-0.1`.
pub fn run_name(variant: Variant, ablation: f64) -> String {
    if ablation < 1.0 {
        format!("{variant}-ablation-{ablation}")
    } else {
        variant.to_string()
    }
}

fn evaluate(cfg: &ExperimentConfig, variant: Option<Variant>, force: bool) -> Result<()> {
    let Some(variant) = variant else {
        bail!("evaluate needs --variant (seg-aux|seg-noaux|field-seg|field-noseg)");
    };
    let dir = cfg.paths.stage_dir("evaluate").join(run_name(variant, cfg.experiment.ablation_fraction));
    let stage = EvalStage {
        settings: &cfg.experiment,
        variant,
        k_folds: cfg.k_folds,
        fold_seed: cfg.fold_seed,
    };
    let manifest = Manifest::new("evaluate", &stage, &stage_inputs(cfg))?;
    let loaded = load_backbone(cfg)?;
    manifest.claim(&dir, force)?;
    let folds = folds_for(cfg, &loaded.corpus)?;
    let backbone = Backbone {
        config: &loaded.header.model_config,
        encoder: &loaded.encoder,
        vocab: &loaded.vocab,
    };
    let outcome = run_experiment(&loaded.corpus, &folds, variant, backbone, &cfg.experiment)?;
    check_reports(&outcome.reports())?;
    write_outcome(&dir, &outcome)?;
    manifest.finish(&dir, &dir_files(&dir)?)?;
    println!("{}", fs::read_to_string(dir.join("summary.md"))?);
    Ok(())
}

fn check_reports(reports: &[EvalReport]) -> Result<()> {
    for r in reports {
        let ok = (0.0..=1.0).contains(&r.accuracy) && (0.0..=1.0).contains(&r.gf1) && r.n_items == r.golds.len();
        if !ok {
            bail!("inconsistent metrics for {} fold {}", r.task, r.fold);
        }
    }
    Ok(())
}

fn sweep(cfg: &ExperimentConfig, force: bool) -> Result<()> {
    let dir = cfg.paths.stage_dir("sweep");
    let stage = EvalStage {
        settings: &cfg.experiment,
        variant: Variant::FieldSeg,
        k_folds: cfg.k_folds,
        fold_seed: cfg.fold_seed,
    };
    let manifest = Manifest::new("sweep", &stage, &stage_inputs(cfg))?;
    let loaded = load_backbone(cfg)?;
    manifest.claim(&dir, force)?;
    let folds = folds_for(cfg, &loaded.corpus)?;
    let backbone = Backbone {
        config: &loaded.header.model_config,
        encoder: &loaded.encoder,
        vocab: &loaded.vocab,
    };
    let outcome = run_sweep(&loaded.corpus, &folds, backbone, &cfg.experiment)?;
    check_reports(&outcome.reports)?;
    write_sweep(&dir, &outcome)?;
    manifest.finish(&dir, &dir_files(&dir)?)?;
    println!("{}", fs::read_to_string(dir.join("sweep.md"))?);
    Ok(())
}

fn group_name(run: &Path) -> String {
    run.file_name().map_or_else(|| run.display().to_string(), |n| n.to_string_lossy().into_owned())
}

fn safe_file_name(task: &str) -> String {
    task.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' }).collect()
}

#[derive(Serialize)]
struct CompareStage<'a> {
    test: Option<StatTest>,
    alpha: f64,
    groups: &'a [String],
}

fn compare(cfg: &ExperimentConfig, runs: &[PathBuf], test: Option<StatTest>, alpha: f64, name: Option<&str>, force: bool) -> Result<()> {
    if runs.len() < 2 {
        bail!("compare needs at least two --run directories");
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        bail!("--alpha must lie in (0, 1)");
    }
    let files: Vec<PathBuf> = runs.iter().map(|r| r.join("reports.json")).collect();
    for f in &files {
        require(f)?;
    }
    let names: Vec<String> = runs.iter().map(|r| group_name(r)).collect();
    let mut groups: Vec<(String, Vec<EvalReport>)> = Vec::new();
    for (n, f) in names.iter().zip(&files) {
        let raw = fs::read_to_string(f).with_context(|| format!("reading {}", f.display()))?;
        let reports: Vec<EvalReport> = serde_json::from_str(&raw).with_context(|| format!("invalid {}", f.display()))?;
        groups.push((n.clone(), reports));
    }
    let mut tasks: Vec<String> = Vec::new();
    for r in &groups[0].1 {
        if !tasks.contains(&r.task) && groups.iter().all(|(_, g)| g.iter().any(|x| x.task == r.task)) {
            tasks.push(r.task.clone());
        }
    }
    if tasks.is_empty() {
        bail!("the runs share no task");
    }
    let dir = cfg.paths.stage_dir("compare").join(name.map_or_else(|| names.join("_vs_"), str::to_string));
    let stage = CompareStage { test, alpha, groups: &names };
    let manifest = Manifest::new("compare", &stage, &files)?;
    manifest.claim(&dir, force)?;
    let mut md = String::new();
    let mut outputs = Vec::new();
    for task in &tasks {
        let t = test.unwrap_or(if task == SEGMENTATION_TASK { StatTest::Utest } else { StatTest::Mcnemar });
        let subset: Vec<(String, Vec<EvalReport>)> = groups
            .iter()
            .map(|(n, g)| (n.clone(), g.iter().filter(|r| &r.task == task).cloned().collect()))
            .collect();
        let rows = compare_runs(&subset, t, alpha)?;
        let path = dir.join(format!("{}.csv", safe_file_name(task)));
        write_comparison_csv(&rows, fs::File::create(&path).with_context(|| format!("writing {}", path.display()))?)?;
        outputs.push(path);
        let mut buf = Vec::new();
        write_comparison_markdown(&rows, &mut buf)?;
        md.push_str(&format!("## {task} ({})\n\n{}\n", serde_json::to_value(t)?.as_str().unwrap_or(""), String::from_utf8(buf)?));
    }
    let md_path = dir.join("comparison.md");
    fs::write(&md_path, &md)?;
    outputs.push(md_path);
    manifest.finish(&dir, &outputs)?;
    print!("{md}");
    Ok(())
}

/// Entry point shared by the binary: parses `std::env::args`, reports errors
/// on stderr and maps them to a non-zero exit code.
pub fn main() -> std::process::ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::ExitCode::FAILURE
        }
    }
}
