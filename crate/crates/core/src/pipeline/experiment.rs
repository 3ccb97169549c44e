//! Cross-validated experiments: the four segmentation / extraction variants,
//! the training-data ablation, and the routed sequence-length sweep.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{decode_sections, extract_field, routed_text, segment_report, FieldTask, SegmentedReport, TaskModel};
use crate::corpus::{ClassLabel, Fold, LabeledReport, SectionLabel};
use crate::encoder::{EncoderParams, ModelConfig};
use crate::error::{Error, Result};
use crate::evalstat::EvalReport;
use crate::heads::{AuxFeatures, HeadSpec};
use crate::tokenizer::{encode, TokenSequence, Vocab};
use crate::training::{finetune, finetune_with_hook, Example, TrainConfig};

pub const SEGMENTATION_TASK: &str = "Segmentation";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    SegAux,
    SegNoaux,
    FieldSeg,
    FieldNoseg,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::SegAux, Variant::SegNoaux, Variant::FieldSeg, Variant::FieldNoseg];

    pub fn name(self) -> &'static str {
        match self {
            Variant::SegAux => "seg-aux",
            Variant::SegNoaux => "seg-noaux",
            Variant::FieldSeg => "field-seg",
            Variant::FieldNoseg => "field-noseg",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .iter()
            .copied()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown variant `{s}` (seg-aux|seg-noaux|field-seg|field-noseg)")))
    }
}

/// Source of the previous-sentence label while training an aux segmenter.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrevLabelMode {
    /// Gold labels throughout (teacher forcing).
    #[default]
    Gold,
    /// The model's own greedy predictions from the second epoch on.
    Predicted,
    /// Per sentence, predicted with probability `epoch / epochs`, else gold.
    Scheduled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSettings {
    pub finetune: TrainConfig,
    pub segmentation_seq_len: usize,
    /// Token budget when a field model reads the whole report.
    pub whole_report_seq_len: usize,
    pub prev_label_mode: PrevLabelMode,
    /// Share of each fold's training reports kept, rounded up.
    pub ablation_fraction: f64,
    pub tasks: Vec<FieldTask>,
    pub seq_len_grid: Vec<usize>,
    /// Route test reports by their gold sections instead of a trained segmenter.
    pub gold_routing: bool,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        Self {
            finetune: TrainConfig::default(),
            segmentation_seq_len: 32,
            whole_report_seq_len: 512,
            prev_label_mode: PrevLabelMode::Gold,
            ablation_fraction: 1.0,
            tasks: FieldTask::ALL.to_vec(),
            seq_len_grid: vec![32, 128, 512],
            gold_routing: false,
        }
    }
}

impl ExperimentSettings {
    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        self.finetune.validate()?;
        let mut lens = vec![self.segmentation_seq_len, self.whole_report_seq_len];
        lens.extend(&self.seq_len_grid);
        lens.extend(self.tasks.iter().map(|t| t.default_seq_len()));
        if let Some(l) = lens.iter().find(|l| **l < 2 || **l > config.max_seq_len) {
            return Err(Error::Config(format!(
                "sequence length {l} must lie in [2, {}] (the encoder's positional capacity)",
                config.max_seq_len
            )));
        }
        if self.seq_len_grid.is_empty() {
            return Err(Error::Config("seq_len_grid is empty".into()));
        }
        if !(self.ablation_fraction > 0.0 && self.ablation_fraction <= 1.0) {
            return Err(Error::Config("ablation_fraction must lie in (0, 1]".into()));
        }
        let mut tasks = self.tasks.clone();
        tasks.sort();
        tasks.dedup();
        if tasks.is_empty() || tasks.len() != self.tasks.len() {
            return Err(Error::Config("tasks must be a non-empty list without repeats".into()));
        }
        Ok(())
    }
}

/// Shared inputs of every fine-tuning run.
#[derive(Clone, Copy)]
pub struct Backbone<'a> {
    pub config: &'a ModelConfig,
    pub encoder: &'a EncoderParams<f32>,
    pub vocab: &'a Vocab,
}

impl Backbone<'_> {
    fn check(&self) -> Result<()> {
        self.config.validate()?;
        if self.vocab.len() != self.config.vocab_size {
            return Err(Error::Config(format!(
                "vocabulary has {} tokens but the encoder expects {}",
                self.vocab.len(),
                self.config.vocab_size
            )));
        }
        Ok(())
    }
}

fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    // splitmix64 over the parts
    let mut z = base;
    for p in parts {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15 ^ p.wrapping_mul(0xbf58_476d_1ce4_e5b9));
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
    }
    z
}

/// A seeded subset of `ceil(fraction * n)` training items, in ascending order.
pub fn ablate(train: &[usize], fraction: f64, seed: u64) -> Vec<usize> {
    let n = train.len();
    let keep = ((fraction * n as f64 - 1e-9).ceil().max(0.0) as usize).min(n);
    let mut v = train.to_vec();
    v.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    v.truncate(keep);
    v.sort_unstable();
    v
}

/// One example per sentence, with gold previous labels when `use_aux`.
/// The second vector maps each example to `(report, sentence)`.
pub fn segmentation_examples(
    reports: &[&LabeledReport],
    vocab: &Vocab,
    seq_len: usize,
    use_aux: bool,
) -> Result<(Vec<Example>, Vec<(usize, usize)>)> {
    let mut examples = Vec::new();
    let mut positions = Vec::new();
    for (r, report) in reports.iter().enumerate() {
        let labels = report.section_labels();
        let n = labels.len();
        for (i, text) in report.sentence_texts().iter().enumerate() {
            let aux = match use_aux {
                true => Some(AuxFeatures::new(i.checked_sub(1).map(|p| labels[p]), i, n)?),
                false => None,
            };
            examples.push(Example {
                seq: encode(text, vocab, seq_len).trimmed(),
                aux,
                label: labels[i].index(),
            });
            positions.push((r, i));
        }
    }
    Ok((examples, positions))
}

fn train_config(settings: &ExperimentSettings, seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        ..settings.finetune.clone()
    }
}

pub fn train_segmenter(
    reports: &[&LabeledReport],
    use_aux: bool,
    backbone: Backbone<'_>,
    settings: &ExperimentSettings,
    seed: u64,
) -> Result<TaskModel> {
    let head = HeadSpec {
        task: SEGMENTATION_TASK.into(),
        class_names: SectionLabel::names().iter().map(|s| s.to_string()).collect(),
        use_aux,
        seq_len: settings.segmentation_seq_len,
    };
    let cfg = train_config(settings, seed);
    let (examples, positions) = segmentation_examples(reports, backbone.vocab, head.seq_len, use_aux)?;
    if examples.is_empty() {
        return Err(Error::InvalidInput("no training sentences".into()));
    }
    let gold: Vec<Vec<SectionLabel>> = reports.iter().map(|r| r.section_labels()).collect();
    let mut by_report: Vec<Vec<TokenSequence>> = vec![Vec::new(); reports.len()];
    for (e, (r, _)) in examples.iter().zip(&positions) {
        by_report[*r].push(e.seq.clone());
    }
    let mode = if use_aux { settings.prev_label_mode } else { PrevLabelMode::Gold };
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[7]));
    let outcome = finetune_with_hook(examples, backbone.encoder, backbone.config, &head, &cfg, |epoch, model, train, index| {
        let p_pred = match mode {
            PrevLabelMode::Gold => return Ok(()),
            _ if epoch == 0 => return Ok(()),
            PrevLabelMode::Predicted => 1.0,
            PrevLabelMode::Scheduled => epoch as f64 / cfg.epochs as f64,
        };
        let current = TaskModel {
            config: backbone.config.clone(),
            head: head.clone(),
            model: model.clone(),
        };
        let preds: Vec<Vec<SectionLabel>> = by_report
            .par_iter()
            .map(|seqs| decode_sections(&current, seqs).map(|(l, _)| l))
            .collect::<Result<_>>()?;
        for (e, &j) in train.iter_mut().zip(index) {
            let (r, s) = positions[j];
            if s == 0 {
                continue;
            }
            let prev = if rng.gen_bool(p_pred) { preds[r][s - 1] } else { gold[r][s - 1] };
            e.aux = Some(AuxFeatures::new(Some(prev), s, gold[r].len())?);
        }
        Ok(())
    })?;
    Ok(TaskModel {
        config: backbone.config.clone(),
        head,
        model: outcome.model,
    })
}

/// Input text a field model is trained on: the gold-routed section, or the
/// whole report. `None` when routing finds no such section.
fn field_input(report: &LabeledReport, task: FieldTask, routed: bool) -> Option<String> {
    let sentences = report.sentence_texts();
    match routed {
        true => routed_text(&sentences, &report.section_labels(), task.routed_section()),
        false => Some(sentences.join(" ")),
    }
}

/// Trains a field classifier. Routed models learn from gold section text and
/// never see reports lacking the section, whose label is fixed at inference.
pub fn train_field_model(
    reports: &[&LabeledReport],
    task: FieldTask,
    routed: bool,
    seq_len: usize,
    backbone: Backbone<'_>,
    settings: &ExperimentSettings,
    seed: u64,
) -> Result<TaskModel> {
    let examples: Vec<Example> = reports
        .iter()
        .filter_map(|r| {
            field_input(r, task, routed).map(|text| Example {
                seq: encode(&text, backbone.vocab, seq_len).trimmed(),
                aux: None,
                label: task.gold(&r.fields),
            })
        })
        .collect();
    if examples.is_empty() {
        return Err(Error::InvalidInput(format!("no training reports carry the {} section", task.routed_section())));
    }
    let head = HeadSpec {
        task: task.name().into(),
        class_names: task.class_names().iter().map(|s| s.to_string()).collect(),
        use_aux: false,
        seq_len,
    };
    let outcome = finetune(examples, backbone.encoder, backbone.config, &head, &train_config(settings, seed))?;
    Ok(TaskModel {
        config: backbone.config.clone(),
        head,
        model: outcome.model,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub report_id: String,
    pub sections: Vec<SectionLabel>,
    pub fields: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub n_train: usize,
    pub reports: Vec<EvalReport>,
    pub predictions: Vec<PredictionRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutcome {
    pub variant: Variant,
    pub folds: Vec<FoldResult>,
}

impl ExperimentOutcome {
    pub fn reports(&self) -> Vec<EvalReport> {
        self.folds.iter().flat_map(|f| f.reports.clone()).collect()
    }

    pub fn reports_for(&self, task: &str) -> Vec<EvalReport> {
        self.folds
            .iter()
            .flat_map(|f| f.reports.iter().filter(|r| r.task == task).cloned())
            .collect()
    }
}

fn split<'c>(corpus: &'c [LabeledReport], ids: &[usize]) -> Result<Vec<&'c LabeledReport>> {
    ids.iter()
        .map(|&i| {
            corpus.get(i).ok_or(Error::OutOfRange {
                what: "fold item",
                index: i,
                limit: corpus.len(),
            })
        })
        .collect()
}

fn segmentation_report(fold: usize, test: &[&LabeledReport], segs: &[SegmentedReport]) -> Result<EvalReport> {
    let (mut ids, mut preds, mut golds, mut per_report) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (r, s) in test.iter().zip(segs) {
        let gold = r.section_labels();
        let hits = gold.iter().zip(&s.labels).filter(|(g, p)| g == p).count();
        per_report.push(hits as f64 / gold.len().max(1) as f64);
        for (i, (g, p)) in gold.iter().zip(&s.labels).enumerate() {
            ids.push(format!("{}#{i}", r.report_id));
            golds.push(g.index());
            preds.push(p.index());
        }
    }
    let names = SectionLabel::names().iter().map(|s| s.to_string()).collect();
    EvalReport::new(SEGMENTATION_TASK, fold, names, ids, preds, golds, Some(per_report))
}

fn gold_segmentation(r: &LabeledReport) -> SegmentedReport {
    SegmentedReport {
        report_id: r.report_id.clone(),
        labels: r.section_labels(),
        probabilities: vec![1.0; r.sentences.len()],
    }
}

/// Predicted (or, with `gold_routing`, gold) sections of the test reports.
fn route_test_reports(
    train: &[&LabeledReport],
    test: &[&LabeledReport],
    test_sentences: &[Vec<String>],
    backbone: Backbone<'_>,
    settings: &ExperimentSettings,
    seed: u64,
) -> Result<Vec<SegmentedReport>> {
    if settings.gold_routing {
        return Ok(test.iter().map(|r| gold_segmentation(r)).collect());
    }
    let seg = train_segmenter(train, true, backbone, settings, seed)?;
    test.par_iter()
        .zip(test_sentences)
        .map(|(r, s)| segment_report(&r.report_id, s, &seg, backbone.vocab))
        .collect()
}

fn evaluate_field(
    fold: usize,
    task: FieldTask,
    name: &str,
    model: &TaskModel,
    test: &[&LabeledReport],
    test_sentences: &[Vec<String>],
    segs: Option<&[SegmentedReport]>,
    vocab: &Vocab,
) -> Result<EvalReport> {
    let preds: Vec<usize> = (0..test.len())
        .into_par_iter()
        .map(|i| extract_field(&test_sentences[i], task, model, vocab, segs.map(|s| &s[i])).map(|(k, _)| k))
        .collect::<Result<_>>()?;
    EvalReport::new(
        name,
        fold,
        task.class_names().iter().map(|s| s.to_string()).collect(),
        test.iter().map(|r| r.report_id.clone()).collect(),
        preds,
        test.iter().map(|r| task.gold(&r.fields)).collect(),
        None,
    )
}

/// Fine-tunes on the fold's (ablated) training reports and scores its test reports.
pub fn run_fold(
    corpus: &[LabeledReport],
    fold_index: usize,
    fold: &Fold,
    variant: Variant,
    backbone: Backbone<'_>,
    settings: &ExperimentSettings,
) -> Result<FoldResult> {
    let base_seed = settings.finetune.seed;
    let train_ids = ablate(&fold.train, settings.ablation_fraction, derive_seed(base_seed, &[fold_index as u64, 0]));
    let train = split(corpus, &train_ids)?;
    let test = split(corpus, &fold.test)?;
    if train.is_empty() || test.is_empty() {
        return Err(Error::InvalidInput(format!("fold {fold_index} has an empty train or test split")));
    }
    let test_sentences: Vec<Vec<String>> = test.iter().map(|r| r.sentence_texts()).collect();
    let seg_seed = derive_seed(base_seed, &[fold_index as u64, 1]);
    log::info!("{variant} fold {fold_index}: {} train / {} test reports", train.len(), test.len());

    let (reports, predictions) = match variant {
        Variant::SegAux | Variant::SegNoaux => {
            let seg = train_segmenter(&train, variant == Variant::SegAux, backbone, settings, seg_seed)?;
            let segs: Vec<SegmentedReport> = test
                .par_iter()
                .zip(&test_sentences)
                .map(|(r, s)| segment_report(&r.report_id, s, &seg, backbone.vocab))
                .collect::<Result<_>>()?;
            let report = segmentation_report(fold_index, &test, &segs)?;
            let records = segs
                .into_iter()
                .map(|s| PredictionRecord {
                    report_id: s.report_id,
                    sections: s.labels,
                    fields: BTreeMap::new(),
                })
                .collect();
            (vec![report], records)
        }
        Variant::FieldSeg | Variant::FieldNoseg => {
            let routed = variant == Variant::FieldSeg;
            let segs = match routed {
                true => Some(route_test_reports(&train, &test, &test_sentences, backbone, settings, seg_seed)?),
                false => None,
            };
            let mut records: Vec<PredictionRecord> = test
                .iter()
                .enumerate()
                .map(|(i, r)| PredictionRecord {
                    report_id: r.report_id.clone(),
                    sections: segs.as_ref().map(|s| s[i].labels.clone()).unwrap_or_default(),
                    fields: BTreeMap::new(),
                })
                .collect();
            let mut reports = Vec::new();
            for (t, &task) in settings.tasks.iter().enumerate() {
                let seq_len = if routed { task.default_seq_len() } else { settings.whole_report_seq_len };
                let seed = derive_seed(base_seed, &[fold_index as u64, 2, t as u64]);
                let model = train_field_model(&train, task, routed, seq_len, backbone, settings, seed)?;
                let report = evaluate_field(fold_index, task, task.name(), &model, &test, &test_sentences, segs.as_deref(), backbone.vocab)?;
                for (rec, p) in records.iter_mut().zip(&report.preds) {
                    rec.fields.insert(task.name().into(), report.class_names[*p].clone());
                }
                reports.push(report);
            }
            (reports, records)
        }
    };
    Ok(FoldResult {
        fold: fold_index,
        n_train: train.len(),
        reports,
        predictions,
    })
}

/// Runs `variant` on every fold; folds run in parallel on the current rayon pool.
pub fn run_experiment(
    corpus: &[LabeledReport],
    folds: &[Fold],
    variant: Variant,
    backbone: Backbone<'_>,
    settings: &ExperimentSettings,
) -> Result<ExperimentOutcome> {
    backbone.check()?;
    settings.validate(backbone.config)?;
    if folds.is_empty() {
        return Err(Error::InvalidInput("no folds to run".into()));
    }
    let folds = folds
        .par_iter()
        .enumerate()
        .map(|(k, f)| run_fold(corpus, k, f, variant, backbone, settings))
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentOutcome { variant, folds })
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub task: FieldTask,
    pub section: SectionLabel,
    pub seq_len: usize,
    pub accuracy: f64,
    pub accuracy_sd: f64,
    pub gf1: f64,
    pub gf1_sd: f64,
    pub folds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    pub reports: Vec<EvalReport>,
}

fn sweep_task_name(task: FieldTask, seq_len: usize) -> String {
    format!("{}@{seq_len}", task.name())
}

/// Routed extraction for every `(task, seq_len)` in `tasks × seq_len_grid`,
/// sharing one segmentation per fold.
pub fn run_sweep(corpus: &[LabeledReport], folds: &[Fold], backbone: Backbone<'_>, settings: &ExperimentSettings) -> Result<SweepOutcome> {
    backbone.check()?;
    settings.validate(backbone.config)?;
    if folds.is_empty() {
        return Err(Error::InvalidInput("no folds to run".into()));
    }
    let base_seed = settings.finetune.seed;
    let per_fold = folds
        .par_iter()
        .enumerate()
        .map(|(k, fold)| -> Result<Vec<EvalReport>> {
            let train_ids = ablate(&fold.train, settings.ablation_fraction, derive_seed(base_seed, &[k as u64, 0]));
            let train = split(corpus, &train_ids)?;
            let test = split(corpus, &fold.test)?;
            let sentences: Vec<Vec<String>> = test.iter().map(|r| r.sentence_texts()).collect();
            let segs = route_test_reports(&train, &test, &sentences, backbone, settings, derive_seed(base_seed, &[k as u64, 1]))?;
            let mut out = Vec::new();
            for (t, &task) in settings.tasks.iter().enumerate() {
                let seed = derive_seed(base_seed, &[k as u64, 2, t as u64]);
                for &len in &settings.seq_len_grid {
                    let model = train_field_model(&train, task, true, len, backbone, settings, seed)?;
                    out.push(evaluate_field(k, task, &sweep_task_name(task, len), &model, &test, &sentences, Some(&segs), backbone.vocab)?);
                }
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    let reports: Vec<EvalReport> = per_fold.into_iter().flatten().collect();
    let mut rows = Vec::new();
    for &task in &settings.tasks {
        for &len in &settings.seq_len_grid {
            let name = sweep_task_name(task, len);
            let mine: Vec<&EvalReport> = reports.iter().filter(|r| r.task == name).collect();
            let (accuracy, accuracy_sd) = mean_sd(&mine.iter().map(|r| r.accuracy).collect::<Vec<_>>());
            let (gf1, gf1_sd) = mean_sd(&mine.iter().map(|r| r.gf1).collect::<Vec<_>>());
            rows.push(SweepRow {
                task,
                section: task.routed_section(),
                seq_len: len,
                accuracy,
                accuracy_sd,
                gf1,
                gf1_sd,
                folds: mine.len(),
            });
        }
    }
    Ok(SweepOutcome { rows, reports })
}

fn create(dir: &Path, name: &str) -> Result<fs::File> {
    let path = dir.join(name);
    fs::File::create(&path).map_err(|e| Error::io(path, e))
}

fn io_err(dir: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::io(dir, e)
}

fn write_metrics_csv<W: Write>(variant: &str, reports: &[&EvalReport], mut w: W) -> std::io::Result<()> {
    writeln!(w, "variant,task,fold,n_items,accuracy,gf1")?;
    for r in reports {
        writeln!(w, "{variant},{},{},{},{:.6},{:.6}", r.task, r.fold, r.n_items, r.accuracy, r.gf1)?;
    }
    Ok(())
}

/// Writes `metrics.csv`, `fold_<k>.csv`, `predictions.jsonl`, `reports.json`
/// and `summary.md` under `dir`.
pub fn write_outcome(dir: &Path, outcome: &ExperimentOutcome) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let variant = outcome.variant.name();
    let all = outcome.reports();
    write_metrics_csv(variant, &all.iter().collect::<Vec<_>>(), create(dir, "metrics.csv")?).map_err(io_err(dir))?;
    for f in &outcome.folds {
        write_metrics_csv(variant, &f.reports.iter().collect::<Vec<_>>(), create(dir, &format!("fold_{}.csv", f.fold))?)
            .map_err(io_err(dir))?;
    }
    let mut preds = std::io::BufWriter::new(create(dir, "predictions.jsonl")?);
    for rec in outcome.folds.iter().flat_map(|f| &f.predictions) {
        serde_json::to_writer(&mut preds, rec).map_err(|e| Error::InvalidInput(e.to_string()))?;
        writeln!(preds).map_err(io_err(dir))?;
    }
    preds.flush().map_err(io_err(dir))?;
    serde_json::to_writer(std::io::BufWriter::new(create(dir, "reports.json")?), &all)
        .map_err(|e| Error::InvalidInput(e.to_string()))?;

    let mut md = create(dir, "summary.md")?;
    let mut tasks: Vec<&str> = Vec::new();
    for r in &all {
        if !tasks.contains(&r.task.as_str()) {
            tasks.push(&r.task);
        }
    }
    let mut text = format!("## {variant} ({} folds)\n\n| Task | Acc. | G.F1 |\n|---|---|---|\n", outcome.folds.len());
    for t in tasks {
        let (acc, acc_sd) = mean_sd(&all.iter().filter(|r| r.task == t).map(|r| r.accuracy).collect::<Vec<_>>());
        let (g, g_sd) = mean_sd(&all.iter().filter(|r| r.task == t).map(|r| r.gf1).collect::<Vec<_>>());
        text.push_str(&format!("| {t} | {acc:.4} ± {acc_sd:.4} | {g:.4} ± {g_sd:.4} |\n"));
    }
    md.write_all(text.as_bytes()).map_err(io_err(dir))
}

/// Writes `sweep.csv`, `sweep.md` and `reports.json` under `dir`.
pub fn write_sweep(dir: &Path, outcome: &SweepOutcome) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut csv = create(dir, "sweep.csv")?;
    let mut md = String::from("| Task | Section | SL | Acc. | G.F1 |\n|---|---|---|---|---|\n");
    let mut body = String::from("task,section,seq_len,accuracy,accuracy_sd,gf1,gf1_sd,folds\n");
    for r in &outcome.rows {
        body.push_str(&format!(
            "{},{},{},{:.6},{:.6},{:.6},{:.6},{}\n",
            r.task, r.section, r.seq_len, r.accuracy, r.accuracy_sd, r.gf1, r.gf1_sd, r.folds
        ));
        md.push_str(&format!(
            "| {} | {} | {} | {:.4} ± {:.4} | {:.4} ± {:.4} |\n",
            r.task, r.section, r.seq_len, r.accuracy, r.accuracy_sd, r.gf1, r.gf1_sd
        ));
    }
    csv.write_all(body.as_bytes()).map_err(io_err(dir))?;
    create(dir, "sweep.md")?.write_all(md.as_bytes()).map_err(io_err(dir))?;
    serde_json::to_writer(std::io::BufWriter::new(create(dir, "reports.json")?), &outcome.reports)
        .map_err(|e| Error::InvalidInput(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ablation_rounds_up() {
        let ids: Vec<usize> = (0..30).collect();
        assert_eq!(ablate(&ids, 0.1, 1).len(), 3);
        assert_eq!(ablate(&ids[..25], 0.1, 1).len(), 3);
        assert_eq!(ablate(&ids[..7], 1.0, 1), (0..7).collect::<Vec<_>>());
        assert_eq!(ablate(&ids, 0.1, 4), ablate(&ids, 0.1, 4));
        for n in 1..200 {
            let v: Vec<usize> = (0..n).collect();
            let want = (n as u64 * 10).div_ceil(100) as usize;
            assert_eq!(ablate(&v, 0.10, 0).len(), want, "n = {n}");
        }
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!("seg".parse::<Variant>().is_err());
    }

    #[test]
    fn settings_reject_lengths_beyond_capacity() {
        let cfg = ModelConfig {
            max_seq_len: 128,
            ..ModelConfig::default()
        };
        assert!(ExperimentSettings::default().validate(&cfg).is_err());
        let s = ExperimentSettings {
            whole_report_seq_len: 128,
            seq_len_grid: vec![32, 128],
            ..ExperimentSettings::default()
        };
        s.validate(&cfg).unwrap();
        let dup = ExperimentSettings {
            tasks: vec![FieldTask::Bpe, FieldTask::Bpe],
            ..s
        };
        assert!(dup.validate(&cfg).is_err());
    }

    #[test]
    fn mean_sd_matches_hand_values() {
        assert_eq!(mean_sd(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_sd(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn seeds_differ_per_part() {
        assert_ne!(derive_seed(0, &[0, 1]), derive_seed(0, &[1, 0]));
        assert_ne!(derive_seed(0, &[0]), derive_seed(1, &[0]));
    }
}
