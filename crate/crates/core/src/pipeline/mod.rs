//! Report-level inference: sequential section segmentation and field
//! extraction from either the whole report or one routed section.

mod experiment;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_classifier, save_checkpoint, CheckpointHeader};
use crate::corpus::{Bpe, ClassLabel, Density, FieldLabels, Menopausal, Modality, PreviousCancer, Purpose, SectionLabel};
use crate::encoder::ModelConfig;
use crate::error::{Error, Result};
use crate::heads::{AuxFeatures, ClassifierModel, HeadSpec};
use crate::tensor::argmax;
use crate::tokenizer::{encode, TokenSequence, Vocab};

pub use experiment::{
    ablate, mean_sd, run_experiment, run_fold, run_sweep, segmentation_examples, train_field_model, train_segmenter,
    write_outcome, write_sweep, Backbone, ExperimentOutcome, ExperimentSettings, FoldResult, PredictionRecord,
    PrevLabelMode, SweepOutcome, SweepRow, Variant, SEGMENTATION_TASK,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FieldTask {
    Modality,
    PreviousCancer,
    MenopausalStatus,
    Purpose,
    Density,
    #[serde(rename = "BPE")]
    Bpe,
}

impl FieldTask {
    pub const ALL: [FieldTask; 6] = [
        FieldTask::Modality,
        FieldTask::PreviousCancer,
        FieldTask::MenopausalStatus,
        FieldTask::Purpose,
        FieldTask::Density,
        FieldTask::Bpe,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FieldTask::Modality => "Modality",
            FieldTask::PreviousCancer => "PreviousCancer",
            FieldTask::MenopausalStatus => "MenopausalStatus",
            FieldTask::Purpose => "Purpose",
            FieldTask::Density => "Density",
            FieldTask::Bpe => "BPE",
        }
    }

    pub fn routed_section(self) -> SectionLabel {
        match self {
            FieldTask::Modality => SectionLabel::Title,
            FieldTask::PreviousCancer | FieldTask::MenopausalStatus | FieldTask::Purpose => {
                SectionLabel::HistoryClinicalIndication
            }
            FieldTask::Density | FieldTask::Bpe => SectionLabel::FindingsProcedureNotes,
        }
    }

    /// Token budget for the routed section text.
    pub fn default_seq_len(self) -> usize {
        match self {
            FieldTask::Modality | FieldTask::MenopausalStatus => 128,
            _ => 32,
        }
    }

    pub fn class_names(self) -> Vec<&'static str> {
        match self {
            FieldTask::Modality => Modality::names(),
            FieldTask::PreviousCancer => PreviousCancer::names(),
            FieldTask::MenopausalStatus => Menopausal::names(),
            FieldTask::Purpose => Purpose::names(),
            FieldTask::Density => Density::names(),
            FieldTask::Bpe => Bpe::names(),
        }
    }

    pub fn n_classes(self) -> usize {
        self.class_names().len()
    }

    pub fn gold(self, fields: &FieldLabels) -> usize {
        match self {
            FieldTask::Modality => fields.modality.index(),
            FieldTask::PreviousCancer => fields.previous_cancer.index(),
            FieldTask::MenopausalStatus => fields.menopausal.index(),
            FieldTask::Purpose => fields.purpose.index(),
            FieldTask::Density => fields.density.index(),
            FieldTask::Bpe => fields.bpe.index(),
        }
    }

    /// Predicted when the routed section is missing from a report.
    pub fn absent_class(self) -> usize {
        match self {
            // Every report has a Title; MG is the fallback only for malformed input.
            FieldTask::Modality => Modality::single(crate::corpus::ModalityKind::MG).index(),
            FieldTask::PreviousCancer => PreviousCancer::No.index(),
            FieldTask::MenopausalStatus => Menopausal::NotStated.index(),
            FieldTask::Purpose => Purpose::NotStated.index(),
            FieldTask::Density => Density::NotStated.index(),
            FieldTask::Bpe => Bpe::NotStated.index(),
        }
    }
}

impl fmt::Display for FieldTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FieldTask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace(['-', '_'], "");
        FieldTask::ALL
            .iter()
            .copied()
            .find(|t| t.name().to_ascii_lowercase() == key || (key == "menopausal" && *t == FieldTask::MenopausalStatus))
            .ok_or_else(|| Error::InvalidInput(format!("unknown field task `{s}`")))
    }
}

/// A classifier with the configuration needed to run it.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskModel {
    pub config: ModelConfig,
    pub head: HeadSpec,
    pub model: ClassifierModel<f32>,
}

impl TaskModel {
    pub fn encode(&self, text: &str, vocab: &Vocab) -> TokenSequence {
        encode(text, vocab, self.head.seq_len).trimmed()
    }

    /// `(class, probability)` for one already-encoded input.
    pub fn predict_seq(&self, seq: &TokenSequence, aux: Option<&AuxFeatures>) -> Result<(usize, f64)> {
        let p = self.model.predict_proba(&self.config, seq, aux)?;
        let k = argmax(&p);
        Ok((k, p[k] as f64))
    }

    pub fn predict(&self, text: &str, vocab: &Vocab, aux: Option<&AuxFeatures>) -> Result<(usize, f64)> {
        self.predict_seq(&self.encode(text, vocab), aux)
    }

    pub fn save(&self, path: &Path, vocab: &Vocab, metadata: BTreeMap<String, String>) -> Result<()> {
        let mut header = CheckpointHeader::new(self.config.clone(), vocab.content_hash(), Some(self.head.clone()));
        header.metadata = metadata;
        save_checkpoint(path, &header, &self.model)
    }

    /// Loads a classifier checkpoint, refusing one trained with another vocabulary.
    pub fn load(path: &Path, vocab: &Vocab) -> Result<Self> {
        let (header, model) = load_classifier(path)?;
        if header.vocab_hash != vocab.content_hash() {
            return Err(Error::Checkpoint(format!(
                "{} was trained with a different vocabulary",
                path.display()
            )));
        }
        Ok(Self {
            config: header.model_config,
            head: header.head.expect("classifier checkpoints carry a head"),
            model,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentedReport {
    pub report_id: String,
    pub labels: Vec<SectionLabel>,
    pub probabilities: Vec<f64>,
}

impl SegmentedReport {
    /// Sentence indices per predicted section, in document order.
    pub fn groups(&self) -> BTreeMap<SectionLabel, Vec<usize>> {
        let mut out: BTreeMap<SectionLabel, Vec<usize>> = BTreeMap::new();
        for (i, l) in self.labels.iter().enumerate() {
            out.entry(*l).or_default().push(i);
        }
        out
    }
}

/// Greedy left-to-right decoding. With an aux encoder, each sentence sees the
/// label predicted for the one before it.
pub fn decode_sections(model: &TaskModel, seqs: &[TokenSequence]) -> Result<(Vec<SectionLabel>, Vec<f64>)> {
    if model.head.n_classes() != SectionLabel::COUNT {
        return Err(Error::Config(format!(
            "a segmenter needs {} classes, `{}` has {}",
            SectionLabel::COUNT,
            model.head.task,
            model.head.n_classes()
        )));
    }
    let n = seqs.len();
    let mut labels: Vec<SectionLabel> = Vec::with_capacity(n);
    let mut probs = Vec::with_capacity(n);
    for (i, seq) in seqs.iter().enumerate() {
        let aux = match model.model.uses_aux() {
            true => Some(AuxFeatures::new(labels.last().copied(), i, n)?),
            false => None,
        };
        let (k, p) = model.predict_seq(seq, aux.as_ref())?;
        labels.push(SectionLabel::from_index(k).expect("head has one class per section"));
        probs.push(p);
    }
    Ok((labels, probs))
}

pub fn segment_report(report_id: &str, sentences: &[String], model: &TaskModel, vocab: &Vocab) -> Result<SegmentedReport> {
    let seqs: Vec<TokenSequence> = sentences.iter().map(|s| model.encode(s, vocab)).collect();
    let (labels, probabilities) = decode_sections(model, &seqs)?;
    Ok(SegmentedReport {
        report_id: report_id.to_string(),
        labels,
        probabilities,
    })
}

/// Sentences labelled `section`, joined in document order; `None` if there are none.
pub fn routed_text(sentences: &[String], labels: &[SectionLabel], section: SectionLabel) -> Option<String> {
    let parts: Vec<&str> = sentences
        .iter()
        .zip(labels)
        .filter(|(_, l)| **l == section)
        .map(|(s, _)| s.as_str())
        .collect();
    (!parts.is_empty()).then(|| parts.join(" "))
}

/// Field label for one report. With a segmentation the model sees only the
/// routed section (and an absent section yields the task's absent class);
/// without one it sees the whole report.
pub fn extract_field(
    sentences: &[String],
    task: FieldTask,
    model: &TaskModel,
    vocab: &Vocab,
    segmented: Option<&SegmentedReport>,
) -> Result<(usize, f64)> {
    if model.head.n_classes() != task.n_classes() {
        return Err(Error::Config(format!(
            "model `{}` has {} classes, {} needs {}",
            model.head.task,
            model.head.n_classes(),
            task,
            task.n_classes()
        )));
    }
    match segmented {
        Some(seg) => match routed_text(sentences, &seg.labels, task.routed_section()) {
            Some(text) => model.predict(&text, vocab, None),
            None => Ok((task.absent_class(), 1.0)),
        },
        None => model.predict(&sentences.join(" "), vocab, None),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::init_params;
    use crate::tokenizer::train_wordpiece;

    #[test]
    fn routing_table() {
        use FieldTask::*;
        let table: Vec<(FieldTask, SectionLabel, usize)> =
            FieldTask::ALL.iter().map(|t| (*t, t.routed_section(), t.default_seq_len())).collect();
        assert_eq!(
            table,
            vec![
                (Modality, SectionLabel::Title, 128),
                (PreviousCancer, SectionLabel::HistoryClinicalIndication, 32),
                (MenopausalStatus, SectionLabel::HistoryClinicalIndication, 128),
                (Purpose, SectionLabel::HistoryClinicalIndication, 32),
                (Density, SectionLabel::FindingsProcedureNotes, 32),
                (Bpe, SectionLabel::FindingsProcedureNotes, 32),
            ]
        );
        for t in FieldTask::ALL {
            assert!(t.absent_class() < t.n_classes());
            assert_eq!(t.name().parse::<FieldTask>().unwrap(), t);
        }
        assert_eq!("bpe".parse::<FieldTask>().unwrap(), Bpe);
        assert_eq!(Purpose.class_names()[Purpose.absent_class()], "NotStated");
        assert_eq!(PreviousCancer.class_names()[PreviousCancer.absent_class()], "No");
    }

    fn fixture(use_aux: bool, n_classes: usize) -> (TaskModel, Vocab) {
        let vocab = train_wordpiece(&["no mass seen", "history of cancer", "bilateral mammogram"], 80, 1).unwrap();
        let config = ModelConfig {
            vocab_size: vocab.len(),
            max_seq_len: 16,
            hidden_dim: 8,
            n_layers: 1,
            n_heads: 2,
            ff_dim: 16,
            dropout_rate: 0.0,
            seed: 3,
        };
        let model = ClassifierModel::new(init_params(&config).unwrap(), n_classes, use_aux, 5).unwrap();
        let head = HeadSpec {
            task: "t".into(),
            class_names: (0..n_classes).map(|i| i.to_string()).collect(),
            use_aux,
            seq_len: 16,
        };
        (TaskModel { config, head, model }, vocab)
    }

    fn sents(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn one_label_per_sentence_and_groups_partition() {
        let (m, vocab) = fixture(true, 7);
        let s = sents(&["bilateral mammogram", "history of cancer", "no mass seen", "no mass"]);
        let seg = segment_report("r", &s, &m, &vocab).unwrap();
        assert_eq!(seg.labels.len(), 4);
        let mut all: Vec<usize> = seg.groups().into_values().flatten().collect();
        all.sort();
        assert_eq!(all, vec![0, 1, 2, 3]);
        assert!(segment_report("r", &[], &m, &vocab).unwrap().labels.is_empty());
    }

    #[test]
    fn single_sentence_uses_start_of_report_aux() {
        let (m, vocab) = fixture(true, 7);
        let s = sents(&["no mass seen"]);
        let seg = segment_report("r", &s, &m, &vocab).unwrap();
        let aux = AuxFeatures::new(None, 0, 1).unwrap();
        let direct = m.predict("no mass seen", &vocab, Some(&aux)).unwrap();
        assert_eq!(seg.labels[0].index(), direct.0);
    }

    #[test]
    fn decoding_is_causal() {
        let (m, vocab) = fixture(true, 7);
        let a = sents(&["bilateral mammogram", "history of cancer", "no mass seen", "no mass"]);
        let b = sents(&["bilateral mammogram", "history of cancer", "cancer", "mammogram seen", "history"]);
        // Causality is about sentence content and predictions, not the total
        // count, so compare equal-length reports sharing a prefix.
        let mut b4 = b.clone();
        b4.truncate(4);
        let sa = segment_report("a", &a, &m, &vocab).unwrap();
        let sb = segment_report("b", &b4, &m, &vocab).unwrap();
        assert_eq!(sa.labels[..2], sb.labels[..2]);
        assert_eq!(sa.probabilities[..2], sb.probabilities[..2]);
    }

    #[test]
    fn absent_routed_section_gives_absent_class() {
        let (m, vocab) = fixture(false, 3);
        let s = sents(&["bilateral mammogram", "no mass seen"]);
        let seg = SegmentedReport {
            report_id: "r".into(),
            labels: vec![SectionLabel::Title, SectionLabel::FindingsProcedureNotes],
            probabilities: vec![1.0, 1.0],
        };
        let (k, p) = extract_field(&s, FieldTask::Purpose, &m, &vocab, Some(&seg)).unwrap();
        assert_eq!((FieldTask::Purpose.class_names()[k], p), ("NotStated", 1.0));
        let whole = extract_field(&s, FieldTask::Purpose, &m, &vocab, None).unwrap();
        assert_eq!(whole, m.predict("bilateral mammogram no mass seen", &vocab, None).unwrap());
        assert!(extract_field(&s, FieldTask::Density, &m, &vocab, None).is_err());
    }

    #[test]
    fn routed_text_joins_in_document_order() {
        use SectionLabel::*;
        let s = sents(&["a.", "b.", "c."]);
        assert_eq!(routed_text(&s, &[Title, FindingsProcedureNotes, FindingsProcedureNotes], FindingsProcedureNotes).as_deref(), Some("b. c."));
        assert_eq!(routed_text(&s, &[Title, Title, Title], PriorImaging), None);
    }
}
