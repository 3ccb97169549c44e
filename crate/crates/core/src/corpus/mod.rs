//! Labeled report data model, synthetic corpus generation, sentence splitting,
//! JSONL persistence and stratified folds.

mod folds;
mod generator;
mod jsonl;
mod labels;
mod segment;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use folds::{stratified_kfold, Fold};
pub use generator::{generate_corpus, generic_text, ClassPriors, CorpusSpec, TEMPLATE_BANK_VERSION};
pub use jsonl::{load_corpus, read_corpus, save_corpus, write_corpus};
pub use labels::{
    Bpe, ClassLabel, Density, FieldLabels, Menopausal, Modality, ModalityKind, PreviousCancer,
    Purpose, SectionLabel,
};
pub use segment::{sentence_segment, span_text, CharSpan, ABBREVIATIONS};

/// One annotated sentence: `[start, end)` in Unicode scalars plus its section.
pub type SentenceSpan = (usize, usize, SectionLabel);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledReport {
    pub report_id: String,
    pub text: String,
    pub sentences: Vec<SentenceSpan>,
    pub fields: FieldLabels,
}

impl LabeledReport {
    pub fn sentence_texts(&self) -> Vec<String> {
        let chars: Vec<char> = self.text.chars().collect();
        self.sentences
            .iter()
            .map(|(s, e, _)| chars[*s..*e].iter().collect())
            .collect()
    }

    pub fn section_labels(&self) -> Vec<SectionLabel> {
        self.sentences.iter().map(|(_, _, l)| *l).collect()
    }

    pub fn has_section(&self, section: SectionLabel) -> bool {
        self.sentences.iter().any(|(_, _, l)| *l == section)
    }

    /// Checks span ordering, text coverage and the Title requirement.
    pub fn validate(&self) -> Result<()> {
        let chars: Vec<char> = self.text.chars().collect();
        let mut cursor = 0;
        for (i, (s, e, _)) in self.sentences.iter().enumerate() {
            if s >= e || *e > chars.len() || *s < cursor {
                return Err(Error::InvalidInput(format!(
                    "{}: sentence {i} span [{s}, {e}) is out of order or out of bounds",
                    self.report_id
                )));
            }
            if chars[cursor..*s].iter().any(|c| !c.is_whitespace()) {
                return Err(Error::InvalidInput(format!(
                    "{}: text before sentence {i} is not covered",
                    self.report_id
                )));
            }
            cursor = *e;
        }
        if chars[cursor..].iter().any(|c| !c.is_whitespace()) {
            return Err(Error::InvalidInput(format!(
                "{}: trailing text is not covered",
                self.report_id
            )));
        }
        if !self.has_section(SectionLabel::Title) {
            return Err(Error::InvalidInput(format!(
                "{}: report has no Title sentence",
                self.report_id
            )));
        }
        Ok(())
    }
}
