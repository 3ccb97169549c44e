//! Seeded template-grammar generator for BI-RADS style reports.
//!
//! Field labels are drawn first (with exact largest-remainder apportionment so
//! marginals track the configured priors), then realized as sentences in their
//! designated sections. Sections are written as one line each, Title first.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::labels::*;
use super::segment::sentence_segment;
use super::LabeledReport;
use crate::error::{Error, Result};

pub const TEMPLATE_BANK_VERSION: &str = "birads-v1";

/// Per-field label distributions keyed by label name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassPriors {
    pub modality: BTreeMap<String, f64>,
    pub previous_cancer: BTreeMap<String, f64>,
    pub purpose: BTreeMap<String, f64>,
    pub menopausal: BTreeMap<String, f64>,
    pub density: BTreeMap<String, f64>,
    pub bpe: BTreeMap<String, f64>,
}

fn priors(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

impl Default for ClassPriors {
    // Dominant classes follow the qualitative imbalance of real screening
    // practice; purpose/menopausal NotStated shares are capped so that the
    // History section can still hit its 613/900 presence target.
    fn default() -> Self {
        Self {
            modality: priors(&[
                ("MG", 0.55),
                ("MRI", 0.15),
                ("US", 0.12),
                ("Biopsy", 0.05),
                ("MG+US", 0.08),
                ("MRI+US", 0.02),
                ("Biopsy+US", 0.02),
                ("Biopsy+MG", 0.01),
            ]),
            previous_cancer: priors(&[("No", 0.80), ("Yes", 0.12), ("Suspicious", 0.08)]),
            purpose: priors(&[("Screening", 0.30), ("Diagnostic", 0.15), ("NotStated", 0.55)]),
            menopausal: priors(&[("Post", 0.15), ("Pre", 0.10), ("NotStated", 0.75)]),
            density: priors(&[
                ("Fatty", 0.08),
                ("Scattered", 0.30),
                ("HeterogeneouslyDense", 0.20),
                ("LEQ75Percent", 0.05),
                ("Dense", 0.05),
                ("NotStated", 0.32),
            ]),
            bpe: priors(&[
                ("NotStated", 0.80),
                ("Minimal", 0.08),
                ("Mild", 0.07),
                ("Moderate", 0.03),
                ("Marked", 0.02),
            ]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSpec {
    pub n_reports: usize,
    pub seed: u64,
    pub class_priors: ClassPriors,
    /// Marginal probability that a section appears in a report, keyed by section name.
    pub section_presence_probs: BTreeMap<String, f64>,
    pub template_bank_version: String,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        let presence = [
            (SectionLabel::Title, 1.0),
            (SectionLabel::HistoryClinicalIndication, 613.0 / 900.0),
            (SectionLabel::PriorImaging, 0.6),
            (SectionLabel::TechniqueProcedure, 0.7),
            (SectionLabel::FindingsProcedureNotes, 897.0 / 900.0),
            (SectionLabel::ImpressionOpinion, 0.9),
            (SectionLabel::AssessmentCategory, 0.85),
        ];
        Self {
            n_reports: 900,
            seed: 0,
            class_priors: ClassPriors::default(),
            section_presence_probs: presence
                .iter()
                .map(|(s, p)| (s.name().to_string(), *p))
                .collect(),
            template_bank_version: TEMPLATE_BANK_VERSION.to_string(),
        }
    }
}

/// A validated prior: labels with weights summing to one.
type Dist<L> = Vec<(L, f64)>;

fn parse_dist<L: ClassLabel + std::str::FromStr<Err = Error>>(
    field: &str,
    raw: &BTreeMap<String, f64>,
) -> Result<Dist<L>> {
    let mut out = Vec::with_capacity(raw.len());
    for (name, p) in raw {
        let label: L = name
            .parse()
            .map_err(|e| Error::Config(format!("{field}: {e}")))?;
        if !(p.is_finite() && *p >= 0.0) {
            return Err(Error::Config(format!("{field}: prior for {name} must be >= 0")));
        }
        out.push((label, *p));
    }
    let total: f64 = out.iter().map(|(_, p)| p).sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::Config(format!(
            "{field}: priors sum to {total}, expected 1"
        )));
    }
    // Canonical label order keeps generation independent of map iteration.
    out.sort_by_key(|(l, _)| l.index());
    Ok(out)
}

struct ValidSpec {
    modality: Dist<Modality>,
    previous_cancer: Dist<PreviousCancer>,
    purpose: Dist<Purpose>,
    menopausal: Dist<Menopausal>,
    density: Dist<Density>,
    bpe: Dist<Bpe>,
    presence: [f64; 7],
}

impl CorpusSpec {
    fn validated(&self) -> Result<ValidSpec> {
        if self.template_bank_version != TEMPLATE_BANK_VERSION {
            return Err(Error::Config(format!(
                "unknown template bank `{}` (have `{TEMPLATE_BANK_VERSION}`)",
                self.template_bank_version
            )));
        }
        let mut presence = [1.0; 7];
        for (name, p) in &self.section_presence_probs {
            let section: SectionLabel = name
                .parse()
                .map_err(|e| Error::Config(format!("section_presence_probs: {e}")))?;
            if !(0.0..=1.0).contains(p) {
                return Err(Error::Config(format!(
                    "section_presence_probs: {name} must lie in [0, 1]"
                )));
            }
            presence[section.index()] = *p;
        }
        if presence[SectionLabel::Title.index()] < 1.0 {
            return Err(Error::Config("every report needs a Title section".into()));
        }
        let p = &self.class_priors;
        Ok(ValidSpec {
            modality: parse_dist("modality", &p.modality)?,
            previous_cancer: parse_dist("previous_cancer", &p.previous_cancer)?,
            purpose: parse_dist("purpose", &p.purpose)?,
            menopausal: parse_dist("menopausal", &p.menopausal)?,
            density: parse_dist("density", &p.density)?,
            bpe: parse_dist("bpe", &p.bpe)?,
            presence,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.validated().map(|_| ())
    }
}

/// Largest-remainder apportionment of `n` draws, shuffled.
fn apportion<L: Copy>(dist: &Dist<L>, n: usize, rng: &mut ChaCha8Rng) -> Vec<L> {
    let quotas: Vec<f64> = dist.iter().map(|(_, p)| p * n as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut remaining = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..dist.len()).collect();
    // Stable sort: ties keep canonical label order.
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.partial_cmp(&ra).unwrap_or(std::cmp::Ordering::Equal)
    });
    for &i in order.iter().cycle() {
        if remaining == 0 {
            break;
        }
        if dist[i].1 > 0.0 {
            counts[i] += 1;
            remaining -= 1;
        }
    }
    let mut out: Vec<L> = dist
        .iter()
        .zip(&counts)
        .flat_map(|((l, _), c)| std::iter::repeat(*l).take(*c))
        .collect();
    out.shuffle(rng);
    out
}

/// Probability of including an optional section so that its overall share
/// reaches `target` given that a fraction `needed` must include it anyway.
fn fill_probability(target: f64, needed: f64) -> f64 {
    if needed >= 1.0 {
        return 0.0;
    }
    ((target - needed) / (1.0 - needed)).clamp(0.0, 1.0)
}

fn history_needed(f: &FieldLabels) -> bool {
    f.purpose != Purpose::NotStated
        || f.menopausal != Menopausal::NotStated
        || f.previous_cancer != PreviousCancer::No
}

fn findings_needed(f: &FieldLabels) -> bool {
    f.density != Density::NotStated || f.bpe != Bpe::NotStated
}

pub fn generate_corpus(spec: &CorpusSpec) -> Result<Vec<LabeledReport>> {
    let valid = spec.validated()?;
    let n = spec.n_reports;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let modality = apportion(&valid.modality, n, &mut rng);
    let previous_cancer = apportion(&valid.previous_cancer, n, &mut rng);
    let purpose = apportion(&valid.purpose, n, &mut rng);
    let menopausal = apportion(&valid.menopausal, n, &mut rng);
    let density = apportion(&valid.density, n, &mut rng);
    let bpe = apportion(&valid.bpe, n, &mut rng);

    let fields: Vec<FieldLabels> = (0..n)
        .map(|i| FieldLabels {
            modality: modality[i],
            previous_cancer: previous_cancer[i],
            purpose: purpose[i],
            menopausal: menopausal[i],
            density: density[i],
            bpe: bpe[i],
        })
        .collect();

    let frac = |pred: fn(&FieldLabels) -> bool| {
        if n == 0 {
            0.0
        } else {
            fields.iter().filter(|f| pred(f)).count() as f64 / n as f64
        }
    };
    let history_fill = fill_probability(
        valid.presence[SectionLabel::HistoryClinicalIndication.index()],
        frac(history_needed),
    );
    let findings_fill = fill_probability(
        valid.presence[SectionLabel::FindingsProcedureNotes.index()],
        frac(findings_needed),
    );

    let mut reports = Vec::with_capacity(n);
    for (i, f) in fields.into_iter().enumerate() {
        let mut present = [false; 7];
        for s in SectionLabel::all() {
            present[s.index()] = rng.gen_bool(valid.presence[s.index()]);
        }
        present[SectionLabel::Title.index()] = true;
        present[SectionLabel::HistoryClinicalIndication.index()] =
            history_needed(&f) || rng.gen_bool(history_fill);
        present[SectionLabel::FindingsProcedureNotes.index()] =
            findings_needed(&f) || rng.gen_bool(findings_fill);
        let report = ReportWriter::new(&mut rng, f).write(format!("rpt-{i:06}"), &present);
        reports.push(report);
    }
    Ok(reports)
}

const SIDES: &[&str] = &["left", "right", "bilateral"];
const SIDES_ONE: &[&str] = &["left", "right"];
const YEARS: &[&str] = &["2012", "2014", "2015", "2016", "2017", "2018", "2019", "2020"];
const CLOCK: &[&str] = &["1", "2", "3", "4", "6", "9", "10", "11", "12"];
const SIZES: &[&str] = &["0.4", "0.6", "0.8", "1.1", "1.5", "2.3"];

struct ReportWriter<'r> {
    rng: &'r mut ChaCha8Rng,
    fields: FieldLabels,
    side: &'static str,
}

impl<'r> ReportWriter<'r> {
    fn new(rng: &'r mut ChaCha8Rng, fields: FieldLabels) -> Self {
        let side = *SIDES.choose(rng).expect("non-empty");
        Self { rng, fields, side }
    }

    fn pick(&mut self, options: &[&str]) -> String {
        let t = *options.choose(self.rng).expect("template bank entries are non-empty");
        self.fill(t)
    }

    fn fill(&mut self, template: &str) -> String {
        let mut s = template.to_string();
        while let Some(pos) = s.find('{') {
            let end = s[pos..].find('}').expect("balanced template") + pos;
            let key = &s[pos + 1..end];
            let value = match key {
                "side" => self.side.to_string(),
                "SIDE" => self.side.to_uppercase(),
                "one" => SIDES_ONE.choose(self.rng).unwrap().to_string(),
                "year" => YEARS.choose(self.rng).unwrap().to_string(),
                "clock" => CLOCK.choose(self.rng).unwrap().to_string(),
                "size" => SIZES.choose(self.rng).unwrap().to_string(),
                "age" => self.rng.gen_range(32..80).to_string(),
                "cores" => self.rng.gen_range(3..7).to_string(),
                other => panic!("unknown template slot {other}"),
            };
            s.replace_range(pos..=end, &value);
        }
        s
    }

    fn title(&mut self) -> String {
        let kinds = self.fields.modality.kinds();
        if kinds.len() == 1 {
            let bank: &[&str] = match kinds[0] {
                ModalityKind::MG => &[
                    "BILATERAL MAMMOGRAM",
                    "MAMMOGRAM BILATERAL",
                    "DIGITAL MAMMOGRAM {SIDE}",
                    "{SIDE} MAMMOGRAM WITH TOMOSYNTHESIS",
                ],
                ModalityKind::MRI => &[
                    "MRI BREAST BILATERAL WITH AND WITHOUT CONTRAST",
                    "{SIDE} BREAST MRI",
                    "MR BREAST {SIDE} WITH CONTRAST",
                ],
                ModalityKind::US => &[
                    "{SIDE} BREAST ULTRASOUND",
                    "ULTRASOUND BREAST {SIDE}",
                    "TARGETED ULTRASOUND {SIDE} BREAST",
                ],
                ModalityKind::Biopsy => &[
                    "STEREOTACTIC CORE BIOPSY {SIDE} BREAST",
                    "{SIDE} BREAST CORE NEEDLE BIOPSY",
                ],
            };
            return self.pick(bank);
        }
        let parts: Vec<String> = kinds
            .iter()
            .map(|k| {
                let bank: &[&str] = match k {
                    ModalityKind::MG => &["MAMMOGRAM", "DIGITAL MAMMOGRAM"],
                    ModalityKind::MRI => &["BREAST MRI", "MRI"],
                    ModalityKind::US => &["BREAST ULTRASOUND", "ULTRASOUND"],
                    ModalityKind::Biopsy => &["CORE BIOPSY", "NEEDLE BIOPSY"],
                };
                self.pick(bank)
            })
            .collect();
        format!("{} {}", self.side.to_uppercase(), parts.join(" AND "))
    }

    fn history(&mut self) -> Vec<String> {
        let mut out = Vec::new();
        match self.fields.purpose {
            Purpose::Screening => out.push(self.pick(&[
                "Routine screening examination.",
                "Annual screening.",
                "Screening study in an asymptomatic patient.",
                "High risk screening.",
            ])),
            Purpose::Diagnostic => out.push(self.pick(&[
                "Diagnostic evaluation of a palpable lump in the {one} breast.",
                "Diagnostic workup for {one} breast pain.",
                "Recalled from screening for a {one} breast asymmetry.",
                "Diagnostic study for nipple discharge.",
            ])),
            Purpose::NotStated => {}
        }
        match self.fields.previous_cancer {
            PreviousCancer::Yes => out.push(self.pick(&[
                "History of {one} breast cancer treated with lumpectomy in {year}.",
                "Personal history of {one} breast carcinoma.",
                "Prior {one} mastectomy for invasive ductal carcinoma.",
            ])),
            PreviousCancer::Suspicious => out.push(self.pick(&[
                "Status post {one} lumpectomy in {year}.",
                "Prior surgery to the {one} breast.",
                "Previous treatment to the {one} breast, details unavailable.",
            ])),
            PreviousCancer::No => {
                if self.rng.gen_bool(0.5) {
                    out.push(self.pick(&[
                        "No personal history of breast cancer.",
                        "No prior breast surgery.",
                    ]));
                }
            }
        }
        if self.rng.gen_bool(0.35) || out.is_empty() {
            out.push(self.pick(&[
                "Family history of breast cancer in her mother.",
                "Patient reports no new symptoms.",
                "Age {age}.",
                "Patient is {age} years old.",
            ]));
        }
        match self.fields.menopausal {
            Menopausal::Pre => out.push(self.pick(&[
                "Patient is premenopausal.",
                "Premenopausal, last menstrual period two weeks ago.",
            ])),
            Menopausal::Post => out.push(self.pick(&[
                "Patient is postmenopausal.",
                "Postmenopausal on hormone replacement therapy.",
            ])),
            Menopausal::NotStated => {}
        }
        out
    }

    fn prior_imaging(&mut self) -> Vec<String> {
        let mut out = vec![self.pick(&[
            "Comparison is made to prior mammogram from {year}.",
            "Comparison is made to prior MRI from {year}.",
            "Compared with prior ultrasound dated {year}.",
            "Prior screening mammogram from {year} was reviewed.",
            "No prior imaging is available for comparison.",
            "Prior diagnostic studies from {year} were reviewed.",
        ])];
        if self.rng.gen_bool(0.3) {
            out.push(self.pick(&[
                "The prior study described scattered fibroglandular tissue.",
                "The prior study noted heterogeneously dense breasts.",
                "Previous MRI showed mild background enhancement.",
                "The prior report mentions fatty breasts.",
            ]));
        }
        out
    }

    fn technique(&mut self) -> Vec<String> {
        let kinds = self.fields.modality.kinds();
        let mut out = Vec::new();
        for k in kinds {
            let bank: &[&str] = match k {
                ModalityKind::MG => &[
                    "Standard CC and MLO views were obtained.",
                    "Digital breast tomosynthesis was performed.",
                ],
                ModalityKind::MRI => &[
                    "Axial T1 and T2 weighted images were obtained before and after gadolinium.",
                    "Dynamic contrast enhanced images were acquired.",
                ],
                ModalityKind::US => &[
                    "Targeted sonographic evaluation was performed.",
                    "Real time scanning of the {one} breast was performed.",
                ],
                ModalityKind::Biopsy => &[
                    "Informed consent was obtained.",
                    "Under imaging guidance a 14 gauge needle was used.",
                ],
            };
            out.push(self.pick(bank));
        }
        if self.rng.gen_bool(0.15) {
            out.push("Bilateral examination.".to_string());
        }
        out
    }

    fn findings(&mut self) -> Vec<String> {
        let mut out = Vec::new();
        let density = match self.fields.density {
            Density::Fatty => Some(&[
                "The breasts are almost entirely fatty.",
                "Breast tissue is predominantly fatty.",
            ][..]),
            Density::Scattered => Some(&[
                "There are scattered areas of fibroglandular density.",
                "Scattered fibroglandular tissue is present.",
            ][..]),
            Density::HeterogeneouslyDense => Some(&[
                "The breasts are heterogeneously dense, which may obscure small masses.",
                "Breast tissue is heterogeneously dense.",
            ][..]),
            Density::LEQ75Percent => Some(&[
                "Fibroglandular tissue occupies less than 75% of the breast volume.",
                "Dense tissue comprises 51 to 75% of the breast.",
            ][..]),
            Density::Dense => Some(&[
                "The breasts are extremely dense.",
                "Breast tissue is extremely dense, which lowers sensitivity.",
            ][..]),
            Density::NotStated => None,
        };
        if let Some(bank) = density {
            out.push(self.pick(bank));
        }
        let level = match self.fields.bpe {
            Bpe::Minimal => Some("minimal"),
            Bpe::Mild => Some("mild"),
            Bpe::Moderate => Some("moderate"),
            Bpe::Marked => Some("marked"),
            Bpe::NotStated => None,
        };
        if let Some(level) = level {
            let t = *[
                "Background parenchymal enhancement is {L}.",
                "There is {L} background enhancement.",
            ]
            .choose(self.rng)
            .unwrap();
            out.push(t.replace("{L}", level));
        }
        let n_extra = self.rng.gen_range(1..=3);
        let biopsy = self.fields.modality.contains(ModalityKind::Biopsy);
        for _ in 0..n_extra {
            let s = if biopsy && self.rng.gen_bool(0.5) {
                self.pick(&[
                    "The lesion was successfully sampled with {cores} cores.",
                    "A clip was placed at the biopsy site.",
                    "The patient tolerated the procedure well.",
                ])
            } else {
                self.pick(&[
                    "No suspicious mass, calcification or architectural distortion.",
                    "There is a {size} cm oval circumscribed mass in the {one} breast at {clock} o'clock.",
                    "Benign appearing calcifications are noted.",
                    "No axillary adenopathy.",
                    "Stable postsurgical changes in the {one} breast.",
                    "No significant change.",
                    "No abnormal enhancement.",
                ])
            };
            if !out.contains(&s) {
                out.push(s);
            }
        }
        out
    }

    fn impression(&mut self) -> Vec<String> {
        let mut out = vec![self.pick(&[
            "No mammographic evidence of malignancy.",
            "Benign findings.",
            "No significant change.",
            "Probably benign finding, short interval follow up recommended.",
            "Suspicious finding, biopsy recommended.",
            "Post biopsy imaging confirms clip placement.",
        ])];
        if self.rng.gen_bool(0.4) {
            out.push(self.pick(&[
                "Recommend routine screening in one year.",
                "Recommend continued annual screening mammogram.",
                "Correlate with clinical findings.",
            ]));
        }
        out
    }

    fn assessment(&mut self) -> Vec<String> {
        let n = self.rng.gen_range(0..=6);
        let desc = ["Incomplete", "Negative", "Benign", "Probably benign", "Suspicious", "Highly suggestive of malignancy", "Known malignancy"][n];
        let t = *[
            "BI-RADS {n}: {d}.",
            "BI-RADS category {n}.",
            "Overall assessment: BI-RADS {n}.",
            "Benign findings.",
        ]
        .choose(self.rng)
        .unwrap();
        vec![t.replace("{n}", &n.to_string()).replace("{d}", desc)]
    }

    fn write(mut self, report_id: String, present: &[bool; 7]) -> LabeledReport {
        let mut lines: Vec<(SectionLabel, Vec<String>)> = Vec::new();
        for section in SectionLabel::all() {
            if !present[section.index()] {
                continue;
            }
            let sentences = match section {
                SectionLabel::Title => vec![self.title()],
                SectionLabel::HistoryClinicalIndication => self.history(),
                SectionLabel::PriorImaging => self.prior_imaging(),
                SectionLabel::TechniqueProcedure => self.technique(),
                SectionLabel::FindingsProcedureNotes => self.findings(),
                SectionLabel::ImpressionOpinion => self.impression(),
                SectionLabel::AssessmentCategory => self.assessment(),
            };
            lines.push((*section, sentences));
        }
        let text = lines
            .iter()
            .map(|(_, s)| s.join(" "))
            .collect::<Vec<_>>()
            .join("\n");
        let labels: Vec<SectionLabel> = lines
            .iter()
            .flat_map(|(l, s)| std::iter::repeat(*l).take(s.len()))
            .collect();
        let spans = sentence_segment(&text);
        assert_eq!(
            spans.len(),
            labels.len(),
            "template sentences must split exactly as written: {text:?}"
        );
        LabeledReport {
            report_id,
            text,
            sentences: spans
                .into_iter()
                .zip(labels)
                .map(|((s, e), l)| (s, e, l))
                .collect(),
            fields: self.fields,
        }
    }
}

const GENERIC_WORDS: &[&str] = &[
    "the", "a", "man", "woman", "program", "grammar", "summer", "hammer", "gamma", "mamma",
    "diagram", "telegram", "ama", "mom", "am", "ram", "gram", "map", "mop", "mug", "gum", "moral",
    "orange", "garage", "camera", "manager", "drama", "radio", "memo", "mango", "organ", "comma",
    "market", "river", "house", "city", "walked", "opened", "bought", "read", "wrote", "saw",
    "quickly", "slowly", "and", "with", "from", "into", "near", "old", "new", "big", "small",
    "morning", "evening", "bright", "green", "table", "window", "garden", "music", "letter",
    "mirror", "ground", "game", "name", "farm", "warm", "storm", "form", "norm", "roam", "gloom",
    "ammo", "mammal", "kilogram", "programme", "monogram", "hologram", "anagram", "jam", "ham",
];

/// Domain-free filler text, used to train a control vocabulary.
pub fn generic_text(seed: u64, n_sentences: usize) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_sentences)
        .map(|_| {
            let len = rng.gen_range(5..12);
            let words: Vec<&str> = (0..len)
                .map(|_| *GENERIC_WORDS.choose(&mut rng).unwrap())
                .collect();
            let mut s = words.join(" ");
            s.push('.');
            s
        })
        .collect()
}
