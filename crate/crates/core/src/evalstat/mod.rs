//! Accuracy, generalized F1, and the paired/unpaired tests used to compare runs.

mod compare;
mod stats;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use compare::{compare_runs, write_comparison_csv, write_comparison_markdown, ComparisonRow, StatTest};
pub use stats::{bonferroni, mann_whitney_u, mcnemar, mcnemar_counts, McNemar, UTest, MCNEMAR_EXACT_BELOW, U_EXACT_MAX_PRODUCT};

/// One-vs-rest counts for one class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
    /// Gold instances of the class, `tp + fn_`.
    pub p: usize,
}

fn check_pair(preds: &[usize], golds: &[usize]) -> Result<()> {
    if preds.len() != golds.len() {
        return Err(Error::Dimension {
            expected: golds.len(),
            actual: preds.len(),
        });
    }
    if preds.is_empty() {
        return Err(Error::InvalidInput("cannot score an empty prediction list".into()));
    }
    Ok(())
}

pub fn confusion(preds: &[usize], golds: &[usize], n_classes: usize) -> Result<Vec<ConfusionCounts>> {
    check_pair(preds, golds)?;
    if let Some(&bad) = preds.iter().chain(golds).find(|&&c| c >= n_classes) {
        return Err(Error::OutOfRange {
            what: "class index",
            index: bad,
            limit: n_classes,
        });
    }
    let n = preds.len();
    let mut out = vec![ConfusionCounts::default(); n_classes];
    for (&p, &g) in preds.iter().zip(golds) {
        out[g].p += 1;
        if p == g {
            out[g].tp += 1;
        } else {
            out[p].fp += 1;
            out[g].fn_ += 1;
        }
    }
    for c in out.iter_mut() {
        c.tn = n - c.tp - c.fp - c.fn_;
    }
    Ok(out)
}

pub fn accuracy(preds: &[usize], golds: &[usize]) -> Result<f64> {
    check_pair(preds, golds)?;
    let hits = preds.iter().zip(golds).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// `(TP + TN) / (TP + FP + TN + FN)` for a binary reading.
pub fn binary_accuracy(tp: usize, tn: usize, fp: usize, fn_: usize) -> f64 {
    (tp + tn) as f64 / (tp + tn + fp + fn_) as f64
}

/// `2 Σ wᵢ TPᵢ / Σ wᵢ (2 TPᵢ + FPᵢ + FNᵢ)` with `wᵢ = 1/Pᵢ²`. A class absent
/// from the gold labels is skipped unless it was predicted, in which case it
/// enters with weight 1.
pub fn generalized_f1(preds: &[usize], golds: &[usize], n_classes: usize) -> Result<f64> {
    let counts = confusion(preds, golds, n_classes)?;
    Ok(gf1_from_counts(&counts))
}

pub fn gf1_from_counts(counts: &[ConfusionCounts]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for c in counts {
        let w = match (c.p, c.fp) {
            (0, 0) => continue,
            (0, _) => 1.0,
            (p, _) => 1.0 / (p as f64 * p as f64),
        };
        num += w * 2.0 * c.tp as f64;
        den += w * (2 * c.tp + c.fp + c.fn_) as f64;
    }
    if den == 0.0 {
        1.0
    } else {
        num / den
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: String,
    pub fold: usize,
    pub n_items: usize,
    pub accuracy: f64,
    pub gf1: f64,
    pub class_names: Vec<String>,
    pub per_class: Vec<ConfusionCounts>,
    pub item_ids: Vec<String>,
    pub preds: Vec<usize>,
    pub golds: Vec<usize>,
    /// Per-unit metric samples for the U-test: per-report accuracy for
    /// segmentation, per-item correctness otherwise.
    pub samples: Vec<f64>,
}

impl EvalReport {
    pub fn new(
        task: &str,
        fold: usize,
        class_names: Vec<String>,
        item_ids: Vec<String>,
        preds: Vec<usize>,
        golds: Vec<usize>,
        samples: Option<Vec<f64>>,
    ) -> Result<Self> {
        if item_ids.len() != preds.len() {
            return Err(Error::Dimension {
                expected: preds.len(),
                actual: item_ids.len(),
            });
        }
        let per_class = confusion(&preds, &golds, class_names.len())?;
        let samples = samples.unwrap_or_else(|| {
            preds.iter().zip(&golds).map(|(p, g)| f64::from(u8::from(p == g))).collect()
        });
        Ok(Self {
            task: task.to_string(),
            fold,
            n_items: preds.len(),
            accuracy: accuracy(&preds, &golds)?,
            gf1: gf1_from_counts(&per_class),
            class_names,
            per_class,
            item_ids,
            preds,
            golds,
            samples,
        })
    }
}
