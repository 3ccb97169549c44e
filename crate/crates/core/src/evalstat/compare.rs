use std::io::Write;

use serde::{Deserialize, Serialize};

use super::stats::{bonferroni, mann_whitney_u, mcnemar};
use super::EvalReport;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StatTest {
    Utest,
    Mcnemar,
}

impl std::str::FromStr for StatTest {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "utest" => Ok(StatTest::Utest),
            "mcnemar" => Ok(StatTest::Mcnemar),
            _ => Err(Error::InvalidInput(format!("unknown test `{s}` (utest|mcnemar)"))),
        }
    }
}

/// One pairwise comparison; field order is the output column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub group1: String,
    pub group2: String,
    pub stat: f64,
    pub pval: f64,
    pub pval_corrected: f64,
    pub reject: bool,
}

fn pooled_items(reports: &[EvalReport]) -> (Vec<(usize, &str)>, Vec<usize>, Vec<usize>) {
    let mut ids = Vec::new();
    let mut preds = Vec::new();
    let mut golds = Vec::new();
    for r in reports {
        ids.extend(r.item_ids.iter().map(|i| (r.fold, i.as_str())));
        preds.extend_from_slice(&r.preds);
        golds.extend_from_slice(&r.golds);
    }
    (ids, preds, golds)
}

/// All pairs `(i, j), i < j` of `groups`, Bonferroni-corrected over the pair count.
/// The U-test compares pooled metric samples; McNemar compares pooled
/// predictions on identical items.
pub fn compare_runs(groups: &[(String, Vec<EvalReport>)], test: StatTest, alpha: f64) -> Result<Vec<ComparisonRow>> {
    if groups.len() < 2 {
        return Err(Error::InvalidInput("need at least two runs to compare".into()));
    }
    let folds = |g: &[EvalReport]| g.iter().map(|r| r.fold).collect::<Vec<_>>();
    let base = folds(&groups[0].1);
    if let Some((name, _)) = groups.iter().find(|(_, g)| folds(g) != base) {
        return Err(Error::InvalidInput(format!("run `{name}` has different folds")));
    }
    let mut rows = Vec::new();
    let mut pvals = Vec::new();
    for i in 0..groups.len() {
        for j in i + 1..groups.len() {
            let (a, b) = (&groups[i].1, &groups[j].1);
            let (stat, p) = match test {
                StatTest::Utest => {
                    let sa: Vec<f64> = a.iter().flat_map(|r| r.samples.iter().copied()).collect();
                    let sb: Vec<f64> = b.iter().flat_map(|r| r.samples.iter().copied()).collect();
                    let t = mann_whitney_u(&sa, &sb)?;
                    (t.u, t.p_value)
                }
                StatTest::Mcnemar => {
                    let (ia, pa, ga) = pooled_items(a);
                    let (ib, pb, gb) = pooled_items(b);
                    if ia != ib || ga != gb {
                        return Err(Error::InvalidInput(format!(
                            "runs `{}` and `{}` were not scored on the same items",
                            groups[i].0, groups[j].0
                        )));
                    }
                    let m = mcnemar(&pa, &pb, &ga)?;
                    (m.statistic, m.p_value)
                }
            };
            pvals.push(p);
            rows.push(ComparisonRow {
                group1: groups[i].0.clone(),
                group2: groups[j].0.clone(),
                stat,
                pval: p,
                pval_corrected: 0.0,
                reject: false,
            });
        }
    }
    let (corrected, reject) = bonferroni(&pvals, alpha);
    for ((row, c), r) in rows.iter_mut().zip(corrected).zip(reject) {
        row.pval_corrected = c;
        row.reject = r;
    }
    Ok(rows)
}

pub fn write_comparison_csv<W: Write>(rows: &[ComparisonRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["group1", "group2", "stat", "pval", "pval_corrected", "reject"])
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    for r in rows {
        out.write_record([
            r.group1.clone(),
            r.group2.clone(),
            format!("{:.6}", r.stat),
            format!("{:.6e}", r.pval),
            format!("{:.6e}", r.pval_corrected),
            r.reject.to_string(),
        ])
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    }
    out.flush().map_err(|e| Error::InvalidInput(e.to_string()))
}

pub fn write_comparison_markdown<W: Write>(rows: &[ComparisonRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "| group1 | group2 | stat | pval | pval corrected | reject |")?;
    writeln!(w, "|---|---|---|---|---|---|")?;
    for r in rows {
        writeln!(
            w,
            "| {} | {} | {:.4} | {:.4e} | {:.4e} | {} |",
            r.group1, r.group2, r.stat, r.pval, r.pval_corrected, r.reject
        )?;
    }
    Ok(())
}
