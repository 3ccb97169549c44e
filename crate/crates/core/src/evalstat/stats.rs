use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// The U-test enumerates the null distribution when `n_a·n_b` is at most this
/// and there are no ties.
pub const U_EXACT_MAX_PRODUCT: usize = 400;
/// McNemar uses the exact binomial test when `b + c` is below this.
pub const MCNEMAR_EXACT_BELOW: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UTest {
    /// `U` of the first sample.
    pub u: f64,
    pub p_value: f64,
    pub exact: bool,
}

/// Midranks (1-based) of `values`, and the tie-group sizes.
fn midranks(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|a, b| values[*a].total_cmp(&values[*b]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && values[idx[j]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + 1 + j) as f64 / 2.0;
        for &k in &idx[i..j] {
            ranks[k] = r;
        }
        if j - i > 1 {
            ties.push(j - i);
        }
        i = j;
    }
    (ranks, ties)
}

/// Number of arrangements of `m` first-sample and `n` second-sample items
/// giving each value of `U` (first sample above second).
fn u_counts(m: usize, n: usize) -> Vec<u128> {
    let max = m * n;
    // table[j][u] for the current i, j = 0..=n
    let mut prev: Vec<Vec<u128>> = (0..=n).map(|_| {
        let mut v = vec![0u128; max + 1];
        v[0] = 1;
        v
    }).collect();
    for _i in 1..=m {
        let mut cur: Vec<Vec<u128>> = vec![vec![0u128; max + 1]; n + 1];
        cur[0][0] = 1;
        for j in 1..=n {
            for u in 0..=max {
                // Largest item is from the first sample (beats all j) or from the second.
                let from_first = if u >= j { prev[j][u - j] } else { 0 };
                cur[j][u] = from_first + cur[j - 1][u];
            }
        }
        prev = cur;
    }
    prev.swap_remove(n)
}

/// Two-sided Mann-Whitney U test.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<UTest> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidInput("U test needs two non-empty samples".into()));
    }
    if a.iter().chain(b).any(|x| x.is_nan()) {
        return Err(Error::InvalidInput("U test samples contain NaN".into()));
    }
    let (na, nb) = (a.len(), b.len());
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (ranks, ties) = midranks(&pooled);
    let ra: f64 = ranks[..na].iter().sum();
    let u = ra - (na * (na + 1)) as f64 / 2.0;

    if na * nb <= U_EXACT_MAX_PRODUCT && ties.is_empty() {
        let counts = u_counts(na, nb);
        let total: u128 = counts.iter().sum();
        let k = u.round() as usize;
        let lower: u128 = counts[..=k].iter().sum();
        let upper: u128 = counts[k..].iter().sum();
        let p = (2.0 * lower.min(upper) as f64 / total as f64).min(1.0);
        return Ok(UTest { u, p_value: p, exact: true });
    }

    let n = (na + nb) as f64;
    let mu = (na * nb) as f64 / 2.0;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / (n * (n - 1.0));
    let var = (na * nb) as f64 / 12.0 * ((n + 1.0) - tie_term);
    if var <= 0.0 {
        return Ok(UTest { u, p_value: 1.0, exact: false });
    }
    let z = ((u - mu).abs() - 0.5).max(0.0) / var.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let p = (2.0 * normal.sf(z)).min(1.0);
    Ok(UTest { u, p_value: p, exact: false })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McNemar {
    /// A correct, B wrong.
    pub b: usize,
    /// A wrong, B correct.
    pub c: usize,
    /// `min(b, c)` on the exact path, the corrected chi-square otherwise.
    pub statistic: f64,
    pub p_value: f64,
    pub exact: bool,
}

fn binom(n: u32, k: u32) -> u128 {
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// McNemar's test from discordant counts.
pub fn mcnemar_counts(b: usize, c: usize) -> McNemar {
    let n = b + c;
    if n == 0 {
        return McNemar { b, c, statistic: 0.0, p_value: 1.0, exact: true };
    }
    if n < MCNEMAR_EXACT_BELOW {
        let k = b.min(c) as u32;
        let tail: u128 = (0..=k).map(|i| binom(n as u32, i)).sum();
        let p = (2.0 * tail as f64 / (1u128 << n) as f64).min(1.0);
        return McNemar { b, c, statistic: k as f64, p_value: p, exact: true };
    }
    let d = (b as f64 - c as f64).abs() - 1.0;
    let stat = d * d / n as f64;
    let chi = ChiSquared::new(1.0).expect("one degree of freedom");
    McNemar { b, c, statistic: stat, p_value: chi.sf(stat), exact: false }
}

pub fn mcnemar(preds_a: &[usize], preds_b: &[usize], golds: &[usize]) -> Result<McNemar> {
    if preds_a.len() != golds.len() || preds_b.len() != golds.len() {
        return Err(Error::Dimension {
            expected: golds.len(),
            actual: if preds_a.len() != golds.len() { preds_a.len() } else { preds_b.len() },
        });
    }
    let (mut b, mut c) = (0, 0);
    for ((pa, pb), g) in preds_a.iter().zip(preds_b).zip(golds) {
        match (pa == g, pb == g) {
            (true, false) => b += 1,
            (false, true) => c += 1,
            _ => {}
        }
    }
    Ok(mcnemar_counts(b, c))
}

/// `min(1, p·m)` and `corrected < alpha`.
pub fn bonferroni(p_values: &[f64], alpha: f64) -> (Vec<f64>, Vec<bool>) {
    let m = p_values.len() as f64;
    let corrected: Vec<f64> = p_values.iter().map(|p| (p * m).min(1.0)).collect();
    let reject = corrected.iter().map(|p| *p < alpha).collect();
    (corrected, reject)
}
