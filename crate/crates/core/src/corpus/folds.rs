use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Item indices for one cross-validation split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified k-fold over items `0..strata.len()`.
///
/// Items of each stratum are shuffled, then dealt round-robin. The dealing
/// position carries over between strata so overall fold sizes stay balanced too.
pub fn stratified_kfold<S: Ord + Clone + std::fmt::Debug>(
    strata: &[S],
    k: usize,
    seed: u64,
) -> Result<Vec<Fold>> {
    let n = strata.len();
    if k < 2 || k > n {
        return Err(Error::InvalidInput(format!(
            "k-fold needs 2 <= k <= n (k = {k}, n = {n})"
        )));
    }
    let mut groups: BTreeMap<S, Vec<usize>> = BTreeMap::new();
    for (i, s) in strata.iter().enumerate() {
        groups.entry(s.clone()).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0usize; n];
    let mut cursor = 0usize;
    for (stratum, members) in groups.iter_mut() {
        if members.len() < k {
            log::warn!(
                "stratum {stratum:?} has {} members, fewer than k = {k}; assigning round-robin",
                members.len()
            );
        }
        members.shuffle(&mut rng);
        for &item in members.iter() {
            assignment[item] = cursor % k;
            cursor += 1;
        }
    }
    Ok((0..k)
        .map(|f| {
            let (test, train): (Vec<usize>, Vec<usize>) =
                (0..n).partition(|&i| assignment[i] == f);
            Fold { train, test }
        })
        .collect())
}
