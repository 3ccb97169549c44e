//! WordPiece vocabulary growth by likelihood-gain pair merging.
//!
//! Each round merges the adjacent symbol pair maximizing
//! `count(ab) / (count(a) * count(b))`, i.e. the gain in unigram language-model
//! log-likelihood from treating `ab` as one unit.

use std::collections::{BTreeMap, BTreeSet};

use super::{pretokenize, Vocab, CONTINUATION_PREFIX, SPECIAL_TOKENS};
use crate::error::{Error, Result};

struct Word {
    symbols: Vec<String>,
    count: u64,
}

fn merged_token(a: &str, b: &str) -> String {
    let mut s = a.to_string();
    s.push_str(b.strip_prefix(CONTINUATION_PREFIX).unwrap_or(b));
    s
}

/// Trains an uncased vocabulary. `min_freq` bounds both the character
/// alphabet and candidate pair counts. Ties on score go to the
/// lexicographically smallest merged token.
pub fn train_wordpiece<S: AsRef<str>>(
    texts: &[S],
    vocab_size: usize,
    min_freq: u64,
) -> Result<Vocab> {
    let mut word_counts: BTreeMap<String, u64> = BTreeMap::new();
    for t in texts {
        for w in pretokenize(t.as_ref()) {
            *word_counts.entry(w).or_default() += 1;
        }
    }
    if word_counts.is_empty() {
        return Err(Error::Tokenizer("cannot train on an empty corpus".into()));
    }
    let min_freq = min_freq.max(1);

    let mut char_counts: BTreeMap<char, u64> = BTreeMap::new();
    for (w, c) in &word_counts {
        for ch in w.chars() {
            *char_counts.entry(ch).or_default() += c;
        }
    }
    let alphabet: BTreeSet<char> = char_counts
        .iter()
        .filter(|(_, c)| **c >= min_freq)
        .map(|(ch, _)| *ch)
        .collect();

    let mut words: Vec<Word> = word_counts
        .into_iter()
        .filter(|(w, _)| w.chars().all(|c| alphabet.contains(&c)))
        .map(|(w, count)| Word {
            symbols: w
                .chars()
                .enumerate()
                .map(|(i, c)| {
                    if i == 0 {
                        c.to_string()
                    } else {
                        format!("{CONTINUATION_PREFIX}{c}")
                    }
                })
                .collect(),
            count,
        })
        .collect();

    // Every alphabet character in both word-initial and continuation form keeps
    // any string over the alphabet encodable without UNK.
    let mut initial: BTreeSet<String> = BTreeSet::new();
    for ch in &alphabet {
        initial.insert(ch.to_string());
        initial.insert(format!("{CONTINUATION_PREFIX}{ch}"));
    }
    let base = SPECIAL_TOKENS.len() + initial.len();
    if vocab_size <= base {
        return Err(Error::Tokenizer(format!(
            "vocab_size {vocab_size} must exceed specials + alphabet ({base})"
        )));
    }

    let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
    tokens.extend(initial.iter().cloned());
    let mut present: BTreeSet<String> = tokens.iter().cloned().collect();

    while tokens.len() < vocab_size {
        let Some((a, b)) = best_pair(&words, min_freq) else {
            break;
        };
        let merged = merged_token(&a, &b);
        for w in words.iter_mut() {
            apply_merge(&mut w.symbols, &a, &b, &merged);
        }
        if present.insert(merged.clone()) {
            tokens.push(merged);
        }
    }
    Vocab::from_tokens(tokens)
}

fn best_pair(words: &[Word], min_freq: u64) -> Option<(String, String)> {
    let mut symbol_counts: BTreeMap<&str, u64> = BTreeMap::new();
    let mut pair_counts: BTreeMap<(&str, &str), u64> = BTreeMap::new();
    for w in words {
        for s in &w.symbols {
            *symbol_counts.entry(s).or_default() += w.count;
        }
        for pair in w.symbols.windows(2) {
            *pair_counts.entry((&pair[0], &pair[1])).or_default() += w.count;
        }
    }
    let mut best: Option<((&str, &str), u64, u128, String)> = None;
    for (&(a, b), &count) in &pair_counts {
        if count < min_freq {
            continue;
        }
        let denom = symbol_counts[a] as u128 * symbol_counts[b] as u128;
        let merged = merged_token(a, b);
        let better = match &best {
            None => true,
            Some((_, bc, bd, bm)) => {
                // count/denom vs bc/bd without rounding.
                let lhs = count as u128 * bd;
                let rhs = *bc as u128 * denom;
                lhs > rhs || (lhs == rhs && merged < *bm)
            }
        };
        if better {
            best = Some(((a, b), count, denom, merged));
        }
    }
    best.map(|((a, b), ..)| (a.to_string(), b.to_string()))
}

fn apply_merge(symbols: &mut Vec<String>, a: &str, b: &str, merged: &str) {
    if symbols.len() < 2 {
        return;
    }
    let mut out = Vec::with_capacity(symbols.len());
    let mut i = 0;
    while i < symbols.len() {
        if i + 1 < symbols.len() && symbols[i] == a && symbols[i + 1] == b {
            out.push(merged.to_string());
            i += 2;
        } else {
            out.push(std::mem::take(&mut symbols[i]));
            i += 1;
        }
    }
    *symbols = out;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::{decode, encode, UNK};

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(train_wordpiece::<&str>(&[], 100, 2).is_err());
        assert!(train_wordpiece(&["   "], 100, 2).is_err());
    }

    #[test]
    fn vocab_budget_must_exceed_alphabet() {
        // alphabet {a, ##a} + 5 specials = 7
        assert!(train_wordpiece(&["aaa aaa"], 7, 1).is_err());
        assert!(train_wordpiece(&["aaa aaa"], 8, 1).is_ok());
    }

    #[test]
    fn single_symbol_corpus_only_yields_runs_of_a() {
        let texts = vec!["aaa"; 10];
        let v = train_wordpiece(&texts, 50, 2).unwrap();
        for t in &v.tokens()[SPECIAL_TOKENS.len()..] {
            let body = t.strip_prefix("##").unwrap_or(t);
            assert!(!body.is_empty() && body.chars().all(|c| c == 'a'), "{t}");
        }
        assert!(v.id("a").is_some());
        assert_eq!(v.tokenize_to_strings("aaa"), vec!["aaa"]);
        // Exhausted merges stop growth below the budget.
        assert!(v.len() < 50);
    }

    #[test]
    fn first_merge_maximizes_likelihood_gain_with_lexicographic_ties() {
        // counts: a=3, ##b=4, c=3, ##a=1, ##c=1.
        // (a,##b)=3 -> 3/12; (c,##a)=1 -> 1/3; (c,##b)=1 -> 1/12; (c,##c)=1 -> 1/3.
        // "ca" and "cc" tie at 1/3; "ca" sorts first. Pure frequency would pick "ab".
        let texts = ["ab ab ab ca cb cc"];
        let v = train_wordpiece(&texts, 12, 1).unwrap();
        assert_eq!(v.len(), 12);
        assert_eq!(v.tokens()[11], "ca");
    }

    #[test]
    fn rare_characters_are_dropped_and_encode_to_unk() {
        let texts = ["mass mass mass zq"];
        let v = train_wordpiece(&texts, 40, 2).unwrap();
        assert!(v.id("z").is_none());
        assert_eq!(v.tokenize("zq"), vec![UNK]);
    }

    #[test]
    fn deterministic_and_round_trips_in_vocab_words() {
        let texts = ["no suspicious mass", "no mass seen", "mass is stable"];
        let a = train_wordpiece(&texts, 60, 1).unwrap();
        let b = train_wordpiece(&texts, 60, 1).unwrap();
        assert_eq!(a, b);
        for w in ["mass", "stable", "suspicious"] {
            let seq = encode(w, &a, 16);
            assert_eq!(decode(&seq.ids, &a).unwrap(), w);
        }
    }
}
