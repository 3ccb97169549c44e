use rand::Rng;

use crate::tokenizer::{TokenSequence, CLS, MASK, PAD, SEP, SPECIAL_TOKENS};

/// Selects each non-special position with probability `mask_prob`; a selected
/// token becomes MASK (80%), a random non-special token (10%) or stays (10%).
/// Targets carry the original id at selected positions.
pub fn mask_tokens<R: Rng>(
    seq: &TokenSequence,
    vocab_size: usize,
    mask_prob: f64,
    rng: &mut R,
) -> (TokenSequence, Vec<Option<u32>>) {
    let first_regular = SPECIAL_TOKENS.len() as u32;
    let mut out = seq.clone();
    let mut targets = vec![None; seq.ids.len()];
    for (i, (&id, &m)) in seq.ids.iter().zip(&seq.attention_mask).enumerate() {
        if m == 0 || id == CLS || id == SEP || id == PAD {
            continue;
        }
        if rng.gen::<f64>() >= mask_prob {
            continue;
        }
        targets[i] = Some(id);
        let r: f64 = rng.gen();
        if r < 0.8 {
            out.ids[i] = MASK;
        } else if r < 0.9 && vocab_size as u32 > first_regular {
            out.ids[i] = rng.gen_range(first_regular..vocab_size as u32);
        }
    }
    (out, targets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn seq() -> TokenSequence {
        TokenSequence::from_ids(&[7, 8, 9, 10, 11, 12], 10)
    }

    #[test]
    fn zero_probability_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (s, t) = mask_tokens(&seq(), 50, 0.0, &mut rng);
        assert_eq!(s, seq());
        assert!(t.iter().all(Option::is_none));
    }

    #[test]
    fn specials_are_never_selected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let base = seq();
        for _ in 0..10_000 {
            let (s, t) = mask_tokens(&base, 50, 0.5, &mut rng);
            for i in [0, 7, 8, 9] {
                assert_eq!(t[i], None);
                assert_eq!(s.ids[i], base.ids[i]);
            }
        }
    }

    #[test]
    fn selection_rate_and_replacement_split() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let base = TokenSequence::from_ids(&[20; 100], 102);
        let (mut cand, mut sel, mut masked, mut random, mut kept) = (0, 0, 0, 0, 0);
        while cand < 100_000 {
            let (s, t) = mask_tokens(&base, 1000, 0.15, &mut rng);
            cand += 100;
            for (id, tgt) in s.ids.iter().zip(&t) {
                if tgt.is_some() {
                    sel += 1;
                    match *id {
                        MASK => masked += 1,
                        20 => kept += 1,
                        _ => random += 1,
                    }
                }
            }
        }
        let rate = sel as f64 / cand as f64;
        assert!((rate - 0.15).abs() < 0.01, "{rate}");
        // A random draw can land on the original id (1 in 995); it counts as kept.
        let f = |n: i32| n as f64 / sel as f64;
        assert!((f(masked) - 0.8).abs() < 0.02);
        assert!((f(random) - 0.1).abs() < 0.02);
        assert!((f(kept) - 0.1).abs() < 0.02);
    }
}
