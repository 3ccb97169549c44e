use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::optim::clip_global_norm;
use super::{lr_at, mask_tokens, AdamW, TrainConfig, TrainLog};
use crate::encoder::{init_params, ModelConfig};
use crate::error::{Error, Result};
use crate::heads::MlmModel;
use crate::params::ParamSet;
use crate::tokenizer::{encode, TokenSequence, Vocab};

pub struct PretrainOutcome {
    pub model: MlmModel<f32>,
    pub log: TrainLog,
}

/// Encodes `texts` at `seq_len`, drops those with no maskable token, trims PAD.
pub fn pretrain_sequences<S: AsRef<str>>(texts: &[S], vocab: &Vocab, seq_len: usize) -> Vec<TokenSequence> {
    texts
        .iter()
        .map(|t| encode(t.as_ref(), vocab, seq_len).trimmed())
        .filter(|s| s.ids.len() > 2)
        .collect()
}

/// Runs `train.max_steps` masked-LM updates from a fresh initialization.
/// `on_checkpoint` receives the model every `checkpoint_interval` steps.
pub fn pretrain<S, F>(
    texts: &[S],
    vocab: &Vocab,
    model_config: &ModelConfig,
    train: &TrainConfig,
    mut on_checkpoint: F,
) -> Result<PretrainOutcome>
where
    S: AsRef<str>,
    F: FnMut(usize, &MlmModel<f32>) -> Result<()>,
{
    model_config.validate()?;
    train.validate()?;
    if vocab.len() != model_config.vocab_size {
        return Err(Error::Config(format!(
            "vocabulary has {} tokens but the model expects {}",
            vocab.len(),
            model_config.vocab_size
        )));
    }
    if train.seq_len > model_config.max_seq_len {
        return Err(Error::Config(format!(
            "seq_len {} exceeds positional capacity {}",
            train.seq_len, model_config.max_seq_len
        )));
    }
    let seqs = pretrain_sequences(texts, vocab, train.seq_len);
    let mut model = MlmModel::new(init_params(model_config)?);
    let mut log = TrainLog::default();
    if train.max_steps == 0 {
        return Ok(PretrainOutcome { model, log });
    }
    if seqs.is_empty() {
        return Err(Error::InvalidInput("no encodable pre-training text".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(train.seed);
    let mut opt = AdamW::new(&model, train.weight_decay);
    let mut grads = model.zeros_like();
    let mut order: Vec<usize> = (0..seqs.len()).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;

    for step in 0..train.max_steps {
        let mut batch = Vec::with_capacity(train.batch_size);
        for _ in 0..train.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let (masked, targets) = mask_tokens(&seqs[order[cursor]], model_config.vocab_size, train.mask_prob, &mut rng);
            batch.push((masked, targets));
            cursor += 1;
        }
        let n_masked: usize = batch.iter().map(|(_, t)| t.iter().flatten().count()).sum();
        grads.tensors_mut().into_iter().for_each(|t| t.fill_zero());
        let mut total = 0.0;
        if n_masked > 0 {
            let scale = 1.0 / n_masked as f32;
            for (seq, targets) in &batch {
                let (sum, _) = model.loss_and_grad(model_config, seq, targets, Some(&mut rng), &mut grads, scale)?;
                total += sum;
            }
        }
        let loss = if n_masked == 0 { 0.0 } else { total / n_masked as f64 };
        if !loss.is_finite() || !grads.all_finite() {
            return Err(Error::NonFiniteLoss { step: step + 1, loss });
        }
        if let Some(c) = train.grad_clip {
            clip_global_norm(&mut grads, c);
        }
        let lr = lr_at(step, train.max_steps, train.warmup_fraction, train.learning_rate);
        opt.step(&mut model, &grads, lr);
        log.push(step + 1, loss, lr);
        if let Some(every) = train.checkpoint_interval {
            if (step + 1) % every == 0 {
                on_checkpoint(step + 1, &model)?;
            }
        }
    }
    Ok(PretrainOutcome { model, log })
}

/// Top-1 accuracy of the decoder at masked positions of `seqs`, and how many
/// positions were scored.
pub fn masked_token_accuracy(
    model: &MlmModel<f32>,
    config: &ModelConfig,
    seqs: &[TokenSequence],
    mask_prob: f64,
    seed: u64,
) -> Result<(f64, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut hit, mut n) = (0usize, 0usize);
    for s in seqs {
        let (masked, targets) = mask_tokens(s, config.vocab_size, mask_prob, &mut rng);
        if targets.iter().all(Option::is_none) {
            continue;
        }
        let pred = model.predict(config, &masked)?;
        for (p, t) in pred.iter().zip(&targets) {
            if let Some(t) = t {
                n += 1;
                hit += usize::from(p == t);
            }
        }
    }
    Ok((if n == 0 { 0.0 } else { hit as f64 / n as f64 }, n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::train_wordpiece;

    fn setup() -> (Vec<String>, Vocab, ModelConfig, TrainConfig) {
        let texts: Vec<String> = (0..40)
            .map(|i| format!("the left breast shows mass number {} without change.", i % 5))
            .collect();
        let vocab = train_wordpiece(&texts, 80, 1).unwrap();
        let cfg = ModelConfig {
            vocab_size: vocab.len(),
            max_seq_len: 16,
            hidden_dim: 16,
            n_layers: 1,
            n_heads: 2,
            ff_dim: 32,
            dropout_rate: 0.1,
            seed: 5,
        };
        let train = TrainConfig {
            batch_size: 8,
            max_steps: 6,
            learning_rate: 1e-3,
            seq_len: 16,
            checkpoint_interval: Some(2),
            ..TrainConfig::default()
        };
        (texts, vocab, cfg, train)
    }

    #[test]
    fn zero_steps_returns_initialization() {
        let (texts, vocab, cfg, train) = setup();
        let out = pretrain(&texts, &vocab, &cfg, &TrainConfig { max_steps: 0, ..train }, |_, _| Ok(())).unwrap();
        assert_eq!(out.model.encoder, init_params::<f32>(&cfg).unwrap());
        assert!(out.log.entries.is_empty());
    }

    #[test]
    fn seeded_runs_are_identical_and_checkpoint_on_interval() {
        let (texts, vocab, cfg, train) = setup();
        let mut seen = Vec::new();
        let a = pretrain(&texts, &vocab, &cfg, &train, |s, _| {
            seen.push(s);
            Ok(())
        })
        .unwrap();
        let b = pretrain(&texts, &vocab, &cfg, &train, |_, _| Ok(())).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.model, b.model);
        assert_eq!(seen, vec![2, 4, 6]);
        let steps: Vec<usize> = a.log.entries.iter().map(|e| e.step).collect();
        assert_eq!(steps, (1..=6).collect::<Vec<_>>());
    }

    #[test]
    fn divergence_reports_the_step() {
        let (texts, vocab, cfg, train) = setup();
        let train = TrainConfig { learning_rate: 1e30, ..train };
        match pretrain(&texts, &vocab, &cfg, &train, |_, _| Ok(())) {
            Err(Error::NonFiniteLoss { step, .. }) => assert!(step >= 2),
            Err(e) => panic!("unexpected error {e}"),
            Ok(_) => panic!("expected divergence"),
        }
    }

    #[test]
    fn vocab_size_mismatch_is_a_config_error() {
        let (texts, vocab, cfg, train) = setup();
        let cfg = ModelConfig { vocab_size: cfg.vocab_size + 1, ..cfg };
        assert!(matches!(pretrain(&texts, &vocab, &cfg, &train, |_, _| Ok(())), Err(Error::Config(_))));
    }
}
