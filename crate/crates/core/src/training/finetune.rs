use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::optim::clip_global_norm;
use super::{lr_at, AdamW, TrainConfig, TrainLog};
use crate::encoder::{EncoderParams, ModelConfig};
use crate::error::{Error, Result};
use crate::heads::{AuxFeatures, ClassifierModel, HeadSpec};
use crate::params::ParamSet;
use crate::tensor::argmax;
use crate::tokenizer::TokenSequence;

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub seq: TokenSequence,
    pub aux: Option<AuxFeatures>,
    pub label: usize,
}

pub struct FinetuneOutcome {
    pub model: ClassifierModel<f32>,
    pub log: TrainLog,
    /// Held-out accuracy after each epoch; empty without a validation split.
    pub validation_accuracy: Vec<f64>,
    pub n_train: usize,
}

/// `(argmax class, its probability)` per example.
pub fn predict(model: &ClassifierModel<f32>, config: &ModelConfig, examples: &[Example]) -> Result<Vec<(usize, f64)>> {
    examples
        .iter()
        .map(|e| {
            let p = model.predict_proba(config, &e.seq, e.aux.as_ref())?;
            let k = argmax(&p);
            Ok((k, p[k] as f64))
        })
        .collect()
}

fn stratified_holdout(labels: &[usize], fraction: f64, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let mut by_label: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        by_label.entry(*l).or_default().push(i);
    }
    let mut held = vec![false; labels.len()];
    for idx in by_label.values_mut() {
        idx.shuffle(rng);
        let take = (idx.len() as f64 * fraction).floor() as usize;
        for &i in &idx[..take] {
            held[i] = true;
        }
    }
    held
}

pub fn finetune(
    examples: Vec<Example>,
    base: &EncoderParams<f32>,
    model_config: &ModelConfig,
    head: &HeadSpec,
    train: &TrainConfig,
) -> Result<FinetuneOutcome> {
    finetune_with_hook(examples, base, model_config, head, train, |_, _, _, _| Ok(()))
}

/// Fine-tunes encoder, aux encoder and head jointly. Before every epoch,
/// `before_epoch(epoch, model, train_examples, original_indices)` may rewrite
/// the training examples, e.g. to feed the model's own previous-sentence
/// predictions. `original_indices[i]` is the position of `train_examples[i]`
/// in `examples`.
pub fn finetune_with_hook<F>(
    examples: Vec<Example>,
    base: &EncoderParams<f32>,
    model_config: &ModelConfig,
    head: &HeadSpec,
    train: &TrainConfig,
    mut before_epoch: F,
) -> Result<FinetuneOutcome>
where
    F: FnMut(usize, &ClassifierModel<f32>, &mut [Example], &[usize]) -> Result<()>,
{
    model_config.validate()?;
    train.validate()?;
    let n_classes = head.n_classes();
    if let Some(e) = examples.iter().find(|e| e.label >= n_classes) {
        return Err(Error::OutOfRange {
            what: "training label",
            index: e.label,
            limit: n_classes,
        });
    }
    if let Some(e) = examples.iter().find(|e| e.aux.is_some() != head.use_aux) {
        return Err(Error::InvalidInput(format!(
            "example aux presence ({}) does not match the head ({})",
            e.aux.is_some(),
            head.use_aux
        )));
    }
    let mut model = ClassifierModel::new(base.clone(), n_classes, head.use_aux, train.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(train.seed);
    let labels: Vec<usize> = examples.iter().map(|e| e.label).collect();
    let held = stratified_holdout(&labels, train.validation_fraction, &mut rng);
    let (mut train_set, mut val_set, mut train_index) = (Vec::new(), Vec::new(), Vec::new());
    for (i, (e, h)) in examples.into_iter().zip(held).enumerate() {
        if h {
            val_set.push(e);
        } else {
            train_set.push(e);
            train_index.push(i);
        }
    }
    let n_train = train_set.len();
    let mut log = TrainLog::default();
    let mut validation_accuracy = Vec::new();
    if train.epochs == 0 || train_set.is_empty() {
        return Ok(FinetuneOutcome {
            model,
            log,
            validation_accuracy,
            n_train,
        });
    }

    let per_epoch = n_train.div_ceil(train.batch_size);
    let total = per_epoch * train.epochs;
    let mut opt = AdamW::new(&model, train.weight_decay);
    let mut grads = model.zeros_like();
    let mut order: Vec<usize> = (0..n_train).collect();
    let mut step = 0;
    for epoch in 0..train.epochs {
        before_epoch(epoch, &model, &mut train_set, &train_index)?;
        order.shuffle(&mut rng);
        for batch in order.chunks(train.batch_size) {
            grads.tensors_mut().into_iter().for_each(|t| t.fill_zero());
            let scale = 1.0 / batch.len() as f32;
            let mut sum = 0.0;
            for &i in batch {
                let e = &train_set[i];
                sum += model.loss_and_grad(model_config, &e.seq, e.aux.as_ref(), e.label, Some(&mut rng), &mut grads, scale)?;
            }
            let loss = sum / batch.len() as f64;
            if !loss.is_finite() || !grads.all_finite() {
                return Err(Error::NonFiniteLoss { step: step + 1, loss });
            }
            if let Some(c) = train.grad_clip {
                clip_global_norm(&mut grads, c);
            }
            let lr = lr_at(step, total, train.warmup_fraction, train.learning_rate);
            opt.step(&mut model, &grads, lr);
            step += 1;
            log.push(step, loss, lr);
        }
        if !val_set.is_empty() {
            let pred = predict(&model, model_config, &val_set)?;
            let hits = pred.iter().zip(&val_set).filter(|((p, _), e)| *p == e.label).count();
            let acc = hits as f64 / val_set.len() as f64;
            log::debug!("{} epoch {}: validation accuracy {:.4}", head.task, epoch + 1, acc);
            validation_accuracy.push(acc);
        }
    }
    Ok(FinetuneOutcome {
        model,
        log,
        validation_accuracy,
        n_train,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::init_params;
    use crate::tokenizer::{encode, train_wordpiece};

    fn toy() -> (Vec<Example>, ModelConfig, HeadSpec) {
        let pos = ["mass is present", "a mass is seen", "mass noted", "there is a mass", "mass again"];
        let neg = ["no finding", "nothing seen", "normal study", "no change", "clear exam"];
        let all: Vec<&str> = pos.iter().chain(&neg).copied().collect();
        let vocab = train_wordpiece(&all, 60, 1).unwrap();
        let cfg = ModelConfig {
            vocab_size: vocab.len(),
            max_seq_len: 8,
            hidden_dim: 16,
            n_layers: 1,
            n_heads: 2,
            ff_dim: 32,
            dropout_rate: 0.0,
            seed: 1,
        };
        let ex = all
            .iter()
            .enumerate()
            .map(|(i, t)| Example {
                seq: encode(t, &vocab, 8).trimmed(),
                aux: None,
                label: usize::from(i >= 5),
            })
            .collect();
        let head = HeadSpec {
            task: "toy".into(),
            class_names: vec!["pos".into(), "neg".into()],
            use_aux: false,
            seq_len: 8,
        };
        (ex, cfg, head)
    }

    fn cfg_train(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 5,
            learning_rate: 1e-2,
            validation_fraction: 0.0,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_epochs_leaves_encoder_untouched() {
        let (ex, cfg, head) = toy();
        let base = init_params(&cfg).unwrap();
        let out = finetune(ex, &base, &cfg, &head, &cfg_train(0)).unwrap();
        assert_eq!(out.model.encoder, base);
        assert!(out.log.entries.is_empty());
    }

    #[test]
    fn separable_toy_reaches_full_training_accuracy() {
        let (ex, cfg, head) = toy();
        let base = init_params(&cfg).unwrap();
        let out = finetune(ex.clone(), &base, &cfg, &head, &cfg_train(30)).unwrap();
        let pred = predict(&out.model, &cfg, &ex).unwrap();
        assert!(pred.iter().zip(&ex).all(|((p, _), e)| *p == e.label));
        let per_epoch: Vec<f64> = out.log.losses().chunks(2).map(|c| c.iter().sum::<f64>() / 2.0).collect();
        let first = per_epoch[..3].iter().sum::<f64>();
        let last = per_epoch[per_epoch.len() - 3..].iter().sum::<f64>();
        assert!(last < first * 0.2, "{per_epoch:?}");
        let again = finetune(ex, &base, &cfg, &head, &cfg_train(30)).unwrap();
        assert_eq!(again.model, out.model);
    }

    #[test]
    fn unseen_label_fails_before_training() {
        let (mut ex, cfg, head) = toy();
        ex[3].label = 2;
        let base = init_params(&cfg).unwrap();
        assert!(matches!(
            finetune(ex, &base, &cfg, &head, &cfg_train(1)),
            Err(Error::OutOfRange { what: "training label", .. })
        ));
    }

    #[test]
    fn holdout_is_stratified() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let labels: Vec<usize> = (0..100).map(|i| usize::from(i >= 80)).chain([2]).collect();
        let held = stratified_holdout(&labels, 0.1, &mut rng);
        let count = |l: usize| labels.iter().zip(&held).filter(|(x, h)| **x == l && **h).count();
        assert_eq!((count(0), count(1), count(2)), (8, 2, 0));
    }
}
