//! Output heads: masked-token decoder tied to the token embeddings, the
//! sequence classifier, and the auxiliary context encoder whose 128-wide
//! output is concatenated with the pooled vector.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{ClassLabel, SectionLabel};
use crate::encoder::{backward, forward, EncoderParams, ModelConfig};
use crate::error::{Error, Result};
use crate::params::{prefixed, truncated_normal, ParamSet, INIT_STD};
use crate::tensor::{matmul, softmax_in_place, Op, Real, Tensor};
use crate::tokenizer::TokenSequence;

pub const AUX_DIM: usize = 128;
/// One-hot over the seven sections plus a start-of-report slot, then two scalars.
pub const AUX_INPUT_DIM: usize = SectionLabel::COUNT + 1 + 2;
pub const AUX_HIDDEN: usize = 128;
/// Report lengths above this count saturate the length feature.
pub const AUX_LENGTH_CAP: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuxFeatures {
    pub prev_label: Option<SectionLabel>,
    pub sentence_index: usize,
    pub total_sentences: usize,
}

impl AuxFeatures {
    pub fn new(
        prev_label: Option<SectionLabel>,
        sentence_index: usize,
        total_sentences: usize,
    ) -> Result<Self> {
        if sentence_index >= total_sentences {
            return Err(Error::InvalidInput(format!(
                "sentence index {sentence_index} outside a report of {total_sentences}"
            )));
        }
        if prev_label.is_none() != (sentence_index == 0) {
            return Err(Error::InvalidInput(
                "previous label must be absent exactly at the first sentence".into(),
            ));
        }
        Ok(Self {
            prev_label,
            sentence_index,
            total_sentences,
        })
    }

    /// Index of the start-of-report slot in [`AuxFeatures::input_vector`].
    pub const NONE_SLOT: usize = SectionLabel::COUNT;

    pub fn input_vector(&self) -> [f64; AUX_INPUT_DIM] {
        let mut v = [0.0; AUX_INPUT_DIM];
        let slot = self.prev_label.map_or(Self::NONE_SLOT, |l| l.index());
        v[slot] = 1.0;
        v[SectionLabel::COUNT + 1] = self.sentence_index as f64 / self.total_sentences as f64;
        v[SectionLabel::COUNT + 2] =
            self.total_sentences.min(AUX_LENGTH_CAP) as f64 / AUX_LENGTH_CAP as f64;
        v
    }
}

/// Three affine layers, each followed by tanh.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxEncoderParams<T> {
    pub w: [Tensor<T>; 3],
    pub b: [Tensor<T>; 3],
}

impl<T: Real> AuxEncoderParams<T> {
    pub fn zeros() -> Self {
        Self {
            w: [
                Tensor::zeros(&[AUX_INPUT_DIM, AUX_HIDDEN]),
                Tensor::zeros(&[AUX_HIDDEN, AUX_HIDDEN]),
                Tensor::zeros(&[AUX_HIDDEN, AUX_DIM]),
            ],
            b: [
                Tensor::zeros(&[AUX_HIDDEN]),
                Tensor::zeros(&[AUX_HIDDEN]),
                Tensor::zeros(&[AUX_DIM]),
            ],
        }
    }

    pub fn init(rng: &mut ChaCha8Rng) -> Self {
        let mut p = Self::zeros();
        for w in p.w.iter_mut() {
            *w = truncated_normal(&w.shape, INIT_STD, rng);
        }
        p
    }
}

impl<T: Real> ParamSet<T> for AuxEncoderParams<T> {
    fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for i in 0..3 {
            out.push((format!("aux.layer{i}.weight"), &self.w[i]));
            out.push((format!("aux.layer{i}.bias"), &self.b[i]));
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let [w0, w1, w2] = &mut self.w;
        let [b0, b1, b2] = &mut self.b;
        vec![w0, b0, w1, b1, w2, b2]
    }
}

/// Activations of each aux layer, input first.
#[derive(Debug, Clone)]
pub struct AuxCache<T> {
    acts: Vec<Vec<T>>,
}

pub fn encode_aux<T: Real>(aux: &AuxFeatures, params: &AuxEncoderParams<T>) -> (Vec<T>, AuxCache<T>) {
    let input: Vec<T> = aux.input_vector().iter().map(|v| T::from_f64_lossy(*v)).collect();
    let mut acts = vec![input];
    for i in 0..3 {
        let x = acts.last().expect("non-empty");
        let n = params.w[i].cols();
        let mut y = vec![T::zero(); n];
        matmul(x, Op::N, &params.w[i].data, Op::N, 1, x.len(), n, &mut y, false);
        for (v, b) in y.iter_mut().zip(&params.b[i].data) {
            *v = (*v + *b).tanh();
        }
        acts.push(y);
    }
    let out = acts.last().expect("three layers").clone();
    (out, AuxCache { acts })
}

fn aux_backward<T: Real>(
    params: &AuxEncoderParams<T>,
    cache: &AuxCache<T>,
    d_out: &[T],
    grads: &mut AuxEncoderParams<T>,
) {
    let mut d = d_out.to_vec();
    for i in (0..3).rev() {
        let y = &cache.acts[i + 1];
        let x = &cache.acts[i];
        let dpre: Vec<T> = d.iter().zip(y).map(|(g, y)| *g * (T::one() - *y * *y)).collect();
        let (k, n) = (x.len(), dpre.len());
        matmul(x, Op::T, &dpre, Op::N, k, 1, n, &mut grads.w[i].data, true);
        for (g, v) in grads.b[i].data.iter_mut().zip(&dpre) {
            *g = *g + *v;
        }
        if i > 0 {
            let mut dx = vec![T::zero(); k];
            matmul(&params.w[i].data, Op::N, &dpre, Op::N, k, n, 1, &mut dx, false);
            d = dx;
        }
    }
}

/// Affine map `feature_dim → n_classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Real> ClassifierHead<T> {
    pub fn zeros(feature_dim: usize, n_classes: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[feature_dim, n_classes]),
            bias: Tensor::zeros(&[n_classes]),
        }
    }

    pub fn init(feature_dim: usize, n_classes: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            weight: truncated_normal(&[feature_dim, n_classes], INIT_STD, rng),
            bias: Tensor::zeros(&[n_classes]),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn n_classes(&self) -> usize {
        self.bias.len()
    }

    pub fn logits(&self, features: &[T]) -> Result<Vec<T>> {
        if features.len() != self.feature_dim() {
            return Err(Error::Dimension {
                expected: self.feature_dim(),
                actual: features.len(),
            });
        }
        let n = self.n_classes();
        let mut out = self.bias.data.clone();
        matmul(features, Op::N, &self.weight.data, Op::N, 1, features.len(), n, &mut out, true);
        Ok(out)
    }
}

impl<T: Real> ParamSet<T> for ClassifierHead<T> {
    fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        vec![
            ("head.weight".into(), &self.weight),
            ("head.bias".into(), &self.bias),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

pub fn classify<T: Real>(pooled: &[T], head: &ClassifierHead<T>) -> Result<Vec<T>> {
    let mut p = head.logits(pooled)?;
    softmax_in_place(&mut p);
    Ok(p)
}

pub fn classify_with_aux<T: Real>(pooled: &[T], aux_vec: &[T], head: &ClassifierHead<T>) -> Result<Vec<T>> {
    if aux_vec.len() != AUX_DIM {
        return Err(Error::Dimension {
            expected: AUX_DIM,
            actual: aux_vec.len(),
        });
    }
    let features: Vec<T> = pooled.iter().chain(aux_vec).copied().collect();
    classify(&features, head)
}

/// `−ln p[gold]` and its gradient with respect to the logits, `p − onehot(gold)`.
pub fn cls_loss<T: Real>(probs: &[T], gold: usize) -> Result<(f64, Vec<T>)> {
    if gold >= probs.len() {
        return Err(Error::OutOfRange {
            what: "gold label",
            index: gold,
            limit: probs.len(),
        });
    }
    let p = probs[gold].to_f64().unwrap_or(0.0).max(f64::MIN_POSITIVE);
    let mut grad = probs.to_vec();
    grad[gold] = grad[gold] - T::one();
    Ok((-p.ln(), grad))
}

/// Bias of the masked-token decoder; its weight is the token embedding matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MlmHead<T> {
    pub bias: Tensor<T>,
}

impl<T: Real> ParamSet<T> for MlmHead<T> {
    fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        vec![("mlm.bias".into(), &self.bias)]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![&mut self.bias]
    }
}

/// Sum of masked-position cross-entropies. When `grads` is given, accumulates
/// `grad_scale` times the gradient into the decoder weight and bias and
/// returns the gradient with respect to `hidden`.
fn mlm_sum<T: Real>(
    hidden: &Tensor<T>,
    targets: &[Option<u32>],
    token_emb: &Tensor<T>,
    head: &MlmHead<T>,
    grads: Option<(&mut Tensor<T>, &mut Tensor<T>, T)>,
) -> Result<(f64, usize, Option<Vec<T>>)> {
    let h = hidden.cols();
    let v = token_emb.rows();
    if targets.len() != hidden.rows() {
        return Err(Error::Dimension {
            expected: hidden.rows(),
            actual: targets.len(),
        });
    }
    let picked: Vec<(usize, usize)> = targets
        .iter()
        .enumerate()
        .filter_map(|(i, t)| t.map(|id| (i, id as usize)))
        .collect();
    if let Some(&(_, bad)) = picked.iter().find(|(_, id)| *id >= v) {
        return Err(Error::OutOfRange {
            what: "target id",
            index: bad,
            limit: v,
        });
    }
    let m = picked.len();
    if m == 0 {
        return Ok((0.0, 0, grads.map(|_| vec![T::zero(); hidden.len()])));
    }
    let mut hm = Vec::with_capacity(m * h);
    for &(pos, _) in &picked {
        hm.extend_from_slice(hidden.row(pos));
    }
    let mut logits = vec![T::zero(); m * v];
    matmul(&hm, Op::N, &token_emb.data, Op::T, m, h, v, &mut logits, false);
    let mut loss = 0.0;
    for (r, &(_, target)) in picked.iter().enumerate() {
        let row = &mut logits[r * v..(r + 1) * v];
        for (x, b) in row.iter_mut().zip(&head.bias.data) {
            *x = *x + *b;
        }
        softmax_in_place(row);
        loss -= row[target].to_f64().unwrap_or(0.0).max(f64::MIN_POSITIVE).ln();
        row[target] = row[target] - T::one();
    }
    let Some((d_emb, d_bias, scale)) = grads else {
        return Ok((loss, m, None));
    };
    logits.iter_mut().for_each(|x| *x = *x * scale);
    matmul(&logits, Op::T, &hm, Op::N, v, m, h, &mut d_emb.data, true);
    crate::tensor::accumulate_col_sums(&mut d_bias.data, &logits);
    let mut dhm = vec![T::zero(); m * h];
    matmul(&logits, Op::N, &token_emb.data, Op::N, m, v, h, &mut dhm, false);
    let mut d_hidden = vec![T::zero(); hidden.len()];
    for (r, &(pos, _)) in picked.iter().enumerate() {
        d_hidden[pos * h..(pos + 1) * h].copy_from_slice(&dhm[r * h..(r + 1) * h]);
    }
    Ok((loss, m, Some(d_hidden)))
}

/// Mean cross-entropy over positions whose target is `Some`; zero when none are.
pub fn mlm_loss<T: Real>(
    hidden: &Tensor<T>,
    targets: &[Option<u32>],
    token_emb: &Tensor<T>,
    head: &MlmHead<T>,
) -> Result<f64> {
    let (sum, n, _) = mlm_sum(hidden, targets, token_emb, head, None)?;
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}

/// Encoder plus tied masked-token decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct MlmModel<T> {
    pub encoder: EncoderParams<T>,
    pub head: MlmHead<T>,
}

impl<T: Real> ParamSet<T> for MlmModel<T> {
    fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = self.encoder.named_tensors();
        out.extend(self.head.named_tensors());
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = self.encoder.tensors_mut();
        out.extend(self.head.tensors_mut());
        out
    }
}

impl<T: Real> MlmModel<T> {
    pub fn new(encoder: EncoderParams<T>) -> Self {
        let v = encoder.token_emb.rows();
        Self {
            encoder,
            head: MlmHead {
                bias: Tensor::zeros(&[v]),
            },
        }
    }

    /// Summed loss over masked positions and the number of them; gradients of
    /// `grad_scale · sum` are accumulated into `grads`.
    pub fn loss_and_grad(
        &self,
        config: &ModelConfig,
        seq: &TokenSequence,
        targets: &[Option<u32>],
        rng: Option<&mut ChaCha8Rng>,
        grads: &mut Self,
        grad_scale: T,
    ) -> Result<(f64, usize)> {
        if targets.iter().all(Option::is_none) {
            return Ok((0.0, 0));
        }
        let out = forward(&self.encoder, config, seq, rng, true)?;
        let (sum, n, dh) = mlm_sum(
            &out.hidden_states,
            targets,
            &self.encoder.token_emb,
            &self.head,
            Some((&mut grads.encoder.token_emb, &mut grads.head.bias, grad_scale)),
        )?;
        let dh = dh.expect("gradients requested");
        backward(&self.encoder, config, &out, Some(&dh), None, &mut grads.encoder)?;
        Ok((sum, n))
    }

    pub fn loss(&self, config: &ModelConfig, seq: &TokenSequence, targets: &[Option<u32>]) -> Result<(f64, usize)> {
        let out = forward(&self.encoder, config, seq, None, false)?;
        let (sum, n, _) = mlm_sum(&out.hidden_states, targets, &self.encoder.token_emb, &self.head, None)?;
        Ok((sum, n))
    }

    /// Top-1 decoder prediction at every position.
    pub fn predict(&self, config: &ModelConfig, seq: &TokenSequence) -> Result<Vec<u32>> {
        let out = forward(&self.encoder, config, seq, None, false)?;
        let (l, h, v) = (out.hidden_states.rows(), config.hidden_dim, config.vocab_size);
        let mut logits = vec![T::zero(); l * v];
        matmul(&out.hidden_states.data, Op::N, &self.encoder.token_emb.data, Op::T, l, h, v, &mut logits, false);
        Ok(logits
            .chunks(v)
            .map(|row| {
                let scored: Vec<T> = row.iter().zip(&self.head.bias.data).map(|(a, b)| *a + *b).collect();
                crate::tensor::argmax(&scored) as u32
            })
            .collect())
    }
}

/// What a classifier predicts and how its input is built.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub task: String,
    pub class_names: Vec<String>,
    pub use_aux: bool,
    /// Token budget including CLS and SEP.
    pub seq_len: usize,
}

impl HeadSpec {
    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }
}

/// Encoder, optional aux encoder, and a classifier over `[pooled ⧺ aux]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel<T> {
    pub encoder: EncoderParams<T>,
    pub aux: Option<AuxEncoderParams<T>>,
    pub head: ClassifierHead<T>,
}

impl<T: Real> ParamSet<T> for ClassifierModel<T> {
    fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = self.encoder.named_tensors();
        if let Some(a) = &self.aux {
            out.extend(a.named_tensors());
        }
        out.extend(prefixed("cls", self.head.named_tensors()));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = self.encoder.tensors_mut();
        if let Some(a) = &mut self.aux {
            out.extend(a.tensors_mut());
        }
        out.extend(self.head.tensors_mut());
        out
    }
}

impl<T: Real> ClassifierModel<T> {
    /// Fresh head (and aux encoder) on top of `encoder`, seeded by `seed`.
    pub fn new(encoder: EncoderParams<T>, n_classes: usize, use_aux: bool, seed: u64) -> Result<Self> {
        if n_classes < 2 {
            return Err(Error::Config(format!("a classifier needs at least 2 classes, got {n_classes}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = encoder.pooler_b.len();
        let aux = use_aux.then(|| AuxEncoderParams::init(&mut rng));
        let feature_dim = h + if use_aux { AUX_DIM } else { 0 };
        Ok(Self {
            encoder,
            aux,
            head: ClassifierHead::init(feature_dim, n_classes, &mut rng),
        })
    }

    /// Same structure with every tensor zeroed; a load target.
    pub fn skeleton(config: &ModelConfig, n_classes: usize, use_aux: bool) -> Self {
        let feature_dim = config.hidden_dim + if use_aux { AUX_DIM } else { 0 };
        Self {
            encoder: EncoderParams::skeleton(config),
            aux: use_aux.then(AuxEncoderParams::zeros),
            head: ClassifierHead::zeros(feature_dim, n_classes),
        }
    }

    pub fn uses_aux(&self) -> bool {
        self.aux.is_some()
    }

    pub fn n_classes(&self) -> usize {
        self.head.n_classes()
    }

    fn check_aux(&self, aux: Option<&AuxFeatures>) -> Result<()> {
        match (&self.aux, aux) {
            (Some(_), None) => Err(Error::InvalidInput("model expects aux features".into())),
            (None, Some(_)) => Err(Error::InvalidInput("model has no aux encoder".into())),
            _ => Ok(()),
        }
    }

    pub fn predict_proba(
        &self,
        config: &ModelConfig,
        seq: &TokenSequence,
        aux: Option<&AuxFeatures>,
    ) -> Result<Vec<T>> {
        self.check_aux(aux)?;
        let out = forward(&self.encoder, config, seq, None, false)?;
        match (&self.aux, aux) {
            (Some(p), Some(a)) => classify_with_aux(&out.pooled, &encode_aux(a, p).0, &self.head),
            _ => classify(&out.pooled, &self.head),
        }
    }

    /// Cross-entropy on one example; `grad_scale` times its gradient is
    /// accumulated into `grads`.
    #[allow(clippy::too_many_arguments)]
    pub fn loss_and_grad(
        &self,
        config: &ModelConfig,
        seq: &TokenSequence,
        aux: Option<&AuxFeatures>,
        gold: usize,
        rng: Option<&mut ChaCha8Rng>,
        grads: &mut Self,
        grad_scale: T,
    ) -> Result<f64> {
        self.check_aux(aux)?;
        let out = forward(&self.encoder, config, seq, rng, true)?;
        let h = out.pooled.len();
        let aux_enc = match (&self.aux, aux) {
            (Some(p), Some(a)) => Some(encode_aux(a, p)),
            _ => None,
        };
        let mut features = out.pooled.clone();
        if let Some((v, _)) = &aux_enc {
            features.extend_from_slice(v);
        }
        let probs = classify(&features, &self.head)?;
        let (loss, mut dlogits) = cls_loss(&probs, gold)?;
        dlogits.iter_mut().for_each(|d| *d = *d * grad_scale);

        let n = self.head.n_classes();
        let f = features.len();
        matmul(&features, Op::T, &dlogits, Op::N, f, 1, n, &mut grads.head.weight.data, true);
        for (g, d) in grads.head.bias.data.iter_mut().zip(&dlogits) {
            *g = *g + *d;
        }
        let mut dfeat = vec![T::zero(); f];
        matmul(&self.head.weight.data, Op::N, &dlogits, Op::N, f, n, 1, &mut dfeat, false);
        if let (Some((_, cache)), Some(p), Some(g)) = (&aux_enc, &self.aux, &mut grads.aux) {
            aux_backward(p, cache, &dfeat[h..], g);
        }
        backward(&self.encoder, config, &out, None, Some(&dfeat[..h]), &mut grads.encoder)?;
        Ok(loss)
    }

    pub fn loss(&self, config: &ModelConfig, seq: &TokenSequence, aux: Option<&AuxFeatures>, gold: usize) -> Result<f64> {
        let probs = self.predict_proba(config, seq, aux)?;
        Ok(cls_loss(&probs, gold)?.0)
    }
}
