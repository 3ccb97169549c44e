//! Post-layer-norm transformer encoder with a Tanh pooler over the first token,
//! analytic backward pass and a central-difference gradient checker.

mod gradcheck;
mod layers;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{decays, truncated_normal, ParamSet, INIT_STD};
use crate::tensor::{Real, Tensor};

pub use gradcheck::{finite_difference_check, gradient_errors, GradCheckReport, TensorError};
pub use layers::{backward, forward, forward_batch, EncoderOutput, ForwardCache};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    /// Positional capacity; inputs may be shorter.
    pub max_seq_len: usize,
    pub hidden_dim: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ff_dim: usize,
    pub dropout_rate: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 4000,
            max_seq_len: 32,
            hidden_dim: 128,
            n_layers: 2,
            n_heads: 4,
            ff_dim: 512,
            dropout_rate: 0.1,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 || self.n_heads == 0 || self.hidden_dim % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "hidden_dim {} must be a positive multiple of n_heads {}",
                self.hidden_dim, self.n_heads
            )));
        }
        if self.max_seq_len < 2 {
            return Err(Error::Config("max_seq_len must be at least 2".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config("dropout_rate must lie in [0, 1)".into()));
        }
        if self.vocab_size <= crate::tokenizer::SPECIAL_TOKENS.len() || self.ff_dim == 0 {
            return Err(Error::Config("vocab_size and ff_dim must be positive".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.n_heads
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub query_w: Tensor<T>,
    pub query_b: Tensor<T>,
    pub key_w: Tensor<T>,
    pub key_b: Tensor<T>,
    pub value_w: Tensor<T>,
    pub value_b: Tensor<T>,
    pub out_w: Tensor<T>,
    pub out_b: Tensor<T>,
    pub ln1_gamma: Tensor<T>,
    pub ln1_beta: Tensor<T>,
    pub ff1_w: Tensor<T>,
    pub ff1_b: Tensor<T>,
    pub ff2_w: Tensor<T>,
    pub ff2_b: Tensor<T>,
    pub ln2_gamma: Tensor<T>,
    pub ln2_beta: Tensor<T>,
}

impl<T: Real> LayerParams<T> {
    fn named(&self) -> Vec<(String, &Tensor<T>)> {
        vec![
            ("attn.query.weight".into(), &self.query_w),
            ("attn.query.bias".into(), &self.query_b),
            ("attn.key.weight".into(), &self.key_w),
            ("attn.key.bias".into(), &self.key_b),
            ("attn.value.weight".into(), &self.value_w),
            ("attn.value.bias".into(), &self.value_b),
            ("attn.output.weight".into(), &self.out_w),
            ("attn.output.bias".into(), &self.out_b),
            ("attn.ln.gamma".into(), &self.ln1_gamma),
            ("attn.ln.beta".into(), &self.ln1_beta),
            ("ffn.intermediate.weight".into(), &self.ff1_w),
            ("ffn.intermediate.bias".into(), &self.ff1_b),
            ("ffn.output.weight".into(), &self.ff2_w),
            ("ffn.output.bias".into(), &self.ff2_b),
            ("ffn.ln.gamma".into(), &self.ln2_gamma),
            ("ffn.ln.beta".into(), &self.ln2_beta),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![
            &mut self.query_w,
            &mut self.query_b,
            &mut self.key_w,
            &mut self.key_b,
            &mut self.value_w,
            &mut self.value_b,
            &mut self.out_w,
            &mut self.out_b,
            &mut self.ln1_gamma,
            &mut self.ln1_beta,
            &mut self.ff1_w,
            &mut self.ff1_b,
            &mut self.ff2_w,
            &mut self.ff2_b,
            &mut self.ln2_gamma,
            &mut self.ln2_beta,
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams<T> {
    pub token_emb: Tensor<T>,
    pub position_emb: Tensor<T>,
    pub emb_ln_gamma: Tensor<T>,
    pub emb_ln_beta: Tensor<T>,
    pub layers: Vec<LayerParams<T>>,
    pub pooler_w: Tensor<T>,
    pub pooler_b: Tensor<T>,
}

impl<T: Real> ParamSet<T> for EncoderParams<T> {
    fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out: Vec<(String, &Tensor<T>)> = vec![
            ("encoder.embeddings.token".into(), &self.token_emb),
            ("encoder.embeddings.position".into(), &self.position_emb),
            ("encoder.embeddings.ln.gamma".into(), &self.emb_ln_gamma),
            ("encoder.embeddings.ln.beta".into(), &self.emb_ln_beta),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            out.extend(crate::params::prefixed(&format!("encoder.layer.{i}"), l.named()));
        }
        out.push(("encoder.pooler.weight".into(), &self.pooler_w));
        out.push(("encoder.pooler.bias".into(), &self.pooler_b));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = vec![
            &mut self.token_emb,
            &mut self.position_emb,
            &mut self.emb_ln_gamma,
            &mut self.emb_ln_beta,
        ];
        for l in self.layers.iter_mut() {
            out.extend(l.tensors_mut());
        }
        out.push(&mut self.pooler_w);
        out.push(&mut self.pooler_b);
        out
    }
}

impl<T: Real> EncoderParams<T> {
    /// All-zero parameters with layer-norm scales at one; used as a load target.
    pub fn skeleton(config: &ModelConfig) -> Self {
        let h = config.hidden_dim;
        let f = config.ff_dim;
        let layer = || LayerParams {
            query_w: Tensor::zeros(&[h, h]),
            query_b: Tensor::zeros(&[h]),
            key_w: Tensor::zeros(&[h, h]),
            key_b: Tensor::zeros(&[h]),
            value_w: Tensor::zeros(&[h, h]),
            value_b: Tensor::zeros(&[h]),
            out_w: Tensor::zeros(&[h, h]),
            out_b: Tensor::zeros(&[h]),
            ln1_gamma: Tensor::filled(&[h], T::one()),
            ln1_beta: Tensor::zeros(&[h]),
            ff1_w: Tensor::zeros(&[h, f]),
            ff1_b: Tensor::zeros(&[f]),
            ff2_w: Tensor::zeros(&[f, h]),
            ff2_b: Tensor::zeros(&[h]),
            ln2_gamma: Tensor::filled(&[h], T::one()),
            ln2_beta: Tensor::zeros(&[h]),
        };
        EncoderParams {
            token_emb: Tensor::zeros(&[config.vocab_size, h]),
            position_emb: Tensor::zeros(&[config.max_seq_len, h]),
            emb_ln_gamma: Tensor::filled(&[h], T::one()),
            emb_ln_beta: Tensor::zeros(&[h]),
            layers: (0..config.n_layers).map(|_| layer()).collect(),
            pooler_w: Tensor::zeros(&[h, h]),
            pooler_b: Tensor::zeros(&[h]),
        }
    }
}

/// Weights ~ N(0, 0.02²) truncated at ±2σ; biases zero; layer-norm scale one.
pub fn init_params<T: Real>(config: &ModelConfig) -> Result<EncoderParams<T>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = EncoderParams::skeleton(config);
    let names: Vec<String> = params.named_tensors().into_iter().map(|(n, _)| n).collect();
    for (name, t) in names.iter().zip(params.tensors_mut()) {
        if decays(name) {
            *t = truncated_normal(&t.shape, INIT_STD, &mut rng);
        }
    }
    Ok(params)
}
