//! Named parameter collections shared by the encoder, heads, optimizer and checkpoints.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::{Real, Tensor};

/// A fixed, ordered set of named tensors. Gradients use the same type.
pub trait ParamSet<T: Real>: Clone {
    fn named_tensors(&self) -> Vec<(String, &Tensor<T>)>;

    /// Same order as [`ParamSet::named_tensors`].
    fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>>;

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.tensors_mut().into_iter().for_each(Tensor::fill_zero);
        z
    }

    fn num_params(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    fn add_assign(&mut self, other: &Self) {
        let src: Vec<&Tensor<T>> = other.named_tensors().into_iter().map(|(_, t)| t).collect();
        for (dst, s) in self.tensors_mut().into_iter().zip(src) {
            dst.add_assign(s);
        }
    }

    fn scale(&mut self, s: T) {
        self.tensors_mut().into_iter().for_each(|t| t.scale(s));
    }

    fn all_finite(&self) -> bool {
        self.named_tensors().iter().all(|(_, t)| t.all_finite())
    }
}

/// Prefixes every name produced by `inner`.
pub fn prefixed<'a, T>(
    prefix: &str,
    inner: Vec<(String, &'a Tensor<T>)>,
) -> Vec<(String, &'a Tensor<T>)> {
    inner
        .into_iter()
        .map(|(n, t)| (format!("{prefix}.{n}"), t))
        .collect()
}

/// Normal(0, std²) truncated at ±2 std by rejection.
pub fn truncated_normal<T: Real, R: Rng>(shape: &[usize], std: f64, rng: &mut R) -> Tensor<T> {
    let normal = Normal::new(0.0, std).expect("positive std");
    let len = shape.iter().product();
    let data = (0..len)
        .map(|_| loop {
            let v: f64 = normal.sample(rng);
            if v.abs() <= 2.0 * std {
                break T::from_f64_lossy(v);
            }
        })
        .collect();
    Tensor::from_vec(shape, data)
}

/// Standard deviation used for every weight matrix at initialization.
pub const INIT_STD: f64 = 0.02;

/// True for parameters that receive decoupled weight decay: weight matrices
/// and embeddings, never biases or layer-norm scales/offsets.
pub fn decays(name: &str) -> bool {
    name.ends_with(".weight") || (name.contains(".embeddings.") && !name.contains(".ln."))
}
