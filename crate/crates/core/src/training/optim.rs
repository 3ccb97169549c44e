//! Adam with decoupled weight decay and the linear warmup/decay schedule.

use crate::params::{decays, ParamSet};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-6;

pub fn warmup_steps(total: usize, warmup_fraction: f64) -> usize {
    (total as f64 * warmup_fraction).ceil() as usize
}

/// Learning rate applied at 0-based update `step` of `total`: rises linearly
/// from 0 to `peak` at the warmup boundary, then falls linearly to 0 at `total`.
pub fn lr_at(step: usize, total: usize, warmup_fraction: f64, peak: f64) -> f64 {
    let warm = warmup_steps(total, warmup_fraction);
    if step < warm {
        peak * step as f64 / warm as f64
    } else if step >= total {
        0.0
    } else {
        peak * (total - step) as f64 / (total - warm) as f64
    }
}

#[derive(Debug, Clone)]
pub struct AdamW<P> {
    m: P,
    v: P,
    decay: Vec<bool>,
    weight_decay: f64,
    t: i32,
}

impl<P: ParamSet<f32>> AdamW<P> {
    pub fn new(params: &P, weight_decay: f64) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            decay: params.named_tensors().iter().map(|(n, _)| decays(n)).collect(),
            weight_decay,
            t: 0,
        }
    }

    /// Names of tensors that receive weight decay.
    pub fn decayed_names(&self) -> Vec<String> {
        self.m
            .named_tensors()
            .into_iter()
            .zip(&self.decay)
            .filter(|(_, d)| **d)
            .map(|((n, _), _)| n)
            .collect()
    }

    pub fn steps_taken(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, params: &mut P, grads: &P, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.t);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.t);
        let g_all: Vec<&[f32]> = grads.named_tensors().into_iter().map(|(_, t)| t.data.as_slice()).collect();
        let ms = self.m.tensors_mut();
        let vs = self.v.tensors_mut();
        let (b1, b2) = (ADAM_BETA1 as f32, ADAM_BETA2 as f32);
        for ((((p, g), m), v), decay) in params.tensors_mut().into_iter().zip(g_all).zip(ms).zip(vs).zip(&self.decay) {
            let shrink = if *decay { (1.0 - lr * self.weight_decay) as f32 } else { 1.0 };
            for i in 0..p.data.len() {
                let gi = g[i];
                m.data[i] = b1 * m.data[i] + (1.0 - b1) * gi;
                v.data[i] = b2 * v.data[i] + (1.0 - b2) * gi * gi;
                let mhat = m.data[i] as f64 / bc1;
                let vhat = v.data[i] as f64 / bc2;
                p.data[i] = p.data[i] * shrink - (lr * mhat / (vhat.sqrt() + ADAM_EPS)) as f32;
            }
        }
    }
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`; returns the prior norm.
pub fn clip_global_norm<P: ParamSet<f32>>(grads: &mut P, max_norm: f64) -> f64 {
    let norm = grads
        .named_tensors()
        .iter()
        .flat_map(|(_, t)| t.data.iter())
        .map(|x| (*x as f64) * (*x as f64))
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        grads.scale((max_norm / norm) as f32);
    }
    norm
}
