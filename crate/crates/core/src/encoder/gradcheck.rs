//! Central-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::params::ParamSet;

#[derive(Debug, Clone, Serialize)]
pub struct TensorError {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub eps: f64,
    pub tensors: Vec<TensorError>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max)
    }

    pub fn failing(&self, tol: f64) -> Vec<String> {
        self.tensors
            .iter()
            .filter(|t| !(t.max_rel_error <= tol))
            .map(|t| t.name.clone())
            .collect()
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares `analytic` against `(L(θ+ε) − L(θ−ε)) / 2ε` on up to
/// `coords_per_tensor` randomly chosen coordinates of every tensor.
pub fn gradient_errors<P, F>(
    params: &P,
    analytic: &P,
    mut loss: F,
    eps: f64,
    coords_per_tensor: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    P: ParamSet<f64>,
    F: FnMut(&P) -> Result<f64>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grads = analytic.named_tensors();
    let names: Vec<(String, usize)> = params
        .named_tensors()
        .iter()
        .map(|(n, t)| (n.clone(), t.len()))
        .collect();
    if grads.len() != names.len() {
        return Err(Error::Dimension {
            expected: names.len(),
            actual: grads.len(),
        });
    }
    let mut probe = params.clone();
    let mut tensors = Vec::with_capacity(names.len());
    for (ti, (name, len)) in names.iter().enumerate() {
        let coords: Vec<usize> = if *len <= coords_per_tensor {
            (0..*len).collect()
        } else {
            sample(&mut rng, *len, coords_per_tensor).into_vec()
        };
        let mut worst: f64 = 0.0;
        for &j in &coords {
            let original = probe.tensors_mut()[ti].data[j];
            probe.tensors_mut()[ti].data[j] = original + eps;
            let plus = loss(&probe)?;
            probe.tensors_mut()[ti].data[j] = original - eps;
            let minus = loss(&probe)?;
            probe.tensors_mut()[ti].data[j] = original;
            let numeric = (plus - minus) / (2.0 * eps);
            let err = relative_error(grads[ti].1.data[j], numeric);
            worst = if err.is_nan() { f64::INFINITY } else { worst.max(err) };
        }
        tensors.push(TensorError {
            name: name.clone(),
            checked: coords.len(),
            max_rel_error: worst,
        });
    }
    Ok(GradCheckReport { eps, tensors })
}

/// Like [`gradient_errors`], but any tensor above `tol` is an error naming it.
pub fn finite_difference_check<P, F>(
    params: &P,
    analytic: &P,
    loss: F,
    eps: f64,
    tol: f64,
    coords_per_tensor: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    P: ParamSet<f64>,
    F: FnMut(&P) -> Result<f64>,
{
    let report = gradient_errors(params, analytic, loss, eps, coords_per_tensor, seed)?;
    let failing = report.failing(tol);
    if failing.is_empty() {
        Ok(report)
    } else {
        Err(Error::GradientCheck(failing))
    }
}
