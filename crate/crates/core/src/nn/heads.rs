use rand::Rng;
use rand_distr::StandardNormal;

use super::DenseNet;
use crate::error::{invalid, Result};

pub const LOG_STD_MIN: f64 = -6.907_755_278_982_137; // ln 1e-3
pub const LOG_STD_MAX: f64 = 0.0;
pub const LOG_STD_INIT: f64 = -std::f64::consts::LN_2; // ln 0.5

const HALF_LN_TAU: f64 = 0.918_938_533_204_672_7; // ½ ln 2π

/// Entropy of a categorical distribution (nats).
pub fn categorical_entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|x| x * x.ln()).sum::<f64>()
}

/// Draw an index from `probs`; returns `(index, log p[index], entropy)`.
pub fn categorical_logprob_sample<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> Result<(usize, f64, f64)> {
    let total: f64 = probs.iter().sum();
    if probs.is_empty() || probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) || (total - 1.0).abs() > 1e-9 {
        return Err(invalid(format!("not a probability vector (sum {total})")));
    }
    let u: f64 = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut idx = probs.len() - 1;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc && p > 0.0 {
            idx = i;
            break;
        }
    }
    while probs[idx] == 0.0 {
        idx -= 1;
    }
    Ok((idx, probs[idx].ln(), categorical_entropy(probs)))
}

/// Log-density of a diagonal Gaussian.
pub fn gaussian_log_prob(action: &[f64], mean: &[f64], log_std: &[f64]) -> f64 {
    action
        .iter()
        .zip(mean)
        .zip(log_std)
        .map(|((a, m), s)| {
            let z = (a - m) / s.exp();
            -0.5 * z * z - s - HALF_LN_TAU
        })
        .sum()
}

/// Entropy of a diagonal Gaussian: `Σ (½ + ½ ln 2π + log σ)`.
pub fn gaussian_entropy(log_std: &[f64]) -> f64 {
    log_std.iter().map(|s| 0.5 + HALF_LN_TAU + s).sum()
}

/// Draw from a diagonal Gaussian; returns `(action, log-density, entropy)`.
pub fn gaussian_logprob_sample<R: Rng + ?Sized>(mean: &[f64], log_std: &[f64], rng: &mut R) -> (Vec<f64>, f64, f64) {
    let action: Vec<f64> = mean
        .iter()
        .zip(log_std)
        .map(|(m, s)| m + s.exp() * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let lp = gaussian_log_prob(&action, mean, log_std);
    (action, lp, gaussian_entropy(log_std))
}

/// Network mean plus a state-independent log-std vector.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianActor {
    pub net: DenseNet,
    pub log_std: Vec<f64>,
}

impl GaussianActor {
    pub fn new(net: DenseNet) -> Self {
        let d = net.output_dim();
        Self { net, log_std: vec![LOG_STD_INIT; d] }
    }

    pub fn clamp_log_std(&mut self) {
        for s in &mut self.log_std {
            *s = s.clamp(LOG_STD_MIN, LOG_STD_MAX);
        }
    }

    pub fn num_params(&self) -> usize {
        self.net.num_params() + self.log_std.len()
    }

    /// Network parameters followed by the log-std vector.
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.net.params();
        p.extend(&self.log_std);
        p
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        let n = self.net.num_params();
        if p.len() != n + self.log_std.len() {
            return Err(crate::error::Error::ShapeMismatch {
                context: "gaussian actor parameters",
                expected: n + self.log_std.len(),
                got: p.len(),
            });
        }
        self.net.set_params(&p[..n])?;
        self.log_std.copy_from_slice(&p[n..]);
        self.clamp_log_std();
        Ok(())
    }

    pub fn param_path(&self, idx: usize) -> String {
        let n = self.net.num_params();
        if idx < n {
            self.net.param_path(idx)
        } else {
            format!("log_std[{}]", idx - n)
        }
    }
}
