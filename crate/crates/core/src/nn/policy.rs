//! Tanh-squashed diagonal Gaussian over a batch of actor outputs.
//!
//! The actor network emits `2·|A|` values per row: the first `|A|` are the
//! pre-squash means, the rest are raw log standard deviations which are
//! clamped into `[LOG_STD_MIN, LOG_STD_MAX]`.

use rand_distr::{Distribution, StandardNormal};

use crate::error::{ensure_finite, Error, Result};
use crate::rng::Rng;

pub const LOG_STD_MIN: f64 = -10.0;
pub const LOG_STD_MAX: f64 = 2.0;

const HALF_LOG_TWO_PI: f64 = 0.918_938_533_204_672_7;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPolicyHead {
    action_dim: usize,
    rows: usize,
    mean: Vec<f64>,
    log_std: Vec<f64>,
    // false where the raw log-std was clamped (zero gradient there)
    in_range: Vec<bool>,
}

/// A reparameterized draw: `action = tanh(mean + std·noise)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SquashedSample {
    pub actions: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub noise: Vec<f64>,
    pub pre_tanh: Vec<f64>,
}

/// `ln(1 - tanh(u)^2)` without cancellation for large `|u|`.
pub fn log_one_minus_tanh_sq(u: f64) -> f64 {
    2.0 * (std::f64::consts::LN_2 - u - softplus(-2.0 * u))
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl GaussianPolicyHead {
    /// Splits raw actor output (`rows × 2·action_dim`) into mean and clamped log-std.
    pub fn from_raw(raw: &[f64], action_dim: usize) -> Result<Self> {
        if action_dim == 0 || !raw.len().is_multiple_of(2 * action_dim) || raw.is_empty() {
            return Err(Error::InvalidInput(format!(
                "actor output of {} values cannot be split into mean/log-std of dimension {action_dim}",
                raw.len()
            )));
        }
        ensure_finite(raw, "actor output")?;
        let rows = raw.len() / (2 * action_dim);
        let mut mean = Vec::with_capacity(rows * action_dim);
        let mut log_std = Vec::with_capacity(rows * action_dim);
        let mut in_range = Vec::with_capacity(rows * action_dim);
        for row in raw.chunks_exact(2 * action_dim) {
            mean.extend_from_slice(&row[..action_dim]);
            for &l in &row[action_dim..] {
                log_std.push(l.clamp(LOG_STD_MIN, LOG_STD_MAX));
                in_range.push((LOG_STD_MIN..=LOG_STD_MAX).contains(&l));
            }
        }
        Ok(Self { action_dim, rows, mean, log_std, in_range })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn log_std(&self) -> &[f64] {
        &self.log_std
    }

    /// `tanh(mean)`, the evaluation-mode action.
    pub fn deterministic(&self) -> Vec<f64> {
        self.mean.iter().map(|m| m.tanh()).collect()
    }

    pub fn sample(&self, rng: &mut Rng) -> SquashedSample {
        let noise: Vec<f64> = (0..self.mean.len()).map(|_| StandardNormal.sample(rng)).collect();
        self.sample_with_noise(noise)
    }

    /// Squashed sample for given standard-normal noise, with the
    /// change-of-variables log-density summed over action dimensions.
    pub fn sample_with_noise(&self, noise: Vec<f64>) -> SquashedSample {
        assert_eq!(noise.len(), self.mean.len(), "noise shape");
        let mut actions = Vec::with_capacity(noise.len());
        let mut pre_tanh = Vec::with_capacity(noise.len());
        let mut log_probs = vec![0.0; self.rows];
        for (i, &z) in noise.iter().enumerate() {
            let u = self.mean[i] + self.log_std[i].exp() * z;
            pre_tanh.push(u);
            actions.push(u.tanh());
            log_probs[i / self.action_dim] +=
                -0.5 * z * z - self.log_std[i] - HALF_LOG_TWO_PI - log_one_minus_tanh_sq(u);
        }
        SquashedSample { actions, log_probs, noise, pre_tanh }
    }

    /// Back-propagates `d_actions` (`rows × |A|`) and `d_log_probs` (`rows`)
    /// through a sample to the raw actor output layout (`rows × 2·|A|`).
    pub fn backprop(&self, sample: &SquashedSample, d_actions: &[f64], d_log_probs: &[f64]) -> Vec<f64> {
        let a_dim = self.action_dim;
        let mut d_raw = vec![0.0; self.rows * 2 * a_dim];
        for i in 0..self.mean.len() {
            let (row, col) = (i / a_dim, i % a_dim);
            let a = sample.actions[i];
            let dlp = d_log_probs[row];
            // d logp / du = 2·tanh(u); d action / du = 1 - tanh(u)^2
            let du = d_actions[i] * (1.0 - a * a) + dlp * 2.0 * a;
            d_raw[row * 2 * a_dim + col] = du;
            if self.in_range[i] {
                let std = self.log_std[i].exp();
                d_raw[row * 2 * a_dim + a_dim + col] = du * std * sample.noise[i] - dlp;
            }
        }
        d_raw
    }
}
