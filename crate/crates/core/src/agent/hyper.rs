use serde::{Deserialize, Serialize};

/// Discount from its log-space parameterization: `gamma = 1 - exp(g)`.
pub fn gamma_from_g(g: f64) -> f64 {
    -g.exp_m1()
}

/// Inverse of [`gamma_from_g`].
pub fn g_from_gamma(gamma: f64) -> f64 {
    (1.0 - gamma).ln()
}

/// The five evolved settings of one learner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    /// Actor (and temperature) updates per training step.
    pub a: usize,
    /// Critic updates per training step.
    pub c: usize,
    /// Target-entropy coefficient: `H = h·(-|A|)`.
    pub h: f64,
    /// Action persistence.
    pub k: usize,
    /// Discount exponent: `gamma = 1 - exp(g)`, `g < 0`.
    pub g: f64,
}

impl HyperParams {
    pub fn gamma(&self) -> f64 {
        gamma_from_g(self.g)
    }

    pub fn target_entropy(&self, action_dim: usize) -> f64 {
        self.h * -(action_dim as f64)
    }

    /// The literature SAC setting: one update each, `H = -|A|`, `gamma = 0.99`, k = 1.
    pub fn sac_default() -> Self {
        Self { a: 1, c: 1, h: 1.0, k: 1, g: g_from_gamma(0.99) }
    }
}
