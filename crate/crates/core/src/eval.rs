//! Deterministic policy evaluation shared by fitness, baselines and sweeps.

use crate::agent::Agent;
use crate::envs::{EnvFactory, Environment, PersistenceWrapper};
use crate::error::{Error, Result};

/// Anything that maps an observation (with persistence slot) to an action.
pub trait Policy: Sync {
    fn action(&self, obs: &[f64]) -> Result<Vec<f64>>;
}

impl Policy for Agent {
    fn action(&self, obs: &[f64]) -> Result<Vec<f64>> {
        self.deterministic_action(obs)
    }
}

impl<F: Fn(&[f64]) -> Result<Vec<f64>> + Sync> Policy for F {
    fn action(&self, obs: &[f64]) -> Result<Vec<f64>> {
        self(obs)
    }
}

/// Undiscounted return of one episode from reset until termination or the
/// wrapper's step budget runs out.
pub fn run_episode<P: Policy + ?Sized, E: Environment>(policy: &P, env: &mut PersistenceWrapper<E>) -> Result<f64> {
    let mut obs = env.reset();
    let mut total = 0.0;
    while env.is_active() {
        let action = policy.action(&obs)?;
        let step = env.step(&action)?;
        total += step.transition.total_reward();
        obs = step.transition.next_state;
    }
    if !total.is_finite() {
        return Err(Error::Numeric(format!("episode return {total} is not finite")));
    }
    Ok(total)
}

/// Returns of `episodes` consecutive episodes on one wrapped environment.
pub fn episode_returns<P: Policy + ?Sized, E: Environment>(
    policy: &P,
    env: &mut PersistenceWrapper<E>,
    episodes: usize,
) -> Result<Vec<f64>> {
    (0..episodes).map(|_| run_episode(policy, env)).collect()
}

/// Evaluation settings for one persistence value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalSpec {
    pub k: usize,
    pub k_max: usize,
    /// Misleading mode: the persistence slot reports this value instead of `k`.
    pub reported_k: Option<usize>,
    pub episodes: usize,
    pub env_seed: u64,
}

/// Returns of deterministic episodes on a fresh environment built from `factory`.
pub fn evaluate<P: Policy + ?Sized>(policy: &P, factory: &EnvFactory, spec: EvalSpec) -> Result<Vec<f64>> {
    let mut env = PersistenceWrapper::new(factory.make(spec.env_seed)?, spec.k_max, spec.k)?;
    env.set_reported_k(spec.reported_k);
    episode_returns(policy, &mut env, spec.episodes)
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// `sum_i gamma^i r_i`.
pub fn discounted_return(rewards: &[f64], gamma: f64) -> f64 {
    rewards.iter().rev().fold(0.0, |acc, r| r + gamma * acc)
}
