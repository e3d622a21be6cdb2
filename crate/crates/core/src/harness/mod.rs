//! Configuration, run directories, evaluation protocols across control
//! frequencies, plot-data emission and the command-line front end.

pub mod cli;
mod config;
mod plots;
mod run;

pub use crate::eval::discounted_return;
pub use config::{parse_assignment, parse_pairs, Mode, RunConfig, Trainer, DEFAULT_BASELINE_STEPS};
pub use plots::{emit_plot_data, PlotFiles};
pub use run::{load_checkpoints, read_manifest, resolved_baseline, train, train_with_progress, RunSummary};

use crate::agent::Agent;
use crate::envs::EnvFactory;
use crate::error::{Error, Result};
use crate::eval::{evaluate, mean_std, EvalSpec, Policy};
use crate::nn::{DenseNet, GaussianPolicyHead};

/// Acts with the mean of its members' deterministic actions.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsemblePolicy {
    actors: Vec<DenseNet>,
    action_dim: usize,
}

impl EnsemblePolicy {
    pub fn new(actors: Vec<DenseNet>) -> Result<Self> {
        let first = actors.first().ok_or_else(|| Error::InvalidInput("ensemble needs at least one actor".into()))?;
        let (inputs, outputs) = (first.input_dim(), first.output_dim());
        if outputs % 2 != 0 {
            return Err(Error::InvalidInput(format!("actor output size {outputs} is not mean plus log-std")));
        }
        if let Some(i) = actors.iter().position(|a| a.input_dim() != inputs || a.output_dim() != outputs) {
            return Err(Error::InvalidInput(format!("actor {i} does not match the shape of actor 0")));
        }
        Ok(Self { actors, action_dim: outputs / 2 })
    }

    pub fn from_agents<'a>(agents: impl IntoIterator<Item = &'a Agent>) -> Result<Self> {
        Self::new(agents.into_iter().map(|a| a.actor.clone()).collect())
    }

    pub fn len(&self) -> usize {
        self.actors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actors.is_empty()
    }

    pub fn actors(&self) -> &[DenseNet] {
        &self.actors
    }
}

impl Policy for EnsemblePolicy {
    fn action(&self, obs: &[f64]) -> Result<Vec<f64>> {
        let mut sum = vec![0.0; self.action_dim];
        for actor in &self.actors {
            let head = GaussianPolicyHead::from_raw(&actor.forward(obs)?, self.action_dim)?;
            for (s, a) in sum.iter_mut().zip(head.deterministic()) {
                *s += a;
            }
        }
        let n = self.actors.len() as f64;
        Ok(sum.into_iter().map(|s| (s / n).clamp(-1.0, 1.0)).collect())
    }
}

/// Returns at one persistence value.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub k: usize,
    pub mean: f64,
    pub std: f64,
    pub returns: Vec<f64>,
}

/// Deterministic returns of `policy` at each persistence in `ks`, with the
/// step budget scaled by 1/k. In misleading mode the persistence slot of
/// every observation reads 1 while the true k is executed. Every k uses the
/// same environment seed.
pub fn eval_frequency_sweep<P: Policy + ?Sized>(
    policy: &P,
    factory: &EnvFactory,
    ks: &[usize],
    k_max: usize,
    episodes: usize,
    misleading: bool,
    env_seed: u64,
) -> Result<Vec<SweepRow>> {
    ks.iter()
        .map(|&k| {
            let spec = EvalSpec { k, k_max, reported_k: misleading.then_some(1), episodes, env_seed };
            let returns = evaluate(policy, factory, spec).map_err(|e| e.context(format!("k = {k}")))?;
            let (mean, std) = mean_std(&returns);
            Ok(SweepRow { k, mean, std, returns })
        })
        .collect()
}

/// Mean over rows of the per-k mean return.
pub fn mean_over_k(rows: &[SweepRow]) -> f64 {
    rows.iter().map(|r| r.mean).sum::<f64>() / rows.len() as f64
}

#[cfg(test)]
mod tests;
