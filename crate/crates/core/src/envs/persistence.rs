use super::{EnvSpec, Environment};
use crate::error::{Error, Result};

/// One decision of a persistent policy.
///
/// `rewards` always has `k_max` entries: the reward of every inner step that
/// was executed, then zeros. `state` and `next_state` end with the
/// persistence slot.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub rewards: Vec<f64>,
    pub next_state: Vec<f64>,
    /// True termination only; time-limit endings are stored as `false`.
    pub done: bool,
    pub k: usize,
}

impl Transition {
    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }

    /// Checks shapes and the reward-array / persistence-slot invariants.
    pub fn validate(&self, obs_dim: usize, action_dim: usize, k_max: usize) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidInput(format!("invalid transition: {m}")));
        if self.state.len() != obs_dim || self.next_state.len() != obs_dim {
            return fail(format!(
                "state lengths {}/{} != {obs_dim}",
                self.state.len(),
                self.next_state.len()
            ));
        }
        if self.action.len() != action_dim {
            return fail(format!("action length {} != {action_dim}", self.action.len()));
        }
        if self.rewards.len() != k_max {
            return fail(format!("reward array length {} != {k_max}", self.rewards.len()));
        }
        if self.k == 0 || self.k > k_max {
            return fail(format!("persistence {} outside [1, {k_max}]", self.k));
        }
        if self.rewards[self.k..].iter().any(|&r| r != 0.0) {
            return fail("reward entries beyond k must be zero".into());
        }
        if self.state[obs_dim - 1] != self.k as f64 {
            return fail(format!(
                "persistence slot {} does not match k={}",
                self.state[obs_dim - 1],
                self.k
            ));
        }
        if self.action.iter().any(|a| !(-1.0..=1.0).contains(a)) {
            return fail("action outside [-1, 1]".into());
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !(finite(&self.state) && finite(&self.next_state) && finite(&self.rewards)) {
            return fail("non-finite values".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PersistentStep {
    pub transition: Transition,
    /// The wrapped-step budget ran out (not a terminal state).
    pub truncated: bool,
    /// Inner steps actually executed (`<= k`).
    pub executed: usize,
}

impl PersistentStep {
    pub fn episode_over(&self) -> bool {
        self.transition.done || self.truncated
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    NeedsReset,
    Active,
    Finished,
}

/// Repeats each action `k` times, returns the per-step reward array and
/// appends the (reported) persistence to every observation.
#[derive(Debug)]
pub struct PersistenceWrapper<E: Environment = Box<dyn Environment>> {
    env: E,
    k_max: usize,
    k: usize,
    reported: Option<usize>,
    base_obs: Vec<f64>,
    wrapped_steps: usize,
    phase: Phase,
}

impl<E: Environment> PersistenceWrapper<E> {
    pub fn new(env: E, k_max: usize, k: usize) -> Result<Self> {
        if k_max == 0 || k == 0 || k > k_max {
            return Err(Error::InvalidInput(format!("persistence {k} outside [1, {k_max}]")));
        }
        Ok(Self {
            env,
            k_max,
            k,
            reported: None,
            base_obs: Vec::new(),
            wrapped_steps: 0,
            phase: Phase::NeedsReset,
        })
    }

    pub fn spec(&self) -> &EnvSpec {
        self.env.spec()
    }

    pub fn inner(&self) -> &E {
        &self.env
    }

    pub fn inner_mut(&mut self) -> &mut E {
        &mut self.env
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    /// Observation length including the persistence slot.
    pub fn obs_dim(&self) -> usize {
        self.env.spec().state_dim + 1
    }

    /// Changes the executed persistence. Ends the current episode so the
    /// persistence slot of every emitted state stays truthful.
    pub fn set_k(&mut self, k: usize) -> Result<()> {
        if k == 0 || k > self.k_max {
            return Err(Error::InvalidInput(format!("persistence {k} outside [1, {}]", self.k_max)));
        }
        self.k = k;
        self.phase = Phase::NeedsReset;
        Ok(())
    }

    /// Misleading mode: report `Some(value)` in the persistence slot
    /// regardless of the executed k. `None` restores truthful reporting.
    pub fn set_reported_k(&mut self, reported: Option<usize>) {
        self.reported = reported;
        self.phase = Phase::NeedsReset;
    }

    pub fn reported_k(&self) -> usize {
        self.reported.unwrap_or(self.k)
    }

    /// Wrapped-step budget per episode: `floor(max_steps / k)`.
    pub fn step_budget(&self) -> usize {
        self.env.spec().max_episode_steps / self.k
    }

    pub fn is_active(&self) -> bool {
        self.phase == Phase::Active
    }

    fn observation(&self) -> Vec<f64> {
        let mut obs = self.base_obs.clone();
        obs.push(self.reported_k() as f64);
        obs
    }

    pub fn reset(&mut self) -> Vec<f64> {
        self.base_obs = self.env.reset();
        self.wrapped_steps = 0;
        self.phase = if self.step_budget() == 0 { Phase::Finished } else { Phase::Active };
        self.observation()
    }

    pub fn step(&mut self, action: &[f64]) -> Result<PersistentStep> {
        if self.phase != Phase::Active {
            return Err(Error::State("step called on an episode that is not active; call reset".into()));
        }
        let a_dim = self.env.spec().action_dim;
        if action.len() != a_dim {
            return Err(Error::InvalidInput(format!("action length {} != {a_dim}", action.len())));
        }
        if let Some(a) = action.iter().find(|a| !(-1.0..=1.0).contains(*a)) {
            return Err(Error::InvalidInput(format!("action component {a} outside [-1, 1]")));
        }
        let state = self.observation();
        let mut rewards = vec![0.0; self.k_max];
        let mut done = false;
        let mut executed = 0;
        for r in rewards.iter_mut().take(self.k) {
            let out = self.env.step(action);
            *r = out.reward;
            self.base_obs = out.observation;
            executed += 1;
            if out.terminal {
                done = true;
                break;
            }
        }
        self.wrapped_steps += 1;
        let truncated = !done && self.wrapped_steps >= self.step_budget();
        if done || truncated {
            self.phase = Phase::Finished;
        }
        Ok(PersistentStep {
            transition: Transition {
                state,
                action: action.to_vec(),
                rewards,
                next_state: self.observation(),
                done,
                k: self.k,
            },
            truncated,
            executed,
        })
    }
}
