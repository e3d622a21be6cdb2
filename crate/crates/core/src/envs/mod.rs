//! Built-in control tasks and the action-persistence wrapper.
//!
//! All environments take actions in `[-1, 1]^|A|` and rescale internally.

mod newsvendor;
mod pendulum;
pub(crate) mod persistence;
mod pointmass;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

pub use newsvendor::{newsvendor_dynamics, Demand, Newsvendor, NewsvendorParams};
pub use pendulum::{pendulum_dynamics, Pendulum, PendulumParams};
pub use persistence::{PersistenceWrapper, PersistentStep, Transition};
pub use pointmass::{pointmass_dynamics, PointMass, PointMassParams};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub id: String,
    /// Base observation size, excluding the persistence slot.
    pub state_dim: usize,
    pub action_dim: usize,
    /// Episode length in base steps, before division by k.
    pub max_episode_steps: usize,
    pub reward_note: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observation: Vec<f64>,
    pub reward: f64,
    /// True termination of the task; time limits are handled by the wrapper.
    pub terminal: bool,
}

pub trait Environment: Send {
    fn spec(&self) -> &EnvSpec;
    fn reset(&mut self) -> Vec<f64>;
    fn step(&mut self, action: &[f64]) -> StepOutcome;
}

impl<E: Environment + ?Sized> Environment for Box<E> {
    fn spec(&self) -> &EnvSpec {
        (**self).spec()
    }

    fn reset(&mut self) -> Vec<f64> {
        (**self).reset()
    }

    fn step(&mut self, action: &[f64]) -> StepOutcome {
        (**self).step(action)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EnvId {
    Pendulum,
    PointMass,
    Newsvendor,
}

impl EnvId {
    pub const ALL: [EnvId; 3] = [EnvId::Pendulum, EnvId::PointMass, EnvId::Newsvendor];

    pub fn as_str(self) -> &'static str {
        match self {
            EnvId::Pendulum => "pendulum",
            EnvId::PointMass => "pointmass",
            EnvId::Newsvendor => "newsvendor",
        }
    }

    /// Upper end of the persistence search range used when none is configured.
    pub fn default_k_max(self) -> usize {
        match self {
            EnvId::Pendulum | EnvId::Newsvendor => 5,
            EnvId::PointMass => 15,
        }
    }

    /// Minibatch size used when none is configured.
    pub fn default_batch_size(self) -> usize {
        128
    }
}

impl fmt::Display for EnvId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnvId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EnvId::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown environment '{s}' (expected one of pendulum, pointmass, newsvendor)"
                ))
            })
    }
}

/// Builds seeded environment instances by id, applying `env.*` overrides.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvFactory {
    pub id: EnvId,
    pub overrides: BTreeMap<String, f64>,
}

impl EnvFactory {
    pub fn new(id: EnvId) -> Self {
        Self { id, overrides: BTreeMap::new() }
    }

    /// Accepts keys like `max_steps` or `price`; unknown keys are rejected so
    /// typos do not silently fall back to defaults.
    pub fn with_overrides(id: EnvId, overrides: BTreeMap<String, f64>) -> Result<Self> {
        let f = Self { id, overrides };
        f.make(0)?;
        Ok(f)
    }

    pub fn make(&self, seed: u64) -> Result<Box<dyn Environment>> {
        let mut o = self.overrides.clone();
        let mut take = |key: &str, slot: &mut f64| {
            if let Some(v) = o.remove(key) {
                *slot = v;
            }
        };
        let env: Box<dyn Environment> = match self.id {
            EnvId::Pendulum => {
                let mut p = PendulumParams::default();
                let mut steps = p.max_steps as f64;
                take("max_steps", &mut steps);
                take("gravity", &mut p.gravity);
                take("mass", &mut p.mass);
                take("length", &mut p.length);
                take("dt", &mut p.dt);
                take("max_speed", &mut p.max_speed);
                take("max_torque", &mut p.max_torque);
                p.max_steps = as_steps(steps)?;
                Box::new(Pendulum::new(p, seed))
            }
            EnvId::PointMass => {
                let mut p = PointMassParams::default();
                let mut steps = p.max_steps as f64;
                take("max_steps", &mut steps);
                take("dt", &mut p.dt);
                take("damping", &mut p.damping);
                p.max_steps = as_steps(steps)?;
                Box::new(PointMass::new(p, seed))
            }
            EnvId::Newsvendor => {
                let mut p = NewsvendorParams::default();
                let mut steps = p.horizon as f64;
                take("max_steps", &mut steps);
                take("price", &mut p.price);
                take("cost", &mut p.cost);
                take("holding", &mut p.holding);
                take("lost_sales", &mut p.lost_sales);
                take("max_order", &mut p.max_order);
                take("lambda_min", &mut p.lambda_min);
                take("lambda_max", &mut p.lambda_max);
                take("lambda_step", &mut p.lambda_step);
                p.horizon = as_steps(steps)?;
                p.validate()?;
                Box::new(Newsvendor::new(p, Demand::Poisson, seed))
            }
        };
        if let Some(k) = o.keys().next() {
            return Err(Error::Config(format!("unknown override env.{k} for {}", self.id)));
        }
        Ok(env)
    }

    pub fn spec(&self) -> EnvSpec {
        self.make(0).expect("factory validated at construction").spec().clone()
    }
}

fn as_steps(v: f64) -> Result<usize> {
    if v >= 1.0 && v.fract() == 0.0 {
        Ok(v as usize)
    } else {
        Err(Error::Config(format!("max_steps must be a positive integer, got {v}")))
    }
}
