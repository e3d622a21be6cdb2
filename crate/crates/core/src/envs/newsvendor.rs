use std::collections::VecDeque;

use rand::Rng as _;
use rand_distr::{Distribution, Poisson};

use super::{EnvSpec, Environment, StepOutcome};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Single-item perishable-free newsvendor with lost sales and a drifting
/// Poisson demand rate.
#[derive(Debug, Clone, PartialEq)]
pub struct NewsvendorParams {
    pub price: f64,
    pub cost: f64,
    pub holding: f64,
    pub lost_sales: f64,
    pub max_order: f64,
    pub horizon: usize,
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// Half-width of the uniform daily step of the demand rate.
    pub lambda_step: f64,
}

impl Default for NewsvendorParams {
    fn default() -> Self {
        Self {
            price: 2.0,
            cost: 1.0,
            holding: 0.05,
            lost_sales: 0.5,
            max_order: 50.0,
            horizon: 40,
            lambda_min: 5.0,
            lambda_max: 45.0,
            lambda_step: 2.0,
        }
    }
}

impl NewsvendorParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_min > 0.0 && self.lambda_min < self.lambda_max) {
            return Err(Error::Config("newsvendor demand range must satisfy 0 < min < max".into()));
        }
        if self.max_order <= 0.0 || self.lambda_step < 0.0 {
            return Err(Error::Config("newsvendor max_order must be > 0 and lambda_step >= 0".into()));
        }
        Ok(())
    }
}

/// Where daily demand comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum Demand {
    Poisson,
    /// Replays the listed demands, repeating the last one.
    Scripted(Vec<f64>),
}

/// One day: the order arrives, demand is served from stock, leftovers are
/// carried. Returns `(next_inventory, reward)`.
pub fn newsvendor_dynamics(p: &NewsvendorParams, inventory: f64, order: f64, demand: f64) -> (f64, f64) {
    let available = inventory + order;
    let sold = available.min(demand);
    let unmet = demand - sold;
    let leftover = available - sold;
    let reward = p.price * sold - p.cost * order - p.holding * leftover - p.lost_sales * unmet;
    (leftover, reward)
}

#[derive(Debug, Clone)]
pub struct Newsvendor {
    params: NewsvendorParams,
    demand: Demand,
    spec: EnvSpec,
    inventory: f64,
    lambda: f64,
    day: usize,
    recent: VecDeque<f64>,
    rng: Rng,
}

const HISTORY: usize = 5;

impl Newsvendor {
    pub fn new(params: NewsvendorParams, demand: Demand, seed: u64) -> Self {
        let spec = EnvSpec {
            id: "newsvendor".into(),
            state_dim: 3,
            action_dim: 1,
            max_episode_steps: params.horizon,
            reward_note: "daily profit in currency units".into(),
        };
        Self {
            params,
            demand,
            spec,
            inventory: 0.0,
            lambda: 0.0,
            day: 0,
            recent: VecDeque::with_capacity(HISTORY),
            rng: crate::rng::stream(seed, crate::rng::Stream::Custom(0x4e5e)),
        }
    }

    pub fn inventory(&self) -> f64 {
        self.inventory
    }

    pub fn set_inventory(&mut self, inventory: f64) {
        self.inventory = inventory;
    }

    fn draw_demand(&mut self) -> f64 {
        match &self.demand {
            Demand::Scripted(seq) => {
                let i = self.day.min(seq.len().saturating_sub(1));
                seq.get(i).copied().unwrap_or(0.0)
            }
            Demand::Poisson => {
                let d = Poisson::new(self.lambda).expect("rate kept positive").sample(&mut self.rng);
                let p = &self.params;
                let step = self.rng.random_range(-p.lambda_step..=p.lambda_step);
                self.lambda = (self.lambda + step).clamp(p.lambda_min, p.lambda_max);
                d
            }
        }
    }

    fn observe(&self) -> Vec<f64> {
        let avg = if self.recent.is_empty() {
            0.0
        } else {
            self.recent.iter().sum::<f64>() / self.recent.len() as f64
        };
        vec![
            self.inventory / self.params.max_order,
            avg / self.params.max_order,
            self.day as f64 / self.params.horizon as f64,
        ]
    }

    fn remember(&mut self, demand: f64) {
        if self.recent.len() == HISTORY {
            self.recent.pop_front();
        }
        self.recent.push_back(demand);
    }
}

impl Environment for Newsvendor {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self) -> Vec<f64> {
        self.inventory = 0.0;
        self.day = 0;
        self.recent.clear();
        self.lambda = self.rng.random_range(self.params.lambda_min..=self.params.lambda_max);
        if self.demand == Demand::Poisson {
            // a short pre-season history so the demand estimate is informative on day 0
            for _ in 0..HISTORY {
                let d = self.draw_demand();
                self.remember(d);
            }
        }
        self.observe()
    }

    fn step(&mut self, action: &[f64]) -> StepOutcome {
        let order = self.params.max_order * (action[0].clamp(-1.0, 1.0) + 1.0) / 2.0;
        let demand = self.draw_demand();
        let (inv, reward) = newsvendor_dynamics(&self.params, self.inventory, order, demand);
        self.inventory = inv;
        self.remember(demand);
        self.day += 1;
        StepOutcome {
            observation: self.observe(),
            reward,
            terminal: self.day >= self.params.horizon,
        }
    }
}
