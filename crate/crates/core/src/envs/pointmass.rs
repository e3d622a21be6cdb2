use rand::Rng as _;

use super::{EnvSpec, Environment, StepOutcome};
use crate::rng::Rng;

/// Damped 2-D double integrator steering toward the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct PointMassParams {
    pub dt: f64,
    pub damping: f64,
    pub max_steps: usize,
}

impl Default for PointMassParams {
    fn default() -> Self {
        Self { dt: 0.05, damping: 0.95, max_steps: 300 }
    }
}

/// Returns `(position', velocity', reward)`; the reward is the negative
/// distance of the pre-step position from the goal at the origin.
pub fn pointmass_dynamics(
    p: &PointMassParams,
    pos: [f64; 2],
    vel: [f64; 2],
    force: [f64; 2],
) -> ([f64; 2], [f64; 2], f64) {
    let reward = -(pos[0] * pos[0] + pos[1] * pos[1]).sqrt();
    let mut new_vel = [0.0; 2];
    let mut new_pos = [0.0; 2];
    for i in 0..2 {
        new_vel[i] = (vel[i] + force[i].clamp(-1.0, 1.0) * p.dt) * p.damping;
        new_pos[i] = pos[i] + new_vel[i] * p.dt;
    }
    (new_pos, new_vel, reward)
}

#[derive(Debug, Clone)]
pub struct PointMass {
    params: PointMassParams,
    spec: EnvSpec,
    pos: [f64; 2],
    vel: [f64; 2],
    rng: Rng,
}

impl PointMass {
    pub fn new(params: PointMassParams, seed: u64) -> Self {
        let spec = EnvSpec {
            id: "pointmass".into(),
            state_dim: 4,
            action_dim: 2,
            max_episode_steps: params.max_steps,
            reward_note: "negative distance to the origin per step".into(),
        };
        Self {
            params,
            spec,
            pos: [0.0; 2],
            vel: [0.0; 2],
            rng: crate::rng::stream(seed, crate::rng::Stream::Custom(0x90e0)),
        }
    }

    fn observe(&self) -> Vec<f64> {
        vec![self.pos[0], self.pos[1], self.vel[0], self.vel[1]]
    }
}

impl Environment for PointMass {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self) -> Vec<f64> {
        self.pos = [self.rng.random_range(-1.0..=1.0), self.rng.random_range(-1.0..=1.0)];
        self.vel = [0.0; 2];
        self.observe()
    }

    fn step(&mut self, action: &[f64]) -> StepOutcome {
        let (pos, vel, reward) = pointmass_dynamics(&self.params, self.pos, self.vel, [action[0], action[1]]);
        self.pos = pos;
        self.vel = vel;
        StepOutcome { observation: self.observe(), reward, terminal: false }
    }
}
