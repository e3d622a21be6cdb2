use std::f64::consts::PI;

use rand::Rng as _;

use super::{EnvSpec, Environment, StepOutcome};
use crate::rng::Rng;

/// Torque-limited swing-up; `theta = 0` is upright.
#[derive(Debug, Clone, PartialEq)]
pub struct PendulumParams {
    pub gravity: f64,
    pub mass: f64,
    pub length: f64,
    pub dt: f64,
    pub max_speed: f64,
    pub max_torque: f64,
    pub max_steps: usize,
}

impl Default for PendulumParams {
    fn default() -> Self {
        Self {
            gravity: 10.0,
            mass: 1.0,
            length: 1.0,
            dt: 0.05,
            max_speed: 8.0,
            max_torque: 2.0,
            max_steps: 200,
        }
    }
}

fn normalize_angle(x: f64) -> f64 {
    (x + PI).rem_euclid(2.0 * PI) - PI
}

/// One Euler step. Returns `(theta', theta_dot', reward)` where the reward
/// is charged on the pre-step state and the applied torque.
pub fn pendulum_dynamics(p: &PendulumParams, theta: f64, theta_dot: f64, torque: f64) -> (f64, f64, f64) {
    let u = torque.clamp(-p.max_torque, p.max_torque);
    let th = normalize_angle(theta);
    let reward = -(th * th + 0.1 * theta_dot * theta_dot + 0.001 * u * u);
    let accel = 3.0 * p.gravity / (2.0 * p.length) * theta.sin() + 3.0 / (p.mass * p.length * p.length) * u;
    let new_dot = (theta_dot + accel * p.dt).clamp(-p.max_speed, p.max_speed);
    (theta + new_dot * p.dt, new_dot, reward)
}

#[derive(Debug, Clone)]
pub struct Pendulum {
    params: PendulumParams,
    spec: EnvSpec,
    theta: f64,
    theta_dot: f64,
    rng: Rng,
}

impl Pendulum {
    pub fn new(params: PendulumParams, seed: u64) -> Self {
        let spec = EnvSpec {
            id: "pendulum".into(),
            state_dim: 3,
            action_dim: 1,
            max_episode_steps: params.max_steps,
            reward_note: "per-step cost in [-16.3, 0]; 0 is upright and still".into(),
        };
        Self {
            params,
            spec,
            theta: 0.0,
            theta_dot: 0.0,
            rng: crate::rng::stream(seed, crate::rng::Stream::Custom(0x50e0)),
        }
    }

    pub fn set_state(&mut self, theta: f64, theta_dot: f64) {
        self.theta = theta;
        self.theta_dot = theta_dot;
    }

    pub fn state(&self) -> (f64, f64) {
        (self.theta, self.theta_dot)
    }

    fn observe(&self) -> Vec<f64> {
        vec![self.theta.cos(), self.theta.sin(), self.theta_dot]
    }
}

impl Environment for Pendulum {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self) -> Vec<f64> {
        self.theta = self.rng.random_range(-PI..=PI);
        self.theta_dot = self.rng.random_range(-1.0..=1.0);
        self.observe()
    }

    fn step(&mut self, action: &[f64]) -> StepOutcome {
        let torque = self.params.max_torque * action[0].clamp(-1.0, 1.0);
        let (th, dot, reward) = pendulum_dynamics(&self.params, self.theta, self.theta_dot, torque);
        self.theta = th;
        self.theta_dot = dot;
        StepOutcome { observation: self.observe(), reward, terminal: false }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn upright_rest_is_a_fixed_point() {
        let p = PendulumParams::default();
        assert_eq!(pendulum_dynamics(&p, 0.0, 0.0, 0.0), (0.0, 0.0, 0.0));
    }

    #[test]
    fn hanging_down_costs_pi_squared() {
        let p = PendulumParams::default();
        let (th, dot, r) = pendulum_dynamics(&p, PI, 0.0, 0.0);
        assert!((r + PI * PI).abs() < 1e-12);
        assert!((r + 9.869_604_401_089_358).abs() < 1e-12);
        // sin(pi) is ~1.2e-16 in floating point, so the state barely moves
        assert!(dot.abs() < 1e-14);
        assert!((th - PI).abs() < 1e-15);
    }

    #[test]
    fn velocity_is_clamped() {
        let p = PendulumParams::default();
        let (_, dot, _) = pendulum_dynamics(&p, 1.0, 7.99, 2.0);
        assert_eq!(dot, 8.0);
    }

    #[test]
    fn reset_samples_documented_ranges() {
        let mut env = Pendulum::new(PendulumParams::default(), 4);
        for _ in 0..500 {
            let obs = env.reset();
            let (th, dot) = env.state();
            assert!((-PI..=PI).contains(&th));
            assert!((-1.0..=1.0).contains(&dot));
            assert_eq!(obs.len(), 3);
        }
    }
}
