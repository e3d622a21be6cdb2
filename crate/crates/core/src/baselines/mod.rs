//! SAC-family comparison learners: standard SAC with target networks,
//! SR-SAC (self-regularized critic, repeated on one batch), k-SAC (persistence
//! schedules) and Rand-SAC (settings drawn from the evolution search space).

mod schedule;

pub use schedule::{thompson, KReturns, KSchedule};

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use serde::Serialize;

use crate::agent::{Agent, AgentConfig, Bootstrap, HyperParams, TrainMetrics};
use crate::envs::{EnvFactory, PersistenceWrapper};
use crate::error::{Error, Result};
use crate::eval::{evaluate, mean_std, EvalSpec};
use crate::evolution::{EpochMetrics, SearchSpace};
use crate::nn::DenseNet;
use crate::replay::{warmup, Layout, ReplayBuffer, DEFAULT_CAPACITY};
use crate::rng::{derive_seed, stream, Rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Variant {
    Sac,
    SrSac,
    KSac,
    RandSac,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Sac, Variant::SrSac, Variant::KSac, Variant::RandSac];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Sac => "sac",
            Variant::SrSac => "sr-sac",
            Variant::KSac => "k-sac",
            Variant::RandSac => "rand-sac",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown baseline '{s}' (sac, sr-sac, k-sac, rand-sac)")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineConfig {
    pub variant: Variant,
    pub agent: AgentConfig,
    /// Update counts, target-entropy scale, persistence and discount.
    pub hyper: HyperParams,
    pub tau: f64,
    /// Polyak-average the targets after every `target_delay` critic updates.
    pub target_delay: usize,
    pub warmup: usize,
    /// SR-SAC loss-drop threshold in percent, interpolated over the run.
    pub beta_init: f64,
    pub beta_final: f64,
    pub sr_max_updates: usize,
    /// Persistence range; only k-SAC trains with more than one value.
    pub k_min: usize,
    pub k_max: usize,
    pub schedule: KSchedule,
    /// Environment steps between evaluations (and k-SAC periods).
    pub eval_interval: u64,
    pub eval_episodes: usize,
    pub replay_capacity: usize,
}

impl BaselineConfig {
    /// The literature defaults for `variant`. Rand-SAC starts from the SAC
    /// defaults; see [`rand_sac_make`].
    pub fn standard(variant: Variant, k_max: usize) -> Self {
        let mut agent = AgentConfig::sac();
        if variant == Variant::SrSac {
            agent.self_regularize = true;
        }
        Self {
            variant,
            agent,
            hyper: HyperParams::sac_default(),
            tau: 0.005,
            target_delay: 2,
            warmup: 1000,
            beta_init: 70.0,
            beta_final: 90.0,
            sr_max_updates: 64,
            k_min: 1,
            k_max,
            schedule: if variant == Variant::KSac { KSchedule::DelayedSampled { delay: k_max } } else { KSchedule::Fixed(1) },
            eval_interval: 5000,
            eval_episodes: 10,
            replay_capacity: DEFAULT_CAPACITY,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.agent.validate()?;
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::Config(format!("tau must be in (0, 1], got {}", self.tau)));
        }
        if !(self.beta_init <= self.beta_final && self.beta_init >= 0.0) {
            return Err(Error::Config("need 0 <= beta_init <= beta_final".into()));
        }
        if self.target_delay == 0 || self.sr_max_updates == 0 || self.eval_interval == 0 || self.eval_episodes == 0 {
            return Err(Error::Config("target_delay, sr_max_updates, eval_interval and eval_episodes must be positive".into()));
        }
        if self.k_min == 0 || self.k_min > self.k_max || !(self.k_min..=self.k_max).contains(&self.hyper.k) {
            return Err(Error::Config(format!(
                "persistence {} / range [{}, {}] invalid",
                self.hyper.k, self.k_min, self.k_max
            )));
        }
        if let KSchedule::Fixed(k) = self.schedule {
            if !(self.k_min..=self.k_max).contains(&k) {
                return Err(Error::Config(format!("fixed schedule k={k} outside range")));
            }
        }
        if self.hyper.a == 0 || self.hyper.c == 0 || !(self.hyper.g < 0.0) || !(self.hyper.h > 0.0) {
            return Err(Error::Config(format!("invalid settings {:?}", self.hyper)));
        }
        Ok(())
    }

    /// Persistence values trained and evaluated.
    pub fn k_values(&self) -> Vec<usize> {
        match (self.variant, self.schedule) {
            (Variant::KSac, KSchedule::Fixed(k)) => vec![k],
            (Variant::KSac, _) => (self.k_min..=self.k_max).collect(),
            _ => vec![self.hyper.k],
        }
    }

    /// SR-SAC threshold in percent at `progress` in [0, 1].
    pub fn beta_at(&self, progress: f64) -> f64 {
        self.beta_init + (self.beta_final - self.beta_init) * progress.clamp(0.0, 1.0)
    }
}

/// Rand-SAC: the five evolved settings drawn uniformly from `space` and
/// `tau` uniform in `[0.001, 0.05]`; everything else stays at the SAC defaults.
pub fn rand_sac_make(space: &SearchSpace, rng: &mut Rng) -> BaselineConfig {
    let hyper = space.sample(rng);
    let tau = rng.random_range(0.001..=0.05);
    BaselineConfig {
        hyper,
        tau,
        k_min: space.k.min,
        k_max: space.k.max,
        ..BaselineConfig::standard(Variant::RandSac, space.k.max)
    }
}

/// `target <- (1 - tau)·target + tau·online`, elementwise.
pub fn polyak_update(target: &mut DenseNet, online: &DenseNet, tau: f64) -> Result<()> {
    if target.sizes() != online.sizes() {
        return Err(Error::InvalidInput(format!(
            "target shape {:?} != online shape {:?}",
            target.sizes(),
            online.sizes()
        )));
    }
    for (t, o) in target.layers_mut().iter_mut().zip(online.layers()) {
        for (tw, ow) in t.weight.iter_mut().zip(&o.weight) {
            *tw = (1.0 - tau) * *tw + tau * ow;
        }
        for (tb, ob) in t.bias.iter_mut().zip(&o.bias) {
            *tb = (1.0 - tau) * *tb + tau * ob;
        }
    }
    Ok(())
}

/// Slowly moving copies of both critics.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetNets {
    pub nets: [DenseNet; 2],
    pub delay: usize,
    pub updates: u64,
}

impl TargetNets {
    pub fn new(online: &[DenseNet; 2], delay: usize) -> Self {
        Self { nets: online.clone(), delay: delay.max(1), updates: 0 }
    }

    /// Counts one critic update; averages toward `online` on every
    /// `delay`-th call. Returns whether the targets moved.
    pub fn after_critic_update(&mut self, online: &[DenseNet; 2], tau: f64) -> Result<bool> {
        self.updates += 1;
        if !self.updates.is_multiple_of(self.delay as u64) {
            return Ok(false);
        }
        for (t, o) in self.nets.iter_mut().zip(online) {
            polyak_update(t, o, tau)?;
        }
        Ok(true)
    }
}

/// Standard SAC step: `c` critic updates bootstrapping from the target
/// networks (no self-regularizer), then `a` actor/temperature updates.
pub fn sac_train_step(agent: &mut Agent, targets: &mut TargetNets, buffer: &ReplayBuffer, tau: f64, rng: &mut Rng) -> Result<TrainMetrics> {
    let gamma = agent.hyper.gamma();
    let target_entropy = agent.hyper.target_entropy(agent.action_dim());
    let mut m = TrainMetrics { gamma, target_entropy, ..Default::default() };
    for _ in 0..agent.hyper.c {
        let batch = buffer.sample(agent.config.batch_size, rng)?;
        let p = agent.critic_problem(&batch, gamma, Bootstrap::Targets(&targets.nets), false, None, rng)?;
        m.critic_loss += agent.critic_fit(&p)?.loss;
        m.critic_updates += 1;
        targets.after_critic_update(&agent.critics, tau)?;
    }
    m.critic_loss /= agent.hyper.c as f64;
    actor_phase(agent, buffer, target_entropy, &mut m, rng)?;
    Ok(m)
}

/// SR-SAC step: for each of the `c` critic rounds, one batch with the TD
/// targets and regularizer anchors frozen at the start; Adam steps repeat
/// until the loss drops below `beta` percent of its initial value (checked
/// after every step) or `max_updates` steps were taken. Then `a` actor
/// updates. `critic_loss` reports the mean initial loss.
pub fn sr_sac_train_step(agent: &mut Agent, buffer: &ReplayBuffer, beta: f64, max_updates: usize, rng: &mut Rng) -> Result<TrainMetrics> {
    let gamma = agent.hyper.gamma();
    let target_entropy = agent.hyper.target_entropy(agent.action_dim());
    let mut m = TrainMetrics { gamma, target_entropy, ..Default::default() };
    for _ in 0..agent.hyper.c {
        let batch = buffer.sample(agent.config.batch_size, rng)?;
        let p = agent.critic_problem(&batch, gamma, Bootstrap::Online, true, None, rng)?;
        let initial = agent.critic_fit(&p)?.loss;
        let mut done = 1;
        while done < max_updates && agent.critic_loss(&p)?.loss >= beta / 100.0 * initial {
            agent.critic_fit(&p)?;
            done += 1;
        }
        m.critic_loss += initial;
        m.critic_updates += done;
    }
    m.critic_loss /= agent.hyper.c as f64;
    actor_phase(agent, buffer, target_entropy, &mut m, rng)?;
    Ok(m)
}

fn actor_phase(agent: &mut Agent, buffer: &ReplayBuffer, target_entropy: f64, m: &mut TrainMetrics, rng: &mut Rng) -> Result<()> {
    for _ in 0..agent.hyper.a {
        let batch = buffer.sample(agent.config.batch_size, rng)?;
        let s = agent.actor_update(&batch, target_entropy, rng)?;
        m.actor_loss += s.loss;
        m.entropy += s.entropy;
        m.actor_updates += 1;
    }
    m.actor_loss /= m.actor_updates.max(1) as f64;
    m.entropy /= m.actor_updates.max(1) as f64;
    m.alpha = agent.alpha();
    Ok(())
}

/// One evaluation of the learner at every trained persistence value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRow {
    pub period: usize,
    pub env_steps: u64,
    pub k: usize,
    pub mean: f64,
    pub std: f64,
}

/// The reported score after each evaluation: the best per-k mean return.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub env_steps: u64,
    pub k: usize,
    pub mean: f64,
    pub std: f64,
    /// Persistence the learner trained with during the following period.
    pub train_k: usize,
}

#[derive(Debug)]
pub struct BaselineOutcome {
    pub config: BaselineConfig,
    pub agent: Agent,
    pub curve: Vec<CurvePoint>,
    pub evals: Vec<EvalRow>,
    /// Mean training metrics per period.
    pub metrics: Vec<(u64, EpochMetrics)>,
    pub env_steps: u64,
    pub buffer: ReplayBuffer,
}

impl BaselineOutcome {
    pub fn final_return(&self) -> f64 {
        self.curve.last().map_or(f64::NAN, |c| c.mean)
    }
}

/// Environment seed for evaluation `period` at persistence `k`.
pub fn baseline_eval_seed(seed: u64, period: usize, k: usize) -> u64 {
    derive_seed(seed, Stream::Eval { epoch: period, member: k })
}

/// Trains one baseline learner for `total_env_steps` environment steps
/// (warmup included), evaluating every `eval_interval` steps and at the end.
pub fn run_baseline(config: &BaselineConfig, factory: &EnvFactory, seed: u64, total_env_steps: u64) -> Result<BaselineOutcome> {
    config.validate()?;
    let spec = factory.spec();
    let layout = Layout { obs_dim: spec.state_dim + 1, action_dim: spec.action_dim, k_max: config.k_max };
    let ks = config.k_values();
    let capacity = config.replay_capacity.min(total_env_steps.max(1) as usize + 1);
    let mut buffer = ReplayBuffer::new(layout, capacity)?;
    let mut agent = Agent::new(layout.obs_dim, layout.action_dim, config.hyper, config.agent.clone(), &mut stream(seed, Stream::Init(0)))?;
    let mut targets = TargetNets::new(&agent.critics, config.target_delay);

    let (k_lo, k_hi) = (ks[0], *ks.last().expect("at least one k"));
    let warm = warmup(
        &mut buffer,
        |k| factory.make(derive_seed(seed, Stream::Custom(k as u64))).expect("factory validated"),
        k_lo,
        k_hi,
        config.warmup,
        &mut stream(seed, Stream::Warmup),
    )?;
    let mut env_steps = warm.env_steps;
    let mut rng = stream(seed, Stream::Learner(0));
    let mut schedule_rng = stream(seed, Stream::Evolution);

    let mut evals = Vec::new();
    let mut curve = Vec::new();
    let mut metrics = Vec::new();
    let evaluate_all = |agent: &Agent, period: usize| -> Result<Vec<(usize, Vec<f64>)>> {
        ks.iter()
            .map(|&k| {
                let spec = EvalSpec {
                    k,
                    k_max: config.k_max,
                    reported_k: None,
                    episodes: config.eval_episodes,
                    env_seed: baseline_eval_seed(seed, period, k),
                };
                Ok((k, evaluate(agent, factory, spec)?))
            })
            .collect()
    };

    let mut period = 0;
    let mut latest = evaluate_all(&agent, period)?;
    let mut k = config.schedule.choose(period, &ks, &latest, &mut schedule_rng);
    if config.variant != Variant::KSac {
        k = config.hyper.k;
    }
    let mut record = |period: usize, env_steps: u64, latest: &[(usize, Vec<f64>)], train_k: usize, curve: &mut Vec<CurvePoint>| {
        let mut best: Option<CurvePoint> = None;
        for (k, returns) in latest {
            let (mean, std) = mean_std(returns);
            evals.push(EvalRow { period, env_steps, k: *k, mean, std });
            if best.as_ref().is_none_or(|b| mean > b.mean) {
                best = Some(CurvePoint { env_steps, k: *k, mean, std, train_k });
            }
        }
        curve.push(best.expect("at least one k"));
    };
    record(period, env_steps, &latest, k, &mut curve);

    let mut env = PersistenceWrapper::new(factory.make(derive_seed(seed, Stream::Env(0)))?, config.k_max, k)?;
    let mut obs = env.reset();
    let mut next_eval = env_steps + config.eval_interval;
    let mut acc = EpochMetrics::default();
    while env_steps < total_env_steps {
        let action = agent.act(&obs, true, &mut rng)?;
        let step = env.step(&action)?;
        obs = if step.episode_over() { env.reset() } else { step.transition.next_state.clone() };
        buffer.push(&step.transition)?;
        env_steps += step.executed as u64;

        let m = match config.variant {
            Variant::SrSac => {
                let beta = config.beta_at(env_steps as f64 / total_env_steps as f64);
                sr_sac_train_step(&mut agent, &buffer, beta, config.sr_max_updates, &mut rng)?
            }
            _ => sac_train_step(&mut agent, &mut targets, &buffer, config.tau, &mut rng)?,
        };
        acc.add(&m);

        if env_steps >= next_eval || env_steps >= total_env_steps {
            period += 1;
            latest = evaluate_all(&agent, period)?;
            if config.variant == Variant::KSac {
                let next_k = config.schedule.choose(period, &ks, &latest, &mut schedule_rng);
                if next_k != env.k() {
                    env.set_k(next_k)?;
                    obs = env.reset();
                }
            }
            record(period, env_steps, &latest, env.k(), &mut curve);
            metrics.push((env_steps, std::mem::take(&mut acc).finish()));
            next_eval += config.eval_interval;
        }
    }
    Ok(BaselineOutcome { config: config.clone(), agent, curve, evals, metrics, env_steps, buffer })
}

#[cfg(test)]
mod tests;
