//! One maximum-entropy actor-critic learner: a tanh-Gaussian actor, twin
//! critics and a learned temperature.
//!
//! The AAC configuration has no target networks. TD targets bootstrap from the
//! online critics (no gradient through the bootstrap) and the critic loss adds
//! a penalty on how far `Q(s', a')` moves away from its value at the start of
//! the current training step.

mod checkpoint;
mod hyper;

pub use checkpoint::{decode_agent, encode_agent, AGENT_CHECKPOINT_MAGIC};
pub use hyper::{g_from_gamma, gamma_from_g, HyperParams};

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::nn::{adam_step, AdamState, DenseNet, GaussianPolicyHead, SquashedSample};
use crate::replay::{Batch, ReplayBuffer};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub hidden: Vec<usize>,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub alpha_lr: f64,
    pub init_alpha: f64,
    pub batch_size: usize,
    /// Include `alpha·log pi` in the actor loss.
    pub entropy_in_actor_loss: bool,
    /// Bootstrap discount is `gamma^(k + offset)`; 1 for AAC, 0 for the SAC family.
    pub bootstrap_offset: u32,
    /// Penalize changes of `Q(s', a')` during the critic update.
    pub self_regularize: bool,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self::aac()
    }
}

impl AgentConfig {
    pub fn aac() -> Self {
        Self {
            hidden: vec![256, 256],
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            alpha_lr: 1e-4,
            init_alpha: 0.1,
            batch_size: 512,
            entropy_in_actor_loss: true,
            bootstrap_offset: 1,
            self_regularize: true,
        }
    }

    pub fn sac() -> Self {
        Self { bootstrap_offset: 0, self_regularize: false, ..Self::aac() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::Config(format!("hidden sizes {:?} must be non-empty and positive", self.hidden)));
        }
        for (name, v) in [
            ("actor_lr", self.actor_lr),
            ("critic_lr", self.critic_lr),
            ("alpha_lr", self.alpha_lr),
            ("init_alpha", self.init_alpha),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// Persistence-aware TD target for one transition:
/// `sum_j gamma^j r[j] + (1 - d)·gamma^(k + offset)·bootstrap`.
pub fn td_target(rewards: &[f64], k: usize, done: bool, gamma: f64, offset: u32, bootstrap: f64) -> f64 {
    let mut discount = 1.0;
    let mut total = 0.0;
    for &r in rewards {
        total += discount * r;
        discount *= gamma;
    }
    if done {
        total
    } else {
        total + gamma.powi((k as u32 + offset) as i32) * bootstrap
    }
}

/// A fixed regression problem for both critics.
///
/// `inputs` holds `rows` critic inputs `(s, a)`, followed by `rows` inputs
/// `(s', a')` when `anchors` is present. `anchors[i]` are the frozen values of
/// critic `i` at `(s', a')`.
#[derive(Debug, Clone)]
pub struct CriticProblem {
    pub rows: usize,
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
    pub anchors: Option<[Vec<f64>; 2]>,
}

/// Where the TD bootstrap values come from.
#[derive(Debug, Clone, Copy)]
pub enum Bootstrap<'a> {
    Online,
    Targets(&'a [DenseNet; 2]),
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CriticStats {
    /// Sum of both critics' losses before the update.
    pub loss: f64,
    /// The self-regularization part of `loss`.
    pub regularizer: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ActorStats {
    pub loss: f64,
    pub alpha_loss: f64,
    /// Temperature after the update.
    pub alpha: f64,
    /// `-mean log pi` of the sampled actions.
    pub entropy: f64,
}

/// Per-step summary written to the metrics CSVs.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct TrainMetrics {
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub alpha: f64,
    pub entropy: f64,
    pub gamma: f64,
    pub target_entropy: f64,
    pub critic_updates: usize,
    pub actor_updates: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Agent {
    pub actor: DenseNet,
    pub critics: [DenseNet; 2],
    pub log_alpha: f64,
    pub actor_opt: AdamState,
    pub critic_opts: [AdamState; 2],
    pub alpha_opt: AdamState,
    pub hyper: HyperParams,
    pub config: AgentConfig,
    obs_dim: usize,
    action_dim: usize,
    critic_updates: u64,
    actor_updates: u64,
}

fn sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut s = vec![input];
    s.extend_from_slice(hidden);
    s.push(output);
    s
}

impl Agent {
    /// `obs_dim` includes the persistence slot.
    pub fn new(obs_dim: usize, action_dim: usize, hyper: HyperParams, config: AgentConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        if obs_dim == 0 || action_dim == 0 {
            return Err(Error::InvalidInput("observation and action dimensions must be positive".into()));
        }
        let actor = DenseNet::new(&sizes(obs_dim, &config.hidden, 2 * action_dim), rng)?;
        let critic_sizes = sizes(obs_dim + action_dim, &config.hidden, 1);
        let critics = [DenseNet::new(&critic_sizes, rng)?, DenseNet::new(&critic_sizes, rng)?];
        Ok(Self {
            actor_opt: AdamState::new(&actor.param_shapes(), config.actor_lr)?,
            critic_opts: [
                AdamState::new(&critics[0].param_shapes(), config.critic_lr)?,
                AdamState::new(&critics[1].param_shapes(), config.critic_lr)?,
            ],
            alpha_opt: AdamState::new(&[1], config.alpha_lr)?,
            log_alpha: config.init_alpha.ln(),
            actor,
            critics,
            hyper,
            config,
            obs_dim,
            action_dim,
            critic_updates: 0,
            actor_updates: 0,
        })
    }

    pub(crate) fn from_parts(parts: AgentParts) -> Result<Self> {
        let AgentParts { actor, critics, log_alpha, actor_opt, critic_opts, alpha_opt, hyper, config } = parts;
        let obs_dim = actor.input_dim();
        if actor.output_dim() % 2 != 0 {
            return Err(Error::Format("actor output must hold mean and log-std".into()));
        }
        let action_dim = actor.output_dim() / 2;
        for c in &critics {
            if c.input_dim() != obs_dim + action_dim || c.output_dim() != 1 {
                return Err(Error::Format("critic shape does not match actor".into()));
            }
        }
        Ok(Self {
            actor,
            critics,
            log_alpha,
            actor_opt,
            critic_opts,
            alpha_opt,
            hyper,
            config,
            obs_dim,
            action_dim,
            critic_updates: 0,
            actor_updates: 0,
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    /// Every network the learner owns: the actor and the two critics.
    pub fn networks(&self) -> [&DenseNet; 3] {
        [&self.actor, &self.critics[0], &self.critics[1]]
    }

    /// `(critic updates, actor updates)` performed over the agent's lifetime.
    pub fn update_counts(&self) -> (u64, u64) {
        (self.critic_updates, self.actor_updates)
    }

    pub fn policy(&self, states: &[f64]) -> Result<GaussianPolicyHead> {
        let rows = self.rows_of(states)?;
        let raw = self.actor.forward_batch(states, rows)?;
        GaussianPolicyHead::from_raw(&raw, self.action_dim)
    }

    fn rows_of(&self, states: &[f64]) -> Result<usize> {
        if states.is_empty() || !states.len().is_multiple_of(self.obs_dim) {
            return Err(Error::InvalidInput(format!(
                "state buffer of {} values is not a multiple of observation size {}",
                states.len(),
                self.obs_dim
            )));
        }
        Ok(states.len() / self.obs_dim)
    }

    /// Action for one observation: a squashed-Gaussian sample when
    /// `stochastic`, otherwise `tanh(mean)`.
    pub fn act(&self, obs: &[f64], stochastic: bool, rng: &mut Rng) -> Result<Vec<f64>> {
        if obs.len() != self.obs_dim {
            return Err(Error::InvalidInput(format!(
                "observation has {} values, expected {}",
                obs.len(),
                self.obs_dim
            )));
        }
        let head = self.policy(obs)?;
        Ok(if stochastic { head.sample(rng).actions } else { head.deterministic() })
    }

    /// `tanh(mean)` for one observation.
    pub fn deterministic_action(&self, obs: &[f64]) -> Result<Vec<f64>> {
        if obs.len() != self.obs_dim {
            return Err(Error::InvalidInput(format!(
                "observation has {} values, expected {}",
                obs.len(),
                self.obs_dim
            )));
        }
        Ok(self.policy(obs)?.deterministic())
    }

    pub fn critic_inputs(&self, states: &[f64], actions: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(states.len() + actions.len());
        for (s, a) in states.chunks_exact(self.obs_dim).zip(actions.chunks_exact(self.action_dim)) {
            out.extend_from_slice(s);
            out.extend_from_slice(a);
        }
        out
    }

    /// Values of both critics at the given `(s, a)` rows.
    pub fn q_values(&self, nets: &[DenseNet; 2], inputs: &[f64]) -> Result<[Vec<f64>; 2]> {
        let rows = inputs.len() / (self.obs_dim + self.action_dim);
        Ok([nets[0].forward_batch(inputs, rows)?, nets[1].forward_batch(inputs, rows)?])
    }

    /// Samples `a' ~ pi(s')` for every row and evaluates the entropy-adjusted
    /// clipped double-Q bootstrap `min(Q1, Q2)(s', a') - alpha·log pi(a'|s')`.
    fn next_values(&self, batch: &Batch, nets: &[DenseNet; 2], rng: &mut Rng) -> Result<(Vec<f64>, [Vec<f64>; 2], Vec<f64>)> {
        let head = self.policy(&batch.next_states)?;
        let next = head.sample(rng);
        let inputs = self.critic_inputs(&batch.next_states, &next.actions);
        let q = self.q_values(nets, &inputs)?;
        let alpha = self.alpha();
        let values = (0..batch.size)
            .map(|i| q[0][i].min(q[1][i]) - alpha * next.log_probs[i])
            .collect();
        Ok((values, q, inputs))
    }

    /// TD targets for a batch, bootstrapping from the online critics.
    pub fn td_targets(&self, batch: &Batch, gamma: f64, rng: &mut Rng) -> Result<Vec<f64>> {
        let (values, _, _) = self.next_values(batch, &self.critics, rng)?;
        self.targets_from_values(batch, gamma, &values)
    }

    fn targets_from_values(&self, batch: &Batch, gamma: f64, values: &[f64]) -> Result<Vec<f64>> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::InvalidInput(format!("discount {gamma} outside (0, 1)")));
        }
        let targets: Vec<f64> = (0..batch.size)
            .map(|i| {
                td_target(
                    batch.row_rewards(i),
                    batch.ks[i],
                    batch.dones[i],
                    gamma,
                    self.config.bootstrap_offset,
                    values[i],
                )
            })
            .collect();
        ensure_finite(&targets, "TD target")?;
        Ok(targets)
    }

    /// Builds the critic regression problem for `batch`.
    ///
    /// With `regularize`, the anchors are the values of `anchor` (or of the
    /// current critics when `None`) at the freshly sampled `(s', a')`.
    pub fn critic_problem(
        &self,
        batch: &Batch,
        gamma: f64,
        bootstrap: Bootstrap<'_>,
        regularize: bool,
        anchor: Option<&[DenseNet; 2]>,
        rng: &mut Rng,
    ) -> Result<CriticProblem> {
        let boot_nets = match bootstrap {
            Bootstrap::Online => &self.critics,
            Bootstrap::Targets(t) => t,
        };
        let (values, boot_q, next_inputs) = self.next_values(batch, boot_nets, rng)?;
        let targets = self.targets_from_values(batch, gamma, &values)?;
        let mut inputs = self.critic_inputs(&batch.states, &batch.actions);
        let anchors = if regularize {
            let frozen = match (anchor, bootstrap) {
                (Some(nets), _) => self.q_values(nets, &next_inputs)?,
                (None, Bootstrap::Online) => boot_q,
                (None, Bootstrap::Targets(_)) => self.q_values(&self.critics, &next_inputs)?,
            };
            inputs.extend_from_slice(&next_inputs);
            Some(frozen)
        } else {
            None
        };
        Ok(CriticProblem { rows: batch.size, inputs, targets, anchors })
    }

    fn critic_losses(&self, p: &CriticProblem, outputs: &[Vec<f64>; 2]) -> ([f64; 2], f64) {
        let n = p.rows as f64;
        let mut losses = [0.0; 2];
        let mut reg_total = 0.0;
        for (i, out) in outputs.iter().enumerate() {
            let td: f64 = (0..p.rows).map(|r| (out[r] - p.targets[r]).powi(2)).sum::<f64>() / n;
            let reg = match &p.anchors {
                Some(a) => (0..p.rows).map(|r| (a[i][r] - out[p.rows + r]).powi(2)).sum::<f64>() / n,
                None => 0.0,
            };
            losses[i] = td + reg;
            reg_total += reg;
        }
        (losses, reg_total)
    }

    /// Critic losses on a problem without updating anything.
    pub fn critic_loss(&self, p: &CriticProblem) -> Result<CriticStats> {
        let total_rows = p.inputs.len() / (self.obs_dim + self.action_dim);
        let outputs = [
            self.critics[0].forward_batch(&p.inputs, total_rows)?,
            self.critics[1].forward_batch(&p.inputs, total_rows)?,
        ];
        let (l, reg) = self.critic_losses(p, &outputs);
        Ok(CriticStats { loss: l[0] + l[1], regularizer: reg })
    }

    /// One Adam step on each critic for the given problem. Returns the loss
    /// measured before the step.
    pub fn critic_fit(&mut self, p: &CriticProblem) -> Result<CriticStats> {
        let total_rows = p.inputs.len() / (self.obs_dim + self.action_dim);
        let n = p.rows as f64;
        let mut outputs: [Vec<f64>; 2] = Default::default();
        let mut grads = Vec::with_capacity(2);
        for i in 0..2 {
            let (out, tape) = self.critics[i].forward_recorded(&p.inputs, total_rows)?;
            let mut d_out = vec![0.0; total_rows];
            for r in 0..p.rows {
                d_out[r] = 2.0 * (out[r] - p.targets[r]) / n;
            }
            if let Some(a) = &p.anchors {
                for r in 0..p.rows {
                    d_out[p.rows + r] = -2.0 * (a[i][r] - out[p.rows + r]) / n;
                }
            }
            let (g, _) = self.critics[i].backward(&tape, &d_out)?;
            outputs[i] = out;
            grads.push(g);
        }
        let (losses, reg) = self.critic_losses(p, &outputs);
        if !(losses[0].is_finite() && losses[1].is_finite()) {
            return Err(Error::Numeric(format!("critic loss became non-finite: {losses:?}")));
        }
        for (i, g) in grads.iter().enumerate() {
            adam_step(&mut self.critics[i], g, &mut self.critic_opts[i])?;
        }
        self.critic_updates += 1;
        Ok(CriticStats { loss: losses[0] + losses[1], regularizer: reg })
    }

    /// The AAC critic update on one batch: online bootstrap plus the
    /// self-regularizer against `anchor` (current critics when `None`).
    pub fn critic_update(&mut self, batch: &Batch, gamma: f64, anchor: Option<&[DenseNet; 2]>, rng: &mut Rng) -> Result<CriticStats> {
        let p = self.critic_problem(batch, gamma, Bootstrap::Online, self.config.self_regularize, anchor, rng)?;
        self.critic_fit(&p)
    }

    /// Policy step on `min(Q1, Q2)` with reparameterized samples, followed by
    /// the temperature step toward `target_entropy`. Critics are not modified.
    pub fn actor_update(&mut self, batch: &Batch, target_entropy: f64, rng: &mut Rng) -> Result<ActorStats> {
        self.actor_update_with(batch, target_entropy, None, rng)
    }

    /// Like [`Agent::actor_update`] but maximizing `q` instead of the agent's
    /// own critics when given.
    pub fn actor_update_with(
        &mut self,
        batch: &Batch,
        target_entropy: f64,
        q: Option<&dyn ActionValue>,
        rng: &mut Rng,
    ) -> Result<ActorStats> {
        let rows = batch.size;
        let n = rows as f64;
        let (raw, actor_tape) = self.actor.forward_recorded(&batch.states, rows)?;
        let head = GaussianPolicyHead::from_raw(&raw, self.action_dim)?;
        let sample = head.sample(rng);
        let (loss, d_raw) = {
            let own = ClippedDoubleQ { critics: &self.critics, obs_dim: self.obs_dim, action_dim: self.action_dim };
            self.actor_loss_and_grad(&batch.states, &head, &sample, q.unwrap_or(&own))?
        };
        let (g, _) = self.actor.backward(&actor_tape, &d_raw)?;
        adam_step(&mut self.actor, &g, &mut self.actor_opt)?;

        let mean_lp_plus_h = sample.log_probs.iter().map(|lp| lp + target_entropy).sum::<f64>() / n;
        let alpha_loss = -self.log_alpha * mean_lp_plus_h;
        let mut log_alpha = [self.log_alpha];
        self.alpha_opt.step(&mut [&mut log_alpha[..]], &[&[-mean_lp_plus_h][..]])?;
        self.log_alpha = log_alpha[0];
        self.actor_updates += 1;
        Ok(ActorStats {
            loss,
            alpha_loss,
            alpha: self.alpha(),
            entropy: -sample.log_probs.iter().sum::<f64>() / n,
        })
    }

    /// Actor loss `mean(alpha·log pi - Q)` and its gradient with respect to
    /// the raw actor output, for a fixed noise draw.
    pub fn actor_loss_and_grad(
        &self,
        states: &[f64],
        head: &GaussianPolicyHead,
        sample: &SquashedSample,
        q: &dyn ActionValue,
    ) -> Result<(f64, Vec<f64>)> {
        let rows = head.rows();
        let n = rows as f64;
        let (values, dq_da) = q.evaluate(states, &sample.actions)?;
        let alpha = if self.config.entropy_in_actor_loss { self.alpha() } else { 0.0 };
        let loss = (0..rows).map(|r| alpha * sample.log_probs[r] - values[r]).sum::<f64>() / n;
        let d_actions: Vec<f64> = dq_da.iter().map(|g| -g / n).collect();
        let d_logp = vec![alpha / n; rows];
        Ok((loss, head.backprop(sample, &d_actions, &d_logp)))
    }

    /// One training step: `c` critic updates then `a` actor updates, each on
    /// a fresh batch. The self-regularizer anchors to the critics as they were
    /// when the step began.
    pub fn train_step(&mut self, buffer: &ReplayBuffer, rng: &mut Rng) -> Result<TrainMetrics> {
        let gamma = self.hyper.gamma();
        let target_entropy = self.hyper.target_entropy(self.action_dim);
        let anchor = self.config.self_regularize.then(|| self.critics.clone());
        let mut m = TrainMetrics { gamma, target_entropy, ..Default::default() };
        for _ in 0..self.hyper.c {
            let batch = buffer.sample(self.config.batch_size, rng)?;
            m.critic_loss += self.critic_update(&batch, gamma, anchor.as_ref(), rng)?.loss;
            m.critic_updates += 1;
        }
        for _ in 0..self.hyper.a {
            let batch = buffer.sample(self.config.batch_size, rng)?;
            let s = self.actor_update(&batch, target_entropy, rng)?;
            m.actor_loss += s.loss;
            m.entropy += s.entropy;
            m.actor_updates += 1;
        }
        m.critic_loss /= m.critic_updates.max(1) as f64;
        m.actor_loss /= m.actor_updates.max(1) as f64;
        m.entropy /= m.actor_updates.max(1) as f64;
        m.alpha = self.alpha();
        Ok(m)
    }
}

/// A differentiable action-value function: values at `(s, a)` rows and
/// their gradients with respect to the action.
pub trait ActionValue {
    fn evaluate(&self, states: &[f64], actions: &[f64]) -> Result<(Vec<f64>, Vec<f64>)>;
}

/// Element-wise minimum of two critics; the gradient flows through
/// whichever critic is smaller on each row (the first on ties).
#[derive(Debug, Clone, Copy)]
pub struct ClippedDoubleQ<'a> {
    pub critics: &'a [DenseNet; 2],
    pub obs_dim: usize,
    pub action_dim: usize,
}

impl ActionValue for ClippedDoubleQ<'_> {
    fn evaluate(&self, states: &[f64], actions: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let (o, a_dim) = (self.obs_dim, self.action_dim);
        let rows = states.len() / o;
        let mut inputs = Vec::with_capacity(rows * (o + a_dim));
        for (s, a) in states.chunks_exact(o).zip(actions.chunks_exact(a_dim)) {
            inputs.extend_from_slice(s);
            inputs.extend_from_slice(a);
        }
        let (q1, t1) = self.critics[0].forward_recorded(&inputs, rows)?;
        let (q2, t2) = self.critics[1].forward_recorded(&inputs, rows)?;
        let mut pick = [vec![0.0; rows], vec![0.0; rows]];
        let mut values = Vec::with_capacity(rows);
        for r in 0..rows {
            let i = usize::from(q1[r] > q2[r]);
            pick[i][r] = 1.0;
            values.push(q1[r].min(q2[r]));
        }
        let dx1 = self.critics[0].backward_input(&t1, &pick[0])?;
        let dx2 = self.critics[1].backward_input(&t2, &pick[1])?;
        let mut grads = vec![0.0; rows * a_dim];
        for r in 0..rows {
            for j in 0..a_dim {
                let col = r * (o + a_dim) + o + j;
                grads[r * a_dim + j] = dx1[col] + dx2[col];
            }
        }
        Ok((values, grads))
    }
}

/// Raw components used to rebuild an agent from a checkpoint.
pub(crate) struct AgentParts {
    pub actor: DenseNet,
    pub critics: [DenseNet; 2],
    pub log_alpha: f64,
    pub actor_opt: AdamState,
    pub critic_opts: [AdamState; 2],
    pub alpha_opt: AdamState,
    pub hyper: HyperParams,
    pub config: AgentConfig,
}

#[cfg(test)]
mod tests;
