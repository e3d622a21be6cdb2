//! The population loop: every member collects experience into one shared
//! buffer and trains with its own settings; after each epoch the members are
//! ranked by evaluation return and the worst ones are replaced by perturbed
//! copies of the best.

mod space;

pub use space::{IntRange, RealRange, SearchSpace};

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::{Agent, AgentConfig, HyperParams, TrainMetrics};
use crate::envs::{EnvFactory, PersistenceWrapper, Transition};
use crate::error::{Error, Result};
use crate::eval::{evaluate, mean_std, EvalSpec};
use crate::replay::{warmup, Layout, ReplayBuffer, WarmupStats, DEFAULT_CAPACITY};
use crate::rng::{derive_seed, stream, Rng, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolutionConfig {
    pub population: usize,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub exchange_fraction: f64,
    pub eval_episodes: usize,
    /// Random-action transitions collected before training.
    pub warmup: usize,
    pub replay_capacity: usize,
    pub space: SearchSpace,
    pub agent: AgentConfig,
    /// Stop once this many environment steps (warmup included) were taken.
    pub env_step_budget: Option<u64>,
    /// 1 runs everything on the calling thread.
    pub threads: usize,
}

impl EvolutionConfig {
    pub fn standard(k_max: usize) -> Self {
        Self {
            population: 20,
            epochs: 100,
            steps_per_epoch: 1000,
            exchange_fraction: 0.2,
            eval_episodes: 3,
            warmup: 10_000,
            replay_capacity: DEFAULT_CAPACITY,
            space: SearchSpace::standard(k_max),
            agent: AgentConfig::aac(),
            env_step_budget: None,
            threads: 1,
        }
    }

    /// Size of the elite group and of the bad group.
    pub fn group_size(&self) -> usize {
        group_size(self.population, self.exchange_fraction)
    }

    pub fn validate(&self) -> Result<()> {
        if self.population < 2 {
            return Err(Error::Config(format!("population must be at least 2, got {}", self.population)));
        }
        if !(self.exchange_fraction > 0.0 && self.exchange_fraction <= 0.5) {
            return Err(Error::Config(format!(
                "exchange fraction must be in (0, 0.5], got {}",
                self.exchange_fraction
            )));
        }
        if 2 * self.group_size() > self.population {
            return Err(Error::Config("elite and bad groups overlap".into()));
        }
        if self.steps_per_epoch == 0 || self.eval_episodes == 0 || self.replay_capacity == 0 || self.threads == 0 {
            return Err(Error::Config(
                "steps_per_epoch, eval_episodes, replay_capacity and threads must be positive".into(),
            ));
        }
        self.space.validate()?;
        self.agent.validate()
    }
}

/// `ceil(population · fraction)`.
pub fn group_size(population: usize, fraction: f64) -> usize {
    ((population as f64 * fraction) - 1e-9).ceil().max(1.0) as usize
}

/// Something whose settings can be evolved; lets the exchange logic run on
/// mock members without any learning.
pub trait Evolvable: Clone {
    fn hyper(&self) -> HyperParams;
    fn set_hyper(&mut self, hp: HyperParams);
}

impl Evolvable for Agent {
    fn hyper(&self) -> HyperParams {
        self.hyper
    }

    fn set_hyper(&mut self, hp: HyperParams) {
        self.hyper = hp;
    }
}

impl Evolvable for HyperParams {
    fn hyper(&self) -> HyperParams {
        *self
    }

    fn set_hyper(&mut self, hp: HyperParams) {
        *self = hp;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Lineage {
    pub epoch: usize,
    pub copied_from: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Member<A = Agent> {
    pub id: usize,
    pub agent: A,
    pub fitness: f64,
    /// The fitness was copied from an elite and has not been measured yet.
    pub inherited: bool,
    pub lineage: Vec<Lineage>,
}

pub type PopulationMember = Member<Agent>;

impl<A> Member<A> {
    pub fn new(id: usize, agent: A) -> Self {
        Self { id, agent, fitness: f64::NAN, inherited: false, lineage: Vec::new() }
    }
}

/// Member indices from best to worst; equal fitness ranks the lower index first.
pub fn ranking(fitness: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..fitness.len()).collect();
    order.sort_by(|&i, &j| fitness[j].total_cmp(&fitness[i]).then(i.cmp(&j)));
    order
}

/// In-place Fisher-Yates: for `i` from the end down to 1, swap `i` with a
/// uniform index in `0..=i`.
pub fn shuffle<T>(items: &mut [T], rng: &mut Rng) {
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pairing {
    pub elite: usize,
    pub bad: usize,
}

/// Replaces every bad member with a perturbed copy of a randomly paired
/// elite. `members[i].id` must equal `i` and every fitness must be finite.
///
/// Draw order: shuffle the elites, shuffle the bads, then perturb each bad
/// in pairing order.
pub fn exchange<A: Evolvable>(
    members: &mut [Member<A>],
    space: &SearchSpace,
    fraction: f64,
    epoch: usize,
    rng: &mut Rng,
) -> Result<Vec<Pairing>> {
    let m = members.len();
    if m < 2 {
        return Err(Error::InvalidInput("exchange needs at least two members".into()));
    }
    if let Some(bad) = members.iter().enumerate().find(|(i, mb)| mb.id != *i || !mb.fitness.is_finite()) {
        return Err(Error::State(format!(
            "member at position {} (id {}) has fitness {}",
            bad.0, bad.1.id, bad.1.fitness
        )));
    }
    let g = group_size(m, fraction);
    if 2 * g > m {
        return Err(Error::InvalidInput("elite and bad groups overlap".into()));
    }
    let fitness: Vec<f64> = members.iter().map(|mb| mb.fitness).collect();
    let order = ranking(&fitness);
    let mut elites = order[..g].to_vec();
    let mut bads = order[m - g..].to_vec();
    shuffle(&mut elites, rng);
    shuffle(&mut bads, rng);
    let mut pairs = Vec::with_capacity(g);
    for (&elite, &bad) in elites.iter().zip(&bads) {
        let agent = members[elite].agent.clone();
        let perturbed = space.perturb(agent.hyper(), rng);
        let target = &mut members[bad];
        target.agent = agent;
        target.agent.set_hyper(perturbed);
        target.fitness = fitness[elite];
        target.inherited = true;
        target.lineage.push(Lineage { epoch, copied_from: elite });
        pairs.push(Pairing { elite, bad });
    }
    Ok(pairs)
}

/// Mean undiscounted return of deterministic episodes at the agent's own
/// persistence, with the step budget divided by k.
pub fn evaluate_fitness(agent: &Agent, factory: &EnvFactory, k_max: usize, episodes: usize, env_seed: u64) -> Result<f64> {
    let spec = EvalSpec { k: agent.hyper.k, k_max, reported_k: None, episodes, env_seed };
    Ok(mean_std(&evaluate(agent, factory, spec)?).0)
}

/// Environment seed used to evaluate `member` after `epoch`.
pub fn eval_seed(seed: u64, epoch: usize, member: usize) -> u64 {
    derive_seed(seed, Stream::Eval { epoch, member })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MemberRecord {
    pub id: usize,
    pub fitness: f64,
    pub inherited: bool,
    pub hyper: HyperParams,
    pub gamma: f64,
    pub target_entropy: f64,
    pub alpha: f64,
}

/// Mean training metrics of one member over an epoch.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct EpochMetrics {
    pub steps: usize,
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub entropy: f64,
    pub alpha: f64,
    pub critic_updates: usize,
    pub actor_updates: usize,
}

impl EpochMetrics {
    pub fn add(&mut self, m: &TrainMetrics) {
        self.steps += 1;
        self.critic_loss += m.critic_loss;
        self.actor_loss += m.actor_loss;
        self.entropy += m.entropy;
        self.alpha = m.alpha;
        self.critic_updates += m.critic_updates;
        self.actor_updates += m.actor_updates;
    }

    pub fn finish(mut self) -> Self {
        let n = self.steps.max(1) as f64;
        self.critic_loss /= n;
        self.actor_loss /= n;
        self.entropy /= n;
        self
    }
}

/// State of the population right after an evaluation (before the exchange).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub env_steps: u64,
    pub iterations: usize,
    pub members: Vec<MemberRecord>,
    pub metrics: Vec<EpochMetrics>,
    pub pairings: Vec<(usize, usize)>,
}

impl EpochRecord {
    /// The best evaluated member (lowest id on ties).
    pub fn best(&self) -> &MemberRecord {
        let fitness: Vec<f64> = self.members.iter().map(|m| m.fitness).collect();
        &self.members[ranking(&fitness)[0]]
    }
}

#[derive(Debug)]
pub struct RunOutcome {
    pub population: Vec<PopulationMember>,
    pub records: Vec<EpochRecord>,
    pub env_steps: u64,
    pub warmup: WarmupStats,
    pub buffer: ReplayBuffer,
}

impl RunOutcome {
    /// The record of the last evaluation.
    pub fn last(&self) -> &EpochRecord {
        self.records.last().expect("a run always evaluates the initial population")
    }
}

struct Worker {
    env: PersistenceWrapper,
    obs: Vec<f64>,
    rng: Rng,
}

/// Runs the full loop. See [`run_with_observer`].
pub fn run(config: &EvolutionConfig, factory: &EnvFactory, seed: u64) -> Result<RunOutcome> {
    run_with_observer(config, factory, seed, &mut |_, _| Ok(()))
}

/// Warmup, evaluation of the initial population, then epochs of
/// `steps_per_epoch` iterations (every member takes one wrapped environment
/// step, then every member runs one training step), each followed by an
/// evaluation and an exchange. `observer` sees every record together with
/// the evaluated population before it is modified.
///
/// With an environment-step budget the loop stops as soon as the budget is
/// reached and evaluates the population one last time without exchanging.
pub fn run_with_observer(
    config: &EvolutionConfig,
    factory: &EnvFactory,
    seed: u64,
    observer: &mut dyn FnMut(&EpochRecord, &[PopulationMember]) -> Result<()>,
) -> Result<RunOutcome> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let spec = factory.spec();
    let k_max = config.space.k.max;
    let layout = Layout { obs_dim: spec.state_dim + 1, action_dim: spec.action_dim, k_max };
    let m = config.population;

    // never more transitions than this can be stored, so capping changes nothing
    let most_transitions = match config.env_step_budget {
        Some(b) => b as usize + m,
        None => config.warmup + config.epochs * config.steps_per_epoch * m,
    };
    let mut buffer = ReplayBuffer::new(layout, config.replay_capacity.min(most_transitions.max(1)))?;
    let warm = warmup(
        &mut buffer,
        |k| factory.make(derive_seed(seed, Stream::Custom(k as u64))).expect("factory validated"),
        config.space.k.min,
        k_max,
        config.warmup,
        &mut stream(seed, Stream::Warmup),
    )?;
    let mut env_steps = warm.env_steps;

    let mut evo_rng = stream(seed, Stream::Evolution);
    let mut members = Vec::with_capacity(m);
    let mut workers = Vec::with_capacity(m);
    for i in 0..m {
        let hp = config.space.sample(&mut evo_rng);
        let agent = Agent::new(layout.obs_dim, layout.action_dim, hp, config.agent.clone(), &mut stream(seed, Stream::Init(i)))?;
        let mut env = PersistenceWrapper::new(factory.make(derive_seed(seed, Stream::Env(i)))?, k_max, hp.k)?;
        let obs = env.reset();
        members.push(Member::new(i, agent));
        workers.push(Worker { env, obs, rng: stream(seed, Stream::Learner(i)) });
    }

    let parallel = config.threads > 1;
    let evaluate_all = |members: &mut [PopulationMember], epoch: usize| -> Result<()> {
        let score = |mb: &PopulationMember| {
            evaluate_fitness(&mb.agent, factory, k_max, config.eval_episodes, eval_seed(seed, epoch, mb.id))
                .map_err(|e| e.context(format!("member {}", mb.id)))
        };
        let scores: Vec<Result<f64>> = if parallel {
            pool.install(|| members.par_iter().map(score).collect())
        } else {
            members.iter().map(score).collect()
        };
        for (mb, s) in members.iter_mut().zip(scores) {
            mb.fitness = s?;
            mb.inherited = false;
        }
        Ok(())
    };
    let record = |members: &[PopulationMember], epoch, env_steps, iterations, metrics: Vec<EpochMetrics>| EpochRecord {
        epoch,
        env_steps,
        iterations,
        members: members
            .iter()
            .map(|mb| MemberRecord {
                id: mb.id,
                fitness: mb.fitness,
                inherited: mb.inherited,
                hyper: mb.agent.hyper,
                gamma: mb.agent.hyper.gamma(),
                target_entropy: mb.agent.hyper.target_entropy(layout.action_dim),
                alpha: mb.agent.alpha(),
            })
            .collect(),
        metrics,
        pairings: Vec::new(),
    };

    evaluate_all(&mut members, 0)?;
    let mut records = vec![record(&members, 0, env_steps, 0, vec![EpochMetrics::default(); m])];
    observer(&records[0], &members)?;

    let budget_left = |steps: u64| config.env_step_budget.is_none_or(|b| steps < b);
    let mut epoch = 0;
    while epoch < config.epochs && budget_left(env_steps) {
        epoch += 1;
        let mut metrics = vec![EpochMetrics::default(); m];
        let mut iterations = 0;
        while iterations < config.steps_per_epoch && budget_left(env_steps) {
            // collect: one wrapped step per member, stored in member order
            let collect = |(mb, w): (&mut PopulationMember, &mut Worker)| -> Result<(Transition, usize)> {
                let action = mb.agent.act(&w.obs, true, &mut w.rng)?;
                let step = w.env.step(&action)?;
                w.obs = if step.episode_over() { w.env.reset() } else { step.transition.next_state.clone() };
                Ok((step.transition, step.executed))
            };
            let steps: Vec<Result<(Transition, usize)>> = if parallel {
                pool.install(|| members.par_iter_mut().zip(workers.par_iter_mut()).map(collect).collect())
            } else {
                members.iter_mut().zip(workers.iter_mut()).map(collect).collect()
            };
            for (i, s) in steps.into_iter().enumerate() {
                let (t, executed) = s.map_err(|e| e.context(format!("member {i}")))?;
                buffer.push(&t)?;
                env_steps += executed as u64;
            }

            let train = |(mb, w): (&mut PopulationMember, &mut Worker)| mb.agent.train_step(&buffer, &mut w.rng);
            let results: Vec<Result<TrainMetrics>> = if parallel {
                pool.install(|| members.par_iter_mut().zip(workers.par_iter_mut()).map(train).collect())
            } else {
                members.iter_mut().zip(workers.iter_mut()).map(train).collect()
            };
            for (i, r) in results.into_iter().enumerate() {
                metrics[i].add(&r.map_err(|e| e.context(format!("member {i}")))?);
            }
            iterations += 1;
        }

        evaluate_all(&mut members, epoch)?;
        let metrics = metrics.into_iter().map(EpochMetrics::finish).collect();
        let mut rec = record(&members, epoch, env_steps, iterations, metrics);
        observer(&rec, &members)?;
        let finished = epoch == config.epochs || !budget_left(env_steps);
        if !finished {
            let pairs = exchange(&mut members, &config.space, config.exchange_fraction, epoch, &mut evo_rng)?;
            for p in &pairs {
                let w = &mut workers[p.bad];
                w.env.set_k(members[p.bad].agent.hyper.k)?;
                w.obs = w.env.reset();
            }
            rec.pairings = pairs.iter().map(|p| (p.elite, p.bad)).collect();
        }
        records.push(rec);
    }

    Ok(RunOutcome { population: members, records, env_steps, warmup: warm, buffer })
}
