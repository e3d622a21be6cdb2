//! Run configuration as flat `key = value` text with dotted sections.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::agent::{g_from_gamma, AgentConfig, HyperParams};
use crate::baselines::{BaselineConfig, KSchedule, Variant};
use crate::envs::{EnvFactory, EnvId};
use crate::error::{Error, Result};
use crate::evolution::{EvolutionConfig, IntRange, RealRange, SearchSpace};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Aac,
    Baseline(Variant),
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Aac => "aac",
            Mode::Baseline(v) => v.as_str(),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "aac" {
            return Ok(Mode::Aac);
        }
        s.parse::<Variant>()
            .map(Mode::Baseline)
            .map_err(|_| Error::Config(format!("unknown mode '{s}' (aac, sac, sr-sac, k-sac, rand-sac)")))
    }
}

/// Settings of the trainer selected by the mode.
#[derive(Debug, Clone, PartialEq)]
pub enum Trainer {
    Evolution(EvolutionConfig),
    /// `space` is the Rand-SAC sampling range and is present only for that variant.
    Baseline { config: BaselineConfig, space: Option<SearchSpace> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub mode: Mode,
    pub env: EnvFactory,
    pub seed: u64,
    /// Total environment steps. Optional for evolution, which also stops
    /// after its epoch count.
    pub steps: Option<u64>,
    pub out: PathBuf,
    /// Worker threads; 1 runs everything on the calling thread.
    pub threads: usize,
    pub trainer: Trainer,
}

/// Default length of a baseline run when no step count is given.
pub const DEFAULT_BASELINE_STEPS: u64 = 1_000_000;

impl RunConfig {
    /// Defaults for `mode` on `env`.
    pub fn new(mode: Mode, env: EnvId, seed: u64) -> Self {
        let k_max = env.default_k_max();
        let trainer = match mode {
            Mode::Aac => {
                let mut c = EvolutionConfig::standard(k_max);
                c.agent.batch_size = env.default_batch_size();
                Trainer::Evolution(c)
            }
            Mode::Baseline(v) => {
                let mut c = BaselineConfig::standard(v, k_max);
                c.agent.batch_size = env.default_batch_size();
                let space = (v == Variant::RandSac).then(|| SearchSpace::standard(k_max));
                Trainer::Baseline { config: c, space }
            }
        };
        Self {
            mode,
            env: EnvFactory::new(env),
            seed,
            steps: matches!(mode, Mode::Baseline(_)).then_some(DEFAULT_BASELINE_STEPS),
            out: PathBuf::from(format!("runs/{mode}-{env}-seed{seed}")),
            threads: 1,
            trainer,
        }
    }

    /// Builds a config from ordered key/value pairs; later pairs win.
    /// `mode` and `env` are required and fix the defaults the other keys
    /// override.
    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let last = |key: &str| pairs.iter().rev().find(|(k, _)| k == key).map(|(_, v)| v.as_str());
        let mode: Mode = last("mode").ok_or_else(|| Error::Config("missing 'mode'".into()))?.parse()?;
        let env: EnvId = last("env").ok_or_else(|| Error::Config("missing 'env'".into()))?.parse()?;
        let seed = match last("seed") {
            Some(s) => parse_num(s, "seed")?,
            None => 0,
        };
        let mut config = RunConfig::new(mode, env, seed);
        for (k, v) in pairs {
            if !matches!(k.as_str(), "mode" | "env") {
                config.set(k, v)?;
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_pairs(&parse_pairs(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| e.context(path.display()))
    }

    pub fn evolution(&self) -> Option<&EvolutionConfig> {
        match &self.trainer {
            Trainer::Evolution(c) => Some(c),
            Trainer::Baseline { .. } => None,
        }
    }

    pub fn baseline(&self) -> Option<&BaselineConfig> {
        match &self.trainer {
            Trainer::Baseline { config, .. } => Some(config),
            Trainer::Evolution(_) => None,
        }
    }

    pub fn agent_mut(&mut self) -> &mut AgentConfig {
        match &mut self.trainer {
            Trainer::Evolution(c) => &mut c.agent,
            Trainer::Baseline { config, .. } => &mut config.agent,
        }
    }

    fn agent(&self) -> &AgentConfig {
        match &self.trainer {
            Trainer::Evolution(c) => &c.agent,
            Trainer::Baseline { config, .. } => &config.agent,
        }
    }

    fn space_mut(&mut self) -> Option<&mut SearchSpace> {
        match &mut self.trainer {
            Trainer::Evolution(c) => Some(&mut c.space),
            Trainer::Baseline { space, .. } => space.as_mut(),
        }
    }

    fn space(&self) -> Option<&SearchSpace> {
        match &self.trainer {
            Trainer::Evolution(c) => Some(&c.space),
            Trainer::Baseline { space, .. } => space.as_ref(),
        }
    }

    /// Upper end of the persistence range, which fixes the reward-array length.
    pub fn k_max(&self) -> usize {
        match &self.trainer {
            Trainer::Evolution(c) => c.space.k.max,
            Trainer::Baseline { config, space: Some(s) } => config.k_max.max(s.k.max),
            Trainer::Baseline { config, .. } => config.k_max,
        }
    }

    /// Evolution settings with the run's thread count and step budget applied.
    pub fn evolution_config(&self) -> Option<EvolutionConfig> {
        self.evolution().map(|c| EvolutionConfig { threads: self.threads, env_step_budget: self.steps, ..c.clone() })
    }

    pub fn validate(&self) -> Result<()> {
        if self.threads == 0 {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        match (&self.trainer, self.mode) {
            (Trainer::Evolution(c), Mode::Aac) => {
                EvolutionConfig { threads: self.threads, env_step_budget: self.steps, ..c.clone() }.validate()
            }
            (Trainer::Baseline { config, space }, Mode::Baseline(v)) if config.variant == v => {
                if self.steps.is_none() {
                    return Err(Error::Config("baseline runs need a step count".into()));
                }
                if let Some(s) = space {
                    s.validate()?;
                }
                config.validate()
            }
            _ => Err(Error::Config(format!("settings do not match mode {}", self.mode))),
        }
    }

    /// Applies one override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let ctx = |e: Error| e.context(format!("key '{key}'"));
        self.set_inner(key, value.trim()).map_err(ctx)
    }

    fn set_inner(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "mode" => {
                let mode: Mode = v.parse()?;
                if mode != self.mode {
                    return Err(Error::Config("mode cannot change after defaults are chosen".into()));
                }
            }
            "env" => {
                if v.parse::<EnvId>()? != self.env.id {
                    return Err(Error::Config("env cannot change after defaults are chosen".into()));
                }
            }
            "seed" => self.seed = parse_num(v, key)?,
            "steps" => self.steps = if v == "none" { None } else { Some(parse_num(v, key)?) },
            "out" => self.out = PathBuf::from(v),
            "threads" => self.threads = parse_num(v, key)?,
            _ => {
                let (section, rest) = key
                    .split_once('.')
                    .ok_or_else(|| Error::Config(format!("unknown key '{key}'")))?;
                match section {
                    "env" => {
                        let mut overrides = self.env.overrides.clone();
                        overrides.insert(rest.to_string(), parse_num(v, key)?);
                        self.env = EnvFactory::with_overrides(self.env.id, overrides)?;
                    }
                    "agent" => set_agent(self.agent_mut(), rest, v)?,
                    "space" => {
                        let space = self
                            .space_mut()
                            .ok_or_else(|| Error::Config("search ranges apply to aac and rand-sac only".into()))?;
                        set_space(space, rest, v)?;
                    }
                    "evolution" => match &mut self.trainer {
                        Trainer::Evolution(c) => set_evolution(c, rest, v)?,
                        _ => return Err(Error::Config("evolution settings apply to aac only".into())),
                    },
                    "baseline" | "hyper" => match &mut self.trainer {
                        Trainer::Baseline { config, .. } if section == "baseline" => set_baseline(config, rest, v)?,
                        Trainer::Baseline { config, .. } => set_hyper(&mut config.hyper, rest, v)?,
                        _ => return Err(Error::Config(format!("{section} settings apply to baselines only"))),
                    },
                    _ => return Err(Error::Config(format!("unknown key '{key}'"))),
                }
            }
        }
        Ok(())
    }

    /// Every setting as ordered key/value pairs; parsing them back gives an
    /// equal config.
    pub fn pairs(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        let mut put = |k: &str, v: String| out.push((k.to_string(), v));
        put("mode", self.mode.to_string());
        put("env", self.env.id.to_string());
        put("seed", self.seed.to_string());
        put("steps", self.steps.map_or("none".into(), |s| s.to_string()));
        put("threads", self.threads.to_string());
        put("out", self.out.display().to_string());
        for (k, v) in &self.env.overrides {
            put(&format!("env.{k}"), v.to_string());
        }
        match &self.trainer {
            Trainer::Evolution(c) => {
                put("evolution.population", c.population.to_string());
                put("evolution.epochs", c.epochs.to_string());
                put("evolution.steps_per_epoch", c.steps_per_epoch.to_string());
                put("evolution.exchange_fraction", c.exchange_fraction.to_string());
                put("evolution.eval_episodes", c.eval_episodes.to_string());
                put("evolution.warmup", c.warmup.to_string());
                put("evolution.replay_capacity", c.replay_capacity.to_string());
            }
            Trainer::Baseline { config: c, .. } => {
                put("baseline.tau", c.tau.to_string());
                put("baseline.target_delay", c.target_delay.to_string());
                put("baseline.warmup", c.warmup.to_string());
                put("baseline.beta_init", c.beta_init.to_string());
                put("baseline.beta_final", c.beta_final.to_string());
                put("baseline.sr_max_updates", c.sr_max_updates.to_string());
                put("baseline.k_min", c.k_min.to_string());
                put("baseline.k_max", c.k_max.to_string());
                put("baseline.schedule", c.schedule.to_string());
                put("baseline.eval_interval", c.eval_interval.to_string());
                put("baseline.eval_episodes", c.eval_episodes.to_string());
                put("baseline.replay_capacity", c.replay_capacity.to_string());
                let h = &c.hyper;
                put("hyper.a", h.a.to_string());
                put("hyper.c", h.c.to_string());
                put("hyper.h", h.h.to_string());
                put("hyper.k", h.k.to_string());
                put("hyper.g", h.g.to_string());
            }
        }
        if let Some(s) = self.space() {
            for (name, r) in [("a", s.a), ("c", s.c), ("k", s.k)] {
                put(&format!("space.{name}.min"), r.min.to_string());
                put(&format!("space.{name}.max"), r.max.to_string());
                put(&format!("space.{name}.delta"), r.delta.to_string());
            }
            for (name, r) in [("h", s.h), ("g", s.g)] {
                put(&format!("space.{name}.min"), r.min.to_string());
                put(&format!("space.{name}.max"), r.max.to_string());
                put(&format!("space.{name}.delta"), r.delta.to_string());
            }
        }
        let a = self.agent();
        put("agent.hidden", a.hidden.iter().map(|h| h.to_string()).collect::<Vec<_>>().join(","));
        put("agent.actor_lr", a.actor_lr.to_string());
        put("agent.critic_lr", a.critic_lr.to_string());
        put("agent.alpha_lr", a.alpha_lr.to_string());
        put("agent.init_alpha", a.init_alpha.to_string());
        put("agent.batch_size", a.batch_size.to_string());
        put("agent.entropy_in_actor_loss", a.entropy_in_actor_loss.to_string());
        put("agent.bootstrap_offset", a.bootstrap_offset.to_string());
        put("agent.self_regularize", a.self_regularize.to_string());
        out
    }

    /// Canonical text form, one `key = value` per line.
    pub fn to_text(&self) -> String {
        self.pairs().iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Hex SHA-256 prefix of the canonical settings that affect results
    /// (the output directory and thread count are left out).
    pub fn config_hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.pairs() {
            if k != "out" && k != "threads" {
                h.update(format!("{k}={v}\n").as_bytes());
            }
        }
        h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

/// Splits config text into pairs, skipping blank lines and `#` comments.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    text.lines()
        .enumerate()
        .filter_map(|(n, line)| {
            let line = line.split('#').next().unwrap_or("").trim();
            (!line.is_empty()).then_some((n, line))
        })
        .map(|(n, line)| {
            line.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| Error::Config(format!("line {}: expected 'key = value', got '{line}'", n + 1)))
        })
        .collect()
}

/// Parses `key=value` as given to `--set`.
pub fn parse_assignment(s: &str) -> Result<(String, String)> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .ok_or_else(|| Error::Config(format!("expected key=value, got '{s}'")))
}

fn parse_num<T: FromStr>(v: &str, key: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("cannot parse '{v}' for {key}")))
}

fn set_agent(a: &mut AgentConfig, key: &str, v: &str) -> Result<()> {
    match key {
        "hidden" => a.hidden = v.split(',').map(|h| parse_num(h.trim(), "agent.hidden")).collect::<Result<_>>()?,
        "actor_lr" => a.actor_lr = parse_num(v, key)?,
        "critic_lr" => a.critic_lr = parse_num(v, key)?,
        "alpha_lr" => a.alpha_lr = parse_num(v, key)?,
        "init_alpha" => a.init_alpha = parse_num(v, key)?,
        "batch_size" => a.batch_size = parse_num(v, key)?,
        "entropy_in_actor_loss" => a.entropy_in_actor_loss = parse_num(v, key)?,
        "bootstrap_offset" => a.bootstrap_offset = parse_num(v, key)?,
        "self_regularize" => a.self_regularize = parse_num(v, key)?,
        _ => return Err(Error::Config(format!("unknown agent setting '{key}'"))),
    }
    Ok(())
}

fn set_space(s: &mut SearchSpace, key: &str, v: &str) -> Result<()> {
    let (name, field) = key
        .split_once('.')
        .ok_or_else(|| Error::Config(format!("expected space.<param>.<min|max|delta>, got '{key}'")))?;
    let int = |r: &mut IntRange| -> Result<()> {
        match field {
            "min" => r.min = parse_num(v, key)?,
            "max" => r.max = parse_num(v, key)?,
            "delta" => r.delta = parse_num(v, key)?,
            _ => return Err(Error::Config(format!("unknown range field '{field}'"))),
        }
        Ok(())
    };
    let real = |r: &mut RealRange| -> Result<()> {
        match field {
            "min" => r.min = parse_num(v, key)?,
            "max" => r.max = parse_num(v, key)?,
            "delta" => r.delta = parse_num(v, key)?,
            _ => return Err(Error::Config(format!("unknown range field '{field}'"))),
        }
        Ok(())
    };
    match name {
        "a" => int(&mut s.a),
        "c" => int(&mut s.c),
        "k" => int(&mut s.k),
        "h" => real(&mut s.h),
        "g" => real(&mut s.g),
        _ => Err(Error::Config(format!("unknown search parameter '{name}'"))),
    }
}

fn set_evolution(c: &mut EvolutionConfig, key: &str, v: &str) -> Result<()> {
    match key {
        "population" => c.population = parse_num(v, key)?,
        "epochs" => c.epochs = parse_num(v, key)?,
        "steps_per_epoch" => c.steps_per_epoch = parse_num(v, key)?,
        "exchange_fraction" => c.exchange_fraction = parse_num(v, key)?,
        "eval_episodes" => c.eval_episodes = parse_num(v, key)?,
        "warmup" => c.warmup = parse_num(v, key)?,
        "replay_capacity" => c.replay_capacity = parse_num(v, key)?,
        _ => return Err(Error::Config(format!("unknown evolution setting '{key}'"))),
    }
    Ok(())
}

fn set_baseline(c: &mut BaselineConfig, key: &str, v: &str) -> Result<()> {
    match key {
        "tau" => c.tau = parse_num(v, key)?,
        "target_delay" => c.target_delay = parse_num(v, key)?,
        "warmup" => c.warmup = parse_num(v, key)?,
        "beta_init" => c.beta_init = parse_num(v, key)?,
        "beta_final" => c.beta_final = parse_num(v, key)?,
        "sr_max_updates" => c.sr_max_updates = parse_num(v, key)?,
        "k_min" => c.k_min = parse_num(v, key)?,
        "k_max" => c.k_max = parse_num(v, key)?,
        "schedule" => c.schedule = v.parse::<KSchedule>()?,
        "eval_interval" => c.eval_interval = parse_num(v, key)?,
        "eval_episodes" => c.eval_episodes = parse_num(v, key)?,
        "replay_capacity" => c.replay_capacity = parse_num(v, key)?,
        _ => return Err(Error::Config(format!("unknown baseline setting '{key}'"))),
    }
    Ok(())
}

fn set_hyper(h: &mut HyperParams, key: &str, v: &str) -> Result<()> {
    match key {
        "a" => h.a = parse_num(v, key)?,
        "c" => h.c = parse_num(v, key)?,
        "h" => h.h = parse_num(v, key)?,
        "k" => h.k = parse_num(v, key)?,
        "g" => h.g = parse_num(v, key)?,
        // convenience: the discount itself
        "gamma" => {
            let gamma: f64 = parse_num(v, key)?;
            if !(gamma > 0.0 && gamma < 1.0) {
                return Err(Error::Config(format!("gamma must be in (0, 1), got {gamma}")));
            }
            h.g = g_from_gamma(gamma);
        }
        _ => return Err(Error::Config(format!("unknown hyperparameter '{key}'"))),
    }
    Ok(())
}
