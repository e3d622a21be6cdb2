//! Python bindings: environments, agents, the replay buffer and the
//! training/evaluation entry points.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use aac_core::agent::{self, decode_agent, encode_agent, AgentConfig, HyperParams};
use aac_core::envs::{EnvFactory, EnvId, PersistenceWrapper, Transition};
use aac_core::harness::{self, EnsemblePolicy, RunConfig};
use aac_core::replay::{Layout, ReplayBuffer};
use aac_core::rng::{derive_seed, stream, Rng, Stream};
use aac_core::Error;

fn err(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::InvalidInput(_) => PyValueError::new_err(e.to_string()),
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn env_id(name: &str) -> PyResult<EnvId> {
    name.parse().map_err(err)
}

/// A built-in environment behind the action-persistence wrapper.
#[pyclass(name = "Env", unsendable)]
struct PyEnv {
    inner: PersistenceWrapper,
}

#[pymethods]
impl PyEnv {
    #[new]
    #[pyo3(signature = (name, k = 1, k_max = None, seed = 0))]
    fn new(name: &str, k: usize, k_max: Option<usize>, seed: u64) -> PyResult<Self> {
        let id = env_id(name)?;
        let env = EnvFactory::new(id).make(seed).map_err(err)?;
        let inner = PersistenceWrapper::new(env, k_max.unwrap_or(id.default_k_max()), k).map_err(err)?;
        Ok(Self { inner })
    }

    /// Starts an episode and returns the observation (persistence slot last).
    fn reset(&mut self) -> Vec<f64> {
        self.inner.reset()
    }

    /// Holds `action` for k steps. Returns `(observation, rewards, done, truncated)`.
    fn step(&mut self, action: Vec<f64>) -> PyResult<(Vec<f64>, Vec<f64>, bool, bool)> {
        let s = self.inner.step(&action).map_err(err)?;
        Ok((s.transition.next_state, s.transition.rewards, s.transition.done, s.truncated))
    }

    fn set_k(&mut self, k: usize) -> PyResult<()> {
        self.inner.set_k(k).map_err(err)
    }

    /// Reports `k` in the observation instead of the executed value; `None` restores it.
    #[pyo3(signature = (k = None))]
    fn set_reported_k(&mut self, k: Option<usize>) {
        self.inner.set_reported_k(k);
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k()
    }

    #[getter]
    fn k_max(&self) -> usize {
        self.inner.k_max()
    }

    #[getter]
    fn obs_dim(&self) -> usize {
        self.inner.obs_dim()
    }

    #[getter]
    fn action_dim(&self) -> usize {
        self.inner.spec().action_dim
    }
}

#[pyclass(name = "ReplayBuffer")]
struct PyReplayBuffer {
    inner: ReplayBuffer,
}

#[pymethods]
impl PyReplayBuffer {
    #[new]
    fn new(obs_dim: usize, action_dim: usize, k_max: usize, capacity: usize) -> PyResult<Self> {
        let inner = ReplayBuffer::new(Layout { obs_dim, action_dim, k_max }, capacity).map_err(err)?;
        Ok(Self { inner })
    }

    fn push(
        &mut self,
        state: Vec<f64>,
        action: Vec<f64>,
        rewards: Vec<f64>,
        next_state: Vec<f64>,
        done: bool,
        k: usize,
    ) -> PyResult<()> {
        self.inner.push(&Transition { state, action, rewards, next_state, done, k }).map_err(err)
    }

    /// Uniform sample with replacement as a dict of per-row lists.
    fn sample<'py>(&self, py: Python<'py>, batch_size: usize, seed: u64) -> PyResult<Bound<'py, PyDict>> {
        let batch = self.inner.sample(batch_size, &mut stream(seed, Stream::Custom(0))).map_err(err)?;
        let rows: Vec<Transition> = (0..batch.size).map(|i| batch.transition(i)).collect();
        let d = PyDict::new(py);
        d.set_item("state", rows.iter().map(|t| t.state.clone()).collect::<Vec<_>>())?;
        d.set_item("action", rows.iter().map(|t| t.action.clone()).collect::<Vec<_>>())?;
        d.set_item("rewards", rows.iter().map(|t| t.rewards.clone()).collect::<Vec<_>>())?;
        d.set_item("next_state", rows.iter().map(|t| t.next_state.clone()).collect::<Vec<_>>())?;
        d.set_item("done", rows.iter().map(|t| t.done).collect::<Vec<_>>())?;
        d.set_item("k", rows.iter().map(|t| t.k).collect::<Vec<_>>())?;
        Ok(d)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn capacity(&self) -> usize {
        self.inner.capacity()
    }

    #[getter]
    fn total_pushed(&self) -> u64 {
        self.inner.total_pushed()
    }
}

/// Squashed-Gaussian actor with twin critics.
#[pyclass(name = "Agent")]
struct PyAgent {
    inner: agent::Agent,
    rng: Rng,
}

#[pymethods]
impl PyAgent {
    /// `config` is "aac" (self-regularized critics) or "sac".
    #[new]
    #[pyo3(signature = (obs_dim, action_dim, seed = 0, hidden = None, config = "aac", a = 1, c = 1, h = 1.0, k = 1, gamma = 0.99))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        obs_dim: usize,
        action_dim: usize,
        seed: u64,
        hidden: Option<Vec<usize>>,
        config: &str,
        a: usize,
        c: usize,
        h: f64,
        k: usize,
        gamma: f64,
    ) -> PyResult<Self> {
        let mut cfg = match config {
            "aac" => AgentConfig::aac(),
            "sac" => AgentConfig::sac(),
            other => return Err(PyValueError::new_err(format!("unknown agent config '{other}' (aac or sac)"))),
        };
        if let Some(hidden) = hidden {
            cfg.hidden = hidden;
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(PyValueError::new_err(format!("gamma {gamma} outside (0, 1)")));
        }
        let hyper = HyperParams { a, c, h, k, g: agent::g_from_gamma(gamma) };
        let inner = agent::Agent::new(obs_dim, action_dim, hyper, cfg, &mut stream(seed, Stream::Init(0))).map_err(err)?;
        Ok(Self { inner, rng: stream(seed, Stream::Learner(0)) })
    }

    /// Loads a checkpoint written by `save` or by a training run.
    #[staticmethod]
    #[pyo3(signature = (path, seed = 0))]
    fn load(path: PathBuf, seed: u64) -> PyResult<Self> {
        let bytes = std::fs::read(&path).map_err(|e| PyIOError::new_err(format!("{}: {e}", path.display())))?;
        let inner = decode_agent(&bytes).map_err(err)?;
        Ok(Self { inner, rng: stream(seed, Stream::Learner(0)) })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        std::fs::write(&path, encode_agent(&self.inner)).map_err(|e| PyIOError::new_err(format!("{}: {e}", path.display())))
    }

    /// tanh of the policy mean, or a sample when `stochastic`.
    #[pyo3(signature = (obs, stochastic = false))]
    fn act(&mut self, obs: Vec<f64>, stochastic: bool) -> PyResult<Vec<f64>> {
        self.inner.act(&obs, stochastic, &mut self.rng).map_err(err)
    }

    /// One training step (c critic updates, a actor updates) on `buffer`.
    fn train_step<'py>(&mut self, py: Python<'py>, buffer: PyRef<'_, PyReplayBuffer>) -> PyResult<Bound<'py, PyDict>> {
        let m = self.inner.train_step(&buffer.inner, &mut self.rng).map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("critic_loss", m.critic_loss)?;
        d.set_item("actor_loss", m.actor_loss)?;
        d.set_item("alpha", m.alpha)?;
        d.set_item("entropy", m.entropy)?;
        d.set_item("critic_updates", m.critic_updates)?;
        d.set_item("actor_updates", m.actor_updates)?;
        Ok(d)
    }

    /// The clipped (minimum) critic value of each (state, action) row.
    fn q_value(&self, states: Vec<Vec<f64>>, actions: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        let s: Vec<f64> = states.concat();
        let a: Vec<f64> = actions.concat();
        let q = self.inner.q_values(&self.inner.critics, &self.inner.critic_inputs(&s, &a)).map_err(err)?;
        Ok(q[0].iter().zip(&q[1]).map(|(x, y)| x.min(*y)).collect())
    }

    #[getter]
    fn hyper<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let h = &self.inner.hyper;
        let d = PyDict::new(py);
        d.set_item("a", h.a)?;
        d.set_item("c", h.c)?;
        d.set_item("h", h.h)?;
        d.set_item("k", h.k)?;
        d.set_item("g", h.g)?;
        d.set_item("gamma", h.gamma())?;
        Ok(d)
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.inner.alpha()
    }

    #[getter]
    fn obs_dim(&self) -> usize {
        self.inner.obs_dim()
    }

    #[getter]
    fn action_dim(&self) -> usize {
        self.inner.action_dim()
    }
}

/// Multi-step TD target for a reward array executed with persistence `k`.
#[pyfunction]
#[pyo3(signature = (rewards, k, done, gamma, bootstrap, offset = 1))]
fn td_target(rewards: Vec<f64>, k: usize, done: bool, gamma: f64, bootstrap: f64, offset: u32) -> PyResult<f64> {
    if k == 0 || k > rewards.len() {
        return Err(PyValueError::new_err(format!("k = {k} outside 1..={}", rewards.len())));
    }
    Ok(agent::td_target(&rewards, k, done, gamma, offset, bootstrap))
}

#[pyfunction]
fn discounted_return(rewards: Vec<f64>, gamma: f64) -> f64 {
    harness::discounted_return(&rewards, gamma)
}

fn run_config(settings: &Bound<'_, PyDict>) -> PyResult<RunConfig> {
    let mut pairs = Vec::new();
    for (k, v) in settings.iter() {
        pairs.push((k.str()?.to_string(), v.str()?.to_string()));
    }
    RunConfig::from_pairs(&pairs).map_err(err)
}

/// Canonical settings text for a dict of `key: value` settings.
#[pyfunction]
fn resolve_config(settings: &Bound<'_, PyDict>) -> PyResult<(String, String)> {
    let config = run_config(settings)?;
    Ok((config.config_hash(), config.to_text()))
}

/// Trains from a dict of settings (same keys as the CLI's `--set`) and
/// writes the run directory. Releases the GIL while training.
#[pyfunction]
fn train<'py>(py: Python<'py>, settings: &Bound<'py, PyDict>) -> PyResult<Bound<'py, PyDict>> {
    let config = run_config(settings)?;
    let summary = py.detach(|| harness::train(&config)).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("dir", summary.dir.display().to_string())?;
    d.set_item("config_hash", summary.config_hash)?;
    d.set_item("env_steps", summary.env_steps)?;
    d.set_item("final_return", summary.final_return)?;
    d.set_item("files", summary.files)?;
    Ok(d)
}

/// Evaluates the ensemble of a run's checkpoints at each persistence value.
/// Returns `(k, mean, std)` rows.
#[pyfunction]
#[pyo3(signature = (run, ks = None, episodes = 10, misleading = false, seed = None))]
fn eval_sweep(
    py: Python<'_>,
    run: PathBuf,
    ks: Option<Vec<usize>>,
    episodes: usize,
    misleading: bool,
    seed: Option<u64>,
) -> PyResult<Vec<(usize, f64, f64)>> {
    let config = RunConfig::load(&run.join("config.txt")).map_err(err)?;
    let agents = harness::load_checkpoints(&run).map_err(err)?;
    let policy = EnsemblePolicy::from_agents(&agents).map_err(err)?;
    let k_max = config.k_max();
    let ks = ks.unwrap_or_else(|| (1..=k_max).collect());
    let env_seed = seed.unwrap_or_else(|| derive_seed(config.seed, Stream::Custom(u64::MAX)));
    let rows = py
        .detach(|| harness::eval_frequency_sweep(&policy, &config.env, &ks, k_max, episodes, misleading, env_seed))
        .map_err(err)?;
    Ok(rows.into_iter().map(|r| (r.k, r.mean, r.std)).collect())
}

/// Writes long-format plot CSVs for the given run directories into `out`.
#[pyfunction]
fn emit_plots(runs: Vec<PathBuf>, out: PathBuf) -> PyResult<(String, String)> {
    let files = harness::emit_plot_data(&runs, &out).map_err(err)?;
    Ok((files.returns.display().to_string(), files.hyperparams.display().to_string()))
}

#[pymodule]
fn aac(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyEnv>()?;
    m.add_class::<PyReplayBuffer>()?;
    m.add_class::<PyAgent>()?;
    m.add_function(wrap_pyfunction!(td_target, m)?)?;
    m.add_function(wrap_pyfunction!(discounted_return, m)?)?;
    m.add_function(wrap_pyfunction!(resolve_config, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(eval_sweep, m)?)?;
    m.add_function(wrap_pyfunction!(emit_plots, m)?)?;
    Ok(())
}
