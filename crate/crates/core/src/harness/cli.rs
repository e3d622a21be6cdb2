//! Command-line front end.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use super::config::{parse_assignment, parse_pairs, RunConfig};
use super::{eval_frequency_sweep, load_checkpoints, mean_over_k, train_with_progress, EnsemblePolicy};
use crate::agent::decode_agent;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, Stream};

/// Exit code for bad arguments or settings.
pub const EXIT_USAGE: i32 = 2;
/// Exit code for failures while running.
pub const EXIT_RUNTIME: i32 = 1;

#[derive(Debug, Parser)]
#[command(name = "aac", version, about = "Population-based actor-critic training and SAC-family baselines")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a population (aac) or a single baseline learner.
    Train {
        /// Settings file of `key = value` lines; flags and --set override it.
        #[arg(long)]
        config: Option<PathBuf>,
        /// aac, sac, sr-sac, k-sac or rand-sac
        #[arg(long)]
        mode: Option<String>,
        /// pendulum, pointmass or newsvendor
        #[arg(long)]
        env: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Total environment steps, warmup included.
        #[arg(long)]
        steps: Option<u64>,
        /// Run directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
        /// Any setting as key=value, e.g. --set agent.hidden=64,64
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
        /// Print the resolved settings and exit.
        #[arg(long)]
        dry_run: bool,
    },
    /// Evaluate a run's final agents (averaged as one ensemble) across persistence values.
    EvalSweep {
        #[arg(long)]
        run: PathBuf,
        /// Comma-separated persistence values; defaults to 1..=k_max.
        #[arg(long, value_delimiter = ',')]
        ks: Vec<usize>,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        /// Report k = 1 in the observation while executing the true k.
        #[arg(long)]
        misleading: bool,
        /// Evaluation seed; defaults to one derived from the run seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output CSV; defaults to sweep.csv or sweep_misleading.csv in the run directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Collect long-format CSVs for plotting from finished runs.
    EmitPlots {
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
    /// Print the settings and network shapes stored in an agent checkpoint.
    InspectCheckpoint { path: PathBuf },
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    let mut stdout = std::io::stdout().lock();
    match execute(cli.command, &mut stdout) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::InvalidInput(_) => EXIT_USAGE,
                _ => EXIT_RUNTIME,
            }
        }
    }
}

fn execute(command: Command, out: &mut dyn Write) -> Result<()> {
    let w = |out: &mut dyn Write, s: String| writeln!(out, "{s}").map_err(|e| Error::io("<stdout>", e));
    match command {
        Command::Train { config, mode, env, seed, steps, out: dir, threads, sets, dry_run } => {
            let mut pairs = match &config {
                Some(path) => {
                    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                    parse_pairs(&text).map_err(|e| e.context(path.display()))?
                }
                None => Vec::new(),
            };
            let flags = [
                ("mode", mode),
                ("env", env),
                ("seed", seed.map(|s| s.to_string())),
                ("steps", steps.map(|s| s.to_string())),
                ("out", dir.map(|d| d.display().to_string())),
                ("threads", threads.map(|t| t.to_string())),
            ];
            pairs.extend(flags.into_iter().filter_map(|(k, v)| v.map(|v| (k.to_string(), v))));
            for s in &sets {
                pairs.push(parse_assignment(s)?);
            }
            let run = RunConfig::from_pairs(&pairs)?;
            if dry_run {
                w(out, format!("# config_hash {}", run.config_hash()))?;
                return out.write_all(run.to_text().as_bytes()).map_err(|e| Error::io("<stdout>", e));
            }
            let summary = train_with_progress(&run, &mut |line| eprintln!("{line}"))?;
            w(out, format!("run directory: {}", summary.dir.display()))?;
            w(out, format!("config hash:   {}", summary.config_hash))?;
            w(out, format!("env steps:     {}", summary.env_steps))?;
            w(out, format!("final return:  {}", summary.final_return))
        }
        Command::EvalSweep { run, ks, episodes, misleading, seed, out: csv_path } => {
            let config = RunConfig::load(&run.join("config.txt"))?;
            let agents = load_checkpoints(&run)?;
            let policy = EnsemblePolicy::from_agents(&agents)?;
            let k_max = config.k_max();
            let ks = if ks.is_empty() { (1..=k_max).collect() } else { ks };
            if let Some(&k) = ks.iter().find(|&&k| k == 0 || k > k_max) {
                return Err(Error::InvalidInput(format!("k = {k} outside 1..={k_max}")));
            }
            let env_seed = seed.unwrap_or_else(|| derive_seed(config.seed, Stream::Custom(u64::MAX)));
            let rows = eval_frequency_sweep(&policy, &config.env, &ks, k_max, episodes, misleading, env_seed)?;
            let path = csv_path.unwrap_or_else(|| run.join(if misleading { "sweep_misleading.csv" } else { "sweep.csv" }));
            let bad = |e: csv::Error| Error::Format(format!("{}: {e}", path.display()));
            let mut writer = csv::Writer::from_path(&path).map_err(bad)?;
            writer
                .write_record(["k", "mean", "std", "episodes", "misleading", "members", "seed", "config_hash"])
                .map_err(bad)?;
            let hash = config.config_hash();
            w(out, format!("{:>4} {:>12} {:>10}", "k", "mean", "std"))?;
            for r in &rows {
                w(out, format!("{:>4} {:>12.3} {:>10.3}", r.k, r.mean, r.std))?;
                writer
                    .write_record([
                        r.k.to_string(),
                        r.mean.to_string(),
                        r.std.to_string(),
                        episodes.to_string(),
                        misleading.to_string(),
                        agents.len().to_string(),
                        config.seed.to_string(),
                        hash.clone(),
                    ])
                    .map_err(bad)?;
            }
            writer.flush().map_err(|e| Error::io(&path, e))?;
            w(out, format!("mean over k: {:.3}", mean_over_k(&rows)))
        }
        Command::EmitPlots { out: dir, runs } => {
            let files = super::emit_plot_data(&runs, &dir)?;
            w(out, files.returns.display().to_string())?;
            w(out, files.hyperparams.display().to_string())
        }
        Command::InspectCheckpoint { path } => {
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            let agent = decode_agent(&bytes).map_err(|e| e.context(path.display()))?;
            let h = &agent.hyper;
            w(out, format!("observation size  {}", agent.obs_dim()))?;
            w(out, format!("action size       {}", agent.action_dim()))?;
            w(out, format!("actor             {:?}", agent.actor.sizes()))?;
            w(out, format!("critics           {:?}", agent.critics[0].sizes()))?;
            w(out, format!("a c h k g         {} {} {} {} {}", h.a, h.c, h.h, h.k, h.g))?;
            w(out, format!("gamma             {}", h.gamma()))?;
            w(out, format!("target entropy    {}", h.target_entropy(agent.action_dim())))?;
            w(out, format!("alpha             {}", agent.alpha()))?;
            w(out, format!("critic steps      {} {}", agent.critic_opts[0].step, agent.critic_opts[1].step))?;
            w(out, format!("actor steps       {}", agent.actor_opt.step))?;
            w(out, format!("settings          {}", serde_json::to_string(&agent.config).expect("config serializes")))
        }
    }
}
