//! Executes a configured run and writes its directory:
//!
//! ```text
//! config.txt      canonical settings
//! manifest.json   mode, env, seed, config hash, totals, file list
//! returns.csv     score curve
//! metrics.csv     training losses
//! population.csv  per-epoch members (aac)
//! exchanges.csv   elite/bad pairings (aac)
//! ksac.csv        per-k evaluations (k-sac)
//! checkpoints/    final agents
//! ```
//!
//! Nothing written depends on wall-clock time, so single-thread reruns give
//! byte-identical files.

use std::fs::{self, File};
use std::path::{Path, PathBuf};

use serde_json::json;

use super::config::{Mode, RunConfig, Trainer};
use crate::agent::{decode_agent, encode_agent, Agent};
use crate::baselines::{rand_sac_make, run_baseline, BaselineConfig, BaselineOutcome, Variant};
use crate::error::{Error, Result};
use crate::evolution::{ranking, run_with_observer, EpochMetrics, RunOutcome};
use crate::rng::{stream, Stream};

const RAND_SAC_DRAW: u64 = 1 << 40;

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub config_hash: String,
    pub env_steps: u64,
    /// Best fitness of the final population, or the final baseline score.
    pub final_return: f64,
    pub files: Vec<String>,
}

/// The baseline settings a run trains with. Rand-SAC draws its settings
/// from the search ranges with a stream of the run seed.
pub fn resolved_baseline(config: &RunConfig) -> Option<BaselineConfig> {
    match &config.trainer {
        Trainer::Baseline { config: c, space: Some(space) } if c.variant == Variant::RandSac => {
            let draw = rand_sac_make(space, &mut stream(config.seed, Stream::Custom(RAND_SAC_DRAW)));
            Some(BaselineConfig { hyper: draw.hyper, tau: draw.tau, k_min: draw.k_min, k_max: draw.k_max, ..c.clone() })
        }
        Trainer::Baseline { config: c, .. } => Some(c.clone()),
        Trainer::Evolution(_) => None,
    }
}

pub fn train(config: &RunConfig) -> Result<RunSummary> {
    train_with_progress(config, &mut |_| {})
}

/// Runs `config` and writes its directory, reporting one line per epoch or
/// evaluation period to `progress`.
pub fn train_with_progress(config: &RunConfig, progress: &mut dyn FnMut(&str)) -> Result<RunSummary> {
    config.validate()?;
    let dir = config.out.clone();
    fs::create_dir_all(dir.join("checkpoints")).map_err(|e| Error::io(&dir, e))?;
    let hash = config.config_hash();
    let header = format!("# seed {} config_hash {hash}\n", config.seed);
    write_file(&dir.join("config.txt"), format!("{header}{}", config.to_text()).as_bytes())?;
    let ctx = ArtifactContext { dir: &dir, seed: config.seed, hash: &hash };

    let (env_steps, final_return, mut files, extra) = match config.mode {
        Mode::Aac => {
            let evo = config.evolution_config().expect("validated");
            let out = run_with_observer(&evo, &config.env, config.seed, &mut |rec, _| {
                let best = rec.best();
                progress(&format!(
                    "epoch {:>4}  env steps {:>9}  best fitness {:>10.3} (member {}, k {})",
                    rec.epoch, rec.env_steps, best.fitness, best.id, best.hyper.k
                ));
                Ok(())
            })?;
            let files = write_evolution(&ctx, &out)?;
            let best = out.last().best().fitness;
            (out.env_steps, best, files, json!({}))
        }
        Mode::Baseline(_) => {
            let bc = resolved_baseline(config).expect("baseline mode");
            let steps = config.steps.expect("validated");
            let out = run_baseline(&bc, &config.env, config.seed, steps)?;
            for c in &out.curve {
                progress(&format!("env steps {:>9}  return {:>10.3} (k {})", c.env_steps, c.mean, c.k));
            }
            let files = write_baseline(&ctx, &out)?;
            let drawn = json!({
                "a": bc.hyper.a, "c": bc.hyper.c, "h": bc.hyper.h, "k": bc.hyper.k, "g": bc.hyper.g,
                "gamma": bc.hyper.gamma(), "tau": bc.tau,
            });
            (out.env_steps, out.final_return(), files, drawn)
        }
    };
    files.insert(0, "config.txt".into());
    let manifest = json!({
        "mode": config.mode.to_string(),
        "env": config.env.id.to_string(),
        "seed": config.seed,
        "config_hash": hash,
        "env_steps": env_steps,
        "final_return": final_return,
        "files": files,
        "settings": extra,
    });
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_file(&dir.join("manifest.json"), text.as_bytes())?;
    files.push("manifest.json".into());
    Ok(RunSummary { dir, config_hash: hash, env_steps, final_return, files })
}

struct ArtifactContext<'a> {
    dir: &'a Path,
    seed: u64,
    hash: &'a str,
}

/// CSV file whose rows all end with the run's seed and config hash.
struct Table {
    path: PathBuf,
    writer: csv::Writer<File>,
    seed: String,
    hash: String,
}

impl Table {
    fn create(ctx: &ArtifactContext, name: &str, columns: &[&str]) -> Result<Self> {
        let path = ctx.dir.join(name);
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut t = Self { path, writer: csv::Writer::from_writer(file), seed: ctx.seed.to_string(), hash: ctx.hash.to_string() };
        let mut header: Vec<&str> = columns.to_vec();
        header.extend(["seed", "config_hash"]);
        t.writer.write_record(&header).map_err(|e| csv_error(&t.path, e))?;
        Ok(t)
    }

    fn row(&mut self, values: &[String]) -> Result<()> {
        let record = values.iter().map(String::as_str).chain([self.seed.as_str(), self.hash.as_str()]);
        self.writer.write_record(record).map_err(|e| csv_error(&self.path, e))
    }

    fn finish(mut self) -> Result<()> {
        self.writer.flush().map_err(|e| Error::io(&self.path, e))
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Format(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

const METRIC_COLUMNS: [&str; 7] = ["steps", "critic_loss", "actor_loss", "entropy", "alpha", "critic_updates", "actor_updates"];

fn metric_values(m: &EpochMetrics) -> [String; 7] {
    [
        m.steps.to_string(),
        m.critic_loss.to_string(),
        m.actor_loss.to_string(),
        m.entropy.to_string(),
        m.alpha.to_string(),
        m.critic_updates.to_string(),
        m.actor_updates.to_string(),
    ]
}

fn write_evolution(ctx: &ArtifactContext, out: &RunOutcome) -> Result<Vec<String>> {
    let mut pop = Table::create(
        ctx,
        "population.csv",
        &["epoch", "env_steps", "member", "rank", "fitness", "inherited", "a", "c", "h", "k", "g", "gamma", "target_entropy", "alpha"],
    )?;
    let mut returns = Table::create(ctx, "returns.csv", &["epoch", "step", "return", "mean_fitness", "member", "k"])?;
    let mut metrics = Table::create(ctx, "metrics.csv", &[&["epoch", "member"][..], &METRIC_COLUMNS].concat())?;
    let mut exchanges = Table::create(ctx, "exchanges.csv", &["epoch", "elite", "bad"])?;
    for rec in &out.records {
        let fitness: Vec<f64> = rec.members.iter().map(|m| m.fitness).collect();
        let mut rank = vec![0; fitness.len()];
        for (r, i) in ranking(&fitness).into_iter().enumerate() {
            rank[i] = r;
        }
        for (m, r) in rec.members.iter().zip(&rank) {
            let h = &m.hyper;
            pop.row(&[
                rec.epoch.to_string(),
                rec.env_steps.to_string(),
                m.id.to_string(),
                r.to_string(),
                m.fitness.to_string(),
                m.inherited.to_string(),
                h.a.to_string(),
                h.c.to_string(),
                h.h.to_string(),
                h.k.to_string(),
                h.g.to_string(),
                m.gamma.to_string(),
                m.target_entropy.to_string(),
                m.alpha.to_string(),
            ])?;
        }
        let best = rec.best();
        let mean = fitness.iter().sum::<f64>() / fitness.len() as f64;
        returns.row(&[
            rec.epoch.to_string(),
            rec.env_steps.to_string(),
            best.fitness.to_string(),
            mean.to_string(),
            best.id.to_string(),
            best.hyper.k.to_string(),
        ])?;
        if rec.epoch > 0 {
            for (id, m) in rec.metrics.iter().enumerate() {
                let mut row = vec![rec.epoch.to_string(), id.to_string()];
                row.extend(metric_values(m));
                metrics.row(&row)?;
            }
        }
        for &(elite, bad) in &rec.pairings {
            exchanges.row(&[rec.epoch.to_string(), elite.to_string(), bad.to_string()])?;
        }
    }
    for t in [pop, returns, metrics, exchanges] {
        t.finish()?;
    }
    let mut files: Vec<String> = ["population.csv", "returns.csv", "metrics.csv", "exchanges.csv"].map(String::from).into();
    for m in &out.population {
        let name = format!("checkpoints/member_{:03}.ckpt", m.id);
        write_file(&ctx.dir.join(&name), &encode_agent(&m.agent))?;
        files.push(name);
    }
    Ok(files)
}

fn write_baseline(ctx: &ArtifactContext, out: &BaselineOutcome) -> Result<Vec<String>> {
    let mut returns = Table::create(ctx, "returns.csv", &["period", "step", "return", "std", "k", "train_k"])?;
    for (p, c) in out.curve.iter().enumerate() {
        returns.row(&[
            p.to_string(),
            c.env_steps.to_string(),
            c.mean.to_string(),
            c.std.to_string(),
            c.k.to_string(),
            c.train_k.to_string(),
        ])?;
    }
    returns.finish()?;
    let mut metrics = Table::create(ctx, "metrics.csv", &[&["period", "step"][..], &METRIC_COLUMNS].concat())?;
    for (p, (steps, m)) in out.metrics.iter().enumerate() {
        let mut row = vec![(p + 1).to_string(), steps.to_string()];
        row.extend(metric_values(m));
        metrics.row(&row)?;
    }
    metrics.finish()?;
    let mut files: Vec<String> = vec!["returns.csv".into(), "metrics.csv".into()];
    if out.config.variant == Variant::KSac {
        let mut table = Table::create(ctx, "ksac.csv", &["period", "step", "k", "return", "std"])?;
        for r in &out.evals {
            table.row(&[r.period.to_string(), r.env_steps.to_string(), r.k.to_string(), r.mean.to_string(), r.std.to_string()])?;
        }
        table.finish()?;
        files.push("ksac.csv".into());
    }
    let name = "checkpoints/agent.ckpt".to_string();
    write_file(&ctx.dir.join(&name), &encode_agent(&out.agent))?;
    files.push(name);
    Ok(files)
}

/// Agents saved in a run directory's `checkpoints/`, in file-name order.
pub fn load_checkpoints(run_dir: &Path) -> Result<Vec<Agent>> {
    let dir = run_dir.join("checkpoints");
    let mut paths: Vec<PathBuf> = fs::read_dir(&dir)
        .map_err(|e| Error::io(&dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "ckpt"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::InvalidInput(format!("no checkpoints in {}", dir.display())));
    }
    paths
        .iter()
        .map(|p| {
            let bytes = fs::read(p).map_err(|e| Error::io(p, e))?;
            decode_agent(&bytes).map_err(|e| e.context(p.display()))
        })
        .collect()
}

/// The parsed `manifest.json` of a run directory.
pub fn read_manifest(run_dir: &Path) -> Result<serde_json::Value> {
    let path = run_dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}
