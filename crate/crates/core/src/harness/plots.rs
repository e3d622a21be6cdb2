//! Long-format CSVs collected from finished run directories.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::run::read_manifest;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlotFiles {
    /// `env, algorithm, seed, config_hash, step, return`
    pub returns: PathBuf,
    /// `env, seed, config_hash, epoch, param, value` for the best member of
    /// every evolution epoch.
    pub hyperparams: PathBuf,
}

const PARAMS: [&str; 5] = ["a", "c", "h", "k", "g"];

/// Reads every run directory first and writes `returns_long.csv` and
/// `hyperparams_long.csv` into `out` only if all of them are readable.
pub fn emit_plot_data(run_dirs: &[PathBuf], out: &Path) -> Result<PlotFiles> {
    if run_dirs.is_empty() {
        return Err(Error::InvalidInput("no run directories given".into()));
    }
    let mut returns = Vec::new();
    let mut hyper = Vec::new();
    for dir in run_dirs {
        let ctx = |e: Error| e.context(format!("run directory {}", dir.display()));
        let manifest = read_manifest(dir).map_err(ctx)?;
        let field = |name: &str| -> Result<String> {
            match manifest.get(name) {
                Some(serde_json::Value::String(s)) => Ok(s.clone()),
                Some(serde_json::Value::Number(n)) => Ok(n.to_string()),
                _ => Err(Error::Format(format!("manifest lacks '{name}'"))),
            }
        };
        let (mode, env, seed, hash) = (
            field("mode").map_err(ctx)?,
            field("env").map_err(ctx)?,
            field("seed").map_err(ctx)?,
            field("config_hash").map_err(ctx)?,
        );
        for row in read_table(&dir.join("returns.csv"), &["step", "return"]).map_err(ctx)? {
            returns.push([env.clone(), mode.clone(), seed.clone(), hash.clone(), row[0].clone(), row[1].clone()]);
        }
        if mode == "aac" {
            let columns = [&["epoch", "rank"][..], &PARAMS].concat();
            for row in read_table(&dir.join("population.csv"), &columns).map_err(ctx)? {
                if row[1] == "0" {
                    for (p, v) in PARAMS.iter().zip(&row[2..]) {
                        hyper.push([env.clone(), seed.clone(), hash.clone(), row[0].clone(), p.to_string(), v.clone()]);
                    }
                }
            }
        }
    }
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let files = PlotFiles { returns: out.join("returns_long.csv"), hyperparams: out.join("hyperparams_long.csv") };
    write_rows(&files.returns, &["env", "algorithm", "seed", "config_hash", "step", "return"], &returns)?;
    write_rows(&files.hyperparams, &["env", "seed", "config_hash", "epoch", "param", "value"], &hyper)?;
    Ok(files)
}

/// The named columns of every row in a CSV with a header.
fn read_table(path: &Path, columns: &[&str]) -> Result<Vec<Vec<String>>> {
    let bad = |e: csv::Error| Error::Format(format!("{}: {e}", path.display()));
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other:?}", path.display())),
    })?;
    let header: HashMap<String, usize> =
        reader.headers().map_err(bad)?.iter().enumerate().map(|(i, h)| (h.to_string(), i)).collect();
    let idx: Vec<usize> = columns
        .iter()
        .map(|c| header.get(*c).copied().ok_or_else(|| Error::Format(format!("{}: missing column '{c}'", path.display()))))
        .collect::<Result<_>>()?;
    reader
        .records()
        .map(|r| {
            let r = r.map_err(bad)?;
            idx.iter()
                .map(|&i| r.get(i).map(str::to_string).ok_or_else(|| Error::Format(format!("{}: short row", path.display()))))
                .collect()
        })
        .collect()
}

fn write_rows<const N: usize>(path: &Path, header: &[&str; N], rows: &[[String; N]]) -> Result<()> {
    let bad = |e: csv::Error| Error::Format(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(bad)?;
    w.write_record(header).map_err(bad)?;
    for r in rows {
        w.write_record(r).map_err(bad)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
