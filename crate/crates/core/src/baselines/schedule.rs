use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::eval::mean_std;
use crate::rng::Rng;

/// How a persistence-aware learner picks the persistence for its next
/// training period.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KSchedule {
    Fixed(usize),
    /// Cycle through every k in range.
    Incremental,
    /// Thompson sampling over the per-k returns of the latest evaluation.
    Sampled,
    /// Incremental for the first `delay` periods, then sampled.
    DelayedSampled { delay: usize },
}

impl fmt::Display for KSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KSchedule::Fixed(k) => write!(f, "fixed:{k}"),
            KSchedule::Incremental => f.write_str("incremental"),
            KSchedule::Sampled => f.write_str("sampled"),
            KSchedule::DelayedSampled { delay } => write!(f, "delayed:{delay}"),
        }
    }
}

impl FromStr for KSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown k schedule '{s}' (fixed:K, incremental, sampled, delayed:N)"));
        match s.split_once(':') {
            None if s == "incremental" => Ok(KSchedule::Incremental),
            None if s == "sampled" => Ok(KSchedule::Sampled),
            Some(("fixed", k)) => Ok(KSchedule::Fixed(k.parse().map_err(|_| bad())?)),
            Some(("delayed", d)) => Ok(KSchedule::DelayedSampled { delay: d.parse().map_err(|_| bad())? }),
            _ => Err(bad()),
        }
    }
}

/// Episode returns of the most recent evaluation at each k.
pub type KReturns = [(usize, Vec<f64>)];

impl KSchedule {
    /// Persistence for training period `period` (0-based). `latest` holds
    /// the returns of the evaluation that preceded the period.
    pub fn choose(&self, period: usize, ks: &[usize], latest: &KReturns, rng: &mut Rng) -> usize {
        match *self {
            KSchedule::Fixed(k) => k,
            KSchedule::Incremental => ks[period % ks.len()],
            KSchedule::Sampled => thompson(ks, latest, rng),
            KSchedule::DelayedSampled { delay } if period < delay => ks[period % ks.len()],
            KSchedule::DelayedSampled { .. } => thompson(ks, latest, rng),
        }
    }
}

/// Draws a plausible mean return for every k from `Normal(mean, sd² / n)`
/// and returns the k with the largest draw. Values of k without at least
/// two returns use the spread of all returns, or 1 if there is none; values
/// never evaluated are tried first.
pub fn thompson(ks: &[usize], latest: &KReturns, rng: &mut Rng) -> usize {
    let all: Vec<f64> = latest.iter().flat_map(|(_, r)| r.iter().copied()).collect();
    let fallback_sd = match mean_std(&all).1 {
        s if s > 0.0 => s,
        _ => 1.0,
    };
    let mut best = (f64::NEG_INFINITY, ks[0]);
    for &k in ks {
        let draw = match latest.iter().find(|(kk, _)| *kk == k) {
            None => untried(rng),
            Some((_, r)) if r.is_empty() => untried(rng),
            Some((_, r)) => {
                let (mean, sd) = mean_std(r);
                let sd = if r.len() < 2 { fallback_sd } else { sd / (r.len() as f64).sqrt() };
                if sd > 0.0 {
                    Normal::new(mean, sd).expect("finite parameters").sample(rng)
                } else {
                    mean
                }
            }
        };
        if draw > best.0 {
            best = (draw, k);
        }
    }
    best.1
}

// Untried values win over any measured return; ties among them are random.
fn untried(rng: &mut Rng) -> f64 {
    f64::MAX * rng.random_range(0.5..1.0)
}
