use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::agent::HyperParams;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Integer search range. Perturbations are uniform over the integers
/// strictly inside `(-delta, delta)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntRange {
    pub min: usize,
    pub max: usize,
    pub delta: usize,
}

/// Real search range. Perturbations are uniform over `[-delta, delta]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RealRange {
    pub min: f64,
    pub max: f64,
    pub delta: f64,
}

impl IntRange {
    pub fn sample(&self, rng: &mut Rng) -> usize {
        rng.random_range(self.min..=self.max)
    }

    pub fn perturb(&self, value: usize, rng: &mut Rng) -> usize {
        let reach = self.delta as i64 - 1;
        let step = rng.random_range(-reach..=reach);
        (value as i64 + step).clamp(self.min as i64, self.max as i64) as usize
    }

    pub fn contains(&self, v: usize) -> bool {
        (self.min..=self.max).contains(&v)
    }

    fn validate(&self, name: &str) -> Result<()> {
        if self.min > self.max || self.delta == 0 {
            return Err(Error::Config(format!("{name}: need min <= max and delta > 0, got {self:?}")));
        }
        Ok(())
    }
}

impl RealRange {
    pub fn sample(&self, rng: &mut Rng) -> f64 {
        rng.random_range(self.min..=self.max)
    }

    pub fn perturb(&self, value: f64, rng: &mut Rng) -> f64 {
        (value + rng.random_range(-self.delta..=self.delta)).clamp(self.min, self.max)
    }

    pub fn contains(&self, v: f64) -> bool {
        (self.min..=self.max).contains(&v)
    }

    fn validate(&self, name: &str) -> Result<()> {
        if !(self.min <= self.max && self.delta > 0.0 && self.min.is_finite() && self.max.is_finite()) {
            return Err(Error::Config(format!("{name}: need min <= max and delta > 0, got {self:?}")));
        }
        Ok(())
    }
}

/// Ranges for the five evolved settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub a: IntRange,
    pub c: IntRange,
    pub h: RealRange,
    pub k: IntRange,
    pub g: RealRange,
}

impl SearchSpace {
    /// The published ranges with persistence up to `k_max`.
    pub fn standard(k_max: usize) -> Self {
        Self {
            a: IntRange { min: 1, max: 10, delta: 2 },
            c: IntRange { min: 1, max: 40, delta: 5 },
            h: RealRange { min: 0.25, max: 1.75, delta: 0.25 },
            k: IntRange { min: 1, max: k_max, delta: 2 },
            g: RealRange { min: -6.5, max: -1.0, delta: 0.5 },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.a.validate("a")?;
        self.c.validate("c")?;
        self.h.validate("h")?;
        self.k.validate("k")?;
        self.g.validate("g")?;
        if self.a.min == 0 || self.c.min == 0 || self.k.min == 0 {
            return Err(Error::Config("a, c and k ranges must start at 1 or above".into()));
        }
        if self.h.min <= 0.0 || self.g.max >= 0.0 {
            return Err(Error::Config("h must be positive and g negative".into()));
        }
        Ok(())
    }

    /// Draws every setting uniformly, in the order a, c, h, k, g.
    pub fn sample(&self, rng: &mut Rng) -> HyperParams {
        HyperParams {
            a: self.a.sample(rng),
            c: self.c.sample(rng),
            h: self.h.sample(rng),
            k: self.k.sample(rng),
            g: self.g.sample(rng),
        }
    }

    /// Perturbs every setting and clamps it back into range, drawing in the
    /// order a, c, h, k, g.
    pub fn perturb(&self, hp: HyperParams, rng: &mut Rng) -> HyperParams {
        HyperParams {
            a: self.a.perturb(hp.a, rng),
            c: self.c.perturb(hp.c, rng),
            h: self.h.perturb(hp.h, rng),
            k: self.k.perturb(hp.k, rng),
            g: self.g.perturb(hp.g, rng),
        }
    }

    pub fn contains(&self, hp: &HyperParams) -> bool {
        self.a.contains(hp.a)
            && self.c.contains(hp.c)
            && self.h.contains(hp.h)
            && self.k.contains(hp.k)
            && self.g.contains(hp.g)
    }
}
