use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::probability::{derive_params, DerivedParams};
use crate::error::{Error, Result};

pub const DEFAULT_FANOUT: usize = 32;

/// How `K` and `L` were chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParamMode {
    /// Derived from `(n, t, c, w0)` by [`derive_params`].
    Theoretical,
    /// Given explicitly.
    Practical,
}

/// How the candidate budget is charged across radius rounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BudgetMode {
    /// One budget of `2tL + k` distinct verified points for the whole query.
    #[default]
    Cumulative,
    /// A fresh `2tL + k` per round, counting every point a window yields.
    PerRound,
}

macro_rules! str_enum {
    ($ty:ty { $($variant:ident => $text:literal),+ $(,)? }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $(Self::$variant => $text),+ })
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok(Self::$variant),)+
                    other => Err(Error::param(format!(
                        concat!("unknown ", stringify!($ty), " {:?}"),
                        other
                    ))),
                }
            }
        }
    };
}

str_enum!(ParamMode { Theoretical => "theoretical", Practical => "practical" });
str_enum!(BudgetMode { Cumulative => "cumulative", PerRound => "per-round" });

/// Everything needed to rebuild an index deterministically.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndexParams {
    /// Approximation ratio, `> 1`.
    pub c: f64,
    /// Window width at radius 1; the width at radius `r` is `w0 * r`.
    pub w0: f64,
    /// Candidate multiplier: a query verifies at most `2tL + k` points.
    pub t: usize,
    pub k: usize,
    pub l: usize,
    pub mode: ParamMode,
    pub seed: u64,
    pub fanout: usize,
    pub budget: BudgetMode,
    /// Coordinates are multiplied by this before hashing so that radius 1 is
    /// on the order of the nearest-neighbor distance.
    pub scale: f64,
}

impl IndexParams {
    pub fn practical(c: f64, w0: f64, t: usize, k: usize, l: usize, seed: u64) -> Result<Self> {
        let params = IndexParams {
            c,
            w0,
            t,
            k,
            l,
            mode: ParamMode::Practical,
            seed,
            fanout: DEFAULT_FANOUT,
            budget: BudgetMode::Cumulative,
            scale: 1.0,
        };
        params.validate()?;
        Ok(params)
    }

    /// `K` and `L` derived for a dataset of `n` points.
    pub fn theoretical(n: usize, t: usize, c: f64, w0: f64, seed: u64) -> Result<Self> {
        let DerivedParams { k, l, .. } = derive_params(n, t, c, w0)?;
        let params = IndexParams {
            c,
            w0,
            t,
            k,
            l,
            mode: ParamMode::Theoretical,
            seed,
            fanout: DEFAULT_FANOUT,
            budget: BudgetMode::Cumulative,
            scale: 1.0,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn with_fanout(mut self, fanout: usize) -> Self {
        self.fanout = fanout;
        self
    }

    pub fn with_budget(mut self, budget: BudgetMode) -> Self {
        self.budget = budget;
        self
    }

    pub fn with_scale(mut self, scale: f64) -> Self {
        self.scale = scale;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c > 1.0 && self.c.is_finite()) {
            return Err(Error::param(format!("c must exceed 1, got {}", self.c)));
        }
        if !(self.w0 > 0.0 && self.w0.is_finite()) {
            return Err(Error::param(format!(
                "w0 must be positive, got {}",
                self.w0
            )));
        }
        if self.t == 0 {
            return Err(Error::param("t must be at least 1"));
        }
        if self.k == 0 || self.l == 0 {
            return Err(Error::param(format!(
                "K and L must be at least 1 (K = {}, L = {})",
                self.k, self.l
            )));
        }
        if self.fanout < 3 {
            return Err(Error::param(format!(
                "fanout must be at least 3, got {}",
                self.fanout
            )));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::param(format!(
                "scale must be positive, got {}",
                self.scale
            )));
        }
        Ok(())
    }

    /// In theoretical mode, checks that `K` and `L` match the derivation for `n`.
    pub fn validate_for(&self, n: usize) -> Result<()> {
        self.validate()?;
        if self.mode == ParamMode::Theoretical {
            let d = derive_params(n, self.t, self.c, self.w0)?;
            if (d.k, d.l) != (self.k, self.l) {
                return Err(Error::param(format!(
                    "theoretical parameters for n = {n} are K = {}, L = {}, not K = {}, L = {}",
                    d.k, d.l, self.k, self.l
                )));
            }
        }
        Ok(())
    }

    /// `2tL + k`.
    pub fn candidate_budget(&self, k: usize) -> usize {
        2 * self.t * self.l + k
    }
}
