//! Time-indexed scalar hyperparameters (`α_t`, `η_t`, `γ_t`).

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Schedule {
    Constant(f64),
    /// Linear from `from` at `t = 1` to `to` at `t = horizon`.
    Ramp { from: f64, to: f64, horizon: usize },
    /// Explicit values indexed by `t`; entry 0 is the value at `t = 0`.
    Values(Vec<f64>),
}

impl Schedule {
    pub fn at(&self, t: usize) -> f64 {
        match self {
            Schedule::Constant(v) => *v,
            Schedule::Ramp { from, to, horizon } => {
                if *horizon <= 1 {
                    *from
                } else {
                    let frac = (t.clamp(1, *horizon) - 1) as f64 / (*horizon - 1) as f64;
                    from + (to - from) * frac
                }
            }
            Schedule::Values(v) => {
                assert!(t < v.len(), "schedule has no value for t = {t}");
                v[t]
            }
        }
    }

    /// Values for `t = 0 ..= horizon`.
    pub fn materialize(&self, horizon: usize) -> Vec<f64> {
        (0..=horizon).map(|t| self.at(t)).collect()
    }

    /// Checks `lo <= value` (and `value <= hi` when given) for `t = first ..= horizon`.
    pub fn check_range(&self, name: &str, first: usize, horizon: usize, lo: f64, hi: Option<f64>) -> Result<()> {
        if let Schedule::Values(v) = self {
            if v.len() <= horizon {
                return Err(Error::Dimension(format!(
                    "{name} schedule has {} entries, horizon {horizon} needs {}",
                    v.len(),
                    horizon + 1
                )));
            }
        }
        for t in first..=horizon {
            let x = self.at(t);
            if !x.is_finite() || x < lo || hi.is_some_and(|h| x > h) {
                return Err(Error::DomainError(format!("{name}_{t} = {x} out of range")));
            }
        }
        Ok(())
    }
}

/// Scalar hyperparameter as a function of continuous time.
#[derive(Debug, Clone, PartialEq)]
pub enum TimeSchedule {
    Constant(f64),
    /// Linear from `from` at `t = 0` to `to` at `t = horizon`, constant afterwards.
    Ramp { from: f64, to: f64, horizon: f64 },
}

impl TimeSchedule {
    pub fn at(&self, t: f64) -> f64 {
        match *self {
            TimeSchedule::Constant(v) => v,
            TimeSchedule::Ramp { from, to, horizon } => {
                if horizon <= 0.0 {
                    to
                } else {
                    from + (to - from) * (t / horizon).clamp(0.0, 1.0)
                }
            }
        }
    }
}
