use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
#[cfg(not(any(feature = "std", test)))]
#[allow(unused_imports)]
use num_traits::Float;

/// Learning rate `γ_m` as a function of the step index `m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Schedule {
    Constant { rate: f64 },
    /// `initial · factor^⌊m / period⌋`.
    StepDecay { initial: f64, factor: f64, period: u64 },
    /// `rates[i]` once `m` has passed `i` of the increasing `boundaries`.
    Piecewise { boundaries: Vec<u64>, rates: Vec<f64> },
}

/// Names accepted by [`Schedule::from_name`], besides `constant:<rate>`.
pub const SCHEDULE_NAMES: [&str; 5] = ["allen-cahn", "hjb-multiscale", "hjb-cnn", "bsb-multiscale", "bsb-cnn"];

impl Schedule {
    pub fn from_name(name: &str) -> Result<Self> {
        let s = match name {
            "allen-cahn" => Schedule::Constant { rate: 1e-3 },
            "hjb-multiscale" => Schedule::StepDecay { initial: 0.01, factor: 0.2, period: 1000 },
            "hjb-cnn" => Schedule::Piecewise { boundaries: vec![1000], rates: vec![0.01, 0.005] },
            "bsb-multiscale" => Schedule::StepDecay { initial: 1.0, factor: 0.5, period: 200 },
            "bsb-cnn" => Schedule::StepDecay { initial: 2.0, factor: 0.5, period: 500 },
            other => match other.strip_prefix("constant:").map(str::parse::<f64>) {
                Some(Ok(rate)) => Schedule::Constant { rate },
                _ => return Err(Error::config(format!("unknown schedule {:?}", other))),
            },
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            Schedule::Constant { rate } => rate.is_finite() && *rate > 0.0,
            Schedule::StepDecay { initial, factor, period } => {
                *initial > 0.0 && initial.is_finite() && *factor > 0.0 && factor.is_finite() && *period > 0
            }
            Schedule::Piecewise { boundaries, rates } => {
                rates.len() == boundaries.len() + 1
                    && boundaries.windows(2).all(|w| w[0] < w[1])
                    && rates.iter().all(|r| r.is_finite() && *r > 0.0)
            }
        };
        if !ok {
            return Err(Error::config(format!("invalid learning-rate schedule {:?}", self)));
        }
        Ok(())
    }

    pub fn rate(&self, m: u64) -> f64 {
        match self {
            Schedule::Constant { rate } => *rate,
            Schedule::StepDecay { initial, factor, period } => {
                initial * factor.powi((m / period).min(i32::MAX as u64) as i32)
            }
            Schedule::Piecewise { boundaries, rates } => rates[boundaries.iter().filter(|&&b| m >= b).count()],
        }
    }
}
