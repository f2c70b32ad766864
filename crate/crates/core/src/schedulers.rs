//! Sensor selection rules: earliest deadline first, the stationary
//! randomized baseline, and the learned policy.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::Observation;
use crate::error::{Error, Result};
use crate::nn::{self, ActorParams, FeatureScale};

/// Minimum slack `threshold - age`; ties go to the lowest index.
///
/// Sensors that are already overdue have negative slack and therefore win,
/// most-overdue first.
pub fn edf_select(ages: &[f64], thresholds: &[f64]) -> usize {
    debug_assert_eq!(ages.len(), thresholds.len());
    let mut best = 0;
    let mut best_slack = f64::INFINITY;
    for (n, (a, t)) in ages.iter().zip(thresholds).enumerate() {
        let slack = t - a;
        if slack < best_slack {
            best = n;
            best_slack = slack;
        }
    }
    best
}

/// Selection probabilities proportional to `1 / threshold`.
pub fn osrp_probs(thresholds: &[f64]) -> Result<Vec<f64>> {
    if thresholds.is_empty() || thresholds.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
        return Err(Error::Distribution(format!(
            "thresholds must be positive, got {thresholds:?}"
        )));
    }
    let total: f64 = thresholds.iter().map(|t| 1.0 / t).sum();
    Ok(thresholds.iter().map(|t| (1.0 / t) / total).collect())
}

fn validate_distribution(probs: &[f64]) -> Result<()> {
    if probs.is_empty() || probs.iter().any(|p| !(*p >= 0.0 && p.is_finite())) {
        return Err(Error::Distribution(format!("bad probabilities {probs:?}")));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Distribution(format!("probabilities sum to {sum}")));
    }
    Ok(())
}

/// Inverse-CDF draw; never returns an index with zero probability.
pub fn sample_categorical(probs: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut cum = 0.0;
    let mut last_positive = 0;
    for (i, p) in probs.iter().enumerate() {
        if *p > 0.0 {
            last_positive = i;
            cum += p;
            if u < cum {
                return i;
            }
        }
    }
    last_positive
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

pub fn osrp_select(probs: &[f64], rng: &mut impl Rng) -> Result<usize> {
    validate_distribution(probs)?;
    Ok(sample_categorical(probs, rng))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectMode {
    Sample,
    Greedy,
}

pub fn policy_select(
    obs: &Observation,
    actor: &ActorParams,
    scale: &FeatureScale,
    mode: SelectMode,
    rng: &mut impl Rng,
) -> Result<usize> {
    let x = nn::featurize(obs, scale, actor.shape())?;
    let probs = nn::forward_actor(actor, &x)?;
    Ok(match mode {
        SelectMode::Greedy => argmax(&probs),
        SelectMode::Sample => sample_categorical(&probs, rng),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchedulerKind {
    Edf,
    Osrp,
    RlSample,
    RlGreedy,
}

/// A ready-to-run selection rule.
#[derive(Debug, Clone)]
pub enum Scheduler {
    Edf {
        thresholds: Vec<f64>,
    },
    Osrp {
        probs: Vec<f64>,
    },
    Policy {
        actor: Box<ActorParams>,
        scale: FeatureScale,
        mode: SelectMode,
    },
}

impl Scheduler {
    pub fn edf(thresholds: Vec<f64>) -> Self {
        Scheduler::Edf { thresholds }
    }

    pub fn osrp(thresholds: &[f64]) -> Result<Self> {
        Ok(Scheduler::Osrp {
            probs: osrp_probs(thresholds)?,
        })
    }

    pub fn policy(actor: ActorParams, scale: FeatureScale, mode: SelectMode) -> Self {
        Scheduler::Policy {
            actor: Box::new(actor),
            scale,
            mode,
        }
    }

    pub fn kind(&self) -> SchedulerKind {
        match self {
            Scheduler::Edf { .. } => SchedulerKind::Edf,
            Scheduler::Osrp { .. } => SchedulerKind::Osrp,
            Scheduler::Policy {
                mode: SelectMode::Sample,
                ..
            } => SchedulerKind::RlSample,
            Scheduler::Policy {
                mode: SelectMode::Greedy,
                ..
            } => SchedulerKind::RlGreedy,
        }
    }

    /// Short label used in reports: `EDF`, `OSRP` or `RL`.
    pub fn label(&self) -> &'static str {
        match self {
            Scheduler::Edf { .. } => "EDF",
            Scheduler::Osrp { .. } => "OSRP",
            Scheduler::Policy { .. } => "RL",
        }
    }

    pub fn select(&self, obs: &Observation, rng: &mut impl Rng) -> Result<usize> {
        match self {
            Scheduler::Edf { thresholds } => {
                if thresholds.len() != obs.ages.len() {
                    return Err(Error::Shape(format!(
                        "{} thresholds for {} sensors",
                        thresholds.len(),
                        obs.ages.len()
                    )));
                }
                Ok(edf_select(&obs.ages, thresholds))
            }
            Scheduler::Osrp { probs } => {
                if probs.len() != obs.ages.len() {
                    return Err(Error::Shape(format!(
                        "{} probabilities for {} sensors",
                        probs.len(),
                        obs.ages.len()
                    )));
                }
                osrp_select(probs, rng)
            }
            Scheduler::Policy { actor, scale, mode } => policy_select(obs, actor, scale, *mode, rng),
        }
    }
}
