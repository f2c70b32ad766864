//! The scheduling environment.
//!
//! Each step ("job") the controller picks one sensor, which transmits a single
//! packet until it is received. Failed attempts are retransmitted, and every
//! attempt is timed against the trace rate at its start. When the job ends
//! the served sensor's age becomes the job duration and every other age grows
//! by that duration.

use std::collections::VecDeque;
use std::io::{Read, Write};
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::{self, StreamRng};
use crate::traces::Trace;

pub const DEFAULT_MAX_ATTEMPTS: u32 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorConfig {
    /// Bytes per packet.
    pub packet_size: f64,
    /// AoI threshold in ms.
    pub threshold: f64,
    /// Penalty charged per job while the age exceeds the threshold.
    pub penalty: f64,
}

impl SensorConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.packet_size > 0.0
            && self.packet_size.is_finite()
            && self.threshold > 0.0
            && self.threshold.is_finite()
            && self.penalty >= 0.0
            && self.penalty.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid sensor {self:?}")))
        }
    }

    /// The reference ten-sensor style layout: sizes 50, 100, .. bytes,
    /// thresholds 30, 50, .. ms and penalties `1000 * (N - n) / N`.
    pub fn reference_set(count: usize) -> Vec<SensorConfig> {
        (0..count)
            .map(|n| SensorConfig {
                packet_size: 50.0 * (n + 1) as f64,
                threshold: 30.0 + 20.0 * n as f64,
                penalty: 1000.0 * (count - n) as f64 / count as f64,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub sensors: Vec<SensorConfig>,
    /// Per-attempt delivery probability.
    pub success_prob: f64,
    /// Number of past jobs whose achieved throughput is observed.
    pub history_len: usize,
    #[serde(default = "default_max_attempts")]
    pub max_attempts: u32,
}

fn default_max_attempts() -> u32 {
    DEFAULT_MAX_ATTEMPTS
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sensors.is_empty() {
            return Err(Error::Config("at least one sensor is required".into()));
        }
        for s in &self.sensors {
            s.validate()?;
        }
        if !(self.success_prob > 0.0 && self.success_prob <= 1.0) {
            return Err(Error::Config(format!(
                "success_prob must lie in (0, 1], got {}",
                self.success_prob
            )));
        }
        if self.history_len == 0 {
            return Err(Error::Config("history_len must be >= 1".into()));
        }
        if self.max_attempts == 0 {
            return Err(Error::Config("max_attempts must be >= 1".into()));
        }
        Ok(())
    }

    pub fn num_sensors(&self) -> usize {
        self.sensors.len()
    }

    pub fn thresholds(&self) -> Vec<f64> {
        self.sensors.iter().map(|s| s.threshold).collect()
    }

    pub fn penalties(&self) -> Vec<f64> {
        self.sensors.iter().map(|s| s.penalty).collect()
    }

    /// Hex SHA-256 of the canonical JSON form. Checkpoints record it so a
    /// policy is only evaluated against the environment it was trained for.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("environment config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

/// What the scheduler sees before choosing the next sensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub ages: Vec<f64>,
    /// Achieved throughput of the last `history_len` jobs, oldest first.
    pub recent_throughput: Vec<f64>,
    pub last_service_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceOutcome {
    pub attempts: u32,
    pub attempt_rates: Vec<f64>,
    pub duration: f64,
    /// Set when the retransmission cap ended the job.
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub action: usize,
    pub observation: Observation,
    pub reward: f64,
    pub outcome: ServiceOutcome,
    pub violations: Vec<bool>,
}

/// Decides whether each transmission attempt is delivered.
pub trait DropSource: Send {
    fn attempt_succeeds(&mut self, success_prob: f64) -> bool;
}

/// Independent Bernoulli trials from a seeded stream.
#[derive(Debug, Clone)]
pub struct RandomDrops(StreamRng);

impl RandomDrops {
    pub fn new(seed: u64) -> Self {
        RandomDrops(rng::stream(seed, "drops", 0))
    }
}

impl DropSource for RandomDrops {
    fn attempt_succeeds(&mut self, success_prob: f64) -> bool {
        // p = 1 must never consume randomness-dependent failures.
        success_prob >= 1.0 || self.0.random::<f64>() < success_prob
    }
}

/// Replays a fixed outcome sequence, then succeeds forever.
#[derive(Debug, Clone, Default)]
pub struct ScriptedDrops(VecDeque<bool>);

impl ScriptedDrops {
    pub fn new(outcomes: impl IntoIterator<Item = bool>) -> Self {
        ScriptedDrops(outcomes.into_iter().collect())
    }
}

impl DropSource for ScriptedDrops {
    fn attempt_succeeds(&mut self, _success_prob: f64) -> bool {
        self.0.pop_front().unwrap_or(true)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub ages: Vec<f64>,
    pub job_index: u64,
    /// ms of trace time; starts at the episode's offset.
    pub clock: f64,
    pub recent_throughput: VecDeque<f64>,
    pub last_service_time: f64,
}

impl EnvState {
    pub fn initial(config: &EnvConfig, start_offset: f64) -> Self {
        EnvState {
            ages: vec![0.0; config.num_sensors()],
            job_index: 0,
            clock: start_offset,
            recent_throughput: std::iter::repeat_n(0.0, config.history_len).collect(),
            last_service_time: 0.0,
        }
    }

    pub fn observe(&self) -> Observation {
        Observation {
            ages: self.ages.clone(),
            recent_throughput: self.recent_throughput.iter().copied().collect(),
            last_service_time: self.last_service_time,
        }
    }
}

/// Serves one packet from sensor `n`, advancing `state.clock` by the total
/// service time. Ages are left untouched.
pub fn transmit(
    state: &mut EnvState,
    n: usize,
    config: &EnvConfig,
    trace: &Trace,
    drops: &mut dyn DropSource,
) -> Result<ServiceOutcome> {
    let sensor = config.sensors.get(n).ok_or(Error::ActionOutOfRange {
        action: n,
        sensors: config.num_sensors(),
    })?;
    let start = state.clock;
    let mut elapsed = 0.0;
    let mut attempt_rates = Vec::with_capacity(1);
    let mut truncated = false;
    loop {
        let rate = trace.rate_at(start + elapsed);
        attempt_rates.push(rate);
        elapsed += sensor.packet_size / rate;
        if drops.attempt_succeeds(config.success_prob) {
            break;
        }
        if attempt_rates.len() as u32 >= config.max_attempts {
            truncated = true;
            break;
        }
    }
    state.clock = start + elapsed;
    Ok(ServiceOutcome {
        attempts: attempt_rates.len() as u32,
        attempt_rates,
        duration: elapsed,
        truncated,
    })
}

/// `R = -sum(a) - sum(penalty * [a > threshold])`, with per-sensor flags.
pub fn reward(config: &EnvConfig, ages: &[f64]) -> (f64, Vec<bool>) {
    let mut age_sum = 0.0;
    let mut penalty_sum = 0.0;
    let mut violations = Vec::with_capacity(ages.len());
    for (a, s) in ages.iter().zip(&config.sensors) {
        age_sum += a;
        let violated = *a > s.threshold;
        if violated {
            penalty_sum += s.penalty;
        }
        violations.push(violated);
    }
    (-age_sum - penalty_sum, violations)
}

/// A single simulated channel with its sensors.
pub struct Env {
    config: EnvConfig,
    trace: Arc<Trace>,
    state: EnvState,
    drops: Box<dyn DropSource>,
}

impl Env {
    pub fn new(config: EnvConfig, trace: Arc<Trace>) -> Result<Self> {
        config.validate()?;
        let state = EnvState::initial(&config, 0.0);
        Ok(Env {
            config,
            trace,
            state,
            drops: Box::new(RandomDrops::new(0)),
        })
    }

    /// Zeroes all ages and history and reseeds the drop stream.
    pub fn reset(&mut self, seed: u64, start_offset: f64) -> Observation {
        debug_assert!(start_offset >= 0.0);
        self.state = EnvState::initial(&self.config, start_offset);
        self.drops = Box::new(RandomDrops::new(seed));
        self.state.observe()
    }

    pub fn set_trace(&mut self, trace: Arc<Trace>) {
        self.trace = trace;
    }

    /// Replaces the drop model, e.g. with a [`ScriptedDrops`] in tests.
    pub fn set_drop_source(&mut self, drops: Box<dyn DropSource>) {
        self.drops = drops;
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn trace(&self) -> &Arc<Trace> {
        &self.trace
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn observe(&self) -> Observation {
        self.state.observe()
    }

    pub fn step(&mut self, action: usize) -> Result<StepResult> {
        let n_sensors = self.config.num_sensors();
        if action >= n_sensors {
            return Err(Error::ActionOutOfRange {
                action,
                sensors: n_sensors,
            });
        }
        let outcome = transmit(
            &mut self.state,
            action,
            &self.config,
            &self.trace,
            self.drops.as_mut(),
        )?;
        let d = outcome.duration;
        for (m, age) in self.state.ages.iter_mut().enumerate() {
            if m == action {
                *age = d;
            } else {
                *age += d;
            }
        }
        let sent = self.config.sensors[action].packet_size * outcome.attempts as f64;
        self.state.recent_throughput.pop_front();
        self.state.recent_throughput.push_back(sent / d);
        self.state.last_service_time = d;
        self.state.job_index += 1;
        let (reward, violations) = reward(&self.config, &self.state.ages);
        Ok(StepResult {
            action,
            observation: self.state.observe(),
            reward,
            outcome,
            violations,
        })
    }
}

/// One row of the trajectory log.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    pub job: u64,
    pub action: usize,
    pub attempts: u32,
    pub duration_ms: f64,
    pub reward: f64,
    pub ages: Vec<f64>,
}

impl LogRecord {
    pub fn from_step(job: u64, step: &StepResult) -> Self {
        LogRecord {
            job,
            action: step.action,
            attempts: step.outcome.attempts,
            duration_ms: step.outcome.duration,
            reward: step.reward,
            ages: step.observation.ages.clone(),
        }
    }
}

/// CSV writer for `k,action,attempts,duration_ms,reward,age_0..age_{N-1}`.
pub struct TrajectoryLog<W: Write> {
    wtr: csv::Writer<W>,
}

impl<W: Write> TrajectoryLog<W> {
    pub fn new(writer: W, n_sensors: usize) -> Result<Self> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = ["k", "action", "attempts", "duration_ms", "reward"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        header.extend((0..n_sensors).map(|n| format!("age_{n}")));
        wtr.write_record(&header)?;
        Ok(TrajectoryLog { wtr })
    }

    pub fn append(&mut self, rec: &LogRecord) -> Result<()> {
        let mut row = vec![
            rec.job.to_string(),
            rec.action.to_string(),
            rec.attempts.to_string(),
            rec.duration_ms.to_string(),
            rec.reward.to_string(),
        ];
        row.extend(rec.ages.iter().map(|a| a.to_string()));
        self.wtr.write_record(&row)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.wtr
            .flush()
            .map_err(|e| Error::io("<trajectory log>", e))?;
        self.wtr
            .into_inner()
            .map_err(|e| Error::io("<trajectory log>", e.into_error()))
    }
}

pub fn read_trajectory_log(reader: impl Read) -> Result<Vec<LogRecord>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let field = |i: usize| -> Result<&str> {
            row.get(i)
                .ok_or_else(|| Error::Config(format!("trajectory log row missing column {i}")))
        };
        let parse_err = |i: usize| Error::Config(format!("trajectory log: bad value in column {i}"));
        let num = |i: usize| -> Result<f64> { field(i)?.parse().map_err(|_| parse_err(i)) };
        out.push(LogRecord {
            job: field(0)?.parse().map_err(|_| parse_err(0))?,
            action: field(1)?.parse().map_err(|_| parse_err(1))?,
            attempts: field(2)?.parse().map_err(|_| parse_err(2))?,
            duration_ms: num(3)?,
            reward: num(4)?,
            ages: (5..row.len()).map(num).collect::<Result<_>>()?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::traces::TraceSample;

    fn config(sizes: &[f64], thresholds: &[f64], penalties: &[f64], p: f64) -> EnvConfig {
        EnvConfig {
            sensors: sizes
                .iter()
                .zip(thresholds)
                .zip(penalties)
                .map(|((&packet_size, &threshold), &penalty)| SensorConfig {
                    packet_size,
                    threshold,
                    penalty,
                })
                .collect(),
            success_prob: p,
            history_len: 5,
            max_attempts: DEFAULT_MAX_ATTEMPTS,
        }
    }

    fn constant_env(cfg: EnvConfig, rate: f64) -> Env {
        Env::new(cfg, Arc::new(Trace::constant(rate).unwrap())).unwrap()
    }

    #[test]
    fn reset_zeroes_everything() {
        let mut env = constant_env(config(&[100.0, 50.0], &[10.0, 10.0], &[1.0, 1.0], 0.9), 3.0);
        env.step(1).unwrap();
        let obs = env.reset(4, 250.0);
        assert_eq!(obs.ages, vec![0.0, 0.0]);
        assert_eq!(obs.recent_throughput, vec![0.0; 5]);
        assert_eq!(obs.last_service_time, 0.0);
        assert_eq!(env.state().clock, 250.0);
        assert_eq!(env.state().job_index, 0);
    }

    #[test]
    fn reference_sensor_set_dimensions() {
        let cfg = EnvConfig {
            sensors: SensorConfig::reference_set(10),
            success_prob: 0.9,
            history_len: 5,
            max_attempts: DEFAULT_MAX_ATTEMPTS,
        };
        let mut env = constant_env(cfg, 100.0);
        let obs = env.reset(0, 0.0);
        assert_eq!(obs.ages.len(), 10);
        assert_eq!(obs.recent_throughput.len(), 5);
        let s = SensorConfig::reference_set(10);
        assert_eq!(s[0].packet_size, 50.0);
        assert_eq!(s[9].packet_size, 500.0);
        assert_eq!(s[0].threshold, 30.0);
        assert_eq!(s[9].threshold, 210.0);
        assert_eq!(s[0].penalty, 1000.0);
        assert_eq!(s[9].penalty, 100.0);
    }

    #[test]
    fn single_attempt_when_delivery_is_certain() {
        let cfg = config(&[100.0], &[1e9], &[0.0], 1.0);
        let mut state = EnvState::initial(&cfg, 0.0);
        let trace = Trace::constant(2.0).unwrap();
        let out = transmit(&mut state, 0, &cfg, &trace, &mut RandomDrops::new(1)).unwrap();
        assert_eq!(out.attempts, 1);
        assert_eq!(out.duration, 50.0);
        assert!(!out.truncated);
        assert_eq!(state.clock, 50.0);
    }

    #[test]
    fn retransmission_rereads_rate_at_each_attempt() {
        let trace = Trace::new(
            "step",
            vec![
                TraceSample { time_ms: 0.0, rate: 100.0 },
                TraceSample { time_ms: 1.0, rate: 50.0 },
            ],
            1000.0,
        )
        .unwrap();
        let cfg = config(&[100.0], &[1e9], &[0.0], 0.5);
        let mut state = EnvState::initial(&cfg, 0.0);
        let mut drops = ScriptedDrops::new([false, true]);
        let out = transmit(&mut state, 0, &cfg, &trace, &mut drops).unwrap();
        assert_eq!(out.attempts, 2);
        assert_eq!(out.attempt_rates, vec![100.0, 50.0]);
        assert_eq!(out.duration, 3.0);
    }

    #[test]
    fn retransmission_cap_truncates() {
        let mut cfg = config(&[10.0], &[1e9], &[0.0], 0.5);
        cfg.max_attempts = 3;
        let mut state = EnvState::initial(&cfg, 0.0);
        let trace = Trace::constant(10.0).unwrap();
        let mut drops = ScriptedDrops::new([false; 10]);
        let out = transmit(&mut state, 0, &cfg, &trace, &mut drops).unwrap();
        assert_eq!(out.attempts, 3);
        assert!(out.truncated);
        assert_eq!(out.duration, 3.0);
    }

    #[test]
    fn step_applies_age_recursion_and_reward() {
        let mut env = constant_env(config(&[100.0, 100.0], &[1000.0, 1000.0], &[10.0, 10.0], 1.0), 1.0);
        env.reset(0, 0.0);
        let r = env.step(0).unwrap();
        assert_eq!(r.observation.ages, vec![100.0, 100.0]);
        assert_eq!(r.reward, -200.0);
        assert_eq!(r.observation.last_service_time, 100.0);
        assert_eq!(r.observation.recent_throughput, vec![0.0, 0.0, 0.0, 0.0, 1.0]);

        let mut env = constant_env(config(&[100.0, 100.0], &[150.0, 90.0], &[10.0, 10.0], 1.0), 1.0);
        env.reset(0, 0.0);
        let r = env.step(0).unwrap();
        assert_eq!(r.reward, -210.0);
        assert_eq!(r.violations, vec![false, true]);
    }

    #[test]
    fn achieved_throughput_counts_retransmitted_bytes() {
        let mut env = constant_env(config(&[100.0], &[1e9], &[0.0], 0.5), 4.0);
        env.reset(0, 0.0);
        env.set_drop_source(Box::new(ScriptedDrops::new([false, false, true])));
        let r = env.step(0).unwrap();
        assert_eq!(r.outcome.attempts, 3);
        assert_eq!(r.outcome.duration, 75.0);
        assert_eq!(*r.observation.recent_throughput.last().unwrap(), 4.0);
    }

    #[test]
    fn out_of_range_action_is_rejected() {
        let mut env = constant_env(config(&[1.0, 1.0], &[1.0, 1.0], &[1.0, 1.0], 1.0), 1.0);
        env.reset(0, 0.0);
        assert!(matches!(
            env.step(2),
            Err(Error::ActionOutOfRange { action: 2, sensors: 2 })
        ));
        assert_eq!(env.state().job_index, 0);
    }

    #[test]
    fn observe_is_idempotent() {
        let mut env = constant_env(config(&[100.0, 100.0], &[1.0, 1.0], &[1.0, 1.0], 1.0), 1.0);
        env.reset(0, 0.0);
        env.step(1).unwrap();
        let a = env.observe();
        assert_eq!(a, env.observe());
        assert_eq!(a.last_service_time, 100.0);
    }

    #[test]
    fn identical_seeds_give_identical_steps() {
        let trace = Arc::new(
            crate::traces::gen_synthetic(
                crate::traces::SyntheticKind::TwoLevelMarkov {
                    low: 5.0,
                    high: 50.0,
                    p_switch: 0.3,
                },
                5000.0,
                100.0,
                9,
            )
            .unwrap(),
        );
        let cfg = config(&[100.0, 60.0, 30.0], &[40.0, 80.0, 200.0], &[100.0, 50.0, 1.0], 0.7);
        let run = || {
            let mut env = Env::new(cfg.clone(), trace.clone()).unwrap();
            env.reset(42, 123.0);
            (0..300).map(|k| env.step(k % 3).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn invalid_configs_rejected() {
        let trace = Arc::new(Trace::constant(1.0).unwrap());
        let mut cfg = config(&[1.0], &[1.0], &[1.0], 0.0);
        assert!(Env::new(cfg.clone(), trace.clone()).is_err());
        cfg.success_prob = 1.0;
        cfg.history_len = 0;
        assert!(Env::new(cfg.clone(), trace.clone()).is_err());
        cfg.history_len = 1;
        cfg.sensors[0].penalty = -1.0;
        assert!(Env::new(cfg.clone(), trace.clone()).is_err());
        cfg.sensors.clear();
        assert!(Env::new(cfg, trace).is_err());
    }

    #[test]
    fn trajectory_log_round_trips() {
        let mut env = constant_env(config(&[100.0, 30.0], &[50.0, 80.0], &[3.0, 1.0], 0.6), 7.0);
        env.reset(5, 0.0);
        let mut log = TrajectoryLog::new(Vec::new(), 2).unwrap();
        let mut recs = Vec::new();
        for k in 0..50 {
            let step = env.step(k % 2).unwrap();
            let rec = LogRecord::from_step(k as u64, &step);
            log.append(&rec).unwrap();
            recs.push(rec);
        }
        let bytes = log.finish().unwrap();
        assert!(String::from_utf8_lossy(&bytes)
            .starts_with("k,action,attempts,duration_ms,reward,age_0,age_1\n"));
        assert_eq!(read_trajectory_log(bytes.as_slice()).unwrap(), recs);
    }
}
