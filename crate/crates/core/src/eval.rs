//! Evaluation: per-sensor average AoI, threshold-violation frequency, the
//! empirical objective, normalized comparison tables and AoI CDFs.
//!
//! All statistics use post-job ages, one sample per sensor per job, and the
//! strict `a > tau` violation convention shared with the reward.

use std::io::{Read, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::env::{Env, EnvConfig};
use crate::error::{Error, Result};
use crate::rng;
use crate::schedulers::Scheduler;
use crate::traces::Trace;

pub const DEFAULT_EVAL_JOBS: usize = 50_000;
pub const DEFAULT_BURN_IN: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Measured jobs, split evenly over the traces.
    pub jobs: usize,
    /// Jobs run and discarded at the start of every trace segment.
    pub burn_in: usize,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            jobs: DEFAULT_EVAL_JOBS,
            burn_in: DEFAULT_BURN_IN,
            seed: 0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.jobs == 0 {
            return Err(Error::Config("evaluation needs at least one job".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorMetrics {
    /// Mean post-job age, ms.
    pub avg_aoi: f64,
    /// Fraction of jobs after which the age exceeded the threshold.
    pub violation_freq: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub scheduler: String,
    pub jobs: usize,
    pub sensors: Vec<SensorMetrics>,
    /// `(1/(K N)) sum_n sum_k a_n(k)`.
    pub aoi_term: f64,
    /// `sum_n lambda_n * violation_freq_n`.
    pub penalty_term: f64,
    pub objective: f64,
    /// Mean of `-R_k` over the measured jobs.
    pub mean_neg_reward: f64,
    /// Jobs that hit the retransmission cap.
    pub truncated_jobs: u64,
    /// Post-job ages, `samples[n][k]`. Not serialized; see [`write_cdf_csv`].
    #[serde(skip)]
    pub samples: Vec<Vec<f64>>,
}

impl Metrics {
    pub fn num_sensors(&self) -> usize {
        self.sensors.len()
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Runs `cfg.jobs` measured jobs. Traces are visited in order, one segment
/// each; a segment starts from zero ages at a seeded random offset and runs
/// `burn_in` unmeasured jobs first.
pub fn evaluate(
    scheduler: &Scheduler,
    env_config: &EnvConfig,
    traces: &[Arc<Trace>],
    cfg: &EvalConfig,
) -> Result<Metrics> {
    env_config.validate()?;
    cfg.validate()?;
    if traces.is_empty() {
        return Err(Error::Config("evaluation needs at least one trace".into()));
    }
    let n = env_config.num_sensors();
    let penalties = env_config.penalties();
    let thresholds = env_config.thresholds();
    let mut samples = vec![Vec::with_capacity(cfg.jobs); n];
    let mut neg_reward = 0.0;
    let mut truncated = 0;

    let segments = traces.len();
    for (i, trace) in traces.iter().enumerate() {
        let measured = cfg.jobs / segments + usize::from(i < cfg.jobs % segments);
        if measured == 0 {
            continue;
        }
        let mut offsets = rng::stream(cfg.seed, "eval-offset", i as u64);
        let offset = rand::Rng::random_range(&mut offsets, 0.0..trace.duration());
        let mut env = Env::new(env_config.clone(), trace.clone())?;
        let mut obs = env.reset(rng::derive_seed(cfg.seed, "eval-drops", i as u64), offset);
        let mut picks = rng::stream(cfg.seed, "eval-select", i as u64);
        for k in 0..cfg.burn_in + measured {
            let action = scheduler.select(&obs, &mut picks)?;
            let step = env.step(action)?;
            if k >= cfg.burn_in {
                for (col, a) in samples.iter_mut().zip(&step.observation.ages) {
                    col.push(*a);
                }
                neg_reward -= step.reward;
                truncated += u64::from(step.outcome.truncated);
            }
            obs = step.observation;
        }
    }

    let k = cfg.jobs as f64;
    let sensors: Vec<SensorMetrics> = samples
        .iter()
        .zip(&thresholds)
        .map(|(col, tau)| SensorMetrics {
            avg_aoi: col.iter().sum::<f64>() / k,
            violation_freq: col.iter().filter(|a| *a > tau).count() as f64 / k,
        })
        .collect();
    let aoi_term = sensors.iter().map(|s| s.avg_aoi).sum::<f64>() / n as f64;
    let penalty_term = sensors
        .iter()
        .zip(&penalties)
        .map(|(s, l)| l * s.violation_freq)
        .sum::<f64>();
    Ok(Metrics {
        scheduler: scheduler.label().to_string(),
        jobs: cfg.jobs,
        sensors,
        aoi_term,
        penalty_term,
        objective: aoi_term + penalty_term,
        mean_neg_reward: neg_reward / k,
        truncated_jobs: truncated,
        samples,
    })
}

/// Empirical CDF: sorted distinct values with the fraction of samples at or
/// below each. Fractions are computed as `1 - (#above)/K`, so the value at a
/// threshold equals `1 - violation_freq` exactly.
pub fn cdf(samples: &[f64]) -> Result<Vec<(f64, f64)>> {
    if samples.is_empty() {
        return Err(Error::Distribution("CDF of an empty sample".into()));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("CDF sample".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let total = sorted.len();
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, &x) in sorted.iter().enumerate() {
        let above = total - (i + 1);
        let frac = 1.0 - above as f64 / total as f64;
        match out.last_mut() {
            Some(last) if last.0 == x => last.1 = frac,
            _ => out.push((x, frac)),
        }
    }
    Ok(out)
}

/// Step-function lookup: fraction of samples `<= x`.
pub fn cdf_at(cdf: &[(f64, f64)], x: f64) -> f64 {
    let idx = cdf.partition_point(|(v, _)| *v <= x);
    if idx == 0 {
        0.0
    } else {
        cdf[idx - 1].1
    }
}

/// Comparison table normalized by one reference scheduler.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub names: Vec<String>,
    pub reference: String,
    pub objectives: Vec<f64>,
    pub normalized: Vec<f64>,
    /// `violation_pct[n][i]` for sensor `n` and entry `i`.
    pub violation_pct: Vec<Vec<f64>>,
    pub avg_aoi: Vec<Vec<f64>>,
}

pub fn compare(entries: &[Metrics], reference: &str) -> Result<Report> {
    let Some(first) = entries.first() else {
        return Err(Error::Config("comparison needs at least one metrics entry".into()));
    };
    let n = first.num_sensors();
    if entries.iter().any(|m| m.num_sensors() != n) {
        return Err(Error::Shape("compared metrics have different sensor counts".into()));
    }
    let Some(reference_entry) = entries.iter().find(|m| m.scheduler == reference) else {
        let names: Vec<&str> = entries.iter().map(|m| m.scheduler.as_str()).collect();
        return Err(Error::Config(format!(
            "reference {reference:?} not among inputs {names:?}"
        )));
    };
    let base = reference_entry.objective;
    if base == 0.0 || !base.is_finite() {
        return Err(Error::Config(format!("reference objective {base} cannot normalize")));
    }
    Ok(Report {
        names: entries.iter().map(|m| m.scheduler.clone()).collect(),
        reference: reference.to_string(),
        objectives: entries.iter().map(|m| m.objective).collect(),
        normalized: entries.iter().map(|m| m.objective / base).collect(),
        violation_pct: (0..n)
            .map(|s| entries.iter().map(|m| 100.0 * m.sensors[s].violation_freq).collect())
            .collect(),
        avg_aoi: (0..n)
            .map(|s| entries.iter().map(|m| m.sensors[s].avg_aoi).collect())
            .collect(),
    })
}

impl Report {
    /// Objective row, then one violation-percentage row and one average-AoI
    /// row per sensor; one column per scheduler.
    pub fn write_table(&self, writer: impl Write) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = vec!["metric".to_string()];
        header.extend(self.names.iter().cloned());
        wtr.write_record(&header)?;
        let row = |label: String, values: &[f64], prec: usize| {
            let mut r = vec![label];
            r.extend(values.iter().map(|v| format!("{v:.prec$}")));
            r
        };
        wtr.write_record(row("normalized_objective".into(), &self.normalized, 3))?;
        for (s, v) in self.violation_pct.iter().enumerate() {
            wtr.write_record(row(format!("violation_pct_sensor_{s}"), v, 2))?;
        }
        for (s, v) in self.avg_aoi.iter().enumerate() {
            wtr.write_record(row(format!("avg_aoi_ms_sensor_{s}"), v, 2))?;
        }
        wtr.flush().map_err(|e| Error::io("<table>", e))?;
        Ok(())
    }

    /// `scheduler,objective,normalized_objective`.
    pub fn write_summary(&self, writer: impl Write) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["scheduler", "objective", "normalized_objective"])?;
        for ((name, obj), norm) in self.names.iter().zip(&self.objectives).zip(&self.normalized) {
            wtr.write_record([name.clone(), obj.to_string(), norm.to_string()])?;
        }
        wtr.flush().map_err(|e| Error::io("<summary>", e))?;
        Ok(())
    }
}

/// `scheduler,sensor,avg_aoi_ms,violation_freq`, one row per sensor.
pub fn write_metrics_csv(metrics: &[Metrics], writer: impl Write) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["scheduler", "sensor", "avg_aoi_ms", "violation_freq"])?;
    for m in metrics {
        for (s, sm) in m.sensors.iter().enumerate() {
            wtr.write_record([
                m.scheduler.clone(),
                s.to_string(),
                sm.avg_aoi.to_string(),
                sm.violation_freq.to_string(),
            ])?;
        }
    }
    wtr.flush().map_err(|e| Error::io("<metrics>", e))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CdfRow {
    pub sensor: usize,
    pub aoi_ms: f64,
    pub cdf: f64,
}

/// `sensor,aoi_ms,cdf` for every sensor of one evaluation.
pub fn write_cdf_csv(metrics: &Metrics, writer: impl Write) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for (sensor, col) in metrics.samples.iter().enumerate() {
        for (aoi_ms, cdf) in cdf(col)? {
            wtr.serialize(CdfRow { sensor, aoi_ms, cdf })?;
        }
    }
    wtr.flush().map_err(|e| Error::io("<cdf>", e))?;
    Ok(())
}

pub fn read_cdf_csv(reader: impl Read) -> Result<Vec<CdfRow>> {
    let mut rdr = csv::Reader::from_reader(reader);
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::SensorConfig;

    fn metrics(name: &str, objective: f64) -> Metrics {
        Metrics {
            scheduler: name.into(),
            jobs: 1,
            sensors: vec![SensorMetrics { avg_aoi: 1.0, violation_freq: 0.5 }],
            aoi_term: objective,
            penalty_term: 0.0,
            objective,
            mean_neg_reward: objective,
            truncated_jobs: 0,
            samples: vec![vec![1.0]],
        }
    }

    #[test]
    fn cdf_examples() {
        assert_eq!(cdf(&[5.0]).unwrap(), vec![(5.0, 1.0)]);
        assert_eq!(
            cdf(&[2.0, 4.0, 1.0, 2.0]).unwrap(),
            vec![(1.0, 0.25), (2.0, 0.75), (4.0, 1.0)]
        );
        assert!(cdf(&[]).is_err());
        let c = cdf(&[1.0, 2.0, 2.0, 4.0]).unwrap();
        assert_eq!(cdf_at(&c, 0.5), 0.0);
        assert_eq!(cdf_at(&c, 2.0), 0.75);
        assert_eq!(cdf_at(&c, 3.9), 0.75);
        assert_eq!(cdf_at(&c, 10.0), 1.0);
    }

    #[test]
    fn single_sensor_closed_form() {
        let config = EnvConfig {
            sensors: vec![SensorConfig { packet_size: 120.0, threshold: 50.0, penalty: 7.0 }],
            success_prob: 1.0,
            history_len: 3,
            max_attempts: 64,
        };
        let traces = vec![Arc::new(Trace::constant(2.0).unwrap())];
        let cfg = EvalConfig { jobs: 200, burn_in: 5, seed: 1 };
        let m = evaluate(&Scheduler::edf(config.thresholds()), &config, &traces, &cfg).unwrap();
        assert_eq!(m.sensors[0].avg_aoi, 60.0);
        assert_eq!(m.sensors[0].violation_freq, 1.0);
        assert_eq!(m.objective, 60.0 + 7.0);
        assert_eq!(m.samples[0].len(), 200);
    }

    #[test]
    fn compare_normalizes_by_reference() {
        let entries = vec![metrics("RL", 2.0), metrics("EDF", 3.06), metrics("OSRP", 4.2)];
        let r = compare(&entries, "RL").unwrap();
        let expect = [1.0, 1.53, 2.1];
        for (got, want) in r.normalized.iter().zip(expect) {
            assert!((got - want).abs() < 1e-12);
        }
        assert_eq!(r.violation_pct[0], vec![50.0; 3]);
        assert_eq!(compare(&entries[..1], "RL").unwrap().normalized, vec![1.0]);
        assert!(compare(&entries, "missing").is_err());
        assert!(compare(&[metrics("Z", 0.0)], "Z").is_err());
        assert!(compare(&[], "Z").is_err());
    }

    #[test]
    fn table_layout() {
        let entries = vec![metrics("RL", 2.0), metrics("EDF", 3.0), metrics("OSRP", 4.0)];
        let r = compare(&entries, "RL").unwrap();
        let mut buf = Vec::new();
        r.write_table(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "metric,RL,EDF,OSRP");
        assert_eq!(lines.len(), 1 + 1 + 2 * entries[0].num_sensors());
        assert_eq!(lines[1], "normalized_objective,1.000,1.500,2.000");
    }

    #[test]
    fn metrics_json_round_trip_drops_samples() {
        let m = metrics("RL", 2.5);
        let back = Metrics::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back.objective, 2.5);
        assert!(back.samples.is_empty());
    }

    #[test]
    fn cdf_csv_round_trip() {
        let mut m = metrics("RL", 1.0);
        m.samples = vec![vec![3.0, 1.0], vec![2.0]];
        let mut buf = Vec::new();
        write_cdf_csv(&m, &mut buf).unwrap();
        let rows = read_cdf_csv(buf.as_slice()).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0], CdfRow { sensor: 0, aoi_ms: 1.0, cdf: 0.5 });
        assert_eq!(rows[2], CdfRow { sensor: 1, aoi_ms: 2.0, cdf: 1.0 });
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn cdf_is_a_monotone_step_function(
            samples in prop::collection::vec(0u32..50, 1..200),
            probe in 0u32..60,
        ) {
            let xs: Vec<f64> = samples.iter().map(|&s| s as f64).collect();
            let c = cdf(&xs).unwrap();
            prop_assert!(c.windows(2).all(|w| w[0].0 < w[1].0 && w[0].1 < w[1].1));
            prop_assert_eq!(c.last().unwrap().1, 1.0);
            let at = cdf_at(&c, probe as f64);
            let above = xs.iter().filter(|&&x| x > probe as f64).count();
            prop_assert_eq!(at, 1.0 - above as f64 / xs.len() as f64);
        }
    }
}
