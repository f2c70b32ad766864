//! Channel throughput traces: loading, synthetic generation and playback.
//!
//! A trace is a zero-order-hold step function of time that loops at its
//! duration, so arbitrarily long simulations can be driven by a finite
//! recording.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

const HEADER: [&str; 2] = ["time_ms", "throughput_kBps"];

/// Gap appended after the last sample of a single-sample trace.
pub const SINGLE_SAMPLE_SPAN_MS: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceSample {
    pub time_ms: f64,
    /// Bytes per millisecond.
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    id: String,
    samples: Vec<TraceSample>,
    duration: f64,
}

impl Trace {
    /// Builds a trace with an explicit duration, validating every invariant.
    pub fn new(id: impl Into<String>, samples: Vec<TraceSample>, duration: f64) -> Result<Self> {
        let id = id.into();
        let Some(first) = samples.first() else {
            return Err(Error::InvalidTrace(format!("{id}: no samples")));
        };
        if first.time_ms != 0.0 {
            return Err(Error::InvalidTrace(format!(
                "{id}: first sample at {} ms, expected 0",
                first.time_ms
            )));
        }
        for (i, s) in samples.iter().enumerate() {
            if !(s.rate > 0.0 && s.rate.is_finite()) {
                return Err(Error::InvalidTrace(format!(
                    "{id}: non-positive rate {} at sample {i}",
                    s.rate
                )));
            }
            if i > 0 && !(s.time_ms > samples[i - 1].time_ms) {
                return Err(Error::InvalidTrace(format!(
                    "{id}: non-increasing time {} at sample {i}",
                    s.time_ms
                )));
            }
        }
        let last = samples[samples.len() - 1].time_ms;
        if !(duration.is_finite() && duration >= last && duration > 0.0) {
            return Err(Error::InvalidTrace(format!(
                "{id}: duration {duration} shorter than last sample time {last}"
            )));
        }
        Ok(Trace {
            id,
            samples,
            duration,
        })
    }

    /// Builds a trace whose duration extends the last sample by the last
    /// inter-sample gap (or by one second for a single sample).
    pub fn from_samples(id: impl Into<String>, samples: Vec<TraceSample>) -> Result<Self> {
        let duration = match samples.as_slice() {
            [] => 0.0,
            [only] => only.time_ms + SINGLE_SAMPLE_SPAN_MS,
            [.., prev, last] => last.time_ms + (last.time_ms - prev.time_ms),
        };
        Trace::new(id, samples, duration)
    }

    /// A single-rate trace, convenient for tests and closed-form checks.
    pub fn constant(rate: f64) -> Result<Self> {
        Trace::from_samples(
            format!("constant-{rate}"),
            vec![TraceSample { time_ms: 0.0, rate }],
        )
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn samples(&self) -> &[TraceSample] {
        &self.samples
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    /// Rate of the last sample at or before `t mod duration`.
    pub fn rate_at(&self, t: f64) -> f64 {
        let local = t.rem_euclid(self.duration);
        let idx = self.samples.partition_point(|s| s.time_ms <= local);
        // idx >= 1 because the first sample sits at 0 and local >= 0.
        self.samples[idx.max(1) - 1].rate
    }

    /// Time-weighted mean rate over one period.
    pub fn mean_rate(&self) -> f64 {
        let mut acc = 0.0;
        for (i, s) in self.samples.iter().enumerate() {
            let end = self
                .samples
                .get(i + 1)
                .map_or(self.duration, |next| next.time_ms);
            acc += s.rate * (end - s.time_ms);
        }
        acc / self.duration
    }
}

/// Reads a `time_ms,throughput_kBps` CSV file.
pub fn load_trace(path: impl AsRef<Path>) -> Result<Trace> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    parse_trace(&id, &path.display().to_string(), file)
}

/// Parses trace CSV from any reader; `origin` is used in error messages.
pub fn parse_trace(id: &str, origin: &str, reader: impl Read) -> Result<Trace> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let err = |line: u64, msg: String| Error::TraceParse {
        path: origin.to_string(),
        line,
        msg,
    };
    let mut samples: Vec<TraceSample> = Vec::new();
    let mut first_record = true;
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if first_record {
            first_record = false;
            if record.len() == 2 && record[0] == *HEADER[0] && record[1] == *HEADER[1] {
                continue;
            }
        }
        if record.len() != 2 {
            return Err(err(line, format!("expected 2 fields, found {}", record.len())));
        }
        let time_ms: f64 = record[0]
            .parse()
            .map_err(|_| err(line, format!("malformed time {:?}", &record[0])))?;
        // 1 kB/s is exactly 1 byte/ms.
        let rate: f64 = record[1]
            .parse()
            .map_err(|_| err(line, format!("malformed throughput {:?}", &record[1])))?;
        if !time_ms.is_finite() || time_ms < 0.0 {
            return Err(err(line, format!("invalid time {time_ms}")));
        }
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(err(line, "non-positive rate".to_string()));
        }
        match samples.last() {
            None if time_ms != 0.0 => {
                return Err(err(line, format!("first sample must be at time 0, got {time_ms}")))
            }
            Some(prev) if time_ms <= prev.time_ms => {
                return Err(err(line, format!("non-monotone time {time_ms}")))
            }
            _ => {}
        }
        samples.push(TraceSample { time_ms, rate });
    }
    if samples.is_empty() {
        return Err(err(0, "no samples".to_string()));
    }
    Trace::from_samples(id, samples)
}

/// Writes a trace in the CSV format read by [`load_trace`].
pub fn write_trace(trace: &Trace, writer: impl Write) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(HEADER)?;
    for s in trace.samples() {
        wtr.write_record([s.time_ms.to_string(), s.rate.to_string()])?;
    }
    wtr.flush().map_err(|e| Error::io("<trace writer>", e))?;
    Ok(())
}

pub fn save_trace(trace: &Trace, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_trace(trace, file)
}

/// Loads every `*.csv` file in `dir`, sorted by file name.
pub fn load_trace_dir(dir: impl AsRef<Path>) -> Result<Vec<Trace>> {
    let dir = dir.as_ref();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|ext| ext == "csv") {
            paths.push(path);
        }
    }
    paths.sort();
    if paths.is_empty() {
        return Err(Error::InvalidTrace(format!(
            "no .csv traces in {}",
            dir.display()
        )));
    }
    paths.iter().map(load_trace).collect()
}

/// Synthetic trace families used in place of recorded datasets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SyntheticKind {
    Constant {
        rate: f64,
    },
    /// Two rates; each step the regime flips with probability `p_switch`.
    /// The first regime is drawn uniformly.
    TwoLevelMarkov {
        low: f64,
        high: f64,
        p_switch: f64,
    },
    /// Mean-reverting random walk in log-rate:
    /// `x' = x + reversion * (ln median - x) + sigma * N(0, 1)`, clamped to
    /// `[min_rate, max_rate]` after exponentiation.
    LognormalWalk {
        median: f64,
        sigma: f64,
        reversion: f64,
        min_rate: f64,
        max_rate: f64,
    },
}

impl SyntheticKind {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidTrace(msg));
        let positive = |x: f64| x > 0.0 && x.is_finite();
        match *self {
            SyntheticKind::Constant { rate } if !positive(rate) => {
                bad(format!("constant rate must be > 0, got {rate}"))
            }
            SyntheticKind::TwoLevelMarkov { low, high, p_switch } => {
                if !positive(low) || !positive(high) {
                    bad(format!("markov rates must be > 0, got {low}/{high}"))
                } else if !(0.0..=1.0).contains(&p_switch) {
                    bad(format!("p_switch must lie in [0,1], got {p_switch}"))
                } else {
                    Ok(())
                }
            }
            SyntheticKind::LognormalWalk {
                median,
                sigma,
                reversion,
                min_rate,
                max_rate,
            } => {
                if !positive(median) || !positive(min_rate) || !(max_rate >= min_rate) {
                    bad(format!(
                        "lognormal walk needs 0 < min_rate <= max_rate and median > 0, got {min_rate}/{max_rate}/{median}"
                    ))
                } else if !(sigma >= 0.0 && sigma.is_finite()) {
                    bad(format!("sigma must be >= 0, got {sigma}"))
                } else if !(0.0..=1.0).contains(&reversion) {
                    bad(format!("reversion must lie in [0,1], got {reversion}"))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

/// Generates `ceil(duration / step)` samples spaced `step` ms apart; the
/// resulting trace spans `samples * step` ms.
pub fn gen_synthetic(kind: SyntheticKind, duration: f64, step: f64, seed: u64) -> Result<Trace> {
    if !(duration > 0.0 && duration.is_finite()) || !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidTrace(format!(
            "duration and step must be > 0, got {duration}/{step}"
        )));
    }
    kind.validate()?;
    let count = (duration / step).ceil() as usize;
    let mut rng = rng::stream(seed, "synthetic-trace", 0);
    let rates: Vec<f64> = match kind {
        SyntheticKind::Constant { rate } => vec![rate; count],
        SyntheticKind::TwoLevelMarkov { low, high, p_switch } => {
            let mut high_state = rng.random_bool(0.5);
            let mut out = Vec::with_capacity(count);
            for i in 0..count {
                if i > 0 && rng.random_bool(p_switch) {
                    high_state = !high_state;
                }
                out.push(if high_state { high } else { low });
            }
            out
        }
        SyntheticKind::LognormalWalk {
            median,
            sigma,
            reversion,
            min_rate,
            max_rate,
        } => {
            let noise = Normal::new(0.0, 1.0).expect("unit normal");
            let center = median.ln();
            let mut x = center;
            let mut out = Vec::with_capacity(count);
            for i in 0..count {
                if i > 0 {
                    x += reversion * (center - x) + sigma * noise.sample(&mut rng);
                }
                out.push(x.exp().clamp(min_rate, max_rate));
            }
            out
        }
    };
    let samples = rates
        .into_iter()
        .enumerate()
        .map(|(i, rate)| TraceSample {
            time_ms: i as f64 * step,
            rate,
        })
        .collect();
    Trace::new(
        format!("synthetic-{seed}"),
        samples,
        count as f64 * step,
    )
}
