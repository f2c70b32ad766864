//! Run configuration: one JSON document covering sensors, environment,
//! training, evaluation, synthetic traces and paths.
//!
//! `"defaults": "paper-iv"` expands to the ten-sensor reference experiment;
//! any keys given alongside it are deep-merged over the preset. Unknown keys
//! are rejected everywhere.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::env::{EnvConfig, SensorConfig, DEFAULT_MAX_ATTEMPTS};
use crate::error::{Error, Result};
use crate::eval::{EvalConfig, DEFAULT_BURN_IN, DEFAULT_EVAL_JOBS};
use crate::rng;
use crate::schedulers::SelectMode;
use crate::traces::SyntheticKind;
use crate::train::TrainConfig;

pub const PAPER_PRESET: &str = "paper-iv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SensorRule {
    /// Sizes `50 (n + 1)` B, thresholds `30 + 20 n` ms, penalties
    /// `1000 (N - n) / N`.
    PaperIv,
}

/// Either a generator rule with a count, or an explicit list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorsSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule: Option<SensorRule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub list: Option<Vec<SensorConfig>>,
}

impl SensorsSection {
    pub fn resolve(&self) -> Result<Vec<SensorConfig>> {
        match (self.rule, self.count, &self.list) {
            (Some(SensorRule::PaperIv), Some(count), None) if count > 0 => Ok(SensorConfig::reference_set(count)),
            (None, None, Some(list)) if !list.is_empty() => Ok(list.clone()),
            _ => Err(Error::Config(
                "sensors: give either {rule, count >= 1} or a non-empty list".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSection {
    pub success_prob: f64,
    pub history_len: usize,
    pub max_attempts: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub jobs: usize,
    pub burn_in: usize,
    pub mode: SelectMode,
}

/// Synthetic trace sets for `gen-traces`. Training and evaluation traces
/// come from disjoint seed streams.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSection {
    pub kind: SyntheticKind,
    pub train_count: usize,
    pub eval_count: usize,
    pub duration_ms: f64,
    pub step_ms: f64,
}

impl SyntheticSection {
    pub fn train_seed(&self, seed: u64, index: usize) -> u64 {
        rng::derive_seed(seed, "train-trace", index as u64)
    }

    pub fn eval_seed(&self, seed: u64, index: usize) -> u64 {
        rng::derive_seed(seed, "eval-trace", index as u64)
    }
}

/// Relative paths are taken relative to the working directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsSection {
    pub traces: PathBuf,
    pub eval_traces: PathBuf,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub sensors: SensorsSection,
    pub env: EnvSection,
    pub train: TrainConfig,
    pub eval: EvalSection,
    pub synthetic: SyntheticSection,
    pub paths: PathsSection,
    pub seed: u64,
}

/// The reference experiment: ten sensors, 10% drops, five-job throughput
/// history, discount 0.9 and learning rates 0.001. Synthetic bandwidth
/// hovers around 60 B/ms, enough that every threshold is reachable but
/// tight enough that scheduling order matters.
pub fn paper_preset() -> Value {
    let train = serde_json::to_value(TrainConfig::default()).expect("train defaults serialize");
    json!({
        "sensors": { "rule": "paper-iv", "count": 10 },
        "env": { "success_prob": 0.9, "history_len": 5, "max_attempts": DEFAULT_MAX_ATTEMPTS },
        "train": train,
        "eval": { "jobs": DEFAULT_EVAL_JOBS, "burn_in": DEFAULT_BURN_IN, "mode": "greedy" },
        "synthetic": {
            "kind": {
                "kind": "lognormal-walk",
                "median": 60.0,
                "sigma": 0.07,
                "reversion": 0.02,
                "min_rate": 30.0,
                "max_rate": 300.0
            },
            "train_count": 8,
            "eval_count": 4,
            "duration_ms": 600000.0,
            "step_ms": 100.0
        },
        "paths": { "traces": "traces/train", "eval_traces": "traces/eval", "out": "out" },
        "seed": 0
    })
}

/// Recursively overlays `patch` onto `base`. Objects merge key by key;
/// anything else replaces. Objects carrying a `kind` tag (variant-typed
/// sections) or a sensor `list` replace the preset's value outright.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                let replace = v.get("kind").is_some_and(Value::is_string) || (k == "sensors" && v.get("list").is_some());
                match b.get_mut(&k) {
                    Some(slot) if !replace => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, p) => *slot = p,
    }
}

impl RunConfig {
    pub fn paper() -> Self {
        Self::from_value(json!({ "defaults": PAPER_PRESET })).expect("preset is valid")
    }

    pub fn from_value(mut value: Value) -> Result<Self> {
        let preset = match value.as_object_mut().and_then(|o| o.remove("defaults")) {
            None => None,
            Some(Value::String(name)) if name == PAPER_PRESET => Some(paper_preset()),
            Some(other) => {
                return Err(Error::Config(format!(
                    "unknown defaults preset {other}; expected \"{PAPER_PRESET}\""
                )))
            }
        };
        let merged = match preset {
            Some(mut base) => {
                merge(&mut base, value);
                base
            }
            None => value,
        };
        let cfg: RunConfig =
            serde_json::from_value(merged).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| Error::Config(format!("JSON: {e}")))?;
        Self::from_value(value)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Checks every nested section.
    pub fn validate(&self) -> Result<()> {
        self.env_config()?.validate()?;
        self.train_config().validate()?;
        self.eval_config().validate()?;
        let s = &self.synthetic;
        s.kind.validate().map_err(|e| Error::Config(format!("synthetic: {e}")))?;
        if !(s.duration_ms > 0.0 && s.step_ms > 0.0 && s.step_ms <= s.duration_ms) {
            return Err(Error::Config(
                "synthetic traces need 0 < step_ms <= duration_ms".into(),
            ));
        }
        if s.train_count == 0 || s.eval_count == 0 {
            return Err(Error::Config("synthetic trace counts must be >= 1".into()));
        }
        Ok(())
    }

    pub fn env_config(&self) -> Result<EnvConfig> {
        Ok(EnvConfig {
            sensors: self.sensors.resolve()?,
            success_prob: self.env.success_prob,
            history_len: self.env.history_len,
            max_attempts: self.env.max_attempts,
        })
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            jobs: self.eval.jobs,
            burn_in: self.eval.burn_in,
            seed: rng::derive_seed(self.seed, "eval", 0),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_matches_reference_experiment() {
        let cfg = RunConfig::paper();
        let env = cfg.env_config().unwrap();
        assert_eq!(env.num_sensors(), 10);
        for (n, s) in env.sensors.iter().enumerate() {
            assert_eq!(s.packet_size, 50.0 * (n as f64 + 1.0));
            assert_eq!(s.threshold, 30.0 + 20.0 * n as f64);
            assert_eq!(s.penalty, 1000.0 * (10.0 - n as f64) / 10.0);
        }
        assert_eq!(env.success_prob, 0.9);
        assert_eq!(cfg.train.gamma, 0.9);
        assert_eq!(cfg.train.actor_lr, 1e-3);
        assert_eq!(cfg.train.critic_lr, 1e-3);
        assert_eq!(cfg.eval.jobs, 50_000);
    }

    #[test]
    fn overrides_merge_deeply() {
        let cfg = RunConfig::from_json(
            r#"{"defaults": "paper-iv", "sensors": {"count": 4}, "train": {"gamma": 0.5}, "seed": 9}"#,
        )
        .unwrap();
        assert_eq!(cfg.env_config().unwrap().num_sensors(), 4);
        assert_eq!(cfg.train.gamma, 0.5);
        assert_eq!(cfg.train.actor_lr, 1e-3);
        assert_eq!(cfg.train_config().seed, 9);
    }

    #[test]
    fn sensor_list_replaces_rule() {
        let cfg = RunConfig::from_json(
            r#"{"defaults": "paper-iv", "sensors": {"list": [
                {"packet_size": 100, "threshold": 150, "penalty": 1000},
                {"packet_size": 200, "threshold": 600, "penalty": 500}]}}"#,
        )
        .unwrap();
        assert_eq!(cfg.env_config().unwrap().sensors[1].threshold, 600.0);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        for bad in [
            r#"{"defaults": "paper-iv", "trian": {}}"#,
            r#"{"defaults": "paper-iv", "train": {"gamma": 0.9, "lr": 1}}"#,
            r#"{"defaults": "paper-iv", "train": {"gamma": 1.5}}"#,
            r#"{"defaults": "paper-iv", "env": {"success_prob": 0}}"#,
            r#"{"defaults": "paper-iv", "train": {"seed": 3}}"#,
            r#"{"defaults": "paper-v"}"#,
            r#"{"defaults": "paper-iv", "sensors": {"count": 0}}"#,
            r#"{"sensors": {"rule": "paper-iv", "count": 3}}"#,
        ] {
            assert!(matches!(RunConfig::from_json(bad), Err(Error::Config(_))), "{bad}");
        }
    }

    #[test]
    fn tagged_sections_replace_wholesale() {
        let cfg = RunConfig::from_json(
            r#"{"defaults": "paper-iv", "synthetic": {"kind": {"kind": "constant", "rate": 50}}}"#,
        )
        .unwrap();
        assert_eq!(cfg.synthetic.kind, SyntheticKind::Constant { rate: 50.0 });
        assert_eq!(cfg.synthetic.train_count, RunConfig::paper().synthetic.train_count);
    }

    #[test]
    fn full_document_without_preset() {
        let text = serde_json::to_string(&RunConfig::paper()).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), RunConfig::paper());
    }
}
