//! JSON checkpoints holding both networks plus the metadata needed to
//! rebuild and validate them.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ActorParams, Arch, CriticParams, FeatureScale, NetShape, Weights, LAYER_NAMES};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    #[serde(rename = "N")]
    pub n_sensors: usize,
    #[serde(rename = "j")]
    pub history_len: usize,
    pub filters: usize,
    pub kernel: usize,
    pub hidden: usize,
    pub seed: u64,
    pub entropy_stage: usize,
    pub config_hash: String,
    pub norm: FeatureScale,
}

impl CheckpointMeta {
    pub fn arch(&self) -> Arch {
        Arch {
            filters: self.filters,
            kernel: self.kernel,
            hidden: self.hidden,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub actor: ActorParams,
    pub critic: CriticParams,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum LayerData {
    Vector(Vec<f64>),
    Matrix(Vec<Vec<f64>>),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    meta: CheckpointMeta,
    actor: BTreeMap<String, LayerData>,
    critic: BTreeMap<String, LayerData>,
}

fn export(w: &Weights) -> BTreeMap<String, LayerData> {
    w.layers()
        .into_iter()
        .map(|layer| {
            let data = match layer.dims.as_slice() {
                [_, cols] => LayerData::Matrix(layer.data.chunks(*cols).map(<[f64]>::to_vec).collect()),
                _ => LayerData::Vector(layer.data.to_vec()),
            };
            (layer.name.to_string(), data)
        })
        .collect()
}

fn import(shape: NetShape, mut layers: BTreeMap<String, LayerData>, which: &str) -> Result<Weights> {
    let mut w = Weights::zeros(shape);
    for name in LAYER_NAMES {
        let data = layers
            .remove(name)
            .ok_or_else(|| Error::Shape(format!("{which}: missing layer {name}")))?;
        let flat = match data {
            LayerData::Vector(v) => v,
            LayerData::Matrix(rows) => {
                let expected_cols = w
                    .layers()
                    .iter()
                    .find(|l| l.name == name)
                    .map(|l| *l.dims.last().unwrap_or(&0))
                    .unwrap_or(0);
                if rows.iter().any(|r| r.len() != expected_cols) {
                    return Err(Error::Shape(format!("{which}: ragged or mis-sized rows in {name}")));
                }
                rows.concat()
            }
        };
        w.set_layer(name, flat)
            .map_err(|e| Error::Shape(format!("{which}: {e}")))?;
    }
    if let Some(extra) = layers.keys().next() {
        return Err(Error::Shape(format!("{which}: unexpected layer {extra}")));
    }
    Ok(w)
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        let file = CheckpointFile {
            meta: self.meta.clone(),
            actor: export(&self.actor.0),
            critic: export(&self.critic.0),
        };
        let mut s = serde_json::to_string_pretty(&file)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: CheckpointFile = serde_json::from_str(text)?;
        let meta = file.meta;
        let arch = meta.arch();
        let actor_shape = NetShape::actor(meta.n_sensors, meta.history_len, arch);
        let critic_shape = NetShape::critic(meta.n_sensors, meta.history_len, arch);
        actor_shape.validate()?;
        Ok(Checkpoint {
            actor: ActorParams(import(actor_shape, file.actor, "actor")?),
            critic: CriticParams(import(critic_shape, file.critic, "critic")?),
            meta,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_json(&text)
    }

    /// Fails unless the checkpoint was trained for this sensor count,
    /// history length and configuration hash.
    pub fn check_compatible(&self, n_sensors: usize, history_len: usize, config_hash: &str) -> Result<()> {
        if self.meta.n_sensors != n_sensors || self.meta.history_len != history_len {
            return Err(Error::Shape(format!(
                "checkpoint is for N={}, j={} but the config has N={}, j={}",
                self.meta.n_sensors, self.meta.history_len, n_sensors, history_len
            )));
        }
        if self.meta.config_hash != config_hash {
            return Err(Error::HashMismatch {
                checkpoint: self.meta.config_hash.clone(),
                config: config_hash.to_string(),
            });
        }
        Ok(())
    }
}
