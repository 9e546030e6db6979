//! JSON checkpoints: a header, the model configuration and every named tensor.

use std::path::Path;

use serde_json::{json, Value};

use super::params::{init_params, Arch, ExecutorParams, ModelConfig};
use crate::diff::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::trace::Algorithm;

/// A checkpoint file's contents.
#[derive(Clone, Debug)]
pub struct Checkpoint<S> {
    pub config_hash: String,
    pub seed: u64,
    pub params: ExecutorParams<S>,
}

impl<S: Scalar> PartialEq for Checkpoint<S> {
    fn eq(&self, other: &Self) -> bool {
        self.config_hash == other.config_hash && self.seed == other.seed && self.params == other.params
    }
}

impl<S: Scalar> Checkpoint<S> {
    pub fn to_json(&self) -> Value {
        let c = &self.params.config;
        let store = &self.params.store;
        let tensors: Vec<Value> = (0..store.len())
            .map(|i| {
                let t = &store.tensors()[i];
                json!({
                    "name": store.names()[i],
                    "shape": t.shape(),
                    "trainable": store.trainable()[i],
                    "data": t.data().iter().map(|x| x.as_f64()).collect::<Vec<_>>(),
                })
            })
            .collect();
        json!({
            "header": { "kind": "checkpoint", "config_hash": self.config_hash, "seed": self.seed },
            "model": {
                "arch": c.arch.name(),
                "hidden": c.hidden,
                "tasks": c.tasks.iter().map(|t| t.name()).collect::<Vec<_>>(),
                "processors": c.processors,
            },
            "params": tensors,
        })
    }

    pub fn from_json(v: &Value) -> Result<Self> {
        let bad = |m: &str| Error::arg(format!("malformed checkpoint: {m}"));
        let header = &v["header"];
        let config_hash = header["config_hash"].as_str().ok_or_else(|| bad("config_hash"))?.to_string();
        let seed = header["seed"].as_u64().ok_or_else(|| bad("seed"))?;
        let m = &v["model"];
        let arch: Arch = m["arch"].as_str().ok_or_else(|| bad("arch"))?.parse()?;
        let tasks = m["tasks"]
            .as_array()
            .ok_or_else(|| bad("tasks"))?
            .iter()
            .map(|t| t.as_str().ok_or_else(|| bad("task name"))?.parse::<Algorithm>())
            .collect::<Result<Vec<_>>>()?;
        let config = ModelConfig {
            arch,
            hidden: m["hidden"].as_u64().ok_or_else(|| bad("hidden"))? as usize,
            tasks,
            processors: m["processors"].as_u64().ok_or_else(|| bad("processors"))? as usize,
        };
        let mut params = init_params::<S>(&config, seed)?;
        let entries = v["params"].as_array().ok_or_else(|| bad("params"))?;
        if entries.len() != params.store.len() {
            return Err(bad("parameter count does not match the model"));
        }
        for e in entries {
            let name = e["name"].as_str().ok_or_else(|| bad("parameter name"))?;
            let id = params.store.id_of(name).ok_or_else(|| bad(&format!("unknown parameter {name}")))?;
            let shape: Vec<usize> = e["shape"]
                .as_array()
                .ok_or_else(|| bad("shape"))?
                .iter()
                .map(|d| d.as_u64().map(|d| d as usize).ok_or_else(|| bad("shape entry")))
                .collect::<Result<_>>()?;
            if shape != params.store.get(id).shape() {
                return Err(bad(&format!("shape of {name}")));
            }
            let data = e["data"]
                .as_array()
                .ok_or_else(|| bad("data"))?
                .iter()
                .map(|x| x.as_f64().map(S::lit).ok_or_else(|| bad("data entry")))
                .collect::<Result<Vec<_>>>()?;
            params.store.tensors_mut()[id.0] = Tensor::new(shape, data)?;
            params.store.set_trainable(id, e["trainable"].as_bool().unwrap_or(true));
        }
        Ok(Checkpoint { config_hash, seed, params })
    }
}

pub fn save_checkpoint<S: Scalar>(path: &Path, ckpt: &Checkpoint<S>) -> Result<()> {
    let text = serde_json::to_string(&ckpt.to_json()).map_err(|e| Error::state(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

pub fn load_checkpoint<S: Scalar>(path: &Path) -> Result<Checkpoint<S>> {
    let text = std::fs::read_to_string(path)?;
    let v: Value = serde_json::from_str(&text).map_err(|e| Error::Parse { line: e.line(), msg: e.to_string() })?;
    Checkpoint::from_json(&v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let cfg = ModelConfig { processors: 2, ..ModelConfig::new(Arch::NePlusPlus, vec![Algorithm::Prim, Algorithm::Dijkstra]) };
        let mut params = init_params::<f64>(&cfg, 11).unwrap();
        let frozen = params.processor_params(0);
        for id in &frozen {
            params.store.set_trainable(*id, false);
        }
        let ckpt = Checkpoint { config_hash: "abc".into(), seed: 11, params };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        save_checkpoint(&path, &ckpt).unwrap();
        let back = load_checkpoint::<f64>(&path).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(back.params.store.trainable(), ckpt.params.store.trainable());
    }

    #[test]
    fn truncated_file_reports_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        std::fs::write(&path, "{\"header\": {").unwrap();
        assert!(matches!(load_checkpoint::<f64>(&path), Err(Error::Parse { .. })));
    }
}
