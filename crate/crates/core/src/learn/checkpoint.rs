//! JSON checkpoints: networks in row-major order, optimizer moments,
//! counters and the configuration that produced them.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use super::mlp::{Layer, Mlp};
use super::policy::{ActorCritic, GaussianPolicy};
use crate::error::{Error, Result};

pub const FORMAT: &str = "swingup-policy-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkJson {
    pub layer_sizes: Vec<usize>,
    /// One row-major `out x in` array per layer.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl NetworkJson {
    pub fn from_mlp(net: &Mlp) -> Self {
        Self {
            layer_sizes: net.sizes(),
            weights: net.layers.iter().map(|l| l.weight.transpose().as_slice().to_vec()).collect(),
            biases: net.layers.iter().map(|l| l.bias.as_slice().to_vec()).collect(),
        }
    }

    pub fn to_mlp(&self, what: &str) -> Result<Mlp> {
        let s = &self.layer_sizes;
        let bad = |msg: String| Error::Shape(format!("{what}: {msg}"));
        if s.len() < 2 || s.contains(&0) {
            return Err(bad(format!("invalid layer sizes {s:?}")));
        }
        if self.weights.len() != s.len() - 1 || self.biases.len() != s.len() - 1 {
            return Err(bad("layer count disagrees with layer_sizes".into()));
        }
        let mut layers = Vec::with_capacity(s.len() - 1);
        for (l, w) in s.windows(2).enumerate() {
            let (input, output) = (w[0], w[1]);
            if self.weights[l].len() != input * output || self.biases[l].len() != output {
                return Err(bad(format!("layer {l} should be {output}x{input}")));
            }
            layers.push(Layer {
                weight: DMatrix::from_row_slice(output, input, &self.weights[l]),
                bias: DVector::from_column_slice(&self.biases[l]),
            });
        }
        Ok(Mlp { layers })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActorCriticJson {
    pub policy: NetworkJson,
    pub log_std: Vec<f64>,
    pub value: NetworkJson,
}

impl ActorCriticJson {
    pub fn from_model(ac: &ActorCritic) -> Self {
        Self {
            policy: NetworkJson::from_mlp(&ac.policy.mean),
            log_std: ac.policy.log_std.as_slice().to_vec(),
            value: NetworkJson::from_mlp(&ac.value),
        }
    }

    pub fn to_model(&self) -> Result<ActorCritic> {
        let mean = self.policy.to_mlp("policy")?;
        let value = self.value.to_mlp("value")?;
        if self.log_std.len() != mean.output_dim() {
            return Err(Error::Shape("log_std length differs from policy output".into()));
        }
        if value.output_dim() != 1 || value.input_dim() != mean.input_dim() {
            return Err(Error::Shape("value network must map the observation to a scalar".into()));
        }
        let ac = ActorCritic {
            policy: GaussianPolicy {
                mean,
                log_std: DVector::from_column_slice(&self.log_std),
            },
            value,
        };
        if !ac.is_finite() {
            return Err(Error::NonFinite("checkpoint parameters"));
        }
        Ok(ac)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerJson {
    pub t: u64,
    pub m: ActorCriticJson,
    pub v: ActorCriticJson,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub policy: NetworkJson,
    pub log_std: Vec<f64>,
    pub value: NetworkJson,
    pub optimizer: Option<OptimizerJson>,
    /// Environment steps consumed.
    pub step: u64,
    pub update: u64,
    /// Resolved configuration, stored for provenance.
    pub config: serde_json::Value,
}

impl Checkpoint {
    pub fn new(ac: &ActorCritic, adam: Option<&AdamState>, step: u64, update: u64, config: serde_json::Value) -> Self {
        let net = ActorCriticJson::from_model(ac);
        Self {
            format: FORMAT.to_string(),
            policy: net.policy,
            log_std: net.log_std,
            value: net.value,
            optimizer: adam.map(|a| OptimizerJson {
                t: a.t,
                m: ActorCriticJson::from_model(&a.m),
                v: ActorCriticJson::from_model(&a.v),
            }),
            step,
            update,
            config,
        }
    }

    pub fn model(&self) -> Result<ActorCritic> {
        if self.format != FORMAT {
            return Err(Error::Shape(format!("unknown checkpoint format `{}`", self.format)));
        }
        ActorCriticJson {
            policy: self.policy.clone(),
            log_std: self.log_std.clone(),
            value: self.value.clone(),
        }
        .to_model()
    }

    pub fn adam(&self) -> Result<Option<AdamState>> {
        let Some(opt) = &self.optimizer else {
            return Ok(None);
        };
        let model = self.model()?;
        let (m, v) = (opt.m.to_model()?, opt.v.to_model()?);
        let shapes = |a: &ActorCritic| a.tensors().iter().map(|t| t.len()).collect::<Vec<_>>();
        if shapes(&m) != shapes(&model) || shapes(&v) != shapes(&model) {
            return Err(Error::Shape("optimizer moments do not match the networks".into()));
        }
        Ok(Some(AdamState { m, v, t: opt.t }))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        write_atomic(path, text.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let ckpt: Self = serde_json::from_str(&text)?;
        ckpt.model()?;
        Ok(ckpt)
    }
}

pub(crate) fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Write to a sibling temporary file, then rename over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| io_err(path, std::io::Error::other("path has no file name")))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(format!(".{}.tmp", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, bytes).map_err(|e| io_err(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        io_err(path, e)
    })
}
