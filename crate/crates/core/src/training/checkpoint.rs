use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_lmft, write_lmft};
use crate::net::{ClassifierNetwork, NetworkConfig, SodNetwork};
use crate::scalar::Scalar;
use crate::tensor::{Parameterized, Shape, Tensor};

use super::optim::{Optimizer, OptimizerConfig, ParamState};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"LMFC";
pub const CHECKPOINT_VERSION: u16 = 1;

/// JSON header of a checkpoint; tensors follow in `tensors` order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: NetworkConfig,
    #[serde(default)]
    pub optimizer: Option<OptimizerConfig>,
    #[serde(default)]
    pub optimizer_step: u64,
    #[serde(default)]
    pub epoch: usize,
    pub tensors: Vec<String>,
}

/// Decoded checkpoint: metadata plus every named tensor, widened to `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub tensors: Vec<(String, Tensor<f64>)>,
}

fn buffer_tensor<T: Scalar>(v: &[T]) -> Tensor<T> {
    Tensor::from_vec(Shape::new(1, 1, 1, v.len()), v.to_vec()).expect("sized")
}

/// Serializes `model` (parameters then buffers) and the optimizer state.
pub fn encode_checkpoint<T: Scalar, M: Parameterized<T>>(
    config: &NetworkConfig,
    model: &M,
    optimizer: Option<&Optimizer<T>>,
    epoch: usize,
) -> Vec<u8> {
    let mut named: Vec<(String, Tensor<T>)> = Vec::new();
    model.visit_params("", &mut |n, p| named.push((n.to_string(), p.value.clone())));
    model.visit_buffers("", &mut |n, b| named.push((n.to_string(), buffer_tensor(b))));
    if let Some(o) = optimizer {
        named.extend(o.named_buffers().into_iter().map(|(n, t)| (n, t.clone())));
    }
    let meta = CheckpointMeta {
        config: config.clone(),
        optimizer: optimizer.map(|o| o.config),
        optimizer_step: optimizer.map_or(0, |o| o.step),
        epoch,
        tensors: named.iter().map(|(n, _)| n.clone()).collect(),
    };
    let json = serde_json::to_vec(&meta).expect("metadata serializes");
    let mut out = CHECKPOINT_MAGIC.to_vec();
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in &named {
        write_lmft(t, &mut out);
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let err = |m: String| Error::Checkpoint(m);
    if bytes.len() < 10 {
        return Err(err(format!("file of {} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(err(format!("bad magic {:?}", &bytes[..4])));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != CHECKPOINT_VERSION {
        return Err(err(format!("unsupported version {version} (expected {CHECKPOINT_VERSION})")));
    }
    let len = u32::from_le_bytes(bytes[6..10].try_into().expect("4 bytes")) as usize;
    let end = 10usize.checked_add(len).filter(|&e| e <= bytes.len());
    let end = end.ok_or_else(|| err(format!("metadata length {len} exceeds file length {}", bytes.len())))?;
    let meta: CheckpointMeta = serde_json::from_slice(&bytes[10..end])?;
    let mut pos = end;
    let mut tensors = Vec::with_capacity(meta.tensors.len());
    for name in &meta.tensors {
        let t = read_lmft::<f64>(bytes, &mut pos).map_err(|e| err(format!("tensor {name}: {e}")))?;
        tensors.push((name.clone(), t));
    }
    if pos != bytes.len() {
        return Err(err(format!("{} trailing bytes after the last tensor", bytes.len() - pos)));
    }
    Ok(Checkpoint { meta, tensors })
}

pub fn save_checkpoint<T: Scalar, M: Parameterized<T>>(
    path: &Path,
    config: &NetworkConfig,
    model: &M,
    optimizer: Option<&Optimizer<T>>,
    epoch: usize,
) -> Result<()> {
    let bytes = encode_checkpoint(config, model, optimizer, epoch);
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes).map_err(|e| match e {
        Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
        other => other,
    })
}

impl Checkpoint {
    fn get(&self, name: &str) -> Option<&Tensor<f64>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Copies stored parameters and buffers into `model`. Nothing is written
    /// unless every tensor matches by name and shape; the error names the
    /// first mismatch in model order.
    pub fn restore_into<T: Scalar, M: Parameterized<T>>(&self, model: &mut M) -> Result<()> {
        let mut first_error: Option<String> = None;
        let mut note = |msg: String| {
            if first_error.is_none() {
                first_error = Some(msg);
            }
        };
        model.visit_params("", &mut |n, p| match self.get(n) {
            None => note(format!("tensor {n} missing from checkpoint")),
            Some(t) if t.shape() != p.shape() => note(format!("tensor {n}: checkpoint shape {} vs model {}", t.shape(), p.shape())),
            Some(_) => {}
        });
        model.visit_buffers("", &mut |n, b| match self.get(n) {
            None => note(format!("buffer {n} missing from checkpoint")),
            Some(t) if t.len() != b.len() => note(format!("buffer {n}: checkpoint length {} vs model {}", t.len(), b.len())),
            Some(_) => {}
        });
        if let Some(m) = first_error {
            return Err(Error::Checkpoint(m));
        }
        model.visit_params_mut("", &mut |n, p| {
            p.value = self.get(n).expect("checked").cast();
        });
        model.visit_buffers_mut("", &mut |n, b| {
            *b = self.get(n).expect("checked").data().iter().map(|&v| T::from_f64_lossy(v)).collect();
        });
        Ok(())
    }

    /// Rebuilds the optimizer state saved alongside `model`'s parameters.
    pub fn optimizer<T: Scalar, M: Parameterized<T>>(&self, model: &M) -> Result<Option<Optimizer<T>>> {
        let Some(cfg) = self.meta.optimizer else { return Ok(None) };
        let mut opt = Optimizer::new(cfg)?;
        opt.step = self.meta.optimizer_step;
        if opt.step == 0 && !self.tensors.iter().any(|(n, _)| n.starts_with("optim.")) {
            return Ok(Some(opt));
        }
        let mut names = Vec::new();
        model.visit_params("", &mut |n, p| names.push((n.to_string(), p.shape())));
        for (name, shape) in names {
            let mut buffers = Vec::new();
            for b in cfg.buffer_names() {
                let key = format!("optim.{name}.{b}");
                let t = self.get(&key).ok_or_else(|| Error::Checkpoint(format!("tensor {key} missing from checkpoint")))?;
                if t.shape() != shape {
                    return Err(Error::Checkpoint(format!("tensor {key}: checkpoint shape {} vs model {shape}", t.shape())));
                }
                buffers.push(t.cast());
            }
            opt.state.push(ParamState { name, buffers });
        }
        Ok(Some(opt))
    }

    pub fn build_sod<T: Scalar>(&self) -> Result<SodNetwork<T>> {
        let mut net = SodNetwork::new(self.meta.config.clone(), &mut ChaCha8Rng::seed_from_u64(0))?;
        self.restore_into(&mut net)?;
        Ok(net)
    }

    pub fn build_classifier<T: Scalar>(&self) -> Result<ClassifierNetwork<T>> {
        let mut net = ClassifierNetwork::new(self.meta.config.clone(), &mut ChaCha8Rng::seed_from_u64(0))?;
        self.restore_into(&mut net)?;
        Ok(net)
    }
}
