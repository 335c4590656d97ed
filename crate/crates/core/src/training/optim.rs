use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{ParamTensor, Parameterized, Tensor};

pub const ADAM_EPS: f64 = 1e-8;
pub const SGD_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam {
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
    Sgd {
        #[serde(default = "default_momentum")]
        momentum: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    ADAM_EPS
}
fn default_momentum() -> f64 {
    SGD_MOMENTUM
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    #[serde(flatten)]
    pub kind: OptimizerKind,
    /// Coupled L2 term: `λ·param` is added to the gradient.
    #[serde(default)]
    pub weight_decay: f64,
}

impl OptimizerConfig {
    pub fn adam(weight_decay: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam { beta1: 0.9, beta2: 0.999, eps: ADAM_EPS },
            weight_decay,
        }
    }

    pub fn sgd(momentum: f64, weight_decay: f64) -> Self {
        OptimizerConfig { kind: OptimizerKind::Sgd { momentum }, weight_decay }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be finite and >= 0, got {}", self.weight_decay));
        }
        match self.kind {
            OptimizerKind::Adam { beta1, beta2, eps } => {
                if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
                    return bad(format!("adam betas must lie in [0, 1), got {beta1}, {beta2}"));
                }
                if eps <= 0.0 {
                    return bad(format!("adam eps must be > 0, got {eps}"));
                }
            }
            OptimizerKind::Sgd { momentum } => {
                if !(0.0..1.0).contains(&momentum) {
                    return bad(format!("sgd momentum must lie in [0, 1), got {momentum}"));
                }
            }
        }
        Ok(())
    }

    /// Names of the per-parameter buffers, in storage order.
    pub fn buffer_names(&self) -> &'static [&'static str] {
        match self.kind {
            OptimizerKind::Adam { .. } => &["m", "v"],
            OptimizerKind::Sgd { .. } => &["velocity"],
        }
    }
}

fn check_lr(lr: f64) -> Result<()> {
    if lr >= 0.0 && lr.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("learning rate must be finite and >= 0, got {lr}")))
    }
}

fn check_buffer<T: Scalar>(op: &'static str, p: &ParamTensor<T>, b: &Tensor<T>) -> Result<()> {
    if p.value.shape() != p.grad.shape() {
        return Err(Error::shape_pair(op, p.value.shape(), p.grad.shape()));
    }
    if b.shape() != p.value.shape() {
        return Err(Error::shape_pair(op, p.value.shape(), b.shape()));
    }
    Ok(())
}

/// One Adam update of `p` at 1-based step `t` with bias correction.
#[allow(clippy::too_many_arguments)]
pub fn adam_step<T: Scalar>(
    p: &mut ParamTensor<T>,
    m: &mut Tensor<T>,
    v: &mut Tensor<T>,
    t: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
) -> Result<()> {
    check_lr(lr)?;
    check_buffer("adam_step", p, m)?;
    check_buffer("adam_step", p, v)?;
    if t == 0 {
        return Err(Error::InvalidArgument("adam step counter starts at 1".into()));
    }
    let (b1, b2) = (T::lit(beta1), T::lit(beta2));
    let c1 = T::one() - T::lit(beta1).powi(t.min(i32::MAX as u64) as i32);
    let c2 = T::one() - T::lit(beta2).powi(t.min(i32::MAX as u64) as i32);
    let (lr, eps, wd) = (T::lit(lr), T::lit(eps), T::lit(weight_decay));
    let values = p.value.data_mut();
    for i in 0..values.len() {
        let g = p.grad.data()[i] + wd * values[i];
        let mi = b1 * m.data()[i] + (T::one() - b1) * g;
        let vi = b2 * v.data()[i] + (T::one() - b2) * g * g;
        m.data_mut()[i] = mi;
        v.data_mut()[i] = vi;
        values[i] -= lr * (mi / c1) / ((vi / c2).sqrt() + eps);
    }
    Ok(())
}

/// `velocity ← μ·velocity + grad + λ·param; param ← param − lr·velocity`.
pub fn sgd_momentum_step<T: Scalar>(
    p: &mut ParamTensor<T>,
    velocity: &mut Tensor<T>,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    check_lr(lr)?;
    check_buffer("sgd_momentum_step", p, velocity)?;
    let (mu, lr, wd) = (T::lit(momentum), T::lit(lr), T::lit(weight_decay));
    let values = p.value.data_mut();
    for i in 0..values.len() {
        let vel = mu * velocity.data()[i] + p.grad.data()[i] + wd * values[i];
        velocity.data_mut()[i] = vel;
        values[i] -= lr * vel;
    }
    Ok(())
}

/// Per-parameter buffers keyed by parameter name.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamState<T> {
    pub name: String,
    pub buffers: Vec<Tensor<T>>,
}

/// Optimizer over every parameter of a model, visited in model order.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer<T> {
    pub config: OptimizerConfig,
    /// Number of completed steps.
    pub step: u64,
    pub state: Vec<ParamState<T>>,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(config: OptimizerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Optimizer { config, step: 0, state: Vec::new() })
    }

    fn init_state<M: Parameterized<T>>(&mut self, model: &M) {
        let k = self.config.buffer_names().len();
        let mut state = Vec::new();
        model.visit_params("", &mut |name, p| {
            state.push(ParamState { name: name.to_string(), buffers: vec![Tensor::zeros(p.shape()); k] });
        });
        self.state = state;
    }

    /// Applies one update using the gradients accumulated in `model`.
    pub fn step<M: Parameterized<T>>(&mut self, model: &mut M, lr: f64) -> Result<()> {
        check_lr(lr)?;
        if self.state.is_empty() {
            self.init_state(model);
        }
        let t = self.step + 1;
        let cfg = self.config;
        let mut index = 0;
        let mut err = None;
        let state = &mut self.state;
        model.visit_params_mut("", &mut |name, p| {
            if err.is_some() {
                return;
            }
            let Some(s) = state.get_mut(index) else {
                err = Some(Error::InvalidArgument(format!("optimizer has no state for parameter {name}")));
                return;
            };
            index += 1;
            if s.name != name {
                err = Some(Error::InvalidArgument(format!("optimizer state {} does not match parameter {name}", s.name)));
                return;
            }
            let r = match cfg.kind {
                OptimizerKind::Adam { beta1, beta2, eps } => {
                    let (m, v) = s.buffers.split_at_mut(1);
                    adam_step(p, &mut m[0], &mut v[0], t, lr, beta1, beta2, eps, cfg.weight_decay)
                }
                OptimizerKind::Sgd { momentum } => sgd_momentum_step(p, &mut s.buffers[0], lr, momentum, cfg.weight_decay),
            };
            if let Err(e) = r {
                err = Some(e);
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        if index != self.state.len() {
            return Err(Error::InvalidArgument(format!(
                "optimizer tracks {} parameters, model has {index}",
                self.state.len()
            )));
        }
        self.step = t;
        Ok(())
    }

    /// `(name, tensor)` pairs for checkpointing, named `optim.<param>.<buffer>`.
    pub fn named_buffers(&self) -> Vec<(String, &Tensor<T>)> {
        let names = self.config.buffer_names();
        self.state
            .iter()
            .flat_map(|s| s.buffers.iter().zip(names).map(move |(b, n)| (format!("optim.{}.{n}", s.name), b)))
            .collect()
    }
}
