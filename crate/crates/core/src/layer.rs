//! The lightweight multi-scale feature (LMF) layer.
//!
//! Each of the `n` branches owns one depthwise dilated kernel that is applied
//! to every one of the `m` input maps. The `m` responses are concatenated
//! along channels and fused by the branch's own 1×1 convolution, giving `n`
//! output maps. Both convolutions are followed by batch norm and ReLU, and the
//! outputs are optionally max-pooled or bilinearly upsampled.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradcheck::{pack_signs, Piecewise};
use crate::ops::{
    channels_to_maps, conv2d_depthwise, conv2d_depthwise_backward, conv2d_pointwise,
    conv2d_pointwise_backward, maps_to_channels, maxpool2, maxpool2_backward, relu, relu_backward,
    upsample_bilinear2, upsample_bilinear2_backward, BatchNorm, BnMode, ConvGeometry, PoolIndices,
};
use crate::scalar::Scalar;
use crate::tensor::{join_name, ParamRole, ParamTensor, Parameterized, Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Resample {
    None,
    Pool,
    Upsample,
}

/// Shape and dilation description of one LMF layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LmfConfig {
    /// One branch per entry.
    pub dilations: Vec<usize>,
    /// Number of input maps `m`.
    pub inputs: usize,
    /// Channels per input map.
    pub in_channels: usize,
    /// Channels per output map.
    pub out_channels: usize,
    /// Depthwise kernel size (odd).
    pub kernel: usize,
    pub resample: Resample,
}

impl LmfConfig {
    pub fn branches(&self) -> usize {
        self.dilations.len()
    }

    pub fn has_unit_dilation(&self) -> bool {
        self.dilations.contains(&1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dilations.is_empty() {
            return Err(Error::Config("dilation vector must not be empty".into()));
        }
        if self.dilations.contains(&0) {
            return Err(Error::Config(format!("dilations must be positive, got {:?}", self.dilations)));
        }
        if self.inputs == 0 {
            return Err(Error::Config("input map count must be at least 1".into()));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        if self.kernel == 0 || self.kernel % 2 == 0 {
            return Err(Error::Config(format!("kernel size must be odd, got {}", self.kernel)));
        }
        Ok(())
    }
}

/// Leading `n` entries of `base`.
pub fn truncate_dilation_vector(base: &[usize], n: usize) -> Result<Vec<usize>> {
    if n == 0 || n > base.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot take {n} dilations from a vector of length {}",
            base.len()
        )));
    }
    Ok(base[..n].to_vec())
}

/// Learnable parameter count of one layer, batch-norm affine terms included.
pub fn lmf_param_count(config: &LmfConfig) -> usize {
    let n = config.branches();
    let (k, m, ci, co) = (config.kernel, config.inputs, config.in_channels, config.out_channels);
    n * (k * k * ci) + n * (m * ci * co) + n * (2 * ci + 2 * co)
}

#[derive(Debug, Clone)]
struct Branch<T> {
    geometry: ConvGeometry,
    depthwise: ParamTensor<T>,
    dw_bn: BatchNorm<T>,
    fusion: ParamTensor<T>,
    fusion_bn: BatchNorm<T>,
}

#[derive(Debug, Clone)]
struct BranchCache<T> {
    dw_bn_out: Tensor<T>,
    fused_in: Tensor<T>,
    fusion_bn_out: Tensor<T>,
    activated_shape: Shape,
    pool: Option<PoolIndices>,
}

#[derive(Debug, Clone)]
struct LayerCache<T> {
    stacked: Tensor<T>,
    input_shape: Shape,
    branches: Vec<BranchCache<T>>,
}

#[derive(Debug, Clone)]
pub struct LmfLayer<T> {
    config: LmfConfig,
    branches: Vec<Branch<T>>,
    cache: Option<LayerCache<T>>,
}

pub(crate) fn uniform_param<T: Scalar, R: Rng + ?Sized>(shape: Shape, fan_in: usize, role: ParamRole, rng: &mut R) -> ParamTensor<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    ParamTensor::new(Tensor::uniform(shape, -bound, bound, rng), role)
}

impl<T: Scalar> LmfLayer<T> {
    /// Fan-in scaled uniform weights; batch norm starts at gamma = 1, beta = 0.
    pub fn new<R: Rng + ?Sized>(config: LmfConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let (k, m, ci, co) = (config.kernel, config.inputs, config.in_channels, config.out_channels);
        let branches = config
            .dilations
            .iter()
            .map(|&d| Branch {
                geometry: ConvGeometry::same(k, d),
                depthwise: uniform_param(Shape::new(ci, 1, k, k), k * k, ParamRole::DepthwiseWeight, rng),
                dw_bn: BatchNorm::new(ci),
                fusion: uniform_param(Shape::new(co, m * ci, 1, 1), m * ci, ParamRole::PointwiseWeight, rng),
                fusion_bn: BatchNorm::new(co),
            })
            .collect();
        Ok(LmfLayer { config, branches, cache: None })
    }

    pub fn config(&self) -> &LmfConfig {
        &self.config
    }

    /// Output spatial size for an input of `h × w`.
    pub fn output_hw(&self, h: usize, w: usize) -> (usize, usize) {
        match self.config.resample {
            Resample::None => (h, w),
            Resample::Pool => (h / 2, w / 2),
            Resample::Upsample => (2 * h, 2 * w),
        }
    }

    fn check_inputs(&self, inputs: &[Tensor<T>]) -> Result<Shape> {
        if inputs.len() != self.config.inputs {
            return Err(Error::shape(
                "lmf_forward",
                format!("expected {} input maps, got {}", self.config.inputs, inputs.len()),
            ));
        }
        let s = inputs[0].shape();
        if let Some(bad) = inputs.iter().find(|t| t.shape() != s) {
            return Err(Error::shape_pair("lmf_forward", s, bad.shape()));
        }
        if s.c != self.config.in_channels {
            return Err(Error::shape(
                "lmf_forward",
                format!("input {s} has {} channels, layer expects {}", s.c, self.config.in_channels),
            ));
        }
        if self.config.resample == Resample::Pool && (s.h % 2 != 0 || s.w % 2 != 0) {
            return Err(Error::shape("lmf_forward", format!("pooling layer needs even spatial dims, got {s}")));
        }
        Ok(s)
    }

    /// Runs the layer on `m` input maps and returns `n` output maps. Train
    /// mode keeps what [`LmfLayer::backward`] needs.
    pub fn forward(&mut self, inputs: &[Tensor<T>], mode: BnMode) -> Result<Vec<Tensor<T>>> {
        let input_shape = self.check_inputs(inputs)?;
        let stacked = Tensor::stack_batch(inputs)?;
        let m = self.config.inputs;
        let resample = self.config.resample;
        let results: Vec<Result<(Tensor<T>, BranchCache<T>)>> = self
            .branches
            .par_iter_mut()
            .map(|b| {
                let a = conv2d_depthwise(&stacked, &b.depthwise.value, &b.geometry)?;
                let a = b.dw_bn.forward(&a, mode)?;
                let fused_in = maps_to_channels(&relu(&a), m)?;
                let p = conv2d_pointwise(&fused_in, &b.fusion.value, None)?;
                let q = b.fusion_bn.forward(&p, mode)?;
                let o = relu(&q);
                let activated_shape = o.shape();
                let (out, pool) = match resample {
                    Resample::None => (o, None),
                    Resample::Pool => {
                        let (y, idx) = maxpool2(&o)?;
                        (y, Some(idx))
                    }
                    Resample::Upsample => (upsample_bilinear2(&o)?, None),
                };
                Ok((out, BranchCache { dw_bn_out: a, fused_in, fusion_bn_out: q, activated_shape, pool }))
            })
            .collect();
        let mut outputs = Vec::with_capacity(results.len());
        let mut caches = Vec::with_capacity(results.len());
        for r in results {
            let (o, c) = r?;
            outputs.push(o);
            caches.push(c);
        }
        self.cache = match mode {
            BnMode::Train => Some(LayerCache { stacked, input_shape, branches: caches }),
            BnMode::Eval => None,
        };
        Ok(outputs)
    }

    /// Accumulates parameter gradients and returns one gradient per input map.
    pub fn backward(&mut self, grad_outputs: &[Tensor<T>]) -> Result<Vec<Tensor<T>>> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::InvalidArgument("lmf backward requires a train-mode forward".into()))?;
        if grad_outputs.len() != self.branches.len() {
            return Err(Error::shape(
                "lmf_backward",
                format!("expected {} output gradients, got {}", self.branches.len(), grad_outputs.len()),
            ));
        }
        let m = self.config.inputs;
        let resample = self.config.resample;
        let stacked = &cache.stacked;
        let results: Vec<Result<Tensor<T>>> = self
            .branches
            .par_iter_mut()
            .zip(cache.branches.par_iter())
            .zip(grad_outputs.par_iter())
            .map(|((b, c), g)| {
                let g = match resample {
                    Resample::None => g.clone(),
                    Resample::Pool => maxpool2_backward(c.pool.as_ref().expect("pool indices cached"), g)?,
                    Resample::Upsample => upsample_bilinear2_backward(c.activated_shape, g)?,
                };
                let g = relu_backward(&c.fusion_bn_out, &g)?;
                let g = b.fusion_bn.backward(&g)?;
                let pw = conv2d_pointwise_backward(&c.fused_in, &b.fusion.value, false, &g)?;
                b.fusion.grad.add_assign(&pw.weight)?;
                let g = channels_to_maps(&pw.input, m)?;
                let g = relu_backward(&c.dw_bn_out, &g)?;
                let g = b.dw_bn.backward(&g)?;
                let (gx, gw) = conv2d_depthwise_backward(stacked, &b.depthwise.value, &b.geometry, &g)?;
                b.depthwise.grad.add_assign(&gw)?;
                Ok(gx)
            })
            .collect();
        let mut total = Tensor::zeros(stacked.shape());
        for r in results {
            total.add_assign(&r?)?;
        }
        let grads = total.split_batch(m)?;
        debug_assert!(grads.iter().all(|g| g.shape() == cache.input_shape));
        Ok(grads)
    }
}

impl<T: Scalar> LmfLayer<T> {
    /// Appends this layer's ReLU signs and pool argmax from the cached
    /// train-mode forward; false when nothing is cached.
    pub(crate) fn push_pattern(&self, out: &mut Vec<u64>) -> bool {
        let Some(cache) = &self.cache else { return false };
        for b in &cache.branches {
            pack_signs(b.dw_bn_out.data(), out);
            pack_signs(b.fusion_bn_out.data(), out);
            if let Some(p) = &b.pool {
                out.extend(p.argmax.iter().map(|&i| i as u64));
            }
        }
        true
    }
}

impl<T: Scalar> Piecewise for LmfLayer<T> {
    fn activation_pattern(&self) -> Option<Vec<u64>> {
        let mut out = Vec::new();
        self.push_pattern(&mut out).then_some(out)
    }
}

impl<T: Scalar> Parameterized<T> for LmfLayer<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &ParamTensor<T>)) {
        for (i, b) in self.branches.iter().enumerate() {
            let p = join_name(prefix, &format!("branch{i}"));
            f(&join_name(&p, "depthwise"), &b.depthwise);
            b.dw_bn.visit_params(&join_name(&p, "dw_bn"), f);
            f(&join_name(&p, "fusion"), &b.fusion);
            b.fusion_bn.visit_params(&join_name(&p, "fusion_bn"), f);
        }
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut ParamTensor<T>)) {
        for (i, b) in self.branches.iter_mut().enumerate() {
            let p = join_name(prefix, &format!("branch{i}"));
            f(&join_name(&p, "depthwise"), &mut b.depthwise);
            b.dw_bn.visit_params_mut(&join_name(&p, "dw_bn"), f);
            f(&join_name(&p, "fusion"), &mut b.fusion);
            b.fusion_bn.visit_params_mut(&join_name(&p, "fusion_bn"), f);
        }
    }

    fn visit_buffers(&self, prefix: &str, f: &mut dyn FnMut(&str, &[T])) {
        for (i, b) in self.branches.iter().enumerate() {
            let p = join_name(prefix, &format!("branch{i}"));
            b.dw_bn.visit_buffers(&join_name(&p, "dw_bn"), f);
            b.fusion_bn.visit_buffers(&join_name(&p, "fusion_bn"), f);
        }
    }

    fn visit_buffers_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Vec<T>)) {
        for (i, b) in self.branches.iter_mut().enumerate() {
            let p = join_name(prefix, &format!("branch{i}"));
            b.dw_bn.visit_buffers_mut(&join_name(&p, "dw_bn"), f);
            b.fusion_bn.visit_buffers_mut(&join_name(&p, "fusion_bn"), f);
        }
    }
}
