use serde::Serialize;

use crate::layer::{lmf_param_count, LmfConfig, Resample};
use crate::net::{Head, NetworkConfig};

/// Ops per element for batch norm (scale and shift).
pub const BN_OPS: u64 = 2;
/// Ops per element for ReLU.
pub const RELU_OPS: u64 = 1;
/// Comparisons per 2×2 max-pool output.
pub const POOL_OPS: u64 = 3;
/// Ops per bilinear output (four weighted taps, counted once each).
pub const UPSAMPLE_OPS: u64 = 4;
/// Ops per sigmoid output.
pub const SIGMOID_OPS: u64 = 4;

/// `k²·M·N` weights of a standard convolution.
pub fn standard_conv_params(k: usize, c_in: usize, c_out: usize) -> usize {
    k * k * c_in * c_out
}

/// `k²·M + M·N` weights of a depthwise plus pointwise pair.
pub fn separable_conv_params(k: usize, c_in: usize, c_out: usize) -> usize {
    k * k * c_in + c_in * c_out
}

pub fn bn_params(channels: usize) -> usize {
    2 * channels
}

pub fn fc_params(c_in: usize, c_out: usize) -> usize {
    c_in * c_out + c_out
}

/// Exact learnable parameter count of a network configuration.
pub fn network_param_count(config: &NetworkConfig) -> usize {
    let layers: usize = config.named_layers().iter().map(|(_, l)| lmf_param_count(l)).sum();
    let head = match config.head {
        Head::Saliency => config.head_in_channels() + 1,
        Head::Classifier { num_classes, hidden_width } => {
            fc_params(config.head_in_channels(), hidden_width) + fc_params(hidden_width, num_classes)
        }
    };
    layers + head
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct OpCount {
    pub macs: u64,
    /// Non-MAC ops (normalization, activation, resampling).
    pub other: u64,
}

impl OpCount {
    /// One MAC counts as two FLOPs.
    pub fn flops(&self) -> u64 {
        2 * self.macs + self.other
    }
}

impl std::ops::Add for OpCount {
    type Output = OpCount;
    fn add(self, o: OpCount) -> OpCount {
        OpCount { macs: self.macs + o.macs, other: self.other + o.other }
    }
}

impl std::iter::Sum for OpCount {
    fn sum<I: Iterator<Item = OpCount>>(iter: I) -> OpCount {
        iter.fold(OpCount::default(), |a, b| a + b)
    }
}

/// Depthwise conv on `channels` planes of `h × w` (same padding).
pub fn depthwise_macs(channels: usize, h: usize, w: usize, k: usize) -> u64 {
    (channels * h * w * k * k) as u64
}

/// 1×1 conv producing `c_out` planes of `h × w`.
pub fn pointwise_macs(c_in: usize, c_out: usize, h: usize, w: usize) -> u64 {
    (c_in * c_out * h * w) as u64
}

/// One LMF layer at input resolution `h × w`, batch 1.
pub fn lmf_ops(cfg: &LmfConfig, h: usize, w: usize) -> OpCount {
    let (n, m, ci, co, k) = (cfg.branches(), cfg.inputs, cfg.in_channels, cfg.out_channels, cfg.kernel);
    let hw = (h * w) as u64;
    let dw_elems = (n * m * ci) as u64 * hw;
    let fused_elems = (n * co) as u64 * hw;
    let macs = n as u64 * (m as u64 * depthwise_macs(ci, h, w, k) + pointwise_macs(m * ci, co, h, w));
    let mut other = (BN_OPS + RELU_OPS) * (dw_elems + fused_elems);
    other += match cfg.resample {
        Resample::None => 0,
        Resample::Pool => POOL_OPS * fused_elems / 4,
        Resample::Upsample => UPSAMPLE_OPS * fused_elems * 4,
    };
    OpCount { macs, other }
}

/// Per-layer and head operation counts at the configured resolution.
pub fn network_ops(config: &NetworkConfig) -> Vec<(String, OpCount)> {
    let sched = crate::net::spatial_schedule(config);
    let (h0, w0) = (config.input.height, config.input.width);
    let mut inputs: Vec<(usize, usize)> = Vec::new();
    let mut prev = (h0, w0);
    for &hw in &sched.encoder {
        inputs.push(prev);
        prev = hw;
    }
    if let (Some(fi), Some(fl)) = (sched.fusion_i, sched.fusion_l) {
        inputs.push(sched.encoder[2]);
        inputs.push(fi[0]);
        inputs.push(sched.encoder[1]);
        inputs.push(fl[0]);
    }
    for &hw in &sched.decoder {
        inputs.push(prev);
        prev = hw;
    }
    let mut out: Vec<(String, OpCount)> = config
        .named_layers()
        .into_iter()
        .zip(inputs)
        .map(|((name, l), (h, w))| (name, lmf_ops(l, h, w)))
        .collect();
    let cin = config.head_in_channels();
    let head = match config.head {
        Head::Saliency => {
            let hw = (h0 * w0) as u64;
            OpCount { macs: pointwise_macs(cin, 1, h0, w0), other: hw * (1 + SIGMOID_OPS) }
        }
        Head::Classifier { num_classes, hidden_width } => {
            let (h, w) = *sched.encoder.last().unwrap_or(&(0, 0));
            OpCount {
                macs: (cin * hidden_width + hidden_width * num_classes) as u64,
                other: (cin * h * w) as u64 + (2 * hidden_width + num_classes) as u64,
            }
        }
    };
    out.push(("head".into(), head));
    out
}
