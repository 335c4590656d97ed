//! Differentiable kernels with hand-written forward and backward passes.
//!
//! Every kernel parallelizes only across independent output planes, so each
//! output element is reduced by exactly one worker in a fixed order and
//! results do not depend on the thread count.

mod activation;
mod batchnorm;
mod concat;
mod conv;
mod linear;
mod pool;
mod upsample;

pub use activation::{relu, relu_backward, sigmoid, sigmoid_backward, Activation};
pub use batchnorm::{
    batchnorm_backward, batchnorm_eval, batchnorm_eval_backward, batchnorm_train, BatchNorm,
    BnCache, BnMode, BN_EPS, BN_MOMENTUM,
};
pub use concat::{
    channels_to_maps, concat_channels, maps_to_channels, split_channels,
};
pub use conv::{
    conv2d_depthwise, conv2d_depthwise_backward, conv2d_pointwise, conv2d_pointwise_backward,
    ConvGeometry, PointwiseGrads,
};
pub use linear::{global_avg_pool, global_avg_pool_backward};
pub use pool::{maxpool2, maxpool2_backward, PoolIndices};
pub use upsample::{upsample_bilinear2, upsample_bilinear2_backward};

use rayon::prelude::*;

/// Below this many output elements the kernels stay on the calling thread.
const PAR_MIN_ELEMS: usize = 1 << 14;

/// Runs `f(plane_index, plane)` over consecutive `plane_len`-sized chunks of
/// `out`, in parallel when the buffer is large.
pub(crate) fn for_each_plane<T: Send>(
    out: &mut [T],
    plane_len: usize,
    f: impl Fn(usize, &mut [T]) + Sync + Send,
) {
    if plane_len == 0 {
        return;
    }
    if out.len() < PAR_MIN_ELEMS {
        out.chunks_mut(plane_len).enumerate().for_each(|(i, p)| f(i, p));
    } else {
        out.par_chunks_mut(plane_len).enumerate().for_each(|(i, p)| f(i, p));
    }
}
