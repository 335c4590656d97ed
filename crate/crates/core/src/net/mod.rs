//! Network assembly: the saliency network, its classification variant, and
//! the JSON configuration that determines both.

mod classifier;
mod config;
mod schedule;
mod sod;

pub use classifier::ClassifierNetwork;
pub use config::{
    ClassifierBlueprint, FusionPair, Head, InputSpec, NetworkConfig, SodBlueprint, BASE_DILATIONS, CONFIG_VERSION,
    STAGE1_DILATIONS,
};
pub use schedule::{spatial_schedule, validate_network, ConfigWarning, ScheduleFlag, SpatialSchedule};
pub use sod::{concat_mapwise, SaliencyOutput, SodNetwork};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Parameterized;

/// Copies parameters and buffers between two models with identical layout,
/// converting precision.
pub fn copy_state<A: Scalar, B: Scalar>(src: &impl Parameterized<A>, dst: &mut impl Parameterized<B>) -> Result<()> {
    let mut params = Vec::new();
    src.visit_params("", &mut |name, p| params.push((name.to_string(), p.value.cast::<B>())));
    let mut buffers = Vec::new();
    src.visit_buffers("", &mut |name, b| {
        buffers.push((name.to_string(), b.iter().map(|v| B::from_f64_lossy(v.to_f64_lossy())).collect::<Vec<_>>()))
    });
    let mut err = None;
    let mut it = params.into_iter();
    dst.visit_params_mut("", &mut |name, p| match it.next() {
        Some((n, v)) if n == name && v.shape() == p.shape() => p.value = v,
        other => {
            err.get_or_insert_with(|| format!("parameter {name} has no match (found {:?})", other.map(|o| o.0)));
        }
    });
    let mut it = buffers.into_iter();
    dst.visit_buffers_mut("", &mut |name, b| match it.next() {
        Some((n, v)) if n == name && v.len() == b.len() => *b = v,
        _ => {
            err.get_or_insert_with(|| format!("buffer {name} has no match"));
        }
    });
    match err {
        Some(e) => Err(Error::InvalidArgument(e)),
        None => Ok(()),
    }
}
