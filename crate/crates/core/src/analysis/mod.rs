//! Static analyzers: receptive field, dilation gridding, parameter and
//! operation counts.

mod count;
mod report;
mod stack;

pub use count::*;
pub use report::{
    analyze_network, analyze_stack, encoder_path, gridding_text, widest_encoder_path, AnalysisReport, LayerReport,
    StackReport,
};
pub use stack::{
    coverage, gridding_check, receptive_field, Coverage, GriddingReport, LayerKind, LayerSpec, LayerStackSpec,
    PairVerdict, ReceptiveField,
};
