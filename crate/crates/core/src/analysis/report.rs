use std::fmt::Write as _;

use serde::Serialize;

use super::count::{network_ops, network_param_count, OpCount};
use super::stack::{gridding_check, receptive_field, GriddingReport, LayerSpec, LayerStackSpec, ReceptiveField};
use crate::error::Result;
use crate::layer::{lmf_param_count, Resample};
use crate::net::{validate_network, ConfigWarning, NetworkConfig, SpatialSchedule};

/// Escalating encoder path: stage `s` contributes its `s`-th dilation (or its
/// last, when it has fewer branches), followed by its pool.
pub fn encoder_path(config: &NetworkConfig) -> LayerStackSpec {
    let mut layers = Vec::new();
    for (s, l) in config.encoder.iter().enumerate() {
        let d = l.dilations[s.min(l.dilations.len() - 1)];
        layers.push(LayerSpec::conv(l.kernel, d));
        if l.resample == Resample::Pool {
            layers.push(LayerSpec::pool());
        }
    }
    LayerStackSpec::new(layers)
}

/// Encoder path using each stage's largest dilation.
pub fn widest_encoder_path(config: &NetworkConfig) -> LayerStackSpec {
    let mut layers = Vec::new();
    for l in &config.encoder {
        layers.push(LayerSpec::conv(l.kernel, *l.dilations.iter().max().expect("validated")));
        if l.resample == Resample::Pool {
            layers.push(LayerSpec::pool());
        }
    }
    LayerStackSpec::new(layers)
}

#[derive(Debug, Clone, Serialize)]
pub struct LayerReport {
    pub name: String,
    pub dilations: Vec<usize>,
    pub inputs: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub params: usize,
    pub macs: u64,
    pub flops: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalysisReport {
    pub input: (usize, usize),
    pub layers: Vec<LayerReport>,
    pub total_params: usize,
    pub total_macs: u64,
    pub total_flops: u64,
    pub path: LayerStackSpec,
    pub receptive_field: ReceptiveField,
    /// Standard receptive field along the widest-dilation path.
    pub max_receptive_field: usize,
    pub gridding: GriddingReport,
    pub schedule: SpatialSchedule,
    pub warnings: Vec<ConfigWarning>,
}

pub fn analyze_network(config: &NetworkConfig) -> Result<AnalysisReport> {
    let (schedule, warnings) = validate_network(config)?;
    let ops = network_ops(config);
    let mut layers: Vec<LayerReport> = config
        .named_layers()
        .into_iter()
        .zip(&ops)
        .map(|((name, l), (_, op))| LayerReport {
            name,
            dilations: l.dilations.clone(),
            inputs: l.inputs,
            in_channels: l.in_channels,
            out_channels: l.out_channels,
            params: lmf_param_count(l),
            macs: op.macs,
            flops: op.flops(),
        })
        .collect();
    let layer_params: usize = layers.iter().map(|l| l.params).sum();
    let total_params = network_param_count(config);
    let head_op = ops.last().expect("head entry").1;
    layers.push(LayerReport {
        name: "head".into(),
        dilations: Vec::new(),
        inputs: 1,
        in_channels: config.head_in_channels(),
        out_channels: 0,
        params: total_params - layer_params,
        macs: head_op.macs,
        flops: head_op.flops(),
    });
    let total: OpCount = ops.iter().map(|(_, o)| *o).sum();
    let path = encoder_path(config);
    Ok(AnalysisReport {
        input: (config.input.height, config.input.width),
        layers,
        total_params,
        total_macs: total.macs,
        total_flops: total.flops(),
        receptive_field: receptive_field(&path)?,
        max_receptive_field: receptive_field(&widest_encoder_path(config))?.last(),
        gridding: gridding_check(&path),
        path,
        schedule,
        warnings,
    })
}

fn si(v: f64) -> String {
    if v >= 1e9 {
        format!("{:.3}G", v / 1e9)
    } else if v >= 1e6 {
        format!("{:.3}M", v / 1e6)
    } else if v >= 1e3 {
        format!("{:.1}K", v / 1e3)
    } else {
        format!("{v}")
    }
}

fn render_stack(stack: &LayerStackSpec) -> String {
    stack
        .layers
        .iter()
        .map(|l| match l.kind {
            super::stack::LayerKind::Conv => format!("{}:{}", l.kernel, l.dilation),
            super::stack::LayerKind::Pool => "pool".into(),
        })
        .collect::<Vec<_>>()
        .join(",")
}

/// Aligned table of one gridding report.
pub fn gridding_text(g: &GriddingReport) -> String {
    let mut s = String::new();
    for p in &g.pairs {
        let _ = writeln!(
            s,
            "  pair {:<2} k={} d {:>4} -> {:<4} ratio {:>6.2}  {}",
            p.index,
            p.kernel,
            p.dilation,
            p.next_dilation,
            p.ratio,
            if p.pass { "PASS" } else { "FAIL" }
        );
    }
    let c = &g.coverage;
    let _ = writeln!(s, "  coverage [{}, {}]: {} sampled, {} gaps", c.min, c.max, c.covered, c.gaps.len());
    if c.max - c.min < 120 {
        let _ = writeln!(s, "  {}", c.render());
    }
    s
}

impl AnalysisReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "input {}x{}", self.input.0, self.input.1);
        let _ = writeln!(
            s,
            "{:<18} {:<20} {:>3} {:>5} {:>5} {:>10} {:>14} {:>14}",
            "layer", "dilations", "m", "c_in", "c_out", "params", "MACs", "FLOPs"
        );
        for l in &self.layers {
            let _ = writeln!(
                s,
                "{:<18} {:<20} {:>3} {:>5} {:>5} {:>10} {:>14} {:>14}",
                l.name,
                format!("{:?}", l.dilations),
                l.inputs,
                l.in_channels,
                l.out_channels,
                l.params,
                l.macs,
                l.flops
            );
        }
        let _ = writeln!(
            s,
            "total params {} ({}), MACs {} ({}), FLOPs {} ({})",
            self.total_params,
            si(self.total_params as f64),
            self.total_macs,
            si(self.total_macs as f64),
            self.total_flops,
            si(self.total_flops as f64)
        );
        let _ = writeln!(s, "path {}", render_stack(&self.path));
        let _ = writeln!(s, "receptive field (standard)         {:?}", self.receptive_field.standard);
        let _ = writeln!(s, "receptive field (dilation formula) {:?}", self.receptive_field.dilation_formula);
        let _ = writeln!(s, "max receptive field {}", self.max_receptive_field);
        let _ = writeln!(s, "gridding {}", if self.gridding.passed() { "PASS" } else { "FAIL" });
        s.push_str(&gridding_text(&self.gridding));
        for w in &self.warnings {
            let _ = writeln!(s, "warning: {}: {}", w.layer, w.message);
        }
        s
    }
}

/// Receptive field and gridding for a bare layer stack.
#[derive(Debug, Clone, Serialize)]
pub struct StackReport {
    pub stack: LayerStackSpec,
    pub receptive_field: ReceptiveField,
    pub gridding: GriddingReport,
}

pub fn analyze_stack(stack: &LayerStackSpec) -> Result<StackReport> {
    Ok(StackReport { stack: stack.clone(), receptive_field: receptive_field(stack)?, gridding: gridding_check(stack) })
}

impl StackReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "stack {}", render_stack(&self.stack));
        let _ = writeln!(s, "receptive field (standard)         {:?}", self.receptive_field.standard);
        let _ = writeln!(s, "receptive field (dilation formula) {:?}", self.receptive_field.dilation_formula);
        let _ = writeln!(s, "gridding {}", if self.gridding.passed() { "PASS" } else { "FAIL" });
        s.push_str(&gridding_text(&self.gridding));
        s
    }
}
