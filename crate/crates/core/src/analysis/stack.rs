use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Conv,
    Pool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kernel: usize,
    pub dilation: usize,
    pub stride: usize,
    pub kind: LayerKind,
}

impl LayerSpec {
    pub fn conv(kernel: usize, dilation: usize) -> Self {
        LayerSpec { kernel, dilation, stride: 1, kind: LayerKind::Conv }
    }

    /// 2×2 max pool, stride 2.
    pub fn pool() -> Self {
        LayerSpec { kernel: 2, dilation: 1, stride: 2, kind: LayerKind::Pool }
    }
}

/// Ordered layers of a single path through a network.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LayerStackSpec {
    pub layers: Vec<LayerSpec>,
}

impl LayerStackSpec {
    pub fn new(layers: Vec<LayerSpec>) -> Self {
        LayerStackSpec { layers }
    }

    /// Stride-1 convolutions from `(kernel, dilation)` pairs.
    pub fn convs(pairs: &[(usize, usize)]) -> Self {
        LayerStackSpec { layers: pairs.iter().map(|&(k, d)| LayerSpec::conv(k, d)).collect() }
    }

    /// Parses `k:d` tokens separated by commas, with `pool` for a 2×2 pool,
    /// e.g. `5:1,3:4,pool,3:12`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut layers = Vec::new();
        for tok in text.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            if tok.eq_ignore_ascii_case("pool") {
                layers.push(LayerSpec::pool());
                continue;
            }
            let (k, d) = tok
                .split_once(':')
                .ok_or_else(|| Error::InvalidArgument(format!("layer `{tok}` is not of the form k:d or pool")))?;
            let parse = |s: &str| {
                s.parse::<usize>().map_err(|_| Error::InvalidArgument(format!("layer `{tok}`: `{s}` is not a positive integer")))
            };
            layers.push(LayerSpec::conv(parse(k)?, parse(d)?));
        }
        let stack = LayerStackSpec { layers };
        stack.validate()?;
        Ok(stack)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidArgument("layer stack is empty".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.kernel == 0 || l.dilation == 0 || l.stride == 0 {
                return Err(Error::InvalidArgument(format!("layer {i}: kernel, dilation and stride must be positive")));
            }
            if l.kind == LayerKind::Conv && l.kernel % 2 == 0 {
                return Err(Error::InvalidArgument(format!("layer {i}: conv kernel {} must be odd", l.kernel)));
            }
        }
        Ok(())
    }

    pub fn conv_layers(&self) -> impl Iterator<Item = &LayerSpec> {
        self.layers.iter().filter(|l| l.kind == LayerKind::Conv)
    }
}

/// Per-layer receptive fields under both recurrences.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ReceptiveField {
    /// `RF_i = k_i + (RF_{i−1} − 1)·d_i`, with a pool read as `k = 2, d = 2`.
    pub dilation_formula: Vec<usize>,
    /// `RF_i = RF_{i−1} + (k_i − 1)·d_i·J_{i−1}` with `J` the product of
    /// preceding strides; matches the true gradient support.
    pub standard: Vec<usize>,
}

impl ReceptiveField {
    pub fn last(&self) -> usize {
        *self.standard.last().expect("non-empty stack")
    }
}

pub fn receptive_field(stack: &LayerStackSpec) -> Result<ReceptiveField> {
    stack.validate()?;
    let mut dilation_formula = Vec::with_capacity(stack.layers.len());
    let mut standard = Vec::with_capacity(stack.layers.len());
    let (mut a, mut b, mut jump) = (1usize, 1usize, 1usize);
    for l in &stack.layers {
        let d_step = match l.kind {
            LayerKind::Conv => l.dilation,
            LayerKind::Pool => l.stride,
        };
        a = l.kernel + (a - 1) * d_step;
        b += (l.kernel - 1) * l.dilation * jump;
        jump *= l.stride;
        dilation_formula.push(a);
        standard.push(b);
    }
    Ok(ReceptiveField { dilation_formula, standard })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairVerdict {
    /// Index of the earlier conv among conv layers.
    pub index: usize,
    pub kernel: usize,
    pub dilation: usize,
    pub next_dilation: usize,
    pub ratio: f64,
    pub pass: bool,
}

/// Input offsets sampled by one output tap of the composed conv kernels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Coverage {
    pub min: i64,
    pub max: i64,
    pub covered: usize,
    pub gaps: Vec<i64>,
}

impl Coverage {
    /// `#` for a sampled offset, `.` for a gap.
    pub fn render(&self) -> String {
        let gaps: BTreeSet<i64> = self.gaps.iter().copied().collect();
        (self.min..=self.max).map(|p| if gaps.contains(&p) { '.' } else { '#' }).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GriddingReport {
    pub pairs: Vec<PairVerdict>,
    pub coverage: Coverage,
}

impl GriddingReport {
    pub fn passed(&self) -> bool {
        self.pairs.iter().all(|p| p.pass)
    }
}

/// Exact 1-D sampling coverage of the conv layers (pools skipped).
pub fn coverage(stack: &LayerStackSpec) -> Coverage {
    let mut reach: BTreeSet<i64> = BTreeSet::from([0]);
    for l in stack.conv_layers() {
        let r = (l.kernel as i64 - 1) / 2;
        let d = l.dilation as i64;
        reach = reach.iter().flat_map(|&p| (-r..=r).map(move |t| p + t * d)).collect();
    }
    let min = *reach.first().expect("non-empty");
    let max = *reach.last().expect("non-empty");
    let gaps = (min..=max).filter(|p| !reach.contains(p)).collect();
    Coverage { min, max, covered: reach.len(), gaps }
}

/// Adjacent-ratio rule: a pair passes when `d_{i+1} ≤ k_i·d_i`, the largest
/// ratio that still leaves no holes between consecutive taps.
pub fn gridding_check(stack: &LayerStackSpec) -> GriddingReport {
    let convs: Vec<&LayerSpec> = stack.conv_layers().collect();
    let pairs = convs
        .windows(2)
        .enumerate()
        .map(|(i, w)| PairVerdict {
            index: i,
            kernel: w[0].kernel,
            dilation: w[0].dilation,
            next_dilation: w[1].dilation,
            ratio: w[1].dilation as f64 / w[0].dilation as f64,
            pass: w[1].dilation <= w[0].kernel * w[0].dilation,
        })
        .collect();
    GriddingReport { pairs, coverage: coverage(stack) }
}
