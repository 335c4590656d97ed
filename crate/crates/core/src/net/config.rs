use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layer::{truncate_dilation_vector, LmfConfig, Resample};

pub const CONFIG_VERSION: u32 = 1;
/// Dilations of the first encoder layer.
pub const STAGE1_DILATIONS: [usize; 3] = [1, 4, 1];
/// Dilations of every other layer, truncated to the layer's branch count.
pub const BASE_DILATIONS: [usize; 5] = [1, 4, 12, 36, 108];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputSpec {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

/// Pool-then-upsample layer pair that re-injects an encoder feature into the
/// decoder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionPair {
    pub pool: LmfConfig,
    pub upsample: LmfConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Head {
    Saliency,
    Classifier { num_classes: usize, hidden_width: usize },
}

/// Full description of a network; determines the parameter count exactly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub version: u32,
    pub input: InputSpec,
    pub encoder: Vec<LmfConfig>,
    #[serde(default)]
    pub fusion_i: Option<FusionPair>,
    #[serde(default)]
    pub fusion_l: Option<FusionPair>,
    #[serde(default)]
    pub decoder: Vec<LmfConfig>,
    pub head: Head,
    /// Skips the rate-1 warning for ablations that remove unit dilations.
    #[serde(default)]
    pub allow_missing_unit_dilation: bool,
}

impl NetworkConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: NetworkConfig = serde_json::from_str(text)?;
        if cfg.version != CONFIG_VERSION {
            return Err(Error::Config(format!("unsupported config version {}, expected {CONFIG_VERSION}", cfg.version)));
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn is_classifier(&self) -> bool {
        matches!(self.head, Head::Classifier { .. })
    }

    /// Every layer in forward order with a stable name.
    pub fn named_layers(&self) -> Vec<(String, &LmfConfig)> {
        let mut out: Vec<(String, &LmfConfig)> = Vec::new();
        for (i, l) in self.encoder.iter().enumerate() {
            out.push((format!("encoder{}", i + 1), l));
        }
        if let Some(f) = &self.fusion_i {
            out.push(("fusion_i.pool".into(), &f.pool));
            out.push(("fusion_i.upsample".into(), &f.upsample));
        }
        if let Some(f) = &self.fusion_l {
            out.push(("fusion_l.pool".into(), &f.pool));
            out.push(("fusion_l.upsample".into(), &f.upsample));
        }
        for (i, l) in self.decoder.iter().enumerate() {
            out.push((format!("decoder{}", i + 6), l));
        }
        out
    }

    /// Input channels of the head: all output maps of the last stage
    /// concatenated.
    pub fn head_in_channels(&self) -> usize {
        let last = match self.head {
            Head::Saliency => self.decoder.last(),
            Head::Classifier { .. } => self.encoder.last(),
        };
        last.map(|l| l.branches() * l.out_channels).unwrap_or(0)
    }
}

fn layer(dilations: Vec<usize>, inputs: usize, cin: usize, cout: usize, kernel: usize, resample: Resample) -> LmfConfig {
    LmfConfig { dilations, inputs, in_channels: cin, out_channels: cout, kernel, resample }
}

/// Parametric description of the default saliency network family.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SodBlueprint {
    /// Output channels of encoder stages 1–5; the decoder mirrors them.
    pub widths: [usize; 5],
    pub encoder_branches: [usize; 5],
    /// Branch counts of decoder stages 6–9.
    pub decoder_branches: [usize; 4],
    /// Branch count of the pooling half of both fusion pairs.
    pub fusion_branches: usize,
    pub stage1_dilations: Vec<usize>,
    pub base_dilations: Vec<usize>,
    pub stage1_kernel: usize,
    pub kernel: usize,
    /// Ablation: drop every unit dilation outside the first layer.
    pub drop_unit_dilations: bool,
}

impl Default for SodBlueprint {
    fn default() -> Self {
        SodBlueprint {
            widths: [16, 16, 32, 96, 160],
            encoder_branches: [3, 5, 5, 5, 5],
            decoder_branches: [3, 3, 2, 2],
            fusion_branches: 3,
            stage1_dilations: STAGE1_DILATIONS.to_vec(),
            base_dilations: BASE_DILATIONS.to_vec(),
            stage1_kernel: 5,
            kernel: 3,
            drop_unit_dilations: false,
        }
    }
}

impl SodBlueprint {
    /// Uniform width multiplier, rounded to multiples of 4.
    pub fn width_scaled(factor: f64) -> Self {
        let base = Self::default();
        let widths = base.widths.map(|w| (((w as f64 * factor) / 4.0).round() as usize * 4).max(4));
        SodBlueprint { widths, ..base }
    }

    /// All stages at one small width (desk-scale tests).
    pub fn tiny(width: usize) -> Self {
        SodBlueprint { widths: [width; 5], ..Self::default() }
    }

    fn dilations(&self, n: usize) -> Result<Vec<usize>> {
        let mut d = truncate_dilation_vector(&self.base_dilations, n)?;
        if self.drop_unit_dilations {
            d.retain(|&v| v != 1);
            if d.is_empty() {
                return Err(Error::Config("dropping unit dilations left an empty branch set".into()));
            }
        }
        Ok(d)
    }

    fn encoder(&self) -> Result<Vec<LmfConfig>> {
        let w = self.widths;
        let mut enc = vec![layer(
            truncate_dilation_vector(&self.stage1_dilations, self.encoder_branches[0])?,
            1,
            3,
            w[0],
            self.stage1_kernel,
            Resample::None,
        )];
        for i in 1..5 {
            let prev = &enc[i - 1];
            let d = self.dilations(self.encoder_branches[i])?;
            enc.push(layer(d, prev.branches(), prev.out_channels, w[i], self.kernel, Resample::Pool));
        }
        Ok(enc)
    }

    pub fn build(&self, height: usize, width: usize) -> Result<NetworkConfig> {
        let w = self.widths;
        let k = self.kernel;
        let enc = self.encoder()?;
        let db = self.decoder_branches;
        let dec_widths = [w[3], w[2], w[1], w[0]];

        let fi_pool = layer(self.dilations(self.fusion_branches)?, enc[2].branches(), w[2], w[2], k, Resample::Pool);
        let fi_up = layer(self.dilations(db[1])?, fi_pool.branches(), w[2], w[2], k, Resample::Upsample);
        let fl_pool = layer(self.dilations(self.fusion_branches)?, enc[1].branches(), w[1], w[1], k, Resample::Pool);
        let fl_up = layer(self.dilations(db[2])?, fl_pool.branches(), w[1], w[1], k, Resample::Upsample);

        let d6 = layer(self.dilations(db[0])?, enc[4].branches(), w[4], dec_widths[0], k, Resample::Upsample);
        let d7 = layer(self.dilations(db[1])?, d6.branches(), d6.out_channels, dec_widths[1], k, Resample::Upsample);
        let d8 = layer(
            self.dilations(db[2])?,
            d7.branches(),
            d7.out_channels + fi_up.out_channels,
            dec_widths[2],
            k,
            Resample::Upsample,
        );
        let d9 = layer(
            self.dilations(db[3])?,
            d8.branches(),
            d8.out_channels + fl_up.out_channels,
            dec_widths[3],
            k,
            Resample::Upsample,
        );
        Ok(NetworkConfig {
            version: CONFIG_VERSION,
            input: InputSpec { channels: 3, height, width },
            encoder: enc,
            fusion_i: Some(FusionPair { pool: fi_pool, upsample: fi_up }),
            fusion_l: Some(FusionPair { pool: fl_pool, upsample: fl_up }),
            decoder: vec![d6, d7, d8, d9],
            head: Head::Saliency,
            allow_missing_unit_dilation: self.drop_unit_dilations,
        })
    }
}

/// Encoder-only classification network family.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassifierBlueprint {
    pub encoder: SodBlueprint,
    pub hidden_width: usize,
    pub num_classes: usize,
}

impl ClassifierBlueprint {
    pub fn new(num_classes: usize) -> Self {
        ClassifierBlueprint { encoder: SodBlueprint::default(), hidden_width: 192, num_classes }
    }

    /// Width-8 encoder with a 32-wide hidden layer, for fast checks.
    pub fn tiny(num_classes: usize) -> Self {
        ClassifierBlueprint { encoder: SodBlueprint::tiny(8), hidden_width: 32, num_classes }
    }

    /// Widened variant with roughly twice the parameters.
    pub fn widened(num_classes: usize) -> Self {
        ClassifierBlueprint {
            encoder: SodBlueprint { widths: [24, 24, 48, 128, 240], ..SodBlueprint::default() },
            hidden_width: 288,
            num_classes,
        }
    }

    pub fn build(&self, height: usize, width: usize) -> Result<NetworkConfig> {
        if self.num_classes < 2 {
            return Err(Error::Config(format!("classifier needs at least 2 classes, got {}", self.num_classes)));
        }
        Ok(NetworkConfig {
            version: CONFIG_VERSION,
            input: InputSpec { channels: 3, height, width },
            encoder: self.encoder.encoder()?,
            fusion_i: None,
            fusion_l: None,
            decoder: Vec::new(),
            head: Head::Classifier { num_classes: self.num_classes, hidden_width: self.hidden_width },
            allow_missing_unit_dilation: self.encoder.drop_unit_dilations,
        })
    }
}
