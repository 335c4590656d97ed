use serde::Serialize;

use super::config::{Head, NetworkConfig};
use crate::error::{Error, Result};
use crate::layer::{LmfConfig, Resample};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScheduleFlag {
    /// A pooling layer receives an odd or zero extent.
    OddAtPool { layer: String, h: usize, w: usize },
    /// Stage-5 features collapse to a single pixel.
    Degenerate { layer: String, h: usize, w: usize },
    /// Inputs of a concatenation have different resolutions.
    ResolutionMismatch { junction: String, left: (usize, usize), right: (usize, usize) },
    /// Inputs of a concatenation have different map counts.
    MapCountMismatch { junction: String, left: usize, right: usize },
    /// A layer's declared input maps or channels disagree with its producer.
    WiringMismatch { layer: String, detail: String },
}

impl ScheduleFlag {
    /// Degenerate resolution is reported but still buildable.
    pub fn is_fatal(&self) -> bool {
        !matches!(self, ScheduleFlag::Degenerate { .. })
    }

    pub fn describe(&self) -> String {
        match self {
            ScheduleFlag::OddAtPool { layer, h, w } => format!("{layer}: pooling needs even dims, got {h}×{w}"),
            ScheduleFlag::Degenerate { layer, h, w } => format!("{layer}: degenerate {h}×{w} resolution"),
            ScheduleFlag::ResolutionMismatch { junction, left, right } => {
                format!("{junction}: resolutions {}×{} and {}×{} differ", left.0, left.1, right.0, right.1)
            }
            ScheduleFlag::MapCountMismatch { junction, left, right } => {
                format!("{junction}: map counts {left} and {right} differ")
            }
            ScheduleFlag::WiringMismatch { layer, detail } => format!("{layer}: {detail}"),
        }
    }
}

/// Output resolution of every layer plus compatibility flags.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SpatialSchedule {
    pub encoder: Vec<(usize, usize)>,
    /// Pool output then upsample output.
    pub fusion_i: Option<[(usize, usize); 2]>,
    pub fusion_l: Option<[(usize, usize); 2]>,
    pub decoder: Vec<(usize, usize)>,
    pub flags: Vec<ScheduleFlag>,
}

impl SpatialSchedule {
    pub fn first_fatal(&self) -> Option<&ScheduleFlag> {
        self.flags.iter().find(|f| f.is_fatal())
    }
}

fn step(name: &str, layer: &LmfConfig, hw: (usize, usize), flags: &mut Vec<ScheduleFlag>) -> (usize, usize) {
    match layer.resample {
        Resample::None => hw,
        Resample::Pool => {
            if hw.0 == 0 || hw.1 == 0 || hw.0 % 2 != 0 || hw.1 % 2 != 0 {
                flags.push(ScheduleFlag::OddAtPool { layer: name.into(), h: hw.0, w: hw.1 });
            }
            (hw.0 / 2, hw.1 / 2)
        }
        Resample::Upsample => (hw.0 * 2, hw.1 * 2),
    }
}

fn wire(name: &str, layer: &LmfConfig, maps: usize, channels: usize, flags: &mut Vec<ScheduleFlag>) {
    if layer.inputs != maps || layer.in_channels != channels {
        flags.push(ScheduleFlag::WiringMismatch {
            layer: name.into(),
            detail: format!(
                "expects {} maps of {} channels, producer gives {maps} maps of {channels}",
                layer.inputs, layer.in_channels
            ),
        });
    }
}

/// Joins two map lists mapwise; returns the channel count of the result.
fn junction(
    name: &str,
    skip: (&LmfConfig, (usize, usize)),
    main: (&LmfConfig, (usize, usize)),
    flags: &mut Vec<ScheduleFlag>,
) -> usize {
    if skip.1 != main.1 {
        flags.push(ScheduleFlag::ResolutionMismatch { junction: name.into(), left: skip.1, right: main.1 });
    }
    if skip.0.branches() != main.0.branches() {
        flags.push(ScheduleFlag::MapCountMismatch {
            junction: name.into(),
            left: skip.0.branches(),
            right: main.0.branches(),
        });
    }
    skip.0.out_channels + main.0.out_channels
}

/// Resolution at every stage; never fails, problems become flags.
pub fn spatial_schedule(config: &NetworkConfig) -> SpatialSchedule {
    let mut flags = Vec::new();
    let mut hw = (config.input.height, config.input.width);
    let mut encoder = Vec::new();
    let (mut maps, mut channels) = (1, config.input.channels);
    for (i, l) in config.encoder.iter().enumerate() {
        let name = format!("encoder{}", i + 1);
        wire(&name, l, maps, channels, &mut flags);
        hw = step(&name, l, hw, &mut flags);
        encoder.push(hw);
        maps = l.branches();
        channels = l.out_channels;
    }
    if let Some(&last) = encoder.last() {
        if encoder.len() == 5 && last.0 <= 1 && last.1 <= 1 {
            flags.push(ScheduleFlag::Degenerate { layer: "encoder5".into(), h: last.0, w: last.1 });
        }
    }

    let fusion = |name: &str, src: usize, flags: &mut Vec<ScheduleFlag>, pair: &super::config::FusionPair| {
        let (src_layer, src_hw) = match (config.encoder.get(src), encoder.get(src)) {
            (Some(l), Some(&hw)) => (l, hw),
            _ => {
                flags.push(ScheduleFlag::WiringMismatch {
                    layer: name.into(),
                    detail: format!("source encoder stage {} is missing", src + 1),
                });
                return [(0, 0), (0, 0)];
            }
        };
        wire(&format!("{name}.pool"), &pair.pool, src_layer.branches(), src_layer.out_channels, flags);
        let a = step(&format!("{name}.pool"), &pair.pool, src_hw, flags);
        wire(&format!("{name}.upsample"), &pair.upsample, pair.pool.branches(), pair.pool.out_channels, flags);
        let b = step(&format!("{name}.upsample"), &pair.upsample, a, flags);
        [a, b]
    };
    let fusion_i = config.fusion_i.as_ref().map(|p| fusion("fusion_i", 2, &mut flags, p));
    let fusion_l = config.fusion_l.as_ref().map(|p| fusion("fusion_l", 1, &mut flags, p));

    let mut decoder = Vec::new();
    if !config.decoder.is_empty() {
        let mut prev: Option<&LmfConfig> = config.encoder.last();
        for (i, l) in config.decoder.iter().enumerate() {
            let name = format!("decoder{}", i + 6);
            let skip = match i {
                2 => config.fusion_i.as_ref().zip(fusion_i).map(|(p, r)| (&p.upsample, r[1], "F_8")),
                3 => config.fusion_l.as_ref().zip(fusion_l).map(|(p, r)| (&p.upsample, r[1], "F_9")),
                _ => None,
            };
            let (pm, pc) = prev.map(|p| (p.branches(), p.out_channels)).unwrap_or((0, 0));
            match (skip, prev) {
                (Some((s, shw, junc)), Some(p)) => {
                    let c = junction(junc, (s, shw), (p, hw), &mut flags);
                    wire(&name, l, pm, c, &mut flags);
                }
                _ => wire(&name, l, pm, pc, &mut flags),
            }
            hw = step(&name, l, hw, &mut flags);
            decoder.push(hw);
            prev = Some(l);
        }
    }
    SpatialSchedule { encoder, fusion_i, fusion_l, decoder, flags }
}

/// Non-fatal findings from [`validate_network`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfigWarning {
    pub layer: String,
    pub message: String,
}

/// Structural checks plus the spatial schedule. Errors name the first
/// incompatible layer or junction.
pub fn validate_network(config: &NetworkConfig) -> Result<(SpatialSchedule, Vec<ConfigWarning>)> {
    if config.encoder.len() != 5 {
        return Err(Error::Config(format!("encoder needs 5 stages, got {}", config.encoder.len())));
    }
    for (name, l) in config.named_layers() {
        l.validate().map_err(|e| Error::Config(format!("{name}: {e}")))?;
    }
    if config.encoder[0].resample != Resample::None || config.encoder[0].inputs != 1 {
        return Err(Error::Config("encoder1 must take the image as its only map and not resample".into()));
    }
    if let Some(i) = config.encoder[1..].iter().position(|l| l.resample != Resample::Pool) {
        return Err(Error::Config(format!("encoder{} must pool", i + 2)));
    }
    let schedule = spatial_schedule(config);
    if let Some(flag) = schedule.first_fatal() {
        return Err(Error::Config(flag.describe()));
    }
    match config.head {
        Head::Saliency => {
            if config.decoder.len() != 4 {
                return Err(Error::Config(format!("decoder needs 4 stages, got {}", config.decoder.len())));
            }
            if let Some(i) = config.decoder.iter().position(|l| l.resample != Resample::Upsample) {
                return Err(Error::Config(format!("decoder{} must upsample", i + 6)));
            }
            let check_pair = |name: &str, p: &Option<super::config::FusionPair>| match p {
                Some(p) if p.pool.resample == Resample::Pool && p.upsample.resample == Resample::Upsample => Ok(()),
                Some(_) => Err(Error::Config(format!("{name} must pool then upsample"))),
                None => Err(Error::Config(format!("saliency network needs {name}"))),
            };
            check_pair("fusion_i", &config.fusion_i)?;
            check_pair("fusion_l", &config.fusion_l)?;
        }
        Head::Classifier { num_classes, hidden_width } => {
            if num_classes < 2 {
                return Err(Error::Config(format!("classifier needs at least 2 classes, got {num_classes}")));
            }
            if hidden_width == 0 {
                return Err(Error::Config("classifier hidden width must be positive".into()));
            }
            if !config.decoder.is_empty() || config.fusion_i.is_some() || config.fusion_l.is_some() {
                return Err(Error::Config("classifier has no decoder or fusion layers".into()));
            }
        }
    }
    let mut warnings: Vec<ConfigWarning> = schedule
        .flags
        .iter()
        .map(|f| ConfigWarning { layer: "encoder5".into(), message: f.describe() })
        .collect();
    if !config.allow_missing_unit_dilation {
        for (name, l) in config.named_layers().into_iter().skip(1) {
            if !l.has_unit_dilation() {
                warnings.push(ConfigWarning {
                    layer: name,
                    message: format!("dilations {:?} contain no rate 1", l.dilations),
                });
            }
        }
    }
    Ok((schedule, warnings))
}
