use std::path::Path;

use crate::error::{Error, ParseError, Result};
use crate::tensor::{Shape, Tensor};

pub const CIFAR_PIXELS: usize = 3 * 32 * 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CifarKind {
    /// One label byte per record.
    Cifar10,
    /// Coarse and fine label bytes per record; the fine label is used.
    Cifar100,
}

impl CifarKind {
    pub fn from_classes(num_classes: usize) -> Result<Self> {
        match num_classes {
            10 => Ok(CifarKind::Cifar10),
            100 => Ok(CifarKind::Cifar100),
            n => Err(Error::InvalidArgument(format!("CIFAR has 10 or 100 classes, got {n}"))),
        }
    }

    pub fn num_classes(self) -> usize {
        match self {
            CifarKind::Cifar10 => 10,
            CifarKind::Cifar100 => 100,
        }
    }

    pub fn label_bytes(self) -> usize {
        match self {
            CifarKind::Cifar10 => 1,
            CifarKind::Cifar100 => 2,
        }
    }

    pub fn record_size(self) -> usize {
        self.label_bytes() + CIFAR_PIXELS
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CifarRecord {
    pub label: u8,
    /// CIFAR-100 coarse label; `None` for CIFAR-10.
    pub coarse_label: Option<u8>,
    /// `(1, 3, 32, 32)` in `[0, 1]`, channel-major.
    pub image: Tensor<f64>,
}

pub fn parse_cifar(bytes: &[u8], kind: CifarKind) -> std::result::Result<Vec<CifarRecord>, ParseError> {
    let record = kind.record_size();
    if bytes.is_empty() || bytes.len() % record != 0 {
        return Err(ParseError::RecordLength { len: bytes.len(), record });
    }
    let nc = kind.num_classes();
    bytes
        .chunks_exact(record)
        .enumerate()
        .map(|(i, r)| {
            let (coarse_label, label) = match kind {
                CifarKind::Cifar10 => (None, r[0]),
                CifarKind::Cifar100 => (Some(r[0]), r[1]),
            };
            if label as usize >= nc {
                return Err(ParseError::Label { record: i, label, num_classes: nc });
            }
            if let Some(c) = coarse_label.filter(|&c| c >= 20) {
                return Err(ParseError::Label { record: i, label: c, num_classes: 20 });
            }
            let data = r[kind.label_bytes()..].iter().map(|&b| b as f64 / 255.0).collect();
            let image = Tensor::from_vec(Shape::new(1, 3, 32, 32), data).expect("sized");
            Ok(CifarRecord { label, coarse_label, image })
        })
        .collect()
}

/// Inverse of [`parse_cifar`]; byte-exact for records it produced.
pub fn encode_cifar(records: &[CifarRecord], kind: CifarKind) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(records.len() * kind.record_size());
    for (i, r) in records.iter().enumerate() {
        if r.image.shape() != Shape::new(1, 3, 32, 32) {
            return Err(Error::shape("encode_cifar", format!("record {i} has shape {}", r.image.shape())));
        }
        if kind == CifarKind::Cifar100 {
            out.push(r.coarse_label.unwrap_or(0));
        }
        out.push(r.label);
        out.extend(r.image.data().iter().map(|&v| super::pnm::quantize_u8(v)));
    }
    Ok(out)
}

pub fn load_cifar(path: &Path, num_classes: usize) -> Result<Vec<CifarRecord>> {
    let kind = CifarKind::from_classes(num_classes)?;
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_cifar(&bytes, kind).map_err(|k| Error::parse(path, k))
}

/// Stacks records into a batch tensor and label vector.
pub fn cifar_batch(records: &[CifarRecord]) -> Result<(Tensor<f64>, Vec<usize>)> {
    let images: Vec<Tensor<f64>> = records.iter().map(|r| r.image.clone()).collect();
    Ok((Tensor::stack_batch(&images)?, records.iter().map(|r| r.label as usize).collect()))
}
