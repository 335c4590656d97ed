use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::pnm::load_image;

const IMAGE_EXTENSIONS: [&str; 2] = ["pgm", "ppm"];

/// `.pgm`/`.ppm` files in `dir` as `(stem, path)`, sorted by stem.
/// Duplicate stems across extensions are an error.
pub fn list_images(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out: BTreeMap<String, PathBuf> = BTreeMap::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if !path.is_file() || !ext.is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.as_str())) {
            continue;
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        if let Some(prev) = out.insert(stem.clone(), path.clone()) {
            return Err(Error::Dataset(format!("duplicate stem {stem}: {} and {}", prev.display(), path.display())));
        }
    }
    Ok(out.into_iter().collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SodPair {
    pub stem: String,
    pub image: PathBuf,
    pub mask: PathBuf,
}

/// Matches images to masks by stem. Unmatched files produce warnings;
/// zero matches is an error.
pub fn pair_sod_dataset(image_dir: &Path, mask_dir: &Path) -> Result<(Vec<SodPair>, Vec<String>)> {
    let images = list_images(image_dir)?;
    let masks: BTreeMap<String, PathBuf> = list_images(mask_dir)?.into_iter().collect();
    let mut pairs = Vec::new();
    let mut warnings = Vec::new();
    for (stem, image) in images {
        match masks.get(&stem) {
            Some(mask) => pairs.push(SodPair { stem, image, mask: mask.clone() }),
            None => warnings.push(format!("image {} has no mask", image.display())),
        }
    }
    for (stem, mask) in &masks {
        if !pairs.iter().any(|p| &p.stem == stem) {
            warnings.push(format!("mask {} has no image", mask.display()));
        }
    }
    if pairs.is_empty() {
        return Err(Error::Dataset(format!(
            "no image/mask pairs between {} and {}",
            image_dir.display(),
            mask_dir.display()
        )));
    }
    Ok((pairs, warnings))
}

/// Loads a mask as `(1, 1, h, w)` binarized at 0.5. The flag reports whether
/// any pixel was neither 0 nor 1 before binarization.
pub fn load_mask(path: &Path) -> Result<(Tensor<f64>, bool)> {
    let gray = load_image(path)?.to_gray();
    let soft = gray.data().iter().any(|&v| v != 0.0 && v != 1.0);
    Ok((gray.map(|v| if v >= 0.5 { 1.0 } else { 0.0 }), soft))
}

#[derive(Debug, Clone)]
pub struct SodSample {
    pub stem: String,
    /// `(1, 3, h, w)`; grayscale inputs are replicated across channels.
    pub image: Tensor<f64>,
    /// `(1, 1, h, w)` binary.
    pub mask: Tensor<f64>,
}

/// Loads all pairs; the returned warnings include soft masks.
pub fn load_sod_samples(pairs: &[SodPair]) -> Result<(Vec<SodSample>, Vec<String>)> {
    let mut warnings = Vec::new();
    let mut out = Vec::with_capacity(pairs.len());
    for p in pairs {
        let rec = load_image(&p.image)?;
        let image = if rec.channels() == 3 {
            rec.pixels
        } else {
            let s = rec.pixels.shape();
            Tensor::from_fn(s.with_c(3), |n, _, y, x| rec.pixels.at(n, 0, y, x))
        };
        let (mask, soft) = load_mask(&p.mask)?;
        if soft {
            warnings.push(format!("mask {} is not binary; thresholded at 0.5", p.mask.display()));
        }
        let (si, sm) = (image.shape(), mask.shape());
        if (si.h, si.w) != (sm.h, sm.w) {
            return Err(Error::Dataset(format!(
                "{}: image {}x{} vs mask {}x{}",
                p.stem, si.w, si.h, sm.w, sm.h
            )));
        }
        out.push(SodSample { stem: p.stem.clone(), image, mask });
    }
    Ok((out, warnings))
}
