use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BRIGHTNESS_RANGE: f64 = 0.2;
pub const CONTRAST_RANGE: (f64, f64) = (0.8, 1.25);
pub const CROP_RANGE: (f64, f64) = (0.8, 1.0);
/// Zero padding before the random 32×32 crop of classifier inputs.
pub const CLASSIFIER_PAD: usize = 4;

/// Bilinear resize with half-pixel centres and edge clamping. Same-size
/// resizes are exact copies.
pub fn resize_bilinear(x: &Tensor<f64>, h: usize, w: usize) -> Tensor<f64> {
    let s = x.shape();
    let (sy, sx) = (s.h as f64 / h as f64, s.w as f64 / w as f64);
    let coord = |o: usize, scale: f64, len: usize| {
        let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
        let i0 = src.floor() as usize;
        (i0, (i0 + 1).min(len - 1), src - i0 as f64)
    };
    Tensor::from_fn(s.with_hw(h, w), |n, c, y, xo| {
        let (y0, y1, fy) = coord(y, sy, s.h);
        let (x0, x1, fx) = coord(xo, sx, s.w);
        let top = x.at(n, c, y0, x0) * (1.0 - fx) + x.at(n, c, y0, x1) * fx;
        let bottom = x.at(n, c, y1, x0) * (1.0 - fx) + x.at(n, c, y1, x1) * fx;
        top * (1.0 - fy) + bottom * fy
    })
}

/// Nearest-neighbour resize; keeps binary masks binary.
pub fn resize_nearest(x: &Tensor<f64>, h: usize, w: usize) -> Tensor<f64> {
    let s = x.shape();
    let pick = |o: usize, out: usize, len: usize| (((o as f64 + 0.5) * len as f64 / out as f64) as usize).min(len - 1);
    Tensor::from_fn(s.with_hw(h, w), |n, c, y, xo| x.at(n, c, pick(y, h, s.h), pick(xo, w, s.w)))
}

fn crop(x: &Tensor<f64>, y0: usize, x0: usize, h: usize, w: usize) -> Tensor<f64> {
    Tensor::from_fn(x.shape().with_hw(h, w), |n, c, y, xx| x.at(n, c, y0 + y, x0 + xx))
}

fn flip_horizontal(x: &Tensor<f64>) -> Tensor<f64> {
    let w = x.shape().w;
    Tensor::from_fn(x.shape(), |n, c, y, xx| x.at(n, c, y, w - 1 - xx))
}

/// One draw of the saliency augmentation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    pub brightness: f64,
    pub contrast: f64,
    /// `(y0, x0, h, w)` of the crop window.
    pub crop: (usize, usize, usize, usize),
    pub flip: bool,
}

impl AugmentParams {
    /// The draw that leaves a sample of size `h×w` unchanged.
    pub fn identity(h: usize, w: usize) -> Self {
        AugmentParams { brightness: 0.0, contrast: 1.0, crop: (0, 0, h, w), flip: false }
    }

    pub fn draw<R: Rng + ?Sized>(h: usize, w: usize, rng: &mut R) -> Self {
        let brightness = rng.gen_range(-BRIGHTNESS_RANGE..=BRIGHTNESS_RANGE);
        let contrast = rng.gen_range(CONTRAST_RANGE.0..=CONTRAST_RANGE.1);
        let mut side = |len: usize| {
            let size = ((len as f64 * rng.gen_range(CROP_RANGE.0..=CROP_RANGE.1)).round() as usize).clamp(1, len);
            (rng.gen_range(0..=len - size), size)
        };
        let (y0, ch) = side(h);
        let (x0, cw) = side(w);
        AugmentParams { brightness, contrast, crop: (y0, x0, ch, cw), flip: rng.gen_bool(0.5) }
    }
}

/// Applies `p` to an `(n, c, h, w)` image and its `(n, 1, h, w)` mask.
/// Photometric changes touch the image only: `x' = c·x + (1 − c)·mean + b`,
/// clamped to `[0, 1]`.
pub fn apply_augment(image: &Tensor<f64>, mask: &Tensor<f64>, p: &AugmentParams) -> Result<(Tensor<f64>, Tensor<f64>)> {
    let (si, sm) = (image.shape(), mask.shape());
    if (si.n, si.h, si.w) != (sm.n, sm.h, sm.w) || sm.c != 1 {
        return Err(Error::shape_pair("augment", si, sm));
    }
    let (y0, x0, ch, cw) = p.crop;
    if ch == 0 || cw == 0 || y0 + ch > si.h || x0 + cw > si.w {
        return Err(Error::InvalidArgument(format!("crop {:?} outside {}x{}", p.crop, si.h, si.w)));
    }
    let offset = (1.0 - p.contrast) * image.mean() + p.brightness;
    let mut img = image.map(|v| (p.contrast * v + offset).clamp(0.0, 1.0));
    let mut msk = mask.clone();
    if (ch, cw) != (si.h, si.w) {
        img = resize_bilinear(&crop(&img, y0, x0, ch, cw), si.h, si.w);
        msk = resize_nearest(&crop(&msk, y0, x0, ch, cw), si.h, si.w);
    }
    if p.flip {
        img = flip_horizontal(&img);
        msk = flip_horizontal(&msk);
    }
    Ok((img, msk))
}

pub fn augment_sod<R: Rng + ?Sized>(image: &Tensor<f64>, mask: &Tensor<f64>, rng: &mut R) -> Result<(Tensor<f64>, Tensor<f64>)> {
    let s = image.shape();
    apply_augment(image, mask, &AugmentParams::draw(s.h, s.w, rng))
}

/// Zero-pad by [`CLASSIFIER_PAD`], random crop back to size, random
/// horizontal flip.
pub fn augment_classifier<R: Rng + ?Sized>(image: &Tensor<f64>, rng: &mut R) -> Tensor<f64> {
    let s = image.shape();
    let pad = CLASSIFIER_PAD;
    let (dy, dx) = (rng.gen_range(0..=2 * pad), rng.gen_range(0..=2 * pad));
    let flip = rng.gen_bool(0.5);
    Tensor::from_fn(s, |n, c, y, x| {
        let xs = if flip { s.w - 1 - x } else { x };
        let (py, px) = ((y + dy) as isize - pad as isize, (xs + dx) as isize - pad as isize);
        if py < 0 || px < 0 || py >= s.h as isize || px >= s.w as isize {
            0.0
        } else {
            image.at(n, c, py as usize, px as usize)
        }
    })
}

/// Resizes an `(n, c, h, w)` image to the network resolution when needed.
pub fn fit_resolution(image: &Tensor<f64>, h: usize, w: usize) -> Tensor<f64> {
    let s = image.shape();
    if (s.h, s.w) == (h, w) {
        image.clone()
    } else {
        resize_bilinear(image, h, w)
    }
}

pub(crate) fn fit_mask(mask: &Tensor<f64>, h: usize, w: usize) -> Tensor<f64> {
    let s = mask.shape();
    if (s.h, s.w) == (h, w) {
        mask.clone()
    } else {
        resize_nearest(mask, h, w)
    }
}
