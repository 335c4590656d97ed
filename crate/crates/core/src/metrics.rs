//! Saliency evaluation: MAE, precision/recall and F-measure curves over 256
//! thresholds, enhanced-alignment (E) measure and structure (S) measure.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const NUM_THRESHOLDS: usize = 256;
pub const BETA2: f64 = 0.3;
pub const S_ALPHA: f64 = 0.5;
const EPS: f64 = f64::EPSILON;

/// Threshold `t` binarizes a map as `S ≥ (t + 0.5) / 256`.
pub fn threshold_value(t: usize) -> f64 {
    (t as f64 + 0.5) / NUM_THRESHOLDS as f64
}

/// Number of thresholds a value passes.
fn passes(s: f64) -> usize {
    ((NUM_THRESHOLDS as f64 * s - 0.5).floor().clamp(-1.0, NUM_THRESHOLDS as f64 - 1.0) as isize + 1) as usize
}

fn check(pred: &Tensor<f64>, gt: &Tensor<f64>) -> Result<()> {
    if pred.shape() != gt.shape() {
        return Err(Error::shape_pair("metrics", pred.shape(), gt.shape()));
    }
    if pred.is_empty() {
        return Err(Error::InvalidArgument("empty saliency map".into()));
    }
    if let Some(v) = gt.data().iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(Error::InvalidArgument(format!("ground truth is not binary (found {v})")));
    }
    if let Some(v) = pred.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::InvalidArgument(format!("prediction value {v} outside [0, 1]")));
    }
    Ok(())
}

pub fn mae(pred: &Tensor<f64>, gt: &Tensor<f64>) -> Result<f64> {
    check(pred, gt)?;
    Ok(pred.data().iter().zip(gt.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / pred.len() as f64)
}

/// Confusion counts at every threshold.
#[derive(Debug, Clone)]
struct Confusion {
    tp: Vec<usize>,
    fp: Vec<usize>,
    positives: usize,
    total: usize,
}

fn confusion(pred: &Tensor<f64>, gt: &Tensor<f64>) -> Confusion {
    let mut fg = vec![0usize; NUM_THRESHOLDS + 1];
    let mut bg = vec![0usize; NUM_THRESHOLDS + 1];
    for (&s, &g) in pred.data().iter().zip(gt.data()) {
        if g == 1.0 {
            fg[passes(s)] += 1;
        } else {
            bg[passes(s)] += 1;
        }
    }
    let mut tp = vec![0; NUM_THRESHOLDS];
    let mut fp = vec![0; NUM_THRESHOLDS];
    let (mut a, mut b) = (0, 0);
    for t in (0..NUM_THRESHOLDS).rev() {
        a += fg[t + 1];
        b += bg[t + 1];
        tp[t] = a;
        fp[t] = b;
    }
    Confusion { tp, fp, positives: fg.iter().sum(), total: pred.len() }
}

/// Precision and recall with the empty-prediction and empty-GT conventions.
pub fn precision_recall(tp: usize, predicted: usize, positives: usize) -> (f64, f64) {
    let precision = if predicted == 0 {
        if positives == 0 {
            1.0
        } else {
            0.0
        }
    } else {
        tp as f64 / predicted as f64
    };
    let recall = if positives == 0 { 1.0 } else { tp as f64 / positives as f64 };
    (precision, recall)
}

pub fn f_beta(precision: f64, recall: f64) -> f64 {
    let den = BETA2 * precision + recall;
    if den == 0.0 {
        0.0
    } else {
        (1.0 + BETA2) * precision * recall / den
    }
}

/// Enhanced-alignment score of a binary prediction summarized by its
/// confusion counts.
pub fn e_score(tp: usize, fp: usize, positives: usize, total: usize) -> f64 {
    let n = total as f64;
    let predicted = (tp + fp) as f64;
    if positives == total {
        return predicted / n;
    }
    if positives == 0 {
        return 1.0 - predicted / n;
    }
    let (ms, mg) = (predicted / n, positives as f64 / n);
    let fneg = positives - tp;
    let tn = total - tp - fp - fneg;
    let enhanced = |s: f64, g: f64| {
        let (a, b) = (s - ms, g - mg);
        let phi = 2.0 * a * b / (a * a + b * b + EPS);
        (1.0 + phi) * (1.0 + phi) / 4.0
    };
    (tp as f64 * enhanced(1.0, 1.0)
        + fp as f64 * enhanced(1.0, 0.0)
        + fneg as f64 * enhanced(0.0, 1.0)
        + tn as f64 * enhanced(0.0, 0.0))
        / n
}

/// Per-threshold curves of one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curves {
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub e: Vec<f64>,
}

pub fn image_curves(pred: &Tensor<f64>, gt: &Tensor<f64>) -> Result<Curves> {
    check(pred, gt)?;
    let c = confusion(pred, gt);
    let mut curves = Curves {
        precision: Vec::with_capacity(NUM_THRESHOLDS),
        recall: Vec::with_capacity(NUM_THRESHOLDS),
        e: Vec::with_capacity(NUM_THRESHOLDS),
    };
    for t in 0..NUM_THRESHOLDS {
        let (p, r) = precision_recall(c.tp[t], c.tp[t] + c.fp[t], c.positives);
        curves.precision.push(p);
        curves.recall.push(r);
        curves.e.push(e_score(c.tp[t], c.fp[t], c.positives, c.total));
    }
    Ok(curves)
}

/// Maximum over thresholds of the E-measure of one image.
pub fn e_measure(pred: &Tensor<f64>, gt: &Tensor<f64>) -> Result<f64> {
    Ok(image_curves(pred, gt)?.e.into_iter().fold(0.0, f64::max))
}

/// Precision, recall and F curves averaged over images; F is computed from
/// the averaged precision and recall.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurves {
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f: Vec<f64>,
    pub max_f: f64,
    pub max_f_threshold: usize,
}

fn mean_curve(curves: &[Vec<f64>]) -> Vec<f64> {
    let n = curves.len() as f64;
    (0..NUM_THRESHOLDS).map(|t| curves.iter().map(|c| c[t]).sum::<f64>() / n).collect()
}

fn argmax(v: &[f64]) -> (usize, f64) {
    v.iter().enumerate().fold((0, f64::NEG_INFINITY), |best, (i, &x)| if x > best.1 { (i, x) } else { best })
}

fn combine_pr(per_image: &[Curves]) -> PrCurves {
    let precision = mean_curve(&per_image.iter().map(|c| c.precision.clone()).collect::<Vec<_>>());
    let recall = mean_curve(&per_image.iter().map(|c| c.recall.clone()).collect::<Vec<_>>());
    let f: Vec<f64> = precision.iter().zip(&recall).map(|(&p, &r)| f_beta(p, r)).collect();
    let (max_f_threshold, max_f) = argmax(&f);
    PrCurves { precision, recall, f, max_f, max_f_threshold }
}

pub fn pr_and_f_curves(pairs: &[(Tensor<f64>, Tensor<f64>)]) -> Result<PrCurves> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("no prediction/ground-truth pairs".into()));
    }
    let per_image = pairs.iter().map(|(p, g)| image_curves(p, g)).collect::<Result<Vec<_>>>()?;
    Ok(combine_pr(&per_image))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation; 0 for fewer than two values.
fn std_ddof1(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

fn s_object(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let x = mean(values);
    2.0 * x / (x * x + 1.0 + std_ddof1(values) + EPS)
}

/// Object-aware similarity.
pub fn s_object_score(pred: &Tensor<f64>, gt: &Tensor<f64>) -> f64 {
    let mut fg = Vec::new();
    let mut bg = Vec::new();
    for (&s, &g) in pred.data().iter().zip(gt.data()) {
        if g == 1.0 {
            fg.push(s);
        } else {
            bg.push(1.0 - s);
        }
    }
    let u = fg.len() as f64 / pred.len() as f64;
    u * s_object(&fg) + (1.0 - u) * s_object(&bg)
}

/// Windowless SSIM of one region.
fn region_ssim(p: &[f64], g: &[f64]) -> f64 {
    let n = p.len();
    if n == 0 {
        return 0.0;
    }
    let (x, y) = (mean(p), mean(g));
    let d = if n > 1 { (n - 1) as f64 } else { 1.0 };
    let (mut sx, mut sy, mut sxy) = (0.0, 0.0, 0.0);
    for (a, b) in p.iter().zip(g) {
        sx += (a - x) * (a - x);
        sy += (b - y) * (b - y);
        sxy += (a - x) * (b - y);
    }
    let (sx, sy, sxy) = (sx / d, sy / d, sxy / d);
    let alpha = 4.0 * x * y * sxy;
    let beta = (x * x + y * y) * (sx + sy);
    if alpha != 0.0 {
        alpha / (beta + EPS)
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Split point `(x, y)`: the rounded GT centroid plus one, or the image
/// centre when the GT is empty.
pub fn split_point(gt: &Tensor<f64>) -> (usize, usize) {
    let sh = gt.shape();
    let (mut sx, mut sy, mut count) = (0.0, 0.0, 0usize);
    for y in 0..sh.h {
        for x in 0..sh.w {
            if gt.at(0, 0, y, x) == 1.0 {
                sx += x as f64;
                sy += y as f64;
                count += 1;
            }
        }
    }
    if count == 0 {
        return ((sh.w as f64 / 2.0).round_ties_even() as usize, (sh.h as f64 / 2.0).round_ties_even() as usize);
    }
    let cx = (sx / count as f64).round_ties_even() as usize + 1;
    let cy = (sy / count as f64).round_ties_even() as usize + 1;
    (cx.min(sh.w), cy.min(sh.h))
}

/// Region-aware similarity: SSIM of the four quadrants around the GT
/// centroid, weighted by quadrant area.
pub fn s_region_score(pred: &Tensor<f64>, gt: &Tensor<f64>) -> f64 {
    let sh = pred.shape();
    let (cx, cy) = split_point(gt);
    let area = (sh.h * sh.w) as f64;
    let quads = [(0, cy, 0, cx), (0, cy, cx, sh.w), (cy, sh.h, 0, cx), (cy, sh.h, cx, sh.w)];
    let mut score = 0.0;
    for (y0, y1, x0, x1) in quads {
        let (mut p, mut g) = (Vec::new(), Vec::new());
        for y in y0..y1 {
            for x in x0..x1 {
                p.push(pred.at(0, 0, y, x));
                g.push(gt.at(0, 0, y, x));
            }
        }
        let weight = ((y1 - y0) * (x1 - x0)) as f64 / area;
        if weight > 0.0 {
            score += weight * region_ssim(&p, &g);
        }
    }
    score
}

/// `S_m = α·S_o + (1 − α)·S_r`, clipped below at 0.
pub fn s_measure(pred: &Tensor<f64>, gt: &Tensor<f64>) -> Result<f64> {
    check(pred, gt)?;
    let sh = pred.shape();
    if sh.n != 1 || sh.c != 1 {
        return Err(Error::shape("s_measure", format!("expects a single map, got {sh}")));
    }
    let y = mean(gt.data());
    let s = if y == 0.0 {
        1.0 - mean(pred.data())
    } else if y == 1.0 {
        mean(pred.data())
    } else {
        (S_ALPHA * s_object_score(pred, gt) + (1.0 - S_ALPHA) * s_region_score(pred, gt)).max(0.0)
    };
    Ok(s)
}

/// Metrics of one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub name: String,
    pub mae: f64,
    pub s_measure: f64,
    pub curves: Curves,
}

pub fn image_metrics(name: &str, pred: &Tensor<f64>, gt: &Tensor<f64>) -> Result<ImageMetrics> {
    Ok(ImageMetrics {
        name: name.to_string(),
        mae: mae(pred, gt)?,
        s_measure: s_measure(pred, gt)?,
        curves: image_curves(pred, gt)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub images: usize,
    pub mae: f64,
    pub max_f: f64,
    pub max_f_threshold: usize,
    pub max_e: f64,
    pub s_measure: f64,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f_curve: Vec<f64>,
    pub e_curve: Vec<f64>,
}

impl MetricsReport {
    /// Averages per-image results in the given order.
    pub fn from_images(images: &[ImageMetrics]) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::InvalidArgument("no images to aggregate".into()));
        }
        let curves: Vec<Curves> = images.iter().map(|m| m.curves.clone()).collect();
        let pr = combine_pr(&curves);
        let e_curve = mean_curve(&curves.iter().map(|c| c.e.clone()).collect::<Vec<_>>());
        let (_, max_e) = argmax(&e_curve);
        Ok(MetricsReport {
            images: images.len(),
            mae: mean(&images.iter().map(|m| m.mae).collect::<Vec<_>>()),
            max_f: pr.max_f,
            max_f_threshold: pr.max_f_threshold,
            max_e,
            s_measure: mean(&images.iter().map(|m| m.s_measure).collect::<Vec<_>>()),
            precision: pr.precision,
            recall: pr.recall,
            f_curve: pr.f,
            e_curve,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// `threshold,precision,recall,f` rows, threshold as the 0–255 index.
    pub fn curves_csv(&self) -> String {
        let mut s = String::from("threshold,precision,recall,f\n");
        for t in 0..self.precision.len() {
            let _ = writeln!(s, "{t},{},{},{}", self.precision[t], self.recall[t], self.f_curve[t]);
        }
        s
    }

    pub fn to_text(&self) -> String {
        format!(
            "images {}\nMAE    {:.6}\nmaxF   {:.6} (threshold {})\nmaxE   {:.6}\nS_m    {:.6}\n",
            self.images, self.mae, self.max_f, self.max_f_threshold, self.max_e, self.s_measure
        )
    }
}

/// Evaluates same-named PGM/PPM predictions against binary GT masks.
/// Files are matched by stem in lexicographic order.
pub fn evaluate_dataset(pred_dir: &Path, gt_dir: &Path) -> Result<MetricsReport> {
    let preds = crate::io::list_images(pred_dir)?;
    let gts = crate::io::list_images(gt_dir)?;
    let gt_stems: std::collections::BTreeMap<_, _> = gts.iter().map(|(s, p)| (s.clone(), p.clone())).collect();
    let pred_stems: std::collections::BTreeSet<_> = preds.iter().map(|(s, _)| s.clone()).collect();
    let unmatched: Vec<String> = preds
        .iter()
        .map(|(s, _)| s.clone())
        .filter(|s| !gt_stems.contains_key(s))
        .chain(gt_stems.keys().filter(|s| !pred_stems.contains(*s)).cloned())
        .collect();
    if !unmatched.is_empty() {
        return Err(Error::Dataset(format!("unmatched files: {}", unmatched.join(", "))));
    }
    if preds.is_empty() {
        return Err(Error::Dataset(format!("no images in {}", pred_dir.display())));
    }
    // per-image work is independent; collect keeps file order for the reduction
    let images = preds
        .par_iter()
        .map(|(stem, path)| {
            let pred = crate::io::load_image(path)?.to_gray();
            let gt_path = &gt_stems[stem];
            let gt = crate::io::load_image(gt_path)?.to_gray();
            if let Some(v) = gt.data().iter().find(|&&v| v != 0.0 && v != 1.0) {
                return Err(Error::Dataset(format!("{}: ground truth is not binary (found {v})", gt_path.display())));
            }
            image_metrics(stem, &pred, &gt).map_err(|e| Error::Dataset(format!("{stem}: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    MetricsReport::from_images(&images)
}
