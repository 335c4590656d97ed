//! Hybrid saliency objective: binary cross-entropy, soft IoU and SSIM, each
//! returning its value and the gradient with respect to the prediction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Predictions are clamped to `[BCE_CLAMP, 1 − BCE_CLAMP]` inside the log.
pub const BCE_CLAMP: f64 = 1e-7;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 1e-4;
pub const SSIM_C2: f64 = 9e-4;

/// Which terms of the hybrid loss are active; each has unit weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossComponents {
    pub bce: bool,
    pub ssim: bool,
    pub iou: bool,
}

impl LossComponents {
    pub const HYBRID: Self = LossComponents { bce: true, ssim: true, iou: true };
    pub const BCE: Self = LossComponents { bce: true, ssim: false, iou: false };
    pub const BCE_SSIM: Self = LossComponents { bce: true, ssim: true, iou: false };
    pub const BCE_IOU: Self = LossComponents { bce: true, ssim: false, iou: true };

    /// Parses names such as `["bce", "iou"]`.
    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        let mut c = LossComponents { bce: false, ssim: false, iou: false };
        for n in names {
            match n.as_ref() {
                "bce" => c.bce = true,
                "ssim" => c.ssim = true,
                "iou" => c.iou = true,
                other => return Err(Error::Config(format!("unknown loss component `{other}`"))),
            }
        }
        if !(c.bce || c.ssim || c.iou) {
            return Err(Error::Config("at least one loss component is required".into()));
        }
        Ok(c)
    }

    pub fn names(&self) -> Vec<&'static str> {
        [(self.bce, "bce"), (self.ssim, "ssim"), (self.iou, "iou")]
            .into_iter()
            .filter_map(|(on, n)| on.then_some(n))
            .collect()
    }
}

impl Default for LossComponents {
    fn default() -> Self {
        Self::HYBRID
    }
}

/// Loss value with its components; inactive components are 0.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossValue {
    pub total: f64,
    pub bce: f64,
    pub ssim: f64,
    pub iou: f64,
}

fn check_pair<T: Scalar>(op: &'static str, s: &Tensor<T>, g: &Tensor<T>) -> Result<()> {
    if s.shape() != g.shape() {
        return Err(Error::shape_pair(op, s.shape(), g.shape()));
    }
    if s.is_empty() {
        return Err(Error::shape(op, "empty prediction".to_string()));
    }
    Ok(())
}

/// Mean binary cross-entropy over all elements.
pub fn bce_loss<T: Scalar>(s: &Tensor<T>, g: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    check_pair("bce_loss", s, g)?;
    let n = s.len() as f64;
    let (lo, hi) = (T::lit(BCE_CLAMP), T::lit(1.0 - BCE_CLAMP));
    let mut total = 0.0;
    let mut grad = Tensor::zeros(s.shape());
    let inv_n = T::lit(1.0 / n);
    for ((gr, &sv), &gv) in grad.data_mut().iter_mut().zip(s.data()).zip(g.data()) {
        let p = sv.max(lo).min(hi);
        total -= (gv * p.ln() + (T::one() - gv) * (T::one() - p).ln()).to_f64_lossy();
        if sv > lo && sv < hi {
            *gr = (p - gv) / (p * (T::one() - p)) * inv_n;
        }
    }
    Ok((total / n, grad))
}

/// `1 − Σ S·G / Σ (S + G − S·G)` per image, averaged over the batch. An
/// image whose union is zero contributes loss 0 and gradient 0.
pub fn iou_loss<T: Scalar>(s: &Tensor<T>, g: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    check_pair("iou_loss", s, g)?;
    let batch = s.shape().n;
    let mut grad = Tensor::zeros(s.shape());
    let mut total = 0.0;
    let inv_b = T::lit(1.0 / batch as f64);
    for b in 0..batch {
        let (sv, gv) = (s.item(b), g.item(b));
        let mut inter = T::zero();
        let mut union = T::zero();
        for (&x, &y) in sv.iter().zip(gv) {
            inter += x * y;
            union += x + y - x * y;
        }
        if union == T::zero() {
            continue;
        }
        total += (T::one() - inter / union).to_f64_lossy();
        let per = sv.len();
        let gb = &mut grad.data_mut()[b * per..(b + 1) * per];
        let u2 = union * union;
        for ((gr, &_x), &y) in gb.iter_mut().zip(sv).zip(gv) {
            *gr = -(y * union - inter * (T::one() - y)) / u2 * inv_b;
        }
    }
    Ok((total / batch as f64, grad))
}

fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut w = [0.0; SSIM_WINDOW];
    for (i, v) in w.iter_mut().enumerate() {
        let t = i as f64 - r;
        *v = (-t * t / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let sum: f64 = w.iter().sum();
    w.map(|v| v / sum)
}

/// Truncated, renormalised 1-D Gaussian filter along one axis of a plane.
struct AxisFilter<T> {
    taps: Vec<T>,
    /// `1 / Σ valid taps` per output position.
    inv_norm: Vec<T>,
    len: usize,
}

impl<T: Scalar> AxisFilter<T> {
    fn new(len: usize) -> Self {
        let w = gaussian_taps();
        let r = (SSIM_WINDOW / 2) as isize;
        let inv_norm = (0..len as isize)
            .map(|p| {
                let z: f64 = (-r..=r)
                    .filter(|t| (0..len as isize).contains(&(p + t)))
                    .map(|t| w[(t + r) as usize])
                    .sum();
                T::lit(1.0 / z)
            })
            .collect();
        AxisFilter { taps: w.iter().map(|&v| T::lit(v)).collect(), inv_norm, len }
    }

    /// `out[p] = Σ_t w[t]·x[p+t] / z[p]`, or its transpose.
    fn apply(&self, x: &[T], stride: usize, out: &mut [T], transpose: bool) {
        let r = (SSIM_WINDOW / 2) as isize;
        for p in 0..self.len as isize {
            let lo = (-r).max(-p);
            let hi = r.min(self.len as isize - 1 - p);
            if transpose {
                let u = x[p as usize * stride] * self.inv_norm[p as usize];
                for t in lo..=hi {
                    out[(p + t) as usize * stride] += self.taps[(t + r) as usize] * u;
                }
            } else {
                let mut acc = T::zero();
                for t in lo..=hi {
                    acc += self.taps[(t + r) as usize] * x[(p + t) as usize * stride];
                }
                out[p as usize * stride] = acc * self.inv_norm[p as usize];
            }
        }
    }
}

struct Blur<T> {
    rows: AxisFilter<T>,
    cols: AxisFilter<T>,
    h: usize,
    w: usize,
}

impl<T: Scalar> Blur<T> {
    fn new(h: usize, w: usize) -> Self {
        Blur { rows: AxisFilter::new(h), cols: AxisFilter::new(w), h, w }
    }

    fn run(&self, x: &[T], transpose: bool) -> Vec<T> {
        let mut tmp = vec![T::zero(); self.h * self.w];
        for y in 0..self.h {
            let row = y * self.w;
            self.cols.apply(&x[row..row + self.w], 1, &mut tmp[row..row + self.w], transpose);
        }
        let mut out = vec![T::zero(); self.h * self.w];
        for c in 0..self.w {
            self.rows.apply(&tmp[c..], self.w, &mut out[c..], transpose);
        }
        out
    }

    fn forward(&self, x: &[T]) -> Vec<T> {
        self.run(x, false)
    }

    fn transpose(&self, x: &[T]) -> Vec<T> {
        self.run(x, true)
    }
}

/// Per-pixel SSIM of every plane of `s` against `g` (same-size map with
/// truncated Gaussian windows at the borders).
pub fn ssim_map<T: Scalar>(s: &Tensor<T>, g: &Tensor<T>) -> Result<Tensor<T>> {
    check_pair("ssim_map", s, g)?;
    let sh = s.shape();
    let blur = Blur::new(sh.h, sh.w);
    let plane = sh.plane();
    let mut out = Tensor::zeros(sh);
    for p in 0..sh.n * sh.c {
        let range = p * plane..(p + 1) * plane;
        let st = SsimTerms::new(&blur, &s.data()[range.clone()], &g.data()[range.clone()]);
        out.data_mut()[range].copy_from_slice(&st.s);
    }
    Ok(out)
}

struct SsimTerms<T> {
    mx: Vec<T>,
    my: Vec<T>,
    a1: Vec<T>,
    a2: Vec<T>,
    b1: Vec<T>,
    b2: Vec<T>,
    s: Vec<T>,
}

impl<T: Scalar> SsimTerms<T> {
    fn new(blur: &Blur<T>, x: &[T], y: &[T]) -> Self {
        let mx = blur.forward(x);
        let my = blur.forward(y);
        let sq = |a: &[T], b: &[T]| a.iter().zip(b).map(|(&u, &v)| u * v).collect::<Vec<T>>();
        let exx = blur.forward(&sq(x, x));
        let eyy = blur.forward(&sq(y, y));
        let exy = blur.forward(&sq(x, y));
        let (c1, c2, two) = (T::lit(SSIM_C1), T::lit(SSIM_C2), T::lit(2.0));
        let n = x.len();
        let (mut a1, mut a2, mut b1, mut b2, mut s) =
            (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
        for i in 0..n {
            let vx = exx[i] - mx[i] * mx[i];
            let vy = eyy[i] - my[i] * my[i];
            let cxy = exy[i] - mx[i] * my[i];
            let p1 = two * mx[i] * my[i] + c1;
            let p2 = two * cxy + c2;
            let q1 = mx[i] * mx[i] + my[i] * my[i] + c1;
            let q2 = vx + vy + c2;
            a1.push(p1);
            a2.push(p2);
            b1.push(q1);
            b2.push(q2);
            s.push(p1 * p2 / (q1 * q2));
        }
        SsimTerms { mx, my, a1, a2, b1, b2, s }
    }
}

/// `1 − mean SSIM` over all pixels of all planes.
pub fn ssim_loss<T: Scalar>(s: &Tensor<T>, g: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    check_pair("ssim_loss", s, g)?;
    let sh = s.shape();
    let blur = Blur::new(sh.h, sh.w);
    let plane = sh.plane();
    let scale = T::lit(-1.0 / s.len() as f64);
    let two = T::lit(2.0);
    let mut grad = Tensor::zeros(sh);
    let mut sum = 0.0;
    for p in 0..sh.n * sh.c {
        let range = p * plane..(p + 1) * plane;
        let x = &s.data()[range.clone()];
        let y = &g.data()[range.clone()];
        let t = SsimTerms::new(&blur, x, y);
        sum += t.s.iter().map(|v| v.to_f64_lossy()).sum::<f64>();
        let mut d_mu = Vec::with_capacity(plane);
        let mut d_exx = Vec::with_capacity(plane);
        let mut d_exy = Vec::with_capacity(plane);
        for i in 0..plane {
            let den = t.b1[i] * t.b2[i];
            d_mu.push(
                two * t.my[i] * (t.a2[i] - t.a1[i]) / den - two * t.mx[i] * t.s[i] / t.b1[i]
                    + two * t.mx[i] * t.s[i] / t.b2[i],
            );
            d_exx.push(-t.s[i] / t.b2[i]);
            d_exy.push(two * t.a1[i] / den);
        }
        let g_mu = blur.transpose(&d_mu);
        let g_exx = blur.transpose(&d_exx);
        let g_exy = blur.transpose(&d_exy);
        let out = &mut grad.data_mut()[range];
        for i in 0..plane {
            out[i] = scale * (g_mu[i] + two * x[i] * g_exx[i] + y[i] * g_exy[i]);
        }
    }
    Ok((1.0 - sum / s.len() as f64, grad))
}

/// Unit-weight sum of the selected components.
pub fn hybrid_loss<T: Scalar>(s: &Tensor<T>, g: &Tensor<T>, parts: LossComponents) -> Result<(LossValue, Tensor<T>)> {
    check_pair("hybrid_loss", s, g)?;
    let mut grad = Tensor::zeros(s.shape());
    let mut v = LossValue::default();
    if parts.bce {
        let (l, gr) = bce_loss(s, g)?;
        v.bce = l;
        grad.add_assign(&gr)?;
    }
    if parts.ssim {
        let (l, gr) = ssim_loss(s, g)?;
        v.ssim = l;
        grad.add_assign(&gr)?;
    }
    if parts.iou {
        let (l, gr) = iou_loss(s, g)?;
        v.iou = l;
        grad.add_assign(&gr)?;
    }
    v.total = v.bce + v.ssim + v.iou;
    Ok((v, grad))
}

/// Mean softmax cross-entropy over the batch for logits `(n, classes, 1, 1)`.
pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(f64, Tensor<T>)> {
    let sh = logits.shape();
    if sh.n != labels.len() || sh.h != 1 || sh.w != 1 {
        return Err(Error::shape(
            "softmax_cross_entropy",
            format!("logits {sh} do not match {} labels", labels.len()),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= sh.c) {
        return Err(Error::InvalidArgument(format!("label {bad} out of range for {} classes", sh.c)));
    }
    let mut grad = Tensor::zeros(sh);
    let inv_n = T::lit(1.0 / sh.n as f64);
    let mut total = 0.0;
    for (b, &label) in labels.iter().enumerate() {
        let row = logits.item(b);
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let z: T = row.iter().map(|&v| (v - m).exp()).sum();
        let log_z = z.ln() + m;
        total += (log_z - row[label]).to_f64_lossy();
        let g = &mut grad.data_mut()[b * sh.c..(b + 1) * sh.c];
        for (j, gv) in g.iter_mut().enumerate() {
            let p = (row[j] - log_z).exp();
            *gv = (p - if j == label { T::one() } else { T::zero() }) * inv_n;
        }
    }
    Ok((total / sh.n as f64, grad))
}
