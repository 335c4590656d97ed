//! Procedural fixtures for overfit and determinism checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::io::{CifarRecord, SodSample};
use crate::tensor::{Shape, Tensor};

fn quantize(v: f64) -> f64 {
    crate::io::quantize_u8(v) as f64 / 255.0
}

/// Bright ellipses, rectangles and triangles on dark noise, with their
/// binary masks. Values are on the 8-bit grid.
pub fn synthetic_sod(count: usize, h: usize, w: usize, seed: u64) -> Vec<SodSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let kind = i % 3;
            let (hf, wf) = (h as f64, w as f64);
            let (cy, cx) = (rng.gen_range(0.35..0.65) * hf, rng.gen_range(0.35..0.65) * wf);
            let (ry, rx) = (rng.gen_range(0.15..0.3) * hf, rng.gen_range(0.15..0.3) * wf);
            let inside = |y: f64, x: f64| {
                let (dy, dx) = ((y - cy) / ry, (x - cx) / rx);
                match kind {
                    0 => dy * dy + dx * dx <= 1.0,
                    1 => dy.abs() <= 1.0 && dx.abs() <= 1.0,
                    _ => dy <= 1.0 && dy >= -1.0 && dx.abs() <= (dy + 1.0) / 2.0,
                }
            };
            let mask = Tensor::from_fn(Shape::new(1, 1, h, w), |_, _, y, x| {
                if inside(y as f64 + 0.5, x as f64 + 0.5) {
                    1.0
                } else {
                    0.0
                }
            });
            let fg: [f64; 3] = [rng.gen_range(0.7..1.0), rng.gen_range(0.6..1.0), rng.gen_range(0.5..0.9)];
            let mut image = Tensor::zeros(Shape::new(1, 3, h, w));
            for y in 0..h {
                for x in 0..w {
                    let on = mask.at(0, 0, y, x) == 1.0;
                    for (c, &f) in fg.iter().enumerate() {
                        let v = if on { f + rng.gen_range(-0.05..0.05) } else { rng.gen_range(0.0..0.4) };
                        image.set(0, c, y, x, quantize(v));
                    }
                }
            }
            SodSample { stem: format!("synthetic_{i:03}"), image, mask }
        })
        .collect()
}

/// Class-structured 32×32 colour images: each class has its own mean colour
/// and stripe orientation and frequency, plus per-pixel noise. Labels cycle
/// through the classes.
pub fn synthetic_cifar(count: usize, num_classes: usize, seed: u64) -> Vec<CifarRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let k = i % num_classes;
            let phase = k as f64 / num_classes as f64;
            let tau = std::f64::consts::TAU;
            let colour = [
                0.5 + 0.3 * (tau * phase).cos(),
                0.5 + 0.3 * (tau * (phase + 1.0 / 3.0)).cos(),
                0.5 + 0.3 * (tau * (phase + 2.0 / 3.0)).cos(),
            ];
            let angle = std::f64::consts::PI * ((k * 7) % num_classes) as f64 / num_classes as f64;
            let freq = 0.3 + 0.4 * ((k * 3) % num_classes) as f64 / num_classes as f64;
            let shift = rng.gen_range(0.0..tau);
            let image = Tensor::from_fn(Shape::new(1, 3, 32, 32), |_, c, y, x| {
                let t = (x as f64 * angle.cos() + y as f64 * angle.sin()) * freq + shift;
                quantize(colour[c] + 0.15 * t.sin() + rng.gen_range(-0.05..0.05))
            });
            CifarRecord { label: k as u8, coarse_label: None, image }
        })
        .collect()
}
