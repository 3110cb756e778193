//! Procedural RGB images with edges, texture and smooth regions, for tests
//! and desk-scale training without external datasets.

use rand::Rng;

use super::sample_rng;
use crate::tensor::Tensor;

fn smoothstep(edge: f64, v: f64) -> f64 {
    // One-pixel-wide antialiased step at `edge`.
    (v - edge + 0.5).clamp(0.0, 1.0)
}

/// Deterministic `(1, 3, h, w)` image in `[0, 1]` for `(seed, index)`.
pub fn synthetic_image(seed: u64, index: u64, h: usize, w: usize) -> Tensor<f32> {
    let mut rng = sample_rng(seed ^ 0x5EED_1A6E, index);
    let mut color = || [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()];
    let bg0 = color();
    let bg1 = color();
    let mut img = vec![[0.0f64; 3]; h * w];
    let angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let (ca, sa) = (angle.cos(), angle.sin());
    for y in 0..h {
        for x in 0..w {
            let t = ((x as f64 * ca + y as f64 * sa) / (h + w) as f64 + 0.5).clamp(0.0, 1.0);
            for c in 0..3 {
                img[y * w + x][c] = bg0[c] * (1.0 - t) + bg1[c] * t;
            }
        }
    }
    let shapes = rng.gen_range(6..12);
    for _ in 0..shapes {
        let col = [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()];
        let cy = rng.gen_range(0.0..h as f64);
        let cx = rng.gen_range(0.0..w as f64);
        let ry = rng.gen_range(2.0..(h as f64 / 3.0).max(3.0));
        let rx = rng.gen_range(2.0..(w as f64 / 3.0).max(3.0));
        let kind = rng.gen_range(0..3);
        let period = rng.gen_range(3.0..9.0);
        let (sc, ss) = {
            let a: f64 = rng.gen_range(0.0..std::f64::consts::PI);
            (a.cos(), a.sin())
        };
        for y in 0..h {
            for x in 0..w {
                let (dy, dx) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
                let cover = match kind {
                    // Rectangle.
                    0 => smoothstep(dy.abs(), ry) * smoothstep(dx.abs(), rx),
                    // Ellipse.
                    1 => {
                        let r = ((dy / ry).powi(2) + (dx / rx).powi(2)).sqrt();
                        smoothstep(r * ry.min(rx), ry.min(rx))
                    }
                    // Striped rectangle.
                    _ => {
                        let inside = smoothstep(dy.abs(), ry) * smoothstep(dx.abs(), rx);
                        let phase = (dx * sc + dy * ss) * std::f64::consts::TAU / period;
                        inside * (0.5 + 0.5 * phase.sin())
                    }
                };
                if cover > 0.0 {
                    let px = &mut img[y * w + x];
                    for c in 0..3 {
                        px[c] = px[c] * (1.0 - cover) + col[c] * cover;
                    }
                }
            }
        }
    }
    Tensor::from_fn([1, 3, h, w], |_, c, y, x| img[y * w + x][c] as f32)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_in_range() {
        let a = synthetic_image(1, 2, 24, 32);
        assert_eq!(a, synthetic_image(1, 2, 24, 32));
        assert_ne!(a, synthetic_image(1, 3, 24, 32));
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
