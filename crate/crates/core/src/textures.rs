//! Procedural test textures: multi-octave gradient noise overlaid with
//! random filled shapes, fully determined by a seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::image::Image;

/// Number of distinct bundled texture styles.
pub const BUNDLED: usize = 5;

struct GradientNoise {
    grads: Vec<[f64; 2]>,
    size: usize,
}

impl GradientNoise {
    fn new(rng: &mut ChaCha8Rng, size: usize) -> Self {
        let grads = (0..size * size)
            .map(|_| {
                let a: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                [a.cos(), a.sin()]
            })
            .collect();
        Self { grads, size }
    }

    fn eval(&self, x: f64, y: f64) -> f64 {
        let (x0, y0) = (x.floor(), y.floor());
        let (fx, fy) = (x - x0, y - y0);
        let fade = |t: f64| t * t * t * (t * (t * 6.0 - 15.0) + 10.0);
        let n = self.size as i64;
        let dot = |ix: i64, iy: i64, dx: f64, dy: f64| {
            let g = self.grads[(iy.rem_euclid(n) * n + ix.rem_euclid(n)) as usize];
            g[0] * dx + g[1] * dy
        };
        let (ix, iy) = (x0 as i64, y0 as i64);
        let n00 = dot(ix, iy, fx, fy);
        let n10 = dot(ix + 1, iy, fx - 1.0, fy);
        let n01 = dot(ix, iy + 1, fx, fy - 1.0);
        let n11 = dot(ix + 1, iy + 1, fx - 1.0, fy - 1.0);
        let (u, v) = (fade(fx), fade(fy));
        let a = n00 + u * (n10 - n00);
        let b = n01 + u * (n11 - n01);
        a + v * (b - a)
    }
}

enum Shape {
    Disc { c: [f64; 2], r: f64 },
    Box { c: [f64; 2], half: [f64; 2], angle: f64 },
}

impl Shape {
    fn coverage(&self, x: f64, y: f64) -> f64 {
        // signed distance turned into a one-pixel antialiased edge
        let d = match *self {
            Shape::Disc { c, r } => (x - c[0]).hypot(y - c[1]) - r,
            Shape::Box { c, half, angle } => {
                let (s, co) = angle.sin_cos();
                let (dx, dy) = (x - c[0], y - c[1]);
                let (lx, ly) = (co * dx + s * dy, -s * dx + co * dy);
                let qx = lx.abs() - half[0];
                let qy = ly.abs() - half[1];
                qx.max(0.0).hypot(qy.max(0.0)) + qx.max(qy).min(0.0)
            }
        };
        (0.5 - d).clamp(0.0, 1.0)
    }
}

/// A `width x height` RGB texture. `seed` selects both the style
/// (`seed % BUNDLED`) and the random content.
pub fn procedural_texture(width: usize, height: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7e47_0e5d);
    let style = (seed % BUNDLED as u64) as usize;
    // base cell size and shape density differ between styles
    let (cell, shapes, octaves) = [(24.0, 30, 4), (40.0, 12, 3), (16.0, 45, 4), (32.0, 60, 3), (20.0, 20, 5)][style];
    let noises: Vec<[GradientNoise; 3]> = (0..octaves)
        .map(|_| [0, 1, 2].map(|_| GradientNoise::new(&mut rng, 64)))
        .collect();
    let mut shape_list = Vec::with_capacity(shapes);
    for _ in 0..shapes {
        let c = [rng.gen_range(0.0..width as f64), rng.gen_range(0.0..height as f64)];
        let size = rng.gen_range(3.0..18.0);
        let shape = if rng.gen_bool(0.5) {
            Shape::Disc { c, r: size }
        } else {
            Shape::Box {
                c,
                half: [size, rng.gen_range(2.0..size + 2.0)],
                angle: rng.gen_range(0.0..std::f64::consts::PI),
            }
        };
        let color: [f64; 3] = [rng.gen(), rng.gen(), rng.gen()];
        let alpha = rng.gen_range(0.5..0.9);
        shape_list.push((shape, color, alpha));
    }
    Image::from_fn(width, height, 3, |x, y, ch| {
        let (fx, fy) = (x as f64, y as f64);
        let mut v = 0.0;
        let mut amp = 0.5;
        let mut freq = 1.0 / cell;
        for oct in &noises {
            v += amp * oct[ch].eval(fx * freq, fy * freq);
            amp *= 0.55;
            freq *= 2.0;
        }
        let mut value = 0.5 + 0.9 * v;
        for (shape, color, alpha) in &shape_list {
            let cov = shape.coverage(fx, fy) * alpha;
            value = value * (1.0 - cov) + color[ch] * cov;
        }
        value.clamp(0.0, 1.0)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_distinct() {
        let a = procedural_texture(64, 48, 3);
        assert_eq!(a, procedural_texture(64, 48, 3));
        assert_ne!(a, procedural_texture(64, 48, 4));
        assert_eq!(a.channels(), 3);
    }

    #[test]
    fn textures_have_contrast() {
        for s in 0..BUNDLED as u64 {
            let g = procedural_texture(128, 96, s).to_gray();
            let mean = g.data.iter().sum::<f64>() / g.data.len() as f64;
            let var = g.data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / g.data.len() as f64;
            assert!(var.sqrt() > 0.05, "style {s} std {}", var.sqrt());
        }
    }
}
