//! Optical-flow color coding: hue follows direction on the Middlebury color
//! wheel, saturation follows magnitude relative to the 99th percentile.

use crate::eval::FlowField;
use crate::image::Image;

const SEGMENTS: [(usize, [f64; 3], [f64; 3]); 6] = [
    (15, [1.0, 0.0, 0.0], [1.0, 1.0, 0.0]),
    (6, [1.0, 1.0, 0.0], [0.0, 1.0, 0.0]),
    (4, [0.0, 1.0, 0.0], [0.0, 1.0, 1.0]),
    (11, [0.0, 1.0, 1.0], [0.0, 0.0, 1.0]),
    (13, [0.0, 0.0, 1.0], [1.0, 0.0, 1.0]),
    (6, [1.0, 0.0, 1.0], [1.0, 0.0, 0.0]),
];

fn color_wheel() -> Vec<[f64; 3]> {
    let mut wheel = Vec::with_capacity(55);
    for (n, from, to) in SEGMENTS {
        for k in 0..n {
            let t = k as f64 / n as f64;
            wheel.push([0, 1, 2].map(|c| from[c] + t * (to[c] - from[c])));
        }
    }
    wheel
}

/// The 99th-percentile flow magnitude.
pub fn magnitude_p99(flow: &FlowField) -> f64 {
    let mut mags: Vec<f64> = flow.magnitudes().filter(|m| m.is_finite()).collect();
    if mags.is_empty() {
        return 0.0;
    }
    mags.sort_by(f64::total_cmp);
    mags[((mags.len() - 1) as f64 * 0.99).round() as usize]
}

/// RGB rendering of `flow`; zero motion is white.
pub fn visualize_flow(flow: &FlowField) -> Image {
    let wheel = color_wheel();
    let n = wheel.len() as f64;
    let norm = magnitude_p99(flow);
    let mut data = Vec::with_capacity(flow.data.len() * 3);
    for &[u, v] in &flow.data {
        let (u, v) = (u as f64, v as f64);
        let rad = if norm > 0.0 && u.is_finite() && v.is_finite() {
            (u.hypot(v) / norm).min(1.0)
        } else {
            0.0
        };
        let angle = (-v).atan2(-u) / std::f64::consts::PI;
        let pos = (angle + 1.0) / 2.0 * (n - 1.0);
        let k0 = pos.floor() as usize % wheel.len();
        let k1 = (k0 + 1) % wheel.len();
        let f = pos - pos.floor();
        for c in 0..3 {
            let col = (1.0 - f) * wheel[k0][c] + f * wheel[k1][c];
            data.push(1.0 - rad * (1.0 - col));
        }
    }
    Image::new(flow.width, flow.height, 3, data).expect("sizes match")
}
