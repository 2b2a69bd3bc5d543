//! Flow fields and correspondence accuracy metrics.

use std::path::Path;

use crate::error::{format, invalid, Result};
use crate::image::AffineField;

/// Per-pixel displacement `(u, v)` in pixels, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[f32; 2]>,
}

impl FlowField {
    pub fn new(width: usize, height: usize, data: Vec<[f32; 2]>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(invalid(format!("{} flow vectors for a {width}x{height} grid", data.len())));
        }
        Ok(Self { width, height, data })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::constant(width, height, [0.0, 0.0])
    }

    pub fn constant(width: usize, height: usize, uv: [f32; 2]) -> Self {
        Self {
            width,
            height,
            data: vec![uv; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> [f32; 2] {
        self.data[y * self.width + x]
    }

    pub fn magnitudes(&self) -> impl Iterator<Item = f64> + '_ {
        self.data.iter().map(|&[u, v]| (u as f64).hypot(v as f64))
    }

    /// Bilinear flow at a real-valued position, clamped to the grid.
    pub fn sample(&self, x: f64, y: f64) -> [f64; 2] {
        let (x0, x1, fx) = crate::image::bilinear_taps(x, self.width);
        let (y0, y1, fy) = crate::image::bilinear_taps(y, self.height);
        let mut out = [0.0; 2];
        for (c, o) in out.iter_mut().enumerate() {
            let g = |xx: usize, yy: usize| self.data[yy * self.width + xx][c] as f64;
            *o = (1.0 - fy) * ((1.0 - fx) * g(x0, y0) + fx * g(x1, y0)) + fy * ((1.0 - fx) * g(x0, y1) + fx * g(x1, y1));
        }
        out
    }

    /// Nearest-neighbour resampling to `w x h`, with vectors scaled by the
    /// per-axis size ratio.
    pub fn resized(&self, w: usize, h: usize) -> FlowField {
        let sx = w as f64 / self.width as f64;
        let sy = h as f64 / self.height as f64;
        let mut data = Vec::with_capacity(w * h);
        for y in 0..h {
            let yy = nearest(y, sy, self.height);
            for x in 0..w {
                let [u, v] = self.get(nearest(x, sx, self.width), yy);
                data.push([(u as f64 * sx) as f32, (v as f64 * sy) as f32]);
            }
        }
        FlowField { width: w, height: h, data }
    }
}

fn nearest(i: usize, scale: f64, len: usize) -> usize {
    (((i as f64 + 0.5) / scale - 0.5).round().max(0.0) as usize).min(len - 1)
}

/// Displacement `T_i i - i` of every pixel.
pub fn flow_from_affine(field: &AffineField) -> FlowField {
    let w = field.width();
    let data = field
        .maps()
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let (x, y) = ((i % w) as f64, (i / w) as f64);
            let [qx, qy] = m.apply(x, y);
            [(qx - x) as f32, (qy - y) as f32]
        })
        .collect();
    FlowField {
        width: w,
        height: field.height(),
        data,
    }
}

/// Size with the larger side equal to `max_side`, preserving aspect ratio.
pub fn fit_size(width: usize, height: usize, max_side: usize) -> (usize, usize) {
    let s = max_side as f64 / width.max(height) as f64;
    (
        ((width as f64 * s).round() as usize).max(1),
        ((height as f64 * s).round() as usize).max(1),
    )
}

/// Fraction of mask pixels whose endpoint error is below `threshold`. With
/// `resize_max`, both flows and the mask are first resampled so the larger
/// side equals it.
pub fn endpoint_accuracy(
    flow: &FlowField,
    gt: &FlowField,
    mask: Option<&[bool]>,
    threshold: f64,
    resize_max: Option<usize>,
) -> Result<f64> {
    if flow.width != gt.width || flow.height != gt.height {
        return Err(invalid("flow and ground truth dimensions differ"));
    }
    if let Some(m) = mask {
        if m.len() != flow.data.len() {
            return Err(invalid("mask dimensions differ from the flow"));
        }
    }
    let (flow, gt, mask): (FlowField, FlowField, Option<Vec<bool>>) = match resize_max {
        Some(side) => {
            let (w, h) = fit_size(flow.width, flow.height, side);
            let m = mask.map(|m| {
                let (sx, sy) = (w as f64 / flow.width as f64, h as f64 / flow.height as f64);
                (0..w * h)
                    .map(|i| m[nearest(i / w, sy, flow.height) * flow.width + nearest(i % w, sx, flow.width)])
                    .collect()
            });
            (flow.resized(w, h), gt.resized(w, h), m)
        }
        None => (flow.clone(), gt.clone(), mask.map(|m| m.to_vec())),
    };
    let mut total = 0usize;
    let mut hits = 0usize;
    for i in 0..flow.data.len() {
        if mask.as_ref().is_some_and(|m| !m[i]) {
            continue;
        }
        total += 1;
        let [u, v] = flow.data[i];
        let [gu, gv] = gt.data[i];
        if ((u - gu) as f64).hypot((v - gv) as f64) < threshold {
            hits += 1;
        }
    }
    if total == 0 {
        return Err(invalid("empty mask"));
    }
    Ok(hits as f64 / total as f64)
}

/// Annotated correspondences with the object's bounding box size.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointSet {
    pub box_height: f64,
    pub box_width: f64,
    /// `(source, target)` point pairs.
    pub pairs: Vec<([f64; 2], [f64; 2])>,
}

impl KeypointSet {
    /// Parses a header line `H W` followed by one `sx sy tx ty` line per
    /// point. Blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        let header = parse_numbers(lines.next().ok_or_else(|| format("missing keypoint header"))?)?;
        let [h, w] = header[..] else {
            return Err(format("keypoint header must be `H W`"));
        };
        if !(h > 0.0 && w > 0.0) {
            return Err(format("bounding box dimensions must be positive"));
        }
        let mut pairs = Vec::new();
        for line in lines {
            let n = parse_numbers(line)?;
            let [sx, sy, tx, ty] = n[..] else {
                return Err(format(format!("keypoint line `{line}` must hold four numbers")));
            };
            pairs.push(([sx, sy], [tx, ty]));
        }
        Ok(Self {
            box_height: h,
            box_width: w,
            pairs,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Rejects points outside a `width x height` image.
    pub fn check_bounds(&self, width: usize, height: usize) -> Result<()> {
        let inside = |p: &[f64; 2]| p[0] >= 0.0 && p[1] >= 0.0 && p[0] <= (width - 1) as f64 && p[1] <= (height - 1) as f64;
        if self.pairs.iter().all(|(s, t)| inside(s) && inside(t)) {
            Ok(())
        } else {
            Err(invalid("keypoint outside the image"))
        }
    }
}

fn parse_numbers(line: &str) -> Result<Vec<f64>> {
    line.split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| format(format!("bad number `{t}`")))
        })
        .collect()
}

/// Fraction of keypoints whose flow-warped source lands strictly within
/// `alpha * max(H, W)` of the annotated target.
pub fn pck(kp: &KeypointSet, flow: &FlowField, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(invalid("alpha must lie in (0, 1]"));
    }
    if kp.pairs.is_empty() {
        return Err(invalid("empty keypoint set"));
    }
    let radius = alpha * kp.box_height.max(kp.box_width);
    let hits = kp
        .pairs
        .iter()
        .filter(|(s, t)| {
            let [u, v] = flow.sample(s[0], s[1]);
            (s[0] + u - t[0]).hypot(s[1] + v - t[1]) < radius
        })
        .count();
    Ok(hits as f64 / kp.pairs.len() as f64)
}
