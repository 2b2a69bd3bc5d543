//! Constant-time edge-aware filtering.
//!
//! The guided filter realizes both normalized weight kernels of the energy:
//! cost aggregation and the moving-least-squares regularizer. Box means use
//! windows truncated at the map border, which keeps the implied kernel
//! normalized everywhere.

use crate::error::{invalid, Result};
use crate::image::{CoordFrame, Image, Plane};

/// Radius and regularizer of the guided filter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuidedFilterParams {
    pub radius: usize,
    pub eps: f64,
}

impl Default for GuidedFilterParams {
    fn default() -> Self {
        Self {
            radius: 16,
            eps: 0.01,
        }
    }
}

impl GuidedFilterParams {
    pub fn validate(&self) -> Result<()> {
        if self.radius < 1 {
            return Err(crate::error::config("guided filter radius must be >= 1"));
        }
        if !(self.eps > 0.0) {
            return Err(crate::error::config("guided filter eps must be > 0"));
        }
        Ok(())
    }
}

/// Mean over the `(2r+1)^2` window around each pixel, truncated at the
/// border. Runs in O(1) per pixel through a summed-area table.
pub fn box_filter(map: &Plane, radius: usize) -> Plane {
    let (w, h) = (map.width, map.height);
    let stride = w + 1;
    let mut sat = vec![0.0f64; stride * (h + 1)];
    for y in 0..h {
        let mut row = 0.0;
        for x in 0..w {
            row += map.data[y * w + x];
            sat[(y + 1) * stride + x + 1] = sat[y * stride + x + 1] + row;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let y0 = y.saturating_sub(radius);
        let y1 = (y + radius + 1).min(h);
        for x in 0..w {
            let x0 = x.saturating_sub(radius);
            let x1 = (x + radius + 1).min(w);
            let sum = sat[y1 * stride + x1] - sat[y0 * stride + x1] - sat[y1 * stride + x0]
                + sat[y0 * stride + x0];
            out[y * w + x] = sum / ((x1 - x0) * (y1 - y0)) as f64;
        }
    }
    Plane {
        width: w,
        height: h,
        data: out,
    }
}

/// Guided filter with its guide statistics precomputed, so many inputs can be
/// filtered against the same guide.
#[derive(Debug, Clone)]
pub struct GuidedFilter {
    guide: Plane,
    mean: Plane,
    var_eps: Plane,
    radius: usize,
}

impl GuidedFilter {
    pub fn new(guide: Plane, params: GuidedFilterParams) -> Self {
        let r = params.radius;
        let mean = box_filter(&guide, r);
        let sq = box_filter(&guide.map(|v| v * v), r);
        let var_eps = sq.zip_map(&mean, |s, m| (s - m * m).max(0.0) + params.eps);
        Self {
            guide,
            mean,
            var_eps,
            radius: r,
        }
    }

    pub fn width(&self) -> usize {
        self.guide.width
    }

    pub fn height(&self) -> usize {
        self.guide.height
    }

    pub fn filter(&self, input: &Plane) -> Result<Plane> {
        if !input.same_size(&self.guide) {
            return Err(invalid(format!(
                "input is {}x{} but guide is {}x{}",
                input.width, input.height, self.guide.width, self.guide.height
            )));
        }
        let r = self.radius;
        let mean_p = box_filter(input, r);
        let mean_ip = box_filter(&self.guide.zip_map(input, |g, p| g * p), r);
        let n = input.data.len();
        let mut a = vec![0.0; n];
        let mut b = vec![0.0; n];
        for k in 0..n {
            let mu = self.mean.data[k];
            let cov = mean_ip.data[k] - mu * mean_p.data[k];
            a[k] = cov / self.var_eps.data[k];
            b[k] = mean_p.data[k] - a[k] * mu;
        }
        let (w, h) = (input.width, input.height);
        let mean_a = box_filter(&Plane { width: w, height: h, data: a }, r);
        let mean_b = box_filter(&Plane { width: w, height: h, data: b }, r);
        let data = (0..n)
            .map(|i| mean_a.data[i] * self.guide.data[i] + mean_b.data[i])
            .collect();
        Ok(Plane {
            width: w,
            height: h,
            data,
        })
    }
}

/// Guided filter of `input` steered by the grayscale of `guide`.
pub fn guided_filter(guide: &Image, input: &Plane, params: GuidedFilterParams) -> Result<Plane> {
    if guide.width() != input.width || guide.height() != input.height {
        return Err(invalid("guide and input dimensions differ"));
    }
    GuidedFilter::new(guide.to_gray(), params).filter(input)
}

/// Per-pixel filtered second moments of homogeneous coordinates,
/// `M_i = sum_j v_ij [x_j, y_j, 1]^T [x_j, y_j, 1]`.
#[derive(Debug, Clone)]
pub struct MomentField {
    pub width: usize,
    pub height: usize,
    pub xx: Vec<f64>,
    pub xy: Vec<f64>,
    pub yy: Vec<f64>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub one: Vec<f64>,
}

impl MomentField {
    /// The symmetric 3x3 moment matrix at linear pixel index `i`.
    #[inline]
    pub fn matrix(&self, i: usize) -> [[f64; 3]; 3] {
        [
            [self.xx[i], self.xy[i], self.x[i]],
            [self.xy[i], self.yy[i], self.y[i]],
            [self.x[i], self.y[i], self.one[i]],
        ]
    }
}

/// Filters the coordinate maps `x^2, xy, y^2, x, y, 1` (in pixel coordinates)
/// with the guide's kernel.
pub fn moment_maps(guide: &Image, params: GuidedFilterParams) -> MomentField {
    let filter = GuidedFilter::new(guide.to_gray(), params);
    moment_maps_in(&filter, &CoordFrame::PIXEL)
}

/// Moment maps with coordinates expressed in `frame`.
pub fn moment_maps_in(filter: &GuidedFilter, frame: &CoordFrame) -> MomentField {
    let (w, h) = (filter.width(), filter.height());
    let coord = |f: &dyn Fn(f64, f64) -> f64| {
        let plane = Plane::from_fn(w, h, |x, y| {
            let [u, v] = frame.coords(x as f64, y as f64);
            f(u, v)
        });
        filter.filter(&plane).expect("coordinate map matches guide").data
    };
    MomentField {
        width: w,
        height: h,
        xx: coord(&|u, _| u * u),
        xy: coord(&|u, v| u * v),
        yy: coord(&|_, v| v * v),
        x: coord(&|u, _| u),
        y: coord(&|_, v| v),
        one: coord(&|_, _| 1.0),
    }
}
