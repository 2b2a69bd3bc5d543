//! Dense feature backbone and the affine-adapted self-similarity descriptor.
//!
//! The backbone produces a fixed set of oriented-gradient channels per pixel.
//! Descriptor entry `l` compares the backbone at two offsets around a point,
//! `exp(-||A(q - T w_s) - A(q - T w_t)||^2 / sigma_l)`, where only the linear
//! part of `T` acts on the offsets. Because features are sampled bilinearly
//! in feature space, evaluating the descriptor under a new affine map never
//! recomputes the backbone.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};
use crate::image::{bilinear_taps, gaussian_blur, AffineMap, Image, Plane};

/// Oriented-gradient backbone parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct BackboneConfig {
    /// Orientations evenly spaced over `[0, pi)`.
    pub orientations: usize,
    /// Gaussian scales at which gradients are taken.
    pub scales: Vec<f64>,
    /// Per-channel smoothing after the orientation projection.
    pub smoothing: f64,
    /// Added to the per-pixel L2 norm before normalization.
    pub norm_eps: f64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            orientations: 4,
            scales: vec![1.0, 2.0],
            smoothing: 1.0,
            norm_eps: 1e-3,
        }
    }
}

impl BackboneConfig {
    pub fn channels(&self) -> usize {
        self.orientations * self.scales.len()
    }
}

/// Dense per-pixel feature vectors, interleaved row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub width: usize,
    pub height: usize,
    pub dim: usize,
    pub data: Vec<f32>,
}

impl FeatureMap {
    #[inline]
    pub fn at(&self, x: usize, y: usize) -> &[f32] {
        let i = (y * self.width + x) * self.dim;
        &self.data[i..i + self.dim]
    }

    /// Bilinear feature sample with clamp-to-edge borders.
    #[inline]
    pub fn sample_into(&self, x: f64, y: f64, out: &mut [f32]) {
        let (x0, x1, fx) = bilinear_taps(x, self.width);
        let (y0, y1, fy) = bilinear_taps(y, self.height);
        let (fx, fy) = (fx as f32, fy as f32);
        let w00 = (1.0 - fx) * (1.0 - fy);
        let w10 = fx * (1.0 - fy);
        let w01 = (1.0 - fx) * fy;
        let w11 = fx * fy;
        let a = self.at(x0, y0);
        let b = self.at(x1, y0);
        let c = self.at(x0, y1);
        let d = self.at(x1, y1);
        for k in 0..self.dim {
            out[k] = w00 * a[k] + w10 * b[k] + w01 * c[k] + w11 * d[k];
        }
    }

    pub fn sample(&self, x: f64, y: f64) -> Vec<f32> {
        let mut out = vec![0.0; self.dim];
        self.sample_into(x, y, &mut out);
        out
    }
}

/// Runs the backbone: for each gradient scale and orientation the channel is
/// `|cos(theta) g_x + sin(theta) g_y|`, smoothed, then every pixel's vector is
/// divided by its L2 norm plus `norm_eps`. Channels are scale-major.
pub fn compute_feature_map(img: &Image, cfg: &BackboneConfig) -> FeatureMap {
    let gray = img.to_gray();
    let (w, h) = (gray.width, gray.height);
    let dim = cfg.channels();
    let mut channels: Vec<Plane> = Vec::with_capacity(dim);
    for &sigma in &cfg.scales {
        let blurred = gaussian_blur(&gray, sigma);
        let (gx, gy) = central_gradients(&blurred);
        for k in 0..cfg.orientations {
            let theta = std::f64::consts::PI * k as f64 / cfg.orientations as f64;
            let (s, c) = theta.sin_cos();
            let proj = gx.zip_map(&gy, |a, b| (c * a + s * b).abs());
            channels.push(gaussian_blur(&proj, cfg.smoothing));
        }
    }
    let mut data = vec![0.0f32; w * h * dim];
    for i in 0..w * h {
        let norm = channels.iter().map(|ch| ch.data[i] * ch.data[i]).sum::<f64>().sqrt();
        let inv = 1.0 / (norm + cfg.norm_eps);
        for (k, ch) in channels.iter().enumerate() {
            data[i * dim + k] = (ch.data[i] * inv) as f32;
        }
    }
    FeatureMap {
        width: w,
        height: h,
        dim,
        data,
    }
}

fn central_gradients(p: &Plane) -> (Plane, Plane) {
    let (w, h) = (p.width, p.height);
    let gx = Plane::from_fn(w, h, |x, y| {
        let l = p.get(x.saturating_sub(1), y);
        let r = p.get((x + 1).min(w - 1), y);
        0.5 * (r - l)
    });
    let gy = Plane::from_fn(w, h, |x, y| {
        let u = p.get(x, y.saturating_sub(1));
        let d = p.get(x, (y + 1).min(h - 1));
        0.5 * (d - u)
    });
    (gx, gy)
}

/// Descriptor sampling parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorConfig {
    /// Number of offset pairs `L`.
    pub pairs: usize,
    /// Support radius at the finest level, in pixels.
    pub radius: f64,
    /// Bandwidth shared by every entry.
    pub sigma: f64,
    /// Seed of the fixed random pattern.
    pub seed: u64,
    /// Truncation of the L1 matching cost.
    pub tau: f64,
}

impl Default for DescriptorConfig {
    fn default() -> Self {
        Self {
            pairs: 64,
            radius: 10.0,
            sigma: 0.5,
            seed: 0x5eed,
            tau: 8.0,
        }
    }
}

/// `L` offset pairs `(w_s, w_t)` with one bandwidth per pair.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingPattern {
    pub pairs: Vec<([f64; 2], [f64; 2])>,
    pub sigmas: Vec<f64>,
    pub radius: f64,
}

impl SamplingPattern {
    /// Offsets drawn uniformly from the disc of radius `radius`.
    pub fn random(pairs: usize, radius: f64, sigma: f64, seed: u64) -> Result<Self> {
        if pairs == 0 {
            return Err(crate::error::config("sampling pattern needs at least one pair"));
        }
        if !(radius > 0.0 && sigma > 0.0) {
            return Err(crate::error::config("pattern radius and sigma must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut disc = || {
            let r = radius * rng.gen::<f64>().sqrt();
            let a = rng.gen::<f64>() * std::f64::consts::TAU;
            [r * a.cos(), r * a.sin()]
        };
        let pairs = (0..pairs).map(|_| (disc(), disc())).collect::<Vec<_>>();
        let sigmas = vec![sigma; pairs.len()];
        Ok(Self {
            pairs,
            sigmas,
            radius,
        })
    }

    pub fn from_config(cfg: &DescriptorConfig) -> Result<Self> {
        Self::random(cfg.pairs, cfg.radius, cfg.sigma, cfg.seed)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Same pattern with offsets multiplied by `factor` (pyramid levels).
    pub fn scaled(&self, factor: f64) -> Self {
        let s = |v: [f64; 2]| [v[0] * factor, v[1] * factor];
        Self {
            pairs: self.pairs.iter().map(|&(a, b)| (s(a), s(b))).collect(),
            sigmas: self.sigmas.clone(),
            radius: self.radius * factor,
        }
    }

    /// Offsets pushed through the linear part of `t`, ready for repeated use.
    pub fn transformed(&self, t: &AffineMap) -> TransformedPattern {
        let offsets: Vec<([f64; 2], [f64; 2])> = self
            .pairs
            .iter()
            .map(|&(a, b)| (t.apply_linear(a[0], a[1]), t.apply_linear(b[0], b[1])))
            .collect();
        TransformedPattern {
            offsets32: offsets.iter().map(|&(a, b): &([f64; 2], [f64; 2])| [a[0] as f32, a[1] as f32, b[0] as f32, b[1] as f32]).collect(),
            offsets,
            inv_sigmas: self.sigmas.iter().map(|s| (1.0 / s) as f32).collect(),
        }
    }
}

/// A sampling pattern after applying one map's linear part.
#[derive(Debug, Clone)]
pub struct TransformedPattern {
    offsets: Vec<([f64; 2], [f64; 2])>,
    offsets32: Vec<[f32; 4]>,
    inv_sigmas: Vec<f32>,
}

/// Upper bound on backbone channels handled on the stack.
const MAX_DIM: usize = 64;

impl TransformedPattern {
    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    #[inline]
    fn entry(&self, fm: &FeatureMap, qx: f64, qy: f64, l: usize, a: &mut [f32], b: &mut [f32]) -> f32 {
        let (s, t) = self.offsets[l];
        fm.sample_into(qx - s[0], qy - s[1], a);
        fm.sample_into(qx - t[0], qy - t[1], b);
        let ss: f32 = a.iter().zip(b.iter()).map(|(u, v)| (u - v) * (u - v)).sum();
        (-ss * self.inv_sigmas[l]).exp().max(f32::MIN_POSITIVE)
    }

    /// Descriptor centred on the real location `(qx, qy)`.
    pub fn descriptor_into(&self, fm: &FeatureMap, qx: f64, qy: f64, out: &mut [f32]) {
        let mut a = [0.0f32; MAX_DIM];
        let mut b = [0.0f32; MAX_DIM];
        let (a, b) = (&mut a[..fm.dim], &mut b[..fm.dim]);
        for (l, o) in out.iter_mut().enumerate().take(self.offsets.len()) {
            *o = self.entry(fm, qx, qy, l, a, b);
        }
    }

    /// `min(||reference - D(q)||_1, tau)`, stopping as soon as the running sum
    /// reaches `tau`.
    pub fn truncated_cost(&self, fm: &FeatureMap, qx: f64, qy: f64, reference: &[f32], tau: f32) -> f32 {
        if fm.dim == 8 {
            return self.truncated_cost_fixed::<8>(fm, qx, qy, reference, tau);
        }
        let mut a = [0.0f32; MAX_DIM];
        let mut b = [0.0f32; MAX_DIM];
        let (a, b) = (&mut a[..fm.dim], &mut b[..fm.dim]);
        let mut acc = 0.0f32;
        for (l, r) in reference.iter().enumerate() {
            acc += (r - self.entry(fm, qx, qy, l, a, b)).abs();
            if acc >= tau {
                return tau;
            }
        }
        acc
    }
}

impl TransformedPattern {
    /// Same as the generic path with the channel count known at compile
    /// time, which lets the sampling loops vectorize.
    #[inline]
    fn truncated_cost_fixed<const D: usize>(&self, fm: &FeatureMap, qx: f64, qy: f64, reference: &[f32], tau: f32) -> f32 {
        let mut acc = 0.0f32;
        let (qx, qy) = (qx as f32, qy as f32);
        for (l, r) in reference.iter().enumerate() {
            let [sx, sy, tx, ty] = self.offsets32[l];
            let a = sample_fixed::<D>(fm, qx - sx, qy - sy);
            let b = sample_fixed::<D>(fm, qx - tx, qy - ty);
            let mut ss = 0.0f32;
            for k in 0..D {
                let d = a[k] - b[k];
                ss += d * d;
            }
            let e = (-ss * self.inv_sigmas[l]).exp().max(f32::MIN_POSITIVE);
            acc += (r - e).abs();
            if acc >= tau {
                return tau;
            }
        }
        acc
    }
}

#[inline(always)]
fn taps32(v: f32, len: usize) -> (usize, usize, f32) {
    let v = v.clamp(0.0, (len - 1) as f32);
    // NaN survives clamp; `as` maps it to 0
    let i0 = v as usize;
    let f = if v.is_nan() { 0.0 } else { v - i0 as f32 };
    (i0, (i0 + 1).min(len - 1), f)
}

#[inline(always)]
fn sample_fixed<const D: usize>(fm: &FeatureMap, x: f32, y: f32) -> [f32; D] {
    let (x0, x1, fx) = taps32(x, fm.width);
    let (y0, y1, fy) = taps32(y, fm.height);
    let w = [(1.0 - fx) * (1.0 - fy), fx * (1.0 - fy), (1.0 - fx) * fy, fx * fy];
    let at = |x: usize, y: usize| -> &[f32; D] {
        let i = (y * fm.width + x) * D;
        fm.data[i..i + D].try_into().unwrap()
    };
    let (a, b, c, d) = (at(x0, y0), at(x1, y0), at(x0, y1), at(x1, y1));
    let mut out = [0.0f32; D];
    for k in 0..D {
        out[k] = w[0] * a[k] + w[1] * b[k] + w[2] * c[k] + w[3] * d[k];
    }
    out
}

/// `L` descriptor entries, each in `(0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Descriptor(pub Vec<f32>);

/// `||A(i - off_a) - A(i - off_b)||^2` with bilinear feature sampling.
pub fn self_similarity(fm: &FeatureMap, i: (f64, f64), off_a: [f64; 2], off_b: [f64; 2]) -> f64 {
    let a = fm.sample(i.0 - off_a[0], i.1 - off_a[1]);
    let b = fm.sample(i.0 - off_b[0], i.1 - off_b[1]);
    a.iter()
        .zip(&b)
        .map(|(u, v)| {
            let d = (u - v) as f64;
            d * d
        })
        .sum()
}

/// Descriptor at `i` with the pattern transformed by the linear part of `t`.
pub fn descriptor_at(fm: &FeatureMap, i: (f64, f64), t: &AffineMap, pat: &SamplingPattern) -> Descriptor {
    assert!(fm.dim <= MAX_DIM, "backbone wider than {MAX_DIM} channels");
    let mut out = vec![0.0; pat.len()];
    pat.transformed(t).descriptor_into(fm, i.0, i.1, &mut out);
    Descriptor(out)
}

/// Truncated L1 matching cost `min(||d - d2||_1, tau)`.
pub fn match_cost(d: &Descriptor, d2: &Descriptor, tau: f64) -> Result<f64> {
    if d.0.len() != d2.0.len() {
        return Err(invalid(format!(
            "descriptor lengths differ: {} vs {}",
            d.0.len(),
            d2.0.len()
        )));
    }
    let l1: f64 = d.0.iter().zip(&d2.0).map(|(a, b)| (a - b).abs() as f64).sum();
    Ok(l1.min(tau))
}
