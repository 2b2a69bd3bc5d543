//! Synthetic image pairs with exactly known per-pixel affine ground truth.
//!
//! The target is the base image itself and the source is the base pulled
//! back through the ground-truth field, so `warp_image(tgt, gt)` reproduces
//! the source and the field follows the matcher's source-to-target
//! convention.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{config, Result};
use crate::image::{warp_image, AffineField, AffineMap, Image};

/// Analytic deformation used to build a pair.
#[derive(Debug, Clone, PartialEq)]
pub enum WarpSpec {
    Identity,
    /// `T(p) = c + R(theta) diag(sx, sy) [[1, shear], [0, 1]] (p - c) + t`
    /// about the image center `c`; `theta` in degrees.
    GlobalAffine {
        theta: f64,
        sx: f64,
        sy: f64,
        shear: f64,
        tx: f64,
        ty: f64,
    },
    /// Moving-least-squares affine deformation through control points
    /// `(position, displacement)` given in source coordinates.
    Mls { controls: Vec<([f64; 2], [f64; 2])> },
    /// `count` control points drawn from the seed, each displaced by at most
    /// `max_disp` pixels.
    RandomMls { count: usize, max_disp: f64 },
}

impl WarpSpec {
    /// Parses `identity`, `affine:theta=15,sx=1.2,sy=1.2,shear=0,tx=10,ty=-6`
    /// (omitted keys keep identity values) or `mls:k=4,max=12`.
    pub fn parse(text: &str) -> Result<Self> {
        let text = text.trim();
        let (kind, args) = text.split_once(':').unwrap_or((text, ""));
        let mut kv = Vec::new();
        for part in args.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| config(format!("expected key=value in warp spec, got `{part}`")))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| config(format!("bad number `{v}` in warp spec")))?;
            kv.push((k.trim().to_string(), v));
        }
        let take = |allowed: &[&str]| -> Result<()> {
            match kv.iter().find(|(k, _)| !allowed.contains(&k.as_str())) {
                Some((k, _)) => Err(config(format!("unknown warp parameter `{k}`"))),
                None => Ok(()),
            }
        };
        let get = |k: &str, d: f64| kv.iter().rev().find(|(key, _)| key == k).map_or(d, |e| e.1);
        let spec = match kind {
            "identity" => {
                take(&[])?;
                WarpSpec::Identity
            }
            "affine" => {
                take(&["theta", "sx", "sy", "shear", "tx", "ty"])?;
                WarpSpec::GlobalAffine {
                    theta: get("theta", 0.0),
                    sx: get("sx", 1.0),
                    sy: get("sy", 1.0),
                    shear: get("shear", 0.0),
                    tx: get("tx", 0.0),
                    ty: get("ty", 0.0),
                }
            }
            "mls" => {
                take(&["k", "max"])?;
                let k = get("k", 4.0);
                if k.fract() != 0.0 || k < 0.0 {
                    return Err(config("mls control point count must be a whole number"));
                }
                WarpSpec::RandomMls {
                    count: k as usize,
                    max_disp: get("max", 12.0),
                }
            }
            other => return Err(config(format!("unknown warp kind `{other}`"))),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            WarpSpec::Identity => Ok(()),
            WarpSpec::GlobalAffine { theta, sx, sy, shear, tx, ty } => {
                if ![theta, sx, sy, shear, tx, ty].iter().all(|v| v.is_finite()) {
                    return Err(config("warp parameters must be finite"));
                }
                if !(*sx > 0.0 && *sy > 0.0) {
                    return Err(config("warp scales must be positive"));
                }
                Ok(())
            }
            WarpSpec::Mls { controls } => {
                if controls.len() < 3 {
                    return Err(config("mls needs at least three control points"));
                }
                if controls.iter().any(|(p, d)| !(p.iter().chain(d).all(|v| v.is_finite()))) {
                    return Err(config("mls control points must be finite"));
                }
                let p0 = controls[0].0;
                let spread = controls.iter().any(|(p, _)| {
                    controls.iter().any(|(q, _)| {
                        let cross = (p[0] - p0[0]) * (q[1] - p0[1]) - (p[1] - p0[1]) * (q[0] - p0[0]);
                        cross.abs() > 1e-6
                    })
                });
                if !spread {
                    return Err(config("mls control points are collinear"));
                }
                Ok(())
            }
            WarpSpec::RandomMls { count, max_disp } => {
                if *count < 3 {
                    return Err(config("mls needs at least three control points"));
                }
                if !(max_disp.is_finite() && *max_disp >= 0.0) {
                    return Err(config("mls displacement bound must be non-negative"));
                }
                Ok(())
            }
        }
    }
}

/// The single affine map of a global-affine spec on a `width x height` grid.
pub fn global_affine_map(width: usize, height: usize, theta_deg: f64, sx: f64, sy: f64, shear: f64, tx: f64, ty: f64) -> AffineMap {
    let (s, c) = theta_deg.to_radians().sin_cos();
    let linear = [[c * sx, c * sx * shear - s * sy], [s * sx, s * sx * shear + c * sy]];
    let center = [(width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0];
    AffineMap::about(linear, center, [tx, ty])
}

/// Control points spread over the central part of the image: one per cell
/// of a near-square grid, with random offsets within the cell and random
/// displacements of magnitude at most `max_disp`.
pub fn random_controls(width: usize, height: usize, count: usize, max_disp: f64, seed: u64) -> Vec<([f64; 2], [f64; 2])> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cols = (count as f64).sqrt().ceil() as usize;
    let rows = count.div_ceil(cols);
    let (w, h) = (width as f64, height as f64);
    (0..count)
        .map(|k| {
            let (cx, cy) = ((k % cols) as f64, (k / cols) as f64);
            let x = w * (0.15 + 0.7 * (cx + rng.gen_range(0.2..0.8)) / cols as f64);
            let y = h * (0.15 + 0.7 * (cy + rng.gen_range(0.2..0.8)) / rows as f64);
            let a: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let m = max_disp * rng.gen_range(0.5..=1.0);
            ([x, y], [m * a.cos(), m * a.sin()])
        })
        .collect()
}

/// Local affine map of the moving-least-squares deformation at `v`, with
/// inverse-square-distance weights. Its value at `v` is the deformed point.
pub fn mls_affine_at(controls: &[([f64; 2], [f64; 2])], v: [f64; 2]) -> AffineMap {
    let mut weights = Vec::with_capacity(controls.len());
    for (p, d) in controls {
        let d2 = (p[0] - v[0]).powi(2) + (p[1] - v[1]).powi(2);
        if d2 < 1e-18 {
            return AffineMap::translation(d[0], d[1]);
        }
        weights.push(1.0 / d2);
    }
    let wsum: f64 = weights.iter().sum();
    let mut ps = [0.0; 2];
    let mut qs = [0.0; 2];
    for ((p, d), w) in controls.iter().zip(&weights) {
        for c in 0..2 {
            ps[c] += w * p[c] / wsum;
            qs[c] += w * (p[c] + d[c]) / wsum;
        }
    }
    // row-vector fit q^ = p^ M
    let mut a = [[0.0; 2]; 2];
    let mut b = [[0.0; 2]; 2];
    for ((p, d), w) in controls.iter().zip(&weights) {
        let ph = [p[0] - ps[0], p[1] - ps[1]];
        let qh = [p[0] + d[0] - qs[0], p[1] + d[1] - qs[1]];
        for r in 0..2 {
            for c in 0..2 {
                a[r][c] += w * ph[r] * ph[c];
                b[r][c] += w * ph[r] * qh[c];
            }
        }
    }
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    let inv = [[a[1][1] / det, -a[0][1] / det], [-a[1][0] / det, a[0][0] / det]];
    let mut m = [[0.0; 2]; 2];
    for r in 0..2 {
        for c in 0..2 {
            m[r][c] = inv[r][0] * b[0][c] + inv[r][1] * b[1][c];
        }
    }
    // column convention: x' = M^T (x - p*) + q*
    let lin = [[m[0][0], m[1][0]], [m[0][1], m[1][1]]];
    AffineMap::about(lin, ps, [qs[0] - ps[0], qs[1] - ps[1]])
}

/// A synthetic pair and its ground truth.
#[derive(Debug, Clone)]
pub struct SynthPair {
    pub src: Image,
    pub tgt: Image,
    pub gt: AffineField,
    /// Pixels whose ground-truth target lies inside the base image.
    pub mask: Vec<bool>,
}

pub fn ground_truth_field(width: usize, height: usize, spec: &WarpSpec, seed: u64) -> Result<AffineField> {
    spec.validate()?;
    Ok(match spec {
        WarpSpec::Identity => AffineField::identity(width, height),
        &WarpSpec::GlobalAffine { theta, sx, sy, shear, tx, ty } => {
            AffineField::constant(width, height, global_affine_map(width, height, theta, sx, sy, shear, tx, ty))
        }
        WarpSpec::Mls { controls } => AffineField::from_fn(width, height, |x, y| mls_affine_at(controls, [x as f64, y as f64])),
        &WarpSpec::RandomMls { count, max_disp } => {
            let controls = random_controls(width, height, count, max_disp, seed);
            AffineField::from_fn(width, height, |x, y| mls_affine_at(&controls, [x as f64, y as f64]))
        }
    })
}

pub fn synth_pair(base: &Image, spec: &WarpSpec, seed: u64) -> Result<SynthPair> {
    let (w, h) = (base.width(), base.height());
    let gt = ground_truth_field(w, h, spec, seed)?;
    let src = warp_image(base, &gt)?;
    let mask: Vec<bool> = gt
        .targets()
        .iter()
        .map(|&[x, y]| x >= 0.0 && y >= 0.0 && x <= (w - 1) as f64 && y <= (h - 1) as f64)
        .collect();

    Ok(SynthPair {
        src,
        tgt: base.clone(),
        gt,
        mask,
    })
}
