//! Coarse-to-fine alternation of discrete label search and continuous
//! regularization.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::continuous::{Penalty, Regularizer};
use crate::discrete::{sweep, MatchingLevel, SearchBounds, SweepContext, SweepEvent};
use crate::eaf::GuidedFilterParams;
use crate::error::{config, invalid, Result};
use crate::features::{compute_feature_map, BackboneConfig, DescriptorConfig, SamplingPattern};
use crate::image::{build_pyramid, upsample_field, AffineField, CoordFrame, DetRange, Image};
use crate::slic::{adjacency, slic_segment};

/// Matcher settings. `Default` gives the standard parameter set, with the
/// per-level quantities scaled from a 640x480 reference frame.
#[derive(Debug, Clone, PartialEq)]
pub struct DctmConfig {
    pub lambda: f64,
    pub mu0: f64,
    /// Growth factor of the coupling weight per iteration.
    pub c: f64,
    pub levels: usize,
    pub pyramid_factor: f64,
    /// Superpixels at the reference size; other sizes scale with the square
    /// root of the pixel count.
    pub segments: usize,
    pub segments_min: usize,
    pub segments_max: usize,
    pub compactness: f64,
    pub reference_width: usize,
    pub reference_height: usize,
    /// Filter radius at the reference width, scaled with the level width.
    pub filter: GuidedFilterParams,
    pub filter_radius_min: usize,
    pub descriptor: DescriptorConfig,
    /// Random-search windows at the coarsest level. The translation window
    /// is a fraction of the coarsest width.
    pub search: SearchBounds,
    pub search_rounds: usize,
    /// Screened samples per search round at the finest level; coarser
    /// levels draw proportionally more, as each sample is cheaper there.
    pub search_samples: usize,
    /// Shrink of every search window per finer level.
    pub search_level_shrink: f64,
    /// Shrink of every search window per iteration within a level.
    pub search_iter_shrink: f64,
    pub det_range: DetRange,
    pub max_iters: usize,
    pub convergence_eps: f64,
    pub continuous: bool,
    pub penalty: Penalty,
    /// Length of one unit of the regularizer's coordinate frame as a
    /// fraction of the level width, so a given relative motion is weighed
    /// the same at every pyramid level.
    pub frame_fraction: f64,
}

impl Default for DctmConfig {
    fn default() -> Self {
        Self {
            lambda: 0.01,
            mu0: 0.1,
            c: 1.8,
            levels: 3,
            pyramid_factor: 0.5,
            segments: 500,
            segments_min: 50,
            segments_max: 2000,
            compactness: 10.0,
            reference_width: 640,
            reference_height: 480,
            filter: GuidedFilterParams::default(),
            filter_radius_min: 4,
            descriptor: DescriptorConfig::default(),
            search: SearchBounds {
                translation: 0.25,
                rotation: 45f64.to_radians(),
                log_scale: 2f64.ln(),
                shear: 0.25,
                decay: 0.5,
            },
            search_rounds: 6,
            search_samples: 32,
            search_level_shrink: 0.5,
            search_iter_shrink: 0.5,
            det_range: DetRange::default(),
            max_iters: 5,
            convergence_eps: 0.1,
            continuous: true,
            penalty: Penalty::Anchored,
            frame_fraction: 0.08,
        }
    }
}

const CONFIG_KEYS: &[&str] = &[
    "lambda",
    "mu0",
    "c",
    "levels",
    "pyramid_factor",
    "segments",
    "segments_min",
    "segments_max",
    "compactness",
    "reference_width",
    "reference_height",
    "filter_radius",
    "filter_radius_min",
    "filter_eps",
    "descriptor_pairs",
    "descriptor_radius",
    "descriptor_sigma",
    "descriptor_seed",
    "tau",
    "search_translation",
    "search_rotation",
    "search_scale",
    "search_shear",
    "search_decay",
    "search_rounds",
    "search_samples",
    "search_level_shrink",
    "search_iter_shrink",
    "det_min",
    "det_max",
    "max_iters",
    "convergence_eps",
    "continuous",
    "penalty",
    "frame_fraction",
];

impl DctmConfig {
    /// Parses `key = value` lines on top of the defaults. `#` starts a
    /// comment; unknown keys and malformed values are rejected.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| config(format!("line {}: expected `key = value`", n + 1)))?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| config(format!("line {}: {e}", n + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Sets one key; the error is a bare message.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String> {
            v.parse().map_err(|_| format!("bad value `{v}`"))
        }
        match key {
            "lambda" => self.lambda = num(value)?,
            "mu0" => self.mu0 = num(value)?,
            "c" => self.c = num(value)?,
            "levels" => self.levels = num(value)?,
            "pyramid_factor" => self.pyramid_factor = num(value)?,
            "segments" => self.segments = num(value)?,
            "segments_min" => self.segments_min = num(value)?,
            "segments_max" => self.segments_max = num(value)?,
            "compactness" => self.compactness = num(value)?,
            "reference_width" => self.reference_width = num(value)?,
            "reference_height" => self.reference_height = num(value)?,
            "filter_radius" => self.filter.radius = num(value)?,
            "filter_radius_min" => self.filter_radius_min = num(value)?,
            "filter_eps" => self.filter.eps = num(value)?,
            "descriptor_pairs" => self.descriptor.pairs = num(value)?,
            "descriptor_radius" => self.descriptor.radius = num(value)?,
            "descriptor_sigma" => self.descriptor.sigma = num(value)?,
            "descriptor_seed" => self.descriptor.seed = num(value)?,
            "tau" => self.descriptor.tau = num(value)?,
            "search_translation" => self.search.translation = num(value)?,
            "search_rotation" => self.search.rotation = num::<f64>(value)?.to_radians(),
            "search_scale" => self.search.log_scale = num::<f64>(value)?.ln(),
            "search_shear" => self.search.shear = num(value)?,
            "search_decay" => self.search.decay = num(value)?,
            "search_rounds" => self.search_rounds = num(value)?,
            "search_samples" => self.search_samples = num(value)?,
            "search_level_shrink" => self.search_level_shrink = num(value)?,
            "search_iter_shrink" => self.search_iter_shrink = num(value)?,
            "det_min" => self.det_range.min = num(value)?,
            "det_max" => self.det_range.max = num(value)?,
            "max_iters" => self.max_iters = num(value)?,
            "convergence_eps" => self.convergence_eps = num(value)?,
            "continuous" => self.continuous = num(value)?,
            "penalty" => {
                self.penalty = match value {
                    "anchored" => Penalty::Anchored,
                    "homogeneous" => Penalty::Homogeneous,
                    _ => return Err(format!("unknown penalty `{value}`")),
                }
            }
            "frame_fraction" => self.frame_fraction = num(value)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Renders every key with its current value, in a form `parse` accepts.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let penalty = match self.penalty {
            Penalty::Anchored => "anchored",
            Penalty::Homogeneous => "homogeneous",
        };
        let values: Vec<String> = vec![
            self.lambda.to_string(),
            self.mu0.to_string(),
            self.c.to_string(),
            self.levels.to_string(),
            self.pyramid_factor.to_string(),
            self.segments.to_string(),
            self.segments_min.to_string(),
            self.segments_max.to_string(),
            self.compactness.to_string(),
            self.reference_width.to_string(),
            self.reference_height.to_string(),
            self.filter.radius.to_string(),
            self.filter_radius_min.to_string(),
            self.filter.eps.to_string(),
            self.descriptor.pairs.to_string(),
            self.descriptor.radius.to_string(),
            self.descriptor.sigma.to_string(),
            self.descriptor.seed.to_string(),
            self.descriptor.tau.to_string(),
            self.search.translation.to_string(),
            self.search.rotation.to_degrees().to_string(),
            self.search.log_scale.exp().to_string(),
            self.search.shear.to_string(),
            self.search.decay.to_string(),
            self.search_rounds.to_string(),
            self.search_samples.to_string(),
            self.search_level_shrink.to_string(),
            self.search_iter_shrink.to_string(),
            self.det_range.min.to_string(),
            self.det_range.max.to_string(),
            self.max_iters.to_string(),
            self.convergence_eps.to_string(),
            self.continuous.to_string(),
            penalty.to_string(),
            self.frame_fraction.to_string(),
        ];
        for (k, v) in CONFIG_KEYS.iter().zip(values) {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lambda", self.lambda),
            ("mu0", self.mu0),
            ("compactness", self.compactness),
            ("descriptor_radius", self.descriptor.radius),
            ("descriptor_sigma", self.descriptor.sigma),
            ("tau", self.descriptor.tau),
            ("convergence_eps", self.convergence_eps),
            ("frame_fraction", self.frame_fraction),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.c > 1.0 && self.c <= 2.0) {
            return Err(config(format!("c must lie in (1, 2], got {}", self.c)));
        }
        if self.levels < 1 {
            return Err(config("levels must be at least 1"));
        }
        if self.max_iters < 1 {
            return Err(config("max_iters must be at least 1"));
        }
        if !(self.pyramid_factor > 0.0 && self.pyramid_factor < 1.0) {
            return Err(config("pyramid_factor must lie in (0, 1)"));
        }
        if self.segments < 1 || self.segments_min < 1 || self.segments_min > self.segments_max {
            return Err(config("segment counts must satisfy 1 <= segments_min <= segments_max"));
        }
        if self.reference_width == 0 || self.reference_height == 0 {
            return Err(config("reference size must be positive"));
        }
        if self.descriptor.pairs == 0 {
            return Err(config("descriptor_pairs must be at least 1"));
        }
        if self.filter_radius_min < 1 {
            return Err(config("filter_radius_min must be at least 1"));
        }
        if !(self.search_level_shrink > 0.0 && self.search_level_shrink <= 1.0) {
            return Err(config("search_level_shrink must lie in (0, 1]"));
        }
        if !(self.search_iter_shrink > 0.0 && self.search_iter_shrink <= 1.0) {
            return Err(config("search_iter_shrink must lie in (0, 1]"));
        }
        if !(self.det_range.min > 0.0 && self.det_range.min < self.det_range.max && self.det_range.max.is_finite()) {
            return Err(config("determinant range must satisfy 0 < det_min < det_max"));
        }
        self.filter.validate()?;
        self.search.validate()
    }

    /// Superpixel count for a `w x h` level.
    pub fn segments_for(&self, w: usize, h: usize) -> usize {
        let reference = (self.reference_width * self.reference_height) as f64;
        let k = self.segments as f64 * ((w * h) as f64 / reference).sqrt();
        (k.round() as usize).clamp(self.segments_min, self.segments_max).min(w * h)
    }

    /// Guided-filter radius for a level of width `w`.
    pub fn radius_for(&self, w: usize) -> usize {
        let r = self.filter.radius as f64 * w as f64 / self.reference_width as f64;
        (r.round() as usize).max(self.filter_radius_min)
    }
}

/// `c * mu`.
pub fn mu_schedule(mu: f64, c: f64) -> f64 {
    c * mu
}

/// Mean endpoint displacement between two fields over all pixels.
pub fn mean_displacement(prev: &AffineField, cur: &AffineField) -> Result<f64> {
    if prev.width() != cur.width() || prev.height() != cur.height() {
        return Err(invalid("field dimensions differ"));
    }
    let a = prev.targets();
    let b = cur.targets();
    let sum: f64 = a.iter().zip(&b).map(|(p, q)| (p[0] - q[0]).hypot(p[1] - q[1])).sum();
    Ok(sum / a.len() as f64)
}

/// True when the mean endpoint displacement is below `eps`.
pub fn converged(prev: &AffineField, cur: &AffineField, eps: f64) -> Result<bool> {
    Ok(mean_displacement(prev, cur)? < eps)
}

/// Per-level record of one matcher run.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelReport {
    pub width: usize,
    pub height: usize,
    pub segments: usize,
    pub filter_radius: usize,
    pub iterations: usize,
    /// Whether the displacement test (rather than the iteration cap) ended
    /// the level.
    pub converged: bool,
    /// Coupling weight used by each iteration.
    pub mu: Vec<f64>,
    /// Mean aggregated data cost after each sweep.
    pub data_cost: Vec<f64>,
    /// Mean per-pixel surrogate objective after each sweep.
    pub surrogate: Vec<f64>,
    /// Warping objective at the continuous solution of each iteration.
    pub warping_objective: Vec<f64>,
    /// Mean endpoint displacement of `L` per iteration.
    pub displacement: Vec<f64>,
    pub candidates: usize,
    pub updates: usize,
    /// Pixels whose surrogate objective rose during a candidate evaluation.
    pub monotonicity_violations: usize,
    pub solver_fallbacks: usize,
    pub setup_seconds: f64,
    pub discrete_seconds: f64,
    pub continuous_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchReport {
    /// Coarsest level first.
    pub levels: Vec<LevelReport>,
    pub final_mu: f64,
    pub warnings: Vec<String>,
    pub total_seconds: f64,
}

impl MatchReport {
    pub fn monotonicity_violations(&self) -> usize {
        self.levels.iter().map(|l| l.monotonicity_violations).sum()
    }

    pub fn solver_fallbacks(&self) -> usize {
        self.levels.iter().map(|l| l.solver_fallbacks).sum()
    }

    /// Structured `key: value` text. Timings are left out when
    /// `with_timing` is false so that reports of equal runs compare equal.
    pub fn to_text(&self, with_timing: bool) -> String {
        let mut s = String::new();
        let list = |v: &[f64]| v.iter().map(|x| format!("{x:.6e}")).collect::<Vec<_>>().join(" ");
        let _ = writeln!(s, "levels: {}", self.levels.len());
        for (k, l) in self.levels.iter().enumerate() {
            let _ = writeln!(s, "[level {k}]");
            let _ = writeln!(s, "size: {}x{}", l.width, l.height);
            let _ = writeln!(s, "segments: {}", l.segments);
            let _ = writeln!(s, "filter_radius: {}", l.filter_radius);
            let _ = writeln!(s, "iterations: {}", l.iterations);
            let _ = writeln!(s, "converged: {}", l.converged);
            let _ = writeln!(s, "mu: {}", list(&l.mu));
            let _ = writeln!(s, "data_cost: {}", list(&l.data_cost));
            let _ = writeln!(s, "surrogate: {}", list(&l.surrogate));
            let _ = writeln!(s, "warping_objective: {}", list(&l.warping_objective));
            let _ = writeln!(s, "displacement: {}", list(&l.displacement));
            let _ = writeln!(s, "candidates: {}", l.candidates);
            let _ = writeln!(s, "updates: {}", l.updates);
            let _ = writeln!(s, "monotonicity_violations: {}", l.monotonicity_violations);
            let _ = writeln!(s, "solver_fallbacks: {}", l.solver_fallbacks);
            if with_timing {
                let _ = writeln!(s, "setup_seconds: {:.3}", l.setup_seconds);
                let _ = writeln!(s, "discrete_seconds: {:.3}", l.discrete_seconds);
                let _ = writeln!(s, "continuous_seconds: {:.3}", l.continuous_seconds);
            }
        }
        let _ = writeln!(s, "[summary]");
        let _ = writeln!(s, "final_mu: {:.6e}", self.final_mu);
        for w in &self.warnings {
            let _ = writeln!(s, "warning: {w}");
        }
        if with_timing {
            let _ = writeln!(s, "total_seconds: {:.3}", self.total_seconds);
        }
        s
    }
}

/// Below this grayscale standard deviation an image counts as textureless.
const LOW_TEXTURE_STD: f64 = 1e-3;

fn gray_std(img: &Image) -> f64 {
    let g = img.to_gray();
    let n = g.data.len() as f64;
    let mean = g.data.iter().sum::<f64>() / n;
    (g.data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Hooks into a running match. Both methods default to doing nothing.
pub trait MatchObserver {
    /// Called after every iteration with the level index, the iteration,
    /// the discrete result `T` and the continuous result `L`.
    fn iteration(&mut self, _level: usize, _iter: usize, _t: &AffineField, _l: &AffineField) {}

    /// Called from inside the discrete sweeps.
    fn sweep_event(&self, _level: usize, _ctx: &SweepContext<'_>, _event: &SweepEvent<'_>) {}

    /// Whether [`MatchObserver::sweep_event`] should be called at all;
    /// recording events costs some time.
    fn wants_sweep_events(&self) -> bool {
        false
    }
}

impl<F: FnMut(usize, usize, &AffineField, &AffineField)> MatchObserver for F {
    fn iteration(&mut self, level: usize, iter: usize, t: &AffineField, l: &AffineField) {
        self(level, iter, t, l)
    }
}

/// Dense affine correspondence field from `src` to `tgt`.
pub fn dctm_match(src: &Image, tgt: &Image, cfg: &DctmConfig, seed: u64) -> Result<(AffineField, MatchReport)> {
    dctm_match_observed(src, tgt, cfg, seed, &mut |_: usize, _: usize, _: &AffineField, _: &AffineField| {})
}

pub fn dctm_match_observed(
    src: &Image,
    tgt: &Image,
    cfg: &DctmConfig,
    seed: u64,
    observer: &mut dyn MatchObserver,
) -> Result<(AffineField, MatchReport)> {
    cfg.validate()?;
    if src.width() != tgt.width() || src.height() != tgt.height() {
        return Err(invalid("source and target must have the same dimensions"));
    }
    let start = Instant::now();
    let mut warnings = Vec::new();
    for (name, img) in [("source", src), ("target", tgt)] {
        if gray_std(img) < LOW_TEXTURE_STD {
            warnings.push(format!("low texture: {name} image is nearly uniform"));
        }
    }
    let min_side = 2 * cfg.filter_radius_min;
    let src_pyr = build_pyramid(src, cfg.levels, cfg.pyramid_factor, min_side)?;
    let tgt_pyr = build_pyramid(tgt, cfg.levels, cfg.pyramid_factor, min_side)?;
    let backbone = BackboneConfig::default();
    let base_pattern = SamplingPattern::from_config(&cfg.descriptor)?;
    let finest_w = src.width() as f64;
    let coarsest_w = src_pyr.levels[0].width() as f64;

    let mut levels = Vec::with_capacity(cfg.levels);
    let mut field: Option<AffineField> = None;
    let mut mu = cfg.mu0;
    for (lvl, (s, t)) in src_pyr.levels.iter().zip(&tgt_pyr.levels).enumerate() {
        let setup = Instant::now();
        let (w, h) = (s.width(), s.height());
        let level_scale = w as f64 / finest_w;
        let radius = cfg.radius_for(w);
        let params = GuidedFilterParams {
            radius,
            eps: cfg.filter.eps,
        };
        let fs = compute_feature_map(s, &backbone);
        let ft = compute_feature_map(t, &backbone);
        let matching = MatchingLevel::new(&fs, ft, base_pattern.scaled(level_scale), cfg.descriptor.tau)?;
        let guide = s.to_gray();
        let frame = CoordFrame {
            origin: [(w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0],
            scale: cfg.frame_fraction * w as f64,
        };
        let regularizer = Regularizer::new(s, params, frame).with_penalty(cfg.penalty);
        let level_seed = seed ^ (lvl as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
        let segments = slic_segment(s, cfg.segments_for(w, h), cfg.compactness, level_seed)?;
        let graph = adjacency(&segments);
        let order = segments.scan_order();
        let reversed: Vec<usize> = order.iter().rev().copied().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(level_seed);
        let shrink = cfg.search_level_shrink.powi(lvl as i32);
        let mut bounds = cfg.search.scaled(shrink);
        bounds.translation = cfg.search.translation * coarsest_w * (w as f64 / coarsest_w) * shrink;

        let mut l = match field.take() {
            None => AffineField::identity(w, h),
            Some(prev) => upsample_field(&prev, w, h),
        };
        let mut report = LevelReport {
            width: w,
            height: h,
            segments: segments.count(),
            filter_radius: radius,
            iterations: 0,
            converged: false,
            mu: Vec::new(),
            data_cost: Vec::new(),
            surrogate: Vec::new(),
            warping_objective: Vec::new(),
            displacement: Vec::new(),
            candidates: 0,
            updates: 0,
            monotonicity_violations: 0,
            solver_fallbacks: 0,
            setup_seconds: setup.elapsed().as_secs_f64(),
            discrete_seconds: 0.0,
            continuous_seconds: 0.0,
        };
        mu = cfg.mu0;
        for it in 0..cfg.max_iters {
            let clock = Instant::now();
            let prev_local = l.to_frame(&frame);
            let mut t_field = l.clone();
            let watcher: &dyn MatchObserver = &*observer;
            let hook = |ctx: &SweepContext<'_>, e: &SweepEvent<'_>| watcher.sweep_event(lvl, ctx, e);
            let ctx = SweepContext {
                level: &matching,
                guide: &guide,
                params,
                regularizer: &regularizer,
                prev_local: &prev_local,
                mu,
                lambda: cfg.lambda,
                bounds: bounds.scaled(cfg.search_iter_shrink.powi(it as i32)),
                rounds: cfg.search_rounds,
                samples: (cfg.search_samples as f64 / level_scale).round() as usize,
                det_range: cfg.det_range,
                events: watcher.wants_sweep_events().then_some(&hook as &dyn Fn(&SweepContext<'_>, &SweepEvent<'_>)),
            };
            // alternate the scan direction so labels spread both ways
            let scan = if it % 2 == 0 { &order } else { &reversed };
            let stats = sweep(&ctx, &segments, &graph, scan, &mut t_field, &mut rng)?;
            report.discrete_seconds += clock.elapsed().as_secs_f64();

            let clock = Instant::now();
            let next = if cfg.continuous {
                let sol = regularizer.solve(&t_field, mu, cfg.lambda);
                report.solver_fallbacks += sol.fallbacks;
                sol.field
            } else {
                t_field.clone()
            };
            report
                .warping_objective
                .push(regularizer.objective(&next, &t_field, mu, cfg.lambda));
            report.continuous_seconds += clock.elapsed().as_secs_f64();

            observer.iteration(lvl, it, &t_field, &next);
            let moved = mean_displacement(&l, &next)?;
            report.mu.push(mu);
            report.data_cost.push(stats.mean_data_cost);
            report.surrogate.push(stats.mean_objective);
            report.displacement.push(moved);
            report.candidates += stats.candidates;
            report.updates += stats.updates;
            report.monotonicity_violations += stats.violations;
            report.iterations = it + 1;
            l = next;
            mu = mu_schedule(mu, cfg.c);
            if moved < cfg.convergence_eps {
                report.converged = true;
                break;
            }
        }
        levels.push(report);
        field = Some(l);
    }
    let report = MatchReport {
        levels,
        final_mu: mu,
        warnings,
        total_seconds: start.elapsed().as_secs_f64(),
    };
    Ok((field.expect("at least one level"), report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::AffineMap;

    #[test]
    fn mu_schedule_examples() {
        assert!((mu_schedule(0.1, 1.8) - 0.18).abs() < 1e-15);
        assert_eq!(mu_schedule(0.5, 2.0), 1.0);
        // 0.1 * 1.8^4
        let mu = (0..4).fold(0.1, |m, _| mu_schedule(m, 1.8));
        assert!((mu - 1.04976).abs() < 1e-12);
    }

    #[test]
    fn convergence_examples() {
        let a = AffineField::identity(6, 5);
        assert!(converged(&a, &a, 1e-12).unwrap());
        let b = AffineField::constant(6, 5, AffineMap::translation(1.0, 0.0));
        assert!(!converged(&a, &b, 0.1).unwrap());
        assert!(converged(&a, &AffineField::identity(5, 5), 0.1).is_err());
    }

    #[test]
    fn config_defaults_and_parsing() {
        let d = DctmConfig::default();
        assert_eq!((d.lambda, d.mu0, d.c, d.levels, d.segments), (0.01, 0.1, 1.8, 3, 500));
        assert_eq!(d.filter, GuidedFilterParams { radius: 16, eps: 0.01 });
        let cfg = DctmConfig::parse("# tuned\nlambda = 0.02\n\nmax_iters=3 # fewer\ncontinuous = false\n").unwrap();
        assert_eq!(cfg.lambda, 0.02);
        assert_eq!(cfg.max_iters, 3);
        assert!(!cfg.continuous);
        assert_eq!(DctmConfig::parse(&d.to_text()).unwrap(), d);
    }

    #[test]
    fn config_rejections() {
        for text in ["bogus = 1", "lambda = -1", "c = 2.5", "c = 1", "levels = 0", "max_iters = 0", "lambda", "mu0 = x", "penalty = l2"] {
            assert!(matches!(DctmConfig::parse(text), Err(crate::Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn level_scaling() {
        let d = DctmConfig::default();
        assert_eq!(d.segments_for(640, 480), 500);
        assert_eq!(d.segments_for(256, 192), 200);
        assert_eq!(d.segments_for(64, 48), 50);
        assert_eq!(d.radius_for(640), 16);
        assert_eq!(d.radius_for(256), 6);
        assert_eq!(d.radius_for(64), 4);
    }
}
