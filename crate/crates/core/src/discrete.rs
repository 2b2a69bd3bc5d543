//! Filter-based discrete label optimization over superpixels.
//!
//! For a candidate map `t` shared by a segment, raw descriptor costs are
//! computed on the segment's bounding box dilated by the filter radius,
//! aggregated with the guided filter, augmented by the coupling to the
//! previous continuous field, and every pixel keeps whichever label has the
//! lowest total (winner takes all). Candidates come from neighbouring
//! segments (propagation) and from a center-biased random search.

use rand::Rng;

use crate::continuous::{quad3, Regularizer};
use crate::eaf::{GuidedFilter, GuidedFilterParams};
use crate::error::{invalid, Result};
use crate::features::{FeatureMap, SamplingPattern, TransformedPattern};
use crate::image::{AffineField, AffineMap, DetRange, Plane, Rect};
use crate::slic::{SegmentGraph, SegmentMap};

/// Where a candidate label came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CandidateOrigin {
    /// Stands for each pixel's own current label.
    Incumbent,
    Propagation,
    RandomSearch,
    ContinuousInit,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelCandidate {
    pub map: AffineMap,
    pub origin: CandidateOrigin,
}

impl LabelCandidate {
    pub fn incumbent() -> Self {
        Self {
            map: AffineMap::IDENTITY,
            origin: CandidateOrigin::Incumbent,
        }
    }
}

/// Half-widths of the random-search windows in the decomposed parameter
/// space, plus the per-round shrink factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchBounds {
    /// Displacement of the anchor point, in pixels.
    pub translation: f64,
    /// Rotation, in radians.
    pub rotation: f64,
    /// Natural log of each axis scale.
    pub log_scale: f64,
    pub shear: f64,
    pub decay: f64,
}

impl SearchBounds {
    pub fn validate(&self) -> Result<()> {
        let windows = [self.translation, self.rotation, self.log_scale, self.shear];
        if windows.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(crate::error::config("search windows must be finite and non-negative"));
        }
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return Err(crate::error::config("search decay must lie in (0, 1)"));
        }
        Ok(())
    }

    /// Windows of round `k`, shrunk by `decay^k`.
    pub fn round(&self, k: usize) -> SearchBounds {
        self.scaled(self.decay.powi(k as i32))
    }

    pub fn scaled(&self, s: f64) -> SearchBounds {
        SearchBounds {
            translation: self.translation * s,
            rotation: self.rotation * s,
            log_scale: self.log_scale * s,
            shear: self.shear * s,
            decay: self.decay,
        }
    }
}

/// Linear part written as `R(theta) * [[sx, sx*h], [0, sy]]`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct LinearParams {
    theta: f64,
    log_sx: f64,
    log_sy: f64,
    shear: f64,
}

impl LinearParams {
    fn decompose(m: &[[f64; 2]; 2]) -> Option<Self> {
        let [[a, b], [c, d]] = *m;
        let sx = a.hypot(c);
        let det = a * d - b * c;
        if !(sx > 0.0 && det > 0.0) {
            return None;
        }
        let theta = c.atan2(a);
        let (s, co) = theta.sin_cos();
        // R^-1 applied to the second column
        let u = co * b + s * d;
        let sy = -s * b + co * d;
        Some(Self {
            theta,
            log_sx: sx.ln(),
            log_sy: sy.ln(),
            shear: u / sx,
        })
    }

    fn compose(&self) -> [[f64; 2]; 2] {
        let (s, c) = self.theta.sin_cos();
        let sx = self.log_sx.exp();
        let sy = self.log_sy.exp();
        let u = sx * self.shear;
        [[c * sx, c * u - s * sy], [s * sx, s * u + c * sy]]
    }
}

const MAX_REDRAWS: usize = 10;

/// One random perturbation of `best` within `windows`: the anchor's
/// displacement, rotation, both log-scales and shear each move uniformly
/// within their window. Linear changes act about `anchor`. Draws violating
/// `range` are redrawn up to ten times before giving up.
pub fn perturb(
    best: &AffineMap,
    anchor: [f64; 2],
    windows: &SearchBounds,
    range: DetRange,
    rng: &mut impl Rng,
) -> Option<AffineMap> {
    let base = LinearParams::decompose(&best.linear());
    let [bx, by] = best.apply(anchor[0], anchor[1]);
    let disp = [bx - anchor[0], by - anchor[1]];
    let mut draw = || -> f64 { rng.gen_range(-1.0..=1.0) };
    for _ in 0..=MAX_REDRAWS {
        let linear = match base {
            Some(p) => LinearParams {
                theta: p.theta + windows.rotation * draw(),
                log_sx: p.log_sx + windows.log_scale * draw(),
                log_sy: p.log_sy + windows.log_scale * draw(),
                shear: p.shear + windows.shear * draw(),
            }
            .compose(),
            None => best.linear(),
        };
        let d = [
            disp[0] + windows.translation * draw(),
            disp[1] + windows.translation * draw(),
        ];
        let map = AffineMap::about(linear, anchor, d);
        if map.is_valid(range) {
            return Some(map);
        }
    }
    None
}

/// Center-biased random search around a fixed `best`: round `k` perturbs
/// it within the windows shrunk by `decay^k`. Rounds whose draws all
/// violate `range` are skipped.
pub fn random_search(
    best: &AffineMap,
    anchor: [f64; 2],
    bounds: &SearchBounds,
    rounds: usize,
    range: DetRange,
    rng: &mut impl Rng,
) -> Vec<LabelCandidate> {
    (0..rounds)
        .filter_map(|k| perturb(best, anchor, &bounds.round(k), range, rng))
        .map(|map| LabelCandidate {
            map,
            origin: CandidateOrigin::RandomSearch,
        })
        .collect()
}

/// Incumbent marker plus the current label of one random pixel from every
/// adjacent segment.
pub fn propagate(
    segment: usize,
    seg: &SegmentMap,
    graph: &SegmentGraph,
    field: &AffineField,
    rng: &mut impl Rng,
) -> Vec<LabelCandidate> {
    let mut out = vec![LabelCandidate::incumbent()];
    for &nb in &graph.neighbors[segment] {
        let px = seg.pixels(nb);
        let i = px[rng.gen_range(0..px.len())];
        out.push(LabelCandidate {
            map: field.maps()[i],
            origin: CandidateOrigin::Propagation,
        });
    }
    out
}

/// Coupling of candidate `t` to the previous continuous label, using the
/// moment factorization `sum_j v_ij j j^T = M`:
/// `mu ||t - l||_F^2 + lambda tr((t - l) M (t - l)^T)`.
pub fn coupling_cost(t: &AffineMap, l_prev: &AffineMap, m: &[[f64; 3]; 3], mu: f64, lambda: f64) -> f64 {
    let d = t.sub(l_prev);
    mu * d.frobenius_sq() + lambda * (quad3(m, &d.rows[0]) + quad3(m, &d.rows[1]))
}

/// Source descriptors and target features of one pyramid level.
#[derive(Debug, Clone)]
pub struct MatchingLevel {
    width: usize,
    height: usize,
    src_desc: Vec<f32>,
    tgt: FeatureMap,
    pattern: SamplingPattern,
    tau: f32,
}

impl MatchingLevel {
    pub fn new(src: &FeatureMap, tgt: FeatureMap, pattern: SamplingPattern, tau: f64) -> Result<Self> {
        if src.dim != tgt.dim {
            return Err(invalid("source and target feature dimensions differ"));
        }
        let l = pattern.len();
        let identity = pattern.transformed(&AffineMap::IDENTITY);
        let mut src_desc = vec![0.0f32; src.width * src.height * l];
        for (i, out) in src_desc.chunks_exact_mut(l).enumerate() {
            identity.descriptor_into(src, (i % src.width) as f64, (i / src.width) as f64, out);
        }
        Ok(Self {
            width: src.width,
            height: src.height,
            src_desc,
            tgt,
            pattern,
            tau: tau as f32,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn tau(&self) -> f64 {
        self.tau as f64
    }

    fn src(&self, i: usize) -> &[f32] {
        let l = self.pattern.len();
        &self.src_desc[i * l..(i + 1) * l]
    }

    /// Raw truncated costs of one shared label over `rect`.
    pub fn raw_costs(&self, rect: Rect, t: &AffineMap) -> Plane {
        let tp = self.pattern.transformed(t);
        self.raw_costs_with(rect, |_| t, |_| &tp)
    }

    /// Raw costs where every pixel of `rect` uses its own label in `field`.
    pub fn raw_costs_field(&self, rect: Rect, field: &AffineField) -> Plane {
        let mut data = Vec::with_capacity(rect.width * rect.height);
        for y in rect.y..rect.y + rect.height {
            for x in rect.x..rect.x + rect.width {
                let t = field.get(x, y);
                let tp = self.pattern.transformed(t);
                data.push(self.cost_at(x, y, t, &tp));
            }
        }
        Plane::new(rect.width, rect.height, data).unwrap()
    }

    fn raw_costs_with<'a>(
        &self,
        rect: Rect,
        map: impl Fn(usize) -> &'a AffineMap,
        pat: impl Fn(usize) -> &'a TransformedPattern,
    ) -> Plane {
        let mut data = Vec::with_capacity(rect.width * rect.height);
        for y in rect.y..rect.y + rect.height {
            for x in rect.x..rect.x + rect.width {
                let i = y * self.width + x;
                data.push(self.cost_at(x, y, map(i), pat(i)));
            }
        }
        Plane::new(rect.width, rect.height, data).unwrap()
    }

    #[inline]
    pub(crate) fn cost_at(&self, x: usize, y: usize, t: &AffineMap, tp: &TransformedPattern) -> f64 {
        let [qx, qy] = t.apply(x as f64, y as f64);
        // a target point off the image has no evidence; clamped border
        // streaks would otherwise produce spurious partial matches
        if !(qx >= 0.0 && qy >= 0.0 && qx <= (self.tgt.width - 1) as f64 && qy <= (self.tgt.height - 1) as f64) {
            return self.tau as f64;
        }
        let i = y * self.width + x;
        tp.truncated_cost(&self.tgt, qx, qy, self.src(i), self.tau) as f64
    }
}

/// Raw matching costs of label `t` over `rect`: the source descriptor at
/// each pixel `j` against the target descriptor at `t j` with transformed
/// sampling offsets.
pub fn raw_cost_map(
    src: &FeatureMap,
    tgt: &FeatureMap,
    rect: Rect,
    t: &AffineMap,
    pat: &SamplingPattern,
    tau: f64,
) -> Result<Plane> {
    if rect.x + rect.width > src.width || rect.y + rect.height > src.height {
        return Err(invalid("region exceeds the grid"));
    }
    Ok(MatchingLevel::new(src, tgt.clone(), pat.clone(), tau)?.raw_costs(rect, t))
}

/// Guided-filter aggregation of raw costs given over `dilated`, cropped to
/// `region`. `guide` is the full-level grayscale guide.
pub fn aggregate_costs(
    raw: &Plane,
    guide: &Plane,
    dilated: Rect,
    region: Rect,
    params: GuidedFilterParams,
) -> Result<Plane> {
    if raw.width != dilated.width || raw.height != dilated.height {
        return Err(invalid("raw costs do not cover the dilated region"));
    }
    if region.x < dilated.x
        || region.y < dilated.y
        || region.x + region.width > dilated.x + dilated.width
        || region.y + region.height > dilated.y + dilated.height
    {
        return Err(invalid("region lies outside the dilated region"));
    }
    let filter = GuidedFilter::new(guide.crop(dilated), params);
    let agg = filter.filter(raw)?;
    Ok(agg.crop(Rect {
        x: region.x - dilated.x,
        y: region.y - dilated.y,
        width: region.width,
        height: region.height,
    }))
}

/// Per-pixel best surrogate objective `C + G` and its data part.
#[derive(Debug, Clone)]
pub struct CostBuffer {
    pub total: Vec<f64>,
    pub data: Vec<f64>,
}

impl CostBuffer {
    pub fn new(n: usize) -> Self {
        Self {
            total: vec![f64::INFINITY; n],
            data: vec![f64::INFINITY; n],
        }
    }
}

/// Everything a sweep reads but never writes.
pub struct SweepContext<'a> {
    pub level: &'a MatchingLevel,
    /// Grayscale guide of the source at this level.
    pub guide: &'a Plane,
    pub params: GuidedFilterParams,
    pub regularizer: &'a Regularizer,
    /// Previous continuous field `L^{t-1}`, in the regularizer's frame.
    pub prev_local: &'a AffineField,
    pub mu: f64,
    pub lambda: f64,
    pub bounds: SearchBounds,
    pub rounds: usize,
    /// Random draws per search round.
    pub samples: usize,
    pub det_range: DetRange,
    /// Receives every evaluation and finished segment, for auditing.
    pub events: Option<&'a dyn Fn(&SweepContext<'_>, &SweepEvent<'_>)>,
}

/// What a sweep reports to [`SweepContext::events`].
pub enum SweepEvent<'a> {
    /// One candidate evaluation: the objective of every segment pixel (in
    /// region order) before and after the call.
    Evaluated {
        segment: usize,
        before: &'a [f64],
        after: &'a [f64],
    },
    /// A segment is done. `initial` holds its pixels' labels and objectives
    /// before any candidate was tried, `field` the labels afterwards.
    Segment {
        region: &'a SegmentRegion,
        initial_labels: &'a [AffineMap],
        initial: &'a [f64],
        current: &'a [f64],
        field: &'a AffineField,
    },
}

impl SweepContext<'_> {
    /// Coupling of a frame-coordinate label at pixel `i` against the
    /// previous continuous label there.
    #[inline]
    pub fn coupling_at(&self, i: usize, t_local: &AffineMap) -> f64 {
        let d = t_local.sub(&self.prev_local.maps()[i]);
        let q = self.regularizer.coupling_matrix(i, self.mu, self.lambda);
        quad3(&q, &d.rows[0]) + quad3(&q, &d.rows[1])
    }
}

/// Pixels per segment on which random-search draws are pre-screened.
const SCREEN_PROBES: usize = 16;

/// Filtering state for one segment: its pixels and the guide restricted to
/// the segment's dilated bounding box.
pub struct SegmentRegion {
    pub segment: usize,
    pub dilated: Rect,
    filter: GuidedFilter,
    /// (global index, index inside `dilated`) of every segment pixel.
    pixels: Vec<(usize, usize)>,
    /// Evenly spread subset of segment pixels used to screen search draws.
    probes: Vec<(usize, usize)>,
}

impl SegmentRegion {
    pub fn new(ctx: &SweepContext<'_>, seg: &SegmentMap, segment: usize) -> Self {
        let w = ctx.level.width();
        let dilated = seg
            .bbox(segment)
            .dilate(ctx.params.radius, w, ctx.level.height());
        let filter = GuidedFilter::new(ctx.guide.crop(dilated), ctx.params);
        let pixels = seg
            .pixels(segment)
            .iter()
            .map(|&i| {
                let (x, y) = (i % w, i / w);
                (i, (y - dilated.y) * dilated.width + (x - dilated.x))
            })
            .collect();
        let step = (seg.pixels(segment).len() / SCREEN_PROBES).max(1);
        let probes = seg
            .pixels(segment)
            .iter()
            .skip(step / 2)
            .step_by(step)
            .map(|&i| (i % w, i / w))
            .collect();
        Self {
            segment,
            dilated,
            filter,
            pixels,
            probes,
        }
    }

    /// Mean raw cost of `t` over the probe pixels.
    pub fn screen(&self, ctx: &SweepContext<'_>, t: &AffineMap) -> f64 {
        let tp = ctx.level.pattern.transformed(t);
        let sum: f64 = self.probes.iter().map(|&(x, y)| ctx.level.cost_at(x, y, t, &tp)).sum();
        sum / self.probes.len() as f64
    }

    pub fn pixel_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.pixels.iter().map(|p| p.0)
    }

    /// Aggregated cost of one shared label at every segment pixel.
    pub fn aggregated(&self, ctx: &SweepContext<'_>, t: &AffineMap) -> Vec<f64> {
        let raw = ctx.level.raw_costs(self.dilated, t);
        let agg = self.filter.filter(&raw).expect("region sizes match");
        self.pixels.iter().map(|&(_, li)| agg.data[li]).collect()
    }

    /// Aggregated cost of the current, spatially varying labels.
    pub fn aggregated_field(&self, ctx: &SweepContext<'_>, field: &AffineField) -> Vec<f64> {
        let raw = ctx.level.raw_costs_field(self.dilated, field);
        let agg = self.filter.filter(&raw).expect("region sizes match");
        self.pixels.iter().map(|&(_, li)| agg.data[li]).collect()
    }

    /// Coupling cost of `t` at every segment pixel.
    pub fn coupling(&self, ctx: &SweepContext<'_>, t: &AffineMap) -> Vec<f64> {
        let t_local = t.to_frame(ctx.regularizer.frame());
        self.pixels.iter().map(|&(i, _)| ctx.coupling_at(i, &t_local)).collect()
    }

    /// Seeds the buffer with each pixel's incumbent objective.
    pub fn init_buffer(&self, ctx: &SweepContext<'_>, field: &AffineField, buffer: &mut CostBuffer) {
        let data = self.aggregated_field(ctx, field);
        let frame = ctx.regularizer.frame();
        for (k, &(i, _)) in self.pixels.iter().enumerate() {
            let g = ctx.coupling_at(i, &field.maps()[i].to_frame(frame));
            buffer.data[i] = data[k];
            buffer.total[i] = data[k] + g;
        }
    }
}

/// Outcome of evaluating a candidate list on one segment.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EvalStats {
    pub candidates: usize,
    pub updates: usize,
    /// Pixels whose objective rose during the call; always zero when the
    /// incumbent is in the candidate set.
    pub violations: usize,
}

/// Winner-takes-all over `candidates` for every pixel of the segment.
/// Incumbent markers are represented by the buffer; a challenger replaces a
/// pixel's label only when strictly cheaper, so ties keep the incumbent and
/// then the earlier candidate.
pub fn evaluate_candidates(
    ctx: &SweepContext<'_>,
    region: &SegmentRegion,
    candidates: &[LabelCandidate],
    field: &mut AffineField,
    buffer: &mut CostBuffer,
) -> Result<EvalStats> {
    evaluate_scored(ctx, region, candidates, field, buffer).map(|r| r.0)
}

/// [`evaluate_candidates`] that also returns, per candidate, its mean
/// objective over the segment (NaN for incumbent markers).
pub fn evaluate_scored(
    ctx: &SweepContext<'_>,
    region: &SegmentRegion,
    candidates: &[LabelCandidate],
    field: &mut AffineField,
    buffer: &mut CostBuffer,
) -> Result<(EvalStats, Vec<f64>)> {
    if candidates.is_empty() {
        return Err(invalid("empty candidate list"));
    }
    let before: Vec<f64> = region.pixel_indices().map(|i| buffer.total[i]).collect();
    let mut stats = EvalStats::default();
    let mut scores = Vec::with_capacity(candidates.len());
    for cand in candidates {
        if cand.origin == CandidateOrigin::Incumbent {
            scores.push(f64::NAN);
            continue;
        }
        stats.candidates += 1;
        let data = region.aggregated(ctx, &cand.map);
        let coupling = region.coupling(ctx, &cand.map);
        let mut sum = 0.0;
        for (k, i) in region.pixel_indices().enumerate() {
            let total = data[k] + coupling[k];
            sum += total;
            if total < buffer.total[i] {
                buffer.total[i] = total;
                buffer.data[i] = data[k];
                field.maps_mut()[i] = cand.map;
                stats.updates += 1;
            }
        }
        scores.push(sum / data.len() as f64);
    }
    stats.violations = region
        .pixel_indices()
        .zip(&before)
        .filter(|&(i, &b)| buffer.total[i] > b)
        .count();
    if let Some(hook) = ctx.events {
        let after: Vec<f64> = region.pixel_indices().map(|i| buffer.total[i]).collect();
        hook(ctx, &SweepEvent::Evaluated { segment: region.segment, before: &before, after: &after });
    }
    Ok((stats, scores))
}

/// Aggregate outcome of one sweep over all segments.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SweepStats {
    pub candidates: usize,
    pub updates: usize,
    pub violations: usize,
    /// Mean aggregated data cost of the final labels.
    pub mean_data_cost: f64,
    /// Mean surrogate objective of the final labels.
    pub mean_objective: f64,
}

/// One propagation + random-search pass over every segment in `order`.
pub fn sweep(
    ctx: &SweepContext<'_>,
    seg: &SegmentMap,
    graph: &SegmentGraph,
    order: &[usize],
    field: &mut AffineField,
    rng: &mut impl Rng,
) -> Result<SweepStats> {
    let n = field.maps().len();
    let mut buffer = CostBuffer::new(n);
    let mut stats = SweepStats::default();
    let add = |s: EvalStats, stats: &mut SweepStats| {
        stats.candidates += s.candidates;
        stats.updates += s.updates;
        stats.violations += s.violations;
    };
    for &k in order {
        let region = SegmentRegion::new(ctx, seg, k);
        region.init_buffer(ctx, field, &mut buffer);
        let initial = ctx.events.map(|_| {
            let labels: Vec<AffineMap> = region.pixel_indices().map(|i| field.maps()[i]).collect();
            let totals: Vec<f64> = region.pixel_indices().map(|i| buffer.total[i]).collect();
            (labels, totals)
        });

        let prop = propagate(k, seg, graph, field, rng);
        add(evaluate_candidates(ctx, &region, &prop, field, &mut buffer)?, &mut stats);

        // Random search re-centres on a draw whenever it beats the current
        // centre on the segment's mean objective.
        let px = seg.pixels(k);
        let mut center = field.maps()[px[rng.gen_range(0..px.len())]];
        let anchor = seg.centroid(k);
        let first = [LabelCandidate::incumbent(), LabelCandidate { map: center, origin: CandidateOrigin::RandomSearch }];
        let (s, scores) = evaluate_scored(ctx, &region, &first, field, &mut buffer)?;
        add(s, &mut stats);
        let mut center_score = scores[1];
        for round in 0..ctx.rounds {
            let windows = ctx.bounds.round(round);
            // several draws compete on a cheap unaggregated probe; only the
            // winner is fully evaluated
            let mut pick: Option<(f64, AffineMap)> = None;
            for _ in 0..ctx.samples {
                if let Some(map) = perturb(&center, anchor, &windows, ctx.det_range, rng) {
                    let score = if ctx.samples > 1 { region.screen(ctx, &map) } else { 0.0 };
                    if pick.is_none_or(|(best, _)| score < best) {
                        pick = Some((score, map));
                    }
                }
            }
            let Some((_, map)) = pick else { continue };
            let cands = [LabelCandidate::incumbent(), LabelCandidate { map, origin: CandidateOrigin::RandomSearch }];
            let (s, scores) = evaluate_scored(ctx, &region, &cands, field, &mut buffer)?;
            add(s, &mut stats);
            for (c, &score) in cands.iter().zip(&scores) {
                if score < center_score {
                    center = c.map;
                    center_score = score;
                }
            }
        }
        if let (Some(hook), Some((labels, totals))) = (ctx.events, &initial) {
            let current: Vec<f64> = region.pixel_indices().map(|i| buffer.total[i]).collect();
            hook(
                ctx,
                &SweepEvent::Segment { region: &region, initial_labels: labels, initial: totals, current: &current, field },
            );
        }
    }
    let inv = 1.0 / n as f64;
    stats.mean_data_cost = buffer.data.iter().sum::<f64>() * inv;
    stats.mean_objective = buffer.total.iter().sum::<f64>() * inv;
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid_segments(w: usize, h: usize, gx: usize, gy: usize) -> SegmentMap {
        let labels = (0..w * h)
            .map(|i| ((i / w) * gy / h) * gx + (i % w) * gx / w)
            .collect();
        SegmentMap::from_labels(w, h, labels).unwrap()
    }

    #[test]
    fn decomposition_round_trip() {
        let m = [[1.1, 0.3], [-0.25, 0.8]];
        let p = LinearParams::decompose(&m).unwrap();
        let back = p.compose();
        for r in 0..2 {
            for c in 0..2 {
                assert!((back[r][c] - m[r][c]).abs() < 1e-12);
            }
        }
        assert!(LinearParams::decompose(&[[1.0, 0.0], [0.0, -1.0]]).is_none());
    }

    #[test]
    fn window_decay() {
        let b = SearchBounds { translation: 32.0, rotation: 0.5, log_scale: 0.2, shear: 0.1, decay: 0.5 };
        let t: Vec<f64> = (0..4).map(|k| b.round(k).translation).collect();
        assert_eq!(t, vec![32.0, 16.0, 8.0, 4.0]);
    }

    #[test]
    fn zero_bounds_reproduce_best() {
        let best = AffineMap::new([[1.1, 0.2, 3.0], [-0.1, 0.9, -2.0]]);
        let zero = SearchBounds { translation: 0.0, rotation: 0.0, log_scale: 0.0, shear: 0.0, decay: 0.5 };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = random_search(&best, [10.0, 20.0], &zero, 3, DetRange::default(), &mut rng);
        assert_eq!(c.len(), 3);
        for cand in c {
            assert_eq!(cand.origin, CandidateOrigin::RandomSearch);
            for (a, b) in cand.map.rows.iter().flatten().zip(best.rows.iter().flatten()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn random_search_respects_validity_and_windows() {
        let best = AffineMap::IDENTITY;
        let b = SearchBounds { translation: 8.0, rotation: 0.3, log_scale: 2f64.ln(), shear: 0.25, decay: 0.5 };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let range = DetRange::default();
        for _ in 0..50 {
            let c = random_search(&best, [5.0, 5.0], &b, 5, range, &mut rng);
            for (k, cand) in c.iter().enumerate() {
                assert!(cand.map.is_valid(range));
                let [x, y] = cand.map.apply(5.0, 5.0);
                let w = b.round(k).translation;
                assert!((x - 5.0).abs() <= w + 1e-9 && (y - 5.0).abs() <= w + 1e-9);
            }
        }
    }

    #[test]
    fn propagation_counts() {
        let seg = grid_segments(12, 12, 3, 3);
        let graph = crate::slic::adjacency(&seg);
        let field = AffineField::identity(12, 12);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = propagate(4, &seg, &graph, &field, &mut rng);
        assert_eq!(c.iter().filter(|c| c.origin == CandidateOrigin::Propagation).count(), 4);
        assert_eq!(c[0].origin, CandidateOrigin::Incumbent);

        let lone = SegmentMap::from_labels(4, 4, vec![0; 16]).unwrap();
        let g = crate::slic::adjacency(&lone);
        let c = propagate(0, &lone, &g, &AffineField::identity(4, 4), &mut rng);
        assert_eq!(c, vec![LabelCandidate::incumbent()]);
    }

    #[test]
    fn coupling_examples() {
        let l = AffineMap::new([[1.0, 0.1, 2.0], [0.0, 0.9, 1.0]]);
        let m = [[30.0, 5.0, 5.0], [5.0, 28.0, 4.0], [5.0, 4.0, 1.0]];
        assert_eq!(coupling_cost(&l, &l, &m, 0.1, 0.01), 0.0);
        let t = AffineMap::new([[1.0, 0.1, 3.0], [0.0, 0.9, 1.0]]);
        assert!((coupling_cost(&t, &l, &m, 0.1, 0.01) - 0.11).abs() < 1e-12);
    }

    #[test]
    fn evaluate_rejects_empty_list() {
        let fm = FeatureMap { width: 8, height: 8, dim: 1, data: vec![0.5; 64] };
        let pat = SamplingPattern::random(4, 2.0, 0.5, 0).unwrap();
        let level = MatchingLevel::new(&fm, fm.clone(), pat, 1.0).unwrap();
        let guide = Plane::filled(8, 8, 0.5);
        let params = GuidedFilterParams { radius: 2, eps: 0.01 };
        let reg = Regularizer::new(&crate::image::Image::from_plane(&guide), params, Default::default());
        let prev = AffineField::identity(8, 8);
        let ctx = SweepContext {
            level: &level,
            guide: &guide,
            params,
            regularizer: &reg,
            prev_local: &prev,
            mu: 0.1,
            lambda: 0.01,
            bounds: SearchBounds { translation: 1.0, rotation: 0.1, log_scale: 0.1, shear: 0.1, decay: 0.5 },
            rounds: 2,
            samples: 1,
            det_range: DetRange::default(),
            events: None,
        };
        let seg = SegmentMap::from_labels(8, 8, vec![0; 64]).unwrap();
        let region = SegmentRegion::new(&ctx, &seg, 0);
        let mut field = AffineField::identity(8, 8);
        let mut buffer = CostBuffer::new(64);
        region.init_buffer(&ctx, &field, &mut buffer);
        assert!(evaluate_candidates(&ctx, &region, &[], &mut field, &mut buffer).is_err());
        let stats = evaluate_candidates(&ctx, &region, &[LabelCandidate::incumbent()], &mut field, &mut buffer).unwrap();
        assert_eq!(stats.updates, 0);
        assert_eq!(field, AffineField::identity(8, 8));
    }
}
