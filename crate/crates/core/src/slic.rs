//! SLIC superpixels and their adjacency graph.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};
use crate::image::{Image, Rect};

const SLIC_ITERATIONS: usize = 10;

/// Segment count for an image: 500 at 640x480, growing with the square root
/// of the pixel count, clamped to `[50, 2000]`.
pub fn segment_count_for(width: usize, height: usize) -> usize {
    let k = 500.0 * ((width * height) as f64 / (640.0 * 480.0)).sqrt();
    (k.round() as usize).clamp(50, 2000)
}

/// A partition of the pixel grid into 4-connected segments.
#[derive(Debug, Clone)]
pub struct SegmentMap {
    pub width: usize,
    pub height: usize,
    labels: Vec<usize>,
    pixels: Vec<Vec<usize>>,
    bboxes: Vec<Rect>,
    centroids: Vec<[f64; 2]>,
}

impl SegmentMap {
    /// Builds a map from per-pixel ids; ids must be dense in `[0, K)`.
    pub fn from_labels(width: usize, height: usize, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != width * height || labels.is_empty() {
            return Err(invalid("label buffer does not match the grid"));
        }
        let k = labels.iter().max().unwrap() + 1;
        let mut pixels = vec![Vec::new(); k];
        for (i, &l) in labels.iter().enumerate() {
            pixels[l].push(i);
        }
        if pixels.iter().any(|p| p.is_empty()) {
            return Err(invalid("segment ids are not dense"));
        }
        let mut bboxes = Vec::with_capacity(k);
        let mut centroids = Vec::with_capacity(k);
        for px in &pixels {
            let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
            let (mut sx, mut sy) = (0.0, 0.0);
            for &i in px {
                let (x, y) = (i % width, i / width);
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
                sx += x as f64;
                sy += y as f64;
            }
            bboxes.push(Rect {
                x: x0,
                y: y0,
                width: x1 - x0 + 1,
                height: y1 - y0 + 1,
            });
            let n = px.len() as f64;
            centroids.push([sx / n, sy / n]);
        }
        Ok(Self {
            width,
            height,
            labels,
            pixels,
            bboxes,
            centroids,
        })
    }

    pub fn count(&self) -> usize {
        self.pixels.len()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    #[inline]
    pub fn label(&self, x: usize, y: usize) -> usize {
        self.labels[y * self.width + x]
    }

    /// Linear pixel indices of segment `k`, in raster order.
    pub fn pixels(&self, k: usize) -> &[usize] {
        &self.pixels[k]
    }

    pub fn bbox(&self, k: usize) -> Rect {
        self.bboxes[k]
    }

    pub fn centroid(&self, k: usize) -> [f64; 2] {
        self.centroids[k]
    }

    /// Segments in raster order of their centroids, bucketing rows by the
    /// mean segment side so a row of superpixels is visited left to right.
    pub fn scan_order(&self) -> Vec<usize> {
        let side = ((self.width * self.height) as f64 / self.count() as f64).sqrt().max(1.0);
        let mut order: Vec<usize> = (0..self.count()).collect();
        order.sort_by(|&a, &b| {
            let ra = (self.centroids[a][1] / side).floor();
            let rb = (self.centroids[b][1] / side).floor();
            ra.total_cmp(&rb)
                .then(self.centroids[a][0].total_cmp(&self.centroids[b][0]))
                .then(a.cmp(&b))
        });
        order
    }
}

/// Symmetric, irreflexive segment adjacency with sorted neighbour lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentGraph {
    pub neighbors: Vec<Vec<usize>>,
}

impl SegmentGraph {
    pub fn edge_count(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum::<usize>() / 2
    }
}

/// Two segments are adjacent when some pair of 4-neighbouring pixels straddles them.
pub fn adjacency(seg: &SegmentMap) -> SegmentGraph {
    let mut neighbors = vec![Vec::new(); seg.count()];
    let (w, h) = (seg.width, seg.height);
    let mut link = |a: usize, b: usize| {
        if a != b {
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
    };
    for y in 0..h {
        for x in 0..w {
            let l = seg.label(x, y);
            if x + 1 < w {
                link(l, seg.label(x + 1, y));
            }
            if y + 1 < h {
                link(l, seg.label(x, y + 1));
            }
        }
    }
    for n in &mut neighbors {
        n.sort_unstable();
        n.dedup();
    }
    SegmentGraph { neighbors }
}

/// SLIC clustering in CIELAB + position space followed by connectivity
/// enforcement. Deterministic for a fixed `seed`, which only jitters the
/// initial grid.
pub fn slic_segment(img: &Image, k: usize, compactness: f64, seed: u64) -> Result<SegmentMap> {
    let (w, h) = (img.width(), img.height());
    let n = w * h;
    if k == 0 || k > n {
        return Err(invalid(format!("segment count {k} not in [1, {n}]")));
    }
    let lab = to_lab(img);

    let nx = ((k as f64 * w as f64 / h as f64).sqrt().round() as usize).clamp(1, w);
    let ny = ((k as f64 / nx as f64).round() as usize).clamp(1, h);
    let cell_w = w as f64 / nx as f64;
    let cell_h = h as f64 / ny as f64;
    let step = (n as f64 / (nx * ny) as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // centre = [l, a, b, x, y]
    let mut centers: Vec<[f64; 5]> = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let jitter = 0.125 * step;
            let cx = ((i as f64 + 0.5) * cell_w + rng.gen_range(-jitter..=jitter)).clamp(0.0, (w - 1) as f64);
            let cy = ((j as f64 + 0.5) * cell_h + rng.gen_range(-jitter..=jitter)).clamp(0.0, (h - 1) as f64);
            let (px, py) = lowest_gradient(&lab, w, h, cx.round() as usize, cy.round() as usize);
            let c = lab[py * w + px];
            centers.push([c[0], c[1], c[2], px as f64, py as f64]);
        }
    }

    let spatial = (compactness / step).powi(2);
    let radius = step.ceil() as isize;
    let mut assign = vec![0usize; n];
    let mut dist = vec![f64::INFINITY; n];
    for _ in 0..SLIC_ITERATIONS {
        dist.iter_mut().for_each(|d| *d = f64::INFINITY);
        for (ci, c) in centers.iter().enumerate() {
            let (cx, cy) = (c[3].round() as isize, c[4].round() as isize);
            let y0 = (cy - radius).max(0) as usize;
            let y1 = ((cy + radius + 1).min(h as isize)) as usize;
            let x0 = (cx - radius).max(0) as usize;
            let x1 = ((cx + radius + 1).min(w as isize)) as usize;
            for y in y0..y1 {
                for x in x0..x1 {
                    let i = y * w + x;
                    let p = lab[i];
                    let dc = (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) + (p[2] - c[2]).powi(2);
                    let ds = (x as f64 - c[3]).powi(2) + (y as f64 - c[4]).powi(2);
                    let d = dc + ds * spatial;
                    if d < dist[i] {
                        dist[i] = d;
                        assign[i] = ci;
                    }
                }
            }
        }
        // pixels beyond every search window fall back to the nearest centre
        for i in 0..n {
            if dist[i].is_infinite() {
                let (x, y) = ((i % w) as f64, (i / w) as f64);
                assign[i] = (0..centers.len())
                    .min_by(|&a, &b| {
                        let da = (centers[a][3] - x).powi(2) + (centers[a][4] - y).powi(2);
                        let db = (centers[b][3] - x).powi(2) + (centers[b][4] - y).powi(2);
                        da.total_cmp(&db)
                    })
                    .unwrap();
            }
        }
        let mut sums = vec![[0.0f64; 6]; centers.len()];
        for i in 0..n {
            let s = &mut sums[assign[i]];
            let p = lab[i];
            s[0] += p[0];
            s[1] += p[1];
            s[2] += p[2];
            s[3] += (i % w) as f64;
            s[4] += (i / w) as f64;
            s[5] += 1.0;
        }
        for (c, s) in centers.iter_mut().zip(&sums) {
            if s[5] > 0.0 {
                for d in 0..5 {
                    c[d] = s[d] / s[5];
                }
            }
        }
    }

    let labels = enforce_connectivity(&assign, w, h);
    SegmentMap::from_labels(w, h, labels)
}

/// Keeps the largest 4-connected component of every cluster; the remaining
/// orphan components join the largest adjacent kept segment. Ids are then
/// renumbered in raster order of first appearance.
fn enforce_connectivity(assign: &[usize], w: usize, h: usize) -> Vec<usize> {
    let n = w * h;
    let mut comp = vec![usize::MAX; n];
    let mut comp_cluster = Vec::new();
    let mut comp_size = Vec::new();
    let mut stack = Vec::new();
    for start in 0..n {
        if comp[start] != usize::MAX {
            continue;
        }
        let id = comp_cluster.len();
        let cluster = assign[start];
        comp[start] = id;
        stack.push(start);
        let mut size = 0;
        while let Some(i) = stack.pop() {
            size += 1;
            for j in neighbors4(i, w, h) {
                if comp[j] == usize::MAX && assign[j] == cluster {
                    comp[j] = id;
                    stack.push(j);
                }
            }
        }
        comp_cluster.push(cluster);
        comp_size.push(size);
    }

    let clusters = comp_cluster.iter().max().map_or(0, |m| m + 1);
    let mut largest = vec![usize::MAX; clusters];
    for (c, &cl) in comp_cluster.iter().enumerate() {
        if largest[cl] == usize::MAX || comp_size[c] > comp_size[largest[cl]] {
            largest[cl] = c;
        }
    }
    // owner[c]: the kept component that component c ends up in
    let mut owner: Vec<Option<usize>> = (0..comp_cluster.len())
        .map(|c| (largest[comp_cluster[c]] == c).then_some(c))
        .collect();
    let mut final_size: Vec<usize> = (0..comp_cluster.len())
        .map(|c| if owner[c].is_some() { comp_size[c] } else { 0 })
        .collect();

    // component pixel lists for the orphan pass
    let mut members = vec![Vec::new(); comp_cluster.len()];
    for i in 0..n {
        members[comp[i]].push(i);
    }
    loop {
        let mut changed = false;
        let mut pending = false;
        for c in 0..comp_cluster.len() {
            if owner[c].is_some() {
                continue;
            }
            let mut best: Option<usize> = None;
            for &i in &members[c] {
                for j in neighbors4(i, w, h) {
                    if let Some(o) = owner[comp[j]] {
                        if o != c
                            && best.map_or(true, |b| {
                                final_size[o] > final_size[b] || (final_size[o] == final_size[b] && o < b)
                            })
                        {
                            best = Some(o);
                        }
                    }
                }
            }
            match best {
                Some(o) => {
                    owner[c] = Some(o);
                    final_size[o] += comp_size[c];
                    changed = true;
                }
                None => pending = true,
            }
        }
        if !pending || !changed {
            break;
        }
    }

    let mut remap = vec![usize::MAX; comp_cluster.len()];
    let mut next = 0;
    let mut labels = vec![0; n];
    for i in 0..n {
        let o = owner[comp[i]].unwrap_or(comp[i]);
        if remap[o] == usize::MAX {
            remap[o] = next;
            next += 1;
        }
        labels[i] = remap[o];
    }
    labels
}

fn neighbors4(i: usize, w: usize, h: usize) -> impl Iterator<Item = usize> {
    let (x, y) = (i % w, i / w);
    let left = (x > 0).then(|| i - 1);
    let right = (x + 1 < w).then(|| i + 1);
    let up = (y > 0).then(|| i - w);
    let down = (y + 1 < h).then(|| i + w);
    [left, right, up, down].into_iter().flatten()
}

fn lowest_gradient(lab: &[[f64; 3]], w: usize, h: usize, cx: usize, cy: usize) -> (usize, usize) {
    let grad = |x: usize, y: usize| {
        let l = |xx: usize, yy: usize| lab[yy * w + xx][0];
        let gx = l((x + 1).min(w - 1), y) - l(x.saturating_sub(1), y);
        let gy = l(x, (y + 1).min(h - 1)) - l(x, y.saturating_sub(1));
        gx * gx + gy * gy
    };
    let mut best = (cx, cy);
    let mut best_g = grad(cx, cy);
    for y in cy.saturating_sub(1)..=(cy + 1).min(h - 1) {
        for x in cx.saturating_sub(1)..=(cx + 1).min(w - 1) {
            let g = grad(x, y);
            if g < best_g {
                best_g = g;
                best = (x, y);
            }
        }
    }
    best
}

fn to_lab(img: &Image) -> Vec<[f64; 3]> {
    let (w, h) = (img.width(), img.height());
    (0..w * h)
        .map(|i| {
            let (x, y) = (i % w, i / w);
            if img.channels() == 1 {
                [100.0 * img.get(x, y, 0), 0.0, 0.0]
            } else {
                srgb_to_lab(img.get(x, y, 0), img.get(x, y, 1), img.get(x, y, 2))
            }
        })
        .collect()
}

fn srgb_to_lab(r: f64, g: f64, b: f64) -> [f64; 3] {
    let lin = |c: f64| {
        if c <= 0.04045 {
            c / 12.92
        } else {
            ((c + 0.055) / 1.055).powf(2.4)
        }
    };
    let (r, g, b) = (lin(r), lin(g), lin(b));
    let x = (0.4124 * r + 0.3576 * g + 0.1805 * b) / 0.95047;
    let y = 0.2126 * r + 0.7152 * g + 0.0722 * b;
    let z = (0.0193 * r + 0.1192 * g + 0.9505 * b) / 1.08883;
    let f = |t: f64| {
        if t > 0.008856 {
            t.cbrt()
        } else {
            7.787 * t + 16.0 / 116.0
        }
    };
    let (fx, fy, fz) = (f(x), f(y), f(z));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}
