//! Continuous moving-least-squares regularization of an affine field.
//!
//! For a fixed field `T` the objective
//!
//! ```text
//! sum_i  mu ||L_i - T_i||^2 + lambda sum_j v_ij ||L_i j - T_j j||^2
//! ```
//!
//! separates over pixels and over the two rows of `L_i`. Each row solves the
//! 3x3 system `((mu/lambda) I + M_i) l = (mu/lambda) t_i + sum_j v_ij f(j) j`
//! where `f(j) = T_j,row . j` and `M_i` is the filtered coordinate moment.
//! Both rows share one matrix per pixel.

use crate::eaf::{moment_maps_in, GuidedFilter, GuidedFilterParams, MomentField};
use crate::error::Result;
use crate::image::{AffineField, AffineMap, CoordFrame, Image, Plane};

/// Systems whose 1-norm condition estimate exceeds this fall back to `L_i = T_i`.
pub const MAX_CONDITION: f64 = 1e12;

/// Guide-dependent state shared by every solve on one pyramid level: the
/// filter realizing the regularizer weights, its coordinate moments, and the
/// frame the homogeneous coordinates are expressed in.
#[derive(Debug, Clone)]
pub struct Regularizer {
    filter: GuidedFilter,
    moments: MomentField,
    frame: CoordFrame,
    penalty: Penalty,
}

/// How the coupling `||L_i - T_i||^2` measures a difference of maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Penalty {
    /// Frobenius norm of the 2x3 matrices in frame coordinates.
    #[default]
    Homogeneous,
    /// Frobenius norm of the linear part plus the squared displacement of
    /// pixel `i` itself, i.e. the matrices re-expressed about `i`.
    Anchored,
}

/// Per-pixel normal equations: one shared SPD matrix and two right-hand sides.
#[derive(Debug, Clone)]
pub struct NormalSystem {
    pub matrices: Vec<[[f64; 3]; 3]>,
    pub rhs_x: Vec<[f64; 3]>,
    pub rhs_y: Vec<[f64; 3]>,
}

#[derive(Debug, Clone)]
pub struct ContinuousSolution {
    pub field: AffineField,
    /// Pixels whose system was too ill-conditioned to solve.
    pub fallbacks: usize,
}

impl Regularizer {
    pub fn new(guide: &Image, params: GuidedFilterParams, frame: CoordFrame) -> Self {
        Self::from_filter(GuidedFilter::new(guide.to_gray(), params), frame)
    }

    pub fn from_filter(filter: GuidedFilter, frame: CoordFrame) -> Self {
        let moments = moment_maps_in(&filter, &frame);
        Self {
            filter,
            moments,
            frame,
            penalty: Penalty::Homogeneous,
        }
    }

    pub fn with_penalty(mut self, penalty: Penalty) -> Self {
        self.penalty = penalty;
        self
    }

    pub fn penalty(&self) -> Penalty {
        self.penalty
    }

    /// Matrix `P_i` with `||D||^2 = tr(D P_i D^T)` for the coupling at
    /// pixel `i`, in frame coordinates.
    #[inline]
    pub fn penalty_matrix(&self, i: usize) -> [[f64; 3]; 3] {
        match self.penalty {
            Penalty::Homogeneous => [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            Penalty::Anchored => {
                let w = self.moments.width;
                let [u, v] = self.frame.coords((i % w) as f64, (i / w) as f64);
                [[1.0 + u * u, u * v, u], [u * v, 1.0 + v * v, v], [u, v, 1.0]]
            }
        }
    }

    /// `mu P_i + lambda M_i`: the coupling of a candidate against the
    /// previous continuous label is `tr(D Q_i D^T)`.
    #[inline]
    pub fn coupling_matrix(&self, i: usize, mu: f64, lambda: f64) -> [[f64; 3]; 3] {
        let p = self.penalty_matrix(i);
        let m = self.moments.matrix(i);
        std::array::from_fn(|r| std::array::from_fn(|c| mu * p[r][c] + lambda * m[r][c]))
    }

    pub fn moments(&self) -> &MomentField {
        &self.moments
    }

    pub fn frame(&self) -> &CoordFrame {
        &self.frame
    }

    pub fn filter(&self) -> &GuidedFilter {
        &self.filter
    }

    fn check(&self, field: &AffineField) {
        assert!(
            field.width() == self.moments.width && field.height() == self.moments.height,
            "field size does not match the guide"
        );
    }

    /// Filtered products `V(x f), V(y f), V(f)` for both rows of the field
    /// (already in frame coordinates), plus `V(f^2)` when `squares` is set.
    fn filtered_flows(&self, local: &AffineField, squares: bool) -> FilteredFlows {
        let (w, h) = (local.width(), local.height());
        let n = w * h;
        let mut fx = Vec::with_capacity(n);
        let mut fy = Vec::with_capacity(n);
        let mut coords = Vec::with_capacity(n);
        for (i, m) in local.maps().iter().enumerate() {
            let [u, v] = self.frame.coords((i % w) as f64, (i / w) as f64);
            let [a, b] = m.apply(u, v);
            fx.push(a);
            fy.push(b);
            coords.push([u, v]);
        }
        let run = |f: &dyn Fn(usize) -> f64| {
            let plane = Plane::new(w, h, (0..n).map(f).collect()).unwrap();
            self.filter.filter(&plane).expect("sizes match").data
        };
        let row = |f: &Vec<f64>| -> [Vec<f64>; 3] {
            [
                run(&|i| coords[i][0] * f[i]),
                run(&|i| coords[i][1] * f[i]),
                run(&|i| f[i]),
            ]
        };
        let sq = |f: &Vec<f64>| if squares { run(&|i| f[i] * f[i]) } else { Vec::new() };
        FilteredFlows {
            x: row(&fx),
            y: row(&fy),
            x_sq: sq(&fx),
            y_sq: sq(&fy),
        }
    }

    /// Assembles the per-pixel normal equations for a pixel-frame field.
    pub fn normal_system(&self, field: &AffineField, mu: f64, lambda: f64) -> NormalSystem {
        self.check(field);
        let local = field.to_frame(&self.frame);
        let ratio = mu / lambda;
        let flows = self.filtered_flows(&local, false);
        let n = field.maps().len();
        let mut matrices = Vec::with_capacity(n);
        let mut rhs_x = Vec::with_capacity(n);
        let mut rhs_y = Vec::with_capacity(n);
        for i in 0..n {
            let m = self.moments.matrix(i);
            let p = self.penalty_matrix(i);
            matrices.push(std::array::from_fn(|r| std::array::from_fn(|c| m[r][c] + ratio * p[r][c])));
            let t = local.maps()[i].rows;
            let pt = |row: &[f64; 3], k: usize| (0..3).map(|c| p[k][c] * row[c]).sum::<f64>();
            rhs_x.push(std::array::from_fn(|k| ratio * pt(&t[0], k) + flows.x[k][i]));
            rhs_y.push(std::array::from_fn(|k| ratio * pt(&t[1], k) + flows.y[k][i]));
        }
        NormalSystem {
            matrices,
            rhs_x,
            rhs_y,
        }
    }

    /// Exact minimizer of the warping objective for fixed `field`.
    pub fn solve(&self, field: &AffineField, mu: f64, lambda: f64) -> ContinuousSolution {
        let sys = self.normal_system(field, mu, lambda);
        let local = field.to_frame(&self.frame);
        let mut fallbacks = 0;
        let maps = (0..field.maps().len())
            .map(|i| match solve_spd3(&sys.matrices[i], &sys.rhs_x[i], &sys.rhs_y[i]) {
                Some((x, y)) => AffineMap::new([x, y]),
                None => {
                    fallbacks += 1;
                    local.maps()[i]
                }
            })
            .collect();
        let solved = AffineField::from_maps(field.width(), field.height(), maps).unwrap();
        ContinuousSolution {
            field: solved.from_frame(&self.frame),
            fallbacks,
        }
    }

    /// Value of the warping objective for candidate `l` against fixed `t`.
    pub fn objective(&self, l: &AffineField, t: &AffineField, mu: f64, lambda: f64) -> f64 {
        self.check(l);
        self.check(t);
        let ll = l.to_frame(&self.frame);
        let tl = t.to_frame(&self.frame);
        let flows = self.filtered_flows(&tl, true);
        let mut total = 0.0;
        for i in 0..ll.maps().len() {
            let m = self.moments.matrix(i);
            let lm = ll.maps()[i];
            let d = lm.sub(&tl.maps()[i]);
            let p = self.penalty_matrix(i);
            total += mu * (quad3(&p, &d.rows[0]) + quad3(&p, &d.rows[1]));
            let mut smooth = 0.0;
            for (row, (vf, vsq)) in [(&flows.x, &flows.x_sq), (&flows.y, &flows.y_sq)].into_iter().enumerate() {
                let r = lm.rows[row];
                smooth += quad3(&m, &r) - 2.0 * (r[0] * vf[0][i] + r[1] * vf[1][i] + r[2] * vf[2][i]) + vsq[i];
            }
            total += lambda * smooth;
        }
        total
    }
}

struct FilteredFlows {
    x: [Vec<f64>; 3],
    y: [Vec<f64>; 3],
    x_sq: Vec<f64>,
    y_sq: Vec<f64>,
}

#[inline]
pub(crate) fn quad3(m: &[[f64; 3]; 3], r: &[f64; 3]) -> f64 {
    let mut acc = 0.0;
    for a in 0..3 {
        for b in 0..3 {
            acc += r[a] * m[a][b] * r[b];
        }
    }
    acc
}

/// Solves `A x = b1` and `A y = b2` for a symmetric 3x3 `A` by Cholesky,
/// rejecting matrices that are not positive definite or whose condition
/// estimate exceeds [`MAX_CONDITION`].
pub fn solve_spd3(a: &[[f64; 3]; 3], b1: &[f64; 3], b2: &[f64; 3]) -> Option<([f64; 3], [f64; 3])> {
    if condition_estimate(a)? > MAX_CONDITION {
        return None;
    }
    let l00 = a[0][0].sqrt();
    let l10 = a[1][0] / l00;
    let l20 = a[2][0] / l00;
    let d1 = a[1][1] - l10 * l10;
    if !(d1 > 0.0) {
        return None;
    }
    let l11 = d1.sqrt();
    let l21 = (a[2][1] - l20 * l10) / l11;
    let d2 = a[2][2] - l20 * l20 - l21 * l21;
    if !(d2 > 0.0) {
        return None;
    }
    let l22 = d2.sqrt();
    let solve = |b: &[f64; 3]| {
        let z0 = b[0] / l00;
        let z1 = (b[1] - l10 * z0) / l11;
        let z2 = (b[2] - l20 * z0 - l21 * z1) / l22;
        let x2 = z2 / l22;
        let x1 = (z1 - l21 * x2) / l11;
        let x0 = (z0 - l10 * x1 - l20 * x2) / l00;
        [x0, x1, x2]
    };
    let (x, y) = (solve(b1), solve(b2));
    (x.iter().chain(&y).all(|v| v.is_finite())).then_some((x, y))
}

/// `||A||_1 ||A^-1||_1`, or `None` for a singular or non-positive matrix.
fn condition_estimate(a: &[[f64; 3]; 3]) -> Option<f64> {
    if !(a[0][0] > 0.0) {
        return None;
    }
    let cof = |r0: usize, r1: usize, c0: usize, c1: usize| a[r0][c0] * a[r1][c1] - a[r0][c1] * a[r1][c0];
    let adj = [
        [cof(1, 2, 1, 2), -cof(0, 2, 1, 2), cof(0, 1, 1, 2)],
        [-cof(1, 2, 0, 2), cof(0, 2, 0, 2), -cof(0, 1, 0, 2)],
        [cof(1, 2, 0, 1), -cof(0, 2, 0, 1), cof(0, 1, 0, 1)],
    ];
    let det = a[0][0] * adj[0][0] + a[0][1] * adj[1][0] + a[0][2] * adj[2][0];
    if !(det > 0.0) || !det.is_finite() {
        return None;
    }
    let norm1 = |m: &[[f64; 3]; 3], scale: f64| {
        (0..3)
            .map(|c| (0..3).map(|r| m[r][c].abs()).sum::<f64>() * scale)
            .fold(0.0, f64::max)
    };
    Some(norm1(a, 1.0) * norm1(&adj, 1.0 / det))
}

/// Right-hand sides of the per-pixel systems in pixel coordinates.
pub fn build_rhs(
    field: &AffineField,
    guide: &Image,
    params: GuidedFilterParams,
    mu: f64,
    lambda: f64,
) -> (Vec<[f64; 3]>, Vec<[f64; 3]>) {
    let sys = Regularizer::new(guide, params, CoordFrame::PIXEL).normal_system(field, mu, lambda);
    (sys.rhs_x, sys.rhs_y)
}

/// Minimizes the warping objective in pixel coordinates.
pub fn solve_continuous(
    field: &AffineField,
    guide: &Image,
    params: GuidedFilterParams,
    mu: f64,
    lambda: f64,
) -> Result<ContinuousSolution> {
    check_weights(mu, lambda)?;
    check_size(field, guide)?;
    Ok(Regularizer::new(guide, params, CoordFrame::PIXEL).solve(field, mu, lambda))
}

/// Evaluates the warping objective in pixel coordinates.
pub fn warping_objective(
    l: &AffineField,
    t: &AffineField,
    guide: &Image,
    params: GuidedFilterParams,
    mu: f64,
    lambda: f64,
) -> Result<f64> {
    check_size(l, guide)?;
    check_size(t, guide)?;
    Ok(Regularizer::new(guide, params, CoordFrame::PIXEL).objective(l, t, mu, lambda))
}

fn check_weights(mu: f64, lambda: f64) -> Result<()> {
    if !(mu > 0.0 && lambda > 0.0) {
        return Err(crate::error::invalid("mu and lambda must be positive"));
    }
    Ok(())
}

fn check_size(field: &AffineField, guide: &Image) -> Result<()> {
    if field.width() != guide.width() || field.height() != guide.height() {
        return Err(crate::error::invalid("field and guide sizes differ"));
    }
    Ok(())
}
