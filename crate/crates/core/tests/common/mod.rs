//! Brute-force reference implementations shared by the integration tests.
//! Everything here is written from the defining formulas, without going
//! through the summed-area tables or the per-pixel moment factorization.

#![allow(dead_code)]

use dctm::image::{AffineField, AffineMap, Plane};
use nalgebra::{DMatrix, DVector, Matrix3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_plane(w: usize, h: usize, seed: u64) -> Plane {
    let mut r = rng(seed);
    Plane::from_fn(w, h, |_, _| r.gen::<f64>())
}

/// A map near `base` with every entry jittered by up to `amp`.
pub fn jitter(base: &AffineMap, amp: f64, r: &mut impl Rng) -> AffineMap {
    let mut rows = base.rows;
    for v in rows.iter_mut().flatten() {
        *v += r.gen_range(-amp..=amp);
    }
    AffineMap::new(rows)
}

pub fn random_field(w: usize, h: usize, seed: u64) -> AffineField {
    let mut r = rng(seed);
    AffineField::from_fn(w, h, |x, y| {
        let base = AffineMap::new([[1.0, 0.0, x as f64 * 0.05], [0.0, 1.0, -(y as f64) * 0.03]]);
        jitter(&base, 0.3, &mut r)
    })
}

fn window(c: usize, r: usize, n: usize) -> std::ops::Range<usize> {
    c.saturating_sub(r)..(c + r + 1).min(n)
}

/// Dense guided-filter kernel `W` (row-major, `N x N`) for a grayscale
/// guide, with windows truncated at the border:
/// `W_ij = 1/|w_i| sum_{k: i,j in w_k} 1/|w_k| (1 + (I_i - m_k)(I_j - m_k)/(s_k^2 + eps))`.
pub fn explicit_kernel(guide: &Plane, r: usize, eps: f64) -> Vec<f64> {
    let (w, h) = (guide.width, guide.height);
    let n = w * h;
    let count = |x: usize, y: usize| (window(x, r, w).len() * window(y, r, h).len()) as f64;
    let mut kernel = vec![0.0; n * n];
    for ky in 0..h {
        for kx in 0..w {
            let members: Vec<usize> = window(ky, r, h)
                .flat_map(|y| window(kx, r, w).map(move |x| y * w + x))
                .collect();
            let m = members.len() as f64;
            let mean = members.iter().map(|&j| guide.data[j]).sum::<f64>() / m;
            let var = members.iter().map(|&j| (guide.data[j] - mean).powi(2)).sum::<f64>() / m;
            for &i in &members {
                let wi = count(i % w, i / w);
                for &j in &members {
                    let di = guide.data[i] - mean;
                    let dj = guide.data[j] - mean;
                    kernel[i * n + j] += (1.0 + di * dj / (var + eps)) / (wi * m);
                }
            }
        }
    }
    kernel
}

pub fn apply_kernel(kernel: &[f64], input: &Plane) -> Plane {
    let n = input.data.len();
    let data = (0..n)
        .map(|i| (0..n).map(|j| kernel[i * n + j] * input.data[j]).sum())
        .collect();
    Plane::new(input.width, input.height, data).unwrap()
}

pub fn brute_box(map: &Plane, r: usize) -> Plane {
    Plane::from_fn(map.width, map.height, |x, y| {
        let mut sum = 0.0;
        let mut n = 0;
        for yy in window(y, r, map.height) {
            for xx in window(x, r, map.width) {
                sum += map.get(xx, yy);
                n += 1;
            }
        }
        sum / n as f64
    })
}

fn hom(j: usize, w: usize) -> [f64; 3] {
    [(j % w) as f64, (j / w) as f64, 1.0]
}

/// `sum_j W_ij ||(t - l) j||^2` plus the Frobenius term, summed directly.
pub fn direct_coupling(kernel: &[f64], w: usize, i: usize, t: &AffineMap, l: &AffineMap, mu: f64, lambda: f64) -> f64 {
    let n = kernel.len().isqrt();
    let d = t.sub(l);
    let mut smooth = 0.0;
    for j in 0..n {
        let p = hom(j, w);
        let e: f64 = d
            .rows
            .iter()
            .map(|row| (row[0] * p[0] + row[1] * p[1] + row[2] * p[2]).powi(2))
            .sum();
        smooth += kernel[i * n + j] * e;
    }
    mu * d.frobenius_sq() + lambda * smooth
}

/// The warping objective summed term by term in pixel coordinates:
/// `sum_i mu ||L_i - T_i||^2 + lambda sum_j W_ij ||L_i j - T_j j||^2`.
pub fn brute_objective(kernel: &[f64], l: &AffineField, t: &AffineField, mu: f64, lambda: f64) -> f64 {
    let w = l.width();
    let n = l.maps().len();
    let mut total = 0.0;
    for i in 0..n {
        total += mu * l.maps()[i].sub(&t.maps()[i]).frobenius_sq();
        for j in 0..n {
            let p = hom(j, w);
            let a = l.maps()[i].apply(p[0], p[1]);
            let b = t.maps()[j].apply(p[0], p[1]);
            total += lambda * kernel[i * n + j] * ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2));
        }
    }
    total
}

/// Solves the full `3N x 3N` stationarity system of the warping objective
/// for each output row with a dense LU factorization.
pub fn dense_solve(kernel: &[f64], t: &AffineField, mu: f64, lambda: f64) -> AffineField {
    let (w, h) = (t.width(), t.height());
    let n = w * h;
    let ratio = mu / lambda;
    let mut a = DMatrix::<f64>::zeros(3 * n, 3 * n);
    let mut rhs = [DVector::<f64>::zeros(3 * n), DVector::<f64>::zeros(3 * n)];
    for i in 0..n {
        for c in 0..3 {
            a[(3 * i + c, 3 * i + c)] += ratio;
            for row in 0..2 {
                rhs[row][3 * i + c] += ratio * t.maps()[i].rows[row][c];
            }
        }
        for j in 0..n {
            let wij = kernel[i * n + j];
            let p = hom(j, w);
            for r in 0..3 {
                for c in 0..3 {
                    a[(3 * i + r, 3 * i + c)] += wij * p[r] * p[c];
                }
                for row in 0..2 {
                    let tj = t.maps()[j].rows[row];
                    let tjp = tj[0] * p[0] + tj[1] * p[1] + tj[2] * p[2];
                    rhs[row][3 * i + r] += wij * tjp * p[r];
                }
            }
        }
    }
    let lu = a.lu();
    let sx = lu.solve(&rhs[0]).expect("dense system is singular");
    let sy = lu.solve(&rhs[1]).expect("dense system is singular");
    let maps = (0..n)
        .map(|i| AffineMap::new([[sx[3 * i], sx[3 * i + 1], sx[3 * i + 2]], [sy[3 * i], sy[3 * i + 1], sy[3 * i + 2]]]))
        .collect();
    AffineField::from_maps(w, h, maps).unwrap()
}

pub fn min_eigenvalue(m: &[[f64; 3]; 3]) -> f64 {
    let mat = Matrix3::from_fn(|r, c| m[r][c]);
    mat.symmetric_eigen().eigenvalues.min()
}

/// Largest entry difference over the largest entry of `b`.
pub fn field_rel_error(a: &AffineField, b: &AffineField) -> f64 {
    let mut diff: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for (x, y) in a.maps().iter().zip(b.maps()) {
        for (p, q) in x.rows.iter().flatten().zip(y.rows.iter().flatten()) {
            diff = diff.max((p - q).abs());
            scale = scale.max(q.abs());
        }
    }
    diff / scale.max(1e-300)
}
