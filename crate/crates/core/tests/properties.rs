mod common;

use std::collections::VecDeque;

use common::*;
use dctm::continuous::{solve_continuous, warping_objective};
use dctm::discrete::{coupling_cost, raw_cost_map};
use dctm::eaf::{guided_filter, moment_maps, GuidedFilterParams};
use dctm::eval::{endpoint_accuracy, flow_from_affine, pck, FlowField, KeypointSet};
use dctm::features::{compute_feature_map, descriptor_at, match_cost, BackboneConfig, DescriptorConfig, SamplingPattern};
use dctm::flo::{decode_flo, encode_flo};
use dctm::image::{build_pyramid, upsample_field, warp_image, AffineField, AffineMap, CoordFrame, Image, Plane, Rect};
use dctm::pipeline::{dctm_match, DctmConfig};
use dctm::slic::{adjacency, slic_segment};
use dctm::synth::{synth_pair, WarpSpec};
use dctm::textures::procedural_texture;
use proptest::prelude::*;

fn entry() -> impl Strategy<Value = f64> {
    -2.0..2.0f64
}

fn affine() -> impl Strategy<Value = AffineMap> {
    (prop::array::uniform3(entry()), prop::array::uniform3(entry()))
        .prop_map(|(a, b)| AffineMap::new([a, b]))
}

/// Maps whose linear part stays near the identity.
fn mild_affine() -> impl Strategy<Value = AffineMap> {
    (prop::array::uniform4(-0.3..0.3f64), -5.0..5.0f64, -5.0..5.0f64)
        .prop_map(|(l, tx, ty)| AffineMap::new([[1.0 + l[0], l[1], tx], [l[2], 1.0 + l[3], ty]]))
}

fn flow(w: usize, h: usize) -> impl Strategy<Value = FlowField> {
    prop::collection::vec(prop::array::uniform2(-50.0..50.0f32), w * h)
        .prop_map(move |d| FlowField::new(w, h, d).unwrap())
}

fn connected(labels: &[usize], w: usize, h: usize, pixels: &[usize]) -> bool {
    let k = labels[pixels[0]];
    let mut seen = vec![false; w * h];
    let mut queue = VecDeque::from([pixels[0]]);
    seen[pixels[0]] = true;
    let mut reached = 0;
    while let Some(i) = queue.pop_front() {
        reached += 1;
        let (x, y) = (i % w, i / w);
        let mut visit = |j: usize| {
            if !seen[j] && labels[j] == k {
                seen[j] = true;
                queue.push_back(j);
            }
        };
        if x > 0 {
            visit(i - 1);
        }
        if x + 1 < w {
            visit(i + 1);
        }
        if y > 0 {
            visit(i - w);
        }
        if y + 1 < h {
            visit(i + w);
        }
    }
    reached == pixels.len()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn identity_map_fixes_points(x in -1e3..1e3f64, y in -1e3..1e3f64) {
        prop_assert_eq!(AffineMap::IDENTITY.apply(x, y), [x, y]);
    }

    #[test]
    fn frame_round_trip_keeps_targets(t in affine(), ox in -50.0..50.0f64, oy in -50.0..50.0f64, s in 0.1..40.0f64) {
        let frame = CoordFrame { origin: [ox, oy], scale: s };
        let back = t.to_frame(&frame).from_frame(&frame);
        for (a, b) in back.rows.iter().flatten().zip(t.rows.iter().flatten()) {
            prop_assert!((a - b).abs() < 1e-9 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn identity_warp_reproduces_the_image(seed in 0u64..1000) {
        let img = Image::from_plane(&random_plane(13, 9, seed));
        let out = warp_image(&img, &AffineField::identity(13, 9)).unwrap();
        prop_assert_eq!(out.data(), img.data());
    }

    #[test]
    fn upsampling_scales_targets(t in mild_affine(), w in 3usize..12, h in 3usize..12) {
        let coarse = AffineField::constant(w, h, t);
        let fine = upsample_field(&coarse, 2 * w, 2 * h);
        for y in 0..2 * h {
            for x in 0..2 * w {
                let got = fine.get(x, y).apply(x as f64, y as f64);
                let [cx, cy] = t.apply(x as f64 / 2.0, y as f64 / 2.0);
                prop_assert!((got[0] - 2.0 * cx).abs() < 1e-9 && (got[1] - 2.0 * cy).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn pyramid_sizes_grow_towards_the_input(w in 16usize..80, h in 16usize..80, levels in 1usize..4) {
        let img = Image::from_plane(&Plane::filled(w, h, 0.5));
        if let Ok(pyr) = build_pyramid(&img, levels, 0.5, 4) {
            prop_assert_eq!(pyr.levels.len(), levels);
            prop_assert_eq!(pyr.finest().width(), w);
            for pair in pyr.levels.windows(2) {
                prop_assert!(pair[0].width() <= pair[1].width() && pair[0].height() <= pair[1].height());
            }
        }
    }

    #[test]
    fn guided_filter_preserves_constants(seed in 0u64..1000, c in -3.0..3.0f64, r in 1usize..6, eps in 1e-4..1.0f64) {
        let guide = Image::from_plane(&random_plane(14, 11, seed));
        let out = guided_filter(&guide, &Plane::filled(14, 11, c), GuidedFilterParams { radius: r, eps }).unwrap();
        prop_assert!(out.data.iter().all(|v| (v - c).abs() < 1e-9));
    }

    #[test]
    fn guided_filter_is_linear(seed in 0u64..1000, a in -2.0..2.0f64, b in -2.0..2.0f64, r in 1usize..6) {
        let guide = Image::from_plane(&random_plane(12, 10, seed));
        let (p, q) = (random_plane(12, 10, seed + 1), random_plane(12, 10, seed + 2));
        let params = GuidedFilterParams { radius: r, eps: 0.01 };
        let mix = p.zip_map(&q, |u, v| a * u + b * v);
        let lhs = guided_filter(&guide, &mix, params).unwrap();
        let fp = guided_filter(&guide, &p, params).unwrap();
        let fq = guided_filter(&guide, &q, params).unwrap();
        for i in 0..lhs.data.len() {
            prop_assert!((lhs.data[i] - (a * fp.data[i] + b * fq.data[i])).abs() < 1e-9);
        }
    }

    #[test]
    fn coupling_is_non_negative(seed in 0u64..1000, t in affine(), l in affine(), mu in 0.0..5.0f64, lambda in 0.0..1.0f64, r in 2usize..6) {
        let moments = moment_maps(&Image::from_plane(&random_plane(12, 12, seed)), GuidedFilterParams { radius: r, eps: 0.01 });
        for i in (0..144).step_by(13) {
            prop_assert!(coupling_cost(&t, &l, &moments.matrix(i), mu, lambda) >= -1e-9);
        }
    }

    #[test]
    fn constant_field_is_a_fixed_point(seed in 0u64..1000, t in mild_affine(), mu in 0.01..2.0f64) {
        let guide = Image::from_plane(&random_plane(10, 8, seed));
        let field = AffineField::constant(10, 8, t);
        let sol = solve_continuous(&field, &guide, GuidedFilterParams { radius: 2, eps: 0.01 }, mu, 0.01).unwrap();
        prop_assert!(field_rel_error(&sol.field, &field) < 1e-8);
    }

    #[test]
    fn continuous_solution_beats_perturbations(seed in 0u64..1000, pixel in 0usize..80, row in 0usize..2, col in 0usize..3, delta in prop_oneof![-0.1..-1e-3f64, 1e-3..0.1f64]) {
        let guide = Image::from_plane(&random_plane(10, 8, seed));
        let t = random_field(10, 8, seed + 7);
        let params = GuidedFilterParams { radius: 2, eps: 0.01 };
        let sol = solve_continuous(&t, &guide, params, 0.3, 0.02).unwrap().field;
        let mut moved = sol.clone();
        moved.maps_mut()[pixel].rows[row][col] += delta;
        let best = warping_objective(&sol, &t, &guide, params, 0.3, 0.02).unwrap();
        let other = warping_objective(&moved, &t, &guide, params, 0.3, 0.02).unwrap();
        prop_assert!(best <= other + 1e-12 * best.abs());
    }

    #[test]
    fn endpoint_accuracy_of_a_flow_against_itself_is_one(f in flow(9, 7), threshold in 0.01..10.0f64) {
        prop_assert_eq!(endpoint_accuracy(&f, &f, None, threshold, None).unwrap(), 1.0);
        prop_assert_eq!(endpoint_accuracy(&f, &f, None, threshold, Some(20)).unwrap(), 1.0);
    }

    #[test]
    fn pck_is_monotone_in_alpha(
        f in flow(20, 16),
        pts in prop::collection::vec((0.0..19.0f64, 0.0..15.0f64, 0.0..19.0f64, 0.0..15.0f64), 1..12),
        a in 0.01..1.0f64,
        b in 0.01..1.0f64,
    ) {
        let kp = KeypointSet { box_height: 15.0, box_width: 19.0, pairs: pts.iter().map(|&(sx, sy, tx, ty)| ([sx, sy], [tx, ty])).collect() };
        let (lo, hi) = (a.min(b), a.max(b));
        prop_assert!(pck(&kp, &f, lo).unwrap() <= pck(&kp, &f, hi).unwrap());
    }

    #[test]
    fn flo_round_trip_is_bit_exact(w in 1usize..9, h in 1usize..9, seed in 0u64..1000) {
        let mut r = rng(seed);
        let data = (0..w * h).map(|_| [rand::Rng::gen::<f32>(&mut r) * 100.0 - 50.0, rand::Rng::gen::<f32>(&mut r) * 1e-3]).collect();
        let f = FlowField::new(w, h, data).unwrap();
        let bytes = encode_flo(&f);
        prop_assert_eq!(bytes.len(), 12 + 8 * w * h);
        let back = decode_flo(&bytes).unwrap();
        prop_assert!(back.data.iter().flatten().map(|v| v.to_bits()).eq(f.data.iter().flatten().map(|v| v.to_bits())));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn descriptor_entries_lie_in_unit_interval(seed in 0u64..50, t in mild_affine(), x in 10.0..50.0f64, y in 10.0..38.0f64) {
        let fm = compute_feature_map(&procedural_texture(60, 48, seed), &BackboneConfig::default());
        let pat = SamplingPattern::from_config(&DescriptorConfig::default()).unwrap();
        let d = descriptor_at(&fm, (x, y), &t, &pat);
        prop_assert!(d.0.iter().all(|&v| v > 0.0 && v <= 1.0));
        // the translation column never enters the descriptor
        let shifted = AffineMap::new([[t.rows[0][0], t.rows[0][1], 0.0], [t.rows[1][0], t.rows[1][1], 0.0]]);
        prop_assert_eq!(descriptor_at(&fm, (x, y), &shifted, &pat), d);
    }

    #[test]
    fn match_cost_is_a_truncated_pseudo_metric(seed in 0u64..50, tau in 0.1..20.0f64) {
        let fm = compute_feature_map(&procedural_texture(48, 40, seed), &BackboneConfig::default());
        let pat = SamplingPattern::from_config(&DescriptorConfig::default()).unwrap();
        let id = AffineMap::IDENTITY;
        let [a, b, c] = [(12.0, 10.0), (30.5, 20.0), (20.0, 28.25)].map(|p| descriptor_at(&fm, p, &id, &pat));
        let d = |u, v| match_cost(u, v, tau).unwrap();
        prop_assert_eq!(d(&a, &a), 0.0);
        prop_assert_eq!(d(&a, &b), d(&b, &a));
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-9);
        prop_assert!(d(&a, &b) <= tau);
    }

    #[test]
    fn raw_costs_lie_between_zero_and_tau(seed in 0u64..50, t in mild_affine(), tau in 0.5..10.0f64) {
        let img = procedural_texture(40, 32, seed);
        let fm = compute_feature_map(&img, &BackboneConfig::default());
        let pat = SamplingPattern::from_config(&DescriptorConfig::default()).unwrap();
        let rect = Rect { x: 5, y: 4, width: 20, height: 16 };
        let raw = raw_cost_map(&fm, &fm, rect, &t, &pat, tau).unwrap();
        prop_assert!(raw.data.iter().all(|&c| (0.0..=tau + 1e-6).contains(&c)));
    }

    #[test]
    fn slic_partitions_into_connected_segments(seed in 0u64..50, k in 4usize..60, compactness in 1.0..40.0f64) {
        let (w, h) = (40, 30);
        let seg = slic_segment(&procedural_texture(w, h, seed), k, compactness, seed).unwrap();
        let labels = seg.labels();
        prop_assert!(labels.iter().all(|&l| l < seg.count()));
        let covered: usize = (0..seg.count()).map(|s| seg.pixels(s).len()).sum();
        prop_assert_eq!(covered, w * h);
        for s in 0..seg.count() {
            prop_assert!(!seg.pixels(s).is_empty());
            prop_assert!(connected(labels, w, h, seg.pixels(s)), "segment {} is split", s);
        }
        let graph = adjacency(&seg);
        for (a, ns) in graph.neighbors.iter().enumerate() {
            for &b in ns {
                prop_assert!(graph.neighbors[b].contains(&a));
            }
        }
    }

    #[test]
    fn synthetic_ground_truth_reproduces_the_source(seed in 0u64..50, theta in -20.0..20.0f64, s in 0.8..1.25f64, tx in -8.0..8.0f64) {
        let base = procedural_texture(48, 36, seed);
        let spec = WarpSpec::GlobalAffine { theta, sx: s, sy: s, shear: 0.0, tx, ty: -tx / 2.0 };
        let pair = synth_pair(&base, &spec, seed).unwrap();
        let warped = warp_image(&pair.tgt, &pair.gt).unwrap();
        let c = base.channels();
        let mut err = 0.0;
        let mut n = 0;
        for (i, &inside) in pair.mask.iter().enumerate() {
            if inside {
                for ch in 0..c {
                    err += (warped.data()[i * c + ch] - pair.src.data()[i * c + ch]).abs();
                    n += 1;
                }
            }
        }
        prop_assert!(n == 0 || err / (n as f64) < 2.0 / 255.0);
    }
}

#[test]
fn mu_grows_geometrically_and_runs_repeat_exactly() {
    let base = procedural_texture(80, 60, 2);
    let pair = synth_pair(&base, &WarpSpec::parse("affine:theta=5,tx=3,ty=-2").unwrap(), 2).unwrap();
    let cfg = DctmConfig::default();
    let (f1, r1) = dctm_match(&pair.src, &pair.tgt, &cfg, 9).unwrap();
    let (f2, r2) = dctm_match(&pair.src, &pair.tgt, &cfg, 9).unwrap();
    assert_eq!(f1, f2);
    assert_eq!(r1.to_text(false), r2.to_text(false));

    // mu restarts at every level and grows by `c` per iteration
    for level in &r1.levels {
        assert!((level.mu[0] - cfg.mu0).abs() < 1e-15);
        for w in level.mu.windows(2) {
            assert!((w[1] / w[0] - cfg.c).abs() < 1e-12, "{:?}", level.mu);
        }
    }
    let flow = flow_from_affine(&f1);
    assert!(flow.data.iter().all(|v| v[0].is_finite() && v[1].is_finite()));
}
