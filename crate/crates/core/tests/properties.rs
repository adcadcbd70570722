//! Property tests over the arithmetic, lift and measure layers.

use num_bigint::BigInt;
use num_complex::Complex64;
use parabolic_core::arith::{brjuno_sum, cf_expand, cf_expand_exact, cf_from_digits, CfDigits};
use parabolic_core::lift::{exp_projection, LiftedMap};
use parabolic_core::maps::QuadraticMap;
use parabolic_core::measure::{julia_sample, limit_set_distance, porosity_probe, BoxGrid, Mask, PointIndex};
use proptest::prelude::*;

fn digits() -> impl Strategy<Value = Vec<u32>> {
    prop::collection::vec(2u32..=100, 1..=25)
}

fn point() -> impl Strategy<Value = Complex64> {
    (-1.99f64..1.99, -1.99f64..1.99).prop_map(|(x, y)| Complex64::new(x, y))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn exact_round_trip(d in digits()) {
        let a = cf_from_digits(&CfDigits::new(d.clone()).unwrap(), d.len()).unwrap();
        let c = a.exact();
        let back = cf_expand_exact(&c.p, &c.q, 40).unwrap();
        prop_assert_eq!(back.digits(), &d[..]);
    }

    #[test]
    fn determinant_identity(d in digits()) {
        let a = cf_from_digits(&CfDigits::new(d.clone()).unwrap(), d.len()).unwrap();
        for k in 1..=d.len() {
            let sign = if k % 2 == 1 { 1 } else { -1 };
            prop_assert_eq!(a.determinant(k), BigInt::from(sign));
        }
    }

    #[test]
    fn float_route_fixes_leading_digit(d in prop::collection::vec(2u32..=100, 2..=25)) {
        // A single digit is the exact reciprocal 1/d0, which rounds to either side.
        let a = cf_from_digits(&CfDigits::new(d.clone()).unwrap(), d.len()).unwrap();
        let back = cf_expand(a.value, 25, 1e-12).unwrap();
        prop_assert_eq!(back.digits()[0], d[0]);
    }

    #[test]
    fn gauss_tower_matches_shift(d in prop::collection::vec(2u32..=100, 5..=25)) {
        let a = cf_from_digits(&CfDigits::new(d.clone()).unwrap(), d.len()).unwrap();
        for i in 1..4 {
            let prev = a.tower[i - 1];
            let frac = 1.0 / prev - (1.0 / prev).floor();
            prop_assert!((a.tower[i] - frac).abs() < 1e-9 * (1.0 / prev));
        }
    }

    #[test]
    fn brjuno_tail_is_monotone_and_bounded(d in prop::collection::vec(2u32..=100, 3..=25)) {
        let a = cf_from_digits(&CfDigits::new(d.clone()).unwrap(), d.len()).unwrap();
        let first = (1.0 / a.tower[0]).ln();
        for k in 0..d.len() - 1 {
            let b = brjuno_sum(&a, k).unwrap();
            let next = brjuno_sum(&a, k + 1).unwrap();
            prop_assert!(b.value >= first - 1e-15);
            prop_assert!(next.value >= b.value);
            prop_assert!(next.value - b.value <= b.tail_bound * (1.0 + 1e-12));
            prop_assert!(next.tail_bound <= b.tail_bound);
        }
    }

    #[test]
    fn lift_commutes_with_period(x in 0.0f64..1.0, y in 0.5f64..3.0, alpha in 0.005f64..0.03) {
        let q = QuadraticMap::new(alpha);
        let f = LiftedMap::new(&q).unwrap();
        let w = Complex64::new(x / alpha, y / alpha);
        let shift = 1.0 / alpha;
        let a = f.value(w + shift).unwrap();
        let b = f.value(w).unwrap() + shift;
        prop_assert!((a - b).norm() < 1e-10);
        let t = f.cov.tau(w).unwrap();
        prop_assert!((f.cov.tau(w + shift).unwrap() - t).norm() < 1e-13 * t.norm().max(1e-300) + 1e-300);
    }

    #[test]
    fn exp_is_one_periodic(x in -5.0f64..5.0, y in -1.0f64..3.0) {
        let z = Complex64::new(x, y);
        let e = exp_projection(z);
        prop_assert!((exp_projection(z + 1.0) - e).norm() < 1e-12 * e.norm());
    }

    #[test]
    fn box_counts_refine_by_at_most_four(pts in prop::collection::vec(point(), 1..300), m in 2i32..12) {
        let e = 2f64.powi(-m);
        let coarse = BoxGrid::new(&pts, e).unwrap().count();
        let fine = BoxGrid::new(&pts, e / 2.0).unwrap().count();
        prop_assert!(coarse >= 1);
        prop_assert!(fine >= coarse && fine <= 4 * coarse);
    }

    #[test]
    fn edt_matches_brute_force(cells in prop::collection::vec(0usize..256, 1..12)) {
        let n = 16;
        let mut m = Mask::new(n);
        for c in cells {
            m.data[c] = true;
        }
        let d = m.distance_to(true);
        for i in 0..n * n {
            let brute = (0..n * n)
                .filter(|&j| m.data[j])
                .map(|j| (m.center(i) - m.center(j)).norm())
                .fold(f64::INFINITY, f64::min);
            prop_assert!((d[i] - brute).abs() < 1e-12);
        }
    }

    #[test]
    fn cover_contains_fill(a in point(), b in point(), c in point()) {
        let mut fill = Mask::new(128);
        fill.fill_triangle(a, b, c);
        let mut cover = Mask::new(128);
        cover.cover_triangle(a, b, c);
        for i in 0..fill.data.len() {
            prop_assert!(!fill.data[i] || cover.data[i]);
        }
        for v in [a, b, c] {
            prop_assert!(cover.contains(v));
        }
    }

    #[test]
    fn porosity_holes_avoid_fattened_cloud(pts in prop::collection::vec(point(), 5..200), k in 0usize..5) {
        let index = PointIndex::new(&pts, 1.0 / 256.0);
        let z = pts[k % pts.len()];
        let rep = porosity_probe(z, &index, &[0.5, 0.25, 0.125]);
        for r in &rep.records {
            prop_assert!((0.0..=1.0).contains(&r.lambda));
            if r.hole_radius > 0.0 {
                let nearest = pts.iter().map(|p| (p - r.hole_center).norm()).fold(f64::INFINITY, f64::min);
                prop_assert!(nearest >= r.hole_radius + index.cell - 1e-12);
                prop_assert!((r.hole_center - z).norm() + r.hole_radius <= r.r + 1e-12);
            }
        }
    }

    #[test]
    fn self_distance_is_within_a_box(pts in prop::collection::vec(point(), 1..100), m in 2i32..9) {
        let e = 2f64.powi(-m);
        let (d1, d2) = limit_set_distance(&pts, &pts, e).unwrap();
        prop_assert!(d1 <= e * 2f64.sqrt() && d2 <= e * 2f64.sqrt());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn julia_samples_are_seed_deterministic(seed in any::<u64>(), count in 1usize..50) {
        let a = julia_sample(0.02, count, seed).unwrap();
        let b = julia_sample(0.02, count, seed).unwrap();
        prop_assert_eq!(a.points, b.points);
    }
}
