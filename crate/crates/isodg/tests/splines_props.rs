//! Property tests for knot vectors, B-spline bases and knot families.

use isodg::splines::*;
use proptest::prelude::*;

fn family(tag: u8) -> KnotFamily {
    match tag {
        0 => KnotFamily::Uniform,
        1 => KnotFamily::smoothed(),
        _ => KnotFamily::optimal(),
    }
}

fn space_params() -> impl Strategy<Value = (usize, usize, u8)> {
    (1usize..=8, 1usize..=24, 0u8..3).prop_map(|(p, k, f)| (if f == 2 { p.min(MAX_OPTIMAL_ORDER) } else { p }, k, f))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn derivatives_sum_to_zero((p, k, f) in space_params(), x in -1.0f64..=1.0) {
        let s = SplineSpace1D::from_family(family(f), p, k).unwrap();
        let d: f64 = s.eval_basis(x, 1).unwrap().iter().sum();
        prop_assert!(d.abs() < 1e-10 * (p * k) as f64);
    }

    #[test]
    fn local_support_has_p_plus_one_functions((p, k, f) in space_params(), x in -1.0f64..=1.0) {
        let s = SplineSpace1D::from_family(family(f), p, k).unwrap();
        let b = s.eval_basis(x, 0).unwrap();
        prop_assert!(b.iter().filter(|v| **v != 0.0).count() <= p + 1);
        let (first, ders) = s.eval_nonzero(x, 0);
        for (j, v) in ders[0].iter().enumerate() {
            prop_assert_eq!(b[first + j], *v);
        }
    }

    #[test]
    fn derivative_matches_finite_difference((p, k, f) in space_params(), x in -0.9f64..0.9) {
        let s = SplineSpace1D::from_family(family(f), p, k).unwrap();
        let coeffs: Vec<f64> = (0..s.dim()).map(|j| ((j * 7919) % 13) as f64 / 13.0 - 0.5).collect();
        // Stay inside one span so the central difference sees a polynomial.
        let br = s.knot_vector().breakpoints();
        let span = br.windows(2).find(|w| x >= w[0] && x <= w[1]).unwrap();
        let eps = 1e-4 * (span[1] - span[0]);
        let xc = x.clamp(span[0] + 2.0 * eps, span[1] - 2.0 * eps);
        let fd = (s.eval_spline(&coeffs, xc + eps, 0).unwrap() - s.eval_spline(&coeffs, xc - eps, 0).unwrap()) / (2.0 * eps);
        let d = s.eval_spline(&coeffs, xc, 1).unwrap();
        prop_assert!((fd - d).abs() <= 1e-5 * (1.0 + d.abs()), "fd {} vs {}", fd, d);
    }

    #[test]
    fn greville_strictly_increasing_and_interpolates_ends((p, k, f) in space_params()) {
        let s = SplineSpace1D::from_family(family(f), p, k).unwrap();
        let g = s.greville_abscissae();
        prop_assert_eq!(g.len(), s.dim());
        prop_assert!(g.windows(2).all(|w| w[0] < w[1]));
        prop_assert!((g[0] + 1.0).abs() < 1e-15 && (g[g.len() - 1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn knot_families_are_symmetric((p, k, f) in space_params()) {
        let kv = build_knots(family(f), p, k).unwrap();
        let t = kv.knots();
        for i in 0..t.len() {
            prop_assert!((t[i] + t[t.len() - 1 - i]).abs() < 1e-8, "asymmetric knot {}", t[i]);
        }
        prop_assert_eq!(kv.num_spans(), k);
        prop_assert_eq!(kv.dim(), p + k);
    }

    #[test]
    fn knot_vector_json_roundtrip((p, k, f) in space_params()) {
        let kv = build_knots(family(f), p, k).unwrap();
        let json = serde_json::to_string(&kv).unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        prop_assert!(v.get("knots").is_some() && v.get("degree").is_some());
        let back: KnotVector = serde_json::from_str(&json).unwrap();
        prop_assert_eq!(back, kv);
    }

    #[test]
    fn smoothing_pulls_knots_inward(p in 2usize..=6, k in 3usize..=32) {
        let u = make_open_uniform_knots(p, k).unwrap();
        let s = smooth_knots(p, k, DEFAULT_SMOOTHING_TOL).unwrap();
        // The first interior knot moves towards the centre and spacing stays positive.
        let (ui, si) = (u.interior(), s.interior());
        prop_assert!(si[0] > ui[0]);
        prop_assert!(si.windows(2).all(|w| w[1] > w[0]));
    }
}

#[test]
fn invalid_knot_vectors_are_rejected() {
    assert!(KnotVector::new(vec![-1.0, -1.0, 0.5, 0.2, 1.0, 1.0], 1).is_err());
    assert!(KnotVector::new(vec![-1.0, 0.0, 1.0, 1.0], 1).is_err());
    assert!(KnotVector::new(vec![-1.0, -1.0, 0.0, 0.0, 1.0, 1.0], 1).is_err());
    assert!(serde_json::from_str::<KnotVector>(r#"{"knots":[-1,-1,1,1],"degree":1,"extra":0}"#).is_err());
    assert!(serde_json::from_str::<KnotVector>(r#"{"knots":[-1,-1,1,1],"degree":1}"#).is_ok());
}

#[test]
fn optimal_knots_limited_to_supported_orders() {
    assert!(build_knots(KnotFamily::optimal(), MAX_OPTIMAL_ORDER + 1, 8).is_err());
}
