//! Property tests for weighted mass operators and the weight-adjusted inverse.

use std::sync::Arc;

use isodg::refops::RefOperators1D;
use isodg::splines::{KnotFamily, SplineSpace1D, DEFAULT_SMOOTHING_TOL};
use isodg::wadg::*;
use nalgebra::DVector;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn refs(p: usize, k: usize, d: usize) -> Vec<Arc<RefOperators1D>> {
    let o = Arc::new(RefOperators1D::with_default_rule(SplineSpace1D::from_family(KnotFamily::Smoothed { tol: DEFAULT_SMOOTHING_TOL }, p, k).unwrap()).unwrap());
    vec![o; d]
}

fn nq(r: &[Arc<RefOperators1D>]) -> usize {
    r.iter().map(|o| o.nq()).product()
}

fn dim(r: &[Arc<RefOperators1D>]) -> usize {
    r.iter().map(|o| o.dim()).product()
}

fn smooth_weight(r: &[Arc<RefOperators1D>], amp: f64) -> Vec<f64> {
    // Positive weight varying across quadrature points.
    (0..nq(r)).map(|q| 1.0 + amp * ((q as f64) * 0.37).sin()).collect()
}

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn constant_weight_inverse_is_exact(p in 1usize..=4, k in 1usize..=5, d in 1usize..=3, c in 0.1f64..10.0, seed in any::<u64>()) {
        let r = refs(p, k, d);
        let w = vec![c; nq(&r)];
        let wadg = WeightedMassOperator::new(r.clone(), w.clone(), MassPath::Wadg).unwrap();
        let exact = WeightedMassOperator::new(r.clone(), w, MassPath::Exact).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_vec(&mut rng, dim(&r));
        let a = wadg.apply_inverse(&x).unwrap();
        // Compare residuals: forward errors are amplified by cond(M)^d.
        let r = exact.apply(&a).unwrap();
        let res = r.iter().zip(&x).fold(0.0f64, |m, (u, v)| m.max((u - v).abs()));
        prop_assert!(res <= 1e-10, "residual {}", res);
    }

    #[test]
    fn weight_adjusted_inverse_is_spd(p in 1usize..=4, k in 1usize..=4, d in 1usize..=2, amp in 0.0f64..0.9, seed in any::<u64>()) {
        let r = refs(p, k, d);
        let op = WeightedMassOperator::new(r.clone(), smooth_weight(&r, amp), MassPath::Wadg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (x, y) = (rand_vec(&mut rng, dim(&r)), rand_vec(&mut rng, dim(&r)));
        let (ax, ay) = (op.apply_inverse(&x).unwrap(), op.apply_inverse(&y).unwrap());
        prop_assert!(dot(&x, &ax) > 0.0);
        prop_assert!((dot(&y, &ax) - dot(&x, &ay)).abs() < 1e-10 * (1.0 + dot(&x, &ax).abs()));
    }

    #[test]
    fn norm_apply_inverts_apply_inverse(p in 1usize..=3, k in 1usize..=4, d in 1usize..=2, amp in 0.0f64..0.8, seed in any::<u64>()) {
        let r = refs(p, k, d);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for mode in [MassPath::Wadg, MassPath::Exact] {
            let op = WeightedMassOperator::new(r.clone(), smooth_weight(&r, amp), mode).unwrap();
            let x = rand_vec(&mut rng, dim(&r));
            let back = op.norm_apply(&op.apply_inverse(&x).unwrap()).unwrap();
            prop_assert!(back.iter().zip(&x).all(|(u, v)| (u - v).abs() < 1e-9));
        }
    }

    #[test]
    fn forward_matches_dense_assembly(p in 1usize..=3, k in 1usize..=4, d in 1usize..=2, amp in 0.0f64..0.8, seed in any::<u64>()) {
        let r = refs(p, k, d);
        let w = smooth_weight(&r, amp);
        let rr: Vec<&RefOperators1D> = r.iter().map(|a| a.as_ref()).collect();
        let m = weighted_mass_matrix(&rr, &w).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_vec(&mut rng, dim(&r));
        let fast = weighted_mass_apply(&rr, &w, &x).unwrap();
        let dense = &m * DVector::from_vec(x);
        prop_assert!(fast.iter().zip(dense.iter()).all(|(a, b)| (a - b).abs() < 1e-12));
    }
}

#[test]
fn nurbs_weight_samples_reduce_to_inverse_jacobian() {
    let r = refs(2, 2, 2);
    let rr: Vec<&RefOperators1D> = r.iter().map(|a| a.as_ref()).collect();
    let n = dim(&r);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cw: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
    let j = vec![0.75; nq(&r)];
    let samples = nurbs_weight_samples(&cw, &rr, &j).unwrap();
    assert!(samples.iter().all(|s| *s > 0.0));
    // Unit control weights give w_R = 1 by partition of unity.
    let unit = nurbs_weight_samples(&vec![1.0; n], &rr, &j).unwrap();
    assert!(unit.iter().all(|s| (s - 1.0 / 0.75).abs() < 1e-13));
    assert!(nurbs_weight_samples(&vec![-1.0; n], &rr, &j).is_err());
}

#[test]
fn nonpositive_weight_rejected() {
    let r = refs(2, 2, 1);
    let mut w = vec![1.0; nq(&r)];
    w[0] = 0.0;
    assert!(WeightedMassOperator::new(r, w, MassPath::Wadg).is_err());
}

#[test]
fn mass_path_parses() {
    assert_eq!("wadg".parse::<MassPath>().unwrap(), MassPath::Wadg);
    assert_eq!("exact".parse::<MassPath>().unwrap(), MassPath::Exact);
    assert!("lumped".parse::<MassPath>().is_err());
}
