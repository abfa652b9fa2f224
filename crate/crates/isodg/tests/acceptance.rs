//! End-to-end acceptance checks.
//!
//! Each criterion prints one `PASS`/`FAIL` line with its wall time and the
//! measured quantities; the process exits nonzero if any criterion fails.

use std::f64::consts::PI;
use std::time::Instant;

use nalgebra::DMatrix;
use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestCaseError, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use isodg::analysis::*;
use isodg::geometry::{build_cartesian_multipatch, BoundaryCondition, CartesianMeshSpec, GlobalMapping, Mesh};
use isodg::linalg::max_gen_eig;
use isodg::par;
use isodg::refops::{compute_constants, dense_kron, RefOperators1D};
use isodg::semidiscrete::{Discretization, FieldState, Pde, PdeConfig, Velocity};
use isodg::splines::*;
use isodg::timeint::{estimate_dt, integrate, lsrk45_step, LsrkScheme, PdeOrder, DEFAULT_CT};
use isodg::wadg::MassPath;

/// Outcome of one criterion: individual named checks plus free-form notes.
#[derive(Default)]
struct Report {
    checks: Vec<(String, bool)>,
    notes: Vec<String>,
}

impl Report {
    fn check(&mut self, name: impl Into<String>, ok: bool) {
        self.checks.push((name.into(), ok));
    }

    fn note(&mut self, s: impl Into<String>) {
        self.notes.push(s.into());
    }

    fn passed(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|(_, ok)| *ok)
    }
}

type Outcome = Result<Report, String>;

fn rel(x: f64, target: f64) -> f64 {
    (x - target).abs() / target.abs()
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// ---------------------------------------------------------------------------
// 1. Spline correctness
// ---------------------------------------------------------------------------

fn family_of(tag: usize) -> KnotFamily {
    match tag {
        0 => KnotFamily::Uniform,
        1 => KnotFamily::smoothed(),
        _ => KnotFamily::optimal(),
    }
}

fn spline_properties(p: usize, k: usize, family: KnotFamily) -> Result<(), TestCaseError> {
    let space = SplineSpace1D::from_family(family, p, k).map_err(|e| TestCaseError::fail(e.to_string()))?;
    let n = space.dim();
    let greville = space.greville_abscissae();
    for i in 0..1000 {
        let x = -1.0 + 2.0 * i as f64 / 999.0;
        let b = space.eval_basis(x, 0).unwrap();
        let sum: f64 = b.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-13, "partition of unity {sum} at {x}");
        prop_assert!(b.iter().all(|&v| v >= -1e-15), "negative basis value at {x}");
        let g: f64 = b.iter().zip(&greville).map(|(bj, tj)| bj * tj).sum();
        prop_assert!((g - x).abs() < 1e-12, "Greville identity {g} vs {x}");
    }
    let left = space.eval_basis(-1.0, 0).unwrap();
    let right = space.eval_basis(1.0, 0).unwrap();
    for j in 0..n {
        let (el, er) = (if j == 0 { 1.0 } else { 0.0 }, if j == n - 1 { 1.0 } else { 0.0 });
        prop_assert!((left[j] - el).abs() < 1e-14 && (right[j] - er).abs() < 1e-14, "endpoint interpolation");
    }
    // L² projection reproduces every polynomial of degree ≤ p.
    let ops = RefOperators1D::with_default_rule(space.clone()).unwrap();
    for deg in 0..=p {
        let f = |x: f64| x.powi(deg as i32);
        let mut rhs = vec![0.0; n];
        for (q, (&x, &w)) in ops.rule.points.iter().zip(&ops.rule.weights).enumerate() {
            for (i, r) in rhs.iter_mut().enumerate() {
                *r += w * ops.basis_at_quad[(q, i)] * f(x);
            }
        }
        ops.mass_factorization.solve_in_place(&mut rhs);
        for i in 0..200 {
            let x = -1.0 + 2.0 * (i as f64 + 0.5) / 200.0;
            let v = space.eval_spline(&rhs, x, 0).unwrap();
            prop_assert!((v - f(x)).abs() < 1e-10, "reproduction of x^{deg}: error {}", (v - f(x)).abs());
        }
    }
    Ok(())
}

fn c1_splines() -> Outcome {
    let mut r = Report::default();
    let mut runner = TestRunner::new(PropConfig { cases: 96, failure_persistence: None, ..PropConfig::default() });
    let strategy = (1usize..=8, 1usize..=64, 0usize..3).prop_map(|(p, k, f)| {
        // n-width optimal knots are supported up to MAX_OPTIMAL_ORDER.
        let p = if f == 2 { p.min(MAX_OPTIMAL_ORDER) } else { p };
        (p, k, f)
    });
    let res = runner.run(&strategy, |(p, k, f)| spline_properties(p, k, family_of(f)));
    if let Err(e) = &res {
        r.note(format!("{e}"));
    }
    r.check("random (p ≤ 8, K ≤ 64, family) cases", res.is_ok());
    // Corner cases of the parameter box.
    let mut corners = true;
    for &(p, k, f) in &[(8, 64, 0), (8, 64, 1), (5, 64, 2), (1, 1, 0), (1, 1, 1), (1, 1, 2), (8, 1, 1)] {
        if let Err(e) = spline_properties(p, k, family_of(f)) {
            corners = false;
            r.note(format!("p={p} K={k} family={f}: {e}"));
        }
    }
    r.check("corner cases", corners);
    Ok(r)
}

// ---------------------------------------------------------------------------
// 2. Knot smoothing
// ---------------------------------------------------------------------------

fn c2_smoothing() -> Outcome {
    let mut r = Report::default();
    let mut fixed = true;
    for k in 1..=32 {
        let s = smooth_knots(1, k, DEFAULT_SMOOTHING_TOL).map_err(err)?;
        let u = make_open_uniform_knots(1, k).map_err(err)?;
        fixed &= s.knots() == u.knots();
    }
    r.check("p=1 smoothing is the identity", fixed);
    let (dk, _) = knot_deltas(2, 64).map_err(err)?;
    let (_, dg) = knot_deltas(3, 8).map_err(err)?;
    r.note(format!("δ_knot(2,64)={dk:.5} δ_Greville(3,8)={dg:.5}"));
    r.check("δ_knot(p=2,K=64) = 0.1538 ± 5%", rel(dk, 0.1538) <= 0.05);
    r.check("δ_Greville(p=3,K=8) = 0.0366 ± 5%", rel(dg, 0.0366) <= 0.05);
    Ok(r)
}

// ---------------------------------------------------------------------------
// 3. Trace and inverse constants
// ---------------------------------------------------------------------------

/// Tabulated smoothed-knot values, `p = 2..5`: the scaled trace-table column
/// (reproduced by `C_I / K`) and the scaled inverse-table column (reproduced
/// by `C_T / K`), for `K = p` and `K = 2p`.
const TABLE_TRACE: [[f64; 4]; 2] = [[2.8364, 3.6403, 4.5420, 5.5117], [2.3202, 2.9916, 3.7727, 4.6100]];
const TABLE_INVERSE: [[f64; 4]; 2] = [[4.0000, 5.3499, 6.8709, 8.4592], [3.1536, 4.4102, 5.7279, 7.0910]];
/// The same columns for optimal knots (reported, not graded).
const OPTIMAL_TRACE: [[f64; 4]; 2] = [[2.8364, 3.6604, 4.5303, 5.4323], [2.3215, 3.0011, 3.7515, 4.5251]];
const OPTIMAL_INVERSE: [[f64; 4]; 2] = [[4.0000, 5.3907, 6.8514, 8.3260], [3.1768, 4.4311, 5.6895, 6.9474]];

fn dense_axis_operator(ops: &RefOperators1D, d: usize, axis: usize, m: &DMatrix<f64>) -> DMatrix<f64> {
    let factors: Vec<&DMatrix<f64>> = (0..d).map(|a| if a == axis { m } else { &ops.mass }).collect();
    dense_kron(&factors)
}

fn c3_constants() -> Outcome {
    let mut r = Report::default();
    let ops = RefOperators1D::with_default_rule(SplineSpace1D::uniform(1, 1).map_err(err)?).map_err(err)?;
    let c = compute_constants(&ops, 1).map_err(err)?;
    r.note(format!("p=1,K=1: λ_T={:.15} λ_I={:.15}", c.lambda_trace, c.lambda_inverse));
    r.check("p=1, K=1: λ_trace = λ_inverse = 3", (c.lambda_trace - 3.0).abs() < 1e-12 && (c.lambda_inverse - 3.0).abs() < 1e-12);

    let mut worst: f64 = 0.0;
    for (row, mult) in [1usize, 2].iter().enumerate() {
        for p in 2..=5 {
            let k = mult * p;
            let space = SplineSpace1D::from_family(KnotFamily::smoothed(), p, k).map_err(err)?;
            let ops = RefOperators1D::with_default_rule(space).map_err(err)?;
            let c = compute_constants(&ops, 1).map_err(err)?;
            let (ci, ct) = (c.c_i / k as f64, c.c_t / k as f64);
            let (et, ei) = ((ci - TABLE_TRACE[row][p - 2]).abs(), (ct - TABLE_INVERSE[row][p - 2]).abs());
            worst = worst.max(et).max(ei);
            r.check(format!("smoothed p={p} K={k}: {ci:.4}/{ct:.4} vs table"), et <= 1e-3 && ei <= 1e-3);
        }
    }
    r.note(format!("max smoothed-table deviation {worst:.2e}"));
    let mut opt_worst: f64 = 0.0;
    for (row, mult) in [1usize, 2].iter().enumerate() {
        for p in 2..=5 {
            let k = mult * p;
            let ops = RefOperators1D::with_default_rule(SplineSpace1D::from_family(KnotFamily::optimal(), p, k).map_err(err)?)
                .map_err(err)?;
            let c = compute_constants(&ops, 1).map_err(err)?;
            opt_worst = opt_worst
                .max((c.c_i / k as f64 - OPTIMAL_TRACE[row][p - 2]).abs())
                .max((c.c_t / k as f64 - OPTIMAL_INVERSE[row][p - 2]).abs());
        }
    }
    r.note(format!("max optimal-table deviation {opt_worst:.2e} (informational)"));

    // Dimension rules against dense tensor-product eigenproblems.
    let mut dim_worst: f64 = 0.0;
    for &(p, k, fam) in &[(2usize, 2usize, KnotFamily::Uniform), (3, 3, KnotFamily::smoothed()), (2, 3, KnotFamily::optimal())] {
        let ops = RefOperators1D::with_default_rule(SplineSpace1D::from_family(fam, p, k).map_err(err)?).map_err(err)?;
        for d in 2..=3 {
            let c = compute_constants(&ops, d).map_err(err)?;
            let mass = dense_kron(&vec![&ops.mass; d]);
            let mut trace: f64 = 0.0;
            let mut stiff = DMatrix::zeros(mass.nrows(), mass.ncols());
            for axis in 0..d {
                let f = dense_axis_operator(&ops, d, axis, &ops.face_mass);
                trace = trace.max(max_gen_eig(&f, &mass).map_err(err)?);
                stiff += dense_axis_operator(&ops, d, axis, &ops.stiffness);
            }
            let inv = max_gen_eig(&stiff, &mass).map_err(err)?;
            let e = rel(c.lambda_trace, trace).max(rel(c.lambda_inverse, inv)).max(rel(c.c_i, inv.sqrt()));
            dim_worst = dim_worst.max(e);
        }
    }
    r.note(format!("dimension-rule deviation {dim_worst:.2e}"));
    r.check("dimension rules vs dense Kronecker eigenproblems (1e-10)", dim_worst < 1e-10);
    Ok(r)
}

// ---------------------------------------------------------------------------
// 4. First-order spectral radius
// ---------------------------------------------------------------------------

const UNIFORM_SLOPES: [f64; 4] = [2.0756, 3.1824, 4.4218, 5.7692];
const SMOOTHED_SLOPES: [f64; 4] = [1.7092, 2.3019, 2.9255, 3.5739];
const SLOPE_SPANS: usize = 256;

fn c4_spectra() -> Outcome {
    let mut r = Report::default();
    let mut jobs: Vec<(KnotFamily, usize, f64)> = Vec::new();
    for p in 2..=5 {
        jobs.push((KnotFamily::Uniform, p, 0.5));
        jobs.push((KnotFamily::smoothed(), p, 0.5));
    }
    jobs.push((KnotFamily::Uniform, 5, 1.0));
    let out = par::map(&jobs, |&(f, p, tau)| advection_spectrum(f, p, SLOPE_SPANS, tau));
    let mut it = out.into_iter();
    for p in 2..=5 {
        let u = it.next().unwrap().map_err(err)?;
        let s = it.next().unwrap().map_err(err)?;
        r.check(format!("uniform p={p}: ρ/K={:.4} vs {}", u.slope, UNIFORM_SLOPES[p - 2]), rel(u.slope, UNIFORM_SLOPES[p - 2]) <= 0.01);
        r.check(format!("smoothed p={p}: ρ/K={:.4} vs {}", s.slope, SMOOTHED_SLOPES[p - 2]), rel(s.slope, SMOOTHED_SLOPES[p - 2]) <= 0.01);
    }
    let up = it.next().unwrap().map_err(err)?;
    r.check(format!("upwind p=5, K=256: ρ={:.3} vs 321.333", up.rho), rel(up.rho, 321.333) <= 0.02);
    Ok(r)
}

// ---------------------------------------------------------------------------
// 5. Second-order spectral radius
// ---------------------------------------------------------------------------

const SECOND_ORDER_SLOPES: [f64; 4] = [2.7632, 4.3353, 6.0859, 7.9831];

fn c5_second_order() -> Outcome {
    let mut r = Report::default();
    let ks = [32usize, 64, 96, 128];
    let jobs: Vec<(usize, usize)> = (2..=5).flat_map(|p| ks.iter().map(move |&k| (p, k))).collect();
    let out = par::map(&jobs, |&(p, k)| second_order_spectrum(KnotFamily::Uniform, p, k).map(|s| s.rho));
    let vals: Vec<f64> = out.into_iter().collect::<Result<_, _>>().map_err(err)?;
    let xs: Vec<f64> = ks.iter().map(|&k| k as f64).collect();
    for p in 2..=5 {
        let ys = &vals[(p - 2) * ks.len()..(p - 1) * ks.len()];
        let slope = fit_slope(&xs, ys).map_err(err)?;
        let target = SECOND_ORDER_SLOPES[p - 2];
        r.check(format!("p={p}: √ρ slope {slope:.4} vs {target}"), rel(slope, target) <= 0.02);
    }
    Ok(r)
}

// ---------------------------------------------------------------------------
// 6. 1D wave convergence
// ---------------------------------------------------------------------------

/// First-order errors at `h = 0.03125`, `p = 2, 3, 4`.
const GOLDEN_1D: [f64; 3] = [1.37364e-05, 3.0529e-07, 9.13748e-09];

fn c6_convergence_1d() -> Outcome {
    let mut r = Report::default();
    let levels = vec![(2, 4), (2, 8), (2, 16), (2, 32)];
    let jobs: Vec<(Formulation, usize)> =
        [Formulation::Wave1, Formulation::Wave2].iter().flat_map(|&f| (2..=4).map(move |p| (f, p))).collect();
    let out = par::map(&jobs, |&(f, p)| convergence_study(&ConvergenceSetup::one_d(f, p, levels.clone())));
    for ((f, p), rows) in jobs.iter().zip(out) {
        let rows = rows.map_err(err)?;
        let last = rows.last().unwrap();
        let target = *p as f64 + 1.0;
        r.check(format!("{f:?} p={p}: rate {:.3} (error {:.4e})", last.rate, last.error), (last.rate - target).abs() <= 0.2);
        if *f == Formulation::Wave1 {
            let g = GOLDEN_1D[p - 2];
            r.check(format!("{f:?} p={p}: h=0.03125 error within 10% of {g:.5e}"), rel(last.error, g) <= 0.10);
        }
    }
    Ok(r)
}

// ---------------------------------------------------------------------------
// 7. Weight-adjusted mass inverse fidelity
// ---------------------------------------------------------------------------

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn c7_wadg() -> Outcome {
    let mut r = Report::default();
    // Affine but anisotropically scaled patches: the weight-adjusted inverse is exact.
    let mut spec = CartesianMeshSpec::unit_box(2, 1, KnotFamily::smoothed(), 3, 4, BoundaryCondition::Dirichlet);
    spec.patches_per_axis = vec![2, 3];
    spec.upper = vec![3.0, 0.5];
    let mesh = build_cartesian_multipatch(&spec).map_err(err)?;
    let w = Discretization::new(mesh.clone(), PdeConfig::wave1(1.7), MassPath::Wadg).map_err(err)?;
    let e = Discretization::new(mesh, PdeConfig::wave1(1.7), MassPath::Exact).map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for k in 0..w.mesh.patches.len() {
        for ops in [(&w.mass_j[k], &e.mass_j[k]), (&w.mass_p[k], &e.mass_p[k])] {
            let x = random_vec(&mut rng, w.mesh.patches[k].space.dim());
            let a = ops.0.apply_inverse(&x).map_err(err)?;
            let b = ops.1.apply_inverse(&x).map_err(err)?;
            let diff: Vec<f64> = a.iter().zip(&b).map(|(u, v)| u - v).collect();
            worst = worst.max(max_abs(&diff) / max_abs(&b));
        }
    }
    r.note(format!("affine inverse deviation {worst:.2e}"));
    r.check("affine exactness (1e-12)", worst < 1e-12);

    let proj = projection_study(&ProjectionSetup { p: 4, k: 32, patches: 1, alpha: 0.125, mode: 1, family: KnotFamily::Uniform })
        .map_err(err)?;
    r.note(format!("projection h={} error={:.4e} difference={:.4e}", proj.h, proj.l2_error, proj.difference));
    r.check("projection difference within factor 2 of 1.65e-9", proj.difference <= 2.0 * 1.65e-9 && proj.difference >= 1.65e-9 / 2.0);
    r.check("projection difference ≥ two orders below error", proj.difference <= 1e-2 * proj.l2_error);

    let mut setup = ConvergenceSetup::two_d(Formulation::Wave1, 4, vec![(2, 8), (2, 16)], 0.125);
    setup.compare_mass = true;
    let rows = convergence_study(&setup).map_err(err)?;
    for row in &rows {
        r.note(format!("h={} error={:.4e} difference={:.4e}", row.h, row.error, row.mass_difference.unwrap_or(f64::NAN)));
    }
    let last = rows.last().unwrap();
    let ratio = last.mass_difference.unwrap_or(f64::INFINITY) / last.error;
    r.check(format!("solver difference/error {ratio:.2e} < 1e-3 at finest level"), ratio < 1e-3);
    Ok(r)
}

// ---------------------------------------------------------------------------
// 8. Dispersion
// ---------------------------------------------------------------------------

fn c8_dispersion() -> Outcome {
    let mut r = Report::default();
    let ks: Vec<f64> = (1..=30).map(|i| 0.5 * i as f64).collect();
    let rep = dispersion_relation(4, 16, KnotFamily::Uniform, 1.0, &ks).map_err(err)?;
    let rate = rep.resolved_rate(RESOLVED_REGIME.0, RESOLVED_REGIME.1).map_err(err)?;
    r.check(format!("p=4, τ=1 resolved dispersion rate {rate:.3} = 11 ± 0.5"), (rate - 11.0).abs() <= 0.5);
    Ok(r)
}

// ---------------------------------------------------------------------------
// 9. Laplacian eigenstudy
// ---------------------------------------------------------------------------

fn c9_eigen() -> Outcome {
    let mut r = Report::default();
    let u = laplace_eigenstudy(4, 32, KnotFamily::Uniform).map_err(err)?;
    let s = laplace_eigenstudy(4, 32, KnotFamily::smoothed()).map_err(err)?;
    r.check(format!("λ_h,1 relative error {:.2e} < 1e-10", u[0].rel_error), u[0].rel_error < 1e-10);
    let outliers = count_outliers(&u, 4, 10.0);
    r.check(format!("uniform outliers = {outliers} (expected 2)"), outliers == 2);
    let (mu, ms) = (u.last().unwrap().lambda_h, s.last().unwrap().lambda_h);
    r.check(format!("smoothed max {ms:.4e} < uniform max {mu:.4e}"), ms < mu);
    Ok(r)
}

// ---------------------------------------------------------------------------
// 10. Energy properties
// ---------------------------------------------------------------------------

/// `⟨u, M f⟩ / (‖u‖_M ‖f‖_M)` with `f = rhs(u)`, from the quadratic energy by
/// polarization: `⟨u, M f⟩ = E(u + f) − E(u − f)` for `E(x) = ½⟨x, M x⟩`
/// (up to the factor 2 absorbed in the normalization).
fn energy_rate(disc: &Discretization, u: &FieldState) -> Result<f64, String> {
    let f = disc.rhs(u, 0.0).map_err(err)?;
    let plus = u.with_data(u.data.iter().zip(&f.data).map(|(a, b)| a + b).collect()).map_err(err)?;
    let minus = u.with_data(u.data.iter().zip(&f.data).map(|(a, b)| a - b).collect()).map_err(err)?;
    let (ep, em) = (disc.energy(&plus).map_err(err)?, disc.energy(&minus).map_err(err)?);
    let (eu, ef) = (disc.energy(u).map_err(err)?, disc.energy(&f).map_err(err)?);
    Ok((ep - em) / (4.0 * (eu * ef).sqrt()))
}

fn random_state(disc: &Discretization, rng: &mut ChaCha8Rng) -> FieldState {
    let mut s = disc.zero_state();
    for v in s.data.iter_mut() {
        *v = rng.random_range(-1.0..1.0);
    }
    s
}

fn warped_mesh(patches: usize, p: usize, k: usize, bc: BoundaryCondition) -> Result<Mesh, String> {
    let mut spec = CartesianMeshSpec::unit_box(2, patches, KnotFamily::Uniform, p, k, bc);
    spec.global = GlobalMapping::Warp2d { alpha: 0.125 };
    build_cartesian_multipatch(&spec).map_err(err)
}

/// State whose first component is the constant 1 (all-ones coefficients).
fn constant_state(disc: &Discretization) -> FieldState {
    let mut s = disc.zero_state();
    for k in 0..disc.mesh.patches.len() {
        s.component_mut(k, 0).iter_mut().for_each(|v| *v = 1.0);
    }
    s
}

fn c10_energy() -> Outcome {
    let mut r = Report::default();
    let mut rng = ChaCha8Rng::seed_from_u64(10);

    // Central-flux advection on periodic meshes: skew-adjoint in the mass inner product.
    let mut spec = CartesianMeshSpec::unit_box(2, 2, KnotFamily::smoothed(), 3, 3, BoundaryCondition::Periodic);
    spec.upper = vec![1.0, 2.0];
    let adv2 = Discretization::new(
        build_cartesian_multipatch(&spec).map_err(err)?,
        PdeConfig::new(Pde::Advection { beta: Velocity::Constant([1.0, -0.6, 0.0]), tau: 0.0 }),
        MassPath::Wadg,
    )
    .map_err(err)?;
    let adv1 = Discretization::new(
        periodic_interval(KnotFamily::Uniform, 4, 12).map_err(err)?,
        PdeConfig::new(Pde::Advection { beta: Velocity::Constant([1.0, 0.0, 0.0]), tau: 0.0 }),
        MassPath::Wadg,
    )
    .map_err(err)?;
    let mut skew: f64 = 0.0;
    for disc in [&adv1, &adv2] {
        for _ in 0..16 {
            skew = skew.max(energy_rate(disc, &random_state(disc, &mut rng))?.abs());
        }
    }
    r.note(format!("advection τ=0 max |dE/dt| normalized {skew:.2e}"));
    r.check("advection τ=0 energy conserving (1e-11)", skew < 1e-11);

    // Penalized first-order wave on a warped Dirichlet mesh: dissipative.
    let w1 = Discretization::new(warped_mesh(2, 3, 3, BoundaryCondition::Dirichlet)?, PdeConfig::wave1(1.0), MassPath::Wadg)
        .map_err(err)?;
    let rates: Vec<f64> = (0..16).map(|_| energy_rate(&w1, &random_state(&w1, &mut rng))).collect::<Result<_, _>>()?;
    let (hi, lo) = (rates.iter().cloned().fold(f64::MIN, f64::max), rates.iter().cloned().fold(f64::MAX, f64::min));
    r.note(format!("wave1 normalized dE/dt in [{lo:.3e}, {hi:.3e}]"));
    r.check("wave1 dissipative", hi <= 1e-12 && lo < 0.0);

    // Second-order wave: exactly conservative semi-discretely, and the energy
    // drift of the time integrator is negligible at a small timestep.
    let w2 = Discretization::new(warped_mesh(2, 2, 2, BoundaryCondition::Dirichlet)?, PdeConfig::wave2(1.0), MassPath::Wadg)
        .map_err(err)?;
    let mut cons: f64 = 0.0;
    for _ in 0..16 {
        cons = cons.max(energy_rate(&w2, &random_state(&w2, &mut rng))?.abs());
    }
    r.note(format!("wave2 semi-discrete max |dE/dt| normalized {cons:.2e}"));
    r.check("wave2 semi-discrete energy conserving (1e-11)", cons < 1e-11);
    let mut state = w2.zero_state();
    let p0 = w2.project(&|x| (1.5 * PI * x[0]).cos() * (1.5 * PI * x[1]).cos()).map_err(err)?;
    for (k, c) in p0.iter().enumerate() {
        state.component_mut(k, 0).copy_from_slice(c);
    }
    let constants = compute_constants(&w2.refs[0][0], 2).map_err(err)?;
    let est = estimate_dt(&constants, &w2.geoms, 1.0, DEFAULT_CT, PdeOrder::Second).map_err(err)?;
    let e0 = w2.energy(&state).map_err(err)?;
    let template = state.clone();
    integrate(|t, u| Ok(w2.rhs(&template.with_data(u.to_vec())?, t)?.data), &mut state.data, 0.0, 2.0, 0.05 * est.dt, |_, _, _| Ok(()))
        .map_err(err)?;
    let drift = rel(w2.energy(&state).map_err(err)?, e0);
    r.note(format!("wave2 energy drift over T=2: {drift:.2e}"));
    r.check("wave2 energy conserved to 1e-8 over T=2", drift < 1e-8);

    // Constant states are steady.
    let neumann_w1 =
        Discretization::new(warped_mesh(2, 3, 3, BoundaryCondition::Neumann)?, PdeConfig::wave1(1.0), MassPath::Wadg).map_err(err)?;
    let neumann_w2 =
        Discretization::new(warped_mesh(2, 3, 3, BoundaryCondition::Neumann)?, PdeConfig::wave2(1.0), MassPath::Exact).map_err(err)?;
    let mut resid: f64 = 0.0;
    for disc in [&adv1, &adv2, &neumann_w1, &neumann_w2] {
        resid = resid.max(max_abs(&disc.rhs(&constant_state(disc), 0.0).map_err(err)?.data));
    }
    let smoke = smoke3d(2, 2, 500, MassPath::Wadg).map_err(err)?;
    resid = resid.max(smoke.constant_residual);
    r.note(format!("constant-state residual {resid:.2e}"));
    r.check("constant-state preservation (1e-11)", resid < 1e-11);
    r.check(
        format!("3D smoke: {} steps, energy {:.4e} → {:.4e}", smoke.steps, smoke.energy_initial, smoke.energy_final),
        smoke.steps == 500 && smoke.energy_monotone && smoke.finite,
    );
    Ok(r)
}

// ---------------------------------------------------------------------------
// 11. 2D multi-patch convergence
// ---------------------------------------------------------------------------

fn c11_convergence_2d() -> Outcome {
    let mut r = Report::default();
    let rows = convergence_study(&ConvergenceSetup::two_d(Formulation::Wave1, 2, vec![(2, 2), (2, 4), (2, 8), (2, 16)], 0.125)).map_err(err)?;
    for row in &rows {
        r.note(format!("dofs={} error={:.5e} rate={:.3}", row.dofs, row.error, row.rate));
    }
    r.check(format!("64-dof error {:.4e} within 15% of 0.2427", rows[0].error), rows[0].dofs == 64 && rel(rows[0].error, 0.2427) <= 0.15);
    r.check("errors decrease monotonically", rows.windows(2).all(|w| w[1].error < w[0].error));
    // The tabulated curve (64 … 1296 dofs: 0.2427, 0.0715, 6.58e-3, 5.25e-4)
    // is pre-asymptotic per level; the trend is judged by the fitted order.
    let hs: Vec<f64> = rows.iter().map(|row| row.h).collect();
    let es: Vec<f64> = rows.iter().map(|row| row.error).collect();
    let order = fit_log_slope(&hs, &es).map_err(err)?;
    r.check(format!("fitted order {order:.3} ≈ p+1 = 3 (± 0.5)"), (order - 3.0).abs() <= 0.5);
    Ok(r)
}

// ---------------------------------------------------------------------------
// 12. Time integrator
// ---------------------------------------------------------------------------

/// Butcher tableau `(A, b)` of a `2N`-storage scheme: with stage inputs
/// `Y_i = U_{i−1}`, `A_{i+1,j} = Σ_{l=j}^{i} b_l Π_{m=j+1}^{l} a_m`.
fn butcher_tableau(s: &LsrkScheme) -> (Vec<Vec<f64>>, Vec<f64>) {
    let n = s.a.len();
    let coef = |i: usize, j: usize| -> f64 {
        // Rows/columns 0-based; `i` stages completed.
        (j..i)
            .map(|l| s.b[l] * ((j + 1)..=l).map(|m| s.a[m]).product::<f64>())
            .sum()
    };
    let a: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| if j < i { coef(i, j) } else { 0.0 }).collect()).collect();
    let b: Vec<f64> = (0..n).map(|j| coef(n, j)).collect();
    (a, b)
}

fn butcher_step(a: &[Vec<f64>], b: &[f64], c: &[f64], f: &dyn Fn(f64, &[f64]) -> Vec<f64>, u: &[f64], t: f64, dt: f64) -> Vec<f64> {
    let mut ks: Vec<Vec<f64>> = Vec::new();
    for i in 0..b.len() {
        let y: Vec<f64> = (0..u.len()).map(|q| u[q] + dt * (0..i).map(|j| a[i][j] * ks[j][q]).sum::<f64>()).collect();
        ks.push(f(t + c[i] * dt, &y));
    }
    (0..u.len()).map(|q| u[q] + dt * (0..b.len()).map(|j| b[j] * ks[j][q]).sum::<f64>()).collect()
}

fn c12_time() -> Outcome {
    let mut r = Report::default();
    let dts = [0.2, 0.1, 0.05, 0.025];
    let mut errs = Vec::new();
    for &dt in &dts {
        let mut u = vec![1.0];
        integrate(|_, x| Ok(vec![-x[0]]), &mut u, 0.0, 2.0, dt, |_, _, _| Ok(())).map_err(err)?;
        errs.push((u[0] - (-2.0f64).exp()).abs());
    }
    let order = fit_log_slope(&dts, &errs).map_err(err)?;
    r.check(format!("order on u' = −u: {order:.3} = 4 ± 0.1"), (order - 4.0).abs() <= 0.1);

    let scheme = LsrkScheme::default();
    let (a, b) = butcher_tableau(&scheme);
    let c_derived: Vec<f64> = a.iter().map(|row| row.iter().sum()).collect();
    let c_gap = c_derived.iter().zip(&scheme.c).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    r.note(format!("Σ_j A_ij vs c_i: {c_gap:.2e}; Σ b = {:.16}", b.iter().sum::<f64>()));

    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let l = DMatrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0));
    let linear = move |t: f64, x: &[f64]| -> Vec<f64> {
        (0..4).map(|i| (0..4).map(|j| l[(i, j)] * x[j]).sum::<f64>() + (3.0 * t).sin()).collect()
    };
    let nonlinear = |t: f64, x: &[f64]| -> Vec<f64> { vec![x[1] * t.cos(), -x[0].sin() - 0.1 * x[1] * x[1], x[0] * x[1] - x[2]] };
    let mut gap: f64 = 0.0;
    for (f, n) in [(&linear as &dyn Fn(f64, &[f64]) -> Vec<f64>, 4usize), (&nonlinear, 3)] {
        for _ in 0..8 {
            let u = random_vec(&mut rng, n);
            let (t, dt) = (rng.random_range(0.0..2.0), rng.random_range(0.01..0.3));
            let lsrk = lsrk45_step(|tt, x| Ok(f(tt, x)), &u, t, dt).map_err(err)?;
            let bt = butcher_step(&a, &b, &scheme.c, f, &u, t, dt);
            gap = gap.max(lsrk.iter().zip(&bt).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())));
        }
    }
    r.check(format!("low-storage vs Butcher form: {gap:.2e} ≤ 1e-14"), gap <= 1e-14);
    Ok(r)
}

// ---------------------------------------------------------------------------

/// Named criterion and the function that evaluates it.
type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 12] = [
        ("C1 spline correctness", c1_splines),
        ("C2 knot smoothing", c2_smoothing),
        ("C3 trace/inverse constants", c3_constants),
        ("C4 advection spectral radius", c4_spectra),
        ("C5 second-order spectral radius", c5_second_order),
        ("C6 1D wave convergence", c6_convergence_1d),
        ("C7 weight-adjusted mass fidelity", c7_wadg),
        ("C8 dispersion", c8_dispersion),
        ("C9 Laplacian eigenstudy", c9_eigen),
        ("C10 energy properties", c10_energy),
        ("C11 2D multi-patch convergence", c11_convergence_2d),
        ("C12 time integrator", c12_time),
    ];
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut failed = 0;
    for (name, f) in criteria {
        if let Some(flt) = &filter {
            if !name.to_lowercase().contains(&flt.to_lowercase()) {
                continue;
            }
        }
        let start = Instant::now();
        let outcome = f();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(rep) => {
                let status = if rep.passed() { "PASS" } else { "FAIL" };
                if !rep.passed() {
                    failed += 1;
                }
                println!("{status} {name} ({secs:.1} s)");
                for (c, ok) in &rep.checks {
                    println!("    [{}] {c}", if *ok { "ok" } else { "FAILED" });
                }
                for n in &rep.notes {
                    println!("    - {n}");
                }
            }
            Err(e) => {
                failed += 1;
                println!("FAIL {name} ({secs:.1} s): error: {e}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criterion/criteria failed");
        std::process::exit(1);
    }
}
