//! Spectral radius studies, discrete dispersion relations, Laplacian
//! eigenvalue studies, projection studies and convergence drivers.

use crate::error::{invalid, Error, Result};
use crate::geometry::{
    build_cartesian_multipatch, build_mesh_geometry, BoundaryCondition, CartesianMeshSpec, GlobalMapping, Mesh,
    Point,
};
use crate::linalg::{eigenvalues, eigenvalues_complex, eigenvector_complex, sym_gen_eig, sym_spectral_radius};
use crate::quadrature::composite_rule;
use crate::refops::{build_ref_operators, compute_constants, kron_apply, RefOperators1D};
use crate::semidiscrete::{Discretization, FieldState, Pde, PdeConfig, ScalarFn};
use crate::splines::{KnotFamily, SplineSpace1D};
use crate::timeint::{accurate_dt, estimate_dt, integrate, PdeOrder, DEFAULT_CT};
use crate::wadg::MassPath;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::Arc;

/// Spectral radius and full spectrum of a dense real matrix.
pub fn spectral_radius(a: &DMatrix<f64>) -> Result<(f64, Vec<Complex64>)> {
    let ev = eigenvalues(a)?;
    let rho = ev.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if !rho.is_finite() {
        return Err(Error::Numerical("non-finite eigenvalue".into()));
    }
    Ok((rho, ev))
}

/// One point of a spectral-radius sweep.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpectrumReport {
    /// Degree.
    pub p: usize,
    /// Spans.
    pub k: usize,
    /// Flux penalty.
    pub tau: f64,
    /// Knot family name.
    pub family: String,
    /// Spectral radius (square root of it for the second-order operator).
    pub rho: f64,
    /// Eigenvalues.
    #[serde(skip)]
    pub eigenvalues: Vec<Complex64>,
    /// Growth per span, `ρ / K`.
    pub slope: f64,
}

/// Single periodic patch on `[-1, 1]` in one dimension.
pub fn periodic_interval(family: KnotFamily, p: usize, k: usize) -> Result<Mesh> {
    build_cartesian_multipatch(&CartesianMeshSpec::unit_box(1, 1, family, p, k, BoundaryCondition::Periodic))
}

/// Dense advection operator `A_h` (β = 1) on a periodic patch of `[-1, 1]`.
pub fn advection_operator(family: KnotFamily, p: usize, k: usize, tau: f64) -> Result<DMatrix<f64>> {
    let disc = Discretization::new(
        periodic_interval(family, p, k)?,
        PdeConfig::new(Pde::Advection { beta: crate::semidiscrete::Velocity::Constant([1.0, 0.0, 0.0]), tau }),
        MassPath::Wadg,
    )?;
    disc.operator_matrix()
}

/// `ρ(A_h)` for 1D periodic advection.
pub fn advection_spectrum(family: KnotFamily, p: usize, k: usize, tau: f64) -> Result<SpectrumReport> {
    let a = advection_operator(family, p, k, tau)?;
    let (rho, ev) = spectral_radius(&a)?;
    Ok(SpectrumReport { p, k, tau, family: family.name().into(), rho, eigenvalues: ev, slope: rho / k as f64 })
}

/// Bendixson–Hirsch bounds of a real matrix: `(max|Re λ|, ρ(H), max|Im λ|, ‖S‖₂)`
/// where `H`, `S` are the symmetric and skew parts.
pub fn bendixson_hirsch(a: &DMatrix<f64>, ev: &[Complex64]) -> (f64, f64, f64, f64) {
    let re = ev.iter().map(|z| z.re.abs()).fold(0.0, f64::max);
    let im = ev.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
    let h = sym_spectral_radius(a);
    let s = (a - a.transpose()) * 0.5;
    let sn = s.singular_values().iter().fold(0.0f64, |m, v| m.max(*v));
    (re, h, im, sn)
}

/// Mesh used for second-order spectra: one Dirichlet patch on `[-1, 1]`.
pub fn second_order_interval(family: KnotFamily, p: usize, k: usize) -> Result<Mesh> {
    build_cartesian_multipatch(&CartesianMeshSpec::unit_box(1, 1, family, p, k, BoundaryCondition::Dirichlet))
}

/// `√ρ(A_h)` of the IPDG operator with the default penalty.
pub fn second_order_spectrum(family: KnotFamily, p: usize, k: usize) -> Result<SpectrumReport> {
    let disc = Discretization::new(second_order_interval(family, p, k)?, PdeConfig::wave2(1.0), MassPath::Wadg)?;
    let a = disc.operator_matrix()?;
    let (rho, ev) = spectral_radius(&a)?;
    let s = rho.sqrt();
    Ok(SpectrumReport { p, k, tau: disc.tau_ipdg, family: family.name().into(), rho: s, eigenvalues: ev, slope: s / k as f64 })
}

/// Least-squares slope of `y` against `x`.
pub fn fit_slope(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return invalid("slope fit needs at least two matching points");
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return invalid("degenerate abscissae");
    }
    Ok(sxy / sxx)
}

/// Least-squares rate of `log y` against `log x`.
pub fn fit_log_slope(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.iter().chain(y).any(|v| !(*v > 0.0)) {
        return invalid("log-log fit needs positive data");
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    fit_slope(&lx, &ly)
}

/// Discrete dispersion data for one patch with Bloch-periodic coupling.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DispersionReport {
    /// Degree.
    pub p: usize,
    /// Spans.
    pub k_spans: usize,
    /// Flux penalty.
    pub tau: f64,
    /// Wavenumbers.
    pub wavenumbers: Vec<f64>,
    /// Normalized wavenumbers `k · L / N_dofs`.
    pub normalized: Vec<f64>,
    /// Physical-branch discrete frequencies.
    #[serde(skip)]
    pub omega_h: Vec<Complex64>,
    /// Real parts of `ω_h`.
    pub omega_re: Vec<f64>,
    /// Imaginary parts of `ω_h`.
    pub omega_im: Vec<f64>,
    /// `|k − Re ω_h|`.
    pub errors: Vec<f64>,
    /// Modal overlap of the selected eigenvector with the exact wave.
    pub overlap: Vec<f64>,
}

/// Range of normalized wavenumbers `k · L / N_dofs` treated as the resolved
/// regime when fitting dispersion-error rates: above the round-off floor,
/// below the onset of the unresolved branch.
pub const RESOLVED_REGIME: (f64, f64) = (0.2, 0.6);

/// Errors below this are considered round-off and excluded from rate fits.
pub const DISPERSION_FLOOR: f64 = 1e-12;

impl DispersionReport {
    /// Log-log slope of the dispersion error against the wavenumber over
    /// normalized wavenumbers in `[lo, hi]`.
    pub fn resolved_rate(&self, lo: f64, hi: f64) -> Result<f64> {
        let (x, y): (Vec<f64>, Vec<f64>) = self
            .wavenumbers
            .iter()
            .zip(&self.normalized)
            .zip(&self.errors)
            .filter(|((_, &kn), &e)| kn >= lo && kn <= hi && e > DISPERSION_FLOOR)
            .map(|((&k, _), &e)| (k, e))
            .unzip();
        fit_log_slope(&x, &y)
    }
}

/// Bloch operator `A(κ) = −M^{-1}(V + F(κ))` of `φ_t + φ_x = 0` on one patch
/// `[-1, 1]` whose right neighbour is itself shifted by `L = 2` with phase
/// `e^{iκL}`.
pub fn bloch_advection_operator(ops: &RefOperators1D, tau: f64, kappa: f64) -> Result<DMatrix<Complex64>> {
    let n = ops.dim();
    let mut bw = ops.basis_at_quad.clone();
    for q in 0..ops.nq() {
        bw.row_mut(q).scale_mut(ops.rule.weights[q]);
    }
    // C_ij = ∫ B_i B_j'.
    let c = bw.transpose() * &ops.deriv_at_quad;
    let el = &ops.endpoint_values[0];
    let er = &ops.endpoint_values[1];
    let phase = Complex64::from_polar(1.0, 2.0 * kappa);
    let mut b = DMatrix::<Complex64>::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let vol = 0.5 * (c[(i, j)] - c[(j, i)]);
            let own = 0.5 * tau * (er[i] * er[j] + el[i] * el[j]);
            let mut z = Complex64::new(vol + own, 0.0);
            // Right face: φ⁺ = e^{iκL} φ(−1); left face: φ⁺ = e^{−iκL} φ(1).
            z += phase * (0.5 - 0.5 * tau) * er[i] * el[j];
            z += phase.conj() * (-0.5 - 0.5 * tau) * el[i] * er[j];
            b[(i, j)] = z;
        }
    }
    let m = ops.mass.map(|v| Complex64::new(v, 0.0));
    let lu = m.lu();
    let x = lu.solve(&b).ok_or_else(|| Error::Numerical("singular mass matrix".into()))?;
    Ok(-x)
}

/// Coefficients of the L² projection of `e^{iκx}` on `[-1, 1]`.
fn project_plane_wave(ops: &RefOperators1D, kappa: f64) -> Result<DVector<Complex64>> {
    let n = ops.dim();
    let mut rhs = DVector::<Complex64>::zeros(n);
    for (q, (&x, &w)) in ops.rule.points.iter().zip(&ops.rule.weights).enumerate() {
        let e = Complex64::from_polar(1.0, kappa * x);
        for i in 0..n {
            rhs[i] += w * ops.basis_at_quad[(q, i)] * e;
        }
    }
    let m = ops.mass.map(|v| Complex64::new(v, 0.0));
    m.lu().solve(&rhs).ok_or_else(|| Error::Numerical("singular mass matrix".into()))
}

/// Discrete dispersion relation of periodic advection: `ω_h = iλ` with the
/// eigenvalue `λ` of the Bloch operator whose eigenvector has maximal
/// `M`-overlap with the projected exact wave `e^{iκx}`.
pub fn dispersion_relation(p: usize, k_spans: usize, family: KnotFamily, tau: f64, wavenumbers: &[f64]) -> Result<DispersionReport> {
    if wavenumbers.is_empty() {
        return invalid("dispersion needs at least one wavenumber");
    }
    let space = SplineSpace1D::from_family(family, p, k_spans)?;
    let ops = RefOperators1D::with_default_rule(space)?;
    let n = ops.dim();
    let mc = ops.mass.map(|v| Complex64::new(v, 0.0));
    let rows: Vec<Result<(Complex64, f64)>> = crate::par::map(wavenumbers, |&kappa| {
        let a = bloch_advection_operator(&ops, tau, kappa)?;
        let ev = eigenvalues_complex(&a)?;
        let target = project_plane_wave(&ops, kappa)?;
        let mt = &mc * &target;
        let tn = target.dotc(&mt).re.sqrt();
        let mut best = (Complex64::new(0.0, 0.0), -1.0);
        for &lam in &ev {
            let v = eigenvector_complex(&a, lam)?;
            let vn = v.dotc(&(&mc * &v)).re.sqrt();
            let ov = v.dotc(&mt).norm() / (vn * tn);
            if ov > best.1 {
                best = (Complex64::new(0.0, 1.0) * lam, ov);
            }
        }
        Ok(best)
    });
    let mut omega_h = Vec::new();
    let mut overlap = Vec::new();
    for r in rows {
        let (w, o) = r?;
        omega_h.push(w);
        overlap.push(o);
    }
    let errors = wavenumbers.iter().zip(&omega_h).map(|(k, w)| (k - w.re).abs()).collect();
    Ok(DispersionReport {
        p,
        k_spans,
        tau,
        wavenumbers: wavenumbers.to_vec(),
        normalized: wavenumbers.iter().map(|k| k * 2.0 / n as f64).collect(),
        omega_re: omega_h.iter().map(|w| w.re).collect(),
        omega_im: omega_h.iter().map(|w| w.im).collect(),
        omega_h,
        errors,
        overlap,
    })
}

/// One discrete Laplacian eigenpair and its errors.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EigenPair {
    /// Mode number (1-based).
    pub mode: usize,
    /// Discrete eigenvalue.
    pub lambda_h: f64,
    /// Exact eigenvalue `k²π²`.
    pub lambda: f64,
    /// `|λ_h − λ| / λ`.
    pub rel_error: f64,
    /// `‖p_k − p_{h,k}‖_{L²}` after normalization.
    pub vec_error: f64,
}

/// Dirichlet Laplacian eigenpairs on `(0, 1)` with the end basis functions
/// removed (strong boundary conditions).
pub fn laplace_eigenstudy(p: usize, k: usize, family: KnotFamily) -> Result<Vec<EigenPair>> {
    if p < 1 {
        return invalid("eigenstudy needs p ≥ 1");
    }
    let space = SplineSpace1D::from_family(family, p, k)?;
    let kv = space.knot_vector().clone();
    let dim = space.dim();
    if dim < 3 {
        return invalid("space too small after removing the end functions");
    }
    // Oversampled rule for eigenvector errors.
    let rule = composite_rule(&kv, p + 6)?;
    let ops = build_ref_operators(&space, &rule)?;
    let keep = 1..dim - 1;
    let n = dim - 2;
    // Mapping ξ ∈ [-1,1] → x = (ξ+1)/2: K_x = 2 K̂, M_x = M̂ / 2.
    let kx = ops.stiffness.view((1, 1), (n, n)) * 2.0;
    let mx = ops.mass.view((1, 1), (n, n)) * 0.5;
    let (vals, vecs) = sym_gen_eig(&kx.into_owned(), &mx.into_owned())?;
    let b = ops.basis_at_quad.columns(keep.start, n).into_owned();
    let pairs = (0..n)
        .map(|m| {
            let mode = m + 1;
            let lambda = (mode as f64 * PI).powi(2);
            let c = vecs.column(m);
            let vals_q = &b * c;
            // B-orthonormal columns already give unit L² norm on (0,1).
            let exact: Vec<f64> = rule.points.iter().map(|&xi| 2f64.sqrt() * (mode as f64 * PI * 0.5 * (xi + 1.0)).sin()).collect();
            let inner: f64 = (0..rule.len()).map(|q| 0.5 * rule.weights[q] * vals_q[q] * exact[q]).sum();
            let s = if inner < 0.0 { -1.0 } else { 1.0 };
            let err: f64 = (0..rule.len()).map(|q| 0.5 * rule.weights[q] * (s * vals_q[q] - exact[q]).powi(2)).sum();
            EigenPair { mode, lambda_h: vals[m], lambda, rel_error: (vals[m] - lambda).abs() / lambda, vec_error: err.sqrt() }
        })
        .collect();
    Ok(pairs)
}

/// Number of top eigenvalues whose relative error exceeds `factor ×` the
/// median relative error of the rest of the upper half of the spectrum.
pub fn count_outliers(pairs: &[EigenPair], candidates: usize, factor: f64) -> usize {
    let n = pairs.len();
    if n < 2 * candidates + 2 {
        return 0;
    }
    let mut tail: Vec<f64> = pairs[n / 2..n - candidates].iter().map(|e| e.rel_error).collect();
    tail.sort_by(f64::total_cmp);
    let median = tail[tail.len() / 2];
    pairs[n - candidates..].iter().filter(|e| e.rel_error > factor * median).count()
}

/// Basis tables of a mesh on an oversampled rule, for error evaluation
/// independent of the solver quadrature.
pub struct ErrorEvaluator {
    geoms: Vec<crate::geometry::PatchGeometry>,
    basis: Vec<Vec<DMatrix<f64>>>,
    weights: Vec<Vec<f64>>,
}

impl ErrorEvaluator {
    /// Tables with `points_per_span` Gauss points per span.
    pub fn new(mesh: &Mesh, points_per_span: usize) -> Result<Self> {
        let geoms = build_mesh_geometry(mesh, Some(points_per_span))?;
        let mut basis = Vec::new();
        let mut weights = Vec::new();
        for (patch, g) in mesh.patches.iter().zip(&geoms) {
            let mut b = Vec::new();
            for (f, r) in patch.space.factors().iter().zip(&g.volume_rule.factors) {
                let mut m = DMatrix::zeros(r.len(), f.dim());
                for (q, &x) in r.points.iter().enumerate() {
                    let (first, ders) = f.eval_nonzero(x, 0);
                    for (j, v) in ders[0].iter().enumerate() {
                        m[(q, first + j)] = *v;
                    }
                }
                b.push(m);
            }
            basis.push(b);
            weights.push(g.volume_rule.weights.clone());
        }
        Ok(Self { geoms, basis, weights })
    }

    /// `(Σ_k ∫ (u_h − f)² J)^{1/2}`.
    pub fn l2_error(&self, coeffs: &[&[f64]], f: &dyn Fn(&Point) -> f64) -> Result<f64> {
        let mut s = 0.0;
        for (k, g) in self.geoms.iter().enumerate() {
            let fac: Vec<&DMatrix<f64>> = self.basis[k].iter().collect();
            let uq = kron_apply(&fac, coeffs[k])?;
            for q in 0..uq.len() {
                s += (uq[q] - f(&g.x[q])).powi(2) * g.j[q] * self.weights[k][q];
            }
        }
        Ok(s.sqrt())
    }

    /// `(Σ_k ∫ (u_h − v_h)² J)^{1/2}` between two coefficient sets.
    pub fn l2_difference(&self, a: &[&[f64]], b: &[&[f64]]) -> Result<f64> {
        let mut s = 0.0;
        for (k, g) in self.geoms.iter().enumerate() {
            let fac: Vec<&DMatrix<f64>> = self.basis[k].iter().collect();
            let diff: Vec<f64> = a[k].iter().zip(b[k]).map(|(x, y)| x - y).collect();
            let uq = kron_apply(&fac, &diff)?;
            for q in 0..uq.len() {
                s += uq[q] * uq[q] * g.j[q] * self.weights[k][q];
            }
        }
        Ok(s.sqrt())
    }
}

/// Result of one projection comparison.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProjectionResult {
    /// Mesh size `h = (upper − lower) / (patches · K)`.
    pub h: f64,
    /// Total dofs.
    pub dofs: usize,
    /// Error of the exact L² projection.
    pub l2_error: f64,
    /// Error of the weight-adjusted projection.
    pub wadg_error: f64,
    /// L² distance between the two projections.
    pub difference: f64,
}

/// Parameters of a 2D warped-box projection study.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProjectionSetup {
    /// Degree.
    pub p: usize,
    /// Spans per patch side.
    pub k: usize,
    /// Patches per side.
    pub patches: usize,
    /// Warp strength.
    pub alpha: f64,
    /// Target frequency: `cos(mπx/2) cos(mπy/2)`.
    pub mode: usize,
    /// Knot family.
    pub family: KnotFamily,
}

/// Exact and weight-adjusted L² projections of `cos(mπx/2)cos(mπy/2)` on a
/// warped `[-1,1]²` multi-patch mesh.
pub fn projection_study(setup: &ProjectionSetup) -> Result<ProjectionResult> {
    let mut spec = CartesianMeshSpec::unit_box(2, setup.patches, setup.family, setup.p, setup.k, BoundaryCondition::Dirichlet);
    spec.global = GlobalMapping::Warp2d { alpha: setup.alpha };
    let mesh = build_cartesian_multipatch(&spec)?;
    let m = setup.mode as f64;
    let f = move |x: &Point| (m * PI * x[0] / 2.0).cos() * (m * PI * x[1] / 2.0).cos();
    let exact = Discretization::new(mesh.clone(), PdeConfig::advection([1.0, 0.0, 0.0]), MassPath::Exact)?;
    let wadg = Discretization::new(mesh.clone(), PdeConfig::advection([1.0, 0.0, 0.0]), MassPath::Wadg)?;
    let ce = exact.project(&f)?;
    let cw = wadg.project(&f)?;
    let ev = ErrorEvaluator::new(&mesh, setup.p + 4)?;
    let re: Vec<&[f64]> = ce.iter().map(|v| v.as_slice()).collect();
    let rw: Vec<&[f64]> = cw.iter().map(|v| v.as_slice()).collect();
    Ok(ProjectionResult {
        h: 2.0 / (setup.patches * setup.k) as f64,
        dofs: mesh.total_dofs(),
        l2_error: ev.l2_error(&re, &f)?,
        wadg_error: ev.l2_error(&rw, &f)?,
        difference: ev.l2_difference(&re, &rw)?,
    })
}

/// 1D L² projection error of `cos((2m−1)πx/2)` on `[-1, 1]` with one patch.
pub fn projection_error_1d(p: usize, k: usize, family: KnotFamily, mode: usize) -> Result<f64> {
    let mesh = build_cartesian_multipatch(&CartesianMeshSpec::unit_box(1, 1, family, p, k, BoundaryCondition::Dirichlet))?;
    let w = (2.0 * mode as f64 - 1.0) * PI / 2.0;
    let f = move |x: &Point| (w * x[0]).cos();
    // Oversample so that the right-hand side integral resolves the target.
    let pts = (p + 1).max(4 * (mode / k.max(1) + 1)).min(crate::quadrature::MAX_GAUSS_POINTS);
    let space = SplineSpace1D::from_family(family, p, k)?;
    let rule = composite_rule(space.knot_vector(), pts)?;
    let ops = build_ref_operators(&space, &rule)?;
    let n = ops.dim();
    let mut rhs = vec![0.0; n];
    for (q, (&x, &wq)) in rule.points.iter().zip(&rule.weights).enumerate() {
        let fx = f(&[x, 0.0, 0.0]);
        for (i, r) in rhs.iter_mut().enumerate() {
            *r += wq * ops.basis_at_quad[(q, i)] * fx;
        }
    }
    ops.mass_factorization.solve_in_place(&mut rhs);
    let ev = ErrorEvaluator::new(&mesh, pts.max(p + 4).min(crate::quadrature::MAX_GAUSS_POINTS))?;
    ev.l2_error(&[&rhs], &f)
}

/// Which first- or second-order formulation a convergence study uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Formulation {
    /// First-order system in `(p, u)`.
    Wave1,
    /// Second-order IPDG in `p`.
    Wave2,
}

/// One row of a convergence study.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConvergenceRow {
    /// Mesh size.
    pub h: f64,
    /// Spans per patch side.
    pub k: usize,
    /// Patches per side.
    pub patches: usize,
    /// Scalar dofs (pressure).
    pub dofs: usize,
    /// Timestep.
    pub dt: f64,
    /// Steps.
    pub steps: usize,
    /// Pressure L² error at the final time.
    pub error: f64,
    /// Rate against the previous row (`NaN` for the first).
    pub rate: f64,
    /// Weight-adjusted vs exact-mass solution difference (when computed).
    pub mass_difference: Option<f64>,
}

/// Mesh, time and flux settings of a convergence study.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConvergenceSetup {
    /// Dimension (1 or 2).
    pub d: usize,
    /// Formulation.
    pub formulation: Formulation,
    /// Degree.
    pub p: usize,
    /// `(patches per side, spans per patch)` per level.
    pub levels: Vec<(usize, usize)>,
    /// Knot family.
    pub family: KnotFamily,
    /// Warp strength (2D only).
    pub alpha: f64,
    /// Final time.
    pub final_time: f64,
    /// Fixed timestep (overrides the estimate).
    pub dt: Option<f64>,
    /// CFL factor `C_t`.
    pub cfl: f64,
    /// Mass inversion path.
    pub mass: MassPath,
    /// Also run the other mass path and report the solution difference.
    pub compare_mass: bool,
    /// First-order penalties.
    pub tau_p: f64,
    /// First-order penalties.
    pub tau_u: f64,
    /// Gauss points per span of the solver rule (`None`: `p + 1`).
    pub quad_points: Option<usize>,
    /// Second-order penalty as a multiple of the coercivity bound.
    pub ipdg_factor: f64,
}

impl ConvergenceSetup {
    /// 1D standing-wave study on `[-1, 1]` with `levels`.
    pub fn one_d(formulation: Formulation, p: usize, levels: Vec<(usize, usize)>) -> Self {
        Self {
            d: 1,
            formulation,
            p,
            levels,
            family: KnotFamily::Uniform,
            alpha: 0.0,
            final_time: 0.5,
            dt: None,
            cfl: DEFAULT_CT,
            mass: MassPath::Wadg,
            compare_mass: false,
            tau_p: 1.0,
            tau_u: 1.0,
            quad_points: None,
            ipdg_factor: 2.0,
        }
    }

    /// 2D warped standing-wave study on `[-1, 1]²`.
    pub fn two_d(formulation: Formulation, p: usize, levels: Vec<(usize, usize)>, alpha: f64) -> Self {
        Self { d: 2, alpha, ..Self::one_d(formulation, p, levels) }
    }
}

/// Exact standing wave: pressure and velocity at `(x, t)`.
fn standing_wave(d: usize, x: &Point, t: f64) -> (f64, [f64; 3]) {
    let w = 1.5 * PI;
    if d == 1 {
        let p = (w * x[0]).cos() * (w * t).cos();
        let u = (w * x[0]).sin() * (w * t).sin();
        (p, [u, 0.0, 0.0])
    } else {
        let om = w * 2f64.sqrt();
        let p = (w * x[0]).cos() * (w * x[1]).cos() * (om * t).cos();
        let s = (om * t).sin() / 2f64.sqrt();
        (p, [(w * x[0]).sin() * (w * x[1]).cos() * s, (w * x[0]).cos() * (w * x[1]).sin() * s, 0.0])
    }
}

/// Builds the mesh of one convergence level.
pub fn convergence_mesh(setup: &ConvergenceSetup, patches: usize, k: usize) -> Result<Mesh> {
    let mut spec = CartesianMeshSpec::unit_box(setup.d, patches, setup.family, setup.p, k, BoundaryCondition::Dirichlet);
    if setup.d == 2 && setup.alpha != 0.0 {
        spec.global = GlobalMapping::Warp2d { alpha: setup.alpha };
    }
    build_cartesian_multipatch(&spec)
}

/// Output of one standing-wave solve.
pub struct StandingWaveSolution {
    /// Discretization used.
    pub disc: Discretization,
    /// Initial pressure coefficients per patch.
    pub initial: Vec<Vec<f64>>,
    /// Final pressure coefficients per patch.
    pub coeffs: Vec<Vec<f64>>,
    /// Timestep used.
    pub dt: f64,
    /// Number of steps.
    pub steps: usize,
}

/// Runs one level. The initial pressure is the L² projection on the chosen
/// mass path unless `initial` supplies the coefficients (used to compare
/// mass paths from identical initial data).
pub fn solve_standing_wave(
    setup: &ConvergenceSetup,
    mesh: &Mesh,
    mass: MassPath,
    initial: Option<&[Vec<f64>]>,
) -> Result<StandingWaveSolution> {
    let d = setup.d;
    let pde = match setup.formulation {
        Formulation::Wave1 => Pde::Wave1 { c: 1.0, tau_p: setup.tau_p, tau_u: setup.tau_u },
        Formulation::Wave2 => {
            let geoms = build_mesh_geometry(mesh, setup.quad_points)?;
            let refs: Vec<Vec<Arc<RefOperators1D>>> = mesh
                .patches
                .iter()
                .map(|p| {
                    p.space
                        .factors()
                        .iter()
                        .map(|f| {
                            let rule = composite_rule(f.knot_vector(), setup.quad_points.unwrap_or(f.degree() + 1))?;
                            Ok(Arc::new(build_ref_operators(f, &rule)?))
                        })
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<_>>()?;
            let bound = crate::semidiscrete::penalty_bound(mesh, &geoms, &refs)?;
            Pde::Wave2 { c: 1.0, tau: Some(setup.ipdg_factor * bound) }
        }
    };
    let zero: ScalarFn = Arc::new(|_, _| 0.0);
    let mut cfg = PdeConfig::new(pde);
    cfg.p_dirichlet = Some(zero);
    let disc = Discretization::with_quadrature(mesh.clone(), cfg, mass, setup.quad_points)?;
    let mut state = disc.zero_state();
    let p0 = match initial {
        Some(c) => c.to_vec(),
        None => disc.project(&|x| standing_wave(d, x, 0.0).0)?,
    };
    for (k, c) in p0.iter().enumerate() {
        state.component_mut(k, 0).copy_from_slice(c);
    }
    // Velocity and ṗ vanish at t = 0.
    let constants = compute_constants(&disc.refs[0][0], d)?;
    let order = match setup.formulation {
        Formulation::Wave1 => PdeOrder::First,
        Formulation::Wave2 => PdeOrder::Second,
    };
    let est = estimate_dt(&constants, &disc.geoms, 1.0, setup.cfl, order)?;
    let kmax = mesh.patches.iter().map(|p| p.space.factors()[0].num_spans()).max().unwrap_or(1);
    let h = 2.0 / (patches_per_side(mesh) * kmax) as f64;
    let dt = setup.dt.unwrap_or_else(|| accurate_dt(est.dt, h, setup.p));
    let template = state.clone();
    let (steps, dt_used) = integrate(
        |t, u| Ok(disc.rhs(&template.with_data(u.to_vec())?, t)?.data),
        &mut state.data,
        0.0,
        setup.final_time,
        dt,
        |_, _, _| Ok(()),
    )?;
    let coeffs: Vec<Vec<f64>> = (0..mesh.patches.len()).map(|k| state.component(k, 0).to_vec()).collect();
    Ok(StandingWaveSolution { disc, initial: p0, coeffs, dt: dt_used, steps })
}

fn patches_per_side(mesh: &Mesh) -> usize {
    (mesh.patches.len() as f64).powf(1.0 / mesh.d as f64).round() as usize
}

/// Convergence study of the standing wave at `final_time`.
pub fn convergence_study(setup: &ConvergenceSetup) -> Result<Vec<ConvergenceRow>> {
    if setup.levels.is_empty() {
        return invalid("convergence study needs at least one level");
    }
    if setup.d != 1 && setup.d != 2 {
        return invalid("convergence studies support d = 1 or 2");
    }
    let mut rows: Vec<ConvergenceRow> = Vec::new();
    for &(patches, k) in &setup.levels {
        let mesh = convergence_mesh(setup, patches, k)?;
        let sol = solve_standing_wave(setup, &mesh, setup.mass, None)?;
        let (coeffs, dt, steps) = (&sol.coeffs, sol.dt, sol.steps);
        let ev = ErrorEvaluator::new(&mesh, setup.quad_points.unwrap_or(setup.p + 1))?;
        let refs: Vec<&[f64]> = coeffs.iter().map(|v| v.as_slice()).collect();
        let d = setup.d;
        let tf = setup.final_time;
        let error = ev.l2_error(&refs, &|x| standing_wave(d, x, tf).0)?;
        let mass_difference = if setup.compare_mass {
            let other = match setup.mass {
                MassPath::Wadg => MassPath::Exact,
                MassPath::Exact => MassPath::Wadg,
            };
            let other_sol = solve_standing_wave(setup, &mesh, other, Some(&sol.initial))?;
            let r2: Vec<&[f64]> = other_sol.coeffs.iter().map(|v| v.as_slice()).collect();
            Some(ev.l2_difference(&refs, &r2)?)
        } else {
            None
        };
        let h = 2.0 / (patches * k) as f64;
        let rate = match rows.last() {
            Some(prev) => (prev.error / error).ln() / (prev.h / h).ln(),
            None => f64::NAN,
        };
        rows.push(ConvergenceRow { h, k, patches, dofs: mesh.total_dofs(), dt, steps, error, rate, mass_difference });
    }
    Ok(rows)
}

/// Result of the 3D smoke test.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SmokeReport {
    /// Steps taken.
    pub steps: usize,
    /// Initial energy.
    pub energy_initial: f64,
    /// Final energy.
    pub energy_final: f64,
    /// Whether the energy never increased beyond round-off.
    pub energy_monotone: bool,
    /// Max |RHS| for a constant pressure state.
    pub constant_residual: f64,
    /// Whether all outputs stayed finite.
    pub finite: bool,
}

/// First-order wave on an affine `2 × 1 × 1`-patch box: energy decay,
/// constant preservation and finiteness over `steps` steps.
pub fn smoke3d(p: usize, k: usize, steps: usize, mass: MassPath) -> Result<SmokeReport> {
    let mut spec = CartesianMeshSpec::unit_box(3, 1, KnotFamily::Uniform, p, k, BoundaryCondition::Neumann);
    spec.patches_per_axis = vec![2, 1, 1];
    spec.upper = vec![3.0, 1.0, 1.0];
    let mesh = build_cartesian_multipatch(&spec)?;
    let disc = Discretization::new(mesh, PdeConfig::wave1(1.0), mass)?;
    // Constant preservation.
    let mut cst = disc.zero_state();
    let one = disc.project(&|_| 1.0)?;
    for (k, c) in one.iter().enumerate() {
        cst.component_mut(k, 0).copy_from_slice(c);
    }
    let r = disc.rhs(&cst, 0.0)?;
    let constant_residual = r.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    // Gaussian pulse.
    let mut state = disc.zero_state();
    let g = disc.project(&|x| (-10.0 * ((x[0] - 1.0).powi(2) + x[1].powi(2) + x[2].powi(2))).exp())?;
    for (k, c) in g.iter().enumerate() {
        state.component_mut(k, 0).copy_from_slice(c);
    }
    let constants = compute_constants(&disc.refs[0][0], 3)?;
    let est = estimate_dt(&constants, &disc.geoms, 1.0, DEFAULT_CT, PdeOrder::First)?;
    let e0 = disc.energy(&state)?;
    let mut last = e0;
    let mut monotone = true;
    let template: FieldState = state.clone();
    let (n, _) = integrate(
        |t, u| Ok(disc.rhs(&template.with_data(u.to_vec())?, t)?.data),
        &mut state.data,
        0.0,
        est.dt * steps as f64,
        est.dt,
        |_, _, u| {
            let e = disc.energy(&template.with_data(u.to_vec())?)?;
            if e > last * (1.0 + 1e-12) {
                monotone = false;
            }
            last = e;
            Ok(())
        },
    )?;
    Ok(SmokeReport {
        steps: n,
        energy_initial: e0,
        energy_final: last,
        energy_monotone: monotone,
        constant_residual,
        finite: state.data.iter().all(|v| v.is_finite()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_spectral_radius() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -3.0, 2.0]));
        assert!((spectral_radius(&a).unwrap().0 - 3.0).abs() < 1e-14);
    }

    #[test]
    fn bloch_operator_at_zero_matches_periodic_operator() {
        let ops = RefOperators1D::with_default_rule(SplineSpace1D::uniform(3, 5).unwrap()).unwrap();
        let a = bloch_advection_operator(&ops, 0.5, 0.0).unwrap();
        let b = advection_operator(KnotFamily::Uniform, 3, 5, 0.5).unwrap();
        for i in 0..b.nrows() {
            for j in 0..b.ncols() {
                assert!((a[(i, j)].re - b[(i, j)]).abs() < 1e-10);
                assert!(a[(i, j)].im.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn slope_fit() {
        assert!((fit_slope(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 2.0).abs() < 1e-14);
        assert!(fit_slope(&[1.0], &[1.0]).is_err());
    }
}
