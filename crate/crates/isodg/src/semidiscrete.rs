//! Energy-stable DG right-hand sides on multi-patch meshes.
//!
//! Three model problems are supported:
//!
//! - linear advection `φ_t + ∇·(βφ) = 0` in skew-symmetric split form with a
//!   `τ`-weighted upwind penalty;
//! - the first-order acoustic system `p_t/c² + ∇·u = f`, `u_t + ∇p = 0` with a
//!   weak/strong skew-symmetric pairing and penalty fluxes `τ_p`, `τ_u`;
//! - the second-order wave equation `p_tt/c² − Δp = f` discretized by the
//!   symmetric interior penalty method.
//!
//! Evaluation proceeds in two phases so that patches can be processed in
//! parallel without locks: first every patch computes its traces on all of
//! its faces, then every patch assembles volume and face terms using its own
//! traces and read-only neighbour traces, and applies its mass inverse.

use crate::error::{invalid, Error, Result};
use crate::geometry::{
    build_mesh_geometry, BoundaryCondition, FaceKind, Mesh, PatchGeometry, Point,
};
use crate::refops::{compute_constants, kron_apply, RefOperators1D};
use crate::wadg::{to_quad, MassPath, WeightedMassOperator};
use nalgebra::DMatrix;
use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

/// Scalar space-time function `g(x, t)`.
pub type ScalarFn = Arc<dyn Fn(&Point, f64) -> f64 + Send + Sync>;
/// Vector field `β(x)`.
pub type VectorFn = Arc<dyn Fn(&Point) -> Point + Send + Sync>;

/// Advection velocity.
#[derive(Clone)]
pub enum Velocity {
    /// Constant vector.
    Constant(Point),
    /// Divergence-free field sampled at quadrature points.
    Field(VectorFn),
}

impl Velocity {
    fn at(&self, x: &Point) -> Point {
        match self {
            Velocity::Constant(b) => *b,
            Velocity::Field(f) => f(x),
        }
    }
}

/// Model problem and flux parameters.
#[derive(Clone)]
pub enum Pde {
    /// Linear advection.
    Advection {
        /// Velocity.
        beta: Velocity,
        /// Penalty `τ ≥ 0` (0: central, 1: upwind).
        tau: f64,
    },
    /// First-order acoustic system.
    Wave1 {
        /// Wavespeed.
        c: f64,
        /// Pressure penalty.
        tau_p: f64,
        /// Velocity penalty.
        tau_u: f64,
    },
    /// Second-order acoustic wave equation (SIPG).
    Wave2 {
        /// Wavespeed.
        c: f64,
        /// Penalty; `None` selects twice the coercivity bound.
        tau: Option<f64>,
    },
}

/// PDE plus boundary and forcing data.
#[derive(Clone)]
pub struct PdeConfig {
    /// Model problem.
    pub pde: Pde,
    /// Dirichlet pressure data `p_D(x, t)`.
    pub p_dirichlet: Option<ScalarFn>,
    /// Neumann normal-flux data `u_N(x, t)`.
    pub u_neumann: Option<ScalarFn>,
    /// Forcing `f(x, t)`.
    pub forcing: Option<ScalarFn>,
}

impl fmt::Debug for PdeConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match &self.pde {
            Pde::Advection { tau, .. } => format!("advection(tau={tau})"),
            Pde::Wave1 { c, tau_p, tau_u } => format!("wave1(c={c}, tau_p={tau_p}, tau_u={tau_u})"),
            Pde::Wave2 { c, tau } => format!("wave2(c={c}, tau={tau:?})"),
        };
        f.debug_struct("PdeConfig").field("pde", &kind).finish()
    }
}

impl PdeConfig {
    /// Configuration without boundary data or forcing.
    pub fn new(pde: Pde) -> Self {
        Self { pde, p_dirichlet: None, u_neumann: None, forcing: None }
    }

    /// Default flux parameters: advection `τ = 1`.
    pub fn advection(beta: Point) -> Self {
        Self::new(Pde::Advection { beta: Velocity::Constant(beta), tau: 1.0 })
    }

    /// Default flux parameters: `τ_p = τ_u = 1`.
    pub fn wave1(c: f64) -> Self {
        Self::new(Pde::Wave1 { c, tau_p: 1.0, tau_u: 1.0 })
    }

    /// Default flux parameter: `τ = 2 ×` coercivity bound.
    pub fn wave2(c: f64) -> Self {
        Self::new(Pde::Wave2 { c, tau: None })
    }

    /// Number of solution components for a `d`-dimensional problem.
    pub fn components(&self, d: usize) -> usize {
        match self.pde {
            Pde::Advection { .. } => 1,
            Pde::Wave1 { .. } => 1 + d,
            // Second-order system integrated as (p, ṗ).
            Pde::Wave2 { .. } => 2,
        }
    }
}

/// Per-patch, per-component coefficient arrays stored contiguously.
///
/// Patch `k` occupies `data[offsets[k] .. offsets[k] + components·dims[k]]`
/// with components stored one after another.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldState {
    /// Flat coefficient storage.
    pub data: Vec<f64>,
    /// Scalar dimension of each patch space.
    pub dims: Vec<usize>,
    /// Start of each patch block.
    pub offsets: Vec<usize>,
    /// Components per patch.
    pub components: usize,
}

impl FieldState {
    /// Zero state.
    pub fn zeros(dims: &[usize], components: usize) -> Self {
        let mut offsets = Vec::with_capacity(dims.len());
        let mut o = 0;
        for &n in dims {
            offsets.push(o);
            o += n * components;
        }
        Self { data: vec![0.0; o], dims: dims.to_vec(), offsets, components }
    }

    /// State with the same layout and the given data.
    pub fn with_data(&self, data: Vec<f64>) -> Result<Self> {
        if data.len() != self.data.len() {
            return invalid("state length mismatch");
        }
        Ok(Self { data, ..self.clone() })
    }

    /// Coefficients of component `c` on patch `k`.
    pub fn component(&self, k: usize, c: usize) -> &[f64] {
        let n = self.dims[k];
        let s = self.offsets[k] + c * n;
        &self.data[s..s + n]
    }

    /// Mutable coefficients of component `c` on patch `k`.
    pub fn component_mut(&mut self, k: usize, c: usize) -> &mut [f64] {
        let n = self.dims[k];
        let s = self.offsets[k] + c * n;
        &mut self.data[s..s + n]
    }

    /// Total length.
    pub fn len(&self) -> usize {
        self.data.len()
    }

    /// Whether the state is empty.
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Sum-factorization factors of one axis.
#[derive(Clone, Debug)]
struct AxisOps {
    b: DMatrix<f64>,
    d: DMatrix<f64>,
    bt: DMatrix<f64>,
    dt: DMatrix<f64>,
    /// Endpoint value rows `1 × n` and their transposes.
    e: [DMatrix<f64>; 2],
    et: [DMatrix<f64>; 2],
    de: [DMatrix<f64>; 2],
    det: [DMatrix<f64>; 2],
}

impl AxisOps {
    fn new(r: &RefOperators1D) -> Self {
        let n = r.dim();
        let row = |v: &Vec<f64>| DMatrix::from_row_slice(1, n, v);
        let e = [row(&r.endpoint_values[0]), row(&r.endpoint_values[1])];
        let de = [row(&r.endpoint_derivs[0]), row(&r.endpoint_derivs[1])];
        Self {
            b: r.basis_at_quad.clone(),
            d: r.deriv_at_quad.clone(),
            bt: r.basis_at_quad.transpose(),
            dt: r.deriv_at_quad.transpose(),
            et: [e[0].transpose(), e[1].transpose()],
            det: [de[0].transpose(), de[1].transpose()],
            e,
            de,
        }
    }
}

/// Tensor kernels of one patch (interpolation, gradients, face traces and
/// their transposes).
#[derive(Clone, Debug)]
pub struct PatchKernels {
    axes: Vec<Arc<AxisOps>>,
    d: usize,
}

impl PatchKernels {
    fn factors_volume(&self, deriv_axis: Option<usize>, transpose: bool) -> Vec<&DMatrix<f64>> {
        (0..self.d)
            .map(|a| {
                let ax = &self.axes[a];
                match (Some(a) == deriv_axis, transpose) {
                    (false, false) => &ax.b,
                    (true, false) => &ax.d,
                    (false, true) => &ax.bt,
                    (true, true) => &ax.dt,
                }
            })
            .collect()
    }

    fn factors_face(&self, face: usize, deriv_axis: Option<usize>, transpose: bool) -> Vec<&DMatrix<f64>> {
        let (fa, s) = (face / 2, face % 2);
        (0..self.d)
            .map(|a| {
                let ax = &self.axes[a];
                let der = Some(a) == deriv_axis;
                if a == fa {
                    match (der, transpose) {
                        (false, false) => &ax.e[s],
                        (true, false) => &ax.de[s],
                        (false, true) => &ax.et[s],
                        (true, true) => &ax.det[s],
                    }
                } else {
                    match (der, transpose) {
                        (false, false) => &ax.b,
                        (true, false) => &ax.d,
                        (false, true) => &ax.bt,
                        (true, true) => &ax.dt,
                    }
                }
            })
            .collect()
    }

    /// Values at volume points.
    pub fn interp(&self, x: &[f64]) -> Vec<f64> {
        kron_apply(&self.factors_volume(None, false), x).expect("shape checked at build")
    }

    /// Reference derivative along axis `a` at volume points.
    pub fn ref_deriv(&self, a: usize, x: &[f64]) -> Vec<f64> {
        kron_apply(&self.factors_volume(Some(a), false), x).expect("shape checked at build")
    }

    /// `∫ g v` against all basis functions, given `g` premultiplied by weights.
    pub fn integrate(&self, g: &[f64]) -> Vec<f64> {
        kron_apply(&self.factors_volume(None, true), g).expect("shape checked at build")
    }

    /// `∫ g ∂̂_a v`, given `g` premultiplied by weights.
    pub fn integrate_deriv(&self, a: usize, g: &[f64]) -> Vec<f64> {
        kron_apply(&self.factors_volume(Some(a), true), g).expect("shape checked at build")
    }

    /// Values on a face.
    pub fn face_trace(&self, face: usize, x: &[f64]) -> Vec<f64> {
        kron_apply(&self.factors_face(face, None, false), x).expect("shape checked at build")
    }

    /// Reference derivative along axis `a` on a face.
    pub fn face_ref_deriv(&self, face: usize, a: usize, x: &[f64]) -> Vec<f64> {
        kron_apply(&self.factors_face(face, Some(a), false), x).expect("shape checked at build")
    }

    /// `∫_face g v`, given `g` premultiplied by weights.
    pub fn face_integrate(&self, face: usize, g: &[f64]) -> Vec<f64> {
        kron_apply(&self.factors_face(face, None, true), g).expect("shape checked at build")
    }

    /// `∫_face g ∂̂_a v`, given `g` premultiplied by weights.
    pub fn face_integrate_deriv(&self, face: usize, a: usize, g: &[f64]) -> Vec<f64> {
        kron_apply(&self.factors_face(face, Some(a), true), g).expect("shape checked at build")
    }
}

/// Traces of the solution on every face of one patch.
#[derive(Clone, Debug, Default)]
struct PatchTraces {
    /// `values[face][component][point]`.
    values: Vec<Vec<Vec<f64>>>,
    /// Physical gradient of the first component: `grad[face][j][point]`.
    grad: Vec<Vec<Vec<f64>>>,
}

/// A fully set-up discretization: mesh, geometry, reference operators, mass
/// inverses and PDE parameters.
pub struct Discretization {
    /// Mesh.
    pub mesh: Mesh,
    /// Per-patch geometry.
    pub geoms: Vec<PatchGeometry>,
    /// Per-patch, per-axis reference operators.
    pub refs: Vec<Vec<Arc<RefOperators1D>>>,
    /// Per-patch tensor kernels.
    pub kernels: Vec<PatchKernels>,
    /// Mass with weight `J` (velocity components, advection).
    pub mass_j: Vec<WeightedMassOperator>,
    /// Mass with weight `J / c²` (pressure).
    pub mass_p: Vec<WeightedMassOperator>,
    /// PDE configuration.
    pub config: PdeConfig,
    /// Resolved IPDG penalty (wave2 only).
    pub tau_ipdg: f64,
    /// Mass inversion path.
    pub mass_path: MassPath,
    /// Tensor quadrature weights per patch.
    pub quad_weights: Vec<Vec<f64>>,
}

impl fmt::Debug for Discretization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Discretization")
            .field("patches", &self.mesh.patches.len())
            .field("d", &self.mesh.d)
            .field("config", &self.config)
            .field("mass_path", &self.mass_path)
            .finish()
    }
}

/// Coercivity bound `τ ≥ max_k C_T ‖J^s‖_∞ ‖1/J‖_∞` with `C_T = λ_T`.
pub fn penalty_bound(mesh: &Mesh, geoms: &[PatchGeometry], refs: &[Vec<Arc<RefOperators1D>>]) -> Result<f64> {
    let mut bound = 0.0f64;
    for (k, g) in geoms.iter().enumerate() {
        let mut ct = 0.0f64;
        for r in &refs[k] {
            ct = ct.max(compute_constants(r, mesh.d)?.c_t);
        }
        bound = bound.max(ct * g.sup_js * g.sup_inv_j);
    }
    Ok(bound)
}

impl Discretization {
    /// Sets up all operators of `mesh` for `config`.
    pub fn new(mesh: Mesh, config: PdeConfig, mass_path: MassPath) -> Result<Self> {
        Self::with_quadrature(mesh, config, mass_path, None)
    }

    /// As [`Discretization::new`] with `points_per_span` Gauss points per knot
    /// span (`None`: `p + 1`, the minimum for exact reference matrices).
    pub fn with_quadrature(
        mesh: Mesh,
        config: PdeConfig,
        mass_path: MassPath,
        points_per_span: Option<usize>,
    ) -> Result<Self> {
        let geoms = build_mesh_geometry(&mesh, points_per_span)?;
        // Share reference operators between patches with identical spaces.
        let mut cache: HashMap<String, (Arc<RefOperators1D>, Arc<AxisOps>)> = HashMap::new();
        let mut refs = Vec::with_capacity(mesh.patches.len());
        let mut kernels = Vec::with_capacity(mesh.patches.len());
        for patch in &mesh.patches {
            let mut pr = Vec::new();
            let mut axes = Vec::new();
            for f in patch.space.factors() {
                let key = serde_json::to_string(f.knot_vector()).expect("knot vector serializes");
                let npts = points_per_span.unwrap_or(f.degree() + 1);
                let entry = match cache.get(&key) {
                    Some(e) => e.clone(),
                    None => {
                        let rule = crate::quadrature::composite_rule(f.knot_vector(), npts)?;
                        let r = Arc::new(crate::refops::build_ref_operators(f, &rule)?);
                        let ax = Arc::new(AxisOps::new(&r));
                        cache.insert(key, (r.clone(), ax.clone()));
                        (r, ax)
                    }
                };
                pr.push(entry.0);
                axes.push(entry.1);
            }
            refs.push(pr);
            kernels.push(PatchKernels { axes, d: mesh.d });
        }
        let c = match config.pde {
            Pde::Advection { .. } => 1.0,
            Pde::Wave1 { c, .. } | Pde::Wave2 { c, .. } => c,
        };
        if !(c > 0.0) {
            return Err(Error::InvalidConfiguration(format!("wavespeed must be positive, got {c}")));
        }
        let quad_weights: Vec<Vec<f64>> = refs
            .iter()
            .map(|r| {
                let rr: Vec<&RefOperators1D> = r.iter().map(|a| a.as_ref()).collect();
                crate::wadg::tensor_quad_weights(&rr)
            })
            .collect();
        let mass_j: Vec<WeightedMassOperator> = geoms
            .iter()
            .zip(&refs)
            .map(|(g, r)| WeightedMassOperator::new(r.clone(), g.j.clone(), mass_path))
            .collect::<Result<_>>()?;
        let mass_p: Vec<WeightedMassOperator> = if c == 1.0 {
            mass_j.clone()
        } else {
            geoms
                .iter()
                .zip(&refs)
                .map(|(g, r)| WeightedMassOperator::new(r.clone(), g.j.iter().map(|j| j / (c * c)).collect(), mass_path))
                .collect::<Result<_>>()?
        };
        let mut tau_ipdg = 0.0;
        if let Pde::Wave2 { tau, .. } = config.pde {
            let bound = penalty_bound(&mesh, &geoms, &refs)?;
            tau_ipdg = match tau {
                None => 2.0 * bound,
                Some(t) if t >= bound * (1.0 - 1e-12) => t,
                Some(t) => {
                    return Err(Error::InvalidConfiguration(format!(
                        "IPDG penalty {t} is below the coercivity bound {bound}"
                    )))
                }
            };
        }
        if let Pde::Advection { tau, .. } = config.pde {
            if !(tau >= 0.0) {
                return Err(Error::InvalidConfiguration("advection penalty must be non-negative".into()));
            }
            if mesh.faces.iter().any(|f| f.kind == FaceKind::Boundary(BoundaryCondition::Neumann)) {
                return Err(Error::InvalidConfiguration(
                    "advection supports periodic or homogeneous inflow boundaries only".into(),
                ));
            }
        }
        Ok(Self { mesh, geoms, refs, kernels, mass_j, mass_p, config, tau_ipdg, mass_path, quad_weights })
    }

    /// Spatial dimension.
    pub fn d(&self) -> usize {
        self.mesh.d
    }

    /// Number of solution components.
    pub fn components(&self) -> usize {
        self.config.components(self.mesh.d)
    }

    /// Zero state with the right layout.
    pub fn zero_state(&self) -> FieldState {
        let dims: Vec<usize> = self.mesh.patches.iter().map(|p| p.space.dim()).collect();
        FieldState::zeros(&dims, self.components())
    }

    /// Total number of unknowns.
    pub fn total_dofs(&self) -> usize {
        self.mesh.total_dofs() * self.components()
    }

    /// Physical coordinates of the volume quadrature points of patch `k`.
    pub fn quad_points(&self, k: usize) -> &[Point] {
        &self.geoms[k].x
    }

    /// L² projection of `f` onto each patch space (exact curvilinear mass or
    /// weight-adjusted, per the configured mass path), returned as scalar
    /// coefficient arrays per patch.
    pub fn project(&self, f: &(dyn Fn(&Point) -> f64 + Sync)) -> Result<Vec<Vec<f64>>> {
        crate::par::map_range(self.mesh.patches.len(), |k| {
            let g = &self.geoms[k];
            let w = &self.quad_weights[k];
            let vals: Vec<f64> = g.x.iter().zip(&g.j).zip(w).map(|((x, j), wq)| f(x) * j * wq).collect();
            let rhs = self.kernels[k].integrate(&vals);
            self.mass_j[k].apply_inverse(&rhs)
        })
        .into_iter()
        .collect()
    }

    /// Squared L² norm `Σ ∫ (u_h − f)² J` over all patches, where `u_h` is
    /// given by per-patch scalar coefficients.
    pub fn l2_error_sq(&self, coeffs: &[&[f64]], f: &dyn Fn(&Point) -> f64) -> f64 {
        (0..self.mesh.patches.len())
            .map(|k| {
                let g = &self.geoms[k];
                let uq = self.kernels[k].interp(coeffs[k]);
                uq.iter()
                    .zip(&g.x)
                    .zip(&g.j)
                    .zip(&self.quad_weights[k])
                    .map(|(((u, x), j), w)| (u - f(x)).powi(2) * j * w)
                    .sum::<f64>()
            })
            .sum()
    }

    fn data_at(&self, f: &Option<ScalarFn>, x: &Point, t: f64) -> f64 {
        f.as_ref().map_or(0.0, |g| g(x, t))
    }

    /// Phase one: traces of every component (and the physical gradient of
    /// component 0 for the second-order problem) on every face.
    fn traces(&self, state: &FieldState, ncomp: usize, with_grad: bool) -> Vec<PatchTraces> {
        crate::par::map_range(self.mesh.patches.len(), |k| {
            let kern = &self.kernels[k];
            let geo = &self.geoms[k];
            let d = self.d();
            let mut tr = PatchTraces::default();
            for face in 0..2 * d {
                tr.values.push((0..ncomp).map(|c| kern.face_trace(face, state.component(k, c))).collect());
                if with_grad {
                    let fg = &geo.faces[face];
                    let rg: Vec<Vec<f64>> = (0..d).map(|a| kern.face_ref_deriv(face, a, state.component(k, 0))).collect();
                    let np = fg.js.len();
                    let mut grad = vec![vec![0.0; np]; d];
                    for q in 0..np {
                        for (j, gj) in grad.iter_mut().enumerate() {
                            gj[q] = (0..d).map(|i| fg.g[q][i][j] * rg[i][q]).sum();
                        }
                    }
                    tr.grad.push(grad);
                }
            }
            tr
        })
    }

    /// Exterior values of component traces at face `face` of patch `k`,
    /// mapped to own face-point ordering. Returns `None` on boundary faces.
    fn exterior<'a>(&self, traces: &'a [PatchTraces], k: usize, face: usize) -> Option<(Vec<&'a [f64]>, Vec<usize>)> {
        match &self.mesh.face(k, face).kind {
            FaceKind::Interior { neighbor, neighbor_face, orientation, .. } => {
                let own_shape = self.geoms[k].faces[face].rule.shape();
                let np = self.geoms[k].faces[face].js.len();
                let map: Vec<usize> = (0..np).map(|q| orientation.map_index(q, &own_shape)).collect();
                let vals = traces[*neighbor].values[*neighbor_face].iter().map(|v| v.as_slice()).collect();
                Some((vals, map))
            }
            FaceKind::Boundary(_) => None,
        }
    }

    fn boundary_kind(&self, k: usize, face: usize) -> Option<BoundaryCondition> {
        match self.mesh.face(k, face).kind {
            FaceKind::Boundary(b) => Some(b),
            _ => None,
        }
    }

    /// Advection right-hand side `dφ/dt`.
    pub fn advection_rhs(&self, state: &FieldState, t: f64) -> Result<FieldState> {
        let (beta, tau) = match &self.config.pde {
            Pde::Advection { beta, tau } => (beta, *tau),
            _ => return invalid("advection_rhs requires an advection configuration"),
        };
        self.check_state(state)?;
        let _ = t;
        let d = self.d();
        let traces = self.traces(state, 1, false);
        let blocks: Vec<Result<Vec<f64>>> = crate::par::map_range(self.mesh.patches.len(), |k| {
            let kern = &self.kernels[k];
            let geo = &self.geoms[k];
            let w = &self.quad_weights[k];
            let phi = state.component(k, 0);
            let phiq = kern.interp(phi);
            let nq = phiq.len();
            // Contravariant velocity b̂_i = Σ_j G_ij β_j.
            let bhat: Vec<[f64; 3]> = (0..nq)
                .map(|q| {
                    let b = beta.at(&geo.x[q]);
                    let mut out = [0.0; 3];
                    for (i, o) in out.iter_mut().enumerate().take(d) {
                        *o = (0..d).map(|j| geo.g[q][i][j] * b[j]).sum();
                    }
                    out
                })
                .collect();
            // ½ (β·∇φ, v)
            let mut adv = vec![0.0; nq];
            for a in 0..d {
                let dphi = kern.ref_deriv(a, phi);
                for q in 0..nq {
                    adv[q] += bhat[q][a] * dphi[q];
                }
            }
            for q in 0..nq {
                adv[q] *= 0.5 * geo.j[q] * w[q];
            }
            let mut r = kern.integrate(&adv);
            // −½ (φ, β·∇v)
            for a in 0..d {
                let g: Vec<f64> = (0..nq).map(|q| -0.5 * geo.j[q] * w[q] * bhat[q][a] * phiq[q]).collect();
                let c = kern.integrate_deriv(a, &g);
                for (ri, ci) in r.iter_mut().zip(c) {
                    *ri += ci;
                }
            }
            // Face terms: ½ βn φ⁺ v − ½ τ |βn| (φ⁺ − φ⁻) v.
            for face in 0..2 * d {
                let fg = &geo.faces[face];
                let own = &traces[k].values[face][0];
                let ext = self.exterior(&traces, k, face);
                let np = own.len();
                let mut g = vec![0.0; np];
                for q in 0..np {
                    let b = beta.at(&fg.x[q]);
                    let bn: f64 = (0..d).map(|i| b[i] * fg.normals[q][i]).sum();
                    let phim = own[q];
                    let phip = match &ext {
                        Some((vals, map)) => vals[0][map[q]],
                        // Homogeneous inflow, free outflow.
                        None => {
                            if bn < 0.0 {
                                0.0
                            } else {
                                phim
                            }
                        }
                    };
                    let wq = fg.rule.weights[q] * fg.js[q];
                    g[q] = wq * (0.5 * bn * phip - 0.5 * tau * bn.abs() * (phip - phim));
                }
                let c = kern.face_integrate(face, &g);
                for (ri, ci) in r.iter_mut().zip(c) {
                    *ri += ci;
                }
            }
            for v in r.iter_mut() {
                *v = -*v;
            }
            self.mass_j[k].apply_inverse(&r)
        });
        self.collect(state, blocks)
    }

    /// First-order acoustic right-hand side `(dp/dt, du/dt)`.
    pub fn wave1_rhs(&self, state: &FieldState, t: f64) -> Result<FieldState> {
        let (tau_p, tau_u) = match self.config.pde {
            Pde::Wave1 { tau_p, tau_u, .. } => (tau_p, tau_u),
            _ => return invalid("wave1_rhs requires a first-order wave configuration"),
        };
        self.check_state(state)?;
        let d = self.d();
        let traces = self.traces(state, 1 + d, false);
        let blocks: Vec<Result<Vec<f64>>> = crate::par::map_range(self.mesh.patches.len(), |k| {
            let kern = &self.kernels[k];
            let geo = &self.geoms[k];
            let w = &self.quad_weights[k];
            let n = state.dims[k];
            let nq = geo.j.len();
            let p = state.component(k, 0);
            let uq: Vec<Vec<f64>> = (0..d).map(|j| kern.interp(state.component(k, 1 + j))).collect();
            // Pressure equation: −(u, ∇q) = −Σ_i ∫ (J Σ_j G_ij u_j) ∂̂_i q.
            let mut rp = vec![0.0; n];
            for i in 0..d {
                let g: Vec<f64> = (0..nq)
                    .map(|q| -geo.j[q] * w[q] * (0..d).map(|j| geo.g[q][i][j] * uq[j][q]).sum::<f64>())
                    .collect();
                for (r, c) in rp.iter_mut().zip(kern.integrate_deriv(i, &g)) {
                    *r += c;
                }
            }
            if let Some(f) = &self.config.forcing {
                let g: Vec<f64> = (0..nq).map(|q| -geo.j[q] * w[q] * f(&geo.x[q], t)).collect();
                for (r, c) in rp.iter_mut().zip(kern.integrate(&g)) {
                    *r += c;
                }
            }
            // Velocity equations: (∇p, v_j) = ∫ (Σ_i G_ij ∂̂_i p) v_j J.
            let dp: Vec<Vec<f64>> = (0..d).map(|i| kern.ref_deriv(i, p)).collect();
            let mut ru: Vec<Vec<f64>> = (0..d)
                .map(|j| {
                    let g: Vec<f64> = (0..nq)
                        .map(|q| geo.j[q] * w[q] * (0..d).map(|i| geo.g[q][i][j] * dp[i][q]).sum::<f64>())
                        .collect();
                    kern.integrate(&g)
                })
                .collect();
            for face in 0..2 * d {
                let fg = &geo.faces[face];
                let own = &traces[k].values[face];
                let ext = self.exterior(&traces, k, face);
                let bc = self.boundary_kind(k, face);
                let np = fg.js.len();
                let mut gp = vec![0.0; np];
                let mut gu = vec![vec![0.0; np]; d];
                for q in 0..np {
                    let nrm = &fg.normals[q];
                    let pm = own[0][q];
                    let unm: f64 = (0..d).map(|j| own[1 + j][q] * nrm[j]).sum();
                    let (jump_p, jump_un) = match (&ext, bc) {
                        (Some((vals, map)), _) => {
                            let qq = map[q];
                            let unp: f64 = (0..d).map(|j| vals[1 + j][qq] * nrm[j]).sum();
                            (vals[0][qq] - pm, unp - unm)
                        }
                        (None, Some(BoundaryCondition::Dirichlet)) => {
                            (2.0 * (self.data_at(&self.config.p_dirichlet, &fg.x[q], t) - pm), 0.0)
                        }
                        (None, Some(BoundaryCondition::Neumann)) => {
                            (0.0, 2.0 * (self.data_at(&self.config.u_neumann, &fg.x[q], t) - unm))
                        }
                        _ => (0.0, 0.0),
                    };
                    let wq = fg.rule.weights[q] * fg.js[q];
                    // ⟨{u}·n, q⟩ − ½ τ_p ⟨[p], q⟩ with {u}·n = u⁻·n + ½[u]·n.
                    gp[q] = wq * (unm + 0.5 * jump_un - 0.5 * tau_p * jump_p);
                    // ½ ⟨[p] − τ_u [u]·n, v·n⟩.
                    let s = wq * 0.5 * (jump_p - tau_u * jump_un);
                    for (j, g) in gu.iter_mut().enumerate() {
                        g[q] = s * nrm[j];
                    }
                }
                for (r, c) in rp.iter_mut().zip(kern.face_integrate(face, &gp)) {
                    *r += c;
                }
                for j in 0..d {
                    for (r, c) in ru[j].iter_mut().zip(kern.face_integrate(face, &gu[j])) {
                        *r += c;
                    }
                }
            }
            let mut out = Vec::with_capacity((1 + d) * n);
            rp.iter_mut().for_each(|v| *v = -*v);
            out.extend(self.mass_p[k].apply_inverse(&rp)?);
            for r in ru.iter_mut() {
                r.iter_mut().for_each(|v| *v = -*v);
                out.extend(self.mass_j[k].apply_inverse(r)?);
            }
            Ok(out)
        });
        self.collect(state, blocks)
    }

    /// Applies the IPDG bilinear form `S_h p` (plus boundary-data terms when
    /// `t` is given), per patch, without mass inversion. `p` is read from
    /// component 0 of `state`.
    fn ipdg_residual(&self, state: &FieldState, data_time: Option<f64>) -> Vec<Vec<f64>> {
        let d = self.d();
        let tau = self.tau_ipdg;
        let traces = self.traces(state, 1, true);
        crate::par::map_range(self.mesh.patches.len(), |k| {
            let kern = &self.kernels[k];
            let geo = &self.geoms[k];
            let w = &self.quad_weights[k];
            let nq = geo.j.len();
            let p = state.component(k, 0);
            let dp: Vec<Vec<f64>> = (0..d).map(|i| kern.ref_deriv(i, p)).collect();
            let mut r = vec![0.0; state.dims[k]];
            // (∇p, ∇v) = Σ_{i,l} ∫ J (G Gᵀ)_{il} ∂̂_l p ∂̂_i v.
            for i in 0..d {
                let g: Vec<f64> = (0..nq)
                    .map(|q| {
                        let gq = &geo.g[q];
                        let s: f64 = (0..d)
                            .map(|l| (0..d).map(|j| gq[i][j] * gq[l][j]).sum::<f64>() * dp[l][q])
                            .sum();
                        geo.j[q] * w[q] * s
                    })
                    .collect();
                for (ri, ci) in r.iter_mut().zip(kern.integrate_deriv(i, &g)) {
                    *ri += ci;
                }
            }
            for face in 0..2 * d {
                let fg = &geo.faces[face];
                let own = &traces[k].values[face][0];
                let own_grad = &traces[k].grad[face];
                let np = fg.js.len();
                let bc = self.boundary_kind(k, face);
                let (ext_vals, ext_grad, map) = match &self.mesh.face(k, face).kind {
                    FaceKind::Interior { neighbor, neighbor_face, orientation, .. } => {
                        let shape = fg.rule.shape();
                        let map: Vec<usize> = (0..np).map(|q| orientation.map_index(q, &shape)).collect();
                        (
                            Some(&traces[*neighbor].values[*neighbor_face][0]),
                            Some(&traces[*neighbor].grad[*neighbor_face]),
                            map,
                        )
                    }
                    FaceKind::Boundary(_) => (None, None, Vec::new()),
                };
                let mut gv = vec![0.0; np];
                let mut ggrad = vec![0.0; np];
                for q in 0..np {
                    let nrm = &fg.normals[q];
                    let pm = own[q];
                    let gnm: f64 = (0..d).map(|j| own_grad[j][q] * nrm[j]).sum();
                    let (jump, avg_gn) = match (ext_vals, bc) {
                        (Some(ev), _) => {
                            let qq = map[q];
                            let eg = ext_grad.expect("interior face has gradient traces");
                            let gnp: f64 = (0..d).map(|j| eg[j][qq] * nrm[j]).sum();
                            (ev[qq] - pm, 0.5 * (gnm + gnp))
                        }
                        (None, Some(BoundaryCondition::Dirichlet)) => {
                            let pd = data_time.map_or(0.0, |t| self.data_at(&self.config.p_dirichlet, &fg.x[q], t));
                            (2.0 * (pd - pm), gnm)
                        }
                        (None, Some(BoundaryCondition::Neumann)) => {
                            let un = data_time.map_or(0.0, |t| self.data_at(&self.config.u_neumann, &fg.x[q], t));
                            (0.0, un)
                        }
                        _ => (0.0, 0.0),
                    };
                    let wq = fg.rule.weights[q] * fg.js[q];
                    // −⟨{∇p}·n, v⟩ − τ ⟨[p], v⟩ and ½ ⟨[p], ∇v·n⟩.
                    gv[q] = wq * (-avg_gn - tau * jump);
                    ggrad[q] = wq * 0.5 * jump;
                }
                for (ri, ci) in r.iter_mut().zip(kern.face_integrate(face, &gv)) {
                    *ri += ci;
                }
                // ∇v·n = Σ_i (G n)_i ∂̂_i v.
                for i in 0..d {
                    let g: Vec<f64> = (0..np)
                        .map(|q| ggrad[q] * (0..d).map(|j| fg.g[q][i][j] * fg.normals[q][j]).sum::<f64>())
                        .collect();
                    for (ri, ci) in r.iter_mut().zip(kern.face_integrate_deriv(face, i, &g)) {
                        *ri += ci;
                    }
                }
            }
            r
        })
    }

    /// `A_h p = −M^{-1} S_h p` for the second-order problem (homogeneous
    /// data). The returned state has one component.
    pub fn wave2_apply(&self, p: &FieldState) -> Result<FieldState> {
        if !matches!(self.config.pde, Pde::Wave2 { .. }) {
            return invalid("wave2_apply requires a second-order wave configuration");
        }
        let dims: Vec<usize> = self.mesh.patches.iter().map(|q| q.space.dim()).collect();
        if p.dims != dims || p.components < 1 {
            return invalid("state layout does not match the mesh");
        }
        let res = self.ipdg_residual(p, None);
        let mut out = FieldState::zeros(&dims, 1);
        for (k, r) in res.into_iter().enumerate() {
            let neg: Vec<f64> = r.iter().map(|v| -v).collect();
            out.component_mut(k, 0).copy_from_slice(&self.mass_p[k].apply_inverse(&neg)?);
        }
        Ok(out)
    }

    /// Applies `S_h` (second-order stiffness, no mass inverse) to component 0.
    pub fn wave2_stiffness_apply(&self, p: &FieldState) -> Vec<Vec<f64>> {
        self.ipdg_residual(p, None)
    }

    /// Second-order problem as a first-order system in `(p, ṗ)`.
    pub fn wave2_rhs(&self, state: &FieldState, t: f64) -> Result<FieldState> {
        if !matches!(self.config.pde, Pde::Wave2 { .. }) {
            return invalid("wave2_rhs requires a second-order wave configuration");
        }
        self.check_state(state)?;
        let res = self.ipdg_residual(state, Some(t));
        let d = self.d();
        let _ = d;
        let blocks: Vec<Result<Vec<f64>>> = crate::par::map_range(self.mesh.patches.len(), |k| {
            let mut r: Vec<f64> = res[k].iter().map(|v| -v).collect();
            if let Some(f) = &self.config.forcing {
                let geo = &self.geoms[k];
                let w = &self.quad_weights[k];
                let g: Vec<f64> = (0..geo.j.len()).map(|q| geo.j[q] * w[q] * f(&geo.x[q], t)).collect();
                for (ri, ci) in r.iter_mut().zip(self.kernels[k].integrate(&g)) {
                    *ri += ci;
                }
            }
            let mut out = state.component(k, 1).to_vec();
            out.extend(self.mass_p[k].apply_inverse(&r)?);
            Ok(out)
        });
        self.collect(state, blocks)
    }

    /// Right-hand side of the configured PDE.
    pub fn rhs(&self, state: &FieldState, t: f64) -> Result<FieldState> {
        match self.config.pde {
            Pde::Advection { .. } => self.advection_rhs(state, t),
            Pde::Wave1 { .. } => self.wave1_rhs(state, t),
            Pde::Wave2 { .. } => self.wave2_rhs(state, t),
        }
    }

    /// Discrete energy: `½ Σ ‖φ‖²` (advection), `½ Σ (‖p‖²/c² + ‖u‖²)`
    /// (first order), or `½ (⟨ṗ, Mṗ⟩ + ⟨p, S_h p⟩)` (second order), with the
    /// mass matrices the configured inversion path actually inverts.
    pub fn energy(&self, state: &FieldState) -> Result<f64> {
        let np = self.mesh.patches.len();
        let mut e = 0.0;
        match self.config.pde {
            Pde::Advection { .. } => {
                for k in 0..np {
                    let x = state.component(k, 0);
                    e += dot(x, &self.mass_j[k].norm_apply(x)?);
                }
            }
            Pde::Wave1 { .. } => {
                for k in 0..np {
                    let p = state.component(k, 0);
                    e += dot(p, &self.mass_p[k].norm_apply(p)?);
                    for j in 0..self.d() {
                        let u = state.component(k, 1 + j);
                        e += dot(u, &self.mass_j[k].norm_apply(u)?);
                    }
                }
            }
            Pde::Wave2 { .. } => {
                let s = self.ipdg_residual(state, None);
                for k in 0..np {
                    let v = state.component(k, 1);
                    e += dot(v, &self.mass_p[k].norm_apply(v)?);
                    e += dot(state.component(k, 0), &s[k]);
                }
            }
        }
        Ok(0.5 * e)
    }

    fn check_state(&self, state: &FieldState) -> Result<()> {
        let dims: Vec<usize> = self.mesh.patches.iter().map(|p| p.space.dim()).collect();
        if state.dims != dims || state.components != self.components() {
            return invalid(format!(
                "state layout ({} components, dims {:?}) does not match the discretization",
                state.components, state.dims
            ));
        }
        Ok(())
    }

    fn collect(&self, like: &FieldState, blocks: Vec<Result<Vec<f64>>>) -> Result<FieldState> {
        let mut data = Vec::with_capacity(like.len());
        for b in blocks {
            data.extend(b?);
        }
        like.with_data(data)
    }

    /// Interpolates the state's component `c` on patch `k` to volume points.
    pub fn values_at_quad(&self, state: &FieldState, k: usize, c: usize) -> Vec<f64> {
        self.kernels[k].interp(state.component(k, c))
    }

    /// Reference operators of patch `k` as plain references.
    pub fn patch_refs(&self, k: usize) -> Vec<&RefOperators1D> {
        self.refs[k].iter().map(|a| a.as_ref()).collect()
    }

    /// Values of patch `k`'s scalar coefficients at volume points.
    pub fn interp_scalar(&self, k: usize, x: &[f64]) -> Result<Vec<f64>> {
        to_quad(&self.patch_refs(k), x)
    }
}

/// Euclidean inner product.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Largest total size accepted by [`assemble_operator_matrix`].
pub const MAX_ASSEMBLY_DOFS: usize = 20_000;

/// Materializes a linear operator by applying it to unit vectors.
pub fn assemble_operator_matrix(
    rhs: &(dyn Fn(&[f64]) -> Result<Vec<f64>> + Sync),
    total_dofs: usize,
) -> Result<DMatrix<f64>> {
    if total_dofs > MAX_ASSEMBLY_DOFS {
        return Err(Error::InvalidArgument(format!(
            "refusing to assemble {total_dofs} dofs (cap {MAX_ASSEMBLY_DOFS})"
        )));
    }
    let cols: Vec<Result<Vec<f64>>> = crate::par::map_range(total_dofs, |j| {
        let mut e = vec![0.0; total_dofs];
        e[j] = 1.0;
        rhs(&e)
    });
    let mut m = DMatrix::zeros(total_dofs, total_dofs);
    for (j, c) in cols.into_iter().enumerate() {
        let c = c?;
        if c.len() != total_dofs {
            return Err(Error::Internal("operator returned a vector of the wrong length".into()));
        }
        m.set_column(j, &nalgebra::DVector::from_vec(c));
    }
    Ok(m)
}

impl Discretization {
    /// Dense matrix of the homogeneous semi-discrete operator of the
    /// configured PDE (`A_h` such that `dU/dt = A_h U`; for the second-order
    /// problem the operator `A_h p = −M^{-1} S_h p` on `p` alone).
    pub fn operator_matrix(&self) -> Result<DMatrix<f64>> {
        let mut cfg = self.config.clone();
        cfg.forcing = None;
        cfg.p_dirichlet = None;
        cfg.u_neumann = None;
        match self.config.pde {
            Pde::Wave2 { .. } => {
                let dims: Vec<usize> = self.mesh.patches.iter().map(|p| p.space.dim()).collect();
                let template = FieldState::zeros(&dims, 1);
                let n = template.len();
                assemble_operator_matrix(
                    &|x: &[f64]| {
                        let s = template.with_data(x.to_vec())?;
                        Ok(self.wave2_apply(&s)?.data)
                    },
                    n,
                )
            }
            _ => {
                if self.config.forcing.is_some() || self.config.p_dirichlet.is_some() || self.config.u_neumann.is_some() {
                    return invalid("operator_matrix requires homogeneous data");
                }
                let template = self.zero_state();
                let n = template.len();
                assemble_operator_matrix(
                    &|x: &[f64]| {
                        let s = template.with_data(x.to_vec())?;
                        Ok(self.rhs(&s, 0.0)?.data)
                    },
                    n,
                )
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_cartesian_multipatch, CartesianMeshSpec};
    use crate::splines::KnotFamily;

    fn mesh(d: usize, patches: usize, p: usize, k: usize, bc: BoundaryCondition) -> Mesh {
        build_cartesian_multipatch(&CartesianMeshSpec::unit_box(d, patches, KnotFamily::Uniform, p, k, bc)).unwrap()
    }

    #[test]
    fn advection_preserves_constants() {
        let disc = Discretization::new(
            mesh(2, 2, 2, 3, BoundaryCondition::Periodic),
            PdeConfig::advection([1.0, 0.5, 0.0]),
            MassPath::Wadg,
        )
        .unwrap();
        let mut s = disc.zero_state();
        let proj = disc.project(&|_| 1.0).unwrap();
        for (k, c) in proj.iter().enumerate() {
            s.component_mut(k, 0).copy_from_slice(c);
        }
        let r = disc.advection_rhs(&s, 0.0).unwrap();
        assert!(r.data.iter().all(|v| v.abs() < 1e-11), "{:?}", r.data.iter().fold(0.0f64, |m, v| m.max(v.abs())));
    }

    #[test]
    fn wave1_zero_state_gives_zero() {
        let disc = Discretization::new(mesh(1, 2, 2, 4, BoundaryCondition::Dirichlet), PdeConfig::wave1(1.0), MassPath::Wadg)
            .unwrap();
        let r = disc.wave1_rhs(&disc.zero_state(), 0.0).unwrap();
        assert!(r.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn wave2_constant_neumann_is_null() {
        let disc = Discretization::new(mesh(2, 2, 2, 2, BoundaryCondition::Neumann), PdeConfig::wave2(1.0), MassPath::Wadg)
            .unwrap();
        let dims: Vec<usize> = disc.mesh.patches.iter().map(|p| p.space.dim()).collect();
        let mut s = FieldState::zeros(&dims, 1);
        s.data.iter_mut().for_each(|v| *v = 1.0);
        let r = disc.wave2_apply(&s).unwrap();
        assert!(r.data.iter().all(|v| v.abs() < 1e-11));
    }

    #[test]
    fn penalty_bound_doubles_when_patch_halves() {
        let b = |n: usize| {
            let disc = Discretization::new(mesh(1, n, 2, 4, BoundaryCondition::Dirichlet), PdeConfig::wave2(1.0), MassPath::Wadg)
                .unwrap();
            penalty_bound(&disc.mesh, &disc.geoms, &disc.refs).unwrap()
        };
        assert!((b(2) / b(1) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn low_penalty_is_rejected() {
        let r = Discretization::new(
            mesh(1, 2, 2, 4, BoundaryCondition::Dirichlet),
            PdeConfig::new(Pde::Wave2 { c: 1.0, tau: Some(1e-3) }),
            MassPath::Wadg,
        );
        assert!(matches!(r, Err(Error::InvalidConfiguration(_))));
    }
}
