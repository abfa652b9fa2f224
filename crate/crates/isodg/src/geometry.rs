//! Multi-patch meshes: analytic patch mappings, metric terms at quadrature
//! points, face connectivity and boundary tags.
//!
//! Every patch is the image of the reference cube `[-1, 1]^d` under an affine
//! map onto a box of the global parameter domain, optionally followed by a
//! global analytic mapping (for instance the 2D warp). Metric terms are
//! evaluated analytically at quadrature points.

use crate::error::{invalid, Error, Result};
use crate::quadrature::{composite_rule, Rule1D, TensorRule};
use crate::splines::{KnotFamily, SplineSpace1D, TensorSplineSpace};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

/// Point in up to three dimensions.
pub type Point = [f64; 3];
/// Row-major `3 × 3` matrix; only the leading `d × d` block is used.
pub type Mat3 = [[f64; 3]; 3];

/// User-supplied analytic mapping: returns the image point and its Jacobian
/// `∂x_i/∂y_j` for a point `y` of the global parameter domain.
pub type CustomMap = Arc<dyn Fn(&Point, usize) -> (Point, Mat3) + Send + Sync>;

/// Global analytic mapping applied after the per-patch affine map.
#[derive(Clone, Default)]
pub enum GlobalMapping {
    /// No further mapping.
    #[default]
    Identity,
    /// Curvilinear warp of the bi-unit square:
    /// `x̃ = x + α cos(3πy/2) cos(πx/2)`, `ỹ = y + α sin(3πx/2) cos(πy/2)`.
    Warp2d {
        /// Warping strength.
        alpha: f64,
    },
    /// Arbitrary analytic mapping.
    Custom(CustomMap),
}

impl fmt::Debug for GlobalMapping {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GlobalMapping::Identity => write!(f, "Identity"),
            GlobalMapping::Warp2d { alpha } => write!(f, "Warp2d {{ alpha: {alpha} }}"),
            GlobalMapping::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

impl GlobalMapping {
    /// Image point and Jacobian at `y`.
    pub fn eval(&self, y: &Point, d: usize) -> (Point, Mat3) {
        let mut id = [[0.0; 3]; 3];
        for (i, row) in id.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        match self {
            GlobalMapping::Identity => (*y, id),
            GlobalMapping::Warp2d { alpha } => {
                let a = *alpha;
                let (x, yy) = (y[0], y[1]);
                let mut out = *y;
                out[0] = x + a * (1.5 * PI * yy).cos() * (0.5 * PI * x).cos();
                out[1] = yy + a * (1.5 * PI * x).sin() * (0.5 * PI * yy).cos();
                let mut jac = id;
                jac[0][0] = 1.0 - a * 0.5 * PI * (1.5 * PI * yy).cos() * (0.5 * PI * x).sin();
                jac[0][1] = -a * 1.5 * PI * (1.5 * PI * yy).sin() * (0.5 * PI * x).cos();
                jac[1][0] = a * 1.5 * PI * (1.5 * PI * x).cos() * (0.5 * PI * yy).cos();
                jac[1][1] = 1.0 - a * 0.5 * PI * (1.5 * PI * x).sin() * (0.5 * PI * yy).sin();
                let _ = d;
                (out, jac)
            }
            GlobalMapping::Custom(f) => f(y, d),
        }
    }

    /// Whether the mapping is affine (constant Jacobian).
    pub fn is_affine(&self) -> bool {
        match self {
            GlobalMapping::Identity => true,
            GlobalMapping::Warp2d { alpha } => *alpha == 0.0,
            GlobalMapping::Custom(_) => false,
        }
    }
}

/// Mapping of the reference patch: affine onto a box, then a global map.
#[derive(Clone, Debug)]
pub struct PatchMapping {
    /// Spatial dimension.
    pub d: usize,
    /// Box centre per axis.
    pub offset: Vec<f64>,
    /// Half-widths per axis.
    pub scale: Vec<f64>,
    /// Global mapping applied afterwards.
    pub global: GlobalMapping,
}

impl PatchMapping {
    /// Affine mapping `x = offset + scale ∘ x̂`.
    pub fn affine(offset: Vec<f64>, scale: Vec<f64>) -> Result<Self> {
        if offset.len() != scale.len() || offset.is_empty() || offset.len() > 3 {
            return invalid("affine mapping needs matching offset/scale of length 1..=3");
        }
        if scale.iter().any(|&s| !(s > 0.0)) {
            return invalid("affine scales must be positive");
        }
        Ok(Self { d: offset.len(), offset, scale, global: GlobalMapping::Identity })
    }

    /// Identity mapping of `[-1, 1]^d`.
    pub fn identity(d: usize) -> Result<Self> {
        Self::affine(vec![0.0; d], vec![1.0; d])
    }

    /// Composes with a global mapping.
    pub fn with_global(mut self, global: GlobalMapping) -> Self {
        self.global = global;
        self
    }

    /// Physical point and Jacobian `∂x_i/∂x̂_j` at a reference point.
    pub fn eval(&self, xh: &[f64]) -> (Point, Mat3) {
        let mut y = [0.0; 3];
        for a in 0..self.d {
            y[a] = self.offset[a] + self.scale[a] * xh[a];
        }
        let (x, jg) = self.global.eval(&y, self.d);
        let mut jac = [[0.0; 3]; 3];
        for i in 0..self.d {
            for j in 0..self.d {
                jac[i][j] = jg[i][j] * self.scale[j];
            }
        }
        (x, jac)
    }
}

fn det_inv(jac: &Mat3, d: usize) -> (f64, Mat3) {
    let mut inv = [[0.0; 3]; 3];
    match d {
        1 => {
            let det = jac[0][0];
            inv[0][0] = 1.0 / det;
            (det, inv)
        }
        2 => {
            let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
            inv[0][0] = jac[1][1] / det;
            inv[0][1] = -jac[0][1] / det;
            inv[1][0] = -jac[1][0] / det;
            inv[1][1] = jac[0][0] / det;
            (det, inv)
        }
        _ => {
            let m = jac;
            let c00 = m[1][1] * m[2][2] - m[1][2] * m[2][1];
            let c01 = m[1][2] * m[2][0] - m[1][0] * m[2][2];
            let c02 = m[1][0] * m[2][1] - m[1][1] * m[2][0];
            let det = m[0][0] * c00 + m[0][1] * c01 + m[0][2] * c02;
            inv[0][0] = c00 / det;
            inv[1][0] = c01 / det;
            inv[2][0] = c02 / det;
            inv[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) / det;
            inv[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) / det;
            inv[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) / det;
            inv[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) / det;
            inv[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) / det;
            inv[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) / det;
            (det, inv)
        }
    }
}

/// Metric data on one local face of a patch.
#[derive(Clone, Debug)]
pub struct FaceGeometry {
    /// Face rule (product of tangential volume rules; a single unit-weight
    /// point in 1D).
    pub rule: TensorRule,
    /// Reference coordinates of face points.
    pub ref_points: Vec<Vec<f64>>,
    /// Physical coordinates.
    pub x: Vec<Point>,
    /// Surface Jacobian `J^s`.
    pub js: Vec<f64>,
    /// Unit outward normals.
    pub normals: Vec<Point>,
    /// Volume Jacobian determinant at face points.
    pub j: Vec<f64>,
    /// Inverse Jacobian `G_ij = ∂x̂_i/∂x_j` at face points.
    pub g: Vec<Mat3>,
}

/// Metric terms of one patch at volume and face quadrature points.
#[derive(Clone, Debug)]
pub struct PatchGeometry {
    /// Spatial dimension.
    pub d: usize,
    /// Volume rule.
    pub volume_rule: TensorRule,
    /// Physical coordinates at volume points.
    pub x: Vec<Point>,
    /// Jacobian determinant at volume points.
    pub j: Vec<f64>,
    /// Inverse Jacobian at volume points.
    pub g: Vec<Mat3>,
    /// Faces `2a + s` (`s = 0`: `x̂_a = −1`, `s = 1`: `x̂_a = +1`).
    pub faces: Vec<FaceGeometry>,
    /// `‖J‖_∞` over volume points.
    pub sup_j: f64,
    /// `‖1/J‖_∞` over volume points.
    pub sup_inv_j: f64,
    /// `‖J^s‖_∞` over all face points.
    pub sup_js: f64,
    /// `‖J G‖_∞` (largest row-sum norm) over volume points.
    pub sup_jg: f64,
    /// Whether `J` is constant (affine patch).
    pub affine: bool,
}

/// Evaluates metric terms of `mapping` on the volume rule and the per-face
/// rules. Face rules are the tangential factors of `volume_rules`.
pub fn build_patch_geometry(
    mapping: &PatchMapping,
    space: &TensorSplineSpace,
    volume_rules: &[Rule1D],
) -> Result<PatchGeometry> {
    let d = mapping.d;
    if space.d() != d || volume_rules.len() != d {
        return invalid("mapping, space and rules must share the dimension");
    }
    let volume_rule = TensorRule::new(volume_rules.to_vec());
    let mut x = Vec::with_capacity(volume_rule.len());
    let mut jv = Vec::with_capacity(volume_rule.len());
    let mut gv = Vec::with_capacity(volume_rule.len());
    for pt in &volume_rule.points {
        let (xp, jac) = mapping.eval(pt);
        let (det, inv) = det_inv(&jac, d);
        if !(det > 0.0) || !det.is_finite() {
            return Err(Error::NonInvertibleMapping(format!(
                "J = {det:.6e} at reference point {pt:?} (physical {:?})",
                &xp[..d]
            )));
        }
        x.push(xp);
        jv.push(det);
        gv.push(inv);
    }
    let mut faces = Vec::with_capacity(2 * d);
    for a in 0..d {
        for s in 0..2 {
            let tangential: Vec<Rule1D> = (0..d).filter(|&b| b != a).map(|b| volume_rules[b].clone()).collect();
            let rule = if tangential.is_empty() {
                TensorRule::new(vec![Rule1D { points: vec![0.0], weights: vec![1.0] }])
            } else {
                TensorRule::new(tangential)
            };
            let sign = if s == 0 { -1.0 } else { 1.0 };
            let mut fg = FaceGeometry {
                rule: rule.clone(),
                ref_points: Vec::new(),
                x: Vec::new(),
                js: Vec::new(),
                normals: Vec::new(),
                j: Vec::new(),
                g: Vec::new(),
            };
            for tp in &rule.points {
                let mut xh = vec![0.0; d];
                let mut k = 0;
                for (b, v) in xh.iter_mut().enumerate() {
                    if b == a {
                        *v = sign;
                    } else {
                        *v = tp[k];
                        k += 1;
                    }
                }
                let (xp, jac) = mapping.eval(&xh);
                let (det, inv) = det_inv(&jac, d);
                if !(det > 0.0) || !det.is_finite() {
                    return Err(Error::NonInvertibleMapping(format!(
                        "J = {det:.6e} at reference face point {xh:?}"
                    )));
                }
                // Nanson: n J^s = J Gᵀ n̂ with n̂ = ±e_a.
                let mut nv = [0.0; 3];
                for (i, v) in nv.iter_mut().enumerate().take(d) {
                    *v = det * inv[a][i] * sign;
                }
                let js = nv.iter().map(|v| v * v).sum::<f64>().sqrt();
                for v in nv.iter_mut() {
                    *v /= js;
                }
                fg.ref_points.push(xh);
                fg.x.push(xp);
                fg.js.push(if d == 1 { 1.0 } else { js });
                fg.normals.push(nv);
                fg.j.push(det);
                fg.g.push(inv);
            }
            faces.push(fg);
        }
    }
    let sup_j = jv.iter().fold(0.0f64, |m, &v| m.max(v));
    let sup_inv_j = jv.iter().fold(0.0f64, |m, &v| m.max(1.0 / v));
    let sup_js = faces.iter().flat_map(|f| f.js.iter()).fold(0.0f64, |m, &v| m.max(v));
    let sup_jg = jv
        .iter()
        .zip(&gv)
        .map(|(jj, g)| (0..d).map(|i| (0..d).map(|k| (jj * g[i][k]).abs()).sum::<f64>()).fold(0.0, f64::max))
        .fold(0.0f64, f64::max);
    let jmin = jv.iter().fold(f64::INFINITY, |m, &v| m.min(v));
    let affine = mapping.global.is_affine() || (sup_j - jmin).abs() <= 1e-14 * sup_j;
    Ok(PatchGeometry { d, volume_rule, x, j: jv, g: gv, faces, sup_j, sup_inv_j, sup_js, sup_jg, affine })
}

/// Boundary condition on a domain side.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryCondition {
    /// Prescribed pressure.
    Dirichlet,
    /// Prescribed normal flux / normal derivative.
    Neumann,
    /// Paired with the opposite side.
    Periodic,
}

/// Relative orientation of two linked faces: neighbor tangential axis `k`
/// corresponds to own tangential axis `perm[k]`, reversed if `flip[k]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Orientation {
    /// Axis permutation.
    pub perm: Vec<usize>,
    /// Axis reversals.
    pub flip: Vec<bool>,
}

impl Orientation {
    /// Identity orientation for a face with `n` tangential axes.
    pub fn identity(n: usize) -> Self {
        Self { perm: (0..n).collect(), flip: vec![false; n] }
    }

    /// Maps an own face-point index to the neighbour's face-point index.
    pub fn map_index(&self, own: usize, shape: &[usize]) -> usize {
        if self.perm.is_empty() {
            // Point faces in 1D.
            return own;
        }
        let mut m = Vec::with_capacity(shape.len());
        let mut f = own;
        for &n in shape {
            m.push(f % n);
            f /= n;
        }
        let mut idx = 0;
        for k in (0..shape.len()).rev() {
            let src = self.perm[k];
            let v = if self.flip[k] { shape[src] - 1 - m[src] } else { m[src] };
            idx = idx * shape[src] + v;
        }
        idx
    }
}

/// Connectivity of one local face.
#[derive(Clone, Debug, PartialEq)]
pub enum FaceKind {
    /// Linked to a neighbour face (including periodic partners).
    Interior {
        /// Neighbour patch.
        neighbor: usize,
        /// Neighbour local face.
        neighbor_face: usize,
        /// Orientation of the link.
        orientation: Orientation,
        /// Whether the link closes a periodic direction.
        periodic: bool,
    },
    /// Domain boundary.
    Boundary(BoundaryCondition),
}

/// One local face record.
#[derive(Clone, Debug)]
pub struct Face {
    /// Owning patch.
    pub patch: usize,
    /// Local face index `2a + s`.
    pub local_face: usize,
    /// Connectivity.
    pub kind: FaceKind,
}

/// A patch: mapping plus tensor spline space.
#[derive(Clone, Debug)]
pub struct Patch {
    /// Geometric mapping.
    pub mapping: PatchMapping,
    /// Spline space.
    pub space: TensorSplineSpace,
}

/// Multi-patch mesh.
#[derive(Clone, Debug)]
pub struct Mesh {
    /// Spatial dimension.
    pub d: usize,
    /// Patches.
    pub patches: Vec<Patch>,
    /// Faces, `2d` per patch, ordered by `(patch, local_face)`.
    pub faces: Vec<Face>,
}

impl Mesh {
    /// Face record of `(patch, local_face)`.
    pub fn face(&self, patch: usize, local_face: usize) -> &Face {
        &self.faces[patch * 2 * self.d + local_face]
    }

    /// Number of interior links (each counted once).
    pub fn num_interior_links(&self) -> usize {
        self.faces.iter().filter(|f| matches!(f.kind, FaceKind::Interior { .. })).count() / 2
    }

    /// Number of boundary faces.
    pub fn num_boundary_faces(&self) -> usize {
        self.faces.iter().filter(|f| matches!(f.kind, FaceKind::Boundary(_))).count()
    }

    /// Total number of scalar coefficients over all patches.
    pub fn total_dofs(&self) -> usize {
        self.patches.iter().map(|p| p.space.dim()).sum()
    }

    /// Checks symmetry and conformity of interior links.
    pub fn validate(&self, geoms: &[PatchGeometry]) -> Result<()> {
        for f in &self.faces {
            if let FaceKind::Interior { neighbor, neighbor_face, orientation, periodic } = &f.kind {
                let back = self.face(*neighbor, *neighbor_face);
                match &back.kind {
                    FaceKind::Interior { neighbor: bn, neighbor_face: bf, .. }
                        if *bn == f.patch && *bf == f.local_face => {}
                    _ => {
                        return Err(Error::InvalidConfiguration(format!(
                            "face ({}, {}) is not linked back by its neighbour",
                            f.patch, f.local_face
                        )))
                    }
                }
                let own = &geoms[f.patch].faces[f.local_face];
                let nb = &geoms[*neighbor].faces[*neighbor_face];
                if own.x.len() != nb.x.len() {
                    return Err(Error::InvalidConfiguration("linked faces have different rules".into()));
                }
                let shape = own.rule.shape();
                for q in 0..own.x.len() {
                    let qn = orientation.map_index(q, &shape);
                    let dot: f64 = (0..self.d).map(|i| own.normals[q][i] * nb.normals[qn][i]).sum();
                    if (dot + 1.0).abs() > 1e-10 {
                        return Err(Error::InvalidConfiguration(format!(
                            "normals on linked faces are not antiparallel (dot = {dot})"
                        )));
                    }
                    if !periodic {
                        let mis: f64 = (0..self.d).map(|i| (own.x[q][i] - nb.x[qn][i]).abs()).fold(0.0, f64::max);
                        if mis > 1e-10 {
                            return Err(Error::InvalidConfiguration(format!(
                                "linked face points mismatch by {mis:.3e}"
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Description of an axis-aligned multi-patch grid.
#[derive(Clone, Debug)]
pub struct CartesianMeshSpec {
    /// Spatial dimension.
    pub d: usize,
    /// Patches per axis.
    pub patches_per_axis: Vec<usize>,
    /// Knot family of every patch.
    pub family: KnotFamily,
    /// Degree.
    pub p: usize,
    /// Spans per patch and axis.
    pub k: usize,
    /// Lower corner of the parameter box.
    pub lower: Vec<f64>,
    /// Upper corner of the parameter box.
    pub upper: Vec<f64>,
    /// Boundary conditions per side `2a + s`.
    pub bcs: Vec<BoundaryCondition>,
    /// Global mapping.
    pub global: GlobalMapping,
}

impl CartesianMeshSpec {
    /// Bi-unit box `[-1, 1]^d` with the same condition on every side.
    pub fn unit_box(d: usize, patches: usize, family: KnotFamily, p: usize, k: usize, bc: BoundaryCondition) -> Self {
        Self {
            d,
            patches_per_axis: vec![patches; d],
            family,
            p,
            k,
            lower: vec![-1.0; d],
            upper: vec![1.0; d],
            bcs: vec![bc; 2 * d],
            global: GlobalMapping::Identity,
        }
    }
}

/// Builds an axis-aligned patch grid with conforming interfaces.
pub fn build_cartesian_multipatch(spec: &CartesianMeshSpec) -> Result<Mesh> {
    let d = spec.d;
    if d == 0 || d > 3 {
        return invalid("dimension must be 1..=3");
    }
    if spec.patches_per_axis.len() != d || spec.patches_per_axis.iter().any(|&n| n < 1) {
        return invalid("patches_per_axis must list d positive counts");
    }
    if spec.lower.len() != d || spec.upper.len() != d || spec.bcs.len() != 2 * d {
        return invalid("box corners and boundary list must match the dimension");
    }
    for a in 0..d {
        if !(spec.upper[a] > spec.lower[a]) {
            return invalid("upper corner must exceed lower corner");
        }
        let lo = spec.bcs[2 * a] == BoundaryCondition::Periodic;
        let hi = spec.bcs[2 * a + 1] == BoundaryCondition::Periodic;
        if lo != hi {
            return Err(Error::InvalidConfiguration(format!(
                "periodic boundary on axis {a} must be set on both sides"
            )));
        }
    }
    let space1 = SplineSpace1D::from_family(spec.family, spec.p, spec.k)?;
    let space = TensorSplineSpace::isotropic(space1, d)?;
    let npa = &spec.patches_per_axis;
    let total: usize = npa.iter().product();
    let to_multi = |mut f: usize| -> Vec<usize> {
        npa.iter()
            .map(|&n| {
                let i = f % n;
                f /= n;
                i
            })
            .collect()
    };
    let to_flat = |m: &[usize]| -> usize {
        let mut idx = 0;
        for a in (0..d).rev() {
            idx = idx * npa[a] + m[a];
        }
        idx
    };
    let mut patches = Vec::with_capacity(total);
    let mut faces = Vec::with_capacity(total * 2 * d);
    for pi in 0..total {
        let m = to_multi(pi);
        let mut offset = Vec::with_capacity(d);
        let mut scale = Vec::with_capacity(d);
        for a in 0..d {
            let h = (spec.upper[a] - spec.lower[a]) / npa[a] as f64;
            offset.push(spec.lower[a] + h * (m[a] as f64 + 0.5));
            scale.push(0.5 * h);
        }
        let mapping = PatchMapping::affine(offset, scale)?.with_global(spec.global.clone());
        patches.push(Patch { mapping, space: space.clone() });
        for a in 0..d {
            for s in 0..2 {
                let at_edge = if s == 0 { m[a] == 0 } else { m[a] + 1 == npa[a] };
                let bc = spec.bcs[2 * a + s];
                let kind = if at_edge && bc != BoundaryCondition::Periodic {
                    FaceKind::Boundary(bc)
                } else {
                    let mut nm = m.clone();
                    nm[a] = if s == 0 { (m[a] + npa[a] - 1) % npa[a] } else { (m[a] + 1) % npa[a] };
                    FaceKind::Interior {
                        neighbor: to_flat(&nm),
                        neighbor_face: 2 * a + (1 - s),
                        orientation: Orientation::identity(d - 1),
                        periodic: at_edge,
                    }
                };
                faces.push(Face { patch: pi, local_face: 2 * a + s, kind });
            }
        }
    }
    Ok(Mesh { d, patches, faces })
}

/// Builds every patch geometry of a mesh with `points_per_span` Gauss points
/// per knot span (`None` selects `p + 1`).
pub fn build_mesh_geometry(mesh: &Mesh, points_per_span: Option<usize>) -> Result<Vec<PatchGeometry>> {
    let geoms = crate::par::map(&mesh.patches, |patch| {
        let rules: Vec<Rule1D> = patch
            .space
            .factors()
            .iter()
            .map(|f| composite_rule(f.knot_vector(), points_per_span.unwrap_or(f.degree() + 1)))
            .collect::<Result<_>>()?;
        build_patch_geometry(&patch.mapping, &patch.space, &rules)
    });
    let geoms: Vec<PatchGeometry> = geoms.into_iter().collect::<Result<_>>()?;
    mesh.validate(&geoms)?;
    Ok(geoms)
}
