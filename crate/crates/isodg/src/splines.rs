//! Univariate and tensor-product B-spline spaces on the reference interval
//! `[-1, 1]`.
//!
//! Besides basis evaluation this module provides the three knot families used
//! throughout the crate:
//!
//! - **uniform**: open knot vectors with equal spans;
//! - **smoothed**: the fixed point of the iteration that moves knots so that
//!   the Greville abscissae become equispaced;
//! - **optimal**: knots at the interior roots of an eigenfunction of the
//!   clamped `2r`-th order boundary eigenproblem (n-width optimal spaces).

use crate::error::{invalid, Error, Result};
use crate::linalg::sym_gen_eig;
use crate::quadrature::composite_rule;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Tolerance used when checking that a point lies inside `[-1, 1]`.
const DOMAIN_SLACK: f64 = 1e-12;

/// Ordered open knot vector on `[-1, 1]` together with its degree.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawKnotVector", into = "RawKnotVector")]
pub struct KnotVector {
    knots: Vec<f64>,
    degree: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawKnotVector {
    knots: Vec<f64>,
    degree: usize,
}

impl TryFrom<RawKnotVector> for KnotVector {
    type Error = Error;
    fn try_from(raw: RawKnotVector) -> Result<Self> {
        KnotVector::new(raw.knots, raw.degree)
    }
}

impl From<KnotVector> for RawKnotVector {
    fn from(kv: KnotVector) -> Self {
        RawKnotVector { knots: kv.knots, degree: kv.degree }
    }
}

impl KnotVector {
    /// Validates and wraps a knot list.
    ///
    /// The list must be non-decreasing, start with `p+1` copies of `-1`, end
    /// with `p+1` copies of `+1`, and have simple interior knots.
    pub fn new(knots: Vec<f64>, degree: usize) -> Result<Self> {
        let p = degree;
        if knots.len() < 2 * p + 2 {
            return invalid(format!(
                "knot vector of degree {p} needs at least {} knots, got {}",
                2 * p + 2,
                knots.len()
            ));
        }
        if knots.iter().any(|k| !k.is_finite()) {
            return invalid("knot vector contains non-finite values");
        }
        if knots.windows(2).any(|w| w[1] < w[0]) {
            return invalid("knot vector is not non-decreasing");
        }
        let m = knots.len();
        if knots[..=p].iter().any(|&k| k != -1.0) || knots[m - p - 1..].iter().any(|&k| k != 1.0) {
            return invalid("knot vector must repeat -1 and +1 exactly p+1 times at the ends");
        }
        let interior = &knots[p + 1..m - p - 1];
        if interior.iter().any(|&k| k <= -1.0 || k >= 1.0) {
            return invalid("interior knots must lie strictly inside (-1, 1)");
        }
        if interior.windows(2).any(|w| w[1] <= w[0]) {
            return invalid("interior knots must be simple (maximal continuity)");
        }
        Ok(Self { knots, degree })
    }

    /// Knot values.
    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Polynomial degree `p`.
    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Number of spans `K`.
    pub fn num_spans(&self) -> usize {
        self.knots.len() - 2 * self.degree - 1
    }

    /// Number of basis functions `p + K`.
    pub fn dim(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    /// Distinct knot values (span breakpoints), `K + 1` entries.
    pub fn breakpoints(&self) -> Vec<f64> {
        let p = self.degree;
        self.knots[p..self.knots.len() - p].to_vec()
    }

    /// Interior knots, `K − 1` entries.
    pub fn interior(&self) -> &[f64] {
        let p = self.degree;
        &self.knots[p + 1..self.knots.len() - p - 1]
    }

    /// Builds an open knot vector from its interior knots.
    pub fn from_interior(p: usize, interior: &[f64]) -> Result<Self> {
        let mut knots = vec![-1.0; p + 1];
        knots.extend_from_slice(interior);
        knots.extend(std::iter::repeat_n(1.0, p + 1));
        Self::new(knots, p)
    }
}

/// Open knot vector with `K` equal spans on `[-1, 1]`.
pub fn make_open_uniform_knots(p: usize, k: usize) -> Result<KnotVector> {
    if k < 1 {
        return invalid(format!("span count must be at least 1, got {k}"));
    }
    let interior: Vec<f64> = (1..k).map(|i| -1.0 + 2.0 * i as f64 / k as f64).collect();
    KnotVector::from_interior(p, &interior)
}

/// Univariate spline space `span{B_i^p}` defined by an open knot vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplineSpace1D {
    knot_vector: KnotVector,
}

impl SplineSpace1D {
    /// Wraps a knot vector.
    pub fn new(knot_vector: KnotVector) -> Self {
        Self { knot_vector }
    }

    /// Uniform space with `k` spans.
    pub fn uniform(p: usize, k: usize) -> Result<Self> {
        make_open_uniform_knots(p, k).map(Self::new)
    }

    /// Space for the given knot family.
    pub fn from_family(family: KnotFamily, p: usize, k: usize) -> Result<Self> {
        build_knots(family, p, k).map(Self::new)
    }

    /// Underlying knot vector.
    pub fn knot_vector(&self) -> &KnotVector {
        &self.knot_vector
    }

    /// Degree `p`.
    pub fn degree(&self) -> usize {
        self.knot_vector.degree
    }

    /// Number of spans `K`.
    pub fn num_spans(&self) -> usize {
        self.knot_vector.num_spans()
    }

    /// Dimension `p + K`.
    pub fn dim(&self) -> usize {
        self.knot_vector.dim()
    }

    /// Index `s` of the knot span containing `x`, with `ξ_s ≤ x < ξ_{s+1}`
    /// (the last span is closed on the right).
    pub fn find_span(&self, x: f64) -> usize {
        let t = &self.knot_vector.knots;
        let p = self.degree();
        let n = self.dim();
        if x >= t[n] {
            return n - 1;
        }
        if x <= t[p] {
            return p;
        }
        // Largest s in [p, n-1] with t[s] <= x.
        let (mut lo, mut hi) = (p, n);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if t[mid] <= x {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }

    /// Values and derivatives up to order `nd` of the `p+1` basis functions
    /// that are nonzero on the span containing `x`.
    ///
    /// Returns the index of the first nonzero function and a table
    /// `ders[r][j] = d^r B_{first+j}/dx^r (x)`. Derivatives of order above `p`
    /// are zero. No domain check is performed.
    pub fn eval_nonzero(&self, x: f64, nd: usize) -> (usize, Vec<Vec<f64>>) {
        let p = self.degree();
        let t = &self.knot_vector.knots;
        let s = self.find_span(x);
        // Triangular table of basis values (lower) and knot differences (upper).
        let mut ndu = vec![vec![0.0; p + 1]; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        ndu[0][0] = 1.0;
        for j in 1..=p {
            left[j] = x - t[s + 1 - j];
            right[j] = t[s + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                ndu[j][r] = right[r + 1] + left[j - r];
                // Multiply before dividing so that exact knot hits give exact
                // 0/1 values.
                let (v, den) = (ndu[r][j - 1], ndu[j][r]);
                ndu[r][j] = saved + right[r + 1] * v / den;
                saved = left[j - r] * v / den;
            }
            ndu[j][j] = saved;
        }
        let mut ders = vec![vec![0.0; p + 1]; nd + 1];
        for j in 0..=p {
            ders[0][j] = ndu[j][p];
        }
        let mut a = vec![vec![0.0; p + 1]; 2];
        for r in 0..=p {
            let (mut s1, mut s2) = (0usize, 1usize);
            a[0][0] = 1.0;
            for k in 1..=nd.min(p) {
                let mut d = 0.0;
                let rk = r as isize - k as isize;
                let pk = p - k;
                if r >= k {
                    a[s2][0] = a[s1][0] / ndu[pk + 1][rk as usize];
                    d = a[s2][0] * ndu[rk as usize][pk];
                }
                let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
                let j2 = if (r as isize) - 1 <= pk as isize { k - 1 } else { p - r };
                for j in j1..=j2 {
                    let idx = (rk + j as isize) as usize;
                    a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][idx];
                    d += a[s2][j] * ndu[idx][pk];
                }
                if r <= pk {
                    a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
                    d += a[s2][k] * ndu[r][pk];
                }
                ders[k][r] = d;
                std::mem::swap(&mut s1, &mut s2);
            }
        }
        let mut fac = p as f64;
        for k in 1..=nd.min(p) {
            for v in ders[k].iter_mut() {
                *v *= fac;
            }
            fac *= (p - k) as f64;
        }
        (s - p, ders)
    }

    /// Values (`order = 0`) or first derivatives (`order = 1`) of all `p+K`
    /// basis functions at `x ∈ [-1, 1]`.
    pub fn eval_basis(&self, x: f64, order: usize) -> Result<Vec<f64>> {
        if order > 1 {
            return invalid(format!("derivative order must be 0 or 1, got {order}"));
        }
        self.eval_basis_derivative(x, order)
    }

    /// Derivative of arbitrary order of all basis functions at `x`.
    pub(crate) fn eval_basis_derivative(&self, x: f64, order: usize) -> Result<Vec<f64>> {
        if !(-1.0 - DOMAIN_SLACK..=1.0 + DOMAIN_SLACK).contains(&x) {
            return Err(Error::Domain(format!("x = {x} lies outside [-1, 1]")));
        }
        let x = x.clamp(-1.0, 1.0);
        let (first, ders) = self.eval_nonzero(x, order);
        let mut out = vec![0.0; self.dim()];
        if order <= self.degree() {
            out[first..first + ders[order].len()].copy_from_slice(&ders[order]);
        }
        Ok(out)
    }

    /// Dense `n_pts × dim` matrix of derivative `order` at the given points.
    pub fn collocation_matrix(&self, xs: &[f64], order: usize) -> Result<DMatrix<f64>> {
        let mut m = DMatrix::zeros(xs.len(), self.dim());
        for (i, &x) in xs.iter().enumerate() {
            let row = self.eval_basis_derivative(x, order)?;
            for (j, v) in row.into_iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        Ok(m)
    }

    /// Evaluates the spline `Σ c_j B_j` (or its derivative) at `x`.
    pub fn eval_spline(&self, coeffs: &[f64], x: f64, order: usize) -> Result<f64> {
        if coeffs.len() != self.dim() {
            return invalid("coefficient length does not match space dimension");
        }
        if !(-1.0 - DOMAIN_SLACK..=1.0 + DOMAIN_SLACK).contains(&x) {
            return Err(Error::Domain(format!("x = {x} lies outside [-1, 1]")));
        }
        let (first, ders) = self.eval_nonzero(x.clamp(-1.0, 1.0), order);
        if order > self.degree() {
            return Ok(0.0);
        }
        Ok(ders[order].iter().enumerate().map(|(j, b)| b * coeffs[first + j]).sum())
    }

    /// Greville abscissae `τ_j = (ξ_{j+1} + … + ξ_{j+p}) / p` (0-based knot
    /// indices). For `p = 0` the span midpoints are returned.
    pub fn greville_abscissae(&self) -> Vec<f64> {
        greville_abscissae(self)
    }
}

/// Greville abscissae of a spline space, satisfying `Σ τ_j B_j(x) = x`.
pub fn greville_abscissae(space: &SplineSpace1D) -> Vec<f64> {
    let p = space.degree();
    let t = space.knot_vector().knots();
    (0..space.dim())
        .map(|j| {
            if p == 0 {
                0.5 * (t[j] + t[j + 1])
            } else {
                t[j + 1..=j + p].iter().sum::<f64>() / p as f64
            }
        })
        .collect()
}

/// Tensor product of `d ∈ {1,2,3}` univariate spaces.
///
/// Flat indices run with axis 0 fastest: `i = i_0 + n_0 (i_1 + n_1 i_2)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorSplineSpace {
    factors: Vec<SplineSpace1D>,
}

impl TensorSplineSpace {
    /// Builds a tensor space from its factors.
    pub fn new(factors: Vec<SplineSpace1D>) -> Result<Self> {
        if factors.is_empty() || factors.len() > 3 {
            return invalid(format!("tensor dimension must be 1..=3, got {}", factors.len()));
        }
        Ok(Self { factors })
    }

    /// Isotropic space: the same factor in every direction.
    pub fn isotropic(space: SplineSpace1D, d: usize) -> Result<Self> {
        Self::new(vec![space; d])
    }

    /// Univariate factors.
    pub fn factors(&self) -> &[SplineSpace1D] {
        &self.factors
    }

    /// Spatial dimension.
    pub fn d(&self) -> usize {
        self.factors.len()
    }

    /// Per-axis dimensions.
    pub fn shape(&self) -> Vec<usize> {
        self.factors.iter().map(|f| f.dim()).collect()
    }

    /// Total dimension `Π (p + K_i)`.
    pub fn dim(&self) -> usize {
        self.shape().iter().product()
    }

    /// Flat index of a multi-index.
    pub fn flat_index(&self, multi: &[usize]) -> usize {
        let shape = self.shape();
        let mut idx = 0;
        for a in (0..shape.len()).rev() {
            idx = idx * shape[a] + multi[a];
        }
        idx
    }

    /// Multi-index of a flat index.
    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        self.shape()
            .into_iter()
            .map(|n| {
                let i = flat % n;
                flat /= n;
                i
            })
            .collect()
    }

    /// Values of all tensor basis functions at a point.
    pub fn eval_basis(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.d() {
            return invalid("point dimension does not match tensor space");
        }
        let vals: Vec<Vec<f64>> = self
            .factors
            .iter()
            .zip(x)
            .map(|(f, &xi)| f.eval_basis(xi, 0))
            .collect::<Result<_>>()?;
        Ok((0..self.dim())
            .map(|i| {
                self.multi_index(i)
                    .iter()
                    .enumerate()
                    .map(|(a, &ia)| vals[a][ia])
                    .product()
            })
            .collect())
    }
}

/// Knot-vector family selector.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "tag", deny_unknown_fields)]
pub enum KnotFamily {
    /// Equal spans.
    Uniform,
    /// Fixed point of the Greville smoothing iteration.
    Smoothed {
        /// Stopping tolerance on the Euclidean norm of the knot update.
        #[serde(default = "default_smoothing_tol")]
        tol: f64,
    },
    /// Roots of the clamped `2r`-th order eigenproblem, with `r = p`.
    Optimal {
        /// Span count of the fine discretization (default `max(8K, 64)`).
        #[serde(default)]
        resolution: Option<usize>,
    },
}

fn default_smoothing_tol() -> f64 {
    DEFAULT_SMOOTHING_TOL
}

/// Default smoothing tolerance.
pub const DEFAULT_SMOOTHING_TOL: f64 = 1e-8;
/// Default smoothing iteration cap.
pub const DEFAULT_SMOOTHING_CAP: usize = 10_000;
/// Largest smoothness order supported by [`optimal_knots`].
pub const MAX_OPTIMAL_ORDER: usize = 5;

impl KnotFamily {
    /// Smoothed family with the default tolerance.
    pub const fn smoothed() -> Self {
        KnotFamily::Smoothed { tol: DEFAULT_SMOOTHING_TOL }
    }

    /// Optimal family with the default resolution.
    pub const fn optimal() -> Self {
        KnotFamily::Optimal { resolution: None }
    }

    /// Short lowercase name.
    pub fn name(&self) -> &'static str {
        match self {
            KnotFamily::Uniform => "uniform",
            KnotFamily::Smoothed { .. } => "smoothed",
            KnotFamily::Optimal { .. } => "optimal",
        }
    }
}

impl fmt::Display for KnotFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for KnotFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(KnotFamily::Uniform),
            "smoothed" => Ok(KnotFamily::smoothed()),
            "optimal" => Ok(KnotFamily::optimal()),
            other => invalid(format!("unknown knot family '{other}' (expected uniform|smoothed|optimal)")),
        }
    }
}

/// Builds the knot vector of a family.
pub fn build_knots(family: KnotFamily, p: usize, k: usize) -> Result<KnotVector> {
    match family {
        KnotFamily::Uniform => make_open_uniform_knots(p, k),
        KnotFamily::Smoothed { tol } => smooth_knots(p, k, tol),
        KnotFamily::Optimal { resolution } => {
            optimal_knots(p, k, resolution.unwrap_or_else(|| default_optimal_resolution(k)))
        }
    }
}

/// Result of the smoothing iteration including its history.
#[derive(Clone, Debug)]
pub struct SmoothingTrace {
    /// Converged knot vector.
    pub knots: KnotVector,
    /// Euclidean norm of the update at each iteration.
    pub updates: Vec<f64>,
    /// Knot iterates `k = 0, 1, …` (only if requested).
    pub iterates: Vec<Vec<f64>>,
}

/// Knot smoothing: iterates `ξ̃^{k+1}_i = Σ_j x̂_j B_j^p(ξ_i; ξ̃^k)` where
/// `x̂_j` are `p+K` equispaced targets on `[-1, 1]` and `ξ_i` are the original
/// uniform knots, until the update norm drops below `tol`.
pub fn smooth_knots(p: usize, k: usize, tol: f64) -> Result<KnotVector> {
    smooth_knots_traced(p, k, tol, DEFAULT_SMOOTHING_CAP, false).map(|t| t.knots)
}

/// [`smooth_knots`] with a configurable cap and optional iterate history.
pub fn smooth_knots_traced(
    p: usize,
    k: usize,
    tol: f64,
    cap: usize,
    keep_iterates: bool,
) -> Result<SmoothingTrace> {
    if !(tol > 0.0) {
        return invalid(format!("smoothing tolerance must be positive, got {tol}"));
    }
    let uniform = make_open_uniform_knots(p, k)?;
    let n = uniform.dim();
    let targets: Vec<f64> = (0..n)
        .map(|j| if n == 1 { 0.0 } else { -1.0 + 2.0 * j as f64 / (n - 1) as f64 })
        .collect();
    let xi = uniform.knots().to_vec();
    let mut current = uniform;
    let mut updates = Vec::new();
    let mut iterates = Vec::new();
    if keep_iterates {
        iterates.push(current.knots().to_vec());
    }
    for _ in 0..cap {
        let space = SplineSpace1D::new(current.clone());
        let mut next = Vec::with_capacity(xi.len());
        for &x in &xi {
            let (first, ders) = space.eval_nonzero(x, 0);
            next.push(ders[0].iter().enumerate().map(|(j, b)| b * targets[first + j]).sum::<f64>());
        }
        // Endpoint knots are held fixed.
        for v in next[..=p].iter_mut() {
            *v = -1.0;
        }
        let m = next.len();
        for v in next[m - p - 1..].iter_mut() {
            *v = 1.0;
        }
        let delta = next
            .iter()
            .zip(current.knots())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        updates.push(delta);
        current = KnotVector::new(next, p)
            .map_err(|e| Error::Internal(format!("smoothing produced an invalid iterate: {e}")))?;
        if keep_iterates {
            iterates.push(current.knots().to_vec());
        }
        if delta < tol {
            return Ok(SmoothingTrace { knots: current, updates, iterates });
        }
    }
    Err(Error::ConvergenceFailure(format!(
        "knot smoothing for p={p}, K={k} did not reach tol {tol} in {cap} iterations"
    )))
}

/// Default span count of the fine space used by [`optimal_knots`].
pub fn default_optimal_resolution(k: usize) -> usize {
    (8 * k).max(64)
}

/// Degree of the fine space used to discretize the clamped eigenproblem of
/// order `2r`.
pub fn optimal_fine_degree(r: usize) -> usize {
    r + 3
}

/// n-width optimal knots for degree `p` (smoothness order `r = p`): the
/// `K − 1` interior roots of the `K`-th eigenfunction of
/// `(-1)^r y^{(2r)} = λ y` with `y^{(i)}(±1) = 0` for `i < r`.
///
/// The eigenproblem is discretized in Galerkin form
/// `∫ y^{(r)} v^{(r)} = λ ∫ y v` with maximally smooth splines at
/// `resolution` spans; roots are bracketed on a 10× oversampled grid and
/// bisected to `1e-12`.
pub fn optimal_knots(p: usize, k: usize, resolution: usize) -> Result<KnotVector> {
    let r = p;
    if r > MAX_OPTIMAL_ORDER {
        return Err(Error::Unsupported(format!(
            "optimal knots are supported for p <= {MAX_OPTIMAL_ORDER}, got p = {p}"
        )));
    }
    if k < 1 {
        return invalid("span count must be at least 1");
    }
    if resolution < 8 * k {
        return invalid(format!("resolution must be at least 8K = {}, got {resolution}", 8 * k));
    }
    if r == 0 || k == 1 {
        // Degree 0: no continuity constraint, uniform knots are n-width optimal
        // in the piecewise-constant sense; K = 1 has no interior knot.
        return make_open_uniform_knots(p, k);
    }
    let mut roots = clamped_eigenfunction_roots(r, k, resolution)?;
    if roots.len() != k - 1 {
        return Err(Error::Numerical(format!(
            "expected {} interior roots of eigenfunction {k}, found {}",
            k - 1,
            roots.len()
        )));
    }
    // The eigenproblem is symmetric about 0; the fine generalized eigensolve
    // is ill-conditioned for large r, so restore the symmetry explicitly.
    let sym: Vec<f64> = (0..roots.len()).map(|i| 0.5 * (roots[i] - roots[roots.len() - 1 - i])).collect();
    roots = sym;
    KnotVector::from_interior(p, &roots)
        .map_err(|e| Error::Numerical(format!("optimal knots are not strictly increasing: {e}")))
}

/// Interior roots of the `n`-th (1-based) eigenfunction of the clamped
/// `2r`-th order eigenproblem.
pub(crate) fn clamped_eigenfunction_roots(r: usize, n: usize, resolution: usize) -> Result<Vec<f64>> {
    let q = optimal_fine_degree(r);
    let fine = SplineSpace1D::uniform(q, resolution)?;
    let rule = composite_rule(fine.knot_vector(), q + 1)?;
    let dim = fine.dim();
    let mut mass = DMatrix::zeros(dim, dim);
    let mut stiff = DMatrix::zeros(dim, dim);
    for (&x, &w) in rule.points.iter().zip(&rule.weights) {
        let (first, ders) = fine.eval_nonzero(x, r);
        for a in 0..=q {
            for b in 0..=q {
                mass[(first + a, first + b)] += w * ders[0][a] * ders[0][b];
                stiff[(first + a, first + b)] += w * ders[r][a] * ders[r][b];
            }
        }
    }
    // Clamp: drop the first r and last r basis functions.
    let free = dim - 2 * r;
    if free < n {
        return Err(Error::Numerical("fine space too small for the requested eigenfunction".into()));
    }
    let m_c = mass.view((r, r), (free, free)).into_owned();
    let s_c = stiff.view((r, r), (free, free)).into_owned();
    let (_, vecs) = sym_gen_eig(&s_c, &m_c)?;
    let mut coeffs = vec![0.0; dim];
    for i in 0..free {
        coeffs[r + i] = vecs[(i, n - 1)];
    }
    let f = |x: f64| fine.eval_spline(&coeffs, x, 0).unwrap_or(0.0);
    let samples = 10 * dim;
    let xs: Vec<f64> = (0..=samples).map(|i| -1.0 + 2.0 * i as f64 / samples as f64).collect();
    let fs: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
    let scale = fs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    // Values this small near the clamped ends are rounding noise, not roots.
    let noise = 1e-10 * scale;
    let mut roots = Vec::new();
    for i in 1..samples - 1 {
        let (a, b) = (fs[i], fs[i + 1]);
        if a.abs() <= noise || b.abs() <= noise {
            if a.abs() <= noise && fs[i - 1].abs() > noise && b.abs() > noise && fs[i - 1] * b < 0.0 {
                roots.push(xs[i]);
            }
            continue;
        }
        if a * b < 0.0 {
            roots.push(bisect(&f, xs[i], xs[i + 1], 1e-12));
        }
    }
    Ok(roots)
}

fn bisect(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let mut fa = f(a);
    while b - a > tol {
        let m = 0.5 * (a + b);
        let fm = f(m);
        if fm == 0.0 {
            return m;
        }
        if fa * fm < 0.0 {
            b = m;
        } else {
            a = m;
            fa = fm;
        }
    }
    0.5 * (a + b)
}

/// Normalized distances of smoothed knots and Greville abscissae from their
/// optimal counterparts: `max|smoothed − optimal| / max|uniform − optimal|`.
pub fn knot_deltas(p: usize, k: usize) -> Result<(f64, f64)> {
    let uniform = make_open_uniform_knots(p, k)?;
    let smoothed = smooth_knots(p, k, DEFAULT_SMOOTHING_TOL)?;
    let optimal = optimal_knots(p, k, default_optimal_resolution(k))?;
    Ok(knot_deltas_from(&uniform, &smoothed, &optimal))
}

/// [`knot_deltas`] for explicitly supplied knot vectors.
pub fn knot_deltas_from(uniform: &KnotVector, smoothed: &KnotVector, optimal: &KnotVector) -> (f64, f64) {
    let max_diff = |a: &[f64], b: &[f64]| a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    let ratio = |num: f64, den: f64| if num == 0.0 { 0.0 } else { num / den };
    let dk = ratio(
        max_diff(smoothed.knots(), optimal.knots()),
        max_diff(uniform.knots(), optimal.knots()),
    );
    let g = |kv: &KnotVector| greville_abscissae(&SplineSpace1D::new(kv.clone()));
    let (gu, gs, go) = (g(uniform), g(smoothed), g(optimal));
    let dg = ratio(max_diff(&gs, &go), max_diff(&gu, &go));
    (dk, dg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_knot_examples() {
        assert_eq!(make_open_uniform_knots(1, 2).unwrap().knots(), &[-1.0, -1.0, 0.0, 1.0, 1.0]);
        assert_eq!(make_open_uniform_knots(2, 1).unwrap().knots(), &[-1.0, -1.0, -1.0, 1.0, 1.0, 1.0]);
        let kv = make_open_uniform_knots(3, 4).unwrap();
        assert_eq!(kv.knots().len(), 11);
        assert_eq!(kv.interior(), &[-0.5, 0.0, 0.5]);
        assert!(make_open_uniform_knots(2, 0).is_err());
    }

    #[test]
    fn basis_examples() {
        let s = SplineSpace1D::uniform(0, 1).unwrap();
        assert_eq!(s.eval_basis(0.0, 0).unwrap(), vec![1.0]);
        let s = SplineSpace1D::uniform(1, 1).unwrap();
        assert_eq!(s.eval_basis(0.0, 0).unwrap(), vec![0.5, 0.5]);
        let s = SplineSpace1D::uniform(2, 1).unwrap();
        assert_eq!(s.eval_basis(1.0, 0).unwrap(), vec![0.0, 0.0, 1.0]);
        assert!(matches!(s.eval_basis(1.5, 0), Err(Error::Domain(_))));
        assert!(s.eval_basis(0.0, 2).is_err());
    }

    #[test]
    fn greville_examples() {
        let g = SplineSpace1D::uniform(1, 4).unwrap().greville_abscissae();
        assert_eq!(g, vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
        let g = SplineSpace1D::uniform(2, 1).unwrap().greville_abscissae();
        assert_eq!(g, vec![-1.0, 0.0, 1.0]);
    }

    #[test]
    fn smoothing_p1_is_fixed_point() {
        let kv = smooth_knots(1, 4, 1e-8).unwrap();
        assert_eq!(kv, make_open_uniform_knots(1, 4).unwrap());
    }

    #[test]
    fn optimal_r1_is_equispaced() {
        let kv = optimal_knots(1, 4, 64).unwrap();
        for (a, b) in kv.interior().iter().zip([-0.5, 0.0, 0.5]) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn optimal_rejects_high_order() {
        assert!(matches!(optimal_knots(6, 4, 64), Err(Error::Unsupported(_))));
    }

    #[test]
    fn knot_vector_json_roundtrip() {
        let kv = make_open_uniform_knots(2, 3).unwrap();
        let s = serde_json::to_string(&kv).unwrap();
        assert!(s.contains("\"degree\":2"));
        let back: KnotVector = serde_json::from_str(&s).unwrap();
        assert_eq!(back, kv);
        assert!(serde_json::from_str::<KnotVector>(r#"{"knots":[-1,0,1],"degree":1}"#).is_err());
    }

    #[test]
    fn tensor_index_bijection() {
        let s = TensorSplineSpace::new(vec![
            SplineSpace1D::uniform(1, 2).unwrap(),
            SplineSpace1D::uniform(2, 2).unwrap(),
        ])
        .unwrap();
        for i in 0..s.dim() {
            assert_eq!(s.flat_index(&s.multi_index(i)), i);
        }
    }
}
