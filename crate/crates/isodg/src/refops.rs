//! Reference-patch operators: 1D mass, stiffness and face-mass matrices,
//! basis tables at quadrature points, sum-factorized Kronecker application,
//! and the constants of the spline trace and inverse inequalities.

use crate::error::{invalid, Error, Result};
use crate::linalg::{max_gen_eig, SpdSolver};
use crate::quadrature::{composite_rule, Rule1D};
use crate::splines::SplineSpace1D;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// One-dimensional reference operators of a spline space.
#[derive(Clone, Debug)]
pub struct RefOperators1D {
    /// The spline space.
    pub space: SplineSpace1D,
    /// Volume quadrature rule the matrices were assembled with.
    pub rule: Rule1D,
    /// Mass matrix `∫ B_i B_j`.
    pub mass: DMatrix<f64>,
    /// Stiffness matrix `∫ B_i' B_j'`.
    pub stiffness: DMatrix<f64>,
    /// Face mass `B_i(−1)B_j(−1) + B_i(1)B_j(1)`.
    pub face_mass: DMatrix<f64>,
    /// `n_q × n` basis values at quadrature points.
    pub basis_at_quad: DMatrix<f64>,
    /// `n_q × n` basis derivatives at quadrature points.
    pub deriv_at_quad: DMatrix<f64>,
    /// Basis values at `x = −1` and `x = +1`.
    pub endpoint_values: [Vec<f64>; 2],
    /// Basis derivatives at `x = −1` and `x = +1`.
    pub endpoint_derivs: [Vec<f64>; 2],
    /// Factorization of the mass matrix.
    pub mass_factorization: SpdSolver,
}

impl RefOperators1D {
    /// Dimension `p + K`.
    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    /// Number of quadrature points.
    pub fn nq(&self) -> usize {
        self.rule.len()
    }

    /// Operators assembled with the default `p+1`-point composite rule.
    pub fn with_default_rule(space: SplineSpace1D) -> Result<Self> {
        let rule = composite_rule(space.knot_vector(), space.degree() + 1)?;
        build_ref_operators(&space, &rule)
    }
}

/// Assembles the reference operators of `space` with `rule`, which must be
/// exact for degree `2p` on the span partition.
pub fn build_ref_operators(space: &SplineSpace1D, rule: &Rule1D) -> Result<RefOperators1D> {
    let n = space.dim();
    let p = space.degree();
    let nq = rule.len();
    let mut b = DMatrix::zeros(nq, n);
    let mut db = DMatrix::zeros(nq, n);
    for (q, &x) in rule.points.iter().enumerate() {
        let (first, ders) = space.eval_nonzero(x, 1);
        for j in 0..=p {
            b[(q, first + j)] = ders[0][j];
            if p > 0 {
                db[(q, first + j)] = ders[1][j];
            }
        }
    }
    let mut bw = b.clone();
    let mut dbw = db.clone();
    for q in 0..nq {
        let w = rule.weights[q];
        bw.row_mut(q).scale_mut(w);
        dbw.row_mut(q).scale_mut(w);
    }
    let mass = b.transpose() * &bw;
    let stiffness = db.transpose() * &dbw;
    let mass = (&mass + mass.transpose()) * 0.5;
    let stiffness = (&stiffness + stiffness.transpose()) * 0.5;
    let left = space.eval_basis(-1.0, 0)?;
    let right = space.eval_basis(1.0, 0)?;
    let dleft = space.eval_basis(-1.0, 1)?;
    let dright = space.eval_basis(1.0, 1)?;
    let face_mass = DMatrix::from_fn(n, n, |i, j| left[i] * left[j] + right[i] * right[j]);
    let mass_factorization = SpdSolver::new(&mass, p)
        .map_err(|e| Error::Numerical(format!("reference mass factorization failed: {e}")))?;
    Ok(RefOperators1D {
        space: space.clone(),
        rule: rule.clone(),
        mass,
        stiffness,
        face_mass,
        basis_at_quad: b,
        deriv_at_quad: db,
        endpoint_values: [left, right],
        endpoint_derivs: [dleft, dright],
        mass_factorization,
    })
}

/// Constants of the reference trace and inverse inequalities.
///
/// Convention: `C_T = λ_T` (largest generalized eigenvalue of the face mass)
/// and `C_I = √λ_I` (square root of the largest generalized eigenvalue of the
/// stiffness matrix), both against the mass matrix.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InequalityConstants {
    /// Largest trace eigenvalue in `d` dimensions (equal to the 1D value).
    pub lambda_trace: f64,
    /// Largest inverse eigenvalue in `d` dimensions (`d ×` the 1D value).
    pub lambda_inverse: f64,
    /// Trace constant `C_T = λ_T`.
    pub c_t: f64,
    /// Inverse constant `C_I = √λ_I`.
    pub c_i: f64,
    /// Spatial dimension.
    pub d: usize,
}

impl InequalityConstants {
    /// `C_p = max{C_T / 2, C_I}`.
    pub fn c_p(&self) -> f64 {
        (0.5 * self.c_t).max(self.c_i)
    }
}

/// Computes the largest generalized eigenvalues of `(M̂^f, M̂)` and `(K̂, M̂)`
/// and applies the `d`-dimensional tensor-product scaling rules.
pub fn compute_constants(ops: &RefOperators1D, d: usize) -> Result<InequalityConstants> {
    if d == 0 || d > 3 {
        return invalid(format!("dimension must be 1..=3, got {d}"));
    }
    let lt = max_gen_eig(&ops.face_mass, &ops.mass)?;
    let li = max_gen_eig(&ops.stiffness, &ops.mass)?;
    let li_d = d as f64 * li;
    Ok(InequalityConstants { lambda_trace: lt, lambda_inverse: li_d, c_t: lt, c_i: li_d.sqrt(), d })
}

/// Shape bookkeeping for tensor coefficient arrays (axis 0 fastest).
fn axis_strides(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let before: usize = shape[..axis].iter().product();
    let after: usize = shape[axis + 1..].iter().product();
    (before, shape[axis], after)
}

/// Mode-`axis` product: replaces the extent `n_axis` by `m.nrows()`.
pub fn mode_product(m: &DMatrix<f64>, x: &[f64], shape: &[usize], axis: usize, out: &mut Vec<f64>) {
    let (before, n, after) = axis_strides(shape, axis);
    debug_assert_eq!(m.ncols(), n);
    let rows = m.nrows();
    out.clear();
    out.resize(before * rows * after, 0.0);
    for r in 0..after {
        for i in 0..n {
            let src = &x[(r * n + i) * before..(r * n + i + 1) * before];
            for j in 0..rows {
                let mji = m[(j, i)];
                if mji == 0.0 {
                    continue;
                }
                let dst = &mut out[(r * rows + j) * before..(r * rows + j + 1) * before];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += mji * s;
                }
            }
        }
    }
}

/// Applies `A_{d−1} ⊗ … ⊗ A_0` (factor `a` acting on axis `a`) to `x` by
/// successive mode products. Factors may be rectangular.
pub fn kron_apply(factors: &[&DMatrix<f64>], x: &[f64]) -> Result<Vec<f64>> {
    let mut shape: Vec<usize> = factors.iter().map(|f| f.ncols()).collect();
    let total: usize = shape.iter().product();
    if x.len() != total {
        return invalid(format!(
            "coefficient array has length {}, expected {total} for factor shape {shape:?}",
            x.len()
        ));
    }
    let mut cur = x.to_vec();
    let mut buf = Vec::new();
    for (a, f) in factors.iter().enumerate() {
        mode_product(f, &cur, &shape, a, &mut buf);
        shape[a] = f.nrows();
        std::mem::swap(&mut cur, &mut buf);
    }
    Ok(cur)
}

/// Solves `(M̂_{d−1} ⊗ … ⊗ M̂_0) y = x` in place by one sweep of 1D solves per
/// axis.
pub fn ref_mass_inverse_apply_in_place(ops: &[&RefOperators1D], x: &mut [f64]) -> Result<()> {
    let shape: Vec<usize> = ops.iter().map(|o| o.dim()).collect();
    let total: usize = shape.iter().product();
    if x.len() != total {
        return invalid(format!("coefficient array has length {}, expected {total}", x.len()));
    }
    let mut fiber = Vec::new();
    for (a, op) in ops.iter().enumerate() {
        let (before, n, after) = axis_strides(&shape, a);
        fiber.resize(n, 0.0);
        for r in 0..after {
            for l in 0..before {
                for i in 0..n {
                    fiber[i] = x[(r * n + i) * before + l];
                }
                op.mass_factorization.solve_in_place(&mut fiber);
                for i in 0..n {
                    x[(r * n + i) * before + l] = fiber[i];
                }
            }
        }
    }
    Ok(())
}

/// Returns `(M̂_{d−1} ⊗ … ⊗ M̂_0)^{-1} x`.
pub fn ref_mass_inverse_apply(ops: &[&RefOperators1D], x: &[f64]) -> Result<Vec<f64>> {
    let mut y = x.to_vec();
    ref_mass_inverse_apply_in_place(ops, &mut y)?;
    Ok(y)
}

/// Dense Kronecker product `A_{d−1} ⊗ … ⊗ A_0`; test and analysis helper.
pub fn dense_kron(factors: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let mut out = DMatrix::from_element(1, 1, 1.0);
    for f in factors {
        out = f.kronecker(&out);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn p1_k1_matrices() {
        let ops = RefOperators1D::with_default_rule(SplineSpace1D::uniform(1, 1).unwrap()).unwrap();
        let m = [[2.0 / 3.0, 1.0 / 3.0], [1.0 / 3.0, 2.0 / 3.0]];
        let k = [[0.5, -0.5], [-0.5, 0.5]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((ops.mass[(i, j)] - m[i][j]).abs() < 1e-15);
                assert!((ops.stiffness[(i, j)] - k[i][j]).abs() < 1e-15);
                assert_eq!(ops.face_mass[(i, j)], if i == j { 1.0 } else { 0.0 });
            }
        }
        let c = compute_constants(&ops, 1).unwrap();
        assert!((c.lambda_trace - 3.0).abs() < 1e-13);
        assert!((c.lambda_inverse - 3.0).abs() < 1e-13);
    }

    #[test]
    fn kron_identity_is_noop() {
        let i3 = DMatrix::<f64>::identity(3, 3);
        let x: Vec<f64> = (0..27).map(|v| v as f64).collect();
        assert_eq!(kron_apply(&[&i3, &i3, &i3], &x).unwrap(), x);
        assert!(kron_apply(&[&i3, &i3], &x).is_err());
    }

    #[test]
    fn kron_matches_dense() {
        let a = DMatrix::from_fn(3, 3, |i, j| (i as f64 + 1.3 * j as f64).sin());
        let b = DMatrix::from_fn(2, 3, |i, j| (0.7 * i as f64 - j as f64).cos());
        let x: Vec<f64> = (0..9).map(|v| (v as f64 * 0.41).sin()).collect();
        let y = kron_apply(&[&a, &b], &x).unwrap();
        let dense = dense_kron(&[&a, &b]);
        let yd = dense * nalgebra::DVector::from_vec(x);
        for (u, v) in y.iter().zip(yd.iter()) {
            assert!((u - v).abs() < 1e-13);
        }
    }
}
