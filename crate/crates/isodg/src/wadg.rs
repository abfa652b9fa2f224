//! Weighted mass matrices on the reference patch and their inversion.
//!
//! The curvilinear mass matrix `M_J = ∫ B_i B_j J` destroys the Kronecker
//! structure of the reference mass matrix. The weight-adjusted approximation
//! `M_J^{-1} ≈ M̂^{-1} M_{1/J} M̂^{-1}` restores it: both reference solves are
//! sum-factorized and the weighted mass `M_{1/J}` is applied matrix-free by
//! quadrature. An exact inverse via dense assembly is provided as a baseline.

use crate::error::{invalid, Error, Result};
use crate::refops::{kron_apply, ref_mass_inverse_apply_in_place, RefOperators1D};
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, OnceLock};

/// How mass matrices are inverted in the solvers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MassPath {
    /// Weight-adjusted inverse `M̂^{-1} M_{w⁻¹} M̂^{-1}`.
    #[default]
    Wadg,
    /// Dense assembly and Cholesky factorization of the weighted mass.
    Exact,
}

impl fmt::Display for MassPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MassPath::Wadg => "wadg",
            MassPath::Exact => "exact",
        })
    }
}

impl FromStr for MassPath {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wadg" => Ok(MassPath::Wadg),
            "exact" => Ok(MassPath::Exact),
            other => invalid(format!("unknown mass path '{other}' (expected wadg|exact)")),
        }
    }
}

/// Tensor-product quadrature weights in the coefficient-compatible layout.
pub fn tensor_quad_weights(refs: &[&RefOperators1D]) -> Vec<f64> {
    let mut w = vec![1.0];
    for r in refs {
        let mut next = Vec::with_capacity(w.len() * r.nq());
        for &wq in &r.rule.weights {
            for &v in &w {
                next.push(v * wq);
            }
        }
        w = next;
    }
    w
}

/// Interpolates coefficients to volume quadrature points.
pub fn to_quad(refs: &[&RefOperators1D], x: &[f64]) -> Result<Vec<f64>> {
    let f: Vec<&DMatrix<f64>> = refs.iter().map(|r| &r.basis_at_quad).collect();
    kron_apply(&f, x)
}

/// Applies the transpose of the interpolation (test-function integration
/// without weights).
pub fn from_quad(refs: &[&RefOperators1D], v: &[f64]) -> Result<Vec<f64>> {
    let bt: Vec<DMatrix<f64>> = refs.iter().map(|r| r.basis_at_quad.transpose()).collect();
    let f: Vec<&DMatrix<f64>> = bt.iter().collect();
    kron_apply(&f, v)
}

/// Applies `(∫ B_i B_j w)` to `x` matrix-free: interpolate to quadrature,
/// scale by `w` times the quadrature weights, integrate against the basis.
pub fn weighted_mass_apply(refs: &[&RefOperators1D], w: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    let qw = tensor_quad_weights(refs);
    if w.len() != qw.len() {
        return invalid(format!("weight samples have length {}, expected {}", w.len(), qw.len()));
    }
    let mut u = to_quad(refs, x)?;
    for ((v, wq), ww) in u.iter_mut().zip(&qw).zip(w) {
        *v *= wq * ww;
    }
    from_quad(refs, &u)
}

/// Weight-adjusted inverse: `M̂^{-1} (M_{w} (M̂^{-1} x))` where `w` holds the
/// samples of the inverse weight (e.g. `1/J`).
pub fn wadg_inverse_apply(refs: &[&RefOperators1D], inv_weight: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    let mut y = x.to_vec();
    ref_mass_inverse_apply_in_place(refs, &mut y)?;
    let mut z = weighted_mass_apply(refs, inv_weight, &y)?;
    ref_mass_inverse_apply_in_place(refs, &mut z)?;
    Ok(z)
}

/// Samples of `w_R² / J` at volume points where `w_R = Σ B_j w_j` is the
/// rational weight defined by NURBS control weights `w_j`.
pub fn nurbs_weight_samples(weights: &[f64], refs: &[&RefOperators1D], j: &[f64]) -> Result<Vec<f64>> {
    let dim: usize = refs.iter().map(|r| r.dim()).product();
    if weights.len() != dim {
        return invalid(format!("expected {dim} control weights, got {}", weights.len()));
    }
    if let Some(w) = weights.iter().find(|&&w| !(w > 0.0)) {
        return invalid(format!("NURBS weights must be positive, found {w}"));
    }
    let wr = to_quad(refs, weights)?;
    if wr.len() != j.len() {
        return invalid("Jacobian samples do not match the volume rule");
    }
    Ok(wr.iter().zip(j).map(|(w, jj)| w * w / jj).collect())
}

/// Dense weighted mass matrix `∫ B_i B_j w` (test and baseline path).
pub fn weighted_mass_matrix(refs: &[&RefOperators1D], w: &[f64]) -> Result<DMatrix<f64>> {
    let dim: usize = refs.iter().map(|r| r.dim()).product();
    let bs: Vec<&DMatrix<f64>> = refs.iter().map(|r| &r.basis_at_quad).collect();
    let b = crate::refops::dense_kron(&bs);
    let qw = tensor_quad_weights(refs);
    if w.len() != qw.len() {
        return invalid("weight samples do not match the volume rule");
    }
    let mut bw = b.clone();
    for q in 0..qw.len() {
        bw.row_mut(q).scale_mut(qw[q] * w[q]);
    }
    let m = b.transpose() * bw;
    debug_assert_eq!(m.nrows(), dim);
    Ok((&m + m.transpose()) * 0.5)
}

/// Per-patch mass inverse with a fixed weight.
///
/// The physical mass is `∫ B_i B_j ω` for a positive weight `ω` sampled at
/// volume points (typically `ω = J / c²` or `ω = J`).
#[derive(Clone)]
pub struct WeightedMassOperator {
    refs: Vec<Arc<RefOperators1D>>,
    weight: Vec<f64>,
    inv_weight: Vec<f64>,
    mode: MassPath,
    exact: Option<Cholesky<f64, Dyn>>,
    inv_weight_mass: OnceLock<Cholesky<f64, Dyn>>,
}

impl fmt::Debug for WeightedMassOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("WeightedMassOperator")
            .field("points", &self.weight.len())
            .field("mode", &self.mode)
            .finish()
    }
}

impl WeightedMassOperator {
    /// Builds the operator; the exact path assembles and factors the dense
    /// weighted mass, the weight-adjusted path caches `1/ω`.
    pub fn new(refs: Vec<Arc<RefOperators1D>>, weight: Vec<f64>, mode: MassPath) -> Result<Self> {
        if let Some(w) = weight.iter().find(|&&w| !(w > 0.0)) {
            return Err(Error::Numerical(format!(
                "mass weight must be positive at all quadrature points, found {w}"
            )));
        }
        let inv_weight = weight.iter().map(|w| 1.0 / w).collect();
        let exact = match mode {
            MassPath::Wadg => None,
            MassPath::Exact => {
                let r: Vec<&RefOperators1D> = refs.iter().map(|a| a.as_ref()).collect();
                let m = weighted_mass_matrix(&r, &weight)?;
                Some(Cholesky::new(m).ok_or_else(|| Error::Numerical("weighted mass is not SPD".into()))?)
            }
        };
        Ok(Self { refs, weight, inv_weight, mode, exact, inv_weight_mass: OnceLock::new() })
    }

    /// Inversion path.
    pub fn mode(&self) -> MassPath {
        self.mode
    }

    fn refs(&self) -> Vec<&RefOperators1D> {
        self.refs.iter().map(|a| a.as_ref()).collect()
    }

    /// Weight samples `ω`.
    pub fn weight(&self) -> &[f64] {
        &self.weight
    }

    /// Forward application `M_ω x`.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        weighted_mass_apply(&self.refs(), &self.weight, x)
    }

    /// Application of the matrix whose inverse [`apply_inverse`](Self::apply_inverse)
    /// applies: `M_ω` on the exact path, `M̂ M_{1/ω}^{-1} M̂` on the
    /// weight-adjusted path. This is the mass that defines the discrete
    /// energy the solvers actually conserve or dissipate.
    pub fn norm_apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if self.exact.is_some() {
            return self.apply(x);
        }
        let refs = self.refs();
        let masses: Vec<&DMatrix<f64>> = refs.iter().map(|r| &r.mass).collect();
        let y = kron_apply(&masses, x)?;
        let ch = match self.inv_weight_mass.get() {
            Some(ch) => ch,
            None => {
                let m = weighted_mass_matrix(&refs, &self.inv_weight)?;
                let ch = Cholesky::new(m).ok_or_else(|| Error::Numerical("weighted mass is not SPD".into()))?;
                self.inv_weight_mass.get_or_init(|| ch)
            }
        };
        let mut v = DVector::from_column_slice(&y);
        ch.solve_mut(&mut v);
        kron_apply(&masses, v.as_slice())
    }

    /// Inverse application (weight-adjusted or exact per the mode).
    pub fn apply_inverse(&self, x: &[f64]) -> Result<Vec<f64>> {
        match &self.exact {
            None => wadg_inverse_apply(&self.refs(), &self.inv_weight, x),
            Some(ch) => {
                let mut v = DVector::from_column_slice(x);
                ch.solve_mut(&mut v);
                Ok(v.as_slice().to_vec())
            }
        }
    }
}
