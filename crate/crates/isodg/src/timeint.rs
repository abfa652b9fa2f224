//! Explicit time integration with the five-stage, fourth-order low-storage
//! Runge–Kutta scheme of Carpenter and Kennedy, and CFL timestep estimates.

use crate::error::{invalid, Error, Result};
use crate::geometry::PatchGeometry;
use crate::refops::InequalityConstants;
use serde::{Deserialize, Serialize};

/// Coefficients of a `2N`-storage Runge–Kutta scheme:
/// `k ← a_i k + dt f(t + c_i dt, u)`, `u ← u + b_i k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LsrkScheme {
    /// Register-recycling coefficients (`a_1 = 0`).
    pub a: [f64; 5],
    /// Update weights.
    pub b: [f64; 5],
    /// Stage times (`c_1 = 0`).
    pub c: [f64; 5],
}

impl LsrkScheme {
    /// The classical fourth-order, five-stage scheme (solution 3).
    pub fn carpenter_kennedy() -> Self {
        Self {
            a: [
                0.0,
                -567301805773.0 / 1357537059087.0,
                -2404267990393.0 / 2016746695238.0,
                -3550918686646.0 / 2091501179385.0,
                -1275806237668.0 / 842570457699.0,
            ],
            b: [
                1432997174477.0 / 9575080441755.0,
                5161836677717.0 / 13612068292357.0,
                1720146321549.0 / 2090206949498.0,
                3134564353537.0 / 4481467310338.0,
                2277821191437.0 / 14882151754819.0,
            ],
            c: [
                0.0,
                1432997174477.0 / 9575080441755.0,
                2526269341429.0 / 6820363962896.0,
                2006345519317.0 / 3224310063776.0,
                2802321613138.0 / 2924317926251.0,
            ],
        }
    }

    /// Scheme name recorded in run metadata.
    pub fn name(&self) -> &'static str {
        "lsrk45-carpenter-kennedy"
    }

    /// Stability polynomial `R(z) = 1 + z + z²/2 + z³/6 + z⁴/24 + γ₅ z⁵`,
    /// evaluated by applying one step to `u' = z u`.
    pub fn stability_function(&self, z: num_complex::Complex64) -> num_complex::Complex64 {
        let mut u = num_complex::Complex64::new(1.0, 0.0);
        let mut k = num_complex::Complex64::new(0.0, 0.0);
        for s in 0..5 {
            k = self.a[s] * k + z * u;
            u += self.b[s] * k;
        }
        u
    }
}

impl Default for LsrkScheme {
    fn default() -> Self {
        Self::carpenter_kennedy()
    }
}

/// Low-storage stepper owning the residual register.
///
/// The state and the residual `k` are the only two state-sized buffers; the
/// right-hand side writes its result into a caller-visible scratch that is
/// folded into `k` immediately.
#[derive(Clone, Debug)]
pub struct LsrkStepper {
    scheme: LsrkScheme,
    k: Vec<f64>,
    steps: usize,
}

impl LsrkStepper {
    /// Stepper for states of length `n`.
    pub fn new(n: usize) -> Self {
        Self { scheme: LsrkScheme::default(), k: vec![0.0; n], steps: 0 }
    }

    /// Number of completed steps.
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Advances `u` from `t` to `t + dt`.
    ///
    /// `rhs(t, u)` returns `du/dt`. Returns a divergence error carrying the
    /// step index when any entry becomes non-finite.
    pub fn step<F>(&mut self, rhs: &mut F, u: &mut [f64], t: f64, dt: f64) -> Result<()>
    where
        F: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
    {
        if !(dt > 0.0) || !dt.is_finite() {
            return invalid(format!("timestep must be positive and finite, got {dt}"));
        }
        if self.k.len() != u.len() {
            self.k = vec![0.0; u.len()];
        }
        let s = &self.scheme;
        for stage in 0..5 {
            let f = rhs(t + s.c[stage] * dt, u)?;
            if f.len() != u.len() {
                return Err(Error::Internal("right-hand side returned wrong length".into()));
            }
            let (a, b) = (s.a[stage], s.b[stage]);
            for ((ki, fi), ui) in self.k.iter_mut().zip(&f).zip(u.iter_mut()) {
                *ki = a * *ki + dt * fi;
                *ui += b * *ki;
            }
        }
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step: self.steps });
        }
        self.steps += 1;
        Ok(())
    }
}

/// One low-storage step on a fresh residual register.
pub fn lsrk45_step<F>(mut rhs: F, u: &[f64], t: f64, dt: f64) -> Result<Vec<f64>>
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
{
    let mut out = u.to_vec();
    let mut st = LsrkStepper::new(u.len());
    st.step(&mut rhs, &mut out, t, dt)?;
    Ok(out)
}

/// Integrates from `t0` to `t0 + duration` with `ceil(duration / dt)` equal
/// steps, calling `observe(step, t, u)` after the initial state and every
/// step. Returns the number of steps and the step size actually used.
pub fn integrate<F, O>(mut rhs: F, u: &mut [f64], t0: f64, duration: f64, dt: f64, mut observe: O) -> Result<(usize, f64)>
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
    O: FnMut(usize, f64, &[f64]) -> Result<()>,
{
    if !(duration >= 0.0) || !(dt > 0.0) {
        return invalid("duration must be non-negative and dt positive");
    }
    let steps = (duration / dt - 1e-12).ceil().max(0.0) as usize;
    let h = if steps == 0 { dt } else { duration / steps as f64 };
    let mut st = LsrkStepper::new(u.len());
    observe(0, t0, u)?;
    for n in 0..steps {
        let t = t0 + n as f64 * h;
        st.step(&mut rhs, u, t, h)?;
        observe(n + 1, t0 + (n + 1) as f64 * h, u)?;
    }
    Ok((steps, h))
}

/// Order of the PDE that determines the CFL formula.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PdeOrder {
    /// First-order hyperbolic system (advection, wave1).
    First,
    /// Second-order wave equation (IPDG).
    Second,
}

/// Default stability-region safety factor.
pub const DEFAULT_CT: f64 = 0.5;

/// Timestep estimate and the quantities it was derived from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DtEstimate {
    /// `C_p = max{C_T / 2, C_I}`.
    pub c_p: f64,
    /// Effective patch size (1 on the bi-unit reference patch).
    pub h: f64,
    /// Wavespeed sup-norm.
    pub wavespeed: f64,
    /// Stability-region constant.
    pub c_t: f64,
    /// Estimated timestep.
    pub dt: f64,
}

/// Effective size of a patch: the inverse of the larger of the metric ratios
/// `‖J^s‖·‖1/J‖` and `‖JG‖·‖1/J‖`. Equals 1 on the reference patch and
/// halves when a patch is halved.
pub fn effective_patch_size(g: &PatchGeometry) -> f64 {
    1.0 / (g.sup_js * g.sup_inv_j).max(g.sup_jg * g.sup_inv_j)
}

/// CFL timestep estimate.
///
/// First order: `Δt = C_t H / (C_p ‖c‖_∞)`. Second order:
/// `Δt = C_t C_τ H / (√(C_T² + C_I²) ‖c‖_∞)` with `C_τ = 1` for penalties at
/// the coercivity bound; the minimum over patches of `H` is used.
pub fn estimate_dt(
    constants: &InequalityConstants,
    geoms: &[PatchGeometry],
    wavespeed: f64,
    c_t: f64,
    order: PdeOrder,
) -> Result<DtEstimate> {
    if !(wavespeed > 0.0) || !(c_t > 0.0) {
        return invalid("wavespeed and C_t must be positive");
    }
    if geoms.is_empty() {
        return invalid("no patches");
    }
    let h = geoms.iter().map(effective_patch_size).fold(f64::INFINITY, f64::min);
    let c_p = constants.c_p();
    let dt = match order {
        PdeOrder::First => c_t * h / (c_p * wavespeed),
        PdeOrder::Second => c_t * h / ((constants.c_t.powi(2) + constants.c_i.powi(2)).sqrt() * wavespeed),
    };
    Ok(DtEstimate { c_p, h, wavespeed, c_t, dt })
}

/// Timestep small enough for temporal error to be subdominant:
/// `min(est, h^{(p+1)/4}, 1e-3)` — used for time-accurate reproductions.
pub fn accurate_dt(est: f64, mesh_h: f64, p: usize) -> f64 {
    est.min(mesh_h.powf((p as f64 + 1.0) / 4.0)).min(1e-3)
}
