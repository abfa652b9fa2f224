//! Configuration parsing, experiment drivers and tabular output.
//!
//! An [`ExperimentConfig`] names one experiment kind and optional overrides
//! of its sweep lists, mesh, PDE and time settings. Every field that is left
//! out falls back to the per-experiment default; an explicitly empty sweep
//! list is a usage error. Configurations are read from TOML (or JSON when the
//! file extension is `.json`) and unknown fields are rejected.
//!
//! Each run writes `<experiment>.csv` and a JSON sidecar `<experiment>.json`
//! recording the git revision, a hash of the resolved configuration and any
//! fitted summary quantities.

use crate::analysis::{
    advection_spectrum, convergence_study, count_outliers, dispersion_relation, fit_slope, laplace_eigenstudy,
    projection_study, second_order_spectrum, smoke3d, ConvergenceSetup, Formulation, ProjectionSetup,
    RESOLVED_REGIME,
};
use crate::error::Error;
use crate::geometry::{build_cartesian_multipatch, BoundaryCondition, CartesianMeshSpec, GlobalMapping};
use crate::refops::{compute_constants, RefOperators1D};
use crate::semidiscrete::{Discretization, Pde, PdeConfig, Velocity};
use crate::splines::{build_knots, KnotFamily, SplineSpace1D};
use crate::timeint::{estimate_dt, integrate, PdeOrder, DEFAULT_CT};
use crate::wadg::MassPath;
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::ffi::OsString;
use std::fmt;
use std::path::{Path, PathBuf};

/// Largest supported spline degree.
pub const MAX_DEGREE: usize = 10;
/// Largest supported span count per patch side.
pub const MAX_SPANS: usize = 1024;
/// Largest supported patch count per side.
pub const MAX_PATCHES: usize = 64;
/// Largest warp strength for which the warped square stays invertible.
pub const MAX_ALPHA: f64 = 0.3;

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

/// Failure of a CLI run, mapped to a process exit status.
#[derive(Debug)]
pub enum CliError {
    /// Invalid configuration or arguments; carries the offending field path.
    Usage(String),
    /// A numerical or I/O failure inside a library module.
    Failure {
        /// Module in which the failure originated.
        module: &'static str,
        /// Underlying error.
        source: Error,
    },
}

impl CliError {
    /// Process exit status: 2 for usage errors, 1 for failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Failure { .. } => 1,
        }
    }

    fn usage(path: &str, msg: impl fmt::Display) -> Self {
        CliError::Usage(format!("{path}: {msg}"))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Failure { module, source } => write!(f, "{module}: {source}"),
        }
    }
}

impl std::error::Error for CliError {}

/// Result alias for CLI operations.
pub type CliResult<T> = std::result::Result<T, CliError>;

fn fail(module: &'static str) -> impl Fn(Error) -> CliError {
    move |source| match source {
        Error::InvalidConfiguration(m) => CliError::Usage(format!("{module}: {m}")),
        source => CliError::Failure { module, source },
    }
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Experiment kinds, one per subcommand.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    /// Trace and inverse inequality constants.
    Constants,
    /// Spectral radius growth of assembled operators.
    Spectrum,
    /// Discrete dispersion relation of periodic advection.
    Dispersion,
    /// Dirichlet Laplacian eigenvalue study.
    Eigstudy,
    /// Exact versus weight-adjusted projections on a warped mesh.
    Project,
    /// 1D standing-wave convergence.
    Convergence1d,
    /// 2D warped multi-patch convergence.
    Convergence2d,
    /// Time-domain simulation with an energy trace.
    Simulate,
    /// 3D smoke test on a two-patch box.
    Smoke3d,
}

impl ExperimentKind {
    /// Lowercase name, used for output file stems.
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Constants => "constants",
            ExperimentKind::Spectrum => "spectrum",
            ExperimentKind::Dispersion => "dispersion",
            ExperimentKind::Eigstudy => "eigstudy",
            ExperimentKind::Project => "project",
            ExperimentKind::Convergence1d => "convergence1d",
            ExperimentKind::Convergence2d => "convergence2d",
            ExperimentKind::Simulate => "simulate",
            ExperimentKind::Smoke3d => "smoke3d",
        }
    }
}

/// Knot family names accepted in configurations and on the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum KnotName {
    /// Equal spans.
    Uniform,
    /// Greville smoothing fixed point.
    Smoothed,
    /// n-width optimal knots.
    Optimal,
}

impl KnotName {
    /// Family with default parameters.
    pub fn family(&self) -> KnotFamily {
        match self {
            KnotName::Uniform => KnotFamily::Uniform,
            KnotName::Smoothed => KnotFamily::smoothed(),
            KnotName::Optimal => KnotFamily::optimal(),
        }
    }
}

/// Mass inversion path names for the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MassName {
    /// Weight-adjusted inverse.
    Wadg,
    /// Exact inverse.
    Exact,
}

impl From<MassName> for MassPath {
    fn from(m: MassName) -> Self {
        match m {
            MassName::Wadg => MassPath::Wadg,
            MassName::Exact => MassPath::Exact,
        }
    }
}

/// PDE selector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PdeKind {
    /// Linear advection.
    Advection,
    /// First-order acoustic system.
    Wave1,
    /// Second-order acoustic wave equation.
    Wave2,
}

/// Sweep lists. `None` selects the experiment default; an empty list is
/// rejected.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Degrees.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<Vec<usize>>,
    /// Spans per patch side.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<Vec<usize>>,
    /// Spans as multiples of the degree (`K = m p`); used when `k` is unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_per_degree: Option<Vec<usize>>,
    /// Mesh sizes `h = 2 / (patches K)`; converted to span counts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<Vec<f64>>,
    /// Patches per side.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patches: Option<Vec<usize>>,
    /// Flux penalties.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<Vec<f64>>,
    /// Warp strengths.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<Vec<f64>>,
    /// Wavenumbers (dispersion).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wavenumbers: Option<Vec<f64>>,
    /// Knot families; defaults to the top-level `knots`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub families: Option<Vec<KnotName>>,
}

/// PDE and flux parameters.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdeSection {
    /// Model problem.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<PdeKind>,
    /// Wavespeed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    /// First-order pressure penalty.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_p: Option<f64>,
    /// First-order velocity penalty.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_u: Option<f64>,
    /// Second-order penalty as a multiple of the coercivity bound.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ipdg_factor: Option<f64>,
    /// Advection velocity.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<[f64; 3]>,
}

/// Mesh parameters.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshSection {
    /// Spatial dimension (simulate only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    /// Boundary condition on every side (simulate only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bc: Option<BoundaryCondition>,
    /// Gauss points per span of the solver rule.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quad_points: Option<usize>,
    /// Frequency of the projection target `cos(mπx/2) cos(mπy/2)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<usize>,
}

/// Time integration parameters.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    /// Final time.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_time: Option<f64>,
    /// Fixed timestep; otherwise estimated from the CFL condition.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    /// Stability-region safety factor `C_t`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cfl: Option<f64>,
    /// Step count (smoke3d).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    /// Output interval in steps (simulate).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub every: Option<usize>,
}

/// A complete experiment description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Experiment kind; may be omitted in files and supplied by the subcommand.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<ExperimentKind>,
    /// Default knot family.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub knots: Option<KnotName>,
    /// Mass inversion path.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mass: Option<MassPath>,
    /// Also run the other mass path and report solution differences.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compare_mass: Option<bool>,
    /// Worker threads.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    /// Output directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    /// Sweep lists.
    #[serde(default)]
    pub sweep: SweepConfig,
    /// PDE parameters.
    #[serde(default)]
    pub pde: PdeSection,
    /// Mesh parameters.
    #[serde(default)]
    pub mesh: MeshSection,
    /// Time parameters.
    #[serde(default)]
    pub time: TimeSection,
}

impl ExperimentConfig {
    /// Configuration selecting `kind` with all defaults.
    pub fn new(kind: ExperimentKind) -> Self {
        Self {
            experiment: Some(kind),
            knots: None,
            mass: None,
            compare_mass: None,
            workers: None,
            output: None,
            sweep: SweepConfig::default(),
            pde: PdeSection::default(),
            mesh: MeshSection::default(),
            time: TimeSection::default(),
        }
    }

    /// Parses TOML.
    pub fn from_toml(s: &str) -> CliResult<Self> {
        toml::from_str(s).map_err(|e| CliError::Usage(format!("config: {e}")))
    }

    /// Parses JSON.
    pub fn from_json(s: &str) -> CliResult<Self> {
        serde_json::from_str(s).map_err(|e| CliError::Usage(format!("config: {e}")))
    }

    /// Serializes to TOML.
    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string(self).map_err(|e| CliError::Usage(format!("config: {e}")))
    }

    /// Reads a file, choosing JSON for a `.json` extension and TOML otherwise.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("config: cannot read {}: {e}", path.display())))?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let r = if is_json { Self::from_json(&text) } else { Self::from_toml(&text) };
        r.map_err(|e| match e {
            CliError::Usage(m) => CliError::Usage(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Experiment kind, required after merging with the subcommand.
    pub fn kind(&self) -> CliResult<ExperimentKind> {
        self.experiment.ok_or_else(|| CliError::usage("experiment", "no experiment kind given"))
    }

    /// Resolves every optional field to its per-experiment default and
    /// validates ranges.
    pub fn resolve(&self) -> CliResult<Resolved> {
        let kind = self.kind()?;
        let knots = self.knots.unwrap_or(KnotName::Uniform);
        let d = Defaults::of(kind);
        let s = &self.sweep;
        let families = list("sweep.families", &s.families, match (kind, self.knots) {
            (ExperimentKind::Constants, None) => vec![KnotName::Uniform, KnotName::Smoothed, KnotName::Optimal],
            _ => vec![knots],
        })?;
        let patches = list("sweep.patches", &s.patches, d.patches.clone())?;
        let p = list("sweep.p", &s.p, d.p.clone())?;
        for (i, &v) in p.iter().enumerate() {
            if !(1..=MAX_DEGREE).contains(&v) {
                return Err(CliError::usage(&format!("sweep.p[{i}]"), format!("degree {v} outside 1..={MAX_DEGREE}")));
            }
            if families.contains(&KnotName::Optimal) && v > crate::splines::MAX_OPTIMAL_ORDER {
                return Err(CliError::usage(
                    &format!("sweep.p[{i}]"),
                    format!("optimal knots support p ≤ {}", crate::splines::MAX_OPTIMAL_ORDER),
                ));
            }
        }
        for (i, &v) in patches.iter().enumerate() {
            if !(1..=MAX_PATCHES).contains(&v) {
                return Err(CliError::usage(&format!("sweep.patches[{i}]"), format!("{v} outside 1..={MAX_PATCHES}")));
            }
        }
        let spans = match (&s.k, &s.h, &s.k_per_degree) {
            (Some(_), Some(_), _) => return Err(CliError::usage("sweep.h", "give either k or h, not both")),
            (Some(k), None, _) => Spans::Fixed(list("sweep.k", &Some(k.clone()), vec![])?),
            (None, Some(h), _) => {
                let hs = list("sweep.h", &Some(h.clone()), vec![])?;
                let mut ks = Vec::new();
                for (i, &hv) in hs.iter().enumerate() {
                    if !(hv > 0.0) {
                        return Err(CliError::usage(&format!("sweep.h[{i}]"), "mesh size must be positive"));
                    }
                    ks.push(hv);
                }
                Spans::MeshSize(ks)
            }
            (None, None, Some(m)) => Spans::PerDegree(list("sweep.k_per_degree", &Some(m.clone()), vec![])?),
            (None, None, None) => d.spans.clone(),
        };
        if let Spans::Fixed(ks) | Spans::PerDegree(ks) = &spans {
            let name = if matches!(spans, Spans::Fixed(_)) { "sweep.k" } else { "sweep.k_per_degree" };
            for (i, &v) in ks.iter().enumerate() {
                if !(1..=MAX_SPANS).contains(&v) {
                    return Err(CliError::usage(&format!("{name}[{i}]"), format!("{v} outside 1..={MAX_SPANS}")));
                }
            }
        }
        let tau = list("sweep.tau", &s.tau, d.tau.clone())?;
        for (i, &v) in tau.iter().enumerate() {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(CliError::usage(&format!("sweep.tau[{i}]"), "penalty must be finite and ≥ 0"));
            }
        }
        let alpha = list("sweep.alpha", &s.alpha, d.alpha.clone())?;
        for (i, &v) in alpha.iter().enumerate() {
            if !(0.0..MAX_ALPHA).contains(&v) {
                return Err(CliError::usage(&format!("sweep.alpha[{i}]"), format!("warp must lie in [0, {MAX_ALPHA})")));
            }
        }
        let wavenumbers = list("sweep.wavenumbers", &s.wavenumbers, d.wavenumbers.clone())?;
        for (i, &v) in wavenumbers.iter().enumerate() {
            if !(v > 0.0) || !v.is_finite() {
                return Err(CliError::usage(&format!("sweep.wavenumbers[{i}]"), "wavenumber must be positive"));
            }
        }
        let pde_kind = self.pde.kind.unwrap_or(d.pde);
        let allowed: &[PdeKind] = match kind {
            ExperimentKind::Spectrum => &[PdeKind::Advection, PdeKind::Wave2],
            ExperimentKind::Convergence1d | ExperimentKind::Convergence2d => &[PdeKind::Wave1, PdeKind::Wave2],
            ExperimentKind::Simulate => &[PdeKind::Advection, PdeKind::Wave1, PdeKind::Wave2],
            ExperimentKind::Smoke3d => &[PdeKind::Wave1],
            _ => &[PdeKind::Advection],
        };
        if !allowed.contains(&pde_kind) {
            return Err(CliError::usage("pde.kind", format!("{pde_kind:?} is not available for {}", kind.name())));
        }
        let positive = |path: &str, v: Option<f64>, def: f64| -> CliResult<f64> {
            let v = v.unwrap_or(def);
            if !(v > 0.0) || !v.is_finite() {
                return Err(CliError::usage(path, "must be positive and finite"));
            }
            Ok(v)
        };
        let non_negative = |path: &str, v: Option<f64>, def: f64| -> CliResult<f64> {
            let v = v.unwrap_or(def);
            if !(v >= 0.0) || !v.is_finite() {
                return Err(CliError::usage(path, "must be non-negative and finite"));
            }
            Ok(v)
        };
        let c = positive("pde.c", self.pde.c, 1.0)?;
        let tau_p = non_negative("pde.tau_p", self.pde.tau_p, 1.0)?;
        let tau_u = non_negative("pde.tau_u", self.pde.tau_u, 1.0)?;
        let ipdg_factor = positive("pde.ipdg_factor", self.pde.ipdg_factor, 2.0)?;
        if ipdg_factor < 1.0 {
            return Err(CliError::usage("pde.ipdg_factor", "penalty below the coercivity bound"));
        }
        let beta = self.pde.beta.unwrap_or([1.0, 0.0, 0.0]);
        if beta.iter().any(|b| !b.is_finite()) {
            return Err(CliError::usage("pde.beta", "velocity must be finite"));
        }
        let dim = self.mesh.dim.unwrap_or(d.dim);
        if !(1..=3).contains(&dim) {
            return Err(CliError::usage("mesh.dim", format!("dimension {dim} outside 1..=3")));
        }
        if kind != ExperimentKind::Simulate && self.mesh.dim.is_some_and(|v| v != d.dim) {
            return Err(CliError::usage("mesh.dim", format!("{} runs in {} dimension(s)", kind.name(), d.dim)));
        }
        let bc = self.mesh.bc.unwrap_or(match pde_kind {
            PdeKind::Advection => BoundaryCondition::Periodic,
            _ => BoundaryCondition::Neumann,
        });
        if pde_kind == PdeKind::Advection && bc == BoundaryCondition::Neumann {
            return Err(CliError::usage("mesh.bc", "advection does not accept Neumann conditions"));
        }
        if let Some(q) = self.mesh.quad_points {
            if q == 0 || q > crate::quadrature::MAX_GAUSS_POINTS {
                return Err(CliError::usage(
                    "mesh.quad_points",
                    format!("must lie in 1..={}", crate::quadrature::MAX_GAUSS_POINTS),
                ));
            }
        }
        let mode = self.mesh.mode.unwrap_or(1);
        if mode == 0 {
            return Err(CliError::usage("mesh.mode", "must be ≥ 1"));
        }
        let final_time = non_negative("time.final_time", self.time.final_time, d.final_time)?;
        let dt = match self.time.dt {
            Some(v) => Some(positive("time.dt", Some(v), 1.0)?),
            None => None,
        };
        let cfl = positive("time.cfl", self.time.cfl, DEFAULT_CT)?;
        let steps = self.time.steps.unwrap_or(500);
        if steps == 0 {
            return Err(CliError::usage("time.steps", "must be ≥ 1"));
        }
        let every = self.time.every.unwrap_or(10);
        if every == 0 {
            return Err(CliError::usage("time.every", "must be ≥ 1"));
        }
        if self.workers == Some(0) {
            return Err(CliError::usage("workers", "must be ≥ 1"));
        }
        Ok(Resolved {
            kind,
            families,
            mass: self.mass.unwrap_or_default(),
            compare_mass: self.compare_mass.unwrap_or(false),
            p,
            spans,
            patches,
            tau,
            alpha,
            wavenumbers,
            pde: pde_kind,
            c,
            tau_p,
            tau_u,
            ipdg_factor,
            beta,
            dim,
            bc,
            quad_points: self.mesh.quad_points,
            mode,
            final_time,
            dt,
            cfl,
            steps,
            every,
        })
    }
}

fn list<T: Clone>(path: &str, v: &Option<Vec<T>>, default: Vec<T>) -> CliResult<Vec<T>> {
    match v {
        Some(x) if x.is_empty() => Err(CliError::usage(path, "empty sweep list")),
        Some(x) => Ok(x.clone()),
        None => Ok(default),
    }
}

/// How span counts are specified.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Spans {
    /// Explicit span counts.
    Fixed(Vec<usize>),
    /// Multiples of the degree.
    PerDegree(Vec<usize>),
    /// Mesh sizes, converted with the patch count.
    MeshSize(Vec<f64>),
}

impl Spans {
    /// Span counts for degree `p` and `patches` per side.
    pub fn for_level(&self, p: usize, patches: usize) -> CliResult<Vec<usize>> {
        match self {
            Spans::Fixed(k) => Ok(k.clone()),
            Spans::PerDegree(m) => Ok(m.iter().map(|m| m * p).collect()),
            Spans::MeshSize(hs) => hs
                .iter()
                .enumerate()
                .map(|(i, &h)| {
                    let k = 2.0 / (patches as f64 * h);
                    let kr = k.round();
                    if (k - kr).abs() > 1e-9 * k || kr < 1.0 || kr > MAX_SPANS as f64 {
                        Err(CliError::usage(
                            &format!("sweep.h[{i}]"),
                            format!("h = {h} does not give an integral span count with {patches} patches"),
                        ))
                    } else {
                        Ok(kr as usize)
                    }
                })
                .collect(),
        }
    }
}

struct Defaults {
    p: Vec<usize>,
    spans: Spans,
    patches: Vec<usize>,
    tau: Vec<f64>,
    alpha: Vec<f64>,
    wavenumbers: Vec<f64>,
    pde: PdeKind,
    dim: usize,
    final_time: f64,
}

impl Defaults {
    fn of(kind: ExperimentKind) -> Self {
        let base = Defaults {
            p: vec![2, 3, 4, 5],
            spans: Spans::Fixed(vec![32, 64, 96, 128]),
            patches: vec![1],
            tau: vec![0.5],
            alpha: vec![0.0],
            wavenumbers: (1..=30).map(|i| 0.5 * i as f64).collect(),
            pde: PdeKind::Advection,
            dim: 1,
            final_time: 0.5,
        };
        match kind {
            ExperimentKind::Constants => Defaults { spans: Spans::PerDegree(vec![1, 2]), ..base },
            ExperimentKind::Spectrum => base,
            ExperimentKind::Dispersion => Defaults { p: vec![4], spans: Spans::Fixed(vec![16]), tau: vec![1.0], ..base },
            ExperimentKind::Eigstudy => Defaults { p: vec![4], spans: Spans::Fixed(vec![32]), ..base },
            ExperimentKind::Project => {
                Defaults { p: vec![4], spans: Spans::Fixed(vec![4, 8, 16, 32]), alpha: vec![0.125], dim: 2, ..base }
            }
            ExperimentKind::Convergence1d => Defaults {
                p: vec![2, 3, 4],
                spans: Spans::Fixed(vec![4, 8, 16, 32]),
                patches: vec![2],
                pde: PdeKind::Wave1,
                ..base
            },
            ExperimentKind::Convergence2d => Defaults {
                p: vec![2],
                spans: Spans::Fixed(vec![2, 4]),
                patches: vec![2],
                alpha: vec![0.125],
                pde: PdeKind::Wave1,
                dim: 2,
                ..base
            },
            ExperimentKind::Simulate => Defaults {
                p: vec![3],
                spans: Spans::Fixed(vec![8]),
                patches: vec![2],
                pde: PdeKind::Wave1,
                dim: 2,
                final_time: 1.0,
                ..base
            },
            ExperimentKind::Smoke3d => {
                Defaults { p: vec![2], spans: Spans::Fixed(vec![2]), pde: PdeKind::Wave1, dim: 3, ..base }
            }
        }
    }
}

/// A configuration with every field resolved and validated.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Resolved {
    /// Experiment kind.
    pub kind: ExperimentKind,
    /// Knot families.
    pub families: Vec<KnotName>,
    /// Mass path.
    pub mass: MassPath,
    /// Compare mass paths.
    pub compare_mass: bool,
    /// Degrees.
    pub p: Vec<usize>,
    /// Span specification.
    pub spans: Spans,
    /// Patches per side.
    pub patches: Vec<usize>,
    /// Flux penalties.
    pub tau: Vec<f64>,
    /// Warp strengths.
    pub alpha: Vec<f64>,
    /// Wavenumbers.
    pub wavenumbers: Vec<f64>,
    /// PDE.
    pub pde: PdeKind,
    /// Wavespeed.
    pub c: f64,
    /// Pressure penalty.
    pub tau_p: f64,
    /// Velocity penalty.
    pub tau_u: f64,
    /// IPDG penalty factor.
    pub ipdg_factor: f64,
    /// Advection velocity.
    pub beta: [f64; 3],
    /// Dimension.
    pub dim: usize,
    /// Boundary condition.
    pub bc: BoundaryCondition,
    /// Solver quadrature points per span.
    pub quad_points: Option<usize>,
    /// Projection target frequency.
    pub mode: usize,
    /// Final time.
    pub final_time: f64,
    /// Fixed timestep.
    pub dt: Option<f64>,
    /// CFL factor.
    pub cfl: f64,
    /// Step count.
    pub steps: usize,
    /// Output interval.
    pub every: usize,
}

impl Resolved {
    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("resolved configuration serializes");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

// ---------------------------------------------------------------------------
// Tables
// ---------------------------------------------------------------------------

/// Column value type.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnType {
    /// Signed integer.
    Int,
    /// Real number, written with 17 significant digits.
    Real,
    /// Free text.
    Text,
}

/// Named, typed column.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Column {
    /// Header name.
    pub name: String,
    /// Value type.
    #[serde(rename = "type")]
    pub ty: ColumnType,
}

/// Ordered list of columns.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Schema(pub Vec<Column>);

impl Schema {
    /// Builds a schema from `(name, type)` pairs.
    pub fn new(cols: &[(&str, ColumnType)]) -> Self {
        Schema(cols.iter().map(|(n, t)| Column { name: (*n).into(), ty: *t }).collect())
    }

    /// Header names.
    pub fn names(&self) -> Vec<&str> {
        self.0.iter().map(|c| c.name.as_str()).collect()
    }
}

/// One table cell.
#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    /// Integer.
    Int(i64),
    /// Real.
    Real(f64),
    /// Text.
    Text(String),
}

impl Value {
    fn ty(&self) -> ColumnType {
        match self {
            Value::Int(_) => ColumnType::Int,
            Value::Real(_) => ColumnType::Real,
            Value::Text(_) => ColumnType::Text,
        }
    }

    fn render(&self) -> String {
        match self {
            Value::Int(i) => i.to_string(),
            Value::Real(x) => format_real(*x),
            Value::Text(s) => s.clone(),
        }
    }
}

impl From<usize> for Value {
    fn from(v: usize) -> Self {
        Value::Int(v as i64)
    }
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::Real(v)
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::Text(v.into())
    }
}

impl From<bool> for Value {
    fn from(v: bool) -> Self {
        Value::Int(v as i64)
    }
}

/// Formats a real with 17 significant digits (round-trips exactly).
pub fn format_real(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:.16e}")
    }
}

/// Checks that every row matches the schema in length and cell types.
pub fn check_rows(rows: &[Vec<Value>], schema: &Schema) -> crate::Result<()> {
    for (i, row) in rows.iter().enumerate() {
        if row.len() != schema.0.len() {
            return Err(Error::InvalidArgument(format!(
                "row {i} has {} cells, schema has {} columns",
                row.len(),
                schema.0.len()
            )));
        }
        for (v, c) in row.iter().zip(&schema.0) {
            if v.ty() != c.ty {
                return Err(Error::InvalidArgument(format!(
                    "row {i}, column '{}': expected {:?}, found {:?}",
                    c.name,
                    c.ty,
                    v.ty()
                )));
            }
        }
    }
    Ok(())
}

/// Writes an RFC-4180 CSV with LF line endings; an empty row set produces a
/// header-only file. Rows not matching the schema are rejected before any
/// output is written.
pub fn emit_table(rows: &[Vec<Value>], schema: &Schema, path: &Path) -> crate::Result<()> {
    check_rows(rows, schema)?;
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .quote_style(csv::QuoteStyle::Necessary)
        .from_path(path)
        .map_err(csv_err)?;
    w.write_record(schema.names()).map_err(csv_err)?;
    for row in rows {
        w.write_record(row.iter().map(Value::render)).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a CSV written by [`emit_table`] into its header and raw cells.
pub fn read_table(path: &Path) -> crate::Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_path(path).map_err(csv_err)?;
    let header = r.headers().map_err(csv_err)?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(rec.map_err(csv_err)?.iter().map(String::from).collect());
    }
    Ok((header, rows))
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

/// Rows plus schema and a JSON summary produced by one experiment.
#[derive(Clone, Debug)]
pub struct Table {
    /// Columns.
    pub schema: Schema,
    /// Rows.
    pub rows: Vec<Vec<Value>>,
    /// Fitted quantities and notes recorded in the sidecar.
    pub summary: serde_json::Value,
}

/// Metadata sidecar written next to every CSV.
#[derive(Clone, Debug, Serialize)]
pub struct Metadata {
    /// Experiment kind.
    pub experiment: &'static str,
    /// Crate version.
    pub version: &'static str,
    /// `git rev-parse HEAD` of the working directory, or `unknown`.
    pub git_revision: String,
    /// SHA-256 of the resolved configuration.
    pub config_hash: String,
    /// Resolved configuration.
    pub config: Resolved,
    /// Columns of the CSV.
    pub columns: Schema,
    /// Number of data rows.
    pub rows: usize,
    /// Whether the rayon backend was compiled in.
    pub parallel: bool,
    /// Experiment-specific summary.
    pub summary: serde_json::Value,
}

/// Current git revision, with a `-dirty` suffix for modified trees.
pub fn git_revision() -> String {
    let run = |args: &[&str]| {
        std::process::Command::new("git")
            .args(args)
            .output()
            .ok()
            .filter(|o| o.status.success())
            .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string())
    };
    match run(&["rev-parse", "HEAD"]) {
        Some(rev) if !rev.is_empty() => {
            let dirty = run(&["status", "--porcelain", "--untracked-files=no"]).is_some_and(|s| !s.is_empty());
            if dirty { format!("{rev}-dirty") } else { rev }
        }
        _ => "unknown".into(),
    }
}

// ---------------------------------------------------------------------------
// Experiments
// ---------------------------------------------------------------------------

/// Files written by a run.
#[derive(Clone, Debug)]
pub struct RunOutput {
    /// CSV path.
    pub csv: PathBuf,
    /// Sidecar path.
    pub metadata: PathBuf,
    /// The table that was written.
    pub table: Table,
}

/// Runs the experiment and writes `<out>/<kind>.csv` and `<kind>.json`.
pub fn run_experiment(config: &ExperimentConfig, out_dir: &Path) -> CliResult<RunOutput> {
    let resolved = config.resolve()?;
    let table = build_table(&resolved)?;
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::Failure { module: "cli", source: e.into() })?;
    let stem = resolved.kind.name();
    let csv = out_dir.join(format!("{stem}.csv"));
    let metadata = out_dir.join(format!("{stem}.json"));
    emit_table(&table.rows, &table.schema, &csv).map_err(fail("cli"))?;
    let meta = Metadata {
        experiment: stem,
        version: env!("CARGO_PKG_VERSION"),
        git_revision: git_revision(),
        config_hash: resolved.hash(),
        config: resolved.clone(),
        columns: table.schema.clone(),
        rows: table.rows.len(),
        parallel: crate::par::is_parallel(),
        summary: table.summary.clone(),
    };
    let json = serde_json::to_string_pretty(&meta).map_err(|e| CliError::Failure {
        module: "cli",
        source: Error::Internal(e.to_string()),
    })?;
    std::fs::write(&metadata, json + "\n").map_err(|e| CliError::Failure { module: "cli", source: e.into() })?;
    Ok(RunOutput { csv, metadata, table })
}

/// Computes the table of an experiment without writing it.
pub fn build_table(r: &Resolved) -> CliResult<Table> {
    match r.kind {
        ExperimentKind::Constants => constants_table(r),
        ExperimentKind::Spectrum => spectrum_table(r),
        ExperimentKind::Dispersion => dispersion_table(r),
        ExperimentKind::Eigstudy => eigstudy_table(r),
        ExperimentKind::Project => project_table(r),
        ExperimentKind::Convergence1d | ExperimentKind::Convergence2d => convergence_table(r),
        ExperimentKind::Simulate => simulate_table(r),
        ExperimentKind::Smoke3d => smoke_table(r),
    }
}

use ColumnType::{Int, Real, Text};

fn collect<T>(items: Vec<CliResult<T>>) -> CliResult<Vec<T>> {
    items.into_iter().collect()
}

fn constants_table(r: &Resolved) -> CliResult<Table> {
    let schema = Schema::new(&[
        ("family", Text),
        ("p", Int),
        ("K", Int),
        ("lambda_trace", Real),
        ("lambda_inverse", Real),
        ("c_t", Real),
        ("c_i", Real),
        ("scaled_trace", Real),
        ("scaled_inverse", Real),
        ("c_i_2d", Real),
        ("c_i_3d", Real),
    ]);
    let mut points = Vec::new();
    for &fam in &r.families {
        for &p in &r.p {
            for k in r.spans.for_level(p, 1)? {
                points.push((fam, p, k));
            }
        }
    }
    let results = crate::par::map(&points, |&(fam, p, k)| -> CliResult<(Vec<Value>, serde_json::Value)> {
        let kv = build_knots(fam.family(), p, k).map_err(fail("splines"))?;
        let ops = RefOperators1D::with_default_rule(SplineSpace1D::new(kv.clone())).map_err(fail("refops"))?;
        let c1 = compute_constants(&ops, 1).map_err(fail("refops"))?;
        let c2 = compute_constants(&ops, 2).map_err(fail("refops"))?;
        let c3 = compute_constants(&ops, 3).map_err(fail("refops"))?;
        let kf = k as f64;
        let row = vec![
            fam_name(fam).into(),
            p.into(),
            k.into(),
            c1.lambda_trace.into(),
            c1.lambda_inverse.into(),
            c1.c_t.into(),
            c1.c_i.into(),
            (c1.c_i / kf).into(),
            (c1.c_t / kf).into(),
            c2.c_i.into(),
            c3.c_i.into(),
        ];
        Ok((row, serde_json::to_value(&kv).unwrap_or_default()))
    });
    let mut rows = Vec::new();
    let mut knots = Vec::new();
    for res in collect(results)? {
        rows.push(res.0);
        knots.push(res.1);
    }
    Ok(Table {
        schema,
        rows,
        summary: serde_json::json!({
            "convention": "c_t = lambda_trace, c_i = sqrt(d * lambda_inverse_1d); scaled_trace = c_i / K, scaled_inverse = c_t / K (reference-table layout)",
            "knot_vectors": knots,
        }),
    })
}

fn fam_name(f: KnotName) -> &'static str {
    f.family().name()
}

fn spectrum_table(r: &Resolved) -> CliResult<Table> {
    let schema = Schema::new(&[
        ("operator", Text),
        ("family", Text),
        ("p", Int),
        ("tau", Real),
        ("K", Int),
        ("rho", Real),
        ("rho_per_k", Real),
        ("fitted_slope", Real),
    ]);
    let second = r.pde == PdeKind::Wave2;
    let taus = if second { vec![f64::NAN] } else { r.tau.clone() };
    let mut groups = Vec::new();
    for &fam in &r.families {
        for &p in &r.p {
            for &tau in &taus {
                groups.push((fam, p, tau, r.spans.for_level(p, 1)?));
            }
        }
    }
    let mut points = Vec::new();
    for (g, (fam, p, tau, ks)) in groups.iter().enumerate() {
        for &k in ks {
            points.push((g, *fam, *p, *tau, k));
        }
    }
    let results = crate::par::map(&points, |&(_, fam, p, tau, k)| {
        let rep = if second {
            second_order_spectrum(fam.family(), p, k)
        } else {
            advection_spectrum(fam.family(), p, k, tau)
        };
        rep.map_err(fail("analysis"))
    });
    let reports = collect(results)?;
    let mut slopes = vec![f64::NAN; groups.len()];
    let mut summary = Vec::new();
    for (g, (fam, p, tau, ks)) in groups.iter().enumerate() {
        let ys: Vec<f64> = points.iter().zip(&reports).filter(|(pt, _)| pt.0 == g).map(|(_, rep)| rep.rho).collect();
        let xs: Vec<f64> = ks.iter().map(|&k| k as f64).collect();
        if xs.len() >= 2 {
            slopes[g] = fit_slope(&xs, &ys).map_err(fail("analysis"))?;
        }
        summary.push(serde_json::json!({"family": fam_name(*fam), "p": p, "tau": tau_json(*tau), "slope": slopes[g]}));
    }
    let op = if second { "sqrt_rho_wave2" } else { "rho_advection" };
    let rows = points
        .iter()
        .zip(&reports)
        .map(|(&(g, fam, p, tau, k), rep)| {
            vec![op.into(), fam_name(fam).into(), p.into(), tau.into(), k.into(), rep.rho.into(), rep.slope.into(), slopes[g].into()]
        })
        .collect();
    Ok(Table { schema, rows, summary: serde_json::json!({ "operator": op, "slopes": summary }) })
}

fn tau_json(t: f64) -> serde_json::Value {
    if t.is_finite() { serde_json::json!(t) } else { serde_json::Value::Null }
}

fn dispersion_table(r: &Resolved) -> CliResult<Table> {
    let schema = Schema::new(&[
        ("family", Text),
        ("p", Int),
        ("K", Int),
        ("tau", Real),
        ("k", Real),
        ("k_normalized", Real),
        ("omega_re", Real),
        ("omega_im", Real),
        ("error", Real),
        ("overlap", Real),
        ("resolved_rate", Real),
    ]);
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for &fam in &r.families {
        for &p in &r.p {
            for k in r.spans.for_level(p, 1)? {
                for &tau in &r.tau {
                    let rep = dispersion_relation(p, k, fam.family(), tau, &r.wavenumbers).map_err(fail("analysis"))?;
                    let rate = rep.resolved_rate(RESOLVED_REGIME.0, RESOLVED_REGIME.1).unwrap_or(f64::NAN);
                    summary.push(serde_json::json!({"family": fam_name(fam), "p": p, "K": k, "tau": tau, "resolved_rate": rate}));
                    for i in 0..rep.wavenumbers.len() {
                        rows.push(vec![
                            fam_name(fam).into(),
                            p.into(),
                            k.into(),
                            tau.into(),
                            rep.wavenumbers[i].into(),
                            rep.normalized[i].into(),
                            rep.omega_re[i].into(),
                            rep.omega_im[i].into(),
                            rep.errors[i].into(),
                            rep.overlap[i].into(),
                            rate.into(),
                        ]);
                    }
                }
            }
        }
    }
    Ok(Table {
        schema,
        rows,
        summary: serde_json::json!({
            "normalization": "k_normalized = k * L / N_dofs with L = 2 (wavenumber times dof spacing)",
            "resolved_regime": [RESOLVED_REGIME.0, RESOLVED_REGIME.1],
            "rates": summary,
        }),
    })
}

fn eigstudy_table(r: &Resolved) -> CliResult<Table> {
    let schema = Schema::new(&[
        ("family", Text),
        ("p", Int),
        ("K", Int),
        ("mode", Int),
        ("lambda_h", Real),
        ("lambda", Real),
        ("rel_error", Real),
        ("vec_error", Real),
        ("outliers", Int),
    ]);
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for &fam in &r.families {
        for &p in &r.p {
            for k in r.spans.for_level(p, 1)? {
                let pairs = laplace_eigenstudy(p, k, fam.family()).map_err(fail("analysis"))?;
                let out = count_outliers(&pairs, OUTLIER_CANDIDATES, OUTLIER_FACTOR);
                let max = pairs.last().map(|e| e.lambda_h).unwrap_or(f64::NAN);
                summary.push(serde_json::json!({"family": fam_name(fam), "p": p, "K": k, "outliers": out, "max_eigenvalue": max}));
                for e in &pairs {
                    rows.push(vec![
                        fam_name(fam).into(),
                        p.into(),
                        k.into(),
                        e.mode.into(),
                        e.lambda_h.into(),
                        e.lambda.into(),
                        e.rel_error.into(),
                        e.vec_error.into(),
                        out.into(),
                    ]);
                }
            }
        }
    }
    Ok(Table { schema, rows, summary: serde_json::json!({ "studies": summary }) })
}

/// Top eigenvalues examined for outliers.
pub const OUTLIER_CANDIDATES: usize = 4;
/// Relative-error multiple of the upper-spectrum median that flags an outlier.
pub const OUTLIER_FACTOR: f64 = 10.0;

fn project_table(r: &Resolved) -> CliResult<Table> {
    let schema = Schema::new(&[
        ("family", Text),
        ("p", Int),
        ("patches", Int),
        ("K", Int),
        ("alpha", Real),
        ("h", Real),
        ("dofs", Int),
        ("l2_error", Real),
        ("wadg_error", Real),
        ("difference", Real),
    ]);
    let mut setups = Vec::new();
    for &fam in &r.families {
        for &p in &r.p {
            for &patches in &r.patches {
                for &alpha in &r.alpha {
                    for k in r.spans.for_level(p, patches)? {
                        setups.push(ProjectionSetup { p, k, patches, alpha, mode: r.mode, family: fam.family() });
                    }
                }
            }
        }
    }
    let results = crate::par::map(&setups, |s| projection_study(s).map_err(fail("analysis")));
    let rows = setups
        .iter()
        .zip(collect(results)?)
        .map(|(s, res)| {
            vec![
                s.family.name().into(),
                s.p.into(),
                s.patches.into(),
                s.k.into(),
                s.alpha.into(),
                res.h.into(),
                res.dofs.into(),
                res.l2_error.into(),
                res.wadg_error.into(),
                res.difference.into(),
            ]
        })
        .collect();
    Ok(Table {
        schema,
        rows,
        summary: serde_json::json!({ "target": format!("cos({m} pi x / 2) cos({m} pi y / 2)", m = r.mode) }),
    })
}

fn convergence_table(r: &Resolved) -> CliResult<Table> {
    let schema = Schema::new(&[
        ("family", Text),
        ("formulation", Text),
        ("p", Int),
        ("alpha", Real),
        ("patches", Int),
        ("K", Int),
        ("h", Real),
        ("dofs", Int),
        ("dt", Real),
        ("steps", Int),
        ("error", Real),
        ("rate", Real),
        ("mass_difference", Real),
    ]);
    let two_d = r.kind == ExperimentKind::Convergence2d;
    let formulation = match r.pde {
        PdeKind::Wave2 => Formulation::Wave2,
        _ => Formulation::Wave1,
    };
    let alphas = if two_d { r.alpha.clone() } else { vec![0.0] };
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for &fam in &r.families {
        for &p in &r.p {
            for &alpha in &alphas {
                for &patches in &r.patches {
                    let levels: Vec<(usize, usize)> =
                        r.spans.for_level(p, patches)?.into_iter().map(|k| (patches, k)).collect();
                    let mut setup = if two_d {
                        ConvergenceSetup::two_d(formulation, p, levels, alpha)
                    } else {
                        ConvergenceSetup::one_d(formulation, p, levels)
                    };
                    setup.family = fam.family();
                    setup.final_time = r.final_time;
                    setup.dt = r.dt;
                    setup.cfl = r.cfl;
                    setup.mass = r.mass;
                    setup.compare_mass = r.compare_mass;
                    setup.tau_p = r.tau_p;
                    setup.tau_u = r.tau_u;
                    setup.quad_points = r.quad_points;
                    setup.ipdg_factor = r.ipdg_factor;
                    let res = convergence_study(&setup).map_err(fail("analysis"))?;
                    let hs: Vec<f64> = res.iter().map(|x| x.h).collect();
                    let es: Vec<f64> = res.iter().map(|x| x.error).collect();
                    let fitted = if res.len() >= 2 {
                        crate::analysis::fit_log_slope(&hs, &es).unwrap_or(f64::NAN)
                    } else {
                        f64::NAN
                    };
                    summary.push(serde_json::json!({
                        "family": fam_name(fam), "p": p, "alpha": alpha, "patches": patches, "fitted_rate": fitted,
                    }));
                    for row in res {
                        rows.push(vec![
                            fam_name(fam).into(),
                            format!("{formulation:?}").to_lowercase().as_str().into(),
                            p.into(),
                            alpha.into(),
                            row.patches.into(),
                            row.k.into(),
                            row.h.into(),
                            row.dofs.into(),
                            row.dt.into(),
                            row.steps.into(),
                            row.error.into(),
                            row.rate.into(),
                            row.mass_difference.unwrap_or(f64::NAN).into(),
                        ]);
                    }
                }
            }
        }
    }
    Ok(Table {
        schema,
        rows,
        summary: serde_json::json!({
            "error_norm": "pressure L2 error on the solver quadrature (p+1 Gauss points per span unless mesh.quad_points is set)",
            "series": summary,
        }),
    })
}

fn simulate_table(r: &Resolved) -> CliResult<Table> {
    let schema = Schema::new(&[("step", Int), ("t", Real), ("energy", Real), ("max_abs", Real)]);
    let p = r.p[0];
    let patches = r.patches[0];
    let k = r.spans.for_level(p, patches)?[0];
    let fam = r.families[0];
    let mut spec = CartesianMeshSpec::unit_box(r.dim, patches, fam.family(), p, k, r.bc);
    let alpha = r.alpha[0];
    if alpha != 0.0 {
        if r.dim != 2 {
            return Err(CliError::usage("sweep.alpha", "warping is available in 2D only"));
        }
        spec.global = GlobalMapping::Warp2d { alpha };
    }
    let mesh = build_cartesian_multipatch(&spec).map_err(fail("geometry"))?;
    let (pde, order) = match r.pde {
        PdeKind::Advection => {
            (Pde::Advection { beta: Velocity::Constant(r.beta), tau: r.tau[0] }, PdeOrder::First)
        }
        PdeKind::Wave1 => (Pde::Wave1 { c: r.c, tau_p: r.tau_p, tau_u: r.tau_u }, PdeOrder::First),
        PdeKind::Wave2 => (Pde::Wave2 { c: r.c, tau: None }, PdeOrder::Second),
    };
    let mut disc = Discretization::with_quadrature(mesh, PdeConfig::new(pde), r.mass, r.quad_points)
        .map_err(fail("semidiscrete"))?;
    if r.pde == PdeKind::Wave2 {
        disc.tau_ipdg *= r.ipdg_factor / 2.0;
    }
    let mut state = disc.zero_state();
    let pulse = disc
        .project(&|x: &crate::geometry::Point| (-25.0 * (x[0] * x[0] + x[1] * x[1] + x[2] * x[2])).exp())
        .map_err(fail("semidiscrete"))?;
    for (kk, c) in pulse.iter().enumerate() {
        state.component_mut(kk, 0).copy_from_slice(c);
    }
    let speed = match r.pde {
        PdeKind::Advection => r.beta.iter().map(|b| b * b).sum::<f64>().sqrt().max(f64::MIN_POSITIVE),
        _ => r.c,
    };
    let constants = compute_constants(&disc.refs[0][0], r.dim).map_err(fail("refops"))?;
    let dt = match r.dt {
        Some(dt) => dt,
        None => estimate_dt(&constants, &disc.geoms, speed, r.cfl, order).map_err(fail("timeint"))?.dt,
    };
    let template = state.clone();
    let mut rows = Vec::new();
    let every = r.every;
    let (steps, h) = integrate(
        |t, u| Ok(disc.rhs(&template.with_data(u.to_vec())?, t)?.data),
        &mut state.data,
        0.0,
        r.final_time,
        dt,
        |n, t, u| {
            if n % every == 0 {
                let e = disc.energy(&template.with_data(u.to_vec())?)?;
                let m = u.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                rows.push(vec![n.into(), t.into(), e.into(), m.into()]);
            }
            Ok(())
        },
    )
    .map_err(fail("timeint"))?;
    if steps % every != 0 {
        let e = disc.energy(&state).map_err(fail("semidiscrete"))?;
        let m = state.data.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        rows.push(vec![steps.into(), r.final_time.into(), e.into(), m.into()]);
    }
    Ok(Table {
        schema,
        rows,
        summary: serde_json::json!({
            "steps": steps, "dt": h, "dofs": disc.total_dofs(), "penalty": disc.tau_ipdg,
            "scheme": crate::timeint::LsrkScheme::default().name(),
        }),
    })
}

fn smoke_table(r: &Resolved) -> CliResult<Table> {
    let schema = Schema::new(&[
        ("p", Int),
        ("K", Int),
        ("steps", Int),
        ("energy_initial", Real),
        ("energy_final", Real),
        ("energy_monotone", Int),
        ("constant_residual", Real),
        ("finite", Int),
    ]);
    let mut rows = Vec::new();
    for &p in &r.p {
        for k in r.spans.for_level(p, 1)? {
            let s = smoke3d(p, k, r.steps, r.mass).map_err(fail("analysis"))?;
            if !s.finite {
                return Err(CliError::Failure { module: "analysis", source: Error::Divergence { step: s.steps } });
            }
            rows.push(vec![
                p.into(),
                k.into(),
                s.steps.into(),
                s.energy_initial.into(),
                s.energy_final.into(),
                s.energy_monotone.into(),
                s.constant_residual.into(),
                s.finite.into(),
            ]);
        }
    }
    Ok(Table { schema, rows, summary: serde_json::json!({ "mesh": "affine [-1,3]x[-1,1]^2 box, 2x1x1 patches" }) })
}

// ---------------------------------------------------------------------------
// Command line
// ---------------------------------------------------------------------------

/// Command-line interface.
#[derive(Debug, Parser)]
#[command(name = "isodg", version, about = "Multi-patch DG isogeometric wave solver and analysis toolkit")]
pub struct Cli {
    /// Experiment to run.
    #[command(subcommand)]
    pub command: Command,
    /// Configuration file (TOML, or JSON with a .json extension).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for parallel sweeps.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Mass inversion path.
    #[arg(long, global = true, value_enum)]
    pub mass: Option<MassName>,
    /// Knot family.
    #[arg(long, global = true, value_enum)]
    pub knots: Option<KnotName>,
    /// Fixed timestep.
    #[arg(long, global = true)]
    pub dt: Option<f64>,
    /// CFL safety factor.
    #[arg(long, global = true)]
    pub cfl: Option<f64>,
    /// Final time.
    #[arg(long = "T", global = true)]
    pub final_time: Option<f64>,
}

/// Subcommands.
#[derive(Debug, Clone, Copy, Subcommand)]
pub enum Command {
    /// Trace and inverse inequality constants.
    Constants,
    /// Spectral radius growth.
    Spectrum,
    /// Discrete dispersion relation.
    Dispersion,
    /// Laplacian eigenvalue study.
    Eigstudy,
    /// Exact vs weight-adjusted projection.
    Project,
    /// 1D convergence study.
    Convergence1d,
    /// 2D warped convergence study.
    Convergence2d,
    /// Time-domain simulation.
    Simulate,
    /// 3D smoke test.
    Smoke3d,
}

impl Command {
    /// Experiment kind of the subcommand.
    pub fn kind(&self) -> ExperimentKind {
        match self {
            Command::Constants => ExperimentKind::Constants,
            Command::Spectrum => ExperimentKind::Spectrum,
            Command::Dispersion => ExperimentKind::Dispersion,
            Command::Eigstudy => ExperimentKind::Eigstudy,
            Command::Project => ExperimentKind::Project,
            Command::Convergence1d => ExperimentKind::Convergence1d,
            Command::Convergence2d => ExperimentKind::Convergence2d,
            Command::Simulate => ExperimentKind::Simulate,
            Command::Smoke3d => ExperimentKind::Smoke3d,
        }
    }
}

impl Cli {
    /// Merges the configuration file (if any) with command-line overrides.
    pub fn to_config(&self) -> CliResult<ExperimentConfig> {
        let kind = self.command.kind();
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::new(kind),
        };
        match cfg.experiment {
            Some(k) if k != kind => {
                return Err(CliError::usage(
                    "experiment",
                    format!("config declares '{}' but the subcommand is '{}'", k.name(), kind.name()),
                ))
            }
            _ => cfg.experiment = Some(kind),
        }
        if let Some(o) = &self.out {
            cfg.output = Some(o.clone());
        }
        if let Some(w) = self.workers {
            cfg.workers = Some(w);
        }
        if let Some(m) = self.mass {
            cfg.mass = Some(m.into());
        }
        if let Some(k) = self.knots {
            cfg.knots = Some(k);
            cfg.sweep.families = None;
        }
        if let Some(dt) = self.dt {
            cfg.time.dt = Some(dt);
        }
        if let Some(c) = self.cfl {
            cfg.time.cfl = Some(c);
        }
        if let Some(t) = self.final_time {
            cfg.time.final_time = Some(t);
        }
        Ok(cfg)
    }
}

/// Entry point: parses `args`, runs the experiment and returns the exit
/// status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let run = || -> CliResult<RunOutput> {
        let cfg = cli.to_config()?;
        cfg.resolve()?;
        if let Some(w) = cfg.workers {
            if w == 0 {
                return Err(CliError::usage("workers", "must be ≥ 1"));
            }
            crate::par::set_workers(w);
        }
        let out = cfg.output.clone().unwrap_or_else(|| PathBuf::from("out"));
        run_experiment(&cfg, &out)
    };
    match run() {
        Ok(out) => {
            println!("wrote {} ({} rows) and {}", out.csv.display(), out.table.rows.len(), out.metadata.display());
            0
        }
        Err(e) => {
            eprintln!("isodg: {e}");
            e.exit_code()
        }
    }
}
