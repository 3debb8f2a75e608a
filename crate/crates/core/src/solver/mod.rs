//! Narrow interface to the conic solver.
//!
//! Problems are posed over the real scalars of a [`VarRegistry`]:
//!
//! ```text
//! minimise    cᵀx
//! subject to  F₀ + Σ xᵢ Fᵢ ⪰ 0      (realified LMI blocks)
//!             aᵀx + b >= 0,  aᵀx + b == 0
//!             ‖u(x)‖ <= t(x),  ‖u(x)‖² <= t(x)
//! ```
//!
//! Cone rows are lowered to small arrow-shaped PSD blocks, so the backend
//! only ever sees semidefinite and nonnegative-orthant cones. The backend is
//! an embedded primal-dual interior-point method (see [`ipm`]).

mod ipm;
pub mod sdpa;

use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::RMat;
use crate::lmi::{LmiBlock, LmiError, RealBlock};
use crate::vars::{AffineScalar, ScalarConstraint, VarGroup, VarId, VarKind, VarRegistry};

pub use ipm::{Standard, StdBlock};

pub const TOL_ENV: &str = "IRS_CACHE_SOLVER_TOL";
pub const MAX_ITER_ENV: &str = "IRS_CACHE_SOLVER_MAX_ITER";
/// When set, every solved problem is also written to this directory in
/// sparse SDPA format.
pub const EXPORT_ENV: &str = "IRS_CACHE_SDPA_DIR";

#[derive(Debug, Error, PartialEq)]
pub enum SolverError {
    #[error("variable {0:?} is not registered")]
    UnregisteredVariable(VarId),
    #[error("block `{label}` is not affine-Hermitian: {source}")]
    BadBlock {
        label: String,
        #[source]
        source: LmiError,
    },
    #[error("io error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
    IterationLimit,
}

impl SolverStatus {
    pub fn is_optimal(self) -> bool {
        self == Self::Optimal
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    /// Relative tolerance on primal residual, dual residual and gap.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            max_iter: 100,
        }
    }
}

impl SolverSettings {
    /// Defaults overridden by the environment where set and parseable.
    pub fn from_env() -> Self {
        let mut s = Self::default();
        if let Some(tol) = std::env::var(TOL_ENV).ok().and_then(|v| v.parse::<f64>().ok()) {
            if tol.is_finite() && tol > 0.0 {
                s.tol = tol;
            }
        }
        if let Some(it) = std::env::var(MAX_ITER_ENV)
            .ok()
            .and_then(|v| v.parse::<usize>().ok())
        {
            if it > 0 {
                s.max_iter = it;
            }
        }
        s
    }
}

/// Minimisation objective.
#[derive(Debug, Clone, PartialEq)]
pub enum Objective {
    Linear(AffineScalar),
    /// `Σ terms_i² + linear`
    SquaredNorm {
        terms: Vec<AffineScalar>,
        linear: AffineScalar,
    },
}

/// `‖terms‖ <= bound`, or `‖terms‖² <= bound` when `squared`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConeRow {
    pub terms: Vec<AffineScalar>,
    pub bound: AffineScalar,
    pub squared: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConicProblem {
    pub label: String,
    pub registry: VarRegistry,
    /// Linear cost per scalar.
    pub cost: Vec<f64>,
    pub cost_offset: f64,
    pub psd: Vec<RealBlock>,
    /// Rows `aᵀx + b >= 0`, including the bounds of nonnegative variables.
    pub linear: Vec<AffineScalar>,
    pub equalities: Vec<AffineScalar>,
    pub cones: Vec<ConeRow>,
    /// Epigraph scalar introduced for a squared-norm objective.
    pub epigraph: Option<VarId>,
}

impl ConicProblem {
    pub fn num_vars(&self) -> usize {
        self.registry.len()
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.cost_offset + self.cost.iter().zip(x).map(|(c, x)| c * x).sum::<f64>()
    }

    /// Largest violation of any constraint at `x` (0 when feasible).
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst = 0.0_f64;
        for b in &self.psd {
            let ev = crate::linalg::symmetric_eigenvalues(&b.eval(x));
            if let Some(&lo) = ev.first() {
                worst = worst.max(-lo);
            }
        }
        for row in &self.linear {
            worst = worst.max(-row.eval(x));
        }
        for row in &self.equalities {
            worst = worst.max(row.eval(x).abs());
        }
        for cone in &self.cones {
            let s: f64 = cone.terms.iter().map(|t| t.eval(x).powi(2)).sum();
            let lhs = if cone.squared { s } else { s.sqrt() };
            worst = worst.max(lhs - cone.bound.eval(x));
        }
        worst
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConicSolution {
    pub status: SolverStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    /// Relative primal residual.
    pub primal_residual: f64,
    /// Relative dual residual.
    pub dual_residual: f64,
    /// Relative duality gap.
    pub gap: f64,
    pub iterations: usize,
}

impl ConicSolution {
    pub fn value(&self, id: VarId) -> f64 {
        self.x[id.0]
    }

    pub fn values(&self, group: &VarGroup) -> &[f64] {
        group.values(&self.x)
    }
}

fn check_affine(registry: &VarRegistry, a: &AffineScalar) -> Result<(), SolverError> {
    for (id, _) in &a.terms {
        if !registry.contains(*id) {
            return Err(SolverError::UnregisteredVariable(*id));
        }
    }
    Ok(())
}

/// Builds the standard form: realifies the LMI blocks, turns nonnegative
/// variables into bound rows and lowers a squared-norm objective through an
/// epigraph scalar.
pub fn assemble(
    registry: &VarRegistry,
    objective: &Objective,
    blocks: &[LmiBlock],
    constraints: &[ScalarConstraint],
) -> Result<ConicProblem, SolverError> {
    let mut registry = registry.clone();
    let mut psd = Vec::with_capacity(blocks.len());
    for block in blocks {
        for id in block.terms.keys() {
            if !registry.contains(*id) {
                return Err(SolverError::UnregisteredVariable(*id));
            }
        }
        let real = block.realify().map_err(|source| SolverError::BadBlock {
            label: block.label.clone(),
            source,
        })?;
        psd.push(real);
    }

    let mut linear = Vec::new();
    let mut equalities = Vec::new();
    let mut cones = Vec::new();
    for row in constraints {
        for id in row.variables() {
            if !registry.contains(id) {
                return Err(SolverError::UnregisteredVariable(id));
            }
        }
        match row {
            ScalarConstraint::NonNegative(a) => linear.push(a.clone()),
            ScalarConstraint::Zero(a) => equalities.push(a.clone()),
            ScalarConstraint::SquaredNorm { terms, bound } => cones.push(ConeRow {
                terms: terms.clone(),
                bound: bound.clone(),
                squared: true,
            }),
            ScalarConstraint::Norm { terms, bound } => cones.push(ConeRow {
                terms: terms.clone(),
                bound: bound.clone(),
                squared: false,
            }),
        }
    }

    let (linear_part, epigraph) = match objective {
        Objective::Linear(a) => {
            check_affine(&registry, a)?;
            (a.clone(), None)
        }
        Objective::SquaredNorm { terms, linear: lin } => {
            for t in terms {
                check_affine(&registry, t)?;
            }
            check_affine(&registry, lin)?;
            let t = registry.scalar(unique_name(&registry, "epigraph"), VarKind::Free);
            cones.push(ConeRow {
                terms: terms.clone(),
                bound: AffineScalar::var(t),
                squared: true,
            });
            (lin.clone().term(t, 1.0), Some(t))
        }
    };

    for g in registry.groups() {
        if g.kind == VarKind::Nonnegative {
            linear.extend(g.ids().into_iter().map(AffineScalar::var));
        }
    }

    let mut cost = vec![0.0; registry.len()];
    for (id, a) in &linear_part.terms {
        cost[id.0] += a;
    }
    Ok(ConicProblem {
        label: "problem".into(),
        registry,
        cost,
        cost_offset: linear_part.constant,
        psd,
        linear,
        equalities,
        cones,
        epigraph,
    })
}

fn unique_name(registry: &VarRegistry, base: &str) -> String {
    let mut name = base.to_string();
    let mut i = 0;
    while registry.group(&name).is_some() {
        i += 1;
        name = format!("{base}{i}");
    }
    name
}

static EXPORT_COUNTER: AtomicUsize = AtomicUsize::new(0);

/// Solves with [`SolverSettings::from_env`].
pub fn solve_default(problem: &ConicProblem) -> ConicSolution {
    solve(problem, &SolverSettings::from_env())
}

pub fn solve(problem: &ConicProblem, settings: &SolverSettings) -> ConicSolution {
    if let Ok(dir) = std::env::var(EXPORT_ENV) {
        let n = EXPORT_COUNTER.fetch_add(1, Ordering::Relaxed);
        let path = std::path::Path::new(&dir).join(format!("{}-{n:06}.dat-s", problem.label));
        // debug aid only; a failed export must not change the solve
        let _ = sdpa::export(problem, &path);
    }
    let std_form = Standard::from_problem(problem);
    let out = ipm::solve(&std_form, settings);
    let objective = problem.objective_value(&out.x);
    ConicSolution {
        status: out.status,
        x: out.x,
        objective,
        primal_residual: out.primal_residual,
        dual_residual: out.dual_residual,
        gap: out.gap,
        iterations: out.iterations,
    }
}

/// Arrow block `[[t, uᵀ], [u, I]]` (squared) or `[[t, uᵀ], [u, t I]]`.
fn cone_block(cone: &ConeRow) -> RealBlock {
    let m = cone.terms.len();
    let dim = m + 1;
    let mut constant = RMat::zeros(dim, dim);
    let mut terms: std::collections::BTreeMap<VarId, RMat> = Default::default();
    let mut add = |id: VarId, i: usize, j: usize, v: f64| {
        let a = terms.entry(id).or_insert_with(|| RMat::zeros(dim, dim));
        a[(i, j)] += v;
        if i != j {
            a[(j, i)] += v;
        }
    };
    constant[(0, 0)] = cone.bound.constant;
    for (id, a) in &cone.bound.terms {
        add(*id, 0, 0, *a);
    }
    for (r, u) in cone.terms.iter().enumerate() {
        constant[(0, r + 1)] = u.constant;
        constant[(r + 1, 0)] = u.constant;
        for (id, a) in &u.terms {
            add(*id, 0, r + 1, *a);
        }
        if cone.squared {
            constant[(r + 1, r + 1)] = 1.0;
        } else {
            constant[(r + 1, r + 1)] = cone.bound.constant;
            for (id, a) in &cone.bound.terms {
                add(*id, r + 1, r + 1, *a);
            }
        }
    }
    RealBlock {
        label: if cone.squared { "sq-norm" } else { "norm" }.into(),
        constant,
        terms: terms.into_iter().collect(),
    }
}
