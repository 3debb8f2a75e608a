use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::channel::ChannelScene;
use crate::linalg::{complex_from_split, CMat, CVec};
use crate::lmi::{
    ccp_modulus_constraints, interference_lmi, precoder_basis, reflection_basis, taylor_coefficients,
    useful_signal_lmi, InterferenceMode, InterferenceTerms, LmiBlock, UsefulSignalTerms,
};
use crate::solver::{assemble, solve, Objective, SolverStatus};
use crate::vars::{AffineScalar, VarId, VarKind, VarRegistry};

use super::{random_phases, AoConfig, BeamformingState, Scaled, Targets};

#[derive(Debug, Clone, PartialEq)]
pub struct PassiveOutcome {
    pub accepted: bool,
    /// CCP iterations over all runs.
    pub inner_iterations: usize,
    pub restarts: usize,
    /// `‖d‖₁` at the last CCP iterate.
    pub d_l1: f64,
    /// Penalty weight used at each CCP iteration of the final run.
    pub penalties: Vec<f64>,
    pub status: SolverStatus,
}

struct CcpIterate {
    e: CVec,
    d: Vec<f64>,
    beta: Vec<f64>,
    inn: Vec<f64>,
    tau: Vec<f64>,
    lambda: Vec<f64>,
}

/// Blocks shared by the CCP subproblem and the acceptance check.
fn others_of(targets: &Targets, w: &CMat, k: usize) -> CMat {
    let cols: Vec<usize> = targets.active.iter().copied().filter(|&j| j != k).collect();
    let mut out = CMat::zeros(w.nrows(), cols.len());
    for (i, &j) in cols.iter().enumerate() {
        out.set_column(i, &w.column(j));
    }
    out
}

/// One penalty-CCP subproblem: maximise `Σβ - ϱ‖d‖₁` around `anchor` with
/// the scaled precoder `w` fixed.
fn solve_ccp(
    sc: &Scaled,
    targets: &Targets,
    w: &CMat,
    anchor: &CVec,
    rho: f64,
    config: &AoConfig,
) -> (SolverStatus, Option<CcpIterate>) {
    let m = sc.m;
    let mut reg = VarRegistry::new();
    let e = reg.add("e", 2 * m, VarKind::Free);
    let d = reg.add("d", 2 * m, VarKind::Nonnegative);
    let per_user: Vec<(usize, VarId, VarId, VarId, VarId)> = targets
        .active
        .iter()
        .map(|&k| {
            (
                k,
                reg.scalar(format!("beta{k}"), VarKind::Nonnegative),
                reg.scalar(format!("in{k}"), VarKind::Free),
                reg.scalar(format!("tau{k}"), VarKind::Nonnegative),
                reg.scalar(format!("lambda{k}"), VarKind::Nonnegative),
            )
        })
        .collect();

    let mut blocks: Vec<LmiBlock> = Vec::new();
    for &(k, beta, inn, tau, lambda) in &per_user {
        let wk = w.column(k).into_owned();
        let (h, g) = (&sc.h[k], &sc.g[k]);
        let mut vars = e.ids();
        vars.extend([inn, tau, beta]);
        let useful = useful_signal_lmi(format!("useful{k}"), &vars, sc.xi[k], targets.threshold[k], |x| {
            let ev = complex_from_split(&x[..2 * m]);
            UsefulSignalTerms {
                coeffs: taylor_coefficients(&wk, &wk, &ev, anchor, h, g).expect("consistent dimensions"),
                interference_noise: x[2 * m],
                tau: x[2 * m + 1],
                beta: Some(x[2 * m + 2]),
            }
        });
        blocks.push(useful.compress(&reflection_basis(&wk, m)).expect("basis matches block"));

        let others = others_of(targets, w, k);
        let mut vars = e.ids();
        vars.extend([inn, lambda]);
        let block = interference_lmi(
            format!("interference{k}"),
            &vars,
            h,
            g,
            sc.xi[k],
            1.0,
            config.passive_interference,
            |x| InterferenceTerms {
                others: others.clone(),
                e: complex_from_split(&x[..2 * m]),
                interference_noise: x[2 * m],
                lambda: x[2 * m + 1],
            },
        )
        .expect("consistent dimensions");
        blocks.push(block);
    }
    let rows = match ccp_modulus_constraints(&e, anchor, &d) {
        Ok(rows) => rows,
        Err(_) => return (SolverStatus::NumericalFailure, None),
    };
    let mut objective = AffineScalar::default();
    for &(_, beta, ..) in &per_user {
        objective = objective.term(beta, -1.0);
    }
    for id in d.ids() {
        objective = objective.term(id, rho);
    }
    let mut problem =
        assemble(&reg, &Objective::Linear(objective), &blocks, &rows).expect("blocks built from registry");
    problem.label = "passive".into();
    let sol = solve(&problem, &config.solver);
    if !sol.status.is_optimal() {
        return (sol.status, None);
    }
    let k_users = sc.h.len();
    let mut it = CcpIterate {
        e: complex_from_split(sol.values(&e)),
        d: sol.values(&d).to_vec(),
        beta: vec![0.0; k_users],
        inn: vec![0.0; k_users],
        tau: vec![0.0; k_users],
        lambda: vec![0.0; k_users],
    };
    for &(k, beta, inn, tau, lambda) in &per_user {
        it.beta[k] = sol.value(beta);
        it.inn[k] = sol.value(inn);
        it.tau[k] = sol.value(tau);
        it.lambda[k] = sol.value(lambda);
    }
    (SolverStatus::Optimal, Some(it))
}

/// Whether the worst-case QoS constraints admit slack variables at the
/// given scaled precoder and reflection vector. At `(W, e)` the linearised
/// useful-signal bound is exact, so this is the robust constraint itself.
pub(crate) fn robustly_feasible_scaled(
    sc: &Scaled,
    targets: &Targets,
    w: &CMat,
    e: &CVec,
    config: &AoConfig,
) -> bool {
    let n = sc.n;
    let mut reg = VarRegistry::new();
    let mut blocks = Vec::new();
    let basis = precoder_basis(e, n);
    for &k in &targets.active {
        let inn = reg.scalar(format!("in{k}"), VarKind::Free);
        let tau = reg.scalar(format!("tau{k}"), VarKind::Nonnegative);
        let lambda = reg.scalar(format!("lambda{k}"), VarKind::Nonnegative);
        let wk = w.column(k).into_owned();
        let (h, g) = (&sc.h[k], &sc.g[k]);
        let coeffs = taylor_coefficients(&wk, &wk, e, e, h, g).expect("consistent dimensions");
        let useful = useful_signal_lmi(format!("useful{k}"), &[inn, tau], sc.xi[k], targets.threshold[k], |x| {
            UsefulSignalTerms {
                coeffs: coeffs.clone(),
                interference_noise: x[0],
                tau: x[1],
                beta: None,
            }
        });
        blocks.push(useful.compress(&basis).expect("basis matches block"));
        let others = others_of(targets, w, k);
        let block = interference_lmi(
            format!("interference{k}"),
            &[inn, lambda],
            h,
            g,
            sc.xi[k],
            1.0,
            InterferenceMode::Full,
            |x| InterferenceTerms {
                others: others.clone(),
                e: e.clone(),
                interference_noise: x[0],
                lambda: x[1],
            },
        )
        .expect("consistent dimensions");
        blocks.push(block);
    }
    let Ok(mut problem) = assemble(&reg, &Objective::Linear(AffineScalar::default()), &blocks, &[]) else {
        return false;
    };
    problem.label = "acceptance".into();
    solve(&problem, &config.solver).status.is_optimal()
}

/// Robust feasibility of a physical `(W, e)` pair for the scene.
pub fn robustly_feasible(
    scene: &ChannelScene,
    gamma: &[f64],
    w: &CMat,
    e: &CVec,
    config: &AoConfig,
) -> bool {
    let Ok(targets) = Targets::new(gamma, scene.k_users) else {
        return false;
    };
    let sc = Scaled::new(scene);
    robustly_feasible_scaled(&sc, &targets, &sc.to_scaled(w), e, config)
}

fn l1_distance(a: &CVec, b: &CVec) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).sum()
}

fn project_unit_modulus(e: &CVec) -> CVec {
    e.map(|z| {
        let r = z.norm();
        if r > 0.0 {
            z / r
        } else {
            num_complex::Complex64::new(1.0, 0.0)
        }
    })
}

/// Penalty-CCP update of the reflection vector with `W` fixed.
///
/// Each run starts at the current `e` (later runs at fresh random phases),
/// re-linearises around the previous iterate and grows the penalty by `φ`
/// up to `ϱ_max`. A run ends when `‖d‖₁ <= ς` and the iterate moves by at
/// most `ψ` in `ℓ₁`. Its output is projected to unit modulus and accepted
/// only if the current `W` remains robustly feasible there; otherwise the
/// state keeps its reflection vector.
pub fn passive_step(
    state: &mut BeamformingState,
    scene: &ChannelScene,
    gamma: &[f64],
    config: &AoConfig,
) -> PassiveOutcome {
    let mut out = PassiveOutcome {
        accepted: false,
        inner_iterations: 0,
        restarts: 0,
        d_l1: f64::NAN,
        penalties: Vec::new(),
        status: SolverStatus::Optimal,
    };
    let Ok(targets) = Targets::new(gamma, scene.k_users) else {
        out.status = SolverStatus::NumericalFailure;
        return out;
    };
    if targets.active.is_empty() {
        return out;
    }
    let ccp = &config.ccp;
    let sc = Scaled::new(scene);
    let w = sc.to_scaled(&state.w);
    let mut rng = ChaCha8Rng::seed_from_u64(
        state
            .seed
            .wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(state.iteration as u64 + 1)),
    );

    for run in 0..=ccp.max_restarts {
        out.restarts = run;
        out.penalties.clear();
        let mut prev = if run == 0 {
            state.e.clone()
        } else {
            random_phases(&mut rng, sc.m)
        };
        let mut rho = ccp.rho0;
        let mut finished: Option<CcpIterate> = None;
        for _ in 0..ccp.max_inner {
            let (status, it) = solve_ccp(&sc, &targets, &w, &prev, rho, config);
            out.inner_iterations += 1;
            out.status = status;
            let Some(it) = it else { break };
            out.penalties.push(rho);
            let d_l1: f64 = it.d.iter().sum();
            let change = l1_distance(&it.e, &prev);
            out.d_l1 = d_l1;
            if d_l1 <= ccp.slack_tol && change <= ccp.change_tol {
                finished = Some(it);
                break;
            }
            prev = it.e.clone();
            rho = (rho * ccp.growth).min(ccp.rho_max);
        }
        let Some(it) = finished else { continue };
        let e_new = project_unit_modulus(&it.e);
        if robustly_feasible_scaled(&sc, &targets, &w, &e_new, config) {
            state.e_anchor = std::mem::replace(&mut state.e, e_new);
            let noise = sc.noise;
            state.slacks.beta = it.beta.iter().map(|b| b * noise).collect();
            state.slacks.d = it.d;
            state.slacks.interference_noise = it.inn.iter().map(|v| v * noise).collect();
            state.slacks.tau = it.tau;
            state.slacks.lambda = it.lambda;
            out.accepted = true;
        }
        // a converged run that fails the check is not retried from random
        // phases: those start farther from a feasible point
        return out;
    }
    out
}
