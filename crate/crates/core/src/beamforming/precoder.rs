use crate::channel::ChannelScene;
use crate::linalg::{c, complex_from_split, CMat, CVec};
use crate::lmi::{
    interference_lmi, precoder_basis, taylor_coefficients, useful_signal_lmi, InterferenceMode,
    InterferenceTerms, LmiBlock, UsefulSignalTerms,
};
use crate::solver::{assemble, solve, ConicSolution, Objective, SolverStatus};
use crate::vars::{AffineScalar, VarGroup, VarId, VarKind, VarRegistry};

use super::{AoConfig, BeamformingState, Scaled, Slacks, Targets};

#[derive(Debug, Clone, PartialEq)]
pub struct PrecoderOutcome {
    pub accepted: bool,
    /// Status of the last SDP solved.
    pub status: SolverStatus,
    /// Number of SDPs solved.
    pub iterations: usize,
    pub power_w: f64,
}

struct Layout {
    reg: VarRegistry,
    /// Per user; `None` for users with a zero target.
    w: Vec<Option<VarGroup>>,
    inn: Vec<Option<VarId>>,
    tau: Vec<Option<VarId>>,
    lambda: Vec<Option<VarId>>,
}

fn layout(n: usize, k_users: usize, targets: &Targets) -> Layout {
    let mut reg = VarRegistry::new();
    let mut w = vec![None; k_users];
    let mut inn = vec![None; k_users];
    let mut tau = vec![None; k_users];
    let mut lambda = vec![None; k_users];
    for &k in &targets.active {
        w[k] = Some(reg.add(format!("w{k}"), 2 * n, VarKind::Free));
    }
    for &k in &targets.active {
        inn[k] = Some(reg.scalar(format!("in{k}"), VarKind::Free));
        tau[k] = Some(reg.scalar(format!("tau{k}"), VarKind::Nonnegative));
        lambda[k] = Some(reg.scalar(format!("lambda{k}"), VarKind::Nonnegative));
    }
    Layout {
        reg,
        w,
        inn,
        tau,
        lambda,
    }
}

/// One linearised precoder SDP around the scaled anchor `w0` at fixed `e`.
fn solve_linearised(
    sc: &Scaled,
    targets: &Targets,
    k_users: usize,
    e: &CVec,
    w0: &CMat,
    config: &AoConfig,
) -> (Layout, ConicSolution) {
    let lay = layout(sc.n, k_users, targets);
    let n = sc.n;
    let basis = precoder_basis(e, n);
    let mut blocks: Vec<LmiBlock> = Vec::new();
    for &k in &targets.active {
        let wk = lay.w[k].as_ref().expect("active user has precoder variables");
        let (inn, tau, lambda) = (lay.inn[k].unwrap(), lay.tau[k].unwrap(), lay.lambda[k].unwrap());

        let mut vars = wk.ids();
        vars.extend([inn, tau]);
        let anchor = w0.column(k).into_owned();
        let (h, g) = (&sc.h[k], &sc.g[k]);
        let useful = useful_signal_lmi(format!("useful{k}"), &vars, sc.xi[k], targets.threshold[k], |x| {
            let w = complex_from_split(&x[..2 * n]);
            UsefulSignalTerms {
                coeffs: taylor_coefficients(&w, &anchor, e, e, h, g).expect("consistent dimensions"),
                interference_noise: x[2 * n],
                tau: x[2 * n + 1],
                beta: None,
            }
        });
        blocks.push(useful.compress(&basis).expect("basis matches block"));

        let others: Vec<usize> = targets.active.iter().copied().filter(|&j| j != k).collect();
        let mut vars: Vec<VarId> = Vec::new();
        for &j in &others {
            vars.extend(lay.w[j].as_ref().unwrap().ids());
        }
        vars.extend([inn, lambda]);
        let q = others.len();
        let block = interference_lmi(
            format!("interference{k}"),
            &vars,
            h,
            g,
            sc.xi[k],
            1.0,
            InterferenceMode::Full,
            |x| {
                let mut w = CMat::zeros(n, q);
                for i in 0..q {
                    w.set_column(i, &complex_from_split(&x[2 * n * i..2 * n * (i + 1)]));
                }
                InterferenceTerms {
                    others: w,
                    e: e.clone(),
                    interference_noise: x[2 * n * q],
                    lambda: x[2 * n * q + 1],
                }
            },
        )
        .expect("consistent dimensions");
        blocks.push(block);
    }
    let terms: Vec<AffineScalar> = lay
        .w
        .iter()
        .flatten()
        .flat_map(|g| g.ids())
        .map(AffineScalar::var)
        .collect();
    let objective = Objective::SquaredNorm {
        terms,
        linear: AffineScalar::default(),
    };
    let mut problem = assemble(&lay.reg, &objective, &blocks, &[]).expect("blocks built from registry");
    problem.label = "precoder".into();
    let sol = solve(&problem, &config.solver);
    (lay, sol)
}

fn extract(lay: &Layout, sol: &ConicSolution, n: usize, k_users: usize) -> CMat {
    let mut w = CMat::zeros(n, k_users);
    for (k, g) in lay.w.iter().enumerate() {
        if let Some(g) = g {
            w.set_column(k, &complex_from_split(sol.values(g)));
        }
    }
    w
}

fn slacks(lay: &Layout, sol: &ConicSolution, noise: f64) -> Slacks {
    let pick = |v: &[Option<VarId>], scale: f64| -> Vec<f64> {
        v.iter().map(|id| id.map_or(0.0, |id| sol.value(id) * scale)).collect()
    };
    Slacks {
        interference_noise: pick(&lay.inn, noise),
        tau: pick(&lay.tau, 1.0),
        lambda: pick(&lay.lambda, 1.0),
        beta: Vec::new(),
        d: Vec::new(),
    }
}

/// Re-linearisation loop shared by the AO precoder step and initialisation.
fn relinearise(
    state: &mut BeamformingState,
    sc: &Scaled,
    targets: &Targets,
    k_users: usize,
    config: &AoConfig,
    first_anchor: CMat,
) -> PrecoderOutcome {
    let n = sc.n;
    let mut anchor = first_anchor;
    let mut power = f64::INFINITY;
    let mut best: Option<(CMat, Slacks)> = None;
    let mut status = SolverStatus::Optimal;
    let mut iterations = 0;
    for _ in 0..config.precoder.max_iters {
        let (lay, sol) = solve_linearised(sc, targets, k_users, &state.e, &anchor, config);
        iterations += 1;
        status = sol.status;
        if !status.is_optimal() {
            break;
        }
        let w = extract(&lay, &sol, n, k_users);
        let p = w.norm_squared();
        let prev = power;
        anchor = w.clone();
        best = Some((w, slacks(&lay, &sol, sc.noise)));
        power = p;
        if prev.is_finite() && (prev - p).abs() <= config.precoder.tol * prev.max(1e-12) {
            break;
        }
    }
    match best {
        Some((w, sl)) => {
            let w_phys = sc.to_physical(&w);
            state.w_anchor = std::mem::replace(&mut state.w, w_phys);
            state.e_anchor = state.e.clone();
            state.slacks = Slacks {
                beta: std::mem::take(&mut state.slacks.beta),
                d: std::mem::take(&mut state.slacks.d),
                ..sl
            };
            let p = state.power();
            state.power_history.push(p);
            PrecoderOutcome {
                accepted: true,
                status: SolverStatus::Optimal,
                iterations,
                power_w: p,
            }
        }
        None => PrecoderOutcome {
            accepted: false,
            status,
            iterations,
            power_w: state.power(),
        },
    }
}

/// Robust precoder update at fixed `e`, linearised around the current `W`.
///
/// The linearised problem is re-solved around its own solution until the
/// power changes by less than the configured relative tolerance. The
/// current `W`, when robustly feasible, is feasible for the first
/// linearisation, so the returned power never exceeds the current one.
/// On solver failure the state is left unchanged.
pub fn precoder_step(
    state: &mut BeamformingState,
    scene: &ChannelScene,
    gamma: &[f64],
    config: &AoConfig,
) -> PrecoderOutcome {
    let Ok(targets) = Targets::new(gamma, scene.k_users) else {
        return PrecoderOutcome {
            accepted: false,
            status: SolverStatus::NumericalFailure,
            iterations: 0,
            power_w: state.power(),
        };
    };
    let sc = Scaled::new(scene);
    if targets.active.is_empty() {
        return zero_precoder(state, scene.k_users);
    }
    let anchor = sc.to_scaled(&state.w);
    relinearise(state, &sc, &targets, scene.k_users, config, anchor)
}

fn zero_precoder(state: &mut BeamformingState, k_users: usize) -> PrecoderOutcome {
    state.w_anchor = state.w.clone();
    state.w = CMat::zeros(state.w.nrows(), k_users);
    state.power_history.push(0.0);
    PrecoderOutcome {
        accepted: true,
        status: SolverStatus::Optimal,
        iterations: 0,
        power_w: 0.0,
    }
}

/// Precoder solve from an anchor that need not be feasible: the anchor is
/// doubled until the first linearisation becomes feasible.
pub(crate) fn precoder_from_scratch(
    state: &mut BeamformingState,
    scene: &ChannelScene,
    targets: &Targets,
    config: &AoConfig,
) -> PrecoderOutcome {
    let sc = Scaled::new(scene);
    if targets.active.is_empty() {
        return zero_precoder(state, scene.k_users);
    }
    let mut anchor = sc.to_scaled(&state.w);
    let mut last = None;
    for _ in 0..=config.precoder.anchor_attempts {
        let out = relinearise(state, &sc, targets, scene.k_users, config, anchor.clone());
        if out.accepted {
            return out;
        }
        let infeasible = out.status == SolverStatus::Infeasible;
        last = Some(out);
        if !infeasible {
            break;
        }
        anchor *= c(2.0, 0.0);
    }
    last.expect("at least one attempt")
}
