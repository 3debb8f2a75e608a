//! Joint active and passive beamforming.
//!
//! The precoder step solves the robust power-minimisation SDP with the
//! reflection vector fixed, re-linearising the useful signal around the
//! previous precoder until the power settles. The passive step runs a
//! penalty convex-concave procedure on the reflection vector with the
//! precoder fixed. [`alternating_optimize`] alternates the two.
//!
//! Internally every subproblem is posed on a rescaled copy of the scene:
//! channels are multiplied by `√p₀/σ` so the noise power is one and a
//! unit-norm precoder carries `p₀` watts, where `p₀` is the power that gives
//! unit SNR on an average channel. This keeps the SDP data near unit scale
//! whatever the path loss.

mod passive;
mod precoder;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::ChannelScene;
use crate::linalg::{c, frobenius, CMat, CVec};
use crate::lmi::InterferenceMode;
use crate::solver::{SolverSettings, SolverStatus};

pub use passive::{passive_step, robustly_feasible, PassiveOutcome};
pub use precoder::{precoder_step, PrecoderOutcome};

#[derive(Debug, Error, PartialEq)]
pub enum BeamformingError {
    #[error("no feasible initial point after {attempts} reflection draws (last solver status {last_status:?})")]
    InitializationInfeasible {
        attempts: usize,
        last_status: SolverStatus,
    },
    #[error("expected {expected} target rates, got {got}")]
    TargetCount { expected: usize, got: usize },
    #[error("target rate {0} is not a finite nonnegative number")]
    BadTarget(f64),
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// Slack variables of the last solved subproblem, in physical units
/// (powers in watts).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Slacks {
    pub interference_noise: Vec<f64>,
    pub tau: Vec<f64>,
    pub lambda: Vec<f64>,
    pub beta: Vec<f64>,
    pub d: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamformingState {
    /// `W`, N×K, column `k` is `w_k`.
    pub w: CMat,
    pub e: CVec,
    pub w_anchor: CMat,
    pub e_anchor: CVec,
    pub slacks: Slacks,
    pub iteration: usize,
    /// `‖W‖_F²` after each accepted precoder step, in watts.
    pub power_history: Vec<f64>,
    /// Stream for CCP restarts.
    pub seed: u64,
}

impl BeamformingState {
    pub fn power(&self) -> f64 {
        frobenius(&self.w).powi(2)
    }

    /// `max_m ||e_m| - 1|`.
    pub fn modulus_error(&self) -> f64 {
        self.e.iter().fold(0.0, |m, z| m.max((z.norm() - 1.0).abs()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CcpConfig {
    /// `ϱ⁰`. The SINR residuals `β` are in noise units, so a penalty much
    /// below one lets the first iterate leave the unit circle by orders of
    /// magnitude and the re-anchored iterates diverge.
    pub rho0: f64,
    /// `φ`
    pub growth: f64,
    pub rho_max: f64,
    /// `ς`, bound on `‖d‖₁` at exit.
    pub slack_tol: f64,
    /// `ψ`, bound on `‖e^[ι] - e^[ι-1]‖₁` at exit.
    pub change_tol: f64,
    pub max_inner: usize,
    pub max_restarts: usize,
}

impl Default for CcpConfig {
    fn default() -> Self {
        Self {
            rho0: 1e-1,
            growth: 5.0,
            rho_max: 1e4,
            slack_tol: 1e-5,
            change_tol: 1e-3,
            max_inner: 50,
            max_restarts: 10,
        }
    }
}

impl CcpConfig {
    pub fn validate(&self) -> Result<(), BeamformingError> {
        let ok = self.growth > 1.0
            && self.rho0 > 0.0
            && self.rho_max >= self.rho0
            && self.slack_tol > 0.0
            && self.change_tol > 0.0
            && self.max_inner > 0;
        if ok {
            Ok(())
        } else {
            Err(BeamformingError::Config(format!("{self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecoderConfig {
    /// Relative power change that ends the re-linearisation loop.
    pub tol: f64,
    pub max_iters: usize,
    /// Doublings of the initial anchor tried before giving up on a
    /// reflection draw.
    pub anchor_attempts: usize,
}

impl Default for PrecoderConfig {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iters: 60,
            anchor_attempts: 6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AoConfig {
    /// Relative power change that ends the outer loop.
    pub outer_tol: f64,
    pub max_outer: usize,
    /// Reflection redraws allowed when the first precoder problem is
    /// infeasible.
    pub init_restarts: usize,
    pub precoder: PrecoderConfig,
    pub ccp: CcpConfig,
    /// Interference constraint used inside the CCP; the acceptance check
    /// always uses the full robust form.
    pub passive_interference: InterferenceMode,
    pub solver: SolverSettings,
}

impl Default for AoConfig {
    fn default() -> Self {
        Self {
            outer_tol: 1e-3,
            max_outer: 30,
            init_restarts: 10,
            precoder: PrecoderConfig::default(),
            ccp: CcpConfig::default(),
            passive_interference: InterferenceMode::Reduced,
            solver: SolverSettings::from_env(),
        }
    }
}

/// SINR thresholds `2^γ - 1`; users with a zero target are served with a
/// zero precoder and take no part in the optimisation.
#[derive(Debug, Clone, PartialEq)]
pub struct Targets {
    pub gamma: Vec<f64>,
    pub threshold: Vec<f64>,
    pub active: Vec<usize>,
}

impl Targets {
    pub fn new(gamma: &[f64], k_users: usize) -> Result<Self, BeamformingError> {
        if gamma.len() != k_users {
            return Err(BeamformingError::TargetCount {
                expected: k_users,
                got: gamma.len(),
            });
        }
        if let Some(&g) = gamma.iter().find(|g| !(g.is_finite() && **g >= 0.0)) {
            return Err(BeamformingError::BadTarget(g));
        }
        let threshold: Vec<f64> = gamma.iter().map(|g| 2f64.powf(*g) - 1.0).collect();
        let active = (0..k_users).filter(|&k| threshold[k] > 0.0).collect();
        Ok(Self {
            gamma: gamma.to_vec(),
            threshold,
            active,
        })
    }
}

/// Scene in noise-normalised units.
#[derive(Debug, Clone)]
pub(crate) struct Scaled {
    pub n: usize,
    pub m: usize,
    pub h: Vec<CVec>,
    pub g: Vec<CMat>,
    pub xi: Vec<f64>,
    /// Watts carried by a unit-norm scaled precoder.
    pub power_unit: f64,
    pub noise: f64,
}

impl Scaled {
    pub fn new(scene: &ChannelScene) -> Self {
        let k = scene.k_users;
        let gain: f64 = (0..k)
            .map(|i| scene.direct[i].norm_squared() + frobenius(&scene.estimated[i]).powi(2))
            .sum::<f64>()
            / k as f64;
        let noise = scene.noise_power;
        let power_unit = if gain > 0.0 { noise / gain } else { 1.0 };
        let amp = (power_unit / noise).sqrt();
        Self {
            n: scene.n_antennas,
            m: scene.m_elements,
            h: scene.direct.iter().map(|h| h * c(amp, 0.0)).collect(),
            g: scene.estimated.iter().map(|g| g * c(amp, 0.0)).collect(),
            xi: scene.error_radius.iter().map(|x| x * amp).collect(),
            power_unit,
            noise,
        }
    }

    pub fn to_scaled(&self, w: &CMat) -> CMat {
        w / c(self.power_unit.sqrt(), 0.0)
    }

    pub fn to_physical(&self, w: &CMat) -> CMat {
        w * c(self.power_unit.sqrt(), 0.0)
    }

    /// `hᴴ + eᴴĜ` for user `k`.
    pub fn effective(&self, k: usize, e: &CVec) -> nalgebra::RowDVector<Complex64> {
        self.h[k].adjoint() + e.adjoint() * &self.g[k]
    }
}

pub fn random_phases<R: Rng>(rng: &mut R, m: usize) -> CVec {
    CVec::from_fn(m, |_, _| {
        Complex64::from_polar(1.0, rng.gen_range(0.0..std::f64::consts::TAU))
    })
}

/// Zero-forcing directions on the nominal effective channels, each scaled to
/// twice the nominal SINR target. Regularised so that `K > N` still works.
pub(crate) fn zero_forcing_anchor(sc: &Scaled, e: &CVec, targets: &Targets, k_users: usize) -> CMat {
    let n = sc.n;
    let act = &targets.active;
    let mut w = CMat::zeros(n, k_users);
    if act.is_empty() {
        return w;
    }
    let rows: Vec<_> = act.iter().map(|&k| sc.effective(k, e)).collect();
    let h = CMat::from_rows(&rows);
    let gram = &h * h.adjoint();
    let reg = 1e-6 * gram.trace().re / act.len() as f64 + 1e-12;
    let dir = h.adjoint()
        * (gram + CMat::identity(act.len(), act.len()) * c(reg, 0.0))
            .try_inverse()
            .unwrap_or_else(|| CMat::identity(act.len(), act.len()));
    for (j, &k) in act.iter().enumerate() {
        let mut col = dir.column(j).into_owned();
        let norm = col.norm();
        if norm > 0.0 {
            col /= c(norm, 0.0);
        }
        let gain = (rows[j].clone() * &col)[(0, 0)].norm_sqr().max(1e-12);
        let p = 2.0 * targets.threshold[k] / gain;
        w.set_column(k, &(col * c(p.sqrt(), 0.0)));
    }
    w
}

/// Draws `e⁽⁰⁾` and solves the precoder problem there, redrawing the
/// reflection vector when the problem is infeasible.
pub fn initialize_state(
    scene: &ChannelScene,
    gamma: &[f64],
    seed: u64,
    config: &AoConfig,
) -> Result<(BeamformingState, PrecoderOutcome), BeamformingError> {
    let targets = Targets::new(gamma, scene.k_users)?;
    config.ccp.validate()?;
    let sc = Scaled::new(scene);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut last_status = SolverStatus::Infeasible;
    for _ in 0..=config.init_restarts {
        let e = random_phases(&mut rng, scene.m_elements);
        let anchor = sc.to_physical(&zero_forcing_anchor(&sc, &e, &targets, scene.k_users));
        let mut state = BeamformingState {
            w: anchor.clone(),
            e: e.clone(),
            w_anchor: anchor,
            e_anchor: e,
            slacks: Slacks::default(),
            iteration: 0,
            power_history: Vec::new(),
            seed,
        };
        let out = precoder::precoder_from_scratch(&mut state, scene, &targets, config);
        if out.accepted {
            return Ok((state, out));
        }
        last_status = out.status;
    }
    Err(BeamformingError::InitializationInfeasible {
        attempts: config.init_restarts + 1,
        last_status,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    /// Relative power change fell below the outer tolerance.
    Converged,
    /// Outer iteration cap reached.
    IterationCap,
    /// A precoder step failed; the best feasible state is returned.
    StepFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub power_w: f64,
    pub precoder_iterations: usize,
    pub inner_iterations: usize,
    pub restarts: usize,
    pub d_l1: f64,
    pub passive_accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub records: Vec<IterationRecord>,
    pub termination: Termination,
    pub outer_iterations: usize,
    pub initial_power_w: f64,
    pub final_power_w: f64,
}

/// Alternates passive and precoder steps from an initialised state.
///
/// One outer iteration updates `e` with `W` fixed and then `W` with the new
/// `e` fixed, so every power comparison straddles a reflection update. The
/// initial state already holds the precoder optimum at `e⁽⁰⁾`.
pub fn alternate_from(
    mut state: BeamformingState,
    scene: &ChannelScene,
    gamma: &[f64],
    config: &AoConfig,
) -> Result<(BeamformingState, ConvergenceReport), BeamformingError> {
    let targets = Targets::new(gamma, scene.k_users)?;
    config.ccp.validate()?;
    let initial_power = state.power();
    if state.power_history.is_empty() {
        state.power_history.push(initial_power);
    }
    let mut records = Vec::new();
    let mut termination = Termination::IterationCap;
    if targets.active.is_empty() {
        termination = Termination::Converged;
        records.push(IterationRecord {
            iteration: 1,
            power_w: state.power(),
            precoder_iterations: 0,
            inner_iterations: 0,
            restarts: 0,
            d_l1: 0.0,
            passive_accepted: false,
        });
        state.iteration = 1;
    }
    while termination == Termination::IterationCap && records.len() < config.max_outer {
        let before = state.power();
        let passive = passive_step(&mut state, scene, gamma, config);
        let saved = state.clone();
        let pre = precoder_step(&mut state, scene, gamma, config);
        let mut record = IterationRecord {
            iteration: records.len() + 1,
            power_w: state.power(),
            precoder_iterations: pre.iterations,
            inner_iterations: passive.inner_iterations,
            restarts: passive.restarts,
            d_l1: passive.d_l1,
            passive_accepted: passive.accepted,
        };
        state.iteration = record.iteration;
        if !pre.accepted || state.power() > before + 1e-9 * before.max(1e-30) {
            // keep the best feasible pair seen so far
            state = saved;
            record.power_w = state.power();
            records.push(record);
            termination = if pre.accepted {
                Termination::Converged
            } else {
                Termination::StepFailed
            };
            break;
        }
        records.push(record);
        let after = state.power();
        if (before - after).abs() / before.max(1e-12) <= config.outer_tol {
            termination = Termination::Converged;
        }
    }
    let report = ConvergenceReport {
        outer_iterations: records.len(),
        records,
        termination,
        initial_power_w: initial_power,
        final_power_w: state.power(),
    };
    Ok((state, report))
}

/// Initialisation followed by [`alternate_from`].
pub fn alternating_optimize(
    scene: &ChannelScene,
    gamma: &[f64],
    seed: u64,
    config: &AoConfig,
) -> Result<(BeamformingState, ConvergenceReport), BeamformingError> {
    let (state, _) = initialize_state(scene, gamma, seed, config)?;
    alternate_from(state, scene, gamma, config)
}

/// Reference power `σ²(2^γ - 1)/‖h‖²` of single-user maximum-ratio
/// transmission over a known channel.
pub fn mrt_power(noise: f64, gamma: f64, channel_gain: f64) -> f64 {
    noise * (2f64.powf(gamma) - 1.0) / channel_gain
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{generate_scene, CsiErrorModel, SceneConfig};
    use rand::Rng;

    fn exact_csi() -> CsiErrorModel {
        CsiErrorModel {
            delta_g: 0.0,
            outage: 0.05,
        }
    }

    fn random_scene(rng: &mut ChaCha8Rng, n: usize, m: usize, k: usize, noise: f64) -> ChannelScene {
        let mut cn = |len: usize| CVec::from_fn(len, |_, _| c(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5));
        let direct = (0..k).map(|_| cn(n)).collect();
        let irs_user = (0..k).map(|_| cn(m)).collect();
        let bs_irs = CMat::from_fn(m, n, |_, _| c(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5));
        ChannelScene::from_channels(direct, bs_irs, irs_user, exact_csi(), noise).unwrap()
    }

    /// `σ² (2^γ - 1) / max_θ ‖hᴴ + e^{-jθ} G‖²` on a 10⁻³ rad grid.
    fn grid_optimum(scene: &ChannelScene, gamma: f64) -> f64 {
        let h = scene.direct[0].adjoint();
        let g = &scene.cascaded[0];
        let steps = (std::f64::consts::TAU / 1e-3).ceil() as usize;
        let best = (0..steps)
            .map(|i| (&h + g.row(0) * Complex64::from_polar(1.0, -(i as f64) * 1e-3)).norm_squared())
            .fold(0.0, f64::max);
        mrt_power(scene.noise_power, gamma, best)
    }

    #[test]
    fn zero_targets_converge_immediately() {
        let scene = generate_scene(&SceneConfig::default(), 4).unwrap();
        let (state, report) = alternating_optimize(&scene, &[0.0; 3], 4, &AoConfig::default()).unwrap();
        assert_eq!(report.outer_iterations, 1);
        assert_eq!(report.termination, Termination::Converged);
        assert_eq!(state.power(), 0.0);
    }

    #[test]
    fn initial_phases_depend_only_on_seed() {
        let scene = generate_scene(&SceneConfig::default(), 1).unwrap();
        let cfg = AoConfig::default();
        let (a, _) = initialize_state(&scene, &[1.0; 3], 17, &cfg).unwrap();
        let (b, _) = initialize_state(&scene, &[1.0; 3], 17, &cfg).unwrap();
        assert_eq!(a.e, b.e);
        assert_eq!(a.w, b.w);
        assert!(a.e.iter().all(|z| (z.norm() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn passive_phase_matches_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        // each CCP step moves e by roughly gradient/ϱ, so a high penalty
        // freezes the iterate before the phase settles
        let cfg = AoConfig {
            ccp: CcpConfig {
                rho_max: 1.0,
                change_tol: 1e-6,
                max_inner: 1000,
                ..CcpConfig::default()
            },
            ..AoConfig::default()
        };
        let mut checked = 0;
        for trial in 0..5u64 {
            let scene = random_scene(&mut rng, 2, 1, 1, 1e-2);
            let (mut state, _) = initialize_state(&scene, &[1.0], trial, &cfg).unwrap();
            let out = passive_step(&mut state, &scene, &[1.0], &cfg);
            if !out.accepted {
                continue;
            }
            // the fixed precoder's useful signal is maximised by the phase
            // aligning the cascaded term with the direct one
            let w = state.w.column(0).into_owned();
            let direct = (scene.direct[0].adjoint() * &w)[(0, 0)];
            let reflected = (scene.cascaded[0].row(0) * &w)[(0, 0)];
            let steps = (std::f64::consts::TAU / 1e-3).ceil() as usize;
            let (mut best, mut best_theta) = (0.0, 0.0);
            for i in 0..steps {
                let theta = i as f64 * 1e-3;
                let v = (direct + reflected * Complex64::from_polar(1.0, -theta)).norm();
                if v > best {
                    best = v;
                    best_theta = theta;
                }
            }
            let got = state.e[0].arg().rem_euclid(std::f64::consts::TAU);
            let diff = (got - best_theta).abs();
            let diff = diff.min(std::f64::consts::TAU - diff);
            assert!(diff <= 2e-3, "trial {trial}: phase {got} vs grid {best_theta}");
            assert!(state.modulus_error() <= 1e-5);
            assert!(out.d_l1 <= 1e-5);
            checked += 1;
        }
        assert!(checked >= 3, "only {checked} accepted passive steps");
    }

    #[test]
    fn tiny_instance_reaches_grid_optimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let cfg = AoConfig::default();
        for seed in 0..5u64 {
            let scene = random_scene(&mut rng, 2, 1, 1, 1e-2);
            let gamma = 1.5;
            let (state, _) = alternating_optimize(&scene, &[gamma], seed, &cfg).unwrap();
            let oracle = grid_optimum(&scene, gamma);
            let rel = (state.power() - oracle) / oracle;
            assert!(rel.abs() <= 0.02, "seed {seed}: {} vs grid {oracle}", state.power());
        }
    }

    #[test]
    fn converged_state_is_a_fixed_point() {
        let scene = generate_scene(&SceneConfig::default(), 2).unwrap();
        let cfg = AoConfig::default();
        let gamma = [1.0; 3];
        let (state, report) = alternating_optimize(&scene, &gamma, 2, &cfg).unwrap();
        assert_eq!(report.termination, Termination::Converged);
        let before = state.power();
        let (again, _) = alternate_from(state, &scene, &gamma, &cfg).unwrap();
        assert!((again.power() - before).abs() / before <= 1e-3);
    }

    #[test]
    fn power_history_is_monotone_and_passive_output_unit_modulus() {
        let scene = generate_scene(&SceneConfig::default(), 2).unwrap();
        let cfg = AoConfig::default();
        let (mut state, _) = initialize_state(&scene, &[1.5; 3], 2, &cfg).unwrap();
        let mut last = state.power();
        for _ in 0..3 {
            let out = passive_step(&mut state, &scene, &[1.5; 3], &cfg);
            if out.accepted {
                assert!(state.modulus_error() <= 1e-5);
                assert!(out.d_l1 <= cfg.ccp.slack_tol);
            }
            assert!(out.penalties.windows(2).all(|p| p[1] >= p[0]));
            assert!(out.penalties.iter().all(|p| *p <= cfg.ccp.rho_max));
            let pre = precoder_step(&mut state, &scene, &[1.5; 3], &cfg);
            assert!(pre.accepted);
            assert!(state.power() <= last + 1e-6);
            last = state.power();
        }
        assert!(state.power_history.windows(2).all(|p| p[1] <= p[0] + 1e-6));
    }

    #[test]
    fn penalty_is_capped() {
        let ccp = CcpConfig {
            rho0: 1.0,
            growth: 10.0,
            rho_max: 50.0,
            ..CcpConfig::default()
        };
        let cfg = AoConfig {
            ccp,
            ..AoConfig::default()
        };
        let scene = generate_scene(&SceneConfig::default(), 3).unwrap();
        let (mut state, _) = initialize_state(&scene, &[1.0; 3], 3, &cfg).unwrap();
        let out = passive_step(&mut state, &scene, &[1.0; 3], &cfg);
        assert!(out.penalties.windows(2).all(|p| p[1] >= p[0]));
        assert!(out.penalties.iter().all(|p| *p <= 50.0));
    }

    #[test]
    fn bad_ccp_config_is_rejected() {
        let scene = generate_scene(&SceneConfig::default(), 3).unwrap();
        let cfg = AoConfig {
            ccp: CcpConfig {
                growth: 1.0,
                ..CcpConfig::default()
            },
            ..AoConfig::default()
        };
        assert!(matches!(
            alternating_optimize(&scene, &[1.0; 3], 0, &cfg),
            Err(BeamformingError::Config(_))
        ));
    }

    #[test]
    fn wrong_target_count_is_rejected() {
        let scene = generate_scene(&SceneConfig::default(), 3).unwrap();
        assert!(matches!(
            alternating_optimize(&scene, &[1.0; 2], 0, &AoConfig::default()),
            Err(BeamformingError::TargetCount { .. })
        ));
    }

    #[test]
    fn runs_are_deterministic() {
        let scene = generate_scene(&SceneConfig::default(), 5).unwrap();
        let cfg = AoConfig::default();
        let (a, ra) = alternating_optimize(&scene, &[1.0; 3], 5, &cfg).unwrap();
        let (b, rb) = alternating_optimize(&scene, &[1.0; 3], 5, &cfg).unwrap();
        assert_eq!(a.w, b.w);
        assert_eq!(a.e, b.e);
        assert_eq!(ra, rb);
    }
}
