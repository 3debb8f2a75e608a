//! Independent check of a design against the CSI error model.
//!
//! Nothing here uses the optimiser's LMIs. Rates are evaluated directly from
//! the channels with `G_k = Ĝ_k + ΔG_k`, either over samples of the error
//! ball (plus a projected-descent search for the worst error) or over
//! unclipped Gaussian draws.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelScene;
use crate::linalg::{c, frobenius, CMat, CVec};

/// Rate shortfall below which a sample does not count as an outage in
/// [`empirical_outage`], in bit/s/Hz. Absorbs solver tolerance at designs
/// whose constraints are tight.
pub const OUTAGE_RATE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BallMode {
    /// Uniform over the ball.
    Interior,
    /// Uniform over the sphere `‖ΔG‖_F = ξ`.
    Boundary,
}

/// Uniform direction on the complex sphere, scaled to the ball.
pub fn sample_error_ball_with<R: Rng>(rng: &mut R, xi: f64, rows: usize, cols: usize, mode: BallMode) -> CMat {
    if xi == 0.0 || rows * cols == 0 {
        return CMat::zeros(rows, cols);
    }
    let mut z = CMat::from_fn(rows, cols, |_, _| {
        c(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal))
    });
    let norm = frobenius(&z);
    let radius = match mode {
        BallMode::Boundary => xi,
        BallMode::Interior => xi * rng.gen::<f64>().powf(1.0 / (2 * rows * cols) as f64),
    };
    z *= c(radius / norm, 0.0);
    if mode == BallMode::Interior {
        // guard against rounding past the radius
        let n = frobenius(&z);
        if n > xi {
            z *= c(xi / n, 0.0);
        }
    }
    z
}

pub fn sample_error_ball(xi: f64, rows: usize, cols: usize, mode: BallMode, seed: u64) -> CMat {
    sample_error_ball_with(&mut ChaCha8Rng::seed_from_u64(seed), xi, rows, cols, mode)
}

/// Effective channel `hᴴ + eᴴ(Ĝ + ΔG)` of user `k`.
fn effective(scene: &ChannelScene, k: usize, e: &CVec, delta: &CMat) -> nalgebra::RowDVector<num_complex::Complex64> {
    scene.direct[k].adjoint() + e.adjoint() * (&scene.estimated[k] + delta)
}

/// SINR of user `k` with error `delta` on its cascaded channel.
pub fn sinr_under_error(w: &CMat, e: &CVec, scene: &ChannelScene, k: usize, delta: &CMat) -> f64 {
    let a = effective(scene, k, e, delta);
    let received = &a * w;
    let useful = received[(0, k)].norm_sqr();
    let interference: f64 = (0..w.ncols()).filter(|&j| j != k).map(|j| received[(0, j)].norm_sqr()).sum();
    useful / (interference + scene.noise_power)
}

/// Per-user rates `log₂(1 + SINR_k)` in bit/s/Hz with errors `deltas[k]`.
pub fn rate_under_error(w: &CMat, e: &CVec, scene: &ChannelScene, deltas: &[CMat]) -> Vec<f64> {
    (0..scene.k_users)
        .map(|k| (1.0 + sinr_under_error(w, e, scene, k, &deltas[k])).log2())
        .collect()
}

/// Wirtinger gradient `∂SINR/∂ΔG*` of user `k`.
fn sinr_gradient(w: &CMat, e: &CVec, scene: &ChannelScene, k: usize, delta: &CMat) -> CMat {
    let a = effective(scene, k, e, delta);
    let received = &a * w;
    let s = received[(0, k)].norm_sqr();
    let mut interference = scene.noise_power;
    let mut grad_i = CMat::zeros(e.len(), w.nrows());
    for j in (0..w.ncols()).filter(|&j| j != k) {
        interference += received[(0, j)].norm_sqr();
        grad_i += e * w.column(j).adjoint() * received[(0, j)];
    }
    let grad_s = e * w.column(k).adjoint() * received[(0, k)];
    (grad_s * c(interference, 0.0) - grad_i * c(s, 0.0)) / c(interference * interference, 0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertificateConfig {
    /// Joint error draws; alternately on the sphere and inside the ball.
    pub samples: usize,
    pub descent_starts: usize,
    pub descent_iterations: usize,
    /// Step `step_scale · ξ / √iter`.
    pub step_scale: f64,
    /// Rate shortfall counted as a violation, in bit/s/Hz.
    pub tolerance: f64,
}

impl Default for CertificateConfig {
    fn default() -> Self {
        Self {
            samples: 500,
            descent_starts: 10,
            descent_iterations: 100,
            step_scale: 0.1,
            tolerance: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    /// Smallest rate found for each user, bit/s/Hz.
    pub min_rate: Vec<f64>,
    /// Evaluated points (joint samples and descent end points) at which
    /// some user falls short of its target by more than the tolerance.
    pub violations: usize,
    pub samples: usize,
    /// Error attaining each user's minimum.
    #[serde(skip)]
    pub worst_delta: Vec<CMat>,
    /// Filled by [`certify`]; `None` from [`worst_case_certificate`] alone.
    pub empirical_outage: Option<f64>,
}

impl RobustnessReport {
    /// Smallest margin `min_rate_k - γ_k` over users.
    pub fn worst_margin(&self, gamma: &[f64]) -> f64 {
        self.min_rate
            .iter()
            .zip(gamma)
            .map(|(r, g)| r - g)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Projected descent on the rate of user `k` from `start`; returns the
/// lowest point visited.
fn descend(w: &CMat, e: &CVec, scene: &ChannelScene, k: usize, start: CMat, config: &CertificateConfig) -> (f64, CMat) {
    let xi = scene.error_radius[k];
    let mut delta = start;
    let mut best = (sinr_under_error(w, e, scene, k, &delta), delta.clone());
    for it in 1..=config.descent_iterations {
        let grad = sinr_gradient(w, e, scene, k, &delta);
        let norm = frobenius(&grad);
        if norm.is_nan() || norm <= 0.0 || xi == 0.0 {
            break;
        }
        let step = config.step_scale * xi / (it as f64).sqrt();
        delta -= grad * c(step / norm, 0.0);
        let n = frobenius(&delta);
        if n > xi {
            delta *= c(xi / n, 0.0);
        }
        let s = sinr_under_error(w, e, scene, k, &delta);
        if s < best.0 {
            best = (s, delta.clone());
        }
    }
    ((1.0 + best.0).log2(), best.1)
}

/// Sampled worst-case rates over the error balls, refined by multistart
/// projected descent.
pub fn worst_case_certificate(
    w: &CMat,
    e: &CVec,
    scene: &ChannelScene,
    gamma: &[f64],
    config: &CertificateConfig,
    seed: u64,
) -> RobustnessReport {
    let k_users = scene.k_users;
    let (m, n) = (scene.m_elements, scene.n_antennas);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let zero = vec![CMat::zeros(m, n); k_users];
    let mut min_rate = rate_under_error(w, e, scene, &zero);
    let mut worst_delta = zero;
    let short = |k: usize, r: f64| r < gamma[k] - config.tolerance;
    let mut violations = usize::from((0..k_users).any(|k| short(k, min_rate[k])));
    let mut samples = 1;

    for s in 0..config.samples {
        let mode = if s % 2 == 0 { BallMode::Boundary } else { BallMode::Interior };
        let deltas: Vec<CMat> = (0..k_users)
            .map(|k| sample_error_ball_with(&mut rng, scene.error_radius[k], m, n, mode))
            .collect();
        let rates = rate_under_error(w, e, scene, &deltas);
        let mut bad = false;
        for (k, (r, d)) in rates.into_iter().zip(deltas).enumerate() {
            bad |= short(k, r);
            if r < min_rate[k] {
                min_rate[k] = r;
                worst_delta[k] = d;
            }
        }
        violations += usize::from(bad);
        samples += 1;
    }

    for start in 0..config.descent_starts {
        let mut bad = false;
        for k in 0..k_users {
            let xi = scene.error_radius[k];
            // the first start refines the worst sample
            let init = if start == 0 {
                worst_delta[k].clone()
            } else {
                sample_error_ball_with(&mut rng, xi, m, n, BallMode::Interior)
            };
            let (r, d) = descend(w, e, scene, k, init, config);
            bad |= short(k, r);
            if r < min_rate[k] {
                min_rate[k] = r;
                worst_delta[k] = d;
            }
        }
        violations += usize::from(bad);
        samples += 1;
    }

    RobustnessReport {
        min_rate,
        violations,
        samples,
        worst_delta,
        empirical_outage: None,
    }
}

/// Fraction of unclipped Gaussian error draws (per-entry variance `ε_k²`)
/// at which some user's rate falls below its target.
pub fn empirical_outage(w: &CMat, e: &CVec, scene: &ChannelScene, gamma: &[f64], draws: usize, seed: u64) -> f64 {
    if draws == 0 {
        return 0.0;
    }
    let (m, n) = (scene.m_elements, scene.n_antennas);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sd: Vec<f64> = (0..scene.k_users)
        .map(|k| (scene.error_variance(k) / 2.0).sqrt())
        .collect();
    let mut outages = 0;
    for _ in 0..draws {
        let deltas: Vec<CMat> = sd
            .iter()
            .map(|&s| {
                CMat::from_fn(m, n, |_, _| {
                    c(
                        s * rng.sample::<f64, _>(StandardNormal),
                        s * rng.sample::<f64, _>(StandardNormal),
                    )
                })
            })
            .collect();
        let rates = rate_under_error(w, e, scene, &deltas);
        if rates
            .iter()
            .zip(gamma)
            .any(|(r, g)| *g > 0.0 && *r < g - OUTAGE_RATE_TOLERANCE)
        {
            outages += 1;
        }
    }
    outages as f64 / draws as f64
}

/// Certificate plus empirical outage, the form stored with experiment
/// results.
pub fn certify(
    w: &CMat,
    e: &CVec,
    scene: &ChannelScene,
    gamma: &[f64],
    config: &CertificateConfig,
    outage_draws: usize,
    seed: u64,
) -> RobustnessReport {
    let mut report = worst_case_certificate(w, e, scene, gamma, config, seed);
    report.empirical_outage = Some(empirical_outage(w, e, scene, gamma, outage_draws, seed ^ 0x5EED));
    report
}
