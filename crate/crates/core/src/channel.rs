//! Scene geometry, Rician channels, cascaded channels and the bounded
//! CSI-error model.
//!
//! The BS and the IRS are uniform linear arrays. The BS array lies along the
//! y-axis and the IRS along the x-axis; line-of-sight responses use the
//! direction cosine between the link and the array axis. Every random draw
//! comes from a ChaCha8 stream seeded by the caller, so a scene is a pure
//! function of `(config, seed)`.

use std::f64::consts::PI;

use nalgebra::Vector3;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma_lr;
use thiserror::Error;

use crate::linalg::{c, frobenius, CMat, CVec};

#[derive(Debug, Error, PartialEq)]
pub enum ChannelError {
    #[error("array sizes must be positive (N={n}, M={m}, K={k})")]
    EmptyDimension { n: usize, m: usize, k: usize },
    #[error("path-loss exponent `{0}` must be finite and positive")]
    BadExponent(&'static str),
    #[error("Rician factor `{0}` is not a number")]
    BadRicianFactor(&'static str),
    #[error("nodes `{0}` and `{1}` coincide")]
    CoincidentNodes(String, String),
    #[error("invalid parameter `{name}`: {value}")]
    BadParameter { name: &'static str, value: f64 },
    #[error("probability must lie strictly inside (0, 1), got {0}")]
    BadProbability(f64),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// Proportional CSI-error level and the outage probability the error ball
/// is sized for.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CsiErrorModel {
    pub delta_g: f64,
    pub outage: f64,
}

impl Default for CsiErrorModel {
    fn default() -> Self {
        Self {
            delta_g: 0.01,
            outage: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub n_antennas: usize,
    pub m_elements: usize,
    pub k_users: usize,
    pub pos_bs: [f64; 3],
    pub pos_irs: [f64; 3],
    pub user_disc_center: [f64; 3],
    pub user_disc_radius: f64,
    pub ple_direct: f64,
    pub ple_bs_irs: f64,
    pub ple_irs_ue: f64,
    pub pl_ref_db: f64,
    pub rician_br_db: f64,
    pub rician_ru_db: f64,
    pub rician_bu_db: f64,
    pub noise_dbm: f64,
    pub bandwidth_hz: f64,
    pub spacing_wl: f64,
    pub seed: u64,
    pub csi: CsiErrorModel,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            n_antennas: 6,
            m_elements: 6,
            k_users: 3,
            pos_bs: [0.0, 0.0, 0.0],
            pos_irs: [50.0, 10.0, 2.0],
            user_disc_center: [45.0, 0.0, 0.0],
            user_disc_radius: 5.0,
            ple_direct: 4.0,
            ple_bs_irs: 2.2,
            ple_irs_ue: 2.0,
            pl_ref_db: -30.0,
            rician_br_db: 10.0,
            rician_ru_db: 10.0,
            rician_bu_db: 1.0,
            noise_dbm: -80.0,
            bandwidth_hz: 10e6,
            spacing_wl: 0.5,
            seed: 1,
            csi: CsiErrorModel::default(),
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), ChannelError> {
        if self.n_antennas == 0 || self.m_elements == 0 || self.k_users == 0 {
            return Err(ChannelError::EmptyDimension {
                n: self.n_antennas,
                m: self.m_elements,
                k: self.k_users,
            });
        }
        for (name, v) in [
            ("ple_direct", self.ple_direct),
            ("ple_bs_irs", self.ple_bs_irs),
            ("ple_irs_ue", self.ple_irs_ue),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(ChannelError::BadExponent(name));
            }
        }
        for (name, v) in [
            ("rician_br_db", self.rician_br_db),
            ("rician_ru_db", self.rician_ru_db),
            ("rician_bu_db", self.rician_bu_db),
        ] {
            if v.is_nan() {
                return Err(ChannelError::BadRicianFactor(name));
            }
        }
        for (name, v) in [
            ("user_disc_radius", self.user_disc_radius),
            ("spacing_wl", self.spacing_wl),
            ("bandwidth_hz", self.bandwidth_hz),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(ChannelError::BadParameter { name, value: v });
            }
        }
        for (name, v) in [("pl_ref_db", self.pl_ref_db), ("noise_dbm", self.noise_dbm)] {
            if !v.is_finite() {
                return Err(ChannelError::BadParameter { name, value: v });
            }
        }
        let d = &self.csi;
        if !(0.0..1.0).contains(&d.delta_g) {
            return Err(ChannelError::BadParameter {
                name: "delta_g",
                value: d.delta_g,
            });
        }
        if !(d.outage > 0.0 && d.outage < 1.0) {
            return Err(ChannelError::BadProbability(d.outage));
        }
        if distance(&self.pos_bs, &self.pos_irs) < MIN_SEPARATION {
            return Err(ChannelError::CoincidentNodes("bs".into(), "irs".into()));
        }
        Ok(())
    }

    pub fn noise_power_w(&self) -> f64 {
        dbm_to_watts(self.noise_dbm)
    }
}

/// Channels of one drop, including the transmitter's estimate of the
/// cascaded channels and the per-user error radius.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelScene {
    pub n_antennas: usize,
    pub m_elements: usize,
    pub k_users: usize,
    pub user_positions: Vec<[f64; 3]>,
    /// `h_k`, BS to user, length N. Known without error.
    pub direct: Vec<CVec>,
    /// `H_br`, BS to IRS, M×N.
    pub bs_irs: CMat,
    /// `h_rk`, IRS to user, length M.
    pub irs_user: Vec<CVec>,
    /// True cascaded channels `G_k = diag(h_rk^H) H_br`.
    pub cascaded: Vec<CMat>,
    /// Estimates `Ĝ_k = G_k - ΔG_k`.
    pub estimated: Vec<CMat>,
    /// Radii `ξ_k` of the Frobenius error balls around `Ĝ_k`.
    pub error_radius: Vec<f64>,
    pub csi: CsiErrorModel,
    /// Noise power per user in watts.
    pub noise_power: f64,
    pub bandwidth_hz: f64,
}

impl ChannelScene {
    /// Scene from explicit channels with a zero nominal error (`Ĝ = G`). The
    /// error radii follow from `csi`.
    pub fn from_channels(
        direct: Vec<CVec>,
        bs_irs: CMat,
        irs_user: Vec<CVec>,
        csi: CsiErrorModel,
        noise_power: f64,
    ) -> Result<Self, ChannelError> {
        let (m, n) = bs_irs.shape();
        let k = direct.len();
        if k == 0 || m == 0 || n == 0 {
            return Err(ChannelError::EmptyDimension { n, m, k });
        }
        if irs_user.len() != k {
            return Err(ChannelError::Dimension(format!(
                "{} direct channels but {} IRS-user channels",
                k,
                irs_user.len()
            )));
        }
        if direct.iter().any(|h| h.len() != n) {
            return Err(ChannelError::Dimension("direct channel length must equal N".into()));
        }
        let cascaded = irs_user
            .iter()
            .map(|hr| cascaded_channel(hr, &bs_irs))
            .collect::<Result<Vec<_>, _>>()?;
        let error_radius = cascaded
            .iter()
            .map(|g| error_radius(csi.delta_g, g, csi.outage))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            n_antennas: n,
            m_elements: m,
            k_users: k,
            user_positions: vec![[0.0; 3]; k],
            direct,
            bs_irs,
            irs_user,
            estimated: cascaded.clone(),
            cascaded,
            error_radius,
            csi,
            noise_power,
            bandwidth_hz: 1.0,
        })
    }

    /// Same scene with every cascaded error radius replaced.
    pub fn with_error_radius(mut self, radius: f64) -> Self {
        self.error_radius = vec![radius; self.k_users];
        self
    }

    /// Per-entry variance `ε_k² = δ_g² ‖vec(Ĝ_k)‖²` of the Gaussian error model.
    pub fn error_variance(&self, k: usize) -> f64 {
        let g = frobenius(&self.estimated[k]);
        self.csi.delta_g * self.csi.delta_g * g * g
    }
}

const MIN_SEPARATION: f64 = 1e-6;

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (Vector3::from(*a) - Vector3::from(*b)).norm()
}

/// `(sqrt(K/(1+K)), sqrt(1/(1+K)))`, well defined for `K = ∞`.
fn rician_weights(factor_db: f64) -> (f64, f64) {
    let k = db_to_linear(factor_db);
    ((1.0 / (1.0 + 1.0 / k)).sqrt(), (1.0 / (1.0 + k)).sqrt())
}

/// ULA response toward `direction` (need not be normalised).
pub fn ula_steering(len: usize, spacing_wl: f64, axis: Vector3<f64>, direction: Vector3<f64>) -> CVec {
    let cosine = direction.normalize().dot(&axis.normalize());
    CVec::from_fn(len, |l, _| {
        let phase = 2.0 * PI * spacing_wl * l as f64 * cosine;
        Complex64::from_polar(1.0, phase)
    })
}

fn gaussian_vector<R: Rng>(rng: &mut R, len: usize) -> CVec {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    CVec::from_fn(len, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        c(s * re, s * im)
    })
}

/// `rows × cols` matrix with i.i.d. `CN(0, 1)` entries.
pub fn gaussian_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> CMat {
    let v = gaussian_vector(rng, rows * cols);
    CMat::from_column_slice(rows, cols, v.as_slice())
}

const BS_AXIS: [f64; 3] = [0.0, 1.0, 0.0];
const IRS_AXIS: [f64; 3] = [1.0, 0.0, 0.0];

pub fn generate_scene(config: &SceneConfig, seed: u64) -> Result<ChannelScene, ChannelError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, m, k) = (config.n_antennas, config.m_elements, config.k_users);

    let users: Vec<[f64; 3]> = (0..k)
        .map(|_| {
            let r = config.user_disc_radius * rng.gen::<f64>().sqrt();
            let phi = 2.0 * PI * rng.gen::<f64>();
            let c0 = config.user_disc_center;
            [c0[0] + r * phi.cos(), c0[1] + r * phi.sin(), c0[2]]
        })
        .collect();
    for (i, u) in users.iter().enumerate() {
        if distance(u, &config.pos_bs) < MIN_SEPARATION {
            return Err(ChannelError::CoincidentNodes(format!("user{i}"), "bs".into()));
        }
        if distance(u, &config.pos_irs) < MIN_SEPARATION {
            return Err(ChannelError::CoincidentNodes(format!("user{i}"), "irs".into()));
        }
        for (j, v) in users.iter().enumerate().skip(i + 1) {
            if distance(u, v) < MIN_SEPARATION {
                return Err(ChannelError::CoincidentNodes(format!("user{i}"), format!("user{j}")));
            }
        }
    }

    let pl_ref = db_to_linear(config.pl_ref_db);
    let gain = |d: f64, exponent: f64| pl_ref * d.powf(-exponent);
    let bs = Vector3::from(config.pos_bs);
    let irs = Vector3::from(config.pos_irs);
    let bs_axis = Vector3::from(BS_AXIS);
    let irs_axis = Vector3::from(IRS_AXIS);
    let s = config.spacing_wl;

    // BS -> IRS
    let (los_w, nlos_w) = rician_weights(config.rician_br_db);
    let d_br = (irs - bs).norm();
    let depart = ula_steering(n, s, bs_axis, irs - bs);
    let arrive = ula_steering(m, s, irs_axis, bs - irs);
    let scatter = gaussian_matrix(&mut rng, m, n);
    let bs_irs = (&arrive * depart.adjoint() * c(los_w, 0.0) + scatter * c(nlos_w, 0.0))
        * c(gain(d_br, config.ple_bs_irs).sqrt(), 0.0);

    let mut direct = Vec::with_capacity(k);
    let mut irs_user = Vec::with_capacity(k);
    for u in &users {
        let u = Vector3::from(*u);

        let (los_w, nlos_w) = rician_weights(config.rician_bu_db);
        let amp = gain((u - bs).norm(), config.ple_direct).sqrt();
        let los = ula_steering(n, s, bs_axis, u - bs);
        let h = (los * c(los_w, 0.0) + gaussian_vector(&mut rng, n) * c(nlos_w, 0.0)) * c(amp, 0.0);
        direct.push(h);

        let (los_w, nlos_w) = rician_weights(config.rician_ru_db);
        let amp = gain((u - irs).norm(), config.ple_irs_ue).sqrt();
        let los = ula_steering(m, s, irs_axis, u - irs);
        let hr = (los * c(los_w, 0.0) + gaussian_vector(&mut rng, m) * c(nlos_w, 0.0)) * c(amp, 0.0);
        irs_user.push(hr);
    }

    let cascaded = irs_user
        .iter()
        .map(|hr| cascaded_channel(hr, &bs_irs))
        .collect::<Result<Vec<_>, _>>()?;

    let mut estimated = Vec::with_capacity(k);
    let mut radii = Vec::with_capacity(k);
    for g in &cascaded {
        let z = gaussian_matrix(&mut rng, m, n);
        let (ghat, xi) = nominal_estimate(g, &z, &config.csi)?;
        estimated.push(ghat);
        radii.push(xi);
    }

    Ok(ChannelScene {
        n_antennas: n,
        m_elements: m,
        k_users: k,
        user_positions: users,
        direct,
        bs_irs,
        irs_user,
        cascaded,
        estimated,
        error_radius: radii,
        csi: config.csi,
        noise_power: config.noise_power_w(),
        bandwidth_hz: config.bandwidth_hz,
    })
}

/// Estimate `Ĝ = G - ΔG` for a standard Gaussian direction `z`.
///
/// `ΔG = ε z` with `ε² = δ² ‖Ĝ‖²`; the radius depends on the estimate, so the
/// draw is shrunk until it sits inside the ball around the estimate it
/// produces.
fn nominal_estimate(g: &CMat, z: &CMat, csi: &CsiErrorModel) -> Result<(CMat, f64), ChannelError> {
    if csi.delta_g == 0.0 {
        return Ok((g.clone(), 0.0));
    }
    let mut delta = z * c(csi.delta_g * frobenius(g), 0.0);
    for _ in 0..200 {
        let ghat = g - &delta;
        let xi = error_radius(csi.delta_g, &ghat, csi.outage)?;
        let norm = frobenius(&delta);
        if norm <= xi {
            return Ok((ghat, xi));
        }
        delta *= c(xi / norm * (1.0 - 1e-9), 0.0);
    }
    // no shrink converged: fall back to an exact estimate
    let ghat = g.clone();
    let xi = error_radius(csi.delta_g, &ghat, csi.outage)?;
    Ok((ghat, xi))
}

/// `diag(h_r^H) H_br`.
pub fn cascaded_channel(irs_user: &CVec, bs_irs: &CMat) -> Result<CMat, ChannelError> {
    if irs_user.len() != bs_irs.nrows() {
        return Err(ChannelError::Dimension(format!(
            "IRS-user channel has {} entries but H_br has {} rows",
            irs_user.len(),
            bs_irs.nrows()
        )));
    }
    let mut out = bs_irs.clone();
    for (mut row, h) in out.row_iter_mut().zip(irs_user.iter()) {
        row *= h.conj();
    }
    Ok(out)
}

/// `ξ = sqrt(0.5 δ² ‖vec(Ĝ)‖² F⁻¹_{χ²(2MN)}(1 - ρ))`.
pub fn error_radius(delta_g: f64, estimate: &CMat, outage: f64) -> Result<f64, ChannelError> {
    if !(outage > 0.0 && outage < 1.0) {
        return Err(ChannelError::BadProbability(outage));
    }
    if !(0.0..1.0).contains(&delta_g) {
        return Err(ChannelError::BadParameter {
            name: "delta_g",
            value: delta_g,
        });
    }
    if delta_g == 0.0 {
        return Ok(0.0);
    }
    let dof = 2 * estimate.len();
    let norm = frobenius(estimate);
    let variance = delta_g * delta_g * norm * norm;
    Ok((0.5 * variance * inverse_chi2_cdf(dof, 1.0 - outage)?).sqrt())
}

pub fn chi2_cdf(dof: usize, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    gamma_lr(dof as f64 / 2.0, x / 2.0)
}

fn chi2_pdf(dof: usize, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let k = dof as f64 / 2.0;
    ((k - 1.0) * x.ln() - x / 2.0 - k * 2f64.ln() - statrs::function::gamma::ln_gamma(k)).exp()
}

/// Quantile of the chi-square distribution: `x` with `P(dof/2, x/2) = p`.
///
/// Safeguarded Newton on a bracket; stops at relative step `1e-14`.
pub fn inverse_chi2_cdf(dof: usize, p: f64) -> Result<f64, ChannelError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(ChannelError::BadProbability(p));
    }
    if dof == 0 {
        return Err(ChannelError::BadParameter {
            name: "dof",
            value: 0.0,
        });
    }
    if dof == 2 {
        return Ok(-2.0 * (1.0 - p).ln());
    }
    let mut lo = 0.0;
    let mut hi = dof as f64 + 10.0;
    while chi2_cdf(dof, hi) < p {
        lo = hi;
        hi *= 2.0;
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let f = chi2_cdf(dof, x) - p;
        if f > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let d = chi2_pdf(dof, x);
        let mut next = if d > 0.0 { x - f / d } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 1e-14 * x.max(1e-300) {
            return Ok(next);
        }
        x = next;
    }
    Ok(x)
}
