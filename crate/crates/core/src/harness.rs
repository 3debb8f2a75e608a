//! Experiment sweeps over schemes, target rates, CSI levels and seeds.
//!
//! Beamforming does not depend on the cache placement, so each
//! `(γ, δ_g, seed)` triple is solved once and shared by the OC and UC
//! variants of a scheme. The random-phase design is the initial state of
//! the alternating optimisation, so both phase schemes start from the same
//! `e⁽⁰⁾` and `W⁽⁰⁾`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::beamforming::{alternate_from, initialize_state, AoConfig, BeamformingState};
use crate::cache::{backhaul_cost, solve_content_placement, uniform_placement, zipf_popularity, CacheError};
use crate::channel::{generate_scene, ChannelScene, CsiErrorModel, SceneConfig};
use crate::linalg::{frobenius, CMat};
use crate::robustness::{certify, CertificateConfig, RobustnessReport};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid experiment configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error("results file: {0}")]
    Io(String),
    #[error("no results to emit")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Scheme {
    OjbOc,
    OjbUc,
    RandomPhaseOc,
    RandomPhaseUc,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [Scheme::OjbOc, Scheme::OjbUc, Scheme::RandomPhaseOc, Scheme::RandomPhaseUc];

    pub fn optimizes_phases(self) -> bool {
        matches!(self, Scheme::OjbOc | Scheme::OjbUc)
    }

    pub fn optimizes_cache(self) -> bool {
        matches!(self, Scheme::OjbOc | Scheme::RandomPhaseOc)
    }

    pub fn name(self) -> &'static str {
        match self {
            Scheme::OjbOc => "OJB-OC",
            Scheme::OjbUc => "OJB-UC",
            Scheme::RandomPhaseOc => "RandomPhase-OC",
            Scheme::RandomPhaseUc => "RandomPhase-UC",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Scheme::ALL
            .into_iter()
            .find(|x| x.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| HarnessError::Config(format!("unknown scheme `{s}`")))
    }
}

impl Serialize for Scheme {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Scheme {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub scene: SceneConfig,
    /// Target rate of every user, bit/s/Hz.
    pub gammas: Vec<f64>,
    pub delta_g: Vec<f64>,
    pub schemes: Vec<Scheme>,
    pub seeds: Vec<u64>,
    /// `η`, watts to cost units.
    pub eta: f64,
    pub files: usize,
    pub storage: f64,
    pub zipf: f64,
    /// `ρ`, the outage the error balls are sized for.
    pub outage: f64,
    /// Per-user delivery rates `R⁰` for the backhaul cost. `None` uses the
    /// target rates.
    pub rate_reference: Option<Vec<f64>>,
    pub certificate: CertificateConfig,
    pub outage_draws: usize,
    pub ao: AoConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scene: SceneConfig::default(),
            gammas: vec![0.5, 1.0, 1.5, 2.0, 2.5, 3.0],
            delta_g: vec![0.01, 0.001],
            schemes: Scheme::ALL.to_vec(),
            seeds: (0..10).collect(),
            eta: 100.0,
            files: 200,
            storage: 100.0,
            zipf: 1.0,
            outage: 0.05,
            rate_reference: None,
            certificate: CertificateConfig::default(),
            outage_draws: 2000,
            ao: AoConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Config(m.into()));
        if self.gammas.is_empty() || self.delta_g.is_empty() || self.schemes.is_empty() || self.seeds.is_empty() {
            return bad("target rates, CSI levels, schemes and seeds must be nonempty");
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return bad("eta must be finite and nonnegative");
        }
        if self.gammas.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
            return bad("target rates must be finite and nonnegative");
        }
        if let Some(r) = &self.rate_reference {
            if r.len() != self.scene.k_users {
                return bad("rate_reference needs one entry per user");
            }
        }
        self.scene.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.ao.ccp.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        zipf_popularity(self.files, self.zipf)?;
        uniform_placement(self.files, self.storage)?;
        Ok(())
    }

    fn scene_for(&self, delta_g: f64, seed: u64) -> Result<ChannelScene, String> {
        let cfg = SceneConfig {
            csi: CsiErrorModel {
                delta_g,
                outage: self.outage,
            },
            ..self.scene.clone()
        };
        generate_scene(&cfg, scene_seed(self.scene.seed, seed)).map_err(|e| e.to_string())
    }
}

/// Scene stream for sweep seed `seed`; the base seed comes from the scene
/// config.
pub fn scene_seed(base: u64, seed: u64) -> u64 {
    base.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(seed)
}

fn design_seed(base: u64, seed: u64) -> u64 {
    scene_seed(base, seed) ^ 0xD1B5_4A32_D192_ED03
}

/// `backhaul_cost(c, b, R⁰) + η ‖W‖_F²`.
pub fn network_cost(
    placement: &[f64],
    popularity: &[f64],
    rates: &[f64],
    w: &CMat,
    eta: f64,
) -> Result<f64, CacheError> {
    Ok(backhaul_cost(placement, popularity, rates)? + eta * frobenius(w).powi(2))
}

/// One emitted record. Failed records carry `feasible = false` and NaN
/// metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub scheme: Scheme,
    pub gamma_bps_hz: f64,
    pub delta_g: f64,
    pub seed: u64,
    #[serde(with = "nan_as_null")]
    pub power_w: f64,
    #[serde(with = "nan_as_null")]
    pub backhaul_cost: f64,
    #[serde(with = "nan_as_null")]
    pub network_cost: f64,
    pub outer_iters: usize,
    pub feasible: bool,
    /// Smallest rate over users found by the robustness certificate.
    #[serde(with = "nan_as_null")]
    pub min_rate_certified: f64,
    #[serde(with = "nan_as_null")]
    pub empirical_outage: f64,
    pub wall_time_s: f64,
}

impl ExperimentResult {
    /// Equality on every field except wall time.
    pub fn same_outcome(&self, other: &Self) -> bool {
        let eq = |a: f64, b: f64| a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan());
        self.scheme == other.scheme
            && eq(self.gamma_bps_hz, other.gamma_bps_hz)
            && eq(self.delta_g, other.delta_g)
            && self.seed == other.seed
            && eq(self.power_w, other.power_w)
            && eq(self.backhaul_cost, other.backhaul_cost)
            && eq(self.network_cost, other.network_cost)
            && self.outer_iters == other.outer_iters
            && self.feasible == other.feasible
            && eq(self.min_rate_certified, other.min_rate_certified)
            && eq(self.empirical_outage, other.empirical_outage)
    }
}

mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

/// Designs for one `(γ, δ_g, seed)`.
#[derive(Debug, Clone)]
pub struct Design {
    pub scene: ChannelScene,
    pub gamma: Vec<f64>,
    /// Random phases with the matching precoder.
    pub random_phase: BeamformingState,
    /// Alternating optimisation started from `random_phase`.
    pub optimized: Option<(BeamformingState, usize)>,
    pub random_report: RobustnessReport,
    pub optimized_report: Option<RobustnessReport>,
    pub wall_time_s: f64,
}

/// Solves and certifies the designs needed for one sweep point.
pub fn solve_design(
    config: &ExperimentConfig,
    gamma: f64,
    delta_g: f64,
    seed: u64,
    with_optimized: bool,
) -> Result<Design, String> {
    let start = Instant::now();
    let scene = config.scene_for(delta_g, seed)?;
    let gamma = vec![gamma; scene.k_users];
    let bf_seed = design_seed(config.scene.seed, seed);
    let (initial, _) = initialize_state(&scene, &gamma, bf_seed, &config.ao).map_err(|e| e.to_string())?;
    let cert = |s: &BeamformingState| {
        certify(&s.w, &s.e, &scene, &gamma, &config.certificate, config.outage_draws, bf_seed)
    };
    let random_report = cert(&initial);
    let (optimized, optimized_report) = if with_optimized {
        let (state, report) = alternate_from(initial.clone(), &scene, &gamma, &config.ao).map_err(|e| e.to_string())?;
        let r = cert(&state);
        (Some((state, report.outer_iterations)), Some(r))
    } else {
        (None, None)
    };
    Ok(Design {
        wall_time_s: start.elapsed().as_secs_f64(),
        scene,
        gamma,
        random_phase: initial,
        optimized,
        random_report,
        optimized_report,
    })
}

struct Placements {
    popularity: Vec<f64>,
    optimized: Vec<f64>,
    uniform: Vec<f64>,
}

fn record(
    config: &ExperimentConfig,
    placements: &Placements,
    scheme: Scheme,
    key: (f64, f64, u64),
    design: &Result<Design, String>,
) -> ExperimentResult {
    let (gamma, delta_g, seed) = key;
    let mut out = ExperimentResult {
        scheme,
        gamma_bps_hz: gamma,
        delta_g,
        seed,
        power_w: f64::NAN,
        backhaul_cost: f64::NAN,
        network_cost: f64::NAN,
        outer_iters: 0,
        feasible: false,
        min_rate_certified: f64::NAN,
        empirical_outage: f64::NAN,
        wall_time_s: 0.0,
    };
    let Ok(design) = design else { return out };
    out.wall_time_s = design.wall_time_s;
    let (state, iters, report) = if scheme.optimizes_phases() {
        match (&design.optimized, &design.optimized_report) {
            (Some((s, it)), Some(r)) => (s, *it, r),
            _ => return out,
        }
    } else {
        (&design.random_phase, 0, &design.random_report)
    };
    let placement = if scheme.optimizes_cache() {
        &placements.optimized
    } else {
        &placements.uniform
    };
    let rates = config.rate_reference.clone().unwrap_or_else(|| design.gamma.clone());
    let Ok(backhaul) = backhaul_cost(placement, &placements.popularity, &rates) else {
        return out;
    };
    out.power_w = state.power();
    out.backhaul_cost = backhaul;
    out.network_cost = backhaul + config.eta * out.power_w;
    out.outer_iters = iters;
    out.feasible = true;
    out.min_rate_certified = report.min_rate.iter().copied().fold(f64::INFINITY, f64::min);
    out.empirical_outage = report.empirical_outage.unwrap_or(f64::NAN);
    out
}

/// Runs every `(scheme, γ, δ_g, seed)` record of the sweep. Output order
/// is scheme, then γ, δ_g and seed as listed in the config; results do not
/// depend on the thread count.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<ExperimentResult>, HarnessError> {
    config.validate()?;
    let popularity = zipf_popularity(config.files, config.zipf)?;
    let placements = Placements {
        optimized: solve_content_placement(&popularity, config.storage)?,
        uniform: uniform_placement(config.files, config.storage)?,
        popularity,
    };
    let with_optimized = config.schemes.iter().any(|s| s.optimizes_phases());
    let mut keys = Vec::new();
    for &g in &config.gammas {
        for &d in &config.delta_g {
            for &s in &config.seeds {
                keys.push((g, d, s));
            }
        }
    }
    let designs: Vec<Result<Design, String>> = keys
        .par_iter()
        .map(|&(g, d, s)| solve_design(config, g, d, s, with_optimized))
        .collect();
    let mut out = Vec::with_capacity(config.schemes.len() * keys.len());
    for &scheme in &config.schemes {
        for (key, design) in keys.iter().zip(&designs) {
            out.push(record(config, &placements, scheme, *key, design));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            _ => Err(HarnessError::Config(format!("unknown format `{s}`"))),
        }
    }
}

pub const CSV_COLUMNS: [&str; 12] = [
    "scheme",
    "gamma_bps_hz",
    "delta_g",
    "seed",
    "power_w",
    "backhaul_cost",
    "network_cost",
    "outer_iters",
    "feasible",
    "min_rate_certified",
    "empirical_outage",
    "wall_time_s",
];

pub fn emit_results(results: &[ExperimentResult], format: Format, path: &Path) -> Result<(), HarnessError> {
    if results.is_empty() {
        return Err(HarnessError::Empty);
    }
    let io = |e: &dyn fmt::Display| HarnessError::Io(format!("{}: {e}", path.display()));
    match format {
        Format::Json => {
            let text = serde_json::to_string_pretty(results).map_err(|e| io(&e))?;
            std::fs::write(path, text).map_err(|e| io(&e))
        }
        Format::Csv => {
            let mut w = csv::Writer::from_path(path).map_err(|e| io(&e))?;
            w.write_record(CSV_COLUMNS).map_err(|e| io(&e))?;
            for r in results {
                w.write_record([
                    r.scheme.to_string(),
                    r.gamma_bps_hz.to_string(),
                    r.delta_g.to_string(),
                    r.seed.to_string(),
                    r.power_w.to_string(),
                    r.backhaul_cost.to_string(),
                    r.network_cost.to_string(),
                    r.outer_iters.to_string(),
                    r.feasible.to_string(),
                    r.min_rate_certified.to_string(),
                    r.empirical_outage.to_string(),
                    r.wall_time_s.to_string(),
                ])
                .map_err(|e| io(&e))?;
            }
            w.flush().map_err(|e| io(&e))
        }
    }
}

/// Reads results written by [`emit_results`].
pub fn read_results(path: &Path) -> Result<Vec<ExperimentResult>, HarnessError> {
    let io = |e: &dyn fmt::Display| HarnessError::Io(format!("{}: {e}", path.display()));
    let text = std::fs::read_to_string(path).map_err(|e| io(&e))?;
    if text.trim_start().starts_with('[') {
        return serde_json::from_str(&text).map_err(|e| io(&e));
    }
    let mut rd = csv::Reader::from_reader(text.as_bytes());
    let mut out = Vec::new();
    for row in rd.records() {
        let row = row.map_err(|e| io(&e))?;
        if row.len() != CSV_COLUMNS.len() {
            return Err(io(&format!("expected {} fields, got {}", CSV_COLUMNS.len(), row.len())));
        }
        let f = |i: usize| row[i].parse::<f64>().map_err(|e| io(&e));
        out.push(ExperimentResult {
            scheme: row[0].parse()?,
            gamma_bps_hz: f(1)?,
            delta_g: f(2)?,
            seed: row[3].parse().map_err(|e| io(&e))?,
            power_w: f(4)?,
            backhaul_cost: f(5)?,
            network_cost: f(6)?,
            outer_iters: row[7].parse().map_err(|e| io(&e))?,
            feasible: row[8].parse().map_err(|e| io(&e))?,
            min_rate_certified: f(9)?,
            empirical_outage: f(10)?,
            wall_time_s: f(11)?,
        });
    }
    Ok(out)
}

/// Outcome of re-certifying one stored record.
#[derive(Debug, Clone, PartialEq)]
pub struct Verification {
    pub stored: ExperimentResult,
    pub recomputed: ExperimentResult,
    pub violations: usize,
    pub samples: usize,
}

impl Verification {
    pub fn matches(&self) -> bool {
        self.stored.same_outcome(&self.recomputed)
    }
}

/// Re-solves the designs behind stored records and runs the robustness
/// certificate again. Records are regenerated from their keys, so a match
/// also confirms the sweep is reproducible.
pub fn verify_results(config: &ExperimentConfig, stored: &[ExperimentResult]) -> Result<Vec<Verification>, HarnessError> {
    config.validate()?;
    let popularity = zipf_popularity(config.files, config.zipf)?;
    let placements = Placements {
        optimized: solve_content_placement(&popularity, config.storage)?,
        uniform: uniform_placement(config.files, config.storage)?,
        popularity,
    };
    // (γ, δ_g, seed, needs the optimised design) keyed by exact bits
    let mut keys: BTreeMap<_, (f64, f64, u64, bool)> = BTreeMap::new();
    for r in stored {
        let entry = keys
            .entry((r.gamma_bps_hz.to_bits(), r.delta_g.to_bits(), r.seed))
            .or_insert((r.gamma_bps_hz, r.delta_g, r.seed, false));
        entry.3 |= r.scheme.optimizes_phases();
    }
    let keys: Vec<_> = keys.into_values().collect();
    let designs: Vec<Result<Design, String>> = keys
        .par_iter()
        .map(|&(g, d, s, opt)| solve_design(config, g, d, s, opt))
        .collect();
    let lookup: BTreeMap<(u64, u64, u64), &Result<Design, String>> = keys
        .iter()
        .zip(&designs)
        .map(|(k, d)| ((k.0.to_bits(), k.1.to_bits(), k.2), d))
        .collect();
    Ok(stored
        .iter()
        .map(|r| {
            let design = lookup[&(r.gamma_bps_hz.to_bits(), r.delta_g.to_bits(), r.seed)];
            let recomputed = record(config, &placements, r.scheme, (r.gamma_bps_hz, r.delta_g, r.seed), design);
            let (violations, samples) = match design {
                Ok(d) => {
                    let rep = if r.scheme.optimizes_phases() {
                        d.optimized_report.as_ref()
                    } else {
                        Some(&d.random_report)
                    };
                    rep.map_or((0, 0), |x| (x.violations, x.samples))
                }
                Err(_) => (0, 0),
            };
            Verification {
                stored: r.clone(),
                recomputed,
                violations,
                samples,
            }
        })
        .collect())
}
