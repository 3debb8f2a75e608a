//! Flat `key = value` configuration files (TOML syntax).
//!
//! Scene keys are the fields of [`SceneConfig`] except the CSI model. An
//! experiment file holds the scene keys next to the sweep keys; unknown keys
//! are rejected so a typo cannot silently fall back to a default.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Deserialize;
use thiserror::Error;

use crate::channel::SceneConfig;
use crate::harness::{ExperimentConfig, Scheme};
use crate::lmi::InterferenceMode;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("bad value: {0}")]
    Value(String),
}

pub const SCENE_KEYS: [&str; 18] = [
    "n_antennas",
    "m_elements",
    "k_users",
    "pos_bs",
    "pos_irs",
    "user_disc_center",
    "user_disc_radius",
    "ple_direct",
    "ple_bs_irs",
    "ple_irs_ue",
    "pl_ref_db",
    "rician_br_db",
    "rician_ru_db",
    "rician_bu_db",
    "noise_dbm",
    "bandwidth_hz",
    "spacing_wl",
    "seed",
];

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneKeys {
    n_antennas: Option<usize>,
    m_elements: Option<usize>,
    k_users: Option<usize>,
    pos_bs: Option<[f64; 3]>,
    pos_irs: Option<[f64; 3]>,
    user_disc_center: Option<[f64; 3]>,
    user_disc_radius: Option<f64>,
    ple_direct: Option<f64>,
    ple_bs_irs: Option<f64>,
    ple_irs_ue: Option<f64>,
    pl_ref_db: Option<f64>,
    rician_br_db: Option<f64>,
    rician_ru_db: Option<f64>,
    rician_bu_db: Option<f64>,
    noise_dbm: Option<f64>,
    bandwidth_hz: Option<f64>,
    spacing_wl: Option<f64>,
    seed: Option<u64>,
}

impl SceneKeys {
    fn apply(self, c: &mut SceneConfig) {
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { c.$f = v; })* };
        }
        set!(
            n_antennas,
            m_elements,
            k_users,
            pos_bs,
            pos_irs,
            user_disc_center,
            user_disc_radius,
            ple_direct,
            ple_bs_irs,
            ple_irs_ue,
            pl_ref_db,
            rician_br_db,
            rician_ru_db,
            rician_bu_db,
            noise_dbm,
            bandwidth_hz,
            spacing_wl,
            seed
        );
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ExperimentKeys {
    gammas: Option<Vec<f64>>,
    delta_g: Option<Vec<f64>>,
    schemes: Option<Vec<Scheme>>,
    seeds: Option<Vec<u64>>,
    eta: Option<f64>,
    files: Option<usize>,
    storage: Option<f64>,
    zipf: Option<f64>,
    outage: Option<f64>,
    rate_reference: Option<Vec<f64>>,
    cert_samples: Option<usize>,
    cert_starts: Option<usize>,
    cert_iterations: Option<usize>,
    cert_tolerance: Option<f64>,
    outage_draws: Option<usize>,
    outer_tol: Option<f64>,
    max_outer: Option<usize>,
    passive_interference: Option<InterferenceMode>,
    ccp_rho0: Option<f64>,
    ccp_growth: Option<f64>,
    ccp_rho_max: Option<f64>,
    ccp_slack_tol: Option<f64>,
    ccp_change_tol: Option<f64>,
    ccp_max_inner: Option<usize>,
    ccp_max_restarts: Option<usize>,
}

fn parse_table(text: &str) -> Result<toml::Table, ConfigError> {
    text.parse::<toml::Table>().map_err(|e| ConfigError::Syntax(e.to_string()))
}

fn decode<T: DeserializeOwned>(table: toml::Table) -> Result<T, ConfigError> {
    toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| {
        let msg = e.to_string();
        match msg.split('`').nth(1) {
            Some(key) if msg.contains("unknown field") => ConfigError::UnknownKey(key.to_string()),
            _ => ConfigError::Value(msg),
        }
    })
}

fn read(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Scene from file text; missing keys keep their defaults.
pub fn parse_scene_config(text: &str) -> Result<SceneConfig, ConfigError> {
    let keys: SceneKeys = decode(parse_table(text)?)?;
    let mut cfg = SceneConfig::default();
    keys.apply(&mut cfg);
    cfg.validate().map_err(|e| ConfigError::Value(e.to_string()))?;
    Ok(cfg)
}

pub fn load_scene_config(path: &Path) -> Result<SceneConfig, ConfigError> {
    parse_scene_config(&read(path)?)
}

/// Experiment from file text; missing keys keep their defaults.
pub fn parse_experiment_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let table = parse_table(text)?;
    let (scene, rest): (toml::Table, toml::Table) = table
        .into_iter()
        .partition(|(k, _)| SCENE_KEYS.contains(&k.as_str()));
    let scene_keys: SceneKeys = decode(scene)?;
    let k: ExperimentKeys = decode(rest)?;

    let mut cfg = ExperimentConfig::default();
    scene_keys.apply(&mut cfg.scene);
    macro_rules! set {
        ($($dst:expr => $src:ident),* $(,)?) => { $(if let Some(v) = k.$src { $dst = v; })* };
    }
    set!(
        cfg.gammas => gammas,
        cfg.delta_g => delta_g,
        cfg.schemes => schemes,
        cfg.seeds => seeds,
        cfg.eta => eta,
        cfg.files => files,
        cfg.storage => storage,
        cfg.zipf => zipf,
        cfg.outage => outage,
        cfg.outage_draws => outage_draws,
        cfg.certificate.samples => cert_samples,
        cfg.certificate.descent_starts => cert_starts,
        cfg.certificate.descent_iterations => cert_iterations,
        cfg.certificate.tolerance => cert_tolerance,
        cfg.ao.outer_tol => outer_tol,
        cfg.ao.max_outer => max_outer,
        cfg.ao.passive_interference => passive_interference,
        cfg.ao.ccp.rho0 => ccp_rho0,
        cfg.ao.ccp.growth => ccp_growth,
        cfg.ao.ccp.rho_max => ccp_rho_max,
        cfg.ao.ccp.slack_tol => ccp_slack_tol,
        cfg.ao.ccp.change_tol => ccp_change_tol,
        cfg.ao.ccp.max_inner => ccp_max_inner,
        cfg.ao.ccp.max_restarts => ccp_max_restarts,
    );
    cfg.scene.csi.outage = cfg.outage;
    if k.rate_reference.is_some() {
        cfg.rate_reference = k.rate_reference;
    }
    cfg.validate().map_err(|e| ConfigError::Value(e.to_string()))?;
    Ok(cfg)
}

pub fn load_experiment_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    parse_experiment_config(&read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(parse_scene_config("").unwrap(), SceneConfig::default());
        assert_eq!(parse_experiment_config("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn every_scene_key_is_read() {
        let text = r#"
            n_antennas = 8
            m_elements = 10
            k_users = 2
            pos_bs = [0.0, 0.0, 10.0]
            pos_irs = [40.0, 5.0, 3.0]
            user_disc_center = [42.0, 0.0, 0.0]
            user_disc_radius = 3.0
            ple_direct = 3.5
            ple_bs_irs = 2.1
            ple_irs_ue = 2.3
            pl_ref_db = -32.0
            rician_br_db = 5.0
            rician_ru_db = 6.0
            rician_bu_db = 0.0
            noise_dbm = -90.0
            bandwidth_hz = 1e6
            spacing_wl = 0.25
            seed = 42
        "#;
        let c = parse_scene_config(text).unwrap();
        assert_eq!((c.n_antennas, c.m_elements, c.k_users), (8, 10, 2));
        assert_eq!(c.pos_bs, [0.0, 0.0, 10.0]);
        assert_eq!(c.pos_irs, [40.0, 5.0, 3.0]);
        assert_eq!(c.user_disc_center, [42.0, 0.0, 0.0]);
        assert_eq!(c.user_disc_radius, 3.0);
        assert_eq!((c.ple_direct, c.ple_bs_irs, c.ple_irs_ue), (3.5, 2.1, 2.3));
        assert_eq!(c.pl_ref_db, -32.0);
        assert_eq!((c.rician_br_db, c.rician_ru_db, c.rician_bu_db), (5.0, 6.0, 0.0));
        assert_eq!(c.noise_dbm, -90.0);
        assert_eq!(c.bandwidth_hz, 1e6);
        assert_eq!(c.spacing_wl, 0.25);
        assert_eq!(c.seed, 42);
    }

    #[test]
    fn unknown_key_is_rejected() {
        assert!(matches!(parse_scene_config("n_antenna = 4"), Err(ConfigError::UnknownKey(k)) if k == "n_antenna"));
        assert!(matches!(parse_experiment_config("gamma = [1.0]"), Err(ConfigError::UnknownKey(_))));
    }

    #[test]
    fn bad_values_are_rejected() {
        assert!(matches!(parse_scene_config("n_antennas = 0"), Err(ConfigError::Value(_))));
        assert!(matches!(parse_scene_config("n_antennas = \"six\""), Err(ConfigError::Value(_))));
        assert!(matches!(parse_scene_config("n_antennas = "), Err(ConfigError::Syntax(_))));
        assert!(parse_experiment_config("schemes = [\"OJB-XX\"]").is_err());
        assert!(parse_experiment_config("seeds = []").is_err());
    }

    #[test]
    fn experiment_keys_are_read() {
        let text = r#"
            k_users = 2
            gammas = [1.0, 2.0]
            delta_g = [0.01]
            schemes = ["OJB-OC", "RandomPhase-UC"]
            seeds = [3, 4]
            eta = 50.0
            files = 20
            storage = 5.0
            zipf = 0.8
            outage = 0.1
            rate_reference = [1.0, 1.0]
            cert_samples = 50
            outage_draws = 300
            passive_interference = "full"
            ccp_rho0 = 0.5
        "#;
        let c = parse_experiment_config(text).unwrap();
        assert_eq!(c.scene.k_users, 2);
        assert_eq!(c.gammas, vec![1.0, 2.0]);
        assert_eq!(c.schemes, vec![Scheme::OjbOc, Scheme::RandomPhaseUc]);
        assert_eq!(c.seeds, vec![3, 4]);
        assert_eq!((c.eta, c.files, c.storage, c.zipf), (50.0, 20, 5.0, 0.8));
        assert_eq!(c.outage, 0.1);
        assert_eq!(c.scene.csi.outage, 0.1);
        assert_eq!(c.rate_reference, Some(vec![1.0, 1.0]));
        assert_eq!(c.certificate.samples, 50);
        assert_eq!(c.outage_draws, 300);
        assert_eq!(c.ao.passive_interference, InterferenceMode::Full);
        assert_eq!(c.ao.ccp.rho0, 0.5);
    }
}
