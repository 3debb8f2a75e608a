use std::process::Command;

use irs_cache::config::parse_experiment_config;
use irs_cache::harness::{
    emit_results, read_results, run_experiment, ExperimentConfig, Format, Scheme, CSV_COLUMNS,
};

fn small_sweep() -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        gammas: vec![0.5, 1.0, 1.5],
        delta_g: vec![0.01],
        schemes: vec![Scheme::OjbOc, Scheme::RandomPhaseUc],
        seeds: vec![0, 1],
        outage_draws: 200,
        ..ExperimentConfig::default()
    };
    cfg.certificate.samples = 50;
    cfg.certificate.descent_starts = 2;
    cfg.certificate.descent_iterations = 20;
    cfg
}

const SMALL_TOML: &str = r#"
gammas = [0.5, 1.0, 1.5]
delta_g = [0.01]
schemes = ["OJB-OC", "RandomPhase-UC"]
seeds = [0, 1]
outage_draws = 200
cert_samples = 50
cert_starts = 2
cert_iterations = 20
"#;

#[test]
fn sweep_emits_one_consistent_record_per_point() {
    let cfg = small_sweep();
    let out = run_experiment(&cfg).unwrap();
    assert_eq!(out.len(), 12);
    let mut keys: Vec<_> = out
        .iter()
        .map(|r| (r.scheme.name(), r.gamma_bps_hz.to_bits(), r.seed))
        .collect();
    keys.sort();
    keys.dedup();
    assert_eq!(keys.len(), 12);
    for r in &out {
        assert!(r.feasible, "{r:?}");
        let want = r.backhaul_cost + cfg.eta * r.power_w;
        assert!((r.network_cost - want).abs() <= 1e-9 * want.max(1.0));
        assert!(r.min_rate_certified >= r.gamma_bps_hz - 1e-3, "{r:?}");
        if r.scheme == Scheme::RandomPhaseUc {
            assert_eq!(r.outer_iters, 0);
        }
    }
    // both schemes share e⁽⁰⁾, so optimised phases never cost more power
    for a in out.iter().filter(|r| r.scheme == Scheme::OjbOc) {
        let b = out
            .iter()
            .find(|r| r.scheme == Scheme::RandomPhaseUc && r.gamma_bps_hz == a.gamma_bps_hz && r.seed == a.seed)
            .unwrap();
        assert!(a.power_w <= b.power_w * (1.0 + 1e-9));
        assert!(a.backhaul_cost <= b.backhaul_cost);
    }
}

#[test]
fn sweep_does_not_depend_on_threads_or_repetition() {
    let cfg = ExperimentConfig {
        schemes: vec![Scheme::OjbOc],
        gammas: vec![1.0],
        ..small_sweep()
    };
    let a = run_experiment(&cfg).unwrap();
    let b = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(|| run_experiment(&cfg).unwrap());
    assert_eq!(a.len(), b.len());
    assert!(a.iter().zip(&b).all(|(x, y)| x.same_outcome(y)));

    let dir = tempfile::tempdir().unwrap();
    for format in [Format::Csv, Format::Json] {
        let path = dir.path().join(format!("out.{format:?}"));
        emit_results(&a, format, &path).unwrap();
        let back = read_results(&path).unwrap();
        assert!(a.iter().zip(&back).all(|(x, y)| x.same_outcome(y)));
    }
}

#[test]
fn config_file_matches_the_programmatic_sweep() {
    assert_eq!(parse_experiment_config(SMALL_TOML).unwrap(), small_sweep());
}

#[test]
fn cli_runs_verifies_and_reports_errors() {
    let bin = env!("CARGO_BIN_EXE_irs-cache");
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sweep.toml");
    std::fs::write(&cfg, SMALL_TOML.replace("[0.5, 1.0, 1.5]", "[1.0]").replace("[0, 1]", "[3]")).unwrap();
    let out = dir.path().join("results.csv");

    let run = Command::new(bin)
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), CSV_COLUMNS.join(","));
    assert_eq!(lines.count(), 2);

    let verify = Command::new(bin)
        .args(["verify", "--config"])
        .arg(&cfg)
        .arg("--results")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(verify.status.code(), Some(0), "{}", String::from_utf8_lossy(&verify.stdout));

    std::fs::write(&cfg, "gamma = [1.0]\n").unwrap();
    let bad = Command::new(bin)
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(1));

    let placement = Command::new(bin)
        .args(["placement", "--files", "5", "--storage", "2.5"])
        .output()
        .unwrap();
    assert_eq!(placement.status.code(), Some(0));
    let text = String::from_utf8(placement.stdout).unwrap();
    assert_eq!(text.lines().count(), 6);
    assert!(text.lines().nth(3).unwrap().ends_with(",0.5"));
}
