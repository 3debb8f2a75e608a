mod common;

use irs_cache::cache::{backhaul_cost, solve_content_placement, uniform_placement, zipf_popularity};
use irs_cache::channel::{
    cascaded_channel, chi2_cdf, error_radius, generate_scene, inverse_chi2_cdf, SceneConfig,
};
use irs_cache::linalg::{c, CMat};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

#[test]
fn scenes_are_reproducible_from_the_seed() {
    let cfg = SceneConfig::default();
    let a = generate_scene(&cfg, 17).unwrap();
    let b = generate_scene(&cfg, 17).unwrap();
    let other = generate_scene(&cfg, 18).unwrap();
    assert_eq!(a.bs_irs, b.bs_irs);
    assert_eq!(a.direct, b.direct);
    assert_eq!(a.estimated, b.estimated);
    assert_eq!(a.error_radius, b.error_radius);
    assert_ne!(a.bs_irs, other.bs_irs);
}

#[test]
fn infinite_rician_factor_leaves_only_line_of_sight() {
    let cfg = SceneConfig {
        rician_br_db: f64::INFINITY,
        rician_ru_db: f64::INFINITY,
        rician_bu_db: f64::INFINITY,
        ..SceneConfig::default()
    };
    let s = generate_scene(&cfg, 3).unwrap();
    let pl = |d: f64, a: f64| (10f64.powf(cfg.pl_ref_db / 10.0) * d.powf(-a)).sqrt();

    let amp = pl(distance(cfg.pos_bs, cfg.pos_irs), cfg.ple_bs_irs);
    for z in s.bs_irs.iter() {
        assert!((z.norm() / amp - 1.0).abs() < 1e-3);
    }
    // a pure steering outer product has rank one
    let sv = s.bs_irs.clone().singular_values();
    assert!(sv[1] / sv[0] < 1e-3);

    for (k, u) in s.user_positions.iter().enumerate() {
        let amp = pl(distance(*u, cfg.pos_bs), cfg.ple_direct);
        assert!(s.direct[k].iter().all(|z| (z.norm() / amp - 1.0).abs() < 1e-3));
        let amp = pl(distance(*u, cfg.pos_irs), cfg.ple_irs_ue);
        assert!(s.irs_user[k].iter().all(|z| (z.norm() / amp - 1.0).abs() < 1e-3));
    }
}

#[test]
fn cascade_holds_entrywise() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let hr = common::cvec(&mut rng, 3);
    let h = common::cmat(&mut rng, 3, 2);
    let g = cascaded_channel(&hr, &h).unwrap();
    for m in 0..3 {
        for n in 0..2 {
            assert!((g[(m, n)] - hr[m].conj() * h[(m, n)]).norm() < 1e-15);
        }
    }

    let s = generate_scene(&SceneConfig::default(), 9).unwrap();
    for k in 0..s.k_users {
        for m in 0..s.m_elements {
            for n in 0..s.n_antennas {
                let want = s.irs_user[k][m].conj() * s.bs_irs[(m, n)];
                assert!((s.cascaded[k][(m, n)] - want).norm() <= 1e-12 * want.norm().max(1e-300));
            }
        }
    }
}

#[test]
fn nominal_error_stays_inside_its_ball() {
    for delta in [0.001, 0.01, 0.1] {
        let mut cfg = SceneConfig::default();
        cfg.csi.delta_g = delta;
        for seed in 0..20 {
            let s = generate_scene(&cfg, seed).unwrap();
            for k in 0..s.k_users {
                let err = (&s.cascaded[k] - &s.estimated[k]).norm();
                assert!(err <= s.error_radius[k], "seed {seed} user {k}");
            }
        }
    }
    let mut cfg = SceneConfig::default();
    cfg.csi.delta_g = 0.0;
    let s = generate_scene(&cfg, 1).unwrap();
    assert!(s.error_radius.iter().all(|&x| x == 0.0));
    assert_eq!(s.cascaded, s.estimated);
}

#[test]
fn radius_is_monotone_in_its_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let g = common::cmat(&mut rng, 6, 6);
    let base = error_radius(0.01, &g, 0.05).unwrap();
    assert!(error_radius(0.02, &g, 0.05).unwrap() > base);
    assert!(error_radius(0.01, &(&g * c(2.0, 0.0)), 0.05).unwrap() > base);
    // a smaller outage asks for a larger covering ball
    assert!(error_radius(0.01, &g, 0.01).unwrap() > base);
    assert!(error_radius(0.01, &g, 0.2).unwrap() < base);
}

#[test]
fn chi2_quantile_inverts_the_cdf() {
    for dof in [2, 12, 72] {
        for i in 0..=98 {
            let p = 0.01 + 0.01 * i as f64;
            let x = inverse_chi2_cdf(dof, p).unwrap();
            assert!((chi2_cdf(dof, x) - p).abs() < 1e-6, "dof {dof} p {p}");
        }
    }
    let x = inverse_chi2_cdf(2, 1.0 - (-0.5f64).exp()).unwrap();
    assert!((x - 1.0).abs() < 1e-12);
}

#[test]
fn chi2_cdf_matches_quadrature() {
    // Simpson's rule on the density x⁵ e^{-x/2} / (2⁶ Γ(6))
    let pdf = |x: f64| x.powi(5) * (-x / 2.0).exp() / (64.0 * 120.0);
    for x in [1.0, 5.0, 11.34, 21.03, 40.0] {
        let n = 20_000;
        let h = x / n as f64;
        let mut s = pdf(0.0) + pdf(x);
        for i in 1..n {
            s += pdf(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        let oracle = s * h / 3.0;
        assert!((chi2_cdf(12, x) - oracle).abs() < 1e-9, "x {x}");
    }
}

#[test]
fn gaussian_errors_exceed_the_radius_at_the_outage_rate() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let g = common::cmat(&mut rng, 6, 6);
    let (delta, rho) = (0.01, 0.05);
    let xi = error_radius(delta, &g, rho).unwrap();
    let var = (delta * g.norm()).powi(2);
    let draws = 10_000;
    let outside = (0..draws)
        .filter(|_| CMat::from_fn(6, 6, |_, _| common::cn(&mut rng, var)).norm() > xi)
        .count();
    let rate = outside as f64 / draws as f64;
    assert!((rate - rho).abs() <= 0.01, "exceedance {rate}");
}

fn random_popularity<R: Rng>(rng: &mut R, files: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..files).map(|_| rng.gen_range(0.01..1.0)).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|x| x / total).collect()
}

#[test]
fn placement_is_monotone_in_popularity() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..200 {
        let files = rng.gen_range(1..40);
        let b = random_popularity(&mut rng, files);
        let s0 = rng.gen_range(0.0..files as f64 + 2.0);
        let cpl = solve_content_placement(&b, s0).unwrap();
        assert!(cpl.iter().all(|&x| (0.0..=1.0).contains(&x)));
        assert!(cpl.iter().sum::<f64>() <= s0 + 1e-9);
        for i in 0..files {
            for j in 0..files {
                if b[i] > b[j] {
                    assert!(cpl[i] >= cpl[j]);
                }
            }
        }
    }
}

#[test]
fn backhaul_never_grows_with_storage() {
    let b = zipf_popularity(200, 1.0).unwrap();
    let rates = [2.0, 2.0, 2.0];
    let mut last = f64::INFINITY;
    for i in 0..=420 {
        let s0 = 0.5 * i as f64;
        let cost = backhaul_cost(&solve_content_placement(&b, s0).unwrap(), &b, &rates).unwrap();
        assert!(cost <= last + 1e-12);
        let uniform = backhaul_cost(&uniform_placement(200, s0).unwrap(), &b, &rates).unwrap();
        assert!(cost <= uniform + 1e-12);
        last = cost;
    }
    assert!(last.abs() < 1e-12);
}

#[test]
fn placement_and_cost_commute_with_permutations() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..50 {
        let files = rng.gen_range(2..30);
        let b = random_popularity(&mut rng, files);
        let s0 = rng.gen_range(0.0..files as f64);
        let cpl = solve_content_placement(&b, s0).unwrap();
        let mut perm: Vec<usize> = (0..files).collect();
        perm.shuffle(&mut rng);
        let pb: Vec<f64> = perm.iter().map(|&i| b[i]).collect();
        let pc: Vec<f64> = perm.iter().map(|&i| cpl[i]).collect();
        assert_eq!(solve_content_placement(&pb, s0).unwrap(), pc);
        let rates = [1.5, 0.5];
        let lhs = backhaul_cost(&cpl, &b, &rates).unwrap();
        let rhs = backhaul_cost(&pc, &pb, &rates).unwrap();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
