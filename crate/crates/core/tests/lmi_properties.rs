mod common;

use irs_cache::linalg::{c, complex_from_split, min_hermitian_eigenvalue, CMat, CVec};
use irs_cache::lmi::{
    interference_lmi, interference_matrix, taylor_coefficients, useful_signal_lmi, useful_signal_matrix,
    InterferenceMode, InterferenceTerms, UsefulSignalTerms,
};
use irs_cache::vars::{VarKind, VarRegistry};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const N: usize = 3;
const M: usize = 4;

/// Largest `t` in `[lo, hi]` with `ok(t)`, for `ok` true on a prefix.
fn bisect(mut lo: f64, mut hi: f64, ok: impl Fn(f64) -> bool) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

#[test]
fn useful_block_is_sound_over_the_ball() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..20 {
        let h = common::cvec(&mut rng, N);
        let g = common::cmat(&mut rng, M, N);
        let w0 = common::cvec(&mut rng, N);
        let e0 = common::unit_phases(&mut rng, M);
        let w = &w0 + common::cvec(&mut rng, N) * c(0.2, 0.0);
        let e = &e0 + common::cvec(&mut rng, M) * c(0.1, 0.0);
        let xi = rng.gen_range(0.05..0.5);
        let coeffs = taylor_coefficients(&w, &w0, &e, &e0, &h, &g).unwrap();

        // best certified level over a multiplier grid
        let mut best = f64::NEG_INFINITY;
        for tau in [0.0, 0.1, 0.3, 1.0, 3.0, 10.0, 30.0, 100.0] {
            let block = |level: f64| {
                let t = UsefulSignalTerms {
                    coeffs: coeffs.clone(),
                    interference_noise: level,
                    tau,
                    beta: None,
                };
                min_hermitian_eigenvalue(&useful_signal_matrix(&t, xi, 1.0)) >= 0.0
            };
            if block(-1e6) {
                best = best.max(bisect(-1e6, 1e6, block));
            }
        }
        assert!(best.is_finite());

        for i in 0..500 {
            let mut d = common::ball_draw(&mut rng, xi, M, N);
            if i % 5 == 0 {
                d *= c(xi / d.norm(), 0.0);
            }
            let bound = coeffs.lower_bound(&d);
            let truth = common::useful_power(&h, &e, &g, &d, &w);
            assert!(bound >= best - 1e-8 * best.abs().max(1.0), "S-procedure: {bound} < {best}");
            assert!(truth >= bound - 1e-9 * truth.max(1.0));
        }
    }
}

#[test]
fn full_interference_block_is_sound_over_the_ball() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let noise = 0.3;
    for _ in 0..20 {
        let h = common::cvec(&mut rng, N);
        let g = common::cmat(&mut rng, M, N);
        let e = common::unit_phases(&mut rng, M);
        let others = common::cmat(&mut rng, N, 2);
        let xi = rng.gen_range(0.05..0.5);

        let mut best = f64::INFINITY;
        for lambda in [0.01, 0.03, 0.1, 0.3, 1.0, 3.0, 10.0] {
            let psd = |level: f64| {
                let t = InterferenceTerms {
                    others: others.clone(),
                    e: e.clone(),
                    interference_noise: level,
                    lambda,
                };
                min_hermitian_eigenvalue(&interference_matrix(&t, &h, &g, xi, noise, InterferenceMode::Full).unwrap())
                    >= 0.0
            };
            // the block is PSD above a threshold level; bisect on the complement
            if psd(1e6) {
                best = best.min(bisect(-1e6, 1e6, |t| !psd(t)));
            }
        }
        assert!(best.is_finite());

        for i in 0..500 {
            let mut d = common::ball_draw(&mut rng, xi, M, N);
            if i % 5 == 0 {
                d *= c(xi / d.norm(), 0.0);
            }
            let a = h.adjoint() + e.adjoint() * (&g + &d);
            let interference = (a * &others).norm_squared();
            assert!(interference + noise <= best * (1.0 + 1e-8), "{} > {best}", interference + noise);
        }
    }
}

#[test]
fn reduced_interference_block_is_the_nominal_schur_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let noise = 0.5;
    for _ in 0..200 {
        let h = common::cvec(&mut rng, N);
        let g = common::cmat(&mut rng, M, N);
        let e = common::unit_phases(&mut rng, M);
        let others = common::cmat(&mut rng, N, 2);
        let nominal = ((h.adjoint() + e.adjoint() * &g) * &others).norm_squared() + noise;
        let level = nominal * rng.gen_range(0.5..1.5);
        let t = InterferenceTerms {
            others,
            e,
            interference_noise: level,
            lambda: 0.0,
        };
        let m = interference_matrix(&t, &h, &g, 0.3, noise, InterferenceMode::Reduced).unwrap();
        assert_eq!(min_hermitian_eigenvalue(&m) >= -1e-9, level >= nominal);
    }
}

fn random_x<R: Rng>(rng: &mut R, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(-2.0..2.0)).collect()
}

#[test]
fn blocks_are_affine_in_the_precoder_variables() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let h = common::cvec(&mut rng, N);
    let g = common::cmat(&mut rng, M, N);
    let w0 = common::cvec(&mut rng, N);
    let e = common::unit_phases(&mut rng, M);
    let mut reg = VarRegistry::new();
    let w = reg.add("w", 2 * N, VarKind::Free);
    let inn = reg.scalar("in", VarKind::Nonnegative);
    let tau = reg.scalar("tau", VarKind::Nonnegative);
    let mut vars = w.ids();
    vars.extend([inn, tau]);

    let assign = |x: &[f64]| UsefulSignalTerms {
        coeffs: taylor_coefficients(&complex_from_split(&x[..2 * N]), &w0, &e, &e, &h, &g).unwrap(),
        interference_noise: x[2 * N],
        tau: x[2 * N + 1],
        beta: None,
    };
    let block = useful_signal_lmi("useful", &vars, 0.2, 3.0, assign);
    for _ in 0..50 {
        let x = random_x(&mut rng, reg.len());
        let direct = useful_signal_matrix(&assign(&x), 0.2, 3.0);
        let scale = direct.norm().max(1.0);
        assert!((block.eval(&x) - &direct).norm() <= 1e-9 * scale);
    }
    assert!(block.hermitian_defect() <= 1e-9);

    let mut reg = VarRegistry::new();
    let wo = reg.add("w_others", 2 * N * 2, VarKind::Free);
    let inn = reg.scalar("in", VarKind::Nonnegative);
    let lambda = reg.scalar("lambda", VarKind::Nonnegative);
    let mut vars = wo.ids();
    vars.extend([inn, lambda]);
    let assign = |x: &[f64]| {
        let cols = complex_from_split(&x[..4 * N]);
        InterferenceTerms {
            others: CMat::from_fn(N, 2, |r, k| cols[k * N + r]),
            e: e.clone(),
            interference_noise: x[4 * N],
            lambda: x[4 * N + 1],
        }
    };
    let block = interference_lmi("interference", &vars, &h, &g, 0.2, 0.7, InterferenceMode::Full, assign).unwrap();
    for _ in 0..50 {
        let x = random_x(&mut rng, reg.len());
        let direct = interference_matrix(&assign(&x), &h, &g, 0.2, 0.7, InterferenceMode::Full).unwrap();
        assert!((block.eval(&x) - &direct).norm() <= 1e-9 * direct.norm().max(1.0));
    }
    assert!(block.hermitian_defect() <= 1e-9);
}

#[test]
fn useful_block_is_affine_in_the_reflection_variables() {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let h = common::cvec(&mut rng, N);
    let g = common::cmat(&mut rng, M, N);
    let w = common::cvec(&mut rng, N);
    let e0 = common::unit_phases(&mut rng, M);
    let mut reg = VarRegistry::new();
    let ev = reg.add("e", 2 * M, VarKind::Free);
    let inn = reg.scalar("in", VarKind::Nonnegative);
    let tau = reg.scalar("tau", VarKind::Nonnegative);
    let beta = reg.scalar("beta", VarKind::Free);
    let mut vars = ev.ids();
    vars.extend([inn, tau, beta]);
    let assign = |x: &[f64]| {
        let e: CVec = complex_from_split(&x[..2 * M]);
        UsefulSignalTerms {
            coeffs: taylor_coefficients(&w, &w, &e, &e0, &h, &g).unwrap(),
            interference_noise: x[2 * M],
            tau: x[2 * M + 1],
            beta: Some(x[2 * M + 2]),
        }
    };
    let block = useful_signal_lmi("useful", &vars, 0.4, 1.0, assign);
    assert!(block.hermitian_defect() <= 1e-9);
    for _ in 0..50 {
        let x = random_x(&mut rng, reg.len());
        let direct = useful_signal_matrix(&assign(&x), 0.4, 1.0);
        assert!((block.eval(&x) - &direct).norm() <= 1e-9 * direct.norm().max(1.0));
    }
}
