#![allow(dead_code)]

use irs_cache::linalg::{CMat, CVec};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

/// Circularly symmetric complex Gaussian entry with `E|z|² = var`.
pub fn cn<R: Rng>(rng: &mut R, var: f64) -> Complex64 {
    let s = (var / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(s * re, s * im)
}

pub fn cmat<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> CMat {
    CMat::from_fn(rows, cols, |_, _| cn(rng, 1.0))
}

pub fn cvec<R: Rng>(rng: &mut R, len: usize) -> CVec {
    CVec::from_fn(len, |_, _| cn(rng, 1.0))
}

pub fn unit_phases<R: Rng>(rng: &mut R, len: usize) -> CVec {
    CVec::from_fn(len, |_, _| Complex64::from_polar(1.0, rng.gen_range(0.0..std::f64::consts::TAU)))
}

pub fn hermitian<R: Rng>(rng: &mut R, n: usize) -> CMat {
    let a = cmat(rng, n, n);
    (&a + a.adjoint()) * Complex64::new(0.5, 0.0)
}

/// Uniform draw from the Frobenius ball of radius `xi`, independent of the
/// library sampler.
pub fn ball_draw<R: Rng>(rng: &mut R, xi: f64, rows: usize, cols: usize) -> CMat {
    let z = cmat(rng, rows, cols);
    let norm = z.norm();
    let dim = (2 * rows * cols) as f64;
    let r = xi * rng.gen::<f64>().powf(1.0 / dim);
    z * Complex64::new(r / norm, 0.0)
}

/// `|(hᴴ + eᴴ(Ĝ + ΔG)) w|²`.
pub fn useful_power(h: &CVec, e: &CVec, g: &CMat, delta: &CMat, w: &CVec) -> f64 {
    let a = h.adjoint() + e.adjoint() * (g + delta);
    (a * w)[(0, 0)].norm_sqr()
}

/// Minimum power to reach SINR threshold `2^γ − 1` over a channel of gain
/// `gain` with noise `noise`.
pub fn mrt_power(noise: f64, gamma: f64, gain: f64) -> f64 {
    noise * (2f64.powf(gamma) - 1.0) / gain
}
