//! Infeasible-start primal-dual interior-point method.
//!
//! Solves `min cᵀx  s.t.  S = F₀ + Σ xᵢFᵢ ⪰ 0` over a product of PSD blocks
//! and a nonnegative orthant, together with its dual
//! `max -⟨F₀, Z⟩  s.t.  ⟨Fᵢ, Z⟩ = cᵢ, Z ⪰ 0`. Search directions are HKM with
//! a Mehrotra predictor-corrector; equality rows are removed beforehand by
//! restricting `x` to an affine subspace. Infeasibility and unboundedness
//! are reported from normalised Farkas-type certificates read off the
//! diverging iterates.

use std::collections::BTreeMap;

use nalgebra::{Cholesky, DVector, SymmetricEigen};

use super::{cone_block, ConicProblem, SolverSettings, SolverStatus};
use crate::linalg::RMat;

/// Certificates must rule out solutions (or dual multipliers) of norm up to
/// `1/CERT_TOL` to be reported during the iteration.
const CERT_TOL: f64 = 1e-8;
/// Looser acceptance used once the iteration has stalled.
const CERT_TOL_LOOSE: f64 = 1e-5;
const STEP_FRACTION: f64 = 0.98;
/// A stalled iterate that is feasible to `tol` is still reported optimal
/// when its gap is within this multiple of `tol`.
const STALL_GAP_FACTOR: f64 = 100.0;

#[derive(Debug, Clone, PartialEq)]
pub struct StdBlock {
    pub constant: RMat,
    /// Sorted by variable index, at most one entry per variable.
    pub terms: Vec<(usize, RMat)>,
}

impl StdBlock {
    pub fn dim(&self) -> usize {
        self.constant.nrows()
    }

    fn eval(&self, x: &[f64]) -> RMat {
        let mut out = self.constant.clone();
        for (i, a) in &self.terms {
            if x[*i] != 0.0 {
                out += a * x[*i];
            }
        }
        out
    }

    fn linear_part(&self, x: &[f64]) -> RMat {
        let mut out = RMat::zeros(self.dim(), self.dim());
        for (i, a) in &self.terms {
            out += a * x[*i];
        }
        out
    }
}

/// Lowered problem: PSD blocks, rows `A x + b >= 0` and `E x + f == 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Standard {
    pub n: usize,
    pub cost: Vec<f64>,
    pub blocks: Vec<StdBlock>,
    pub lp_a: RMat,
    pub lp_b: DVector<f64>,
    pub eq_a: RMat,
    pub eq_b: DVector<f64>,
}

impl Standard {
    pub fn from_problem(p: &ConicProblem) -> Self {
        let n = p.num_vars();
        let mut blocks = Vec::new();
        let real_blocks = p.psd.iter().cloned().chain(p.cones.iter().map(cone_block));
        for b in real_blocks {
            let mut terms: BTreeMap<usize, RMat> = BTreeMap::new();
            for (id, a) in b.terms {
                match terms.get_mut(&id.0) {
                    Some(acc) => *acc += a,
                    None => {
                        terms.insert(id.0, a);
                    }
                }
            }
            blocks.push(StdBlock {
                constant: b.constant,
                terms: terms
                    .into_iter()
                    .filter(|(_, a)| a.iter().any(|v| *v != 0.0))
                    .collect(),
            });
        }
        let rows = |list: &[crate::vars::AffineScalar]| {
            let mut a = RMat::zeros(list.len(), n);
            let mut b = DVector::zeros(list.len());
            for (r, row) in list.iter().enumerate() {
                b[r] = row.constant;
                for (id, v) in &row.terms {
                    a[(r, id.0)] += v;
                }
            }
            (a, b)
        };
        let (lp_a, lp_b) = rows(&p.linear);
        let (eq_a, eq_b) = rows(&p.equalities);
        Self {
            n,
            cost: p.cost.clone(),
            blocks,
            lp_a,
            lp_b,
            eq_a,
            eq_b,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Outcome {
    pub status: SolverStatus,
    pub x: Vec<f64>,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap: f64,
    pub iterations: usize,
}

/// Affine reparametrisation `x = x₀ + N z` of the problem variables.
struct Reduction {
    x0: DVector<f64>,
    basis: RMat,
}

impl Reduction {
    fn lift(&self, z: &[f64]) -> Vec<f64> {
        let z = DVector::from_column_slice(z);
        (&self.x0 + &self.basis * z).iter().copied().collect()
    }
}

pub(crate) fn solve(p: &Standard, settings: &SolverSettings) -> Outcome {
    let Some(reduction) = equality_reduction(p) else {
        return Outcome {
            status: SolverStatus::Infeasible,
            x: vec![0.0; p.n],
            primal_residual: f64::INFINITY,
            dual_residual: f64::NAN,
            gap: f64::NAN,
            iterations: 0,
        };
    };
    let reduced = restrict(p, &reduction);
    let out = Ipm::new(&reduced, settings).run();
    Outcome {
        x: reduction.lift(&out.x),
        ..out
    }
}

/// Particular solution and null-space basis of the equality rows, with
/// variables that touch no constraint and carry no cost dropped. `None` when
/// the equalities are inconsistent.
fn equality_reduction(p: &Standard) -> Option<Reduction> {
    let n = p.n;
    let (x0, mut basis) = if p.eq_a.nrows() == 0 {
        (DVector::zeros(n), RMat::identity(n, n))
    } else {
        let ata = p.eq_a.transpose() * &p.eq_a;
        let eig = SymmetricEigen::new(ata);
        let top = eig.eigenvalues.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let thresh = 1e-12 * top.max(f64::MIN_POSITIVE);
        let atb = p.eq_a.transpose() * &p.eq_b;
        let mut x0 = DVector::zeros(n);
        let mut null_cols = Vec::new();
        for (i, &lam) in eig.eigenvalues.iter().enumerate() {
            let v = eig.eigenvectors.column(i);
            if lam > thresh {
                x0 -= v * (v.dot(&atb) / lam);
            } else {
                null_cols.push(v.into_owned());
            }
        }
        let resid = (&p.eq_a * &x0 + &p.eq_b).norm();
        if resid > 1e-9 * (1.0 + p.eq_b.norm()) {
            return None;
        }
        let basis = if null_cols.is_empty() {
            RMat::zeros(n, 0)
        } else {
            RMat::from_columns(&null_cols)
        };
        (x0, basis)
    };
    if p.eq_a.nrows() == 0 {
        // drop variables that appear nowhere; a nonzero cost on one of them
        // is kept so the solver reports the unboundedness
        let mut used = vec![false; n];
        for b in &p.blocks {
            for (i, _) in &b.terms {
                used[*i] = true;
            }
        }
        for r in 0..p.lp_a.nrows() {
            for (i, u) in used.iter_mut().enumerate() {
                if p.lp_a[(r, i)] != 0.0 {
                    *u = true;
                }
            }
        }
        for (i, u) in used.iter_mut().enumerate() {
            if p.cost[i] != 0.0 {
                *u = true;
            }
        }
        let keep: Vec<usize> = (0..n).filter(|&i| used[i]).collect();
        if keep.len() < n {
            basis = RMat::from_fn(n, keep.len(), |r, c| if r == keep[c] { 1.0 } else { 0.0 });
        }
    }
    Some(Reduction { x0, basis })
}

fn restrict(p: &Standard, red: &Reduction) -> Standard {
    let n = red.basis.ncols();
    let identity = n == p.n && red.basis == RMat::identity(p.n, p.n) && red.x0.iter().all(|v| *v == 0.0);
    if identity {
        return Standard {
            eq_a: RMat::zeros(0, p.n),
            eq_b: DVector::zeros(0),
            ..p.clone()
        };
    }
    let x0: Vec<f64> = red.x0.iter().copied().collect();
    let blocks = p
        .blocks
        .iter()
        .map(|b| {
            let constant = b.eval(&x0);
            let mut terms = Vec::new();
            for j in 0..n {
                let mut acc = RMat::zeros(b.dim(), b.dim());
                let mut any = false;
                for (i, a) in &b.terms {
                    let w = red.basis[(*i, j)];
                    if w != 0.0 {
                        acc += a * w;
                        any = true;
                    }
                }
                if any && acc.iter().any(|v| v.abs() > 0.0) {
                    terms.push((j, acc));
                }
            }
            StdBlock { constant, terms }
        })
        .collect();
    let lp_b = &p.lp_b + &p.lp_a * &red.x0;
    let lp_a = &p.lp_a * &red.basis;
    let cost = red.basis.transpose() * DVector::from_column_slice(&p.cost);
    Standard {
        n,
        cost: cost.iter().copied().collect(),
        blocks,
        lp_a,
        lp_b,
        eq_a: RMat::zeros(0, n),
        eq_b: DVector::zeros(0),
    }
}

fn sym(m: &RMat) -> RMat {
    (m + m.transpose()) * 0.5
}

fn inner(a: &RMat, b: &RMat) -> f64 {
    a.dot(b)
}

/// Largest `α` with `S + α ΔS ⪰ 0` given the Cholesky factor of `S`.
fn psd_step(chol: &Cholesky<f64, nalgebra::Dyn>, ds: &RMat) -> f64 {
    let l = chol.l();
    let Some(y) = l.solve_lower_triangular(ds) else {
        return 0.0;
    };
    let Some(x) = l.solve_lower_triangular(&y.transpose()) else {
        return 0.0;
    };
    let lo = SymmetricEigen::new(sym(&x))
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |m, v| m.min(*v));
    if lo < 0.0 {
        -1.0 / lo
    } else {
        f64::INFINITY
    }
}

fn lp_step(s: &DVector<f64>, ds: &DVector<f64>) -> f64 {
    s.iter()
        .zip(ds.iter())
        .filter(|(_, d)| **d < 0.0)
        .map(|(s, d)| -s / d)
        .fold(f64::INFINITY, f64::min)
}

struct Ipm<'a> {
    p: &'a Standard,
    settings: &'a SolverSettings,
    nu: f64,
    norm_f0: f64,
    norm_c: f64,
}

#[derive(Clone)]
struct Iterate {
    x: Vec<f64>,
    s: Vec<RMat>,
    z: Vec<RMat>,
    ls: DVector<f64>,
    lz: DVector<f64>,
}

struct Direction {
    dx: DVector<f64>,
    ds: Vec<RMat>,
    dz: Vec<RMat>,
    dls: DVector<f64>,
    dlz: DVector<f64>,
}

struct Residuals {
    rp: Vec<RMat>,
    rp_lp: DVector<f64>,
    /// `⟨Fᵢ, Z⟩ + aᵢᵀ z`
    atz: DVector<f64>,
    pobj: f64,
    dobj: f64,
    complementarity: f64,
    pres: f64,
    dres: f64,
    gap: f64,
}

impl<'a> Ipm<'a> {
    fn new(p: &'a Standard, settings: &'a SolverSettings) -> Self {
        let nu = p.blocks.iter().map(|b| b.dim()).sum::<usize>() as f64 + p.lp_b.len() as f64;
        let norm_f0 = (p.blocks.iter().map(|b| b.constant.norm_squared()).sum::<f64>()
            + p.lp_b.norm_squared())
        .sqrt();
        let norm_c = p.cost.iter().map(|v| v * v).sum::<f64>().sqrt();
        Self {
            p,
            settings,
            nu,
            norm_f0,
            norm_c,
        }
    }

    fn column_norms(&self) -> Vec<f64> {
        let mut sq = vec![0.0; self.p.n];
        for b in &self.p.blocks {
            for (i, a) in &b.terms {
                sq[*i] += a.norm_squared();
            }
        }
        for r in 0..self.p.lp_a.nrows() {
            for (i, v) in sq.iter_mut().enumerate() {
                *v += self.p.lp_a[(r, i)].powi(2);
            }
        }
        sq.into_iter().map(f64::sqrt).collect()
    }

    fn initial(&self) -> Iterate {
        let p = self.p;
        let root_nu = self.nu.sqrt();
        let cols = self.column_norms();
        let mut xi_z = 10.0_f64.max(root_nu);
        let mut xi_s = 10.0_f64.max(root_nu).max(self.norm_f0);
        for (i, norm) in cols.iter().enumerate() {
            xi_z = xi_z.max(root_nu * (1.0 + p.cost[i].abs()) / (1.0 + norm));
            xi_s = xi_s.max(*norm);
        }
        Iterate {
            x: vec![0.0; p.n],
            s: p.blocks.iter().map(|b| RMat::identity(b.dim(), b.dim()) * xi_s).collect(),
            z: p.blocks.iter().map(|b| RMat::identity(b.dim(), b.dim()) * xi_z).collect(),
            ls: DVector::from_element(p.lp_b.len(), xi_s),
            lz: DVector::from_element(p.lp_b.len(), xi_z),
        }
    }

    fn residuals(&self, it: &Iterate) -> Residuals {
        let p = self.p;
        let xv = DVector::from_column_slice(&it.x);
        let mut rp = Vec::with_capacity(p.blocks.len());
        let mut atz = DVector::zeros(p.n);
        let mut dobj = 0.0;
        let mut comp = 0.0;
        for (k, b) in p.blocks.iter().enumerate() {
            rp.push(&it.s[k] - b.eval(&it.x));
            for (i, a) in &b.terms {
                atz[*i] += inner(a, &it.z[k]);
            }
            dobj -= inner(&b.constant, &it.z[k]);
            comp += inner(&it.s[k], &it.z[k]);
        }
        let rp_lp = &it.ls - (&p.lp_a * &xv + &p.lp_b);
        atz += p.lp_a.transpose() * &it.lz;
        dobj -= p.lp_b.dot(&it.lz);
        comp += it.ls.dot(&it.lz);
        let pobj: f64 = p.cost.iter().zip(&it.x).map(|(c, x)| c * x).sum();
        let rp_norm = (rp.iter().map(|r| r.norm_squared()).sum::<f64>() + rp_lp.norm_squared()).sqrt();
        let rd_norm = p
            .cost
            .iter()
            .zip(atz.iter())
            .map(|(c, a)| (c - a).powi(2))
            .sum::<f64>()
            .sqrt();
        let scale = 1.0 + pobj.abs() + dobj.abs();
        Residuals {
            rp,
            rp_lp,
            pres: rp_norm / (1.0 + self.norm_f0),
            dres: rd_norm / (1.0 + self.norm_c),
            gap: (pobj - dobj).abs().max(comp) / scale,
            atz,
            pobj,
            dobj,
            complementarity: comp,
        }
    }

    /// `Z` normalised to `⟨F₀, Z⟩ = -1` proves infeasibility when `Aᵀ Z`
    /// is small.
    fn infeasibility_certificate(&self, r: &Residuals, tol: f64) -> bool {
        r.dobj > 0.0 && r.atz.norm() / r.dobj <= tol
    }

    /// `x` normalised to `cᵀx = -1` with `Σ xᵢFᵢ ⪰ 0` proves unboundedness.
    fn unboundedness_certificate(&self, it: &Iterate, r: &Residuals, tol: f64) -> bool {
        if r.pobj >= 0.0 {
            return false;
        }
        let xs: Vec<f64> = it.x.iter().map(|v| v / -r.pobj).collect();
        let xv = DVector::from_column_slice(&xs);
        if (&self.p.lp_a * &xv).iter().any(|v| *v < -tol) {
            return false;
        }
        self.p.blocks.iter().all(|b| {
            SymmetricEigen::new(b.linear_part(&xs))
                .eigenvalues
                .iter()
                .all(|v| *v >= -tol)
        })
    }

    fn outcome(&self, status: SolverStatus, it: &Iterate, r: &Residuals, iterations: usize) -> Outcome {
        Outcome {
            status,
            x: it.x.clone(),
            primal_residual: r.pres,
            dual_residual: r.dres,
            gap: r.gap,
            iterations,
        }
    }

    fn stalled(&self, it: &Iterate, r: &Residuals, iterations: usize, fallback: SolverStatus) -> Outcome {
        let tol = self.settings.tol;
        let status = if r.pres <= tol && r.dres <= tol && r.gap <= STALL_GAP_FACTOR * tol {
            SolverStatus::Optimal
        } else if self.infeasibility_certificate(r, CERT_TOL_LOOSE) {
            SolverStatus::Infeasible
        } else if self.unboundedness_certificate(it, r, CERT_TOL_LOOSE) {
            SolverStatus::Unbounded
        } else {
            fallback
        };
        self.outcome(status, it, r, iterations)
    }

    fn run(&self) -> Outcome {
        let p = self.p;
        let tol = self.settings.tol;
        let mut it = self.initial();
        let mut last = self.residuals(&it);
        if p.n == 0 && p.blocks.is_empty() && p.lp_b.is_empty() {
            return self.outcome(SolverStatus::Optimal, &it, &last, 0);
        }
        for iter in 0..self.settings.max_iter {
            let r = self.residuals(&it);
            if !(r.pres.is_finite() && r.dres.is_finite() && r.gap.is_finite()) {
                return self.stalled(&it, &last, iter, SolverStatus::NumericalFailure);
            }
            if r.pres <= tol && r.dres <= tol && r.gap <= tol {
                return self.outcome(SolverStatus::Optimal, &it, &r, iter);
            }
            if self.infeasibility_certificate(&r, CERT_TOL) {
                return self.outcome(SolverStatus::Infeasible, &it, &r, iter);
            }
            let big = it.x.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            if big > 1e4 && self.unboundedness_certificate(&it, &r, CERT_TOL) {
                return self.outcome(SolverStatus::Unbounded, &it, &r, iter);
            }

            let Some(step) = self.step(&it, &r) else {
                return self.stalled(&it, &r, iter, SolverStatus::NumericalFailure);
            };
            let (next, alpha) = step;
            if alpha < 1e-10 {
                return self.stalled(&it, &r, iter, SolverStatus::NumericalFailure);
            }
            it = next;
            last = r;
        }
        let r = self.residuals(&it);
        let iters = self.settings.max_iter;
        self.stalled(&it, &r, iters, SolverStatus::IterationLimit)
    }

    /// One predictor-corrector step; returns the new iterate and the
    /// smaller of the two step lengths.
    fn step(&self, it: &Iterate, r: &Residuals) -> Option<(Iterate, f64)> {
        let p = self.p;
        let n = p.n;
        let mu = r.complementarity / self.nu;

        let chols: Vec<Cholesky<f64, nalgebra::Dyn>> = it
            .s
            .iter()
            .map(|s| Cholesky::new(sym(s)))
            .collect::<Option<_>>()?;
        let zchols: Vec<Cholesky<f64, nalgebra::Dyn>> = it
            .z
            .iter()
            .map(|z| Cholesky::new(sym(z)))
            .collect::<Option<_>>()?;
        let sinv: Vec<RMat> = chols.iter().map(|c| c.inverse()).collect();

        // Schur complement M_ij = Σ tr(Fᵢ S⁻¹ Fⱼ Z) + Σ aᵢ aⱼ z/s
        let mut m = RMat::zeros(n, n);
        for (k, b) in p.blocks.iter().enumerate() {
            let g: Vec<RMat> = b.terms.iter().map(|(_, a)| &sinv[k] * a * &it.z[k]).collect();
            for (jj, (j, _)) in b.terms.iter().enumerate() {
                for (i, fi) in b.terms.iter().take(jj + 1) {
                    let v = inner(fi, &g[jj]);
                    m[(*i, *j)] += v;
                    if i != j {
                        m[(*j, *i)] += v;
                    }
                }
            }
        }
        if !p.lp_b.is_empty() {
            let w = it.lz.component_div(&it.ls);
            let scaled = RMat::from_fn(p.lp_a.nrows(), n, |r, c| p.lp_a[(r, c)] * w[r]);
            m += p.lp_a.transpose() * scaled;
        }
        let chol_m = factor_schur(m)?;

        let solve_dir = |sigma: f64, corr: Option<&Direction>| -> Option<Direction> {
            // R = σμS⁻¹ + S⁻¹ r_p Z - S⁻¹ ΔSₐ ΔZₐ
            let mut rhs = DVector::from_iterator(n, p.cost.iter().map(|c| -c));
            let mut rmats = Vec::with_capacity(p.blocks.len());
            for (k, b) in p.blocks.iter().enumerate() {
                let mut rk = &sinv[k] * sigma * mu + &sinv[k] * &r.rp[k] * &it.z[k];
                if let Some(a) = corr {
                    rk -= &sinv[k] * &a.ds[k] * &a.dz[k];
                }
                let rk = sym(&rk);
                for (i, fi) in &b.terms {
                    rhs[*i] += inner(fi, &rk);
                }
                rmats.push(rk);
            }
            if !p.lp_b.is_empty() {
                let mut rl = DVector::zeros(p.lp_b.len());
                for l in 0..rl.len() {
                    let mut v = sigma * mu / it.ls[l] + r.rp_lp[l] * it.lz[l] / it.ls[l];
                    if let Some(a) = corr {
                        v -= a.dls[l] * a.dlz[l] / it.ls[l];
                    }
                    rl[l] = v;
                }
                rhs += p.lp_a.transpose() * rl;
            }
            let dx = chol_m.solve(&rhs);
            if dx.iter().any(|v| !v.is_finite()) {
                return None;
            }
            let dxs: Vec<f64> = dx.iter().copied().collect();
            let mut ds = Vec::with_capacity(p.blocks.len());
            let mut dz = Vec::with_capacity(p.blocks.len());
            for (k, b) in p.blocks.iter().enumerate() {
                let dsk = b.linear_part(&dxs) - &r.rp[k];
                let mut dzk = &sinv[k] * sigma * mu - &it.z[k] - &sinv[k] * &dsk * &it.z[k];
                if let Some(a) = corr {
                    dzk -= &sinv[k] * &a.ds[k] * &a.dz[k];
                }
                dz.push(sym(&dzk));
                ds.push(dsk);
            }
            let dls = &p.lp_a * &dx - &r.rp_lp;
            let mut dlz = DVector::zeros(p.lp_b.len());
            for l in 0..dlz.len() {
                let mut v = sigma * mu / it.ls[l] - it.lz[l] - dls[l] * it.lz[l] / it.ls[l];
                if let Some(a) = corr {
                    v -= a.dls[l] * a.dlz[l] / it.ls[l];
                }
                dlz[l] = v;
            }
            Some(Direction { dx, ds, dz, dls, dlz })
        };

        let lengths = |d: &Direction| -> (f64, f64) {
            let mut ap = lp_step(&it.ls, &d.dls);
            let mut ad = lp_step(&it.lz, &d.dlz);
            for k in 0..p.blocks.len() {
                ap = ap.min(psd_step(&chols[k], &d.ds[k]));
                ad = ad.min(psd_step(&zchols[k], &d.dz[k]));
            }
            (ap, ad)
        };

        let aff = solve_dir(0.0, None)?;
        let (ap, ad) = lengths(&aff);
        let (ap, ad) = (ap.min(1.0), ad.min(1.0));
        let mut mu_aff = 0.0;
        for k in 0..p.blocks.len() {
            let s = &it.s[k] + &aff.ds[k] * ap;
            let z = &it.z[k] + &aff.dz[k] * ad;
            mu_aff += inner(&s, &z);
        }
        mu_aff += (&it.ls + &aff.dls * ap).dot(&(&it.lz + &aff.dlz * ad));
        mu_aff /= self.nu;
        let sigma = if mu > 0.0 {
            (mu_aff / mu).max(0.0).powi(3).min(1.0)
        } else {
            0.0
        };

        let dir = solve_dir(sigma, Some(&aff))?;
        let (ap, ad) = lengths(&dir);
        let ap = (STEP_FRACTION * ap).min(1.0);
        let ad = (STEP_FRACTION * ad).min(1.0);

        let x: Vec<f64> = it.x.iter().zip(dir.dx.iter()).map(|(x, d)| x + ap * d).collect();
        let s = it.s.iter().zip(&dir.ds).map(|(s, d)| sym(&(s + d * ap))).collect();
        let z = it.z.iter().zip(&dir.dz).map(|(z, d)| sym(&(z + d * ad))).collect();
        let next = Iterate {
            x,
            s,
            z,
            ls: &it.ls + &dir.dls * ap,
            lz: &it.lz + &dir.dlz * ad,
        };
        Some((next, ap.min(ad)))
    }
}

/// Cholesky of the Schur matrix with escalating diagonal regularisation.
fn factor_schur(mut m: RMat) -> Option<Cholesky<f64, nalgebra::Dyn>> {
    m = sym(&m);
    let scale = m.diagonal().iter().fold(0.0_f64, |a, v| a.max(v.abs())).max(1e-300);
    if let Some(c) = Cholesky::new(m.clone()) {
        return Some(c);
    }
    let mut reg = 1e-14 * scale;
    for _ in 0..6 {
        let mut t = m.clone();
        for i in 0..t.nrows() {
            t[(i, i)] += reg;
        }
        if let Some(c) = Cholesky::new(t) {
            return Some(c);
        }
        reg *= 100.0;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::symmetric_eigenvalues;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn block(constant: RMat, terms: Vec<(usize, RMat)>) -> StdBlock {
        StdBlock { constant, terms }
    }

    fn problem(n: usize, cost: Vec<f64>, blocks: Vec<StdBlock>) -> Standard {
        Standard {
            n,
            cost,
            blocks,
            lp_a: RMat::zeros(0, n),
            lp_b: DVector::zeros(0),
            eq_a: RMat::zeros(0, n),
            eq_b: DVector::zeros(0),
        }
    }

    fn rand_sym(rng: &mut ChaCha8Rng, d: usize) -> RMat {
        let a = RMat::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
        sym(&a)
    }

    /// Log-barrier path following with damped Newton steps on
    /// `t cᵀx - Σ log det F(x)`, an independent reference for small SDPs.
    fn barrier_reference(p: &Standard, x0: &[f64]) -> f64 {
        let n = p.n;
        let mut x = x0.to_vec();
        let feasible = |x: &[f64]| p.blocks.iter().all(|b| Cholesky::new(b.eval(x)).is_some());
        assert!(feasible(&x));
        let mut t = 1.0;
        let nu: usize = p.blocks.iter().map(|b| b.dim()).sum();
        while (nu as f64) / t > 1e-9 {
            for _ in 0..200 {
                let mut g = DVector::from_iterator(n, p.cost.iter().map(|c| t * c));
                let mut h = RMat::zeros(n, n);
                for b in &p.blocks {
                    let finv = Cholesky::new(b.eval(&x)).unwrap().inverse();
                    let prods: Vec<RMat> = (0..n)
                        .map(|i| {
                            b.terms
                                .iter()
                                .find(|(j, _)| *j == i)
                                .map(|(_, a)| &finv * a)
                                .unwrap_or_else(|| RMat::zeros(b.dim(), b.dim()))
                        })
                        .collect();
                    for i in 0..n {
                        g[i] -= prods[i].trace();
                        for j in 0..n {
                            h[(i, j)] += (&prods[i] * &prods[j]).trace();
                        }
                    }
                }
                let dx = -Cholesky::new(h.clone()).unwrap().solve(&g);
                let dec = (dx.transpose() * &h * &dx)[(0, 0)].sqrt();
                let mut step = 1.0 / (1.0 + dec);
                loop {
                    let cand: Vec<f64> = x.iter().zip(dx.iter()).map(|(a, d)| a + step * d).collect();
                    if feasible(&cand) {
                        x = cand;
                        break;
                    }
                    step *= 0.5;
                }
                if dec < 1e-10 {
                    break;
                }
            }
            t *= 4.0;
        }
        p.cost.iter().zip(&x).map(|(c, x)| c * x).sum()
    }

    #[test]
    fn matches_barrier_reference_on_random_sdps() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for case in 0..20 {
            let d = 2 + case % 3;
            let n = 1 + case % 3;
            // F(x) = I + Σ xᵢAᵢ is feasible at 0; the trace-bound block keeps
            // the problem bounded
            let terms: Vec<(usize, RMat)> = (0..n).map(|i| (i, rand_sym(&mut rng, d))).collect();
            let bound: Vec<(usize, RMat)> = (0..n)
                .map(|i| {
                    let mut e = RMat::zeros(2 * n, 2 * n);
                    e[(2 * i, 2 * i)] = 1.0;
                    e[(2 * i + 1, 2 * i + 1)] = -1.0;
                    (i, e)
                })
                .collect();
            let cost: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let p = problem(
                n,
                cost,
                vec![
                    block(RMat::identity(d, d), terms),
                    block(RMat::identity(2 * n, 2 * n) * 3.0, bound),
                ],
            );
            let out = solve(&p, &SolverSettings::default());
            assert_eq!(out.status, SolverStatus::Optimal, "case {case}");
            let ours: f64 = p.cost.iter().zip(&out.x).map(|(c, x)| c * x).sum();
            let reference = barrier_reference(&p, &vec![0.0; n]);
            assert!(
                (ours - reference).abs() <= 1e-4 * (1.0 + reference.abs()),
                "case {case}: {ours} vs {reference}"
            );
            for b in &p.blocks {
                assert!(symmetric_eigenvalues(&b.eval(&out.x))[0] > -1e-6);
            }
        }
    }

    #[test]
    fn perturbed_infeasible_sdp_is_detected() {
        // x ⪰ I·1 and x ⪯ I·(1 - ε) cannot both hold
        for eps in [1e-1, 1e-3] {
            let one = RMat::identity(2, 2);
            let p = problem(
                1,
                vec![1.0],
                vec![
                    block(-&one, vec![(0, one.clone())]),
                    block(&one * (1.0 - eps), vec![(0, -&one)]),
                ],
            );
            let out = solve(&p, &SolverSettings::default());
            assert_ne!(out.status, SolverStatus::Optimal, "eps={eps}");
            assert_eq!(out.status, SolverStatus::Infeasible, "eps={eps}");
        }
    }

    #[test]
    fn inconsistent_equalities() {
        let mut p = problem(1, vec![1.0], vec![]);
        p.eq_a = RMat::from_row_slice(2, 1, &[1.0, 1.0]);
        p.eq_b = DVector::from_vec(vec![-1.0, -2.0]);
        assert_eq!(solve(&p, &SolverSettings::default()).status, SolverStatus::Infeasible);
    }

    #[test]
    fn max_step_to_boundary() {
        let s = RMat::identity(2, 2);
        let ds = RMat::from_row_slice(2, 2, &[-2.0, 0.0, 0.0, 1.0]);
        let a = psd_step(&Cholesky::new(s).unwrap(), &ds);
        assert!((a - 0.5).abs() < 1e-12);
    }
}
