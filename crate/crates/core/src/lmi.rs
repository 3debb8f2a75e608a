//! Robust constraint construction.
//!
//! The worst-case useful-signal constraint is linearised around an anchor
//! point `(w⁽ⁿ⁾, e⁽ⁿ⁾)` into a quadratic form in `vec(ΔG)`, which the
//! S-procedure turns into one LMI per user. The worst-case
//! interference constraint becomes an LMI through a Schur complement followed
//! by the sign-definiteness lemma. Blocks are built numerically and their
//! affine structure in the real decision variables is recovered by probing,
//! which is exact because every builder here is affine in the probed inputs.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use num_complex::Complex64;
use thiserror::Error;

use crate::linalg::{c, hermitian_defect, kron, outer, vec_of, CMat, CVec, RMat};
use crate::vars::{AffineScalar, ScalarConstraint, VarGroup, VarId};

#[derive(Debug, Error, PartialEq)]
pub enum LmiError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("matrix is not Hermitian (defect {0:.3e})")]
    NotHermitian(f64),
    #[error("reflection anchor entry {0} is zero; the modulus linearisation is degenerate")]
    ZeroAnchor(usize),
}

/// Coefficients of the lower bound
/// `vecᵀ(ΔG) J vec(ΔG*) + 2 Re{jᵀ vec(ΔG*)} + j₀ <= |(hᴴ + eᴴ(Ĝ+ΔG)) w|²`.
#[derive(Debug, Clone, PartialEq)]
pub struct TaylorCoefficients {
    /// `J_k`, Hermitian MN×MN.
    pub quadratic: CMat,
    /// `j_k`, length MN.
    pub linear: CVec,
    /// `j_k` scalar term.
    pub constant: f64,
}

impl TaylorCoefficients {
    /// Value of the linearised useful power at a given error `ΔG` (M×N).
    pub fn lower_bound(&self, delta: &CMat) -> f64 {
        let x = vec_of(delta);
        let xc = x.map(|z| z.conj());
        let quad = (x.transpose() * &self.quadratic * &xc)[(0, 0)].re;
        let lin = 2.0 * (self.linear.transpose() * &xc)[(0, 0)].re;
        quad + lin + self.constant
    }

    pub fn dim(&self) -> usize {
        self.linear.len()
    }
}

fn effective_row(h: &CVec, e: &CVec, ghat: &CMat) -> nalgebra::RowDVector<Complex64> {
    h.adjoint() + e.adjoint() * ghat
}

/// Linearisation of the useful power around `(w_anchor, e_anchor)`.
///
/// With `a⁽ⁿ⁾ = (hᴴ + e⁽ⁿ⁾ᴴG) w⁽ⁿ⁾` and `a = (hᴴ + eᴴG) w`, the bound is
/// `2 Re{a⁽ⁿ⁾ a*} - |a⁽ⁿ⁾|²`, expanded in `vec(ΔG)` through
/// `eᴴ ΔG w = vecᵀ(ΔG) (w ⊗ e*)`.
pub fn taylor_coefficients(
    w: &CVec,
    w_anchor: &CVec,
    e: &CVec,
    e_anchor: &CVec,
    h: &CVec,
    ghat: &CMat,
) -> Result<TaylorCoefficients, LmiError> {
    let (m, n) = ghat.shape();
    if w.len() != n || w_anchor.len() != n || h.len() != n {
        return Err(LmiError::Dimension(format!(
            "precoder/direct channel length must be N={n}"
        )));
    }
    if e.len() != m || e_anchor.len() != m {
        return Err(LmiError::Dimension(format!(
            "reflection vector length must be M={m}"
        )));
    }
    let a_anchor = (effective_row(h, e_anchor, ghat) * w_anchor)[(0, 0)];
    let a_point = (effective_row(h, e, ghat) * w)[(0, 0)];

    let ec = e.map(|z| z.conj());
    let e0c = e_anchor.map(|z| z.conj());
    let quadratic = kron(&outer(w, w_anchor), &(&ec * e_anchor.transpose()))
        + kron(&outer(w_anchor, w), &(&e0c * e.transpose()))
        - kron(&outer(w_anchor, w_anchor), &(&e0c * e_anchor.transpose()));

    let linear = vec_of(&(outer(e, w) * a_anchor))
        + vec_of(&(outer(e_anchor, w_anchor) * a_point))
        - vec_of(&(outer(e_anchor, w_anchor) * a_anchor));

    let constant = 2.0 * (a_anchor * a_point.conj()).re - a_anchor.norm_sqr();
    Ok(TaylorCoefficients {
        quadratic,
        linear,
        constant,
    })
}

/// Affine Hermitian matrix `constant + Σ x_i · terms[i]` in real scalars.
#[derive(Debug, Clone, PartialEq)]
pub struct LmiBlock {
    pub label: String,
    pub constant: CMat,
    pub terms: BTreeMap<VarId, CMat>,
}

impl LmiBlock {
    pub fn new(label: impl Into<String>, constant: CMat) -> Self {
        Self {
            label: label.into(),
            constant,
            terms: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.constant.nrows()
    }

    pub fn add_term(&mut self, id: VarId, coefficient: CMat) {
        match self.terms.get_mut(&id) {
            Some(existing) => *existing += coefficient,
            None => {
                self.terms.insert(id, coefficient);
            }
        }
    }

    /// Recovers the affine structure of `map` over `vars`.
    ///
    /// `map` receives the values of `vars` (in order) and must be affine in
    /// them; the block is `map(0) + Σ x_i (map(e_i) - map(0))`.
    pub fn from_affine_map(
        label: impl Into<String>,
        vars: &[VarId],
        map: impl Fn(&[f64]) -> CMat,
    ) -> Self {
        let mut probe = vec![0.0; vars.len()];
        let constant = map(&probe);
        let mut block = Self::new(label, constant.clone());
        for (i, &id) in vars.iter().enumerate() {
            probe[i] = 1.0;
            let coefficient = map(&probe) - &constant;
            probe[i] = 0.0;
            if coefficient.iter().any(|z| z.norm() > 0.0) {
                block.add_term(id, coefficient);
            }
        }
        block
    }

    pub fn eval(&self, x: &[f64]) -> CMat {
        let mut out = self.constant.clone();
        for (id, a) in &self.terms {
            out += a * c(x[id.0], 0.0);
        }
        out
    }

    pub fn variables(&self) -> Vec<VarId> {
        self.terms.keys().copied().collect()
    }

    /// Largest Hermitian defect over the constant and every coefficient.
    pub fn hermitian_defect(&self) -> f64 {
        self.terms
            .values()
            .map(hermitian_defect)
            .fold(hermitian_defect(&self.constant), f64::max)
    }

    /// Congruence `Pᴴ B P` applied to every part of the block.
    ///
    /// With `P` having orthonormal columns spanning everything except an
    /// identity-weighted nonnegative multiplier, the compressed block is
    /// PSD exactly when the original is.
    pub fn compress(&self, basis: &CMat) -> Result<Self, LmiError> {
        if basis.nrows() != self.dim() {
            return Err(LmiError::Dimension(format!(
                "basis has {} rows, block has dimension {}",
                basis.nrows(),
                self.dim()
            )));
        }
        let ph = basis.adjoint();
        let squeeze = |a: &CMat| &ph * a * basis;
        let mut out = Self::new(self.label.clone(), squeeze(&self.constant));
        for (id, a) in &self.terms {
            out.terms.insert(*id, squeeze(a));
        }
        Ok(out)
    }

    pub fn realify(&self) -> Result<RealBlock, LmiError> {
        let constant = realify_psd(&self.constant)?;
        let terms = self
            .terms
            .iter()
            .map(|(id, a)| realify_psd(a).map(|r| (*id, r)))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(RealBlock {
            label: self.label.clone(),
            constant,
            terms,
        })
    }
}

/// Real symmetric affine block `constant + Σ x_i · terms[i] ⪰ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct RealBlock {
    pub label: String,
    pub constant: RMat,
    pub terms: Vec<(VarId, RMat)>,
}

impl RealBlock {
    pub fn dim(&self) -> usize {
        self.constant.nrows()
    }

    pub fn eval(&self, x: &[f64]) -> RMat {
        let mut out = self.constant.clone();
        for (id, a) in &self.terms {
            out += a * x[id.0];
        }
        out
    }
}

/// `[[Re H, -Im H], [Im H, Re H]]`.
///
/// The embedding is a real-algebra homomorphism; each eigenvalue of `H`
/// appears twice in the result.
pub fn realify_psd(h: &CMat) -> Result<RMat, LmiError> {
    let n = h.nrows();
    if h.ncols() != n {
        return Err(LmiError::Dimension(format!("{}×{} is not square", n, h.ncols())));
    }
    let scale = h.iter().map(|z| z.norm()).fold(1.0, f64::max);
    let defect = hermitian_defect(h);
    if defect > 1e-9 * scale {
        return Err(LmiError::NotHermitian(defect));
    }
    let mut out = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            // average the two triangles so the output is exactly symmetric
            let z = 0.5 * (h[(i, j)] + h[(j, i)].conj());
            out[(i, j)] = z.re;
            out[(n + i, n + j)] = z.re;
            out[(i, n + j)] = -z.im;
            out[(n + i, j)] = z.im;
        }
    }
    Ok(out)
}

/// Orthonormal basis for compressing a useful-signal block when `e` is held
/// fixed: `blkdiag(I_N ⊗ e*/‖e‖, 1)`.
///
/// With `e` fixed, `J` and `j*` live in the range of `I_N ⊗ e*`, and on the
/// orthogonal complement the block reduces to `τ I`, so with `τ >= 0` the
/// `(N+1)`-dimensional compression is PSD exactly when the full block is.
pub fn precoder_basis(e: &CVec, n: usize) -> CMat {
    let m = e.len();
    let norm = e.norm();
    let u = if norm > 0.0 {
        e.map(|z| z.conj()) / c(norm, 0.0)
    } else {
        let mut u = CVec::zeros(m);
        u[0] = c(1.0, 0.0);
        u
    };
    let mut p = CMat::zeros(m * n + 1, n + 1);
    for col in 0..n {
        for row in 0..m {
            p[(col * m + row, col)] = u[row];
        }
    }
    p[(m * n, n)] = c(1.0, 0.0);
    p
}

/// Basis `blkdiag(w/‖w‖ ⊗ I_M, 1)` for compressing a useful-signal block
/// when `w` is held fixed; same argument as [`precoder_basis`].
pub fn reflection_basis(w: &CVec, m: usize) -> CMat {
    let n = w.len();
    let norm = w.norm();
    let v = if norm > 0.0 {
        w / c(norm, 0.0)
    } else {
        let mut v = CVec::zeros(n);
        v[0] = c(1.0, 0.0);
        v
    };
    let mut p = CMat::zeros(m * n + 1, m + 1);
    for col in 0..n {
        for row in 0..m {
            p[(col * m + row, row)] = v[col];
        }
    }
    p[(m * n, m)] = c(1.0, 0.0);
    p
}

/// Inputs of the useful-signal LMI at one assignment of the variables.
#[derive(Debug, Clone)]
pub struct UsefulSignalTerms {
    pub coeffs: TaylorCoefficients,
    pub interference_noise: f64,
    pub tau: f64,
    pub beta: Option<f64>,
}

/// S-procedure LMI for the linearised useful-signal constraint
/// `q(ΔG) >= IN_k·θ_k + β_k` for all `‖ΔG‖_F <= ξ`:
///
/// `[[τ I + J, j*], [jᵀ, j₀ - IN_k θ_k - τ ξ² - β_k]] ⪰ 0`
///
/// where `θ_k = 2^γ_k - 1` is the SINR threshold. The upper-right entry is
/// `conj(j)` because the quadratic form is written in `vec(ΔG*)`.
pub fn useful_signal_matrix(terms: &UsefulSignalTerms, xi: f64, sinr_threshold: f64) -> CMat {
    let t = &terms.coeffs;
    let d = t.dim();
    let mut out = CMat::zeros(d + 1, d + 1);
    out.view_mut((0, 0), (d, d)).copy_from(&t.quadratic);
    for i in 0..d {
        out[(i, i)] += c(terms.tau, 0.0);
        out[(i, d)] = t.linear[i].conj();
        out[(d, i)] = t.linear[i];
    }
    let corner = t.constant
        - terms.interference_noise * sinr_threshold
        - terms.tau * xi * xi
        - terms.beta.unwrap_or(0.0);
    out[(d, d)] = c(corner, 0.0);
    out
}

/// Builds the useful-signal LMI as an affine block in `vars`; `assign` maps
/// values of `vars` to the block inputs and must be affine in them.
pub fn useful_signal_lmi(
    label: impl Into<String>,
    vars: &[VarId],
    xi: f64,
    sinr_threshold: f64,
    assign: impl Fn(&[f64]) -> UsefulSignalTerms,
) -> LmiBlock {
    LmiBlock::from_affine_map(label, vars, |x| {
        useful_signal_matrix(&assign(x), xi, sinr_threshold)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InterferenceMode {
    /// Sign-definiteness LMI of size `K + N`, robust to `ΔG`.
    Full,
    /// Nominal `K × K` LMI used in the reflection step.
    Reduced,
}

/// Inputs of the interference LMI at one assignment of the variables.
#[derive(Debug, Clone)]
pub struct InterferenceTerms {
    /// `W_{-k}`, N×(K-1).
    pub others: CMat,
    pub e: CVec,
    pub interference_noise: f64,
    pub lambda: f64,
}

/// Interference LMI for user `k`.
///
/// Full mode:
/// `[[IN - σ² - λM, T̂ᴴ, 0], [T̂, I, ξ W_{-k}ᴴ], [0, ξ W_{-k}, λ I_N]] ⪰ 0`
/// with `T̂ = ((hᴴ + eᴴĜ) W_{-k})ᴴ`. Reduced mode keeps the leading
/// `K × K` corner.
pub fn interference_matrix(
    terms: &InterferenceTerms,
    h: &CVec,
    ghat: &CMat,
    xi: f64,
    noise: f64,
    mode: InterferenceMode,
) -> Result<CMat, LmiError> {
    let (m, n) = ghat.shape();
    let others = &terms.others;
    if others.nrows() != n || h.len() != n || terms.e.len() != m {
        return Err(LmiError::Dimension(format!(
            "interference inputs must have N={n}, M={m}"
        )));
    }
    let q = others.ncols();
    let t_hat = (effective_row(h, &terms.e, ghat) * others).adjoint();
    let corner = terms.interference_noise - noise - terms.lambda * m as f64;
    let dim = match mode {
        InterferenceMode::Full => 1 + q + n,
        InterferenceMode::Reduced => 1 + q,
    };
    let mut out = CMat::zeros(dim, dim);
    out[(0, 0)] = c(corner, 0.0);
    for i in 0..q {
        out[(1 + i, 0)] = t_hat[i];
        out[(0, 1 + i)] = t_hat[i].conj();
        out[(1 + i, 1 + i)] = c(1.0, 0.0);
    }
    if mode == InterferenceMode::Full {
        let coupling = others * c(xi, 0.0);
        for r in 0..n {
            for i in 0..q {
                out[(1 + q + r, 1 + i)] = coupling[(r, i)];
                out[(1 + i, 1 + q + r)] = coupling[(r, i)].conj();
            }
            out[(1 + q + r, 1 + q + r)] = c(terms.lambda, 0.0);
        }
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
pub fn interference_lmi(
    label: impl Into<String>,
    vars: &[VarId],
    h: &CVec,
    ghat: &CMat,
    xi: f64,
    noise: f64,
    mode: InterferenceMode,
    assign: impl Fn(&[f64]) -> InterferenceTerms,
) -> Result<LmiBlock, LmiError> {
    // validate once at the base point so the probing closure cannot fail
    let zeros = vec![0.0; vars.len()];
    interference_matrix(&assign(&zeros), h, ghat, xi, noise, mode)?;
    Ok(LmiBlock::from_affine_map(label, vars, |x| {
        interference_matrix(&assign(x), h, ghat, xi, noise, mode)
            .expect("dimensions validated at the base point")
    }))
}

/// Penalty-CCP rows for the unit-modulus constraint around `anchor`:
///
/// * `|e⁰_m|² - 2 Re(e_mᴴ e⁰_m) <= d_m - 1`
/// * `|e_m|² <= 1 + d_{M+m}`
/// * `d >= 0`
///
/// `e` holds `2M` scalars (real parts first), `d` holds `2M` scalars.
pub fn ccp_modulus_constraints(
    e: &VarGroup,
    anchor: &CVec,
    d: &VarGroup,
) -> Result<Vec<ScalarConstraint>, LmiError> {
    let m = anchor.len();
    if e.dim != 2 * m || d.dim != 2 * m {
        return Err(LmiError::Dimension(format!(
            "expected 2M={} scalars for e and d, got {} and {}",
            2 * m,
            e.dim,
            d.dim
        )));
    }
    if let Some(i) = anchor.iter().position(|z| z.norm() == 0.0) {
        return Err(LmiError::ZeroAnchor(i));
    }
    let mut rows = Vec::with_capacity(5 * m);
    for (i, a) in anchor.iter().enumerate() {
        let linear = AffineScalar::var(d.id(i))
            .term(e.id(i), 2.0 * a.re)
            .term(e.id(m + i), 2.0 * a.im)
            .plus(-1.0 - a.norm_sqr());
        rows.push(ScalarConstraint::NonNegative(linear));
    }
    for i in 0..m {
        rows.push(ScalarConstraint::SquaredNorm {
            terms: vec![AffineScalar::var(e.id(i)), AffineScalar::var(e.id(m + i))],
            bound: AffineScalar::var(d.id(m + i)).plus(1.0),
        });
    }
    for id in d.ids() {
        rows.push(ScalarConstraint::NonNegative(AffineScalar::var(id)));
    }
    Ok(rows)
}
