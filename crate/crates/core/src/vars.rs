//! Real decision variables shared by the constraint builders and the solver.
//!
//! Every unknown is a real scalar addressed by a [`VarId`]. Vector and
//! complex unknowns are registered as groups of consecutive scalars; a complex
//! vector of length `n` occupies `2n` scalars, real parts first.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VarId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VarKind {
    Free,
    Nonnegative,
}

/// Consecutive scalars registered under one name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VarGroup {
    pub name: String,
    pub start: usize,
    pub dim: usize,
    pub kind: VarKind,
}

impl VarGroup {
    pub fn id(&self, i: usize) -> VarId {
        assert!(i < self.dim, "index {i} out of range for `{}`", self.name);
        VarId(self.start + i)
    }

    pub fn ids(&self) -> Vec<VarId> {
        (self.start..self.start + self.dim).map(VarId).collect()
    }

    pub fn values<'a>(&self, x: &'a [f64]) -> &'a [f64] {
        &x[self.start..self.start + self.dim]
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct VarRegistry {
    groups: Vec<VarGroup>,
    len: usize,
}

impl VarRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, dim: usize, kind: VarKind) -> VarGroup {
        let name = name.into();
        assert!(
            self.group(&name).is_none(),
            "variable `{name}` registered twice"
        );
        let group = VarGroup {
            name,
            start: self.len,
            dim,
            kind,
        };
        self.len += dim;
        self.groups.push(group.clone());
        group
    }

    pub fn scalar(&mut self, name: impl Into<String>, kind: VarKind) -> VarId {
        self.add(name, 1, kind).id(0)
    }

    /// Number of scalar unknowns.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn groups(&self) -> &[VarGroup] {
        &self.groups
    }

    pub fn group(&self, name: &str) -> Option<&VarGroup> {
        self.groups.iter().find(|g| g.name == name)
    }

    pub fn contains(&self, id: VarId) -> bool {
        id.0 < self.len
    }

    pub fn kind(&self, id: VarId) -> Option<VarKind> {
        self.groups
            .iter()
            .find(|g| id.0 >= g.start && id.0 < g.start + g.dim)
            .map(|g| g.kind)
    }
}

/// `constant + Σ coef·x_id`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AffineScalar {
    pub constant: f64,
    pub terms: Vec<(VarId, f64)>,
}

impl AffineScalar {
    pub fn constant(value: f64) -> Self {
        Self {
            constant: value,
            terms: Vec::new(),
        }
    }

    pub fn var(id: VarId) -> Self {
        Self {
            constant: 0.0,
            terms: vec![(id, 1.0)],
        }
    }

    pub fn term(mut self, id: VarId, coef: f64) -> Self {
        self.terms.push((id, coef));
        self
    }

    pub fn plus(mut self, value: f64) -> Self {
        self.constant += value;
        self
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|(id, a)| a * x[id.0]).sum::<f64>()
    }
}

impl From<f64> for AffineScalar {
    fn from(value: f64) -> Self {
        Self::constant(value)
    }
}

impl From<VarId> for AffineScalar {
    fn from(id: VarId) -> Self {
        Self::var(id)
    }
}

/// Scalar constraint rows accepted by the conic assembler.
#[derive(Debug, Clone, PartialEq)]
pub enum ScalarConstraint {
    /// `expr >= 0`
    NonNegative(AffineScalar),
    /// `expr == 0`
    Zero(AffineScalar),
    /// `Σ terms_i² <= bound`
    SquaredNorm {
        terms: Vec<AffineScalar>,
        bound: AffineScalar,
    },
    /// `‖terms‖₂ <= bound`
    Norm {
        terms: Vec<AffineScalar>,
        bound: AffineScalar,
    },
}

impl ScalarConstraint {
    /// Signed slack at `x`; nonnegative iff the constraint holds (for
    /// `Zero`, minus the absolute residual).
    pub fn slack(&self, x: &[f64]) -> f64 {
        match self {
            Self::NonNegative(a) => a.eval(x),
            Self::Zero(a) => -a.eval(x).abs(),
            Self::SquaredNorm { terms, bound } => {
                bound.eval(x) - terms.iter().map(|t| t.eval(x).powi(2)).sum::<f64>()
            }
            Self::Norm { terms, bound } => {
                bound.eval(x) - terms.iter().map(|t| t.eval(x).powi(2)).sum::<f64>().sqrt()
            }
        }
    }

    pub fn variables(&self) -> Vec<VarId> {
        let mut out = Vec::new();
        let mut push = |a: &AffineScalar| out.extend(a.terms.iter().map(|(id, _)| *id));
        match self {
            Self::NonNegative(a) | Self::Zero(a) => push(a),
            Self::SquaredNorm { terms, bound } | Self::Norm { terms, bound } => {
                terms.iter().for_each(&mut push);
                push(bound);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn groups_are_consecutive() {
        let mut r = VarRegistry::new();
        let w = r.add("w", 4, VarKind::Free);
        let t = r.scalar("t", VarKind::Nonnegative);
        assert_eq!(w.ids(), vec![VarId(0), VarId(1), VarId(2), VarId(3)]);
        assert_eq!(t, VarId(4));
        assert_eq!(r.len(), 5);
        assert_eq!(r.kind(VarId(4)), Some(VarKind::Nonnegative));
        assert_eq!(r.kind(VarId(5)), None);
    }

    #[test]
    fn affine_eval() {
        let a = AffineScalar::var(VarId(1)).term(VarId(0), -2.0).plus(0.5);
        assert_eq!(a.eval(&[1.0, 3.0]), 3.0 - 2.0 + 0.5);
    }
}
