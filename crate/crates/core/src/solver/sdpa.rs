//! Sparse SDPA (`.dat-s`) export for cross-checking with external solvers.
//!
//! SDPA's primal is `min cᵀx  s.t.  Σ xᵢFᵢ - F₀ ⪰ 0`, so the constant of each
//! of our blocks is written negated. Linear rows form one diagonal block and
//! each equality row is written as a pair of opposite inequalities.

use std::fmt::Write as _;
use std::path::Path;

use super::ipm::Standard;
use super::{ConicProblem, SolverError};
use crate::linalg::RMat;

pub fn to_string(problem: &ConicProblem) -> String {
    let std_form = Standard::from_problem(problem);
    let n = std_form.n;
    let mut out = String::new();
    let _ = writeln!(out, "\"{}\"", problem.label.replace('"', "'"));
    let _ = writeln!(out, "{n}");

    let lp_rows = std_form.lp_b.len() + 2 * std_form.eq_b.len();
    let mut sizes: Vec<i64> = std_form.blocks.iter().map(|b| b.dim() as i64).collect();
    if lp_rows > 0 {
        sizes.push(-(lp_rows as i64));
    }
    let _ = writeln!(out, "{}", sizes.len());
    let _ = writeln!(
        out,
        "{}",
        sizes.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(" ")
    );
    let _ = writeln!(
        out,
        "{}",
        std_form.cost.iter().map(|c| fmt(*c)).collect::<Vec<_>>().join(" ")
    );

    let mut entry = |mat: usize, blk: usize, m: &RMat, negate: bool| {
        for i in 0..m.nrows() {
            for j in i..m.ncols() {
                let v = m[(i, j)];
                if v != 0.0 {
                    let v = if negate { -v } else { v };
                    let _ = writeln!(out, "{mat} {blk} {} {} {}", i + 1, j + 1, fmt(v));
                }
            }
        }
    };
    for (b, block) in std_form.blocks.iter().enumerate() {
        entry(0, b + 1, &block.constant, true);
        for (i, a) in &block.terms {
            entry(i + 1, b + 1, a, false);
        }
    }
    if lp_rows > 0 {
        let blk = std_form.blocks.len() + 1;
        let mut rows: Vec<(Vec<f64>, f64)> = Vec::with_capacity(lp_rows);
        for r in 0..std_form.lp_b.len() {
            rows.push((std_form.lp_a.row(r).iter().copied().collect(), std_form.lp_b[r]));
        }
        for r in 0..std_form.eq_b.len() {
            let a: Vec<f64> = std_form.eq_a.row(r).iter().copied().collect();
            rows.push((a.iter().map(|v| -v).collect(), -std_form.eq_b[r]));
            rows.push((a, std_form.eq_b[r]));
        }
        let mut lines = String::new();
        for (r, (a, b)) in rows.iter().enumerate() {
            if *b != 0.0 {
                let _ = writeln!(lines, "0 {blk} {} {} {}", r + 1, r + 1, fmt(-b));
            }
            for (i, v) in a.iter().enumerate() {
                if *v != 0.0 {
                    let _ = writeln!(lines, "{} {blk} {} {} {}", i + 1, r + 1, r + 1, fmt(*v));
                }
            }
        }
        out.push_str(&lines);
    }
    out
}

fn fmt(v: f64) -> String {
    format!("{v:.17e}")
}

pub fn export(problem: &ConicProblem, path: &Path) -> Result<(), SolverError> {
    std::fs::write(path, to_string(problem)).map_err(|e| SolverError::Io(e.to_string()))
}
