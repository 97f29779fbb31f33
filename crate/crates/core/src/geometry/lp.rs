//! Thin wrapper over `minilp` for the small dense LPs the planner needs.

use super::{HalfspacePolytope, Vec3};
use minilp::{ComparisonOp, OptimizationDirection, Problem};
use thiserror::Error;

/// Bound on free variables; keeps every LP bounded at desk scale.
const BIG: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LpError {
    #[error("linear program is infeasible")]
    Infeasible,
    #[error("linear program is unbounded")]
    Unbounded,
}

/// Relation of one constraint row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

/// One dense row `coeffs . x (rel) rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct LpRow {
    pub coeffs: Vec<f64>,
    pub relation: Relation,
    pub rhs: f64,
}

/// Maximizes `objective . x` subject to `rows` and per-variable `bounds`.
pub fn maximize(
    objective: &[f64],
    bounds: &[(f64, f64)],
    rows: &[LpRow],
) -> Result<(Vec<f64>, f64), LpError> {
    assert_eq!(
        objective.len(),
        bounds.len(),
        "objective/bounds length mismatch"
    );
    let mut problem = Problem::new(OptimizationDirection::Maximize);
    let vars: Vec<_> = objective
        .iter()
        .zip(bounds)
        .map(|(&c, &(lo, hi))| problem.add_var(c, (lo, hi)))
        .collect();
    for row in rows {
        assert_eq!(row.coeffs.len(), vars.len(), "row length mismatch");
        let expr: Vec<_> = vars
            .iter()
            .zip(&row.coeffs)
            .filter(|(_, &c)| c != 0.0)
            .map(|(&v, &c)| (v, c))
            .collect();
        let op = match row.relation {
            Relation::Le => ComparisonOp::Le,
            Relation::Ge => ComparisonOp::Ge,
            Relation::Eq => ComparisonOp::Eq,
        };
        problem.add_constraint(expr.as_slice(), op, row.rhs);
    }
    match problem.solve() {
        Ok(sol) => Ok((vars.iter().map(|&v| sol[v]).collect(), sol.objective())),
        Err(minilp::Error::Infeasible) => Err(LpError::Infeasible),
        Err(minilp::Error::Unbounded) => Err(LpError::Unbounded),
    }
}

/// Largest ball inside `poly` as (center, radius); `None` when the system is
/// infeasible. The center is clamped to a large but finite box so unbounded
/// polytopes still return a point.
pub fn chebyshev_center(poly: &HalfspacePolytope) -> Option<(Vec3, f64)> {
    let bounds = [(-BIG, BIG), (-BIG, BIG), (-BIG, BIG), (0.0, BIG)];
    let rows: Vec<LpRow> = poly
        .rows()
        .map(|(a, b)| LpRow {
            coeffs: vec![a.x, a.y, a.z, a.norm()],
            relation: Relation::Le,
            rhs: b,
        })
        .collect();
    let (x, r) = maximize(&[0.0, 0.0, 0.0, 1.0], &bounds, &rows).ok()?;
    Some((Vec3::new(x[0], x[1], x[2]), r))
}
