//! Feasibility of small dense linear systems over non-negative variables:
//! an exact-rational presolve that eliminates equalities by substitution,
//! then phase-1 simplex with Bland's rule, generic over the scalar type.
//!
//! The floating backend answers fast. A float `Feasible` carries a witness
//! re-validated against the original constraints within a tolerance. A float
//! `Infeasible` is promoted to a proof when the phase-1 dual ray verifies in
//! exact arithmetic (Farkas certificate); otherwise the exact backend runs
//! the same pivoting over rationalsators and is the arbiter.

use num_traits::{Signed, Zero};
use std::collections::BTreeMap;

use crate::numeric::{rat_to_f64, rat_zero, Rat};
use crate::{Error, Result};

/// Scalar abstraction: exact rationals or tolerance-guarded floats.
pub trait LpScalar: Clone + PartialOrd {
    fn zero() -> Self;
    fn from_rat(r: &Rat) -> Self;
    fn sub(&self, other: &Self) -> Self;
    fn mul(&self, other: &Self) -> Self;
    fn div(&self, other: &Self) -> Self;
    /// Strictly negative beyond tolerance.
    fn is_neg(&self) -> bool;
    /// Strictly positive beyond tolerance.
    fn is_pos(&self) -> bool;
    fn to_rat(&self) -> Rat;
}

const F64_TOL: f64 = 1e-9;

impl LpScalar for f64 {
    fn zero() -> Self {
        0.0
    }
    fn from_rat(r: &Rat) -> Self {
        rat_to_f64(r)
    }
    fn sub(&self, other: &Self) -> Self {
        self - other
    }
    fn mul(&self, other: &Self) -> Self {
        self * other
    }
    fn div(&self, other: &Self) -> Self {
        self / other
    }
    fn is_neg(&self) -> bool {
        *self < -F64_TOL
    }
    fn is_pos(&self) -> bool {
        *self > F64_TOL
    }
    fn to_rat(&self) -> Rat {
        Rat::from_float(*self).unwrap_or_else(rat_zero)
    }
}

impl LpScalar for Rat {
    fn zero() -> Self {
        rat_zero()
    }
    fn from_rat(r: &Rat) -> Self {
        r.clone()
    }
    fn sub(&self, other: &Self) -> Self {
        self - other
    }
    fn mul(&self, other: &Self) -> Self {
        self * other
    }
    fn div(&self, other: &Self) -> Self {
        self / other
    }
    fn is_neg(&self) -> bool {
        self.is_negative()
    }
    fn is_pos(&self) -> bool {
        self.is_positive()
    }
    fn to_rat(&self) -> Rat {
        self.clone()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConstraintOp {
    Eq,
    Le,
}

/// `sum(terms) op rhs` over variables that are implicitly non-negative.
#[derive(Clone, Debug)]
pub struct LinearConstraint {
    pub terms: Vec<(usize, Rat)>,
    pub op: ConstraintOp,
    pub rhs: Rat,
    pub label: String,
}

/// A pure feasibility instance over non-negative variables.
#[derive(Clone, Debug)]
pub struct LpInstance {
    pub num_vars: usize,
    pub constraints: Vec<LinearConstraint>,
}

fn violation_of(constraints: &[LinearConstraint], point: &[Rat]) -> Rat {
    let mut worst = rat_zero();
    for x in point {
        if x < &rat_zero() {
            worst = worst.max(-x.clone());
        }
    }
    for c in constraints {
        let lhs: Rat = c
            .terms
            .iter()
            .map(|(v, a)| a * &point[*v])
            .fold(rat_zero(), |acc, t| acc + t);
        let gap = match c.op {
            ConstraintOp::Eq => (lhs - &c.rhs).abs(),
            ConstraintOp::Le => (lhs - &c.rhs).max(rat_zero()),
        };
        worst = worst.max(gap);
    }
    worst
}

impl LpInstance {
    /// Maximum constraint violation of a candidate point (non-negativity
    /// included). Used to re-validate witnesses independently of the solver.
    pub fn max_violation(&self, point: &[Rat]) -> Rat {
        assert_eq!(point.len(), self.num_vars);
        violation_of(&self.constraints, point)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Backend {
    Float,
    Exact,
}

#[derive(Clone, Debug)]
pub enum Feasibility {
    Feasible { witness: Vec<Rat>, backend: Backend },
    /// `backend: Exact` marks a proof: exact pivoting, an exactly verified
    /// dual ray, or an inconsistent equality found by the exact presolve.
    Infeasible { backend: Backend },
}

impl Feasibility {
    pub fn is_feasible(&self) -> bool {
        matches!(self, Feasibility::Feasible { .. })
    }
}

type SparseRow = BTreeMap<usize, Rat>;

/// Equalities eliminated once, exactly; inequality rows carried in the
/// substituted basis so window-specific rows can be appended cheaply.
pub struct Presolved {
    num_vars: usize,
    free_vars: Vec<usize>,
    free_index: BTreeMap<usize, usize>,
    /// `(var, expr, rhs)`: `x_var = rhs - expr . xـfree` (expr over original ids).
    pivots: Vec<(usize, SparseRow, Rat)>,
    pivot_set: BTreeMap<usize, usize>,
    /// Static inequality rows over free positions: `coeffs . free <= rhs`.
    static_rows: Vec<(Vec<Rat>, Rat)>,
    static_constraints: Vec<LinearConstraint>,
    infeasible_equality: bool,
}

impl Presolved {
    /// Eliminate the equalities of `lp` by Gauss-Jordan substitution and
    /// carry its inequalities (plus the eliminated variables' non-negativity)
    /// into the reduced basis.
    pub fn new(lp: &LpInstance) -> Self {
        let mut eq_rows: Vec<(SparseRow, Rat)> = Vec::new();
        let mut le_rows: Vec<(SparseRow, Rat)> = Vec::new();
        for c in &lp.constraints {
            let mut row = SparseRow::new();
            for (v, a) in &c.terms {
                if !a.is_zero() {
                    let entry = row.entry(*v).or_insert_with(rat_zero);
                    *entry += a;
                    if entry.is_zero() {
                        row.remove(v);
                    }
                }
            }
            match c.op {
                ConstraintOp::Eq => eq_rows.push((row, c.rhs.clone())),
                ConstraintOp::Le => le_rows.push((row, c.rhs.clone())),
            }
        }

        let mut pivots: Vec<(usize, SparseRow, Rat)> = Vec::new();
        let mut infeasible_equality = false;
        for (mut row, mut rhs) in eq_rows {
            // Forward-substitute the existing pivots into the new row.
            for (pv, prow, prhs) in &pivots {
                if let Some(coef) = row.remove(pv) {
                    for (v, a) in prow {
                        let entry = row.entry(*v).or_insert_with(rat_zero);
                        *entry -= &coef * a;
                        if entry.is_zero() {
                            row.remove(v);
                        }
                    }
                    rhs -= &coef * prhs;
                }
            }
            let Some(pivot_var) = row.keys().next().copied() else {
                if !rhs.is_zero() {
                    infeasible_equality = true;
                }
                continue;
            };
            let pivot_coef = row.remove(&pivot_var).unwrap();
            let expr: SparseRow = row
                .into_iter()
                .map(|(v, a)| (v, a / &pivot_coef))
                .collect();
            let expr_rhs = rhs / &pivot_coef;
            // Substitute the new pivot into existing pivot expressions:
            // x_p = prhs - (rest . x) - coef * x_pivot and
            // x_pivot = expr_rhs - (expr . x) give
            // x_p = (prhs - coef * expr_rhs) - ((rest - coef * expr) . x).
            for (_, prow, prhs) in pivots.iter_mut() {
                if let Some(coef) = prow.remove(&pivot_var) {
                    for (v, a) in &expr {
                        let entry = prow.entry(*v).or_insert_with(rat_zero);
                        *entry -= &coef * a;
                        if entry.is_zero() {
                            prow.remove(v);
                        }
                    }
                    *prhs = prhs.clone() - &coef * &expr_rhs;
                }
            }
            pivots.push((pivot_var, expr, expr_rhs));
        }

        let pivot_set: BTreeMap<usize, usize> = pivots
            .iter()
            .enumerate()
            .map(|(i, (v, _, _))| (*v, i))
            .collect();
        let free_vars: Vec<usize> = (0..lp.num_vars)
            .filter(|v| !pivot_set.contains_key(v))
            .collect();
        let free_index: BTreeMap<usize, usize> =
            free_vars.iter().enumerate().map(|(i, v)| (*v, i)).collect();

        let mut this = Presolved {
            num_vars: lp.num_vars,
            free_vars,
            free_index,
            pivots,
            pivot_set,
            static_rows: Vec::new(),
            static_constraints: lp.constraints.clone(),
            infeasible_equality,
        };
        let mut static_rows = Vec::new();
        for c in &lp.constraints {
            if c.op == ConstraintOp::Le {
                static_rows.push(this.substitute(&c.terms, &c.rhs));
            }
        }
        // Non-negativity of each eliminated variable: x_p >= 0 becomes
        // pexpr . x <= prhs.
        for (_, pexpr, prhs) in &this.pivots {
            let mut coeffs = vec![rat_zero(); this.free_vars.len()];
            for (fv, fa) in pexpr {
                coeffs[this.free_index[fv]] += fa;
            }
            static_rows.push((coeffs, prhs.clone()));
        }
        this.static_rows = static_rows;
        this
    }

    /// Rewrite a row over original variables into the free basis.
    fn substitute(&self, terms: &[(usize, Rat)], rhs: &Rat) -> (Vec<Rat>, Rat) {
        let mut coeffs = vec![rat_zero(); self.free_vars.len()];
        let mut out_rhs = rhs.clone();
        for (v, a) in terms {
            if a.is_zero() {
                continue;
            }
            match self.pivot_set.get(v) {
                Some(&pi) => {
                    let (_, pexpr, prhs) = &self.pivots[pi];
                    out_rhs -= a * prhs;
                    for (fv, fa) in pexpr {
                        coeffs[self.free_index[fv]] -= a * fa;
                    }
                }
                None => {
                    coeffs[self.free_index[v]] += a;
                }
            }
        }
        (coeffs, out_rhs)
    }

    fn reconstruct(&self, free_point: &[Rat]) -> Vec<Rat> {
        let mut full = vec![rat_zero(); self.num_vars];
        for (i, v) in self.free_vars.iter().enumerate() {
            full[*v] = free_point[i].clone();
        }
        for (v, rhs, expr) in self.pivots.iter().map(|(v, e, r)| (v, r, e)) {
            let mut value = rhs.clone();
            for (fv, fa) in expr {
                value -= fa * &free_point[self.free_index[fv]];
            }
            full[*v] = value;
        }
        full
    }

    /// Decide feasibility of the presolved system plus window-specific
    /// `extra` inequality rows.
    pub fn solve(
        &self,
        extra: &[LinearConstraint],
        backend: Backend,
        tolerance: &Rat,
    ) -> Result<Feasibility> {
        if self.infeasible_equality {
            return Ok(Feasibility::Infeasible { backend: Backend::Exact });
        }
        let mut rows = self.static_rows.clone();
        for c in extra {
            debug_assert_eq!(c.op, ConstraintOp::Le, "extra rows must be inequalities");
            rows.push(self.substitute(&c.terms, &c.rhs));
        }
        let num_free = self.free_vars.len();
        match backend {
            Backend::Float => match phase1::<f64>(&rows, num_free, 50_000)? {
                Phase1Outcome::Feasible(p) => {
                    let p_rat: Vec<Rat> = p.iter().map(|x| x.to_rat()).collect();
                    let witness = self.reconstruct(&p_rat);
                    let mut violation = violation_of(&self.static_constraints, &witness);
                    violation = violation.max(violation_of(extra, &witness));
                    if violation > *tolerance {
                        return Err(Error::NumericalFailure);
                    }
                    Ok(Feasibility::Feasible { witness, backend: Backend::Float })
                }
                Phase1Outcome::Infeasible { dual } => {
                    if self.verify_farkas(&rows, &dual) {
                        Ok(Feasibility::Infeasible { backend: Backend::Exact })
                    } else {
                        Ok(Feasibility::Infeasible { backend: Backend::Float })
                    }
                }
            },
            Backend::Exact => match phase1::<Rat>(&rows, num_free, 5_000_000)? {
                Phase1Outcome::Feasible(p) => {
                    let witness = self.reconstruct(&p);
                    debug_assert!(
                        violation_of(&self.static_constraints, &witness).is_zero(),
                        "exact witness violates a static constraint"
                    );
                    Ok(Feasibility::Feasible { witness, backend: Backend::Exact })
                }
                Phase1Outcome::Infeasible { .. } => {
                    Ok(Feasibility::Infeasible { backend: Backend::Exact })
                }
            },
        }
    }

    /// Float first; a float `Infeasible` without a verified ray escalates to
    /// the exact backend.
    pub fn solve_trusted(&self, extra: &[LinearConstraint], tolerance: &Rat) -> Result<Feasibility> {
        match self.solve(extra, Backend::Float, tolerance) {
            Ok(Feasibility::Infeasible { backend: Backend::Float })
            | Err(Error::NumericalFailure) => self.solve(extra, Backend::Exact, tolerance),
            other => other,
        }
    }

    /// Exact Farkas check: the ray must combine the rows into an
    /// inconsistency `0 <= c . free <= rhs < 0` with `c >= 0` impossible for
    /// `free >= 0`, i.e. `sum y_i row_i >= 0` componentwise and
    /// `sum y_i rhs_i < 0` with `y >= 0`.
    fn verify_farkas(&self, rows: &[(Vec<Rat>, Rat)], dual: &[f64]) -> bool {
        if dual.len() != rows.len() {
            return false;
        }
        let y: Vec<Rat> = dual
            .iter()
            .map(|v| {
                if v.is_finite() && *v > F64_TOL {
                    Rat::from_float(*v).unwrap_or_else(rat_zero)
                } else {
                    rat_zero()
                }
            })
            .collect();
        let mut combined = vec![rat_zero(); self.free_vars.len()];
        let mut rhs = rat_zero();
        for (yi, (coeffs, b)) in y.iter().zip(rows) {
            if yi.is_zero() {
                continue;
            }
            for (j, a) in coeffs.iter().enumerate() {
                if !a.is_zero() {
                    combined[j] += yi * a;
                }
            }
            rhs += yi * b;
        }
        rhs.is_negative() && combined.iter().all(|c| !c.is_negative())
    }
}

enum Phase1Outcome<T> {
    Feasible(Vec<T>),
    /// Non-negative multipliers over the rows extracted from the optimal
    /// phase-1 reduced costs at the slack columns.
    Infeasible { dual: Vec<f64> },
}

/// Phase-1 simplex for `A x <= b, x >= 0` with Bland's rule.
fn phase1<T: LpScalar>(
    rows: &[(Vec<Rat>, Rat)],
    num_vars: usize,
    max_iterations: usize,
) -> Result<Phase1Outcome<T>> {
    let m = rows.len();
    let num_artificial = rows.iter().filter(|(_, b)| b < &rat_zero()).count();
    let total_cols = num_vars + m + num_artificial; // structural + slack + artificial
    let mut tableau: Vec<Vec<T>> = Vec::with_capacity(m);
    let mut basis: Vec<usize> = Vec::with_capacity(m);
    let mut next_artificial = num_vars + m;
    let one = || T::from_rat(&Rat::from_integer(1.into()));

    for (i, (coeffs, rhs)) in rows.iter().enumerate() {
        let negate = rhs < &rat_zero();
        let mut row: Vec<T> = vec![T::zero(); total_cols + 1];
        for (j, a) in coeffs.iter().enumerate() {
            let val = T::from_rat(a);
            row[j] = if negate { T::zero().sub(&val) } else { val };
        }
        let slack = num_vars + i;
        row[slack] = if negate { T::zero().sub(&one()) } else { one() };
        let b = T::from_rat(rhs);
        row[total_cols] = if negate { T::zero().sub(&b) } else { b };
        if negate {
            let art = next_artificial;
            next_artificial += 1;
            row[art] = one();
            basis.push(art);
        } else {
            basis.push(slack);
        }
        tableau.push(row);
    }

    // Objective: minimize the sum of artificials. Maintain the reduced-cost
    // row z[j] = c[j] - sum over artificial-basic rows of tableau[i][j].
    let is_artificial = |col: usize| col >= num_vars + m;
    let mut z: Vec<T> = vec![T::zero(); total_cols + 1];
    for j in 0..=total_cols {
        let mut acc = if j < total_cols && is_artificial(j) {
            one()
        } else {
            T::zero()
        };
        for i in 0..m {
            if is_artificial(basis[i]) {
                acc = acc.sub(&tableau[i][j]);
            }
        }
        z[j] = acc;
    }

    for _ in 0..max_iterations {
        // Bland: lowest-index column with negative reduced cost.
        let entering = (0..total_cols).find(|&j| z[j].is_neg());
        let Some(enter) = entering else {
            // Optimal; feasible iff the objective value -z[rhs] is zero.
            let obj = T::zero().sub(&z[total_cols]);
            if obj.is_pos() {
                // The optimal reduced cost at slack column i equals the
                // Farkas multiplier of row i for either row orientation
                // (the slack's sign already carries the normalization).
                let dual: Vec<f64> = (0..m)
                    .map(|i| rat_to_f64(&z[num_vars + i].to_rat()))
                    .collect();
                return Ok(Phase1Outcome::Infeasible { dual });
            }
            let mut point = vec![T::zero(); num_vars];
            for i in 0..m {
                if basis[i] < num_vars {
                    point[basis[i]] = tableau[i][total_cols].clone();
                }
            }
            return Ok(Phase1Outcome::Feasible(point));
        };
        // Ratio test with Bland tie-breaking on the basis variable index.
        let mut best: Option<(usize, T)> = None;
        for i in 0..m {
            if !tableau[i][enter].is_pos() {
                continue;
            }
            let ratio = tableau[i][total_cols].div(&tableau[i][enter]);
            match &best {
                None => best = Some((i, ratio)),
                Some((bi, br)) => {
                    if ratio < *br || (!(ratio > *br) && basis[i] < basis[*bi]) {
                        best = Some((i, ratio));
                    }
                }
            }
        }
        let Some((leave_row, _)) = best else {
            // Phase-1 objective is bounded below by zero, so an unbounded
            // direction signals numerical trouble.
            return Err(Error::NumericalFailure);
        };
        // Pivot.
        let pivot = tableau[leave_row][enter].clone();
        for j in 0..=total_cols {
            tableau[leave_row][j] = tableau[leave_row][j].div(&pivot);
        }
        for i in 0..m {
            if i == leave_row {
                continue;
            }
            let factor = tableau[i][enter].clone();
            if factor.is_pos() || factor.is_neg() {
                for j in 0..=total_cols {
                    let delta = factor.mul(&tableau[leave_row][j]);
                    tableau[i][j] = tableau[i][j].sub(&delta);
                }
            }
        }
        let zfactor = z[enter].clone();
        if zfactor.is_pos() || zfactor.is_neg() {
            for j in 0..=total_cols {
                let delta = zfactor.mul(&tableau[leave_row][j]);
                z[j] = z[j].sub(&delta);
            }
        }
        basis[leave_row] = enter;
    }
    Err(Error::NumericalFailure)
}

/// Decide feasibility of a standalone instance with the requested backend.
pub fn solve_feasibility(lp: &LpInstance, backend: Backend, tolerance: &Rat) -> Result<Feasibility> {
    Presolved::new(lp).solve(&[], backend, tolerance)
}

/// Float first, exact arbitration of unproven infeasibility.
pub fn solve_trusted(lp: &LpInstance, tolerance: &Rat) -> Result<Feasibility> {
    Presolved::new(lp).solve_trusted(&[], tolerance)
}

pub fn default_tolerance() -> Rat {
    Rat::new(1.into(), 1_000_000_000.into())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::rat;

    fn le(terms: &[(usize, Rat)], rhs: Rat) -> LinearConstraint {
        LinearConstraint {
            terms: terms.to_vec(),
            op: ConstraintOp::Le,
            rhs,
            label: String::new(),
        }
    }

    fn eq(terms: &[(usize, Rat)], rhs: Rat) -> LinearConstraint {
        LinearConstraint {
            terms: terms.to_vec(),
            op: ConstraintOp::Eq,
            rhs,
            label: String::new(),
        }
    }

    #[test]
    fn simple_feasible_system() {
        // z = 1, z1 + z2 = z, z2 <= 0.04 z, all >= 0. Vars: z=0, z1=1, z2=2.
        let lp = LpInstance {
            num_vars: 3,
            constraints: vec![
                eq(&[(0, rat(1, 1))], rat(1, 1)),
                eq(&[(1, rat(1, 1)), (2, rat(1, 1)), (0, rat(-1, 1))], rat(0, 1)),
                le(&[(2, rat(1, 1)), (0, rat(-1, 25))], rat(0, 1)),
            ],
        };
        for backend in [Backend::Float, Backend::Exact] {
            let f = solve_feasibility(&lp, backend, &default_tolerance()).unwrap();
            match f {
                Feasibility::Feasible { witness, .. } => {
                    assert!(lp.max_violation(&witness) <= default_tolerance());
                }
                _ => panic!("expected feasible"),
            }
        }
    }

    #[test]
    fn simple_infeasible_system() {
        // z = 1 and z <= 1/2.
        let lp = LpInstance {
            num_vars: 1,
            constraints: vec![
                eq(&[(0, rat(1, 1))], rat(1, 1)),
                le(&[(0, rat(1, 1))], rat(1, 2)),
            ],
        };
        let f = solve_feasibility(&lp, Backend::Exact, &default_tolerance()).unwrap();
        assert!(!f.is_feasible());
        let f = solve_feasibility(&lp, Backend::Float, &default_tolerance()).unwrap();
        assert!(!f.is_feasible());
    }

    #[test]
    fn negative_rhs_requires_artificial() {
        // -x <= -3 (x >= 3) with x <= 5: feasible; with x <= 2: infeasible.
        let lp = LpInstance {
            num_vars: 1,
            constraints: vec![
                le(&[(0, rat(-1, 1))], rat(-3, 1)),
                le(&[(0, rat(1, 1))], rat(5, 1)),
            ],
        };
        let f = solve_trusted(&lp, &default_tolerance()).unwrap();
        assert!(f.is_feasible());

        let lp = LpInstance {
            num_vars: 1,
            constraints: vec![
                le(&[(0, rat(-1, 1))], rat(-3, 1)),
                le(&[(0, rat(1, 1))], rat(2, 1)),
            ],
        };
        let f = solve_trusted(&lp, &default_tolerance()).unwrap();
        assert!(!f.is_feasible());
        assert!(matches!(f, Feasibility::Infeasible { backend: Backend::Exact }));
    }

    #[test]
    fn float_infeasibility_carries_verified_ray() {
        // x + y >= 3, x <= 1, y <= 1: infeasible; the float backend alone
        // should produce an exactly verified Farkas certificate.
        let lp = LpInstance {
            num_vars: 2,
            constraints: vec![
                le(&[(0, rat(-1, 1)), (1, rat(-1, 1))], rat(-3, 1)),
                le(&[(0, rat(1, 1))], rat(1, 1)),
                le(&[(1, rat(1, 1))], rat(1, 1)),
            ],
        };
        let f = solve_feasibility(&lp, Backend::Float, &default_tolerance()).unwrap();
        assert!(matches!(f, Feasibility::Infeasible { backend: Backend::Exact }));
    }

    #[test]
    fn inconsistent_equalities_detected_in_presolve() {
        // x + y = 1, x + y = 2.
        let lp = LpInstance {
            num_vars: 2,
            constraints: vec![
                eq(&[(0, rat(1, 1)), (1, rat(1, 1))], rat(1, 1)),
                eq(&[(0, rat(1, 1)), (1, rat(1, 1))], rat(2, 1)),
            ],
        };
        let f = solve_feasibility(&lp, Backend::Float, &default_tolerance()).unwrap();
        assert!(matches!(f, Feasibility::Infeasible { backend: Backend::Exact }));
    }

    #[test]
    fn chained_equalities_substitute_correctly() {
        // a = 1; b + c = a; d = b; d <= 1/3; c <= 3/4:
        // feasible (b in [1/4, 1/3]).
        let lp = LpInstance {
            num_vars: 4,
            constraints: vec![
                eq(&[(0, rat(1, 1))], rat(1, 1)),
                eq(&[(1, rat(1, 1)), (2, rat(1, 1)), (0, rat(-1, 1))], rat(0, 1)),
                eq(&[(3, rat(1, 1)), (1, rat(-1, 1))], rat(0, 1)),
                le(&[(3, rat(1, 1))], rat(1, 3)),
                le(&[(2, rat(1, 1))], rat(3, 4)),
            ],
        };
        let f = solve_trusted(&lp, &default_tolerance()).unwrap();
        let Feasibility::Feasible { witness, .. } = f else {
            panic!("expected feasible");
        };
        assert!(lp.max_violation(&witness) <= default_tolerance());
        assert!(witness[1] >= rat(1, 4) - default_tolerance());
        assert!(witness[1] <= rat(1, 3) + default_tolerance());
    }

    #[test]
    fn cached_presolve_supports_per_window_rows() {
        // Static: a = 1, b + c = a. Window rows bound b from both sides.
        let static_lp = LpInstance {
            num_vars: 3,
            constraints: vec![
                eq(&[(0, rat(1, 1))], rat(1, 1)),
                eq(&[(1, rat(1, 1)), (2, rat(1, 1)), (0, rat(-1, 1))], rat(0, 1)),
            ],
        };
        let cache = Presolved::new(&static_lp);
        let feasible_window = vec![
            le(&[(1, rat(-1, 1))], rat(-1, 4)), // b >= 1/4
            le(&[(1, rat(1, 1))], rat(1, 2)),   // b <= 1/2
        ];
        assert!(cache
            .solve_trusted(&feasible_window, &default_tolerance())
            .unwrap()
            .is_feasible());
        let infeasible_window = vec![
            le(&[(1, rat(-1, 1))], rat(-3, 2)), // b >= 3/2 > a
        ];
        let f = cache
            .solve_trusted(&infeasible_window, &default_tolerance())
            .unwrap();
        assert!(matches!(f, Feasibility::Infeasible { backend: Backend::Exact }));
    }

    #[test]
    fn empty_constraint_rows() {
        let lp = LpInstance {
            num_vars: 1,
            constraints: vec![le(&[], rat(-1, 1))],
        };
        let f = solve_trusted(&lp, &default_tolerance()).unwrap();
        assert!(!f.is_feasible());

        let lp = LpInstance {
            num_vars: 1,
            constraints: vec![le(&[], rat(1, 1))],
        };
        assert!(solve_trusted(&lp, &default_tolerance()).unwrap().is_feasible());
    }
}
