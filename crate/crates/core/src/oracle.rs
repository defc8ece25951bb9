//! Exact ground truth: brute-force satisfying-assignment counting, exact
//! conditional marginals, and exact uniform sampling, all in exact integer
//! and rational arithmetic.
//!
//! Enumeration is per-component exhaustive search with early clause-violation
//! pruning; there is deliberately no solver sophistication here. Exceeding
//! the enumeration budget is an error, never a silently approximate answer.

use num_bigint::BigUint;
use num_traits::{One, Zero};
use rand::Rng;

use crate::cnf::{
    connected_components, simplify, CnfFormula, PartialAssignment, SimplifyStatus, TotalAssignment,
};
use crate::numeric::{pow2, uniform_below, ExactCount, Probability};
use crate::{Error, Result};

/// Enumeration budget: maximum variables per connected component.
#[derive(Clone, Copy, Debug)]
pub struct OracleBudget {
    pub max_component_vars: usize,
}

impl Default for OracleBudget {
    fn default() -> Self {
        OracleBudget {
            max_component_vars: 30,
        }
    }
}

impl OracleBudget {
    pub fn new(max_component_vars: usize) -> Self {
        OracleBudget { max_component_vars }
    }
}

/// A source of exact conditional marginals of the uniform distribution on
/// satisfying assignments: the probability that `var = T` in a uniformly
/// random satisfying assignment consistent with `assignment`.
pub trait MarginalOracle {
    fn marginal(
        &mut self,
        phi: &CnfFormula,
        assignment: &PartialAssignment,
        var: u32,
    ) -> Result<Probability>;
}

/// The brute-force conditional distribution oracle.
#[derive(Clone, Copy, Debug, Default)]
pub struct ExactOracle {
    pub budget: OracleBudget,
}

impl ExactOracle {
    pub fn new(budget: OracleBudget) -> Self {
        ExactOracle { budget }
    }
}

impl MarginalOracle for ExactOracle {
    fn marginal(
        &mut self,
        phi: &CnfFormula,
        assignment: &PartialAssignment,
        var: u32,
    ) -> Result<Probability> {
        exact_marginal(phi, assignment, var, &self.budget)
    }
}

/// Incremental clause bookkeeping shared by the counter and the enumerator.
struct EvalState {
    /// Per variable, the clauses it appears in with the literal's sign.
    occurrences: Vec<Vec<(usize, bool)>>,
    width: Vec<usize>,
    true_count: Vec<usize>,
    false_count: Vec<usize>,
    /// Clauses with no true literal yet.
    unsatisfied: usize,
    /// Clauses with every literal false.
    falsified: usize,
}

impl EvalState {
    fn new(phi: &CnfFormula) -> Self {
        let n = phi.num_vars() as usize;
        let m = phi.num_clauses();
        let mut occurrences = vec![Vec::new(); n + 1];
        let mut width = vec![0usize; m];
        let mut falsified = 0;
        for (ci, clause) in phi.clauses().iter().enumerate() {
            width[ci] = clause.width();
            if clause.is_empty() {
                falsified += 1;
            }
            for lit in clause.literals() {
                occurrences[lit.var as usize].push((ci, lit.negated));
            }
        }
        EvalState {
            occurrences,
            width,
            true_count: vec![0; m],
            false_count: vec![0; m],
            unsatisfied: m,
            falsified,
        }
    }

    fn assign(&mut self, var: u32, value: bool) {
        for i in 0..self.occurrences[var as usize].len() {
            let (ci, negated) = self.occurrences[var as usize][i];
            if value != negated {
                self.true_count[ci] += 1;
                if self.true_count[ci] == 1 {
                    self.unsatisfied -= 1;
                }
            } else {
                self.false_count[ci] += 1;
                if self.false_count[ci] == self.width[ci] && self.true_count[ci] == 0 {
                    self.falsified += 1;
                }
            }
        }
    }

    fn undo(&mut self, var: u32, value: bool) {
        for i in 0..self.occurrences[var as usize].len() {
            let (ci, negated) = self.occurrences[var as usize][i];
            if value != negated {
                if self.true_count[ci] == 1 {
                    self.unsatisfied += 1;
                }
                self.true_count[ci] -= 1;
            } else {
                if self.false_count[ci] == self.width[ci] && self.true_count[ci] == 0 {
                    self.falsified -= 1;
                }
                self.false_count[ci] -= 1;
            }
        }
    }

    fn dead(&self) -> bool {
        self.falsified > 0
    }

    fn all_satisfied(&self) -> bool {
        self.unsatisfied == 0
    }
}

fn count_rec(state: &mut EvalState, next_var: u32, num_vars: u32) -> BigUint {
    if state.dead() {
        return BigUint::zero();
    }
    if state.all_satisfied() {
        return pow2((num_vars + 1 - next_var) as usize);
    }
    if next_var > num_vars {
        return BigUint::zero();
    }
    let mut total = BigUint::zero();
    for value in [false, true] {
        state.assign(next_var, value);
        total += count_rec(state, next_var + 1, num_vars);
        state.undo(next_var, value);
    }
    total
}

/// Number of total assignments to all `n` variables satisfying every clause.
/// Components are counted independently and multiplied; variables in no
/// clause contribute a factor of 2 each.
pub fn count_sat(phi: &CnfFormula, budget: &OracleBudget) -> Result<ExactCount> {
    let decomposition = connected_components(phi);
    let mut total = pow2(decomposition.num_free());
    for comp in &decomposition.components {
        let vars = comp.formula.num_vars() as usize;
        if vars > budget.max_component_vars {
            return Err(Error::BudgetExceeded {
                vars,
                cap: budget.max_component_vars,
            });
        }
        let mut state = EvalState::new(&comp.formula);
        let c = count_rec(&mut state, 1, comp.formula.num_vars());
        if c.is_zero() {
            return Ok(ExactCount::zero());
        }
        total *= c;
    }
    Ok(ExactCount(total))
}

/// Number of satisfying assignments consistent with a partial assignment.
pub fn count_consistent(
    phi: &CnfFormula,
    assignment: &PartialAssignment,
    budget: &OracleBudget,
) -> Result<ExactCount> {
    assert!(
        assignment.within(phi.num_vars()),
        "assignment mentions variables outside the formula"
    );
    let (simplified, status) = simplify(phi, assignment);
    if status == SimplifyStatus::Falsified {
        return Ok(ExactCount::zero());
    }
    let raw = count_sat(&simplified, budget)?;
    // Set variables occur in no clause of the simplified formula, so the raw
    // count carries an exact factor of 2 per set variable.
    let shifted = raw.value() >> assignment.len();
    debug_assert_eq!(&(&shifted << assignment.len()), raw.value());
    Ok(ExactCount(shifted))
}

/// `Pr[var = T]` in a uniformly random satisfying assignment consistent with
/// `assignment`, as an exact rational.
pub fn exact_marginal(
    phi: &CnfFormula,
    assignment: &PartialAssignment,
    var: u32,
    budget: &OracleBudget,
) -> Result<Probability> {
    if assignment.is_set(var) {
        return Err(Error::AlreadySet { var });
    }
    let denom = count_consistent(phi, assignment, budget)?;
    if denom.is_zero() {
        return Err(Error::ConditionOnNull);
    }
    let numer = count_consistent(phi, &assignment.clone().with(var, true), budget)?;
    Probability::from_counts(numer.value(), denom.value())
        .map_err(|e| Error::InternalConsistency(format!("marginal ratio: {e}")))
}

/// Lazy iterator over satisfying assignments in lexicographic order of the
/// assignment bit-vector (variable 1 most significant, F before T).
pub struct SatIter<'a> {
    phi: &'a CnfFormula,
    state: EvalState,
    path: Vec<(bool, bool)>, // (value, tried_other)
    descending: bool,
    done: bool,
}

impl<'a> SatIter<'a> {
    fn new(phi: &'a CnfFormula) -> Self {
        SatIter {
            phi,
            state: EvalState::new(phi),
            path: Vec::new(),
            descending: true,
            done: false,
        }
    }
}

impl Iterator for SatIter<'_> {
    type Item = TotalAssignment;

    fn next(&mut self) -> Option<TotalAssignment> {
        if self.done {
            return None;
        }
        let n = self.phi.num_vars() as usize;
        loop {
            if self.descending {
                if self.state.dead() {
                    self.descending = false;
                    continue;
                }
                if self.path.len() == n {
                    debug_assert!(self.state.all_satisfied());
                    let assignment =
                        TotalAssignment::new(self.path.iter().map(|(v, _)| *v).collect());
                    self.descending = false;
                    return Some(assignment);
                }
                let var = self.path.len() as u32 + 1;
                self.state.assign(var, false);
                self.path.push((false, false));
            } else {
                // Backtrack to the deepest frame with an untried value.
                let Some(&(value, tried_other)) = self.path.last() else {
                    self.done = true;
                    return None;
                };
                let var = self.path.len() as u32;
                self.state.undo(var, value);
                if tried_other {
                    self.path.pop();
                } else {
                    *self.path.last_mut().unwrap() = (true, true);
                    self.state.assign(var, true);
                    self.descending = true;
                }
            }
        }
    }
}

/// Enumerate satisfying assignments. The budget applies to the whole
/// variable range since global lexicographic order admits no splitting.
pub fn enumerate_sat<'a>(phi: &'a CnfFormula, budget: &OracleBudget) -> Result<SatIter<'a>> {
    let vars = phi.num_vars() as usize;
    if vars > budget.max_component_vars {
        return Err(Error::BudgetExceeded {
            vars,
            cap: budget.max_component_vars,
        });
    }
    Ok(SatIter::new(phi))
}

/// The `index`-th (0-based) satisfying assignment consistent with `base`, in
/// lexicographic order over the unset variables.
fn sat_by_index(
    phi: &CnfFormula,
    base: &PartialAssignment,
    mut index: BigUint,
    budget: &OracleBudget,
) -> Result<TotalAssignment> {
    let mut current = base.clone();
    for var in 1..=phi.num_vars() {
        if current.is_set(var) {
            continue;
        }
        let with_false = count_consistent(phi, &current.clone().with(var, false), budget)?;
        if index < *with_false.value() {
            current.set(var, false);
        } else {
            index -= with_false.value();
            current.set(var, true);
        }
    }
    let values = (1..=phi.num_vars())
        .map(|v| current.get(v).expect("all variables set"))
        .collect();
    Ok(TotalAssignment::new(values))
}

/// Uniform draw from the satisfying assignments: a uniform big-integer index
/// into the enumeration order.
pub fn exact_sample<R: Rng>(
    phi: &CnfFormula,
    budget: &OracleBudget,
    rng: &mut R,
) -> Result<TotalAssignment> {
    exact_sample_consistent(phi, &PartialAssignment::new(), budget, rng)
}

/// Uniform draw from the satisfying assignments consistent with `partial`.
pub fn exact_sample_consistent<R: Rng>(
    phi: &CnfFormula,
    partial: &PartialAssignment,
    budget: &OracleBudget,
    rng: &mut R,
) -> Result<TotalAssignment> {
    let total = count_consistent(phi, partial, budget)?;
    if total.is_zero() {
        return if partial.is_empty() {
            Err(Error::Unsatisfiable)
        } else {
            Err(Error::ConditionOnNull)
        };
    }
    let index = if total.value() == &BigUint::one() {
        BigUint::zero()
    } else {
        uniform_below(rng, total.value())
    };
    let assignment = sat_by_index(phi, partial, index, budget)?;
    debug_assert!(phi.satisfied_by(&assignment));
    Ok(assignment)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cnf::{Clause, Literal};
    use crate::gen::{gen_cnf, GenParams};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap;

    fn formula(n: u32, clauses: &[&[i64]]) -> CnfFormula {
        CnfFormula::new(
            n,
            clauses
                .iter()
                .map(|c| {
                    Clause::new(c.iter().map(|&x| Literal::from_dimacs(x).unwrap()).collect())
                        .unwrap()
                })
                .collect(),
        )
        .unwrap()
    }

    /// Independent full-enumeration count: loops over all 2^n bit patterns
    /// and evaluates every clause directly. Written before and kept separate
    /// from the component-splitting implementation it checks.
    pub(crate) fn naive_count(phi: &CnfFormula) -> u64 {
        let n = phi.num_vars();
        assert!(n <= 24, "naive counter is for small n only");
        let mut count = 0u64;
        for bits in 0u64..(1u64 << n) {
            let assignment =
                TotalAssignment::new((0..n).map(|i| (bits >> i) & 1 == 1).collect());
            if phi.satisfied_by(&assignment) {
                count += 1;
            }
        }
        count
    }

    fn budget() -> OracleBudget {
        OracleBudget::default()
    }

    #[test]
    fn count_examples() {
        assert_eq!(
            count_sat(&CnfFormula::empty(3), &budget()).unwrap().to_string(),
            "8"
        );
        assert_eq!(
            count_sat(&formula(2, &[&[1, 2]]), &budget()).unwrap().to_string(),
            "3"
        );
        assert_eq!(
            count_sat(&formula(1, &[&[1], &[-1]]), &budget())
                .unwrap()
                .to_string(),
            "0"
        );
    }

    #[test]
    fn budget_is_an_error_not_a_wrong_answer() {
        let phi = formula(3, &[&[1, 2, 3]]);
        let err = count_sat(&phi, &OracleBudget::new(2)).unwrap_err();
        assert!(matches!(err, Error::BudgetExceeded { vars: 3, cap: 2 }));
    }

    #[test]
    fn count_matches_naive_enumeration_on_random_instances() {
        for seed in 0..20 {
            let phi = gen_cnf(&GenParams {
                n: 10,
                k_min: 2,
                k_max: 4,
                d: 3,
                monotone: seed % 2 == 0,
                m: Some(6),
                seed,
            })
            .unwrap();
            let fast = count_sat(&phi, &budget()).unwrap();
            assert_eq!(fast.to_string(), naive_count(&phi).to_string());
        }
    }

    #[test]
    fn marginal_examples() {
        let phi = formula(2, &[&[1, 2]]);
        let p = exact_marginal(&phi, &PartialAssignment::new(), 1, &budget()).unwrap();
        assert_eq!(p.to_string(), "2/3");

        let a = PartialAssignment::from_pairs([(2, false)]);
        let p = exact_marginal(&phi, &a, 1, &budget()).unwrap();
        assert!(p.is_one());
    }

    #[test]
    fn marginal_matches_naive_enumeration() {
        let phi = gen_cnf(&GenParams {
            n: 10,
            k_min: 3,
            k_max: 3,
            d: 3,
            monotone: false,
            m: Some(7),
            seed: 11,
        })
        .unwrap();
        // Independent recomputation over all 1024 assignments.
        let mut with_y = 0u64;
        let mut total = 0u64;
        let y = 4u32;
        for bits in 0u64..1024 {
            let assignment =
                TotalAssignment::new((0..10).map(|i| (bits >> i) & 1 == 1).collect());
            if phi.satisfied_by(&assignment) {
                total += 1;
                if assignment.get(y) {
                    with_y += 1;
                }
            }
        }
        let p = exact_marginal(&phi, &PartialAssignment::new(), y, &budget()).unwrap();
        assert_eq!(
            p.as_rat(),
            &crate::numeric::Rat::new(with_y.into(), total.into())
        );
    }

    #[test]
    fn marginal_errors() {
        let phi = formula(1, &[&[1], &[-1]]);
        assert!(matches!(
            exact_marginal(&phi, &PartialAssignment::new(), 1, &budget()),
            Err(Error::ConditionOnNull)
        ));
        let phi = formula(2, &[&[1, 2]]);
        let a = PartialAssignment::from_pairs([(1, true)]);
        assert!(matches!(
            exact_marginal(&phi, &a, 1, &budget()),
            Err(Error::AlreadySet { var: 1 })
        ));
    }

    #[test]
    fn marginal_complement_sums_to_one() {
        let phi = formula(4, &[&[1, 2, 3], &[-2, 4]]);
        let a = PartialAssignment::from_pairs([(3, false)]);
        let p_true = exact_marginal(&phi, &a, 2, &budget()).unwrap();
        let n_false = count_consistent(&phi, &a.clone().with(2, false), &budget()).unwrap();
        let n_all = count_consistent(&phi, &a, &budget()).unwrap();
        let p_false = Probability::from_counts(n_false.value(), n_all.value()).unwrap();
        assert!( (p_true.as_rat() + p_false.as_rat()).eq(&crate::numeric::rat_one()) );
    }

    #[test]
    fn enumeration_examples() {
        let phi = formula(2, &[&[1, 2]]);
        let got: Vec<String> = enumerate_sat(&phi, &budget())
            .unwrap()
            .map(|a| a.bits())
            .collect();
        assert_eq!(got, vec!["FT", "TF", "TT"]);

        let phi = formula(1, &[&[1], &[-1]]);
        assert_eq!(enumerate_sat(&phi, &budget()).unwrap().count(), 0);
    }

    #[test]
    fn enumeration_length_equals_count() {
        let phi = gen_cnf(&GenParams {
            n: 12,
            k_min: 2,
            k_max: 3,
            d: 3,
            monotone: false,
            m: Some(8),
            seed: 3,
        })
        .unwrap();
        let len = enumerate_sat(&phi, &budget()).unwrap().count();
        assert_eq!(len.to_string(), count_sat(&phi, &budget()).unwrap().to_string());
    }

    #[test]
    fn partition_identity_over_random_instances() {
        for seed in 0..10 {
            let phi = gen_cnf(&GenParams {
                n: 9,
                k_min: 2,
                k_max: 4,
                d: 3,
                monotone: false,
                m: Some(5),
                seed: 100 + seed,
            })
            .unwrap();
            let total = count_consistent(&phi, &PartialAssignment::new(), &budget()).unwrap();
            for y in 1..=phi.num_vars() {
                let t = count_consistent(
                    &phi,
                    &PartialAssignment::new().with(y, true),
                    &budget(),
                )
                .unwrap();
                let f = count_consistent(
                    &phi,
                    &PartialAssignment::new().with(y, false),
                    &budget(),
                )
                .unwrap();
                assert_eq!(t.value() + f.value(), *total.value());
            }
        }
    }

    #[test]
    fn sample_forced_and_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let phi = formula(2, &[&[1], &[2]]);
        for _ in 0..20 {
            let a = exact_sample(&phi, &budget(), &mut rng).unwrap();
            assert_eq!(a.bits(), "TT");
        }

        let phi = CnfFormula::empty(1);
        let mut trues = 0;
        for _ in 0..10_000 {
            if exact_sample(&phi, &budget(), &mut rng).unwrap().get(1) {
                trues += 1;
            }
        }
        let freq = trues as f64 / 10_000.0;
        assert!((freq - 0.5).abs() < 0.02, "freq {freq}");
    }

    #[test]
    fn sample_frequencies_match_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let phi = formula(2, &[&[1, 2]]);
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        let draws = 10_000;
        for _ in 0..draws {
            let a = exact_sample(&phi, &budget(), &mut rng).unwrap();
            *counts.entry(a.bits()).or_default() += 1;
        }
        assert_eq!(counts.len(), 3);
        for (_, c) in counts {
            let freq = c as f64 / draws as f64;
            assert!((freq - 1.0 / 3.0).abs() < 0.02, "freq {freq}");
        }
    }

    #[test]
    fn sample_consistent_respects_partial() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let phi = formula(3, &[&[1, 2], &[2, 3]]);
        let partial = PartialAssignment::from_pairs([(2, false)]);
        for _ in 0..50 {
            let a = exact_sample_consistent(&phi, &partial, &budget(), &mut rng).unwrap();
            assert!(!a.get(2));
            assert!(phi.satisfied_by(&a));
            assert!(a.get(1) && a.get(3));
        }
    }

    #[test]
    fn unsatisfiable_sample_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let phi = formula(1, &[&[1], &[-1]]);
        assert!(matches!(
            exact_sample(&phi, &budget(), &mut rng),
            Err(Error::Unsatisfiable)
        ));
    }
}
