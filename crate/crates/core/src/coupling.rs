//! The coupling procedure: grow paired partial assignments A1 (x = T) and
//! A2 (x = F) until the conditioned formula factorizes into an inner part
//! (where the two sides may differ) and a shared outer part.
//!
//! Also: factorization verification, type-1/type-2 error attribution, 3-tree
//! extraction over the inner variable graph, and decision-tree sampling.

use rand::Rng;
use std::collections::{BTreeMap, BTreeSet};

use crate::cnf::{
    simplify, Clause, CnfFormula, Marking, PartialAssignment, TotalAssignment, VariableGraph,
};
use crate::numeric::{bernoulli, pick_weighted, Probability, Rat};
use crate::oracle::MarginalOracle;
use crate::{Error, Result};

/// Which of the two coupled partial assignments a value belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    A1,
    A2,
}

/// The mutable state of the coupling procedure: remaining clauses, the
/// inner/outer variable partition, variables set in both assignments, and
/// the clause currently being processed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CouplingState {
    remaining: BTreeSet<usize>,
    v_inner: BTreeSet<u32>,
    set_vars: BTreeMap<u32, (bool, bool)>,
    current: Option<usize>,
    num_vars: u32,
    root_var: u32,
}

/// One step of the coupling transcript.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TraceEvent {
    Selected { clause: usize },
    Sampled { clause: usize, var: u32, v1: bool, v2: bool },
    CaseOne { clause: usize, moved: Vec<u32> },
    CaseTwo { clause: usize, moved: Vec<u32> },
}

/// Result of advancing the deterministic transition function.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NextStep {
    /// The next variable to be sampled (lexicographically first unset marked
    /// variable of the current clause).
    SetVar { var: u32 },
    /// No remaining clause straddles the inner/outer partition.
    Terminated,
    /// `|V_I|` reached the stopping threshold.
    Truncated,
}

impl CouplingState {
    /// The root state: only `x` is set, with A1(x) = T and A2(x) = F.
    pub fn root(phi: &CnfFormula, x: u32) -> Self {
        assert!((1..=phi.num_vars()).contains(&x), "root variable out of range");
        CouplingState {
            remaining: (0..phi.num_clauses()).collect(),
            v_inner: BTreeSet::from([x]),
            set_vars: BTreeMap::from([(x, (true, false))]),
            current: None,
            num_vars: phi.num_vars(),
            root_var: x,
        }
    }

    pub fn root_var(&self) -> u32 {
        self.root_var
    }

    pub fn v_inner(&self) -> &BTreeSet<u32> {
        &self.v_inner
    }

    /// The outer side is the complement of the inner side.
    pub fn v_outer(&self) -> BTreeSet<u32> {
        (1..=self.num_vars)
            .filter(|v| !self.v_inner.contains(v))
            .collect()
    }

    pub fn remaining(&self) -> &BTreeSet<usize> {
        &self.remaining
    }

    pub fn current_clause(&self) -> Option<usize> {
        self.current
    }

    pub fn set_vars(&self) -> &BTreeMap<u32, (bool, bool)> {
        &self.set_vars
    }

    pub fn is_set(&self, var: u32) -> bool {
        self.set_vars.contains_key(&var)
    }

    /// Record the coupled values chosen for `var`.
    pub fn set_var(&mut self, var: u32, v1: bool, v2: bool) {
        debug_assert!(!self.is_set(var));
        self.set_vars.insert(var, (v1, v2));
    }

    pub fn side(&self, side: Side) -> PartialAssignment {
        PartialAssignment::from_pairs(self.set_vars.iter().map(|(v, (a, b))| {
            (
                *v,
                match side {
                    Side::A1 => *a,
                    Side::A2 => *b,
                },
            )
        }))
    }

    pub fn a1(&self) -> PartialAssignment {
        self.side(Side::A1)
    }

    pub fn a2(&self) -> PartialAssignment {
        self.side(Side::A2)
    }

    fn straddles(&self, phi: &CnfFormula, clause: usize) -> bool {
        let mut inner = false;
        let mut outer = false;
        for var in phi.clause(clause).vars() {
            if self.v_inner.contains(&var) {
                inner = true;
            } else {
                outer = true;
            }
        }
        inner && outer
    }

    /// Satisfaction against set variables only; unset variables cannot
    /// satisfy a clause.
    fn satisfied_on_side(&self, clause: &Clause, side: Side) -> bool {
        clause.literals().iter().any(|lit| {
            self.set_vars.get(&lit.var).is_some_and(|(a, b)| {
                lit.eval(match side {
                    Side::A1 => *a,
                    Side::A2 => *b,
                })
            })
        })
    }

    /// Apply deterministic transitions until a variable is about to be set,
    /// the coupling terminates, or the inner side reaches `tau` variables.
    /// The truncation check runs after each bookkeeping step, where the inner
    /// side grows.
    pub fn advance(
        &mut self,
        phi: &CnfFormula,
        marking: &Marking,
        tau: usize,
        trace: &mut Vec<TraceEvent>,
    ) -> NextStep {
        if self.v_inner.len() >= tau {
            return NextStep::Truncated;
        }
        loop {
            match self.current {
                Some(ci) => {
                    let clause = phi.clause(ci);
                    let next_var = clause
                        .vars()
                        .filter(|v| marking.is_marked(*v) && !self.is_set(*v))
                        .min();
                    if let Some(var) = next_var {
                        return NextStep::SetVar { var };
                    }
                    // Marked variables exhausted: Case #1 iff the clause is
                    // satisfied under both partial assignments, Case #2
                    // otherwise (unsatisfied in at least one of them).
                    let sat_both = self.satisfied_on_side(clause, Side::A1)
                        && self.satisfied_on_side(clause, Side::A2);
                    if sat_both {
                        let moved: Vec<u32> = clause
                            .vars()
                            .filter(|v| self.set_vars.get(v).is_some_and(|(a, b)| a != b))
                            .collect();
                        self.v_inner.extend(moved.iter().copied());
                        self.remaining.remove(&ci);
                        trace.push(TraceEvent::CaseOne { clause: ci, moved });
                    } else {
                        let moved: Vec<u32> = clause.vars().collect();
                        self.v_inner.extend(moved.iter().copied());
                        trace.push(TraceEvent::CaseTwo { clause: ci, moved });
                    }
                    self.current = None;
                    if self.v_inner.len() >= tau {
                        return NextStep::Truncated;
                    }
                }
                None => {
                    let next = self
                        .remaining
                        .iter()
                        .copied()
                        .find(|&ci| self.straddles(phi, ci));
                    match next {
                        Some(ci) => {
                            self.current = Some(ci);
                            trace.push(TraceEvent::Selected { clause: ci });
                        }
                        None => return NextStep::Terminated,
                    }
                }
            }
        }
    }
}

/// Spec-shaped transition function: returns the variable the next state sets
/// (or `None` on termination) together with the advanced state.
pub fn next_to_set(
    phi: &CnfFormula,
    marking: &Marking,
    state: &CouplingState,
    tau: usize,
) -> (Option<u32>, CouplingState) {
    let mut next = state.clone();
    let mut trace = Vec::new();
    match next.advance(phi, marking, tau, &mut trace) {
        NextStep::SetVar { var } => (Some(var), next),
        NextStep::Terminated | NextStep::Truncated => (None, next),
    }
}

/// Joint distribution of one maximally-coupled step, in the fixed edge order
/// `[(T,T), (T,F), (F,T), (F,F)]`.
pub fn couple_table(p1: &Probability, p2: &Probability) -> [Rat; 4] {
    let p1 = p1.as_rat();
    let p2 = p2.as_rat();
    let one = crate::numeric::rat_one();
    let zero = crate::numeric::rat_zero();
    let tt = p1.min(p2).clone();
    let ff = (&one - p1).min(&one - p2);
    let tf = if p1 > p2 { p1 - p2 } else { zero.clone() };
    let ft = if p2 > p1 { p2 - p1 } else { zero };
    debug_assert_eq!(&tt + &tf + &ft + &ff, one);
    [tt, tf, ft, ff]
}

/// Draw a coupled pair of values with marginals exactly `(p1, p2)` and
/// maximal agreement probability.
pub fn couple_step<R: Rng>(p1: &Probability, p2: &Probability, rng: &mut R) -> (bool, bool) {
    let table = couple_table(p1, p2);
    match pick_weighted(rng, &table) {
        0 => (true, true),
        1 => (true, false),
        2 => (false, true),
        _ => (false, false),
    }
}

/// How a coupling run ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    Coupled,
    Truncated,
}

/// Final product of a coupling run.
#[derive(Clone, Debug)]
pub struct CouplingOutcome {
    pub x: u32,
    pub a1: PartialAssignment,
    pub a2: PartialAssignment,
    pub v_inner: BTreeSet<u32>,
    /// Simplification under A1 of the remaining clauses fully inside V_I.
    pub phi_i1: CnfFormula,
    /// Simplification under A2 of the remaining clauses fully inside V_I.
    pub phi_i2: CnfFormula,
    /// Simplification of the remaining clauses fully inside V_O (equal under
    /// A1 and A2 for coupled runs).
    pub phi_o: CnfFormula,
    pub terminated: Termination,
}

fn subformula(phi: &CnfFormula, clause_indices: impl Iterator<Item = usize>) -> CnfFormula {
    let clauses: Vec<Clause> = clause_indices.map(|ci| phi.clause(ci).clone()).collect();
    CnfFormula::new(phi.num_vars(), clauses).expect("subformula of a valid formula is valid")
}

/// Build the outcome from a final state. For truncated runs the straddling
/// clauses belong to neither side and the factorization conditions need not
/// hold.
pub fn finalize(phi: &CnfFormula, state: &CouplingState, terminated: Termination) -> CouplingOutcome {
    let inner_clauses: Vec<usize> = state
        .remaining
        .iter()
        .copied()
        .filter(|&ci| phi.clause(ci).vars().all(|v| state.v_inner.contains(&v)))
        .collect();
    let outer_clauses: Vec<usize> = state
        .remaining
        .iter()
        .copied()
        .filter(|&ci| phi.clause(ci).vars().all(|v| !state.v_inner.contains(&v)))
        .collect();
    let a1 = state.a1();
    let a2 = state.a2();
    let inner = subformula(phi, inner_clauses.iter().copied());
    let outer = subformula(phi, outer_clauses.iter().copied());
    let (phi_i1, _) = simplify(&inner, &a1);
    let (phi_i2, _) = simplify(&inner, &a2);
    let (phi_o, _) = simplify(&outer, &a1);
    if terminated == Termination::Coupled {
        debug_assert_eq!(phi_o, simplify(&outer, &a2).0);
    }
    CouplingOutcome {
        x: state.root_var,
        a1,
        a2,
        v_inner: state.v_inner.clone(),
        phi_i1,
        phi_i2,
        phi_o,
        terminated,
    }
}

/// Attribution of inner variables to coupling errors: type 1 records a
/// variable given different values in A1/A2, type 2 records a clause whose
/// marked variables were all set while the clause stayed unsatisfied on at
/// least one side.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ErrorLedger {
    pub type1: BTreeSet<u32>,
    pub type2: BTreeSet<usize>,
}

/// Build the ledger from a trace and check that every inner variable is
/// covered by a type-1 or a type-2 record.
pub fn error_ledger(
    phi: &CnfFormula,
    outcome: &CouplingOutcome,
    trace: &[TraceEvent],
) -> Result<ErrorLedger> {
    let mut ledger = ErrorLedger::default();
    ledger.type1.insert(outcome.x);
    for event in trace {
        match event {
            TraceEvent::Sampled { var, v1, v2, .. } => {
                if v1 != v2 {
                    ledger.type1.insert(*var);
                }
            }
            TraceEvent::CaseTwo { clause, .. } => {
                ledger.type2.insert(*clause);
            }
            _ => {}
        }
    }
    for &v in &outcome.v_inner {
        let covered = ledger.type1.contains(&v)
            || ledger
                .type2
                .iter()
                .any(|&ci| phi.clause(ci).contains_var(v));
        if !covered {
            return Err(Error::InternalConsistency(format!(
                "inner variable {v} is attributable to no recorded error"
            )));
        }
    }
    Ok(ledger)
}

/// A coupling run together with its transcript.
#[derive(Clone, Debug)]
pub struct CouplingRun {
    pub outcome: CouplingOutcome,
    pub ledger: ErrorLedger,
    pub trace: Vec<TraceEvent>,
}

/// Execute the coupling procedure from `x`, sampling each selected marked
/// variable from the maximally-coupled joint of its two conditional
/// marginals, until no clause straddles the partition or the inner side
/// reaches `tau` variables.
pub fn run_coupling<R: Rng>(
    phi: &CnfFormula,
    x: u32,
    marking: &Marking,
    oracle: &mut dyn MarginalOracle,
    tau: usize,
    rng: &mut R,
) -> Result<CouplingRun> {
    if tau < 1 {
        return Err(Error::InvalidParameter {
            what: "tau",
            why: "stopping threshold must be at least 1".into(),
        });
    }
    let mut state = CouplingState::root(phi, x);
    let mut trace = Vec::new();
    loop {
        match state.advance(phi, marking, tau, &mut trace) {
            NextStep::SetVar { var } => {
                let d1 = oracle.marginal(phi, &state.a1(), var)?;
                let d2 = oracle.marginal(phi, &state.a2(), var)?;
                let (v1, v2) = couple_step(&d1, &d2, rng);
                let clause = state.current_clause().expect("sampling inside a clause");
                state.set_var(var, v1, v2);
                trace.push(TraceEvent::Sampled { clause, var, v1, v2 });
            }
            NextStep::Terminated => {
                let outcome = finalize(phi, &state, Termination::Coupled);
                let ledger = error_ledger(phi, &outcome, &trace)?;
                return Ok(CouplingRun { outcome, ledger, trace });
            }
            NextStep::Truncated => {
                let outcome = finalize(phi, &state, Termination::Truncated);
                let ledger = error_ledger(phi, &outcome, &trace)?;
                return Ok(CouplingRun { outcome, ledger, trace });
            }
        }
    }
}

/// Which factorization condition failed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FactorizationViolation {
    /// The outer formula differs under A1 and A2.
    OuterMismatch,
    /// An inner formula shares variables with the outer formula.
    SharedVariables(Side),
    /// `simplify(phi, A_i)` is not `phi_i ∧ phi_o` up to clause order.
    RecompositionMismatch(Side),
}

#[derive(Clone, Debug)]
pub struct FactorizationReport {
    pub ok: bool,
    pub violations: Vec<FactorizationViolation>,
}

fn clause_multiset(phi: &CnfFormula) -> Vec<Vec<(u32, bool)>> {
    let mut v: Vec<Vec<(u32, bool)>> = phi.clauses().iter().map(|c| c.canonical()).collect();
    v.sort();
    v
}

/// Check the factorization conditions of a coupled outcome from scratch:
/// equal outer formulas, variable-disjoint inner/outer parts, and exact
/// recomposition of the simplified formula on both sides.
pub fn verify_factorization(phi: &CnfFormula, outcome: &CouplingOutcome) -> FactorizationReport {
    assert_eq!(
        outcome.terminated,
        Termination::Coupled,
        "factorization applies to coupled runs"
    );
    let mut violations = Vec::new();

    // (a) the outer formula must be identical under both assignments. The
    // outer clauses are those of phi (not deleted, not inner) over V_O only;
    // recompute both simplifications directly from phi.
    let outer_indices: Vec<usize> = (0..phi.num_clauses())
        .filter(|&ci| phi.clause(ci).vars().all(|v| !outcome.v_inner.contains(&v)))
        .collect();
    let outer = subformula(phi, outer_indices.into_iter());
    let o1 = simplify(&outer, &outcome.a1).0;
    let o2 = simplify(&outer, &outcome.a2).0;
    if clause_multiset(&o1) != clause_multiset(&o2) {
        violations.push(FactorizationViolation::OuterMismatch);
    }

    // (b) variable disjointness.
    let outer_vars = outcome.phi_o.mentioned_vars();
    if !outcome.phi_i1.mentioned_vars().is_disjoint(&outer_vars) {
        violations.push(FactorizationViolation::SharedVariables(Side::A1));
    }
    if !outcome.phi_i2.mentioned_vars().is_disjoint(&outer_vars) {
        violations.push(FactorizationViolation::SharedVariables(Side::A2));
    }

    // (c) recomposition.
    for (side, inner, assignment) in [
        (Side::A1, &outcome.phi_i1, &outcome.a1),
        (Side::A2, &outcome.phi_i2, &outcome.a2),
    ] {
        let whole = simplify(phi, assignment).0;
        let mut recomposed = clause_multiset(inner);
        recomposed.extend(clause_multiset(&outcome.phi_o));
        recomposed.sort();
        if clause_multiset(&whole) != recomposed {
            violations.push(FactorizationViolation::RecompositionMismatch(side));
        }
    }

    FactorizationReport {
        ok: violations.is_empty(),
        violations,
    }
}

/// A set of vertices pairwise at distance >= 3 that becomes connected when
/// vertices at distance exactly 3 are joined.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ThreeTree {
    pub vertices: BTreeSet<u32>,
}

impl ThreeTree {
    /// Re-check the defining invariants against a graph.
    pub fn validate(&self, g: &VariableGraph) -> bool {
        let members: Vec<u32> = self.vertices.iter().copied().collect();
        let mut dist3_adj: BTreeMap<u32, BTreeSet<u32>> = BTreeMap::new();
        for &u in &members {
            let dist = g.multi_source_distances(&BTreeSet::from([u]));
            for &v in &members {
                if v == u {
                    continue;
                }
                match dist.get(&v) {
                    Some(&d) if d >= 3 => {
                        if d == 3 {
                            dist3_adj.entry(u).or_default().insert(v);
                        }
                    }
                    _ => return false,
                }
            }
        }
        if members.len() <= 1 {
            return true;
        }
        // Connectivity over distance-3 edges.
        let mut seen = BTreeSet::from([members[0]]);
        let mut stack = vec![members[0]];
        while let Some(u) = stack.pop() {
            for &v in dist3_adj.get(&u).into_iter().flatten() {
                if seen.insert(v) {
                    stack.push(v);
                }
            }
        }
        seen.len() == members.len()
    }
}

/// Greedy maximal 3-tree containing `seed_vertex`: repeatedly add the
/// lowest-index vertex at distance exactly 3 from the current set. On a
/// connected graph the result is maximal: every vertex ends within
/// distance 2 of the output.
pub fn max_3tree(g: &VariableGraph, seed_vertex: u32) -> ThreeTree {
    assert!(g.contains(seed_vertex), "seed vertex not in graph");
    let mut vertices = BTreeSet::from([seed_vertex]);
    loop {
        let dist = g.multi_source_distances(&vertices);
        let candidate = g
            .vertices()
            .find(|v| dist.get(v).copied() == Some(3));
        match candidate {
            Some(v) => {
                vertices.insert(v);
            }
            None => break,
        }
    }
    ThreeTree { vertices }
}

/// Sample a uniformly random satisfying assignment by walking a random
/// root-to-leaf coupling path, completing both partial assignments by
/// oracle-weighted sequential sampling, and outputting the A1 completion
/// with probability `q = Pr[x = T]`.
pub fn decision_tree_sampling<R: Rng>(
    phi: &CnfFormula,
    x: u32,
    marking: &Marking,
    oracle: &mut dyn MarginalOracle,
    tau: usize,
    rng: &mut R,
) -> Result<TotalAssignment> {
    let q = oracle.marginal(phi, &PartialAssignment::new(), x)?;
    // A forced root has a one-sided tree; complete the forced branch.
    if q.is_one() || q.is_zero() {
        let base = PartialAssignment::new().with(x, q.is_one());
        return complete_sequentially(phi, base, oracle, rng);
    }
    let run = run_coupling(phi, x, marking, oracle, tau, rng)?;
    let take_a1 = bernoulli(rng, &q);
    let base = if take_a1 {
        run.outcome.a1.clone()
    } else {
        run.outcome.a2.clone()
    };
    complete_sequentially(phi, base, oracle, rng)
}

/// Extend a partial assignment to a full assignment by sampling each unset
/// variable in index order from its conditional marginal.
pub fn complete_sequentially<R: Rng>(
    phi: &CnfFormula,
    mut assignment: PartialAssignment,
    oracle: &mut dyn MarginalOracle,
    rng: &mut R,
) -> Result<TotalAssignment> {
    for var in 1..=phi.num_vars() {
        if assignment.is_set(var) {
            continue;
        }
        let p = oracle.marginal(phi, &assignment, var)?;
        assignment.set(var, bernoulli(rng, &p));
    }
    let values = (1..=phi.num_vars())
        .map(|v| assignment.get(v).expect("all set"))
        .collect();
    let total = TotalAssignment::new(values);
    debug_assert!(phi.satisfied_by(&total));
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cnf::{build_variable_graph, Literal};
    use crate::gen::{gen_cnf, GenParams};
    use crate::numeric::rat;
    use crate::oracle::{enumerate_sat, ExactOracle, OracleBudget};
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

    fn mark_all(phi: &CnfFormula) -> Marking {
        Marking::new((1..=phi.num_vars()).collect())
    }

    fn prob(n: i64, d: i64) -> Probability {
        Probability::new(rat(n, d)).unwrap()
    }

    #[test]
    fn couple_table_examples() {
        let t = couple_table(&prob(1, 2), &prob(1, 2));
        assert_eq!(t, [rat(1, 2), rat(0, 1), rat(0, 1), rat(1, 2)]);

        let t = couple_table(&prob(3, 5), &prob(1, 2));
        assert_eq!(t, [rat(1, 2), rat(1, 10), rat(0, 1), rat(2, 5)]);

        let t = couple_table(&prob(1, 2), &prob(3, 5));
        assert_eq!(t, [rat(1, 2), rat(0, 1), rat(1, 10), rat(2, 5)]);
    }

    #[test]
    fn couple_step_marginals_are_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p1 = prob(3, 5);
        let p2 = prob(1, 4);
        let n = 40_000;
        let mut c1 = 0;
        let mut c2 = 0;
        for _ in 0..n {
            let (v1, v2) = couple_step(&p1, &p2, &mut rng);
            c1 += v1 as usize;
            c2 += v2 as usize;
        }
        assert!((c1 as f64 / n as f64 - 0.6).abs() < 0.01);
        assert!((c2 as f64 / n as f64 - 0.25).abs() < 0.01);
    }

    #[test]
    fn isolated_root_terminates_immediately() {
        // x3 appears in no clause.
        let phi = formula(3, &[&[1, 2]]);
        let marking = mark_all(&phi);
        let mut oracle = ExactOracle::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let run = run_coupling(&phi, 3, &marking, &mut oracle, 10, &mut rng).unwrap();
        assert_eq!(run.outcome.terminated, Termination::Coupled);
        assert_eq!(run.outcome.v_inner, BTreeSet::from([3]));
        assert_eq!(run.outcome.phi_i1.num_clauses(), 0);
        assert_eq!(run.outcome.phi_o.num_clauses(), 1);
        assert_eq!(run.outcome.phi_o, phi);
    }

    #[test]
    fn two_variable_clause_coupling() {
        let phi = formula(2, &[&[1, 2]]);
        let marking = mark_all(&phi);
        let mut oracle = ExactOracle::default();
        for seed in 0..30 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let run = run_coupling(&phi, 1, &marking, &mut oracle, 10, &mut rng).unwrap();
            assert!(run.outcome.v_inner.is_subset(&BTreeSet::from([1, 2])));
            assert!(run.outcome.v_inner.contains(&1));
            if run.outcome.terminated == Termination::Coupled {
                assert!(verify_factorization(&phi, &run.outcome).ok);
            }
        }
    }

    #[test]
    fn differing_variables_live_inside_v_inner() {
        let mut oracle = ExactOracle::default();
        for seed in 0..40 {
            let phi = gen_cnf(&GenParams {
                n: 10,
                k_min: 3,
                k_max: 3,
                d: 2,
                monotone: seed % 2 == 0,
                m: Some(4),
                seed,
            })
            .unwrap();
            let marking = crate::lll::find_marking(
                &phi,
                &rat(1, 4),
                &crate::lll::ResampleConfig { max_resamples: 100_000, rng_seed: seed },
            )
            .unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let Ok(run) = run_coupling(&phi, 1, &marking, &mut oracle, 100, &mut rng) else {
                continue; // x=1 forced one way: outside the coupling precondition
            };
            for (v, a) in run.outcome.a1.iter() {
                if run.outcome.a2.get(v) != Some(a) {
                    assert!(run.outcome.v_inner.contains(&v), "differing {v} outside V_I");
                }
            }
            // G restricted to V_I is connected.
            let g = build_variable_graph(&phi, &run.outcome.v_inner);
            assert!(g.is_connected());
        }
    }

    #[test]
    fn factorization_holds_on_coupled_runs() {
        let mut oracle = ExactOracle::default();
        let mut coupled = 0;
        for seed in 0..60 {
            let phi = gen_cnf(&GenParams {
                n: 9,
                k_min: 2,
                k_max: 3,
                d: 2,
                monotone: false,
                m: Some(4),
                seed: 500 + seed,
            })
            .unwrap();
            let marking = mark_all(&phi);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let Ok(run) = run_coupling(&phi, 1, &marking, &mut oracle, 100, &mut rng) else {
                continue;
            };
            if run.outcome.terminated == Termination::Coupled {
                coupled += 1;
                let report = verify_factorization(&phi, &run.outcome);
                assert!(report.ok, "violations: {:?}", report.violations);
            }
        }
        assert!(coupled >= 30, "too few coupled runs: {coupled}");
    }

    #[test]
    fn hand_built_violations_are_detected() {
        // A straddling clause: claim V_I = {1} while clause (1 v 2) exists
        // and pretend phi_i1 kept variable sets overlapping phi_o.
        let phi = formula(2, &[&[1, 2]]);
        let outcome = CouplingOutcome {
            x: 1,
            a1: PartialAssignment::from_pairs([(1, true)]),
            a2: PartialAssignment::from_pairs([(1, false)]),
            v_inner: BTreeSet::from([1]),
            phi_i1: formula(2, &[&[2]]),
            phi_i2: formula(2, &[&[2]]),
            phi_o: formula(2, &[&[2]]),
            terminated: Termination::Coupled,
        };
        let report = verify_factorization(&phi, &outcome);
        assert!(!report.ok);
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, FactorizationViolation::SharedVariables(_))));

        // A1 and A2 differing on an outer variable of a formula where that
        // variable matters.
        let outcome = CouplingOutcome {
            x: 1,
            a1: PartialAssignment::from_pairs([(1, true), (2, true)]),
            a2: PartialAssignment::from_pairs([(1, false), (2, false)]),
            v_inner: BTreeSet::from([1]),
            phi_i1: CnfFormula::empty(2),
            phi_i2: CnfFormula::empty(2),
            phi_o: CnfFormula::empty(2),
            terminated: Termination::Coupled,
        };
        let phi2 = formula(2, &[&[2]]);
        let report = verify_factorization(&phi2, &outcome);
        assert!(!report.ok);
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(
                v,
                FactorizationViolation::OuterMismatch
                    | FactorizationViolation::RecompositionMismatch(_)
            )));
    }

    #[test]
    fn ledger_attributes_every_inner_variable() {
        let mut oracle = ExactOracle::default();
        for seed in 0..100 {
            let phi = gen_cnf(&GenParams {
                n: 10,
                k_min: 2,
                k_max: 4,
                d: 2,
                monotone: false,
                m: Some(5),
                seed: 900 + seed,
            })
            .unwrap();
            let marking = mark_all(&phi);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            // error_ledger runs inside run_coupling and errors on any gap.
            let _ = run_coupling(&phi, 1, &marking, &mut oracle, 200, &mut rng);
        }
    }

    #[test]
    fn ledger_examples() {
        let phi = formula(2, &[&[1, 2]]);
        let marking = mark_all(&phi);
        let mut oracle = ExactOracle::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let run = run_coupling(&phi, 1, &marking, &mut oracle, 10, &mut rng).unwrap();
        assert!(run.ledger.type1.contains(&1));
        for event in &run.trace {
            if let TraceEvent::Sampled { var, v1, v2, .. } = event {
                if v1 != v2 {
                    assert!(run.ledger.type1.contains(var));
                }
            }
        }
    }

    #[test]
    fn clause_triggers_loop_at_most_once() {
        let mut oracle = ExactOracle::default();
        for seed in 0..30 {
            let phi = gen_cnf(&GenParams {
                n: 10,
                k_min: 2,
                k_max: 3,
                d: 3,
                monotone: false,
                m: Some(6),
                seed: 1300 + seed,
            })
            .unwrap();
            let marking = mark_all(&phi);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let Ok(run) = run_coupling(&phi, 1, &marking, &mut oracle, 100, &mut rng) else {
                continue;
            };
            let mut selected = BTreeSet::new();
            for event in &run.trace {
                if let TraceEvent::Selected { clause } = event {
                    assert!(selected.insert(*clause), "clause {clause} selected twice");
                }
            }
        }
    }

    #[test]
    fn three_tree_trivial_and_path() {
        let phi = formula(1, &[]);
        let g = build_variable_graph(&phi, &BTreeSet::from([1]));
        let t = max_3tree(&g, 1);
        assert_eq!(t.vertices, BTreeSet::from([1]));

        // Path 1-2-3-4-5-6-7.
        let phi = formula(
            7,
            &[&[1, 2], &[2, 3], &[3, 4], &[4, 5], &[5, 6], &[6, 7]],
        );
        let g = build_variable_graph(&phi, &(1..=7).collect());
        let t = max_3tree(&g, 1);
        assert_eq!(t.vertices, BTreeSet::from([1, 4, 7]));
        assert!(t.validate(&g));
    }

    #[test]
    fn three_tree_bound_on_coupling_graphs() {
        let mut oracle = ExactOracle::default();
        for seed in 0..25 {
            let phi = gen_cnf(&GenParams {
                n: 10,
                k_min: 2,
                k_max: 3,
                d: 2,
                monotone: false,
                m: Some(5),
                seed: 40 + seed,
            })
            .unwrap();
            let marking = mark_all(&phi);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let Ok(run) = run_coupling(&phi, 1, &marking, &mut oracle, 100, &mut rng) else {
                continue;
            };
            let g = build_variable_graph(&phi, &run.outcome.v_inner);
            let t = max_3tree(&g, run.outcome.x);
            assert!(t.validate(&g));
            let s = phi.stats();
            let bound = (run.outcome.v_inner.len() as f64)
                / (2.0 * (6.0 * s.d as f64 * s.k_min as f64).powi(2));
            assert!(t.vertices.len() as f64 >= bound);
        }
    }

    #[test]
    fn decision_tree_sampling_forced_and_uniform() {
        let mut oracle = ExactOracle::default();
        let mut rng = ChaCha8Rng::seed_from_u64(9);

        let phi = formula(1, &[&[1]]);
        let marking = mark_all(&phi);
        for _ in 0..10 {
            let a = decision_tree_sampling(&phi, 1, &marking, &mut oracle, 10, &mut rng).unwrap();
            assert!(a.get(1));
        }

        // Empty formula over 2 variables: uniform over 4 assignments.
        let phi = CnfFormula::empty(2);
        let marking = mark_all(&phi);
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        let draws = 10_000;
        for _ in 0..draws {
            let a = decision_tree_sampling(&phi, 1, &marking, &mut oracle, 10, &mut rng).unwrap();
            *counts.entry(a.bits()).or_default() += 1;
        }
        assert_eq!(counts.len(), 4);
        for (_, c) in counts {
            assert!((c as f64 / draws as f64 - 0.25).abs() < 0.02);
        }
    }

    #[test]
    fn decision_tree_sampling_matches_enumeration() {
        let phi = formula(2, &[&[1, 2]]);
        let marking = mark_all(&phi);
        let mut oracle = ExactOracle::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws = 10_000usize;
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for _ in 0..draws {
            let a = decision_tree_sampling(&phi, 1, &marking, &mut oracle, 10, &mut rng).unwrap();
            *counts.entry(a.bits()).or_default() += 1;
        }
        let support: Vec<String> = enumerate_sat(&phi, &OracleBudget::default())
            .unwrap()
            .map(|a| a.bits())
            .collect();
        assert_eq!(support.len(), 3);
        let mut tv = 0.0;
        for bits in &support {
            let freq = *counts.get(bits).unwrap_or(&0) as f64 / draws as f64;
            tv += (freq - 1.0 / 3.0).abs();
        }
        tv /= 2.0;
        assert!(tv <= 0.02, "tv {tv}");
    }
}
