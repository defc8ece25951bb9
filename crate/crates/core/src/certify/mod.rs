//! LP-feasibility certification of marginal intervals.
//!
//! A structural (oracle-free) decision tree is transformed into its two
//! one-sided views; edge masses become LP variables constrained by the copy,
//! conservation, flip-cap and coupled-leaf ratio conditions. Feasibility of
//! the program for a window `[q_lo, q_hi]` certifies that the window is
//! consistent with the marginal of the root variable, and a grid scan
//! returns the smallest interval covering all feasible windows.

mod simplex;

pub use simplex::{
    default_tolerance, solve_feasibility, Backend, ConstraintOp, Feasibility, LinearConstraint,
    LpInstance, Presolved,
};

use std::collections::BTreeMap;

use crate::cnf::{CnfFormula, Marking};
use crate::dtree::{
    build_tree, leaf_counts, to_one_sided, LeafCounts, MatchedLeafPair, NodeId, OneSidedTree,
    OsEdgeKind,
};
use crate::numeric::{rat, rat_to_f64, rat_zero, Probability, Rat};
use crate::oracle::OracleBudget;
use crate::{Error, Result};

/// A certified bracket on `Pr[x = T]`.
#[derive(Clone, Debug)]
pub struct MarginalInterval {
    pub lo: Probability,
    pub hi: Probability,
    pub slack_s: Rat,
    pub tau: usize,
    pub certified: bool,
}

/// Per-window feasibility record of the grid scan.
#[derive(Clone, Debug)]
pub struct WindowReport {
    pub center: Rat,
    pub q_lo: Rat,
    pub q_hi: Rat,
    pub feasible: bool,
    pub decided_by: WindowDecision,
}

/// How a window's verdict was established.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WindowDecision {
    Float,
    /// Proven: a verified dual ray or exact pivoting.
    Exact,
}

#[derive(Clone, Debug)]
pub struct CertifyOutcome {
    pub interval: MarginalInterval,
    pub windows: Vec<WindowReport>,
    /// Probability mass at truncated leaves in the certifying witness.
    pub truncated_mass: Rat,
    /// Set when the feasible windows do not form a contiguous block.
    pub non_interval_pattern: bool,
    pub tree_nodes: usize,
    pub exact_solves: usize,
}

#[derive(Clone, Debug)]
pub struct CertifyBudgets {
    pub tree_nodes: usize,
    pub oracle: OracleBudget,
}

impl Default for CertifyBudgets {
    fn default() -> Self {
        CertifyBudgets {
            tree_nodes: 200_000,
            oracle: OracleBudget::default(),
        }
    }
}

/// Desk-scale default for the flip-cap slack: `max(8, d^3)` keeps the cap
/// `4/s` a real constraint at small degrees.
pub fn default_slack(stats: &crate::cnf::FormulaStats) -> Rat {
    let d3 = (stats.d as i64).pow(3);
    rat(d3.max(8), 1)
}

fn edge_var(offset: usize, edge: usize) -> usize {
    offset + edge
}

/// Incoming-mass expression of a state node: an edge variable, or the unit
/// constant at the root.
enum Incoming {
    Root,
    Edge(usize),
}

fn tree_constraints(
    os: &OneSidedTree,
    offset: usize,
    slack_s: &Rat,
    constraints: &mut Vec<LinearConstraint>,
) {
    let cap = rat(4, 1) / slack_s;
    // Group edges by state node.
    let mut copies: BTreeMap<(NodeId, bool), usize> = BTreeMap::new();
    let mut splits: BTreeMap<(NodeId, bool, bool), usize> = BTreeMap::new();
    for (idx, edge) in os.edges.iter().enumerate() {
        match &edge.kind {
            OsEdgeKind::Copy { state, own_choice } => {
                copies.insert((*state, *own_choice), idx);
            }
            OsEdgeKind::Split {
                state,
                own_choice,
                other_choice,
                ..
            } => {
                splits.insert((*state, *own_choice, *other_choice), idx);
            }
        }
    }
    for (&(state, own), &copy_edge) in &copies {
        let incoming = match os.state_incoming.get(&state) {
            Some(Some(e)) => Incoming::Edge(*e),
            _ => Incoming::Root,
        };
        // Copy rule: the own-side choice duplicates the incoming mass.
        let (terms, rhs) = match incoming {
            Incoming::Root => (vec![(edge_var(offset, copy_edge), rat(1, 1))], rat(1, 1)),
            Incoming::Edge(e) => (
                vec![
                    (edge_var(offset, copy_edge), rat(1, 1)),
                    (edge_var(offset, e), rat(-1, 1)),
                ],
                rat_zero(),
            ),
        };
        constraints.push(LinearConstraint {
            terms,
            op: ConstraintOp::Eq,
            rhs,
            label: format!("copy s{state} own={own}"),
        });
        // Conservation: the other-side split carries the whole copy mass.
        let agree = splits[&(state, own, own)];
        let flip = splits[&(state, own, !own)];
        constraints.push(LinearConstraint {
            terms: vec![
                (edge_var(offset, agree), rat(1, 1)),
                (edge_var(offset, flip), rat(1, 1)),
                (edge_var(offset, copy_edge), rat(-1, 1)),
            ],
            op: ConstraintOp::Eq,
            rhs: rat_zero(),
            label: format!("split s{state} own={own}"),
        });
        // Flip cap: disagreement mass is at most (4/s) of the copy mass.
        constraints.push(LinearConstraint {
            terms: vec![
                (edge_var(offset, flip), rat(1, 1)),
                (edge_var(offset, copy_edge), -cap.clone()),
            ],
            op: ConstraintOp::Le,
            rhs: rat_zero(),
            label: format!("cap s{state} own={own}"),
        });
    }
}

/// The window-independent part of the program: copy, conservation and
/// flip-cap constraints of both one-sided trees, over one mass variable per
/// edge (S1 first, then S2), all non-negative.
fn build_lp_static(s1: &OneSidedTree, s2: &OneSidedTree, slack_s: &Rat) -> LpInstance {
    let num_vars = s1.edges.len() + s2.edges.len();
    let mut constraints = Vec::new();
    tree_constraints(s1, 0, slack_s, &mut constraints);
    tree_constraints(s2, s1.edges.len(), slack_s, &mut constraints);
    LpInstance {
        num_vars,
        constraints,
    }
}

/// Per-window leaf rows: every coupled matched pair contributes
/// `(q_lo/(1-q_lo)) n2 p2 <= n1 p1 <= (q_hi/(1-q_hi)) n2 p2`; truncated
/// pairs are unconstrained.
fn leaf_rows(
    s1_edge_count: usize,
    matching: &[MatchedLeafPair],
    counts: &BTreeMap<NodeId, LeafCounts>,
    q_lo: &Rat,
    q_hi: &Rat,
) -> Result<Vec<LinearConstraint>> {
    if *q_lo < rat_zero() || q_hi >= &rat(1, 1) || q_lo > q_hi {
        return Err(Error::LpMalformed(format!(
            "window [{q_lo}, {q_hi}] leaves a ratio undefined"
        )));
    }
    let alpha_lo = q_lo / (rat(1, 1) - q_lo);
    let alpha_hi = q_hi / (rat(1, 1) - q_hi);
    let mut rows = Vec::new();
    for pair in matching {
        if !pair.coupled {
            continue;
        }
        let Some(LeafCounts::Counts { n1, n2 }) = counts.get(&pair.s_leaf) else {
            return Err(Error::LpMalformed(format!(
                "coupled leaf {} has no counts",
                pair.s_leaf
            )));
        };
        let n1 = n1.to_rat();
        let n2 = n2.to_rat();
        // Terms for p1 and p2; a missing edge means the root itself is the
        // leaf and its mass is the constant 1.
        let p1_term = pair.s1_edge.map(|e| edge_var(0, e));
        let p2_term = pair.s2_edge.map(|e| edge_var(s1_edge_count, e));
        let mut push = |coef1: Rat, coef2: Rat, label: String| {
            let mut terms = Vec::new();
            let mut rhs = rat_zero();
            match p1_term {
                Some(v) => terms.push((v, coef1)),
                None => rhs -= coef1,
            }
            match p2_term {
                Some(v) => terms.push((v, coef2)),
                None => rhs -= coef2,
            }
            rows.push(LinearConstraint {
                terms,
                op: ConstraintOp::Le,
                rhs,
                label,
            });
        };
        // alpha_lo * n2 * p2 - n1 * p1 <= 0
        push(
            -n1.clone(),
            &alpha_lo * &n2,
            format!("leaf {} lower", pair.s_leaf),
        );
        // n1 * p1 - alpha_hi * n2 * p2 <= 0
        push(
            n1.clone(),
            -(&alpha_hi * &n2),
            format!("leaf {} upper", pair.s_leaf),
        );
    }
    Ok(rows)
}

/// Build the complete feasibility program for a window `[q_lo, q_hi]`.
pub fn build_lp(
    s1: &OneSidedTree,
    s2: &OneSidedTree,
    matching: &[MatchedLeafPair],
    counts: &BTreeMap<NodeId, LeafCounts>,
    q_lo: &Rat,
    q_hi: &Rat,
    slack_s: &Rat,
) -> Result<LpInstance> {
    let mut lp = build_lp_static(s1, s2, slack_s);
    lp.constraints
        .extend(leaf_rows(s1.edges.len(), matching, counts, q_lo, q_hi)?);
    Ok(lp)
}

/// Decide one window with the trusted policy: float first; float-infeasible
/// retried on the exact backend.
pub fn window_feasible(
    s1: &OneSidedTree,
    s2: &OneSidedTree,
    matching: &[MatchedLeafPair],
    counts: &BTreeMap<NodeId, LeafCounts>,
    q_lo: &Rat,
    q_hi: &Rat,
    slack_s: &Rat,
) -> Result<Feasibility> {
    let lp = build_lp(s1, s2, matching, counts, q_lo, q_hi, slack_s)?;
    simplex::solve_trusted(&lp, &default_tolerance())
}

struct GridWindow {
    center: Rat,
    q_lo: Rat,
    q_hi: Rat,
}

fn grid_windows(grid_eps: &Rat) -> Vec<GridWindow> {
    // Windows [g - eps, g + eps] for g on the grid {eps, 2 eps, ...},
    // clamped into the open unit interval so ratios stay defined.
    let floor = grid_eps / rat(100, 1);
    let one = rat(1, 1);
    let mut out = Vec::new();
    let mut i = 1i64;
    loop {
        let center = grid_eps * rat(i, 1);
        if center >= one {
            break;
        }
        let q_lo = (&center - grid_eps).max(floor.clone());
        let q_hi = (&center + grid_eps).min(&one - &floor);
        out.push(GridWindow { center, q_lo, q_hi });
        i += 1;
    }
    out
}

/// Certify a marginal interval for `x` by scanning all grid windows.
///
/// Float-feasible windows carry tolerance-validated witnesses. Windows the
/// float backend deems infeasible are confirmed exactly, using one exact
/// solve per maximal infeasible run (infeasibility of the run's covering
/// interval is inherited by every contained window); windows straddling a
/// run boundary are solved exactly one by one.
pub fn certify_marginal(
    phi: &CnfFormula,
    x: u32,
    marking: &Marking,
    tau: usize,
    slack_s: &Rat,
    grid_eps: &Rat,
    budgets: &CertifyBudgets,
) -> Result<CertifyOutcome> {
    if *grid_eps <= rat_zero() || *grid_eps >= rat(1, 2) {
        return Err(Error::InvalidParameter {
            what: "grid_eps",
            why: format!("need 0 < grid_eps < 1/2, got {grid_eps}"),
        });
    }
    let tree = build_tree(phi, x, marking, tau, budgets.tree_nodes)?;
    let (s1, s2, matching) = to_one_sided(&tree);
    let mut counts = BTreeMap::new();
    for pair in &matching {
        if pair.coupled {
            counts.insert(
                pair.s_leaf,
                leaf_counts(phi, &tree, pair.s_leaf, &budgets.oracle)?,
            );
        }
    }

    let windows = grid_windows(grid_eps);
    let mut exact_solves = 0usize;
    let mut reports: Vec<WindowReport> = Vec::with_capacity(windows.len());
    let mut witness: Option<Vec<Rat>> = None;

    // The equalities and caps are window-independent; presolve them once and
    // append the two leaf rows per coupled pair for each window.
    let static_lp = build_lp_static(&s1, &s2, slack_s);
    let cache = Presolved::new(&static_lp);

    for w in &windows {
        let rows = leaf_rows(s1.edges.len(), &matching, &counts, &w.q_lo, &w.q_hi)?;
        // Float first; an unproven float infeasibility (no verified dual
        // ray) escalates to exact pivoting.
        let mut decided_by = WindowDecision::Float;
        let verdict = match cache.solve(&rows, Backend::Float, &default_tolerance()) {
            Ok(Feasibility::Infeasible { backend: Backend::Exact }) => {
                // Farkas ray verified in exact arithmetic.
                decided_by = WindowDecision::Exact;
                Feasibility::Infeasible { backend: Backend::Exact }
            }
            Ok(Feasibility::Infeasible { backend: Backend::Float })
            | Err(Error::NumericalFailure) => {
                exact_solves += 1;
                decided_by = WindowDecision::Exact;
                cache.solve(&rows, Backend::Exact, &default_tolerance())?
            }
            Ok(other) => other,
            Err(e) => return Err(e),
        };
        if let Feasibility::Feasible { witness: wit, .. } = &verdict {
            if witness.is_none() {
                witness = Some(wit.clone());
            }
        }
        reports.push(WindowReport {
            center: w.center.clone(),
            q_lo: w.q_lo.clone(),
            q_hi: w.q_hi.clone(),
            feasible: verdict.is_feasible(),
            decided_by,
        });
    }

    let feasible_idx: Vec<usize> = reports
        .iter()
        .enumerate()
        .filter(|(_, r)| r.feasible)
        .map(|(i, _)| i)
        .collect();
    if feasible_idx.is_empty() {
        return Err(Error::CertificationFailure(format!(
            "no feasible window at grid_eps {grid_eps} (tau {tau} may be too small)"
        )));
    }
    let first = feasible_idx[0];
    let last = *feasible_idx.last().unwrap();
    let non_interval_pattern = feasible_idx.len() != last - first + 1;

    let lo = Probability::new(reports[first].q_lo.clone())
        .map_err(|e| Error::InternalConsistency(format!("interval lower bound: {e}")))?;
    let hi = Probability::new(reports[last].q_hi.clone())
        .map_err(|e| Error::InternalConsistency(format!("interval upper bound: {e}")))?;

    // Mass escaping into truncated leaves, measured on the first witness.
    let truncated_mass = match &witness {
        Some(wit) => matching
            .iter()
            .filter(|p| !p.coupled)
            .filter_map(|p| p.s1_edge)
            .map(|e| wit[e].clone())
            .fold(rat_zero(), |acc, m| acc + m),
        None => rat_zero(),
    };

    Ok(CertifyOutcome {
        interval: MarginalInterval {
            lo,
            hi,
            slack_s: slack_s.clone(),
            tau,
            certified: true,
        },
        windows: reports,
        truncated_mass,
        non_interval_pattern,
        tree_nodes: tree.nodes.len(),
        exact_solves,
    })
}

/// Midpoint of a certified interval, used when a certified oracle stands in
/// for the exact one.
pub fn interval_midpoint(interval: &MarginalInterval) -> (Probability, Rat) {
    let lo = interval.lo.as_rat();
    let hi = interval.hi.as_rat();
    let mid = (lo + hi) / rat(2, 1);
    let half_width = (hi - lo) / rat(2, 1);
    (
        Probability::new(mid).expect("midpoint of a probability interval"),
        half_width,
    )
}

/// JSON-friendly summary of a certification outcome.
pub fn outcome_json(outcome: &CertifyOutcome) -> serde_json::Value {
    serde_json::json!({
        "interval": {
            "lo": crate::numeric::rat_to_string(outcome.interval.lo.as_rat()),
            "hi": crate::numeric::rat_to_string(outcome.interval.hi.as_rat()),
            "lo_f64": rat_to_f64(outcome.interval.lo.as_rat()),
            "hi_f64": rat_to_f64(outcome.interval.hi.as_rat()),
            "slack_s": crate::numeric::rat_to_string(&outcome.interval.slack_s),
            "tau": outcome.interval.tau,
            "certified": outcome.interval.certified,
        },
        "windows": outcome.windows.iter().map(|w| serde_json::json!({
            "center": rat_to_f64(&w.center),
            "q_lo": crate::numeric::rat_to_string(&w.q_lo),
            "q_hi": crate::numeric::rat_to_string(&w.q_hi),
            "feasible": w.feasible,
            "decided_by": match w.decided_by {
                WindowDecision::Float => "float",
                WindowDecision::Exact => "exact",
            },
        })).collect::<Vec<_>>(),
        "truncated_mass": rat_to_f64(&outcome.truncated_mass),
        "non_interval_pattern": outcome.non_interval_pattern,
        "tree_nodes": outcome.tree_nodes,
        "exact_solves": outcome.exact_solves,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cnf::{Clause, Literal, PartialAssignment};
    use crate::dtree::{annotate_probabilities, StochasticTree};
    use num_traits::Zero;
    use crate::oracle::{exact_marginal, ExactOracle};

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

    fn counts_for(
        phi: &CnfFormula,
        tree: &StochasticTree,
        matching: &[MatchedLeafPair],
    ) -> BTreeMap<NodeId, LeafCounts> {
        let budget = OracleBudget::default();
        matching
            .iter()
            .filter(|p| p.coupled)
            .map(|p| (p.s_leaf, leaf_counts(phi, tree, p.s_leaf, &budget).unwrap()))
            .collect()
    }

    #[test]
    fn one_decision_tree_has_twelve_edge_variables() {
        let phi = formula(2, &[&[1, 2]]);
        let tree = build_tree(&phi, 1, &mark_all(&phi), 10, 1000).unwrap();
        let (s1, s2, matching) = to_one_sided(&tree);
        // One internal node: 2 copy edges + 4 split edges per side.
        assert_eq!(s1.edges.len(), 6);
        assert_eq!(s2.edges.len(), 6);
        let counts = counts_for(&phi, &tree, &matching);
        let lp = build_lp(&s1, &s2, &matching, &counts, &rat(1, 2), &rat(3, 5), &rat(8, 1)).unwrap();
        assert_eq!(lp.num_vars, 12);
    }

    #[test]
    fn all_truncated_tree_is_feasible_for_every_window() {
        // tau = 1 truncates at the root: no leaf constraints at all.
        let phi = formula(2, &[&[1, 2]]);
        let tree = build_tree(&phi, 1, &mark_all(&phi), 1, 1000).unwrap();
        let (s1, s2, matching) = to_one_sided(&tree);
        assert!(matching.iter().all(|p| !p.coupled));
        let counts = BTreeMap::new();
        for (lo, hi) in [(rat(1, 100), rat(3, 100)), (rat(9, 10), rat(95, 100))] {
            let f = window_feasible(&s1, &s2, &matching, &counts, &lo, &hi, &rat(8, 1)).unwrap();
            assert!(f.is_feasible());
        }
    }

    #[test]
    fn true_marginal_window_is_feasible_and_far_windows_are_not() {
        // (x1 v x2): q = Pr[x1 = T] = 2/3. Conditioning on x1 = F forces x2,
        // so the true coupling flips with conditional probability 1 and the
        // flip cap must be vacuous (s = 4) for the window at the truth to
        // admit the true witness.
        let phi = formula(2, &[&[1, 2]]);
        let tree = build_tree(&phi, 1, &mark_all(&phi), 10, 1000).unwrap();
        let (s1, s2, matching) = to_one_sided(&tree);
        let counts = counts_for(&phi, &tree, &matching);
        let s = rat(4, 1);
        let q = exact_marginal(&phi, &PartialAssignment::new(), 1, &OracleBudget::default())
            .unwrap();
        assert_eq!(q.as_rat(), &rat(2, 3));
        // Window around the truth.
        let f = window_feasible(
            &s1,
            &s2,
            &matching,
            &counts,
            &(q.as_rat() - rat(1, 100)),
            &(q.as_rat() + rat(1, 100)),
            &s,
        )
        .unwrap();
        assert!(f.is_feasible());
        // A window far from the truth must be exactly infeasible.
        let f = window_feasible(&s1, &s2, &matching, &counts, &rat(1, 10), &rat(12, 100), &s)
            .unwrap();
        assert!(matches!(f, Feasibility::Infeasible { backend: Backend::Exact }));
    }

    #[test]
    fn annotated_masses_are_a_witness_at_the_truth() {
        // The true coupling masses satisfy the LP built around the true q.
        let phi = formula(3, &[&[1, 2], &[2, 3]]);
        let tree = build_tree(&phi, 1, &mark_all(&phi), 10, 10_000).unwrap();
        let mut oracle = ExactOracle::default();
        let tree = annotate_probabilities(tree, &phi, &mut oracle).unwrap();
        let (s1, s2, matching) = to_one_sided(&tree);
        let counts = counts_for(&phi, &tree, &matching);
        let q = exact_marginal(&phi, &PartialAssignment::new(), 1, &OracleBudget::default())
            .unwrap();
        let lp = build_lp(
            &s1,
            &s2,
            &matching,
            &counts,
            q.as_rat(),
            q.as_rat(),
            &rat(2, 1), // permissive cap: the witness must still satisfy it
        )
        .unwrap();
        let point: Vec<Rat> = s1
            .edges
            .iter()
            .chain(s2.edges.iter())
            .map(|e| e.mass.clone().unwrap())
            .collect();
        assert!(lp.max_violation(&point).is_zero());
    }

    #[test]
    fn certify_brackets_forced_and_free_marginals() {
        // (x1 v x2): interval must contain 2/3.
        let phi = formula(2, &[&[1, 2]]);
        let out = certify_marginal(
            &phi,
            1,
            &mark_all(&phi),
            10,
            &rat(4, 1),
            &rat(1, 100),
            &CertifyBudgets::default(),
        )
        .unwrap();
        let q = rat(2, 3);
        assert!(out.interval.lo.as_rat() <= &q && &q <= out.interval.hi.as_rat());
        assert!(out.interval.certified);
        assert!(!out.non_interval_pattern);
        assert_eq!(out.truncated_mass, rat_zero());

        // Isolated variable: interval contains 1/2.
        let phi = formula(3, &[&[2, 3]]);
        let out = certify_marginal(
            &phi,
            1,
            &mark_all(&phi),
            10,
            &rat(8, 1),
            &rat(1, 50),
            &CertifyBudgets::default(),
        )
        .unwrap();
        let half = rat(1, 2);
        assert!(out.interval.lo.as_rat() <= &half && &half <= out.interval.hi.as_rat());
    }

    #[test]
    fn binding_cap_can_starve_the_program() {
        // With s = 8 the cap 4/s = 1/2 is tighter than the forced flip on
        // (x1 v x2); no window is feasible and the failure is reported, not
        // papered over with a fabricated interval.
        let phi = formula(2, &[&[1, 2]]);
        let err = certify_marginal(
            &phi,
            1,
            &mark_all(&phi),
            10,
            &rat(8, 1),
            &rat(1, 100),
            &CertifyBudgets::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::CertificationFailure(_)));
    }

    #[test]
    fn narrowing_a_window_never_creates_feasibility() {
        let phi = formula(2, &[&[1, 2]]);
        let tree = build_tree(&phi, 1, &mark_all(&phi), 10, 1000).unwrap();
        let (s1, s2, matching) = to_one_sided(&tree);
        let counts = counts_for(&phi, &tree, &matching);
        let s = rat(8, 1);
        // Wide infeasible window: every subwindow is infeasible too.
        let wide = window_feasible(&s1, &s2, &matching, &counts, &rat(1, 20), &rat(3, 10), &s)
            .unwrap();
        if !wide.is_feasible() {
            for (lo, hi) in [
                (rat(1, 20), rat(1, 10)),
                (rat(1, 10), rat(2, 10)),
                (rat(2, 10), rat(3, 10)),
            ] {
                let f = window_feasible(&s1, &s2, &matching, &counts, &lo, &hi, &s).unwrap();
                assert!(!f.is_feasible());
            }
        }
    }
}
