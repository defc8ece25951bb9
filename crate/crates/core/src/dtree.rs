//! Explicit stochastic decision trees over coupling states.
//!
//! The tree structure is oracle-independent: which variable a node sets
//! depends only on its state. Probabilities are annotated afterwards from a
//! conditional-marginal source, in exact rational arithmetic, and the
//! central balance identity `p1 N1 (1-q) = p2 N2 q` is checked exactly.

use num_traits::Signed;
use serde_json::{json, Value};
use std::collections::BTreeMap;

use crate::cnf::{CnfFormula, Marking, PartialAssignment};
use crate::coupling::{couple_table, finalize, CouplingState, NextStep, Termination};
use crate::numeric::{rat_to_string, rat_zero, ExactCount, Rat};
use crate::oracle::{count_sat, MarginalOracle, OracleBudget};
use crate::{Error, Result};

pub type NodeId = usize;

/// Fixed order of the four coupled value choices on edges.
pub const EDGE_ORDER: [(bool, bool); 4] = [(true, true), (true, false), (false, true), (false, false)];

/// Index of a `(v1, v2)` choice in `EDGE_ORDER`.
pub fn edge_index(v1: bool, v2: bool) -> usize {
    match (v1, v2) {
        (true, true) => 0,
        (true, false) => 1,
        (false, true) => 2,
        (false, false) => 3,
    }
}

#[derive(Clone, Debug)]
pub enum NodeKind {
    /// Sets `var`; `post` is the state after deterministic bookkeeping, with
    /// the current clause chosen and `var` not yet set.
    Internal {
        var: u32,
        post: CouplingState,
        children: [NodeId; 4],
    },
    /// Coupling terminated (or truncated) after deterministic bookkeeping;
    /// `final_state` includes that trailing bookkeeping.
    Leaf {
        reason: Termination,
        final_state: CouplingState,
    },
}

#[derive(Clone, Debug)]
pub struct TreeNode {
    pub state: CouplingState,
    pub kind: NodeKind,
    pub parent: Option<(NodeId, usize)>,
    /// Joint probabilities of the four outgoing edges, in `EDGE_ORDER`.
    pub edge_probs: Option<[Rat; 4]>,
    /// Probability mass of reaching this node (after annotation).
    pub mass: Option<Rat>,
    /// Reached only with probability zero; conditionals below are undefined
    /// and were never queried.
    pub poisoned: bool,
}

impl TreeNode {
    pub fn is_leaf(&self) -> bool {
        matches!(self.kind, NodeKind::Leaf { .. })
    }

    pub fn leaf_reason(&self) -> Option<Termination> {
        match &self.kind {
            NodeKind::Leaf { reason, .. } => Some(*reason),
            _ => None,
        }
    }
}

/// Explicit decision tree for the coupling from variable `x`.
#[derive(Clone, Debug)]
pub struct StochasticTree {
    pub x: u32,
    pub tau: usize,
    pub nodes: Vec<TreeNode>,
}

pub const ROOT: NodeId = 0;

impl StochasticTree {
    pub fn node(&self, id: NodeId) -> &TreeNode {
        &self.nodes[id]
    }

    pub fn leaves(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.nodes.len()).filter(|&id| self.nodes[id].is_leaf())
    }

    pub fn internal_count(&self) -> usize {
        self.nodes.iter().filter(|n| !n.is_leaf()).count()
    }

    pub fn is_annotated(&self) -> bool {
        self.nodes
            .iter()
            .all(|n| n.is_leaf() || n.edge_probs.is_some())
    }

    /// Root-to-leaf edge path as `(node, edge index)` pairs.
    pub fn path_to(&self, leaf: NodeId) -> Vec<(NodeId, usize)> {
        let mut path = Vec::new();
        let mut current = leaf;
        while let Some((parent, idx)) = self.nodes[current].parent {
            path.push((parent, idx));
            current = parent;
        }
        path.reverse();
        path
    }
}

/// Build the full tree of reachable states using only the deterministic
/// transition function. No probabilities are annotated.
pub fn build_tree(
    phi: &CnfFormula,
    x: u32,
    marking: &Marking,
    tau: usize,
    node_budget: usize,
) -> Result<StochasticTree> {
    if tau < 1 || node_budget < 1 {
        return Err(Error::InvalidParameter {
            what: "tau/node_budget",
            why: "stopping threshold and node budget must be positive".into(),
        });
    }
    let mut nodes: Vec<TreeNode> = Vec::new();
    let mut queue: Vec<NodeId> = Vec::new();

    let push_node = |nodes: &mut Vec<TreeNode>,
                         state: CouplingState,
                         parent: Option<(NodeId, usize)>|
     -> Result<NodeId> {
        if nodes.len() >= node_budget {
            return Err(Error::TreeBudget {
                nodes: nodes.len(),
                cap: node_budget,
            });
        }
        let mut advanced = state.clone();
        let mut trace = Vec::new();
        let kind = match advanced.advance(phi, marking, tau, &mut trace) {
            NextStep::SetVar { var } => NodeKind::Internal {
                var,
                post: advanced,
                children: [0; 4],
            },
            NextStep::Terminated => NodeKind::Leaf {
                reason: Termination::Coupled,
                final_state: advanced,
            },
            NextStep::Truncated => NodeKind::Leaf {
                reason: Termination::Truncated,
                final_state: advanced,
            },
        };
        nodes.push(TreeNode {
            state,
            kind,
            parent,
            edge_probs: None,
            mass: None,
            poisoned: false,
        });
        Ok(nodes.len() - 1)
    };

    let root_id = push_node(&mut nodes, CouplingState::root(phi, x), None)?;
    queue.push(root_id);

    while let Some(id) = queue.pop() {
        let (var, post) = match &nodes[id].kind {
            NodeKind::Internal { var, post, .. } => (*var, post.clone()),
            NodeKind::Leaf { .. } => continue,
        };
        let mut children = [0; 4];
        for (idx, (v1, v2)) in EDGE_ORDER.iter().enumerate() {
            let mut child_state = post.clone();
            child_state.set_var(var, *v1, *v2);
            let child_id = push_node(&mut nodes, child_state, Some((id, idx)))?;
            children[idx] = child_id;
            queue.push(child_id);
        }
        if let NodeKind::Internal { children: slot, .. } = &mut nodes[id].kind {
            *slot = children;
        }
    }

    Ok(StochasticTree { x, tau, nodes })
}

/// Annotate every edge with the coupling joint probability computed from the
/// exact conditional marginals at that state. Subtrees reached only with
/// probability zero are marked poisoned and never queried.
pub fn annotate_probabilities(
    mut tree: StochasticTree,
    phi: &CnfFormula,
    oracle: &mut dyn MarginalOracle,
) -> Result<StochasticTree> {
    let mut stack: Vec<(NodeId, Rat, bool)> = vec![(ROOT, Rat::from_integer(1.into()), false)];
    while let Some((id, mass, poisoned)) = stack.pop() {
        tree.nodes[id].mass = Some(mass.clone());
        tree.nodes[id].poisoned = poisoned;
        let (var, post, children) = match &tree.nodes[id].kind {
            NodeKind::Internal { var, post, children } => (*var, post.clone(), *children),
            NodeKind::Leaf { .. } => continue,
        };
        if poisoned || mass == rat_zero() {
            tree.nodes[id].edge_probs = Some([rat_zero(), rat_zero(), rat_zero(), rat_zero()]);
            for &child in &children {
                stack.push((child, rat_zero(), true));
            }
            continue;
        }
        let d1 = oracle.marginal(phi, &post.a1(), var)?;
        let d2 = oracle.marginal(phi, &post.a2(), var)?;
        let table = couple_table(&d1, &d2);
        for (idx, &child) in children.iter().enumerate() {
            let child_mass = &mass * &table[idx];
            let child_poisoned = table[idx] == rat_zero();
            stack.push((child, child_mass, child_poisoned));
        }
        tree.nodes[id].edge_probs = Some(table);
    }
    Ok(tree)
}

/// The pair of one-sided path products at a leaf.
///
/// `p1` multiplies, over each decision on the root-to-leaf path, the ratio
/// of the taken edge's probability to the total probability of edges
/// agreeing with the A1 choice; `p2` swaps the roles of A1 and A2.
pub fn path_products(tree: &StochasticTree, leaf: NodeId) -> Result<(Rat, Rat)> {
    assert!(tree.node(leaf).is_leaf(), "path products are per leaf");
    let mut p1 = Rat::from_integer(1.into());
    let mut p2 = Rat::from_integer(1.into());
    for (node, idx) in tree.path_to(leaf) {
        let probs = tree.nodes[node]
            .edge_probs
            .as_ref()
            .expect("path_products requires an annotated tree");
        let (v1, v2) = EDGE_ORDER[idx];
        let q1 = &probs[edge_index(v1, v2)];
        let q2_same_a1 = &probs[edge_index(v1, !v2)];
        let q2_same_a2 = &probs[edge_index(!v1, v2)];
        let denom1 = q1 + q2_same_a1;
        let denom2 = q1 + q2_same_a2;
        if denom1 == rat_zero() || denom2 == rat_zero() {
            return Err(Error::DegeneratePath);
        }
        p1 *= q1 / denom1;
        p2 *= q1 / denom2;
    }
    Ok((p1, p2))
}

/// Satisfying-completion counts of the two inner formulas at a coupled leaf,
/// over the unset inner variables, so that `n1/n2` is the ratio of counts
/// consistent with A1 and A2. Truncated leaves yield no constraint.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LeafCounts {
    Counts { n1: ExactCount, n2: ExactCount },
    Unconstrained,
}

pub fn leaf_counts(
    phi: &CnfFormula,
    tree: &StochasticTree,
    leaf: NodeId,
    budget: &OracleBudget,
) -> Result<LeafCounts> {
    let NodeKind::Leaf { reason, final_state } = &tree.node(leaf).kind else {
        panic!("leaf_counts called on an internal node");
    };
    if *reason == Termination::Truncated {
        return Ok(LeafCounts::Unconstrained);
    }
    let outcome = finalize(phi, final_state, Termination::Coupled);
    let unset_inner = outcome
        .v_inner
        .iter()
        .filter(|v| !final_state.is_set(**v))
        .count();
    let shift = phi.num_vars() as usize - unset_inner;
    // Inner formulas mention only unset inner variables; the raw count over
    // all n variables carries an exact factor 2^shift.
    let count_inner = |inner: &CnfFormula| -> Result<ExactCount> {
        let raw = count_sat(inner, budget)?;
        let reduced = raw.value() >> shift;
        debug_assert_eq!(&(&reduced << shift), raw.value());
        Ok(ExactCount(reduced))
    };
    let n1 = count_inner(&outcome.phi_i1)?;
    let n2 = count_inner(&outcome.phi_i2)?;
    Ok(LeafCounts::Counts { n1, n2 })
}

/// One-sided view of the tree from the perspective of one assignment: the
/// own-side choice copies mass, the other-side choice splits it.
#[derive(Clone, Debug)]
pub struct OneSidedTree {
    pub side: crate::coupling::Side,
    /// Incoming split-edge of each state node (`None` for the root).
    pub state_incoming: BTreeMap<NodeId, Option<usize>>,
    pub edges: Vec<OsEdge>,
}

#[derive(Clone, Debug)]
pub struct OsEdge {
    pub kind: OsEdgeKind,
    /// Annotated total probability (present when the source tree was).
    pub mass: Option<Rat>,
}

#[derive(Clone, Debug)]
pub enum OsEdgeKind {
    /// State node -> mid node for the own-side choice.
    Copy { state: NodeId, own_choice: bool },
    /// Mid node -> state node for the other-side choice; `flip` marks
    /// disagreement between the two sides.
    Split {
        state: NodeId,
        own_choice: bool,
        other_choice: bool,
        to: NodeId,
        flip: bool,
    },
}

impl OneSidedTree {
    /// Mass into a leaf state node: the incoming split edge's mass, or 1 for
    /// a root leaf.
    pub fn leaf_mass(&self, leaf: NodeId) -> Option<Rat> {
        match self.state_incoming.get(&leaf) {
            Some(Some(edge)) => self.edges[*edge].mass.clone(),
            Some(None) => Some(Rat::from_integer(1.into())),
            None => None,
        }
    }
}

/// A matched pair of root-to-leaf paths in the two one-sided trees, both
/// projecting to the same two-sided leaf.
#[derive(Clone, Debug)]
pub struct MatchedLeafPair {
    pub s_leaf: NodeId,
    pub coupled: bool,
    /// Incoming edge ids in S1/S2 (`None` when the root is itself a leaf).
    pub s1_edge: Option<usize>,
    pub s2_edge: Option<usize>,
    /// Annotated leaf masses (total probabilities) when available.
    pub p1: Option<Rat>,
    pub p2: Option<Rat>,
}

fn build_one_sided(tree: &StochasticTree, side: crate::coupling::Side) -> OneSidedTree {
    use crate::coupling::Side;
    let annotated = tree.is_annotated();
    let mut edges: Vec<OsEdge> = Vec::new();
    let mut state_incoming: BTreeMap<NodeId, Option<usize>> = BTreeMap::new();
    // (node, incoming edge id, incoming mass)
    let mut stack: Vec<(NodeId, Option<usize>, Option<Rat>)> =
        vec![(ROOT, None, annotated.then(|| Rat::from_integer(1.into())))];
    while let Some((id, incoming, mass)) = stack.pop() {
        state_incoming.insert(id, incoming);
        let NodeKind::Internal { children, .. } = &tree.nodes[id].kind else {
            continue;
        };
        let probs = tree.nodes[id].edge_probs.as_ref();
        for own_choice in [true, false] {
            let copy_id = edges.len();
            edges.push(OsEdge {
                kind: OsEdgeKind::Copy { state: id, own_choice },
                mass: mass.clone(),
            });
            for other_choice in [true, false] {
                let (v1, v2) = match side {
                    Side::A1 => (own_choice, other_choice),
                    Side::A2 => (other_choice, own_choice),
                };
                let child = children[edge_index(v1, v2)];
                let split_mass = match (probs, &mass) {
                    (Some(table), Some(m)) => {
                        let q_taken = &table[edge_index(v1, v2)];
                        let q_alt = match side {
                            Side::A1 => &table[edge_index(v1, !v2)],
                            Side::A2 => &table[edge_index(!v1, v2)],
                        };
                        let denom = q_taken + q_alt;
                        if denom == rat_zero() {
                            // The own-side choice has marginal zero; the
                            // split ratio is undefined. Conservation still
                            // needs the masses to sum to m: ride the agree
                            // edge, leaving the capped flip edge at zero.
                            if own_choice == other_choice {
                                Some(m.clone())
                            } else {
                                Some(rat_zero())
                            }
                        } else {
                            Some(m * q_taken / denom)
                        }
                    }
                    _ => None,
                };
                let split_id = edges.len();
                edges.push(OsEdge {
                    kind: OsEdgeKind::Split {
                        state: id,
                        own_choice,
                        other_choice,
                        to: child,
                        flip: own_choice != other_choice,
                    },
                    mass: split_mass.clone(),
                });
                let _ = copy_id;
                stack.push((child, Some(split_id), split_mass));
            }
        }
    }
    OneSidedTree {
        side,
        state_incoming,
        edges,
    }
}

/// Split each four-way decision into an own-side choice (mass copied) and an
/// other-side choice (mass split), for both perspectives, and match leaves
/// through the shared underlying tree.
pub fn to_one_sided(
    tree: &StochasticTree,
) -> (OneSidedTree, OneSidedTree, Vec<MatchedLeafPair>) {
    let s1 = build_one_sided(tree, crate::coupling::Side::A1);
    let s2 = build_one_sided(tree, crate::coupling::Side::A2);
    let mut matching = Vec::new();
    for leaf in tree.leaves() {
        let coupled = tree.node(leaf).leaf_reason() == Some(Termination::Coupled);
        let s1_edge = s1.state_incoming[&leaf];
        let s2_edge = s2.state_incoming[&leaf];
        matching.push(MatchedLeafPair {
            s_leaf: leaf,
            coupled,
            s1_edge,
            s2_edge,
            p1: s1.leaf_mass(leaf),
            p2: s2.leaf_mass(leaf),
        });
    }
    (s1, s2, matching)
}

/// Maximum over coupled positive-mass leaves of the exact balance residual
/// `|p1 n1 (1-q) - p2 n2 q|`; the contract is that this is exactly zero.
pub fn check_balance(
    phi: &CnfFormula,
    tree: &StochasticTree,
    budget: &OracleBudget,
) -> Result<Rat> {
    let q = crate::oracle::exact_marginal(phi, &PartialAssignment::new(), tree.x, budget)?;
    let one_minus_q = q.complement();
    let mut max_residual = rat_zero();
    for leaf in tree.leaves() {
        let node = tree.node(leaf);
        if node.leaf_reason() != Some(Termination::Coupled) {
            continue;
        }
        let mass = node
            .mass
            .as_ref()
            .expect("check_balance requires an annotated tree");
        if *mass == rat_zero() {
            continue;
        }
        let LeafCounts::Counts { n1, n2 } = leaf_counts(phi, tree, leaf, budget)? else {
            continue;
        };
        let (p1, p2) = path_products(tree, leaf)?;
        let rhs = p2 * n2.to_rat() * q.as_rat();
        if rhs == rat_zero() {
            continue;
        }
        let lhs = p1 * n1.to_rat() * one_minus_q.as_rat();
        let residual = (lhs - rhs).abs();
        if residual > max_residual {
            max_residual = residual;
        }
    }
    Ok(max_residual)
}

fn state_json(state: &CouplingState) -> Value {
    json!({
        "v_inner": state.v_inner().iter().collect::<Vec<_>>(),
        "set": state
            .set_vars()
            .iter()
            .map(|(v, (a, b))| json!([v, a, b]))
            .collect::<Vec<_>>(),
        "current": state.current_clause(),
        "remaining": state.remaining().iter().collect::<Vec<_>>(),
    })
}

/// Debug serialization: node states, edges, rationals as `num/den` strings.
pub fn dump_tree_json(tree: &StochasticTree) -> Value {
    let nodes: Vec<Value> = tree
        .nodes
        .iter()
        .map(|n| {
            let kind = match &n.kind {
                NodeKind::Internal { var, children, .. } => json!({
                    "type": "internal",
                    "sets": var,
                    "children": children.to_vec(),
                }),
                NodeKind::Leaf { reason, .. } => json!({
                    "type": "leaf",
                    "reason": match reason {
                        Termination::Coupled => "coupled",
                        Termination::Truncated => "truncated",
                    },
                }),
            };
            json!({
                "state": state_json(&n.state),
                "kind": kind,
                "edge_probs": n.edge_probs.as_ref().map(|ps| {
                    ps.iter().map(rat_to_string).collect::<Vec<_>>()
                }),
                "mass": n.mass.as_ref().map(rat_to_string),
                "poisoned": n.poisoned,
            })
        })
        .collect();
    json!({
        "x": tree.x,
        "tau": tree.tau,
        "edge_order": ["TT", "TF", "FT", "FF"],
        "nodes": nodes,
    })
}

/// Sum over leaves of root-to-leaf path probabilities (exact).
pub fn leaf_mass_total(tree: &StochasticTree) -> Rat {
    let mut total = rat_zero();
    for leaf in tree.leaves() {
        if let Some(mass) = &tree.node(leaf).mass {
            total += mass;
        }
    }
    total
}

/// Largest conditional flip ratio of the true coupling over positive-mass
/// decisions, from both one-sided perspectives. The certification program's
/// flip cap `4/s` admits the true masses as a witness exactly when this
/// ratio stays below the cap.
pub fn max_flip_ratio(tree: &StochasticTree) -> Rat {
    let mut worst = rat_zero();
    for node in &tree.nodes {
        if node.is_leaf() {
            continue;
        }
        let Some(mass) = &node.mass else { continue };
        if *mass == rat_zero() {
            continue;
        }
        let probs = node.edge_probs.as_ref().expect("annotated tree");
        for own in [true, false] {
            // A1 perspective: own-side value `own`, flip means A2 differs.
            let denom1 = &probs[edge_index(own, true)] + &probs[edge_index(own, false)];
            if denom1 != rat_zero() {
                let ratio = &probs[edge_index(own, !own)] / &denom1;
                worst = worst.max(ratio);
            }
            // A2 perspective.
            let denom2 = &probs[edge_index(true, own)] + &probs[edge_index(false, own)];
            if denom2 != rat_zero() {
                let ratio = &probs[edge_index(!own, own)] / &denom2;
                worst = worst.max(ratio);
            }
        }
    }
    worst
}

/// Probability mass that escaped into truncated leaves.
pub fn truncated_mass(tree: &StochasticTree) -> Rat {
    let mut total = rat_zero();
    for leaf in tree.leaves() {
        let node = tree.node(leaf);
        if node.leaf_reason() == Some(Termination::Truncated) {
            if let Some(mass) = &node.mass {
                total += mass;
            }
        }
    }
    total
}
