//! CNF formula representation, DIMACS parsing, simplification under partial
//! assignments, connected-component decomposition and structural statistics.
//!
//! Variables are 1-based indices. All types are immutable after construction
//! and all operations are pure functions.

use num_traits::Zero;
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use thiserror::Error;

use crate::numeric::{e_enclosure, exp_enclosure, pow_rat, rat, Rat};
use crate::{Error, Result};

/// A variable or its negation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Literal {
    pub var: u32,
    pub negated: bool,
}

impl Literal {
    pub fn pos(var: u32) -> Self {
        Literal { var, negated: false }
    }

    pub fn neg(var: u32) -> Self {
        Literal { var, negated: true }
    }

    pub fn from_dimacs(code: i64) -> Option<Self> {
        if code == 0 || code.unsigned_abs() > u32::MAX as u64 {
            return None;
        }
        Some(Literal {
            var: code.unsigned_abs() as u32,
            negated: code < 0,
        })
    }

    pub fn to_dimacs(self) -> i64 {
        if self.negated {
            -(self.var as i64)
        } else {
            self.var as i64
        }
    }

    /// Truth value under `value` assigned to the variable.
    pub fn eval(self, value: bool) -> bool {
        value != self.negated
    }

    /// The variable value that makes this literal true.
    pub fn satisfying_value(self) -> bool {
        !self.negated
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_dimacs())
    }
}

/// Truth status of a clause under a partial assignment.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClauseStatus {
    Satisfied,
    Falsified,
    Undetermined,
}

/// A disjunction of literals over distinct variables. The empty clause is
/// representable and is always falsified.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Clause {
    literals: Vec<Literal>,
}

impl Clause {
    pub fn new(literals: Vec<Literal>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for lit in &literals {
            if lit.var == 0 {
                return Err(Error::InvalidFormula("variable index 0 is reserved".into()));
            }
            if !seen.insert(lit.var) {
                return Err(Error::InvalidFormula(format!(
                    "duplicate variable {} in clause",
                    lit.var
                )));
            }
        }
        Ok(Clause { literals })
    }

    pub fn empty() -> Self {
        Clause { literals: Vec::new() }
    }

    pub fn literals(&self) -> &[Literal] {
        &self.literals
    }

    pub fn width(&self) -> usize {
        self.literals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.literals.is_empty()
    }

    pub fn vars(&self) -> impl Iterator<Item = u32> + '_ {
        self.literals.iter().map(|l| l.var)
    }

    pub fn contains_var(&self, var: u32) -> bool {
        self.literals.iter().any(|l| l.var == var)
    }

    /// Sorted `(var, negated)` pairs; clause identity up to literal order.
    pub fn canonical(&self) -> Vec<(u32, bool)> {
        let mut v: Vec<(u32, bool)> = self.literals.iter().map(|l| (l.var, l.negated)).collect();
        v.sort_unstable();
        v
    }

    pub fn status(&self, assignment: &PartialAssignment) -> ClauseStatus {
        let mut undetermined = false;
        for lit in &self.literals {
            match assignment.get(lit.var) {
                Some(v) => {
                    if lit.eval(v) {
                        return ClauseStatus::Satisfied;
                    }
                }
                None => undetermined = true,
            }
        }
        if undetermined {
            ClauseStatus::Undetermined
        } else {
            ClauseStatus::Falsified
        }
    }

    pub fn satisfied_by(&self, assignment: &TotalAssignment) -> bool {
        self.literals.iter().any(|l| l.eval(assignment.get(l.var)))
    }
}

/// Structural statistics of a formula.
///
/// `big_d` is the dependency-degree bound `C * d * k_min` with
/// `C = ceil(k_max / k_min)`, the usual `2dk` / `6dk` shapes for width
/// windows `[k, 2k]` and `[k, 6k]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FormulaStats {
    pub n: usize,
    pub m: usize,
    /// Maximum number of clauses containing any single variable.
    pub d: usize,
    pub k_min: usize,
    pub k_max: usize,
    /// Upper bound on the dependency-graph degree.
    pub big_d: u64,
}

impl FormulaStats {
    /// Width-window ratio `C = ceil(k_max / k_min)`; 0 for empty formulas.
    pub fn width_ratio(&self) -> usize {
        if self.k_min == 0 {
            0
        } else {
            self.k_max.div_ceil(self.k_min)
        }
    }
}

/// A CNF formula with cached structural statistics.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CnfFormula {
    num_vars: u32,
    clauses: Vec<Clause>,
    stats: FormulaStats,
}

impl CnfFormula {
    pub fn new(num_vars: u32, clauses: Vec<Clause>) -> Result<Self> {
        for clause in &clauses {
            for lit in clause.literals() {
                if lit.var > num_vars {
                    return Err(Error::InvalidFormula(format!(
                        "literal {} out of range 1..={}",
                        lit, num_vars
                    )));
                }
            }
        }
        let stats = compute_stats(num_vars, &clauses);
        Ok(CnfFormula {
            num_vars,
            clauses,
            stats,
        })
    }

    pub fn empty(num_vars: u32) -> Self {
        CnfFormula {
            num_vars,
            clauses: Vec::new(),
            stats: compute_stats(num_vars, &[]),
        }
    }

    pub fn num_vars(&self) -> u32 {
        self.num_vars
    }

    pub fn num_clauses(&self) -> usize {
        self.clauses.len()
    }

    pub fn clauses(&self) -> &[Clause] {
        &self.clauses
    }

    pub fn clause(&self, idx: usize) -> &Clause {
        &self.clauses[idx]
    }

    pub fn stats(&self) -> &FormulaStats {
        &self.stats
    }

    pub fn satisfied_by(&self, assignment: &TotalAssignment) -> bool {
        self.clauses.iter().all(|c| c.satisfied_by(assignment))
    }

    /// Variables appearing in at least one clause.
    pub fn mentioned_vars(&self) -> BTreeSet<u32> {
        let mut set = BTreeSet::new();
        for c in &self.clauses {
            set.extend(c.vars());
        }
        set
    }
}

fn compute_stats(num_vars: u32, clauses: &[Clause]) -> FormulaStats {
    let mut degree = vec![0usize; num_vars as usize + 1];
    let mut k_min = usize::MAX;
    let mut k_max = 0usize;
    for clause in clauses {
        k_min = k_min.min(clause.width());
        k_max = k_max.max(clause.width());
        for lit in clause.literals() {
            degree[lit.var as usize] += 1;
        }
    }
    if clauses.is_empty() {
        k_min = 0;
    }
    let d = degree.iter().copied().max().unwrap_or(0);
    let ratio = if k_min == 0 { 0 } else { k_max.div_ceil(k_min) };
    let big_d = ratio as u64 * d as u64 * k_min as u64;
    FormulaStats {
        n: num_vars as usize,
        m: clauses.len(),
        d,
        k_min,
        k_max,
        big_d,
    }
}

/// A per-variable state in {True, False, Unset}; absent keys are Unset.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PartialAssignment {
    values: BTreeMap<u32, bool>,
}

impl PartialAssignment {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs<I: IntoIterator<Item = (u32, bool)>>(pairs: I) -> Self {
        PartialAssignment {
            values: pairs.into_iter().collect(),
        }
    }

    pub fn get(&self, var: u32) -> Option<bool> {
        self.values.get(&var).copied()
    }

    pub fn is_set(&self, var: u32) -> bool {
        self.values.contains_key(&var)
    }

    pub fn set(&mut self, var: u32, value: bool) {
        self.values.insert(var, value);
    }

    pub fn unset(&mut self, var: u32) {
        self.values.remove(&var);
    }

    pub fn with(mut self, var: u32, value: bool) -> Self {
        self.set(var, value);
        self
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, bool)> + '_ {
        self.values.iter().map(|(v, b)| (*v, *b))
    }

    pub fn vars(&self) -> impl Iterator<Item = u32> + '_ {
        self.values.keys().copied()
    }

    /// True when every variable in the domain is within `1..=n`.
    pub fn within(&self, n: u32) -> bool {
        self.values.keys().all(|v| (1..=n).contains(v))
    }
}

/// A full assignment to variables `1..=n`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TotalAssignment {
    values: Vec<bool>,
}

impl TotalAssignment {
    pub fn new(values: Vec<bool>) -> Self {
        TotalAssignment { values }
    }

    pub fn num_vars(&self) -> u32 {
        self.values.len() as u32
    }

    pub fn get(&self, var: u32) -> bool {
        self.values[(var - 1) as usize]
    }

    pub fn set(&mut self, var: u32, value: bool) {
        self.values[(var - 1) as usize] = value;
    }

    pub fn values(&self) -> &[bool] {
        &self.values
    }

    pub fn to_partial(&self) -> PartialAssignment {
        PartialAssignment::from_pairs(
            self.values
                .iter()
                .enumerate()
                .map(|(i, v)| (i as u32 + 1, *v)),
        )
    }

    /// Compact string form, e.g. `TFFT`.
    pub fn bits(&self) -> String {
        self.values
            .iter()
            .map(|v| if *v { 'T' } else { 'F' })
            .collect()
    }
}

/// A marked/unmarked labeling of the variables.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Marking {
    marked: BTreeSet<u32>,
}

impl Marking {
    pub fn new(marked: BTreeSet<u32>) -> Self {
        Marking { marked }
    }

    pub fn is_marked(&self, var: u32) -> bool {
        self.marked.contains(&var)
    }

    pub fn marked(&self) -> &BTreeSet<u32> {
        &self.marked
    }

    pub fn len(&self) -> usize {
        self.marked.len()
    }

    pub fn is_empty(&self) -> bool {
        self.marked.is_empty()
    }
}

/// DIMACS parse errors, each naming the offending line.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("line {line}: malformed header {text:?} (expected `p cnf <vars> <clauses>`)")]
    MalformedHeader { line: usize, text: String },
    #[error("missing `p cnf` header")]
    MissingHeader,
    #[error("line {line}: unexpected token {token:?}")]
    BadToken { line: usize, token: String },
    #[error("line {line}: literal {lit} out of range 1..={num_vars}")]
    LiteralOutOfRange { line: usize, lit: i64, num_vars: u32 },
    #[error("line {line}: duplicate variable {var} in clause")]
    DuplicateVariable { line: usize, var: u32 },
    #[error("line {line}: clause not terminated by 0 at end of input")]
    UnterminatedClause { line: usize },
    #[error("clause count mismatch: header declares {declared}, found {found}")]
    ClauseCountMismatch { declared: usize, found: usize },
}

/// Parse DIMACS CNF text: a `p cnf n m` header, `c` comment lines, clauses as
/// whitespace-separated signed integers terminated by 0.
pub fn parse_dimacs(text: &str) -> std::result::Result<CnfFormula, ParseError> {
    let mut header: Option<(u32, usize)> = None;
    let mut clauses: Vec<Clause> = Vec::new();
    let mut current: Vec<Literal> = Vec::new();
    let mut current_vars: BTreeSet<u32> = BTreeSet::new();
    let mut last_line = 0usize;

    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        last_line = lineno;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('c') {
            continue;
        }
        if trimmed.starts_with('p') {
            let parts: Vec<&str> = trimmed.split_whitespace().collect();
            if parts.len() != 4 || parts[0] != "p" || parts[1] != "cnf" {
                return Err(ParseError::MalformedHeader {
                    line: lineno,
                    text: trimmed.to_string(),
                });
            }
            let n: u32 = parts[2].parse().map_err(|_| ParseError::MalformedHeader {
                line: lineno,
                text: trimmed.to_string(),
            })?;
            let m: usize = parts[3].parse().map_err(|_| ParseError::MalformedHeader {
                line: lineno,
                text: trimmed.to_string(),
            })?;
            if header.is_some() {
                return Err(ParseError::MalformedHeader {
                    line: lineno,
                    text: "duplicate header".to_string(),
                });
            }
            header = Some((n, m));
            continue;
        }
        let (num_vars, _) = header.ok_or(ParseError::MissingHeader)?;
        for token in trimmed.split_whitespace() {
            let code: i64 = token.parse().map_err(|_| ParseError::BadToken {
                line: lineno,
                token: token.to_string(),
            })?;
            if code == 0 {
                clauses.push(Clause {
                    literals: std::mem::take(&mut current),
                });
                current_vars.clear();
                continue;
            }
            let lit = Literal::from_dimacs(code).ok_or(ParseError::BadToken {
                line: lineno,
                token: token.to_string(),
            })?;
            if lit.var > num_vars {
                return Err(ParseError::LiteralOutOfRange {
                    line: lineno,
                    lit: code,
                    num_vars,
                });
            }
            if !current_vars.insert(lit.var) {
                return Err(ParseError::DuplicateVariable {
                    line: lineno,
                    var: lit.var,
                });
            }
            current.push(lit);
        }
    }

    let (num_vars, declared) = header.ok_or(ParseError::MissingHeader)?;
    if !current.is_empty() {
        return Err(ParseError::UnterminatedClause { line: last_line });
    }
    if clauses.len() != declared {
        return Err(ParseError::ClauseCountMismatch {
            declared,
            found: clauses.len(),
        });
    }
    let stats = compute_stats(num_vars, &clauses);
    Ok(CnfFormula {
        num_vars,
        clauses,
        stats,
    })
}

/// Emit DIMACS text; `parse_dimacs(emit_dimacs(f))` reproduces `f`.
pub fn emit_dimacs(phi: &CnfFormula) -> String {
    let mut out = format!("p cnf {} {}\n", phi.num_vars(), phi.num_clauses());
    for clause in phi.clauses() {
        for lit in clause.literals() {
            out.push_str(&lit.to_dimacs().to_string());
            out.push(' ');
        }
        out.push_str("0\n");
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SimplifyStatus {
    Ok,
    Falsified,
}

/// Remove falsified literals and drop satisfied clauses. The returned formula
/// keeps the original variable indexing; a clause reduced to empty marks the
/// assignment as falsifying.
pub fn simplify(phi: &CnfFormula, assignment: &PartialAssignment) -> (CnfFormula, SimplifyStatus) {
    let mut status = SimplifyStatus::Ok;
    let mut clauses = Vec::new();
    for clause in phi.clauses() {
        let mut kept = Vec::new();
        let mut satisfied = false;
        for lit in clause.literals() {
            match assignment.get(lit.var) {
                Some(v) => {
                    if lit.eval(v) {
                        satisfied = true;
                        break;
                    }
                }
                None => kept.push(*lit),
            }
        }
        if satisfied {
            continue;
        }
        if kept.is_empty() {
            status = SimplifyStatus::Falsified;
        }
        clauses.push(Clause { literals: kept });
    }
    let stats = compute_stats(phi.num_vars(), &clauses);
    (
        CnfFormula {
            num_vars: phi.num_vars(),
            clauses,
            stats,
        },
        status,
    )
}

/// One variable-connected group of clauses, reindexed to `1..=vars.len()`.
/// `vars[i]` is the original index of new variable `i + 1`.
#[derive(Clone, Debug)]
pub struct Component {
    pub formula: CnfFormula,
    pub vars: Vec<u32>,
    pub clause_indices: Vec<usize>,
}

/// Partition of a formula into variable-connected clause groups plus the
/// variables mentioned in no clause.
#[derive(Clone, Debug)]
pub struct Decomposition {
    pub components: Vec<Component>,
    pub free_vars: Vec<u32>,
}

impl Decomposition {
    pub fn num_free(&self) -> usize {
        self.free_vars.len()
    }
}

/// Group clauses into maximal variable-connected components.
pub fn connected_components(phi: &CnfFormula) -> Decomposition {
    let m = phi.num_clauses();
    let mut parent: Vec<usize> = (0..m).collect();

    fn find(parent: &mut Vec<usize>, i: usize) -> usize {
        let mut root = i;
        while parent[root] != root {
            root = parent[root];
        }
        let mut cur = i;
        while parent[cur] != root {
            let next = parent[cur];
            parent[cur] = root;
            cur = next;
        }
        root
    }

    let mut owner: BTreeMap<u32, usize> = BTreeMap::new();
    for (idx, clause) in phi.clauses().iter().enumerate() {
        for var in clause.vars() {
            match owner.get(&var) {
                Some(&other) => {
                    let a = find(&mut parent, idx);
                    let b = find(&mut parent, other);
                    if a != b {
                        parent[a] = b;
                    }
                }
                None => {
                    owner.insert(var, idx);
                }
            }
        }
    }

    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for idx in 0..m {
        let root = find(&mut parent, idx);
        groups.entry(root).or_default().push(idx);
    }

    let mut mentioned = BTreeSet::new();
    let mut components = Vec::new();
    for (_, clause_indices) in groups {
        let mut vars: BTreeSet<u32> = BTreeSet::new();
        for &ci in &clause_indices {
            vars.extend(phi.clause(ci).vars());
        }
        mentioned.extend(vars.iter().copied());
        let vars: Vec<u32> = vars.into_iter().collect();
        let index_of: BTreeMap<u32, u32> = vars
            .iter()
            .enumerate()
            .map(|(i, v)| (*v, i as u32 + 1))
            .collect();
        let clauses: Vec<Clause> = clause_indices
            .iter()
            .map(|&ci| Clause {
                literals: phi
                    .clause(ci)
                    .literals()
                    .iter()
                    .map(|l| Literal {
                        var: index_of[&l.var],
                        negated: l.negated,
                    })
                    .collect(),
            })
            .collect();
        let num_vars = vars.len() as u32;
        let stats = compute_stats(num_vars, &clauses);
        components.push(Component {
            formula: CnfFormula {
                num_vars,
                clauses,
                stats,
            },
            vars,
            clause_indices,
        });
    }

    let free_vars: Vec<u32> = (1..=phi.num_vars())
        .filter(|v| !mentioned.contains(v))
        .collect();
    Decomposition {
        components,
        free_vars,
    }
}

/// Undirected graph on a variable subset; edges join variables co-occurring
/// in some clause of the original formula.
#[derive(Clone, Debug)]
pub struct VariableGraph {
    adj: BTreeMap<u32, BTreeSet<u32>>,
}

impl VariableGraph {
    pub fn vertices(&self) -> impl Iterator<Item = u32> + '_ {
        self.adj.keys().copied()
    }

    pub fn num_vertices(&self) -> usize {
        self.adj.len()
    }

    pub fn neighbors(&self, v: u32) -> impl Iterator<Item = u32> + '_ {
        self.adj.get(&v).into_iter().flatten().copied()
    }

    pub fn has_edge(&self, u: u32, v: u32) -> bool {
        self.adj.get(&u).is_some_and(|s| s.contains(&v))
    }

    pub fn contains(&self, v: u32) -> bool {
        self.adj.contains_key(&v)
    }

    /// BFS distances from every vertex of `sources` (distance to the nearest
    /// source). Unreachable vertices are absent from the map.
    pub fn multi_source_distances(&self, sources: &BTreeSet<u32>) -> BTreeMap<u32, usize> {
        let mut dist = BTreeMap::new();
        let mut queue = VecDeque::new();
        for &s in sources {
            if self.contains(s) {
                dist.insert(s, 0usize);
                queue.push_back(s);
            }
        }
        while let Some(u) = queue.pop_front() {
            let du = dist[&u];
            for w in self.neighbors(u).collect::<Vec<_>>() {
                if let std::collections::btree_map::Entry::Vacant(e) = dist.entry(w) {
                    e.insert(du + 1);
                    queue.push_back(w);
                }
            }
        }
        dist
    }

    pub fn is_connected(&self) -> bool {
        let Some(first) = self.vertices().next() else {
            return true;
        };
        let sources = BTreeSet::from([first]);
        self.multi_source_distances(&sources).len() == self.num_vertices()
    }
}

/// Graph on `varset` with edges between variables sharing a clause of `phi`.
pub fn build_variable_graph(phi: &CnfFormula, varset: &BTreeSet<u32>) -> VariableGraph {
    let mut adj: BTreeMap<u32, BTreeSet<u32>> = varset.iter().map(|v| (*v, BTreeSet::new())).collect();
    for clause in phi.clauses() {
        let inside: Vec<u32> = clause.vars().filter(|v| varset.contains(v)).collect();
        for i in 0..inside.len() {
            for j in i + 1..inside.len() {
                adj.get_mut(&inside[i]).unwrap().insert(inside[j]);
                adj.get_mut(&inside[j]).unwrap().insert(inside[i]);
            }
        }
    }
    VariableGraph { adj }
}

/// The local-lemma-style side conditions used by the different constructions.
#[derive(Clone, Debug, PartialEq)]
pub enum LllVariant {
    /// `e (D+1) <= 2^k`
    Existence,
    /// `e D s <= 2^k`, for the uniform-marginal bound with slack `s`.
    MarginalBound(Rat),
    /// `2 e (D+1) <= c0^k` with `c0 = exp(1/32)`.
    Marking,
    /// `e (D+1) <= (32/31)^k`
    SeedPartial,
}

/// Evaluate the quoted inequality with `k = k_min` and `D = big_d`.
///
/// Comparisons are exact: the transcendental constants are replaced by
/// rigorous rational enclosures, and the answer is `true` only when the
/// inequality provably holds (an indeterminate enclosure reports `false`).
pub fn check_lll_condition(stats: &FormulaStats, variant: &LllVariant) -> bool {
    let k = stats.k_min as u32;
    let d_big = Rat::from_integer(stats.big_d.into());
    let (_e_lo, e_hi) = e_enclosure();
    let two_pow_k = pow_rat(&rat(2, 1), k);
    match variant {
        LllVariant::Existence => e_hi * (d_big + Rat::from_integer(1.into())) <= two_pow_k,
        LllVariant::MarginalBound(s) => {
            assert!(*s > Rat::zero(), "slack must be positive");
            e_hi * d_big * s <= two_pow_k
        }
        LllVariant::Marking => {
            // rhs = exp(k/32); true only if 2 e (D+1) <= lower enclosure.
            let (rhs_lo, _) = exp_enclosure(&rat(k as i64, 32));
            rat(2, 1) * e_hi * (d_big + Rat::from_integer(1.into())) <= rhs_lo
        }
        LllVariant::SeedPartial => {
            let rhs = pow_rat(&rat(32, 31), k);
            e_hi * (d_big + Rat::from_integer(1.into())) <= rhs
        }
    }
}
