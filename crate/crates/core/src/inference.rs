//! Cause networks: fair-coin hidden variables observed through OR/AND
//! clauses. Posterior inference reduces to uniform sampling of the
//! satisfying assignments of a residual CNF formula.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cnf::{Clause, CnfFormula, Literal, PartialAssignment, TotalAssignment};
use crate::numeric::rat_ceil;
use crate::pipeline::{approx_sample, MarginalOracleHandle, PipelineConfig};
use crate::{Error, Result};
use num_traits::ToPrimitive;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObservedKind {
    Or,
    And,
}

/// One observed variable: an OR or AND of hidden literals.
#[derive(Clone, Debug)]
pub struct ObservedClause {
    pub kind: ObservedKind,
    pub literals: Vec<Literal>,
}

impl ObservedClause {
    pub fn eval(&self, hidden: &TotalAssignment) -> bool {
        match self.kind {
            ObservedKind::Or => self.literals.iter().any(|l| l.eval(hidden.get(l.var))),
            ObservedKind::And => self.literals.iter().all(|l| l.eval(hidden.get(l.var))),
        }
    }
}

/// A two-layer model: `num_hidden` fair-coin hidden variables and observed
/// OR/AND variables over them. Dependency widths span at most a factor of
/// two (validated on load) and the max hidden-variable fanout is recorded.
#[derive(Clone, Debug)]
pub struct CauseNetwork {
    num_hidden: u32,
    observed: Vec<ObservedClause>,
    k_min: usize,
    k_max: usize,
    d: usize,
}

impl CauseNetwork {
    pub fn new(num_hidden: u32, observed: Vec<ObservedClause>) -> Result<Self> {
        let mut degree = vec![0usize; num_hidden as usize + 1];
        let mut k_min = usize::MAX;
        let mut k_max = 0usize;
        for (i, obs) in observed.iter().enumerate() {
            if obs.literals.is_empty() {
                return Err(Error::InvalidNetwork(format!(
                    "observed variable {i} depends on no hidden variable"
                )));
            }
            let mut seen = std::collections::BTreeSet::new();
            for lit in &obs.literals {
                if lit.var == 0 || lit.var > num_hidden {
                    return Err(Error::InvalidNetwork(format!(
                        "observed variable {i} references hidden variable {} outside 1..={num_hidden}",
                        lit.var
                    )));
                }
                if !seen.insert(lit.var) {
                    return Err(Error::InvalidNetwork(format!(
                        "observed variable {i} repeats hidden variable {}",
                        lit.var
                    )));
                }
                degree[lit.var as usize] += 1;
            }
            k_min = k_min.min(obs.literals.len());
            k_max = k_max.max(obs.literals.len());
        }
        if observed.is_empty() {
            k_min = 0;
        }
        if k_min > 0 && k_max > 2 * k_min {
            return Err(Error::InvalidNetwork(format!(
                "dependency widths {k_min}..{k_max} span more than a factor of two"
            )));
        }
        let d = degree.iter().copied().max().unwrap_or(0);
        Ok(CauseNetwork {
            num_hidden,
            observed,
            k_min,
            k_max,
            d,
        })
    }

    pub fn num_hidden(&self) -> u32 {
        self.num_hidden
    }

    pub fn observed(&self) -> &[ObservedClause] {
        &self.observed
    }

    pub fn k_min(&self) -> usize {
        self.k_min
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    pub fn max_fanout(&self) -> usize {
        self.d
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: NetworkFile = serde_json::from_str(text)?;
        let observed = file
            .observed
            .into_iter()
            .enumerate()
            .map(|(i, o)| {
                let literals = o
                    .lits
                    .iter()
                    .map(|&code| {
                        Literal::from_dimacs(code).ok_or_else(|| {
                            Error::InvalidNetwork(format!(
                                "observed variable {i} has bad literal {code}"
                            ))
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(ObservedClause {
                    kind: o.kind,
                    literals,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        CauseNetwork::new(file.hidden, observed)
    }

    pub fn to_json(&self) -> String {
        let file = NetworkFile {
            hidden: self.num_hidden,
            observed: self
                .observed
                .iter()
                .map(|o| ObservedClauseFile {
                    kind: o.kind,
                    lits: o.literals.iter().map(|l| l.to_dimacs()).collect(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("network serializes")
    }
}

#[derive(Serialize, Deserialize)]
struct NetworkFile {
    hidden: u32,
    observed: Vec<ObservedClauseFile>,
}

#[derive(Serialize, Deserialize)]
struct ObservedClauseFile {
    kind: ObservedKind,
    lits: Vec<i64>,
}

/// Truth values of the observed variables, one per observed clause.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ObservationSet {
    pub values: Vec<bool>,
}

impl ObservationSet {
    pub fn new(values: Vec<bool>) -> Self {
        ObservationSet { values }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(ObservationSet {
            values: serde_json::from_str(text)?,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.values).expect("observations serialize")
    }
}

/// Draw hidden variables as independent fair coins and read off every
/// observed truth value.
pub fn sample_forward<R: Rng>(
    network: &CauseNetwork,
    rng: &mut R,
) -> (TotalAssignment, ObservationSet) {
    let hidden = TotalAssignment::new(
        (0..network.num_hidden)
            .map(|_| rng.gen_bool(0.5))
            .collect(),
    );
    let values = network.observed.iter().map(|o| o.eval(&hidden)).collect();
    (hidden, ObservationSet::new(values))
}

/// Why an observation set fails the regularity definition.
#[derive(Clone, Debug)]
pub struct RegularityViolation {
    pub clause: usize,
    pub false_or_neighbors: usize,
    pub true_and_neighbors: usize,
    pub threshold: usize,
}

#[derive(Clone, Debug)]
pub struct RegularityReport {
    pub regular: bool,
    pub threshold: usize,
    pub violations: Vec<RegularityViolation>,
    /// Per residual clause: (observed index, unset width, required width),
    /// the direct check the reduction relies on.
    pub residual_widths: Vec<(usize, usize, usize)>,
    pub residual_widths_ok: bool,
}

/// Check regularity: every clause is adjacent (shares a hidden variable)
/// with at most `floor(15 k / 16)` false ORs and as many true ANDs. Also
/// reports, for each residual clause of the preprocessing, whether it keeps
/// `ceil(7 k / 8)` unset variables.
pub fn check_regular(network: &CauseNetwork, obs: &ObservationSet) -> Result<RegularityReport> {
    if obs.values.len() != network.observed.len() {
        return Err(Error::InvalidParameter {
            what: "observations",
            why: format!(
                "expected {} values, got {}",
                network.observed.len(),
                obs.values.len()
            ),
        });
    }
    let k = network.k_min;
    let threshold = 15 * k / 16;
    let m = network.observed.len();
    let mut vars_of: Vec<std::collections::BTreeSet<u32>> = Vec::with_capacity(m);
    for o in &network.observed {
        vars_of.push(o.literals.iter().map(|l| l.var).collect());
    }
    let mut violations = Vec::new();
    for i in 0..m {
        let mut false_or = 0usize;
        let mut true_and = 0usize;
        for j in 0..m {
            if i == j || vars_of[i].is_disjoint(&vars_of[j]) {
                continue;
            }
            match (network.observed[j].kind, obs.values[j]) {
                (ObservedKind::Or, false) => false_or += 1,
                (ObservedKind::And, true) => true_and += 1,
                _ => {}
            }
        }
        if false_or > threshold || true_and > threshold {
            violations.push(RegularityViolation {
                clause: i,
                false_or_neighbors: false_or,
                true_and_neighbors: true_and,
                threshold,
            });
        }
    }

    // The direct residual-width check used by the reduction.
    let needed = rat_ceil(&crate::numeric::rat(7 * k as i64, 8))
        .to_usize()
        .unwrap_or(0);
    let mut residual_widths = Vec::new();
    let mut residual_widths_ok = true;
    if let Ok((_, residual, origins)) = preprocess_with_origins(network, obs) {
        for (clause, origin) in residual.clauses().iter().zip(&origins) {
            let ok = clause.width() >= needed;
            residual_widths_ok &= ok;
            residual_widths.push((*origin, clause.width(), needed));
        }
    }

    Ok(RegularityReport {
        regular: violations.is_empty(),
        threshold,
        violations,
        residual_widths,
        residual_widths_ok,
    })
}

/// Reduce observations to a forced partial assignment plus a residual CNF:
/// a false OR (true AND) forces all its literals; each remaining observation
/// prohibits exactly one configuration and yields one clause, simplified
/// under the forced values.
pub fn preprocess(
    network: &CauseNetwork,
    obs: &ObservationSet,
) -> Result<(PartialAssignment, CnfFormula)> {
    let (forced, residual, _) = preprocess_with_origins(network, obs)?;
    Ok((forced, residual))
}

fn preprocess_with_origins(
    network: &CauseNetwork,
    obs: &ObservationSet,
) -> Result<(PartialAssignment, CnfFormula, Vec<usize>)> {
    if obs.values.len() != network.observed.len() {
        return Err(Error::InvalidParameter {
            what: "observations",
            why: format!(
                "expected {} values, got {}",
                network.observed.len(),
                obs.values.len()
            ),
        });
    }
    let mut forced = PartialAssignment::new();
    let force = |var: u32, value: bool, forced: &mut PartialAssignment| -> Result<()> {
        match forced.get(var) {
            Some(existing) if existing != value => Err(Error::ForcingConflict { var }),
            _ => {
                forced.set(var, value);
                Ok(())
            }
        }
    };

    for (o, &value) in network.observed.iter().zip(&obs.values) {
        match (o.kind, value) {
            (ObservedKind::Or, false) => {
                for lit in &o.literals {
                    force(lit.var, lit.negated, &mut forced)?;
                }
            }
            (ObservedKind::And, true) => {
                for lit in &o.literals {
                    force(lit.var, !lit.negated, &mut forced)?;
                }
            }
            _ => {}
        }
    }

    let mut clauses = Vec::new();
    let mut origins = Vec::new();
    for (i, (o, &value)) in network.observed.iter().zip(&obs.values).enumerate() {
        let template: Option<Vec<Literal>> = match (o.kind, value) {
            // A true OR prohibits the all-false configuration: the clause is
            // the OR itself.
            (ObservedKind::Or, true) => Some(o.literals.clone()),
            // A false AND prohibits the all-true configuration.
            (ObservedKind::And, false) => Some(
                o.literals
                    .iter()
                    .map(|l| Literal {
                        var: l.var,
                        negated: !l.negated,
                    })
                    .collect(),
            ),
            _ => None,
        };
        let Some(lits) = template else { continue };
        let mut kept = Vec::new();
        let mut satisfied = false;
        for lit in lits {
            match forced.get(lit.var) {
                Some(v) => {
                    if lit.eval(v) {
                        satisfied = true;
                        break;
                    }
                }
                None => kept.push(lit),
            }
        }
        if satisfied {
            continue;
        }
        if kept.is_empty() {
            return Err(Error::InconsistentObservations(format!(
                "observed variable {i} contradicts the forced assignment"
            )));
        }
        clauses.push(Clause::new(kept)?);
        origins.push(i);
    }

    let residual = CnfFormula::new(network.num_hidden, clauses)?;
    Ok((forced, residual, origins))
}

/// A posterior draw plus the advisory regularity verdict.
#[derive(Clone, Debug)]
pub struct PosteriorSample {
    pub hidden: TotalAssignment,
    pub regular: bool,
}

/// Sample hidden variables from the posterior given the observations:
/// forced variables are fixed, residual variables are drawn by the sampling
/// pipeline, and the rest are fair coins. The output provably reproduces the
/// observations; irregularity is reported, not fatal.
pub fn posterior_sample<R: Rng>(
    network: &CauseNetwork,
    obs: &ObservationSet,
    oracle: &mut MarginalOracleHandle,
    cfg: &PipelineConfig,
    rng: &mut R,
) -> Result<PosteriorSample> {
    let report = check_regular(network, obs)?;
    let (forced, residual) = preprocess(network, obs)?;
    let run = approx_sample(&residual, oracle, cfg, rng)?;
    let mut hidden = run.assignment;
    for (var, value) in forced.iter() {
        hidden.set(var, value);
    }
    for (i, (o, &value)) in network.observed.iter().zip(&obs.values).enumerate() {
        if o.eval(&hidden) != value {
            return Err(Error::InternalConsistency(format!(
                "posterior sample does not reproduce observation {i}"
            )));
        }
    }
    Ok(PosteriorSample {
        hidden,
        regular: report.regular,
    })
}
