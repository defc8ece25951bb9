//! Top-level algorithms: telescoping approximate counting and the sampling
//! procedure, each parameterized over a pluggable marginal oracle (exact for
//! ground truth, certified for the bootstrap, injected for tests).

use num_traits::ToPrimitive;
use rand::Rng;
use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, BTreeSet};
use std::hash::{Hash, Hasher};

use crate::certify::{certify_marginal, interval_midpoint, CertifyBudgets};
use crate::cnf::{
    connected_components, emit_dimacs, simplify, CnfFormula, Marking, PartialAssignment,
    SimplifyStatus, TotalAssignment,
};
use crate::lll::{find_marking_with_thresholds, find_seed_partial, ResampleConfig, SeedProbs};
use crate::numeric::{
    bernoulli, pow_rat, rat, rat_ceil, rat_zero, uniform_below, Probability, Rat,
};
use crate::oracle::{count_sat, enumerate_sat, exact_marginal, MarginalOracle, OracleBudget};
use crate::{Error, Result};

/// Configuration of the certified-oracle bootstrap.
#[derive(Clone, Debug)]
pub struct CertifiedConfig {
    pub tau: usize,
    pub grid_eps: Rat,
    /// Flip-cap slack; `None` picks `max(8, d^3)` from the queried formula.
    pub slack_s: Option<Rat>,
    /// Marking fraction used for the internal decision trees.
    pub alpha: Rat,
    pub max_resamples: u64,
    pub marking_seed: u64,
    pub budgets: CertifyBudgets,
}

impl Default for CertifiedConfig {
    fn default() -> Self {
        CertifiedConfig {
            tau: 12,
            grid_eps: rat(1, 100),
            slack_s: None,
            alpha: rat(1, 4),
            max_resamples: 1_000_000,
            marking_seed: 0,
            budgets: CertifyBudgets::default(),
        }
    }
}

/// Which marginal source backs the handle.
pub enum OracleKind {
    Exact,
    Certified(CertifiedConfig),
    /// Fixed answers keyed by `(residual DIMACS, variable)`.
    Injected(BTreeMap<(String, u32), Probability>),
}

/// One answered query.
#[derive(Clone, Debug)]
pub struct QueryRecord {
    pub formula_hash: u64,
    pub var: u32,
    pub answer: Probability,
    pub half_width: Rat,
}

/// An answered marginal: the point value used downstream plus the certified
/// half-width (zero for exact answers).
#[derive(Clone, Debug)]
pub struct OracleAnswer {
    pub p: Probability,
    pub half_width: Rat,
}

/// A marginal source with a query log.
pub struct MarginalOracleHandle {
    kind: OracleKind,
    pub budget: OracleBudget,
    pub log: Vec<QueryRecord>,
}

impl MarginalOracleHandle {
    pub fn exact(budget: OracleBudget) -> Self {
        MarginalOracleHandle {
            kind: OracleKind::Exact,
            budget,
            log: Vec::new(),
        }
    }

    pub fn certified(config: CertifiedConfig, budget: OracleBudget) -> Self {
        MarginalOracleHandle {
            kind: OracleKind::Certified(config),
            budget,
            log: Vec::new(),
        }
    }

    pub fn injected(table: BTreeMap<(String, u32), Probability>) -> Self {
        MarginalOracleHandle {
            kind: OracleKind::Injected(table),
            budget: OracleBudget::default(),
            log: Vec::new(),
        }
    }

    /// Clause-width window the marginal source requires on queried formulas.
    pub fn required_width_ratio(&self) -> Option<usize> {
        match self.kind {
            OracleKind::Certified(_) => Some(6),
            _ => None,
        }
    }

    /// `Pr[var = T]` among satisfying assignments consistent with
    /// `assignment`, from the configured source.
    pub fn query(
        &mut self,
        phi: &CnfFormula,
        assignment: &PartialAssignment,
        var: u32,
    ) -> Result<OracleAnswer> {
        let answer = match &self.kind {
            OracleKind::Exact => OracleAnswer {
                p: exact_marginal(phi, assignment, var, &self.budget)?,
                half_width: rat_zero(),
            },
            OracleKind::Certified(cfg) => {
                let (residual, status) = simplify(phi, assignment);
                if status == SimplifyStatus::Falsified {
                    return Err(Error::ConditionOnNull);
                }
                if !residual.clauses().iter().any(|c| c.contains_var(var)) {
                    // The variable is free in the residual formula, so its
                    // conditional marginal is exactly one half.
                    OracleAnswer {
                        p: Probability::half(),
                        half_width: rat_zero(),
                    }
                } else {
                    let slack = cfg
                        .slack_s
                        .clone()
                        .unwrap_or_else(|| crate::certify::default_slack(residual.stats()));
                    let marking = sampler_marking(
                        &residual,
                        &cfg.alpha,
                        &ResampleConfig {
                            max_resamples: cfg.max_resamples,
                            rng_seed: cfg.marking_seed,
                        },
                    )?;
                    let outcome = certify_marginal(
                        &residual,
                        var,
                        &marking,
                        cfg.tau,
                        &slack,
                        &cfg.grid_eps,
                        &cfg.budgets,
                    )?;
                    let (p, half_width) = interval_midpoint(&outcome.interval);
                    OracleAnswer { p, half_width }
                }
            }
            OracleKind::Injected(table) => {
                let (residual, _) = simplify(phi, assignment);
                let key = (emit_dimacs(&residual), var);
                let p = table.get(&key).cloned().ok_or_else(|| {
                    Error::InternalConsistency(format!(
                        "injected oracle has no answer for variable {var}"
                    ))
                })?;
                OracleAnswer {
                    p,
                    half_width: rat_zero(),
                }
            }
        };
        let mut hasher = DefaultHasher::new();
        emit_dimacs(phi).hash(&mut hasher);
        for (v, b) in assignment.iter() {
            (v, b).hash(&mut hasher);
        }
        self.log.push(QueryRecord {
            formula_hash: hasher.finish(),
            var,
            answer: answer.p.clone(),
            half_width: answer.half_width.clone(),
        });
        Ok(answer)
    }
}

impl MarginalOracle for MarginalOracleHandle {
    fn marginal(
        &mut self,
        phi: &CnfFormula,
        assignment: &PartialAssignment,
        var: u32,
    ) -> Result<Probability> {
        Ok(self.query(phi, assignment, var)?.p)
    }
}

/// Pipeline knobs. The fractions default to the reference values; desk-scale
/// runs with small clause widths usually pass scaled ones.
#[derive(Clone, Debug)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Marking fraction for the sampling procedure.
    pub alpha: Rat,
    /// Unset fraction required by the seed partial assignment.
    pub beta: Rat,
    pub seed_probs: SeedProbs,
    pub max_resamples: u64,
    /// Brute-force cap on residual component sizes (twice the component-size
    /// target of 12 the sampler is tuned for).
    pub component_cap: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            alpha: rat(1, 4),
            beta: rat(7, 8),
            seed_probs: SeedProbs::reference(),
            max_resamples: 1_000_000,
            component_cap: 24,
        }
    }
}

/// Marking for the sampler: per-clause thresholds are the strict
/// `ceil(alpha * width)` relaxed to `floor(width / 2)` where the strict
/// value is unachievable, so narrow clauses fall through to the final
/// component brute force instead of failing the search.
pub fn sampler_marking(phi: &CnfFormula, alpha: &Rat, cfg: &ResampleConfig) -> Result<Marking> {
    let needs: Vec<usize> = phi
        .clauses()
        .iter()
        .map(|c| {
            let strict: usize = rat_ceil(&(alpha * rat(c.width() as i64, 1)))
                .to_usize()
                .unwrap_or(usize::MAX);
            strict.min(c.width() / 2)
        })
        .collect();
    find_marking_with_thresholds(phi, &needs, cfg)
}

/// One multiplicative step of the telescoping count.
#[derive(Clone, Debug)]
pub struct StepRecord {
    pub var: u32,
    pub value: bool,
    pub q: Probability,
    pub half_width: Rat,
}

/// The telescoping estimate `2^(n-t) * prod(1/q_i)`.
#[derive(Clone, Debug)]
pub struct CountEstimate {
    pub value: Rat,
    pub log2_value: f64,
    pub per_step: Vec<StepRecord>,
    pub num_vars: u32,
}

impl CountEstimate {
    /// Recompute the value from the per-step table (consistency invariant).
    pub fn recompute(&self) -> Rat {
        let n = self.num_vars as usize;
        let t = self.per_step.len();
        let mut value = pow_rat(&rat(2, 1), (n - t) as u32);
        for step in &self.per_step {
            value /= step.q.as_rat();
        }
        value
    }
}

fn verify_satisfiable(phi: &CnfFormula, budget: &OracleBudget, cfg: &PipelineConfig) -> Result<()> {
    match count_sat(phi, budget) {
        Ok(c) => {
            if c.is_zero() {
                return Err(Error::Unsatisfiable);
            }
            Ok(())
        }
        Err(Error::BudgetExceeded { .. }) => {
            // Out of enumeration reach: find a witness by resampling.
            crate::lll::moser_tardos(
                phi,
                &ResampleConfig {
                    max_resamples: cfg.max_resamples,
                    rng_seed: cfg.seed,
                },
            )
            .map(|_| ())
        }
        Err(e) => Err(e),
    }
}

/// Approximate the satisfying-assignment count through a seed partial
/// assignment: set its variables one at a time in index order, dividing by
/// the oracle marginal of each assigned value.
///
/// With the exact oracle the telescoping product is exact and the estimate
/// equals the true count.
pub fn approx_count(
    phi: &CnfFormula,
    oracle: &mut MarginalOracleHandle,
    cfg: &PipelineConfig,
) -> Result<CountEstimate> {
    let budget = oracle.budget;
    verify_satisfiable(phi, &budget, cfg)?;
    let seed_assignment = find_seed_partial(
        phi,
        &cfg.seed_probs,
        &cfg.beta,
        &ResampleConfig {
            max_resamples: cfg.max_resamples,
            rng_seed: cfg.seed,
        },
    )?;
    let set_vars: Vec<(u32, bool)> = seed_assignment.iter().collect();
    let t = set_vars.len();
    let mut prefix = PartialAssignment::new();
    let mut per_step = Vec::with_capacity(t);
    let mut product_inverse = Rat::from_integer(1.into());

    for (var, value) in set_vars {
        if let Some(ratio) = oracle.required_width_ratio() {
            let (residual, _) = simplify(phi, &prefix);
            let stats = residual.stats();
            if stats.k_min > 0 && stats.k_max > ratio * stats.k_min {
                return Err(Error::WidthRatio {
                    k_min: stats.k_min,
                    k_max: stats.k_max,
                    ratio: ratio as u32,
                });
            }
        }
        let answer = oracle.query(phi, &prefix, var)?;
        let q = if value {
            answer.p.clone()
        } else {
            answer.p.complement()
        };
        if q.is_zero() {
            return Err(Error::ZeroMarginal { var });
        }
        product_inverse /= q.as_rat();
        per_step.push(StepRecord {
            var,
            value,
            q,
            half_width: answer.half_width,
        });
        prefix.set(var, value);
    }

    let n = phi.num_vars() as usize;
    let value = pow_rat(&rat(2, 1), (n - t) as u32) * product_inverse;
    let log2_value = {
        let v = value.to_f64().unwrap_or(f64::INFINITY);
        if v.is_finite() && v > 0.0 {
            v.log2()
        } else {
            // Out-of-range for f64: derive from numerator/denominator bits.
            let numer_bits = value.numer().bits() as f64;
            let denom_bits = value.denom().bits() as f64;
            numer_bits - denom_bits
        }
    };
    Ok(CountEstimate {
        value,
        log2_value,
        per_step,
        num_vars: phi.num_vars(),
    })
}

/// A sampling run with its diagnostics.
#[derive(Clone, Debug)]
pub struct SampleRun {
    pub assignment: TotalAssignment,
    /// Final inner-component size of every inner loop execution.
    pub vi_sizes: Vec<usize>,
    /// Variable counts of the residual components solved by brute force.
    pub component_sizes: Vec<usize>,
}

/// Draw an assignment whose distribution tracks the uniform distribution on
/// satisfying assignments: sample marked variables from their conditional
/// marginals, quarantining clause neighborhoods that go wrong, then solve
/// each residual component exactly.
pub fn approx_sample<R: Rng>(
    phi: &CnfFormula,
    oracle: &mut MarginalOracleHandle,
    cfg: &PipelineConfig,
    rng: &mut R,
) -> Result<SampleRun> {
    let marking = sampler_marking(
        phi,
        &cfg.alpha,
        &ResampleConfig {
            max_resamples: cfg.max_resamples,
            rng_seed: cfg.seed,
        },
    )?;
    let mut current = PartialAssignment::new();
    let mut remaining: BTreeSet<usize> = (0..phi.num_clauses()).collect();
    let mut vi_sizes = Vec::new();

    let satisfied_by_set = |clause_idx: usize, a: &PartialAssignment| -> bool {
        phi.clause(clause_idx)
            .literals()
            .iter()
            .any(|lit| a.get(lit.var).is_some_and(|v| lit.eval(v)))
    };

    for x in 1..=phi.num_vars() {
        if !marking.is_marked(x) || current.is_set(x) {
            continue;
        }
        let answer = oracle.query(phi, &current, x)?;
        current.set(x, bernoulli(rng, &answer.p));

        let mut v_inner: BTreeSet<u32> = BTreeSet::from([x]);
        let mut v_outer: BTreeSet<u32> = (1..=phi.num_vars())
            .filter(|v| !current.is_set(*v) && *v != x)
            .collect();
        loop {
            let straddling = remaining.iter().copied().find(|&ci| {
                let mut inner = false;
                let mut outer = false;
                for v in phi.clause(ci).vars() {
                    if v_inner.contains(&v) {
                        inner = true;
                    }
                    if v_outer.contains(&v) {
                        outer = true;
                    }
                }
                inner && outer
            });
            let Some(ci) = straddling else { break };
            // Sequentially sample the clause's unset marked variables.
            for v in phi.clause(ci).vars().collect::<Vec<_>>() {
                if marking.is_marked(v) && !current.is_set(v) {
                    let answer = oracle.query(phi, &current, v)?;
                    current.set(v, bernoulli(rng, &answer.p));
                }
            }
            if satisfied_by_set(ci, &current) {
                remaining.remove(&ci);
            } else {
                for v in phi.clause(ci).vars() {
                    v_inner.insert(v);
                    v_outer.remove(&v);
                }
            }
        }
        vi_sizes.push(v_inner.len());
    }

    // Solve each connected component of the remaining simplified formula by
    // enumeration and a uniform index draw; unset variables outside every
    // component get fair coins.
    let (residual, status) = simplify(phi, &current);
    if status == SimplifyStatus::Falsified {
        return Err(Error::InternalConsistency(
            "sampled prefix falsified the formula".into(),
        ));
    }
    let decomposition = connected_components(&residual);
    let mut component_sizes = Vec::new();
    for comp in &decomposition.components {
        let size = comp.formula.num_vars() as usize;
        component_sizes.push(size);
        if size > cfg.component_cap {
            return Err(Error::ComponentBlowup {
                size,
                cap: cfg.component_cap,
            });
        }
        let support: Vec<TotalAssignment> =
            enumerate_sat(&comp.formula, &OracleBudget::new(cfg.component_cap))?.collect();
        if support.is_empty() {
            return Err(Error::InternalConsistency(
                "residual component is unsatisfiable".into(),
            ));
        }
        let index = uniform_below(rng, &(support.len() as u64).into())
            .to_usize()
            .expect("component support fits in memory");
        let choice = &support[index];
        for (pos, original_var) in comp.vars.iter().enumerate() {
            current.set(*original_var, choice.get(pos as u32 + 1));
        }
    }
    for v in 1..=phi.num_vars() {
        if !current.is_set(v) {
            current.set(v, rng.gen_bool(0.5));
        }
    }

    let assignment = TotalAssignment::new(
        (1..=phi.num_vars())
            .map(|v| current.get(v).expect("all variables set"))
            .collect(),
    );
    assert!(
        phi.satisfied_by(&assignment),
        "sampler produced a falsifying assignment"
    );
    Ok(SampleRun {
        assignment,
        vi_sizes,
        component_sizes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cnf::{Clause, Literal};
    use crate::gen::{gen_cnf, GenParams};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

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

    fn desk_cfg(seed: u64) -> PipelineConfig {
        PipelineConfig {
            seed,
            alpha: rat(1, 4),
            beta: rat(1, 2),
            seed_probs: SeedProbs::desk_scale(),
            max_resamples: 1_000_000,
            component_cap: 24,
        }
    }

    #[test]
    fn count_empty_formula() {
        let phi = CnfFormula::empty(4);
        let mut oracle = MarginalOracleHandle::exact(OracleBudget::default());
        let est = approx_count(&phi, &mut oracle, &desk_cfg(0)).unwrap();
        assert_eq!(est.value, rat(16, 1));
        assert!(est.per_step.is_empty());
    }

    #[test]
    fn count_single_clause_exactly() {
        let phi = formula(2, &[&[1, 2]]);
        let mut oracle = MarginalOracleHandle::exact(OracleBudget::default());
        let est = approx_count(&phi, &mut oracle, &desk_cfg(3)).unwrap();
        assert_eq!(est.value, rat(3, 1));
        assert_eq!(est.recompute(), est.value);
    }

    #[test]
    fn count_matches_oracle_on_random_monotone_instances() {
        for seed in 0..20 {
            let phi = gen_cnf(&GenParams {
                n: 12,
                k_min: 4,
                k_max: 4,
                d: 2,
                monotone: true,
                m: Some(4),
                seed: 3000 + seed,
            })
            .unwrap();
            let mut oracle = MarginalOracleHandle::exact(OracleBudget::default());
            let est = approx_count(&phi, &mut oracle, &desk_cfg(seed)).unwrap();
            let truth = count_sat(&phi, &OracleBudget::default()).unwrap();
            assert_eq!(est.value, truth.to_rat(), "seed {seed}");
        }
    }

    #[test]
    fn count_unsatisfiable_errors() {
        let phi = formula(1, &[&[1], &[-1]]);
        let mut oracle = MarginalOracleHandle::exact(OracleBudget::default());
        assert!(matches!(
            approx_count(&phi, &mut oracle, &desk_cfg(0)),
            Err(Error::Unsatisfiable)
        ));
    }

    #[test]
    fn injected_oracle_drives_the_telescope() {
        let phi = formula(2, &[&[1, 2]]);
        // Inject 1/2 for every reachable residual so the telescope produces
        // exactly 2^n regardless of which variables the seed search sets.
        let mut table = BTreeMap::new();
        for a in [
            PartialAssignment::new(),
            PartialAssignment::from_pairs([(1, true)]),
            PartialAssignment::from_pairs([(1, false)]),
            PartialAssignment::from_pairs([(2, true)]),
            PartialAssignment::from_pairs([(2, false)]),
        ] {
            let (residual, _) = simplify(&phi, &a);
            for var in 1..=2 {
                table.insert((emit_dimacs(&residual), var), Probability::half());
            }
        }
        let mut oracle = MarginalOracleHandle::injected(table);
        let est = approx_count(&phi, &mut oracle, &desk_cfg(1)).unwrap();
        assert_eq!(est.value, rat(4, 1));
        assert_eq!(oracle.log.len(), est.per_step.len());
    }

    #[test]
    fn sample_unit_clause_formula() {
        // (x1): forced true whether x1 is marked or swept into the residual.
        let phi = formula(3, &[&[1]]);
        let mut oracle = MarginalOracleHandle::exact(OracleBudget::default());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut true_count = [0usize; 2];
        for _ in 0..400 {
            let run = approx_sample(&phi, &mut oracle, &desk_cfg(5), &mut rng).unwrap();
            assert!(run.assignment.get(1));
            true_count[0] += run.assignment.get(2) as usize;
            true_count[1] += run.assignment.get(3) as usize;
        }
        for c in true_count {
            let freq = c as f64 / 400.0;
            assert!((freq - 0.5).abs() < 0.1, "freq {freq}");
        }
    }

    #[test]
    fn sample_empty_formula_is_uniform() {
        let phi = CnfFormula::empty(3);
        let mut oracle = MarginalOracleHandle::exact(OracleBudget::default());
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        let draws = 10_000;
        for _ in 0..draws {
            let run = approx_sample(&phi, &mut oracle, &desk_cfg(6), &mut rng).unwrap();
            *counts.entry(run.assignment.bits()).or_default() += 1;
        }
        assert_eq!(counts.len(), 8);
        for (_, c) in counts {
            assert!((c as f64 / draws as f64 - 0.125).abs() < 0.02);
        }
    }

    #[test]
    fn sample_two_components_tracks_uniform() {
        let phi = formula(4, &[&[1, 2], &[3, 4]]);
        let mut oracle = MarginalOracleHandle::exact(OracleBudget::default());
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        let draws = 10_000;
        for _ in 0..draws {
            let run = approx_sample(&phi, &mut oracle, &desk_cfg(7), &mut rng).unwrap();
            *counts.entry(run.assignment.bits()).or_default() += 1;
        }
        assert_eq!(counts.len(), 9);
        let mut tv = 0.0;
        for (_, c) in counts {
            tv += (c as f64 / draws as f64 - 1.0 / 9.0).abs();
        }
        tv /= 2.0;
        assert!(tv <= 0.02, "tv {tv}");
    }

    #[test]
    fn certified_oracle_counts_within_propagation_bound() {
        let phi = formula(8, &[&[1, 2, 3, 4]]);
        let cert_cfg = CertifiedConfig {
            tau: 8,
            grid_eps: rat(1, 100),
            slack_s: Some(rat(4, 1)),
            ..CertifiedConfig::default()
        };
        let mut oracle = MarginalOracleHandle::certified(cert_cfg, OracleBudget::default());
        let est = approx_count(&phi, &mut oracle, &desk_cfg(2)).unwrap();
        let truth = count_sat(&phi, &OracleBudget::default()).unwrap().to_rat();
        // Relative error within the per-step propagation bound
        // prod(1 +- half_width / q).
        let mut lo = rat(1, 1);
        let mut hi = rat(1, 1);
        for step in &est.per_step {
            let w = &step.half_width / step.q.as_rat();
            lo *= rat(1, 1) - &w;
            hi *= rat(1, 1) + &w;
        }
        let ratio = &est.value / &truth;
        assert!(
            ratio >= lo && ratio <= hi,
            "ratio {} outside [{}, {}]",
            ratio,
            lo,
            hi
        );
    }
}
