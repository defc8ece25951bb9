//! Randomized resampling searches in the local-lemma style: satisfying
//! assignments (Moser–Tardos), marked/unmarked labelings, and seed partial
//! assignments that satisfy every clause while leaving most variables unset.
//!
//! Feasibility conditions are reported as advisory flags, never hard gates:
//! desk-scale instances routinely live outside the guaranteed regime and the
//! searches may still succeed. Every search is guarded by a resample budget.

use num_traits::{One, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeSet;

use crate::cnf::{
    check_lll_condition, Clause, CnfFormula, LllVariant, Marking, PartialAssignment,
    TotalAssignment,
};
use crate::numeric::{pick_weighted, rat, rat_ceil, Probability, Rat};
use crate::{Error, Result};

/// Termination guard for resampling searches.
#[derive(Clone, Copy, Debug)]
pub struct ResampleConfig {
    pub max_resamples: u64,
    pub rng_seed: u64,
}

impl Default for ResampleConfig {
    fn default() -> Self {
        ResampleConfig {
            max_resamples: 1_000_000,
            rng_seed: 0,
        }
    }
}

/// Outcome of a Moser–Tardos run.
#[derive(Clone, Debug)]
pub struct MoserTardosOutcome {
    pub assignment: TotalAssignment,
    pub resamples: u64,
    /// Whether `e (D+1) <= 2^k` held for the input (advisory only).
    pub condition_holds: bool,
}

/// Assign all variables uniformly at random; while some clause is violated,
/// resample all variables of the lowest-index violated clause.
pub fn moser_tardos(phi: &CnfFormula, cfg: &ResampleConfig) -> Result<MoserTardosOutcome> {
    let condition_holds = check_lll_condition(phi.stats(), &LllVariant::Existence);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let n = phi.num_vars();
    let mut assignment = TotalAssignment::new((0..n).map(|_| rng.gen_bool(0.5)).collect());
    let mut resamples = 0u64;
    loop {
        let violated = phi
            .clauses()
            .iter()
            .position(|c| !c.satisfied_by(&assignment));
        let Some(ci) = violated else {
            debug_assert!(phi.satisfied_by(&assignment));
            return Ok(MoserTardosOutcome {
                assignment,
                resamples,
                condition_holds,
            });
        };
        if resamples >= cfg.max_resamples {
            return Err(Error::TerminationGuard {
                resamples: cfg.max_resamples,
            });
        }
        resamples += 1;
        for lit in phi.clause(ci).literals() {
            assignment.set(lit.var, rng.gen_bool(0.5));
        }
    }
}

fn threshold(fraction: &Rat, width: usize) -> usize {
    let t = rat_ceil(&(fraction * rat(width as i64, 1)));
    t.try_into().expect("threshold fits in usize")
}

fn marking_ok(clause: &Clause, marked: &BTreeSet<u32>, need: usize) -> bool {
    let in_marked = clause.vars().filter(|v| marked.contains(v)).count();
    in_marked >= need && clause.width() - in_marked >= need
}

/// Find a labeling where every clause has at least `ceil(alpha * width)`
/// marked and as many unmarked variables, by resampling the labels of bad
/// clauses ("choose each variable to be marked or unmarked with equal
/// probability").
pub fn find_marking(phi: &CnfFormula, alpha: &Rat, cfg: &ResampleConfig) -> Result<Marking> {
    if *alpha <= Rat::zero() || *alpha > rat(1, 2) {
        return Err(Error::InvalidParameter {
            what: "alpha",
            why: format!("need 0 < alpha <= 1/2, got {alpha}"),
        });
    }
    let mut needs = Vec::with_capacity(phi.num_clauses());
    for (ci, clause) in phi.clauses().iter().enumerate() {
        let need = threshold(alpha, clause.width());
        if 2 * need > clause.width() {
            return Err(Error::ThresholdInfeasible {
                clause: ci,
                width: clause.width(),
                need: format!("{need} marked + {need} unmarked"),
            });
        }
        needs.push(need);
    }
    find_marking_with_thresholds(phi, &needs, cfg)
}

/// Marking search against explicit per-clause thresholds: clause `i` must
/// keep at least `needs[i]` marked and `needs[i]` unmarked variables.
pub fn find_marking_with_thresholds(
    phi: &CnfFormula,
    needs: &[usize],
    cfg: &ResampleConfig,
) -> Result<Marking> {
    assert_eq!(needs.len(), phi.num_clauses());
    for (ci, (clause, &need)) in phi.clauses().iter().zip(needs).enumerate() {
        if 2 * need > clause.width() {
            return Err(Error::ThresholdInfeasible {
                clause: ci,
                width: clause.width(),
                need: format!("{need} marked + {need} unmarked"),
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut marked: BTreeSet<u32> = (1..=phi.num_vars()).filter(|_| rng.gen_bool(0.5)).collect();
    let mut resamples = 0u64;
    loop {
        let bad = phi
            .clauses()
            .iter()
            .zip(needs)
            .find(|(c, &need)| !marking_ok(c, &marked, need));
        let Some((clause, _)) = bad else {
            return Ok(Marking::new(marked));
        };
        if resamples >= cfg.max_resamples {
            return Err(Error::TerminationGuard {
                resamples: cfg.max_resamples,
            });
        }
        resamples += 1;
        for var in clause.vars() {
            if rng.gen_bool(0.5) {
                marked.insert(var);
            } else {
                marked.remove(&var);
            }
        }
    }
}

/// Per-variable probabilities for the seed-partial search.
#[derive(Clone, Debug)]
pub struct SeedProbs {
    pub p_true: Rat,
    pub p_false: Rat,
    pub p_unset: Rat,
}

impl SeedProbs {
    /// The reference choice: set T with 1/32, F with 1/32, unset with 15/16.
    pub fn reference() -> Self {
        SeedProbs {
            p_true: rat(1, 32),
            p_false: rat(1, 32),
            p_unset: rat(15, 16),
        }
    }

    /// A desk-scale choice that keeps per-clause bad events rare at small k.
    pub fn desk_scale() -> Self {
        SeedProbs {
            p_true: rat(1, 4),
            p_false: rat(1, 4),
            p_unset: rat(1, 2),
        }
    }
}

fn seed_clause_ok(clause: &Clause, assignment: &PartialAssignment, need_unset: usize) -> bool {
    let mut satisfied = false;
    let mut unset = 0usize;
    for lit in clause.literals() {
        match assignment.get(lit.var) {
            Some(v) => {
                if lit.eval(v) {
                    satisfied = true;
                }
            }
            None => unset += 1,
        }
    }
    satisfied && unset >= need_unset
}

/// Find a partial assignment under which every clause is satisfied and keeps
/// at least `ceil(beta * width)` unset variables, by resampling bad clauses.
pub fn find_seed_partial(
    phi: &CnfFormula,
    probs: &SeedProbs,
    beta: &Rat,
    cfg: &ResampleConfig,
) -> Result<PartialAssignment> {
    let sum = &probs.p_true + &probs.p_false + &probs.p_unset;
    if !sum.is_one()
        || probs.p_true < Rat::zero()
        || probs.p_false < Rat::zero()
        || probs.p_unset < Rat::zero()
    {
        return Err(Error::InvalidParameter {
            what: "probs",
            why: "probabilities must be non-negative and sum to 1".into(),
        });
    }
    if *beta <= Rat::zero() || *beta >= Rat::one() {
        return Err(Error::InvalidParameter {
            what: "beta",
            why: format!("need 0 < beta < 1, got {beta}"),
        });
    }
    for (ci, clause) in phi.clauses().iter().enumerate() {
        let need = threshold(beta, clause.width());
        // A satisfied clause needs at least one set variable.
        if need + 1 > clause.width() {
            return Err(Error::ThresholdInfeasible {
                clause: ci,
                width: clause.width(),
                need: format!("{need} unset + 1 set"),
            });
        }
    }

    let weights = [
        probs.p_true.clone(),
        probs.p_false.clone(),
        probs.p_unset.clone(),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let draw = |rng: &mut ChaCha8Rng, assignment: &mut PartialAssignment, var: u32| {
        match pick_weighted(rng, &weights) {
            0 => assignment.set(var, true),
            1 => assignment.set(var, false),
            _ => assignment.unset(var),
        }
    };

    // Only variables occurring in clauses participate; the postconditions
    // never constrain the rest and leaving them unset keeps the partial
    // assignment minimal.
    let mut assignment = PartialAssignment::new();
    for var in phi.mentioned_vars() {
        draw(&mut rng, &mut assignment, var);
    }
    let mut resamples = 0u64;
    loop {
        let bad = phi.clauses().iter().find(|c| {
            let need = threshold(beta, c.width());
            !seed_clause_ok(c, &assignment, need)
        });
        let Some(clause) = bad else {
            return Ok(assignment);
        };
        if resamples >= cfg.max_resamples {
            return Err(Error::TerminationGuard {
                resamples: cfg.max_resamples,
            });
        }
        resamples += 1;
        for var in clause.vars() {
            draw(&mut rng, &mut assignment, var);
        }
    }
}

/// Parameters of the uniform-marginal bound `1/2 - 2/s <= Pr[x = T] <= 1/2 + 2/s`.
#[derive(Clone, Debug)]
pub struct MarginalBoundParams {
    pub k_eff: usize,
    pub big_d: u64,
    pub s: Rat,
    /// Whether `e * D * s <= 2^k_eff` holds (advisory, not a gate).
    pub condition_holds: bool,
}

impl MarginalBoundParams {
    pub fn new(k_eff: usize, big_d: u64, s: Rat) -> Self {
        assert!(s > Rat::zero(), "slack must be positive");
        let stats = crate::cnf::FormulaStats {
            n: 0,
            m: 0,
            d: 0,
            k_min: k_eff,
            k_max: k_eff,
            big_d,
        };
        let condition_holds = check_lll_condition(&stats, &LllVariant::MarginalBound(s.clone()));
        MarginalBoundParams {
            k_eff,
            big_d,
            s,
            condition_holds,
        }
    }
}

/// The interval `(1/2 - 2/s, 1/2 + 2/s)` as exact rationals. Requires `s > 4`
/// so the interval is a nontrivial subinterval of `[0, 1]`.
pub fn marginal_bounds(params: &MarginalBoundParams) -> (Probability, Probability) {
    assert!(params.s > rat(4, 1), "marginal_bounds requires s > 4");
    let half = rat(1, 2);
    let slack = rat(2, 1) / &params.s;
    let lo = Probability::new(&half - &slack).expect("s > 4 keeps the bound in range");
    let hi = Probability::new(half + slack).expect("s > 4 keeps the bound in range");
    (lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cnf::{CnfFormula, Literal};
    use crate::gen::{gen_cnf, GenParams};

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

    #[test]
    fn moser_tardos_forced_variable() {
        let phi = formula(1, &[&[1]]);
        for seed in 0..5 {
            let out = moser_tardos(
                &phi,
                &ResampleConfig {
                    max_resamples: 1000,
                    rng_seed: seed,
                },
            )
            .unwrap();
            assert!(out.assignment.get(1));
        }
    }

    #[test]
    fn moser_tardos_unsatisfiable_hits_guard() {
        let phi = formula(1, &[&[1], &[-1]]);
        let err = moser_tardos(
            &phi,
            &ResampleConfig {
                max_resamples: 200,
                rng_seed: 0,
            },
        )
        .unwrap_err();
        assert!(matches!(err, Error::TerminationGuard { resamples: 200 }));
    }

    #[test]
    fn moser_tardos_satisfies_random_in_condition_instances() {
        for seed in 0..10 {
            let phi = gen_cnf(&GenParams {
                n: 30,
                k_min: 8,
                k_max: 8,
                d: 2,
                monotone: false,
                m: Some(6),
                seed,
            })
            .unwrap();
            assert!(check_lll_condition(phi.stats(), &LllVariant::Existence));
            let out = moser_tardos(
                &phi,
                &ResampleConfig {
                    max_resamples: 1_000_000,
                    rng_seed: seed,
                },
            )
            .unwrap();
            assert!(phi.satisfied_by(&out.assignment));
        }
    }

    #[test]
    fn marking_thresholds_hold_on_every_clause() {
        let phi = gen_cnf(&GenParams {
            n: 24,
            k_min: 8,
            k_max: 8,
            d: 2,
            monotone: false,
            m: Some(5),
            seed: 7,
        })
        .unwrap();
        let marking = find_marking(&phi, &rat(1, 4), &ResampleConfig::default()).unwrap();
        for clause in phi.clauses() {
            let marked = clause.vars().filter(|v| marking.is_marked(*v)).count();
            assert!(marked >= 2, "k=8, alpha=1/4 needs >= 2 marked");
            assert!(clause.width() - marked >= 2);
        }
    }

    #[test]
    fn marking_forced_split_on_width_two() {
        let phi = formula(2, &[&[1, 2]]);
        let marking = find_marking(&phi, &rat(1, 2), &ResampleConfig::default()).unwrap();
        let marked = [1u32, 2].iter().filter(|v| marking.is_marked(**v)).count();
        assert_eq!(marked, 1);
    }

    #[test]
    fn marking_infeasible_width_three_alpha_half() {
        let phi = formula(3, &[&[1, 2, 3]]);
        let err = find_marking(&phi, &rat(1, 2), &ResampleConfig::default()).unwrap_err();
        assert!(matches!(err, Error::ThresholdInfeasible { clause: 0, width: 3, .. }));
    }

    #[test]
    fn seed_partial_postconditions() {
        let phi = formula(4, &[&[1, 2, 3, 4]]);
        let a = find_seed_partial(
            &phi,
            &SeedProbs::desk_scale(),
            &rat(1, 2),
            &ResampleConfig::default(),
        )
        .unwrap();
        assert!(seed_clause_ok(phi.clause(0), &a, 2));
    }

    #[test]
    fn seed_partial_infeasible_when_beta_leaves_no_set_variable() {
        let phi = formula(3, &[&[1, 2, 3]]);
        let err = find_seed_partial(
            &phi,
            &SeedProbs::desk_scale(),
            &rat(99, 100),
            &ResampleConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::ThresholdInfeasible { .. }));
    }

    #[test]
    fn seed_partial_holds_over_many_seeds() {
        for seed in 0..100 {
            let phi = gen_cnf(&GenParams {
                n: 24,
                k_min: 8,
                k_max: 8,
                d: 2,
                monotone: true,
                m: Some(5),
                seed,
            })
            .unwrap();
            let beta = rat(1, 2);
            let a = find_seed_partial(
                &phi,
                &SeedProbs::desk_scale(),
                &beta,
                &ResampleConfig {
                    max_resamples: 1_000_000,
                    rng_seed: seed,
                },
            )
            .unwrap();
            for clause in phi.clauses() {
                let need = threshold(&beta, clause.width());
                assert!(seed_clause_ok(clause, &a, need));
            }
        }
    }

    #[test]
    fn marginal_bound_values() {
        let p = MarginalBoundParams::new(20, 100, rat(100, 1));
        assert!(p.condition_holds);
        let (lo, hi) = marginal_bounds(&p);
        assert_eq!(lo.as_rat(), &rat(12, 25)); // 0.48
        assert_eq!(hi.as_rat(), &rat(13, 25)); // 0.52

        let p8 = MarginalBoundParams::new(4, 100, rat(8, 1));
        let (lo, hi) = marginal_bounds(&p8);
        assert_eq!(lo.as_rat(), &rat(1, 4));
        assert_eq!(hi.as_rat(), &rat(3, 4));
        assert!(!p8.condition_holds);
    }
}
