//! Oracle-backed invariant suites runnable from the CLI. Each check returns
//! a pass/fail verdict with a short detail string; any failure is an
//! invariant violation worth a bug report.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cnf::{connected_components, simplify, CnfFormula, Marking, PartialAssignment};
use crate::coupling::{run_coupling, verify_factorization, Termination};
use crate::dtree::{annotate_probabilities, build_tree, check_balance};
use crate::gen::{gen_cnf, GenParams};
use crate::inference::{posterior_sample, preprocess, sample_forward, CauseNetwork};
use crate::lll::{find_marking, find_seed_partial, ResampleConfig, SeedProbs};
use crate::numeric::{rat, rat_zero, rat_to_string};
use crate::oracle::{count_consistent, count_sat, ExactOracle, OracleBudget};
use crate::pipeline::{approx_count, approx_sample, MarginalOracleHandle, PipelineConfig};
use crate::Result;

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Default)]
pub struct SelfcheckReport {
    pub checks: Vec<CheckResult>,
}

impl SelfcheckReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn test_instance(seed: u64) -> CnfFormula {
    gen_cnf(&GenParams {
        n: 10,
        k_min: 2,
        k_max: 4,
        d: 2,
        monotone: seed % 2 == 0,
        m: Some(4),
        seed,
    })
    .expect("selfcheck instance generation")
}

/// Width-4 instances keep the seed-partial search feasible at beta = 1/2:
/// each clause then tolerates a second set variable besides its satisfier.
fn count_instance(seed: u64) -> CnfFormula {
    gen_cnf(&GenParams {
        n: 12,
        k_min: 4,
        k_max: 4,
        d: 2,
        monotone: seed % 2 == 0,
        m: Some(4),
        seed,
    })
    .expect("selfcheck count instance generation")
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

/// Run every suite; any failed check is an invariant violation.
pub fn run_selfcheck() -> Result<SelfcheckReport> {
    let budget = OracleBudget::default();
    let mut report = SelfcheckReport::default();
    let mut push = |name: &'static str, passed: bool, detail: String| {
        report.checks.push(CheckResult {
            name,
            passed,
            detail,
        });
    };

    // Simplify idempotence and conditioned-count preservation.
    {
        let mut ok = true;
        let mut checked = 0usize;
        for seed in 0..10 {
            let phi = test_instance(seed);
            let assignment = PartialAssignment::from_pairs([(1, seed % 2 == 0), (4, true)]);
            let (once, _) = simplify(&phi, &assignment);
            let (twice, _) = simplify(&once, &assignment);
            ok &= once == twice;
            // Count preservation: conditioned count equals the simplified
            // formula's count over unset variables.
            let direct = count_consistent(&phi, &assignment, &budget)?;
            let via_simplified = count_sat(&once, &budget)?;
            ok &= via_simplified.value() >> assignment.len() == *direct.value();
            checked += 1;
        }
        push("simplify-idempotence", ok, format!("{checked} instances"));
    }

    // Partition identity of the exact counter.
    {
        let mut ok = true;
        for seed in 0..6 {
            let phi = test_instance(100 + seed);
            let total = count_sat(&phi, &budget)?;
            for y in 1..=phi.num_vars() {
                let t = count_consistent(&phi, &PartialAssignment::new().with(y, true), &budget)?;
                let f = count_consistent(&phi, &PartialAssignment::new().with(y, false), &budget)?;
                ok &= t.value() + f.value() == *total.value();
            }
        }
        push("count-partition-identity", ok, "6 instances, all variables".into());
    }

    // Marking and seed-partial postconditions.
    {
        let mut ok = true;
        for seed in 0..25 {
            let phi = gen_cnf(&GenParams {
                n: 24,
                k_min: 8,
                k_max: 8,
                d: 2,
                monotone: true,
                m: Some(5),
                seed: 200 + seed,
            })
            .expect("marking instance");
            let rc = ResampleConfig { max_resamples: 1_000_000, rng_seed: seed };
            let marking = find_marking(&phi, &rat(1, 4), &rc)?;
            for clause in phi.clauses() {
                let marked = clause.vars().filter(|v| marking.is_marked(*v)).count();
                ok &= marked >= 2 && clause.width() - marked >= 2;
            }
            let seed_partial = find_seed_partial(&phi, &SeedProbs::desk_scale(), &rat(1, 2), &rc)?;
            for clause in phi.clauses() {
                let mut satisfied = false;
                let mut unset = 0;
                for lit in clause.literals() {
                    match seed_partial.get(lit.var) {
                        Some(v) => satisfied |= lit.eval(v),
                        None => unset += 1,
                    }
                }
                ok &= satisfied && unset >= clause.width().div_ceil(2);
            }
        }
        push("marking-and-seed-postconditions", ok, "25 runs each".into());
    }

    // Factorization on 100 coupled runs.
    {
        let mut oracle = ExactOracle::default();
        let mut coupled = 0usize;
        let mut ok = true;
        let mut seed = 0u64;
        while coupled < 100 && seed < 400 {
            let phi = test_instance(300 + seed);
            let marking = Marking::new((1..=phi.num_vars()).collect());
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            seed += 1;
            let Ok(run) = run_coupling(&phi, 1, &marking, &mut oracle, 100, &mut rng) else {
                continue;
            };
            if run.outcome.terminated == Termination::Coupled {
                coupled += 1;
                ok &= verify_factorization(&phi, &run.outcome).ok;
            }
        }
        push(
            "coupling-factorization",
            ok && coupled >= 100,
            format!("{coupled} coupled runs"),
        );
    }

    // Balance identity: residual exactly zero.
    {
        let mut oracle = ExactOracle::default();
        let mut ok = true;
        let mut checked = 0usize;
        for seed in 0..6 {
            let phi = gen_cnf(&GenParams {
                n: 8,
                k_min: 2,
                k_max: 3,
                d: 2,
                monotone: false,
                m: Some(4),
                seed: 700 + seed,
            })
            .expect("balance instance");
            let marking = Marking::new((1..=phi.num_vars()).collect());
            let tree = build_tree(&phi, 1, &marking, 100, 100_000)?;
            let Ok(tree) = annotate_probabilities(tree, &phi, &mut oracle) else {
                continue;
            };
            let residual = check_balance(&phi, &tree, &budget)?;
            ok &= residual == rat_zero();
            checked += 1;
        }
        push("balance-identity", ok, format!("{checked} trees, residual 0"));
    }

    // Certification containment on a small instance.
    {
        let phi = crate::cnf::parse_dimacs("p cnf 2 1\n1 2 0\n").expect("tiny instance");
        let marking = Marking::new([1u32, 2].into_iter().collect());
        let outcome = crate::certify::certify_marginal(
            &phi,
            1,
            &marking,
            10,
            &rat(4, 1),
            &rat(1, 20),
            &crate::certify::CertifyBudgets::default(),
        )?;
        let truth = crate::oracle::exact_marginal(&phi, &PartialAssignment::new(), 1, &budget)?;
        let ok = outcome.interval.lo.as_rat() <= truth.as_rat()
            && truth.as_rat() <= outcome.interval.hi.as_rat();
        push(
            "certify-containment",
            ok,
            format!(
                "q={} in [{}, {}]",
                rat_to_string(truth.as_rat()),
                rat_to_string(outcome.interval.lo.as_rat()),
                rat_to_string(outcome.interval.hi.as_rat())
            ),
        );
    }

    // Pipeline exactness with the exact oracle.
    {
        let mut ok = true;
        for seed in 0..6 {
            let phi = count_instance(500 + seed);
            let mut oracle = MarginalOracleHandle::exact(budget);
            let est = approx_count(&phi, &mut oracle, &desk_cfg(seed))?;
            let truth = count_sat(&phi, &budget)?;
            ok &= est.value == truth.to_rat();
        }
        push("telescoping-exactness", ok, "6 instances".into());
    }

    // Sampler outputs satisfy the formula and components decompose cleanly.
    {
        let mut ok = true;
        for seed in 0..4 {
            let phi = test_instance(600 + seed);
            let mut oracle = MarginalOracleHandle::exact(budget);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..25 {
                let run = approx_sample(&phi, &mut oracle, &desk_cfg(seed), &mut rng)?;
                ok &= phi.satisfied_by(&run.assignment);
            }
            let d = connected_components(&phi);
            let clause_total: usize = d.components.iter().map(|c| c.clause_indices.len()).sum();
            ok &= clause_total == phi.num_clauses();
        }
        push("sampler-validity", ok, "4 instances x 25 draws".into());
    }

    // Inference round trip.
    {
        let mut ok = true;
        let network = CauseNetwork::from_json(
            "{\"hidden\": 6, \"observed\": [ {\"kind\": \"or\", \"lits\": [1, 2, 3]}, {\"kind\": \"and\", \"lits\": [4, -5, 6]} ]}",
        )?;
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..50 {
            let (hidden, obs) = sample_forward(&network, &mut rng);
            let (forced, residual) = preprocess(&network, &obs)?;
            for (var, value) in forced.iter() {
                ok &= hidden.get(var) == value;
            }
            ok &= residual.satisfied_by(&hidden);
            let mut oracle = MarginalOracleHandle::exact(budget);
            let s = posterior_sample(&network, &obs, &mut oracle, &desk_cfg(1), &mut rng)?;
            for (i, o) in network.observed().iter().enumerate() {
                ok &= o.eval(&s.hidden) == obs.values[i];
            }
        }
        push("inference-round-trip", ok, "50 forward samples".into());
    }

    Ok(report)
}
