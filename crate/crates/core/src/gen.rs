//! Random bounded-degree CNF instance generation for tests and experiments.
//!
//! Construction is rejection-with-repair: clauses are drawn repeatedly and a
//! draw that would push a variable past its degree budget is redrawn, with
//! capped retries. No uniformity over formulas is claimed.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cnf::{Clause, CnfFormula, Literal};
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct GenParams {
    pub n: u32,
    pub k_min: usize,
    pub k_max: usize,
    pub d: usize,
    /// Suppress negations (hypergraph independent-set instances).
    pub monotone: bool,
    /// Number of clauses; `None` fills the degree budget.
    pub m: Option<usize>,
    pub seed: u64,
}

const CLAUSE_RETRIES: usize = 2000;

/// Generate a random formula where every clause width lies in
/// `[k_min, k_max]` and every variable appears in at most `d` clauses.
/// Deterministic for a fixed seed.
pub fn gen_cnf(params: &GenParams) -> Result<CnfFormula> {
    let GenParams {
        n,
        k_min,
        k_max,
        d,
        monotone,
        m,
        seed,
    } = params.clone();
    if k_min == 0 || k_min > k_max || k_max > n as usize {
        return Err(Error::InvalidParameter {
            what: "k_min..k_max",
            why: format!("need 1 <= k_min <= k_max <= n, got {k_min}..{k_max} with n={n}"),
        });
    }
    if d == 0 {
        return Err(Error::InvalidParameter {
            what: "d",
            why: "degree bound must be positive".into(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut remaining = vec![d; n as usize + 1];
    let mut clauses: Vec<Clause> = Vec::new();

    let target = m;
    loop {
        if let Some(t) = target {
            if clauses.len() == t {
                break;
            }
        }
        let mut placed = false;
        for _ in 0..CLAUSE_RETRIES {
            let width = rng.gen_range(k_min..=k_max);
            let available: Vec<u32> = (1..=n).filter(|&v| remaining[v as usize] > 0).collect();
            if available.len() < k_min {
                break;
            }
            if available.len() < width {
                continue;
            }
            let mut vars = available;
            vars.shuffle(&mut rng);
            vars.truncate(width);
            vars.sort_unstable();
            let literals: Vec<Literal> = vars
                .iter()
                .map(|&v| Literal {
                    var: v,
                    negated: if monotone { false } else { rng.gen_bool(0.5) },
                })
                .collect();
            for &v in &vars {
                remaining[v as usize] -= 1;
            }
            clauses.push(Clause::new(literals).expect("generated clause has distinct vars"));
            placed = true;
            break;
        }
        if !placed {
            if target.is_some() {
                return Err(Error::GenInfeasible(format!(
                    "placed {} of {} clauses before exhausting the degree budget",
                    clauses.len(),
                    target.unwrap()
                )));
            }
            break;
        }
    }

    CnfFormula::new(n, clauses)
}
