//! Command-line surface: instance and network generators, the oracle
//! reference commands, the pipeline entry points, certification, and the
//! invariant self-check.
//!
//! Results go to stdout (or `--out`) as JSON unless noted; diagnostics go to
//! stderr. Exit codes: 0 success, 1 usage error, 2 budget error,
//! 3 invariant/certification failure. Every subcommand is deterministic for
//! a fixed `--seed`.

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use std::collections::BTreeMap;
use std::path::PathBuf;

use lllsat::certify::{certify_marginal, outcome_json, CertifyBudgets};
use lllsat::cnf::{
    build_variable_graph, emit_dimacs, parse_dimacs, CnfFormula, PartialAssignment,
};
use lllsat::coupling::{max_3tree, run_coupling, Termination};
use lllsat::dtree::{build_tree, dump_tree_json};
use lllsat::gen::{gen_cnf, GenParams};
use lllsat::inference::{posterior_sample, CauseNetwork, ObservationSet};
use lllsat::lll::{
    find_marking, find_seed_partial, marginal_bounds, moser_tardos, MarginalBoundParams,
    ResampleConfig, SeedProbs,
};
use lllsat::numeric::{rat, rat_from_str, rat_to_f64, rat_to_string, Rat};
use lllsat::oracle::{
    count_sat, enumerate_sat, exact_marginal, exact_sample, ExactOracle, OracleBudget,
};
use lllsat::pipeline::{
    approx_count, approx_sample, sampler_marking, CertifiedConfig, MarginalOracleHandle,
    PipelineConfig,
};
use lllsat::selfcheck::run_selfcheck;
use lllsat::sidecar::Sidecar;
use lllsat::{Error, Result};

fn parse_rat(s: &str) -> std::result::Result<Rat, String> {
    rat_from_str(s)
}

#[derive(Parser)]
#[command(name = "lllsat", version, about = "Approximate counting and near-uniform sampling of CNF satisfying assignments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonOut {
    /// Write the result here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct SearchOpts {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1_000_000)]
    max_resamples: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random bounded-degree formula as DIMACS.
    Gen {
        #[arg(long)]
        n: u32,
        #[arg(long, default_value_t = 3)]
        k_min: usize,
        #[arg(long, default_value_t = 3)]
        k_max: usize,
        #[arg(long, default_value_t = 2)]
        d: usize,
        /// Suppress negations (hypergraph independent-set instances).
        #[arg(long)]
        monotone: bool,
        /// Clause count; omitted means fill the degree budget.
        #[arg(long)]
        clauses: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        out: CommonOut,
    },
    /// Exact reference answers by brute-force enumeration.
    Oracle {
        #[command(subcommand)]
        command: OracleCommand,
    },
    /// Find a satisfying assignment by resampling violated clauses.
    MoserTardos {
        file: PathBuf,
        #[command(flatten)]
        search: SearchOpts,
        #[command(flatten)]
        out: CommonOut,
    },
    /// Find a marked/unmarked labeling and write it as a sidecar.
    Mark {
        file: PathBuf,
        /// Required marked/unmarked fraction per clause.
        #[arg(long, default_value = "1/4", value_parser = parse_rat)]
        alpha: Rat,
        #[command(flatten)]
        search: SearchOpts,
        #[command(flatten)]
        out: CommonOut,
    },
    /// Find a seed partial assignment and write it as a sidecar.
    SeedPartial {
        file: PathBuf,
        /// Required unset fraction per clause.
        #[arg(long, default_value = "7/8", value_parser = parse_rat)]
        beta: Rat,
        /// Per-variable probabilities "p_true,p_false,p_unset".
        #[arg(long, default_value = "1/32,1/32,15/16")]
        probs: String,
        #[command(flatten)]
        search: SearchOpts,
        #[command(flatten)]
        out: CommonOut,
    },
    /// Run the coupling procedure repeatedly and report statistics.
    CoupleStats {
        file: PathBuf,
        #[arg(long)]
        var: u32,
        #[arg(long, default_value_t = 1000)]
        runs: u64,
        #[arg(long)]
        tau: Option<usize>,
        #[arg(long, default_value = "1/4", value_parser = parse_rat)]
        alpha: Rat,
        #[command(flatten)]
        search: SearchOpts,
        #[command(flatten)]
        out: CommonOut,
    },
    /// Certify a marginal interval by LP feasibility over the grid.
    Certify {
        file: PathBuf,
        #[arg(long)]
        var: u32,
        #[arg(long)]
        tau: Option<usize>,
        #[arg(long, default_value = "1/100", value_parser = parse_rat)]
        grid_eps: Rat,
        /// Flip-cap slack; omitted picks max(8, d^3).
        #[arg(long, value_parser = parse_rat)]
        slack_s: Option<Rat>,
        #[arg(long, default_value = "1/4", value_parser = parse_rat)]
        alpha: Rat,
        #[arg(long, default_value_t = 200_000)]
        tree_budget: usize,
        /// Dump the structural decision tree alongside the result.
        #[arg(long)]
        dump_tree: bool,
        #[command(flatten)]
        search: SearchOpts,
        #[command(flatten)]
        out: CommonOut,
    },
    /// Estimate the satisfying-assignment count by telescoping marginals.
    Count {
        file: PathBuf,
        #[arg(long, value_enum, default_value_t = OracleChoice::Exact)]
        oracle: OracleChoice,
        #[command(flatten)]
        pipeline: PipelineArgs,
        /// Compare against the exact count when it is within budget.
        #[arg(long)]
        self_check: bool,
        #[command(flatten)]
        out: CommonOut,
    },
    /// Draw assignments approximately uniformly from the satisfying set.
    Sample {
        file: PathBuf,
        #[arg(long, value_enum, default_value_t = OracleChoice::Exact)]
        oracle: OracleChoice,
        #[arg(long, default_value_t = 1)]
        draws: u64,
        #[command(flatten)]
        pipeline: PipelineArgs,
        /// Estimate the total-variation distance against enumeration.
        #[arg(long)]
        self_check: bool,
        #[command(flatten)]
        out: CommonOut,
    },
    /// Sample hidden variables of a cause network from the posterior.
    Infer {
        #[arg(long)]
        network: PathBuf,
        #[arg(long)]
        obs: PathBuf,
        #[arg(long, default_value_t = 1)]
        draws: u64,
        #[command(flatten)]
        pipeline: PipelineArgs,
        #[command(flatten)]
        out: CommonOut,
    },
    /// Evaluate the local-lemma-style side conditions for a formula.
    Conditions {
        file: PathBuf,
        /// Slack for the marginal-bound variant.
        #[arg(long, default_value = "8", value_parser = parse_rat)]
        slack_s: Rat,
        #[command(flatten)]
        out: CommonOut,
    },
    /// Run the oracle-backed invariant suites; nonzero exit on violation.
    Selfcheck,
}

#[derive(Subcommand)]
enum OracleCommand {
    /// Exact satisfying-assignment count.
    Count {
        file: PathBuf,
        #[arg(long, default_value_t = 30)]
        max_component_vars: usize,
        #[command(flatten)]
        out: CommonOut,
    },
    /// Exact conditional marginal of a variable.
    Marginal {
        file: PathBuf,
        #[arg(long)]
        var: u32,
        /// Sidecar with a conditioning partial assignment.
        #[arg(long)]
        sidecar: Option<PathBuf>,
        #[arg(long, default_value_t = 30)]
        max_component_vars: usize,
        #[command(flatten)]
        out: CommonOut,
    },
    /// Exact uniform draws from the satisfying assignments.
    Sample {
        file: PathBuf,
        #[arg(long, default_value_t = 1)]
        draws: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 30)]
        max_component_vars: usize,
        #[command(flatten)]
        out: CommonOut,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
enum OracleChoice {
    Exact,
    Certified,
}

#[derive(Args, Clone)]
struct PipelineArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "1/4", value_parser = parse_rat)]
    alpha: Rat,
    #[arg(long, default_value = "7/8", value_parser = parse_rat)]
    beta: Rat,
    /// Per-variable seed probabilities "p_true,p_false,p_unset".
    #[arg(long, default_value = "1/32,1/32,15/16")]
    probs: String,
    #[arg(long, default_value_t = 1_000_000)]
    max_resamples: u64,
    #[arg(long, default_value_t = 24)]
    component_cap: usize,
    /// Oracle enumeration budget (variables per component).
    #[arg(long, default_value_t = 30)]
    oracle_vars: usize,
    /// Stopping threshold for certified-oracle trees.
    #[arg(long)]
    tau: Option<usize>,
    #[arg(long, default_value = "1/100", value_parser = parse_rat)]
    grid_eps: Rat,
    #[arg(long, value_parser = parse_rat)]
    slack_s: Option<Rat>,
    #[arg(long, default_value_t = 200_000)]
    tree_budget: usize,
}

fn parse_probs(text: &str) -> Result<SeedProbs> {
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != 3 {
        return Err(Error::InvalidParameter {
            what: "probs",
            why: format!("expected three comma-separated rationals, got {text:?}"),
        });
    }
    let parse =
        |s: &str| rat_from_str(s).map_err(|why| Error::InvalidParameter { what: "probs", why });
    Ok(SeedProbs {
        p_true: parse(parts[0])?,
        p_false: parse(parts[1])?,
        p_unset: parse(parts[2])?,
    })
}

impl PipelineArgs {
    fn config(&self) -> Result<PipelineConfig> {
        Ok(PipelineConfig {
            seed: self.seed,
            alpha: self.alpha.clone(),
            beta: self.beta.clone(),
            seed_probs: parse_probs(&self.probs)?,
            max_resamples: self.max_resamples,
            component_cap: self.component_cap,
        })
    }

    fn oracle(&self, choice: OracleChoice, phi: &CnfFormula) -> MarginalOracleHandle {
        let budget = OracleBudget::new(self.oracle_vars);
        match choice {
            OracleChoice::Exact => MarginalOracleHandle::exact(budget),
            OracleChoice::Certified => MarginalOracleHandle::certified(
                CertifiedConfig {
                    tau: self.tau.unwrap_or(phi.num_vars() as usize),
                    grid_eps: self.grid_eps.clone(),
                    slack_s: self.slack_s.clone(),
                    alpha: self.alpha.clone(),
                    max_resamples: self.max_resamples,
                    marking_seed: self.seed,
                    budgets: CertifyBudgets {
                        tree_nodes: self.tree_budget,
                        oracle: budget,
                    },
                },
                budget,
            ),
        }
    }
}

fn read_formula(path: &PathBuf) -> Result<CnfFormula> {
    let text = std::fs::read_to_string(path)?;
    Ok(parse_dimacs(&text)?)
}

fn emit(out: &CommonOut, content: &str) -> Result<()> {
    match &out.out {
        Some(path) => std::fs::write(path, format!("{content}\n"))?,
        None => println!("{content}"),
    }
    Ok(())
}

fn emit_json(out: &CommonOut, value: &Value) -> Result<()> {
    emit(out, &serde_json::to_string_pretty(value)?)
}

fn assignment_json(assignment: &lllsat::cnf::TotalAssignment) -> Value {
    json!(assignment.bits())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen {
            n,
            k_min,
            k_max,
            d,
            monotone,
            clauses,
            seed,
            out,
        } => {
            let phi = gen_cnf(&GenParams {
                n,
                k_min,
                k_max,
                d,
                monotone,
                m: clauses,
                seed,
            })?;
            emit(&out, emit_dimacs(&phi).trim_end())
        }
        Command::Oracle { command } => run_oracle(command),
        Command::MoserTardos { file, search, out } => {
            let phi = read_formula(&file)?;
            let outcome = moser_tardos(
                &phi,
                &ResampleConfig {
                    max_resamples: search.max_resamples,
                    rng_seed: search.seed,
                },
            )?;
            emit_json(
                &out,
                &json!({
                    "assignment": assignment_json(&outcome.assignment),
                    "resamples": outcome.resamples,
                    "lll_condition_holds": outcome.condition_holds,
                }),
            )
        }
        Command::Mark {
            file,
            alpha,
            search,
            out,
        } => {
            let phi = read_formula(&file)?;
            let marking = find_marking(
                &phi,
                &alpha,
                &ResampleConfig {
                    max_resamples: search.max_resamples,
                    rng_seed: search.seed,
                },
            )?;
            let mut sidecar = Sidecar::default().with_marking(&marking);
            sidecar.seed = Some(search.seed);
            emit(&out, &sidecar.to_json())
        }
        Command::SeedPartial {
            file,
            beta,
            probs,
            search,
            out,
        } => {
            let phi = read_formula(&file)?;
            let assignment = find_seed_partial(
                &phi,
                &parse_probs(&probs)?,
                &beta,
                &ResampleConfig {
                    max_resamples: search.max_resamples,
                    rng_seed: search.seed,
                },
            )?;
            let mut sidecar = Sidecar::default().with_assignment(&assignment);
            sidecar.seed = Some(search.seed);
            emit(&out, &sidecar.to_json())
        }
        Command::CoupleStats {
            file,
            var,
            runs,
            tau,
            alpha,
            search,
            out,
        } => {
            let phi = read_formula(&file)?;
            let tau = tau.unwrap_or(phi.num_vars() as usize);
            let marking = sampler_marking(
                &phi,
                &alpha,
                &ResampleConfig {
                    max_resamples: search.max_resamples,
                    rng_seed: search.seed,
                },
            )?;
            let mut oracle = ExactOracle::default();
            let mut run_records = Vec::new();
            let mut histogram: BTreeMap<usize, u64> = BTreeMap::new();
            for i in 0..runs {
                let mut rng = ChaCha8Rng::seed_from_u64(search.seed.wrapping_add(i));
                let record = run_coupling(&phi, var, &marking, &mut oracle, tau, &mut rng)?;
                let vi = record.outcome.v_inner.len();
                *histogram.entry(vi).or_default() += 1;
                let g = build_variable_graph(&phi, &record.outcome.v_inner);
                let tree = max_3tree(&g, var);
                run_records.push(json!({
                    "seed": search.seed.wrapping_add(i),
                    "vi": vi,
                    "terminated": match record.outcome.terminated {
                        Termination::Coupled => "coupled",
                        Termination::Truncated => "truncated",
                    },
                    "type1": record.ledger.type1.len(),
                    "type2": record.ledger.type2.len(),
                    "three_tree": tree.vertices.len(),
                }));
            }
            emit_json(
                &out,
                &json!({
                    "var": var,
                    "tau": tau,
                    "runs": runs,
                    "vi_histogram": histogram
                        .iter()
                        .map(|(k, v)| (k.to_string(), *v))
                        .collect::<BTreeMap<String, u64>>(),
                    "per_run": run_records,
                }),
            )
        }
        Command::Certify {
            file,
            var,
            tau,
            grid_eps,
            slack_s,
            alpha,
            tree_budget,
            dump_tree,
            search,
            out,
        } => {
            let phi = read_formula(&file)?;
            let tau = tau.unwrap_or(phi.num_vars() as usize);
            let slack = slack_s.unwrap_or_else(|| lllsat::certify::default_slack(phi.stats()));
            let marking = sampler_marking(
                &phi,
                &alpha,
                &ResampleConfig {
                    max_resamples: search.max_resamples,
                    rng_seed: search.seed,
                },
            )?;
            let budgets = CertifyBudgets {
                tree_nodes: tree_budget,
                oracle: OracleBudget::default(),
            };
            let outcome = certify_marginal(&phi, var, &marking, tau, &slack, &grid_eps, &budgets)?;
            let mut value = outcome_json(&outcome);
            if dump_tree {
                let tree = build_tree(&phi, var, &marking, tau, tree_budget)?;
                value["tree"] = dump_tree_json(&tree);
            }
            emit_json(&out, &value)
        }
        Command::Count {
            file,
            oracle,
            pipeline,
            self_check,
            out,
        } => {
            let phi = read_formula(&file)?;
            let cfg = pipeline.config()?;
            let mut handle = pipeline.oracle(oracle, &phi);
            let estimate = approx_count(&phi, &mut handle, &cfg)?;
            let mut value = json!({
                "estimate": rat_to_string(&estimate.value),
                "estimate_f64": rat_to_f64(&estimate.value),
                "log2": estimate.log2_value,
                "oracle": match oracle {
                    OracleChoice::Exact => "exact",
                    OracleChoice::Certified => "certified",
                },
                "per_step": estimate.per_step.iter().map(|s| json!({
                    "var": s.var,
                    "value": s.value,
                    "q": rat_to_string(s.q.as_rat()),
                    "half_width": rat_to_string(&s.half_width),
                })).collect::<Vec<_>>(),
            });
            if self_check {
                let exact = count_sat(&phi, &OracleBudget::new(pipeline.oracle_vars))?;
                value["self_check"] = json!({
                    "exact_count": exact.to_string(),
                    "matches": estimate.value == exact.to_rat(),
                });
            }
            emit_json(&out, &value)
        }
        Command::Sample {
            file,
            oracle,
            draws,
            pipeline,
            self_check,
            out,
        } => {
            let phi = read_formula(&file)?;
            let cfg = pipeline.config()?;
            let mut handle = pipeline.oracle(oracle, &phi);
            let mut rng = ChaCha8Rng::seed_from_u64(pipeline.seed);
            let mut samples = Vec::new();
            let mut freq: BTreeMap<String, u64> = BTreeMap::new();
            for _ in 0..draws {
                let run = approx_sample(&phi, &mut handle, &cfg, &mut rng)?;
                *freq.entry(run.assignment.bits()).or_default() += 1;
                samples.push(json!({
                    "assignment": assignment_json(&run.assignment),
                    "vi_sizes": run.vi_sizes,
                    "component_sizes": run.component_sizes,
                }));
            }
            let mut value = json!({
                "draws": draws,
                "samples": samples,
            });
            if self_check {
                let support: Vec<String> =
                    enumerate_sat(&phi, &OracleBudget::new(pipeline.oracle_vars))?
                        .map(|a| a.bits())
                        .collect();
                let uniform = 1.0 / support.len() as f64;
                let mut tv = 0.0;
                for bits in &support {
                    let f = *freq.get(bits).unwrap_or(&0) as f64 / draws as f64;
                    tv += (f - uniform).abs();
                }
                // Mass on assignments outside the support counts fully.
                for (bits, count) in &freq {
                    if !support.contains(bits) {
                        tv += *count as f64 / draws as f64;
                    }
                }
                tv /= 2.0;
                value["self_check"] = json!({
                    "support": support.len(),
                    "empirical_tv": tv,
                });
            }
            emit_json(&out, &value)
        }
        Command::Infer {
            network,
            obs,
            draws,
            pipeline,
            out,
        } => {
            let network = CauseNetwork::from_json(&std::fs::read_to_string(network)?)?;
            let obs = ObservationSet::from_json(&std::fs::read_to_string(obs)?)?;
            let cfg = pipeline.config()?;
            let budget = OracleBudget::new(pipeline.oracle_vars);
            let mut handle = MarginalOracleHandle::exact(budget);
            let mut rng = ChaCha8Rng::seed_from_u64(pipeline.seed);
            let mut samples = Vec::new();
            let mut regular = true;
            for _ in 0..draws {
                let s = posterior_sample(&network, &obs, &mut handle, &cfg, &mut rng)?;
                regular = s.regular;
                samples.push(assignment_json(&s.hidden));
            }
            if !regular {
                eprintln!(
                    "warning: observations are not regular; posterior sampling proceeded anyway"
                );
            }
            emit_json(
                &out,
                &json!({
                    "draws": draws,
                    "regular": regular,
                    "samples": samples,
                }),
            )
        }
        Command::Conditions { file, slack_s, out } => {
            let phi = read_formula(&file)?;
            let stats = phi.stats();
            use lllsat::cnf::{check_lll_condition, LllVariant};
            let params = MarginalBoundParams::new(stats.k_min, stats.big_d, slack_s.clone());
            let bounds = if slack_s > rat(4, 1) {
                let (lo, hi) = marginal_bounds(&params);
                json!({
                    "lo": rat_to_string(lo.as_rat()),
                    "hi": rat_to_string(hi.as_rat()),
                })
            } else {
                Value::Null
            };
            emit_json(
                &out,
                &json!({
                    "stats": {
                        "n": stats.n,
                        "m": stats.m,
                        "d": stats.d,
                        "k_min": stats.k_min,
                        "k_max": stats.k_max,
                        "big_d": stats.big_d,
                    },
                    "existence": check_lll_condition(stats, &LllVariant::Existence),
                    "marginal_bound": check_lll_condition(
                        stats,
                        &LllVariant::MarginalBound(slack_s.clone())
                    ),
                    "marking": check_lll_condition(stats, &LllVariant::Marking),
                    "seed_partial": check_lll_condition(stats, &LllVariant::SeedPartial),
                    "marginal_interval": bounds,
                }),
            )
        }
        Command::Selfcheck => {
            let report = run_selfcheck()?;
            for check in &report.checks {
                println!(
                    "{} {} ({})",
                    if check.passed { "PASS" } else { "FAIL" },
                    check.name,
                    check.detail
                );
            }
            if report.all_passed() {
                Ok(())
            } else {
                Err(Error::InternalConsistency(
                    "selfcheck found invariant violations".into(),
                ))
            }
        }
    }
}

fn run_oracle(command: OracleCommand) -> Result<()> {
    match command {
        OracleCommand::Count {
            file,
            max_component_vars,
            out,
        } => {
            let phi = read_formula(&file)?;
            let count = count_sat(&phi, &OracleBudget::new(max_component_vars))?;
            emit(&out, &count.to_string())
        }
        OracleCommand::Marginal {
            file,
            var,
            sidecar,
            max_component_vars,
            out,
        } => {
            let phi = read_formula(&file)?;
            let assignment = match sidecar {
                Some(path) => Sidecar::from_json(&std::fs::read_to_string(path)?)?
                    .assignment()?
                    .unwrap_or_default(),
                None => PartialAssignment::new(),
            };
            let p =
                exact_marginal(&phi, &assignment, var, &OracleBudget::new(max_component_vars))?;
            emit_json(
                &out,
                &json!({
                    "var": var,
                    "marginal": rat_to_string(p.as_rat()),
                    "marginal_f64": p.to_f64(),
                }),
            )
        }
        OracleCommand::Sample {
            file,
            draws,
            seed,
            max_component_vars,
            out,
        } => {
            let phi = read_formula(&file)?;
            let budget = OracleBudget::new(max_component_vars);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut samples = Vec::new();
            for _ in 0..draws {
                samples.push(assignment_json(&exact_sample(&phi, &budget, &mut rng)?));
            }
            emit_json(&out, &json!({ "draws": draws, "samples": samples }))
        }
    }
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
