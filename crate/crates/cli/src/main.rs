//! Command-line pipeline: solve an instance end to end, compute the
//! brute-force optimal revenue, compare mechanisms, run the sample-access
//! pipeline, diagnose a solution, or run the shipped verification battery.
//!
//! Every command is deterministic given --seed and --arith; reports embed
//! the instance hash, the seed, and the tool version.

mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sha2::{Digest, Sha256};

use mechkit::diagnostics::{
    compute_shifted_prices, compute_tau, eta_suite, mu_suite, DualDistribution,
};
use mechkit::exact::optimal_bic_revenue;
use mechkit::lp::ArithMode;
use mechkit::mechanisms::{
    expected_revenue, optimize_rpp, MechanismSpec, RevMethod, RppSpec, TptSpec,
};
use mechkit::model::{validate_instance, Instance, PROFILE_ENUM_CAP};
use mechkit::num::{rat, rat_f64, rat_i, rat_is_positive, rat_is_zero, rat_str, Rat};
use mechkit::polytopes::{
    build_approx_polytope, exact_polytope, ApproxPolytope, PolyMode, GENERATOR_CAP,
};
use mechkit::relaxation::{
    build_dual_grid, compute_item_prices, solve_relaxation, AllocationRule, DualGrid,
    RelaxationSolution, SolvedRelaxation,
};
use mechkit::Error;
use report::*;

const EXIT_PARSE: u8 = 2;
const EXIT_CAP: u8 = 3;
const EXIT_INTERNAL: u8 = 4;

#[derive(Parser)]
#[command(name = "mechkit", version, about = "Simple-mechanism solver and simulator")]
struct Cli {
    /// Size of the worker pool (defaults to the number of cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ArithFlag {
    Float,
    Rational,
}

impl From<ArithFlag> for ArithMode {
    fn from(f: ArithFlag) -> ArithMode {
        match f {
            ArithFlag::Float => ArithMode::Float,
            ArithFlag::Rational => ArithMode::Rational,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PolyFlag {
    ExactPoly,
    SampledPoly,
}

#[derive(Args)]
struct CommonOut {
    /// Write the full JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the whole pipeline: posted-price search, dual grid, polytopes,
    /// relaxation LP, item prices, two-part tariff.
    Solve {
        instance: PathBuf,
        #[arg(long, value_enum, default_value = "exact-poly")]
        mode: PolyFlag,
        /// Samples per bidder for the sampled polytope mode.
        #[arg(long, default_value_t = 200)]
        poly_samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "float")]
        arith: ArithFlag,
        #[command(flatten)]
        out: CommonOut,
    },
    /// Brute-force optimal BIC and IR revenue with witness export.
    Opt {
        instance: PathBuf,
        #[arg(long, value_enum, default_value = "float")]
        arith: ArithFlag,
        #[command(flatten)]
        out: CommonOut,
    },
    /// Table of OPT, PRev, OPT_LP, simple-mechanism revenues and the chain
    /// inequality verdict.
    Compare {
        instance: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "float")]
        arith: ArithFlag,
        #[command(flatten)]
        out: CommonOut,
    },
    /// Sample-access pipeline: DKW sizing, empirical instances, Kolmogorov
    /// concentration, and the empirical-to-true revenue gap.
    Sample {
        instance: PathBuf,
        #[arg(long)]
        eps: f64,
        #[arg(long)]
        delta: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        trials: usize,
        /// Write per-trial draws as CSV (trial, bidder, item, draw, value).
        #[arg(long)]
        log: Option<PathBuf>,
        #[command(flatten)]
        out: CommonOut,
    },
    /// Shift diagnostics and property suites for a saved solve report.
    Diagnose {
        solution: PathBuf,
        #[command(flatten)]
        out: CommonOut,
    },
    /// Run the shipped acceptance battery.
    Selftest,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("could not size the worker pool: {e}");
        }
    }
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                Error::Parse(_) | Error::Invalid(_) | Error::InvalidArgument(_) => EXIT_PARSE,
                Error::CapExceeded { .. } => EXIT_CAP,
                Error::Internal(_) => EXIT_INTERNAL,
            };
            ExitCode::from(code)
        }
    }
}

fn load_instance(path: &PathBuf) -> Result<(Instance, String), Error> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Parse(format!("cannot read {}: {e}", path.display())))?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|e| Error::Parse(format!("{} is not UTF-8: {e}", path.display())))?;
    let inst = Instance::from_json(&text)?;
    let report = validate_instance(&inst);
    if !report.is_valid() {
        return Err(Error::Invalid(report.problems));
    }
    let hash = hex::encode(Sha256::digest(&bytes));
    Ok((inst, hash))
}

fn write_report<T: serde::Serialize>(out: &CommonOut, value: &T) -> Result<(), Error> {
    if let Some(path) = &out.out {
        let text = serde_json::to_string_pretty(value)
            .map_err(|e| Error::Internal(format!("report serialization: {e}")))?;
        std::fs::write(path, text)
            .map_err(|e| Error::Internal(format!("cannot write {}: {e}", path.display())))?;
    }
    Ok(())
}

struct Pipeline {
    prev: Rat,
    rpp: RppSpec,
    grid: DualGrid,
    solved: SolvedRelaxation,
    q: Vec<Rat>,
    tpt: TptSpec,
    opt_lp_exact: Option<Rat>,
}

fn run_pipeline(
    inst: &Instance,
    mode: PolyFlag,
    poly_samples: usize,
    seed: u64,
    arith: ArithMode,
) -> Result<Pipeline, Error> {
    let (rpp, prev) = optimize_rpp(inst)?;
    if !rat_is_positive(&prev) {
        return Err(Error::InvalidArgument(
            "all values are zero; no mechanism earns revenue".into(),
        ));
    }
    let grid = build_dual_grid(inst, &prev)?;
    let exact: Vec<ApproxPolytope> = (0..inst.n)
        .map(|i| exact_polytope(inst, i, GENERATOR_CAP))
        .collect::<Result<_, _>>()?;
    let (solved, opt_lp_exact) = match mode {
        PolyFlag::ExactPoly => {
            let solved = solve_relaxation(inst, &grid, AllocationRule::Direct(&exact), arith)?;
            let obj = solved.solution.objective.clone();
            (solved, Some(obj))
        }
        PolyFlag::SampledPoly => {
            let t_total = inst.t_total() as i64;
            let eps = rat(1, 2 * t_total);
            let half = rat(1, 2);
            let approx: Vec<ApproxPolytope> = (0..inst.n)
                .map(|i| {
                    build_approx_polytope(
                        inst,
                        i,
                        &eps,
                        &half,
                        PolyMode::Sampled {
                            n: poly_samples,
                            seed: seed.wrapping_add(i as u64),
                        },
                        GENERATOR_CAP,
                    )
                })
                .collect::<Result<_, _>>()?;
            let xos_any = inst.valuations.iter().any(|v| v.is_xos());
            let rule = if xos_any {
                AllocationRule::Proxy(&approx)
            } else {
                AllocationRule::Direct(&approx)
            };
            let solved = solve_relaxation(inst, &grid, rule, arith)?;
            // The exact optimum is cheap at desk scale; report it next to
            // the approximate one when available.
            let exact_obj = solve_relaxation(inst, &grid, AllocationRule::Direct(&exact), arith)
                .ok()
                .map(|s| s.solution.objective);
            (solved, exact_obj)
        }
    };
    let q = compute_item_prices(inst, &grid, &solved.solution);
    let tpt = TptSpec::lexicographic(inst.n, q.clone());
    Ok(Pipeline {
        prev,
        rpp,
        grid,
        solved,
        q,
        tpt,
        opt_lp_exact,
    })
}

fn solution_tables(
    inst: &Instance,
    grid: &DualGrid,
    sol: &RelaxationSolution,
) -> (Vec<WEntry>, Vec<LambdaEntry>, Vec<LambdaHatEntry>) {
    let mut w = Vec::new();
    let mut lambda = Vec::new();
    let mut lambda_hat = Vec::new();
    for i in 0..inst.n {
        for j in 0..inst.m {
            for t in 0..inst.support_len(i, j) {
                let v = &sol.w[i][j][t];
                if !rat_is_zero(v) {
                    w.push(WEntry {
                        bidder: i,
                        item: j,
                        value_index: t,
                        value: ser(v),
                    });
                }
                for b in 0..grid.beta_count(i, j) {
                    for dd in 0..grid.delta.len() {
                        let lv = &sol.lambda[i][j][t][b][dd];
                        if !rat_is_zero(lv) {
                            lambda.push(LambdaEntry {
                                bidder: i,
                                item: j,
                                value_index: t,
                                beta_index: b,
                                delta_index: dd,
                                value: ser(lv),
                            });
                        }
                    }
                }
            }
            for b in 0..grid.beta_count(i, j) {
                for dd in 0..grid.delta.len() {
                    let lv = &sol.lambda_hat[i][j][b][dd];
                    if !rat_is_zero(lv) {
                        lambda_hat.push(LambdaHatEntry {
                            bidder: i,
                            item: j,
                            beta_index: b,
                            delta_index: dd,
                            value: ser(lv),
                        });
                    }
                }
            }
        }
    }
    (w, lambda, lambda_hat)
}

fn dispatch(cmd: Command) -> Result<ExitCode, Error> {
    match cmd {
        Command::Solve {
            instance,
            mode,
            poly_samples,
            seed,
            arith,
            out,
        } => {
            let (inst, hash) = load_instance(&instance)?;
            let pipe = run_pipeline(&inst, mode, poly_samples, seed, arith.into())?;
            let two_sum_q: Rat = rat_i(2) * pipe.q.iter().cloned().sum::<Rat>();
            let identity = two_sum_q == pipe.solved.solution.objective;
            let (w, lambda, lambda_hat) = solution_tables(&inst, &pipe.grid, &pipe.solved.solution);
            let report = SolveReport {
                version: env!("CARGO_PKG_VERSION").to_string(),
                instance_sha256: hash,
                seed,
                arith: match arith {
                    ArithFlag::Float => "float".into(),
                    ArithFlag::Rational => "rational".into(),
                },
                mode: match mode {
                    PolyFlag::ExactPoly => "exact-poly".into(),
                    PolyFlag::SampledPoly => "sampled-poly".into(),
                },
                poly_samples: match mode {
                    PolyFlag::ExactPoly => None,
                    PolyFlag::SampledPoly => Some(poly_samples),
                },
                prev: ser(&pipe.prev),
                prev_float: float(&pipe.prev),
                opt_lp: match mode {
                    PolyFlag::ExactPoly => pipe.opt_lp_exact.as_ref().map(ser),
                    PolyFlag::SampledPoly => pipe.opt_lp_exact.as_ref().map(ser),
                },
                opt_lp_approx: match mode {
                    PolyFlag::ExactPoly => None,
                    PolyFlag::SampledPoly => Some(ser(&pipe.solved.solution.objective)),
                },
                objective: ser(&pipe.solved.solution.objective),
                objective_float: float(&pipe.solved.solution.objective),
                objective_equals_two_sum_q: identity,
                q: pipe.q.iter().map(ser).collect(),
                q_float: pipe.q.iter().map(float).collect(),
                rpp: RppReport {
                    prices: pipe
                        .rpp
                        .prices
                        .iter()
                        .map(|row| row.iter().map(|p| p.as_ref().map(ser)).collect())
                        .collect(),
                    order: pipe.rpp.order.clone(),
                },
                tpt: TptReport {
                    q: pipe.q.iter().map(ser).collect(),
                    order: pipe.tpt.order.clone(),
                },
                d: pipe.solved.solution.d.iter().map(ser).collect(),
                w,
                lambda,
                lambda_hat,
                instance: inst.clone(),
            };
            println!(
                "prev = {}  objective = {}  2*sum(Q) identity: {}",
                rat_str(&pipe.prev),
                rat_str(&pipe.solved.solution.objective),
                if identity { "ok" } else { "BROKEN" }
            );
            for (j, qj) in pipe.q.iter().enumerate() {
                println!("Q[{j}] = {} ({:.6})", rat_str(qj), rat_f64(qj));
            }
            if !identity {
                return Err(Error::Internal(
                    "price identity failed on the solved relaxation".into(),
                ));
            }
            write_report(&out, &report)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Opt {
            instance,
            arith,
            out,
        } => {
            let (inst, hash) = load_instance(&instance)?;
            let (opt, witness) = optimal_bic_revenue(&inst, PROFILE_ENUM_CAP, arith.into())?;
            println!("opt = {} ({:.6})", rat_str(&opt), rat_f64(&opt));
            let report = OptReport {
                version: env!("CARGO_PKG_VERSION").to_string(),
                instance_sha256: hash,
                arith: match arith {
                    ArithFlag::Float => "float".into(),
                    ArithFlag::Rational => "rational".into(),
                },
                opt: ser(&opt),
                opt_float: float(&opt),
                witness_allocation: witness
                    .allocation
                    .iter()
                    .map(|per| per.iter().map(|(a, p)| (a.clone(), ser(p))).collect())
                    .collect(),
                interim_payments: witness
                    .interim_payments
                    .iter()
                    .map(|row| row.iter().map(ser).collect())
                    .collect(),
            };
            write_report(&out, &report)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Compare {
            instance,
            seed,
            arith,
            out,
        } => {
            let (inst, hash) = load_instance(&instance)?;
            let zero_value = !rat_is_positive(&inst.max_singleton_value());
            let (report, line) = if zero_value {
                // Degenerate all-zero instance: everything is zero and the
                // ratio is one by convention.
                let zero = ser(&rat_i(0));
                (
                    CompareReport {
                        version: env!("CARGO_PKG_VERSION").to_string(),
                        instance_sha256: hash,
                        seed,
                        prev: zero.clone(),
                        opt: zero.clone(),
                        opt_lp: zero.clone(),
                        rev_tpt: zero.clone(),
                        rev_rpp: zero,
                        best_ratio: 1.0,
                        chain_pass: true,
                    },
                    "all-zero instance: every quantity is 0, ratio 1 by convention".to_string(),
                )
            } else {
                let (opt, _) = optimal_bic_revenue(&inst, PROFILE_ENUM_CAP, arith.into())?;
                let pipe = run_pipeline(&inst, PolyFlag::ExactPoly, 0, seed, arith.into())?;
                let rev_rpp = expected_revenue(
                    &inst,
                    &MechanismSpec::Rpp(pipe.rpp.clone()),
                    RevMethod::Exact {
                        cap: PROFILE_ENUM_CAP,
                    },
                )?
                .value;
                let rev_tpt = expected_revenue(
                    &inst,
                    &MechanismSpec::Tpt(pipe.tpt.clone()),
                    RevMethod::Exact {
                        cap: PROFILE_ENUM_CAP,
                    },
                )?
                .value;
                let opt_lp = pipe.opt_lp_exact.clone().expect("exact mode");
                let chain_pass =
                    opt.clone() <= rat_i(28) * &pipe.prev + rat_i(4) * &opt_lp + rat(1, 1_000_000);
                let best = if rev_rpp >= rev_tpt {
                    rev_rpp.clone()
                } else {
                    rev_tpt.clone()
                };
                let best_ratio = if rat_is_zero(&opt) {
                    1.0
                } else {
                    rat_f64(&(&best / &opt))
                };
                let line = format!(
                    "opt = {:.6}  prev = {:.6}  opt_lp = {:.6}  rev_rpp = {:.6}  rev_tpt = {:.6}  best/opt = {:.4}  chain: {}",
                    rat_f64(&opt),
                    rat_f64(&pipe.prev),
                    rat_f64(&opt_lp),
                    rat_f64(&rev_rpp),
                    rat_f64(&rev_tpt),
                    best_ratio,
                    if chain_pass { "PASS" } else { "FAIL" }
                );
                (
                    CompareReport {
                        version: env!("CARGO_PKG_VERSION").to_string(),
                        instance_sha256: hash,
                        seed,
                        prev: ser(&pipe.prev),
                        opt: ser(&opt),
                        opt_lp: ser(&opt_lp),
                        rev_tpt: ser(&rev_tpt),
                        rev_rpp: ser(&rev_rpp),
                        best_ratio,
                        chain_pass,
                    },
                    line,
                )
            };
            println!("{line}");
            write_report(&out, &report)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Sample {
            instance,
            eps,
            delta,
            seed,
            trials,
            log,
            out,
        } => {
            let (inst, hash) = load_instance(&instance)?;
            // The robustness analysis assumes values in [0, 1]; rescale and
            // warn otherwise.
            let max_v = inst.max_singleton_value();
            let (scaled, divisor, rescaled) = if max_v > rat_i(1) {
                eprintln!(
                    "warning: values exceed 1 (max {}); rescaling by 1/{} for the sample pipeline",
                    rat_str(&max_v),
                    rat_str(&max_v)
                );
                (scale_instance(&inst, &max_v), max_v.clone(), true)
            } else {
                (inst.clone(), rat_i(1), false)
            };
            let n_samples = mechkit::sampling::dkw_sample_count(inst.n, inst.m, eps, delta)?;
            println!("dkw sample count N = {n_samples}");
            let eps_rat = mechkit::num::rat_from_f64(eps);
            let mut exceed = 0usize;
            let mut csv = String::from("trial,bidder,item,draw,value\n");
            for t in 0..trials {
                let trial_seed = seed.wrapping_add(t as u64);
                if log.is_some() {
                    let draws = mechkit::sampling::sample_draws(&scaled, n_samples, trial_seed);
                    for i in 0..scaled.n {
                        for j in 0..scaled.m {
                            for (k, &d) in draws[i][j].iter().enumerate() {
                                csv.push_str(&format!(
                                    "{t},{i},{j},{k},{}\n",
                                    rat_str(scaled.support_value(i, j, d))
                                ));
                            }
                        }
                    }
                }
                let emp =
                    mechkit::sampling::empirical_instance(&scaled, n_samples, trial_seed)?;
                let mut max_d = rat_i(0);
                for i in 0..scaled.n {
                    for j in 0..scaled.m {
                        let d = mechkit::sampling::kolmogorov_distance(
                            &scaled.marginals[i][j],
                            &emp.marginals[i][j],
                        );
                        if d > max_d {
                            max_d = d;
                        }
                    }
                }
                if max_d > eps_rat {
                    exceed += 1;
                }
            }
            println!("{exceed}/{trials} trials exceeded eps = {eps}");
            if let Some(path) = &log {
                std::fs::write(path, csv)
                    .map_err(|e| Error::Internal(format!("cannot write log: {e}")))?;
            }
            // End-to-end: mechanisms from the first empirical instance,
            // evaluated on the true (scaled) instance.
            let emp = mechkit::sampling::empirical_instance(&scaled, n_samples, seed)?;
            let (emp_rpp, _) = optimize_rpp(&emp)?;
            let emp_pipe = run_pipeline(&emp, PolyFlag::ExactPoly, 0, seed, ArithMode::Float)?;
            let rev_rpp_true = expected_revenue(
                &scaled,
                &MechanismSpec::Rpp(emp_rpp),
                RevMethod::Exact {
                    cap: PROFILE_ENUM_CAP,
                },
            )?
            .value;
            let rev_tpt_true = expected_revenue(
                &scaled,
                &MechanismSpec::Tpt(emp_pipe.tpt.clone()),
                RevMethod::Exact {
                    cap: PROFILE_ENUM_CAP,
                },
            )?
            .value;
            let (opt_true, _) =
                optimal_bic_revenue(&scaled, PROFILE_ENUM_CAP, ArithMode::Float)?;
            let best = if rev_rpp_true >= rev_tpt_true {
                rev_rpp_true.clone()
            } else {
                rev_tpt_true.clone()
            };
            let gap = rat_f64(&(&opt_true - &best));
            println!(
                "empirical mechanisms on the true instance: opt = {:.6}, best simple = {:.6}, gap = {:.6}",
                rat_f64(&opt_true),
                rat_f64(&best),
                gap
            );
            let report = SampleReport {
                version: env!("CARGO_PKG_VERSION").to_string(),
                instance_sha256: hash,
                seed,
                eps,
                delta,
                sample_count: n_samples,
                trials,
                exceedances: exceed,
                rescaled,
                scale_divisor: ser(&divisor),
                opt_true: ser(&opt_true),
                rev_rpp_true: ser(&rev_rpp_true),
                rev_tpt_true: ser(&rev_tpt_true),
                revenue_gap_float: gap,
            };
            write_report(&out, &report)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Diagnose { solution, out } => {
            let text = std::fs::read_to_string(&solution)
                .map_err(|e| Error::Parse(format!("cannot read {}: {e}", solution.display())))?;
            let saved: SolveReport = serde_json::from_str(&text)
                .map_err(|e| Error::Parse(format!("bad solution report: {e}")))?;
            let inst = saved.instance.clone();
            let check = validate_instance(&inst);
            if !check.is_valid() {
                return Err(Error::Invalid(check.problems));
            }
            let prev = de(&saved.prev).map_err(Error::Parse)?;
            let grid = build_dual_grid(&inst, &prev)?;
            let sol = rebuild_solution(&inst, &grid, &saved)?;
            let q: Vec<Rat> = saved
                .q
                .iter()
                .map(|s| de(s).map_err(Error::Parse))
                .collect::<Result<_, _>>()?;
            let dual = DualDistribution::from_solution(&inst, &grid, &sol);
            let tau = compute_tau(&inst, &grid, &dual, &q);
            let q_hat = compute_shifted_prices(&inst, &grid, &sol, &q, &tau);
            let ok = q_hat.iter().zip(&q).all(|(h, qq)| h <= qq);
            let gap: Rat = q.iter().zip(&q_hat).map(|(a, b)| a - b).sum();
            let bound = rat(4730, 20) * &prev;
            let mu_rep = mu_suite(&inst, &q, &tau);
            let eta_rep = eta_suite(&inst, &grid, &dual, &sol.d, PROFILE_ENUM_CAP);
            for (i, t) in tau.iter().enumerate() {
                println!(
                    "tau[{i}] = {} ({:.6}){}",
                    rat_str(&t.value),
                    rat_f64(&t.value),
                    if t.discrete_jump { "  [discrete jump]" } else { "" }
                );
            }
            for j in 0..inst.m {
                println!(
                    "Q[{j}] = {:.6}  hatQ[{j}] = {:.6}  (hatQ <= Q: {})",
                    rat_f64(&q[j]),
                    rat_f64(&q_hat[j]),
                    q_hat[j] <= q[j]
                );
            }
            println!(
                "sum(Q - hatQ) = {:.6}, reported bound 236.5 * prev = {:.6}",
                rat_f64(&gap),
                rat_f64(&bound)
            );
            println!(
                "mu suite: {} checks, {} violations; eta suite: {} checks, {} violations",
                mu_rep.checks,
                mu_rep.violations.len(),
                eta_rep.checks,
                eta_rep.violations.len()
            );
            let report = DiagnoseReport {
                version: env!("CARGO_PKG_VERSION").to_string(),
                tau: tau.iter().map(|t| ser(&t.value)).collect(),
                tau_float: tau.iter().map(|t| float(&t.value)).collect(),
                tau_discrete_jump: tau.iter().map(|t| t.discrete_jump).collect(),
                q: q.iter().map(ser).collect(),
                q_hat: q_hat.iter().map(ser).collect(),
                q_hat_leq_q: ok,
                shifted_gap_float: rat_f64(&gap),
                shifted_gap_bound_float: rat_f64(&bound),
                mu_checks: mu_rep.checks,
                mu_violations: mu_rep.violations.clone(),
                eta_checks: eta_rep.checks,
                eta_violations: eta_rep.violations.clone(),
            };
            write_report(&out, &report)?;
            if !ok || !mu_rep.ok() || !eta_rep.ok() {
                return Err(Error::Internal("diagnostics found violations".into()));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Selftest => {
            let mut all_pass = true;
            for r in mechkit::battery::all_criteria() {
                println!("{}", r.line());
                all_pass &= r.pass;
            }
            if all_pass {
                Ok(ExitCode::SUCCESS)
            } else {
                Err(Error::Internal("selftest criteria failed".into()))
            }
        }
    }
}

fn scale_instance(inst: &Instance, divisor: &Rat) -> Instance {
    let mut out = inst.clone();
    for row in &mut out.marginals {
        for mg in row {
            for v in &mut mg.support {
                *v /= divisor;
            }
        }
    }
    for val in &mut out.valuations {
        if let mechkit::model::Valuation::Xos { xos } = val {
            for per_item in &mut xos.alpha {
                for per_value in per_item {
                    for a in per_value {
                        *a /= divisor;
                    }
                }
            }
        }
    }
    out
}

/// Rebuilds the solver-side solution tables from a saved report.
fn rebuild_solution(
    inst: &Instance,
    grid: &DualGrid,
    saved: &SolveReport,
) -> Result<RelaxationSolution, Error> {
    let mut w = Vec::with_capacity(inst.n);
    let mut lambda = Vec::with_capacity(inst.n);
    let mut lambda_hat = Vec::with_capacity(inst.n);
    for i in 0..inst.n {
        let mut w_i = Vec::new();
        let mut l_i = Vec::new();
        let mut lh_i = Vec::new();
        for j in 0..inst.m {
            let t_len = inst.support_len(i, j);
            let b_len = grid.beta_count(i, j);
            let d_len = grid.delta.len();
            w_i.push(vec![rat_i(0); t_len]);
            l_i.push(vec![vec![vec![rat_i(0); d_len]; b_len]; t_len]);
            lh_i.push(vec![vec![rat_i(0); d_len]; b_len]);
        }
        w.push(w_i);
        lambda.push(l_i);
        lambda_hat.push(lh_i);
    }
    let parse = |s: &str| de(s).map_err(Error::Parse);
    for e in &saved.w {
        w[e.bidder][e.item][e.value_index] = parse(&e.value)?;
    }
    for e in &saved.lambda {
        lambda[e.bidder][e.item][e.value_index][e.beta_index][e.delta_index] = parse(&e.value)?;
    }
    for e in &saved.lambda_hat {
        lambda_hat[e.bidder][e.item][e.beta_index][e.delta_index] = parse(&e.value)?;
    }
    let d: Vec<Rat> = saved
        .d
        .iter()
        .map(|s| parse(s))
        .collect::<Result<_, _>>()?;
    let objective = parse(&saved.objective)?;
    Ok(RelaxationSolution {
        objective,
        w,
        pi: None,
        proxy_hat: None,
        lambda,
        lambda_hat,
        d,
        piece_weights: Vec::new(),
        used_rational_fallback: false,
    })
}
