//! The shipped verification battery: deterministic pseudo-random desk-scale
//! instances, independent brute-force reference oracles, and the ten
//! acceptance checks run by both the test suite and the `selftest` command.

use std::sync::OnceLock;

use num_traits::{One, Signed, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::diagnostics::{
    compute_shifted_prices, compute_tau, eta_suite, mu_suite, DualDistribution, TauResult,
};
use crate::exact::{
    construct_duals, interim_allocation, lp_solution_from_mechanism, optimal_bic_revenue,
    BicWitness, DualParameters, InterimAllocation,
};
use crate::lp::ArithMode;
use crate::mechanisms::{
    audit_rpp_rationality, audit_tpt_rationality, expected_revenue, optimize_rpp, MechanismSpec,
    RevMethod, RppSpec, TptSpec,
};
use crate::model::{
    enumerate_type_profiles, DiscreteMarginal, Feasibility, Instance, Valuation, XosTable,
    PROFILE_ENUM_CAP,
};
use crate::num::{rat, rat_f64, rat_i, Rat};
use crate::polytopes::{
    build_approx_polytope, exact_polytope, membership, ApproxPolytope,
    Membership, PolyMode, GENERATOR_CAP,
};
use crate::relaxation::{
    build_dual_grid, compute_item_prices, solve_relaxation, AllocationRule, DualGrid,
    RelaxationLp, RelaxationSolution,
};
use crate::Error;

pub const BATTERY_SEED: u64 = 0x5eed_2024;

// ---------------------------------------------------------------------------
// Instance generation
// ---------------------------------------------------------------------------

fn random_marginal(rng: &mut ChaCha8Rng, max_support: usize) -> DiscreteMarginal {
    let size = rng.gen_range(1..=max_support);
    let mut numerators: Vec<i64> = Vec::new();
    while numerators.len() < size {
        let cand = rng.gen_range(1..=12i64);
        if !numerators.contains(&cand) {
            numerators.push(cand);
        }
    }
    numerators.sort_unstable();
    let support: Vec<Rat> = numerators.into_iter().map(|v| rat(v, 2)).collect();
    let weights: Vec<i64> = (0..size).map(|_| rng.gen_range(1..=5i64)).collect();
    let total: i64 = weights.iter().sum();
    let probs = weights.into_iter().map(|w| rat(w, total)).collect();
    DiscreteMarginal { support, probs }
}

fn random_feasibility(rng: &mut ChaCha8Rng, m: usize) -> Feasibility {
    match rng.gen_range(0..4u8) {
        0 => Feasibility::Additive,
        1 => Feasibility::UnitDemand,
        2 => Feasibility::CardinalityCap {
            k: rng.gen_range(1..=m),
        },
        _ => {
            // Downward closure of one random basis set.
            let full = (1u32 << m) - 1;
            let basis = rng.gen_range(0..=full);
            let mut sets: Vec<Vec<usize>> = Vec::new();
            let mut sub = basis;
            loop {
                sets.push(crate::model::mask_to_set(sub));
                if sub == 0 {
                    break;
                }
                sub = (sub - 1) & basis;
            }
            sets.sort();
            Feasibility::ExplicitFamily { sets }
        }
    }
}

/// The constrained-additive battery: 32 seeded random instances with
/// n <= 2, m <= 2, |T_ij| <= 3.
pub fn battery_instances() -> Vec<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(BATTERY_SEED);
    let mut out = Vec::new();
    while out.len() < 32 {
        let n = rng.gen_range(1..=2usize);
        let m = rng.gen_range(1..=2usize);
        let marginals: Vec<Vec<DiscreteMarginal>> = (0..n)
            .map(|_| (0..m).map(|_| random_marginal(&mut rng, 3)).collect())
            .collect();
        let valuations: Vec<Valuation> = (0..n)
            .map(|_| Valuation::ConstrainedAdditive {
                feasibility: random_feasibility(&mut rng, m),
            })
            .collect();
        let inst = Instance {
            n,
            m,
            marginals,
            valuations,
        };
        debug_assert!(crate::model::validate_instance(&inst).is_valid());
        out.push(inst);
    }
    out
}

fn random_xos_instance(rng: &mut ChaCha8Rng) -> Instance {
    let n = rng.gen_range(1..=2usize);
    let m = rng.gen_range(1..=3usize);
    let k = rng.gen_range(1..=3usize);
    let marginals: Vec<Vec<DiscreteMarginal>> = (0..n)
        .map(|_| (0..m).map(|_| random_marginal(rng, 2)).collect())
        .collect();
    let valuations: Vec<Valuation> = (0..n)
        .map(|i| {
            let alpha: Vec<Vec<Vec<Rat>>> = (0..m)
                .map(|j| {
                    (0..marginals[i][j].len())
                        .map(|_| (0..k).map(|_| rat(rng.gen_range(0..=8i64), 2)).collect())
                        .collect()
                })
                .collect();
            Valuation::Xos {
                xos: XosTable {
                    function_count: k,
                    alpha,
                },
            }
        })
        .collect();
    Instance {
        n,
        m,
        marginals,
        valuations,
    }
}

/// Tiny XOS instances (m <= 3, K <= 3) for the ratio and LP-chain checks;
/// every bidder keeps at least one positive coefficient.
pub fn xos_battery_instances() -> Vec<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(BATTERY_SEED ^ 0xA5A5);
    let mut out = Vec::new();
    while out.len() < 12 {
        let inst = random_xos_instance(&mut rng);
        let has_value = inst.max_singleton_value().is_positive();
        if has_value {
            out.push(inst);
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Reference (brute-force) oracles, independent of the production paths
// ---------------------------------------------------------------------------

pub mod reference {
    //! Exhaustive-enumeration oracles used as ground truth by the battery.
    //! These deliberately avoid the closed forms in the production code.

    use super::*;
    use crate::oracles::bundle_precedes;

    /// Demand by scanning every bundle; same deterministic tie order as the
    /// production oracle (cardinality, then lexicographic).
    pub fn demand_brute(
        inst: &Instance,
        i: usize,
        t_i: &[usize],
        prices: &[Rat],
    ) -> (Vec<usize>, Rat) {
        let full = (1u32 << inst.m) - 1;
        let mut best_mask = 0u32;
        let mut best = Rat::zero();
        for s in 0..=full {
            let mut u = crate::oracles::value_oracle(inst, i, t_i, s);
            for j in 0..inst.m {
                if s & (1 << j) != 0 {
                    u -= &prices[j];
                }
            }
            if u > best || (u == best && bundle_precedes(s, best_mask)) {
                best = u;
                best_mask = s;
            }
        }
        (crate::model::mask_to_set(best_mask), best)
    }

    /// Adjustable demand by scanning every (bundle, function) pair; smallest
    /// function index, then smallest bundle, on ties.
    pub fn adjustable_demand_brute(
        inst: &Instance,
        i: usize,
        t_i: &[usize],
        coeffs: &[Rat],
        prices: &[Rat],
    ) -> (Vec<usize>, usize, Rat) {
        let Valuation::Xos { xos } = &inst.valuations[i] else {
            panic!("reference adjustable demand needs XOS");
        };
        let full = (1u32 << inst.m) - 1;
        let mut best: Option<(Rat, usize, u32)> = None;
        for k in 0..xos.function_count {
            for s in 0..=full {
                let mut obj = Rat::zero();
                for j in 0..inst.m {
                    if s & (1 << j) != 0 {
                        obj += &coeffs[j] * &xos.alpha[j][t_i[j]][k] - &prices[j];
                    }
                }
                let replace = match &best {
                    None => true,
                    Some((bo, bk, bs)) => {
                        obj > *bo
                            || (obj == *bo
                                && (k < *bk || (k == *bk && bundle_precedes(s, *bs))))
                    }
                };
                if replace {
                    best = Some((obj, k, s));
                }
            }
        }
        let (obj, k, s) = best.unwrap();
        (crate::model::mask_to_set(s), k, obj)
    }

    /// Linear optimum over a mixture polytope by enumerating generators per
    /// piece (plus the coordinatewise box), no oracle involved.
    pub fn optimize_linear_brute(poly: &ApproxPolytope, objective: &[Rat]) -> Rat {
        let mut total = Rat::zero();
        for (coeff, tp) in &poly.pieces {
            let mut best = Rat::zero();
            for g in &tp.generators {
                let mut v = Rat::zero();
                for (c, x) in &g.coords {
                    // XOS value-block coordinates can always be dropped, so
                    // count them only when they help.
                    if tp.xos && *c >= tp.slots && objective[*c].is_negative() {
                        continue;
                    }
                    v += &objective[*c] * x;
                }
                if v > best {
                    best = v;
                }
            }
            total += coeff * best;
        }
        if poly.box_coeff.is_positive() {
            for s in 0..poly.slots {
                let cap = &poly.box_caps[s];
                if poly.xos {
                    let x = &objective[s];
                    let y = &objective[poly.slots + s];
                    let wcap = poly.box_w_caps[s].clone().min(cap.clone());
                    let corners = [
                        (Rat::zero(), Rat::zero()),
                        (cap.clone(), Rat::zero()),
                        (cap.clone(), wcap.clone()),
                        (wcap.clone(), wcap),
                    ];
                    let best = corners
                        .into_iter()
                        .map(|(pc, wc)| x * pc + y * wc)
                        .max()
                        .unwrap();
                    if best.is_positive() {
                        total += &poly.box_coeff * best;
                    }
                } else if objective[s].is_positive() {
                    total += &poly.box_coeff * cap * &objective[s];
                }
            }
        }
        total
    }

    /// A seeded random point of the mixture polytope as an explicit
    /// sub-convex combination (small rational weights).
    pub fn random_point(poly: &ApproxPolytope, rng: &mut ChaCha8Rng) -> Vec<Rat> {
        let mut point = vec![Rat::zero(); poly.dim];
        for (coeff, tp) in &poly.pieces {
            let raw: Vec<i64> = tp.generators.iter().map(|_| rng.gen_range(0..=4)).collect();
            let total: i64 = raw.iter().sum();
            if total == 0 {
                continue;
            }
            let scale_num = rng.gen_range(0..=4i64);
            for (g, &a) in tp.generators.iter().zip(&raw) {
                if a == 0 {
                    continue;
                }
                let weight = rat(a * scale_num, total * 4);
                for (c, x) in &g.coords {
                    point[*c] += coeff * &weight * x;
                }
            }
        }
        if poly.box_coeff.is_positive() {
            for s in 0..poly.slots {
                let frac = rat(rng.gen_range(0..=4i64), 4);
                let v = &poly.box_coeff * &poly.box_caps[s] * &frac;
                point[s] += &v;
                if poly.xos {
                    let wfrac = rat(rng.gen_range(0..=4i64), 4);
                    let wcap = &poly.box_coeff * &poly.box_w_caps[s] * &frac;
                    point[poly.slots + s] += v.min(wcap) * wfrac;
                }
            }
        }
        point
    }
}

// ---------------------------------------------------------------------------
// Solved battery cache
// ---------------------------------------------------------------------------

pub struct SolvedEntry {
    pub inst: Instance,
    pub opt: Rat,
    pub witness: BicWitness,
    pub sigma: InterimAllocation,
    pub duals: DualParameters,
    pub prev: Rat,
    pub rpp: RppSpec,
    pub grid: DualGrid,
    pub polys: Vec<ApproxPolytope>,
    pub built: RelaxationLp,
    pub solution: RelaxationSolution,
    pub q: Vec<Rat>,
    pub tpt: TptSpec,
    pub tau: Vec<TauResult>,
    pub dual_dist: DualDistribution,
}

fn solve_entry(inst: Instance) -> Result<SolvedEntry, Error> {
    let (opt, witness) = optimal_bic_revenue(&inst, PROFILE_ENUM_CAP, ArithMode::Float)?;
    let sigma = interim_allocation(&inst, &witness);
    let duals = construct_duals(&inst, &sigma);
    let (rpp, prev) = optimize_rpp(&inst)?;
    let grid = build_dual_grid(&inst, &prev)?;
    let polys: Vec<ApproxPolytope> = (0..inst.n)
        .map(|i| exact_polytope(&inst, i, GENERATOR_CAP))
        .collect::<Result<_, _>>()?;
    let solved = solve_relaxation(&inst, &grid, AllocationRule::Direct(&polys), ArithMode::Float)?;
    let q = compute_item_prices(&inst, &grid, &solved.solution);
    let tpt = TptSpec::lexicographic(inst.n, q.clone());
    let dual_dist = DualDistribution::from_solution(&inst, &grid, &solved.solution);
    let tau = compute_tau(&inst, &grid, &dual_dist, &q);
    Ok(SolvedEntry {
        inst,
        opt,
        witness,
        sigma,
        duals,
        prev,
        rpp,
        grid,
        polys,
        built: solved.built,
        solution: solved.solution,
        q,
        tpt,
        tau,
        dual_dist,
    })
}

static SOLVED: OnceLock<Vec<SolvedEntry>> = OnceLock::new();

pub fn solved_battery() -> &'static [SolvedEntry] {
    SOLVED.get_or_init(|| {
        battery_instances()
            .into_par_iter()
            .map(|inst| solve_entry(inst).expect("battery instance solves"))
            .collect()
    })
}

// ---------------------------------------------------------------------------
// Criteria
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct CriterionResult {
    pub id: usize,
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

impl CriterionResult {
    pub fn line(&self) -> String {
        format!(
            "criterion {:2} {:28} {}  {}",
            self.id,
            self.name,
            if self.pass { "PASS" } else { "FAIL" },
            self.detail
        )
    }
}

fn result(id: usize, name: &'static str, pass: bool, detail: String) -> CriterionResult {
    CriterionResult {
        id,
        name,
        pass,
        detail,
    }
}

const SLACK_1E6: (i64, i64) = (1, 1_000_000);
const SLACK_1E9: (i64, i64) = (1, 1_000_000_000);

/// 1. On every battery instance, OPT <= 28 PRev + 4 OPT_LP (+1e-6).
pub fn criterion_chain_inequality() -> CriterionResult {
    let slack = rat(SLACK_1E6.0, SLACK_1E6.1);
    let mut min_margin = f64::INFINITY;
    let mut failures = 0usize;
    for e in solved_battery() {
        let bound = rat_i(28) * &e.prev + rat_i(4) * &e.solution.objective + &slack;
        let margin = rat_f64(&(&bound - &e.opt));
        if e.opt > bound {
            failures += 1;
        }
        if margin < min_margin {
            min_margin = margin;
        }
    }
    result(
        1,
        "chain inequality",
        failures == 0,
        format!(
            "{} instances, tightest margin {:.3}",
            solved_battery().len(),
            min_margin
        ),
    )
}

/// 2. 2 sum Q_j equals the LP objective (1e-9 float; exactly in a rational
/// re-solve of the first instances).
pub fn criterion_price_identity() -> CriterionResult {
    let slack = rat(SLACK_1E9.0, SLACK_1E9.1);
    let mut ok = true;
    let mut detail = String::new();
    for e in solved_battery() {
        let two_sum: Rat = rat_i(2) * e.q.iter().cloned().sum::<Rat>();
        if (&two_sum - &e.solution.objective).abs() > slack {
            ok = false;
            detail = "float identity broken".into();
        }
    }
    // Rational mode on a small prefix: identity must be exact.
    for e in solved_battery().iter().take(3) {
        let solved = solve_relaxation(
            &e.inst,
            &e.grid,
            AllocationRule::Direct(&e.polys),
            ArithMode::Rational,
        )
        .expect("rational resolve");
        let q = compute_item_prices(&e.inst, &e.grid, &solved.solution);
        let two_sum: Rat = rat_i(2) * q.iter().cloned().sum::<Rat>();
        if two_sum != solved.solution.objective {
            ok = false;
            detail = "rational identity broken".into();
        }
    }
    if detail.is_empty() {
        detail = format!("{} instances + 3 rational re-solves", solved_battery().len());
    }
    result(2, "price identity 2*sum(Q)", ok, detail)
}

/// 3. The feasible-solution construction from each OPT witness has zero
/// residual and objective at least the Core.
pub fn criterion_feasible_construction() -> CriterionResult {
    let slack = rat(SLACK_1E9.0, SLACK_1E9.1);
    let mut ok = true;
    let mut worst_residual = Rat::zero();
    for e in solved_battery() {
        let built = lp_solution_from_mechanism(
            &e.inst, &e.grid, &e.built, &e.polys, &e.sigma, &e.duals,
        )
        .expect("construction succeeds");
        if built.max_residual > worst_residual {
            worst_residual = built.max_residual.clone();
        }
        if !built.max_residual.is_zero() {
            ok = false;
        }
        if built.objective < &built.core - &slack {
            ok = false;
        }
    }
    result(
        3,
        "feasible construction",
        ok,
        format!(
            "{} witnesses, max residual {}",
            solved_battery().len(),
            crate::num::rat_str(&worst_residual)
        ),
    )
}

fn scale_point(point: &[Rat], factor: &Rat) -> Vec<Rat> {
    point.iter().map(|x| x * factor).collect()
}

/// 4. Sandwich tests: exact mode at 1/6, sampled mode (N = 500) at 1/12.
pub fn criterion_polytope_sandwich() -> CriterionResult {
    let mut checks = 0usize;
    let mut failures = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(BATTERY_SEED ^ 0x40);
    let entries = solved_battery();
    'outer: for round in 0..100 {
        let e = &entries[round % entries.len()];
        let t_total = e.inst.t_total() as i64;
        let eps = rat(1, 2 * t_total);
        for i in 0..e.inst.n {
            for (mode, factor, tag) in [
                (PolyMode::ExactDistribution, rat(1, 6), "exact"),
                (
                    PolyMode::Sampled {
                        n: 500,
                        seed: BATTERY_SEED ^ (round as u64),
                    },
                    rat(1, 12),
                    "sampled",
                ),
            ] {
                let approx = build_approx_polytope(
                    &e.inst,
                    i,
                    &eps,
                    &rat(1, 2),
                    mode,
                    GENERATOR_CAP,
                )
                .expect("approx polytope");
                let exact = &e.polys[i];
                // Point of factor * W_i must lie in the approximation.
                let p = reference::random_point(exact, &mut rng);
                let scaled = scale_point(&p, &factor);
                checks += 1;
                match membership(&e.inst, &approx, &scaled, 1e-8, ArithMode::Rational) {
                    Ok(Membership::Inside) => {}
                    _ => {
                        failures.push(format!("round {round} {tag}: shrunken point escaped"));
                        break 'outer;
                    }
                }
                // Point of the approximation must lie in W_i.
                let p_hat = reference::random_point(&approx, &mut rng);
                checks += 1;
                match membership(&e.inst, exact, &p_hat, 1e-8, ArithMode::Rational) {
                    Ok(Membership::Inside) => {}
                    _ => {
                        failures.push(format!("round {round} {tag}: approx point escaped"));
                        break 'outer;
                    }
                }
            }
        }
    }
    result(
        4,
        "polytope sandwich",
        failures.is_empty(),
        if failures.is_empty() {
            format!("{checks} membership checks")
        } else {
            failures.join("; ")
        },
    )
}

/// 5. On the XOS battery: the coordinatewise ratio witness exists for
/// sampled points of the approximation, and OPT_LP(P) <= 64 OPT_LP(P').
pub fn criterion_xos_ratio_and_chain() -> CriterionResult {
    let slack = rat(SLACK_1E6.0, SLACK_1E6.1);
    let mut ratio_checks = 0usize;
    let mut failures: Vec<String> = Vec::new();
    let instances = xos_battery_instances();
    let mut rng = ChaCha8Rng::seed_from_u64(BATTERY_SEED ^ 0x50);
    for (idx, inst) in instances.iter().enumerate() {
        let t_total = inst.t_total() as i64;
        let eps = rat(1, 2 * t_total);
        let polys_exact: Vec<ApproxPolytope> = (0..inst.n)
            .map(|i| exact_polytope(inst, i, GENERATOR_CAP).expect("exact"))
            .collect();
        let polys_hat: Vec<ApproxPolytope> = (0..inst.n)
            .map(|i| {
                build_approx_polytope(
                    inst,
                    i,
                    &eps,
                    &rat(1, 2),
                    PolyMode::ExactDistribution,
                    GENERATOR_CAP,
                )
                .expect("hat polytope")
            })
            .collect();
        // Ratio property on 50 sampled points per instance.
        for round in 0..50 {
            let i = round % inst.n;
            let p_hat = reference::random_point(&polys_hat[i], &mut rng);
            ratio_checks += 1;
            if !ratio_witness_exists(&polys_exact[i], &p_hat) {
                failures.push(format!("instance {idx}: no ratio witness"));
                break;
            }
        }
        // LP chain.
        let prev = match optimize_rpp(inst) {
            Ok((_, prev)) => prev,
            Err(e) => {
                failures.push(format!("instance {idx}: rpp failed: {e}"));
                continue;
            }
        };
        if !prev.is_positive() {
            continue;
        }
        let grid = build_dual_grid(inst, &prev).expect("grid");
        let p_direct = solve_relaxation(
            inst,
            &grid,
            AllocationRule::Direct(&polys_exact),
            ArithMode::Float,
        )
        .expect("P solve");
        let p_proxy = solve_relaxation(
            inst,
            &grid,
            AllocationRule::Proxy(&polys_hat),
            ArithMode::Float,
        )
        .expect("P' solve");
        let bound = rat_i(64) * &p_proxy.solution.objective + &slack;
        if p_direct.solution.objective > bound {
            failures.push(format!(
                "instance {idx}: OPT_LP {} > 64 OPT_LP' {}",
                rat_f64(&p_direct.solution.objective),
                rat_f64(&p_proxy.solution.objective)
            ));
        }
    }
    result(
        5,
        "xos ratio and 64x chain",
        failures.is_empty(),
        if failures.is_empty() {
            format!(
                "{} instances, {} ratio witnesses",
                instances.len(),
                ratio_checks
            )
        } else {
            failures.join("; ")
        },
    )
}

/// Witness-search LP: does some (pi, w) in W_i satisfy pi/pi~ in [1/4, 3/2]
/// and w/w~ in [1/4, 5/4] coordinatewise (zero coordinates must stay zero)?
fn ratio_witness_exists(exact: &ApproxPolytope, target: &[Rat]) -> bool {
    let mut lp = crate::lp::LinearProgram::default();
    let slots = exact.slots;
    let vars: Vec<usize> = (0..exact.dim)
        .map(|c| {
            let t = &target[c];
            if t.is_zero() {
                lp.add_var(format!("x{c}"), Some(Rat::zero()), Some(Rat::zero()))
            } else {
                let (lo_num, lo_den, hi_num, hi_den) = if c < slots {
                    (1, 4, 3, 2)
                } else {
                    (1, 4, 5, 4)
                };
                lp.add_var(
                    format!("x{c}"),
                    Some(rat(lo_num, lo_den) * t),
                    Some(rat(hi_num, hi_den) * t),
                )
            }
        })
        .collect();
    crate::polytopes::add_membership_rows(&mut lp, exact, &vars, "wit");
    matches!(
        crate::lp::solve_lp(&lp, ArithMode::Rational),
        Ok(res) if res.status == crate::lp::LpStatus::Optimal
    )
}

/// 6. Demand and adjustable-demand oracles match exhaustive enumeration on
/// 1000 random rational queries, m <= 8, K <= 8.
pub fn criterion_oracle_equivalence() -> CriterionResult {
    let mut rng = ChaCha8Rng::seed_from_u64(BATTERY_SEED ^ 0x60);
    let mut failures = 0usize;
    let queries = 1000usize;
    for _ in 0..queries {
        let m = rng.gen_range(1..=8usize);
        let xos = rng.gen_bool(0.5);
        let inst = if xos {
            let k = rng.gen_range(1..=8usize);
            let alpha: Vec<Vec<Vec<Rat>>> = (0..m)
                .map(|_| vec![(0..k).map(|_| rat(rng.gen_range(0..=12i64), 3)).collect()])
                .collect();
            Instance {
                n: 1,
                m,
                marginals: vec![vec![DiscreteMarginal::point_mass(rat_i(1)); m]],
                valuations: vec![Valuation::Xos {
                    xos: XosTable {
                        function_count: k,
                        alpha,
                    },
                }],
            }
        } else {
            let marginals: Vec<DiscreteMarginal> = (0..m)
                .map(|_| DiscreteMarginal::point_mass(rat(rng.gen_range(1..=12i64), 3)))
                .collect();
            Instance {
                n: 1,
                m,
                marginals: vec![marginals],
                valuations: vec![Valuation::ConstrainedAdditive {
                    feasibility: random_feasibility(&mut rng, m),
                }],
            }
        };
        let t_i = vec![0usize; m];
        let prices: Vec<Rat> = (0..m).map(|_| rat(rng.gen_range(0..=12i64), 3)).collect();
        let fast = crate::oracles::demand_oracle(&inst, 0, &t_i, &prices);
        let (slow_bundle, slow_utility) = reference::demand_brute(&inst, 0, &t_i, &prices);
        if fast.bundle != slow_bundle || fast.utility != slow_utility {
            failures += 1;
            continue;
        }
        if xos {
            let coeffs: Vec<Rat> = (0..m).map(|_| rat(rng.gen_range(0..=6i64), 3)).collect();
            let fast = crate::oracles::adjustable_demand_oracle(&inst, 0, &t_i, &coeffs, &prices)
                .expect("xos oracle");
            let (sb, sk, so) =
                reference::adjustable_demand_brute(&inst, 0, &t_i, &coeffs, &prices);
            if fast.bundle != sb || fast.winner_index != sk || fast.adjusted_objective != so {
                failures += 1;
            }
        }
    }
    result(
        6,
        "oracle equivalence",
        failures == 0,
        format!("{queries} queries, {failures} mismatches"),
    )
}

/// 7. Counterexample structure at l = 4: the last function wins exactly on
/// the target set, and on the exhaustive price grid the family member is
/// indistinguishable from the benchmark by demand queries.
pub fn criterion_counterexample_structure() -> CriterionResult {
    let eps = rat(1, 10);
    let epsp = rat(1, 100);
    let fam = crate::oracles::counterexample_family(4, eps.clone(), epsp.clone())
        .expect("family builds");
    let l = fam.l;
    let m = 2 * l;
    let block_one = crate::model::set_to_mask(&fam.block_one());

    // XOS-oracle structure over all nonempty sets.
    let mut xos_checks = 0usize;
    let mut xos_failures = 0usize;
    for (r, inst) in fam.family.iter().enumerate() {
        let target = block_one | crate::model::set_to_mask(&fam.c_sets[r]);
        for s in 1u32..(1 << m) {
            let k = crate::oracles::xos_oracle(inst, 0, &vec![0; m], s).expect("xos oracle");
            xos_checks += 1;
            if (k == 2 * l) != (s == target) {
                xos_failures += 1;
            }
        }
    }

    // Demand-equality on the exhaustive grid.
    let two_over_l = rat(2, l as i64);
    let levels: Vec<Rat> = vec![
        Rat::zero(),
        &two_over_l * &epsp,
        &two_over_l * &eps,
        Rat::one(),
        rat_i(100), // above every coefficient: the unaffordable sentinel
    ];
    let low_threshold = &two_over_l * &epsp;
    let grid_size = levels.len().pow(m as u32);
    let t_all: Vec<usize> = vec![0; m];
    let c_masks: Vec<u32> = fam
        .c_sets
        .iter()
        .map(|c| crate::model::set_to_mask(c))
        .collect();
    let violations: usize = (0..grid_size)
        .into_par_iter()
        .map(|mut code| {
            let mut prices = Vec::with_capacity(m);
            for _ in 0..m {
                prices.push(levels[code % levels.len()].clone());
                code /= levels.len();
            }
            let mut s0 = 0u32;
            for (j, p) in prices.iter().enumerate().skip(l) {
                if *p <= low_threshold {
                    s0 |= 1 << j;
                }
            }
            let base = crate::oracles::demand_oracle(&fam.benchmark, 0, &t_all, &prices);
            let mut bad = 0usize;
            for (r, inst) in fam.family.iter().enumerate() {
                if c_masks[r] == s0 {
                    continue;
                }
                let ans = crate::oracles::demand_oracle(inst, 0, &t_all, &prices);
                if ans != base {
                    bad += 1;
                }
            }
            bad
        })
        .sum();

    let pass = xos_failures == 0 && violations == 0;
    result(
        7,
        "counterexample structure",
        pass,
        format!(
            "{xos_checks} xos checks, {grid_size} grid prices, {violations} demand mismatches"
        ),
    )
}

/// 8. mu / eta suites exhaustively on the first ten solved instances, plus
/// hatQ <= Q everywhere.
pub fn criterion_lipschitz_suites() -> CriterionResult {
    let mut failures: Vec<String> = Vec::new();
    let mut checks = 0usize;
    for e in solved_battery() {
        let q_hat = compute_shifted_prices(&e.inst, &e.grid, &e.solution, &e.q, &e.tau);
        for j in 0..e.inst.m {
            checks += 1;
            if q_hat[j] > e.q[j] {
                failures.push(format!("hatQ > Q on item {j}"));
            }
        }
    }
    for e in solved_battery().iter().take(10) {
        let mu_rep = mu_suite(&e.inst, &e.q, &e.tau);
        checks += mu_rep.checks;
        failures.extend(mu_rep.violations);
        let eta_rep = eta_suite(
            &e.inst,
            &e.grid,
            &e.dual_dist,
            &e.solution.d,
            PROFILE_ENUM_CAP,
        );
        checks += eta_rep.checks;
        failures.extend(eta_rep.violations);
    }
    result(
        8,
        "lipschitz/subadditivity",
        failures.is_empty(),
        if failures.is_empty() {
            format!("{checks} checks")
        } else {
            failures[..failures.len().min(3)].join("; ")
        },
    )
}

/// 9. Every simulated step is utility-maximizing (exhaustive over profiles
/// and entry samples), and Monte Carlo at 1e5 matches exact within 3 sigma.
pub fn criterion_mechanism_rationality() -> CriterionResult {
    let mut failures: Vec<String> = Vec::new();
    let entries = solved_battery();
    let audits: usize = entries
        .par_iter()
        .enumerate()
        .map(|(idx, e)| {
            let mut local = 0usize;
            let profiles =
                enumerate_type_profiles(&e.inst, PROFILE_ENUM_CAP).expect("profiles");
            for (p, _) in &profiles {
                if let Err(msg) = audit_rpp_rationality(&e.inst, &e.rpp, p) {
                    panic!("instance {idx}: rpp audit: {msg}");
                }
                local += 1;
                for (s, _) in &profiles {
                    if let Err(msg) = audit_tpt_rationality(&e.inst, &e.tpt, p, &s.indices) {
                        panic!("instance {idx}: tpt audit: {msg}");
                    }
                    local += 1;
                }
            }
            local
        })
        .sum();
    for (idx, e) in entries.iter().enumerate() {
        for (tag, spec) in [
            ("rpp", MechanismSpec::Rpp(e.rpp.clone())),
            ("tpt", MechanismSpec::Tpt(e.tpt.clone())),
        ] {
            let exact = expected_revenue(&e.inst, &spec, RevMethod::Exact { cap: PROFILE_ENUM_CAP })
                .expect("exact revenue")
                .value;
            let mc = expected_revenue(
                &e.inst,
                &spec,
                RevMethod::MonteCarlo {
                    samples: 100_000,
                    seed: BATTERY_SEED ^ (idx as u64),
                },
            )
            .expect("mc revenue");
            let err = (rat_f64(&mc.value) - rat_f64(&exact)).abs();
            let stderr = mc.stderr.unwrap();
            if err > 3.0 * stderr + 1e-12 {
                failures.push(format!(
                    "instance {idx} {tag}: |mc - exact| = {err:.4e} > 3 sigma = {:.4e}",
                    3.0 * stderr
                ));
            }
        }
    }
    result(
        9,
        "mechanism rationality + mc",
        failures.is_empty(),
        if failures.is_empty() {
            format!("{audits} audited steps, {} mc comparisons", 2 * entries.len())
        } else {
            failures.join("; ")
        },
    )
}

/// 10. DKW concentration: over 200 seeded trials at eps = delta = 0.1, the
/// max Kolmogorov distance exceeds eps in at most delta*200 + 3 sigma trials.
pub fn criterion_sample_concentration() -> CriterionResult {
    let inst = &solved_battery()[0].inst;
    let eps = 0.1f64;
    let delta = 0.1f64;
    let n_samples = crate::sampling::dkw_sample_count(inst.n, inst.m, eps, delta)
        .expect("dkw size");
    let trials = 200usize;
    let eps_rat = rat(1, 10);
    let exceed: usize = (0..trials)
        .into_par_iter()
        .map(|t| {
            let emp = crate::sampling::empirical_instance(
                inst,
                n_samples,
                BATTERY_SEED ^ 0xD00 ^ (t as u64),
            )
            .expect("empirical");
            let mut max_d = Rat::zero();
            for i in 0..inst.n {
                for j in 0..inst.m {
                    let d = crate::sampling::kolmogorov_distance(
                        &inst.marginals[i][j],
                        &emp.marginals[i][j],
                    );
                    if d > max_d {
                        max_d = d;
                    }
                }
            }
            usize::from(max_d > eps_rat)
        })
        .sum();
    let bound = delta * trials as f64 + 3.0 * (delta * (1.0 - delta) * trials as f64).sqrt();
    result(
        10,
        "dkw concentration",
        (exceed as f64) <= bound,
        format!("N = {n_samples}, {exceed}/{trials} exceedances, bound {bound:.1}"),
    )
}

pub fn all_criteria() -> Vec<CriterionResult> {
    vec![
        criterion_chain_inequality(),
        criterion_price_identity(),
        criterion_feasible_construction(),
        criterion_polytope_sandwich(),
        criterion_xos_ratio_and_chain(),
        criterion_oracle_equivalence(),
        criterion_counterexample_structure(),
        criterion_lipschitz_suites(),
        criterion_mechanism_rationality(),
        criterion_sample_concentration(),
    ]
}
