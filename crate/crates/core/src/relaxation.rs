//! The lifted LP relaxation over marginal reduced forms: dual-parameter grid,
//! LP assembly (constrained-additive and XOS variants, direct or proxy
//! allocation constraint), solving, and item-price extraction.
//!
//! Strict grid points never become numbers: each beta carries a flag and all
//! indicator and tail evaluations use open comparisons for flagged entries,
//! which is exact because the underlying offset is below every grid gap.

use num_traits::{One, Signed, Zero};

use crate::lp::{solve_lp, ArithMode, LinearProgram, LpResult, LpStatus, Rel};
use crate::model::Instance;
use crate::num::{rat, rat_i, Rat};
use crate::polytopes::ApproxPolytope;
use crate::Error;

/// One dual threshold: a singleton value, optionally in its strict ("plus")
/// variant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridBeta {
    pub value: Rat,
    pub strict: bool,
}

/// Discretized dual-parameter sets: per (i, j) the singleton values with
/// their strict twins, and the shared geometric delta ladder scaled by the
/// posted-price revenue estimate.
#[derive(Debug, Clone)]
pub struct DualGrid {
    /// Distinct singleton values per (i, j), ascending.
    pub base_values: Vec<Vec<Vec<Rat>>>,
    pub delta: Vec<Rat>,
    pub prev_estimate: Rat,
}

impl DualGrid {
    pub fn beta_count(&self, i: usize, j: usize) -> usize {
        2 * self.base_values[i][j].len()
    }

    /// Even indices are closed thresholds, odd ones their strict twins.
    pub fn beta(&self, i: usize, j: usize, idx: usize) -> GridBeta {
        GridBeta {
            value: self.base_values[i][j][idx / 2].clone(),
            strict: idx % 2 == 1,
        }
    }

    /// Pr over t_ij of V_ij(t_ij) >= beta (open comparison for strict).
    pub fn tail(&self, inst: &Instance, i: usize, j: usize, beta: &GridBeta) -> Rat {
        inst.singleton_tail(i, j, &beta.value, beta.strict)
    }

    /// Indicator of V <= beta + delta; the strict offset vanishes against
    /// grid gaps, so both variants compare closed.
    pub fn indicator_le(v: &Rat, beta: &GridBeta, delta: &Rat) -> bool {
        *v <= &beta.value + delta
    }

    /// Smallest delta grid point >= x, if any.
    pub fn round_up_delta(&self, x: &Rat) -> Option<Rat> {
        self.delta.iter().find(|d| **d >= *x).cloned()
    }

    /// The grid is kept while the posted-price estimate stays within a
    /// factor two of the one it was built from; rebuild otherwise.
    pub fn needs_rebuild(&self, new_estimate: &Rat) -> bool {
        let lo = &self.prev_estimate / rat_i(2);
        let hi = &self.prev_estimate * rat_i(2);
        *new_estimate < lo || *new_estimate > hi
    }
}

/// Grid per the discretization rule: delta = 2^x / n * prev for
/// x = 0..ceil(log2(55 n)), beta thresholds at singleton values and their
/// strict twins.
pub fn build_dual_grid(inst: &Instance, prev_estimate: &Rat) -> Result<DualGrid, Error> {
    if !prev_estimate.is_positive() {
        return Err(Error::InvalidArgument(
            "posted-price revenue estimate must be positive".into(),
        ));
    }
    let mut base_values = Vec::with_capacity(inst.n);
    for i in 0..inst.n {
        let mut per_item = Vec::with_capacity(inst.m);
        for j in 0..inst.m {
            let mut vals: Vec<Rat> = (0..inst.support_len(i, j))
                .map(|v| inst.singleton_value(i, j, v))
                .collect();
            vals.sort();
            vals.dedup();
            per_item.push(vals);
        }
        base_values.push(per_item);
    }
    // smallest x_max with 2^x_max >= 55 n
    let target = 55u128 * inst.n as u128;
    let mut x_max = 0u32;
    while (1u128 << x_max) < target {
        x_max += 1;
    }
    let n_rat = rat_i(inst.n as i64);
    let delta: Vec<Rat> = (0..=x_max)
        .map(|x| rat_i(1i64 << x) / &n_rat * prev_estimate)
        .collect();
    Ok(DualGrid {
        base_values,
        delta,
        prev_estimate: prev_estimate.clone(),
    })
}

// ---------------------------------------------------------------------------
// LP assembly
// ---------------------------------------------------------------------------

/// How constraint (1) binds the allocation variables to a polytope.
pub enum AllocationRule<'a> {
    /// w_i (and pi_i for XOS) lies in the given per-bidder polytope.
    Direct(&'a [ApproxPolytope]),
    /// XOS proxy form: a hat point lies in the given (approximate) polytope,
    /// with pi >= 3/2 hat-pi and w <= 1/4 hat-w coordinatewise.
    Proxy(&'a [ApproxPolytope]),
}

/// Variable ids of the assembled LP.
#[derive(Debug, Clone)]
pub struct VarIndex {
    /// w[i][j][v_idx]
    pub w: Vec<Vec<Vec<usize>>>,
    /// pi[i][j][v_idx], XOS only
    pub pi: Option<Vec<Vec<Vec<usize>>>>,
    /// lambda[i][j][v_idx][beta_idx][delta_idx]
    pub lambda: Vec<Vec<Vec<Vec<Vec<usize>>>>>,
    /// lambda_hat[i][j][beta_idx][delta_idx]
    pub lambda_hat: Vec<Vec<Vec<Vec<usize>>>>,
    /// d[i]
    pub d: Vec<usize>,
    /// per bidder, per piece, per generator: the sub-convex weight variable
    pub piece_weights: Vec<Vec<Vec<usize>>>,
    /// hat-point variables under the proxy rule (pi-hat block then w-hat)
    pub proxy_hat: Option<Vec<Vec<usize>>>,
}

pub struct RelaxationLp {
    pub lp: LinearProgram,
    pub vars: VarIndex,
}

/// Assembles the master LP: the truncated-welfare objective over lambda with
/// allocation feasibility (1)-(2), natural feasibility (3)-(5), and the
/// problem-specific rows (6)-(9).
pub fn build_lp(
    inst: &Instance,
    grid: &DualGrid,
    alloc: AllocationRule<'_>,
) -> Result<RelaxationLp, Error> {
    let polys = match &alloc {
        AllocationRule::Direct(p) | AllocationRule::Proxy(p) => *p,
    };
    if polys.len() != inst.n {
        return Err(Error::InvalidArgument(
            "need one polytope per bidder".into(),
        ));
    }
    if grid.base_values.len() != inst.n
        || (0..inst.n).any(|i| grid.base_values[i].len() != inst.m)
    {
        return Err(Error::InvalidArgument(
            "dual grid does not match the instance".into(),
        ));
    }
    let xos_any = inst.valuations.iter().any(|v| v.is_xos());
    if matches!(alloc, AllocationRule::Proxy(_)) && !xos_any {
        return Err(Error::InvalidArgument(
            "the proxy allocation rule needs at least one XOS bidder".into(),
        ));
    }

    let mut lp = LinearProgram::default();

    let mut w = Vec::with_capacity(inst.n);
    let mut pi = Vec::with_capacity(inst.n);
    let mut lambda = Vec::with_capacity(inst.n);
    let mut lambda_hat = Vec::with_capacity(inst.n);
    for i in 0..inst.n {
        let xos = inst.valuations[i].is_xos();
        let mut w_i = Vec::with_capacity(inst.m);
        let mut pi_i = Vec::with_capacity(inst.m);
        let mut l_i = Vec::with_capacity(inst.m);
        let mut lh_i = Vec::with_capacity(inst.m);
        for j in 0..inst.m {
            let t_len = inst.support_len(i, j);
            let b_len = grid.beta_count(i, j);
            let d_len = grid.delta.len();
            w_i.push(
                (0..t_len)
                    .map(|t| lp.add_nonneg(format!("w_{i}_{j}_{t}")))
                    .collect::<Vec<_>>(),
            );
            if xos {
                pi_i.push(
                    (0..t_len)
                        .map(|t| lp.add_nonneg(format!("pi_{i}_{j}_{t}")))
                        .collect::<Vec<_>>(),
                );
            }
            l_i.push(
                (0..t_len)
                    .map(|t| {
                        (0..b_len)
                            .map(|b| {
                                (0..d_len)
                                    .map(|dd| {
                                        lp.add_nonneg(format!("l_{i}_{j}_{t}_{b}_{dd}"))
                                    })
                                    .collect::<Vec<_>>()
                            })
                            .collect::<Vec<_>>()
                    })
                    .collect::<Vec<_>>(),
            );
            lh_i.push(
                (0..b_len)
                    .map(|b| {
                        (0..d_len)
                            .map(|dd| lp.add_nonneg(format!("lh_{i}_{j}_{b}_{dd}")))
                            .collect::<Vec<_>>()
                    })
                    .collect::<Vec<_>>(),
            );
        }
        w.push(w_i);
        // one entry per bidder; empty for constrained-additive bidders
        pi.push(pi_i);
        lambda.push(l_i);
        lambda_hat.push(lh_i);
    }
    let d: Vec<usize> = (0..inst.n)
        .map(|i| lp.add_nonneg(format!("d_{i}")))
        .collect();

    // Objective: sum f * V * lambda * [V <= beta + delta]
    let mut objective = Vec::new();
    for i in 0..inst.n {
        for j in 0..inst.m {
            for t in 0..inst.support_len(i, j) {
                let f = inst.prob(i, j, t).clone();
                let v = inst.singleton_value(i, j, t);
                if v.is_zero() {
                    continue;
                }
                let coeff = &f * &v;
                for b in 0..grid.beta_count(i, j) {
                    let beta = grid.beta(i, j, b);
                    for (dd, delta) in grid.delta.iter().enumerate() {
                        if DualGrid::indicator_le(&v, &beta, delta) {
                            objective.push((lambda[i][j][t][b][dd], coeff.clone()));
                        }
                    }
                }
            }
        }
    }
    lp.objective = objective;

    // (1): allocation feasibility through the extended formulation.
    let mut piece_weights = Vec::with_capacity(inst.n);
    let mut proxy_hat: Option<Vec<Vec<usize>>> = match alloc {
        AllocationRule::Proxy(_) => Some(Vec::with_capacity(inst.n)),
        AllocationRule::Direct(_) => None,
    };
    for i in 0..inst.n {
        let poly = &polys[i];
        let xos = inst.valuations[i].is_xos();
        let mut target = Vec::with_capacity(poly.dim);
        if xos {
            for j in 0..inst.m {
                for t in 0..inst.support_len(i, j) {
                    target.push(pi[i][j][t]);
                }
            }
        }
        for j in 0..inst.m {
            for t in 0..inst.support_len(i, j) {
                target.push(w[i][j][t]);
            }
        }
        match &alloc {
            // Constrained-additive bidders always bind directly; the proxy
            // ratio form only exists for XOS value blocks.
            AllocationRule::Direct(_) | AllocationRule::Proxy(_) if !xos => {
                let mv = crate::polytopes::add_membership_rows(
                    &mut lp,
                    poly,
                    &target,
                    &format!("c1_{i}"),
                );
                piece_weights.push(mv.piece_weights);
                if let Some(hat) = proxy_hat.as_mut() {
                    hat.push(Vec::new());
                }
            }
            AllocationRule::Direct(_) => {
                let mv = crate::polytopes::add_membership_rows(
                    &mut lp,
                    poly,
                    &target,
                    &format!("c1_{i}"),
                );
                piece_weights.push(mv.piece_weights);
            }
            AllocationRule::Proxy(_) => {
                let hat: Vec<usize> = (0..poly.dim)
                    .map(|c| lp.add_nonneg(format!("hat_{i}_{c}")))
                    .collect();
                let mv = crate::polytopes::add_membership_rows(
                    &mut lp,
                    poly,
                    &hat,
                    &format!("c1_{i}"),
                );
                piece_weights.push(mv.piece_weights);
                let slots = poly.slots;
                for c in 0..slots {
                    // pi >= 3/2 hat-pi
                    lp.add_row(
                        format!("c1p_pi_{i}_{c}"),
                        vec![(target[c], Rat::one()), (hat[c], -rat(3, 2))],
                        Rel::Ge,
                        Rat::zero(),
                    );
                    // w <= 1/4 hat-w
                    lp.add_row(
                        format!("c1p_w_{i}_{c}"),
                        vec![
                            (target[slots + c], Rat::one()),
                            (hat[slots + c], -rat(1, 4)),
                        ],
                        Rel::Le,
                        Rat::zero(),
                    );
                }
                proxy_hat.as_mut().unwrap().push(hat);
            }
        }
    }

    // (2): per item, total allocation mass at most one.
    for j in 0..inst.m {
        let mut terms = Vec::new();
        for i in 0..inst.n {
            let block = if inst.valuations[i].is_xos() {
                &pi[i]
            } else {
                &w[i]
            };
            for t in 0..inst.support_len(i, j) {
                terms.push((block[j][t], Rat::one()));
            }
        }
        lp.add_row(format!("c2_{j}"), terms, Rel::Le, Rat::one());
    }

    // (3): f * sum lambda = w
    for i in 0..inst.n {
        for j in 0..inst.m {
            for t in 0..inst.support_len(i, j) {
                let f = inst.prob(i, j, t).clone();
                let mut terms: Vec<(usize, Rat)> = Vec::new();
                for b in 0..grid.beta_count(i, j) {
                    for dd in 0..grid.delta.len() {
                        terms.push((lambda[i][j][t][b][dd], f.clone()));
                    }
                }
                terms.push((w[i][j][t], -Rat::one()));
                lp.add_row(format!("c3_{i}_{j}_{t}"), terms, Rel::Eq, Rat::zero());
            }
        }
    }

    // (4): lambda <= lambda_hat
    for i in 0..inst.n {
        for j in 0..inst.m {
            for t in 0..inst.support_len(i, j) {
                for b in 0..grid.beta_count(i, j) {
                    for dd in 0..grid.delta.len() {
                        lp.add_row(
                            format!("c4_{i}_{j}_{t}_{b}_{dd}"),
                            vec![
                                (lambda[i][j][t][b][dd], Rat::one()),
                                (lambda_hat[i][j][b][dd], -Rat::one()),
                            ],
                            Rel::Le,
                            Rat::zero(),
                        );
                    }
                }
            }
        }
    }

    // (5): sum lambda_hat = 1
    for i in 0..inst.n {
        for j in 0..inst.m {
            let mut terms = Vec::new();
            for b in 0..grid.beta_count(i, j) {
                for dd in 0..grid.delta.len() {
                    terms.push((lambda_hat[i][j][b][dd], Rat::one()));
                }
            }
            lp.add_row(format!("c5_{i}_{j}"), terms, Rel::Eq, Rat::one());
        }
    }

    // (6): per item, expected tail mass at most 1/2.
    for j in 0..inst.m {
        let mut terms = Vec::new();
        for i in 0..inst.n {
            for b in 0..grid.beta_count(i, j) {
                let tail = grid.tail(inst, i, j, &grid.beta(i, j, b));
                if tail.is_zero() {
                    continue;
                }
                for dd in 0..grid.delta.len() {
                    terms.push((lambda_hat[i][j][b][dd], tail.clone()));
                }
            }
        }
        lp.add_row(format!("c6_{j}"), terms, Rel::Le, rat(1, 2));
    }

    // (7): per (i, j, base beta, delta).
    for i in 0..inst.n {
        for j in 0..inst.m {
            for base in 0..grid.base_values[i][j].len() {
                let b_closed = 2 * base;
                let b_strict = 2 * base + 1;
                let tail_closed = grid.tail(inst, i, j, &grid.beta(i, j, b_closed));
                let tail_strict = grid.tail(inst, i, j, &grid.beta(i, j, b_strict));
                for dd in 0..grid.delta.len() {
                    let mut terms: Vec<(usize, Rat)> = Vec::new();
                    for t in 0..inst.support_len(i, j) {
                        let half_f = inst.prob(i, j, t) / rat_i(2);
                        terms.push((lambda[i][j][t][b_closed][dd], half_f.clone()));
                        terms.push((lambda[i][j][t][b_strict][dd], half_f));
                    }
                    terms.push((lambda_hat[i][j][b_closed][dd], -tail_closed.clone()));
                    terms.push((lambda_hat[i][j][b_strict][dd], -tail_strict.clone()));
                    lp.add_row(
                        format!("c7_{i}_{j}_{base}_{dd}"),
                        terms,
                        Rel::Le,
                        Rat::zero(),
                    );
                }
            }
        }
    }

    // (8): expected delta at most d_i, per (i, j).
    for i in 0..inst.n {
        for j in 0..inst.m {
            let mut terms: Vec<(usize, Rat)> = Vec::new();
            for b in 0..grid.beta_count(i, j) {
                for (dd, delta) in grid.delta.iter().enumerate() {
                    terms.push((lambda_hat[i][j][b][dd], delta.clone()));
                }
            }
            terms.push((d[i], -Rat::one()));
            lp.add_row(format!("c8_{i}_{j}"), terms, Rel::Le, Rat::zero());
        }
    }

    // (9): sum d_i <= 111 * prev estimate.
    lp.add_row(
        "c9".to_string(),
        d.iter().map(|&v| (v, Rat::one())).collect(),
        Rel::Le,
        rat_i(111) * &grid.prev_estimate,
    );

    Ok(RelaxationLp {
        lp,
        vars: VarIndex {
            w,
            pi: if xos_any { Some(pi) } else { None },
            lambda,
            lambda_hat,
            d,
            piece_weights,
            proxy_hat,
        },
    })
}

// ---------------------------------------------------------------------------
// Solving and extraction
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct RelaxationSolution {
    pub objective: Rat,
    pub w: Vec<Vec<Vec<Rat>>>,
    pub pi: Option<Vec<Vec<Vec<Rat>>>>,
    /// Hat-point coordinates per bidder under the proxy rule (allocation
    /// block then value block).
    pub proxy_hat: Option<Vec<Vec<Rat>>>,
    pub lambda: Vec<Vec<Vec<Vec<Vec<Rat>>>>>,
    pub lambda_hat: Vec<Vec<Vec<Vec<Rat>>>>,
    pub d: Vec<Rat>,
    /// Sub-convex generator weights per bidder/piece, the extended-
    /// formulation internals behind constraint (1).
    pub piece_weights: Vec<Vec<Vec<Rat>>>,
    pub used_rational_fallback: bool,
}

pub struct SolvedRelaxation {
    pub built: RelaxationLp,
    pub raw: LpResult,
    pub solution: RelaxationSolution,
}

pub fn solve_relaxation(
    inst: &Instance,
    grid: &DualGrid,
    alloc: AllocationRule<'_>,
    mode: ArithMode,
) -> Result<SolvedRelaxation, Error> {
    let built = build_lp(inst, grid, alloc)?;
    let raw = solve_lp(&built.lp, mode)?;
    match raw.status {
        LpStatus::Optimal => {}
        LpStatus::Infeasible => {
            // The all-zero allocation with any point-mass lambda_hat is
            // always feasible, so this is an internal failure.
            return Err(Error::Internal(format!(
                "relaxation LP reported infeasible; dump:\n{}",
                built.lp.dump()
            )));
        }
        LpStatus::Unbounded => {
            return Err(Error::Internal(
                "relaxation LP reported unbounded".into(),
            ));
        }
    }
    let solution = extract_solution(inst, grid, &built, &raw);
    Ok(SolvedRelaxation {
        built,
        raw,
        solution,
    })
}

fn extract_solution(
    inst: &Instance,
    grid: &DualGrid,
    built: &RelaxationLp,
    raw: &LpResult,
) -> RelaxationSolution {
    let at = |v: usize| raw.point[v].clone();
    let vars = &built.vars;
    let w = vars
        .w
        .iter()
        .map(|wi| {
            wi.iter()
                .map(|wj| wj.iter().map(|&v| at(v)).collect())
                .collect()
        })
        .collect();
    let pi = vars.pi.as_ref().map(|p| {
        p.iter()
            .map(|pi_i| {
                pi_i.iter()
                    .map(|pj| pj.iter().map(|&v| at(v)).collect())
                    .collect()
            })
            .collect()
    });
    let lambda = (0..inst.n)
        .map(|i| {
            (0..inst.m)
                .map(|j| {
                    (0..inst.support_len(i, j))
                        .map(|t| {
                            (0..grid.beta_count(i, j))
                                .map(|b| {
                                    (0..grid.delta.len())
                                        .map(|dd| at(vars.lambda[i][j][t][b][dd]))
                                        .collect()
                                })
                                .collect()
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    let lambda_hat = (0..inst.n)
        .map(|i| {
            (0..inst.m)
                .map(|j| {
                    (0..grid.beta_count(i, j))
                        .map(|b| {
                            (0..grid.delta.len())
                                .map(|dd| at(vars.lambda_hat[i][j][b][dd]))
                                .collect()
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    let piece_weights = vars
        .piece_weights
        .iter()
        .map(|per_piece| {
            per_piece
                .iter()
                .map(|gens| gens.iter().map(|&v| at(v)).collect())
                .collect()
        })
        .collect();
    let proxy_hat = vars.proxy_hat.as_ref().map(|per_bidder| {
        per_bidder
            .iter()
            .map(|hat| hat.iter().map(|&v| at(v)).collect())
            .collect()
    });
    RelaxationSolution {
        objective: raw.objective.clone(),
        w,
        pi,
        proxy_hat,
        lambda,
        lambda_hat,
        d: vars.d.iter().map(|&v| at(v)).collect(),
        piece_weights,
        used_rational_fallback: raw.used_rational_fallback,
    }
}

/// Item prices: half the expected truncated welfare routed through item j.
/// Twice their sum equals the LP objective of the source solution.
pub fn compute_item_prices(
    inst: &Instance,
    grid: &DualGrid,
    sol: &RelaxationSolution,
) -> Vec<Rat> {
    (0..inst.m)
        .map(|j| {
            let mut q = Rat::zero();
            for i in 0..inst.n {
                for t in 0..inst.support_len(i, j) {
                    let v = inst.singleton_value(i, j, t);
                    if v.is_zero() {
                        continue;
                    }
                    let coeff = inst.prob(i, j, t) * &v;
                    for b in 0..grid.beta_count(i, j) {
                        let beta = grid.beta(i, j, b);
                        for (dd, delta) in grid.delta.iter().enumerate() {
                            if DualGrid::indicator_le(&v, &beta, delta) {
                                q += &coeff * &sol.lambda[i][j][t][b][dd];
                            }
                        }
                    }
                }
            }
            q / rat_i(2)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DiscreteMarginal, Feasibility, Valuation};
    use crate::polytopes::{exact_polytope, GENERATOR_CAP};

    fn single_deterministic() -> Instance {
        Instance {
            n: 1,
            m: 1,
            marginals: vec![vec![DiscreteMarginal::point_mass(rat_i(1))]],
            valuations: vec![Valuation::ConstrainedAdditive {
                feasibility: Feasibility::Additive,
            }],
        }
    }

    #[test]
    fn delta_grid_examples() {
        let inst2 = Instance {
            n: 2,
            m: 1,
            marginals: vec![vec![DiscreteMarginal::point_mass(rat_i(1))]; 2],
            valuations: vec![
                Valuation::ConstrainedAdditive {
                    feasibility: Feasibility::Additive,
                };
                2
            ],
        };
        let grid = build_dual_grid(&inst2, &Rat::one()).unwrap();
        let expect: Vec<Rat> = [1i64, 2, 4, 8, 16, 32, 64, 128]
            .iter()
            .map(|&x| rat(x, 2))
            .collect();
        assert_eq!(grid.delta, expect);

        let grid1 = build_dual_grid(&single_deterministic(), &Rat::one()).unwrap();
        let expect: Vec<Rat> = [1i64, 2, 4, 8, 16, 32, 64].iter().map(|&x| rat_i(x)).collect();
        assert_eq!(grid1.delta, expect);

        assert!(build_dual_grid(&single_deterministic(), &Rat::zero()).is_err());
    }

    #[test]
    fn beta_grid_holds_values_and_strict_twins() {
        let inst = Instance {
            n: 1,
            m: 1,
            marginals: vec![vec![DiscreteMarginal::uniform(vec![rat_i(1), rat_i(3)])]],
            valuations: vec![Valuation::ConstrainedAdditive {
                feasibility: Feasibility::Additive,
            }],
        };
        let grid = build_dual_grid(&inst, &Rat::one()).unwrap();
        assert_eq!(grid.base_values[0][0], vec![rat_i(1), rat_i(3)]);
        assert_eq!(grid.beta_count(0, 0), 4);
        let b1p = grid.beta(0, 0, 1);
        assert!(b1p.strict);
        assert_eq!(b1p.value, rat_i(1));
        // tails: Pr[V >= 1] = 1, Pr[V > 1] = 1/2, Pr[V >= 3] = 1/2, Pr[V > 3] = 0
        assert_eq!(grid.tail(&inst, 0, 0, &grid.beta(0, 0, 0)), rat_i(1));
        assert_eq!(grid.tail(&inst, 0, 0, &grid.beta(0, 0, 1)), rat(1, 2));
        assert_eq!(grid.tail(&inst, 0, 0, &grid.beta(0, 0, 2)), rat(1, 2));
        assert!(grid.tail(&inst, 0, 0, &grid.beta(0, 0, 3)).is_zero());
    }

    #[test]
    fn tiny_lp_rows_match_hand_expansion() {
        let inst = single_deterministic();
        let grid = build_dual_grid(&inst, &Rat::one()).unwrap();
        let poly = exact_polytope(&inst, 0, GENERATOR_CAP).unwrap();
        let built = build_lp(&inst, &grid, AllocationRule::Direct(std::slice::from_ref(&poly)))
            .unwrap();
        // Constraint 6 row: lambda_hat mass at closed beta=1 weighted by
        // Pr[V >= 1] = 1; the strict twin has zero tail and is dropped.
        let c6 = built
            .lp
            .rows
            .iter()
            .find(|r| r.name == "c6_0")
            .expect("constraint 6 present");
        assert_eq!(c6.rel, Rel::Le);
        assert_eq!(c6.rhs, rat(1, 2));
        let d_len = grid.delta.len();
        assert_eq!(c6.terms.len(), d_len); // only the closed beta contributes
        assert!(c6.terms.iter().all(|(_, c)| c.is_one()));
        // Constraint 9 carries the 111 * prev constant.
        let c9 = built.lp.rows.iter().find(|r| r.name == "c9").unwrap();
        assert_eq!(c9.rhs, rat_i(111));
        // Constraint 5 sums every lambda_hat to one.
        let c5 = built.lp.rows.iter().find(|r| r.name == "c5_0_0").unwrap();
        assert_eq!(c5.terms.len(), 2 * d_len);
        assert_eq!(c5.rel, Rel::Eq);
    }

    #[test]
    fn deterministic_single_item_solves_to_full_welfare() {
        let inst = single_deterministic();
        let grid = build_dual_grid(&inst, &Rat::one()).unwrap();
        let poly = exact_polytope(&inst, 0, GENERATOR_CAP).unwrap();
        let solved = solve_relaxation(
            &inst,
            &grid,
            AllocationRule::Direct(std::slice::from_ref(&poly)),
            ArithMode::Rational,
        )
        .unwrap();
        assert_eq!(solved.solution.objective, rat_i(1));
        let q = compute_item_prices(&inst, &grid, &solved.solution);
        assert_eq!(q, vec![rat(1, 2)]);
    }

    #[test]
    fn empty_allocation_polytope_forces_zero_objective() {
        let inst = single_deterministic();
        let grid = build_dual_grid(&inst, &Rat::one()).unwrap();
        let mut poly = exact_polytope(&inst, 0, GENERATOR_CAP).unwrap();
        // strip every generator coordinate: the polytope collapses to {0}
        for (_, tp) in &mut poly.pieces {
            for g in &mut tp.generators {
                g.coords.clear();
            }
        }
        let solved = solve_relaxation(
            &inst,
            &grid,
            AllocationRule::Direct(std::slice::from_ref(&poly)),
            ArithMode::Rational,
        )
        .unwrap();
        assert!(solved.solution.objective.is_zero());
    }

    #[test]
    fn price_identity_and_symmetry() {
        // two symmetric items
        let inst = Instance {
            n: 1,
            m: 2,
            marginals: vec![vec![
                DiscreteMarginal::uniform(vec![rat_i(1), rat_i(2)]),
                DiscreteMarginal::uniform(vec![rat_i(1), rat_i(2)]),
            ]],
            valuations: vec![Valuation::ConstrainedAdditive {
                feasibility: Feasibility::Additive,
            }],
        };
        let grid = build_dual_grid(&inst, &Rat::one()).unwrap();
        let poly = exact_polytope(&inst, 0, GENERATOR_CAP).unwrap();
        let solved = solve_relaxation(
            &inst,
            &grid,
            AllocationRule::Direct(std::slice::from_ref(&poly)),
            ArithMode::Float,
        )
        .unwrap();
        let q = compute_item_prices(&inst, &grid, &solved.solution);
        let two_sum = rat_i(2) * (&q[0] + &q[1]);
        assert_eq!(two_sum, solved.solution.objective);
    }
}
