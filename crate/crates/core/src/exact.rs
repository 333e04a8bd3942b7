//! Brute-force ground truth at desk scale: the optimal BIC and IR revenue as
//! an explicit LP over full item assignments, Core evaluation, quantile dual
//! parameters, and the conversion of a mechanism's interim allocation into a
//! feasible point of the master relaxation.

use num_traits::{One, Signed, Zero};

use crate::lp::{check_point, solve_lp, ArithMode, LinearProgram, LpStatus, Rel};
use crate::model::{Instance, TypeProfile};
use crate::num::{rat_i, Rat};
use crate::oracles::{bundle_precedes, value_oracle, xos_oracle};
use crate::relaxation::{DualGrid, RelaxationLp};
use crate::Error;

/// Interim bundle distribution: `sigma[i][t_flat][mask]` is the probability
/// that bidder `i` of (flat) type `t_flat` receives exactly `mask`.
#[derive(Debug, Clone)]
pub struct InterimAllocation {
    pub sigma: Vec<Vec<Vec<Rat>>>,
}

impl InterimAllocation {
    /// Interim probability that bidder i of flat type t receives item j.
    pub fn item_prob(&self, i: usize, t_flat: usize, j: usize) -> Rat {
        self.sigma[i][t_flat]
            .iter()
            .enumerate()
            .filter(|(mask, _)| mask & (1 << j) != 0)
            .map(|(_, p)| p.clone())
            .sum()
    }
}

/// Quantile dual parameters: a threshold inside each (i, j) singleton-value
/// support, a per-bidder shift, and tie weights.
#[derive(Debug, Clone)]
pub struct DualParameters {
    pub beta: Vec<Vec<Rat>>,
    pub c: Vec<Rat>,
    pub r: Vec<Vec<Rat>>,
}

/// The optimal-revenue witness: per-profile assignment distributions plus
/// interim payments (a BIC mechanism can always charge the interim payment
/// ex post).
#[derive(Debug, Clone)]
pub struct BicWitness {
    pub profiles: Vec<(TypeProfile, Rat)>,
    /// For each profile: (per-item receiver with n = unsold, probability).
    pub allocation: Vec<Vec<(Vec<usize>, Rat)>>,
    /// interim_payments[i][t_flat]
    pub interim_payments: Vec<Vec<Rat>>,
}

fn bidder_flat_index(inst: &Instance, i: usize, t_i: &[usize]) -> usize {
    let mut idx = 0usize;
    for j in 0..inst.m {
        idx = idx * inst.support_len(i, j) + t_i[j];
    }
    idx
}

fn assignments(n: usize, m: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = vec![vec![]];
    for _ in 0..m {
        let mut next = Vec::with_capacity(out.len() * (n + 1));
        for a in &out {
            for recv in 0..=n {
                let mut b = a.clone();
                b.push(recv);
                next.push(b);
            }
        }
        out = next;
    }
    out
}

fn bundle_of(assign: &[usize], i: usize) -> u32 {
    assign
        .iter()
        .enumerate()
        .filter(|(_, &r)| r == i)
        .fold(0u32, |acc, (j, _)| acc | (1 << j))
}

/// Optimal revenue over all BIC and IR mechanisms, by LP over per-profile
/// assignment distributions with interim payments and exact interim BIC/IR
/// rows. Returns the optimum and a witness mechanism.
pub fn optimal_bic_revenue(
    inst: &Instance,
    cap: u128,
    mode: ArithMode,
) -> Result<(Rat, BicWitness), Error> {
    let profiles = crate::model::enumerate_type_profiles(inst, cap)?;
    let assigns = assignments(inst.n, inst.m);
    let work = (profiles.len() as u128).saturating_mul(assigns.len() as u128);
    if work > cap {
        return Err(Error::CapExceeded {
            what: "assignment variables".into(),
            size: work,
            cap,
        });
    }

    // Profile lookup by the vector of per-bidder flat types.
    let bidder_types: Vec<Vec<Vec<usize>>> = (0..inst.n).map(|i| inst.bidder_types(i)).collect();
    let type_counts: Vec<usize> = bidder_types.iter().map(|t| t.len()).collect();
    let profile_index = |flats: &[usize]| -> usize {
        let mut idx = 0usize;
        for (i, &f) in flats.iter().enumerate() {
            idx = idx * type_counts[i] + f;
        }
        idx
    };

    let mut lp = LinearProgram::default();
    let y: Vec<Vec<usize>> = (0..profiles.len())
        .map(|p| {
            (0..assigns.len())
                .map(|a| lp.add_nonneg(format!("y_{p}_{a}")))
                .collect()
        })
        .collect();
    let pay: Vec<Vec<usize>> = (0..inst.n)
        .map(|i| {
            (0..type_counts[i])
                .map(|t| lp.add_var(format!("pay_{i}_{t}"), None, None))
                .collect()
        })
        .collect();

    for p in 0..profiles.len() {
        lp.add_row(
            format!("dist_{p}"),
            y[p].iter().map(|&v| (v, Rat::one())).collect(),
            Rel::Eq,
            Rat::one(),
        );
    }

    // Cache v_i(true type, bundle_i(assignment)).
    let value_of = |i: usize, true_flat: usize, a: usize| -> Rat {
        value_oracle(
            inst,
            i,
            &bidder_types[i][true_flat],
            bundle_of(&assigns[a], i),
        )
    };

    // Interim expected value terms for bidder i with true type `truth`
    // reporting `report`: sum over others' types of f_{-i} * y * v.
    let others: Vec<Vec<(Vec<usize>, Rat)>> = (0..inst.n)
        .map(|i| {
            // joint flat types and probabilities of everyone but i
            let mut acc: Vec<(Vec<usize>, Rat)> = vec![(vec![], Rat::one())];
            for k in 0..inst.n {
                if k == i {
                    continue;
                }
                let mut next = Vec::with_capacity(acc.len() * type_counts[k]);
                for (flats, pr) in &acc {
                    for (tf, t) in bidder_types[k].iter().enumerate() {
                        let mut f2 = flats.clone();
                        f2.push(tf);
                        next.push((f2, pr * inst.bidder_type_prob(k, t)));
                    }
                }
                acc = next;
            }
            acc
        })
        .collect();

    let interim_value_terms = |i: usize, truth: usize, report: usize| -> Vec<(usize, Rat)> {
        let mut terms = Vec::new();
        for (other_flats, pr) in &others[i] {
            let mut flats = Vec::with_capacity(inst.n);
            let mut oidx = 0;
            for k in 0..inst.n {
                if k == i {
                    flats.push(report);
                } else {
                    flats.push(other_flats[oidx]);
                    oidx += 1;
                }
            }
            let p = profile_index(&flats);
            for a in 0..assigns.len() {
                let v = value_of(i, truth, a);
                if !v.is_zero() {
                    terms.push((y[p][a], pr * v));
                }
            }
        }
        terms
    };

    for i in 0..inst.n {
        for truth in 0..type_counts[i] {
            // IR: truthful interim utility nonnegative.
            let mut ir = interim_value_terms(i, truth, truth);
            ir.push((pay[i][truth], -Rat::one()));
            lp.add_row(format!("ir_{i}_{truth}"), ir, Rel::Ge, Rat::zero());
            // BIC: truth-telling beats any misreport.
            for report in 0..type_counts[i] {
                if report == truth {
                    continue;
                }
                let mut terms = interim_value_terms(i, truth, truth);
                terms.push((pay[i][truth], -Rat::one()));
                for (var, coeff) in interim_value_terms(i, truth, report) {
                    terms.push((var, -coeff));
                }
                terms.push((pay[i][report], Rat::one()));
                lp.add_row(format!("bic_{i}_{truth}_{report}"), terms, Rel::Ge, Rat::zero());
            }
        }
    }

    lp.objective = (0..inst.n)
        .flat_map(|i| {
            let pay_row = pay[i].clone();
            let probs: Vec<Rat> = bidder_types[i]
                .iter()
                .map(|t| inst.bidder_type_prob(i, t))
                .collect();
            pay_row.into_iter().zip(probs)
        })
        .collect();

    let res = solve_lp(&lp, mode)?;
    if res.status != LpStatus::Optimal {
        return Err(Error::Internal(format!(
            "optimal-revenue LP ended with {:?}",
            res.status
        )));
    }
    // Clamp float dust and renormalize each profile's distribution exactly,
    // so downstream exact arithmetic sees a true probability distribution.
    let allocation = (0..profiles.len())
        .map(|p| {
            let raw: Vec<Rat> = (0..assigns.len())
                .map(|a| {
                    let v = res.point[y[p][a]].clone();
                    if v.is_negative() {
                        Rat::zero()
                    } else {
                        v
                    }
                })
                .collect();
            let total: Rat = raw.iter().cloned().sum();
            if total.is_zero() {
                return vec![(assigns[0].clone(), Rat::one())];
            }
            raw.into_iter()
                .enumerate()
                .filter(|(_, v)| !v.is_zero())
                .map(|(a, v)| (assigns[a].clone(), v / &total))
                .collect()
        })
        .collect();
    let interim_payments = (0..inst.n)
        .map(|i| pay[i].iter().map(|&v| res.point[v].clone()).collect())
        .collect();
    Ok((
        res.objective,
        BicWitness {
            profiles,
            allocation,
            interim_payments,
        },
    ))
}

/// The best feasible sub-bundle attaining v_i(t_i, mask), smallest
/// (cardinality, lexicographic) on ties; XOS bundles are kept whole.
fn trim_bundle(inst: &Instance, i: usize, t_i: &[usize], mask: u32) -> u32 {
    match &inst.valuations[i] {
        crate::model::Valuation::Xos { .. } => mask,
        crate::model::Valuation::ConstrainedAdditive { feasibility } => {
            let target = value_oracle(inst, i, t_i, mask);
            let mut best: Option<u32> = None;
            let mut sub = mask;
            loop {
                if feasibility.contains(sub) {
                    let v: Rat = (0..inst.m)
                        .filter(|j| sub & (1 << j) != 0)
                        .map(|j| inst.support_value(i, j, t_i[j]).clone())
                        .sum();
                    if v == target
                        && best.is_none_or(|b| bundle_precedes(sub, b))
                    {
                        best = Some(sub);
                    }
                }
                if sub == 0 {
                    break;
                }
                sub = (sub - 1) & mask;
            }
            best.unwrap_or(0)
        }
    }
}

/// Interim allocation of the witness, with constrained-additive bundles
/// trimmed to value-attaining feasible sub-bundles (an equivalent mechanism
/// never hands out unused items).
pub fn interim_allocation(inst: &Instance, witness: &BicWitness) -> InterimAllocation {
    let bidder_types: Vec<Vec<Vec<usize>>> = (0..inst.n).map(|i| inst.bidder_types(i)).collect();
    let mut sigma: Vec<Vec<Vec<Rat>>> = (0..inst.n)
        .map(|i| vec![vec![Rat::zero(); 1 << inst.m]; bidder_types[i].len()])
        .collect();
    for (pidx, (profile, prob)) in witness.profiles.iter().enumerate() {
        for i in 0..inst.n {
            let t_flat = bidder_flat_index(inst, i, &profile.indices[i]);
            let cond_prob = prob / inst.bidder_type_prob(i, &profile.indices[i]);
            for (assign, y) in &witness.allocation[pidx] {
                let mask = trim_bundle(inst, i, &profile.indices[i], bundle_of(assign, i));
                sigma[i][t_flat][mask as usize] += &cond_prob * y;
            }
        }
    }
    InterimAllocation { sigma }
}

/// Core: expected welfare under sigma truncated at beta + c per (i, j), with
/// tie weight r at the threshold. XOS items count their winning additive
/// coefficient.
pub fn compute_core(
    inst: &Instance,
    sigma: &InterimAllocation,
    duals: &DualParameters,
) -> Result<Rat, Error> {
    let mut core = Rat::zero();
    for i in 0..inst.n {
        for (t_flat, t_i) in inst.bidder_types(i).iter().enumerate() {
            let f_t = inst.bidder_type_prob(i, t_i);
            for (mask, p) in sigma.sigma[i][t_flat].iter().enumerate() {
                if p.is_zero() {
                    continue;
                }
                let mask = mask as u32;
                for j in 0..inst.m {
                    if mask & (1 << j) == 0 {
                        continue;
                    }
                    let v = inst.singleton_value(i, j, t_i[j]);
                    let gamma = match &inst.valuations[i] {
                        crate::model::Valuation::ConstrainedAdditive { .. } => v.clone(),
                        crate::model::Valuation::Xos { xos } => {
                            let k = xos_oracle(inst, i, t_i, mask)?;
                            xos.alpha[j][t_i[j]][k].clone()
                        }
                    };
                    if gamma.is_zero() {
                        continue;
                    }
                    let threshold = &duals.beta[i][j] + &duals.c[i];
                    let weight = if v < threshold {
                        Rat::one()
                    } else if v == threshold {
                        duals.r[i][j].clone()
                    } else {
                        Rat::zero()
                    };
                    if !weight.is_zero() {
                        core += &f_t * p * gamma * weight;
                    }
                }
            }
        }
    }
    Ok(core)
}

/// Expected welfare of sigma with no truncation at all.
pub fn expected_welfare(inst: &Instance, sigma: &InterimAllocation) -> Result<Rat, Error> {
    let above_all = inst.max_singleton_value() + rat_i(1);
    let duals = DualParameters {
        beta: vec![vec![above_all; inst.m]; inst.n],
        c: vec![Rat::zero(); inst.n],
        r: vec![vec![Rat::zero(); inst.m]; inst.n],
    };
    compute_core(inst, sigma, &duals)
}

/// Quantile duals: per (i, j) the smallest singleton value whose strict tail
/// is at most half the interim allocation probability, with the tie weight
/// closing the gap exactly; shifts are zero.
pub fn construct_duals(inst: &Instance, sigma: &InterimAllocation) -> DualParameters {
    let mut beta = Vec::with_capacity(inst.n);
    let mut r = Vec::with_capacity(inst.n);
    for i in 0..inst.n {
        let mut beta_i = Vec::with_capacity(inst.m);
        let mut r_i = Vec::with_capacity(inst.m);
        for j in 0..inst.m {
            let q: Rat = inst
                .bidder_types(i)
                .iter()
                .enumerate()
                .map(|(t_flat, t_i)| {
                    inst.bidder_type_prob(i, t_i) * sigma.item_prob(i, t_flat, j)
                })
                .sum();
            let half_q = q / rat_i(2);
            let mut values: Vec<Rat> = (0..inst.support_len(i, j))
                .map(|v| inst.singleton_value(i, j, v))
                .collect();
            values.sort();
            values.dedup();
            let chosen = values
                .iter()
                .find(|v| inst.singleton_tail(i, j, v, true) <= half_q)
                .cloned()
                .unwrap_or_else(|| values.last().expect("nonempty support").clone());
            let tail = inst.singleton_tail(i, j, &chosen, true);
            let mass = inst.singleton_tail(i, j, &chosen, false) - &tail;
            let r_val = if mass.is_zero() {
                Rat::zero()
            } else {
                (half_q - &tail) / mass
            };
            beta_i.push(chosen);
            r_i.push(r_val);
        }
        beta.push(beta_i);
        r.push(r_i);
    }
    DualParameters {
        beta,
        c: vec![Rat::zero(); inst.n],
        r,
    }
}

/// Verifies the two structural inequalities the construction relies on:
/// summed tail weights per item at most one half, and per (i, j) half the
/// interim item probability at most the tail weight.
pub fn check_dual_properties(
    inst: &Instance,
    sigma: &InterimAllocation,
    duals: &DualParameters,
) -> Result<(), String> {
    for j in 0..inst.m {
        let mut total = Rat::zero();
        for i in 0..inst.n {
            let tail = inst.singleton_tail(i, j, &duals.beta[i][j], true);
            let mass =
                inst.singleton_tail(i, j, &duals.beta[i][j], false) - &tail;
            total += tail + &duals.r[i][j] * mass;
        }
        if total > crate::num::rat(1, 2) {
            return Err(format!("property 1 fails on item {j}"));
        }
    }
    for i in 0..inst.n {
        for j in 0..inst.m {
            let q: Rat = inst
                .bidder_types(i)
                .iter()
                .enumerate()
                .map(|(t_flat, t_i)| {
                    inst.bidder_type_prob(i, t_i) * sigma.item_prob(i, t_flat, j)
                })
                .sum();
            let tail = inst.singleton_tail(i, j, &duals.beta[i][j], true);
            let mass = inst.singleton_tail(i, j, &duals.beta[i][j], false) - &tail;
            if q / rat_i(2) > tail + &duals.r[i][j] * mass {
                return Err(format!("property 2 fails on bidder {i}, item {j}"));
            }
        }
    }
    Ok(())
}


/// Result of converting a mechanism into a point of the master LP.
#[derive(Debug, Clone)]
pub struct ConstructedSolution {
    /// Full LP point for the exact-polytope relaxation this was built
    /// against.
    pub point: Vec<Rat>,
    pub objective: Rat,
    pub core: Rat,
    pub max_residual: Rat,
    pub rounded_c: Vec<Rat>,
}

/// The feasible-solution construction: split lambda across the threshold and
/// its strict twin with weights r and 1 - r, point-mass lambda-hat, shifts
/// rounded up into the delta grid, and sub-convex piece weights read directly
/// off sigma. Checked against the exact-polytope LP rows.
pub fn lp_solution_from_mechanism(
    inst: &Instance,
    grid: &DualGrid,
    built: &RelaxationLp,
    polys: &[crate::polytopes::ApproxPolytope],
    sigma: &InterimAllocation,
    duals: &DualParameters,
) -> Result<ConstructedSolution, Error> {
    check_dual_properties(inst, sigma, duals).map_err(Error::InvalidArgument)?;
    let mut rounded_c = Vec::with_capacity(inst.n);
    for c in &duals.c {
        match grid.round_up_delta(c) {
            Some(v) => rounded_c.push(v),
            None => {
                return Err(Error::InvalidArgument(format!(
                    "shift {} exceeds the delta grid range",
                    crate::num::rat_str(c)
                )))
            }
        }
    }

    let mut point = vec![Rat::zero(); built.lp.vars.len()];
    let vars = &built.vars;
    let bidder_types: Vec<Vec<Vec<usize>>> = (0..inst.n).map(|i| inst.bidder_types(i)).collect();

    for i in 0..inst.n {
        let xos = inst.valuations[i].is_xos();
        // w (and pi) from sigma.
        for j in 0..inst.m {
            for (t_flat, t_i) in bidder_types[i].iter().enumerate() {
                let v_idx = t_i[j];
                let f_t = inst.bidder_type_prob(i, t_i);
                for (mask, p) in sigma.sigma[i][t_flat].iter().enumerate() {
                    if p.is_zero() || (mask as u32) & (1 << j) == 0 {
                        continue;
                    }
                    let v = inst.singleton_value(i, j, v_idx);
                    if xos {
                        point[vars.pi.as_ref().unwrap()[i][j][v_idx]] += &f_t * p;
                        if !v.is_zero() {
                            let k = xos_oracle(inst, i, t_i, mask as u32)?;
                            let gamma = match &inst.valuations[i] {
                                crate::model::Valuation::Xos { xos } => {
                                    xos.alpha[j][v_idx][k].clone()
                                }
                                _ => unreachable!(),
                            };
                            point[vars.w[i][j][v_idx]] += &f_t * p * (gamma / v);
                        }
                    } else if !v.is_zero() {
                        point[vars.w[i][j][v_idx]] += &f_t * p;
                    }
                }
            }
        }
        // lambda and lambda_hat at the dual thresholds.
        let delta_idx = grid
            .delta
            .iter()
            .position(|dv| *dv == rounded_c[i])
            .expect("rounded shift is a grid point");
        for j in 0..inst.m {
            let base_idx = grid.base_values[i][j]
                .iter()
                .position(|v| *v == duals.beta[i][j])
                .ok_or_else(|| {
                    Error::InvalidArgument(format!(
                        "threshold {} is not a singleton value of ({i}, {j})",
                        crate::num::rat_str(&duals.beta[i][j])
                    ))
                })?;
            let b_closed = 2 * base_idx;
            let b_strict = 2 * base_idx + 1;
            let r = &duals.r[i][j];
            point[vars.lambda_hat[i][j][b_closed][delta_idx]] = r.clone();
            point[vars.lambda_hat[i][j][b_strict][delta_idx]] = Rat::one() - r;
            for t in 0..inst.support_len(i, j) {
                let w_val = point[vars.w[i][j][t]].clone();
                if w_val.is_zero() {
                    continue;
                }
                let over_f = w_val / inst.prob(i, j, t);
                point[vars.lambda[i][j][t][b_closed][delta_idx]] = r * &over_f;
                point[vars.lambda[i][j][t][b_strict][delta_idx]] =
                    (Rat::one() - r) * over_f;
            }
        }
        point[vars.d[i]] = rounded_c[i].clone();

        // Sub-convex piece weights straight from sigma: piece order follows
        // the lexicographic type order of the exact polytope.
        let poly = &polys[i];
        for (p_idx, (_, tp)) in poly.pieces.iter().enumerate() {
            let t_flat = bidder_flat_index(inst, i, &tp.t_i);
            for (g_idx, g) in tp.generators.iter().enumerate() {
                let matches_sigma = match g.function {
                    None => sigma.sigma[i][t_flat][g.bundle as usize].clone(),
                    Some(k) => {
                        // XOS generators split by winning function.
                        if g.bundle == 0 {
                            Rat::zero()
                        } else {
                            let winner = xos_oracle(inst, i, &tp.t_i, g.bundle)?;
                            if winner == k {
                                sigma.sigma[i][t_flat][g.bundle as usize].clone()
                            } else {
                                Rat::zero()
                            }
                        }
                    }
                };
                if !matches_sigma.is_zero() {
                    point[vars.piece_weights[i][p_idx][g_idx]] = matches_sigma;
                }
            }
        }
    }

    let objective: Rat = built
        .lp
        .objective
        .iter()
        .map(|(v, c)| c * &point[*v])
        .sum();
    let report = check_point(&built.lp, &point);
    let duals_rounded = DualParameters {
        beta: duals.beta.clone(),
        c: rounded_c.clone(),
        r: duals.r.clone(),
    };
    let core = compute_core(inst, sigma, &duals_rounded)?;
    Ok(ConstructedSolution {
        point,
        objective,
        core,
        max_residual: report.max_violation,
        rounded_c,
    })
}
