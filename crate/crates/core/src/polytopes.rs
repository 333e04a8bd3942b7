//! Single-bidder marginal-reduced-form polytopes and their truncated, box,
//! and mixture approximations.
//!
//! A bidder's polytope lives in one coordinate per (item, support value); XOS
//! bidders get a second block for the value-weighted part. Mixtures keep
//! explicit per-type generator lists and are never materialized as vertex
//! sets: linear optimization decomposes over the Minkowski summands, and
//! membership is a small feasibility LP over piece weights.

use std::collections::BTreeMap;

use num_traits::{One, Signed, Zero};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::lp::{check_point, solve_lp, ArithMode, LinearProgram, LpStatus, Rel};
use crate::model::{Instance, Valuation};
use crate::num::{rat, rat_f64, Rat};
use crate::oracles::{adjustable_demand_oracle, demand_oracle};
use crate::sampling::sample_index;
use crate::Error;

pub const GENERATOR_CAP: usize = 200_000;

/// Coordinate layout for bidder `i`: one slot per (item, support index).
#[derive(Debug, Clone)]
pub struct CoordMap {
    pub offsets: Vec<usize>,
    pub per_item: Vec<usize>,
    /// Number of (item, value) slots.
    pub slots: usize,
    pub xos: bool,
}

impl CoordMap {
    pub fn new(inst: &Instance, i: usize) -> CoordMap {
        let per_item: Vec<usize> = (0..inst.m).map(|j| inst.support_len(i, j)).collect();
        let mut offsets = Vec::with_capacity(inst.m);
        let mut acc = 0;
        for &len in &per_item {
            offsets.push(acc);
            acc += len;
        }
        CoordMap {
            offsets,
            per_item,
            slots: acc,
            xos: inst.valuations[i].is_xos(),
        }
    }

    pub fn slot(&self, j: usize, v_idx: usize) -> usize {
        self.offsets[j] + v_idx
    }

    /// Full space dimension: slots for constrained-additive, doubled for XOS
    /// (allocation block first, value-weighted block second).
    pub fn dim(&self) -> usize {
        if self.xos {
            2 * self.slots
        } else {
            self.slots
        }
    }

    pub fn w_block(&self, slot: usize) -> usize {
        if self.xos {
            self.slots + slot
        } else {
            slot
        }
    }

    pub fn item_of_slot(&self, slot: usize) -> (usize, usize) {
        let j = match self.offsets.binary_search(&slot) {
            Ok(j) => j,
            Err(j) => j - 1,
        };
        (j, slot - self.offsets[j])
    }
}

#[derive(Debug, Clone)]
pub struct Generator {
    /// Bundle bitmask (and function index for XOS) behind this generator.
    pub bundle: u32,
    pub function: Option<usize>,
    /// Sparse coordinates in the bidder's full space.
    pub coords: Vec<(usize, Rat)>,
}

/// Generators of one type's feasible allocations: sub-convex combinations of
/// these span the per-type polytope. XOS types additionally allow lowering
/// any value-weighted coordinate.
#[derive(Debug, Clone)]
pub struct TypePolytope {
    pub bidder: usize,
    pub t_i: Vec<usize>,
    pub dim: usize,
    pub slots: usize,
    pub xos: bool,
    pub generators: Vec<Generator>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PolyMode {
    ExactDistribution,
    Sampled { n: usize, seed: u64 },
}

/// A weighted Minkowski sum of truncated per-type polytopes plus a box piece.
#[derive(Debug, Clone)]
pub struct ApproxPolytope {
    pub bidder: usize,
    pub dim: usize,
    pub slots: usize,
    pub xos: bool,
    /// (coefficient, piece); coefficients include both the composition scale
    /// and the (exact or empirical) type weight.
    pub pieces: Vec<(Rat, TypePolytope)>,
    /// Zero disables the box summand.
    pub box_coeff: Rat,
    /// Per-slot cap min(eps, width) on the allocation block.
    pub box_caps: Vec<Rat>,
    /// For XOS, min(eps, value-block width); the value block also sits below
    /// the allocation block. Zero for constrained-additive bidders.
    pub box_w_caps: Vec<Rat>,
    pub widths: Vec<Rat>,
    pub eps: Rat,
    pub mode: PolyMode,
}

impl ApproxPolytope {
    /// Compact description for logs: piece coefficients, generator counts,
    /// and coordinate widths.
    pub fn debug_summary(&self) -> String {
        let pieces: Vec<String> = self
            .pieces
            .iter()
            .map(|(c, p)| format!("{}x{}gen", crate::num::rat_str(c), p.generators.len()))
            .collect();
        format!(
            "bidder {} dim {} pieces [{}] box {} widths [{}]",
            self.bidder,
            self.dim,
            pieces.join(", "),
            crate::num::rat_str(&self.box_coeff),
            self.widths
                .iter()
                .map(crate::num::rat_str)
                .collect::<Vec<_>>()
                .join(", ")
        )
    }
}

/// Per-coordinate widths of the bidder's polytope: the marginal probability
/// of each (item, value) slot. The width drops to zero when no feasible set
/// contains the item (constrained-additive) or on the value block when the
/// singleton value is zero, matching the zero-contribution convention.
pub fn widths(inst: &Instance, i: usize) -> Vec<Rat> {
    let cm = CoordMap::new(inst, i);
    let mut out = vec![Rat::zero(); cm.dim()];
    for j in 0..inst.m {
        let item_allocatable = match &inst.valuations[i] {
            Valuation::ConstrainedAdditive { feasibility } => feasibility.contains(1 << j),
            Valuation::Xos { .. } => true,
        };
        for v_idx in 0..inst.support_len(i, j) {
            let slot = cm.slot(j, v_idx);
            let f = inst.prob(i, j, v_idx).clone();
            if !item_allocatable {
                continue;
            }
            let v = inst.singleton_value(i, j, v_idx);
            if cm.xos {
                out[slot] = f.clone();
                out[cm.w_block(slot)] = if v.is_zero() { Rat::zero() } else { f };
            } else {
                out[slot] = if v.is_zero() { Rat::zero() } else { f };
            }
        }
    }
    out
}

/// Builds the generator list for bidder `i` at type `t_i`: one generator per
/// feasible set (constrained-additive) or per nonempty (set, function) pair
/// plus the origin (XOS). Coordinates at zero singleton values contribute
/// nothing, mirroring the zero-value convention for value-weighted parts.
pub fn build_type_polytope(
    inst: &Instance,
    i: usize,
    t_i: &[usize],
    cap: usize,
) -> Result<TypePolytope, Error> {
    let cm = CoordMap::new(inst, i);
    let mut generators = Vec::new();
    match &inst.valuations[i] {
        Valuation::ConstrainedAdditive { feasibility } => {
            let masks = feasibility.enumerate(inst.m, cap)?;
            for mask in masks {
                let mut coords = Vec::new();
                for j in 0..inst.m {
                    if mask & (1 << j) == 0 {
                        continue;
                    }
                    let v_idx = t_i[j];
                    if inst.singleton_value(i, j, v_idx).is_zero() {
                        continue;
                    }
                    coords.push((cm.slot(j, v_idx), Rat::one()));
                }
                generators.push(Generator {
                    bundle: mask,
                    function: None,
                    coords,
                });
            }
        }
        Valuation::Xos { xos } => {
            let count = (1u128 << inst.m.min(127)) * xos.function_count as u128;
            if count > cap as u128 {
                return Err(Error::CapExceeded {
                    what: "XOS generators".into(),
                    size: count,
                    cap: cap as u128,
                });
            }
            generators.push(Generator {
                bundle: 0,
                function: None,
                coords: vec![],
            });
            let full: u32 = (1u32 << inst.m) - 1;
            for mask in 1..=full {
                for k in 0..xos.function_count {
                    let mut coords = Vec::new();
                    for j in 0..inst.m {
                        if mask & (1 << j) == 0 {
                            continue;
                        }
                        let v_idx = t_i[j];
                        let slot = cm.slot(j, v_idx);
                        coords.push((slot, Rat::one()));
                        let v = inst.singleton_value(i, j, v_idx);
                        if !v.is_zero() {
                            let ratio = &xos.alpha[j][v_idx][k] / &v;
                            if !ratio.is_zero() {
                                coords.push((cm.w_block(slot), ratio));
                            }
                        }
                    }
                    generators.push(Generator {
                        bundle: mask,
                        function: Some(k),
                        coords,
                    });
                }
            }
        }
    }
    Ok(TypePolytope {
        bidder: i,
        t_i: t_i.to_vec(),
        dim: cm.dim(),
        slots: cm.slots,
        xos: cm.xos,
        generators,
    })
}

fn truncate_type_polytope(tp: &TypePolytope, keep: &[bool]) -> TypePolytope {
    let mut out = tp.clone();
    for g in &mut out.generators {
        g.coords.retain(|(c, _)| {
            let slot = if *c >= tp.slots { *c - tp.slots } else { *c };
            keep[slot]
        });
    }
    out
}

/// The bidder's exact polytope as a mixture of untruncated per-type pieces
/// weighted by the true type probabilities; no box summand.
pub fn exact_polytope(inst: &Instance, i: usize, cap: usize) -> Result<ApproxPolytope, Error> {
    let cm = CoordMap::new(inst, i);
    let type_count = inst.bidder_type_count(i);
    if type_count > cap as u128 {
        return Err(Error::CapExceeded {
            what: format!("bidder {i} type space"),
            size: type_count,
            cap: cap as u128,
        });
    }
    let mut pieces = Vec::new();
    for t_i in inst.bidder_types(i) {
        let w = inst.bidder_type_prob(i, &t_i);
        let tp = build_type_polytope(inst, i, &t_i, cap)?;
        pieces.push((w, tp));
    }
    Ok(ApproxPolytope {
        bidder: i,
        dim: cm.dim(),
        slots: cm.slots,
        xos: cm.xos,
        pieces,
        box_coeff: Rat::zero(),
        box_caps: vec![Rat::zero(); cm.slots],
        box_w_caps: vec![Rat::zero(); cm.slots],
        widths: widths(inst, i),
        eps: Rat::zero(),
        mode: PolyMode::ExactDistribution,
    })
}

/// Builds the approximation: truncated per-type pieces mixed with the true or
/// empirical type weights, plus a scaled box. Constrained-additive bidders use
/// the (c/3)(truncated + box) composition; XOS bidders use 1/2 truncated plus
/// 1/4 box.
pub fn build_approx_polytope(
    inst: &Instance,
    i: usize,
    eps: &Rat,
    c: &Rat,
    mode: PolyMode,
    cap: usize,
) -> Result<ApproxPolytope, Error> {
    let t_total = inst.t_total() as i64;
    if !eps.is_positive() || *eps >= rat(1, 1) / crate::num::rat_i(t_total) {
        return Err(Error::InvalidArgument(format!(
            "eps must lie in (0, 1/T) with T = {t_total}"
        )));
    }
    let cm = CoordMap::new(inst, i);
    let wid = widths(inst, i);
    // Keep a slot iff its marginal probability f >= eps.
    let keep: Vec<bool> = {
        let mut keep = vec![false; cm.slots];
        for j in 0..inst.m {
            for v_idx in 0..inst.support_len(i, j) {
                keep[cm.slot(j, v_idx)] = inst.prob(i, j, v_idx) >= eps;
            }
        }
        keep
    };

    let (piece_scale, box_coeff) = if cm.xos {
        (rat(1, 2), rat(1, 4))
    } else {
        let third = c / crate::num::rat_i(3);
        (third.clone(), third)
    };

    let type_weights: Vec<(Vec<usize>, Rat)> = match &mode {
        PolyMode::ExactDistribution => {
            let type_count = inst.bidder_type_count(i);
            if type_count > cap as u128 {
                return Err(Error::CapExceeded {
                    what: format!("bidder {i} type space"),
                    size: type_count,
                    cap: cap as u128,
                });
            }
            inst.bidder_types(i)
                .into_iter()
                .map(|t| {
                    let w = inst.bidder_type_prob(i, &t);
                    (t, w)
                })
                .collect()
        }
        PolyMode::Sampled { n, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let mut counts: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
            for _ in 0..*n {
                let t: Vec<usize> = (0..inst.m)
                    .map(|j| sample_index(&inst.marginals[i][j].probs, &mut rng))
                    .collect();
                *counts.entry(t).or_insert(0) += 1;
            }
            counts
                .into_iter()
                .map(|(t, cnt)| (t, rat(cnt as i64, *n as i64)))
                .collect()
        }
    };

    let mut pieces = Vec::new();
    for (t_i, weight) in type_weights {
        let tp = build_type_polytope(inst, i, &t_i, cap)?;
        let tp = truncate_type_polytope(&tp, &keep);
        pieces.push((&piece_scale * weight, tp));
    }

    let clamp = |w: &Rat| -> Rat {
        if *w < *eps {
            w.clone()
        } else {
            eps.clone()
        }
    };
    let box_caps: Vec<Rat> = (0..cm.slots).map(|s| clamp(&wid[s])).collect();
    let box_w_caps: Vec<Rat> = (0..cm.slots)
        .map(|s| {
            if cm.xos {
                clamp(&wid[cm.slots + s])
            } else {
                Rat::zero()
            }
        })
        .collect();

    Ok(ApproxPolytope {
        bidder: i,
        dim: cm.dim(),
        slots: cm.slots,
        xos: cm.xos,
        pieces,
        box_coeff,
        box_caps,
        box_w_caps,
        widths: wid,
        eps: eps.clone(),
        mode,
    })
}

// ---------------------------------------------------------------------------
// Linear optimization
// ---------------------------------------------------------------------------

/// Maximizes `objective . x` over one per-type piece through the bidder's
/// demand oracle (constrained-additive) or adjustable demand oracle (XOS).
/// Items whose objective entry is truncated away or whose singleton value is
/// zero never enter the oracle query.
pub fn optimize_piece(
    inst: &Instance,
    tp: &TypePolytope,
    objective: &[Rat],
) -> Result<(Vec<Rat>, Rat), Error> {
    if objective.len() != tp.dim {
        return Err(Error::InvalidArgument(format!(
            "objective has dimension {}, polytope has {}",
            objective.len(),
            tp.dim
        )));
    }
    let i = tp.bidder;
    let cm = CoordMap::new(inst, i);
    // Effective per-item objective entries at this type, restricted to the
    // coordinates the (possibly truncated) generators can reach.
    let mut reachable = vec![false; tp.dim];
    for g in &tp.generators {
        for (c, _) in &g.coords {
            reachable[*c] = true;
        }
    }

    match &inst.valuations[i] {
        Valuation::ConstrainedAdditive { .. } => {
            let mut eff = vec![Rat::zero(); inst.m];
            for j in 0..inst.m {
                let slot = cm.slot(j, tp.t_i[j]);
                if reachable[slot] {
                    eff[j] = objective[slot].clone();
                }
            }
            // Scale positive entries so prices t - s*a stay nonnegative.
            let mut scale = Rat::one();
            for j in 0..inst.m {
                if eff[j].is_positive() {
                    let t = inst.support_value(i, j, tp.t_i[j]);
                    let bound = t / (crate::num::rat_i(2) * &eff[j]);
                    if bound < scale {
                        scale = bound;
                    }
                }
            }
            let prices: Vec<Rat> = (0..inst.m)
                .map(|j| {
                    let t = inst.support_value(i, j, tp.t_i[j]).clone();
                    if eff[j].is_positive() {
                        t - &scale * &eff[j]
                    } else {
                        t
                    }
                })
                .collect();
            let ans = demand_oracle(inst, i, &tp.t_i, &prices);
            let mut point = vec![Rat::zero(); tp.dim];
            let mut value = Rat::zero();
            for &j in &ans.bundle {
                let slot = cm.slot(j, tp.t_i[j]);
                if reachable[slot] {
                    point[slot] = Rat::one();
                    value += &objective[slot];
                }
            }
            Ok((point, value))
        }
        Valuation::Xos { xos } => {
            // Adjusted-demand route: coefficients carry the value-block
            // objective, prices carry the negated allocation-block objective.
            let sentinel = {
                let mut s = Rat::one();
                for j in 0..inst.m {
                    for k in 0..xos.function_count {
                        let a = &xos.alpha[j][tp.t_i[j]][k];
                        if *a > s {
                            s = a.clone();
                        }
                    }
                }
                s + Rat::one()
            };
            let mut coeffs = vec![Rat::zero(); inst.m];
            let mut prices = vec![Rat::zero(); inst.m];
            let mut in_play = vec![false; inst.m];
            for j in 0..inst.m {
                let slot = cm.slot(j, tp.t_i[j]);
                if !reachable[slot] {
                    prices[j] = sentinel.clone();
                    continue;
                }
                in_play[j] = true;
                let v = inst.singleton_value(i, j, tp.t_i[j]);
                let y = &objective[cm.w_block(slot)];
                if y.is_positive() && !v.is_zero() {
                    coeffs[j] = y / v;
                }
                let x = &objective[slot];
                if x.is_negative() {
                    prices[j] = -x.clone();
                }
            }
            let ans = adjustable_demand_oracle(inst, i, &tp.t_i, &coeffs, &prices)?;
            let k_star = ans.winner_index;
            let mut bundle = crate::model::set_to_mask(&ans.bundle);
            for j in 0..inst.m {
                let slot = cm.slot(j, tp.t_i[j]);
                if in_play[j] && objective[slot].is_positive() {
                    bundle |= 1 << j;
                }
            }
            let mut point = vec![Rat::zero(); tp.dim];
            for j in 0..inst.m {
                if bundle & (1 << j) == 0 {
                    continue;
                }
                let slot = cm.slot(j, tp.t_i[j]);
                point[slot] = Rat::one();
                let v = inst.singleton_value(i, j, tp.t_i[j]);
                if objective[cm.w_block(slot)].is_positive() && !v.is_zero() {
                    point[cm.w_block(slot)] = &xos.alpha[j][tp.t_i[j]][k_star] / v;
                }
            }
            let value: Rat = point
                .iter()
                .zip(objective)
                .map(|(p, o)| p * o)
                .sum();
            Ok((point, value))
        }
    }
}

/// Maximizes a linear objective over the mixture: sums per-piece optima and
/// the coordinatewise box optimum, each scaled by its coefficient. The
/// optimum of every summand is clamped at zero by the sub-convex weights.
pub fn optimize_linear(
    inst: &Instance,
    poly: &ApproxPolytope,
    objective: &[Rat],
) -> Result<(Vec<Rat>, Rat), Error> {
    if objective.len() != poly.dim {
        return Err(Error::InvalidArgument(format!(
            "objective has dimension {}, polytope has {}",
            objective.len(),
            poly.dim
        )));
    }
    let mut point = vec![Rat::zero(); poly.dim];
    let mut value = Rat::zero();
    for (coeff, tp) in &poly.pieces {
        let (p, v) = optimize_piece(inst, tp, objective)?;
        if v.is_positive() {
            for (c, pv) in p.iter().enumerate() {
                if !pv.is_zero() {
                    point[c] += coeff * pv;
                }
            }
            value += coeff * v;
        }
    }
    if poly.box_coeff.is_positive() {
        for s in 0..poly.slots {
            let cap = &poly.box_caps[s];
            if cap.is_zero() {
                continue;
            }
            if poly.xos {
                let x = &objective[s];
                let y = &objective[poly.slots + s];
                let wcap = &poly.box_w_caps[s];
                // corners of {0 <= w <= min(pi, wcap), 0 <= pi <= cap}
                let corners = [
                    (Rat::zero(), Rat::zero()),
                    (cap.clone(), Rat::zero()),
                    (cap.clone(), wcap.clone().min(cap.clone())),
                    (wcap.clone().min(cap.clone()), wcap.clone().min(cap.clone())),
                ];
                let mut best = (Rat::zero(), Rat::zero(), Rat::zero());
                for (pc, wc) in corners {
                    let v = x * &pc + y * &wc;
                    if v > best.0 {
                        best = (v, pc, wc);
                    }
                }
                if best.0.is_positive() {
                    point[s] += &poly.box_coeff * &best.1;
                    point[poly.slots + s] += &poly.box_coeff * &best.2;
                    value += &poly.box_coeff * &best.0;
                }
            } else if objective[s].is_positive() {
                point[s] += &poly.box_coeff * cap;
                value += &poly.box_coeff * cap * &objective[s];
            }
        }
    }
    Ok((point, value))
}

// ---------------------------------------------------------------------------
// Membership
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub enum Membership {
    Inside,
    Outside {
        /// Objective a with a.point > max over the polytope.
        separating: Vec<Rat>,
        poly_max: Rat,
        point_value: Rat,
    },
}

/// Variable ids created by `add_membership_rows`.
#[derive(Debug, Clone)]
pub struct MembershipVars {
    /// Sub-convex generator weights, per piece.
    pub piece_weights: Vec<Vec<usize>>,
    /// Per slot: the box variable and, for XOS, its value-block companion.
    pub box_vars: Vec<(usize, Option<usize>)>,
}

/// Adds the extended-formulation variables and rows pinning `target[c]` (as
/// LP variable indices) to a point of the mixture polytope. XOS value-block
/// rows are >= (the polytope allows lowering those coordinates).
pub fn add_membership_rows(
    lp: &mut LinearProgram,
    poly: &ApproxPolytope,
    target: &[usize],
    tag: &str,
) -> MembershipVars {
    let mut coord_terms: Vec<Vec<(usize, Rat)>> = vec![Vec::new(); poly.dim];
    let mut piece_weights = Vec::with_capacity(poly.pieces.len());
    for (pidx, (coeff, tp)) in poly.pieces.iter().enumerate() {
        let mut weight_vars = Vec::with_capacity(tp.generators.len());
        for (gidx, g) in tp.generators.iter().enumerate() {
            let v = lp.add_nonneg(format!("{tag}_p{pidx}g{gidx}"));
            weight_vars.push(v);
            for (c, x) in &g.coords {
                coord_terms[*c].push((v, coeff * x));
            }
        }
        lp.add_row(
            format!("{tag}_subconvex_p{pidx}"),
            weight_vars.iter().map(|&v| (v, Rat::one())).collect(),
            Rel::Le,
            Rat::one(),
        );
        piece_weights.push(weight_vars);
    }
    let mut box_vars = Vec::new();
    if poly.box_coeff.is_positive() {
        for s in 0..poly.slots {
            let u = lp.add_var(
                format!("{tag}_box{s}"),
                Some(Rat::zero()),
                Some(poly.box_caps[s].clone()),
            );
            coord_terms[s].push((u, poly.box_coeff.clone()));
            let mut companion = None;
            if poly.xos {
                let uw = lp.add_var(
                    format!("{tag}_boxw{s}"),
                    Some(Rat::zero()),
                    Some(poly.box_w_caps[s].clone()),
                );
                // value-block box coordinate sits below the allocation one
                lp.add_row(
                    format!("{tag}_boxle{s}"),
                    vec![(uw, Rat::one()), (u, -Rat::one())],
                    Rel::Le,
                    Rat::zero(),
                );
                coord_terms[poly.slots + s].push((uw, poly.box_coeff.clone()));
                companion = Some(uw);
            }
            box_vars.push((u, companion));
        }
    }
    for c in 0..poly.dim {
        let mut terms = coord_terms[c].clone();
        terms.push((target[c], -Rat::one()));
        let rel = if poly.xos && c >= poly.slots {
            Rel::Ge
        } else {
            Rel::Eq
        };
        lp.add_row(format!("{tag}_coord{c}"), terms, rel, Rat::zero());
    }
    MembershipVars {
        piece_weights,
        box_vars,
    }
}

/// Feasibility test: is `point` in the mixture polytope (within `tol` in
/// float mode, exactly in rational mode)? Outside points come back with a
/// separating objective found through `optimize_linear`.
pub fn membership(
    inst: &Instance,
    poly: &ApproxPolytope,
    point: &[Rat],
    tol: f64,
    mode: ArithMode,
) -> Result<Membership, Error> {
    if point.len() != poly.dim {
        return Err(Error::InvalidArgument(format!(
            "point has dimension {}, polytope has {}",
            point.len(),
            poly.dim
        )));
    }
    let mut lp = LinearProgram::default();
    let target: Vec<usize> = (0..poly.dim)
        .map(|c| {
            lp.add_var(
                format!("pt{c}"),
                Some(point[c].clone()),
                Some(point[c].clone()),
            )
        })
        .collect();
    add_membership_rows(&mut lp, poly, &target, "mem");
    let res = solve_lp(&lp, mode)?;
    match res.status {
        LpStatus::Optimal => {
            let report = check_point(&lp, &res.point);
            if rat_f64(&report.max_violation) <= tol {
                Ok(Membership::Inside)
            } else {
                separating_certificate(inst, poly, point, tol)
            }
        }
        LpStatus::Infeasible => separating_certificate(inst, poly, point, tol),
        LpStatus::Unbounded => Err(Error::Internal(
            "membership feasibility LP cannot be unbounded".into(),
        )),
    }
}

/// Searches for a separating objective: coordinate directions first (width
/// violations), then sign patterns aligned with the point. The certificate is
/// verified against `optimize_linear` before being returned.
fn separating_certificate(
    inst: &Instance,
    poly: &ApproxPolytope,
    point: &[Rat],
    tol: f64,
) -> Result<Membership, Error> {
    let mut candidates: Vec<Vec<Rat>> = Vec::new();
    // Coordinate certificates for cap/width violations.
    for c in 0..poly.dim {
        if point[c].is_positive() {
            let mut e = vec![Rat::zero(); poly.dim];
            e[c] = Rat::one();
            candidates.push(e);
        }
        if point[c].is_negative() {
            let mut e = vec![Rat::zero(); poly.dim];
            e[c] = -Rat::one();
            candidates.push(e);
        }
    }
    // A direction weighted toward the point itself.
    candidates.push(point.to_vec());
    for cand in candidates {
        let (_, max_val) = optimize_linear(inst, poly, &cand)?;
        let point_value: Rat = cand.iter().zip(point).map(|(a, p)| a * p).sum();
        if rat_f64(&(&point_value - &max_val)) > tol {
            return Ok(Membership::Outside {
                separating: cand,
                poly_max: max_val,
                point_value,
            });
        }
    }
    // The feasibility LP said no, but no simple certificate exceeded the
    // tolerance; report the densest direction anyway.
    let cand = point.to_vec();
    let (_, max_val) = optimize_linear(inst, poly, &cand)?;
    let point_value: Rat = cand.iter().zip(point).map(|(a, p)| a * p).sum();
    Ok(Membership::Outside {
        separating: cand,
        poly_max: max_val,
        point_value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DiscreteMarginal, Feasibility, XosTable};
    use crate::num::{rat, rat_i};

    fn ud_two_items() -> Instance {
        Instance {
            n: 1,
            m: 2,
            marginals: vec![vec![
                DiscreteMarginal::point_mass(rat_i(1)),
                DiscreteMarginal::point_mass(rat_i(2)),
            ]],
            valuations: vec![Valuation::ConstrainedAdditive {
                feasibility: Feasibility::UnitDemand,
            }],
        }
    }

    #[test]
    fn generator_counts_match_family_shapes() {
        let ud = ud_two_items();
        let tp = build_type_polytope(&ud, 0, &[0, 0], GENERATOR_CAP).unwrap();
        assert_eq!(tp.generators.len(), 3); // {}, {0}, {1}

        let add = Instance {
            valuations: vec![Valuation::ConstrainedAdditive {
                feasibility: Feasibility::Additive,
            }],
            ..ud.clone()
        };
        let tp = build_type_polytope(&add, 0, &[0, 0], GENERATOR_CAP).unwrap();
        assert_eq!(tp.generators.len(), 4);

        let xos = Instance {
            n: 1,
            m: 1,
            marginals: vec![vec![DiscreteMarginal::point_mass(rat_i(1))]],
            valuations: vec![Valuation::Xos {
                xos: XosTable {
                    function_count: 2,
                    alpha: vec![vec![vec![rat_i(1), rat(1, 2)]]],
                },
            }],
        };
        let tp = build_type_polytope(&xos, 0, &[0], GENERATOR_CAP).unwrap();
        // origin + ({0}, k=0) + ({0}, k=1)
        assert_eq!(tp.generators.len(), 3);
    }

    #[test]
    fn widths_read_off_marginals() {
        let inst = Instance {
            n: 1,
            m: 1,
            marginals: vec![vec![DiscreteMarginal {
                support: vec![rat_i(1), rat_i(2)],
                probs: vec![rat(1, 2), rat(1, 2)],
            }]],
            valuations: vec![Valuation::ConstrainedAdditive {
                feasibility: Feasibility::Additive,
            }],
        };
        assert_eq!(widths(&inst, 0), vec![rat(1, 2), rat(1, 2)]);

        let det = Instance {
            marginals: vec![vec![DiscreteMarginal::point_mass(rat_i(3))]],
            ..inst.clone()
        };
        assert_eq!(widths(&det, 0), vec![rat_i(1)]);

        let two = Instance {
            n: 1,
            m: 2,
            marginals: vec![vec![
                DiscreteMarginal {
                    support: vec![rat_i(1), rat_i(2)],
                    probs: vec![rat(3, 10), rat(7, 10)],
                },
                DiscreteMarginal::point_mass(rat_i(1)),
            ]],
            valuations: vec![Valuation::ConstrainedAdditive {
                feasibility: Feasibility::Additive,
            }],
        };
        assert_eq!(widths(&two, 0), vec![rat(3, 10), rat(7, 10), rat_i(1)]);
    }

    #[test]
    fn truncation_is_identity_when_all_probs_large() {
        let inst = ud_two_items();
        let eps = rat(1, 10); // all probs are 1 >= eps
        let poly =
            build_approx_polytope(&inst, 0, &eps, &rat(1, 2), PolyMode::ExactDistribution, GENERATOR_CAP)
                .unwrap();
        for (_, tp) in &poly.pieces {
            let untrunc = build_type_polytope(&inst, 0, &tp.t_i, GENERATOR_CAP).unwrap();
            for (g, h) in tp.generators.iter().zip(&untrunc.generators) {
                assert_eq!(g.coords, h.coords);
            }
        }
    }

    #[test]
    fn degenerate_truncation_leaves_box_only() {
        // Two support values at probability 1/2 each with T = 2; eps < 1/2.
        let inst = Instance {
            n: 1,
            m: 1,
            marginals: vec![vec![DiscreteMarginal {
                support: vec![rat_i(1), rat_i(2)],
                probs: vec![rat(1, 2), rat(1, 2)],
            }]],
            valuations: vec![Valuation::ConstrainedAdditive {
                feasibility: Feasibility::Additive,
            }],
        };
        // eps above every f would need eps > 1/2 > 1/T: rejected.
        assert!(build_approx_polytope(
            &inst,
            0,
            &rat(3, 5),
            &rat(1, 2),
            PolyMode::ExactDistribution,
            GENERATOR_CAP
        )
        .is_err());
        // With a valid eps below every f, truncation keeps all coordinates.
        let poly = build_approx_polytope(
            &inst,
            0,
            &rat(1, 4),
            &rat(1, 2),
            PolyMode::ExactDistribution,
            GENERATOR_CAP,
        )
        .unwrap();
        assert!(poly.pieces.iter().all(|(_, tp)| tp
            .generators
            .iter()
            .any(|g| !g.coords.is_empty())));
    }

    #[test]
    fn sampled_mode_weights_sum_to_scale() {
        let inst = Instance {
            n: 1,
            m: 1,
            marginals: vec![vec![DiscreteMarginal {
                support: vec![rat_i(1), rat_i(2)],
                probs: vec![rat(1, 2), rat(1, 2)],
            }]],
            valuations: vec![Valuation::ConstrainedAdditive {
                feasibility: Feasibility::Additive,
            }],
        };
        let poly = build_approx_polytope(
            &inst,
            0,
            &rat(1, 4),
            &rat(1, 2),
            PolyMode::Sampled { n: 200, seed: 7 },
            GENERATOR_CAP,
        )
        .unwrap();
        // piece coefficients are (c/3) * empirical weights; weights sum to 1
        let total: Rat = poly.pieces.iter().map(|(c, _)| c.clone()).sum();
        assert_eq!(total, rat(1, 6));
    }

    #[test]
    fn optimize_unit_demand_piece() {
        let inst = ud_two_items();
        let tp = build_type_polytope(&inst, 0, &[0, 0], GENERATOR_CAP).unwrap();
        let obj = vec![rat(3, 10), rat(1, 2)];
        let (point, value) = optimize_piece(&inst, &tp, &obj).unwrap();
        assert_eq!(value, rat(1, 2));
        assert_eq!(point, vec![rat_i(0), rat_i(1)]);

        let neg = vec![rat_i(-1), rat_i(-2)];
        let (point, value) = optimize_piece(&inst, &tp, &neg).unwrap();
        assert!(value.is_zero());
        assert!(point.iter().all(|x| x.is_zero()));
    }

    #[test]
    fn box_piece_optimum_is_coordinatewise() {
        let inst = Instance {
            n: 1,
            m: 2,
            marginals: vec![vec![
                DiscreteMarginal {
                    support: vec![rat_i(1), rat_i(2)],
                    probs: vec![rat(1, 2), rat(1, 2)],
                },
                DiscreteMarginal {
                    support: vec![rat_i(1), rat_i(3)],
                    probs: vec![rat(1, 20), rat(19, 20)],
                },
            ]],
            valuations: vec![Valuation::ConstrainedAdditive {
                feasibility: Feasibility::Additive,
            }],
        };
        let eps = rat(1, 10);
        let poly = build_approx_polytope(
            &inst,
            0,
            &eps,
            &rat(1, 2),
            PolyMode::ExactDistribution,
            GENERATOR_CAP,
        )
        .unwrap();
        // Box caps: min(eps, width) = [1/10, 1/10, 1/20, 1/10]
        assert_eq!(
            poly.box_caps,
            vec![rat(1, 10), rat(1, 10), rat(1, 20), rat(1, 10)]
        );
    }

    #[test]
    fn membership_contains_origin_and_scaled_generators() {
        let inst = ud_two_items();
        let poly = exact_polytope(&inst, 0, GENERATOR_CAP).unwrap();
        let origin = vec![Rat::zero(); poly.dim];
        assert!(matches!(
            membership(&inst, &poly, &origin, 1e-8, ArithMode::Rational).unwrap(),
            Membership::Inside
        ));

        // single piece with coefficient 1 (point mass type), generator {0}
        let mut pt = vec![Rat::zero(); poly.dim];
        pt[0] = Rat::one();
        assert!(matches!(
            membership(&inst, &poly, &pt, 1e-8, ArithMode::Rational).unwrap(),
            Membership::Inside
        ));

        // exceeding a width coordinate is outside with a certificate
        let mut far = vec![Rat::zero(); poly.dim];
        far[0] = rat_i(2);
        match membership(&inst, &poly, &far, 1e-8, ArithMode::Rational).unwrap() {
            Membership::Outside {
                separating,
                poly_max,
                point_value,
            } => {
                assert!(point_value > poly_max);
                assert!(!separating.iter().all(|x| x.is_zero()));
            }
            Membership::Inside => panic!("point beyond width reported inside"),
        }
    }

    #[test]
    fn down_monotone_membership_unit_demand() {
        let inst = ud_two_items();
        let poly = exact_polytope(&inst, 0, GENERATOR_CAP).unwrap();
        // (0.3, 0.6) needs total sub-convex weight 0.9 <= 1: inside
        let pt = vec![rat(3, 10), rat(3, 5)];
        assert!(matches!(
            membership(&inst, &poly, &pt, 1e-8, ArithMode::Rational).unwrap(),
            Membership::Inside
        ));
        // (0.6, 0.6) needs weight 1.2 > 1: outside
        let pt = vec![rat(3, 5), rat(3, 5)];
        assert!(matches!(
            membership(&inst, &poly, &pt, 1e-8, ArithMode::Rational).unwrap(),
            Membership::Outside { .. }
        ));
    }
}
