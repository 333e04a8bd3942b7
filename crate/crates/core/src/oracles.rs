//! Value, demand, adjustable-demand and XOS oracles over explicit valuations,
//! plus the hard XOS family used to stress-test them.
//!
//! All oracles are pure functions of immutable data. Ties are resolved
//! deterministically: bundles by smallest cardinality, then lexicographically
//! smallest sorted index sequence; function indices by smallest index.
//! Zero-marginal items are excluded from returned bundles.

use num_traits::{One, Signed, Zero};

use crate::model::{mask_to_set, Feasibility, Instance, Valuation, XosTable};
use crate::num::{rat, rat_i, Rat};
use crate::Error;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DemandAnswer {
    /// Sorted item indices.
    pub bundle: Vec<usize>,
    pub utility: Rat,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdjustableDemandAnswer {
    pub bundle: Vec<usize>,
    /// Index of the additive function achieving the optimum.
    pub winner_index: usize,
    pub adjusted_objective: Rat,
}

/// Orders bundles by (cardinality, lexicographic sorted index sequence).
/// Returns true when `a` precedes `b`.
pub fn bundle_precedes(a: u32, b: u32) -> bool {
    if a == b {
        return false;
    }
    let (ca, cb) = (a.count_ones(), b.count_ones());
    if ca != cb {
        return ca < cb;
    }
    let diff = a ^ b;
    let low = diff.trailing_zeros();
    // Equal cardinality: at the lowest differing index, the set containing it
    // has the smaller element there.
    a & (1 << low) != 0
}

/// v_i(t_i, S): best feasible sub-bundle for constrained-additive bidders,
/// best additive function for XOS.
pub fn value_oracle(inst: &Instance, i: usize, t_i: &[usize], bundle: u32) -> Rat {
    match &inst.valuations[i] {
        Valuation::ConstrainedAdditive { feasibility } => {
            ca_value(inst, i, t_i, bundle, feasibility)
        }
        Valuation::Xos { xos } => (0..xos.function_count)
            .map(|k| xos_bundle_sum(xos, t_i, bundle, k))
            .max()
            .unwrap_or_else(Rat::zero),
    }
}

fn ca_value(
    inst: &Instance,
    i: usize,
    t_i: &[usize],
    bundle: u32,
    feas: &Feasibility,
) -> Rat {
    let vals: Vec<Rat> = (0..inst.m)
        .map(|j| inst.support_value(i, j, t_i[j]).clone())
        .collect();
    match feas {
        // Values are nonnegative, so additive takes everything.
        Feasibility::Additive => (0..inst.m)
            .filter(|j| bundle & (1 << j) != 0)
            .map(|j| vals[j].clone())
            .sum(),
        Feasibility::UnitDemand => (0..inst.m)
            .filter(|j| bundle & (1 << j) != 0)
            .map(|j| vals[j].clone())
            .max()
            .unwrap_or_else(Rat::zero),
        Feasibility::CardinalityCap { k } => {
            let mut in_bundle: Vec<Rat> = (0..inst.m)
                .filter(|j| bundle & (1 << j) != 0)
                .map(|j| vals[j].clone())
                .collect();
            in_bundle.sort_by(|a, b| b.cmp(a));
            in_bundle.into_iter().take(*k).sum()
        }
        Feasibility::ExplicitFamily { sets } => sets
            .iter()
            .map(|s| crate::model::set_to_mask(s))
            .filter(|&s| s & !bundle == 0)
            .map(|s| {
                (0..inst.m)
                    .filter(|j| s & (1 << j) != 0)
                    .map(|j| vals[j].clone())
                    .sum::<Rat>()
            })
            .max()
            .unwrap_or_else(Rat::zero),
    }
}

fn xos_bundle_sum(xos: &XosTable, t_i: &[usize], bundle: u32, k: usize) -> Rat {
    let mut acc = Rat::zero();
    for (j, &v_idx) in t_i.iter().enumerate() {
        if bundle & (1 << j) != 0 {
            acc += &xos.alpha[j][v_idx][k];
        }
    }
    acc
}

/// Utility-maximizing bundle at nonnegative `prices`, over all subsets of the
/// items in `avail`.
pub fn demand_oracle_restricted(
    inst: &Instance,
    i: usize,
    t_i: &[usize],
    prices: &[Rat],
    avail: u32,
) -> DemandAnswer {
    // Each branch computes the optimal utility alongside the bundle; for the
    // returned bundle it coincides with v(t, bundle) minus its price total.
    let (mask, utility) = match &inst.valuations[i] {
        Valuation::ConstrainedAdditive { feasibility } => {
            ca_demand_mask(inst, i, t_i, prices, avail, feasibility)
        }
        Valuation::Xos { xos } => {
            let mut best_mask = 0u32;
            let mut best = Rat::zero();
            for k in 0..xos.function_count {
                let (s, u) = xos_positive_set(xos, t_i, prices, avail, k);
                if u > best || (u == best && bundle_precedes(s, best_mask)) {
                    best = u;
                    best_mask = s;
                }
            }
            (best_mask, best)
        }
    };
    DemandAnswer {
        bundle: mask_to_set(mask),
        utility,
    }
}

pub fn demand_oracle(inst: &Instance, i: usize, t_i: &[usize], prices: &[Rat]) -> DemandAnswer {
    let full = if inst.m >= 32 {
        u32::MAX
    } else {
        (1u32 << inst.m) - 1
    };
    demand_oracle_restricted(inst, i, t_i, prices, full)
}

fn ca_demand_mask(
    inst: &Instance,
    i: usize,
    t_i: &[usize],
    prices: &[Rat],
    avail: u32,
    feas: &Feasibility,
) -> (u32, Rat) {
    let util = |j: usize| inst.support_value(i, j, t_i[j]) - &prices[j];
    match feas {
        Feasibility::Additive => {
            let mut mask = 0u32;
            let mut total = Rat::zero();
            for j in 0..inst.m {
                if avail & (1 << j) == 0 {
                    continue;
                }
                let u = util(j);
                if u.is_positive() {
                    mask |= 1 << j;
                    total += u;
                }
            }
            (mask, total)
        }
        Feasibility::UnitDemand => {
            let mut best: Option<(Rat, usize)> = None;
            for j in 0..inst.m {
                if avail & (1 << j) == 0 {
                    continue;
                }
                let u = util(j);
                if u.is_positive() && best.as_ref().is_none_or(|(bu, _)| u > *bu) {
                    best = Some((u, j));
                }
            }
            match best {
                Some((u, j)) => (1 << j, u),
                None => (0, Rat::zero()),
            }
        }
        Feasibility::CardinalityCap { k } => {
            let mut positives: Vec<(Rat, usize)> = (0..inst.m)
                .filter(|&j| avail & (1 << j) != 0)
                .map(|j| (util(j), j))
                .filter(|(u, _)| u.is_positive())
                .collect();
            positives.sort_by(|(ua, ja), (ub, jb)| ub.cmp(ua).then(ja.cmp(jb)));
            let mut mask = 0u32;
            let mut total = Rat::zero();
            for (u, j) in positives.into_iter().take(*k) {
                mask |= 1 << j;
                total += u;
            }
            (mask, total)
        }
        Feasibility::ExplicitFamily { sets } => {
            let mut best_mask = 0u32;
            let mut best = Rat::zero();
            for s in sets {
                let mask = crate::model::set_to_mask(s);
                if mask & !avail != 0 {
                    continue;
                }
                let u: Rat = (0..inst.m)
                    .filter(|j| mask & (1 << j) != 0)
                    .map(util)
                    .sum();
                if u > best || (u == best && bundle_precedes(mask, best_mask)) {
                    best = u;
                    best_mask = mask;
                }
            }
            (best_mask, best)
        }
    }
}

/// Per-function positive-marginal set and its total, for XOS demand.
fn xos_positive_set(
    xos: &XosTable,
    t_i: &[usize],
    prices: &[Rat],
    avail: u32,
    k: usize,
) -> (u32, Rat) {
    let mut mask = 0u32;
    let mut total = Rat::zero();
    for (j, &v_idx) in t_i.iter().enumerate() {
        if avail & (1 << j) == 0 {
            continue;
        }
        let alpha = &xos.alpha[j][v_idx][k];
        // zero coefficients never beat nonnegative prices
        if alpha.is_zero() && !prices[j].is_zero() {
            continue;
        }
        let marginal = alpha - &prices[j];
        if marginal.is_positive() {
            mask |= 1 << j;
            total += marginal;
        }
    }
    (mask, total)
}

/// argmax over (S, k) of sum_{j in S} b_j * alpha_j^(k) - p_j, computed per
/// function by including exactly the items with strictly positive adjusted
/// marginal. Only defined for XOS valuations.
pub fn adjustable_demand_oracle(
    inst: &Instance,
    i: usize,
    t_i: &[usize],
    coeffs: &[Rat],
    prices: &[Rat],
) -> Result<AdjustableDemandAnswer, Error> {
    let Valuation::Xos { xos } = &inst.valuations[i] else {
        return Err(Error::InvalidArgument(
            "adjustable demand oracle requires an XOS valuation".into(),
        ));
    };
    let mut best: Option<(Rat, usize, u32)> = None;
    for k in 0..xos.function_count {
        let mut mask = 0u32;
        let mut total = Rat::zero();
        for (j, &v_idx) in t_i.iter().enumerate() {
            let alpha = &xos.alpha[j][v_idx][k];
            if alpha.is_zero() && !prices[j].is_zero() {
                continue;
            }
            let marginal = &coeffs[j] * alpha - &prices[j];
            if marginal.is_positive() {
                mask |= 1 << j;
                total += marginal;
            }
        }
        if best.as_ref().is_none_or(|(bu, _, _)| total > *bu) {
            best = Some((total, k, mask));
        }
    }
    let (objective, winner_index, mask) = best.expect("at least one additive function");
    Ok(AdjustableDemandAnswer {
        bundle: mask_to_set(mask),
        winner_index,
        adjusted_objective: objective,
    })
}

/// Index of the additive function achieving v(t, S); smallest index on ties.
pub fn xos_oracle(inst: &Instance, i: usize, t_i: &[usize], bundle: u32) -> Result<usize, Error> {
    if bundle == 0 {
        return Err(Error::InvalidArgument(
            "xos oracle requires a nonempty set".into(),
        ));
    }
    let Valuation::Xos { xos } = &inst.valuations[i] else {
        return Err(Error::InvalidArgument(
            "xos oracle requires an XOS valuation".into(),
        ));
    };
    let mut best_k = 0usize;
    let mut best = xos_bundle_sum(xos, t_i, bundle, 0);
    for k in 1..xos.function_count {
        let s = xos_bundle_sum(xos, t_i, bundle, k);
        if s > best {
            best = s;
            best_k = k;
        }
    }
    Ok(best_k)
}

// ---------------------------------------------------------------------------
// Hard family for the adjustable demand oracle
// ---------------------------------------------------------------------------

/// A benchmark valuation and a family of lookalikes that agree with it on
/// every XOS and demand query except in one targeted configuration per member.
#[derive(Debug, Clone)]
pub struct CounterexampleFamily {
    pub l: usize,
    pub eps: Rat,
    pub epsp: Rat,
    /// Single-bidder instance with 2l additive functions.
    pub benchmark: Instance,
    /// One single-bidder instance per member, each with 2l + 1 functions.
    pub family: Vec<Instance>,
    /// The bijection from member index to a size-(l/2) subset of the second
    /// item block, as sorted item indices.
    pub c_sets: Vec<Vec<usize>>,
}

impl CounterexampleFamily {
    /// Items 0..l-1.
    pub fn block_one(&self) -> Vec<usize> {
        (0..self.l).collect()
    }

    /// Items l..2l-1.
    pub fn block_two(&self) -> Vec<usize> {
        (self.l..2 * self.l).collect()
    }
}

fn combinations(pool: &[usize], take: usize) -> Vec<Vec<usize>> {
    if take == 0 {
        return vec![vec![]];
    }
    if pool.len() < take {
        return vec![];
    }
    let mut out = Vec::new();
    for (idx, &first) in pool.iter().enumerate() {
        for mut rest in combinations(&pool[idx + 1..], take - 1) {
            let mut c = vec![first];
            c.append(&mut rest);
            out.push(c);
        }
    }
    out
}

fn single_type_xos_instance(m: usize, alpha_per_item: Vec<Vec<Rat>>) -> Instance {
    let function_count = alpha_per_item[0].len();
    Instance {
        n: 1,
        m,
        marginals: vec![vec![
            crate::model::DiscreteMarginal::point_mass(rat_i(1));
            m
        ]],
        valuations: vec![Valuation::Xos {
            xos: XosTable {
                function_count,
                alpha: alpha_per_item.into_iter().map(|a| vec![a]).collect(),
            },
        }],
    }
}

/// Builds the benchmark valuation, the family, and the subset bijection for
/// an even `l >= 4` and parameters with 0 < (l+1) eps' < eps < 1/2.
pub fn counterexample_family(
    l: usize,
    eps: Rat,
    epsp: Rat,
) -> Result<CounterexampleFamily, Error> {
    if l < 4 || l % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "family size parameter must be an even integer >= 4, got {l}"
        )));
    }
    let l_rat = rat_i(l as i64);
    if !(epsp.is_positive()
        && (rat_i(l as i64 + 1) * &epsp) < eps
        && eps < rat(1, 2))
    {
        return Err(Error::InvalidArgument(
            "parameters must satisfy 0 < (l+1)*eps' < eps < 1/2".into(),
        ));
    }
    let m = 2 * l;
    let two_over_l = rat_i(2) / &l_rat;
    let one_minus_inv = Rat::one() - Rat::one() / &l_rat;

    // Benchmark: 2l additive functions.
    let mut base = vec![vec![Rat::zero(); 2 * l]; m];
    for (j, row) in base.iter_mut().enumerate() {
        for (k, cell) in row.iter_mut().enumerate() {
            let item_value = rat_i(j as i64 + 1);
            *cell = if k < l {
                if j == k {
                    item_value + &eps + &one_minus_inv * &epsp
                } else {
                    Rat::zero()
                }
            } else {
                // Functions l..2l: the matching first-block item at face
                // value, every second-block item at (2/l) eps.
                if j == k - l {
                    item_value
                } else if j >= l {
                    &two_over_l * &eps
                } else {
                    Rat::zero()
                }
            };
        }
    }
    let benchmark = single_type_xos_instance(m, base.clone());

    let block_two: Vec<usize> = (l..m).collect();
    let c_sets = combinations(&block_two, l / 2);
    let mut family = Vec::with_capacity(c_sets.len());
    for c in &c_sets {
        let mut alpha = base.clone();
        for (j, row) in alpha.iter_mut().enumerate() {
            let extra = if j < l {
                if j == l - 1 {
                    Rat::one() + &eps
                } else {
                    Rat::one()
                }
            } else if c.contains(&j) {
                &two_over_l * &epsp
            } else {
                Rat::zero()
            };
            row.push(extra);
        }
        family.push(single_type_xos_instance(m, alpha));
    }

    Ok(CounterexampleFamily {
        l,
        eps,
        epsp,
        benchmark,
        family,
        c_sets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{set_to_mask, DiscreteMarginal};

    fn two_item_ca(values: (i64, i64), feas: Feasibility) -> Instance {
        Instance {
            n: 1,
            m: 2,
            marginals: vec![vec![
                DiscreteMarginal::point_mass(rat_i(values.0)),
                DiscreteMarginal::point_mass(rat_i(values.1)),
            ]],
            valuations: vec![Valuation::ConstrainedAdditive { feasibility: feas }],
        }
    }

    fn two_item_xos(alpha: Vec<Vec<Rat>>) -> Instance {
        single_type_xos_instance(2, alpha)
    }

    #[test]
    fn value_oracle_examples() {
        let ud = two_item_ca((3, 1), Feasibility::UnitDemand);
        assert_eq!(value_oracle(&ud, 0, &[0, 0], 0b11), rat_i(3));

        let add = two_item_ca((3, 1), Feasibility::Additive);
        assert_eq!(value_oracle(&add, 0, &[0, 0], 0b11), rat_i(4));

        let xos = two_item_xos(vec![
            vec![rat_i(2), rat_i(0)],
            vec![rat_i(0), rat_i(3)],
        ]);
        assert_eq!(value_oracle(&xos, 0, &[0, 0], 0b11), rat_i(3));
    }

    #[test]
    fn demand_oracle_examples() {
        let ud = two_item_ca((3, 1), Feasibility::UnitDemand);
        let ans = demand_oracle(&ud, 0, &[0, 0], &[rat_i(1), rat(1, 2)]);
        assert_eq!(ans.bundle, vec![0]);
        assert_eq!(ans.utility, rat_i(2));

        let add = two_item_ca((3, 1), Feasibility::Additive);
        let ans = demand_oracle(&add, 0, &[0, 0], &[rat_i(2), rat_i(2)]);
        assert_eq!(ans.bundle, vec![0]);
        assert_eq!(ans.utility, rat_i(1));

        let ans = demand_oracle(&add, 0, &[0, 0], &[rat_i(9), rat_i(9)]);
        assert!(ans.bundle.is_empty());
        assert!(ans.utility.is_zero());
    }

    #[test]
    fn demand_on_one_bidder_two_items_prefers_best_item() {
        let ud = two_item_ca((3, 1), Feasibility::UnitDemand);
        let ans = demand_oracle(&ud, 0, &[0, 0], &[rat_i(1), rat(1, 10)]);
        // surplus 2 on item 0 beats 0.9 on item 1
        assert_eq!(ans.bundle, vec![0]);
        assert_eq!(ans.utility, rat_i(2));
    }

    #[test]
    fn adjustable_demand_examples() {
        let xos1 = two_item_xos(vec![vec![rat_i(2)], vec![rat_i(2)]]);
        let ans = adjustable_demand_oracle(
            &xos1,
            0,
            &[0, 0],
            &[rat_i(1), rat(1, 2)],
            &[rat_i(1), rat(3, 2)],
        )
        .unwrap();
        assert_eq!(ans.bundle, vec![0]);
        assert_eq!(ans.winner_index, 0);
        assert_eq!(ans.adjusted_objective, rat_i(1));

        let xos2 = two_item_xos(vec![
            vec![rat_i(2), rat_i(0)],
            vec![rat_i(0), rat_i(3)],
        ]);
        let ans = adjustable_demand_oracle(
            &xos2,
            0,
            &[0, 0],
            &[rat_i(1), rat(1, 10)],
            &[rat_i(0), rat_i(0)],
        )
        .unwrap();
        assert_eq!(ans.bundle, vec![0]);
        assert_eq!(ans.winner_index, 0);
        assert_eq!(ans.adjusted_objective, rat_i(2));

        // b all ones, p all zero: per function take positive coefficients.
        let ans = adjustable_demand_oracle(
            &xos2,
            0,
            &[0, 0],
            &[rat_i(1), rat_i(1)],
            &[rat_i(0), rat_i(0)],
        )
        .unwrap();
        assert_eq!(ans.winner_index, 1);
        assert_eq!(ans.bundle, vec![1]);
        assert_eq!(ans.adjusted_objective, rat_i(3));
    }

    #[test]
    fn adjustable_demand_rejects_constrained_additive() {
        let add = two_item_ca((1, 1), Feasibility::Additive);
        assert!(adjustable_demand_oracle(
            &add,
            0,
            &[0, 0],
            &[rat_i(1), rat_i(1)],
            &[rat_i(0), rat_i(0)]
        )
        .is_err());
    }

    #[test]
    fn xos_oracle_examples() {
        let xos = two_item_xos(vec![
            vec![rat_i(2), rat_i(0)],
            vec![rat_i(0), rat_i(3)],
        ]);
        assert_eq!(xos_oracle(&xos, 0, &[0, 0], set_to_mask(&[1])).unwrap(), 1);
        assert_eq!(xos_oracle(&xos, 0, &[0, 0], 0b11).unwrap(), 1);
        assert!(xos_oracle(&xos, 0, &[0, 0], 0).is_err());
    }

    #[test]
    fn family_shape_for_l4() {
        let fam = counterexample_family(4, rat(1, 10), rat(1, 100)).unwrap();
        assert_eq!(fam.benchmark.m, 8);
        assert_eq!(fam.family.len(), 6);
        for inst in &fam.family {
            let Valuation::Xos { xos } = &inst.valuations[0] else {
                panic!()
            };
            assert_eq!(xos.function_count, 9);
            // last function has value 1 + eps at item l-1 (= index 3)
            assert_eq!(xos.alpha[3][0][8], rat_i(1) + rat(1, 10));
        }
        assert!(counterexample_family(5, rat(1, 10), rat(1, 100)).is_err());
        assert!(counterexample_family(4, rat(1, 10), rat(1, 10)).is_err());
    }

    #[test]
    fn family_last_function_wins_exactly_on_target_set() {
        let fam = counterexample_family(4, rat(1, 10), rat(1, 100)).unwrap();
        let block_one = set_to_mask(&fam.block_one());
        for (r, inst) in fam.family.iter().enumerate() {
            let target = block_one | set_to_mask(&fam.c_sets[r]);
            for s in 1u32..(1 << 8) {
                let k = xos_oracle(inst, 0, &[0; 8], s).unwrap();
                assert_eq!(k == 8, s == target, "r={r} set={s:b}");
            }
        }
    }

    #[test]
    fn bundle_order_is_cardinality_then_lex() {
        let a = set_to_mask(&[0]);
        let b = set_to_mask(&[0, 1]);
        let c = set_to_mask(&[1]);
        let d = set_to_mask(&[0, 2]);
        assert!(bundle_precedes(a, b));
        assert!(bundle_precedes(a, c));
        assert!(bundle_precedes(c, b));
        assert!(bundle_precedes(b, d));
        assert!(!bundle_precedes(d, b));
        assert!(bundle_precedes(0, a));
    }
}
