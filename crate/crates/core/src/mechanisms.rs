//! Sequential simple mechanisms: rationed posted prices (RPP), two-part
//! tariffs (TPT), and the general sequential-posted-price-with-entry-fee
//! family (SPEM). Simulation is exact over rationals; expected revenue comes
//! either from exact enumeration (with memoized availability states) or from
//! seeded Monte Carlo with counter-based substreams.
//!
//! Tie conventions: a bidder facing an exact tie buys/accepts; item ties go
//! to the lowest index; bundle ties follow the demand oracle.

use std::collections::BTreeMap;

use num_traits::{Signed, Zero};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::model::{mask_to_set, Instance, TypeProfile};
use crate::num::{rat_f64, rat_from_f64, Rat};
use crate::oracles::demand_oracle_restricted;
use crate::sampling::sample_index;
use crate::Error;

/// Per-(bidder, item) posted prices; `None` marks an item never offered to
/// that bidder (the infinite-price sentinel).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RppSpec {
    pub prices: Vec<Vec<Option<Rat>>>,
    pub order: Vec<usize>,
}

impl RppSpec {
    pub fn lexicographic(prices: Vec<Vec<Option<Rat>>>) -> RppSpec {
        let n = prices.len();
        RppSpec {
            prices,
            order: (0..n).collect(),
        }
    }
}

/// Uniform item prices plus the sampled-type entry-fee rule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TptSpec {
    pub item_prices: Vec<Rat>,
    pub order: Vec<usize>,
}

impl TptSpec {
    pub fn lexicographic(n: usize, item_prices: Vec<Rat>) -> TptSpec {
        TptSpec {
            item_prices,
            order: (0..n).collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub enum FeeRule {
    /// Explicit fees per (bidder, available-set mask); `None` is prohibitive.
    Table(BTreeMap<(usize, u32), Option<Rat>>),
    /// The two-part-tariff rule: fee equals a freshly sampled type's surplus
    /// over the available set at the spec's prices.
    SampledType,
}

/// Sequential posted prices with entry fees; TPT is the special case of
/// uniform prices with the sampled-type rule.
#[derive(Debug, Clone)]
pub struct SpemSpec {
    pub prices: Vec<Vec<Option<Rat>>>,
    pub fees: FeeRule,
    pub order: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outcome {
    /// Bundle masks per bidder; pairwise disjoint.
    pub bundles: Vec<u32>,
    pub payments: Vec<Rat>,
    pub revenue: Rat,
    /// Union of all bundles.
    pub sold: u32,
}

impl Outcome {
    pub fn bundle_sets(&self) -> Vec<Vec<usize>> {
        self.bundles.iter().map(|&b| mask_to_set(b)).collect()
    }
}

fn full_mask(m: usize) -> u32 {
    if m >= 32 {
        u32::MAX
    } else {
        (1u32 << m) - 1
    }
}

/// Buyer-side step of RPP: the available item with the highest nonnegative
/// surplus, lowest index on ties.
fn rpp_choice(
    inst: &Instance,
    i: usize,
    t_i: &[usize],
    prices: &[Option<Rat>],
    avail: u32,
) -> Option<(usize, Rat)> {
    let mut best: Option<(usize, Rat)> = None;
    for j in 0..inst.m {
        if avail & (1 << j) == 0 {
            continue;
        }
        let Some(p) = &prices[j] else { continue };
        let surplus = inst.singleton_value(i, j, t_i[j]) - p;
        if surplus.is_negative() {
            continue;
        }
        if best.as_ref().is_none_or(|(_, bs)| surplus > *bs) {
            best = Some((j, surplus));
        }
    }
    best.map(|(j, _)| (j, prices[j].clone().expect("offered item has a price")))
}

pub fn run_rpp(inst: &Instance, spec: &RppSpec, profile: &TypeProfile) -> Outcome {
    let mut avail = full_mask(inst.m);
    let mut bundles = vec![0u32; inst.n];
    let mut payments = vec![Rat::zero(); inst.n];
    for &i in &spec.order {
        if let Some((j, price)) = rpp_choice(inst, i, &profile.indices[i], &spec.prices[i], avail)
        {
            avail &= !(1 << j);
            bundles[i] = 1 << j;
            payments[i] = price;
        }
    }
    let revenue: Rat = payments.iter().cloned().sum();
    Outcome {
        bundles,
        payments,
        revenue,
        sold: full_mask(inst.m) & !avail,
    }
}

fn price_vec(inst: &Instance, prices: &[Option<Rat>]) -> (Vec<Rat>, u32) {
    let sentinel = inst.unaffordable_price();
    let mut offered = 0u32;
    let v: Vec<Rat> = (0..inst.m)
        .map(|j| match &prices[j] {
            Some(p) => {
                offered |= 1 << j;
                p.clone()
            }
            None => sentinel.clone(),
        })
        .collect();
    (v, offered)
}

/// One bidder step of SPEM/TPT: fee from the sampled type's surplus (or a
/// table), acceptance on surplus >= fee, purchase of the favorite bundle.
/// Returns (bundle, payment).
fn entry_fee_step(
    inst: &Instance,
    i: usize,
    t_i: &[usize],
    entry_sample: Option<&[usize]>,
    prices: &[Rat],
    offered: u32,
    avail: u32,
    table_fee: Option<&Option<Rat>>,
) -> (u32, Rat) {
    let live = avail & offered;
    let fee: Rat = match table_fee {
        Some(None) => return (0, Rat::zero()), // prohibitive fee
        Some(Some(f)) => f.clone(),
        None => {
            let sample = entry_sample.expect("sampled-type rule needs an entry sample");
            demand_oracle_restricted(inst, i, sample, prices, live).utility
        }
    };
    let favorite = demand_oracle_restricted(inst, i, t_i, prices, live);
    if favorite.utility >= fee {
        let mask = crate::model::set_to_mask(&favorite.bundle);
        let item_total: Rat = favorite.bundle.iter().map(|&j| prices[j].clone()).sum();
        (mask, fee + item_total)
    } else {
        (0, Rat::zero())
    }
}

/// Two-part tariff run: per-bidder entry fees from the sampled types, then
/// purchases at the uniform item prices.
pub fn run_tpt(
    inst: &Instance,
    spec: &TptSpec,
    profile: &TypeProfile,
    entry_samples: &[Vec<usize>],
) -> Outcome {
    assert_eq!(
        entry_samples.len(),
        inst.n,
        "one entry-sample type per bidder"
    );
    let offered = full_mask(inst.m);
    let mut avail = offered;
    let mut bundles = vec![0u32; inst.n];
    let mut payments = vec![Rat::zero(); inst.n];
    for &i in &spec.order {
        let (mask, pay) = entry_fee_step(
            inst,
            i,
            &profile.indices[i],
            Some(&entry_samples[i]),
            &spec.item_prices,
            offered,
            avail,
            None,
        );
        bundles[i] = mask;
        payments[i] = pay;
        avail &= !mask;
    }
    let revenue: Rat = payments.iter().cloned().sum();
    Outcome {
        bundles,
        payments,
        revenue,
        sold: offered & !avail,
    }
}

pub fn run_spem(
    inst: &Instance,
    spec: &SpemSpec,
    profile: &TypeProfile,
    entry_samples: Option<&[Vec<usize>]>,
) -> Result<Outcome, Error> {
    let mut avail = full_mask(inst.m);
    let mut bundles = vec![0u32; inst.n];
    let mut payments = vec![Rat::zero(); inst.n];
    for &i in &spec.order {
        let (prices, offered) = price_vec(inst, &spec.prices[i]);
        let table_fee = match &spec.fees {
            FeeRule::Table(t) => Some(t.get(&(i, avail)).ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "fee table does not cover bidder {i} with available set {:?}",
                    mask_to_set(avail)
                ))
            })?),
            FeeRule::SampledType => None,
        };
        let sample = entry_samples.map(|s| s[i].as_slice());
        if matches!(spec.fees, FeeRule::SampledType) && sample.is_none() {
            return Err(Error::InvalidArgument(
                "sampled-type fee rule needs entry samples".into(),
            ));
        }
        let (mask, pay) = entry_fee_step(
            inst,
            i,
            &profile.indices[i],
            sample,
            &prices,
            offered,
            avail,
            table_fee,
        );
        bundles[i] = mask;
        payments[i] = pay;
        avail &= !mask;
    }
    let revenue: Rat = payments.iter().cloned().sum();
    Ok(Outcome {
        bundles,
        payments,
        revenue,
        sold: full_mask(inst.m) & !avail,
    })
}

// ---------------------------------------------------------------------------
// Expected revenue
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub enum MechanismSpec {
    Rpp(RppSpec),
    Tpt(TptSpec),
    Spem(SpemSpec),
}

#[derive(Debug, Clone, Copy)]
pub enum RevMethod {
    Exact { cap: u128 },
    MonteCarlo { samples: usize, seed: u64 },
}

#[derive(Debug, Clone)]
pub struct RevenueEstimate {
    pub value: Rat,
    /// Standard error of the Monte Carlo mean; absent for exact evaluation.
    pub stderr: Option<f64>,
}

/// Exact expectation by backward recursion over (arrival position, available
/// set), integrating per-bidder types and entry samples at each step. This
/// equals full profile enumeration by independence across bidders.
fn exact_revenue(inst: &Instance, spec: &MechanismSpec) -> Result<Rat, Error> {
    let order = match spec {
        MechanismSpec::Rpp(s) => &s.order,
        MechanismSpec::Tpt(s) => &s.order,
        MechanismSpec::Spem(s) => &s.order,
    };
    let mut memo: BTreeMap<(usize, u32), Rat> = BTreeMap::new();
    let types: Vec<Vec<Vec<usize>>> = (0..inst.n).map(|i| inst.bidder_types(i)).collect();
    let type_probs: Vec<Vec<Rat>> = (0..inst.n)
        .map(|i| {
            types[i]
                .iter()
                .map(|t| inst.bidder_type_prob(i, t))
                .collect()
        })
        .collect();

    fn go(
        inst: &Instance,
        spec: &MechanismSpec,
        order: &[usize],
        types: &[Vec<Vec<usize>>],
        type_probs: &[Vec<Rat>],
        pos: usize,
        avail: u32,
        memo: &mut BTreeMap<(usize, u32), Rat>,
    ) -> Result<Rat, Error> {
        if pos == order.len() {
            return Ok(Rat::zero());
        }
        if let Some(v) = memo.get(&(pos, avail)) {
            return Ok(v.clone());
        }
        let i = order[pos];
        let mut acc = Rat::zero();
        match spec {
            MechanismSpec::Rpp(s) => {
                for (t_i, p_t) in types[i].iter().zip(&type_probs[i]) {
                    let (pay, next_avail) =
                        match rpp_choice(inst, i, t_i, &s.prices[i], avail) {
                            Some((j, price)) => (price, avail & !(1 << j)),
                            None => (Rat::zero(), avail),
                        };
                    let rest = go(
                        inst, spec, order, types, type_probs, pos + 1, next_avail, memo,
                    )?;
                    acc += p_t * (pay + rest);
                }
            }
            MechanismSpec::Tpt(s) => {
                let offered = full_mask(inst.m);
                for (sample, p_s) in types[i].iter().zip(&type_probs[i]) {
                    for (t_i, p_t) in types[i].iter().zip(&type_probs[i]) {
                        let (mask, pay) = entry_fee_step(
                            inst,
                            i,
                            t_i,
                            Some(sample),
                            &s.item_prices,
                            offered,
                            avail,
                            None,
                        );
                        let rest = go(
                            inst,
                            spec,
                            order,
                            types,
                            type_probs,
                            pos + 1,
                            avail & !mask,
                            memo,
                        )?;
                        acc += p_s * p_t * (pay + rest);
                    }
                }
            }
            MechanismSpec::Spem(s) => {
                let (prices, offered) = price_vec(inst, &s.prices[i]);
                match &s.fees {
                    FeeRule::Table(t) => {
                        let fee = t.get(&(i, avail)).ok_or_else(|| {
                            Error::InvalidArgument(format!(
                                "fee table does not cover bidder {i} with available set {:?}",
                                mask_to_set(avail)
                            ))
                        })?;
                        for (t_i, p_t) in types[i].iter().zip(&type_probs[i]) {
                            let (mask, pay) = entry_fee_step(
                                inst,
                                i,
                                t_i,
                                None,
                                &prices,
                                offered,
                                avail,
                                Some(fee),
                            );
                            let rest = go(
                                inst,
                                spec,
                                order,
                                types,
                                type_probs,
                                pos + 1,
                                avail & !mask,
                                memo,
                            )?;
                            acc += p_t * (pay + rest);
                        }
                    }
                    FeeRule::SampledType => {
                        for (sample, p_s) in types[i].iter().zip(&type_probs[i]) {
                            for (t_i, p_t) in types[i].iter().zip(&type_probs[i]) {
                                let (mask, pay) = entry_fee_step(
                                    inst,
                                    i,
                                    t_i,
                                    Some(sample),
                                    &prices,
                                    offered,
                                    avail,
                                    None,
                                );
                                let rest = go(
                                    inst,
                                    spec,
                                    order,
                                    types,
                                    type_probs,
                                    pos + 1,
                                    avail & !mask,
                                    memo,
                                )?;
                                acc += p_s * p_t * (pay + rest);
                            }
                        }
                    }
                }
            }
        }
        memo.insert((pos, avail), acc.clone());
        Ok(acc)
    }

    go(
        inst,
        spec,
        order,
        &types,
        &type_probs,
        0,
        full_mask(inst.m),
        &mut memo,
    )
}

fn draw_profile(inst: &Instance, rng: &mut ChaCha8Rng) -> TypeProfile {
    let indices = (0..inst.n)
        .map(|i| {
            (0..inst.m)
                .map(|j| sample_index(&inst.marginals[i][j].probs, rng))
                .collect()
        })
        .collect();
    TypeProfile { indices }
}

fn run_spec(
    inst: &Instance,
    spec: &MechanismSpec,
    profile: &TypeProfile,
    rng: &mut ChaCha8Rng,
) -> Result<Rat, Error> {
    match spec {
        MechanismSpec::Rpp(s) => Ok(run_rpp(inst, s, profile).revenue),
        MechanismSpec::Tpt(s) => {
            let samples: Vec<Vec<usize>> = (0..inst.n)
                .map(|i| {
                    (0..inst.m)
                        .map(|j| sample_index(&inst.marginals[i][j].probs, rng))
                        .collect()
                })
                .collect();
            Ok(run_tpt(inst, s, profile, &samples).revenue)
        }
        MechanismSpec::Spem(s) => {
            let samples: Vec<Vec<usize>> = (0..inst.n)
                .map(|i| {
                    (0..inst.m)
                        .map(|j| sample_index(&inst.marginals[i][j].probs, rng))
                        .collect()
                })
                .collect();
            run_spem(inst, s, profile, Some(&samples)).map(|o| o.revenue)
        }
    }
}

const MC_STREAMS: u64 = 64;

pub fn expected_revenue(
    inst: &Instance,
    spec: &MechanismSpec,
    method: RevMethod,
) -> Result<RevenueEstimate, Error> {
    match method {
        RevMethod::Exact { cap } => {
            let mut size = inst.profile_count();
            if matches!(spec, MechanismSpec::Tpt(_))
                || matches!(
                    spec,
                    MechanismSpec::Spem(SpemSpec {
                        fees: FeeRule::SampledType,
                        ..
                    })
                )
            {
                size = size.saturating_mul(inst.profile_count());
            }
            if size > cap {
                return Err(Error::CapExceeded {
                    what: "exact revenue enumeration".into(),
                    size,
                    cap,
                });
            }
            Ok(RevenueEstimate {
                value: exact_revenue(inst, spec)?,
                stderr: None,
            })
        }
        RevMethod::MonteCarlo { samples, seed } => {
            // Counter-based substreams with a fixed summation shape make the
            // estimate independent of worker scheduling.
            let chunk_sizes: Vec<usize> = (0..MC_STREAMS as usize)
                .map(|c| {
                    samples / MC_STREAMS as usize
                        + usize::from(c < samples % MC_STREAMS as usize)
                })
                .collect();
            let partials: Vec<Result<(f64, f64), Error>> = (0..MC_STREAMS as usize)
                .into_par_iter()
                .map(|c| {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(c as u64 + 1);
                    let mut sum = 0.0f64;
                    let mut sumsq = 0.0f64;
                    for _ in 0..chunk_sizes[c] {
                        let profile = draw_profile(inst, &mut rng);
                        let rev = rat_f64(&run_spec(inst, spec, &profile, &mut rng)?);
                        sum += rev;
                        sumsq += rev * rev;
                    }
                    Ok((sum, sumsq))
                })
                .collect();
            let mut sum = 0.0;
            let mut sumsq = 0.0;
            for p in partials {
                let (s, q) = p?;
                sum += s;
                sumsq += q;
            }
            let nf = samples as f64;
            let mean = sum / nf;
            let var = ((sumsq - nf * mean * mean) / (nf - 1.0)).max(0.0);
            Ok(RevenueEstimate {
                value: rat_from_f64(mean),
                stderr: Some((var / nf).sqrt()),
            })
        }
    }
}

// ---------------------------------------------------------------------------
// RPP search
// ---------------------------------------------------------------------------

pub const RPP_EXHAUSTIVE_CAP: u128 = 2_000_000;

/// Best rationed posted-price mechanism. Below the cap the search is
/// exhaustive over per-(bidder, item) candidate prices (support values plus
/// the not-offered sentinel, which dominate all other prices at desk scale);
/// above it, coordinate ascent from per-item monopoly prices.
pub fn optimize_rpp(inst: &Instance) -> Result<(RppSpec, Rat), Error> {
    let mut candidates: Vec<Vec<Vec<Option<Rat>>>> = Vec::new();
    for i in 0..inst.n {
        let mut row = Vec::new();
        for j in 0..inst.m {
            let mut c: Vec<Option<Rat>> = (0..inst.support_len(i, j))
                .map(|v| Some(inst.singleton_value(i, j, v)))
                .collect();
            c.sort();
            c.dedup();
            c.push(None);
            row.push(c);
        }
        candidates.push(row);
    }
    let combos: u128 = candidates
        .iter()
        .flatten()
        .fold(1u128, |acc, c| acc.saturating_mul(c.len() as u128));
    let search_size = combos.saturating_mul(inst.profile_count());

    if search_size <= RPP_EXHAUSTIVE_CAP {
        exhaustive_rpp(inst, &candidates)
    } else {
        ascent_rpp(inst, &candidates)
    }
}

fn spec_from_choice(
    inst: &Instance,
    candidates: &[Vec<Vec<Option<Rat>>>],
    choice: &[usize],
) -> RppSpec {
    let mut prices = vec![vec![None; inst.m]; inst.n];
    for i in 0..inst.n {
        for j in 0..inst.m {
            prices[i][j] = candidates[i][j][choice[i * inst.m + j]].clone();
        }
    }
    RppSpec::lexicographic(prices)
}

fn exhaustive_rpp(
    inst: &Instance,
    candidates: &[Vec<Vec<Option<Rat>>>],
) -> Result<(RppSpec, Rat), Error> {
    let dims: Vec<usize> = (0..inst.n)
        .flat_map(|i| (0..inst.m).map(move |j| candidates[i][j].len()))
        .collect();
    let mut choice = vec![0usize; dims.len()];
    let mut best: Option<(RppSpec, Rat)> = None;
    loop {
        let spec = spec_from_choice(inst, candidates, &choice);
        let rev = exact_revenue(inst, &MechanismSpec::Rpp(spec.clone()))?;
        if best.as_ref().is_none_or(|(_, b)| rev > *b) {
            best = Some((spec, rev));
        }
        let mut pos = dims.len();
        loop {
            if pos == 0 {
                return Ok(best.expect("at least one price combination"));
            }
            pos -= 1;
            choice[pos] += 1;
            if choice[pos] < dims[pos] {
                break;
            }
            choice[pos] = 0;
        }
    }
}

/// Coordinate ascent from per-item monopoly prices, exact revenue per step.
fn ascent_rpp(
    inst: &Instance,
    candidates: &[Vec<Vec<Option<Rat>>>],
) -> Result<(RppSpec, Rat), Error> {
    // Start: per (i, j), the support value maximizing p * Pr[V_ij >= p].
    let mut choice: Vec<usize> = Vec::new();
    for i in 0..inst.n {
        for j in 0..inst.m {
            let cands = &candidates[i][j];
            let mut best_idx = 0usize;
            let mut best_rev = Rat::zero();
            for (idx, c) in cands.iter().enumerate() {
                let Some(p) = c else { continue };
                let rev = p * inst.singleton_tail(i, j, p, false);
                if rev > best_rev {
                    best_rev = rev;
                    best_idx = idx;
                }
            }
            choice.push(best_idx);
        }
    }
    let mut best_spec = spec_from_choice(inst, candidates, &choice);
    let mut best_rev = exact_revenue(inst, &MechanismSpec::Rpp(best_spec.clone()))?;
    let dims: Vec<usize> = (0..inst.n)
        .flat_map(|i| (0..inst.m).map(move |j| candidates[i][j].len()))
        .collect();
    for _ in 0..4 {
        let mut improved = false;
        for pos in 0..dims.len() {
            let original = choice[pos];
            for alt in 0..dims[pos] {
                if alt == original {
                    continue;
                }
                choice[pos] = alt;
                let spec = spec_from_choice(inst, candidates, &choice);
                let rev = exact_revenue(inst, &MechanismSpec::Rpp(spec.clone()))?;
                if rev > best_rev {
                    best_rev = rev;
                    best_spec = spec;
                    improved = true;
                } else {
                    choice[pos] = original;
                }
            }
            if choice[pos] != original {
                // keep the improving move
                continue;
            }
            choice[pos] = original;
        }
        if !improved {
            break;
        }
    }
    Ok((best_spec, best_rev))
}

// ---------------------------------------------------------------------------
// Rationality audit
// ---------------------------------------------------------------------------

/// Replays an RPP run and verifies every prescribed action maximizes the
/// bidder's realized utility among all available actions.
pub fn audit_rpp_rationality(
    inst: &Instance,
    spec: &RppSpec,
    profile: &TypeProfile,
) -> Result<(), String> {
    let mut avail = full_mask(inst.m);
    for &i in &spec.order {
        let t_i = &profile.indices[i];
        let chosen = rpp_choice(inst, i, t_i, &spec.prices[i], avail);
        let chosen_utility = chosen
            .as_ref()
            .map(|(j, p)| inst.singleton_value(i, *j, t_i[*j]) - p)
            .unwrap_or_else(Rat::zero);
        let mut best = Rat::zero(); // skipping is always available
        for j in 0..inst.m {
            if avail & (1 << j) == 0 {
                continue;
            }
            if let Some(p) = &spec.prices[i][j] {
                let u = inst.singleton_value(i, j, t_i[j]) - p;
                if u > best {
                    best = u;
                }
            }
        }
        if chosen_utility != best {
            return Err(format!(
                "bidder {i}: prescribed utility {} but best available {}",
                rat_f64(&chosen_utility),
                rat_f64(&best)
            ));
        }
        if let Some((j, _)) = chosen {
            avail &= !(1 << j);
        }
    }
    Ok(())
}

/// Replays a TPT run and verifies each accept/reject and bundle choice is
/// utility-maximizing, enumerating all bundles of the available set.
pub fn audit_tpt_rationality(
    inst: &Instance,
    spec: &TptSpec,
    profile: &TypeProfile,
    entry_samples: &[Vec<usize>],
) -> Result<(), String> {
    let offered = full_mask(inst.m);
    let mut avail = offered;
    for &i in &spec.order {
        let t_i = &profile.indices[i];
        let fee =
            demand_oracle_restricted(inst, i, &entry_samples[i], &spec.item_prices, avail)
                .utility;
        let favorite = demand_oracle_restricted(inst, i, t_i, &spec.item_prices, avail);
        let accepted = favorite.utility >= fee;
        let prescribed_utility = if accepted {
            &favorite.utility - &fee
        } else {
            Rat::zero()
        };
        // Best alternative: reject (0) or accept with any sub-bundle.
        let mut best = Rat::zero();
        let mut sub = avail;
        loop {
            let v = crate::oracles::value_oracle(inst, i, t_i, sub);
            let price: Rat = (0..inst.m)
                .filter(|j| sub & (1 << j) != 0)
                .map(|j| spec.item_prices[j].clone())
                .sum();
            let u = v - price - &fee;
            if u > best {
                best = u;
            }
            if sub == 0 {
                break;
            }
            sub = (sub - 1) & avail;
        }
        if prescribed_utility != best {
            return Err(format!(
                "bidder {i}: prescribed utility {} but best action {}",
                rat_f64(&prescribed_utility),
                rat_f64(&best)
            ));
        }
        if accepted {
            avail &= !crate::model::set_to_mask(&favorite.bundle);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DiscreteMarginal, Feasibility, Valuation};
    use crate::num::{rat, rat_i};

    fn profile(indices: Vec<Vec<usize>>) -> TypeProfile {
        TypeProfile { indices }
    }

    fn one_item(n: usize, values: Vec<Rat>, probs: Vec<Rat>) -> Instance {
        Instance {
            n,
            m: 1,
            marginals: vec![
                vec![DiscreteMarginal {
                    support: values,
                    probs
                }];
                n
            ],
            valuations: vec![
                Valuation::ConstrainedAdditive {
                    feasibility: Feasibility::Additive,
                };
                n
            ],
        }
    }

    #[test]
    fn rpp_examples() {
        // two bidders, one item, prices 0.6 / 0.3, both values 1
        let inst = one_item(2, vec![rat_i(1)], vec![rat_i(1)]);
        let spec = RppSpec::lexicographic(vec![
            vec![Some(rat(3, 5))],
            vec![Some(rat(3, 10))],
        ]);
        let out = run_rpp(&inst, &spec, &profile(vec![vec![0], vec![0]]));
        assert_eq!(out.revenue, rat(3, 5));
        assert_eq!(out.bundles, vec![1, 0]);

        // all prices above values
        let spec = RppSpec::lexicographic(vec![vec![Some(rat_i(2))], vec![Some(rat_i(2))]]);
        let out = run_rpp(&inst, &spec, &profile(vec![vec![0], vec![0]]));
        assert!(out.revenue.is_zero());
        assert_eq!(out.sold, 0);

        // one bidder, two items, values (3,1), prices (1, 0.1): buys item 0
        let inst = Instance {
            n: 1,
            m: 2,
            marginals: vec![vec![
                DiscreteMarginal::point_mass(rat_i(3)),
                DiscreteMarginal::point_mass(rat_i(1)),
            ]],
            valuations: vec![Valuation::ConstrainedAdditive {
                feasibility: Feasibility::Additive,
            }],
        };
        let spec = RppSpec::lexicographic(vec![vec![Some(rat_i(1)), Some(rat(1, 10))]]);
        let out = run_rpp(&inst, &spec, &profile(vec![vec![0, 0]]));
        assert_eq!(out.bundles, vec![0b01]);
        assert_eq!(out.revenue, rat_i(1));
    }

    #[test]
    fn tpt_examples() {
        let inst = one_item(1, vec![rat_i(1)], vec![rat_i(1)]);
        let spec = TptSpec::lexicographic(1, vec![rat(1, 2)]);
        // sampled value 1, true value 1: fee 0.5, accepts, pays 1.0
        let out = run_tpt(&inst, &spec, &profile(vec![vec![0]]), &[vec![0]]);
        assert_eq!(out.revenue, rat_i(1));

        // true value 0.4 (< Q): fee 0.5, surplus 0, rejects
        let inst2 = one_item(1, vec![rat(2, 5), rat_i(1)], vec![rat(1, 2), rat(1, 2)]);
        let out = run_tpt(&inst2, &spec, &profile(vec![vec![0]]), &[vec![1]]);
        assert!(out.revenue.is_zero());

        // sampled type with zero surplus: fee 0, accepts, pays item prices
        let out = run_tpt(&inst2, &spec, &profile(vec![vec![1]]), &[vec![0]]);
        assert_eq!(out.revenue, rat(1, 2));
        assert_eq!(out.bundles, vec![1]);
    }

    #[test]
    fn spem_reduces_to_demand_with_zero_fees() {
        let inst = one_item(1, vec![rat_i(1)], vec![rat_i(1)]);
        let mut fees = BTreeMap::new();
        fees.insert((0usize, 0b1u32), Some(Rat::zero()));
        let spec = SpemSpec {
            prices: vec![vec![Some(rat(1, 2))]],
            fees: FeeRule::Table(fees),
            order: vec![0],
        };
        let out = run_spem(&inst, &spec, &profile(vec![vec![0]]), None).unwrap();
        assert_eq!(out.revenue, rat(1, 2));

        // prohibitive fee: revenue zero
        let mut fees = BTreeMap::new();
        fees.insert((0usize, 0b1u32), None);
        let spec = SpemSpec {
            prices: vec![vec![Some(rat(1, 2))]],
            fees: FeeRule::Table(fees),
            order: vec![0],
        };
        let out = run_spem(&inst, &spec, &profile(vec![vec![0]]), None).unwrap();
        assert!(out.revenue.is_zero());

        // uncovered available set errors out
        let spec = SpemSpec {
            prices: vec![vec![Some(rat(1, 2))]],
            fees: FeeRule::Table(BTreeMap::new()),
            order: vec![0],
        };
        assert!(run_spem(&inst, &spec, &profile(vec![vec![0]]), None).is_err());
    }

    #[test]
    fn spem_embeds_tpt() {
        let inst = one_item(2, vec![rat_i(1), rat_i(2)], vec![rat(1, 2), rat(1, 2)]);
        let tpt = TptSpec::lexicographic(2, vec![rat(3, 2)]);
        let spem = SpemSpec {
            prices: vec![vec![Some(rat(3, 2))]; 2],
            fees: FeeRule::SampledType,
            order: vec![0, 1],
        };
        for t0 in 0..2 {
            for t1 in 0..2 {
                for s0 in 0..2 {
                    for s1 in 0..2 {
                        let p = profile(vec![vec![t0], vec![t1]]);
                        let samples = vec![vec![s0], vec![s1]];
                        let a = run_tpt(&inst, &tpt, &p, &samples);
                        let b = run_spem(&inst, &spem, &p, Some(&samples)).unwrap();
                        assert_eq!(a, b);
                    }
                }
            }
        }
    }

    #[test]
    fn exact_revenue_examples() {
        // deterministic single-type instance: exact equals the one outcome
        let inst = one_item(1, vec![rat_i(1)], vec![rat_i(1)]);
        let spec = MechanismSpec::Rpp(RppSpec::lexicographic(vec![vec![Some(rat_i(1))]]));
        let est = expected_revenue(&inst, &spec, RevMethod::Exact { cap: 1 << 20 }).unwrap();
        assert_eq!(est.value, rat_i(1));
        assert!(est.stderr.is_none());

        // RPP, uniform {1,2}, price 1: both types buy (tie-buying)
        let inst = one_item(1, vec![rat_i(1), rat_i(2)], vec![rat(1, 2), rat(1, 2)]);
        let spec = MechanismSpec::Rpp(RppSpec::lexicographic(vec![vec![Some(rat_i(1))]]));
        let est = expected_revenue(&inst, &spec, RevMethod::Exact { cap: 1 << 20 }).unwrap();
        assert_eq!(est.value, rat_i(1));
    }

    #[test]
    fn optimize_rpp_examples() {
        let inst = one_item(1, vec![rat_i(1), rat_i(2)], vec![rat(1, 2), rat(1, 2)]);
        let (_, prev) = optimize_rpp(&inst).unwrap();
        assert_eq!(prev, rat_i(1));

        let inst =
            one_item(1, vec![rat_i(1), rat_i(2), rat_i(3)], vec![rat(1, 3); 3]);
        let (spec, prev) = optimize_rpp(&inst).unwrap();
        assert_eq!(prev, rat(4, 3));
        assert_eq!(spec.prices[0][0], Some(rat_i(2)));

        let inst = one_item(1, vec![rat(7, 2)], vec![rat_i(1)]);
        let (spec, prev) = optimize_rpp(&inst).unwrap();
        assert_eq!(prev, rat(7, 2));
        assert_eq!(spec.prices[0][0], Some(rat(7, 2)));
    }

    #[test]
    fn mc_close_to_exact() {
        let inst = one_item(2, vec![rat_i(1), rat_i(2)], vec![rat(1, 2), rat(1, 2)]);
        let spec = MechanismSpec::Tpt(TptSpec::lexicographic(2, vec![rat_i(1)]));
        let exact = expected_revenue(&inst, &spec, RevMethod::Exact { cap: 1 << 20 })
            .unwrap()
            .value;
        let mc = expected_revenue(
            &inst,
            &spec,
            RevMethod::MonteCarlo {
                samples: 20_000,
                seed: 5,
            },
        )
        .unwrap();
        let err = (rat_f64(&mc.value) - rat_f64(&exact)).abs();
        assert!(err <= 4.0 * mc.stderr.unwrap() + 1e-9, "err {err}");
    }

    #[test]
    fn mc_is_deterministic_given_seed() {
        let inst = one_item(2, vec![rat_i(1), rat_i(3)], vec![rat(1, 2), rat(1, 2)]);
        let spec = MechanismSpec::Rpp(RppSpec::lexicographic(vec![
            vec![Some(rat_i(1))],
            vec![Some(rat_i(3))],
        ]));
        let m = RevMethod::MonteCarlo {
            samples: 5000,
            seed: 42,
        };
        let a = expected_revenue(&inst, &spec, m).unwrap();
        let b = expected_revenue(&inst, &spec, m).unwrap();
        assert_eq!(a.value, b.value);
    }

    #[test]
    fn outcome_invariants_hold_on_random_runs() {
        let inst = Instance {
            n: 2,
            m: 2,
            marginals: vec![
                vec![
                    DiscreteMarginal::uniform(vec![rat_i(1), rat_i(2)]),
                    DiscreteMarginal::uniform(vec![rat_i(1), rat_i(3)]),
                ];
                2
            ],
            valuations: vec![
                Valuation::ConstrainedAdditive {
                    feasibility: Feasibility::UnitDemand,
                },
                Valuation::ConstrainedAdditive {
                    feasibility: Feasibility::Additive,
                },
            ],
        };
        let tpt = TptSpec::lexicographic(2, vec![rat_i(1), rat(3, 2)]);
        let profiles = crate::model::enumerate_type_profiles(&inst, 1 << 20).unwrap();
        for (p, _) in &profiles {
            for (s, _) in &profiles {
                let out = run_tpt(&inst, &tpt, p, &s.indices);
                assert_eq!(out.bundles[0] & out.bundles[1], 0);
                assert!(out.payments.iter().all(|x| !x.is_negative()));
                let total: Rat = out.payments.iter().cloned().sum();
                assert_eq!(total, out.revenue);
                audit_tpt_rationality(&inst, &tpt, p, &s.indices).unwrap();
            }
        }
    }
}
