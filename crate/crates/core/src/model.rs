//! Auction instances: discrete marginals, valuation structures, type profiles.
//!
//! Everything here is immutable after construction and safe to share across
//! worker threads.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::num::{parse_rat, rat_str, Rat};
use crate::Error;
use num_traits::{One, Signed, Zero};

/// Default cap on full type-profile enumeration.
pub const PROFILE_ENUM_CAP: u128 = 1_000_000;

// ---------------------------------------------------------------------------
// Rational (de)serialization: "p/q" strings out, strings or numbers in.
// ---------------------------------------------------------------------------

#[derive(Deserialize)]
#[serde(untagged)]
enum RatRepr {
    Str(String),
    Int(i64),
    // Shortest round-trip printing recovers the source literal for the
    // decimals that appear in instance files, so this stays exact.
    Float(f64),
}

impl RatRepr {
    fn into_rat<E: serde::de::Error>(self) -> Result<Rat, E> {
        let text = match self {
            RatRepr::Str(s) => s,
            RatRepr::Int(v) => v.to_string(),
            RatRepr::Float(v) => {
                if !v.is_finite() {
                    return Err(E::custom("non-finite number"));
                }
                format!("{v}")
            }
        };
        parse_rat(&text).map_err(E::custom)
    }
}

fn ser_rat_vec<S: Serializer>(xs: &[Rat], s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(xs.iter().map(rat_str))
}

fn de_rat_vec<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Rat>, D::Error> {
    let raw = Vec::<RatRepr>::deserialize(d)?;
    raw.into_iter().map(|r| r.into_rat()).collect()
}

fn ser_rat_vec3<S: Serializer>(xs: &[Vec<Vec<Rat>>], s: S) -> Result<S::Ok, S::Error> {
    let strs: Vec<Vec<Vec<String>>> = xs
        .iter()
        .map(|a| a.iter().map(|b| b.iter().map(rat_str).collect()).collect())
        .collect();
    strs.serialize(s)
}

fn de_rat_vec3<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vec<Vec<Rat>>>, D::Error> {
    let raw = Vec::<Vec<Vec<RatRepr>>>::deserialize(d)?;
    raw.into_iter()
        .map(|a| {
            a.into_iter()
                .map(|b| b.into_iter().map(|r| r.into_rat()).collect())
                .collect()
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

/// One per-(bidder, item) value distribution with finite support.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscreteMarginal {
    #[serde(serialize_with = "ser_rat_vec", deserialize_with = "de_rat_vec")]
    pub support: Vec<Rat>,
    #[serde(serialize_with = "ser_rat_vec", deserialize_with = "de_rat_vec")]
    pub probs: Vec<Rat>,
}

impl DiscreteMarginal {
    pub fn point_mass(v: Rat) -> Self {
        DiscreteMarginal {
            support: vec![v],
            probs: vec![Rat::one()],
        }
    }

    pub fn uniform(values: Vec<Rat>) -> Self {
        let k = values.len();
        DiscreteMarginal {
            support: values,
            probs: vec![Rat::new(1.into(), (k as i64).into()); k],
        }
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }
}

/// Downward-closed feasibility families for constrained-additive bidders.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Feasibility {
    Additive,
    UnitDemand,
    CardinalityCap { k: usize },
    /// Explicit list of feasible bundles, items 0-indexed.
    ExplicitFamily { sets: Vec<Vec<usize>> },
}

impl Feasibility {
    /// Whether the bundle given as a bitmask is feasible.
    pub fn contains(&self, mask: u32) -> bool {
        match self {
            Feasibility::Additive => true,
            Feasibility::UnitDemand => mask.count_ones() <= 1,
            Feasibility::CardinalityCap { k } => (mask.count_ones() as usize) <= *k,
            Feasibility::ExplicitFamily { sets } => {
                sets.iter().any(|s| set_to_mask(s) == mask)
            }
        }
    }

    /// All feasible bundles as bitmasks, ascending. Errors when the family
    /// would exceed `cap` members.
    pub fn enumerate(&self, m: usize, cap: usize) -> Result<Vec<u32>, Error> {
        let full: u32 = if m >= 32 { u32::MAX } else { (1u32 << m) - 1 };
        let out: Vec<u32> = match self {
            Feasibility::Additive => {
                let count = 1u128 << m.min(127);
                if count > cap as u128 {
                    return Err(Error::CapExceeded {
                        what: "feasible family".into(),
                        size: count,
                        cap: cap as u128,
                    });
                }
                (0..=full).collect()
            }
            Feasibility::UnitDemand => std::iter::once(0u32)
                .chain((0..m).map(|j| 1u32 << j))
                .collect(),
            Feasibility::CardinalityCap { k } => {
                let mut v: Vec<u32> = (0..=full)
                    .filter(|s| (s.count_ones() as usize) <= *k)
                    .collect();
                v.sort_unstable();
                if v.len() > cap {
                    return Err(Error::CapExceeded {
                        what: "feasible family".into(),
                        size: v.len() as u128,
                        cap: cap as u128,
                    });
                }
                v
            }
            Feasibility::ExplicitFamily { sets } => {
                let mut v: Vec<u32> = sets.iter().map(|s| set_to_mask(s)).collect();
                v.sort_unstable();
                v.dedup();
                v
            }
        };
        Ok(out)
    }
}

pub fn set_to_mask(set: &[usize]) -> u32 {
    set.iter().fold(0u32, |acc, &j| acc | (1u32 << j))
}

pub fn mask_to_set(mask: u32) -> Vec<usize> {
    (0..32).filter(|j| mask & (1 << j) != 0).collect()
}

/// XOS coefficient tables: `alpha[item][value_index][k]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct XosTable {
    pub function_count: usize,
    #[serde(serialize_with = "ser_rat_vec3", deserialize_with = "de_rat_vec3")]
    pub alpha: Vec<Vec<Vec<Rat>>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Valuation {
    ConstrainedAdditive { feasibility: Feasibility },
    Xos { xos: XosTable },
}

impl Valuation {
    pub fn is_xos(&self) -> bool {
        matches!(self, Valuation::Xos { .. })
    }
}

/// A full auction instance with item-independent discrete marginals.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Instance {
    pub n: usize,
    pub m: usize,
    /// `marginals[i][j]` is bidder `i`'s distribution over values for item `j`.
    pub marginals: Vec<Vec<DiscreteMarginal>>,
    pub valuations: Vec<Valuation>,
}

/// One realized type per bidder: `indices[i][j]` points into the support of
/// `marginals[i][j]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TypeProfile {
    pub indices: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub problems: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.problems.is_empty()
    }
}

impl Instance {
    pub fn from_json(text: &str) -> Result<Instance, Error> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("instance serializes")
    }

    /// Total support size T = sum over (i, j) of |T_ij|.
    pub fn t_total(&self) -> usize {
        self.marginals
            .iter()
            .flat_map(|row| row.iter().map(|mg| mg.len()))
            .sum()
    }

    pub fn support_len(&self, i: usize, j: usize) -> usize {
        self.marginals[i][j].len()
    }

    pub fn prob(&self, i: usize, j: usize, v_idx: usize) -> &Rat {
        &self.marginals[i][j].probs[v_idx]
    }

    pub fn support_value(&self, i: usize, j: usize, v_idx: usize) -> &Rat {
        &self.marginals[i][j].support[v_idx]
    }

    /// Singleton value V_ij at a support index: the raw value for
    /// constrained-additive bidders, the best additive coefficient for XOS.
    pub fn singleton_value(&self, i: usize, j: usize, v_idx: usize) -> Rat {
        match &self.valuations[i] {
            Valuation::ConstrainedAdditive { .. } => {
                self.marginals[i][j].support[v_idx].clone()
            }
            Valuation::Xos { xos } => xos.alpha[j][v_idx]
                .iter()
                .max()
                .cloned()
                .unwrap_or_else(Rat::zero),
        }
    }

    /// Number of types of bidder `i` (product of per-item support sizes).
    pub fn bidder_type_count(&self, i: usize) -> u128 {
        self.marginals[i]
            .iter()
            .fold(1u128, |acc, mg| acc.saturating_mul(mg.len() as u128))
    }

    pub fn profile_count(&self) -> u128 {
        (0..self.n).fold(1u128, |acc, i| {
            acc.saturating_mul(self.bidder_type_count(i))
        })
    }

    /// All types of bidder `i` in lexicographic order over item indices.
    pub fn bidder_types(&self, i: usize) -> Vec<Vec<usize>> {
        let dims: Vec<usize> = self.marginals[i].iter().map(|mg| mg.len()).collect();
        odometer(&dims)
    }

    pub fn bidder_type_prob(&self, i: usize, t_i: &[usize]) -> Rat {
        t_i.iter()
            .enumerate()
            .map(|(j, &v)| self.prob(i, j, v).clone())
            .product()
    }

    /// Pr over t_ij of V_ij(t_ij) >= x (strict = false) or > x (strict = true).
    pub fn singleton_tail(&self, i: usize, j: usize, x: &Rat, strict: bool) -> Rat {
        let mut acc = Rat::zero();
        for v_idx in 0..self.support_len(i, j) {
            let v = self.singleton_value(i, j, v_idx);
            let hit = if strict { v > *x } else { v >= *x };
            if hit {
                acc += self.prob(i, j, v_idx);
            }
        }
        acc
    }

    pub fn max_singleton_value(&self) -> Rat {
        let mut best = Rat::zero();
        for i in 0..self.n {
            for j in 0..self.m {
                for v_idx in 0..self.support_len(i, j) {
                    let v = self.singleton_value(i, j, v_idx);
                    if v > best {
                        best = v;
                    }
                }
            }
        }
        best
    }

    /// A finite price no bidder ever pays: max singleton value plus one.
    pub fn unaffordable_price(&self) -> Rat {
        self.max_singleton_value() + Rat::one()
    }
}

/// Lexicographic odometer over mixed radix `dims`.
fn odometer(dims: &[usize]) -> Vec<Vec<usize>> {
    let total: usize = dims.iter().product();
    let mut out = Vec::with_capacity(total);
    let mut cur = vec![0usize; dims.len()];
    if dims.iter().any(|&d| d == 0) {
        return out;
    }
    loop {
        out.push(cur.clone());
        let mut pos = dims.len();
        loop {
            if pos == 0 {
                return out;
            }
            pos -= 1;
            cur[pos] += 1;
            if cur[pos] < dims[pos] {
                break;
            }
            cur[pos] = 0;
        }
    }
}

/// Reports every violated invariant with its location; an empty report means
/// the instance is valid.
pub fn validate_instance(inst: &Instance) -> ValidationReport {
    let mut problems = Vec::new();
    let mut push = |msg: String| problems.push(msg);

    if inst.marginals.len() != inst.n {
        push(format!(
            "marginals has {} rows, expected n = {}",
            inst.marginals.len(),
            inst.n
        ));
    }
    if inst.valuations.len() != inst.n {
        push(format!(
            "valuations has {} entries, expected n = {}",
            inst.valuations.len(),
            inst.n
        ));
    }
    if inst.m > 30 {
        push(format!("m = {} exceeds the supported limit of 30 items", inst.m));
    }
    for (i, row) in inst.marginals.iter().enumerate() {
        if row.len() != inst.m {
            push(format!(
                "marginals[{i}] has {} columns, expected m = {}",
                row.len(),
                inst.m
            ));
            continue;
        }
        for (j, mg) in row.iter().enumerate() {
            let loc = format!("marginals[{i}][{j}]");
            if mg.support.is_empty() {
                push(format!("{loc}: empty support"));
            }
            if mg.support.len() != mg.probs.len() {
                push(format!(
                    "{loc}: support has {} values but probs has {}",
                    mg.support.len(),
                    mg.probs.len()
                ));
                continue;
            }
            for w in mg.support.windows(2) {
                if w[0] >= w[1] {
                    push(format!(
                        "{loc}: support not strictly increasing at {} >= {}",
                        rat_str(&w[0]),
                        rat_str(&w[1])
                    ));
                }
            }
            if mg.support.first().is_some_and(|v| v.is_negative()) {
                push(format!("{loc}: negative support value"));
            }
            for (k, p) in mg.probs.iter().enumerate() {
                if !p.is_positive() {
                    push(format!("{loc}: probs[{k}] = {} is not positive", rat_str(p)));
                }
            }
            let total: Rat = mg.probs.iter().cloned().sum();
            if !total.is_one() {
                push(format!(
                    "{loc}: probabilities sum to {}",
                    rat_str(&total)
                ));
            }
        }
    }
    for (i, val) in inst.valuations.iter().enumerate() {
        match val {
            Valuation::ConstrainedAdditive { feasibility } => {
                if let Feasibility::ExplicitFamily { sets } = feasibility {
                    validate_family(i, sets, inst.m, &mut push);
                }
                if let Feasibility::CardinalityCap { k } = feasibility {
                    if *k == 0 {
                        push(format!("valuations[{i}]: cardinality cap of 0"));
                    }
                }
            }
            Valuation::Xos { xos } => {
                if xos.function_count == 0 {
                    push(format!("valuations[{i}]: XOS needs at least one function"));
                }
                if xos.alpha.len() != inst.m {
                    push(format!(
                        "valuations[{i}]: alpha has {} items, expected m = {}",
                        xos.alpha.len(),
                        inst.m
                    ));
                    continue;
                }
                for (j, per_value) in xos.alpha.iter().enumerate() {
                    let expect = inst
                        .marginals
                        .get(i)
                        .and_then(|row| row.get(j))
                        .map(|mg| mg.len())
                        .unwrap_or(0);
                    if per_value.len() != expect {
                        push(format!(
                            "valuations[{i}]: alpha[{j}] has {} rows, expected |support| = {expect}",
                            per_value.len()
                        ));
                        continue;
                    }
                    for (v_idx, coeffs) in per_value.iter().enumerate() {
                        if coeffs.len() != xos.function_count {
                            push(format!(
                                "valuations[{i}]: alpha[{j}][{v_idx}] has {} coefficients, expected K = {}",
                                coeffs.len(),
                                xos.function_count
                            ));
                        }
                        for (k, a) in coeffs.iter().enumerate() {
                            if a.is_negative() {
                                push(format!(
                                    "valuations[{i}]: alpha[{j}][{v_idx}][{k}] = {} is negative",
                                    rat_str(a)
                                ));
                            }
                        }
                    }
                }
            }
        }
    }
    ValidationReport { problems }
}

fn validate_family(i: usize, sets: &[Vec<usize>], m: usize, push: &mut impl FnMut(String)) {
    let masks: Vec<u32> = sets.iter().map(|s| set_to_mask(s)).collect();
    if !masks.contains(&0) {
        push(format!("valuations[{i}]: family missing the empty set"));
    }
    for (idx, s) in sets.iter().enumerate() {
        for &j in s {
            if j >= m {
                push(format!(
                    "valuations[{i}]: family set {idx} references item {j} >= m = {m}"
                ));
            }
        }
    }
    for &mask in &masks {
        // Every one-element-removed subset must also be present.
        let mut bits = mask;
        while bits != 0 {
            let low = bits & bits.wrapping_neg();
            let sub = mask & !low;
            if !masks.contains(&sub) {
                push(format!(
                    "valuations[{i}]: family not downward-closed (set {:?} lacks subset {:?})",
                    mask_to_set(mask),
                    mask_to_set(sub)
                ));
            }
            bits &= bits - 1;
        }
    }
}

/// All type profiles with their product probabilities, lexicographic over
/// (bidder, item, support index). Refuses above `cap`.
pub fn enumerate_type_profiles(
    inst: &Instance,
    cap: u128,
) -> Result<Vec<(TypeProfile, Rat)>, Error> {
    let count = inst.profile_count();
    if count > cap {
        return Err(Error::CapExceeded {
            what: "type profiles".into(),
            size: count,
            cap,
        });
    }
    let dims: Vec<usize> = (0..inst.n)
        .flat_map(|i| (0..inst.m).map(move |j| inst.support_len(i, j)))
        .collect();
    let flat = odometer(&dims);
    let mut out = Vec::with_capacity(flat.len());
    for combo in flat {
        let mut indices = vec![vec![0usize; inst.m]; inst.n];
        let mut prob = Rat::one();
        for i in 0..inst.n {
            for j in 0..inst.m {
                let v = combo[i * inst.m + j];
                indices[i][j] = v;
                prob *= inst.prob(i, j, v);
            }
        }
        out.push((TypeProfile { indices }, prob));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::num::{rat, rat_i};

    pub(crate) fn single_item_instance(values: Vec<Rat>, probs: Vec<Rat>) -> Instance {
        Instance {
            n: 1,
            m: 1,
            marginals: vec![vec![DiscreteMarginal {
                support: values,
                probs,
            }]],
            valuations: vec![Valuation::ConstrainedAdditive {
                feasibility: Feasibility::Additive,
            }],
        }
    }

    #[test]
    fn minimal_valid_instance_passes() {
        let inst = single_item_instance(vec![rat_i(1)], vec![rat_i(1)]);
        assert!(validate_instance(&inst).is_valid());
    }

    #[test]
    fn probability_sum_failure_is_reported() {
        let inst = single_item_instance(vec![rat_i(1), rat_i(2)], vec![rat(2, 5), rat(2, 5)]);
        let report = validate_instance(&inst);
        assert!(report
            .problems
            .iter()
            .any(|p| p.contains("probabilities sum to 4/5")));
    }

    #[test]
    fn non_downward_closed_family_is_reported() {
        let inst = Instance {
            n: 1,
            m: 2,
            marginals: vec![vec![
                DiscreteMarginal::point_mass(rat_i(1)),
                DiscreteMarginal::point_mass(rat_i(2)),
            ]],
            valuations: vec![Valuation::ConstrainedAdditive {
                feasibility: Feasibility::ExplicitFamily {
                    sets: vec![vec![], vec![0, 1]],
                },
            }],
        };
        let report = validate_instance(&inst);
        assert!(report
            .problems
            .iter()
            .any(|p| p.contains("not downward-closed")));
    }

    #[test]
    fn validation_is_idempotent_on_valid_instances() {
        let inst = single_item_instance(vec![rat_i(1), rat_i(2)], vec![rat(1, 2), rat(1, 2)]);
        let a = validate_instance(&inst);
        let b = validate_instance(&inst);
        assert!(a.is_valid() && b.is_valid());
        assert_eq!(a.problems, b.problems);
    }

    #[test]
    fn profile_enumeration_tiny_cases() {
        let inst = single_item_instance(vec![rat_i(1), rat_i(2)], vec![rat(1, 2), rat(1, 2)]);
        let profiles = enumerate_type_profiles(&inst, PROFILE_ENUM_CAP).unwrap();
        assert_eq!(profiles.len(), 2);
        for (_, p) in &profiles {
            assert_eq!(*p, rat(1, 2));
        }

        let uniform = DiscreteMarginal::uniform(vec![rat_i(1), rat_i(2)]);
        let inst2 = Instance {
            n: 2,
            m: 2,
            marginals: vec![
                vec![uniform.clone(), uniform.clone()],
                vec![uniform.clone(), uniform.clone()],
            ],
            valuations: vec![
                Valuation::ConstrainedAdditive {
                    feasibility: Feasibility::Additive,
                },
                Valuation::ConstrainedAdditive {
                    feasibility: Feasibility::UnitDemand,
                },
            ],
        };
        let profiles = enumerate_type_profiles(&inst2, PROFILE_ENUM_CAP).unwrap();
        assert_eq!(profiles.len(), 16);
        let total: Rat = profiles.iter().map(|(_, p)| p.clone()).sum();
        assert!(total.is_one());
        for (_, p) in &profiles {
            assert_eq!(*p, rat(1, 16));
        }
    }

    #[test]
    fn profile_enumeration_respects_cap() {
        let mg = DiscreteMarginal::uniform(vec![rat_i(1), rat_i(2)]);
        let inst = Instance {
            n: 1,
            m: 30,
            marginals: vec![vec![mg; 30]],
            valuations: vec![Valuation::ConstrainedAdditive {
                feasibility: Feasibility::Additive,
            }],
        };
        let err = enumerate_type_profiles(&inst, PROFILE_ENUM_CAP).unwrap_err();
        match err {
            Error::CapExceeded { size, cap, .. } => {
                assert_eq!(size, 1u128 << 30);
                assert_eq!(cap, PROFILE_ENUM_CAP);
            }
            other => panic!("expected cap error, got {other:?}"),
        }
    }

    #[test]
    fn singleton_values() {
        let inst = single_item_instance(vec![rat_i(3)], vec![rat_i(1)]);
        assert_eq!(inst.singleton_value(0, 0, 0), rat_i(3));

        let xos = Instance {
            n: 1,
            m: 1,
            marginals: vec![vec![DiscreteMarginal::point_mass(rat_i(1))]],
            valuations: vec![Valuation::Xos {
                xos: XosTable {
                    function_count: 2,
                    alpha: vec![vec![vec![rat_i(2), rat_i(5)]]],
                },
            }],
        };
        assert_eq!(xos.singleton_value(0, 0, 0), rat_i(5));

        let zero = Instance {
            n: 1,
            m: 1,
            marginals: vec![vec![DiscreteMarginal::point_mass(rat_i(1))]],
            valuations: vec![Valuation::Xos {
                xos: XosTable {
                    function_count: 1,
                    alpha: vec![vec![vec![rat_i(0)]]],
                },
            }],
        };
        assert_eq!(zero.singleton_value(0, 0, 0), rat_i(0));
    }

    #[test]
    fn singleton_value_monotone_in_support_order() {
        let inst = single_item_instance(
            vec![rat(1, 2), rat_i(2), rat_i(5)],
            vec![rat(1, 3), rat(1, 3), rat(1, 3)],
        );
        let vals: Vec<Rat> = (0..3).map(|k| inst.singleton_value(0, 0, k)).collect();
        assert!(vals.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn json_round_trip_and_unknown_field_rejection() {
        let inst = single_item_instance(vec![rat(2, 5), rat_i(2)], vec![rat(1, 2), rat(1, 2)]);
        let text = inst.to_json();
        let back = Instance::from_json(&text).unwrap();
        assert_eq!(inst, back);

        let bad = r#"{"n":1,"m":1,"marginals":[[{"support":[1],"probs":[1]}]],
                      "valuations":[{"kind":"constrained_additive",
                      "feasibility":{"type":"additive"}}],"extra":true}"#;
        assert!(Instance::from_json(bad).is_err());
    }

    #[test]
    fn json_accepts_decimals_and_fractions() {
        let text = r#"{"n":1,"m":1,
            "marginals":[[{"support":[0.5,"3/2"],"probs":[0.25,"3/4"]}]],
            "valuations":[{"kind":"constrained_additive","feasibility":{"type":"unit_demand"}}]}"#;
        let inst = Instance::from_json(text).unwrap();
        assert_eq!(inst.marginals[0][0].support[0], rat(1, 2));
        assert_eq!(inst.marginals[0][0].support[1], rat(3, 2));
        assert_eq!(inst.marginals[0][0].probs[0], rat(1, 4));
        assert!(validate_instance(&inst).is_valid());
    }
}
