//! Sample-access pipeline: seeded draws from marginals, empirical instances,
//! DKW sample sizing, and Kolmogorov distance.

use num_bigint::BigInt;
use num_traits::{One, Signed, Zero};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{DiscreteMarginal, Instance};
use crate::num::Rat;
use crate::Error;

/// Draws an index from a finite distribution by exact CDF inversion: the
/// uniform draw is a 64-bit integer compared against cumulative mass without
/// rounding, so runs are reproducible across platforms.
pub fn sample_index(probs: &[Rat], rng: &mut impl RngCore) -> usize {
    let u = rng.next_u64();
    let u_num = BigInt::from(u);
    let two64 = BigInt::one() << 64;
    let mut cum = Rat::zero();
    for (idx, p) in probs.iter().enumerate() {
        cum += p;
        // u / 2^64 < cum  <=>  u * denom < numer * 2^64
        if &u_num * cum.denom() < cum.numer() * &two64 {
            return idx;
        }
    }
    probs.len() - 1
}

/// sup_z |Pr[a <= z] - Pr[b <= z]|, attained at support points of either
/// distribution.
pub fn kolmogorov_distance(a: &DiscreteMarginal, b: &DiscreteMarginal) -> Rat {
    let mut grid: Vec<Rat> = a.support.iter().chain(b.support.iter()).cloned().collect();
    grid.sort();
    grid.dedup();
    let cdf = |mg: &DiscreteMarginal, z: &Rat| -> Rat {
        mg.support
            .iter()
            .zip(&mg.probs)
            .filter(|(v, _)| *v <= z)
            .map(|(_, p)| p.clone())
            .sum()
    };
    let mut best = Rat::zero();
    for z in &grid {
        let d = (cdf(a, z) - cdf(b, z)).abs();
        if d > best {
            best = d;
        }
    }
    best
}

/// N = ceil(ln(2nm/delta) / (2 eps^2)): the two-sided DKW bound
/// Pr[d_K > eps] <= 2 exp(-2 N eps^2), union-bounded over the nm marginals.
pub fn dkw_sample_count(n: usize, m: usize, eps: f64, delta: f64) -> Result<usize, Error> {
    if !(0.0 < eps && eps <= 1.0) || !(0.0 < delta && delta < 1.0) {
        return Err(Error::InvalidArgument(
            "dkw sizing needs eps and delta in (0, 1)".into(),
        ));
    }
    let inner = (2.0 * n as f64 * m as f64) / delta;
    let raw = inner.ln() / (2.0 * eps * eps);
    Ok(raw.ceil().max(1.0) as usize)
}

/// Draws `n` i.i.d. support indices per (i, j) with a seeded generator.
/// Returned as draws[i][j][k]; the empirical-instance construction and the
/// CSV audit log both read from this.
pub fn sample_draws(inst: &Instance, n: usize, seed: u64) -> Vec<Vec<Vec<usize>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..inst.n)
        .map(|i| {
            (0..inst.m)
                .map(|j| {
                    (0..n)
                        .map(|_| sample_index(&inst.marginals[i][j].probs, &mut rng))
                        .collect()
                })
                .collect()
        })
        .collect()
}

/// Per (i, j): draw `n` i.i.d. values from the true marginal and replace it
/// with the uniform distribution over the multiset (distinct values with
/// counts/n). Valuations are copied unchanged.
///
/// XOS coefficient tables are indexed by support position, so the empirical
/// support keeps every original position that was drawn at least once; for
/// constrained-additive bidders only values matter.
pub fn empirical_instance(inst: &Instance, n: usize, seed: u64) -> Result<Instance, Error> {
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    let draws = sample_draws(inst, n, seed);
    let mut out = inst.clone();
    for i in 0..inst.n {
        for j in 0..inst.m {
            let mg = &inst.marginals[i][j];
            let mut counts = vec![0usize; mg.len()];
            for &d in &draws[i][j] {
                counts[d] += 1;
            }
            let mut support = Vec::new();
            let mut probs = Vec::new();
            let mut kept_positions = Vec::new();
            for (idx, &cnt) in counts.iter().enumerate() {
                if cnt > 0 {
                    support.push(mg.support[idx].clone());
                    probs.push(crate::num::rat(cnt as i64, n as i64));
                    kept_positions.push(idx);
                }
            }
            out.marginals[i][j] = DiscreteMarginal { support, probs };
            if let crate::model::Valuation::Xos { xos } = &mut out.valuations[i] {
                xos.alpha[j] = kept_positions
                    .iter()
                    .map(|&idx| inst_alpha(inst, i, j, idx))
                    .collect();
            }
        }
    }
    Ok(out)
}

fn inst_alpha(inst: &Instance, i: usize, j: usize, v_idx: usize) -> Vec<Rat> {
    match &inst.valuations[i] {
        crate::model::Valuation::Xos { xos } => xos.alpha[j][v_idx].clone(),
        _ => unreachable!("only called for XOS bidders"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::num::{rat, rat_i};

    #[test]
    fn kolmogorov_examples() {
        let a = DiscreteMarginal::uniform(vec![rat_i(0), rat_i(1)]);
        assert!(kolmogorov_distance(&a, &a).is_zero());

        let p = DiscreteMarginal::point_mass(rat(1, 2));
        let q = DiscreteMarginal::point_mass(rat(7, 10));
        assert_eq!(kolmogorov_distance(&p, &q), rat_i(1));

        let z = DiscreteMarginal::point_mass(rat_i(0));
        assert_eq!(kolmogorov_distance(&a, &z), rat(1, 2));
    }

    #[test]
    fn dkw_count_examples() {
        // n=m=1, delta = 2/e^2, eps = 1: N = ceil(ln(e^2)/2) = 1
        let delta = 2.0 / (1.0f64).exp().powi(2);
        assert_eq!(dkw_sample_count(1, 1, 1.0, delta).unwrap(), 1);

        let n1 = dkw_sample_count(2, 2, 0.2, 0.1).unwrap();
        let n2 = dkw_sample_count(2, 2, 0.1, 0.1).unwrap();
        assert!(n2 >= 4 * n1 - 4); // halving eps roughly quadruples N

        let d1 = dkw_sample_count(1, 1, 0.1, 0.2).unwrap();
        let d2 = dkw_sample_count(1, 1, 0.1, 0.01).unwrap();
        assert!(d2 > d1);
        assert!(dkw_sample_count(1, 1, 0.0, 0.1).is_err());
    }

    #[test]
    fn empirical_instance_basics() {
        let inst = crate::model::Instance {
            n: 1,
            m: 1,
            marginals: vec![vec![DiscreteMarginal::uniform(vec![rat_i(1), rat_i(2)])]],
            valuations: vec![crate::model::Valuation::ConstrainedAdditive {
                feasibility: crate::model::Feasibility::Additive,
            }],
        };
        // n=1: a point mass at the drawn value
        let one = empirical_instance(&inst, 1, 3).unwrap();
        assert_eq!(one.marginals[0][0].len(), 1);
        assert_eq!(one.marginals[0][0].probs[0], rat_i(1));

        // point-mass source stays identical
        let det = crate::model::Instance {
            marginals: vec![vec![DiscreteMarginal::point_mass(rat_i(5))]],
            ..inst.clone()
        };
        let emp = empirical_instance(&det, 37, 1).unwrap();
        assert_eq!(emp.marginals, det.marginals);

        // determinism under a fixed seed
        let a = empirical_instance(&inst, 25, 11).unwrap();
        let b = empirical_instance(&inst, 25, 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sample_index_is_exact_on_halves() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let probs = vec![rat(1, 2), rat(1, 2)];
        let mut counts = [0usize; 2];
        for _ in 0..2000 {
            counts[sample_index(&probs, &mut rng)] += 1;
        }
        assert!(counts[0] > 800 && counts[1] > 800);
    }
}
