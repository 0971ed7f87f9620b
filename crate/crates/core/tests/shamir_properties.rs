//! Shamir sharing against independent small-field oracles.

use num_bigint::BigUint;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sharvot::shamir::{reconstruct_secret, split_secret, PrimeField, Share, SharingConfig};

fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn go(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            go(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(0, n, k, &mut Vec::new(), &mut out);
    out
}

fn small(v: &sharvot::shamir::FieldElement) -> u64 {
    v.value().to_u64_digits().first().copied().unwrap_or(0)
}

/// Plain-integer polynomial evaluation mod `p`.
fn eval_mod(coeffs: &[u64], x: u64, p: u64) -> u64 {
    coeffs.iter().rev().fold(0, |acc, c| (acc * x + c) % p)
}

/// Every coefficient vector `(a_1..a_t)` over `F_p`.
fn all_tails(p: u64, t: usize) -> impl Iterator<Item = Vec<u64>> {
    (0..p.pow(t as u32)).map(move |mut k| {
        (0..t)
            .map(|_| {
                let d = k % p;
                k /= p;
                d
            })
            .collect()
    })
}

#[test]
fn every_quorum_reconstructs_over_small_and_curve_fields() {
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    for field in [PrimeField::new_u64(31).unwrap(), PrimeField::curve_order()] {
        for n in 1..=7 {
            for t in 0..n {
                let cfg = SharingConfig::new(t, n, field.clone()).unwrap();
                let secret = field.random(&mut rng);
                let shares = split_secret(&secret, &cfg, &mut rng).unwrap();
                for subset in subsets(n, t + 1) {
                    let picked: Vec<Share> = subset.iter().map(|&i| shares[i].clone()).collect();
                    assert_eq!(reconstruct_secret(&picked, &cfg).unwrap(), secret, "n={n} t={t} {subset:?}");
                }
            }
        }
    }
}

/// Brute force over `F_7`: every polynomial of degree at most `t`, every
/// `t`-subset of its shares. The number of polynomials through those shares
/// with `f(0) = s` must be the same for every `s`.
#[test]
fn t_shares_are_consistent_with_every_secret_equally_often() {
    let p = 7u64;
    for n in 2..=4usize {
        for t in 1..n {
            for secret in 0..p {
                for tail in all_tails(p, t).step_by(5) {
                    let coeffs: Vec<u64> = std::iter::once(secret).chain(tail).collect();
                    let ys: Vec<u64> = (1..=n as u64).map(|x| eval_mod(&coeffs, x, p)).collect();
                    for subset in subsets(n, t) {
                        let mut counts = vec![0usize; p as usize];
                        for s in 0..p {
                            for cand_tail in all_tails(p, t) {
                                let cand: Vec<u64> = std::iter::once(s).chain(cand_tail).collect();
                                if subset.iter().all(|&i| eval_mod(&cand, i as u64 + 1, p) == ys[i]) {
                                    counts[s as usize] += 1;
                                }
                            }
                        }
                        assert!(counts.iter().all(|&c| c == counts[0] && c > 0), "{counts:?}");
                    }
                }
            }
        }
    }
}

/// With the leading coefficient forced nonzero, each `t`-subset rules out
/// exactly one candidate secret: the one whose interpolant through the
/// subset has degree below `t`.
#[test]
fn exact_degree_sampling_excludes_one_secret_per_t_subset() {
    let field = PrimeField::new_u64(23).unwrap();
    let p = 23u64;
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    for t in 1..=2usize {
        let n = t + 2;
        let cfg = SharingConfig::new(t, n, field.clone()).unwrap();
        let secret = field.random(&mut rng);
        let shares = split_secret(&secret, &cfg, &mut rng).unwrap();
        for subset in subsets(n, t) {
            let ys: Vec<(u64, u64)> = subset.iter().map(|&i| (small(shares[i].x()), small(shares[i].y()))).collect();
            let mut excluded = 0;
            for s in 0..p {
                let exact = all_tails(p, t).any(|tail| {
                    *tail.last().unwrap() != 0 && {
                        let cand: Vec<u64> = std::iter::once(s).chain(tail).collect();
                        ys.iter().all(|&(x, y)| eval_mod(&cand, x, p) == y)
                    }
                });
                if !exact {
                    excluded += 1;
                    assert_ne!(s, small(&secret));
                }
            }
            assert_eq!(excluded, 1, "t={t} {subset:?}");
        }
    }
}

#[test]
fn over_quorum_sets_detect_a_bad_share() {
    let field = PrimeField::new_u64(31).unwrap();
    let cfg = SharingConfig::new(2, 5, field.clone()).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let mut shares = split_secret(&field.from_u64(9), &cfg, &mut rng).unwrap();
    assert!(reconstruct_secret(&shares, &cfg).is_ok());
    let y = shares[4].y() + &field.one();
    shares[4] = Share::new(shares[4].x().clone(), y).unwrap();
    assert!(reconstruct_secret(&shares, &cfg).is_err());
    assert!(reconstruct_secret(&shares[..3], &cfg).is_ok());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn round_trip_any_quorum(seed in any::<u64>(), n in 1usize..=10, t_frac in 0.0f64..1.0, pick in any::<u64>()) {
        let t = ((n as f64) * t_frac) as usize % n;
        let field = PrimeField::curve_order();
        let cfg = SharingConfig::new(t, n, field.clone()).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let secret = field.element(BigUint::from(seed) * BigUint::from(pick | 1));
        let shares = split_secret(&secret, &cfg, &mut rng).unwrap();
        let mut idx: Vec<usize> = (0..n).collect();
        rand::seq::SliceRandom::shuffle(idx.as_mut_slice(), &mut ChaCha20Rng::seed_from_u64(pick));
        let picked: Vec<Share> = idx[..t + 1].iter().map(|&i| shares[i].clone()).collect();
        prop_assert_eq!(reconstruct_secret(&picked, &cfg).unwrap(), secret);
    }
}
