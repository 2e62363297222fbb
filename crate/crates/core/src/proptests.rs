//! Property tests across modules.

use nalgebra::DMatrix;
use num_bigint::BigUint;
use num_rational::BigRational;
use proptest::prelude::*;

use crate::permutation::jsigma_matrix;
use crate::rational::from_u64;
use crate::spectral::{canonical_weight, canonical_weight_exact, max_relative_gap, GramPairTrunc};
use crate::weightfn::{
    equiv_check, min_product, min_product_threshold_index, rearrange_prefix, shift, DivergingSeq, EquivVerdict,
    MinProductSearch,
};
use crate::{Permutation, TailRule, Weight};

fn boundaries() -> impl Strategy<Value = Vec<u64>> {
    prop::collection::vec(1u64..40, 1..8).prop_map(|gaps| {
        let mut acc = 1;
        let mut out = vec![1];
        for g in gaps {
            acc += g;
            out.push(acc);
        }
        out
    })
}

fn increasing(len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<u64>> {
    prop::collection::vec(1u64..20, len).prop_map(|steps| {
        steps
            .into_iter()
            .scan(0, |acc, s| {
                *acc += s;
                Some(*acc)
            })
            .collect()
    })
}

fn weight() -> impl Strategy<Value = Weight> {
    prop_oneof![
        (1u32..4).prop_map(Weight::power_int),
        (2u32..4).prop_map(|b| Weight::exponential_int(b).unwrap()),
        increasing(2..10).prop_map(|p| Weight::table_u64(&p, TailRule::Linear).unwrap()),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn block_reversal_is_an_involution(bounds in boundaries(), k in 0u64..400) {
        let k = 1 + k % (bounds.last().unwrap() - 1);
        let sigma = Permutation::block_reversal_u64(&bounds).unwrap();
        let once = sigma.apply_u64(k).unwrap();
        prop_assert_eq!(sigma.apply(&once).unwrap(), BigUint::from(k));
        prop_assert_eq!(sigma.invert().apply_u64(k).unwrap(), once.clone());
        let twice = Permutation::compose(&sigma, &sigma);
        prop_assert_eq!(twice.apply_u64(k).unwrap(), BigUint::from(k));
    }

    #[test]
    fn jsigma_is_a_permutation_matrix(bounds in boundaries()) {
        let sigma = Permutation::block_reversal_u64(&bounds).unwrap();
        let dim = (*bounds.last().unwrap() - 1) as usize;
        prop_assume!(dim > 0);
        let j = jsigma_matrix(&sigma, dim).unwrap();
        prop_assert_eq!(&j * j.transpose(), DMatrix::identity(dim, dim));
    }

    #[test]
    fn rearrangement_is_sorted_and_idempotent(prefix in prop::collection::vec(1u64..200, 1..40), m in 1usize..50) {
        let mut prefix = prefix;
        let n = prefix.len();
        if n >= 2 && prefix[n - 1] <= prefix[n - 2] {
            prefix[n - 1] = prefix[n - 2] + 1;
        }
        let u = DivergingSeq::table_u64(&prefix).unwrap();
        let once = rearrange_prefix(&u, m, 100_000).unwrap();
        prop_assert!(once.windows(2).all(|w| w[0] <= w[1]));
        let p = DivergingSeq::rearranged(&u, 100_000);
        prop_assert_eq!(rearrange_prefix(&p, m, 100_000).unwrap(), once.clone());
        let direct: Vec<BigRational> = (1..=m as u64).map(|k| p.at(k).unwrap()).collect();
        prop_assert_eq!(direct, once);
    }

    #[test]
    fn threshold_strategies_agree(f1 in weight(), f2 in weight(), t in 1u64..3000, ell in 0u64..6) {
        let (g1, g2) = (shift(&f1, &BigUint::from(ell)), shift(&f2, &BigUint::from(ell)));
        let t = from_u64(t);
        let auto = min_product_threshold_index(&g1, &g2, &t, 100_000, MinProductSearch::Auto).unwrap();
        let inc = min_product_threshold_index(&g1, &g2, &t, 100_000, MinProductSearch::Incremental).unwrap();
        let naive = min_product_threshold_index(&g1, &g2, &t, 100_000, MinProductSearch::Naive).unwrap();
        prop_assert_eq!(&auto, &inc);
        prop_assert_eq!(&auto, &naive);
        let n: u64 = (&auto).try_into().unwrap();
        prop_assert!(min_product(&g1, &g2, n).unwrap() >= t);
        if n > 1 {
            prop_assert!(min_product(&g1, &g2, n - 1).unwrap() < t);
        }
    }

    #[test]
    fn equivalence_is_symmetric(a in weight(), b in weight()) {
        let c = from_u64(50);
        let ab = equiv_check(&a, &b, 200, &c).unwrap();
        let ba = equiv_check(&b, &a, 200, &c).unwrap();
        let kind = |v: &EquivVerdict| match v {
            EquivVerdict::ExactDecision { equivalent } => format!("exact {equivalent}"),
            EquivVerdict::BoundedRatio { .. } => "bounded".to_string(),
            EquivVerdict::DivergenceWitness { index, .. } => format!("witness {index}"),
        };
        prop_assert_eq!(kind(&ab), kind(&ba));
        let same = equiv_check(&a, &a, 200, &c).unwrap();
        let refuted = matches!(same, EquivVerdict::ExactDecision { equivalent: false });
        prop_assert!(!refuted);
    }

    #[test]
    fn diagonal_canonical_weight_matches_sorted_ratios(
        entries in prop::collection::vec((1u64..50, 1u64..50), 1..12),
    ) {
        let h: Vec<BigRational> = entries.iter().map(|&(x, _)| BigRational::new(1.into(), x.into())).collect();
        let w: Vec<BigRational> = entries.iter().map(|&(_, y)| from_u64(y)).collect();
        let pair = GramPairTrunc::diagonal(h.clone(), w.clone()).unwrap();
        let exact = canonical_weight_exact(&pair).unwrap();
        let mut oracle: Vec<BigRational> = w.iter().zip(&h).map(|(wi, hi)| wi / hi).collect();
        oracle.sort();
        prop_assert_eq!(&exact, &oracle);
        let solved = canonical_weight(&pair).unwrap();
        let oracle_f64: Vec<f64> = oracle.iter().map(crate::rational::to_f64).collect();
        prop_assert!(max_relative_gap(&oracle_f64, &solved.f) <= 1e-9);
    }

    #[test]
    fn canonical_weight_is_congruence_invariant(
        diag in prop::collection::vec(1u64..20, 2..8),
        seed in prop::collection::vec(-1.0f64..1.0, 64),
    ) {
        let n = diag.len();
        let h: Vec<BigRational> = diag.iter().map(|&d| BigRational::new(1.into(), d.into())).collect();
        let pair = GramPairTrunc::diagonal(h, vec![from_u64(1); n]).unwrap();
        // I + small perturbation keeps the congruence well conditioned
        let t = DMatrix::from_fn(n, n, |i, j| f64::from(u8::from(i == j)) + 0.1 * seed[i * 8 + j]);
        let base = canonical_weight(&pair).unwrap();
        let moved = canonical_weight(&pair.congruence(&t).unwrap()).unwrap();
        prop_assert!(max_relative_gap(&base.f, &moved.f) <= 1e-8);
    }
}
