use std::sync::Arc;

use acmmd::estimator::{acmmd_sq, h_matrix, Triplet};
use acmmd::hypothesis::{acmmd_test, bootstrap_statistic};
use acmmd::kernels::{gram, hamming_distance, mmd_sq_unbiased};
use acmmd::reliability::{mmd_matrix, ReliabilityRecord};
use acmmd::{Alphabet, HammingMode, Item, ItemRef, KernelSpec, Sequence};
use approx::relative_eq;
use proptest::prelude::*;

fn alphabet() -> Arc<Alphabet> {
    Arc::new(Alphabet::new(&["A", "B", "C", "STOP"], Some("STOP")).unwrap())
}

fn seq_strategy(max_len: usize) -> impl Strategy<Value = Sequence> {
    proptest::collection::vec(1u16..=3, 0..=max_len)
        .prop_map(|codes| Sequence::from_codes(&alphabet(), codes).unwrap())
}

fn nonempty_seq_strategy(max_len: usize) -> impl Strategy<Value = Sequence> {
    proptest::collection::vec(1u16..=3, 1..=max_len)
        .prop_map(|codes| Sequence::from_codes(&alphabet(), codes).unwrap())
}

fn triplets_strategy(n: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = Vec<Triplet>> {
    proptest::collection::vec(
        (-2.0f64..2.0, seq_strategy(6), seq_strategy(6))
            .prop_map(|(x, y, m)| Triplet::new(Item::Vector(vec![x]), y, m)),
        n,
    )
}

fn kernels() -> Vec<KernelSpec> {
    let mut out = Vec::new();
    for lambda in [0.5, 1.0, 2.0] {
        for mode in [HammingMode::TerminalPadded, HammingMode::LengthPenalty] {
            out.push(KernelSpec::ExpHamming { lambda, mode });
            out.push(KernelSpec::TiltedExpHamming { lambda, mode });
        }
    }
    out
}

proptest! {
    #[test]
    fn sequence_kernels_are_symmetric_and_bounded(a in nonempty_seq_strategy(12), b in nonempty_seq_strategy(12)) {
        for k in kernels() {
            let ab = k.eval(ItemRef::Tokens(&a), ItemRef::Tokens(&b)).unwrap();
            let ba = k.eval(ItemRef::Tokens(&b), ItemRef::Tokens(&a)).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!(ab > 0.0 && ab <= 1.0);
        }
    }

    #[test]
    fn gaussian_is_symmetric_and_bounded(
        u in proptest::collection::vec(-5.0f64..5.0, 3),
        v in proptest::collection::vec(-5.0f64..5.0, 3),
        sigma in 0.5f64..10.0,
    ) {
        let k = KernelSpec::gaussian(sigma);
        let uv = k.eval(ItemRef::Vector(&u), ItemRef::Vector(&v)).unwrap();
        let vu = k.eval(ItemRef::Vector(&v), ItemRef::Vector(&u)).unwrap();
        prop_assert_eq!(uv, vu);
        prop_assert!(uv > 0.0 && uv <= 1.0);
    }

    #[test]
    fn hamming_modes_agree(a in seq_strategy(20), b in seq_strategy(20)) {
        prop_assert_eq!(
            hamming_distance(&a, &b, HammingMode::TerminalPadded).unwrap(),
            hamming_distance(&a, &b, HammingMode::LengthPenalty).unwrap()
        );
    }

    #[test]
    fn fast_gram_matches_scalar_kernel(seqs in proptest::collection::vec(seq_strategy(40), 1..8)) {
        let items: Vec<ItemRef> = seqs.iter().map(ItemRef::Tokens).collect();
        let k = KernelSpec::exp_hamming(0.9);
        let g = gram(&k, &items, &items).unwrap();
        prop_assert!(g.is_symmetric());
        for i in 0..seqs.len() {
            prop_assert_eq!(g.get(i, i), 1.0);
            for j in 0..seqs.len() {
                prop_assert_eq!(g.get(i, j), k.eval(items[i], items[j]).unwrap());
            }
        }
    }

    #[test]
    fn acmmd_is_permutation_invariant(samples in triplets_strategy(2..=10), seed in any::<u64>()) {
        let kx = KernelSpec::gaussian(1.0);
        let ky = KernelSpec::exp_hamming(1.0);
        let n = samples.len();
        let mut perm: Vec<usize> = (0..n).collect();
        // deterministic shuffle from the seed
        let mut state = seed;
        for i in (1..n).rev() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            perm.swap(i, (state >> 33) as usize % (i + 1));
        }
        let permuted: Vec<Triplet> = perm.iter().map(|&i| samples[i].clone()).collect();
        let h = h_matrix(&samples, &kx, &ky).unwrap().h;
        let hp = h_matrix(&permuted, &kx, &ky).unwrap().h;
        prop_assert!(h.values().is_symmetric());
        prop_assert_eq!(hp.values(), &h.values().permuted(&perm));
        let (a, b) = (acmmd_sq(&h), acmmd_sq(&hp));
        prop_assert!(relative_eq!(a, b, epsilon = 1e-15, max_relative = 1e-12), "{} vs {}", a, b);
    }

    #[test]
    fn bootstrap_replicate_is_statistic_on_swapped_data(
        samples in triplets_strategy(2..=8),
        signs in proptest::collection::vec(prop_oneof![Just(1.0f64), Just(-1.0f64)], 8),
    ) {
        let kx = KernelSpec::gaussian(0.7);
        let ky = KernelSpec::exp_hamming(0.6);
        let n = samples.len();
        let signs = &signs[..n];
        let h = h_matrix(&samples, &kx, &ky).unwrap().h;
        let swapped: Vec<Triplet> = samples
            .iter()
            .zip(signs)
            .map(|(t, &s)| if s < 0.0 { t.swapped() } else { t.clone() })
            .collect();
        let direct = acmmd_sq(&h_matrix(&swapped, &kx, &ky).unwrap().h);
        prop_assert_eq!(bootstrap_statistic(&h, signs), direct);
    }

    #[test]
    fn test_is_deterministic_and_p_value_valid(samples in triplets_strategy(3..=12), seed in any::<u64>()) {
        let kx = KernelSpec::gaussian(1.0);
        let ky = KernelSpec::exp_hamming(1.0);
        let a = acmmd_test(&samples, &kx, &ky, 0.1, 30, seed).unwrap();
        let b = acmmd_test(&samples, &kx, &ky, 0.1, 30, seed).unwrap();
        prop_assert_eq!(a.p_value, b.p_value);
        prop_assert_eq!(a.reject, b.reject);
        prop_assert_eq!(a.threshold, b.threshold);
        prop_assert!(a.p_value > 0.0 && a.p_value <= 1.0);
    }

    #[test]
    fn nested_mmd_matrix_matches_direct_estimates(
        sets in proptest::collection::vec(proptest::collection::vec(seq_strategy(5), 2..7), 2..6)
    ) {
        let ky = KernelSpec::exp_hamming(1.3);
        let a = alphabet();
        let records: Vec<ReliabilityRecord> = sets
            .iter()
            .map(|s| ReliabilityRecord::new(
                Sequence::empty(&a).into(),
                Sequence::empty(&a).into(),
                s.iter().cloned().map(Into::into).collect(),
            ))
            .collect();
        let m = mmd_matrix(&records, &ky).unwrap();
        prop_assert!(m.is_symmetric());
        for i in 0..sets.len() {
            for j in 0..sets.len() {
                if i != j {
                    let direct = mmd_sq_unbiased(&sets[i], &sets[j], &ky).unwrap();
                    prop_assert!((m.get(i, j) - direct).abs() <= 1e-12 * (1.0 + direct.abs()));
                }
            }
        }
    }
}

#[test]
fn hamming_is_a_metric_on_short_sequences() {
    let a = Arc::new(Alphabet::new(&["A", "B", "STOP"], Some("STOP")).unwrap());
    let mut all = Vec::new();
    for len in 0..=3u32 {
        for bits in 0..(1u32 << len) {
            let codes = (0..len).map(|i| 1 + ((bits >> i) & 1) as u16).collect();
            all.push(Sequence::from_codes(&a, codes).unwrap());
        }
    }
    assert_eq!(all.len(), 15);
    let d = |x: &Sequence, y: &Sequence| hamming_distance(x, y, HammingMode::TerminalPadded).unwrap();
    for x in &all {
        for y in &all {
            assert_eq!(d(x, y), d(y, x));
            assert_eq!(d(x, y) == 0, x == y);
            for z in &all {
                assert!(d(x, z) <= d(x, y) + d(y, z));
            }
        }
    }
}

#[test]
fn identical_sample_sets_have_zero_mmd() {
    let a = alphabet();
    let s: Vec<Sequence> = ["A B", "C", "", "A A C", "B"]
        .iter()
        .map(|t| Sequence::parse(&a, &t.split_whitespace().collect::<Vec<_>>()).unwrap())
        .collect();
    assert_eq!(mmd_sq_unbiased(&s, &s, &KernelSpec::exp_hamming(1.0)).unwrap(), 0.0);
}
