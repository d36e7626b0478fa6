use olap_core::datagen::{generate_fk_pair, Relation, Tuple};
use olap_core::joins::{
    compute_histogram, crack_partition, crack_radix, radix_partition, JoinAlgorithm, JoinBuffers,
    JoinOptions, JoinedRow, KernelVariant,
};
use olap_core::mem::AllocMode;
use olap_core::sync::QueueKind;
use proptest::prelude::*;

/// Sort-merge equi-join, independent of every hash-based code path.
fn oracle(build: &[Tuple], probe: &[Tuple]) -> Vec<JoinedRow> {
    let mut r = build.to_vec();
    let mut s = probe.to_vec();
    r.sort();
    s.sort();
    let mut out = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < r.len() && j < s.len() {
        match r[i].key.cmp(&s[j].key) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                let k = r[i].key;
                let i_end = i + r[i..].iter().take_while(|t| t.key == k).count();
                let j_end = j + s[j..].iter().take_while(|t| t.key == k).count();
                for a in &r[i..i_end] {
                    for b in &s[j..j_end] {
                        out.push(JoinedRow {
                            key: k,
                            left_payload: a.payload,
                            right_payload: b.payload,
                        });
                    }
                }
                i = i_end;
                j = j_end;
            }
        }
    }
    out.sort();
    out
}

fn naive_bins(data: &[Tuple], bits: u32, shift: u32) -> Vec<u64> {
    let mut bins = vec![0u64; 1 << bits];
    for t in data {
        let d = (u64::from(t.key) >> shift) & ((1u64 << bits) - 1);
        bins[d as usize] += 1;
    }
    bins
}

fn opts(threads: usize, b1: u32, b2: u32) -> JoinOptions {
    JoinOptions {
        threads,
        radix_bits_pass1: b1,
        radix_bits_pass2: b2,
        materialize: true,
        ..JoinOptions::default()
    }
}

fn sorted(mut rows: Vec<JoinedRow>) -> Vec<JoinedRow> {
    rows.sort();
    rows
}

#[test]
fn fk_pair_matches_probe_cardinality() {
    let (r, s) = generate_fk_pair(20_000, 80_000, 7).unwrap();
    for algo in JoinAlgorithm::ALL {
        let res = algo.run(&r, &s, &opts(4, 5, 5)).unwrap();
        assert_eq!(res.match_count, 80_000, "{algo}");
        assert_eq!(res.output.unwrap().len(), 80_000);
    }
}

#[test]
fn missing_probe_key_is_not_matched() {
    let r = Relation::from(vec![Tuple::new(1, 10), Tuple::new(2, 20)]);
    let s = Relation::from(vec![Tuple::new(1, 1), Tuple::new(1, 2), Tuple::new(3, 3)]);
    for algo in JoinAlgorithm::ALL {
        let res = algo.run(&r, &s, &opts(2, 1, 0)).unwrap();
        assert_eq!(res.match_count, 2, "{algo}");
    }
}

#[test]
fn materialized_output_equals_oracle_at_1e5() {
    let (r, s) = generate_fk_pair(25_000, 75_000, 99).unwrap();
    let expected = oracle(r.tuples(), s.tuples());
    for algo in JoinAlgorithm::ALL {
        for variant in KernelVariant::ALL {
            let mut o = opts(3, 6, 4);
            o.kernel_variant = variant;
            let res = algo.run(&r, &s, &o).unwrap();
            assert_eq!(sorted(res.output.unwrap()), expected, "{algo} {variant:?}");
        }
    }
}

#[test]
fn match_count_independent_of_threads_and_queue() {
    let (r, s) = generate_fk_pair(8192, 30_000, 3).unwrap();
    for algo in JoinAlgorithm::ALL {
        for threads in [1, 2, 4, 8] {
            for queue in [QueueKind::LockFree, QueueKind::Mutex] {
                let mut o = opts(threads, 4, 4);
                o.queue_kind = queue;
                o.materialize = false;
                let res = algo.run(&r, &s, &o).unwrap();
                assert_eq!(res.match_count, 30_000);
                assert!(res.output.is_none());
            }
        }
    }
}

#[test]
fn phase_names() {
    let (r, s) = generate_fk_pair(4096, 4096, 1).unwrap();
    let o = opts(2, 3, 3);
    let rho = JoinAlgorithm::Rho.run(&r, &s, &o).unwrap();
    let names: Vec<&str> = rho.phase_times.keys().map(String::as_str).collect();
    for p in ["hist1", "copy1", "hist2", "copy2", "build", "probe"] {
        assert!(names.contains(&p), "missing {p}");
    }
    let pht = JoinAlgorithm::Pht.run(&r, &s, &o).unwrap();
    assert!(pht.phase_times.contains_key("build") && pht.phase_times.contains_key("probe"));
    let crk = JoinAlgorithm::Crk.run(&r, &s, &o).unwrap();
    for p in ["copy", "crack", "build", "probe"] {
        assert!(crk.phase_times.contains_key(p), "missing {p}");
    }
    for res in [&rho, &pht, &crk] {
        let phases: u64 = res.phase_times.values().sum();
        assert!(phases <= res.elapsed_ns + res.elapsed_ns / 10 + 1_000_000);
    }
}

#[test]
fn too_many_partitions_is_config_error() {
    let (r, s) = generate_fk_pair(100, 100, 1).unwrap();
    for algo in [JoinAlgorithm::Rho, JoinAlgorithm::Crk] {
        let err = algo.run(&r, &s, &opts(1, 7, 7)).unwrap_err();
        assert!(matches!(err, olap_core::Error::Config(_)), "{err}");
    }
    assert!(JoinAlgorithm::Pht.run(&r, &s, &opts(1, 7, 7)).is_ok());
    assert!(JoinAlgorithm::Rho.run(&r, &s, &opts(1, 20, 8)).is_err());
    assert!(JoinAlgorithm::Rho.run(&r, &s, &opts(0, 1, 1)).is_err());
}

#[test]
fn empty_probe_side() {
    let (r, s) = generate_fk_pair(64, 0, 1).unwrap();
    for algo in JoinAlgorithm::ALL {
        let res = algo.run(&r, &s, &opts(2, 2, 2)).unwrap();
        assert_eq!(res.match_count, 0);
        assert_eq!(res.output.unwrap().len(), 0);
    }
}

#[test]
fn reused_buffers_give_same_answer() {
    let (r, s) = generate_fk_pair(5000, 12_000, 4).unwrap();
    for algo in JoinAlgorithm::ALL {
        for mode in [AllocMode::PreallocTouch, AllocMode::Lazy] {
            let mut buf =
                JoinBuffers::for_join(algo, r.len(), s.len(), &opts(2, 4, 3), mode).unwrap();
            for _ in 0..3 {
                let res = algo.run_with(&r, &s, &opts(2, 4, 3), &mut buf).unwrap();
                assert_eq!(res.match_count, 12_000);
            }
        }
        let mut small =
            JoinBuffers::for_join(algo, 10, 10, &opts(1, 1, 1), AllocMode::Lazy).unwrap();
        assert!(algo.run_with(&r, &s, &opts(1, 1, 1), &mut small).is_err());
    }
}

#[test]
fn duplicate_build_keys_produce_all_pairs() {
    // more matches than probe tuples, so the output spills past its range
    let r: Relation = (0..4000u32).map(|i| Tuple::new(i % 100, i)).collect();
    let s: Relation = (0..3000u32).map(|i| Tuple::new(i % 150, i)).collect();
    let expected = oracle(r.tuples(), s.tuples());
    assert_eq!(expected.len(), 100 * 40 * 20);
    for algo in JoinAlgorithm::ALL {
        let res = algo.run(&r, &s, &opts(3, 2, 2)).unwrap();
        assert_eq!(sorted(res.output.unwrap()), expected, "{algo}");
    }
}

#[test]
fn unmaterialized_buffers_reject_materializing_run() {
    let (r, s) = generate_fk_pair(100, 100, 1).unwrap();
    let plain = opts(1, 1, 1);
    let plain = JoinOptions {
        materialize: false,
        ..plain
    };
    let mut buf =
        JoinBuffers::for_join(JoinAlgorithm::Rho, 100, 100, &plain, AllocMode::Lazy).unwrap();
    assert!(JoinAlgorithm::Rho
        .run_with(&r, &s, &opts(1, 1, 1), &mut buf)
        .is_err());
    assert!(JoinAlgorithm::Rho
        .run_with(&r, &s, &plain, &mut buf)
        .is_ok());
}

#[test]
fn crk_agrees_with_rho_on_counts() {
    let (r, s) = generate_fk_pair(50_000, 50_000, 11).unwrap();
    let o = JoinOptions {
        threads: 4,
        ..JoinOptions::default()
    };
    let rho = JoinAlgorithm::Rho.run(&r, &s, &o).unwrap();
    let crk = JoinAlgorithm::Crk.run(&r, &s, &o).unwrap();
    assert_eq!(rho.match_count, crk.match_count);
}

#[test]
fn histogram_variants_on_a_million_keys() {
    let (_, s) = generate_fk_pair(1 << 20, 1_000_000, 5).unwrap();
    let expected = naive_bins(s.tuples(), 10, 3);
    for v in KernelVariant::ALL {
        assert_eq!(compute_histogram(s.tuples(), 10, 3, v).bins, expected);
    }
}

#[test]
fn recursive_cracking_equals_radix_partitioning() {
    let (_, s) = generate_fk_pair(1000, 20_000, 8).unwrap();
    let mut cracked = s.tuples().to_vec();
    let offsets = crack_radix(&mut cracked, 6);
    let part = radix_partition(s.tuples(), 6, 0, 3, KernelVariant::Unrolled8);
    assert_eq!(offsets, part.offsets);
    for p in 0..64 {
        let mut a = cracked[offsets[p] as usize..offsets[p + 1] as usize].to_vec();
        let mut b = part.partition(p).to_vec();
        a.sort();
        b.sort();
        assert_eq!(a, b);
    }
}

fn tuples_strategy(max: usize) -> impl Strategy<Value = Vec<Tuple>> {
    prop::collection::vec((any::<u32>(), any::<u32>()), 0..max)
        .prop_map(|v| v.into_iter().map(|(k, p)| Tuple::new(k, p)).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn histogram_kernels_are_equivalent(
        data in tuples_strategy(300),
        bits in 0u32..=12,
        shift in 0u32..=20,
    ) {
        let expected = naive_bins(&data, bits, shift);
        for v in KernelVariant::ALL {
            let h = compute_histogram(&data, bits, shift, v);
            prop_assert_eq!(&h.bins, &expected);
            prop_assert_eq!(h.total(), data.len() as u64);
            prop_assert_eq!(u64::from(h.mask), ((1u64 << bits) - 1) << shift);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn radix_partition_is_sound_permutation(
        data in tuples_strategy(2000),
        bits in 0u32..=8,
        shift in 0u32..=16,
        threads in 1usize..=4,
    ) {
        for v in KernelVariant::ALL {
            let p = radix_partition(&data, bits, shift, threads, v);
            prop_assert!(p.is_sound());
            let mut a = p.tuples.clone();
            let mut b = data.clone();
            a.sort();
            b.sort();
            prop_assert_eq!(a, b);
            let expected: Vec<u64> = {
                let bins = naive_bins(&data, bits, shift);
                std::iter::once(0).chain(bins.iter().scan(0, |acc, &x| { *acc += x; Some(*acc) })).collect()
            };
            prop_assert_eq!(&p.offsets, &expected);
        }
    }

    #[test]
    fn crack_splits_by_bit_and_keeps_multiset(data in tuples_strategy(500), bit in 0u32..32) {
        let mut d = data.clone();
        let split = crack_partition(&mut d, bit);
        prop_assert!(d[..split].iter().all(|t| t.key >> bit & 1 == 0));
        prop_assert!(d[split..].iter().all(|t| t.key >> bit & 1 == 1));
        let mut a = d;
        let mut b = data;
        a.sort();
        b.sort();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn joins_equal_oracle(
        build_n in 1u64..600,
        probe_n in 0u64..1500,
        seed in any::<u64>(),
        threads in prop::sample::select(vec![1usize, 2, 4, 8]),
        extra in tuples_strategy(50),
    ) {
        let (r, s) = generate_fk_pair(build_n, probe_n, seed).unwrap();
        // also probe with keys outside the build set
        let s: Relation = s.tuples().iter().copied().chain(extra).collect();
        let expected = oracle(r.tuples(), s.tuples());
        let bits = (u64::BITS - 1 - build_n.leading_zeros()).min(6);
        for algo in JoinAlgorithm::ALL {
            let o = opts(threads, bits / 2, bits - bits / 2);
            let res = algo.run(&r, &s, &o).unwrap();
            prop_assert_eq!(res.match_count, expected.len() as u64);
            prop_assert_eq!(sorted(res.output.unwrap()), expected.clone());
        }
    }
}
