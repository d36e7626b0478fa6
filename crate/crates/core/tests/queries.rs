use olap_core::datagen::{generate_tpch_lite, TpchLiteDb};
use olap_core::joins::{JoinAlgorithm, KernelVariant};
use olap_core::queries::{
    auto_radix_bits, reference_count, run_query, run_query_with, Predicates, QueryId, QueryOptions,
    QueryPlan,
};
use olap_core::sync::QueueKind;

#[test]
fn counts_agree_with_reference_over_20_seeds() {
    for seed in 0..20 {
        let db = generate_tpch_lite(0.001, seed).unwrap();
        for q in QueryId::ALL {
            let got = run_query(q, &db, &QueryOptions::default()).unwrap();
            assert_eq!(got.count, reference_count(q, &db), "{q} seed {seed}");
        }
    }
}

#[test]
fn counts_invariant_across_configurations() {
    let db = generate_tpch_lite(0.01, 42).unwrap();
    for q in QueryId::ALL {
        let base = run_query(q, &db, &QueryOptions::default()).unwrap().count;
        assert!(base > 0, "{q} selects nothing");
        for join in JoinAlgorithm::ALL {
            for threads in [1, 2, 4] {
                for kernel_variant in KernelVariant::ALL {
                    for queue_kind in [QueueKind::LockFree, QueueKind::Mutex] {
                        let o = QueryOptions {
                            threads,
                            join,
                            kernel_variant,
                            queue_kind,
                        };
                        assert_eq!(run_query(q, &db, &o).unwrap().count, base, "{q} {o:?}");
                    }
                }
            }
        }
    }
}

#[test]
fn operator_times_follow_plan() {
    let db = generate_tpch_lite(0.002, 1).unwrap();
    for q in QueryId::ALL {
        let r = run_query(q, &db, &QueryOptions::default()).unwrap();
        let names: Vec<&str> = r.operator_times.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, QueryPlan::for_query(q).operator_names());
        assert!(r.operator_sum_ns() <= r.total_ns);
    }
}

#[test]
fn empty_lineitem_counts_zero() {
    let mut db = generate_tpch_lite(0.001, 3).unwrap();
    db.lineitem = Default::default();
    for q in QueryId::ALL {
        assert_eq!(reference_count(q, &db), 0);
        assert_eq!(
            run_query(q, &db, &QueryOptions::default()).unwrap().count,
            0
        );
    }
    let empty = TpchLiteDb::default();
    assert_eq!(
        run_query(QueryId::Q3, &empty, &QueryOptions::default())
            .unwrap()
            .count,
        0
    );
}

#[test]
fn widening_q12_dates_never_decreases() {
    let db = generate_tpch_lite(0.005, 9).unwrap();
    let mut pr = Predicates::standard();
    let mut last = 0;
    for widen in [0, 30, 90, 365, 2000] {
        pr.q12_from = Predicates::standard().q12_from - widen;
        pr.q12_to = Predicates::standard().q12_to + widen;
        let n = run_query_with(QueryId::Q12, &db, &QueryOptions::default(), &pr)
            .unwrap()
            .count;
        assert!(n >= last);
        last = n;
    }
}

#[test]
fn query_ids_parse() {
    assert_eq!("q19".parse::<QueryId>().unwrap(), QueryId::Q19);
    assert_eq!("3".parse::<QueryId>().unwrap(), QueryId::Q3);
    assert!("q4".parse::<QueryId>().is_err());
    assert!(QueryId::from_number(7).is_err());
}

#[test]
fn zero_threads_rejected() {
    let db = generate_tpch_lite(0.001, 3).unwrap();
    let o = QueryOptions {
        threads: 0,
        ..QueryOptions::default()
    };
    assert!(run_query(QueryId::Q12, &db, &o).is_err());
}

#[test]
fn radix_bits_respect_build_size() {
    for n in [0usize, 1, 2, 7, 1000, 5000, 1 << 20, 1 << 30] {
        let (a, b) = auto_radix_bits(n);
        assert!(a + b <= 27);
        assert!(1u64 << (a + b) <= n.max(1) as u64);
    }
}
