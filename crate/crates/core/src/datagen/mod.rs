//! Seeded generation of join inputs, scan columns, and a TPC-H-style
//! integer database.
//!
//! All randomness comes from SplitMix64 (Steele, Lea, Flood 2014) seeded with
//! the caller's 64-bit seed, so the same seed yields byte-identical data on
//! every platform.

mod relation;
pub mod tpch;

pub use relation::{read_relation, write_relation, Relation, Tuple, RELATION_MAGIC};
pub use tpch::{generate_tpch_lite, TpchLiteDb};

use crate::error::{Error, Result};
use rand::{Rng, RngCore, SeedableRng};
use rand_xoshiro::SplitMix64;

pub fn rng(seed: u64) -> SplitMix64 {
    SplitMix64::seed_from_u64(seed)
}

/// Number of 8-byte tuples in `mb` mebibytes.
pub fn tuples_for_mb(mb: u64) -> u64 {
    mb * (1 << 20) / std::mem::size_of::<Tuple>() as u64
}

/// Builds a foreign-key join input pair.
///
/// The build relation holds every key in `1..=build_cardinality` exactly
/// once, in shuffled order. Every probe key is drawn uniformly from the build
/// key set. Payloads equal keys.
pub fn generate_fk_pair(
    build_cardinality: u64,
    probe_cardinality: u64,
    seed: u64,
) -> Result<(Relation, Relation)> {
    if build_cardinality == 0 {
        return Err(Error::InvalidArgument(
            "build cardinality must be at least 1".into(),
        ));
    }
    if build_cardinality > u32::MAX as u64 {
        return Err(Error::InvalidArgument(format!(
            "build cardinality {build_cardinality} exceeds the 32-bit key domain"
        )));
    }
    let n = build_cardinality as u32;
    let mut rng = rng(seed);

    let mut build: Vec<Tuple> = (1..=n).map(|k| Tuple::new(k, k)).collect();
    // Fisher-Yates
    for i in (1..build.len()).rev() {
        let j = rng.gen_range(0..=i);
        build.swap(i, j);
    }

    let probe: Vec<Tuple> = (0..probe_cardinality)
        .map(|_| {
            let k = rng.gen_range(1..=n);
            Tuple::new(k, k)
        })
        .collect();

    Ok((Relation::from(build), Relation::from(probe)))
}

/// A column of unsigned bytes, the input of the predicate scans.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Column8 {
    values: Vec<u8>,
}

impl Column8 {
    pub fn new(values: Vec<u8>) -> Self {
        Column8 { values }
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

impl From<Vec<u8>> for Column8 {
    fn from(values: Vec<u8>) -> Self {
        Column8 { values }
    }
}

/// Uniform i.i.d. bytes.
pub fn generate_column(length: u64, seed: u64) -> Column8 {
    let mut values = vec![0u8; length as usize];
    rng(seed).fill_bytes(&mut values);
    Column8 { values }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn small_fk_pair_is_closed() {
        let (build, probe) = generate_fk_pair(4, 8, 42).unwrap();
        let mut keys: Vec<u32> = build.iter().map(|t| t.key).collect();
        keys.sort_unstable();
        assert_eq!(keys, vec![1, 2, 3, 4]);
        assert_eq!(probe.len(), 8);
        assert!(probe.iter().all(|t| (1..=4).contains(&t.key)));
    }

    #[test]
    fn single_key_build() {
        let (build, probe) = generate_fk_pair(1, 5, 9).unwrap();
        assert_eq!(build.tuples(), &[Tuple::new(1, 1)]);
        assert_eq!(probe.len(), 5);
        assert!(probe.iter().all(|t| t.key == 1));
    }

    #[test]
    fn zero_build_is_rejected() {
        assert!(matches!(
            generate_fk_pair(0, 5, 1),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn payload_equals_key() {
        let (build, probe) = generate_fk_pair(1000, 3000, 5).unwrap();
        assert!(build.iter().chain(probe.iter()).all(|t| t.key == t.payload));
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = generate_fk_pair(5000, 7000, 77).unwrap();
        let b = generate_fk_pair(5000, 7000, 77).unwrap();
        let c = generate_fk_pair(5000, 7000, 78).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(generate_column(8, 3), generate_column(8, 3));
    }

    #[test]
    fn cache_exceed_sizes() {
        assert_eq!(tuples_for_mb(100), 13_107_200);
        assert_eq!(tuples_for_mb(400), 52_428_800);
    }

    #[test]
    fn empty_column() {
        assert!(generate_column(0, 1).is_empty());
    }

    #[test]
    fn column_half_below_128() {
        let col = generate_column(1 << 26, 11);
        let low = col.values().iter().filter(|&&v| v <= 127).count();
        let frac = low as f64 / col.len() as f64;
        assert!((frac - 0.5).abs() <= 0.001, "{frac}");
    }

    // Pearson chi-square statistic against a uniform expectation.
    fn chi_square(counts: &[u64], expected: f64) -> f64 {
        counts
            .iter()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum()
    }

    // Upper-tail critical value for alpha = 0.001 by the Wilson-Hilferty
    // approximation (z = 3.0902).
    fn chi_square_critical(dof: f64) -> f64 {
        let z = 3.090_232_306;
        let a = 2.0 / (9.0 * dof);
        dof * (1.0 - a + z * a.sqrt()).powi(3)
    }

    #[test]
    fn probe_keys_and_build_positions_are_uniform() {
        let n = 1_000u64;
        let m = 1_000_000u64;
        let (build, probe) = generate_fk_pair(n, m, 2024).unwrap();

        let mut freq = vec![0u64; n as usize];
        for t in probe.iter() {
            freq[(t.key - 1) as usize] += 1;
        }
        let stat = chi_square(&freq, m as f64 / n as f64);
        assert!(stat < chi_square_critical((n - 1) as f64), "{stat}");

        // Position of key k after the shuffle, bucketed into 10 bins of the
        // key range vs 10 bins of positions, over many seeds.
        let bins = 10usize;
        let mut table = vec![0u64; bins * bins];
        let mut total = 0u64;
        for seed in 0..200u64 {
            let (b, _) = generate_fk_pair(n, 0, seed).unwrap();
            for (pos, t) in b.iter().enumerate() {
                let kb = ((t.key - 1) as usize * bins) / n as usize;
                let pb = (pos * bins) / n as usize;
                table[kb * bins + pb] += 1;
                total += 1;
            }
        }
        let stat = chi_square(&table, total as f64 / (bins * bins) as f64);
        assert!(
            stat < chi_square_critical((bins * bins - 1) as f64),
            "{stat}"
        );
        let _ = build;
    }

    #[test]
    fn probe_subset_of_build() {
        let (build, probe) = generate_fk_pair(10_000, 50_000, 3).unwrap();
        let keys: HashSet<u32> = build.iter().map(|t| t.key).collect();
        assert_eq!(keys.len(), 10_000);
        assert!(probe.iter().all(|t| keys.contains(&t.key)));
    }
}
