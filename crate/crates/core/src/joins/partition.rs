use super::kernels::{self, Digit, KernelVariant};
use crate::datagen::Tuple;
use crate::mem::SharedMut;
use crate::team;
use std::sync::{Barrier, OnceLock};

/// Radix-digit counts of a scanned relation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Histogram {
    pub bins: Vec<u64>,
    pub radix_bits: u32,
    pub mask: u32,
    pub shift: u32,
}

impl Histogram {
    pub fn total(&self) -> u64 {
        self.bins.iter().sum()
    }

    /// Exclusive prefix sum, with the total appended.
    pub fn offsets(&self) -> Vec<u64> {
        let mut out = Vec::with_capacity(self.bins.len() + 1);
        let mut acc = 0;
        out.push(0);
        for &b in &self.bins {
            acc += b;
            out.push(acc);
        }
        out
    }
}

/// Counts tuples per radix digit `(key & mask) >> shift`.
///
/// # Panics
/// If `radix_bits + shift > 32`.
pub fn compute_histogram(
    data: &[Tuple],
    radix_bits: u32,
    shift: u32,
    variant: KernelVariant,
) -> Histogram {
    let digit = Digit::new(radix_bits, shift);
    let mut bins = vec![0u64; 1 << radix_bits];
    kernels::histogram_into(data, digit, variant, &mut bins);
    Histogram {
        bins,
        radix_bits,
        mask: digit.mask,
        shift,
    }
}

/// Tuples laid out contiguously by radix digit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionedRelation {
    pub tuples: Vec<Tuple>,
    /// `offsets[p]..offsets[p + 1]` is partition `p`.
    pub offsets: Vec<u64>,
    pub radix_bits: u32,
    pub shift: u32,
}

impl PartitionedRelation {
    pub fn partition_count(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn partition(&self, p: usize) -> &[Tuple] {
        &self.tuples[self.offsets[p] as usize..self.offsets[p + 1] as usize]
    }

    /// Checks the offset and digit invariants with a full scan.
    pub fn is_sound(&self) -> bool {
        let digit = Digit::new(self.radix_bits, self.shift);
        self.offsets.first() == Some(&0)
            && self.offsets.last() == Some(&(self.tuples.len() as u64))
            && self.offsets.len() == (1usize << self.radix_bits) + 1
            && self.offsets.windows(2).all(|w| w[0] <= w[1])
            && (0..self.partition_count())
                .all(|p| self.partition(p).iter().all(|t| digit.of(t.key) == p))
    }
}

/// Per-thread write cursors for a two-phase parallel scatter: thread `t`
/// writes digit `d` starting at the global start of `d` plus the counts of
/// `d` in all chunks before `t`.
pub(crate) fn chunk_cursors(hists: &[&[u64]], tid: usize, base: usize) -> Vec<usize> {
    let bins = hists[0].len();
    let mut cursors = Vec::with_capacity(bins);
    let mut acc = base;
    for d in 0..bins {
        let before: u64 = hists[..tid].iter().map(|h| h[d]).sum();
        cursors.push(acc + before as usize);
        acc += hists.iter().map(|h| h[d]).sum::<u64>() as usize;
    }
    cursors
}

/// Two-phase parallel radix partitioning: every worker histograms its
/// contiguous input chunk, the merged histograms give each worker private
/// write cursors, and every worker scatters its chunk. Relative order of a
/// chunk's tuples is kept within each partition.
pub fn radix_partition(
    data: &[Tuple],
    radix_bits: u32,
    shift: u32,
    threads: usize,
    variant: KernelVariant,
) -> PartitionedRelation {
    let digit = Digit::new(radix_bits, shift);
    let threads = threads.max(1);
    let mut out = vec![Tuple::default(); data.len()];
    let chunks = team::chunk_ranges(data.len(), threads, 1);
    let hists: Vec<OnceLock<Vec<u64>>> = (0..threads).map(|_| OnceLock::new()).collect();
    let barrier = Barrier::new(threads);
    let dst = SharedMut::new(&mut out);

    team::run(threads, |tid| {
        let chunk = &data[chunks[tid].clone()];
        let mut bins = vec![0u64; 1 << radix_bits];
        kernels::histogram_into(chunk, digit, variant, &mut bins);
        hists[tid].set(bins).unwrap();
        barrier.wait();
        let all: Vec<&[u64]> = hists.iter().map(|h| h.get().unwrap().as_slice()).collect();
        let mut cursors = chunk_cursors(&all, tid, 0);
        // cursor ranges of distinct workers are disjoint by construction
        unsafe { kernels::scatter(chunk, digit, variant, &mut cursors, dst.ptr()) };
    });

    let mut offsets = vec![0u64; (1 << radix_bits) + 1];
    for h in &hists {
        for (d, &c) in h.get().unwrap().iter().enumerate() {
            offsets[d + 1] += c;
        }
    }
    for d in 1..offsets.len() {
        offsets[d] += offsets[d - 1];
    }
    PartitionedRelation {
        tuples: out,
        offsets,
        radix_bits,
        shift,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tuples(keys: &[u32]) -> Vec<Tuple> {
        keys.iter().map(|&k| Tuple::new(k, k)).collect()
    }

    #[test]
    fn four_keys_two_bits() {
        for v in KernelVariant::ALL {
            let h = compute_histogram(&tuples(&[0, 1, 2, 3]), 2, 0, v);
            assert_eq!(h.bins, vec![1, 1, 1, 1]);
            assert_eq!(h.mask, 0b11);
        }
    }

    #[test]
    fn constant_key_lands_in_one_bin() {
        let data = tuples(&[5; 37]);
        for v in KernelVariant::ALL {
            let h = compute_histogram(&data, 2, 0, v);
            assert_eq!(h.bins, vec![0, 37, 0, 0]);
        }
    }

    #[test]
    fn mask_is_shifted() {
        let h = compute_histogram(&[], 3, 5, KernelVariant::Naive);
        assert_eq!(h.mask, 0b111 << 5);
        assert_eq!(h.bins.len(), 8);
    }

    #[test]
    #[should_panic]
    fn too_many_bits_panics() {
        compute_histogram(&[], 20, 13, KernelVariant::Naive);
    }

    #[test]
    fn small_partition_example() {
        for threads in [1, 2, 3] {
            let p = radix_partition(&tuples(&[3, 1, 2, 0]), 1, 0, threads, KernelVariant::Naive);
            assert_eq!(p.offsets, vec![0, 2, 4]);
            let mut p0: Vec<u32> = p.partition(0).iter().map(|t| t.key).collect();
            let mut p1: Vec<u32> = p.partition(1).iter().map(|t| t.key).collect();
            p0.sort();
            p1.sort();
            assert_eq!(p0, vec![0, 2]);
            assert_eq!(p1, vec![1, 3]);
            assert!(p.is_sound());
        }
    }

    #[test]
    fn empty_relation_offsets_zero() {
        let p = radix_partition(&[], 3, 0, 4, KernelVariant::Unrolled8);
        assert_eq!(p.offsets, vec![0; 9]);
        assert!(p.is_sound());
    }

    #[test]
    fn chunk_order_is_stable() {
        // payload records input position
        let data: Vec<Tuple> = (0..5000u32)
            .map(|i| Tuple::new(i.wrapping_mul(2_654_435_761) >> 7, i))
            .collect();
        let threads = 3;
        let chunks = team::chunk_ranges(data.len(), threads, 1);
        let p = radix_partition(&data, 4, 2, threads, KernelVariant::Simd32);
        for part in 0..p.partition_count() {
            let pos: Vec<u32> = p.partition(part).iter().map(|t| t.payload).collect();
            for c in &chunks {
                let mine: Vec<u32> = pos
                    .iter()
                    .copied()
                    .filter(|&x| c.contains(&(x as usize)))
                    .collect();
                assert!(mine.windows(2).all(|w| w[0] < w[1]));
            }
        }
    }
}
