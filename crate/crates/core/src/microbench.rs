//! Memory-subsystem micro-benchmarks: dependent random reads (pointer
//! chasing), independent random writes, and linear read/write bandwidth.

use crate::datagen::rng;
use crate::error::{Error, Result};
use crate::team;
use crate::timing::Clock;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::hint::black_box;
use std::sync::Barrier;
use std::time::Duration;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MetricKind {
    NsPerOp,
    GbPerSec,
    OpsPerSec,
}

impl MetricKind {
    pub fn unit(self) -> &'static str {
        match self {
            MetricKind::NsPerOp => "ns/op",
            MetricKind::GbPerSec => "GB/s",
            MetricKind::OpsPerSec => "ops/s",
        }
    }
}

/// Raw counters of one measurement; the derived metric is computed from them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MicrobenchResult {
    pub kind: MetricKind,
    pub op_count: u64,
    pub elapsed_ns: u64,
    pub bytes_touched: u64,
}

impl MicrobenchResult {
    pub fn new(kind: MetricKind, op_count: u64, elapsed_ns: u64, bytes_touched: u64) -> Self {
        MicrobenchResult {
            kind,
            op_count,
            elapsed_ns,
            bytes_touched,
        }
    }

    pub fn metric(&self) -> f64 {
        if self.elapsed_ns == 0 {
            return 0.0;
        }
        let ns = self.elapsed_ns as f64;
        match self.kind {
            MetricKind::NsPerOp if self.op_count == 0 => 0.0,
            MetricKind::NsPerOp => ns / self.op_count as f64,
            // bytes per nanosecond is GB/s
            MetricKind::GbPerSec => self.bytes_touched as f64 / ns,
            MetricKind::OpsPerSec => self.op_count as f64 * 1e9 / ns,
        }
    }
}

/// Slot `i` holds the index of the slot visited after `i`; all slots form
/// one cycle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainArray {
    slots: Vec<u64>,
}

impl ChainArray {
    /// Uniform random cyclic permutation (Sattolo's algorithm).
    pub fn random_cycle(len: usize, seed: u64) -> Self {
        let mut order: Vec<u64> = (0..len as u64).collect();
        let mut rng = rng(seed);
        for i in (1..len).rev() {
            let j = rng.gen_range(0..i);
            order.swap(i, j);
        }
        ChainArray { slots: order }
    }

    pub fn slots(&self) -> &[u64] {
        &self.slots
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Follows `steps` links from `start` and returns the final slot.
    #[inline(never)]
    pub fn walk(&self, start: u64, steps: u64) -> u64 {
        let slots = &self.slots[..];
        let mut idx = start;
        for _ in 0..steps {
            // in bounds: every slot value is an index into `slots`
            idx = unsafe { *slots.get_unchecked(idx as usize) };
        }
        idx
    }

    pub fn is_single_cycle(&self) -> bool {
        let n = self.slots.len();
        if n == 0 {
            return false;
        }
        let mut seen = vec![false; n];
        let mut idx = 0usize;
        for _ in 0..n {
            if seen[idx] {
                return false;
            }
            seen[idx] = true;
            idx = self.slots[idx] as usize;
        }
        idx == 0
    }
}

#[derive(Debug, Clone)]
pub struct ChaseResult {
    pub result: MicrobenchResult,
    pub final_index: u64,
}

/// Mean latency of a dependent load over a random cycle of `array_bytes / 8`
/// slots.
pub fn chase_chain(array_bytes: usize, steps: u64, seed: u64) -> Result<ChaseResult> {
    if array_bytes < 64 {
        return Err(Error::InvalidArgument(format!(
            "chain array must be at least 64 bytes, got {array_bytes}"
        )));
    }
    let chain = ChainArray::random_cycle(array_bytes / 8, seed);
    black_box(chain.walk(0, steps.min(chain.len() as u64)));

    let clock = Clock::global();
    let start = clock.now();
    let final_index = black_box(chain.walk(0, steps));
    let elapsed_ns = clock.elapsed_ns(start);
    Ok(ChaseResult {
        result: MicrobenchResult::new(MetricKind::NsPerOp, steps, elapsed_ns, steps * 8),
        final_index,
    })
}

/// MMIX linear congruential generator constants (Knuth).
pub const LCG_MULTIPLIER: u64 = 6_364_136_223_846_793_005;
pub const LCG_INCREMENT: u64 = 1_442_695_040_888_963_407;

/// Slot index generator for [`random_writes`].
///
/// The top `log2(next_pow2(slots))` bits of the LCG state select a slot;
/// values past the end fold back by subtracting `slots`. An optional address
/// mask then restricts the set of reachable slots.
#[derive(Debug, Clone)]
pub struct LcgSlots {
    state: u64,
    shift: u32,
    slots: u64,
    address_mask: u64,
}

impl LcgSlots {
    pub fn new(seed: u64, slots: u64, address_mask: Option<u64>) -> Self {
        let bits = slots.next_power_of_two().trailing_zeros();
        LcgSlots {
            state: seed,
            shift: 64 - bits,
            slots,
            address_mask: address_mask.unwrap_or(u64::MAX),
        }
    }

    #[inline(always)]
    pub fn next_slot(&mut self) -> u64 {
        self.state = self
            .state
            .wrapping_mul(LCG_MULTIPLIER)
            .wrapping_add(LCG_INCREMENT);
        let mut idx = if self.shift == 64 {
            0
        } else {
            self.state >> self.shift
        };
        if idx >= self.slots {
            idx -= self.slots;
        }
        idx & self.address_mask
    }
}

#[derive(Debug, Clone)]
pub struct RandomWriteRun {
    pub result: MicrobenchResult,
    pub array: Vec<u64>,
}

/// Performs `writes` 8-byte stores at LCG-chosen slots; store `i` writes
/// the value `i + 1`.
pub fn random_writes(
    array_bytes: usize,
    writes: u64,
    seed: u64,
    address_mask: Option<u64>,
) -> Result<RandomWriteRun> {
    if array_bytes < 8 || !array_bytes.is_multiple_of(8) {
        return Err(Error::InvalidArgument(format!(
            "array size must be a positive multiple of 8 bytes, got {array_bytes}"
        )));
    }
    let slots = array_bytes / 8;
    let mut array = vec![0u64; slots];
    // warm-up: make every page resident
    for v in array.iter_mut() {
        unsafe { std::ptr::write_volatile(v, 0) };
    }

    let mut lcg = LcgSlots::new(seed, slots as u64, address_mask);
    let clock = Clock::global();
    let start = clock.now();
    {
        let out = &mut array[..];
        for i in 0..writes {
            let idx = lcg.next_slot() as usize;
            unsafe { *out.get_unchecked_mut(idx) = i + 1 };
        }
        black_box(out);
    }
    let elapsed_ns = clock.elapsed_ns(start);
    Ok(RandomWriteRun {
        result: MicrobenchResult::new(MetricKind::NsPerOp, writes, elapsed_ns, writes * 8),
        array,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AccessWidth {
    W64,
    W512,
}

impl AccessWidth {
    pub fn bytes(self) -> usize {
        match self {
            AccessWidth::W64 => 8,
            AccessWidth::W512 => 64,
        }
    }

    pub fn bits(self) -> u32 {
        self.bytes() as u32 * 8
    }

    pub fn supported(self) -> bool {
        match self {
            AccessWidth::W64 => true,
            AccessWidth::W512 => simd512::available(),
        }
    }
}

impl std::str::FromStr for AccessWidth {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "64" => Ok(AccessWidth::W64),
            "512" => Ok(AccessWidth::W512),
            other => Err(Error::InvalidArgument(format!(
                "access width must be 64 or 512, got `{other}`"
            ))),
        }
    }
}

/// Value stored in word `i` of the read benchmark's array.
#[inline]
pub fn read_pattern(i: u64) -> u64 {
    i.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ 0x0123_4567_89AB_CDEF
}

/// Value every word holds after a write pass.
pub const WRITE_PATTERN: u64 = 0x5EED_0123_4567_89AB;

#[repr(C, align(64))]
#[derive(Clone, Copy, Default)]
struct CacheLine([u64; 8]);

#[derive(Debug, Clone)]
pub struct LinearResult {
    pub result: MicrobenchResult,
    /// Read: wrapping sum of all words seen in the final pass.
    pub checksum: u64,
    pub passes: u64,
    pub array: Option<Vec<u64>>,
}

#[derive(Debug, Clone, Copy)]
pub struct LinearOptions {
    pub threads: usize,
    pub min_duration: Duration,
    /// Keep the array in the result for verification.
    pub keep_array: bool,
}

impl Default for LinearOptions {
    fn default() -> Self {
        LinearOptions {
            threads: 1,
            min_duration: Duration::from_millis(200),
            keep_array: false,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Direction {
    Read,
    Write,
}

pub fn linear_read(
    array_bytes: usize,
    width: AccessWidth,
    opts: LinearOptions,
) -> Result<LinearResult> {
    linear(array_bytes, width, opts, Direction::Read)
}

pub fn linear_write(
    array_bytes: usize,
    width: AccessWidth,
    opts: LinearOptions,
) -> Result<LinearResult> {
    linear(array_bytes, width, opts, Direction::Write)
}

fn linear(
    array_bytes: usize,
    width: AccessWidth,
    opts: LinearOptions,
    dir: Direction,
) -> Result<LinearResult> {
    if !width.supported() {
        return Err(Error::Unsupported(format!(
            "{}-bit loads and stores need AVX-512F",
            width.bits()
        )));
    }
    if array_bytes < width.bytes() || !array_bytes.is_multiple_of(width.bytes()) {
        return Err(Error::InvalidArgument(format!(
            "array size {array_bytes} must be a positive multiple of {} bytes",
            width.bytes()
        )));
    }
    let threads = opts.threads.max(1);
    let words = array_bytes / 8;
    let mut lines = vec![CacheLine::default(); words.div_ceil(8)];
    let all_words: &mut [u64] = &mut bytemuck_lines(&mut lines)[..words];
    if dir == Direction::Read {
        for (i, w) in all_words.iter_mut().enumerate() {
            *w = read_pattern(i as u64);
        }
    }

    // chunk boundaries on cache lines so both widths see aligned chunks
    let chunks = team::chunk_ranges(words, threads, 8);
    let base = crate::mem::SharedMut::new(all_words);
    let barrier = Barrier::new(threads);
    let clock = Clock::global();
    let min_ns = opts.min_duration.as_nanos() as u64;

    let per_thread = team::run(threads, |tid| {
        let range = chunks[tid].clone();
        // disjoint chunk per worker
        let chunk = unsafe { base.slice_mut(range.start, range.len()) };
        let pass = |chunk: &mut [u64]| -> u64 {
            match (dir, width) {
                (Direction::Read, AccessWidth::W64) => read_words(chunk),
                (Direction::Read, AccessWidth::W512) => unsafe { simd512::read(chunk) },
                (Direction::Write, AccessWidth::W64) => {
                    write_words(chunk);
                    0
                }
                (Direction::Write, AccessWidth::W512) => {
                    unsafe { simd512::write(chunk) };
                    0
                }
            }
        };
        black_box(pass(chunk));
        barrier.wait();
        let start = clock.now();
        let mut passes = 0u64;
        let mut checksum;
        loop {
            checksum = pass(chunk);
            passes += 1;
            if clock.elapsed_ns(start) >= min_ns {
                break;
            }
        }
        let end = clock.now();
        (start, end, passes, (range.len() * 8) as u64, checksum)
    });

    let start = per_thread.iter().map(|t| t.0).min().unwrap();
    let end = per_thread.iter().map(|t| t.1).max().unwrap();
    let bytes: u64 = per_thread.iter().map(|t| t.2 * t.3).sum();
    let passes = per_thread.iter().map(|t| t.2).min().unwrap_or(0);
    let checksum = per_thread.iter().fold(0u64, |acc, t| acc.wrapping_add(t.4));
    let elapsed_ns = clock.ns_between(start, end);
    let array = opts.keep_array.then(|| all_words.to_vec());
    Ok(LinearResult {
        result: MicrobenchResult::new(
            MetricKind::GbPerSec,
            bytes / width.bytes() as u64,
            elapsed_ns,
            bytes,
        ),
        checksum,
        passes,
        array,
    })
}

fn bytemuck_lines(lines: &mut [CacheLine]) -> &mut [u64] {
    // CacheLine is repr(C) over [u64; 8] with no padding
    unsafe { std::slice::from_raw_parts_mut(lines.as_mut_ptr().cast::<u64>(), lines.len() * 8) }
}

#[inline(never)]
fn read_words(words: &[u64]) -> u64 {
    let mut sum = 0u64;
    for w in words {
        sum = sum.wrapping_add(unsafe { std::ptr::read_volatile(w) });
    }
    sum
}

#[inline(never)]
fn write_words(words: &mut [u64]) {
    for w in words.iter_mut() {
        unsafe { std::ptr::write_volatile(w, WRITE_PATTERN) };
    }
}

#[cfg(target_arch = "x86_64")]
mod simd512 {
    use std::arch::x86_64::*;

    pub fn available() -> bool {
        std::arch::is_x86_feature_detected!("avx512f")
    }

    /// # Safety
    /// Caller checks `available()`; `words` is 64-byte aligned with a length
    /// that is a multiple of 8.
    #[target_feature(enable = "avx512f")]
    pub unsafe fn read(words: &[u64]) -> u64 {
        assert_eq!(words.as_ptr() as usize % 64, 0);
        let ptr = words.as_ptr().cast::<__m512i>();
        let n = words.len() / 8;
        let mut acc0 = _mm512_setzero_si512();
        let mut acc1 = _mm512_setzero_si512();
        let mut i = 0;
        while i + 2 <= n {
            acc0 = _mm512_add_epi64(acc0, std::ptr::read_volatile(ptr.add(i)));
            acc1 = _mm512_add_epi64(acc1, std::ptr::read_volatile(ptr.add(i + 1)));
            i += 2;
        }
        if i < n {
            acc0 = _mm512_add_epi64(acc0, std::ptr::read_volatile(ptr.add(i)));
        }
        _mm512_reduce_add_epi64(_mm512_add_epi64(acc0, acc1)) as u64
    }

    /// # Safety
    /// As for [`read`].
    #[target_feature(enable = "avx512f")]
    pub unsafe fn write(words: &mut [u64]) {
        assert_eq!(words.as_ptr() as usize % 64, 0);
        let ptr = words.as_mut_ptr().cast::<__m512i>();
        let v = _mm512_set1_epi64(super::WRITE_PATTERN as i64);
        for i in 0..words.len() / 8 {
            std::ptr::write_volatile(ptr.add(i), v);
        }
    }
}

#[cfg(not(target_arch = "x86_64"))]
mod simd512 {
    pub fn available() -> bool {
        false
    }
    pub unsafe fn read(_: &[u64]) -> u64 {
        unreachable!()
    }
    pub unsafe fn write(_: &mut [u64]) {
        unreachable!()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_of_four_visits_all_slots() {
        for seed in 0..20 {
            let chain = ChainArray::random_cycle(4, seed);
            let mut seen = [false; 4];
            let mut idx = 0u64;
            for _ in 0..4 {
                seen[idx as usize] = true;
                idx = chain.walk(idx, 1);
            }
            assert!(seen.iter().all(|&s| s));
            assert_eq!(idx, 0);
        }
    }

    #[test]
    fn chains_are_single_cycles() {
        for (len, seed) in [(1, 0), (2, 1), (17, 2), (1000, 3), (65_536, 4)] {
            let chain = ChainArray::random_cycle(len, seed);
            assert!(chain.is_single_cycle(), "len {len}");
            assert_eq!(chain.walk(0, len as u64), 0);
        }
    }

    #[test]
    fn chase_zero_steps() {
        let r = chase_chain(4096, 0, 1).unwrap();
        assert_eq!(r.result.op_count, 0);
        assert_eq!(r.final_index, 0);
        assert!(r.result.elapsed_ns < 1_000_000);
    }

    #[test]
    fn chase_rejects_tiny_arrays() {
        assert!(chase_chain(32, 10, 1).is_err());
    }

    #[test]
    fn chase_final_index_matches_walk() {
        let r = chase_chain(8 * 1000, 12_345, 9).unwrap();
        let chain = ChainArray::random_cycle(1000, 9);
        assert_eq!(r.final_index, chain.walk(0, 12_345));
    }

    #[test]
    fn single_slot_array_gets_every_write() {
        let run = random_writes(8, 1000, 5, None).unwrap();
        assert_eq!(run.array, vec![1000]);
    }

    // Replays the documented LCG independently of `LcgSlots`.
    fn replay(slots: u64, writes: u64, seed: u64) -> Vec<u64> {
        let bits = slots.next_power_of_two().trailing_zeros();
        let mut state = seed;
        let mut out = vec![0u64; slots as usize];
        for i in 0..writes {
            state = state
                .wrapping_mul(6_364_136_223_846_793_005)
                .wrapping_add(1_442_695_040_888_963_407);
            let mut idx = if bits == 0 { 0 } else { state >> (64 - bits) };
            if idx >= slots {
                idx -= slots;
            }
            out[idx as usize] = i + 1;
        }
        out
    }

    #[test]
    fn random_writes_land_where_the_lcg_says() {
        for slots in [1u64, 3, 64, 1000, 4096] {
            let run = random_writes(slots as usize * 8, 20_000, 77, None).unwrap();
            assert_eq!(run.array, replay(slots, 20_000, 77));
        }
    }

    #[test]
    fn random_writes_deterministic() {
        let a = random_writes(8 * 4096, 100_000, 3, None).unwrap();
        let b = random_writes(8 * 4096, 100_000, 3, None).unwrap();
        assert_eq!(a.array, b.array);
    }

    #[test]
    fn address_mask_limits_targets() {
        let run = random_writes(8 * 4096, 100_000, 3, Some(0xF)).unwrap();
        assert!(run.array[16..].iter().all(|&v| v == 0));
        assert!(run.array[..16].iter().all(|&v| v != 0));
    }

    #[test]
    fn random_writes_rejects_unaligned_size() {
        assert!(random_writes(12, 1, 1, None).is_err());
        assert!(random_writes(0, 1, 1, None).is_err());
    }

    fn quick(threads: usize) -> LinearOptions {
        LinearOptions {
            threads,
            min_duration: Duration::from_millis(1),
            keep_array: true,
        }
    }

    #[test]
    fn read_checksum_is_sum_of_contents() {
        for width in [AccessWidth::W64, AccessWidth::W512] {
            if !width.supported() {
                continue;
            }
            for threads in [1, 3] {
                let bytes = 64 * 1000;
                let r = linear_read(bytes, width, quick(threads)).unwrap();
                let expected =
                    (0..(bytes / 8) as u64).fold(0u64, |acc, i| acc.wrapping_add(read_pattern(i)));
                assert_eq!(r.checksum, expected);
                assert!(r.passes >= 1);
            }
        }
    }

    #[test]
    fn write_fills_array_with_pattern() {
        for width in [AccessWidth::W64, AccessWidth::W512] {
            if !width.supported() {
                continue;
            }
            let r = linear_write(64 * 777, width, quick(2)).unwrap();
            assert!(r.array.unwrap().iter().all(|&w| w == WRITE_PATTERN));
        }
    }

    #[test]
    fn bandwidth_metric_is_consistent() {
        let r = linear_read(1 << 16, AccessWidth::W64, quick(1)).unwrap();
        let m = r.result;
        let back = m.metric() * m.elapsed_ns as f64;
        assert!((back - m.bytes_touched as f64).abs() / (m.bytes_touched as f64) < 1e-9);
        assert_eq!(m.bytes_touched % (1 << 16), 0);
    }

    #[test]
    fn bad_sizes_are_rejected() {
        assert!(linear_read(4, AccessWidth::W64, quick(1)).is_err());
        if AccessWidth::W512.supported() {
            assert!(matches!(
                linear_write(64 * 3 + 8, AccessWidth::W512, quick(1)),
                Err(Error::InvalidArgument(_))
            ));
        } else {
            assert!(matches!(
                linear_write(64, AccessWidth::W512, quick(1)),
                Err(Error::Unsupported(_))
            ));
        }
    }
}
