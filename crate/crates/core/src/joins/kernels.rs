//! Radix-digit kernels shared by histogram, scatter, and hash-table build
//! loops.
//!
//! Every loop comes in three shapes. `naive` computes one digit and uses it
//! immediately. `unrolled8` computes eight digits into locals before issuing
//! the eight dependent updates. `simd32` computes 32 digits with AVX2 (four
//! 8-lane registers) before any update, falling back to a scalar batch of 32
//! on hosts without AVX2. All tails run the naive loop.

use crate::datagen::Tuple;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
pub enum KernelVariant {
    #[default]
    Naive,
    Unrolled8,
    Simd32,
}

impl KernelVariant {
    pub const ALL: [KernelVariant; 3] = [
        KernelVariant::Naive,
        KernelVariant::Unrolled8,
        KernelVariant::Simd32,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            KernelVariant::Naive => "naive",
            KernelVariant::Unrolled8 => "unrolled8",
            KernelVariant::Simd32 => "simd32",
        }
    }
}

impl std::str::FromStr for KernelVariant {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "naive" => Ok(KernelVariant::Naive),
            "unrolled8" => Ok(KernelVariant::Unrolled8),
            "simd32" => Ok(KernelVariant::Simd32),
            other => Err(crate::Error::InvalidArgument(format!(
                "unknown kernel variant `{other}`"
            ))),
        }
    }
}

/// `(key & mask) >> shift`
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Digit {
    pub mask: u32,
    pub shift: u32,
}

impl Digit {
    pub fn new(bits: u32, shift: u32) -> Self {
        assert!(bits + shift <= 32, "radix bits + shift must not exceed 32");
        let mask = (((1u64 << bits) - 1) << shift) as u32;
        Digit { mask, shift }
    }

    #[inline(always)]
    pub fn of(self, key: u32) -> usize {
        (key & self.mask).wrapping_shr(self.shift) as usize
    }
}

/// Fills `out` with the digits of the 32 tuples in `chunk`.
#[inline(always)]
pub fn digits32(chunk: &[Tuple], digit: Digit, out: &mut [u32; 32]) {
    assert_eq!(chunk.len(), 32);
    #[cfg(target_arch = "x86_64")]
    {
        if avx2::available() {
            unsafe { avx2::digits32(chunk.as_ptr(), digit.mask, digit.shift, out) };
            return;
        }
    }
    for (o, t) in out.iter_mut().zip(chunk) {
        *o = digit.of(t.key) as u32;
    }
}

#[cfg(target_arch = "x86_64")]
mod avx2 {
    use crate::datagen::Tuple;
    use std::arch::x86_64::*;
    use std::sync::atomic::{AtomicU8, Ordering};

    static DETECTED: AtomicU8 = AtomicU8::new(0);

    #[inline(always)]
    pub fn available() -> bool {
        match DETECTED.load(Ordering::Relaxed) {
            1 => false,
            2 => true,
            _ => {
                let yes = std::arch::is_x86_feature_detected!("avx2");
                DETECTED.store(if yes { 2 } else { 1 }, Ordering::Relaxed);
                yes
            }
        }
    }

    /// # Safety
    /// AVX2 must be available and `tuples` must point at 32 readable tuples.
    #[target_feature(enable = "avx2")]
    pub unsafe fn digits32(tuples: *const Tuple, mask: u32, shift: u32, out: &mut [u32; 32]) {
        let vmask = _mm256_set1_epi32(mask as i32);
        let vshift = _mm_cvtsi32_si128(shift as i32);
        let src = tuples.cast::<__m256i>();
        let mut regs = [_mm256_setzero_si256(); 4];
        for (g, reg) in regs.iter_mut().enumerate() {
            // 4 tuples per 256-bit load: lanes k0 p0 k1 p1 | k2 p2 k3 p3
            let a = _mm256_loadu_si256(src.add(2 * g));
            let b = _mm256_loadu_si256(src.add(2 * g + 1));
            // even lanes of both: a0 a1 b0 b1 | a2 a3 b2 b3
            let keys = _mm256_castps_si256(_mm256_shuffle_ps::<0b10_00_10_00>(
                _mm256_castsi256_ps(a),
                _mm256_castsi256_ps(b),
            ));
            // restore tuple order: a0 a1 a2 a3 b0 b1 b2 b3
            let keys = _mm256_permute4x64_epi64::<0b11_01_10_00>(keys);
            *reg = _mm256_srl_epi32(_mm256_and_si256(keys, vmask), vshift);
        }
        let dst = out.as_mut_ptr().cast::<__m256i>();
        for (g, reg) in regs.iter().enumerate() {
            _mm256_storeu_si256(dst.add(g), *reg);
        }
    }
}

/// Adds the digit counts of `data` to `bins`.
pub fn histogram_into(data: &[Tuple], digit: Digit, variant: KernelVariant, bins: &mut [u64]) {
    match variant {
        KernelVariant::Naive => hist_naive(data, digit, bins),
        KernelVariant::Unrolled8 => hist_unrolled8(data, digit, bins),
        KernelVariant::Simd32 => hist_simd32(data, digit, bins),
    }
}

#[inline(never)]
fn hist_naive(data: &[Tuple], digit: Digit, bins: &mut [u64]) {
    for t in data {
        bins[digit.of(t.key)] += 1;
    }
}

#[inline(never)]
fn hist_unrolled8(data: &[Tuple], digit: Digit, bins: &mut [u64]) {
    let mut chunks = data.chunks_exact(8);
    for c in &mut chunks {
        let i0 = digit.of(c[0].key);
        let i1 = digit.of(c[1].key);
        let i2 = digit.of(c[2].key);
        let i3 = digit.of(c[3].key);
        let i4 = digit.of(c[4].key);
        let i5 = digit.of(c[5].key);
        let i6 = digit.of(c[6].key);
        let i7 = digit.of(c[7].key);
        bins[i0] += 1;
        bins[i1] += 1;
        bins[i2] += 1;
        bins[i3] += 1;
        bins[i4] += 1;
        bins[i5] += 1;
        bins[i6] += 1;
        bins[i7] += 1;
    }
    hist_naive(chunks.remainder(), digit, bins);
}

#[inline(never)]
fn hist_simd32(data: &[Tuple], digit: Digit, bins: &mut [u64]) {
    let mut idx = [0u32; 32];
    let mut chunks = data.chunks_exact(32);
    for c in &mut chunks {
        digits32(c, digit, &mut idx);
        for &i in &idx {
            bins[i as usize] += 1;
        }
    }
    hist_naive(chunks.remainder(), digit, bins);
}

/// Writes each tuple of `data` to `out[cursor[digit]]` and advances that
/// cursor, preserving input order within each digit.
///
/// # Safety
/// For every digit, the cursor range advanced by this call must lie within
/// `out`'s allocation and must not be written concurrently by anyone else.
pub(crate) unsafe fn scatter(
    data: &[Tuple],
    digit: Digit,
    variant: KernelVariant,
    cursors: &mut [usize],
    out: *mut Tuple,
) {
    assert!(cursors.len() > digit.mask.wrapping_shr(digit.shift) as usize);
    match variant {
        KernelVariant::Naive => scatter_naive(data, digit, cursors, out),
        KernelVariant::Unrolled8 => scatter_unrolled8(data, digit, cursors, out),
        KernelVariant::Simd32 => scatter_simd32(data, digit, cursors, out),
    }
}

#[inline(always)]
unsafe fn put(cursors: &mut [usize], d: usize, out: *mut Tuple, t: Tuple) {
    let c = cursors.get_unchecked_mut(d);
    let pos = *c;
    *c = pos + 1;
    out.add(pos).write(t);
}

#[inline(never)]
unsafe fn scatter_naive(data: &[Tuple], digit: Digit, cursors: &mut [usize], out: *mut Tuple) {
    for &t in data {
        put(cursors, digit.of(t.key), out, t);
    }
}

#[inline(never)]
unsafe fn scatter_unrolled8(data: &[Tuple], digit: Digit, cursors: &mut [usize], out: *mut Tuple) {
    let mut chunks = data.chunks_exact(8);
    for c in &mut chunks {
        let i0 = digit.of(c[0].key);
        let i1 = digit.of(c[1].key);
        let i2 = digit.of(c[2].key);
        let i3 = digit.of(c[3].key);
        let i4 = digit.of(c[4].key);
        let i5 = digit.of(c[5].key);
        let i6 = digit.of(c[6].key);
        let i7 = digit.of(c[7].key);
        put(cursors, i0, out, c[0]);
        put(cursors, i1, out, c[1]);
        put(cursors, i2, out, c[2]);
        put(cursors, i3, out, c[3]);
        put(cursors, i4, out, c[4]);
        put(cursors, i5, out, c[5]);
        put(cursors, i6, out, c[6]);
        put(cursors, i7, out, c[7]);
    }
    scatter_naive(chunks.remainder(), digit, cursors, out);
}

#[inline(never)]
unsafe fn scatter_simd32(data: &[Tuple], digit: Digit, cursors: &mut [usize], out: *mut Tuple) {
    let mut idx = [0u32; 32];
    let mut chunks = data.chunks_exact(32);
    for c in &mut chunks {
        digits32(c, digit, &mut idx);
        for (k, &i) in idx.iter().enumerate() {
            put(cursors, i as usize, out, c[k]);
        }
    }
    scatter_naive(chunks.remainder(), digit, cursors, out);
}

/// Bucket-chained table build over one partition: `heads[bucket]` holds the
/// 1-based local index of the chain head and `next[i]` the next entry.
pub(crate) fn build_chained(
    part: &[Tuple],
    digit: Digit,
    variant: KernelVariant,
    heads: &mut [u32],
    next: &mut [u32],
) {
    assert_eq!(part.len(), next.len());
    #[inline(always)]
    fn insert(heads: &mut [u32], next: &mut [u32], bucket: usize, i: usize) {
        next[i] = heads[bucket];
        heads[bucket] = i as u32 + 1;
    }
    let mut i = 0;
    match variant {
        KernelVariant::Naive => {}
        KernelVariant::Unrolled8 => {
            while i + 8 <= part.len() {
                let c = &part[i..i + 8];
                let b0 = digit.of(c[0].key);
                let b1 = digit.of(c[1].key);
                let b2 = digit.of(c[2].key);
                let b3 = digit.of(c[3].key);
                let b4 = digit.of(c[4].key);
                let b5 = digit.of(c[5].key);
                let b6 = digit.of(c[6].key);
                let b7 = digit.of(c[7].key);
                insert(heads, next, b0, i);
                insert(heads, next, b1, i + 1);
                insert(heads, next, b2, i + 2);
                insert(heads, next, b3, i + 3);
                insert(heads, next, b4, i + 4);
                insert(heads, next, b5, i + 5);
                insert(heads, next, b6, i + 6);
                insert(heads, next, b7, i + 7);
                i += 8;
            }
        }
        KernelVariant::Simd32 => {
            let mut idx = [0u32; 32];
            while i + 32 <= part.len() {
                digits32(&part[i..i + 32], digit, &mut idx);
                for (k, &b) in idx.iter().enumerate() {
                    insert(heads, next, b as usize, i + k);
                }
                i += 32;
            }
        }
    }
    while i < part.len() {
        insert(heads, next, digit.of(part[i].key), i);
        i += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tuples(keys: &[u32]) -> Vec<Tuple> {
        keys.iter().map(|&k| Tuple::new(k, k)).collect()
    }

    #[test]
    fn digit_mask_and_shift() {
        let d = Digit::new(3, 4);
        assert_eq!(d.mask, 0b111_0000);
        assert_eq!(d.of(0b1011_0110), 0b011);
        assert_eq!(Digit::new(32, 0).mask, u32::MAX);
        assert_eq!(Digit::new(0, 32).mask, 0);
    }

    #[test]
    fn digits32_matches_scalar() {
        let data: Vec<Tuple> = (0..32u32)
            .map(|i| Tuple::new(i.wrapping_mul(2_654_435_761), i))
            .collect();
        for (bits, shift) in [(0, 0), (1, 0), (5, 3), (12, 20), (32, 0), (7, 25)] {
            let digit = Digit::new(bits, shift);
            let mut got = [0u32; 32];
            digits32(&data, digit, &mut got);
            for (g, t) in got.iter().zip(&data) {
                assert_eq!(*g as usize, digit.of(t.key));
            }
        }
    }

    #[test]
    fn scatter_variants_agree() {
        let data = tuples(
            &(0..1000u32)
                .map(|i| i.wrapping_mul(40503) % 977)
                .collect::<Vec<_>>(),
        );
        let digit = Digit::new(4, 2);
        let mut hist = vec![0u64; 16];
        histogram_into(&data, digit, KernelVariant::Naive, &mut hist);
        let mut expected = None;
        for v in KernelVariant::ALL {
            let mut cursors: Vec<usize> = hist
                .iter()
                .scan(0usize, |acc, &h| {
                    let s = *acc;
                    *acc += h as usize;
                    Some(s)
                })
                .collect();
            let mut out = vec![Tuple::default(); data.len()];
            unsafe { scatter(&data, digit, v, &mut cursors, out.as_mut_ptr()) };
            match &expected {
                None => expected = Some(out),
                Some(e) => assert_eq!(e, &out, "{v:?}"),
            }
        }
    }

    #[test]
    fn build_variants_make_identical_chains() {
        let data = tuples(&(0..203u32).map(|i| i * 7).collect::<Vec<_>>());
        let digit = Digit::new(6, 0);
        let mut reference = None;
        for v in KernelVariant::ALL {
            let mut heads = vec![0u32; 64];
            let mut next = vec![0u32; data.len()];
            build_chained(&data, digit, v, &mut heads, &mut next);
            match &reference {
                None => reference = Some((heads, next)),
                Some(r) => assert_eq!(r, &(heads, next), "{v:?}"),
            }
        }
    }
}
