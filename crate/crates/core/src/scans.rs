//! Byte-column range scans producing bit vectors or row indexes.
//!
//! Each kernel turns 64 column values into one 64-bit match mask. The
//! AVX-512BW kernel needs a single load and two mask compares; the AVX2
//! kernel combines two 32-byte halves; the scalar kernel handles tails and
//! hosts without vector support.

use crate::datagen::Column8;
use crate::error::{Error, Result};
use crate::mem::{AllocMode, Buffer, SharedMut};
use crate::team;
use std::ops::Range;

/// Rows per chunk-boundary unit: one 64-byte line of bit-vector words.
pub const CHUNK_ALIGN: usize = 512;

/// Inclusive byte range `lower..=upper`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScanPredicate {
    lower: u8,
    upper: u8,
}

impl ScanPredicate {
    pub fn new(lower: u8, upper: u8) -> Result<Self> {
        if lower > upper {
            return Err(Error::InvalidArgument(format!(
                "predicate lower bound {lower} exceeds upper bound {upper}"
            )));
        }
        Ok(ScanPredicate { lower, upper })
    }

    /// `[0, ceil(256 * s) - 1]`, which selects a fraction of about `s` of
    /// uniform bytes.
    pub fn for_selectivity(s: f64) -> Result<Self> {
        if !(s > 0.0 && s <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "selectivity must be in (0, 1], got {s}"
            )));
        }
        let upper = ((256.0 * s).ceil() as u32).clamp(1, 256) - 1;
        ScanPredicate::new(0, upper as u8)
    }

    pub fn lower(self) -> u8 {
        self.lower
    }

    pub fn upper(self) -> u8 {
        self.upper
    }

    #[inline]
    pub fn matches(self, v: u8) -> bool {
        self.lower <= v && v <= self.upper
    }

    /// Fraction of the 256 byte values the predicate accepts.
    pub fn nominal_selectivity(self) -> f64 {
        f64::from(u32::from(self.upper) - u32::from(self.lower) + 1) / 256.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScanKernel {
    /// Widest kernel the CPU supports.
    #[default]
    Auto,
    Scalar,
    Avx2,
    Avx512,
}

impl ScanKernel {
    pub const ALL: [ScanKernel; 4] = [
        ScanKernel::Auto,
        ScanKernel::Scalar,
        ScanKernel::Avx2,
        ScanKernel::Avx512,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScanKernel::Auto => "auto",
            ScanKernel::Scalar => "scalar",
            ScanKernel::Avx2 => "avx2",
            ScanKernel::Avx512 => "avx512",
        }
    }

    pub fn supported(self) -> bool {
        match self {
            ScanKernel::Auto | ScanKernel::Scalar => true,
            #[cfg(target_arch = "x86_64")]
            ScanKernel::Avx2 => is_x86_feature_detected!("avx2"),
            #[cfg(target_arch = "x86_64")]
            ScanKernel::Avx512 => {
                is_x86_feature_detected!("avx512f") && is_x86_feature_detected!("avx512bw")
            }
            #[cfg(not(target_arch = "x86_64"))]
            _ => false,
        }
    }

    /// The concrete kernel `self` runs as on this CPU.
    pub fn resolve(self) -> Result<ScanKernel> {
        match self {
            ScanKernel::Auto => Ok([ScanKernel::Avx512, ScanKernel::Avx2]
                .into_iter()
                .find(|k| k.supported())
                .unwrap_or(ScanKernel::Scalar)),
            k if k.supported() => Ok(k),
            k => Err(Error::Unsupported(format!(
                "{} scan kernel is not supported by this CPU",
                k.as_str()
            ))),
        }
    }
}

impl std::str::FromStr for ScanKernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "auto" => Ok(ScanKernel::Auto),
            "scalar" => Ok(ScanKernel::Scalar),
            "avx2" => Ok(ScanKernel::Avx2),
            "avx512" => Ok(ScanKernel::Avx512),
            other => Err(Error::InvalidArgument(format!(
                "unknown scan kernel `{other}`"
            ))),
        }
    }
}

/// One bit per row, least significant bit first.
pub struct BitVector {
    words: Buffer<u64>,
    len: usize,
}

impl BitVector {
    /// An all-zero vector of `len` bits.
    pub fn zeroed(len: usize, mode: AllocMode) -> Result<Self> {
        Ok(BitVector {
            words: Buffer::zeroed(len.div_ceil(64), mode)?,
            len,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "bit {i} out of range");
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn count_ones(&self) -> u64 {
        self.words.iter().map(|w| u64::from(w.count_ones())).sum()
    }

    /// Positions of set bits in increasing order.
    pub fn ones(&self) -> impl Iterator<Item = u64> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            let mut m = w;
            std::iter::from_fn(move || {
                if m == 0 {
                    return None;
                }
                let bit = m.trailing_zeros() as u64;
                m &= m - 1;
                Some(wi as u64 * 64 + bit)
            })
        })
    }
}

impl PartialEq for BitVector {
    fn eq(&self, other: &Self) -> bool {
        self.len == other.len && self.words() == other.words()
    }
}

impl Eq for BitVector {}

impl std::fmt::Debug for BitVector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BitVector")
            .field("len", &self.len)
            .field("ones", &self.count_ones())
            .finish()
    }
}

/// Matching row indexes. Storage is sized for the worst case (one slot per
/// row); each thread chunk owns the slots of its own rows and fills a
/// prefix of them.
pub struct IndexVector {
    slots: Buffer<u64>,
    segments: Vec<Range<usize>>,
}

impl IndexVector {
    /// Storage for a column of `rows` rows.
    pub fn with_rows(rows: usize, mode: AllocMode) -> Result<Self> {
        Ok(IndexVector {
            slots: Buffer::zeroed(rows, mode)?,
            segments: Vec::new(),
        })
    }

    pub fn count(&self) -> u64 {
        self.segments.iter().map(|s| s.len() as u64).sum()
    }

    /// Per-chunk results; each is strictly increasing.
    pub fn segments(&self) -> impl Iterator<Item = &[u64]> {
        self.segments.iter().map(|s| &self.slots[s.clone()])
    }

    pub fn iter(&self) -> impl Iterator<Item = u64> + '_ {
        self.segments().flatten().copied()
    }

    pub fn to_vec(&self) -> Vec<u64> {
        self.iter().collect()
    }

    /// Bytes of index output written by the last scan.
    pub fn bytes_written(&self) -> u64 {
        self.count() * 8
    }
}

impl std::fmt::Debug for IndexVector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("IndexVector")
            .field("count", &self.count())
            .field("chunks", &self.segments.len())
            .finish()
    }
}

/// Equal-size contiguous row chunks aligned to [`CHUNK_ALIGN`].
pub fn scan_chunks(rows: usize, threads: usize) -> Vec<Range<usize>> {
    team::chunk_ranges(rows, threads, CHUNK_ALIGN)
}

/// Allocates the output and runs [`scan_bitvector_into`] with the widest kernel.
pub fn scan_bitvector(column: &Column8, pred: ScanPredicate, threads: usize) -> Result<BitVector> {
    let mut out = BitVector::zeroed(column.len(), AllocMode::Lazy)?;
    scan_bitvector_into(column, pred, threads, ScanKernel::Auto, &mut out)?;
    Ok(out)
}

/// Writes `bit i = pred(column[i])` into `out` and returns the match count.
pub fn scan_bitvector_into(
    column: &Column8,
    pred: ScanPredicate,
    threads: usize,
    kernel: ScanKernel,
    out: &mut BitVector,
) -> Result<u64> {
    check_output(column.len(), out.len, "bit vector")?;
    let kernel = kernel.resolve()?;
    let values = column.values();
    let chunks = scan_chunks(values.len(), threads);
    let words = SharedMut::new(&mut out.words[..]);
    let counts = team::run(chunks.len(), |tid| {
        let c = chunks[tid].clone();
        // chunk starts are multiples of 64 rows, so word ranges are disjoint
        let dst = unsafe { words.slice_mut(c.start / 64, c.len().div_ceil(64)) };
        let mut ones = 0u64;
        for (i, block) in values[c].chunks(64).enumerate() {
            let m = match_mask(block, pred, kernel);
            dst[i] = m;
            ones += u64::from(m.count_ones());
        }
        ones
    });
    Ok(counts.into_iter().sum())
}

/// Allocates the output and runs [`scan_indexes_into`] with the widest kernel.
pub fn scan_indexes(column: &Column8, pred: ScanPredicate, threads: usize) -> Result<IndexVector> {
    let mut out = IndexVector::with_rows(column.len(), AllocMode::Lazy)?;
    scan_indexes_into(column, pred, threads, ScanKernel::Auto, &mut out)?;
    Ok(out)
}

/// Writes the positions of matching rows into `out` and returns their count.
pub fn scan_indexes_into(
    column: &Column8,
    pred: ScanPredicate,
    threads: usize,
    kernel: ScanKernel,
    out: &mut IndexVector,
) -> Result<u64> {
    check_output(column.len(), out.slots.len(), "index vector")?;
    let kernel = kernel.resolve()?;
    let values = column.values();
    let chunks = scan_chunks(values.len(), threads);
    let slots = SharedMut::new(&mut out.slots[..]);
    let ends = team::run(chunks.len(), |tid| {
        let c = chunks[tid].clone();
        // a chunk never has more matches than rows
        let dst = unsafe { slots.slice_mut(c.start, c.len()) };
        let mut n = 0;
        for (i, block) in values[c.clone()].chunks(64).enumerate() {
            let mut m = match_mask(block, pred, kernel);
            let base = (c.start + i * 64) as u64;
            while m != 0 {
                dst[n] = base + u64::from(m.trailing_zeros());
                n += 1;
                m &= m - 1;
            }
        }
        c.start..c.start + n
    });
    out.segments = ends;
    Ok(out.count())
}

fn check_output(rows: usize, capacity: usize, what: &str) -> Result<()> {
    if capacity != rows {
        return Err(Error::InvalidArgument(format!(
            "{what} sized for {capacity} rows, column has {rows}"
        )));
    }
    Ok(())
}

/// Match mask of up to 64 values; bit `j` is row `j` of `block`.
#[inline]
fn match_mask(block: &[u8], pred: ScanPredicate, kernel: ScanKernel) -> u64 {
    #[cfg(target_arch = "x86_64")]
    if block.len() == 64 {
        // SAFETY: `resolve` only returns vector kernels the CPU supports.
        match kernel {
            ScanKernel::Avx512 => return unsafe { x86::mask_avx512(block.as_ptr(), pred) },
            ScanKernel::Avx2 => return unsafe { x86::mask_avx2(block.as_ptr(), pred) },
            _ => {}
        }
    }
    let _ = kernel;
    mask_scalar(block, pred)
}

fn mask_scalar(block: &[u8], pred: ScanPredicate) -> u64 {
    let mut m = 0u64;
    for (j, &v) in block.iter().enumerate() {
        m |= u64::from(pred.matches(v)) << j;
    }
    m
}

#[cfg(target_arch = "x86_64")]
mod x86 {
    use super::ScanPredicate;
    use std::arch::x86_64::*;

    #[target_feature(enable = "avx512f,avx512bw")]
    pub unsafe fn mask_avx512(p: *const u8, pred: ScanPredicate) -> u64 {
        let v = _mm512_loadu_si512(p as *const _);
        let lo = _mm512_set1_epi8(pred.lower as i8);
        let hi = _mm512_set1_epi8(pred.upper as i8);
        _mm512_cmpge_epu8_mask(v, lo) & _mm512_cmple_epu8_mask(v, hi)
    }

    /// `lower <= v <= upper` as `(v - lower) <= (upper - lower)` in
    /// wrapping unsigned bytes, tested with `min(x, range) == x`.
    #[target_feature(enable = "avx2")]
    pub unsafe fn mask_avx2(p: *const u8, pred: ScanPredicate) -> u64 {
        let lo = _mm256_set1_epi8(pred.lower as i8);
        let range = _mm256_set1_epi8(pred.upper.wrapping_sub(pred.lower) as i8);
        let half = |q: *const u8| {
            let v = _mm256_loadu_si256(q as *const __m256i);
            let d = _mm256_sub_epi8(v, lo);
            let ok = _mm256_cmpeq_epi8(_mm256_min_epu8(d, range), d);
            _mm256_movemask_epi8(ok) as u32 as u64
        };
        half(p) | (half(p.add(32)) << 32)
    }
}
