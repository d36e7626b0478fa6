use crate::datagen::Tuple;

/// Splits `data` in place on key bit `bit_index`: tuples with the bit clear
/// end up in `[0, split)`, tuples with the bit set in `[split, len)`.
///
/// Two cursors move inward from both ends and swap misplaced pairs, so
/// every tuple is touched at most once and no extra buffer is used. Order
/// among tuples with equal bits is not preserved.
pub fn crack_partition(data: &mut [Tuple], bit_index: u32) -> usize {
    assert!(bit_index < 32, "bit index must be below 32");
    let bit = 1u32 << bit_index;
    let mut lo = 0usize;
    let mut hi = data.len();
    loop {
        while lo < hi && data[lo].key & bit == 0 {
            lo += 1;
        }
        while lo < hi && data[hi - 1].key & bit != 0 {
            hi -= 1;
        }
        if lo >= hi {
            return lo;
        }
        data.swap(lo, hi - 1);
        lo += 1;
        hi -= 1;
    }
}

/// Recursively cracks `data` on key bits `bits - 1` down to `0` so that
/// partition `p` holds exactly the tuples with `key & (2^bits - 1) == p`,
/// in digit order. Returns `2^bits + 1` partition offsets.
pub fn crack_radix(data: &mut [Tuple], bits: u32) -> Vec<u64> {
    let mut offsets = vec![0u64; (1usize << bits) + 1];
    crack_range(data, 0, bits, 0, &mut |digit, start| {
        offsets[digit] = start as u64
    });
    offsets[1usize << bits] = data.len() as u64;
    offsets
}

/// Cracks `data` (which starts at global index `base`) on bits
/// `remaining - 1 ..= 0`, reporting the global start of every leaf digit.
pub(crate) fn crack_range(
    data: &mut [Tuple],
    base: usize,
    remaining: u32,
    prefix: usize,
    leaf: &mut impl FnMut(usize, usize),
) {
    if remaining == 0 {
        leaf(prefix, base);
        return;
    }
    let bit = remaining - 1;
    let split = crack_partition(data, bit);
    let (zeros, ones) = data.split_at_mut(split);
    crack_range(zeros, base, bit, prefix << 1, leaf);
    crack_range(ones, base + split, bit, (prefix << 1) | 1, leaf);
}
