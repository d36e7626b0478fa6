//! Parallel equi-joins over [`Tuple`] relations.
//!
//! Three algorithms share one option set: [`pht_join`] builds a single
//! latched hash table, [`rho_join`] radix-partitions both inputs in two
//! passes and joins partition pairs in cache, and [`crk_join`] reaches the
//! same partitioning by cracking the inputs in place one key bit at a time.

mod crack;
mod crk;
pub(crate) mod kernels;
mod partition;
mod pht;
mod rho;

pub use crack::{crack_partition, crack_radix};
pub use crk::{crk_join, crk_join_with};
pub use kernels::{Digit, KernelVariant};
pub use partition::{compute_histogram, radix_partition, Histogram, PartitionedRelation};
pub use pht::{pht_join, pht_join_with};
pub use rho::{rho_join, rho_join_with};

use crate::datagen::{Relation, Tuple};
use crate::error::{Error, Result};
use crate::mem::{AllocMode, Buffer, SharedMut};
use crate::sync::QueueKind;
use bytemuck::{Pod, Zeroable};
use std::collections::BTreeMap;
use std::ops::Range;

/// Largest combined radix-bit budget of a partitioned join.
pub const MAX_RADIX_BITS: u32 = 27;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JoinOptions {
    pub threads: usize,
    pub radix_bits_pass1: u32,
    pub radix_bits_pass2: u32,
    pub kernel_variant: KernelVariant,
    pub queue_kind: QueueKind,
    pub materialize: bool,
}

impl Default for JoinOptions {
    fn default() -> Self {
        JoinOptions {
            threads: 1,
            radix_bits_pass1: 7,
            radix_bits_pass2: 7,
            kernel_variant: KernelVariant::Naive,
            queue_kind: QueueKind::LockFree,
            materialize: false,
        }
    }
}

impl JoinOptions {
    pub fn total_radix_bits(&self) -> u32 {
        self.radix_bits_pass1 + self.radix_bits_pass2
    }

    /// Checks the settings that do not depend on the inputs.
    pub fn validate(&self) -> Result<()> {
        if self.threads == 0 {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        if self.total_radix_bits() > MAX_RADIX_BITS {
            return Err(Error::Config(format!(
                "{} radix bits requested, at most {MAX_RADIX_BITS} are supported",
                self.total_radix_bits()
            )));
        }
        Ok(())
    }

    /// Like [`validate`](Self::validate), and additionally rejects more
    /// partitions than build tuples.
    pub fn validate_partitioned(&self, build_len: usize) -> Result<()> {
        self.validate()?;
        let parts = 1u64 << self.total_radix_bits();
        if parts > build_len.max(1) as u64 {
            return Err(Error::Config(format!(
                "{parts} partitions exceed the build cardinality {build_len}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum JoinAlgorithm {
    Pht,
    Rho,
    Crk,
}

impl JoinAlgorithm {
    pub const ALL: [JoinAlgorithm; 3] =
        [JoinAlgorithm::Pht, JoinAlgorithm::Rho, JoinAlgorithm::Crk];

    pub fn as_str(self) -> &'static str {
        match self {
            JoinAlgorithm::Pht => "pht",
            JoinAlgorithm::Rho => "rho",
            JoinAlgorithm::Crk => "crk",
        }
    }

    /// Runs the algorithm with freshly allocated, untouched work buffers.
    pub fn run(self, build: &Relation, probe: &Relation, opts: &JoinOptions) -> Result<JoinResult> {
        match self {
            JoinAlgorithm::Pht => pht_join(build, probe, opts),
            JoinAlgorithm::Rho => rho_join(build, probe, opts),
            JoinAlgorithm::Crk => crk_join(build, probe, opts),
        }
    }

    /// Runs the algorithm on caller-provided work buffers.
    pub fn run_with(
        self,
        build: &Relation,
        probe: &Relation,
        opts: &JoinOptions,
        buffers: &mut JoinBuffers,
    ) -> Result<JoinResult> {
        match self {
            JoinAlgorithm::Pht => pht_join_with(build, probe, opts, buffers),
            JoinAlgorithm::Rho => rho_join_with(build, probe, opts, buffers),
            JoinAlgorithm::Crk => crk_join_with(build, probe, opts, buffers),
        }
    }
}

impl std::fmt::Display for JoinAlgorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for JoinAlgorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pht" => Ok(JoinAlgorithm::Pht),
            "rho" => Ok(JoinAlgorithm::Rho),
            "crk" | "crkjoin" => Ok(JoinAlgorithm::Crk),
            other => Err(Error::InvalidArgument(format!(
                "unknown join algorithm `{other}`"
            ))),
        }
    }
}

/// One materialized join match.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Pod, Zeroable)]
pub struct JoinedRow {
    pub key: u32,
    pub left_payload: u32,
    pub right_payload: u32,
}

#[derive(Debug, Clone, Default)]
pub struct JoinResult {
    pub match_count: u64,
    /// Present when the join ran with `materialize`.
    pub output: Option<Vec<JoinedRow>>,
    /// Phase name to elapsed nanoseconds.
    pub phase_times: BTreeMap<String, u64>,
    /// Wall time of the join; copying the materialized rows into
    /// `output` afterwards is not included.
    pub elapsed_ns: u64,
}

/// Work memory of a join, allocated up front so that timed runs can
/// exclude (or deliberately include) page-fault cost.
#[derive(Debug)]
pub struct JoinBuffers {
    pub(crate) build_a: Buffer<Tuple>,
    pub(crate) probe_a: Buffer<Tuple>,
    pub(crate) build_b: Buffer<Tuple>,
    pub(crate) probe_b: Buffer<Tuple>,
    pub(crate) heads: Buffer<u32>,
    pub(crate) next: Buffer<u32>,
    pub(crate) output: Buffer<JoinedRow>,
}

impl JoinBuffers {
    /// Work memory for joining `build_len` with `probe_len` tuples; the
    /// output area is only reserved when `opts.materialize` is set.
    pub fn for_join(
        algo: JoinAlgorithm,
        build_len: usize,
        probe_len: usize,
        opts: &JoinOptions,
        mode: AllocMode,
    ) -> Result<Self> {
        let mut b = JoinBuffers {
            build_a: Buffer::empty(),
            probe_a: Buffer::empty(),
            build_b: Buffer::empty(),
            probe_b: Buffer::empty(),
            heads: Buffer::empty(),
            next: Buffer::empty(),
            output: Buffer::empty(),
        };
        match algo {
            JoinAlgorithm::Pht => {
                b.heads = Buffer::zeroed(build_len.max(1).next_power_of_two(), mode)?;
            }
            JoinAlgorithm::Rho => {
                b.build_a = Buffer::zeroed(build_len, mode)?;
                b.probe_a = Buffer::zeroed(probe_len, mode)?;
                b.build_b = Buffer::zeroed(build_len, mode)?;
                b.probe_b = Buffer::zeroed(probe_len, mode)?;
                b.heads = Buffer::zeroed(2 * build_len, mode)?;
            }
            JoinAlgorithm::Crk => {
                b.build_a = Buffer::zeroed(build_len, mode)?;
                b.probe_a = Buffer::zeroed(probe_len, mode)?;
                b.heads = Buffer::zeroed(2 * build_len, mode)?;
            }
        }
        b.next = Buffer::zeroed(build_len, mode)?;
        if opts.materialize {
            b.output = Buffer::zeroed(probe_len, mode)?;
        }
        Ok(b)
    }

    pub fn bytes(&self) -> usize {
        let t = std::mem::size_of::<Tuple>();
        (self.build_a.len() + self.probe_a.len() + self.build_b.len() + self.probe_b.len()) * t
            + (self.heads.len() + self.next.len()) * 4
            + self.output.len() * std::mem::size_of::<JoinedRow>()
    }

    pub(crate) fn check(
        &self,
        algo: JoinAlgorithm,
        build_len: usize,
        probe_len: usize,
        materialize: bool,
    ) -> Result<()> {
        let out_ok = !materialize || self.output.len() >= probe_len;
        let ok = out_ok
            && match algo {
                JoinAlgorithm::Pht => {
                    self.heads.len() >= build_len.max(1).next_power_of_two()
                        && self.next.len() >= build_len
                }
                JoinAlgorithm::Rho => {
                    self.build_a.len() >= build_len
                        && self.build_b.len() >= build_len
                        && self.probe_a.len() >= probe_len
                        && self.probe_b.len() >= probe_len
                        && self.heads.len() >= 2 * build_len
                        && self.next.len() >= build_len
                }
                JoinAlgorithm::Crk => {
                    self.build_a.len() >= build_len
                        && self.probe_a.len() >= probe_len
                        && self.heads.len() >= 2 * build_len
                        && self.next.len() >= build_len
                }
            };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "work buffers are too small for a {algo} join of {build_len} x {probe_len} tuples"
            )))
        }
    }
}

/// Bucket-count exponent of the in-cache table for a partition of `n`
/// build tuples whose low `shift` key bits are already fixed.
pub(crate) fn bucket_bits(n: usize, shift: u32) -> u32 {
    if n == 0 {
        return 0;
    }
    n.next_power_of_two().trailing_zeros().min(32 - shift)
}

pub(crate) fn bucket_count(n: usize, shift: u32) -> usize {
    if n == 0 {
        0
    } else {
        1 << bucket_bits(n, shift)
    }
}

/// Start of each partition's bucket array inside one shared heads buffer.
pub(crate) fn head_offsets(offsets: &[u64], shift: u32) -> Vec<usize> {
    let mut out = Vec::with_capacity(offsets.len());
    let mut acc = 0;
    out.push(0);
    for w in offsets.windows(2) {
        acc += bucket_count((w[1] - w[0]) as usize, shift);
        out.push(acc);
    }
    out
}

/// Probes an in-cache table built by [`kernels::build_chained`].
pub(crate) fn probe_chained(
    build: &[Tuple],
    probe: &[Tuple],
    digit: Digit,
    heads: &[u32],
    next: &[u32],
    mut out: Option<&mut Sink<'_>>,
) -> u64 {
    if build.is_empty() {
        return 0;
    }
    let mut matches = 0;
    for s in probe {
        let mut idx = heads[digit.of(s.key)];
        while idx != 0 {
            let r = build[idx as usize - 1];
            if r.key == s.key {
                matches += 1;
                if let Some(out) = out.as_deref_mut() {
                    out.push(JoinedRow {
                        key: s.key,
                        left_payload: r.payload,
                        right_payload: s.payload,
                    });
                }
            }
            idx = next[idx as usize - 1];
        }
    }
    matches
}

/// Builds the in-cache tables of partitions `groups`, hashing on the key
/// bits above `shift`.
///
/// # Safety
/// `build`, `heads` and `next` must cover the ranges named by `off` and
/// `hoff`, and no other worker may touch the partitions in `groups`.
#[allow(clippy::too_many_arguments)]
pub(crate) unsafe fn build_partitions(
    build: &SharedMut<Tuple>,
    off: &[u64],
    hoff: &[usize],
    heads: &SharedMut<u32>,
    next: &SharedMut<u32>,
    groups: Range<usize>,
    shift: u32,
    variant: KernelVariant,
) {
    for g in groups {
        let lo = off[g] as usize;
        let n = off[g + 1] as usize - lo;
        let h = heads.slice_mut(hoff[g], hoff[g + 1] - hoff[g]);
        h.fill(0);
        let digit = Digit::new(bucket_bits(n, shift), shift);
        build_chained(
            build.slice_mut(lo, n),
            digit,
            variant,
            h,
            next.slice_mut(lo, n),
        );
    }
}

/// Probes the tables of partitions `groups` built by [`build_partitions`].
///
/// # Safety
/// As for [`build_partitions`]; additionally nobody may write the regions
/// while they are probed.
#[allow(clippy::too_many_arguments)]
pub(crate) unsafe fn probe_partitions(
    build: &SharedMut<Tuple>,
    probe: &SharedMut<Tuple>,
    off_r: &[u64],
    off_s: &[u64],
    hoff: &[usize],
    heads: &SharedMut<u32>,
    next: &SharedMut<u32>,
    groups: Range<usize>,
    shift: u32,
    mut out: Option<&mut Sink<'_>>,
) -> u64 {
    let mut matches = 0;
    for g in groups {
        let lo = off_r[g] as usize;
        let n = off_r[g + 1] as usize - lo;
        let slo = off_s[g] as usize;
        let sn = off_s[g + 1] as usize - slo;
        let digit = Digit::new(bucket_bits(n, shift), shift);
        matches += probe_chained(
            build.slice_mut(lo, n),
            probe.slice_mut(slo, sn),
            digit,
            heads.slice_mut(hoff[g], hoff[g + 1] - hoff[g]),
            next.slice_mut(lo, n),
            out.as_deref_mut(),
        );
    }
    matches
}

use kernels::build_chained;

/// What one worker materialized: the ranges it filled in the shared
/// output buffer, plus rows that did not fit their range.
#[derive(Debug, Default)]
pub(crate) struct WorkerOutput {
    segments: Vec<Range<usize>>,
    spill: Vec<JoinedRow>,
}

impl WorkerOutput {
    /// A sink writing into `range` of the shared output buffer.
    ///
    /// # Safety
    /// `range` must be in bounds and written by no one else.
    pub(crate) unsafe fn sink<'a>(
        &'a mut self,
        out: &SharedMut<JoinedRow>,
        range: Range<usize>,
    ) -> Sink<'a> {
        Sink {
            buf: out.slice_mut(range.start, range.len()),
            start: range.start,
            n: 0,
            owner: self,
        }
    }
}

/// Appends rows to one output range. With a unique build side a probe
/// range never produces more rows than it has tuples, so the spill vector
/// stays empty in that case.
pub(crate) struct Sink<'a> {
    owner: &'a mut WorkerOutput,
    buf: &'a mut [JoinedRow],
    start: usize,
    n: usize,
}

impl Sink<'_> {
    #[inline]
    pub(crate) fn push(&mut self, row: JoinedRow) {
        if self.n < self.buf.len() {
            self.buf[self.n] = row;
            self.n += 1;
        } else {
            self.owner.spill.push(row);
        }
    }
}

impl Drop for Sink<'_> {
    fn drop(&mut self) {
        if self.n > 0 {
            self.owner.segments.push(self.start..self.start + self.n);
        }
    }
}

/// Copies the materialized rows of all workers into one vector.
pub(crate) fn gather_output(buf: &[JoinedRow], workers: &[WorkerOutput]) -> Vec<JoinedRow> {
    let total = workers
        .iter()
        .map(|w| w.spill.len() + w.segments.iter().map(|r| r.len()).sum::<usize>())
        .sum();
    let mut out = Vec::with_capacity(total);
    for w in workers {
        for r in &w.segments {
            out.extend_from_slice(&buf[r.clone()]);
        }
        out.extend_from_slice(&w.spill);
    }
    out
}

/// Records the time since `*last` under `name` and advances `*last`.
pub(crate) fn stamp_phase(
    times: &mut BTreeMap<String, u64>,
    last: &mut crate::timing::Stamp,
    name: &str,
) {
    let clock = crate::timing::Clock::global();
    let now = clock.now();
    times.insert(name.to_string(), clock.ns_between(*last, now));
    *last = now;
}
