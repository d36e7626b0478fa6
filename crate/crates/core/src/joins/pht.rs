use super::{
    gather_output, stamp_phase, JoinAlgorithm, JoinBuffers, JoinOptions, JoinResult, JoinedRow,
    WorkerOutput,
};
use crate::datagen::Relation;
use crate::error::{Error, Result};
use crate::mem::AllocMode;
use crate::mem::SharedMut;
use crate::sync::{latch_word, unlatch_word, WORD_LATCH};
use crate::team;
use crate::timing::Clock;
use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Barrier;

/// Parallel hash join over one shared bucket-chained table.
pub fn pht_join(build: &Relation, probe: &Relation, opts: &JoinOptions) -> Result<JoinResult> {
    let mut buffers = JoinBuffers::for_join(
        JoinAlgorithm::Pht,
        build.len(),
        probe.len(),
        opts,
        AllocMode::Lazy,
    )?;
    pht_join_with(build, probe, opts, &mut buffers)
}

/// All workers insert a slice of `build` into one table whose bucket words
/// carry a latch bit, then all workers probe a slice of `probe`.
pub fn pht_join_with(
    build: &Relation,
    probe: &Relation,
    opts: &JoinOptions,
    buffers: &mut JoinBuffers,
) -> Result<JoinResult> {
    opts.validate()?;
    if build.len() >= WORD_LATCH as usize {
        return Err(Error::InvalidArgument(format!(
            "build side of {} tuples exceeds the table index range",
            build.len()
        )));
    }
    buffers.check(
        JoinAlgorithm::Pht,
        build.len(),
        probe.len(),
        opts.materialize,
    )?;
    let clock = Clock::global();
    let start = clock.now();

    let r = build.tuples();
    let s = probe.tuples();
    let nb = r.len().max(1).next_power_of_two();
    let mask = (nb - 1) as u32;
    let heads = atomic_view(&mut buffers.heads[..nb]);
    let next = atomic_view(&mut buffers.next[..r.len()]);
    let threads = opts.threads;
    let head_chunks = team::chunk_ranges(nb, threads, 16);
    let r_chunks = team::chunk_ranges(r.len(), threads, 1);
    let s_chunks = team::chunk_ranges(s.len(), threads, 1);
    let barrier = Barrier::new(threads);
    let materialize = opts.materialize;
    let out_buf = SharedMut::new(&mut buffers.output[..if materialize { s.len() } else { 0 }]);

    let per_worker = team::run(threads, |tid| {
        let mut times = BTreeMap::new();
        let mut last = start;
        for h in &heads[head_chunks[tid].clone()] {
            h.store(0, Ordering::Relaxed);
        }
        barrier.wait();
        for i in r_chunks[tid].clone() {
            let bucket = &heads[(r[i].key & mask) as usize];
            let old = latch_word(bucket);
            next[i].store(old, Ordering::Relaxed);
            unlatch_word(bucket, i as u32 + 1);
        }
        barrier.wait();
        if tid == 0 {
            stamp_phase(&mut times, &mut last, "build");
        }

        let mut out = WorkerOutput::default();
        // SAFETY: probe chunks, and so their output ranges, are disjoint.
        let mut sink = materialize.then(|| unsafe { out.sink(&out_buf, s_chunks[tid].clone()) });
        let mut matches = 0u64;
        for t in &s[s_chunks[tid].clone()] {
            let mut idx = heads[(t.key & mask) as usize].load(Ordering::Relaxed);
            while idx != 0 {
                let b = r[idx as usize - 1];
                if b.key == t.key {
                    matches += 1;
                    if let Some(sink) = sink.as_mut() {
                        sink.push(JoinedRow {
                            key: t.key,
                            left_payload: b.payload,
                            right_payload: t.payload,
                        });
                    }
                }
                idx = next[idx as usize - 1].load(Ordering::Relaxed);
            }
        }
        drop(sink);
        barrier.wait();
        if tid == 0 {
            stamp_phase(&mut times, &mut last, "probe");
        }
        (matches, out, times)
    });

    let mut result = JoinResult {
        elapsed_ns: clock.elapsed_ns(start),
        ..JoinResult::default()
    };
    let mut outs = Vec::with_capacity(per_worker.len());
    for (tid, (m, out, times)) in per_worker.into_iter().enumerate() {
        result.match_count += m;
        outs.push(out);
        if tid == 0 {
            result.phase_times = times;
        }
    }
    if materialize {
        result.output = Some(gather_output(&buffers.output[..s.len()], &outs));
    }
    Ok(result)
}

fn atomic_view(words: &mut [u32]) -> &[AtomicU32] {
    // SAFETY: AtomicU32 has the size and alignment of u32, and the exclusive
    // borrow guarantees no non-atomic access while the view lives.
    unsafe { &*(words as *mut [u32] as *const [AtomicU32]) }
}
