use super::crack::{crack_partition, crack_range};
use super::{
    build_partitions, gather_output, head_offsets, probe_partitions, stamp_phase, JoinAlgorithm,
    JoinBuffers, JoinOptions, JoinResult, WorkerOutput,
};
use crate::datagen::Relation;
use crate::error::Result;
use crate::mem::{AllocMode, SharedMut};
use crate::sync::{AnyQueue, Backoff, Task, TaskKind, TaskQueue};
use crate::team;
use crate::timing::Clock;
use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Barrier;

/// Ranges shorter than this are cracked to the full depth by one worker.
const CRACK_CUTOFF: usize = 4096;

#[derive(Debug, Clone, Copy)]
struct CrackTask {
    rel: u8,
    begin: usize,
    end: usize,
    /// Key bits still to crack; the next split is on bit `remaining - 1`.
    remaining: u32,
    prefix: usize,
}

/// Cracking join: copies both inputs into work buffers, cracks them in
/// place to `b1 + b2` key bits and joins partition pairs in cache.
pub fn crk_join(build: &Relation, probe: &Relation, opts: &JoinOptions) -> Result<JoinResult> {
    let mut buffers = JoinBuffers::for_join(
        JoinAlgorithm::Crk,
        build.len(),
        probe.len(),
        opts,
        AllocMode::Lazy,
    )?;
    crk_join_with(build, probe, opts, &mut buffers)
}

pub fn crk_join_with(
    build: &Relation,
    probe: &Relation,
    opts: &JoinOptions,
    buffers: &mut JoinBuffers,
) -> Result<JoinResult> {
    opts.validate_partitioned(build.len())?;
    buffers.check(
        JoinAlgorithm::Crk,
        build.len(),
        probe.len(),
        opts.materialize,
    )?;
    let clock = Clock::global();
    let start = clock.now();

    let r = build.tuples();
    let s = probe.tuples();
    let threads = opts.threads;
    let variant = opts.kernel_variant;
    let depth = opts.total_radix_bits();
    let parts = 1usize << depth;
    let groups = 1usize << opts.radix_bits_pass1;
    let per_group = 1usize << opts.radix_bits_pass2;

    let work = [
        SharedMut::new(&mut buffers.build_a[..r.len()]),
        SharedMut::new(&mut buffers.probe_a[..s.len()]),
    ];
    let heads = SharedMut::new(&mut buffers.heads[..]);
    let next = SharedMut::new(&mut buffers.next[..r.len()]);
    let leaf_starts: [Vec<AtomicU64>; 2] = [
        (0..parts).map(|_| AtomicU64::new(0)).collect(),
        (0..parts).map(|_| AtomicU64::new(0)).collect(),
    ];
    let r_chunks = team::chunk_ranges(r.len(), threads, 1);
    let s_chunks = team::chunk_ranges(s.len(), threads, 1);
    let crack_queue: AnyQueue<CrackTask> =
        AnyQueue::new(opts.queue_kind, 2 * (r.len() + s.len()) / CRACK_CUTOFF + 16);
    let pending = AtomicUsize::new(0);
    let queue: AnyQueue<Task> = AnyQueue::new(opts.queue_kind, groups);
    let barrier = Barrier::new(threads);
    let materialize = opts.materialize;
    let out_buf = SharedMut::new(&mut buffers.output[..if materialize { s.len() } else { 0 }]);
    let lens = [r.len(), s.len()];

    // Cracks one range; large children go back to the queue.
    let process = |task: CrackTask| {
        let mut stack = vec![task];
        while let Some(t) = stack.pop() {
            let starts = &leaf_starts[t.rel as usize];
            // SAFETY: queued and stacked ranges are pairwise disjoint.
            let data = unsafe { work[t.rel as usize].slice_mut(t.begin, t.end - t.begin) };
            if t.remaining == 0 || data.len() < CRACK_CUTOFF {
                crack_range(data, t.begin, t.remaining, t.prefix, &mut |digit, at| {
                    starts[digit].store(at as u64, Ordering::Relaxed)
                });
                continue;
            }
            let bit = t.remaining - 1;
            let split = t.begin + crack_partition(data, bit);
            for (begin, end, low) in [(t.begin, split, 0), (split, t.end, 1)] {
                let child = CrackTask {
                    rel: t.rel,
                    begin,
                    end,
                    remaining: bit,
                    prefix: (t.prefix << 1) | low,
                };
                if bit > 0 && end - begin >= CRACK_CUTOFF {
                    pending.fetch_add(1, Ordering::AcqRel);
                    if let Err(child) = crack_queue.push(child) {
                        pending.fetch_sub(1, Ordering::AcqRel);
                        stack.push(child);
                    }
                } else {
                    stack.push(child);
                }
            }
        }
    };

    let per_worker = team::run(threads, |tid| {
        let mut times = BTreeMap::new();
        let mut last = start;

        // SAFETY: each worker writes its own chunk of the work buffers.
        unsafe {
            let c = r_chunks[tid].clone();
            work[0].slice_mut(c.start, c.len()).copy_from_slice(&r[c]);
            let c = s_chunks[tid].clone();
            work[1].slice_mut(c.start, c.len()).copy_from_slice(&s[c]);
        }
        barrier.wait();
        if tid == 0 {
            stamp_phase(&mut times, &mut last, "copy");
            for rel in 0..2u8 {
                pending.fetch_add(1, Ordering::AcqRel);
                let root = CrackTask {
                    rel,
                    begin: 0,
                    end: lens[rel as usize],
                    remaining: depth,
                    prefix: 0,
                };
                if crack_queue.push(root).is_err() {
                    unreachable!("crack queue holds at least two tasks");
                }
            }
        }
        barrier.wait();

        let mut backoff = Backoff::default();
        loop {
            if let Some(task) = crack_queue.pop() {
                process(task);
                pending.fetch_sub(1, Ordering::AcqRel);
                backoff = Backoff::default();
            } else if pending.load(Ordering::Acquire) == 0 {
                break;
            } else {
                backoff.snooze();
            }
        }
        barrier.wait();
        if tid == 0 {
            stamp_phase(&mut times, &mut last, "crack");
        }

        let off_r = offsets(&leaf_starts[0], r.len());
        let off_s = offsets(&leaf_starts[1], s.len());
        let hoff = head_offsets(&off_r, depth);
        if tid == 0 {
            for g in 0..groups {
                if queue
                    .push(Task::partition(TaskKind::BuildProbe, g as u32))
                    .is_err()
                {
                    unreachable!("queue sized for one task per group");
                }
            }
        }
        barrier.wait();

        while let Some(task) = queue.pop() {
            let g = task.partition as usize;
            // SAFETY: tasks own disjoint partition groups.
            unsafe {
                build_partitions(
                    &work[0],
                    &off_r,
                    &hoff,
                    &heads,
                    &next,
                    g * per_group..(g + 1) * per_group,
                    depth,
                    variant,
                );
            }
        }
        barrier.wait();
        if tid == 0 {
            stamp_phase(&mut times, &mut last, "build");
            for g in 0..groups {
                if queue
                    .push(Task::partition(TaskKind::BuildProbe, g as u32))
                    .is_err()
                {
                    unreachable!("queue sized for one task per group");
                }
            }
        }
        barrier.wait();

        let mut out = WorkerOutput::default();
        let mut matches = 0u64;
        while let Some(task) = queue.pop() {
            let g = task.partition as usize;
            let range = off_s[g * per_group] as usize..off_s[(g + 1) * per_group] as usize;
            // SAFETY: the task owns the output range of its probe tuples.
            let mut sink = materialize.then(|| unsafe { out.sink(&out_buf, range) });
            // SAFETY: after the build barrier every region is read-only.
            matches += unsafe {
                probe_partitions(
                    &work[0],
                    &work[1],
                    &off_r,
                    &off_s,
                    &hoff,
                    &heads,
                    &next,
                    g * per_group..(g + 1) * per_group,
                    depth,
                    sink.as_mut(),
                )
            };
        }
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

fn offsets(starts: &[AtomicU64], len: usize) -> Vec<u64> {
    let mut out: Vec<u64> = starts.iter().map(|a| a.load(Ordering::Relaxed)).collect();
    out.push(len as u64);
    out
}
