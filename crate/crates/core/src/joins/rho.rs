use super::kernels::{self, Digit};
use super::partition::chunk_cursors;
use super::{
    build_partitions, gather_output, head_offsets, probe_partitions, stamp_phase, JoinAlgorithm,
    JoinBuffers, JoinOptions, JoinResult, WorkerOutput,
};
use crate::datagen::{Relation, Tuple};
use crate::error::Result;
use crate::mem::{AllocMode, SharedMut};
use crate::sync::{AnyQueue, Task, TaskKind, TaskQueue};
use crate::team;
use crate::timing::Clock;
use std::collections::BTreeMap;
use std::sync::{Barrier, OnceLock};

/// Radix join with two partitioning passes.
pub fn rho_join(build: &Relation, probe: &Relation, opts: &JoinOptions) -> Result<JoinResult> {
    let mut buffers = JoinBuffers::for_join(
        JoinAlgorithm::Rho,
        build.len(),
        probe.len(),
        opts,
        AllocMode::Lazy,
    )?;
    rho_join_with(build, probe, opts, &mut buffers)
}

/// Pass 1 splits both inputs on key bits `[0, b1)` with every worker
/// scattering its own input chunk. Pass 2 splits each pass-1 partition on
/// bits `[b1, b1 + b2)`, and the in-cache build and probe run per pass-1
/// partition; both are handed out one partition per task through the
/// configured queue.
pub fn rho_join_with(
    build: &Relation,
    probe: &Relation,
    opts: &JoinOptions,
    buffers: &mut JoinBuffers,
) -> Result<JoinResult> {
    opts.validate_partitioned(build.len())?;
    buffers.check(
        JoinAlgorithm::Rho,
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
    let b1 = opts.radix_bits_pass1;
    let b2 = opts.radix_bits_pass2;
    let total_bits = b1 + b2;
    let parts1 = 1usize << b1;
    let parts2 = 1usize << b2;
    let d1 = Digit::new(b1, 0);
    let d2 = Digit::new(b2, b1);

    let r1 = SharedMut::new(&mut buffers.build_a[..r.len()]);
    let s1 = SharedMut::new(&mut buffers.probe_a[..s.len()]);
    let r2 = SharedMut::new(&mut buffers.build_b[..r.len()]);
    let s2 = SharedMut::new(&mut buffers.probe_b[..s.len()]);
    let heads = SharedMut::new(&mut buffers.heads[..]);
    let next = SharedMut::new(&mut buffers.next[..r.len()]);

    let r_chunks = team::chunk_ranges(r.len(), threads, 1);
    let s_chunks = team::chunk_ranges(s.len(), threads, 1);
    let hist1: Vec<OnceLock<(Vec<u64>, Vec<u64>)>> =
        (0..threads).map(|_| OnceLock::new()).collect();
    let hist2: Vec<OnceLock<(Vec<u64>, Vec<u64>)>> = (0..parts1).map(|_| OnceLock::new()).collect();
    let layout: OnceLock<Layout> = OnceLock::new();
    let queue: AnyQueue<Task> = AnyQueue::new(opts.queue_kind, parts1);
    let barrier = Barrier::new(threads);
    let materialize = opts.materialize;
    let out_buf = SharedMut::new(&mut buffers.output[..if materialize { s.len() } else { 0 }]);

    let push_all = |kind: TaskKind| {
        for p in 0..parts1 {
            if queue.push(Task::partition(kind, p as u32)).is_err() {
                unreachable!("queue sized for one task per partition");
            }
        }
    };

    let per_worker = team::run(threads, |tid| {
        let mut times = BTreeMap::new();
        let mut last = start;

        // pass 1: histogram of the worker's input chunks
        let rc = &r[r_chunks[tid].clone()];
        let sc = &s[s_chunks[tid].clone()];
        let mut hr = vec![0u64; parts1];
        let mut hs = vec![0u64; parts1];
        kernels::histogram_into(rc, d1, variant, &mut hr);
        kernels::histogram_into(sc, d1, variant, &mut hs);
        hist1[tid].set((hr, hs)).unwrap();
        barrier.wait();
        if tid == 0 {
            stamp_phase(&mut times, &mut last, "hist1");
        }

        // pass 1: scatter
        let hr: Vec<&[u64]> = hist1
            .iter()
            .map(|h| h.get().unwrap().0.as_slice())
            .collect();
        let hs: Vec<&[u64]> = hist1
            .iter()
            .map(|h| h.get().unwrap().1.as_slice())
            .collect();
        let mut cr = chunk_cursors(&hr, tid, 0);
        let mut cs = chunk_cursors(&hs, tid, 0);
        // SAFETY: cursor ranges of different workers are disjoint.
        unsafe {
            kernels::scatter(rc, d1, variant, &mut cr, r1.ptr());
            kernels::scatter(sc, d1, variant, &mut cs, s1.ptr());
        }
        barrier.wait();
        if tid == 0 {
            stamp_phase(&mut times, &mut last, "copy1");
            let off_r = prefix(&merge(&hr, parts1));
            let off_s = prefix(&merge(&hs, parts1));
            layout.set(Layout { off_r, off_s }).unwrap();
            push_all(TaskKind::Partition);
        }
        barrier.wait();
        let lay1 = layout.get().unwrap();

        // pass 2: histograms per pass-1 partition
        while let Some(task) = queue.pop() {
            let p = task.partition as usize;
            // SAFETY: pass 1 is complete; every worker only reads here.
            let (rp, sp) = unsafe { (part(&r1, &lay1.off_r, p), part(&s1, &lay1.off_s, p)) };
            let mut hr = vec![0u64; parts2];
            let mut hs = vec![0u64; parts2];
            kernels::histogram_into(rp, d2, variant, &mut hr);
            kernels::histogram_into(sp, d2, variant, &mut hs);
            hist2[p].set((hr, hs)).unwrap();
        }
        barrier.wait();
        if tid == 0 {
            stamp_phase(&mut times, &mut last, "hist2");
            push_all(TaskKind::Partition);
        }
        barrier.wait();

        // pass 2: scatter into the second buffer pair
        while let Some(task) = queue.pop() {
            let p = task.partition as usize;
            let (hr, hs) = hist2[p].get().unwrap();
            let mut cr = chunk_cursors(&[hr.as_slice()], 0, lay1.off_r[p] as usize);
            let mut cs = chunk_cursors(&[hs.as_slice()], 0, lay1.off_s[p] as usize);
            // SAFETY: partition p of the first pair is only read by this task
            // and its destination range is disjoint from every other task's.
            unsafe {
                let rp = part(&r1, &lay1.off_r, p);
                let sp = part(&s1, &lay1.off_s, p);
                kernels::scatter(rp, d2, variant, &mut cr, r2.ptr());
                kernels::scatter(sp, d2, variant, &mut cs, s2.ptr());
            }
        }
        barrier.wait();
        if tid == 0 {
            stamp_phase(&mut times, &mut last, "copy2");
        }

        // fine-grained offsets; computed redundantly by every worker
        let hr2: Vec<u64> = hist2
            .iter()
            .flat_map(|h| h.get().unwrap().0.iter().copied())
            .collect();
        let hs2: Vec<u64> = hist2
            .iter()
            .flat_map(|h| h.get().unwrap().1.iter().copied())
            .collect();
        let off_r2 = prefix(&hr2);
        let off_s2 = prefix(&hs2);
        let hoff = head_offsets(&off_r2, total_bits);
        barrier.wait();
        if tid == 0 {
            push_all(TaskKind::BuildProbe);
        }
        barrier.wait();

        // build
        while let Some(task) = queue.pop() {
            let p = task.partition as usize;
            // SAFETY: tasks own disjoint partition groups.
            unsafe {
                build_partitions(
                    &r2,
                    &off_r2,
                    &hoff,
                    &heads,
                    &next,
                    p * parts2..(p + 1) * parts2,
                    total_bits,
                    variant,
                );
            }
        }
        barrier.wait();
        if tid == 0 {
            stamp_phase(&mut times, &mut last, "build");
            push_all(TaskKind::BuildProbe);
        }
        barrier.wait();

        // probe
        let mut out = WorkerOutput::default();
        let mut matches = 0u64;
        while let Some(task) = queue.pop() {
            let p = task.partition as usize;
            let range = lay1.off_s[p] as usize..lay1.off_s[p + 1] as usize;
            // SAFETY: the task owns the output range of its probe tuples.
            let mut sink = materialize.then(|| unsafe { out.sink(&out_buf, range) });
            // SAFETY: after the build barrier every region is read-only.
            matches += unsafe {
                probe_partitions(
                    &r2,
                    &s2,
                    &off_r2,
                    &off_s2,
                    &hoff,
                    &heads,
                    &next,
                    p * parts2..(p + 1) * parts2,
                    total_bits,
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

#[derive(Debug)]
struct Layout {
    off_r: Vec<u64>,
    off_s: Vec<u64>,
}

fn merge(hists: &[&[u64]], bins: usize) -> Vec<u64> {
    let mut out = vec![0u64; bins];
    for h in hists {
        for (o, &c) in out.iter_mut().zip(h.iter()) {
            *o += c;
        }
    }
    out
}

fn prefix(bins: &[u64]) -> Vec<u64> {
    let mut out = Vec::with_capacity(bins.len() + 1);
    let mut acc = 0;
    out.push(0);
    for &b in bins {
        acc += b;
        out.push(acc);
    }
    out
}

/// # Safety
/// No worker may write the partition while the slice lives.
unsafe fn part<'a>(buf: &SharedMut<Tuple>, offsets: &[u64], p: usize) -> &'a [Tuple] {
    let lo = offsets[p] as usize;
    buf.slice_mut(lo, offsets[p + 1] as usize - lo)
}
