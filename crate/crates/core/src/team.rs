//! Scoped worker teams with optional core pinning.
//!
//! Every operator that runs multi-threaded spawns its team through [`run`].
//! When a core list is installed with [`set_affinity`], worker `i` pins
//! itself to `cores[i % cores.len()]` before doing any work.

use std::sync::{Arc, RwLock};

static AFFINITY: RwLock<Option<Arc<[usize]>>> = RwLock::new(None);

pub fn set_affinity(cores: Option<Vec<usize>>) {
    *AFFINITY.write().unwrap() = cores.map(Arc::from);
}

pub fn affinity() -> Option<Arc<[usize]>> {
    AFFINITY.read().unwrap().clone()
}

/// Number of hardware threads available to this process.
pub fn hardware_threads() -> usize {
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
}

#[cfg(target_os = "linux")]
pub fn pin_current_thread(cpu: usize) -> std::io::Result<()> {
    unsafe {
        let mut set: libc::cpu_set_t = std::mem::zeroed();
        libc::CPU_SET(cpu, &mut set);
        if libc::sched_setaffinity(0, std::mem::size_of::<libc::cpu_set_t>(), &set) != 0 {
            return Err(std::io::Error::last_os_error());
        }
    }
    Ok(())
}

#[cfg(not(target_os = "linux"))]
pub fn pin_current_thread(_cpu: usize) -> std::io::Result<()> {
    Err(std::io::Error::new(
        std::io::ErrorKind::Unsupported,
        "thread pinning is only implemented on Linux",
    ))
}

/// Runs `f(worker_id)` on `threads` scoped workers and returns the results in
/// worker order.
pub fn run<R, F>(threads: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync,
{
    let threads = threads.max(1);
    let cores = affinity();
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..threads)
            .map(|tid| {
                let f = &f;
                let cores = cores.clone();
                s.spawn(move || {
                    if let Some(cores) = cores.as_deref() {
                        if !cores.is_empty() {
                            // Pinning is best effort inside a team; the
                            // harness validates the core list up front.
                            let _ = pin_current_thread(cores[tid % cores.len()]);
                        }
                    }
                    f(tid)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| match h.join() {
                Ok(r) => r,
                Err(payload) => std::panic::resume_unwind(payload),
            })
            .collect()
    })
}

/// Splits `0..len` into `parts` contiguous ranges whose boundaries are
/// multiples of `align` (except the final end).
pub fn chunk_ranges(len: usize, parts: usize, align: usize) -> Vec<std::ops::Range<usize>> {
    let parts = parts.max(1);
    let align = align.max(1);
    let units = len.div_ceil(align);
    let per = units / parts;
    let extra = units % parts;
    let mut out = Vec::with_capacity(parts);
    let mut start_unit = 0;
    for p in 0..parts {
        let n = per + usize::from(p < extra);
        let start = (start_unit * align).min(len);
        let end = ((start_unit + n) * align).min(len);
        out.push(start..end);
        start_unit += n;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunks_cover_range_with_aligned_boundaries() {
        for len in [0, 1, 63, 64, 65, 1000, 4097] {
            for parts in 1..=9 {
                let chunks = chunk_ranges(len, parts, 64);
                assert_eq!(chunks.len(), parts);
                assert_eq!(chunks.first().unwrap().start, 0);
                assert_eq!(chunks.last().unwrap().end, len);
                for w in chunks.windows(2) {
                    assert_eq!(w[0].end, w[1].start);
                    assert!(w[0].end == len || w[0].end % 64 == 0);
                }
            }
        }
    }

    #[test]
    fn run_returns_results_in_worker_order() {
        let out = run(5, |tid| tid * 10);
        assert_eq!(out, vec![0, 10, 20, 30, 40]);
    }
}
