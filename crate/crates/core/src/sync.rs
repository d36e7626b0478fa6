//! Task distribution primitives.
//!
//! [`LockFreeQueue`] is a bounded multi-producer/multi-consumer ring with a
//! sequence number per slot (Vyukov's design): producers and consumers claim
//! positions with a CAS and never enter the kernel. [`MutexQueue`] guards a
//! `VecDeque` with a blocking mutex and a condition variable, so contended
//! callers sleep in the OS. Both count how often a caller had to retry or
//! wait, which is what the contention benchmark reports.

use crate::error::{Error, Result};
use crate::microbench::{MetricKind, MicrobenchResult};
use crate::timing::Clock;
use crossbeam_utils::CachePadded;
use std::cell::UnsafeCell;
use std::collections::VecDeque;
use std::mem::MaybeUninit;
use std::sync::atomic::{AtomicBool, AtomicU32, AtomicU64, AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex, TryLockError};
use std::time::Duration;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TaskKind {
    Partition,
    BuildProbe,
}

/// A unit of join work: one partition, or one key-range of a partition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Task {
    pub kind: TaskKind,
    pub partition: u32,
    pub level: u8,
    pub begin: u64,
    pub end: u64,
}

impl Task {
    pub fn partition(kind: TaskKind, partition: u32) -> Self {
        Task {
            kind,
            partition,
            level: 0,
            begin: 0,
            end: 0,
        }
    }
}

pub trait TaskQueue<T>: Sync {
    /// Enqueues `item`, handing it back if the queue is full.
    fn push(&self, item: T) -> Result<(), T>;
    /// Dequeues an item, or `None` if the queue is empty at this instant.
    fn pop(&self) -> Option<T>;
    fn capacity(&self) -> usize;
    /// Number of times an operation found the queue contended.
    fn contended(&self) -> u64;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum QueueKind {
    #[default]
    LockFree,
    Mutex,
}

impl QueueKind {
    pub fn as_str(self) -> &'static str {
        match self {
            QueueKind::LockFree => "lockfree",
            QueueKind::Mutex => "mutex",
        }
    }
}

impl std::str::FromStr for QueueKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lockfree" | "lock-free" => Ok(QueueKind::LockFree),
            "mutex" => Ok(QueueKind::Mutex),
            other => Err(Error::InvalidArgument(format!(
                "unknown queue kind `{other}`"
            ))),
        }
    }
}

struct Slot<T> {
    seq: AtomicUsize,
    value: UnsafeCell<MaybeUninit<T>>,
}

pub struct LockFreeQueue<T> {
    slots: Box<[Slot<T>]>,
    mask: usize,
    head: CachePadded<AtomicUsize>,
    tail: CachePadded<AtomicUsize>,
    retries: CachePadded<AtomicU64>,
}

unsafe impl<T: Send> Send for LockFreeQueue<T> {}
unsafe impl<T: Send> Sync for LockFreeQueue<T> {}

impl<T> LockFreeQueue<T> {
    /// Capacity is rounded up to a power of two (minimum 2).
    pub fn with_capacity(capacity: usize) -> Self {
        let cap = capacity.max(2).next_power_of_two();
        let slots = (0..cap)
            .map(|i| Slot {
                seq: AtomicUsize::new(i),
                value: UnsafeCell::new(MaybeUninit::uninit()),
            })
            .collect();
        LockFreeQueue {
            slots,
            mask: cap - 1,
            head: CachePadded::new(AtomicUsize::new(0)),
            tail: CachePadded::new(AtomicUsize::new(0)),
            retries: CachePadded::new(AtomicU64::new(0)),
        }
    }
}

impl<T: Send> TaskQueue<T> for LockFreeQueue<T> {
    fn push(&self, item: T) -> Result<(), T> {
        let mut pos = self.tail.load(Ordering::Relaxed);
        loop {
            let slot = &self.slots[pos & self.mask];
            let seq = slot.seq.load(Ordering::Acquire);
            let diff = seq as isize - pos as isize;
            if diff == 0 {
                match self.tail.compare_exchange_weak(
                    pos,
                    pos + 1,
                    Ordering::Relaxed,
                    Ordering::Relaxed,
                ) {
                    Ok(_) => {
                        unsafe { (*slot.value.get()).write(item) };
                        slot.seq.store(pos + 1, Ordering::Release);
                        return Ok(());
                    }
                    Err(current) => {
                        self.retries.fetch_add(1, Ordering::Relaxed);
                        pos = current;
                    }
                }
            } else if diff < 0 {
                return Err(item);
            } else {
                pos = self.tail.load(Ordering::Relaxed);
            }
        }
    }

    fn pop(&self) -> Option<T> {
        let mut pos = self.head.load(Ordering::Relaxed);
        loop {
            let slot = &self.slots[pos & self.mask];
            let seq = slot.seq.load(Ordering::Acquire);
            let diff = seq as isize - (pos + 1) as isize;
            if diff == 0 {
                match self.head.compare_exchange_weak(
                    pos,
                    pos + 1,
                    Ordering::Relaxed,
                    Ordering::Relaxed,
                ) {
                    Ok(_) => {
                        let item = unsafe { (*slot.value.get()).assume_init_read() };
                        slot.seq.store(pos + self.mask + 1, Ordering::Release);
                        return Some(item);
                    }
                    Err(current) => {
                        self.retries.fetch_add(1, Ordering::Relaxed);
                        pos = current;
                    }
                }
            } else if diff < 0 {
                return None;
            } else {
                pos = self.head.load(Ordering::Relaxed);
            }
        }
    }

    fn capacity(&self) -> usize {
        self.mask + 1
    }

    fn contended(&self) -> u64 {
        self.retries.load(Ordering::Relaxed)
    }
}

impl<T> Drop for LockFreeQueue<T> {
    fn drop(&mut self) {
        let head = *self.head.get_mut();
        let tail = *self.tail.get_mut();
        for pos in head..tail {
            let slot = &mut self.slots[pos & self.mask];
            unsafe { slot.value.get_mut().assume_init_drop() };
        }
    }
}

pub struct MutexQueue<T> {
    inner: Mutex<VecDeque<T>>,
    not_empty: Condvar,
    capacity: usize,
    waits: AtomicU64,
}

impl<T> MutexQueue<T> {
    pub fn with_capacity(capacity: usize) -> Self {
        let capacity = capacity.max(1);
        MutexQueue {
            inner: Mutex::new(VecDeque::with_capacity(capacity)),
            not_empty: Condvar::new(),
            capacity,
            waits: AtomicU64::new(0),
        }
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, VecDeque<T>> {
        match self.inner.try_lock() {
            Ok(guard) => guard,
            Err(TryLockError::WouldBlock) => {
                self.waits.fetch_add(1, Ordering::Relaxed);
                self.inner.lock().unwrap_or_else(|e| e.into_inner())
            }
            Err(TryLockError::Poisoned(e)) => e.into_inner(),
        }
    }

    /// Blocks until an item is available or `timeout` passes.
    pub fn pop_wait(&self, timeout: Duration) -> Option<T> {
        let guard = self.lock();
        let (mut guard, _) = self
            .not_empty
            .wait_timeout_while(guard, timeout, |q| q.is_empty())
            .unwrap_or_else(|e| e.into_inner());
        guard.pop_front()
    }
}

impl<T: Send> TaskQueue<T> for MutexQueue<T> {
    fn push(&self, item: T) -> Result<(), T> {
        let mut q = self.lock();
        if q.len() >= self.capacity {
            return Err(item);
        }
        q.push_back(item);
        drop(q);
        self.not_empty.notify_one();
        Ok(())
    }

    fn pop(&self) -> Option<T> {
        self.lock().pop_front()
    }

    fn capacity(&self) -> usize {
        self.capacity
    }

    fn contended(&self) -> u64 {
        self.waits.load(Ordering::Relaxed)
    }
}

/// Either queue implementation, selected at run time.
#[allow(clippy::large_enum_variant)]
pub enum AnyQueue<T> {
    LockFree(LockFreeQueue<T>),
    Mutex(MutexQueue<T>),
}

impl<T> AnyQueue<T> {
    pub fn new(kind: QueueKind, capacity: usize) -> Self {
        match kind {
            QueueKind::LockFree => AnyQueue::LockFree(LockFreeQueue::with_capacity(capacity)),
            QueueKind::Mutex => AnyQueue::Mutex(MutexQueue::with_capacity(capacity)),
        }
    }

    pub fn kind(&self) -> QueueKind {
        match self {
            AnyQueue::LockFree(_) => QueueKind::LockFree,
            AnyQueue::Mutex(_) => QueueKind::Mutex,
        }
    }
}

impl<T: Send> TaskQueue<T> for AnyQueue<T> {
    #[inline]
    fn push(&self, item: T) -> Result<(), T> {
        match self {
            AnyQueue::LockFree(q) => q.push(item),
            AnyQueue::Mutex(q) => q.push(item),
        }
    }

    #[inline]
    fn pop(&self) -> Option<T> {
        match self {
            AnyQueue::LockFree(q) => q.pop(),
            AnyQueue::Mutex(q) => q.pop(),
        }
    }

    fn capacity(&self) -> usize {
        match self {
            AnyQueue::LockFree(q) => q.capacity(),
            AnyQueue::Mutex(q) => q.capacity(),
        }
    }

    fn contended(&self) -> u64 {
        match self {
            AnyQueue::LockFree(q) => q.contended(),
            AnyQueue::Mutex(q) => q.contended(),
        }
    }
}

/// Busy-wait with bounded spinning, then yield to the scheduler so that an
/// oversubscribed host still makes progress.
#[derive(Default)]
pub struct Backoff {
    step: u32,
}

impl Backoff {
    const SPIN_LIMIT: u32 = 6;

    #[inline]
    pub fn snooze(&mut self) {
        if self.step <= Self::SPIN_LIMIT {
            for _ in 0..1u32 << self.step {
                std::hint::spin_loop();
            }
            self.step += 1;
        } else {
            std::thread::yield_now();
        }
    }
}

/// Test-and-test-and-set spin lock.
#[derive(Default)]
pub struct SpinLatch {
    locked: AtomicBool,
}

pub struct SpinGuard<'a> {
    latch: &'a SpinLatch,
}

impl SpinLatch {
    pub const fn new() -> Self {
        SpinLatch {
            locked: AtomicBool::new(false),
        }
    }

    pub fn lock(&self) -> SpinGuard<'_> {
        let mut backoff = Backoff::default();
        loop {
            if !self.locked.load(Ordering::Relaxed)
                && self
                    .locked
                    .compare_exchange_weak(false, true, Ordering::Acquire, Ordering::Relaxed)
                    .is_ok()
            {
                return SpinGuard { latch: self };
            }
            backoff.snooze();
        }
    }

    pub fn try_lock(&self) -> Option<SpinGuard<'_>> {
        self.locked
            .compare_exchange(false, true, Ordering::Acquire, Ordering::Relaxed)
            .ok()
            .map(|_| SpinGuard { latch: self })
    }
}

impl Drop for SpinGuard<'_> {
    fn drop(&mut self) {
        self.latch.locked.store(false, Ordering::Release);
    }
}

/// Latch bit of a bucket word; the remaining 31 bits hold the bucket value.
pub const WORD_LATCH: u32 = 1 << 31;

/// Spins until the latch bit of `word` is acquired and returns the bucket
/// value stored alongside it.
#[inline]
pub fn latch_word(word: &AtomicU32) -> u32 {
    let mut backoff = Backoff::default();
    loop {
        let prev = word.fetch_or(WORD_LATCH, Ordering::Acquire);
        if prev & WORD_LATCH == 0 {
            return prev;
        }
        while word.load(Ordering::Relaxed) & WORD_LATCH != 0 {
            backoff.snooze();
        }
    }
}

/// Stores `value` and releases the latch bit in one write.
#[inline]
pub fn unlatch_word(word: &AtomicU32, value: u32) {
    assert_eq!(value & WORD_LATCH, 0);
    word.store(value, Ordering::Release);
}

#[derive(Debug, Clone)]
pub struct ContentionReport {
    pub queue_kind: QueueKind,
    pub threads: usize,
    pub result: MicrobenchResult,
    /// Tasks never consumed.
    pub lost: u64,
    /// Tasks consumed more than once.
    pub duplicated: u64,
    pub contended: u64,
}

/// Every worker pushes its share of `tasks` and pops from the shared queue
/// until all tasks are consumed, spinning `task_cost_ns` per task. A flag per
/// task id checks exactly-once consumption.
pub fn contention_bench(
    queue_kind: QueueKind,
    threads: usize,
    tasks: u64,
    task_cost_ns: u64,
) -> Result<ContentionReport> {
    if threads == 0 {
        return Err(Error::InvalidArgument("threads must be at least 1".into()));
    }
    if tasks < threads as u64 {
        return Err(Error::InvalidArgument(format!(
            "need at least one task per thread ({tasks} tasks, {threads} threads)"
        )));
    }
    let queue = AnyQueue::<u64>::new(queue_kind, tasks as usize);
    let flags: Vec<AtomicBool> = (0..tasks).map(|_| AtomicBool::new(false)).collect();
    let consumed = AtomicU64::new(0);
    let duplicated = AtomicU64::new(0);
    let clock = Clock::global();
    let barrier = std::sync::Barrier::new(threads);

    let spans = crate::team::run(threads, |tid| {
        let lo = tasks * tid as u64 / threads as u64;
        let hi = tasks * (tid as u64 + 1) / threads as u64;
        let mut next = lo;
        let mut backoff = Backoff::default();
        barrier.wait();
        let start = clock.now();
        while consumed.load(Ordering::Relaxed) < tasks {
            if next < hi && queue.push(next).is_ok() {
                next += 1;
            }
            match queue.pop() {
                Some(id) => {
                    if flags[id as usize].swap(true, Ordering::Relaxed) {
                        duplicated.fetch_add(1, Ordering::Relaxed);
                    }
                    if task_cost_ns > 0 {
                        let t = clock.now();
                        while clock.elapsed_ns(t) < task_cost_ns {
                            std::hint::spin_loop();
                        }
                    }
                    consumed.fetch_add(1, Ordering::Relaxed);
                    backoff = Backoff::default();
                }
                None if next >= hi => backoff.snooze(),
                None => {}
            }
        }
        (start, clock.now())
    });

    let start = spans.iter().map(|s| s.0).min().unwrap();
    let end = spans.iter().map(|s| s.1).max().unwrap();
    let lost = flags.iter().filter(|f| !f.load(Ordering::Relaxed)).count() as u64;
    Ok(ContentionReport {
        queue_kind,
        threads,
        result: MicrobenchResult::new(
            MetricKind::OpsPerSec,
            tasks,
            clock.ns_between(start, end),
            0,
        ),
        lost,
        duplicated: duplicated.load(Ordering::Relaxed),
        contended: queue.contended(),
    })
}
