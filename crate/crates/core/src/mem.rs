//! Page-backed buffers with explicit first-touch control.
//!
//! Buffers are anonymous private mappings, so a freshly allocated buffer has
//! no resident pages. [`AllocMode::PreallocTouch`] writes every page before
//! the buffer is handed out; [`AllocMode::Lazy`] leaves page faults to the
//! first writer.

use crate::error::Result;
use bytemuck::Pod;
use memmap2::MmapMut;
use std::marker::PhantomData;
use std::ops::{Deref, DerefMut};

pub const PAGE_SIZE: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum AllocMode {
    #[default]
    PreallocTouch,
    Lazy,
}

impl AllocMode {
    pub fn as_str(self) -> &'static str {
        match self {
            AllocMode::PreallocTouch => "prealloc",
            AllocMode::Lazy => "lazy",
        }
    }
}

impl std::str::FromStr for AllocMode {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "prealloc" | "prealloc_touch" => Ok(AllocMode::PreallocTouch),
            "lazy" => Ok(AllocMode::Lazy),
            other => Err(crate::Error::InvalidArgument(format!(
                "unknown allocation mode `{other}`"
            ))),
        }
    }
}

/// Zero-initialized, fixed-length buffer of plain-old-data values.
pub struct Buffer<T: Pod> {
    map: Option<MmapMut>,
    len: usize,
    _marker: PhantomData<T>,
}

impl<T: Pod> Buffer<T> {
    pub fn zeroed(len: usize, mode: AllocMode) -> Result<Self> {
        let bytes = len
            .checked_mul(std::mem::size_of::<T>())
            .ok_or_else(|| crate::Error::InvalidArgument("buffer size overflow".into()))?;
        let map = if bytes == 0 {
            None
        } else {
            Some(MmapMut::map_anon(bytes)?)
        };
        let mut buf = Buffer {
            map,
            len,
            _marker: PhantomData,
        };
        if mode == AllocMode::PreallocTouch {
            buf.touch();
        }
        Ok(buf)
    }

    pub fn empty() -> Self {
        Buffer {
            map: None,
            len: 0,
            _marker: PhantomData,
        }
    }

    /// Writes one byte per page so that all pages are resident.
    pub fn touch(&mut self) {
        if let Some(map) = self.map.as_mut() {
            let ptr = map.as_mut_ptr();
            for off in (0..map.len()).step_by(PAGE_SIZE) {
                unsafe { ptr.add(off).write_volatile(0) };
            }
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn as_mut_ptr(&mut self) -> *mut T {
        match self.map.as_mut() {
            Some(map) => map.as_mut_ptr().cast(),
            None => std::ptr::NonNull::dangling().as_ptr(),
        }
    }
}

impl<T: Pod> Deref for Buffer<T> {
    type Target = [T];

    fn deref(&self) -> &[T] {
        match self.map.as_ref() {
            Some(map) => bytemuck::cast_slice(&map[..]),
            None => &[],
        }
    }
}

impl<T: Pod> DerefMut for Buffer<T> {
    fn deref_mut(&mut self) -> &mut [T] {
        match self.map.as_mut() {
            Some(map) => bytemuck::cast_slice_mut(&mut map[..]),
            None => &mut [],
        }
    }
}

impl<T: Pod + std::fmt::Debug> std::fmt::Debug for Buffer<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Buffer").field("len", &self.len).finish()
    }
}

/// Raw pointer that may be shared across a worker team. Every user must
/// guarantee that concurrent writes go to disjoint indexes.
#[derive(Clone, Copy)]
pub(crate) struct SharedMut<T>(pub *mut T);

unsafe impl<T: Send> Send for SharedMut<T> {}
unsafe impl<T: Send> Sync for SharedMut<T> {}

impl<T> SharedMut<T> {
    pub(crate) fn new(slice: &mut [T]) -> Self {
        SharedMut(slice.as_mut_ptr())
    }

    pub(crate) fn ptr(&self) -> *mut T {
        self.0
    }

    /// # Safety
    /// `start..start + len` must be in bounds and not aliased by any other
    /// live reference for the lifetime of the returned slice.
    #[allow(clippy::mut_from_ref)]
    pub(crate) unsafe fn slice_mut<'a>(&self, start: usize, len: usize) -> &'a mut [T] {
        std::slice::from_raw_parts_mut(self.0.add(start), len)
    }
}

/// Minor plus major page faults of this process so far, if the OS reports them.
pub fn page_faults() -> Option<u64> {
    #[cfg(unix)]
    {
        let mut usage: libc::rusage = unsafe { std::mem::zeroed() };
        let rc = unsafe { libc::getrusage(libc::RUSAGE_SELF, &mut usage) };
        if rc == 0 {
            return Some(usage.ru_minflt as u64 + usage.ru_majflt as u64);
        }
    }
    None
}
