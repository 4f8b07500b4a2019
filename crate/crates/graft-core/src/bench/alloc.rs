//! Byte-exact allocation counting for the scaling benchmarks.
//!
//! The harness reports peak live bytes per measured region, not RSS. RSS is
//! quantized in pages, inflated by allocator caching and never shrinks
//! promptly, all of which would blur the asymptotic difference the
//! benchmark exists to expose. Counting every allocation through the global
//! allocator instead gives a deterministic, reproducible number.

use std::alloc::{GlobalAlloc, Layout, System};
use std::sync::atomic::{AtomicU64, Ordering};

static CURRENT: AtomicU64 = AtomicU64::new(0);
static PEAK: AtomicU64 = AtomicU64::new(0);

const PROBE_BYTES: usize = 1 << 16;

/// System allocator wrapper that maintains live-byte and high-water
/// counters.
///
/// Binaries that run benchmarks must install it:
///
/// ```ignore
/// #[global_allocator]
/// static ALLOC: graft_core::bench::CountingAllocator =
///     graft_core::bench::CountingAllocator;
/// ```
///
/// Without that declaration the counters stay at zero; [`instrumented`]
/// detects the omission so a benchmark run fails loudly instead of
/// reporting zero-byte peaks.
pub struct CountingAllocator;

impl CountingAllocator {
    fn record_alloc(size: usize) {
        let now = CURRENT.fetch_add(size as u64, Ordering::Relaxed) + size as u64;
        PEAK.fetch_max(now, Ordering::Relaxed);
    }

    fn record_dealloc(size: usize) {
        CURRENT.fetch_sub(size as u64, Ordering::Relaxed);
    }
}

unsafe impl GlobalAlloc for CountingAllocator {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let p = System.alloc(layout);
        if !p.is_null() {
            Self::record_alloc(layout.size());
        }
        p
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        System.dealloc(ptr, layout);
        Self::record_dealloc(layout.size());
    }

    unsafe fn alloc_zeroed(&self, layout: Layout) -> *mut u8 {
        let p = System.alloc_zeroed(layout);
        if !p.is_null() {
            Self::record_alloc(layout.size());
        }
        p
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        let p = System.realloc(ptr, layout, new_size);
        if !p.is_null() {
            Self::record_dealloc(layout.size());
            Self::record_alloc(new_size);
        }
        p
    }
}

/// Live bytes currently allocated through the instrumented allocator.
pub fn current_bytes() -> u64 {
    CURRENT.load(Ordering::Relaxed)
}

/// High-water mark of live bytes since the last [`reset_peak`].
pub fn peak_bytes() -> u64 {
    PEAK.load(Ordering::Relaxed)
}

/// Starts a new measurement region by collapsing the peak to the current
/// live-byte count.
pub fn reset_peak() {
    PEAK.store(CURRENT.load(Ordering::Relaxed), Ordering::Relaxed);
}

/// Reports whether this binary actually routes allocations through
/// [`CountingAllocator`]: a deliberate heap allocation must move the
/// counter.
pub fn instrumented() -> bool {
    let before = current_bytes();
    let probe = std::hint::black_box(vec![0u8; PROBE_BYTES]);
    let during = current_bytes();
    drop(probe);
    during >= before + PROBE_BYTES as u64
}
