//! Memory accounting: a counting global allocator (installed by binaries
//! that want exact heap tracking) plus resident-set probes from
//! /proc/self/status.

use std::alloc::{GlobalAlloc, Layout, System};
use std::sync::atomic::{AtomicUsize, Ordering};

static CURRENT: AtomicUsize = AtomicUsize::new(0);
static PEAK: AtomicUsize = AtomicUsize::new(0);

/// Wraps the system allocator and keeps byte counters. Install with
/// `#[global_allocator]` in a binary to get exact peak-heap numbers.
pub struct CountingAllocator;

unsafe impl GlobalAlloc for CountingAllocator {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let p = System.alloc(layout);
        if !p.is_null() {
            let cur = CURRENT.fetch_add(layout.size(), Ordering::Relaxed) + layout.size();
            PEAK.fetch_max(cur, Ordering::Relaxed);
        }
        p
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        System.dealloc(ptr, layout);
        CURRENT.fetch_sub(layout.size(), Ordering::Relaxed);
    }
}

pub fn tracked_current_bytes() -> usize {
    CURRENT.load(Ordering::Relaxed)
}

pub fn tracked_peak_bytes() -> usize {
    PEAK.load(Ordering::Relaxed)
}

/// Resets the peak to the current level (per-benchmark-cell accounting).
pub fn reset_peak() {
    PEAK.store(CURRENT.load(Ordering::Relaxed), Ordering::Relaxed);
}

fn proc_status_kb(key: &str) -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    for line in status.lines() {
        if let Some(rest) = line.strip_prefix(key) {
            let kb: u64 = rest.trim().trim_end_matches(" kB").trim().parse().ok()?;
            return Some(kb * 1024);
        }
    }
    None
}

/// Current resident set size.
pub fn rss_bytes() -> Option<u64> {
    proc_status_kb("VmRSS:")
}

/// Process-lifetime peak resident set size; kernels without VmHWM fall
/// back to the current RSS.
pub fn peak_rss_bytes() -> Option<u64> {
    proc_status_kb("VmHWM:").or_else(rss_bytes)
}

/// Best available peak-memory figure: the exact heap counter when the
/// counting allocator is installed, the kernel's high-water mark otherwise.
pub fn peak_bytes_best_effort() -> u64 {
    let tracked = tracked_peak_bytes() as u64;
    if tracked > 0 {
        tracked
    } else {
        peak_rss_bytes().unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rss_probe_reads_something() {
        assert!(rss_bytes().unwrap_or(0) > 0);
        assert!(peak_rss_bytes().unwrap_or(0) > 0);
    }
}
