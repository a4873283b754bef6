//! Process memory readings (Linux `/proc`), used to check the planner
//! against reality. On other platforms every reading is `None`.

/// Resident set size now and its high-water mark, in bytes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MemSample {
    pub rss: u64,
    pub peak_rss: u64,
}

#[cfg(target_os = "linux")]
fn status_field(text: &str, key: &str) -> Option<u64> {
    let line = text.lines().find(|l| l.starts_with(key))?;
    let kib: u64 = line[key.len()..].trim().trim_end_matches("kB").trim().parse().ok()?;
    Some(kib * 1024)
}

#[cfg(target_os = "linux")]
pub fn sample() -> Option<MemSample> {
    let text = std::fs::read_to_string("/proc/self/status").ok()?;
    Some(MemSample {
        rss: status_field(&text, "VmRSS:")?,
        peak_rss: status_field(&text, "VmHWM:")?,
    })
}

#[cfg(not(target_os = "linux"))]
pub fn sample() -> Option<MemSample> {
    None
}

/// Resets the peak-RSS mark to the current RSS. Returns whether the kernel
/// accepted the request.
#[cfg(target_os = "linux")]
pub fn reset_peak() -> bool {
    std::fs::write("/proc/self/clear_refs", "5").is_ok()
}

#[cfg(not(target_os = "linux"))]
pub fn reset_peak() -> bool {
    false
}

/// Makes the allocator hand large buffers straight back to the kernel on
/// free, so RSS follows the live-tensor total instead of allocator caches.
#[cfg(all(target_os = "linux", target_env = "gnu"))]
pub fn tighten_allocator() {
    // SAFETY: plain glibc tuning calls with constant arguments.
    unsafe {
        libc::mallopt(libc::M_MMAP_THRESHOLD, 128 * 1024);
        libc::mallopt(libc::M_TRIM_THRESHOLD, 128 * 1024);
        libc::malloc_trim(0);
    }
}

#[cfg(not(all(target_os = "linux", target_env = "gnu")))]
pub fn tighten_allocator() {}
