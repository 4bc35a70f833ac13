//! Pin the process to the core it is running on.

#[cfg(target_os = "linux")]
pub fn pin_to_current_core() -> Option<usize> {
    // SAFETY: plain syscalls on a zeroed cpu_set_t owned by this frame.
    unsafe {
        let cpu = libc::sched_getcpu();
        if cpu < 0 {
            return None;
        }
        let mut set: libc::cpu_set_t = std::mem::zeroed();
        libc::CPU_SET(cpu as usize, &mut set);
        if libc::sched_setaffinity(0, std::mem::size_of::<libc::cpu_set_t>(), &set) != 0 {
            return None;
        }
        Some(cpu as usize)
    }
}

#[cfg(not(target_os = "linux"))]
pub fn pin_to_current_core() -> Option<usize> {
    None
}
