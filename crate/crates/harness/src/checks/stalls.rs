//! Host stall sentinel: a 1 ms sleep loop that notices when the whole
//! machine stops running this process.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use tickwrap_core::clock::{Clock, SystemClock, WallNs, NS_PER_MS};
use tickwrap_core::eventlog::{EventKind, EventLog};

const TICK: Duration = Duration::from_millis(1);
/// Oversleep beyond which a wakeup counts as a stall.
pub const STALL_MIN_NS: WallNs = NS_PER_MS;
/// A stall is foreign when this process used less than this share of it.
pub const FOREIGN_CPU_SHARE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stall {
    pub start: WallNs,
    pub end: WallNs,
    /// CPU time this process consumed during the stall.
    pub cpu_ns: u64,
}

impl Stall {
    pub fn len(&self) -> WallNs {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    pub fn foreign(&self) -> bool {
        (self.cpu_ns as f64) < FOREIGN_CPU_SHARE * self.len() as f64
    }
}

fn process_cpu_ns() -> u64 {
    let mut ts = libc::timespec { tv_sec: 0, tv_nsec: 0 };
    // SAFETY: `ts` is a valid out-pointer for the duration of the call.
    let rc = unsafe { libc::clock_gettime(libc::CLOCK_PROCESS_CPUTIME_ID, &mut ts) };
    if rc != 0 {
        return 0;
    }
    ts.tv_sec as u64 * 1_000_000_000 + ts.tv_nsec as u64
}

pub struct Sentinel {
    stop: Arc<AtomicBool>,
    handle: JoinHandle<Vec<Stall>>,
}

impl Sentinel {
    pub fn start(clock: Arc<SystemClock>) -> Sentinel {
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let handle = thread::spawn(move || {
            let mut stalls = Vec::new();
            while !flag.load(Ordering::Relaxed) {
                let (a, cpu) = (clock.now(), process_cpu_ns());
                thread::sleep(TICK);
                let b = clock.now();
                let due = a + TICK.as_nanos() as WallNs;
                if b.saturating_sub(due) > STALL_MIN_NS {
                    stalls.push(Stall {
                        start: due,
                        end: b,
                        cpu_ns: process_cpu_ns().saturating_sub(cpu),
                    });
                }
            }
            stalls
        });
        Sentinel { stop, handle }
    }

    pub fn stop(self) -> Vec<Stall> {
        self.stop.store(true, Ordering::Relaxed);
        self.handle.join().unwrap_or_default()
    }
}

/// Deadline misses that would have fit their budget had the foreign
/// stalls overlapping them not happened.
pub fn excused_misses(log: &EventLog, t0: WallNs, stalls: &[Stall]) -> usize {
    let recs = log.records();
    recs.iter()
        .enumerate()
        .filter(|(_, r)| r.kind == EventKind::DeadlineMiss)
        .filter(|(i, _)| {
            let Some(timing) = recs[..*i].iter().rev().find(|r| r.kind == EventKind::RoundTiming) else {
                return false;
            };
            let (Some(round), Some(budget)) = (timing.detail["round"].as_f64(), timing.detail["budget"].as_f64()) else {
                return false;
            };
            let end = t0 + (timing.wall_ms * NS_PER_MS as f64) as WallNs;
            let start = end.saturating_sub((round * NS_PER_MS as f64) as WallNs);
            let frozen: WallNs = stalls
                .iter()
                .filter(|s| s.foreign())
                .map(|s| s.end.min(end).saturating_sub(s.start.max(start)))
                .sum();
            round - frozen as f64 / NS_PER_MS as f64 <= budget
        })
        .count()
}
