//! Attribution of deadline misses to host stalls.

use std::sync::Arc;
use std::time::Duration;

use serde_json::json;

use tickwrap_core::clock::{SystemClock, NS_PER_MS};
use tickwrap_core::eventlog::{EventKind, EventLog, Record};
use tickwrap_core::LogicalTime;
use tickwrap_harness::checks::stalls::{excused_misses, Sentinel, Stall};

const T0: u64 = 1000 * NS_PER_MS;

/// One missed round ending at `end_ms` after t0, `round_ms` long.
fn missed(end_ms: f64, round_ms: f64) -> EventLog {
    let rec = |kind, detail| Record {
        t: LogicalTime::from_int(1),
        wall_ms: end_ms,
        kind,
        detail,
    };
    [
        rec(EventKind::RoundTiming, json!({ "round": round_ms, "budget": 10.0 })),
        rec(EventKind::DeadlineMiss, json!({ "round": round_ms, "budget": 10.0 })),
    ]
    .into_iter()
    .collect()
}

fn stall(from_ms: u64, to_ms: u64, cpu_ms: u64) -> Stall {
    Stall {
        start: T0 + from_ms * NS_PER_MS,
        end: T0 + to_ms * NS_PER_MS,
        cpu_ns: cpu_ms * NS_PER_MS,
    }
}

#[test]
fn covered_miss_is_excused() {
    let log = missed(100.0, 12.0);
    assert_eq!(excused_misses(&log, T0, &[stall(90, 99, 0)]), 1);
}

#[test]
fn partial_cover_is_not_enough() {
    let log = missed(100.0, 12.0);
    assert_eq!(excused_misses(&log, T0, &[stall(90, 91, 0)]), 0);
}

#[test]
fn busy_stall_is_ours() {
    let log = missed(100.0, 12.0);
    assert_eq!(excused_misses(&log, T0, &[stall(90, 99, 8)]), 0);
}

#[test]
fn disjoint_stall_does_not_count() {
    let log = missed(100.0, 12.0);
    assert_eq!(excused_misses(&log, T0, &[stall(10, 30, 0)]), 0);
}

#[test]
fn sentinel_sees_a_busy_stall_as_ours() {
    let s = Sentinel::start(Arc::new(SystemClock::new()));
    std::thread::sleep(Duration::from_millis(20));
    let t = std::time::Instant::now();
    while t.elapsed() < Duration::from_millis(30) {
        std::hint::black_box(0u64);
    }
    let stalls = s.stop();
    // with spare cores the sentinel never stalls; with one core it stalls on us
    assert!(stalls.iter().filter(|s| s.len() > 20 * NS_PER_MS).all(|s| !s.foreign()), "{stalls:?}");
}
