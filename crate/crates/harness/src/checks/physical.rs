//! Desk runs over loopback: projection equivalence, skew and jitter.

use std::sync::Arc;
use std::thread;

use tickwrap_core::clock::{ns_to_ms, SystemClock};
use tickwrap_core::eventlog::{EventKind, EventLog};
use tickwrap_core::jitter::jitter_report;
use tickwrap_core::scenario::{run_logical, LogicalRun};
use tickwrap_core::LogicalTime;
use tickwrap_net::physical::{run_physical, PhysicalOptions, PhysicalRun};

use super::stalls::{excused_misses, Sentinel, Stall};
use super::{load_scenario, Criterion};

/// Logical horizons giving 60 s of wall time at the shipped grains.
pub const PUMP_DESK_HORIZON: u32 = 60;
pub const PACER_DESK_HORIZON: u32 = 6000;
pub const MAX_SKEW_MS: f64 = 200.0;
/// Allowed growth of the fitted skew trend across a whole run.
pub const SKEW_DRIFT_MS: f64 = 50.0;
pub const MIN_ROUNDS: usize = 300;
pub const P95_JITTER_MS: f64 = 100.0;
pub const MAX_JITTER_MS: f64 = 200.0;

pub type Desk = Result<(PhysicalRun, LogicalRun), String>;

pub struct DeskRuns {
    pub pump: Desk,
    pub pacer: Desk,
    /// Stalls seen by the sentinel over both runs, on their shared clock.
    pub stalls: Vec<Stall>,
}

fn desk(name: &str, horizon: u32, clock: Arc<SystemClock>) -> Desk {
    let mut cfg = load_scenario(name)?;
    cfg.horizon = LogicalTime::from_int(horizon);
    let logical = run_logical(&cfg).map_err(|e| e.to_string())?;
    let opts = PhysicalOptions {
        ephemeral_ports: true,
        clock: Some(clock),
        ..Default::default()
    };
    let physical = run_physical(&cfg, opts).map_err(|e| e.to_string())?;
    Ok((physical, logical))
}

/// Both scenarios physically for 60 s each, side by side.
pub fn desk_runs() -> DeskRuns {
    let clock = Arc::new(SystemClock::new());
    let sentinel = Sentinel::start(clock.clone());
    let c = clock.clone();
    let pump = thread::spawn(move || desk("pump", PUMP_DESK_HORIZON, c));
    let pacer = desk("pacemaker", PACER_DESK_HORIZON, clock);
    let pump = pump.join().unwrap_or_else(|_| Err("pump desk run panicked".into()));
    DeskRuns {
        pump,
        pacer,
        stalls: sentinel.stop(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Skew {
    pub rounds: usize,
    pub max_abs: f64,
    /// Least-squares trend of skew against wall time, times the run span.
    pub drift: f64,
}

impl Skew {
    pub fn bounded(&self) -> bool {
        self.rounds > 0 && self.max_abs <= MAX_SKEW_MS && self.drift.abs() <= SKEW_DRIFT_MS
    }
}

pub fn skew(log: &EventLog) -> Skew {
    let pts: Vec<(f64, f64)> = log
        .of_kind(EventKind::RoundTiming)
        .filter_map(|r| Some((r.wall_ms, r.detail["skew"].as_f64()?)))
        .collect();
    let n = pts.len() as f64;
    let max_abs = pts.iter().map(|p| p.1.abs()).fold(0.0, f64::max);
    let drift = if pts.len() < 2 {
        0.0
    } else {
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let span = pts[pts.len() - 1].0 - pts[0].0;
        if sxx > 0.0 {
            sxy / sxx * span
        } else {
            0.0
        }
    };
    Skew {
        rounds: pts.len(),
        max_abs,
        drift,
    }
}

fn misses(log: &EventLog) -> usize {
    log.of_kind(EventKind::DeadlineMiss).count()
}

struct Verdict {
    pass: bool,
    /// Every shortfall is a deadline miss covered by a foreign stall.
    excusable: bool,
    detail: String,
}

fn equivalent(name: &str, d: &Desk, stalls: &[Stall]) -> Result<Verdict, String> {
    let (phys, logical) = d.as_ref().map_err(|e| format!("{name}: {e}"))?;
    let same = phys.error.is_none() && phys.log.projection() == logical.log.projection();
    let s = skew(&phys.log);
    let m = misses(&phys.log);
    let excused = excused_misses(&phys.log, phys.t0, stalls);
    let detail = format!(
        "{name}: {} events {}, {} rounds, max |skew| {:.1} ms, drift {:+.1} ms, {m} deadline misses ({excused} inside host stalls), {} overruns{}",
        logical.log.projection().len(),
        if same { "identical" } else { "DIFFER" },
        s.rounds,
        s.max_abs,
        s.drift,
        phys.server.overruns,
        phys.error.as_ref().map_or(String::new(), |e| format!(", wrapper error {e}"))
    );
    Ok(Verdict {
        pass: same && s.bounded() && m == 0,
        excusable: same && s.bounded() && excused == m,
        detail,
    })
}

pub fn equivalence(desk: &DeskRuns) -> Criterion {
    let name = "logical/physical equivalence";
    let parts = [
        equivalent("pump", &desk.pump, &desk.stalls),
        equivalent("pacemaker", &desk.pacer, &desk.stalls),
    ];
    let pass = parts.iter().all(|p| matches!(p, Ok(v) if v.pass));
    let excusable = parts.iter().all(|p| matches!(p, Ok(v) if v.excusable));
    let detail: Vec<String> = parts.into_iter().map(|p| p.map_or_else(|e| e, |v| v.detail)).collect();
    let foreign: Vec<&Stall> = desk.stalls.iter().filter(|s| s.foreign()).collect();
    let longest = foreign.iter().map(|s| s.len()).max().map_or(0.0, ns_to_ms);
    let mut c = Criterion::new(
        name,
        pass,
        format!(
            "{}; host froze {} times, longest {longest:.1} ms (limits {MAX_SKEW_MS} ms, drift {SKEW_DRIFT_MS} ms)",
            detail.join("; "),
            foreign.len()
        ),
    );
    c.host_excused = !pass && excusable;
    c
}

pub fn jitter(desk: &DeskRuns) -> Criterion {
    let name = "pacemaker jitter";
    let (phys, _) = match &desk.pacer {
        Ok(r) => r,
        Err(e) => return Criterion::new(name, false, e.clone()),
    };
    let r = jitter_report(&phys.log);
    let enough = r.rounds >= MIN_ROUNDS;
    let primary = enough && r.p95 <= P95_JITTER_MS && r.max <= MAX_JITTER_MS;
    let s = skew(&phys.log);
    let fallback = enough && s.bounded() && r.deadline_misses == 0;
    let verdict = if primary {
        "within bounds"
    } else if fallback {
        "FALLBACK: bounds exceeded, skew non-accumulating and no deadline misses"
    } else {
        "out of bounds"
    };
    Criterion::new(
        name,
        primary || fallback,
        format!(
            "{} rounds (need {MIN_ROUNDS}), p50 {:.2} ms, p95 {:.2} ms (limit {P95_JITTER_MS}), max {:.2} ms (limit {MAX_JITTER_MS}), {} deadline misses: {verdict}",
            r.rounds, r.p50, r.p95, r.max, r.deadline_misses
        ),
    )
}
