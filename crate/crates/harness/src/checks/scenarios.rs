//! Logical-mode scenario checks: pump safety, pacemaker cycles, pump volume.

use std::sync::{Arc, Mutex};

use num_traits::Signed;

use tickwrap_core::clock::{Clock, MockClock, NS_PER_MS};
use tickwrap_core::devices::{Exact, PumpEmulator};
use tickwrap_core::eventlog::EventKind;
use tickwrap_core::safety::{check_safety, dispatch_points, stress_runs, DispatchPoint};
use tickwrap_core::scenario::run_logical;
use tickwrap_core::shaper::ShaperParams;
use tickwrap_core::{LogicalTime, Rational};
use tickwrap_net::client::send_receive;
use tickwrap_net::device::{exact_ms_of, DeviceServer};

use super::physical::DeskRuns;
use super::{load_scenario, timed, Criterion};

pub const PUMP_HORIZON: u32 = 600;
pub const PUMP_TIME_LIMIT_S: f64 = 5.0;
pub const PACER_HORIZON: u32 = 60_000;
pub const MIN_CYCLES: usize = 3;
/// Pump rate used for boluses, ml/hr.
pub const PUMP_MAX_RATE: i128 = 1500;

pub fn pump_safety() -> Criterion {
    let name = "pump safety under bolus flood";
    Criterion::from_result(
        name,
        (|| {
            let mut cfg = load_scenario("pump")?;
            cfg.horizon = cfg.horizon.max(LogicalTime::from_int(PUMP_HORIZON));
            let (run, secs) = timed(|| run_logical(&cfg));
            let run = run.map_err(|e| e.to_string())?;
            let v = check_safety(&run.log, cfg.params());
            let requests = run.log.of_kind(EventKind::Request).count();
            let pts = dispatch_points(&run.log).remove("pump-module").unwrap_or_default();
            let runs = stress_runs(&pts);
            let longest = runs.iter().filter_map(|r| r.end.map(|e| e.saturating_sub(r.start))).max();
            let failed: Vec<&str> = v.properties.iter().filter(|p| !p.pass).map(|p| p.name.as_str()).collect();
            let pass = v.all_pass() && secs < PUMP_TIME_LIMIT_S && requests as u32 >= PUMP_HORIZON / 2;
            Ok(Criterion::new(
                name,
                pass,
                format!(
                    "horizon {}, {requests} bolus requests, {} bolus runs, longest {}, failed {:?}, {secs:.2} s (limit {PUMP_TIME_LIMIT_S} s)",
                    cfg.horizon,
                    runs.len(),
                    longest.map_or("-".into(), |l| l.to_string()),
                    failed
                ),
            ))
        })(),
    )
}

/// One stress excursion of the pacing period.
#[derive(Debug, Clone)]
pub struct Cycle {
    /// Relaxed point where the uninterrupted descent to the floor begins.
    pub descent_from: DispatchPoint,
    pub floor_at: LogicalTime,
    pub start: LogicalTime,
    pub end: LogicalTime,
}

/// Split a pacing-period trace into stress excursions and verify their
/// shape: an uninterrupted descent from the relaxed region to the floor,
/// stress held no longer than allowed, then an uninterrupted rise back out.
pub fn pacing_cycles(points: &[DispatchPoint], p: &ShaperParams, floor: Rational) -> Result<Vec<Cycle>, String> {
    for w in points.windows(2) {
        if (w[1].value - w[0].value).abs() > p.max_delta_per_period {
            return Err(format!("step {} -> {} at {} exceeds the rate limit", w[0].value, w[1].value, w[1].at));
        }
    }
    let idx = |t: LogicalTime| points.partition_point(|d| d.at < t);
    let mut cycles = Vec::new();
    for run in stress_runs(points) {
        let Some(end) = run.end else { break };
        let (s, e) = (idx(run.start), idx(end));
        let floors: Vec<usize> = (s..e).filter(|&i| points[i].value == floor).collect();
        let (Some(&first), Some(&last)) = (floors.first(), floors.last()) else {
            return Err(format!("stress run at {} never reached {floor}", run.start));
        };
        let mut d = first;
        while d > 0 && points[d - 1].value >= points[d].value {
            d -= 1;
        }
        if points[d].stress {
            return Err(format!("descent to {floor} at {} starts inside stress", points[first].at));
        }
        if points[last..=e].windows(2).any(|w| w[1].value < w[0].value) {
            return Err(format!("rise after {} is not monotone", points[last].at));
        }
        if end.saturating_sub(run.start) > p.max_stress_duration {
            return Err(format!("stress held from {} to {end}", run.start));
        }
        cycles.push(Cycle {
            descent_from: points[d],
            floor_at: points[first].at,
            start: run.start,
            end,
        });
    }
    Ok(cycles)
}

pub fn pacemaker_cycles() -> Criterion {
    let name = "pacemaker stress cycles";
    Criterion::from_result(
        name,
        (|| {
            let mut cfg = load_scenario("pacemaker")?;
            cfg.horizon = LogicalTime::from_int(PACER_HORIZON);
            let run = run_logical(&cfg).map_err(|e| e.to_string())?;
            let pts = dispatch_points(&run.log).remove("pacing-module").unwrap_or_default();
            let floor = cfg.params().stress.ranges.iter().map(|r| r.lo).min().ok_or("empty stress region")?;
            let cycles = pacing_cycles(&pts, cfg.params(), floor)?;
            let longest = cycles.iter().map(|c| c.end.saturating_sub(c.start)).max();
            Ok(Criterion::new(
                name,
                cycles.len() >= MIN_CYCLES,
                format!(
                    "{} dispatches over {} units, {} full cycles (need {MIN_CYCLES}), floor {floor}, longest stress {}, limit {}",
                    pts.len(),
                    cfg.horizon,
                    cycles.len(),
                    longest.map_or("-".into(), |l| l.to_string()),
                    cfg.params().max_stress_duration
                ),
            ))
        })(),
    )
}

/// Rate 60 ml/hr for 60 s of mock time through the pump server.
pub fn mock_pump_volume() -> Result<Exact, String> {
    let clock = Arc::new(MockClock::new());
    let pump = Arc::new(Mutex::new(PumpEmulator::new(exact_ms_of(clock.now()))));
    let listener = std::net::TcpListener::bind("127.0.0.1:0").map_err(|e| e.to_string())?;
    let mut srv = DeviceServer::spawn(listener, pump.clone(), clock.clone()).map_err(|e| e.to_string())?;
    let port = srv.addr().port();
    for cmd in ["RAT60", "RUN"] {
        let (reply, _) = send_receive("127.0.0.1", port, cmd).map_err(|e| e.to_string())?;
        if reply != "OK\n" {
            return Err(format!("{cmd} answered {reply:?}"));
        }
    }
    clock.advance(60_000 * NS_PER_MS);
    srv.stop();
    let v = pump.lock().expect("pump").volume_at(exact_ms_of(clock.now()));
    Ok(v)
}

/// Slopes (ml/hr) of a volume curve, skipping zero-length segments.
pub fn slopes(curve: &[(Exact, Exact)]) -> Vec<Exact> {
    curve
        .windows(2)
        .filter(|w| w[1].0 > w[0].0)
        .map(|w| (w[1].1 - w[0].1) / (w[1].0 - w[0].0) * Exact::from_integer(3_600_000))
        .collect()
}

pub fn pump_volume(desk: &DeskRuns) -> Criterion {
    let name = "pump volume integration";
    Criterion::from_result(
        name,
        (|| {
            let v = mock_pump_volume()?;
            let one = v == Exact::from_integer(1);
            let allowed = [Exact::from_integer(0), Exact::from_integer(PUMP_MAX_RATE)];

            let cfg = load_scenario("pump")?;
            let logical = run_logical(&cfg).map_err(|e| e.to_string())?;
            let end = Exact::from_integer(i128::from(*(cfg.horizon.value() * cfg.grain_ms).numer()));
            let lcurve = logical.devices.pump().ok_or("no pump in scenario")?.curve(end);
            let lslopes = slopes(&lcurve);

            let (phys, short) = desk.pump.as_ref().map_err(|e| format!("physical pump run: {e}"))?;
            let pump = phys.devices.pump.as_ref().ok_or("no physical pump")?.lock().expect("pump").clone();
            let pend = exact_ms_of(phys.clock.now());
            let pslopes = slopes(&pump.curve(pend));
            let boundary = boundary_offset(&pump, exact_ms_of(phys.t0), short.devices.pump().ok_or("no pump")?)?;
            let grain = Exact::new(i128::from(*cfg.grain_ms.numer()), i128::from(*cfg.grain_ms.denom()));
            let bad: Vec<String> = lslopes
                .iter()
                .chain(&pslopes)
                .filter(|s| !allowed.contains(s))
                .map(|s| s.to_string())
                .collect();
            let rising = |s: &[Exact]| s.iter().filter(|x| **x > Exact::from_integer(0)).count();
            let pass = one && bad.is_empty() && rising(&lslopes) > 0 && rising(&pslopes) > 0 && boundary <= grain;
            Ok(Criterion::new(
                name,
                pass,
                format!(
                    "60 ml/hr x 60 s = {v} ml; logical curve {} segments ({} infusing), physical {} segments ({} infusing), \
                     slopes outside {{0, {PUMP_MAX_RATE}}} ml/hr: {:?}, worst boundary offset {:.1} ms (limit {grain} ms)",
                    lslopes.len(),
                    rising(&lslopes),
                    pslopes.len(),
                    rising(&pslopes),
                    bad,
                    tickwrap_core::devices::exact_to_f64(boundary)
                ),
            ))
        })(),
    )
}

/// Largest distance between matching pump commands of a physical run
/// (relative to its handshake) and a logical run.
pub fn boundary_offset(phys: &PumpEmulator, t0_ms: Exact, logical: &PumpEmulator) -> Result<Exact, String> {
    let (p, l) = (phys.command_log(), logical.command_log());
    if p.len() != l.len() {
        return Err(format!("physical pump saw {} commands, logical {}", p.len(), l.len()));
    }
    let mut worst = Exact::from_integer(0);
    for ((pt, pc), (lt, lc)) in p.iter().zip(l) {
        if pc != lc {
            return Err(format!("command {pc:?} against {lc:?}"));
        }
        worst = worst.max((*pt - t0_ms - *lt).abs());
    }
    Ok(worst)
}
