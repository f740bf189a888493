//! Command shaper: filters requested device values so that stressful states
//! are bounded in duration and frequency and the dispatched value never
//! moves by more than a fixed delta per period.
//!
//! Each dispatch considers, in order, the ramp toward the latest request,
//! a step toward the safe value, and holding the current value. The first
//! candidate that is either relaxed or fits the stress budget is emitted. A
//! stressful candidate must fit the budget including the time needed to ramp
//! back out of the stress region, so a stress run can always be left in time.

use num_traits::Signed;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::{format_rational, LogicalTime, Rational, TimeInf};

pub type DeviceValue = Rational;

/// Upper bound on simulated exit steps; beyond this the region is treated
/// as inescapable.
const MAX_EXIT_STEPS: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ShaperError {
    #[error("requested value {0} outside the device domain")]
    RejectedRequest(String),
    #[error("dispatch called with {0} time units left in the period")]
    NotAtBoundary(LogicalTime),
    #[error("tick by {requested} overshoots dispatch timer {disp}")]
    TickOvershoot { requested: LogicalTime, disp: LogicalTime },
    #[error("invalid shaper parameters: {0}")]
    InvalidParams(String),
}

/// Union of closed value ranges considered stressful.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct StressRegion {
    pub ranges: Vec<ValueRange>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValueRange {
    #[serde(with = "crate::time::rational_serde")]
    pub lo: Rational,
    #[serde(with = "crate::time::rational_serde")]
    pub hi: Rational,
}

impl ValueRange {
    pub fn new(lo: Rational, hi: Rational) -> Self {
        ValueRange { lo, hi }
    }

    pub fn contains(&self, v: Rational) -> bool {
        self.lo <= v && v <= self.hi
    }
}

impl StressRegion {
    pub fn new(ranges: Vec<ValueRange>) -> Self {
        StressRegion { ranges }
    }

    pub fn contains(&self, v: DeviceValue) -> bool {
        self.ranges.iter().any(|r| r.contains(v))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShaperParams {
    pub period: LogicalTime,
    pub stress: StressRegion,
    pub max_stress_duration: LogicalTime,
    pub min_relax_gap: LogicalTime,
    pub max_stress_count: u32,
    pub count_window: LogicalTime,
    #[serde(with = "crate::time::rational_serde")]
    pub max_delta_per_period: Rational,
    #[serde(with = "crate::time::rational_serde")]
    pub safe_value: DeviceValue,
}

impl ShaperParams {
    pub fn is_stress(&self, v: DeviceValue) -> bool {
        self.stress.contains(v)
    }

    pub fn validate(&self) -> Result<(), ShaperError> {
        let bad = |m: &str| Err(ShaperError::InvalidParams(m.to_string()));
        if self.period.is_zero() {
            return bad("period must be positive");
        }
        if self.max_stress_duration.is_zero() {
            return bad("max_stress_duration must be positive");
        }
        if self.max_stress_count == 0 {
            return bad("max_stress_count must be at least 1");
        }
        if !self.max_delta_per_period.is_positive() {
            return bad("max_delta_per_period must be positive");
        }
        if self.is_stress(self.safe_value) {
            return bad("safe_value lies in the stress region");
        }
        Ok(())
    }

    /// Toward-safe steps needed from `v` until the first relaxed value.
    pub fn exit_steps(&self, v: DeviceValue) -> Option<u64> {
        let mut cur = v;
        let mut steps = 0;
        while self.is_stress(cur) {
            if steps >= MAX_EXIT_STEPS {
                return None;
            }
            cur = step_toward(cur, self.safe_value, self.max_delta_per_period);
            steps += 1;
        }
        Some(steps)
    }
}

/// Closed domain of acceptable requests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValueDomain {
    #[serde(with = "crate::time::rational_serde")]
    pub min: Rational,
    #[serde(with = "crate::time::rational_serde")]
    pub max: Rational,
}

impl ValueDomain {
    pub fn new(min: Rational, max: Rational) -> Self {
        ValueDomain { min, max }
    }

    pub fn contains(&self, v: Rational) -> bool {
        self.min <= v && v <= self.max
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StressInterval {
    pub start: LogicalTime,
    pub end: Option<LogicalTime>,
}

impl StressInterval {
    pub fn is_open(&self) -> bool {
        self.end.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShaperState {
    #[serde(with = "crate::time::rational_serde")]
    pub val: DeviceValue,
    #[serde(with = "crate::time::rational_serde")]
    pub next_val: DeviceValue,
    pub disp: LogicalTime,
    pub log: Vec<StressInterval>,
}

impl ShaperState {
    /// Fresh state at a safe value; first dispatch one period from now.
    pub fn new(initial: DeviceValue, params: &ShaperParams) -> Self {
        ShaperState {
            val: initial,
            next_val: initial,
            disp: params.period,
            log: Vec::new(),
        }
    }

    pub fn open_interval(&self) -> Option<&StressInterval> {
        self.log.last().filter(|i| i.is_open())
    }
}

/// Outcome of the three budget constraints for sustaining stress.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budget {
    pub duration_ok: bool,
    pub gap_ok: bool,
    pub window_ok: bool,
}

impl Budget {
    pub fn ok(&self) -> bool {
        self.duration_ok && self.gap_ok && self.window_ok
    }

    /// First violated constraint, in a fixed order.
    pub fn denial(&self) -> Option<&'static str> {
        if !self.duration_ok {
            Some("duration")
        } else if !self.gap_ok {
            Some("relax gap")
        } else if !self.window_ok {
            Some("window count")
        } else {
            None
        }
    }
}

/// Whether the log allows being stressed continuously from `now` for `hold`.
pub fn budget(log: &[StressInterval], now: LogicalTime, p: &ShaperParams, hold: LogicalTime) -> Budget {
    let open = log.last().filter(|i| i.is_open());
    let duration_ok = match open {
        Some(i) => (now + hold).saturating_sub(i.start) <= p.max_stress_duration,
        None => hold <= p.max_stress_duration,
    };
    let gap_ok = match open {
        Some(_) => true,
        None => log
            .iter()
            .rev()
            .find_map(|i| i.end)
            .is_none_or(|end| now.saturating_sub(end) >= p.min_relax_gap),
    };
    let window_start = now.saturating_sub(p.count_window);
    let intersecting = log
        .iter()
        .filter(|i| i.end.is_none_or(|end| end >= window_start))
        .count();
    let would_be = intersecting + usize::from(open.is_none());
    Budget {
        duration_ok,
        gap_ok,
        window_ok: would_be <= p.max_stress_count as usize,
    }
}

/// Entering or staying in stress for one more period at `now` is allowed.
pub fn stress_budget_ok(log: &[StressInterval], now: LogicalTime, p: &ShaperParams) -> bool {
    budget(log, now, p, p.period).ok()
}

/// Drop closed intervals that can no longer influence any budget decision.
pub fn prune_log(log: &[StressInterval], now: LogicalTime, p: &ShaperParams) -> Vec<StressInterval> {
    let horizon = p.count_window.max(p.min_relax_gap);
    let cutoff = now.saturating_sub(horizon);
    log.iter()
        .filter(|i| i.end.is_none_or(|end| end >= cutoff))
        .copied()
        .collect()
}

pub fn step_toward(from: DeviceValue, to: DeviceValue, delta: Rational) -> DeviceValue {
    let diff = to - from;
    if diff.abs() <= delta {
        to
    } else if diff.is_positive() {
        from + delta
    } else {
        from - delta
    }
}

pub fn request(
    s: &ShaperState,
    v: DeviceValue,
    domain: &ValueDomain,
) -> Result<ShaperState, ShaperError> {
    if !domain.contains(v) {
        return Err(ShaperError::RejectedRequest(format_rational(&v)));
    }
    let mut next = s.clone();
    next.next_val = v;
    Ok(next)
}

/// Per-dispatch record for the event log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DispatchRecord {
    pub at: LogicalTime,
    #[serde(with = "crate::time::rational_serde")]
    pub previous: DeviceValue,
    #[serde(with = "crate::time::rational_serde")]
    pub requested: DeviceValue,
    #[serde(with = "crate::time::rational_serde")]
    pub emitted: DeviceValue,
    pub stress: bool,
    /// The emitted value differs from the unconstrained ramp.
    pub shaped: bool,
    /// Budget evaluated for the ramp candidate when it was stressful.
    pub budget: Option<Budget>,
    pub denial: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dispatch {
    pub state: ShaperState,
    pub value: DeviceValue,
    pub record: DispatchRecord,
}

fn candidate_budget(log: &[StressInterval], now: LogicalTime, p: &ShaperParams, c: DeviceValue) -> Budget {
    match p.exit_steps(c) {
        Some(k) => budget(log, now, p, p.period.times(k.max(1))),
        None => Budget {
            duration_ok: false,
            gap_ok: true,
            window_ok: true,
        },
    }
}

pub fn dispatch(s: &ShaperState, p: &ShaperParams, now: LogicalTime) -> Result<Dispatch, ShaperError> {
    if !s.disp.is_zero() {
        return Err(ShaperError::NotAtBoundary(s.disp));
    }
    let delta = p.max_delta_per_period;
    let ramp = step_toward(s.val, s.next_val, delta);
    let toward_safe = step_toward(s.val, p.safe_value, delta);

    let ramp_budget = p.is_stress(ramp).then(|| candidate_budget(&s.log, now, p, ramp));
    let admissible = |c: DeviceValue| !p.is_stress(c) || candidate_budget(&s.log, now, p, c).ok();
    let emitted = if ramp_budget.is_none_or(|b| b.ok()) {
        ramp
    } else if admissible(toward_safe) {
        toward_safe
    } else if admissible(s.val) {
        s.val
    } else {
        toward_safe
    };

    let mut log = s.log.clone();
    let stressed = p.is_stress(emitted);
    match (log.last_mut().filter(|i| i.is_open()), stressed) {
        (None, true) => log.push(StressInterval { start: now, end: None }),
        (Some(open), false) => open.end = Some(now),
        _ => {}
    }
    let log = prune_log(&log, now, p);

    let record = DispatchRecord {
        at: now,
        previous: s.val,
        requested: s.next_val,
        emitted,
        stress: stressed,
        shaped: emitted != ramp,
        budget: ramp_budget,
        denial: ramp_budget.and_then(|b| b.denial()).map(str::to_string),
    };
    Ok(Dispatch {
        state: ShaperState {
            val: emitted,
            next_val: s.next_val,
            disp: p.period,
            log,
        },
        value: emitted,
        record,
    })
}

pub fn shaper_mte(s: &ShaperState) -> TimeInf {
    TimeInf::Finite(s.disp)
}

pub fn shaper_tick(s: &ShaperState, t: LogicalTime) -> Result<ShaperState, ShaperError> {
    let disp = s
        .disp
        .checked_sub(t)
        .map_err(|_| ShaperError::TickOvershoot { requested: t, disp: s.disp })?;
    Ok(ShaperState { disp, ..s.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(n: i64) -> Rational {
        Rational::from_integer(n)
    }

    fn t(n: u32) -> LogicalTime {
        LogicalTime::from_int(n)
    }

    /// Pacing periods in ms, stress for 90..=120 bpm.
    fn pacer_params() -> ShaperParams {
        ShaperParams {
            period: t(1),
            stress: StressRegion::new(vec![ValueRange::new(r(500), Rational::new(2000, 3))]),
            max_stress_duration: t(30),
            min_relax_gap: t(10),
            max_stress_count: 3,
            count_window: t(180),
            max_delta_per_period: r(50),
            safe_value: r(750),
        }
    }

    fn bolus_params() -> ShaperParams {
        ShaperParams {
            period: t(1),
            stress: StressRegion::new(vec![ValueRange::new(r(1), r(1))]),
            max_stress_duration: t(30),
            min_relax_gap: t(10),
            max_stress_count: 3,
            count_window: t(180),
            max_delta_per_period: r(1),
            safe_value: r(0),
        }
    }

    fn closed(a: u32, b: u32) -> StressInterval {
        StressInterval { start: t(a), end: Some(t(b)) }
    }

    fn at_boundary(val: i64, next: i64) -> ShaperState {
        ShaperState { val: r(val), next_val: r(next), disp: LogicalTime::ZERO, log: vec![] }
    }

    #[test]
    fn request_sets_next_val_only() {
        let p = pacer_params();
        let dom = ValueDomain::new(r(500), r(1500));
        let s = ShaperState::new(r(750), &p);
        let s2 = request(&s, r(500), &dom).unwrap();
        assert_eq!(s2.next_val, r(500));
        assert_eq!(s2.val, s.val);
        assert_eq!(s2.disp, s.disp);
        assert_eq!(request(&s2, r(500), &dom).unwrap(), s2);
        assert_eq!(
            request(&s, r(100), &dom),
            Err(ShaperError::RejectedRequest("100".into()))
        );
    }

    #[test]
    fn ramps_one_step() {
        let d = dispatch(&at_boundary(750, 500), &pacer_params(), t(0)).unwrap();
        assert_eq!(d.value, r(700));
        assert_eq!(d.state.disp, t(1));
        assert!(!d.record.shaped);
    }

    #[test]
    fn ramp_sequence_reaches_request() {
        let p = pacer_params();
        let mut s = at_boundary(750, 500);
        let mut seen = vec![];
        for k in 0..5u32 {
            let d = dispatch(&s, &p, t(k)).unwrap();
            seen.push(d.value);
            s = shaper_tick(&d.state, p.period).unwrap();
        }
        assert_eq!(seen, vec![r(700), r(650), r(600), r(550), r(500)]);
    }

    #[test]
    fn fixpoint_at_safe_value() {
        let d = dispatch(&at_boundary(750, 750), &pacer_params(), t(3)).unwrap();
        assert_eq!(d.value, r(750));
        assert!(d.state.log.is_empty());
    }

    #[test]
    fn exhausted_budget_moves_toward_safe() {
        let p = pacer_params();
        let mut s = at_boundary(500, 500);
        s.log = vec![StressInterval { start: t(0), end: None }];
        // 30 units into the run: staying would exceed the duration bound
        let d = dispatch(&s, &p, t(30)).unwrap();
        assert!(d.value > r(500));
        assert!(d.record.shaped);
        assert_eq!(d.record.denial.as_deref(), Some("duration"));
    }

    #[test]
    fn dispatch_off_boundary_fails() {
        let mut s = at_boundary(750, 500);
        s.disp = t(2);
        assert_eq!(dispatch(&s, &pacer_params(), t(0)), Err(ShaperError::NotAtBoundary(t(2))));
    }

    #[test]
    fn budget_fresh_log() {
        assert!(stress_budget_ok(&[], t(0), &bolus_params()));
    }

    #[test]
    fn budget_duration_limit() {
        let log = [StressInterval { start: t(10), end: None }];
        assert!(!stress_budget_ok(&log, t(40), &bolus_params()));
        assert!(stress_budget_ok(&log, t(39), &bolus_params()));
    }

    #[test]
    fn budget_gap_is_closed_comparison() {
        let p = bolus_params();
        assert!(!stress_budget_ok(&[closed(0, 20)], t(25), &p));
        assert!(stress_budget_ok(&[closed(0, 20)], t(30), &p));
    }

    #[test]
    fn budget_window_count() {
        let p = bolus_params();
        let log = [closed(0, 5), closed(20, 25), closed(40, 45)];
        assert!(!stress_budget_ok(&log, t(60), &p));
        // first run ended at 5, still intersects [5, 185]
        assert!(!stress_budget_ok(&log, t(185), &p));
        assert!(stress_budget_ok(&log, t(186), &p));
    }

    #[test]
    fn prune_removes_only_stale_closed() {
        let p = bolus_params();
        assert!(prune_log(&[], t(500), &p).is_empty());
        let log = [closed(0, 9), closed(100, 120), StressInterval { start: t(300), end: None }];
        let pruned = prune_log(&log, t(310), &p);
        // 310 - 180 = 130: [0,9] and [100,120] are stale, open kept
        assert_eq!(pruned, vec![StressInterval { start: t(300), end: None }]);
        let straddle = [closed(100, 130)];
        assert_eq!(prune_log(&straddle, t(310), &p), straddle.to_vec());
        let stale = [closed(100, 129)];
        assert!(prune_log(&stale, t(310), &p).is_empty());
    }

    #[test]
    fn mte_and_tick() {
        let p = pacer_params();
        let s = ShaperState::new(r(750), &p);
        assert_eq!(shaper_mte(&s), TimeInf::Finite(p.period));
        assert_eq!(shaper_tick(&s, LogicalTime::ZERO).unwrap(), s);
        let s10 = ShaperState { disp: t(10), ..s.clone() };
        assert_eq!(shaper_tick(&s10, t(7)).unwrap().disp, t(3));
        assert!(shaper_tick(&s10, t(11)).is_err());
    }

    #[test]
    fn params_validation() {
        let mut p = bolus_params();
        assert!(p.validate().is_ok());
        p.safe_value = r(1);
        assert!(p.validate().is_err());
        let mut p = bolus_params();
        p.period = LogicalTime::ZERO;
        assert!(p.validate().is_err());
    }

    #[test]
    fn exit_steps_counts_ramp_out() {
        let p = pacer_params();
        assert_eq!(p.exit_steps(r(750)), Some(0));
        // 500 -> 550 -> 600 -> 650 -> 700 (relaxed above 666.67)
        assert_eq!(p.exit_steps(r(500)), Some(4));
        assert_eq!(bolus_params().exit_steps(r(1)), Some(1));
    }
}
