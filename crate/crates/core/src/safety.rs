//! Safety properties of a dispatch trace, checked from the event log alone.

use std::collections::BTreeMap;

use num_traits::Signed;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value as Json};

use crate::eventlog::{EventKind, EventLog};
use crate::shaper::{DeviceValue, ShaperParams};
use crate::time::{parse_rational, LogicalTime, Rational};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DispatchPoint {
    pub at: LogicalTime,
    #[serde(with = "crate::time::rational_serde")]
    pub value: DeviceValue,
    pub stress: bool,
}

/// A maximal run of stressful dispatches; `end` is the first relaxed
/// dispatch after it, if any.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StressRun {
    pub start: LogicalTime,
    pub end: Option<LogicalTime>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyResult {
    pub name: String,
    pub pass: bool,
    pub witness: Option<Json>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafetyVerdict {
    pub properties: Vec<PropertyResult>,
    pub runs: usize,
    pub dispatches: usize,
}

impl SafetyVerdict {
    pub fn all_pass(&self) -> bool {
        self.properties.iter().all(|p| p.pass)
    }

    pub fn get(&self, name: &str) -> Option<&PropertyResult> {
        self.properties.iter().find(|p| p.name == name)
    }
}

/// Dispatch points per target, in log order.
pub fn dispatch_points(log: &EventLog) -> BTreeMap<String, Vec<DispatchPoint>> {
    let mut out: BTreeMap<String, Vec<DispatchPoint>> = BTreeMap::new();
    for r in log.of_kind(EventKind::Dispatch) {
        let d = &r.detail;
        let target = d["target"].as_str().unwrap_or("").to_string();
        let value = d["emitted"].as_str().and_then(|s| parse_rational(s).ok());
        let (Some(value), Some(stress)) = (value, d["stress"].as_bool()) else {
            continue;
        };
        out.entry(target).or_default().push(DispatchPoint { at: r.t, value, stress });
    }
    out
}

pub fn stress_runs(points: &[DispatchPoint]) -> Vec<StressRun> {
    let mut runs: Vec<StressRun> = Vec::new();
    let mut open: Option<LogicalTime> = None;
    for p in points {
        match (open, p.stress) {
            (None, true) => open = Some(p.at),
            (Some(start), false) => {
                runs.push(StressRun { start, end: Some(p.at) });
                open = None;
            }
            _ => {}
        }
    }
    if let Some(start) = open {
        runs.push(StressRun { start, end: None });
    }
    runs
}

fn pass(name: &str) -> PropertyResult {
    PropertyResult {
        name: name.into(),
        pass: true,
        witness: None,
    }
}

fn fail(name: &str, witness: Json) -> PropertyResult {
    PropertyResult {
        name: name.into(),
        pass: false,
        witness: Some(witness),
    }
}

pub fn check_points(target: &str, points: &[DispatchPoint], p: &ShaperParams) -> Vec<PropertyResult> {
    let runs = stress_runs(points);
    let last = points.last().map(|d| d.at);

    let duration = runs
        .iter()
        .find_map(|r| {
            let end = r.end.or(last)?;
            (end.saturating_sub(r.start) > p.max_stress_duration).then(|| {
                json!({ "target": target, "start": r.start, "end": end,
                        "length": end.saturating_sub(r.start), "limit": p.max_stress_duration })
            })
        })
        .map_or_else(|| pass("duration"), |w| fail("duration", w));

    let gap = runs
        .windows(2)
        .find_map(|w| {
            let prev_end = w[0].end?;
            (w[1].start.saturating_sub(prev_end) < p.min_relax_gap).then(|| {
                json!({ "target": target, "previous_end": prev_end, "next_start": w[1].start,
                        "gap": w[1].start.saturating_sub(prev_end), "limit": p.min_relax_gap })
            })
        })
        .map_or_else(|| pass("gap"), |w| fail("gap", w));

    // runs beginning in any half-open window (s - W, s]
    let window = runs
        .iter()
        .enumerate()
        .find_map(|(i, r)| {
            let inside: Vec<LogicalTime> = runs[..=i]
                .iter()
                .filter(|q| r.start.saturating_sub(q.start) < p.count_window)
                .map(|q| q.start)
                .collect();
            (inside.len() > p.max_stress_count as usize).then(|| {
                json!({ "target": target, "starts": inside, "window": p.count_window,
                        "limit": p.max_stress_count })
            })
        })
        .map_or_else(|| pass("window"), |w| fail("window", w));

    let rate = points
        .windows(2)
        .find_map(|w| {
            let delta: Rational = (w[1].value - w[0].value).abs();
            (delta > p.max_delta_per_period).then(|| {
                json!({ "target": target, "at": w[1].at,
                        "from": crate::time::format_rational(&w[0].value),
                        "to": crate::time::format_rational(&w[1].value) })
            })
        })
        .map_or_else(|| pass("rate"), |w| fail("rate", w));

    vec![duration, gap, window, rate]
}

/// Evaluate duration, gap, window and rate-limit properties.
pub fn check_safety(log: &EventLog, p: &ShaperParams) -> SafetyVerdict {
    let per_target = dispatch_points(log);
    let mut merged: BTreeMap<String, PropertyResult> = ["duration", "gap", "window", "rate"]
        .iter()
        .map(|n| (n.to_string(), pass(n)))
        .collect();
    let mut runs = 0;
    let mut dispatches = 0;
    for (target, points) in &per_target {
        runs += stress_runs(points).len();
        dispatches += points.len();
        for r in check_points(target, points, p) {
            let slot = merged.get_mut(&r.name).expect("known property");
            if slot.pass && !r.pass {
                *slot = r;
            }
        }
    }
    let order = ["duration", "gap", "window", "rate"];
    SafetyVerdict {
        properties: order.iter().map(|n| merged.remove(*n).expect("known property")).collect(),
        runs,
        dispatches,
    }
}
