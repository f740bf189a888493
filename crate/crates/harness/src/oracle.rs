//! Brute-force reference for the command shaper.
//!
//! Keeps the full history of dispatched values and rederives stress runs
//! from it on every step; nothing is pruned or maintained incrementally.

use tickwrap_core::shaper::ShaperParams;
use tickwrap_core::{LogicalTime, Rational};

#[derive(Debug, Clone)]
pub struct ReferenceShaper {
    params: ShaperParams,
    val: Rational,
    next_val: Rational,
    history: Vec<(LogicalTime, Rational)>,
}

struct Run {
    start: LogicalTime,
    end: Option<LogicalTime>,
}

impl ReferenceShaper {
    pub fn new(params: ShaperParams, initial: Rational) -> Self {
        ReferenceShaper {
            params,
            val: initial,
            next_val: initial,
            history: Vec::new(),
        }
    }

    pub fn request(&mut self, v: Rational) {
        self.next_val = v;
    }

    pub fn history(&self) -> &[(LogicalTime, Rational)] {
        &self.history
    }

    fn runs(&self) -> Vec<Run> {
        let mut runs: Vec<Run> = Vec::new();
        for &(t, v) in &self.history {
            let stressed = self.params.is_stress(v);
            match runs.last_mut() {
                Some(r) if r.end.is_none() && !stressed => r.end = Some(t),
                Some(r) if r.end.is_none() => {}
                _ if stressed => runs.push(Run { start: t, end: None }),
                _ => {}
            }
        }
        runs
    }

    fn step(&self, from: Rational, to: Rational) -> Rational {
        let d = self.params.max_delta_per_period;
        if to > from + d {
            from + d
        } else if to < from - d {
            from - d
        } else {
            to
        }
    }

    /// Periods needed to leave stress from `v` heading for the safe value.
    fn periods_to_leave(&self, v: Rational) -> Option<u32> {
        let mut cur = v;
        let mut n = 0u32;
        while self.params.is_stress(cur) {
            let next = self.step(cur, self.params.safe_value);
            if next == cur || n > 100_000 {
                return None;
            }
            cur = next;
            n += 1;
        }
        Some(n.max(1))
    }

    fn allowed(&self, c: Rational, now: LogicalTime) -> bool {
        let p = &self.params;
        if !p.is_stress(c) {
            return true;
        }
        let Some(n) = self.periods_to_leave(c) else {
            return false;
        };
        let hold = p.period.value() * Rational::from_integer(n.into());
        let now_v = now.value();
        let runs = self.runs();
        let open = runs.last().filter(|r| r.end.is_none());
        let started = open.map_or(now_v, |r| r.start.value());
        if now_v + hold - started > p.max_stress_duration.value() {
            return false;
        }
        if open.is_none() {
            if let Some(end) = runs.iter().rev().find_map(|r| r.end) {
                if now_v - end.value() < p.min_relax_gap.value() {
                    return false;
                }
            }
        }
        let from = now_v - p.count_window.value();
        let live = runs.iter().filter(|r| r.end.is_none_or(|e| e.value() >= from)).count();
        live + usize::from(open.is_none()) <= p.max_stress_count as usize
    }

    /// Emit the value for the period boundary at `now`.
    pub fn dispatch(&mut self, now: LogicalTime) -> Rational {
        let ramp = self.step(self.val, self.next_val);
        let back = self.step(self.val, self.params.safe_value);
        let out = [ramp, back, self.val]
            .into_iter()
            .find(|c| self.allowed(*c, now))
            .unwrap_or(back);
        self.history.push((now, out));
        self.val = out;
        out
    }
}
