//! Shaper against the brute-force reference over request schedules.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use tickwrap_core::shaper::{self, ShaperParams, ShaperState, StressRegion, ValueDomain, ValueRange};
use tickwrap_core::{LogicalTime, Rational};

use crate::oracle::ReferenceShaper;

/// A shaper configuration with a small finite request domain.
#[derive(Debug, Clone)]
pub struct Case {
    pub name: &'static str,
    pub params: ShaperParams,
    pub values: Vec<Rational>,
    pub initial: Rational,
}

fn r(n: i64) -> Rational {
    Rational::from_integer(n)
}

fn t(n: u32) -> LogicalTime {
    LogicalTime::from_int(n)
}

fn range(lo: Rational, hi: Rational) -> ValueRange {
    ValueRange::new(lo, hi)
}

pub fn cases() -> Vec<Case> {
    vec![
        Case {
            name: "upper band",
            params: ShaperParams {
                period: t(1),
                stress: StressRegion::new(vec![range(r(2), r(3))]),
                max_stress_duration: t(3),
                min_relax_gap: t(2),
                max_stress_count: 2,
                count_window: t(8),
                max_delta_per_period: r(1),
                safe_value: r(0),
            },
            values: vec![r(0), r(1), r(2), r(3)],
            initial: r(0),
        },
        Case {
            name: "split region",
            params: ShaperParams {
                period: t(1),
                stress: StressRegion::new(vec![range(r(1), r(1)), range(r(3), r(3))]),
                max_stress_duration: t(4),
                min_relax_gap: t(1),
                max_stress_count: 3,
                count_window: t(6),
                max_delta_per_period: r(2),
                safe_value: r(0),
            },
            values: vec![r(0), r(1), r(2), r(3)],
            initial: r(0),
        },
        Case {
            name: "half period",
            params: ShaperParams {
                period: LogicalTime::ratio(1, 2),
                stress: StressRegion::new(vec![range(r(1), Rational::new(3, 2))]),
                max_stress_duration: t(2),
                min_relax_gap: LogicalTime::ratio(3, 2),
                max_stress_count: 1,
                count_window: t(5),
                max_delta_per_period: Rational::new(1, 2),
                safe_value: r(0),
            },
            values: vec![r(0), Rational::new(1, 2), r(1), Rational::new(3, 2)],
            initial: r(0),
        },
        Case {
            name: "both sides",
            params: ShaperParams {
                period: t(1),
                stress: StressRegion::new(vec![range(r(-1), r(-1)), range(r(2), r(2))]),
                max_stress_duration: t(2),
                min_relax_gap: t(3),
                max_stress_count: 2,
                count_window: t(10),
                max_delta_per_period: r(1),
                safe_value: r(0),
            },
            values: vec![r(-1), r(0), r(1), r(2)],
            initial: r(1),
        },
        Case {
            name: "bolus",
            params: ShaperParams {
                period: t(1),
                stress: StressRegion::new(vec![range(r(1), r(1))]),
                max_stress_duration: t(3),
                min_relax_gap: t(2),
                max_stress_count: 2,
                count_window: t(10),
                max_delta_per_period: r(1),
                safe_value: r(0),
            },
            values: vec![r(0), r(1)],
            initial: r(0),
        },
        Case {
            name: "three levels",
            params: ShaperParams {
                period: t(1),
                stress: StressRegion::new(vec![range(r(2), r(2))]),
                max_stress_duration: t(2),
                min_relax_gap: t(2),
                max_stress_count: 2,
                count_window: t(7),
                max_delta_per_period: r(1),
                safe_value: r(0),
            },
            values: vec![r(0), r(1), r(2)],
            initial: r(0),
        },
    ]
}

#[derive(Clone)]
struct Pair {
    real: ShaperState,
    reference: ReferenceShaper,
    now: LogicalTime,
    shaped: u64,
}

/// One request followed by one period and a dispatch, on both sides.
fn step(case: &Case, domain: &ValueDomain, pair: &Pair, v: Rational) -> Result<Pair, String> {
    let p = &case.params;
    let real = shaper::request(&pair.real, v, domain).map_err(|e| e.to_string())?;
    let real = shaper::shaper_tick(&real, real.disp).map_err(|e| e.to_string())?;
    let now = pair.now + p.period;
    let d = shaper::dispatch(&real, p, now).map_err(|e| e.to_string())?;
    let mut reference = pair.reference.clone();
    reference.request(v);
    let expected = reference.dispatch(now);
    if d.value != expected {
        return Err(format!(
            "{}: at {now} after request {v} shaper emitted {} but reference emitted {expected}",
            case.name, d.value
        ));
    }
    Ok(Pair { real: d.state, reference, now, shaped: pair.shaped + u64::from(d.record.shaped) })
}

fn start(case: &Case) -> (ValueDomain, Pair) {
    let lo = *case.values.iter().min().expect("non-empty domain");
    let hi = *case.values.iter().max().expect("non-empty domain");
    let pair = Pair {
        real: ShaperState::new(case.initial, &case.params),
        reference: ReferenceShaper::new(case.params.clone(), case.initial),
        now: LogicalTime::ZERO,
        shaped: 0,
    };
    (ValueDomain::new(lo, hi), pair)
}

/// Schedules compared and how many of them were shaped at least once.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Coverage {
    pub schedules: u64,
    pub shaped: u64,
}

impl std::ops::AddAssign for Coverage {
    fn add_assign(&mut self, o: Coverage) {
        self.schedules += o.schedules;
        self.shaped += o.shaped;
    }
}

/// Every schedule of length `horizon` over the case's values.
pub fn enumerate(case: &Case, horizon: u32) -> Result<Coverage, String> {
    fn go(case: &Case, domain: &ValueDomain, pair: &Pair, depth: u32) -> Result<Coverage, String> {
        if depth == 0 {
            return Ok(Coverage { schedules: 1, shaped: u64::from(pair.shaped > 0) });
        }
        let mut n = Coverage::default();
        for v in &case.values {
            let next = step(case, domain, pair, *v)?;
            n += go(case, domain, &next, depth - 1)?;
        }
        Ok(n)
    }
    let (domain, pair) = start(case);
    go(case, &domain, &pair, horizon)
}

/// Random schedules of length `horizon`; requests repeat with probability
/// one half so that long stress runs actually occur.
pub fn sample(case: &Case, horizon: u32, schedules: u64, seed: u64) -> Result<Coverage, String> {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut cov = Coverage::default();
    for _ in 0..schedules {
        let (domain, mut pair) = start(case);
        let mut v = case.values[rng.gen_range(0..case.values.len())];
        for _ in 0..horizon {
            if rng.gen_bool(0.5) {
                v = case.values[rng.gen_range(0..case.values.len())];
            }
            pair = step(case, &domain, &pair, v)?;
        }
        cov += Coverage { schedules: 1, shaped: u64::from(pair.shaped > 0) };
    }
    Ok(cov)
}

#[derive(Debug, Clone, Default)]
pub struct OracleSummary {
    pub enumerated: Coverage,
    pub sampled: Coverage,
}

/// Full enumeration up to `full_horizon` periods for every case (lowered so
/// that at most 600 000 schedules are walked per case) and `samples`
/// random schedules of `sample_horizon` periods per case.
pub fn oracle_equivalence(full_horizon: u32, sample_horizon: u32, samples: u64) -> Result<OracleSummary, String> {
    let mut s = OracleSummary::default();
    for (i, case) in cases().iter().enumerate() {
        let k = case.values.len() as u64;
        let mut h = full_horizon;
        while h > 1 && k.pow(h) > 600_000 {
            h -= 1;
        }
        s.enumerated += enumerate(case, h)?;
        s.sampled += sample(case, sample_horizon, samples, 0x5eed + i as u64)?;
    }
    Ok(s)
}

pub const FULL_HORIZON: u32 = 12;
pub const SAMPLE_HORIZON: u32 = 40;
pub const SAMPLES_PER_CASE: u64 = 2000;

pub fn criterion() -> super::Criterion {
    let name = "shaper oracle equivalence";
    match oracle_equivalence(FULL_HORIZON, SAMPLE_HORIZON, SAMPLES_PER_CASE) {
        Ok(s) => super::Criterion::new(
            name,
            s.sampled.schedules >= 10_000,
            format!(
                "{} cases; {} schedules enumerated (horizon 12 for domains of 2-3 values, 9 for 4 values), \
                 {} sampled at horizon {SAMPLE_HORIZON}; {} + {} exercised the budget; all traces identical",
                cases().len(),
                s.enumerated.schedules,
                s.sampled.schedules,
                s.enumerated.shaped,
                s.sampled.shaped
            ),
        ),
        Err(e) => super::Criterion::new(name, false, e),
    }
}
