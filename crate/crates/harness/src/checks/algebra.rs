//! mte/tick laws over random reachable configurations.

use std::sync::Arc;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use tickwrap_core::models::pacemaker::{self, PacerDevice, PacingModuleComponent};
use tickwrap_core::models::pump::{self, PumpDevice};
use tickwrap_core::models::stimulus::{StimulusComponent, StimulusSchedule};
use tickwrap_core::models::ShaperComponent;
use tickwrap_core::{drain_outgoing, inject, Configuration, Element, Machine, Message, Rational, Value};
use tickwrap_core::{LogicalTime, TimeInf};

use super::{load_scenario, timed, Criterion};

pub const CONFIGS: u64 = 1000;
pub const TIME_LIMIT_S: f64 = 10.0;

pub struct World {
    pub machine: Machine,
    pub start: Configuration,
}

/// Pacemaker and pump wrappers, bare pacing modules and stimulus objects
/// under one machine.
pub fn world() -> Result<World, String> {
    let pm = load_scenario("pacemaker")?;
    let pu = load_scenario("pump")?;
    let machine = Machine::new()
        .with_component(Arc::new(ShaperComponent::new(Arc::new(PacerDevice), pm.params().clone(), pm.domain())))
        .with_component(Arc::new(ShaperComponent::new(Arc::new(PumpDevice), pu.params().clone(), pump::domain())))
        .with_component(Arc::new(PacingModuleComponent))
        .with_component(Arc::new(StimulusComponent));
    let start = Configuration::from_elements([
        pacemaker::wrapper_init(pm.params(), pm.instance.initial).into(),
        pump::wrapper_init(pu.params()).into(),
    ]);
    Ok(World { machine, start })
}

fn rat(rng: &mut StdRng, max: i64) -> Rational {
    let d = rng.gen_range(1..=6);
    Rational::new(rng.gen_range(0..=max * d), d)
}

fn part_of(rng: &mut StdRng, m: TimeInf, strict: bool) -> Option<LogicalTime> {
    match m {
        TimeInf::Inf => LogicalTime::new(rat(rng, 100)).ok(),
        TimeInf::Finite(m) if strict && m.is_zero() => None,
        TimeInf::Finite(m) => {
            let d: u32 = rng.gen_range(1..=6);
            let k = if strict { rng.gen_range(0..d) } else { rng.gen_range(0..=d) };
            LogicalTime::new(m * Rational::new(k.into(), d.into())).ok()
        }
    }
}

fn request(rng: &mut StdRng) -> Message {
    if rng.gen_bool(0.5) {
        let v = Rational::new(rng.gen_range(150..=450), 3);
        Message::internal(pacemaker::SET_PERIOD, vec![Value::id(pacemaker::MODULE_ID), Value::Num(v)])
    } else {
        pump::set_mode(if rng.gen_bool(0.6) { pump::BOLUS } else { pump::BASE })
    }
}

pub fn reachable(w: &World, rng: &mut StdRng) -> Result<Configuration, String> {
    let e = |x: tickwrap_core::MachineError| x.to_string();
    let mut c = w.start.clone();
    for _ in 0..rng.gen_range(0..120) {
        if rng.gen_bool(0.3) {
            c = inject(&c, [request(rng)]);
        }
        c = drain_outgoing(&w.machine.zero_step(&c).map_err(e)?).0;
        if let Some(t) = part_of(rng, w.machine.mte(&c).map_err(e)?, false) {
            c = w.machine.tick(&c, t).map_err(e)?;
        }
    }
    let mut extra: Vec<Element> = Vec::new();
    for i in 0..rng.gen_range(0..3) {
        let mut m = pacemaker::pacing_module(&format!("bare-{i}"), Rational::from_integer(rng.gen_range(1..90)));
        m.set("nextPace", Value::Num(rat(rng, 80)));
        extra.push(m.into());
    }
    if rng.gen_bool(0.5) {
        let at = LogicalTime::new(rat(rng, 50)).map_err(|x| x.to_string())?;
        let s = StimulusSchedule::new(vec![(at, Message::internal("note", vec![Value::id("nobody")]))]);
        extra.push(s.to_object("stim").into());
    }
    if rng.gen_bool(0.5) {
        extra.push(Message::outgoing("shock", vec![]).into());
    }
    Ok(c.union(Configuration::from_elements(extra)))
}

/// Check all laws on one configuration; `Err` names the broken law.
pub fn check_laws(w: &World, c: &Configuration, rng: &mut StdRng) -> Result<(), String> {
    let m = &w.machine;
    let e = |x: tickwrap_core::MachineError| x.to_string();
    let whole = m.mte(c).map_err(e)?;

    let (a, b): (Vec<Element>, Vec<Element>) = c.elements().iter().cloned().partition(|_| rng.gen_bool(0.5));
    let (a, b) = (Configuration::from_elements(a), Configuration::from_elements(b));
    if whole != m.mte(&a).map_err(e)?.min(m.mte(&b).map_err(e)?) {
        return Err("mte homomorphism".into());
    }

    let t = part_of(rng, whole, false).ok_or("no tick amount")?;
    if m.tick(c, t).map_err(e)? != m.tick(&a, t).map_err(e)?.union(m.tick(&b, t).map_err(e)?) {
        return Err("tick homomorphism".into());
    }

    let t1 = part_of(rng, TimeInf::Finite(t), false).ok_or("no split")?;
    let t2 = t.checked_sub(t1).map_err(|x| x.to_string())?;
    if m.tick(&m.tick(c, t1).map_err(e)?, t2).map_err(e)? != m.tick(c, t).map_err(e)? {
        return Err("tick additivity".into());
    }

    if m.tick(c, LogicalTime::ZERO).map_err(e)? != *c {
        return Err("tick zero identity".into());
    }

    let normal = m.zero_step(c).map_err(e)?;
    if let Some(t) = part_of(rng, m.mte(&normal).map_err(e)?, true) {
        let ticked = m.tick(&normal, t).map_err(e)?;
        if m.zero_step(&ticked).map_err(e)? != ticked {
            return Err("tick safety".into());
        }
    }
    Ok(())
}

pub fn run(configs: u64, seed: u64) -> Result<(), String> {
    let w = world()?;
    let mut rng = StdRng::seed_from_u64(seed);
    for i in 0..configs {
        let c = reachable(&w, &mut rng)?;
        check_laws(&w, &c, &mut rng).map_err(|law| format!("{law} broken on configuration {i}: {}", c.to_json()))?;
    }
    Ok(())
}

pub fn criterion() -> Criterion {
    let (r, secs) = timed(|| run(CONFIGS, 2024));
    match r {
        Ok(()) => Criterion::new(
            "mte/tick algebra",
            secs < TIME_LIMIT_S,
            format!("{CONFIGS} configurations, 5 laws exact, {secs:.2} s (limit {TIME_LIMIT_S} s)"),
        ),
        Err(e) => Criterion::new("mte/tick algebra", false, e),
    }
}
