//! Algebraic laws of `mte` and `tick` over random reachable configurations.

use std::sync::Arc;

use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use tickwrap_core::models::pacemaker::{self, PacerDevice, PacingModuleComponent};
use tickwrap_core::models::pump::{self, PumpDevice};
use tickwrap_core::models::stimulus::{StimulusComponent, StimulusSchedule};
use tickwrap_core::models::ShaperComponent;
use tickwrap_core::scenario::ScenarioConfig;
use tickwrap_core::{drain_outgoing, inject, Configuration, Element, Machine, Message, Rational, Value};
use tickwrap_core::{LogicalTime, TimeInf};

fn load(name: &str) -> ScenarioConfig {
    let path = format!("{}/../../scenarios/{name}.json", env!("CARGO_MANIFEST_DIR"));
    ScenarioConfig::load(path).unwrap()
}

struct World {
    machine: Machine,
    start: Configuration,
}

fn world() -> World {
    let pm = load("pacemaker");
    let pu = load("pump");
    let machine = Machine::new()
        .with_component(Arc::new(ShaperComponent::new(Arc::new(PacerDevice), pm.params().clone(), pm.domain())))
        .with_component(Arc::new(ShaperComponent::new(Arc::new(PumpDevice), pu.params().clone(), pump::domain())))
        .with_component(Arc::new(PacingModuleComponent))
        .with_component(Arc::new(StimulusComponent));
    let start = Configuration::from_elements([
        pacemaker::wrapper_init(pm.params(), Rational::from_integer(75)).into(),
        pump::wrapper_init(pu.params()).into(),
    ]);
    World { machine, start }
}

fn rat(rng: &mut StdRng, max: i64) -> Rational {
    let d = rng.gen_range(1..=6);
    Rational::new(rng.gen_range(0..=max * d), d)
}

/// A fraction `k/d` of `m`, strictly below it when `strict`.
fn fraction_of(rng: &mut StdRng, m: TimeInf, strict: bool) -> Option<LogicalTime> {
    match m {
        TimeInf::Inf => Some(LogicalTime::new(rat(rng, 100)).unwrap()),
        TimeInf::Finite(m) if strict && m.is_zero() => None,
        TimeInf::Finite(m) => {
            let d: u32 = rng.gen_range(1..=6);
            let k = if strict { rng.gen_range(0..d) } else { rng.gen_range(0..=d) };
            Some(LogicalTime::new(m * Rational::new(k.into(), d.into())).unwrap())
        }
    }
}

fn random_request(rng: &mut StdRng) -> Message {
    if rng.gen_bool(0.5) {
        let v = Rational::new(rng.gen_range(150..=450), 3);
        Message::internal(pacemaker::SET_PERIOD, vec![Value::id(pacemaker::MODULE_ID), Value::Num(v)])
    } else {
        pump::set_mode(if rng.gen_bool(0.6) { pump::BOLUS } else { pump::BASE })
    }
}

/// Random walk of requests, zero-time steps and ticks from the initial
/// configuration, followed by optional extra elements.
fn reachable(w: &World, seed: u64) -> Configuration {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut c = w.start.clone();
    for _ in 0..rng.gen_range(0..120) {
        if rng.gen_bool(0.3) {
            c = inject(&c, [random_request(&mut rng)]);
        }
        c = drain_outgoing(&w.machine.zero_step(&c).unwrap()).0;
        let m = w.machine.mte(&c).unwrap();
        if let Some(t) = fraction_of(&mut rng, m, false) {
            c = w.machine.tick(&c, t).unwrap();
        }
    }
    let mut extra: Vec<Element> = Vec::new();
    for i in 0..rng.gen_range(0..3) {
        let mut module = pacemaker::pacing_module(&format!("bare-{i}"), Rational::from_integer(rng.gen_range(1..90)));
        module.set("nextPace", Value::Num(rat(&mut rng, 80)));
        extra.push(module.into());
    }
    if rng.gen_bool(0.5) {
        let at = LogicalTime::new(rat(&mut rng, 50)).unwrap();
        let sched = StimulusSchedule::new(vec![(at, Message::internal("note", vec![Value::id("nobody")]))]);
        extra.push(sched.to_object("stim").into());
    }
    if rng.gen_bool(0.5) {
        extra.push(Message::outgoing("shock", vec![]).into());
    }
    c.union(Configuration::from_elements(extra))
}

fn split(c: &Configuration, mask: u64) -> (Configuration, Configuration) {
    let (a, b): (Vec<_>, Vec<_>) = c.elements().iter().enumerate().partition(|(i, _)| mask >> (i % 64) & 1 == 1);
    let collect = |v: Vec<(usize, &Element)>| Configuration::from_elements(v.into_iter().map(|(_, e)| e.clone()));
    (collect(a), collect(b))
}

thread_local! {
    static WORLD: World = world();
}

fn config() -> impl Strategy<Value = (u64, u64, u64)> {
    (any::<u64>(), any::<u64>(), any::<u64>())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn mte_is_homomorphic((seed, mask, _) in config()) {
        WORLD.with(|w| {
            let c = reachable(w, seed);
            let (a, b) = split(&c, mask);
            let m = &w.machine;
            prop_assert_eq!(m.mte(&c).unwrap(), m.mte(&a).unwrap().min(m.mte(&b).unwrap()));
            Ok(())
        })?;
    }

    #[test]
    fn tick_is_homomorphic((seed, mask, t_seed) in config()) {
        WORLD.with(|w| {
            let c = reachable(w, seed);
            let (a, b) = split(&c, mask);
            let m = &w.machine;
            let mut rng = StdRng::seed_from_u64(t_seed);
            let t = fraction_of(&mut rng, m.mte(&c).unwrap(), false).unwrap();
            prop_assert_eq!(m.tick(&c, t).unwrap(), m.tick(&a, t).unwrap().union(m.tick(&b, t).unwrap()));
            Ok(())
        })?;
    }

    #[test]
    fn tick_is_additive((seed, _, t_seed) in config()) {
        WORLD.with(|w| {
            let c = reachable(w, seed);
            let m = &w.machine;
            let mut rng = StdRng::seed_from_u64(t_seed);
            let total = fraction_of(&mut rng, m.mte(&c).unwrap(), false).unwrap();
            let t1 = fraction_of(&mut rng, TimeInf::Finite(total), false).unwrap();
            let t2 = total.checked_sub(t1).unwrap();
            prop_assert_eq!(m.tick(&m.tick(&c, t1).unwrap(), t2).unwrap(), m.tick(&c, total).unwrap());
            Ok(())
        })?;
    }

    #[test]
    fn tick_zero_is_identity((seed, _, _) in config()) {
        WORLD.with(|w| {
            let c = reachable(w, seed);
            prop_assert_eq!(w.machine.tick(&c, LogicalTime::ZERO).unwrap(), c);
            Ok(())
        })?;
    }

    #[test]
    fn tick_keeps_normal_forms_normal((seed, _, t_seed) in config()) {
        WORLD.with(|w| {
            let m = &w.machine;
            let c = m.zero_step(&reachable(w, seed)).unwrap();
            let mut rng = StdRng::seed_from_u64(t_seed);
            if let Some(t) = fraction_of(&mut rng, m.mte(&c).unwrap(), true) {
                let ticked = m.tick(&c, t).unwrap();
                prop_assert_eq!(m.zero_step(&ticked).unwrap(), ticked);
            }
            Ok(())
        })?;
    }
}

#[test]
fn tick_beyond_mte_is_rejected() {
    let w = world();
    let c = w.machine.zero_step(&w.start).unwrap();
    let TimeInf::Finite(m) = w.machine.mte(&c).unwrap() else {
        panic!("finite mte expected")
    };
    assert!(w.machine.tick(&c, m + LogicalTime::ratio(1, 2)).is_err());
}
