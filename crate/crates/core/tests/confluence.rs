//! Zero-time rewriting reaches a single normal form from small configurations,
//! whatever order enabled rules are applied in.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use tickwrap_core::adapter::msg_received;
use tickwrap_core::models::pacemaker;
use tickwrap_core::models::pump;
use tickwrap_core::models::stimulus::StimulusSchedule;
use tickwrap_core::scenario::{InstanceKind, ScenarioConfig};
use tickwrap_core::{drain_outgoing, Configuration, Element, Message, Rational, TimeInf, Value};
use tickwrap_core::LogicalTime;

const MAX_STATES: usize = 200_000;

fn load(name: &str) -> ScenarioConfig {
    let path = format!("{}/../../scenarios/{name}.json", env!("CARGO_MANIFEST_DIR"));
    ScenarioConfig::load(path).unwrap()
}

fn request(kind: InstanceKind, rng: &mut StdRng) -> Message {
    match kind {
        InstanceKind::Pacemaker => {
            let v = Rational::new(rng.gen_range(150..=450), 3);
            Message::internal(pacemaker::SET_PERIOD, vec![Value::id(pacemaker::MODULE_ID), Value::Num(v)])
        }
        InstanceKind::Pump => pump::set_mode([pump::BOLUS, pump::BASE][rng.gen_range(0..2)]),
    }
}

fn reply(kind: InstanceKind, rng: &mut StdRng) -> Message {
    match kind {
        InstanceKind::Pacemaker => msg_received("pacer-client", if rng.gen_bool(0.8) { "shocked\n" } else { "ERR\n" }),
        InstanceKind::Pump => msg_received(["pump-client", "pump-client'"][rng.gen_range(0..2)], "OK\n"),
    }
}

/// A reached wrapper state, often sitting exactly on a timer expiry, plus up
/// to five pending messages or a due stimulus.
fn small_config(cfg: &ScenarioConfig, seed: u64) -> Configuration {
    let machine = cfg.machine();
    let kind = cfg.instance.kind;
    let mut rng = StdRng::seed_from_u64(seed);
    let wrapper: Element = match kind {
        InstanceKind::Pacemaker => pacemaker::wrapper_init(cfg.params(), cfg.instance.initial).into(),
        InstanceKind::Pump => pump::wrapper_init(cfg.params()).into(),
    };
    let mut c = Configuration::from_elements([wrapper]);
    for _ in 0..rng.gen_range(0..60) {
        if rng.gen_bool(0.2) {
            c.insert(request(kind, &mut rng));
        }
        c = drain_outgoing(&machine.zero_step(&c).unwrap()).0;
        let TimeInf::Finite(m) = machine.mte(&c).unwrap() else { break };
        let t = if rng.gen_bool(0.5) { m } else { LogicalTime::new(m.value() / 2).unwrap() };
        c = machine.tick(&c, t).unwrap();
    }
    let extra = rng.gen_range(1..=5);
    for _ in 0..extra {
        match rng.gen_range(0..3) {
            0 => c.insert(request(kind, &mut rng)),
            1 => c.insert(reply(kind, &mut rng)),
            _ if c.len() < 6 => {
                let entries = (0..rng.gen_range(1..=2)).map(|_| (LogicalTime::ZERO, request(kind, &mut rng))).collect();
                c.insert(StimulusSchedule::new(entries).to_object("stim"));
            }
            _ => {}
        }
        if c.len() >= 6 {
            break;
        }
    }
    c
}

fn check(name: &str, cases: u64) {
    let cfg = load(name);
    let machine = cfg.machine();
    let mut branching = 0;
    for seed in 0..cases {
        let c = small_config(&cfg, seed);
        assert!(c.len() <= 6);
        let forms = machine.normal_forms(&c, MAX_STATES).unwrap();
        assert_eq!(forms.len(), 1, "seed {seed}: {} normal forms from {}", forms.len(), c.to_json());
        assert_eq!(forms.into_iter().next().unwrap(), machine.zero_step(&c).unwrap());
        branching += usize::from(machine.successors(&c).len() > 1);
    }
    assert!(branching > cases as usize / 10, "too few configurations with competing rules: {branching}");
}

#[test]
fn pacemaker_zero_time_is_confluent() {
    check("pacemaker", 400);
}

#[test]
fn pump_zero_time_is_confluent() {
    check("pump", 400);
}
