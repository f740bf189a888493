//! Pacemaker instance: a pacing module that emits `shock` every
//! `pacing-period` units, wrapped by the command shaper over that period.

use std::sync::Arc;

use crate::config::{Configuration, Element, Message, ModelObject, Value};
use crate::machine::{Component, Machine, MachineError, Redex, Rule};
use crate::shaper::{DeviceValue, ShaperParams, ShaperState, ValueDomain};
use crate::time::{LogicalTime, Rational, TimeInf};

use super::{inner_module, read_state, set_inner, time_attr, ShapedDevice, ShaperComponent, StimulusComponent};

pub const WRAPPER_CLASS: &str = "EPR-Wrapper{Safe-Pacer}";
pub const PACING_MODULE_CLASS: &str = "Pacing-Module";
pub const MODULE_ID: &str = "pacing-module";
pub const SET_PERIOD: &str = "set-period";
pub const SHOCK: &str = "shock";

/// Period in model units for a heart rate, given the time grain.
pub fn bpm_to_period_units(bpm: Rational, grain_ms: Rational) -> Rational {
    Rational::from_integer(60_000) / bpm / grain_ms
}

pub fn pacing_module(id: &str, period: DeviceValue) -> ModelObject {
    ModelObject::new(id, PACING_MODULE_CLASS)
        .with("nextPace", Value::time(LogicalTime::ZERO))
        .with("pacing-period", Value::Num(period))
}

/// Initial wrapped pacemaker: paces immediately, then every `safe` units.
pub fn wrapper_init(params: &ShaperParams, safe: DeviceValue) -> ModelObject {
    let state = ShaperState::new(safe, params);
    super::wrapper_object(MODULE_ID, WRAPPER_CLASS, pacing_module(MODULE_ID, safe), &state)
}

pub fn machine(params: ShaperParams, domain: ValueDomain) -> Machine {
    Machine::new()
        .with_component(Arc::new(ShaperComponent::new(Arc::new(PacerDevice), params, domain)))
        .with_component(Arc::new(PacingModuleComponent))
        .with_component(Arc::new(StimulusComponent))
}

fn period_of(inner: &ModelObject) -> Result<LogicalTime, MachineError> {
    time_attr(inner, "pacing-period")
}

fn tick_module(inner: &ModelObject, t: LogicalTime) -> Result<ModelObject, MachineError> {
    let next = time_attr(inner, "nextPace")?.checked_sub(t)?;
    Ok(inner.clone().with("nextPace", Value::time(next)))
}

/// Fire a pace: reset the countdown and emit `shock`.
fn pace(inner: &ModelObject) -> Option<(ModelObject, Element)> {
    if !time_attr(inner, "nextPace").ok()?.is_zero() {
        return None;
    }
    let period = period_of(inner).ok()?;
    let next = inner.clone().with("nextPace", Value::time(period));
    Some((next, Message::outgoing(SHOCK, vec![]).into()))
}

pub struct PacerDevice;

impl ShapedDevice for PacerDevice {
    fn wrapper_class(&self) -> &str {
        WRAPPER_CLASS
    }

    fn request_name(&self) -> &str {
        SET_PERIOD
    }

    fn decode_request(&self, arg: &Value) -> Option<DeviceValue> {
        arg.as_num()
    }

    fn inner_mte(&self, inner: &ModelObject) -> Result<TimeInf, MachineError> {
        Ok(time_attr(inner, "nextPace")?.into())
    }

    fn inner_tick(&self, inner: &ModelObject, t: LogicalTime) -> Result<ModelObject, MachineError> {
        tick_module(inner, t)
    }

    fn on_dispatch(&self, inner: &mut ModelObject, _previous: DeviceValue, emitted: DeviceValue) -> Vec<Element> {
        inner.set("pacing-period", Value::Num(emitted));
        Vec::new()
    }

    fn device_rules(&self, wrapper_class: &str) -> Vec<Arc<dyn Rule>> {
        vec![Arc::new(WrappedPace {
            class: wrapper_class.to_string(),
        })]
    }
}

/// Pace inside a wrapper, only once the dispatch due at this instant is done.
struct WrappedPace {
    class: String,
}

impl Rule for WrappedPace {
    fn name(&self) -> &str {
        "pace"
    }

    fn redexes(&self, config: &Configuration) -> Vec<Redex> {
        let mut out = Vec::new();
        for (i, e) in config.elements().iter().enumerate() {
            let Some(w) = e.as_object().filter(|o| o.class == self.class) else {
                continue;
            };
            let Ok(state) = read_state(w) else { continue };
            if state.disp.is_zero() {
                continue;
            }
            let Some((inner, shock)) = inner_module(w).ok().and_then(pace) else {
                continue;
            };
            let mut next = w.clone();
            set_inner(&mut next, inner);
            out.push(Redex {
                consumed: vec![i],
                produced: vec![next.into(), shock],
                note: None,
            });
        }
        out
    }
}

/// A bare, unshaped pacing module.
pub struct PacingModuleComponent;

impl Component for PacingModuleComponent {
    fn owns(&self, obj: &ModelObject) -> bool {
        obj.class == PACING_MODULE_CLASS
    }

    fn rules(&self) -> Vec<Arc<dyn Rule>> {
        vec![Arc::new(BareSetPeriod), Arc::new(BarePace)]
    }

    fn mte(&self, obj: &ModelObject) -> Result<TimeInf, MachineError> {
        Ok(time_attr(obj, "nextPace")?.into())
    }

    fn tick(&self, obj: &ModelObject, t: LogicalTime) -> Result<ModelObject, MachineError> {
        tick_module(obj, t)
    }
}

struct BareSetPeriod;

impl Rule for BareSetPeriod {
    fn name(&self) -> &str {
        "set-period"
    }

    fn redexes(&self, config: &Configuration) -> Vec<Redex> {
        let elems = config.elements();
        let mut out = Vec::new();
        for (oi, e) in elems.iter().enumerate() {
            let Some(pm) = e.as_object().filter(|o| o.class == PACING_MODULE_CLASS) else {
                continue;
            };
            let found = elems.iter().enumerate().find_map(|(i, e)| {
                let m = e.as_message()?;
                let period = m.args.get(1)?.as_num()?;
                (m.name == SET_PERIOD && m.target() == Some(pm.id.as_str())).then_some((i, period))
            });
            if let Some((mi, period)) = found {
                let next = pm.clone().with("pacing-period", Value::Num(period));
                out.push(Redex {
                    consumed: vec![oi, mi],
                    produced: vec![next.into()],
                    note: None,
                });
            }
        }
        out
    }
}

struct BarePace;

impl Rule for BarePace {
    fn name(&self) -> &str {
        "pace"
    }

    fn redexes(&self, config: &Configuration) -> Vec<Redex> {
        config
            .elements()
            .iter()
            .enumerate()
            .filter_map(|(i, e)| {
                let pm = e.as_object().filter(|o| o.class == PACING_MODULE_CLASS)?;
                let (next, shock) = pace(pm)?;
                Some(Redex {
                    consumed: vec![i],
                    produced: vec![next.into(), shock],
                    note: None,
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::machine::{drain_outgoing, is_open};
    use crate::shaper::{StressRegion, ValueRange};

    fn r(n: i64) -> Rational {
        Rational::from_integer(n)
    }

    pub(crate) fn desk_params() -> ShaperParams {
        ShaperParams {
            period: LogicalTime::from_int(1),
            stress: StressRegion::new(vec![ValueRange::new(r(50), Rational::new(200, 3))]),
            max_stress_duration: LogicalTime::from_int(3000),
            min_relax_gap: LogicalTime::from_int(1000),
            max_stress_count: 3,
            count_window: LogicalTime::from_int(18000),
            max_delta_per_period: Rational::new(1, 10),
            safe_value: r(75),
        }
    }

    fn domain() -> ValueDomain {
        ValueDomain::new(r(50), r(150))
    }

    #[test]
    fn bpm_conversion() {
        assert_eq!(bpm_to_period_units(r(80), r(10)), r(75));
        assert_eq!(bpm_to_period_units(r(120), r(10)), r(50));
        assert_eq!(bpm_to_period_units(r(90), r(10)), Rational::new(200, 3));
    }

    #[test]
    fn bare_set_period_rule() {
        let m = machine(desk_params(), domain());
        let pm = pacing_module("pm", r(75)).with("nextPace", Value::time(LogicalTime::from_int(10)));
        let set = Message::internal(SET_PERIOD, vec![Value::id("pm"), Value::Num(r(50))]);
        let c = Configuration::from_elements([pm.clone().into(), set.into()]);
        let out = m.zero_step(&c).unwrap();
        let expected = pm.with("pacing-period", Value::Num(r(50)));
        assert_eq!(out, Configuration::from_elements([expected.into()]));
    }

    #[test]
    fn mte_of_pacing_module_timer() {
        let m = machine(desk_params(), domain());
        let pm = pacing_module("pm", r(75)).with("nextPace", Value::time(LogicalTime::from_int(3)));
        let c = Configuration::from_elements([pm.into()]);
        assert_eq!(m.mte(&c).unwrap(), LogicalTime::from_int(3).into());
    }

    #[test]
    fn initial_wrapper_paces_at_time_zero() {
        let p = desk_params();
        let m = machine(p.clone(), domain());
        let c = Configuration::from_elements([wrapper_init(&p, r(75)).into()]);
        let z = m.zero_step_traced(&c).unwrap();
        assert!(is_open(&z.config));
        let (rest, out) = drain_outgoing(&z.config);
        assert_eq!(out, vec![Message::outgoing(SHOCK, vec![])]);
        // next event is the dispatch one period later
        assert_eq!(m.mte(&rest).unwrap(), LogicalTime::from_int(1).into());
        let w = rest.object(MODULE_ID).unwrap();
        assert_eq!(inner_module(w).unwrap().time_attr("nextPace"), Some(LogicalTime::from_int(75)));
    }

    #[test]
    fn request_then_dispatch_ramps() {
        let p = desk_params();
        let m = machine(p.clone(), domain());
        let c = Configuration::from_elements([wrapper_init(&p, r(75)).into()]);
        let (c, _) = drain_outgoing(&m.zero_step(&c).unwrap());
        let set = Message::internal(SET_PERIOD, vec![Value::id(MODULE_ID), Value::Num(r(50))]);
        let c = crate::machine::inject(&c, [set]);
        let c = m.tick(&c, LogicalTime::from_int(1)).unwrap();
        let z = m.zero_step_traced(&c).unwrap();
        let rules: Vec<&str> = z.firings.iter().map(|f| f.rule.as_str()).collect();
        assert_eq!(rules, vec!["request", "dispatch"]);
        let s = read_state(z.config.object(MODULE_ID).unwrap()).unwrap();
        assert_eq!(s.val, Rational::new(749, 10));
        assert_eq!(s.next_val, r(50));
    }
}
