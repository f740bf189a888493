//! Timed-machine instances: a generic command-shaper wrapper object around
//! a device module, the pacemaker and pump instantiations, and a scheduled
//! stimulus source.
//!
//! A wrapper object carries the shaper state in its attributes
//! (`val`, `next-val`, `disp`, `clock`, `stress-intervals`) and the wrapped
//! device module as a nested configuration under `inside`.
//!
//! Zero-time rules for one wrapper are ordered by guards rather than by rule
//! position, so every application order reaches the same normal form:
//! pending request producers (adapter replies, due stimulus entries) flush
//! first, then requests are consumed lowest-first, then the dispatch fires,
//! then device rules that depend on the dispatched value.

pub mod pacemaker;
pub mod pump;
pub mod stimulus;

use std::sync::Arc;

use serde_json::json;

use crate::config::{Configuration, Direction, Element, Message, ModelObject, Value};
use crate::machine::{Component, MachineError, Note, Redex, Rule};
use crate::shaper::{self, DeviceValue, ShaperParams, ShaperState, StressInterval, ValueDomain};
use crate::time::{LogicalTime, TimeInf};

pub use stimulus::{StimulusComponent, STIMULUS_CLASS};

/// Name of the message the in-adapter consumes: `msg-received(client, reply)`.
pub const MSG_RECEIVED: &str = "msg-received";

/// Device-specific hooks plugged into [`ShaperComponent`].
pub trait ShapedDevice: Send + Sync {
    fn wrapper_class(&self) -> &str;

    /// Message name carrying requests, addressed as `name(target, value)`.
    fn request_name(&self) -> &str;

    fn decode_request(&self, arg: &Value) -> Option<DeviceValue>;

    fn encode_value(&self, v: DeviceValue) -> Value {
        Value::Num(v)
    }

    fn inner_mte(&self, _inner: &ModelObject) -> Result<TimeInf, MachineError> {
        Ok(TimeInf::Inf)
    }

    fn inner_tick(&self, inner: &ModelObject, _t: LogicalTime) -> Result<ModelObject, MachineError> {
        Ok(inner.clone())
    }

    /// Apply a dispatched value to the wrapped module; returns produced messages.
    fn on_dispatch(&self, inner: &mut ModelObject, previous: DeviceValue, emitted: DeviceValue) -> Vec<Element>;

    /// Extra zero-time rules over wrapper objects of this device.
    fn device_rules(&self, _wrapper_class: &str) -> Vec<Arc<dyn Rule>> {
        Vec::new()
    }
}

pub(crate) fn bad(obj: &ModelObject, reason: &str) -> MachineError {
    MachineError::malformed(obj, reason)
}

pub(crate) fn time_attr(obj: &ModelObject, name: &str) -> Result<LogicalTime, MachineError> {
    obj.time_attr(name).ok_or_else(|| bad(obj, &format!("missing time attribute `{name}`")))
}

fn encode_log(log: &[StressInterval]) -> Value {
    Value::List(
        log.iter()
            .map(|i| {
                let mut entry = vec![Value::time(i.start)];
                if let Some(end) = i.end {
                    entry.push(Value::time(end));
                }
                Value::List(entry)
            })
            .collect(),
    )
}

fn decode_log(obj: &ModelObject) -> Result<Vec<StressInterval>, MachineError> {
    let items = obj
        .get("stress-intervals")
        .and_then(Value::as_list)
        .ok_or_else(|| bad(obj, "missing `stress-intervals`"))?;
    items
        .iter()
        .map(|entry| {
            let parts = entry.as_list().unwrap_or(&[]);
            let start = parts.first().and_then(Value::as_time);
            let end = parts.get(1).map(|v| v.as_time());
            match (start, end) {
                (Some(start), None) => Ok(StressInterval { start, end: None }),
                (Some(start), Some(Some(end))) => Ok(StressInterval { start, end: Some(end) }),
                _ => Err(bad(obj, "malformed stress interval")),
            }
        })
        .collect()
}

/// Read the shaper state stored on a wrapper object.
pub fn read_state(obj: &ModelObject) -> Result<ShaperState, MachineError> {
    let num = |name: &str| obj.num_attr(name).ok_or_else(|| bad(obj, &format!("missing `{name}`")));
    Ok(ShaperState {
        val: num("val")?,
        next_val: num("next-val")?,
        disp: time_attr(obj, "disp")?,
        log: decode_log(obj)?,
    })
}

pub fn write_state(obj: &mut ModelObject, s: &ShaperState) {
    obj.set("val", Value::Num(s.val));
    obj.set("next-val", Value::Num(s.next_val));
    obj.set("disp", Value::time(s.disp));
    obj.set("stress-intervals", encode_log(&s.log));
}

pub fn inner_module(obj: &ModelObject) -> Result<&ModelObject, MachineError> {
    obj.get("inside")
        .and_then(Value::as_conf)
        .and_then(|c| c.objects().next())
        .ok_or_else(|| bad(obj, "missing `inside` module"))
}

pub fn set_inner(obj: &mut ModelObject, inner: ModelObject) {
    obj.set("inside", Value::Conf(Configuration::from_elements([inner.into()])));
}

/// Build a wrapper object around `inner` with a fresh shaper state.
pub fn wrapper_object(id: &str, class: &str, inner: ModelObject, state: &ShaperState) -> ModelObject {
    let mut w = ModelObject::new(id, class).with("clock", Value::time(LogicalTime::ZERO));
    write_state(&mut w, state);
    set_inner(&mut w, inner);
    w
}

/// Whether `m` is a request addressed to `target`.
fn is_request_for(m: &Message, name: &str, target: &str) -> bool {
    m.name == name && m.dir != Direction::Out && m.target() == Some(target)
}

/// Something in `config` may still produce a request for `target` at this
/// instant: an unprocessed adapter reply or a stimulus entry due now.
fn producers_pending(config: &Configuration, target: &str) -> bool {
    config.messages().any(|m| m.name == MSG_RECEIVED && m.dir == Direction::In)
        || config
            .objects()
            .filter(|o| o.class == STIMULUS_CLASS)
            .any(|o| stimulus::due_targets(o).iter().any(|t| t == target))
}

/// The shaper wrapper for one device kind.
pub struct ShaperComponent {
    device: Arc<dyn ShapedDevice>,
    params: ShaperParams,
    domain: ValueDomain,
}

impl ShaperComponent {
    pub fn new(device: Arc<dyn ShapedDevice>, params: ShaperParams, domain: ValueDomain) -> Self {
        ShaperComponent { device, params, domain }
    }

    pub fn params(&self) -> &ShaperParams {
        &self.params
    }
}

impl Component for ShaperComponent {
    fn owns(&self, obj: &ModelObject) -> bool {
        obj.class == self.device.wrapper_class()
    }

    fn rules(&self) -> Vec<Arc<dyn Rule>> {
        let mut rules: Vec<Arc<dyn Rule>> = vec![
            Arc::new(RequestRule {
                device: self.device.clone(),
                domain: self.domain,
            }),
            Arc::new(DispatchRule {
                device: self.device.clone(),
                params: self.params.clone(),
            }),
        ];
        rules.extend(self.device.device_rules(self.device.wrapper_class()));
        rules
    }

    fn mte(&self, obj: &ModelObject) -> Result<TimeInf, MachineError> {
        let s = read_state(obj)?;
        Ok(shaper::shaper_mte(&s).min(self.device.inner_mte(inner_module(obj)?)?))
    }

    fn tick(&self, obj: &ModelObject, t: LogicalTime) -> Result<ModelObject, MachineError> {
        let s = read_state(obj)?;
        let s = shaper::shaper_tick(&s, t).map_err(|e| bad(obj, &e.to_string()))?;
        let inner = self.device.inner_tick(inner_module(obj)?, t)?;
        let mut next = obj.clone();
        write_state(&mut next, &s);
        set_inner(&mut next, inner);
        next.set("clock", Value::time(time_attr(obj, "clock")? + t));
        Ok(next)
    }
}

struct RequestRule {
    device: Arc<dyn ShapedDevice>,
    domain: ValueDomain,
}

impl Rule for RequestRule {
    fn name(&self) -> &str {
        "request"
    }

    fn redexes(&self, config: &Configuration) -> Vec<Redex> {
        let class = self.device.wrapper_class();
        let name = self.device.request_name();
        let elems = config.elements();
        let mut out = Vec::new();
        for (wi, e) in elems.iter().enumerate() {
            let Some(w) = e.as_object().filter(|o| o.class == class) else {
                continue;
            };
            if producers_pending(config, &w.id) {
                continue;
            }
            // only the canonically least pending request is consumable
            let Some((mi, m)) = elems.iter().enumerate().find_map(|(i, e)| {
                e.as_message().filter(|m| is_request_for(m, name, &w.id)).map(|m| (i, m))
            }) else {
                continue;
            };
            let Ok(state) = read_state(w) else { continue };
            let decoded = m.args.get(1).and_then(|a| self.device.decode_request(a));
            let mut next = w.clone();
            let accepted = match decoded.map(|v| shaper::request(&state, v, &self.domain)) {
                Some(Ok(s)) => {
                    write_state(&mut next, &s);
                    true
                }
                _ => false,
            };
            let value = m.args.get(1).map(|v| v.to_string()).unwrap_or_default();
            out.push(Redex {
                consumed: vec![wi, mi],
                produced: vec![next.into()],
                note: Some(Note {
                    kind: "request".into(),
                    detail: json!({ "target": w.id, "value": value, "accepted": accepted }),
                }),
            });
        }
        out
    }
}

struct DispatchRule {
    device: Arc<dyn ShapedDevice>,
    params: ShaperParams,
}

impl Rule for DispatchRule {
    fn name(&self) -> &str {
        "dispatch"
    }

    fn redexes(&self, config: &Configuration) -> Vec<Redex> {
        let class = self.device.wrapper_class();
        let name = self.device.request_name();
        let mut out = Vec::new();
        for (wi, e) in config.elements().iter().enumerate() {
            let Some(w) = e.as_object().filter(|o| o.class == class) else {
                continue;
            };
            let Ok(state) = read_state(w) else { continue };
            if !state.disp.is_zero()
                || producers_pending(config, &w.id)
                || config.messages().any(|m| is_request_for(m, name, &w.id))
            {
                continue;
            }
            let (Ok(now), Ok(inner)) = (time_attr(w, "clock"), inner_module(w)) else {
                continue;
            };
            let Ok(d) = shaper::dispatch(&state, &self.params, now) else {
                continue;
            };
            let mut inner = inner.clone();
            let mut produced = self.device.on_dispatch(&mut inner, state.val, d.value);
            let mut next = w.clone();
            write_state(&mut next, &d.state);
            set_inner(&mut next, inner);
            produced.push(next.into());
            let mut detail = serde_json::to_value(&d.record).expect("record serializes");
            detail["target"] = json!(w.id);
            out.push(Redex {
                consumed: vec![wi],
                produced,
                note: Some(Note { kind: "dispatch".into(), detail }),
            });
        }
        out
    }
}

/// Snapshot of a wrapper's shaper state for dashboards.
pub fn shaper_snapshot(obj: &ModelObject, params: &ShaperParams) -> Result<serde_json::Value, MachineError> {
    let s = read_state(obj)?;
    let now = time_attr(obj, "clock")?;
    let b = shaper::budget(&s.log, now, params, params.period);
    Ok(json!({
        "id": obj.id,
        "clock": now.to_string(),
        "val": crate::time::format_rational(&s.val),
        "next_val": crate::time::format_rational(&s.next_val),
        "disp": s.disp.to_string(),
        "stressed": s.open_interval().is_some(),
        "intervals": s.log,
        "budget": b,
    }))
}
