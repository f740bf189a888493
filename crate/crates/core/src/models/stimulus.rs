//! Scheduled message source: emits each scheduled message when its due
//! time is reached.

use std::sync::Arc;

use serde_json::json;

use crate::config::{Configuration, Element, Message, ModelObject, Value};
use crate::machine::{Component, MachineError, Note, Redex, Rule};
use crate::time::{LogicalTime, TimeInf};

use super::{bad, time_attr};

pub const STIMULUS_CLASS: &str = "Stimulus";

/// `(due, message)` pairs sorted by due time (stable for equal times).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct StimulusSchedule {
    entries: Vec<(LogicalTime, Message)>,
}

impl StimulusSchedule {
    pub fn new(mut entries: Vec<(LogicalTime, Message)>) -> Self {
        entries.sort_by_key(|(due, _)| *due);
        StimulusSchedule { entries }
    }

    /// `message` at `start`, `start + every`, ... up to and including `until`.
    pub fn periodic(message: Message, start: LogicalTime, every: LogicalTime, until: LogicalTime) -> Self {
        let mut entries = Vec::new();
        if !every.is_zero() {
            let mut due = start;
            while due <= until {
                entries.push((due, message.clone()));
                due += every;
            }
        }
        StimulusSchedule { entries }
    }

    pub fn merge(mut self, other: StimulusSchedule) -> Self {
        self.entries.extend(other.entries);
        StimulusSchedule::new(self.entries)
    }

    pub fn entries(&self) -> &[(LogicalTime, Message)] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_object(&self, id: &str) -> ModelObject {
        let schedule = self
            .entries
            .iter()
            .map(|(due, m)| {
                Value::List(vec![
                    Value::time(*due),
                    Value::Conf(Configuration::from_elements([m.clone().into()])),
                ])
            })
            .collect();
        ModelObject::new(id, STIMULUS_CLASS)
            .with("clock", Value::time(LogicalTime::ZERO))
            .with("schedule", Value::List(schedule))
    }
}

fn entries(obj: &ModelObject) -> Result<Vec<(LogicalTime, Message)>, MachineError> {
    let list = obj
        .get("schedule")
        .and_then(Value::as_list)
        .ok_or_else(|| bad(obj, "missing `schedule`"))?;
    list.iter()
        .map(|entry| {
            let parts = entry.as_list().unwrap_or(&[]);
            let due = parts.first().and_then(Value::as_time);
            let msg = parts
                .get(1)
                .and_then(Value::as_conf)
                .and_then(|c| c.messages().next().cloned());
            match (due, msg) {
                (Some(d), Some(m)) => Ok((d, m)),
                _ => Err(bad(obj, "malformed schedule entry")),
            }
        })
        .collect()
}

/// Targets of the messages due at the object's current clock.
pub(crate) fn due_targets(obj: &ModelObject) -> Vec<String> {
    let (Ok(now), Ok(es)) = (time_attr(obj, "clock"), entries(obj)) else {
        return Vec::new();
    };
    es.iter()
        .filter(|(due, _)| *due <= now)
        .filter_map(|(_, m)| m.target().map(str::to_string))
        .collect()
}

pub struct StimulusComponent;

impl Component for StimulusComponent {
    fn owns(&self, obj: &ModelObject) -> bool {
        obj.class == STIMULUS_CLASS
    }

    fn rules(&self) -> Vec<Arc<dyn Rule>> {
        vec![Arc::new(EmitDue)]
    }

    fn mte(&self, obj: &ModelObject) -> Result<TimeInf, MachineError> {
        let now = time_attr(obj, "clock")?;
        Ok(match entries(obj)?.first() {
            Some((due, _)) => TimeInf::Finite(due.saturating_sub(now)),
            None => TimeInf::Inf,
        })
    }

    fn tick(&self, obj: &ModelObject, t: LogicalTime) -> Result<ModelObject, MachineError> {
        let now = time_attr(obj, "clock")?;
        Ok(obj.clone().with("clock", Value::time(now + t)))
    }
}

struct EmitDue;

impl Rule for EmitDue {
    fn name(&self) -> &str {
        "emit-due"
    }

    fn redexes(&self, config: &Configuration) -> Vec<Redex> {
        let mut out = Vec::new();
        for (i, e) in config.elements().iter().enumerate() {
            let Some(obj) = e.as_object().filter(|o| o.class == STIMULUS_CLASS) else {
                continue;
            };
            let (Ok(now), Ok(es)) = (time_attr(obj, "clock"), entries(obj)) else {
                continue;
            };
            let (due, rest): (Vec<_>, Vec<_>) = es.into_iter().partition(|(d, _)| *d <= now);
            if due.is_empty() {
                continue;
            }
            let remaining = StimulusSchedule { entries: rest }.to_object(&obj.id);
            let remaining = remaining.with("clock", Value::time(now));
            let names: Vec<String> = due.iter().map(|(_, m)| m.to_string()).collect();
            let mut produced: Vec<Element> = due.into_iter().map(|(_, m)| m.into()).collect();
            produced.push(remaining.into());
            out.push(Redex {
                consumed: vec![i],
                produced,
                note: Some(Note {
                    kind: "stimulus".into(),
                    detail: json!({ "source": obj.id, "emitted": names }),
                }),
            });
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::machine::Machine;

    fn bolus() -> Message {
        Message::internal("set-mode", vec![Value::id("pump-module"), Value::id("bolus")])
    }

    fn machine() -> Machine {
        Machine::new().with_component(Arc::new(StimulusComponent))
    }

    #[test]
    fn mte_is_time_to_next_due() {
        let obj = StimulusSchedule::new(vec![(LogicalTime::from_int(9), bolus())]).to_object("patient");
        let c = Configuration::from_elements([obj.into()]);
        assert_eq!(machine().mte(&c).unwrap(), LogicalTime::from_int(9).into());
    }

    #[test]
    fn empty_schedule_is_inf() {
        let obj = StimulusSchedule::default().to_object("patient");
        let c = Configuration::from_elements([obj.into()]);
        assert_eq!(machine().mte(&c).unwrap(), TimeInf::Inf);
    }

    #[test]
    fn simultaneous_entries_emitted_in_one_pass() {
        let other = Message::internal("set-mode", vec![Value::id("pump-module"), Value::id("base")]);
        let sched = StimulusSchedule::new(vec![
            (LogicalTime::from_int(2), bolus()),
            (LogicalTime::from_int(2), other.clone()),
            (LogicalTime::from_int(5), bolus()),
        ]);
        let m = machine();
        let c = Configuration::from_elements([sched.to_object("patient").into()]);
        let c = m.tick(&c, LogicalTime::from_int(2)).unwrap();
        let z = m.zero_step_traced(&c).unwrap();
        assert_eq!(z.firings.len(), 1);
        assert_eq!(
            z.firings[0].note.as_ref().unwrap().detail["emitted"],
            json!(["set-mode(pump-module, bolus)", "set-mode(pump-module, base)"])
        );
        assert_eq!(z.config.messages().count(), 2);
        assert_eq!(m.mte(&z.config).unwrap(), LogicalTime::from_int(3).into());
    }

    #[test]
    fn periodic_expansion() {
        let s = StimulusSchedule::periodic(bolus(), LogicalTime::from_int(9), LogicalTime::from_int(1), LogicalTime::from_int(12));
        let dues: Vec<String> = s.entries().iter().map(|(d, _)| d.to_string()).collect();
        assert_eq!(dues, vec!["9", "10", "11", "12"]);
    }
}
