//! The deterministic timed-machine contract: `mte`, `tick`, zero-time rules
//! run to a fixpoint, and external-message classification.

use std::collections::BTreeSet;
use std::sync::Arc;

use thiserror::Error;

use crate::config::{Configuration, Direction, Element, Message, ModelObject};
use crate::time::{LogicalTime, TimeError, TimeInf};

pub const DEFAULT_STEP_BUDGET: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MachineError {
    #[error("no component registered for class `{class}` (object `{id}`)")]
    UnknownElement { id: String, class: String },
    #[error("tick by {requested} overshoots mte {mte}")]
    TickOvershoot { requested: LogicalTime, mte: TimeInf },
    #[error("zero-time rules still enabled after {budget} applications")]
    LivelockSuspected { budget: usize },
    #[error("malformed `{class}` object `{id}`: {reason}")]
    Malformed { id: String, class: String, reason: String },
    #[error(transparent)]
    Time(#[from] TimeError),
}

impl MachineError {
    pub fn malformed(obj: &ModelObject, reason: impl Into<String>) -> Self {
        MachineError::Malformed {
            id: obj.id.clone(),
            class: obj.class.clone(),
            reason: reason.into(),
        }
    }
}

/// Observable side information attached to a rule application, turned into
/// event-log records by the executors.
#[derive(Debug, Clone, PartialEq)]
pub struct Note {
    pub kind: String,
    pub detail: serde_json::Value,
}

/// One way a rule can fire: elements consumed (indices into the
/// configuration) and elements produced.
#[derive(Debug, Clone, PartialEq)]
pub struct Redex {
    pub consumed: Vec<usize>,
    pub produced: Vec<Element>,
    pub note: Option<Note>,
}

pub trait Rule: Send + Sync {
    fn name(&self) -> &str;

    /// Every enabled instance, in canonical element order.
    fn redexes(&self, config: &Configuration) -> Vec<Redex>;
}

/// Behaviour for one or more object classes: timing plus zero-time rules.
pub trait Component: Send + Sync {
    fn owns(&self, obj: &ModelObject) -> bool;

    fn rules(&self) -> Vec<Arc<dyn Rule>>;

    fn mte(&self, obj: &ModelObject) -> Result<TimeInf, MachineError>;

    fn tick(&self, obj: &ModelObject, t: LogicalTime) -> Result<ModelObject, MachineError>;
}

/// Record of one rule application inside [`Machine::zero_step_traced`].
#[derive(Debug, Clone, PartialEq)]
pub struct Firing {
    pub rule: String,
    pub note: Option<Note>,
}

#[derive(Debug, Clone)]
pub struct ZeroStep {
    pub config: Configuration,
    pub firings: Vec<Firing>,
}

/// A timed machine assembled from components. Rules are tried in
/// registration order; within a rule, the first redex in canonical order fires.
#[derive(Clone)]
pub struct Machine {
    components: Vec<Arc<dyn Component>>,
    rules: Vec<Arc<dyn Rule>>,
    budget: usize,
}

impl Default for Machine {
    fn default() -> Self {
        Machine {
            components: Vec::new(),
            rules: Vec::new(),
            budget: DEFAULT_STEP_BUDGET,
        }
    }
}

impl std::fmt::Debug for Machine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Machine")
            .field("rules", &self.rule_names())
            .field("budget", &self.budget)
            .finish()
    }
}

impl Machine {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_component(mut self, c: Arc<dyn Component>) -> Self {
        self.rules.extend(c.rules());
        self.components.push(c);
        self
    }

    /// A rule not tied to any object class (adapters, message-only rules).
    pub fn with_rule(mut self, r: Arc<dyn Rule>) -> Self {
        self.rules.push(r);
        self
    }

    pub fn with_budget(mut self, budget: usize) -> Self {
        self.budget = budget;
        self
    }

    pub fn rule_names(&self) -> Vec<String> {
        self.rules.iter().map(|r| r.name().to_string()).collect()
    }

    fn component_for(&self, obj: &ModelObject) -> Result<&Arc<dyn Component>, MachineError> {
        self.components
            .iter()
            .find(|c| c.owns(obj))
            .ok_or_else(|| MachineError::UnknownElement {
                id: obj.id.clone(),
                class: obj.class.clone(),
            })
    }

    /// Minimum over all elements; messages are untimed and contribute `INF`.
    pub fn mte(&self, config: &Configuration) -> Result<TimeInf, MachineError> {
        let mut m = TimeInf::Inf;
        for obj in config.objects() {
            m = m.min(self.component_for(obj)?.mte(obj)?);
        }
        Ok(m)
    }

    pub fn tick(&self, config: &Configuration, t: LogicalTime) -> Result<Configuration, MachineError> {
        let m = self.mte(config)?;
        if TimeInf::Finite(t) > m {
            return Err(MachineError::TickOvershoot { requested: t, mte: m });
        }
        self.tick_unchecked(config, t)
    }

    /// Element-wise tick without the `t <= mte` guard.
    pub fn tick_unchecked(
        &self,
        config: &Configuration,
        t: LogicalTime,
    ) -> Result<Configuration, MachineError> {
        if t.is_zero() {
            return Ok(config.clone());
        }
        config
            .elements()
            .iter()
            .map(|e| match e {
                Element::Object(o) => Ok(Element::Object(self.component_for(o)?.tick(o, t)?)),
                Element::Message(m) => Ok(Element::Message(m.clone())),
            })
            .collect()
    }

    fn first_redex(&self, config: &Configuration) -> Option<(&Arc<dyn Rule>, Redex)> {
        self.rules
            .iter()
            .find_map(|r| r.redexes(config).into_iter().next().map(|x| (r, x)))
    }

    pub fn zero_step(&self, config: &Configuration) -> Result<Configuration, MachineError> {
        self.zero_step_traced(config).map(|z| z.config)
    }

    /// Apply enabled zero-time rules until none is enabled.
    pub fn zero_step_traced(&self, config: &Configuration) -> Result<ZeroStep, MachineError> {
        let mut current = config.clone();
        let mut firings = Vec::new();
        for _ in 0..self.budget {
            match self.first_redex(&current) {
                None => {
                    return Ok(ZeroStep {
                        config: current,
                        firings,
                    })
                }
                Some((rule, redex)) => {
                    current = current.rewrite(&redex.consumed, redex.produced);
                    firings.push(Firing {
                        rule: rule.name().to_string(),
                        note: redex.note,
                    });
                }
            }
        }
        if self.first_redex(&current).is_none() {
            return Ok(ZeroStep {
                config: current,
                firings,
            });
        }
        Err(MachineError::LivelockSuspected { budget: self.budget })
    }

    /// One-step zero-time successors of `config`, one per enabled redex.
    pub fn successors(&self, config: &Configuration) -> Vec<Configuration> {
        self.rules
            .iter()
            .flat_map(|rule| rule.redexes(config))
            .map(|r| config.rewrite(&r.consumed, r.produced))
            .collect()
    }

    /// Every normal form reachable by applying enabled rules in any order.
    /// Used for confluence checks on small configurations; stops exploring
    /// once `max_states` distinct configurations were visited.
    pub fn normal_forms(
        &self,
        config: &Configuration,
        max_states: usize,
    ) -> Result<BTreeSet<Configuration>, MachineError> {
        let mut seen = BTreeSet::new();
        let mut forms = BTreeSet::new();
        let mut stack = vec![config.clone()];
        while let Some(c) = stack.pop() {
            if !seen.insert(c.clone()) {
                continue;
            }
            if seen.len() > max_states {
                return Err(MachineError::LivelockSuspected { budget: max_states });
            }
            let next = self.successors(&c);
            if next.is_empty() {
                forms.insert(c);
            } else {
                stack.extend(next);
            }
        }
        Ok(forms)
    }
}

/// A configuration paired with the logical time accumulated so far.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TimedSystem {
    pub config: Configuration,
    pub elapsed: LogicalTime,
}

impl TimedSystem {
    pub fn new(config: Configuration) -> Self {
        TimedSystem {
            config,
            elapsed: LogicalTime::ZERO,
        }
    }

    pub fn advance(&mut self, machine: &Machine, t: LogicalTime) -> Result<(), MachineError> {
        self.config = machine.tick(&self.config, t)?;
        self.elapsed += t;
        Ok(())
    }
}

/// True iff an incoming or outgoing external message is present.
pub fn is_open(config: &Configuration) -> bool {
    config.messages().any(Message::is_external)
}

/// Split off outgoing external messages, in canonical order.
pub fn drain_outgoing(config: &Configuration) -> (Configuration, Vec<Message>) {
    let mut rest = Vec::with_capacity(config.len());
    let mut out = Vec::new();
    for e in config.elements() {
        match e {
            Element::Message(m) if m.dir == Direction::Out => out.push(m.clone()),
            other => rest.push(other.clone()),
        }
    }
    // elements are already canonically sorted; keep it explicit for callers
    out.sort();
    (Configuration::from_elements(rest), out)
}

pub fn inject(config: &Configuration, msgs: impl IntoIterator<Item = Message>) -> Configuration {
    let mut c = config.clone();
    for m in msgs {
        c.insert(m);
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Value;

    /// Countdown timer that emits `ring` at zero and stops.
    struct Alarm;

    struct Ring;

    impl Rule for Ring {
        fn name(&self) -> &str {
            "ring"
        }
        fn redexes(&self, config: &Configuration) -> Vec<Redex> {
            config
                .elements()
                .iter()
                .enumerate()
                .filter_map(|(i, e)| {
                    let o = e.as_object()?;
                    (o.class == "Alarm" && o.time_attr("left")?.is_zero()).then(|| Redex {
                        consumed: vec![i],
                        produced: vec![Message::outgoing("ring", vec![Value::id(&o.id)]).into()],
                        note: None,
                    })
                })
                .collect()
        }
    }

    impl Component for Alarm {
        fn owns(&self, obj: &ModelObject) -> bool {
            obj.class == "Alarm"
        }
        fn rules(&self) -> Vec<Arc<dyn Rule>> {
            vec![Arc::new(Ring)]
        }
        fn mte(&self, obj: &ModelObject) -> Result<TimeInf, MachineError> {
            Ok(obj.time_attr("left").unwrap().into())
        }
        fn tick(&self, obj: &ModelObject, t: LogicalTime) -> Result<ModelObject, MachineError> {
            let left = obj.time_attr("left").unwrap().checked_sub(t)?;
            Ok(obj.clone().with("left", Value::time(left)))
        }
    }

    fn alarm(id: &str, left: u32) -> Element {
        ModelObject::new(id, "Alarm")
            .with("left", Value::time(LogicalTime::from_int(left)))
            .into()
    }

    fn machine() -> Machine {
        Machine::new().with_component(Arc::new(Alarm))
    }

    #[test]
    fn mte_of_empty_is_inf() {
        assert_eq!(machine().mte(&Configuration::new()).unwrap(), TimeInf::Inf);
    }

    #[test]
    fn mte_is_min_over_elements() {
        let c = Configuration::from_elements([alarm("a", 5), alarm("b", 3)]);
        assert_eq!(machine().mte(&c).unwrap(), LogicalTime::from_int(3).into());
    }

    #[test]
    fn unknown_class_is_an_error() {
        let c = Configuration::from_elements([ModelObject::new("x", "Mystery").into()]);
        assert!(matches!(
            machine().mte(&c),
            Err(MachineError::UnknownElement { .. })
        ));
    }

    #[test]
    fn untimed_messages_contribute_inf() {
        let c = Configuration::from_elements([Message::internal("m", vec![]).into()]);
        assert_eq!(machine().mte(&c).unwrap(), TimeInf::Inf);
    }

    #[test]
    fn tick_overshoot_rejected() {
        let c = Configuration::from_elements([alarm("a", 3)]);
        let err = machine().tick(&c, LogicalTime::from_int(4)).unwrap_err();
        assert!(matches!(err, MachineError::TickOvershoot { .. }));
    }

    #[test]
    fn tick_empty_and_zero() {
        let m = machine();
        assert_eq!(m.tick(&Configuration::new(), LogicalTime::from_int(7)).unwrap(), Configuration::new());
        let c = Configuration::from_elements([alarm("a", 3)]);
        assert_eq!(m.tick(&c, LogicalTime::ZERO).unwrap(), c);
    }

    #[test]
    fn zero_step_fires_to_fixpoint() {
        let c = Configuration::from_elements([alarm("a", 0), alarm("b", 2)]);
        let z = machine().zero_step_traced(&c).unwrap();
        assert_eq!(z.firings.len(), 1);
        assert_eq!(z.config.len(), 2);
        assert!(is_open(&z.config));
        let (rest, out) = drain_outgoing(&z.config);
        assert_eq!(out, vec![Message::outgoing("ring", vec![Value::id("a")])]);
        assert!(!is_open(&rest));
    }

    struct Loop;
    impl Rule for Loop {
        fn name(&self) -> &str {
            "loop"
        }
        fn redexes(&self, config: &Configuration) -> Vec<Redex> {
            config
                .elements()
                .iter()
                .position(|e| e.as_message().is_some_and(|m| m.name == "spin"))
                .map(|i| Redex {
                    consumed: vec![i],
                    produced: vec![Message::internal("spin", vec![]).into()],
                    note: None,
                })
                .into_iter()
                .collect()
        }
    }

    #[test]
    fn livelock_detected() {
        let m = Machine::new().with_rule(Arc::new(Loop)).with_budget(100);
        let c = Configuration::from_elements([Message::internal("spin", vec![]).into()]);
        assert_eq!(
            m.zero_step(&c).unwrap_err(),
            MachineError::LivelockSuspected { budget: 100 }
        );
    }

    #[test]
    fn open_classification() {
        assert!(!is_open(&Configuration::new()));
        assert!(!is_open(&Configuration::from_elements([alarm("a", 1)])));
        let c = Configuration::from_elements([alarm("a", 1), Message::outgoing("shock", vec![]).into()]);
        assert!(is_open(&c));
        let c = Configuration::from_elements([Message::internal("x", vec![]).into()]);
        assert!(!is_open(&c));
    }

    #[test]
    fn drain_keeps_internal_messages() {
        let internal = Message::internal("set-period", vec![]);
        let c = Configuration::from_elements([alarm("a", 1), internal.clone().into()]);
        let (rest, out) = drain_outgoing(&c);
        assert_eq!(rest, c);
        assert!(out.is_empty());
        assert_eq!(drain_outgoing(&Configuration::new()), (Configuration::new(), vec![]));
    }

    #[test]
    fn drain_orders_by_name_then_payload() {
        let c = Configuration::from_elements([
            Message::outgoing("b", vec![]).into(),
            Message::outgoing("a", vec![Value::id("z")]).into(),
            Message::outgoing("a", vec![Value::id("y")]).into(),
        ]);
        let (_, out) = drain_outgoing(&c);
        let names: Vec<String> = out.iter().map(|m| m.to_string()).collect();
        assert_eq!(names, vec!["a(y)", "a(z)", "b"]);
    }

    #[test]
    fn inject_is_union() {
        let c = Configuration::from_elements([alarm("a", 1)]);
        assert_eq!(inject(&c, []), c);
        let m = Message::incoming("msg-received", vec![Value::id("pacer-client"), Value::str("shocked\n")]);
        let d = inject(&c, [m.clone()]);
        assert_eq!(d, Configuration::from_elements([alarm("a", 1), m.into()]));
    }

    #[test]
    fn timed_system_accumulates() {
        let m = machine();
        let mut s = TimedSystem::new(Configuration::from_elements([alarm("a", 5)]));
        s.advance(&m, LogicalTime::from_int(2)).unwrap();
        s.advance(&m, LogicalTime::from_int(3)).unwrap();
        assert_eq!(s.elapsed, LogicalTime::from_int(5));
        assert_eq!(m.mte(&s.config).unwrap(), LogicalTime::ZERO.into());
    }
}
