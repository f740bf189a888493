//! Scenario files and the logical-mode executor.

use std::collections::{BTreeMap, VecDeque};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;
use thiserror::Error;

use crate::adapter::{AdapterTable, ClientAction, InAdapterRule};
use crate::config::{Configuration, Direction, Message};
use crate::devices::{Exact, PaceTrace, PumpEmulator};
use crate::eventlog::EventLog;
use crate::machine::{Machine, TimedSystem};
use crate::models::stimulus::StimulusSchedule;
use crate::models::{pacemaker, pump, shaper_snapshot};
use crate::shaper::{ShaperParams, ValueDomain};
use crate::tick::AdvanceMessage;
use crate::time::{LogicalTime, Rational, TimeInf};
use crate::wrapper::{ClientResult, ClientTransport, Ticker, WrapperConfig, WrapperError, WrapperSession};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("reading scenario: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing scenario: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Wrapper(#[from] WrapperError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InstanceKind {
    Pacemaker,
    Pump,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instance {
    pub kind: InstanceKind,
    pub params: ShaperParams,
    /// Request domain; the pump's is fixed to base..bolus.
    #[serde(default)]
    pub domain: Option<ValueDomain>,
    #[serde(with = "crate::time::rational_serde")]
    pub initial: Rational,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServerAddr {
    pub host: String,
    pub port: u16,
    pub intr_port: u16,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeviceKind {
    Pacer,
    Pump,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceEndpoint {
    pub kind: DeviceKind,
    pub host: String,
    pub port: u16,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StimulusEntry {
    pub at: LogicalTime,
    pub message: String,
}

/// `message` every `every` units from `start` through `until`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Flood {
    pub message: String,
    pub start: LogicalTime,
    pub every: LogicalTime,
    pub until: LogicalTime,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Physical,
    #[default]
    Logical,
}

fn inf() -> TimeInf {
    TimeInf::Inf
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(with = "crate::time::rational_serde")]
    pub grain_ms: Rational,
    pub server: ServerAddr,
    pub instance: Instance,
    pub adapters: AdapterTable,
    #[serde(default)]
    pub devices: Vec<DeviceEndpoint>,
    #[serde(default)]
    pub stimulus: Vec<StimulusEntry>,
    #[serde(default)]
    pub flood: Option<Flood>,
    #[serde(default)]
    pub interrupt_target: Option<String>,
    #[serde(default = "inf")]
    pub max_te: TimeInf,
    pub horizon: LogicalTime,
    #[serde(default)]
    pub mode: Mode,
    /// Free-form notes, e.g. which parameters are chosen rather than given.
    #[serde(default)]
    pub notes: BTreeMap<String, String>,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let cfg: ScenarioConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Invalid(m));
        if self.grain_ms <= Rational::from_integer(0) {
            return bad("grain_ms must be positive".into());
        }
        self.instance
            .params
            .validate()
            .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        self.adapters
            .validate()
            .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        let mut ports = vec![self.server.port, self.server.intr_port];
        ports.extend(self.devices.iter().map(|d| d.port));
        let mut sorted = ports.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != ports.len() || ports.contains(&0) {
            return bad(format!("ports must be distinct and non-zero: {ports:?}"));
        }
        for e in &self.stimulus {
            if Message::parse_text(&e.message, Direction::Internal).is_none() {
                return bad(format!("empty stimulus message at {}", e.at));
            }
        }
        if self.instance.kind == InstanceKind::Pacemaker && self.instance.domain.is_none() {
            return bad("pacemaker instance needs a request domain".into());
        }
        Ok(())
    }

    pub fn domain(&self) -> ValueDomain {
        match self.instance.kind {
            InstanceKind::Pump => pump::domain(),
            InstanceKind::Pacemaker => self
                .instance
                .domain
                .unwrap_or(ValueDomain::new(self.instance.initial, self.instance.initial)),
        }
    }

    pub fn params(&self) -> &ShaperParams {
        &self.instance.params
    }

    pub fn module_id(&self) -> &'static str {
        match self.instance.kind {
            InstanceKind::Pacemaker => pacemaker::MODULE_ID,
            InstanceKind::Pump => pump::MODULE_ID,
        }
    }

    pub fn machine(&self) -> Machine {
        let p = self.instance.params.clone();
        let m = match self.instance.kind {
            InstanceKind::Pacemaker => pacemaker::machine(p, self.domain()),
            InstanceKind::Pump => pump::machine(p),
        };
        m.with_rule(Arc::new(InAdapterRule::new(Arc::new(self.adapters.clone()))))
    }

    pub fn schedule(&self) -> StimulusSchedule {
        let parse = |t: &str| Message::parse_text(t, Direction::Internal).expect("validated");
        let mut s = StimulusSchedule::new(self.stimulus.iter().map(|e| (e.at, parse(&e.message))).collect());
        if let Some(f) = &self.flood {
            s = s.merge(StimulusSchedule::periodic(parse(&f.message), f.start, f.every, f.until));
        }
        s
    }

    pub fn initial(&self) -> Configuration {
        let wrapper = match self.instance.kind {
            InstanceKind::Pacemaker => pacemaker::wrapper_init(&self.instance.params, self.instance.initial),
            InstanceKind::Pump => pump::wrapper_init(&self.instance.params),
        };
        let mut c = Configuration::from_elements([wrapper.into()]);
        let sched = self.schedule();
        if !sched.is_empty() {
            c.insert(sched.to_object("patient"));
        }
        c
    }

    pub fn wrapper_config(&self) -> WrapperConfig {
        WrapperConfig {
            grain: self.grain_ms,
            max_te: self.max_te,
            horizon: Some(self.horizon),
            interrupt_target: self.interrupt_target.clone(),
        }
    }

    pub fn session(&self) -> WrapperSession {
        WrapperSession::new(
            Arc::new(self.machine()),
            Arc::new(self.adapters.clone()),
            self.wrapper_config(),
            self.initial(),
        )
    }

    /// Shaper state of the wrapped device in `config`.
    pub fn snapshot(&self, config: &Configuration) -> Option<Json> {
        let w = config.object(self.module_id())?;
        shaper_snapshot(w, &self.instance.params).ok()
    }

    /// Rewrite every configured port through `f` (server, devices, adapters).
    pub fn remap_ports(&mut self, f: impl Fn(u16) -> u16) {
        self.server.port = f(self.server.port);
        self.server.intr_port = f(self.server.intr_port);
        for d in &mut self.devices {
            d.port = f(d.port);
        }
        self.adapters.remap_ports(&f);
    }
}

/// Advances by exactly the requested mte, or to the next scripted interrupt.
#[derive(Debug, Default)]
pub struct LogicalTicker {
    elapsed: LogicalTime,
    interrupts: VecDeque<(LogicalTime, String)>,
    pending: Option<TimeInf>,
}

impl LogicalTicker {
    pub fn new(mut interrupts: Vec<(LogicalTime, String)>) -> Self {
        interrupts.sort_by_key(|i| i.0);
        LogicalTicker {
            elapsed: LogicalTime::ZERO,
            interrupts: interrupts.into(),
            pending: None,
        }
    }
}

impl Ticker for LogicalTicker {
    fn start(&mut self, _grain: Rational) -> Result<(), WrapperError> {
        Ok(())
    }

    fn send_request(&mut self, mte: TimeInf) -> Result<(), WrapperError> {
        self.pending = Some(mte);
        Ok(())
    }

    fn await_advance(&mut self) -> Result<Option<AdvanceMessage>, WrapperError> {
        let mte = self
            .pending
            .take()
            .ok_or_else(|| WrapperError::Protocol("advance awaited without request".into()))?;
        let adv = match (self.interrupts.front(), mte) {
            (Some((at, _)), m) if TimeInf::Finite(at.saturating_sub(self.elapsed)) <= m => {
                let (at, payload) = self.interrupts.pop_front().expect("front exists");
                Some(AdvanceMessage::with_payload(at.saturating_sub(self.elapsed), &payload))
            }
            (_, TimeInf::Finite(m)) => Some(AdvanceMessage::new(m)),
            (_, TimeInf::Inf) => None,
        };
        if let Some(a) = &adv {
            self.elapsed += a.elapsed;
        }
        Ok(adv)
    }
}

#[derive(Debug, Clone)]
pub enum StubDevice {
    Pacer(PaceTrace),
    Pump(PumpEmulator),
}

/// In-process devices answering client actions by port, with zero latency.
#[derive(Debug, Clone)]
pub struct StubDevices {
    grain: Rational,
    devices: BTreeMap<u16, StubDevice>,
}

impl StubDevices {
    pub fn new(grain: Rational, endpoints: &[DeviceEndpoint]) -> Self {
        let devices = endpoints
            .iter()
            .map(|e| {
                let d = match e.kind {
                    DeviceKind::Pacer => StubDevice::Pacer(PaceTrace::new()),
                    DeviceKind::Pump => StubDevice::Pump(PumpEmulator::new(Exact::from_integer(0))),
                };
                (e.port, d)
            })
            .collect();
        StubDevices { grain, devices }
    }

    pub fn get(&self, port: u16) -> Option<&StubDevice> {
        self.devices.get(&port)
    }

    pub fn pacer(&self) -> Option<&PaceTrace> {
        self.devices.values().find_map(|d| match d {
            StubDevice::Pacer(p) => Some(p),
            _ => None,
        })
    }

    pub fn pump(&self) -> Option<&PumpEmulator> {
        self.devices.values().find_map(|d| match d {
            StubDevice::Pump(p) => Some(p),
            _ => None,
        })
    }

    fn wall_ms(&self, t: LogicalTime) -> Exact {
        let ms = t * self.grain;
        Exact::new(i128::from(*ms.numer()), i128::from(*ms.denom()))
    }
}

impl ClientTransport for StubDevices {
    fn run(&mut self, action: &ClientAction, t: LogicalTime) -> ClientResult {
        let now = self.wall_ms(t);
        let reply = match self.devices.get_mut(&action.port) {
            Some(StubDevice::Pacer(p)) => Ok(p.handle(&action.send, crate::devices::exact_to_f64(now)).to_string()),
            Some(StubDevice::Pump(p)) => Ok(p.handle(&action.send, now).to_string()),
            None => Err(format!("connection refused: {}:{}", action.host, action.port)),
        };
        ClientResult { reply, sent_at: None }
    }
}

pub struct LogicalRun {
    pub log: EventLog,
    pub devices: StubDevices,
    pub system: TimedSystem,
}

pub fn run_logical(cfg: &ScenarioConfig) -> Result<LogicalRun, ScenarioError> {
    run_logical_with(cfg, Vec::new())
}

/// Logical run with interrupts injected at fixed logical instants.
pub fn run_logical_with(cfg: &ScenarioConfig, interrupts: Vec<(LogicalTime, String)>) -> Result<LogicalRun, ScenarioError> {
    cfg.validate()?;
    let mut session = cfg.session();
    let mut ticker = LogicalTicker::new(interrupts);
    let mut devices = StubDevices::new(cfg.grain_ms, &cfg.devices);
    session.run(&mut ticker, &mut devices)?;
    let system = session.system().clone();
    Ok(LogicalRun {
        log: session.into_log(),
        devices,
        system,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logical_ticker_prefers_earlier_interrupt() {
        let mut t = LogicalTicker::new(vec![(LogicalTime::from_int(4), "bolus-press".into())]);
        t.send_request(TimeInf::Finite(LogicalTime::from_int(10))).unwrap();
        let a = t.await_advance().unwrap().unwrap();
        assert_eq!(a, AdvanceMessage::with_payload(LogicalTime::from_int(4), "bolus-press"));
        t.send_request(TimeInf::Finite(LogicalTime::from_int(10))).unwrap();
        assert_eq!(t.await_advance().unwrap().unwrap(), AdvanceMessage::new(LogicalTime::from_int(10)));
        t.send_request(TimeInf::Inf).unwrap();
        assert_eq!(t.await_advance().unwrap(), None);
    }
}
