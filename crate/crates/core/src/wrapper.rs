//! Client-side execution wrapper: runs a machine in rounds against a ticker,
//! moving outgoing messages through adapters to one-round clients.

use std::sync::Arc;

use num_traits::ToPrimitive;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::adapter::{msg_received, AdapterError, AdapterTable, ClientAction};
use crate::clock::{ns_to_ms, Clock, WallNs};
use crate::config::{Configuration, Direction, Message, Value};
use crate::eventlog::{EventKind, EventLog, Record};
use crate::machine::{drain_outgoing, inject, is_open, Machine, MachineError, TimedSystem};
use crate::tick::AdvanceMessage;
use crate::time::{LogicalTime, Rational, TimeInf};

#[derive(Debug, Error)]
pub enum WrapperError {
    #[error(transparent)]
    Machine(#[from] MachineError),
    #[error(transparent)]
    Adapter(#[from] AdapterError),
    #[error("tick protocol: {0}")]
    Protocol(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("mte is 0 after a complete zero-time pass at t={0}")]
    Livelock(LogicalTime),
    #[error("client `{0}` failed: {1}")]
    ClientFatal(String, String),
    #[error("advancement {elapsed} exceeds requested {requested}")]
    Overshoot { elapsed: LogicalTime, requested: TimeInf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WrapperState {
    Start,
    Run,
    Request,
    Wait,
}

/// Source of time advancements: a tick server, or the logical executor.
pub trait Ticker {
    /// Handshake with the grain (ms per model unit).
    fn start(&mut self, grain: Rational) -> Result<(), WrapperError>;
    fn send_request(&mut self, mte: TimeInf) -> Result<(), WrapperError>;
    /// `None` when no advancement can ever arrive.
    fn await_advance(&mut self) -> Result<Option<AdvanceMessage>, WrapperError>;
    fn finish(&mut self) {}
}

pub struct ClientResult {
    pub reply: Result<String, String>,
    /// Instant the request finished sending.
    pub sent_at: Option<WallNs>,
}

pub trait ClientTransport {
    fn run(&mut self, action: &ClientAction, t: LogicalTime) -> ClientResult;
}

/// Live view of a run, e.g. for a dashboard.
pub trait Observer: Send + Sync {
    fn record(&self, r: &Record);
    fn state(&self, _t: LogicalTime, _config: &Configuration) {}
}

/// Per-round wall durations in milliseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RoundTiming {
    pub comm1: f64,
    pub rew1: f64,
    pub comm2: f64,
    pub proc: f64,
    pub comm3: f64,
    pub rew2: f64,
    pub comm4: f64,
    /// Wall budget of the round: next mte × grain (None when INF).
    pub budget: Option<f64>,
}

impl RoundTiming {
    pub fn round(&self) -> f64 {
        self.comm1 + self.rew1 + self.comm2 + self.proc + self.comm3 + self.rew2 + self.comm4
    }

    pub fn jitter(&self) -> f64 {
        self.comm1 + self.rew1 + self.comm2
    }

    pub fn deadline_missed(&self) -> bool {
        self.budget.is_some_and(|b| self.round() > b)
    }
}

/// Phase boundary stamps of one round.
#[derive(Debug, Clone, Copy, Default)]
pub struct RoundStamps {
    pub ideal: WallNs,
    pub received: WallNs,
    pub rewritten: Option<WallNs>,
    pub sent: Option<WallNs>,
    pub replied: Option<WallNs>,
    pub mte_ready: WallNs,
    pub requested: WallNs,
}

pub fn measure_round(s: &RoundStamps, next_mte: TimeInf, grain: Rational) -> RoundTiming {
    let ms = |a: WallNs, b: WallNs| ns_to_ms(b.saturating_sub(a));
    let rewritten = s.rewritten.unwrap_or(s.mte_ready);
    let sent = s.sent.unwrap_or(rewritten);
    let replied = s.replied.unwrap_or(sent);
    RoundTiming {
        comm1: ms(s.ideal, s.received),
        rew1: ms(s.received, rewritten),
        comm2: ms(rewritten, sent),
        proc: ms(sent, replied),
        comm3: 0.0,
        rew2: ms(replied, s.mte_ready),
        comm4: ms(s.mte_ready, s.requested),
        budget: next_mte.finite().map(|m| (m * grain).to_f64().unwrap_or(f64::INFINITY)),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WrapperConfig {
    #[serde(with = "crate::time::rational_serde")]
    pub grain: Rational,
    pub max_te: TimeInf,
    /// Stop once this much logical time has elapsed.
    pub horizon: Option<LogicalTime>,
    /// Added as the first argument of decoded interrupt messages.
    pub interrupt_target: Option<String>,
}

/// Default interrupt decoder: `name arg1 arg2 ...`.
pub fn decode_payload(payload: &str, target: Option<&str>) -> Vec<Message> {
    payload
        .split(';')
        .filter_map(|part| Message::parse_text(part, Direction::Internal))
        .map(|mut m| {
            if let Some(t) = target {
                if m.args.first().and_then(Value::as_id) != Some(t) {
                    m.args.insert(0, Value::id(t));
                }
            }
            m
        })
        .collect()
}

pub struct WrapperSession {
    machine: Arc<Machine>,
    adapters: Arc<AdapterTable>,
    cfg: WrapperConfig,
    state: WrapperState,
    system: TimedSystem,
    log: EventLog,
    clock: Option<Arc<dyn Clock>>,
    t0: WallNs,
    observer: Option<Arc<dyn Observer>>,
    client_runs: u64,
    in_adapter_runs: u64,
    requests_while_open: u64,
}

impl WrapperSession {
    pub fn new(machine: Arc<Machine>, adapters: Arc<AdapterTable>, cfg: WrapperConfig, initial: Configuration) -> Self {
        WrapperSession {
            machine,
            adapters,
            cfg,
            state: WrapperState::Start,
            system: TimedSystem::new(initial),
            log: EventLog::new(),
            clock: None,
            t0: 0,
            observer: None,
            client_runs: 0,
            in_adapter_runs: 0,
            requests_while_open: 0,
        }
    }

    /// Stamp records with this clock and measure rounds.
    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = Some(clock);
        self
    }

    pub fn with_observer(mut self, o: Arc<dyn Observer>) -> Self {
        self.observer = Some(o);
        self
    }

    pub fn state(&self) -> WrapperState {
        self.state
    }

    pub fn system(&self) -> &TimedSystem {
        &self.system
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    pub fn into_log(self) -> EventLog {
        self.log
    }

    /// Clock reading right after the handshake.
    pub fn t0(&self) -> WallNs {
        self.t0
    }

    pub fn client_runs(&self) -> u64 {
        self.client_runs
    }

    pub fn in_adapter_runs(&self) -> u64 {
        self.in_adapter_runs
    }

    pub fn requests_while_open(&self) -> u64 {
        self.requests_while_open
    }

    fn now(&self) -> WallNs {
        self.clock.as_ref().map_or(0, |c| c.now())
    }

    fn wall_ms(&self) -> f64 {
        match &self.clock {
            Some(c) => ns_to_ms(c.now().saturating_sub(self.t0)),
            None => (self.system.elapsed * self.cfg.grain).to_f64().unwrap_or(0.0),
        }
    }

    fn emit(&mut self, kind: EventKind, detail: serde_json::Value) {
        let r = Record {
            t: self.system.elapsed,
            wall_ms: self.wall_ms(),
            kind,
            detail,
        };
        if let Some(o) = &self.observer {
            o.record(&r);
        }
        self.log.push(r);
    }

    fn ideal_ns(&self) -> WallNs {
        let ms = (self.system.elapsed * self.cfg.grain).to_f64().unwrap_or(0.0);
        self.t0 + (ms * 1e6).round() as WallNs
    }

    /// Zero-time phase: rewrite, run clients, fold replies, until closed.
    fn settle(&mut self, transport: &mut dyn ClientTransport, stamps: &mut RoundStamps) -> Result<(), WrapperError> {
        loop {
            let z = self.machine.zero_step_traced(&self.system.config)?;
            for f in &z.firings {
                if let Some(note) = &f.note {
                    if let Some(kind) = EventKind::from_note(&note.kind) {
                        self.emit(kind, note.detail.clone());
                    }
                }
            }
            let (rest, out) = drain_outgoing(&z.config);
            self.system.config = rest;
            if stamps.rewritten.is_none() {
                stamps.rewritten = Some(self.now());
            }
            if out.is_empty() {
                return Ok(());
            }
            let mut replies = Vec::new();
            for msg in &out {
                let rule = self.adapters.out_rule(msg)?.clone();
                for action in &rule.actions {
                    let res = transport.run(action, self.system.elapsed);
                    self.client_runs += 1;
                    if stamps.sent.is_none() {
                        stamps.sent = res.sent_at.or_else(|| Some(self.now()));
                    }
                    let reply = match res.reply {
                        Ok(r) => r,
                        Err(e) => {
                            self.emit(
                                EventKind::ClientFailure,
                                json!({ "client": action.client_id, "port": action.port, "error": e }),
                            );
                            if rule.fatal {
                                return Err(WrapperError::ClientFatal(action.client_id.clone(), e));
                            }
                            String::new()
                        }
                    };
                    if let Some(kind) = rule.kind {
                        self.emit(
                            kind,
                            json!({
                                "message": msg.to_string(),
                                "client": action.client_id,
                                "send": action.send,
                                "reply": reply,
                            }),
                        );
                    }
                    replies.push(msg_received(&action.client_id, &reply));
                }
            }
            stamps.replied = Some(self.now());
            self.in_adapter_runs += replies.len() as u64;
            self.system.config = inject(&self.system.config, replies);
        }
    }

    /// Run until the horizon, an idle end, or an error.
    pub fn run(&mut self, ticker: &mut dyn Ticker, transport: &mut dyn ClientTransport) -> Result<(), WrapperError> {
        ticker.start(self.cfg.grain)?;
        self.t0 = self.now();
        self.state = WrapperState::Run;
        let mut stamps = RoundStamps {
            ideal: self.t0,
            received: self.t0,
            ..Default::default()
        };
        loop {
            self.settle(transport, &mut stamps)?;
            if let Some(o) = &self.observer {
                o.state(self.system.elapsed, &self.system.config);
            }
            let done = self.cfg.horizon.is_some_and(|h| self.system.elapsed >= h);
            let mut m = self.machine.mte(&self.system.config)?.min(self.cfg.max_te);
            if let Some(h) = self.cfg.horizon {
                m = m.min(h.saturating_sub(self.system.elapsed).into());
            }
            stamps.mte_ready = self.now();
            if done {
                break;
            }
            if m == TimeInf::Finite(LogicalTime::ZERO) {
                return Err(WrapperError::Livelock(self.system.elapsed));
            }
            if is_open(&self.system.config) {
                self.requests_while_open += 1;
            }
            self.state = WrapperState::Request;
            ticker.send_request(m)?;
            stamps.requested = self.now();
            if self.clock.is_some() {
                let timing = measure_round(&stamps, m, self.cfg.grain);
                let skew = ns_to_ms(stamps.received) - ns_to_ms(stamps.ideal);
                self.emit(
                    EventKind::RoundTiming,
                    json!({
                        "comm1": timing.comm1, "rew1": timing.rew1, "comm2": timing.comm2,
                        "proc": timing.proc, "comm3": timing.comm3, "rew2": timing.rew2,
                        "comm4": timing.comm4, "round": timing.round(), "jitter": timing.jitter(),
                        "budget": timing.budget, "skew": skew, "mte": m.to_string(),
                    }),
                );
                if timing.deadline_missed() {
                    self.emit(
                        EventKind::DeadlineMiss,
                        json!({ "round": timing.round(), "budget": timing.budget }),
                    );
                }
            }
            self.state = WrapperState::Wait;
            let Some(adv) = ticker.await_advance()? else {
                break;
            };
            if TimeInf::Finite(adv.elapsed) > m {
                return Err(WrapperError::Overshoot {
                    elapsed: adv.elapsed,
                    requested: m,
                });
            }
            stamps = RoundStamps::default();
            stamps.received = self.now();
            self.system.advance(&self.machine, adv.elapsed)?;
            stamps.ideal = self.ideal_ns();
            self.state = WrapperState::Run;
            if let Some(p) = adv.payload {
                let msgs = decode_payload(&p, self.cfg.interrupt_target.as_deref());
                let names: Vec<String> = msgs.iter().map(|m| m.to_string()).collect();
                self.emit(EventKind::Interrupt, json!({ "payload": p, "messages": names }));
                self.system.config = inject(&self.system.config, msgs);
            }
        }
        ticker.finish();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fabricated_stamps() {
        let ms = 1_000_000;
        let s = RoundStamps {
            ideal: 0,
            received: 2 * ms,
            rewritten: Some(5 * ms),
            sent: Some(6 * ms),
            replied: Some(7 * ms),
            mte_ready: 9 * ms,
            requested: 10 * ms,
        };
        let t = measure_round(&s, TimeInf::Finite(LogicalTime::from_int(1)), Rational::from_integer(10));
        assert_eq!(t.round(), 10.0);
        assert_eq!(t.jitter(), 6.0);
        assert!(!t.deadline_missed());
        let tight = measure_round(&s, TimeInf::Finite(LogicalTime::ratio(1, 2)), Rational::from_integer(10));
        assert!(tight.deadline_missed());
    }

    #[test]
    fn instantaneous_round_has_zero_jitter() {
        let s = RoundStamps::default();
        let t = measure_round(&s, TimeInf::Inf, Rational::from_integer(10));
        assert_eq!(t.jitter(), 0.0);
        assert_eq!(t.round(), 0.0);
        assert!(!t.deadline_missed());
    }

    #[test]
    fn payload_decoding() {
        let m = decode_payload("set-mode bolus", Some("pump-module"));
        assert_eq!(m[0].to_string(), "set-mode(pump-module, bolus)");
        let m = decode_payload("set-period pacing-module 50", Some("pacing-module"));
        assert_eq!(m[0].to_string(), "set-period(pacing-module, 50)");
        let m = decode_payload("set-period 75", None);
        assert_eq!(m[0].to_string(), "set-period(75)");
        assert!(decode_payload("", None).is_empty());
    }
}
