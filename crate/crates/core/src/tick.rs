//! Tick-server protocol: framing and the per-connection session state
//! machine, independent of sockets.
//!
//! ```text
//! model  -> server   <grain>\r\n            server -> model  GO\r\n
//! model  -> server   <mte>\r\n | INF\r\n    server -> model  <units>[|<payload>]\r\n
//! model  -> server   BYE\r\n
//! ```

use std::collections::VecDeque;

use num_rational::Ratio;
use num_traits::{ToPrimitive, Zero};
use thiserror::Error;

use crate::clock::{ns_to_ms, ServerEvent, WaitFor, WallNs, NS_PER_MS};
use crate::time::{parse_rational, LogicalTime, Rational, TimeInf};

pub const GO: &str = "GO\r\n";
pub const ERR_GRAIN: &str = "ERR grain\r\n";
pub const ERR_MTE: &str = "ERR mte\r\n";
pub const BYE: &str = "BYE";
pub const INTERRUPT_QUEUE_CAP: usize = 1024;
/// Interrupt elapsed time is truncated to multiples of 1/1000 unit.
pub const ELAPSED_DENOM: i64 = 1000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TickError {
    #[error("malformed grain `{0}`")]
    Grain(String),
    #[error("malformed advancement `{0}`")]
    Advance(String),
}

pub fn parse_grain(line: &str) -> Result<Rational, TickError> {
    let t = line.trim();
    match parse_rational(t) {
        Ok(g) if g > Rational::zero() => Ok(g),
        _ => Err(TickError::Grain(t.to_string())),
    }
}

pub fn escape_payload(p: &str) -> String {
    let mut out = String::with_capacity(p.len());
    for c in p.chars() {
        match c {
            '%' => out.push_str("%25"),
            '\r' => out.push_str("%0D"),
            '\n' => out.push_str("%0A"),
            '|' => out.push_str("%7C"),
            c => out.push(c),
        }
    }
    out
}

pub fn unescape_payload(p: &str) -> String {
    let mut out = String::with_capacity(p.len());
    let mut rest = p;
    while let Some(i) = rest.find('%') {
        out.push_str(&rest[..i]);
        let code = rest.get(i + 1..i + 3);
        let c = match code {
            Some("25") => Some('%'),
            Some("0D") | Some("0d") => Some('\r'),
            Some("0A") | Some("0a") => Some('\n'),
            Some("7C") | Some("7c") => Some('|'),
            _ => None,
        };
        match c {
            Some(c) => {
                out.push(c);
                rest = &rest[i + 3..];
            }
            None => {
                out.push('%');
                rest = &rest[i + 1..];
            }
        }
    }
    out.push_str(rest);
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdvanceMessage {
    pub elapsed: LogicalTime,
    pub payload: Option<String>,
}

impl AdvanceMessage {
    pub fn new(elapsed: LogicalTime) -> Self {
        AdvanceMessage { elapsed, payload: None }
    }

    pub fn with_payload(elapsed: LogicalTime, payload: &str) -> Self {
        AdvanceMessage {
            elapsed,
            payload: (!payload.is_empty()).then(|| payload.to_string()),
        }
    }

    pub fn encode(&self) -> String {
        match &self.payload {
            Some(p) => format!("{}|{}\r\n", self.elapsed, escape_payload(p)),
            None => format!("{}\r\n", self.elapsed),
        }
    }

    pub fn decode(line: &str) -> Result<AdvanceMessage, TickError> {
        let l = line.trim_end_matches(['\r', '\n']);
        let (units, payload) = match l.split_once('|') {
            Some((u, p)) => (u, Some(unescape_payload(p))),
            None => (l, None),
        };
        let elapsed = units.trim().parse().map_err(|_| TickError::Advance(l.to_string()))?;
        Ok(AdvanceMessage { elapsed, payload })
    }
}

type ExactNs = Ratio<i128>;

fn ceil_ns(x: ExactNs) -> WallNs {
    x.ceil().to_integer().max(0) as WallNs
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TickLogEntry {
    pub wall_ns: WallNs,
    pub event: &'static str,
    pub detail: String,
}

impl TickLogEntry {
    pub fn csv_row(&self) -> [String; 3] {
        [format!("{:.3}", ns_to_ms(self.wall_ns)), self.event.to_string(), self.detail.clone()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Handshake,
    MidRound,
    Waiting { mte: TimeInf },
    Closed,
}

/// One model connection. Deadlines are set from the nominal instant of the
/// previous advancement, so scheduling error does not accumulate.
#[derive(Debug, Clone)]
pub struct TickSession {
    phase: Phase,
    grain: Rational,
    ns_per_unit: ExactNs,
    t0: WallNs,
    base: ExactNs,
    deadline: Option<WallNs>,
    queue: VecDeque<(String, String)>,
    overruns: u64,
    dropped: u64,
    advanced: LogicalTime,
    rounds: u64,
    log: Vec<TickLogEntry>,
}

impl Default for TickSession {
    fn default() -> Self {
        Self::new()
    }
}

impl TickSession {
    pub fn new() -> Self {
        TickSession {
            phase: Phase::Handshake,
            grain: Rational::zero(),
            ns_per_unit: ExactNs::zero(),
            t0: 0,
            base: ExactNs::zero(),
            deadline: None,
            queue: VecDeque::new(),
            overruns: 0,
            dropped: 0,
            advanced: LogicalTime::ZERO,
            rounds: 0,
            log: Vec::new(),
        }
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn grain(&self) -> Rational {
        self.grain
    }

    pub fn t0(&self) -> WallNs {
        self.t0
    }

    pub fn overruns(&self) -> u64 {
        self.overruns
    }

    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    pub fn advanced(&self) -> LogicalTime {
        self.advanced
    }

    pub fn rounds(&self) -> u64 {
        self.rounds
    }

    pub fn queued(&self) -> usize {
        self.queue.len()
    }

    pub fn deadline(&self) -> Option<WallNs> {
        self.deadline
    }

    /// Nominal wall instant of the last advancement.
    pub fn base_ns(&self) -> f64 {
        self.base.to_f64().unwrap_or(0.0)
    }

    pub fn log(&self) -> &[TickLogEntry] {
        &self.log
    }

    pub fn take_log(&mut self) -> Vec<TickLogEntry> {
        std::mem::take(&mut self.log)
    }

    pub fn is_closed(&self) -> bool {
        self.phase == Phase::Closed
    }

    pub fn wait_for(&self) -> Option<WaitFor> {
        match self.phase {
            Phase::Closed => None,
            Phase::Handshake | Phase::MidRound => Some(WaitFor::Line),
            Phase::Waiting { .. } => Some(match self.deadline {
                Some(d) => WaitFor::Until(d),
                None => WaitFor::Forever,
            }),
        }
    }

    fn note(&mut self, now: WallNs, event: &'static str, detail: impl Into<String>) {
        self.log.push(TickLogEntry {
            wall_ns: now,
            event,
            detail: detail.into(),
        });
    }

    fn close(&mut self, now: WallNs, why: &str) {
        self.phase = Phase::Closed;
        self.deadline = None;
        self.note(now, "close", why);
    }

    fn units_since_base(&self, now: WallNs) -> LogicalTime {
        let since = ExactNs::from_integer(i128::from(now)) - self.base;
        if since <= ExactNs::zero() {
            return LogicalTime::ZERO;
        }
        let units = (since / self.ns_per_unit * ExactNs::from_integer(i128::from(ELAPSED_DENOM))).floor();
        let n = units.to_integer().min(i128::from(i64::MAX)) as i64;
        LogicalTime::new(Rational::new(n, ELAPSED_DENOM)).unwrap_or(LogicalTime::ZERO)
    }

    fn send_advance(&mut self, now: WallNs, msg: AdvanceMessage) -> Vec<String> {
        let e = msg.elapsed.value();
        self.base += ExactNs::new(i128::from(*e.numer()), i128::from(*e.denom())) * self.ns_per_unit;
        self.advanced += msg.elapsed;
        self.rounds += 1;
        self.phase = Phase::MidRound;
        self.deadline = None;
        let text = msg.encode();
        self.note(now, "advance", text.trim_end());
        vec![text]
    }

    fn deliver_interrupt(&mut self, now: WallNs, cap: TimeInf, source: &str, payload: &str) -> Vec<String> {
        let mut e = self.units_since_base(now);
        if let TimeInf::Finite(m) = cap {
            e = e.min(m);
        }
        self.note(now, "deliver", format!("{source}|{payload}"));
        self.send_advance(now, AdvanceMessage::with_payload(e, payload))
    }

    pub fn on_event(&mut self, ev: ServerEvent, now: WallNs) -> Vec<String> {
        match ev {
            ServerEvent::Line(l) => self.on_line(&l, now),
            ServerEvent::Interrupt { source, payload } => self.on_interrupt(&source, &payload, now),
            ServerEvent::Closed => {
                if self.phase != Phase::Closed {
                    self.close(now, "peer closed");
                }
                Vec::new()
            }
        }
    }

    pub fn on_line(&mut self, line: &str, now: WallNs) -> Vec<String> {
        let line = line.trim();
        match self.phase {
            Phase::Closed => Vec::new(),
            Phase::Handshake => match parse_grain(line) {
                Ok(g) => {
                    self.grain = g;
                    self.ns_per_unit = ExactNs::new(i128::from(*g.numer()), i128::from(*g.denom()))
                        * ExactNs::from_integer(i128::from(NS_PER_MS));
                    self.t0 = now;
                    self.base = ExactNs::from_integer(i128::from(now));
                    self.phase = Phase::MidRound;
                    self.note(now, "go", line);
                    vec![GO.to_string()]
                }
                Err(_) => {
                    self.close(now, format!("bad grain `{line}`").as_str());
                    vec![ERR_GRAIN.to_string()]
                }
            },
            Phase::Waiting { .. } => {
                self.close(now, format!("unexpected line `{line}` while waiting").as_str());
                vec![ERR_MTE.to_string()]
            }
            Phase::MidRound => {
                if line == BYE {
                    self.close(now, "bye");
                    return Vec::new();
                }
                let Ok(mte) = line.parse::<TimeInf>() else {
                    self.close(now, format!("bad mte `{line}`").as_str());
                    return vec![ERR_MTE.to_string()];
                };
                self.note(now, "request", line);
                if let Some((source, payload)) = self.queue.pop_front() {
                    return self.deliver_interrupt(now, mte, &source, &payload);
                }
                match mte {
                    TimeInf::Inf => {
                        self.phase = Phase::Waiting { mte };
                        self.deadline = None;
                        Vec::new()
                    }
                    TimeInf::Finite(m) if m.is_zero() => self.send_advance(now, AdvanceMessage::new(m)),
                    TimeInf::Finite(m) => {
                        let v = m.value();
                        let exact = self.base
                            + ExactNs::new(i128::from(*v.numer()), i128::from(*v.denom())) * self.ns_per_unit;
                        let deadline = ceil_ns(exact);
                        if deadline <= now {
                            self.overruns += 1;
                            let late = now - deadline;
                            self.note(now, "overrun", format!("{:.3}", ns_to_ms(late)));
                            return self.send_advance(now, AdvanceMessage::new(m));
                        }
                        self.phase = Phase::Waiting { mte };
                        self.deadline = Some(deadline);
                        Vec::new()
                    }
                }
            }
        }
    }

    pub fn on_interrupt(&mut self, source: &str, payload: &str, now: WallNs) -> Vec<String> {
        match self.phase {
            Phase::Closed => Vec::new(),
            Phase::Waiting { mte } => {
                self.note(now, "interrupt", format!("{source}|{payload}"));
                self.deliver_interrupt(now, mte, source, payload)
            }
            Phase::Handshake | Phase::MidRound => {
                if self.queue.len() >= INTERRUPT_QUEUE_CAP {
                    if let Some((s, p)) = self.queue.pop_front() {
                        self.dropped += 1;
                        self.note(now, "drop", format!("{s}|{p}"));
                    }
                }
                self.queue.push_back((source.to_string(), payload.to_string()));
                self.note(now, "queue", format!("{source}|{payload}"));
                Vec::new()
            }
        }
    }

    /// Wake-up at or after the deadline.
    pub fn on_timeout(&mut self, now: WallNs) -> Vec<String> {
        match (self.phase, self.deadline) {
            (Phase::Waiting { mte: TimeInf::Finite(m) }, Some(d)) if now >= d => {
                self.send_advance(now, AdvanceMessage::new(m))
            }
            _ => Vec::new(),
        }
    }

    /// Log a warning while idle on an INF wait.
    pub fn idle_warning(&mut self, now: WallNs) {
        self.note(now, "idle", "waiting on INF with no interrupt");
    }
}
