//! Device emulators without I/O: the pacemaker trace sink and the syringe
//! pump. Callers supply wall time in milliseconds.

use num_rational::Ratio;
use serde::Serialize;

use crate::time::parse_rational;

/// Exact milliseconds / millilitres.
pub type Exact = Ratio<i128>;

pub fn exact_ms(ms: u64) -> Exact {
    Exact::from_integer(i128::from(ms))
}

pub fn exact_to_f64(x: Exact) -> f64 {
    *x.numer() as f64 / *x.denom() as f64
}

pub const PACER_ACK: &str = "shocked\n";
pub const PUMP_ACK: &str = "OK\n";
pub const DEVICE_ERR: &str = "ERR\n";

/// Pacemaker simulator: records a pace per accepted command.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PaceTrace {
    instants: Vec<f64>,
    rejected: usize,
}

impl PaceTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn handle(&mut self, payload: &str, now_ms: f64) -> &'static str {
        match payload.trim() {
            "shock" | "SetLeadVoltage 5V" => {
                // keep instants strictly increasing
                let t = match self.instants.last() {
                    Some(&last) if now_ms <= last => last + f64::EPSILON * last.abs().max(1.0),
                    _ => now_ms,
                };
                self.instants.push(t);
                PACER_ACK
            }
            _ => {
                self.rejected += 1;
                DEVICE_ERR
            }
        }
    }

    pub fn instants(&self) -> &[f64] {
        &self.instants
    }

    pub fn rejected(&self) -> usize {
        self.rejected
    }

    pub fn intervals(&self) -> Vec<f64> {
        self.instants.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("wall_ms\n");
        for t in &self.instants {
            s.push_str(&format!("{t:.3}\n"));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum PumpCommand {
    Stop,
    Rate(#[serde(serialize_with = "ser_exact")] Exact),
    Run,
}

fn ser_exact<S: serde::Serializer>(x: &Exact, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(exact_to_f64(*x))
}

impl PumpCommand {
    /// `STP`, `RUN`, `RAT<n>` or `RAT <n>` with `n` a positive decimal.
    pub fn parse(text: &str) -> Option<PumpCommand> {
        let t = text.trim();
        match t {
            "STP" => return Some(PumpCommand::Stop),
            "RUN" => return Some(PumpCommand::Run),
            _ => {}
        }
        let arg = t.strip_prefix("RAT")?.trim_start();
        if arg.is_empty() || arg.starts_with(['+', '-']) || arg.contains('/') {
            return None;
        }
        let r = parse_rational(arg).ok()?;
        if *r.numer() <= 0 {
            return None;
        }
        Some(PumpCommand::Rate(Exact::new(i128::from(*r.numer()), i128::from(*r.denom()))))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PumpSample {
    pub wall_ms: f64,
    pub volume_ml: f64,
    pub rate: f64,
    pub running: bool,
}

/// Syringe pump with exact volume integration (rate in ml/hr).
#[derive(Debug, Clone, PartialEq)]
pub struct PumpEmulator {
    rate: Exact,
    running: bool,
    volume: Exact,
    last_ms: Exact,
    start_ms: Exact,
    command_log: Vec<(Exact, String)>,
    samples: Vec<PumpSample>,
}

const MS_PER_HOUR: i128 = 3_600_000;

impl PumpEmulator {
    pub fn new(start_ms: Exact) -> Self {
        let mut p = PumpEmulator {
            rate: Exact::from_integer(0),
            running: false,
            volume: Exact::from_integer(0),
            last_ms: start_ms,
            start_ms,
            command_log: Vec::new(),
            samples: Vec::new(),
        };
        p.sample();
        p
    }

    fn integrate(&mut self, now_ms: Exact) {
        if now_ms > self.last_ms {
            if self.running {
                self.volume += self.rate * (now_ms - self.last_ms) / Exact::from_integer(MS_PER_HOUR);
            }
            self.last_ms = now_ms;
        }
    }

    fn sample(&mut self) {
        self.samples.push(PumpSample {
            wall_ms: exact_to_f64(self.last_ms),
            volume_ml: exact_to_f64(self.volume),
            rate: exact_to_f64(self.rate),
            running: self.running,
        });
    }

    pub fn handle(&mut self, text: &str, now_ms: Exact) -> &'static str {
        self.integrate(now_ms);
        let Some(cmd) = PumpCommand::parse(text) else {
            return DEVICE_ERR;
        };
        self.command_log.push((self.last_ms, text.trim().to_string()));
        match cmd {
            PumpCommand::Stop => self.running = false,
            PumpCommand::Run => self.running = true,
            PumpCommand::Rate(r) => self.rate = r,
        }
        self.sample();
        PUMP_ACK
    }

    pub fn volume_at(&mut self, now_ms: Exact) -> Exact {
        self.integrate(now_ms);
        self.volume
    }

    pub fn rate(&self) -> Exact {
        self.rate
    }

    pub fn running(&self) -> bool {
        self.running
    }

    pub fn command_log(&self) -> &[(Exact, String)] {
        &self.command_log
    }

    /// State right after each accepted command.
    pub fn samples(&self) -> &[PumpSample] {
        &self.samples
    }

    /// Volume breakpoints `(ms, ml)` at every state change, plus `end_ms`.
    pub fn curve(&self, end_ms: Exact) -> Vec<(Exact, Exact)> {
        let mut replay = PumpEmulator::new(self.start_ms);
        let mut pts = vec![(replay.last_ms, replay.volume)];
        for (t, cmd) in &self.command_log {
            replay.handle(cmd, *t);
            pts.push((*t, replay.volume));
        }
        let v = replay.volume_at(end_ms);
        pts.push((end_ms.max(replay.last_ms), v));
        pts
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("wall_ms,volume_ml,rate,running\n");
        for p in &self.samples {
            s.push_str(&format!("{:.3},{:.6},{},{}\n", p.wall_ms, p.volume_ml, p.rate, p.running));
        }
        s
    }
}

/// Scale readout quantized to 0.1 oz (29.5735 ml per oz).
pub fn quantize_oz(volume_ml: f64) -> f64 {
    let oz = volume_ml / 29.5735;
    (oz * 10.0).floor() / 10.0
}
