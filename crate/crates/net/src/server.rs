//! Tick server: drives a [`TickSession`] over TCP, with a separate listener
//! for interrupts (one payload per line).

use std::io::{self, BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::Path;
use std::sync::atomic::AtomicBool;
use std::sync::mpsc::{channel, Sender};
use std::sync::Arc;
use std::thread::{self, JoinHandle};

use tickwrap_core::clock::{ns_to_ms, Clock, ServerEvent, WaitFor};
use tickwrap_core::tick::{TickLogEntry, TickSession};
use tickwrap_core::{LogicalTime, Rational};

use crate::{accept_until, wake};

/// Summary of one served model connection.
#[derive(Debug, Clone)]
pub struct ServerReport {
    pub grain: Rational,
    pub rounds: u64,
    pub advanced: LogicalTime,
    pub overruns: u64,
    pub dropped: u64,
    pub log: Vec<TickLogEntry>,
}

impl ServerReport {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> io::Result<()> {
        write_log_csv(&self.log, path)
    }
}

/// `wall_ms,event,detail`, one row per session event.
pub fn write_log_csv(log: &[TickLogEntry], path: impl AsRef<Path>) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["wall_ms", "event", "detail"])?;
    for e in log {
        w.write_record(e.csv_row())?;
    }
    w.flush()
}

pub struct TickServer {
    control: TcpListener,
    interrupts: TcpListener,
}

impl TickServer {
    pub fn bind(host: &str, port: u16, intr_port: u16) -> io::Result<TickServer> {
        Ok(TickServer {
            control: TcpListener::bind((host, port))?,
            interrupts: TcpListener::bind((host, intr_port))?,
        })
    }

    pub fn control_addr(&self) -> io::Result<SocketAddr> {
        self.control.local_addr()
    }

    pub fn interrupt_addr(&self) -> io::Result<SocketAddr> {
        self.interrupts.local_addr()
    }

    /// Accept one model connection and serve it until it closes.
    pub fn serve_one(&self, clock: Arc<dyn Clock>) -> io::Result<ServerReport> {
        let (stream, peer) = self.control.accept()?;
        stream.set_nodelay(true)?;
        log::info!("model connected from {peer}");
        let (tx, rx) = channel();
        let stop = Arc::new(AtomicBool::new(false));
        let intr = spawn_interrupt_listener(self.interrupts.try_clone()?, tx.clone(), stop.clone())?;
        let reader = spawn_line_reader(stream.try_clone()?, tx);

        let mut out = stream;
        let mut session = TickSession::new();
        let mut idle = false;
        let result = (|| -> io::Result<()> {
            while let Some(wait) = session.wait_for() {
                if wait == WaitFor::Forever && !idle {
                    session.idle_warning(clock.now());
                    log::warn!("model requested INF; idle until an interrupt arrives");
                }
                idle = wait == WaitFor::Forever;
                let ev = clock.wait_event(&rx, wait);
                let now = clock.now();
                let replies = match ev {
                    Some(ev) => session.on_event(ev, now),
                    None => session.on_timeout(now),
                };
                for r in replies {
                    out.write_all(r.as_bytes())?;
                }
                out.flush()?;
            }
            Ok(())
        })();

        wake(&stop, self.interrupts.local_addr()?);
        let _ = out.shutdown(std::net::Shutdown::Both);
        let _ = intr.join();
        let _ = reader.join();
        if session.overruns() > 0 {
            log::warn!("{} overrun(s): deadline had passed when the request arrived", session.overruns());
        }
        result?;
        let log = session.take_log();
        Ok(ServerReport {
            grain: session.grain(),
            rounds: session.rounds(),
            advanced: session.advanced(),
            overruns: session.overruns(),
            dropped: session.dropped(),
            log,
        })
    }
}

fn spawn_line_reader(stream: TcpStream, tx: Sender<ServerEvent>) -> JoinHandle<()> {
    thread::spawn(move || {
        let mut r = BufReader::new(stream);
        let mut line = String::new();
        loop {
            line.clear();
            match r.read_line(&mut line) {
                Ok(0) | Err(_) => {
                    let _ = tx.send(ServerEvent::Closed);
                    return;
                }
                Ok(_) => {
                    if tx.send(ServerEvent::Line(line.trim_end().to_string())).is_err() {
                        return;
                    }
                }
            }
        }
    })
}

fn spawn_interrupt_listener(
    listener: TcpListener,
    tx: Sender<ServerEvent>,
    stop: Arc<AtomicBool>,
) -> io::Result<JoinHandle<()>> {
    Ok(thread::spawn(move || {
        let served = accept_until(&listener, &stop, |stream, peer| {
            let tx = tx.clone();
            thread::spawn(move || read_interrupts(stream, peer, tx));
        });
        if let Err(e) = served {
            log::error!("interrupt listener: {e}");
        }
    }))
}

fn read_interrupts(stream: TcpStream, peer: SocketAddr, tx: Sender<ServerEvent>) {
    for line in BufReader::new(stream).lines() {
        let Ok(line) = line else { return };
        let payload = line.trim_end().to_string();
        if payload.is_empty() {
            continue;
        }
        let ev = ServerEvent::Interrupt {
            source: peer.to_string(),
            payload,
        };
        if tx.send(ev).is_err() {
            return;
        }
    }
}

/// Human-readable session line for CLI output.
pub fn describe(report: &ServerReport) -> String {
    let last = report.log.last().map_or(0.0, |e| ns_to_ms(e.wall_ns));
    format!(
        "grain {} ms, {} rounds, {} units advanced, {} overruns, {} dropped interrupts, {:.1} ms",
        report.grain, report.rounds, report.advanced, report.overruns, report.dropped, last
    )
}
