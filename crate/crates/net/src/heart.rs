//! Interrupt senders: the heart/doctor stimulus and console forwarding.

use std::io::Write;
use std::net::{SocketAddr, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use tickwrap_core::models::pacemaker::{bpm_to_period_units, SET_PERIOD};
use tickwrap_core::time::format_rational;
use tickwrap_core::Rational;

use crate::CLIENT_TIMEOUT;

/// Attempts made by [`send_interrupt_retry`] before giving up.
pub const MAX_ATTEMPTS: u32 = 6;

/// Write one payload line to the interrupt port.
pub fn send_interrupt(addr: SocketAddr, payload: &str) -> std::io::Result<()> {
    let mut s = TcpStream::connect_timeout(&addr, CLIENT_TIMEOUT)?;
    s.write_all(format!("{payload}\n").as_bytes())?;
    s.flush()
}

/// Like [`send_interrupt`], retrying with exponential backoff from 50 ms.
pub fn send_interrupt_retry(addr: SocketAddr, payload: &str) -> std::io::Result<()> {
    let mut delay = Duration::from_millis(50);
    let mut attempt = 1;
    loop {
        match send_interrupt(addr, payload) {
            Ok(()) => return Ok(()),
            Err(e) if attempt >= MAX_ATTEMPTS => return Err(e),
            Err(e) => {
                log::warn!("interrupt to {addr} failed (attempt {attempt}): {e}; retrying in {delay:?}");
                thread::sleep(delay);
                delay *= 2;
                attempt += 1;
            }
        }
    }
}

/// Payload asking the pacing module for the period matching `bpm`.
pub fn rate_payload(bpm: Rational, grain_ms: Rational) -> String {
    format!("{SET_PERIOD} {}", format_rational(&bpm_to_period_units(bpm, grain_ms)))
}

/// Scripted stress source: sends `payload` every `every` until stopped.
pub struct HeartStimulus {
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<u64>>,
}

impl HeartStimulus {
    pub fn scripted(addr: SocketAddr, payload: String, every: Duration) -> HeartStimulus {
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let handle = thread::spawn(move || {
            let mut sent = 0;
            while !flag.load(Ordering::SeqCst) {
                match send_interrupt_retry(addr, &payload) {
                    Ok(()) => sent += 1,
                    Err(e) => log::error!("heart stimulus gave up on {addr}: {e}"),
                }
                thread::sleep(every);
            }
            sent
        });
        HeartStimulus {
            stop,
            handle: Some(handle),
        }
    }

    /// Stop and return how many interrupts were delivered.
    pub fn stop(mut self) -> u64 {
        self.stop.store(true, Ordering::SeqCst);
        self.handle.take().map_or(0, |h| h.join().unwrap_or(0))
    }
}

impl Drop for HeartStimulus {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
    }
}
