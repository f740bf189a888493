//! TCP servers for the device emulators. Connections are handled one at a
//! time: read one payload, answer, close.

use std::io::{self, BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::AtomicBool;
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};

use tickwrap_core::clock::{ns_to_ms, Clock, WallNs, NS_PER_MS};
use tickwrap_core::devices::{Exact, PaceTrace, PumpEmulator};

use crate::{accept_until, wake, CLIENT_TIMEOUT};

pub trait Device: Send {
    fn handle(&mut self, payload: &str, now: WallNs) -> String;
}

impl Device for PaceTrace {
    fn handle(&mut self, payload: &str, now: WallNs) -> String {
        PaceTrace::handle(self, payload, ns_to_ms(now)).to_string()
    }
}

pub fn exact_ms_of(ns: WallNs) -> Exact {
    Exact::new(i128::from(ns), i128::from(NS_PER_MS))
}

impl Device for PumpEmulator {
    fn handle(&mut self, payload: &str, now: WallNs) -> String {
        PumpEmulator::handle(self, payload, exact_ms_of(now)).to_string()
    }
}

pub struct DeviceServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl DeviceServer {
    pub fn spawn<D: Device + 'static>(
        listener: TcpListener,
        device: Arc<Mutex<D>>,
        clock: Arc<dyn Clock>,
    ) -> io::Result<DeviceServer> {
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let handle = thread::spawn(move || {
            let served = accept_until(&listener, &flag, |stream, peer| {
                if let Err(e) = serve_connection(stream, device.as_ref(), clock.as_ref()) {
                    log::warn!("device {addr}: connection from {peer}: {e}");
                }
            });
            if let Err(e) = served {
                log::error!("device {addr}: {e}");
            }
        });
        Ok(DeviceServer {
            addr,
            stop,
            handle: Some(handle),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn stop(&mut self) {
        if let Some(h) = self.handle.take() {
            wake(&self.stop, self.addr);
            let _ = h.join();
        }
    }
}

impl Drop for DeviceServer {
    fn drop(&mut self) {
        self.stop();
    }
}

fn serve_connection<D: Device>(mut stream: TcpStream, device: &Mutex<D>, clock: &dyn Clock) -> io::Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    stream.set_read_timeout(Some(CLIENT_TIMEOUT))?;
    let mut line = String::new();
    BufReader::new(&stream).read_line(&mut line)?;
    let payload = line.trim_end_matches(['\r', '\n']);
    let reply = device.lock().expect("device state").handle(payload, clock.now());
    if reply.trim() == "ERR" {
        log::warn!("rejected payload `{payload}`");
    }
    stream.write_all(reply.as_bytes())?;
    stream.flush()
}
