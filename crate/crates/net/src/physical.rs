//! Physical mode in one process: tick server, device servers and wrapper on
//! their own threads, talking over loopback TCP under the system clock.

use std::collections::BTreeMap;
use std::net::{SocketAddr, TcpListener};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use thiserror::Error;

use tickwrap_core::clock::{Clock, SystemClock, WallNs};
use tickwrap_core::devices::{PaceTrace, PumpEmulator};
use tickwrap_core::eventlog::EventLog;
use tickwrap_core::scenario::{DeviceKind, ScenarioConfig, ScenarioError};
use tickwrap_core::wrapper::{Observer, Ticker, WrapperError};
use tickwrap_core::{LogicalTime, TimedSystem};

use crate::client::TcpClients;
use crate::device::{exact_ms_of, DeviceServer};
use crate::server::{ServerReport, TickServer};
use crate::ticker::TcpTicker;

#[derive(Debug, Error)]
pub enum PhysicalError {
    #[error("startup: {0}")]
    Startup(#[from] std::io::Error),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Wrapper(#[from] WrapperError),
    #[error("tick server thread failed: {0}")]
    Server(String),
}

#[derive(Default)]
pub struct PhysicalOptions {
    /// Override the scenario's logical horizon.
    pub horizon: Option<LogicalTime>,
    /// Bind every server on a free port instead of the configured one.
    pub ephemeral_ports: bool,
    pub observer: Option<Arc<dyn Observer>>,
    /// Shared wall clock; a fresh one when absent.
    pub clock: Option<Arc<SystemClock>>,
}

#[derive(Clone, Default)]
pub struct DeviceHandles {
    pub pacer: Option<Arc<Mutex<PaceTrace>>>,
    pub pump: Option<Arc<Mutex<PumpEmulator>>>,
}

pub struct PhysicalRun {
    pub log: EventLog,
    pub server: ServerReport,
    pub devices: DeviceHandles,
    pub system: TimedSystem,
    pub clock: Arc<SystemClock>,
    /// Wrapper clock reading at the handshake; log wall times count from it.
    pub t0: WallNs,
    pub error: Option<WrapperError>,
}

/// Started servers, waiting for the wrapper.
pub struct PhysicalRig {
    cfg: ScenarioConfig,
    opts_observer: Option<Arc<dyn Observer>>,
    clock: Arc<SystemClock>,
    control: SocketAddr,
    interrupt: SocketAddr,
    server: JoinHandle<std::io::Result<ServerReport>>,
    device_servers: Vec<DeviceServer>,
    devices: DeviceHandles,
}

impl PhysicalRig {
    pub fn start(cfg: &ScenarioConfig, opts: PhysicalOptions) -> Result<PhysicalRig, PhysicalError> {
        cfg.validate()?;
        let mut cfg = cfg.clone();
        if let Some(h) = opts.horizon {
            cfg.horizon = h;
        }
        let clock = opts.clock.clone().unwrap_or_default();
        let any = |p: u16| if opts.ephemeral_ports { 0 } else { p };

        let server = TickServer::bind(&cfg.server.host, any(cfg.server.port), any(cfg.server.intr_port))?;
        let control = server.control_addr()?;
        let interrupt = server.interrupt_addr()?;

        let mut ports = BTreeMap::new();
        ports.insert(cfg.server.port, control.port());
        ports.insert(cfg.server.intr_port, interrupt.port());
        let mut device_servers = Vec::new();
        let mut devices = DeviceHandles::default();
        for ep in &cfg.devices {
            let listener = TcpListener::bind((ep.host.as_str(), any(ep.port)))?;
            ports.insert(ep.port, listener.local_addr()?.port());
            let c: Arc<dyn Clock> = clock.clone();
            let srv = match ep.kind {
                DeviceKind::Pacer => {
                    let d = Arc::new(Mutex::new(PaceTrace::new()));
                    devices.pacer = Some(d.clone());
                    DeviceServer::spawn(listener, d, c)?
                }
                DeviceKind::Pump => {
                    let d = Arc::new(Mutex::new(PumpEmulator::new(exact_ms_of(clock.now()))));
                    devices.pump = Some(d.clone());
                    DeviceServer::spawn(listener, d, c)?
                }
            };
            device_servers.push(srv);
        }
        cfg.remap_ports(|p| ports.get(&p).copied().unwrap_or(p));

        let server_clock: Arc<dyn Clock> = clock.clone();
        let server = thread::Builder::new()
            .name("tick-server".into())
            .spawn(move || server.serve_one(server_clock))?;

        Ok(PhysicalRig {
            cfg,
            opts_observer: opts.observer,
            clock,
            control,
            interrupt,
            server,
            device_servers,
            devices,
        })
    }

    pub fn interrupt_addr(&self) -> SocketAddr {
        self.interrupt
    }

    pub fn control_addr(&self) -> SocketAddr {
        self.control
    }

    pub fn devices(&self) -> &DeviceHandles {
        &self.devices
    }

    /// The scenario as actually wired (ports remapped, horizon applied).
    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    /// Run the wrapper to completion and shut everything down. A wrapper
    /// error is returned inside the run so the partial log survives.
    pub fn run(mut self) -> Result<PhysicalRun, PhysicalError> {
        let clock: Arc<dyn Clock> = self.clock.clone();
        let mut session = self.cfg.session().with_clock(clock.clone());
        if let Some(o) = self.opts_observer.take() {
            session = session.with_observer(o);
        }
        let mut ticker = TcpTicker::connect_retry(self.control, Duration::from_secs(5))?;
        let mut clients = TcpClients::new(clock);
        let outcome = session.run(&mut ticker, &mut clients);
        if outcome.is_err() {
            ticker.finish();
        }
        drop(ticker);
        let server = self
            .server
            .join()
            .map_err(|_| PhysicalError::Server("panicked".into()))?
            .map_err(|e| PhysicalError::Server(e.to_string()))?;
        for d in &mut self.device_servers {
            d.stop();
        }
        let system = session.system().clone();
        let t0 = session.t0();
        Ok(PhysicalRun {
            t0,
            log: session.into_log(),
            server,
            devices: self.devices,
            system,
            clock: self.clock,
            error: outcome.err(),
        })
    }
}

pub fn run_physical(cfg: &ScenarioConfig, opts: PhysicalOptions) -> Result<PhysicalRun, PhysicalError> {
    PhysicalRig::start(cfg, opts)?.run()
}
