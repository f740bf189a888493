//! Device emulators for a scenario's endpoints.

use std::net::TcpListener;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use anyhow::Context;
use clap::Parser;

use tickwrap_core::clock::{Clock, SystemClock};
use tickwrap_core::devices::{PaceTrace, PumpEmulator};
use tickwrap_core::scenario::{DeviceKind, ScenarioConfig};
use tickwrap_net::device::{exact_ms_of, DeviceServer};

#[derive(Parser)]
#[command(about = "Run the pacer and pump emulators listed in a scenario")]
struct Args {
    #[arg(long)]
    scenario: PathBuf,
    /// Stop after this many seconds and write traces; runs forever otherwise.
    #[arg(long)]
    seconds: Option<u64>,
    /// Directory for `pacer.csv` / `pump.csv` on exit.
    #[arg(long)]
    trace_dir: Option<PathBuf>,
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    let cfg = ScenarioConfig::load(&args.scenario).with_context(|| format!("loading {}", args.scenario.display()))?;
    let clock = Arc::new(SystemClock::new());
    let mut servers = Vec::new();
    let mut pacers = Vec::new();
    let mut pumps = Vec::new();
    for ep in &cfg.devices {
        let listener = TcpListener::bind((ep.host.as_str(), ep.port)).with_context(|| format!("binding {}:{}", ep.host, ep.port))?;
        let c: Arc<dyn Clock> = clock.clone();
        let srv = match ep.kind {
            DeviceKind::Pacer => {
                let d = Arc::new(Mutex::new(PaceTrace::new()));
                pacers.push(d.clone());
                DeviceServer::spawn(listener, d, c)?
            }
            DeviceKind::Pump => {
                let d = Arc::new(Mutex::new(PumpEmulator::new(exact_ms_of(clock.now()))));
                pumps.push(d.clone());
                DeviceServer::spawn(listener, d, c)?
            }
        };
        log::info!("{:?} on {}", ep.kind, srv.addr());
        servers.push(srv);
    }
    match args.seconds {
        Some(s) => std::thread::sleep(Duration::from_secs(s)),
        None => loop {
            std::thread::park();
        },
    }
    for s in &mut servers {
        s.stop();
    }
    if let Some(dir) = &args.trace_dir {
        std::fs::create_dir_all(dir)?;
        if let Some(p) = pacers.first() {
            std::fs::write(dir.join("pacer.csv"), p.lock().expect("pacer").to_csv())?;
        }
        if let Some(p) = pumps.first() {
            std::fs::write(dir.join("pump.csv"), p.lock().expect("pump").to_csv())?;
        }
    }
    Ok(())
}
