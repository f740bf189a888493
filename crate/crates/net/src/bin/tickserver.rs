//! Timer service for executable models.

use std::sync::Arc;

use anyhow::Context;
use clap::Parser;

use tickwrap_core::clock::SystemClock;
use tickwrap_net::server::{describe, write_log_csv, TickServer};

#[derive(Parser)]
#[command(about = "Serve logical-time advancement to one model at a time")]
struct Args {
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, default_value_t = 4444)]
    port: u16,
    #[arg(long, default_value_t = 4445)]
    intr_port: u16,
    /// CSV log `wall_ms,event,detail`, rewritten after every session.
    #[arg(long)]
    log: Option<std::path::PathBuf>,
    /// Exit after the first session.
    #[arg(long)]
    once: bool,
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    let server = TickServer::bind(&args.host, args.port, args.intr_port)
        .with_context(|| format!("binding {}:{} / {}", args.host, args.port, args.intr_port))?;
    log::info!(
        "control on {}, interrupts on {}",
        server.control_addr()?,
        server.interrupt_addr()?
    );
    loop {
        let report = server.serve_one(Arc::new(SystemClock::new()))?;
        println!("{}", describe(&report));
        if let Some(path) = &args.log {
            write_log_csv(&report.log, path).with_context(|| format!("writing {}", path.display()))?;
        }
        if args.once {
            return Ok(());
        }
    }
}
