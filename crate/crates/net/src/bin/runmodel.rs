//! Execute a scenario's model, logically or against live servers.

use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use anyhow::Context;
use clap::{Parser, ValueEnum};

use tickwrap_core::clock::{Clock, SystemClock};
use tickwrap_core::eventlog::EventLog;
use tickwrap_core::jitter::jitter_report;
use tickwrap_core::safety::check_safety;
use tickwrap_core::scenario::{run_logical, ScenarioConfig};
use tickwrap_core::wrapper::Ticker;
use tickwrap_core::LogicalTime;
use tickwrap_net::client::TcpClients;
use tickwrap_net::ticker::TcpTicker;

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Logical,
    Physical,
}

#[derive(Parser)]
#[command(about = "Run a scenario model and write its event log as NDJSON")]
struct Args {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, value_enum, default_value = "logical")]
    mode: Mode,
    #[arg(long)]
    log: Option<PathBuf>,
    /// Override the scenario horizon (model units).
    #[arg(long)]
    horizon: Option<LogicalTime>,
}

fn physical(cfg: &ScenarioConfig) -> anyhow::Result<EventLog> {
    let clock: Arc<dyn Clock> = Arc::new(SystemClock::new());
    let addr = (cfg.server.host.clone(), cfg.server.port);
    let mut ticker = TcpTicker::connect_retry(addr, Duration::from_secs(5)).context("connecting to the tick server")?;
    let mut session = cfg.session().with_clock(clock.clone());
    let mut clients = TcpClients::new(clock);
    let outcome = session.run(&mut ticker, &mut clients);
    if outcome.is_err() {
        ticker.finish();
    }
    let log = session.into_log();
    if let Err(e) = outcome {
        log::error!("run aborted: {e}");
    }
    Ok(log)
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    let mut cfg = ScenarioConfig::load(&args.scenario).with_context(|| format!("loading {}", args.scenario.display()))?;
    if let Some(h) = args.horizon {
        cfg.horizon = h;
    }
    let log = match args.mode {
        Mode::Logical => run_logical(&cfg)?.log,
        Mode::Physical => physical(&cfg)?,
    };
    if let Some(path) = &args.log {
        let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        log.write_ndjson(BufWriter::new(f))?;
    }
    let verdict = check_safety(&log, cfg.params());
    println!("{} records, safety {}", log.len(), if verdict.all_pass() { "pass" } else { "FAIL" });
    if matches!(args.mode, Mode::Physical) {
        let j = jitter_report(&log);
        println!(
            "{} rounds, jitter p50 {:.2} ms, p95 {:.2} ms, max {:.2} ms, {} deadline misses",
            j.rounds, j.p50, j.p95, j.max, j.deadline_misses
        );
    }
    Ok(())
}
