//! Scenario runner, log checkers and the acceptance suite.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};

use tickwrap_core::eventlog::EventLog;
use tickwrap_core::jitter::jitter_report;
use tickwrap_core::safety::check_safety;
use tickwrap_core::scenario::{LogicalTicker, ScenarioConfig, StubDevices};
use tickwrap_core::LogicalTime;
use tickwrap_harness::checks::run_all;
use tickwrap_harness::gateway::{self, Gateway};
use tickwrap_net::physical::{PhysicalOptions, PhysicalRig};

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Logical,
    Physical,
}

#[derive(Parser)]
#[command(about = "Run scenarios, check logs, and serve the console gateway")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario; physical mode starts the servers in-process.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, value_enum, default_value = "logical")]
        mode: Mode,
        /// Serve the gateway API on this address, e.g. `:8080`.
        #[arg(long)]
        serve_ui: Option<String>,
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        horizon: Option<LogicalTime>,
        /// Bind servers to ephemeral ports instead of the scenario's.
        #[arg(long)]
        ephemeral: bool,
    },
    /// Safety properties of a recorded log.
    Check {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Jitter histogram and quantiles of a recorded log.
    Jitter {
        #[arg(long)]
        log: PathBuf,
    },
    /// Every acceptance criterion, one line each.
    Acceptance,
}

fn listen_addr(s: &str) -> anyhow::Result<SocketAddr> {
    let full = if s.starts_with(':') { format!("127.0.0.1{s}") } else { s.to_string() };
    full.parse().with_context(|| format!("bad address {s}"))
}

fn load(path: &PathBuf) -> anyhow::Result<ScenarioConfig> {
    ScenarioConfig::load(path).with_context(|| format!("loading {}", path.display()))
}

fn read_log(path: &PathBuf) -> anyhow::Result<EventLog> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(EventLog::read_ndjson(BufReader::new(f))?)
}

fn run(
    cfg: ScenarioConfig,
    mode: Mode,
    serve_ui: Option<String>,
    log_path: Option<PathBuf>,
    ephemeral: bool,
) -> anyhow::Result<bool> {
    let gw = Arc::new(Gateway::new());
    let server = match &serve_ui {
        Some(a) => {
            let (bound, h) = gateway::spawn(gw.clone(), listen_addr(a)?)?;
            println!("gateway on http://{bound}");
            Some(h)
        }
        None => None,
    };
    let log = match mode {
        Mode::Logical => {
            gw.begin(&cfg, None);
            let mut session = cfg.session().with_observer(gw.clone());
            let mut ticker = LogicalTicker::new(Vec::new());
            let mut devices = StubDevices::new(cfg.grain_ms, &cfg.devices);
            session.run(&mut ticker, &mut devices)?;
            session.into_log()
        }
        Mode::Physical => {
            let opts = PhysicalOptions {
                ephemeral_ports: ephemeral,
                observer: Some(gw.clone()),
                ..Default::default()
            };
            let rig = PhysicalRig::start(&cfg, opts)?;
            gw.begin(rig.config(), Some(rig.interrupt_addr()));
            println!("tick server on {}, interrupts on {}", rig.control_addr(), rig.interrupt_addr());
            let run = rig.run()?;
            if let Some(e) = &run.error {
                log::error!("run aborted: {e}");
            }
            let j = jitter_report(&run.log);
            println!(
                "{} rounds, jitter p50 {:.2} ms, p95 {:.2} ms, max {:.2} ms, {} deadline misses, {} overruns",
                j.rounds, j.p50, j.p95, j.max, j.deadline_misses, run.server.overruns
            );
            run.log
        }
    };
    gw.end();
    if let Some(p) = &log_path {
        let f = File::create(p).with_context(|| format!("creating {}", p.display()))?;
        log.write_ndjson(BufWriter::new(f))?;
    }
    let v = check_safety(&log, cfg.params());
    println!("{} records, safety {}", log.len(), if v.all_pass() { "pass" } else { "FAIL" });
    if let Some(h) = server {
        println!("run finished; gateway still serving the log (Ctrl-C to stop)");
        let _ = h.join();
    }
    Ok(v.all_pass())
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let ok = match Cli::parse().cmd {
        Cmd::Run {
            scenario,
            mode,
            serve_ui,
            log,
            horizon,
            ephemeral,
        } => {
            let mut cfg = load(&scenario)?;
            if let Some(h) = horizon {
                cfg.horizon = h;
            }
            run(cfg, mode, serve_ui, log, ephemeral)?
        }
        Cmd::Check { log, scenario } => {
            let v = check_safety(&read_log(&log)?, load(&scenario)?.params());
            println!("{}", serde_json::to_string_pretty(&v)?);
            v.all_pass()
        }
        Cmd::Jitter { log } => {
            let r = jitter_report(&read_log(&log)?);
            println!("rounds {}  p50 {:.3} ms  p95 {:.3} ms  max {:.3} ms  deadline misses {}", r.rounds, r.p50, r.p95, r.max, r.deadline_misses);
            for (bin, n) in &r.histogram {
                println!("{bin:>6.0} ms  {n}");
            }
            true
        }
        Cmd::Acceptance => {
            let results = run_all();
            for c in &results {
                println!("{c}");
            }
            results.iter().all(|c| c.pass)
        }
    };
    std::process::exit(if ok { 0 } else { 1 })
}
