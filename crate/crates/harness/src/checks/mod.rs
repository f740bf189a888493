//! Executable acceptance checks shared by the test suite and the CLI.

pub mod algebra;
pub mod physical;
pub mod protocol;
pub mod scenarios;
pub mod shaper;
pub mod stalls;

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use tickwrap_core::scenario::ScenarioConfig;

#[derive(Debug, Clone)]
pub struct Criterion {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
    /// Failed only through timing lost to foreign host stalls.
    pub host_excused: bool,
}

impl Criterion {
    pub fn new(name: &'static str, pass: bool, detail: impl Into<String>) -> Self {
        Criterion {
            name,
            pass,
            detail: detail.into(),
            host_excused: false,
        }
    }

    /// Turn an error path into a failing criterion.
    pub fn from_result(name: &'static str, r: Result<Criterion, String>) -> Self {
        r.unwrap_or_else(|e| Criterion::new(name, false, e))
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.pass { "PASS" } else { "FAIL" };
        write!(f, "[{tag}] {}: {}", self.name, self.detail)?;
        if !self.pass && self.host_excused {
            write!(f, " [every failure inside a host stall]")?;
        }
        Ok(())
    }
}

/// Directory holding the shipped scenario files.
pub fn scenario_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

pub fn load_scenario(name: &str) -> Result<ScenarioConfig, String> {
    let p = scenario_dir().join(format!("{name}.json"));
    ScenarioConfig::load(&p).map_err(|e| format!("{}: {e}", p.display()))
}

pub(crate) fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let t = Instant::now();
    let out = f();
    (out, t.elapsed().as_secs_f64())
}

/// Run every criterion and return one line per criterion.
pub fn run_all() -> Vec<Criterion> {
    let mut out = vec![
        algebra::criterion(),
        shaper::criterion(),
        scenarios::pump_safety(),
        scenarios::pacemaker_cycles(),
    ];
    let phys = physical::desk_runs();
    out.push(physical::equivalence(&phys));
    out.push(physical::jitter(&phys));
    out.push(protocol::criterion());
    out.push(scenarios::pump_volume(&phys));
    out
}
