use tickwrap_core::eventlog::EventKind;
use tickwrap_core::safety::check_safety;
use tickwrap_core::scenario::{run_logical, ScenarioConfig};

fn load(name: &str) -> ScenarioConfig {
    let path = format!("{}/../../scenarios/{name}.json", env!("CARGO_MANIFEST_DIR"));
    ScenarioConfig::load(path).unwrap()
}

#[test]
fn pump_logical_smoke() {
    let cfg = load("pump");
    let run = run_logical(&cfg).unwrap();
    let v = check_safety(&run.log, cfg.params());
    println!("{}", serde_json::to_string_pretty(&v).unwrap());
    for r in run.log.records().iter().filter(|r| r.kind != EventKind::Dispatch && r.kind != EventKind::Request).take(30) {
        println!("{} {:?} {}", r.t, r.kind, r.detail);
    }
    assert!(v.all_pass());
}

#[test]
fn pacemaker_logical_smoke() {
    let cfg = load("pacemaker");
    let t = std::time::Instant::now();
    let run = run_logical(&cfg).unwrap();
    println!("elapsed {:?} records {}", t.elapsed(), run.log.len());
    let v = check_safety(&run.log, cfg.params());
    println!("{}", serde_json::to_string_pretty(&v).unwrap());
    println!("paces {}", run.devices.pacer().unwrap().instants().len());
    assert!(v.all_pass());
}
