//! Every primary acceptance criterion, one line each.

use std::io::Write;

use tickwrap_harness::checks::run_all;

#[test]
fn acceptance() {
    let results = run_all();
    // straight to stderr so the lines show without --nocapture
    let mut err = std::io::stderr().lock();
    writeln!(err).unwrap();
    for c in &results {
        writeln!(err, "{c}").unwrap();
    }
    let red = results.iter().filter(|c| !c.pass).count();
    writeln!(err, "{} of {} criteria pass", results.len() - red, results.len()).unwrap();
    // a red line stays red; only failures wholly inside host freezes are tolerated
    let failed: Vec<&str> = results.iter().filter(|c| !c.pass && !c.host_excused).map(|c| c.name).collect();
    assert!(failed.is_empty(), "failing: {failed:?}");
}
