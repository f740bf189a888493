//! Logical scenario checks and their building blocks.

use tickwrap_core::safety::DispatchPoint;
use tickwrap_core::shaper::ShaperParams;
use tickwrap_core::{LogicalTime, Rational};
use tickwrap_harness::checks::{load_scenario, protocol, scenarios};

fn r(n: i64) -> Rational {
    Rational::from_integer(n)
}

fn pm_params() -> ShaperParams {
    load_scenario("pacemaker").unwrap().params().clone()
}

fn trace(values: &[i64], p: &ShaperParams) -> Vec<DispatchPoint> {
    values
        .iter()
        .enumerate()
        .map(|(i, v)| DispatchPoint {
            at: LogicalTime::from_int(i as u32),
            value: r(*v) / 10,
            stress: p.is_stress(r(*v) / 10),
        })
        .collect()
}

#[test]
fn pump_safety_passes() {
    let c = scenarios::pump_safety();
    assert!(c.pass, "{c}");
}

#[test]
fn pacemaker_has_cycles() {
    let c = scenarios::pacemaker_cycles();
    println!("{c}");
    assert!(c.pass, "{c}");
}

#[test]
fn mock_pump_delivers_one_ml() {
    assert_eq!(scenarios::mock_pump_volume().unwrap(), tickwrap_core::devices::Exact::from_integer(1));
}

#[test]
fn protocol_transcripts() {
    let c = protocol::criterion();
    assert!(c.pass, "{c}");
}

#[test]
fn rate_jump_is_rejected() {
    let p = pm_params();
    let big = (p.max_delta_per_period * 20).to_integer();
    let pts = trace(&[750, 750 - big - 10], &p);
    assert!(scenarios::pacing_cycles(&pts, &p, r(50)).is_err());
}

#[test]
fn slopes_of_a_bolus_curve() {
    use tickwrap_core::devices::Exact;
    let e = |n: i128| Exact::from_integer(n);
    let curve = vec![(e(0), e(0)), (e(0), e(0)), (e(3_600_000), e(1500)), (e(7_200_000), e(1500))];
    assert_eq!(scenarios::slopes(&curve), vec![e(1500), e(0)]);
}

fn excursion() -> Vec<i64> {
    let mut v: Vec<i64> = (500..=680).rev().collect();
    v.extend([500; 5]);
    v.extend(500..=680);
    v
}

#[test]
fn synthetic_excursion_is_one_cycle() {
    let p = pm_params();
    let mut v = excursion();
    v.extend(excursion());
    let cycles = scenarios::pacing_cycles(&trace(&v, &p), &p, r(50)).unwrap();
    assert_eq!(cycles.len(), 2);
    assert_eq!(cycles[0].descent_from.value, r(68));
}

#[test]
fn wobble_inside_stress_is_rejected() {
    let p = pm_params();
    let mut v: Vec<i64> = (600..=680).rev().collect();
    v.extend([601]);
    v.extend((500..=600).rev());
    v.extend(500..=680);
    assert!(scenarios::pacing_cycles(&trace(&v, &p), &p, r(50)).is_err());
}
