use tickwrap_harness::checks::shaper::{cases, enumerate, oracle_equivalence, sample};

#[test]
fn small_horizons_agree() {
    for case in cases() {
        assert_eq!(enumerate(&case, 4).unwrap().schedules, (case.values.len() as u64).pow(4));
    }
}

#[test]
fn three_values_full_horizon_twelve() {
    let case = cases().into_iter().find(|c| c.values.len() == 3).unwrap();
    let cov = enumerate(&case, 12).unwrap();
    assert_eq!(cov.schedules, 3u64.pow(12));
    assert!(cov.shaped > 0);
}

#[test]
fn sampled_long_schedules_agree() {
    for (i, case) in cases().iter().enumerate() {
        let cov = sample(case, 40, 2000, i as u64).unwrap();
        println!("{}: {} of {} schedules shaped", case.name, cov.shaped, cov.schedules);
        assert!(cov.shaped * 4 > cov.schedules, "{} rarely exercises the budget", case.name);
    }
}

#[test]
fn summary_counts() {
    let s = oracle_equivalence(12, 40, 2000).unwrap();
    assert!(s.sampled.schedules >= 10_000);
    assert!(s.enumerated.schedules >= 4u64.pow(9));
}
