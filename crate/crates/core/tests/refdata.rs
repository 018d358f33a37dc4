use railevac::geometry::ExitType;
use railevac::metrics::MetricsRow;
use railevac::population::Group;
use railevac::refdata::*;
use railevac::Error;

fn row(scenario: &str, seed: u64, t: f64) -> MetricsRow {
    MetricsRow {
        scenario: scenario.into(),
        seed,
        tet: t,
        tet_46: t,
        tet_corr: t,
        flow: 1.0,
    }
}

fn batch_at_reference(r: &Reference, runs: u64) -> Vec<MetricsRow> {
    r.trials
        .iter()
        .flat_map(|t| (0..runs).map(move |s| row(&t.scenario(), s, t.tet_corr_s)))
        .collect()
}

#[test]
fn trials_are_complete() {
    let r = load_reference().unwrap();
    assert_eq!(r.trials.len(), 30);
    let t = r.trial("13B").unwrap();
    assert_eq!(
        (t.exit, t.group, t.width_m, t.n, t.tet_s, t.tet46_s, t.delay_s, t.tet_corr_s),
        (ExitType::Jump, Group::Het, 0.65, 46, 73.12, 73.12, 0.0, 73.12)
    );
    let t = r.trial("2A").unwrap();
    assert_eq!((t.delay_s, t.tet_corr_s), (5.00, 47.19));
    assert_eq!(r.trial("11A").unwrap().tet_corr_s, 67.89);
    for t in &r.trials {
        assert!((t.tet46_s - t.delay_s - t.tet_corr_s).abs() < 1e-9);
        assert_eq!(t.tet_s == t.tet46_s, t.n == 46, "trial {}", t.id);
    }
    assert_eq!(r.trials.iter().filter(|t| t.first_trial).count(), 6);
    assert_eq!(r.trial_for(ExitType::Stairs, Group::Het, 1.34).unwrap().id, "5B");
    assert_eq!(r.trial_for(ExitType::Jump, Group::Hom, 0.9).unwrap().scenario(), "jump_H0_W0.90");
}

#[test]
fn jump_het_is_slower_at_every_width() {
    let r = load_reference().unwrap();
    for w in [0.65, 0.75, 0.9, 1.1, 1.34] {
        let het = r.trial_for(ExitType::Jump, Group::Het, w).unwrap().tet_corr_s;
        let hom = r.trial_for(ExitType::Jump, Group::Hom, w).unwrap().tet_corr_s;
        assert!(het > hom, "width {w}");
    }
}

#[test]
fn side_tables() {
    let r = load_reference().unwrap();
    assert_eq!(r.flows.len(), 30);
    assert_eq!(r.flow_for(ExitType::Jump, Group::Het, 0.65), Some(0.71));
    assert_eq!(r.flow_for(ExitType::Stairs, Group::Hom, 1.34), Some(1.50));
    let lo = r.flows.iter().map(|f| f.flow_pps).fold(f64::INFINITY, f64::min);
    let hi = r.flows.iter().map(|f| f.flow_pps).fold(0.0, f64::max);
    assert_eq!((lo, hi), (0.69, 1.50));
    for f in &r.flows {
        assert!((f.flow_pps * 60.0 - f.flow_ppm).abs() <= 1.0);
    }
    let senior = r.exit_delays.iter().find(|d| d.agent_type == "senior").unwrap();
    assert_eq!((senior.before_s, senior.after_s), (2.0, 1.0));
    let aisle: Vec<_> = r.speeds.iter().filter(|s| s.location == "aisle").collect();
    assert_eq!(aisle.len(), 5);
    assert!(r.speeds.iter().all(|s| s.min_mps <= s.mean_mps && s.mean_mps <= s.max_mps));
}

#[test]
fn fixture_round_trips() {
    let r = load_reference().unwrap();
    let json = serde_json::to_string(&r).unwrap();
    assert_eq!(serde_json::from_str::<Reference>(&json).unwrap(), r);
    let mut w = csv::Writer::from_writer(Vec::new());
    for t in &r.trials {
        w.serialize(t).unwrap();
    }
    let text = String::from_utf8(w.into_inner().unwrap()).unwrap();
    let back: Vec<ReferenceTrial> = parse_csv("trials", &text).unwrap();
    assert_eq!(back, r.trials);
}

#[test]
fn corruption_is_detected() {
    verify_checksum(TRIALS.name, TRIALS.text, TRIALS.sha256).unwrap();
    let tampered = TRIALS.text.replace("73.12", "73.13");
    assert!(matches!(
        verify_checksum(TRIALS.name, &tampered, TRIALS.sha256),
        Err(Error::Fixture(_))
    ));
    assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

#[test]
fn exact_batch_is_fully_contained() {
    let r = load_reference().unwrap();
    let rep = validate_batch(&batch_at_reference(&r, 30), &r, DEFAULT_MIN_RUNS).unwrap();
    assert_eq!(rep.rate, 1.0);
    assert_eq!(rep.contained, 30);
    assert!(rep.scenarios.iter().all(|s| s.rel_deviation.abs() < 1e-12));
    assert!(rep.to_string().contains("contained 30/30"));
}

#[test]
fn band_edges() {
    assert!(band_contains(45.0, 50.0, 60.0));
    assert!(!band_contains(44.99, 50.0, 60.0));
    assert!(band_contains(66.0, 50.0, 60.0));
    assert!(!band_contains(66.01, 50.0, 60.0));
    let r = load_reference().unwrap();
    let mut b = batch_at_reference(&r, 30);
    for x in b.iter_mut().filter(|x| x.scenario == "jump_H28_W0.65") {
        x.tet_corr = 60.0;
    }
    let rep = validate_batch(&b, &r, 30).unwrap();
    assert_eq!(rep.contained, 29);
    let s = rep.scenarios.iter().find(|s| s.trial_id == "13B").unwrap();
    assert!(!s.contained);
    assert_eq!((s.band_min, s.band_max, s.runs), (60.0, 60.0, 30));
}

#[test]
fn gaps_are_listed() {
    let r = load_reference().unwrap();
    assert!(matches!(validate_batch(&[], &r, 30), Err(Error::Validation(_))));
    let b: Vec<MetricsRow> = batch_at_reference(&r, 30)
        .into_iter()
        .filter(|x| x.scenario != "stairs_H0_W0.75" && !(x.scenario == "platform_H28_W1.34" && x.seed > 9))
        .collect();
    match validate_batch(&b, &r, 30) {
        Err(Error::MissingScenarios(m)) => {
            assert_eq!(m.len(), 2);
            assert!(m.iter().any(|s| s == "stairs_H0_W0.75"));
            assert!(m.iter().any(|s| s.starts_with("platform_H28_W1.34 (10 of 30")));
        }
        other => panic!("{other:?}"),
    }
}
