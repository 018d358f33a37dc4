use railevac::campaign::{parse_scenario_id, CampaignConfig, Preset};
use railevac::geometry::ExitType;

#[test]
fn presets_expand_to_their_grids() {
    assert_eq!(CampaignConfig::preset(Preset::Basic).scenarios().len() * 30, 900);
    let fine = CampaignConfig::preset(Preset::Fine);
    assert_eq!(fine.scenarios().len(), 9 * 4 * 3);
    assert_eq!(fine.het, vec![0.0, 15.0, 28.0, 56.0]);
    let exp = CampaignConfig::preset(Preset::Experiment);
    let s = exp.scenarios();
    assert_eq!(s.len(), 30);
    assert!(s.iter().all(|s| s.n == if s.het == 0.0 { 42 } else { 46 }));
}

#[test]
fn scenario_ids_round_trip() {
    for s in CampaignConfig::preset(Preset::Fine).scenarios() {
        let (e, h, w) = parse_scenario_id(&s.id()).unwrap();
        assert_eq!((e, h, w), (s.exit, s.het, s.width), "{}", s.id());
    }
    assert_eq!(parse_scenario_id("jump_H28_W0.65").unwrap(), (ExitType::Jump, 28.0, 0.65));
    for bad in ["jump", "jump_28_W0.65", "ladder_H0_W1.00", "jump_H0_Wx", "stairs_H0_W0.90_x"] {
        assert!(parse_scenario_id(bad).is_err(), "{bad}");
    }
}

#[test]
fn hash_ignores_run_count_only() {
    let mut a = CampaignConfig::preset(Preset::Basic);
    let h = a.hash().unwrap();
    assert_eq!(h, a.hash().unwrap());
    a.runs = 5;
    assert_eq!(a.hash().unwrap(), h);
    a.seed += 1;
    assert_ne!(a.hash().unwrap(), h);
    let mut b = CampaignConfig::preset(Preset::Basic);
    b.widths.pop();
    assert_ne!(b.hash().unwrap(), h);
}

#[test]
fn seeds_share_crowds_across_scenarios() {
    let c = CampaignConfig::preset(Preset::Basic);
    let s = c.scenarios();
    assert_eq!(c.crowd_seed(3), c.crowd_seed(3));
    assert_ne!(c.crowd_seed(3), c.crowd_seed(4));
    assert_ne!(c.run_seed(&s[0], 3), c.run_seed(&s[1], 3));
}
