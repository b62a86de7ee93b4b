use proptest::prelude::*;

use super::*;
use crate::grid::fixtures::*;

fn with_loss(loss: f64) -> CascadeRecord {
    CascadeRecord {
        sample: 0,
        seed: 0,
        case_hash: String::new(),
        events: vec![],
        islands: vec![],
        parents: vec![],
        losses: vec![],
        total_loss: loss,
        cap_exceeded: false,
    }
}

fn settings(sizes: Vec<usize>) -> SweepSettings {
    SweepSettings {
        sizes,
        delta_c: 300.0,
        sim: SimulationConfig {
            n_samples: 24,
            seed: 77,
            ..SimulationConfig::default()
        },
        workers: Workers(0),
        redispatch: false,
    }
}

#[test]
fn upgrade_raises_both_limits() {
    let mut case = ring(140.0);
    case.branches[2].f_lim2 = 210.0;
    let up = apply_upgrade(&case, &UpgradePlan { branches: vec![3, 5], delta_c: 300.0 }).unwrap();
    assert_eq!(up.branches()[2].f_lim1, 440.0);
    assert_eq!(up.branches()[2].f_lim2, 510.0);
    assert_eq!(up.branches()[4].f_lim1, 440.0);
    for k in [0, 1, 3, 5, 6, 7, 8, 9] {
        assert_eq!(up.branches()[k], case.branches()[k]);
    }
}

#[test]
fn empty_upgrades_are_identities() {
    let case = ring(140.0);
    assert_eq!(apply_upgrade(&case, &UpgradePlan { branches: vec![1, 2], delta_c: 0.0 }).unwrap(), case);
    assert_eq!(apply_upgrade(&case, &UpgradePlan { branches: vec![], delta_c: 300.0 }).unwrap(), case);
}

#[test]
fn invalid_plans_are_rejected() {
    let case = ring(140.0);
    let bad = |branches: Vec<usize>, delta_c: f64| apply_upgrade(&case, &UpgradePlan { branches, delta_c }).is_err();
    assert!(bad(vec![11], 10.0));
    assert!(bad(vec![0], 10.0));
    assert!(bad(vec![2, 2], 10.0));
    assert!(bad(vec![2], -1.0));
    assert!(bad(vec![2], f64::NAN));
}

#[test]
fn lossless_batch_reports_zero() {
    let r = risk_report(&[with_loss(0.0), with_loss(0.0)], 1000.0).unwrap();
    assert_eq!(r.cfr, 0.0);
    assert_eq!(r.ci95, 0.0);
    assert_eq!(r.band_risk, [0.0; 3]);
    assert_eq!(r.band_count, [2, 0, 0]);
}

#[test]
fn two_sample_report() {
    let r = risk_report(&[with_loss(50.0), with_loss(500.0)], 1000.0).unwrap();
    assert_eq!(r.band_risk, [25.0, 0.0, 250.0]);
    assert_eq!(r.band_count, [1, 0, 1]);
    assert_eq!(r.cfr, 275.0);
    // sample sd of {50, 500} is 450 / sqrt(2)
    let want = Z95 * (450.0 / 2f64.sqrt()) / 2f64.sqrt();
    assert!((r.ci95 - want).abs() < 1e-9);
    assert!(risk_report(&[], 1000.0).is_err());
    assert!(risk_report(&[with_loss(1.0)], 0.0).is_err());
}

#[test]
fn band_edges() {
    assert_eq!(band(99.999, 1000.0), 0);
    assert_eq!(band(100.0, 1000.0), 1);
    assert_eq!(band(300.0, 1000.0), 1);
    assert_eq!(band(300.001, 1000.0), 2);
}

#[test]
fn interval_separation() {
    let a = risk_report(&[with_loss(10.0), with_loss(12.0)], 1000.0).unwrap();
    let b = risk_report(&[with_loss(40.0), with_loss(42.0)], 1000.0).unwrap();
    assert!(a.separated_from(&b) && b.separated_from(&a));
    assert!(!a.separated_from(&a));
}

proptest! {
    #[test]
    fn bands_add_up_to_cfr(losses in prop::collection::vec(0.0f64..1000.0, 1..200)) {
        let recs: Vec<_> = losses.iter().map(|&l| with_loss(l)).collect();
        let r = risk_report(&recs, 1000.0).unwrap();
        prop_assert!((r.band_risk.iter().sum::<f64>() - r.cfr).abs() <= 1e-9);
        prop_assert_eq!(r.band_count.iter().sum::<usize>(), losses.len());
        let mean = losses.iter().sum::<f64>() / losses.len() as f64;
        prop_assert!((r.cfr - mean).abs() <= 1e-9 * mean.max(1.0));
        prop_assert!(r.ci95 >= 0.0);
    }
}

#[test]
fn self_validation_shape_and_baseline() {
    let case = ring(70.0);
    let order: Vec<usize> = (1..=10).rev().collect();
    let groups = [Group::Top, Group::Middle { start: 4 }, Group::Bottom];
    let rep = self_validate(&case, &order, &groups, &settings(vec![0, 2])).unwrap();
    assert_eq!(rep.rows.len(), 6);
    let base = &rep.get("top", 0).unwrap().report;
    assert!(base.cfr > 0.0);
    for g in ["middle", "bottom"] {
        assert_eq!(&rep.get(g, 0).unwrap().report, base);
    }
    assert_eq!(rep.get("top", 2).unwrap().branches, vec![10, 9]);
    assert_eq!(rep.get("middle", 2).unwrap().branches, vec![7, 6]);
    assert_eq!(rep.get("bottom", 2).unwrap().branches, vec![2, 1]);
    let direct = Simulator::new(case.clone(), settings(vec![]).sim).unwrap().run_batch(Workers(1));
    assert_eq!(base, &risk_report(&direct.records, case.total_load()).unwrap());
}

#[test]
fn sweeps_are_deterministic() {
    let case = ring(70.0);
    let order: Vec<usize> = (1..=10).collect();
    let a = self_validate(&case, &order, &[Group::Top], &settings(vec![0, 3])).unwrap();
    let mut s = settings(vec![0, 3]);
    s.workers = Workers(1);
    let b = self_validate(&case, &order, &[Group::Top], &s).unwrap();
    assert_eq!(a, b);
}

#[test]
fn generous_upgrade_of_everything_removes_overload_cascades() {
    let case = ring(70.0);
    let all: Vec<usize> = (1..=10).collect();
    let mut s = settings(vec![0, 10]);
    s.delta_c = 10_000.0;
    let rep = cross_validate(&case, &[("all".into(), all)], &s).unwrap();
    assert_eq!(rep.rows.len(), 2);
    assert!(rep.rows[1].report.cfr <= rep.rows[0].report.cfr);
}

#[test]
fn cross_validation_curves() {
    let case = ring(70.0);
    let rankings = vec![("K".to_string(), (1..=10).collect::<Vec<_>>()), ("B1".to_string(), (1..=10).rev().collect())];
    let rep = cross_validate(&case, &rankings, &settings(vec![0, 1])).unwrap();
    assert_eq!(rep.rows.len(), 4);
    assert_eq!(rep.get("K", 0).unwrap().report, rep.get("B1", 0).unwrap().report);
    assert_eq!(rep.get("B1", 1).unwrap().branches, vec![10]);
    let mut buf = Vec::new();
    write_sweep_csv(&rep, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("plan,size,cfr,ci95,risk_lt10,risk_10to30,risk_gt30,n_samples,branches\nK,0,"));
    assert_eq!(text.lines().count(), 5);
    let mut buf = Vec::new();
    write_sweep_long(&rep, &mut buf).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1 + 4 * 4);
    let bars = render_bars(&rep, 20);
    assert_eq!(bars.lines().count(), 4);
    assert!(bars.contains('#'));
}

#[test]
fn bad_sweeps_are_rejected() {
    let case = ring(70.0);
    let order: Vec<usize> = (1..=10).collect();
    assert!(self_validate(&case, &order, &[Group::Top], &settings(vec![2, 2])).is_err());
    assert!(self_validate(&case, &order[..9], &[Group::Top], &settings(vec![0])).is_err());
    assert!(self_validate(&case, &order, &[Group::Top], &settings(vec![11])).is_err());
    let dup = vec![1, 1, 2, 3, 4, 5, 6, 7, 8, 9];
    assert!(cross_validate(&case, &[("x".into(), dup)], &settings(vec![0])).is_err());
}

#[test]
fn upgrades_keep_the_operating_point() {
    let case = ring(70.0);
    let base = Simulator::new(case.clone(), settings(vec![]).sim).unwrap();
    let up = apply_upgrade(&case, &UpgradePlan { branches: vec![1, 2, 3], delta_c: 300.0 }).unwrap();
    let kept = base.with_limits_of(up.clone()).unwrap();
    assert_eq!(kept.operating_point(), base.operating_point());
    assert_eq!(kept.case(), &up);
    assert_ne!(kept.case_hash(), base.case_hash());
    let mut moved = case.clone();
    moved.branches[0].x *= 2.0;
    assert!(base.with_limits_of(moved).is_err());
}

#[test]
fn redispatch_is_optional() {
    let case = ring(70.0);
    let order: Vec<usize> = (1..=10).collect();
    let kept = self_validate(&case, &order, &[Group::Top], &settings(vec![0, 4])).unwrap();
    let mut s = settings(vec![0, 4]);
    s.redispatch = true;
    let fresh = self_validate(&case, &order, &[Group::Top], &s).unwrap();
    assert_eq!(kept.rows[0], fresh.rows[0]);
    let up = apply_upgrade(&case, &UpgradePlan { branches: vec![1, 2, 3, 4], delta_c: 300.0 }).unwrap();
    let direct = Simulator::new(up, s.sim.clone()).unwrap().run_batch(Workers(1));
    assert_eq!(fresh.rows[1].report, risk_report(&direct.records, case.total_load()).unwrap());
}
