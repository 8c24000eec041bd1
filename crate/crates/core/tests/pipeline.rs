//! Simulation, certification and composition chained together.

use std::f64::consts::FRAC_PI_4;

use qkdlab_core::bounds::{self, certify, eps_composable, CertifyConfig, PrivacyMeasure};
use qkdlab_core::compose::repeated_qkd;
use qkdlab_core::qinfo::{FamilyKind, MeasurementFamilyConfig};
use qkdlab_core::qkdsim::{build_game_states, run_protocol, EveStrategy, Key, Mode, ProtocolConfig};

fn cert() -> CertifyConfig {
    CertifyConfig {
        info: MeasurementFamilyConfig { kind: FamilyKind::QubitProjectiveGrid, grid_size: 800, refinement_rounds: 1, outcomes: 2, seed: 9 },
        family_rows: true,
    }
}

fn attacks() -> Vec<EveStrategy> {
    vec![
        EveStrategy::none(),
        EveStrategy::intercept_resend(0.3),
        EveStrategy::intercept_resend(1.0),
        EveStrategy::entangling_probe(0.4),
        EveStrategy::entangling_probe(FRAC_PI_4),
    ]
}

#[test]
fn length_marginals_match_key_table() {
    for threshold in [0.0, 0.25, 0.5] {
        for eve in attacks() {
            let rec = run_protocol(&ProtocolConfig::exact(4, 0.5, threshold, 1, 3), &eve).unwrap();
            for (&m, &pm) in &rec.length_dist {
                let s: f64 = rec.key_table.iter().filter(|((a, _), _)| a.len() == m).map(|(_, p)| p).sum();
                assert!((s - pm).abs() <= 1e-9);
            }
        }
    }
}

#[test]
fn every_scenario_certifies_with_ordering() {
    for threshold in [0.0, 0.25, 0.5] {
        for eve in attacks() {
            let rec = run_protocol(&ProtocolConfig::exact(4, 0.5, threshold, 1, 3), &eve).unwrap();
            let gs = build_game_states(&rec).unwrap();
            let rep = certify(&rec, &gs, &cert()).unwrap();
            assert!(rep.all_pass(), "{eve:?} at {threshold}: {:?}", rep.bound_rows);
            assert!(rep.ordering_holds(), "{eve:?} at {threshold}");
            if let Some(acc) = rep.mu2_acc_lower {
                assert!(acc <= rep.mu2_chi + 1e-8);
            }
            for row in rep.bound_rows.iter().filter(|r| !r.informational) {
                assert!(row.lhs <= row.rhs + bounds::BOUND_TOL, "{}", row.name);
            }
        }
    }
}

#[test]
fn no_attack_is_perfect() {
    let rec = run_protocol(&ProtocolConfig::exact(4, 0.5, 0.25, 1, 8), &EveStrategy::none()).unwrap();
    let gs = build_game_states(&rec).unwrap();
    assert!(eps_composable(&gs).unwrap() <= 1e-9);
    assert!(bounds::mu1_uniformity(&rec) <= 1e-9);
    assert!(bounds::mu2_privacy(&rec, PrivacyMeasure::Chi, &cert().info).unwrap() <= 1e-9);
}

#[test]
fn raw_keys_certify() {
    // no hashing: the key is the untested sifted string
    let rec = run_protocol(&ProtocolConfig::exact(3, 0.3, 0.5, 0, 4), &EveStrategy::intercept_resend(0.5)).unwrap();
    assert!(rec.realized_lengths().len() > 1);
    let gs = build_game_states(&rec).unwrap();
    let rep = certify(&rec, &gs, &cert()).unwrap();
    assert!(rep.all_pass(), "{:?}", rep.bound_rows);
}

#[test]
fn records_are_deterministic() {
    for mode in [Mode::Exact, Mode::MonteCarlo] {
        let mut cfg = ProtocolConfig::exact(4, 0.5, 0.25, 1, 17);
        cfg.mode = mode;
        cfg.trials = 20_000;
        let eve = EveStrategy::entangling_probe(0.6);
        let a = run_protocol(&cfg, &eve).unwrap();
        let b = run_protocol(&cfg, &eve).unwrap();
        assert_eq!(a.key_table, b.key_table);
        assert_eq!(a.qber, b.qber);
        for (k, st) in &a.eve_states {
            assert_eq!(st, &b.eve_states[k]);
        }
    }
}

#[test]
fn measured_advantage_feeds_repeated_budget() {
    let rec = run_protocol(&ProtocolConfig::exact(4, 0.5, 0.25, 1, 5), &EveStrategy::intercept_resend(1.0)).unwrap();
    let eps = eps_composable(&build_game_states(&rec).unwrap()).unwrap();
    assert!(eps > 0.0);
    for t in 1..=6 {
        let (total, tree) = repeated_qkd(t, eps, 1e-3).unwrap();
        assert!(total.is_finite());
        assert_eq!(tree.len() as u64, 2 * t + 1);
        assert!((total - t as f64 * (eps + 1e-3)).abs() <= 1e-15 * t as f64);
    }
}

#[test]
fn intercept_resend_key_is_uniform_but_noisy() {
    let rec = run_protocol(&ProtocolConfig::exact(4, 0.5, 0.25, 1, 2), &EveStrategy::intercept_resend(1.0)).unwrap();
    let p0: f64 = rec.key_table.iter().filter(|((a, _), _)| *a == Key::new(1, 0)).map(|(_, p)| p).sum();
    let p1: f64 = rec.key_table.iter().filter(|((a, _), _)| *a == Key::new(1, 1)).map(|(_, p)| p).sum();
    assert!((p0 - p1).abs() <= 1e-12);
    assert!(rec.prob_equal(Key::new(1, 0)) < p0);
}
