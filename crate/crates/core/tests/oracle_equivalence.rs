mod common;

use common::{exact_dataset, m, v};
use sp_adp::learner::{learn, AdpConfig};
use sp_adp::oracle::{care_solve, kleinman_iterates};
use sp_adp::sim::{ExplorationSignal, ExplorationSpec};
use sp_adp::sp_model::reference_plant;

fn setup() -> (sp_adp::sp_model::SlowSubsystem, AdpConfig) {
    let slow = reference_plant(0.01).unwrap().reduce_slow().unwrap();
    let cfg = AdpConfig::new(m(&[&[10.0, 0.0], &[0.0, 10.0]]), m(&[&[1.0]])).with_k0(m(&[&[1.0, 0.0]]));
    (slow, cfg)
}

#[test]
fn data_driven_iterates_track_kleinman() {
    let (slow, cfg) = setup();
    let sig = ExplorationSignal::generated(1, &ExplorationSpec::default(), 1).unwrap();
    let data = exact_dataset(&slow.a_s, &slow.b_s, &sig, &v(&[1.0, 2.0]), 0.1, 10, 1e-4);
    let res = learn(&data, &cfg).unwrap();
    assert!(res.converged);

    let model = kleinman_iterates(
        &slow.a_s,
        &slow.b_s,
        &cfg.q_weight,
        &cfg.r_weight,
        &cfg.k0,
        res.iterations,
    )
    .unwrap();
    for (entry, (p, k)) in res.history[1..].iter().zip(&model) {
        let dp = (entry.p.as_ref().unwrap() - p).amax();
        let dk = (&entry.gain - k).amax();
        assert!(
            dp < 1e-6 && dk < 1e-6,
            "iteration {}: |dP| = {dp:e}, |dK| = {dk:e}",
            entry.k
        );
    }
}

#[test]
fn exact_slow_data_recovers_lqr_gain() {
    let (slow, cfg) = setup();
    let sig = ExplorationSignal::generated(1, &ExplorationSpec::default(), 7).unwrap();
    let data = exact_dataset(&slow.a_s, &slow.b_s, &sig, &v(&[1.0, 2.0]), 0.1, 10, 1e-4);
    let res = learn(&data, &cfg).unwrap();
    let bar = care_solve(&slow.a_s, &slow.b_s, &cfg.q_weight, &cfg.r_weight, None).unwrap();
    assert!((&res.k_final - &bar.k).amax() < 1e-6, "{} vs {}", res.k_final, bar.k);
    assert!((&res.p_final - &bar.p).amax() < 1e-5);
}

#[test]
fn scalar_integrator_gain() {
    let cfg = AdpConfig::new(m(&[&[10.0]]), m(&[&[1.0]])).with_k0(m(&[&[1.0]]));
    let sig = ExplorationSignal::generated(1, &ExplorationSpec::default(), 3).unwrap();
    let data = exact_dataset(&m(&[&[0.0]]), &m(&[&[1.0]]), &sig, &v(&[0.5]), 0.1, 4, 1e-4);
    let res = learn(&data, &cfg).unwrap();
    assert!((res.k_final[(0, 0)] - 10f64.sqrt()).abs() < 1e-2);
}
