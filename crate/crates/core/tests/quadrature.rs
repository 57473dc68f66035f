mod common;

use common::v;
use sp_adp::par::Execution;
use sp_adp::sim::{collect_adp_data, simulate, uniform_sample_times, ExplorationSignal, ExplorationSpec, SimOptions};
use sp_adp::sp_model::reference_plant;

fn dataset(h: f64) -> sp_adp::sim::AdpDataset {
    let sp = reference_plant(0.01).unwrap();
    let sys = sp.assemble_full();
    let sig = ExplorationSignal::generated(1, &ExplorationSpec::default(), 1).unwrap();
    let traj = simulate(
        &sys,
        |t, _| sig.eval(t),
        &v(&[1.0, 2.0, 1.0, 0.0]),
        h,
        4.1,
        SimOptions::default(),
    )
    .unwrap();
    let times = uniform_sample_times(0.0, 0.1, 40);
    collect_adp_data(&traj, |x| sp.slow_of(x), 0.1, &times, Execution::Sequential).unwrap()
}

#[test]
fn halving_the_step_barely_moves_the_data() {
    let (a, b) = (dataset(0.002), dataset(0.001));
    for (x, y) in [(&a.delta_yy, &b.delta_yy), (&a.i_yy, &b.i_yy), (&a.i_yu0, &b.i_yu0)] {
        let gap = (x - y).amax();
        assert!(gap < 1e-6, "max entry change {gap:e}");
    }
}
