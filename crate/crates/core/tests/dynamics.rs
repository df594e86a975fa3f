mod common;

use polyconsensus::dynamics::{random_initial_state, rk4_simulate, Term};
use polyconsensus::model::example;

#[test]
fn decoupled_decay_matches_exponential() {
    let mut cfg = common::config(
        "decay",
        1,
        3,
        vec![Term::new(1, -1.0, &[1])],
        vec![Term::new(1, -1.0, &[1])],
    );
    cfg.c = 0.0;
    let model = cfg.build().unwrap();
    let x0 = [1.0, -2.0, 0.5];
    let trace = rk4_simulate(&model, &x0, 0.01, 1.0, None).unwrap();
    assert_eq!(trace.times.len(), 101);
    let e = (-1.0f64).exp();
    for (a, b) in trace.final_state().iter().zip(x0) {
        assert!((a / b - e).abs() < 1e-8);
    }
}

#[test]
fn consensus_manifold_is_invariant() {
    for name in ["lorenz", "vdp-classical"] {
        let model = example(name).unwrap().build().unwrap();
        let n = model.n();
        let x0: Vec<f64> = (0..model.state_len())
            .map(|i| 0.3 + 0.1 * (i % n) as f64)
            .collect();
        let trace = rk4_simulate(&model, &x0, 1e-3, 2.0, None).unwrap();
        assert!(!trace.diverged);
        assert!(trace.disagreement.iter().all(|&d| d <= 1e-9), "{name}");
    }
}

#[test]
fn times_are_uniform_and_v_recorded() {
    let model = common::oscillator(4).build().unwrap();
    let x0 = random_initial_state(model.state_len(), 1.0, 7);
    let lyap = vec![nalgebra::DMatrix::identity(2, 2)];
    let trace = rk4_simulate(&model, &x0, 0.05, 1.0, Some(&lyap)).unwrap();
    let v = trace.v.as_ref().unwrap();
    assert_eq!(v.len(), trace.times.len());
    for w in trace.times.windows(2) {
        assert!((w[1] - w[0] - 0.05).abs() < 1e-12);
    }
    let mut csv = Vec::new();
    trace.write_csv_to(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with("t,x_1_1,x_1_2,x_2_1"));
    assert_eq!(text.lines().count(), trace.times.len() + 1);
}

#[test]
fn vdp_example_diverges_with_partial_trace() {
    let model = example("vdp").unwrap().build().unwrap();
    let x0 = random_initial_state(model.state_len(), 2.0, 0);
    let trace = rk4_simulate(&model, &x0, 1e-3, 20.0, None).unwrap();
    assert!(trace.diverged);
    assert!(*trace.times.last().unwrap() < 20.0);
    assert!(trace.final_state().iter().all(|v| v.abs() <= 1e12));
}

#[test]
fn rejects_bad_step() {
    let model = common::integrator(3).build().unwrap();
    assert!(rk4_simulate(&model, &[0.0; 3], 0.0, 1.0, None).is_err());
    assert!(rk4_simulate(&model, &[0.0; 2], 0.1, 1.0, None).is_err());
}
