mod common;

use common::{dense_replay, fields_diff, lambda_one, scheme, skt_problem, skt_step_bump};
use relaxdiff::diagnostics::{check_step, Tolerances};
use relaxdiff::stepper::{regularize, NullObserver};
use relaxdiff::{CoefficientSpec, Field, Grid, ModelSpec, Species, Stepper};

fn final_u(m: &ModelSpec, tau: f64, horizon: f64) -> Vec<Field> {
    Stepper::new(m, scheme(tau, horizon)).unwrap().run(&mut NullObserver).unwrap().state.u
}

fn max_diff(a: &[Field], b: &[Field]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.max_abs_diff(y)).fold(0.0, f64::max)
}

#[test]
fn first_order_in_tau() {
    let m = skt_problem(Grid::unit(1, 32).unwrap(), 0.05, 1.0, 0.01);
    let runs: Vec<Vec<Field>> = (0..4).map(|k| final_u(&m, 0.02 / f64::powi(2.0, k), 0.5)).collect();
    let diffs: Vec<f64> = runs.windows(2).map(|w| max_diff(&w[0], &w[1])).collect();
    for w in diffs.windows(2) {
        let ratio = w[0] / w[1];
        assert!((ratio - 2.0).abs() <= 0.4, "ratio {ratio} from {diffs:?}");
    }
}

#[test]
fn iterative_path_matches_dense_replay() {
    let m = skt_step_bump(Grid::new_2d(6, 5, 0.2, 0.25).unwrap());
    let stepper = Stepper::new(&m, scheme(0.01, 0.05)).unwrap();
    let replay = dense_replay(&m, 0.01, 5);
    let (mut state, _) = stepper.initial_state().unwrap();
    for (k, r) in replay.iter().enumerate() {
        if k > 0 {
            state = stepper.step(&state).unwrap().state;
        }
        assert!(fields_diff(&state.u, &r.u) <= 1e-9, "u at step {k}");
        assert!(fields_diff(&state.u_tilde, &r.u_tilde) <= 1e-9, "u_tilde at step {k}");
        assert!(fields_diff(&state.w, &r.w) <= 1e-9, "w at step {k}");
    }
}

#[test]
fn w_increment_is_the_resolvent_of_the_flux() {
    let m = skt_step_bump(Grid::unit(1, 24).unwrap());
    let cfg = scheme(0.02, 0.2);
    let stepper = Stepper::new(&m, cfg.clone()).unwrap();
    let (mut state, _) = stepper.initial_state().unwrap();
    let mut opts = cfg.cg_options();
    opts.tol = 1e-13;
    for _ in 0..5 {
        let out = stepper.step(&state).unwrap();
        for i in 0..2 {
            let flux: Vec<f64> = out.coefficients[i]
                .iter()
                .zip(out.state.u[i].iter())
                .map(|(a, u)| cfg.tau * a * u)
                .collect();
            let (expected, _) = regularize(&m.grid, &Field::new(&m.grid, flux).unwrap(), m.species[i].delta, &opts).unwrap();
            let inc: Vec<f64> = out.state.w[i].iter().zip(state.w[i].iter()).map(|(a, b)| a - b).collect();
            let scale = expected.max_abs();
            for (a, b) in inc.iter().zip(expected.iter()) {
                assert!((a - b).abs() <= 1e-8 * scale, "{a} vs {b}");
                assert!(*a >= -1e-12);
            }
        }
        state = out.state;
    }
}

#[test]
fn invariants_hold_on_a_step_bump_run() {
    for grid in [Grid::unit(1, 64).unwrap(), Grid::unit(2, 16).unwrap()] {
        let m = skt_step_bump(grid);
        let cfg = scheme(0.01, 0.3);
        let stepper = Stepper::new(&m, cfg.clone()).unwrap();
        let tol = Tolerances::for_linear_tol(cfg.linear_tol);
        let (mut state, _) = stepper.initial_state().unwrap();
        while state.step < 30 {
            let next = stepper.step(&state).unwrap().state;
            let v = check_step(&m.grid, &state, &next, &tol);
            assert!(v.is_empty(), "{v:?}");
            state = next;
        }
    }
}

#[test]
fn heat_reduction_decays_at_the_first_eigenvalue() {
    let grid = Grid::unit(1, 48).unwrap();
    let d = 0.7;
    let initial = grid.field_from_fn(|x| 1.0 + 0.3 * (3.0 * x[0]).sin() + 0.2 * (20.0 * x[0] * x[0]).cos());
    let m = ModelSpec::new(grid.clone(), vec![Species::new(0.02, CoefficientSpec::constant(d, 1), initial)]);
    let tau = 1e-3;
    let stepper = Stepper::new(&m, scheme(tau, 1.0)).unwrap();
    let (mut state, _) = stepper.initial_state().unwrap();
    let mean = grid.integrate(&state.u[0]).unwrap() / grid.domain_measure();
    let mut log_norms = Vec::new();
    let mut times = Vec::new();
    while state.step < 1000 {
        state = stepper.step(&state).unwrap().state;
        if state.step >= 500 && state.step % 50 == 0 {
            let dev: f64 = state.u[0].iter().map(|v| (v - mean).powi(2)).sum::<f64>().sqrt();
            log_norms.push(dev.ln());
            times.push(state.time);
        }
    }
    let n = times.len() as f64;
    let (mt, ml) = (times.iter().sum::<f64>() / n, log_norms.iter().sum::<f64>() / n);
    let slope = times.iter().zip(&log_norms).map(|(t, l)| (t - mt) * (l - ml)).sum::<f64>()
        / times.iter().map(|t| (t - mt).powi(2)).sum::<f64>();
    let lambda = lambda_one(&grid);
    let h = grid.spacing()[0];
    let closed = 4.0 / (h * h) * (std::f64::consts::PI * h / 2.0).sin().powi(2);
    assert!((lambda - closed).abs() <= 1e-8 * closed, "{lambda} vs {closed}");
    let rate = -slope;
    assert!((rate - d * lambda).abs() <= 0.05 * d * lambda, "{rate} vs {}", d * lambda);
    let backward_euler = (1.0 + tau * d * lambda).ln() / tau;
    assert!((rate - backward_euler).abs() <= 1e-6 * backward_euler, "{rate} vs {backward_euler}");
}

#[test]
fn serial_and_parallel_runs_agree_bitwise() {
    let mut m = skt_step_bump(Grid::unit(2, 12).unwrap());
    m.species.push(Species::new(0.03, CoefficientSpec::skt(0.1, &[0.2, 0.3, 0.0], 2.0), Field::constant(&m.grid, 0.4)));
    for s in m.species.iter_mut().take(2) {
        if let CoefficientSpec::Skt { cross, .. } = &mut s.coefficient {
            cross.push(0.5);
        }
    }
    let serial = Stepper::new(&m, scheme(0.01, 0.1)).unwrap().run(&mut NullObserver).unwrap();
    let mut cfg = scheme(0.01, 0.1);
    cfg.parallel = true;
    let parallel = Stepper::new(&m, cfg).unwrap().run(&mut NullObserver).unwrap();
    assert_eq!(serial.state, parallel.state);
    assert_eq!(serial.rows, parallel.rows);
}
