mod common;

use common::Slab;
use relaxdiff::diagnostics::{energy_balance, energy_identity_residual};
use relaxdiff::fixedpoint::solve_frozen_slab;
use relaxdiff::sparse::CgOptions;
use relaxdiff::{Field, Grid};

fn opts() -> CgOptions {
    CgOptions {
        tol: 1e-13,
        ..Default::default()
    }
}

#[test]
fn discrete_identity_is_exact() {
    for (grid, seed) in [(Grid::unit(1, 16).unwrap(), 1), (Grid::unit(2, 6).unwrap(), 2)] {
        let slab = Slab::random(grid, seed);
        let tau = 0.01;
        let coeffs = slab.history(tau, 0.2);
        let traj = solve_frozen_slab(&slab.grid, &coeffs, &slab.w0, tau, &opts()).unwrap();
        let b = energy_balance(&slab.grid, &traj, &coeffs, tau).unwrap();
        assert!(b.exact_defect() <= 1e-8, "{b:?}");
        assert!(b.reaction > 0.0 && b.gradient >= 0.0 && b.dissipation >= 0.0);
    }
}

#[test]
fn l2_bound_holds() {
    for seed in 0..5 {
        let slab = Slab::random(Grid::unit(1, 12).unwrap(), seed);
        let (tau, horizon) = (0.02, 0.4);
        let coeffs = slab.history(tau, horizon);
        let traj = solve_frozen_slab(&slab.grid, &coeffs, &slab.w0, tau, &opts()).unwrap();
        let sup = coeffs.iter().map(Field::max).fold(0.0, f64::max);
        let inf = coeffs.iter().map(Field::min).fold(f64::INFINITY, f64::min);
        let norm_q = traj[1..]
            .iter()
            .map(|w| tau * slab.grid.inner(w, w).unwrap())
            .sum::<f64>()
            .sqrt();
        let norm_0 = slab.grid.inner(&slab.w0, &slab.w0).unwrap().sqrt();
        assert!(norm_q <= sup / inf * horizon.sqrt() * norm_0, "{norm_q} vs {}", sup / inf * horizon.sqrt() * norm_0);
    }
}

#[test]
fn continuous_identity_residual_is_first_order() {
    let slab = Slab::random(Grid::unit(1, 8).unwrap(), 7);
    let horizon = 0.1;
    let residuals: Vec<f64> = (0..4)
        .map(|k| {
            let tau = 1e-3 / f64::powi(2.0, k);
            let coeffs = slab.history(tau, horizon);
            let traj = solve_frozen_slab(&slab.grid, &coeffs, &slab.w0, tau, &opts()).unwrap();
            energy_identity_residual(&slab.grid, &traj, &coeffs, tau).unwrap()
        })
        .collect();
    for w in residuals.windows(2) {
        let ratio = w[0] / w[1];
        assert!((ratio - 2.0).abs() <= 0.6, "{residuals:?}");
    }
}
