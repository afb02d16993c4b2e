mod common;

use num_complex::Complex64 as C64;

use purestate::density::DensityMatrix;
use purestate::dynamics::{Dynamics, Liouvillian, PropagationGrid};
use purestate::solver::SolverOptions;

use common::*;

#[test]
fn rabi_oscillation_matches_analytic_population() {
    assert!(rabi_error(5.0, 1.0, 10_000) < 1e-4);
}

#[test]
fn amplitude_damping_matches_exponential() {
    assert!(decay_error(0.5, 1.0, 10_000) < 1e-6);
}

#[test]
fn midpoint_rule_is_second_order() {
    let ratio = convergence_ratio(5.0, 1.0, 200);
    assert!((3.6..=4.4).contains(&ratio), "ratio {ratio}");
}

#[test]
fn closed_system_keeps_pure_states_pure() {
    let (purity, _) = drift_along_trajectory(false, 0.5, 5000);
    assert!(purity < 1e-8, "purity drift {purity}");
}

#[test]
fn open_system_preserves_trace() {
    let (_, trace) = drift_along_trajectory(true, 0.5, 5000);
    assert!(trace < 1e-10, "trace drift {trace}");
}

#[test]
fn propagation_is_linear_in_the_initial_state() {
    let sys = qudit_cavity(3, true);
    let controls = reset_controls(0.2, 10);
    let l = Liouvillian::new(&sys, true).unwrap();
    let alpha = random_vector(controls.num_params(), 5.0, 3);
    let dynamics = Dynamics {
        liouvillian: &l,
        controls: &controls,
        grid: PropagationGrid::new(0.2, 2000).unwrap(),
        solver: SolverOptions::default(),
    };
    let a = random_pure_state(9, 1);
    let b = random_pure_state(9, 2);
    let (wa, wb) = (0.3, 0.7);
    let mix = DensityMatrix::from_matrix(a.matrix() * C64::from(wa) + b.matrix() * C64::from(wb)).unwrap();
    let run = |rho: &DensityMatrix| dynamics.forward(&alpha, rho.as_vec(), |_, _| Ok(())).unwrap();
    let (xa, xb, xm) = (run(&a), run(&b), run(&mix));
    let worst = (0..xm.len())
        .map(|i| (xm[i] - xa[i] * wa - xb[i] * wb).norm())
        .fold(0.0, f64::max);
    assert!(worst < 1e-9, "linearity defect {worst}");
}

#[test]
fn zero_controls_leave_diagonal_states_fixed_in_closed_systems() {
    let sys = qudit_cavity(3, false);
    let controls = reset_controls(0.1, 5);
    let l = Liouvillian::new(&sys, true).unwrap();
    let dynamics = Dynamics {
        liouvillian: &l,
        controls: &controls,
        grid: PropagationGrid::new(0.1, 500).unwrap(),
        solver: SolverOptions::default(),
    };
    let rho = purestate::basis::ensemble_state_partial(&[3, 3], &[0], &[1]).unwrap();
    let diag = DensityMatrix::from_matrix(nalgebra::DMatrix::from_diagonal(&rho.matrix().diagonal())).unwrap();
    let x = dynamics.forward(&vec![0.0; controls.num_params()], diag.as_vec(), |_, _| Ok(())).unwrap();
    let worst = x.iter().zip(diag.as_vec()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    assert!(worst < 1e-12);
}
