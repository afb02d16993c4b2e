#![allow(dead_code)]

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use purestate::control::{ControlParameterization, SubsystemControl};
use purestate::density::DensityMatrix;
use purestate::dynamics::{imr_step, Liouvillian, PropagationGrid};
use purestate::solver::SolverOptions;
use purestate::system::{CompositeSystem, SubsystemSpec};

/// Two-level system without decay.
pub fn closed_qubit() -> CompositeSystem {
    CompositeSystem::new(vec![SubsystemSpec::new(2, 4.0, 0.0)], &[]).unwrap()
}

/// Runs `steps` midpoint steps under the constant control `d = amplitude`
/// from the ground state and returns the excited population after each.
pub fn rabi_populations(amplitude: f64, final_time: f64, steps: usize) -> Vec<f64> {
    let sys = closed_qubit();
    let l = Liouvillian::new(&sys, true).unwrap();
    let gen = l.at(&[amplitude, 0.0]);
    let opts = SolverOptions::default();
    let dt = final_time / steps as f64;
    let mut x = DensityMatrix::basis_state(2, 0).as_vec().to_vec();
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        x = imr_step(&x, dt, &gen, &opts).unwrap();
        out.push(x[3].re);
    }
    out
}

/// Largest deviation of the Rabi populations from `sin²(c t)`.
pub fn rabi_error(amplitude: f64, final_time: f64, steps: usize) -> f64 {
    let dt = final_time / steps as f64;
    rabi_populations(amplitude, final_time, steps)
        .iter()
        .enumerate()
        .map(|(k, p)| (p - (amplitude * dt * (k + 1) as f64).sin().powi(2)).abs())
        .fold(0.0, f64::max)
}

/// Largest deviation of the excited population of a decaying qubit from
/// `exp(-t/T₁)`.
pub fn decay_error(t1: f64, final_time: f64, steps: usize) -> f64 {
    let sys = CompositeSystem::new(vec![SubsystemSpec::new(2, 4.0, 0.0).with_t1(t1)], &[]).unwrap();
    let l = Liouvillian::new(&sys, false).unwrap();
    let gen = l.at(&vec![0.0; l.num_terms()]);
    let opts = SolverOptions::default();
    let dt = final_time / steps as f64;
    let mut x = DensityMatrix::basis_state(2, 1).as_vec().to_vec();
    let mut worst: f64 = 0.0;
    for k in 1..=steps {
        x = imr_step(&x, dt, &gen, &opts).unwrap();
        worst = worst.max((x[3].re - (-(k as f64) * dt / t1).exp()).abs());
    }
    worst
}

/// Ratio of Rabi errors at `steps` and `2 * steps`.
pub fn convergence_ratio(amplitude: f64, final_time: f64, steps: usize) -> f64 {
    let final_err = |n: usize| {
        let p = *rabi_populations(amplitude, final_time, n).last().unwrap();
        (p - (amplitude * final_time).sin().powi(2)).abs()
    };
    final_err(steps) / final_err(2 * steps)
}

/// Qudit and cavity with the reset-experiment rates, optionally closed.
pub fn qudit_cavity(levels: usize, open: bool) -> CompositeSystem {
    let mut qudit = SubsystemSpec::new(3, 4.41666, 230.56);
    let mut cavity = SubsystemSpec::new(levels, 6.84081, 0.0);
    if open {
        qudit = qudit.with_t1(80.0).with_t2(26.0);
        cavity = cavity.with_t1(0.3892);
    }
    CompositeSystem::new(vec![qudit, cavity], &[(0, 1, 1.176)]).unwrap()
}

pub fn reset_controls(final_time: f64, num_splines: usize) -> ControlParameterization {
    let xi = purestate::system::mhz_to_angular(230.56);
    ControlParameterization::new(
        final_time,
        vec![
            SubsystemControl::new(num_splines, vec![0.0, -xi]),
            SubsystemControl::new(num_splines, vec![0.0]),
        ],
    )
    .unwrap()
}

pub fn random_vector(n: usize, scale: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| scale * rng.random_range(-1.0..1.0)).collect()
}

pub fn random_pure_state(n: usize, seed: u64) -> DensityMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut psi: Vec<C64> = (0..n).map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
    let norm = psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    psi.iter_mut().for_each(|z| *z /= norm);
    DensityMatrix::pure(&psi)
}

/// Largest deviations of purity from one and of trace from one along a
/// controlled trajectory of a 3x3 qudit-cavity system.
pub fn drift_along_trajectory(open: bool, final_time: f64, steps: usize) -> (f64, f64) {
    let sys = qudit_cavity(3, open);
    let controls = reset_controls(final_time, 20);
    let l = Liouvillian::new(&sys, true).unwrap();
    let alpha = random_vector(controls.num_params(), 3.0, 11);
    let dynamics = purestate::dynamics::Dynamics {
        liouvillian: &l,
        controls: &controls,
        grid: PropagationGrid::new(final_time, steps).unwrap(),
        solver: SolverOptions::default(),
    };
    let rho0 = random_pure_state(sys.dim(), 5);
    let n = sys.dim();
    let (mut purity, mut trace) = (0.0f64, 0.0f64);
    dynamics
        .forward(&alpha, rho0.as_vec(), |_, x| {
            let rho = DensityMatrix::from_vec(n, x.to_vec());
            purity = purity.max((rho.purity() - 1.0).abs());
            trace = trace.max((rho.trace() - 1.0).norm());
            Ok(())
        })
        .unwrap();
    (purity, trace)
}
