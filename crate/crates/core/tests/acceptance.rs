//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

mod common;

use std::f64::consts::PI;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use purestate::basis::{self, f2, q2_admissible, verify_basis, DEFAULT_VERIFY_CAP};
use purestate::cli;
use purestate::config::{RunConfig, TargetIndex};
use purestate::dynamics::{average_fidelity, average_fidelity_from_members, propagate_members, reduced_density, PropagationGrid};
use purestate::objective::integral_penalty;

use common::*;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn within(elapsed: Duration, limit_s: u64) -> bool {
    elapsed <= Duration::from_secs(limit_s)
}

fn basis_suite() -> Outcome {
    let start = Instant::now();
    let failing: Vec<usize> = (2..=16)
        .filter(|&n| !verify_basis(n, DEFAULT_VERIFY_CAP).map(|r| r.all_ok()).unwrap_or(false))
        .collect();
    let elapsed = start.elapsed();
    outcome(
        failing.is_empty() && within(elapsed, 30),
        format!("n = 2..16, failing {failing:?}, {:.1} s", elapsed.as_secs_f64()),
    )
}

/// Smallest eigenvalue of a 2x2 Hermitian matrix in closed form.
fn min_eigenvalue_2x2(m: &nalgebra::DMatrix<num_complex::Complex64>) -> f64 {
    let (a, d, b) = (m[(0, 0)].re, m[(1, 1)].re, m[(0, 1)]);
    0.5 * (a + d) - (0.25 * (a - d) * (a - d) + b.norm_sqr()).sqrt()
}

fn q2_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut disagreements = 0;
    for _ in 0..10_000 {
        let (z00, z11, z10) = (rng.random_range(-2.0..=2.0), rng.random_range(-2.0..=2.0), rng.random_range(-2.0..=2.0));
        let oracle = min_eigenvalue_2x2(&f2(z00, z11, z10)) >= -1e-10;
        if oracle != q2_admissible(z00, z11, z10) {
            disagreements += 1;
        }
    }
    let explicit = q2_admissible(0.5, 0.5, -0.5);
    let elapsed = start.elapsed();
    outcome(
        disagreements == 0 && explicit && within(elapsed, 10),
        format!(
            "{disagreements} disagreements in 10000 samples, (1/2, 1/2, -1/2) admissible: {explicit}, {:.2} s",
            elapsed.as_secs_f64()
        ),
    )
}

fn linearity() -> Outcome {
    let start = Instant::now();
    let m = 1;
    let problem = objective_problem(m);
    let alpha = random_vector(problem.num_params(), 8.0, 31);
    let (ensemble, final_ensemble) = problem.total_cost_from(&alpha, &problem.rho0).unwrap();
    let members = basis::ensemble_members(&[2, 2], &[0, 1], &[]).unwrap();
    let mean = members
        .iter()
        .map(|r| problem.total_cost_from(&alpha, r).unwrap().0.total)
        .sum::<f64>()
        / members.len() as f64;
    let finals = propagate_members(&problem.dynamics(), &alpha, &members).unwrap();
    let brute = average_fidelity_from_members(&finals, m).unwrap();
    let fidelity = average_fidelity(&final_ensemble, m).unwrap();
    let (cost_gap, fid_gap) = ((ensemble.total - mean).abs(), (fidelity - brute).abs());
    let elapsed = start.elapsed();
    outcome(
        cost_gap < 1e-9 && fid_gap < 1e-9 && within(elapsed, 60),
        format!("N = 4, cost gap {cost_gap:.2e}, fidelity gap {fid_gap:.2e}, {:.1} s", elapsed.as_secs_f64()),
    )
}

/// Two coupled decaying qubits, so `N = 4` with a 16-member ensemble.
fn objective_problem(target: usize) -> purestate::objective::ControlProblem {
    use purestate::control::{ControlParameterization, SubsystemControl};
    use purestate::objective::{ControlProblem, ObjectiveSpec};
    use purestate::system::{CompositeSystem, SubsystemSpec};
    let sys = CompositeSystem::new(
        vec![
            SubsystemSpec::new(2, 4.41666, 0.0).with_t1(2.0).with_t2(1.5),
            SubsystemSpec::new(2, 4.51, 0.0).with_t1(3.0),
        ],
        &[(0, 1, 2.5)],
    )
    .unwrap();
    let controls = ControlParameterization::new(
        0.4,
        vec![SubsystemControl::new(8, vec![0.0, 3.0]), SubsystemControl::new(8, vec![0.0])],
    )
    .unwrap();
    let spec = ObjectiveSpec {
        gamma1: 1e-4,
        gamma2: 1e-2,
        ..ObjectiveSpec::new(target)
    };
    ControlProblem::new(sys, controls, PropagationGrid::new(0.4, 4000).unwrap(), spec, basis::ensemble_state(4).unwrap()).unwrap()
}

fn integrator() -> Outcome {
    let rabi = rabi_error(5.0, 1.0, 10_000);
    let decay = decay_error(0.5, 1.0, 10_000);
    let ratio = convergence_ratio(5.0, 1.0, 200);
    let (purity, _) = drift_along_trajectory(false, 0.5, 5000);
    let (_, trace) = drift_along_trajectory(true, 0.5, 5000);
    outcome(
        rabi < 1e-4 && decay < 1e-6 && (3.6..=4.4).contains(&ratio) && purity < 1e-8 && trace < 1e-10,
        format!("rabi {rabi:.2e}, decay {decay:.2e}, ratio {ratio:.3}, purity drift {purity:.2e}, trace drift {trace:.2e}"),
    )
}

fn desk_config() -> RunConfig {
    RunConfig::from_file(Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/desk_reset.cfg")).unwrap()
}

fn gradient_exactness() -> Outcome {
    let start = Instant::now();
    let cfg = desk_config();
    let report = cli::run_gradcheck(&cfg, None, Some(7), 24).unwrap();
    let coords = report.best.len();
    let worst = report.max_error();
    let elapsed = start.elapsed();
    outcome(
        coords >= 20 && worst <= 1e-6 && within(elapsed, 300),
        format!(
            "{coords} coordinates, gamma1 = {:e}, gamma2 = {:e}, max relative error {worst:.2e}, {:.1} s",
            cfg.objective.gamma1,
            cfg.objective.gamma2,
            elapsed.as_secs_f64()
        ),
    )
}

/// Runs the desk optimization toward `levels` and reports the cost history
/// and per-subsystem fidelities averaged over the nine basis members.
struct DeskRun {
    costs: Vec<f64>,
    termination: String,
    qudit_target: f64,
    cavity_ground: f64,
    elapsed: Duration,
}

fn desk_run(levels: [usize; 2], out: &Path) -> DeskRun {
    let start = Instant::now();
    let mut cfg = desk_config();
    cfg.target.index = TargetIndex::Levels(levels.to_vec());
    let outputs = cli::run_optimize(&cfg, None, out, |_| {}).unwrap();
    let setup = cli::setup(&cfg).unwrap();
    let history = std::fs::read_to_string(out.join("history.csv")).unwrap();
    let costs: Vec<f64> = history
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    let alpha = cli::read_alpha(&out.join("alpha.csv"), &setup.problem.controls).unwrap();
    let members = basis::ensemble_members(&[3, 3], &[0], &[1]).unwrap();
    let finals = propagate_members(&setup.problem.dynamics(), &alpha, &members).unwrap();
    let sys = &setup.problem.system;
    let mean = |q: usize, level: usize| {
        finals
            .iter()
            .map(|r| reduced_density(sys, r, q).unwrap().matrix()[(level, level)].re)
            .sum::<f64>()
            / finals.len() as f64
    };
    DeskRun {
        costs,
        termination: outputs.summary.termination.unwrap_or_default(),
        qudit_target: mean(0, levels[0]),
        cavity_ground: mean(1, 0),
        elapsed: start.elapsed(),
    }
}

fn desk_reset(run: &DeskRun) -> Outcome {
    let monotone = run.costs.windows(2).all(|w| w[1] <= w[0]);
    let drop = run.costs[0] / run.costs[run.costs.len() - 1];
    outcome(
        monotone && drop >= 100.0 && run.qudit_target >= 0.95 && within(run.elapsed, 1800),
        format!(
            "monotone {monotone}, cost {:.4} -> {:.4} ({drop:.1}x over {} iterations, {}), qudit ground fidelity {:.4}, {:.0} s",
            run.costs[0],
            run.costs[run.costs.len() - 1],
            run.costs.len() - 1,
            run.termination,
            run.qudit_target,
            run.elapsed.as_secs_f64()
        ),
    )
}

fn penalty_quadrature() -> Outcome {
    let grid = PropagationGrid::new(1.0, 10_000).unwrap();
    let value = integral_penalty(&vec![1.0; grid.steps + 1], &grid, 1.0, 0.1).unwrap();
    // ∫₀¹ exp(-((t-1)/a)²)/a dt = (√π/2) erf(1/a), and erf(10) rounds to 1.
    let exact = PI.sqrt() / 2.0;
    let err = (value - exact).abs();
    outcome(err < 1e-6, format!("trapezoid {value:.9}, closed form {exact:.9}, error {err:.2e}"))
}

fn excited_target(run: &DeskRun) -> Outcome {
    outcome(
        run.qudit_target >= 0.90 && run.cavity_ground >= 0.90,
        format!(
            "qudit |1> fidelity {:.4}, cavity ground fidelity {:.4} ({} iterations, {})",
            run.qudit_target,
            run.cavity_ground,
            run.costs.len() - 1,
            run.termination
        ),
    )
}

fn main() -> ExitCode {
    let dir = tempfile::tempdir().unwrap();
    let (reset, excited) = std::thread::scope(|s| {
        let reset = s.spawn(|| desk_run([0, 0], &dir.path().join("reset")));
        let excited = s.spawn(|| desk_run([1, 0], &dir.path().join("excited")));
        (reset.join().unwrap(), excited.join().unwrap())
    });
    let results = [
        ("1 basis suite", basis_suite()),
        ("2 Q2 equivalence", q2_equivalence()),
        ("3 ensemble linearity", linearity()),
        ("4 integrator", integrator()),
        ("5 gradient exactness", gradient_exactness()),
        ("6 desk-scale reset", desk_reset(&reset)),
        ("7 penalty quadrature", penalty_quadrature()),
        ("8 excited-state target", excited_target(&excited)),
    ];
    let mut all = true;
    for (name, o) in &results {
        all &= o.pass;
        println!("{} criterion {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
