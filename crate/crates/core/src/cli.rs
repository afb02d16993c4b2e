//! Subcommand implementations and file output.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adjoint::{fd_check, FdReport, DEFAULT_FD_STEPS};
use crate::basis::{self, BasisReport, DEFAULT_VERIFY_CAP};
use crate::config::{InitialState, RunConfig, TargetIndex};
use crate::control::{ControlParameterization, ControlVector, SubsystemControl};
use crate::density::DensityMatrix;
use crate::dynamics::{average_fidelity_from_members, propagate, propagate_members, reduced_density, PropagationGrid};
use crate::error::{Error, Result};
use crate::objective::{final_cost, ControlProblem, CostBreakdown, ObjectiveSpec};
use crate::optimize::{coefficient_bounds, initial_guess, minimize_with, Bounds, IterationRecord, OptimizationResult};
use crate::system::{mhz_to_angular, CompositeSystem};

/// Largest ensemble whose members are also propagated one by one as a
/// cross-check of the ensemble fidelity.
pub const MEMBER_CHECK_LIMIT: usize = 100;

/// Everything a subcommand needs, assembled from a configuration.
#[derive(Clone, Debug)]
pub struct Setup {
    pub problem: ControlProblem,
    pub bounds: Bounds,
    /// Subsystems spanned by the ensemble, and those held in the ground state.
    pub ensemble: Option<(Vec<usize>, Vec<usize>)>,
    /// Target state vector.
    pub target: DVector<C64>,
    pub target_index: usize,
}

fn data_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Data {
        path: path.display().to_string(),
        message: message.into(),
    }
}

/// Reads a complex matrix stored as `row,col,re,im` (0-based indices).
pub fn read_complex_matrix(path: &Path, n: usize) -> Result<DMatrix<C64>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| data_err(path, e.to_string()))?;
    let mut m = DMatrix::zeros(n, n);
    let mut seen = vec![false; n * n];
    for record in reader.deserialize::<(usize, usize, f64, f64)>() {
        let (i, j, re, im) = record.map_err(|e| data_err(path, e.to_string()))?;
        if i >= n || j >= n {
            return Err(data_err(path, format!("entry ({i}, {j}) outside a {n}x{n} matrix")));
        }
        if std::mem::replace(&mut seen[i * n + j], true) {
            return Err(data_err(path, format!("entry ({i}, {j}) given twice")));
        }
        m[(i, j)] = C64::new(re, im);
    }
    Ok(m)
}

pub fn write_complex_matrix(path: &Path, m: &DMatrix<C64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| data_err(path, e.to_string()))?;
    let mut rows = vec![["row".to_string(), "col".into(), "re".into(), "im".into()]];
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            let z = m[(i, j)];
            rows.push([i.to_string(), j.to_string(), format!("{:e}", z.re), format!("{:e}", z.im)]);
        }
    }
    for r in rows {
        w.write_record(&r).map_err(|e| data_err(path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads coefficients stored as `q,s,n,re,im` with 1-based indices.
pub fn read_alpha(path: &Path, param: &ControlParameterization) -> Result<ControlVector> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| data_err(path, e.to_string()))?;
    let mut alpha = ControlVector::zeros(param);
    let mut seen = vec![false; param.num_params()];
    for record in reader.deserialize::<(usize, usize, usize, f64, f64)>() {
        let (q, s, n, re, im) = record.map_err(|e| data_err(path, e.to_string()))?;
        let fits = q >= 1
            && q <= param.num_subsystems()
            && s >= 1
            && s <= param.subsystems()[q - 1].num_splines
            && n >= 1
            && n <= param.subsystems()[q - 1].num_carriers();
        if !fits {
            return Err(data_err(path, format!("coefficient ({q}, {s}, {n}) does not fit the control layout")));
        }
        let k = param.index(q - 1, s - 1, n - 1);
        if std::mem::replace(&mut seen[k], true) {
            return Err(data_err(path, format!("coefficient ({q}, {s}, {n}) given twice")));
        }
        alpha[k] = re;
        alpha[k + 1] = im;
    }
    if seen.iter().step_by(2).any(|s| !s) {
        return Err(data_err(path, "missing coefficients"));
    }
    Ok(alpha)
}

pub fn write_alpha(path: &Path, param: &ControlParameterization, alpha: &[f64]) -> Result<()> {
    let mut out = String::from("q,s,n,re,im\n");
    for (q, sub) in param.subsystems().iter().enumerate() {
        for s in 0..sub.num_splines {
            for n in 0..sub.num_carriers() {
                let k = param.index(q, s, n);
                let _ = writeln!(out, "{},{},{},{:e},{:e}", q + 1, s + 1, n + 1, alpha[k], alpha[k + 1]);
            }
        }
    }
    write_text(path, &out)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Builds the problem, bounds and target described by `config`.
pub fn setup(config: &RunConfig) -> Result<Setup> {
    let system = CompositeSystem::new(config.subsystems.clone(), &config.crosskerr)?;
    let n = system.dim();
    let controls = ControlParameterization::new(
        config.final_time_us,
        config
            .controls
            .iter()
            .map(|c| SubsystemControl::new(c.num_splines, c.carrier_freqs_mhz.iter().map(|&f| mhz_to_angular(f)).collect()))
            .collect(),
    )?;
    let grid = PropagationGrid::new(config.final_time_us, config.steps)?;
    let m = match &config.target.index {
        TargetIndex::Composite(m) => *m,
        TargetIndex::Levels(l) => system.index_of(l)?,
    };
    let transform = match &config.target.unitary_file {
        Some(p) => Some(read_complex_matrix(&config.resolve(p), n)?),
        None => None,
    };
    let mut target = DVector::zeros(n);
    target[m] = C64::new(1.0, 0.0);
    if let Some(u) = &transform {
        target = u.adjoint() * target;
    }
    let all: Vec<usize> = (0..system.num_subsystems()).collect();
    let (rho0, ensemble) = match &config.target.initial_state {
        InitialState::FullEnsemble => (basis::ensemble_state(n)?, Some((all, Vec::new()))),
        InitialState::PartialEnsemble(b) => {
            let ground: Vec<usize> = all.iter().copied().filter(|q| !b.contains(q)).collect();
            (
                basis::ensemble_state_partial(&system.levels(), b, &ground)?,
                Some((b.clone(), ground)),
            )
        }
        InitialState::File(p) => (DensityMatrix::from_matrix(read_complex_matrix(&config.resolve(p), n)?)?, None),
    };
    let spec = ObjectiveSpec {
        target_index: m,
        transform,
        gamma1: config.objective.gamma1,
        gamma2: config.objective.gamma2,
        penalty_width: config.objective.penalty_width_us,
    };
    let lab_bounds: Vec<Option<f64>> = config.controls.iter().map(|c| c.lab_amp_bound_mhz.map(mhz_to_angular)).collect();
    let bounds = coefficient_bounds(&controls, &lab_bounds)?;
    let problem = ControlProblem::new(system, controls, grid, spec, rho0)?;
    Ok(Setup {
        problem,
        bounds,
        ensemble,
        target,
        target_index: m,
    })
}

/// Per-coordinate scale for random starting points: `fraction` of each box.
/// Free coordinates borrow the largest finite box, and start at zero when
/// nothing is bounded.
pub fn start_scale(bounds: &Bounds, fraction: f64) -> Vec<f64> {
    let widest = bounds.upper.iter().copied().filter(|b| b.is_finite()).fold(0.0, f64::max);
    bounds
        .upper
        .iter()
        .map(|&b| fraction * if b.is_finite() { b } else { widest })
        .collect()
}

/// Fidelity report of one final state.
#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub command: String,
    pub termination: Option<String>,
    pub iterations: Option<usize>,
    pub cost: CostBreakdown,
    /// `ψ†ρ(T)ψ` for the target state `ψ`.
    pub average_fidelity: f64,
    /// The same average computed from individually propagated basis states.
    pub member_fidelity: Option<f64>,
    /// Per subsystem: target level, its population, and the ground population.
    pub subsystems: Vec<(usize, f64, f64)>,
    pub files: Vec<String>,
}

impl Summary {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "command = {}", self.command);
        if let Some(t) = &self.termination {
            let _ = writeln!(out, "termination = {t}");
        }
        if let Some(i) = self.iterations {
            let _ = writeln!(out, "iterations = {i}");
        }
        let c = &self.cost;
        let _ = writeln!(out, "total_cost = {:e}", c.total);
        let _ = writeln!(out, "final_cost = {:e}", c.final_cost);
        let _ = writeln!(out, "tikhonov = {:e}", c.tikhonov);
        let _ = writeln!(out, "penalty = {:e}", c.penalty);
        let _ = writeln!(out, "average_fidelity = {:.8}", self.average_fidelity);
        if let Some(f) = self.member_fidelity {
            let _ = writeln!(out, "member_average_fidelity = {f:.8}");
        }
        for (q, (level, target, ground)) in self.subsystems.iter().enumerate() {
            let _ = writeln!(out, "subsystem_{}_target_level = {level}", q + 1);
            let _ = writeln!(out, "subsystem_{}_target_fidelity = {target:.8}", q + 1);
            let _ = writeln!(out, "subsystem_{}_ground_fidelity = {ground:.8}", q + 1);
        }
        let _ = writeln!(out, "files = {}", self.files.join(", "));
        out
    }
}

#[derive(Clone, Debug)]
pub struct RunOutputs {
    pub directory: PathBuf,
    pub summary: Summary,
    pub final_state: DensityMatrix,
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Samples per µs used for spectra: four times the highest lab carrier.
fn spectrum_rate(problem: &ControlProblem, q: usize) -> Result<f64> {
    let omega = problem.system.omega(q)?;
    let highest = problem.controls.subsystems()[q]
        .carriers
        .iter()
        .map(|w| ((omega + w) / (2.0 * PI)).abs())
        .fold(0.0, f64::max);
    Ok((4.0 * highest).max(16.0 / problem.grid.final_time))
}

fn write_spectra(setup: &Setup, alpha: &[f64], dir: &Path, files: &mut Vec<String>) -> Result<()> {
    let p = &setup.problem;
    for q in 0..p.system.num_subsystems() {
        let rate = spectrum_rate(p, q)?;
        let spec = p.controls.control_spectrum(alpha, q, p.system.omega(q)?, rate)?;
        let mut out = String::from("freq_ghz,magnitude\n");
        for (f, mag) in spec {
            let _ = writeln!(out, "{f:.9},{mag:e}");
        }
        let name = format!("spectrum_q{}.csv", q + 1);
        write_text(&dir.join(&name), &out)?;
        files.push(name);
    }
    Ok(())
}

/// Propagates the configured initial state under `alpha` and writes the
/// trajectory, controls, spectra, final state and summary.
pub fn run_simulate(config: &RunConfig, alpha: Option<ControlVector>, out_dir: &Path) -> Result<RunOutputs> {
    let setup = setup(config)?;
    let alpha = alpha.unwrap_or_else(|| ControlVector::zeros(&setup.problem.controls));
    simulate_with(&setup, config, &alpha, out_dir, "simulate", None)
}

fn simulate_with(
    setup: &Setup,
    config: &RunConfig,
    alpha: &[f64],
    dir: &Path,
    command: &str,
    optimization: Option<&OptimizationResult>,
) -> Result<RunOutputs> {
    ensure_dir(dir)?;
    let p = &setup.problem;
    p.controls.check_len(alpha)?;
    let sys = &p.system;
    let dynamics = p.dynamics();
    let stride = config.output.stride;
    let traj = propagate(sys, &dynamics, alpha, &p.rho0, &p.observable, stride)?;
    let mut files = Vec::new();

    let mut out = String::from("t_us");
    for q in 0..sys.num_subsystems() {
        let _ = write!(out, ",energy_q{}", q + 1);
    }
    out.push_str(",entropy,objective_integrand\n");
    for k in 0..traj.len() {
        let _ = write!(out, "{}", traj.times[k]);
        for e in &traj.energies[k] {
            let _ = write!(out, ",{e:e}");
        }
        let _ = writeln!(out, ",{:e},{:e}", traj.entropy[k], traj.integrand[k]);
    }
    write_text(&dir.join("trajectory.csv"), &out)?;
    files.push("trajectory.csv".to_string());

    for q in 0..sys.num_subsystems() {
        let omega = sys.omega(q)?;
        let mut out = String::from("t_us,re_d,im_d,f_lab\n");
        for &t in &traj.times {
            let d = p.controls.rotating_control(alpha, q, t);
            let f = p.controls.lab_control(alpha, q, t, omega);
            let _ = writeln!(out, "{t},{:e},{:e},{:e}", d.re, d.im, f);
        }
        let name = format!("controls_q{}.csv", q + 1);
        write_text(&dir.join(&name), &out)?;
        files.push(name);
    }
    write_spectra(setup, alpha, dir, &mut files)?;

    let rho = &traj.final_state;
    let mut rows = String::from("row,col,re,im\n");
    for i in 0..rho.dim() {
        for j in 0..rho.dim() {
            let z = rho.matrix()[(i, j)];
            let _ = writeln!(rows, "{i},{j},{:e},{:e}", z.re, z.im);
        }
    }
    write_text(&dir.join("final_state.csv"), &rows)?;
    files.push("final_state.csv".to_string());

    let psi = &setup.target;
    let fidelity = (psi.adjoint() * rho.matrix() * psi)[(0, 0)].re;
    let member_fidelity = match &setup.ensemble {
        Some((b, g)) if setup.problem.spec.transform.is_none() => {
            let members = basis::ensemble_members(&sys.levels(), b, g)?;
            if members.len() <= MEMBER_CHECK_LIMIT {
                let finals = propagate_members(&dynamics, alpha, &members)?;
                Some(average_fidelity_from_members(&finals, setup.target_index)?)
            } else {
                None
            }
        }
        _ => None,
    };
    let digits = sys.digits(setup.target_index);
    let subsystems = (0..sys.num_subsystems())
        .map(|q| {
            let red = reduced_density(sys, rho, q)?;
            Ok((digits[q], red.matrix()[(digits[q], digits[q])].re, red.matrix()[(0, 0)].re))
        })
        .collect::<Result<Vec<_>>>()?;
    let final_j = final_cost(&p.observable, rho)?;
    let cost = match optimization {
        Some(o) => o.cost,
        None => {
            let mut c = p.total_cost(alpha)?;
            c.final_cost = final_j;
            c
        }
    };
    files.push("summary.txt".to_string());
    let summary = Summary {
        command: command.to_string(),
        termination: optimization.map(|o| o.termination.to_string()),
        iterations: optimization.map(|o| o.history.len() - 1),
        cost,
        average_fidelity: fidelity,
        member_fidelity,
        subsystems,
        files,
    };
    write_text(&dir.join("summary.txt"), &summary.to_text())?;
    Ok(RunOutputs {
        directory: dir.to_path_buf(),
        summary,
        final_state: traj.final_state,
    })
}

fn history_line(r: &IterationRecord) -> String {
    let mut line = format!(
        "{},{:e},{:e},{:e},{:e},{:e},{:e}",
        r.iter, r.cost.total, r.cost.final_cost, r.cost.tikhonov, r.cost.penalty, r.grad_norm, r.step
    );
    for a in &r.max_amplitude {
        let _ = write!(line, ",{:e}", a / (2.0 * PI));
    }
    line
}

/// Optimizes the controls, then simulates the result. The history is
/// written as iterations complete; `progress` sees every record.
pub fn run_optimize(config: &RunConfig, seed: Option<u64>, out_dir: &Path, mut progress: impl FnMut(&IterationRecord)) -> Result<RunOutputs> {
    ensure_dir(out_dir)?;
    let setup = setup(config)?;
    let p = &setup.problem;
    let seed = seed.unwrap_or(config.optimizer.seed);
    let alpha0 = initial_guess(&start_scale(&setup.bounds, config.optimizer.init_scale), seed);

    let mut history = String::from("iter,total,final_cost,tikhonov,penalty,grad_norm,step");
    for q in 0..p.system.num_subsystems() {
        let _ = write!(history, ",max_amp_q{}", q + 1);
    }
    history.push('\n');
    let history_path = out_dir.join("history.csv");
    let result = minimize_with(p, &alpha0, &setup.bounds, &config.optimizer.options, |r| {
        history.push_str(&history_line(r));
        history.push('\n');
        let _ = fs::write(&history_path, &history);
        progress(r);
    })?;
    write_text(&history_path, &history)?;
    write_alpha(&out_dir.join("alpha.csv"), &p.controls, &result.alpha)?;
    let mut outputs = simulate_with(&setup, config, &result.alpha, out_dir, "optimize", Some(&result))?;
    outputs.summary.files.splice(0..0, ["history.csv".to_string(), "alpha.csv".to_string()]);
    write_text(&out_dir.join("summary.txt"), &outputs.summary.to_text())?;
    Ok(outputs)
}

/// Compares adjoint gradients against central differences on up to
/// `count` coordinates sampled with `seed`.
pub fn run_gradcheck(config: &RunConfig, alpha: Option<ControlVector>, seed: Option<u64>, count: usize) -> Result<FdReport> {
    let setup = setup(config)?;
    let p = &setup.problem;
    let seed = seed.unwrap_or(config.optimizer.seed);
    let alpha = alpha.unwrap_or_else(|| initial_guess(&start_scale(&setup.bounds, 0.1), seed));
    let n = p.num_params();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coords = sample(&mut rng, n, count.min(n)).into_vec();
    coords.sort_unstable();
    fd_check(p, &alpha, &coords, &DEFAULT_FD_STEPS)
}

/// Checks the basis for the configured dimension.
pub fn run_verify_basis(config: &RunConfig) -> Result<(usize, BasisReport)> {
    let n: usize = config.subsystems.iter().map(|s| s.levels).product();
    Ok((n, basis::verify_basis(n, DEFAULT_VERIFY_CAP)?))
}

/// Writes the lab-frame spectrum of every subsystem's control.
pub fn run_spectrum(config: &RunConfig, alpha: Option<ControlVector>, out_dir: &Path) -> Result<Vec<PathBuf>> {
    ensure_dir(out_dir)?;
    let setup = setup(config)?;
    let alpha = alpha.unwrap_or_else(|| ControlVector::zeros(&setup.problem.controls));
    setup.problem.controls.check_len(&alpha)?;
    let mut files = Vec::new();
    write_spectra(&setup, &alpha, out_dir, &mut files)?;
    Ok(files.into_iter().map(|f| out_dir.join(f)).collect())
}
