//! Exact gradients of the discrete total cost.
//!
//! One forward step is `x_{n+1} = A_n⁻¹ B_n x_n` with `A_n = I - h/2 L_n` and
//! `B_n = I + h/2 L_n`. With penalty weights `p_n = γ₂ c_n w(t_n)` the cost is
//! `Re⟨O, x_N⟩ + Σ_n p_n Re⟨O, x_n⟩ + γ₁‖α‖²`, and the backward sweep is
//!
//! ```text
//! λ_N = (1 + p_N) O
//! μ_n = A_n⁻† λ_{n+1}
//! λ_n = B_n† μ_n + p_n O
//! ∂J/∂c_k += Re⟨μ_n, (h/2) L_k (x_n + x_{n+1})⟩
//! ```
//!
//! where `c_k` are the real and imaginary parts of the controls at the step
//! midpoint. The chain rule through the splines finishes the gradient.

use num_complex::Complex64 as C64;
use rayon::prelude::*;

use crate::dynamics::{Dynamics, Stepper};
use crate::error::{Error, Result};
use crate::objective::{penalty_weight, tikhonov, ControlProblem, CostBreakdown};

/// A cost with an exact gradient.
pub trait Differentiable: Sync {
    fn num_params(&self) -> usize;
    fn evaluate(&self, alpha: &[f64]) -> Result<CostBreakdown>;
    fn evaluate_with_gradient(&self, alpha: &[f64]) -> Result<(CostBreakdown, Vec<f64>)>;
}

impl Differentiable for ControlProblem {
    fn num_params(&self) -> usize {
        ControlProblem::num_params(self)
    }

    fn evaluate(&self, alpha: &[f64]) -> Result<CostBreakdown> {
        self.total_cost(alpha)
    }

    fn evaluate_with_gradient(&self, alpha: &[f64]) -> Result<(CostBreakdown, Vec<f64>)> {
        gradient(self, alpha)
    }
}

/// Forward states kept for the backward sweep: every state, or every
/// `stride`-th one with the rest recomputed segment by segment.
#[derive(Clone, Debug)]
pub struct CheckpointStore {
    stride: usize,
    steps: usize,
    checkpoints: Vec<Vec<C64>>,
    last: Vec<C64>,
}

impl CheckpointStore {
    /// Picks the stride: 1 when all `steps + 1` states fit in `budget` bytes,
    /// otherwise about `√steps`.
    pub fn stride_for(state_len: usize, steps: usize, budget: usize) -> usize {
        let bytes = (steps + 1).saturating_mul(state_len).saturating_mul(std::mem::size_of::<C64>());
        if bytes <= budget {
            1
        } else {
            ((steps as f64).sqrt().ceil() as usize).max(2)
        }
    }

    pub fn new(stride: usize, steps: usize) -> Self {
        CheckpointStore {
            stride: stride.max(1),
            steps,
            checkpoints: Vec::new(),
            last: Vec::new(),
        }
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn stored(&self) -> usize {
        self.checkpoints.len()
    }

    fn record(&mut self, n: usize, x: &[C64]) {
        if n % self.stride == 0 {
            self.checkpoints.push(x.to_vec());
        }
        if n == self.steps {
            self.last = x.to_vec();
        }
    }

    /// States `x_start ..= x_end` of the segment that ends at `end`.
    fn segment(&self, dynamics: &Dynamics<'_>, alpha: &[f64], seg: usize) -> Result<(usize, Vec<Vec<C64>>)> {
        let start = seg * self.stride;
        let end = (start + self.stride).min(self.steps);
        let mut states = Vec::with_capacity(end - start + 1);
        if self.stride == 1 {
            states.push(self.checkpoints[start].clone());
        } else {
            dynamics.forward_range(alpha, &self.checkpoints[seg], start, end - 1, &mut |_, x: &[C64]| {
                states.push(x.to_vec());
                Ok(())
            })?;
        }
        states.push(if end == self.steps {
            self.last.clone()
        } else {
            self.checkpoints[end / self.stride].clone()
        });
        Ok((start, states))
    }
}

/// Cost and exact gradient of the discrete total cost.
pub fn gradient(problem: &ControlProblem, alpha: &[f64]) -> Result<(CostBreakdown, Vec<f64>)> {
    let dynamics = problem.dynamics();
    let grid = problem.grid;
    let steps = grid.steps;
    let h = grid.dt();
    let obs = &problem.observable;
    let spec = &problem.spec;
    let x0 = problem.rho0.as_vec();

    let weight = |n: usize| {
        if spec.gamma2 == 0.0 {
            0.0
        } else {
            spec.gamma2 * grid.trapezoid_weight(n) * penalty_weight(grid.time(n), grid.final_time, spec.penalty_width)
        }
    };

    let stride = CheckpointStore::stride_for(x0.len(), steps, problem.checkpoint_budget);
    let mut store = CheckpointStore::new(stride, steps);
    let mut penalty = 0.0;
    let last = dynamics.forward(alpha, x0, |n, x| {
        store.record(n, x);
        let p = weight(n);
        if p != 0.0 {
            penalty += p * obs.expectation(x);
        }
        Ok(())
    })?;
    let cost = CostBreakdown::new(obs.expectation(&last), tikhonov(alpha, spec.gamma1), penalty);

    let o = obs.vectorized();
    let mut lam: Vec<C64> = o.iter().map(|v| v * (1.0 + weight(steps))).collect();
    let mut mu = vec![C64::new(0.0, 0.0); lam.len()];
    let mut next = lam.clone();
    let mut z = lam.clone();
    let mut stepper = Stepper::new(lam.len(), &problem.solver);
    let liou = &problem.liouvillian;
    let controls = &problem.controls;
    let mut grad: Vec<f64> = alpha.iter().map(|a| 2.0 * spec.gamma1 * a).collect();

    let segments = steps.div_ceil(stride);
    for seg in (0..segments).rev() {
        let (start, states) = store.segment(&dynamics, alpha, seg)?;
        for n in (start..start + states.len() - 1).rev() {
            let (xn, xn1) = (&states[n - start], &states[n - start + 1]);
            let tmid = grid.midpoint(n);
            let g = liou.at_time(controls, alpha, tmid);
            stepper
                .adjoint_step(&g, &lam, &mut mu, &mut next, h)
                .map_err(|e| Error::StepFailed {
                    step: n,
                    source: Box::new(e),
                })?;
            for ((zi, a), b) in z.iter_mut().zip(xn).zip(xn1) {
                *zi = (a + b) * (0.5 * h);
            }
            for q in 0..controls.num_subsystems() {
                let g_re = liou.term_inner(2 * q, &mu, &z).re;
                let g_im = liou.term_inner(2 * q + 1, &mu, &z).re;
                if g_re == 0.0 && g_im == 0.0 {
                    continue;
                }
                let carriers = &controls.subsystems()[q].carriers;
                for (s, sv) in controls.active_splines(q, tmid) {
                    for (k, w) in carriers.iter().enumerate() {
                        let (sin, cos) = (w * tmid).sin_cos();
                        let idx = controls.index(q, s, k);
                        grad[idx] += sv * (g_re * cos + g_im * sin);
                        grad[idx + 1] += sv * (g_im * cos - g_re * sin);
                    }
                }
            }
            let p = weight(n);
            for ((l, nx), ov) in lam.iter_mut().zip(&next).zip(&o) {
                *l = nx + ov * p;
            }
        }
    }
    Ok((cost, grad))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FdRow {
    pub coord: usize,
    pub eps: f64,
    pub adjoint: f64,
    pub fd: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FdReport {
    /// One row per coordinate and step size.
    pub rows: Vec<FdRow>,
    /// Smallest relative error over the step sizes, per coordinate.
    pub best: Vec<(usize, f64)>,
}

impl FdReport {
    pub fn max_error(&self) -> f64 {
        self.best.iter().map(|(_, e)| *e).fold(0.0, f64::max)
    }

    /// Coordinates whose best error exceeds `tol`.
    pub fn failures(&self, tol: f64) -> Vec<usize> {
        self.best.iter().filter(|(_, e)| *e > tol).map(|(c, _)| *c).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("coord,eps,adjoint,fd,rel_err\n");
        for r in &self.rows {
            out.push_str(&format!("{},{:e},{:.16e},{:.16e},{:.6e}\n", r.coord, r.eps, r.adjoint, r.fd, r.rel_err));
        }
        out
    }
}

pub const DEFAULT_FD_STEPS: [f64; 5] = [1e-3, 1e-4, 1e-5, 1e-6, 1e-7];

pub fn relative_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Compares `gradient` against central differences of `problem` on the
/// sampled coordinates.
pub fn fd_check_against<P: Differentiable + ?Sized>(
    problem: &P,
    alpha: &[f64],
    gradient: &[f64],
    coords: &[usize],
    eps_list: &[f64],
) -> Result<FdReport> {
    if coords.is_empty() || eps_list.is_empty() {
        return Err(Error::InvalidParameter("finite-difference check needs coordinates and step sizes".into()));
    }
    if let Some(&c) = coords.iter().find(|&&c| c >= alpha.len()) {
        return Err(Error::IndexOutOfRange(format!("coordinate {c} of {}", alpha.len())));
    }
    let jobs: Vec<(usize, f64)> = coords.iter().flat_map(|&c| eps_list.iter().map(move |&e| (c, e))).collect();
    let rows = jobs
        .par_iter()
        .map(|&(coord, eps)| {
            let mut a = alpha.to_vec();
            a[coord] = alpha[coord] + eps;
            let plus = problem.evaluate(&a)?.total;
            a[coord] = alpha[coord] - eps;
            let minus = problem.evaluate(&a)?.total;
            let fd = (plus - minus) / (2.0 * eps);
            Ok(FdRow {
                coord,
                eps,
                adjoint: gradient[coord],
                fd,
                rel_err: relative_error(gradient[coord], fd),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let best = coords
        .iter()
        .map(|&c| {
            let e = rows.iter().filter(|r| r.coord == c).map(|r| r.rel_err).fold(f64::INFINITY, f64::min);
            (c, e)
        })
        .collect();
    Ok(FdReport { rows, best })
}

/// Finite-difference check of the problem's own gradient.
pub fn fd_check<P: Differentiable + ?Sized>(problem: &P, alpha: &[f64], coords: &[usize], eps_list: &[f64]) -> Result<FdReport> {
    let (_, grad) = problem.evaluate_with_gradient(alpha)?;
    fd_check_against(problem, alpha, &grad, coords, eps_list)
}
