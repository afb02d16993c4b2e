//! Projected L-BFGS over a box of control coefficients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adjoint::Differentiable;
use crate::control::{ControlParameterization, ControlVector};
use crate::error::{Error, Result};
use crate::objective::{ControlProblem, CostBreakdown};

/// Per-coordinate box `lower ≤ x ≤ upper`; infinite entries are free.
#[derive(Clone, Debug, PartialEq)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn unbounded(n: usize) -> Self {
        Bounds {
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    /// `|x_i| ≤ radius_i`.
    pub fn symmetric(radius: Vec<f64>) -> Self {
        Bounds {
            lower: radius.iter().map(|r| -r).collect(),
            upper: radius,
        }
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.lower.len() != self.upper.len() {
            return Err(Error::DimensionMismatch("bounds have different lengths".into()));
        }
        if self.lower.iter().zip(&self.upper).any(|(l, u)| !(l <= u)) {
            return Err(Error::InvalidParameter("lower bound above upper bound".into()));
        }
        Ok(())
    }

    pub fn project(&self, x: &mut [f64]) {
        for ((v, l), u) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(*l, *u);
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().zip(&self.lower).zip(&self.upper).all(|((v, l), u)| l <= v && v <= u)
    }

    /// `x - P(x - g)`, zero exactly at stationary points of the box problem.
    pub fn projected_gradient(&self, x: &[f64], g: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(g)
            .zip(self.lower.iter().zip(&self.upper))
            .map(|((xi, gi), (l, u))| xi - (xi - gi).clamp(*l, *u))
            .collect()
    }
}

/// Per-coefficient box `|α| ≤ bound_q / (2√2 N_f)` that keeps the lab-frame
/// amplitude of subsystem `q` below `bound_q` (rad/µs). A `None` bound leaves
/// the subsystem free.
pub fn coefficient_bounds(param: &ControlParameterization, lab_bounds: &[Option<f64>]) -> Result<Bounds> {
    if lab_bounds.len() != param.num_subsystems() {
        return Err(Error::DimensionMismatch(format!(
            "{} amplitude bounds for {} subsystems",
            lab_bounds.len(),
            param.num_subsystems()
        )));
    }
    let mut radius = vec![f64::INFINITY; param.num_params()];
    for (q, bound) in lab_bounds.iter().enumerate() {
        if let Some(b) = *bound {
            if !(b > 0.0) {
                return Err(Error::InvalidParameter(format!("amplitude bound for subsystem {} must be positive", q + 1)));
            }
            let nf = param.subsystems()[q].num_carriers() as f64;
            let r = b / (2.0 * std::f64::consts::SQRT_2 * nf);
            radius[param.block(q)].iter_mut().for_each(|v| *v = r);
        }
    }
    Ok(Bounds::symmetric(radius))
}

/// Uniform coefficients in `[-scale_i, scale_i]`, reproducible from `seed`.
pub fn initial_guess(scale: &[f64], seed: u64) -> ControlVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ControlVector(
        scale
            .iter()
            .map(|&s| if s > 0.0 && s.is_finite() { rng.random_range(-s..=s) } else { 0.0 })
            .collect(),
    )
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerOptions {
    pub max_iters: usize,
    pub memory: usize,
    /// Stop once the projected gradient norm falls below this fraction of
    /// its initial value.
    pub grad_tol: f64,
    /// Stop once the total cost falls below this value.
    pub cost_tol: f64,
    pub armijo_c1: f64,
    pub backtrack: f64,
    pub max_trials: usize,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        OptimizerOptions {
            max_iters: 200,
            memory: 10,
            grad_tol: 1e-2,
            cost_tol: 1e-6,
            armijo_c1: 1e-4,
            backtrack: 0.5,
            max_trials: 30,
        }
    }
}

impl OptimizerOptions {
    pub fn validate(&self) -> Result<()> {
        if self.memory == 0 {
            return Err(Error::InvalidParameter("L-BFGS memory must be at least 1".into()));
        }
        if !(self.grad_tol > 0.0 && self.cost_tol > 0.0) {
            return Err(Error::InvalidParameter("tolerances must be positive".into()));
        }
        if !(self.armijo_c1 > 0.0 && self.armijo_c1 < 1.0) || !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return Err(Error::InvalidParameter("line-search constants must lie in (0, 1)".into()));
        }
        if self.max_trials == 0 {
            return Err(Error::InvalidParameter("line search needs at least one trial".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    pub cost: CostBreakdown,
    pub grad_norm: f64,
    /// Accepted step length; zero for the initial point.
    pub step: f64,
    /// Largest lab-frame amplitude per subsystem, when the problem reports it.
    pub max_amplitude: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    GradientTolerance,
    CostTolerance,
    MaxIterations,
    LineSearchFailed,
}

impl std::fmt::Display for Termination {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Termination::GradientTolerance => "gradient tolerance reached",
            Termination::CostTolerance => "cost tolerance reached",
            Termination::MaxIterations => "iteration limit reached",
            Termination::LineSearchFailed => "line search failed",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizationResult {
    pub alpha: ControlVector,
    pub cost: CostBreakdown,
    pub history: Vec<IterationRecord>,
    pub termination: Termination,
}

/// Extra per-iterate diagnostics for the history.
pub trait Diagnostics {
    fn max_amplitudes(&self, _alpha: &[f64]) -> Vec<f64> {
        Vec::new()
    }
}

impl Diagnostics for ControlProblem {
    fn max_amplitudes(&self, alpha: &[f64]) -> Vec<f64> {
        let times = self.grid.times();
        (0..self.system.num_subsystems())
            .map(|q| {
                let omega = self.system.omega(q).unwrap_or(0.0);
                self.controls.max_lab_amplitude(alpha, q, omega, &times)
            })
            .collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

struct Memory {
    pairs: std::collections::VecDeque<(Vec<f64>, Vec<f64>, f64)>,
    capacity: usize,
}

impl Memory {
    fn push(&mut self, s: Vec<f64>, y: Vec<f64>) {
        let sy = dot(&s, &y);
        if sy <= 1e-12 * norm(&s) * norm(&y) {
            return;
        }
        if self.pairs.len() == self.capacity {
            self.pairs.pop_front();
        }
        self.pairs.push_back((s, y, 1.0 / sy));
    }

    /// Two-loop recursion for `-H g`.
    fn direction(&self, g: &[f64]) -> Vec<f64> {
        let mut q = g.to_vec();
        let mut alphas = Vec::with_capacity(self.pairs.len());
        for (s, y, rho) in self.pairs.iter().rev() {
            let a = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push(a);
        }
        let gamma = match self.pairs.back() {
            Some((_, y, rho)) => 1.0 / (rho * dot(y, y)),
            None => 1.0 / norm(g).max(1.0),
        };
        q.iter_mut().for_each(|v| *v *= gamma);
        for ((s, y, rho), a) in self.pairs.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
        }
        q.iter_mut().for_each(|v| *v = -*v);
        q
    }
}

/// Minimizes `problem` over `bounds` from `alpha0` (projected first).
pub fn minimize<P>(problem: &P, alpha0: &[f64], bounds: &Bounds, opts: &OptimizerOptions) -> Result<OptimizationResult>
where
    P: Differentiable + Diagnostics + ?Sized,
{
    minimize_with(problem, alpha0, bounds, opts, |_| {})
}

/// Like [`minimize`], calling `observe` after every accepted iterate.
pub fn minimize_with<P, F>(problem: &P, alpha0: &[f64], bounds: &Bounds, opts: &OptimizerOptions, mut observe: F) -> Result<OptimizationResult>
where
    P: Differentiable + Diagnostics + ?Sized,
    F: FnMut(&IterationRecord),
{
    opts.validate()?;
    bounds.validate()?;
    let n = problem.num_params();
    if alpha0.len() != n || bounds.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} coefficients and {} bounds for {n} parameters",
            alpha0.len(),
            bounds.len()
        )));
    }
    let mut x = alpha0.to_vec();
    bounds.project(&mut x);
    let (mut cost, mut g) = problem.evaluate_with_gradient(&x)?;
    let mut pg = norm(&bounds.projected_gradient(&x, &g));
    let pg0 = pg;
    let mut history = Vec::new();
    let record = IterationRecord {
        iter: 0,
        cost,
        grad_norm: pg,
        step: 0.0,
        max_amplitude: problem.max_amplitudes(&x),
    };
    observe(&record);
    history.push(record);

    let mut memory = Memory {
        pairs: Default::default(),
        capacity: opts.memory,
    };
    let mut termination = Termination::MaxIterations;
    for iter in 1..=opts.max_iters + 1 {
        if cost.total <= opts.cost_tol {
            termination = Termination::CostTolerance;
            break;
        }
        if pg == 0.0 || pg <= opts.grad_tol * pg0 {
            termination = Termination::GradientTolerance;
            break;
        }
        if iter > opts.max_iters {
            break;
        }
        // Coordinates pinned at a bound with the gradient pushing outward
        // stay fixed for this iteration.
        let pinned: Vec<bool> = x
            .iter()
            .zip(&g)
            .zip(bounds.lower.iter().zip(&bounds.upper))
            .map(|((xi, gi), (l, u))| (*xi <= *l && *gi > 0.0) || (*xi >= *u && *gi < 0.0))
            .collect();
        let free_g: Vec<f64> = g.iter().zip(&pinned).map(|(gi, p)| if *p { 0.0 } else { *gi }).collect();
        let mut d = memory.direction(&free_g);
        d.iter_mut().zip(&pinned).for_each(|(di, p)| {
            if *p {
                *di = 0.0
            }
        });
        if dot(&d, &g) >= 0.0 {
            memory.pairs.clear();
            d = memory.direction(&free_g);
        }

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..opts.max_trials {
            let mut trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + t * di).collect();
            bounds.project(&mut trial);
            let decrease: f64 = g.iter().zip(trial.iter().zip(&x)).map(|(gi, (a, b))| gi * (a - b)).sum();
            if decrease < 0.0 {
                let c = problem.evaluate(&trial)?;
                if c.total <= cost.total + opts.armijo_c1 * decrease {
                    accepted = Some((trial, c));
                    break;
                }
            }
            t *= opts.backtrack;
        }
        let Some((xn, _)) = accepted else {
            termination = Termination::LineSearchFailed;
            break;
        };
        let (cn, gn) = problem.evaluate_with_gradient(&xn)?;
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        memory.push(s, y);
        x = xn;
        g = gn;
        cost = cn;
        pg = norm(&bounds.projected_gradient(&x, &g));
        let record = IterationRecord {
            iter,
            cost,
            grad_norm: pg,
            step: t,
            max_amplitude: problem.max_amplitudes(&x),
        };
        observe(&record);
        history.push(record);
    }
    Ok(OptimizationResult {
        alpha: ControlVector(x),
        cost,
        history,
        termination,
    })
}
