//! Target observables and the discrete total cost
//! `J(ρ(T)) + γ₁‖α‖² + γ₂ Σ_n c_n w(t_n) J(ρ(t_n))`.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

use crate::control::ControlParameterization;
use crate::density::DensityMatrix;
use crate::dynamics::{Dynamics, Liouvillian, PropagationGrid};
use crate::error::{Error, Result};
use crate::solver::SolverOptions;
use crate::system::CompositeSystem;

pub const UNITARY_TOL: f64 = 1e-10;
pub const DEFAULT_CHECKPOINT_BUDGET: usize = 4 << 30;

/// A Hermitian cost observable.
#[derive(Clone, Debug, PartialEq)]
pub enum Observable {
    Diagonal(Vec<f64>),
    Dense(DMatrix<C64>),
}

impl Observable {
    /// `diag(|i - m|)`, which vanishes only on `e_m e_m†`.
    pub fn target(n: usize, m: usize) -> Result<Self> {
        if m >= n {
            return Err(Error::IndexOutOfRange(format!("target index {m} for dimension {n}")));
        }
        Ok(Observable::Diagonal((0..n).map(|i| i.abs_diff(m) as f64).collect()))
    }

    /// `U† diag(|i - m|) U`, which vanishes only on `U† e_m e_m† U`.
    pub fn transformed(u: &DMatrix<C64>, m: usize) -> Result<Self> {
        let n = u.nrows();
        if u.ncols() != n {
            return Err(Error::DimensionMismatch(format!("{}x{} transform", n, u.ncols())));
        }
        let defect = (u.adjoint() * u - DMatrix::<C64>::identity(n, n)).norm();
        if defect > UNITARY_TOL {
            return Err(Error::NotUnitary(defect));
        }
        let Observable::Diagonal(lambda) = Self::target(n, m)? else {
            unreachable!()
        };
        let diag = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(n, lambda.iter().map(|&l| C64::new(l, 0.0))));
        Ok(Observable::Dense(u.adjoint() * diag * u))
    }

    pub fn dim(&self) -> usize {
        match self {
            Observable::Diagonal(d) => d.len(),
            Observable::Dense(m) => m.nrows(),
        }
    }

    pub fn to_dense(&self) -> DMatrix<C64> {
        match self {
            Observable::Diagonal(d) => DMatrix::from_fn(d.len(), d.len(), |i, j| {
                if i == j {
                    C64::new(d[i], 0.0)
                } else {
                    C64::new(0.0, 0.0)
                }
            }),
            Observable::Dense(m) => m.clone(),
        }
    }

    /// `vec(O)`; for Hermitian `O`, `Tr(Oρ) = Re⟨vec(O), vec(ρ)⟩`.
    pub fn vectorized(&self) -> Vec<C64> {
        self.to_dense().as_slice().to_vec()
    }

    /// `Re Tr(O ρ)` for a vectorized state.
    pub fn expectation(&self, x: &[C64]) -> f64 {
        let n = self.dim();
        match self {
            Observable::Diagonal(d) => d.iter().enumerate().map(|(i, l)| l * x[i + n * i].re).sum(),
            Observable::Dense(m) => m.as_slice().iter().zip(x).map(|(o, r)| (o.conj() * r).re).sum(),
        }
    }
}

/// `Tr(O ρ)`.
pub fn final_cost(observable: &Observable, rho: &DensityMatrix) -> Result<f64> {
    if observable.dim() != rho.dim() {
        return Err(Error::DimensionMismatch(format!(
            "observable of dimension {} for a state of dimension {}",
            observable.dim(),
            rho.dim()
        )));
    }
    Ok(observable.expectation(rho.as_vec()))
}

/// `γ₁ ‖α‖²`.
pub fn tikhonov(alpha: &[f64], gamma1: f64) -> f64 {
    gamma1 * alpha.iter().map(|a| a * a).sum::<f64>()
}

/// `w(t) = exp(-((t - T)/a)²) / a`.
pub fn penalty_weight(t: f64, final_time: f64, width: f64) -> f64 {
    let u = (t - final_time) / width;
    (-u * u).exp() / width
}

/// Trapezoidal `γ₂ ∫ w(t) J(t) dt` from samples at every grid point.
pub fn integral_penalty(samples: &[f64], grid: &PropagationGrid, gamma2: f64, width: f64) -> Result<f64> {
    if samples.len() != grid.steps + 1 {
        return Err(Error::DimensionMismatch(format!(
            "{} penalty samples for {} steps",
            samples.len(),
            grid.steps
        )));
    }
    if !(width > 0.0) {
        return Err(Error::InvalidParameter(format!("penalty width must be positive, got {width}")));
    }
    if gamma2 == 0.0 {
        return Ok(0.0);
    }
    let sum: f64 = samples
        .iter()
        .enumerate()
        .map(|(n, j)| grid.trapezoid_weight(n) * penalty_weight(grid.time(n), grid.final_time, width) * j)
        .sum();
    Ok(gamma2 * sum)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObjectiveSpec {
    pub target_index: usize,
    /// When present, the transformed observable is used with `target_index`.
    pub transform: Option<DMatrix<C64>>,
    pub gamma1: f64,
    pub gamma2: f64,
    pub penalty_width: f64,
}

impl ObjectiveSpec {
    pub fn new(target_index: usize) -> Self {
        ObjectiveSpec {
            target_index,
            transform: None,
            gamma1: 0.0,
            gamma2: 0.0,
            penalty_width: 0.1,
        }
    }

    pub fn observable(&self, n: usize) -> Result<Observable> {
        match &self.transform {
            Some(u) if u.nrows() != n => Err(Error::DimensionMismatch(format!(
                "transform of dimension {} for a system of dimension {n}",
                u.nrows()
            ))),
            Some(u) => Observable::transformed(u, self.target_index),
            None => Observable::target(n, self.target_index),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma1 >= 0.0 && self.gamma2 >= 0.0) {
            return Err(Error::InvalidParameter("gamma1 and gamma2 must be nonnegative".into()));
        }
        if !(self.penalty_width > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "penalty width must be positive, got {}",
                self.penalty_width
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CostBreakdown {
    pub final_cost: f64,
    pub tikhonov: f64,
    pub penalty: f64,
    pub total: f64,
}

impl CostBreakdown {
    pub fn new(final_cost: f64, tikhonov: f64, penalty: f64) -> Self {
        CostBreakdown {
            final_cost,
            tikhonov,
            penalty,
            total: final_cost + tikhonov + penalty,
        }
    }
}

/// A fully assembled state-preparation problem for one initial state.
#[derive(Clone, Debug)]
pub struct ControlProblem {
    pub system: CompositeSystem,
    pub controls: ControlParameterization,
    pub grid: PropagationGrid,
    pub spec: ObjectiveSpec,
    pub rho0: DensityMatrix,
    pub solver: SolverOptions,
    /// Bytes available for stored forward states in gradient evaluations.
    pub checkpoint_budget: usize,
    pub liouvillian: Liouvillian,
    pub observable: Observable,
}

impl ControlProblem {
    pub fn new(
        system: CompositeSystem,
        controls: ControlParameterization,
        grid: PropagationGrid,
        spec: ObjectiveSpec,
        rho0: DensityMatrix,
    ) -> Result<Self> {
        spec.validate()?;
        let n = system.dim();
        if rho0.dim() != n {
            return Err(Error::DimensionMismatch(format!("initial state of dimension {} for system of dimension {n}", rho0.dim())));
        }
        if controls.num_subsystems() != system.num_subsystems() {
            return Err(Error::DimensionMismatch(format!(
                "{} control blocks for {} subsystems",
                controls.num_subsystems(),
                system.num_subsystems()
            )));
        }
        if (controls.final_time() - grid.final_time).abs() > 1e-12 * grid.final_time {
            return Err(Error::InvalidParameter("controls and grid disagree on the final time".into()));
        }
        let observable = spec.observable(n)?;
        let liouvillian = Liouvillian::new(&system, true)?;
        Ok(ControlProblem {
            system,
            controls,
            grid,
            spec,
            rho0,
            solver: SolverOptions::default(),
            checkpoint_budget: DEFAULT_CHECKPOINT_BUDGET,
            liouvillian,
            observable,
        })
    }

    /// Rebuilds the generator with the control coupling switched on or off.
    pub fn with_control_coupling(mut self, enabled: bool) -> Result<Self> {
        self.liouvillian = Liouvillian::new(&self.system, enabled)?;
        Ok(self)
    }

    pub fn with_initial_state(mut self, rho0: DensityMatrix) -> Result<Self> {
        if rho0.dim() != self.system.dim() {
            return Err(Error::DimensionMismatch("initial state dimension".into()));
        }
        self.rho0 = rho0;
        Ok(self)
    }

    pub fn num_params(&self) -> usize {
        self.controls.num_params()
    }

    pub fn dynamics(&self) -> Dynamics<'_> {
        Dynamics {
            liouvillian: &self.liouvillian,
            controls: &self.controls,
            grid: self.grid,
            solver: self.solver,
        }
    }

    /// Propagates the initial state and evaluates every cost term.
    pub fn total_cost(&self, alpha: &[f64]) -> Result<CostBreakdown> {
        self.total_cost_from(alpha, &self.rho0).map(|(c, _)| c)
    }

    /// Cost and final state for an arbitrary initial state.
    pub fn total_cost_from(&self, alpha: &[f64], rho0: &DensityMatrix) -> Result<(CostBreakdown, DensityMatrix)> {
        let mut samples = Vec::with_capacity(self.grid.steps + 1);
        let track = self.spec.gamma2 != 0.0;
        let last = self.dynamics().forward(alpha, rho0.as_vec(), |_, x| {
            if track {
                samples.push(self.observable.expectation(x));
            }
            Ok(())
        })?;
        let penalty = if track {
            integral_penalty(&samples, &self.grid, self.spec.gamma2, self.spec.penalty_width)?
        } else {
            0.0
        };
        let final_cost = self.observable.expectation(&last);
        Ok((
            CostBreakdown::new(final_cost, tikhonov(alpha, self.spec.gamma1), penalty),
            DensityMatrix::from_vec(self.system.dim(), last),
        ))
    }
}
