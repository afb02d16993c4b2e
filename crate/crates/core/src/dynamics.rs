//! Lindblad dynamics in the rotating frame.
//!
//! States are vectorized by column stacking, `vec(AXB) = (Bᵀ ⊗ A) vec(X)`, so
//!
//! * `-i[H, ρ]` becomes `-i (I ⊗ H - Hᵀ ⊗ I)`,
//! * `L ρ L†` becomes `L̄ ⊗ L`,
//! * `-½ {L†L, ρ}` becomes `-½ (I ⊗ L†L + (L†L)ᵀ ⊗ I)`.
//!
//! The control Hamiltonian under the rotating-wave approximation is
//! `Σ_q d_q a_q + d̄_q a_q† = Σ_q Re(d_q) (a_q + a_q†) + Im(d_q) i(a_q - a_q†)`,
//! so the generator is `L(t) = L₀ + Σ_q Re d_q(t) R_q + Im d_q(t) I_q` with
//! constant superoperators `L₀`, `R_q`, `I_q`.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

use crate::control::ControlParameterization;
use crate::density::{hermitian_eigenvalues, DensityMatrix, PSD_TOL};
use crate::error::{Error, Result};
use crate::objective::Observable;
use crate::solver::{Gmres, SolveStats, SolverOptions};
use crate::sparse::SparseMatrix;
use crate::system::{CompositeSystem, Frame};

const I: C64 = C64::new(0.0, 1.0);

fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

/// A linear map on vectorized states.
pub trait LinearMap {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[C64], y: &mut [C64]);
}

impl LinearMap for SparseMatrix {
    fn dim(&self) -> usize {
        self.nrows()
    }
    fn apply(&self, x: &[C64], y: &mut [C64]) {
        self.matvec(x, y)
    }
}

/// Superoperator of `ρ ↦ -i[H, ρ]`.
pub fn commutator_superop(h: &SparseMatrix) -> SparseMatrix {
    let id = SparseMatrix::identity(h.nrows());
    id.kron(h).sub(&h.transpose().kron(&id)).scale(-I)
}

/// Superoperator of the dissipator `ρ ↦ LρL† - ½{L†L, ρ}`.
pub fn dissipator_superop(l: &SparseMatrix) -> SparseMatrix {
    let id = SparseMatrix::identity(l.nrows());
    let ldl = l.adjoint().matmul(l);
    let jump = l.conj().kron(l);
    let anti = id.kron(&ldl).add(&ldl.transpose().kron(&id));
    jump.sub(&anti.scale(c(0.5)))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PropagationGrid {
    pub final_time: f64,
    pub steps: usize,
}

impl PropagationGrid {
    pub fn new(final_time: f64, steps: usize) -> Result<Self> {
        if !(final_time > 0.0 && final_time.is_finite()) || steps == 0 {
            return Err(Error::InvalidParameter(format!(
                "grid needs T > 0 and at least one step, got T = {final_time}, steps = {steps}"
            )));
        }
        Ok(PropagationGrid { final_time, steps })
    }

    pub fn dt(&self) -> f64 {
        self.final_time / self.steps as f64
    }

    /// `t_n`, exact at both ends of the grid.
    pub fn time(&self, n: usize) -> f64 {
        if n == self.steps {
            self.final_time
        } else {
            n as f64 * self.dt()
        }
    }

    pub fn midpoint(&self, n: usize) -> f64 {
        (n as f64 + 0.5) * self.dt()
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|n| self.time(n)).collect()
    }

    /// Trapezoidal quadrature weight of grid point `n`.
    pub fn trapezoid_weight(&self, n: usize) -> f64 {
        if n == 0 || n == self.steps {
            0.5 * self.dt()
        } else {
            self.dt()
        }
    }
}

/// Vectorized Lindblad generator `L₀ + Σ_k c_k L_k` stored on one sparsity
/// pattern, with the transposed pattern kept for adjoint products.
#[derive(Clone, Debug)]
pub struct Liouvillian {
    n2: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    base: Vec<C64>,
    terms: Vec<Vec<C64>>,
    t_indptr: Vec<usize>,
    t_indices: Vec<usize>,
    t_map: Vec<usize>,
}

impl Liouvillian {
    /// Builds the rotating-frame generator of `system`. With `with_controls`
    /// false the control superoperators are identically zero, which leaves
    /// the free open-system evolution.
    pub fn new(system: &CompositeSystem, with_controls: bool) -> Result<Self> {
        let mut base = commutator_superop(&system.drift_hamiltonian(Frame::Rotating)?);
        for l in system.collapse_operators()? {
            base = base.add(&dissipator_superop(&l));
        }
        let n2 = system.dim() * system.dim();
        let mut terms = Vec::new();
        for q in 0..system.num_subsystems() {
            let a = system.lowering_operator(q)?;
            let ad = a.adjoint();
            if with_controls {
                terms.push(commutator_superop(&a.add(&ad)));
                terms.push(commutator_superop(&a.sub(&ad).scale(I)));
            } else {
                terms.push(SparseMatrix::zeros(n2, n2));
                terms.push(SparseMatrix::zeros(n2, n2));
            }
        }
        Ok(Self::from_parts(base, terms))
    }

    /// Assembles a generator from an arbitrary constant part and control terms.
    pub fn from_parts(base: SparseMatrix, terms: Vec<SparseMatrix>) -> Self {
        let n2 = base.nrows();
        let pattern = SparseMatrix::from_triplets(
            n2,
            n2,
            std::iter::once(&base)
                .chain(&terms)
                .flat_map(|m| m.iter().map(|(i, j, _)| (i, j, c(1.0)))),
        );
        let indptr = pattern.indptr().to_vec();
        let indices = pattern.indices().to_vec();
        let scatter = |m: &SparseMatrix| {
            let mut vals = vec![C64::new(0.0, 0.0); indices.len()];
            for (i, j, v) in m.iter() {
                let lo = indptr[i];
                let k = lo + indices[lo..indptr[i + 1]].binary_search(&j).unwrap();
                vals[k] = v;
            }
            vals
        };
        let base_vals = scatter(&base);
        let term_vals = terms.iter().map(scatter).collect();

        // Transposed pattern: entry k of row i in the transpose points back
        // to the original storage slot.
        let mut counts = vec![0usize; n2 + 1];
        for &j in &indices {
            counts[j + 1] += 1;
        }
        for i in 0..n2 {
            counts[i + 1] += counts[i];
        }
        let t_indptr = counts.clone();
        let mut fill = counts;
        let mut t_indices = vec![0; indices.len()];
        let mut t_map = vec![0; indices.len()];
        for i in 0..n2 {
            for k in indptr[i]..indptr[i + 1] {
                let j = indices[k];
                t_indices[fill[j]] = i;
                t_map[fill[j]] = k;
                fill[j] += 1;
            }
        }
        Liouvillian {
            n2,
            indptr,
            indices,
            base: base_vals,
            terms: term_vals,
            t_indptr,
            t_indices,
            t_map,
        }
    }

    pub fn dim(&self) -> usize {
        self.n2
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    /// Term coefficients `(Re d_0, Im d_0, Re d_1, …)` at time `t`.
    pub fn coefficients(param: &ControlParameterization, alpha: &[f64], t: f64) -> Vec<f64> {
        (0..param.num_subsystems())
            .flat_map(|q| {
                let d = param.rotating_control(alpha, q, t);
                [d.re, d.im]
            })
            .collect()
    }

    /// Generator with the given term coefficients.
    pub fn at(&self, coeffs: &[f64]) -> Generator<'_> {
        let mut values = Vec::new();
        self.combine(coeffs, &mut values);
        Generator { liou: self, values }
    }

    /// Generator at time `t` for controls `alpha`.
    pub fn at_time(&self, param: &ControlParameterization, alpha: &[f64], t: f64) -> Generator<'_> {
        self.at(&Self::coefficients(param, alpha, t))
    }

    fn combine(&self, coeffs: &[f64], out: &mut Vec<C64>) {
        assert_eq!(coeffs.len(), self.terms.len(), "one coefficient per control term");
        out.clear();
        out.extend_from_slice(&self.base);
        for (term, &ck) in self.terms.iter().zip(coeffs) {
            if ck != 0.0 {
                for (o, v) in out.iter_mut().zip(term) {
                    *o += v * ck;
                }
            }
        }
    }

    fn matvec(&self, values: &[C64], x: &[C64], y: &mut [C64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let mut acc = C64::new(0.0, 0.0);
            for k in self.indptr[i]..self.indptr[i + 1] {
                acc += values[k] * x[self.indices[k]];
            }
            *yi = acc;
        }
    }

    fn matvec_adjoint(&self, values: &[C64], x: &[C64], y: &mut [C64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let mut acc = C64::new(0.0, 0.0);
            for k in self.t_indptr[i]..self.t_indptr[i + 1] {
                acc += values[self.t_map[k]].conj() * x[self.t_indices[k]];
            }
            *yi = acc;
        }
    }

    /// `⟨u, L_k z⟩` for control term `k`.
    pub fn term_inner(&self, k: usize, u: &[C64], z: &[C64]) -> C64 {
        let vals = &self.terms[k];
        let mut acc = C64::new(0.0, 0.0);
        for (i, ui) in u.iter().enumerate() {
            let mut row = C64::new(0.0, 0.0);
            for p in self.indptr[i]..self.indptr[i + 1] {
                row += vals[p] * z[self.indices[p]];
            }
            acc += ui.conj() * row;
        }
        acc
    }

    /// Dense copy of the generator with the given coefficients.
    pub fn to_dense(&self, coeffs: &[f64]) -> DMatrix<C64> {
        let mut values = Vec::new();
        self.combine(coeffs, &mut values);
        let mut m = DMatrix::zeros(self.n2, self.n2);
        for i in 0..self.n2 {
            for k in self.indptr[i]..self.indptr[i + 1] {
                m[(i, self.indices[k])] = values[k];
            }
        }
        m
    }
}

/// The generator frozen at one set of control values.
#[derive(Clone, Debug)]
pub struct Generator<'a> {
    liou: &'a Liouvillian,
    values: Vec<C64>,
}

impl LinearMap for Generator<'_> {
    fn dim(&self) -> usize {
        self.liou.n2
    }
    fn apply(&self, x: &[C64], y: &mut [C64]) {
        self.liou.matvec(&self.values, x, y)
    }
}

impl Generator<'_> {
    pub fn apply_adjoint(&self, x: &[C64], y: &mut [C64]) {
        self.liou.matvec_adjoint(&self.values, x, y)
    }
}

/// One implicit midpoint step: solves `(I - h/2 L) y = (I + h/2 L) x` with
/// `L` the generator evaluated at the step midpoint.
pub fn imr_step<L: LinearMap>(state: &[C64], dt: f64, generator: &L, solver: &SolverOptions) -> Result<Vec<C64>> {
    let mut stepper = Stepper::new(generator.dim(), solver);
    let mut out = state.to_vec();
    stepper.step(generator, state, &mut out, dt)?;
    Ok(out)
}

/// Workspace for repeated midpoint steps of one dimension.
#[derive(Clone, Debug)]
pub(crate) struct Stepper {
    gmres: Gmres,
    rhs: Vec<C64>,
    tmp: Vec<C64>,
    opts: SolverOptions,
}

impl Stepper {
    pub(crate) fn new(n: usize, opts: &SolverOptions) -> Self {
        Stepper {
            gmres: Gmres::new(n, opts.restart),
            rhs: vec![C64::new(0.0, 0.0); n],
            tmp: vec![C64::new(0.0, 0.0); n],
            opts: *opts,
        }
    }

    /// `out = (I - h/2 L)^{-1} (I + h/2 L) x`; `out` may hold a guess on entry.
    pub(crate) fn step<L: LinearMap>(&mut self, l: &L, x: &[C64], out: &mut [C64], dt: f64) -> Result<SolveStats> {
        let half = 0.5 * dt;
        l.apply(x, &mut self.tmp);
        for ((r, xi), ti) in self.rhs.iter_mut().zip(x).zip(&self.tmp) {
            *r = xi + ti * half;
        }
        out.copy_from_slice(x);
        let tmp = &mut self.tmp;
        self.gmres.solve(
            |v, w| {
                l.apply(v, tmp);
                for ((wi, vi), ti) in w.iter_mut().zip(v).zip(tmp.iter()) {
                    *wi = vi - ti * half;
                }
            },
            &self.rhs,
            out,
            &self.opts,
        )
    }

    /// Adjoint step pieces: `mu = (I - h/2 L)^{-†} lam`, `out = (I + h/2 L)† mu`.
    pub(crate) fn adjoint_step(
        &mut self,
        g: &Generator<'_>,
        lam: &[C64],
        mu: &mut [C64],
        out: &mut [C64],
        dt: f64,
    ) -> Result<SolveStats> {
        let half = 0.5 * dt;
        mu.copy_from_slice(lam);
        let tmp = &mut self.tmp;
        let stats = self.gmres.solve(
            |v, w| {
                g.apply_adjoint(v, tmp);
                for ((wi, vi), ti) in w.iter_mut().zip(v).zip(tmp.iter()) {
                    *wi = vi - ti * half;
                }
            },
            lam,
            mu,
            &self.opts,
        )?;
        g.apply_adjoint(mu, &mut self.tmp);
        for ((o, m), t) in out.iter_mut().zip(mu.iter()).zip(&self.tmp) {
            *o = m + t * half;
        }
        Ok(stats)
    }
}

/// Everything needed to propagate one initial state.
#[derive(Clone, Copy)]
pub struct Dynamics<'a> {
    pub liouvillian: &'a Liouvillian,
    pub controls: &'a ControlParameterization,
    pub grid: PropagationGrid,
    pub solver: SolverOptions,
}

impl<'a> Dynamics<'a> {
    /// Runs all steps from `x0`, calling `visit(n, x_n)` for `n = 0..=N`.
    pub fn forward<F>(&self, alpha: &[f64], x0: &[C64], mut visit: F) -> Result<Vec<C64>>
    where
        F: FnMut(usize, &[C64]) -> Result<()>,
    {
        self.forward_range(alpha, x0, 0, self.grid.steps, &mut visit)
    }

    /// Runs steps `start..end` from the state at grid point `start`.
    pub(crate) fn forward_range<F>(&self, alpha: &[f64], x0: &[C64], start: usize, end: usize, visit: &mut F) -> Result<Vec<C64>>
    where
        F: FnMut(usize, &[C64]) -> Result<()>,
    {
        if x0.len() != self.liouvillian.dim() {
            return Err(Error::DimensionMismatch(format!(
                "state of length {} for a generator of dimension {}",
                x0.len(),
                self.liouvillian.dim()
            )));
        }
        self.controls.check_len(alpha)?;
        let dt = self.grid.dt();
        let mut stepper = Stepper::new(x0.len(), &self.solver);
        let mut x = x0.to_vec();
        let mut next = x.clone();
        visit(start, &x)?;
        for n in start..end {
            let g = self.liouvillian.at_time(self.controls, alpha, self.grid.midpoint(n));
            stepper
                .step(&g, &x, &mut next, dt)
                .map_err(|e| Error::StepFailed {
                    step: n,
                    source: Box::new(e),
                })?;
            std::mem::swap(&mut x, &mut next);
            visit(n + 1, &x)?;
        }
        Ok(x)
    }
}

/// Observables recorded along a trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// `energies[k][q]`: expected level of subsystem `q` at sample `k`.
    pub energies: Vec<Vec<f64>>,
    pub entropy: Vec<f64>,
    pub integrand: Vec<f64>,
    pub final_state: DensityMatrix,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Propagates `rho0` and records observables every `stride` steps (and at
/// the final step).
pub fn propagate(
    system: &CompositeSystem,
    dynamics: &Dynamics<'_>,
    alpha: &[f64],
    rho0: &DensityMatrix,
    observable: &Observable,
    stride: usize,
) -> Result<Trajectory> {
    let stride = stride.max(1);
    let n = system.dim();
    let steps = dynamics.grid.steps;
    let mut traj = Trajectory {
        times: Vec::new(),
        energies: Vec::new(),
        entropy: Vec::new(),
        integrand: Vec::new(),
        final_state: rho0.clone(),
    };
    let last = dynamics.forward(alpha, rho0.as_vec(), |k, x| {
        if k % stride == 0 || k == steps {
            let rho = DensityMatrix::from_vec(n, x.to_vec());
            traj.times.push(dynamics.grid.time(k));
            traj.energies
                .push((0..system.num_subsystems()).map(|q| expected_energy(system, q, &rho)).collect::<Result<_>>()?);
            traj.entropy.push(entropy_with_tolerance(&rho, TRAJECTORY_PSD_TOL)?);
            traj.integrand.push(observable.expectation(x));
        }
        Ok(())
    })?;
    traj.final_state = DensityMatrix::from_vec(n, last);
    Ok(traj)
}

/// Final states of every member of an ensemble, propagated independently.
pub fn propagate_members(dynamics: &Dynamics<'_>, alpha: &[f64], members: &[DensityMatrix]) -> Result<Vec<DensityMatrix>> {
    use rayon::prelude::*;
    members
        .par_iter()
        .map(|rho| {
            let x = dynamics.forward(alpha, rho.as_vec(), |_, _| Ok(()))?;
            Ok(DensityMatrix::from_vec(rho.dim(), x))
        })
        .collect()
}

/// `Tr(a_q†a_q ρ)`.
pub fn expected_energy(system: &CompositeSystem, q: usize, rho: &DensityMatrix) -> Result<f64> {
    system.subsystem(q)?;
    let m = rho.matrix();
    Ok((0..system.dim()).map(|i| system.digits(i)[q] as f64 * m[(i, i)].re).sum())
}

/// Negative eigenvalues down to this size are clipped when recording
/// entropies along discretized trajectories. The midpoint rule conserves
/// trace and purity but not positivity: each coherence picks up a phase
/// that is nonlinear in its energy gap.
pub const TRAJECTORY_PSD_TOL: f64 = 1e-4;

/// Normalized von Neumann entropy `-Tr(ρ log ρ) / log N`.
pub fn entropy(rho: &DensityMatrix) -> Result<f64> {
    entropy_with_tolerance(rho, PSD_TOL)
}

pub fn entropy_with_tolerance(rho: &DensityMatrix, tol: f64) -> Result<f64> {
    let n = rho.dim();
    if n < 2 {
        return Ok(0.0);
    }
    let mut s = 0.0;
    for ev in hermitian_eigenvalues(rho.matrix()) {
        if ev < -tol {
            return Err(Error::NegativeEigenvalue(ev));
        }
        if ev > 0.0 {
            s -= ev * ev.ln();
        }
    }
    Ok(s / (n as f64).ln())
}

/// Average fidelity from the propagated ensemble, `[ρ_s(T)]_mm`.
pub fn average_fidelity(ensemble_final: &DensityMatrix, m: usize) -> Result<f64> {
    if m >= ensemble_final.dim() {
        return Err(Error::IndexOutOfRange(format!("target {m} for dimension {}", ensemble_final.dim())));
    }
    Ok(ensemble_final.matrix()[(m, m)].re)
}

/// Average fidelity from individually propagated basis states.
pub fn average_fidelity_from_members(finals: &[DensityMatrix], m: usize) -> Result<f64> {
    if finals.is_empty() {
        return Err(Error::InvalidParameter("no propagated states".into()));
    }
    let mut sum = 0.0;
    for rho in finals {
        sum += average_fidelity(rho, m)?;
    }
    Ok(sum / finals.len() as f64)
}

/// Partial trace over every subsystem except `q`.
pub fn reduced_density(system: &CompositeSystem, rho: &DensityMatrix, q: usize) -> Result<DensityMatrix> {
    let nq = system.subsystem(q)?.levels;
    let m = rho.matrix();
    let n = system.dim();
    let mut out = DMatrix::zeros(nq, nq);
    let digits: Vec<Vec<usize>> = (0..n).map(|i| system.digits(i)).collect();
    for i in 0..n {
        for j in 0..n {
            let (di, dj) = (&digits[i], &digits[j]);
            if di.iter().zip(dj).enumerate().all(|(p, (a, b))| p == q || a == b) {
                out[(di[q], dj[q])] += m[(i, j)];
            }
        }
    }
    Ok(DensityMatrix::from_matrix_unchecked(out))
}
