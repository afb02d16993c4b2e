//! Density matrices and the column-stacking vectorization used by the
//! propagator.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

pub const HERMITIAN_TOL: f64 = 1e-12;
pub const TRACE_TOL: f64 = 1e-12;
pub const PSD_TOL: f64 = 1e-10;

/// Largest entry magnitude of `m - m†`.
pub fn hermitian_defect(m: &DMatrix<C64>) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..m.nrows() {
        for j in i..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

/// Eigenvalues of a Hermitian matrix in ascending order.
pub fn hermitian_eigenvalues(m: &DMatrix<C64>) -> Vec<f64> {
    let mut ev: Vec<f64> = m.clone().symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// A complex `N x N` matrix meant to be a quantum state.
///
/// The storage is column-major, so [`as_vec`](Self::as_vec) is exactly
/// `vec(ρ)` with `ρ_ij` at position `i + N j`.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    data: DMatrix<C64>,
}

impl DensityMatrix {
    /// Wraps a matrix without checking the state invariants. Propagated
    /// states satisfy them only up to discretization error.
    pub fn from_matrix_unchecked(data: DMatrix<C64>) -> Self {
        assert_eq!(data.nrows(), data.ncols(), "density matrix must be square");
        DensityMatrix { data }
    }

    /// Wraps a matrix after checking Hermiticity, unit trace and positivity.
    pub fn from_matrix(data: DMatrix<C64>) -> Result<Self> {
        if data.nrows() != data.ncols() {
            return Err(Error::DimensionMismatch(format!("{}x{} state", data.nrows(), data.ncols())));
        }
        let rho = DensityMatrix { data };
        rho.validate()?;
        Ok(rho)
    }

    pub fn from_vec(dim: usize, v: Vec<C64>) -> Self {
        DensityMatrix {
            data: DMatrix::from_vec(dim, dim, v),
        }
    }

    /// `e_k e_k†`.
    pub fn basis_state(dim: usize, k: usize) -> Self {
        let mut data = DMatrix::zeros(dim, dim);
        data[(k, k)] = C64::new(1.0, 0.0);
        DensityMatrix { data }
    }

    /// `ψψ†` for a normalized state vector.
    pub fn pure(psi: &[C64]) -> Self {
        let v = DVector::from_column_slice(psi);
        DensityMatrix { data: &v * v.adjoint() }
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        DensityMatrix {
            data: DMatrix::identity(dim, dim) / C64::new(dim as f64, 0.0),
        }
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.data
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.data
    }

    pub fn as_vec(&self) -> &[C64] {
        self.data.as_slice()
    }

    pub fn trace(&self) -> C64 {
        self.data.trace()
    }

    pub fn hermitian_defect(&self) -> f64 {
        hermitian_defect(&self.data)
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        hermitian_eigenvalues(&self.data)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues()[0]
    }

    /// `Tr(ρ²)`.
    pub fn purity(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn kron(&self, other: &DensityMatrix) -> DensityMatrix {
        DensityMatrix {
            data: self.data.kronecker(&other.data),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let defect = self.hermitian_defect();
        if defect > HERMITIAN_TOL {
            return Err(Error::NotHermitian(defect));
        }
        let tr = self.trace();
        if (tr - C64::new(1.0, 0.0)).norm() > TRACE_TOL {
            return Err(Error::InvalidParameter(format!("state trace {tr} is not 1")));
        }
        let min = self.min_eigenvalue();
        if min < -PSD_TOL {
            return Err(Error::NegativeEigenvalue(min));
        }
        Ok(())
    }
}
