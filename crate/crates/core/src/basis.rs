//! Basis of N² density matrices `B^kj` spanning all Hermitian matrices over
//! the reals, the ensemble state built from it, and coefficient expansion.
//!
//! `B^kk = e_k e_k†`, `B^kj = ½(e_k + e_j)(e_k + e_j)†` for `k < j`, and
//! `B^kj = ½(e_k + i e_j)(e_k + i e_j)†` for `k > j`. Every element is a pure
//! state, and the uniform mixture of all of them is the single initial
//! condition used during optimization.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;

use crate::density::{hermitian_defect, hermitian_eigenvalues, DensityMatrix, HERMITIAN_TOL, PSD_TOL, TRACE_TOL};
use crate::error::{Error, Result};

/// Largest dimension [`verify_basis`] accepts unless a larger cap is passed.
pub const DEFAULT_VERIFY_CAP: usize = 16;

/// Raw matrix of `B^kj`.
pub(crate) fn basis_entries(n: usize, k: usize, j: usize) -> DMatrix<C64> {
    let mut m = DMatrix::zeros(n, n);
    let half = C64::new(0.5, 0.0);
    if k == j {
        m[(k, k)] = C64::new(1.0, 0.0);
        return m;
    }
    m[(k, k)] = half;
    m[(j, j)] = half;
    if k < j {
        m[(k, j)] = half;
        m[(j, k)] = half;
    } else {
        // i/2 (e_j e_k† - e_k e_j†)
        m[(j, k)] = C64::new(0.0, 0.5);
        m[(k, j)] = C64::new(0.0, -0.5);
    }
    m
}

pub fn basis_matrix(n: usize, k: usize, j: usize) -> Result<DensityMatrix> {
    if k >= n || j >= n {
        return Err(Error::IndexOutOfRange(format!("basis index ({k}, {j}) for dimension {n}")));
    }
    Ok(DensityMatrix::from_matrix_unchecked(basis_entries(n, k, j)))
}

/// `(1/n²) Σ_kj B^kj`, assembled entrywise: diagonal `1/n`, and
/// `(1 + i)/(2n²)` above the diagonal.
pub fn ensemble_state(n: usize) -> Result<DensityMatrix> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!("ensemble state needs n >= 2, got {n}")));
    }
    let scale = 1.0 / (n * n) as f64;
    let mut m = DMatrix::zeros(n, n);
    for k in 0..n {
        m[(k, k)] = C64::new(1.0 / n as f64, 0.0);
        for j in k + 1..n {
            m[(k, j)] = C64::new(0.5 * scale, 0.5 * scale);
            m[(j, k)] = C64::new(0.5 * scale, -0.5 * scale);
        }
    }
    Ok(DensityMatrix::from_matrix_unchecked(m))
}

/// Composite indices whose ground digits are all zero, paired with their
/// index in the joint space of the basis subsystems.
struct Embedding {
    joint: usize,
    total: usize,
    slots: Vec<(usize, usize)>,
}

impl Embedding {
    fn new(dims: &[usize], basis_subsystems: &[usize], ground_subsystems: &[usize]) -> Result<Self> {
        let mut role = vec![None; dims.len()];
        for (&q, is_basis) in basis_subsystems.iter().map(|q| (q, true)).chain(ground_subsystems.iter().map(|q| (q, false))) {
            let slot = role
                .get_mut(q)
                .ok_or_else(|| Error::InvalidParameter(format!("subsystem {} does not exist", q + 1)))?;
            if slot.is_some() {
                return Err(Error::InvalidParameter(format!("subsystem {} listed twice", q + 1)));
            }
            *slot = Some(is_basis);
        }
        if let Some(q) = role.iter().position(Option::is_none) {
            return Err(Error::InvalidParameter(format!("subsystem {} is in neither subset", q + 1)));
        }
        let joint: usize = dims.iter().zip(&role).filter(|(_, r)| **r == Some(true)).map(|(n, _)| n).product();
        let total: usize = dims.iter().product();
        let mut slots = Vec::new();
        for index in 0..total {
            let mut rest = index;
            let mut digits = vec![0; dims.len()];
            for q in (0..dims.len()).rev() {
                digits[q] = rest % dims[q];
                rest /= dims[q];
            }
            if digits.iter().zip(&role).any(|(d, r)| *r == Some(false) && *d != 0) {
                continue;
            }
            let b = digits
                .iter()
                .zip(dims)
                .zip(&role)
                .filter(|(_, r)| **r == Some(true))
                .fold(0, |acc, ((d, n), _)| acc * n + d);
            slots.push((index, b));
        }
        Ok(Embedding { joint, total, slots })
    }

    fn embed(&self, inner: &DMatrix<C64>) -> DensityMatrix {
        let mut m = DMatrix::zeros(self.total, self.total);
        for &(i, bi) in &self.slots {
            for &(j, bj) in &self.slots {
                m[(i, j)] = inner[(bi, bj)];
            }
        }
        DensityMatrix::from_matrix_unchecked(m)
    }
}

/// Ensemble state over the joint space of `basis_subsystems`, with every
/// subsystem in `ground_subsystems` in its ground state. The two lists must
/// partition `0..dims.len()`.
pub fn ensemble_state_partial(dims: &[usize], basis_subsystems: &[usize], ground_subsystems: &[usize]) -> Result<DensityMatrix> {
    let emb = Embedding::new(dims, basis_subsystems, ground_subsystems)?;
    let inner = if emb.joint >= 2 {
        ensemble_state(emb.joint)?.into_matrix()
    } else {
        DMatrix::from_element(1, 1, C64::new(1.0, 0.0))
    };
    Ok(emb.embed(&inner))
}

/// The individual basis states `B^kj` of the joint basis space, embedded
/// like [`ensemble_state_partial`]. Their average is the ensemble state.
pub fn ensemble_members(dims: &[usize], basis_subsystems: &[usize], ground_subsystems: &[usize]) -> Result<Vec<DensityMatrix>> {
    let emb = Embedding::new(dims, basis_subsystems, ground_subsystems)?;
    let n = emb.joint;
    Ok((0..n)
        .flat_map(|k| (0..n).map(move |j| (k, j)))
        .map(|(k, j)| emb.embed(&basis_entries(n, k, j)))
        .collect())
}

/// Real coordinates of a Hermitian matrix: the diagonal, then `(Re, Im)` of
/// each strictly upper entry.
fn hermitian_coordinates(m: &DMatrix<C64>) -> DVector<f64> {
    let n = m.nrows();
    let mut v = Vec::with_capacity(n * n);
    for k in 0..n {
        v.push(m[(k, k)].re);
    }
    for k in 0..n {
        for j in k + 1..n {
            v.push(m[(k, j)].re);
            v.push(m[(k, j)].im);
        }
    }
    DVector::from_vec(v)
}

/// Coefficients `z_kj` of a Hermitian matrix in the `B^kj` basis.
#[derive(Clone, Debug, PartialEq)]
pub struct BasisCoefficients {
    pub values: DMatrix<f64>,
}

impl BasisCoefficients {
    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    pub fn sum(&self) -> f64 {
        self.values.sum()
    }

    /// `Σ z_kj B^kj`.
    pub fn reconstruct(&self) -> DMatrix<C64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        for k in 0..n {
            for j in 0..n {
                let z = self.values[(k, j)];
                if z != 0.0 {
                    m += basis_entries(n, k, j) * C64::new(z, 0.0);
                }
            }
        }
        m
    }
}

pub fn expand_in_basis(rho: &DMatrix<C64>) -> Result<BasisCoefficients> {
    let n = rho.nrows();
    if n != rho.ncols() {
        return Err(Error::DimensionMismatch(format!("{}x{} matrix", n, rho.ncols())));
    }
    let defect = hermitian_defect(rho);
    if defect > HERMITIAN_TOL {
        return Err(Error::NotHermitian(defect));
    }
    let mut system = DMatrix::zeros(n * n, n * n);
    for k in 0..n {
        for j in 0..n {
            system.set_column(k * n + j, &hermitian_coordinates(&basis_entries(n, k, j)));
        }
    }
    let rhs = hermitian_coordinates(rho);
    let z = system
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::InvalidParameter("basis system is singular".into()))?;
    Ok(BasisCoefficients {
        values: DMatrix::from_fn(n, n, |k, j| z[k * n + j]),
    })
}

/// The 2x2 density-matrix candidate `F₂(z)` with `z01 = 1 - z00 - z11 - z10`.
pub fn f2(z00: f64, z11: f64, z10: f64) -> DMatrix<C64> {
    let z01 = 1.0 - z00 - z11 - z10;
    BasisCoefficients {
        values: DMatrix::from_row_slice(2, 2, &[z00, z01, z10, z11]),
    }
    .reconstruct()
}

/// Closed-form admissibility of `(z00, z11, z10)` for two-level states: the
/// ellipsoid `2(z00 + (z10-1)/2)² + 2(z11 + (z10-1)/2)² + z10² ≤ 1`.
pub fn q2_admissible(z00: f64, z11: f64, z10: f64) -> bool {
    let xi = z00 + 0.5 * (z10 - 1.0);
    let eta = z11 + 0.5 * (z10 - 1.0);
    2.0 * xi * xi + 2.0 * eta * eta + z10 * z10 <= 1.0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BasisReport {
    pub hermitian: bool,
    pub unit_trace: bool,
    pub psd: bool,
    pub rank_one: bool,
    pub independent: bool,
}

impl BasisReport {
    pub fn all_ok(&self) -> bool {
        self.hermitian && self.unit_trace && self.psd && self.rank_one && self.independent
    }
}

pub fn verify_basis(n: usize, cap: usize) -> Result<BasisReport> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!("basis check needs n >= 2, got {n}")));
    }
    if n > cap {
        return Err(Error::InvalidParameter(format!("dimension {n} exceeds verification cap {cap}")));
    }
    let set: Vec<DMatrix<C64>> = (0..n).flat_map(|k| (0..n).map(move |j| basis_entries(n, k, j))).collect();
    Ok(verify_matrix_set(&set))
}

/// Runs the density-matrix and independence checks on an arbitrary set of
/// `n x n` matrices.
pub fn verify_matrix_set(set: &[DMatrix<C64>]) -> BasisReport {
    let mut report = BasisReport {
        hermitian: true,
        unit_trace: true,
        psd: true,
        rank_one: true,
        independent: true,
    };
    let Some(first) = set.first() else {
        return report;
    };
    let n = first.nrows();
    let mut rows = DMatrix::<f64>::zeros(2 * n * n, set.len());
    for (col, b) in set.iter().enumerate() {
        report.hermitian &= hermitian_defect(b) < HERMITIAN_TOL;
        report.unit_trace &= (b.trace() - C64::new(1.0, 0.0)).norm() < TRACE_TOL;
        let ev = hermitian_eigenvalues(b);
        report.psd &= ev[0] >= -PSD_TOL;
        report.rank_one &= ev.len() < 2 || ev[ev.len() - 2].abs() < PSD_TOL;
        for (i, z) in b.iter().enumerate() {
            rows[(i, col)] = z.re;
            rows[(n * n + i, col)] = z.im;
        }
    }
    // Full rank of the real vectorization over the n² members.
    let sv = rows.singular_values();
    let min_sv = sv.iter().copied().fold(f64::INFINITY, f64::min);
    report.independent = set.len() <= n * n && min_sv > 1e-10;
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn max_diff(a: &DMatrix<C64>, b: &DMatrix<C64>) -> f64 {
        (a - b).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn two_level_basis_elements() {
        let b10 = basis_matrix(2, 1, 0).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[c(0.5, 0.0), c(0.0, 0.5), c(0.0, -0.5), c(0.5, 0.0)]);
        assert_eq!(b10.matrix(), &expected);
        let b01 = basis_matrix(2, 0, 1).unwrap();
        assert!(b01.matrix().iter().all(|z| *z == c(0.5, 0.0)));
        assert!(basis_matrix(2, 2, 0).is_err());
    }

    #[test]
    fn diagonal_and_corner_elements() {
        for n in 2..6 {
            for k in 0..n {
                assert_eq!(basis_matrix(n, k, k).unwrap(), DensityMatrix::basis_state(n, k));
            }
        }
        let b = basis_matrix(3, 0, 2).unwrap();
        for (i, j) in [(0, 0), (0, 2), (2, 0), (2, 2)] {
            assert_eq!(b.matrix()[(i, j)], c(0.5, 0.0));
        }
        assert_eq!(b.matrix().iter().filter(|z| z.norm() > 0.0).count(), 4);
    }

    #[test]
    fn ensemble_two_level() {
        let rho = ensemble_state(2).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[c(0.5, 0.0), c(0.125, 0.125), c(0.125, -0.125), c(0.5, 0.0)]);
        assert!(max_diff(rho.matrix(), &expected) < 1e-15);
    }

    #[test]
    fn ensemble_matches_brute_force_sum() {
        for n in 2..=6 {
            let mut sum = DMatrix::zeros(n, n);
            for k in 0..n {
                for j in 0..n {
                    sum += basis_entries(n, k, j);
                }
            }
            sum /= c((n * n) as f64, 0.0);
            let rho = ensemble_state(n).unwrap();
            assert!(max_diff(rho.matrix(), &sum) < 1e-15);
            assert!(rho.validate().is_ok());
            for k in 0..n {
                assert_relative_eq!(rho.matrix()[(k, k)].re, 1.0 / n as f64, epsilon = 1e-15);
            }
            let z = expand_in_basis(rho.matrix()).unwrap();
            assert!(z.values.iter().all(|v| (v - 1.0 / (n * n) as f64).abs() < 1e-12));
        }
    }

    #[test]
    fn partial_ensemble() {
        let rho = ensemble_state_partial(&[3, 20], &[0], &[1]).unwrap();
        let expected = ensemble_state(3).unwrap().kron(&DensityMatrix::basis_state(20, 0));
        assert_eq!(rho, expected);
        assert_eq!(ensemble_state_partial(&[2], &[0], &[]).unwrap(), ensemble_state(2).unwrap());
        let full = ensemble_state_partial(&[2, 2], &[0, 1], &[]).unwrap();
        assert_eq!(full, ensemble_state(4).unwrap());
        // Non-adjacent basis subsystems around a ground-state factor.
        let split = ensemble_state_partial(&[2, 3, 2], &[0, 2], &[1]).unwrap();
        let e = ensemble_state(4).unwrap();
        let idx = |a: usize, c: usize| a * 6 + c;
        for (bi, (a, c1)) in [(0, 0), (0, 1), (1, 0), (1, 1)].into_iter().enumerate() {
            for (bj, (b, c2)) in [(0, 0), (0, 1), (1, 0), (1, 1)].into_iter().enumerate() {
                assert_eq!(split.matrix()[(idx(a, c1), idx(b, c2))], e.matrix()[(bi, bj)]);
            }
        }
        assert!(split.validate().is_ok());
        assert!(ensemble_state_partial(&[2, 2], &[0], &[0]).is_err());
        assert!(ensemble_state_partial(&[2, 2], &[0], &[]).is_err());
    }

    #[test]
    fn expansion_of_basis_elements_and_documented_point() {
        for (k, j) in [(0, 0), (1, 0), (0, 2), (2, 1)] {
            let z = expand_in_basis(&basis_entries(3, k, j)).unwrap();
            for a in 0..3 {
                for b in 0..3 {
                    let want = if (a, b) == (k, j) { 1.0 } else { 0.0 };
                    assert!((z.values[(a, b)] - want).abs() < 1e-12);
                }
            }
        }
        // z00 = z11 = z01 = 1/2, z10 = -1/2
        let rho = f2(0.5, 0.5, -0.5);
        let expected = DMatrix::from_row_slice(2, 2, &[c(0.5, 0.0), c(0.25, -0.25), c(0.25, 0.25), c(0.5, 0.0)]);
        assert!(max_diff(&rho, &expected) < 1e-15);
        assert!(DensityMatrix::from_matrix(rho.clone()).is_ok());
        let z = expand_in_basis(&rho).unwrap();
        let want = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, -0.5, 0.5]);
        assert!((z.values - want).abs().max() < 1e-12);
    }

    #[test]
    fn expansion_of_mixed_qubit_state() {
        let rho = DMatrix::from_row_slice(2, 2, &[c(0.75, 0.0), c(0.25, 0.25), c(0.25, -0.25), c(0.25, 0.0)]);
        let z = expand_in_basis(&rho).unwrap();
        let want = DMatrix::from_row_slice(2, 2, &[0.25, 0.5, 0.5, -0.25]);
        assert!((z.values.clone() - want).abs().max() < 1e-12);
        assert!(max_diff(&z.reconstruct(), &rho) < 1e-12);
    }

    #[test]
    fn expansion_rejects_non_hermitian() {
        let mut m = DMatrix::identity(2, 2);
        m[(0, 1)] = c(1.0, 0.0);
        assert!(matches!(expand_in_basis(&m), Err(Error::NotHermitian(_))));
    }

    #[test]
    fn q2_examples() {
        assert!(q2_admissible(0.5, 0.5, -0.5));
        assert!(q2_admissible(0.5, 0.5, 0.0));
        assert!(!q2_admissible(2.0, 0.0, 0.0));
    }

    #[test]
    fn verify_small_dimensions_and_corruption() {
        assert!(verify_basis(2, DEFAULT_VERIFY_CAP).unwrap().all_ok());
        assert!(verify_basis(8, DEFAULT_VERIFY_CAP).unwrap().all_ok());
        assert!(verify_basis(17, DEFAULT_VERIFY_CAP).is_err());
        let n = 3;
        let mut set: Vec<_> = (0..n).flat_map(|k| (0..n).map(move |j| basis_entries(n, k, j))).collect();
        set[1] = basis_entries(n, 0, 0);
        let report = verify_matrix_set(&set);
        assert!(!report.independent);
        assert!(report.hermitian && report.unit_trace && report.psd);
    }
}
