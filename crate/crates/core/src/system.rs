//! Composite qudit/cavity Hilbert space and its time-independent operators.
//!
//! Subsystems are indexed from zero in code (the config file and CSV headers
//! count from one). Subsystem 0 is the slowest-varying Kronecker factor, so a
//! composite basis index is `k_0 * (n_1 * ... * n_{Q-1}) + ... + k_{Q-1}`.
//!
//! Inputs use the laboratory conventions of frequency over 2π (GHz for
//! transition frequencies, MHz for Kerr terms) and microseconds for times.
//! All operators built here are in angular units, rad/µs.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;

/// Angular frequency in rad/µs for a frequency given in MHz.
pub fn mhz_to_angular(mhz: f64) -> f64 {
    2.0 * PI * mhz
}

/// Angular frequency in rad/µs for a frequency given in GHz.
pub fn ghz_to_angular(ghz: f64) -> f64 {
    2.0 * PI * 1e3 * ghz
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubsystemSpec {
    pub levels: usize,
    pub freq_ghz: f64,
    pub selfkerr_mhz: f64,
    /// Decay time in µs; `None` or infinity disables the decay channel.
    pub t1_us: Option<f64>,
    /// Dephasing time in µs; `None` or infinity disables the dephasing channel.
    pub t2_us: Option<f64>,
}

impl SubsystemSpec {
    pub fn new(levels: usize, freq_ghz: f64, selfkerr_mhz: f64) -> Self {
        SubsystemSpec {
            levels,
            freq_ghz,
            selfkerr_mhz,
            t1_us: None,
            t2_us: None,
        }
    }

    pub fn with_t1(mut self, t1_us: f64) -> Self {
        self.t1_us = Some(t1_us);
        self
    }

    pub fn with_t2(mut self, t2_us: f64) -> Self {
        self.t2_us = Some(t2_us);
        self
    }

    pub(crate) fn validate(&self, q: usize) -> Result<()> {
        if self.levels < 2 {
            return Err(Error::InvalidParameter(format!(
                "subsystem {} has {} levels, need at least 2",
                q + 1,
                self.levels
            )));
        }
        if !self.freq_ghz.is_finite() || !self.selfkerr_mhz.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "subsystem {} has a non-finite frequency",
                q + 1
            )));
        }
        for (name, t) in [("t1", self.t1_us), ("t2", self.t2_us)] {
            if let Some(t) = t {
                if t.is_nan() || t <= 0.0 {
                    return Err(Error::InvalidParameter(format!(
                        "subsystem {} has nonpositive {name} = {t}",
                        q + 1
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Frame {
    Lab,
    Rotating,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompositeSystem {
    subsystems: Vec<SubsystemSpec>,
    /// Cross-Kerr couplings in MHz, keyed by `(p, q)` with `p > q`.
    crosskerr: BTreeMap<(usize, usize), f64>,
    dim: usize,
}

impl CompositeSystem {
    /// Builds a system from its subsystems and cross-Kerr couplings `(p, q, ξ_pq/2π in MHz)`.
    /// Pairs may be given in either order but only once per unordered pair.
    pub fn new(subsystems: Vec<SubsystemSpec>, crosskerr: &[(usize, usize, f64)]) -> Result<Self> {
        if subsystems.is_empty() {
            return Err(Error::InvalidParameter("system has no subsystems".into()));
        }
        for (q, s) in subsystems.iter().enumerate() {
            s.validate(q)?;
        }
        let count = subsystems.len();
        let mut map = BTreeMap::new();
        for &(a, b, xi) in crosskerr {
            if a >= count || b >= count || a == b {
                return Err(Error::InvalidParameter(format!(
                    "cross-Kerr pair ({}, {}) does not name two distinct subsystems of {count}",
                    a + 1,
                    b + 1
                )));
            }
            let key = (a.max(b), a.min(b));
            if map.insert(key, xi).is_some() {
                return Err(Error::InvalidParameter(format!(
                    "cross-Kerr pair ({}, {}) given twice",
                    key.0 + 1,
                    key.1 + 1
                )));
            }
        }
        let dim = subsystems.iter().map(|s| s.levels).product();
        Ok(CompositeSystem {
            subsystems,
            crosskerr: map,
            dim,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_subsystems(&self) -> usize {
        self.subsystems.len()
    }

    pub fn subsystems(&self) -> &[SubsystemSpec] {
        &self.subsystems
    }

    pub fn subsystem(&self, q: usize) -> Result<&SubsystemSpec> {
        self.subsystems.get(q).ok_or(Error::InvalidSubsystem {
            index: q,
            count: self.subsystems.len(),
        })
    }

    pub fn levels(&self) -> Vec<usize> {
        self.subsystems.iter().map(|s| s.levels).collect()
    }

    /// Cross-Kerr couplings as `(p, q, MHz)` with `p > q`.
    pub fn crosskerr(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.crosskerr.iter().map(|(&(p, q), &v)| (p, q, v))
    }

    /// Transition frequency ω_q in rad/µs.
    pub fn omega(&self, q: usize) -> Result<f64> {
        Ok(ghz_to_angular(self.subsystem(q)?.freq_ghz))
    }

    /// Splits a composite basis index into per-subsystem level indices.
    pub fn digits(&self, mut index: usize) -> Vec<usize> {
        let mut out = vec![0; self.subsystems.len()];
        for (q, s) in self.subsystems.iter().enumerate().rev() {
            out[q] = index % s.levels;
            index /= s.levels;
        }
        out
    }

    /// Inverse of [`digits`](Self::digits).
    pub fn index_of(&self, digits: &[usize]) -> Result<usize> {
        if digits.len() != self.subsystems.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} level indices for {} subsystems",
                digits.len(),
                self.subsystems.len()
            )));
        }
        let mut index = 0;
        for (d, s) in digits.iter().zip(&self.subsystems) {
            if *d >= s.levels {
                return Err(Error::IndexOutOfRange(format!("level {d} of a {}-level subsystem", s.levels)));
            }
            index = index * s.levels + d;
        }
        Ok(index)
    }

    /// Embeds a single-subsystem operator as `I ⊗ … ⊗ op ⊗ … ⊗ I`.
    fn embed(&self, q: usize, op: &SparseMatrix) -> SparseMatrix {
        let before: usize = self.subsystems[..q].iter().map(|s| s.levels).product();
        let after: usize = self.subsystems[q + 1..].iter().map(|s| s.levels).product();
        SparseMatrix::identity(before).kron(op).kron(&SparseMatrix::identity(after))
    }

    pub fn lowering_operator(&self, q: usize) -> Result<SparseMatrix> {
        let n = self.subsystem(q)?.levels;
        let a = SparseMatrix::from_triplets(n, n, (1..n).map(|k| (k - 1, k, C64::new((k as f64).sqrt(), 0.0))));
        Ok(self.embed(q, &a))
    }

    pub fn number_operator(&self, q: usize) -> Result<SparseMatrix> {
        let n = self.subsystem(q)?.levels;
        let diag: Vec<C64> = (0..n).map(|k| C64::new(k as f64, 0.0)).collect();
        Ok(self.embed(q, &SparseMatrix::from_diagonal(&diag)))
    }

    pub fn drift_hamiltonian(&self, frame: Frame) -> Result<SparseMatrix> {
        let mut h = SparseMatrix::zeros(self.dim, self.dim);
        for q in 0..self.num_subsystems() {
            let s = &self.subsystems[q];
            let a = self.lowering_operator(q)?;
            let ad = a.adjoint();
            let num = ad.matmul(&a);
            if frame == Frame::Lab {
                h = h.add(&num.scale(C64::new(ghz_to_angular(s.freq_ghz), 0.0)));
            }
            let kerr = ad.matmul(&ad).matmul(&a).matmul(&a);
            h = h.add(&kerr.scale(C64::new(-0.5 * mhz_to_angular(s.selfkerr_mhz), 0.0)));
        }
        for (&(p, q), &xi) in &self.crosskerr {
            let cross = self.number_operator(p)?.matmul(&self.number_operator(q)?);
            h = h.add(&cross.scale(C64::new(-mhz_to_angular(xi), 0.0)));
        }
        Ok(h)
    }

    /// Decay operators `a_q/√T₁` and dephasing operators `a_q†a_q/√T₂` for
    /// every finite decoherence time.
    pub fn collapse_operators(&self) -> Result<Vec<SparseMatrix>> {
        let mut out = Vec::new();
        for (q, s) in self.subsystems.iter().enumerate() {
            s.validate(q)?;
            if let Some(t1) = s.t1_us.filter(|t| t.is_finite()) {
                out.push(self.lowering_operator(q)?.scale(C64::new(1.0 / t1.sqrt(), 0.0)));
            }
            if let Some(t2) = s.t2_us.filter(|t| t.is_finite()) {
                out.push(self.number_operator(q)?.scale(C64::new(1.0 / t2.sqrt(), 0.0)));
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn real(m: &SparseMatrix) -> DMatrix<f64> {
        m.to_dense().map(|z| z.re)
    }

    #[test]
    fn lowering_operator_single_subsystems() {
        let sys = CompositeSystem::new(vec![SubsystemSpec::new(2, 1.0, 0.0)], &[]).unwrap();
        assert_eq!(real(&sys.lowering_operator(0).unwrap()), DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]));

        let sys = CompositeSystem::new(vec![SubsystemSpec::new(3, 1.0, 0.0)], &[]).unwrap();
        let a = real(&sys.lowering_operator(0).unwrap());
        assert_eq!(a[(0, 1)], 1.0);
        assert_eq!(a[(1, 2)], 2f64.sqrt());
        assert_eq!(a.iter().filter(|v| **v != 0.0).count(), 2);
    }

    #[test]
    fn lowering_operator_first_factor_of_two_qubits() {
        let sys = CompositeSystem::new(vec![SubsystemSpec::new(2, 1.0, 0.0), SubsystemSpec::new(2, 1.0, 0.0)], &[]).unwrap();
        let a = real(&sys.lowering_operator(0).unwrap());
        let mut expected = DMatrix::zeros(4, 4);
        expected[(0, 2)] = 1.0;
        expected[(1, 3)] = 1.0;
        assert_eq!(a, expected);
        assert!(sys.lowering_operator(2).is_err());
    }

    #[test]
    fn number_operator_examples() {
        let sys = CompositeSystem::new(vec![SubsystemSpec::new(3, 1.0, 0.0)], &[]).unwrap();
        assert_eq!(real(&sys.number_operator(0).unwrap()), DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&[0.0, 1.0, 2.0])));

        let sys = CompositeSystem::new(vec![SubsystemSpec::new(3, 1.0, 0.0), SubsystemSpec::new(2, 1.0, 0.0)], &[]).unwrap();
        let n = real(&sys.number_operator(1).unwrap());
        let expected = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&[0.0, 1.0, 0.0, 1.0, 0.0, 1.0]));
        assert_eq!(n, expected);
        for q in 0..2 {
            let a = sys.lowering_operator(q).unwrap();
            let defect = (a.adjoint().matmul(&a).to_dense() - sys.number_operator(q).unwrap().to_dense()).norm();
            assert!(defect < 1e-14);
        }
        assert!(sys.number_operator(5).is_err());
    }

    #[test]
    fn drift_single_qubit_lab_and_rotating() {
        let sys = CompositeSystem::new(vec![SubsystemSpec::new(2, 4.41666, 0.0)], &[]).unwrap();
        let lab = real(&sys.drift_hamiltonian(Frame::Lab).unwrap());
        assert_eq!(lab[(0, 0)], 0.0);
        assert!((lab[(1, 1)] - 2.0 * PI * 4416.66).abs() < 1e-9);
        let rot = sys.drift_hamiltonian(Frame::Rotating).unwrap();
        assert_eq!(rot.nnz(), 0);
    }

    #[test]
    fn drift_qudit_selfkerr_rotating() {
        let sys = CompositeSystem::new(vec![SubsystemSpec::new(3, 4.41666, 230.56)], &[]).unwrap();
        let rot = real(&sys.drift_hamiltonian(Frame::Rotating).unwrap());
        let expected = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&[0.0, 0.0, -2.0 * PI * 230.56]));
        assert!((rot - expected).abs().max() < 1e-9);
    }

    #[test]
    fn drift_properties_two_subsystems() {
        let sys = CompositeSystem::new(
            vec![SubsystemSpec::new(3, 4.41666, 230.56), SubsystemSpec::new(4, 6.84081, 0.0)],
            &[(0, 1, 1.176)],
        )
        .unwrap();
        let lab = sys.drift_hamiltonian(Frame::Lab).unwrap();
        let rot = sys.drift_hamiltonian(Frame::Rotating).unwrap();
        assert!(lab.hermitian_defect() < 1e-14);
        assert!(rot.hermitian_defect() < 1e-14);
        let mut shifted = lab.clone();
        for q in 0..2 {
            let w = sys.omega(q).unwrap();
            shifted = shifted.sub(&sys.number_operator(q).unwrap().scale(C64::new(w, 0.0)));
        }
        let (s, r) = (shifted.to_dense(), rot.to_dense());
        let scale = lab.to_dense().iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!((s - r).iter().map(|z| z.norm()).fold(0.0, f64::max) < 1e-12 * scale);
    }

    #[test]
    fn lowering_operators_on_distinct_factors_commute() {
        let sys = CompositeSystem::new(
            vec![SubsystemSpec::new(2, 1.0, 0.0), SubsystemSpec::new(3, 1.0, 0.0), SubsystemSpec::new(2, 1.0, 0.0)],
            &[],
        )
        .unwrap();
        for p in 0..3 {
            for q in 0..3 {
                if p == q {
                    continue;
                }
                let (a, b) = (sys.lowering_operator(p).unwrap(), sys.lowering_operator(q).unwrap());
                assert_eq!(a.matmul(&b).sub(&b.matmul(&a)).nnz(), 0);
            }
        }
    }

    #[test]
    fn number_operator_spectrum_multiplicities() {
        let sys = CompositeSystem::new(vec![SubsystemSpec::new(3, 1.0, 0.0), SubsystemSpec::new(4, 1.0, 0.0)], &[]).unwrap();
        for q in 0..2 {
            let n = sys.number_operator(q).unwrap().to_dense();
            let levels = sys.levels()[q];
            let mut counts = vec![0usize; levels];
            for i in 0..sys.dim() {
                counts[n[(i, i)].re as usize] += 1;
            }
            assert!(counts.iter().all(|&c| c == sys.dim() / levels));
        }
    }

    #[test]
    fn collapse_operator_selection() {
        let qubit = SubsystemSpec::new(2, 4.41666, 0.0).with_t1(80.0).with_t2(26.0);
        let sys = CompositeSystem::new(vec![qubit], &[]).unwrap();
        let ops = sys.collapse_operators().unwrap();
        assert_eq!(ops.len(), 2);
        assert!((ops[0].get(0, 1).re - 1.0 / 80f64.sqrt()).abs() < 1e-15);
        assert!((ops[1].get(1, 1).re - 1.0 / 26f64.sqrt()).abs() < 1e-15);

        let cavity = SubsystemSpec::new(3, 6.84081, 0.0).with_t1(0.3892);
        let sys = CompositeSystem::new(vec![cavity], &[]).unwrap();
        assert_eq!(sys.collapse_operators().unwrap().len(), 1);

        let closed = SubsystemSpec::new(2, 1.0, 0.0).with_t1(f64::INFINITY).with_t2(f64::INFINITY);
        let sys = CompositeSystem::new(vec![closed], &[]).unwrap();
        assert!(sys.collapse_operators().unwrap().is_empty());

        let bad = SubsystemSpec::new(2, 1.0, 0.0).with_t1(-1.0);
        assert!(CompositeSystem::new(vec![bad], &[]).is_err());
    }

    #[test]
    fn crosskerr_validation_and_digits() {
        let subs = vec![SubsystemSpec::new(3, 1.0, 0.0), SubsystemSpec::new(20, 1.0, 0.0)];
        assert!(CompositeSystem::new(subs.clone(), &[(0, 2, 1.0)]).is_err());
        assert!(CompositeSystem::new(subs.clone(), &[(0, 1, 1.0), (1, 0, 1.0)]).is_err());
        let sys = CompositeSystem::new(subs, &[(0, 1, 1.176)]).unwrap();
        assert_eq!(sys.dim(), 60);
        assert_eq!(sys.index_of(&[1, 0]).unwrap(), 20);
        assert_eq!(sys.digits(20), vec![1, 0]);
        assert_eq!(sys.crosskerr().collect::<Vec<_>>(), vec![(1, 0, 1.176)]);
    }
}
