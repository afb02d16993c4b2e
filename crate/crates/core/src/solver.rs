//! Linear solves for the implicit midpoint system `(I - h/2 L) x = b`.
//!
//! The midpoint matrix is the identity plus a small perturbation for any
//! sensible step size, so restarted GMRES converges in a handful of
//! iterations. A dense LU path is kept for cross-checking.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverOptions {
    /// GMRES keeps iterating until the relative residual drops below this.
    pub target_rtol: f64,
    /// A solve fails if the final relative residual is above this.
    pub accept_rtol: f64,
    pub restart: usize,
    pub max_iters: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            target_rtol: 1e-14,
            accept_rtol: 1e-12,
            restart: 50,
            max_iters: 1000,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    pub residual: f64,
}

fn norm(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// Reusable GMRES(m) workspace for one problem size.
#[derive(Clone, Debug)]
pub struct Gmres {
    n: usize,
    basis: Vec<Vec<C64>>,
    hess: Vec<Vec<C64>>,
    cs: Vec<f64>,
    sn: Vec<C64>,
    g: Vec<C64>,
    w: Vec<C64>,
}

impl Gmres {
    pub fn new(n: usize, restart: usize) -> Self {
        let m = restart.max(1);
        Gmres {
            n,
            basis: vec![vec![C64::new(0.0, 0.0); n]; m + 1],
            hess: vec![vec![C64::new(0.0, 0.0); m]; m + 1],
            cs: vec![0.0; m],
            sn: vec![C64::new(0.0, 0.0); m],
            g: vec![C64::new(0.0, 0.0); m + 1],
            w: vec![C64::new(0.0, 0.0); n],
        }
    }

    /// Solves `A x = b` with `x` holding the initial guess on entry.
    pub fn solve<F>(&mut self, mut apply: F, b: &[C64], x: &mut [C64], opts: &SolverOptions) -> Result<SolveStats>
    where
        F: FnMut(&[C64], &mut [C64]),
    {
        assert_eq!(b.len(), self.n);
        assert_eq!(x.len(), self.n);
        let m = self.cs.len();
        let bnorm = norm(b);
        if bnorm == 0.0 {
            x.iter_mut().for_each(|v| *v = C64::new(0.0, 0.0));
            return Ok(SolveStats::default());
        }
        let mut iterations = 0;
        loop {
            apply(x, &mut self.w);
            for i in 0..self.n {
                self.basis[0][i] = b[i] - self.w[i];
            }
            let beta = norm(&self.basis[0]);
            let rel = beta / bnorm;
            if rel <= opts.target_rtol || iterations >= opts.max_iters {
                if rel > opts.accept_rtol {
                    return Err(Error::SolveFailed {
                        residual: rel,
                        iterations,
                    });
                }
                return Ok(SolveStats {
                    iterations,
                    residual: rel,
                });
            }
            let inv = 1.0 / beta;
            self.basis[0].iter_mut().for_each(|v| *v *= inv);
            self.g.iter_mut().for_each(|v| *v = C64::new(0.0, 0.0));
            self.g[0] = C64::new(beta, 0.0);

            let mut cols = 0;
            for j in 0..m {
                iterations += 1;
                cols = j + 1;
                let (head, tail) = self.basis.split_at_mut(j + 1);
                apply(&head[j], &mut tail[0]);
                let w = &mut tail[0];
                // Modified Gram-Schmidt.
                for (i, v) in head.iter().enumerate() {
                    let h = dot(v, w);
                    self.hess[i][j] = h;
                    for (wk, vk) in w.iter_mut().zip(v) {
                        *wk -= h * vk;
                    }
                }
                let hnext = norm(w);
                self.hess[j + 1][j] = C64::new(hnext, 0.0);
                if hnext > 0.0 {
                    let inv = 1.0 / hnext;
                    w.iter_mut().for_each(|v| *v *= inv);
                }
                for i in 0..j {
                    let (c, s) = (self.cs[i], self.sn[i]);
                    let a = self.hess[i][j];
                    let bb = self.hess[i + 1][j];
                    self.hess[i][j] = c * a + s * bb;
                    self.hess[i + 1][j] = -s.conj() * a + c * bb;
                }
                let a = self.hess[j][j];
                let bb = self.hess[j + 1][j];
                let rho = (a.norm_sqr() + bb.norm_sqr()).sqrt();
                let (c, s) = if a.norm() == 0.0 {
                    (0.0, C64::new(1.0, 0.0))
                } else {
                    (a.norm() / rho, (a / a.norm()) * bb.conj() / rho)
                };
                self.cs[j] = c;
                self.sn[j] = s;
                self.hess[j][j] = c * a + s * bb;
                self.hess[j + 1][j] = C64::new(0.0, 0.0);
                self.g[j + 1] = -s.conj() * self.g[j];
                self.g[j] *= c;
                if self.g[j + 1].norm() / bnorm <= opts.target_rtol || hnext == 0.0 || iterations >= opts.max_iters {
                    break;
                }
            }
            // Back substitution on the triangular Hessenberg factor.
            let mut y = vec![C64::new(0.0, 0.0); cols];
            for i in (0..cols).rev() {
                let mut acc = self.g[i];
                for k in i + 1..cols {
                    acc -= self.hess[i][k] * y[k];
                }
                y[i] = acc / self.hess[i][i];
            }
            for (k, yk) in y.iter().enumerate() {
                for (xi, vi) in x.iter_mut().zip(&self.basis[k]) {
                    *xi += yk * vi;
                }
            }
        }
    }
}

/// Dense LU solve, used as a reference for small systems.
pub fn dense_solve(a: &DMatrix<C64>, b: &[C64]) -> Result<Vec<C64>> {
    let rhs = DVector::from_column_slice(b);
    let x = a.clone().lu().solve(&rhs).ok_or(Error::SolveFailed {
        residual: f64::INFINITY,
        iterations: 0,
    })?;
    Ok(x.iter().copied().collect())
}
