//! Control pulses: quadratic B-spline envelopes modulating fixed carrier waves.
//!
//! In the rotating frame subsystem `q` is driven by
//! `d(t) = Σ_s S_s(t) Σ_n (α¹_sn + i α²_sn) e^{i t Ω_n}`, and the physical
//! laboratory signal is `f(t) = 2 Re(d(t) e^{i ω_q t})`.
//!
//! The optimization vector stores subsystems back to back; within subsystem
//! `q` coefficient `(s, n)` occupies two slots, real part then imaginary
//! part, at `offset(q) + 2 (s N_f + n)`.

use std::f64::consts::PI;
use std::ops::{Deref, DerefMut};

use num_complex::Complex64 as C64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

/// Cardinal quadratic B-spline supported on `[0, 3]`.
pub fn cardinal_quadratic(u: f64) -> f64 {
    if !(0.0..=3.0).contains(&u) {
        0.0
    } else if u < 1.0 {
        0.5 * u * u
    } else if u < 2.0 {
        -u * u + 3.0 * u - 1.5
    } else {
        0.5 * (3.0 - u) * (3.0 - u)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubsystemControl {
    pub num_splines: usize,
    /// Rotating-frame carrier frequencies Ω_n in rad/µs.
    pub carriers: Vec<f64>,
}

impl SubsystemControl {
    pub fn new(num_splines: usize, carriers: Vec<f64>) -> Self {
        SubsystemControl { num_splines, carriers }
    }

    pub fn num_carriers(&self) -> usize {
        self.carriers.len()
    }

    pub fn num_params(&self) -> usize {
        2 * self.num_splines * self.carriers.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ControlParameterization {
    final_time: f64,
    subsystems: Vec<SubsystemControl>,
    offsets: Vec<usize>,
}

impl ControlParameterization {
    pub fn new(final_time: f64, subsystems: Vec<SubsystemControl>) -> Result<Self> {
        if !(final_time > 0.0 && final_time.is_finite()) {
            return Err(Error::InvalidParameter(format!("final time {final_time} must be positive")));
        }
        let mut offsets = Vec::with_capacity(subsystems.len());
        let mut total = 0;
        for (q, s) in subsystems.iter().enumerate() {
            if s.num_splines < 3 {
                return Err(Error::InvalidParameter(format!(
                    "subsystem {} needs at least 3 splines, got {}",
                    q + 1,
                    s.num_splines
                )));
            }
            if s.carriers.is_empty() {
                return Err(Error::InvalidParameter(format!("subsystem {} has no carrier frequencies", q + 1)));
            }
            if s.carriers.iter().any(|w| !w.is_finite()) {
                return Err(Error::InvalidParameter(format!("subsystem {} has a non-finite carrier", q + 1)));
            }
            offsets.push(total);
            total += s.num_params();
        }
        offsets.push(total);
        Ok(ControlParameterization {
            final_time,
            subsystems,
            offsets,
        })
    }

    pub fn final_time(&self) -> f64 {
        self.final_time
    }

    pub fn num_subsystems(&self) -> usize {
        self.subsystems.len()
    }

    pub fn subsystem(&self, q: usize) -> Result<&SubsystemControl> {
        self.subsystems.get(q).ok_or(Error::InvalidSubsystem {
            index: q,
            count: self.subsystems.len(),
        })
    }

    pub fn subsystems(&self) -> &[SubsystemControl] {
        &self.subsystems
    }

    pub fn num_params(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    /// Slot of the real part of `α^q_{s,n}`; the imaginary part follows it.
    pub fn index(&self, q: usize, s: usize, n: usize) -> usize {
        let nf = self.subsystems[q].num_carriers();
        self.offsets[q] + 2 * (s * nf + n)
    }

    /// Range of slots owned by subsystem `q`.
    pub fn block(&self, q: usize) -> std::ops::Range<usize> {
        self.offsets[q]..self.offsets[q + 1]
    }

    /// Knot spacing `Δτ = T / (N_s - 2)`.
    pub fn knot_spacing(&self, q: usize) -> f64 {
        self.final_time / (self.subsystems[q].num_splines as f64 - 2.0)
    }

    /// Center `τ_s` of spline `s` (zero based), `Δτ (s - 1/2)`.
    pub fn center(&self, q: usize, s: usize) -> f64 {
        self.knot_spacing(q) * (s as f64 - 0.5)
    }

    pub fn bspline_value(&self, q: usize, s: usize, t: f64) -> Result<f64> {
        let ns = self.subsystem(q)?.num_splines;
        if s >= ns {
            return Err(Error::IndexOutOfRange(format!("spline {s} of {ns}")));
        }
        let dtau = self.knot_spacing(q);
        Ok(cardinal_quadratic((t - self.center(q, s)) / dtau + 1.5))
    }

    /// The (at most three) splines that are nonzero at `t`, with their values.
    pub fn active_splines(&self, q: usize, t: f64) -> impl Iterator<Item = (usize, f64)> + '_ {
        let ns = self.subsystems[q].num_splines;
        let dtau = self.knot_spacing(q);
        // u_s = t/Δτ - s + 2 lies in (0, 3) for s in (t/Δτ - 1, t/Δτ + 2).
        let x = t / dtau;
        let lo = (x - 1.0).floor().max(0.0) as usize;
        let hi = ((x + 2.0).ceil().max(0.0) as usize).min(ns.saturating_sub(1));
        (lo..=hi).filter_map(move |s| {
            let v = cardinal_quadratic(x - s as f64 + 2.0);
            (v != 0.0).then_some((s, v))
        })
    }

    pub fn check_len(&self, alpha: &[f64]) -> Result<()> {
        if alpha.len() != self.num_params() {
            return Err(Error::DimensionMismatch(format!(
                "control vector has {} entries, parameterization needs {}",
                alpha.len(),
                self.num_params()
            )));
        }
        Ok(())
    }

    /// Rotating-frame control `d^q(t)`.
    pub fn rotating_control(&self, alpha: &[f64], q: usize, t: f64) -> C64 {
        let carriers = &self.subsystems[q].carriers;
        let phases: Vec<C64> = carriers.iter().map(|w| C64::from_polar(1.0, w * t)).collect();
        let mut d = C64::new(0.0, 0.0);
        for (s, sv) in self.active_splines(q, t) {
            let mut inner = C64::new(0.0, 0.0);
            for (n, ph) in phases.iter().enumerate() {
                let k = self.index(q, s, n);
                inner += C64::new(alpha[k], alpha[k + 1]) * ph;
            }
            d += inner * sv;
        }
        d
    }

    /// Laboratory-frame control `2 Re(d^q(t) e^{i ω t})` for `omega` in rad/µs.
    pub fn lab_control(&self, alpha: &[f64], q: usize, t: f64, omega: f64) -> f64 {
        2.0 * (self.rotating_control(alpha, q, t) * C64::from_polar(1.0, omega * t)).re
    }

    pub fn max_lab_amplitude(&self, alpha: &[f64], q: usize, omega: f64, times: &[f64]) -> f64 {
        times
            .iter()
            .map(|&t| self.lab_control(alpha, q, t, omega).abs())
            .fold(0.0, f64::max)
    }

    /// Magnitude spectrum of the lab-frame control sampled at `sample_rate`
    /// samples per µs over `[0, T)`. Frequencies are in GHz; a pure cosine of
    /// amplitude `A` shows a peak of height close to `A`.
    pub fn control_spectrum(&self, alpha: &[f64], q: usize, omega: f64, sample_rate: f64) -> Result<Vec<(f64, f64)>> {
        let sub = self.subsystem(q)?;
        let highest_mhz = sub
            .carriers
            .iter()
            .map(|w| ((omega + w) / (2.0 * PI)).abs())
            .fold(0.0, f64::max);
        if !(sample_rate >= 2.0 * highest_mhz) {
            return Err(Error::InvalidParameter(format!(
                "sample rate {sample_rate} per µs is below twice the highest lab carrier {highest_mhz} MHz"
            )));
        }
        let count = (self.final_time * sample_rate).round() as usize;
        if count < 2 {
            return Err(Error::InvalidParameter("spectrum needs at least two samples".into()));
        }
        let dt = 1.0 / sample_rate;
        let mut buf: Vec<C64> = (0..count)
            .map(|i| C64::new(self.lab_control(alpha, q, i as f64 * dt, omega), 0.0))
            .collect();
        FftPlanner::new().plan_fft_forward(count).process(&mut buf);
        let norm = 2.0 / count as f64;
        Ok((0..=count / 2)
            .map(|k| {
                let freq_mhz = k as f64 * sample_rate / count as f64;
                (freq_mhz * 1e-3, buf[k].norm() * norm)
            })
            .collect())
    }
}

/// Real optimization vector laid out as described in the module docs.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ControlVector(pub Vec<f64>);

impl ControlVector {
    pub fn zeros(param: &ControlParameterization) -> Self {
        ControlVector(vec![0.0; param.num_params()])
    }

    pub fn norm_sqr(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum()
    }
}

impl Deref for ControlVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ControlVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for ControlVector {
    fn from(v: Vec<f64>) -> Self {
        ControlVector(v)
    }
}
