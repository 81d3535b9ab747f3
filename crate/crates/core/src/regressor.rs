//! Sinusoidal regressor `phi_R(k)` and the lagged measurement histories.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::lti::shift_in;

/// Search bound for the common period of commensurate harmonics.
const MAX_PERIOD_SEARCH: u64 = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Harmonic {
    /// rad/s
    pub omega: f64,
    pub amplitude: f64,
    /// rad
    pub phase: f64,
}

/// Known compensation frequencies together with the (simulation-only)
/// amplitude/phase ground truth of the disturbance at the error.
#[derive(Debug, Clone, PartialEq)]
pub struct DisturbanceSpec {
    sample_period: f64,
    harmonics: Vec<Harmonic>,
    period: Option<u64>,
}

impl DisturbanceSpec {
    pub fn new(sample_period: f64, harmonics: Vec<Harmonic>) -> Result<Self> {
        if !(sample_period > 0.0 && sample_period.is_finite()) {
            return Err(Error::InvalidSpec(format!("sample period {sample_period} must be positive")));
        }
        if harmonics.is_empty() {
            return Err(Error::InvalidSpec("at least one compensation frequency is required".into()));
        }
        let nyquist = std::f64::consts::PI / sample_period;
        for (i, h) in harmonics.iter().enumerate() {
            if !(h.omega > 0.0 && h.omega < nyquist) {
                return Err(Error::InvalidSpec(format!(
                    "harmonic #{} at {} rad/s is outside (0, pi/T)",
                    i + 1,
                    h.omega
                )));
            }
            if i > 0 && h.omega <= harmonics[i - 1].omega {
                return Err(Error::InvalidSpec("frequencies must be strictly increasing".into()));
            }
            if !(h.amplitude >= 0.0 && h.amplitude.is_finite()) || !h.phase.is_finite() {
                return Err(Error::InvalidSpec(format!(
                    "harmonic #{} needs a finite non-negative amplitude and finite phase",
                    i + 1
                )));
            }
        }
        let period = common_period(sample_period, harmonics.iter().map(|h| h.omega));
        Ok(Self { sample_period, harmonics, period })
    }

    /// Frequencies only, zero amplitude.
    pub fn from_omegas(sample_period: f64, omegas: &[f64]) -> Result<Self> {
        Self::new(
            sample_period,
            omegas.iter().map(|&omega| Harmonic { omega, amplitude: 0.0, phase: 0.0 }).collect(),
        )
    }

    pub fn sample_period(&self) -> f64 {
        self.sample_period
    }

    pub fn harmonics(&self) -> &[Harmonic] {
        &self.harmonics
    }

    pub fn n(&self) -> usize {
        self.harmonics.len()
    }

    pub fn omegas(&self) -> Vec<f64> {
        self.harmonics.iter().map(|h| h.omega).collect()
    }

    /// Common period in samples when every `omega_i T / 2 pi` is rational
    /// with a small enough denominator.
    pub fn period(&self) -> Option<u64> {
        self.period
    }

    /// `theta = [a_1 cos d_1, a_1 sin d_1, ...]`, so that
    /// `theta^T phi_R(k) = sum a_i sin(w_i k T + d_i)`.
    pub fn theta(&self) -> Vec<f64> {
        self.harmonics
            .iter()
            .flat_map(|h| [h.amplitude * h.phase.cos(), h.amplitude * h.phase.sin()])
            .collect()
    }

    /// `[sin(w_1 kT), cos(w_1 kT), ..., sin(w_n kT), cos(w_n kT)]`.
    pub fn phi_r(&self, k: u64) -> Vec<f64> {
        let mut out = vec![0.0; 2 * self.n()];
        self.phi_r_into(k, &mut out);
        out
    }

    pub fn phi_r_into(&self, k: u64, out: &mut [f64]) {
        let k = match self.period {
            Some(p) => k % p,
            None => k,
        };
        let t = k as f64 * self.sample_period;
        for (h, slot) in self.harmonics.iter().zip(out.chunks_exact_mut(2)) {
            let (s, c) = (h.omega * t).sin_cos();
            slot[0] = s;
            slot[1] = c;
        }
    }

    /// `theta^T phi_R(k)`.
    pub fn disturbance_value(&self, theta: &[f64], k: u64) -> Result<f64> {
        if theta.len() != 2 * self.n() {
            return Err(Error::Dimension { expected: 2 * self.n(), got: theta.len() });
        }
        Ok(dot(theta, &self.phi_r(k)))
    }
}

/// Smallest `P` with `omega_i T P / 2 pi` integral for all `i`.
pub fn common_period(sample_period: f64, omegas: impl Iterator<Item = f64> + Clone) -> Option<u64> {
    let cycles: Vec<f64> = omegas.map(|w| w * sample_period / TAU).collect();
    (1..=MAX_PERIOD_SEARCH).find(|&p| {
        cycles.iter().all(|&c| {
            let x = c * p as f64;
            (x - x.round()).abs() <= 1e-9
        })
    })
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Rolling histories `phi_e`, `phi_u`, `phi_uA`; entry `j` holds the signal at `k-1-j`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressorBank {
    phi_e: Vec<f64>,
    phi_u: Vec<f64>,
    phi_ua: Vec<f64>,
    k: u64,
}

impl RegressorBank {
    pub fn new(n_a: usize) -> Self {
        Self { phi_e: vec![0.0; n_a], phi_u: vec![0.0; n_a], phi_ua: vec![0.0; n_a], k: 0 }
    }

    pub fn n_a(&self) -> usize {
        self.phi_e.len()
    }

    pub fn phi_e(&self) -> &[f64] {
        &self.phi_e
    }

    pub fn phi_u(&self) -> &[f64] {
        &self.phi_u
    }

    pub fn phi_ua(&self) -> &[f64] {
        &self.phi_ua
    }

    pub fn k(&self) -> u64 {
        self.k
    }

    pub fn push(&mut self, e: f64, u: f64, u_a: f64) -> Result<()> {
        ensure_finite(&[e, u, u_a], "regressor sample")?;
        shift_in(&mut self.phi_e, e);
        shift_in(&mut self.phi_u, u);
        shift_in(&mut self.phi_ua, u_a);
        self.k += 1;
        Ok(())
    }
}
