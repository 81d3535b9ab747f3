//! Exogenous excitation concentrated around the compensation frequencies,
//! a maximal-length PRBS alternative, and a persistency-of-excitation check.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::regressor::DisturbanceSpec;

/// Default sideband offset as a fraction of the smallest compensation frequency.
pub const DEFAULT_DELTA_FRACTION: f64 = 0.02;

const LFSR_DEGREE: u32 = 16;
const LFSR_PERIOD: usize = (1 << LFSR_DEGREE) - 1;
// x^16 + x^14 + x^13 + x^11 + 1
const LFSR_TAPS: u16 = 0xB400;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmplitudeProfile {
    pub initial: f64,
    /// Exponential decay toward `floor` with time constant `tau_steps`.
    #[serde(default)]
    pub decay: Option<Decay>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decay {
    pub tau_steps: f64,
    pub floor: f64,
}

impl AmplitudeProfile {
    pub fn constant(initial: f64) -> Self {
        Self { initial, decay: None }
    }

    pub fn at(&self, k: u64) -> f64 {
        match self.decay {
            None => self.initial,
            Some(Decay { tau_steps, floor }) => {
                floor + (self.initial - floor) * (-(k as f64) / tau_steps).exp()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExcitationMode {
    Off,
    /// Pairs of sinusoids at `omega_i +/- delta` for each configured `delta` (rad/s).
    Sidebands { deltas: Vec<f64> },
    Prbs(Prbs),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExcitationSpec {
    pub amplitude: AmplitudeProfile,
    pub mode: ExcitationMode,
}

impl ExcitationSpec {
    pub fn off() -> Self {
        Self { amplitude: AmplitudeProfile::constant(0.0), mode: ExcitationMode::Off }
    }

    pub fn sidebands(amplitude: f64, deltas: Vec<f64>) -> Self {
        Self { amplitude: AmplitudeProfile::constant(amplitude), mode: ExcitationMode::Sidebands { deltas } }
    }

    /// Validates the sideband layout against the compensation frequencies.
    pub fn validate(&self, dist: &DisturbanceSpec) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.amplitude.initial >= 0.0 && self.amplitude.initial.is_finite()) {
            errs.push(format!("excitation amplitude {} must be non-negative", self.amplitude.initial));
        }
        if let Some(d) = self.amplitude.decay {
            if !(d.tau_steps > 0.0 && d.floor >= 0.0) {
                errs.push("excitation decay needs tau_steps > 0 and floor >= 0".into());
            }
        }
        let ExcitationMode::Sidebands { deltas } = &self.mode else {
            return errs;
        };
        let omegas = dist.omegas();
        let w_min = omegas[0];
        let nyquist = std::f64::consts::PI / dist.sample_period();
        if deltas.is_empty() {
            errs.push("sideband excitation needs at least one delta_u".into());
        }
        for &d in deltas {
            if !(d > 0.0 && d < w_min) {
                errs.push(format!(
                    "delta_u = {d} rad/s must satisfy 0 < delta_u < min omega_i = {w_min}"
                ));
            }
        }
        let tol = 1e-9 * nyquist;
        for &d in deltas {
            for &wi in &omegas {
                for side in [wi + d, wi - d] {
                    if side >= nyquist {
                        errs.push(format!("sideband {side} rad/s is at or above Nyquist"));
                    }
                    if let Some(wj) = omegas.iter().find(|&&wj| (wj - side).abs() <= tol) {
                        errs.push(format!(
                            "sideband collision: {wi} {} {d} rad/s lands on compensation frequency {wj}",
                            if side > wi { "+" } else { "-" }
                        ));
                    }
                }
            }
        }
        errs
    }

    /// Persistency-of-excitation order implied by the layout (`None` for PRBS).
    pub fn nominal_pe_order(&self, dist: &DisturbanceSpec) -> Option<usize> {
        match &self.mode {
            ExcitationMode::Off => Some(0),
            ExcitationMode::Prbs(_) => None,
            ExcitationMode::Sidebands { deltas } => {
                let mut freqs: Vec<f64> = Vec::new();
                for &d in deltas {
                    for w in dist.omegas() {
                        for f in [w + d, w - d] {
                            if f > 0.0 && !freqs.iter().any(|g| (g - f).abs() <= 1e-9 * f.abs().max(1.0)) {
                                freqs.push(f);
                            }
                        }
                    }
                }
                Some(2 * freqs.len())
            }
        }
    }

    /// Excitation sample at step `k`, using the fast form where it applies.
    pub fn value(&self, dist: &DisturbanceSpec, phi_r: &[f64], k: u64) -> f64 {
        match &self.mode {
            ExcitationMode::Off => 0.0,
            ExcitationMode::Sidebands { .. } => excitation_fast(self, phi_r, k, dist.sample_period()),
            ExcitationMode::Prbs(p) => p.value(self.amplitude.at(k), k),
        }
    }
}

/// `(a(k)/2) sum_delta sum_i [sin((w_i + delta) kT) + sin((w_i - delta) kT)]`.
pub fn excitation_direct(spec: &ExcitationSpec, dist: &DisturbanceSpec, k: u64) -> f64 {
    let ExcitationMode::Sidebands { deltas } = &spec.mode else {
        return match &spec.mode {
            ExcitationMode::Prbs(p) => p.value(spec.amplitude.at(k), k),
            _ => 0.0,
        };
    };
    let t = k as f64 * dist.sample_period();
    let mut sum = 0.0;
    for &d in deltas {
        for w in dist.omegas() {
            sum += ((w + d) * t).sin() + ((w - d) * t).sin();
        }
    }
    spec.amplitude.at(k) / 2.0 * sum
}

/// `a(k) sum_delta cos(delta kT) sum_i phi_R[2i-1](k)`: reuses the sine slots
/// of the regressor, so only one cosine per offset is evaluated.
pub fn excitation_fast(spec: &ExcitationSpec, phi_r: &[f64], k: u64, sample_period: f64) -> f64 {
    let ExcitationMode::Sidebands { deltas } = &spec.mode else {
        return 0.0;
    };
    let sines: f64 = phi_r.iter().step_by(2).sum();
    let t = k as f64 * sample_period;
    let carrier: f64 = deltas.iter().map(|d| (d * t).cos()).sum();
    spec.amplitude.at(k) * carrier * sines
}

/// Maximal-length binary sequence from a 16-bit Galois LFSR, tabulated over one
/// period so that the value at any step is a pure function of `(seed, k)`.
#[derive(Clone, PartialEq)]
pub struct Prbs {
    seed: u64,
    table: Vec<bool>,
}

impl std::fmt::Debug for Prbs {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Prbs").field("seed", &self.seed).finish()
    }
}

impl Prbs {
    pub fn new(seed: u64) -> Self {
        let mut state: u16 = (seed % LFSR_PERIOD as u64) as u16 + 1;
        let mut table = Vec::with_capacity(LFSR_PERIOD);
        for _ in 0..LFSR_PERIOD {
            let bit = state & 1;
            table.push(bit == 1);
            state >>= 1;
            if bit == 1 {
                state ^= LFSR_TAPS;
            }
        }
        Self { seed, table }
    }

    pub fn period(&self) -> usize {
        LFSR_PERIOD
    }

    pub fn value(&self, amplitude: f64, k: u64) -> f64 {
        if self.table[(k % LFSR_PERIOD as u64) as usize] {
            amplitude
        } else {
            -amplitude
        }
    }
}

/// `+/- amplitude` maximal-length sequence value at step `k`.
pub fn prbs(seed: u64, amplitude: f64, k: u64) -> f64 {
    Prbs::new(seed).value(amplitude, k)
}

/// Persistency of excitation of order `m` over a window.
///
/// The window is treated as one period of the signal: the `m x m` Gram matrix
/// of delay vectors is built from the circular autocorrelation, which keeps the
/// order-`m - 1` matrix a leading block of the order-`m` one. Returns whether
/// its smallest eigenvalue exceeds `tol`, and that eigenvalue.
pub fn pe_order(signal: &[f64], m: usize, tol: f64) -> Result<(bool, f64)> {
    if m == 0 {
        return Err(Error::InvalidSpec("excitation order must be at least 1".into()));
    }
    let needed = 10 * m;
    if signal.len() < needed {
        return Err(Error::InsufficientData { needed, got: signal.len() });
    }
    let n = signal.len();
    let r: Vec<f64> = (0..m)
        .map(|lag| (0..n).map(|k| signal[k] * signal[(k + lag) % n]).sum::<f64>() / n as f64)
        .collect();
    let gram = DMatrix::from_fn(m, m, |i, j| r[i.abs_diff(j)]);
    let eig = SymmetricEigen::new(gram);
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let min = if min.abs() < f64::EPSILON * r[0] { min.max(0.0) } else { min };
    Ok((min > tol, min))
}
