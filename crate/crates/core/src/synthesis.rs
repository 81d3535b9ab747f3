//! Leaky-gradient synthesis of the feedforward parameters `theta_D` and the
//! control output `u_A(k) = theta_D^T phi_R(k)`.

use serde::{Deserialize, Serialize};

use crate::adaptation::b_polynomial;
use crate::error::{Error, Result};
use crate::lti::{build_transform, BlockDiagTransform, RotationBlock};
use crate::regressor::dot;

/// Default bound on `alpha / (1 - beta)`.
pub const DEFAULT_RATIO_MAX: f64 = 1000.0;

/// Required separation in `alpha << beta`, checked as `alpha * sep <= beta`.
pub const ALPHA_BETA_SEPARATION: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthesisGains {
    pub alpha: f64,
    pub beta: f64,
}

impl SynthesisGains {
    /// Checks `0 < alpha << beta < 1` with `alpha <= (1 - beta) ratio_max`.
    pub fn validate(&self, ratio_max: f64) -> Vec<String> {
        let Self { alpha, beta } = *self;
        let mut errs = Vec::new();
        let rule = "gain relation 0 < alpha << beta < 1";
        if !(alpha > 0.0 && alpha.is_finite()) {
            errs.push(format!("{rule}: alpha = {alpha} must be positive"));
        }
        if !(beta < 1.0 && beta > 0.0) {
            errs.push(format!("{rule}: beta = {beta} must lie in (0, 1) (beta = 1 leaves an open integrator)"));
        }
        if alpha * ALPHA_BETA_SEPARATION > beta {
            errs.push(format!(
                "{rule}: alpha = {alpha} is not small against beta = {beta} (need alpha <= beta / {ALPHA_BETA_SEPARATION})"
            ));
        }
        if beta < 1.0 && alpha > (1.0 - beta) * ratio_max {
            errs.push(format!(
                "{rule}: alpha / (1 - beta) = {} exceeds ratio_max = {ratio_max}",
                alpha / (1.0 - beta)
            ));
        }
        errs
    }

    /// Steady-state residue factor `(1 - beta) / (1 - beta + alpha)`.
    pub fn residue_factor(&self) -> f64 {
        (1.0 - self.beta) / (1.0 - self.beta + self.alpha)
    }
}

/// `(1 - beta) / (1 - beta + alpha)` for the current gains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidueTarget {
    pub factor: f64,
}

impl From<SynthesisGains> for ResidueTarget {
    fn from(g: SynthesisGains) -> Self {
        Self { factor: g.residue_factor() }
    }
}

/// `D_B_hat` from the response of `theta_B_hat` at each harmonic.
///
/// Fails when a block magnitude sits below `b_floor`, which means the
/// upstream projection did not run.
pub fn rebuild_db_hat(
    theta_b_hat: &[f64],
    omegas: &[f64],
    sample_period: f64,
    b_floor: f64,
) -> Result<BlockDiagTransform> {
    let d = build_transform(&b_polynomial(theta_b_hat), omegas, sample_period)?;
    let min = d.min_magnitude();
    if min < b_floor * (1.0 - 1e-9) {
        return Err(Error::Contract(format!(
            "D_B block magnitude {min} below b_floor {b_floor}; theta_B was not projected"
        )));
    }
    Ok(d)
}

/// Inverse of a scaled rotation; refuses magnitudes at or below `b_floor / 2`.
pub fn invert_block(rb: &RotationBlock, b_floor: f64) -> Result<RotationBlock> {
    rb.inverse(b_floor / 2.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    pub theta_d: Vec<f64>,
    pub gains: SynthesisGains,
    pub db_hat: BlockDiagTransform,
    pub b_floor: f64,
}

impl ControllerState {
    /// `theta_D = 0` with the given initial `D_B_hat`.
    pub fn new(gains: SynthesisGains, db_hat: BlockDiagTransform, b_floor: f64) -> Self {
        Self { theta_d: vec![0.0; db_hat.dim()], gains, db_hat, b_floor }
    }

    pub fn residue(&self) -> ResidueTarget {
        self.gains.into()
    }

    /// `D_B_hat^{-T} theta_M` computed block by block.
    pub fn inverse_transpose_apply(&self, theta_m: &[f64]) -> Result<Vec<f64>> {
        if theta_m.len() != self.db_hat.dim() {
            return Err(Error::Dimension { expected: self.db_hat.dim(), got: theta_m.len() });
        }
        let mut out = Vec::with_capacity(theta_m.len());
        for (block, pair) in self.db_hat.blocks().iter().zip(theta_m.chunks_exact(2)) {
            let inv_t = invert_block(block, self.b_floor)?.transpose();
            out.extend_from_slice(&inv_t.apply([pair[0], pair[1]]));
        }
        Ok(out)
    }

    /// `theta_D^T <- beta theta_D^T - alpha theta_M^T D_B_hat^{-1}`.
    pub fn synthesis_step(&mut self, theta_m: &[f64]) -> Result<()> {
        self.synthesis_step_scaled(theta_m, 1.0)
    }

    /// As [`Self::synthesis_step`] with `alpha` multiplied by `scale`.
    pub fn synthesis_step_scaled(&mut self, theta_m: &[f64], scale: f64) -> Result<()> {
        let drive = self.inverse_transpose_apply(theta_m)?;
        let SynthesisGains { alpha, beta } = self.gains;
        let next: Vec<f64> = self
            .theta_d
            .iter()
            .zip(&drive)
            .map(|(d, g)| beta * d - scale * alpha * g)
            .collect();
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericFault("theta_D update produced a non-finite value".into()));
        }
        self.theta_d = next;
        Ok(())
    }

    /// Fixed point `-alpha / (1 - beta) D_B_hat^{-T} theta_M` for frozen inputs.
    pub fn fixed_point(&self, theta_m: &[f64]) -> Result<Vec<f64>> {
        let SynthesisGains { alpha, beta } = self.gains;
        Ok(self
            .inverse_transpose_apply(theta_m)?
            .into_iter()
            .map(|v| -alpha / (1.0 - beta) * v)
            .collect())
    }

    pub fn control_output(&self, phi_r: &[f64]) -> Result<f64> {
        control_output(&self.theta_d, phi_r)
    }
}

/// `u_A(k) = theta_D^T phi_R(k)`.
pub fn control_output(theta_d: &[f64], phi_r: &[f64]) -> Result<f64> {
    if theta_d.len() != phi_r.len() {
        return Err(Error::Dimension { expected: theta_d.len(), got: phi_r.len() });
    }
    Ok(dot(theta_d, phi_r))
}
