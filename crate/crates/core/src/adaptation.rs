//! Joint recursive estimation of the plant coefficients and of the residual
//! disturbance parameters.
//!
//! The estimate vector is `[theta_A; theta_B | theta_M]`. The plant half is
//! driven by an RLS-type gain `gamma_1 F^{-1}` on `psi = [phi_e; phi_u]`, the
//! residual half by the scalar gain `gamma_2 / f` on `phi_R`. After each update
//! the plant estimate is projected back into the Schur-stable set and the
//! numerator is kept within a magnitude band at every compensation frequency.

use nalgebra::{Cholesky, DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lti::{freq_response, is_schur_stable, Polynomial, DEFAULT_SCHUR_MARGIN};
use crate::regressor::{dot, RegressorBank};

/// Relative overshoot used when rescaling `theta_B` into the magnitude band.
pub const PROJECTION_OVERSHOOT: f64 = 0.1;

/// Default diagonal regularization applied to a near-singular `F`.
pub const DEFAULT_REGULARIZATION: f64 = 1e-8;

/// `gamma(k) = max(C / (k + offset)^p, floor)`.
///
/// A positive `offset` makes `F` keep a share `offset / (k + offset)` of its
/// initial value instead of being overwritten by the first outer product.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainSchedule {
    pub c: f64,
    pub p: f64,
    #[serde(default)]
    pub floor: f64,
    #[serde(default)]
    pub offset: f64,
}

impl GainSchedule {
    pub fn new(c: f64, p: f64, floor: f64) -> Result<Self> {
        let s = Self { c, p, floor, offset: 0.0 };
        s.validate().map_err(Error::InvalidSpec)?;
        Ok(s)
    }

    pub fn harmonic() -> Self {
        Self { c: 1.0, p: 1.0, floor: 0.0, offset: 0.0 }
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(format!("gain constant C = {} must be positive", self.c));
        }
        if !(self.p > 0.0 && self.p <= 1.0) {
            return Err(format!("gain exponent p = {} must lie in (0, 1]", self.p));
        }
        if !(self.floor >= 0.0 && self.floor.is_finite()) {
            return Err(format!("gain floor {} must be non-negative", self.floor));
        }
        if !(self.offset >= 0.0 && self.offset.is_finite()) {
            return Err(format!("gain offset {} must be non-negative", self.offset));
        }
        Ok(())
    }

    /// Gain for step `k >= 1`.
    pub fn gamma(&self, k: u64) -> f64 {
        let k = k.max(1) as f64 + self.offset;
        (self.c / k.powf(self.p)).max(self.floor)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionConfig {
    pub b_floor: f64,
    /// Upper band as a multiple of `nominal_b_mag`; disabled when either is absent.
    #[serde(default)]
    pub b_ceil_ratio: Option<f64>,
    #[serde(default)]
    pub nominal_b_mag: Option<Vec<f64>>,
    #[serde(default = "default_margin")]
    pub schur_margin: f64,
    #[serde(default = "default_shrink")]
    pub shrink_rho: f64,
}

fn default_margin() -> f64 {
    DEFAULT_SCHUR_MARGIN
}

fn default_shrink() -> f64 {
    0.95
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        Self {
            b_floor: 1e-3,
            b_ceil_ratio: None,
            nominal_b_mag: None,
            schur_margin: DEFAULT_SCHUR_MARGIN,
            shrink_rho: default_shrink(),
        }
    }
}

impl ProjectionConfig {
    pub fn validate(&self, n_harmonics: usize) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.b_floor > 0.0 && self.b_floor.is_finite()) {
            errs.push(format!("b_floor = {} must be positive (keeps D_B invertible)", self.b_floor));
        }
        if !(self.shrink_rho > 0.0 && self.shrink_rho < 1.0) {
            errs.push(format!("shrink_rho = {} must lie in (0, 1)", self.shrink_rho));
        }
        if !(self.schur_margin >= 0.0 && self.schur_margin.is_finite()) {
            errs.push(format!("schur_margin = {} must be non-negative", self.schur_margin));
        }
        if let Some(nominal) = &self.nominal_b_mag {
            if nominal.len() != n_harmonics {
                errs.push(format!(
                    "nominal_b_mag has {} entries, expected one per harmonic ({n_harmonics})",
                    nominal.len()
                ));
            }
        }
        for (h, ceil) in self.ceilings(n_harmonics).iter().enumerate() {
            if let Some(ceil) = ceil {
                if !(*ceil > self.b_floor) {
                    errs.push(format!(
                        "B magnitude band at harmonic {} is empty: ceiling {ceil} <= b_floor {}",
                        h + 1,
                        self.b_floor
                    ));
                }
            }
        }
        errs
    }

    /// Per-harmonic upper bound on `|B(e^{-j w_h T})|`.
    pub fn ceilings(&self, n_harmonics: usize) -> Vec<Option<f64>> {
        match (&self.nominal_b_mag, self.b_ceil_ratio) {
            (Some(nominal), Some(ratio)) if nominal.len() == n_harmonics => {
                nominal.iter().map(|m| Some(ratio * m)).collect()
            }
            _ => vec![None; n_harmonics],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorState {
    pub theta_a: Vec<f64>,
    pub theta_b: Vec<f64>,
    pub theta_m: Vec<f64>,
    pub f_mat: DMatrix<f64>,
    pub f_scalar: f64,
    pub k: u64,
}

impl EstimatorState {
    /// Zero estimates, `F = f0 I`, `f = n`.
    pub fn zeros(n_a: usize, n_harmonics: usize, f0: f64) -> Self {
        Self {
            theta_a: vec![0.0; n_a],
            theta_b: vec![0.0; n_a],
            theta_m: vec![0.0; 2 * n_harmonics],
            f_mat: DMatrix::identity(2 * n_a, 2 * n_a) * f0,
            f_scalar: n_harmonics as f64,
            k: 0,
        }
    }

    pub fn n_a(&self) -> usize {
        self.theta_a.len()
    }

    /// `1 - theta_A[0] q^{-1} - ...`.
    pub fn a_hat(&self) -> Polynomial {
        a_polynomial(&self.theta_a)
    }

    /// `theta_B[0] q^{-1} + ...`.
    pub fn b_hat(&self) -> Polynomial {
        b_polynomial(&self.theta_b)
    }

    fn all_finite(&self) -> bool {
        self.theta_a.iter().chain(&self.theta_b).chain(&self.theta_m).all(|v| v.is_finite())
            && self.f_mat.iter().all(|v| v.is_finite())
            && self.f_scalar.is_finite()
    }
}

pub fn a_polynomial(theta_a: &[f64]) -> Polynomial {
    let tail: Vec<f64> = theta_a.iter().map(|v| -v).collect();
    Polynomial::monic(&tail).expect("finite estimates")
}

pub fn b_polynomial(theta_b: &[f64]) -> Polynomial {
    Polynomial::delayed(theta_b).expect("finite estimates")
}

/// `y_hat(k) = theta_A^T phi_e + theta_B^T phi_u + theta_M^T phi_R`.
pub fn predict(est: &EstimatorState, bank: &RegressorBank, phi_r: &[f64]) -> Result<f64> {
    check_dims(est, bank, phi_r)?;
    Ok(dot(&est.theta_a, bank.phi_e()) + dot(&est.theta_b, bank.phi_u()) + dot(&est.theta_m, phi_r))
}

fn check_dims(est: &EstimatorState, bank: &RegressorBank, phi_r: &[f64]) -> Result<()> {
    if bank.n_a() != est.n_a() {
        return Err(Error::Dimension { expected: est.n_a(), got: bank.n_a() });
    }
    if phi_r.len() != est.theta_m.len() {
        return Err(Error::Dimension { expected: est.theta_m.len(), got: phi_r.len() });
    }
    Ok(())
}

/// `F' = F + g1 (psi psi^T - F)`, `f' = f + g2 (|phi_R|^2 - f)`.
///
/// `regularization * I` is added when the smallest Cholesky pivot of `F'`
/// drops below `regularization`.
pub fn update_gains(
    f_mat: &DMatrix<f64>,
    f_scalar: f64,
    phi_e: &[f64],
    phi_u: &[f64],
    phi_r: &[f64],
    gamma1: f64,
    gamma2: f64,
    regularization: f64,
) -> Result<(DMatrix<f64>, f64)> {
    let psi = DVector::from_iterator(phi_e.len() + phi_u.len(), phi_e.iter().chain(phi_u).copied());
    if psi.len() != f_mat.nrows() {
        return Err(Error::Dimension { expected: f_mat.nrows(), got: psi.len() });
    }
    let mut next = f_mat * (1.0 - gamma1) + (&psi * psi.transpose()) * gamma1;
    regularize(&mut next, regularization)?;
    let norm_sq: f64 = phi_r.iter().map(|v| v * v).sum();
    let f_next = f_scalar + gamma2 * (norm_sq - f_scalar);
    if !(f_next > 0.0 && f_next.is_finite()) {
        return Err(Error::NumericFault(format!("scalar gain f became {f_next}")));
    }
    Ok((next, f_next))
}

fn min_pivot(ch: &Cholesky<f64, nalgebra::Dyn>) -> f64 {
    ch.l_dirty().diagonal().iter().map(|d| d * d).fold(f64::INFINITY, f64::min)
}

fn regularize(f_mat: &mut DMatrix<f64>, eps: f64) -> Result<()> {
    if f_mat.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericFault("non-finite entry in F".into()));
    }
    let n = f_mat.nrows();
    let needs = match Cholesky::new(f_mat.clone()) {
        Some(ch) => min_pivot(&ch) < eps,
        None => true,
    };
    if !needs {
        return Ok(());
    }
    let mut shift = eps;
    for _ in 0..64 {
        for i in 0..n {
            f_mat[(i, i)] += shift;
        }
        if Cholesky::new(f_mat.clone()).is_some() {
            return Ok(());
        }
        shift *= 2.0;
    }
    Err(Error::NumericFault("F could not be made positive definite".into()))
}

/// Shrinks `a_i <- rho^i a_i` until `1 - theta_A(q^{-1})` is Schur stable.
///
/// `m` shrinks scale every root by `rho^m` and stability is monotone in `m`,
/// so the smallest stabilizing `m` is found by doubling then bisection.
/// Returns the projected vector and whether the projection fired.
pub fn project_a(theta_a: &[f64], cfg: &ProjectionConfig) -> (Vec<f64>, bool) {
    let stable = |v: &[f64]| is_schur_stable(&a_polynomial(v), cfg.schur_margin);
    if stable(theta_a) {
        return (theta_a.to_vec(), false);
    }
    let shrink = |m: u64| -> Vec<f64> {
        let mut scale = 1.0;
        let step = cfg.shrink_rho.powf(m as f64);
        theta_a
            .iter()
            .map(|v| {
                scale *= step;
                v * scale
            })
            .collect()
    };
    // rho^m underflows long before this bound, leaving the zero vector
    const MAX_SHRINKS: u64 = 1 << 40;
    let mut hi = 1;
    while !stable(&shrink(hi)) {
        if hi >= MAX_SHRINKS {
            return (vec![0.0; theta_a.len()], true);
        }
        hi *= 2;
    }
    let mut lo = hi / 2;
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if stable(&shrink(mid)) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    (shrink(hi), true)
}

fn b_magnitudes(theta_b: &[f64], omegas: &[f64], sample_period: f64) -> Result<Vec<f64>> {
    let b = b_polynomial(theta_b);
    omegas.iter().map(|&w| freq_response(&b, w, sample_period).map(|fp| fp.magnitude)).collect()
}

/// Keeps `|B(e^{-j w_h T})|` inside `[b_floor, ceiling_h]` by rescaling the
/// whole vector. A vanishing numerator is replaced by the canonical kick
/// `b_1 = b_floor (1 + eta)`. When the band cannot be met by one uniform
/// scale, the floor wins.
pub fn project_b(
    theta_b: &[f64],
    omegas: &[f64],
    sample_period: f64,
    cfg: &ProjectionConfig,
) -> Result<(Vec<f64>, bool)> {
    let target_floor = cfg.b_floor * (1.0 + PROJECTION_OVERSHOOT);
    let kick = || {
        let mut v = vec![0.0; theta_b.len()];
        if let Some(first) = v.first_mut() {
            *first = target_floor;
        }
        v
    };
    if theta_b.iter().all(|&v| v == 0.0) {
        return Ok((kick(), true));
    }
    let mut theta = theta_b.to_vec();
    let mut fired = false;
    let mags = b_magnitudes(&theta, omegas, sample_period)?;
    let ceilings = cfg.ceilings(omegas.len());

    let down = mags
        .iter()
        .zip(&ceilings)
        .filter_map(|(m, c)| c.map(|c| (c / (1.0 + PROJECTION_OVERSHOOT)) / m))
        .fold(f64::INFINITY, f64::min);
    let over = mags.iter().zip(&ceilings).any(|(m, c)| c.is_some_and(|c| *m > c));
    if over && down.is_finite() {
        theta.iter_mut().for_each(|v| *v *= down);
        fired = true;
    }

    let mags = b_magnitudes(&theta, omegas, sample_period)?;
    let min_mag = mags.iter().copied().fold(f64::INFINITY, f64::min);
    if min_mag < cfg.b_floor {
        let up = target_floor / min_mag;
        if !up.is_finite() || min_mag <= f64::MIN_POSITIVE {
            return Ok((kick(), true));
        }
        theta.iter_mut().for_each(|v| *v *= up);
        fired = true;
    }
    Ok((theta, fired))
}

/// `Re(B / B_hat) > 0` at each harmonic (simulation diagnostic).
pub fn check_assumption_h(
    theta_b_hat: &[f64],
    true_theta_b: &[f64],
    omegas: &[f64],
    sample_period: f64,
) -> Result<Vec<bool>> {
    let b_hat = b_polynomial(theta_b_hat);
    let b = b_polynomial(true_theta_b);
    omegas
        .iter()
        .map(|&w| {
            let omega_t = w * sample_period;
            if !(omega_t > 0.0 && omega_t < std::f64::consts::PI) {
                return Err(Error::FrequencyOutOfRange { omega_t });
            }
            let z = Complex64::from_polar(1.0, -omega_t);
            let denom = b_hat.eval(z);
            if denom.norm() == 0.0 {
                return Ok(false);
            }
            Ok((b.eval(z) / denom).re > 0.0)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptationConfig {
    pub n_a: usize,
    pub gamma1: GainSchedule,
    pub gamma2: GainSchedule,
    pub projection: ProjectionConfig,
    pub regularization: f64,
    pub f0: f64,
}

impl AdaptationConfig {
    pub fn new(n_a: usize) -> Self {
        Self {
            n_a,
            gamma1: GainSchedule::harmonic(),
            gamma2: GainSchedule { c: 1.0, p: 0.75, floor: 0.0, offset: 0.0 },
            projection: ProjectionConfig::default(),
            regularization: DEFAULT_REGULARIZATION,
            f0: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PaaOutcome {
    pub eps0: f64,
    pub projected_a: bool,
    pub projected_b: bool,
}

/// Estimator bound to a fixed set of compensation frequencies.
#[derive(Debug, Clone)]
pub struct Estimator {
    cfg: AdaptationConfig,
    omegas: Vec<f64>,
    sample_period: f64,
    state: EstimatorState,
}

impl Estimator {
    /// Zero-initialized estimator; the numerator kick is applied immediately so
    /// that `D_B` is invertible from the first sample.
    pub fn new(cfg: AdaptationConfig, omegas: &[f64], sample_period: f64) -> Result<Self> {
        let state = EstimatorState::zeros(cfg.n_a, omegas.len(), cfg.f0);
        Self::with_state(cfg, omegas, sample_period, state)
    }

    pub fn with_state(
        cfg: AdaptationConfig,
        omegas: &[f64],
        sample_period: f64,
        mut state: EstimatorState,
    ) -> Result<Self> {
        let errs = cfg.projection.validate(omegas.len());
        if !errs.is_empty() {
            return Err(Error::InvalidSpec(errs.join("; ")));
        }
        if state.theta_a.len() != cfg.n_a || state.theta_b.len() != cfg.n_a {
            return Err(Error::Dimension { expected: cfg.n_a, got: state.theta_a.len() });
        }
        if state.theta_m.len() != 2 * omegas.len() {
            return Err(Error::Dimension { expected: 2 * omegas.len(), got: state.theta_m.len() });
        }
        crate::lti::validate_frequencies(omegas, sample_period)?;
        state.theta_a = project_a(&state.theta_a, &cfg.projection).0;
        state.theta_b = project_b(&state.theta_b, omegas, sample_period, &cfg.projection)?.0;
        Ok(Self { cfg, omegas: omegas.to_vec(), sample_period, state })
    }

    pub fn state(&self) -> &EstimatorState {
        &self.state
    }

    pub fn config(&self) -> &AdaptationConfig {
        &self.cfg
    }

    pub fn omegas(&self) -> &[f64] {
        &self.omegas
    }

    pub fn predict(&self, bank: &RegressorBank, phi_r: &[f64]) -> Result<f64> {
        predict(&self.state, bank, phi_r)
    }

    /// One update using the configured gain schedules.
    /// Gain-free update direction `[F^{-1} psi eps0; phi_R eps0 / f]` at the
    /// current state, without touching it. Returns `(eps0, direction)`.
    pub fn update_direction(&self, bank: &RegressorBank, phi_r: &[f64], e: f64) -> Result<(f64, Vec<f64>)> {
        let eps0 = e - self.predict(bank, phi_r)?;
        let st = &self.state;
        let psi = DVector::from_iterator(2 * st.n_a(), bank.phi_e().iter().chain(bank.phi_u()).copied());
        let chol = Cholesky::new(st.f_mat.clone())
            .ok_or_else(|| Error::NumericFault("F lost positive definiteness".into()))?;
        let mut dir: Vec<f64> = (chol.solve(&psi) * eps0).iter().copied().collect();
        dir.extend(phi_r.iter().map(|p| p * eps0 / st.f_scalar));
        Ok((eps0, dir))
    }

    pub fn step(&mut self, bank: &RegressorBank, phi_r: &[f64], e: f64) -> Result<PaaOutcome> {
        let k = self.state.k + 1;
        let g1 = self.cfg.gamma1.gamma(k);
        let g2 = self.cfg.gamma2.gamma(k);
        self.step_with_gains(bank, phi_r, e, g1, g2)
    }

    /// One update with explicit gains. On a numeric fault the state is left
    /// exactly as it was before the call.
    pub fn step_with_gains(
        &mut self,
        bank: &RegressorBank,
        phi_r: &[f64],
        e: f64,
        gamma1: f64,
        gamma2: f64,
    ) -> Result<PaaOutcome> {
        let snapshot = self.state.clone();
        match self.try_step(bank, phi_r, e, gamma1, gamma2) {
            Ok(out) => Ok(out),
            Err(err) => {
                self.state = snapshot;
                Err(err)
            }
        }
    }

    fn try_step(
        &mut self,
        bank: &RegressorBank,
        phi_r: &[f64],
        e: f64,
        gamma1: f64,
        gamma2: f64,
    ) -> Result<PaaOutcome> {
        if !(gamma1 > 0.0 && gamma2 > 0.0) {
            return Err(Error::InvalidSpec(format!("gains must be positive ({gamma1}, {gamma2})")));
        }
        if !e.is_finite() {
            return Err(Error::NumericFault("non-finite error sample".into()));
        }
        let eps0 = e - self.predict(bank, phi_r)?;
        let st = &mut self.state;
        let (f_mat, f_scalar) = update_gains(
            &st.f_mat,
            st.f_scalar,
            bank.phi_e(),
            bank.phi_u(),
            phi_r,
            gamma1,
            gamma2,
            self.cfg.regularization,
        )?;
        st.f_mat = f_mat;
        st.f_scalar = f_scalar;

        let n_a = st.n_a();
        let psi = DVector::from_iterator(2 * n_a, bank.phi_e().iter().chain(bank.phi_u()).copied());
        let chol = Cholesky::new(st.f_mat.clone())
            .ok_or_else(|| Error::NumericFault("F lost positive definiteness".into()))?;
        let direction = chol.solve(&psi) * (gamma1 * eps0);
        for i in 0..n_a {
            st.theta_a[i] += direction[i];
            st.theta_b[i] += direction[n_a + i];
        }
        let m_gain = gamma2 / st.f_scalar * eps0;
        for (t, p) in st.theta_m.iter_mut().zip(phi_r) {
            *t += m_gain * p;
        }
        if !st.all_finite() {
            return Err(Error::NumericFault("estimate update produced a non-finite value".into()));
        }

        let (theta_a, projected_a) = project_a(&st.theta_a, &self.cfg.projection);
        let (theta_b, projected_b) =
            project_b(&st.theta_b, &self.omegas, self.sample_period, &self.cfg.projection)?;
        st.theta_a = theta_a;
        st.theta_b = theta_b;
        st.k += 1;
        Ok(PaaOutcome { eps0, projected_a, projected_b })
    }
}
