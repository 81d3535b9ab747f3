//! Closed-loop experiment: true plant, disturbance and noise injection, the
//! adaptive loop, trace capture and per-harmonic spectrum measurement.

use std::f64::consts::{PI, TAU};
use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::adaptation::{check_assumption_h, AdaptationConfig, Estimator};
use crate::error::{Error, Result};
use crate::excitation::ExcitationSpec;
use crate::lti::{build_transform, is_schur_stable, DifferenceFilter, Polynomial, TransferFunction};
use crate::regressor::{DisturbanceSpec, RegressorBank};
use crate::synthesis::{rebuild_db_hat, ControllerState, SynthesisGains};

/// Ground truth of a simulated loop. The disturbance harmonics carry the
/// amplitude/phase of `r_bar` as seen at the error.
#[derive(Debug, Clone)]
pub struct PlantTruth {
    tf: TransferFunction,
    disturbance: DisturbanceSpec,
    theta_r_bar: Vec<f64>,
    noise_sigma: f64,
    seed: u64,
}

impl PlantTruth {
    pub fn new(tf: TransferFunction, disturbance: DisturbanceSpec, noise_sigma: f64, seed: u64) -> Result<Self> {
        if !is_schur_stable(tf.a(), 0.0) {
            return Err(Error::InvalidSpec("true plant denominator is not Schur stable".into()));
        }
        if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
            return Err(Error::InvalidSpec(format!("noise sigma {noise_sigma} must be non-negative")));
        }
        let theta_r_bar = disturbance.theta();
        Ok(Self { tf, disturbance, theta_r_bar, noise_sigma, seed })
    }

    pub fn tf(&self) -> &TransferFunction {
        &self.tf
    }

    pub fn disturbance(&self) -> &DisturbanceSpec {
        &self.disturbance
    }

    pub fn theta_r_bar(&self) -> &[f64] {
        &self.theta_r_bar
    }

    pub fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// Filter states of the plant and noise paths plus the noise generator.
#[derive(Debug, Clone)]
pub struct PlantMemory {
    forward: DifferenceFilter,
    noise: DifferenceFilter,
    rng: ChaCha8Rng,
}

impl PlantMemory {
    pub fn new(truth: &PlantTruth) -> Self {
        Self {
            forward: DifferenceFilter::from_tf(&truth.tf),
            noise: DifferenceFilter::all_pole(truth.tf.a()).expect("monic denominator"),
            rng: ChaCha8Rng::seed_from_u64(truth.seed),
        }
    }
}

/// `e(k) = B/A (u + u_A) + 1/A w_bar + theta_Rbar^T phi_R(k)`.
///
/// One Gaussian draw is consumed per step whatever the noise level, so runs
/// that differ only in sigma share the same noise realization.
pub fn sim_step(truth: &PlantTruth, mem: &mut PlantMemory, u: f64, u_a: f64, phi_r: &[f64]) -> Result<f64> {
    let z: f64 = mem.rng.sample(StandardNormal);
    let w = truth.noise_sigma * z;
    let y = mem.forward.step(u + u_a)?;
    let v = mem.noise.step(w)?;
    let r: f64 = truth.theta_r_bar.iter().zip(phi_r).map(|(a, b)| a * b).sum();
    let e = y + v + r;
    if !e.is_finite() {
        return Err(Error::NumericFault("non-finite plant output".into()));
    }
    Ok(e)
}

/// `theta_R = D_A^T theta_Rbar`: the disturbance parameters after the
/// true denominator, i.e. the residual when no control is applied.
pub fn ground_truth_theta_r(truth: &PlantTruth) -> Result<Vec<f64>> {
    let dist = &truth.disturbance;
    let d_a = build_transform(truth.tf.a(), &dist.omegas(), dist.sample_period())?;
    d_a.apply_transpose(&truth.theta_r_bar)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomPlantSpec {
    pub order: usize,
    pub seed: u64,
    #[serde(default = "default_root_min")]
    pub root_min: f64,
    #[serde(default = "default_root_max")]
    pub root_max: f64,
    /// Minimum `|B(e^{-j w_i T})|` over the compensation frequencies.
    #[serde(default = "default_b_min")]
    pub b_min: f64,
}

fn default_root_min() -> f64 {
    0.3
}

fn default_root_max() -> f64 {
    0.9
}

fn default_b_min() -> f64 {
    0.1
}

impl RandomPlantSpec {
    pub fn new(order: usize, seed: u64) -> Self {
        Self { order, seed, root_min: default_root_min(), root_max: default_root_max(), b_min: default_b_min() }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.order == 0 {
            errs.push("random plant order must be at least 1".into());
        }
        if !(0.0 <= self.root_min && self.root_min <= self.root_max && self.root_max < 1.0) {
            errs.push(format!(
                "random plant root moduli [{}, {}] must satisfy 0 <= min <= max < 1 (Schur stability)",
                self.root_min, self.root_max
            ));
        }
        if !(self.b_min > 0.0) {
            errs.push(format!("random plant b_min = {} must be positive", self.b_min));
        }
        errs
    }
}

const MAX_B_DRAWS: usize = 10_000;

/// Schur-stable plant with complex-conjugate pole pairs (plus one real pole
/// for odd orders), pole moduli in `[root_min, root_max]`, and a numerator
/// redrawn until its magnitude reaches `b_min` at every compensation frequency.
pub fn random_stable_plant(spec: &RandomPlantSpec, omegas: &[f64], sample_period: f64) -> Result<TransferFunction> {
    let errs = spec.validate();
    if !errs.is_empty() {
        return Err(Error::InvalidSpec(errs.join("; ")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut a = Polynomial::one();
    let modulus = |rng: &mut ChaCha8Rng| {
        if spec.root_max > spec.root_min {
            rng.random_range(spec.root_min..spec.root_max)
        } else {
            spec.root_min
        }
    };
    for _ in 0..spec.order / 2 {
        let r = modulus(&mut rng);
        let angle = rng.random_range(0.0..PI);
        a = a.mul(&Polynomial::new(vec![1.0, -2.0 * r * angle.cos(), r * r])?);
    }
    if spec.order % 2 == 1 {
        let r = modulus(&mut rng);
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        a = a.mul(&Polynomial::new(vec![1.0, -sign * r])?);
    }
    let zs: Vec<Complex64> = omegas.iter().map(|w| Complex64::from_polar(1.0, -w * sample_period)).collect();
    for _ in 0..MAX_B_DRAWS {
        let tail: Vec<f64> = (0..spec.order).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b = Polynomial::delayed(&tail)?;
        if zs.iter().all(|&z| b.eval(z).norm() >= spec.b_min) {
            return TransferFunction::new(a, b);
        }
    }
    Err(Error::InvalidSpec(format!(
        "no numerator with |B| >= {} at every compensation frequency after {MAX_B_DRAWS} draws",
        spec.b_min
    )))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HarmonicAmplitude {
    pub omega: f64,
    pub amplitude: f64,
}

/// Single-bin DFT amplitude `(2/N) |sum_k x(k) e^{-j w k T}|`; the window must
/// hold a whole number of periods of `omega`.
pub fn harmonic_amplitude(window: &[f64], omega: f64, sample_period: f64) -> Result<HarmonicAmplitude> {
    let n = window.len();
    if n == 0 {
        return Err(Error::Window("empty window".into()));
    }
    let cycles = omega * sample_period * n as f64 / TAU;
    if (cycles - cycles.round()).abs() > 1e-6 || cycles.round() < 1.0 {
        return Err(Error::Window(format!("{n} samples hold {cycles} periods of {omega} rad/s")));
    }
    let mut acc = Complex64::new(0.0, 0.0);
    for (k, &x) in window.iter().enumerate() {
        // reduce the phase to one cycle before evaluating
        let phase = (omega * sample_period * k as f64) % TAU;
        acc += x * Complex64::from_polar(1.0, -phase);
    }
    Ok(HarmonicAmplitude { omega, amplitude: 2.0 / n as f64 * acc.norm() })
}

#[derive(Debug, Clone)]
pub struct ExperimentSetup {
    pub truth: PlantTruth,
    pub excitation: ExcitationSpec,
    pub adaptation: AdaptationConfig,
    pub synthesis: SynthesisGains,
    /// When false, `theta_D` stays at zero and only the estimator runs.
    pub synthesis_enabled: bool,
    /// Global step from which `theta_D` is updated; earlier adaptive steps
    /// only identify.
    pub synthesis_start: u64,
    /// Rebuild `D_B_hat` every this many adaptive steps.
    pub db_refresh_every: u64,
    /// Total number of steps, baseline included.
    pub steps: u64,
    /// Leading steps with the controller and excitation off and no adaptation.
    pub baseline_steps: u64,
    /// Global step at which adaptation and synthesis stop.
    pub freeze_at: Option<u64>,
    /// Spectrum windows span this many common periods of the harmonics.
    pub spectrum_periods: u64,
    /// Keep every m-th record.
    pub decimate: u64,
}

impl ExperimentSetup {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.db_refresh_every == 0 {
            errs.push("db_refresh_every must be at least 1".into());
        }
        if self.decimate == 0 {
            errs.push("decimate must be at least 1".into());
        }
        if self.baseline_steps > self.steps {
            errs.push(format!("baseline_steps {} exceeds steps {}", self.baseline_steps, self.steps));
        }
        if let Some(f) = self.freeze_at {
            if f < self.baseline_steps || f > self.steps {
                errs.push(format!(
                    "freeze_at {f} must lie between baseline_steps {} and steps {}",
                    self.baseline_steps, self.steps
                ));
            }
        }
        errs
    }

    /// Spectrum window length in samples, when the harmonics share a period.
    pub fn spectrum_window(&self) -> Option<u64> {
        self.truth.disturbance.period().map(|p| p * self.spectrum_periods).filter(|&w| w > 0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Baseline,
    Adaptive,
    Frozen,
}

impl Phase {
    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::Baseline => "baseline",
            Phase::Adaptive => "adaptive",
            Phase::Frozen => "frozen",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub k: u64,
    pub phase: Phase,
    pub e: f64,
    pub u: f64,
    pub u_a: f64,
    pub eps0: f64,
    pub theta_m_norm: f64,
    pub projected_a: bool,
    pub projected_b: bool,
    pub theta_a: Vec<f64>,
    pub theta_b: Vec<f64>,
    pub theta_m: Vec<f64>,
    pub theta_d: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarmonicSummary {
    pub index: usize,
    pub omega: f64,
    pub hz: f64,
    /// Error amplitude over the last window of the baseline phase.
    pub before: Option<f64>,
    /// Last window before the freeze, if any.
    pub adaptive: Option<f64>,
    /// Last window of the run.
    pub after: Option<f64>,
    pub attenuation_db: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterErrors {
    pub theta_a: f64,
    pub theta_b: f64,
    /// `|[dA; dB]| / |[A; B]|`.
    pub relative: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionCounts {
    pub a: u64,
    pub b: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSet {
    pub theta_a: Vec<f64>,
    pub theta_b: Vec<f64>,
    pub theta_m: Vec<f64>,
    pub theta_d: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthSet {
    pub theta_a: Vec<f64>,
    pub theta_b: Vec<f64>,
    pub theta_r_bar: Vec<f64>,
    pub theta_r: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub steps: u64,
    pub baseline_steps: u64,
    pub freeze_at: Option<u64>,
    pub sample_period: f64,
    pub spectrum_window: Option<u64>,
    pub residue_factor: f64,
    /// `|theta_M_hat| / |theta_R|`.
    pub theta_m_ratio: Option<f64>,
    /// `|theta_M_hat - factor theta_R| / |theta_R|`.
    pub theta_m_target_gap: Option<f64>,
    pub parameter_errors: ParameterErrors,
    pub harmonics: Vec<HarmonicSummary>,
    pub assumption_h: Vec<bool>,
    pub projection_counts: ProjectionCounts,
    pub final_estimates: ParameterSet,
    pub truth: TruthSet,
    pub runtime_s: f64,
}

#[derive(Debug, Clone)]
pub struct SimTrace {
    pub records: Vec<StepRecord>,
    pub summary: Summary,
}

/// Step-by-step closed loop: `phi_R -> excitation -> u_A -> plant -> PAA ->
/// synthesis -> push`.
#[derive(Debug, Clone)]
pub struct Experiment {
    setup: ExperimentSetup,
    memory: PlantMemory,
    estimator: Estimator,
    controller: ControllerState,
    bank: RegressorBank,
    phi_r: Vec<f64>,
    omegas: Vec<f64>,
    errors: Vec<f64>,
    counts: ProjectionCounts,
    k: u64,
}

impl Experiment {
    pub fn new(setup: ExperimentSetup) -> Result<Self> {
        let estimator = Estimator::new(
            setup.adaptation.clone(),
            &setup.truth.disturbance.omegas(),
            setup.truth.disturbance.sample_period(),
        )?;
        Self::with_estimator(setup, estimator)
    }

    /// Starts from a prepared estimator (e.g. at a known equilibrium).
    pub fn with_estimator(setup: ExperimentSetup, estimator: Estimator) -> Result<Self> {
        let errs = setup.validate();
        if !errs.is_empty() {
            return Err(Error::InvalidSpec(errs.join("; ")));
        }
        let dist = &setup.truth.disturbance;
        let omegas = dist.omegas();
        let b_floor = setup.adaptation.projection.b_floor;
        let db_hat = rebuild_db_hat(&estimator.state().theta_b, &omegas, dist.sample_period(), b_floor)?;
        let controller = ControllerState::new(setup.synthesis, db_hat, b_floor);
        Ok(Self {
            memory: PlantMemory::new(&setup.truth),
            bank: RegressorBank::new(setup.adaptation.n_a),
            phi_r: vec![0.0; 2 * dist.n()],
            errors: Vec::with_capacity(setup.steps as usize),
            counts: ProjectionCounts { a: 0, b: 0 },
            k: 0,
            estimator,
            controller,
            omegas,
            setup,
        })
    }

    pub fn k(&self) -> u64 {
        self.k
    }

    pub fn is_done(&self) -> bool {
        self.k >= self.setup.steps
    }

    pub fn setup(&self) -> &ExperimentSetup {
        &self.setup
    }

    pub fn estimator(&self) -> &Estimator {
        &self.estimator
    }

    pub fn controller(&self) -> &ControllerState {
        &self.controller
    }

    pub fn controller_mut(&mut self) -> &mut ControllerState {
        &mut self.controller
    }

    pub fn errors(&self) -> &[f64] {
        &self.errors
    }

    pub fn phase_at(&self, k: u64) -> Phase {
        if k < self.setup.baseline_steps {
            Phase::Baseline
        } else if self.setup.freeze_at.is_some_and(|f| k >= f) {
            Phase::Frozen
        } else {
            Phase::Adaptive
        }
    }

    pub fn step(&mut self) -> Result<StepRecord> {
        let k = self.k;
        self.try_step(k).map_err(|err| {
            if err.is_numeric_fault() {
                Error::NumericFaultAt { step: k, detail: err.to_string() }
            } else {
                err
            }
        })
    }

    fn try_step(&mut self, k: u64) -> Result<StepRecord> {
        let dist = &self.setup.truth.disturbance;
        dist.phi_r_into(k, &mut self.phi_r);
        let phase = self.phase_at(k);
        let (u, u_a) = match phase {
            Phase::Baseline => (0.0, 0.0),
            _ => (self.setup.excitation.value(dist, &self.phi_r, k), self.controller.control_output(&self.phi_r)?),
        };
        let e = sim_step(&self.setup.truth, &mut self.memory, u, u_a, &self.phi_r)?;

        let (eps0, projected_a, projected_b) = if phase == Phase::Adaptive {
            let out = self.estimator.step(&self.bank, &self.phi_r, e)?;
            if out.projected_a {
                self.counts.a += 1;
            }
            if out.projected_b {
                self.counts.b += 1;
            }
            if self.setup.synthesis_enabled && k >= self.setup.synthesis_start {
                let st = self.estimator.state();
                if st.k.is_multiple_of(self.setup.db_refresh_every) {
                    self.controller.db_hat = rebuild_db_hat(
                        &st.theta_b,
                        &self.omegas,
                        dist.sample_period(),
                        self.controller.b_floor,
                    )?;
                }
                self.controller.synthesis_step(&st.theta_m)?;
            }
            (out.eps0, out.projected_a, out.projected_b)
        } else {
            (e - self.estimator.predict(&self.bank, &self.phi_r)?, false, false)
        };

        self.bank.push(e, u, u_a)?;
        self.errors.push(e);
        self.k += 1;
        let st = self.estimator.state();
        Ok(StepRecord {
            k,
            phase,
            e,
            u,
            u_a,
            eps0,
            theta_m_norm: st.theta_m.iter().map(|v| v * v).sum::<f64>().sqrt(),
            projected_a,
            projected_b,
            theta_a: st.theta_a.clone(),
            theta_b: st.theta_b.clone(),
            theta_m: st.theta_m.clone(),
            theta_d: self.controller.theta_d.clone(),
        })
    }

    /// Summary of the state reached so far.
    pub fn summary(&self, runtime_s: f64) -> Result<Summary> {
        let truth = &self.setup.truth;
        let dist = truth.disturbance();
        let t = dist.sample_period();
        let st = self.estimator.state();
        let theta_r = ground_truth_theta_r(truth)?;
        let factor = self.setup.synthesis.residue_factor();
        let r_norm = norm(&theta_r);
        let (theta_m_ratio, theta_m_target_gap) = if r_norm > 0.0 {
            let gap: Vec<f64> = st.theta_m.iter().zip(&theta_r).map(|(m, r)| m - factor * r).collect();
            (Some(norm(&st.theta_m) / r_norm), Some(norm(&gap) / r_norm))
        } else {
            (None, None)
        };

        let true_a = truth.tf.theta_a();
        let true_b = truth.tf.theta_b();
        let da = padded_diff(&st.theta_a, &true_a);
        let db = padded_diff(&st.theta_b, &true_b);
        let scale = (norm(&true_a).powi(2) + norm(&true_b).powi(2)).sqrt();
        let parameter_errors = ParameterErrors {
            theta_a: da,
            theta_b: db,
            relative: (da * da + db * db).sqrt() / scale,
        };

        let window = self.setup.spectrum_window();
        let n = self.errors.len() as u64;
        let slice = |end: u64, lo: u64| -> Option<&[f64]> {
            let w = window?;
            (end <= n && end >= lo + w).then(|| &self.errors[(end - w) as usize..end as usize])
        };
        let baseline = self.setup.baseline_steps;
        let before_win = slice(baseline, 0);
        let adaptive_win = self.setup.freeze_at.and_then(|f| slice(f, baseline));
        let after_win = slice(n, baseline);
        let amp = |win: Option<&[f64]>, w: f64| -> Result<Option<f64>> {
            win.map(|x| harmonic_amplitude(x, w, t).map(|h| h.amplitude)).transpose()
        };
        let mut harmonics = Vec::with_capacity(dist.n());
        for (i, &w) in self.omegas.iter().enumerate() {
            let before = amp(before_win, w)?;
            let after = amp(after_win, w)?;
            let attenuation_db = match (before, after) {
                (Some(b), Some(a)) if b > 0.0 => Some(20.0 * (a / b).log10()),
                _ => None,
            };
            harmonics.push(HarmonicSummary {
                index: i + 1,
                omega: w,
                hz: w / TAU,
                before,
                adaptive: amp(adaptive_win, w)?,
                after,
                attenuation_db,
            });
        }

        Ok(Summary {
            steps: n,
            baseline_steps: self.setup.baseline_steps,
            freeze_at: self.setup.freeze_at,
            sample_period: t,
            spectrum_window: window,
            residue_factor: factor,
            theta_m_ratio,
            theta_m_target_gap,
            parameter_errors,
            harmonics,
            assumption_h: check_assumption_h(&st.theta_b, &true_b, &self.omegas, t)?,
            projection_counts: self.counts.clone(),
            final_estimates: ParameterSet {
                theta_a: st.theta_a.clone(),
                theta_b: st.theta_b.clone(),
                theta_m: st.theta_m.clone(),
                theta_d: self.controller.theta_d.clone(),
            },
            truth: TruthSet { theta_a: true_a, theta_b: true_b, theta_r_bar: truth.theta_r_bar.clone(), theta_r },
            runtime_s,
        })
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn padded_diff(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().max(b.len());
    (0..n)
        .map(|i| a.get(i).copied().unwrap_or(0.0) - b.get(i).copied().unwrap_or(0.0))
        .map(|d| d * d)
        .sum::<f64>()
        .sqrt()
}

/// Runs to completion, handing each kept record to `observer`.
pub fn run_experiment_with<F>(setup: ExperimentSetup, mut observer: F) -> Result<Summary>
where
    F: FnMut(&StepRecord) -> Result<()>,
{
    let start = Instant::now();
    let decimate = setup.decimate.max(1);
    let mut exp = Experiment::new(setup)?;
    while !exp.is_done() {
        let rec = exp.step()?;
        if rec.k % decimate == 0 {
            observer(&rec)?;
        }
    }
    exp.summary(start.elapsed().as_secs_f64())
}

pub fn run_experiment(setup: ExperimentSetup) -> Result<SimTrace> {
    let mut records = Vec::new();
    let summary = run_experiment_with(setup, |r| {
        records.push(r.clone());
        Ok(())
    })?;
    Ok(SimTrace { records, summary })
}
