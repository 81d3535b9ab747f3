//! Experiment configuration in TOML, validated as a whole.
//!
//! Every violated constraint is reported, not just the first one. See
//! `docs/config.md` for the schema.

use std::f64::consts::TAU;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adaptation::{AdaptationConfig, GainSchedule, ProjectionConfig, DEFAULT_REGULARIZATION};
use crate::error::{Error, Result};
use crate::excitation::{AmplitudeProfile, Decay, ExcitationMode, ExcitationSpec, Prbs};
use crate::lti::{is_schur_stable, Polynomial, TransferFunction};
use crate::regressor::{DisturbanceSpec, Harmonic};
use crate::simulator::{random_stable_plant, ExperimentSetup, PlantTruth, RandomPlantSpec};
use crate::synthesis::{SynthesisGains, DEFAULT_RATIO_MAX};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub plant: PlantSection,
    pub disturbance: DisturbanceSection,
    #[serde(default)]
    pub excitation: ExcitationSection,
    pub adaptation: AdaptationSection,
    pub synthesis: SynthesisSection,
    pub run: RunSection,
}

/// Either explicit coefficients (`a` monic, `b` with `b[0] = 0`) or a random draw.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSection {
    pub a: Option<Vec<f64>>,
    pub b: Option<Vec<f64>>,
    pub random: Option<RandomPlantSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomPlantSection {
    pub order: usize,
    /// Defaults to `run.seed`.
    pub seed: Option<u64>,
    pub root_min: Option<f64>,
    pub root_max: Option<f64>,
    pub b_min: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceSection {
    pub sample_rate_hz: Option<f64>,
    /// Seconds; alternative to `sample_rate_hz`.
    pub sample_period: Option<f64>,
    pub fundamental_hz: Option<f64>,
    /// Multiples of `fundamental_hz`.
    pub harmonics: Option<Vec<u32>>,
    /// Alternative to `fundamental_hz` + `harmonics`.
    pub frequencies_hz: Option<Vec<f64>>,
    /// Per-harmonic amplitude at the error; zeros when absent.
    #[serde(default)]
    pub amplitudes: Vec<f64>,
    /// Per-harmonic phase in radians; zeros when absent.
    #[serde(default)]
    pub phases: Vec<f64>,
    #[serde(default)]
    pub noise_sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExcitationKind {
    #[default]
    Off,
    Sidebands,
    Prbs,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExcitationSection {
    #[serde(default)]
    pub mode: ExcitationKind,
    #[serde(default)]
    pub amplitude: f64,
    /// Sideband offsets in Hz.
    #[serde(default)]
    pub delta_hz: Vec<f64>,
    /// Exponential amplitude decay, counted in global steps.
    pub decay_tau_steps: Option<f64>,
    #[serde(default)]
    pub decay_floor: f64,
    /// Defaults to `run.seed`.
    pub prbs_seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptationSection {
    pub n_a: usize,
    #[serde(default = "default_gamma1")]
    pub gamma1: GainSchedule,
    #[serde(default = "default_gamma2")]
    pub gamma2: GainSchedule,
    #[serde(default = "default_f0")]
    pub f0: f64,
    #[serde(default = "default_regularization")]
    pub regularization: f64,
    #[serde(default)]
    pub projection: ProjectionConfig,
}

fn default_gamma1() -> GainSchedule {
    AdaptationConfig::new(1).gamma1
}

fn default_gamma2() -> GainSchedule {
    AdaptationConfig::new(1).gamma2
}

fn default_f0() -> f64 {
    AdaptationConfig::new(1).f0
}

fn default_regularization() -> f64 {
    DEFAULT_REGULARIZATION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesisSection {
    pub alpha: f64,
    pub beta: f64,
    #[serde(default = "default_ratio_max")]
    pub ratio_max: f64,
    #[serde(default = "default_one")]
    pub db_refresh_every: u64,
    #[serde(default = "default_true")]
    pub enabled: bool,
    /// Identification-only steps after the baseline before `theta_D` moves.
    #[serde(default)]
    pub warmup_steps: u64,
}

fn default_ratio_max() -> f64 {
    DEFAULT_RATIO_MAX
}

fn default_one() -> u64 {
    1
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    /// Total steps, baseline included.
    pub steps: u64,
    #[serde(default)]
    pub baseline_steps: u64,
    pub freeze_at: Option<u64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_one")]
    pub decimate: u64,
    #[serde(default = "default_spectrum_periods")]
    pub spectrum_periods: u64,
}

fn default_spectrum_periods() -> u64 {
    50
}

/// Reads and validates a config file.
pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    ExperimentConfig::from_toml_str(&text)
        .map_err(|e| match e {
            Error::ConfigParse(msg) => Error::ConfigParse(format!("{}: {msg}", path.display())),
            other => other,
        })
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::ConfigParse(e.to_string()))?;
        let errs = cfg.validate();
        if errs.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::ConfigInvalid(errs))
        }
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config is always representable")
    }

    /// Replaces the run seed (noise, PRBS and random-plant defaults).
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.run.seed = seed;
        self
    }

    pub fn sample_period(&self) -> Option<f64> {
        let d = &self.disturbance;
        match (d.sample_rate_hz, d.sample_period) {
            (Some(fs), None) => Some(1.0 / fs),
            (None, Some(t)) => Some(t),
            _ => None,
        }
    }

    /// Every violated constraint, in section order.
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let dist = match self.disturbance_spec() {
            Ok(d) => Some(d),
            Err(e) => {
                errs.extend(e);
                None
            }
        };
        if let Some(dist) = &dist {
            if let Err(e) = self.plant_tf(dist) {
                errs.extend(e);
            }
            errs.extend(self.excitation_spec().validate(dist).into_iter().map(|m| format!("[excitation] {m}")));
        } else if let Err(e) = self.plant_section_shape() {
            errs.extend(e);
        }
        if !(self.disturbance.noise_sigma >= 0.0 && self.disturbance.noise_sigma.is_finite()) {
            errs.push(format!("[disturbance] noise_sigma = {} must be non-negative", self.disturbance.noise_sigma));
        }
        if self.excitation.mode == ExcitationKind::Prbs && !self.excitation.delta_hz.is_empty() {
            errs.push("[excitation] delta_hz only applies to mode = \"sidebands\"".into());
        }

        let a = &self.adaptation;
        if a.n_a == 0 {
            errs.push("[adaptation] n_a must be at least 1".into());
        }
        for (name, g) in [("gamma1", &a.gamma1), ("gamma2", &a.gamma2)] {
            if let Err(m) = g.validate() {
                errs.push(format!("[adaptation] {name}: {m} (decreasing-gain schedule)"));
            }
        }
        if !(a.f0 > 0.0 && a.f0.is_finite()) {
            errs.push(format!("[adaptation] f0 = {} must be positive (F(0) = f0 I must be invertible)", a.f0));
        }
        if !(a.regularization > 0.0 && a.regularization.is_finite()) {
            errs.push(format!("[adaptation] regularization = {} must be positive", a.regularization));
        }
        let n = dist.as_ref().map_or(0, |d| d.n());
        errs.extend(a.projection.validate(n).into_iter().map(|m| format!("[adaptation.projection] {m}")));

        let s = &self.synthesis;
        errs.extend(self.gains().validate(s.ratio_max).into_iter().map(|m| format!("[synthesis] {m}")));
        if !(s.ratio_max > 0.0) {
            errs.push(format!("[synthesis] ratio_max = {} must be positive", s.ratio_max));
        }
        if s.db_refresh_every == 0 {
            errs.push("[synthesis] db_refresh_every must be at least 1".into());
        }

        let r = &self.run;
        if r.baseline_steps > r.steps {
            errs.push(format!("[run] baseline_steps = {} exceeds steps = {}", r.baseline_steps, r.steps));
        }
        if let Some(f) = r.freeze_at {
            if f < r.baseline_steps || f > r.steps {
                errs.push(format!(
                    "[run] freeze_at = {f} must lie between baseline_steps = {} and steps = {}",
                    r.baseline_steps, r.steps
                ));
            }
        }
        if r.decimate == 0 {
            errs.push("[run] decimate must be at least 1".into());
        }
        if r.spectrum_periods == 0 {
            errs.push("[run] spectrum_periods must be at least 1".into());
        }
        errs
    }

    fn gains(&self) -> SynthesisGains {
        SynthesisGains { alpha: self.synthesis.alpha, beta: self.synthesis.beta }
    }

    fn omegas(&self) -> std::result::Result<Vec<f64>, Vec<String>> {
        let d = &self.disturbance;
        match (d.fundamental_hz, &d.harmonics, &d.frequencies_hz) {
            (Some(f0), Some(h), None) => {
                let mut errs = Vec::new();
                if !(f0 > 0.0 && f0.is_finite()) {
                    errs.push(format!("[disturbance] fundamental_hz = {f0} must be positive"));
                }
                if h.is_empty() || h.contains(&0) {
                    errs.push("[disturbance] harmonics must be a non-empty list of positive integers".into());
                }
                if errs.is_empty() {
                    Ok(h.iter().map(|&i| TAU * f0 * i as f64).collect())
                } else {
                    Err(errs)
                }
            }
            (None, None, Some(f)) => Ok(f.iter().map(|hz| TAU * hz).collect()),
            _ => Err(vec![
                "[disturbance] give either fundamental_hz + harmonics or frequencies_hz".into()
            ]),
        }
    }

    /// Compensation frequencies with the configured amplitude/phase ground truth.
    pub fn disturbance_spec(&self) -> std::result::Result<DisturbanceSpec, Vec<String>> {
        let mut errs = Vec::new();
        let t = self.sample_period();
        if t.is_none() {
            errs.push("[disturbance] give exactly one of sample_rate_hz or sample_period".into());
        }
        let omegas = self.omegas().map_err(|e| errs.extend(e)).ok();
        let (Some(t), Some(omegas)) = (t, omegas) else {
            return Err(errs);
        };
        let d = &self.disturbance;
        let n = omegas.len();
        for (name, v) in [("amplitudes", &d.amplitudes), ("phases", &d.phases)] {
            if !v.is_empty() && v.len() != n {
                errs.push(format!("[disturbance] {name} has {} entries, expected {n}", v.len()));
            }
        }
        if !errs.is_empty() {
            return Err(errs);
        }
        let harmonics = omegas
            .iter()
            .enumerate()
            .map(|(i, &omega)| Harmonic {
                omega,
                amplitude: d.amplitudes.get(i).copied().unwrap_or(0.0),
                phase: d.phases.get(i).copied().unwrap_or(0.0),
            })
            .collect();
        DisturbanceSpec::new(t, harmonics).map_err(|e| vec![format!("[disturbance] {e} (need 0 < omega_i < pi/T)")])
    }

    fn plant_section_shape(&self) -> std::result::Result<(), Vec<String>> {
        let p = &self.plant;
        match (&p.a, &p.b, &p.random) {
            (Some(_), Some(_), None) | (None, None, Some(_)) => Ok(()),
            _ => Err(vec!["[plant] give either both a and b, or a [plant.random] table".into()]),
        }
    }

    fn random_plant_spec(&self, r: &RandomPlantSection) -> RandomPlantSpec {
        let mut spec = RandomPlantSpec::new(r.order, r.seed.unwrap_or(self.run.seed));
        spec.root_min = r.root_min.unwrap_or(spec.root_min);
        spec.root_max = r.root_max.unwrap_or(spec.root_max);
        spec.b_min = r.b_min.unwrap_or(spec.b_min);
        spec
    }

    /// True plant, drawn when the config asks for a random one.
    pub fn plant_tf(&self, dist: &DisturbanceSpec) -> std::result::Result<TransferFunction, Vec<String>> {
        self.plant_section_shape()?;
        let p = &self.plant;
        if let Some(r) = &p.random {
            let spec = self.random_plant_spec(r);
            let errs = spec.validate();
            if !errs.is_empty() {
                return Err(errs.into_iter().map(|m| format!("[plant.random] {m}")).collect());
            }
            return random_stable_plant(&spec, &dist.omegas(), dist.sample_period())
                .map_err(|e| vec![format!("[plant.random] {e}")]);
        }
        let (a, b) = (p.a.clone().unwrap_or_default(), p.b.clone().unwrap_or_default());
        let poly = |name: &str, c: Vec<f64>| Polynomial::new(c).map_err(|e| format!("[plant] {name}: {e}"));
        let (a, b) = match (poly("a", a), poly("b", b)) {
            (Ok(a), Ok(b)) => (a, b),
            (a, b) => return Err([a.err(), b.err()].into_iter().flatten().collect()),
        };
        let mut errs = Vec::new();
        if !is_schur_stable(&a, 0.0) {
            errs.push("[plant] a is not Schur stable (A(q^-1) must have all roots outside the unit circle)".into());
        }
        match TransferFunction::new(a, b) {
            Ok(tf) if errs.is_empty() => Ok(tf),
            Ok(_) => Err(errs),
            Err(e) => {
                errs.push(format!("[plant] {e}"));
                Err(errs)
            }
        }
    }

    pub fn excitation_spec(&self) -> ExcitationSpec {
        let e = &self.excitation;
        let amplitude = AmplitudeProfile {
            initial: e.amplitude,
            decay: e.decay_tau_steps.map(|tau_steps| Decay { tau_steps, floor: e.decay_floor }),
        };
        let mode = match e.mode {
            ExcitationKind::Off => ExcitationMode::Off,
            ExcitationKind::Sidebands => {
                ExcitationMode::Sidebands { deltas: e.delta_hz.iter().map(|hz| TAU * hz).collect() }
            }
            ExcitationKind::Prbs => ExcitationMode::Prbs(Prbs::new(e.prbs_seed.unwrap_or(self.run.seed))),
        };
        ExcitationSpec { amplitude, mode }
    }

    pub fn adaptation_config(&self) -> AdaptationConfig {
        let a = &self.adaptation;
        AdaptationConfig {
            n_a: a.n_a,
            gamma1: a.gamma1,
            gamma2: a.gamma2,
            projection: a.projection.clone(),
            regularization: a.regularization,
            f0: a.f0,
        }
    }

    /// Builds the runnable experiment; fails with every violation if invalid.
    pub fn to_setup(&self) -> Result<ExperimentSetup> {
        let errs = self.validate();
        if !errs.is_empty() {
            return Err(Error::ConfigInvalid(errs));
        }
        let dist = self.disturbance_spec().map_err(Error::ConfigInvalid)?;
        let tf = self.plant_tf(&dist).map_err(Error::ConfigInvalid)?;
        let truth = PlantTruth::new(tf, dist, self.disturbance.noise_sigma, self.run.seed)?;
        let r = &self.run;
        let setup = ExperimentSetup {
            truth,
            excitation: self.excitation_spec(),
            adaptation: self.adaptation_config(),
            synthesis: self.gains(),
            synthesis_enabled: self.synthesis.enabled,
            synthesis_start: r.baseline_steps.saturating_add(self.synthesis.warmup_steps),
            db_refresh_every: self.synthesis.db_refresh_every,
            steps: r.steps,
            baseline_steps: r.baseline_steps,
            freeze_at: r.freeze_at,
            spectrum_periods: r.spectrum_periods,
            decimate: r.decimate,
        };
        let errs = setup.validate();
        if errs.is_empty() {
            Ok(setup)
        } else {
            Err(Error::ConfigInvalid(errs))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const DRIVE: &str = include_str!("../../../configs/drive.toml");

    fn rejected(text: &str) -> Vec<String> {
        match ExperimentConfig::from_toml_str(text) {
            Err(Error::ConfigInvalid(v)) => v,
            other => panic!("expected rejection, got {other:?}"),
        }
    }

    #[test]
    fn drive_config_loads() {
        let cfg = ExperimentConfig::from_toml_str(DRIVE).unwrap();
        assert_eq!(cfg.adaptation.n_a, 5);
        assert_eq!(cfg.synthesis.alpha, 4e-5);
        let setup = cfg.to_setup().unwrap();
        assert_eq!(setup.truth.disturbance().period(), Some(348));
        assert_eq!(setup.synthesis_start, 117_400);
        assert_eq!(setup.truth.tf().order(), 5);
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = ExperimentConfig::from_toml_str(DRIVE).unwrap();
        let again = ExperimentConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn alpha_beta_violation_is_named() {
        let text = DRIVE.replace("alpha = 4e-5", "alpha = 0.5").replace("beta = 0.9999998", "beta = 0.4");
        let errs = rejected(&text);
        assert!(errs.iter().any(|m| m.contains("alpha << beta < 1")), "{errs:?}");
    }

    #[test]
    fn sideband_collision_is_rejected() {
        // w_1 + delta = w_2
        let text = DRIVE
            .replace("mode = \"prbs\"", "mode = \"sidebands\"\ndelta_hz = [120.0]")
            .replace("decay_tau_steps = 100000.0", "");
        let errs = rejected(&text);
        assert!(errs.iter().any(|m| m.contains("sideband collision")), "{errs:?}");
    }

    #[test]
    fn every_violation_is_listed() {
        let text = DRIVE
            .replace("alpha = 4e-5", "alpha = 0.5")
            .replace("beta = 0.9999998", "beta = 0.4")
            .replace("harmonics = [1, 2, 3, 4]", "harmonics = [1, 2, 3, 400]")
            .replace("n_a = 5", "n_a = 0")
            .replace("decimate = 100", "decimate = 0");
        let errs = rejected(&text);
        assert!(errs.iter().any(|m| m.contains("alpha")));
        assert!(errs.iter().any(|m| m.contains("pi/T")));
        assert!(errs.iter().any(|m| m.contains("n_a")));
        assert!(errs.iter().any(|m| m.contains("decimate")));
    }

    #[test]
    fn unstable_explicit_plant_is_rejected() {
        let text = DRIVE.replace("[plant.random]\norder = 5", "[plant]\na = [1.0, -1.5]\nb = [0.0, 1.0]");
        let errs = rejected(&text);
        assert!(errs.iter().any(|m| m.contains("Schur")), "{errs:?}");

        let text = DRIVE.replace("[plant.random]\norder = 5", "[plant]\na = [1.0, -0.5]\nb = [0.2, 1.0]");
        let errs = rejected(&text);
        assert!(errs.iter().any(|m| m.contains("zero constant term")), "{errs:?}");
    }

    #[test]
    fn parse_errors_carry_line_info() {
        let text = DRIVE.replace("n_a = 5", "n_a = five");
        match ExperimentConfig::from_toml_str(&text) {
            Err(Error::ConfigParse(msg)) => assert!(msg.contains("line"), "{msg}"),
            other => panic!("{other:?}"),
        }
        let text = DRIVE.replace("n_a = 5", "n_a = 5\nnA = 3");
        assert!(matches!(ExperimentConfig::from_toml_str(&text), Err(Error::ConfigParse(_))));
    }

    #[test]
    fn seed_override_changes_random_plant_and_noise() {
        let cfg = ExperimentConfig::from_toml_str(DRIVE).unwrap();
        let a = cfg.clone().with_seed(1).to_setup().unwrap();
        let b = cfg.with_seed(2).to_setup().unwrap();
        assert_ne!(a.truth.tf(), b.truth.tf());
        assert_eq!(a.truth.seed(), 1);

        // an explicit plant seed pins the plant but not the noise
        let text = DRIVE.replace("order = 5\n", "order = 5\nseed = 7\n");
        let cfg = ExperimentConfig::from_toml_str(&text).unwrap();
        let a = cfg.clone().with_seed(1).to_setup().unwrap();
        let b = cfg.with_seed(2).to_setup().unwrap();
        assert_eq!(a.truth.tf(), b.truth.tf());
        assert_eq!(b.truth.seed(), 2);
    }

    #[test]
    fn explicit_frequencies_and_sample_period() {
        let text = DRIVE
            .replace("sample_rate_hz = 41760.0", "sample_period = 0.001")
            .replace("fundamental_hz = 120.0\nharmonics = [1, 2, 3, 4]", "frequencies_hz = [10.0, 25.0, 40.0, 55.0]");
        let cfg = ExperimentConfig::from_toml_str(&text).unwrap();
        let d = cfg.disturbance_spec().unwrap();
        assert_eq!(d.sample_period(), 0.001);
        assert!((d.omegas()[1] - TAU * 25.0).abs() < 1e-12);
        assert_eq!(d.period(), Some(200));
    }
}
