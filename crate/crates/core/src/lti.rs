//! Discrete-time polynomials in the backward shift operator `q^{-1}`.
//!
//! A polynomial `c_0 + c_1 q^{-1} + ... + c_m q^{-m}` is stored as its
//! coefficient list `[c_0, ..., c_m]`. Frequency responses are evaluated by
//! substituting `q^{-1} = e^{-j omega T}`; with that convention the steady-state
//! response of `L` to `sin(omega k T)` is `m sin(omega k T + delta)` where
//! `m e^{j delta} = L(e^{-j omega T})`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

/// Default strict margin used by [`is_schur_stable`].
pub const DEFAULT_SCHUR_MARGIN: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Polynomial {
    coeffs: Vec<f64>,
}

impl Polynomial {
    pub fn new(coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(Error::InvalidSpec("polynomial needs at least one coefficient".into()));
        }
        ensure_finite(&coeffs, "polynomial coefficients")?;
        Ok(Self { coeffs })
    }

    pub fn one() -> Self {
        Self { coeffs: vec![1.0] }
    }

    /// Pure delay `q^{-d}`.
    pub fn delay(d: usize) -> Self {
        let mut coeffs = vec![0.0; d + 1];
        coeffs[d] = 1.0;
        Self { coeffs }
    }

    /// `1 + c_1 q^{-1} + ... ` from the tail coefficients.
    pub fn monic(tail: &[f64]) -> Result<Self> {
        let mut coeffs = Vec::with_capacity(tail.len() + 1);
        coeffs.push(1.0);
        coeffs.extend_from_slice(tail);
        Self::new(coeffs)
    }

    /// `c_1 q^{-1} + ... + c_m q^{-m}` (zero constant term).
    pub fn delayed(tail: &[f64]) -> Result<Self> {
        let mut coeffs = Vec::with_capacity(tail.len() + 1);
        coeffs.push(0.0);
        coeffs.extend_from_slice(tail);
        Self::new(coeffs)
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Nominal degree: the index of the last stored coefficient.
    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn is_monic(&self) -> bool {
        self.coeffs[0] == 1.0
    }

    /// Evaluates the polynomial at `q^{-1} = z_inv` (Horner).
    pub fn eval(&self, z_inv: Complex64) -> Complex64 {
        self.coeffs
            .iter()
            .rev()
            .fold(Complex64::new(0.0, 0.0), |acc, &c| acc * z_inv + c)
    }

    pub fn mul(&self, other: &Polynomial) -> Polynomial {
        let mut coeffs = vec![0.0; self.coeffs.len() + other.coeffs.len() - 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            for (j, b) in other.coeffs.iter().enumerate() {
                coeffs[i + j] += a * b;
            }
        }
        Polynomial { coeffs }
    }

    fn padded(&self, len: usize) -> Polynomial {
        let mut coeffs = self.coeffs.clone();
        coeffs.resize(len.max(coeffs.len()), 0.0);
        Polynomial { coeffs }
    }
}

impl TryFrom<Vec<f64>> for Polynomial {
    type Error = Error;

    fn try_from(coeffs: Vec<f64>) -> Result<Self> {
        Polynomial::new(coeffs)
    }
}

impl From<Polynomial> for Vec<f64> {
    fn from(p: Polynomial) -> Self {
        p.coeffs
    }
}

/// Plant model `R = B / A` with monic `A`, one-sample-delay `B` and matched
/// nominal degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferFunction {
    a: Polynomial,
    b: Polynomial,
}

impl TransferFunction {
    /// Builds the model, zero-padding the shorter polynomial so both carry the
    /// same nominal degree.
    pub fn new(a: Polynomial, b: Polynomial) -> Result<Self> {
        if !a.is_monic() {
            return Err(Error::InvalidSpec(format!(
                "denominator must be monic, leading coefficient is {}",
                a.coeffs[0]
            )));
        }
        if b.coeffs[0] != 0.0 {
            return Err(Error::InvalidSpec(
                "numerator must have a zero constant term (one-sample delay)".into(),
            ));
        }
        let len = a.coeffs.len().max(b.coeffs.len()).max(2);
        Ok(Self { a: a.padded(len), b: b.padded(len) })
    }

    /// From `theta_A = [-a_1, ..]` and `theta_B = [b_1, ..]` regression layouts.
    pub fn from_thetas(theta_a: &[f64], theta_b: &[f64]) -> Result<Self> {
        let a_tail: Vec<f64> = theta_a.iter().map(|v| -v).collect();
        Self::new(Polynomial::monic(&a_tail)?, Polynomial::delayed(theta_b)?)
    }

    pub fn a(&self) -> &Polynomial {
        &self.a
    }

    pub fn b(&self) -> &Polynomial {
        &self.b
    }

    pub fn order(&self) -> usize {
        self.a.degree()
    }

    /// `[-a_1, ..., -a_n]`.
    pub fn theta_a(&self) -> Vec<f64> {
        self.a.coeffs[1..].iter().map(|v| -v).collect()
    }

    /// `[b_1, ..., b_n]`.
    pub fn theta_b(&self) -> Vec<f64> {
        self.b.coeffs[1..].to_vec()
    }

    /// `B(e^{-j w T}) / A(e^{-j w T})`.
    pub fn response(&self, omega: f64, sample_period: f64) -> Result<Complex64> {
        let z_inv = unit_phasor(omega, sample_period)?;
        Ok(self.b.eval(z_inv) / self.a.eval(z_inv))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FreqPoint {
    pub omega: f64,
    pub magnitude: f64,
    /// Radians in `(-pi, pi]`.
    pub phase: f64,
}

impl FreqPoint {
    pub fn to_block(&self) -> RotationBlock {
        RotationBlock::from_polar(self.magnitude, self.phase)
    }
}

fn unit_phasor(omega: f64, sample_period: f64) -> Result<Complex64> {
    let omega_t = omega * sample_period;
    if !(omega_t > 0.0 && omega_t < PI) {
        return Err(Error::FrequencyOutOfRange { omega_t });
    }
    Ok(Complex64::from_polar(1.0, -omega_t))
}

/// Magnitude and phase of `p(e^{-j omega T})`.
pub fn freq_response(p: &Polynomial, omega: f64, sample_period: f64) -> Result<FreqPoint> {
    let value = p.eval(unit_phasor(omega, sample_period)?);
    let mut phase = value.arg();
    if phase <= -PI {
        phase = PI;
    }
    Ok(FreqPoint { omega, magnitude: value.norm(), phase })
}

/// A scaled 2x2 rotation `[[m cos d, m sin d], [-m sin d, m cos d]]`.
///
/// Stored as the complex number `m e^{j d}`; block products, transposes and
/// inverses map to complex multiplication, conjugation and reciprocal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotationBlock {
    value: Complex64,
}

impl RotationBlock {
    pub const IDENTITY: RotationBlock = RotationBlock { value: Complex64::new(1.0, 0.0) };

    pub fn from_polar(magnitude: f64, phase: f64) -> Self {
        Self { value: Complex64::from_polar(magnitude, phase) }
    }

    pub fn from_complex(value: Complex64) -> Self {
        Self { value }
    }

    pub fn as_complex(&self) -> Complex64 {
        self.value
    }

    pub fn magnitude(&self) -> f64 {
        self.value.norm()
    }

    pub fn phase(&self) -> f64 {
        self.value.arg()
    }

    pub fn matrix(&self) -> [[f64; 2]; 2] {
        let (c, s) = (self.value.re, self.value.im);
        [[c, s], [-s, c]]
    }

    pub fn transpose(&self) -> Self {
        Self { value: self.value.conj() }
    }

    pub fn compose(&self, rhs: &RotationBlock) -> Self {
        Self { value: self.value * rhs.value }
    }

    pub fn scale(&self, factor: f64) -> Self {
        Self { value: self.value * factor }
    }

    /// Matrix inverse: magnitude `1/m`, phase negated.
    ///
    /// Fails when the magnitude is at or below `min_magnitude`.
    pub fn inverse(&self, min_magnitude: f64) -> Result<Self> {
        let magnitude = self.magnitude();
        if !(magnitude > min_magnitude) || magnitude == 0.0 {
            return Err(Error::Singular { magnitude, limit: min_magnitude });
        }
        Ok(Self { value: self.value.inv() })
    }

    /// `D x` for a 2-vector `x`.
    pub fn apply(&self, x: [f64; 2]) -> [f64; 2] {
        let (c, s) = (self.value.re, self.value.im);
        [c * x[0] + s * x[1], -s * x[0] + c * x[1]]
    }
}

/// Block-diagonal `D_L` holding one [`RotationBlock`] per compensation frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockDiagTransform {
    blocks: Vec<RotationBlock>,
}

impl BlockDiagTransform {
    pub fn identity(n: usize) -> Self {
        Self { blocks: vec![RotationBlock::IDENTITY; n] }
    }

    pub fn from_blocks(blocks: Vec<RotationBlock>) -> Self {
        Self { blocks }
    }

    pub fn blocks(&self) -> &[RotationBlock] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn dim(&self) -> usize {
        2 * self.blocks.len()
    }

    pub fn transpose(&self) -> Self {
        Self { blocks: self.blocks.iter().map(RotationBlock::transpose).collect() }
    }

    pub fn compose(&self, rhs: &BlockDiagTransform) -> Self {
        Self {
            blocks: self.blocks.iter().zip(&rhs.blocks).map(|(a, b)| a.compose(b)).collect(),
        }
    }

    pub fn inverse(&self, min_magnitude: f64) -> Result<Self> {
        let blocks = self
            .blocks
            .iter()
            .map(|b| b.inverse(min_magnitude))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { blocks })
    }

    /// `D x` for `x` of length `2n`.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::Dimension { expected: self.dim(), got: x.len() });
        }
        let mut out = Vec::with_capacity(x.len());
        for (block, pair) in self.blocks.iter().zip(x.chunks_exact(2)) {
            out.extend_from_slice(&block.apply([pair[0], pair[1]]));
        }
        Ok(out)
    }

    /// `D^T x`.
    pub fn apply_transpose(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.transpose().apply(x)
    }

    pub fn min_magnitude(&self) -> f64 {
        self.blocks.iter().map(RotationBlock::magnitude).fold(f64::INFINITY, f64::min)
    }
}

/// Builds `D_p` from the response of `p` at each compensation frequency.
pub fn build_transform(
    p: &Polynomial,
    omegas: &[f64],
    sample_period: f64,
) -> Result<BlockDiagTransform> {
    validate_frequencies(omegas, sample_period)?;
    let blocks = omegas
        .iter()
        .map(|&w| freq_response(p, w, sample_period).map(|fp| fp.to_block()))
        .collect::<Result<Vec<_>>>()?;
    Ok(BlockDiagTransform { blocks })
}

pub(crate) fn validate_frequencies(omegas: &[f64], sample_period: f64) -> Result<()> {
    if !(sample_period > 0.0 && sample_period.is_finite()) {
        return Err(Error::InvalidSpec(format!("sample period {sample_period} must be positive")));
    }
    for (i, &w) in omegas.iter().enumerate() {
        let omega_t = w * sample_period;
        if !(omega_t > 0.0 && omega_t < PI) {
            return Err(Error::InvalidSpec(format!(
                "frequency #{} (omega*T = {omega_t}) is outside (0, pi)",
                i + 1
            )));
        }
        if omegas[..i].contains(&w) {
            return Err(Error::InvalidSpec(format!("frequency #{} duplicates an earlier one", i + 1)));
        }
    }
    Ok(())
}

/// Whether every root `q` of `1 + a_1 q + ... + a_n q^n` satisfies
/// `|q| > 1 + margin`.
///
/// Runs the Schur-Cohn step-down recursion on the polynomial with its
/// coefficients scaled by `(1 + margin)^i`, i.e. with the reciprocal roots
/// pushed outward by the margin. A non-monic input is normalized by its
/// leading coefficient; a zero leading coefficient is reported unstable.
pub fn is_schur_stable(a: &Polynomial, margin: f64) -> bool {
    let lead = a.coeffs[0];
    if lead == 0.0 || !lead.is_finite() {
        return false;
    }
    let scale = 1.0 + margin;
    let mut c: Vec<f64> = a
        .coeffs
        .iter()
        .enumerate()
        .map(|(i, &v)| v / lead * scale.powi(i as i32))
        .collect();
    while c.len() > 1 && *c.last().unwrap() == 0.0 {
        c.pop();
    }
    if c.iter().any(|v| !v.is_finite()) {
        return false;
    }
    while c.len() > 1 {
        let m = c.len() - 1;
        let k = c[m];
        if k.abs() >= 1.0 {
            return false;
        }
        let denom = 1.0 - k * k;
        let next: Vec<f64> = (0..m).map(|i| (c[i] - k * c[m - i]) / denom).collect();
        c = next;
    }
    true
}

/// Direct-form difference equation `den(q^{-1}) y = num(q^{-1}) x`.
#[derive(Debug, Clone)]
pub struct DifferenceFilter {
    num: Vec<f64>,
    den: Vec<f64>,
    // inputs[j] = x(k-1-j), outputs[j] = y(k-1-j)
    inputs: Vec<f64>,
    outputs: Vec<f64>,
}

impl DifferenceFilter {
    pub fn new(num: &Polynomial, den: &Polynomial) -> Result<Self> {
        if !den.is_monic() {
            return Err(Error::InvalidSpec("filter denominator must be monic".into()));
        }
        Ok(Self {
            num: num.coeffs.clone(),
            den: den.coeffs.clone(),
            inputs: vec![0.0; num.degree()],
            outputs: vec![0.0; den.degree()],
        })
    }

    pub fn fir(num: &Polynomial) -> Self {
        Self::new(num, &Polynomial::one()).expect("unit denominator is monic")
    }

    pub fn from_tf(tf: &TransferFunction) -> Self {
        Self::new(tf.b(), tf.a()).expect("transfer function denominator is monic")
    }

    /// `1 / A` filter (used for the noise path).
    pub fn all_pole(a: &Polynomial) -> Result<Self> {
        Self::new(&Polynomial::one(), a)
    }

    pub fn step(&mut self, x: f64) -> Result<f64> {
        if !x.is_finite() {
            return Err(Error::NumericFault("non-finite filter input".into()));
        }
        let mut y = self.num[0] * x;
        for (b, past) in self.num[1..].iter().zip(&self.inputs) {
            y += b * past;
        }
        for (a, past) in self.den[1..].iter().zip(&self.outputs) {
            y -= a * past;
        }
        if !y.is_finite() {
            return Err(Error::NumericFault("non-finite filter state".into()));
        }
        shift_in(&mut self.inputs, x);
        shift_in(&mut self.outputs, y);
        Ok(y)
    }

    pub fn reset(&mut self) {
        self.inputs.iter_mut().for_each(|v| *v = 0.0);
        self.outputs.iter_mut().for_each(|v| *v = 0.0);
    }
}

pub(crate) fn shift_in(history: &mut [f64], value: f64) {
    if history.is_empty() {
        return;
    }
    history.rotate_right(1);
    history[0] = value;
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn poly(c: &[f64]) -> Polynomial {
        Polynomial::new(c.to_vec()).unwrap()
    }

    #[test]
    fn pure_delay_filter() {
        let mut f = DifferenceFilter::new(&Polynomial::delay(1), &Polynomial::one()).unwrap();
        let out: Vec<f64> = [1.0, 0.0, 0.0].iter().map(|&x| f.step(x).unwrap()).collect();
        assert_eq!(out, vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn first_order_dc_gain() {
        let mut f = DifferenceFilter::new(&Polynomial::delay(1), &poly(&[1.0, -0.5])).unwrap();
        let mut y = 0.0;
        let mut geometric = 0.0;
        for k in 0..200 {
            y = f.step(1.0).unwrap();
            // y(k) = sum_{i<k} 0.5^i
            if k > 0 {
                geometric += 0.5f64.powi(k - 1);
            }
            assert_relative_eq!(y, geometric, epsilon = 1e-12);
        }
        assert_relative_eq!(y, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_in_zero_out() {
        let mut f = DifferenceFilter::new(&poly(&[0.3, -0.2, 0.7]), &poly(&[1.0, -0.4, 0.1])).unwrap();
        assert!((0..50).all(|_| f.step(0.0).unwrap() == 0.0));
    }

    #[test]
    fn filter_rejects_non_finite() {
        let mut f = DifferenceFilter::fir(&Polynomial::delay(1));
        assert!(f.step(f64::NAN).unwrap_err().is_numeric_fault());
        let mut unstable = DifferenceFilter::new(&Polynomial::one(), &poly(&[1.0, -1e200])).unwrap();
        unstable.step(1e200).unwrap();
        assert!(unstable.step(0.0).unwrap_err().is_numeric_fault());
    }

    #[test]
    fn freq_response_examples() {
        let fp = freq_response(&Polynomial::one(), 0.7, 1.0).unwrap();
        assert_eq!((fp.magnitude, fp.phase), (1.0, 0.0));

        let fp = freq_response(&poly(&[1.0, -0.5]), PI / 2.0, 1.0).unwrap();
        let oracle = Complex64::new(1.0, 0.5);
        assert_relative_eq!(fp.magnitude, 1.25f64.sqrt(), epsilon = 1e-12);
        assert_relative_eq!(fp.phase, oracle.arg(), epsilon = 1e-12);

        let fp = freq_response(&Polynomial::delay(1), 0.3, 1.0).unwrap();
        assert_relative_eq!(fp.magnitude, 1.0, epsilon = 1e-12);
        assert_relative_eq!(fp.phase, -0.3, epsilon = 1e-12);
    }

    #[test]
    fn delay_response_matches_fitted_steady_state() {
        // Drive sin(0.3k) through q^{-1} and least-squares fit a sin + b cos.
        let mut f = DifferenceFilter::fir(&Polynomial::delay(1));
        let (mut ss, mut sc, mut cc, mut ys, mut yc) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for k in 0..2000 {
            let x = (0.3 * k as f64).sin();
            let y = f.step(x).unwrap();
            if k < 10 {
                continue;
            }
            let (s, c) = (0.3 * k as f64).sin_cos();
            ss += s * s;
            sc += s * c;
            cc += c * c;
            ys += y * s;
            yc += y * c;
        }
        let det = ss * cc - sc * sc;
        let a = (ys * cc - yc * sc) / det;
        let b = (yc * ss - ys * sc) / det;
        let fp = freq_response(&Polynomial::delay(1), 0.3, 1.0).unwrap();
        assert_relative_eq!(a.hypot(b), fp.magnitude, epsilon = 1e-9);
        assert_relative_eq!(b.atan2(a), fp.phase, epsilon = 1e-9);
    }

    #[test]
    fn freq_response_rejects_out_of_band() {
        for wt in [0.0, PI, -0.1, 4.0] {
            assert!(matches!(
                freq_response(&Polynomial::one(), wt, 1.0),
                Err(Error::FrequencyOutOfRange { .. })
            ));
        }
    }

    #[test]
    fn identity_transform_and_validation() {
        let d = build_transform(&Polynomial::one(), &[0.1, 0.5, 1.0], 1.0).unwrap();
        assert!(d.blocks().iter().all(|b| *b == RotationBlock::IDENTITY));
        assert!(build_transform(&Polynomial::one(), &[0.1, 0.1], 1.0).is_err());
        assert!(build_transform(&Polynomial::one(), &[0.1, 3.5], 1.0).is_err());
    }

    #[test]
    fn delay_transform_block() {
        let d = build_transform(&Polynomial::delay(1), &[0.3], 1.0).unwrap();
        let m = d.blocks()[0].matrix();
        let (s, c) = (-0.3f64).sin_cos();
        assert_relative_eq!(m[0][0], c, epsilon = 1e-15);
        assert_relative_eq!(m[0][1], s, epsilon = 1e-15);
        assert_relative_eq!(m[1][0], -s, epsilon = 1e-15);
        // theta^T D phi_R(k) reproduces the delayed sinusoid
        let theta = [0.8, -0.35];
        for k in 1..20 {
            let kt = k as f64;
            let phi = [(0.3 * kt).sin(), (0.3 * kt).cos()];
            let phi_prev = [(0.3 * (kt - 1.0)).sin(), (0.3 * (kt - 1.0)).cos()];
            let mapped = d.apply(&phi).unwrap();
            let lhs = theta[0] * mapped[0] + theta[1] * mapped[1];
            let rhs = theta[0] * phi_prev[0] + theta[1] * phi_prev[1];
            assert_relative_eq!(lhs, rhs, epsilon = 1e-12);
        }
    }

    #[test]
    fn transform_of_product_is_block_product() {
        let p1 = poly(&[1.0, -0.3, 0.2]);
        let p2 = poly(&[0.0, 0.5, 0.25, -0.1]);
        let w = [0.2, 0.9, 2.1];
        let d12 = build_transform(&p1.mul(&p2), &w, 1.0).unwrap();
        let d1 = build_transform(&p1, &w, 1.0).unwrap();
        let d2 = build_transform(&p2, &w, 1.0).unwrap();
        for ((a, b), c) in d1.blocks().iter().zip(d2.blocks()).zip(d12.blocks()) {
            // explicit 2x2 matrix product
            let (ma, mb, mc) = (a.matrix(), b.matrix(), c.matrix());
            for i in 0..2 {
                for j in 0..2 {
                    let prod = ma[i][0] * mb[0][j] + ma[i][1] * mb[1][j];
                    assert_relative_eq!(prod, mc[i][j], epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn block_inverse() {
        let b = RotationBlock::from_polar(2.0, 0.3);
        let inv = b.inverse(1e-3).unwrap();
        assert_relative_eq!(inv.magnitude(), 0.5, epsilon = 1e-15);
        assert_relative_eq!(inv.phase(), -0.3, epsilon = 1e-15);
        assert!(RotationBlock::from_polar(1e-4, 0.1).inverse(1e-3).is_err());
    }

    #[test]
    fn schur_examples() {
        assert!(is_schur_stable(&Polynomial::one(), DEFAULT_SCHUR_MARGIN));
        assert!(is_schur_stable(&poly(&[1.0, -0.5]), DEFAULT_SCHUR_MARGIN));
        assert!(!is_schur_stable(&poly(&[1.0, -1.5]), DEFAULT_SCHUR_MARGIN));
        // root exactly on the unit circle
        assert!(!is_schur_stable(&poly(&[1.0, -1.0]), DEFAULT_SCHUR_MARGIN));
        assert!(!is_schur_stable(&poly(&[1.0, 0.0, 1.0]), DEFAULT_SCHUR_MARGIN));
        // margin: root q = 1 + 1e-12 is inside the margin band
        assert!(!is_schur_stable(&poly(&[1.0, -1.0 / (1.0 + 1e-12)]), DEFAULT_SCHUR_MARGIN));
        assert!(is_schur_stable(&poly(&[1.0, -1.0 / (1.0 + 1e-12)]), 0.0));
    }

    /// Largest modulus of the reciprocal-polynomial roots via companion eigenvalues.
    fn spectral_radius(tail: &[f64]) -> f64 {
        let n = tail.len();
        if n == 0 {
            return 0.0;
        }
        let mut c = DMatrix::<f64>::zeros(n, n);
        for j in 0..n {
            c[(0, j)] = -tail[j];
        }
        for i in 1..n {
            c[(i, i - 1)] = 1.0;
        }
        c.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn schur_agrees_with_eigenvalue_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut disagreements = 0;
        let mut stable_count = 0;
        for _ in 0..1000 {
            let n = rng.random_range(0..=6);
            let tail: Vec<f64> = (0..n).map(|_| rng.random_range(-1.5..1.5)).collect();
            let rho = spectral_radius(&tail);
            // skip draws whose roots sit within eigen-solver accuracy of the boundary
            if (rho - 1.0).abs() < 1e-6 {
                continue;
            }
            let expected = rho < 1.0;
            stable_count += usize::from(expected);
            if is_schur_stable(&Polynomial::monic(&tail).unwrap(), DEFAULT_SCHUR_MARGIN) != expected {
                disagreements += 1;
            }
        }
        assert_eq!(disagreements, 0);
        assert!(stable_count > 100, "draws should exercise both outcomes");
    }

    #[test]
    fn tf_constructor_pads_and_validates() {
        let tf = TransferFunction::new(Polynomial::one(), Polynomial::delay(1)).unwrap();
        assert_eq!(tf.a().coeffs(), &[1.0, 0.0]);
        assert_eq!(tf.order(), 1);
        assert!(TransferFunction::new(poly(&[2.0, 1.0]), Polynomial::delay(1)).is_err());
        assert!(TransferFunction::new(Polynomial::one(), poly(&[1.0, 1.0])).is_err());
        let tf = TransferFunction::from_thetas(&[0.5, -0.1], &[1.0, 0.2]).unwrap();
        assert_eq!(tf.a().coeffs(), &[1.0, -0.5, 0.1]);
        assert_eq!(tf.theta_a(), vec![0.5, -0.1]);
    }

    #[test]
    fn polynomial_rejects_bad_input() {
        assert!(Polynomial::new(vec![]).is_err());
        assert!(Polynomial::new(vec![1.0, f64::INFINITY]).is_err());
    }
}
