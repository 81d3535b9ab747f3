use std::f64::consts::PI;

use aff_core::adaptation::{
    a_polynomial, b_polynomial, AdaptationConfig, Estimator, GainSchedule, ProjectionConfig,
};
use aff_core::excitation::{excitation_direct, excitation_fast, pe_order, ExcitationSpec};
use aff_core::lti::{build_transform, freq_response, is_schur_stable, BlockDiagTransform, Polynomial, RotationBlock};
use aff_core::regressor::{DisturbanceSpec, Harmonic, RegressorBank};
use aff_core::synthesis::{ControllerState, SynthesisGains};
use aff_core::verify::{lemma1_gap, random_stable_polynomial};
use num_complex::Complex64;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn arb_dist(max_n: usize) -> impl Strategy<Value = DisturbanceSpec> {
    prop::collection::vec((0.05f64..3.0, 0.0f64..2.0, -PI..PI), 1..=max_n).prop_filter_map(
        "frequencies too close",
        |mut hs| {
            hs.sort_by(|a, b| a.0.total_cmp(&b.0));
            if hs.windows(2).any(|w| w[1].0 - w[0].0 < 0.02) {
                return None;
            }
            let hs = hs.into_iter().map(|(omega, amplitude, phase)| Harmonic { omega, amplitude, phase }).collect();
            DisturbanceSpec::new(1.0, hs).ok()
        },
    )
}

fn arb_stable_poly() -> impl Strategy<Value = Polynomial> {
    (any::<u64>(), 0usize..=8).prop_map(|(seed, d)| random_stable_polynomial(&mut ChaCha8Rng::seed_from_u64(seed), d, 0.95))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn filtering_matches_block_transform(p in arb_stable_poly(), dist in arb_dist(4), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let theta: Vec<f64> = (0..2 * dist.n()).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect();
        let gap = lemma1_gap(&p, &theta, &dist, 0.95, 500).unwrap();
        prop_assert!(gap <= 1e-6, "gap {gap}");
    }

    #[test]
    fn transform_blocks_are_rotations(p in arb_stable_poly(), dist in arb_dist(6)) {
        for b in build_transform(&p, &dist.omegas(), 1.0).unwrap().blocks() {
            let m = b.matrix();
            prop_assert!((m[0][0] - m[1][1]).abs() <= 1e-12);
            prop_assert!((m[0][1] + m[1][0]).abs() <= 1e-12);
        }
    }

    #[test]
    fn magnitude_ignores_phase_convention(coeffs in prop::collection::vec(-2.0f64..2.0, 1..8), w in 0.01f64..3.1) {
        let p = Polynomial::new(coeffs).unwrap();
        let fp = freq_response(&p, w, 1.0).unwrap();
        let other = p.eval(Complex64::from_polar(1.0, w)).norm();
        prop_assert!((fp.magnitude - other).abs() <= 1e-12 * (1.0 + other));
    }

    #[test]
    fn schur_test_agrees_with_roots(tail in prop::collection::vec(-2.0f64..2.0, 1..=6)) {
        let p = Polynomial::monic(&tail).unwrap();
        let n = tail.len();
        // companion matrix of z^n + a_1 z^{n-1} + ... + a_n
        let mut c = nalgebra::DMatrix::<f64>::zeros(n, n);
        for (j, a) in tail.iter().enumerate() {
            c[(0, j)] = -a;
        }
        for i in 1..n {
            c[(i, i - 1)] = 1.0;
        }
        let rho = c.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);
        // skip polynomials within rounding distance of the boundary
        prop_assume!((rho - 1.0).abs() > 1e-6);
        prop_assert_eq!(is_schur_stable(&p, 0.0), rho < 1.0);
    }

    #[test]
    fn phi_r_is_on_the_sphere(dist in arb_dist(8), k in 0u64..100_000_000) {
        let phi = dist.phi_r(k);
        prop_assert!(phi.iter().all(|v| v.abs() <= 1.0));
        let sq: f64 = phi.iter().map(|v| v * v).sum();
        prop_assert!((sq - dist.n() as f64).abs() <= 1e-12);
    }

    #[test]
    fn excitation_fast_equals_direct_and_is_bounded(
        f0 in 50.0f64..200.0,
        n in 1usize..=4,
        frac in 0.05f64..0.95,
        amp in 0.1f64..1.0,
        k in 0u64..10_000,
    ) {
        let hs = (1..=n).map(|i| Harmonic { omega: 2.0 * PI * f0 * i as f64, amplitude: 1.0, phase: 0.0 }).collect();
        let dist = DisturbanceSpec::new(1.0 / 41760.0, hs).unwrap();
        let spec = ExcitationSpec::sidebands(amp, vec![frac * dist.omegas()[0]]);
        prop_assume!(spec.validate(&dist).is_empty());
        let direct = excitation_direct(&spec, &dist, k);
        let fast = excitation_fast(&spec, &dist.phi_r(k), k, dist.sample_period());
        prop_assert!((fast - direct).abs() <= 1e-12);
        prop_assert!(direct.abs() <= n as f64 * amp + 1e-12);
    }

    #[test]
    fn pe_order_is_monotone(signal in prop::collection::vec(-1.0f64..1.0, 80..256), m in 2usize..8) {
        let (ok, _) = pe_order(&signal, m, 1e-6).unwrap();
        if ok {
            for lower in 1..m {
                prop_assert!(pe_order(&signal, lower, 1e-6).unwrap().0);
            }
        }
    }

    #[test]
    fn estimator_invariants_hold_after_every_step(
        seed in any::<u64>(),
        n_a in 1usize..=4,
        scale in 0.1f64..100.0,
        g in 0.01f64..0.5,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let omegas = [0.3, 1.1];
        let mut cfg = AdaptationConfig::new(n_a);
        cfg.gamma1 = GainSchedule { c: g, p: 1.0, floor: g, offset: 0.0 };
        cfg.gamma2 = GainSchedule { c: g, p: 1.0, floor: g, offset: 0.0 };
        cfg.projection = ProjectionConfig { b_floor: 0.2, ..Default::default() };
        let proj = cfg.projection.clone();
        let mut est = Estimator::new(cfg, &omegas, 1.0).unwrap();
        let dist = DisturbanceSpec::from_omegas(1.0, &omegas).unwrap();
        let mut bank = RegressorBank::new(n_a);
        for k in 0..200u64 {
            let mut draw = || rand::Rng::random_range(&mut rng, -scale..scale);
            let e = draw();
            let phi = dist.phi_r(k);
            est.step(&bank, &phi, e).unwrap();
            let st = est.state();
            prop_assert!(st.f_scalar > 0.0);
            prop_assert!(st.f_mat.clone().cholesky().is_some());
            prop_assert!(is_schur_stable(&a_polynomial(&st.theta_a), proj.schur_margin));
            let b = b_polynomial(&st.theta_b);
            for &w in &omegas {
                prop_assert!(freq_response(&b, w, 1.0).unwrap().magnitude >= proj.b_floor * (1.0 - 1e-9));
            }
            bank.push(e, draw(), draw()).unwrap();
        }
    }

    #[test]
    fn leakage_bounds_theta_d(
        mags in prop::collection::vec(0.2f64..3.0, 1..=4),
        phases in prop::collection::vec(-PI..PI, 4),
        m_bound in 0.1f64..10.0,
        seed in any::<u64>(),
    ) {
        let gains = SynthesisGains { alpha: 1e-2, beta: 0.99 };
        let blocks: Vec<RotationBlock> =
            mags.iter().zip(&phases).map(|(&m, &p)| RotationBlock::from_polar(m, p)).collect();
        let n = blocks.len();
        let db = BlockDiagTransform::from_blocks(blocks);
        let mut ctrl = ControllerState::new(gains, db, 1e-3);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let mut worst_m = 0.0f64;
        for _ in 0..2000 {
            let raw: Vec<f64> = (0..2 * n).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect();
            let r = norm(&raw).max(1e-12);
            let theta_m: Vec<f64> = raw.iter().map(|v| v / r * m_bound).collect();
            worst_m = worst_m.max(norm(&ctrl.inverse_transpose_apply(&theta_m).unwrap()));
            ctrl.synthesis_step(&theta_m).unwrap();
            let bound = gains.alpha * worst_m / (1.0 - gains.beta);
            prop_assert!(norm(&ctrl.theta_d) <= bound * (1.0 + 1e-9));
        }
    }

    #[test]
    fn synthesis_limit_is_the_fixed_point(
        mags in prop::collection::vec(0.2f64..3.0, 1..=3),
        theta_m in prop::collection::vec(-1.0f64..1.0, 6),
    ) {
        let gains = SynthesisGains { alpha: 1e-2, beta: 0.9 };
        let n = mags.len();
        let db = BlockDiagTransform::from_blocks(mags.iter().map(|&m| RotationBlock::from_polar(m, 0.7)).collect());
        let mut ctrl = ControllerState::new(gains, db, 1e-3);
        let theta_m = &theta_m[..2 * n];
        for _ in 0..2000 {
            ctrl.synthesis_step(theta_m).unwrap();
        }
        let lhs: Vec<f64> = ctrl.inverse_transpose_apply(theta_m).unwrap();
        for (d, g) in ctrl.theta_d.iter().zip(&lhs) {
            prop_assert!((gains.beta * d - gains.alpha * g - d).abs() <= 1e-9);
        }
        for (a, b) in ctrl.theta_d.iter().zip(ctrl.fixed_point(theta_m).unwrap()) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }
}
