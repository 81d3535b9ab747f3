//! Acceptance checks, one line per criterion. Runs under `cargo test`.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use aff_core::config::{load_config, ExperimentConfig};
use aff_core::trace::run_with_trace;
use aff_core::verify::{
    equilibrium_residual, excitation_worst, lemma1_worst, pe_checks, projection_audit, REFERENCE_GAINS,
};
use aff_core::excitation::ExcitationSpec;
use aff_core::simulator::run_experiment_with;
use aff_core::Result;

struct Outcome {
    passed: bool,
    detail: String,
}

fn config(name: &str) -> ExperimentConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    load_config(&path).unwrap_or_else(|e| panic!("{e}"))
}

fn excitation_identity() -> Result<Outcome> {
    let worst = excitation_worst(1, 20, 10_000)?;
    Ok(Outcome { passed: worst <= 1e-12, detail: format!("max |fast - direct| = {worst:.2e} (limit 1e-12)") })
}

fn filtering_identity() -> Result<Outcome> {
    let worst = lemma1_worst(2, 50)?;
    Ok(Outcome { passed: worst <= 1e-6, detail: format!("worst relative RMS gap = {worst:.2e} (limit 1e-6)") })
}

fn pe_order() -> Result<Outcome> {
    let [p2, not3, p6] = pe_checks()?;
    Ok(Outcome {
        passed: p2.0 && not3.0 && p6.0,
        detail: format!(
            "sine order 2: {} ({:.1e}), sine not order 3: {} ({:.1e}), sidebands n=3 order 6: {} ({:.1e})",
            p2.0, p2.1, not3.0, not3.1, p6.0, p6.1
        ),
    })
}

fn identification() -> Result<Outcome> {
    let base = config("identification.toml");
    let seeds = [1u64, 2, 4, 5];
    let errors: Vec<Result<f64>> = std::thread::scope(|s| {
        let handles: Vec<_> = seeds
            .iter()
            .map(|&seed| {
                let cfg = base.clone().with_seed(seed);
                s.spawn(move || {
                    let summary = run_experiment_with(cfg.to_setup()?, |_| Ok(()))?;
                    Ok(summary.parameter_errors.relative)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    let errors = errors.into_iter().collect::<Result<Vec<f64>>>()?;
    let worst = errors.iter().copied().fold(0.0, f64::max);
    let list: Vec<String> = seeds.iter().zip(&errors).map(|(s, e)| format!("seed {s}: {:.3}%", 100.0 * e)).collect();
    Ok(Outcome { passed: worst < 0.02, detail: format!("{} (limit 2%)", list.join(", ")) })
}

fn residue_law() -> Result<Outcome> {
    let summary = run_experiment_with(config("drive.toml").to_setup()?, |_| Ok(()))?;
    let factor = summary.residue_factor;
    let ratio = summary.theta_m_ratio.unwrap_or(f64::NAN);
    let in_band = ratio >= 0.5 * factor && ratio <= 2.0 * factor;
    let att: Vec<f64> = summary.harmonics.iter().map(|h| h.attenuation_db.unwrap_or(f64::NAN)).collect();
    let attenuated = att.iter().all(|&a| a <= -40.0);
    Ok(Outcome {
        passed: in_band && attenuated,
        detail: format!(
            "|theta_M|/|theta_R| = {ratio:.4e} vs {factor:.4e} ({:.3}x, band [0.5, 2]); attenuation dB {:?} (need <= -40)",
            ratio / factor,
            att.iter().map(|a| format!("{a:.1}")).collect::<Vec<_>>()
        ),
    })
}

fn stationary_point() -> Result<Outcome> {
    let setup = config("drive.toml").to_setup()?;
    let residual = equilibrium_residual(&setup.truth, REFERENCE_GAINS, &ExcitationSpec::off())?;
    Ok(Outcome {
        passed: residual <= 1e-6,
        detail: format!("|mean update| / |theta_R| = {residual:.2e} (limit 1e-6)"),
    })
}

fn projection_safety() -> Result<Outcome> {
    let mut passed = true;
    let mut parts = Vec::new();
    for seed in [1u64, 2, 3] {
        let audit = projection_audit(seed, 100_000)?;
        let ok = audit.steps == 100_000 && audit.unstable_steps == 0 && audit.min_b_ratio >= 1.0 - 1e-9;
        passed &= ok;
        parts.push(format!(
            "seed {seed}: {} steps, {} unstable, min |B|/floor {:.4}, projections A {} B {}",
            audit.steps, audit.unstable_steps, audit.min_b_ratio, audit.projections_a, audit.projections_b
        ));
    }
    Ok(Outcome { passed, detail: parts.join("; ") })
}

fn determinism() -> Result<Outcome> {
    let mut cfg = config("drive.toml");
    cfg.run.steps = 60_000;
    cfg.run.decimate = 1;
    let run = |cfg: &ExperimentConfig| -> Result<Vec<u8>> { Ok(run_with_trace(cfg.to_setup()?, Vec::new())?.1) };
    let first = run(&cfg)?;
    let second = run(&cfg)?;
    let other = run(&cfg.clone().with_seed(cfg.run.seed + 1))?;
    Ok(Outcome {
        passed: first == second && first != other,
        detail: format!(
            "{} bytes, identical: {}, other seed differs: {}",
            first.len(),
            first == second,
            first != other
        ),
    })
}

fn frozen_replay() -> Result<Outcome> {
    let mut cfg = config("drive.toml");
    let period = 348;
    let window = 100 * period;
    let adaptive = cfg.run.steps - cfg.run.baseline_steps;
    cfg.run.baseline_steps = window;
    cfg.run.spectrum_periods = 100;
    cfg.run.freeze_at = Some(window + adaptive);
    cfg.run.steps = window + adaptive + window;
    let summary = run_experiment_with(cfg.to_setup()?, |_| Ok(()))?;
    let ratios: Vec<f64> = summary
        .harmonics
        .iter()
        .map(|h| match (h.adaptive, h.after) {
            (Some(a), Some(f)) if a > 0.0 => f / a,
            _ => f64::NAN,
        })
        .collect();
    Ok(Outcome {
        passed: ratios.iter().all(|&r| r <= 2.0),
        detail: format!(
            "frozen / adaptive residual per harmonic {:?} over {} periods (limit 2)",
            ratios.iter().map(|r| format!("{r:.3}")).collect::<Vec<_>>(),
            window / period
        ),
    })
}

fn main() -> ExitCode {
    type Check = fn() -> Result<Outcome>;
    let criteria: [(&str, Check, u64); 9] = [
        ("excitation identity", excitation_identity, 1),
        ("filtering identity", filtering_identity, 10),
        ("PE order", pe_order, 5),
        ("identification consistency", identification, 30),
        ("residue law", residue_law, 60),
        ("stationary point", stationary_point, 5),
        ("projection safety", projection_safety, 20),
        ("determinism", determinism, 10),
        ("frozen feedforward replay", frozen_replay, 15),
    ];
    let filter: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, check, limit)) in criteria.iter().enumerate() {
        let id = i + 1;
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = check();
        let elapsed = start.elapsed();
        let in_time = elapsed <= Duration::from_secs(*limit);
        let (passed, detail) = match outcome {
            Ok(o) => (o.passed && in_time, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !passed {
            failed += 1;
        }
        println!(
            "criterion {id} {name}: {} | {detail} | {:.2} s (limit {limit} s)",
            if passed { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64()
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
