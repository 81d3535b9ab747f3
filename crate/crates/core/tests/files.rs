use std::fs::File;
use std::io::BufWriter;

use aff_core::config::ExperimentConfig;
use aff_core::trace::{
    read_summary_json, read_trace_file, run_with_trace, spectrum_from_summary, spectrum_from_trace,
    write_summary_json, WindowEnd,
};

const CONFIG: &str = r#"
[plant]
a = [1.0, -1.2, 0.5]
b = [0.0, 1.0, 0.4]

[disturbance]
sample_period = 1.0
frequencies_hz = [0.05, 0.15]
amplitudes = [1.0, 0.5]

[excitation]
mode = "prbs"
amplitude = 1.0
decay_tau_steps = 5000.0

[adaptation]
n_a = 2
gamma1 = { c = 1.0, p = 1.0, offset = 1.0 }
gamma2 = { c = 1.0, p = 0.5, offset = 100.0 }

[synthesis]
alpha = 1e-3
beta = 0.99999

[run]
steps = 30000
baseline_steps = 2000
seed = 9
"#;

#[test]
fn files_on_disk_agree_with_the_in_memory_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::from_toml_str(CONFIG).unwrap();
    let dist = cfg.disturbance_spec().unwrap();
    let trace_path = dir.path().join("trace.csv");
    let (summary, w) = run_with_trace(cfg.to_setup().unwrap(), BufWriter::new(File::create(&trace_path).unwrap())).unwrap();
    drop(w);

    let summary_path = dir.path().join("summary.json");
    write_summary_json(&summary_path, &summary).unwrap();
    let back = read_summary_json(&summary_path).unwrap();
    assert_eq!(back.harmonics.len(), 2);
    assert_eq!(back.final_estimates, summary.final_estimates);
    assert_eq!(back.parameter_errors, summary.parameter_errors);

    // the trace-side spectrum must match the one computed in-loop
    let samples = read_trace_file(&trace_path).unwrap();
    assert_eq!(samples.len(), 30_000);
    let window = summary.spectrum_window.unwrap();
    let from_trace =
        spectrum_from_trace(&samples, &dist, window, WindowEnd::BaselineEnd, WindowEnd::TraceEnd).unwrap();
    for (a, b) in from_trace.iter().zip(spectrum_from_summary(&summary)) {
        assert!((a.before.unwrap() - b.before.unwrap()).abs() < 1e-12);
        assert!((a.after.unwrap() - b.after.unwrap()).abs() < 1e-12);
        assert!(a.after.unwrap() < a.before.unwrap());
    }
}
