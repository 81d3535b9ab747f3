use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use aff_core::adaptation::{a_polynomial, b_polynomial};
use aff_core::config::{load_config, ExperimentConfig};
use aff_core::lti::TransferFunction;
use aff_core::simulator::Summary;
use aff_core::trace::{
    feedforward_period, frequency_response, read_trace_file, run_with_trace, spectrum_from_summary,
    spectrum_from_trace, write_feedforward_csv, write_frequency_response_csv, write_spectrum_csv,
    write_summary_json, SpectrumRow, WindowEnd,
};
use aff_core::verify::{run_suite, Suite};
use aff_core::Error;
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

// stdout writes that tolerate a closed pipe (`aff ... | head`)
macro_rules! out {
    ($($arg:tt)*) => {{
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

const EXIT_USAGE: u8 = 1;
const EXIT_NUMERIC: u8 = 2;
const EXIT_PROPERTY: u8 = 3;

/// Points on the log grid of the frequency-response export.
const FREQ_POINTS: usize = 400;

#[derive(Parser)]
#[command(name = "aff", version, about = "Adaptive feedforward rejection of harmonic disturbances")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write trace, summary and report files.
    Run {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Run a property suite.
    Verify {
        suite: Suite,
        /// Defaults to a fresh random seed, printed for replay.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Per-harmonic before/after amplitudes from an undecimated trace.
    Spectrum {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        trace: PathBuf,
        /// Window length in fundamental periods; defaults to `run.spectrum_periods`.
        #[arg(long)]
        periods: Option<u64>,
        /// End of the reference window: `baseline`, `end` or a step index.
        #[arg(long, default_value = "baseline")]
        before: WindowArg,
        /// End of the compared window: `baseline`, `end` or a step index.
        #[arg(long, default_value = "end")]
        after: WindowArg,
        /// Defaults to the directory holding the trace.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one experiment per seed in parallel and tabulate the outcomes.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// `1-8` or `1,4,9`.
        #[arg(long)]
        seeds: SeedList,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    decimate: Option<u64>,
    #[arg(long = "freeze-at")]
    freeze_at: Option<u64>,
}

#[derive(Clone, Copy)]
struct WindowArg(WindowEnd);

impl FromStr for WindowArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "baseline" => Ok(Self(WindowEnd::BaselineEnd)),
            "end" => Ok(Self(WindowEnd::TraceEnd)),
            k => k.parse().map(|k| Self(WindowEnd::At(k))).map_err(|_| format!("`{k}` is not baseline, end or a step")),
        }
    }
}

#[derive(Clone)]
struct SeedList(Vec<u64>);

impl FromStr for SeedList {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let bad = |v: &str| format!("bad seed `{v}`");
        let seeds = if let Some((lo, hi)) = s.split_once('-') {
            let lo: u64 = lo.trim().parse().map_err(|_| bad(lo))?;
            let hi: u64 = hi.trim().parse().map_err(|_| bad(hi))?;
            (lo..=hi).collect()
        } else {
            s.split(',').map(|v| v.trim().parse().map_err(|_| bad(v))).collect::<Result<Vec<_>, _>>()?
        };
        if seeds.is_empty() {
            return Err("empty seed list".into());
        }
        Ok(Self(seeds))
    }
}

/// A failure and the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if e.is_numeric_fault() { EXIT_NUMERIC } else { EXIT_USAGE };
        Self { code, message: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Error::from(e).into()
    }
}

type CliResult<T> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Run { run } => cmd_run(&run),
        Command::Verify { suite, seed } => cmd_verify(suite, seed),
        Command::Spectrum { config, trace, periods, before, after, out } => {
            cmd_spectrum(&config, &trace, periods, before.0, after.0, out)
        }
        Command::Sweep { run, seeds } => cmd_sweep(&run, &seeds.0),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn resolve_config(args: &RunArgs, seed: Option<u64>) -> CliResult<ExperimentConfig> {
    let mut cfg = load_config(&args.config)?;
    if let Some(seed) = seed.or(args.seed) {
        cfg = cfg.with_seed(seed);
    }
    if let Some(m) = args.decimate {
        cfg.run.decimate = m;
    }
    if args.freeze_at.is_some() {
        cfg.run.freeze_at = args.freeze_at;
    }
    let errs = cfg.validate();
    if !errs.is_empty() {
        return Err(Error::ConfigInvalid(errs).into());
    }
    Ok(cfg)
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure { code: EXIT_USAGE, message: format!("{}: {e}", path.display()) })
}

/// Runs `cfg` into `dir` and returns its summary.
fn run_into(cfg: &ExperimentConfig, dir: &Path) -> CliResult<Summary> {
    fs::create_dir_all(dir)?;
    let setup = cfg.to_setup()?;
    let dist = setup.truth.disturbance().clone();
    let truth_tf = setup.truth.tf().clone();
    fs::write(dir.join("config.toml"), cfg.to_toml_string())?;

    let (summary, trace) = run_with_trace(setup, create(&dir.join("trace.csv"))?)?;
    trace.into_inner().map_err(|e| Failure::from(e.into_error()))?;
    write_summary_json(dir.join("summary.json"), &summary)?;
    write_spectrum_csv(create(&dir.join("spectrum.csv"))?, &spectrum_from_summary(&summary))?;

    let est = &summary.final_estimates;
    let estimate_tf = TransferFunction::new(a_polynomial(&est.theta_a), b_polynomial(&est.theta_b))?;
    let rows = frequency_response(&estimate_tf, &truth_tf, &dist, FREQ_POINTS)?;
    write_frequency_response_csv(create(&dir.join("freq_response.csv"))?, &rows)?;
    // incommensurate frequencies have no period to export
    if dist.period().is_some() {
        write_feedforward_csv(create(&dir.join("feedforward.csv"))?, &feedforward_period(&est.theta_d, &dist)?)?;
    }
    Ok(summary)
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.digits$}"))
}

fn print_spectrum(rows: &[SpectrumRow]) {
    out!("{:>8} {:>10} {:>12} {:>12} {:>10}", "harmonic", "hz", "before", "after", "dB");
    for r in rows {
        out!(
            "{:>8} {:>10.3} {:>12} {:>12} {:>10}",
            r.harmonic,
            r.hz,
            fmt_opt(r.before, 6),
            fmt_opt(r.after, 6),
            fmt_opt(r.attenuation_db, 2)
        );
    }
}

fn cmd_run(args: &RunArgs) -> CliResult<()> {
    let cfg = resolve_config(args, None)?;
    let summary = run_into(&cfg, &args.out)?;
    out!(
        "{} steps in {:.2} s, parameter error {:.3e}, |theta_M|/|theta_R| {}",
        summary.steps,
        summary.runtime_s,
        summary.parameter_errors.relative,
        fmt_opt(summary.theta_m_ratio, 4)
    );
    print_spectrum(&spectrum_from_summary(&summary));
    out!("wrote {}", args.out.display());
    Ok(())
}

fn cmd_verify(suite: Suite, seed: Option<u64>) -> CliResult<()> {
    let seed = seed.unwrap_or_else(rand::random);
    out!("suite {suite}, seed {seed}");
    let results = run_suite(suite, seed)?;
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
    for r in &results {
        out!("  {} {} ({})", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure { code: EXIT_PROPERTY, message: format!("failed properties: {}", failed.join("; ")) })
    }
}

fn cmd_spectrum(
    config: &Path,
    trace: &Path,
    periods: Option<u64>,
    before: WindowEnd,
    after: WindowEnd,
    out: Option<PathBuf>,
) -> CliResult<()> {
    let cfg = load_config(config)?;
    let dist = cfg.disturbance_spec().map_err(Error::ConfigInvalid)?;
    let period = dist
        .period()
        .ok_or_else(|| Error::Window("compensation frequencies share no common period".into()))?;
    let len = periods.unwrap_or(cfg.run.spectrum_periods) * period;
    let samples = read_trace_file(trace)?;
    let rows = spectrum_from_trace(&samples, &dist, len, before, after)?;
    let dir = out.unwrap_or_else(|| trace.parent().map(Path::to_path_buf).unwrap_or_default());
    fs::create_dir_all(&dir)?;
    write_spectrum_csv(create(&dir.join("spectrum.csv"))?, &rows)?;
    print_spectrum(&rows);
    Ok(())
}

fn cmd_sweep(args: &RunArgs, seeds: &[u64]) -> CliResult<()> {
    let configs = seeds.iter().map(|&s| resolve_config(args, Some(s))).collect::<CliResult<Vec<_>>>()?;
    let outcomes: Vec<(u64, CliResult<Summary>)> = seeds
        .par_iter()
        .zip(configs.par_iter())
        .map(|(&seed, cfg)| (seed, run_into(cfg, &args.out.join(format!("seed-{seed}")))))
        .collect();

    fs::create_dir_all(&args.out)?;
    let mut table = csv::Writer::from_writer(create(&args.out.join("sweep.csv"))?);
    table
        .write_record(["seed", "status", "parameter_error", "theta_m_ratio", "residue_factor", "worst_attenuation_db"])
        .map_err(Error::from)?;
    let mut faults = 0;
    for (seed, outcome) in &outcomes {
        let row = match outcome {
            Ok(s) => {
                let worst = s.harmonics.iter().filter_map(|h| h.attenuation_db).reduce(f64::max);
                vec![
                    seed.to_string(),
                    "ok".into(),
                    format!("{:?}", s.parameter_errors.relative),
                    s.theta_m_ratio.map_or_else(String::new, |v| format!("{v:?}")),
                    format!("{:?}", s.residue_factor),
                    worst.map_or_else(String::new, |v| format!("{v:?}")),
                ]
            }
            Err(f) => {
                faults += 1;
                eprintln!("seed {seed}: {}", f.message);
                vec![seed.to_string(), f.message.replace('\n', " "), String::new(), String::new(), String::new(), String::new()]
            }
        };
        out!("{}", row.join(","));
        table.write_record(&row).map_err(Error::from)?;
    }
    table.flush()?;
    if faults == 0 {
        Ok(())
    } else {
        let code = if outcomes.iter().any(|(_, o)| matches!(o, Err(f) if f.code == EXIT_NUMERIC)) {
            EXIT_NUMERIC
        } else {
            EXIT_USAGE
        };
        Err(Failure { code, message: format!("{faults} of {} runs failed", outcomes.len()) })
    }
}
