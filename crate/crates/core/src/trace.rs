//! File formats: step trace CSV, summary JSON, spectrum CSV, frequency
//! response and one-period feedforward exports.
//!
//! Trace columns, in order:
//! `k, phase, e, u, u_a, eps0, theta_m_norm, projected_a, projected_b`,
//! then `a_hat_1..a_hat_nA`, `b_hat_1..b_hat_nA`, `theta_m_1..theta_m_2n`,
//! `theta_d_1..theta_d_2n`. `a_hat_i` is the estimated `a_i` of
//! `A = 1 + a_1 q^-1 + ...`, i.e. `-theta_A[i]`.

use std::f64::consts::{PI, TAU};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lti::TransferFunction;
use crate::regressor::{dot, DisturbanceSpec};
use crate::simulator::{harmonic_amplitude, run_experiment_with, ExperimentSetup, Phase, StepRecord, Summary};

/// Fixed leading columns of the trace.
pub const TRACE_PREFIX: [&str; 9] =
    ["k", "phase", "e", "u", "u_a", "eps0", "theta_m_norm", "projected_a", "projected_b"];

pub fn trace_header(n_a: usize, n_harmonics: usize) -> Vec<String> {
    let mut cols: Vec<String> = TRACE_PREFIX.iter().map(|s| s.to_string()).collect();
    cols.extend((1..=n_a).map(|i| format!("a_hat_{i}")));
    cols.extend((1..=n_a).map(|i| format!("b_hat_{i}")));
    cols.extend((1..=2 * n_harmonics).map(|i| format!("theta_m_{i}")));
    cols.extend((1..=2 * n_harmonics).map(|i| format!("theta_d_{i}")));
    cols
}

/// Shortest round-trip representation, so equal runs give equal bytes.
fn fmt(v: f64) -> String {
    format!("{v:?}")
}

pub struct TraceWriter<W: Write> {
    inner: csv::Writer<W>,
    n_a: usize,
    n_harmonics: usize,
    row: Vec<String>,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(writer: W, n_a: usize, n_harmonics: usize) -> Result<Self> {
        let mut inner = csv::Writer::from_writer(writer);
        inner.write_record(trace_header(n_a, n_harmonics))?;
        Ok(Self { inner, n_a, n_harmonics, row: Vec::new() })
    }

    pub fn write(&mut self, r: &StepRecord) -> Result<()> {
        if r.theta_a.len() != self.n_a || r.theta_b.len() != self.n_a {
            return Err(Error::Dimension { expected: self.n_a, got: r.theta_a.len() });
        }
        if r.theta_m.len() != 2 * self.n_harmonics || r.theta_d.len() != 2 * self.n_harmonics {
            return Err(Error::Dimension { expected: 2 * self.n_harmonics, got: r.theta_m.len() });
        }
        self.row.clear();
        self.row.push(r.k.to_string());
        self.row.push(r.phase.as_str().into());
        for v in [r.e, r.u, r.u_a, r.eps0, r.theta_m_norm] {
            self.row.push(fmt(v));
        }
        self.row.push(u8::from(r.projected_a).to_string());
        self.row.push(u8::from(r.projected_b).to_string());
        self.row.extend(r.theta_a.iter().map(|v| fmt(-v)));
        self.row.extend(r.theta_b.iter().copied().map(fmt));
        self.row.extend(r.theta_m.iter().copied().map(fmt));
        self.row.extend(r.theta_d.iter().copied().map(fmt));
        self.inner.write_record(&self.row)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.inner.flush()?;
        self.inner.into_inner().map_err(|e| Error::Io(e.into_error()))
    }
}

/// Runs `setup` and streams every decimated step into a trace.
pub fn run_with_trace<W: Write>(setup: ExperimentSetup, writer: W) -> Result<(Summary, W)> {
    let n_a = setup.adaptation.n_a;
    let n = setup.truth.disturbance().n();
    let mut trace = TraceWriter::new(writer, n_a, n)?;
    let summary = run_experiment_with(setup, |r| trace.write(r))?;
    Ok((summary, trace.finish()?))
}

/// The columns a reader needs from a trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSample {
    pub k: u64,
    pub phase: Phase,
    pub e: f64,
}

pub fn read_trace(reader: impl Read) -> Result<Vec<TraceSample>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Trace(format!("missing column `{name}`")))
    };
    let (ik, ip, ie) = (col("k")?, col("phase")?, col("e")?);
    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let at = |msg: String| Error::Trace(format!("data row {}: {msg}", line + 1));
        let field = |i: usize| rec.get(i).ok_or_else(|| at(format!("missing field {i}")));
        let k = field(ik)?.parse::<u64>().map_err(|e| at(format!("k: {e}")))?;
        let phase = match field(ip)? {
            "baseline" => Phase::Baseline,
            "adaptive" => Phase::Adaptive,
            "frozen" => Phase::Frozen,
            other => return Err(at(format!("unknown phase `{other}`"))),
        };
        let e = field(ie)?.parse::<f64>().map_err(|err| at(format!("e: {err}")))?;
        if !e.is_finite() {
            return Err(at("non-finite e".into()));
        }
        out.push(TraceSample { k, phase, e });
    }
    Ok(out)
}

pub fn read_trace_file(path: impl AsRef<Path>) -> Result<Vec<TraceSample>> {
    read_trace(std::fs::File::open(path)?)
}

pub fn write_summary_json(path: impl AsRef<Path>, summary: &Summary) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, summary)?;
    f.write_all(b"\n")?;
    Ok(())
}

pub fn read_summary_json(path: impl AsRef<Path>) -> Result<Summary> {
    Ok(serde_json::from_reader(std::fs::File::open(path)?)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumRow {
    pub harmonic: usize,
    pub omega: f64,
    pub hz: f64,
    pub before: Option<f64>,
    pub after: Option<f64>,
    pub attenuation_db: Option<f64>,
}

pub fn spectrum_from_summary(summary: &Summary) -> Vec<SpectrumRow> {
    summary
        .harmonics
        .iter()
        .map(|h| SpectrumRow {
            harmonic: h.index,
            omega: h.omega,
            hz: h.hz,
            before: h.before,
            after: h.after,
            attenuation_db: h.attenuation_db,
        })
        .collect()
}

/// Where a spectrum window ends; the window covers the `len` samples before it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowEnd {
    /// End of the baseline phase.
    BaselineEnd,
    /// End of the trace.
    TraceEnd,
    /// Exclusive end step.
    At(u64),
}

/// Per-harmonic amplitudes over two windows of an undecimated trace.
pub fn spectrum_from_trace(
    samples: &[TraceSample],
    dist: &DisturbanceSpec,
    len: u64,
    before: WindowEnd,
    after: WindowEnd,
) -> Result<Vec<SpectrumRow>> {
    if samples.is_empty() {
        return Err(Error::Trace("trace has no rows".into()));
    }
    if let Some(p) = dist.period() {
        if len == 0 || !len.is_multiple_of(p) {
            return Err(Error::Window(format!("window of {len} samples is not a multiple of the period {p}")));
        }
    }
    let k0 = samples[0].k;
    if samples.iter().enumerate().any(|(i, s)| s.k != k0 + i as u64) {
        return Err(Error::Trace("steps are not consecutive (decimated trace?)".into()));
    }
    let end_index = |end: WindowEnd| -> Result<usize> {
        let idx = match end {
            WindowEnd::TraceEnd => samples.len(),
            WindowEnd::BaselineEnd => samples.iter().take_while(|s| s.phase == Phase::Baseline).count(),
            WindowEnd::At(k) => k.checked_sub(k0).map_or(0, |d| d as usize).min(samples.len()),
        };
        if (idx as u64) < len {
            return Err(Error::Window(format!("window of {len} samples does not fit before row {idx}")));
        }
        Ok(idx)
    };
    let window = |end: WindowEnd| -> Result<Vec<f64>> {
        let idx = end_index(end)?;
        Ok(samples[idx - len as usize..idx].iter().map(|s| s.e).collect())
    };
    let (wb, wa) = (window(before)?, window(after)?);
    let t = dist.sample_period();
    dist.omegas()
        .iter()
        .enumerate()
        .map(|(i, &w)| {
            let b = harmonic_amplitude(&wb, w, t)?.amplitude;
            let a = harmonic_amplitude(&wa, w, t)?.amplitude;
            Ok(SpectrumRow {
                harmonic: i + 1,
                omega: w,
                hz: w / TAU,
                before: Some(b),
                after: Some(a),
                attenuation_db: (b > 0.0).then(|| 20.0 * (a / b).log10()),
            })
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt).unwrap_or_default()
}

pub fn write_spectrum_csv(writer: impl Write, rows: &[SpectrumRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["harmonic", "omega", "hz", "before", "after", "attenuation_db"])?;
    for r in rows {
        w.write_record([
            r.harmonic.to_string(),
            fmt(r.omega),
            fmt(r.hz),
            opt(r.before),
            opt(r.after),
            opt(r.attenuation_db),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreqResponseRow {
    pub omega: f64,
    pub hz: f64,
    pub est_mag: f64,
    /// rad, principal value.
    pub est_phase: f64,
    pub true_mag: f64,
    pub true_phase: f64,
    /// Inside `[omega_1, omega_n]`.
    pub in_band: bool,
}

/// `B/A` of the estimate and of the truth on a log grid up to Nyquist, with
/// the compensation frequencies merged in.
pub fn frequency_response(
    estimate: &TransferFunction,
    truth: &TransferFunction,
    dist: &DisturbanceSpec,
    points: usize,
) -> Result<Vec<FreqResponseRow>> {
    let t = dist.sample_period();
    let nyq = PI / t;
    let (lo, hi) = (nyq * 1e-3, nyq * (1.0 - 1e-6));
    let mut grid: Vec<f64> = (0..points)
        .map(|i| lo * (hi / lo).powf(i as f64 / (points.max(2) - 1) as f64))
        .collect();
    grid.extend(dist.omegas());
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let omegas = dist.omegas();
    let (w_lo, w_hi) = (omegas[0], omegas[omegas.len() - 1]);
    grid.into_iter()
        .map(|w| {
            let est = estimate.response(w, t)?;
            let tru = truth.response(w, t)?;
            Ok(FreqResponseRow {
                omega: w,
                hz: w / TAU,
                est_mag: est.norm(),
                est_phase: est.arg(),
                true_mag: tru.norm(),
                true_phase: tru.arg(),
                in_band: (w_lo..=w_hi).contains(&w),
            })
        })
        .collect()
}

pub fn write_frequency_response_csv(writer: impl Write, rows: &[FreqResponseRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["omega", "hz", "est_mag", "est_phase", "true_mag", "true_phase", "in_band"])?;
    for r in rows {
        w.write_record([
            fmt(r.omega),
            fmt(r.hz),
            fmt(r.est_mag),
            fmt(r.est_phase),
            fmt(r.true_mag),
            fmt(r.true_phase),
            u8::from(r.in_band).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `u_A(k) = theta_D^T phi_R(k)` over one common period.
pub fn feedforward_period(theta_d: &[f64], dist: &DisturbanceSpec) -> Result<Vec<(u64, f64, f64)>> {
    if theta_d.len() != 2 * dist.n() {
        return Err(Error::Dimension { expected: 2 * dist.n(), got: theta_d.len() });
    }
    let p = dist
        .period()
        .ok_or_else(|| Error::InvalidSpec("compensation frequencies share no common period".into()))?;
    Ok((0..p).map(|k| (k, k as f64 * dist.sample_period(), dot(theta_d, &dist.phi_r(k)))).collect())
}

pub fn write_feedforward_csv(writer: impl Write, rows: &[(u64, f64, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["k", "t", "u_a"])?;
    for &(k, t, u) in rows {
        w.write_record([k.to_string(), fmt(t), fmt(u)])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regressor::Harmonic;

    fn record(k: u64) -> StepRecord {
        StepRecord {
            k,
            phase: Phase::Adaptive,
            e: 0.5,
            u: -1.0,
            u_a: 0.25,
            eps0: 1e-20,
            theta_m_norm: 3.0,
            projected_a: true,
            projected_b: false,
            theta_a: vec![0.5, -0.25],
            theta_b: vec![1.0, 2.0],
            theta_m: vec![0.1, 0.2],
            theta_d: vec![-0.3, 0.4],
        }
    }

    #[test]
    fn golden_header() {
        let golden = "k,phase,e,u,u_a,eps0,theta_m_norm,projected_a,projected_b,\
                      a_hat_1,a_hat_2,b_hat_1,b_hat_2,theta_m_1,theta_m_2,theta_d_1,theta_d_2";
        assert_eq!(trace_header(2, 1).join(","), golden);
    }

    #[test]
    fn golden_row() {
        let mut w = TraceWriter::new(Vec::new(), 2, 1).unwrap();
        w.write(&record(7)).unwrap();
        let text = String::from_utf8(w.finish().unwrap()).unwrap();
        let row = text.lines().nth(1).unwrap();
        assert_eq!(row, "7,adaptive,0.5,-1.0,0.25,1e-20,3.0,1,0,-0.5,0.25,1.0,2.0,0.1,0.2,-0.3,0.4");
    }

    #[test]
    fn writer_rejects_wrong_width() {
        let mut w = TraceWriter::new(Vec::new(), 3, 1).unwrap();
        assert!(matches!(w.write(&record(0)), Err(Error::Dimension { .. })));
    }

    #[test]
    fn trace_round_trip_and_missing_column() {
        let mut w = TraceWriter::new(Vec::new(), 2, 1).unwrap();
        for k in 0..3 {
            w.write(&record(k)).unwrap();
        }
        let bytes = w.finish().unwrap();
        let rows = read_trace(bytes.as_slice()).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[2], TraceSample { k: 2, phase: Phase::Adaptive, e: 0.5 });

        let err = read_trace("k,phase\n0,baseline\n".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("`e`"), "{err}");
        assert!(read_trace("k,phase,e\n0,bogus,1\n".as_bytes()).is_err());
        assert!(read_trace("k,phase,e\n0,baseline,x\n".as_bytes()).is_err());
    }

    fn dist() -> DisturbanceSpec {
        let t = 1.0 / 41760.0;
        DisturbanceSpec::new(
            t,
            vec![
                Harmonic { omega: TAU * 120.0, amplitude: 1.0, phase: 0.3 },
                Harmonic { omega: TAU * 240.0, amplitude: 0.5, phase: -1.0 },
            ],
        )
        .unwrap()
    }

    #[test]
    fn spectrum_from_trace_reads_configured_amplitudes() {
        let d = dist();
        let theta = d.theta();
        let samples: Vec<TraceSample> = (0..3480u64)
            .map(|k| TraceSample {
                k,
                phase: if k < 1740 { Phase::Baseline } else { Phase::Adaptive },
                e: if k < 1740 { d.disturbance_value(&theta, k).unwrap() } else { 0.0 },
            })
            .collect();
        let rows = spectrum_from_trace(&samples, &d, 1740, WindowEnd::BaselineEnd, WindowEnd::TraceEnd).unwrap();
        assert!((rows[0].before.unwrap() - 1.0).abs() < 1e-9);
        assert!((rows[1].before.unwrap() - 0.5).abs() < 1e-9);
        assert!(rows[0].after.unwrap() < 1e-12);

        assert!(matches!(
            spectrum_from_trace(&samples, &d, 1000, WindowEnd::BaselineEnd, WindowEnd::TraceEnd),
            Err(Error::Window(_))
        ));
        let gappy: Vec<TraceSample> = samples.iter().step_by(2).cloned().collect();
        assert!(matches!(
            spectrum_from_trace(&gappy, &d, 348, WindowEnd::BaselineEnd, WindowEnd::TraceEnd),
            Err(Error::Trace(_))
        ));
        assert!(spectrum_from_trace(&[], &d, 348, WindowEnd::BaselineEnd, WindowEnd::TraceEnd).is_err());
    }

    #[test]
    fn spectrum_csv_layout() {
        let rows = vec![SpectrumRow {
            harmonic: 1,
            omega: 2.0,
            hz: 0.5,
            before: Some(1.0),
            after: Some(0.01),
            attenuation_db: Some(-40.0),
        }];
        let mut out = Vec::new();
        write_spectrum_csv(&mut out, &rows).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "harmonic,omega,hz,before,after,attenuation_db\n1,2.0,0.5,1.0,0.01,-40.0\n"
        );
    }

    #[test]
    fn frequency_response_matches_itself_and_flags_band() {
        let d = dist();
        let tf = TransferFunction::from_thetas(&[0.5], &[1.0]).unwrap();
        let rows = frequency_response(&tf, &tf, &d, 64).unwrap();
        assert_eq!(rows.len(), 66);
        assert!(rows.windows(2).all(|w| w[0].omega < w[1].omega));
        assert!(rows.iter().all(|r| r.est_mag == r.true_mag && r.est_phase == r.true_phase));
        let band: Vec<f64> = rows.iter().filter(|r| r.in_band).map(|r| r.hz).collect();
        assert!((band[0] - 120.0).abs() < 1e-9 && (band[band.len() - 1] - 240.0).abs() < 1e-9);
        // DC-ish gain of q^-1 / (1 - 0.5 q^-1) is 2
        assert!((rows[0].true_mag - 2.0).abs() < 1e-3);
    }

    #[test]
    fn feedforward_period_evaluates_theta_d() {
        let d = dist();
        let theta = d.theta();
        let rows = feedforward_period(&theta, &d).unwrap();
        assert_eq!(rows.len(), 348);
        for &(k, t, u) in rows.iter().step_by(17) {
            let direct = (TAU * 120.0 * t + 0.3).sin() + 0.5 * (TAU * 240.0 * t - 1.0).sin();
            assert!((t - k as f64 / 41760.0).abs() < 1e-15);
            assert!((u - direct).abs() < 1e-12);
        }
        assert!(feedforward_period(&[1.0], &d).is_err());
    }
}
