//! S-parameter extraction, resonance finding, monopole tuning and
//! coupling sweeps.

use std::fmt::Write as _;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
pub use crate::fdtd::PortRecord;
use crate::fdtd::{discretize, run_with, Excitation, RunOptions, RunResult, SourceWaveform};
use crate::scenario::{wavelength_in_medium, Scenario};

/// Minimum dip depth that counts as a resonance (dB).
pub const RESONANCE_THRESHOLD_DB: f64 = -6.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ScatteringMatrix {
    pub frequencies_ghz: Vec<f64>,
    pub ports: Vec<u32>,
    /// `s[f][i][j]`, indices into `ports`
    pub s: Vec<Vec<Vec<Complex64>>>,
    /// reference impedance of the driven ports (Ω)
    pub reference_ohm: f64,
    /// driven ports whose run hit the step limit before the energy floor
    pub unconverged: Vec<u32>,
}

pub fn db(x: f64) -> f64 {
    20.0 * x.log10()
}

impl ScatteringMatrix {
    fn index(&self, port: u32) -> Result<usize> {
        self.ports
            .iter()
            .position(|&p| p == port)
            .ok_or(Error::MissingPort(port))
    }

    pub fn get(&self, f: usize, to: u32, from: u32) -> Result<Complex64> {
        Ok(self.s[f][self.index(to)?][self.index(from)?])
    }

    /// `|S_to,from|` in dB across the frequency grid.
    pub fn magnitude_db(&self, to: u32, from: u32) -> Result<Vec<f64>> {
        let (i, j) = (self.index(to)?, self.index(from)?);
        Ok(self.s.iter().map(|m| db(m[i][j].norm())).collect())
    }

    /// `max |S − Sᵀ|` over all frequencies.
    #[allow(clippy::needless_range_loop)]
    pub fn reciprocity_error(&self) -> f64 {
        let n = self.ports.len();
        let mut worst: f64 = 0.0;
        for m in &self.s {
            for i in 0..n {
                for j in 0..n {
                    worst = worst.max((m[i][j] - m[j][i]).norm());
                }
            }
        }
        worst
    }

    pub fn max_magnitude(&self) -> f64 {
        self.s.iter().flatten().flatten().map(|c| c.norm()).fold(0.0, f64::max)
    }

    /// Touchstone-style text: `! ` comments, `# GHZ S RI R <Z0>` option line,
    /// then one row per frequency with Re/Im of every entry, row-major.
    pub fn to_touchstone(&self, header: &str) -> String {
        let mut s = String::new();
        for l in header.lines() {
            let _ = writeln!(s, "! {l}");
        }
        let _ = writeln!(
            s,
            "! ports {}",
            self.ports.iter().map(|p| p.to_string()).collect::<Vec<_>>().join(" ")
        );
        let _ = writeln!(s, "# GHZ S RI R {}", self.reference_ohm);
        for (f, m) in self.frequencies_ghz.iter().zip(&self.s) {
            let _ = write!(s, "{f:.6}");
            for row in m {
                for c in row {
                    let _ = write!(s, " {:.9e} {:.9e}", c.re, c.im);
                }
            }
            s.push('\n');
        }
        s
    }

    /// CSV with one column pair (dB, degrees) per matrix entry.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("frequency_ghz");
        for &i in &self.ports {
            for &j in &self.ports {
                let _ = write!(s, ",S{i}_{j}_dB,S{i}_{j}_deg");
            }
        }
        s.push('\n');
        for (f, m) in self.frequencies_ghz.iter().zip(&self.s) {
            let _ = write!(s, "{f:.6}");
            for row in m {
                for c in row {
                    let _ = write!(s, ",{:.6},{:.6}", db(c.norm()), c.arg().to_degrees());
                }
            }
            s.push('\n');
        }
        s
    }
}

/// Evenly spaced frequency grid including both ends.
pub fn frequency_grid(lo_ghz: f64, hi_ghz: f64, step_ghz: f64) -> Vec<f64> {
    let n = ((hi_ghz - lo_ghz) / step_ghz + 1e-9).floor() as usize;
    (0..=n).map(|i| lo_ghz + i as f64 * step_ghz).collect()
}

/// Assemble the S-matrix from one run per driven port. The matrix spans the
/// driven ports; use [`transmission`] for a port that was only observed.
pub fn s_parameters(runs: &[RunResult], frequencies_ghz: &[f64]) -> Result<ScatteringMatrix> {
    let first = runs
        .first()
        .ok_or_else(|| Error::InconsistentRuns("no runs given".into()))?;
    for r in runs {
        if r.fingerprint != first.fingerprint || r.dt != first.dt || r.waveform != first.waveform {
            return Err(Error::InconsistentRuns(
                "runs differ in grid, time step or waveform".into(),
            ));
        }
        if r.driven_ports().len() != 1 || r.excitations.len() != 1 {
            return Err(Error::InconsistentRuns("each run must drive exactly one port".into()));
        }
    }
    for &f in frequencies_ghz {
        first.waveform.check_band(f)?;
    }
    let ports: Vec<u32> = first.ports.iter().map(|p| p.port_id).collect();
    let mut driven: Vec<u32> = runs.iter().map(|r| r.driven_ports()[0]).collect();
    driven.sort_unstable();
    if driven.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InconsistentRuns("a port is driven in two runs".into()));
    }
    let n = ports.len();
    let nan = Complex64::new(f64::NAN, f64::NAN);
    let mut s = vec![vec![vec![nan; n]; n]; frequencies_ghz.len()];
    for r in runs {
        let src_port = r.driven_ports()[0];
        let j = ports
            .iter()
            .position(|&p| p == src_port)
            .ok_or(Error::MissingPort(src_port))?;
        let src = r.port(src_port).ok_or(Error::MissingPort(src_port))?;
        for (fi, &f) in frequencies_ghz.iter().enumerate() {
            let fh = f * 1e9;
            let vs = src.source_dft(fh);
            if vs.norm() == 0.0 {
                return Err(Error::Validation("driven port has a zero source spectrum".into()));
            }
            // a = Vs / 2√Z0 at the driven port, b = (V − Z0 I) / 2√Z0
            for (i, rec) in r.ports.iter().enumerate() {
                let v = rec.voltage_dft(fh);
                let b = if i == j { 2.0 * v - vs } else { 2.0 * v };
                let z_ratio = (src.impedance / rec.impedance).sqrt();
                s[fi][i][j] = b / vs * z_ratio;
            }
        }
    }
    let columns: Vec<usize> = driven
        .iter()
        .map(|p| ports.iter().position(|q| q == p).unwrap())
        .collect();
    let ports_kept: Vec<u32> = columns.iter().map(|&c| ports[c]).collect();
    let s = s
        .into_iter()
        .map(|m| {
            columns
                .iter()
                .map(|&i| columns.iter().map(|&j| m[i][j]).collect())
                .collect()
        })
        .collect();
    let reference_ohm = first
        .port(first.driven_ports()[0])
        .map_or(crate::fdtd::PORT_IMPEDANCE, |p| p.impedance);
    let mut unconverged: Vec<u32> = runs
        .iter()
        .filter(|r| !r.converged)
        .map(|r| r.driven_ports()[0])
        .collect();
    unconverged.sort_unstable();
    Ok(ScatteringMatrix {
        frequencies_ghz: frequencies_ghz.to_vec(),
        ports: ports_kept,
        s,
        reference_ohm,
        unconverged,
    })
}

/// Frequency of minimum `|S_pp|` in `band`, refined by a parabola through
/// the minimum and its neighbours (in dB).
pub fn find_resonance(matrix: &ScatteringMatrix, port: u32, band: (f64, f64)) -> Result<f64> {
    let mags = matrix.magnitude_db(port, port)?;
    let f = &matrix.frequencies_ghz;
    let (lo, hi) = band;
    let flat = || Error::FlatSpectrum {
        port,
        lo_ghz: lo,
        hi_ghz: hi,
        threshold_db: RESONANCE_THRESHOLD_DB,
    };
    let inside: Vec<usize> = (0..f.len()).filter(|&i| f[i] >= lo && f[i] <= hi).collect();
    if inside.is_empty() {
        return Err(Error::Validation(format!(
            "band [{lo}, {hi}] GHz contains no frequency of the grid"
        )));
    }
    let best = *inside.iter().min_by(|&&a, &&b| mags[a].total_cmp(&mags[b])).unwrap();
    if !(mags[best] <= RESONANCE_THRESHOLD_DB) {
        return Err(flat());
    }
    // a minimum on the band edge must still be a local minimum of the grid
    let left = best.checked_sub(1);
    let right = (best + 1 < f.len()).then_some(best + 1);
    match (left, right) {
        (Some(l), Some(r)) => {
            if mags[l] < mags[best] || mags[r] < mags[best] {
                return Err(flat());
            }
            let (y0, y1, y2) = (mags[l], mags[best], mags[r]);
            let denom = y0 - 2.0 * y1 + y2;
            let h = f[best] - f[l];
            let shift = if denom > 0.0 { 0.5 * (y0 - y2) / denom } else { 0.0 };
            Ok(f[best] + shift.clamp(-0.5, 0.5) * h)
        }
        _ => Err(flat()),
    }
}

/// Options shared by the helpers that launch their own solver runs.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepOptions {
    pub run: RunOptions,
    /// frequency grid for resonance searches (GHz)
    pub band_ghz: (f64, f64),
    pub step_ghz: f64,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            run: RunOptions::default(),
            band_ghz: (40.0, 130.0),
            step_ghz: 0.5,
        }
    }
}

/// Single-port S11 spectrum of `port` in `scenario`.
pub fn reflection_spectrum(scenario: &Scenario, port: u32, opts: &SweepOptions) -> Result<ScatteringMatrix> {
    let grid = discretize(scenario)?;
    let freqs = frequency_grid(opts.band_ghz.0, opts.band_ghz.1, opts.step_ghz);
    for &f in &freqs {
        opts.run.waveform.check_band(f)?;
    }
    let run = run_with(&grid, &[Excitation::port(port)], opts.run.clone())?;
    s_parameters(&[run], &freqs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuningStep {
    pub length_mm: f64,
    pub resonance_ghz: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuningResult {
    pub length_mm: f64,
    pub resonance_ghz: f64,
    pub converged: bool,
    pub history: Vec<TuningStep>,
}

/// Golden-section search on `|f_res(L) − target|` over `bounds`, starting
/// with an evaluation at the scenario's current length. Stops once the
/// resonance is within `tolerance` (relative) of the target or after
/// `max_runs` solver runs.
pub fn tune_monopole_length(
    scenario: &Scenario,
    port: u32,
    target_ghz: f64,
    bounds_mm: (f64, f64),
    max_runs: usize,
    tolerance: f64,
    opts: &SweepOptions,
) -> Result<TuningResult> {
    let (a0, b0) = bounds_mm;
    if !(a0 > 0.0 && b0 > a0) || max_runs == 0 {
        return Err(Error::Validation("tuning bounds must satisfy 0 < lo < hi".into()));
    }
    let start = scenario.element(port).ok_or(Error::MissingPort(port))?.length_mm;
    let mut history: Vec<TuningStep> = Vec::new();
    let eval = |l: f64, history: &mut Vec<TuningStep>| -> Result<Option<f64>> {
        if let Some(h) = history.iter().find(|h| (h.length_mm - l).abs() < 1e-12) {
            return Ok(h.resonance_ghz);
        }
        let s = scenario.with_monopole_length(l)?;
        let m = reflection_spectrum(&s, port, opts)?;
        let f = match find_resonance(&m, port, opts.band_ghz) {
            Ok(f) => Some(f),
            Err(Error::FlatSpectrum { .. }) => None,
            Err(e) => return Err(e),
        };
        log::info!("tuning: L = {l:.4} mm -> {f:?} GHz");
        history.push(TuningStep {
            length_mm: l,
            resonance_ghz: f,
        });
        Ok(f)
    };
    let cost = |f: Option<f64>| f.map_or(f64::INFINITY, |f| (f - target_ghz).abs());
    let done = |f: Option<f64>| f.is_some_and(|f| (f - target_ghz).abs() <= tolerance * target_ghz);

    let f_start = eval(start, &mut history)?;
    if !done(f_start) {
        let g = (5f64.sqrt() - 1.0) / 2.0;
        let (mut a, mut b) = (a0, b0);
        let mut c = b - g * (b - a);
        let mut d = a + g * (b - a);
        let mut fc = if history.len() < max_runs {
            Some(eval(c, &mut history)?)
        } else {
            None
        };
        let mut fd = if history.len() < max_runs {
            Some(eval(d, &mut history)?)
        } else {
            None
        };
        while history.len() < max_runs {
            let (Some(vc), Some(vd)) = (fc, fd) else { break };
            if done(vc) || done(vd) {
                break;
            }
            if cost(vc) <= cost(vd) {
                b = d;
                d = c;
                fd = fc;
                c = b - g * (b - a);
                fc = Some(eval(c, &mut history)?);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + g * (b - a);
                fd = Some(eval(d, &mut history)?);
            }
        }
    }
    let best = history
        .iter()
        .filter(|h| h.resonance_ghz.is_some())
        .min_by(|x, y| cost(x.resonance_ghz).total_cmp(&cost(y.resonance_ghz)))
        .ok_or(Error::NoResonance)?;
    let f = best.resonance_ghz.unwrap();
    Ok(TuningResult {
        length_mm: best.length_mm,
        resonance_ghz: f,
        converged: done(Some(f)),
        history,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingRow {
    pub spacing_mm: f64,
    pub spacing_over_lambda: f64,
    /// `|S_ij|` at the scenario frequency, or the error that prevented it
    pub s21_db: std::result::Result<f64, String>,
    pub converged: bool,
}

/// Coupling between `pair` versus element spacing. The elements listed in
/// the template's first array are re-placed on a grid with each spacing
/// (keeping its origin); the lower port of the pair is driven.
pub fn coupling_sweep(
    template: &Scenario,
    spacings_mm: &[f64],
    pair: (u32, u32),
    opts: &RunOptions,
) -> Result<Vec<CouplingRow>> {
    if spacings_mm.is_empty() {
        return Err(Error::Validation("no spacings given".into()));
    }
    if spacings_mm.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::Validation("spacings must be positive".into()));
    }
    let (drive, sense) = if pair.0 <= pair.1 { pair } else { (pair.1, pair.0) };
    if template.element(drive).is_none() {
        return Err(Error::MissingPort(drive));
    }
    if template.element(sense).is_none() {
        return Err(Error::MissingPort(sense));
    }
    let f0 = template.frequency_ghz;
    opts.waveform.check_band(f0)?;
    let lambda = wavelength_in_medium(f0, template.antenna_layer().material.rel_permittivity)?;
    let rows = spacings_mm
        .par_iter()
        .map(|&sp| {
            let res = respaced(template, sp).and_then(|s| {
                let grid = discretize(&s)?;
                let run = run_with(&grid, &[Excitation::port(drive)], opts.clone())?;
                Ok((db(transmission(&run, drive, sense, f0)?.norm()), run.converged))
            });
            CouplingRow {
                spacing_mm: sp,
                spacing_over_lambda: sp / lambda,
                converged: res.as_ref().map_or(true, |r| r.1),
                s21_db: res.map(|r| r.0).map_err(|e| e.to_string()),
            }
        })
        .collect();
    Ok(rows)
}

/// Copy of `template` with its first array re-spaced to `spacing_mm`.
pub fn respaced(template: &Scenario, spacing_mm: f64) -> Result<Scenario> {
    let placed = template
        .arrays
        .first()
        .ok_or_else(|| Error::Validation("coupling template needs an array".into()))?;
    let mut layout = placed.layout.clone();
    layout.spacing_mm = spacing_mm;
    let mut s = template.remove_ports(&placed.layout.port_ids);
    let element = crate::scenario::MonopoleElement {
        port_id: 0,
        x_mm: 0.0,
        y_mm: 0.0,
        length_mm: placed.length_mm,
        radius_mm: placed.radius_mm,
    };
    s = crate::scenario::place_array(&s, &placed.name, &layout, &element)?;
    Ok(s)
}

/// Transmission `S_sense,drive` from a single run.
pub fn transmission(run: &RunResult, drive: u32, sense: u32, frequency_ghz: f64) -> Result<Complex64> {
    let fh = frequency_ghz * 1e9;
    run.waveform.check_band(frequency_ghz)?;
    let src = run.port(drive).ok_or(Error::MissingPort(drive))?;
    let rec = run.port(sense).ok_or(Error::MissingPort(sense))?;
    let vs = src.source_dft(fh);
    Ok(2.0 * rec.voltage_dft(fh) / vs * (src.impedance / rec.impedance).sqrt())
}

/// Reflection `S_pp` from a run driving `port`.
pub fn reflection(run: &RunResult, port: u32, frequency_ghz: f64) -> Result<Complex64> {
    let fh = frequency_ghz * 1e9;
    run.waveform.check_band(frequency_ghz)?;
    let rec = run.port(port).ok_or(Error::MissingPort(port))?;
    let vs = rec.source_dft(fh);
    Ok(2.0 * rec.voltage_dft(fh) / vs - 1.0)
}

/// CSV of a coupling table.
pub fn coupling_csv(rows: &[CouplingRow]) -> String {
    let mut s = String::from("spacing_mm,spacing_over_lambda,S21_dB\n");
    for r in rows {
        match &r.s21_db {
            Ok(v) => {
                let _ = writeln!(s, "{:.6},{:.6},{:.4}", r.spacing_mm, r.spacing_over_lambda, v);
            }
            Err(e) => {
                let _ = writeln!(
                    s,
                    "{:.6},{:.6},error: {}",
                    r.spacing_mm,
                    r.spacing_over_lambda,
                    e.replace(',', ";")
                );
            }
        }
    }
    s
}

/// The default waveform, checked against a frequency list.
pub fn waveform_for(freqs_ghz: &[f64]) -> Result<SourceWaveform> {
    let w = SourceWaveform::default();
    for &f in freqs_ghz {
        w.check_band(f)?;
    }
    Ok(w)
}
