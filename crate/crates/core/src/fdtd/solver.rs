//! Yee leapfrog time stepping with CPML, thin-wire monopoles and resistive
//! lumped ports.
//!
//! Time convention: `E` lives at integer steps `n·dt`, `H` at `(n+½)·dt`.
//! Sources are evaluated at `(n+½)·dt`, the time at which `E^n → E^{n+1}`
//! is centred, and port voltages/currents are recorded there as well.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;

use super::field::{ComplexFieldMap, EVector, PlaneGeometry};
use super::grid::{edge_material, Grid, PlaneSpec};
use super::waveform::{SourceWaveform, WaveformKind};
use crate::error::{Error, Result};
use crate::scenario::{EPS0, MU0};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    Ex,
    Ey,
    Ez,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExcitationTarget {
    /// Voltage source (EMF) in series with the port resistance.
    Port(u32),
    /// Hard-wired current element of one ampere per unit waveform on a
    /// single E edge; useful for scenes without ports.
    SoftEdge {
        component: Component,
        i: usize,
        j: usize,
        k: usize,
    },
}

/// One driven source. The source signal is `|weight| · w(t)` with the
/// carrier phase advanced by `arg(weight)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Excitation {
    pub target: ExcitationTarget,
    pub weight: Complex64,
}

impl Excitation {
    pub fn port(port_id: u32) -> Self {
        Excitation {
            target: ExcitationTarget::Port(port_id),
            weight: Complex64::new(1.0, 0.0),
        }
    }

    pub fn weighted(port_id: u32, weight: Complex64) -> Self {
        Excitation {
            target: ExcitationTarget::Port(port_id),
            weight,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Monitor {
    pub plane: PlaneSpec,
    pub frequencies_ghz: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub waveform: SourceWaveform,
    pub monitors: Vec<Monitor>,
    /// residual energy floor relative to the peak (dB)
    pub energy_floor_db: f64,
    pub max_steps: usize,
    pub check_interval: usize,
    /// continuous sources: total length and DFT window, in carrier periods
    pub cw_periods: f64,
    pub cw_dft_periods: f64,
    /// terminate undriven ports in their resistance; otherwise they are
    /// left open (plain dielectric gap)
    pub load_passive_ports: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            waveform: SourceWaveform::default(),
            monitors: Vec::new(),
            energy_floor_db: -40.0,
            max_steps: 40_000,
            check_interval: 10,
            cw_periods: 40.0,
            cw_dft_periods: 10.0,
            load_passive_ports: true,
        }
    }
}

/// Voltage/current history of one lumped port, sampled at `(n+½)·dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct PortRecord {
    pub port_id: u32,
    pub impedance: f64,
    pub dt: f64,
    /// gap voltage (V)
    pub voltage: Vec<f64>,
    /// current delivered into the structure (A)
    pub current: Vec<f64>,
    /// source EMF (V); all zero for passive ports
    pub source: Vec<f64>,
}

impl PortRecord {
    pub fn len(&self) -> usize {
        self.voltage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voltage.is_empty()
    }

    fn dft(series: &[f64], dt: f64, freq_hz: f64) -> Complex64 {
        let w = 2.0 * PI * freq_hz;
        let step = Complex64::from_polar(1.0, -w * dt);
        let mut ph = Complex64::from_polar(dt, -w * 0.5 * dt);
        let mut acc = Complex64::new(0.0, 0.0);
        for &v in series {
            acc += v * ph;
            ph *= step;
        }
        acc
    }

    pub fn voltage_dft(&self, freq_hz: f64) -> Complex64 {
        Self::dft(&self.voltage, self.dt, freq_hz)
    }

    pub fn current_dft(&self, freq_hz: f64) -> Complex64 {
        Self::dft(&self.current, self.dt, freq_hz)
    }

    pub fn source_dft(&self, freq_hz: f64) -> Complex64 {
        Self::dft(&self.source, self.dt, freq_hz)
    }
}

/// Raw DFT accumulators of one monitor plane.
#[derive(Debug, Clone, PartialEq)]
pub struct MonitorData {
    pub plane: PlaneSpec,
    pub geometry: PlaneGeometry,
    pub frequencies_ghz: Vec<f64>,
    /// per frequency: accumulated cell-centred E
    pub accumulators: Vec<Vec<EVector>>,
    /// per frequency: DFT of the unit reference waveform over the same window
    pub source_dft: Vec<Complex64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub fingerprint: String,
    pub dt: f64,
    pub steps: usize,
    pub converged: bool,
    pub peak_energy: f64,
    pub final_energy: f64,
    pub waveform: SourceWaveform,
    pub excitations: Vec<Excitation>,
    pub ports: Vec<PortRecord>,
    pub monitors: Vec<MonitorData>,
}

impl RunResult {
    pub fn port(&self, port_id: u32) -> Option<&PortRecord> {
        self.ports.iter().find(|p| p.port_id == port_id)
    }

    /// Ports driven in this run.
    pub fn driven_ports(&self) -> Vec<u32> {
        self.excitations
            .iter()
            .filter_map(|e| match e.target {
                ExcitationTarget::Port(p) => Some(p),
                _ => None,
            })
            .collect()
    }
}

/// Per-unit-excitation phasor field on `plane` at `frequency_ghz`.
pub fn extract_phasor_field(result: &RunResult, frequency_ghz: f64, plane: &PlaneSpec) -> Result<ComplexFieldMap> {
    let tol = 1e-9 * frequency_ghz.abs().max(1.0);
    for m in result.monitors.iter().filter(|m| m.plane == *plane) {
        if let Some(n) = m.frequencies_ghz.iter().position(|f| (f - frequency_ghz).abs() <= tol) {
            let src = m.source_dft[n];
            let mut map = ComplexFieldMap::zeros(m.frequencies_ghz[n], m.geometry);
            if src.norm() > 0.0 {
                let inv = 1.0 / src;
                for (o, a) in map.data.iter_mut().zip(&m.accumulators[n]) {
                    for c in 0..3 {
                        o[c] = a[c] * inv;
                    }
                }
            }
            return Ok(map);
        }
    }
    Err(Error::NotMonitored(frequency_ghz))
}

/// Drive a single port with unit weight.
pub fn run(grid: &Grid, excited_port: u32, waveform: SourceWaveform, monitors: Vec<Monitor>) -> Result<RunResult> {
    run_with(
        grid,
        &[Excitation::port(excited_port)],
        RunOptions {
            waveform,
            monitors,
            ..Default::default()
        },
    )
}

pub fn run_with(grid: &Grid, excitations: &[Excitation], opts: RunOptions) -> Result<RunResult> {
    opts.waveform.validate()?;
    for e in excitations {
        match e.target {
            ExcitationTarget::Port(p) => {
                if grid.port(p).is_none() {
                    return Err(Error::MissingPort(p));
                }
            }
            ExcitationTarget::SoftEdge { i, j, k, .. } => {
                if i >= grid.nx || j >= grid.ny || k >= grid.nz || i == 0 || j == 0 {
                    return Err(Error::Validation(format!(
                        "soft source at ({i}, {j}, {k}) outside grid interior"
                    )));
                }
            }
        }
    }
    for m in &opts.monitors {
        grid.validate_plane(&m.plane)?;
        for &f in &m.frequencies_ghz {
            if !(f > 0.0) {
                return Err(Error::Validation(format!("monitor frequency {f} GHz")));
            }
        }
    }
    if opts.check_interval == 0 || opts.max_steps == 0 {
        return Err(Error::Validation("step limits must be positive".into()));
    }
    let mut sim = Sim::new(grid, excitations, &opts);
    sim.march()?;
    Ok(sim.finish(grid, excitations, &opts))
}

struct PortState {
    n: usize,
    rs: f64,
    /// coefficient of E_old, of curl H, of the source voltage
    c_old: f64,
    c_curl: f64,
    c_src: f64,
    eps: f64,
    /// thin-wire factors of the wire standing on this gap
    wire: (f64, f64),
    driven: Option<Complex64>,
    rec: PortRecord,
}

struct SoftSource {
    comp: Component,
    n: usize,
    weight: Complex64,
}

/// CPML profile along one axis.
struct PmlAxis {
    /// E nodes at integer positions, H at half positions
    be: Vec<f64>,
    ce: Vec<f64>,
    bh: Vec<f64>,
    ch: Vec<f64>,
    /// ranges (in node index) where E / H terms are active
    e_ranges: Vec<(usize, usize)>,
    h_ranges: Vec<(usize, usize)>,
}

impl PmlAxis {
    fn new(n: usize, lo: usize, hi: usize, d: f64, dt: f64, eps_ref: f64, f_hz: f64) -> Option<Self> {
        if lo == 0 && hi == 0 {
            return None;
        }
        let m = 3.0;
        let eta0 = (MU0 / EPS0).sqrt();
        let sigma_max = 0.8 * (m + 1.0) / (eta0 * d * eps_ref.sqrt());
        let alpha_max = 2.0 * PI * EPS0 * f_hz * 0.5;
        let depth = |x: f64| -> Option<f64> {
            if lo > 0 && x < lo as f64 {
                Some((lo as f64 - x) / lo as f64)
            } else if hi > 0 && x > (n - hi) as f64 {
                Some((x - (n - hi) as f64) / hi as f64)
            } else {
                None
            }
        };
        let coeff = |x: f64| -> (f64, f64) {
            match depth(x) {
                Some(r) => {
                    let r = r.min(1.0);
                    let s = sigma_max * r.powf(m);
                    let a = alpha_max * (1.0 - r);
                    let b = (-(s + a) * dt / EPS0).exp();
                    let c = if s + a > 0.0 { s / (s + a) * (b - 1.0) } else { 0.0 };
                    (b, c)
                }
                None => (1.0, 0.0),
            }
        };
        let mut be = vec![1.0; n + 1];
        let mut ce = vec![0.0; n + 1];
        let mut bh = vec![1.0; n + 1];
        let mut ch = vec![0.0; n + 1];
        for i in 0..=n {
            (be[i], ce[i]) = coeff(i as f64);
            (bh[i], ch[i]) = coeff(i as f64 + 0.5);
        }
        let mut e_ranges = Vec::new();
        let mut h_ranges = Vec::new();
        if lo > 0 {
            e_ranges.push((1, lo));
            h_ranges.push((0, lo));
        }
        if hi > 0 {
            e_ranges.push((n - hi + 1, n));
            h_ranges.push((n - hi, n));
        }
        Some(PmlAxis {
            be,
            ce,
            bh,
            ch,
            e_ranges,
            h_ranges,
        })
    }
}

/// Auxiliary CPML convolution fields, full-size for each axis that has PML.
struct PmlPsi {
    x: Option<(PmlAxis, [Vec<f64>; 4])>, // eyx, ezx, hyx, hzx
    y: Option<(PmlAxis, [Vec<f64>; 4])>, // ezy, exy, hzy, hxy
    z: Option<(PmlAxis, [Vec<f64>; 4])>, // exz, eyz, hxz, hyz
}

/// Thin-wire correction data: the four H components circulating the wire at
/// each level, with the extra fraction of the Ez coupling they receive.
struct ThinWire {
    i: usize,
    j: usize,
    k_top: usize,
    fx: f64,
    fy: f64,
}

struct Sim {
    nx: usize,
    ny: usize,
    nz: usize,
    sj: usize,
    si: usize,
    dt: f64,
    rdx: f64,
    rdy: f64,
    rdz: f64,
    dv: f64,
    ex: Vec<f64>,
    ey: Vec<f64>,
    ez: Vec<f64>,
    hx: Vec<f64>,
    hy: Vec<f64>,
    hz: Vec<f64>,
    ca: [Vec<f64>; 3],
    cb: [Vec<f64>; 3],
    chm: f64,
    pml: PmlPsi,
    wires: Vec<ThinWire>,
    ports: Vec<PortState>,
    soft: Vec<SoftSource>,
    waveform: SourceWaveform,
    monitors: Vec<MonitorState>,
    steps: usize,
    converged: bool,
    peak_energy: f64,
    final_energy: f64,
    max_steps: usize,
    check_interval: usize,
    floor: f64,
    dft_from: usize,
    total_steps_cw: Option<usize>,
}

struct MonitorState {
    plane: PlaneSpec,
    freqs_hz: Vec<f64>,
    acc: Vec<Vec<EVector>>,
    src: Vec<Complex64>,
}

impl Sim {
    fn new(grid: &Grid, excitations: &[Excitation], opts: &RunOptions) -> Sim {
        let (nx, ny, nz) = (grid.nx, grid.ny, grid.nz);
        let sj = nz + 1;
        let si = (ny + 1) * sj;
        let total = (nx + 1) * si;
        let dt = grid.dt;
        let idx = |i: usize, j: usize, k: usize| i * si + j * sj + k;

        let mut ca = [vec![0.0; total], vec![0.0; total], vec![0.0; total]];
        let mut cb = [vec![0.0; total], vec![0.0; total], vec![0.0; total]];
        let coef = |eps: f64, sig: f64| {
            let g = sig * dt / (2.0 * eps);
            ((1.0 - g) / (1.0 + g), (dt / eps) / (1.0 + g))
        };
        for i in 0..=nx {
            for j in 0..=ny {
                for k in 0..=nz {
                    let n = idx(i, j, k);
                    let (ii, jj, kk) = (i as isize, j as isize, k as isize);
                    if i < nx && j > 0 && j < ny && k > 0 && k < nz {
                        let (e, s) = edge_material(
                            grid,
                            &[(ii, jj - 1, kk - 1), (ii, jj, kk - 1), (ii, jj - 1, kk), (ii, jj, kk)],
                        );
                        (ca[0][n], cb[0][n]) = coef(e, s);
                    }
                    if j < ny && i > 0 && i < nx && k > 0 && k < nz {
                        let (e, s) = edge_material(
                            grid,
                            &[(ii - 1, jj, kk - 1), (ii, jj, kk - 1), (ii - 1, jj, kk), (ii, jj, kk)],
                        );
                        (ca[1][n], cb[1][n]) = coef(e, s);
                    }
                    if k < nz && i > 0 && i < nx && j > 0 && j < ny {
                        let (e, s) = edge_material(
                            grid,
                            &[(ii - 1, jj - 1, kk), (ii, jj - 1, kk), (ii - 1, jj, kk), (ii, jj, kk)],
                        );
                        (ca[2][n], cb[2][n]) = coef(e, s);
                    }
                }
            }
        }

        let mut wires = Vec::new();
        for w in &grid.wires {
            for k in 0..w.k_top {
                let n = idx(w.i, w.j, k);
                ca[2][n] = 0.0;
                cb[2][n] = 0.0;
            }
            if !w.thin {
                continue;
            }
            wires.push(ThinWire {
                i: w.i,
                j: w.j,
                k_top: w.k_top,
                fx: 2.0 / (grid.dx / w.radius_m).ln() - 1.0,
                fy: 2.0 / (grid.dy / w.radius_m).ln() - 1.0,
            });
        }

        let mut ports = Vec::new();
        for p in &grid.ports {
            let n = idx(p.i, p.j, p.k);
            let (ii, jj, kk) = (p.i as isize, p.j as isize, p.k as isize);
            let (eps, sig) = edge_material(
                grid,
                &[(ii - 1, jj - 1, kk), (ii, jj - 1, kk), (ii - 1, jj, kk), (ii, jj, kk)],
            );
            let driven = excitations
                .iter()
                .filter(|e| e.target == ExcitationTarget::Port(p.port_id))
                .map(|e| e.weight)
                .reduce(|a, b| a + b);
            let loaded = driven.is_some() || opts.load_passive_ports;
            // an open gap keeps the full cell permittivity for stability
            let eps = if loaded { eps * p.gap_eps_scale } else { eps };
            let gamma = sig * dt / (2.0 * eps);
            let beta = if loaded {
                dt * grid.dz / (2.0 * p.impedance * eps * grid.dx * grid.dy)
            } else {
                0.0
            };
            let denom = 1.0 + gamma + beta;
            ca[2][n] = 0.0;
            cb[2][n] = 0.0;
            ports.push(PortState {
                n,
                rs: if loaded { p.impedance } else { f64::INFINITY },
                c_old: (1.0 - gamma - beta) / denom,
                c_curl: (dt / eps) / denom,
                c_src: if loaded {
                    dt / (eps * p.impedance * grid.dx * grid.dy) / denom
                } else {
                    0.0
                },
                eps,
                wire: wires
                    .iter()
                    .find(|w| w.i == p.i && w.j == p.j)
                    .map_or((0.0, 0.0), |w| (w.fx, w.fy)),
                driven,
                rec: PortRecord {
                    port_id: p.port_id,
                    impedance: p.impedance,
                    dt,
                    voltage: Vec::new(),
                    current: Vec::new(),
                    source: Vec::new(),
                },
            });
        }

        let soft = excitations
            .iter()
            .filter_map(|e| match e.target {
                ExcitationTarget::SoftEdge { component, i, j, k } => Some(SoftSource {
                    comp: component,
                    n: idx(i, j, k),
                    weight: e.weight,
                }),
                _ => None,
            })
            .collect();

        let eps_ref = grid.materials.iter().map(|m| m.rel_permittivity).fold(1.0, f64::max);
        let f_hz = grid.frequency_hz;
        let psi = || [vec![0.0; total], vec![0.0; total], vec![0.0; total], vec![0.0; total]];
        let pml = PmlPsi {
            x: PmlAxis::new(nx, grid.pml[0], grid.pml[1], grid.dx, dt, eps_ref, f_hz).map(|a| (a, psi())),
            y: PmlAxis::new(ny, grid.pml[2], grid.pml[3], grid.dy, dt, eps_ref, f_hz).map(|a| (a, psi())),
            z: PmlAxis::new(nz, grid.pml[4], grid.pml[5], grid.dz, dt, eps_ref, f_hz).map(|a| (a, psi())),
        };

        let monitors = opts
            .monitors
            .iter()
            .map(|m| MonitorState {
                plane: m.plane,
                freqs_hz: m.frequencies_ghz.iter().map(|f| f * 1e9).collect(),
                acc: vec![vec![[Complex64::new(0.0, 0.0); 3]; m.plane.ni * m.plane.nj]; m.frequencies_ghz.len()],
                src: vec![Complex64::new(0.0, 0.0); m.frequencies_ghz.len()],
            })
            .collect();

        let (dft_from, total_steps_cw) = match opts.waveform.kind {
            WaveformKind::ContinuousSine => {
                let period = 1.0 / (opts.waveform.center_frequency_ghz * 1e9);
                let total = ((opts.cw_periods * period + opts.waveform.delay_s) / dt).ceil() as usize;
                let window = (opts.cw_dft_periods * period / dt).round() as usize;
                (total.saturating_sub(window), Some(total))
            }
            WaveformKind::GaussianModulatedSine => (0, None),
        };

        Sim {
            nx,
            ny,
            nz,
            sj,
            si,
            dt,
            rdx: 1.0 / grid.dx,
            rdy: 1.0 / grid.dy,
            rdz: 1.0 / grid.dz,
            dv: grid.dx * grid.dy * grid.dz,
            ex: vec![0.0; total],
            ey: vec![0.0; total],
            ez: vec![0.0; total],
            hx: vec![0.0; total],
            hy: vec![0.0; total],
            hz: vec![0.0; total],
            ca,
            cb,
            chm: dt / MU0,
            pml,
            wires,
            ports,
            soft,
            waveform: opts.waveform,
            monitors,
            steps: 0,
            converged: false,
            peak_energy: 0.0,
            final_energy: 0.0,
            max_steps: opts.max_steps,
            check_interval: opts.check_interval,
            floor: 10f64.powf(opts.energy_floor_db / 10.0),
            dft_from,
            total_steps_cw,
        }
    }

    fn march(&mut self) -> Result<()> {
        let extinction = self.waveform.extinction_time();
        let limit = self.total_steps_cw.map_or(self.max_steps, |t| t.min(self.max_steps));
        let mut h_prev: Vec<Vec<f64>> = Vec::new();
        let mut peak_before_ext = 0.0f64;
        let mut n = 0;
        while n < limit {
            let check = n % self.check_interval == 0;
            if check {
                h_prev = vec![self.hx.clone(), self.hy.clone(), self.hz.clone()];
            }
            self.update_h();
            self.pml_h();
            self.thin_wire();
            let t_half = (n as f64 + 0.5) * self.dt;
            if check {
                let (w, w_pos) = self.energy(&h_prev);
                let extinct = extinction.is_some_and(|te| t_half > te);
                if !w.is_finite() || !w_pos.is_finite() {
                    return Err(Error::Divergence {
                        step: n,
                        reason: "non-finite field energy".into(),
                    });
                }
                if !extinct {
                    peak_before_ext = peak_before_ext.max(w_pos);
                } else if peak_before_ext > 0.0 && w_pos > 10.0 * peak_before_ext {
                    return Err(Error::Divergence {
                        step: n,
                        reason: format!("energy grew to {:.3e} after the source ended", w_pos / peak_before_ext),
                    });
                }
                self.peak_energy = self.peak_energy.max(w);
                self.final_energy = w;
                if extinct && w_pos <= peak_before_ext * self.floor && w <= self.peak_energy * self.floor {
                    self.converged = true;
                    self.steps = n;
                    break;
                }
            }
            let port_old: Vec<f64> = self.ports.iter().map(|p| self.ez[p.n]).collect();
            self.update_e();
            self.pml_e();
            self.thin_wire_e();
            self.update_ports(&port_old, t_half);
            self.apply_soft(t_half);
            if n + 1 > self.dft_from {
                self.sample_monitors(n, t_half);
            }
            n += 1;
            self.steps = n;
        }
        if self.total_steps_cw.is_some() {
            // continuous runs end by design once the DFT window is complete
            self.converged = n >= limit && self.total_steps_cw.is_some_and(|t| t <= self.max_steps);
        } else if !self.converged {
            log::warn!(
                "run stopped at max_steps = {} with residual energy {:.1} dB of peak",
                self.max_steps,
                10.0 * (self.final_energy / self.peak_energy.max(f64::MIN_POSITIVE)).log10()
            );
        }
        Ok(())
    }

    fn update_h(&mut self) {
        let (nx, ny, nz, sj, si) = (self.nx, self.ny, self.nz, self.sj, self.si);
        let (rdx, rdy, rdz, c) = (self.rdx, self.rdy, self.rdz, self.chm);
        let (ex, ey, ez) = (&self.ex, &self.ey, &self.ez);
        self.hx.par_chunks_mut(si).enumerate().for_each(|(i, hx)| {
            if i == 0 || i >= nx {
                return;
            }
            let b = i * si;
            for j in 0..ny {
                let r = j * sj;
                let ez0 = &ez[b + r..b + r + nz];
                let ez1 = &ez[b + r + sj..b + r + sj + nz];
                let ey0 = &ey[b + r..b + r + nz];
                let ey1 = &ey[b + r + 1..b + r + 1 + nz];
                let h = &mut hx[r..r + nz];
                for k in 0..nz {
                    h[k] -= c * ((ez1[k] - ez0[k]) * rdy - (ey1[k] - ey0[k]) * rdz);
                }
            }
        });
        self.hy.par_chunks_mut(si).enumerate().for_each(|(i, hy)| {
            if i >= nx {
                return;
            }
            let b = i * si;
            for j in 1..ny {
                let r = j * sj;
                let ex0 = &ex[b + r..b + r + nz];
                let ex1 = &ex[b + r + 1..b + r + 1 + nz];
                let ez0 = &ez[b + r..b + r + nz];
                let ez1 = &ez[b + si + r..b + si + r + nz];
                let h = &mut hy[r..r + nz];
                for k in 0..nz {
                    h[k] -= c * ((ex1[k] - ex0[k]) * rdz - (ez1[k] - ez0[k]) * rdx);
                }
            }
        });
        self.hz.par_chunks_mut(si).enumerate().for_each(|(i, hz)| {
            if i >= nx {
                return;
            }
            let b = i * si;
            for j in 0..ny {
                let r = j * sj;
                let ey0 = &ey[b + r + 1..b + r + nz];
                let ey1 = &ey[b + si + r + 1..b + si + r + nz];
                let ex0 = &ex[b + r + 1..b + r + nz];
                let ex1 = &ex[b + r + sj + 1..b + r + sj + nz];
                let h = &mut hz[r + 1..r + nz];
                for k in 0..nz - 1 {
                    h[k] -= c * ((ey1[k] - ey0[k]) * rdx - (ex1[k] - ex0[k]) * rdy);
                }
            }
        });
    }

    fn update_e(&mut self) {
        let (nx, ny, nz, sj, si) = (self.nx, self.ny, self.nz, self.sj, self.si);
        let (rdx, rdy, rdz) = (self.rdx, self.rdy, self.rdz);
        let (hx, hy, hz) = (&self.hx, &self.hy, &self.hz);
        let [ca_x, ca_y, ca_z] = &self.ca;
        let [cb_x, cb_y, cb_z] = &self.cb;
        self.ex.par_chunks_mut(si).enumerate().for_each(|(i, ex)| {
            if i >= nx {
                return;
            }
            let b = i * si;
            for j in 1..ny {
                let r = j * sj;
                let o = b + r + 1;
                let len = nz - 1;
                let hz0 = &hz[o - sj..o - sj + len];
                let hz1 = &hz[o..o + len];
                let hy0 = &hy[o - 1..o - 1 + len];
                let hy1 = &hy[o..o + len];
                let ca = &ca_x[o..o + len];
                let cb = &cb_x[o..o + len];
                let e = &mut ex[r + 1..r + 1 + len];
                for k in 0..len {
                    e[k] = ca[k] * e[k] + cb[k] * ((hz1[k] - hz0[k]) * rdy - (hy1[k] - hy0[k]) * rdz);
                }
            }
        });
        self.ey.par_chunks_mut(si).enumerate().for_each(|(i, ey)| {
            if i == 0 || i >= nx {
                return;
            }
            let b = i * si;
            for j in 0..ny {
                let r = j * sj;
                let o = b + r + 1;
                let len = nz - 1;
                let hx0 = &hx[o - 1..o - 1 + len];
                let hx1 = &hx[o..o + len];
                let hz0 = &hz[o - si..o - si + len];
                let hz1 = &hz[o..o + len];
                let ca = &ca_y[o..o + len];
                let cb = &cb_y[o..o + len];
                let e = &mut ey[r + 1..r + 1 + len];
                for k in 0..len {
                    e[k] = ca[k] * e[k] + cb[k] * ((hx1[k] - hx0[k]) * rdz - (hz1[k] - hz0[k]) * rdx);
                }
            }
        });
        self.ez.par_chunks_mut(si).enumerate().for_each(|(i, ez)| {
            if i == 0 || i >= nx {
                return;
            }
            let b = i * si;
            for j in 1..ny {
                let r = j * sj;
                let o = b + r;
                let len = nz;
                let hy0 = &hy[o - si..o - si + len];
                let hy1 = &hy[o..o + len];
                let hx0 = &hx[o - sj..o - sj + len];
                let hx1 = &hx[o..o + len];
                let ca = &ca_z[o..o + len];
                let cb = &cb_z[o..o + len];
                let e = &mut ez[r..r + len];
                for k in 0..len {
                    e[k] = ca[k] * e[k] + cb[k] * ((hy1[k] - hy0[k]) * rdx - (hx1[k] - hx0[k]) * rdy);
                }
            }
        });
    }

    fn pml_h(&mut self) {
        let (nx, ny, nz, sj, si) = (self.nx, self.ny, self.nz, self.sj, self.si);
        let c = self.chm;
        if let Some((ax, [_, _, hyx, hzx])) = &mut self.pml.x {
            for &(a, b) in &ax.h_ranges {
                for i in a..b {
                    let (bh, ch) = (ax.bh[i], ax.ch[i] * self.rdx);
                    for j in 0..=ny {
                        for k in 0..=nz {
                            let n = i * si + j * sj + k;
                            if j >= 1 && j < ny && k < nz {
                                hyx[n] = bh * hyx[n] + ch * (self.ez[n + si] - self.ez[n]);
                                self.hy[n] += c * hyx[n];
                            }
                            if j < ny && k >= 1 && k < nz {
                                hzx[n] = bh * hzx[n] + ch * (self.ey[n + si] - self.ey[n]);
                                self.hz[n] -= c * hzx[n];
                            }
                        }
                    }
                }
            }
        }
        if let Some((ay, [_, _, hzy, hxy])) = &mut self.pml.y {
            for i in 0..=nx {
                for &(a, b) in &ay.h_ranges {
                    for j in a..b {
                        let (bh, ch) = (ay.bh[j], ay.ch[j] * self.rdy);
                        for k in 0..=nz {
                            let n = i * si + j * sj + k;
                            if i < nx && k >= 1 && k < nz {
                                hzy[n] = bh * hzy[n] + ch * (self.ex[n + sj] - self.ex[n]);
                                self.hz[n] += c * hzy[n];
                            }
                            if i >= 1 && i < nx && k < nz {
                                hxy[n] = bh * hxy[n] + ch * (self.ez[n + sj] - self.ez[n]);
                                self.hx[n] -= c * hxy[n];
                            }
                        }
                    }
                }
            }
        }
        if let Some((az, [_, _, hxz, hyz])) = &mut self.pml.z {
            for i in 0..=nx {
                for j in 0..=ny {
                    for &(a, b) in &az.h_ranges {
                        for k in a..b {
                            let (bh, ch) = (az.bh[k], az.ch[k] * self.rdz);
                            let n = i * si + j * sj + k;
                            if i >= 1 && i < nx && j < ny {
                                hxz[n] = bh * hxz[n] + ch * (self.ey[n + 1] - self.ey[n]);
                                self.hx[n] += c * hxz[n];
                            }
                            if i < nx && j >= 1 && j < ny {
                                hyz[n] = bh * hyz[n] + ch * (self.ex[n + 1] - self.ex[n]);
                                self.hy[n] -= c * hyz[n];
                            }
                        }
                    }
                }
            }
        }
    }

    fn pml_e(&mut self) {
        let (nx, ny, nz, sj, si) = (self.nx, self.ny, self.nz, self.sj, self.si);
        let [cbx, cby, cbz] = &self.cb;
        if let Some((ax, [eyx, ezx, _, _])) = &mut self.pml.x {
            for &(a, b) in &ax.e_ranges {
                for i in a..b {
                    let (be, ce) = (ax.be[i], ax.ce[i] * self.rdx);
                    for j in 0..=ny {
                        for k in 0..=nz {
                            let n = i * si + j * sj + k;
                            if j < ny && k >= 1 && k < nz {
                                eyx[n] = be * eyx[n] + ce * (self.hz[n] - self.hz[n - si]);
                                self.ey[n] -= cby[n] * eyx[n];
                            }
                            if j >= 1 && j < ny && k < nz {
                                ezx[n] = be * ezx[n] + ce * (self.hy[n] - self.hy[n - si]);
                                self.ez[n] += cbz[n] * ezx[n];
                            }
                        }
                    }
                }
            }
        }
        if let Some((ay, [ezy, exy, _, _])) = &mut self.pml.y {
            for i in 0..=nx {
                for &(a, b) in &ay.e_ranges {
                    for j in a..b {
                        let (be, ce) = (ay.be[j], ay.ce[j] * self.rdy);
                        for k in 0..=nz {
                            let n = i * si + j * sj + k;
                            if i >= 1 && i < nx && k < nz {
                                ezy[n] = be * ezy[n] + ce * (self.hx[n] - self.hx[n - sj]);
                                self.ez[n] -= cbz[n] * ezy[n];
                            }
                            if i < nx && k >= 1 && k < nz {
                                exy[n] = be * exy[n] + ce * (self.hz[n] - self.hz[n - sj]);
                                self.ex[n] += cbx[n] * exy[n];
                            }
                        }
                    }
                }
            }
        }
        if let Some((az, [exz, eyz, _, _])) = &mut self.pml.z {
            for i in 0..=nx {
                for j in 0..=ny {
                    for &(a, b) in &az.e_ranges {
                        for k in a..b {
                            let (be, ce) = (az.be[k], az.ce[k] * self.rdz);
                            let n = i * si + j * sj + k;
                            if i < nx && j >= 1 && j < ny {
                                exz[n] = be * exz[n] + ce * (self.hy[n] - self.hy[n - 1]);
                                self.ex[n] -= cbx[n] * exz[n];
                            }
                            if i >= 1 && i < nx && j < ny {
                                eyz[n] = be * eyz[n] + ce * (self.hx[n] - self.hx[n - 1]);
                                self.ey[n] += cby[n] * eyz[n];
                            }
                        }
                    }
                }
            }
        }
    }

    /// Log-profile correction of the magnetic field circulating each wire.
    fn thin_wire(&mut self) {
        let (sj, si) = (self.sj, self.si);
        let c = self.chm;
        for w in &self.wires {
            for k in 0..w.k_top {
                let n = w.i * si + w.j * sj + k;
                let gx = c * w.fx * self.rdx;
                let gy = c * w.fy * self.rdy;
                self.hy[n] += gx * (self.ez[n + si] - self.ez[n]);
                self.hy[n - si] += gx * (self.ez[n] - self.ez[n - si]);
                self.hx[n] -= gy * (self.ez[n + sj] - self.ez[n]);
                self.hx[n - sj] -= gy * (self.ez[n] - self.ez[n - sj]);
            }
        }
    }

    /// Transpose of the wire correction on the neighbouring Ez edges, so the
    /// discrete operator stays symmetric (reciprocal, energy-conserving).
    fn thin_wire_e(&mut self) {
        let (sj, si) = (self.sj, self.si);
        let cb = &self.cb[2];
        for w in &self.wires {
            for k in 0..w.k_top {
                let n = w.i * si + w.j * sj + k;
                let (gx, gy) = (w.fx * self.rdx, w.fy * self.rdy);
                self.ez[n + si] -= cb[n + si] * gx * self.hy[n];
                self.ez[n - si] += cb[n - si] * gx * self.hy[n - si];
                self.ez[n + sj] += cb[n + sj] * gy * self.hx[n];
                self.ez[n - sj] -= cb[n - sj] * gy * self.hx[n - sj];
            }
        }
    }

    fn update_ports(&mut self, old: &[f64], t_half: f64) {
        let dz = 1.0 / self.rdz;
        for (p, &e_old) in (0..self.ports.len()).zip(old) {
            let (n, (fx, fy)) = (self.ports[p].n, self.ports[p].wire);
            let (sj, si) = (self.sj, self.si);
            let curl = (1.0 + fx) * (self.hy[n] - self.hy[n - si]) * self.rdx
                - (1.0 + fy) * (self.hx[n] - self.hx[n - sj]) * self.rdy;
            let port = &mut self.ports[p];
            let vs = port
                .driven
                .map_or(0.0, |w| w.norm() * self.waveform.value(t_half, w.arg()));
            let e_new = port.c_old * e_old + port.c_curl * curl + port.c_src * vs;
            self.ez[port.n] = e_new;
            let v = 0.5 * (e_old + e_new) * dz;
            let i = if port.rs.is_finite() { (vs - v) / port.rs } else { 0.0 };
            port.rec.voltage.push(v);
            port.rec.current.push(i);
            port.rec.source.push(vs);
        }
    }

    fn apply_soft(&mut self, t_half: f64) {
        let area = [self.rdy * self.rdz, self.rdx * self.rdz, self.rdx * self.rdy];
        for s in &self.soft {
            let current = s.weight.norm() * self.waveform.value(t_half, s.weight.arg());
            let (field, c) = match s.comp {
                Component::Ex => (&mut self.ex, 0),
                Component::Ey => (&mut self.ey, 1),
                Component::Ez => (&mut self.ez, 2),
            };
            field[s.n] -= self.cb[c][s.n] * current * area[c];
        }
    }

    fn sample_monitors(&mut self, n: usize, t_half: f64) {
        let t = (n + 1) as f64 * self.dt;
        let (sj, si) = (self.sj, self.si);
        let unit = self.waveform.value(t_half, 0.0);
        for m in &mut self.monitors {
            let ph: Vec<Complex64> = m
                .freqs_hz
                .iter()
                .map(|f| Complex64::from_polar(self.dt, -2.0 * PI * f * t))
                .collect();
            for (s, f) in m.src.iter_mut().zip(&m.freqs_hz) {
                *s += unit * Complex64::from_polar(self.dt, -2.0 * PI * f * t_half);
            }
            let p = m.plane;
            let k = p.k;
            for b in 0..p.nj {
                for a in 0..p.ni {
                    let (i, j) = (p.i0 + a, p.j0 + b);
                    let c = i * si + j * sj + k;
                    let exv = 0.5 * (self.ex[c] + self.ex[c + sj]);
                    let eyv = 0.5 * (self.ey[c] + self.ey[c + si]);
                    let ezv = 0.125
                        * (self.ez[c]
                            + self.ez[c + si]
                            + self.ez[c + sj]
                            + self.ez[c + si + sj]
                            + self.ez[c - 1]
                            + self.ez[c + si - 1]
                            + self.ez[c + sj - 1]
                            + self.ez[c + si + sj - 1]);
                    if exv == 0.0 && eyv == 0.0 && ezv == 0.0 {
                        continue;
                    }
                    let cell = b * p.ni + a;
                    for (acc, w) in m.acc.iter_mut().zip(&ph) {
                        let v = &mut acc[cell];
                        v[0] += exv * w;
                        v[1] += eyv * w;
                        v[2] += ezv * w;
                    }
                }
            }
        }
    }

    /// Discrete energy `½ΣεE² + ½μΣH^{n-½}·H^{n+½}` (J), with E at step n.
    /// (conserved staggered energy, positive-definite bound)
    fn energy(&self, h_prev: &[Vec<f64>]) -> (f64, f64) {
        let dt = self.dt;
        let mut we = 0.0;
        for (c, e) in [&self.ex, &self.ey, &self.ez].into_iter().enumerate() {
            let ca = &self.ca[c];
            let cb = &self.cb[c];
            we += e
                .par_iter()
                .zip(ca.par_iter().zip(cb.par_iter()))
                .map(|(&v, (&a, &b))| {
                    if b > 0.0 {
                        dt * (1.0 + a) / (2.0 * b) * v * v
                    } else {
                        0.0
                    }
                })
                .sum::<f64>();
        }
        for p in &self.ports {
            we += p.eps * self.ez[p.n] * self.ez[p.n];
        }
        let mut wh = 0.0;
        let mut wh2 = 0.0;
        for (h, hp) in [&self.hx, &self.hy, &self.hz].into_iter().zip(h_prev) {
            let (a, b) = h
                .par_iter()
                .zip(hp.par_iter())
                .map(|(a, b)| (a * b, a * a))
                .reduce(|| (0.0, 0.0), |x, y| (x.0 + y.0, x.1 + y.1));
            wh += a;
            wh2 += b;
        }
        // the staggered product is the conserved quantity but is not positive
        // definite; the squared form catches grid-scale instabilities it hides
        (0.5 * (we + MU0 * wh) * self.dv, 0.5 * (we + MU0 * wh2) * self.dv)
    }

    fn finish(self, grid: &Grid, excitations: &[Excitation], opts: &RunOptions) -> RunResult {
        let monitors = self
            .monitors
            .into_iter()
            .map(|m| {
                let p = m.plane;
                let geometry = PlaneGeometry {
                    x0_mm: grid.node_x_mm(p.i0) + 0.5 * grid.dx * 1e3,
                    y0_mm: grid.node_y_mm(p.j0) + 0.5 * grid.dy * 1e3,
                    dx_mm: grid.dx * 1e3,
                    dy_mm: grid.dy * 1e3,
                    z_mm: p.k as f64 * grid.dz * 1e3,
                    nx: p.ni,
                    ny: p.nj,
                };
                MonitorData {
                    plane: p,
                    geometry,
                    frequencies_ghz: m.freqs_hz.iter().map(|f| f / 1e9).collect(),
                    accumulators: m.acc,
                    source_dft: m.src,
                }
            })
            .collect();
        RunResult {
            fingerprint: grid.fingerprint.clone(),
            dt: self.dt,
            steps: self.steps,
            converged: self.converged,
            peak_energy: self.peak_energy,
            final_energy: self.final_energy,
            waveform: opts.waveform,
            excitations: excitations.to_vec(),
            ports: self.ports.into_iter().map(|p| p.rec).collect(),
            monitors,
        }
    }
}
