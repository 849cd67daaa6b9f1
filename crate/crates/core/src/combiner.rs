//! Phase profiles, cached per-port field libraries and their superposition.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fdtd::{
    discretize, extract_phasor_field, run_with, ComplexFieldMap, Excitation, Grid, Monitor, PlaneSpec, RunOptions,
};
use crate::scenario::{wavelength_in_medium, ArrayLayout, Scenario};

/// Default phase granularity (degrees).
pub const DEFAULT_PHASE_STEP: f64 = 30.0;

/// Wrap a phase to (−180°, 180°].
pub fn normalize_phase_deg(p: f64) -> f64 {
    let mut r = p.rem_euclid(360.0);
    if r > 180.0 {
        r -= 360.0;
    }
    // snap values that differ from a whole millidegree only by float noise
    let grid = (r * 1e3).round() / 1e3;
    let snapped = if (r - grid).abs() < 1e-10 { grid } else { r };
    if snapped <= -180.0 {
        180.0
    } else {
        snapped
    }
}

/// Per-port excitation weight: amplitude and phase (degrees).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PortWeight {
    pub amplitude: f64,
    pub phase_deg: f64,
}

impl PortWeight {
    pub fn complex(&self) -> Complex64 {
        Complex64::from_polar(self.amplitude, self.phase_deg.to_radians())
    }
}

/// Ordered map port id → complex weight.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PhaseProfile {
    weights: BTreeMap<u32, PortWeight>,
}

impl PhaseProfile {
    pub fn new() -> Self {
        Self::default()
    }

    /// Set a port's weight; the phase is normalised.
    pub fn set(&mut self, port: u32, amplitude: f64, phase_deg: f64) {
        self.weights.insert(
            port,
            PortWeight {
                amplitude,
                phase_deg: normalize_phase_deg(phase_deg),
            },
        );
    }

    pub fn with(mut self, port: u32, amplitude: f64, phase_deg: f64) -> Self {
        self.set(port, amplitude, phase_deg);
        self
    }

    /// Unit-amplitude profile from (port, phase) pairs.
    pub fn from_phases(phases: impl IntoIterator<Item = (u32, f64)>) -> Self {
        let mut p = Self::new();
        for (port, ph) in phases {
            p.set(port, 1.0, ph);
        }
        p
    }

    /// Profile from complex weights; a negative-free amplitude/phase split.
    pub fn from_complex(weights: impl IntoIterator<Item = (u32, Complex64)>) -> Self {
        let mut p = Self::new();
        for (port, w) in weights {
            let (a, ph) = w.to_polar();
            p.set(port, a, if a == 0.0 { 0.0 } else { ph.to_degrees() });
        }
        p
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn ports(&self) -> Vec<u32> {
        self.weights.keys().copied().collect()
    }

    pub fn get(&self, port: u32) -> Option<PortWeight> {
        self.weights.get(&port).copied()
    }

    pub fn phase_deg(&self, port: u32) -> Option<f64> {
        self.get(port).map(|w| w.phase_deg)
    }

    pub fn weight(&self, port: u32) -> Complex64 {
        self.get(port).map_or(Complex64::new(0.0, 0.0), |w| w.complex())
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, PortWeight)> + '_ {
        self.weights.iter().map(|(&p, &w)| (p, w))
    }

    pub fn complex_weights(&self) -> Vec<(u32, Complex64)> {
        self.iter().map(|(p, w)| (p, w.complex())).collect()
    }

    pub fn is_zero(&self) -> bool {
        self.weights.values().all(|w| w.amplitude == 0.0)
    }

    /// Every weight multiplied by `e^{jθ}`.
    pub fn rotated(&self, theta_deg: f64) -> Self {
        let mut p = self.clone();
        for w in p.weights.values_mut() {
            w.phase_deg = normalize_phase_deg(w.phase_deg + theta_deg);
        }
        p
    }

    /// `a·self + b·other` as complex weights.
    pub fn linear_combination(&self, a: Complex64, other: &PhaseProfile, b: Complex64) -> Self {
        let mut acc: BTreeMap<u32, Complex64> = BTreeMap::new();
        for (p, w) in self.complex_weights() {
            *acc.entry(p).or_default() += a * w;
        }
        for (p, w) in other.complex_weights() {
            *acc.entry(p).or_default() += b * w;
        }
        Self::from_complex(acc)
    }

    /// Union of two profiles on disjoint ports.
    pub fn merged(&self, other: &PhaseProfile) -> Result<Self> {
        let mut p = self.clone();
        for (port, w) in other.iter() {
            if p.weights.insert(port, w).is_some() {
                return Err(Error::Validation(format!("port {port} appears in both profiles")));
            }
        }
        Ok(p)
    }

    /// Carry weights from the ports of `from` to the ports at the same
    /// element index in `to`.
    pub fn remapped(&self, from: &ArrayLayout, to: &ArrayLayout) -> Result<Self> {
        if from.len() != to.len() {
            return Err(Error::DimensionMismatch(format!(
                "cannot map a {}-element profile onto {} elements",
                from.len(),
                to.len()
            )));
        }
        let mut p = Self::new();
        for (port, w) in self.iter() {
            let n = from.index_of(port).ok_or(Error::MissingPort(port))?;
            p.weights.insert(to.port_ids[n], w);
        }
        Ok(p)
    }

    /// Ports must exist in `scenario` and at least one weight must be
    /// nonzero.
    pub fn validate_for(&self, scenario: &Scenario) -> Result<()> {
        for p in self.weights.keys() {
            if scenario.element(*p).is_none() {
                return Err(Error::MissingPort(*p));
            }
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        for (p, w) in &self.weights {
            if !w.amplitude.is_finite() || w.amplitude < 0.0 || !w.phase_deg.is_finite() {
                return Err(Error::Validation(format!("port {p}: invalid weight {w:?}")));
            }
        }
        if self.is_zero() {
            return Err(Error::Validation("profile has no nonzero weight".into()));
        }
        Ok(())
    }

    /// Text format: one `port amplitude phase_deg` line per port; `#`
    /// starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut p = Self::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            let bad = || Error::Parse(format!("line {}: expected 'port amplitude phase', got '{raw}'", n + 1));
            if f.len() != 3 {
                return Err(bad());
            }
            let port: u32 = f[0].parse().map_err(|_| bad())?;
            let amp: f64 = f[1].parse().map_err(|_| bad())?;
            let ph: f64 = f[2].parse().map_err(|_| bad())?;
            if !amp.is_finite() || amp < 0.0 || !ph.is_finite() {
                return Err(bad());
            }
            if p.weights.contains_key(&port) {
                return Err(Error::Parse(format!("line {}: port {port} listed twice", n + 1)));
            }
            p.set(port, amp, ph);
        }
        Ok(p)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# port amplitude phase_deg\n");
        for (p, w) in self.iter() {
            let _ = writeln!(s, "{p} {} {}", w.amplitude, w.phase_deg);
        }
        s
    }

    /// Short single-line description used as provenance.
    pub fn summary(&self) -> String {
        self.iter()
            .map(|(p, w)| {
                if w.amplitude == 1.0 {
                    format!("{p}:{}", w.phase_deg)
                } else {
                    format!("{p}:{}@{}", w.amplitude, w.phase_deg)
                }
            })
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Per-unit-excitation field of every port at one frequency, tied to the
/// scenario fingerprint that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldLibrary {
    pub fingerprint: String,
    pub frequency_ghz: f64,
    /// ports whose solve stopped at the step limit
    pub unconverged: Vec<u32>,
    maps: BTreeMap<u32, ComplexFieldMap>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    fingerprint: String,
    frequency_ghz: f64,
    ports: Vec<u32>,
    #[serde(default)]
    unconverged: Vec<u32>,
}

impl FieldLibrary {
    pub fn new(fingerprint: &str, frequency_ghz: f64) -> Self {
        FieldLibrary {
            fingerprint: fingerprint.to_string(),
            frequency_ghz,
            unconverged: Vec::new(),
            maps: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, port: u32, map: ComplexFieldMap) -> Result<()> {
        map.validate()?;
        if let Some(first) = self.maps.values().next() {
            first.check_compatible(&map)?;
        } else if (map.frequency_ghz - self.frequency_ghz).abs() > 1e-9 * self.frequency_ghz {
            return Err(Error::DimensionMismatch(format!(
                "map at {} GHz in a {} GHz library",
                map.frequency_ghz, self.frequency_ghz
            )));
        }
        self.maps.insert(port, map);
        Ok(())
    }

    pub fn ports(&self) -> Vec<u32> {
        self.maps.keys().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    pub fn get(&self, port: u32) -> Result<&ComplexFieldMap> {
        self.maps.get(&port).ok_or(Error::MissingPort(port))
    }

    pub fn contains(&self, port: u32) -> bool {
        self.maps.contains_key(&port)
    }

    pub fn verify(&self, fingerprint: &str) -> Result<()> {
        if self.fingerprint != fingerprint {
            return Err(Error::FingerprintMismatch {
                library: self.fingerprint.clone(),
                expected: fingerprint.to_string(),
            });
        }
        Ok(())
    }

    /// Sub-library restricted to `ports`.
    pub fn subset(&self, ports: &[u32]) -> Result<Self> {
        let mut lib = FieldLibrary::new(&self.fingerprint, self.frequency_ghz);
        for &p in ports {
            lib.maps.insert(p, self.get(p)?.clone());
        }
        lib.unconverged = self.unconverged.iter().copied().filter(|p| ports.contains(p)).collect();
        Ok(lib)
    }

    /// Write `manifest.json` plus one binary map per port into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for (p, m) in &self.maps {
            let mut buf = Vec::new();
            m.write_binary(&mut buf)?;
            fs::write(dir.join(format!("port{p}.cwfm")), buf)?;
        }
        let manifest = Manifest {
            fingerprint: self.fingerprint.clone(),
            frequency_ghz: self.frequency_ghz,
            ports: self.ports(),
            unconverged: self.unconverged.clone(),
        };
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
        let mut lib = FieldLibrary::new(&manifest.fingerprint, manifest.frequency_ghz);
        lib.unconverged = manifest.unconverged;
        for p in manifest.ports {
            let bytes = fs::read(dir.join(format!("port{p}.cwfm")))?;
            lib.insert(p, ComplexFieldMap::read_binary(&bytes[..])?)?;
        }
        Ok(lib)
    }
}

/// Identity of a library: scenario, waveform, observation plane and the
/// passive-port treatment all change the stored fields.
pub fn library_fingerprint(grid: &Grid, opts: &RunOptions, plane: &PlaneSpec) -> String {
    let mut h = Sha256::new();
    h.update(grid.fingerprint.as_bytes());
    h.update(
        format!(
            "r{}|{:?}|{:?}|{}|{}",
            crate::fdtd::SOLVER_REVISION,
            opts.waveform,
            plane,
            opts.load_passive_ports,
            opts.energy_floor_db
        )
        .as_bytes(),
    );
    h.finalize().iter().take(12).map(|b| format!("{b:02x}")).collect()
}

/// One solver run per port (in parallel), each monitored on `plane` (the
/// mid-antenna-layer plane by default) at every frequency. Returns one
/// library per frequency.
pub fn build_field_libraries(
    scenario: &Scenario,
    ports: &[u32],
    frequencies_ghz: &[f64],
    opts: &RunOptions,
    plane: Option<PlaneSpec>,
) -> Result<Vec<FieldLibrary>> {
    if ports.is_empty() || frequencies_ghz.is_empty() {
        return Err(Error::Validation("need at least one port and one frequency".into()));
    }
    for &p in ports {
        if scenario.element(p).is_none() {
            return Err(Error::MissingPort(p));
        }
    }
    for &f in frequencies_ghz {
        opts.waveform.check_band(f)?;
    }
    let grid = discretize(scenario)?;
    let plane = plane.unwrap_or_else(|| grid.default_plane());
    grid.validate_plane(&plane)?;
    let fingerprint = library_fingerprint(&grid, opts, &plane);
    let mut run_opts = opts.clone();
    run_opts.monitors = vec![Monitor {
        plane,
        frequencies_ghz: frequencies_ghz.to_vec(),
    }];
    let per_port: Vec<(bool, Vec<ComplexFieldMap>)> = ports
        .par_iter()
        .map(|&p| {
            log::info!("solving port {p}");
            let r = run_with(&grid, &[Excitation::port(p)], run_opts.clone())?;
            if !r.converged {
                log::warn!("port {p}: stopped after {} steps above the energy floor", r.steps);
            }
            let maps = frequencies_ghz
                .iter()
                .map(|&f| {
                    let mut m = extract_phasor_field(&r, f, &plane)?;
                    m.label = format!("port {p}");
                    Ok(m)
                })
                .collect::<Result<_>>()?;
            Ok((r.converged, maps))
        })
        .collect::<Result<_>>()?;
    let mut libs: Vec<FieldLibrary> = frequencies_ghz
        .iter()
        .map(|&f| FieldLibrary::new(&fingerprint, f))
        .collect();
    for (&p, (converged, maps)) in ports.iter().zip(per_port) {
        for (lib, m) in libs.iter_mut().zip(maps) {
            lib.insert(p, m)?;
            if !converged {
                lib.unconverged.push(p);
            }
        }
    }
    Ok(libs)
}

/// Like [`build_field_libraries`], reusing `cache_dir/<fingerprint>/<freq>`
/// when it already holds every requested port; only missing ports are solved.
pub fn cached_field_libraries(
    scenario: &Scenario,
    ports: &[u32],
    frequencies_ghz: &[f64],
    opts: &RunOptions,
    cache_dir: &Path,
) -> Result<Vec<FieldLibrary>> {
    let grid = discretize(scenario)?;
    let plane = grid.default_plane();
    let fingerprint = library_fingerprint(&grid, opts, &plane);
    let dir_for = |f: f64| cache_dir.join(&fingerprint).join(format!("{f:.6}ghz"));
    let cached: Vec<Option<FieldLibrary>> = frequencies_ghz
        .iter()
        .map(|&f| {
            FieldLibrary::load(&dir_for(f))
                .ok()
                .filter(|l| l.fingerprint == fingerprint)
        })
        .collect();
    let missing: Vec<u32> = ports
        .iter()
        .copied()
        .filter(|&p| cached.iter().any(|c| c.as_ref().is_none_or(|l| !l.contains(p))))
        .collect();
    if missing.is_empty() {
        log::info!("field libraries loaded from cache {fingerprint}");
        return cached.into_iter().map(|c| c.unwrap().subset(ports)).collect();
    }
    let fresh = build_field_libraries(scenario, &missing, frequencies_ghz, opts, Some(plane))?;
    let mut out = Vec::new();
    for ((&f, old), new) in frequencies_ghz.iter().zip(cached).zip(fresh) {
        let mut lib = old.unwrap_or_else(|| FieldLibrary::new(&fingerprint, f));
        for p in new.ports() {
            lib.maps.insert(p, new.get(p)?.clone());
        }
        lib.unconverged.retain(|p| !new.contains(*p));
        lib.unconverged.extend(&new.unconverged);
        lib.unconverged.sort_unstable();
        lib.save(&dir_for(f))?;
        out.push(lib.subset(ports)?);
    }
    Ok(out)
}

/// `Σ_k w_k · E_k` over the profile's ports.
pub fn combine(library: &FieldLibrary, profile: &PhaseProfile) -> Result<ComplexFieldMap> {
    let first = library
        .maps
        .values()
        .next()
        .ok_or_else(|| Error::Validation("empty field library".into()))?;
    let mut out = ComplexFieldMap::zeros(first.frequency_ghz, first.plane);
    for (port, w) in profile.iter() {
        let map = library.get(port)?;
        out.add_scaled(w.complex(), map);
    }
    out.label = profile.summary();
    Ok(out)
}

/// `phase(i, j) = base + j·step_col + i·step_row` on unit amplitudes.
pub fn linear_phase_profile(layout: &ArrayLayout, step_col: f64, step_row: f64, base: f64) -> PhaseProfile {
    PhaseProfile::from_phases(layout.port_ids.iter().enumerate().map(|(n, &p)| {
        let (i, j) = layout.row_col(n);
        (p, base + j as f64 * step_col + i as f64 * step_row)
    }))
}

fn wavenumber_per_mm(frequency_ghz: f64, medium_permittivity: f64) -> Result<f64> {
    Ok(2.0 * PI / wavelength_in_medium(frequency_ghz, medium_permittivity)?)
}

/// In-plane array factor `Σ w_n exp(j k (x_n cos φ + y_n sin φ))`.
pub fn array_factor(
    layout: &ArrayLayout,
    profile: &PhaseProfile,
    azimuth_deg: f64,
    medium_permittivity: f64,
    frequency_ghz: f64,
) -> Result<Complex64> {
    let k = wavenumber_per_mm(frequency_ghz, medium_permittivity)?;
    let (s, c) = azimuth_deg.to_radians().sin_cos();
    let mut af = Complex64::new(0.0, 0.0);
    for (n, &p) in layout.port_ids.iter().enumerate() {
        let [x, y] = layout.position(n);
        af += profile.weight(p) * Complex64::from_polar(1.0, k * (x * c + y * s));
    }
    Ok(af)
}

/// Round `phase` to the nearest multiple of `step`.
pub fn quantize_phase(phase_deg: f64, step_deg: f64) -> f64 {
    normalize_phase_deg((phase_deg / step_deg).round() * step_deg)
}

/// Conjugate-phase steering towards `target_azimuth_deg`, relative to the
/// layout origin, quantised to `step_deg`.
pub fn suggest_profile_for_direction(
    layout: &ArrayLayout,
    target_azimuth_deg: f64,
    medium_permittivity: f64,
    frequency_ghz: f64,
    step_deg: f64,
) -> Result<PhaseProfile> {
    if !(step_deg > 0.0) {
        return Err(Error::Validation("phase step must be positive".into()));
    }
    let k = wavenumber_per_mm(frequency_ghz, medium_permittivity)?;
    let (s, c) = target_azimuth_deg.to_radians().sin_cos();
    let [x0, y0] = layout.origin_mm;
    Ok(PhaseProfile::from_phases(layout.port_ids.iter().enumerate().map(
        |(n, &p)| {
            let [x, y] = layout.position(n);
            let ph = -(k * ((x - x0) * c + (y - y0) * s)).to_degrees();
            (p, quantize_phase(ph, step_deg))
        },
    )))
}
