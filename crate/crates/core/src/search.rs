//! Phase-profile search on a discrete phase lattice, scored on cached field
//! libraries only.
//!
//! Candidates are vectors of lattice indices, one per layout element;
//! index `k` means phase `k·step`. Every evaluated candidate is traced.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::combiner::{combine, normalize_phase_deg, FieldLibrary, PhaseProfile, DEFAULT_PHASE_STEP};
use crate::error::{Error, Result};
use crate::fdtd::{vector_norm_sqr, ComplexFieldMap};
use crate::metrics::{region_stats, sir_map, Region};
use crate::scenario::ArrayLayout;

/// Per-element lattices up to this size are enumerated exhaustively
/// instead of descended.
pub const EXHAUSTIVE_LIMIT: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    GradientLattice,
    CoordinateDescent,
    RandomRestart,
}

impl std::str::FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gradient_lattice" | "gradient-lattice" => Ok(Strategy::GradientLattice),
            "coordinate_descent" | "coordinate-descent" => Ok(Strategy::CoordinateDescent),
            "random_restart" | "random-restart" => Ok(Strategy::RandomRestart),
            _ => Err(Error::Parse(format!("unknown strategy '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    Concentration,
    MinRegionSir,
}

impl std::str::FromStr for ObjectiveKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "concentration" => Ok(ObjectiveKind::Concentration),
            "min_region_sir" | "min-region-sir" | "sir" => Ok(ObjectiveKind::MinRegionSir),
            _ => Err(Error::Parse(format!("unknown objective '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub phase_step_deg: f64,
    pub strategy: Strategy,
    /// maximum objective evaluations
    pub budget: usize,
    pub seed: u64,
    pub objective: ObjectiveKind,
    /// random restarts after the first descent (`RandomRestart` only)
    pub restarts: usize,
    /// medium permittivity for the steering seeds of `optimize_pair`
    pub seed_permittivity: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            phase_step_deg: DEFAULT_PHASE_STEP,
            strategy: Strategy::CoordinateDescent,
            budget: 20_000,
            seed: 0,
            objective: ObjectiveKind::Concentration,
            restarts: 8,
            seed_permittivity: 11.9,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        let n = 360.0 / self.phase_step_deg;
        if !(self.phase_step_deg > 0.0 && self.phase_step_deg <= 360.0) || (n - n.round()).abs() > 1e-9 {
            return Err(Error::Validation(format!(
                "phase step {}° does not divide 360°",
                self.phase_step_deg
            )));
        }
        if self.budget < 1 {
            return Err(Error::Validation("search budget must be at least 1".into()));
        }
        if !(self.seed_permittivity >= 1.0) {
            return Err(Error::Validation("seed permittivity must be ≥ 1".into()));
        }
        Ok(())
    }

    pub fn lattice_size(&self) -> usize {
        (360.0 / self.phase_step_deg).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub iteration: usize,
    pub stage: String,
    pub profile: PhaseProfile,
    pub parameters: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub profile: PhaseProfile,
    pub score: f64,
    pub trace: Vec<TraceEntry>,
    pub budget_exhausted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairResult {
    pub profile_a: PhaseProfile,
    pub profile_b: PhaseProfile,
    pub score: f64,
    pub trace: Vec<TraceEntry>,
    pub budget_exhausted: bool,
}

/// Short stable id of a profile.
pub fn profile_id(p: &PhaseProfile) -> String {
    let h = Sha256::digest(p.to_text().as_bytes());
    h.iter().take(6).map(|b| format!("{b:02x}")).collect()
}

pub fn trace_csv(trace: &[TraceEntry]) -> String {
    let mut s = String::from("iteration,profile_id,stage,parameters,score\n");
    for t in trace {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            t.iteration,
            profile_id(&t.profile),
            t.stage,
            t.parameters,
            t.score
        );
    }
    s
}

/// Share of `|E|²` falling inside `region`.
pub fn objective_concentration(field: &ComplexFieldMap, region: &Region) -> Result<f64> {
    let total = field.norm_sqr_total();
    if total == 0.0 {
        return Err(Error::ZeroField);
    }
    let inside: f64 = region
        .cells(&field.plane)
        .into_iter()
        .map(|n| vector_norm_sqr(&field.data[n]))
        .sum();
    Ok(inside / total)
}

/// Minimum SIR (dB) of `desired` against `interference` inside `region`,
/// clamped to the ceiling.
pub fn min_region_sir(desired: &ComplexFieldMap, interference: &ComplexFieldMap, region: &Region) -> Result<f64> {
    let map = sir_map(desired, interference)?;
    let st = region_stats(&map, region)?;
    Ok(st.min_db.clamp(-map.ceiling_db, map.ceiling_db))
}

/// Lattice search driver shared by all entry points.
struct Engine<'a, F> {
    layout: &'a ArrayLayout,
    amplitudes: Vec<f64>,
    n: usize,
    step: f64,
    /// pin element 0 to phase 0 (objective ignores a global phase)
    fixed_first: bool,
    eval: F,
    budget: usize,
    used: usize,
    exhausted: bool,
    stage_prefix: String,
    trace: Vec<TraceEntry>,
}

impl<'a, F> Engine<'a, F>
where
    F: Fn(&PhaseProfile) -> Result<f64> + Sync,
{
    fn profile(&self, idx: &[usize]) -> PhaseProfile {
        let mut p = PhaseProfile::new();
        for (pos, &port) in self.layout.port_ids.iter().enumerate() {
            p.set(
                port,
                self.amplitudes[pos],
                normalize_phase_deg(idx[pos] as f64 * self.step),
            );
        }
        p
    }

    fn indices_of(&self, profile: &PhaseProfile) -> Vec<usize> {
        let mut idx: Vec<usize> = self
            .layout
            .port_ids
            .iter()
            .map(|&p| {
                let ph = profile.phase_deg(p).unwrap_or(0.0);
                ((ph / self.step).round() as i64).rem_euclid(self.n as i64) as usize
            })
            .collect();
        if self.fixed_first && !idx.is_empty() {
            let shift = idx[0];
            for k in &mut idx {
                *k = (*k + self.n - shift) % self.n;
            }
        }
        idx
    }

    /// Score candidates in order (parallel), trace them, and return the
    /// position of the first strictly best one that beats `incumbent`.
    fn batch(
        &mut self,
        stage: &str,
        cands: Vec<(Vec<usize>, String)>,
        incumbent: f64,
    ) -> Result<Option<(Vec<usize>, f64)>> {
        let room = self.budget - self.used;
        let mut cands = cands;
        if cands.len() > room {
            cands.truncate(room);
            self.exhausted = true;
        }
        let profiles: Vec<PhaseProfile> = cands.iter().map(|(c, _)| self.profile(c)).collect();
        let scores: Vec<Result<f64>> = profiles.par_iter().map(|p| (self.eval)(p)).collect();
        let mut best: Option<(usize, f64)> = None;
        let mut bar = incumbent;
        for (n, ((_, params), (profile, score))) in cands.iter().zip(profiles.into_iter().zip(scores)).enumerate() {
            let score = score?;
            self.used += 1;
            self.trace.push(TraceEntry {
                iteration: self.trace.len(),
                stage: format!("{}{stage}", self.stage_prefix),
                profile,
                parameters: params.clone(),
                score,
            });
            if score > bar {
                bar = score;
                best = Some((n, score));
            }
        }
        Ok(best.map(|(n, s)| (cands.swap_remove(n).0, s)))
    }

    fn full(&self) -> bool {
        self.used >= self.budget
    }

    fn port_params(&self, idx: &[usize]) -> String {
        self.layout
            .port_ids
            .iter()
            .zip(idx)
            .map(|(p, &k)| format!("p{p}={}", normalize_phase_deg(k as f64 * self.step)))
            .collect::<Vec<_>>()
            .join(";")
    }

    fn gradient_candidates(&self) -> Vec<(Vec<usize>, String)> {
        let bases = if self.fixed_first { 1 } else { self.n };
        let mut out = Vec::with_capacity(bases * self.n * self.n);
        for b in 0..bases {
            for sc in 0..self.n {
                for sr in 0..self.n {
                    let idx = (0..self.layout.len())
                        .map(|pos| {
                            let (i, j) = self.layout.row_col(pos);
                            (b + j * sc + i * sr) % self.n
                        })
                        .collect();
                    let params = format!(
                        "base={};col={};row={}",
                        normalize_phase_deg(b as f64 * self.step),
                        normalize_phase_deg(sc as f64 * self.step),
                        normalize_phase_deg(sr as f64 * self.step)
                    );
                    out.push((idx, params));
                }
            }
        }
        out
    }

    fn free_elements(&self) -> usize {
        self.layout.len() - usize::from(self.fixed_first && !self.layout.is_empty())
    }

    fn exhaustive_size(&self) -> Option<usize> {
        let mut total: usize = 1;
        for _ in 0..self.free_elements() {
            total = total.checked_mul(self.n)?;
        }
        (total <= EXHAUSTIVE_LIMIT).then_some(total)
    }

    fn exhaustive(&mut self, incumbent: Option<(Vec<usize>, f64)>) -> Result<Option<(Vec<usize>, f64)>> {
        let total = self.exhaustive_size().unwrap_or(0);
        let first = usize::from(self.fixed_first);
        let len = self.layout.len();
        let mut cands = Vec::with_capacity(total);
        for mut code in 0..total {
            let mut idx = vec![0; len];
            // first element varies slowest: lexicographic order
            for pos in (first..len).rev() {
                idx[pos] = code % self.n;
                code /= self.n;
            }
            let params = self.port_params(&idx);
            cands.push((idx, params));
        }
        let bar = incumbent.as_ref().map_or(f64::NEG_INFINITY, |b| b.1);
        Ok(self.batch("exhaustive", cands, bar)?.or(incumbent))
    }

    /// Port-by-port refinement; each accepted move strictly improves.
    fn descend(&mut self, start: (Vec<usize>, f64), stage: &str) -> Result<(Vec<usize>, f64)> {
        let (mut x, mut s) = start;
        let first = usize::from(self.fixed_first);
        loop {
            let mut improved = false;
            for pos in first..x.len() {
                if self.full() {
                    return Ok((x, s));
                }
                let cands: Vec<_> = (0..self.n)
                    .filter(|&k| k != x[pos])
                    .map(|k| {
                        let mut c = x.clone();
                        c[pos] = k;
                        let params = self.port_params(&c);
                        (c, params)
                    })
                    .collect();
                if let Some((c, cs)) = self.batch(stage, cands, s)? {
                    x = c;
                    s = cs;
                    improved = true;
                }
            }
            if !improved {
                return Ok((x, s));
            }
        }
    }

    fn run(
        &mut self,
        strategy: Strategy,
        seed: u64,
        restarts: usize,
        start: Option<&PhaseProfile>,
    ) -> Result<(Vec<usize>, f64)> {
        let mut best: Option<(Vec<usize>, f64)> = None;
        if let Some(p) = start {
            let idx = self.indices_of(p);
            let params = self.port_params(&idx);
            best = self.batch("start", vec![(idx, params)], f64::NEG_INFINITY)?;
        }
        let small = strategy != Strategy::GradientLattice && self.exhaustive_size().is_some();
        if small {
            best = self.exhaustive(best)?;
        } else {
            if !self.full() {
                let bar = best.as_ref().map_or(f64::NEG_INFINITY, |b| b.1);
                let cands = self.gradient_candidates();
                if let Some(b) = self.batch("lattice", cands, bar)? {
                    best = Some(b);
                }
            }
            if strategy != Strategy::GradientLattice {
                if let Some(b) = best.take() {
                    best = Some(self.descend(b, "descent")?);
                }
            }
            if strategy == Strategy::RandomRestart {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let first = usize::from(self.fixed_first);
                for r in 0..restarts {
                    if self.full() {
                        break;
                    }
                    let mut idx = vec![0; self.layout.len()];
                    for k in idx.iter_mut().skip(first) {
                        *k = rng.gen_range(0..self.n);
                    }
                    let params = self.port_params(&idx);
                    let Some(s0) = self.batch(&format!("restart{r}"), vec![(idx, params)], f64::NEG_INFINITY)? else {
                        continue;
                    };
                    let local = self.descend(s0, &format!("restart{r}"))?;
                    if best.as_ref().is_none_or(|b| local.1 > b.1) {
                        best = Some(local);
                    }
                }
            }
        }
        best.ok_or_else(|| Error::Validation("search produced no scored candidate".into()))
    }
}

fn check_layout(library: &FieldLibrary, layout: &ArrayLayout) -> Result<()> {
    if layout.is_empty() {
        return Err(Error::Validation("layout has no elements".into()));
    }
    for &p in &layout.port_ids {
        library.get(p)?;
    }
    Ok(())
}

/// Lattice search of unit-amplitude profiles on `layout` under an arbitrary
/// objective. With `phase_invariant` the first element is pinned to 0°.
pub fn optimize_with<F>(
    layout: &ArrayLayout,
    config: &SearchConfig,
    phase_invariant: bool,
    objective: F,
) -> Result<SearchResult>
where
    F: Fn(&PhaseProfile) -> Result<f64> + Sync,
{
    config.validate()?;
    let mut e = Engine {
        layout,
        amplitudes: vec![1.0; layout.len()],
        n: config.lattice_size(),
        step: config.phase_step_deg,
        fixed_first: phase_invariant,
        eval: objective,
        budget: config.budget,
        used: 0,
        exhausted: false,
        stage_prefix: String::new(),
        trace: Vec::new(),
    };
    let (idx, score) = e.run(config.strategy, config.seed, config.restarts, None)?;
    Ok(SearchResult {
        profile: e.profile(&idx),
        score,
        budget_exhausted: e.exhausted,
        trace: e.trace,
    })
}

/// Best unit-amplitude profile for concentrating `|E|²` in `region`.
pub fn optimize_profile(
    library: &FieldLibrary,
    layout: &ArrayLayout,
    config: &SearchConfig,
    region: &Region,
) -> Result<SearchResult> {
    config.validate()?;
    check_layout(library, layout)?;
    region.validate()?;
    if region.cells(&library.get(layout.port_ids[0])?.plane).is_empty() {
        return Err(Error::EmptyRegion);
    }
    if config.objective != ObjectiveKind::Concentration {
        return Err(Error::Validation(
            "single-array search supports the concentration objective; use the pair search for SIR".into(),
        ));
    }
    optimize_with(layout, config, true, |p| {
        objective_concentration(&combine(library, p)?, region)
    })
}

/// Score of a two-channel assignment: the smaller of the two channels'
/// minimum in-region SIR. A channel whose profile is all zero carries no
/// signal and is left out.
pub fn pair_score(
    fields: (&ComplexFieldMap, &ComplexFieldMap),
    active: (bool, bool),
    regions: (&Region, &Region),
) -> Result<f64> {
    let mut score = f64::INFINITY;
    if active.0 {
        score = score.min(min_region_sir(fields.0, fields.1, regions.0)?);
    }
    if active.1 {
        score = score.min(min_region_sir(fields.1, fields.0, regions.1)?);
    }
    if score == f64::INFINITY {
        return Err(Error::Validation("both channels are silent".into()));
    }
    Ok(score)
}

fn steering_seed(
    layout: &ArrayLayout,
    region: &Region,
    config: &SearchConfig,
    frequency_ghz: f64,
) -> Result<PhaseProfile> {
    let [ax, ay] = layout.center_mm();
    let [rx, ry] = match *region {
        Region::Rect { x_mm, y_mm, w_mm, h_mm } => [x_mm + w_mm / 2.0, y_mm + h_mm / 2.0],
        Region::Disc { cx_mm, cy_mm, .. } => [cx_mm, cy_mm],
    };
    let az = (ry - ay).atan2(rx - ax).to_degrees();
    crate::combiner::suggest_profile_for_direction(
        layout,
        az,
        config.seed_permittivity,
        frequency_ghz,
        config.phase_step_deg,
    )
}

/// Block coordinate ascent on two arrays: optimise A with B frozen, then B
/// with A frozen, until a round brings no improvement. Starts from
/// `initial` or from steering seeds aimed at each array's region.
#[allow(clippy::too_many_arguments)]
pub fn optimize_pair(
    library_a: &FieldLibrary,
    library_b: &FieldLibrary,
    layouts: (&ArrayLayout, &ArrayLayout),
    config: &SearchConfig,
    regions: (&Region, &Region),
    initial: Option<(PhaseProfile, PhaseProfile)>,
) -> Result<PairResult> {
    config.validate()?;
    check_layout(library_a, layouts.0)?;
    check_layout(library_b, layouts.1)?;
    if layouts.0.port_ids.iter().any(|p| layouts.1.port_ids.contains(p)) {
        return Err(Error::Validation("the two arrays share ports".into()));
    }
    regions.0.validate()?;
    regions.1.validate()?;
    if config.objective != ObjectiveKind::MinRegionSir {
        return Err(Error::Validation(
            "pair search uses the min_region_sir objective".into(),
        ));
    }
    let freq = library_a.frequency_ghz;
    let (mut pa, mut pb) = match initial {
        Some(p) => p,
        None => (
            steering_seed(layouts.0, regions.0, config, freq)?,
            steering_seed(layouts.1, regions.1, config, freq)?,
        ),
    };
    let active = (!pa.is_zero(), !pb.is_zero());
    let mut fa = combine(library_a, &pa)?;
    let mut fb = combine(library_b, &pb)?;
    fa.check_compatible(&fb)?;
    let mut score = pair_score((&fa, &fb), active, regions)?;
    let mut trace = vec![TraceEntry {
        iteration: 0,
        stage: "start".into(),
        profile: pa.merged(&pb)?,
        parameters: String::new(),
        score,
    }];
    let mut used = 1usize;
    let mut exhausted = used >= config.budget;

    let amplitudes = |layout: &ArrayLayout, p: &PhaseProfile| -> Vec<f64> {
        layout
            .port_ids
            .iter()
            .map(|&q| p.get(q).map_or(1.0, |w| w.amplitude))
            .collect()
    };

    'rounds: loop {
        let mut improved = false;
        for block in 0..2 {
            if !(if block == 0 { active.0 } else { active.1 }) {
                continue;
            }
            if used >= config.budget {
                exhausted = true;
                break 'rounds;
            }
            let (layout, lib, current, frozen) = if block == 0 {
                (layouts.0, library_a, &pa, &fb)
            } else {
                (layouts.1, library_b, &pb, &fa)
            };
            let regs = if block == 0 { regions } else { (regions.1, regions.0) };
            let act = if block == 0 { active } else { (active.1, active.0) };
            let mut e = Engine {
                layout,
                amplitudes: amplitudes(layout, current),
                n: config.lattice_size(),
                step: config.phase_step_deg,
                fixed_first: true,
                eval: |p: &PhaseProfile| pair_score((&combine(lib, p)?, frozen), act, regs),
                budget: config.budget - used,
                used: 0,
                exhausted: false,
                stage_prefix: if block == 0 { "A-".into() } else { "B-".into() },
                trace: Vec::new(),
            };
            let (idx, s) = e.run(config.strategy, config.seed, config.restarts, Some(current))?;
            let found = e.profile(&idx);
            used += e.used;
            exhausted |= e.exhausted;
            for mut t in e.trace {
                t.iteration = trace.len();
                t.profile = if block == 0 {
                    t.profile.merged(&pb)?
                } else {
                    pa.merged(&t.profile)?
                };
                trace.push(t);
            }
            if s > score {
                score = s;
                improved = true;
                if block == 0 {
                    pa = found;
                    fa = combine(library_a, &pa)?;
                } else {
                    pb = found;
                    fb = combine(library_b, &pb)?;
                }
            }
        }
        if !improved {
            break;
        }
    }
    Ok(PairResult {
        profile_a: pa,
        profile_b: pb,
        score,
        trace,
        budget_exhausted: exhausted,
    })
}

/// Lattice value of a phase (0-based index in `[0, 360)`).
pub fn lattice_index(phase_deg: f64, step_deg: f64) -> usize {
    let n = (360.0 / step_deg).round() as i64;
    ((phase_deg / step_deg).round() as i64).rem_euclid(n) as usize
}

/// Are two profiles equal up to one global phase rotation?
pub fn equal_up_to_global_phase(a: &PhaseProfile, b: &PhaseProfile, tol_deg: f64) -> bool {
    if a.ports() != b.ports() {
        return false;
    }
    let Some(&first) = a.ports().first() else {
        return true;
    };
    let shift = b.phase_deg(first).unwrap() - a.phase_deg(first).unwrap();
    a.iter().all(|(p, w)| {
        let v = b.get(p).unwrap();
        (w.amplitude - v.amplitude).abs() <= 1e-12
            && normalize_phase_deg(w.phase_deg + shift - v.phase_deg).abs() <= tol_deg
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fdtd::PlaneGeometry;
    use num_complex::Complex64;

    fn plane() -> PlaneGeometry {
        PlaneGeometry {
            x0_mm: 0.05,
            y0_mm: 0.05,
            dx_mm: 0.1,
            dy_mm: 0.1,
            z_mm: 0.25,
            nx: 40,
            ny: 20,
        }
    }

    /// Point-source-like library: element fields `e^{-jkr}/√r` in a
    /// homogeneous medium.
    fn line_library(layout: &ArrayLayout, k: f64) -> FieldLibrary {
        let mut lib = FieldLibrary::new("synthetic", 60.0);
        for (n, &p) in layout.port_ids.iter().enumerate() {
            let [x0, y0] = layout.position(n);
            let mut m = ComplexFieldMap::zeros(60.0, plane());
            for c in 0..m.data.len() {
                let [x, y] = m.plane.cell_center(c);
                let r = ((x - x0).powi(2) + (y - y0).powi(2)).sqrt().max(0.05);
                m.data[c][2] = Complex64::from_polar(1.0 / r.sqrt(), -k * r);
            }
            lib.insert(p, m).unwrap();
        }
        lib
    }

    fn line() -> ArrayLayout {
        ArrayLayout::grid([1.85, 0.2], 1, 4, 0.1, 1)
    }

    #[test]
    fn config_validation() {
        let mut c = SearchConfig::default();
        assert!(c.validate().is_ok());
        c.phase_step_deg = 25.0;
        assert!(c.validate().is_err());
        c.phase_step_deg = 90.0;
        c.budget = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn concentration_normalisation() {
        let lib = line_library(&line(), 10.0);
        let f = combine(&lib, &PhaseProfile::from_phases([(1, 0.0), (2, 0.0)])).unwrap();
        let all = Region::rect(0.0, 0.0, 4.0, 2.0);
        assert!((objective_concentration(&f, &all).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(
            objective_concentration(&f, &Region::rect(9.0, 9.0, 1.0, 1.0)).unwrap(),
            0.0
        );
        let z = ComplexFieldMap::zeros(60.0, plane());
        assert!(matches!(objective_concentration(&z, &all), Err(Error::ZeroField)));
    }

    #[test]
    fn broadside_strip_recovers_uniform_gradient() {
        // λ/2 line just below the plane, strip straight ahead of it
        let lambda = 1.45;
        let layout = ArrayLayout::grid([2.0 - 1.5 * lambda / 2.0, -0.5], 1, 4, lambda / 2.0, 1);
        let lib = line_library(&layout, 2.0 * std::f64::consts::PI / lambda);
        let strip = Region::rect(1.7, 1.0, 0.6, 1.0);
        let cfg = SearchConfig {
            strategy: Strategy::GradientLattice,
            ..SearchConfig::default()
        };
        let r = optimize_profile(&lib, &layout, &cfg, &strip).unwrap();
        // brute-force oracle over the full 12³ gradient lattice
        let mut best = (f64::NEG_INFINITY, 0, 0, 0);
        for b in 0..12 {
            for sc in 0..12 {
                for sr in 0..12 {
                    let p = crate::combiner::linear_phase_profile(
                        &layout,
                        sc as f64 * 30.0,
                        sr as f64 * 30.0,
                        b as f64 * 30.0,
                    );
                    let s = objective_concentration(&combine(&lib, &p).unwrap(), &strip).unwrap();
                    if s > best.0 + 1e-12 {
                        best = (s, b, sc, sr);
                    }
                }
            }
        }
        assert_eq!((best.2, best.3), (0, 0));
        assert!((r.score - best.0).abs() < 1e-12);
        assert!(r.profile.iter().all(|(_, w)| w.phase_deg == 0.0));
        assert!(!r.budget_exhausted);
    }

    #[test]
    fn budget_one_returns_first_candidate() {
        let layout = line();
        let lib = line_library(&layout, 4.0);
        let cfg = SearchConfig {
            budget: 1,
            ..SearchConfig::default()
        };
        let region = Region::rect(0.0, 0.0, 1.0, 1.0);
        let r = optimize_profile(&lib, &layout, &cfg, &region).unwrap();
        assert!(r.budget_exhausted);
        assert_eq!(r.trace.len(), 1);
        let uniform = PhaseProfile::from_phases((1..=4).map(|p| (p, 0.0)));
        assert_eq!(r.profile, uniform);
        let expect = objective_concentration(&combine(&lib, &uniform).unwrap(), &region).unwrap();
        assert_eq!(r.score, expect);
    }

    #[test]
    fn planted_profile_is_recovered() {
        let layout = line();
        let lib = line_library(&layout, 7.0);
        let planted = PhaseProfile::from_phases([(1, 90.0), (2, -30.0), (3, 150.0), (4, 0.0)]);
        let target = combine(&lib, &planted).unwrap();
        let cfg = SearchConfig::default();
        let r = optimize_with(&layout, &cfg, false, |p| Ok(-(&combine(&lib, p)? - &target).l2_norm())).unwrap();
        assert_eq!(r.profile, planted);
        assert_eq!(r.score, 0.0);
    }

    #[test]
    fn small_instances_match_brute_force() {
        let layout = line();
        let lib = line_library(&layout, 9.0);
        let region = Region::rect(0.0, 1.0, 1.5, 1.0);
        let cfg = SearchConfig {
            phase_step_deg: 90.0,
            ..SearchConfig::default()
        };
        let r = optimize_profile(&lib, &layout, &cfg, &region).unwrap();
        let mut best = f64::NEG_INFINITY;
        for code in 0..256usize {
            let p = PhaseProfile::from_phases((0..4).map(|n| (n as u32 + 1, ((code >> (2 * n)) & 3) as f64 * 90.0)));
            best = best.max(objective_concentration(&combine(&lib, &p).unwrap(), &region).unwrap());
        }
        assert!((r.score - best).abs() < 1e-12);
    }

    #[test]
    fn search_is_deterministic() {
        let layout = ArrayLayout::grid([1.5, 0.5], 2, 3, 0.12, 1);
        let lib = line_library(&layout, 6.0);
        let cfg = SearchConfig {
            strategy: Strategy::RandomRestart,
            seed: 42,
            restarts: 3,
            ..SearchConfig::default()
        };
        let region = Region::rect(3.0, 1.0, 1.0, 1.0);
        let a = optimize_profile(&lib, &layout, &cfg, &region).unwrap();
        let b = optimize_profile(&lib, &layout, &cfg, &region).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(trace_csv(&a.trace), trace_csv(&b.trace));
    }

    #[test]
    fn descent_only_accepts_improvements() {
        let layout = ArrayLayout::grid([1.5, 0.5], 3, 3, 0.12, 1);
        let lib = line_library(&layout, 6.0);
        let cfg = SearchConfig::default();
        let region = Region::rect(0.2, 1.2, 1.0, 0.7);
        let r = optimize_profile(&lib, &layout, &cfg, &region).unwrap();
        let lattice_best = r
            .trace
            .iter()
            .filter(|t| t.stage == "lattice")
            .map(|t| t.score)
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(r.score >= lattice_best);
        assert_eq!(r.profile.phase_deg(1), Some(0.0));
        assert!(r.trace.iter().all(|t| t.score <= r.score));
    }

    #[test]
    fn pair_with_silent_array_hits_ceiling() {
        let a = ArrayLayout::grid([0.3, 0.3], 1, 2, 0.1, 1);
        let b = ArrayLayout::grid([3.5, 1.5], 1, 2, 0.1, 3);
        let mut lib = line_library(&a, 6.0);
        for (p, m) in [3u32, 4].iter().zip(line_library(&b, 6.0).ports()) {
            let src = line_library(&b, 6.0);
            lib.insert(*p, src.get(m).unwrap().clone()).unwrap();
        }
        let cfg = SearchConfig {
            objective: ObjectiveKind::MinRegionSir,
            ..SearchConfig::default()
        };
        let silent = PhaseProfile::new().with(3, 0.0, 0.0).with(4, 0.0, 0.0);
        let start = PhaseProfile::from_phases([(1, 0.0), (2, 0.0)]);
        let r = optimize_pair(
            &lib,
            &lib,
            (&a, &b),
            &cfg,
            (&Region::rect(0.0, 0.0, 1.0, 1.0), &Region::rect(3.0, 1.0, 1.0, 1.0)),
            Some((start, silent.clone())),
        )
        .unwrap();
        assert_eq!(r.score, crate::metrics::DEFAULT_SIR_CEILING_DB);
        assert_eq!(r.profile_b, silent);
    }

    #[test]
    fn global_phase_helper() {
        let a = PhaseProfile::from_phases([(1, 0.0), (2, 90.0)]);
        assert!(equal_up_to_global_phase(&a, &a.rotated(120.0), 1e-9));
        assert!(!equal_up_to_global_phase(
            &a,
            &PhaseProfile::from_phases([(1, 0.0), (2, 0.0)]),
            1e-9
        ));
        assert_eq!(lattice_index(-30.0, 30.0), 11);
    }
}
