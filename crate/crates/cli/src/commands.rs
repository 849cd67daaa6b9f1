use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use clap::Args;
use num_complex::Complex64;

use chipwave::combiner::{combine, PhaseProfile};
use chipwave::fdtd::RunOptions;
use chipwave::metrics::{self, channel_isolation_report, Region, DEFAULT_ISOLATION_DB};
use chipwave::ports::{self, coupling_csv, coupling_sweep, find_resonance, frequency_grid, SweepOptions};
use chipwave::presets;
use chipwave::scenario::{wavelength_in_medium, ArrayLayout, Scenario};
use chipwave::search::{self, ObjectiveKind, SearchConfig, Strategy};
use chipwave::Error;

use crate::job::{resolve_scenario, Job};
use crate::{Common, Failure};

/// Heatmap window for field magnitudes: 20·log10|E| in dB re 1 V/m per
/// volt of port excitation.
pub const FIELD_DB_MAX: f64 = 70.0;
pub const FIELD_DB_RANGE: f64 = 60.0;

/// Spacings of the coupling study, in wavelengths in the antenna layer.
const DEFAULT_SPACINGS: [f64; 6] = [0.05, 0.1, 0.125, 0.2, 0.25, 0.5];

#[derive(Args)]
pub struct ResonanceArgs {
    /// Port to drive (default: the first element)
    #[arg(long)]
    port: Option<u32>,
    /// Search band "lo,hi" in GHz
    #[arg(long, default_value = "40,130")]
    band: String,
    /// Spectrum resolution (GHz)
    #[arg(long, default_value_t = 0.5)]
    step: f64,
    /// First tune every monopole's length so the dip lands on the scenario frequency
    #[arg(long)]
    tune: bool,
    /// Length bounds "lo,hi" (mm) for --tune
    #[arg(long, default_value = "0.2,0.8")]
    length_bounds: String,
    #[arg(long, default_value_t = 12)]
    max_runs: usize,
}

#[derive(Args)]
pub struct CouplingArgs {
    /// Spacings in wavelengths of the antenna layer
    #[arg(long, value_delimiter = ',', conflicts_with = "spacings_mm")]
    spacings: Option<Vec<f64>>,
    /// Spacings in mm
    #[arg(long, value_delimiter = ',')]
    spacings_mm: Option<Vec<f64>>,
    /// Element pair "a,b" (default: the first two elements of the first array)
    #[arg(long)]
    pair: Option<String>,
}

#[derive(Args)]
pub struct FieldsArgs {
    /// Profile file, preset, `uniform` or `zero`; append `@ARRAY` to place it
    /// on a named array. Repeat to drive several arrays at once.
    #[arg(long = "profile", default_value = "uniform")]
    profiles: Vec<String>,
}

#[derive(Args)]
pub struct SirArgs {
    /// One profile per channel (same syntax as `fields`)
    #[arg(long = "profile")]
    profiles: Vec<String>,
    /// One target region "x,y,w,h" (mm) per channel
    #[arg(long = "region")]
    regions: Vec<String>,
    /// Minimum in-region SIR for an ISOLATED verdict (dB)
    #[arg(long, default_value_t = DEFAULT_ISOLATION_DB)]
    threshold: f64,
}

#[derive(Args)]
pub struct SearchArgs {
    /// Arrays to optimise: one (field concentration) or two (channel SIR);
    /// default: every array of the scenario
    #[arg(long = "array")]
    arrays: Vec<String>,
    /// Target region "x,y,w,h" (mm), one per array
    #[arg(long = "region")]
    regions: Vec<String>,
    #[arg(long, default_value_t = 30.0)]
    phase_step: f64,
    /// gradient-lattice | coordinate-descent | random-restart
    #[arg(long, default_value = "coordinate-descent")]
    strategy: String,
    #[arg(long, default_value_t = 20_000)]
    budget: usize,
    #[arg(long, default_value_t = 8)]
    restarts: usize,
}

fn scenario_from(c: &Common) -> Result<Scenario, Failure> {
    let mut s = resolve_scenario(&c.scenario)?;
    if let Some(f) = c.freq {
        s = s.with_frequency(f)?;
    }
    if let Some(n) = c.cells_per_lambda {
        s = s.with_cells_per_wavelength(n)?;
    }
    Ok(s)
}

fn open(c: &Common, scenario: Scenario) -> Result<Job, Failure> {
    Job::open(scenario, c.seed, c.out.clone(), c.cache.clone(), c.strict)
}

fn pair_of<T: std::str::FromStr>(text: &str, what: &str) -> Result<(T, T), Failure> {
    let bad = || Failure::Usage(format!("{what}: expected 'a,b', got '{text}'"));
    let (a, b) = text.split_once(',').ok_or_else(bad)?;
    Ok((
        a.trim().parse().map_err(|_| bad())?,
        b.trim().parse().map_err(|_| bad())?,
    ))
}

fn parse_region(text: &str, s: &Scenario) -> Result<Region, Failure> {
    let r = Region::parse(text)?;
    r.validate()?;
    if !r.overlaps_extent(s.chip_extent_mm) {
        return Err(Failure::Usage(format!("region {text} lies outside the chip")));
    }
    Ok(r)
}

/// Profile spec: file path, preset name, `uniform` or `zero`, optionally
/// suffixed with `@ARRAY`.
fn parse_profile(spec: &str, s: &Scenario) -> Result<PhaseProfile, Failure> {
    let (base, array) = match spec.split_once('@') {
        Some((b, a)) => (b, Some(a)),
        None => (spec, None),
    };
    let layout: Option<ArrayLayout> = match array {
        Some(a) => Some(
            s.array(a)
                .ok_or_else(|| {
                    let names: Vec<&str> = s.arrays.iter().map(|x| x.name.as_str()).collect();
                    Failure::Usage(format!("scenario has no array '{a}' (arrays: {})", names.join(", ")))
                })?
                .layout
                .clone(),
        ),
        None => None,
    };
    let ports = layout.as_ref().map_or_else(|| s.port_ids(), |l| l.port_ids.clone());
    let p = match base {
        "uniform" => PhaseProfile::from_phases(ports.iter().map(|&p| (p, 0.0))),
        "zero" => {
            let mut p = PhaseProfile::new();
            for q in ports {
                p.set(q, 0.0, 0.0);
            }
            p
        }
        other => {
            let prof = if Path::new(other).is_file() {
                PhaseProfile::parse(&fs::read_to_string(other)?)?
            } else if presets::profile_names().contains(&other) {
                presets::profile(other)?
            } else {
                return Err(Failure::Usage(format!(
                    "'{other}' is neither a profile file nor a preset (presets: uniform, zero, {})",
                    presets::profile_names().join(", ")
                )));
            };
            match &layout {
                Some(l) => presets::profile_on(&prof, l)?,
                None => prof,
            }
        }
    };
    if p.is_empty() {
        return Err(Failure::Usage(format!("profile '{spec}' addresses no ports")));
    }
    for q in p.ports() {
        if s.element(q).is_none() {
            return Err(Error::MissingPort(q).into());
        }
    }
    Ok(p)
}

fn timed<T>(what: &str, f: impl FnOnce() -> Result<T, Failure>) -> Result<T, Failure> {
    let t = Instant::now();
    let r = f()?;
    eprintln!("{what}: {:.1} s", t.elapsed().as_secs_f64());
    Ok(r)
}

pub fn resonance(c: &Common, a: &ResonanceArgs) -> Result<(), Failure> {
    let mut scenario = scenario_from(c)?;
    let port = match a.port {
        Some(p) if scenario.element(p).is_some() => p,
        Some(p) => return Err(Error::MissingPort(p).into()),
        None => *scenario
            .port_ids()
            .first()
            .ok_or_else(|| Failure::Usage("scenario has no elements".into()))?,
    };
    let band: (f64, f64) = pair_of(&a.band, "--band")?;
    if !(band.0 < band.1 && a.step > 0.0) {
        return Err(Failure::Usage(
            "--band needs lo < hi and --step must be positive".into(),
        ));
    }
    let bounds: (f64, f64) = pair_of(&a.length_bounds, "--length-bounds")?;
    let opts = SweepOptions {
        run: RunOptions::default(),
        band_ghz: band,
        step_ghz: a.step,
    };
    for f in frequency_grid(band.0, band.1, a.step) {
        opts.run.waveform.check_band(f)?;
    }
    if a.tune {
        opts.run.waveform.check_band(scenario.frequency_ghz)?;
        if !(bounds.0 > 0.0 && bounds.0 < bounds.1) {
            return Err(Failure::Usage("--length-bounds needs 0 < lo < hi".into()));
        }
    }
    let job = open(c, scenario.clone())?;

    let mut summary = String::new();
    if a.tune {
        let t = timed("tuning", || {
            Ok(ports::tune_monopole_length(
                &scenario,
                port,
                scenario.frequency_ghz,
                bounds,
                a.max_runs,
                0.01,
                &opts,
            )?)
        })?;
        let mut csv = String::from("length_mm,resonance_ghz\n");
        for h in &t.history {
            let f = h.resonance_ghz.map_or("none".to_string(), |f| format!("{f:.4}"));
            let _ = writeln!(csv, "{:.6},{f}", h.length_mm);
        }
        job.write_text("tuning.csv", &csv)?;
        let _ = writeln!(
            summary,
            "tuned_length_mm: {:.6}\ntuning_converged: {}\ntuning_runs: {}",
            t.length_mm,
            t.converged,
            t.history.len()
        );
        scenario = scenario.with_monopole_length(t.length_mm)?;
    }

    let m = timed("spectrum", || Ok(ports::reflection_spectrum(&scenario, port, &opts)?))?;
    job.check_converged("spectrum", &m.unconverged)?;
    job.write_text("s11.csv", &m.to_csv())?;
    let header = job.provenance().trim_start_matches("# ").to_string();
    job.write_bytes(&format!("port{port}.s1p"), m.to_touchstone(&header).as_bytes())?;

    let s11 = m.magnitude_db(port, port)?;
    let (imin, min_db) = s11
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, &v)| if v < acc.1 { (i, v) } else { acc });
    let _ = writeln!(summary, "port: {port}\nreference_ohm: {}", m.reference_ohm);
    let _ = writeln!(summary, "min_s11_db: {min_db:.3} at {:.3} GHz", m.frequencies_ghz[imin]);
    match find_resonance(&m, port, band) {
        Ok(f) => {
            let target = scenario.frequency_ghz;
            let _ = writeln!(
                summary,
                "resonance_ghz: {f:.4}\ntarget_ghz: {target}\ndeviation_pct: {:.2}",
                100.0 * (f - target) / target
            );
        }
        Err(e @ Error::FlatSpectrum { .. }) => {
            let _ = writeln!(summary, "resonance_ghz: none ({e})");
        }
        Err(e) => return Err(e.into()),
    }
    let at = |f: f64| {
        m.frequencies_ghz
            .iter()
            .position(|&g| (g - f).abs() < 1e-9)
            .map(|i| s11[i])
    };
    if let Some(v) = at(scenario.frequency_ghz) {
        let _ = writeln!(summary, "s11_at_target_db: {v:.3}");
    }
    job.write_text("resonance.txt", &summary)?;
    print!("{summary}");
    Ok(())
}

pub fn coupling(c: &Common, a: &CouplingArgs) -> Result<(), Failure> {
    let scenario = scenario_from(c)?;
    let lambda = wavelength_in_medium(
        scenario.frequency_ghz,
        scenario.antenna_layer().material.rel_permittivity,
    )?;
    let spacings_mm: Vec<f64> = match (&a.spacings, &a.spacings_mm) {
        (_, Some(mm)) => mm.clone(),
        (Some(fr), None) => fr.iter().map(|x| x * lambda).collect(),
        (None, None) => DEFAULT_SPACINGS.iter().map(|x| x * lambda).collect(),
    };
    if spacings_mm.is_empty() {
        return Err(Failure::Usage("empty spacing list".into()));
    }
    if spacings_mm.iter().any(|&s| s.is_nan() || s <= 0.0) {
        return Err(Failure::Usage("spacings must be positive".into()));
    }
    let pair = match &a.pair {
        Some(t) => pair_of::<u32>(t, "--pair")?,
        None => {
            let ids = scenario
                .arrays
                .first()
                .map_or_else(|| scenario.port_ids(), |arr| arr.layout.port_ids.clone());
            if ids.len() < 2 {
                return Err(Failure::Usage("coupling needs two elements".into()));
            }
            (ids[0], ids[1])
        }
    };
    for p in [pair.0, pair.1] {
        if scenario.element(p).is_none() {
            return Err(Error::MissingPort(p).into());
        }
    }
    if scenario.arrays.is_empty() {
        return Err(Failure::Usage(
            "coupling sweeps re-space the first array; scenario has none".into(),
        ));
    }
    let opts = RunOptions::default();
    opts.waveform.check_band(scenario.frequency_ghz)?;
    // every spacing must give a valid scene before anything is solved
    for &sp in &spacings_mm {
        ports::respaced(&scenario, sp)?;
    }
    let job = open(c, scenario.clone())?;
    let rows = timed("coupling sweep", || {
        Ok(coupling_sweep(&scenario, &spacings_mm, pair, &opts)?)
    })?;
    let bad: Vec<u32> = if rows.iter().all(|r| r.converged) {
        vec![]
    } else {
        vec![pair.0.min(pair.1)]
    };
    job.check_converged("coupling sweep", &bad)?;
    let csv = coupling_csv(&rows);
    job.write_text("coupling.csv", &csv)?;
    println!("pair {}-{} at {} GHz", pair.0, pair.1, scenario.frequency_ghz);
    print!("{csv}");
    if let Some(e) = rows.iter().find_map(|r| r.s21_db.as_ref().err()) {
        return Err(Error::Resource(format!("a spacing failed: {e}")).into());
    }
    Ok(())
}

pub fn fields(c: &Common, a: &FieldsArgs) -> Result<(), Failure> {
    let scenario = scenario_from(c)?;
    let mut profile = PhaseProfile::new();
    for spec in &a.profiles {
        profile = profile.merged(&parse_profile(spec, &scenario)?)?;
    }
    RunOptions::default().waveform.check_band(scenario.frequency_ghz)?;
    let job = open(c, scenario)?;
    let lib = timed("field library", || job.library(&profile.ports()))?;
    let mut field = combine(&lib, &profile)?;
    field.label = profile.summary();

    let db: Vec<f64> = field
        .magnitude()
        .iter()
        .map(|&m| if m > 0.0 { 20.0 * m.log10() } else { f64::NEG_INFINITY })
        .collect();
    let mut pgm = Vec::new();
    metrics::write_pgm(&mut pgm, &field.plane, &db, FIELD_DB_MAX - FIELD_DB_RANGE, FIELD_DB_MAX)?;
    job.write_bytes("field.pgm", &pgm)?;
    let mut bin = Vec::new();
    field.write_binary(&mut bin)?;
    job.write_bytes("field.cwfm", &bin)?;
    let mut csv = Vec::new();
    field.write_csv(&mut csv)?;
    job.write_bytes("field.csv", &csv)?;
    let peak = db.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sidecar = format!(
        "kind: |E| on the antenna plane, dB re 1 V/m per volt of excitation\n\
         frequency_ghz: {}\n\
         scale: linear gray, 0 = {} dB, 255 = {} dB\n\
         rows: top row is the largest y\n\
         peak_db: {peak:.3}\n\
         profile: {}\n",
        field.frequency_ghz,
        FIELD_DB_MAX - FIELD_DB_RANGE,
        FIELD_DB_MAX,
        profile.summary()
    );
    job.write_text("field.txt", &sidecar)?;
    print!("{sidecar}");
    Ok(())
}

pub fn sir(c: &Common, a: &SirArgs) -> Result<(), Failure> {
    let scenario = scenario_from(c)?;
    let (profiles, regions) = if a.profiles.is_empty() {
        let (p, mut r) = presets::default_channels(&scenario)
            .map_err(|e| Failure::Usage(format!("{e}; pass --profile and --region per channel")))?;
        if !a.regions.is_empty() {
            r = a
                .regions
                .iter()
                .map(|t| parse_region(t, &scenario))
                .collect::<Result<_, _>>()?;
        }
        (p, r)
    } else {
        let p: Vec<PhaseProfile> = a
            .profiles
            .iter()
            .map(|t| parse_profile(t, &scenario))
            .collect::<Result<_, _>>()?;
        let r: Vec<Region> = a
            .regions
            .iter()
            .map(|t| parse_region(t, &scenario))
            .collect::<Result<_, _>>()?;
        (p, r)
    };
    if profiles.len() < 2 || regions.len() != profiles.len() {
        return Err(Failure::Usage(format!(
            "need at least two channels and one region per channel (got {} profiles, {} regions)",
            profiles.len(),
            regions.len()
        )));
    }
    for p in &profiles {
        p.validate()?;
    }
    RunOptions::default().waveform.check_band(scenario.frequency_ghz)?;
    let mut ports: Vec<u32> = profiles.iter().flat_map(|p| p.ports()).collect();
    ports.sort_unstable();
    ports.dedup();
    let job = open(c, scenario)?;
    let lib = timed("field library", || job.library(&ports))?;
    let report = channel_isolation_report(&lib, &profiles, &regions, a.threshold)?;

    let prov = job.provenance();
    for (k, map) in report.maps.iter().enumerate() {
        let n = k + 1;
        job.write_text(&format!("sir_ch{n}.csv"), &map.to_csv())?;
        let mut pgm = Vec::new();
        map.write_pgm(&mut pgm)?;
        job.write_bytes(&format!("sir_ch{n}.pgm"), &pgm)?;
        job.write_bytes(&format!("sir_ch{n}.txt"), map.sidecar(&prov).as_bytes())?;
    }
    // interference seen by channel 1 is the sum of the other channels
    let mut interference = combine(&lib, &profiles[1])?;
    for p in &profiles[2..] {
        interference.add_scaled(Complex64::new(1.0, 0.0), &combine(&lib, p)?);
    }
    let db = metrics::field_db(&interference, FIELD_DB_RANGE);
    let mut pgm = Vec::new();
    metrics::write_pgm(&mut pgm, &interference.plane, &db, -FIELD_DB_RANGE, 0.0)?;
    job.write_bytes("interference.pgm", &pgm)?;

    let mut text = report.to_text();
    for (k, p) in profiles.iter().enumerate() {
        let _ = writeln!(text, "profile {}: {}", k + 1, p.summary());
    }
    let _ = writeln!(text, "all_isolated: {}", report.all_isolated());
    job.write_text("sir_report.txt", &text)?;
    print!("{text}");
    Ok(())
}

pub fn search(c: &Common, a: &SearchArgs) -> Result<(), Failure> {
    let scenario = scenario_from(c)?;
    let layouts: Vec<ArrayLayout> = if a.arrays.is_empty() {
        scenario.arrays.iter().map(|p| p.layout.clone()).collect()
    } else {
        a.arrays
            .iter()
            .map(|n| {
                scenario
                    .array(n)
                    .map(|p| p.layout.clone())
                    .ok_or_else(|| Failure::Usage(format!("scenario has no array '{n}'")))
            })
            .collect::<Result<_, _>>()?
    };
    if layouts.is_empty() || layouts.len() > 2 {
        return Err(Failure::Usage(format!(
            "search optimises one or two arrays, got {}",
            layouts.len()
        )));
    }
    let strategy: Strategy = a.strategy.parse()?;
    let config = SearchConfig {
        phase_step_deg: a.phase_step,
        strategy,
        budget: a.budget,
        seed: c.seed,
        objective: if layouts.len() == 1 {
            ObjectiveKind::Concentration
        } else {
            ObjectiveKind::MinRegionSir
        },
        restarts: a.restarts,
        seed_permittivity: scenario.antenna_layer().material.rel_permittivity,
    };
    config.validate()?;
    let mut regions: Vec<Region> = a
        .regions
        .iter()
        .map(|t| parse_region(t, &scenario))
        .collect::<Result<_, _>>()?;
    if regions.is_empty() && layouts.len() == 2 && scenario.arrays.len() == 2 {
        regions = presets::default_channels(&scenario)?.1;
    }
    if regions.len() != layouts.len() {
        return Err(Failure::Usage(format!(
            "need one --region per array ({} arrays, {} regions)",
            layouts.len(),
            regions.len()
        )));
    }
    RunOptions::default().waveform.check_band(scenario.frequency_ghz)?;
    let ports: Vec<u32> = layouts.iter().flat_map(|l| l.port_ids.clone()).collect();
    let job = open(c, scenario)?;
    let lib = timed("field library", || job.library(&ports))?;

    let (trace, score, exhausted, best) = if layouts.len() == 1 {
        let r = timed("search", || {
            Ok(search::optimize_profile(&lib, &layouts[0], &config, &regions[0])?)
        })?;
        (r.trace, r.score, r.budget_exhausted, vec![r.profile])
    } else {
        let r = timed("search", || {
            Ok(search::optimize_pair(
                &lib,
                &lib,
                (&layouts[0], &layouts[1]),
                &config,
                (&regions[0], &regions[1]),
                None,
            )?)
        })?;
        (r.trace, r.score, r.budget_exhausted, vec![r.profile_a, r.profile_b])
    };
    job.write_text("trace.csv", &search::trace_csv(&trace))?;
    let mut summary = format!(
        "objective: {:?}\nstrategy: {:?}\nphase_step_deg: {}\nscore: {score:.4}\nevaluations: {}\nbudget_exhausted: {exhausted}\n",
        config.objective,
        config.strategy,
        config.phase_step_deg,
        trace.len()
    );
    for (k, (p, r)) in best.iter().zip(&regions).enumerate() {
        let n = k + 1;
        job.write_text(&format!("best_profile_{n}.profile"), &p.to_text())?;
        let _ = writeln!(summary, "profile {n} ({}): {}", r.describe(), p.summary());
    }
    job.write_text("search.txt", &summary)?;
    print!("{summary}");
    Ok(())
}
