//! Acceptance run: one PASS/FAIL line per criterion, then a non-zero exit
//! if any criterion failed.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use chipwave::combiner::{build_field_libraries, combine, linear_phase_profile, FieldLibrary, PhaseProfile};
use chipwave::fdtd::{ComplexFieldMap, Excitation, PlaneGeometry, RunOptions};
use chipwave::metrics::{channel_isolation_report, sir_db, sir_map};
use chipwave::ports::{self, coupling_sweep, find_resonance, frequency_grid, s_parameters, transmission, SweepOptions};
use chipwave::presets;
use chipwave::scenario::{array_footprint, monopole_quarter_wave_length, wavelength_in_medium, ArrayLayout, C0};
use chipwave::search::{self, equal_up_to_global_phase, optimize_with, SearchConfig, Strategy};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;

type Outcome = (bool, String);

const SI: f64 = 11.9;

fn c1_quarter_wave_length() -> Outcome {
    let l = monopole_quarter_wave_length(60.0, SI).unwrap();
    ((l - 0.3624).abs() <= 0.0005, format!("L = {l:.5} mm (0.3624 ± 0.0005)"))
}

fn c2_footprint() -> Outcome {
    let d = wavelength_in_medium(60.0, SI).unwrap() / 4.0;
    let a = array_footprint(&ArrayLayout::grid([0.0, 0.0], 4, 4, d, 1));
    ((a - 1.18).abs() <= 0.02 * 1.18, format!("{a:.4} mm² (1.18 ± 2%)"))
}

fn c3_resonance() -> Outcome {
    let s = presets::scenario("flipchip-60ghz").unwrap();
    let m = ports::reflection_spectrum(&s, 1, &SweepOptions::default()).unwrap();
    let s11 = m.magnitude_db(1, 1).unwrap();
    let f = find_resonance(&m, 1, (40.0, 130.0));
    let dip = m
        .frequencies_ghz
        .iter()
        .zip(&s11)
        .filter(|(f, _)| (54.0..=66.0).contains(*f))
        .map(|(_, v)| *v)
        .fold(f64::INFINITY, f64::min);
    match f {
        Ok(f) => (
            (54.0..=66.0).contains(&f) && dip <= -10.0,
            format!("dip at {f:.2} GHz, min |S11| in 54–66 GHz = {dip:.2} dB (≤ −10 dB within 60 GHz ± 10%)"),
        ),
        Err(e) => (false, e.to_string()),
    }
}

fn c4_quarter_wave_oracle() -> Outcome {
    let s = presets::scenario("quarter-wave-silicon").unwrap();
    let l = s.elements[0].length_mm;
    let eps = s.antenna_layer().material.rel_permittivity;
    let oracle = C0 / (4.0 * l * 1e-3 * eps.sqrt()) / 1e9;
    let m = ports::reflection_spectrum(&s, 1, &SweepOptions::default()).unwrap();
    match find_resonance(&m, 1, (40.0, 130.0)) {
        Ok(f) => {
            let dev = (f - oracle) / oracle;
            (
                dev.abs() <= 0.10,
                format!(
                    "f_res = {f:.2} GHz vs c0/(4L√εr) = {oracle:.2} GHz ({:+.1}%, limit 10%)",
                    100.0 * dev
                ),
            )
        }
        Err(e) => (false, e.to_string()),
    }
}

fn c5_coupling() -> Outcome {
    let opts = RunOptions::default();
    let pair = presets::scenario("coupling-pair").unwrap();
    let lambda = wavelength_in_medium(pair.frequency_ghz, SI).unwrap();
    let fracs = [1.0 / 20.0, 0.1, 0.125, 0.2, 0.25, 0.5];
    let rows = coupling_sweep(&pair, &fracs.map(|x| x * lambda), (1, 2), &opts).unwrap();
    let s21: Vec<f64> = rows.iter().map(|r| *r.s21_db.as_ref().unwrap()).collect();
    let monotone = s21.windows(2).all(|w| w[1] <= w[0] + 1.0);

    let array = presets::scenario("coupling-array").unwrap();
    let afr = [1.0 / 20.0, 0.1, 0.125, 0.2, 0.25];
    let arows = coupling_sweep(&array, &afr.map(|x| x * lambda), (6, 7), &opts).unwrap();
    let a21: Vec<f64> = arows.iter().map(|r| *r.s21_db.as_ref().unwrap()).collect();
    let close_ok = a21[..4].iter().all(|&v| v >= -13.0);
    let quarter_ok = a21[4] <= -7.0;
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.1}")).collect::<Vec<_>>().join(" ");
    (
        monotone && close_ok && quarter_ok,
        format!(
            "pair |S21| dB [{}] non-increasing(1 dB): {monotone}; array 6-7 dB [{}] close ≥ −13: {close_ok}, λ/4 ≤ −7: {quarter_ok}",
            fmt(&s21),
            fmt(&a21)
        ),
    )
}

fn c6_superposition() -> Outcome {
    let s = scene(2.0, &[(1, 0.45, 0.5, 0.2), (2, 1.5, 1.45, 0.2)], 0.05, true, 10.0);
    let g = grid(&s);
    let opts = monitored(&g, &[60.0]);
    let singles: Vec<_> = [1, 2]
        .iter()
        .map(|&p| solve(&g, &[Excitation::port(p)], &opts))
        .collect();
    let coupling = ports::db(transmission(&singles[0], 1, 2, 60.0).unwrap().norm());
    let mut lib = FieldLibrary::new("c6", 60.0);
    for (p, r) in [1, 2].iter().zip(&singles) {
        lib.insert(*p, field(r, &g, 60.0)).unwrap();
    }
    let (w1, w2) = (Complex64::from_polar(1.0, 0.0), Complex64::from_polar(0.8, 2.1));
    let joint = solve(&g, &[Excitation::weighted(1, w1), Excitation::weighted(2, w2)], &opts);
    let combined = combine(&lib, &PhaseProfile::from_complex([(1, w1), (2, w2)])).unwrap();
    let err = field(&joint, &g, 60.0).relative_l2_error(&combined);
    (
        coupling < -20.0 && err <= 0.10,
        format!("coupling {coupling:.1} dB (< −20), combine vs joint run: relative L2 {err:.2e} (≤ 0.10)"),
    )
}

/// Libraries of the two-corner scene at 60 and 110 GHz, from one set of
/// broadband runs on the 60 GHz mesh.
fn corner_libraries() -> (chipwave::scenario::Scenario, Vec<FieldLibrary>) {
    let s = presets::scenario("two-corner-arrays").unwrap();
    let libs = build_field_libraries(&s, &s.port_ids(), &[60.0, 110.0], &RunOptions::default(), None).unwrap();
    (s, libs)
}

/// Mirrored linear-gradient profiles (the structure of the bundled
/// profiles) on both arrays: the literal vertical profile, then the best
/// column/row step pair on the 30° lattice. The unconstrained pair search
/// is reported for reference only.
fn isolation(s: &chipwave::scenario::Scenario, lib: &FieldLibrary, threshold: f64) -> Outcome {
    let (profiles, regions) = presets::default_channels(s).unwrap();
    let worst = |p1: &PhaseProfile| -> (f64, f64) {
        let p2 = presets::profile_on(p1, &s.arrays[1].layout).unwrap();
        let r = channel_isolation_report(lib, &[p1.clone(), p2], &regions, threshold).unwrap();
        let min = r.channels.iter().map(|c| c.stats.min_db).fold(f64::INFINITY, f64::min);
        let mean = r.channels.iter().map(|c| c.stats.mean_db).fold(f64::INFINITY, f64::min);
        (min, mean)
    };
    let literal = worst(&profiles[0]);
    let layout = &s.arrays[0].layout;
    let mut best = (f64::NEG_INFINITY, 0.0, 0.0, 0.0);
    for c in 0..12 {
        for r in 0..12 {
            let (dc, dr) = (30.0 * c as f64, 30.0 * r as f64);
            let (min, mean) = worst(&linear_phase_profile(layout, dc, dr, 0.0));
            if min > best.0 {
                best = (min, mean, dc, dr);
            }
        }
    }
    let cfg = SearchConfig {
        objective: search::ObjectiveKind::MinRegionSir,
        ..Default::default()
    };
    let free = search::optimize_pair(
        lib,
        lib,
        (&s.arrays[0].layout, &s.arrays[1].layout),
        &cfg,
        (&regions[0], &regions[1]),
        None,
    )
    .map(|r| format!("{:.1} dB", r.score))
    .unwrap_or_else(|e| e.to_string());
    (
        best.0 >= threshold,
        format!(
            "worst-channel min SIR in the target squares: bundled vertical profile {:.1} dB (mean {:.1}); \
             best mirrored gradient (col {}°, row {}°) {:.1} dB (mean {:.1}); need ≥ {threshold} dB \
             [unconstrained pair search, not mirrored: {free}]",
            literal.0, literal.1, best.2, best.3, best.0, best.1
        ),
    )
}

fn c8_s11_110() -> Outcome {
    let s = presets::scenario("flipchip-110ghz").unwrap();
    let opts = SweepOptions {
        band_ghz: (100.0, 120.0),
        step_ghz: 1.0,
        ..Default::default()
    };
    let m = ports::reflection_spectrum(&s, 1, &opts).unwrap();
    let i = m.frequencies_ghz.iter().position(|&f| f == 110.0).unwrap();
    let v = m.magnitude_db(1, 1).unwrap()[i];
    (v <= -8.0, format!("|S11(110 GHz)| = {v:.2} dB (≤ −8 dB)"))
}

fn random_library(rng: &mut ChaCha8Rng, ports: u32, plane: PlaneGeometry) -> FieldLibrary {
    let mut lib = FieldLibrary::new("synthetic", 60.0);
    for p in 1..=ports {
        let mut m = ComplexFieldMap::zeros(60.0, plane);
        for v in m.data.iter_mut().flatten() {
            *v = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        }
        lib.insert(p, m).unwrap();
    }
    lib
}

fn plane(n: usize) -> PlaneGeometry {
    PlaneGeometry {
        x0_mm: 0.05,
        y0_mm: 0.05,
        dx_mm: 0.1,
        dy_mm: 0.1,
        z_mm: 0.2,
        nx: n,
        ny: n,
    }
}

fn c9_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut notes = Vec::new();
    let mut ok = true;
    let mut check = |name: &str, pass: bool, detail: String| {
        ok &= pass;
        notes.push(format!("{name} {}{detail}", if pass { "ok" } else { "FAILED " }));
    };

    let lib = random_library(&mut rng, 4, plane(12));
    let rand_profile = |rng: &mut ChaCha8Rng| {
        PhaseProfile::from_complex((1..=4).map(|p| {
            (
                p,
                Complex64::from_polar(rng.gen_range(0.1..2.0), rng.gen_range(-3.0..3.0)),
            )
        }))
    };
    let mut lin = 0.0f64;
    let mut gp = 0.0f64;
    for _ in 0..50 {
        let (p1, p2) = (rand_profile(&mut rng), rand_profile(&mut rng));
        let (a, b) = (
            Complex64::new(rng.gen_range(-2.0..2.0), 0.3),
            Complex64::new(0.5, rng.gen_range(-2.0..2.0)),
        );
        let (f1, f2) = (combine(&lib, &p1).unwrap(), combine(&lib, &p2).unwrap());
        let lhs = combine(&lib, &p1.linear_combination(a, &p2, b)).unwrap();
        let mut rhs = f1.scaled(a);
        rhs.add_scaled(b, &f2);
        let scale = a.norm() * f1.l2_norm() + b.norm() * f2.l2_norm();
        lin = lin.max((&lhs - &rhs).l2_norm() / scale);
        let rot = combine(&lib, &p1.rotated(rng.gen_range(-180.0..180.0))).unwrap();
        for (x, y) in rot.magnitude().iter().zip(f1.magnitude()) {
            gp = gp.max((x - y).abs() / y.max(1e-300));
        }
        let s0 = sir_map(&f1, &f2).unwrap();
        let s1 = sir_map(&rot, &f2).unwrap();
        for (x, y) in s0.sir_db.iter().zip(&s1.sir_db) {
            gp = gp.max((x - y).abs() / 20.0);
        }
    }
    check("linearity", lin <= 1e-12, format!(" ({lin:.1e})"));
    check("global-phase", gp <= 1e-9, format!(" ({gp:.1e})"));

    let mut anti = true;
    let mut scale_err = 0.0f64;
    for _ in 0..1000 {
        let (d, i) = (rng.gen_range(1e-6..1e3), rng.gen_range(1e-6..1e3));
        anti &= sir_db(d, i) == -sir_db(i, d);
        let k = rng.gen_range(1e-3..1e3);
        scale_err = scale_err.max((sir_db(k * d, k * i) - sir_db(d, i)).abs());
    }
    check("sir-antisymmetry", anti, String::new());
    check("sir-scale", scale_err < 1e-9, format!(" ({scale_err:.1e} dB)"));

    let s = asymmetric_pair();
    let g = grid(&s);
    let ro = RunOptions {
        energy_floor_db: -60.0,
        ..Default::default()
    };
    let runs: Vec<_> = [1, 2].iter().map(|&p| solve(&g, &[Excitation::port(p)], &ro)).collect();
    let recip = s_parameters(&runs, &frequency_grid(50.0, 120.0, 5.0))
        .unwrap()
        .reciprocity_error();
    check("reciprocity", recip < 1e-3, format!(" ({recip:.1e})"));

    let ms = scene(1.2, &[(1, 0.35, 0.45, 0.2), (2, 0.7, 0.8, 0.15)], 0.02, true, 8.0);
    let mm = ms.mirrored_x();
    let (g1, g2) = (grid(&ms), grid(&mm));
    let a = field(&solve(&g1, &[Excitation::port(1)], &monitored(&g1, &[60.0])), &g1, 60.0);
    let b = field(&solve(&g2, &[Excitation::port(1)], &monitored(&g2, &[60.0])), &g2, 60.0);
    let mirror = a.mirrored_x().relative_l2_error(&b);
    check("mirror", mirror < 1e-6, format!(" ({mirror:.1e})"));

    let cavity = scene(1.0, &[(1, 0.5, 0.5, 0.15)], 0.0, false, 8.0);
    let gc = grid(&cavity);
    let src = Excitation {
        target: chipwave::fdtd::ExcitationTarget::SoftEdge {
            component: chipwave::fdtd::Component::Ez,
            i: gc.nx / 3,
            j: gc.ny / 3,
            k: gc.antenna_layer().k0 + 2,
        },
        weight: Complex64::new(1.0, 0.0),
    };
    let base = RunOptions {
        load_passive_ports: false,
        energy_floor_db: -400.0,
        check_interval: 1,
        max_steps: 1,
        ..Default::default()
    };
    let probe = solve(&gc, &[src], &base);
    let ext = (probe.waveform.extinction_time().unwrap() / probe.dt).ceil() as usize + 20;
    let at = |n: usize| {
        solve(
            &gc,
            &[src],
            &RunOptions {
                max_steps: n,
                ..base.clone()
            },
        )
        .final_energy
    };
    let (e0, e1) = (at(ext), at(ext + 1000));
    let drift = (e1 - e0).abs() / e0;
    check("cavity-energy", drift < 1e-3, format!(" ({drift:.1e} over 1000 steps)"));

    let layout = ArrayLayout::grid([0.3, 0.3], 1, 4, 0.1, 1);
    let region = chipwave::metrics::Region::rect(0.0, 0.6, 0.6, 0.6);
    let slib = random_library(&mut rng, 4, plane(12));
    let cfg = SearchConfig {
        phase_step_deg: 90.0,
        ..Default::default()
    };
    let r1 = search::optimize_profile(&slib, &layout, &cfg, &region).unwrap();
    let r2 = search::optimize_profile(&slib, &layout, &cfg, &region).unwrap();
    let mut brute = f64::NEG_INFINITY;
    for code in 0..256usize {
        let p = PhaseProfile::from_phases((0..4).map(|n| (n as u32 + 1, ((code >> (2 * n)) & 3) as f64 * 90.0)));
        brute = brute.max(search::objective_concentration(&combine(&slib, &p).unwrap(), &region).unwrap());
    }
    let rr = SearchConfig {
        strategy: Strategy::RandomRestart,
        seed: 5,
        ..cfg
    };
    let d1 = search::optimize_profile(&slib, &layout, &rr, &region).unwrap();
    let d2 = search::optimize_profile(&slib, &layout, &rr, &region).unwrap();
    check(
        "search",
        r1 == r2 && d1 == d2 && (r1.score - brute).abs() < 1e-12,
        format!(" (best {:.6} vs brute force {brute:.6})", r1.score),
    );
    (ok, notes.join(", "))
}

fn c10_planted() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let lib = random_library(&mut rng, 16, plane(16));
    let layout = ArrayLayout::grid([0.3, 0.3], 4, 4, 0.2, 1);
    let planted = PhaseProfile::from_phases((1..=16).map(|p| (p, 30.0 * rng.gen_range(-5..=6) as f64)));
    let target = combine(&lib, &planted).unwrap();
    let tn = target.l2_norm();
    let cfg = SearchConfig::default();
    let r = optimize_with(&layout, &cfg, false, |p| {
        Ok(-combine(&lib, p)?.relative_l2_error(&target) * tn)
    })
    .unwrap();
    let on_lattice = r
        .profile
        .iter()
        .all(|(_, w)| (w.phase_deg / 30.0 - (w.phase_deg / 30.0).round()).abs() < 1e-9);
    let same = equal_up_to_global_phase(&r.profile, &planted, 1e-9);
    (
        same && on_lattice,
        format!(
            "16 ports, 30° lattice: recovered = {same}, on lattice = {on_lattice}, score {:.12}",
            r.score
        ),
    )
}

fn main() {
    // optional criterion ids to run, e.g. `cargo test --test acceptance -- 9 10`
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let wanted = |id: &str| only.is_empty() || only.iter().any(|o| o == id);
    let mut failed = 0;
    let mut report = |id: &str, name: &str, f: &dyn Fn() -> Outcome| {
        if !wanted(id) {
            return;
        }
        let t = Instant::now();
        let (pass, detail) = match catch_unwind(AssertUnwindSafe(f)) {
            Ok(o) => o,
            Err(e) => {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                (false, format!("panicked: {msg}"))
            }
        };
        if !pass {
            failed += 1;
        }
        println!(
            "[{}] {id:>2} {name}: {detail} [{:.1} s]",
            if pass { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64()
        );
    };
    report("1", "quarter-wave length", &c1_quarter_wave_length);
    report("2", "array footprint", &c2_footprint);
    report("3", "resonance in the package stack", &c3_resonance);
    report("4", "quarter-wave resonance oracle", &c4_quarter_wave_oracle);
    report("5", "coupling versus spacing", &c5_coupling);
    report("6", "superposition versus joint excitation", &c6_superposition);
    let corner = if wanted("7") || wanted("8b") {
        let t = Instant::now();
        let c = catch_unwind(corner_libraries).ok();
        println!(
            "       (two-corner field libraries: {:.1} s)",
            t.elapsed().as_secs_f64()
        );
        c
    } else {
        None
    };
    let iso = |k: usize, thr: f64| -> Outcome {
        match &corner {
            Some((s, libs)) => isolation(s, &libs[k], thr),
            None => (false, "field libraries could not be built".into()),
        }
    };
    report("7", "two-channel isolation at 60 GHz", &|| iso(0, 20.0));
    report("8a", "reflection at 110 GHz", &c8_s11_110);
    report("8b", "two-channel isolation at 110 GHz", &|| iso(1, 10.0));
    report("9", "property suites", &c9_properties);
    report("10", "planted profile recovery", &c10_planted);
    println!("acceptance: {failed} criteria failed");
    if failed > 0 {
        std::process::exit(1);
    }
}
