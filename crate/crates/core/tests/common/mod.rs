#![allow(dead_code)]

use chipwave::fdtd::{discretize, run_with, ComplexFieldMap, Excitation, Grid, Monitor, RunOptions, RunResult};
use chipwave::scenario::{load_scenario, Scenario};

/// Element as (port, x, y, length) in mm.
pub type El = (u32, f64, f64, f64);

/// Small silicon-over-ground scene: `w × w` mm chip, 0.3 mm silicon with
/// the given loss tangent, conducting walls unless `absorbing`.
pub fn scene(w: f64, elements: &[El], loss_tangent: f64, absorbing: bool, cells: f64) -> Scenario {
    let els: Vec<String> = elements
        .iter()
        .map(|(p, x, y, l)| {
            format!(r#"{{"port": {p}, "x_mm": {x}, "y_mm": {y}, "length_mm": {l}, "radius_mm": 0.005}}"#)
        })
        .collect();
    let lateral = if absorbing { "absorbing" } else { "perfect_conductor" };
    let text = format!(
        r#"{{
  "name": "test-scene",
  "frequency_ghz": 60.0,
  "chip_mm": [{w}, {w}],
  "materials": {{
    "silicon": {{ "rel_permittivity": 11.9, "loss_tangent": {loss_tangent} }},
    "copper": {{ "perfect_conductor": true }}
  }},
  "stack": [
    {{ "material": "silicon", "thickness_mm": 0.3 }},
    {{ "material": "copper", "thickness_mm": 0.05 }}
  ],
  "elements": [{}],
  "boundaries": {{ "lateral": "{lateral}" }},
  "grid": {{ "cells_per_wavelength": {cells}, "max_dz_mm": 0.05, "pml_cells": 6, "feed_pad_mm": 0.07 }}
}}"#,
        els.join(", ")
    );
    load_scenario(&text).expect("test scene")
}

/// Two elements placed without any symmetry, lossy silicon, open sides.
pub fn asymmetric_pair() -> Scenario {
    scene(1.4, &[(1, 0.45, 0.4, 0.2), (2, 0.95, 0.85, 0.26)], 0.02, true, 10.0)
}

/// Staircased posts instead of the thin-wire correction; needs a fine mesh.
pub fn solid_posts(mut s: Scenario) -> Scenario {
    s.grid.thin_wire = false;
    for e in &mut s.elements {
        e.radius_mm = 0.025;
    }
    s
}

pub fn monitored(grid: &Grid, freqs: &[f64]) -> RunOptions {
    RunOptions {
        monitors: vec![Monitor {
            plane: grid.default_plane(),
            frequencies_ghz: freqs.to_vec(),
        }],
        ..Default::default()
    }
}

pub fn grid(s: &Scenario) -> Grid {
    discretize(s).expect("discretize")
}

pub fn solve(grid: &Grid, ex: &[Excitation], opts: &RunOptions) -> RunResult {
    run_with(grid, ex, opts.clone()).expect("run")
}

pub fn field(r: &RunResult, grid: &Grid, f: f64) -> ComplexFieldMap {
    chipwave::fdtd::extract_phasor_field(r, f, &grid.default_plane()).expect("field")
}
