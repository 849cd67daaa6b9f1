//! Package description: materials, the flip-chip layer stack, chip extent,
//! monopole placement and the discretisation policy.
//!
//! Interfaces use millimetres and gigahertz. Everything here is immutable
//! once [`load_scenario`] (or one of the `Scenario` builders) has validated
//! it.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Speed of light in vacuum, m/s.
pub const C0: f64 = 299_792_458.0;
/// Vacuum permittivity, F/m.
pub const EPS0: f64 = 8.854_187_812_8e-12;
/// Vacuum permeability, H/m.
pub const MU0: f64 = 1.256_637_062_12e-6;

/// Wavelength (mm) of a plane wave at `frequency_ghz` in a medium of
/// relative permittivity `rel_permittivity`.
pub fn wavelength_in_medium(frequency_ghz: f64, rel_permittivity: f64) -> Result<f64> {
    if !(frequency_ghz > 0.0) || !frequency_ghz.is_finite() {
        return Err(Error::Domain(format!(
            "frequency must be positive, got {frequency_ghz} GHz"
        )));
    }
    if !(rel_permittivity >= 1.0) || !rel_permittivity.is_finite() {
        return Err(Error::Domain(format!(
            "relative permittivity must be >= 1, got {rel_permittivity}"
        )));
    }
    Ok(C0 / (rel_permittivity.sqrt() * frequency_ghz * 1e9) * 1e3)
}

/// Quarter-wave monopole length (mm), the starting point for tuning.
pub fn monopole_quarter_wave_length(frequency_ghz: f64, rel_permittivity: f64) -> Result<f64> {
    Ok(wavelength_in_medium(frequency_ghz, rel_permittivity)? / 4.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    /// Bulk resistivity in Ω·cm.
    Resistivity(f64),
    LossTangent(f64),
    PerfectConductor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaterialSpec {
    pub name: String,
    pub rel_permittivity: f64,
    pub loss: Loss,
}

impl MaterialSpec {
    pub fn dielectric(name: &str, rel_permittivity: f64, loss_tangent: f64) -> Self {
        MaterialSpec {
            name: name.to_string(),
            rel_permittivity,
            loss: Loss::LossTangent(loss_tangent),
        }
    }

    pub fn resistive(name: &str, rel_permittivity: f64, resistivity_ohm_cm: f64) -> Self {
        MaterialSpec {
            name: name.to_string(),
            rel_permittivity,
            loss: Loss::Resistivity(resistivity_ohm_cm),
        }
    }

    pub fn perfect_conductor(name: &str) -> Self {
        MaterialSpec {
            name: name.to_string(),
            rel_permittivity: 1.0,
            loss: Loss::PerfectConductor,
        }
    }

    pub fn is_conductor(&self) -> bool {
        matches!(self.loss, Loss::PerfectConductor)
    }

    /// Effective conductivity in S/m at `frequency_hz`. Loss tangents are
    /// converted with σ = 2π f ε0 εr tanδ.
    pub fn conductivity(&self, frequency_hz: f64) -> f64 {
        match self.loss {
            Loss::Resistivity(rho_ohm_cm) => 1.0 / (rho_ohm_cm * 1e-2),
            Loss::LossTangent(tan_d) => {
                2.0 * std::f64::consts::PI * frequency_hz * EPS0 * self.rel_permittivity * tan_d
            }
            Loss::PerfectConductor => f64::INFINITY,
        }
    }

    /// Same material with loss removed (conductors stay conductors).
    pub fn lossless(&self) -> Self {
        let loss = match self.loss {
            Loss::PerfectConductor => Loss::PerfectConductor,
            _ => Loss::LossTangent(0.0),
        };
        MaterialSpec { loss, ..self.clone() }
    }

    fn validate(&self) -> Result<()> {
        match self.loss {
            Loss::PerfectConductor => Ok(()),
            Loss::Resistivity(rho) if !(rho > 0.0) => Err(Error::Validation(format!(
                "material '{}': resistivity must be > 0",
                self.name
            ))),
            Loss::LossTangent(t) if !(t >= 0.0) => Err(Error::Validation(format!(
                "material '{}': loss tangent must be >= 0",
                self.name
            ))),
            _ if !(self.rel_permittivity >= 1.0) => Err(Error::Validation(format!(
                "material '{}': relative permittivity must be >= 1",
                self.name
            ))),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub material: MaterialSpec,
    pub thickness_mm: f64,
}

/// Layers ordered top to bottom. The bottom layer is the bump/interconnect
/// conductor that acts as the ground plane.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerStack {
    pub layers: Vec<Layer>,
    pub lateral_spacer: Option<Layer>,
}

impl LayerStack {
    pub fn total_height_mm(&self) -> f64 {
        self.layers.iter().map(|l| l.thickness_mm).sum()
    }

    /// Highest permittivity among the dielectric layers (and the spacer).
    pub fn max_rel_permittivity(&self) -> f64 {
        self.layers
            .iter()
            .chain(self.lateral_spacer.iter())
            .filter(|l| !l.material.is_conductor())
            .map(|l| l.material.rel_permittivity)
            .fold(1.0, f64::max)
    }

    /// Index (top-to-bottom) of the layer hosting the monopoles: the
    /// highest-permittivity dielectric.
    pub fn antenna_layer(&self) -> usize {
        let mut best = 0;
        let mut best_eps = f64::NEG_INFINITY;
        for (n, l) in self.layers.iter().enumerate() {
            if !l.material.is_conductor() && l.material.rel_permittivity > best_eps {
                best = n;
                best_eps = l.material.rel_permittivity;
            }
        }
        best
    }

    fn validate(&self) -> Result<()> {
        if self.layers.len() < 2 {
            return Err(Error::Validation(
                "layer stack needs a dielectric and a ground conductor".into(),
            ));
        }
        for l in self.layers.iter().chain(self.lateral_spacer.iter()) {
            l.material.validate()?;
            if !(l.thickness_mm > 0.0) {
                return Err(Error::Validation(format!(
                    "layer '{}' must have positive thickness",
                    l.material.name
                )));
            }
        }
        let (bottom, rest) = self.layers.split_last().unwrap();
        if !bottom.material.is_conductor() {
            return Err(Error::Validation(
                "bottom layer must be a conductor (ground plane)".into(),
            ));
        }
        if rest.iter().any(|l| l.material.is_conductor()) {
            return Err(Error::Validation("only the bottom layer may be a conductor".into()));
        }
        if let Some(s) = &self.lateral_spacer {
            if s.material.is_conductor() {
                return Err(Error::Validation("lateral spacer must be a dielectric".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonopoleElement {
    #[serde(rename = "port")]
    pub port_id: u32,
    pub x_mm: f64,
    pub y_mm: f64,
    pub length_mm: f64,
    pub radius_mm: f64,
}

impl MonopoleElement {
    pub fn position(&self) -> [f64; 2] {
        [self.x_mm, self.y_mm]
    }
}

/// Rectangular grid of elements. Element (row `i`, col `j`) sits at
/// `origin + (j·spacing, i·spacing)`; `port_ids` is row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayLayout {
    pub origin_mm: [f64; 2],
    pub rows: usize,
    pub cols: usize,
    pub spacing_mm: f64,
    pub port_ids: Vec<u32>,
}

impl ArrayLayout {
    /// Layout with consecutive port ids starting at `first_port`.
    pub fn grid(origin_mm: [f64; 2], rows: usize, cols: usize, spacing_mm: f64, first_port: u32) -> Self {
        ArrayLayout {
            origin_mm,
            rows,
            cols,
            spacing_mm,
            port_ids: (0..(rows * cols) as u32).map(|n| first_port + n).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// (row, col) of the element at row-major index `n`.
    pub fn row_col(&self, n: usize) -> (usize, usize) {
        (n / self.cols, n % self.cols)
    }

    pub fn position(&self, n: usize) -> [f64; 2] {
        let (i, j) = self.row_col(n);
        [
            self.origin_mm[0] + j as f64 * self.spacing_mm,
            self.origin_mm[1] + i as f64 * self.spacing_mm,
        ]
    }

    pub fn positions(&self) -> Vec<[f64; 2]> {
        (0..self.len()).map(|n| self.position(n)).collect()
    }

    /// Extent along x and y (mm).
    pub fn span_mm(&self) -> [f64; 2] {
        [
            self.cols.saturating_sub(1) as f64 * self.spacing_mm,
            self.rows.saturating_sub(1) as f64 * self.spacing_mm,
        ]
    }

    /// Geometric centre (mm).
    pub fn center_mm(&self) -> [f64; 2] {
        let s = self.span_mm();
        [self.origin_mm[0] + s[0] / 2.0, self.origin_mm[1] + s[1] / 2.0]
    }

    /// Index of `port` within the layout.
    pub fn index_of(&self, port: u32) -> Option<usize> {
        self.port_ids.iter().position(|&p| p == port)
    }

    /// Same layout rotated by 180° about `center` (port order kept), so
    /// element n of the result is the point reflection of element n here.
    pub fn point_reflected(&self, center: [f64; 2], port_ids: Vec<u32>) -> Self {
        let s = self.span_mm();
        let far = [self.origin_mm[0] + s[0], self.origin_mm[1] + s[1]];
        let origin = [2.0 * center[0] - far[0], 2.0 * center[1] - far[1]];
        let mut reversed = port_ids;
        reversed.reverse();
        ArrayLayout {
            origin_mm: origin,
            rows: self.rows,
            cols: self.cols,
            spacing_mm: self.spacing_mm,
            port_ids: reversed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::Validation("array must have at least one row and column".into()));
        }
        if self.rows * self.cols != self.port_ids.len() {
            return Err(Error::Validation(format!(
                "array is {}x{} but lists {} port ids",
                self.rows,
                self.cols,
                self.port_ids.len()
            )));
        }
        if !(self.spacing_mm > 0.0) {
            return Err(Error::Validation("array spacing must be positive".into()));
        }
        Ok(())
    }
}

/// Footprint (mm²) spanned by the element centres. A single row or column
/// spans zero area; use [`ArrayLayout::span_mm`] for its length.
pub fn array_footprint(layout: &ArrayLayout) -> f64 {
    let s = layout.span_mm();
    s[0] * s[1]
}

/// An array that was expanded into the element list, kept for profiles and
/// for serialisation.
#[derive(Debug, Clone, PartialEq)]
pub struct PlacedArray {
    pub name: String,
    pub layout: ArrayLayout,
    pub length_mm: f64,
    pub radius_mm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    PerfectConductor,
    Absorbing,
}

/// Boundary condition per face of the computational box.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundaryPolicy {
    pub x_low: Boundary,
    pub x_high: Boundary,
    pub y_low: Boundary,
    pub y_high: Boundary,
    pub top: Boundary,
    pub bottom: Boundary,
}

impl BoundaryPolicy {
    pub fn closed() -> Self {
        Self::lateral(Boundary::PerfectConductor)
    }

    /// Given lateral faces, conducting top (heat sink) and bottom (bumps).
    pub fn lateral(b: Boundary) -> Self {
        BoundaryPolicy {
            x_low: b,
            x_high: b,
            y_low: b,
            y_high: b,
            top: Boundary::PerfectConductor,
            bottom: Boundary::PerfectConductor,
        }
    }

    pub fn faces(&self) -> [Boundary; 6] {
        [self.x_low, self.x_high, self.y_low, self.y_high, self.bottom, self.top]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridPolicy {
    /// Lateral cells per wavelength in the densest medium at the scenario
    /// frequency.
    pub cells_per_wavelength: f64,
    /// Optional cap on the vertical cell size (mm).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_dz_mm: Option<f64>,
    /// Side of the square feed pad under each monopole (mm). The feed gap
    /// capacitance is that of this pad rather than of a whole cell, which
    /// keeps the port model independent of the lateral cell size.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub feed_pad_mm: Option<f64>,
    /// Reference impedance of every lumped port (Ω).
    pub port_impedance_ohm: f64,
    pub pml_cells: usize,
    /// Courant safety factor in (0, 1].
    pub courant: f64,
    pub thin_wire: bool,
    pub max_cells: usize,
}

impl Default for GridPolicy {
    fn default() -> Self {
        GridPolicy {
            cells_per_wavelength: 10.0,
            max_dz_mm: None,
            feed_pad_mm: None,
            port_impedance_ohm: crate::fdtd::PORT_IMPEDANCE,
            pml_cells: 8,
            courant: 0.95,
            thin_wire: true,
            max_cells: 8_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub chip_extent_mm: [f64; 2],
    pub stack: LayerStack,
    pub elements: Vec<MonopoleElement>,
    pub arrays: Vec<PlacedArray>,
    pub frequency_ghz: f64,
    pub boundaries: BoundaryPolicy,
    pub grid: GridPolicy,
}

impl Scenario {
    pub fn element(&self, port: u32) -> Option<&MonopoleElement> {
        self.elements.iter().find(|e| e.port_id == port)
    }

    pub fn port_ids(&self) -> Vec<u32> {
        self.elements.iter().map(|e| e.port_id).collect()
    }

    pub fn array(&self, name: &str) -> Option<&PlacedArray> {
        self.arrays.iter().find(|a| a.name == name)
    }

    pub fn antenna_layer(&self) -> &Layer {
        &self.stack.layers[self.stack.antenna_layer()]
    }

    /// Wavelength in the densest medium at the scenario frequency (mm).
    pub fn min_wavelength_mm(&self) -> f64 {
        wavelength_in_medium(self.frequency_ghz, self.stack.max_rel_permittivity()).expect("validated scenario")
    }

    pub fn with_frequency(&self, frequency_ghz: f64) -> Result<Self> {
        let mut s = self.clone();
        s.frequency_ghz = frequency_ghz;
        s.validate()?;
        Ok(s)
    }

    pub fn with_cells_per_wavelength(&self, cells: f64) -> Result<Self> {
        let mut s = self.clone();
        s.grid.cells_per_wavelength = cells;
        s.validate()?;
        Ok(s)
    }

    /// Every element gets `length_mm`.
    pub fn with_monopole_length(&self, length_mm: f64) -> Result<Self> {
        let mut s = self.clone();
        for e in &mut s.elements {
            e.length_mm = length_mm;
        }
        for a in &mut s.arrays {
            a.length_mm = length_mm;
        }
        s.validate()?;
        Ok(s)
    }

    /// Same scenario with every dielectric made lossless.
    pub fn lossless(&self) -> Self {
        let mut s = self.clone();
        for l in s.stack.layers.iter_mut().chain(s.stack.lateral_spacer.iter_mut()) {
            l.material = l.material.lossless();
        }
        s
    }

    /// Geometry mirrored across x = W/2.
    pub fn mirrored_x(&self) -> Self {
        let w = self.chip_extent_mm[0];
        let mut s = self.clone();
        for e in &mut s.elements {
            e.x_mm = w - e.x_mm;
        }
        for a in &mut s.arrays {
            let span = a.layout.span_mm()[0];
            a.layout.origin_mm[0] = w - a.layout.origin_mm[0] - span;
            // columns now run the other way
            let (rows, cols) = (a.layout.rows, a.layout.cols);
            let old = a.layout.port_ids.clone();
            for i in 0..rows {
                for j in 0..cols {
                    a.layout.port_ids[i * cols + j] = old[i * cols + (cols - 1 - j)];
                }
            }
        }
        std::mem::swap(&mut s.boundaries.x_low, &mut s.boundaries.x_high);
        s
    }

    /// Drop the listed ports, and any placed array that owned them.
    pub fn remove_ports(&self, ports: &[u32]) -> Self {
        let drop: BTreeSet<u32> = ports.iter().copied().collect();
        let mut s = self.clone();
        s.elements.retain(|e| !drop.contains(&e.port_id));
        s.arrays.retain(|a| !a.layout.port_ids.iter().any(|p| drop.contains(p)));
        s
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.frequency_ghz > 0.0) || !self.frequency_ghz.is_finite() {
            return Err(Error::Validation("frequency must be positive".into()));
        }
        let [w, d] = self.chip_extent_mm;
        if !(w > 0.0 && d > 0.0) {
            return Err(Error::Validation("chip extent must be positive".into()));
        }
        self.stack.validate()?;
        let g = &self.grid;
        if !(g.cells_per_wavelength >= 4.0) {
            return Err(Error::Validation("cells_per_wavelength must be >= 4".into()));
        }
        if !(g.courant > 0.0 && g.courant <= 1.0) {
            return Err(Error::Validation("courant factor must lie in (0, 1]".into()));
        }
        if let Some(dz) = g.max_dz_mm {
            if !(dz > 0.0) {
                return Err(Error::Validation("max_dz_mm must be positive".into()));
            }
        }
        if !(g.port_impedance_ohm > 0.0 && g.port_impedance_ohm.is_finite()) {
            return Err(Error::Validation("port_impedance_ohm must be positive".into()));
        }
        if let Some(pad) = g.feed_pad_mm {
            if !(pad > 0.0) {
                return Err(Error::Validation("feed_pad_mm must be positive".into()));
            }
        }
        if self.elements.is_empty() {
            return Err(Error::Validation("no antenna elements".into()));
        }
        let host = self.antenna_layer();
        let mut seen = BTreeSet::new();
        for e in &self.elements {
            if !seen.insert(e.port_id) {
                return Err(Error::Validation(format!("duplicate port id {}", e.port_id)));
            }
            if !(e.x_mm >= 0.0 && e.x_mm <= w && e.y_mm >= 0.0 && e.y_mm <= d) {
                return Err(Error::Validation(format!(
                    "element outside chip extent: port {} at ({}, {}) mm",
                    e.port_id, e.x_mm, e.y_mm
                )));
            }
            if !(e.radius_mm > 0.0 && e.length_mm > 0.0) {
                return Err(Error::Validation(format!(
                    "port {}: length and radius must be positive",
                    e.port_id
                )));
            }
            if e.length_mm >= host.thickness_mm {
                return Err(Error::Validation(format!(
                    "port {}: monopole length {} mm must be shorter than the {} layer ({} mm)",
                    e.port_id, e.length_mm, host.material.name, host.thickness_mm
                )));
            }
            if e.length_mm / e.radius_mm <= 10.0 {
                return Err(Error::Validation(format!(
                    "port {}: monopole aspect ratio must exceed 10",
                    e.port_id
                )));
            }
        }
        for (n, a) in self.elements.iter().enumerate() {
            for b in &self.elements[n + 1..] {
                let dist = (a.x_mm - b.x_mm).hypot(a.y_mm - b.y_mm);
                if dist <= a.radius_mm + b.radius_mm {
                    return Err(Error::Validation(format!(
                        "elements {} and {} overlap",
                        a.port_id, b.port_id
                    )));
                }
            }
        }
        for a in &self.arrays {
            a.layout.validate()?;
            if a.layout.spacing_mm <= 2.0 * a.radius_mm {
                return Err(Error::Validation(format!(
                    "array '{}': spacing must exceed twice the radius",
                    a.name
                )));
            }
            for &p in &a.layout.port_ids {
                if self.element(p).is_none() {
                    return Err(Error::Validation(format!(
                        "array '{}' references missing port {p}",
                        a.name
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Add `layout.rows × layout.cols` copies of `template` on the layout grid.
/// The template's position and port id are ignored.
pub fn place_array(
    scenario: &Scenario,
    name: &str,
    layout: &ArrayLayout,
    template: &MonopoleElement,
) -> Result<Scenario> {
    layout.validate()?;
    let [w, d] = scenario.chip_extent_mm;
    for (n, [x, y]) in layout.positions().into_iter().enumerate() {
        if !(x >= 0.0 && x <= w && y >= 0.0 && y <= d) {
            return Err(Error::Geometry(format!(
                "array element {} at ({x:.4}, {y:.4}) mm is outside the {w}x{d} mm chip",
                layout.port_ids[n]
            )));
        }
    }
    if layout.spacing_mm <= 2.0 * template.radius_mm {
        return Err(Error::Geometry(format!(
            "array spacing {} mm overlaps elements of radius {} mm",
            layout.spacing_mm, template.radius_mm
        )));
    }
    let existing: BTreeSet<u32> = scenario.elements.iter().map(|e| e.port_id).collect();
    if let Some(p) = layout.port_ids.iter().find(|p| existing.contains(p)) {
        return Err(Error::Geometry(format!("port id {p} already in use")));
    }
    let mut s = scenario.clone();
    for (n, [x, y]) in layout.positions().into_iter().enumerate() {
        s.elements.push(MonopoleElement {
            port_id: layout.port_ids[n],
            x_mm: x,
            y_mm: y,
            ..*template
        });
    }
    s.arrays.push(PlacedArray {
        name: name.to_string(),
        layout: layout.clone(),
        length_mm: template.length_mm,
        radius_mm: template.radius_mm,
    });
    s.validate().map_err(|e| match e {
        Error::Validation(m) if m.contains("overlap") => Error::Geometry(m),
        other => other,
    })?;
    Ok(s)
}

// ---------------------------------------------------------------------------
// Text configuration

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MaterialConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rel_permittivity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    resistivity_ohm_cm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    loss_tangent: Option<f64>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    perfect_conductor: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerConfig {
    material: String,
    thickness_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArrayConfig {
    name: String,
    origin_mm: [f64; 2],
    rows: usize,
    cols: usize,
    spacing_mm: f64,
    port_ids: Vec<u32>,
    length_mm: f64,
    radius_mm: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BoundaryConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lateral: Option<Boundary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    x_low: Option<Boundary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    x_high: Option<Boundary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    y_low: Option<Boundary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    y_high: Option<Boundary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    top: Option<Boundary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bottom: Option<Boundary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioConfig {
    name: String,
    frequency_ghz: f64,
    chip_mm: [f64; 2],
    materials: BTreeMap<String, MaterialConfig>,
    /// top to bottom
    stack: Vec<LayerConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lateral_spacer: Option<LayerConfig>,
    #[serde(default)]
    elements: Vec<MonopoleElement>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    arrays: Vec<ArrayConfig>,
    #[serde(default)]
    boundaries: BoundaryConfig,
    #[serde(default)]
    grid: GridPolicy,
}

fn material_from_config(name: &str, m: &MaterialConfig) -> Result<MaterialSpec> {
    let set = [
        m.resistivity_ohm_cm.is_some(),
        m.loss_tangent.is_some(),
        m.perfect_conductor,
    ]
    .iter()
    .filter(|b| **b)
    .count();
    if set != 1 {
        return Err(Error::Validation(format!(
            "material '{name}' must set exactly one of resistivity_ohm_cm, loss_tangent, perfect_conductor"
        )));
    }
    let loss = if m.perfect_conductor {
        Loss::PerfectConductor
    } else if let Some(r) = m.resistivity_ohm_cm {
        Loss::Resistivity(r)
    } else {
        Loss::LossTangent(m.loss_tangent.unwrap())
    };
    let rel_permittivity = match (loss, m.rel_permittivity) {
        (Loss::PerfectConductor, p) => p.unwrap_or(1.0),
        (_, Some(p)) => p,
        (_, None) => return Err(Error::Validation(format!("material '{name}' needs rel_permittivity"))),
    };
    let spec = MaterialSpec {
        name: name.to_string(),
        rel_permittivity,
        loss,
    };
    spec.validate()?;
    Ok(spec)
}

fn material_to_config(m: &MaterialSpec) -> MaterialConfig {
    match m.loss {
        Loss::PerfectConductor => MaterialConfig {
            perfect_conductor: true,
            ..Default::default()
        },
        Loss::Resistivity(r) => MaterialConfig {
            rel_permittivity: Some(m.rel_permittivity),
            resistivity_ohm_cm: Some(r),
            ..Default::default()
        },
        Loss::LossTangent(t) => MaterialConfig {
            rel_permittivity: Some(m.rel_permittivity),
            loss_tangent: Some(t),
            ..Default::default()
        },
    }
}

impl ScenarioConfig {
    fn into_scenario(self) -> Result<Scenario> {
        let mut materials = BTreeMap::new();
        for (name, m) in &self.materials {
            materials.insert(name.clone(), material_from_config(name, m)?);
        }
        let layer = |l: &LayerConfig| -> Result<Layer> {
            let material = materials
                .get(&l.material)
                .cloned()
                .ok_or_else(|| Error::Validation(format!("undefined material '{}'", l.material)))?;
            Ok(Layer {
                material,
                thickness_mm: l.thickness_mm,
            })
        };
        let stack = LayerStack {
            layers: self.stack.iter().map(layer).collect::<Result<_>>()?,
            lateral_spacer: self.lateral_spacer.as_ref().map(layer).transpose()?,
        };
        let b = &self.boundaries;
        let lat = b.lateral.unwrap_or(Boundary::PerfectConductor);
        let boundaries = BoundaryPolicy {
            x_low: b.x_low.unwrap_or(lat),
            x_high: b.x_high.unwrap_or(lat),
            y_low: b.y_low.unwrap_or(lat),
            y_high: b.y_high.unwrap_or(lat),
            top: b.top.unwrap_or(Boundary::PerfectConductor),
            bottom: b.bottom.unwrap_or(Boundary::PerfectConductor),
        };
        if boundaries.bottom != Boundary::PerfectConductor {
            return Err(Error::Validation(
                "bottom boundary is the ground plane and must be perfect_conductor".into(),
            ));
        }
        let mut scenario = Scenario {
            name: self.name,
            chip_extent_mm: self.chip_mm,
            stack,
            elements: self.elements,
            arrays: Vec::new(),
            frequency_ghz: self.frequency_ghz,
            boundaries,
            grid: self.grid,
        };
        for a in self.arrays {
            let layout = ArrayLayout {
                origin_mm: a.origin_mm,
                rows: a.rows,
                cols: a.cols,
                spacing_mm: a.spacing_mm,
                port_ids: a.port_ids,
            };
            let template = MonopoleElement {
                port_id: 0,
                x_mm: 0.0,
                y_mm: 0.0,
                length_mm: a.length_mm,
                radius_mm: a.radius_mm,
            };
            // element checks run once everything is placed
            scenario = place_array_unchecked(scenario, &a.name, &layout, &template)?;
        }
        scenario.validate()?;
        Ok(scenario)
    }
}

fn place_array_unchecked(
    mut s: Scenario,
    name: &str,
    layout: &ArrayLayout,
    template: &MonopoleElement,
) -> Result<Scenario> {
    layout.validate()?;
    for (n, [x, y]) in layout.positions().into_iter().enumerate() {
        s.elements.push(MonopoleElement {
            port_id: layout.port_ids[n],
            x_mm: x,
            y_mm: y,
            ..*template
        });
    }
    s.arrays.push(PlacedArray {
        name: name.to_string(),
        layout: layout.clone(),
        length_mm: template.length_mm,
        radius_mm: template.radius_mm,
    });
    Ok(s)
}

/// Parse and validate a JSON scenario description.
pub fn load_scenario(config_text: &str) -> Result<Scenario> {
    let cfg: ScenarioConfig = serde_json::from_str(config_text)?;
    cfg.into_scenario()
}

/// Serialise a scenario back to the JSON configuration format accepted by
/// [`load_scenario`].
pub fn serialize_scenario(s: &Scenario) -> String {
    let mut materials = BTreeMap::new();
    for l in s.stack.layers.iter().chain(s.stack.lateral_spacer.iter()) {
        materials.insert(l.material.name.clone(), material_to_config(&l.material));
    }
    let layer = |l: &Layer| LayerConfig {
        material: l.material.name.clone(),
        thickness_mm: l.thickness_mm,
    };
    let array_ports: BTreeSet<u32> = s
        .arrays
        .iter()
        .flat_map(|a| a.layout.port_ids.iter().copied())
        .collect();
    let b = s.boundaries;
    let cfg = ScenarioConfig {
        name: s.name.clone(),
        frequency_ghz: s.frequency_ghz,
        chip_mm: s.chip_extent_mm,
        materials,
        stack: s.stack.layers.iter().map(layer).collect(),
        lateral_spacer: s.stack.lateral_spacer.as_ref().map(layer),
        elements: s
            .elements
            .iter()
            .filter(|e| !array_ports.contains(&e.port_id))
            .copied()
            .collect(),
        arrays: s
            .arrays
            .iter()
            .map(|a| ArrayConfig {
                name: a.name.clone(),
                origin_mm: a.layout.origin_mm,
                rows: a.layout.rows,
                cols: a.layout.cols,
                spacing_mm: a.layout.spacing_mm,
                port_ids: a.layout.port_ids.clone(),
                length_mm: a.length_mm,
                radius_mm: a.radius_mm,
            })
            .collect(),
        boundaries: BoundaryConfig {
            lateral: None,
            x_low: Some(b.x_low),
            x_high: Some(b.x_high),
            y_low: Some(b.y_low),
            y_high: Some(b.y_high),
            top: Some(b.top),
            bottom: Some(b.bottom),
        },
        grid: s.grid,
    };
    serde_json::to_string_pretty(&cfg).expect("scenario config serialises")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bare() -> Scenario {
        crate::presets::scenario("flipchip-60ghz").unwrap()
    }

    #[test]
    fn wavelength_rejects_bad_inputs() {
        assert!(matches!(wavelength_in_medium(0.0, 11.9), Err(Error::Domain(_))));
        assert!(matches!(wavelength_in_medium(-5.0, 11.9), Err(Error::Domain(_))));
        assert!(matches!(wavelength_in_medium(60.0, 0.5), Err(Error::Domain(_))));
    }

    #[test]
    fn wavelength_scales_inversely_with_frequency() {
        let a = wavelength_in_medium(60.0, 11.9).unwrap();
        let b = wavelength_in_medium(120.0, 11.9).unwrap();
        assert!((a / 2.0 - b).abs() < 1e-12);
    }

    #[test]
    fn conductivity_conversions() {
        let si = MaterialSpec::resistive("si", 11.9, 10.0);
        assert!((si.conductivity(60e9) - 10.0).abs() < 1e-12);
        let aln = MaterialSpec::dielectric("aln", 8.6, 3e-4);
        let expect = 2.0 * std::f64::consts::PI * 60e9 * EPS0 * 8.6 * 3e-4;
        assert!((aln.conductivity(60e9) - expect).abs() < 1e-15);
    }

    #[test]
    fn element_outside_chip_is_rejected() {
        let mut s = bare();
        s.elements[0].x_mm = 11.0;
        s.elements[0].y_mm = 5.0;
        let err = s.validate().unwrap_err();
        assert!(err.to_string().contains("element outside chip extent"), "{err}");
    }

    #[test]
    fn zero_elements_rejected() {
        let mut s = bare();
        s.elements.clear();
        let err = s.validate().unwrap_err();
        assert!(err.to_string().contains("no antenna elements"), "{err}");
    }

    #[test]
    fn monopole_must_fit_in_host_layer() {
        let err = bare().with_monopole_length(0.5).unwrap_err();
        assert!(err.to_string().contains("shorter than"), "{err}");
    }

    #[test]
    fn material_needs_exactly_one_loss() {
        let text = serialize_scenario(&bare()).replace(
            "\"loss_tangent\": 0.0003",
            "\"loss_tangent\": 0.0003, \"resistivity_ohm_cm\": 5.0",
        );
        let err = load_scenario(&text).unwrap_err();
        assert!(err.to_string().contains("exactly one"), "{err}");
    }

    #[test]
    fn undefined_material_is_reported() {
        let text = serialize_scenario(&bare()).replace("\"material\": \"silicon\"", "\"material\": \"unobtainium\"");
        let err = load_scenario(&text).unwrap_err();
        assert!(err.to_string().contains("undefined material"), "{err}");
    }

    #[test]
    fn malformed_text_is_a_parse_error() {
        assert!(matches!(load_scenario("{ not json"), Err(Error::Parse(_))));
    }

    #[test]
    fn bottom_layer_must_conduct() {
        let mut s = bare();
        s.stack.layers.pop();
        assert!(s.validate().is_err());
    }

    #[test]
    fn degenerate_array_adds_single_element_at_origin() {
        let s = bare();
        let layout = ArrayLayout::grid([2.0, 3.0], 1, 1, 0.3, 100);
        let t = s.elements[0];
        let placed = place_array(&s, "one", &layout, &t).unwrap();
        assert_eq!(placed.elements.len(), s.elements.len() + 1);
        let e = placed.element(100).unwrap();
        assert_eq!((e.x_mm, e.y_mm), (2.0, 3.0));
    }

    #[test]
    fn array_out_of_bounds() {
        let s = bare();
        let layout = ArrayLayout::grid([9.5, 9.5], 4, 4, 0.3624, 100);
        let err = place_array(&s, "a", &layout, &s.elements[0]).unwrap_err();
        assert!(matches!(err, Error::Geometry(_)), "{err}");
    }

    #[test]
    fn array_port_collision() {
        let s = bare();
        let layout = ArrayLayout::grid([1.0, 1.0], 2, 2, 0.3624, 1);
        assert!(place_array(&s, "a", &layout, &s.elements[0]).is_err());
    }

    #[test]
    fn line_array_has_zero_footprint() {
        let l = ArrayLayout::grid([0.0, 0.0], 1, 5, 0.25, 1);
        assert_eq!(array_footprint(&l), 0.0);
        assert!((l.span_mm()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn point_reflection_maps_corners() {
        let l = ArrayLayout::grid([1.0, 1.0], 4, 4, 0.5, 1);
        let r = l.point_reflected([5.0, 5.0], (17..33).collect());
        assert_eq!(r.port_ids[0], 32);
        // element 0 of the reflection is the far corner
        let p = r.position(0);
        assert!((p[0] - 7.5).abs() < 1e-12 && (p[1] - 7.5).abs() < 1e-12);
        let q = r.position(15);
        assert!((q[0] - 9.0).abs() < 1e-12 && (q[1] - 9.0).abs() < 1e-12);
    }

    #[test]
    fn mirrored_scenario_is_an_involution() {
        let s = crate::presets::scenario("two-corner-arrays").unwrap();
        let m = s.mirrored_x().mirrored_x();
        assert_eq!(m.elements.len(), s.elements.len());
        for (a, b) in m.elements.iter().zip(&s.elements) {
            assert_eq!(a.port_id, b.port_id);
            assert!((a.x_mm - b.x_mm).abs() < 1e-12);
        }
        for (a, b) in m.arrays.iter().zip(&s.arrays) {
            assert_eq!(a.layout.port_ids, b.layout.port_ids);
            assert!((a.layout.origin_mm[0] - b.layout.origin_mm[0]).abs() < 1e-12);
            assert!((a.layout.origin_mm[1] - b.layout.origin_mm[1]).abs() < 1e-12);
        }
    }
}
