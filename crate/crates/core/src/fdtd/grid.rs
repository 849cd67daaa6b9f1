use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::scenario::{serialize_scenario, Boundary, Scenario, C0, EPS0};

/// Reference impedance of every lumped port (Ω).
pub const PORT_IMPEDANCE: f64 = 50.0;
/// Below this the loaded gap edge turns unstable at the Courant limit.
pub const MIN_GAP_EPS_SCALE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellMaterial {
    pub rel_permittivity: f64,
    /// S/m at the scenario frequency
    pub conductivity: f64,
}

/// Vertical thin wire occupying the z-edges `0..k_top` above node (i, j).
/// Edge 0 is the feed gap; edges `1..k_top` are conductor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Wire {
    pub port_id: u32,
    pub i: usize,
    pub j: usize,
    pub k_top: usize,
    pub radius_m: f64,
    /// Sub-cell radius handled by the log-profile correction.
    pub thin: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LumpedPort {
    pub port_id: u32,
    pub i: usize,
    pub j: usize,
    pub k: usize,
    pub impedance: f64,
    /// feed-gap permittivity relative to the surrounding medium
    pub gap_eps_scale: f64,
}

/// Horizontal observation plane: cell centres `(i0 + a + ½, j0 + b + ½)` for
/// `a < ni`, `b < nj`, at node plane `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PlaneSpec {
    pub k: usize,
    pub i0: usize,
    pub j0: usize,
    pub ni: usize,
    pub nj: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerSlab {
    pub name: String,
    pub k0: usize,
    pub k1: usize,
}

/// Discretised scenario. Lengths are in metres.
#[derive(Debug, Clone)]
pub struct Grid {
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub dt: f64,
    pub frequency_hz: f64,
    pub materials: Vec<CellMaterial>,
    /// `(i * ny + j) * nz + k`
    pub cell_material: Vec<u8>,
    /// PML thickness in cells: x_low, x_high, y_low, y_high, bottom, top
    pub pml: [usize; 6],
    /// node index of the chip's (0, 0) corner
    pub chip_origin: [usize; 2],
    pub chip_cells: [usize; 2],
    /// bottom-up layer slabs
    pub layers: Vec<LayerSlab>,
    pub antenna_slab: usize,
    pub wires: Vec<Wire>,
    pub ports: Vec<LumpedPort>,
    pub fingerprint: String,
}

impl Grid {
    pub fn cell_count(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn material_at(&self, i: usize, j: usize, k: usize) -> CellMaterial {
        self.materials[self.cell_material[(i * self.ny + j) * self.nz + k] as usize]
    }

    pub fn port(&self, port_id: u32) -> Option<&LumpedPort> {
        self.ports.iter().find(|p| p.port_id == port_id)
    }

    pub fn wire(&self, port_id: u32) -> Option<&Wire> {
        self.wires.iter().find(|w| w.port_id == port_id)
    }

    /// Largest phase velocity in the grid.
    pub fn max_speed(&self) -> f64 {
        let min_eps = self
            .materials
            .iter()
            .map(|m| m.rel_permittivity)
            .fold(f64::INFINITY, f64::min);
        C0 / min_eps.sqrt()
    }

    /// Courant-limited time step for safety factor `s`.
    pub fn courant_dt(&self, s: f64) -> f64 {
        s / (self.max_speed()
            * (1.0 / (self.dx * self.dx) + 1.0 / (self.dy * self.dy) + 1.0 / (self.dz * self.dz)).sqrt())
    }

    pub fn antenna_layer(&self) -> &LayerSlab {
        &self.layers[self.antenna_slab]
    }

    /// Chip-wide plane at mid-height of the antenna layer.
    pub fn default_plane(&self) -> PlaneSpec {
        let s = self.antenna_layer();
        self.chip_plane((s.k0 + s.k1) / 2)
    }

    pub fn chip_plane(&self, k: usize) -> PlaneSpec {
        PlaneSpec {
            k,
            i0: self.chip_origin[0],
            j0: self.chip_origin[1],
            ni: self.chip_cells[0],
            nj: self.chip_cells[1],
        }
    }

    /// Node plane closest to height `z_mm` above the ground plane.
    pub fn plane_at_height(&self, z_mm: f64) -> Result<PlaneSpec> {
        let k = (z_mm * 1e-3 / self.dz).round();
        if !(k >= 1.0 && (k as usize) < self.nz) {
            return Err(Error::Validation(format!(
                "observation height {z_mm} mm is outside the stack"
            )));
        }
        Ok(self.chip_plane(k as usize))
    }

    /// x (mm, chip coordinates) of node `i`.
    pub fn node_x_mm(&self, i: usize) -> f64 {
        (i as f64 - self.chip_origin[0] as f64) * self.dx * 1e3
    }

    pub fn node_y_mm(&self, j: usize) -> f64 {
        (j as f64 - self.chip_origin[1] as f64) * self.dy * 1e3
    }

    pub fn validate_plane(&self, p: &PlaneSpec) -> Result<()> {
        if p.ni == 0 || p.nj == 0 || p.k == 0 || p.k >= self.nz || p.i0 + p.ni > self.nx || p.j0 + p.nj > self.ny {
            return Err(Error::Validation(format!("observation plane {p:?} outside grid")));
        }
        Ok(())
    }
}

/// Build the Yee grid for `scenario`.
pub fn discretize(scenario: &Scenario) -> Result<Grid> {
    scenario.validate()?;
    let policy = &scenario.grid;
    let f_hz = scenario.frequency_ghz * 1e9;
    let target = scenario.min_wavelength_mm() / policy.cells_per_wavelength;
    let [w_mm, d_mm] = scenario.chip_extent_mm;
    let chip_nx = (w_mm / target - 1e-9).ceil().max(1.0) as usize;
    let chip_ny = (d_mm / target - 1e-9).ceil().max(1.0) as usize;
    let dx_mm = w_mm / chip_nx as f64;
    let dy_mm = d_mm / chip_ny as f64;
    let dz_mm = policy.max_dz_mm.map_or(dx_mm.min(dy_mm), |m| m.min(dx_mm).min(dy_mm));

    let b = scenario.boundaries;
    let npml = policy.pml_cells;
    let pml_of = |f: Boundary| if f == Boundary::Absorbing { npml } else { 0 };
    let pml = [
        pml_of(b.x_low),
        pml_of(b.x_high),
        pml_of(b.y_low),
        pml_of(b.y_high),
        0,
        pml_of(b.top),
    ];
    let spacer = scenario.stack.lateral_spacer.as_ref();
    let sp_x = spacer.map_or(0, |s| (s.thickness_mm / dx_mm).round() as usize);
    let sp_y = spacer.map_or(0, |s| (s.thickness_mm / dy_mm).round() as usize);
    let nx = pml[0] + sp_x + chip_nx + sp_x + pml[1];
    let ny = pml[2] + sp_y + chip_ny + sp_y + pml[3];
    let chip_origin = [pml[0] + sp_x, pml[2] + sp_y];

    // vertical: dielectric layers bottom-up, the conducting bottom layer is
    // the k = 0 boundary
    let mut materials: Vec<CellMaterial> = Vec::new();
    let mut intern = |m: CellMaterial| -> u8 {
        if let Some(n) = materials.iter().position(|x| *x == m) {
            n as u8
        } else {
            materials.push(m);
            (materials.len() - 1) as u8
        }
    };
    let stack = &scenario.stack;
    let antenna_top_down = stack.antenna_layer();
    let mut layers = Vec::new();
    let mut layer_mat = Vec::new();
    let mut k = 0usize;
    let mut antenna_slab = 0;
    for (n, l) in stack.layers.iter().enumerate().rev().skip(1) {
        let cells = (l.thickness_mm / dz_mm).round() as usize;
        if n == antenna_top_down {
            antenna_slab = layers.len();
            if cells < 2 {
                return Err(Error::Geometry(format!(
                    "antenna layer '{}' resolves to {cells} cells",
                    l.material.name
                )));
            }
        }
        layers.push(LayerSlab {
            name: l.material.name.clone(),
            k0: k,
            k1: k + cells,
        });
        layer_mat.push(intern(CellMaterial {
            rel_permittivity: l.material.rel_permittivity,
            conductivity: l.material.conductivity(f_hz),
        }));
        k += cells;
    }
    let nz = k + pml[5];
    let spacer_mat = spacer.map(|s| {
        intern(CellMaterial {
            rel_permittivity: s.material.rel_permittivity,
            conductivity: s.material.conductivity(f_hz),
        })
    });

    let cells = nx * ny * nz;
    if cells > policy.max_cells {
        return Err(Error::Resource(format!(
            "grid of {nx}x{ny}x{nz} = {cells} cells exceeds the cap of {}",
            policy.max_cells
        )));
    }

    let mut column = vec![0u8; nz];
    for (slab, &m) in layers.iter().zip(&layer_mat) {
        column[slab.k0..slab.k1].fill(m);
    }
    if nz > k {
        let top = column[k.saturating_sub(1)];
        column[k..].fill(top);
    }
    let inner_i = chip_origin[0]..chip_origin[0] + chip_nx;
    let inner_j = chip_origin[1]..chip_origin[1] + chip_ny;
    let mut cell_material = vec![0u8; cells];
    for i in 0..nx {
        for j in 0..ny {
            let base = (i * ny + j) * nz;
            let inside = inner_i.contains(&i) && inner_j.contains(&j);
            match (inside, spacer_mat) {
                (false, Some(m)) => cell_material[base..base + nz].fill(m),
                _ => cell_material[base..base + nz].copy_from_slice(&column),
            }
        }
    }

    let dx = dx_mm * 1e-3;
    let dy = dy_mm * 1e-3;
    let dz = dz_mm * 1e-3;
    let antenna = &layers[antenna_slab];
    let mut wires = Vec::new();
    let mut ports = Vec::new();
    for e in &scenario.elements {
        let i = chip_origin[0] + (e.x_mm / dx_mm).round() as usize;
        let j = chip_origin[1] + (e.y_mm / dy_mm).round() as usize;
        if i == 0 || j == 0 || i >= nx || j >= ny {
            return Err(Error::Geometry(format!(
                "port {} sits on the outer boundary",
                e.port_id
            )));
        }
        let k_top = antenna.k0 + (e.length_mm / dz_mm).round() as usize;
        if k_top > antenna.k1 {
            return Err(Error::Geometry(format!(
                "port {}: monopole extends past the {} layer on this grid",
                e.port_id, antenna.name
            )));
        }
        if k_top < 2 {
            return Err(Error::Geometry(format!(
                "port {}: monopole shorter than two cells",
                e.port_id
            )));
        }
        let r = e.radius_mm * 1e-3;
        if !policy.thin_wire && r < 0.5 * dx.min(dy) {
            return Err(Error::Geometry(format!(
                "port {}: radius {} mm is not representable without the thin-wire model",
                e.port_id, e.radius_mm
            )));
        }
        if policy.thin_wire && r >= 0.5 * dx.min(dy) {
            return Err(Error::Geometry(format!(
                "port {}: radius {} mm is too thick for the thin-wire model at dx = {dx_mm:.4} mm",
                e.port_id, e.radius_mm
            )));
        }
        for w in &wires {
            let w: &Wire = w;
            let di = (w.i as isize - i as isize).abs();
            let dj = (w.j as isize - j as isize).abs();
            if (di == 0 && dj <= 1) || (dj == 0 && di <= 1) {
                return Err(Error::Geometry(format!(
                    "ports {} and {} are less than two cells apart on this grid",
                    w.port_id, e.port_id
                )));
            }
        }
        wires.push(Wire {
            port_id: e.port_id,
            i,
            j,
            k_top,
            radius_m: r,
            thin: policy.thin_wire,
        });
        ports.push(LumpedPort {
            port_id: e.port_id,
            i,
            j,
            k: 0,
            impedance: policy.port_impedance_ohm,
            gap_eps_scale: policy
                .feed_pad_mm
                .map_or(1.0, |p| (p * p / (dx_mm * dy_mm)).clamp(MIN_GAP_EPS_SCALE, 1.0)),
        });
    }

    let mut hasher = Sha256::new();
    hasher.update(serialize_scenario(scenario).as_bytes());
    let fingerprint: String = hasher.finalize().iter().take(12).map(|b| format!("{b:02x}")).collect();

    let mut grid = Grid {
        dx,
        dy,
        dz,
        nx,
        ny,
        nz,
        dt: 0.0,
        frequency_hz: f_hz,
        materials,
        cell_material,
        pml,
        chip_origin,
        chip_cells: [chip_nx, chip_ny],
        layers,
        antenna_slab,
        wires,
        ports,
        fingerprint,
    };
    grid.dt = grid.courant_dt(policy.courant);
    Ok(grid)
}

/// Average permittivity (F/m) and conductivity of the up-to-four cells
/// sharing an edge.
pub(crate) fn edge_material(grid: &Grid, cells: &[(isize, isize, isize)]) -> (f64, f64) {
    let mut eps = 0.0;
    let mut sig = 0.0;
    let mut n = 0.0;
    for &(i, j, k) in cells {
        if i < 0 || j < 0 || k < 0 {
            continue;
        }
        let (i, j, k) = (i as usize, j as usize, k as usize);
        if i >= grid.nx || j >= grid.ny || k >= grid.nz {
            continue;
        }
        let m = grid.material_at(i, j, k);
        eps += m.rel_permittivity;
        sig += m.conductivity;
        n += 1.0;
    }
    if n == 0.0 {
        (EPS0, 0.0)
    } else {
        (EPS0 * eps / n, sig / n)
    }
}
