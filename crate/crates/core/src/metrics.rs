//! Interference fields, SIR maps, region statistics and channel isolation.
//!
//! SIR is a field-amplitude ratio: `20·log10(|E_desired| / |E_interference|)`.

use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::combiner::{combine, FieldLibrary, PhaseProfile};
use crate::error::{Error, Result};
use crate::fdtd::{vector_norm, ComplexFieldMap, PlaneGeometry};

pub const DEFAULT_SIR_CEILING_DB: f64 = 60.0;
pub const DEFAULT_ISOLATION_DB: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    /// lower-left corner and size (mm)
    Rect {
        x_mm: f64,
        y_mm: f64,
        w_mm: f64,
        h_mm: f64,
    },
    Disc {
        cx_mm: f64,
        cy_mm: f64,
        r_mm: f64,
    },
}

impl Region {
    pub fn rect(x_mm: f64, y_mm: f64, w_mm: f64, h_mm: f64) -> Self {
        Region::Rect { x_mm, y_mm, w_mm, h_mm }
    }

    pub fn disc(cx_mm: f64, cy_mm: f64, r_mm: f64) -> Self {
        Region::Disc { cx_mm, cy_mm, r_mm }
    }

    /// `x,y,w,h` in mm.
    pub fn parse(text: &str) -> Result<Self> {
        let v: Vec<f64> = text
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Parse(format!("region '{text}': expected x,y,w,h in mm")))?;
        if v.len() != 4 {
            return Err(Error::Parse(format!("region '{text}': expected x,y,w,h in mm")));
        }
        let r = Region::rect(v[0], v[1], v[2], v[3]);
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Region::Rect { x_mm, y_mm, w_mm, h_mm } => {
                [x_mm, y_mm, w_mm, h_mm].iter().all(|v| v.is_finite()) && w_mm > 0.0 && h_mm > 0.0
            }
            Region::Disc { cx_mm, cy_mm, r_mm } => [cx_mm, cy_mm, r_mm].iter().all(|v| v.is_finite()) && r_mm > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Validation(format!("invalid region {self:?}")))
        }
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Region::Rect { x_mm, y_mm, w_mm, h_mm } => x >= x_mm && x <= x_mm + w_mm && y >= y_mm && y <= y_mm + h_mm,
            Region::Disc { cx_mm, cy_mm, r_mm } => {
                let (dx, dy) = (x - cx_mm, y - cy_mm);
                dx * dx + dy * dy <= r_mm * r_mm
            }
        }
    }

    /// Does the region intersect the rectangle `[0, w] × [0, d]`?
    pub fn overlaps_extent(&self, extent_mm: [f64; 2]) -> bool {
        let [w, d] = extent_mm;
        match *self {
            Region::Rect { x_mm, y_mm, w_mm, h_mm } => x_mm < w && x_mm + w_mm > 0.0 && y_mm < d && y_mm + h_mm > 0.0,
            Region::Disc { cx_mm, cy_mm, r_mm } => {
                let nx = cx_mm.clamp(0.0, w);
                let ny = cy_mm.clamp(0.0, d);
                (nx - cx_mm).powi(2) + (ny - cy_mm).powi(2) < r_mm * r_mm
            }
        }
    }

    /// Indices of plane cells whose centres lie inside.
    pub fn cells(&self, plane: &PlaneGeometry) -> Vec<usize> {
        (0..plane.len())
            .filter(|&n| {
                let [x, y] = plane.cell_center(n);
                self.contains(x, y)
            })
            .collect()
    }

    pub fn describe(&self) -> String {
        match *self {
            Region::Rect { x_mm, y_mm, w_mm, h_mm } => format!("rect {x_mm},{y_mm},{w_mm},{h_mm}"),
            Region::Disc { cx_mm, cy_mm, r_mm } => format!("disc {cx_mm},{cy_mm},{r_mm}"),
        }
    }
}

/// Default 1×1 mm corner targets of a `w × d` chip: lower-left, lower-right,
/// upper-left, upper-right.
pub fn corner_regions(extent_mm: [f64; 2], size_mm: f64) -> [Region; 4] {
    let [w, d] = extent_mm;
    [
        Region::rect(0.0, 0.0, size_mm, size_mm),
        Region::rect(w - size_mm, 0.0, size_mm, size_mm),
        Region::rect(0.0, d - size_mm, size_mm, size_mm),
        Region::rect(w - size_mm, d - size_mm, size_mm, size_mm),
    ]
}

/// `both − single`: the field contributed by whatever `single` lacks.
pub fn interference_field(both: &ComplexFieldMap, single: &ComplexFieldMap) -> Result<ComplexFieldMap> {
    both.check_compatible(single)?;
    let mut out = both - single;
    out.label = format!("({}) - ({})", both.label, single.label);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SirMap {
    pub frequency_ghz: f64,
    pub plane: PlaneGeometry,
    /// per cell; `+∞` where the interference vanishes, `−∞` where only the
    /// desired field vanishes
    pub sir_db: Vec<f64>,
    pub desired: String,
    pub interferer: String,
    pub ceiling_db: f64,
}

impl SirMap {
    /// Value clamped to `±ceiling` for display.
    pub fn display(&self, n: usize) -> f64 {
        self.sir_db[n].clamp(-self.ceiling_db, self.ceiling_db)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("x_mm,y_mm,sir_db\n");
        for n in 0..self.sir_db.len() {
            let [x, y] = self.plane.cell_center(n);
            let v = self.sir_db[n];
            let txt = if v.is_infinite() {
                if v > 0.0 {
                    "inf".to_string()
                } else {
                    "-inf".to_string()
                }
            } else {
                format!("{v:.4}")
            };
            let _ = writeln!(s, "{x:.6},{y:.6},{txt}");
        }
        s
    }

    /// Grayscale image: black = −ceiling, white = +ceiling.
    pub fn write_pgm<W: Write>(&self, w: W) -> Result<()> {
        let vals: Vec<f64> = (0..self.sir_db.len()).map(|n| self.display(n)).collect();
        write_pgm(w, &self.plane, &vals, -self.ceiling_db, self.ceiling_db)
    }

    pub fn sidecar(&self, provenance: &str) -> String {
        format!(
            "kind: sir map (20*log10(|E_desired|/|E_interference|))\n\
             frequency_ghz: {}\n\
             scale: linear gray, 0 = {} dB, 255 = {} dB\n\
             ceiling_db: {}\n\
             rows: top row is the largest y\n\
             desired: {}\n\
             interferer: {}\n\
             {provenance}",
            self.frequency_ghz, -self.ceiling_db, self.ceiling_db, self.ceiling_db, self.desired, self.interferer
        )
    }
}

pub fn sir_db(desired: f64, interference: f64) -> f64 {
    match (desired == 0.0, interference == 0.0) {
        (true, true) => 0.0,
        (false, true) => f64::INFINITY,
        (true, false) => f64::NEG_INFINITY,
        // difference of logs keeps sir(a, b) == -sir(b, a) exact
        _ => 20.0 * (desired.log10() - interference.log10()),
    }
}

pub fn sir_map(desired: &ComplexFieldMap, interference: &ComplexFieldMap) -> Result<SirMap> {
    desired.check_compatible(interference)?;
    let sir = desired
        .data
        .iter()
        .zip(&interference.data)
        .map(|(d, i)| sir_db(vector_norm(d), vector_norm(i)))
        .collect();
    Ok(SirMap {
        frequency_ghz: desired.frequency_ghz,
        plane: desired.plane,
        sir_db: sir,
        desired: desired.label.clone(),
        interferer: interference.label.clone(),
        ceiling_db: DEFAULT_SIR_CEILING_DB,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionStats {
    pub min_db: f64,
    pub mean_db: f64,
    pub max_db: f64,
    pub cells: usize,
}

/// Min/mean/max over cells inside `region`; infinite cells are left out of
/// the mean but count for min and max.
pub fn region_stats(map: &SirMap, region: &Region) -> Result<RegionStats> {
    let cells = region.cells(&map.plane);
    if cells.is_empty() {
        return Err(Error::EmptyRegion);
    }
    let vals: Vec<f64> = cells.iter().map(|&n| map.sir_db[n]).collect();
    let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let finite: Vec<f64> = vals.iter().copied().filter(|v| v.is_finite()).collect();
    let mean = if finite.is_empty() {
        // every cell is infinite; all positive unless min says otherwise
        if min > 0.0 {
            f64::INFINITY
        } else if max < 0.0 {
            f64::NEG_INFINITY
        } else {
            f64::NAN
        }
    } else {
        finite.iter().sum::<f64>() / finite.len() as f64
    };
    Ok(RegionStats {
        min_db: min,
        mean_db: mean,
        max_db: max,
        cells: cells.len(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelReport {
    pub channel: usize,
    pub profile: String,
    pub region: Region,
    pub stats: RegionStats,
    pub isolated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IsolationReport {
    pub threshold_db: f64,
    pub channels: Vec<ChannelReport>,
    pub maps: Vec<SirMap>,
}

impl IsolationReport {
    pub fn all_isolated(&self) -> bool {
        self.channels.iter().all(|c| c.isolated)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("threshold_db: {}\n", self.threshold_db);
        for c in &self.channels {
            let _ = writeln!(
                s,
                "channel {}: region {} cells {} min {:.2} dB mean {:.2} dB max {:.2} dB -> {}",
                c.channel + 1,
                c.region.describe(),
                c.stats.cells,
                c.stats.min_db,
                c.stats.mean_db,
                c.stats.max_db,
                if c.isolated { "ISOLATED" } else { "NOT ISOLATED" }
            );
        }
        s
    }
}

/// For each channel `c`: desired = its profile, interference = all other
/// profiles together; verdict from the min SIR inside its target region.
pub fn channel_isolation_report(
    library: &FieldLibrary,
    profiles: &[PhaseProfile],
    regions: &[Region],
    threshold_db: f64,
) -> Result<IsolationReport> {
    if profiles.len() != regions.len() || profiles.len() < 2 {
        return Err(Error::Validation(
            "need one target region per profile and at least two channels".into(),
        ));
    }
    let fields: Vec<ComplexFieldMap> = profiles.iter().map(|p| combine(library, p)).collect::<Result<_>>()?;
    let mut channels = Vec::new();
    let mut maps = Vec::new();
    for c in 0..profiles.len() {
        let mut interference = ComplexFieldMap::zeros(fields[c].frequency_ghz, fields[c].plane);
        let mut labels = Vec::new();
        for (k, f) in fields.iter().enumerate() {
            if k != c {
                interference.add_scaled(num_complex::Complex64::new(1.0, 0.0), f);
                labels.push(f.label.clone());
            }
        }
        interference.label = labels.join(" + ");
        let map = sir_map(&fields[c], &interference)?;
        let stats = region_stats(&map, &regions[c])?;
        channels.push(ChannelReport {
            channel: c,
            profile: profiles[c].summary(),
            region: regions[c],
            stats,
            isolated: stats.min_db >= threshold_db,
        });
        maps.push(map);
    }
    Ok(IsolationReport {
        threshold_db,
        channels,
        maps,
    })
}

/// 8-bit binary PGM of `values` mapped linearly from `[lo, hi]` to
/// `[0, 255]`; the first image row is the largest y.
pub fn write_pgm<W: Write>(mut w: W, plane: &PlaneGeometry, values: &[f64], lo: f64, hi: f64) -> Result<()> {
    write!(w, "P5\n{} {}\n255\n", plane.nx, plane.ny)?;
    let mut buf = Vec::with_capacity(values.len());
    for iy in (0..plane.ny).rev() {
        for ix in 0..plane.nx {
            let v = values[plane.index(ix, iy)];
            let t = if hi > lo { (v - lo) / (hi - lo) } else { 0.0 };
            let t = if t.is_nan() { 0.0 } else { t.clamp(0.0, 1.0) };
            buf.push((t * 255.0).round() as u8);
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

/// Field magnitude in dB relative to the map maximum, floored at
/// `-dynamic_range_db`; an all-zero map gives the floor everywhere.
pub fn field_db(map: &ComplexFieldMap, dynamic_range_db: f64) -> Vec<f64> {
    let mag = map.magnitude();
    let peak = mag.iter().copied().fold(0.0, f64::max);
    mag.iter()
        .map(|&m| {
            if peak == 0.0 || m == 0.0 {
                -dynamic_range_db
            } else {
                (20.0 * (m / peak).log10()).max(-dynamic_range_db)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;
    use proptest::prelude::*;

    fn plane() -> PlaneGeometry {
        PlaneGeometry {
            x0_mm: 0.5,
            y0_mm: 0.5,
            dx_mm: 1.0,
            dy_mm: 1.0,
            z_mm: 0.25,
            nx: 10,
            ny: 10,
        }
    }

    fn uniform(v: f64) -> ComplexFieldMap {
        let mut m = ComplexFieldMap::zeros(60.0, plane());
        for c in &mut m.data {
            c[2] = Complex64::new(v, 0.0);
        }
        m
    }

    #[test]
    fn sir_definition_cases() {
        let s = sir_map(&uniform(100.0), &uniform(1.0)).unwrap();
        assert!(s.sir_db.iter().all(|v| (v - 40.0).abs() < 1e-12));
        let s = sir_map(&uniform(3.0), &uniform(3.0)).unwrap();
        assert!(s.sir_db.iter().all(|v| v.abs() < 1e-12));
        let s = sir_map(&uniform(3.0), &uniform(0.0)).unwrap();
        assert!(s.sir_db.iter().all(|v| *v == f64::INFINITY));
        assert_eq!(s.display(0), 60.0);
    }

    #[test]
    fn self_subtraction_is_zero() {
        let a = uniform(2.0);
        assert_eq!(interference_field(&a, &a).unwrap().norm_sqr_total(), 0.0);
    }

    #[test]
    fn uniform_region_stats() {
        let s = sir_map(&uniform(100.0), &uniform(1.0)).unwrap();
        let st = region_stats(&s, &Region::rect(2.0, 2.0, 3.0, 3.0)).unwrap();
        assert!((st.min_db - 40.0).abs() < 1e-12 && (st.mean_db - 40.0).abs() < 1e-12);
        assert!((st.max_db - 40.0).abs() < 1e-12);
        assert!(matches!(
            region_stats(&s, &Region::rect(20.0, 20.0, 1.0, 1.0)),
            Err(Error::EmptyRegion)
        ));
    }

    #[test]
    fn infinite_cells_skip_mean() {
        let mut i = uniform(1.0);
        i.data[0][2] = Complex64::new(0.0, 0.0);
        let s = sir_map(&uniform(10.0), &i).unwrap();
        let st = region_stats(&s, &Region::rect(0.0, 0.0, 2.0, 1.0)).unwrap();
        assert_eq!(st.cells, 2);
        assert_eq!(st.max_db, f64::INFINITY);
        assert!((st.mean_db - 20.0).abs() < 1e-12);
    }

    #[test]
    fn region_parse_and_overlap() {
        let r = Region::parse("0,9,1,1").unwrap();
        assert!(r.contains(0.5, 9.5));
        assert!(r.overlaps_extent([10.0, 10.0]));
        assert!(!Region::rect(11.0, 0.0, 1.0, 1.0).overlaps_extent([10.0, 10.0]));
        assert!(Region::parse("1,2,3").is_err());
        assert!(Region::parse("1,2,-3,1").is_err());
        assert!(Region::disc(5.0, 5.0, 1.0).contains(5.5, 5.5));
    }

    fn random_map(seed: u64) -> ComplexFieldMap {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut m = ComplexFieldMap::zeros(60.0, plane());
        for v in m.data.iter_mut().flatten() {
            *v = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        }
        m
    }

    proptest! {
        #[test]
        fn antisymmetry_and_scale(seed in 0u64..1000, scale in 1e-3f64..1e3) {
            let a = random_map(seed);
            let b = random_map(seed + 7919);
            let ab = sir_map(&a, &b).unwrap();
            let ba = sir_map(&b, &a).unwrap();
            for (x, y) in ab.sir_db.iter().zip(&ba.sir_db) {
                prop_assert_eq!(*x, -*y);
            }
            let scaled = sir_map(&a.scaled(Complex64::new(scale, 0.0)), &b.scaled(Complex64::new(scale, 0.0))).unwrap();
            for (x, y) in ab.sir_db.iter().zip(&scaled.sir_db) {
                prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0) * 10.0);
            }
        }

        #[test]
        fn enlarging_region_never_raises_min(seed in 0u64..1000, x in 0.0f64..8.0, y in 0.0f64..8.0, w in 0.5f64..2.0, grow in 0.0f64..3.0) {
            let s = sir_map(&random_map(seed), &random_map(seed + 1)).unwrap();
            let small = Region::rect(x, y, w, w);
            let big = Region::rect(x - grow, y - grow, w + 2.0 * grow, w + 2.0 * grow);
            if let Ok(a) = region_stats(&s, &small) {
                let b = region_stats(&s, &big).unwrap();
                prop_assert!(b.min_db <= a.min_db);
            }
        }
    }

    #[test]
    fn global_phase_leaves_sir() {
        let lib = {
            let mut l = FieldLibrary::new("f", 60.0);
            for p in 1..=4 {
                l.insert(p, random_map(p as u64)).unwrap();
            }
            l
        };
        let a = PhaseProfile::from_phases([(1, 0.0), (2, 60.0)]);
        let b = PhaseProfile::from_phases([(3, 30.0), (4, -90.0)]);
        let r0 = channel_isolation_report(
            &lib,
            &[a.clone(), b.clone()],
            &[Region::rect(0.0, 0.0, 3.0, 3.0); 2],
            20.0,
        )
        .unwrap();
        let r1 = channel_isolation_report(
            &lib,
            &[a.rotated(77.0), b.rotated(-130.0)],
            &[Region::rect(0.0, 0.0, 3.0, 3.0); 2],
            20.0,
        )
        .unwrap();
        for (m0, m1) in r0.maps.iter().zip(&r1.maps) {
            for (x, y) in m0.sir_db.iter().zip(&m1.sir_db) {
                assert!((x - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn library_three_way_identity() {
        let mut lib = FieldLibrary::new("f", 60.0);
        for p in 1..=4 {
            lib.insert(p, random_map(10 + p as u64)).unwrap();
        }
        let a = PhaseProfile::from_phases([(1, 0.0), (2, 60.0)]);
        let b = PhaseProfile::from_phases([(3, 30.0), (4, -90.0)]);
        let both = combine(&lib, &a.merged(&b).unwrap()).unwrap();
        let only_a = combine(&lib, &a).unwrap();
        let only_b = combine(&lib, &b).unwrap();
        let i = interference_field(&both, &only_a).unwrap();
        assert!(i.relative_l2_error(&only_b) < 1e-14);
    }

    #[test]
    fn identical_channels_are_not_isolated() {
        let mut lib = FieldLibrary::new("f", 60.0);
        lib.insert(1, random_map(1)).unwrap();
        let p = PhaseProfile::from_phases([(1, 0.0)]);
        let r =
            channel_isolation_report(&lib, &[p.clone(), p], &[Region::rect(0.0, 0.0, 10.0, 10.0); 2], 20.0).unwrap();
        assert!(r.channels.iter().all(|c| !c.isolated && c.stats.min_db.abs() < 1e-12));
    }

    #[test]
    fn pgm_layout() {
        let s = sir_map(&uniform(100.0), &uniform(1.0)).unwrap();
        let mut buf = Vec::new();
        s.write_pgm(&mut buf).unwrap();
        let header = b"P5\n10 10\n255\n";
        assert_eq!(&buf[..header.len()], header);
        assert_eq!(buf.len(), header.len() + 100);
        // 40 dB on a ±60 dB scale
        assert_eq!(buf[header.len()], ((100.0 / 120.0) * 255.0f64).round() as u8);
        let zero = field_db(&ComplexFieldMap::zeros(60.0, plane()), 60.0);
        assert!(zero.iter().all(|v| *v == -60.0));
    }
}
