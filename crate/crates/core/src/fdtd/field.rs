//! Complex field maps on a horizontal plane and their on-disk formats.
//!
//! Binary layout (all little-endian):
//!
//! | offset | type      | content                              |
//! |--------|-----------|--------------------------------------|
//! | 0      | [u8; 4]   | magic `CWFM`                         |
//! | 4      | u32       | format version (1)                   |
//! | 8      | f64       | frequency (GHz)                      |
//! | 16     | f64 × 5   | x0, y0 (first cell centre), dx, dy, z (mm) |
//! | 56     | u32 × 2   | nx, ny                               |
//! | 64     | u32       | label length L                       |
//! | 68     | [u8; L]   | label (UTF-8)                        |
//! | 68+L   | f32 × 6   | per cell: Re/Im of Ex, Ey, Ez        |
//!
//! Cells are stored row by row: `x` varies fastest.

use std::io::{Read, Write};
use std::ops::{Add, Mul, Sub};

use num_complex::Complex64;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CWFM";
pub const VERSION: u32 = 1;

pub type EVector = [Complex64; 3];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneGeometry {
    /// centre of cell (0, 0), chip coordinates (mm)
    pub x0_mm: f64,
    pub y0_mm: f64,
    pub dx_mm: f64,
    pub dy_mm: f64,
    /// height above the ground plane (mm)
    pub z_mm: f64,
    pub nx: usize,
    pub ny: usize,
}

impl PlaneGeometry {
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.nx + ix
    }

    pub fn cell_center(&self, n: usize) -> [f64; 2] {
        let (ix, iy) = (n % self.nx, n / self.nx);
        [self.x0_mm + ix as f64 * self.dx_mm, self.y0_mm + iy as f64 * self.dy_mm]
    }

    pub fn same_as(&self, other: &PlaneGeometry) -> bool {
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * (1.0 + a.abs().max(b.abs()));
        self.nx == other.nx
            && self.ny == other.ny
            && close(self.x0_mm, other.x0_mm)
            && close(self.y0_mm, other.y0_mm)
            && close(self.dx_mm, other.dx_mm)
            && close(self.dy_mm, other.dy_mm)
            && close(self.z_mm, other.z_mm)
    }
}

/// Complex E-field vectors (V/m, or V/m per volt of excitation) at the cell
/// centres of a horizontal plane, at one frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexFieldMap {
    pub frequency_ghz: f64,
    pub plane: PlaneGeometry,
    pub data: Vec<EVector>,
    /// free-form provenance (e.g. the profile that produced a combination)
    pub label: String,
}

fn zero3() -> EVector {
    [Complex64::new(0.0, 0.0); 3]
}

impl ComplexFieldMap {
    pub fn zeros(frequency_ghz: f64, plane: PlaneGeometry) -> Self {
        ComplexFieldMap {
            frequency_ghz,
            plane,
            data: vec![zero3(); plane.len()],
            label: String::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.len() != self.plane.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {}x{} plane",
                self.data.len(),
                self.plane.nx,
                self.plane.ny
            )));
        }
        if self
            .data
            .iter()
            .flatten()
            .any(|c| !c.re.is_finite() || !c.im.is_finite())
        {
            return Err(Error::Validation("field map contains non-finite values".into()));
        }
        Ok(())
    }

    pub fn check_compatible(&self, other: &ComplexFieldMap) -> Result<()> {
        if !self.plane.same_as(&other.plane) {
            return Err(Error::DimensionMismatch(format!(
                "planes differ: {:?} vs {:?}",
                self.plane, other.plane
            )));
        }
        if (self.frequency_ghz - other.frequency_ghz).abs() > 1e-9 * self.frequency_ghz.abs() {
            return Err(Error::DimensionMismatch(format!(
                "frequencies differ: {} vs {} GHz",
                self.frequency_ghz, other.frequency_ghz
            )));
        }
        Ok(())
    }

    /// |E| per cell.
    pub fn magnitude(&self) -> Vec<f64> {
        self.data.iter().map(vector_norm).collect()
    }

    pub fn norm_sqr_total(&self) -> f64 {
        self.data.iter().map(vector_norm_sqr).sum()
    }

    pub fn l2_norm(&self) -> f64 {
        self.norm_sqr_total().sqrt()
    }

    /// ‖self − other‖₂ / ‖other‖₂
    pub fn relative_l2_error(&self, other: &ComplexFieldMap) -> f64 {
        let diff: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (0..3).map(|c| (a[c] - b[c]).norm_sqr()).sum::<f64>())
            .sum();
        let base = other.norm_sqr_total();
        if base == 0.0 {
            if diff == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (diff / base).sqrt()
        }
    }

    pub fn scaled(&self, w: Complex64) -> ComplexFieldMap {
        let mut m = self.clone();
        for v in &mut m.data {
            for c in v.iter_mut() {
                *c *= w;
            }
        }
        m
    }

    /// `self += w · other`, cell-wise.
    pub fn add_scaled(&mut self, w: Complex64, other: &ComplexFieldMap) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            for c in 0..3 {
                a[c] += w * b[c];
            }
        }
    }

    /// Map mirrored across the plane's vertical centre line x = const;
    /// Ex changes sign.
    pub fn mirrored_x(&self) -> ComplexFieldMap {
        let p = self.plane;
        let mut out = self.clone();
        for iy in 0..p.ny {
            for ix in 0..p.nx {
                let src = self.data[p.index(p.nx - 1 - ix, iy)];
                out.data[p.index(ix, iy)] = [-src[0], src[1], src[2]];
            }
        }
        out
    }

    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        let p = &self.plane;
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        for v in [self.frequency_ghz, p.x0_mm, p.y0_mm, p.dx_mm, p.dy_mm, p.z_mm] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&(p.nx as u32).to_le_bytes())?;
        w.write_all(&(p.ny as u32).to_le_bytes())?;
        let label = self.label.as_bytes();
        w.write_all(&(label.len() as u32).to_le_bytes())?;
        w.write_all(label)?;
        let mut buf = Vec::with_capacity(self.data.len() * 24);
        for v in &self.data {
            for c in v {
                buf.extend_from_slice(&(c.re as f32).to_le_bytes());
                buf.extend_from_slice(&(c.im as f32).to_le_bytes());
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Parse("not a field map (bad magic)".into()));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::Parse(format!("unsupported field map version {version}")));
        }
        let mut f = [0f64; 6];
        for v in &mut f {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            *v = f64::from_le_bytes(b);
        }
        let nx = read_u32(&mut r)? as usize;
        let ny = read_u32(&mut r)? as usize;
        let label_len = read_u32(&mut r)? as usize;
        let mut label = vec![0u8; label_len];
        r.read_exact(&mut label)?;
        let label = String::from_utf8(label).map_err(|e| Error::Parse(e.to_string()))?;
        let plane = PlaneGeometry {
            x0_mm: f[1],
            y0_mm: f[2],
            dx_mm: f[3],
            dy_mm: f[4],
            z_mm: f[5],
            nx,
            ny,
        };
        let mut raw = vec![0u8; plane.len() * 24];
        r.read_exact(&mut raw)?;
        let vals: Vec<f64> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        let data = vals
            .chunks_exact(6)
            .map(|c| {
                [
                    Complex64::new(c[0], c[1]),
                    Complex64::new(c[2], c[3]),
                    Complex64::new(c[4], c[5]),
                ]
            })
            .collect();
        let map = ComplexFieldMap {
            frequency_ghz: f[0],
            plane,
            data,
            label,
        };
        map.validate()?;
        Ok(map)
    }

    /// CSV with columns `x_mm,y_mm,Re_Ex,Im_Ex,Re_Ey,Im_Ey,Re_Ez,Im_Ez,abs_E`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "x_mm,y_mm,Re_Ex,Im_Ex,Re_Ey,Im_Ey,Re_Ez,Im_Ez,abs_E")?;
        for (n, v) in self.data.iter().enumerate() {
            let [x, y] = self.plane.cell_center(n);
            writeln!(
                w,
                "{x:.6},{y:.6},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e}",
                v[0].re,
                v[0].im,
                v[1].re,
                v[1].im,
                v[2].re,
                v[2].im,
                vector_norm(v)
            )?;
        }
        Ok(())
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn vector_norm_sqr(v: &EVector) -> f64 {
    v[0].norm_sqr() + v[1].norm_sqr() + v[2].norm_sqr()
}

pub fn vector_norm(v: &EVector) -> f64 {
    vector_norm_sqr(v).sqrt()
}

impl Add for &ComplexFieldMap {
    type Output = ComplexFieldMap;
    fn add(self, rhs: &ComplexFieldMap) -> ComplexFieldMap {
        let mut out = self.clone();
        out.add_scaled(Complex64::new(1.0, 0.0), rhs);
        out
    }
}

impl Sub for &ComplexFieldMap {
    type Output = ComplexFieldMap;
    fn sub(self, rhs: &ComplexFieldMap) -> ComplexFieldMap {
        let mut out = self.clone();
        out.add_scaled(Complex64::new(-1.0, 0.0), rhs);
        out
    }
}

impl Mul<Complex64> for &ComplexFieldMap {
    type Output = ComplexFieldMap;
    fn mul(self, rhs: Complex64) -> ComplexFieldMap {
        self.scaled(rhs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn plane(nx: usize, ny: usize) -> PlaneGeometry {
        PlaneGeometry {
            x0_mm: 0.05,
            y0_mm: 0.05,
            dx_mm: 0.1,
            dy_mm: 0.1,
            z_mm: 0.25,
            nx,
            ny,
        }
    }

    proptest! {
        #[test]
        fn binary_round_trip(vals in proptest::collection::vec(-1e3f64..1e3, 6 * 12), label in "[a-z0-9 ]{0,16}") {
            let data = vals.chunks(6).map(|c| [
                Complex64::new(c[0], c[1]), Complex64::new(c[2], c[3]), Complex64::new(c[4], c[5])
            ]).collect();
            let map = ComplexFieldMap { frequency_ghz: 60.0, plane: plane(4, 3), data, label };
            let mut buf = Vec::new();
            map.write_binary(&mut buf).unwrap();
            let back = ComplexFieldMap::read_binary(&buf[..]).unwrap();
            prop_assert!(back.plane.same_as(&map.plane));
            prop_assert_eq!(&back.label, &map.label);
            for (a, b) in back.data.iter().flatten().zip(map.data.iter().flatten()) {
                prop_assert!((a - b).norm() <= 1e-4 * (1.0 + b.norm()));
            }
        }
    }

    #[test]
    fn header_layout() {
        let map = ComplexFieldMap::zeros(60.0, plane(2, 1));
        let mut buf = Vec::new();
        map.write_binary(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"CWFM");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
        assert_eq!(f64::from_le_bytes(buf[8..16].try_into().unwrap()), 60.0);
        assert_eq!(u32::from_le_bytes(buf[56..60].try_into().unwrap()), 2);
        assert_eq!(buf.len(), 68 + 2 * 24);
    }

    #[test]
    fn bad_magic() {
        assert!(ComplexFieldMap::read_binary(&b"NOPE0000"[..]).is_err());
    }

    #[test]
    fn csv_has_header_and_rows() {
        let mut map = ComplexFieldMap::zeros(60.0, plane(2, 2));
        map.data[3][2] = Complex64::new(3.0, 4.0);
        let mut buf = Vec::new();
        map.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 5);
        assert!(lines[0].starts_with("x_mm,y_mm,Re_Ex"));
        assert!(lines[4].ends_with("5.000000000e0"));
    }

    #[test]
    fn incompatible_maps() {
        let a = ComplexFieldMap::zeros(60.0, plane(2, 2));
        let b = ComplexFieldMap::zeros(60.0, plane(3, 2));
        let c = ComplexFieldMap::zeros(110.0, plane(2, 2));
        assert!(a.check_compatible(&b).is_err());
        assert!(a.check_compatible(&c).is_err());
    }
}
