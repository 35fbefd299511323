//! Binary grid container.
//!
//! Layout: `CGRD`, u32 resolution, u32 component count, f32 iso value, then
//! f32 values (component-planar, x fastest), then six f64 (origin, extent).
//! All little-endian. A component count of 0 marks a named-tensor file.

use std::fs;
use std::path::Path;

use nalgebra::{Point3, Vector3};

use super::{GridGeometry, ScalarGrid, VectorGrid};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"CGRD";

/// A named dense f32 tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Parse("grid file is truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn encode(geometry: &GridGeometry, components: usize, iso: f64, planes: &[Vec<f64>]) -> Vec<u8> {
    let n = geometry.node_count();
    let mut out = Vec::with_capacity(16 + 4 * n * components + 48);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(geometry.resolution as u32).to_le_bytes());
    out.extend_from_slice(&(components as u32).to_le_bytes());
    out.extend_from_slice(&(iso as f32).to_le_bytes());
    for plane in planes {
        for v in plane {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    let e = geometry.extent();
    for v in [geometry.origin.x, geometry.origin.y, geometry.origin.z, e, e, e] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Decoded {
    geometry: GridGeometry,
    iso: f64,
    planes: Vec<Vec<f64>>,
}

fn decode(bytes: &[u8], expect_components: usize) -> Result<Decoded> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Parse("missing CGRD magic".into()));
    }
    let res = r.u32()? as usize;
    let comps = r.u32()? as usize;
    if comps != expect_components {
        return Err(Error::ShapeMismatch(format!(
            "grid has {comps} components, expected {expect_components}"
        )));
    }
    let iso = r.f32()? as f64;
    let n = res
        .checked_pow(3)
        .ok_or_else(|| Error::Parse(format!("resolution {res} overflows")))?;
    let mut planes = Vec::with_capacity(comps);
    for _ in 0..comps {
        let raw = r.take(4 * n)?;
        planes.push(
            raw.chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
        );
    }
    let origin = Point3::new(r.f64()?, r.f64()?, r.f64()?);
    let extent = [r.f64()?, r.f64()?, r.f64()?];
    if r.pos != bytes.len() {
        return Err(Error::Parse("trailing bytes after grid".into()));
    }
    if res == 0 || extent.iter().any(|e| (e - extent[0]).abs() > 1e-9 * extent[0].abs()) {
        return Err(Error::Parse("only non-empty cubic grids are supported".into()));
    }
    Ok(Decoded {
        geometry: GridGeometry {
            resolution: res,
            origin,
            cell: extent[0] / res as f64,
        },
        iso,
        planes,
    })
}

impl ScalarGrid {
    pub fn to_bytes(&self) -> Vec<u8> {
        encode(&self.geometry, 1, self.iso_value, std::slice::from_ref(&self.values))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut d = decode(bytes, 1)?;
        Ok(ScalarGrid {
            geometry: d.geometry,
            values: d.planes.remove(0),
            iso_value: d.iso,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io_at(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io_at(path, e))?)
    }
}

impl VectorGrid {
    /// Sample positions are not stored; a loaded grid has none.
    pub fn to_bytes(&self) -> Vec<u8> {
        let planes: Vec<Vec<f64>> = (0..3).map(|a| self.values.iter().map(|v| v[a]).collect()).collect();
        encode(&self.geometry, 3, 0.0, &planes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let d = decode(bytes, 3)?;
        let values = (0..d.geometry.node_count())
            .map(|i| Vector3::new(d.planes[0][i], d.planes[1][i], d.planes[2][i]))
            .collect();
        Ok(VectorGrid {
            geometry: d.geometry,
            values,
            samples: Vec::new(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io_at(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io_at(path, e))?)
    }
}

/// Named tensors in the grid container: header with zero components, then
/// u32 count and per tensor u32 name length, name, u32 rank, u32 dims, f32 data.
pub fn tensors_to_bytes(tensors: &[Tensor]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&0u32.to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    out.extend_from_slice(&0f32.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
        for d in &t.shape {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn tensors_from_bytes(bytes: &[u8]) -> Result<Vec<Tensor>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Parse("missing CGRD magic".into()));
    }
    let _res = r.u32()?;
    if r.u32()? != 0 {
        return Err(Error::Parse("not a tensor container".into()));
    }
    let _iso = r.f32()?;
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::Parse("tensor name is not UTF-8".into()))?;
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let data = r
            .take(4 * n)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push(Tensor { name, shape, data });
    }
    if r.pos != bytes.len() {
        return Err(Error::Parse("trailing bytes after tensors".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_is_fixed() {
        let g = GridGeometry {
            resolution: 2,
            origin: Point3::new(1.0, 2.0, 3.0),
            cell: 0.5,
        };
        let s = ScalarGrid {
            geometry: g,
            values: (0..8).map(|i| i as f64).collect(),
            iso_value: 2.5,
        };
        let b = s.to_bytes();
        assert_eq!(&b[..4], b"CGRD");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 1);
        assert_eq!(b.len(), 16 + 8 * 4 + 48);
        // second value, x fastest
        assert_eq!(f32::from_le_bytes(b[20..24].try_into().unwrap()), 1.0);
        assert_eq!(ScalarGrid::from_bytes(&b).unwrap(), s);
    }

    #[test]
    fn vector_grid_round_trips() {
        let g = GridGeometry {
            resolution: 3,
            origin: Point3::new(-1.0, 0.0, 0.5),
            cell: 0.25,
        };
        let v = VectorGrid {
            geometry: g,
            values: (0..27).map(|i| Vector3::new(i as f64, -(i as f64), 0.5)).collect(),
            samples: Vec::new(),
        };
        let back = VectorGrid::from_bytes(&v.to_bytes()).unwrap();
        assert_eq!(back, v);
        assert!(ScalarGrid::from_bytes(&v.to_bytes()).is_err());
    }

    #[test]
    fn tensors_round_trip_and_reject_truncation() {
        let t = vec![
            Tensor {
                name: "sat.wq".into(),
                shape: vec![2, 3],
                data: vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
            },
            Tensor {
                name: "b".into(),
                shape: vec![1],
                data: vec![-0.5],
            },
        ];
        let b = tensors_to_bytes(&t);
        assert_eq!(tensors_from_bytes(&b).unwrap(), t);
        assert!(tensors_from_bytes(&b[..b.len() - 1]).is_err());
    }
}
