use std::collections::HashMap;

use nalgebra::Point3;

use crate::error::{Error, Result};
use crate::mesh::TriMesh;

pub(super) fn parse_stl(bytes: &[u8]) -> Result<TriMesh> {
    if bytes.len() < 84 {
        return Err(Error::Parse("STL shorter than its 84-byte header".into()));
    }
    let count = u32::from_le_bytes([bytes[80], bytes[81], bytes[82], bytes[83]]) as usize;
    if bytes.len() != 84 + count * 50 {
        if bytes.starts_with(b"solid") {
            return Err(Error::UnsupportedFormat("ASCII STL".into()));
        }
        return Err(Error::Parse(format!(
            "binary STL declares {count} triangles but has {} bytes",
            bytes.len()
        )));
    }
    // vertices are welded on their exact f32 bit patterns
    let mut index: HashMap<[u32; 3], usize> = HashMap::new();
    let mut vertices = Vec::new();
    let mut faces = Vec::with_capacity(count);
    for t in 0..count {
        let base = 84 + t * 50 + 12;
        let mut face = [0usize; 3];
        for (k, slot) in face.iter_mut().enumerate() {
            let mut key = [0u32; 3];
            for (c, kc) in key.iter_mut().enumerate() {
                let o = base + k * 12 + c * 4;
                *kc = u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]);
            }
            *slot = *index.entry(key).or_insert_with(|| {
                vertices.push(Point3::new(
                    f32::from_bits(key[0]) as f64,
                    f32::from_bits(key[1]) as f64,
                    f32::from_bits(key[2]) as f64,
                ));
                vertices.len() - 1
            });
        }
        faces.push(face);
    }
    TriMesh::new(vertices, faces)
}

pub(super) fn write_stl(mesh: &TriMesh) -> Vec<u8> {
    let mut out = Vec::with_capacity(84 + mesh.faces.len() * 50);
    let mut header = [0u8; 80];
    let tag = b"crownforge binary STL";
    header[..tag.len()].copy_from_slice(tag);
    out.extend_from_slice(&header);
    out.extend_from_slice(&(mesh.faces.len() as u32).to_le_bytes());
    for fi in 0..mesh.faces.len() {
        let n = mesh.face_cross(fi);
        let n = if n.norm() > 0.0 { n.normalize() } else { n };
        for c in [n.x, n.y, n.z] {
            out.extend_from_slice(&(c as f32).to_le_bytes());
        }
        for p in mesh.triangle(fi) {
            for c in [p.x, p.y, p.z] {
                out.extend_from_slice(&(c as f32).to_le_bytes());
            }
        }
        out.extend_from_slice(&0u16.to_le_bytes());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn size_mismatch_is_parse_error() {
        let mut b = vec![0u8; 84];
        b[80] = 2;
        assert!(matches!(parse_stl(&b), Err(Error::Parse(_))));
        assert!(parse_stl(&[0u8; 10]).is_err());
    }
}
