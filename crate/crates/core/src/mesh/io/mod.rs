//! Mesh file formats: PLY (ASCII and binary), OBJ and binary STL.

mod obj;
pub mod ply;
mod stl;

use std::fs;
use std::path::Path;

use nalgebra::{Point3, Vector3};

use super::TriMesh;
use crate::error::{Error, Result};
use ply::{PlyColumn, PlyData, PlyElement, PlyEncoding, PlyType};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    Ply,
    Obj,
    Stl,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .unwrap_or_default();
        match ext.as_str() {
            "ply" => Ok(MeshFormat::Ply),
            "obj" => Ok(MeshFormat::Obj),
            "stl" => Ok(MeshFormat::Stl),
            _ => Err(Error::UnsupportedFormat(path.display().to_string())),
        }
    }
}

const KNOWN_VERTEX_PROPS: [&str; 8] = ["x", "y", "z", "label", "nx", "ny", "nz", "curvature"];

pub fn load_mesh(path: &Path, format: MeshFormat) -> Result<TriMesh> {
    let bytes = fs::read(path).map_err(|e| Error::io_at(path, e))?;
    match format {
        MeshFormat::Ply => mesh_from_ply(&ply::parse_ply(&bytes)?),
        MeshFormat::Obj => obj::parse_obj(
            std::str::from_utf8(&bytes).map_err(|_| Error::Parse("OBJ is not UTF-8".into()))?,
        ),
        MeshFormat::Stl => stl::parse_stl(&bytes),
    }
}

/// Writes a mesh; PLY output is binary little endian.
pub fn save_mesh(mesh: &TriMesh, path: &Path, format: MeshFormat) -> Result<()> {
    let bytes = match format {
        MeshFormat::Ply => {
            let mut out = Vec::new();
            ply::write_ply(&mut out, &mesh_to_ply(mesh, PlyEncoding::BinaryLittleEndian))?;
            out
        }
        MeshFormat::Obj => obj::write_obj(mesh).into_bytes(),
        MeshFormat::Stl => stl::write_stl(mesh),
    };
    fs::write(path, bytes).map_err(|e| Error::io_at(path, e))
}

pub fn read_ply_file(path: &Path) -> Result<PlyData> {
    let bytes = fs::read(path).map_err(|e| Error::io_at(path, e))?;
    ply::parse_ply(&bytes)
}

pub fn write_ply_file(path: &Path, data: &PlyData) -> Result<()> {
    let mut out = Vec::new();
    ply::write_ply(&mut out, data)?;
    fs::write(path, out).map_err(|e| Error::io_at(path, e))
}

pub(crate) fn points_from_vertex_element(el: &PlyElement) -> Result<Vec<Point3<f64>>> {
    let col = |n: &str| {
        el.scalar_column(n)
            .ok_or_else(|| Error::Parse(format!("vertex element lacks `{n}`")))
    };
    let (x, y, z) = (col("x")?, col("y")?, col("z")?);
    Ok((0..el.count).map(|i| Point3::new(x[i], y[i], z[i])).collect())
}

pub(crate) fn normals_from_vertex_element(el: &PlyElement) -> Option<Vec<Vector3<f64>>> {
    let (x, y, z) = (
        el.scalar_column("nx")?,
        el.scalar_column("ny")?,
        el.scalar_column("nz")?,
    );
    Some((0..el.count).map(|i| Vector3::new(x[i], y[i], z[i])).collect())
}

pub fn mesh_from_ply(data: &PlyData) -> Result<TriMesh> {
    let verts = data
        .element("vertex")
        .ok_or_else(|| Error::Parse("PLY has no vertex element".into()))?;
    for p in &verts.properties {
        if !KNOWN_VERTEX_PROPS.contains(&p.name.as_str()) {
            log::warn!("skipping unsupported vertex property `{}`", p.name);
        }
    }
    let vertices = points_from_vertex_element(verts)?;
    let mut faces = Vec::new();
    if let Some(fel) = data.element("face") {
        let rows = fel
            .properties
            .iter()
            .find(|p| p.name == "vertex_indices" || p.name == "vertex_index")
            .and_then(|p| match &p.column {
                PlyColumn::List { rows, .. } => Some(rows),
                PlyColumn::Scalar(..) => None,
            })
            .ok_or_else(|| Error::Parse("face element lacks a vertex index list".into()))?;
        for row in rows {
            if row.len() < 3 {
                return Err(Error::Parse(format!("face with {} vertices", row.len())));
            }
            let idx: Vec<usize> = row.iter().map(|&v| v as usize).collect();
            for k in 1..idx.len() - 1 {
                faces.push([idx[0], idx[k], idx[k + 1]]);
            }
        }
    }
    let mut mesh = TriMesh::new(vertices, faces)?;
    if let Some(l) = verts.scalar_column("label") {
        mesh.labels = Some(l.iter().map(|&v| v as i32).collect());
    }
    mesh.normals = normals_from_vertex_element(verts);
    if let Some(c) = verts.scalar_column("curvature") {
        mesh.curvature = Some(c.to_vec());
    }
    Ok(mesh)
}

pub(crate) fn vertex_element(
    points: &[Point3<f64>],
    labels: Option<Vec<f64>>,
    normals: Option<&[Vector3<f64>]>,
    curvature: Option<&[f64]>,
) -> PlyElement {
    let n = points.len();
    let mut el = PlyElement::new("vertex", n)
        .scalar("x", PlyType::F64, points.iter().map(|p| p.x).collect())
        .scalar("y", PlyType::F64, points.iter().map(|p| p.y).collect())
        .scalar("z", PlyType::F64, points.iter().map(|p| p.z).collect());
    if let Some(l) = labels {
        el = el.scalar("label", PlyType::I32, l);
    }
    if let Some(nr) = normals {
        el = el
            .scalar("nx", PlyType::F32, nr.iter().map(|v| v.x).collect())
            .scalar("ny", PlyType::F32, nr.iter().map(|v| v.y).collect())
            .scalar("nz", PlyType::F32, nr.iter().map(|v| v.z).collect());
    }
    if let Some(c) = curvature {
        el = el.scalar("curvature", PlyType::F32, c.to_vec());
    }
    el
}

pub fn mesh_to_ply(mesh: &TriMesh, encoding: PlyEncoding) -> PlyData {
    let mut data = PlyData::new(encoding);
    data.elements.push(vertex_element(
        &mesh.vertices,
        mesh.labels
            .as_ref()
            .map(|l| l.iter().map(|&v| v as f64).collect()),
        mesh.normals.as_deref(),
        mesh.curvature.as_deref(),
    ));
    data.elements.push(PlyElement::new("face", mesh.faces.len()).list(
        "vertex_indices",
        PlyType::U8,
        PlyType::I32,
        mesh.faces
            .iter()
            .map(|f| f.iter().map(|&v| v as f64).collect())
            .collect(),
    ));
    data
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::topology_report;
    use crate::synth::primitives;

    const TETRA_PLY: &str = "ply
format ascii 1.0
comment unit tetrahedron
element vertex 4
property float x
property float y
property float z
property int label
property uchar red
element face 4
property list uchar int vertex_indices
end_header
0 0 0 1 10
1 0 0 0 10
0 1 0 1 10
0 0 1 0 10
3 0 2 1
3 0 1 3
3 1 2 3
3 0 3 2
";

    #[test]
    fn loads_ascii_tetrahedron_with_labels() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.ply");
        fs::write(&path, TETRA_PLY).unwrap();
        let m = load_mesh(&path, MeshFormat::Ply).unwrap();
        assert_eq!(m.vertices.len(), 4);
        assert_eq!(m.faces.len(), 4);
        assert_eq!(m.labels.as_deref(), Some(&[1, 0, 1, 0][..]));
        assert!(topology_report(&m).is_watertight);
    }

    #[test]
    fn tetrahedron_round_trips_in_every_format() {
        let dir = tempfile::tempdir().unwrap();
        let t = primitives::tetrahedron();
        for (name, fmt) in [("a.ply", MeshFormat::Ply), ("a.obj", MeshFormat::Obj), ("a.stl", MeshFormat::Stl)] {
            let path = dir.path().join(name);
            save_mesh(&t, &path, fmt).unwrap();
            let back = load_mesh(&path, fmt).unwrap();
            // STL has no shared vertex list, so compare resolved triangles
            for f in 0..t.faces.len() {
                assert_eq!(back.triangle(f), t.triangle(f), "{name}");
            }
            if fmt != MeshFormat::Stl {
                assert_eq!(back.faces, t.faces, "{name}");
            }
            assert_eq!(topology_report(&back), topology_report(&t), "{name}");
        }
    }

    #[test]
    fn labels_and_attributes_survive_ply() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("l.ply");
        let mut m = primitives::icosphere(1.0, 1);
        let n = m.vertices.len();
        m.labels = Some((0..n).map(|i| (i % 2) as i32).collect());
        m.curvature = Some((0..n).map(|i| i as f64 / n as f64).collect());
        m.normals = Some(m.vertex_normals());
        save_mesh(&m, &path, MeshFormat::Ply).unwrap();
        let back = load_mesh(&path, MeshFormat::Ply).unwrap();
        assert_eq!(back.labels, m.labels);
        for (a, b) in back.curvature.unwrap().iter().zip(m.curvature.as_ref().unwrap()) {
            assert!((a - b).abs() < 1e-6);
        }
        for (a, b) in back.normals.unwrap().iter().zip(m.normals.as_ref().unwrap()) {
            assert!((a - b).norm() < 1e-6);
        }
    }

    #[test]
    fn cylinder_obj_round_trip_keeps_connectivity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.obj");
        let c = primitives::open_cylinder(4.0, 8.0, 64, 8);
        save_mesh(&c, &path, MeshFormat::Obj).unwrap();
        let back = load_mesh(&path, MeshFormat::Obj).unwrap();
        assert_eq!(back.faces, c.faces);
        assert_eq!(back.vertices, c.vertices);
    }

    #[test]
    fn large_sphere_binary_ply_keeps_coordinates() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.ply");
        let s = primitives::icosphere(7.3, 5);
        assert!(s.vertices.len() >= 10_000);
        save_mesh(&s, &path, MeshFormat::Ply).unwrap();
        let back = load_mesh(&path, MeshFormat::Ply).unwrap();
        assert_eq!(back.faces, s.faces);
        for (a, b) in back.vertices.iter().zip(&s.vertices) {
            assert!((a - b).norm() <= 1e-6);
        }
        assert_eq!(topology_report(&back), topology_report(&s));
    }

    #[test]
    fn unknown_extension_rejected() {
        assert!(MeshFormat::from_path(Path::new("x.gltf")).is_err());
        assert_eq!(MeshFormat::from_path(Path::new("x.PLY")).unwrap(), MeshFormat::Ply);
    }
}
