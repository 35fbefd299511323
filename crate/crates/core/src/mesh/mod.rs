//! Indexed triangle meshes, topology queries, curvature and file I/O.

mod curvature;
pub mod io;
mod topology;

use nalgebra::{Isometry3, Point3, Vector3};

use crate::error::{Error, Result};

pub use curvature::{estimate_curvature, raw_mean_curvature};
pub use io::{load_mesh, save_mesh, MeshFormat};
pub use topology::{
    boundary_loops, connected_components, edge_use_counts, topology_report, TopologyReport,
};
pub(crate) use topology::component_partition;

/// Indexed triangle mesh in millimeters with optional per-vertex attributes.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TriMesh {
    pub vertices: Vec<Point3<f64>>,
    pub faces: Vec<[usize; 3]>,
    pub labels: Option<Vec<i32>>,
    pub normals: Option<Vec<Vector3<f64>>>,
    pub curvature: Option<Vec<f64>>,
}

impl TriMesh {
    /// Builds a mesh, rejecting out-of-range indices and dropping faces with
    /// repeated indices or exactly zero area.
    pub fn new(vertices: Vec<Point3<f64>>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let n = vertices.len();
        for (fi, f) in faces.iter().enumerate() {
            for &v in f {
                if v >= n {
                    return Err(Error::IndexOutOfRange {
                        face: fi,
                        index: v,
                        count: n,
                    });
                }
            }
        }
        let before = faces.len();
        let faces: Vec<[usize; 3]> = faces
            .into_iter()
            .filter(|f| !is_degenerate(&vertices, f))
            .collect();
        if faces.len() != before {
            log::warn!("dropped {} zero-area faces", before - faces.len());
        }
        Ok(Self {
            vertices,
            faces,
            labels: None,
            normals: None,
            curvature: None,
        })
    }

    pub fn with_labels(mut self, labels: Vec<i32>) -> Result<Self> {
        check_len("label", labels.len(), self.vertices.len())?;
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn with_normals(mut self, normals: Vec<Vector3<f64>>) -> Result<Self> {
        check_len("normal", normals.len(), self.vertices.len())?;
        self.normals = Some(normals);
        Ok(self)
    }

    pub fn with_curvature(mut self, curvature: Vec<f64>) -> Result<Self> {
        check_len("curvature", curvature.len(), self.vertices.len())?;
        self.curvature = Some(curvature);
        Ok(self)
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn triangle(&self, f: usize) -> [Point3<f64>; 3] {
        let [a, b, c] = self.faces[f];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    /// Unnormalized face normal (twice the area vector).
    pub fn face_cross(&self, f: usize) -> Vector3<f64> {
        let [a, b, c] = self.triangle(f);
        (b - a).cross(&(c - a))
    }

    pub fn face_area(&self, f: usize) -> f64 {
        0.5 * self.face_cross(f).norm()
    }

    pub fn face_centroid(&self, f: usize) -> Point3<f64> {
        let [a, b, c] = self.triangle(f);
        Point3::from((a.coords + b.coords + c.coords) / 3.0)
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    pub fn centroid(&self) -> Point3<f64> {
        if self.vertices.is_empty() {
            return Point3::origin();
        }
        let sum = self
            .vertices
            .iter()
            .fold(Vector3::zeros(), |acc, p| acc + p.coords);
        Point3::from(sum / self.vertices.len() as f64)
    }

    /// Mean length over unique undirected edges.
    pub fn mean_edge_length(&self) -> f64 {
        let edges = edge_use_counts(self);
        if edges.is_empty() {
            return 0.0;
        }
        let total: f64 = edges
            .iter()
            .map(|(e, _)| (self.vertices[e[0]] - self.vertices[e[1]]).norm())
            .sum();
        total / edges.len() as f64
    }

    /// Axis-aligned bounding box `(min, max)`; `None` for an empty vertex set.
    pub fn bounding_box(&self) -> Option<(Point3<f64>, Point3<f64>)> {
        bounding_box(&self.vertices)
    }

    /// Area-weighted vertex normals from incident faces.
    pub fn vertex_normals(&self) -> Vec<Vector3<f64>> {
        let mut acc = vec![Vector3::zeros(); self.vertices.len()];
        for (fi, f) in self.faces.iter().enumerate() {
            let n = self.face_cross(fi);
            for &v in f {
                acc[v] += n;
            }
        }
        acc.into_iter()
            .map(|n| {
                let len = n.norm();
                if len > 0.0 {
                    n / len
                } else {
                    n
                }
            })
            .collect()
    }

    /// Keeps the listed faces and compacts the vertex array. Returns the new
    /// mesh and, for each new vertex, its index in `self`.
    pub fn submesh(&self, face_ids: &[usize]) -> (TriMesh, Vec<usize>) {
        let mut remap = vec![usize::MAX; self.vertices.len()];
        let mut old_index = Vec::new();
        let mut faces = Vec::with_capacity(face_ids.len());
        for &fi in face_ids {
            let mut nf = [0usize; 3];
            for (k, &v) in self.faces[fi].iter().enumerate() {
                if remap[v] == usize::MAX {
                    remap[v] = old_index.len();
                    old_index.push(v);
                }
                nf[k] = remap[v];
            }
            faces.push(nf);
        }
        let mesh = TriMesh {
            vertices: old_index.iter().map(|&v| self.vertices[v]).collect(),
            faces,
            labels: self
                .labels
                .as_ref()
                .map(|l| old_index.iter().map(|&v| l[v]).collect()),
            normals: self
                .normals
                .as_ref()
                .map(|n| old_index.iter().map(|&v| n[v]).collect()),
            curvature: self
                .curvature
                .as_ref()
                .map(|c| old_index.iter().map(|&v| c[v]).collect()),
        };
        (mesh, old_index)
    }

    /// Applies a rigid transform to positions and normals.
    pub fn transformed(&self, iso: &Isometry3<f64>) -> TriMesh {
        let mut out = self.clone();
        for p in &mut out.vertices {
            *p = iso * *p;
        }
        if let Some(normals) = &mut out.normals {
            for n in normals {
                *n = iso.rotation * *n;
            }
        }
        out
    }

    /// Appends another mesh as additional (disconnected) geometry.
    pub fn append(&mut self, other: &TriMesh) {
        let offset = self.vertices.len();
        let own_n = offset;
        self.vertices.extend_from_slice(&other.vertices);
        self.faces.extend(
            other
                .faces
                .iter()
                .map(|f| [f[0] + offset, f[1] + offset, f[2] + offset]),
        );
        merge_attr(&mut self.labels, &other.labels, own_n, other.vertices.len(), 0);
        merge_attr(
            &mut self.normals,
            &other.normals,
            own_n,
            other.vertices.len(),
            Vector3::zeros(),
        );
        merge_attr(
            &mut self.curvature,
            &other.curvature,
            own_n,
            other.vertices.len(),
            0.0,
        );
    }
}

fn merge_attr<T: Clone>(
    own: &mut Option<Vec<T>>,
    other: &Option<Vec<T>>,
    own_n: usize,
    other_n: usize,
    fill: T,
) {
    match (own.as_mut(), other) {
        (None, None) => {}
        (Some(a), Some(b)) => a.extend_from_slice(b),
        (Some(a), None) => a.extend(std::iter::repeat_n(fill, other_n)),
        (None, Some(b)) => {
            let mut a = vec![fill; own_n];
            a.extend_from_slice(b);
            *own = Some(a);
        }
    }
}

fn check_len(name: &'static str, len: usize, expected: usize) -> Result<()> {
    if len != expected {
        return Err(Error::AttributeLength {
            name,
            len,
            expected,
        });
    }
    Ok(())
}

fn is_degenerate(vertices: &[Point3<f64>], f: &[usize; 3]) -> bool {
    if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
        return true;
    }
    let (a, b, c) = (vertices[f[0]], vertices[f[1]], vertices[f[2]]);
    (b - a).cross(&(c - a)).norm_squared() == 0.0
}

pub fn bounding_box(points: &[Point3<f64>]) -> Option<(Point3<f64>, Point3<f64>)> {
    let first = points.first()?;
    let mut lo = *first;
    let mut hi = *first;
    for p in points {
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    Some((lo, hi))
}
