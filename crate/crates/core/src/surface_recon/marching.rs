use std::collections::HashMap;

use nalgebra::Point3;

use super::tables::TRIANGLES;
use super::ScalarGrid;
use crate::error::{Error, Result};
use crate::mesh::TriMesh;

const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

const EDGES: [[usize; 2]; 12] = [
    [0, 1],
    [1, 2],
    [2, 3],
    [3, 0],
    [4, 5],
    [5, 6],
    [6, 7],
    [7, 4],
    [0, 4],
    [1, 5],
    [2, 6],
    [3, 7],
];

// keeps every edge vertex strictly inside its edge so no face collapses
const T_CLAMP: f64 = 1e-7;

/// Iso surface of `grid` over its interior cells (no periodic wrap). Faces
/// are wound so their normals point from high (inside) to low values.
pub fn marching_cubes(grid: &ScalarGrid) -> Result<TriMesh> {
    let (min, max) = grid.min_max();
    let iso = grid.iso_value;
    if !(iso > min && iso < max) {
        return Err(Error::IsoOutOfRange { iso, min, max });
    }
    let g = &grid.geometry;
    let r = g.resolution;
    let mut vertex_of: HashMap<(usize, usize), usize> = HashMap::new();
    let mut vertices: Vec<Point3<f64>> = Vec::new();
    let mut faces: Vec<[usize; 3]> = Vec::new();

    for k in 0..r - 1 {
        for j in 0..r - 1 {
            for i in 0..r - 1 {
                let mut node = [0usize; 8];
                let mut val = [0f64; 8];
                let mut case = 0usize;
                for (c, off) in CORNERS.iter().enumerate() {
                    node[c] = g.index(i + off[0], j + off[1], k + off[2]);
                    val[c] = grid.values[node[c]];
                    if val[c] < iso {
                        case |= 1 << c;
                    }
                }
                if case == 0 || case == 255 {
                    continue;
                }
                let row = &TRIANGLES[case];
                let mut edge_vertex = |e: usize| -> usize {
                    let [ca, cb] = EDGES[e];
                    // orient each edge from its lower node so shared edges agree
                    let (ca, cb) = if node[ca] < node[cb] { (ca, cb) } else { (cb, ca) };
                    *vertex_of.entry((node[ca], node[cb])).or_insert_with(|| {
                        let t = ((iso - val[ca]) / (val[cb] - val[ca])).clamp(T_CLAMP, 1.0 - T_CLAMP);
                        let pa = g.node(i + CORNERS[ca][0], j + CORNERS[ca][1], k + CORNERS[ca][2]);
                        let pb = g.node(i + CORNERS[cb][0], j + CORNERS[cb][1], k + CORNERS[cb][2]);
                        vertices.push(pa + (pb - pa) * t);
                        vertices.len() - 1
                    })
                };
                for tri in row.chunks(3) {
                    if tri[0] < 0 {
                        break;
                    }
                    let a = edge_vertex(tri[0] as usize);
                    let b = edge_vertex(tri[1] as usize);
                    let c = edge_vertex(tri[2] as usize);
                    faces.push([a, b, c]);
                }
            }
        }
    }
    TriMesh::new(vertices, faces)
}
