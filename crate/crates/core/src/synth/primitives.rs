//! Analytic test meshes. All closed shapes are outward oriented.

use std::collections::HashMap;
use std::f64::consts::PI;

use nalgebra::Point3;

use crate::mesh::TriMesh;

fn build(vertices: Vec<Point3<f64>>, faces: Vec<[usize; 3]>) -> TriMesh {
    TriMesh::new(vertices, faces).expect("primitive indices are in range")
}

pub fn tetrahedron() -> TriMesh {
    build(
        vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
            Point3::new(0.0, 0.0, 1.0),
        ],
        vec![[0, 2, 1], [0, 1, 3], [1, 2, 3], [0, 3, 2]],
    )
}

/// Subdivided icosahedron projected onto a sphere of radius `r`.
pub fn icosphere(r: f64, subdivisions: usize) -> TriMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut v: Vec<Point3<f64>> = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .iter()
    .map(|c| Point3::from(nalgebra::Vector3::new(c[0], c[1], c[2]).normalize()))
    .collect();
    let mut f: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut cache: HashMap<(usize, usize), usize> = HashMap::new();
        let mut mid = |a: usize, b: usize, v: &mut Vec<Point3<f64>>| {
            *cache.entry((a.min(b), a.max(b))).or_insert_with(|| {
                let m = (v[a].coords + v[b].coords).normalize();
                v.push(Point3::from(m));
                v.len() - 1
            })
        };
        let mut nf = Vec::with_capacity(f.len() * 4);
        for [a, b, c] in f {
            let ab = mid(a, b, &mut v);
            let bc = mid(b, c, &mut v);
            let ca = mid(c, a, &mut v);
            nf.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        f = nf;
    }
    for p in &mut v {
        *p = Point3::from(p.coords * r);
    }
    build(v, f)
}

/// Surface of revolution about +z. `profile` runs from the bottom to the
/// top as `(radius, z)`; zero-radius endpoints become single pole vertices.
pub fn revolve(profile: &[(f64, f64)], segments: usize) -> TriMesh {
    let mut vertices = Vec::new();
    let mut rows: Vec<Vec<usize>> = Vec::new();
    for &(r, z) in profile {
        if r == 0.0 {
            vertices.push(Point3::new(0.0, 0.0, z));
            rows.push(vec![vertices.len() - 1; segments]);
        } else {
            let row = (0..segments)
                .map(|s| {
                    let a = 2.0 * PI * s as f64 / segments as f64;
                    vertices.push(Point3::new(r * a.cos(), r * a.sin(), z));
                    vertices.len() - 1
                })
                .collect();
            rows.push(row);
        }
    }
    let mut faces = Vec::new();
    for j in 0..rows.len() - 1 {
        for s in 0..segments {
            let s1 = (s + 1) % segments;
            let (a, b) = (rows[j][s], rows[j][s1]);
            let (c, d) = (rows[j + 1][s], rows[j + 1][s1]);
            if a != b {
                faces.push([a, b, d]);
            }
            if c != d {
                faces.push([a, d, c]);
            }
        }
    }
    build(vertices, faces)
}

pub fn uv_sphere(r: f64, segments: usize, rings: usize) -> TriMesh {
    let profile: Vec<(f64, f64)> = (0..=rings)
        .map(|j| {
            let th = PI * (1.0 - j as f64 / rings as f64);
            let rr = if j == 0 || j == rings { 0.0 } else { r * th.sin() };
            (rr, r * th.cos())
        })
        .collect();
    revolve(&profile, segments)
}

/// Side wall only, from z = 0 to z = h.
pub fn open_cylinder(r: f64, h: f64, segments: usize, rings: usize) -> TriMesh {
    let profile: Vec<(f64, f64)> = (0..=rings).map(|j| (r, h * j as f64 / rings as f64)).collect();
    revolve(&profile, segments)
}

/// Cylinder of length `length` centred on the origin with hemispherical caps.
pub fn capsule(r: f64, length: f64, segments: usize, body_rings: usize, cap_rings: usize) -> TriMesh {
    let half = length / 2.0;
    let mut profile = Vec::new();
    for j in 0..cap_rings {
        let th = PI / 2.0 * j as f64 / cap_rings as f64;
        profile.push((r * th.sin(), -half - r * th.cos()));
    }
    for j in 0..=body_rings {
        profile.push((r, -half + length * j as f64 / body_rings as f64));
    }
    for j in (0..cap_rings).rev() {
        let th = PI / 2.0 * j as f64 / cap_rings as f64;
        profile.push((r * th.sin(), half + r * th.cos()));
    }
    revolve(&profile, segments)
}

/// Triangle fan disk in the z = 0 plane, normal +z.
pub fn disk_fan(r: f64, n: usize) -> TriMesh {
    let mut v = vec![Point3::origin()];
    for i in 0..n {
        let a = 2.0 * PI * i as f64 / n as f64;
        v.push(Point3::new(r * a.cos(), r * a.sin(), 0.0));
    }
    let f = (0..n).map(|i| [0, 1 + i, 1 + (i + 1) % n]).collect();
    build(v, f)
}

pub fn torus(major: f64, minor: f64, nu: usize, nv: usize) -> TriMesh {
    let mut v = Vec::with_capacity(nu * nv);
    for i in 0..nu {
        let u = 2.0 * PI * i as f64 / nu as f64;
        for j in 0..nv {
            let w = 2.0 * PI * j as f64 / nv as f64;
            let rr = major + minor * w.cos();
            v.push(Point3::new(rr * u.cos(), rr * u.sin(), minor * w.sin()));
        }
    }
    let id = |i: usize, j: usize| (i % nu) * nv + (j % nv);
    let mut f = Vec::new();
    for i in 0..nu {
        for j in 0..nv {
            let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
            f.push([a, b, c]);
            f.push([a, c, d]);
        }
    }
    build(v, f)
}

/// Regular grid in the z = 0 plane centred on the origin.
pub fn planar_grid(width: f64, height: f64, nx: usize, ny: usize) -> TriMesh {
    let mut v = Vec::new();
    for j in 0..=ny {
        for i in 0..=nx {
            v.push(Point3::new(
                width * (i as f64 / nx as f64 - 0.5),
                height * (j as f64 / ny as f64 - 0.5),
                0.0,
            ));
        }
    }
    let id = |i: usize, j: usize| j * (nx + 1) + i;
    let mut f = Vec::new();
    for j in 0..ny {
        for i in 0..nx {
            f.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
            f.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
        }
    }
    build(v, f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::topology_report;

    #[test]
    fn closed_primitives_are_outward() {
        for m in [
            icosphere(2.0, 2),
            uv_sphere(2.0, 24, 12),
            capsule(1.0, 2.0, 24, 4, 6),
            tetrahedron(),
        ] {
            let r = topology_report(&m);
            assert!(r.is_watertight);
            assert_eq!(r.euler_characteristic, 2);
            // positive signed volume means outward winding
            let vol: f64 = (0..m.faces.len())
                .map(|f| {
                    let [a, b, c] = m.triangle(f);
                    a.coords.dot(&b.coords.cross(&c.coords)) / 6.0
                })
                .sum();
            assert!(vol > 0.0);
        }
    }
}
