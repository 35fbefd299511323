//! Trimming a watertight reconstruction back to an open crown that ends on
//! the cervical margin.

mod geometry;

use std::collections::{HashMap, VecDeque};

use nalgebra::{Point3, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::margin::MarginCurve;
use crate::mesh::{self, TriMesh};

pub use geometry::{closest_point_on_polyline, closest_point_on_triangle, TriangleIndex};

/// Faces whose area falls below this after projection are removed.
pub const DEGENERATE_AREA: f64 = 1e-8;
const MAX_SETTLE_ROUNDS: usize = 12;
const MAX_CLEANUP_ROUNDS: usize = 64;

/// Triangle fan spanned by the margin polyline and its centroid.
#[derive(Debug, Clone)]
pub struct CutSurface {
    pub fan_triangles: Vec<[Point3<f64>; 3]>,
    pub oriented_normals: Vec<Vector3<f64>>,
    pub growth_dir: Vector3<f64>,
    polyline: Vec<Point3<f64>>,
    index: TriangleIndex,
}

pub fn build_cut_surface(margin: &MarginCurve) -> Result<CutSurface> {
    let pts = &margin.resampled;
    let c = margin.centroid;
    let n = pts.len();
    if n < 3 {
        return Err(Error::DegenerateFan(format!("{n} margin points")));
    }
    let mut fan = Vec::with_capacity(n);
    let mut normals = Vec::with_capacity(n);
    for i in 0..n {
        let (a, b) = (pts[i], pts[(i + 1) % n]);
        if (a - c).norm() <= 1e-9 {
            return Err(Error::DegenerateFan(format!("margin point {i} coincides with the centroid")));
        }
        let cross = (b - a).cross(&(c - a));
        let len = cross.norm();
        if len <= 0.0 || !len.is_finite() {
            return Err(Error::DegenerateFan(format!("fan triangle {i} has zero area")));
        }
        let mut nrm = cross / len;
        if nrm.dot(&margin.growth_dir) < 0.0 {
            nrm = -nrm;
        }
        fan.push([a, b, c]);
        normals.push(nrm);
    }
    Ok(CutSurface {
        index: TriangleIndex::build(fan.clone()),
        fan_triangles: fan,
        oriented_normals: normals,
        growth_dir: margin.growth_dir,
        polyline: pts.clone(),
    })
}

impl CutSurface {
    /// Index of the fan triangle nearest to `p` and the closest point on it.
    /// Ties go to the lowest triangle index.
    pub fn closest_triangle(&self, p: &Point3<f64>) -> (usize, Point3<f64>) {
        self.index.closest(p)
    }

    /// Offset of `p` along the normal of its nearest fan triangle. Positive
    /// values are on the crown side.
    pub fn signed_height(&self, p: &Point3<f64>) -> f64 {
        let (t, cp) = self.closest_triangle(p);
        (p - cp).dot(&self.oriented_normals[t])
    }

    pub fn polyline(&self) -> &[Point3<f64>] {
        &self.polyline
    }

    pub fn area(&self) -> f64 {
        self.fan_triangles
            .iter()
            .map(|t| (t[1] - t[0]).cross(&(t[2] - t[0])).norm() / 2.0)
            .sum()
    }
}

pub fn signed_height(point: &Point3<f64>, surface: &CutSurface) -> f64 {
    surface.signed_height(point)
}

/// Result of [`trim_crown`].
#[derive(Debug, Clone)]
pub struct TrimOutcome {
    pub mesh: TriMesh,
    pub removed_faces: usize,
    pub settle_rounds: usize,
    pub warnings: Vec<String>,
}

/// Removes the part of `watertight` below the margin fan and snaps the new
/// boundary onto the margin polyline.
pub fn postprocess_crown(watertight: &TriMesh, margin: &MarginCurve) -> Result<TriMesh> {
    Ok(trim_crown(watertight, margin)?.mesh)
}

pub fn trim_crown(input: &TriMesh, margin: &MarginCurve) -> Result<TrimOutcome> {
    let surface = build_cut_surface(margin)?;
    let was_watertight = mesh::topology_report(input).is_watertight;
    let mut warnings = Vec::new();

    let below = below_mask(input, &surface);
    if was_watertight && !below.iter().any(|&b| b) {
        return Err(Error::NoIntersection);
    }
    let kept = settle_region(input, below, was_watertight, &mut warnings);
    let mut work = input.submesh(&indices_of(&kept)).0;
    if work.faces.is_empty() {
        return Err(Error::InvalidArgument("cut surface lies above the whole mesh".into()));
    }

    let mut rounds = 0;
    loop {
        rounds += 1;
        let boundary = boundary_vertices(&work);
        for (v, on_boundary) in boundary.iter().enumerate() {
            if *on_boundary {
                work.vertices[v] = closest_point_on_polyline(&work.vertices[v], surface.polyline());
            }
        }
        let heights = below_mask(&work, &surface);
        let drop: Vec<bool> = (0..work.faces.len())
            .map(|f| {
                heights[f]
                    || (work.face_area(f) < DEGENERATE_AREA && work.faces[f].iter().any(|&v| boundary[v]))
            })
            .collect();
        let mut kept = settle_region(&work, drop, false, &mut warnings);
        if kept.iter().all(|&k| k) || rounds >= MAX_SETTLE_ROUNDS {
            if rounds >= MAX_SETTLE_ROUNDS && !kept.iter().all(|&k| k) {
                warnings.push(format!("boundary did not settle after {rounds} rounds"));
                kept.iter_mut().for_each(|k| *k = true);
            }
            break;
        }
        work = work.submesh(&indices_of(&kept)).0;
        if work.faces.is_empty() {
            return Err(Error::InvalidArgument("trimming removed every face".into()));
        }
    }

    let removed = input.faces.len() - work.faces.len();
    let report = mesh::topology_report(&work);
    if report.boundary_loop_count != 1 || report.euler_characteristic != 1 {
        warnings.push(format!(
            "trimmed crown is not a disk: {} boundary loops, euler characteristic {}",
            report.boundary_loop_count, report.euler_characteristic
        ));
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(TrimOutcome {
        mesh: work,
        removed_faces: removed,
        settle_rounds: rounds,
        warnings,
    })
}

fn indices_of(mask: &[bool]) -> Vec<usize> {
    mask.iter().enumerate().filter(|(_, &k)| k).map(|(i, _)| i).collect()
}

fn below_mask(m: &TriMesh, surface: &CutSurface) -> Vec<bool> {
    (0..m.faces.len())
        .into_par_iter()
        .map(|f| surface.signed_height(&m.face_centroid(f)) < 0.0)
        .collect()
}

fn boundary_vertices(m: &TriMesh) -> Vec<bool> {
    let mut on = vec![false; m.vertices.len()];
    for ([a, b], n) in mesh::edge_use_counts(m) {
        if n == 1 {
            on[a] = true;
            on[b] = true;
        }
    }
    on
}

struct Adjacency {
    /// Faces sharing an edge with each face.
    edge_nbrs: Vec<Vec<usize>>,
    /// Faces incident to each vertex.
    vertex_faces: Vec<Vec<usize>>,
    /// Face has an edge used by exactly one face of the whole mesh.
    on_border: Vec<bool>,
}

impl Adjacency {
    fn new(m: &TriMesh) -> Self {
        let mut by_edge: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        let mut vertex_faces = vec![Vec::new(); m.vertices.len()];
        for (fi, f) in m.faces.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                by_edge.entry((a.min(b), a.max(b))).or_default().push(fi);
                vertex_faces[f[k]].push(fi);
            }
        }
        let mut edge_nbrs = vec![Vec::new(); m.faces.len()];
        let mut on_border = vec![false; m.faces.len()];
        let mut edges: Vec<_> = by_edge.into_iter().collect();
        edges.sort_unstable();
        for (_, faces) in edges {
            if faces.len() == 1 {
                on_border[faces[0]] = true;
            }
            for &a in &faces {
                for &b in &faces {
                    if a != b {
                        edge_nbrs[a].push(b);
                    }
                }
            }
        }
        Adjacency {
            edge_nbrs,
            vertex_faces,
            on_border,
        }
    }

    /// Components of the faces where `mask == want`, largest first, ties by
    /// smallest face index. `by_vertex` joins faces sharing only a vertex.
    fn components(&self, m: &TriMesh, mask: &[bool], want: bool, by_vertex: bool) -> Vec<Vec<usize>> {
        let mut seen = vec![false; mask.len()];
        let mut comps = Vec::new();
        for start in 0..mask.len() {
            if seen[start] || mask[start] != want {
                continue;
            }
            let mut comp = Vec::new();
            let mut queue = VecDeque::from([start]);
            seen[start] = true;
            while let Some(f) = queue.pop_front() {
                comp.push(f);
                let mut visit = |g: usize| {
                    if !seen[g] && mask[g] == want {
                        seen[g] = true;
                        queue.push_back(g);
                    }
                };
                if by_vertex {
                    for &v in &m.faces[f] {
                        for &g in &self.vertex_faces[v] {
                            visit(g);
                        }
                    }
                } else {
                    for &g in &self.edge_nbrs[f] {
                        visit(g);
                    }
                }
            }
            comp.sort_unstable();
            comps.push(comp);
        }
        comps.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
        comps
    }
}

/// Turns a face removal mask into a kept mask describing a single
/// edge-connected region without pinched vertices.
///
/// Removed regions that are enclosed by kept faces are restored: on a
/// watertight input only the largest removed region survives, on an open
/// input only regions reaching the existing border do.
fn settle_region(m: &TriMesh, removed: Vec<bool>, watertight: bool, warnings: &mut Vec<String>) -> Vec<bool> {
    let adj = Adjacency::new(m);
    let mut removed = removed;
    for _ in 0..MAX_CLEANUP_ROUNDS {
        let before = removed.clone();

        let rcomps = adj.components(m, &removed, true, true);
        for (i, comp) in rcomps.iter().enumerate() {
            let keep_removed = if watertight {
                i == 0
            } else {
                comp.iter().any(|&f| adj.on_border[f])
            };
            if !keep_removed {
                for &f in comp {
                    removed[f] = false;
                }
            }
        }

        let kcomps = adj.components(m, &removed, false, false);
        if kcomps.len() > 1 {
            let msg = format!("discarded {} disconnected crown islands", kcomps.len() - 1);
            if !warnings.contains(&msg) {
                warnings.push(msg);
            }
        }
        for comp in kcomps.iter().skip(1) {
            for &f in comp {
                removed[f] = true;
            }
        }

        for v in 0..m.vertices.len() {
            let fans = vertex_fans(m, &adj, &removed, v);
            for fan in fans.iter().skip(1) {
                for &f in fan {
                    removed[f] = true;
                }
            }
        }

        if removed == before {
            break;
        }
    }
    removed.iter().map(|&r| !r).collect()
}

/// Kept faces around `v` grouped by edge connectivity through `v`, largest
/// first.
fn vertex_fans(m: &TriMesh, adj: &Adjacency, removed: &[bool], v: usize) -> Vec<Vec<usize>> {
    let faces: Vec<usize> = adj.vertex_faces[v].iter().copied().filter(|&f| !removed[f]).collect();
    if faces.len() < 2 {
        return vec![faces];
    }
    let mut group = vec![usize::MAX; faces.len()];
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in 0..faces.len() {
        if group[i] != usize::MAX {
            continue;
        }
        let g = groups.len();
        group[i] = g;
        let mut members = vec![faces[i]];
        let mut stack = vec![i];
        while let Some(a) = stack.pop() {
            for j in 0..faces.len() {
                if group[j] == usize::MAX && shares_edge_at(m, faces[a], faces[j], v) {
                    group[j] = g;
                    members.push(faces[j]);
                    stack.push(j);
                }
            }
        }
        members.sort_unstable();
        groups.push(members);
    }
    groups.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
    groups
}

fn shares_edge_at(m: &TriMesh, f: usize, g: usize, v: usize) -> bool {
    m.faces[f].iter().any(|&a| a != v && m.faces[g].contains(&a))
}

#[cfg(test)]
mod tests;
