use std::collections::{BTreeMap, HashSet};

use super::TriMesh;
use crate::error::{Error, Result};

/// Summary of the combinatorial topology of a mesh.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TopologyReport {
    pub euler_characteristic: i64,
    pub boundary_loop_count: usize,
    pub is_watertight: bool,
    pub is_edge_manifold: bool,
    pub connected_component_count: usize,
}

/// Unique undirected edges `[lo, hi]` with the number of faces using each,
/// sorted by edge.
pub fn edge_use_counts(mesh: &TriMesh) -> Vec<([usize; 2], usize)> {
    let mut edges: Vec<[usize; 2]> = Vec::with_capacity(mesh.faces.len() * 3);
    for f in &mesh.faces {
        for k in 0..3 {
            let (a, b) = (f[k], f[(k + 1) % 3]);
            edges.push([a.min(b), a.max(b)]);
        }
    }
    edges.sort_unstable();
    let mut out: Vec<([usize; 2], usize)> = Vec::new();
    for e in edges {
        match out.last_mut() {
            Some((last, n)) if *last == e => *n += 1,
            _ => out.push((e, 1)),
        }
    }
    out
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // smaller root wins so results do not depend on union order
            let (lo, hi) = (ra.min(rb), ra.max(rb));
            self.parent[hi] = lo;
        }
    }
}

/// Vertex partition by face connectivity, largest component (by face count)
/// first. Ties are ordered by smallest member vertex. Unreferenced vertices
/// form singleton components with zero faces.
pub fn connected_components(mesh: &TriMesh) -> Vec<Vec<usize>> {
    component_partition(mesh).into_iter().map(|(v, _)| v).collect()
}

/// Components as `(sorted vertex ids, face ids)`, ordered like
/// [`connected_components`].
pub(crate) fn component_partition(mesh: &TriMesh) -> Vec<(Vec<usize>, Vec<usize>)> {
    let n = mesh.vertices.len();
    let mut ds = DisjointSet::new(n);
    for f in &mesh.faces {
        ds.union(f[0], f[1]);
        ds.union(f[1], f[2]);
    }
    let mut by_root: BTreeMap<usize, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    for v in 0..n {
        let r = ds.find(v);
        by_root.entry(r).or_default().0.push(v);
    }
    for (fi, f) in mesh.faces.iter().enumerate() {
        let r = ds.find(f[0]);
        by_root.entry(r).or_default().1.push(fi);
    }
    let mut comps: Vec<(Vec<usize>, Vec<usize>)> = by_root.into_values().collect();
    // stable sort keeps the smallest-vertex order among equal face counts
    comps.sort_by(|a, b| b.1.len().cmp(&a.1.len()));
    comps
}

/// Closed boundary cycles (edges used by exactly one face). Each cycle lists
/// its vertices once, oriented along the face winding where possible.
pub fn boundary_loops(mesh: &TriMesh) -> Result<Vec<Vec<usize>>> {
    let counts = edge_use_counts(mesh);
    if let Some((e, n)) = counts.iter().find(|(_, n)| *n > 2) {
        return Err(Error::NonManifoldEdge(e[0], e[1], *n));
    }
    Ok(walk_boundary(mesh, &counts))
}

pub(crate) fn walk_boundary(mesh: &TriMesh, counts: &[([usize; 2], usize)]) -> Vec<Vec<usize>> {
    let boundary: HashSet<[usize; 2]> = counts
        .iter()
        .filter(|(_, n)| *n == 1)
        .map(|(e, _)| *e)
        .collect();
    if boundary.is_empty() {
        return Vec::new();
    }
    let mut directed: HashSet<(usize, usize)> = HashSet::new();
    for f in &mesh.faces {
        for k in 0..3 {
            let (a, b) = (f[k], f[(k + 1) % 3]);
            if boundary.contains(&[a.min(b), a.max(b)]) {
                directed.insert((a, b));
            }
        }
    }
    let mut adjacency: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for e in &boundary {
        adjacency.entry(e[0]).or_default().push(e[1]);
        adjacency.entry(e[1]).or_default().push(e[0]);
    }
    for nbrs in adjacency.values_mut() {
        nbrs.sort_unstable();
    }
    let mut used: HashSet<[usize; 2]> = HashSet::new();
    let mut loops = Vec::new();
    let starts: Vec<usize> = adjacency.keys().copied().collect();
    for start in starts {
        loop {
            let has_unused = adjacency[&start]
                .iter()
                .any(|&b| !used.contains(&[start.min(b), start.max(b)]));
            if !has_unused {
                break;
            }
            let mut cycle = vec![start];
            let mut cur = start;
            loop {
                let nbrs = &adjacency[&cur];
                let free = |b: &&usize| !used.contains(&[cur.min(**b), cur.max(**b)]);
                let next = nbrs
                    .iter()
                    .filter(free)
                    .find(|&&b| directed.contains(&(cur, b)))
                    .or_else(|| nbrs.iter().find(free))
                    .copied();
                let Some(next) = next else { break };
                used.insert([cur.min(next), cur.max(next)]);
                if next == start {
                    break;
                }
                cycle.push(next);
                cur = next;
            }
            if cycle.len() >= 2
                && !directed.contains(&(cycle[0], cycle[1]))
                && directed.contains(&(cycle[1], cycle[0]))
            {
                cycle[1..].reverse();
            }
            loops.push(cycle);
        }
    }
    loops
}

/// Euler characteristic, boundary and manifold flags, component count.
pub fn topology_report(mesh: &TriMesh) -> TopologyReport {
    let counts = edge_use_counts(mesh);
    let is_edge_manifold = counts.iter().all(|(_, n)| *n <= 2);
    let loops = walk_boundary(mesh, &counts);
    let is_watertight = !mesh.faces.is_empty() && counts.iter().all(|(_, n)| *n == 2);
    let euler_characteristic =
        mesh.vertices.len() as i64 - counts.len() as i64 + mesh.faces.len() as i64;
    TopologyReport {
        euler_characteristic,
        boundary_loop_count: loops.len(),
        is_watertight,
        is_edge_manifold,
        connected_component_count: connected_components(mesh).len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::primitives;
    use nalgebra::Point3;

    fn two_tetras() -> TriMesh {
        let mut a = primitives::tetrahedron();
        let mut b = primitives::tetrahedron();
        for p in &mut b.vertices {
            p.x += 5.0;
        }
        a.append(&b);
        a
    }

    #[test]
    fn sphere_is_closed_genus_zero() {
        let s = primitives::icosphere(1.0, 2);
        let r = topology_report(&s);
        assert_eq!(r.euler_characteristic, 2);
        assert!(r.is_watertight);
        assert!(r.is_edge_manifold);
        assert_eq!(r.boundary_loop_count, 0);
        assert_eq!(r.connected_component_count, 1);
        assert!(boundary_loops(&s).unwrap().is_empty());
    }

    #[test]
    fn two_tetrahedra_two_components() {
        let comps = connected_components(&two_tetras());
        assert_eq!(comps.len(), 2);
        assert_eq!(comps[0], vec![0, 1, 2, 3]);
        assert_eq!(comps[1], vec![4, 5, 6, 7]);
    }

    #[test]
    fn open_cylinder_has_two_loops() {
        let c = primitives::open_cylinder(4.0, 8.0, 64, 8);
        let loops = boundary_loops(&c).unwrap();
        assert_eq!(loops.len(), 2);
        assert!(loops.iter().all(|l| l.len() == 64));
        let r = topology_report(&c);
        assert_eq!(r.euler_characteristic, 0);
        assert!(!r.is_watertight);
    }

    #[test]
    fn fan_disk_has_one_loop() {
        let d = primitives::disk_fan(1.0, 12);
        let r = topology_report(&d);
        assert_eq!(r.euler_characteristic, 1);
        assert_eq!(r.boundary_loop_count, 1);
    }

    #[test]
    fn torus_has_zero_euler_characteristic() {
        let t = primitives::torus(3.0, 1.0, 32, 16);
        let r = topology_report(&t);
        assert_eq!(r.euler_characteristic, 0);
        assert!(r.is_watertight);
    }

    #[test]
    fn hemisphere_loop_lies_on_equator() {
        let s = primitives::uv_sphere(1.0, 48, 24);
        let keep: Vec<usize> = (0..s.faces.len())
            .filter(|&f| s.triangle(f).iter().all(|p| p.z >= -1e-12))
            .collect();
        let (h, _) = s.submesh(&keep);
        let loops = boundary_loops(&h).unwrap();
        assert_eq!(loops.len(), 1);
        // brute force: every vertex incident to an edge used once
        let counts = edge_use_counts(&h);
        let mut on_boundary: Vec<usize> = counts
            .iter()
            .filter(|(_, n)| *n == 1)
            .flat_map(|(e, _)| e.iter().copied())
            .collect();
        on_boundary.sort_unstable();
        on_boundary.dedup();
        let mut got = loops[0].clone();
        got.sort_unstable();
        assert_eq!(got, on_boundary);
        for &v in &loops[0] {
            assert!(h.vertices[v].z.abs() < 1e-9);
        }
    }

    #[test]
    fn non_manifold_edge_is_reported() {
        let verts = vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
            Point3::new(0.0, -1.0, 0.0),
            Point3::new(0.0, 0.0, 1.0),
        ];
        let m = TriMesh::new(verts, vec![[0, 1, 2], [1, 0, 3], [0, 1, 4]]).unwrap();
        assert!(matches!(
            boundary_loops(&m),
            Err(Error::NonManifoldEdge(0, 1, 3))
        ));
        assert!(!topology_report(&m).is_edge_manifold);
    }

    #[test]
    fn loop_follows_face_winding() {
        let d = primitives::disk_fan(1.0, 8);
        let l = &boundary_loops(&d).unwrap()[0];
        let directed: HashSet<(usize, usize)> = d
            .faces
            .iter()
            .flat_map(|f| (0..3).map(move |k| (f[k], f[(k + 1) % 3])))
            .collect();
        for k in 0..l.len() {
            assert!(directed.contains(&(l[k], l[(k + 1) % l.len()])));
        }
    }
}
