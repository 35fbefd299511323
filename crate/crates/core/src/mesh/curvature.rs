use nalgebra::Vector3;

use super::{edge_use_counts, TriMesh};
use crate::error::{Error, Result};
use crate::pointops::KdTree;

/// Discrete mean-curvature magnitude per vertex from the cotangent Laplacian
/// over mixed Voronoi areas. Boundary vertices copy the value of their
/// nearest interior vertex.
pub fn raw_mean_curvature(mesh: &TriMesh) -> Result<Vec<f64>> {
    let n = mesh.vertices.len();
    let mut lap = vec![Vector3::<f64>::zeros(); n];
    let mut area = vec![0.0f64; n];

    for f in &mesh.faces {
        let p = [
            mesh.vertices[f[0]],
            mesh.vertices[f[1]],
            mesh.vertices[f[2]],
        ];
        let tri_area = 0.5 * (p[1] - p[0]).cross(&(p[2] - p[0])).norm();
        if tri_area == 0.0 {
            continue;
        }
        let mut cot = [0.0f64; 3];
        let mut obtuse = None;
        for c in 0..3 {
            let u = p[(c + 1) % 3] - p[c];
            let v = p[(c + 2) % 3] - p[c];
            let d = u.dot(&v);
            cot[c] = d / u.cross(&v).norm();
            if d < 0.0 {
                obtuse = Some(c);
            }
        }
        for c in 0..3 {
            let a = (c + 1) % 3;
            let b = (c + 2) % 3;
            let e = p[a] - p[b];
            lap[f[a]] += cot[c] * e;
            lap[f[b]] -= cot[c] * e;
        }
        for c in 0..3 {
            let share = match obtuse {
                None => {
                    let q = (c + 1) % 3;
                    let r = (c + 2) % 3;
                    ((p[c] - p[r]).norm_squared() * cot[q] + (p[c] - p[q]).norm_squared() * cot[r])
                        / 8.0
                }
                Some(o) if o == c => tri_area / 2.0,
                Some(_) => tri_area / 4.0,
            };
            area[f[c]] += share;
        }
    }

    let mut on_boundary = vec![false; n];
    let mut referenced = vec![false; n];
    for f in &mesh.faces {
        for &v in f {
            referenced[v] = true;
        }
    }
    for (e, count) in edge_use_counts(mesh) {
        if count == 1 {
            on_boundary[e[0]] = true;
            on_boundary[e[1]] = true;
        }
    }

    let mut h = vec![0.0f64; n];
    let mut degenerate = 0usize;
    for v in 0..n {
        if on_boundary[v] || !referenced[v] {
            continue;
        }
        if area[v] <= 0.0 {
            degenerate += 1;
            continue;
        }
        h[v] = (lap[v] / (2.0 * area[v])).norm() / 2.0;
    }
    if degenerate > 0 {
        log::warn!("{degenerate} vertices with zero-area one-ring; curvature set to 0");
    }

    let interior: Vec<usize> = (0..n)
        .filter(|&v| referenced[v] && !on_boundary[v])
        .collect();
    if interior.is_empty() {
        return Err(Error::InvalidArgument(
            "curvature estimation needs at least one interior vertex".into(),
        ));
    }
    if interior.len() < n {
        let pts: Vec<_> = interior.iter().map(|&v| mesh.vertices[v]).collect();
        let tree = KdTree::build(&pts);
        for v in 0..n {
            if on_boundary[v] || !referenced[v] {
                let (idx, _) = tree.nearest(&mesh.vertices[v]).expect("non-empty tree");
                h[v] = h[interior[idx]];
            }
        }
    }
    Ok(h)
}

/// Mean-curvature magnitudes scaled into `[0, 1]` by the per-mesh 99th
/// percentile and clamped.
pub fn estimate_curvature(mesh: &TriMesh) -> Result<Vec<f64>> {
    let raw = raw_mean_curvature(mesh)?;
    Ok(normalize_by_percentile(&raw, 0.99))
}

pub(crate) fn normalize_by_percentile(values: &[f64], q: f64) -> Vec<f64> {
    if values.is_empty() {
        return Vec::new();
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    // nearest-rank percentile
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    let scale = sorted[rank - 1];
    // below this the surface is flat up to rounding noise
    if scale <= 1e-9 {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v / scale).min(1.0)).collect()
}
