//! Point-cloud primitives: nearest neighbours, farthest point sampling,
//! voxelization and fixed-fraction downsampling.

mod kdtree;

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{Point3, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mesh::io::ply::{PlyData, PlyEncoding, PlyType};
use crate::mesh::io::{self as meshio};

pub use kdtree::KdTree;

/// Point cloud in millimeters with optional per-point attributes.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabeledPointCloud {
    pub points: Vec<Point3<f64>>,
    pub labels: Option<Vec<u8>>,
    pub normals: Option<Vec<Vector3<f64>>>,
    pub curvature: Option<Vec<f64>>,
    pub margin_flags: Option<Vec<bool>>,
}

impl LabeledPointCloud {
    pub fn new(points: Vec<Point3<f64>>) -> Self {
        Self {
            points,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Checks attribute lengths, unit normals and the curvature range.
    pub fn validate(&self) -> Result<()> {
        let n = self.points.len();
        let lens = [
            ("label", self.labels.as_ref().map(Vec::len)),
            ("normal", self.normals.as_ref().map(Vec::len)),
            ("curvature", self.curvature.as_ref().map(Vec::len)),
            ("margin_flag", self.margin_flags.as_ref().map(Vec::len)),
        ];
        for (name, len) in lens {
            if let Some(len) = len {
                if len != n {
                    return Err(Error::AttributeLength {
                        name,
                        len,
                        expected: n,
                    });
                }
            }
        }
        if let Some(normals) = &self.normals {
            if let Some(bad) = normals.iter().find(|v| (v.norm() - 1.0).abs() > 1e-6) {
                return Err(Error::InvalidArgument(format!("normal {bad:?} is not unit length")));
            }
        }
        if let Some(c) = &self.curvature {
            if c.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::InvalidArgument("curvature outside [0, 1]".into()));
            }
        }
        if let Some(l) = &self.labels {
            if l.iter().any(|&v| v > 1) {
                return Err(Error::InvalidArgument("labels must be 0 or 1".into()));
            }
        }
        Ok(())
    }

    /// Subset by index, carrying every attribute along.
    pub fn gather(&self, indices: &[usize]) -> LabeledPointCloud {
        fn pick<T: Clone>(v: &Option<Vec<T>>, idx: &[usize]) -> Option<Vec<T>> {
            v.as_ref().map(|v| idx.iter().map(|&i| v[i].clone()).collect())
        }
        LabeledPointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            labels: pick(&self.labels, indices),
            normals: pick(&self.normals, indices),
            curvature: pick(&self.curvature, indices),
            margin_flags: pick(&self.margin_flags, indices),
        }
    }

    pub fn to_ply(&self, encoding: PlyEncoding) -> PlyData {
        let mut data = PlyData::new(encoding);
        let mut el = meshio::vertex_element(
            &self.points,
            self.labels
                .as_ref()
                .map(|l| l.iter().map(|&v| v as f64).collect()),
            self.normals.as_deref(),
            self.curvature.as_deref(),
        );
        if let Some(m) = &self.margin_flags {
            el = el.scalar(
                "margin",
                PlyType::U8,
                m.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
            );
        }
        data.elements.push(el);
        data
    }

    pub fn from_ply(data: &PlyData) -> Result<Self> {
        let el = data
            .element("vertex")
            .ok_or_else(|| Error::Parse("PLY has no vertex element".into()))?;
        for p in &el.properties {
            if !["x", "y", "z", "label", "nx", "ny", "nz", "curvature", "margin"].contains(&p.name.as_str()) {
                log::warn!("skipping unsupported point property `{}`", p.name);
            }
        }
        Ok(LabeledPointCloud {
            points: meshio::points_from_vertex_element(el)?,
            labels: el
                .scalar_column("label")
                .map(|l| l.iter().map(|&v| v as u8).collect()),
            normals: meshio::normals_from_vertex_element(el)
                .map(|n| n.into_iter().map(|v| v.normalize()).collect()),
            curvature: el.scalar_column("curvature").map(<[f64]>::to_vec),
            margin_flags: el
                .scalar_column("margin")
                .map(|m| m.iter().map(|&v| v != 0.0).collect()),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        meshio::write_ply_file(path, &self.to_ply(PlyEncoding::BinaryLittleEndian))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_ply(&meshio::read_ply_file(path)?)
    }
}

/// For each query point, the index of and distance to its closest target
/// point. Ties resolve to the lowest target index.
pub fn nearest_neighbor(query: &[Point3<f64>], target: &[Point3<f64>]) -> Result<(Vec<usize>, Vec<f64>)> {
    if target.is_empty() {
        return Err(Error::EmptyTarget);
    }
    let tree = KdTree::build(target);
    Ok(nearest_with(&tree, query))
}

pub(crate) fn nearest_with(tree: &KdTree, query: &[Point3<f64>]) -> (Vec<usize>, Vec<f64>) {
    query
        .par_iter()
        .map(|q| tree.nearest(q).expect("non-empty tree"))
        .unzip()
}

/// Squared-distance variant used by the Chamfer family.
pub(crate) fn nearest_squared(query: &[Point3<f64>], target: &[Point3<f64>]) -> (Vec<usize>, Vec<f64>) {
    let tree = KdTree::build(target);
    query
        .par_iter()
        .map(|q| tree.nearest_squared(q).expect("non-empty tree"))
        .unzip()
}

/// Greedy max-min subset of `k` indices starting at `start`. Ties pick the
/// lowest index.
pub fn farthest_point_sample(points: &[Point3<f64>], k: usize, start: usize) -> Result<Vec<usize>> {
    let n = points.len();
    if k > n {
        return Err(Error::KTooLarge { k, n });
    }
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if start >= n {
        return Err(Error::InvalidArgument(format!("start {start} out of range for {n} points")));
    }
    let mut selected = Vec::with_capacity(k);
    let mut min_d = vec![f64::INFINITY; n];
    let mut taken = vec![false; n];
    let mut cur = start;
    for _ in 0..k {
        selected.push(cur);
        taken[cur] = true;
        let c = points[cur];
        let mut best = (f64::NEG_INFINITY, usize::MAX);
        for (i, p) in points.iter().enumerate() {
            let d = (p - c).norm_squared();
            if d < min_d[i] {
                min_d[i] = d;
            }
            if !taken[i] && min_d[i] > best.0 {
                best = (min_d[i], i);
            }
        }
        cur = best.1;
    }
    Ok(selected)
}

/// Unit normals from the smallest principal axis of each point's `k`
/// nearest neighbors, flipped to point away from the cloud centroid.
pub fn estimate_normals(points: &[Point3<f64>], k: usize) -> Result<Vec<Vector3<f64>>> {
    if points.len() < 3 {
        return Err(Error::EmptySet);
    }
    if k < 3 {
        return Err(Error::InvalidArgument("normal estimation needs k >= 3".into()));
    }
    let tree = KdTree::build(points);
    let center = points.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / points.len() as f64;
    Ok(points
        .par_iter()
        .map(|p| {
            let nbrs = tree.k_nearest(p, k.min(points.len()));
            let mean = nbrs.iter().fold(Vector3::zeros(), |a, &(i, _)| a + points[i].coords) / nbrs.len() as f64;
            let cov = nbrs.iter().fold(nalgebra::Matrix3::zeros(), |a, &(i, _)| {
                let d = points[i].coords - mean;
                a + d * d.transpose()
            });
            let eig = cov.symmetric_eigen();
            let smallest = (0..3).min_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b])).unwrap();
            let n: Vector3<f64> = eig.eigenvectors.column(smallest).into_owned().normalize();
            if n.dot(&(p.coords - center)) < 0.0 {
                -n
            } else {
                n
            }
        })
        .collect())
}

/// Sparse voxel grid: cell index → member point indices.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelMap {
    pub cell_size: f64,
    pub origin: Point3<f64>,
    pub cells: BTreeMap<[i64; 3], Vec<usize>>,
}

impl VoxelMap {
    pub fn cell_of(&self, p: &Point3<f64>) -> [i64; 3] {
        cell_index(p, &self.origin, self.cell_size)
    }
}

fn cell_index(p: &Point3<f64>, origin: &Point3<f64>, cell: f64) -> [i64; 3] {
    [
        ((p.x - origin.x) / cell).floor() as i64,
        ((p.y - origin.y) / cell).floor() as i64,
        ((p.z - origin.z) / cell).floor() as i64,
    ]
}

/// Voxelizes with the origin at the cloud's bounding-box minimum.
pub fn voxelize(cloud: &LabeledPointCloud, cell_size: f64) -> Result<VoxelMap> {
    let origin = crate::mesh::bounding_box(&cloud.points)
        .map(|(lo, _)| lo)
        .unwrap_or_else(Point3::origin);
    voxelize_from(cloud, cell_size, origin)
}

pub fn voxelize_from(cloud: &LabeledPointCloud, cell_size: f64, origin: Point3<f64>) -> Result<VoxelMap> {
    if !(cell_size > 0.0) {
        return Err(Error::InvalidArgument(format!("cell size {cell_size} must be positive")));
    }
    let mut cells: BTreeMap<[i64; 3], Vec<usize>> = BTreeMap::new();
    for (i, p) in cloud.points.iter().enumerate() {
        cells.entry(cell_index(p, &origin, cell_size)).or_default().push(i);
    }
    Ok(VoxelMap {
        cell_size,
        origin,
        cells,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fraction {
    Half,
    Quarter,
}

impl Fraction {
    pub fn value(self) -> f64 {
        match self {
            Fraction::Half => 0.5,
            Fraction::Quarter => 0.25,
        }
    }
}

/// Keeps `round(N * fraction)` points chosen by farthest point sampling.
pub fn downsample_fraction(cloud: &LabeledPointCloud, fraction: Fraction, start: usize) -> Result<LabeledPointCloud> {
    let target = cloud.len() as f64 * fraction.value();
    if target < 1.0 {
        return Err(Error::InvalidArgument(format!(
            "{} points too few for fraction {}",
            cloud.len(),
            fraction.value()
        )));
    }
    let idx = farthest_point_sample(&cloud.points, target.round() as usize, start)?;
    Ok(cloud.gather(&idx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(n: usize, seed: u64, scale: f64) -> Vec<Point3<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                Point3::new(
                    rng.random::<f64>() * scale,
                    rng.random::<f64>() * scale,
                    rng.random::<f64>() * scale,
                )
            })
            .collect()
    }

    fn brute_nn(q: &[Point3<f64>], t: &[Point3<f64>]) -> (Vec<usize>, Vec<f64>) {
        q.iter()
            .map(|p| {
                let mut best = (usize::MAX, f64::INFINITY);
                for (i, x) in t.iter().enumerate() {
                    let d = (p - x).norm_squared();
                    if d < best.1 {
                        best = (i, d);
                    }
                }
                (best.0, best.1.sqrt())
            })
            .unzip()
    }

    // O(Nk) reference written without incremental min-distance caching
    fn fps_reference(p: &[Point3<f64>], k: usize, start: usize) -> Vec<usize> {
        let mut sel = vec![start];
        while sel.len() < k {
            let mut best = (f64::NEG_INFINITY, 0);
            for i in 0..p.len() {
                if sel.contains(&i) {
                    continue;
                }
                let d = sel
                    .iter()
                    .map(|&s| (p[i] - p[s]).norm_squared())
                    .fold(f64::INFINITY, f64::min);
                if d > best.0 {
                    best = (d, i);
                }
            }
            sel.push(best.1);
        }
        sel
    }

    #[test]
    fn nn_identity_and_simple_case() {
        let pts = random_cloud(50, 1, 1.0);
        let (idx, d) = nearest_neighbor(&pts, &pts).unwrap();
        assert_eq!(idx, (0..50).collect::<Vec<_>>());
        assert!(d.iter().all(|&x| x == 0.0));

        let (idx, d) = nearest_neighbor(
            &[Point3::origin()],
            &[Point3::new(1.0, 0.0, 0.0), Point3::new(0.0, 2.0, 0.0)],
        )
        .unwrap();
        assert_eq!((idx[0], d[0]), (0, 1.0));
        assert!(matches!(nearest_neighbor(&pts, &[]), Err(Error::EmptyTarget)));
    }

    #[test]
    fn nn_matches_exhaustive_scan() {
        let q = random_cloud(512, 2, 10.0);
        let t = random_cloud(512, 3, 10.0);
        assert_eq!(nearest_neighbor(&q, &t).unwrap(), brute_nn(&q, &t));
    }

    #[test]
    fn fps_small_cases() {
        let sq = vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(1.0, 1.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
        ];
        let mut s = farthest_point_sample(&sq, 4, 0).unwrap();
        s.sort_unstable();
        assert_eq!(s, vec![0, 1, 2, 3]);
        let line: Vec<_> = (0..4).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect();
        assert_eq!(farthest_point_sample(&line, 2, 0).unwrap(), vec![0, 3]);
        assert!(matches!(
            farthest_point_sample(&line, 5, 0),
            Err(Error::KTooLarge { k: 5, n: 4 })
        ));
    }

    #[test]
    fn fps_matches_reference() {
        let p = random_cloud(256, 4, 5.0);
        assert_eq!(farthest_point_sample(&p, 64, 0).unwrap(), fps_reference(&p, 64, 0));
        assert_eq!(farthest_point_sample(&p, 64, 17).unwrap(), fps_reference(&p, 64, 17));
    }

    #[test]
    fn voxelize_cases() {
        let one = LabeledPointCloud::new(vec![Point3::new(0.3, 0.2, 0.1)]);
        assert_eq!(voxelize(&one, 1.0).unwrap().cells.len(), 1);

        let corners: Vec<_> = (0..8)
            .map(|i| Point3::new((i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64))
            .collect();
        let vm = voxelize(&LabeledPointCloud::new(corners), 0.5).unwrap();
        assert_eq!(vm.cells.len(), 8);

        let pts = random_cloud(10_000, 9, 20.0);
        let cloud = LabeledPointCloud::new(pts.clone());
        let vm = voxelize(&cloud, 0.5).unwrap();
        for (cell, members) in &vm.cells {
            for &i in members {
                let p = pts[i];
                let expect = [
                    ((p.x - vm.origin.x) / 0.5).floor() as i64,
                    ((p.y - vm.origin.y) / 0.5).floor() as i64,
                    ((p.z - vm.origin.z) / 0.5).floor() as i64,
                ];
                assert_eq!(*cell, expect);
            }
        }
        assert!(voxelize(&cloud, 0.0).is_err());
    }

    #[test]
    fn boundary_points_use_floor() {
        let cloud = LabeledPointCloud::new(vec![Point3::new(0.0, 0.0, 0.0), Point3::new(1.0, 0.5, 0.5)]);
        let vm = voxelize(&cloud, 1.0).unwrap();
        assert_eq!(vm.cell_of(&cloud.points[1]), [1, 0, 0]);
    }

    #[test]
    fn downsample_carries_attributes() {
        let mut c = LabeledPointCloud::new(vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(1.0, 1.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
        ]);
        c.labels = Some(vec![0, 1, 1, 0]);
        c.margin_flags = Some(vec![true, false, true, false]);
        let d = downsample_fraction(&c, Fraction::Half, 0).unwrap();
        assert_eq!(d.len(), 2);
        let idx = farthest_point_sample(&c.points, 2, 0).unwrap();
        assert_eq!(d.labels.unwrap(), idx.iter().map(|&i| c.labels.as_ref().unwrap()[i]).collect::<Vec<_>>());
        assert_eq!(
            d.margin_flags.unwrap(),
            idx.iter().map(|&i| c.margin_flags.as_ref().unwrap()[i]).collect::<Vec<_>>()
        );

        let big = LabeledPointCloud::new(random_cloud(4096, 11, 3.0));
        assert_eq!(downsample_fraction(&big, Fraction::Quarter, 0).unwrap().len(), 1024);
        let tiny = LabeledPointCloud::new(random_cloud(3, 1, 1.0));
        assert!(downsample_fraction(&tiny, Fraction::Quarter, 0).is_err());
    }

    #[test]
    fn margin_flags_survive_ply() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ply");
        let mut c = LabeledPointCloud::new(random_cloud(20, 3, 1.0));
        c.margin_flags = Some((0..20).map(|i| i % 3 == 0).collect());
        c.curvature = Some((0..20).map(|i| i as f64 / 20.0).collect());
        c.save(&path).unwrap();
        let back = LabeledPointCloud::load(&path).unwrap();
        assert_eq!(back.points, c.points);
        assert_eq!(back.margin_flags, c.margin_flags);
        back.validate().unwrap();
    }

    #[test]
    fn pca_normals_on_a_sphere_point_outward() {
        let pts = crate::surface_recon::tests::fibonacci_sphere(2000);
        let normals = estimate_normals(&pts, 12).unwrap();
        for (p, n) in pts.iter().zip(&normals) {
            assert!((n.norm() - 1.0).abs() < 1e-12);
            assert!(n.dot(&p.coords.normalize()) > 0.99);
        }
        assert!(estimate_normals(&pts[..2], 12).is_err());
        assert!(estimate_normals(&pts, 2).is_err());
    }

    proptest! {
        #[test]
        fn translation_keeps_nn_and_fps(seed in 0u64..1000, dx in -50.0f64..50.0, dy in -50.0f64..50.0) {
            let q = random_cloud(40, seed, 4.0);
            let t = random_cloud(60, seed + 1, 4.0);
            let shift = Vector3::new(dx, dy, 0.25);
            let qs: Vec<_> = q.iter().map(|p| p + shift).collect();
            let ts: Vec<_> = t.iter().map(|p| p + shift).collect();
            let (ia, da) = nearest_neighbor(&q, &t).unwrap();
            let (ib, db) = nearest_neighbor(&qs, &ts).unwrap();
            prop_assert_eq!(ia, ib);
            for (a, b) in da.iter().zip(&db) {
                prop_assert!((a - b).abs() < 1e-9);
            }
            prop_assert_eq!(farthest_point_sample(&t, 20, 3).unwrap(), farthest_point_sample(&ts, 20, 3).unwrap());
        }

        #[test]
        fn fps_indices_distinct_and_spacing_shrinks(seed in 0u64..1000, k in 2usize..40) {
            let p = random_cloud(64, seed, 1.0);
            let s = farthest_point_sample(&p, k, 5).unwrap();
            prop_assert_eq!(s[0], 5);
            let mut sorted = s.clone();
            sorted.sort_unstable();
            sorted.dedup();
            prop_assert_eq!(sorted.len(), k);
            let min_pair = |sel: &[usize]| {
                let mut m = f64::INFINITY;
                for a in 0..sel.len() {
                    for b in a + 1..sel.len() {
                        m = m.min((p[sel[a]] - p[sel[b]]).norm());
                    }
                }
                m
            };
            let longer = farthest_point_sample(&p, k + 1, 5).unwrap();
            prop_assert!(min_pair(&longer) <= min_pair(&s));
        }

        #[test]
        fn voxel_contents_permute_indices(seed in 0u64..1000, cell in 0.05f64..2.0) {
            let cloud = LabeledPointCloud::new(random_cloud(200, seed, 5.0));
            let vm = voxelize(&cloud, cell).unwrap();
            let mut all: Vec<usize> = vm.cells.values().flatten().copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..200).collect::<Vec<_>>());
        }
    }
}
