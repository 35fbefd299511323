use nalgebra::Point3;

/// Static 3D KD-tree over a point set. Queries break distance ties by the
/// lowest point index, so results match an exhaustive scan exactly.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Point3<f64>>,
    // implicit balanced tree: the node of `perm[lo..hi]` sits at its midpoint
    perm: Vec<usize>,
    axis: Vec<u8>,
}

#[inline]
fn dist2(a: &Point3<f64>, b: &Point3<f64>) -> f64 {
    (a - b).norm_squared()
}

#[inline]
fn better(d: f64, i: usize, best: (f64, usize)) -> bool {
    d < best.0 || (d == best.0 && i < best.1)
}

impl KdTree {
    pub fn build(points: &[Point3<f64>]) -> Self {
        let mut perm: Vec<usize> = (0..points.len()).collect();
        let mut axis = vec![0u8; points.len()];
        build_range(points, &mut perm, &mut axis, 0, points.len());
        Self {
            points: points.to_vec(),
            perm,
            axis,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3<f64>] {
        &self.points
    }

    /// Index and Euclidean distance of the closest point.
    pub fn nearest(&self, q: &Point3<f64>) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = (f64::INFINITY, usize::MAX);
        self.nearest_in(q, 0, self.points.len(), &mut best);
        Some((best.1, best.0.sqrt()))
    }

    /// Squared distance variant of [`KdTree::nearest`].
    pub fn nearest_squared(&self, q: &Point3<f64>) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = (f64::INFINITY, usize::MAX);
        self.nearest_in(q, 0, self.points.len(), &mut best);
        Some((best.1, best.0))
    }

    fn nearest_in(&self, q: &Point3<f64>, lo: usize, hi: usize, best: &mut (f64, usize)) {
        if lo >= hi {
            return;
        }
        let mid = (lo + hi) / 2;
        let idx = self.perm[mid];
        let p = &self.points[idx];
        let d = dist2(q, p);
        if better(d, idx, *best) {
            *best = (d, idx);
        }
        let ax = self.axis[mid] as usize;
        let diff = q[ax] - p[ax];
        let (near, far) = if diff < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.nearest_in(q, near.0, near.1, best);
        if diff * diff <= best.0 {
            self.nearest_in(q, far.0, far.1, best);
        }
    }

    /// The `k` closest points as `(index, squared distance)`, ordered by
    /// distance then index.
    pub fn k_nearest(&self, q: &Point3<f64>, k: usize) -> Vec<(usize, f64)> {
        let mut heap: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        if k > 0 {
            self.knn_in(q, k, 0, self.points.len(), &mut heap);
        }
        heap.into_iter().map(|(d, i)| (i, d)).collect()
    }

    fn knn_in(&self, q: &Point3<f64>, k: usize, lo: usize, hi: usize, best: &mut Vec<(f64, usize)>) {
        if lo >= hi {
            return;
        }
        let mid = (lo + hi) / 2;
        let idx = self.perm[mid];
        let p = &self.points[idx];
        let d = dist2(q, p);
        if best.len() < k || better(d, idx, *best.last().unwrap()) {
            let pos = best
                .iter()
                .position(|&(bd, bi)| better(d, idx, (bd, bi)))
                .unwrap_or(best.len());
            best.insert(pos, (d, idx));
            best.truncate(k);
        }
        let ax = self.axis[mid] as usize;
        let diff = q[ax] - p[ax];
        let (near, far) = if diff < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.knn_in(q, k, near.0, near.1, best);
        if best.len() < k || diff * diff <= best.last().unwrap().0 {
            self.knn_in(q, k, far.0, far.1, best);
        }
    }

    /// All indices within `radius` (inclusive), sorted ascending.
    pub fn within_radius(&self, q: &Point3<f64>, radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        self.radius_in(q, radius * radius, 0, self.points.len(), &mut out);
        out.sort_unstable();
        out
    }

    fn radius_in(&self, q: &Point3<f64>, r2: f64, lo: usize, hi: usize, out: &mut Vec<usize>) {
        if lo >= hi {
            return;
        }
        let mid = (lo + hi) / 2;
        let idx = self.perm[mid];
        let p = &self.points[idx];
        if dist2(q, p) <= r2 {
            out.push(idx);
        }
        let ax = self.axis[mid] as usize;
        let diff = q[ax] - p[ax];
        if diff < 0.0 || diff * diff <= r2 {
            self.radius_in(q, r2, lo, mid, out);
        }
        if diff >= 0.0 || diff * diff <= r2 {
            self.radius_in(q, r2, mid + 1, hi, out);
        }
    }
}

fn build_range(points: &[Point3<f64>], perm: &mut [usize], axis: &mut [u8], lo: usize, hi: usize) {
    if hi - lo <= 1 {
        return;
    }
    let mut min = [f64::INFINITY; 3];
    let mut max = [f64::NEG_INFINITY; 3];
    for &i in &perm[lo..hi] {
        for k in 0..3 {
            min[k] = min[k].min(points[i][k]);
            max[k] = max[k].max(points[i][k]);
        }
    }
    let ax = (0..3)
        .max_by(|&a, &b| (max[a] - min[a]).total_cmp(&(max[b] - min[b])))
        .unwrap();
    let mid = (lo + hi) / 2;
    perm[lo..hi].select_nth_unstable_by(mid - lo, |&a, &b| {
        points[a][ax].total_cmp(&points[b][ax]).then(a.cmp(&b))
    });
    axis[mid] = ax as u8;
    build_range(points, perm, axis, lo, mid);
    build_range(points, perm, axis, mid + 1, hi);
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(n: usize, seed: u64) -> Vec<Point3<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Point3::new(rng.random(), rng.random(), rng.random()))
            .collect()
    }

    #[test]
    fn knn_and_radius_match_scan() {
        let pts = cloud(300, 5);
        let tree = KdTree::build(&pts);
        for q in cloud(40, 6) {
            let mut all: Vec<(usize, f64)> =
                pts.iter().enumerate().map(|(i, p)| (i, (q - p).norm_squared())).collect();
            all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            assert_eq!(tree.k_nearest(&q, 7), all[..7].to_vec());
            let r = 0.2;
            let mut inside: Vec<usize> = all.iter().filter(|x| x.1 <= r * r).map(|x| x.0).collect();
            inside.sort_unstable();
            assert_eq!(tree.within_radius(&q, r), inside);
        }
    }

    #[test]
    fn duplicate_points_resolve_to_lowest_index() {
        let pts = vec![Point3::new(1.0, 1.0, 1.0); 9];
        let tree = KdTree::build(&pts);
        assert_eq!(tree.nearest(&Point3::origin()).unwrap().0, 0);
    }
}
