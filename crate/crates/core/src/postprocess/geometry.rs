use nalgebra::Point3;

use crate::pointops::KdTree;

/// Closest point on a triangle (Voronoi-region walk).
pub fn closest_point_on_triangle(p: &Point3<f64>, tri: &[Point3<f64>; 3]) -> Point3<f64> {
    let [a, b, c] = *tri;
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return a + ab * v;
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return a + ac * w;
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + (c - b) * w;
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}

pub(crate) fn closest_point_on_segment(p: &Point3<f64>, a: &Point3<f64>, b: &Point3<f64>) -> Point3<f64> {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return *a;
    }
    let t = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    a + ab * t
}

/// Closest point on the closed polyline through `pts`. Ties go to the
/// lowest segment index.
pub fn closest_point_on_polyline(p: &Point3<f64>, pts: &[Point3<f64>]) -> Point3<f64> {
    let n = pts.len();
    let mut best = (f64::INFINITY, *p);
    for i in 0..n {
        let q = closest_point_on_segment(p, &pts[i], &pts[(i + 1) % n]);
        let d = (p - q).norm_squared();
        if d < best.0 {
            best = (d, q);
        }
    }
    best.1
}

/// Closest-triangle queries over a fixed triangle soup.
#[derive(Debug, Clone)]
pub struct TriangleIndex {
    triangles: Vec<[Point3<f64>; 3]>,
    centroids: KdTree,
    max_radius: f64,
}

impl TriangleIndex {
    pub fn build(triangles: Vec<[Point3<f64>; 3]>) -> Self {
        let cents: Vec<Point3<f64>> = triangles
            .iter()
            .map(|t| Point3::from((t[0].coords + t[1].coords + t[2].coords) / 3.0))
            .collect();
        let max_radius = triangles
            .iter()
            .zip(&cents)
            .map(|(t, c)| t.iter().map(|p| (p - c).norm()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        TriangleIndex {
            triangles,
            centroids: KdTree::build(&cents),
            max_radius,
        }
    }

    pub fn triangles(&self) -> &[[Point3<f64>; 3]] {
        &self.triangles
    }

    /// Index of the nearest triangle and the closest point on it. Ties go to
    /// the lowest index. Panics on an empty index.
    pub fn closest(&self, p: &Point3<f64>) -> (usize, Point3<f64>) {
        let (seed, _) = self.centroids.nearest(p).expect("triangle index is empty");
        let seed_cp = closest_point_on_triangle(p, &self.triangles[seed]);
        // a triangle can only beat the seed if its centroid lies within
        // the seed distance plus the largest centroid-to-vertex radius
        let reach = (p - seed_cp).norm() + self.max_radius;
        let mut best = (f64::INFINITY, usize::MAX, seed_cp);
        for t in self.centroids.within_radius(p, reach * (1.0 + 1e-12) + 1e-12) {
            let cp = closest_point_on_triangle(p, &self.triangles[t]);
            let d = (p - cp).norm_squared();
            if d < best.0 || (d == best.0 && t < best.1) {
                best = (d, t, cp);
            }
        }
        (best.1, best.2)
    }
}
