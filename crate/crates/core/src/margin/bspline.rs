use nalgebra::{DMatrix, Matrix3, Point3, Vector3};

use crate::error::{Error, Result};

pub const RESAMPLE_COUNT: usize = 1000;
const MAX_CONTROL_POINTS: usize = 128;
const ARC_TABLE_SIZE: usize = 32 * RESAMPLE_COUNT;

/// Closed periodic uniform cubic B-spline.
#[derive(Debug, Clone)]
pub struct PeriodicSpline {
    pub control: Vec<Point3<f64>>,
}

fn basis(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    [
        (1.0 - t).powi(3) / 6.0,
        (3.0 * t3 - 6.0 * t2 + 4.0) / 6.0,
        (-3.0 * t3 + 3.0 * t2 + 3.0 * t + 1.0) / 6.0,
        t3 / 6.0,
    ]
}

/// Segment index and local parameter for `u` in `[0, 1)`.
fn locate(u: f64, m: usize) -> (usize, f64) {
    let x = u.rem_euclid(1.0) * m as f64;
    let k = (x.floor() as usize).min(m - 1);
    (k, x - k as f64)
}

impl PeriodicSpline {
    pub fn eval(&self, u: f64) -> Point3<f64> {
        let m = self.control.len();
        let (k, t) = locate(u, m);
        let b = basis(t);
        let mut acc = Vector3::zeros();
        for (r, w) in b.iter().enumerate() {
            acc += self.control[(k + r) % m].coords * *w;
        }
        Point3::from(acc)
    }

    /// Sum of squared periodic second differences of the control polygon.
    pub fn roughness(&self) -> f64 {
        let m = self.control.len();
        (0..m)
            .map(|j| {
                let a = self.control[(j + m - 1) % m].coords;
                let b = self.control[j].coords;
                let c = self.control[(j + 1) % m].coords;
                (a - 2.0 * b + c).norm_squared()
            })
            .sum()
    }

    /// `count` points spaced uniformly in arc length, starting at `u = 0`.
    pub fn resample_arc_length(&self, count: usize) -> Vec<Point3<f64>> {
        let us: Vec<f64> = (0..=ARC_TABLE_SIZE).map(|i| i as f64 / ARC_TABLE_SIZE as f64).collect();
        let pts: Vec<Point3<f64>> = us.iter().map(|&u| self.eval(u)).collect();
        let mut cum = vec![0.0; us.len()];
        for i in 1..us.len() {
            cum[i] = cum[i - 1] + (pts[i] - pts[i - 1]).norm();
        }
        let total = cum[us.len() - 1];
        let mut out = Vec::with_capacity(count);
        let mut seg = 0;
        for j in 0..count {
            let s = total * j as f64 / count as f64;
            while seg + 1 < cum.len() - 1 && cum[seg + 1] < s {
                seg += 1;
            }
            let span = cum[seg + 1] - cum[seg];
            let t = if span > 0.0 { (s - cum[seg]) / span } else { 0.0 };
            out.push(self.eval(us[seg] + t * (us[seg + 1] - us[seg])));
        }
        out
    }
}

/// Chord-length parameters in `[0, 1)` for a closed polyline.
pub(crate) fn chord_parameters(points: &[Point3<f64>]) -> Vec<f64> {
    let n = points.len();
    let mut cum = vec![0.0; n + 1];
    for i in 0..n {
        cum[i + 1] = cum[i] + (points[(i + 1) % n] - points[i]).norm();
    }
    let total = cum[n];
    cum.truncate(n);
    cum.iter().map(|c| c / total).collect()
}

struct Fit {
    ata: DMatrix<f64>,
    atb: DMatrix<f64>,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    dtd: DMatrix<f64>,
}

impl Fit {
    fn new(points: &[Point3<f64>], m: usize) -> Self {
        let n = points.len();
        let params = chord_parameters(points);
        let mut a = DMatrix::<f64>::zeros(n, m);
        for (i, &u) in params.iter().enumerate() {
            let (k, t) = locate(u, m);
            for (r, w) in basis(t).iter().enumerate() {
                a[(i, (k + r) % m)] += *w;
            }
        }
        let b = DMatrix::from_fn(n, 3, |i, c| points[i][c]);
        let mut d = DMatrix::<f64>::zeros(m, m);
        for j in 0..m {
            d[(j, (j + m - 1) % m)] += 1.0;
            d[(j, j)] -= 2.0;
            d[(j, (j + 1) % m)] += 1.0;
        }
        Fit {
            ata: a.transpose() * &a,
            atb: a.transpose() * &b,
            a,
            b,
            dtd: d.transpose() * d,
        }
    }

    fn solve(&self, mu: f64) -> Option<DMatrix<f64>> {
        let lhs = &self.ata + &self.dtd * mu;
        if let Some(ch) = lhs.clone().cholesky() {
            return Some(ch.solve(&self.atb));
        }
        lhs.lu().solve(&self.atb)
    }

    fn residual(&self, c: &DMatrix<f64>) -> f64 {
        (&self.a * c - &self.b).norm_squared()
    }
}

fn to_points(c: &DMatrix<f64>) -> Vec<Point3<f64>> {
    (0..c.nrows()).map(|j| Point3::new(c[(j, 0)], c[(j, 1)], c[(j, 2)])).collect()
}

/// Least-squares periodic cubic fit. `smoothing` is the total squared
/// residual (mm²) the fit may spend on smoothing; the second-difference
/// penalty weight is chosen so the residual matches that budget.
pub fn fit_periodic_spline(points: &[Point3<f64>], smoothing: f64) -> Result<PeriodicSpline> {
    if smoothing < 0.0 || !smoothing.is_finite() {
        return Err(Error::InvalidArgument(format!("smoothing must be non-negative, got {smoothing}")));
    }
    let m = points.len().min(MAX_CONTROL_POINTS);
    let fit = Fit::new(points, m);
    let singular = || Error::DegenerateLoop("spline system is singular".into());
    // a vanishing ridge keeps the interpolating system solvable when the
    // chord parameters bunch up
    let base_mu = 1e-10;
    let c0 = fit.solve(base_mu).ok_or_else(singular)?;
    if fit.residual(&c0) >= smoothing {
        return Ok(PeriodicSpline { control: to_points(&c0) });
    }
    let (mut lo, mut hi) = (base_mu.ln(), 1e12f64.ln());
    let c_hi = fit.solve(hi.exp()).ok_or_else(singular)?;
    if fit.residual(&c_hi) <= smoothing {
        return Ok(PeriodicSpline { control: to_points(&c_hi) });
    }
    let mut best = c0;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let c = fit.solve(mid.exp()).ok_or_else(singular)?;
        if fit.residual(&c) <= smoothing {
            lo = mid;
            best = c;
        } else {
            hi = mid;
        }
    }
    Ok(PeriodicSpline { control: to_points(&best) })
}

/// Mean and unit normal of the least-squares plane. The normal is the
/// covariance eigenvector with the smallest eigenvalue; also returns the
/// ratio of the middle to the largest eigenvalue.
pub(crate) fn best_fit_plane(points: &[Point3<f64>]) -> (Point3<f64>, Vector3<f64>, f64) {
    let n = points.len() as f64;
    let c = points.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p.coords - c;
        cov += d * d.transpose();
    }
    let eig = cov.symmetric_eigen();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let normal = eig.eigenvectors.column(order[0]).into_owned();
    let spread = if eig.eigenvalues[order[2]] > 0.0 {
        eig.eigenvalues[order[1]] / eig.eigenvalues[order[2]]
    } else {
        0.0
    };
    (Point3::from(c), normal.normalize(), spread)
}
