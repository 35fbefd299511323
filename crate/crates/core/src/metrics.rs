//! Evaluation metrics for generated crowns, margins and segmentations.

use nalgebra::{Point3, Vector3};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::losses;
use crate::margin::MarginCurve;
use crate::mesh::{topology_report, TriMesh};
use crate::pointops::nearest_squared;
use crate::postprocess::TriangleIndex;

pub const DEFAULT_F_SCORE_TAU: f64 = 0.3;
pub const DEFAULT_SAMPLE_COUNT: usize = 16_384;
pub const DEFAULT_SAMPLE_SEED: u64 = 0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrownMetrics {
    pub cd_l2: f64,
    pub fidelity: f64,
    pub hausdorff: f64,
    pub f_score: f64,
    pub threshold_used: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PiaReport {
    pub medial_area: f64,
    pub lateral_area: f64,
}

fn non_empty(a: &[Point3<f64>], b: &[Point3<f64>]) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        Err(Error::EmptySet)
    } else {
        Ok(())
    }
}

/// Squared nearest distances in both directions.
struct Directed {
    a_to_b: Vec<f64>,
    b_to_a: Vec<f64>,
}

impl Directed {
    fn new(a: &[Point3<f64>], b: &[Point3<f64>]) -> Result<Self> {
        non_empty(a, b)?;
        Ok(Directed {
            a_to_b: nearest_squared(a, b).1,
            b_to_a: nearest_squared(b, a).1,
        })
    }

    fn cd_l2(&self) -> f64 {
        mean(&self.a_to_b) + mean(&self.b_to_a)
    }

    fn hausdorff(&self) -> f64 {
        let worst = self.a_to_b.iter().chain(&self.b_to_a).fold(0.0, |m: f64, &d| m.max(d));
        worst.sqrt()
    }

    fn f_score(&self, tau: f64) -> f64 {
        let frac = |d: &[f64]| d.iter().filter(|&&x| x.sqrt() <= tau).count() as f64 / d.len() as f64;
        let (p, r) = (frac(&self.a_to_b), frac(&self.b_to_a));
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Symmetric squared Chamfer distance.
pub fn cd_l2(a: &[Point3<f64>], b: &[Point3<f64>]) -> Result<f64> {
    Ok(losses::chamfer_l2(a, b, false)?.value)
}

/// Mean squared distance from each ground-truth point to the prediction.
pub fn fidelity(pred: &[Point3<f64>], gt: &[Point3<f64>]) -> Result<f64> {
    non_empty(pred, gt)?;
    Ok(mean(&nearest_squared(gt, pred).1))
}

pub fn hausdorff(a: &[Point3<f64>], b: &[Point3<f64>]) -> Result<f64> {
    Ok(Directed::new(a, b)?.hausdorff())
}

/// Harmonic mean of precision and recall at distance `tau`.
pub fn f_score(pred: &[Point3<f64>], gt: &[Point3<f64>], tau: f64) -> Result<f64> {
    Ok(Directed::new(pred, gt)?.f_score(tau))
}

/// All point-set crown metrics from one pair of nearest-neighbor sweeps.
pub fn crown_metrics(pred: &[Point3<f64>], gt: &[Point3<f64>], tau: f64) -> Result<CrownMetrics> {
    let d = Directed::new(pred, gt)?;
    Ok(CrownMetrics {
        cd_l2: d.cd_l2(),
        fidelity: mean(&d.b_to_a),
        hausdorff: d.hausdorff(),
        f_score: d.f_score(tau),
        threshold_used: tau,
    })
}

/// Crown metrics between two meshes on seeded area-weighted surface samples.
pub fn mesh_crown_metrics(pred: &TriMesh, gt: &TriMesh, tau: f64, samples: usize, seed: u64) -> Result<CrownMetrics> {
    let a = sample_surface(pred, samples, seed)?;
    let b = sample_surface(gt, samples, seed)?;
    crown_metrics(&a, &b, tau)
}

/// Accuracy and positive-class IoU. IoU is 1 when both label sets are
/// entirely negative.
pub fn seg_metrics(pred_labels: &[u8], gt_labels: &[u8]) -> Result<(f64, f64)> {
    if pred_labels.len() != gt_labels.len() {
        return Err(Error::LengthMismatch(pred_labels.len(), gt_labels.len()));
    }
    if pred_labels.is_empty() {
        return Err(Error::EmptySet);
    }
    let (mut same, mut inter, mut union) = (0usize, 0usize, 0usize);
    for (&p, &g) in pred_labels.iter().zip(gt_labels) {
        let (p, g) = (p > 0, g > 0);
        same += (p == g) as usize;
        inter += (p && g) as usize;
        union += (p || g) as usize;
    }
    let iou = if union == 0 { 1.0 } else { inter as f64 / union as f64 };
    Ok((same as f64 / pred_labels.len() as f64, iou))
}

/// Hausdorff distance between the resampled margin polylines.
pub fn margin_hausdorff(pred: &MarginCurve, gt: &MarginCurve) -> f64 {
    hausdorff(&pred.resampled, &gt.resampled).unwrap_or(f64::INFINITY)
}

/// Generalized winding number of `mesh` around `p`: 1 inside a closed
/// outward-oriented surface, 0 outside.
pub fn winding_number(mesh: &TriMesh, p: &Point3<f64>) -> f64 {
    let total: f64 = (0..mesh.faces.len())
        .map(|f| {
            let [a, b, c] = mesh.triangle(f);
            let (a, b, c) = (a - p, b - p, c - p);
            let (la, lb, lc) = (a.norm(), b.norm(), c.norm());
            let num = a.dot(&b.cross(&c));
            let den = la * lb * lc + a.dot(&b) * lc + b.dot(&c) * la + c.dot(&a) * lb;
            2.0 * num.atan2(den)
        })
        .sum();
    total / (4.0 * std::f64::consts::PI)
}

/// Area of the crown faces whose centroids lie inside `adjacent`.
pub fn pia(crown: &TriMesh, adjacent: &TriMesh) -> Result<f64> {
    if !topology_report(adjacent).is_watertight {
        return Err(Error::AdjacentNotWatertight);
    }
    let bbox = adjacent.bounding_box();
    let areas: Vec<f64> = (0..crown.faces.len())
        .into_par_iter()
        .map(|f| {
            let c = crown.face_centroid(f);
            let inside_box = bbox.is_some_and(|(lo, hi)| (0..3).all(|a| c[a] >= lo[a] && c[a] <= hi[a]));
            if inside_box && winding_number(adjacent, &c) > 0.5 {
                crown.face_area(f)
            } else {
                0.0
            }
        })
        .collect();
    Ok(areas.iter().sum())
}

pub fn pia_report(crown: &TriMesh, medial_adj: &TriMesh, lateral_adj: &TriMesh) -> Result<PiaReport> {
    Ok(PiaReport {
        medial_area: pia(crown, medial_adj)?,
        lateral_area: pia(crown, lateral_adj)?,
    })
}

/// `count` points drawn uniformly by area from the surface of `mesh`.
pub fn sample_surface(mesh: &TriMesh, count: usize, seed: u64) -> Result<Vec<Point3<f64>>> {
    Ok(sample_oriented_surface(mesh, count, seed)?.0)
}

/// [`sample_surface`] plus the unit normal of the face each point came from.
pub fn sample_oriented_surface(mesh: &TriMesh, count: usize, seed: u64) -> Result<(Vec<Point3<f64>>, Vec<Vector3<f64>>)> {
    let areas: Vec<f64> = (0..mesh.faces.len()).map(|f| mesh.face_area(f)).collect();
    let pick = WeightedIndex::new(&areas).map_err(|_| Error::EmptySet)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|_| {
            let f = pick.sample(&mut rng);
            let [a, b, c] = mesh.triangle(f);
            let r1 = rng.random::<f64>().sqrt();
            let r2 = rng.random::<f64>();
            let p = Point3::from(a.coords * (1.0 - r1) + b.coords * (r1 * (1.0 - r2)) + c.coords * (r1 * r2));
            (p, mesh.face_cross(f).normalize())
        })
        .unzip())
}

/// Distance from each point to `reference`, negative where the winding
/// number of `reference` exceeds 0.5.
pub fn signed_distance(points: &[Point3<f64>], reference: &TriMesh) -> Result<Vec<f64>> {
    if reference.faces.is_empty() {
        return Err(Error::EmptyTarget);
    }
    let index = TriangleIndex::build((0..reference.faces.len()).map(|f| reference.triangle(f)).collect());
    Ok(points
        .par_iter()
        .map(|p| {
            let d = (p - index.closest(p).1).norm();
            if winding_number(reference, p) > 0.5 {
                -d
            } else {
                d
            }
        })
        .collect())
}
