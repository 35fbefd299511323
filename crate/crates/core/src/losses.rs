//! Training objectives with analytic gradients with respect to the predicted
//! points.

use nalgebra::{Point3, Vector3};

use crate::error::{Error, Result};
use crate::pointops::{nearest_squared, KdTree, LabeledPointCloud};
use crate::surface_recon::ScalarGrid;

const PROB_CLAMP: f64 = 1e-7;
const DICE_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub lambda: f64,
    pub use_squared: bool,
    pub margin_weight_enabled: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda: 1.0,
            use_squared: false,
            margin_weight_enabled: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossResult {
    pub value: f64,
    pub gradient: Option<Vec<Vector3<f64>>>,
}

/// Nearest-neighbor correspondences in both directions.
struct Pairing {
    pred_to_gt: Vec<usize>,
    gt_to_pred: Vec<usize>,
}

fn pair(pred: &[Point3<f64>], gt: &[Point3<f64>]) -> Result<Pairing> {
    if pred.is_empty() || gt.is_empty() {
        return Err(Error::EmptySet);
    }
    Ok(Pairing {
        pred_to_gt: nearest_squared(pred, gt).0,
        gt_to_pred: nearest_squared(gt, pred).0,
    })
}

/// Symmetric squared Chamfer distance.
pub fn chamfer_l2(pred: &[Point3<f64>], gt: &[Point3<f64>], with_grad: bool) -> Result<LossResult> {
    let pr = pair(pred, gt)?;
    let (n, m) = (pred.len() as f64, gt.len() as f64);
    let (mut forward, mut backward) = (0.0, 0.0);
    let mut grad = vec![Vector3::zeros(); if with_grad { pred.len() } else { 0 }];
    for (i, p) in pred.iter().enumerate() {
        let d = p - gt[pr.pred_to_gt[i]];
        forward += d.norm_squared();
        if with_grad {
            grad[i] += d * (2.0 / n);
        }
    }
    for (j, q) in gt.iter().enumerate() {
        let i = pr.gt_to_pred[j];
        let d = pred[i] - q;
        backward += d.norm_squared();
        if with_grad {
            grad[i] += d * (2.0 / m);
        }
    }
    Ok(LossResult {
        value: forward / n + backward / m,
        gradient: with_grad.then_some(grad),
    })
}

/// Per-point weights for one direction of the weighted Chamfer family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Weighting {
    Both,
    CurvatureOnly,
    MarginOnly,
}

/// Weighted symmetric Chamfer. `wp(i, j)` weighs pred point i paired with gt
/// j, `wq(j)` weighs gt point j. Weights carry no gradient.
fn weighted_chamfer(
    pred: &[Point3<f64>],
    gt: &[Point3<f64>],
    squared: bool,
    with_grad: bool,
    wp: impl Fn(usize, usize) -> f64,
    wq: impl Fn(usize) -> f64,
) -> Result<LossResult> {
    let pr = pair(pred, gt)?;
    let (n, m) = (pred.len() as f64, gt.len() as f64);
    let mut value = 0.0;
    let mut grad = vec![Vector3::zeros(); if with_grad { pred.len() } else { 0 }];
    let mut term = |i: usize, d: Vector3<f64>, w: f64, scale: f64, grad: &mut Vec<Vector3<f64>>| {
        let len = d.norm();
        if squared {
            value += w * len * len / scale;
            if with_grad {
                grad[i] += d * (2.0 * w / scale);
            }
        } else {
            value += w * len / scale;
            if with_grad && len > 0.0 {
                grad[i] += d * (w / (scale * len));
            }
        }
    };
    for (i, p) in pred.iter().enumerate() {
        let j = pr.pred_to_gt[i];
        term(i, p - gt[j], wp(i, j), n, &mut grad);
    }
    for (j, q) in gt.iter().enumerate() {
        let i = pr.gt_to_pred[j];
        term(i, pred[i] - q, wq(j), m, &mut grad);
    }
    Ok(LossResult {
        value,
        gradient: with_grad.then_some(grad),
    })
}

fn check_inputs(gt: &LabeledPointCloud, pred_curvature: &[f64], n: usize, weighting: Weighting, config: &LossConfig) -> Result<()> {
    if !(config.lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!("lambda {} must be non-negative", config.lambda)));
    }
    if weighting != Weighting::MarginOnly {
        let curv = gt.curvature.as_ref().ok_or(Error::MissingCurvature)?;
        if curv.len() != gt.len() {
            return Err(Error::LengthMismatch(curv.len(), gt.len()));
        }
        if pred_curvature.len() != n {
            return Err(Error::LengthMismatch(pred_curvature.len(), n));
        }
    }
    if weighting == Weighting::MarginOnly || config.margin_weight_enabled {
        let flags = gt.margin_flags.as_ref().ok_or(Error::MissingMarginFlags)?;
        if flags.len() != gt.len() {
            return Err(Error::LengthMismatch(flags.len(), gt.len()));
        }
    }
    Ok(())
}

fn weighted_family(
    pred: &[Point3<f64>],
    gt: &LabeledPointCloud,
    pred_curvature: &[f64],
    config: &LossConfig,
    with_grad: bool,
    weighting: Weighting,
) -> Result<LossResult> {
    if pred.is_empty() || gt.is_empty() {
        return Err(Error::EmptySet);
    }
    check_inputs(gt, pred_curvature, pred.len(), weighting, config)?;
    let lambda = config.lambda;
    let curv_gt = gt.curvature.as_deref().unwrap_or(&[]);
    let use_margin = weighting == Weighting::MarginOnly || (weighting == Weighting::Both && config.margin_weight_enabled);
    let flags = if use_margin { gt.margin_flags.as_deref() } else { None };
    let flag = |j: usize| flags.is_some_and(|f| f[j]) as u8 as f64;
    let curved = |k: f64| match weighting {
        Weighting::MarginOnly => 0.0,
        _ => (lambda * k.abs()).exp(),
    };
    weighted_chamfer(
        pred,
        &gt.points,
        config.use_squared,
        with_grad,
        |i, j| curved(pred_curvature.get(i).copied().unwrap_or(0.0)) + flag(j),
        |j| curved(curv_gt.get(j).copied().unwrap_or(0.0)) + flag(j),
    )
}

/// Curvature- and margin-weighted Chamfer loss. The margin indicator in the
/// prediction term is read at the prediction's nearest ground-truth point.
pub fn cmpl(
    pred: &[Point3<f64>],
    gt: &LabeledPointCloud,
    pred_curvature: &[f64],
    config: &LossConfig,
    with_grad: bool,
) -> Result<LossResult> {
    weighted_family(pred, gt, pred_curvature, config, with_grad, Weighting::Both)
}

/// Curvature-weighted part alone (weights `e^{λ|κ|}`).
pub fn cpl(
    pred: &[Point3<f64>],
    gt: &LabeledPointCloud,
    pred_curvature: &[f64],
    config: &LossConfig,
    with_grad: bool,
) -> Result<LossResult> {
    weighted_family(pred, gt, pred_curvature, config, with_grad, Weighting::CurvatureOnly)
}

/// Margin-weighted part alone (weights are the margin indicator).
pub fn mpl(pred: &[Point3<f64>], gt: &LabeledPointCloud, config: &LossConfig, with_grad: bool) -> Result<LossResult> {
    weighted_family(pred, gt, &[], config, with_grad, Weighting::MarginOnly)
}

/// Unweighted, unsquared symmetric Chamfer mean.
pub fn chamfer_l1(pred: &[Point3<f64>], gt: &[Point3<f64>], with_grad: bool) -> Result<LossResult> {
    weighted_chamfer(pred, gt, false, with_grad, |_, _| 1.0, |_| 1.0)
}

/// Curvature of each predicted point, read from its nearest ground-truth point.
pub fn borrowed_curvature(pred: &[Point3<f64>], gt: &LabeledPointCloud) -> Result<Vec<f64>> {
    let curv = gt.curvature.as_ref().ok_or(Error::MissingCurvature)?;
    if gt.is_empty() {
        return Err(Error::EmptySet);
    }
    let tree = KdTree::build(&gt.points);
    Ok(pred
        .iter()
        .map(|p| curv[tree.nearest_squared(p).expect("non-empty").0])
        .collect())
}

/// Mean squared difference of two indicator grids.
pub fn dpsr_mse(pred: &ScalarGrid, gt: &ScalarGrid) -> Result<f64> {
    let (a, b) = (&pred.geometry, &gt.geometry);
    if a.resolution != b.resolution || (a.extent() - b.extent()).abs() > 1e-9 * a.extent().abs().max(1.0) {
        return Err(Error::ShapeMismatch(format!(
            "grids {}³ × {} and {}³ × {}",
            a.resolution,
            a.extent(),
            b.resolution,
            b.extent()
        )));
    }
    let n = pred.values.len() as f64;
    Ok(pred
        .values
        .iter()
        .zip(&gt.values)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        / n)
}

/// Binary cross-entropy mean plus `1 − Dice`.
pub fn ce_dice(pred_prob: &[f64], labels: &[u8]) -> Result<f64> {
    if pred_prob.len() != labels.len() {
        return Err(Error::LengthMismatch(pred_prob.len(), labels.len()));
    }
    if pred_prob.is_empty() {
        return Err(Error::EmptySet);
    }
    let mut ce = 0.0;
    let (mut inter, mut sp, mut sy) = (0.0, 0.0, 0.0);
    for (&p, &y) in pred_prob.iter().zip(labels) {
        let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        let y = if y > 0 { 1.0 } else { 0.0 };
        ce -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
        inter += p * y;
        sp += p;
        sy += y;
    }
    ce /= pred_prob.len() as f64;
    let dice = 2.0 * inter / (sp + sy + DICE_EPS);
    Ok(ce + 1.0 - dice)
}
