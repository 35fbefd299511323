use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, Point3, Vector3};
use rand_chacha::ChaCha8Rng;

use super::{
    cat_forward, gat_forward, relu, rng_for, sat_forward, scalar_tensor, AttentionParams, FeatureMatrix, Linear,
    TensorStore, DEFAULT_HEADS, DEFAULT_HIDDEN,
};
use crate::error::{Error, Result};
use crate::surface_recon::io::{tensors_from_bytes, tensors_to_bytes, Tensor};

pub const IOS_INPUT: usize = 4;
pub const IOS_WIDTH0: usize = 64;
pub const IOS_WIDTH1: usize = 128;
pub const IOS_WIDTH2: usize = 256;
pub const GLOBAL_WIDTH: usize = 512;
pub const TEMPLATE_WIDTH: usize = 128;
pub const CROWN_WIDTH: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetConfig {
    pub heads: usize,
    pub hidden: usize,
    pub seed: u64,
    /// Scale of the coordinate decode heads relative to the default init.
    pub decode_gain: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            heads: DEFAULT_HEADS,
            hidden: DEFAULT_HIDDEN,
            seed: 0,
            decode_gain: 1.0,
        }
    }
}

/// Two-layer point MLP.
#[derive(Debug, Clone, PartialEq)]
pub struct PointMlp {
    pub layer1: Linear,
    pub layer2: Linear,
}

impl PointMlp {
    fn seeded(input: usize, mid: usize, output: usize, rng: &mut ChaCha8Rng) -> Self {
        PointMlp {
            layer1: Linear::seeded(input, mid, rng),
            layer2: Linear::seeded(mid, output, rng),
        }
    }

    fn apply(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.layer2.apply(&relu(self.layer1.apply(x)?))
    }

    fn push_tensors(&self, name: &str, out: &mut Vec<Tensor>) {
        self.layer1.push_tensors(&format!("{name}.0"), out);
        self.layer2.push_tensors(&format!("{name}.1"), out);
    }

    fn from_tensors(name: &str, store: &TensorStore) -> Result<Self> {
        Ok(PointMlp {
            layer1: Linear::from_tensors(&format!("{name}.0"), store)?,
            layer2: Linear::from_tensors(&format!("{name}.1"), store)?,
        })
    }
}

fn coords_matrix(points: &[Point3<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(points.len(), 3, |i, c| points[i][c])
}

fn offsets(points: &[Point3<f64>], delta: &DMatrix<f64>) -> Vec<Point3<f64>> {
    points
        .iter()
        .enumerate()
        .map(|(i, p)| p + Vector3::new(delta[(i, 0)], delta[(i, 1)], delta[(i, 2)]))
        .collect()
}

/// Context features of the scan at three scales.
#[derive(Debug, Clone, PartialEq)]
pub struct IosFeatures {
    pub f0: FeatureMatrix,
    pub f1: FeatureMatrix,
    pub global: FeatureMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IosEncoder {
    pub embed: PointMlp,
    pub gat1: AttentionParams,
    pub sat1: AttentionParams,
    pub gat2: AttentionParams,
    pub sat2: AttentionParams,
    pub global: Linear,
}

impl IosEncoder {
    fn seeded(cfg: &NetConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let (h, w) = (cfg.heads, cfg.hidden);
        Ok(IosEncoder {
            embed: PointMlp::seeded(IOS_INPUT, IOS_WIDTH0, IOS_WIDTH0, rng),
            gat1: AttentionParams::seeded_cross(IOS_WIDTH0, IOS_WIDTH0, IOS_WIDTH1, h, w, rng)?,
            sat1: AttentionParams::seeded(IOS_WIDTH1, h, w, rng)?,
            gat2: AttentionParams::seeded_cross(IOS_WIDTH1, IOS_WIDTH1, IOS_WIDTH2, h, w, rng)?,
            sat2: AttentionParams::seeded(IOS_WIDTH2, h, w, rng)?,
            global: Linear::seeded(IOS_WIDTH2, GLOBAL_WIDTH, rng),
        })
    }

    /// `points` with per-point segmentation labels; the count must be a
    /// multiple of 16.
    pub fn forward(&self, points: &[Point3<f64>], labels: &[f64]) -> Result<IosFeatures> {
        if labels.len() != points.len() {
            return Err(Error::LengthMismatch(labels.len(), points.len()));
        }
        let input = DMatrix::from_fn(points.len(), IOS_INPUT, |i, c| if c == 3 { labels[i] } else { points[i][c] });
        let f0 = FeatureMatrix::with_coords(self.embed.apply(&input)?, points.to_vec())?;
        let f1 = sat_forward(&gat_forward(&f0, &self.gat1, 0)?, &self.sat1)?;
        let f2 = sat_forward(&gat_forward(&f1, &self.gat2, 0)?, &self.sat2)?;
        let g = self.global.apply(&f2.tokens)?;
        let pooled = DMatrix::from_fn(1, g.ncols(), |_, c| g.column(c).max());
        Ok(IosFeatures {
            f0,
            f1,
            global: FeatureMatrix::new(pooled),
        })
    }

    fn push_tensors(&self, name: &str, out: &mut Vec<Tensor>) {
        self.embed.push_tensors(&format!("{name}.embed"), out);
        self.gat1.push_tensors(&format!("{name}.gat1"), out);
        self.sat1.push_tensors(&format!("{name}.sat1"), out);
        self.gat2.push_tensors(&format!("{name}.gat2"), out);
        self.sat2.push_tensors(&format!("{name}.sat2"), out);
        self.global.push_tensors(&format!("{name}.global"), out);
    }

    fn from_tensors(name: &str, s: &TensorStore) -> Result<Self> {
        Ok(IosEncoder {
            embed: PointMlp::from_tensors(&format!("{name}.embed"), s)?,
            gat1: AttentionParams::from_tensors(&format!("{name}.gat1"), s)?,
            sat1: AttentionParams::from_tensors(&format!("{name}.sat1"), s)?,
            gat2: AttentionParams::from_tensors(&format!("{name}.gat2"), s)?,
            sat2: AttentionParams::from_tensors(&format!("{name}.sat2"), s)?,
            global: Linear::from_tensors(&format!("{name}.global"), s)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemplateDeformParams {
    pub encode: PointMlp,
    pub cat: AttentionParams,
    pub sat1: AttentionParams,
    pub sat2: AttentionParams,
    pub decode: Linear,
}

impl TemplateDeformParams {
    pub fn seeded(cfg: &NetConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let (h, w) = (cfg.heads, cfg.hidden);
        Ok(TemplateDeformParams {
            encode: PointMlp::seeded(3, 64, TEMPLATE_WIDTH, rng),
            cat: AttentionParams::seeded_cross(TEMPLATE_WIDTH, GLOBAL_WIDTH, TEMPLATE_WIDTH, h, w, rng)?,
            sat1: AttentionParams::seeded(TEMPLATE_WIDTH, h, w, rng)?,
            sat2: AttentionParams::seeded(TEMPLATE_WIDTH, h, w, rng)?,
            decode: Linear::seeded_with_gain(TEMPLATE_WIDTH, 3, cfg.decode_gain, rng),
        })
    }

    fn push_tensors(&self, name: &str, out: &mut Vec<Tensor>) {
        self.encode.push_tensors(&format!("{name}.encode"), out);
        self.cat.push_tensors(&format!("{name}.cat"), out);
        self.sat1.push_tensors(&format!("{name}.sat1"), out);
        self.sat2.push_tensors(&format!("{name}.sat2"), out);
        self.decode.push_tensors(&format!("{name}.decode"), out);
    }

    fn from_tensors(name: &str, s: &TensorStore) -> Result<Self> {
        Ok(TemplateDeformParams {
            encode: PointMlp::from_tensors(&format!("{name}.encode"), s)?,
            cat: AttentionParams::from_tensors(&format!("{name}.cat"), s)?,
            sat1: AttentionParams::from_tensors(&format!("{name}.sat1"), s)?,
            sat2: AttentionParams::from_tensors(&format!("{name}.sat2"), s)?,
            decode: Linear::from_tensors(&format!("{name}.decode"), s)?,
        })
    }
}

/// Coarse crown: template features attend to the global scan feature, pass
/// two self-attention blocks and decode to per-point offsets from the template.
pub fn template_deform_forward(
    template: &[Point3<f64>],
    global: &FeatureMatrix,
    params: &TemplateDeformParams,
) -> Result<Vec<Point3<f64>>> {
    if template.is_empty() {
        return Err(Error::ShapeMismatch("empty template".into()));
    }
    let q = FeatureMatrix::new(params.encode.apply(&coords_matrix(template))?);
    let x = cat_forward(&q, global, &params.cat)?;
    let x = sat_forward(&sat_forward(&x, &params.sat1)?, &params.sat2)?;
    Ok(offsets(template, &params.decode.apply(&x.tokens)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineParams {
    pub encode: PointMlp,
    pub adapter: Linear,
    pub cat: AttentionParams,
    pub sat1: AttentionParams,
    pub sat2: AttentionParams,
    pub decode: Linear,
}

impl RefineParams {
    /// Refinement over `width`-channel crown tokens using `ios_width`-channel
    /// scan context.
    pub fn seeded(width: usize, ios_width: usize, cfg: &NetConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let (h, w) = (cfg.heads, cfg.hidden);
        Ok(RefineParams {
            encode: PointMlp::seeded(3, 64, width, rng),
            adapter: Linear::seeded(ios_width, width, rng),
            cat: AttentionParams::seeded(width, h, w, rng)?,
            sat1: AttentionParams::seeded(width, h, w, rng)?,
            sat2: AttentionParams::seeded_cross(width, width, 2 * width, h, w, rng)?,
            decode: Linear::seeded_with_gain(width, 3, cfg.decode_gain, rng),
        })
    }

    pub fn width(&self) -> usize {
        self.cat.dim_q()
    }

    fn push_tensors(&self, name: &str, out: &mut Vec<Tensor>) {
        self.encode.push_tensors(&format!("{name}.encode"), out);
        self.adapter.push_tensors(&format!("{name}.adapter"), out);
        self.cat.push_tensors(&format!("{name}.cat"), out);
        self.sat1.push_tensors(&format!("{name}.sat1"), out);
        self.sat2.push_tensors(&format!("{name}.sat2"), out);
        self.decode.push_tensors(&format!("{name}.decode"), out);
    }

    fn from_tensors(name: &str, s: &TensorStore) -> Result<Self> {
        Ok(RefineParams {
            encode: PointMlp::from_tensors(&format!("{name}.encode"), s)?,
            adapter: Linear::from_tensors(&format!("{name}.adapter"), s)?,
            cat: AttentionParams::from_tensors(&format!("{name}.cat"), s)?,
            sat1: AttentionParams::from_tensors(&format!("{name}.sat1"), s)?,
            sat2: AttentionParams::from_tensors(&format!("{name}.sat2"), s)?,
            decode: Linear::from_tensors(&format!("{name}.decode"), s)?,
        })
    }
}

/// The `N × 2C` token matrix produced before the split into children.
pub fn refine_features(crown: &FeatureMatrix, ios: &FeatureMatrix, params: &RefineParams) -> Result<DMatrix<f64>> {
    let kv = FeatureMatrix::new(params.adapter.apply(&ios.tokens)?);
    let x = cat_forward(crown, &kv, &params.cat)?;
    let x = sat_forward(&sat_forward(&x, &params.sat1)?, &params.sat2)?;
    Ok(x.tokens)
}

/// Splits every `2C`-channel row into two `C`-channel rows: the first `C`
/// channels of token i become row i, the last `C` become row `N + i`.
pub fn split_children(features: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (n, two_c) = features.shape();
    if two_c % 2 != 0 {
        return Err(Error::ShapeMismatch(format!("{two_c} channels cannot be halved")));
    }
    let c = two_c / 2;
    let mut out = DMatrix::zeros(2 * n, c);
    out.view_mut((0, 0), (n, c)).copy_from(&features.columns(0, c));
    out.view_mut((n, 0), (n, c)).copy_from(&features.columns(c, c));
    Ok(out)
}

/// Doubles the crown: every token yields two children placed at the
/// parent's coords plus a decoded offset. Children are ordered as in
/// [`split_children`].
pub fn refine_forward(crown: &FeatureMatrix, ios: &FeatureMatrix, params: &RefineParams) -> Result<Vec<Point3<f64>>> {
    let coords = crown
        .coords
        .as_ref()
        .ok_or_else(|| Error::ShapeMismatch("refinement needs crown coords".into()))?;
    let children = split_children(&refine_features(crown, ios, params)?)?;
    let parents: Vec<Point3<f64>> = coords.iter().chain(coords.iter()).copied().collect();
    Ok(offsets(&parents, &params.decode.apply(&children)?))
}

/// Encodes raw crown points and refines them.
pub fn refine_points(points: &[Point3<f64>], ios: &FeatureMatrix, params: &RefineParams) -> Result<Vec<Point3<f64>>> {
    let tokens = params.encode.apply(&coords_matrix(points))?;
    refine_forward(&FeatureMatrix::with_coords(tokens, points.to_vec())?, ios, params)
}

/// Intermediate and final point sets of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct CrownOutput {
    pub coarse: Vec<Point3<f64>>,
    pub refined1: Vec<Point3<f64>>,
    pub refined2: Vec<Point3<f64>>,
}

/// Scan encoder, template deformation and two refinement stages. The first
/// refinement reads the quarter-resolution scan features, the second the
/// full-resolution ones.
#[derive(Debug, Clone, PartialEq)]
pub struct CrownNet {
    pub encoder: IosEncoder,
    pub deform: TemplateDeformParams,
    pub refine1: RefineParams,
    pub refine2: RefineParams,
}

impl CrownNet {
    pub fn seeded(cfg: &NetConfig) -> Result<Self> {
        Ok(CrownNet {
            encoder: IosEncoder::seeded(cfg, &mut rng_for(cfg.seed, 1))?,
            deform: TemplateDeformParams::seeded(cfg, &mut rng_for(cfg.seed, 2))?,
            refine1: RefineParams::seeded(CROWN_WIDTH, IOS_WIDTH1, cfg, &mut rng_for(cfg.seed, 3))?,
            refine2: RefineParams::seeded(CROWN_WIDTH, IOS_WIDTH0, cfg, &mut rng_for(cfg.seed, 4))?,
        })
    }

    pub fn forward(&self, ios_points: &[Point3<f64>], ios_labels: &[f64], template: &[Point3<f64>]) -> Result<CrownOutput> {
        let ios = self.encoder.forward(ios_points, ios_labels)?;
        let coarse = template_deform_forward(template, &ios.global, &self.deform)?;
        let refined1 = refine_points(&coarse, &ios.f1, &self.refine1)?;
        let refined2 = refine_points(&refined1, &ios.f0, &self.refine2)?;
        Ok(CrownOutput {
            coarse,
            refined1,
            refined2,
        })
    }

    pub fn to_tensors(&self) -> Vec<Tensor> {
        let mut out = vec![scalar_tensor("format.version", 1)];
        self.encoder.push_tensors("encoder", &mut out);
        self.deform.push_tensors("deform", &mut out);
        self.refine1.push_tensors("refine1", &mut out);
        self.refine2.push_tensors("refine2", &mut out);
        out
    }

    pub fn from_tensors(tensors: &[Tensor]) -> Result<Self> {
        let s = TensorStore::new(tensors);
        Ok(CrownNet {
            encoder: IosEncoder::from_tensors("encoder", &s)?,
            deform: TemplateDeformParams::from_tensors("deform", &s)?,
            refine1: RefineParams::from_tensors("refine1", &s)?,
            refine2: RefineParams::from_tensors("refine2", &s)?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, tensors_to_bytes(&self.to_tensors())).map_err(|e| Error::io_at(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io_at(path, e))?;
        Self::from_tensors(&tensors_from_bytes(&bytes)?)
    }
}
