//! Forward-only attention blocks and the crown generation network built from
//! them. Parameters are either seeded or loaded from a tensor container.

mod crown;
mod vfe;

use nalgebra::{DMatrix, Point3, RowDVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::pointops::farthest_point_sample;
use crate::surface_recon::io::Tensor;

pub use crown::{
    refine_features, refine_forward, refine_points, split_children, template_deform_forward, CrownNet, CrownOutput,
    IosEncoder, IosFeatures, NetConfig, PointMlp, RefineParams, TemplateDeformParams, CROWN_WIDTH, GLOBAL_WIDTH,
    IOS_WIDTH0, IOS_WIDTH1, IOS_WIDTH2, TEMPLATE_WIDTH,
};
pub use vfe::{vfe_forward, VfeParams, VoxelFeatures};

pub const DEFAULT_HEADS: usize = 4;
pub const DEFAULT_HIDDEN: usize = 512;
const LN_EPS: f64 = 1e-5;

/// Tokens (one row each) with optional positions.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub tokens: DMatrix<f64>,
    pub coords: Option<Vec<Point3<f64>>>,
}

impl FeatureMatrix {
    pub fn new(tokens: DMatrix<f64>) -> Self {
        FeatureMatrix { tokens, coords: None }
    }

    pub fn with_coords(tokens: DMatrix<f64>, coords: Vec<Point3<f64>>) -> Result<Self> {
        if coords.len() != tokens.nrows() {
            return Err(Error::ShapeMismatch(format!(
                "{} coords for {} tokens",
                coords.len(),
                tokens.nrows()
            )));
        }
        Ok(FeatureMatrix {
            tokens,
            coords: Some(coords),
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.nrows() == 0
    }

    pub fn channels(&self) -> usize {
        self.tokens.ncols()
    }

    /// Rows `idx` in order, with their coords.
    pub fn select(&self, idx: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            tokens: self.tokens.select_rows(idx),
            coords: self.coords.as_ref().map(|c| idx.iter().map(|&i| c[i]).collect()),
        }
    }
}

/// Affine map `x·W + b` applied row-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: DMatrix<f64>,
    pub bias: RowDVector<f64>,
}

impl Linear {
    /// Uniform(±1/√in) initialization, rounded to f32 so saved parameters
    /// reload exactly.
    pub fn seeded(input: usize, output: usize, rng: &mut ChaCha8Rng) -> Self {
        Self::seeded_with_gain(input, output, 1.0, rng)
    }

    pub fn seeded_with_gain(input: usize, output: usize, gain: f64, rng: &mut ChaCha8Rng) -> Self {
        let bound = gain / (input as f64).sqrt();
        let mut draw = || (rng.random_range(-bound..=bound) as f32) as f64;
        let weight = DMatrix::from_fn(input, output, |_, _| draw());
        let bias = RowDVector::from_fn(output, |_, _| draw());
        Linear { weight, bias }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Linear {
            weight: DMatrix::zeros(input, output),
            bias: RowDVector::zeros(output),
        }
    }

    pub fn input(&self) -> usize {
        self.weight.nrows()
    }

    pub fn output(&self) -> usize {
        self.weight.ncols()
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.input() {
            return Err(Error::ShapeMismatch(format!(
                "input has {} channels, layer expects {}",
                x.ncols(),
                self.input()
            )));
        }
        let mut y = x * &self.weight;
        for mut row in y.row_iter_mut() {
            row += &self.bias;
        }
        Ok(y)
    }

    fn push_tensors(&self, name: &str, out: &mut Vec<Tensor>) {
        let (i, o) = (self.input(), self.output());
        // row-major weight layout
        let mut data = Vec::with_capacity(i * o);
        for r in 0..i {
            for c in 0..o {
                data.push(self.weight[(r, c)] as f32);
            }
        }
        out.push(Tensor {
            name: format!("{name}.weight"),
            shape: vec![i, o],
            data,
        });
        out.push(Tensor {
            name: format!("{name}.bias"),
            shape: vec![o],
            data: self.bias.iter().map(|&v| v as f32).collect(),
        });
    }

    fn from_tensors(name: &str, store: &TensorStore) -> Result<Self> {
        let w = store.get(&format!("{name}.weight"), 2)?;
        let b = store.get(&format!("{name}.bias"), 1)?;
        let (i, o) = (w.shape[0], w.shape[1]);
        if b.shape[0] != o {
            return Err(Error::ShapeMismatch(format!("{name}: bias length {} vs {o}", b.shape[0])));
        }
        Ok(Linear {
            weight: DMatrix::from_row_iterator(i, o, w.data.iter().map(|&v| v as f64)),
            bias: RowDVector::from_iterator(o, b.data.iter().map(|&v| v as f64)),
        })
    }
}

pub(crate) fn relu(mut x: DMatrix<f64>) -> DMatrix<f64> {
    x.apply(|v| *v = v.max(0.0));
    x
}

/// Parameter-free layer normalization of every row.
pub(crate) fn layer_norm(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut y = x.clone();
    let c = x.ncols() as f64;
    for mut row in y.row_iter_mut() {
        let mean = row.sum() / c;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        row.apply(|v| *v = (*v - mean) * inv);
    }
    y
}

/// Named tensors looked up by name.
pub(crate) struct TensorStore<'a> {
    tensors: &'a [Tensor],
}

impl<'a> TensorStore<'a> {
    pub(crate) fn new(tensors: &'a [Tensor]) -> Self {
        TensorStore { tensors }
    }

    fn get(&self, name: &str, rank: usize) -> Result<&'a Tensor> {
        let t = self
            .tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Parse(format!("missing tensor `{name}`")))?;
        if t.shape.len() != rank || t.data.len() != t.shape.iter().product::<usize>() {
            return Err(Error::ShapeMismatch(format!("tensor `{name}` has shape {:?}", t.shape)));
        }
        Ok(t)
    }

    pub(crate) fn scalar(&self, name: &str) -> Result<usize> {
        let t = self.get(name, 1)?;
        t.data
            .first()
            .map(|&v| v as usize)
            .ok_or_else(|| Error::Parse(format!("tensor `{name}` is empty")))
    }
}

pub(crate) fn scalar_tensor(name: &str, value: usize) -> Tensor {
    Tensor {
        name: name.to_string(),
        shape: vec![1],
        data: vec![value as f32],
    }
}

/// Residual attention block: multi-head attention of the queries over the
/// keys/values, then a feed-forward layer with 2× expansion. When the output
/// width differs from the query width the second residual goes through a
/// linear shortcut.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub heads: usize,
    pub hidden: usize,
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub ffn1: Linear,
    pub ffn2: Linear,
    pub shortcut: Option<Linear>,
}

impl AttentionParams {
    /// Self-attention block of width `dim`.
    pub fn seeded(dim: usize, heads: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        Self::seeded_cross(dim, dim, dim, heads, hidden, rng)
    }

    pub fn seeded_cross(
        dim_q: usize,
        dim_kv: usize,
        dim_out: usize,
        heads: usize,
        hidden: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if heads == 0 || hidden % heads != 0 {
            return Err(Error::InvalidArgument(format!(
                "hidden width {hidden} is not divisible by {heads} heads"
            )));
        }
        Ok(AttentionParams {
            heads,
            hidden,
            wq: Linear::seeded(dim_q, hidden, rng),
            wk: Linear::seeded(dim_kv, hidden, rng),
            wv: Linear::seeded(dim_kv, hidden, rng),
            wo: Linear::seeded(hidden, dim_q, rng),
            ffn1: Linear::seeded(dim_q, 2 * dim_q, rng),
            ffn2: Linear::seeded(2 * dim_q, dim_out, rng),
            shortcut: (dim_out != dim_q).then(|| Linear::seeded(dim_q, dim_out, rng)),
        })
    }

    pub fn dim_q(&self) -> usize {
        self.wq.input()
    }

    pub fn dim_kv(&self) -> usize {
        self.wk.input()
    }

    pub fn dim_out(&self) -> usize {
        self.ffn2.output()
    }

    fn check(&self, q: &DMatrix<f64>, kv: &DMatrix<f64>) -> Result<()> {
        if q.ncols() != self.dim_q() || kv.ncols() != self.dim_kv() {
            return Err(Error::ShapeMismatch(format!(
                "block expects {}/{} channels, got {}/{}",
                self.dim_q(),
                self.dim_kv(),
                q.ncols(),
                kv.ncols()
            )));
        }
        if kv.nrows() == 0 {
            return Err(Error::ShapeMismatch("no key/value tokens".into()));
        }
        Ok(())
    }

    fn forward(&self, q: &DMatrix<f64>, kv: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check(q, kv)?;
        let qn = layer_norm(q);
        let kvn = layer_norm(kv);
        let qp = self.wq.apply(&qn)?;
        let kp = self.wk.apply(&kvn)?;
        let vp = self.wv.apply(&kvn)?;
        let d = self.hidden / self.heads;
        let scale = 1.0 / (d as f64).sqrt();
        let mut mixed = DMatrix::zeros(q.nrows(), self.hidden);
        for h in 0..self.heads {
            let qh = qp.columns(h * d, d);
            let kh = kp.columns(h * d, d);
            let vh = vp.columns(h * d, d);
            let mut scores = qh * kh.transpose() * scale;
            for mut row in scores.row_iter_mut() {
                let m = row.max();
                row.apply(|v| *v = (*v - m).exp());
                let s = row.sum();
                row /= s;
            }
            mixed.columns_mut(h * d, d).copy_from(&(scores * vh));
        }
        let a = q + self.wo.apply(&mixed)?;
        let ff = self.ffn2.apply(&relu(self.ffn1.apply(&layer_norm(&a))?))?;
        let base = match &self.shortcut {
            Some(s) => s.apply(&a)?,
            None => a,
        };
        Ok(base + ff)
    }

    pub(crate) fn push_tensors(&self, name: &str, out: &mut Vec<Tensor>) {
        out.push(scalar_tensor(&format!("{name}.heads"), self.heads));
        for (part, lin) in [
            ("wq", &self.wq),
            ("wk", &self.wk),
            ("wv", &self.wv),
            ("wo", &self.wo),
            ("ffn1", &self.ffn1),
            ("ffn2", &self.ffn2),
        ] {
            lin.push_tensors(&format!("{name}.{part}"), out);
        }
        if let Some(s) = &self.shortcut {
            s.push_tensors(&format!("{name}.shortcut"), out);
        }
    }

    pub(crate) fn from_tensors(name: &str, store: &TensorStore) -> Result<Self> {
        let lin = |part: &str| Linear::from_tensors(&format!("{name}.{part}"), store);
        let wq = lin("wq")?;
        let ffn2 = lin("ffn2")?;
        let shortcut = if ffn2.output() != wq.input() { Some(lin("shortcut")?) } else { None };
        let p = AttentionParams {
            heads: store.scalar(&format!("{name}.heads"))?,
            hidden: wq.output(),
            wq,
            wk: lin("wk")?,
            wv: lin("wv")?,
            wo: lin("wo")?,
            ffn1: lin("ffn1")?,
            ffn2,
            shortcut,
        };
        if p.heads == 0 || p.hidden % p.heads != 0 {
            return Err(Error::ShapeMismatch(format!("{name}: {} heads for width {}", p.heads, p.hidden)));
        }
        Ok(p)
    }

    pub fn to_tensors(&self) -> Vec<Tensor> {
        let mut out = Vec::new();
        self.push_tensors("block", &mut out);
        out
    }

    pub fn from_tensor_list(tensors: &[Tensor]) -> Result<Self> {
        Self::from_tensors("block", &TensorStore::new(tensors))
    }
}

/// Self-attention over all tokens; the token count is unchanged.
pub fn sat_forward(x: &FeatureMatrix, params: &AttentionParams) -> Result<FeatureMatrix> {
    Ok(FeatureMatrix {
        tokens: params.forward(&x.tokens, &x.tokens)?,
        coords: x.coords.clone(),
    })
}

/// Queries from the farthest-point-sampled quarter of the tokens, keys and
/// values from all of them. Output coords are the sampled coords.
pub fn gat_forward(x: &FeatureMatrix, params: &AttentionParams, start: usize) -> Result<FeatureMatrix> {
    let (_, out) = gat_forward_indexed(x, params, start)?;
    Ok(out)
}

/// [`gat_forward`] that also returns the sampled token indices.
pub fn gat_forward_indexed(x: &FeatureMatrix, params: &AttentionParams, start: usize) -> Result<(Vec<usize>, FeatureMatrix)> {
    let coords = x
        .coords
        .as_ref()
        .ok_or_else(|| Error::ShapeMismatch("geometry-aware block needs coords".into()))?;
    let t = x.len();
    if t == 0 || t % 4 != 0 {
        return Err(Error::TNotDivisible(t));
    }
    let idx = farthest_point_sample(coords, t / 4, start)?;
    let q = x.select(&idx);
    let tokens = params.forward(&q.tokens, &x.tokens)?;
    Ok((idx, FeatureMatrix { tokens, coords: q.coords }))
}

/// Cross-attention: one output token per query token.
pub fn cat_forward(query: &FeatureMatrix, kv: &FeatureMatrix, params: &AttentionParams) -> Result<FeatureMatrix> {
    Ok(FeatureMatrix {
        tokens: params.forward(&query.tokens, &kv.tokens)?,
        coords: query.coords.clone(),
    })
}

pub(crate) fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[cfg(test)]
mod tests;
