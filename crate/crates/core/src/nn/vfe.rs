use nalgebra::{DMatrix, Point3, RowDVector};
use rand_chacha::ChaCha8Rng;

use super::{relu, FeatureMatrix, Linear};
use crate::error::{Error, Result};
use crate::pointops::{LabeledPointCloud, VoxelMap};

/// Input width per point: position and segmentation label.
pub const VFE_INPUT: usize = 4;

/// Two cascaded voxel feature encoding layers.
#[derive(Debug, Clone, PartialEq)]
pub struct VfeParams {
    pub layer1: Linear,
    pub layer2: Linear,
}

impl VfeParams {
    pub fn seeded(width1: usize, width2: usize, rng: &mut ChaCha8Rng) -> Self {
        VfeParams {
            layer1: Linear::seeded(VFE_INPUT, width1, rng),
            layer2: Linear::seeded(2 * width1, width2, rng),
        }
    }
}

/// One feature row per occupied voxel, in sorted voxel-index order. Token
/// coords are voxel centers.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelFeatures {
    pub cells: Vec<[i64; 3]>,
    pub features: FeatureMatrix,
}

fn column_max(rows: &DMatrix<f64>, members: &[usize]) -> RowDVector<f64> {
    let mut m = RowDVector::from_element(rows.ncols(), f64::NEG_INFINITY);
    for &i in members {
        for c in 0..rows.ncols() {
            m[c] = m[c].max(rows[(i, c)]);
        }
    }
    m
}

pub fn vfe_forward(cloud: &LabeledPointCloud, voxels: &VoxelMap, params: &VfeParams) -> Result<VoxelFeatures> {
    let n = cloud.len();
    if params.layer2.input() != 2 * params.layer1.output() {
        return Err(Error::ShapeMismatch(format!(
            "second layer takes {} channels, expected {}",
            params.layer2.input(),
            2 * params.layer1.output()
        )));
    }
    let labels = cloud.labels.as_deref();
    let input = DMatrix::from_fn(n, VFE_INPUT, |i, c| match c {
        3 => labels.map_or(0.0, |l| l[i] as f64),
        _ => cloud.points[i][c],
    });
    let h1 = relu(params.layer1.apply(&input)?);
    let c1 = h1.ncols();
    let mut concat = DMatrix::zeros(n, 2 * c1);
    let mut cells = Vec::with_capacity(voxels.cells.len());
    let mut pooled1 = Vec::with_capacity(voxels.cells.len());
    for (cell, members) in &voxels.cells {
        if let Some(&bad) = members.iter().find(|&&i| i >= n) {
            return Err(Error::ShapeMismatch(format!("voxel member {bad} outside cloud of {n}")));
        }
        let m = column_max(&h1, members);
        for &i in members {
            concat.view_mut((i, 0), (1, c1)).copy_from(&h1.row(i));
            concat.view_mut((i, c1), (1, c1)).copy_from(&m);
        }
        cells.push(*cell);
        pooled1.push(members.clone());
    }
    let h2 = relu(params.layer2.apply(&concat)?);
    let mut tokens = DMatrix::zeros(cells.len(), h2.ncols());
    for (r, members) in pooled1.iter().enumerate() {
        tokens.row_mut(r).copy_from(&column_max(&h2, members));
    }
    let coords = cells
        .iter()
        .map(|c| {
            Point3::new(
                voxels.origin.x + (c[0] as f64 + 0.5) * voxels.cell_size,
                voxels.origin.y + (c[1] as f64 + 0.5) * voxels.cell_size,
                voxels.origin.z + (c[2] as f64 + 0.5) * voxels.cell_size,
            )
        })
        .collect();
    Ok(VoxelFeatures {
        cells,
        features: FeatureMatrix::with_coords(tokens, coords)?,
    })
}
