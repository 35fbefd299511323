//! Spectral Poisson surface reconstruction and marching cubes.

pub mod io;
mod marching;
mod tables;

use std::sync::Arc;

use nalgebra::{Point3, Vector3};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::mesh::{self, TriMesh};

pub use marching::marching_cubes;

pub const DEFAULT_RESOLUTION: usize = 128;
pub const DEFAULT_SIGMA: f64 = 2.0;
const MIN_PAD_CELLS: usize = 2;

/// Cubic node lattice: node `(i, j, k)` sits at `origin + cell·(i, j, k)`.
/// The periodic domain spans `resolution · cell` per axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridGeometry {
    pub resolution: usize,
    pub origin: Point3<f64>,
    pub cell: f64,
}

impl GridGeometry {
    /// Lattice centred on the bounding box of `points`, keeping at least
    /// 10% of the nodes (and never fewer than two) free on every side.
    pub fn enclosing(points: &[Point3<f64>], resolution: usize) -> Result<Self> {
        let pad = MIN_PAD_CELLS.max(resolution / 10);
        if resolution < 2 * pad + 4 {
            return Err(Error::InvalidArgument(format!("resolution {resolution} is too small")));
        }
        let (lo, hi) = mesh::bounding_box(points).ok_or(Error::EmptySet)?;
        let side = (hi - lo).max();
        let cell = if side > 0.0 {
            side / (resolution - 1 - 2 * pad) as f64
        } else {
            1.0
        };
        let center = Point3::from((lo.coords + hi.coords) / 2.0);
        let half = cell * (resolution - 1) as f64 / 2.0;
        Ok(GridGeometry {
            resolution,
            origin: center - Vector3::repeat(half),
            cell,
        })
    }

    pub fn extent(&self) -> f64 {
        self.cell * self.resolution as f64
    }

    pub fn node_count(&self) -> usize {
        self.resolution.pow(3)
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.resolution * (j + self.resolution * k)
    }

    pub fn node(&self, i: usize, j: usize, k: usize) -> Point3<f64> {
        self.origin + Vector3::new(i as f64, j as f64, k as f64) * self.cell
    }

    /// Lower node and fractional offsets of `p`, wrapped periodically.
    fn locate(&self, p: &Point3<f64>) -> ([usize; 3], [f64; 3]) {
        let r = self.resolution as f64;
        let mut base = [0usize; 3];
        let mut frac = [0f64; 3];
        for a in 0..3 {
            let g = (p[a] - self.origin[a]) / self.cell;
            let f = g.floor();
            frac[a] = g - f;
            base[a] = f.rem_euclid(r) as usize;
        }
        (base, frac)
    }

    /// The eight trilinear `(node index, weight)` pairs for `p`.
    pub fn trilinear(&self, p: &Point3<f64>) -> [(usize, f64); 8] {
        let (b, f) = self.locate(p);
        let r = self.resolution;
        let mut out = [(0usize, 0f64); 8];
        for (c, slot) in out.iter_mut().enumerate() {
            let (dx, dy, dz) = (c & 1, (c >> 1) & 1, (c >> 2) & 1);
            let w = (if dx == 1 { f[0] } else { 1.0 - f[0] })
                * (if dy == 1 { f[1] } else { 1.0 - f[1] })
                * (if dz == 1 { f[2] } else { 1.0 - f[2] });
            *slot = (self.index((b[0] + dx) % r, (b[1] + dy) % r, (b[2] + dz) % r), w);
        }
        out
    }
}

/// Splatted normal field.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorGrid {
    pub geometry: GridGeometry,
    pub values: Vec<Vector3<f64>>,
    /// Positions that were splatted; used to place the iso level.
    pub samples: Vec<Point3<f64>>,
}

/// Indicator field with its iso level. Values above the iso level are inside.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarGrid {
    pub geometry: GridGeometry,
    pub values: Vec<f64>,
    pub iso_value: f64,
}

impl ScalarGrid {
    pub fn sample(&self, p: &Point3<f64>) -> f64 {
        self.geometry
            .trilinear(p)
            .iter()
            .map(|&(i, w)| self.values[i] * w)
            .sum()
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

/// Trilinear splat of oriented points onto a lattice sized to enclose them.
pub fn rasterize_oriented_points(
    points: &[Point3<f64>],
    normals: &[Vector3<f64>],
    resolution: usize,
) -> Result<VectorGrid> {
    let geometry = GridGeometry::enclosing(points, resolution)?;
    rasterize_on(points, normals, geometry)
}

pub fn rasterize_on(points: &[Point3<f64>], normals: &[Vector3<f64>], geometry: GridGeometry) -> Result<VectorGrid> {
    if normals.len() != points.len() {
        return Err(Error::MissingNormals);
    }
    let mut values = vec![Vector3::zeros(); geometry.node_count()];
    for (p, n) in points.iter().zip(normals) {
        for (i, w) in geometry.trilinear(p) {
            values[i] += n * w;
        }
    }
    Ok(VectorGrid {
        geometry,
        values,
        samples: points.to_vec(),
    })
}

struct Fft3 {
    r: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Fft3 {
    fn new(r: usize) -> Self {
        let mut planner = FftPlanner::new();
        Fft3 {
            r,
            forward: planner.plan_fft_forward(r),
            inverse: planner.plan_fft_inverse(r),
        }
    }

    fn run(&self, data: &mut [Complex<f64>], inverse: bool) {
        let r = self.r;
        let plan = if inverse { &self.inverse } else { &self.forward };
        // x rows are contiguous
        plan.process(data);
        let mut line = vec![Complex::new(0.0, 0.0); r];
        for k in 0..r {
            for i in 0..r {
                for j in 0..r {
                    line[j] = data[i + r * (j + r * k)];
                }
                plan.process(&mut line);
                for j in 0..r {
                    data[i + r * (j + r * k)] = line[j];
                }
            }
        }
        for j in 0..r {
            for i in 0..r {
                for k in 0..r {
                    line[k] = data[i + r * (j + r * k)];
                }
                plan.process(&mut line);
                for k in 0..r {
                    data[i + r * (j + r * k)] = line[k];
                }
            }
        }
        if inverse {
            let scale = 1.0 / (r * r * r) as f64;
            data.iter_mut().for_each(|c| *c *= scale);
        }
    }
}

/// Signed angular wavenumbers along one axis, with the Nyquist bin zeroed.
fn wavenumbers(r: usize, extent: f64) -> Vec<f64> {
    (0..r)
        .map(|i| {
            let f = if i <= (r - 1) / 2 { i as f64 } else { i as f64 - r as f64 };
            if r % 2 == 0 && i == r / 2 {
                0.0
            } else {
                2.0 * std::f64::consts::PI * f / extent
            }
        })
        .collect()
}

/// Spectral transform shared by the solver and its tests: returns
/// `F⁻¹[ i k·V̂ · g̃ · m(k) ]` where `m` is `1/|k|²` when `invert` is set.
fn spectral_divergence(grid: &VectorGrid, sigma_cells: f64, invert: bool) -> Vec<f64> {
    let g = &grid.geometry;
    let r = g.resolution;
    let fft = Fft3::new(r);
    let ks = wavenumbers(r, g.extent());
    let sigma = sigma_cells * g.cell;
    let mut acc = vec![Complex::new(0.0, 0.0); g.node_count()];
    for axis in 0..3 {
        let mut buf: Vec<Complex<f64>> = grid.values.iter().map(|v| Complex::new(v[axis], 0.0)).collect();
        fft.run(&mut buf, false);
        for k in 0..r {
            for j in 0..r {
                for i in 0..r {
                    let kk = [ks[i], ks[j], ks[k]][axis];
                    let idx = g.index(i, j, k);
                    acc[idx] += Complex::new(0.0, kk) * buf[idx];
                }
            }
        }
    }
    for k in 0..r {
        for j in 0..r {
            for i in 0..r {
                let idx = g.index(i, j, k);
                let k2 = ks[i] * ks[i] + ks[j] * ks[j] + ks[k] * ks[k];
                let nyquist = r % 2 == 0 && (i == r / 2 || j == r / 2 || k == r / 2);
                if k2 == 0.0 || nyquist {
                    acc[idx] = Complex::new(0.0, 0.0);
                    continue;
                }
                let mut factor = (-0.5 * sigma * sigma * k2).exp();
                if invert {
                    factor /= k2;
                }
                acc[idx] *= factor;
            }
        }
    }
    fft.run(&mut acc, true);
    acc.iter().map(|c| c.re).collect()
}

/// Frequency-domain Poisson solve, χ̂ = i k·V̂ g̃σ / |k|² with χ̂(0) = 0.
/// With outward normals the result is larger inside the surface. The iso
/// level is the mean of χ at the splatted sample positions.
pub fn poisson_solve(grid: &VectorGrid, gaussian_sigma: f64) -> ScalarGrid {
    let values = spectral_divergence(grid, gaussian_sigma, true);
    let mut out = ScalarGrid {
        geometry: grid.geometry,
        values,
        iso_value: 0.0,
    };
    if !grid.samples.is_empty() {
        out.iso_value = grid.samples.iter().map(|p| out.sample(p)).sum::<f64>() / grid.samples.len() as f64;
    }
    out
}

/// Rasterize, solve and extract the iso surface. Only the largest connected
/// component of the extracted surface is returned.
pub fn reconstruct(points: &[Point3<f64>], normals: &[Vector3<f64>], resolution: usize, sigma: f64) -> Result<TriMesh> {
    let grid = rasterize_oriented_points(points, normals, resolution)?;
    let chi = poisson_solve(&grid, sigma);
    largest_component(&marching_cubes(&chi)?)
}

pub(crate) fn largest_component(m: &TriMesh) -> Result<TriMesh> {
    let parts = mesh::component_partition(m);
    match parts.first() {
        Some((_, faces)) if !faces.is_empty() => {
            if parts.iter().filter(|p| !p.1.is_empty()).count() > 1 {
                log::debug!("dropping {} small surface fragments", parts.len() - 1);
            }
            Ok(m.submesh(faces).0)
        }
        _ => Err(Error::EmptySet),
    }
}
