use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{Point3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::primitives;
use crate::error::{Error, Result};
use crate::margin::{fit_closed_bspline, MarginCurve};
use crate::mesh::io::{load_mesh, save_mesh, MeshFormat};
use crate::mesh::TriMesh;
use crate::metrics::sample_surface;
use crate::pointops::LabeledPointCloud;

pub const TEMPLATE_POINTS: usize = 1024;
pub const HEMISPHERE_RADIUS: f64 = 7.5;
/// Half edge of the cube cropped around the crown.
pub const CROP_HALF_SIZE: f64 = 10.0;

const MARGIN_SAMPLES: usize = 256;
const IOS_MARGIN_STRIDE: usize = 5;
const CROWN_MARGIN_STRIDE: usize = 4;
const RING_SPACING: f64 = 0.35;
const GUM_RINGS: usize = 12;
const CROWN_RINGS: usize = 28;
const CROWN_THICKNESS: f64 = 1.6;
const TEMPLATE_SEED: u64 = 0x7e3a;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ToothClass {
    Premolar,
    Molar,
}

impl ToothClass {
    pub fn as_str(self) -> &'static str {
        match self {
            ToothClass::Premolar => "premolar",
            ToothClass::Molar => "molar",
        }
    }
}

impl fmt::Display for ToothClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ToothClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "premolar" => Ok(ToothClass::Premolar),
            "molar" => Ok(ToothClass::Molar),
            _ => Err(Error::InvalidSpec(format!("unknown tooth class `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TemplateClass {
    Premolar,
    Molar,
    Hemisphere,
}

impl From<ToothClass> for TemplateClass {
    fn from(c: ToothClass) -> Self {
        match c {
            ToothClass::Premolar => TemplateClass::Premolar,
            ToothClass::Molar => TemplateClass::Molar,
        }
    }
}

impl FromStr for TemplateClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hemisphere" => Ok(TemplateClass::Hemisphere),
            _ => Ok(ToothClass::from_str(s)?.into()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AbutmentSpec {
    pub base_radius: f64,
    /// Wall taper from vertical, in degrees.
    pub taper_deg: f64,
    pub height: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrownSpec {
    pub cusps: usize,
    pub groove_depth: f64,
    pub occlusal_amplitude: f64,
}

/// Gaps to the medial (-x) and lateral (+x) neighbors. `overlap`, when set,
/// replaces both gaps with a penetration of that depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighborSpec {
    pub gap_medial: f64,
    pub gap_lateral: f64,
    pub overlap: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub jitter: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneSpec {
    pub seed: u64,
    pub tooth_class: ToothClass,
    pub abutment: AbutmentSpec,
    pub crown: CrownSpec,
    pub neighbors: NeighborSpec,
    pub noise: NoiseSpec,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec::canonical(ToothClass::Molar)
    }
}

impl SceneSpec {
    pub fn canonical(class: ToothClass) -> Self {
        let (radius, cusps) = match class {
            ToothClass::Premolar => (3.4, 2),
            ToothClass::Molar => (4.2, 4),
        };
        SceneSpec {
            seed: 0,
            tooth_class: class,
            abutment: AbutmentSpec {
                base_radius: radius,
                taper_deg: 6.0,
                height: 4.0,
            },
            crown: CrownSpec {
                cusps,
                groove_depth: 0.4,
                occlusal_amplitude: 0.8,
            },
            neighbors: NeighborSpec {
                gap_medial: 0.3,
                gap_lateral: 0.3,
                overlap: None,
            },
            noise: NoiseSpec { jitter: 0.0 },
        }
    }

    /// Parameters drawn from desk-scale ranges, reproducible per seed.
    pub fn randomized(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5ce7e);
        let class = if rng.random_bool(0.5) {
            ToothClass::Molar
        } else {
            ToothClass::Premolar
        };
        let mut spec = SceneSpec::canonical(class);
        spec.seed = seed;
        spec.abutment.base_radius = match class {
            ToothClass::Premolar => rng.random_range(3.0..3.7),
            ToothClass::Molar => rng.random_range(3.8..4.6),
        };
        spec.abutment.taper_deg = rng.random_range(4.0..10.0);
        spec.abutment.height = rng.random_range(3.2..4.5);
        spec.crown.cusps = match class {
            ToothClass::Premolar => 2,
            ToothClass::Molar => rng.random_range(4..=5),
        };
        spec.crown.groove_depth = rng.random_range(0.2..0.5);
        spec.crown.occlusal_amplitude = rng.random_range(0.5..1.0);
        spec.neighbors.gap_medial = rng.random_range(0.1..0.6);
        spec.neighbors.gap_lateral = rng.random_range(0.1..0.6);
        spec
    }

    pub fn validate(&self) -> Result<()> {
        let a = &self.abutment;
        let c = &self.crown;
        let n = &self.neighbors;
        let bad = |what: &str| Err(Error::InvalidSpec(what.to_string()));
        let values = [
            a.base_radius,
            a.taper_deg,
            a.height,
            c.groove_depth,
            c.occlusal_amplitude,
            n.gap_medial,
            n.gap_lateral,
            n.overlap.unwrap_or(0.0),
            self.noise.jitter,
        ];
        if values.iter().any(|v| !v.is_finite()) {
            return bad("non-finite parameter");
        }
        if a.base_radius <= 0.0 || a.height <= 0.0 {
            return bad("abutment radius and height must be positive");
        }
        if !(0.0..45.0).contains(&a.taper_deg) {
            return bad("taper must lie in [0, 45) degrees");
        }
        if self.top_radius() < 0.2 * a.base_radius {
            return bad("taper closes the abutment before its top");
        }
        if !(1..=8).contains(&c.cusps) {
            return bad("cusp count must lie in 1..=8");
        }
        if c.groove_depth < 0.0 || c.occlusal_amplitude < 0.0 {
            return bad("groove depth and occlusal amplitude must be non-negative");
        }
        if n.gap_medial < 0.0 || n.gap_lateral < 0.0 || n.overlap.is_some_and(|o| o < 0.0) {
            return bad("gaps and overlap must be non-negative");
        }
        if self.noise.jitter < 0.0 {
            return bad("jitter must be non-negative");
        }
        Ok(())
    }

    fn top_radius(&self) -> f64 {
        self.abutment.base_radius - self.abutment.height * self.abutment.taper_deg.to_radians().tan()
    }

    pub fn to_text(&self) -> String {
        let overlap = self.neighbors.overlap.map_or("none".to_string(), |o| o.to_string());
        format!(
            "seed={}\ntooth_class={}\nabutment.base_radius={}\nabutment.taper_deg={}\nabutment.height={}\n\
             crown.cusps={}\ncrown.groove_depth={}\ncrown.occlusal_amplitude={}\n\
             neighbors.gap_medial={}\nneighbors.gap_lateral={}\nneighbors.overlap={}\nnoise.jitter={}\n",
            self.seed,
            self.tooth_class,
            self.abutment.base_radius,
            self.abutment.taper_deg,
            self.abutment.height,
            self.crown.cusps,
            self.crown.groove_depth,
            self.crown.occlusal_amplitude,
            self.neighbors.gap_medial,
            self.neighbors.gap_lateral,
            overlap,
            self.noise.jitter,
        )
    }

    /// Parses `key=value` lines; missing keys keep their canonical values.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut spec = SceneSpec::default();
        let mut class = None;
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidSpec(format!("expected key=value, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            let num = || {
                value
                    .parse::<f64>()
                    .map_err(|_| Error::InvalidSpec(format!("`{key}` is not a number: `{value}`")))
            };
            let int = || {
                value
                    .parse::<u64>()
                    .map_err(|_| Error::InvalidSpec(format!("`{key}` is not an integer: `{value}`")))
            };
            match key {
                "seed" => spec.seed = int()?,
                "tooth_class" => class = Some(value.parse::<ToothClass>()?),
                "abutment.base_radius" => spec.abutment.base_radius = num()?,
                "abutment.taper_deg" => spec.abutment.taper_deg = num()?,
                "abutment.height" => spec.abutment.height = num()?,
                "crown.cusps" => spec.crown.cusps = int()? as usize,
                "crown.groove_depth" => spec.crown.groove_depth = num()?,
                "crown.occlusal_amplitude" => spec.crown.occlusal_amplitude = num()?,
                "neighbors.gap_medial" => spec.neighbors.gap_medial = num()?,
                "neighbors.gap_lateral" => spec.neighbors.gap_lateral = num()?,
                "neighbors.overlap" => spec.neighbors.overlap = if value == "none" { None } else { Some(num()?) },
                "noise.jitter" => spec.noise.jitter = num()?,
                _ => return Err(Error::InvalidSpec(format!("unknown key `{key}`"))),
            }
        }
        if let Some(c) = class {
            spec.tooth_class = c;
        }
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneBundle {
    pub spec: SceneSpec,
    /// Cropped scan with per-vertex labels, abutment = 1.
    pub ios_mesh: TriMesh,
    /// Open crown whose boundary is a subset of `gt_margin.resampled`.
    pub gt_crown: TriMesh,
    pub gt_margin: MarginCurve,
    pub medial: TriMesh,
    pub lateral: TriMesh,
    pub template: LabeledPointCloud,
}

pub const BUNDLE_FILES: [&str; 7] = [
    "ios.ply",
    "crown_gt.ply",
    "margin_gt.ply",
    "neighbor_medial.ply",
    "neighbor_lateral.ply",
    "template.ply",
    "spec.txt",
];

impl SceneBundle {
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io_at(dir, e))?;
        save_mesh(&self.ios_mesh, &dir.join("ios.ply"), MeshFormat::Ply)?;
        save_mesh(&self.gt_crown, &dir.join("crown_gt.ply"), MeshFormat::Ply)?;
        self.gt_margin.save(&dir.join("margin_gt.ply"))?;
        save_mesh(&self.medial, &dir.join("neighbor_medial.ply"), MeshFormat::Ply)?;
        save_mesh(&self.lateral, &dir.join("neighbor_lateral.ply"), MeshFormat::Ply)?;
        self.template.save(&dir.join("template.ply"))?;
        let spec = dir.join("spec.txt");
        fs::write(&spec, self.spec.to_text()).map_err(|e| Error::io_at(&spec, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let spec_path = dir.join("spec.txt");
        let spec = SceneSpec::from_text(&fs::read_to_string(&spec_path).map_err(|e| Error::io_at(&spec_path, e))?)?;
        let mesh = |name: &str| load_mesh(&dir.join(name), MeshFormat::Ply);
        Ok(SceneBundle {
            spec,
            ios_mesh: mesh("ios.ply")?,
            gt_crown: mesh("crown_gt.ply")?,
            gt_margin: MarginCurve::load(&dir.join("margin_gt.ply"))?,
            medial: mesh("neighbor_medial.ply")?,
            lateral: mesh("neighbor_lateral.ply")?,
            template: LabeledPointCloud::load(&dir.join("template.ply"))?,
        })
    }
}

/// Margin shape parameters drawn from the scene seed.
struct MarginShape {
    radius: f64,
    ellipticity: f64,
    wobble: f64,
    wobble_phase: f64,
    saddle: f64,
}

impl MarginShape {
    fn new(spec: &SceneSpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        MarginShape {
            radius: spec.abutment.base_radius,
            ellipticity: rng.random_range(0.02..0.08),
            wobble: rng.random_range(0.0..0.03),
            wobble_phase: rng.random_range(0.0..2.0 * PI),
            saddle: rng.random_range(0.25..0.7),
        }
    }

    fn point(&self, t: f64) -> Point3<f64> {
        let r = self.radius * (1.0 + self.ellipticity * (2.0 * t).cos() + self.wobble * (3.0 * t + self.wobble_phase).cos());
        Point3::new(r * t.cos(), r * t.sin(), self.saddle * (2.0 * t).cos())
    }
}

fn analytic_margin(spec: &SceneSpec) -> Result<MarginCurve> {
    let shape = MarginShape::new(spec);
    let samples: Vec<Point3<f64>> = (0..MARGIN_SAMPLES)
        .map(|i| shape.point(2.0 * PI * i as f64 / MARGIN_SAMPLES as f64))
        .collect();
    fit_closed_bspline(&samples, 0.0)
}

/// Row of a ring-structured sheet: a closed ring or a single pole vertex.
enum Row {
    Pole(Point3<f64>),
    Ring(Vec<Point3<f64>>),
}

/// Connects consecutive rows (all rings of equal length, ordered bottom to
/// top, counterclockwise seen from +z) into an outward-facing sheet.
fn sheet(rows: &[Row], labels: &[i32]) -> TriMesh {
    let n = rows
        .iter()
        .find_map(|r| match r {
            Row::Ring(v) => Some(v.len()),
            Row::Pole(_) => None,
        })
        .expect("sheet needs a ring");
    let mut vertices = Vec::new();
    let mut vlabels = Vec::new();
    let mut index: Vec<Vec<usize>> = Vec::new();
    for (row, &label) in rows.iter().zip(labels) {
        match row {
            Row::Pole(p) => {
                vertices.push(*p);
                vlabels.push(label);
                index.push(vec![vertices.len() - 1; n]);
            }
            Row::Ring(ring) => {
                index.push((0..n).map(|i| vertices.len() + i).collect());
                vertices.extend(ring);
                vlabels.extend(std::iter::repeat_n(label, n));
            }
        }
    }
    let mut faces = Vec::new();
    for j in 0..index.len() - 1 {
        for s in 0..n {
            let s1 = (s + 1) % n;
            let (a, b) = (index[j][s], index[j][s1]);
            let (c, d) = (index[j + 1][s], index[j + 1][s1]);
            if a != b {
                faces.push([a, b, d]);
            }
            if c != d {
                faces.push([a, d, c]);
            }
        }
    }
    TriMesh::new(vertices, faces)
        .and_then(|m| m.with_labels(vlabels))
        .expect("sheet indices are in range")
}

fn radial(p: &Point3<f64>) -> (Vector2<f64>, f64) {
    let xy = Vector2::new(p.x, p.y);
    let r = xy.norm();
    (xy / r, r)
}

/// Analytic crown: superellipsoid cap over the margin with Gaussian cusps
/// and sinusoidal grooves on the occlusal table.
struct CrownShape {
    boundary: Vec<Point3<f64>>,
    top: f64,
    radius: f64,
    cusps: Vec<Vector2<f64>>,
    cusp_width: f64,
    amplitude: f64,
    groove_depth: f64,
    groove_width: f64,
    cross_groove: bool,
}

const WALL_EXPONENT: f64 = 0.6;
const BULGE: f64 = 0.12;

impl CrownShape {
    fn new(spec: &SceneSpec, margin: &MarginCurve) -> Self {
        let r = spec.abutment.base_radius;
        let c = spec.crown.cusps;
        let offset = if c == 2 { PI / 2.0 } else { PI / c as f64 };
        let cusps = (0..c)
            .map(|k| {
                let a = offset + 2.0 * PI * k as f64 / c as f64;
                Vector2::new(a.cos(), a.sin()) * (0.5 * r)
            })
            .collect();
        CrownShape {
            boundary: margin.resampled.iter().step_by(CROWN_MARGIN_STRIDE).copied().collect(),
            top: spec.abutment.height + CROWN_THICKNESS,
            radius: r,
            cusps,
            cusp_width: 0.25 * r,
            amplitude: spec.crown.occlusal_amplitude,
            groove_depth: spec.crown.groove_depth,
            groove_width: 0.1 * r,
            cross_groove: spec.tooth_class == ToothClass::Molar,
        }
    }

    fn occlusal(&self, xy: Vector2<f64>) -> f64 {
        let s2 = 2.0 * self.cusp_width * self.cusp_width;
        let bumps: f64 = self.cusps.iter().map(|c| (-(xy - c).norm_squared() / s2).exp()).sum();
        let g2 = 2.0 * self.groove_width * self.groove_width;
        let wave = 0.5 * (1.0 + (PI * xy.x / self.radius).cos());
        let mut groove = (-xy.y * xy.y / g2).exp() * wave;
        if self.cross_groove {
            groove = groove.max((-xy.x * xy.x / g2).exp() * 0.5 * (1.0 + (PI * xy.y / self.radius).cos()));
        }
        self.amplitude * bumps - self.groove_depth * groove
    }

    fn surface(&self, b: &Point3<f64>, phi: f64) -> Point3<f64> {
        let (dir, r) = radial(b);
        let (s, c) = phi.sin_cos();
        let rad = r * c.max(0.0).powf(WALL_EXPONENT) * (1.0 + BULGE * (2.0 * phi).sin());
        let rise = s.powf(WALL_EXPONENT);
        let xy = dir * rad;
        let z = b.z + (self.top - b.z) * rise + s.powi(4) * self.occlusal(xy);
        Point3::new(xy.x, xy.y, z)
    }

    fn pole(&self) -> Point3<f64> {
        Point3::new(0.0, 0.0, self.top + self.occlusal(Vector2::zeros()))
    }

    fn crown_rows(&self) -> Vec<Row> {
        let mut rows: Vec<Row> = (0..CROWN_RINGS)
            .map(|k| {
                let phi = 0.5 * PI * k as f64 / CROWN_RINGS as f64;
                Row::Ring(if k == 0 {
                    self.boundary.clone()
                } else {
                    self.boundary.iter().map(|b| self.surface(b, phi)).collect()
                })
            })
            .collect();
        rows.push(Row::Pole(self.pole()));
        rows
    }

    fn open_mesh(&self) -> TriMesh {
        let rows = self.crown_rows();
        let n = rows.len();
        let mut m = sheet(&rows, &vec![0; n]);
        m.labels = None;
        m
    }
}

fn ios_rows(spec: &SceneSpec, margin: &MarginCurve) -> (Vec<Row>, Vec<i32>) {
    let ring: Vec<Point3<f64>> = margin.resampled.iter().step_by(IOS_MARGIN_STRIDE).copied().collect();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for k in (1..=GUM_RINGS).rev() {
        let d = k as f64 * RING_SPACING;
        rows.push(Row::Ring(
            ring.iter()
                .map(|m| {
                    let (dir, r) = radial(m);
                    let xy = dir * (r + d);
                    Point3::new(xy.x, xy.y, m.z * (-d / 2.0).exp() - 0.45 * d)
                })
                .collect(),
        ));
        labels.push(0);
    }
    rows.push(Row::Ring(ring.clone()));
    labels.push(1);
    let h = spec.abutment.height;
    let shrink = h * spec.abutment.taper_deg.to_radians().tan();
    let wall = (h / RING_SPACING).ceil() as usize;
    for j in 1..=wall {
        let t = j as f64 / wall as f64;
        rows.push(Row::Ring(
            ring.iter()
                .map(|m| {
                    let (dir, r) = radial(m);
                    let xy = dir * (r - t * shrink);
                    Point3::new(xy.x, xy.y, m.z * (1.0 - t) + h * t)
                })
                .collect(),
        ));
        labels.push(1);
    }
    let cap = (spec.top_radius() / RING_SPACING).ceil().max(2.0) as usize;
    for c in 1..cap {
        let f = 1.0 - c as f64 / cap as f64;
        rows.push(Row::Ring(
            ring.iter()
                .map(|m| {
                    let (dir, r) = radial(m);
                    let xy = dir * ((r - shrink) * f);
                    Point3::new(xy.x, xy.y, h + 0.4 * (1.0 - f * f))
                })
                .collect(),
        ));
        labels.push(1);
    }
    rows.push(Row::Pole(Point3::new(0.0, 0.0, h + 0.4)));
    labels.push(1);
    (rows, labels)
}

/// Ellipsoidal neighbor touching the crown's extreme vertex along `side`
/// (-1 medial, +1 lateral) at the given signed clearance.
fn neighbor(crown: &TriMesh, side: f64, clearance: f64, radius: f64, height: f64) -> TriMesh {
    let extreme = crown
        .vertices
        .iter()
        .max_by(|a, b| (side * a.x).total_cmp(&(side * b.x)))
        .copied()
        .expect("crown has vertices");
    let axes = Vector3::new(0.85 * radius, radius, 0.6 * height);
    let center = Vector3::new(extreme.x + side * (clearance + axes.x), extreme.y, extreme.z);
    let mut m = primitives::icosphere(1.0, 3);
    for v in &mut m.vertices {
        *v = Point3::from(v.coords.component_mul(&axes) + center);
    }
    m
}

fn antagonist(top: f64, center: &Point3<f64>) -> TriMesh {
    let mut m = primitives::planar_grid(2.0 * CROP_HALF_SIZE, 2.0 * CROP_HALF_SIZE, 32, 32);
    for v in &mut m.vertices {
        let (x, y) = (v.x + center.x, v.y + center.y);
        *v = Point3::new(x, y, top + 0.4 * (0.9 * x).sin() * (0.7 * y).cos());
    }
    m
}

fn labeled(m: TriMesh, label: i32) -> TriMesh {
    let n = m.vertices.len();
    m.with_labels(vec![label; n]).expect("label count matches")
}

/// Builds a labeled scene with analytic ground truth.
pub fn make_scene(spec: &SceneSpec) -> Result<SceneBundle> {
    spec.validate()?;
    let gt_margin = analytic_margin(spec)?;
    let shape = CrownShape::new(spec, &gt_margin);
    let gt_crown = shape.open_mesh();

    let top = gt_crown.bounding_box().expect("crown has vertices").1.z;
    let (medial_gap, lateral_gap) = match spec.neighbors.overlap {
        Some(o) => (-o, -o),
        None => (spec.neighbors.gap_medial, spec.neighbors.gap_lateral),
    };
    let medial = neighbor(&gt_crown, -1.0, medial_gap, spec.abutment.base_radius, top);
    let lateral = neighbor(&gt_crown, 1.0, lateral_gap, spec.abutment.base_radius, top);

    let (rows, labels) = ios_rows(spec, &gt_margin);
    let mut ios = sheet(&rows, &labels);
    ios.append(&labeled(medial.clone(), 0));
    ios.append(&labeled(lateral.clone(), 0));
    let center = gt_crown.centroid();
    ios.append(&labeled(antagonist(top + 1.2, &center), 0));

    if spec.noise.jitter > 0.0 {
        let normal = Normal::new(0.0, spec.noise.jitter).map_err(|e| Error::InvalidSpec(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(1);
        for v in &mut ios.vertices {
            *v += Vector3::new(normal.sample(&mut rng), normal.sample(&mut rng), normal.sample(&mut rng));
        }
    }
    let inside = |p: &Point3<f64>| (0..3).all(|a| (p[a] - center[a]).abs() <= CROP_HALF_SIZE);
    let keep: Vec<usize> = (0..ios.faces.len())
        .filter(|&f| ios.faces[f].iter().all(|&v| inside(&ios.vertices[v])))
        .collect();
    let ios_mesh = ios.submesh(&keep).0;

    Ok(SceneBundle {
        spec: *spec,
        ios_mesh,
        gt_crown,
        gt_margin,
        medial,
        lateral,
        template: make_template(spec.tooth_class.into()),
    })
}

/// Canonical template of [`TEMPLATE_POINTS`] points. Tooth templates are
/// surface samples of the canonical crown, centered on their centroid; the
/// hemisphere has radius [`HEMISPHERE_RADIUS`] with its flat side at z = 0.
pub fn make_template(class: TemplateClass) -> LabeledPointCloud {
    let points = match class {
        TemplateClass::Hemisphere => {
            let golden = PI * (3.0 - 5f64.sqrt());
            (0..TEMPLATE_POINTS)
                .map(|i| {
                    let z = (i as f64 + 0.5) / TEMPLATE_POINTS as f64;
                    let r = (1.0 - z * z).sqrt();
                    let a = golden * i as f64;
                    Point3::new(r * a.cos(), r * a.sin(), z) * HEMISPHERE_RADIUS
                })
                .collect()
        }
        TemplateClass::Premolar | TemplateClass::Molar => {
            let tooth = if class == TemplateClass::Molar {
                ToothClass::Molar
            } else {
                ToothClass::Premolar
            };
            let spec = SceneSpec::canonical(tooth);
            let margin = analytic_margin(&spec).expect("canonical margin is valid");
            let crown = CrownShape::new(&spec, &margin).open_mesh();
            let pts = sample_surface(&crown, TEMPLATE_POINTS, TEMPLATE_SEED).expect("crown has area");
            let c = pts.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / pts.len() as f64;
            pts.into_iter().map(|p| p - c).collect()
        }
    };
    LabeledPointCloud::new(points)
}
