//! Cervical margin extraction from a labeled intraoral scan.

mod bspline;

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Point3, Vector3};

use crate::error::{Error, Result};
use crate::mesh::io::ply::{PlyData, PlyElement, PlyEncoding, PlyType};
use crate::mesh::io::{self as meshio};
use crate::mesh::{self, TriMesh};

pub use bspline::{fit_periodic_spline, PeriodicSpline, RESAMPLE_COUNT};

pub const DEFAULT_SMOOTHING: f64 = 1.0;
const MIN_LOOP_POINTS: usize = 8;
const COLLINEAR_SPREAD: f64 = 1e-10;

/// Closed margin curve resampled to exactly [`RESAMPLE_COUNT`] points.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginCurve {
    pub control_polyline: Vec<Point3<f64>>,
    pub resampled: Vec<Point3<f64>>,
    pub centroid: Point3<f64>,
    pub growth_dir: Vector3<f64>,
}

/// Result of [`extract_margin_detailed`].
#[derive(Debug, Clone)]
pub struct MarginExtraction {
    pub curve: MarginCurve,
    pub abutment: TriMesh,
    /// Boundary loop used for the fit, as vertex indices of `abutment`.
    pub loop_vertices: Vec<usize>,
    pub warnings: Vec<String>,
}

/// Faces whose three vertices are labeled 1, reduced to the largest
/// connected component.
pub fn extract_abutment_submesh(mesh: &TriMesh) -> Result<TriMesh> {
    let labels = mesh.labels.as_ref().ok_or(Error::MissingLabels)?;
    let faces: Vec<usize> = (0..mesh.faces.len())
        .filter(|&f| mesh.faces[f].iter().all(|&v| labels[v] == 1))
        .collect();
    if faces.is_empty() {
        return Err(Error::NoAbutmentFaces);
    }
    let (sub, _) = mesh.submesh(&faces);
    let parts = mesh::component_partition(&sub);
    if parts.len() > 1 {
        log::debug!("discarding {} abutment islands", parts.len() - 1);
    }
    Ok(sub.submesh(&parts[0].1).0)
}

/// Periodic cubic fit of a closed polyline, resampled uniformly in arc
/// length. `growth_dir` follows the right-hand rule of the input order.
pub fn fit_closed_bspline(points: &[Point3<f64>], smoothing: f64) -> Result<MarginCurve> {
    if points.len() < MIN_LOOP_POINTS {
        return Err(Error::DegenerateLoop(format!(
            "{} points, need at least {MIN_LOOP_POINTS}",
            points.len()
        )));
    }
    let (_, _, spread) = bspline::best_fit_plane(points);
    if spread < COLLINEAR_SPREAD {
        return Err(Error::DegenerateLoop("points are collinear".into()));
    }
    let spline = fit_periodic_spline(points, smoothing)?;
    let resampled = spline.resample_arc_length(RESAMPLE_COUNT);
    if bspline::best_fit_plane(&resampled).2 < COLLINEAR_SPREAD {
        return Err(Error::DegenerateLoop("smoothing collapsed the curve".into()));
    }
    let (centroid, mut normal, _) = bspline::best_fit_plane(&resampled);
    if winding_area(&resampled, &centroid).dot(&normal) < 0.0 {
        normal = -normal;
    }
    Ok(MarginCurve {
        control_polyline: spline.control,
        resampled,
        centroid,
        growth_dir: normal,
    })
}

fn winding_area(points: &[Point3<f64>], c: &Point3<f64>) -> Vector3<f64> {
    let n = points.len();
    (0..n).fold(Vector3::zeros(), |acc, i| {
        acc + (points[i] - c).cross(&(points[(i + 1) % n] - c))
    })
}

pub fn extract_margin(mesh: &TriMesh) -> Result<MarginCurve> {
    extract_margin_with(mesh, DEFAULT_SMOOTHING)
}

pub fn extract_margin_with(mesh: &TriMesh, smoothing: f64) -> Result<MarginCurve> {
    Ok(extract_margin_detailed(mesh, smoothing)?.curve)
}

/// Full margin extraction. The longest boundary loop of the abutment is
/// fitted; shorter loops are reported in `warnings`. `growth_dir` is
/// oriented toward the abutment centroid.
pub fn extract_margin_detailed(mesh: &TriMesh, smoothing: f64) -> Result<MarginExtraction> {
    let abutment = extract_abutment_submesh(mesh)?;
    let mut loops = mesh::boundary_loops(&abutment)?;
    if loops.is_empty() {
        return Err(Error::DegenerateLoop("abutment has no boundary".into()));
    }
    let length = |l: &Vec<usize>| {
        (0..l.len())
            .map(|i| (abutment.vertices[l[(i + 1) % l.len()]] - abutment.vertices[l[i]]).norm())
            .sum::<f64>()
    };
    let best = (0..loops.len())
        .max_by(|&a, &b| length(&loops[a]).total_cmp(&length(&loops[b])).then(b.cmp(&a)))
        .unwrap();
    let mut warnings = Vec::new();
    for (i, l) in loops.iter().enumerate() {
        if i != best {
            let msg = format!("ignored boundary loop of {} vertices ({:.3} mm)", l.len(), length(l));
            log::warn!("{msg}");
            warnings.push(msg);
        }
    }
    let loop_vertices = loops.swap_remove(best);
    let pts: Vec<Point3<f64>> = loop_vertices.iter().map(|&v| abutment.vertices[v]).collect();
    let mut curve = fit_closed_bspline(&pts, smoothing)?;
    if (abutment.centroid() - curve.centroid).dot(&curve.growth_dir) < 0.0 {
        curve.growth_dir = -curve.growth_dir;
    }
    Ok(MarginExtraction {
        curve,
        abutment,
        loop_vertices,
        warnings,
    })
}

impl MarginCurve {
    /// Total length of the closed resampled polyline.
    pub fn length(&self) -> f64 {
        let n = self.resampled.len();
        (0..n)
            .map(|i| (self.resampled[(i + 1) % n] - self.resampled[i]).norm())
            .sum()
    }

    pub fn to_ply(&self, encoding: PlyEncoding) -> PlyData {
        let mut data = PlyData::new(encoding);
        let c = self.centroid;
        let g = self.growth_dir;
        data.comments.push(format!("centroid {} {} {}", c.x, c.y, c.z));
        data.comments.push(format!("growth_dir {} {} {}", g.x, g.y, g.z));
        data.elements.push(meshio::vertex_element(&self.resampled, None, None, None));
        let n = self.resampled.len();
        data.elements.push(
            PlyElement::new("edge", n)
                .scalar("vertex1", PlyType::I32, (0..n).map(|i| i as f64).collect())
                .scalar("vertex2", PlyType::I32, (0..n).map(|i| ((i + 1) % n) as f64).collect()),
        );
        data
    }

    /// Reads a curve written by [`MarginCurve::to_ply`]. The control
    /// polyline is not stored and comes back equal to the resampled points.
    pub fn from_ply(data: &PlyData) -> Result<Self> {
        let el = data
            .element("vertex")
            .ok_or_else(|| Error::Parse("margin PLY has no vertex element".into()))?;
        let resampled = meshio::points_from_vertex_element(el)?;
        let triple = |key: &str| -> Result<Vector3<f64>> {
            let v = data
                .comment_value(key)
                .ok_or_else(|| Error::Parse(format!("margin PLY lacks `{key}` comment")))?;
            parse_triple(v)
        };
        let centroid = Point3::from(triple("centroid")?);
        let growth_dir = triple("growth_dir")?;
        Ok(MarginCurve {
            control_polyline: resampled.clone(),
            resampled,
            centroid,
            growth_dir,
        })
    }

    /// Plain-text record: centroid, growth direction, then one point per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let c = self.centroid;
        let g = self.growth_dir;
        let _ = writeln!(s, "centroid {} {} {}", c.x, c.y, c.z);
        let _ = writeln!(s, "growth_dir {} {} {}", g.x, g.y, g.z);
        let _ = writeln!(s, "points {}", self.resampled.len());
        for p in &self.resampled {
            let _ = writeln!(s, "{} {} {}", p.x, p.y, p.z);
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let mut field = |key: &str| -> Result<String> {
            let line = lines.next().ok_or_else(|| Error::Parse(format!("missing `{key}` line")))?;
            line.strip_prefix(key)
                .map(|r| r.trim().to_string())
                .ok_or_else(|| Error::Parse(format!("expected `{key}`, found `{line}`")))
        };
        let centroid = Point3::from(parse_triple(&field("centroid")?)?);
        let growth_dir = parse_triple(&field("growth_dir")?)?;
        let count: usize = field("points")?
            .parse()
            .map_err(|_| Error::Parse("bad point count".into()))?;
        let resampled = lines
            .take(count)
            .map(|l| parse_triple(l).map(Point3::from))
            .collect::<Result<Vec<_>>>()?;
        if resampled.len() != count {
            return Err(Error::Parse(format!("expected {count} points, found {}", resampled.len())));
        }
        Ok(MarginCurve {
            control_polyline: resampled.clone(),
            resampled,
            centroid,
            growth_dir,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        meshio::write_ply_file(path, &self.to_ply(PlyEncoding::Ascii))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_ply(&meshio::read_ply_file(path)?)
    }
}

fn parse_triple(s: &str) -> Result<Vector3<f64>> {
    let v: Vec<f64> = s
        .split_whitespace()
        .map(str::parse)
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Parse(format!("bad coordinate triple `{s}`")))?;
    if v.len() != 3 {
        return Err(Error::Parse(format!("expected 3 values in `{s}`")));
    }
    Ok(Vector3::new(v[0], v[1], v[2]))
}

#[cfg(test)]
mod tests;
