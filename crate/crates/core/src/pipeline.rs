//! End-to-end crown generation: margin extraction, template deformation and
//! refinement, Poisson reconstruction and trimming.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use nalgebra::{Point3, UnitQuaternion, Vector3};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::margin::{extract_abutment_submesh, extract_margin_detailed, MarginCurve};
use crate::mesh::io::ply::PlyEncoding;
use crate::mesh::io::{mesh_to_ply, write_ply_file};
use crate::mesh::{boundary_loops, topology_report, TriMesh};
use crate::nn::{template_deform_forward, refine_points, CrownNet, NetConfig, DEFAULT_HEADS};
use crate::pointops::{estimate_normals, farthest_point_sample};
use crate::postprocess::{closest_point_on_polyline, trim_crown};
use crate::surface_recon::reconstruct;
use crate::synth::{make_template, TemplateClass};

/// Attention width of the toy-scale network.
pub const PIPELINE_HIDDEN: usize = 64;
/// Decode heads start small so seeded offsets stay sub-millimeter.
pub const PIPELINE_DECODE_GAIN: f64 = 0.02;
/// Scan points fed to the encoder.
pub const IOS_TOKENS: usize = 1024;
pub const NORMAL_NEIGHBORS: usize = 16;
/// Depth of the template base below the margin centroid.
pub const TEMPLATE_DROP: f64 = 0.5;

pub const STAGES: [&str; 7] = [
    "extract_abutment_submesh",
    "extract_margin",
    "template_deform",
    "refine",
    "estimate_normals",
    "reconstruct",
    "postprocess_crown",
];

/// Outputs of a complete run.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub margin: MarginCurve,
    pub coarse: Vec<Point3<f64>>,
    pub points: Vec<Point3<f64>>,
    pub normals: Vec<Vector3<f64>>,
    pub watertight: TriMesh,
    pub crown: TriMesh,
    pub warnings: Vec<String>,
    pub timings: Vec<(&'static str, Duration)>,
}

#[derive(Default)]
struct Partial {
    margin: Option<MarginCurve>,
    coarse: Option<Vec<Point3<f64>>>,
    points: Option<Vec<Point3<f64>>>,
    normals: Option<Vec<Vector3<f64>>>,
    watertight: Option<TriMesh>,
    crown: Option<TriMesh>,
    warnings: Vec<String>,
    timings: Vec<(&'static str, Duration)>,
}

fn timed<T>(p: &mut Partial, stage: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let start = Instant::now();
    let out = f().map_err(|e| e.in_stage(stage));
    p.timings.push((stage, start.elapsed()));
    out
}

/// Rotation taking +z onto `dir`.
fn align_z(dir: &Vector3<f64>) -> UnitQuaternion<f64> {
    UnitQuaternion::rotation_between(&Vector3::z(), dir)
        .unwrap_or_else(|| UnitQuaternion::from_axis_angle(&Vector3::x_axis(), std::f64::consts::PI))
}

/// Template placed in the margin frame (origin at the margin centroid): its
/// widest radius matches the mean margin radius and its base sits
/// [`TEMPLATE_DROP`] below the margin.
pub fn place_template(template: &[Point3<f64>], margin: &MarginCurve) -> Vec<Point3<f64>> {
    let g = margin.growth_dir;
    let mean_radius = margin
        .resampled
        .iter()
        .map(|p| {
            let d = p - margin.centroid;
            (d - g * d.dot(&g)).norm()
        })
        .sum::<f64>()
        / margin.resampled.len() as f64;
    let width = template.iter().map(|p| p.x.hypot(p.y)).fold(0.0, f64::max);
    let base = template.iter().map(|p| p.z).fold(f64::INFINITY, f64::min);
    let scale = if width > 0.0 { mean_radius / width } else { 1.0 };
    let rot = align_z(&g);
    template
        .iter()
        .map(|p| Point3::from(rot * (Vector3::new(p.x, p.y, p.z - base) * scale) - g * TEMPLATE_DROP))
        .collect()
}

/// Up to [`IOS_TOKENS`] farthest-point samples of the scan (a multiple of
/// 16), shifted into the margin frame, with their abutment indicators.
fn encoder_input(ios: &TriMesh, origin: &Point3<f64>) -> Result<(Vec<Point3<f64>>, Vec<f64>)> {
    let labels = ios.labels.as_ref().ok_or(Error::MissingLabels)?;
    let n = ios.vertices.len().min(IOS_TOKENS) / 16 * 16;
    if n == 0 {
        return Err(Error::InvalidArgument(format!("scan has only {} vertices", ios.vertices.len())));
    }
    let idx = farthest_point_sample(&ios.vertices, n, 0)?;
    Ok((
        idx.iter().map(|&i| Point3::from(ios.vertices[i] - origin)).collect(),
        idx.iter().map(|&i| if labels[i] == 1 { 1.0 } else { 0.0 }).collect(),
    ))
}

pub fn pipeline_net(config: &RunConfig) -> Result<CrownNet> {
    CrownNet::seeded(&NetConfig {
        heads: DEFAULT_HEADS,
        hidden: PIPELINE_HIDDEN,
        seed: config.seed(),
        decode_gain: PIPELINE_DECODE_GAIN,
    })
}

/// Margin extraction through the second refinement.
fn generation_stages(
    ios: &TriMesh,
    template: TemplateClass,
    config: &RunConfig,
    p: &mut Partial,
    on_stage: &mut impl FnMut(&Partial) -> Result<()>,
) -> Result<(MarginCurve, Vec<Point3<f64>>)> {
    config.validate()?;
    timed(p, "extract_abutment_submesh", || extract_abutment_submesh(ios))?;
    let extraction = timed(p, "extract_margin", || extract_margin_detailed(ios, config.smoothing))?;
    p.warnings.extend(extraction.warnings);
    let margin = extraction.curve;
    p.margin = Some(margin.clone());
    on_stage(p)?;

    let origin = margin.centroid;
    let net = pipeline_net(config)?;
    let (feats, coarse) = timed(p, "template_deform", || {
        let (pts, labels) = encoder_input(ios, &origin)?;
        let feats = net.encoder.forward(&pts, &labels)?;
        let placed = place_template(&make_template(template).points, &margin);
        let coarse = template_deform_forward(&placed, &feats.global, &net.deform)?;
        Ok((feats, coarse))
    })?;
    p.coarse = Some(coarse.iter().map(|q| q + origin.coords).collect());
    let local = timed(p, "refine", || {
        let r1 = refine_points(&coarse, &feats.f1, &net.refine1)?;
        refine_points(&r1, &feats.f0, &net.refine2)
    })?;
    let points: Vec<Point3<f64>> = local.iter().map(|q| q + origin.coords).collect();
    p.points = Some(points.clone());
    on_stage(p)?;
    Ok((margin, points))
}

fn run_stages(
    ios: &TriMesh,
    template: TemplateClass,
    config: &RunConfig,
    p: &mut Partial,
    mut on_stage: impl FnMut(&Partial) -> Result<()>,
) -> Result<()> {
    let (margin, points) = generation_stages(ios, template, config, p, &mut on_stage)?;
    let normals = timed(p, "estimate_normals", || estimate_normals(&points, NORMAL_NEIGHBORS))?;
    p.normals = Some(normals.clone());
    let watertight = timed(p, "reconstruct", || reconstruct(&points, &normals, config.resolution, config.sigma))?;
    p.watertight = Some(watertight.clone());
    on_stage(p)?;

    let trimmed = timed(p, "postprocess_crown", || trim_crown(&watertight, &margin))?;
    p.warnings.extend(trimmed.warnings);
    p.crown = Some(trimmed.mesh);
    on_stage(p)
}

/// Margin and generated crown points without surface reconstruction.
pub fn generate_points(ios: &TriMesh, template: TemplateClass, config: &RunConfig) -> Result<(MarginCurve, Vec<Point3<f64>>)> {
    generation_stages(ios, template, config, &mut Partial::default(), &mut |_| Ok(()))
}

/// Runs every stage in memory.
pub fn run_pipeline(ios: &TriMesh, template: TemplateClass, config: &RunConfig) -> Result<PipelineRun> {
    let mut p = Partial::default();
    run_stages(ios, template, config, &mut p, |_| Ok(()))?;
    Ok(finish(p))
}

fn finish(p: Partial) -> PipelineRun {
    PipelineRun {
        margin: p.margin.expect("margin stage ran"),
        coarse: p.coarse.expect("deform stage ran"),
        points: p.points.expect("refine stage ran"),
        normals: p.normals.expect("normal stage ran"),
        watertight: p.watertight.expect("reconstruct stage ran"),
        crown: p.crown.expect("trim stage ran"),
        warnings: p.warnings,
        timings: p.timings,
    }
}

pub fn write_mesh(mesh: &TriMesh, path: &Path, config: &RunConfig) -> Result<()> {
    let mut data = mesh_to_ply(mesh, PlyEncoding::BinaryLittleEndian);
    data.comments.push(format!("config_hash {}", config.hash()));
    write_ply_file(path, &data)
}

pub fn write_margin(margin: &MarginCurve, path: &Path, config: &RunConfig) -> Result<()> {
    let mut data = margin.to_ply(PlyEncoding::Ascii);
    data.comments.push(format!("config_hash {}", config.hash()));
    write_ply_file(path, &data)
}

pub fn write_points(points: &[Point3<f64>], path: &Path, config: &RunConfig) -> Result<()> {
    let mut data = crate::pointops::LabeledPointCloud::new(points.to_vec()).to_ply(PlyEncoding::BinaryLittleEndian);
    data.comments.push(format!("config_hash {}", config.hash()));
    write_ply_file(path, &data)
}

/// Largest distance from a boundary vertex of `crown` to the margin polyline.
pub fn boundary_deviation(crown: &TriMesh, margin: &MarginCurve) -> Result<f64> {
    Ok(boundary_loops(crown)?
        .iter()
        .flatten()
        .map(|&v| (crown.vertices[v] - closest_point_on_polyline(&crown.vertices[v], &margin.resampled)).norm())
        .fold(0.0, f64::max))
}

fn report_text(p: &Partial, config: &RunConfig, failure: Option<&Error>) -> String {
    let mut s = String::from("# crownforge pipeline report\n");
    s.push_str(&config.header("# "));
    let done: Vec<&str> = p.timings.iter().map(|t| t.0).collect();
    for stage in STAGES {
        let status = match (done.contains(&stage), failure) {
            (true, Some(_)) if done.last() == Some(&stage) => "failed",
            (true, _) => "ok",
            (false, _) => "skipped",
        };
        writeln!(s, "stage {stage}: {status}").unwrap();
    }
    if let Some(e) = failure {
        writeln!(s, "error: {e}").unwrap();
    }
    if let Some(m) = &p.margin {
        writeln!(s, "margin.length_mm={}", m.length()).unwrap();
    }
    if let Some(pts) = &p.points {
        writeln!(s, "points.count={}", pts.len()).unwrap();
    }
    if let Some(w) = &p.watertight {
        let r = topology_report(w);
        writeln!(s, "watertight.faces={}", w.faces.len()).unwrap();
        writeln!(s, "watertight.is_watertight={}", r.is_watertight).unwrap();
        writeln!(s, "watertight.euler_characteristic={}", r.euler_characteristic).unwrap();
    }
    if let (Some(c), Some(m)) = (&p.crown, &p.margin) {
        let r = topology_report(c);
        writeln!(s, "crown.faces={}", c.faces.len()).unwrap();
        writeln!(s, "crown.euler_characteristic={}", r.euler_characteristic).unwrap();
        writeln!(s, "crown.boundary_loops={}", r.boundary_loop_count).unwrap();
        if let Ok(d) = boundary_deviation(c, m) {
            writeln!(s, "crown.max_boundary_distance_mm={d}").unwrap();
        }
    }
    for w in &p.warnings {
        writeln!(s, "warning: {w}").unwrap();
    }
    s
}

fn timings_text(p: &Partial, config: &RunConfig) -> String {
    let mut s = config.header("# ");
    for (stage, d) in &p.timings {
        writeln!(s, "{stage}={:.6}", d.as_secs_f64()).unwrap();
    }
    s
}

/// Runs the pipeline and writes `margin.ply`, `points.ply`, `watertight.ply`,
/// `crown.ply` and `report.txt` into `dir`. Wall-clock stage timings go to
/// `timings.txt` so the other files stay reproducible. Outputs of finished
/// stages are kept when a later stage fails.
pub fn run_pipeline_to_dir(ios: &TriMesh, template: TemplateClass, config: &RunConfig, dir: &Path) -> Result<PipelineRun> {
    fs::create_dir_all(dir).map_err(|e| Error::io_at(dir, e))?;
    let mut p = Partial::default();
    let mut written = [false; 4];
    let result = run_stages(ios, template, config, &mut p, |p| {
        if let (Some(m), false) = (&p.margin, written[0]) {
            write_margin(m, &dir.join("margin.ply"), config)?;
            written[0] = true;
        }
        if let (Some(pts), false) = (&p.points, written[1]) {
            write_points(pts, &dir.join("points.ply"), config)?;
            written[1] = true;
        }
        if let (Some(w), false) = (&p.watertight, written[2]) {
            write_mesh(w, &dir.join("watertight.ply"), config)?;
            written[2] = true;
        }
        if let (Some(c), false) = (&p.crown, written[3]) {
            write_mesh(c, &dir.join("crown.ply"), config)?;
            written[3] = true;
        }
        Ok(())
    });
    let report = dir.join("report.txt");
    fs::write(&report, report_text(&p, config, result.as_ref().err())).map_err(|e| Error::io_at(&report, e))?;
    let timings = dir.join("timings.txt");
    fs::write(&timings, timings_text(&p, config)).map_err(|e| Error::io_at(&timings, e))?;
    result?;
    Ok(finish(p))
}

#[cfg(test)]
mod tests;
