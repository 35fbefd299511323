use super::*;
use crate::mesh::topology_report;
use crate::metrics::hausdorff;
use crate::synth::{make_scene, SceneSpec};

fn quick_config() -> RunConfig {
    let mut c = RunConfig::default();
    c.resolution = 64;
    c
}

#[test]
fn template_is_placed_on_the_margin() {
    let b = make_scene(&SceneSpec::default()).unwrap();
    let t = make_template(TemplateClass::Hemisphere);
    let placed = place_template(&t.points, &b.gt_margin);
    let g = b.gt_margin.growth_dir;
    let radial = |v: nalgebra::Vector3<f64>| (v - g * v.dot(&g)).norm();
    let min_h = placed.iter().map(|p| p.coords.dot(&g)).fold(f64::INFINITY, f64::min);
    assert!((min_h + TEMPLATE_DROP).abs() < 1e-9, "{min_h}");
    let mean_r = b.gt_margin.resampled.iter().map(|p| radial(p - b.gt_margin.centroid)).sum::<f64>()
        / b.gt_margin.resampled.len() as f64;
    let width = placed.iter().map(|p| radial(p.coords)).fold(0.0, f64::max);
    assert!((width - mean_r).abs() < 0.05 * mean_r, "{width} vs {mean_r}");
}

#[test]
fn full_run_writes_reproducible_outputs() {
    let b = make_scene(&SceneSpec::default()).unwrap();
    let cfg = quick_config();
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    let run = run_pipeline_to_dir(&b.ios_mesh, TemplateClass::Molar, &cfg, d1.path()).unwrap();
    run_pipeline_to_dir(&b.ios_mesh, TemplateClass::Molar, &cfg, d2.path()).unwrap();

    assert_eq!(run.points.len(), 4 * crate::synth::TEMPLATE_POINTS);
    assert!(topology_report(&run.watertight).is_watertight);
    let r = topology_report(&run.crown);
    assert_eq!(r.boundary_loop_count, 1);
    assert_eq!(r.euler_characteristic, 1);
    assert!(boundary_deviation(&run.crown, &run.margin).unwrap() < 0.5);
    let h = hausdorff(&run.margin.resampled, &b.gt_margin.resampled).unwrap();
    assert!(h < 0.5, "{h}");

    for name in ["margin.ply", "points.ply", "watertight.ply", "crown.ply", "report.txt"] {
        let a = std::fs::read(d1.path().join(name)).unwrap();
        assert!(a == std::fs::read(d2.path().join(name)).unwrap(), "{name} differs");
    }
    let report = std::fs::read_to_string(d1.path().join("report.txt")).unwrap();
    assert!(report.contains(&format!("config_hash={}", cfg.hash())));
    assert_eq!(report.matches(": ok\n").count(), STAGES.len());
    let crown = std::fs::read(d1.path().join("crown.ply")).unwrap();
    let text = String::from_utf8_lossy(&crown);
    assert!(text.contains(&format!("comment config_hash {}", cfg.hash())));
    assert!(d1.path().join("timings.txt").exists());
}

#[test]
fn in_memory_run_matches_directory_run() {
    let b = make_scene(&SceneSpec::randomized(2)).unwrap();
    let cfg = quick_config();
    let d = tempfile::tempdir().unwrap();
    let a = run_pipeline(&b.ios_mesh, TemplateClass::Hemisphere, &cfg).unwrap();
    let c = run_pipeline_to_dir(&b.ios_mesh, TemplateClass::Hemisphere, &cfg, d.path()).unwrap();
    assert_eq!(a.crown, c.crown);
    assert_eq!(a.points, c.points);
}

#[test]
fn failure_names_the_stage_and_keeps_a_report() {
    let mut b = make_scene(&SceneSpec::default()).unwrap();
    b.ios_mesh.labels = Some(vec![0; b.ios_mesh.vertices.len()]);
    let d = tempfile::tempdir().unwrap();
    let err = run_pipeline_to_dir(&b.ios_mesh, TemplateClass::Molar, &quick_config(), d.path()).unwrap_err();
    assert!(matches!(err, Error::Stage { stage: "extract_abutment_submesh", .. }), "{err}");
    let report = std::fs::read_to_string(d.path().join("report.txt")).unwrap();
    assert!(report.contains("stage extract_abutment_submesh: failed"));
    assert!(report.contains("stage reconstruct: skipped"));
    assert!(!d.path().join("crown.ply").exists());
}

#[test]
fn late_failure_keeps_earlier_outputs() {
    let b = make_scene(&SceneSpec::default()).unwrap();
    let d = tempfile::tempdir().unwrap();
    std::fs::create_dir(d.path().join("watertight.ply")).unwrap();
    assert!(run_pipeline_to_dir(&b.ios_mesh, TemplateClass::Molar, &quick_config(), d.path()).is_err());
    assert!(d.path().join("margin.ply").is_file());
    assert!(d.path().join("points.ply").is_file());
    assert!(!d.path().join("crown.ply").exists());
    let report = std::fs::read_to_string(d.path().join("report.txt")).unwrap();
    assert!(report.contains("stage postprocess_crown: skipped"));
}

#[test]
fn invalid_config_is_rejected_before_any_stage() {
    let b = make_scene(&SceneSpec::default()).unwrap();
    let mut cfg = quick_config();
    cfg.sigma = f64::NAN;
    assert!(matches!(run_pipeline(&b.ios_mesh, TemplateClass::Molar, &cfg), Err(Error::Config(_))));
}
