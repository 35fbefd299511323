use std::f64::consts::PI;

use nalgebra::{Isometry3, Point3, Translation3, UnitQuaternion, Vector3};
use proptest::prelude::*;

use super::*;
use crate::synth::primitives;

fn circle(n: usize, r: f64) -> Vec<Point3<f64>> {
    (0..n)
        .map(|i| {
            let a = 2.0 * PI * i as f64 / n as f64;
            Point3::new(r * a.cos(), r * a.sin(), 0.0)
        })
        .collect()
}

fn gaps(points: &[Point3<f64>]) -> Vec<f64> {
    let n = points.len();
    (0..n).map(|i| (points[(i + 1) % n] - points[i]).norm()).collect()
}

/// Closed cylinder with flat caps, labeled 1 on and above `z_label`.
fn labeled_cylinder(z_label: f64) -> TriMesh {
    let mut profile = vec![(0.0, 0.0)];
    for j in 0..=16 {
        profile.push((4.0, 8.0 * j as f64 / 16.0));
    }
    profile.push((0.0, 8.0));
    let m = primitives::revolve(&profile, 128);
    let labels = m.vertices.iter().map(|p| (p.z >= z_label - 1e-9) as i32).collect();
    m.with_labels(labels).unwrap()
}

#[test]
fn exact_circle_is_reproduced() {
    let c = fit_closed_bspline(&circle(64, 5.0), 0.0).unwrap();
    assert_eq!(c.resampled.len(), RESAMPLE_COUNT);
    for p in &c.resampled {
        assert!((p.coords.norm() - 5.0).abs() < 1e-3);
    }
    assert!((c.growth_dir - Vector3::z()).norm() < 1e-9);
    assert!(c.centroid.coords.norm() < 1e-6);
}

#[test]
fn smoothing_reduces_radial_noise() {
    let mut rng_state = 12345u64;
    let noisy: Vec<Point3<f64>> = circle(64, 5.0)
        .into_iter()
        .map(|p| {
            rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let u = (rng_state >> 11) as f64 / (1u64 << 53) as f64;
            Point3::from(p.coords * (1.0 + (u - 0.5) * 0.08))
        })
        .collect();
    let input_dev = noisy.iter().map(|p| (p.coords.norm() - 5.0).abs()).fold(0.0, f64::max);
    let c = fit_closed_bspline(&noisy, 0.5).unwrap();
    let fit_dev = c.resampled.iter().map(|p| (p.coords.norm() - 5.0).abs()).fold(0.0, f64::max);
    assert!(fit_dev < input_dev, "{fit_dev} vs {input_dev}");
}

#[test]
fn ellipse_is_uniform_in_arc_length_not_parameter() {
    let pts: Vec<Point3<f64>> = (0..96)
        .map(|i| {
            let a = 2.0 * PI * i as f64 / 96.0;
            Point3::new(6.0 * a.cos(), 4.0 * a.sin(), 0.0)
        })
        .collect();
    let c = fit_closed_bspline(&pts, 0.0).unwrap();
    let g = gaps(&c.resampled);
    let mean = g.iter().sum::<f64>() / g.len() as f64;
    assert!(g.iter().all(|x| (x / mean - 1.0).abs() < 0.01));
    // the input is uniform in angle, so its gaps vary by far more
    let gi = gaps(&pts);
    let mi = gi.iter().sum::<f64>() / gi.len() as f64;
    assert!(gi.iter().any(|x| (x / mi - 1.0).abs() > 0.1));
}

#[test]
fn degenerate_loops_rejected() {
    assert!(matches!(fit_closed_bspline(&circle(7, 1.0), 0.0), Err(Error::DegenerateLoop(_))));
    let line: Vec<_> = (0..20).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect();
    assert!(matches!(fit_closed_bspline(&line, 0.0), Err(Error::DegenerateLoop(_))));
}

#[test]
fn cylinder_margin_matches_label_circle() {
    let m = labeled_cylinder(4.0);
    let curve = extract_margin(&m).unwrap();
    for p in &curve.resampled {
        let d = ((p.x.hypot(p.y) - 4.0).powi(2) + (p.z - 4.0).powi(2)).sqrt();
        assert!(d < 0.1, "{d}");
    }
    assert!(curve.growth_dir.z > 0.99);
}

#[test]
fn abutment_submesh_is_top_half() {
    let m = labeled_cylinder(4.0);
    let a = extract_abutment_submesh(&m).unwrap();
    assert!(a.vertices.iter().all(|p| p.z >= 4.0 - 1e-9));
    let expected = m
        .faces
        .iter()
        .filter(|f| f.iter().all(|&v| m.vertices[v].z >= 4.0 - 1e-9))
        .count();
    assert_eq!(a.faces.len(), expected);
}

#[test]
fn isolated_labeled_triangle_is_discarded() {
    let mut m = labeled_cylinder(4.0);
    let bottom = m
        .faces
        .iter()
        .position(|f| f.iter().all(|&v| m.vertices[v].z < 1.0))
        .unwrap();
    let labels = m.labels.as_mut().unwrap();
    for v in m.faces[bottom] {
        labels[v] = 1;
    }
    let a = extract_abutment_submesh(&m).unwrap();
    assert!(a.vertices.iter().all(|p| p.z >= 4.0 - 1e-9));
}

#[test]
fn unlabeled_and_all_zero_meshes_error() {
    let m = primitives::icosphere(1.0, 1);
    assert!(matches!(extract_abutment_submesh(&m), Err(Error::MissingLabels)));
    let n = m.vertices.len();
    let z = m.with_labels(vec![0; n]).unwrap();
    assert!(matches!(extract_margin(&z), Err(Error::NoAbutmentFaces)));
}

#[test]
fn longest_loop_wins_over_open_rim() {
    // open frustum: label boundary at r = 4, mesh rim at r = 2
    let profile: Vec<(f64, f64)> = (0..=12).map(|j| (5.0 - j as f64 / 4.0, j as f64 * 0.5)).collect();
    let m = primitives::revolve(&profile, 48);
    let labels = m.vertices.iter().map(|p| (p.z >= 2.0 - 1e-9) as i32).collect();
    let m = m.with_labels(labels).unwrap();
    let ex = extract_margin_detailed(&m, 0.0).unwrap();
    assert_eq!(ex.warnings.len(), 1);
    // every loop vertex sits on the label boundary circle
    for &v in &ex.loop_vertices {
        let p = ex.abutment.vertices[v];
        assert!((p.z - 2.0).abs() < 1e-9 && (p.x.hypot(p.y) - 4.0).abs() < 1e-9);
    }
    assert!(ex.curve.growth_dir.z > 0.99);
}

#[test]
fn serialization_round_trips() {
    let c = fit_closed_bspline(&circle(32, 3.0), 0.0).unwrap();
    let text = c.to_text();
    let back = MarginCurve::from_text(&text).unwrap();
    assert_eq!(back.resampled, c.resampled);
    assert_eq!(back.centroid, c.centroid);
    assert_eq!(back.growth_dir, c.growth_dir);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("margin.ply");
    c.save(&path).unwrap();
    let back = MarginCurve::load(&path).unwrap();
    assert_eq!(back.resampled, c.resampled);
    assert_eq!(back.growth_dir, c.growth_dir);
    let ply = crate::mesh::io::read_ply_file(&path).unwrap();
    assert_eq!(ply.element("edge").unwrap().count, RESAMPLE_COUNT);
}

#[test]
fn selected_loop_lies_on_label_boundary_edges() {
    let m = labeled_cylinder(3.0);
    let ex = extract_margin_detailed(&m, DEFAULT_SMOOTHING).unwrap();
    let labels = m.labels.as_ref().unwrap();
    let loop_pts: Vec<Point3<f64>> = ex.loop_vertices.iter().map(|&v| ex.abutment.vertices[v]).collect();
    for p in loop_pts {
        let v = m.vertices.iter().position(|q| *q == p).unwrap();
        assert_eq!(labels[v], 1);
        let touches_zero = m
            .faces
            .iter()
            .any(|f| f.contains(&v) && f.iter().any(|&w| labels[w] == 0));
        assert!(touches_zero);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn extraction_is_rigid_covariant(
        ax in -1.0f64..1.0, ay in -1.0f64..1.0, az in -1.0f64..1.0,
        tx in -20.0f64..20.0, ty in -20.0f64..20.0, tz in -20.0f64..20.0,
    ) {
        let m = labeled_cylinder(4.0);
        let iso = Isometry3::from_parts(
            Translation3::new(tx, ty, tz),
            UnitQuaternion::from_euler_angles(ax, ay, az),
        );
        let a = extract_margin(&m).unwrap();
        let b = extract_margin(&m.transformed(&iso)).unwrap();
        for (p, q) in a.resampled.iter().zip(&b.resampled) {
            prop_assert!((iso * p - q).norm() < 1e-6);
        }
        prop_assert!((iso.rotation * a.growth_dir - b.growth_dir).norm() < 1e-6);
    }

    #[test]
    fn larger_budget_is_never_rougher(s1 in 0.0f64..2.0, ds in 0.0f64..2.0, seed in 0u64..1000) {
        let pts: Vec<Point3<f64>> = circle(48, 5.0)
            .into_iter()
            .enumerate()
            .map(|(i, p)| {
                let w = ((i as u64 * 2654435761 + seed) % 1000) as f64 / 1000.0 - 0.5;
                Point3::from(p.coords * (1.0 + 0.05 * w))
            })
            .collect();
        let a = fit_periodic_spline(&pts, s1).unwrap().roughness();
        let b = fit_periodic_spline(&pts, s1 + ds).unwrap().roughness();
        prop_assert!(b <= a * (1.0 + 1e-6) + 1e-12);
    }

    #[test]
    fn always_one_thousand_points(n in 16usize..300, r in 2.0f64..20.0) {
        let c = fit_closed_bspline(&circle(n, r), DEFAULT_SMOOTHING).unwrap();
        prop_assert_eq!(c.resampled.len(), RESAMPLE_COUNT);
        prop_assert!((c.growth_dir.norm() - 1.0).abs() < 1e-12);
        let g = gaps(&c.resampled);
        let mean = g.iter().sum::<f64>() / g.len() as f64;
        prop_assert!(g.iter().all(|x| (x / mean - 1.0).abs() < 0.01));
    }
}
