use std::f64::consts::PI;

use nalgebra::{Point3, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::margin::{fit_closed_bspline, RESAMPLE_COUNT};
use crate::mesh::topology_report;
use crate::synth::primitives;

fn planar_margin(r: f64, z: f64) -> MarginCurve {
    let resampled: Vec<Point3<f64>> = (0..RESAMPLE_COUNT)
        .map(|i| {
            let a = 2.0 * PI * i as f64 / RESAMPLE_COUNT as f64;
            Point3::new(r * a.cos(), r * a.sin(), z)
        })
        .collect();
    MarginCurve {
        control_polyline: resampled.clone(),
        resampled,
        centroid: Point3::new(0.0, 0.0, z),
        growth_dir: Vector3::z(),
    }
}

fn brute_height(p: &Point3<f64>, s: &CutSurface) -> f64 {
    let mut best = (f64::INFINITY, 0usize, *p);
    for (t, tri) in s.fan_triangles.iter().enumerate() {
        let cp = closest_point_on_triangle(p, tri);
        let d = (p - cp).norm_squared();
        if d < best.0 {
            best = (d, t, cp);
        }
    }
    (p - best.2).dot(&s.oriented_normals[best.1])
}

#[test]
fn planar_fan_normals_follow_growth() {
    let s = build_cut_surface(&planar_margin(3.0, 1.0)).unwrap();
    assert_eq!(s.fan_triangles.len(), RESAMPLE_COUNT);
    for n in &s.oriented_normals {
        assert!((n - Vector3::z()).norm() < 1e-9);
    }
    // the same margin traversed the other way still yields upward normals
    let mut rev = planar_margin(3.0, 1.0);
    rev.resampled.reverse();
    let s = build_cut_surface(&rev).unwrap();
    assert!(s.oriented_normals.iter().all(|n| (n - Vector3::z()).norm() < 1e-9));
}

#[test]
fn saddle_fan_is_consistently_oriented() {
    let pts: Vec<Point3<f64>> = (0..200)
        .map(|i| {
            let a = 2.0 * PI * i as f64 / 200.0;
            Point3::new(4.0 * a.cos(), 4.0 * a.sin(), 0.8 * (2.0 * a).cos())
        })
        .collect();
    let m = fit_closed_bspline(&pts, 0.0).unwrap();
    let s = build_cut_surface(&m).unwrap();
    assert_eq!(s.fan_triangles.len(), 1000);
    assert!(s.oriented_normals.iter().all(|n| n.dot(&m.growth_dir) > 0.0));
}

#[test]
fn ellipse_fan_area_matches_analytic() {
    let pts: Vec<Point3<f64>> = (0..120)
        .map(|i| {
            let a = 2.0 * PI * i as f64 / 120.0;
            Point3::new(6.0 * a.cos(), 4.0 * a.sin(), 0.0)
        })
        .collect();
    let m = fit_closed_bspline(&pts, 0.0).unwrap();
    let area = build_cut_surface(&m).unwrap().area();
    let exact = PI * 6.0 * 4.0;
    assert!((area / exact - 1.0).abs() < 0.01, "{area} vs {exact}");
}

#[test]
fn degenerate_fan_rejected() {
    let mut m = planar_margin(2.0, 0.0);
    m.centroid = m.resampled[10];
    assert!(matches!(build_cut_surface(&m), Err(Error::DegenerateFan(_))));
}

#[test]
fn height_above_and_below_centroid() {
    let m = planar_margin(3.0, 2.0);
    let s = build_cut_surface(&m).unwrap();
    let up = m.centroid + m.growth_dir;
    let down = m.centroid - m.growth_dir;
    assert!((signed_height(&up, &s) - 1.0).abs() < 1e-12);
    assert!((signed_height(&down, &s) + 1.0).abs() < 1e-12);
}

#[test]
fn accelerated_height_equals_brute_force() {
    let pts: Vec<Point3<f64>> = (0..150)
        .map(|i| {
            let a = 2.0 * PI * i as f64 / 150.0;
            Point3::new(5.0 * a.cos(), 3.5 * a.sin(), 0.6 * (2.0 * a).cos() + 0.2 * a.sin())
        })
        .collect();
    let s = build_cut_surface(&fit_closed_bspline(&pts, 0.0).unwrap()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..400 {
        let p = Point3::new(
            rng.random_range(-8.0..8.0),
            rng.random_range(-8.0..8.0),
            rng.random_range(-4.0..4.0),
        );
        assert_eq!(s.signed_height(&p), brute_height(&p, &s));
    }
}

fn assert_disk_on_margin(out: &TriMesh, m: &MarginCurve) {
    let r = topology_report(out);
    assert_eq!(r.euler_characteristic, 1);
    assert_eq!(r.boundary_loop_count, 1);
    let loops = crate::mesh::boundary_loops(out).unwrap();
    for &v in &loops[0] {
        let p = out.vertices[v];
        let q = closest_point_on_polyline(&p, &m.resampled);
        assert!((p - q).norm() <= 1e-6);
    }
}

#[test]
fn equator_cut_leaves_upper_hemisphere() {
    let sphere = primitives::icosphere(1.0, 4);
    let m = planar_margin(1.0, 0.0);
    let out = postprocess_crown(&sphere, &m).unwrap();
    assert_disk_on_margin(&out, &m);
    let loops = crate::mesh::boundary_loops(&out).unwrap();
    assert!(loops[0].iter().all(|&v| out.vertices[v].z.abs() <= 1e-6));
    assert!(out.faces.len() < sphere.faces.len());
    let area = out.surface_area();
    assert!((area / (2.0 * PI) - 1.0).abs() < 0.03, "{area}");
}

#[test]
fn low_cut_keeps_larger_cap() {
    let sphere = primitives::icosphere(1.0, 4);
    let z = -0.5f64;
    let m = planar_margin((1.0 - z * z).sqrt(), z);
    let out = postprocess_crown(&sphere, &m).unwrap();
    assert_disk_on_margin(&out, &m);
    let cap = 2.0 * PI * (1.0 - z);
    assert!(out.surface_area() > sphere.surface_area() / 2.0);
    assert!((out.surface_area() / cap - 1.0).abs() < 0.03);
}

#[test]
fn missing_the_mesh_is_an_error() {
    let sphere = primitives::icosphere(1.0, 3);
    assert!(matches!(postprocess_crown(&sphere, &planar_margin(1.0, -5.0)), Err(Error::NoIntersection)));
    assert!(postprocess_crown(&sphere, &planar_margin(1.0, 5.0)).is_err());
}

#[test]
fn bumpy_margin_on_capsule() {
    let capsule = primitives::capsule(3.0, 4.0, 96, 24, 16);
    let pts: Vec<Point3<f64>> = (0..300)
        .map(|i| {
            let a = 2.0 * PI * i as f64 / 300.0;
            Point3::new(3.0 * a.cos(), 3.0 * a.sin(), 0.7 * (2.0 * a).cos())
        })
        .collect();
    let m = fit_closed_bspline(&pts, 0.0).unwrap();
    let out = trim_crown(&capsule, &m).unwrap();
    assert!(out.warnings.is_empty(), "{:?}", out.warnings);
    assert_disk_on_margin(&out.mesh, &m);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn trimming_is_idempotent(z in -0.7f64..0.7, tilt in -0.3f64..0.3, amp in 0.0f64..0.2) {
        let sphere = primitives::icosphere(1.0, 4);
        let r = (1.0 - z * z).sqrt();
        let pts: Vec<Point3<f64>> = (0..200)
            .map(|i| {
                let a = 2.0 * PI * i as f64 / 200.0;
                Point3::new(r * a.cos(), r * a.sin(), z + tilt * r * a.cos() * 0.3 + amp * (3.0 * a).sin())
            })
            .collect();
        let m = fit_closed_bspline(&pts, 0.0).unwrap();
        let once = trim_crown(&sphere, &m).unwrap();
        prop_assert!(once.mesh.faces.len() < sphere.faces.len());
        let r1 = topology_report(&once.mesh);
        prop_assert_eq!(r1.boundary_loop_count, 1);
        prop_assert_eq!(r1.euler_characteristic, 1);
        let twice = trim_crown(&once.mesh, &m).unwrap();
        prop_assert_eq!(twice.removed_faces, 0);
        prop_assert_eq!(twice.mesh.faces.len(), once.mesh.faces.len());
        for (a, b) in once.mesh.vertices.iter().zip(&twice.mesh.vertices) {
            prop_assert!((a - b).norm() <= 1e-6);
        }
    }
}
