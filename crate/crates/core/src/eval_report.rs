//! Batch evaluation CSVs, signed-distance dumps and curvature-weight sweeps.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::Point3;
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::losses::{borrowed_curvature, cmpl, LossConfig};
use crate::margin::{extract_margin_detailed, MarginCurve};
use crate::mesh::io::ply::{PlyData, PlyEncoding, PlyType};
use crate::mesh::io::mesh_to_ply;
use crate::mesh::{estimate_curvature, load_mesh, topology_report, MeshFormat, TriMesh};
use crate::metrics::{cd_l2, hausdorff, margin_hausdorff, mesh_crown_metrics, pia, sample_surface, signed_distance, CrownMetrics};
use crate::pointops::LabeledPointCloud;
use crate::synth::{SceneBundle, ToothClass};

pub const METRIC_COLUMNS: [&str; 7] = [
    "CD-L2 (mm^2)",
    "Fidelity Distance (mm^2)",
    "Hausdorff Distance (mm)",
    "F-Score",
    "Margin Hausdorff Distance (mm)",
    "Medial Area Difference (mm^2)",
    "Lateral Area Difference (mm^2)",
];

pub const SIGNED_DIST_PROPERTY: &str = "signed_dist";

#[derive(Debug, Clone, PartialEq)]
pub struct CaseRow {
    pub case: String,
    pub tooth_class: ToothClass,
    pub metrics: CrownMetrics,
    pub margin_hausdorff: f64,
    pub medial_area_diff: f64,
    pub lateral_area_diff: f64,
    pub sample_seed: u64,
}

impl CaseRow {
    pub fn values(&self) -> [f64; 7] {
        [
            self.metrics.cd_l2,
            self.metrics.fidelity,
            self.metrics.hausdorff,
            self.metrics.f_score,
            self.margin_hausdorff,
            self.medial_area_diff,
            self.lateral_area_diff,
        ]
    }
}

#[derive(Debug, Clone, Default)]
pub struct BatchReport {
    /// Rows in case-name order.
    pub rows: Vec<CaseRow>,
    pub missing: Vec<String>,
    pub failed: Vec<(String, String)>,
}

impl BatchReport {
    pub fn is_complete(&self) -> bool {
        self.missing.is_empty() && self.failed.is_empty()
    }

    /// Column means per tooth class then overall; classes without rows are
    /// left out.
    pub fn means(&self) -> Vec<(&'static str, [f64; 7])> {
        let groups: [(&'static str, Option<ToothClass>); 3] = [
            ("premolar", Some(ToothClass::Premolar)),
            ("molar", Some(ToothClass::Molar)),
            ("overall", None),
        ];
        groups
            .iter()
            .filter_map(|&(name, class)| {
                let rows: Vec<&CaseRow> = self
                    .rows
                    .iter()
                    .filter(|r| class.is_none_or(|c| r.tooth_class == c))
                    .collect();
                if rows.is_empty() {
                    return None;
                }
                let mut sum = [0.0; 7];
                for r in &rows {
                    for (s, v) in sum.iter_mut().zip(r.values()) {
                        *s += v;
                    }
                }
                Some((name, sum.map(|s| s / rows.len() as f64)))
            })
            .collect()
    }

    /// CSV with a commented config header, one row per case and `mean`
    /// footer rows. Missing and failed cases are listed as trailing comments.
    pub fn to_csv(&self, config: &RunConfig) -> String {
        let mut s = config.header("# ");
        writeln!(s, "case,tooth_class,{},threshold_used,sample_seed", METRIC_COLUMNS.join(",")).unwrap();
        let join = |v: [f64; 7]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
        for r in &self.rows {
            writeln!(
                s,
                "{},{},{},{},{}",
                r.case,
                r.tooth_class,
                join(r.values()),
                r.metrics.threshold_used,
                r.sample_seed
            )
            .unwrap();
        }
        for (name, m) in self.means() {
            writeln!(s, "mean,{name},{},{},{}", join(m), config.f_score_tau, config.seed()).unwrap();
        }
        for case in &self.missing {
            writeln!(s, "# missing_case={case}").unwrap();
        }
        for (case, why) in &self.failed {
            writeln!(s, "# failed_case={case}: {why}").unwrap();
        }
        s
    }
}

/// Subdirectories of `cases_dir` holding a scene spec, sorted by name.
pub fn list_cases(cases_dir: &Path) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for entry in fs::read_dir(cases_dir).map_err(|e| Error::io_at(cases_dir, e))? {
        let entry = entry.map_err(|e| Error::io_at(cases_dir, e))?;
        if entry.path().join("spec.txt").is_file() {
            names.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    names.sort();
    Ok(names)
}

/// Metrics of one prediction directory (`crown.ply`, optionally
/// `margin.ply`) against its bundle. Without a predicted margin the margin is
/// extracted from the bundle's scan.
pub fn evaluate_case(bundle: &SceneBundle, case: &str, pred_dir: &Path, config: &RunConfig) -> Result<CaseRow> {
    let crown = load_mesh(&pred_dir.join("crown.ply"), MeshFormat::Ply)?;
    let margin_path = pred_dir.join("margin.ply");
    let margin = if margin_path.is_file() {
        MarginCurve::load(&margin_path)?
    } else {
        extract_margin_detailed(&bundle.ios_mesh, config.smoothing)?.curve
    };
    let seed = config.seed();
    let metrics = mesh_crown_metrics(&crown, &bundle.gt_crown, config.f_score_tau, config.sample_count, seed)?;
    Ok(CaseRow {
        case: case.to_string(),
        tooth_class: bundle.spec.tooth_class,
        metrics,
        margin_hausdorff: margin_hausdorff(&margin, &bundle.gt_margin),
        medial_area_diff: (pia(&crown, &bundle.medial)? - pia(&bundle.gt_crown, &bundle.medial)?).abs(),
        lateral_area_diff: (pia(&crown, &bundle.lateral)? - pia(&bundle.gt_crown, &bundle.lateral)?).abs(),
        sample_seed: seed,
    })
}

enum Outcome {
    Row(CaseRow),
    Missing(String),
    Failed(String, String),
}

/// Evaluates every case on a pool of `workers` threads. Rows come back in
/// case-name order whatever the completion order.
pub fn evaluate_batch(cases_dir: &Path, pred_dir: &Path, config: &RunConfig, workers: usize) -> Result<BatchReport> {
    config.validate()?;
    let cases = list_cases(cases_dir)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("worker pool: {e}")))?;
    let outcomes: Vec<Outcome> = pool.install(|| {
        cases
            .par_iter()
            .map(|case| {
                let pred = pred_dir.join(case);
                if !pred.join("crown.ply").is_file() {
                    return Outcome::Missing(case.clone());
                }
                let result = SceneBundle::load(&cases_dir.join(case))
                    .and_then(|b| evaluate_case(&b, case, &pred, config));
                match result {
                    Ok(row) => Outcome::Row(row),
                    Err(e) => Outcome::Failed(case.clone(), e.to_string()),
                }
            })
            .collect()
    });
    let mut report = BatchReport::default();
    for o in outcomes {
        match o {
            Outcome::Row(r) => report.rows.push(r),
            Outcome::Missing(c) => {
                log::warn!("{}", Error::MissingCase(c.clone()));
                report.missing.push(c);
            }
            Outcome::Failed(c, why) => report.failed.push((c, why)),
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignedDistanceDump {
    pub values: Vec<f64>,
    /// False when the reference is open and the values are unsigned.
    pub signed: bool,
}

/// Per-vertex distance from `crown` to `reference`, negative inside a
/// watertight reference.
pub fn signed_distance_dump(crown: &TriMesh, reference: &TriMesh) -> Result<SignedDistanceDump> {
    let signed = topology_report(reference).is_watertight;
    let mut values = signed_distance(&crown.vertices, reference)?;
    if !signed {
        values.iter_mut().for_each(|v| *v = v.abs());
    }
    Ok(SignedDistanceDump { values, signed })
}

impl SignedDistanceDump {
    /// `crown` as PLY with a float `signed_dist` vertex property.
    pub fn to_ply(&self, crown: &TriMesh, config: Option<&RunConfig>) -> PlyData {
        let mut data = mesh_to_ply(crown, PlyEncoding::BinaryLittleEndian);
        let vertex = data.elements.remove(0);
        data.elements.insert(0, vertex.scalar(SIGNED_DIST_PROPERTY, PlyType::F32, self.values.clone()));
        data.comments.push(format!("signed {}", self.signed));
        if let Some(c) = config {
            data.comments.push(format!("config_hash {}", c.hash()));
        }
        data
    }
}

/// Fixed prediction and curvature-annotated ground truth for the sweep.
#[derive(Debug, Clone)]
pub struct SweepCase {
    pub pred: Vec<Point3<f64>>,
    pub gt: LabeledPointCloud,
}

impl SweepCase {
    /// Surface samples of `pred` against the vertices of `gt` carrying their
    /// normalized mean curvature.
    pub fn from_meshes(pred: &TriMesh, gt: &TriMesh, samples: usize, seed: u64) -> Result<Self> {
        let mut cloud = LabeledPointCloud::new(gt.vertices.clone());
        cloud.curvature = Some(estimate_curvature(gt)?);
        Ok(SweepCase {
            pred: sample_surface(pred, samples, seed)?,
            gt: cloud,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub lambda: f64,
    pub cmpl: f64,
    pub cd_l2: f64,
    pub hausdorff: f64,
}

/// Mean loss and distance metrics of fixed predictions for each `lambda`.
/// Only the loss evaluation changes between rows; margin weighting is off.
pub fn lambda_sweep(cases: &[SweepCase], lambdas: &[f64]) -> Result<Vec<SweepRow>> {
    if cases.is_empty() {
        return Err(Error::InvalidArgument("lambda sweep needs at least one case".into()));
    }
    let n = cases.len() as f64;
    let mut cd = 0.0;
    let mut hd = 0.0;
    let mut curvatures = Vec::with_capacity(cases.len());
    for c in cases {
        cd += cd_l2(&c.pred, &c.gt.points)?;
        hd += hausdorff(&c.pred, &c.gt.points)?;
        curvatures.push(borrowed_curvature(&c.pred, &c.gt)?);
    }
    lambdas
        .iter()
        .map(|&lambda| {
            let cfg = LossConfig {
                lambda,
                use_squared: false,
                margin_weight_enabled: false,
            };
            let mut total = 0.0;
            for (c, k) in cases.iter().zip(&curvatures) {
                total += cmpl(&c.pred, &c.gt, k, &cfg, false)?.value;
            }
            Ok(SweepRow {
                lambda,
                cmpl: total / n,
                cd_l2: cd / n,
                hausdorff: hd / n,
            })
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow], config: &RunConfig) -> String {
    let mut s = String::from("# loss evaluation only: predictions are fixed, lambda changes the loss and not training\n");
    s.push_str(&config.header("# "));
    s.push_str("lambda,CMPL,CD-L2 (mm^2),Hausdorff Distance (mm)\n");
    for r in rows {
        writeln!(s, "{},{},{},{}", r.lambda, r.cmpl, r.cd_l2, r.hausdorff).unwrap();
    }
    s
}
