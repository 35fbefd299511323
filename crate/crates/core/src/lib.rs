//! Geometry toolkit for dental crown generation: cervical margin extraction,
//! spectral Poisson reconstruction, crown trimming, training losses,
//! evaluation metrics and toy-scale attention blocks.

pub mod config;
pub mod error;
pub mod eval_report;
pub mod losses;
pub mod margin;
pub mod mesh;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod pointops;
pub mod postprocess;
pub mod surface_recon;
pub mod synth;

pub use error::{Error, Result};
pub use mesh::{TopologyReport, TriMesh};
pub use pointops::LabeledPointCloud;
