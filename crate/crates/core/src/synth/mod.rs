//! Procedural dental scenes with analytic ground truth.

pub mod primitives;
mod scene;

pub use scene::{
    make_scene, make_template, AbutmentSpec, CrownSpec, NeighborSpec, NoiseSpec, SceneBundle, SceneSpec, TemplateClass,
    ToothClass, BUNDLE_FILES, CROP_HALF_SIZE, HEMISPHERE_RADIUS, TEMPLATE_POINTS,
};
