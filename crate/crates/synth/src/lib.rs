//! Deterministic generator of a miniature generalized referring-segmentation corpus.

pub mod dataset;
pub mod pnm;
pub mod realize;
pub mod scene;
pub mod semantics;

pub use dataset::{
    build_dataset, generate_sample, generate_split, read_manifest, DatasetConfig, Mix, Sample,
    Split,
};
pub use realize::{realize_expression, verify, ExpressionSpec, Kind};
pub use scene::{generate_scene, rasterize_mask, render, Scene, SceneConfig};
