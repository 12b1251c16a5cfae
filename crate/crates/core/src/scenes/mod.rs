//! Procedural ground-truth factory: analytic SDF shapes with known global
//! symmetries, sphere-traced renders, exact canonical coordinate maps,
//! occupancy grids, surface oracles, and camera sampling.

mod dataset;
mod render;
mod sdf;
mod shapes;
mod texture;

pub use dataset::{
    decode_instance, derive_seed, encode_instance, generate_dataset, generate_instance,
    hex_string, instance_file_name, read_dataset, read_instance, read_manifest,
    split_instances, write_dataset, DatasetSplit, Manifest, SceneConfig, SceneInstance,
};
pub use render::{
    render_view, sample_camera, sphere_trace, CameraRanges, RenderSample, MAX_STEPS,
    SURFACE_EPS,
};
pub use sdf::{Primitive, ShapeSdf};
pub use shapes::{build_shape, sample_surface_oracle, OccupancyData, ShapeClass, ShapeSpec};
pub use texture::{Texture, TextureMode};
