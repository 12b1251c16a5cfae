//! Task heads over the aggregate grid: voxel occupancy with cross-entropy,
//! and the novel-view renderer with depth sampling and occlusion-weighted
//! pooling.

pub mod camera;
mod image_io;
mod occupancy;
mod render;

pub use camera::{cast_ray, intersect_cube, Camera, Ray};
pub use image_io::{read_clim, write_clim, write_ppm};
pub use occupancy::{occupancy_loss, predict_occupancy, OccupancyGrid};
pub use render::{
    decode, depth_pool, project, sample_rays, upsample2x, view_synthesis_loss,
    RenderSettings,
};
