//! Sphere-traced ground-truth rendering.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::sdf::ShapeSdf;
use super::texture::Texture;
use crate::heads::camera::Camera;

/// Sphere-tracing controls: 128 steps, surface epsilon 1e-4.
pub const MAX_STEPS: usize = 128;
pub const SURFACE_EPS: f64 = 1e-4;

/// One rendered view with exact per-pixel ground truth. Background pixels
/// have mask 0, black color, infinite depth, zero coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderSample {
    pub camera: Camera,
    /// Stable per-view seed for sampling continuous orbits during lifting;
    /// travels with the view so permuting a view list changes nothing.
    pub view_seed: u64,
    pub image: Vec<f32>,
    pub mask: Vec<bool>,
    pub gt_coords: Vec<f32>,
    pub depth: Vec<f32>,
}

impl RenderSample {
    pub fn image_size(&self) -> (usize, usize) {
        self.camera.image_size
    }

    pub fn foreground_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn ground_truth(&self) -> crate::canonical::GroundTruthCoords {
        crate::canonical::GroundTruthCoords {
            coords: self.gt_coords.clone(),
            mask: self.mask.clone(),
            image_size: self.camera.image_size,
        }
    }
}

/// Marches one ray; returns the hit parameter if the surface is reached.
pub fn sphere_trace(sdf: &ShapeSdf, origin: [f64; 3], dir: [f64; 3], t_start: f64, t_end: f64) -> Option<f64> {
    let mut t = t_start.max(0.0);
    for _ in 0..MAX_STEPS {
        if t > t_end {
            return None;
        }
        let p = [
            origin[0] + t * dir[0],
            origin[1] + t * dir[1],
            origin[2] + t * dir[2],
        ];
        let d = sdf.distance(p);
        if d < SURFACE_EPS {
            return Some(t);
        }
        t += d;
    }
    None
}

/// Renders the shape from a camera, producing image, mask, depth, and the
/// exact canonical coordinates of every hit (object frame equals canonical
/// frame, so the hit point is the ground truth).
pub fn render_view(sdf: &ShapeSdf, texture: &Texture, camera: &Camera, view_seed: u64) -> RenderSample {
    let (h, w) = camera.image_size;
    let n = h * w;
    let mut image = vec![0.0f32; n * 3];
    let mut mask = vec![false; n];
    let mut gt_coords = vec![0.0f32; n * 3];
    let mut depth = vec![f32::INFINITY; n];
    for r in 0..h {
        for c in 0..w {
            let p = r * w + c;
            // Pad the cube slightly so grazing surfaces are not clipped.
            let (ray, t_enter, t_exit) = padded_cast(camera, r, c);
            if t_enter > t_exit {
                continue;
            }
            if let Some(t) = sphere_trace(sdf, ray.origin, ray.dir, t_enter, t_exit) {
                let hit = [
                    ray.origin[0] + t * ray.dir[0],
                    ray.origin[1] + t * ray.dir[1],
                    ray.origin[2] + t * ray.dir[2],
                ];
                mask[p] = true;
                depth[p] = t as f32;
                gt_coords[p * 3] = hit[0] as f32;
                gt_coords[p * 3 + 1] = hit[1] as f32;
                gt_coords[p * 3 + 2] = hit[2] as f32;
                let rgb = texture.color(hit);
                image[p * 3] = rgb[0];
                image[p * 3 + 1] = rgb[1];
                image[p * 3 + 2] = rgb[2];
            }
        }
    }
    RenderSample { camera: *camera, view_seed, image, mask, gt_coords, depth }
}

fn padded_cast(camera: &Camera, r: usize, c: usize) -> (crate::heads::camera::Ray, f64, f64) {
    let ray = camera.ray(r, c);
    let (e, x) = crate::heads::camera::intersect_cube(&ray, [0.0; 3], 0.52);
    (ray, e, x)
}

/// Camera pose sampling ranges; azimuth spans the full circle, elevation
/// `[-20, 40]` degrees, translation `[-0.1, 0.1]` per axis.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CameraRanges {
    pub distance: f64,
    pub focal: f64,
    pub image_size: usize,
}

impl Default for CameraRanges {
    fn default() -> Self {
        CameraRanges { distance: 1.5, focal: 1.2, image_size: 32 }
    }
}

pub fn sample_camera<R: Rng>(rng: &mut R, ranges: &CameraRanges) -> Camera {
    Camera {
        azimuth_deg: rng.gen_range(0.0..360.0),
        elevation_deg: rng.gen_range(-20.0..40.0),
        translation: [
            rng.gen_range(-0.1..0.1),
            rng.gen_range(-0.1..0.1),
            rng.gen_range(-0.1..0.1),
        ],
        distance: ranges.distance,
        focal: ranges.focal,
        image_size: (ranges.image_size, ranges.image_size),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use super::super::shapes::{ShapeClass, ShapeSpec};
    use super::super::texture::TextureMode;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn test_scene() -> (ShapeSdf, Texture) {
        let spec = ShapeSpec::sample(ShapeClass::BottleRotcont, 5);
        let sdf = spec.build_sdf().unwrap();
        let tex = Texture::new(spec.class, TextureMode::SymmetryInvariant, spec.seed);
        (sdf, tex)
    }

    fn test_camera() -> Camera {
        Camera {
            azimuth_deg: 30.0,
            elevation_deg: 15.0,
            distance: 1.5,
            translation: [0.02, -0.04, 0.03],
            focal: 1.2,
            image_size: (24, 24),
        }
    }

    #[test]
    fn mask_depth_and_coords_are_consistent() {
        let (sdf, tex) = test_scene();
        let sample = render_view(&sdf, &tex, &test_camera(), 1);
        assert!(sample.foreground_count() > 20, "object should be visible");
        for p in 0..sample.mask.len() {
            let m = sample.mask[p];
            assert_eq!(m, sample.depth[p].is_finite());
            let c = [
                sample.gt_coords[p * 3] as f64,
                sample.gt_coords[p * 3 + 1] as f64,
                sample.gt_coords[p * 3 + 2] as f64,
            ];
            if m {
                assert!(c.iter().all(|v| v.abs() <= 0.5 + 1e-3), "coord {c:?} outside cube");
            } else {
                assert_eq!(sample.image[p * 3], 0.0);
                assert_eq!(c, [0.0; 3]);
            }
        }
    }

    #[test]
    fn hit_points_lie_on_the_surface() {
        let (sdf, tex) = test_scene();
        let sample = render_view(&sdf, &tex, &test_camera(), 1);
        for p in 0..sample.mask.len() {
            if sample.mask[p] {
                let c = [
                    sample.gt_coords[p * 3] as f64,
                    sample.gt_coords[p * 3 + 1] as f64,
                    sample.gt_coords[p * 3 + 2] as f64,
                ];
                // f32 storage of the hit point costs up to ~1e-7 extra.
                assert!(
                    sdf.distance(c).abs() <= 2.0 * SURFACE_EPS + 1e-5,
                    "hit point off surface: {}",
                    sdf.distance(c)
                );
            }
        }
    }

    #[test]
    fn camera_sampling_respects_ranges() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let ranges = CameraRanges::default();
        let mut az_min = f64::INFINITY;
        let mut az_max = f64::NEG_INFINITY;
        let mut el_min = f64::INFINITY;
        let mut el_max = f64::NEG_INFINITY;
        for _ in 0..10_000 {
            let cam = sample_camera(&mut rng, &ranges);
            az_min = az_min.min(cam.azimuth_deg);
            az_max = az_max.max(cam.azimuth_deg);
            el_min = el_min.min(cam.elevation_deg);
            el_max = el_max.max(cam.elevation_deg);
            assert!((0.0..360.0).contains(&cam.azimuth_deg));
            assert!((-20.0..=40.0).contains(&cam.elevation_deg));
            for t in cam.translation {
                assert!(t.abs() <= 0.1);
            }
        }
        assert!(az_min < 5.0 && az_max > 355.0, "azimuth range unexplored");
        assert!(el_min < -18.0 && el_max > 38.0, "elevation range unexplored");
    }

    #[test]
    fn same_seed_gives_identical_cameras() {
        let ranges = CameraRanges::default();
        let a: Vec<Camera> = {
            let mut rng = ChaCha8Rng::seed_from_u64(4242);
            (0..16).map(|_| sample_camera(&mut rng, &ranges)).collect()
        };
        let b: Vec<Camera> = {
            let mut rng = ChaCha8Rng::seed_from_u64(4242);
            (0..16).map(|_| sample_camera(&mut rng, &ranges)).collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn texture_symmetry_shows_up_in_renders() {
        // Two cameras a quarter turn apart see the same colors for a
        // four-fold table at mirrored pixels; spot-check via gt coords.
        let spec = ShapeSpec::sample(ShapeClass::TableRot4, 2);
        let sdf = spec.build_sdf().unwrap();
        let tex = Texture::new(spec.class, TextureMode::SymmetryInvariant, spec.seed);
        let cam = test_camera();
        let sample = render_view(&sdf, &tex, &cam, 0);
        let (h, w) = cam.image_size;
        for p in 0..h * w {
            if !sample.mask[p] {
                continue;
            }
            let c = [
                sample.gt_coords[p * 3] as f64,
                sample.gt_coords[p * 3 + 1] as f64,
                sample.gt_coords[p * 3 + 2] as f64,
            ];
            let rotated = [-c[1], c[0], c[2]];
            let a = tex.color(c);
            let b = tex.color(rotated);
            for ch in 0..3 {
                assert!((a[ch] - b[ch]).abs() <= 1e-6);
            }
        }
    }
}
