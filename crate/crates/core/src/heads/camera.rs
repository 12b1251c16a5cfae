//! Pinhole camera over the canonical cube.
//!
//! The camera sits at `distance * dir(azimuth, elevation) + translation` and
//! looks at the translated origin, which is equivalent to shifting the
//! object by the negated translation. Focal length is normalized by the
//! image half-size; elevation is measured from the xy-plane toward +z.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    pub distance: f64,
    pub translation: [f64; 3],
    pub focal: f64,
    /// (height, width) of the pixel grid rays are cast through.
    pub image_size: (usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: [f64; 3],
    pub dir: [f64; 3],
}

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

impl Camera {
    pub fn center(&self) -> [f64; 3] {
        let d = self.view_dir();
        [
            self.distance * d[0] + self.translation[0],
            self.distance * d[1] + self.translation[1],
            self.distance * d[2] + self.translation[2],
        ]
    }

    fn view_dir(&self) -> [f64; 3] {
        let az = self.azimuth_deg.to_radians();
        let el = self.elevation_deg.to_radians();
        [el.cos() * az.cos(), el.cos() * az.sin(), el.sin()]
    }

    /// Orthonormal (forward, right, up) basis looking at the translated
    /// origin with world +z as up.
    pub fn basis(&self) -> ([f64; 3], [f64; 3], [f64; 3]) {
        let d = self.view_dir();
        let forward = [-d[0], -d[1], -d[2]];
        let right = normalize(cross(forward, [0.0, 0.0, 1.0]));
        let up = cross(right, forward);
        (forward, right, up)
    }

    /// Ray through the center of pixel `(row, col)`.
    pub fn ray(&self, row: usize, col: usize) -> Ray {
        let (h, w) = self.image_size;
        let ndc_x = ((col as f64 + 0.5) / w as f64) * 2.0 - 1.0;
        let ndc_y = 1.0 - ((row as f64 + 0.5) / h as f64) * 2.0;
        let (forward, right, up) = self.basis();
        let fx = ndc_x / self.focal;
        let fy = ndc_y / self.focal;
        let dir = normalize([
            forward[0] + fx * right[0] + fy * up[0],
            forward[1] + fx * right[1] + fy * up[1],
            forward[2] + fx * right[2] + fy * up[2],
        ]);
        Ray { origin: self.center(), dir }
    }

    /// Same viewpoint with a different pixel grid (for the renderer's ray
    /// grid); the normalized focal keeps the field of view unchanged.
    pub fn with_image_size(&self, height: usize, width: usize) -> Camera {
        Camera { image_size: (height, width), ..*self }
    }
}

/// Slab intersection of a ray with an axis-aligned cube centred at `center`
/// with half extent `half`. Returns `(t_enter, t_exit)`; a miss leaves
/// `t_enter > t_exit`.
pub fn intersect_cube(ray: &Ray, center: [f64; 3], half: f64) -> (f64, f64) {
    let mut t_enter = f64::NEG_INFINITY;
    let mut t_exit = f64::INFINITY;
    for d in 0..3 {
        let lo = center[d] - half;
        let hi = center[d] + half;
        if ray.dir[d].abs() < 1e-12 {
            if ray.origin[d] < lo || ray.origin[d] > hi {
                return (1.0, -1.0);
            }
            continue;
        }
        let inv = 1.0 / ray.dir[d];
        let (t0, t1) = {
            let a = (lo - ray.origin[d]) * inv;
            let b = (hi - ray.origin[d]) * inv;
            if a <= b {
                (a, b)
            } else {
                (b, a)
            }
        };
        t_enter = t_enter.max(t0);
        t_exit = t_exit.min(t1);
    }
    (t_enter, t_exit)
}

/// Ray through a pixel plus its intersection interval with the canonical
/// cube; misses leave `t_enter > t_exit`.
pub fn cast_ray(cam: &Camera, row: usize, col: usize) -> (Ray, f64, f64) {
    let ray = cam.ray(row, col);
    let (t_enter, t_exit) = intersect_cube(&ray, [0.0; 3], 0.5);
    (ray, t_enter, t_exit)
}
