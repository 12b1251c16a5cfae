//! Analytic signed distance fields built from box/cylinder primitives.

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Primitive {
    /// Axis-aligned box: center and half extents.
    Box3 { center: [f64; 3], half: [f64; 3] },
    /// z-aligned cylinder: center, radius, half height.
    CylinderZ { center: [f64; 3], radius: f64, half_height: f64 },
}

impl Primitive {
    pub fn distance(&self, p: [f64; 3]) -> f64 {
        match *self {
            Primitive::Box3 { center, half } => {
                let q = [
                    (p[0] - center[0]).abs() - half[0],
                    (p[1] - center[1]).abs() - half[1],
                    (p[2] - center[2]).abs() - half[2],
                ];
                let outside = (q[0].max(0.0).powi(2)
                    + q[1].max(0.0).powi(2)
                    + q[2].max(0.0).powi(2))
                .sqrt();
                let inside = q[0].max(q[1]).max(q[2]).min(0.0);
                outside + inside
            }
            Primitive::CylinderZ { center, radius, half_height } => {
                let dxy = ((p[0] - center[0]).powi(2) + (p[1] - center[1]).powi(2)).sqrt()
                    - radius;
                let dz = (p[2] - center[2]).abs() - half_height;
                let outside = (dxy.max(0.0).powi(2) + dz.max(0.0).powi(2)).sqrt();
                let inside = dxy.max(dz).min(0.0);
                outside + inside
            }
        }
    }

    /// Tight axis-aligned bounding box as (min, max).
    pub fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        match *self {
            Primitive::Box3 { center, half } => (
                [center[0] - half[0], center[1] - half[1], center[2] - half[2]],
                [center[0] + half[0], center[1] + half[1], center[2] + half[2]],
            ),
            Primitive::CylinderZ { center, radius, half_height } => (
                [center[0] - radius, center[1] - radius, center[2] - half_height],
                [center[0] + radius, center[1] + radius, center[2] + half_height],
            ),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Primitive::Box3 { half, .. } => half.iter().all(|&h| h > 0.0),
            Primitive::CylinderZ { radius, half_height, .. } => {
                radius > 0.0 && half_height > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config("degenerate primitive extents".into()))
        }
    }
}

/// Min-union of primitives, rigidly centred and uniformly scaled so the
/// tight bounding-box diagonal is 1 (the shape then fits the canonical
/// cube). Distances are exact up to the union's usual interior bound.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeSdf {
    prims: Vec<Primitive>,
    /// Raw-frame bounding box center (subtracted) and the diagonal scale.
    raw_center: [f64; 3],
    scale: f64,
}

impl ShapeSdf {
    pub fn new(prims: Vec<Primitive>) -> Result<Self> {
        if prims.is_empty() {
            return Err(Error::Config("shape needs at least one primitive".into()));
        }
        for p in &prims {
            p.validate()?;
        }
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in &prims {
            let (pl, ph) = p.bounds();
            for d in 0..3 {
                lo[d] = lo[d].min(pl[d]);
                hi[d] = hi[d].max(ph[d]);
            }
        }
        let diag =
            ((hi[0] - lo[0]).powi(2) + (hi[1] - lo[1]).powi(2) + (hi[2] - lo[2]).powi(2)).sqrt();
        if diag <= 0.0 {
            return Err(Error::Config("shape bounding box is degenerate".into()));
        }
        let raw_center = [
            0.5 * (lo[0] + hi[0]),
            0.5 * (lo[1] + hi[1]),
            0.5 * (lo[2] + hi[2]),
        ];
        Ok(ShapeSdf { prims, raw_center, scale: 1.0 / diag })
    }

    /// Signed distance in the canonical frame.
    pub fn distance(&self, p: [f64; 3]) -> f64 {
        let q = [
            p[0] / self.scale + self.raw_center[0],
            p[1] / self.scale + self.raw_center[1],
            p[2] / self.scale + self.raw_center[2],
        ];
        let raw = self
            .prims
            .iter()
            .map(|prim| prim.distance(q))
            .fold(f64::INFINITY, f64::min);
        raw * self.scale
    }

    /// Central-difference surface normal estimate.
    pub fn gradient(&self, p: [f64; 3]) -> [f64; 3] {
        const H: f64 = 1e-5;
        let mut g = [0.0; 3];
        for d in 0..3 {
            let mut a = p;
            let mut b = p;
            a[d] += H;
            b[d] -= H;
            g[d] = (self.distance(a) - self.distance(b)) / (2.0 * H);
        }
        g
    }

    /// Canonical-frame bounding box half extents (diagonal 1 by
    /// construction).
    pub fn canonical_half_extents(&self) -> [f64; 3] {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in &self.prims {
            let (pl, ph) = p.bounds();
            for d in 0..3 {
                lo[d] = lo[d].min(pl[d]);
                hi[d] = hi[d].max(ph[d]);
            }
        }
        [
            0.5 * (hi[0] - lo[0]) * self.scale,
            0.5 * (hi[1] - lo[1]) * self.scale,
            0.5 * (hi[2] - lo[2]) * self.scale,
        ]
    }
}
