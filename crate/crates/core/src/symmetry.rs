//! Global symmetry types over the canonical cube and their closure-set
//! geometry.
//!
//! Every symmetry acts about the origin: rotations about the z-axis,
//! reflection across the xz-plane (`y -> -y`). A point's closure set is its
//! full orbit under the symmetry; continuous rotation yields a horizontal
//! circle instead of a finite set.

use crate::diffcore::Scalar;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Coordinate dedup tolerance for finite closure sets. On-axis points whose
/// orbit members coincide must not double-count loss or splat mass.
pub const CLOSURE_DEDUP_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SymmetryType {
    Identity,
    ReflectY,
    #[serde(rename = "rot2_z")]
    Rot2Z,
    #[serde(rename = "rot4_z")]
    Rot4Z,
    #[serde(rename = "rotcont_z")]
    RotContZ,
}

impl SymmetryType {
    pub const ALL: [SymmetryType; 5] = [
        SymmetryType::Identity,
        SymmetryType::ReflectY,
        SymmetryType::Rot2Z,
        SymmetryType::Rot4Z,
        SymmetryType::RotContZ,
    ];

    /// Lowercase wire name used in configs and dataset headers.
    pub fn name(self) -> &'static str {
        match self {
            SymmetryType::Identity => "identity",
            SymmetryType::ReflectY => "reflect_y",
            SymmetryType::Rot2Z => "rot2_z",
            SymmetryType::Rot4Z => "rot4_z",
            SymmetryType::RotContZ => "rotcont_z",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|t| t.name() == name)
    }

    /// Linear maps generating the orbit, for the finite types.
    /// Row-major 3x3 matrices; `RotContZ` has no finite generator list.
    pub fn members(self) -> &'static [[[f64; 3]; 3]] {
        const I: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        const REFL_Y: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 1.0]];
        const ROT_90: [[f64; 3]; 3] = [[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]];
        const ROT_180: [[f64; 3]; 3] = [[-1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 1.0]];
        const ROT_270: [[f64; 3]; 3] = [[0.0, 1.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 0.0, 1.0]];
        match self {
            SymmetryType::Identity => &[I],
            SymmetryType::ReflectY => &[I, REFL_Y],
            SymmetryType::Rot2Z => &[I, ROT_180],
            SymmetryType::Rot4Z => &[I, ROT_90, ROT_180, ROT_270],
            SymmetryType::RotContZ => &[],
        }
    }

    pub fn is_continuous(self) -> bool {
        matches!(self, SymmetryType::RotContZ)
    }
}

/// Applies a row-major 3x3 matrix to a point.
pub fn apply_member<S: Scalar>(m: &[[f64; 3]; 3], p: [S; 3]) -> [S; 3] {
    let mut out = [S::zero(); 3];
    for (r, row) in m.iter().enumerate() {
        let mut acc = S::zero();
        for (c, &v) in row.iter().enumerate() {
            acc = acc + S::from_f64(v) * p[c];
        }
        out[r] = acc;
    }
    out
}

/// Applies the transpose of a row-major 3x3 matrix (the adjoint of
/// [`apply_member`]).
pub fn apply_member_transpose<S: Scalar>(m: &[[f64; 3]; 3], p: [S; 3]) -> [S; 3] {
    let mut out = [S::zero(); 3];
    for (r, row) in m.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            out[c] = out[c] + S::from_f64(v) * p[r];
        }
    }
    out
}

/// Orbit of a point under one symmetry type.
#[derive(Debug, Clone, PartialEq)]
pub enum ClosureSet<S: Scalar> {
    Finite(Vec<[S; 3]>),
    Circle { radius: S, height: S },
}

/// Full orbit of `x` under `g`; finite members are deduplicated at
/// [`CLOSURE_DEDUP_TOL`] so degenerate on-axis orbits collapse.
pub fn closure<S: Scalar>(g: SymmetryType, x: [S; 3]) -> ClosureSet<S> {
    if g.is_continuous() {
        let radius = (x[0] * x[0] + x[1] * x[1]).sqrt();
        return ClosureSet::Circle { radius, height: x[2] };
    }
    let mut points: Vec<[S; 3]> = Vec::with_capacity(4);
    let tol = S::from_f64(CLOSURE_DEDUP_TOL);
    for m in g.members() {
        let p = apply_member(m, x);
        let dup = points.iter().any(|q| {
            (q[0] - p[0]).abs() <= tol && (q[1] - p[1]).abs() <= tol && (q[2] - p[2]).abs() <= tol
        });
        if !dup {
            points.push(p);
        }
    }
    ClosureSet::Finite(points)
}

/// Concrete point samples of a closure set. Finite sets return every member
/// verbatim (`m` ignored); circles return `m` points at independent uniform
/// angles.
pub fn closure_samples<S: Scalar, R: Rng>(set: &ClosureSet<S>, m: usize, rng: &mut R) -> Vec<[S; 3]> {
    match set {
        ClosureSet::Finite(points) => points.clone(),
        ClosureSet::Circle { radius, height } => (0..m)
            .map(|_| {
                let angle = rng.gen_range(0.0..std::f64::consts::TAU);
                [
                    *radius * S::from_f64(angle.cos()),
                    *radius * S::from_f64(angle.sin()),
                    *height,
                ]
            })
            .collect(),
    }
}

/// Nearest point of `closure(g, seed)` to `target`, with its distance.
///
/// Finite orbits are enumerated (ties broken by lowest member index). The
/// circle case is analytic: the argmin sits at the angle of the target's
/// xy-projection, or angle 0 when the target lies on the z-axis.
pub fn closest_on_closure<S: Scalar>(
    g: SymmetryType,
    seed: [S; 3],
    target: [S; 3],
) -> ([S; 3], S) {
    match closure(g, seed) {
        ClosureSet::Finite(points) => {
            let mut best = points[0];
            let mut best_d2 = dist2(points[0], target);
            for &p in points.iter().skip(1) {
                let d2 = dist2(p, target);
                if d2 < best_d2 {
                    best_d2 = d2;
                    best = p;
                }
            }
            (best, best_d2.sqrt())
        }
        ClosureSet::Circle { radius, height } => {
            let planar = (target[0] * target[0] + target[1] * target[1]).sqrt();
            let point = if planar > S::zero() {
                [
                    radius * target[0] / planar,
                    radius * target[1] / planar,
                    height,
                ]
            } else {
                [radius, S::zero(), height]
            };
            let dr = planar - radius;
            let dz = target[2] - height;
            (point, (dr * dr + dz * dz).sqrt())
        }
    }
}

/// Minimum distance between two closure sets (used for symmetry-aware
/// correspondence lookup). Coaxial circles reduce to the radius/height gap.
pub fn set_distance<S: Scalar>(a: &ClosureSet<S>, b: &ClosureSet<S>) -> S {
    match (a, b) {
        (ClosureSet::Finite(pa), ClosureSet::Finite(pb)) => {
            let mut best = S::infinity();
            for &p in pa {
                for &q in pb {
                    let d = dist2(p, q).sqrt();
                    if d < best {
                        best = d;
                    }
                }
            }
            best
        }
        (ClosureSet::Finite(points), ClosureSet::Circle { .. }) => {
            circle_to_points(b, points)
        }
        (ClosureSet::Circle { .. }, ClosureSet::Finite(points)) => {
            circle_to_points(a, points)
        }
        (
            ClosureSet::Circle { radius: r1, height: h1 },
            ClosureSet::Circle { radius: r2, height: h2 },
        ) => {
            let dr = *r1 - *r2;
            let dz = *h1 - *h2;
            (dr * dr + dz * dz).sqrt()
        }
    }
}

fn circle_to_points<S: Scalar>(circle: &ClosureSet<S>, points: &[[S; 3]]) -> S {
    let ClosureSet::Circle { radius, height } = circle else {
        unreachable!()
    };
    let mut best = S::infinity();
    for &p in points {
        let planar = (p[0] * p[0] + p[1] * p[1]).sqrt();
        let dr = planar - *radius;
        let dz = p[2] - *height;
        let d = (dr * dr + dz * dz).sqrt();
        if d < best {
            best = d;
        }
    }
    best
}

fn dist2<S: Scalar>(a: [S; 3], b: [S; 3]) -> S {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Which symmetry types a model predicts, plus the sample budget for
/// continuous orbits. `active_set = [Identity]` is the no-symmetry ablation.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SymmetryConfig {
    pub active_set: Vec<SymmetryType>,
    /// Samples drawn per continuous closure.
    pub sample_count: usize,
    pub rng_seed: u64,
}

impl SymmetryConfig {
    pub fn full(rng_seed: u64) -> Self {
        SymmetryConfig {
            active_set: SymmetryType::ALL.to_vec(),
            sample_count: 8,
            rng_seed,
        }
    }

    /// Single-coordinate-per-pixel ablation.
    pub fn identity_only(rng_seed: u64) -> Self {
        SymmetryConfig {
            active_set: vec![SymmetryType::Identity],
            sample_count: 8,
            rng_seed,
        }
    }

    pub fn validate(&self) -> crate::Result<()> {
        if self.active_set.is_empty() {
            return Err(crate::Error::Config("symmetry active_set is empty".into()));
        }
        if self.sample_count == 0 {
            return Err(crate::Error::Config(
                "symmetry sample_count must be >= 1".into(),
            ));
        }
        let mut seen = Vec::new();
        for t in &self.active_set {
            if seen.contains(t) {
                return Err(crate::Error::Config(format!(
                    "duplicate symmetry type {} in active_set",
                    t.name()
                )));
            }
            seen.push(*t);
        }
        Ok(())
    }

    pub fn type_count(&self) -> usize {
        self.active_set.len()
    }
}
