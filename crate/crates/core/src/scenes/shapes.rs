//! The five procedural shape classes and their ground-truth products.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::sdf::{Primitive, ShapeSdf};
use crate::canonical::ShapeOracle;
use crate::symmetry::SymmetryType;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeClass {
    TableRot4,
    BenchRot2,
    BottleRotcont,
    PlaneReflecty,
    WedgeIdentity,
}

impl ShapeClass {
    pub const ALL: [ShapeClass; 5] = [
        ShapeClass::TableRot4,
        ShapeClass::BenchRot2,
        ShapeClass::BottleRotcont,
        ShapeClass::PlaneReflecty,
        ShapeClass::WedgeIdentity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShapeClass::TableRot4 => "table_rot4",
            ShapeClass::BenchRot2 => "bench_rot2",
            ShapeClass::BottleRotcont => "bottle_rotcont",
            ShapeClass::PlaneReflecty => "plane_reflecty",
            ShapeClass::WedgeIdentity => "wedge_identity",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|c| c.name() == name)
    }

    /// The global symmetry each class is built to satisfy.
    pub fn nominal_symmetry(self) -> SymmetryType {
        match self {
            ShapeClass::TableRot4 => SymmetryType::Rot4Z,
            ShapeClass::BenchRot2 => SymmetryType::Rot2Z,
            ShapeClass::BottleRotcont => SymmetryType::RotContZ,
            ShapeClass::PlaneReflecty => SymmetryType::ReflectY,
            ShapeClass::WedgeIdentity => SymmetryType::Identity,
        }
    }
}

/// Class plus its sampled dimension vector and texture seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeSpec {
    pub class: ShapeClass,
    pub params: Vec<f64>,
    pub seed: u64,
}

impl ShapeSpec {
    /// Draws class-specific dimensions from their documented ranges.
    pub fn sample(class: ShapeClass, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = match class {
            ShapeClass::TableRot4 => vec![
                rng.gen_range(0.30..0.45), // top half width (square)
                rng.gen_range(0.05..0.09), // top half thickness
                rng.gen_range(0.06..0.09), // leg half width (square)
                rng.gen_range(0.25..0.42), // leg half height
                rng.gen_range(0.01..0.05), // leg inset from the top edge
            ],
            ShapeClass::BenchRot2 => vec![
                rng.gen_range(0.42..0.58), // top half length (x)
                rng.gen_range(0.14..0.20), // top half depth (y)
                rng.gen_range(0.06..0.09), // top half thickness
                rng.gen_range(0.07..0.10), // leg half width (x)
                rng.gen_range(0.06..0.09), // leg half depth (y)
                rng.gen_range(0.15..0.26), // leg half height
            ],
            ShapeClass::BottleRotcont => vec![
                rng.gen_range(0.20..0.30), // body radius
                rng.gen_range(0.28..0.42), // body half height
                rng.gen_range(0.09..0.14), // neck radius
                rng.gen_range(0.10..0.20), // neck half height
            ],
            ShapeClass::PlaneReflecty => vec![
                rng.gen_range(0.42..0.55), // fuselage half length (x)
                rng.gen_range(0.09..0.12), // fuselage half width (y)
                rng.gen_range(0.09..0.12), // fuselage half height (z)
                rng.gen_range(0.14..0.19), // wing half chord (x)
                rng.gen_range(0.42..0.55), // wing half span (y)
                rng.gen_range(0.07..0.09), // wing half thickness
                rng.gen_range(-0.08..0.10), // wing x offset
                rng.gen_range(0.08..0.11), // fin half chord (x)
                rng.gen_range(0.10..0.16), // fin half height (z)
            ],
            ShapeClass::WedgeIdentity => vec![
                rng.gen_range(0.30..0.45), // base half x
                rng.gen_range(0.22..0.34), // base half y
                rng.gen_range(0.07..0.12), // base half z
                rng.gen_range(0.10..0.18), // block half x
                rng.gen_range(0.08..0.15), // block half y
                rng.gen_range(0.10..0.20), // block half z
                rng.gen_range(0.05..0.10), // post half extent
            ],
        };
        ShapeSpec { class, params, seed }
    }

    pub fn build_sdf(&self) -> Result<ShapeSdf> {
        let p = &self.params;
        let need = |n: usize| -> Result<()> {
            if p.len() != n {
                Err(Error::Config(format!(
                    "{} expects {} params, got {}",
                    self.class.name(),
                    n,
                    p.len()
                )))
            } else {
                Ok(())
            }
        };
        let prims = match self.class {
            ShapeClass::TableRot4 => {
                need(5)?;
                let (a, t, lw, lh, inset) = (p[0], p[1], p[2], p[3], p[4]);
                let pos = a - lw - inset;
                let mut prims = vec![Primitive::Box3 {
                    center: [0.0, 0.0, 2.0 * lh + t],
                    half: [a, a, t],
                }];
                for (sx, sy) in [(1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)] {
                    prims.push(Primitive::Box3 {
                        center: [sx * pos, sy * pos, lh],
                        half: [lw, lw, lh],
                    });
                }
                prims
            }
            ShapeClass::BenchRot2 => {
                need(6)?;
                let (ax, ay, t, lx, ly, lh) = (p[0], p[1], p[2], p[3], p[4], p[5]);
                let (px, py) = (ax - lx - 0.02, ay - ly);
                let mut prims = vec![Primitive::Box3 {
                    center: [0.0, 0.0, 2.0 * lh + t],
                    half: [ax, ay, t],
                }];
                for (sx, sy) in [(1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)] {
                    prims.push(Primitive::Box3 {
                        center: [sx * px, sy * py, lh],
                        half: [lx, ly, lh],
                    });
                }
                prims
            }
            ShapeClass::BottleRotcont => {
                need(4)?;
                let (rb, hb, rn, hn) = (p[0], p[1], p[2], p[3]);
                vec![
                    Primitive::CylinderZ {
                        center: [0.0, 0.0, hb],
                        radius: rb,
                        half_height: hb,
                    },
                    Primitive::CylinderZ {
                        center: [0.0, 0.0, 2.0 * hb + hn],
                        radius: rn,
                        half_height: hn,
                    },
                ]
            }
            ShapeClass::PlaneReflecty => {
                need(9)?;
                let (fx, fy, fz) = (p[0], p[1], p[2]);
                let (wx, wy, wz, wox) = (p[3], p[4], p[5], p[6]);
                let (sx, sz) = (p[7], p[8]);
                vec![
                    Primitive::Box3 { center: [0.0, 0.0, 0.0], half: [fx, fy, fz] },
                    Primitive::Box3 { center: [wox, 0.0, -fz * 0.2], half: [wx, wy, wz] },
                    Primitive::Box3 {
                        center: [-fx + sx, 0.0, fz + sz],
                        half: [sx, 0.07, sz],
                    },
                ]
            }
            ShapeClass::WedgeIdentity => {
                need(7)?;
                let (bx, by, bz) = (p[0], p[1], p[2]);
                let (cx, cy, cz) = (p[3], p[4], p[5]);
                let ps = p[6];
                vec![
                    Primitive::Box3 { center: [0.0, 0.0, bz], half: [bx, by, bz] },
                    Primitive::Box3 {
                        center: [bx - cx, by - cy, 2.0 * bz + cz],
                        half: [cx, cy, cz],
                    },
                    Primitive::Box3 {
                        center: [-bx + ps, -by + ps, 2.0 * bz + ps],
                        half: [ps, ps, ps],
                    },
                ]
            }
        };
        ShapeSdf::new(prims)
    }
}

/// Binary voxel occupancy sampled at cell centers, bit-packable.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyData {
    pub cells: usize,
    pub occupied: Vec<bool>,
}

impl OccupancyData {
    pub fn from_sdf(sdf: &ShapeSdf, cells: usize) -> Self {
        let spec = crate::voxelgrid::GridSpec::new(cells, 1).expect("cells > 0");
        let mut occupied = vec![false; spec.cell_count()];
        for (idx, o) in occupied.iter_mut().enumerate() {
            let (i, j, k) = spec.cell_coords(idx);
            let p = [spec.center(i), spec.center(j), spec.center(k)];
            *o = sdf.distance(p) <= 0.0;
        }
        OccupancyData { cells, occupied }
    }

    pub fn count(&self) -> usize {
        self.occupied.iter().filter(|&&o| o).count()
    }

    pub fn pack_bits(&self) -> Vec<u8> {
        let mut bytes = vec![0u8; self.occupied.len().div_ceil(8)];
        for (i, &o) in self.occupied.iter().enumerate() {
            if o {
                bytes[i / 8] |= 1 << (i % 8);
            }
        }
        bytes
    }

    /// True when the voxel containing `p`, or one of its face neighbors,
    /// is occupied.
    pub fn covers_point(&self, p: [f64; 3]) -> bool {
        let c = self.cells;
        let spec = crate::voxelgrid::GridSpec::new(c, 1).expect("cells > 0");
        let cell_of =
            |v: f64| ((((v + 0.5) * c as f64).floor()).max(0.0) as usize).min(c - 1);
        let (i, j, k) = (cell_of(p[0]), cell_of(p[1]), cell_of(p[2]));
        if self.occupied[spec.cell_index(i, j, k)] {
            return true;
        }
        let c = c as i64;
        for (di, dj, dk) in
            [(-1i64, 0i64, 0i64), (1, 0, 0), (0, -1, 0), (0, 1, 0), (0, 0, -1), (0, 0, 1)]
        {
            let (ni, nj, nk) = (i as i64 + di, j as i64 + dj, k as i64 + dk);
            if (0..c).contains(&ni)
                && (0..c).contains(&nj)
                && (0..c).contains(&nk)
                && self.occupied[spec.cell_index(ni as usize, nj as usize, nk as usize)]
            {
                return true;
            }
        }
        false
    }

    pub fn unpack_bits(cells: usize, bytes: &[u8]) -> Result<Self> {
        let n = cells * cells * cells;
        if bytes.len() != n.div_ceil(8) {
            return Err(Error::Data(format!(
                "occupancy byte count {} does not match {} cells",
                bytes.len(),
                n
            )));
        }
        let occupied = (0..n).map(|i| bytes[i / 8] & (1 << (i % 8)) != 0).collect();
        Ok(OccupancyData { cells, occupied })
    }
}

/// Rejection-samples near-surface points and projects them onto the surface
/// along the SDF gradient until `|sdf| <= 1e-3`.
pub fn sample_surface_oracle(sdf: &ShapeSdf, count: usize, seed: u64) -> Result<ShapeOracle> {
    sample_surface_oracle_filtered(sdf, count, seed, |_| true)
}

/// Like [`sample_surface_oracle`] with an acceptance predicate applied after
/// projection (used to keep oracle points consistent with the voxelization).
pub fn sample_surface_oracle_filtered(
    sdf: &ShapeSdf,
    count: usize,
    seed: u64,
    accept: impl Fn([f64; 3]) -> bool,
) -> Result<ShapeOracle> {
    const PROJECTION_TOL: f64 = 1e-3;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let he = sdf.canonical_half_extents();
    let band = 0.08;
    let mut points = Vec::with_capacity(count);
    let mut attempts = 0usize;
    let limit = count * 4000;
    while points.len() < count {
        attempts += 1;
        if attempts > limit {
            return Err(Error::Data(format!(
                "surface sampling stalled after {attempts} attempts; the \
                 occupancy grid is likely too coarse to resolve this shape \
                 (use at least 16 cells per axis)"
            )));
        }
        let mut p = [
            rng.gen_range(-he[0] - band..he[0] + band),
            rng.gen_range(-he[1] - band..he[1] + band),
            rng.gen_range(-he[2] - band..he[2] + band),
        ];
        let d0 = sdf.distance(p);
        if d0.abs() > band {
            continue;
        }
        let mut ok = false;
        for _ in 0..16 {
            let d = sdf.distance(p);
            if d.abs() <= PROJECTION_TOL {
                ok = true;
                break;
            }
            let g = sdf.gradient(p);
            let n2 = g[0] * g[0] + g[1] * g[1] + g[2] * g[2];
            if n2 < 1e-12 {
                break;
            }
            for d3 in 0..3 {
                p[d3] -= d * g[d3] / n2;
            }
        }
        if !ok {
            continue;
        }
        if p.iter().any(|v| v.abs() > 0.5) {
            continue;
        }
        if !accept(p) {
            continue;
        }
        points.push(p);
    }
    ShapeOracle::new(points)
}

/// Everything derivable from a shape spec: the distance field, the surface
/// oracle, and the voxel occupancy.
/// Seed salt separating oracle sampling from other per-instance streams.
const ORACLE_SEED_SALT: u64 = 0x5eed_0c1e;

pub fn build_shape(
    spec: &ShapeSpec,
    oracle_points: usize,
    occupancy_cells: usize,
) -> Result<(ShapeSdf, ShapeOracle, OccupancyData)> {
    let sdf = spec.build_sdf()?;
    let occupancy = OccupancyData::from_sdf(&sdf, occupancy_cells);
    // Center-sampled voxelization can miss surface points that graze voxel
    // corners; those carry no value for surface-distance supervision, so the
    // oracle skips them and stays consistent with the occupancy grid.
    let oracle = sample_surface_oracle_filtered(
        &sdf,
        oracle_points,
        spec.seed ^ ORACLE_SEED_SALT,
        |p| occupancy.covers_point(p),
    )?;
    Ok((sdf, oracle, occupancy))
}
