//! Training losses for symmetry-aware coordinate prediction.
//!
//! Both losses run over foreground pixels and are normalized by the pixel
//! count. The coordinate loss takes, per symmetry type, the distance from
//! the ground-truth coordinate to the closest orbit point, weighted by the
//! type probability. The spurious loss penalizes orbit samples that leave
//! the shape surface, again probability-weighted, through the worst sample.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::field::CoordinateField;
use super::oracle::ShapeOracle;
use crate::diffcore::{Buffer, NodeId, Scalar, Tape};
use crate::symmetry::SymmetryType;
use crate::{Error, Result};

const TIE_EPS: f64 = 1e-12;

/// Distance kind resolved per (pixel, type) during the forward pass.
enum ClosestInfo {
    /// Index of the best finite orbit member.
    Finite(usize),
    /// Continuous orbit: cached planar radii for the analytic form.
    Circle { coord_radius: f64, target_planar: f64 },
}

/// Probability-weighted closure distance to the ground-truth coordinates,
/// averaged over foreground pixels. Differentiable w.r.t. coordinates
/// (through the argmin member / circle form) and probabilities.
pub fn coord_loss<S: Scalar>(
    tape: &mut Tape<S>,
    field: &CoordinateField,
    gt_points: &[[f64; 3]],
) -> Result<NodeId> {
    let n = field.pixel_count();
    if gt_points.len() != n {
        return Err(Error::shape(
            "coord_loss",
            format!("{} gt points vs {} pixels", gt_points.len(), n),
        ));
    }
    if n == 0 {
        eprintln!("warning: coord_loss over empty foreground, returning 0");
        return Ok(tape.constant(Buffer::scalar(S::zero())));
    }
    let types = field.types.clone();
    let g = types.len();
    let coords = field.coords;
    let probs = field.probs;
    let gt: Vec<[f64; 3]> = gt_points.to_vec();
    let inv_n = 1.0 / n as f64;

    let (total, infos, dists) = {
        let cv = tape.value(coords).data();
        let pv = tape.value(probs).data();
        let mut total = 0.0f64;
        let mut infos = Vec::with_capacity(n * g);
        let mut dists = vec![0.0f64; n * g];
        for u in 0..n {
            for (gi, &ty) in types.iter().enumerate() {
                let base = (u * g + gi) * 3;
                let c = [cv[base].as_f64(), cv[base + 1].as_f64(), cv[base + 2].as_f64()];
                let (d, info) = closest_distance(ty, c, gt[u]);
                dists[u * g + gi] = d;
                infos.push(info);
                total += pv[u * g + gi].as_f64() * d;
            }
        }
        (total * inv_n, infos, dists)
    };

    let value = Buffer::scalar(S::from_f64(total));
    Ok(tape.custom(
        "coord_loss",
        vec![coords, probs],
        value,
        Box::new(move |ctx| {
            let go = ctx.out_grad().data()[0].as_f64();
            let cv = ctx.val(coords).data().to_vec();
            let pv = ctx.val(probs).data().to_vec();
            {
                let gp = ctx.grad_mut(probs);
                for i in 0..n * g {
                    gp[i] = gp[i] + S::from_f64(go * inv_n * dists[i]);
                }
            }
            let gc = ctx.grad_mut(coords);
            for u in 0..n {
                for (gi, &ty) in types.iter().enumerate() {
                    let i = u * g + gi;
                    let d = dists[i];
                    if d <= TIE_EPS {
                        continue;
                    }
                    let base = i * 3;
                    let c =
                        [cv[base].as_f64(), cv[base + 1].as_f64(), cv[base + 2].as_f64()];
                    let w = go * inv_n * pv[i].as_f64();
                    let dc = match &infos[i] {
                        ClosestInfo::Finite(member) => {
                            let m = &ty.members()[*member];
                            let x = crate::symmetry::apply_member(m, c);
                            let diff = [
                                (x[0] - gt[u][0]) / d,
                                (x[1] - gt[u][1]) / d,
                                (x[2] - gt[u][2]) / d,
                            ];
                            crate::symmetry::apply_member_transpose(m, diff)
                        }
                        ClosestInfo::Circle { coord_radius, target_planar } => {
                            let r = *coord_radius;
                            let rho = *target_planar;
                            let dd_dr = (r - rho) / d;
                            let dd_dz = (c[2] - gt[u][2]) / d;
                            if r > TIE_EPS {
                                [dd_dr * c[0] / r, dd_dr * c[1] / r, dd_dz]
                            } else {
                                [0.0, 0.0, dd_dz]
                            }
                        }
                    };
                    gc[base] = gc[base] + S::from_f64(w * dc[0]);
                    gc[base + 1] = gc[base + 1] + S::from_f64(w * dc[1]);
                    gc[base + 2] = gc[base + 2] + S::from_f64(w * dc[2]);
                }
            }
        }),
    ))
}

fn closest_distance(ty: SymmetryType, c: [f64; 3], target: [f64; 3]) -> (f64, ClosestInfo) {
    if ty.is_continuous() {
        let r = (c[0] * c[0] + c[1] * c[1]).sqrt();
        let rho = (target[0] * target[0] + target[1] * target[1]).sqrt();
        let dr = rho - r;
        let dz = target[2] - c[2];
        (
            (dr * dr + dz * dz).sqrt(),
            ClosestInfo::Circle { coord_radius: r, target_planar: rho },
        )
    } else {
        let mut best = f64::INFINITY;
        let mut best_member = 0;
        for (mi, m) in ty.members().iter().enumerate() {
            let x = crate::symmetry::apply_member(m, c);
            let d2 = (x[0] - target[0]).powi(2)
                + (x[1] - target[1]).powi(2)
                + (x[2] - target[2]).powi(2);
            if d2 < best {
                best = d2;
                best_member = mi;
            }
        }
        (best.sqrt(), ClosestInfo::Finite(best_member))
    }
}

/// Probability-weighted worst surface-distance over closure samples,
/// averaged over foreground pixels. Continuous orbits contribute
/// `sample_count` points at seeded uniform angles; gradient flows to the
/// argmax sample's coordinates and to the probabilities.
pub fn spurious_loss<S: Scalar>(
    tape: &mut Tape<S>,
    field: &CoordinateField,
    oracle: &ShapeOracle,
    sample_count: usize,
    angle_seed: u64,
) -> Result<NodeId> {
    if oracle.is_empty() {
        return Err(Error::Data("spurious_loss requires a non-empty oracle".into()));
    }
    if sample_count == 0 {
        return Err(Error::Config("spurious_loss sample_count must be >= 1".into()));
    }
    let n = field.pixel_count();
    if n == 0 {
        eprintln!("warning: spurious_loss over empty foreground, returning 0");
        return Ok(tape.constant(Buffer::scalar(S::zero())));
    }
    let types = field.types.clone();
    let g = types.len();
    let coords = field.coords;
    let probs = field.probs;
    let inv_n = 1.0 / n as f64;
    let oracle = oracle.clone();

    // Angles drawn once per op so forward re-evaluation is deterministic.
    let mut rng = ChaCha8Rng::seed_from_u64(angle_seed);
    let angles: Vec<f64> = (0..n * sample_count)
        .map(|_| rng.gen_range(0.0..std::f64::consts::TAU))
        .collect();

    struct WorstSample {
        /// Member index for finite types, angle index for continuous.
        which: usize,
        distance: f64,
        /// Unit vector from the nearest surface point to the sample.
        away: [f64; 3],
    }

    // Forward pass.
    let (total_value, worst) = {
        let cv = tape.value(coords).data();
        let pv = tape.value(probs).data();
        let mut total = 0.0f64;
        let mut worst: Vec<WorstSample> = Vec::with_capacity(n * g);
        for u in 0..n {
            for (gi, &ty) in types.iter().enumerate() {
                let base = (u * g + gi) * 3;
                let c = [cv[base].as_f64(), cv[base + 1].as_f64(), cv[base + 2].as_f64()];
                let mut max_d = f64::NEG_INFINITY;
                let mut max_which = 0;
                let mut max_away = [0.0; 3];
                let mut consider = |which: usize, x: [f64; 3]| {
                    let (pi, d) = oracle.nearest(x);
                    if d > max_d {
                        max_d = d;
                        max_which = which;
                        let p = oracle.points()[pi];
                        max_away = if d > 1e-9 {
                            [(x[0] - p[0]) / d, (x[1] - p[1]) / d, (x[2] - p[2]) / d]
                        } else {
                            [0.0; 3]
                        };
                    }
                };
                if ty.is_continuous() {
                    let r = (c[0] * c[0] + c[1] * c[1]).sqrt();
                    for s in 0..sample_count {
                        let a = angles[u * sample_count + s];
                        consider(s, [r * a.cos(), r * a.sin(), c[2]]);
                    }
                } else {
                    for (mi, m) in ty.members().iter().enumerate() {
                        consider(mi, crate::symmetry::apply_member(m, c));
                    }
                }
                total += pv[u * g + gi].as_f64() * max_d;
                worst.push(WorstSample { which: max_which, distance: max_d, away: max_away });
            }
        }
        (total * inv_n, worst)
    };

    let value = Buffer::scalar(S::from_f64(total_value));
    Ok(tape.custom(
        "spurious_loss",
        vec![coords, probs],
        value,
        Box::new(move |ctx| {
            let go = ctx.out_grad().data()[0].as_f64();
            let cv = ctx.val(coords).data().to_vec();
            let pv = ctx.val(probs).data().to_vec();
            {
                let gp = ctx.grad_mut(probs);
                for i in 0..n * g {
                    gp[i] = gp[i] + S::from_f64(go * inv_n * worst[i].distance);
                }
            }
            let gc = ctx.grad_mut(coords);
            for u in 0..n {
                for (gi, &ty) in types.iter().enumerate() {
                    let i = u * g + gi;
                    let ws = &worst[i];
                    if ws.distance <= 1e-9 {
                        continue;
                    }
                    let base = i * 3;
                    let c =
                        [cv[base].as_f64(), cv[base + 1].as_f64(), cv[base + 2].as_f64()];
                    let w = go * inv_n * pv[i].as_f64();
                    let dc = if ty.is_continuous() {
                        let r = (c[0] * c[0] + c[1] * c[1]).sqrt();
                        let a = angles[u * sample_count + ws.which];
                        let planar = ws.away[0] * a.cos() + ws.away[1] * a.sin();
                        if r > TIE_EPS {
                            [planar * c[0] / r, planar * c[1] / r, ws.away[2]]
                        } else {
                            [0.0, 0.0, ws.away[2]]
                        }
                    } else {
                        let m = &ty.members()[ws.which];
                        crate::symmetry::apply_member_transpose(m, ws.away)
                    };
                    gc[base] = gc[base] + S::from_f64(w * dc[0]);
                    gc[base + 1] = gc[base + 1] + S::from_f64(w * dc[1]);
                    gc[base + 2] = gc[base + 2] + S::from_f64(w * dc[2]);
                }
            }
        }),
    ))
}

/// Tape op for the surface distance itself: scalar `D(S, x)` with gradient
/// the unit vector away from the nearest surface point.
pub fn shape_distance_node<S: Scalar>(
    tape: &mut Tape<S>,
    oracle: &ShapeOracle,
    x: NodeId,
) -> Result<NodeId> {
    if tape.value(x).shape() != [3] {
        return Err(Error::shape(
            "shape_distance",
            format!("point must be [3], got {:?}", tape.value(x).shape()),
        ));
    }
    let xv = tape.value(x).data();
    let p = [xv[0].as_f64(), xv[1].as_f64(), xv[2].as_f64()];
    let (pi, d) = oracle.nearest(p);
    let np = oracle.points()[pi];
    let away = if d > 1e-9 {
        [(p[0] - np[0]) / d, (p[1] - np[1]) / d, (p[2] - np[2]) / d]
    } else {
        [0.0; 3]
    };
    Ok(tape.custom(
        "shape_distance",
        vec![x],
        Buffer::scalar(S::from_f64(d)),
        Box::new(move |ctx| {
            let go = ctx.out_grad().data()[0];
            let gx = ctx.grad_mut(x);
            for i in 0..3 {
                gx[i] = gx[i] + go * S::from_f64(away[i]);
            }
        }),
    ))
}
