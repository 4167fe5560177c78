//! Seeded procedural hand template with MANO-compatible dimensions.
//!
//! The right hand is built with the wrist at the origin, fingers along `+y`
//! and the thumb on the `+x` side. Vertices are scattered on capsule-like
//! cylinders around the bones; the left template is the exact mirror.

use nalgebra::{Matrix4, Vector3, Vector4};
use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{HandTemplate, Side, NUM_JOINTS, NUM_POSED_JOINTS, PARENTS, SHAPE_DIM};
use crate::error::{invalid, Result};

struct FingerSpec {
    base: [f64; 3],
    angle: f64,
    lift: f64,
    lengths: [f64; 3],
    radius: f64,
}

// thumb, index, middle, ring, pinky
const FINGERS: [FingerSpec; 5] = [
    FingerSpec { base: [0.022, 0.018, 0.006], angle: 0.85, lift: 0.25, lengths: [0.036, 0.031, 0.026], radius: 0.0105 },
    FingerSpec { base: [0.024, 0.082, 0.0], angle: 0.10, lift: 0.0, lengths: [0.040, 0.025, 0.021], radius: 0.0090 },
    FingerSpec { base: [0.004, 0.086, 0.0], angle: 0.0, lift: 0.0, lengths: [0.044, 0.028, 0.023], radius: 0.0093 },
    FingerSpec { base: [-0.015, 0.081, 0.0], angle: -0.10, lift: 0.0, lengths: [0.041, 0.026, 0.022], radius: 0.0088 },
    FingerSpec { base: [-0.031, 0.072, 0.0], angle: -0.22, lift: 0.0, lengths: [0.032, 0.020, 0.019], radius: 0.0078 },
];

const PALM_RADIUS: f64 = 0.012;
const REGRESSOR_NEIGHBORS: usize = 8;

struct Segment {
    start: Vector3<f64>,
    end: Vector3<f64>,
    radius: f64,
    owner: usize,
    /// Joint blended in near the segment's `blend_at_start` end.
    blend_joint: Option<usize>,
    blend_at_start: bool,
    finger: Option<usize>,
}

struct Layout {
    joints: Vec<Vector3<f64>>,
    directions: [Vector3<f64>; 5],
    bases: [Vector3<f64>; 5],
}

fn layout(rng: &mut ChaCha8Rng) -> Layout {
    let mut joints = vec![Vector3::zeros(); NUM_JOINTS];
    let mut directions = [Vector3::zeros(); 5];
    let mut bases = [Vector3::zeros(); 5];
    for (f, spec) in FINGERS.iter().enumerate() {
        let jitter = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ) * 0.002;
        let base = Vector3::from(spec.base) + jitter;
        let dir = Vector3::new(spec.angle.sin(), spec.angle.cos(), spec.lift).normalize();
        let mut p = base;
        joints[3 * f + 1] = p;
        for (s, len) in spec.lengths.iter().enumerate() {
            p += dir * (len * (1.0 + 0.04 * rng.random_range(-1.0..1.0)));
            if s < 2 {
                joints[3 * f + 2 + s] = p;
            } else {
                joints[16 + f] = p;
            }
        }
        directions[f] = dir;
        bases[f] = base;
    }
    Layout { joints, directions, bases }
}

fn segments(l: &Layout) -> Vec<Segment> {
    let mut out = Vec::with_capacity(20);
    for (f, spec) in FINGERS.iter().enumerate() {
        let first = 3 * f + 1;
        out.push(Segment {
            start: l.joints[0],
            end: l.joints[first],
            radius: if f == 0 { spec.radius * 1.3 } else { PALM_RADIUS },
            owner: 0,
            blend_joint: Some(first),
            blend_at_start: false,
            finger: None,
        });
        for s in 0..3 {
            let j = first + s;
            let next = if s < 2 { j + 1 } else { 16 + f };
            out.push(Segment {
                start: l.joints[j],
                end: l.joints[next],
                radius: spec.radius * (1.0 - 0.08 * s as f64),
                owner: j,
                blend_joint: Some(PARENTS[j] as usize),
                blend_at_start: true,
                finger: Some(f),
            });
        }
    }
    out
}

/// Largest-remainder split of `n` items proportional to `weights`, at least
/// one each when `n` allows.
fn allocate(n: usize, weights: &[f64]) -> Vec<usize> {
    let m = weights.len();
    let floor_each = usize::from(n >= m);
    let rest = n - floor_each * m;
    let total: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| w / total * rest as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize + floor_each).collect();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let mut missing = n - counts.iter().sum::<usize>();
    for &i in order.iter().cycle() {
        if missing == 0 {
            break;
        }
        counts[i] += 1;
        missing -= 1;
    }
    counts
}

fn orthonormal_frame(axis: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let helper = if axis.z.abs() < 0.9 { Vector3::z() } else { Vector3::x() };
    let u = axis.cross(&helper).normalize();
    let w = axis.cross(&u).normalize();
    (u, w)
}

fn smooth_blend(x: f64) -> f64 {
    x * x * (3.0 - 2.0 * x)
}

/// Builds the right-hand template. Deterministic in `(seed, n_vertices)`.
pub fn build_template(seed: u64, n_vertices: usize) -> Result<HandTemplate> {
    if n_vertices < NUM_JOINTS {
        return Err(invalid(format!(
            "template needs at least {NUM_JOINTS} vertices, got {n_vertices}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lay = layout(&mut rng);
    let segs = segments(&lay);
    let weights: Vec<f64> = segs.iter().map(|s| (s.end - s.start).norm() * s.radius).collect();
    let counts = allocate(n_vertices, &weights);

    let mut vertices = Array2::zeros((n_vertices, 3));
    let mut skin = Array2::zeros((n_vertices, NUM_POSED_JOINTS));
    let mut shape = Array3::zeros((n_vertices, 3, SHAPE_DIM));

    let rbf: Vec<(Vector3<f64>, [Vector3<f64>; SHAPE_DIM - 4])> = (0..4)
        .map(|_| {
            let center = lay.joints[rng.random_range(0..NUM_JOINTS)];
            let dirs = std::array::from_fn(|_| {
                Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ) * 0.0015
            });
            (center, dirs)
        })
        .collect();

    let mut v = 0;
    for (seg, &count) in segs.iter().zip(&counts) {
        let axis = seg.end - seg.start;
        let len = axis.norm();
        let dir = axis / len;
        let (u, w) = orthonormal_frame(&dir);
        for _ in 0..count {
            let t: f64 = rng.random_range(0.0..1.0);
            let psi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let on_axis = seg.start + axis * t;
            let radial = (u * psi.cos() + w * psi.sin()) * seg.radius;
            let p = on_axis + radial;
            for c in 0..3 {
                vertices[[v, c]] = p[c];
            }

            let blend = match (seg.blend_joint, seg.blend_at_start) {
                (Some(j), true) if t < 0.25 => Some((j, 0.5 * smooth_blend(1.0 - t / 0.25))),
                (Some(j), false) if t > 0.75 => Some((j, 0.5 * smooth_blend((t - 0.75) / 0.25))),
                _ => None,
            };
            match blend {
                Some((j, wb)) => {
                    skin[[v, j]] = wb;
                    skin[[v, seg.owner]] = 1.0 - wb;
                }
                None => skin[[v, seg.owner]] = 1.0,
            }

            let mut dirs = [Vector3::zeros(); SHAPE_DIM];
            dirs[0] = (p - lay.joints[0]) * 0.02;
            if let Some(f) = seg.finger {
                let along = (p - lay.bases[f]).dot(&lay.directions[f]);
                dirs[1] = lay.directions[f] * (0.08 * along);
            }
            dirs[2] = Vector3::new(0.03 * p.x, 0.0, 0.0);
            dirs[3] = radial * 0.06;
            for (center, field) in &rbf {
                let g = (-(p - center).norm_squared() / (2.0 * 0.03 * 0.03)).exp();
                for (k, d) in field.iter().enumerate() {
                    dirs[4 + k] += d * g;
                }
            }
            for (k, d) in dirs.iter().enumerate() {
                for c in 0..3 {
                    shape[[v, c, k]] = d[c];
                }
            }
            v += 1;
        }
    }
    debug_assert_eq!(v, n_vertices);

    let mut joints0 = Array2::zeros((NUM_JOINTS, 3));
    for (j, p) in lay.joints.iter().enumerate() {
        for c in 0..3 {
            joints0[[j, c]] = p[c];
        }
    }
    let joint_regressor = fit_regressor(&vertices, &lay.joints)?;

    Ok(HandTemplate {
        side: Side::Right,
        vertices0: vertices,
        joints0,
        parent: PARENTS.to_vec(),
        skin_weights: skin,
        shape_dirs: shape,
        joint_regressor,
    })
}

/// Affine combination of nearby vertices reproducing each joint exactly:
/// uniform weights over the nearest vertices, corrected by the minimum-norm
/// zero-sum offset that moves their centroid onto the joint.
fn fit_regressor(vertices: &Array2<f64>, joints: &[Vector3<f64>]) -> Result<Array2<f64>> {
    let n = vertices.nrows();
    let point = |i: usize| Vector3::new(vertices[[i, 0]], vertices[[i, 1]], vertices[[i, 2]]);
    let mut reg = Array2::zeros((joints.len(), n));
    for (j, target) in joints.iter().enumerate() {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            (point(a) - target)
                .norm_squared()
                .total_cmp(&(point(b) - target).norm_squared())
                .then(a.cmp(&b))
        });
        let mut k = REGRESSOR_NEIGHBORS.min(n);
        let solved = loop {
            let idx = &order[..k];
            let uniform = 1.0 / k as f64;
            let centroid = idx.iter().fold(Vector3::zeros(), |acc, &i| acc + point(i)) * uniform;
            let rhs = Vector4::new(target.x - centroid.x, target.y - centroid.y, target.z - centroid.z, 0.0);
            let mut gram = Matrix4::zeros();
            // Centered columns span the same space and keep the Gram matrix well conditioned.
            let col = |i: usize| {
                let d = point(i) - centroid;
                Vector4::new(d.x, d.y, d.z, 1.0)
            };
            for &i in idx {
                gram += col(i) * col(i).transpose();
            }
            match gram.try_inverse() {
                Some(inv) if inv.iter().all(|x| x.is_finite()) => {
                    let lambda = inv * rhs;
                    let w: Vec<(usize, f64)> = idx
                        .iter()
                        .map(|&i| (i, uniform + col(i).dot(&lambda)))
                        .collect();
                    break Some(w);
                }
                _ if k < n => k = (k * 2).min(n),
                _ => break None,
            }
        };
        let weights = solved.ok_or_else(|| invalid("template vertices are degenerate; cannot fit joint regressor"))?;
        for (i, w) in weights {
            reg[[j, i]] = w;
        }
    }
    Ok(reg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn allocation_covers_every_segment() {
        let c = allocate(21, &[1.0; 20]);
        assert_eq!(c.iter().sum::<usize>(), 21);
        assert!(c.iter().all(|&x| x >= 1));
        let c = allocate(778, &[3.0, 1.0, 0.5]);
        assert_eq!(c.iter().sum::<usize>(), 778);
    }

    #[test]
    fn rejects_too_few_vertices() {
        assert!(build_template(0, 20).is_err());
        assert!(build_template(0, 21).is_ok());
    }
}
