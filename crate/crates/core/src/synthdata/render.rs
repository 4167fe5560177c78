//! Joint-heatmap crops.

use ndarray::{Array2, Array3};

use super::motion::BOX_MARGIN;
use crate::error::{invalid, Result};
use crate::geom::BoundingBox;

/// Five finger-group channels plus a depth channel.
pub const CHANNELS: usize = 6;
const DEPTH_CHANNEL: usize = 5;
/// Depth range mapped onto `[0, 1]` around the hand root, in meters.
const DEPTH_SPAN: f64 = 0.2;

/// Finger channel of each of the 21 keypoints; the wrist is drawn in all.
fn finger_of(joint: usize) -> Option<usize> {
    match joint {
        0 => None,
        1..=15 => Some((joint - 1) / 3),
        _ => Some(joint - 16),
    }
}

/// Crop box around projected joints: centered on their bounding box, side
/// `1.3×` the larger extent, aspect matching the crop.
pub fn box_from_joints(j2d: &Array2<f64>, crop_h: usize, crop_w: usize) -> BoundingBox {
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for r in j2d.rows() {
        for c in 0..2 {
            lo[c] = lo[c].min(r[c]);
            hi[c] = hi[c].max(r[c]);
        }
    }
    let aspect = crop_w as f64 / crop_h as f64;
    let sx = BOX_MARGIN * (hi[0] - lo[0]).max((hi[1] - lo[1]) * aspect);
    BoundingBox::new((lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0, sx, sx / aspect)
}

/// Smallest crop-aspect box containing both boxes.
pub fn union_box(a: &BoundingBox, b: &BoundingBox, crop_h: usize, crop_w: usize) -> BoundingBox {
    let x0 = (a.cx - a.sx / 2.0).min(b.cx - b.sx / 2.0);
    let x1 = (a.cx + a.sx / 2.0).max(b.cx + b.sx / 2.0);
    let y0 = (a.cy - a.sy / 2.0).min(b.cy - b.sy / 2.0);
    let y1 = (a.cy + a.sy / 2.0).max(b.cy + b.sy / 2.0);
    let aspect = crop_w as f64 / crop_h as f64;
    let sx = (x1 - x0).max((y1 - y0) * aspect);
    BoundingBox::new((x0 + x1) / 2.0, (y0 + y1) / 2.0, sx, sx / aspect)
}

/// Image points to normalized crop coordinates `(p − c) / (s_x / 2)` on
/// both axes.
pub fn to_crop_coords(points: &Array2<f64>, b: &BoundingBox) -> Array2<f64> {
    let half = b.sx / 2.0;
    Array2::from_shape_fn((points.nrows(), 2), |(n, c)| {
        let center = if c == 0 { b.cx } else { b.cy };
        (points[[n, c]] - center) / half
    })
}

/// One hand to draw: projected joints in image pixels and per-joint depth.
pub struct Splat<'a> {
    pub j2d: &'a Array2<f64>,
    pub depth: &'a [f64],
}

/// Renders Gaussian joint splats inside `b` onto a `crop_h×crop_w×6` raster.
///
/// Splats have `σ = crop_w/24` crop pixels and a `3σ` cutoff; overlapping
/// splats add and are clamped to 1. The depth channel carries the root-
/// relative depth of the strongest nearby joint.
pub fn render_crop(hands: &[Splat<'_>], b: &BoundingBox, crop_h: usize, crop_w: usize) -> Result<Array3<f32>> {
    b.validate()?;
    if !(b.sx > 0.0 && b.sy > 0.0) {
        return Err(invalid("cannot render into a box with zero size"));
    }
    let sigma = crop_w as f64 / 24.0;
    let cutoff = 3.0 * sigma;
    let inv2s2 = 1.0 / (2.0 * sigma * sigma);
    let mut acc = Array3::<f64>::zeros((crop_h, crop_w, CHANNELS));
    let mut depth_weight = Array2::<f64>::zeros((crop_h, crop_w));
    let x0 = b.cx - b.sx / 2.0;
    let y0 = b.cy - b.sy / 2.0;
    let (px, py) = (b.sx / crop_w as f64, b.sy / crop_h as f64);

    for hand in hands {
        let root_depth = hand.depth[0];
        for j in 0..hand.j2d.nrows() {
            // Continuous pixel coordinates: pixel n covers [n, n+1).
            let u = (hand.j2d[[j, 0]] - x0) / px - 0.5;
            let v = (hand.j2d[[j, 1]] - y0) / py - 0.5;
            let dn = (0.5 + (hand.depth[j] - root_depth) / DEPTH_SPAN).clamp(0.0, 1.0);
            let c_lo = (u - cutoff).ceil().max(0.0) as i64;
            let c_hi = (u + cutoff).floor().min(crop_w as f64 - 1.0) as i64;
            let r_lo = (v - cutoff).ceil().max(0.0) as i64;
            let r_hi = (v + cutoff).floor().min(crop_h as f64 - 1.0) as i64;
            for r in r_lo..=r_hi {
                for c in c_lo..=c_hi {
                    let d2 = (c as f64 - u).powi(2) + (r as f64 - v).powi(2);
                    if d2 > cutoff * cutoff {
                        continue;
                    }
                    let w = (-d2 * inv2s2).exp();
                    let (r, c) = (r as usize, c as usize);
                    match finger_of(j) {
                        Some(f) => acc[[r, c, f]] += w,
                        None => (0..5).for_each(|f| acc[[r, c, f]] += w),
                    }
                    if w > depth_weight[[r, c]] {
                        depth_weight[[r, c]] = w;
                        acc[[r, c, DEPTH_CHANNEL]] = w * dn;
                    }
                }
            }
        }
    }
    Ok(acc.mapv(|x| x.min(1.0) as f32))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn centered_joint_peaks_at_center() {
        // A 24x24 crop over a 24-pixel box puts one image pixel per crop
        // pixel; the box center is the corner shared by pixels 11 and 12.
        let b = BoundingBox::new(100.0, 50.0, 24.0, 24.0);
        let j = array![[100.5, 50.5]];
        let crop = render_crop(&[Splat { j2d: &j, depth: &[0.0] }], &b, 24, 24).unwrap();
        let ch = crop.index_axis(ndarray::Axis(2), 0);
        let (mut best, mut at) = (0.0f32, (0, 0));
        for ((r, c), &v) in ch.indexed_iter() {
            if v > best {
                best = v;
                at = (r, c);
            }
        }
        assert_eq!(at, (12, 12));
        assert_eq!(best, 1.0);
    }

    #[test]
    fn zero_box_is_rejected() {
        let j = array![[0.0, 0.0]];
        assert!(render_crop(&[Splat { j2d: &j, depth: &[0.0] }], &BoundingBox::new(0.0, 0.0, 0.0, 0.0), 8, 8).is_err());
    }
}
