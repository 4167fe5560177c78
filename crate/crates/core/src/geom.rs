//! Image-plane geometry behind relation-aware tokenization: hand bounding
//! boxes, per-patch position maps, relative distance and overlap maps, and
//! the weak-perspective camera.
//!
//! Patch `(k, i)` is row `k ∈ [0, H)` and column `i ∈ [0, W)`. Maps are
//! stored as `H×W×channels` arrays indexed `[k, i, channel]`.

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::autodiff::sigmoid;
use crate::error::{invalid, Result};

/// Default sharpness of the relative distance activation.
pub const DEFAULT_TAU: f64 = 2.0;

/// Axis-aligned hand box `[c_x, c_y, s_x, s_y]` in image pixels; `s` are full
/// side lengths.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "[f64; 4]", from = "[f64; 4]")]
pub struct BoundingBox {
    pub cx: f64,
    pub cy: f64,
    pub sx: f64,
    pub sy: f64,
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        [b.cx, b.cy, b.sx, b.sy]
    }
}

impl From<[f64; 4]> for BoundingBox {
    fn from(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }
}

impl BoundingBox {
    pub const fn new(cx: f64, cy: f64, sx: f64, sy: f64) -> Self {
        Self { cx, cy, sx, sy }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.cx, self.cy, self.sx, self.sy];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(invalid(format!("bounding box has non-finite entries: {all:?}")));
        }
        if self.sx < 0.0 || self.sy < 0.0 {
            return Err(invalid(format!("bounding box has negative size: {all:?}")));
        }
        Ok(())
    }

    /// Closed-rectangle containment.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        (x - self.cx).abs() <= self.sx / 2.0 && (y - self.cy).abs() <= self.sy / 2.0
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self::new(self.cx + dx, self.cy + dy, self.sx, self.sy)
    }
}

/// Pixel position of every patch center, `H×W×2`.
#[derive(Clone, Debug, PartialEq)]
pub struct PositionMap {
    pub values: Array3<f64>,
}

/// Post-sigmoid relative offsets, `H×W×2`, every entry in `(0, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RelativeDistanceMap {
    pub values: Array3<f64>,
}

/// `+1` where a patch center falls inside the other hand's box, else `-1`.
#[derive(Clone, Debug, PartialEq)]
pub struct OverlapMap {
    pub values: Array3<f64>,
}

impl PositionMap {
    pub fn grid(&self) -> (usize, usize) {
        let (h, w, _) = self.values.dim();
        (h, w)
    }
}

impl RelativeDistanceMap {
    pub fn grid(&self) -> (usize, usize) {
        let (h, w, _) = self.values.dim();
        (h, w)
    }
}

impl OverlapMap {
    pub fn grid(&self) -> (usize, usize) {
        let (h, w, _) = self.values.dim();
        (h, w)
    }
}

/// Patch-center positions of a box on an `h×w` grid.
///
/// The offset `(2i - W)·s_x / (2W)` is used as is: column `W/2` lands on the
/// box center and column `0` on its left edge.
pub fn position_map(b: &BoundingBox, h: usize, w: usize) -> Result<PositionMap> {
    b.validate()?;
    if h == 0 || w == 0 {
        return Err(invalid(format!("position map grid must be non-empty, got {h}x{w}")));
    }
    let (hf, wf) = (h as f64, w as f64);
    let values = Array3::from_shape_fn((h, w, 2), |(k, i, c)| {
        if c == 0 {
            b.cx + (2.0 * i as f64 - wf) * b.sx / (2.0 * wf)
        } else {
            b.cy + (2.0 * k as f64 - hf) * b.sy / (2.0 * hf)
        }
    });
    Ok(PositionMap { values })
}

/// Pre-activation argument `tau·(C_self − C_other)/s_self`.
pub fn relative_offsets(
    c_self: &PositionMap,
    c_other: &PositionMap,
    s_self: (f64, f64),
    tau: f64,
) -> Result<Array3<f64>> {
    if c_self.values.dim() != c_other.values.dim() {
        return Err(invalid("position maps differ in grid size"));
    }
    if s_self.0 == 0.0 || s_self.1 == 0.0 {
        return Err(invalid("relative distance needs a non-zero box scale"));
    }
    if !(s_self.0.is_finite() && s_self.1.is_finite() && tau.is_finite()) {
        return Err(invalid("relative distance needs finite scale and tau"));
    }
    let scale = [s_self.0, s_self.1];
    let mut out = &c_self.values - &c_other.values;
    for ((_, _, c), v) in out.indexed_iter_mut() {
        *v = tau * *v / scale[c];
    }
    Ok(out)
}

/// Sigmoid of the scale-normalized offset between two position maps.
pub fn relative_distance_map(
    c_self: &PositionMap,
    c_other: &PositionMap,
    s_self: (f64, f64),
    tau: f64,
) -> Result<RelativeDistanceMap> {
    let values = relative_offsets(c_self, c_other, s_self, tau)?.mapv(sigmoid);
    Ok(RelativeDistanceMap { values })
}

pub fn overlap_map(c_self: &PositionMap, other: &BoundingBox) -> OverlapMap {
    let (h, w) = c_self.grid();
    let values = Array3::from_shape_fn((h, w, 1), |(k, i, _)| {
        let (x, y) = (c_self.values[[k, i, 0]], c_self.values[[k, i, 1]]);
        if other.contains(x, y) {
            1.0
        } else {
            -1.0
        }
    });
    OverlapMap { values }
}

/// The five per-patch relation channels `D_self ⊕ D_other ⊕ O_self` of one
/// hand, flattened to `(H·W)×5` in row-major patch order.
#[derive(Clone, Debug, PartialEq)]
pub struct RelationInput {
    pub values: Array2<f64>,
}

/// Both hands' relation inputs for a box pair on an `h×w` grid.
pub fn relation_inputs(
    box_r: &BoundingBox,
    box_l: &BoundingBox,
    h: usize,
    w: usize,
    tau: f64,
) -> Result<(RelationInput, RelationInput)> {
    let c_r = position_map(box_r, h, w)?;
    let c_l = position_map(box_l, h, w)?;
    let d_r2l = relative_distance_map(&c_r, &c_l, (box_r.sx, box_r.sy), tau)?;
    let d_l2r = relative_distance_map(&c_l, &c_r, (box_l.sx, box_l.sy), tau)?;
    let o_r2l = overlap_map(&c_r, box_l);
    let o_l2r = overlap_map(&c_l, box_r);
    Ok((
        stack_relation(&d_r2l, &d_l2r, &o_r2l),
        stack_relation(&d_l2r, &d_r2l, &o_l2r),
    ))
}

/// Channel-wise concatenation at matching patch indices.
pub fn stack_relation(
    d_self: &RelativeDistanceMap,
    d_other: &RelativeDistanceMap,
    o_self: &OverlapMap,
) -> RelationInput {
    let (h, w) = d_self.grid();
    let values = Array2::from_shape_fn((h * w, 5), |(n, c)| {
        let (k, i) = (n / w, n % w);
        match c {
            0 | 1 => d_self.values[[k, i, c]],
            2 | 3 => d_other.values[[k, i, c - 2]],
            _ => o_self.values[[k, i, 0]],
        }
    });
    RelationInput { values }
}

/// Orthographic projection with uniform scale and 2D translation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeakPerspectiveCamera {
    pub scale: f64,
    pub tx: f64,
    pub ty: f64,
}

impl WeakPerspectiveCamera {
    pub fn new(scale: f64, tx: f64, ty: f64) -> Result<Self> {
        let cam = Self { scale, tx, ty };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(invalid(format!("camera scale must be positive, got {}", self.scale)));
        }
        if !(self.tx.is_finite() && self.ty.is_finite()) {
            return Err(invalid("camera translation must be finite"));
        }
        Ok(())
    }

    pub fn project_point(&self, p: [f64; 3]) -> [f64; 2] {
        [self.scale * p[0] + self.tx, self.scale * p[1] + self.ty]
    }

    /// Projects `N×3` points to `N×2`; depth is ignored.
    pub fn project(&self, points: &Array2<f64>) -> Array2<f64> {
        Array2::from_shape_fn((points.nrows(), 2), |(n, c)| {
            let t = if c == 0 { self.tx } else { self.ty };
            self.scale * points[[n, c]] + t
        })
    }
}

pub fn project(camera: &WeakPerspectiveCamera, points: &Array2<f64>) -> Array2<f64> {
    camera.project(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn position_map_hand_evaluated() {
        let b = BoundingBox::new(100.0, 80.0, 32.0, 32.0);
        let m = position_map(&b, 2, 2).unwrap();
        assert_eq!(m.values[[0, 0, 0]], 84.0);
        assert_eq!(m.values[[0, 0, 1]], 64.0);
    }

    #[test]
    fn position_map_center_patch_is_box_center() {
        let b = BoundingBox::new(37.5, -12.25, 48.0, 64.0);
        let m = position_map(&b, 8, 6).unwrap();
        assert_eq!(m.values[[4, 3, 0]], 37.5);
        assert_eq!(m.values[[4, 3, 1]], -12.25);
    }

    #[test]
    fn zero_scale_collapses_to_center() {
        let b = BoundingBox::new(3.0, 4.0, 0.0, 0.0);
        let m = position_map(&b, 3, 5).unwrap();
        for k in 0..3 {
            for i in 0..5 {
                assert_eq!(m.values[[k, i, 0]], 3.0);
                assert_eq!(m.values[[k, i, 1]], 4.0);
            }
        }
    }

    #[test]
    fn position_map_rejects_empty_grid_and_bad_box() {
        let b = BoundingBox::new(0.0, 0.0, 1.0, 1.0);
        assert!(position_map(&b, 0, 3).is_err());
        assert!(position_map(&BoundingBox::new(0.0, 0.0, -1.0, 1.0), 2, 2).is_err());
        assert!(position_map(&BoundingBox::new(f64::NAN, 0.0, 1.0, 1.0), 2, 2).is_err());
    }

    #[test]
    fn identical_boxes_give_half() {
        let b = BoundingBox::new(50.0, 60.0, 20.0, 30.0);
        let c = position_map(&b, 4, 3).unwrap();
        let d = relative_distance_map(&c, &c, (20.0, 30.0), DEFAULT_TAU).unwrap();
        assert!(d.values.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn offset_by_one_box_width_gives_sigmoid_one() {
        let a = BoundingBox::new(150.0, 60.0, 40.0, 40.0);
        let b = BoundingBox::new(110.0, 60.0, 40.0, 40.0);
        let ca = position_map(&a, 4, 3).unwrap();
        let cb = position_map(&b, 4, 3).unwrap();
        let d = relative_distance_map(&ca, &cb, (40.0, 40.0), 1.0).unwrap();
        for k in 0..4 {
            for i in 0..3 {
                assert!((d.values[[k, i, 0]] - 0.731_058_6).abs() < 1e-6);
                assert_eq!(d.values[[k, i, 1]], 0.5);
            }
        }
    }

    #[test]
    fn far_offset_saturates() {
        let a = BoundingBox::new(1e6, 0.0, 10.0, 10.0);
        let b = BoundingBox::new(0.0, 0.0, 10.0, 10.0);
        let d = relative_distance_map(
            &position_map(&a, 2, 2).unwrap(),
            &position_map(&b, 2, 2).unwrap(),
            (10.0, 10.0),
            DEFAULT_TAU,
        )
        .unwrap();
        assert!(d.values.iter().step_by(2).all(|&v| v == 1.0));
    }

    #[test]
    fn zero_scale_is_rejected() {
        let c = position_map(&BoundingBox::new(0.0, 0.0, 1.0, 1.0), 2, 2).unwrap();
        assert!(relative_distance_map(&c, &c, (0.0, 1.0), 1.0).is_err());
        assert!(relative_distance_map(&c, &c, (1.0, 0.0), 1.0).is_err());
    }

    #[test]
    fn overlap_identical_box_is_all_inside() {
        let b = BoundingBox::new(10.0, 10.0, 8.0, 6.0);
        let o = overlap_map(&position_map(&b, 8, 6).unwrap(), &b);
        assert!(o.values.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn overlap_disjoint_boxes_are_all_outside() {
        let a = BoundingBox::new(0.0, 0.0, 10.0, 10.0);
        let b = BoundingBox::new(25.0, 0.0, 10.0, 10.0);
        let o = overlap_map(&position_map(&a, 4, 4).unwrap(), &b);
        assert!(o.values.iter().all(|&v| v == -1.0));
    }

    #[test]
    fn overlap_half_shifted_box() {
        // Patch centers of (0,0,2,2) on a 2×2 grid sit at x ∈ {-1, 0}, y ∈ {-1, 0};
        // the other box spans x ∈ [0, 2], y ∈ [-1, 1].
        let a = BoundingBox::new(0.0, 0.0, 2.0, 2.0);
        let b = BoundingBox::new(1.0, 0.0, 2.0, 2.0);
        let o = overlap_map(&position_map(&a, 2, 2).unwrap(), &b);
        assert_eq!(o.values.index_axis(ndarray::Axis(2), 0), array![[-1.0, 1.0], [-1.0, 1.0]]);
    }

    #[test]
    fn projection_examples() {
        let id = WeakPerspectiveCamera::new(1.0, 0.0, 0.0).unwrap();
        assert_eq!(id.project(&array![[0.1, -0.2, 0.7]]), array![[0.1, -0.2]]);
        let tr = WeakPerspectiveCamera::new(100.0, 128.0, 96.0).unwrap();
        assert_eq!(tr.project(&array![[0.0, 0.0, 0.0]]), array![[128.0, 96.0]]);
        let af = WeakPerspectiveCamera::new(2.0, 1.0, 1.0).unwrap();
        assert_eq!(project(&af, &array![[3.0, 4.0, 9.0]]), array![[7.0, 9.0]]);
        assert!(WeakPerspectiveCamera::new(0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn relation_inputs_layout() {
        let r = BoundingBox::new(100.0, 100.0, 30.0, 40.0);
        let l = BoundingBox::new(120.0, 90.0, 33.0, 44.0);
        let (ir, il) = relation_inputs(&r, &l, 4, 3, DEFAULT_TAU).unwrap();
        assert_eq!(ir.values.dim(), (12, 5));
        // D_self of one hand is D_other of the other.
        for n in 0..12 {
            assert_eq!(ir.values[[n, 0]], il.values[[n, 2]]);
            assert_eq!(ir.values[[n, 3]], il.values[[n, 1]]);
        }
    }

    fn arb_box() -> impl Strategy<Value = BoundingBox> {
        (-500.0..500.0f64, -500.0..500.0f64, 1.0..200.0f64, 1.0..200.0f64)
            .prop_map(|(cx, cy, sx, sy)| BoundingBox::new(cx, cy, sx, sy))
    }

    proptest! {
        #[test]
        fn maps_stay_in_range(a in arb_box(), b in arb_box(), h in 1usize..17, w in 1usize..13) {
            let ca = position_map(&a, h, w).unwrap();
            let cb = position_map(&b, h, w).unwrap();
            let d = relative_distance_map(&ca, &cb, (a.sx, a.sy), DEFAULT_TAU).unwrap();
            prop_assert!(d.values.iter().all(|&v| v >= 0.0 && v <= 1.0));
            let o = overlap_map(&ca, &b);
            prop_assert!(o.values.iter().all(|&v| v == 1.0 || v == -1.0));
        }

        #[test]
        fn pre_activation_antisymmetric_for_equal_scales(
            a in arb_box(), dx in -300.0..300.0f64, dy in -300.0..300.0f64
        ) {
            let b = a.translated(dx, dy);
            let ca = position_map(&a, 4, 3).unwrap();
            let cb = position_map(&b, 4, 3).unwrap();
            let ab = relative_offsets(&ca, &cb, (a.sx, a.sy), DEFAULT_TAU).unwrap();
            let ba = relative_offsets(&cb, &ca, (b.sx, b.sy), DEFAULT_TAU).unwrap();
            for (x, y) in ab.iter().zip(ba.iter()) {
                prop_assert_eq!(*x, -*y);
            }
        }
    }
}
