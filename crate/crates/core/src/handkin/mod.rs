//! Procedural parametric hand model.
//!
//! A seeded stand-in with MANO dimensions: 778 vertices, 16 posed joints
//! (wrist plus three per finger), 5 fingertip keypoints, 48 pose and 10
//! shape coefficients. Geometry is in meters.
//!
//! Joint order: 0 wrist; thumb 1-3, index 4-6, middle 7-9, ring 10-12,
//! pinky 13-15; fingertips 16-20 (thumb..pinky).

mod diff;
mod io;
mod rotation;
mod template;

pub use diff::{forward_graph, HandVars};
pub use io::{export_template, import_template};
pub use rotation::{rodrigues, rodrigues_with_jacobian, skew};
pub use template::build_template;

use nalgebra::{Matrix3, Vector3};
use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub const NUM_JOINTS: usize = 21;
pub const NUM_POSED_JOINTS: usize = 16;
pub const POSE_DIM: usize = 3 * NUM_POSED_JOINTS;
pub const SHAPE_DIM: usize = 10;
pub const DEFAULT_VERTICES: usize = 778;
/// Sampling bound on shape coefficients.
pub const BETA_BOUND: f64 = 5.0;

/// Kinematic tree over the posed joints.
pub const PARENTS: [i32; NUM_POSED_JOINTS] = [-1, 0, 1, 2, 0, 4, 5, 0, 7, 8, 0, 10, 11, 0, 13, 14];

/// `(child, parent)` skeleton edges over all 21 keypoints.
pub const BONES: [(usize, usize); 20] = [
    (1, 0), (2, 1), (3, 2), (16, 3),
    (4, 0), (5, 4), (6, 5), (17, 6),
    (7, 0), (8, 7), (9, 8), (18, 9),
    (10, 0), (11, 10), (12, 11), (19, 12),
    (13, 0), (14, 13), (15, 14), (20, 15),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn other(self) -> Self {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HandParams {
    pub theta: Vec<f64>,
    pub beta: Vec<f64>,
    pub side: Side,
}

impl HandParams {
    pub fn rest(side: Side) -> Self {
        Self {
            theta: vec![0.0; POSE_DIM],
            beta: vec![0.0; SHAPE_DIM],
            side,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.theta.len() != POSE_DIM || self.beta.len() != SHAPE_DIM {
            return Err(invalid(format!(
                "hand params need {POSE_DIM} pose and {SHAPE_DIM} shape values, got {} and {}",
                self.theta.len(),
                self.beta.len()
            )));
        }
        if !self.theta.iter().chain(&self.beta).all(|x| x.is_finite()) {
            return Err(invalid("hand params contain non-finite values"));
        }
        if let Some(b) = self.beta.iter().find(|b| b.abs() > BETA_BOUND) {
            return Err(invalid(format!("shape coefficient {b} exceeds bound {BETA_BOUND}")));
        }
        Ok(())
    }

    /// The same pose seen in a mirror across the `x = 0` plane, on the other
    /// side.
    pub fn mirrored(&self) -> Self {
        let mut theta = self.theta.clone();
        for j in 0..NUM_POSED_JOINTS {
            theta[3 * j + 1] = -theta[3 * j + 1];
            theta[3 * j + 2] = -theta[3 * j + 2];
        }
        Self {
            theta,
            beta: self.beta.clone(),
            side: self.side.other(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HandTemplate {
    pub side: Side,
    pub vertices0: Array2<f64>,
    pub joints0: Array2<f64>,
    pub parent: Vec<i32>,
    pub skin_weights: Array2<f64>,
    /// `[vertex, coordinate, component]`.
    pub shape_dirs: Array3<f64>,
    pub joint_regressor: Array2<f64>,
}

impl HandTemplate {
    pub fn n_vertices(&self) -> usize {
        self.vertices0.nrows()
    }

    /// x-negated copy for the other side.
    pub fn mirrored(&self) -> Self {
        let mut out = self.clone();
        out.side = self.side.other();
        out.vertices0.column_mut(0).mapv_inplace(|x| -x);
        out.joints0.column_mut(0).mapv_inplace(|x| -x);
        out.shape_dirs
            .index_axis_mut(ndarray::Axis(1), 0)
            .mapv_inplace(|x| -x);
        out
    }

    /// Rest shape with blendshapes applied.
    pub fn shaped_vertices(&self, beta: &[f64]) -> Array2<f64> {
        let mut v = self.vertices0.clone();
        for ((i, c), x) in v.indexed_iter_mut() {
            let mut offset = 0.0;
            for (k, b) in beta.iter().enumerate() {
                offset += self.shape_dirs[[i, c, k]] * b;
            }
            *x += offset;
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_vertices();
        let shapes_ok = self.vertices0.dim() == (n, 3)
            && self.joints0.dim() == (NUM_JOINTS, 3)
            && self.parent.len() == NUM_POSED_JOINTS
            && self.skin_weights.dim() == (n, NUM_POSED_JOINTS)
            && self.shape_dirs.dim() == (n, 3, SHAPE_DIM)
            && self.joint_regressor.dim() == (NUM_JOINTS, n);
        if !shapes_ok || n < NUM_JOINTS {
            return Err(invalid("hand template arrays have inconsistent shapes"));
        }
        for (j, &p) in self.parent.iter().enumerate() {
            let ok = if j == 0 { p == -1 } else { p >= 0 && (p as usize) < j };
            if !ok {
                return Err(invalid(format!("parent of joint {j} is {p}; tree must be rooted at 0 and topologically ordered")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HandOutput {
    pub vertices: Array2<f64>,
    pub joints: Array2<f64>,
}

impl HandOutput {
    pub fn root(&self) -> [f64; 3] {
        [self.joints[[0, 0]], self.joints[[0, 1]], self.joints[[0, 2]]]
    }

    pub fn translated(&self, t: [f64; 3]) -> Self {
        let shift = ndarray::arr1(&t);
        Self {
            vertices: &self.vertices + &shift,
            joints: &self.joints + &shift,
        }
    }
}

/// Per-joint global rotations and translations of the skinning transforms.
pub(crate) struct Chain {
    pub rot: Vec<Matrix3<f64>>,
    pub trans: Vec<Vector3<f64>>,
}

pub(crate) fn row3(a: &Array2<f64>, i: usize) -> Vector3<f64> {
    Vector3::new(a[[i, 0]], a[[i, 1]], a[[i, 2]])
}

/// Kinematic joint locations regressed from the shaped mesh.
pub(crate) fn kinematic_joints(t: &HandTemplate, shaped: &Array2<f64>) -> Vec<Vector3<f64>> {
    let j = t
        .joint_regressor
        .slice(ndarray::s![0..NUM_POSED_JOINTS, ..])
        .dot(shaped);
    (0..NUM_POSED_JOINTS).map(|i| row3(&j, i)).collect()
}

pub(crate) fn chain(parent: &[i32], local: &[Matrix3<f64>], joints: &[Vector3<f64>]) -> Chain {
    let mut rot: Vec<Matrix3<f64>> = Vec::with_capacity(local.len());
    let mut trans: Vec<Vector3<f64>> = Vec::with_capacity(local.len());
    for j in 0..local.len() {
        let pivot = joints[j] - local[j] * joints[j];
        if parent[j] < 0 {
            rot.push(local[j]);
            trans.push(pivot);
        } else {
            let p = parent[j] as usize;
            rot.push(rot[p] * local[j]);
            trans.push(rot[p] * pivot + trans[p]);
        }
    }
    Chain { rot, trans }
}

/// Linear blend skinning written as a displacement from the shaped rest
/// mesh so the rest pose is reproduced bitwise.
pub(crate) fn skin(t: &HandTemplate, shaped: &Array2<f64>, ch: &Chain) -> Array2<f64> {
    let deltas: Vec<Matrix3<f64>> = ch.rot.iter().map(|r| r - Matrix3::identity()).collect();
    let mut out = shaped.clone();
    for i in 0..shaped.nrows() {
        let v = row3(shaped, i);
        let mut d = Vector3::zeros();
        for j in 0..NUM_POSED_JOINTS {
            let w = t.skin_weights[[i, j]];
            if w != 0.0 {
                d += (deltas[j] * v + ch.trans[j]) * w;
            }
        }
        for c in 0..3 {
            out[[i, c]] += d[c];
        }
    }
    out
}

pub(crate) fn local_rotations(theta: &[f64]) -> Vec<Matrix3<f64>> {
    (0..NUM_POSED_JOINTS)
        .map(|j| rodrigues(&Vector3::new(theta[3 * j], theta[3 * j + 1], theta[3 * j + 2])))
        .collect()
}

/// Posed mesh and 21 keypoints in the hand's own frame (wrist near origin).
pub fn forward(template: &HandTemplate, params: &HandParams) -> Result<HandOutput> {
    params.validate()?;
    if params.side != template.side {
        return Err(invalid(format!(
            "{:?} hand params given to a {:?} template",
            params.side, template.side
        )));
    }
    let shaped = template.shaped_vertices(&params.beta);
    let joints = kinematic_joints(template, &shaped);
    let ch = chain(&template.parent, &local_rotations(&params.theta), &joints);
    let vertices = skin(template, &shaped, &ch);
    let joints = template.joint_regressor.dot(&vertices);
    Ok(HandOutput { vertices, joints })
}

/// Right and left templates built from one seed.
#[derive(Clone, Debug, PartialEq)]
pub struct HandModel {
    pub right: HandTemplate,
    pub left: HandTemplate,
}

impl HandModel {
    pub fn new(seed: u64, n_vertices: usize) -> Result<Self> {
        let right = build_template(seed, n_vertices)?;
        let left = right.mirrored();
        Ok(Self { right, left })
    }

    pub fn template(&self, side: Side) -> &HandTemplate {
        match side {
            Side::Right => &self.right,
            Side::Left => &self.left,
        }
    }

    pub fn n_vertices(&self) -> usize {
        self.right.n_vertices()
    }

    pub fn forward(&self, params: &HandParams) -> Result<HandOutput> {
        forward(self.template(params.side), params)
    }
}
