use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geom::WeakPerspectiveCamera;
use crate::handkin::{HandParams, Side, POSE_DIM, SHAPE_DIM};

/// Width of one hand's block in a flattened prediction: pose, shape, camera.
pub const HAND_BLOCK: usize = POSE_DIM + SHAPE_DIM + 3;
/// Flattened per-frame output: right block, left block, then `υ`.
pub const OUTPUT_DIM: usize = 2 * HAND_BLOCK + 3;

/// Both hands' parameters for one frame.
///
/// `upsilon` is the left root in right-root-centered coordinates, in meters.
/// Cameras map hand-local joints into normalized crop coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub theta_r: Vec<f64>,
    pub theta_l: Vec<f64>,
    pub beta_r: Vec<f64>,
    pub beta_l: Vec<f64>,
    pub upsilon: [f64; 3],
    pub cam_r: WeakPerspectiveCamera,
    pub cam_l: WeakPerspectiveCamera,
}

impl Prediction {
    pub fn params(&self, side: Side) -> HandParams {
        let (theta, beta) = match side {
            Side::Right => (&self.theta_r, &self.beta_r),
            Side::Left => (&self.theta_l, &self.beta_l),
        };
        HandParams {
            theta: theta.clone(),
            beta: beta.clone(),
            side,
        }
    }

    pub fn camera(&self, side: Side) -> &WeakPerspectiveCamera {
        match side {
            Side::Right => &self.cam_r,
            Side::Left => &self.cam_l,
        }
    }

    /// Parses a flattened row whose camera entries are already `(k, tx, ty)`.
    pub fn from_row(row: &[f64]) -> Result<Self> {
        if row.len() != OUTPUT_DIM {
            return Err(invalid(format!("prediction row must have {OUTPUT_DIM} values, got {}", row.len())));
        }
        let hand = |o: usize| {
            let cam = WeakPerspectiveCamera {
                scale: row[o + POSE_DIM + SHAPE_DIM],
                tx: row[o + POSE_DIM + SHAPE_DIM + 1],
                ty: row[o + POSE_DIM + SHAPE_DIM + 2],
            };
            (row[o..o + POSE_DIM].to_vec(), row[o + POSE_DIM..o + POSE_DIM + SHAPE_DIM].to_vec(), cam)
        };
        let (theta_r, beta_r, cam_r) = hand(0);
        let (theta_l, beta_l, cam_l) = hand(HAND_BLOCK);
        let u = 2 * HAND_BLOCK;
        Ok(Self {
            theta_r,
            theta_l,
            beta_r,
            beta_l,
            upsilon: [row[u], row[u + 1], row[u + 2]],
            cam_r,
            cam_l,
        })
    }

    pub fn to_row(&self) -> Vec<f64> {
        let mut row = Vec::with_capacity(OUTPUT_DIM);
        for (theta, beta, cam) in [
            (&self.theta_r, &self.beta_r, &self.cam_r),
            (&self.theta_l, &self.beta_l, &self.cam_l),
        ] {
            row.extend_from_slice(theta);
            row.extend_from_slice(beta);
            row.extend_from_slice(&[cam.scale, cam.tx, cam.ty]);
        }
        row.extend_from_slice(&self.upsilon);
        row
    }

    pub fn is_finite(&self) -> bool {
        self.to_row().iter().all(|x| x.is_finite())
    }
}
