//! Evaluation metrics. Inputs are in meters; outputs in millimeters unless
//! stated otherwise.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::handkin::BONES;

pub const DEFAULT_AUC_MAX_MM: f64 = 50.0;
const AUC_STEPS: usize = 100;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mpjpe_mm: f64,
    pub mpvpe_mm: f64,
    pub mrrpe_mm: f64,
    pub accel_e_mm_s2: f64,
    pub auc: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mpjpe {
    pub mm: f64,
    /// Factor applied to the predicted skeleton.
    pub scale: f64,
    /// Set when the predicted skeleton had zero length and was not rescaled.
    pub scaling_skipped: bool,
}

fn check_finite(a: &Array2<f64>, what: &str) -> Result<()> {
    if a.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(invalid(format!("{what} contains non-finite values")))
    }
}

fn mean_bone_length(j: &Array2<f64>) -> f64 {
    let total: f64 = BONES
        .iter()
        .map(|&(c, p)| {
            (0..3)
                .map(|k| (j[[c, k]] - j[[p, k]]).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .sum();
    total / BONES.len() as f64
}

fn mean_point_error(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let total: f64 = a
        .rows()
        .into_iter()
        .zip(b.rows())
        .map(|(x, y)| x.iter().zip(y.iter()).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt())
        .sum();
    total / a.nrows() as f64
}

/// Root-aligned, skeleton-scaled mean joint error with diagnostics.
pub fn mpjpe_detailed(j: &Array2<f64>, j_gt: &Array2<f64>) -> Result<Mpjpe> {
    if j.dim() != j_gt.dim() || j.nrows() < 21 || j.ncols() != 3 {
        return Err(invalid(format!("mpjpe needs two 21x3 arrays, got {:?} and {:?}", j.dim(), j_gt.dim())));
    }
    check_finite(j, "predicted joints")?;
    check_finite(j_gt, "ground-truth joints")?;
    let pc = j - &j.row(0);
    let gc = j_gt - &j_gt.row(0);
    let pred_len = mean_bone_length(&pc);
    let (scale, scaling_skipped) = if pred_len > 0.0 {
        (mean_bone_length(&gc) / pred_len, false)
    } else {
        (1.0, true)
    };
    Ok(Mpjpe {
        mm: 1000.0 * mean_point_error(&(pc * scale), &gc),
        scale,
        scaling_skipped,
    })
}

pub fn mpjpe(j: &Array2<f64>, j_gt: &Array2<f64>) -> Result<f64> {
    Ok(mpjpe_detailed(j, j_gt)?.mm)
}

/// Mean vertex error after subtracting each mesh's root joint.
pub fn mpvpe(v: &Array2<f64>, v_gt: &Array2<f64>, root: [f64; 3], root_gt: [f64; 3]) -> Result<f64> {
    if v.dim() != v_gt.dim() || v.ncols() != 3 || v.nrows() == 0 {
        return Err(invalid(format!("mpvpe shape mismatch {:?} vs {:?}", v.dim(), v_gt.dim())));
    }
    check_finite(v, "predicted vertices")?;
    check_finite(v_gt, "ground-truth vertices")?;
    let a = v - &ndarray::arr1(&root);
    let b = v_gt - &ndarray::arr1(&root_gt);
    Ok(1000.0 * mean_point_error(&a, &b))
}

pub fn mrrpe(upsilon: [f64; 3], upsilon_gt: [f64; 3]) -> f64 {
    1000.0
        * upsilon
            .iter()
            .zip(&upsilon_gt)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
}

/// Mean norm of the acceleration difference over interior frames and all
/// joints, from second central differences scaled by `fps²`.
pub fn accel_e(j_seq: &[Array2<f64>], j_gt_seq: &[Array2<f64>], fps: f64) -> Result<f64> {
    let t = j_seq.len();
    if t < 3 || j_gt_seq.len() != t {
        return Err(invalid(format!(
            "accel_e needs two sequences of equal length >= 3, got {} and {}",
            t,
            j_gt_seq.len()
        )));
    }
    if !(fps > 0.0 && fps.is_finite()) {
        return Err(invalid(format!("fps must be positive, got {fps}")));
    }
    let dim = j_seq[0].dim();
    if j_seq.iter().chain(j_gt_seq).any(|j| j.dim() != dim) {
        return Err(invalid("accel_e frames must share one shape"));
    }
    let fps2 = fps * fps;
    let mut total = 0.0;
    let mut count = 0usize;
    for f in 1..t - 1 {
        for n in 0..dim.0 {
            let mut sq = 0.0;
            for c in 0..dim.1 {
                let a = (j_seq[f + 1][[n, c]] - 2.0 * j_seq[f][[n, c]] + j_seq[f - 1][[n, c]]) * fps2;
                let b = (j_gt_seq[f + 1][[n, c]] - 2.0 * j_gt_seq[f][[n, c]] + j_gt_seq[f - 1][[n, c]]) * fps2;
                sq += (a - b) * (a - b);
            }
            total += sq.sqrt();
            count += 1;
        }
    }
    Ok(1000.0 * total / count as f64)
}

/// Fraction of errors at or below `threshold`.
pub fn pck(errors: &[f64], threshold: f64) -> f64 {
    errors.iter().filter(|&&e| e <= threshold).count() as f64 / errors.len() as f64
}

/// Normalized trapezoidal area under PCK over 100 uniform thresholds in
/// `[0, max_threshold]`.
pub fn auc(errors: &[f64], max_threshold: f64) -> Result<f64> {
    if errors.is_empty() {
        return Err(invalid("auc needs at least one error value"));
    }
    if !(max_threshold > 0.0 && max_threshold.is_finite()) {
        return Err(invalid(format!("auc threshold must be positive, got {max_threshold}")));
    }
    let ys: Vec<f64> = (0..AUC_STEPS)
        .map(|i| pck(errors, max_threshold * i as f64 / (AUC_STEPS - 1) as f64))
        .collect();
    let area: f64 = ys.windows(2).map(|w| 0.5 * (w[0] + w[1])).sum();
    Ok(area / (AUC_STEPS - 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auc_boundaries() {
        assert_eq!(auc(&[0.0, 0.0], 50.0).unwrap(), 1.0);
        assert_eq!(auc(&[60.0], 50.0).unwrap(), 0.0);
        assert!((auc(&[25.0; 4], 50.0).unwrap() - 0.5).abs() < 0.01);
        assert!(auc(&[], 50.0).is_err());
    }

    #[test]
    fn mrrpe_three_four_five() {
        assert!((mrrpe([0.003, 0.004, 0.0], [0.0; 3]) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn accel_needs_three_frames() {
        let f = vec![Array2::zeros((21, 3)); 2];
        assert!(accel_e(&f, &f, 30.0).is_err());
    }
}
