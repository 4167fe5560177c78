//! Training losses.
//!
//! Every term has a plain `f64` evaluator and a tape version used for
//! training. The tape versions of the quotient-weighted and pair-gated terms
//! are custom ops with closed-form backward passes.

use std::sync::Arc;

use ndarray::Array2;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{CustomOp, Graph, Mat, Var};
use crate::error::{invalid, Result};
use crate::geom::WeakPerspectiveCamera;
use crate::handkin::{HandOutput, HandVars};
use crate::net::Prediction;

/// Close-vertex threshold.
pub const DEFAULT_ALPHA: f64 = 0.005;
pub const DEFAULT_CLOSE_VERTICES: usize = 128;

/// How the close-vertex gate compares a ground-truth pair distance with `α`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateMode {
    /// `‖φ‖² ≤ α`.
    #[default]
    Squared,
    /// `‖φ‖ ≤ α`.
    Plain,
}

impl GateMode {
    fn open(self, sq_dist: f64, alpha: f64) -> bool {
        match self {
            GateMode::Squared => sq_dist <= alpha,
            GateMode::Plain => sq_dist.sqrt() <= alpha,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub w_mano: f64,
    pub w_3d: f64,
    pub w_2d: f64,
    pub w_jrel: f64,
    pub w_close: f64,
    pub alpha: f64,
    pub gate: GateMode,
    /// Vertices per hand used by the close-vertex term; 0 means all.
    pub close_vertices: usize,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            w_mano: 1.0,
            w_3d: 1.0,
            w_2d: 1.0,
            w_jrel: 1.0,
            w_close: 1.0,
            alpha: DEFAULT_ALPHA,
            gate: GateMode::Squared,
            close_vertices: DEFAULT_CLOSE_VERTICES,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let ws = [self.w_mano, self.w_3d, self.w_2d, self.w_jrel, self.w_close];
        if ws.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(invalid("loss weights must be finite and nonnegative"));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(invalid(format!("alpha must be positive, got {}", self.alpha)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub mano: f64,
    pub l3d: f64,
    pub l2d: f64,
    pub jrel: f64,
    pub close: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn weighted_total(&self, w: &LossWeights) -> f64 {
        w.w_mano * self.mano + w.w_3d * self.l3d + w.w_2d * self.l2d + w.w_jrel * self.jrel + w.w_close * self.close
    }

    pub fn add_scaled(&mut self, other: &LossBreakdown, s: f64) {
        self.mano += s * other.mano;
        self.l3d += s * other.l3d;
        self.l2d += s * other.l2d;
        self.jrel += s * other.jrel;
        self.close += s * other.close;
        self.total += s * other.total;
    }
}

fn same_shape(a: &Array2<f64>, b: &Array2<f64>, what: &str) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(invalid(format!("{what}: shape {:?} vs {:?}", a.dim(), b.dim())));
    }
    Ok(())
}

/// `Σ‖Δᵢ‖⁴ / Σ‖Δᵢ‖²`, and 0 when every residual is exactly zero.
pub fn maxmse(p: &Array2<f64>, p_gt: &Array2<f64>) -> Result<f64> {
    same_shape(p, p_gt, "maxmse")?;
    if p.nrows() == 0 {
        return Err(invalid("maxmse needs at least one point"));
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (a, b) in p.rows().into_iter().zip(p_gt.rows()) {
        let sq: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
        num += sq * sq;
        den += sq;
    }
    Ok(if den == 0.0 { 0.0 } else { num / den })
}

fn sq_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn l_mano(pred: &Prediction, gt: &Prediction) -> f64 {
    sq_diff(&pred.theta_r, &gt.theta_r)
        + sq_diff(&pred.beta_r, &gt.beta_r)
        + sq_diff(&pred.theta_l, &gt.theta_l)
        + sq_diff(&pred.beta_l, &gt.beta_l)
}

fn root_centered(a: &Array2<f64>, root: &Array2<f64>) -> Array2<f64> {
    a - &root.row(0)
}

pub fn l_3d(v: &Array2<f64>, j: &Array2<f64>, v_gt: &Array2<f64>, j_gt: &Array2<f64>) -> Result<f64> {
    Ok(maxmse(v_gt, v)? + maxmse(j_gt, j)?)
}

/// 3D loss after moving both prediction and target to their own root joint.
pub fn l_3d_rooted(pred: &HandOutput, target: &HandOutput) -> Result<f64> {
    l_3d(
        &root_centered(&pred.vertices, &pred.joints),
        &root_centered(&pred.joints, &pred.joints),
        &root_centered(&target.vertices, &target.joints),
        &root_centered(&target.joints, &target.joints),
    )
}

pub fn l_2d(cam: &WeakPerspectiveCamera, j: &Array2<f64>, j_gt: &Array2<f64>) -> Result<f64> {
    maxmse(&cam.project(j), j_gt)
}

/// Sum over every right/left joint pair of the squared change in the vector
/// from right joint `i` to left joint `k`. Inputs share one frame.
pub fn l_jrel(jr: &Array2<f64>, jl: &Array2<f64>, jr_gt: &Array2<f64>, jl_gt: &Array2<f64>) -> Result<f64> {
    same_shape(jr, jr_gt, "l_jrel right")?;
    same_shape(jl, jl_gt, "l_jrel left")?;
    let mut total = 0.0;
    for i in 0..jr.nrows() {
        for k in 0..jl.nrows() {
            for c in 0..3 {
                let pred = jl[[k, c]] - jr[[i, c]];
                let gt = jl_gt[[k, c]] - jr_gt[[i, c]];
                total += (pred - gt) * (pred - gt);
            }
        }
    }
    Ok(total)
}

/// Close-vertex loss with the literal gate `‖φ_gt‖² ≤ α` over all pairs.
pub fn l_close(
    vr: &Array2<f64>,
    vl: &Array2<f64>,
    vr_gt: &Array2<f64>,
    vl_gt: &Array2<f64>,
    alpha: f64,
) -> Result<f64> {
    l_close_with(vr, vl, vr_gt, vl_gt, alpha, GateMode::Squared, None)
}

pub fn l_close_with(
    vr: &Array2<f64>,
    vl: &Array2<f64>,
    vr_gt: &Array2<f64>,
    vl_gt: &Array2<f64>,
    alpha: f64,
    gate: GateMode,
    subset: Option<&[usize]>,
) -> Result<f64> {
    same_shape(vr, vr_gt, "l_close right")?;
    same_shape(vl, vl_gt, "l_close left")?;
    let all: Vec<usize>;
    let idx = match subset {
        Some(s) => s,
        None => {
            all = (0..vr.nrows().min(vl.nrows())).collect();
            &all
        }
    };
    let pairs = close_pairs(vr_gt, vl_gt, idx, alpha, gate);
    let mut total = 0.0;
    for &(i, k) in &pairs {
        for c in 0..3 {
            let d = (vl[[k, c]] - vr[[i, c]]) - (vl_gt[[k, c]] - vr_gt[[i, c]]);
            total += d * d;
        }
    }
    Ok(total)
}

/// Ground-truth pairs `(i, k)` whose right-to-left vector passes the gate.
fn close_pairs(vr_gt: &Array2<f64>, vl_gt: &Array2<f64>, idx: &[usize], alpha: f64, gate: GateMode) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for &i in idx {
        for &k in idx {
            let sq: f64 = (0..3).map(|c| (vl_gt[[k, c]] - vr_gt[[i, c]]).powi(2)).sum();
            if gate.open(sq, alpha) {
                pairs.push((i, k));
            }
        }
    }
    pairs
}

/// Seeded vertex subset for the close-vertex term.
pub fn close_indices(n_vertices: usize, count: usize, seed: u64) -> Vec<usize> {
    if count == 0 || count >= n_vertices {
        return (0..n_vertices).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, n_vertices, count).into_vec();
    idx.sort_unstable();
    idx
}

/// Ground truth for one frame. Meshes are in each hand's own frame; `j2d_*`
/// are in normalized crop coordinates to match the predicted cameras.
#[derive(Clone, Debug)]
pub struct FrameTargets {
    pub params: Prediction,
    pub right: HandOutput,
    pub left: HandOutput,
    pub j2d_r: Array2<f64>,
    pub j2d_l: Array2<f64>,
}

/// Both hands in right-root-centered coordinates, the left hand placed by `υ`.
pub struct CommonFrame {
    pub jr: Array2<f64>,
    pub jl: Array2<f64>,
    pub vr: Array2<f64>,
    pub vl: Array2<f64>,
}

pub fn common_frame(right: &HandOutput, left: &HandOutput, upsilon: [f64; 3]) -> CommonFrame {
    let ups = ndarray::arr1(&upsilon);
    let rr = right.joints.row(0).to_owned();
    let lr = left.joints.row(0).to_owned() - &ups;
    CommonFrame {
        jr: &right.joints - &rr,
        jl: &left.joints - &lr,
        vr: &right.vertices - &rr,
        vl: &left.vertices - &lr,
    }
}

pub fn total_loss(
    pred: &Prediction,
    pred_right: &HandOutput,
    pred_left: &HandOutput,
    target: &FrameTargets,
    w: &LossWeights,
    close_subset: Option<&[usize]>,
) -> Result<LossBreakdown> {
    let p = common_frame(pred_right, pred_left, pred.upsilon);
    let t = common_frame(&target.right, &target.left, target.params.upsilon);
    let mut b = LossBreakdown {
        mano: l_mano(pred, &target.params),
        l3d: l_3d_rooted(pred_right, &target.right)? + l_3d_rooted(pred_left, &target.left)?,
        l2d: l_2d(&pred.cam_r, &pred_right.joints, &target.j2d_r)? + l_2d(&pred.cam_l, &pred_left.joints, &target.j2d_l)?,
        jrel: l_jrel(&p.jr, &p.jl, &t.jr, &t.jl)?,
        close: l_close_with(&p.vr, &p.vl, &t.vr, &t.vl, w.alpha, w.gate, close_subset)?,
        total: 0.0,
    };
    b.total = b.weighted_total(w);
    Ok(b)
}

// ---- tape versions ----

struct MaxMseOp {
    residual: Mat,
    sq: Vec<f64>,
    num: f64,
    den: f64,
}

impl CustomOp for MaxMseOp {
    fn backward(&self, _inputs: &[&Mat], _output: &Mat, grad: &Mat) -> Vec<Mat> {
        let mut out = Mat::zeros(self.residual.dim());
        if self.den > 0.0 {
            let f = self.num / self.den;
            let g = grad[[0, 0]];
            for (i, mut row) in out.rows_mut().into_iter().enumerate() {
                let coef = g * 2.0 * (2.0 * self.sq[i] - f) / self.den;
                row.assign(&(&self.residual.row(i) * coef));
            }
        }
        vec![out]
    }
}

/// maxMSE of a predicted tensor against a constant target.
pub fn maxmse_graph(g: &mut Graph, p: Var, target: &Mat) -> Var {
    let residual = g.value(p) - target;
    let sq: Vec<f64> = residual.rows().into_iter().map(|r| r.dot(&r)).collect();
    let den: f64 = sq.iter().sum();
    let num: f64 = sq.iter().map(|s| s * s).sum();
    let value = if den == 0.0 { 0.0 } else { num / den };
    g.custom(&[p], Mat::from_elem((1, 1), value), Box::new(MaxMseOp { residual, sq, num, den }))
}

pub fn l_mano_graph(g: &mut Graph, theta_beta: &[(Var, &[f64])]) -> Var {
    let mut terms = Vec::with_capacity(theta_beta.len());
    for (v, gt) in theta_beta {
        let t = g.constant(Mat::from_shape_vec((1, gt.len()), gt.to_vec()).expect("row"));
        let d = g.sub(*v, t);
        terms.push(g.sum_sq(d));
    }
    sum_vars(g, &terms)
}

fn sum_vars(g: &mut Graph, terms: &[Var]) -> Var {
    let mut acc = terms[0];
    for t in &terms[1..] {
        acc = g.add(acc, *t);
    }
    acc
}

/// 3D loss; `v`, `j` on the tape, targets constant.
pub fn l_3d_graph(g: &mut Graph, v: Var, j: Var, v_gt: &Array2<f64>, j_gt: &Array2<f64>) -> Var {
    let a = maxmse_graph(g, v, v_gt);
    let b = maxmse_graph(g, j, j_gt);
    g.add(a, b)
}

/// 3D loss after moving both prediction and target to their own root joint.
pub fn l_3d_rooted_graph(g: &mut Graph, hand: HandVars, target: &HandOutput) -> Var {
    let root = g.row(hand.joints, 0);
    let v = g.sub_row(hand.vertices, root);
    let j = g.sub_row(hand.joints, root);
    l_3d_graph(
        g,
        v,
        j,
        &root_centered(&target.vertices, &target.joints),
        &root_centered(&target.joints, &target.joints),
    )
}

/// 2D loss with camera `cam` as a `1×3` row `(k, tx, ty)`.
pub fn l_2d_graph(g: &mut Graph, cam: Var, j: Var, j_gt: &Array2<f64>) -> Var {
    let xy = g.slice_cols(j, 0, 2);
    let k = g.slice_cols(cam, 0, 1);
    let kk = g.concat_cols(&[k, k]);
    let t = g.slice_cols(cam, 1, 3);
    let scaled = g.mul_row(xy, kk);
    let proj = g.add_row(scaled, t);
    maxmse_graph(g, proj, j_gt)
}

/// Joint-relation loss in closed form:
/// `Σᵢₖ‖aₖ − bᵢ‖² = N_R Σ‖aₖ‖² + N_L Σ‖bᵢ‖² − 2 (Σa)·(Σb)`.
pub fn l_jrel_graph(g: &mut Graph, jr: Var, jl: Var, jr_gt: &Array2<f64>, jl_gt: &Array2<f64>) -> Var {
    let nr = jr_gt.nrows() as f64;
    let nl = jl_gt.nrows() as f64;
    let tr = g.constant(jr_gt.clone());
    let tl = g.constant(jl_gt.clone());
    let b = g.sub(jr, tr);
    let a = g.sub(jl, tl);
    let sa = g.sum_sq(a);
    let sb = g.sum_sq(b);
    let ma = g.mean_rows(a);
    let mb = g.mean_rows(b);
    let cross = g.mul(ma, mb);
    let cross = g.sum(cross);
    let t1 = g.scale(sa, nr);
    let t2 = g.scale(sb, nl);
    let t3 = g.scale(cross, -2.0 * nr * nl);
    let s = g.add(t1, t2);
    g.add(s, t3)
}

struct ClosePairsOp {
    pairs: Arc<Vec<(usize, usize)>>,
    /// Per active pair, predicted minus ground-truth relation vector.
    diffs: Vec<[f64; 3]>,
    n_right: usize,
    n_left: usize,
}

impl CustomOp for ClosePairsOp {
    fn backward(&self, _inputs: &[&Mat], _output: &Mat, grad: &Mat) -> Vec<Mat> {
        let g = grad[[0, 0]];
        let mut gr = Mat::zeros((self.n_right, 3));
        let mut gl = Mat::zeros((self.n_left, 3));
        for (&(i, k), d) in self.pairs.iter().zip(&self.diffs) {
            for c in 0..3 {
                gl[[k, c]] += 2.0 * g * d[c];
                gr[[i, c]] -= 2.0 * g * d[c];
            }
        }
        vec![gr, gl]
    }
}

/// Close-vertex loss on the tape. `vr`, `vl` share one frame; the gate is
/// fixed by the ground truth.
#[allow(clippy::too_many_arguments)]
pub fn l_close_graph(
    g: &mut Graph,
    vr: Var,
    vl: Var,
    vr_gt: &Array2<f64>,
    vl_gt: &Array2<f64>,
    alpha: f64,
    gate: GateMode,
    subset: Option<&[usize]>,
) -> Var {
    let all: Vec<usize>;
    let idx = match subset {
        Some(s) => s,
        None => {
            all = (0..vr_gt.nrows().min(vl_gt.nrows())).collect();
            &all
        }
    };
    let pairs = close_pairs(vr_gt, vl_gt, idx, alpha, gate);
    let (pr, pl) = (g.value(vr), g.value(vl));
    let mut total = 0.0;
    let diffs: Vec<[f64; 3]> = pairs
        .iter()
        .map(|&(i, k)| {
            let d: [f64; 3] = std::array::from_fn(|c| (pl[[k, c]] - pr[[i, c]]) - (vl_gt[[k, c]] - vr_gt[[i, c]]));
            total += d.iter().map(|x| x * x).sum::<f64>();
            d
        })
        .collect();
    let op = ClosePairsOp {
        pairs: Arc::new(pairs),
        diffs,
        n_right: pr.nrows(),
        n_left: pl.nrows(),
    };
    g.custom(&[vr, vl], Mat::from_elem((1, 1), total), Box::new(op))
}

/// Tape handles of one frame's decoded prediction.
#[derive(Clone, Copy, Debug)]
pub struct PredVars {
    pub theta_r: Var,
    pub beta_r: Var,
    /// `1×3` row `(k, tx, ty)`.
    pub cam_r: Var,
    pub theta_l: Var,
    pub beta_l: Var,
    pub cam_l: Var,
    /// `1×3`.
    pub upsilon: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub mano: Var,
    pub l3d: Var,
    pub l2d: Var,
    pub jrel: Var,
    pub close: Var,
    pub total: Var,
}

impl LossVars {
    pub fn breakdown(&self, g: &Graph) -> LossBreakdown {
        LossBreakdown {
            mano: g.scalar(self.mano),
            l3d: g.scalar(self.l3d),
            l2d: g.scalar(self.l2d),
            jrel: g.scalar(self.jrel),
            close: g.scalar(self.close),
            total: g.scalar(self.total),
        }
    }
}

/// Places both predicted hands in right-root-centered coordinates.
fn common_frame_graph(g: &mut Graph, right: HandVars, left: HandVars, upsilon: Var) -> (Var, Var, Var, Var) {
    let rr = g.row(right.joints, 0);
    let lr = g.row(left.joints, 0);
    let shift = g.sub(upsilon, lr);
    let jr = g.sub_row(right.joints, rr);
    let vr = g.sub_row(right.vertices, rr);
    let jl = g.add_row(left.joints, shift);
    let vl = g.add_row(left.vertices, shift);
    (jr, jl, vr, vl)
}

/// Weighted total over one frame on the tape. Terms with zero weight are
/// evaluated as constants so they add no backward work.
pub fn total_loss_graph(
    g: &mut Graph,
    pred: &PredVars,
    right: HandVars,
    left: HandVars,
    target: &FrameTargets,
    w: &LossWeights,
    close_subset: Option<&[usize]>,
) -> LossVars {
    let zero = |g: &mut Graph| g.constant(Mat::zeros((1, 1)));
    let gt = &target.params;

    let mano = if w.w_mano > 0.0 {
        l_mano_graph(
            g,
            &[
                (pred.theta_r, &gt.theta_r),
                (pred.beta_r, &gt.beta_r),
                (pred.theta_l, &gt.theta_l),
                (pred.beta_l, &gt.beta_l),
            ],
        )
    } else {
        zero(g)
    };
    let l3d = if w.w_3d > 0.0 {
        let a = l_3d_rooted_graph(g, right, &target.right);
        let b = l_3d_rooted_graph(g, left, &target.left);
        g.add(a, b)
    } else {
        zero(g)
    };
    let l2d = if w.w_2d > 0.0 {
        let a = l_2d_graph(g, pred.cam_r, right.joints, &target.j2d_r);
        let b = l_2d_graph(g, pred.cam_l, left.joints, &target.j2d_l);
        g.add(a, b)
    } else {
        zero(g)
    };
    let needs_frame = w.w_jrel > 0.0 || w.w_close > 0.0;
    let (jrel, close) = if needs_frame {
        let (jr, jl, vr, vl) = common_frame_graph(g, right, left, pred.upsilon);
        let t = common_frame(&target.right, &target.left, gt.upsilon);
        let jrel = if w.w_jrel > 0.0 { l_jrel_graph(g, jr, jl, &t.jr, &t.jl) } else { zero(g) };
        let close = if w.w_close > 0.0 {
            l_close_graph(g, vr, vl, &t.vr, &t.vl, w.alpha, w.gate, close_subset)
        } else {
            zero(g)
        };
        (jrel, close)
    } else {
        (zero(g), zero(g))
    };

    let parts = [
        (mano, w.w_mano),
        (l3d, w.w_3d),
        (l2d, w.w_2d),
        (jrel, w.w_jrel),
        (close, w.w_close),
    ];
    let scaled: Vec<Var> = parts.iter().map(|&(v, wt)| g.scale(v, wt)).collect();
    let total = sum_vars(g, &scaled);
    LossVars { mano, l3d, l2d, jrel, close, total }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn maxmse_examples() {
        let p = array![[1.0, 0.0, 0.0], [1.0, 0.0, 0.0]];
        assert_eq!(maxmse(&p, &Array2::zeros((2, 3))).unwrap(), 1.0);
        let p = array![[1.0, 0.0, 0.0], [3.0, 0.0, 0.0]];
        assert!((maxmse(&p, &Array2::zeros((2, 3))).unwrap() - 8.2).abs() < 1e-12);
        assert_eq!(maxmse(&p, &p).unwrap(), 0.0);
        assert!(maxmse(&p, &Array2::zeros((3, 3))).is_err());
    }

    #[test]
    fn close_gate_single_pair() {
        let vr_gt = array![[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]];
        let vl_gt = array![[0.0, 0.0, 0.0], [-1.0, -1.0, -1.0]];
        let mut vl = vl_gt.clone();
        vl[[0, 0]] = 0.001;
        let v = l_close(&vr_gt, &vl, &vr_gt, &vl_gt, DEFAULT_ALPHA).unwrap();
        assert!((v - 1e-6).abs() < 1e-15);
    }

    #[test]
    fn subset_is_sorted_and_sized() {
        let idx = close_indices(778, 128, 4);
        assert_eq!(idx.len(), 128);
        assert!(idx.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(close_indices(10, 128, 0).len(), 10);
    }
}
