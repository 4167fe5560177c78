//! Smooth two-hand trajectories.

use std::f64::consts::{PI, TAU};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::DataConfig;
use crate::blob::round_f32;
use crate::error::{invalid, Result};
use crate::geom::WeakPerspectiveCamera;
use crate::handkin::{HandModel, HandParams, Side, NUM_POSED_JOINTS, POSE_DIM, SHAPE_DIM};

/// Box side over joint extent.
pub const BOX_MARGIN: f64 = 1.3;
/// Box-center separation at interaction level 0, in units of the largest
/// box width of the sequence.
const FAR_SEPARATION: f64 = 5.0;
const NEAR_SEPARATION: f64 = 0.3;
/// Required minimum separation lags the nominal one by this many widths.
const SEPARATION_SLACK: f64 = 0.5;
const WOBBLE: f64 = 0.1;

/// Two hands' parameters, root translations and the camera over `T` frames.
/// All values are already rounded to `f32` precision.
#[derive(Clone, Debug, PartialEq)]
pub struct Motion {
    pub params_r: Vec<HandParams>,
    pub params_l: Vec<HandParams>,
    pub trans_r: Vec<[f64; 3]>,
    pub trans_l: Vec<[f64; 3]>,
    pub camera: WeakPerspectiveCamera,
    pub interaction: f64,
}

/// `base + Σ aₛ sin(2π fₛ τ / fps + φₛ)` with at most three terms.
#[derive(Clone, Debug)]
struct Track {
    base: f64,
    terms: Vec<(f64, f64, f64)>,
}

impl Track {
    fn sample(rng: &mut ChaCha8Rng, base: f64, amp_budget: f64, max_freq: f64) -> Self {
        let n = rng.random_range(1..=3);
        let total = rng.random_range(0.0..=amp_budget);
        let shares: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
        let sum: f64 = shares.iter().sum();
        let terms = shares
            .iter()
            .map(|s| {
                let a = total * s / sum;
                let f = rng.random_range(0.2 * max_freq..=max_freq);
                let phase = rng.random_range(0.0..TAU);
                (a, f, phase)
            })
            .collect();
        Self { base, terms }
    }

    fn at(&self, source_frame: f64, fps: f64) -> f64 {
        self.base
            + self
                .terms
                .iter()
                .map(|(a, f, p)| a * (TAU * f * source_frame / fps + p).sin())
                .sum::<f64>()
    }
}

/// Pose tracks in the right-hand convention.
fn pose_tracks(rng: &mut ChaCha8Rng, cfg: &DataConfig) -> Vec<Track> {
    let budget = cfg.max_amplitude;
    let f = cfg.max_freq_hz;
    let mut tracks = Vec::with_capacity(POSE_DIM);
    // Global orientation: modest tilt away from facing the camera.
    let dir: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
    let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-9);
    let angle = rng.random_range(0.0..0.5);
    for d in dir {
        tracks.push(Track::sample(rng, d / norm * angle, budget.min(0.3), f));
    }
    for j in 1..NUM_POSED_JOINTS {
        let thumb = j <= 3;
        let flex_max = if thumb { 0.4 } else { 0.8 };
        let flex = rng.random_range(0.0..flex_max);
        tracks.push(Track::sample(rng, flex, budget, f));
        let twist = rng.random_range(-0.1..0.1);
        tracks.push(Track::sample(rng, twist, budget.min(0.1), f));
        let spread = rng.random_range(-0.15..0.15);
        tracks.push(Track::sample(rng, spread, budget.min(0.15), f));
    }
    tracks
}

fn hand_params(tracks: &[Track], beta: &[f64], tau: f64, fps: f64, side: Side) -> HandParams {
    let right = HandParams {
        theta: tracks.iter().map(|t| round_f32(t.at(tau, fps))).collect(),
        beta: beta.to_vec(),
        side: Side::Right,
    };
    match side {
        Side::Right => right,
        Side::Left => right.mirrored(),
    }
}

/// Joint-extent box width in meters (before camera scaling) and the
/// joint-bbox center.
pub(crate) fn extent_box(joints: &ndarray::Array2<f64>, aspect_w_over_h: f64) -> (f64, [f64; 2]) {
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for r in joints.rows() {
        for c in 0..2 {
            lo[c] = lo[c].min(r[c]);
            hi[c] = hi[c].max(r[c]);
        }
    }
    let sx = BOX_MARGIN * (hi[0] - lo[0]).max((hi[1] - lo[1]) * aspect_w_over_h);
    (sx, [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0])
}

/// Samples a sequence. `interaction_level` 1 puts the boxes on top of each
/// other; 0 keeps box centers more than four box widths apart.
pub fn sample_motion(
    model: &HandModel,
    cfg: &DataConfig,
    rng: &mut ChaCha8Rng,
    interaction_level: f64,
) -> Result<Motion> {
    if !(0.0..=1.0).contains(&interaction_level) {
        return Err(invalid(format!("interaction level must lie in [0, 1], got {interaction_level}")));
    }
    let t_len = cfg.seq_len;
    let fps = cfg.base_fps;
    let taus: Vec<f64> = (0..t_len).map(|t| (t * cfg.gap) as f64).collect();

    let tracks_r = pose_tracks(rng, cfg);
    let tracks_l = pose_tracks(rng, cfg);
    let beta_r: Vec<f64> = (0..SHAPE_DIM).map(|_| round_f32(rng.random_range(-2.0..2.0))).collect();
    let beta_l: Vec<f64> = (0..SHAPE_DIM).map(|_| round_f32(rng.random_range(-2.0..2.0))).collect();
    let params_r: Vec<HandParams> = taus.iter().map(|&t| hand_params(&tracks_r, &beta_r, t, fps, Side::Right)).collect();
    let params_l: Vec<HandParams> = taus.iter().map(|&t| hand_params(&tracks_l, &beta_l, t, fps, Side::Left)).collect();

    let aspect = cfg.crop_w as f64 / cfg.crop_h as f64;
    let mut max_sx: f64 = 0.0;
    let mut centers_r = Vec::with_capacity(t_len);
    let mut centers_l = Vec::with_capacity(t_len);
    for (pr, pl) in params_r.iter().zip(&params_l) {
        let (sr, cr) = extent_box(&model.forward(pr)?.joints, aspect);
        let (sl, cl) = extent_box(&model.forward(pl)?.joints, aspect);
        max_sx = max_sx.max(sr).max(sl);
        centers_r.push(cr);
        centers_l.push(cl);
    }
    let mean = |cs: &[[f64; 2]]| {
        let n = cs.len() as f64;
        [cs.iter().map(|c| c[0]).sum::<f64>() / n, cs.iter().map(|c| c[1]).sum::<f64>() / n]
    };
    let (mr, ml) = (mean(&centers_r), mean(&centers_l));

    let nominal = NEAR_SEPARATION + (FAR_SEPARATION - NEAR_SEPARATION) * (1.0 - interaction_level);
    let required = (nominal - SEPARATION_SLACK).max(0.0) * max_sx;
    let psi = PI + rng.random_range(-0.5..0.5);
    let dir = [psi.cos(), psi.sin()];
    let z_offset = rng.random_range(-0.03..0.03);
    let wobble: Vec<Track> = (0..6)
        .map(|i| {
            let amp = if i % 3 == 2 { 0.02 } else { WOBBLE * max_sx };
            Track::sample(rng, 0.0, amp, cfg.max_freq_hz)
        })
        .collect();
    let scale = round_f32(rng.random_range(cfg.scale_range[0]..=cfg.scale_range[1]));
    let tx = round_f32(cfg.image_w as f64 / 2.0 + rng.random_range(-20.0..20.0));
    let ty = round_f32(cfg.image_h as f64 / 2.0 + rng.random_range(-20.0..20.0));

    let place = |d: f64| -> (Vec<[f64; 3]>, Vec<[f64; 3]>, f64) {
        let mut tr = Vec::with_capacity(t_len);
        let mut tl = Vec::with_capacity(t_len);
        let mut min_sep = f64::INFINITY;
        for (t, &tau) in taus.iter().enumerate() {
            let w: Vec<f64> = wobble.iter().map(|k| k.at(tau, fps)).collect();
            let r = [
                round_f32(-mr[0] - 0.5 * d * dir[0] + w[0]),
                round_f32(-mr[1] - 0.5 * d * dir[1] + w[1]),
                round_f32(-0.5 * z_offset + w[2]),
            ];
            let l = [
                round_f32(-ml[0] + 0.5 * d * dir[0] + w[3]),
                round_f32(-ml[1] + 0.5 * d * dir[1] + w[4]),
                round_f32(0.5 * z_offset + w[5]),
            ];
            let dx = (centers_l[t][0] + l[0]) - (centers_r[t][0] + r[0]);
            let dy = (centers_l[t][1] + l[1]) - (centers_r[t][1] + r[1]);
            min_sep = min_sep.min((dx * dx + dy * dy).sqrt());
            tr.push(r);
            tl.push(l);
        }
        (tr, tl, min_sep)
    };
    let mut d = nominal * max_sx;
    let (mut trans_r, mut trans_l, mut min_sep) = place(d);
    for _ in 0..20 {
        if min_sep >= required {
            break;
        }
        d += (required - min_sep) + 0.05 * max_sx;
        (trans_r, trans_l, min_sep) = place(d);
    }

    Ok(Motion {
        params_r,
        params_l,
        trans_r,
        trans_l,
        camera: WeakPerspectiveCamera::new(scale, tx, ty)?,
        interaction: interaction_level,
    })
}
