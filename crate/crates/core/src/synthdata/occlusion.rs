use ndarray::{s, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SequenceSample;
use crate::handkin::Side;

/// Which crops an occlusion touches.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Left,
    Right,
    Both,
}

impl Target {
    fn hits(self, side: Side) -> bool {
        matches!((self, side), (Target::Both, _) | (Target::Left, Side::Left) | (Target::Right, Side::Right))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Occlusion {
    /// Zeroes one random rectangle covering `fraction` of each side of a
    /// randomly chosen hand crop, in every frame.
    PatchMask { fraction: f64 },
    /// Zeroes the whole crop of `target` in the listed frames.
    FrameBlackout { frames: Vec<usize>, target: Target },
}

fn zero_block(crop: &mut Array3<f32>, rng: &mut ChaCha8Rng, fraction: f64) {
    let (h, w, _) = crop.dim();
    let bh = ((h as f64) * fraction).round() as usize;
    let bw = ((w as f64) * fraction).round() as usize;
    if bh == 0 || bw == 0 {
        return;
    }
    let r0 = rng.random_range(0..=h - bh.min(h));
    let c0 = rng.random_range(0..=w - bw.min(w));
    crop.slice_mut(s![r0..r0 + bh.min(h), c0..c0 + bw.min(w), ..]).fill(0.0);
}

/// Applies an occlusion to the crops; ground truth is left untouched.
/// Blacking out one hand removes it from the union crop as well.
pub fn inject_occlusion(sample: &SequenceSample, occlusion: &Occlusion, seed: u64) -> SequenceSample {
    let mut out = sample.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match occlusion {
        Occlusion::PatchMask { fraction } => {
            let fraction = fraction.clamp(0.0, 1.0);
            for f in &mut out.frames {
                let crop = if rng.random_bool(0.5) { &mut f.crop_r } else { &mut f.crop_l };
                zero_block(crop, &mut rng, fraction);
            }
        }
        Occlusion::FrameBlackout { frames, target } => {
            for &t in frames {
                let Some(f) = out.frames.get_mut(t) else { continue };
                if target.hits(Side::Right) {
                    f.crop_r.fill(0.0);
                }
                if target.hits(Side::Left) {
                    f.crop_l.fill(0.0);
                }
                if f.crop_union.is_some() {
                    let kept = match target {
                        Target::Both => None,
                        Target::Left => Some(Side::Right),
                        Target::Right => Some(Side::Left),
                    };
                    let u = match kept {
                        Some(side) => f.render_union(Some(side)).expect("stored boxes are valid"),
                        None => Array3::zeros(f.crop_r.dim()),
                    };
                    f.crop_union = Some(u);
                }
            }
        }
    }
    out
}
