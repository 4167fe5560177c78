//! Synthetic two-hand sequences: smooth motion, ground-truth meshes,
//! weak-perspective projection, crop boxes and joint-heatmap crops.
//!
//! Every stored number is rounded to `f32` when it is produced, so the
//! on-disk dataset reproduces the in-memory one bit for bit and the ground
//! truth can be recomputed exactly from the stored parameters.

mod io;
mod motion;
mod occlusion;
mod render;

pub use io::{load_dataset, make_dataset, write_dataset, Dataset, DatasetManifest, SampleEntry, DATA_BLOB, DATA_MANIFEST};
pub use motion::{sample_motion, Motion, BOX_MARGIN};
pub use occlusion::{inject_occlusion, Occlusion, Target};
pub use render::{box_from_joints, render_crop, to_crop_coords, union_box, Splat, CHANNELS};

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::blob::round_f32;
use crate::error::{invalid, Error, Result};
use crate::geom::{BoundingBox, WeakPerspectiveCamera};
use crate::handkin::{HandModel, HandOutput, HandParams, Side, DEFAULT_VERTICES};
use crate::losses::FrameTargets;
use crate::net::{FrameInput, Prediction};

/// Far-away companion box offset for single-hand inputs, in box widths and
/// heights.
pub const SENTINEL_OFFSET: f64 = 10.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OcclusionConfig {
    /// Probability that a sequence gets a random patch mask.
    pub patch_prob: f64,
    pub patch_fraction: f64,
    /// Probability that one random frame of one hand is blacked out.
    pub blackout_prob: f64,
}

impl Default for OcclusionConfig {
    fn default() -> Self {
        Self {
            patch_prob: 0.0,
            patch_fraction: 0.3,
            blackout_prob: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub count: usize,
    pub seq_len: usize,
    /// Source frames between consecutive stored frames.
    pub gap: usize,
    pub base_fps: f64,
    pub image_w: usize,
    pub image_h: usize,
    pub crop_h: usize,
    pub crop_w: usize,
    pub n_vertices: usize,
    pub template_seed: u64,
    pub seed: u64,
    /// Interaction levels are drawn uniformly from this range.
    pub interaction: [f64; 2],
    /// Camera scale range in pixels per meter.
    pub scale_range: [f64; 2],
    pub max_freq_hz: f64,
    /// Bound on the summed sinusoid amplitudes of one pose angle, radians.
    pub max_amplitude: f64,
    /// Also render a crop of the union box for the holistic variant.
    pub render_union: bool,
    pub occlusion: OcclusionConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            count: 16,
            seq_len: 9,
            gap: 5,
            base_fps: 30.0,
            image_w: 640,
            image_h: 480,
            crop_h: 64,
            crop_w: 48,
            n_vertices: DEFAULT_VERTICES,
            template_seed: 0,
            seed: 0,
            interaction: [0.0, 1.0],
            scale_range: [380.0, 520.0],
            max_freq_hz: 0.3,
            max_amplitude: 0.6,
            render_union: true,
            occlusion: OcclusionConfig::default(),
        }
    }
}

impl DataConfig {
    /// Frame rate of the stored, subsampled sequence.
    pub fn fps(&self) -> f64 {
        self.base_fps / self.gap as f64
    }

    /// Source frames spanned by one sequence.
    pub fn source_frames(&self) -> usize {
        (self.seq_len - 1) * self.gap + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.seq_len == 0 || self.gap == 0 || self.crop_h == 0 || self.crop_w == 0 {
            return Err(invalid("seq_len, gap and crop size must be positive"));
        }
        if !(self.base_fps > 0.0) {
            return Err(invalid("base_fps must be positive"));
        }
        let [lo, hi] = self.interaction;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return Err(invalid(format!("interaction range {lo}..{hi} must lie within [0, 1]")));
        }
        let [s0, s1] = self.scale_range;
        if !(0.0 < s0 && s0 <= s1) {
            return Err(invalid("scale_range must be positive and ordered"));
        }
        if !(self.max_freq_hz > 0.0 && self.max_amplitude >= 0.0) {
            return Err(invalid("motion frequency must be positive and amplitude nonnegative"));
        }
        let o = &self.occlusion;
        if !(0.0..=1.0).contains(&o.patch_prob) || !(0.0..=1.0).contains(&o.blackout_prob) || !(0.0..=1.0).contains(&o.patch_fraction) {
            return Err(invalid("occlusion probabilities and fraction must lie in [0, 1]"));
        }
        if self.n_vertices < crate::handkin::NUM_JOINTS {
            return Err(invalid("n_vertices must be at least 21"));
        }
        Ok(())
    }

    pub fn hand_model(&self) -> Result<HandModel> {
        HandModel::new(self.template_seed, self.n_vertices)
    }
}

/// One frame of a sequence. Meshes and joints are world-frame (meters),
/// `j2d_*` are image pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameRecord {
    pub crop_r: Array3<f32>,
    pub crop_l: Array3<f32>,
    pub crop_union: Option<Array3<f32>>,
    pub box_r: BoundingBox,
    pub box_l: BoundingBox,
    pub params_r: HandParams,
    pub params_l: HandParams,
    pub trans_r: [f64; 3],
    pub trans_l: [f64; 3],
    pub camera: WeakPerspectiveCamera,
    pub j_r: Array2<f64>,
    pub j_l: Array2<f64>,
    pub v_r: Array2<f64>,
    pub v_l: Array2<f64>,
    pub j2d_r: Array2<f64>,
    pub j2d_l: Array2<f64>,
}

fn add_trans(a: &Array2<f64>, t: [f64; 3]) -> Array2<f64> {
    let mut out = a + &ndarray::arr1(&t);
    out.mapv_inplace(round_f32);
    out
}

fn round_box(b: BoundingBox) -> BoundingBox {
    BoundingBox::new(round_f32(b.cx), round_f32(b.cy), round_f32(b.sx), round_f32(b.sy))
}

fn depth(j: &Array2<f64>) -> Vec<f64> {
    j.column(2).to_vec()
}

impl FrameRecord {
    /// World-frame joints and vertices from parameters and translation,
    /// rounded as stored.
    pub fn world_hand(model: &HandModel, params: &HandParams, trans: [f64; 3]) -> Result<HandOutput> {
        let out = model.forward(params)?;
        Ok(HandOutput {
            vertices: add_trans(&out.vertices, trans),
            joints: add_trans(&out.joints, trans),
        })
    }

    pub fn project_rounded(camera: &WeakPerspectiveCamera, joints: &Array2<f64>) -> Array2<f64> {
        camera.project(joints).mapv(round_f32)
    }

    fn build(model: &HandModel, cfg: &DataConfig, motion: &Motion, t: usize) -> Result<Self> {
        let right = Self::world_hand(model, &motion.params_r[t], motion.trans_r[t])?;
        let left = Self::world_hand(model, &motion.params_l[t], motion.trans_l[t])?;
        let j2d_r = Self::project_rounded(&motion.camera, &right.joints);
        let j2d_l = Self::project_rounded(&motion.camera, &left.joints);
        let box_r = round_box(box_from_joints(&j2d_r, cfg.crop_h, cfg.crop_w));
        let box_l = round_box(box_from_joints(&j2d_l, cfg.crop_h, cfg.crop_w));
        let dr = depth(&right.joints);
        let dl = depth(&left.joints);
        let crop_r = render_crop(&[Splat { j2d: &j2d_r, depth: &dr }], &box_r, cfg.crop_h, cfg.crop_w)?;
        let crop_l = render_crop(&[Splat { j2d: &j2d_l, depth: &dl }], &box_l, cfg.crop_h, cfg.crop_w)?;
        let mut rec = Self {
            crop_r,
            crop_l,
            crop_union: None,
            box_r,
            box_l,
            params_r: motion.params_r[t].clone(),
            params_l: motion.params_l[t].clone(),
            trans_r: motion.trans_r[t],
            trans_l: motion.trans_l[t],
            camera: motion.camera,
            j_r: right.joints,
            j_l: left.joints,
            v_r: right.vertices,
            v_l: left.vertices,
            j2d_r,
            j2d_l,
        };
        if cfg.render_union {
            rec.crop_union = Some(rec.render_union(None)?);
        }
        Ok(rec)
    }

    pub fn crop_size(&self) -> (usize, usize) {
        let (h, w, _) = self.crop_r.dim();
        (h, w)
    }

    pub fn union_box(&self) -> BoundingBox {
        let (h, w) = self.crop_size();
        round_box(union_box(&self.box_r, &self.box_l, h, w))
    }

    /// Union-box crop with both hands, or only `only` when given.
    pub fn render_union(&self, only: Option<Side>) -> Result<Array3<f32>> {
        let (h, w) = self.crop_size();
        let dr = depth(&self.j_r);
        let dl = depth(&self.j_l);
        let mut hands = Vec::with_capacity(2);
        if only != Some(Side::Left) {
            hands.push(Splat { j2d: &self.j2d_r, depth: &dr });
        }
        if only != Some(Side::Right) {
            hands.push(Splat { j2d: &self.j2d_l, depth: &dl });
        }
        render_crop(&hands, &self.union_box(), h, w)
    }

    /// Left root minus right root, in meters.
    pub fn upsilon(&self) -> [f64; 3] {
        std::array::from_fn(|c| self.j_l[[0, c]] - self.j_r[[0, c]])
    }

    /// Camera taking this hand's model-frame joints to normalized
    /// coordinates of `b`.
    pub fn crop_camera(&self, side: Side, b: &BoundingBox) -> WeakPerspectiveCamera {
        let trans = match side {
            Side::Right => self.trans_r,
            Side::Left => self.trans_l,
        };
        let k = 2.0 / b.sx;
        let cam = &self.camera;
        WeakPerspectiveCamera {
            scale: k * cam.scale,
            tx: k * (cam.scale * trans[0] + cam.tx - b.cx),
            ty: k * (cam.scale * trans[1] + cam.ty - b.cy),
        }
    }

    /// Ground truth as a prediction. Cameras refer to each hand's own crop,
    /// or to the union crop when `holistic`.
    pub fn gt(&self, holistic: bool) -> Prediction {
        let (br, bl) = if holistic {
            let u = self.union_box();
            (u, u)
        } else {
            (self.box_r, self.box_l)
        };
        Prediction {
            theta_r: self.params_r.theta.clone(),
            theta_l: self.params_l.theta.clone(),
            beta_r: self.params_r.beta.clone(),
            beta_l: self.params_l.beta.clone(),
            upsilon: self.upsilon(),
            cam_r: self.crop_camera(Side::Right, &br),
            cam_l: self.crop_camera(Side::Left, &bl),
        }
    }

    pub fn targets(&self, holistic: bool) -> FrameTargets {
        let (br, bl) = if holistic {
            let u = self.union_box();
            (u, u)
        } else {
            (self.box_r, self.box_l)
        };
        FrameTargets {
            params: self.gt(holistic),
            right: HandOutput {
                vertices: self.v_r.clone(),
                joints: self.j_r.clone(),
            },
            left: HandOutput {
                vertices: self.v_l.clone(),
                joints: self.j_l.clone(),
            },
            j2d_r: to_crop_coords(&self.j2d_r, &br),
            j2d_l: to_crop_coords(&self.j2d_l, &bl),
        }
    }

    pub fn input(&self) -> FrameInput {
        FrameInput {
            crop_r: self.crop_r.clone(),
            crop_l: self.crop_l.clone(),
            box_r: self.box_r,
            box_l: self.box_l,
            crop_union: self.crop_union.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SequenceSample {
    pub frames: Vec<FrameRecord>,
    pub fps: f64,
    pub seed: u64,
    pub interaction: f64,
}

impl SequenceSample {
    pub fn inputs(&self) -> Vec<FrameInput> {
        self.frames.iter().map(FrameRecord::input).collect()
    }

    /// Recomputes every stored ground-truth array from the stored
    /// parameters and checks bitwise equality.
    pub fn check_consistency(&self, model: &HandModel) -> Result<()> {
        for (t, f) in self.frames.iter().enumerate() {
            let fail = |what: &str| Err(Error::DataIntegrity(format!("frame {t}: {what} does not match its parameters")));
            let right = FrameRecord::world_hand(model, &f.params_r, f.trans_r)?;
            let left = FrameRecord::world_hand(model, &f.params_l, f.trans_l)?;
            if right.joints != f.j_r || right.vertices != f.v_r {
                return fail("right mesh");
            }
            if left.joints != f.j_l || left.vertices != f.v_l {
                return fail("left mesh");
            }
            if FrameRecord::project_rounded(&f.camera, &f.j_r) != f.j2d_r
                || FrameRecord::project_rounded(&f.camera, &f.j_l) != f.j2d_l
            {
                return fail("2D keypoints");
            }
        }
        Ok(())
    }
}

/// Per-sample seed derived from the dataset seed.
pub fn sample_seed(seed: u64, index: usize) -> u64 {
    let mut z = seed ^ (index as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generates sample `index` of the dataset described by `cfg`.
pub fn generate_sample(model: &HandModel, cfg: &DataConfig, index: usize) -> Result<SequenceSample> {
    let seed = sample_seed(cfg.seed, index);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [lo, hi] = cfg.interaction;
    let level = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let motion = sample_motion(model, cfg, &mut rng, level)?;
    let frames = (0..cfg.seq_len)
        .map(|t| FrameRecord::build(model, cfg, &motion, t))
        .collect::<Result<Vec<_>>>()?;
    let mut sample = SequenceSample {
        frames,
        fps: cfg.fps(),
        seed,
        interaction: level,
    };
    let occ = &cfg.occlusion;
    if occ.patch_prob > 0.0 && rng.random_bool(occ.patch_prob) {
        let s = rng.random();
        sample = inject_occlusion(&sample, &Occlusion::PatchMask { fraction: occ.patch_fraction }, s);
    }
    if occ.blackout_prob > 0.0 && rng.random_bool(occ.blackout_prob) {
        let frame = rng.random_range(0..cfg.seq_len);
        let target = if rng.random_bool(0.5) { Target::Left } else { Target::Right };
        let s = rng.random();
        sample = inject_occlusion(&sample, &Occlusion::FrameBlackout { frames: vec![frame], target }, s);
    }
    Ok(sample)
}

pub fn generate_samples(cfg: &DataConfig) -> Result<Vec<SequenceSample>> {
    cfg.validate()?;
    let model = cfg.hand_model()?;
    (0..cfg.count).map(|i| generate_sample(&model, cfg, i)).collect()
}

/// Mirrors image points about the vertical axis of an image `image_w` wide.
pub fn flip_points(j2d: &Array2<f64>, image_w: f64) -> Array2<f64> {
    let mut out = j2d.clone();
    out.column_mut(0).mapv_inplace(|x| image_w - x);
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct Flipped {
    pub crop: Array3<f32>,
    pub bbox: BoundingBox,
    pub side: Side,
    /// Stand-in box for the absent opposite hand.
    pub sentinel: BoundingBox,
}

/// Presents a single hand as the opposite one: mirrored crop, mirrored box,
/// toggled side, and a companion box far enough away that every relative
/// distance entry saturates.
pub fn flip_single_hand(crop: &Array3<f32>, bbox: &BoundingBox, side: Side, image_w: f64) -> Flipped {
    let mut flipped = crop.clone();
    flipped.invert_axis(ndarray::Axis(1));
    let flipped = flipped.as_standard_layout().to_owned();
    let b = BoundingBox::new(image_w - bbox.cx, bbox.cy, bbox.sx, bbox.sy);
    Flipped {
        crop: flipped,
        bbox: b,
        side: side.other(),
        sentinel: b.translated(SENTINEL_OFFSET * b.sx, SENTINEL_OFFSET * b.sy),
    }
}
