use ndarray::{Array2, Array3, ArrayView3};

use super::config::{NetConfig, Variant};
use super::layers::{Block, Builder, Linear, Mlp};
use super::prediction::{Prediction, HAND_BLOCK, OUTPUT_DIM};
use crate::autodiff::{Graph, Mat, ParamId, ParamStore, Var};
use crate::error::{invalid, Result};
use crate::geom::{relation_inputs, BoundingBox};
use crate::handkin::{POSE_DIM, SHAPE_DIM};
use crate::losses::PredVars;

/// Network input for one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameInput {
    /// `[row, col, channel]` crops.
    pub crop_r: Array3<f32>,
    pub crop_l: Array3<f32>,
    pub box_r: BoundingBox,
    pub box_l: BoundingBox,
    /// Crop of the union box, used only by the holistic variant.
    pub crop_union: Option<Array3<f32>>,
}

/// Switches used by tests and diagnostics.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ForwardOptions {
    /// Replace the relation map by zeros even when the variant uses it.
    pub zero_relation: bool,
}

#[derive(Clone, Debug)]
struct Temporal {
    pos: ParamId,
    blocks: Vec<Block>,
}

#[derive(Clone, Debug)]
struct Parts {
    patch: Linear,
    pos: ParamId,
    enc: Vec<Block>,
    relation: Option<Mlp>,
    hand_id: ParamId,
    spatial: Vec<Block>,
    queries: ParamId,
    decoder: Block,
    temporal: Option<Temporal>,
    head_r: Mlp,
    head_l: Mlp,
    upsilon: Option<Mlp>,
    roots: Option<(Mlp, Mlp)>,
}

/// One ablation variant with its weights.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: NetConfig,
    pub variant: Variant,
    pub seed: u64,
    pub store: ParamStore,
    parts: Parts,
}

const HEAD_GAIN: f64 = 0.1;
const HAND_OUT: usize = POSE_DIM + SHAPE_DIM + 3;

/// Splits a `[row, col, channel]` crop into row-major patches, each
/// flattened in `(dy, dx, channel)` order.
pub fn patchify(crop: &ArrayView3<f32>, patch: usize) -> Result<Mat> {
    let (h, w, c) = crop.dim();
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(invalid(format!("crop {h}x{w} is not divisible by patch {patch}")));
    }
    let (gh, gw) = (h / patch, w / patch);
    let mut out = Mat::zeros((gh * gw, patch * patch * c));
    for k in 0..gh {
        for i in 0..gw {
            let mut row = out.row_mut(k * gw + i);
            let mut n = 0;
            for dy in 0..patch {
                for dx in 0..patch {
                    for ch in 0..c {
                        row[n] = crop[[k * patch + dy, i * patch + dx, ch]] as f64;
                        n += 1;
                    }
                }
            }
        }
    }
    Ok(out)
}

impl Model {
    pub fn new(config: NetConfig, variant: Variant, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let c = config.dim;
        let d = config.fused_dim();
        let hw = config.tokens_per_hand();
        let mut b = Builder {
            store: &mut store,
            seed,
            bias: config.bias,
        };
        let patch = b.linear("enc.patch", config.patch_len(), c, 1.0);
        let pos = b.normal("enc.pos", hw, c, 0.02);
        let enc = (0..config.enc_blocks)
            .map(|i| b.block(&format!("enc.block{i}"), c, config.heads, config.mlp_ratio))
            .collect();
        let relation = variant.uses_relation().then(|| b.mlp("rat.mlp", 5, c, c, 1.0));
        let hand_id = b.normal("sir.hand_id", 2, d, 0.02);
        let spatial = (0..config.spatial_blocks)
            .map(|i| b.block(&format!("sir.spatial{i}"), d, config.heads, config.mlp_ratio))
            .collect();
        let queries = b.normal("sir.queries", 2, d, 1.0);
        let decoder = b.block("sir.decoder", d, config.heads, config.mlp_ratio);
        let temporal = variant.uses_temporal().then(|| Temporal {
            pos: b.normal("temporal.pos", config.seq_len, d, 0.02),
            blocks: (0..config.temporal_blocks)
                .map(|i| b.block(&format!("temporal.block{i}"), d, config.heads, config.mlp_ratio))
                .collect(),
        });
        let head_r = b.mlp("head.right", d, d, HAND_OUT, HEAD_GAIN);
        let head_l = b.mlp("head.left", d, d, HAND_OUT, HEAD_GAIN);
        let (upsilon, roots) = if variant == Variant::Baseline {
            (None, Some((b.mlp("head.root_right", d, d, 3, HEAD_GAIN), b.mlp("head.root_left", d, d, 3, HEAD_GAIN))))
        } else {
            (Some(b.mlp("head.upsilon", 2 * d, d, 3, HEAD_GAIN)), None)
        };
        Ok(Self {
            config,
            variant,
            seed,
            store,
            parts: Parts {
                patch,
                pos,
                enc,
                relation,
                hand_id,
                spatial,
                queries,
                decoder,
                temporal,
                head_r,
                head_l,
                upsilon,
                roots,
            },
        })
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_scalars()
    }

    fn separated(&self) -> bool {
        self.variant == Variant::Baseline || !self.config.cross_hand_attention
    }

    /// Token map `(H·W)×C` of one crop.
    pub fn encode(&self, g: &mut Graph, crop: &ArrayView3<f32>) -> Result<Var> {
        let cfg = &self.config;
        let (h, w, c) = crop.dim();
        if (h, w, c) != (cfg.crop_h, cfg.crop_w, cfg.in_channels) {
            return Err(invalid(format!(
                "crop is {h}x{w}x{c}, network expects {}x{}x{}",
                cfg.crop_h, cfg.crop_w, cfg.in_channels
            )));
        }
        let patches = g.constant(patchify(crop, cfg.patch)?);
        let x = self.parts.patch.apply(g, &self.store, patches);
        let pos = g.param(&self.store, self.parts.pos);
        let mut x = g.add(x, pos);
        for blk in &self.parts.enc {
            x = blk.apply(g, &self.store, x, None);
        }
        Ok(x)
    }

    /// Per-patch relation embedding `(H·W)×C` from the five relation channels.
    pub fn relation_mlp(&self, g: &mut Graph, inputs: &Mat) -> Result<Var> {
        let mlp = self
            .parts
            .relation
            .as_ref()
            .ok_or_else(|| invalid(format!("variant {} has no relation embedding", self.variant)))?;
        let x = g.constant(inputs.clone());
        Ok(mlp.apply(g, &self.store, x))
    }

    /// Relation-aware tokens `[F ‖ R]`.
    pub fn rat_enhance(g: &mut Graph, tokens: Var, relation: Var) -> Var {
        g.concat_cols(&[tokens, relation])
    }

    fn block_mask(&self, n_queries_per_hand: usize) -> Array2<bool> {
        let hw = self.config.tokens_per_hand();
        Array2::from_shape_fn((2 * n_queries_per_hand, 2 * hw), |(q, k)| q / n_queries_per_hand == k / hw)
    }

    /// Spatial fusion of both hands' relation-aware tokens into one global
    /// feature per hand, returned as a `2×C_g` matrix (right, left).
    pub fn sir_spatial(&self, g: &mut Graph, fp_r: Var, fp_l: Var) -> Var {
        let ids = g.param(&self.store, self.parts.hand_id);
        let id_r = g.row(ids, 0);
        let id_l = g.row(ids, 1);
        let r = g.add_row(fp_r, id_r);
        let l = g.add_row(fp_l, id_l);
        let mut m = g.concat_rows(&[r, l]);
        let hw = self.config.tokens_per_hand();
        let (self_mask, dec_mask) = if self.separated() {
            (Some(self.block_mask(hw)), Some(self.block_mask(1)))
        } else {
            (None, None)
        };
        for blk in &self.parts.spatial {
            m = blk.apply(g, &self.store, m, self_mask.as_ref());
        }
        let q = g.param(&self.store, self.parts.queries);
        self.parts.decoder.apply_cross(g, &self.store, q, m, dec_mask.as_ref())
    }

    /// Spatial fusion over a single holistic token block.
    pub fn sir_spatial_holistic(&self, g: &mut Graph, fp: Var) -> Var {
        let mut m = fp;
        for blk in &self.parts.spatial {
            m = blk.apply(g, &self.store, m, None);
        }
        let q = g.param(&self.store, self.parts.queries);
        self.parts.decoder.apply_cross(g, &self.store, q, m, None)
    }

    /// Temporal fusion over per-frame `2×C_g` features, frame-major with the
    /// right hand first.
    pub fn sir_temporal(&self, g: &mut Graph, frames: &[Var]) -> Result<Vec<Var>> {
        let t = frames.len();
        let temporal = self
            .parts
            .temporal
            .as_ref()
            .ok_or_else(|| invalid(format!("variant {} has no temporal module", self.variant)))?;
        if t == 0 || t > self.config.seq_len {
            return Err(invalid(format!("temporal module takes 1..={} frames, got {t}", self.config.seq_len)));
        }
        let mut x = g.concat_rows(frames);
        if self.config.temporal_pos {
            let pos = g.param(&self.store, temporal.pos);
            let pos = g.slice_rows(pos, 0, t);
            let expand = g.constant(Array2::from_shape_fn((2 * t, t), |(r, c)| f64::from(u8::from(r / 2 == c))));
            let pos = g.matmul(expand, pos);
            x = g.add(x, pos);
        }
        for blk in &temporal.blocks {
            x = blk.apply(g, &self.store, x, None);
        }
        Ok((0..t).map(|i| g.slice_rows(x, 2 * i, 2 * i + 2)).collect())
    }

    /// Single-frame path: the frame's feature stacked `t` times.
    pub fn sir_temporal_single(&self, g: &mut Graph, frame: Var, t: usize) -> Result<Vec<Var>> {
        self.sir_temporal(g, &vec![frame; t])
    }

    /// Regression head: `2×C_g` fused features to a `1×125` prediction row
    /// with camera scales already made positive.
    pub fn regress(&self, g: &mut Graph, features: Var) -> Var {
        let s = &self.store;
        let gr = g.row(features, 0);
        let gl = g.row(features, 1);
        let mut parts = Vec::with_capacity(7);
        for (head, feat) in [(&self.parts.head_r, gr), (&self.parts.head_l, gl)] {
            let out = head.apply(g, s, feat);
            let params = g.slice_cols(out, 0, POSE_DIM + SHAPE_DIM);
            let k_raw = g.slice_cols(out, POSE_DIM + SHAPE_DIM, POSE_DIM + SHAPE_DIM + 1);
            let k = g.softplus(k_raw);
            let k = g.scale(k, self.config.k_unit);
            let t = g.slice_cols(out, POSE_DIM + SHAPE_DIM + 1, HAND_OUT);
            parts.extend([params, k, t]);
        }
        let ups = match (&self.parts.upsilon, &self.parts.roots) {
            (Some(mlp), _) => {
                let both = g.concat_cols(&[gr, gl]);
                mlp.apply(g, s, both)
            }
            (None, Some((rr, rl))) => {
                let a = rr.apply(g, s, gr);
                let b = rl.apply(g, s, gl);
                g.sub(b, a)
            }
            (None, None) => unreachable!("model has no relative-root head"),
        };
        parts.push(ups);
        g.concat_cols(&parts)
    }

    fn relation_tokens(&self, g: &mut Graph, frame: &FrameInput, opts: &ForwardOptions) -> Result<(Var, Var)> {
        let (h, w) = self.config.grid();
        let c = self.config.dim;
        if self.variant.uses_relation() && !opts.zero_relation {
            let (rr, rl) = relation_inputs(&frame.box_r, &frame.box_l, h, w, self.config.tau)?;
            Ok((self.relation_mlp(g, &rr.values)?, self.relation_mlp(g, &rl.values)?))
        } else {
            let z = g.constant(Mat::zeros((h * w, c)));
            Ok((z, z))
        }
    }

    /// Fused `2×C_g` feature of one frame before temporal fusion.
    pub fn frame_feature(&self, g: &mut Graph, frame: &FrameInput, opts: &ForwardOptions) -> Result<Var> {
        if self.variant.holistic() {
            let crop = frame
                .crop_union
                .as_ref()
                .ok_or_else(|| invalid("holistic variant needs a union crop"))?;
            let f = self.encode(g, &crop.view())?;
            let z = g.constant(Mat::zeros(g.shape(f)));
            let fp = Self::rat_enhance(g, f, z);
            return Ok(self.sir_spatial_holistic(g, fp));
        }
        let f_r = self.encode(g, &frame.crop_r.view())?;
        let f_l = self.encode(g, &frame.crop_l.view())?;
        let (r_r, r_l) = self.relation_tokens(g, frame, opts)?;
        let fp_r = Self::rat_enhance(g, f_r, r_r);
        let fp_l = Self::rat_enhance(g, f_l, r_l);
        Ok(self.sir_spatial(g, fp_r, fp_l))
    }

    /// One `1×125` prediction row per frame.
    pub fn forward_sequence(&self, g: &mut Graph, frames: &[FrameInput], opts: &ForwardOptions) -> Result<Vec<Var>> {
        if frames.is_empty() {
            return Err(invalid("empty frame sequence"));
        }
        let mut feats = frames
            .iter()
            .map(|f| self.frame_feature(g, f, opts))
            .collect::<Result<Vec<_>>>()?;
        if self.variant.uses_temporal() {
            feats = self.sir_temporal(g, &feats)?;
        }
        Ok(feats.into_iter().map(|f| self.regress(g, f)).collect())
    }

    pub fn predict_with(&self, frames: &[FrameInput], opts: &ForwardOptions) -> Result<Vec<Prediction>> {
        let mut g = Graph::new();
        let rows = self.forward_sequence(&mut g, frames, opts)?;
        rows.iter()
            .map(|r| Prediction::from_row(g.value(*r).as_slice().expect("row")))
            .collect()
    }

    pub fn predict(&self, frames: &[FrameInput]) -> Result<Vec<Prediction>> {
        self.predict_with(frames, &ForwardOptions::default())
    }
}

/// Slices a `1×125` prediction row into tape handles.
pub fn decode_row(g: &mut Graph, row: Var) -> PredVars {
    assert_eq!(g.shape(row), (1, OUTPUT_DIM), "prediction row width");
    let p = POSE_DIM;
    let ps = POSE_DIM + SHAPE_DIM;
    let mut hand = |o: usize| (g.slice_cols(row, o, o + p), g.slice_cols(row, o + p, o + ps), g.slice_cols(row, o + ps, o + HAND_BLOCK));
    let (theta_r, beta_r, cam_r) = hand(0);
    let (theta_l, beta_l, cam_l) = hand(HAND_BLOCK);
    let upsilon = g.slice_cols(row, 2 * HAND_BLOCK, OUTPUT_DIM);
    PredVars {
        theta_r,
        beta_r,
        cam_r,
        theta_l,
        beta_l,
        cam_l,
        upsilon,
    }
}
