//! Dataset files: `manifest.json` plus `data.bin`, little-endian `f32`
//! frames in a fixed field order listed in the manifest.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use super::{generate_sample, DataConfig, FrameRecord, SequenceSample};
use crate::blob::read_f32;
use crate::error::{Error, Result};
use crate::geom::{BoundingBox, WeakPerspectiveCamera};
use crate::handkin::{HandParams, Side, NUM_JOINTS, POSE_DIM, SHAPE_DIM};

pub const DATA_MANIFEST: &str = "manifest.json";
pub const DATA_BLOB: &str = "data.bin";
const FORMAT: &str = "ratsir-dataset-v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleEntry {
    pub seed: u64,
    pub interaction: f64,
    /// Offset of the first frame in `f32` elements.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format: String,
    pub config: DataConfig,
    pub fps: f64,
    /// Field names and lengths of one frame, in storage order.
    pub frame_layout: Vec<(String, usize)>,
    pub samples: Vec<SampleEntry>,
    /// FNV-1a hash of `data.bin`.
    pub checksum: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub samples: Vec<SequenceSample>,
}

fn frame_layout(cfg: &DataConfig) -> Vec<(String, usize)> {
    let crop = cfg.crop_h * cfg.crop_w * super::CHANNELS;
    let v = cfg.n_vertices * 3;
    let mut l: Vec<(&str, usize)> = vec![("crop_r", crop), ("crop_l", crop)];
    if cfg.render_union {
        l.push(("crop_union", crop));
    }
    l.extend([
        ("box_r", 4),
        ("box_l", 4),
        ("theta_r", POSE_DIM),
        ("beta_r", SHAPE_DIM),
        ("theta_l", POSE_DIM),
        ("beta_l", SHAPE_DIM),
        ("trans_r", 3),
        ("trans_l", 3),
        ("camera", 3),
        ("j_r", NUM_JOINTS * 3),
        ("j_l", NUM_JOINTS * 3),
        ("v_r", v),
        ("v_l", v),
        ("j2d_r", NUM_JOINTS * 2),
        ("j2d_l", NUM_JOINTS * 2),
    ]);
    l.into_iter().map(|(n, k)| (n.to_string(), k)).collect()
}

struct Fnv(u64);

impl Fnv {
    fn new() -> Self {
        Self(0xcbf2_9ce4_8422_2325)
    }
    fn update(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 = (self.0 ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    fn hex(&self) -> String {
        format!("{:016x}", self.0)
    }
}

fn frame_values(f: &FrameRecord) -> Vec<f64> {
    let bx = |b: &BoundingBox| [b.cx, b.cy, b.sx, b.sy];
    let mut out = Vec::new();
    out.extend(f.crop_r.iter().map(|&x| x as f64));
    out.extend(f.crop_l.iter().map(|&x| x as f64));
    if let Some(u) = &f.crop_union {
        out.extend(u.iter().map(|&x| x as f64));
    }
    out.extend(bx(&f.box_r));
    out.extend(bx(&f.box_l));
    out.extend(&f.params_r.theta);
    out.extend(&f.params_r.beta);
    out.extend(&f.params_l.theta);
    out.extend(&f.params_l.beta);
    out.extend(f.trans_r);
    out.extend(f.trans_l);
    out.extend([f.camera.scale, f.camera.tx, f.camera.ty]);
    for a in [&f.j_r, &f.j_l, &f.v_r, &f.v_l, &f.j2d_r, &f.j2d_l] {
        out.extend(a.iter().copied());
    }
    out
}

/// Writes already generated samples. Every sample must match `cfg`.
pub fn write_dataset(cfg: &DataConfig, samples: &[SequenceSample], dir: &Path) -> Result<DatasetManifest> {
    let layout = frame_layout(cfg);
    let per_frame: usize = layout.iter().map(|(_, k)| k).sum();
    fs::create_dir_all(dir)?;
    let mut w = BufWriter::new(File::create(dir.join(DATA_BLOB))?);
    let mut hash = Fnv::new();
    let mut entries = Vec::with_capacity(samples.len());
    let mut offset = 0;
    let mut bytes = Vec::with_capacity(per_frame * 4);
    for s in samples {
        if s.frames.len() != cfg.seq_len {
            return Err(Error::InvalidArgument(format!(
                "sample has {} frames, config says {}",
                s.frames.len(),
                cfg.seq_len
            )));
        }
        entries.push(SampleEntry {
            seed: s.seed,
            interaction: s.interaction,
            offset,
        });
        for f in &s.frames {
            let values = frame_values(f);
            if values.len() != per_frame {
                return Err(Error::InvalidArgument("frame does not match the configured layout".into()));
            }
            bytes.clear();
            crate::blob::push_f32(&mut bytes, values);
            hash.update(&bytes);
            w.write_all(&bytes)?;
            offset += per_frame;
        }
    }
    w.flush()?;
    let manifest = DatasetManifest {
        format: FORMAT.to_string(),
        config: cfg.clone(),
        fps: cfg.fps(),
        frame_layout: layout,
        samples: entries,
        checksum: hash.hex(),
    };
    fs::write(dir.join(DATA_MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Generates the dataset described by `cfg` and writes it into `dir`.
pub fn make_dataset(cfg: &DataConfig, dir: &Path) -> Result<DatasetManifest> {
    cfg.validate()?;
    let model = cfg.hand_model()?;
    let samples = (0..cfg.count)
        .map(|i| generate_sample(&model, cfg, i))
        .collect::<Result<Vec<_>>>()?;
    write_dataset(cfg, &samples, dir)
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::DataIntegrity(msg.into())
}

struct Cursor<'a> {
    values: &'a [f64],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> &'a [f64] {
        let s = &self.values[self.pos..self.pos + n];
        self.pos += n;
        s
    }
    fn mat(&mut self, rows: usize, cols: usize) -> Array2<f64> {
        Array2::from_shape_vec((rows, cols), self.take(rows * cols).to_vec()).expect("length checked by layout")
    }
    fn crop(&mut self, cfg: &DataConfig) -> Array3<f32> {
        let v = self.take(cfg.crop_h * cfg.crop_w * super::CHANNELS).iter().map(|&x| x as f32).collect();
        Array3::from_shape_vec((cfg.crop_h, cfg.crop_w, super::CHANNELS), v).expect("length checked by layout")
    }
    fn bbox(&mut self) -> BoundingBox {
        let b = self.take(4);
        BoundingBox::new(b[0], b[1], b[2], b[3])
    }
    fn arr3(&mut self) -> [f64; 3] {
        let b = self.take(3);
        [b[0], b[1], b[2]]
    }
}

fn parse_frame(cfg: &DataConfig, values: &[f64]) -> Result<FrameRecord> {
    let mut c = Cursor { values, pos: 0 };
    let crop_r = c.crop(cfg);
    let crop_l = c.crop(cfg);
    let crop_union = cfg.render_union.then(|| c.crop(cfg));
    let box_r = c.bbox();
    let box_l = c.bbox();
    let mut params = |side| HandParams {
        theta: c.take(POSE_DIM).to_vec(),
        beta: c.take(SHAPE_DIM).to_vec(),
        side,
    };
    let params_r = params(Side::Right);
    let params_l = params(Side::Left);
    let trans_r = c.arr3();
    let trans_l = c.arr3();
    let [scale, tx, ty] = c.arr3();
    let camera = WeakPerspectiveCamera::new(scale, tx, ty).map_err(|e| corrupt(e.to_string()))?;
    let n = cfg.n_vertices;
    Ok(FrameRecord {
        crop_r,
        crop_l,
        crop_union,
        box_r,
        box_l,
        params_r,
        params_l,
        trans_r,
        trans_l,
        camera,
        j_r: c.mat(NUM_JOINTS, 3),
        j_l: c.mat(NUM_JOINTS, 3),
        v_r: c.mat(n, 3),
        v_l: c.mat(n, 3),
        j2d_r: c.mat(NUM_JOINTS, 2),
        j2d_l: c.mat(NUM_JOINTS, 2),
    })
}

/// Loads a dataset written by [`make_dataset`], rejecting any file whose
/// size, layout or checksum disagrees with its manifest.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest: DatasetManifest = serde_json::from_str(&fs::read_to_string(dir.join(DATA_MANIFEST))?)?;
    if manifest.format != FORMAT {
        return Err(corrupt(format!("unknown dataset format {:?}", manifest.format)));
    }
    let cfg = &manifest.config;
    cfg.validate().map_err(|e| corrupt(e.to_string()))?;
    if manifest.frame_layout != frame_layout(cfg) {
        return Err(corrupt("frame layout disagrees with the stored config"));
    }
    let per_frame: usize = manifest.frame_layout.iter().map(|(_, k)| k).sum();
    let per_sample = per_frame * cfg.seq_len;
    let blob = fs::read(dir.join(DATA_BLOB))?;
    let expected = per_sample * manifest.samples.len();
    if blob.len() != expected * 4 {
        return Err(corrupt(format!("{DATA_BLOB} has {} bytes, manifest describes {}", blob.len(), expected * 4)));
    }
    let mut hash = Fnv::new();
    hash.update(&blob);
    if hash.hex() != manifest.checksum {
        return Err(corrupt(format!("{DATA_BLOB} checksum mismatch")));
    }
    let mut samples = Vec::with_capacity(manifest.samples.len());
    for (i, e) in manifest.samples.iter().enumerate() {
        if e.offset != i * per_sample {
            return Err(corrupt(format!("sample {i} has offset {}, expected {}", e.offset, i * per_sample)));
        }
        let values = read_f32(&blob, e.offset, per_sample)?;
        let frames = values
            .chunks_exact(per_frame)
            .map(|v| parse_frame(cfg, v))
            .collect::<Result<Vec<_>>>()?;
        samples.push(SequenceSample {
            frames,
            fps: manifest.fps,
            seed: e.seed,
            interaction: e.interaction,
        });
    }
    Ok(Dataset { manifest, samples })
}
