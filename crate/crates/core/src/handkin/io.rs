//! Template files: `template.json` manifest plus `template.bin`, a blob of
//! little-endian `f32` values with arrays in field order.

use std::fs;
use std::path::Path;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use super::{HandTemplate, Side};
use crate::blob::{push_f32, read_f32};
use crate::error::{Error, Result};

pub const MANIFEST_NAME: &str = "template.json";
pub const BLOB_NAME: &str = "template.bin";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
    /// Offset into the blob, in `f32` elements.
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TemplateManifest {
    format: String,
    side: Side,
    n_vertices: usize,
    arrays: Vec<ArrayEntry>,
}

const FORMAT: &str = "ratsir-hand-template-v1";

/// Writes the template into `dir` (created if needed).
pub fn export_template(t: &HandTemplate, dir: &Path) -> Result<()> {
    t.validate()?;
    fs::create_dir_all(dir)?;
    let parent: Vec<f64> = t.parent.iter().map(|&p| p as f64).collect();
    let fields: [(&str, Vec<usize>, Vec<f64>); 6] = [
        ("vertices0", t.vertices0.shape().to_vec(), t.vertices0.iter().copied().collect()),
        ("joints0", t.joints0.shape().to_vec(), t.joints0.iter().copied().collect()),
        ("parent", vec![parent.len()], parent),
        ("skin_weights", t.skin_weights.shape().to_vec(), t.skin_weights.iter().copied().collect()),
        ("shape_dirs", t.shape_dirs.shape().to_vec(), t.shape_dirs.iter().copied().collect()),
        ("joint_regressor", t.joint_regressor.shape().to_vec(), t.joint_regressor.iter().copied().collect()),
    ];
    let mut blob = Vec::new();
    let mut arrays = Vec::new();
    for (name, shape, values) in fields {
        arrays.push(ArrayEntry {
            name: name.to_string(),
            shape,
            offset: blob.len() / 4,
        });
        push_f32(&mut blob, values);
    }
    let manifest = TemplateManifest {
        format: FORMAT.to_string(),
        side: t.side,
        n_vertices: t.n_vertices(),
        arrays,
    };
    fs::write(dir.join(MANIFEST_NAME), serde_json::to_string_pretty(&manifest)?)?;
    fs::write(dir.join(BLOB_NAME), blob)?;
    Ok(())
}

pub fn import_template(dir: &Path) -> Result<HandTemplate> {
    let manifest: TemplateManifest = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_NAME))?)?;
    if manifest.format != FORMAT {
        return Err(Error::DataIntegrity(format!("unknown template format {:?}", manifest.format)));
    }
    let blob = fs::read(dir.join(BLOB_NAME))?;
    let expected: usize = manifest.arrays.iter().map(|a| a.shape.iter().product::<usize>()).sum();
    if blob.len() != expected * 4 {
        return Err(Error::DataIntegrity(format!(
            "template blob has {} bytes, manifest describes {}",
            blob.len(),
            expected * 4
        )));
    }
    let get = |name: &str| -> Result<(&ArrayEntry, Vec<f64>)> {
        let e = manifest
            .arrays
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| Error::DataIntegrity(format!("template manifest lacks {name}")))?;
        Ok((e, read_f32(&blob, e.offset, e.shape.iter().product())?))
    };
    let mat = |name: &str| -> Result<Array2<f64>> {
        let (e, v) = get(name)?;
        match e.shape[..] {
            [r, c] => Array2::from_shape_vec((r, c), v).map_err(|err| Error::DataIntegrity(err.to_string())),
            _ => Err(Error::DataIntegrity(format!("{name} must be two-dimensional"))),
        }
    };
    let (se, sv) = get("shape_dirs")?;
    let shape_dirs = match se.shape[..] {
        [a, b, c] => Array3::from_shape_vec((a, b, c), sv).map_err(|err| Error::DataIntegrity(err.to_string()))?,
        _ => return Err(Error::DataIntegrity("shape_dirs must be three-dimensional".into())),
    };
    let (_, parent) = get("parent")?;
    let t = HandTemplate {
        side: manifest.side,
        vertices0: mat("vertices0")?,
        joints0: mat("joints0")?,
        parent: parent.iter().map(|&p| p as i32).collect(),
        skin_weights: mat("skin_weights")?,
        shape_dirs,
        joint_regressor: mat("joint_regressor")?,
    };
    t.validate().map_err(|e| Error::DataIntegrity(e.to_string()))?;
    if t.n_vertices() != manifest.n_vertices {
        return Err(Error::DataIntegrity("vertex count disagrees with manifest".into()));
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::handkin::build_template;

    #[test]
    fn round_trip_is_f32_exact() {
        let dir = tempfile::tempdir().unwrap();
        let t = build_template(2, 64).unwrap();
        export_template(&t, dir.path()).unwrap();
        let back = import_template(dir.path()).unwrap();
        assert_eq!(back.parent, t.parent);
        let err = (&back.vertices0 - &t.vertices0).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
        assert!(err < 1e-7);

        // A second pass is bitwise stable.
        let dir2 = tempfile::tempdir().unwrap();
        export_template(&back, dir2.path()).unwrap();
        assert_eq!(
            fs::read(dir.path().join(BLOB_NAME)).unwrap(),
            fs::read(dir2.path().join(BLOB_NAME)).unwrap()
        );
    }

    #[test]
    fn truncated_blob_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        export_template(&build_template(2, 30).unwrap(), dir.path()).unwrap();
        let path = dir.path().join(BLOB_NAME);
        let mut blob = fs::read(&path).unwrap();
        blob.truncate(blob.len() - 4);
        fs::write(&path, blob).unwrap();
        assert!(matches!(import_template(dir.path()), Err(Error::DataIntegrity(_))));
    }
}
