use std::path::Path;

use crate::error::{Error, FileKind, Result};
use crate::tensor::Tensor;

use super::{Dataset, DatasetManifest, DATASET_VERSION};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SAMPLES_FILE: &str = "samples.bin";
pub const SAMPLES_MAGIC: [u8; 8] = *b"PKDDATA\0";
const HEADER_LEN: usize = 20;

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format {
        kind: FileKind::Dataset,
        msg: msg.into(),
    }
}

fn integrity_err(msg: impl Into<String>) -> Error {
    Error::Integrity {
        kind: FileKind::Dataset,
        msg: msg.into(),
    }
}

fn version_check(found: u32) -> Result<()> {
    if found != DATASET_VERSION {
        return Err(Error::Version {
            kind: FileKind::Dataset,
            found,
            expected: DATASET_VERSION,
        });
    }
    Ok(())
}

/// Writes `manifest.json` and `samples.bin` into `dir`, creating it.
///
/// `samples.bin`: 8-byte magic, u32 version, u64 sample count, then each
/// image as row-major C×H×W little-endian f32 at the offset recorded in the
/// manifest.
pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let per_image: usize = ds.manifest.image_shape.iter().product();
    let mut manifest = ds.manifest.clone();
    let mut bin = Vec::with_capacity(HEADER_LEN + ds.len() * per_image * 4);
    bin.extend_from_slice(&SAMPLES_MAGIC);
    bin.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    bin.extend_from_slice(&(ds.len() as u64).to_le_bytes());
    for (rec, img) in manifest.samples.iter_mut().zip(&ds.images) {
        rec.offset = bin.len() as u64;
        for &v in img.data() {
            bin.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let path = dir.join(SAMPLES_FILE);
    std::fs::write(&path, &bin).map_err(|e| Error::io(&path, e))?;
    let path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_vec_pretty(&manifest)?;
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let raw: serde_json::Value =
        serde_json::from_slice(&text).map_err(|e| format_err(format!("manifest: {e}")))?;
    // check the version before the schema so old files get the right error
    if let Some(v) = raw.get("version").and_then(serde_json::Value::as_u64) {
        version_check(v as u32)?;
    }
    let mut manifest: DatasetManifest =
        serde_json::from_value(raw).map_err(|e| format_err(format!("manifest: {e}")))?;

    let path = dir.join(SAMPLES_FILE);
    let bin = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    if bin.len() < HEADER_LEN || bin[..8] != SAMPLES_MAGIC {
        return Err(format_err("samples.bin has bad magic bytes"));
    }
    version_check(u32::from_le_bytes(bin[8..12].try_into().unwrap()))?;
    let count = u64::from_le_bytes(bin[12..20].try_into().unwrap()) as usize;
    if count != manifest.samples.len() {
        return Err(integrity_err(format!(
            "samples.bin holds {count} images, manifest lists {}",
            manifest.samples.len()
        )));
    }
    let shape = manifest.image_shape;
    let per_image: usize = shape.iter().product();
    let mut images = Vec::with_capacity(count);
    for rec in &manifest.samples {
        let start = rec.offset as usize;
        let end = start.checked_add(per_image * 4).unwrap_or(usize::MAX);
        if start < HEADER_LEN || end > bin.len() {
            return Err(integrity_err(format!(
                "sample {} points at bytes {start}..{end}, file has {}",
                rec.id,
                bin.len()
            )));
        }
        let data = bin[start..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        images.push(Tensor::new(shape.to_vec(), data)?);
    }
    // offsets are a property of the file, not of the dataset
    manifest.samples.iter_mut().for_each(|s| s.offset = 0);
    Dataset::new(manifest, images)
}
