//! Synthetic place datasets, their on-disk form, and triplet mining.

mod io;
mod mining;
mod world;

pub use io::{load_dataset, save_dataset, SAMPLES_FILE, SAMPLES_MAGIC, MANIFEST_FILE};
pub use mining::{mine_triplets, Mining, Triplet, TripletSpec};
pub use world::{generate_synthetic, place_correlations, SyntheticWorldConfig};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Database,
    Query,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub id: usize,
    pub place_id: usize,
    pub x: f64,
    pub y: f64,
    pub split: Split,
    /// Byte offset of the image in `samples.bin`.
    pub offset: u64,
}

impl SampleRecord {
    pub fn distance_to(&self, other: &SampleRecord) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub version: u32,
    pub seed: u64,
    pub config: SyntheticWorldConfig,
    pub image_shape: [usize; 3],
    pub samples: Vec<SampleRecord>,
}

/// Manifest plus decoded images; `images[i]` belongs to `samples[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub images: Vec<Tensor>,
}

impl Dataset {
    /// Checks ids, shapes, finiteness and split invariants.
    pub fn new(manifest: DatasetManifest, images: Vec<Tensor>) -> Result<Self> {
        let integrity = |msg: String| Error::Integrity {
            kind: crate::error::FileKind::Dataset,
            msg,
        };
        if manifest.samples.len() != images.len() {
            return Err(integrity(format!(
                "{} records but {} images",
                manifest.samples.len(),
                images.len()
            )));
        }
        for (i, (rec, img)) in manifest.samples.iter().zip(&images).enumerate() {
            if rec.id != i {
                return Err(integrity(format!("sample {i} has id {}", rec.id)));
            }
            if img.shape() != manifest.image_shape {
                return Err(integrity(format!("sample {i} has shape {:?}", img.shape())));
            }
            if !(rec.x.is_finite() && rec.y.is_finite()) {
                return Err(integrity(format!("sample {i} has a non-finite location")));
            }
            if !img.data().iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)) {
                return Err(integrity(format!("sample {i} has pixels outside [0, 1]")));
            }
        }
        let db_places: std::collections::BTreeSet<usize> = manifest
            .samples
            .iter()
            .filter(|s| s.split == Split::Database)
            .map(|s| s.place_id)
            .collect();
        if let Some(q) = manifest
            .samples
            .iter()
            .find(|s| s.split == Split::Query && !db_places.contains(&s.place_id))
        {
            return Err(integrity(format!(
                "query {} has place {} which is absent from the database split",
                q.id, q.place_id
            )));
        }
        Ok(Dataset { manifest, images })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn samples(&self) -> &[SampleRecord] {
        &self.manifest.samples
    }

    /// Ids of the samples in `split`, ascending.
    pub fn split_ids(&self, split: Split) -> Vec<usize> {
        self.samples().iter().filter(|s| s.split == split).map(|s| s.id).collect()
    }
}
