use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, FileKind, Result};

pub const DB_MAGIC: [u8; 8] = *b"PKDDB\0\0\0";
pub const DB_VERSION: u32 = 1;
/// Tolerance on row norms after rounding to f32.
pub const ROW_NORM_TOL: f64 = 1e-6;

/// Provenance stored alongside the descriptors.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DbMeta {
    /// SHA-256 hex of the checkpoint that produced the rows; empty if none.
    pub checkpoint_hash: String,
    pub checkpoint_path: Option<String>,
    pub model_kind: Option<String>,
    pub dataset: Option<String>,
}

/// One database row's identity and location.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub id: u64,
    pub place_id: u64,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub id: u64,
    /// Euclidean distance.
    pub distance: f32,
}

/// Immutable n×width matrix of unit-norm f32 descriptors.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorDatabase {
    entries: Vec<Entry>,
    width: usize,
    data: Vec<f32>,
    meta: DbMeta,
}

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format {
        kind: FileKind::Database,
        msg: msg.into(),
    }
}

fn integrity_err(msg: impl Into<String>) -> Error {
    Error::Integrity {
        kind: FileKind::Database,
        msg: msg.into(),
    }
}

/// Squared Euclidean distance with eight independent accumulators.
#[inline]
pub fn squared_distance(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0f32; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            let d = x[l] - y[l];
            acc[l] += d * d;
        }
    }
    for (l, (x, y)) in ra.iter().zip(rb).enumerate() {
        let d = x - y;
        acc[l] += d * d;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]))
}

impl DescriptorDatabase {
    pub fn new(entries: Vec<Entry>, width: usize, data: Vec<f32>, meta: DbMeta) -> Result<Self> {
        if width == 0 || data.len() != entries.len() * width {
            return Err(integrity_err(format!(
                "{} values do not form {} rows of width {width}",
                data.len(),
                entries.len()
            )));
        }
        let mut seen = HashSet::with_capacity(entries.len());
        for e in &entries {
            if !seen.insert(e.id) {
                return Err(integrity_err(format!("duplicate id {}", e.id)));
            }
        }
        for (i, row) in data.chunks_exact(width).enumerate() {
            let n = row.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt();
            if !((n - 1.0).abs() <= ROW_NORM_TOL) {
                return Err(integrity_err(format!("row {i} has norm {n}")));
            }
        }
        Ok(DescriptorDatabase {
            entries,
            width,
            data,
            meta,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn meta(&self) -> &DbMeta {
        &self.meta
    }

    pub fn with_meta(self, meta: DbMeta) -> Self {
        DescriptorDatabase { meta, ..self }
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.width..(i + 1) * self.width]
    }

    pub fn matrix(&self) -> &[f32] {
        &self.data
    }

    /// Exact top-`n` rows by Euclidean distance, ties broken by lower id.
    pub fn search(&self, query: &[f32], n: usize) -> Result<Vec<Neighbor>> {
        if self.is_empty() {
            return Err(Error::Config("search on an empty database".into()));
        }
        if query.len() != self.width {
            return Err(Error::shape("knn_search", &[query.len()], &[self.width]));
        }
        if n == 0 || n > self.len() {
            return Err(Error::Config(format!(
                "requested {n} neighbours from a database of {}",
                self.len()
            )));
        }
        let mut scored: Vec<(f32, u64)> = self
            .data
            .chunks_exact(self.width)
            .zip(&self.entries)
            .map(|(row, e)| (squared_distance(query, row), e.id))
            .collect();
        let cmp = |a: &(f32, u64), b: &(f32, u64)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if n < scored.len() {
            scored.select_nth_unstable_by(n - 1, cmp);
            scored.truncate(n);
        }
        scored.sort_unstable_by(cmp);
        Ok(scored
            .into_iter()
            .map(|(d, id)| Neighbor {
                id,
                distance: d.sqrt(),
            })
            .collect())
    }

    /// Layout (little-endian): magic, u32 version, u64 n, u32 width,
    /// 32-byte checkpoint digest, n×width f32 matrix, n entries of
    /// (u64 id, u64 place_id, f64 x, f64 y), u64 metadata length, JSON
    /// metadata.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let digest = if self.meta.checkpoint_hash.is_empty() {
            [0u8; 32]
        } else {
            hex::decode(&self.meta.checkpoint_hash)
                .ok()
                .and_then(|v| <[u8; 32]>::try_from(v).ok())
                .ok_or_else(|| Error::Config("checkpoint hash is not a SHA-256 hex digest".into()))?
        };
        let meta = serde_json::to_vec(&self.meta)?;
        let mut out = Vec::with_capacity(56 + self.data.len() * 4 + self.len() * 32 + 8 + meta.len());
        out.extend_from_slice(&DB_MAGIC);
        out.extend_from_slice(&DB_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&digest);
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for e in &self.entries {
            out.extend_from_slice(&e.id.to_le_bytes());
            out.extend_from_slice(&e.place_id.to_le_bytes());
            out.extend_from_slice(&e.x.to_le_bytes());
            out.extend_from_slice(&e.y.to_le_bytes());
        }
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != DB_MAGIC {
            return Err(format_err("bad magic bytes"));
        }
        let version = r.u32()?;
        if version != DB_VERSION {
            return Err(Error::Version {
                kind: FileKind::Database,
                found: version,
                expected: DB_VERSION,
            });
        }
        let n = r.u64()? as usize;
        let width = r.u32()? as usize;
        let digest = r.take(32)?.to_vec();
        let values = n.checked_mul(width).ok_or_else(|| integrity_err("size overflow"))?;
        let data = r
            .take(values.checked_mul(4).ok_or_else(|| integrity_err("size overflow"))?)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let mut entries = Vec::with_capacity(n);
        for _ in 0..n {
            entries.push(Entry {
                id: r.u64()?,
                place_id: r.u64()?,
                x: f64::from_bits(r.u64()?),
                y: f64::from_bits(r.u64()?),
            });
        }
        let meta_len = r.u64()? as usize;
        let meta: DbMeta = serde_json::from_slice(r.take(meta_len)?)
            .map_err(|e| format_err(format!("metadata: {e}")))?;
        if r.pos != bytes.len() {
            return Err(integrity_err(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let expect = if meta.checkpoint_hash.is_empty() {
            vec![0u8; 32]
        } else {
            hex::decode(&meta.checkpoint_hash).unwrap_or_default()
        };
        if expect != digest {
            return Err(integrity_err("header digest disagrees with metadata"));
        }
        DescriptorDatabase::new(entries, width, data, meta)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        DescriptorDatabase::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| integrity_err(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
