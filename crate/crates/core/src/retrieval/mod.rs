//! Descriptor databases, exact nearest-neighbour search, retrieval metrics
//! and latency measurement.

mod bench;
mod db;
mod metrics;

pub use bench::{
    bench_matching, bench_threads, random_unit_rows, synthetic_database, time_each, MatchBench,
    TimingStats, BENCH_THREADS_ENV,
};
pub use db::{
    squared_distance, DbMeta, DescriptorDatabase, Entry, Neighbor, DB_MAGIC, DB_VERSION,
    ROW_NORM_TOL,
};
pub use metrics::{average_precision, map_at_n, recall_at_n, MetricValue};

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::layers::ParamStore;
use crate::models::Model;
use crate::tensor::Tensor;

/// What counts as a correct match.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GroundTruth {
    SamePlace,
    /// Within `radius` meters of the query location.
    Radius { radius: f64 },
}

impl Default for GroundTruth {
    fn default() -> Self {
        GroundTruth::SamePlace
    }
}

/// A query descriptor with the information needed to judge matches.
#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub descriptor: Vec<f32>,
    pub place_id: u64,
    pub x: f64,
    pub y: f64,
}

impl GroundTruth {
    pub fn relevant(&self, db: &DescriptorDatabase, q: &Query) -> BTreeSet<u64> {
        db.entries()
            .iter()
            .filter(|e| match *self {
                GroundTruth::SamePlace => e.place_id == q.place_id,
                GroundTruth::Radius { radius } => (e.x - q.x).hypot(e.y - q.y) <= radius,
            })
            .map(|e| e.id)
            .collect()
    }
}

/// Runs `model` over the chosen split and stores f32 descriptors.
pub fn build_db(
    ds: &Dataset,
    split: Split,
    model: &Model,
    params: &ParamStore,
    meta: DbMeta,
) -> Result<DescriptorDatabase> {
    let ids = ds.split_ids(split);
    if ids.is_empty() {
        return Err(Error::Config(format!("split {split:?} is empty")));
    }
    let width = model.descriptor_width();
    let mut data = Vec::with_capacity(ids.len() * width);
    let mut entries = Vec::with_capacity(ids.len());
    for &id in &ids {
        let d = model.describe(params, &ds.images[id])?;
        assert_eq!(d.width(), width, "model emitted a descriptor of the wrong width");
        data.extend(d.values().iter().map(|&v| v as f32));
        let s = &ds.samples()[id];
        entries.push(Entry {
            id: id as u64,
            place_id: s.place_id as u64,
            x: s.x,
            y: s.y,
        });
    }
    DescriptorDatabase::new(entries, width, data, meta)
}

/// Descriptors of every sample in `split`, as queries.
pub fn describe_queries(
    ds: &Dataset,
    split: Split,
    model: &Model,
    params: &ParamStore,
) -> Result<Vec<Query>> {
    ds.split_ids(split)
        .into_iter()
        .map(|id| {
            let d = model.describe(params, &ds.images[id])?;
            let s = &ds.samples()[id];
            Ok(Query {
                descriptor: d.values().iter().map(|&v| v as f32).collect(),
                place_id: s.place_id as u64,
                x: s.x,
                y: s.y,
            })
        })
        .collect()
}

/// Mean-centred, L2-normalised raw pixels: the untrained linear baseline.
pub fn pixel_descriptor(image: &Tensor) -> Vec<f32> {
    let d = image.data();
    let mean = d.iter().sum::<f64>() / d.len() as f64;
    let c: Vec<f64> = d.iter().map(|v| v - mean).collect();
    let n = c.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
    c.iter().map(|v| (v / n) as f32).collect()
}

/// Query/database evaluation of the pixel baseline on a dataset.
pub fn pixel_baseline(ds: &Dataset, query_split: Split) -> Result<EvalReport> {
    let db_ids = ds.split_ids(Split::Database);
    let entries = db_ids
        .iter()
        .map(|&id| {
            let s = &ds.samples()[id];
            Entry {
                id: id as u64,
                place_id: s.place_id as u64,
                x: s.x,
                y: s.y,
            }
        })
        .collect();
    let data = db_ids.iter().flat_map(|&id| pixel_descriptor(&ds.images[id])).collect();
    let width = ds.images.first().map_or(0, Tensor::len);
    let db = DescriptorDatabase::new(entries, width, data, DbMeta::default())?;
    let queries: Vec<Query> = ds
        .split_ids(query_split)
        .into_iter()
        .map(|id| {
            let s = &ds.samples()[id];
            Query {
                descriptor: pixel_descriptor(&ds.images[id]),
                place_id: s.place_id as u64,
                x: s.x,
                y: s.y,
            }
        })
        .collect();
    evaluate(&db, &queries, GroundTruth::SamePlace)
}

pub const EVAL_REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub version: u32,
    pub recall_at_1: f64,
    pub recall_at_5: f64,
    pub recall_at_10: f64,
    pub map_at_1: f64,
    pub map_at_5: f64,
    pub map_at_10: f64,
    pub ap: f64,
    pub n_queries: usize,
    pub n_excluded: usize,
    pub db_size: usize,
    pub timing: TimingStats,
}

/// Ranks the whole database for every query and computes all metrics.
/// Cut-offs larger than the database are clipped to its size.
pub fn evaluate(db: &DescriptorDatabase, queries: &[Query], gt: GroundTruth) -> Result<EvalReport> {
    if queries.is_empty() {
        return Err(Error::Config("no queries to evaluate".into()));
    }
    let mut results = Vec::with_capacity(queries.len());
    let timing = time_each(queries.len(), 1, |i| {
        results.push(db.search(&queries[i].descriptor, db.len())?);
        Ok(())
    })?;
    let truth: Vec<BTreeSet<u64>> = queries.iter().map(|q| gt.relevant(db, q)).collect();
    let rankings: Vec<Vec<u64>> = results.iter().map(|r| r.iter().map(|n| n.id).collect()).collect();
    let at = |n: usize| n.min(db.len());
    let r1 = recall_at_n(&rankings, &truth, at(1));
    Ok(EvalReport {
        version: EVAL_REPORT_VERSION,
        recall_at_1: r1.value,
        recall_at_5: recall_at_n(&rankings, &truth, at(5)).value,
        recall_at_10: recall_at_n(&rankings, &truth, at(10)).value,
        map_at_1: map_at_n(&rankings, &truth, at(1)).value,
        map_at_5: map_at_n(&rankings, &truth, at(5)).value,
        map_at_10: map_at_n(&rankings, &truth, at(10)).value,
        ap: average_precision(&results, &truth).value,
        n_queries: r1.evaluated,
        n_excluded: r1.excluded,
        db_size: db.len(),
        timing,
    })
}
