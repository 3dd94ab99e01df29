use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{DbMeta, DescriptorDatabase, Entry};

/// Environment variable fixing the worker count of throughput runs.
pub const BENCH_THREADS_ENV: &str = "PLACEKD_BENCH_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingStats {
    pub median_ms: f64,
    pub p95_ms: f64,
    pub samples: usize,
}

impl TimingStats {
    /// Median and nearest-rank 95th percentile of durations in ms.
    pub fn from_ms(mut ms: Vec<f64>) -> Result<Self> {
        if ms.is_empty() {
            return Err(Error::Config("no timing samples".into()));
        }
        ms.sort_by(f64::total_cmp);
        let n = ms.len();
        let median = if n % 2 == 1 {
            ms[n / 2]
        } else {
            0.5 * (ms[n / 2 - 1] + ms[n / 2])
        };
        let rank = ((0.95 * n as f64).ceil() as usize).clamp(1, n);
        Ok(TimingStats {
            median_ms: median,
            p95_ms: ms[rank - 1],
            samples: n,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchBench {
    /// Single-threaded wall time of one query.
    pub per_query: TimingStats,
    pub throughput_qps: f64,
    pub threads: usize,
    pub db_size: usize,
    pub width: usize,
    pub top_n: usize,
}

/// Worker count from [`BENCH_THREADS_ENV`], else the available parallelism.
pub fn bench_threads() -> Result<usize> {
    match std::env::var(BENCH_THREADS_ENV) {
        Ok(v) => v
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::Config(format!("{BENCH_THREADS_ENV}={v} is not a positive integer"))),
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// `count` random unit vectors of length `width`.
pub fn random_unit_rows(count: usize, width: usize, seed: u64) -> Vec<Vec<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| loop {
            let v: Vec<f64> = (0..width).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 1e-3 {
                break v.iter().map(|x| (x / n) as f32).collect();
            }
        })
        .collect()
}

/// A database of random unit rows with ids `0..rows`, for timing.
pub fn synthetic_database(rows: usize, width: usize, seed: u64) -> Result<DescriptorDatabase> {
    let data = random_unit_rows(rows, width, seed).concat();
    let entries = (0..rows as u64)
        .map(|id| Entry {
            id,
            place_id: id,
            x: 0.0,
            y: 0.0,
        })
        .collect();
    DescriptorDatabase::new(entries, width, data, DbMeta::default())
}

/// Times `f(i)` for every item, `repetitions` times over.
pub fn time_each<F>(items: usize, repetitions: usize, mut f: F) -> Result<TimingStats>
where
    F: FnMut(usize) -> Result<()>,
{
    let mut ms = Vec::with_capacity(items * repetitions);
    for _ in 0..repetitions {
        for i in 0..items {
            let t = Instant::now();
            f(i)?;
            ms.push(t.elapsed().as_secs_f64() * 1e3);
        }
    }
    TimingStats::from_ms(ms)
}

/// Per-query matching latency on one thread, then multi-query throughput on
/// `threads` workers.
pub fn bench_matching(
    db: &DescriptorDatabase,
    queries: &[Vec<f32>],
    repetitions: usize,
    top_n: usize,
    threads: usize,
) -> Result<MatchBench> {
    if repetitions < 3 {
        return Err(Error::Config(format!("need at least 3 repetitions, got {repetitions}")));
    }
    if queries.is_empty() || threads == 0 {
        return Err(Error::Config("need at least one query and one thread".into()));
    }
    let per_query = time_each(queries.len(), repetitions, |i| {
        std::hint::black_box(db.search(&queries[i], top_n)?);
        Ok(())
    })?;

    let start = Instant::now();
    let chunk = queries.len().div_ceil(threads);
    std::thread::scope(|s| -> Result<()> {
        let handles: Vec<_> = queries
            .chunks(chunk)
            .map(|qs| {
                s.spawn(move || -> Result<()> {
                    for _ in 0..repetitions {
                        for q in qs {
                            std::hint::black_box(db.search(q, top_n)?);
                        }
                    }
                    Ok(())
                })
            })
            .collect();
        for h in handles {
            h.join().expect("bench worker panicked")?;
        }
        Ok(())
    })?;
    let secs = start.elapsed().as_secs_f64();
    Ok(MatchBench {
        per_query,
        throughput_qps: (queries.len() * repetitions) as f64 / secs.max(1e-12),
        threads,
        db_size: db.len(),
        width: db.width(),
        top_n,
    })
}
