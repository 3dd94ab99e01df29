use std::collections::BTreeSet;

use super::Neighbor;

/// A metric averaged over the queries that have at least one relevant item.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricValue {
    pub value: f64,
    pub evaluated: usize,
    /// Queries skipped because their ground-truth set is empty.
    pub excluded: usize,
}

fn per_query<F>(rankings: &[Vec<u64>], truth: &[BTreeSet<u64>], f: F) -> MetricValue
where
    F: Fn(&[u64], &BTreeSet<u64>) -> f64,
{
    assert_eq!(rankings.len(), truth.len(), "one ground-truth set per query");
    let mut sum = 0.0;
    let mut evaluated = 0;
    for (r, t) in rankings.iter().zip(truth) {
        if t.is_empty() {
            continue;
        }
        sum += f(r, t);
        evaluated += 1;
    }
    MetricValue {
        value: if evaluated == 0 { 0.0 } else { sum / evaluated as f64 },
        evaluated,
        excluded: rankings.len() - evaluated,
    }
}

/// Fraction of queries with a relevant id among the first `n`.
pub fn recall_at_n(rankings: &[Vec<u64>], truth: &[BTreeSet<u64>], n: usize) -> MetricValue {
    per_query(rankings, truth, |r, t| {
        f64::from(u8::from(r.iter().take(n).any(|id| t.contains(id))))
    })
}

/// Mean over queries of `Σ_{k≤n} P@k·rel(k) / min(n, #relevant)`.
pub fn map_at_n(rankings: &[Vec<u64>], truth: &[BTreeSet<u64>], n: usize) -> MetricValue {
    per_query(rankings, truth, |r, t| {
        let mut hits = 0usize;
        let mut sum = 0.0;
        for (k, id) in r.iter().take(n).enumerate() {
            if t.contains(id) {
                hits += 1;
                sum += hits as f64 / (k + 1) as f64;
            }
        }
        sum / n.min(t.len()) as f64
    })
}

/// Area under the precision-recall curve of all (query, candidate) pairs
/// pooled and sorted by ascending distance; ties are ordered by query index
/// then candidate id. Pairs of queries without ground truth are left out.
pub fn average_precision(results: &[Vec<Neighbor>], truth: &[BTreeSet<u64>]) -> MetricValue {
    assert_eq!(results.len(), truth.len(), "one ground-truth set per query");
    let mut pairs: Vec<(f32, usize, u64, bool)> = Vec::new();
    let mut relevant = 0usize;
    let mut evaluated = 0;
    for (q, (r, t)) in results.iter().zip(truth).enumerate() {
        if t.is_empty() {
            continue;
        }
        evaluated += 1;
        relevant += t.len();
        pairs.extend(r.iter().map(|nb| (nb.distance, q, nb.id, t.contains(&nb.id))));
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (k, p) in pairs.iter().enumerate() {
        if p.3 {
            hits += 1;
            sum += hits as f64 / (k + 1) as f64;
        }
    }
    MetricValue {
        value: if relevant == 0 { 0.0 } else { sum / relevant as f64 },
        evaluated,
        excluded: results.len() - evaluated,
    }
}
