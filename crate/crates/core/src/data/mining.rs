use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{Dataset, Split};

/// Geographic supervision radii, meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TripletSpec {
    pub r_pos: f64,
    pub r_neg: f64,
    pub negatives_per_anchor: usize,
}

impl Default for TripletSpec {
    fn default() -> Self {
        TripletSpec {
            r_pos: 10.0,
            r_neg: 25.0,
            negatives_per_anchor: 4,
        }
    }
}

impl TripletSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.r_pos > 0.0 && self.r_pos < self.r_neg && self.r_neg.is_finite()) {
            return Err(Error::Config(format!(
                "need 0 < r_pos < r_neg, got r_pos {} and r_neg {}",
                self.r_pos, self.r_neg
            )));
        }
        if self.negatives_per_anchor == 0 {
            return Err(Error::Config("negatives_per_anchor must be positive".into()));
        }
        Ok(())
    }
}

/// Sample ids of one training triplet.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negatives: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mining {
    /// In random order.
    pub triplets: Vec<Triplet>,
    /// Anchors with no positive or no negative.
    pub skipped: usize,
}

/// One triplet per mineable train anchor. Positives lie strictly within
/// `r_pos` of the anchor, negatives strictly beyond `r_neg`; up to
/// `negatives_per_anchor` distinct negatives are drawn.
pub fn mine_triplets(ds: &Dataset, spec: &TripletSpec, seed: u64) -> Result<Mining> {
    spec.validate()?;
    let train = ds.split_ids(Split::Train);
    if train.is_empty() {
        return Err(Error::EmptyMining("the train split is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = ds.samples();
    let mut triplets = Vec::with_capacity(train.len());
    let mut skipped = 0;
    for &a in &train {
        let anchor = &samples[a];
        let mut positives = Vec::new();
        let mut negatives = Vec::new();
        for &o in &train {
            if o == a {
                continue;
            }
            let d = anchor.distance_to(&samples[o]);
            if d < spec.r_pos {
                positives.push(o);
            } else if d > spec.r_neg {
                negatives.push(o);
            }
        }
        let Some(&positive) = positives.choose(&mut rng) else {
            skipped += 1;
            continue;
        };
        if negatives.is_empty() {
            skipped += 1;
            continue;
        }
        let k = spec.negatives_per_anchor.min(negatives.len());
        let negatives = negatives.choose_multiple(&mut rng, k).copied().collect();
        triplets.push(Triplet {
            anchor: a,
            positive,
            negatives,
        });
    }
    if triplets.is_empty() {
        return Err(Error::EmptyMining(format!(
            "none of {} train anchors has both a positive within {} m and a negative beyond {} m",
            train.len(),
            spec.r_pos,
            spec.r_neg
        )));
    }
    triplets.shuffle(&mut rng);
    Ok(Mining { triplets, skipped })
}
