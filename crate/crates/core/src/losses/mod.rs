//! Triplet, soft-target and cross-metric distillation losses on descriptors
//! recorded on a tape.
//!
//! Teacher descriptors are expected to enter the tape detached; nothing here
//! differentiates through them.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Descriptor distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// ‖x − y‖²
    #[default]
    SquaredEuclidean,
    /// ‖x − y‖, with subgradient 0 at x = y
    Euclidean,
}

/// How per-triplet terms are combined across a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    #[default]
    Mean,
    Sum,
}

/// Which cross-model distances enter the cross-metric loss.
///
/// d1 = d(S(a),T(p)), d2 = d(S(p),T(a)) pull; d3 = d(S(a),T(n)),
/// d4 = d(S(n),T(a)) push.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct CrossTermMask {
    pub d1: bool,
    pub d2: bool,
    pub d3: bool,
    pub d4: bool,
}

impl CrossTermMask {
    pub const NONE: CrossTermMask = CrossTermMask::new(false, false, false, false);
    pub const PULL: CrossTermMask = CrossTermMask::new(true, true, false, false);
    pub const ALL: CrossTermMask = CrossTermMask::new(true, true, true, true);

    pub const fn new(d1: bool, d2: bool, d3: bool, d4: bool) -> Self {
        CrossTermMask { d1, d2, d3, d4 }
    }

    pub fn has_push(&self) -> bool {
        self.d3 || self.d4
    }

    pub fn has_pull(&self) -> bool {
        self.d1 || self.d2
    }

    pub fn is_empty(&self) -> bool {
        !self.has_pull() && !self.has_push()
    }

    pub fn validate(&self) -> Result<()> {
        if self.has_push() && !self.has_pull() {
            return Err(Error::Config(format!(
                "cross-term mask `{self}` pushes without any pull term"
            )));
        }
        Ok(())
    }
}

impl fmt::Display for CrossTermMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = [(self.d1, "d1"), (self.d2, "d2"), (self.d3, "d3"), (self.d4, "d4")]
            .iter()
            .filter(|t| t.0)
            .map(|t| t.1)
            .collect();
        if names.is_empty() {
            f.write_str("none")
        } else {
            f.write_str(&names.join(","))
        }
    }
}

impl FromStr for CrossTermMask {
    type Err = Error;

    /// Accepts `none` or a comma-separated subset of `d1,d2,d3,d4`.
    fn from_str(s: &str) -> Result<Self> {
        let mut m = CrossTermMask::NONE;
        let s = s.trim();
        if s.is_empty() || s.eq_ignore_ascii_case("none") {
            return Ok(m);
        }
        for part in s.split(',') {
            let flag = match part.trim().to_ascii_lowercase().as_str() {
                "d1" => &mut m.d1,
                "d2" => &mut m.d2,
                "d3" => &mut m.d3,
                "d4" => &mut m.d4,
                other => {
                    return Err(Error::Config(format!("unknown cross term `{other}`")));
                }
            };
            if *flag {
                return Err(Error::Config(format!("cross term `{}` repeated", part.trim())));
            }
            *flag = true;
        }
        m.validate()?;
        Ok(m)
    }
}

impl TryFrom<String> for CrossTermMask {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<CrossTermMask> for String {
    fn from(m: CrossTermMask) -> String {
        m.to_string()
    }
}

/// Relative weights of the three components of the total loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub hard: f64,
    pub soft: f64,
    pub cm: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            hard: 1.0,
            soft: 1.0,
            cm: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub margin: f64,
    pub metric: Metric,
    pub reduction: Reduction,
    pub mask: CrossTermMask,
    pub weights: LossWeights,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            margin: 0.1,
            metric: Metric::SquaredEuclidean,
            reduction: Reduction::Mean,
            mask: CrossTermMask::PULL,
            weights: LossWeights::default(),
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return Err(Error::Config(format!("margin must be positive, got {}", self.margin)));
        }
        let w = self.weights;
        if [w.hard, w.soft, w.cm].iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::Config("loss weights must be finite and non-negative".into()));
        }
        self.mask.validate()
    }
}

/// Student and teacher descriptors of one anchor, its positive and one or
/// more negatives. `t_*` must be detached.
#[derive(Debug, Clone)]
pub struct TripletVars {
    pub s_a: Var,
    pub s_p: Var,
    pub s_n: Vec<Var>,
    pub t_a: Var,
    pub t_p: Var,
    pub t_n: Vec<Var>,
}

impl TripletVars {
    fn check(&self, tape: &Tape) -> Result<()> {
        if self.s_n.is_empty() || self.s_n.len() != self.t_n.len() {
            return Err(Error::Config(format!(
                "triplet needs matching non-empty negatives, got {} student / {} teacher",
                self.s_n.len(),
                self.t_n.len()
            )));
        }
        let w = tape.shape(self.s_a);
        let all = [self.s_p, self.t_a, self.t_p]
            .into_iter()
            .chain(self.s_n.iter().copied())
            .chain(self.t_n.iter().copied());
        for v in all {
            if tape.shape(v) != w {
                return Err(Error::shape("triplet", w, tape.shape(v)));
            }
        }
        Ok(())
    }
}

/// Something worth reporting that did not stop the computation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossWarning {
    EmptyBatch,
}

pub fn distance(tape: &mut Tape, x: Var, y: Var, metric: Metric) -> Result<Var> {
    if tape.shape(x) != tape.shape(y) {
        return Err(Error::shape("distance", tape.shape(x), tape.shape(y)));
    }
    let diff = tape.sub(x, y)?;
    let sq = tape.mul(diff, diff)?;
    let d = tape.sum(sq)?;
    match metric {
        Metric::SquaredEuclidean => Ok(d),
        Metric::Euclidean => tape.sqrt(d),
    }
}

fn mean(tape: &mut Tape, terms: &[Var]) -> Result<Var> {
    let s = tape.add_all(terms)?;
    if terms.len() == 1 {
        Ok(s)
    } else {
        tape.scale(s, 1.0 / terms.len() as f64)
    }
}

fn reduce(tape: &mut Tape, terms: &[Var], reduction: Reduction) -> Result<Var> {
    match reduction {
        Reduction::Mean => mean(tape, terms),
        Reduction::Sum => tape.add_all(terms),
    }
}

fn zero(tape: &mut Tape) -> Var {
    tape.constant(Tensor::scalar(0.0))
}

/// `max{d(S_a,S_p) − d(S_a,S_n) + m, 0}` averaged over the negatives.
pub fn triplet_loss(
    tape: &mut Tape,
    a: Var,
    p: Var,
    negatives: &[Var],
    margin: f64,
    metric: Metric,
) -> Result<Var> {
    if negatives.is_empty() {
        return Err(Error::Config("triplet loss needs at least one negative".into()));
    }
    let dp = distance(tape, a, p, metric)?;
    let mut terms = Vec::with_capacity(negatives.len());
    for &n in negatives {
        let dn = distance(tape, a, n, metric)?;
        let x = tape.sub(dp, dn)?;
        let x = tape.offset(x, margin)?;
        terms.push(tape.hinge(x)?);
    }
    mean(tape, &terms)
}

/// Batch-reduced student triplet loss.
pub fn hard_loss(
    tape: &mut Tape,
    batch: &[TripletVars],
    margin: f64,
    metric: Metric,
    reduction: Reduction,
) -> Result<(Var, Option<LossWarning>)> {
    if batch.is_empty() {
        return Ok((zero(tape), Some(LossWarning::EmptyBatch)));
    }
    let mut terms = Vec::with_capacity(batch.len());
    for t in batch {
        t.check(tape)?;
        terms.push(triplet_loss(tape, t.s_a, t.s_p, &t.s_n, margin, metric)?);
    }
    Ok((reduce(tape, &terms, reduction)?, None))
}

/// `d(S(a),T(a)) + d(S(p),T(p)) + d(S(n),T(n))` per triplet (negatives
/// averaged), reduced over the batch.
pub fn soft_kd_loss(
    tape: &mut Tape,
    batch: &[TripletVars],
    metric: Metric,
    reduction: Reduction,
) -> Result<(Var, Option<LossWarning>)> {
    if batch.is_empty() {
        return Ok((zero(tape), Some(LossWarning::EmptyBatch)));
    }
    let mut terms = Vec::with_capacity(batch.len());
    for t in batch {
        t.check(tape)?;
        let da = distance(tape, t.s_a, t.t_a, metric)?;
        let dp = distance(tape, t.s_p, t.t_p, metric)?;
        let dn: Vec<Var> = t
            .s_n
            .iter()
            .zip(&t.t_n)
            .map(|(&s, &tn)| distance(tape, s, tn, metric))
            .collect::<Result<_>>()?;
        let dn = mean(tape, &dn)?;
        terms.push(tape.add_all(&[da, dp, dn])?);
    }
    Ok((reduce(tape, &terms, reduction)?, None))
}

/// Cross-metric loss under `mask`.
///
/// With any push term enabled each triplet contributes
/// `max{Σ pull − Σ push + m, 0}` (averaged over negatives); with only pull
/// terms it contributes the plain sum of pull distances. An empty mask
/// gives zero.
pub fn cross_metric_loss(
    tape: &mut Tape,
    batch: &[TripletVars],
    mask: CrossTermMask,
    margin: f64,
    metric: Metric,
    reduction: Reduction,
) -> Result<(Var, Option<LossWarning>)> {
    mask.validate()?;
    if batch.is_empty() {
        return Ok((zero(tape), Some(LossWarning::EmptyBatch)));
    }
    if mask.is_empty() {
        return Ok((zero(tape), None));
    }
    let mut terms = Vec::with_capacity(batch.len());
    for t in batch {
        t.check(tape)?;
        let mut pull = Vec::with_capacity(2);
        if mask.d1 {
            pull.push(distance(tape, t.s_a, t.t_p, metric)?);
        }
        if mask.d2 {
            pull.push(distance(tape, t.s_p, t.t_a, metric)?);
        }
        let pull = tape.add_all(&pull)?;
        if !mask.has_push() {
            terms.push(pull);
            continue;
        }
        let mut per_negative = Vec::with_capacity(t.s_n.len());
        for (&s_n, &t_n) in t.s_n.iter().zip(&t.t_n) {
            let mut x = pull;
            if mask.d3 {
                let d = distance(tape, t.s_a, t_n, metric)?;
                x = tape.sub(x, d)?;
            }
            if mask.d4 {
                let d = distance(tape, s_n, t.t_a, metric)?;
                x = tape.sub(x, d)?;
            }
            let x = tape.offset(x, margin)?;
            per_negative.push(tape.hinge(x)?);
        }
        terms.push(mean(tape, &per_negative)?);
    }
    Ok((reduce(tape, &terms, reduction)?, None))
}

/// Scalar values of one total-loss evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_hard: f64,
    pub l_soft: f64,
    pub l_cm: f64,
    pub l_total: f64,
}

#[derive(Debug, Clone)]
pub struct TotalLoss {
    pub total: Var,
    pub hard: Var,
    pub soft: Var,
    pub cm: Var,
    pub breakdown: LossBreakdown,
    pub warnings: Vec<LossWarning>,
}

/// `w_hard·L_hard + w_soft·L_soft + w_cm·L_cm`. The breakdown reports the
/// unweighted components and the weighted total.
pub fn total_loss(tape: &mut Tape, batch: &[TripletVars], cfg: &LossConfig) -> Result<TotalLoss> {
    cfg.validate()?;
    let (hard, w1) = hard_loss(tape, batch, cfg.margin, cfg.metric, cfg.reduction)?;
    let (soft, w2) = soft_kd_loss(tape, batch, cfg.metric, cfg.reduction)?;
    let (cm, w3) = cross_metric_loss(tape, batch, cfg.mask, cfg.margin, cfg.metric, cfg.reduction)?;
    let w = cfg.weights;
    let mut parts = Vec::with_capacity(3);
    for (v, weight) in [(hard, w.hard), (soft, w.soft), (cm, w.cm)] {
        if weight == 1.0 {
            parts.push(v);
        } else if weight != 0.0 {
            parts.push(tape.scale(v, weight)?);
        }
    }
    let total = if parts.is_empty() { zero(tape) } else { tape.add_all(&parts)? };
    let scalar = |v: Var| tape.value(v).data()[0];
    let breakdown = LossBreakdown {
        l_hard: scalar(hard),
        l_soft: scalar(soft),
        l_cm: scalar(cm),
        l_total: scalar(total),
    };
    let mut warnings: Vec<LossWarning> = [w1, w2, w3].into_iter().flatten().collect();
    warnings.dedup();
    Ok(TotalLoss {
        total,
        hard,
        soft,
        cm,
        breakdown,
        warnings,
    })
}
