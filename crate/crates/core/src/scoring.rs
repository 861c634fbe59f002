//! Per-item sale-rate estimates without and with a coupon (a T-learner: one
//! response surface per trial arm) and the item-quality filter.

use std::collections::{BTreeSet, HashMap};

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Dataset, ItemId, ItemRecord, ItemScore};
use crate::simulate::{stream_rng, RctLog};

#[derive(Debug, Error)]
pub enum ScoringError {
    #[error("training log has no {0} items")]
    EmptyArm(Arm),
    #[error("training log references item {0} which is not in the dataset")]
    UnknownItem(ItemId),
    #[error("item {0} has no ground-truth rates; the oracle scorer needs simulated data")]
    MissingGroundTruth(ItemId),
    #[error("{0}")]
    InvalidParameter(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arm {
    Control,
    Treatment,
}

impl std::fmt::Display for Arm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Arm::Control => "control (untreated)",
            Arm::Treatment => "treatment (couponed)",
        })
    }
}

/// A fitted pair of response surfaces.
pub trait Scorer: Send + Sync {
    /// Sale rate without and with a coupon, both in `[0, 1]`.
    fn predict(&self, item: &ItemRecord) -> Result<(f64, f64), ScoringError>;
}

/// One [`ItemScore`] per dataset item, in dataset order.
pub fn score_items(scorer: &dyn Scorer, dataset: &Dataset) -> Result<Vec<ItemScore>, ScoringError> {
    dataset
        .items()
        .par_iter()
        .map(|item| {
            let (f0, f1) = scorer.predict(item)?;
            Ok(ItemScore::clamped(item.item_id, f0, f1))
        })
        .collect()
}

/// Ground-truth rates perturbed by independent multiplicative Gaussian noise:
/// `f = clamp(p * (1 + noise * e))`, `e ~ N(0, 1)`, one draw per item and arm.
///
/// The draws for an item depend only on `(seed, item_id)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoisyOracleScorer {
    pub noise: f64,
    pub seed: u64,
}

impl NoisyOracleScorer {
    pub fn new(noise: f64, seed: u64) -> Result<Self, ScoringError> {
        if !(noise >= 0.0 && noise.is_finite()) {
            return Err(ScoringError::InvalidParameter(format!(
                "oracle noise must be a non-negative number, got {noise}"
            )));
        }
        Ok(Self { noise, seed })
    }
}

impl Scorer for NoisyOracleScorer {
    fn predict(&self, item: &ItemRecord) -> Result<(f64, f64), ScoringError> {
        let (p0, p1) = item
            .ground_truth()
            .ok_or(ScoringError::MissingGroundTruth(item.item_id))?;
        if self.noise == 0.0 {
            return Ok((p0, p1));
        }
        let mut rng = stream_rng(self.seed, item.item_id.0);
        let e0: f64 = StandardNormal.sample(&mut rng);
        let e1: f64 = StandardNormal.sample(&mut rng);
        Ok((
            (p0 * (1.0 + self.noise * e0)).clamp(0.0, 1.0),
            (p1 * (1.0 + self.noise * e1)).clamp(0.0, 1.0),
        ))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct BinCounts {
    sold: u64,
    trials: u64,
}

impl BinCounts {
    /// Laplace-smoothed sale rate, `(sold + 1) / (trials + 2)`.
    fn rate(&self) -> f64 {
        (self.sold as f64 + 1.0) / (self.trials as f64 + 2.0)
    }
}

/// One arm's surface: per-feature quantile cut points and per-bin counts.
#[derive(Debug, Clone, PartialEq)]
struct Surface {
    cuts: Vec<Vec<f64>>,
    counts: Vec<BinCounts>,
}

impl Surface {
    fn fit(rows: &[(&ItemRecord, bool)], bins: usize) -> Self {
        let n_features = rows.first().map_or(0, |(r, _)| r.features.len());
        let cuts = (0..n_features)
            .map(|f| {
                let mut col: Vec<f64> = rows.iter().map(|(r, _)| r.features[f]).collect();
                col.sort_by(f64::total_cmp);
                quantile_cuts(&col, bins)
            })
            .collect();
        let mut surface = Surface {
            cuts,
            counts: vec![BinCounts::default(); bins],
        };
        for (item, sold) in rows {
            let b = surface.bin_of(&item.features);
            surface.counts[b].trials += 1;
            surface.counts[b].sold += *sold as u64;
        }
        surface
    }

    fn bin_of(&self, features: &[f64]) -> usize {
        let bins = self.counts.len();
        if bins == 1 {
            return 0;
        }
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for (f, cuts) in self.cuts.iter().enumerate() {
            let x = features.get(f).copied().unwrap_or(0.0);
            let idx = cuts.partition_point(|&c| c <= x) as u64;
            h = mix(h ^ mix(idx.wrapping_add((f as u64) << 32)));
        }
        (h % bins as u64) as usize
    }

    fn rate(&self, features: &[f64]) -> f64 {
        self.counts[self.bin_of(features)].rate()
    }
}

/// Equal-frequency cut points (at most `bins - 1`, deduplicated) of a sorted column.
fn quantile_cuts(sorted: &[f64], bins: usize) -> Vec<f64> {
    let n = sorted.len();
    let mut cuts: Vec<f64> = (1..bins)
        .filter_map(|j| {
            let idx = j * n / bins;
            (idx < n).then(|| sorted[idx])
        })
        .collect();
    cuts.dedup();
    cuts
}

/// splitmix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Laplace-smoothed empirical sale rates over hashed feature bins, one
/// surface per trial arm.
#[derive(Debug, Clone, PartialEq)]
pub struct BinnedFrequencyScorer {
    control: Surface,
    treatment: Surface,
}

impl Scorer for BinnedFrequencyScorer {
    fn predict(&self, item: &ItemRecord) -> Result<(f64, f64), ScoringError> {
        Ok((
            self.control.rate(&item.features),
            self.treatment.rate(&item.features),
        ))
    }
}

/// Fits the default T-learner: the control surface sees only untreated
/// trial items and the treatment surface only treated ones.
pub fn fit_t_learner(
    training_log: &RctLog,
    dataset: &Dataset,
    bins: usize,
) -> Result<BinnedFrequencyScorer, ScoringError> {
    if bins == 0 {
        return Err(ScoringError::InvalidParameter(
            "bins must be positive".into(),
        ));
    }
    let mut control = Vec::new();
    let mut treatment = Vec::new();
    for rec in &training_log.records {
        let item = dataset
            .item(rec.item_id)
            .ok_or(ScoringError::UnknownItem(rec.item_id))?;
        if rec.assignment {
            treatment.push((item, rec.sold));
        } else {
            control.push((item, rec.sold));
        }
    }
    if control.is_empty() {
        return Err(ScoringError::EmptyArm(Arm::Control));
    }
    if treatment.is_empty() {
        return Err(ScoringError::EmptyArm(Arm::Treatment));
    }
    Ok(BinnedFrequencyScorer {
        control: Surface::fit(&control, bins),
        treatment: Surface::fit(&treatment, bins),
    })
}

/// Percentile floor on the predicted with-coupon sale rate.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct QualityThreshold(f64);

impl QualityThreshold {
    pub const NONE: QualityThreshold = QualityThreshold(0.0);

    pub fn new(percentile: f64) -> Result<Self, ScoringError> {
        if (0.0..=100.0).contains(&percentile) {
            Ok(Self(percentile))
        } else {
            Err(ScoringError::InvalidParameter(format!(
                "quality percentile must lie in [0, 100], got {percentile}"
            )))
        }
    }

    pub fn percentile(&self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for QualityThreshold {
    type Error = ScoringError;
    fn try_from(v: f64) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<QualityThreshold> for f64 {
    fn from(q: QualityThreshold) -> f64 {
        q.0
    }
}

/// Items whose `f1` is at least the `q`-th percentile of all `f1` values.
///
/// With `n` scores sorted ascending, the cut value is the one at zero-based
/// rank `floor(q * n / 100)`, so the `floor(q * n / 100)` weakest items fall
/// out (plus none of their ties above). `q = 0` keeps everything; `q = 100`
/// keeps nothing.
pub fn apply_quality_filter(scores: &[ItemScore], q: QualityThreshold) -> BTreeSet<ItemId> {
    if scores.is_empty() {
        return BTreeSet::new();
    }
    let mut f1: Vec<f64> = scores.iter().map(ItemScore::f1).collect();
    f1.sort_by(f64::total_cmp);
    let rank = (q.percentile() * f1.len() as f64 / 100.0).floor() as usize;
    let Some(&cut) = f1.get(rank) else {
        return BTreeSet::new();
    };
    scores
        .iter()
        .filter(|s| s.f1() >= cut)
        .map(ItemScore::item_id)
        .collect()
}

/// Coupon-eligible items: the quality filter, intersected with positive
/// predicted uplift unless `allow_negative_uplift` is set.
pub fn eligible_items(
    scores: &[ItemScore],
    q: QualityThreshold,
    allow_negative_uplift: bool,
) -> BTreeSet<ItemId> {
    let by_id: HashMap<ItemId, &ItemScore> = scores.iter().map(|s| (s.item_id(), s)).collect();
    apply_quality_filter(scores, q)
        .into_iter()
        .filter(|id| allow_negative_uplift || by_id[id].pi() > 0.0)
        .collect()
}
