//! Synthetic marketplaces with known sale probabilities, and randomized
//! coupon trials run on top of them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, LogNormal, Normal, Zipf};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    clamp_probability, is_probability, validate_dataset, AllocationPlan, Dataset, ItemId,
    ItemRecord, ProviderId,
};
use crate::ser::survival;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid market config: {0}")]
    InvalidConfig(String),
    #[error("item {0} has no ground-truth sale probabilities")]
    MissingGroundTruth(ItemId),
    #[error("plan covers item {0} which is not in the dataset")]
    UnknownItem(ItemId),
}

/// Maps an item's base rate to its with-coupon rate: `p1 = clamp(p0 * lift)`.
///
/// With probability `negative_prob` the lift is drawn uniformly from
/// `negative_range` (below 1, the coupon hurts); otherwise it is
/// `1 + LogNormal(ln(median_excess), log_sigma)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LiftModel {
    pub median_excess: f64,
    pub log_sigma: f64,
    pub negative_prob: f64,
    pub negative_range: (f64, f64),
}

impl Default for LiftModel {
    fn default() -> Self {
        Self {
            median_excess: 0.8,
            log_sigma: 0.6,
            negative_prob: 0.05,
            negative_range: (0.5, 1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarketConfig {
    pub n_providers: usize,
    /// Exponent of the Zipf law on per-provider item counts.
    pub zipf_exponent: f64,
    /// Largest item count a provider can hold.
    pub max_items: usize,
    /// Beta shape parameters of the no-coupon sale rate.
    pub p0_beta: (f64, f64),
    pub lift: LiftModel,
    /// Standard deviation of the noise added to the informative features.
    pub feature_noise: f64,
    pub seed: u64,
}

impl Default for MarketConfig {
    fn default() -> Self {
        Self {
            n_providers: 1000,
            zipf_exponent: 1.5,
            max_items: 200,
            p0_beta: (1.0, 9.0),
            lift: LiftModel::default(),
            feature_noise: 0.5,
            seed: 0,
        }
    }
}

/// Number of feature columns emitted by [`generate_market`].
pub const FEATURE_COUNT: usize = 3;

impl MarketConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: &str| Err(SimError::InvalidConfig(msg.to_string()));
        if self.n_providers == 0 {
            return bad("n_providers must be positive");
        }
        if !(self.zipf_exponent > 0.0 && self.zipf_exponent.is_finite()) {
            return bad("zipf_exponent must be positive");
        }
        if self.max_items == 0 {
            return bad("max_items must be positive");
        }
        let (a, b) = self.p0_beta;
        if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
            return bad("p0_beta shapes must be positive");
        }
        let l = &self.lift;
        if !(l.median_excess > 0.0 && l.median_excess.is_finite()) {
            return bad("lift.median_excess must be positive");
        }
        if !(l.log_sigma >= 0.0 && l.log_sigma.is_finite()) {
            return bad("lift.log_sigma must be non-negative");
        }
        if !is_probability(l.negative_prob) {
            return bad("lift.negative_prob must be a probability");
        }
        let (lo, hi) = l.negative_range;
        if !(0.0 <= lo && lo < hi && hi <= 1.0) {
            return bad("lift.negative_range must satisfy 0 <= lo < hi <= 1");
        }
        if !(self.feature_noise >= 0.0 && self.feature_noise.is_finite()) {
            return bad("feature_noise must be non-negative");
        }
        Ok(())
    }
}

/// A ChaCha stream keyed by `(seed, stream)`; independent of thread count.
pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

struct ProviderDraw {
    p0: Vec<f64>,
    p1: Vec<f64>,
    features: Vec<Vec<f64>>,
}

/// Generates a market with heavy-tailed item counts and ground-truth rates.
///
/// Provider `j` gets id `j`; item ids are dense, numbered provider by
/// provider. Each provider draws from its own stream of the master seed.
pub fn generate_market(config: &MarketConfig) -> Result<Dataset, SimError> {
    config.validate()?;
    let zipf = Zipf::new(config.max_items as f64, config.zipf_exponent)
        .map_err(|e| SimError::InvalidConfig(e.to_string()))?;
    let beta = Beta::new(config.p0_beta.0, config.p0_beta.1)
        .map_err(|e| SimError::InvalidConfig(e.to_string()))?;
    let lift = LogNormal::new(config.lift.median_excess.ln(), config.lift.log_sigma)
        .map_err(|e| SimError::InvalidConfig(e.to_string()))?;
    let noise = Normal::new(0.0, config.feature_noise)
        .map_err(|e| SimError::InvalidConfig(e.to_string()))?;
    let (neg_lo, neg_hi) = config.lift.negative_range;

    let draws: Vec<ProviderDraw> = (0..config.n_providers)
        .into_par_iter()
        .map(|j| {
            let mut rng = stream_rng(config.seed, j as u64);
            let count = zipf.sample(&mut rng) as usize;
            let mut draw = ProviderDraw {
                p0: Vec::with_capacity(count),
                p1: Vec::with_capacity(count),
                features: Vec::with_capacity(count),
            };
            for _ in 0..count {
                let p0: f64 = beta.sample(&mut rng);
                let factor = if rng.random::<f64>() < config.lift.negative_prob {
                    rng.random_range(neg_lo..neg_hi)
                } else {
                    1.0 + lift.sample(&mut rng)
                };
                let p1 = clamp_probability(p0 * factor);
                let logit = (p0.max(1e-9) / (1.0 - p0).max(1e-9)).ln();
                draw.features.push(vec![
                    logit + noise.sample(&mut rng),
                    factor.max(1e-9).ln() + noise.sample(&mut rng),
                    rng.random::<f64>(),
                ]);
                draw.p0.push(p0);
                draw.p1.push(p1);
            }
            draw
        })
        .collect();

    let mut items = Vec::with_capacity(draws.iter().map(|d| d.p0.len()).sum());
    for (j, draw) in draws.into_iter().enumerate() {
        for ((p0, p1), features) in draw.p0.into_iter().zip(draw.p1).zip(draw.features) {
            items.push(ItemRecord {
                item_id: ItemId(items.len() as u64),
                provider_id: ProviderId(j as u64),
                features,
                true_p0: Some(p0),
                true_p1: Some(p1),
            });
        }
    }
    validate_dataset(items).map_err(|e| SimError::InvalidConfig(e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RctRecord {
    pub item_id: ItemId,
    /// Coupon assigned by the randomized trial.
    pub assignment: bool,
    pub sold: bool,
}

/// Outcome of one randomized coupon trial, one record per item.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RctLog {
    pub records: Vec<RctRecord>,
}

impl RctLog {
    pub fn new(records: Vec<RctRecord>) -> Self {
        Self { records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn treated_count(&self) -> usize {
        self.records.iter().filter(|r| r.assignment).count()
    }
}

/// Assigns coupons independently per item with probability `treat_prob` and
/// draws each sale from the matching ground-truth rate.
pub fn run_rct(dataset: &Dataset, treat_prob: f64, seed: u64) -> Result<RctLog, SimError> {
    if !is_probability(treat_prob) {
        return Err(SimError::InvalidConfig(format!(
            "treat_prob {treat_prob} is not a probability"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(dataset.len());
    for item in dataset.items() {
        let (p0, p1) = item
            .ground_truth()
            .ok_or(SimError::MissingGroundTruth(item.item_id))?;
        let assignment = rng.random::<f64>() < treat_prob;
        let p = if assignment { p1 } else { p0 };
        let sold = rng.random::<f64>() < p;
        records.push(RctRecord {
            item_id: item.item_id,
            assignment,
            sold,
        });
    }
    Ok(RctLog { records })
}

/// Expected extra items sold if `plan` were deployed: the sum of
/// `p1 - p0` over couponed items.
pub fn true_uplift_items(dataset: &Dataset, plan: &AllocationPlan) -> Result<f64, SimError> {
    let mut total = 0.0;
    for id in plan.couponed() {
        let item = dataset.item(id).ok_or(SimError::UnknownItem(id))?;
        let (p0, p1) = item
            .ground_truth()
            .ok_or(SimError::MissingGroundTruth(id))?;
        total += p1 - p0;
    }
    Ok(total)
}

/// Expected extra successful providers if `plan` were deployed: the sum over
/// providers of the ground-truth sales-experience-rate gain.
pub fn true_uplift_providers(dataset: &Dataset, plan: &AllocationPlan) -> Result<f64, SimError> {
    let items = dataset.items();
    if let Some(id) = plan.couponed().find(|id| dataset.position(*id).is_none()) {
        return Err(SimError::UnknownItem(id));
    }
    let mut total = 0.0;
    for group in dataset.providers() {
        let mut base = Vec::with_capacity(group.members.len());
        let mut treated = Vec::with_capacity(group.members.len());
        let mut any = false;
        for &pos in &group.members {
            let item = &items[pos];
            let (p0, p1) = item
                .ground_truth()
                .ok_or(SimError::MissingGroundTruth(item.item_id))?;
            let coupon = plan.is_couponed(item.item_id).unwrap_or(false);
            any |= coupon;
            base.push(1.0 - p0);
            treated.push(if coupon { 1.0 - p1 } else { 1.0 - p0 });
        }
        if any {
            total += survival(&base) - survival(&treated);
        }
    }
    Ok(total)
}
