//! Sales experience rate (SER): the probability that a provider sells at
//! least one item, its coupon-induced gain, and the per-provider coupon
//! pattern curves consumed by the allocation solvers.
//!
//! Item sales are independent, so a provider with no-sale probabilities
//! `q_i` has `SER = 1 - prod q_i`, where `q_i = 1 - f1_i` for couponed items
//! and `1 - f0_i` otherwise.

use std::collections::{BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Dataset, ItemId, ItemScore, ProviderId};

/// Portfolios larger than this multiply in log space.
pub const DIRECT_PRODUCT_LIMIT: usize = 64;

#[derive(Debug, Error, PartialEq)]
pub enum SerError {
    #[error("assignment has {found} entries, provider {provider} has {expected} items")]
    DimensionMismatch {
        provider: ProviderId,
        expected: usize,
        found: usize,
    },
    #[error("no score for item {0}")]
    MissingScore(ItemId),
}

/// Order in which a provider's eligible items receive coupons.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OrderingPolicy {
    /// Largest item uplift `f1 - f0` first.
    #[default]
    PiDesc,
    /// Smallest survival ratio `(1 - f1) / (1 - f0)` first. Optimal for every
    /// fixed number of coupons within a provider.
    SurvivalRatio,
}

/// Product of no-sale probabilities.
pub fn survival(no_sale: &[f64]) -> f64 {
    if no_sale.len() > DIRECT_PRODUCT_LIMIT {
        no_sale.iter().map(|q| q.ln()).sum::<f64>().exp()
    } else {
        no_sale.iter().product()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProviderPortfolio {
    pub provider_id: ProviderId,
    pub items: Vec<ItemScore>,
    pub eligible: Vec<bool>,
    pub ordering: OrderingPolicy,
    base_survival: f64,
}

impl ProviderPortfolio {
    pub fn new(
        provider_id: ProviderId,
        items: Vec<ItemScore>,
        eligible: Vec<bool>,
        ordering: OrderingPolicy,
    ) -> Result<Self, SerError> {
        if eligible.len() != items.len() {
            return Err(SerError::DimensionMismatch {
                provider: provider_id,
                expected: items.len(),
                found: eligible.len(),
            });
        }
        let base: Vec<f64> = items.iter().map(|s| 1.0 - s.f0()).collect();
        Ok(Self {
            provider_id,
            base_survival: survival(&base),
            items,
            eligible,
            ordering,
        })
    }

    /// A portfolio where every item is eligible.
    pub fn all_eligible(
        provider_id: ProviderId,
        items: Vec<ItemScore>,
        ordering: OrderingPolicy,
    ) -> Self {
        let eligible = vec![true; items.len()];
        Self::new(provider_id, items, eligible, ordering).expect("lengths match")
    }

    /// Probability that no item sells without any coupon.
    pub fn base_survival(&self) -> f64 {
        self.base_survival
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    fn check(&self, z: &[bool]) -> Result<(), SerError> {
        if z.len() != self.items.len() {
            return Err(SerError::DimensionMismatch {
                provider: self.provider_id,
                expected: self.items.len(),
                found: z.len(),
            });
        }
        Ok(())
    }

    fn survival_under(&self, z: &[bool]) -> f64 {
        let q: Vec<f64> = self
            .items
            .iter()
            .zip(z)
            .map(|(s, &c)| if c { 1.0 - s.f1() } else { 1.0 - s.f0() })
            .collect();
        survival(&q)
    }
}

/// SER of a provider under coupon assignment `z`.
pub fn ser(portfolio: &ProviderPortfolio, z: &[bool]) -> Result<f64, SerError> {
    portfolio.check(z)?;
    Ok(1.0 - portfolio.survival_under(z))
}

/// Gain in SER from assignment `z` over no coupons, computed as
/// `prod(1 - f0) - prod(no-sale under z)`.
pub fn ser_delta(portfolio: &ProviderPortfolio, z: &[bool]) -> Result<f64, SerError> {
    portfolio.check(z)?;
    Ok(portfolio.base_survival - portfolio.survival_under(z))
}

/// `deltas[k]` is the SER gain from couponing the first `k` items of
/// `item_order`. `deltas[0] == 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternCurve {
    pub provider_id: ProviderId,
    pub item_order: Vec<ItemId>,
    /// `f1 - f0` of each item in `item_order`.
    pub item_uplift: Vec<f64>,
    pub deltas: Vec<f64>,
}

impl PatternCurve {
    /// Number of eligible items (the largest admissible k).
    pub fn max_coupons(&self) -> usize {
        self.item_order.len()
    }

    pub fn marginal(&self, k: usize) -> f64 {
        self.deltas[k + 1] - self.deltas[k]
    }

    /// True when marginal gains never increase.
    pub fn is_concave(&self) -> bool {
        (1..self.max_coupons()).all(|k| self.marginal(k) <= self.marginal(k - 1))
    }
}

fn survival_ratio(s: &ItemScore) -> f64 {
    let denom = 1.0 - s.f0();
    if denom <= 0.0 {
        // A certain sale without coupon: the coupon changes nothing.
        1.0
    } else {
        (1.0 - s.f1()) / denom
    }
}

/// Eligible item positions in intervention order; ties by ascending item id.
fn intervention_order(portfolio: &ProviderPortfolio) -> Vec<usize> {
    let mut order: Vec<usize> = (0..portfolio.len())
        .filter(|&i| portfolio.eligible[i])
        .collect();
    let items = &portfolio.items;
    match portfolio.ordering {
        OrderingPolicy::PiDesc => order.sort_by(|&a, &b| {
            items[b]
                .pi()
                .total_cmp(&items[a].pi())
                .then(items[a].item_id().cmp(&items[b].item_id()))
        }),
        OrderingPolicy::SurvivalRatio => order.sort_by(|&a, &b| {
            survival_ratio(&items[a])
                .total_cmp(&survival_ratio(&items[b]))
                .then(items[a].item_id().cmp(&items[b].item_id()))
        }),
    }
    order
}

pub fn build_pattern_curve(portfolio: &ProviderPortfolio) -> PatternCurve {
    let order = intervention_order(portfolio);
    let mut z = vec![false; portfolio.len()];
    let mut deltas = Vec::with_capacity(order.len() + 1);
    deltas.push(0.0);
    for &pos in &order {
        z[pos] = true;
        deltas.push(portfolio.base_survival - portfolio.survival_under(&z));
    }
    PatternCurve {
        provider_id: portfolio.provider_id,
        item_order: order
            .iter()
            .map(|&p| portfolio.items[p].item_id())
            .collect(),
        item_uplift: order.iter().map(|&p| portfolio.items[p].pi()).collect(),
        deltas,
    }
}

/// One portfolio per dataset provider, in provider order.
pub fn build_portfolios(
    dataset: &Dataset,
    scores: &[ItemScore],
    eligible: &BTreeSet<ItemId>,
    ordering: OrderingPolicy,
) -> Result<Vec<ProviderPortfolio>, SerError> {
    let by_id: HashMap<ItemId, &ItemScore> = scores.iter().map(|s| (s.item_id(), s)).collect();
    dataset
        .providers()
        .par_iter()
        .map(|group| {
            let mut items = Vec::with_capacity(group.members.len());
            let mut flags = Vec::with_capacity(group.members.len());
            for &pos in &group.members {
                let id = dataset.items()[pos].item_id;
                let score = by_id.get(&id).ok_or(SerError::MissingScore(id))?;
                items.push(**score);
                flags.push(eligible.contains(&id));
            }
            ProviderPortfolio::new(group.id, items, flags, ordering)
        })
        .collect()
}

pub fn build_pattern_curves(portfolios: &[ProviderPortfolio]) -> Vec<PatternCurve> {
    portfolios.par_iter().map(build_pattern_curve).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scores(pairs: &[(f64, f64)]) -> Vec<ItemScore> {
        pairs
            .iter()
            .enumerate()
            .map(|(i, &(f0, f1))| ItemScore::new(ItemId(i as u64), f0, f1).unwrap())
            .collect()
    }

    fn portfolio(pairs: &[(f64, f64)], ordering: OrderingPolicy) -> ProviderPortfolio {
        ProviderPortfolio::all_eligible(ProviderId(0), scores(pairs), ordering)
    }

    #[test]
    fn single_item_ser_is_its_rate() {
        let p = portfolio(&[(0.2, 0.7)], OrderingPolicy::PiDesc);
        assert!((ser(&p, &[false]).unwrap() - 0.2).abs() < 1e-12);
    }

    #[test]
    fn two_item_ser() {
        let p = portfolio(&[(0.2, 0.6), (0.5, 0.5)], OrderingPolicy::PiDesc);
        assert!((ser(&p, &[true, false]).unwrap() - 0.8).abs() < 1e-12);
    }

    #[test]
    fn no_effect_means_no_change() {
        let p = portfolio(
            &[(0.2, 0.2), (0.35, 0.35), (0.9, 0.9)],
            OrderingPolicy::PiDesc,
        );
        let all = ser(&p, &[true; 3]).unwrap();
        let none = ser(&p, &[false; 3]).unwrap();
        assert!((all - none).abs() < 1e-12);
        assert!((none - (1.0 - p.base_survival())).abs() < 1e-12);
    }

    #[test]
    fn delta_examples() {
        let p = portfolio(&[(0.1, 0.5), (0.1, 0.4)], OrderingPolicy::PiDesc);
        assert_eq!(ser_delta(&p, &[false, false]).unwrap(), 0.0);
        assert!((ser_delta(&p, &[true, false]).unwrap() - 0.36).abs() < 1e-12);

        let saturated = portfolio(&[(1.0, 1.0), (0.2, 0.9)], OrderingPolicy::PiDesc);
        for z in [[false, false], [true, false], [false, true], [true, true]] {
            assert_eq!(ser_delta(&saturated, &z).unwrap(), 0.0);
        }
    }

    #[test]
    fn dimension_mismatch() {
        let p = portfolio(&[(0.1, 0.5), (0.1, 0.4)], OrderingPolicy::PiDesc);
        assert!(matches!(
            ser(&p, &[true]),
            Err(SerError::DimensionMismatch { .. })
        ));
        assert!(ser_delta(&p, &[true, false, true]).is_err());
    }

    #[test]
    fn pi_desc_curve_example() {
        let c = build_pattern_curve(&portfolio(
            &[(0.1, 0.4), (0.1, 0.5)],
            OrderingPolicy::PiDesc,
        ));
        assert_eq!(c.item_order, vec![ItemId(1), ItemId(0)]);
        assert_eq!(c.deltas.len(), 3);
        assert_eq!(c.deltas[0], 0.0);
        assert!((c.deltas[1] - 0.36).abs() < 1e-12);
        assert!((c.deltas[2] - 0.51).abs() < 1e-12);
    }

    #[test]
    fn certain_sale_item_goes_first_under_survival_ratio() {
        let p = portfolio(
            &[(0.3, 0.6), (0.2, 1.0), (0.1, 0.9)],
            OrderingPolicy::SurvivalRatio,
        );
        let c = build_pattern_curve(&p);
        assert_eq!(c.item_order[0], ItemId(1));
        assert!((c.deltas[1] - p.base_survival()).abs() < 1e-15);
    }

    #[test]
    fn ties_break_by_item_id() {
        let items = vec![
            ItemScore::new(ItemId(9), 0.1, 0.3).unwrap(),
            ItemScore::new(ItemId(4), 0.2, 0.4).unwrap(),
            ItemScore::new(ItemId(6), 0.0, 0.2).unwrap(),
        ];
        let c = build_pattern_curve(&ProviderPortfolio::all_eligible(
            ProviderId(0),
            items,
            OrderingPolicy::PiDesc,
        ));
        assert_eq!(c.item_order, vec![ItemId(4), ItemId(6), ItemId(9)]);
    }

    #[test]
    fn ineligible_items_count_in_baseline_only() {
        let items = scores(&[(0.5, 0.9), (0.1, 0.6)]);
        let p = ProviderPortfolio::new(
            ProviderId(0),
            items,
            vec![false, true],
            OrderingPolicy::PiDesc,
        )
        .unwrap();
        assert!((p.base_survival() - 0.45).abs() < 1e-12);
        let c = build_pattern_curve(&p);
        assert_eq!(c.item_order, vec![ItemId(1)]);
        assert!((c.deltas[1] - (0.45 - 0.5 * 0.4)).abs() < 1e-12);
    }

    #[test]
    fn no_eligible_items_gives_trivial_curve() {
        let p = ProviderPortfolio::new(
            ProviderId(3),
            scores(&[(0.1, 0.2)]),
            vec![false],
            OrderingPolicy::PiDesc,
        )
        .unwrap();
        let c = build_pattern_curve(&p);
        assert_eq!(c.deltas, vec![0.0]);
        assert!(c.item_order.is_empty());
    }

    #[test]
    fn log_space_matches_direct_product() {
        let q: Vec<f64> = (0..200).map(|i| 0.97 + 0.0001 * i as f64).collect();
        let direct: f64 = q.iter().product();
        assert!((survival(&q) - direct).abs() < 1e-12);
        let tiny = vec![0.01; 400];
        assert!(survival(&tiny) >= 0.0);
    }
}
