use std::cmp::Ordering;
use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{coupons_to_place, AllocError};
use crate::domain::{AllocationPlan, BudgetMode, BudgetSpec, ItemId, ItemScore};
use crate::ser::PatternCurve;

/// Uniformly random subset of the eligible items.
pub fn allocate_random(
    population: &[ItemId],
    eligible: &BTreeSet<ItemId>,
    budget: BudgetSpec,
    seed: u64,
) -> Result<AllocationPlan, AllocError> {
    let candidates: Vec<ItemId> = eligible.iter().copied().collect();
    let n = coupons_to_place(budget, candidates.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let selected: Vec<ItemId> = sample(&mut rng, candidates.len(), n)
        .into_iter()
        .map(|i| candidates[i])
        .collect();
    Ok(AllocationPlan::from_selection(
        "random",
        budget,
        population.iter().copied(),
        &selected,
    ))
}

/// Top items by `key`, descending, ties by ascending item id. In at-most mode
/// items with a non-positive key are never taken.
fn top_by_key(
    name: &str,
    scores: &[ItemScore],
    eligible: &BTreeSet<ItemId>,
    budget: BudgetSpec,
    key: impl Fn(&ItemScore) -> Result<f64, AllocError>,
) -> Result<AllocationPlan, AllocError> {
    let mut ranked = Vec::with_capacity(eligible.len());
    for s in scores.iter().filter(|s| eligible.contains(&s.item_id())) {
        ranked.push((key(s)?, s.item_id()));
    }
    let n = coupons_to_place(budget, ranked.len())?;
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let selected: Vec<ItemId> = ranked
        .iter()
        .take(n)
        .take_while(|(k, _)| budget.mode == BudgetMode::Exact || *k > 0.0)
        .map(|&(_, id)| id)
        .collect();
    Ok(AllocationPlan::from_selection(
        name,
        budget,
        scores.iter().map(ItemScore::item_id),
        &selected,
    ))
}

/// The `N` eligible items with the largest predicted uplift.
pub fn allocate_item_greedy(
    scores: &[ItemScore],
    eligible: &BTreeSet<ItemId>,
    budget: BudgetSpec,
) -> Result<AllocationPlan, AllocError> {
    top_by_key("i-greedy", scores, eligible, budget, |s| Ok(s.pi()))
}

/// Maximizes the product of item sale rates, i.e. the `N` eligible items
/// with the largest `ln(f1 / f0)`.
///
/// An item with `f0 = 0` and `f1 > 0` ranks first; `f0 = f1 = 0` is an error.
pub fn allocate_nsw(
    scores: &[ItemScore],
    eligible: &BTreeSet<ItemId>,
    budget: BudgetSpec,
) -> Result<AllocationPlan, AllocError> {
    top_by_key("nsw", scores, eligible, budget, |s| {
        match (s.f0() > 0.0, s.f1() > 0.0) {
            (true, true) => Ok((s.f1() / s.f0()).ln()),
            (true, false) => Ok(f64::NEG_INFINITY),
            (false, true) => Ok(f64::INFINITY),
            (false, false) => Err(AllocError::ZeroBaseRate(s.item_id())),
        }
    })
}

/// Round-robin over providers: each round coupons the next item of every
/// provider's curve. Providers go in order of their best item uplift,
/// ties by provider id.
pub fn allocate_provider_greedy(
    curves: &[PatternCurve],
    population: &[ItemId],
    budget: BudgetSpec,
) -> Result<AllocationPlan, AllocError> {
    let available: usize = curves.iter().map(PatternCurve::max_coupons).sum();
    let n = coupons_to_place(budget, available)?;

    let best = |c: &PatternCurve| {
        c.item_uplift
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let mut order: Vec<(f64, &PatternCurve)> = curves
        .iter()
        .filter(|c| c.max_coupons() > 0)
        .map(|c| (best(c), c))
        .collect();
    order.sort_by(|a, b| match b.0.total_cmp(&a.0) {
        Ordering::Equal => a.1.provider_id.cmp(&b.1.provider_id),
        other => other,
    });

    let mut selected = Vec::with_capacity(n);
    let mut round = 0;
    'rounds: while selected.len() < n {
        let mut placed_any = false;
        for (_, c) in &order {
            if selected.len() == n {
                break 'rounds;
            }
            if round < c.max_coupons() {
                if budget.mode == BudgetMode::AtMost && c.item_uplift[round] <= 0.0 {
                    continue;
                }
                selected.push(c.item_order[round]);
                placed_any = true;
            }
        }
        if !placed_any {
            break;
        }
        round += 1;
    }
    Ok(AllocationPlan::from_selection(
        "p-greedy",
        budget,
        population.iter().copied(),
        &selected,
    ))
}
