use std::collections::BTreeSet;

use proptest::prelude::*;
use proptest::strategy::ValueTree;

use sercoupon::alloc::{
    allocate_item_greedy, allocate_nsw, allocate_provider_greedy, allocate_random, allocate_ser,
    solve_mckp, SolverChoice,
};
use sercoupon::domain::{validate_dataset, BudgetSpec, ItemId, ItemRecord, ItemScore, ProviderId};
use sercoupon::scoring::{eligible_items, QualityThreshold};
use sercoupon::ser::{build_pattern_curves, build_portfolios, OrderingPolicy, PatternCurve};

/// Providers as lists of (f0, f1) with f1 > f0.
fn instance(max_providers: usize, max_items: usize) -> impl Strategy<Value = Vec<Vec<(f64, f64)>>> {
    let pair = (0.0..0.98f64, 0.01..1.0f64).prop_map(|(f0, t)| (f0, f0 + t * (1.0 - f0)));
    prop::collection::vec(
        prop::collection::vec(pair, 1..=max_items),
        1..=max_providers,
    )
}

struct Built {
    scores: Vec<ItemScore>,
    curves: Vec<PatternCurve>,
    population: Vec<ItemId>,
    pairs: Vec<(f64, f64)>,
    owner: Vec<usize>,
}

fn build(providers: &[Vec<(f64, f64)>], ordering: OrderingPolicy) -> Built {
    let mut records = Vec::new();
    let mut scores = Vec::new();
    let mut pairs = Vec::new();
    let mut owner = Vec::new();
    for (p, items) in providers.iter().enumerate() {
        for &(f0, f1) in items {
            let id = ItemId(records.len() as u64);
            records.push(ItemRecord {
                item_id: id,
                provider_id: ProviderId(p as u64),
                features: vec![],
                true_p0: Some(f0),
                true_p1: Some(f1),
            });
            scores.push(ItemScore::new(id, f0, f1).unwrap());
            pairs.push((f0, f1));
            owner.push(p);
        }
    }
    let ds = validate_dataset(records).unwrap();
    let all: BTreeSet<ItemId> = ds.item_ids().collect();
    let curves = build_pattern_curves(&build_portfolios(&ds, &scores, &all, ordering).unwrap());
    Built {
        population: ds.item_ids().collect(),
        scores,
        curves,
        pairs,
        owner,
    }
}

/// Sum of per-provider SER gains of an arbitrary 0/1 assignment.
fn assignment_value(b: &Built, z: &[bool], n_providers: usize) -> f64 {
    let mut base = vec![1.0; n_providers];
    let mut treated = vec![1.0; n_providers];
    for (i, &(f0, f1)) in b.pairs.iter().enumerate() {
        base[b.owner[i]] *= 1.0 - f0;
        treated[b.owner[i]] *= if z[i] { 1.0 - f1 } else { 1.0 - f0 };
    }
    base.iter().zip(&treated).map(|(a, t)| a - t).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn dp_matches_brute_force(providers in instance(4, 4), n in 0usize..17, pi in any::<bool>()) {
        let ordering = if pi { OrderingPolicy::PiDesc } else { OrderingPolicy::SurvivalRatio };
        let b = build(&providers, ordering);
        let n = n.min(b.pairs.len());
        for budget in [BudgetSpec::exact(n), BudgetSpec::at_most(n)] {
            let dp = solve_mckp(&b.curves, budget, SolverChoice::DpExact).unwrap();
            let bf = solve_mckp(&b.curves, budget, SolverChoice::BruteForce).unwrap();
            prop_assert_eq!(dp.objective, bf.objective);
            prop_assert!(budget.admits(dp.total_coupons()));
        }
    }

    #[test]
    fn greedy_is_optimal_on_survival_ratio_curves(providers in instance(30, 8), frac in 0.0..=1.0f64) {
        let b = build(&providers, OrderingPolicy::SurvivalRatio);
        let n = (frac * b.pairs.len() as f64) as usize;
        let dp = solve_mckp(&b.curves, BudgetSpec::exact(n), SolverChoice::DpExact).unwrap();
        let gr = solve_mckp(&b.curves, BudgetSpec::exact(n), SolverChoice::GreedyMarginal).unwrap();
        prop_assert!((dp.objective - gr.objective).abs() <= 1e-12);
    }

    #[test]
    fn survival_ratio_dp_is_globally_optimal(providers in instance(4, 4), n in 0usize..17) {
        let b = build(&providers, OrderingPolicy::SurvivalRatio);
        let total = b.pairs.len();
        let n = n.min(total);
        let dp = solve_mckp(&b.curves, BudgetSpec::exact(n), SolverChoice::DpExact).unwrap();
        let mut best = f64::NEG_INFINITY;
        for mask in 0u32..(1 << total) {
            if mask.count_ones() as usize == n {
                let z: Vec<bool> = (0..total).map(|i| mask >> i & 1 == 1).collect();
                best = best.max(assignment_value(&b, &z, providers.len()));
            }
        }
        prop_assert!((dp.objective - best).abs() <= 1e-9);
    }

    #[test]
    fn every_strategy_meets_its_budget_and_eligibility(
        providers in instance(12, 6),
        frac in 0.0..=1.0f64,
        q in 0.0..=50.0f64,
        seed in any::<u64>(),
    ) {
        let b = build(&providers, OrderingPolicy::PiDesc);
        let q = QualityThreshold::new(q).unwrap();
        let eligible = eligible_items(&b.scores, q, false);
        let n = (frac * eligible.len() as f64) as usize;
        let budget = BudgetSpec::exact(n);
        let mut records = Vec::new();
        for (i, &(f0, f1)) in b.pairs.iter().enumerate() {
            records.push(ItemRecord {
                item_id: ItemId(i as u64),
                provider_id: ProviderId(b.owner[i] as u64),
                features: vec![],
                true_p0: Some(f0),
                true_p1: Some(f1),
            });
        }
        let ds = validate_dataset(records).unwrap();
        let curves = build_pattern_curves(
            &build_portfolios(&ds, &b.scores, &eligible, OrderingPolicy::PiDesc).unwrap(),
        );
        let plans = vec![
            allocate_random(&b.population, &eligible, budget, seed).unwrap(),
            allocate_item_greedy(&b.scores, &eligible, budget).unwrap(),
            allocate_nsw(&b.scores, &eligible, budget).unwrap(),
            allocate_provider_greedy(&curves, &b.population, budget).unwrap(),
            allocate_ser(&curves, &b.population, budget, SolverChoice::DpExact).unwrap(),
        ];
        for plan in plans {
            prop_assert_eq!(plan.coupon_count(), n, "{}", plan.strategy_name);
            prop_assert!(!plan.infeasible);
            prop_assert_eq!(plan.len(), b.pairs.len());
            prop_assert!(plan.couponed().all(|id| eligible.contains(&id)), "{}", plan.strategy_name);
        }
    }
}

#[test]
fn dp_matches_brute_force_on_thousand_instances() {
    let mut runner = proptest::test_runner::TestRunner::deterministic();
    for _ in 0..1000 {
        let providers = instance(4, 4).new_tree(&mut runner).unwrap().current();
        let b = build(&providers, OrderingPolicy::PiDesc);
        for n in 0..=b.pairs.len() {
            let dp = solve_mckp(&b.curves, BudgetSpec::exact(n), SolverChoice::DpExact).unwrap();
            let bf = solve_mckp(&b.curves, BudgetSpec::exact(n), SolverChoice::BruteForce).unwrap();
            assert_eq!(dp.objective, bf.objective);
        }
    }
}

#[test]
fn pi_desc_dp_can_miss_global_optimum() {
    // One provider: uplift order couponing the 0.2-uplift item is worth 0.02,
    // the 0.09-uplift item 0.081.
    let b = build(&[vec![(0.9, 0.99), (0.1, 0.3)]], OrderingPolicy::PiDesc);
    let dp = solve_mckp(&b.curves, BudgetSpec::exact(1), SolverChoice::DpExact).unwrap();
    let best = assignment_value(&b, &[true, false], 1);
    assert!(best - dp.objective > 0.06);
}
