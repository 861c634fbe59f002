use proptest::prelude::*;

use sercoupon::domain::{validate_dataset, AllocationPlan, ItemId, ItemRecord, ProviderId};
use sercoupon::eval::{evaluate_strategy, segment_items, Cell, Scaling};
use sercoupon::simulate::{RctLog, RctRecord};

/// (provider, assignment, decision, sold) per item.
fn rows() -> impl Strategy<Value = Vec<(u64, bool, bool, bool)>> {
    prop::collection::vec(
        (0u64..15, any::<bool>(), any::<bool>(), any::<bool>()),
        1..120,
    )
}

fn materialize(
    rows: &[(u64, bool, bool, bool)],
    relabel: impl Fn(u64) -> u64,
) -> (sercoupon::Dataset, RctLog, AllocationPlan) {
    let records = rows
        .iter()
        .enumerate()
        .map(|(i, r)| ItemRecord {
            item_id: ItemId(relabel(i as u64)),
            provider_id: ProviderId(r.0),
            features: vec![],
            true_p0: None,
            true_p1: None,
        })
        .collect();
    let log = RctLog::new(
        rows.iter()
            .enumerate()
            .map(|(i, r)| RctRecord {
                item_id: ItemId(relabel(i as u64)),
                assignment: r.1,
                sold: r.3,
            })
            .collect(),
    );
    let plan = AllocationPlan::from_flags(
        "p",
        rows.iter()
            .enumerate()
            .map(|(i, r)| (ItemId(relabel(i as u64)), r.2)),
    );
    (validate_dataset(records).unwrap(), log, plan)
}

proptest! {
    #[test]
    fn cells_partition_items(rows in rows()) {
        let (_, log, plan) = materialize(&rows, |i| i);
        let seg = segment_items(&log, &plan).unwrap();
        let total: usize = Cell::ALL.iter().map(|&c| seg.count(c)).sum();
        prop_assert_eq!(total, rows.len());
        for (i, (id, cell)) in seg.cells.iter().enumerate() {
            prop_assert_eq!(*id, ItemId(i as u64));
            prop_assert_eq!((cell.rct, cell.decision, cell.sold), (rows[i].1, rows[i].2, rows[i].3));
        }
    }

    #[test]
    fn estimates_ignore_item_labels(rows in rows(), mult in 1u64..1000, offset in 0u64..1_000_000) {
        let (ds, log, plan) = materialize(&rows, |i| i);
        // Odd multiplier keeps the relabeling injective and scrambles id order.
        let (ds2, log2, plan2) = materialize(&rows, |i| (i * (2 * mult + 1) + offset) % 1_000_003);
        let a = evaluate_strategy(&log, &plan, &ds, Scaling::Deployment);
        let b = evaluate_strategy(&log2, &plan2, &ds2, Scaling::Deployment);
        prop_assert_eq!(a, b);
    }
}
