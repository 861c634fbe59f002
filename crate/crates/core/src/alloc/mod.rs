//! Coupon allocation strategies.
//!
//! Item-level baselines (random, item greedy, Nash social welfare) rank
//! items; the provider greedy and the SER optimizer work on per-provider
//! [`PatternCurve`]s. Choosing one pattern per provider under a total coupon
//! budget is a multiple-choice knapsack, solved exactly in [`mckp`].

mod baselines;
mod lp;
pub mod mckp;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{AllocationPlan, ItemId};
use crate::ser::PatternCurve;

pub use crate::domain::{BudgetMode, BudgetSpec};
pub use baselines::{
    allocate_item_greedy, allocate_nsw, allocate_provider_greedy, allocate_random,
};
pub use lp::{export_ilp, write_lp};
pub use mckp::{solve_mckp, MckpSolution};

/// Largest total number of eligible items the brute-force solver accepts.
pub const BRUTE_FORCE_MAX_ITEMS: usize = 20;

#[derive(Debug, Error)]
pub enum AllocError {
    #[error("{needed} coupons requested but only {available} eligible items")]
    InsufficientEligibleItems { needed: usize, available: usize },
    #[error("exact budget of {needed} coupons exceeds the {available} eligible items")]
    InfeasibleBudget { needed: usize, available: usize },
    #[error("brute force refuses {items} eligible items (limit {BRUTE_FORCE_MAX_ITEMS})")]
    BruteForceTooLarge { items: usize },
    #[error(
        "item {0} has zero predicted rate with and without coupon; its log-ratio is undefined"
    )]
    ZeroBaseRate(ItemId),
    #[error("i/o error writing {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverChoice {
    /// Dynamic program over providers and budget; always optimal.
    #[default]
    DpExact,
    /// Largest marginal gain first; optimal when every curve is concave.
    GreedyMarginal,
    /// Enumerates the whole pattern family. Test oracle for small instances.
    BruteForce,
}

/// Picks a coupon count per provider maximizing the summed SER gain and
/// coupons the first `k` items of each curve.
pub fn allocate_ser(
    curves: &[PatternCurve],
    population: &[ItemId],
    budget: BudgetSpec,
    solver: SolverChoice,
) -> Result<AllocationPlan, AllocError> {
    let solution = solve_mckp(curves, budget, solver)?;
    let selected: Vec<ItemId> = curves
        .iter()
        .zip(&solution.counts)
        .flat_map(|(c, &k)| c.item_order[..k].iter().copied())
        .collect();
    Ok(
        AllocationPlan::from_selection("ser", budget, population.iter().copied(), &selected)
            .with_objective(solution.objective),
    )
}

/// Number of coupons a budget asks for out of `available` candidates.
fn coupons_to_place(budget: BudgetSpec, available: usize) -> Result<usize, AllocError> {
    match budget.mode {
        BudgetMode::Exact if budget.n_coupons > available => {
            Err(AllocError::InsufficientEligibleItems {
                needed: budget.n_coupons,
                available,
            })
        }
        BudgetMode::Exact => Ok(budget.n_coupons),
        BudgetMode::AtMost => Ok(budget.n_coupons.min(available)),
    }
}
