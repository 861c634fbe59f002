//! Off-line evaluation of an allocation plan against a randomized trial log.
//!
//! Every item falls in one of eight cells keyed by its trial assignment `a`,
//! the plan's decision `d` and whether it sold. Items where `a == d` behave
//! as if the plan had been deployed, which yields unbiased estimates of the
//! plan's effect on items sold and, at provider level, on successful
//! providers.

use std::collections::HashSet;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{AllocationPlan, Dataset, ItemId};
use crate::simulate::RctLog;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("plan and trial log cover different items: {0}")]
    PopulationMismatch(String),
    #[error("estimator undefined: no trial items in cell {0}")]
    EmptyCell(String),
    #[error("estimator undefined: no {0} providers")]
    EmptyGroup(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Cell {
    /// Coupon assigned by the trial.
    pub rct: bool,
    /// Coupon assigned by the plan.
    pub decision: bool,
    pub sold: bool,
}

impl Cell {
    pub const ALL: [Cell; 8] = {
        let mut cells = [Cell {
            rct: false,
            decision: false,
            sold: false,
        }; 8];
        let mut i = 0;
        while i < 8 {
            cells[i] = Cell::from_index(i);
            i += 1;
        }
        cells
    };

    pub const fn index(self) -> usize {
        (self.sold as usize) << 2 | (self.rct as usize) << 1 | self.decision as usize
    }

    pub const fn from_index(i: usize) -> Self {
        Self {
            sold: i & 4 != 0,
            rct: i & 2 != 0,
            decision: i & 1 != 0,
        }
    }
}

impl fmt::Display for Cell {
    /// `S11` is sold with `a = 1`, `d = 1`; `N01` unsold with `a = 0`, `d = 1`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}{}{}",
            if self.sold { 'S' } else { 'N' },
            self.rct as u8,
            self.decision as u8
        )
    }
}

/// Cell of every trial item, in log order.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemSegment {
    pub cells: Vec<(ItemId, Cell)>,
    counts: [usize; 8],
}

impl ItemSegment {
    pub fn count(&self, cell: Cell) -> usize {
        self.counts[cell.index()]
    }

    /// Items with `a = rct`, `d = decision`, sold or not.
    pub fn count_ad(&self, rct: bool, decision: bool) -> usize {
        [false, true]
            .iter()
            .map(|&sold| {
                self.count(Cell {
                    rct,
                    decision,
                    sold,
                })
            })
            .sum()
    }

    /// Number of items the plan coupons.
    pub fn plan_coupons(&self) -> usize {
        self.count_ad(false, true) + self.count_ad(true, true)
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}

/// How a rate difference is scaled to an absolute uplift.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scaling {
    /// By the full number of couponed items (treated providers): the
    /// expected uplift if the plan were deployed.
    #[default]
    Deployment,
    /// By half that number: the expected difference in trial sales between
    /// the consistent treated and control cells at assignment rate 1/2.
    RctHalf,
}

impl Scaling {
    pub fn factor(self) -> f64 {
        match self {
            Scaling::Deployment => 1.0,
            Scaling::RctHalf => 0.5,
        }
    }
}

impl fmt::Display for Scaling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scaling::Deployment => "deployment",
            Scaling::RctHalf => "rct-half",
        })
    }
}

pub fn segment_items(log: &RctLog, plan: &AllocationPlan) -> Result<ItemSegment, EvalError> {
    if log.len() != plan.len() {
        return Err(EvalError::PopulationMismatch(format!(
            "log has {} items, plan has {}",
            log.len(),
            plan.len()
        )));
    }
    let cells: Vec<(ItemId, Cell)> = log
        .records
        .par_iter()
        .map(|r| {
            let decision = plan.is_couponed(r.item_id).ok_or_else(|| {
                EvalError::PopulationMismatch(format!("item {} is not in the plan", r.item_id))
            })?;
            Ok((
                r.item_id,
                Cell {
                    rct: r.assignment,
                    decision,
                    sold: r.sold,
                },
            ))
        })
        .collect::<Result<_, EvalError>>()?;
    let mut seen = HashSet::with_capacity(cells.len());
    let mut counts = [0; 8];
    for (id, cell) in &cells {
        if !seen.insert(*id) {
            return Err(EvalError::PopulationMismatch(format!(
                "item {id} appears twice in the log"
            )));
        }
        counts[cell.index()] += 1;
    }
    Ok(ItemSegment { cells, counts })
}

fn rate(seg: &ItemSegment, rct: bool) -> Result<f64, EvalError> {
    let total = seg.count_ad(rct, true);
    if total == 0 {
        let name = format!("{}1 (sold or not)", rct as u8);
        return Err(EvalError::EmptyCell(name));
    }
    let sold = seg.count(Cell {
        rct,
        decision: true,
        sold: true,
    });
    Ok(sold as f64 / total as f64)
}

/// Sale-rate difference between plan-couponed items the trial treated and
/// those it left alone.
pub fn item_rate_difference(seg: &ItemSegment) -> Result<f64, EvalError> {
    Ok(rate(seg, true)? - rate(seg, false)?)
}

/// Estimated extra items sold under the plan. A plan with no coupons has
/// zero uplift.
pub fn uplift_items_sold(seg: &ItemSegment, scaling: Scaling) -> Result<f64, EvalError> {
    let n = seg.plan_coupons();
    if n == 0 {
        return Ok(0.0);
    }
    Ok(item_rate_difference(seg)? * n as f64 * scaling.factor())
}

/// Outcome of the provider-level estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProviderEstimate {
    pub uplift: f64,
    /// Success-rate difference between consistent treated and control providers.
    pub ser_lift: f64,
    /// Providers with at least one plan-couponed item.
    pub n_treated: usize,
    pub n_consistent_treat: usize,
    pub n_consistent_control: usize,
    pub n_mixed_excluded: usize,
}

#[derive(Default, Clone, Copy)]
struct ProviderTally {
    plan_items: usize,
    trial_treated: usize,
    success: bool,
}

/// Estimated extra successful providers under the plan.
///
/// Providers the plan coupons are split by how the trial treated their
/// plan-couponed items: all treated, all untreated, or mixed (dropped). A
/// provider counts as successful if a plan-couponed item sold, or an item
/// neither the trial nor the plan couponed sold.
pub fn uplift_successful_providers(
    log: &RctLog,
    plan: &AllocationPlan,
    dataset: &Dataset,
    scaling: Scaling,
) -> Result<ProviderEstimate, EvalError> {
    let seg = segment_items(log, plan)?;
    let mut tallies = vec![ProviderTally::default(); dataset.providers().len()];
    for (id, cell) in &seg.cells {
        let pos = dataset.position(*id).ok_or_else(|| {
            EvalError::PopulationMismatch(format!("item {id} is not in the dataset"))
        })?;
        let t = &mut tallies[dataset.provider_index_of(pos)];
        if cell.decision {
            t.plan_items += 1;
            t.trial_treated += cell.rct as usize;
            t.success |= cell.sold;
        } else if !cell.rct {
            t.success |= cell.sold;
        }
    }

    let mut est = ProviderEstimate {
        uplift: 0.0,
        ser_lift: 0.0,
        n_treated: 0,
        n_consistent_treat: 0,
        n_consistent_control: 0,
        n_mixed_excluded: 0,
    };
    let (mut succ_t, mut succ_c) = (0usize, 0usize);
    for t in tallies.iter().filter(|t| t.plan_items > 0) {
        est.n_treated += 1;
        if t.trial_treated == t.plan_items {
            est.n_consistent_treat += 1;
            succ_t += t.success as usize;
        } else if t.trial_treated == 0 {
            est.n_consistent_control += 1;
            succ_c += t.success as usize;
        } else {
            est.n_mixed_excluded += 1;
        }
    }
    if est.n_treated == 0 {
        return Ok(est);
    }
    if est.n_consistent_treat == 0 {
        return Err(EvalError::EmptyGroup("consistently treated"));
    }
    if est.n_consistent_control == 0 {
        return Err(EvalError::EmptyGroup("consistently untreated"));
    }
    est.ser_lift = succ_t as f64 / est.n_consistent_treat as f64
        - succ_c as f64 / est.n_consistent_control as f64;
    est.uplift = est.ser_lift * est.n_treated as f64 * scaling.factor();
    Ok(est)
}

/// Every metric for one strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpliftReport {
    pub strategy_name: String,
    pub n_coupons: usize,
    pub uplift_items_sold: f64,
    pub uplift_successful_providers: f64,
    pub n_treated_providers: usize,
    pub ser_lift: f64,
    pub n_consistent_treat: usize,
    pub n_consistent_control: usize,
    pub n_mixed_excluded: usize,
    pub scaling: Scaling,
}

pub fn evaluate_strategy(
    log: &RctLog,
    plan: &AllocationPlan,
    dataset: &Dataset,
    scaling: Scaling,
) -> Result<UpliftReport, EvalError> {
    let seg = segment_items(log, plan)?;
    let items = uplift_items_sold(&seg, scaling)?;
    let providers = uplift_successful_providers(log, plan, dataset, scaling)?;
    Ok(UpliftReport {
        strategy_name: plan.strategy_name.clone(),
        n_coupons: seg.plan_coupons(),
        uplift_items_sold: items,
        uplift_successful_providers: providers.uplift,
        n_treated_providers: providers.n_treated,
        ser_lift: providers.ser_lift,
        n_consistent_treat: providers.n_consistent_treat,
        n_consistent_control: providers.n_consistent_control,
        n_mixed_excluded: providers.n_mixed_excluded,
        scaling,
    })
}
