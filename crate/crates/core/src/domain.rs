//! Core data types shared by every stage of the pipeline.
//!
//! Records are validated once, at ingestion, and are immutable afterwards.
//! Items keep the order in which they were ingested; that order is the dense
//! position used for array indexing by the solvers and estimators.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Absolute tolerance used when comparing probabilities at this layer.
pub const PROB_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ItemId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProviderId(pub u64);

impl fmt::Display for ItemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for ProviderId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One listed item.
///
/// `true_p0` / `true_p1` are the ground-truth sale probabilities without and
/// with a coupon. Only simulated markets carry them.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemRecord {
    pub item_id: ItemId,
    pub provider_id: ProviderId,
    pub features: Vec<f64>,
    pub true_p0: Option<f64>,
    pub true_p1: Option<f64>,
}

impl ItemRecord {
    /// Both ground-truth rates, if present.
    pub fn ground_truth(&self) -> Option<(f64, f64)> {
        Some((self.true_p0?, self.true_p1?))
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScoreError {
    #[error("item {item}: {field} = {value} is not a probability")]
    OutOfRange {
        item: ItemId,
        field: &'static str,
        value: f64,
    },
}

/// Predicted sale rates of one item without (`f0`) and with (`f1`) a coupon,
/// and the item-level uplift `pi = f1 - f0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ItemScore {
    item_id: ItemId,
    f0: f64,
    f1: f64,
    pi: f64,
}

impl ItemScore {
    pub fn new(item_id: ItemId, f0: f64, f1: f64) -> Result<Self, ScoreError> {
        for (field, value) in [("f0", f0), ("f1", f1)] {
            if !is_probability(value) {
                return Err(ScoreError::OutOfRange {
                    item: item_id,
                    field,
                    value,
                });
            }
        }
        Ok(Self {
            item_id,
            f0,
            f1,
            pi: f1 - f0,
        })
    }

    /// Builds a score from raw model outputs, clamping both rates into `[0, 1]`.
    /// NaN is mapped to 0.
    pub fn clamped(item_id: ItemId, f0: f64, f1: f64) -> Self {
        let f0 = clamp_probability(f0);
        let f1 = clamp_probability(f1);
        Self {
            item_id,
            f0,
            f1,
            pi: f1 - f0,
        }
    }

    pub fn item_id(&self) -> ItemId {
        self.item_id
    }

    pub fn f0(&self) -> f64 {
        self.f0
    }

    pub fn f1(&self) -> f64 {
        self.f1
    }

    pub fn pi(&self) -> f64 {
        self.pi
    }
}

pub fn is_probability(x: f64) -> bool {
    (0.0..=1.0).contains(&x)
}

pub fn clamp_probability(x: f64) -> f64 {
    if x.is_nan() {
        0.0
    } else {
        x.clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum BudgetMode {
    /// Exactly `n_coupons` coupons are handed out.
    #[default]
    Exact,
    /// At most `n_coupons` coupons are handed out.
    AtMost,
}

impl fmt::Display for BudgetMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BudgetMode::Exact => "exact",
            BudgetMode::AtMost => "at-most",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetSpec {
    pub n_coupons: usize,
    pub mode: BudgetMode,
}

impl BudgetSpec {
    pub fn exact(n_coupons: usize) -> Self {
        Self {
            n_coupons,
            mode: BudgetMode::Exact,
        }
    }

    pub fn at_most(n_coupons: usize) -> Self {
        Self {
            n_coupons,
            mode: BudgetMode::AtMost,
        }
    }

    pub fn admits(&self, used: usize) -> bool {
        match self.mode {
            BudgetMode::Exact => used == self.n_coupons,
            BudgetMode::AtMost => used <= self.n_coupons,
        }
    }
}

/// A 0/1 coupon decision for every item of a population.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationPlan {
    pub strategy_name: String,
    pub budget: BudgetSpec,
    pub objective_value: Option<f64>,
    /// Set when the plan was loaded from a file whose flags do not meet its budget.
    pub infeasible: bool,
    decisions: BTreeMap<ItemId, bool>,
}

impl AllocationPlan {
    /// Flags every item of `population`, coupon on those in `selected`.
    ///
    /// Selected ids outside the population are ignored.
    pub fn from_selection<I>(
        strategy_name: impl Into<String>,
        budget: BudgetSpec,
        population: I,
        selected: &[ItemId],
    ) -> Self
    where
        I: IntoIterator<Item = ItemId>,
    {
        let mut decisions: BTreeMap<ItemId, bool> =
            population.into_iter().map(|id| (id, false)).collect();
        for id in selected {
            if let Some(flag) = decisions.get_mut(id) {
                *flag = true;
            }
        }
        let mut plan = Self {
            strategy_name: strategy_name.into(),
            budget,
            objective_value: None,
            infeasible: false,
            decisions,
        };
        plan.infeasible = !plan.budget.admits(plan.coupon_count());
        plan
    }

    /// Builds a plan from explicit flags; the budget is taken to be the
    /// number of flags set (exact mode).
    pub fn from_flags<I>(strategy_name: impl Into<String>, flags: I) -> Self
    where
        I: IntoIterator<Item = (ItemId, bool)>,
    {
        let decisions: BTreeMap<ItemId, bool> = flags.into_iter().collect();
        let n = decisions.values().filter(|&&f| f).count();
        Self {
            strategy_name: strategy_name.into(),
            budget: BudgetSpec::exact(n),
            objective_value: None,
            infeasible: false,
            decisions,
        }
    }

    pub fn with_objective(mut self, value: f64) -> Self {
        self.objective_value = Some(value);
        self
    }

    pub fn budget_n(&self) -> usize {
        self.budget.n_coupons
    }

    pub fn decisions(&self) -> &BTreeMap<ItemId, bool> {
        &self.decisions
    }

    pub fn is_couponed(&self, id: ItemId) -> Option<bool> {
        self.decisions.get(&id).copied()
    }

    pub fn couponed(&self) -> impl Iterator<Item = ItemId> + '_ {
        self.decisions
            .iter()
            .filter_map(|(&id, &flag)| flag.then_some(id))
    }

    pub fn coupon_count(&self) -> usize {
        self.decisions.values().filter(|&&f| f).count()
    }

    pub fn len(&self) -> usize {
        self.decisions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.decisions.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    DuplicateItemId(ItemId),
    ProbabilityOutOfRange {
        item: ItemId,
        field: &'static str,
        value: f64,
    },
    NonFiniteFeature {
        item: ItemId,
        column: usize,
    },
    FeatureArity {
        item: ItemId,
        expected: usize,
        found: usize,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateItemId(id) => write!(f, "duplicate item id {id}"),
            Violation::ProbabilityOutOfRange { item, field, value } => {
                write!(f, "item {item}: {field} = {value} outside [0, 1]")
            }
            Violation::NonFiniteFeature { item, column } => {
                write!(f, "item {item}: feature {column} is not finite")
            }
            Violation::FeatureArity {
                item,
                expected,
                found,
            } => write!(f, "item {item}: {found} features, expected {expected}"),
        }
    }
}

/// Every problem found while validating a batch of item records.
#[derive(Debug, Clone, PartialEq, Error)]
pub struct ValidationError {
    pub violations: Vec<Violation>,
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} invalid record(s)", self.violations.len())?;
        for v in &self.violations {
            write!(f, "; {v}")?;
        }
        Ok(())
    }
}

/// Items of one provider, by dense item position.
#[derive(Debug, Clone, PartialEq)]
pub struct ProviderGroup {
    pub id: ProviderId,
    pub members: Vec<usize>,
}

/// A validated, immutable collection of items grouped by provider.
#[derive(Debug, Clone)]
pub struct Dataset {
    items: Vec<ItemRecord>,
    position: HashMap<ItemId, usize>,
    providers: Vec<ProviderGroup>,
    provider_of: Vec<usize>,
}

impl PartialEq for Dataset {
    fn eq(&self, other: &Self) -> bool {
        // The derived structures are functions of the item list.
        self.items == other.items
    }
}

/// Checks raw records and builds the provider index.
///
/// Providers are indexed in ascending id order; items keep their input order.
pub fn validate_dataset(raw_items: Vec<ItemRecord>) -> Result<Dataset, ValidationError> {
    let mut violations = Vec::new();
    let mut position = HashMap::with_capacity(raw_items.len());
    let arity = raw_items.first().map(|r| r.features.len());

    for (pos, item) in raw_items.iter().enumerate() {
        if position.insert(item.item_id, pos).is_some() {
            violations.push(Violation::DuplicateItemId(item.item_id));
        }
        for (field, value) in [("true_p0", item.true_p0), ("true_p1", item.true_p1)] {
            if let Some(v) = value {
                if !is_probability(v) {
                    violations.push(Violation::ProbabilityOutOfRange {
                        item: item.item_id,
                        field,
                        value: v,
                    });
                }
            }
        }
        if let Some(expected) = arity {
            if item.features.len() != expected {
                violations.push(Violation::FeatureArity {
                    item: item.item_id,
                    expected,
                    found: item.features.len(),
                });
            }
        }
        if let Some(column) = item.features.iter().position(|x| !x.is_finite()) {
            violations.push(Violation::NonFiniteFeature {
                item: item.item_id,
                column,
            });
        }
    }
    if !violations.is_empty() {
        return Err(ValidationError { violations });
    }

    let mut by_provider: BTreeMap<ProviderId, Vec<usize>> = BTreeMap::new();
    for (pos, item) in raw_items.iter().enumerate() {
        by_provider.entry(item.provider_id).or_default().push(pos);
    }
    let mut provider_of = vec![0; raw_items.len()];
    let providers: Vec<ProviderGroup> = by_provider
        .into_iter()
        .enumerate()
        .map(|(idx, (id, members))| {
            for &m in &members {
                provider_of[m] = idx;
            }
            ProviderGroup { id, members }
        })
        .collect();

    Ok(Dataset {
        items: raw_items,
        position,
        providers,
        provider_of,
    })
}

impl Dataset {
    pub fn items(&self) -> &[ItemRecord] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn providers(&self) -> &[ProviderGroup] {
        &self.providers
    }

    pub fn position(&self, id: ItemId) -> Option<usize> {
        self.position.get(&id).copied()
    }

    pub fn item(&self, id: ItemId) -> Option<&ItemRecord> {
        self.position(id).map(|p| &self.items[p])
    }

    /// Index into [`Dataset::providers`] of the provider owning the item at `pos`.
    pub fn provider_index_of(&self, pos: usize) -> usize {
        self.provider_of[pos]
    }

    pub fn item_ids(&self) -> impl Iterator<Item = ItemId> + '_ {
        self.items.iter().map(|r| r.item_id)
    }

    pub fn provider_items(&self, provider: ProviderId) -> Option<Vec<ItemId>> {
        let idx = self
            .providers
            .binary_search_by_key(&provider, |g| g.id)
            .ok()?;
        Some(
            self.providers[idx]
                .members
                .iter()
                .map(|&p| self.items[p].item_id)
                .collect(),
        )
    }

    /// True when every item carries both ground-truth rates.
    pub fn has_ground_truth(&self) -> bool {
        self.items.iter().all(|r| r.ground_truth().is_some())
    }

    pub fn feature_count(&self) -> usize {
        self.items.first().map_or(0, |r| r.features.len())
    }
}
