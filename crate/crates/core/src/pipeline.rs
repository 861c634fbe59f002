//! End-to-end experiment runs and the strategy registry.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::alloc::{
    allocate_item_greedy, allocate_nsw, allocate_provider_greedy, allocate_random, allocate_ser,
    SolverChoice,
};
use crate::chart::{render_bar_chart, Metric};
use crate::domain::{AllocationPlan, BudgetMode, BudgetSpec, Dataset, ItemId, ItemScore};
use crate::eval::{evaluate_strategy, Scaling, UpliftReport};
use crate::io;
use crate::scoring::{
    eligible_items, fit_t_learner, score_items, NoisyOracleScorer, QualityThreshold, Scorer,
};
use crate::ser::{build_pattern_curves, build_portfolios, OrderingPolicy, PatternCurve};
use crate::simulate::{generate_market, run_rct, stream_rng, MarketConfig, RctLog};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StrategyKind {
    Random,
    ItemGreedy,
    ProviderGreedy,
    Nsw,
    Ser,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 5] = [
        StrategyKind::Random,
        StrategyKind::ItemGreedy,
        StrategyKind::ProviderGreedy,
        StrategyKind::Nsw,
        StrategyKind::Ser,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Random => "random",
            StrategyKind::ItemGreedy => "i-greedy",
            StrategyKind::ProviderGreedy => "p-greedy",
            StrategyKind::Nsw => "nsw",
            StrategyKind::Ser => "ser",
        }
    }
}

/// A registered strategy with its quality floor, written `<name>[-q<pct>]`,
/// e.g. `ser-q10` or `i-greedy`.
#[derive(Debug, Clone, PartialEq)]
pub struct Strategy {
    pub kind: StrategyKind,
    pub quality: QualityThreshold,
    label: String,
}

impl Strategy {
    pub fn new(kind: StrategyKind, quality: QualityThreshold) -> Self {
        let label = if quality == QualityThreshold::NONE {
            kind.name().to_string()
        } else {
            format!("{}-q{}", kind.name(), quality.percentile())
        };
        Self {
            kind,
            quality,
            label,
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label)
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let unknown = || {
            let names: Vec<&str> = StrategyKind::ALL.iter().map(|k| k.name()).collect();
            Error::Config(format!(
                "unknown strategy {s:?}; expected one of {} with an optional -q<percentile> suffix",
                names.join(", ")
            ))
        };
        let (base, quality) = match s.rsplit_once("-q") {
            Some((base, pct)) => {
                let pct: f64 = pct.parse().map_err(|_| unknown())?;
                (base, QualityThreshold::new(pct)?)
            }
            None => (s, QualityThreshold::NONE),
        };
        let kind = StrategyKind::ALL
            .into_iter()
            .find(|k| k.name() == base)
            .ok_or_else(unknown)?;
        Ok(Self {
            kind,
            quality,
            label: s.to_string(),
        })
    }
}

/// Knobs shared by every strategy.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AllocOptions {
    pub ordering: OrderingPolicy,
    pub solver: SolverChoice,
    pub allow_negative_uplift: bool,
    /// Seed of the random strategy.
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct Allocation {
    pub plan: AllocationPlan,
    /// Pattern curves the plan was built from (provider-level strategies).
    pub curves: Option<Vec<PatternCurve>>,
}

/// Runs one strategy over the whole dataset. The plan is labeled with the
/// strategy's full name.
pub fn allocate(
    strategy: &Strategy,
    dataset: &Dataset,
    scores: &[ItemScore],
    budget: BudgetSpec,
    opts: &AllocOptions,
) -> Result<Allocation> {
    let eligible = eligible_items(scores, strategy.quality, opts.allow_negative_uplift);
    let population: Vec<ItemId> = dataset.item_ids().collect();
    let curves_for = |ordering| -> Result<Vec<PatternCurve>> {
        let portfolios = build_portfolios(dataset, scores, &eligible, ordering)?;
        Ok(build_pattern_curves(&portfolios))
    };
    let (mut plan, curves) = match strategy.kind {
        StrategyKind::Random => (
            allocate_random(&population, &eligible, budget, opts.seed)?,
            None,
        ),
        StrategyKind::ItemGreedy => (allocate_item_greedy(scores, &eligible, budget)?, None),
        StrategyKind::Nsw => (allocate_nsw(scores, &eligible, budget)?, None),
        StrategyKind::ProviderGreedy => {
            // Rounds walk each provider's items by descending uplift.
            let curves = curves_for(OrderingPolicy::PiDesc)?;
            (
                allocate_provider_greedy(&curves, &population, budget)?,
                Some(curves),
            )
        }
        StrategyKind::Ser => {
            let curves = curves_for(opts.ordering)?;
            (
                allocate_ser(&curves, &population, budget, opts.solver)?,
                Some(curves),
            )
        }
    };
    plan.strategy_name = strategy.label().to_string();
    Ok(Allocation { plan, curves })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScorerKind {
    /// Ground truth with multiplicative noise; needs simulated data.
    #[default]
    Oracle,
    /// Binned T-learner fitted on a separate training trial.
    Binned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScorerConfig {
    pub kind: ScorerKind,
    pub noise: f64,
    pub bins: usize,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        Self {
            kind: ScorerKind::Oracle,
            noise: 0.1,
            bins: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RctConfig {
    pub treat_prob: f64,
}

impl Default for RctConfig {
    fn default() -> Self {
        Self { treat_prob: 0.5 }
    }
}

/// Either an absolute coupon count or a fraction of the items with positive
/// predicted uplift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BudgetConfig {
    pub coupons: Option<usize>,
    pub fraction: Option<f64>,
    pub mode: BudgetMode,
}

impl Default for BudgetConfig {
    fn default() -> Self {
        Self {
            coupons: None,
            fraction: Some(0.05),
            mode: BudgetMode::Exact,
        }
    }
}

impl BudgetConfig {
    pub fn resolve(&self, scores: &[ItemScore], allow_negative_uplift: bool) -> Result<BudgetSpec> {
        let n = match (self.coupons, self.fraction) {
            (Some(n), None) => n,
            (None, Some(f)) if (0.0..=1.0).contains(&f) => {
                let base =
                    eligible_items(scores, QualityThreshold::NONE, allow_negative_uplift).len();
                (f * base as f64).round() as usize
            }
            (None, Some(f)) => {
                return Err(Error::Config(format!("budget fraction {f} outside [0, 1]")))
            }
            _ => {
                return Err(Error::Config(
                    "set exactly one of budget.coupons and budget.fraction".into(),
                ))
            }
        };
        Ok(BudgetSpec {
            n_coupons: n,
            mode: self.mode,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AllocationConfig {
    pub ordering: OrderingPolicy,
    pub solver: SolverChoice,
    pub allow_negative_uplift: bool,
    pub strategies: Vec<String>,
}

impl Default for AllocationConfig {
    fn default() -> Self {
        Self {
            ordering: OrderingPolicy::default(),
            solver: SolverChoice::default(),
            allow_negative_uplift: false,
            strategies: [
                "random", "i-greedy", "p-greedy", "nsw", "ser-q0", "ser-q1", "ser-q10",
            ]
            .map(String::from)
            .to_vec(),
        }
    }
}

/// A complete experiment description, read from TOML.
///
/// Every random stage draws its seed from `seed`; `market.seed` is ignored.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: Option<PathBuf>,
    pub seed: u64,
    pub market: MarketConfig,
    pub rct: RctConfig,
    pub scorer: ScorerConfig,
    pub budget: BudgetConfig,
    pub allocation: AllocationConfig,
    pub scaling: Scaling,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.strategies()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| io::IoError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn strategies(&self) -> Result<Vec<Strategy>> {
        if self.allocation.strategies.is_empty() {
            return Err(Error::Config("no strategies listed".into()));
        }
        self.allocation
            .strategies
            .iter()
            .map(|s| s.parse())
            .collect()
    }

    pub fn alloc_options(&self) -> AllocOptions {
        AllocOptions {
            ordering: self.allocation.ordering,
            solver: self.allocation.solver,
            allow_negative_uplift: self.allocation.allow_negative_uplift,
            seed: derive_seed(self.seed, SeedStream::RandomStrategy),
        }
    }
}

/// Independent sub-seeds of a master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedStream {
    Market = 1,
    TrainingTrial = 2,
    EvaluationTrial = 3,
    Scorer = 4,
    RandomStrategy = 5,
}

pub fn derive_seed(master: u64, stream: SeedStream) -> u64 {
    stream_rng(master, stream as u64).next_u64()
}

pub fn build_scorer(
    cfg: &ScorerConfig,
    dataset: &Dataset,
    training_log: Option<&RctLog>,
    seed: u64,
) -> Result<Box<dyn Scorer>> {
    Ok(match cfg.kind {
        ScorerKind::Oracle => Box::new(NoisyOracleScorer::new(cfg.noise, seed)?),
        ScorerKind::Binned => {
            let log = training_log.ok_or_else(|| {
                Error::Config("the binned scorer needs a training trial log".into())
            })?;
            Box::new(fit_t_learner(log, dataset, cfg.bins)?)
        }
    })
}

/// Writes one SVG per metric into `dir`.
pub fn write_charts(dir: &Path, reports: &[UpliftReport]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|source| io::IoError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    Metric::ALL
        .iter()
        .map(|&m| {
            let path = dir.join(format!("{}.svg", m.slug()));
            fs::write(&path, render_bar_chart(m, reports)).map_err(|source| io::IoError::Io {
                path: path.clone(),
                source,
            })?;
            Ok(path)
        })
        .collect()
}

/// Evaluates each plan; failures become warnings unless every plan fails.
pub fn evaluate_plans(
    log: &RctLog,
    plans: &[AllocationPlan],
    dataset: &Dataset,
    scaling: Scaling,
) -> Result<(Vec<UpliftReport>, Vec<String>)> {
    let mut reports = Vec::with_capacity(plans.len());
    let mut warnings = Vec::new();
    let mut last_err = None;
    for plan in plans {
        match evaluate_strategy(log, plan, dataset, scaling) {
            Ok(r) => {
                if r.n_coupons == 0 {
                    warnings.push(format!(
                        "{}: plan places no coupons, uplift is zero",
                        plan.strategy_name
                    ));
                }
                reports.push(r);
            }
            Err(e) => {
                warnings.push(format!("{}: {e}", plan.strategy_name));
                last_err = Some(e);
            }
        }
    }
    match last_err {
        Some(e) if reports.is_empty() => Err(e.into()),
        _ => Ok((reports, warnings)),
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub reports: Vec<UpliftReport>,
    pub warnings: Vec<String>,
    pub files: Vec<PathBuf>,
}

/// Simulates, scores, allocates with every strategy, evaluates and charts,
/// writing every artifact into `out`.
pub fn run(config: &RunConfig, out: &Path) -> Result<RunOutput> {
    let strategies = config.strategies()?;
    let mut files = Vec::new();
    let mut file = |name: &str| {
        let p = out.join(name);
        files.push(p.clone());
        p
    };

    let market = MarketConfig {
        seed: derive_seed(config.seed, SeedStream::Market),
        ..config.market.clone()
    };
    let dataset = generate_market(&market)?;
    io::write_items(&file("items.csv"), &dataset)?;

    let log = run_rct(
        &dataset,
        config.rct.treat_prob,
        derive_seed(config.seed, SeedStream::EvaluationTrial),
    )?;
    io::write_rct(&file("rct.csv"), &log)?;

    let training = match config.scorer.kind {
        ScorerKind::Binned => {
            let t = run_rct(
                &dataset,
                config.rct.treat_prob,
                derive_seed(config.seed, SeedStream::TrainingTrial),
            )?;
            io::write_rct(&file("rct_train.csv"), &t)?;
            Some(t)
        }
        ScorerKind::Oracle => None,
    };
    let scorer = build_scorer(
        &config.scorer,
        &dataset,
        training.as_ref(),
        derive_seed(config.seed, SeedStream::Scorer),
    )?;
    let scores = score_items(scorer.as_ref(), &dataset)?;
    io::write_scores(&file("scores.csv"), &scores)?;

    let budget = config
        .budget
        .resolve(&scores, config.allocation.allow_negative_uplift)?;
    let opts = config.alloc_options();
    let mut plans = Vec::with_capacity(strategies.len());
    for s in &strategies {
        let plan = allocate(s, &dataset, &scores, budget, &opts)?.plan;
        io::write_plan_csv(&file(&format!("plan_{}.csv", s.label())), &plan)?;
        io::write_plan_json(&file(&format!("plan_{}.json", s.label())), &plan)?;
        plans.push(plan);
    }

    let (reports, warnings) = evaluate_plans(&log, &plans, &dataset, config.scaling)?;
    io::write_reports_csv(&file("report.csv"), &reports)?;
    io::write_json(&file("report.json"), &reports)?;
    files.extend(write_charts(out, &reports)?);
    Ok(RunOutput {
        reports,
        warnings,
        files,
    })
}
