use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use sercoupon::alloc::{export_ilp, SolverChoice};
use sercoupon::domain::{BudgetMode, BudgetSpec};
use sercoupon::eval::Scaling;
use sercoupon::io;
use sercoupon::pipeline::{
    self, allocate, build_scorer, derive_seed, AllocOptions, BudgetConfig, RunConfig, ScorerConfig,
    ScorerKind, SeedStream, Strategy,
};
use sercoupon::scoring::{score_items, QualityThreshold};
use sercoupon::ser::OrderingPolicy;
use sercoupon::simulate::{generate_market, run_rct, MarketConfig};
use sercoupon::{Error, Result};

#[derive(Parser)]
#[command(
    name = "sercoupon",
    version,
    about = "Coupon allocation for successful providers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct OutDir {
    /// Output directory, created if missing.
    #[arg(long, env = "SERCOUPON_OUT", default_value = ".")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic market and a randomized coupon trial.
    Simulate(SimulateArgs),
    /// Predict per-item sale rates with and without a coupon.
    Score(ScoreArgs),
    /// Build a coupon plan with one strategy.
    Allocate(AllocateArgs),
    /// Estimate the uplift of plans from a trial log.
    Evaluate(EvaluateArgs),
    /// Render charts from a report.
    Report(ReportArgs),
    /// Execute a full experiment from a TOML config.
    Run(RunArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// TOML run config; only its `market` and `rct` tables are used.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the number of providers.
    #[arg(long)]
    providers: Option<usize>,
    #[arg(long)]
    treat_prob: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    out: OutDir,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScorerArg {
    Oracle,
    Binned,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    items: PathBuf,
    /// Trial log to fit the binned scorer on.
    #[arg(long)]
    train_log: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "oracle")]
    scorer: ScorerArg,
    /// Relative noise of the oracle scorer.
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    /// Bins per feature of the binned scorer.
    #[arg(long, default_value_t = 32)]
    bins: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    out: OutDir,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Exact,
    AtMost,
}

#[derive(Clone, Copy, ValueEnum)]
enum OrderingArg {
    PiDesc,
    SurvivalRatio,
}

#[derive(Clone, Copy, ValueEnum)]
enum SolverArg {
    Dp,
    Greedy,
    Brute,
}

#[derive(Args)]
struct AllocateArgs {
    #[arg(long)]
    items: PathBuf,
    #[arg(long)]
    scores: PathBuf,
    /// random, i-greedy, p-greedy, nsw or ser, optionally suffixed -q<pct>.
    #[arg(long)]
    strategy: String,
    /// Number of coupons.
    #[arg(long, conflicts_with = "fraction")]
    n: Option<usize>,
    /// Coupons as a fraction of items with positive predicted uplift.
    #[arg(long)]
    fraction: Option<f64>,
    #[arg(long, value_enum, default_value = "exact")]
    mode: ModeArg,
    /// Quality percentile on the predicted with-coupon rate.
    #[arg(long)]
    q: Option<f64>,
    #[arg(long, value_enum, default_value = "pi-desc")]
    ordering: OrderingArg,
    #[arg(long, value_enum, default_value = "dp")]
    solver: SolverArg,
    #[arg(long)]
    allow_negative_uplift: bool,
    /// Seed of the random strategy.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the integer program in LP format.
    #[arg(long)]
    export_lp: Option<PathBuf>,
    /// Also write the pattern curves as JSON lines.
    #[arg(long)]
    export_curves: Option<PathBuf>,
    #[command(flatten)]
    out: OutDir,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScalingArg {
    Deployment,
    RctHalf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    items: PathBuf,
    #[arg(long)]
    rct: PathBuf,
    /// Plan files, `.csv` or `.json`.
    #[arg(long, num_args = 1.., required = true)]
    plans: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "deployment")]
    scaling: ScalingArg,
    #[command(flatten)]
    out: OutDir,
}

#[derive(Args)]
struct ReportArgs {
    /// `report.csv` or `report.json`.
    #[arg(long)]
    report: PathBuf,
    #[command(flatten)]
    out: OutDir,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the master seed of the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Score(a) => score(a),
        Command::Allocate(a) => allocate_cmd(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Report(a) => report(a),
        Command::Run(a) => run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let market = MarketConfig {
        n_providers: a.providers.unwrap_or(cfg.market.n_providers),
        seed: derive_seed(a.seed, SeedStream::Market),
        ..cfg.market
    };
    let treat_prob = a.treat_prob.unwrap_or(cfg.rct.treat_prob);
    let dataset = generate_market(&market)?;
    let log = run_rct(
        &dataset,
        treat_prob,
        derive_seed(a.seed, SeedStream::EvaluationTrial),
    )?;
    let training = run_rct(
        &dataset,
        treat_prob,
        derive_seed(a.seed, SeedStream::TrainingTrial),
    )?;
    io::write_items(&a.out.out.join("items.csv"), &dataset)?;
    io::write_rct(&a.out.out.join("rct.csv"), &log)?;
    io::write_rct(&a.out.out.join("rct_train.csv"), &training)?;
    println!(
        "{} providers, {} items, {} treated in trial",
        dataset.providers().len(),
        dataset.len(),
        log.treated_count()
    );
    Ok(())
}

fn score(a: ScoreArgs) -> Result<()> {
    let dataset = io::read_items(&a.items)?;
    let training = a.train_log.as_deref().map(io::read_rct).transpose()?;
    let cfg = ScorerConfig {
        kind: match a.scorer {
            ScorerArg::Oracle => ScorerKind::Oracle,
            ScorerArg::Binned => ScorerKind::Binned,
        },
        noise: a.noise,
        bins: a.bins,
    };
    let scorer = build_scorer(&cfg, &dataset, training.as_ref(), a.seed)?;
    let scores = score_items(scorer.as_ref(), &dataset)?;
    io::write_scores(&a.out.out.join("scores.csv"), &scores)?;
    println!("scored {} items", scores.len());
    Ok(())
}

fn allocate_cmd(a: AllocateArgs) -> Result<()> {
    let dataset = io::read_items(&a.items)?;
    let scores = io::read_scores(&a.scores)?;
    let mut strategy: Strategy = a.strategy.parse()?;
    if let Some(q) = a.q {
        if strategy.quality != QualityThreshold::NONE {
            return Err(Error::Config(format!(
                "--q given and strategy {} already carries a quality floor",
                strategy
            )));
        }
        strategy = Strategy::new(strategy.kind, QualityThreshold::new(q)?);
    }
    let mode = match a.mode {
        ModeArg::Exact => BudgetMode::Exact,
        ModeArg::AtMost => BudgetMode::AtMost,
    };
    let budget = match (a.n, a.fraction) {
        (Some(n), _) => BudgetSpec { n_coupons: n, mode },
        (None, fraction) => BudgetConfig {
            coupons: None,
            fraction: Some(fraction.unwrap_or(BudgetConfig::default().fraction.unwrap_or(0.0))),
            mode,
        }
        .resolve(&scores, a.allow_negative_uplift)?,
    };
    let opts = AllocOptions {
        ordering: match a.ordering {
            OrderingArg::PiDesc => OrderingPolicy::PiDesc,
            OrderingArg::SurvivalRatio => OrderingPolicy::SurvivalRatio,
        },
        solver: match a.solver {
            SolverArg::Dp => SolverChoice::DpExact,
            SolverArg::Greedy => SolverChoice::GreedyMarginal,
            SolverArg::Brute => SolverChoice::BruteForce,
        },
        allow_negative_uplift: a.allow_negative_uplift,
        seed: a.seed,
    };
    let result = allocate(&strategy, &dataset, &scores, budget, &opts)?;
    let stem = format!("plan_{}", strategy.label());
    io::write_plan_csv(&a.out.out.join(format!("{stem}.csv")), &result.plan)?;
    io::write_plan_json(&a.out.out.join(format!("{stem}.json")), &result.plan)?;

    if a.export_lp.is_some() || a.export_curves.is_some() {
        let curves = result.curves.as_deref().ok_or_else(|| {
            Error::Config(format!(
                "strategy {strategy} has no pattern curves to export"
            ))
        })?;
        if let Some(path) = &a.export_lp {
            export_ilp(curves, budget, path)?;
        }
        if let Some(path) = &a.export_curves {
            io::write_curves(path, curves)?;
        }
    }
    print!("{}: {} coupons", strategy, result.plan.coupon_count());
    if let Some(v) = result.plan.objective_value {
        print!(", objective {v}");
    }
    println!();
    Ok(())
}

fn read_plan(path: &Path) -> Result<sercoupon::AllocationPlan> {
    if path.extension().is_some_and(|e| e == "json") {
        return Ok(io::read_plan_json(path)?);
    }
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("plan");
    let name = stem.strip_prefix("plan_").unwrap_or(stem);
    Ok(io::read_plan_csv(path, name)?)
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let dataset = io::read_items(&a.items)?;
    let log = io::read_rct(&a.rct)?;
    let plans = a
        .plans
        .iter()
        .map(|p| read_plan(p))
        .collect::<Result<Vec<_>>>()?;
    let scaling = match a.scaling {
        ScalingArg::Deployment => Scaling::Deployment,
        ScalingArg::RctHalf => Scaling::RctHalf,
    };
    let (reports, warnings) = pipeline::evaluate_plans(&log, &plans, &dataset, scaling)?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    io::write_reports_csv(&a.out.out.join("report.csv"), &reports)?;
    io::write_json(&a.out.out.join("report.json"), &reports)?;
    println!("evaluated {} of {} plans", reports.len(), plans.len());
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let reports = if a.report.extension().is_some_and(|e| e == "json") {
        io::read_json(&a.report)?
    } else {
        io::read_reports_csv(&a.report)?
    };
    for p in pipeline::write_charts(&a.out.out, &reports)? {
        println!("{}", p.display());
    }
    Ok(())
}

fn run(a: RunArgs) -> Result<()> {
    let mut cfg = RunConfig::load(&a.config)?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let out = a
        .out
        .or_else(|| cfg.output_dir.clone())
        .or_else(|| std::env::var_os("SERCOUPON_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    let result = pipeline::run(&cfg, &out)?;
    for w in &result.warnings {
        eprintln!("warning: {w}");
    }
    println!(
        "{:<12} {:>8} {:>14} {:>14} {:>8} {:>10}",
        "strategy", "coupons", "items_sold", "providers", "treated", "ser_lift"
    );
    for r in &result.reports {
        println!(
            "{:<12} {:>8} {:>14.3} {:>14.3} {:>8} {:>10.5}",
            r.strategy_name,
            r.n_coupons,
            r.uplift_items_sold,
            r.uplift_successful_providers,
            r.n_treated_providers,
            r.ser_lift
        );
    }
    Ok(())
}
